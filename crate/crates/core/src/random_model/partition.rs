//! Partitions of [0,1] with the triple-intersection property on K_ω.
//!
//! Start from ⌊1/ε⌋ equal cells. Every interior endpoint within ε/8 of K_ω
//! moves to the point of B(x_i, ε/4) farthest from K_ω; the cylinder-gap
//! midpoint of the classical construction is one candidate, so the distance
//! bound can only improve. Each cell meeting K_ω is then split at its two
//! widest internal gaps, leaving three pieces that all meet K_ω. K_ω is
//! approximated by the images of the parent hull under deep cylinder maps,
//! which contain it.

use crate::error::{Error, Result};
use crate::ifs::ConformalMap;

use super::{check_prefix, depth_for_scale, RandomModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub lo: f64,
    pub hi: f64,
    /// conv(K_ω ∩ V), from the cylinder cover; None when V misses K_ω.
    pub k_hull: Option<(f64, f64)>,
}

impl Cell {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn meets_k(&self) -> bool {
        self.k_hull.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriadicPartition {
    pub eps: f64,
    pub cells: Vec<Cell>,
    /// min |V|/ε
    pub a1_prime: f64,
    /// max |V|/ε
    pub a1: f64,
    /// min over cells meeting K of dist(∂V, K)/|V|
    pub a2: f64,
    pub covers_unit: bool,
    pub triple_ok: bool,
    pub cover_depth: usize,
}

impl TriadicPartition {
    pub fn meeting(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&j| self.cells[j].meets_k()).collect()
    }

    pub fn locate(&self, x: f64) -> usize {
        self.cells.partition_point(|c| c.hi < x).min(self.cells.len() - 1)
    }
}

struct Tree<'a> {
    model: &'a RandomModel,
    omega: &'a [usize],
    hull: (f64, f64),
}

#[derive(Clone)]
struct Node {
    depth: usize,
    map: Option<ConformalMap>,
    iv: (f64, f64),
}

impl<'a> Tree<'a> {
    fn root(&self) -> Node {
        Node { depth: 0, map: None, iv: self.hull }
    }

    fn children(&self, node: &Node) -> Result<Vec<Node>> {
        check_prefix(self.omega, node.depth + 1)?;
        let ifs = self.model.ifs();
        let fam = &self.model.families[self.omega[node.depth]];
        Ok(fam
            .members
            .iter()
            .map(|&a| {
                let m = match &node.map {
                    None => ifs.map(a).clone(),
                    Some(outer) => ConformalMap::compose(&[outer.clone(), ifs.map(a).clone()]),
                };
                let (u, v) = (m.eval(self.hull.0), m.eval(self.hull.1));
                Node { depth: node.depth + 1, iv: (u.min(v), u.max(v)), map: Some(m) }
            })
            .collect())
    }

    fn level(&self, depth: usize) -> Result<Vec<Node>> {
        let mut nodes = vec![self.root()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for n in &nodes {
                next.extend(self.children(n)?);
            }
            nodes = next;
        }
        nodes.sort_by(|a, b| a.iv.0.total_cmp(&b.iv.0));
        Ok(nodes)
    }
}

/// Point of [w0, w1] farthest from the (sorted, disjoint) intervals.
fn farthest_point(cover: &[(f64, f64)], w0: f64, w1: f64) -> f64 {
    let mut edges = vec![f64::NEG_INFINITY];
    for &(a, b) in cover {
        edges.push(a);
        edges.push(b);
    }
    edges.push(f64::INFINITY);
    let dist = |x: f64| cover.iter().map(|&(a, b)| if x < a { a - x } else if x > b { x - b } else { 0.0 }).fold(f64::INFINITY, f64::min);
    let mut best = (dist(w0), w0);
    for g in edges.chunks(2) {
        let (a, b) = (g[0], g[1]);
        if b < w0 || a > w1 {
            continue;
        }
        let mid = if a.is_infinite() || b.is_infinite() { if a.is_infinite() { w0 } else { w1 } } else { 0.5 * (a + b) };
        let x = mid.clamp(w0, w1);
        let dx = dist(x);
        if dx > best.0 {
            best = (dx, x);
        }
    }
    best.1
}

pub fn triadic_partition(model: &RandomModel, omega: &[usize], eps: f64) -> Result<TriadicPartition> {
    let margin = model.ifs().endpoint_margin();
    if !(eps > 0.0) || eps >= margin || eps > 0.5 {
        return Err(Error::EpsilonTooLarge { eps, margin });
    }
    let tree = Tree { model, omega, hull: model.hull() };
    let d = depth_for_scale(model, 1e-4 * eps);
    let nodes = tree.level(d)?;
    let cover: Vec<(f64, f64)> = nodes.iter().map(|n| n.iv).collect();

    let p = (1.0 / eps).floor() as usize;
    let mut xs: Vec<f64> = (0..=p).map(|i| i as f64 / p as f64).collect();
    for x in xs.iter_mut().take(p).skip(1) {
        let near = cover.iter().any(|&(a, b)| a < *x + eps / 8.0 && b > *x - eps / 8.0);
        if near {
            *x = farthest_point(&cover, *x - eps / 4.0, *x + eps / 4.0);
        }
    }

    let mut cells = Vec::new();
    let mut deepest = d;
    for w in xs.windows(2) {
        let (l, r) = (w[0], w[1]);
        let mut inside: Vec<Node> = nodes.iter().filter(|n| n.iv.0 < r && n.iv.1 > l).cloned().collect();
        if inside.is_empty() {
            cells.push(Cell { lo: l, hi: r, k_hull: None });
            continue;
        }
        while inside.len() < 3 {
            let mut next = Vec::new();
            for n in &inside {
                next.extend(tree.children(n)?);
            }
            inside = next;
            inside.sort_by(|a, b| a.iv.0.total_cmp(&b.iv.0));
        }
        deepest = deepest.max(inside[0].depth);
        // two widest gaps between consecutive pieces
        let mut gaps: Vec<(f64, usize)> = inside.windows(2).enumerate().map(|(k, w)| (w[1].iv.0 - w[0].iv.1, k)).collect();
        gaps.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let (mut g1, mut g2) = (gaps[0].1, gaps[1].1);
        if g1 > g2 {
            std::mem::swap(&mut g1, &mut g2);
        }
        let mid = |k: usize| 0.5 * (inside[k].iv.1 + inside[k + 1].iv.0);
        let (y, z) = (mid(g1), mid(g2));
        let hull_of = |part: &[Node]| {
            (
                part.iter().map(|n| n.iv.0).fold(f64::INFINITY, f64::min),
                part.iter().map(|n| n.iv.1).fold(f64::NEG_INFINITY, f64::max),
            )
        };
        cells.push(Cell { lo: l, hi: y, k_hull: Some(hull_of(&inside[..=g1])) });
        cells.push(Cell { lo: y, hi: z, k_hull: Some(hull_of(&inside[g1 + 1..=g2])) });
        cells.push(Cell { lo: z, hi: r, k_hull: Some(hull_of(&inside[g2 + 1..])) });
    }

    let covers_unit = cells.first().map(|c| c.lo) == Some(0.0)
        && cells.last().map(|c| c.hi) == Some(1.0)
        && cells.windows(2).all(|w| w[0].hi == w[1].lo)
        && cells.iter().all(|c| c.hi > c.lo);
    let meets = |j: isize| j >= 0 && (j as usize) < cells.len() && cells[j as usize].meets_k();
    let triple_ok = (0..cells.len() as isize).filter(|&j| meets(j)).all(|j| {
        (meets(j - 1) && meets(j + 1)) || (meets(j - 2) && meets(j - 1)) || (meets(j + 1) && meets(j + 2))
    });
    let a1_prime = cells.iter().map(|c| c.len()).fold(f64::INFINITY, f64::min) / eps;
    let a1 = cells.iter().map(|c| c.len()).fold(0.0, f64::max) / eps;
    let a2 = cells
        .iter()
        .filter_map(|c| c.k_hull.map(|(a, b)| (a - c.lo).min(c.hi - b) / c.len()))
        .fold(f64::INFINITY, f64::min);
    Ok(TriadicPartition { eps, cells, a1_prime, a1, a2, covers_unit, triple_ok, cover_depth: deepest })
}
