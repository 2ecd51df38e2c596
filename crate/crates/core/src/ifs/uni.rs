//! Search for a separated UNI quadruple in an induced IFS.
//!
//! Case 1: take the seed pair (a, b) and words ξ = aⁿ, ζ = bⁿ whose cylinders
//! are far apart, then append short codes η₁, η₂ of the two attractor hull
//! endpoints. The four words ξη₁, ζη₁, ξη₂, ζη₂ of length N = n + k are the
//! quadruple. Case 2 replaces the prefixes by endpoint-code·power words.

use super::system::{cylinder_interval, distortion_constant, interval_distance, uni_functional, Ifs, Word};
use crate::error::{Error, Result};

pub const UNI_GRID: usize = 1024;
pub const UNI_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniBudget {
    /// Largest induced generation N allowed.
    pub max_generation: usize,
    /// Largest induced alphabet n^N allowed.
    pub induce_cap: usize,
}

impl Default for UniBudget {
    fn default() -> Self {
        UniBudget { max_generation: 12, induce_cap: super::system::DEFAULT_INDUCE_CAP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchCase {
    PowerPrefixes,
    EndpointPrefixes,
    /// Supplied indices, checked directly for disjoint images and UNI.
    Certified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniQuadruple {
    pub generation: usize,
    /// Base-alphabet words of f1..f4, each of length `generation`.
    pub words: [Word; 4],
    /// Indices of f1..f4 in the induced IFS.
    pub indices: [usize; 4],
    pub prefix_len: usize,
    pub suffix_len: usize,
    pub case: SearchCase,
    /// min over the grid of |UNI| for pairs (1,2) and (3,4), inner derivative included.
    pub m: f64,
    pub m_prime: f64,
    pub seed_pair: (usize, usize),
    /// Same bounds for the depth-1 seed pair.
    pub seed_m: f64,
    pub seed_m_prime: f64,
    /// Smallest pairwise distance between the four cylinders.
    pub min_gap: f64,
    /// 3ρ^N, the required gap.
    pub gap_target: f64,
}

pub fn uni_grid() -> Vec<f64> {
    (0..UNI_GRID).map(|i| i as f64 / (UNI_GRID - 1) as f64).collect()
}

/// (min, max) of |UNI(w1, w2)| over the 1024-grid.
pub fn uni_bounds(ifs: &Ifs, w1: &[usize], w2: &[usize]) -> (f64, f64) {
    uni_grid().iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| {
        let v = uni_functional(ifs, w1, w2, x).abs();
        (lo.min(v), hi.max(v))
    })
}

/// Largest UNI value over all pairs of words of length 1..=3 on the grid.
pub fn uni_max_shallow(ifs: &Ifs) -> f64 {
    let n = ifs.len();
    let mut words: Vec<Word> = Vec::new();
    for depth in 1..=3usize {
        let total = n.pow(depth as u32);
        if words.len() + total > 4096 {
            break;
        }
        words.extend((0..total).map(|i| ifs.index_word(i, depth)));
    }
    let mut best = 0.0f64;
    for x in uni_grid() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for w in &words {
            let v = ifs.log_slope_word(w, x);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        best = best.max(hi - lo);
    }
    best
}

pub fn find_uni_quadruple(ifs: &Ifs, budget: UniBudget) -> Result<UniQuadruple> {
    let shallow = uni_max_shallow(ifs);
    if shallow < UNI_ZERO_TOL {
        return Err(Error::NotUni(shallow));
    }
    let n = ifs.len();
    let rho = ifs.rho();
    let rho_min = ifs.constants().rho_min;
    let l = distortion_constant(ifs, 1).analytic;
    let (hlo, hi) = ifs.hull();
    let diam = hi - hlo;

    // seed pairs ranked by their grid minimum of |UNI|
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if (ifs.map(a).fixed_point() - ifs.map(b).fixed_point()).abs() < 1e-12 {
                continue;
            }
            let (lo, up) = uni_bounds(ifs, &[a], &[b]);
            pairs.push((a, b, lo, up));
        }
    }
    pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    if pairs.is_empty() {
        return Err(Error::NotUni(0.0));
    }

    for &(a, b, seed_m, seed_m_prime) in &pairs {
        for plen in 1..budget.max_generation {
            let mut candidates = vec![(vec![a; plen], vec![b; plen], SearchCase::PowerPrefixes)];
            for ell in 1..plen {
                let mut xi = ifs.endpoint_code(0, ell);
                xi.extend(std::iter::repeat(a).take(plen - ell));
                let mut zeta = ifs.endpoint_code(1, ell);
                zeta.extend(std::iter::repeat(b).take(plen - ell));
                candidates.push((xi, zeta, SearchCase::EndpointPrefixes));
            }
            for (xi, zeta, case) in candidates {
                let gap = interval_distance(cylinder_interval(ifs, &xi), cylinder_interval(ifs, &zeta));
                if gap <= 3.0 / l * rho.powi(plen as i32) {
                    continue;
                }
                if uni_bounds(ifs, &xi, &zeta).0 <= 0.0 {
                    continue;
                }
                if let Some(q) = extend_with_suffix(
                    ifs, &xi, &zeta, case, (a, b), (seed_m, seed_m_prime), l, rho, rho_min, diam, budget,
                ) {
                    return Ok(q);
                }
            }
        }
    }
    Err(Error::BudgetExhausted(format!("no quadruple with N <= {}", budget.max_generation)))
}

/// Check four given maps of `ifs` directly: the pairs (f1,f2), (f3,f4) have
/// disjoint images of [0,1] and a positive UNI lower bound on the grid.
pub fn certify_quadruple(ifs: &Ifs, indices: [usize; 4]) -> Result<UniQuadruple> {
    if indices.iter().any(|&i| i >= ifs.len()) {
        return Err(Error::Invalid(format!("quadruple index out of range {indices:?}")));
    }
    for i in 0..4 {
        for j in i + 1..4 {
            if indices[i] == indices[j] {
                return Err(Error::Invalid(format!("repeated quadruple index {}", indices[i])));
            }
        }
    }
    let images: Vec<(f64, f64)> = indices.iter().map(|&i| ifs.map(i).image()).collect();
    let mut min_gap = f64::INFINITY;
    for (a, b) in [(0, 1), (2, 3)] {
        let gap = interval_distance(images[a], images[b]);
        if gap <= 0.0 {
            return Err(Error::SeparationUnsatisfied(indices[b]));
        }
        min_gap = min_gap.min(gap);
    }
    let (m12, mp12) = uni_bounds(ifs, &[indices[0]], &[indices[1]]);
    let (m34, mp34) = uni_bounds(ifs, &[indices[2]], &[indices[3]]);
    let m = m12.min(m34);
    if m < UNI_ZERO_TOL {
        return Err(Error::NotUni(m));
    }
    let words = indices.map(|i| ifs.labels()[i].clone());
    let generation = words[0].len();
    Ok(UniQuadruple {
        generation,
        words,
        indices,
        prefix_len: generation,
        suffix_len: 0,
        case: SearchCase::Certified,
        m,
        m_prime: mp12.max(mp34),
        seed_pair: (indices[0], indices[1]),
        seed_m: m12,
        seed_m_prime: mp12,
        min_gap,
        gap_target: 0.0,
    })
}

#[allow(clippy::too_many_arguments)]
fn extend_with_suffix(
    ifs: &Ifs,
    xi: &[usize],
    zeta: &[usize],
    case: SearchCase,
    seed: (usize, usize),
    seed_bounds: (f64, f64),
    l: f64,
    rho: f64,
    rho_min: f64,
    diam: f64,
    budget: UniBudget,
) -> Option<UniQuadruple> {
    let plen = xi.len();
    let n = ifs.len() as f64;
    for k in 1.. {
        let big_n = plen + k;
        if big_n > budget.max_generation || n.powi(big_n as i32) > budget.induce_cap as f64 {
            return None;
        }
        if rho_min.powi(plen as i32) <= 6.0 / diam * rho.powi(big_n as i32) {
            continue;
        }
        if rho.powi(k as i32) > 1.0 / l {
            continue;
        }
        let eta1 = ifs.endpoint_code(0, k);
        let eta2 = ifs.endpoint_code(1, k);
        if interval_distance(cylinder_interval(ifs, &eta1), cylinder_interval(ifs, &eta2)) < diam / 2.0 {
            continue;
        }
        let cat = |p: &[usize], s: &[usize]| -> Word { p.iter().chain(s).copied().collect() };
        let words = [cat(xi, &eta1), cat(zeta, &eta1), cat(xi, &eta2), cat(zeta, &eta2)];
        let cyl: Vec<(f64, f64)> = words.iter().map(|w| cylinder_interval(ifs, w)).collect();
        let mut min_gap = f64::INFINITY;
        for i in 0..4 {
            for j in i + 1..4 {
                min_gap = min_gap.min(interval_distance(cyl[i], cyl[j]));
            }
        }
        let gap_target = 3.0 * rho.powi(big_n as i32);
        if min_gap <= gap_target {
            continue;
        }
        let (m12, mp12) = uni_bounds(ifs, &words[0], &words[1]);
        let (m34, mp34) = uni_bounds(ifs, &words[2], &words[3]);
        let m = m12.min(m34);
        if m <= 0.0 {
            continue;
        }
        let indices = [0, 1, 2, 3].map(|i| ifs.word_index(&words[i]));
        return Some(UniQuadruple {
            generation: big_n,
            words,
            indices,
            prefix_len: plen,
            suffix_len: k,
            case,
            m,
            m_prime: mp12.max(mp34),
            seed_pair: seed,
            seed_m: seed_bounds.0,
            seed_m_prime: seed_bounds.1,
            min_gap,
            gap_target,
        });
    }
    None
}
