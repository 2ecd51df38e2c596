//! Bernoulli disintegration of ν into random measures μ_ω.
//!
//! Families Φ₁ = Φ₂ = {f₁,f₂}, Φ₃ = Φ₄ = {f₃,f₄} and Φ_k = {f_i, f_{i+1}, f_k}
//! for every other parent map, selected with probabilities q and carrying
//! weights p̃. The first two members of every family are its UNI pair.

mod dolgopyat;
mod partition;

pub use dolgopyat::{cone_constant, dolgopyat_apply, DolgopyatInput, DolgopyatResult, SmoothStep};
pub use partition::{triadic_partition, Cell, TriadicPartition};

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ifs::{compose_word, interval_distance, uni_bounds, ConformalMap, Ifs, UniQuadruple, Word};
use crate::measure::SelfConformalMeasure;
use crate::rng;
use crate::transfer_op::{image_hull, Branch, ChebGrid, DiscreteOperator, Provenance};

/// A finite prefix of ω ∈ I^ℕ (family indices).
pub type OmegaPrefix = Vec<usize>;

#[derive(Debug, Clone)]
pub struct Family {
    /// Parent symbols; the first two form the UNI pair.
    pub members: Vec<usize>,
    pub p_tilde: Vec<f64>,
    picker: WeightedIndex<f64>,
}

impl Family {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RandomModel {
    parent: SelfConformalMeasure,
    quadruple: UniQuadruple,
    families: Vec<Family>,
    q: Vec<f64>,
    multiplicity: Vec<usize>,
    q_exact: Vec<BigRational>,
    p_tilde_exact: Vec<Vec<BigRational>>,
    q_picker: WeightedIndex<f64>,
}

fn disjoint(ifs: &Ifs, members: &[usize]) -> bool {
    for (k, &a) in members.iter().enumerate() {
        for &b in &members[k + 1..] {
            if interval_distance(ifs.map(a).image(), ifs.map(b).image()) <= 0.0 {
                return false;
            }
        }
    }
    true
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite weight")
}

pub fn build_model(nu: &SelfConformalMeasure, quadruple: &UniQuadruple) -> Result<RandomModel> {
    let ifs = nu.ifs();
    let n = ifs.len();
    let qd = quadruple.indices;
    if qd.iter().any(|&i| i >= n) {
        return Err(Error::Invalid(format!("quadruple {qd:?} outside alphabet of size {n}")));
    }
    let pair = [[qd[0], qd[1]], [qd[2], qd[3]]];
    for pr in &pair {
        if !disjoint(ifs, pr) {
            return Err(Error::SeparationUnsatisfied(pr[1]));
        }
    }
    let mut member_sets: Vec<Vec<usize>> = vec![pair[0].to_vec(), pair[0].to_vec(), pair[1].to_vec(), pair[1].to_vec()];
    for k in (0..n).filter(|k| !qd.contains(k)) {
        let triple = pair
            .iter()
            .map(|pr| vec![pr[0], pr[1], k])
            .find(|t| disjoint(ifs, t))
            .ok_or(Error::SeparationUnsatisfied(k))?;
        member_sets.push(triple);
    }
    let mut multiplicity = vec![0usize; n];
    for m in &member_sets {
        for &a in m {
            multiplicity[a] += 1;
        }
    }
    let share: Vec<BigRational> = (0..n)
        .map(|a| exact(nu.p()[a]) / BigRational::from_integer(BigInt::from(multiplicity[a])))
        .collect();
    let q_exact: Vec<BigRational> = member_sets
        .iter()
        .map(|m| m.iter().fold(BigRational::zero(), |acc, &a| acc + &share[a]))
        .collect();
    let p_tilde_exact: Vec<Vec<BigRational>> = member_sets
        .iter()
        .zip(&q_exact)
        .map(|(m, qj)| m.iter().map(|&a| &share[a] / qj).collect())
        .collect();
    let q: Vec<f64> = q_exact.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    let families = member_sets
        .into_iter()
        .zip(&p_tilde_exact)
        .map(|(members, pt)| {
            let p_tilde: Vec<f64> = pt.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
            let picker = WeightedIndex::new(&p_tilde).map_err(|e| Error::Invalid(e.to_string()))?;
            Ok(Family { members, p_tilde, picker })
        })
        .collect::<Result<Vec<_>>>()?;
    let q_picker = WeightedIndex::new(&q).map_err(|e| Error::Invalid(e.to_string()))?;
    let model = RandomModel {
        parent: nu.clone(),
        quadruple: quadruple.clone(),
        families,
        q,
        multiplicity,
        q_exact,
        p_tilde_exact,
        q_picker,
    };
    if !model.marginal_identity_exact() {
        return Err(Error::Invalid("marginal identity failed".into()));
    }
    Ok(model)
}

impl RandomModel {
    pub fn parent(&self) -> &SelfConformalMeasure {
        &self.parent
    }

    pub fn ifs(&self) -> &Ifs {
        self.parent.ifs()
    }

    pub fn quadruple(&self) -> &UniQuadruple {
        &self.quadruple
    }

    pub fn families(&self) -> &[Family] {
        &self.families
    }

    pub fn family(&self, i: usize) -> &Family {
        &self.families[i]
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn multiplicity(&self) -> &[usize] {
        &self.multiplicity
    }

    pub fn q_exact(&self) -> &[BigRational] {
        &self.q_exact
    }

    pub fn p_tilde_exact(&self, family: usize) -> &[BigRational] {
        &self.p_tilde_exact[family]
    }

    /// Σ_{j ∋ a} q_j p̃_j(a) = p_a for every parent symbol, in exact arithmetic
    /// on the binary values of p.
    pub fn marginal_identity_exact(&self) -> bool {
        let n = self.ifs().len();
        let mut acc = vec![BigRational::zero(); n];
        for (j, fam) in self.families.iter().enumerate() {
            for (k, &a) in fam.members.iter().enumerate() {
                acc[a] += &self.q_exact[j] * &self.p_tilde_exact[j][k];
            }
        }
        acc.iter().zip(self.parent.p()).all(|(v, &p)| *v == exact(p))
    }

    /// The same identity in floating point.
    pub fn marginal_residual(&self) -> f64 {
        let mut acc = vec![0.0; self.ifs().len()];
        for (j, fam) in self.families.iter().enumerate() {
            for (k, &a) in fam.members.iter().enumerate() {
                acc[a] += self.q[j] * fam.p_tilde[k];
            }
        }
        acc.iter().zip(self.parent.p()).map(|(v, p)| (v - p).abs()).fold(0.0, f64::max)
    }

    pub fn random_omega<R: Rng>(&self, len: usize, rng: &mut R) -> OmegaPrefix {
        (0..len).map(|_| self.q_picker.sample(rng)).collect()
    }

    /// Q([ω]) for a finite prefix.
    pub fn q_cylinder(&self, omega: &[usize]) -> f64 {
        omega.iter().map(|&i| self.q[i]).product()
    }

    /// Hull of the parent attractor; every K_ω lies inside it.
    pub fn hull(&self) -> (f64, f64) {
        self.ifs().hull()
    }

    /// Collocation grid on the image hull of the parent maps.
    pub fn grid(&self, m: usize) -> ChebGrid {
        let maps: Vec<&ConformalMap> = self.ifs().maps().iter().collect();
        let (lo, hi) = image_hull(&maps);
        ChebGrid::new(lo, hi, m)
    }

    /// The UNI pair words α₁, α₂ ∈ X_N^(ω): the pair of Φ_{ω₁} followed by a
    /// common tail (first member of each later family).
    pub fn uni_pair_words(&self, omega: &[usize], n: usize) -> Result<[Word; 2]> {
        check_prefix(omega, n)?;
        let tail: Vec<usize> = omega[1..n].iter().map(|&i| self.families[i].members[0]).collect();
        let fam = &self.families[omega[0]];
        let mk = |head: usize| -> Word { std::iter::once(head).chain(tail.iter().copied()).collect() };
        Ok([mk(fam.members[0]), mk(fam.members[1])])
    }
}

fn check_prefix(omega: &[usize], need: usize) -> Result<()> {
    if omega.len() < need {
        return Err(Error::PrefixTooShort { need, have: omega.len() });
    }
    Ok(())
}

/// All words I ∈ X_N^(ω) as parent words with weights η^(ω)(I).
pub fn local_words(model: &RandomModel, omega: &[usize], n: usize) -> Result<Vec<(f64, Word)>> {
    check_prefix(omega, n)?;
    let mut out = vec![(1.0, Vec::with_capacity(n))];
    for &fi in &omega[..n] {
        let fam = &model.families[fi];
        out = out
            .into_iter()
            .flat_map(|(w, word)| {
                fam.members.iter().zip(&fam.p_tilde).map(move |(&a, &p)| {
                    let mut next = word.clone();
                    next.push(a);
                    (w * p, next)
                })
            })
            .collect();
    }
    Ok(out)
}

pub fn local_branches(model: &RandomModel, omega: &[usize], n: usize) -> Result<Vec<Branch>> {
    Ok(local_words(model, omega, n)?
        .into_iter()
        .map(|(weight, w)| Branch { weight, map: compose_word(model.ifs(), &w) })
        .collect())
}

/// P_{s,ω,N} discretized on `grid`.
pub fn local_operator(model: &RandomModel, omega: &[usize], n: usize, s: Complex64, grid: &ChebGrid) -> Result<DiscreteOperator> {
    let branches = local_branches(model, omega, n)?;
    Ok(DiscreteOperator::from_branches(s, grid.clone(), branches, Provenance::Local))
}

pub fn apply_local_transfer(
    model: &RandomModel,
    omega: &[usize],
    n: usize,
    s: Complex64,
    grid: &ChebGrid,
    g: &[Complex64],
) -> Result<Vec<Complex64>> {
    if g.len() != grid.len() {
        return Err(Error::GridMismatch { expected: grid.len(), got: g.len() });
    }
    crate::transfer_op::apply_op(&local_operator(model, omega, n, s, grid)?, g)
}

/// Σ over words with position k drawn from `levels[k]` (outermost first) of
/// weight · e^{2πs c(I,x)} · g(f_I x), evaluated pointwise.
fn word_sum(levels: &[Vec<(f64, &ConformalMap)>], s: Complex64, g: &dyn Fn(f64) -> Complex64, x: f64) -> Complex64 {
    fn go(levels: &[Vec<(f64, &ConformalMap)>], s: Complex64, g: &dyn Fn(f64) -> Complex64, x: f64, c: f64, w: f64) -> Complex64 {
        match levels.split_last() {
            None => (s * (2.0 * PI * c)).exp() * g(x) * w,
            Some((inner, rest)) => inner
                .iter()
                .map(|&(p, m)| go(rest, s, g, m.eval(x), c - m.log_abs_deriv(x), w * p))
                .sum(),
        }
    }
    go(levels, s, g, x, 0.0, 1.0)
}

/// max_x |P_s^N g(x) − Σ_{ω ∈ I^N} Q[ω] P_{s,ω,N} g(x)|, both sides as exact finite sums.
pub fn check_operator_disintegration(
    model: &RandomModel,
    s: Complex64,
    n: usize,
    g: &(dyn Fn(f64) -> Complex64 + Sync),
    xs: &[f64],
    cap: u128,
) -> Result<f64> {
    let fams = model.families.len() as u128;
    let needed = fams.checked_pow(n as u32).unwrap_or(u128::MAX);
    if needed > cap {
        return Err(Error::CostCapExceeded { needed, cap, hint: "lower N" });
    }
    let ifs = model.ifs();
    let parent_level: Vec<(f64, &ConformalMap)> = ifs.maps().iter().zip(model.parent.p()).map(|(m, &p)| (p, m)).collect();
    let lhs_levels = vec![parent_level; n];
    let lhs: Vec<Complex64> = xs.iter().map(|&x| word_sum(&lhs_levels, s, g, x)).collect();
    let nf = model.families.len();
    let parts: Vec<Vec<Complex64>> = (0..needed as usize)
        .into_par_iter()
        .map(|idx| {
            let omega = ifs_index(idx, nf, n);
            let levels: Vec<Vec<(f64, &ConformalMap)>> = omega
                .iter()
                .map(|&fi| {
                    let fam = &model.families[fi];
                    fam.members.iter().zip(&fam.p_tilde).map(|(&a, &p)| (p, ifs.map(a))).collect()
                })
                .collect();
            let qw = model.q_cylinder(&omega);
            xs.iter().map(|&x| word_sum(&levels, s, g, x) * qw).collect()
        })
        .collect();
    let mut rhs = vec![Complex64::new(0.0, 0.0); xs.len()];
    for part in parts {
        for (r, v) in rhs.iter_mut().zip(part) {
            *r += v;
        }
    }
    Ok(lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
}

fn ifs_index(mut idx: usize, base: usize, len: usize) -> Vec<usize> {
    let mut w = vec![0; len];
    for k in (0..len).rev() {
        w[k] = idx % base;
        idx /= base;
    }
    w
}

/// One point of μ_ω truncated at `depth`: symbols are drawn outermost first,
/// so a deeper sample shares its leading symbols with a shallower one.
fn sample_omega_point<R: Rng>(model: &RandomModel, omega: &[usize], depth: usize, rng: &mut R, buf: &mut Vec<usize>) -> f64 {
    buf.clear();
    for &fi in &omega[..depth] {
        let fam = &model.families[fi];
        buf.push(fam.members[fam.picker.sample(rng)]);
    }
    let ifs = model.ifs();
    buf.iter().rev().fold(0.0, |x, &a| ifs.map(a).eval(x))
}

pub fn sample_mu_omega(model: &RandomModel, omega: &[usize], depth: usize, count: usize, seed: u64) -> Result<Vec<f64>> {
    check_prefix(omega, depth)?;
    let chunks = count.div_ceil(rng::CHUNK);
    Ok((0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng::substream(seed, c as u64);
            let len = rng::CHUNK.min(count - c * rng::CHUNK);
            let mut buf = Vec::with_capacity(depth);
            (0..len).map(|_| sample_omega_point(model, omega, depth, &mut r, &mut buf)).collect::<Vec<_>>()
        })
        .collect())
}

/// Points of ∫μ_ω dQ: a fresh ω ~ Q per point.
pub fn sample_model_average(model: &RandomModel, depth: usize, count: usize, seed: u64) -> Vec<f64> {
    let chunks = count.div_ceil(rng::CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng::substream(seed, c as u64);
            let len = rng::CHUNK.min(count - c * rng::CHUNK);
            let mut buf = Vec::with_capacity(depth);
            (0..len)
                .map(|_| {
                    let omega = model.random_omega(depth, &mut r);
                    sample_omega_point(model, &omega, depth, &mut r, &mut buf)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Depth at which cylinders of the parent are below `size`.
pub fn depth_for_scale(model: &RandomModel, size: f64) -> usize {
    let (lo, hi) = model.hull();
    let rho = model.ifs().rho();
    let mut d = 1;
    while rho.powi(d as i32) * (hi - lo).max(1e-300) > size && d < 10_000 {
        d += 1;
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedererEstimate {
    pub c_hat: f64,
    /// Delta-method error of the maximal ratio.
    pub stderr: f64,
    /// Ratio per probe (NaN where the small ball held too few samples).
    pub ratios: Vec<f64>,
}

pub const FEDERER_MIN_COUNT: usize = 50;

fn ball_count(sorted: &[f64], x: f64, r: f64) -> usize {
    let lo = sorted.partition_point(|&v| v < x - r);
    let hi = sorted.partition_point(|&v| v <= x + r);
    hi - lo
}

/// max over probes (x, r) of μ_ω(B(x,Dr)) / μ_ω(B(x,r)) from sampled masses.
pub fn federer_constant(
    model: &RandomModel,
    omega: &[usize],
    d_factor: f64,
    probes: &[(f64, f64)],
    depth: usize,
    n_samples: usize,
    seed: u64,
) -> Result<FedererEstimate> {
    if !(d_factor >= 1.0) {
        return Err(Error::Invalid(format!("D factor {d_factor} below 1")));
    }
    let mut pts = sample_mu_omega(model, omega, depth, n_samples, seed)?;
    pts.sort_by(f64::total_cmp);
    let mut best = (1.0f64, 0.0f64);
    let mut ratios = Vec::with_capacity(probes.len());
    for &(x, r) in probes {
        let small = ball_count(&pts, x, r);
        if small < FEDERER_MIN_COUNT {
            ratios.push(f64::NAN);
            continue;
        }
        let big = ball_count(&pts, x, d_factor * r);
        let ratio = big as f64 / small as f64;
        ratios.push(ratio);
        if ratio > best.0 {
            let rel = (1.0 / small as f64 - 1.0 / big as f64).max(0.0).sqrt();
            best = (ratio, ratio * rel);
        }
    }
    Ok(FedererEstimate { c_hat: best.0, stderr: best.1, ratios })
}

/// Probe grid: `n_x` support points drawn from μ_ω times the given radii.
pub fn federer_probes(model: &RandomModel, omega: &[usize], depth: usize, n_x: usize, radii: &[f64], seed: u64) -> Result<Vec<(f64, f64)>> {
    let xs = sample_mu_omega(model, omega, depth, n_x, rng::derive(seed, 0xfede))?;
    Ok(xs.iter().flat_map(|&x| radii.iter().map(move |&r| (x, r))).collect())
}

/// (min m, max m′) of the UNI pair over the grid, across the given prefixes.
pub fn uni_in_parts(model: &RandomModel, omegas: &[OmegaPrefix], n: usize) -> Result<(f64, f64)> {
    let mut out = (f64::INFINITY, 0.0f64);
    for omega in omegas {
        let [a1, a2] = model.uni_pair_words(omega, n)?;
        let (lo, hi) = uni_bounds(model.ifs(), &a1, &a2);
        out = (out.0.min(lo), out.1.max(hi));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::ifs::{certify_quadruple, induce};

    fn g2_model() -> RandomModel {
        let ifs = induce(&corpus::gauss24(), 2, 64).unwrap();
        let q = certify_quadruple(&ifs, [0, 1, 2, 3]).unwrap();
        build_model(&corpus::uniform(ifs), &q).unwrap()
    }

    #[test]
    fn four_family_formula() {
        let m = g2_model();
        assert_eq!(m.families().len(), 4);
        assert_eq!(m.multiplicity(), &[2, 2, 2, 2]);
        let expect = BigRational::new(BigInt::from(1), BigInt::from(4));
        assert!(m.q_exact().iter().all(|v| *v == expect));
        assert!(m.marginal_identity_exact());
    }

    #[test]
    fn five_maps_use_a_triple() {
        let g3 = induce(&corpus::gauss24(), 3, 64).unwrap();
        let q = certify_quadruple(&g3, [0, 1, 6, 7]).unwrap();
        let p: Vec<f64> = (1..=8).map(|k| k as f64 / 36.0).collect();
        let m = build_model(&SelfConformalMeasure::new(g3, p).unwrap(), &q).unwrap();
        assert_eq!(m.families().len(), 8);
        assert!(m.families()[4..].iter().all(|f| f.len() == 3));
        assert!(m.marginal_identity_exact());
        assert!(m.marginal_residual() < 1e-15);
    }

    #[test]
    fn prefix_errors() {
        let m = g2_model();
        assert!(matches!(sample_mu_omega(&m, &[0, 1], 3, 10, 1), Err(Error::PrefixTooShort { .. })));
        assert!(matches!(local_words(&m, &[0], 2), Err(Error::PrefixTooShort { .. })));
    }

    #[test]
    fn local_words_weights_sum_to_one() {
        let m = g2_model();
        let w = local_words(&m, &[0, 2, 1], 3).unwrap();
        assert_eq!(w.len(), 8);
        assert!((w.iter().map(|t| t.0).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn federer_unit_factor() {
        let m = g2_model();
        let omega = vec![0, 2, 1, 3, 0, 0, 2, 2, 1, 3];
        let probes = federer_probes(&m, &omega, 10, 4, &[1e-3, 1e-2], 3).unwrap();
        let e = federer_constant(&m, &omega, 1.0, &probes, 10, 10_000, 4).unwrap();
        assert_eq!(e.c_hat, 1.0);
    }
}
