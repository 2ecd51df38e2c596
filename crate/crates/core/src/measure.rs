//! Self-conformal measures: sampling, Fourier transforms, decay and
//! Frostman exponents, Lyapunov exponent.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ifs::Ifs;
use crate::rng;
use crate::stats::{fit_line, Moments};

pub const DEFAULT_LEAF_CAP: u128 = 10_000_000;

#[derive(Debug, Clone)]
pub struct SelfConformalMeasure {
    ifs: Ifs,
    p: Vec<f64>,
    picker: WeightedIndex<f64>,
}

impl SelfConformalMeasure {
    pub fn new(ifs: Ifs, p: Vec<f64>) -> Result<SelfConformalMeasure> {
        if p.len() != ifs.len() {
            return Err(Error::Invalid(format!("p has {} entries for {} maps", p.len(), ifs.len())));
        }
        if p.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Invalid("p must be strictly positive".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("p must sum to 1 (sum = {s})")));
        }
        let picker = WeightedIndex::new(&p).map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(SelfConformalMeasure { ifs, p, picker })
    }

    pub fn ifs(&self) -> &Ifs {
        &self.ifs
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn symbol<R: Rng>(&self, rng: &mut R) -> usize {
        self.picker.sample(rng)
    }

    /// One point f_w(x₀) with |w| = depth.
    pub fn sample_one<R: Rng>(&self, depth: usize, rng: &mut R) -> f64 {
        let mut x = self.ifs.base_point();
        for _ in 0..depth {
            x = self.ifs.map(self.symbol(rng)).eval(x);
        }
        x
    }

    /// The measure pushed through the induced IFS Φ^N with weights p^N.
    /// The stationary measure is unchanged.
    pub fn induced(&self, n_gen: usize, cap: usize) -> Result<SelfConformalMeasure> {
        let ifs = crate::ifs::induce(&self.ifs, n_gen, cap)?;
        let p = (0..ifs.len())
            .map(|i| self.ifs.index_word(i, n_gen).iter().map(|&a| self.p[a]).product())
            .collect();
        SelfConformalMeasure::new(ifs, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cylinder,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierEstimate {
    pub q: f64,
    pub value: Complex64,
    /// Deterministic truncation bound (cylinder) or 0 (Monte Carlo).
    pub error_bound: f64,
    /// Per-component standard errors (Monte Carlo) or 0.
    pub stderr: (f64, f64),
    pub method: Method,
    /// Cylinder depth or Monte Carlo sample count.
    pub size: usize,
}

impl FourierEstimate {
    pub fn stderr_abs(&self) -> f64 {
        self.stderr.0.hypot(self.stderr.1)
    }
}

/// Points f_w(x₀), |w| = depth, w ~ p^depth. Deterministic given the seed,
/// independent of the thread count.
pub fn sample_points(nu: &SelfConformalMeasure, count: usize, depth: usize, seed: u64) -> Vec<f64> {
    let chunks = count.div_ceil(rng::CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng::substream(seed, c as u64);
            let len = rng::CHUNK.min(count - c * rng::CHUNK);
            (0..len).map(move |_| nu.sample_one(depth, &mut r)).collect::<Vec<_>>()
        })
        .collect()
}

/// Cylinder depth guaranteeing 2π|q|ρ^m ≤ tol.
pub fn cylinder_depth(rho: f64, q: f64, tol: f64) -> usize {
    let ratio = 2.0 * PI * q.abs() / tol;
    if ratio <= 1.0 {
        0
    } else {
        (ratio.ln() / (1.0 / rho).ln()).ceil() as usize
    }
}

fn check_leaf_cost(n: usize, depth: usize, cap: u128) -> Result<()> {
    let leaves = (n as u128).checked_pow(depth as u32).unwrap_or(u128::MAX);
    if leaves > cap {
        return Err(Error::CostCapExceeded { needed: leaves, cap, hint: "use the Monte Carlo estimator" });
    }
    Ok(())
}

/// Σ_{|w|=depth} p_w · exp(2πi q·outer(f_w(x₀))) for every q in `qs`.
/// Depth-first over words, parallel over the innermost few symbols.
pub fn cylinder_sums(
    nu: &SelfConformalMeasure,
    outer: &(dyn Fn(f64) -> f64 + Sync),
    depth: usize,
    qs: &[f64],
    cap: u128,
) -> Result<Vec<Complex64>> {
    let ifs = &nu.ifs;
    let n = ifs.len();
    check_leaf_cost(n, depth, cap)?;
    let mut split = 0;
    while split < depth && n.pow(split as u32) < 256 {
        split += 1;
    }
    let x0 = ifs.base_point();
    let roots: Vec<(f64, f64)> = (0..n.pow(split as u32))
        .map(|idx| {
            let w = ifs.index_word(idx, split);
            // w[0] is the innermost symbol of the prefix
            let mut x = x0;
            let mut wt = 1.0;
            for &a in &w {
                x = ifs.map(a).eval(x);
                wt *= nu.p[a];
            }
            (x, wt)
        })
        .collect();
    let rest = depth - split;
    let sums = roots
        .par_iter()
        .map(|&(x, wt)| {
            let mut acc = vec![Complex64::new(0.0, 0.0); qs.len()];
            dfs(nu, outer, x, wt, rest, qs, &mut acc);
            acc
        })
        .collect::<Vec<_>>();
    // sequential fold keeps the rounding independent of the thread count
    let mut total = vec![Complex64::new(0.0, 0.0); qs.len()];
    for s in sums {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    Ok(total)
}

fn dfs(
    nu: &SelfConformalMeasure,
    outer: &(dyn Fn(f64) -> f64 + Sync),
    x: f64,
    wt: f64,
    rest: usize,
    qs: &[f64],
    acc: &mut [Complex64],
) {
    if rest == 0 {
        let y = outer(x);
        for (a, &q) in acc.iter_mut().zip(qs) {
            *a += Complex64::from_polar(wt, 2.0 * PI * q * y);
        }
        return;
    }
    for (a, m) in nu.ifs.maps().iter().enumerate() {
        dfs(nu, outer, m.eval(x), wt * nu.p[a], rest - 1, qs, acc);
    }
}

/// Σ_w p_w · exp(2πi q·outer(f_w(x₀))) over an adaptive cylinder cover: a
/// branch w stops once 2π·q_max·lip·|f_w(hull)| ≤ tol, where `lip` bounds
/// |outer'| on the hull, and otherwise splits into the words wa. Each value is
/// then within tol of the transform of the pushed measure. Returns the sums
/// and the number of leaves.
pub fn cylinder_sums_adaptive(
    nu: &SelfConformalMeasure,
    outer: &(dyn Fn(f64) -> f64 + Sync),
    lip: f64,
    qs: &[f64],
    tol: f64,
    cap: u128,
) -> Result<(Vec<Complex64>, u128)> {
    let ifs = &nu.ifs;
    let q_max = qs.iter().fold(0.0f64, |a, q| a.max(q.abs()));
    let scale = 2.0 * PI * q_max * lip;
    let (h0, h1) = ifs.hull();
    let x0 = ifs.base_point();
    let is_leaf = |w: &[usize]| scale * (ifs.apply_word(w, h1) - ifs.apply_word(w, h0)).abs() <= tol;
    let weight = |w: &[usize]| w.iter().map(|&a| nu.p[a]).product::<f64>();
    // breadth-first split for parallelism; order stays deterministic
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    let mut leaves = Vec::new();
    while !frontier.is_empty() && frontier.len() < 256 {
        let mut next = Vec::new();
        for w in frontier {
            if is_leaf(&w) {
                leaves.push(w);
            } else {
                next.extend((0..ifs.len()).map(|a| {
                    let mut c = w.clone();
                    c.push(a);
                    c
                }));
            }
        }
        frontier = next;
    }
    let count = AtomicU64::new(leaves.len() as u64);
    let budget = u64::try_from(cap).unwrap_or(u64::MAX);
    let parts: Vec<Option<Vec<Complex64>>> = frontier
        .par_iter()
        .map(|w| {
            let mut acc = vec![Complex64::new(0.0, 0.0); qs.len()];
            let mut word = w.clone();
            let ok = adaptive_dfs(nu, outer, &mut word, weight(w), &is_leaf, qs, &mut acc, &count, budget);
            ok.then_some(acc)
        })
        .collect();
    let used = count.load(Ordering::Relaxed);
    if used > budget || parts.iter().any(|p| p.is_none()) {
        return Err(Error::CostCapExceeded { needed: used as u128, cap, hint: "raise the cap or the tolerance" });
    }
    let mut total = vec![Complex64::new(0.0, 0.0); qs.len()];
    for w in &leaves {
        let y = outer(ifs.apply_word(w, x0));
        let wt = weight(w);
        for (t, &q) in total.iter_mut().zip(qs) {
            *t += Complex64::from_polar(wt, 2.0 * PI * q * y);
        }
    }
    for p in parts.into_iter().flatten() {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Ok((total, used as u128))
}

#[allow(clippy::too_many_arguments)]
fn adaptive_dfs(
    nu: &SelfConformalMeasure,
    outer: &(dyn Fn(f64) -> f64 + Sync),
    word: &mut Vec<usize>,
    wt: f64,
    is_leaf: &(dyn Fn(&[usize]) -> bool + Sync),
    qs: &[f64],
    acc: &mut [Complex64],
    count: &AtomicU64,
    budget: u64,
) -> bool {
    if is_leaf(word) {
        let y = outer(nu.ifs.apply_word(word, nu.ifs.base_point()));
        for (a, &q) in acc.iter_mut().zip(qs) {
            *a += Complex64::from_polar(wt, 2.0 * PI * q * y);
        }
        return count.fetch_add(1, Ordering::Relaxed) < budget;
    }
    for a in 0..nu.ifs.len() {
        word.push(a);
        let ok = adaptive_dfs(nu, outer, word, wt * nu.p[a], is_leaf, qs, acc, count, budget);
        word.pop();
        if !ok {
            return false;
        }
    }
    true
}

/// Deterministic Fourier transform with |value − F_q(ν)| ≤ tol.
pub fn fourier_cylinder(nu: &SelfConformalMeasure, q: f64, tol: f64, cap: u128) -> Result<FourierEstimate> {
    assert!(tol > 0.0);
    if q == 0.0 {
        return Ok(FourierEstimate {
            q,
            value: Complex64::new(1.0, 0.0),
            error_bound: 0.0,
            stderr: (0.0, 0.0),
            method: Method::Cylinder,
            size: 0,
        });
    }
    let rho = nu.ifs.rho();
    let m = cylinder_depth(rho, q, tol);
    let v = cylinder_sums(nu, &|x| x, m, &[q], cap)?[0];
    Ok(FourierEstimate {
        q,
        value: v,
        error_bound: 2.0 * PI * q.abs() * rho.powi(m as i32),
        stderr: (0.0, 0.0),
        method: Method::Cylinder,
        size: m,
    })
}

/// Monte Carlo Fourier transform from `sample_points`.
pub fn fourier_mc(nu: &SelfConformalMeasure, q: f64, n_samples: usize, depth: usize, seed: u64) -> FourierEstimate {
    let pts = sample_points(nu, n_samples, depth, seed);
    fourier_from_samples(&pts, q)
}

pub fn fourier_from_samples(pts: &[f64], q: f64) -> FourierEstimate {
    let (re, im) = pts
        .par_chunks(rng::CHUNK)
        .map(|c| {
            let (mut re, mut im) = (Moments::default(), Moments::default());
            for &x in c {
                let (s, co) = (2.0 * PI * q * x).sin_cos();
                re.push(co);
                im.push(s);
            }
            (re, im)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((Moments::default(), Moments::default()), |a, b| (a.0.merge(b.0), a.1.merge(b.1)));
    FourierEstimate {
        q,
        value: Complex64::new(re.mean(), im.mean()),
        error_bound: 0.0,
        stderr: (re.stderr(), im.stderr()),
        method: Method::MonteCarlo,
        size: pts.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayBlock {
    pub q_lo: f64,
    pub q_hi: f64,
    /// sup of |F_q| over all sampled q in the block
    pub sup: f64,
    pub argmax: f64,
    /// sup over the integer samples only (NaN if the block holds no integer)
    pub sup_integer: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    /// Minus the slope of log sup vs log q. Not clamped.
    pub alpha: f64,
    pub intercept: f64,
    pub residual: f64,
    /// Same fit on the integer-frequency sups, where lattice obstructions live.
    pub alpha_integer: f64,
    pub blocks: Vec<DecayBlock>,
}

pub const DECAY_TOL: f64 = 1e-4;
const LOG_SAMPLES: usize = 32;
const INT_SAMPLES: usize = 32;

/// q-samples in [lo, hi]: log-uniform reals plus integers. Small blocks get
/// every integer; large ones an even spread plus the integer multiples of
/// the block start, so that lattice-periodic peaks recur block to block.
pub fn block_samples(lo: f64, hi: f64) -> Vec<f64> {
    let mut qs: Vec<f64> = (0..LOG_SAMPLES)
        .map(|i| lo * (hi / lo).powf(i as f64 / (LOG_SAMPLES - 1) as f64))
        .collect();
    let (a, b) = (lo.ceil() as u64, hi.floor() as u64);
    if b >= a {
        let count = b - a + 1;
        if count <= 2 * INT_SAMPLES as u64 {
            qs.extend((a..=b).map(|v| v as f64));
        } else {
            for i in 0..INT_SAMPLES as u64 {
                qs.push((a + i * (count - 1) / (INT_SAMPLES as u64 - 1)) as f64);
            }
            let mut t = a;
            while t <= b {
                qs.push(t as f64);
                t += a;
            }
        }
    }
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    qs
}

fn block_fit(blocks: &[DecayBlock], pick: impl Fn(&DecayBlock) -> f64) -> Option<crate::stats::LineFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = blocks
        .iter()
        .filter(|b| pick(b).is_finite() && pick(b) > 0.0)
        .map(|b| ((b.q_lo * b.q_hi).sqrt().ln(), pick(b).ln()))
        .unzip();
    fit_line(&xs, &ys)
}

/// Fit |F_q| ≲ q^{−α} from geometric blocks of ratio (q_max/q_min)^{1/blocks}.
pub fn decay_exponent(nu: &SelfConformalMeasure, q_min: f64, q_max: f64, blocks: usize, cap: u128) -> Result<DecayFit> {
    if q_min < 1.0 || blocks < 4 || q_max / q_min < 2f64.powi(blocks as i32) * (1.0 - 1e-12) {
        return Err(Error::Invalid("decay_exponent needs q_min >= 1, blocks >= 4, q_max/q_min >= 2^blocks".into()));
    }
    let ratio = (q_max / q_min).powf(1.0 / blocks as f64);
    let mut out = Vec::with_capacity(blocks);
    for j in 0..blocks {
        // snap edges that are integers up to rounding
        let snap = |v: f64| if (v - v.round()).abs() < 1e-9 * v { v.round() } else { v };
        let lo = snap(q_min * ratio.powi(j as i32));
        let hi = if j + 1 == blocks { q_max } else { snap(q_min * ratio.powi(j as i32 + 1)) };
        let qs = block_samples(lo, hi);
        let (vals, _) = cylinder_sums_adaptive(nu, &|x| x, 1.0, &qs, DECAY_TOL, cap)?;
        let (mut sup, mut arg, mut sup_int) = (0.0f64, lo, f64::NAN);
        for (v, &q) in vals.iter().zip(&qs) {
            let a = v.norm();
            if a > sup {
                sup = a;
                arg = q;
            }
            if q.fract() == 0.0 && !(a <= sup_int) {
                sup_int = a;
            }
        }
        out.push(DecayBlock { q_lo: lo, q_hi: hi, sup, argmax: arg, sup_integer: sup_int, n_samples: qs.len() });
    }
    let fit = block_fit(&out, |b| b.sup).expect("at least four blocks");
    let alpha_integer = block_fit(&out, |b| b.sup_integer).map(|f| -f.slope).unwrap_or(f64::NAN);
    Ok(DecayFit { alpha: -fit.slope, intercept: fit.intercept, residual: fit.residual, alpha_integer, blocks: out })
}

/// Largest empirical mass of a closed window of width 2r over sorted samples.
pub fn sup_ball_mass(sorted: &[f64], r: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    let (mut j, mut best) = (0usize, 0usize);
    for i in 0..n {
        while j < n && sorted[j] <= sorted[i] + 2.0 * r {
            j += 1;
        }
        best = best.max(j - i);
    }
    best as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrostmanFit {
    pub d: f64,
    pub masses: Vec<(f64, f64)>,
}

pub fn frostman_exponent(nu: &SelfConformalMeasure, r_grid: &[f64], n_samples: usize, depth: usize, seed: u64) -> FrostmanFit {
    assert!(r_grid.iter().all(|&r| r > 0.0 && r < 1.0), "radii must lie in (0,1)");
    let mut pts = sample_points(nu, n_samples, depth, seed);
    pts.sort_by(f64::total_cmp);
    let masses: Vec<(f64, f64)> = r_grid.iter().map(|&r| (r, sup_ball_mass(&pts, r))).collect();
    let xs: Vec<f64> = masses.iter().map(|m| m.0.ln()).collect();
    let ys: Vec<f64> = masses.iter().map(|m| m.1.ln()).collect();
    let d = fit_line(&xs, &ys).map(|f| f.slope).unwrap_or(f64::NAN);
    FrostmanFit { d, masses }
}

/// χ = E[−log|f_a'(x)|], a ~ p, x ~ ν. Returns (mean, stderr).
pub fn lyapunov(nu: &SelfConformalMeasure, n_samples: usize, depth: usize, seed: u64) -> (f64, f64) {
    let chunks = n_samples.div_ceil(rng::CHUNK);
    let m = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::substream(seed, c as u64);
            let mut m = Moments::default();
            for _ in 0..rng::CHUNK.min(n_samples - c * rng::CHUNK) {
                let x = nu.sample_one(depth, &mut r);
                let a = nu.symbol(&mut r);
                m.push(-nu.ifs.map(a).log_abs_deriv(x));
            }
            m
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Moments::default(), Moments::merge);
    (m.mean(), m.stderr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    #[test]
    fn weights_validated() {
        assert!(SelfConformalMeasure::new(corpus::cantor(), vec![0.5, 0.6]).is_err());
        assert!(SelfConformalMeasure::new(corpus::cantor(), vec![1.0, 0.0]).is_err());
        assert!(SelfConformalMeasure::new(corpus::cantor(), vec![1.0]).is_err());
    }

    #[test]
    fn cantor_points_avoid_middle_third() {
        let pts = sample_points(&corpus::uniform(corpus::cantor()), 20_000, 30, 1);
        assert!(pts.iter().all(|&x| (0.0..=1.0).contains(&x) && !(x > 1.0 / 3.0 && x < 2.0 / 3.0)));
    }

    #[test]
    fn gauss_points_in_first_level_hull() {
        let pts = sample_points(&corpus::uniform(corpus::gauss24()), 20_000, 20, 2);
        assert!(pts.iter().all(|&x| (0.2..=0.5).contains(&x)));
    }

    #[test]
    fn sampling_deterministic() {
        let nu = corpus::uniform(corpus::gauss24());
        assert_eq!(sample_points(&nu, 10_000, 10, 9), sample_points(&nu, 10_000, 10, 9));
    }

    #[test]
    fn zero_frequency_is_mass() {
        let nu = corpus::uniform(corpus::gauss24());
        let e = fourier_cylinder(&nu, 0.0, 1e-6, DEFAULT_LEAF_CAP).unwrap();
        assert_eq!(e.value, Complex64::new(1.0, 0.0));
        assert_eq!(e.error_bound, 0.0);
        let m = fourier_mc(&nu, 0.0, 1000, 10, 3);
        assert_eq!(m.value, Complex64::new(1.0, 0.0));
        assert_eq!(m.stderr, (0.0, 0.0));
    }

    #[test]
    fn cylinder_tolerance_self_consistent() {
        let nu = corpus::uniform(corpus::gauss24());
        let a = fourier_cylinder(&nu, 10.0, 1e-6, DEFAULT_LEAF_CAP).unwrap();
        let b = fourier_cylinder(&nu, 10.0, 1e-8, DEFAULT_LEAF_CAP).unwrap();
        assert!((a.value - b.value).norm() < 2e-6);
    }

    #[test]
    fn cost_cap_enforced() {
        let nu = corpus::uniform(corpus::cantor());
        assert!(matches!(fourier_cylinder(&nu, 1e6, 1e-9, 1000), Err(Error::CostCapExceeded { .. })));
    }

    #[test]
    fn dyadic_vanishes_at_integers() {
        let nu = corpus::uniform(corpus::dyadic());
        // at depth m the sum is a Riemann sum of e^{2πiqx} over 2^m equal cells
        let qs: Vec<f64> = (1..6).map(|q| q as f64).collect();
        let v = cylinder_sums(&nu, &|x| x, 12, &qs, DEFAULT_LEAF_CAP).unwrap();
        assert!(v.iter().all(|z| z.norm() < 1e-12), "{v:?}");
    }

    #[test]
    fn lyapunov_exact_cases() {
        let (c, s) = lyapunov(&corpus::uniform(corpus::cantor()), 5000, 10, 1);
        assert!((c - 3f64.ln()).abs() < 1e-14 && s < 1e-12);
        let (c, _) = lyapunov(&corpus::uniform(corpus::dyadic()), 5000, 10, 1);
        assert!((c - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ball_mass_window() {
        let v = [0.0, 0.1, 0.2, 0.3, 1.0];
        assert_eq!(sup_ball_mass(&v, 0.1), 3.0 / 5.0);
    }
}
