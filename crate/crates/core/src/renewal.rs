//! The derivative-cocycle random walk S_n(ω) = −log|f'_{ω|n}(x_{σⁿω})|, its
//! first passage times, the renewal operator R, overshoot residues and the
//! equidistribution test.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure::SelfConformalMeasure;
use crate::rng;
use crate::stats::{fit_line, Moments};
use crate::transfer_op::DEFAULT_STRIP;

/// Coding depth so that ρ^depth ≤ 1e-9.
pub fn coding_depth(rho: f64) -> usize {
    (1e-9f64.ln() / rho.ln()).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkSample {
    pub k: f64,
    /// ω|_m with m = max(τ_k, β_k) + tail length.
    pub word: Vec<usize>,
    /// S_1, …, S_m
    pub path: Vec<f64>,
    pub tau: usize,
    pub s_tau: f64,
    pub beta: usize,
    /// First symbols of σ^{τ_k} ω.
    pub tail: Vec<usize>,
}

impl WalkSample {
    pub fn overshoot(&self) -> f64 {
        self.s_tau - self.k
    }
}

/// Reusable buffers for one trajectory.
struct Walker<'a> {
    nu: &'a SelfConformalMeasure,
    depth: usize,
    eps: f64,
    syms: Vec<usize>,
    xs: Vec<f64>,
    path: Vec<f64>,
}

struct Passage {
    tau: usize,
    s_tau: f64,
    beta: usize,
    /// Symbols ω_τ … ω_{τ+t−1} as a base-n index.
    bin: usize,
}

impl<'a> Walker<'a> {
    fn new(nu: &'a SelfConformalMeasure, eps: f64) -> Walker<'a> {
        Walker { nu, depth: coding_depth(nu.ifs().rho()), eps, syms: Vec::new(), xs: Vec::new(), path: Vec::new() }
    }

    /// Upper bound on τ_k and β_k from the lower increment bound D.
    fn horizon(&self, k: f64) -> usize {
        let d = self.nu.ifs().constants().d_min;
        (k * (1.0 + self.eps / 8.0) / d).ceil() as usize + 1
    }

    fn run<R: Rng>(&mut self, k: f64, tail_len: usize, need_beta: bool, rng: &mut R) -> Passage {
        let ifs = self.nu.ifs();
        let m = self.horizon(k).max(1);
        let total = m + tail_len + self.depth;
        self.syms.clear();
        self.syms.extend((0..total).map(|_| self.nu.symbol(rng)));
        // xs[j] ≈ π(σ^j ω) for j ≤ m
        self.xs.clear();
        self.xs.resize(m + 1, 0.0);
        let mut x = ifs.base_point();
        for j in (0..total).rev() {
            x = ifs.map(self.syms[j]).eval(x);
            if j <= m {
                self.xs[j] = x;
            }
        }
        // S_n = Σ_{j<n} c(ω_j, x_{j+1})
        self.path.clear();
        let mut s = 0.0;
        let mut tau = 0;
        for j in 0..m {
            s -= ifs.map(self.syms[j]).log_abs_deriv(self.xs[j + 1]);
            self.path.push(s);
            if tau == 0 && s >= k {
                tau = j + 1;
            }
        }
        assert!(tau > 0, "walk did not reach k within the horizon");
        let beta = if need_beta {
            let target = -k - self.eps * k / 8.0;
            let x0 = ifs.base_point();
            (1..=m).find(|&l| ifs.log_abs_deriv_word(&self.syms[..l], x0) < target).expect("β within horizon")
        } else {
            0
        };
        let n = ifs.len();
        let bin = self.syms[tau..tau + tail_len].iter().fold(0, |acc, &a| acc * n + a);
        Passage { tau, s_tau: self.path[tau - 1], beta, bin }
    }
}

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Invalid(format!("k must be positive, got {k}")));
    }
    Ok(())
}

/// One trajectory of the cocycle walk, drawn from substream (seed, 0).
pub fn walk_sample(nu: &SelfConformalMeasure, k: f64, tail_len: usize, seed: u64) -> Result<WalkSample> {
    check_k(k)?;
    let mut w = Walker::new(nu, DEFAULT_STRIP);
    let mut r = rng::substream(seed, 0);
    let p = w.run(k, tail_len, true, &mut r);
    let m = p.tau.max(p.beta) + tail_len;
    Ok(WalkSample {
        k,
        word: w.syms[..m].to_vec(),
        path: w.path[..p.tau.max(p.beta)].to_vec(),
        tau: p.tau,
        s_tau: p.s_tau,
        beta: p.beta,
        tail: w.syms[p.tau..p.tau + tail_len].to_vec(),
    })
}

/// What the linearization step needs from one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Push {
    pub s_tau: f64,
    pub tau: usize,
    pub beta: usize,
    /// ω_{τ+1} … ω_{β} (1-based), outermost first; empty when β ≤ τ.
    pub word: Vec<usize>,
}

/// Draw one trajectory and return the word of the map f_{ω|_{τ+1}^{β}}.
pub fn push_sample<R: Rng>(nu: &SelfConformalMeasure, k: f64, eps: f64, rng: &mut R) -> Push {
    let mut w = Walker::new(nu, eps);
    let p = w.run(k, 0, true, rng);
    let word = if p.beta > p.tau { w.syms[p.tau..p.beta].to_vec() } else { Vec::new() };
    Push { s_tau: p.s_tau, tau: p.tau, beta: p.beta, word }
}

/// Extremes over many trajectories, for invariant sweeps at scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkSweep {
    pub count: usize,
    pub overshoot_min: f64,
    pub overshoot_max: f64,
    pub increment_min: f64,
    pub increment_max: f64,
    /// Trajectories with β_k < τ_k.
    pub beta_violations: usize,
    /// Trajectories with a non-increasing step.
    pub monotone_violations: usize,
}

impl WalkSweep {
    fn empty() -> WalkSweep {
        WalkSweep {
            count: 0,
            overshoot_min: f64::INFINITY,
            overshoot_max: f64::NEG_INFINITY,
            increment_min: f64::INFINITY,
            increment_max: f64::NEG_INFINITY,
            beta_violations: 0,
            monotone_violations: 0,
        }
    }

    fn merge(self, o: WalkSweep) -> WalkSweep {
        WalkSweep {
            count: self.count + o.count,
            overshoot_min: self.overshoot_min.min(o.overshoot_min),
            overshoot_max: self.overshoot_max.max(o.overshoot_max),
            increment_min: self.increment_min.min(o.increment_min),
            increment_max: self.increment_max.max(o.increment_max),
            beta_violations: self.beta_violations + o.beta_violations,
            monotone_violations: self.monotone_violations + o.monotone_violations,
        }
    }
}

pub fn walk_sweep(nu: &SelfConformalMeasure, k: f64, count: usize, eps: f64, seed: u64) -> Result<WalkSweep> {
    check_k(k)?;
    let chunks = count.div_ceil(rng::CHUNK);
    let parts: Vec<WalkSweep> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::substream(seed, c as u64);
            let mut w = Walker::new(nu, eps);
            let mut acc = WalkSweep::empty();
            for _ in 0..rng::CHUNK.min(count - c * rng::CHUNK) {
                let p = w.run(k, 0, true, &mut r);
                acc.count += 1;
                let o = p.s_tau - k;
                acc.overshoot_min = acc.overshoot_min.min(o);
                acc.overshoot_max = acc.overshoot_max.max(o);
                acc.beta_violations += (p.beta < p.tau) as usize;
                let mut prev = 0.0;
                let mut mono = true;
                for &s in &w.path {
                    let inc = s - prev;
                    mono &= inc > 0.0;
                    acc.increment_min = acc.increment_min.min(inc);
                    acc.increment_max = acc.increment_max.max(inc);
                    prev = s;
                }
                acc.monotone_violations += (!mono) as usize;
            }
            acc
        })
        .collect();
    Ok(parts.into_iter().fold(WalkSweep::empty(), WalkSweep::merge))
}

/// Samples of the stationary increment law κ: Y = c(a, x), a ~ p, x ~ ν.
pub fn increment_samples(nu: &SelfConformalMeasure, count: usize, seed: u64) -> Vec<f64> {
    let depth = coding_depth(nu.ifs().rho());
    let chunks = count.div_ceil(rng::CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng::substream(seed, c as u64);
            let len = rng::CHUNK.min(count - c * rng::CHUNK);
            (0..len)
                .map(|_| {
                    let x = nu.sample_one(depth, &mut r);
                    -nu.ifs().map(nu.symbol(&mut r)).log_abs_deriv(x)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Span d if the samples sit on a + dℤ (within 1e-9), else None.
pub fn lattice_span(samples: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs().max(1.0));
    if v.len() > 64 {
        return None;
    }
    if v.len() == 1 {
        return Some(v[0]);
    }
    // every gap must be a small-denominator rational multiple of the first
    let base = v[1] - v[0];
    let mut den = 1u64;
    for &x in &v[2..] {
        let r = (x - v[0]) / base;
        let q = (1..=1000u64).find(|&q| {
            let p = (r * q as f64).round();
            (r * q as f64 - p).abs() <= 1e-8 * q as f64
        })?;
        den = lcm(den, q);
    }
    Some(base / den as f64)
}

fn lcm(a: u64, b: u64) -> u64 {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

// ------------------------------------------------------------------ renewal operator

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenewalMethod {
    Enumeration,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenewalValue {
    pub value: f64,
    /// 0 for exact enumeration.
    pub stderr: f64,
    pub method: RenewalMethod,
    /// Generations after which every term vanishes.
    pub n_max: usize,
    /// Enumerated nodes or sampled trajectories.
    pub work: u128,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenewalOptions {
    /// Leaf cap for enumeration; above it `mc_samples` trajectories are used,
    /// or CostCapExceeded is returned when `mc_samples` is 0.
    pub cap: u128,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for RenewalOptions {
    fn default() -> Self {
        RenewalOptions { cap: crate::measure::DEFAULT_LEAF_CAP, mc_samples: 0, seed: 0 }
    }
}

/// Rf(z, t) = Σ_n Σ_{|η|=n} p_η f(f_η z, c(η, z) − t) for f supported in
/// x ∈ [x_lo, x_hi]. Since c(η, z) ≥ nD, no term past
/// n_max = ⌈(t + x_hi)/D⌉ survives and branches are cut there exactly.
pub fn renewal_apply(
    nu: &SelfConformalMeasure,
    f: &(dyn Fn(f64, f64) -> f64 + Sync),
    support: (f64, f64),
    z: f64,
    t: f64,
    opts: RenewalOptions,
) -> Result<RenewalValue> {
    let ifs = nu.ifs();
    let d = ifs.constants().d_min;
    let reach = t + support.1;
    if reach < 0.0 {
        return Ok(RenewalValue { value: 0.0, stderr: 0.0, method: RenewalMethod::Enumeration, n_max: 0, work: 0 });
    }
    let n_max = (reach / d).ceil() as usize + 2;
    let leaves = (ifs.len() as u128).checked_pow(n_max as u32).unwrap_or(u128::MAX);
    if leaves <= opts.cap {
        let mut work = 0u128;
        let value = enumerate(nu, f, support, z, 0.0, 1.0, t, &mut work);
        return Ok(RenewalValue { value, stderr: 0.0, method: RenewalMethod::Enumeration, n_max, work });
    }
    if opts.mc_samples == 0 {
        return Err(Error::CostCapExceeded { needed: leaves, cap: opts.cap, hint: "set mc_samples for Monte Carlo mode" });
    }
    // each trajectory x_{j+1} = f_{a_j}(x_j) carries the word a_j … a_1 of law p^n
    let chunks = opts.mc_samples.div_ceil(rng::CHUNK);
    let m = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::substream(opts.seed, c as u64);
            let mut m = Moments::default();
            for _ in 0..rng::CHUNK.min(opts.mc_samples - c * rng::CHUNK) {
                let (mut x, mut cz, mut acc) = (z, 0.0, 0.0);
                loop {
                    let u = cz - t;
                    if u > support.1 {
                        break;
                    }
                    if u >= support.0 {
                        acc += f(x, u);
                    }
                    let a = nu.symbol(&mut r);
                    cz -= ifs.map(a).log_abs_deriv(x);
                    x = ifs.map(a).eval(x);
                }
                m.push(acc);
            }
            m
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Moments::default(), Moments::merge);
    Ok(RenewalValue {
        value: m.mean(),
        stderr: m.stderr(),
        method: RenewalMethod::MonteCarlo,
        n_max,
        work: opts.mc_samples as u128,
    })
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    nu: &SelfConformalMeasure,
    f: &(dyn Fn(f64, f64) -> f64 + Sync),
    support: (f64, f64),
    x: f64,
    cz: f64,
    w: f64,
    t: f64,
    work: &mut u128,
) -> f64 {
    *work += 1;
    let u = cz - t;
    if u > support.1 {
        return 0.0;
    }
    let mut acc = if u >= support.0 { w * f(x, u) } else { 0.0 };
    for (a, m) in nu.ifs().maps().iter().enumerate() {
        acc += enumerate(nu, f, support, m.eval(x), cz - m.log_abs_deriv(x), w * nu.p()[a], t, work);
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenewalLimit {
    pub value: f64,
    pub stderr: f64,
    pub chi: f64,
}

/// Ratio of Monte Carlo means with a delta-method standard error.
fn ratio(num: &Moments, den: &Moments, cov: f64) -> (f64, f64) {
    let (a, b) = (num.mean(), den.mean());
    let n = num.n as f64;
    let var = num.variance() / (b * b) + a * a * den.variance() / b.powi(4) - 2.0 * a * cov / b.powi(3);
    (a / b, (var.max(0.0) / n).sqrt())
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub(crate) fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let k = k as f64;
                    (p0, p1) = (p1, ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k);
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

const QUAD_NODES: usize = 48;

/// ∫_lo^hi g as (hi − lo)·(weighted mean), exact for constants.
fn integrate(g: &dyn Fn(f64) -> f64, lo: f64, hi: f64, gl: &[(f64, f64)]) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let (s, w): (f64, f64) = gl.iter().fold((0.0, 0.0), |(s, w), &(x, wi)| (s + wi * g(c + h * x), w + wi));
    (hi - lo) * (s / w)
}

/// (1/χ) ∫∫_{−t}^∞ f(y, u) du dν(y), with χ and the outer integral sharing
/// one sample of (a, y).
pub fn renewal_limit(
    nu: &SelfConformalMeasure,
    f: &(dyn Fn(f64, f64) -> f64 + Sync),
    support: (f64, f64),
    t: f64,
    n_mc: usize,
    seed: u64,
) -> RenewalLimit {
    let gl = gauss_legendre(QUAD_NODES);
    let depth = coding_depth(nu.ifs().rho());
    let lo = support.0.max(-t);
    let chunks = n_mc.div_ceil(rng::CHUNK);
    let parts: Vec<(Moments, Moments, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::substream(seed, c as u64);
            let (mut num, mut den, mut cross) = (Moments::default(), Moments::default(), 0.0);
            for _ in 0..rng::CHUNK.min(n_mc - c * rng::CHUNK) {
                let y = nu.sample_one(depth, &mut r);
                let inc = -nu.ifs().map(nu.symbol(&mut r)).log_abs_deriv(y);
                let v = integrate(&|u| f(y, u), lo, support.1, &gl);
                cross += v * inc;
                num.push(v);
                den.push(inc);
            }
            (num, den, cross)
        })
        .collect();
    let (num, den, cross) = parts.into_iter().fold((Moments::default(), Moments::default(), 0.0), |a, b| {
        (a.0.merge(b.0), a.1.merge(b.1), a.2 + b.2)
    });
    let n = num.n as f64;
    let cov = if n > 1.0 { (cross - n * num.mean() * den.mean()) / (n - 1.0) } else { 0.0 };
    let (value, stderr) = ratio(&num, &den, cov);
    RenewalLimit { value, stderr, chi: den.mean() }
}

// ------------------------------------------------------------------ mollifier

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub delta: f64,
    /// 1 / ∫ exp(−1/(1−x²)) dx
    pub c0: f64,
}

fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

impl Mollifier {
    pub fn new(delta: f64) -> Result<Mollifier> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Invalid(format!("mollifier needs 0 < δ < 1, got {delta}")));
        }
        // the integrand is flat to all orders at ±1, so the trapezoid rule converges fast
        let n = 4000;
        let h = 2.0 / n as f64;
        let mass: f64 = (1..n).map(|i| bump(-1.0 + i as f64 * h)).sum::<f64>() * h;
        Ok(Mollifier { delta, c0: 1.0 / mass })
    }

    /// Half-width δ² of the support.
    pub fn radius(&self) -> f64 {
        self.delta * self.delta
    }

    /// ψ_δ(x) = ψ(x/δ²)/δ²
    pub fn eval(&self, x: f64) -> f64 {
        let r = self.radius();
        self.c0 * bump(x / r) / r
    }
}

/// Samples on x0 + i·h.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    pub x0: f64,
    pub h: f64,
    pub values: Vec<f64>,
}

impl GridFn {
    pub fn sample(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> GridFn {
        let h = (hi - lo) / (n - 1) as f64;
        GridFn { x0: lo, h, values: (0..n).map(|i| f(lo + i as f64 * h)).collect() }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    /// Riemann sum h·Σ values.
    pub fn integral(&self) -> f64 {
        self.h * self.values.iter().sum::<f64>()
    }
}

/// ψ_δ * f by discrete convolution. The kernel weights are normalized to unit
/// mass on the grid and the output grid is widened by the kernel radius, so
/// the Riemann integral is preserved up to rounding.
pub fn mollify(f: &GridFn, delta: f64) -> Result<GridFn> {
    let psi = Mollifier::new(delta)?;
    let half = (psi.radius() / f.h).floor() as usize;
    let mut kern: Vec<f64> = (0..=2 * half).map(|j| psi.eval((j as f64 - half as f64) * f.h)).collect();
    let mass: f64 = kern.iter().sum();
    if mass > 0.0 {
        kern.iter_mut().for_each(|k| *k /= mass);
    } else {
        kern = vec![0.0; 2 * half + 1];
        kern[half] = 1.0;
    }
    let n = f.values.len();
    let out_len = n + 2 * half;
    let values = (0..out_len)
        .into_par_iter()
        .map(|i| {
            // output i sits at input index i − half
            let mut s = 0.0;
            for (j, &k) in kern.iter().enumerate() {
                // input index (i − half) − (j − half) = i − j
                if i >= j && i - j < n {
                    s += k * f.values[i - j];
                }
            }
            s
        })
        .collect();
    Ok(GridFn { x0: f.x0 - half as f64 * f.h, h: f.h, values })
}

// ------------------------------------------------------------------ residues

#[derive(Debug, Clone, PartialEq)]
pub struct ResidueBin {
    /// First symbols of σ^{τ_k} ω.
    pub prefix: Vec<usize>,
    pub count: u64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidueTable {
    pub k: f64,
    pub bins: Vec<ResidueBin>,
    pub overall: f64,
    pub overall_stderr: f64,
    /// Mean number of crossings n with S_n < k ≤ S_{n+1}, i.e. E_C(1).
    pub crossings: f64,
    /// Span of the increment law when it is a lattice.
    pub lattice: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidueOptions {
    pub tail_len: usize,
    pub n_mc: usize,
    pub seed: u64,
}

/// Increment samples used for lattice detection.
const LATTICE_PROBE: usize = 4096;

/// E(g(S_{τ_k} − k) | first symbols of σ^{τ_k} ω), binned over trajectories.
pub fn residue_cutoff(
    nu: &SelfConformalMeasure,
    g: &(dyn Fn(f64) -> f64 + Sync),
    k: f64,
    opts: ResidueOptions,
) -> Result<ResidueTable> {
    let dp = nu.ifs().constants().d_max;
    if !(k > dp + 1.0) {
        return Err(Error::Invalid(format!("residues need k > D' + 1 = {}", dp + 1.0)));
    }
    let n = nu.ifs().len();
    let n_bins = n.checked_pow(opts.tail_len as u32).filter(|&b| b <= 1 << 20).ok_or_else(|| {
        Error::CostCapExceeded { needed: u128::MAX, cap: 1 << 20, hint: "use a shorter tail prefix" }
    })?;
    let lattice = lattice_span(&increment_samples(nu, LATTICE_PROBE, rng::derive(opts.seed, 0x1a77)));
    let chunks = opts.n_mc.div_ceil(rng::CHUNK);
    let parts: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::substream(opts.seed, c as u64);
            let mut w = Walker::new(nu, DEFAULT_STRIP);
            let mut bins = vec![Moments::default(); n_bins];
            for _ in 0..rng::CHUNK.min(opts.n_mc - c * rng::CHUNK) {
                let p = w.run(k, opts.tail_len, false, &mut r);
                bins[p.bin].push(g(p.s_tau - k));
            }
            bins
        })
        .collect();
    let bins = parts.into_iter().fold(vec![Moments::default(); n_bins], |acc, b| {
        acc.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()
    });
    let overall = bins.iter().cloned().fold(Moments::default(), Moments::merge);
    let bins = bins
        .into_iter()
        .enumerate()
        .map(|(i, m)| ResidueBin {
            prefix: nu.ifs().index_word(i, opts.tail_len),
            count: m.n,
            mean: m.mean(),
            stderr: m.stderr(),
        })
        .collect();
    Ok(ResidueTable {
        k,
        bins,
        overall: overall.mean(),
        overall_stderr: overall.stderr(),
        // first passage happens exactly once on every trajectory
        crossings: if overall.n > 0 { 1.0 } else { 0.0 },
        lattice,
    })
}

/// The equidistribution limit (1/χ) E_κ[∫_0^Y g].
pub fn residue_limit(nu: &SelfConformalMeasure, g: &(dyn Fn(f64) -> f64 + Sync), n_mc: usize, seed: u64) -> RenewalLimit {
    let gl = gauss_legendre(QUAD_NODES);
    let ys = increment_samples(nu, n_mc, seed);
    let chunks: Vec<(Moments, Moments, f64)> = ys
        .par_chunks(rng::CHUNK)
        .map(|ch| {
            let (mut num, mut den, mut cross) = (Moments::default(), Moments::default(), 0.0);
            for &y in ch {
                let v = integrate(g, 0.0, y, &gl);
                cross += v * y;
                num.push(v);
                den.push(y);
            }
            (num, den, cross)
        })
        .collect();
    let (num, den, cross) = chunks.into_iter().fold((Moments::default(), Moments::default(), 0.0), |a, b| {
        (a.0.merge(b.0), a.1.merge(b.1), a.2 + b.2)
    });
    let n = num.n as f64;
    let cov = if n > 1.0 { (cross - n * num.mean() * den.mean()) / (n - 1.0) } else { 0.0 };
    let (value, stderr) = ratio(&num, &den, cov);
    RenewalLimit { value, stderr, chi: den.mean() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquiRow {
    pub k: f64,
    /// Count-weighted mean over bins of |bin mean − limit|.
    pub error: f64,
    /// Expected size of `error` from sampling noise alone.
    pub noise_floor: f64,
    pub table: ResidueTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquiReport {
    pub limit: RenewalLimit,
    pub rows: Vec<EquiRow>,
    /// r̂ and its standard error in e(k) ~ e^{−r̂k}, fitted on rows above the
    /// noise floor.
    pub rate: Option<(f64, f64)>,
    /// Errors strictly decrease across the rows above the noise floor.
    pub decreasing: bool,
}

/// Rows whose error exceeds this multiple of the noise floor enter the fit.
pub const FLOOR_FACTOR: f64 = 2.0;

pub fn equidistribution_test(
    nu: &SelfConformalMeasure,
    g: &(dyn Fn(f64) -> f64 + Sync),
    k_list: &[f64],
    opts: ResidueOptions,
) -> Result<EquiReport> {
    let probe = increment_samples(nu, LATTICE_PROBE, rng::derive(opts.seed, 0x1a77));
    if let Some(span) = lattice_span(&probe) {
        return Err(Error::LatticeDetected(span));
    }
    let limit = residue_limit(nu, g, opts.n_mc, rng::derive(opts.seed, 0x11));
    let mut rows = Vec::with_capacity(k_list.len());
    for (i, &k) in k_list.iter().enumerate() {
        let table = residue_cutoff(nu, g, k, ResidueOptions { seed: rng::derive(opts.seed, 0x100 + i as u64), ..opts })?;
        let total: f64 = table.bins.iter().map(|b| b.count as f64).sum();
        let (mut error, mut floor) = (0.0, 0.0);
        for b in table.bins.iter().filter(|b| b.count > 0) {
            let w = b.count as f64 / total;
            error += w * (b.mean - limit.value).abs();
            floor += w * (b.stderr * b.stderr + limit.stderr * limit.stderr).sqrt();
        }
        // E|N(0, σ)| = σ√(2/π)
        let noise_floor = floor * (2.0 / std::f64::consts::PI).sqrt();
        rows.push(EquiRow { k, error, noise_floor, table });
    }
    let above: Vec<&EquiRow> = rows.iter().filter(|r| r.error > FLOOR_FACTOR * r.noise_floor).collect();
    let decreasing = above.len() >= 2 && above.windows(2).all(|w| w[1].error < w[0].error);
    let rate = if above.len() >= 2 {
        let xs: Vec<f64> = above.iter().map(|r| r.k).collect();
        let ys: Vec<f64> = above.iter().map(|r| r.error.ln()).collect();
        fit_line(&xs, &ys).map(|f| (-f.slope, f.slope_stderr))
    } else {
        None
    };
    Ok(EquiReport { limit, rows, rate, decreasing })
}
