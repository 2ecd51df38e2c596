//! The decay argument at desk scale: parameter schedule, the linearization
//! inequality, the oscillatory-integral bound and a consolidated report.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure::{cylinder_sums_adaptive, decay_exponent, sample_points, sup_ball_mass, DecayFit, SelfConformalMeasure};
use crate::renewal::{self, gauss_legendre, increment_samples, lattice_span, push_sample, Push};
use crate::rng;
use crate::stats::{fit_line, Moments};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry {
    pub q: f64,
    /// Solves |q| = e^{k + kε/7}.
    pub k: f64,
    /// e^{−kε/100}
    pub r: f64,
    pub beta: f64,
    /// |q| e^{−(k + kε/8) − βkε/8}
    pub linearization: f64,
    /// e^{−εk/2} (|q| e^{−k})³
    pub equidistribution: f64,
    /// 1 / (r |q| e^{−(k + εk/8)}), without the ball-mass term.
    pub oscillatory: f64,
}

/// Predicted decay rates in k of the three error terms along the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub linearization: f64,
    pub equidistribution: f64,
    pub oscillatory: f64,
}

pub fn predicted_rates(eps: f64) -> Rates {
    Rates {
        linearization: eps * (1.0 / 8.0 + 1.0 / 16.0 - 1.0 / 7.0),
        equidistribution: eps * (1.0 / 2.0 - 3.0 / 7.0),
        oscillatory: eps * (1.0 / 7.0 - 1.0 / 8.0 - 1.0 / 100.0),
    }
}

pub fn schedule_k(q: f64, eps: f64) -> f64 {
    q.abs().ln() / (1.0 + eps / 7.0)
}

pub fn schedule(q_list: &[f64], eps: f64) -> Result<Vec<ScheduleEntry>> {
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("ε must be positive, got {eps}")));
    }
    Ok(q_list
        .iter()
        .map(|&q| {
            let k = schedule_k(q, eps);
            let beta = 0.5;
            let r = (-k * eps / 100.0).exp();
            let aq = q.abs();
            ScheduleEntry {
                q,
                k,
                r,
                beta,
                linearization: aq * (-(k + k * eps / 8.0) - beta * k * eps / 8.0).exp(),
                equidistribution: (-eps * k / 2.0).exp() * (aq * (-k).exp()).powi(3),
                oscillatory: 1.0 / (r * aq * (-(k + eps * k / 8.0)).exp()),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub n_mc: usize,
    pub seed: u64,
    pub eps: f64,
    /// Accuracy of each inner Fourier transform.
    pub tol: f64,
    pub cap: u128,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { n_mc: 2000, seed: 0, eps: crate::transfer_op::DEFAULT_STRIP, tol: 1e-4, cap: 1 << 26 }
    }
}

/// The pushed map g = f_{ω|_{τ+1}^{β}} with a bound on |g'| over the hull.
struct PushedMap<'a> {
    nu: &'a SelfConformalMeasure,
    push: Push,
    lip: f64,
}

impl<'a> PushedMap<'a> {
    fn new(nu: &'a SelfConformalMeasure, push: Push) -> PushedMap<'a> {
        let lip = push.word.iter().map(|&a| nu.ifs().map(a).sup_deriv()).product();
        PushedMap { nu, push, lip }
    }

    fn eval(&self, x: f64) -> f64 {
        self.nu.ifs().apply_word(&self.push.word, x)
    }

    fn abs_deriv(&self, x: f64) -> f64 {
        self.nu.ifs().log_abs_deriv_word(&self.push.word, x).exp()
    }
}

fn check_orientation(nu: &SelfConformalMeasure) -> Result<()> {
    if nu.ifs().is_reversing() {
        return Err(Error::OrientationReversing);
    }
    Ok(())
}

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0) {
        return Err(Error::Invalid(format!("k must be positive, got {k}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizationGap {
    pub q: f64,
    pub k: f64,
    /// |F_q(ν)|²
    pub lhs: f64,
    /// Mean of |F_q(M_{e^{−S_τ}} ∘ f_{ω|_{τ+1}^{β}} ν)|² over trajectories.
    pub rhs_main: f64,
    pub rhs_stderr: f64,
    /// |q| e^{−(k + kε/8) − βkε/8}
    pub error_term: f64,
    /// rhs_main + error_term − lhs
    pub slack: f64,
    /// Sampling error plus the deterministic Fourier tolerance.
    pub slack_stderr: f64,
    /// Extremes of |g'(x)| e^{εk/8} over trajectories and test points.
    pub push_min: f64,
    pub push_max: f64,
    /// max(push_max, 1/push_min)
    pub c_prime: f64,
}

impl LinearizationGap {
    pub fn holds(&self, sigmas: f64) -> bool {
        self.slack >= -sigmas * self.slack_stderr
    }
}

pub fn linearization_gap(nu: &SelfConformalMeasure, q: f64, k: f64, opts: PipelineOptions) -> Result<LinearizationGap> {
    check_orientation(nu)?;
    check_k(k)?;
    let beta = 0.5;
    let tol = opts.tol;
    let (lhs_v, _) = cylinder_sums_adaptive(nu, &|x| x, 1.0, &[q], tol, opts.cap)?;
    let lhs = lhs_v[0].norm_sqr();
    let (h0, h1) = nu.ifs().hull();
    let probes = [h0, nu.ifs().base_point(), h1];
    let scale = (opts.eps * k / 8.0).exp();
    let chunks = opts.n_mc.div_ceil(rng::CHUNK);
    let parts: Vec<Result<(Moments, f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::substream(opts.seed, c as u64);
            let (mut m, mut lo, mut hi) = (Moments::default(), f64::INFINITY, 0.0f64);
            for _ in 0..rng::CHUNK.min(opts.n_mc - c * rng::CHUNK) {
                let g = PushedMap::new(nu, push_sample(nu, k, opts.eps, &mut r));
                let t = (-g.push.s_tau).exp();
                let (v, _) = cylinder_sums_adaptive(nu, &|x| t * g.eval(x), t * g.lip, &[q], tol, opts.cap)?;
                m.push(v[0].norm_sqr());
                for &x in &probes {
                    let d = g.abs_deriv(x) * scale;
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
            }
            Ok((m, lo, hi))
        })
        .collect();
    let (mut m, mut lo, mut hi) = (Moments::default(), f64::INFINITY, 0.0f64);
    for p in parts {
        let (pm, plo, phi) = p?;
        m = m.merge(pm);
        lo = lo.min(plo);
        hi = hi.max(phi);
    }
    let error_term = q.abs() * (-(k + k * opts.eps / 8.0) - beta * k * opts.eps / 8.0).exp();
    let rhs_main = m.mean();
    // |a|² moves by at most 2·tol + tol² when a moves by tol
    let fourier_err = 2.0 * (2.0 * tol + tol * tol);
    Ok(LinearizationGap {
        q,
        k,
        lhs,
        rhs_main,
        rhs_stderr: m.stderr(),
        error_term,
        slack: rhs_main + error_term - lhs,
        slack_stderr: m.stderr() + fourier_err,
        push_min: lo,
        push_max: hi,
        c_prime: hi.max(1.0 / lo),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatoryBound {
    pub q: f64,
    pub k: f64,
    pub r: f64,
    /// Mean over trajectories of ∫_0^{D'} |F_q(M_{e^{−t−k}} ∘ g ν)|² dt.
    pub integral: f64,
    pub stderr: f64,
    /// sup_y ν(B_r(y)), empirical.
    pub sup_mass: f64,
    /// 1 / (r |q| e^{−(k + εk/8)})
    pub first_term: f64,
    pub bound: f64,
}

impl OscillatoryBound {
    pub fn ratio(&self) -> f64 {
        self.integral / self.bound
    }
}

const T_NODES: usize = 24;
const MASS_SAMPLES: usize = 100_000;

pub fn oscillatory_bound(nu: &SelfConformalMeasure, q: f64, k: f64, r: f64, opts: PipelineOptions) -> Result<OscillatoryBound> {
    check_k(k)?;
    if !(r > 0.0) {
        return Err(Error::Invalid(format!("r must be positive, got {r}")));
    }
    let dp = nu.ifs().constants().d_max;
    let nodes: Vec<(f64, f64)> =
        gauss_legendre(T_NODES).into_iter().map(|(x, w)| (0.5 * dp * (x + 1.0), 0.5 * dp * w)).collect();
    let qs: Vec<f64> = nodes.iter().map(|&(t, _)| q * (-t - k).exp()).collect();
    let chunks = opts.n_mc.div_ceil(rng::CHUNK);
    let parts: Vec<Result<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rg = rng::substream(opts.seed, c as u64);
            let mut m = Moments::default();
            for _ in 0..rng::CHUNK.min(opts.n_mc - c * rng::CHUNK) {
                let g = PushedMap::new(nu, push_sample(nu, k, opts.eps, &mut rg));
                let (v, _) = cylinder_sums_adaptive(nu, &|x| g.eval(x), g.lip, &qs, opts.tol, opts.cap)?;
                let integral: f64 = v.iter().zip(&nodes).map(|(z, &(_, w))| w * z.norm_sqr()).sum();
                m.push(integral);
            }
            Ok(m)
        })
        .collect();
    let mut m = Moments::default();
    for p in parts {
        m = m.merge(p?);
    }
    let depth = renewal::coding_depth(nu.ifs().rho());
    let mut pts = sample_points(nu, MASS_SAMPLES, depth, rng::derive(opts.seed, 0xba11));
    pts.sort_by(f64::total_cmp);
    let sup_mass = sup_ball_mass(&pts, r);
    let first_term = 1.0 / (r * q.abs() * (-(k + opts.eps * k / 8.0)).exp());
    Ok(OscillatoryBound {
        q,
        k,
        r,
        integral: m.mean(),
        stderr: m.stderr(),
        sup_mass,
        first_term,
        bound: first_term + sup_mass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub term: &'static str,
    pub predicted_rate: f64,
    /// Fitted decay rate in k of the measured counterpart, when there is one.
    pub measured_rate: Option<f64>,
    /// measured ≥ predicted / 2
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPoint {
    pub entry: ScheduleEntry,
    pub linearization: LinearizationGap,
    pub oscillatory: OscillatoryBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub q_range: (f64, f64),
    pub eps: f64,
    /// The measure actually used (depth-2 induced when the IFS reverses orientation).
    pub induced_depth: usize,
    /// Span of the increment law when it is a lattice.
    pub lattice: Option<f64>,
    /// Block ratio of the decay fit: e^{span} for lattices, 2 otherwise.
    pub block_ratio: f64,
    pub fit: Option<DecayFit>,
    /// α̂: integer-frequency exponent for lattices, full-block exponent otherwise.
    pub alpha: f64,
    /// (ε, α̂·(1 + ε/7)): the exponent per unit k under each schedule.
    pub alpha_per_k: Vec<(f64, f64)>,
    pub points: Vec<ReportPoint>,
    /// Share of scheduled points with slack ≥ −4σ.
    pub linearization_ok: f64,
    pub predictions: Vec<PredictionRow>,
}

impl DecayReport {
    fn empty(q_range: (f64, f64), eps: f64) -> DecayReport {
        DecayReport {
            q_range,
            eps,
            induced_depth: 1,
            lattice: None,
            block_ratio: f64::NAN,
            fit: None,
            alpha: f64::NAN,
            alpha_per_k: Vec::new(),
            points: Vec::new(),
            linearization_ok: f64::NAN,
            predictions: Vec::new(),
        }
    }
}

pub const SENSITIVITY_EPS: [f64; 3] = [0.02, 0.05, 0.1];
const MAX_BLOCKS: usize = 12;

/// Decay fit, schedule and the per-point diagnostics on `n_points` log-spaced
/// frequencies. An empty range gives an empty report.
pub fn decay_report(nu: &SelfConformalMeasure, q_range: (f64, f64), n_points: usize, opts: PipelineOptions) -> Result<DecayReport> {
    let (lo, hi) = q_range;
    if !(hi > lo) {
        return Ok(DecayReport::empty(q_range, opts.eps));
    }
    if !(lo >= 1.0) {
        return Err(Error::Invalid(format!("q range must start at 1 or above, got {lo}")));
    }
    let (work, induced_depth) =
        if nu.ifs().is_reversing() { (nu.induced(2, crate::ifs::DEFAULT_INDUCE_CAP)?, 2) } else { (nu.clone(), 1) };
    let lattice = lattice_span(&increment_samples(&work, 4096, rng::derive(opts.seed, 0x1a77)));

    // blocks aligned to the lattice make the recurring peaks visible
    let base = lattice.map(f64::exp).filter(|b| *b > 1.5 && *b < 1e3).unwrap_or(2.0);
    let q0 = if lattice.is_some() { base.powf((lo.ln() / base.ln() - 1e-9).ceil()).round() } else { lo };
    let blocks = (((hi / q0).ln() / base.ln() + 1e-9).floor() as usize).min(MAX_BLOCKS);
    let fit = if blocks >= 4 {
        let q1 = if lattice.is_some() { (q0 * base.powi(blocks as i32)).round() } else { hi };
        Some(decay_exponent(&work, q0, q1, blocks, opts.cap)?)
    } else {
        None
    };
    let alpha = fit.as_ref().map(|f| if lattice.is_some() { f.alpha_integer } else { f.alpha }).unwrap_or(f64::NAN);
    let alpha_per_k = SENSITIVITY_EPS.iter().map(|&e| (e, alpha * (1.0 + e / 7.0))).collect();

    let qs: Vec<f64> = if n_points == 1 {
        vec![lo]
    } else {
        (0..n_points).map(|i| lo * (hi / lo).powf(i as f64 / (n_points - 1) as f64)).collect()
    };
    let entries = schedule(&qs, opts.eps)?;
    let mut points = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let sub = PipelineOptions { seed: rng::derive(opts.seed, 0x200 + i as u64), ..opts };
        let linearization = linearization_gap(&work, e.q, e.k, sub)?;
        let oscillatory = oscillatory_bound(&work, e.q, e.k, e.r, sub)?;
        points.push(ReportPoint { entry: *e, linearization, oscillatory });
    }
    let linearization_ok = if points.is_empty() {
        f64::NAN
    } else {
        points.iter().filter(|p| p.linearization.holds(4.0)).count() as f64 / points.len() as f64
    };

    let rates = predicted_rates(opts.eps);
    let decay_rate = |pairs: Vec<(f64, f64)>| -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().filter(|p| p.1 > 0.0).map(|(k, v)| (k, v.ln())).unzip();
        (xs.len() >= 3).then(|| fit_line(&xs, &ys)).flatten().map(|f| -f.slope)
    };
    let row = |term, predicted: f64, measured: Option<f64>| PredictionRow {
        term,
        predicted_rate: predicted,
        measured_rate: measured,
        pass: measured.map(|m| m >= predicted / 2.0),
    };
    // the linearization error is what the pushed average fails to dominate
    let excess = decay_rate(points.iter().map(|p| (p.entry.k, p.linearization.lhs - p.linearization.rhs_main)).collect());
    let predictions = vec![
        row("linearization", rates.linearization, excess),
        row("equidistribution", rates.equidistribution, None),
        row("oscillatory", rates.oscillatory, decay_rate(points.iter().map(|p| (p.entry.k, p.oscillatory.integral)).collect())),
    ];
    Ok(DecayReport {
        q_range,
        eps: opts.eps,
        induced_depth,
        lattice,
        block_ratio: base,
        fit,
        alpha,
        alpha_per_k,
        points,
        linearization_ok,
        predictions,
    })
}
