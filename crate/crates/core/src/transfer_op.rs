//! The complex transfer operator
//!   P_s g(x) = Σ_a p_a · exp(2π s · c(a,x)) · g(f_a x),  c(a,x) = −log|f_a'(x)|,
//! discretized by collocation on Chebyshev–Lobatto nodes.
//!
//! The grid covers J = conv ∪ f_a([0,1]). Every f_a maps [0,1] into J, so
//! iterates only ever need values on J, and J is far shorter than [0,1] for
//! strongly contracting systems (oscillations at large |b| stay resolved).
//! Norms on [0,1] are taken on the lift x ↦ Σ_a … h(f_a x), evaluated
//! exactly from the grid values of the previous iterate.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ifs::ConformalMap;
use crate::measure::SelfConformalMeasure;
use crate::stats::fit_line;

/// Default strip half-width ε for Re s.
pub const DEFAULT_STRIP: f64 = 0.05;
/// Uniform points on [0,1] where lifted norms are evaluated.
pub const NORM_POINTS: usize = 1025;
pub const OVERFLOW_NORM: f64 = 1e12;

fn c0() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Chebyshev–Lobatto nodes on [lo, hi] with barycentric weights and the
/// spectral differentiation matrix.
#[derive(Debug, Clone)]
pub struct ChebGrid {
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Row-major M×M.
    diff: Vec<f64>,
}

impl ChebGrid {
    pub fn new(lo: f64, hi: f64, m: usize) -> ChebGrid {
        assert!(m >= 2 && hi > lo);
        let nodes: Vec<f64> = (0..m)
            .map(|j| {
                let t = (j as f64 * PI / (m - 1) as f64).cos();
                lo + (hi - lo) * (1.0 - t) / 2.0
            })
            .collect();
        let weights: Vec<f64> = (0..m)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == m - 1 {
                    s / 2.0
                } else {
                    s
                }
            })
            .collect();
        let mut diff = vec![0.0; m * m];
        for i in 0..m {
            let mut row_sum = 0.0;
            for j in 0..m {
                if i != j {
                    let v = weights[j] / weights[i] / (nodes[i] - nodes[j]);
                    diff[i * m + j] = v;
                    row_sum += v;
                }
            }
            diff[i * m + i] = -row_sum;
        }
        ChebGrid { lo, hi, nodes, weights, diff }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Barycentric interpolation weights ℓ_j(y); Σ ℓ_j = 1.
    pub fn interp_row(&self, y: f64) -> Vec<f64> {
        let m = self.len();
        let mut row = vec![0.0; m];
        for j in 0..m {
            if y == self.nodes[j] {
                row[j] = 1.0;
                return row;
            }
        }
        let mut den = 0.0;
        for j in 0..m {
            let t = self.weights[j] / (y - self.nodes[j]);
            row[j] = t;
            den += t;
        }
        for v in &mut row {
            *v /= den;
        }
        row
    }

    pub fn interpolate(&self, values: &[Complex64], y: f64) -> Complex64 {
        let row = self.interp_row(y);
        row.iter().zip(values).map(|(l, v)| v * l).sum()
    }

    pub fn derivative(&self, values: &[Complex64]) -> Vec<Complex64> {
        let m = self.len();
        (0..m)
            .map(|i| (0..m).map(|j| values[j] * self.diff[i * m + j]).sum())
            .collect()
    }

    pub fn sample(&self, g: impl Fn(f64) -> Complex64) -> Vec<Complex64> {
        self.nodes.iter().map(|&x| g(x)).collect()
    }
}

/// One weighted branch of a transfer operator: weight · e^{2πs c(f,x)} · g(f x).
#[derive(Debug, Clone)]
pub struct Branch {
    pub weight: f64,
    pub map: ConformalMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Global,
    Local,
}

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub s: Complex64,
    pub grid: ChebGrid,
    /// Row-major M×M.
    matrix: Vec<Complex64>,
    branches: Vec<Branch>,
    pub provenance: Provenance,
}

/// The interval J = conv ∪ f_a([0,1]) for a set of maps.
pub fn image_hull(maps: &[&ConformalMap]) -> (f64, f64) {
    maps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
        let (a, b) = m.image();
        (lo.min(a), hi.max(b))
    })
}

#[inline]
fn twist(s: Complex64, cocycle: f64) -> Complex64 {
    (s * (2.0 * PI * cocycle)).exp()
}

impl DiscreteOperator {
    /// Assemble from explicit branches on a given grid. All branch images must
    /// lie in the grid interval.
    pub fn from_branches(s: Complex64, grid: ChebGrid, branches: Vec<Branch>, provenance: Provenance) -> DiscreteOperator {
        let m = grid.len();
        let rows: Vec<Vec<Complex64>> = grid
            .nodes
            .par_iter()
            .map(|&x| {
                let mut row = vec![c0(); m];
                for br in &branches {
                    let c = -br.map.log_abs_deriv(x);
                    let w = twist(s, c) * br.weight;
                    let l = grid.interp_row(br.map.eval(x));
                    for (r, v) in row.iter_mut().zip(&l) {
                        *r += w * v;
                    }
                }
                row
            })
            .collect();
        DiscreteOperator { s, grid, matrix: rows.concat(), branches, provenance }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn matrix_entry(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[i * self.len() + j]
    }

    fn matvec(&self, g: &[Complex64]) -> Vec<Complex64> {
        let m = self.len();
        (0..m)
            .map(|i| {
                let row = &self.matrix[i * m..(i + 1) * m];
                row.iter().zip(g).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Value and derivative of P_s h at x ∈ [0,1], h given on the grid.
    pub fn lift(&self, h: &[Complex64], dh: &[Complex64], x: f64) -> (Complex64, Complex64) {
        let (mut v, mut d) = (c0(), c0());
        for br in &self.branches {
            let j = br.map.jet(x);
            let c = -br.map.log_abs_deriv(x);
            let dc = -br.map.log_slope(x);
            let w = twist(self.s, c) * br.weight;
            let row = self.grid.interp_row(j.f);
            let hv: Complex64 = row.iter().zip(h).map(|(l, v)| v * l).sum();
            let hd: Complex64 = row.iter().zip(dh).map(|(l, v)| v * l).sum();
            v += w * hv;
            d += w * (self.s * (2.0 * PI * dc) * hv + hd * j.d1);
        }
        (v, d)
    }

    /// (sup|P h|, sup|(P h)'|) over uniform points of [0,1].
    pub fn lifted_sup_norms(&self, h: &[Complex64]) -> (f64, f64) {
        let dh = self.grid.derivative(h);
        (0..NORM_POINTS)
            .into_par_iter()
            .map(|i| {
                let x = i as f64 / (NORM_POINTS - 1) as f64;
                let (v, d) = self.lift(h, &dh, x);
                (v.norm(), d.norm())
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)))
    }
}

/// P_s for a self-conformal measure on an M-node grid over J.
pub fn discretize(nu: &SelfConformalMeasure, s: Complex64, m: usize, strip: f64) -> Result<DiscreteOperator> {
    if m < 16 {
        return Err(Error::Invalid(format!("grid size {m} below 16")));
    }
    if s.re.abs() > strip {
        return Err(Error::StripExceeded { re: s.re, bound: strip });
    }
    let ifs = nu.ifs();
    let maps: Vec<&ConformalMap> = ifs.maps().iter().collect();
    let (lo, hi) = image_hull(&maps);
    let branches = ifs
        .maps()
        .iter()
        .zip(nu.p())
        .map(|(m, &p)| Branch { weight: p, map: m.clone() })
        .collect();
    Ok(DiscreteOperator::from_branches(s, ChebGrid::new(lo, hi, m), branches, Provenance::Global))
}

/// P_s^n as a single operator over all words of length n (one interpolation).
pub fn discretize_power(nu: &SelfConformalMeasure, s: Complex64, m: usize, n: usize) -> DiscreteOperator {
    let ifs = nu.ifs();
    let maps: Vec<&ConformalMap> = ifs.maps().iter().collect();
    let (lo, hi) = image_hull(&maps);
    let total = ifs.len().pow(n as u32);
    let branches = (0..total)
        .map(|idx| {
            let w = ifs.index_word(idx, n);
            Branch { weight: w.iter().map(|&a| nu.p()[a]).product(), map: crate::ifs::compose_word(ifs, &w) }
        })
        .collect();
    DiscreteOperator::from_branches(s, ChebGrid::new(lo, hi, m), branches, Provenance::Global)
}

pub fn apply_op(op: &DiscreteOperator, g: &[Complex64]) -> Result<Vec<Complex64>> {
    if g.len() != op.len() {
        return Err(Error::GridMismatch { expected: op.len(), got: g.len() });
    }
    Ok(op.matvec(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormFlavor {
    C1,
    /// ‖φ‖∞ + ‖φ'‖∞/|b|
    B,
}

pub fn combine_norm(sup: f64, dsup: f64, flavor: NormFlavor, b: f64) -> f64 {
    match flavor {
        NormFlavor::C1 => sup + dsup,
        NormFlavor::B => sup + dsup / b.abs().max(1.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    pub flavor: NormFlavor,
    /// ‖P^k g‖ for k = 1..=n
    pub norms: Vec<f64>,
    pub c: f64,
    pub alpha: f64,
    pub fit_residual: f64,
}

/// Iterate g and record lifted norms; fit C·α^k over steps [n/2, n].
pub fn power_norm(op: &DiscreteOperator, g: &[Complex64], n: usize, flavor: NormFlavor) -> Result<NormReport> {
    if n == 0 {
        return Err(Error::Invalid("power_norm needs n >= 1".into()));
    }
    if g.len() != op.len() {
        return Err(Error::GridMismatch { expected: op.len(), got: g.len() });
    }
    let b = op.s.im;
    let mut h = g.to_vec();
    let mut norms = Vec::with_capacity(n);
    for k in 1..=n {
        let (sup, dsup) = op.lifted_sup_norms(&h);
        let nk = combine_norm(sup, dsup, flavor, b);
        if !(nk <= OVERFLOW_NORM) {
            return Err(Error::Overflow { step: k, norm: nk });
        }
        norms.push(nk);
        if k < n {
            h = op.matvec(&h);
        }
    }
    let start = (n / 2).max(1);
    let xs: Vec<f64> = (start..=n).map(|k| k as f64).collect();
    let ys: Vec<f64> = (start..=n).map(|k| norms[k - 1].max(1e-300).ln()).collect();
    let (c, alpha, fit_residual) = match fit_line(&xs, &ys) {
        Some(f) => (f.intercept.exp(), f.slope.exp(), f.residual),
        None => (norms[n - 1], 1.0, 0.0),
    };
    Ok(NormReport { flavor, norms, c, alpha, fit_residual })
}

/// A probe function: value and derivative.
pub type Probe = Box<dyn Fn(f64) -> (Complex64, Complex64) + Send + Sync>;

/// Eight probe functions normalized to unit ‖·‖_(b) on [0,1].
pub fn probe_set(b: f64) -> Vec<Probe> {
    let bb = b.abs().max(1.0);
    let w = 2.0 * PI * bb;
    let i = Complex64::i();
    let raw: Vec<Probe> = vec![
        Box::new(|_x| (Complex64::new(1.0, 0.0), c0())),
        Box::new(|x| (Complex64::new(x, 0.0), Complex64::new(1.0, 0.0))),
        Box::new(|x| (Complex64::new(x * x, 0.0), Complex64::new(2.0 * x, 0.0))),
        Box::new(|x| {
            let t = 2.0 * x - 1.0;
            (Complex64::new(t * t * t, 0.0), Complex64::new(6.0 * t * t, 0.0))
        }),
        Box::new(move |x| {
            let e = (i * w * x).exp();
            (e, i * w * e)
        }),
        Box::new(move |x| {
            let e = (-i * w * x).exp();
            (e, -i * w * e)
        }),
        Box::new(move |x| {
            let (s, c) = (w * x).sin_cos();
            (Complex64::new(x * c, 0.0), Complex64::new(c - w * x * s, 0.0))
        }),
        Box::new(move |x| {
            let (s, c) = (0.5 * w * x).sin_cos();
            let e = (i * 0.25 * w * x).exp();
            (e * s, e * (0.5 * w * c + i * 0.25 * w * s))
        }),
    ];
    raw.into_iter()
        .map(|g| {
            let (mut sup, mut dsup) = (0.0f64, 0.0f64);
            for k in 0..=4096 {
                let (v, d) = g(k as f64 / 4096.0);
                sup = sup.max(v.norm());
                dsup = dsup.max(d.norm());
            }
            let scale = 1.0 / combine_norm(sup, dsup, NormFlavor::B, bb);
            Box::new(move |x: f64| {
                let (v, d) = g(x);
                (v * scale, d * scale)
            }) as Probe
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub b: f64,
    pub alpha: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub a: f64,
    pub n: usize,
    pub m: usize,
    pub rows: Vec<ScanRow>,
    /// γ from C(b) ~ |b|^{1+γ}; NaN with fewer than two distinct b.
    pub gamma: f64,
}

/// Max-over-probes contraction rate of P_{a+ib} per b.
pub fn spectral_gap_scan(nu: &SelfConformalMeasure, a: f64, b_list: &[f64], n: usize, m: usize, strip: f64) -> Result<ScanReport> {
    if b_list.iter().any(|b| b.abs() < 1.0) {
        return Err(Error::Invalid("spectral scan needs |b| >= 1".into()));
    }
    let rows = b_list
        .iter()
        .map(|&b| {
            let op = discretize(nu, Complex64::new(a, b), m, strip)?;
            let reports = probe_set(b)
                .into_par_iter()
                .map(|g| power_norm(&op, &op.grid.sample(|x| g(x).0), n, NormFlavor::B))
                .collect::<Result<Vec<_>>>()?;
            let alpha = reports.iter().map(|r| r.alpha).fold(0.0, f64::max);
            let c = reports.iter().map(|r| r.c).fold(0.0, f64::max);
            Ok(ScanRow { b, alpha, c })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.b.abs().ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.c.ln()).collect();
    let gamma = fit_line(&xs, &ys).map(|f| f.slope - 1.0).unwrap_or(f64::NAN);
    Ok(ScanReport { a, n, m, rows, gamma })
}

/// ∫ h dν for h on the grid of a global operator at s = 0, by iterating P_0
/// until the iterate is constant.
pub fn nu_integral(p0: &DiscreteOperator, h: &[Complex64]) -> Complex64 {
    let mut v = h.to_vec();
    for _ in 0..10_000 {
        let next = p0.matvec(&v);
        let spread = next.iter().map(|z| (z - next[0]).norm()).fold(0.0, f64::max);
        v = next;
        if spread < 1e-15 * v[0].norm().max(1e-300) {
            break;
        }
    }
    v.iter().sum::<Complex64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventProbe {
    /// ∫(Σ_k P^k g) dν / ∫g dν; None when ∫g dν ≈ 0.
    pub rank_one_coeff: Option<Complex64>,
    /// ∫ g dν, the N₀ component of g.
    pub n0_component: Complex64,
    /// C¹ norm (on the grid) of the resolvent image minus its ν-mean.
    pub remainder_norm: f64,
    pub terms: usize,
    /// Whether remainder_norm ≤ C(1+|θ|)^{1+γ} for a supplied (C, γ).
    pub within_bound: Option<bool>,
}

/// Sum the Neumann series of P_{−(s+iθ)} applied to g and split off the
/// constant direction.
pub fn resolvent_probe(
    nu: &SelfConformalMeasure,
    s: f64,
    theta: f64,
    truncation_n: usize,
    m: usize,
    g: &dyn Fn(f64) -> Complex64,
    bound: Option<(f64, f64)>,
) -> Result<ResolventProbe> {
    let z = Complex64::new(-s, -theta);
    let op = discretize(nu, z, m, f64::INFINITY)?;
    let p0 = discretize(nu, c0(), m, f64::INFINITY)?;
    let g0 = op.grid.sample(g);
    let mut term = g0.clone();
    let mut total = g0.clone();
    let mut used = truncation_n;
    let mut converged = false;
    for k in 1..=truncation_n {
        term = op.matvec(&term);
        for (t, v) in total.iter_mut().zip(&term) {
            *t += v;
        }
        let tn = term.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let sn = total.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if !(tn.is_finite() && sn.is_finite()) {
            return Err(Error::SeriesDiverging(k));
        }
        if tn <= 1e-12 * sn.max(1e-300) {
            used = k;
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SeriesDiverging(truncation_n));
    }
    let n0 = nu_integral(&p0, &g0);
    let mean = nu_integral(&p0, &total);
    let rem: Vec<Complex64> = total.iter().map(|v| v - mean).collect();
    let drem = op.grid.derivative(&rem);
    let remainder_norm = rem.iter().map(|v| v.norm()).fold(0.0, f64::max)
        + drem.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let rank_one_coeff = if n0.norm() > 1e-12 { Some(mean / n0) } else { None };
    let within_bound = bound.map(|(c, gamma)| remainder_norm <= c * (1.0 + theta.abs()).powf(1.0 + gamma));
    Ok(ResolventProbe { rank_one_coeff, n0_component: n0, remainder_norm, terms: used, within_bound })
}
