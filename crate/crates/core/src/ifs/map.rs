use std::sync::Arc;

use crate::error::{Error, Result};

/// Validation grid size: 2^12 intervals.
pub const VALIDATION_GRID: usize = 1 << 12;

/// Parametric description of a map, as read from a config file.
#[derive(Debug, Clone, PartialEq)]
pub enum MapSpec {
    /// x ↦ slope·x + offset
    Affine { slope: f64, offset: f64 },
    /// x ↦ (a·x + b)/(c·x + d)
    Moebius { a: f64, b: f64, c: f64, d: f64 },
    /// x ↦ Σ coeffs[k]·x^k
    Polynomial(Vec<f64>),
}

impl MapSpec {
    /// Shorthand for x ↦ 1/(a + x).
    pub fn gauss(a: f64) -> MapSpec {
        MapSpec::Moebius { a: 0.0, b: 1.0, c: 1.0, d: a }
    }

    pub fn affine(slope: f64, offset: f64) -> MapSpec {
        MapSpec::Affine { slope, offset }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Spec(MapSpec),
    /// Composition, outermost first: f = g[0] ∘ g[1] ∘ … .
    Composite(Arc<[ConformalMap]>),
}

/// A strictly monotone C² contraction of [0,1].
#[derive(Debug, Clone)]
pub struct ConformalMap {
    kind: Kind,
    sup_deriv: f64,
    inf_deriv: f64,
    sup_log_slope: f64,
    reversing: bool,
}

/// Value, first and second derivative at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub f: f64,
    pub d1: f64,
    pub d2: f64,
}

fn spec_jet(s: &MapSpec, x: f64) -> Jet {
    match s {
        MapSpec::Affine { slope, offset } => Jet { f: slope * x + offset, d1: *slope, d2: 0.0 },
        MapSpec::Moebius { a, b, c, d } => {
            let den = c * x + d;
            let det = a * d - b * c;
            Jet { f: (a * x + b) / den, d1: det / (den * den), d2: -2.0 * c * det / (den * den * den) }
        }
        MapSpec::Polynomial(co) => {
            // Horner for value and both derivatives
            let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
            for &c in co.iter().rev() {
                ddp = ddp * x + 2.0 * dp;
                dp = dp * x + p;
                p = p * x + c;
            }
            Jet { f: p, d1: dp, d2: ddp }
        }
    }
}

impl ConformalMap {
    pub fn from_spec(spec: MapSpec) -> Result<ConformalMap> {
        if let MapSpec::Moebius { c, d, .. } = spec {
            // pole must stay off [0,1]
            let (p0, p1) = (d, c + d);
            if p0 == 0.0 || p1 == 0.0 || p0.signum() != p1.signum() {
                return Err(Error::DegenerateDerivative(0.0));
            }
        }
        if let MapSpec::Polynomial(ref c) = spec {
            if c.is_empty() {
                return Err(Error::Invalid("polynomial needs coefficients".into()));
            }
        }
        let values = [spec_jet(&spec, 0.0), spec_jet(&spec, 1.0)];
        if values.iter().any(|j| !j.f.is_finite() || !j.d1.is_finite()) {
            return Err(Error::Invalid(format!("non-finite map {spec:?}")));
        }
        let mut m = ConformalMap {
            kind: Kind::Spec(spec),
            sup_deriv: 0.0,
            inf_deriv: 0.0,
            sup_log_slope: 0.0,
            reversing: false,
        };
        m.certify()?;
        Ok(m)
    }

    /// Composition of maps, outermost first. Bounds are recomputed on the grid.
    pub fn compose(parts: &[ConformalMap]) -> ConformalMap {
        assert!(!parts.is_empty(), "empty composition");
        if parts.len() == 1 {
            return parts[0].clone();
        }
        let mut flat = Vec::new();
        for p in parts {
            match &p.kind {
                Kind::Composite(inner) => flat.extend(inner.iter().cloned()),
                Kind::Spec(_) => flat.push(p.clone()),
            }
        }
        let reversing = flat.iter().filter(|m| m.reversing).count() % 2 == 1;
        let mut m = ConformalMap {
            kind: Kind::Composite(flat.into()),
            sup_deriv: 0.0,
            inf_deriv: 0.0,
            sup_log_slope: 0.0,
            reversing,
        };
        m.certify().expect("composition of valid maps is valid");
        m
    }

    /// Derivative extrema by grid search plus golden-section refinement.
    fn certify(&mut self) -> Result<()> {
        let n = VALIDATION_GRID;
        let xs: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let d: Vec<f64> = xs.iter().map(|&x| self.deriv(x)).collect();
        let pos = d.iter().all(|&v| v > 0.0);
        let neg = d.iter().all(|&v| v < 0.0);
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        let grid_inf = abs.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(pos || neg) || !(grid_inf > 0.0) {
            return Err(Error::DegenerateDerivative(grid_inf));
        }
        self.reversing = neg;
        let sup = refine_extremum(&xs, &abs, |x| self.deriv(x).abs(), true);
        let inf = refine_extremum(&xs, &abs, |x| self.deriv(x).abs(), false);
        if sup >= 1.0 {
            return Err(Error::NotAContraction(sup));
        }
        let (a, b) = (self.eval(0.0), self.eval(1.0));
        let (lo, hi) = (a.min(b), a.max(b));
        let slack = 1e-14;
        if lo < -slack || hi > 1.0 + slack {
            return Err(Error::NotSelfMap(lo, hi));
        }
        let ls: Vec<f64> = xs.iter().map(|&x| self.log_slope(x).abs()).collect();
        self.sup_log_slope = refine_extremum(&xs, &ls, |x| self.log_slope(x).abs(), true);
        self.sup_deriv = sup;
        self.inf_deriv = inf;
        Ok(())
    }

    pub fn jet(&self, x: f64) -> Jet {
        match &self.kind {
            Kind::Spec(s) => spec_jet(s, x),
            Kind::Composite(parts) => {
                let mut j = Jet { f: x, d1: 1.0, d2: 0.0 };
                for p in parts.iter().rev() {
                    let g = p.jet(j.f);
                    j = Jet { f: g.f, d1: g.d1 * j.d1, d2: g.d2 * j.d1 * j.d1 + g.d1 * j.d2 };
                }
                j
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Spec(s) => spec_jet(s, x).f,
            Kind::Composite(parts) => parts.iter().rev().fold(x, |y, p| p.eval(y)),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.jet(x).d1
    }

    /// log|f'(x)|, accumulated factor by factor so deep composites do not underflow.
    pub fn log_abs_deriv(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Spec(s) => spec_jet(s, x).d1.abs().ln(),
            Kind::Composite(parts) => {
                let mut y = x;
                let mut acc = 0.0;
                for p in parts.iter().rev() {
                    acc += p.log_abs_deriv(y);
                    y = p.eval(y);
                }
                acc
            }
        }
    }

    /// (log|f'|)'(x) = f''/f', by the chain rule for composites.
    pub fn log_slope(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Spec(s) => {
                let j = spec_jet(s, x);
                j.d2 / j.d1
            }
            Kind::Composite(parts) => {
                let (mut y, mut inner, mut acc) = (x, 1.0, 0.0);
                for p in parts.iter().rev() {
                    acc += p.log_slope(y) * inner;
                    inner *= p.deriv(y);
                    y = p.eval(y);
                }
                acc
            }
        }
    }

    /// f([0,1]) as [min, max].
    pub fn image(&self) -> (f64, f64) {
        let (a, b) = (self.eval(0.0), self.eval(1.0));
        (a.min(b), a.max(b))
    }

    /// Fixed point by iteration (the map is a contraction).
    pub fn fixed_point(&self) -> f64 {
        let mut x = 0.5;
        for _ in 0..10_000 {
            let y = self.eval(x);
            if (y - x).abs() < 1e-16 {
                return y;
            }
            x = y;
        }
        x
    }

    pub fn sup_deriv(&self) -> f64 {
        self.sup_deriv
    }

    pub fn inf_deriv(&self) -> f64 {
        self.inf_deriv
    }

    /// sup over [0,1] of |(log|f'|)'|.
    pub fn sup_log_slope(&self) -> f64 {
        self.sup_log_slope
    }

    pub fn is_reversing(&self) -> bool {
        self.reversing
    }

    pub fn is_affine(&self) -> bool {
        match &self.kind {
            Kind::Spec(MapSpec::Affine { .. }) => true,
            Kind::Spec(MapSpec::Polynomial(c)) => c.iter().skip(2).all(|&v| v == 0.0),
            Kind::Spec(MapSpec::Moebius { c, .. }) => *c == 0.0,
            Kind::Composite(p) => p.iter().all(|m| m.is_affine()),
        }
    }

    /// The parametric description, if this is not a composite.
    pub fn spec(&self) -> Option<&MapSpec> {
        match &self.kind {
            Kind::Spec(s) => Some(s),
            Kind::Composite(_) => None,
        }
    }
}

/// Refine a grid extremum of `g` with golden-section search on the bracketing cells.
fn refine_extremum(xs: &[f64], vals: &[f64], g: impl Fn(f64) -> f64, max: bool) -> f64 {
    let better = |a: f64, b: f64| if max { a > b } else { a < b };
    let mut best_i = 0;
    for i in 1..vals.len() {
        if better(vals[i], vals[best_i]) {
            best_i = i;
        }
    }
    let lo = xs[best_i.saturating_sub(1)];
    let hi = xs[(best_i + 1).min(xs.len() - 1)];
    let sign = if max { -1.0 } else { 1.0 };
    let x = golden_min(|x| sign * g(x), lo, hi, 1e-12);
    let refined = g(x);
    if better(refined, vals[best_i]) {
        refined
    } else {
        vals[best_i]
    }
}

/// Golden-section minimization on [a, b].
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}
