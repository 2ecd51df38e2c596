//! Dolgopyat operators N_s^J H = P_{a,ω,N}(χ_J · H) and their checks.
//!
//! By separation, χ_J ∘ f_I differs from 1 only for I = α_i, where it equals
//! 1 − θχ_j on V_j. So pointwise
//!   N_s^J H(x) = P_a H(x) − θ Σ_{(i,j)∈J} χ_j(x) η(α_i) e^{2πa c(α_i,x)} H(f_{α_i} x).

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ifs::{compose_word, ConformalMap};
use crate::stats::Moments;

use super::partition::{triadic_partition, TriadicPartition};
use super::{check_prefix, depth_for_scale, local_words, sample_mu_omega, RandomModel};

const CHECK_GRID: usize = 4097;
const CELL_POINTS: usize = 33;

/// C¹ cutoff: 0 outside (lo, hi), 1 on [k_lo, k_hi], cubic ramps between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothStep {
    pub lo: f64,
    pub hi: f64,
    pub k_lo: f64,
    pub k_hi: f64,
}

impl SmoothStep {
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let ramp = |t: f64, w: f64| (t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t) / w);
        if x <= self.lo || x >= self.hi {
            (0.0, 0.0)
        } else if x < self.k_lo {
            let w = self.k_lo - self.lo;
            ramp((x - self.lo) / w, w)
        } else if x > self.k_hi {
            let w = self.hi - self.k_hi;
            let (v, d) = ramp((self.hi - x) / w, w);
            (v, -d)
        } else {
            (1.0, 0.0)
        }
    }

    pub fn max_slope(&self) -> f64 {
        1.5 / (self.k_lo - self.lo).min(self.hi - self.k_hi)
    }
}

/// Ĉ with |2π (log f_I′)′| ≤ Ĉ for every composition of parent maps.
pub fn cone_constant(model: &RandomModel) -> f64 {
    let ifs = model.ifs();
    let sup = ifs.maps().iter().map(|m| m.sup_log_slope()).fold(0.0, f64::max);
    2.0 * PI * sup / (1.0 - ifs.rho())
}

pub struct DolgopyatInput<'a> {
    pub omega: &'a [usize],
    pub s: Complex64,
    pub n: usize,
    /// Cone parameter A; the cone is C_{A|b|}.
    pub a_cone: f64,
    /// None: min(1/8, ε′(A−1)/(4A₃)).
    pub theta: Option<f64>,
    pub eps_prime: f64,
    pub f: &'a (dyn Fn(f64) -> (Complex64, Complex64) + Sync),
    pub h: &'a (dyn Fn(f64) -> (f64, f64) + Sync),
    pub mc_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct DolgopyatResult {
    /// (i, j): UNI word α_i (0 or 1) damped on cell V_j.
    pub selected: Vec<(usize, usize)>,
    pub partition: TriadicPartition,
    pub eps_prime: f64,
    pub theta: f64,
    pub theta_admissible: f64,
    pub a3: f64,
    pub dense: bool,
    pub points: Vec<f64>,
    pub nh: Vec<f64>,
    pub dnh: Vec<f64>,
    pub cone_ok: bool,
    /// max |(N H)′| / (A|b| N H)
    pub cone_worst: f64,
    pub domination_ok: bool,
    /// max of |P f|/N H and |(P f)′|/(A|b| N H)
    pub domination_worst: f64,
    /// ∫|N H|² dμ / ∫P₀(H²) dμ against μ_{σ^N ω}
    pub l2_ratio: f64,
    pub l2_stderr: f64,
}

struct Branch {
    weight: f64,
    map: ConformalMap,
}

/// Per-branch data at a point: weight, cocycle, its derivative, f_I(x), f_I′(x).
#[derive(Clone, Copy)]
struct Leg {
    w: f64,
    c: f64,
    dc: f64,
    y: f64,
    d: f64,
}

fn legs(branches: &[Branch], x: f64) -> Vec<Leg> {
    branches
        .iter()
        .map(|b| {
            let j = b.map.jet(x);
            Leg { w: b.weight, c: -b.map.log_abs_deriv(x), dc: -b.map.log_slope(x), y: j.f, d: j.d1 }
        })
        .collect()
}

fn cone_violation(x: f64, dh: f64, bound: f64) -> Error {
    Error::ConeViolation { x, dh, bound }
}

pub fn dolgopyat_apply(model: &RandomModel, input: &DolgopyatInput) -> Result<DolgopyatResult> {
    let n = input.n;
    check_prefix(input.omega, n + 1)?;
    let (a, b) = (input.s.re, input.s.im);
    let bb = b.abs().max(1.0);
    let cone = input.a_cone * bb;
    let (f, h) = (input.f, input.h);

    for k in 0..CHECK_GRID {
        let x = k as f64 / (CHECK_GRID - 1) as f64;
        let (hv, hd) = h(x);
        let (fv, fd) = f(x);
        if !(hv > 0.0) || hd.abs() > cone * hv * (1.0 + 1e-12) {
            return Err(cone_violation(x, hd, cone * hv));
        }
        if fv.norm() > hv * (1.0 + 1e-12) || fd.norm() > cone * hv * (1.0 + 1e-12) {
            return Err(cone_violation(x, fd.norm(), cone * hv));
        }
    }

    let words = local_words(model, input.omega, n)?;
    let pair = model.uni_pair_words(input.omega, n)?;
    let alpha: [usize; 2] = [0, 1].map(|i| words.iter().position(|(_, w)| *w == pair[i]).expect("pair word in X_N"));
    let branches: Vec<Branch> =
        words.iter().map(|(w, word)| Branch { weight: *w, map: compose_word(model.ifs(), word) }).collect();
    let tail = &input.omega[n..];
    let twist_a = |c: f64| (2.0 * PI * a * c).exp();

    let mut eps_prime = input.eps_prime;
    let mut attempt = 0;
    let (partition, cutoffs, selected, theta, theta_admissible, a3, points) = loop {
        let partition = triadic_partition(model, tail, eps_prime / bb)?;
        let meeting = partition.meeting();
        let cutoffs: Vec<Option<SmoothStep>> = partition
            .cells
            .iter()
            .map(|c| c.k_hull.map(|(k_lo, k_hi)| SmoothStep { lo: c.lo, hi: c.hi, k_lo, k_hi }))
            .collect();
        let max_slope = cutoffs.iter().flatten().map(|c| c.max_slope()).fold(0.0, f64::max);
        let a3 = max_slope * eps_prime / bb;
        let theta_admissible = if a3 > 0.0 { eps_prime * (input.a_cone - 1.0) / (4.0 * a3) } else { 0.125 };
        let theta = input.theta.unwrap_or(theta_admissible.min(0.125));

        let mut points: Vec<f64> = (0..CHECK_GRID).map(|k| k as f64 / (CHECK_GRID - 1) as f64).collect();
        for &j in &meeting {
            let c = &partition.cells[j];
            points.extend((0..CELL_POINTS).map(|k| c.lo + c.len() * k as f64 / (CELL_POINTS - 1) as f64));
        }
        points.sort_by(f64::total_cmp);
        points.dedup();

        // Θ_i ≤ 1 on every check point of V_j
        let mut ok = vec![[true, true]; partition.cells.len()];
        let thetas: Vec<(f64, f64, f64)> = points
            .par_iter()
            .map(|&x| {
                let l = legs(&branches, x);
                let z: Complex64 = alpha
                    .iter()
                    .map(|&k| (input.s * (2.0 * PI * l[k].c)).exp() * f(l[k].y).0 * l[k].w)
                    .sum();
                let w = alpha.map(|k| twist_a(l[k].c) * l[k].w * h(l[k].y).0);
                let t1 = z.norm() / ((1.0 - 2.0 * theta) * w[0] + w[1]);
                let t2 = z.norm() / (w[0] + (1.0 - 2.0 * theta) * w[1]);
                (x, t1, t2)
            })
            .collect();
        for &(x, t1, t2) in &thetas {
            for &j in &meeting {
                let c = &partition.cells[j];
                if x >= c.lo && x <= c.hi {
                    ok[j][0] &= t1 <= 1.0;
                    ok[j][1] &= t2 <= 1.0;
                }
            }
        }
        let selected: Vec<(usize, usize)> = meeting
            .iter()
            .flat_map(|&j| (0..2usize).map(move |i| (i, j)))
            .filter(|&(i, j)| ok[j][i])
            .collect();
        let dense = !selected.is_empty()
            && meeting.iter().all(|&j| selected.iter().any(|&(_, jp)| (jp as isize - j as isize).abs() <= 2));
        if dense {
            break (partition, cutoffs, selected, theta, theta_admissible, a3, points);
        }
        attempt += 1;
        if attempt == 2 {
            return Err(Error::DenseSetEmpty);
        }
        eps_prime /= 2.0;
    };

    let damp: Vec<Vec<usize>> = {
        let mut v = vec![Vec::new(); partition.cells.len()];
        for &(i, j) in &selected {
            v[j].push(i);
        }
        v
    };
    let nh_at = |x: f64, l: &[Leg]| -> (f64, f64) {
        let (mut v, mut d) = (0.0, 0.0);
        for leg in l {
            let (hv, hd) = h(leg.y);
            let e = twist_a(leg.c) * leg.w;
            v += e * hv;
            d += e * (2.0 * PI * a * leg.dc * hv + hd * leg.d);
        }
        let j = partition.locate(x);
        if let Some(cut) = cutoffs[j] {
            let (chi, dchi) = cut.eval(x);
            for &i in &damp[j] {
                let leg = l[alpha[i]];
                let (hv, hd) = h(leg.y);
                let e = twist_a(leg.c) * leg.w * theta;
                v -= e * chi * hv;
                d -= e * (dchi * hv + chi * (2.0 * PI * a * leg.dc * hv + hd * leg.d));
            }
        }
        (v, d)
    };

    let evals: Vec<(f64, f64, f64, f64)> = points
        .par_iter()
        .map(|&x| {
            let l = legs(&branches, x);
            let (v, d) = nh_at(x, &l);
            let (mut pf, mut dpf) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for leg in &l {
                let (fv, fd) = f(leg.y);
                let e = (input.s * (2.0 * PI * leg.c)).exp() * leg.w;
                pf += e * fv;
                dpf += e * (input.s * (2.0 * PI * leg.dc) * fv + fd * leg.d);
            }
            (v, d, pf.norm(), dpf.norm())
        })
        .collect();
    let mut cone_ok = true;
    let mut dom_ok = true;
    let (mut cone_worst, mut dom_worst) = (0.0f64, 0.0f64);
    for &(v, d, pf, dpf) in &evals {
        if !(v > 0.0) {
            cone_ok = false;
            dom_ok = false;
            cone_worst = f64::INFINITY;
            continue;
        }
        let c = d.abs() / (cone * v);
        cone_worst = cone_worst.max(c);
        cone_ok &= c <= 1.0 + 1e-9;
        let dm = (pf / v).max(dpf / (cone * v));
        dom_worst = dom_worst.max(dm);
        dom_ok &= pf <= v * (1.0 + 1e-12) && dpf <= cone * v * (1.0 + 1e-9);
    }

    let depth = depth_for_scale(model, 1e-13);
    check_prefix(tail, depth)?;
    let xs = sample_mu_omega(model, tail, depth, input.mc_samples, input.seed)?;
    let pairs: Vec<(f64, f64)> = xs
        .par_iter()
        .map(|&x| {
            let l = legs(&branches, x);
            let nh = nh_at(x, &l).0;
            let p0 = l.iter().map(|leg| leg.w * h(leg.y).0.powi(2)).sum::<f64>();
            (nh * nh, p0)
        })
        .collect();
    let (num, den) = pairs.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let ratio = num / den;
    let mut z = Moments::default();
    for &(nv, dv) in &pairs {
        z.push(nv - ratio * dv);
    }
    let l2_stderr = z.stderr() / (den / pairs.len() as f64);

    Ok(DolgopyatResult {
        selected,
        partition,
        eps_prime,
        theta,
        theta_admissible,
        a3,
        dense: true,
        nh: evals.iter().map(|e| e.0).collect(),
        dnh: evals.iter().map(|e| e.1).collect(),
        points,
        cone_ok,
        cone_worst,
        domination_ok: dom_ok,
        domination_worst: dom_worst,
        l2_ratio: ratio,
        l2_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::ifs::{certify_quadruple, induce};
    use crate::random_model::build_model;

    fn model() -> RandomModel {
        let ifs = induce(&corpus::gauss24(), 2, 64).unwrap();
        let q = certify_quadruple(&ifs, [0, 1, 2, 3]).unwrap();
        build_model(&corpus::uniform(ifs), &q).unwrap()
    }

    fn omega() -> Vec<usize> {
        vec![0, 2, 1, 3, 3, 0, 2, 1, 1, 0, 3, 2, 0, 1, 2, 3]
    }

    #[test]
    fn smoothstep_shape() {
        let c = SmoothStep { lo: 0.0, hi: 1.0, k_lo: 0.25, k_hi: 0.5 };
        assert_eq!(c.eval(0.3), (1.0, 0.0));
        assert_eq!(c.eval(1.0), (0.0, 0.0));
        let (v, d) = c.eval(0.125);
        assert!((v - 0.5).abs() < 1e-15 && (d - 6.0).abs() < 1e-12);
        assert!((c.max_slope() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_instance() {
        let m = model();
        let one_c = |_x: f64| (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        let one = |_x: f64| (1.0, 0.0);
        let om = omega();
        let r = dolgopyat_apply(
            &m,
            &DolgopyatInput {
                omega: &om,
                s: Complex64::new(0.0, 0.0),
                n: 1,
                a_cone: 4.0 * cone_constant(&m),
                theta: Some(0.125),
                eps_prime: 0.02,
                f: &one_c,
                h: &one,
                mc_samples: 2000,
                seed: 1,
            },
        );
        // s = 0 leaves no room for cancellation; J may be empty
        match r {
            Ok(r) => assert!(r.nh.iter().all(|&v| v <= 1.0 + 1e-12) && r.domination_ok),
            Err(e) => assert!(matches!(e, Error::DenseSetEmpty)),
        }
    }

    #[test]
    fn cone_violation_detected() {
        let m = model();
        let f = |_x: f64| (Complex64::new(0.5, 0.0), Complex64::new(0.0, 0.0));
        let bad = |x: f64| if (x - 0.5).abs() < 1e-9 { (1.0, 1e9) } else { (1.0, 0.0) };
        let om = omega();
        let r = dolgopyat_apply(
            &m,
            &DolgopyatInput {
                omega: &om,
                s: Complex64::new(0.0, 100.0),
                n: 1,
                a_cone: 4.0 * cone_constant(&m),
                theta: None,
                eps_prime: 1.0,
                f: &f,
                h: &bad,
                mc_samples: 1000,
                seed: 1,
            },
        );
        assert!(matches!(r, Err(Error::ConeViolation { .. })));
    }
}
