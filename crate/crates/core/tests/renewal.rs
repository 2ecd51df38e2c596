use decaylab_core::corpus;
use decaylab_core::measure::{lyapunov, SelfConformalMeasure};
use decaylab_core::renewal::{
    equidistribution_test, increment_samples, mollify, renewal_apply, renewal_limit, residue_cutoff, residue_limit,
    walk_sample, GridFn, RenewalMethod, RenewalOptions, ResidueOptions,
};
use decaylab_core::stats::fit_line;
use decaylab_core::Error;
use proptest::prelude::*;

fn systems() -> Vec<SelfConformalMeasure> {
    vec![
        corpus::uniform(corpus::cantor()),
        corpus::uniform(corpus::gauss24()),
        SelfConformalMeasure::new(corpus::moebius_pair(), vec![0.4, 0.6]).unwrap(),
        corpus::uniform(corpus::affine_three()),
    ]
}

fn bump(u: f64, center: f64, half: f64) -> f64 {
    let v = (u - center) / half;
    if v.abs() < 1.0 {
        (-1.0 / (1.0 - v * v)).exp()
    } else {
        0.0
    }
}

fn enumerate_only() -> RenewalOptions {
    RenewalOptions { cap: 1 << 24, ..Default::default() }
}

#[test]
fn gauss_sweep_stays_in_window() {
    let nu = corpus::uniform(corpus::gauss24());
    let d_max = nu.ifs().constants().d_max;
    for seed in 0..10_000 {
        let w = walk_sample(&nu, 10.0, 0, seed).unwrap();
        assert!(w.s_tau >= 10.0 && w.s_tau <= 10.0 + d_max, "{}", w.s_tau);
    }
}

#[test]
fn walk_path_matches_direct_cocycle() {
    // S_j = Σ_{i<j} c(ω_i, π(σ^{i+1} ω)), with π evaluated from the stored word
    for nu in systems() {
        let ifs = nu.ifs();
        let x0 = ifs.base_point();
        for seed in 0..50 {
            let w = walk_sample(&nu, 12.0, 40, seed).unwrap();
            let mut s = 0.0;
            for j in 0..w.tau {
                let x = ifs.apply_word(&w.word[j + 1..], x0);
                s -= ifs.map(w.word[j]).log_abs_deriv(x);
                assert!((s - w.path[j]).abs() < 1e-8, "j = {j}: {s} vs {}", w.path[j]);
            }
            // additivity S_{m+n}(ω) = S_m(ω) + S_n(σ^m ω) on the same coding
            let m = w.tau / 2;
            let head = if m == 0 { 0.0 } else { w.path[m - 1] };
            let shifted: f64 = (m..w.tau)
                .map(|j| -ifs.map(w.word[j]).log_abs_deriv(ifs.apply_word(&w.word[j + 1..], x0)))
                .sum();
            assert!((head + shifted - w.s_tau).abs() < 1e-8);
        }
    }
}

#[test]
fn increments_supported_in_derivative_range() {
    for nu in systems() {
        let c = nu.ifs().constants();
        for y in increment_samples(&nu, 20_000, 3) {
            assert!(y >= c.d_min - 1e-12 && y <= c.d_max + 1e-12);
        }
    }
}

#[test]
fn cantor_renewal_sum_by_hand() {
    // constant increments: Rf(z, t) = Σ_{n≥0} φ(n log 3 − t)
    let nu = corpus::uniform(corpus::cantor());
    let phi = |u: f64| bump(u, 0.2, 0.9);
    let f = |_y: f64, u: f64| phi(u);
    let l3 = 3f64.ln();
    for t in [0.3, 2.0, 5.5, 9.0] {
        let oracle: f64 = (0..100).map(|n| phi(n as f64 * l3 - t)).sum();
        let r = renewal_apply(&nu, &f, (-0.7, 1.1), 0.4, t, enumerate_only()).unwrap();
        assert_eq!(r.method, RenewalMethod::Enumeration);
        assert!((r.value - oracle).abs() < 1e-13, "t = {t}");
        let shifted = renewal_apply(&nu, &f, (-0.7, 1.1), 0.4, t + l3, enumerate_only()).unwrap();
        assert!((r.value - shifted.value).abs() < 1e-13);
    }
}

#[test]
fn small_hand_case() {
    // one level below the cut: terms n = 0 and n = 1 only
    let nu = corpus::uniform(corpus::dyadic());
    let f = |y: f64, u: f64| if (-1.0..=0.0).contains(&u) { y } else { 0.0 };
    let z = 0.3;
    let t = 0.5;
    // n = 0: u = −0.5 keeps z; n = 1: u = log 2 − 0.5 > 0 falls outside
    let oracle = z;
    let r = renewal_apply(&nu, &f, (-1.0, 0.0), z, t, enumerate_only()).unwrap();
    assert!((r.value - oracle).abs() < 1e-15);
    let t = 1.0;
    // n = 0: u = −1 (kept), n = 1: u = log 2 − 1 ∈ [−1, 0]
    let oracle = z + (0.5 * z + (0.5 * z + 0.5)) / 2.0;
    let r = renewal_apply(&nu, &f, (-1.0, 0.0), z, t, enumerate_only()).unwrap();
    assert!((r.value - oracle).abs() < 1e-15);
}

#[test]
fn indicator_bound() {
    for nu in systems() {
        let d_max = nu.ifs().constants().d_max;
        let (chi, _) = lyapunov(&nu, 100_000, 30, 1);
        let f = |_y: f64, u: f64| if (-d_max..=0.0).contains(&u) { 1.0 } else { 0.0 };
        for z in [0.1, 0.5, 0.9] {
            for t in [1.0, 4.0, 9.0] {
                let r = renewal_apply(&nu, &f, (-d_max, 0.0), z, t, enumerate_only()).unwrap();
                assert!(r.value <= 3.0 * d_max / chi, "{} > {}", r.value, 3.0 * d_max / chi);
            }
        }
    }
}

#[test]
fn monte_carlo_mode_agrees_with_enumeration() {
    let nu = corpus::uniform(corpus::gauss24());
    let f = |y: f64, u: f64| bump(u, 0.3, 1.0) * (1.0 + y);
    let exact = renewal_apply(&nu, &f, (-0.7, 1.3), 0.35, 6.0, enumerate_only()).unwrap();
    let capped = RenewalOptions { cap: 16, mc_samples: 200_000, seed: 4 };
    let mc = renewal_apply(&nu, &f, (-0.7, 1.3), 0.35, 6.0, capped).unwrap();
    assert_eq!(mc.method, RenewalMethod::MonteCarlo);
    assert!((mc.value - exact.value).abs() <= 4.0 * mc.stderr);
    let refused = renewal_apply(&nu, &f, (-0.7, 1.3), 0.35, 6.0, RenewalOptions { cap: 16, ..Default::default() });
    assert!(matches!(refused, Err(Error::CostCapExceeded { .. })));
}

#[test]
fn renewal_limit_of_unit_window() {
    for nu in systems() {
        let one = |_y: f64, _u: f64| 1.0;
        let lim = renewal_limit(&nu, &one, (0.0, 1.0), 50.0, 200_000, 2);
        let (chi, se) = lyapunov(&nu, 200_000, 30, 3);
        assert!((lim.value - 1.0 / chi).abs() <= 4.0 * (lim.stderr + se / (chi * chi)) + 1e-12);
        let zero = renewal_limit(&nu, &|_y: f64, _u: f64| 0.0, (0.0, 1.0), 50.0, 1000, 2);
        assert_eq!(zero.value, 0.0);
    }
}

#[test]
fn renewal_converges_for_moebius_pair() {
    let nu = corpus::uniform(corpus::moebius_pair());
    let f = |_y: f64, u: f64| bump(u, 0.5, 1.0);
    let lim = renewal_limit(&nu, &f, (-0.5, 1.5), 1e9, 1_000_000, 1);
    let ts = [2.0, 6.0, 10.0, 18.0];
    let errs: Vec<f64> = ts
        .iter()
        .map(|&t| {
            [0.25, 0.35, 0.45]
                .iter()
                .map(|&z| (renewal_apply(&nu, &f, (-0.5, 1.5), z, t, enumerate_only()).unwrap().value - lim.value).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[3] > 4.0 * lim.stderr);
    let logs: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    assert!(fit_line(&ts, &logs).unwrap().slope < 0.0);
}

#[test]
fn constant_residue_is_exactly_one() {
    let nu = corpus::uniform(corpus::gauss24());
    let t = residue_cutoff(&nu, &|_| 1.0, 6.0, ResidueOptions { tail_len: 4, n_mc: 20_000, seed: 1 }).unwrap();
    assert!(t.bins.iter().filter(|b| b.count > 0).all(|b| b.mean == 1.0));
    assert_eq!(t.overall, 1.0);
    let lim = residue_limit(&nu, &|_| 1.0, 10_000, 2);
    assert_eq!(lim.value, 1.0);
}

#[test]
fn cantor_residue_is_degenerate() {
    let nu = corpus::uniform(corpus::cantor());
    let k = 7.3;
    let l3 = 3f64.ln();
    let expect = (k / l3).ceil() * l3 - k;
    let t = residue_cutoff(&nu, &|u| u, k, ResidueOptions { tail_len: 4, n_mc: 5_000, seed: 1 }).unwrap();
    assert!(t.lattice.is_some_and(|s| (s - l3).abs() < 1e-9));
    for b in t.bins.iter().filter(|b| b.count > 0) {
        assert!((b.mean - expect).abs() < 1e-12);
    }
    let e = equidistribution_test(&nu, &|_| 1.0, &[7.3], ResidueOptions { tail_len: 4, n_mc: 1000, seed: 1 });
    assert!(matches!(e, Err(Error::LatticeDetected(_))));
}

#[test]
fn residue_needs_room_for_the_overshoot() {
    let nu = corpus::uniform(corpus::gauss24());
    let r = residue_cutoff(&nu, &|_| 1.0, 3.0, ResidueOptions { tail_len: 4, n_mc: 100, seed: 1 });
    assert!(matches!(r, Err(Error::Invalid(_))));
}

#[test]
fn mean_overshoot_limit_closed_form() {
    // constant-slope maps: Y = −log r_a exactly, and E[overshoot] → E[Y²]/(2E[Y])
    let nu = corpus::uniform(corpus::affine_three());
    let ys: Vec<f64> = [0.2f64, 0.3, 0.25].iter().map(|r| -r.ln()).collect();
    let oracle = ys.iter().map(|y| y * y).sum::<f64>() / (2.0 * ys.iter().sum::<f64>());
    let lim = residue_limit(&nu, &|u| u, 400_000, 5);
    assert!((lim.value - oracle).abs() <= 4.0 * lim.stderr, "{} vs {oracle}", lim.value);
}

#[test]
fn mollifier_preserves_mass_and_constants() {
    let f = GridFn::sample(-3.0, 3.0, 6001, |x| if x.abs() < 2.0 { 1.0 + 0.3 * x.sin() } else { 0.0 });
    for delta in [0.1, 0.3, 0.5] {
        let g = mollify(&f, delta).unwrap();
        assert!((g.integral() - f.integral()).abs() < 1e-10);
    }
    let ones = GridFn::sample(-2.0, 2.0, 4001, |_| 1.0);
    let g = mollify(&ones, 0.3).unwrap();
    let r = 0.09;
    for i in 0..g.values.len() {
        let x = g.x(i);
        if x.abs() < 2.0 - r - 2e-3 {
            assert!((g.values[i] - 1.0).abs() < 1e-14);
        }
    }
}

#[test]
fn mollified_indicator_cases() {
    let (a, b) = (-0.5, 0.7);
    let phi = |x: f64| 2.0 + x.cos();
    let (phi_sup, dphi_sup) = (3.0, 1.0);
    for delta in [0.1, 0.2, 0.3] {
        let f = GridFn::sample(-2.0, 2.0, 8001, |x| if (a..=b).contains(&x) { phi(x) } else { 0.0 });
        let ind = GridFn::sample(-2.0, 2.0, 8001, |x| if (a..=b).contains(&x) { 1.0 } else { 0.0 });
        let g = mollify(&f, delta).unwrap();
        let gi = mollify(&ind, delta).unwrap();
        let h = f.h;
        for i in 0..g.values.len() {
            let x = g.x(i);
            let orig = if (a..=b).contains(&x) { phi(x) } else { 0.0 };
            let dev = (g.values[i] - orig).abs();
            if x >= a + delta && x <= b - delta {
                assert!(dev <= dphi_sup * (delta * delta + h) + 1e-12, "x = {x}");
            } else if x < a - delta || x > b + delta {
                assert_eq!(g.values[i], 0.0);
            } else {
                assert!(dev <= phi_sup + 1e-12);
            }
            if (a..=b).contains(&x) {
                assert!(gi.values[i] >= 0.5 - 1e-12, "x = {x}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn walk_invariants(i in 0usize..4, k in 0.5f64..25.0, seed in 0u64..1_000_000, tail in 0usize..6) {
        let nu = &systems()[i];
        let c = nu.ifs().constants();
        let w = walk_sample(nu, k, tail, seed).unwrap();
        prop_assert!(w.overshoot() >= 0.0 && w.overshoot() <= c.d_max + 1e-12);
        prop_assert_eq!(w.s_tau, w.path[w.tau - 1]);
        prop_assert!(w.tau == 1 || w.path[w.tau - 2] < k);
        prop_assert_eq!(&w.tail[..], &w.word[w.tau..w.tau + tail]);
        let mut prev = 0.0;
        for &s in &w.path {
            prop_assert!(s - prev >= c.d_min - 1e-12 && s - prev <= c.d_max + 1e-12);
            prev = s;
        }
    }

    #[test]
    fn renewal_operator_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, t in 0.0f64..6.0) {
        let nu = corpus::uniform(corpus::moebius_pair());
        let f = |y: f64, u: f64| bump(u, 0.0, 1.0) * y;
        let g = |_y: f64, u: f64| bump(u, 0.3, 0.6);
        let mix = |y: f64, u: f64| a * f(y, u) + b * g(y, u);
        let s = (-1.0, 1.0);
        let lhs = renewal_apply(&nu, &mix, s, 0.4, t, enumerate_only()).unwrap().value;
        let rf = renewal_apply(&nu, &f, s, 0.4, t, enumerate_only()).unwrap().value;
        let rg = renewal_apply(&nu, &g, s, 0.4, t, enumerate_only()).unwrap().value;
        prop_assert!((lhs - (a * rf + b * rg)).abs() < 1e-12);
    }
}
