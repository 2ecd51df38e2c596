use decaylab_core::corpus;
use decaylab_core::ifs::{certify_quadruple, cylinder_interval, induce, uni_bounds, UniQuadruple};
use decaylab_core::measure::{fourier_cylinder, fourier_from_samples, sample_points};
use decaylab_core::random_model::{
    apply_local_transfer, build_model, check_operator_disintegration, depth_for_scale, federer_constant,
    federer_probes, local_words, sample_model_average, sample_mu_omega, triadic_partition, uni_in_parts, RandomModel,
};
use decaylab_core::stats::ks_two_sample;
use decaylab_core::{rng, Error};
use num_complex::Complex64;
use proptest::prelude::*;

fn quadruple() -> UniQuadruple {
    let ifs = induce(&corpus::gauss24(), 2, 64).unwrap();
    certify_quadruple(&ifs, [0, 1, 2, 3]).unwrap()
}

fn model() -> RandomModel {
    let ifs = induce(&corpus::gauss24(), 2, 64).unwrap();
    build_model(&corpus::uniform(ifs), &quadruple()).unwrap()
}

/// Depth-3 GAUSS24: the quadruple plus four extra maps grouped into triples.
fn big_model() -> RandomModel {
    let g3 = induce(&corpus::gauss24(), 3, 64).unwrap();
    let q = certify_quadruple(&g3, [0, 1, 6, 7]).unwrap();
    build_model(&corpus::uniform(g3), &q).unwrap()
}

#[test]
fn model_average_has_law_nu() {
    let m = model();
    let depth = depth_for_scale(&m, 1e-12);
    let avg = sample_model_average(&m, depth, 100_000, 1);
    let direct = sample_points(m.parent(), 100_000, depth, 2);
    let d = ks_two_sample(&avg, &direct);
    assert!(d < 0.02, "KS distance {d}");
}

#[test]
fn measure_disintegration_fourier() {
    let m = model();
    let depth = depth_for_scale(&m, 1e-12);
    let pts = sample_model_average(&m, depth, 400_000, 3);
    for q in [1.0, 5.0, 10.0] {
        let mc = fourier_from_samples(&pts, q);
        let exact = fourier_cylinder(m.parent(), q, 1e-9, 1 << 30).unwrap();
        assert!((mc.value - exact.value).norm() <= 4.0 * mc.stderr_abs() + 1e-9, "q = {q}");
    }
}

#[test]
fn operator_disintegration_residuals() {
    let g = |x: f64| Complex64::new(x.exp(), (2.0 * x).sin());
    let xs: Vec<f64> = (0..17).map(|i| i as f64 / 16.0).collect();
    for m in [model(), big_model()] {
        let r1 = check_operator_disintegration(&m, Complex64::new(0.0, 0.0), 1, &g, &xs, 1 << 24).unwrap();
        assert!(r1 < 1e-13, "{r1}");
        let r2 = check_operator_disintegration(&m, Complex64::new(0.01, 5.0), 2, &g, &xs, 1 << 24).unwrap();
        assert!(r2 < 1e-10, "{r2}");
        match check_operator_disintegration(&m, Complex64::new(0.01, 5.0), 3, &g, &xs, 64) {
            Ok(r3) => assert!(r3 < 1e-10),
            Err(e) => assert!(matches!(e, Error::CostCapExceeded { .. })),
        }
    }
}

#[test]
fn extra_maps_keep_identity_exact() {
    let m = big_model();
    assert!(m.marginal_identity_exact());
    assert!(m.families().len() > 4);
}

#[test]
fn constant_omega_stays_in_sub_ifs() {
    let m = model();
    let omega = vec![0; 12];
    let members = &m.family(0).members;
    let pts = sample_mu_omega(&m, &omega, 12, 2000, 4).unwrap();
    for x in pts {
        let inside = members.iter().any(|&a| {
            let (lo, hi) = cylinder_interval(m.ifs(), &[a]);
            x >= lo - 1e-15 && x <= hi + 1e-15
        });
        assert!(inside, "{x}");
    }
}

#[test]
fn federer_trivial_cases() {
    let m = model();
    let mut r = rng::substream(5, 0);
    let omega = m.random_omega(16, &mut r);
    let probes = federer_probes(&m, &omega, 16, 6, &[1e-3, 1e-2], 1).unwrap();
    let unit = federer_constant(&m, &omega, 1.0, &probes, 16, 20_000, 2).unwrap();
    assert_eq!(unit.c_hat, 1.0);
    let wide: Vec<(f64, f64)> = probes.iter().map(|&(x, _)| (x, 2.0)).collect();
    let all = federer_constant(&m, &omega, 2.0, &wide, 16, 20_000, 2).unwrap();
    assert_eq!(all.c_hat, 1.0);
}

#[test]
fn federer_stable_in_depth() {
    let m = model();
    let (lo, hi) = m.hull();
    let radii = [3e-2 * (hi - lo), 1e-2 * (hi - lo)];
    let mut r = rng::substream(8, 0);
    for i in 0..16 {
        let omega = m.random_omega(20, &mut r);
        let probes = federer_probes(&m, &omega, 20, 6, &radii, i).unwrap();
        let a = federer_constant(&m, &omega, 2.0, &probes, 15, 50_000, 100 + i).unwrap();
        let b = federer_constant(&m, &omega, 2.0, &probes, 20, 50_000, 100 + i).unwrap();
        assert!(a.c_hat.is_finite() && (a.c_hat / b.c_hat - 1.0).abs() <= 0.1);
    }
}

#[test]
fn uni_holds_in_every_part() {
    let m = model();
    let q = m.quadruple().clone();
    let mut r = rng::substream(9, 0);
    let omegas: Vec<Vec<usize>> = (0..32).map(|_| m.random_omega(3, &mut r)).collect();
    let (lo, hi) = uni_in_parts(&m, &omegas, 3).unwrap();
    assert!(lo > 0.0 && lo <= hi);
    // the first-level pair of each part is one of the two quadruple pairs
    let pair_lo = uni_bounds(m.ifs(), &[q.indices[0]], &[q.indices[1]]).0.min(uni_bounds(m.ifs(), &[q.indices[2]], &[q.indices[3]]).0);
    assert!(pair_lo > 0.0);
}

#[test]
fn triadic_partition_on_gauss_model() {
    let m = model();
    let mut r = rng::substream(10, 0);
    for _ in 0..4 {
        let omega = m.random_omega(24, &mut r);
        let p = triadic_partition(&m, &omega, 1.0 / 50.0).unwrap();
        assert!(p.covers_unit && p.triple_ok);
        assert!(p.a1_prime > 0.0 && p.a2 > 0.0);
        for c in &p.cells {
            assert!(c.len() >= p.eps * p.a1_prime * (1.0 - 1e-12) && c.len() <= p.eps * p.a1 * (1.0 + 1e-12));
        }
        let meet = p.meeting();
        for &j in &meet {
            let near = meet.iter().filter(|&&i| i != j && i.abs_diff(j) <= 2).count();
            assert!(near >= 2, "cell {j}");
        }
    }
}

#[test]
fn too_wide_partition_rejected() {
    let m = model();
    let omega = vec![0; 24];
    assert!(matches!(triadic_partition(&m, &omega, 0.9), Err(Error::EpsilonTooLarge { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn local_weights_are_probabilities(seed in 0u64..10_000, n in 1usize..5) {
        let m = model();
        let mut r = rng::substream(seed, 0);
        let omega = m.random_omega(n, &mut r);
        let w = local_words(&m, &omega, n).unwrap();
        prop_assert!((w.iter().map(|t| t.0).sum::<f64>() - 1.0).abs() < 1e-14);
        let grid = m.grid(32);
        let ones = vec![Complex64::new(1.0, 0.0); 32];
        let out = apply_local_transfer(&m, &omega, n, Complex64::new(0.0, 0.0), &grid, &ones).unwrap();
        prop_assert!(out.iter().all(|v| (v - 1.0).norm() < 1e-13));
    }

    #[test]
    fn local_transfer_equivariance(seed in 0u64..10_000, b in -20.0f64..20.0) {
        // P_{s,ω,2N} = P_{s,σ^N ω,N} ∘ P_{s,ω,N}
        let m = model();
        let n = 2;
        let mut r = rng::substream(seed, 1);
        let omega = m.random_omega(2 * n, &mut r);
        let grid = m.grid(256);
        let s = Complex64::new(0.01, b);
        let g = grid.sample(|x| Complex64::new((3.0 * x).cos(), x));
        let once = apply_local_transfer(&m, &omega, 2 * n, s, &grid, &g).unwrap();
        let first = apply_local_transfer(&m, &omega, n, s, &grid, &g).unwrap();
        let twice = apply_local_transfer(&m, &omega[n..], n, s, &grid, &first).unwrap();
        let err = once.iter().zip(&twice).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-9, "{}", err);
    }
}
