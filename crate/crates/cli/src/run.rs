//! One runner per command. Each computes, then writes its artifacts.

use std::path::PathBuf;

use decaylab_core::ifs::{find_uni_quadruple, uni_max_shallow, UniBudget};
use decaylab_core::measure::{fourier_cylinder, fourier_from_samples, SelfConformalMeasure};
use decaylab_core::pipeline::{decay_report, PipelineOptions};
use decaylab_core::random_model::{
    build_model, check_operator_disintegration, depth_for_scale, federer_constant, federer_probes, sample_model_average,
    triadic_partition, uni_in_parts, RandomModel,
};
use decaylab_core::renewal::{
    equidistribution_test, renewal_apply, renewal_limit, RenewalMethod, RenewalOptions, ResidueOptions,
};
use decaylab_core::transfer_op::spectral_gap_scan;
use decaylab_core::{rng, Error};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::config::{Command, ExperimentConfig, Params};
use crate::error::CliError;
use crate::output::{decay_svg, num, opt_num, word, write_atomic, Meta, PlotPoint, Table};

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub command: Command,
    pub files: Vec<PathBuf>,
    /// Command-specific headline numbers for the stdout record.
    pub details: Value,
}

impl RunSummary {
    pub fn record(&self) -> String {
        let files: Vec<String> = self.files.iter().map(|p| p.display().to_string()).collect();
        json!({ "status": "ok", "command": self.command.name(), "files": files, "details": self.details }).to_string()
    }
}

pub fn run(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let nu = config.measure()?;
    let meta = Meta::new(config);
    let mut out = Artifacts { config, meta, files: Vec::new() };
    let details = match &config.params {
        Params::UniCheck { max_generation, induce_cap } => uni_check(&nu, *max_generation, *induce_cap, &mut out)?,
        Params::ModelVerify { .. } => model_verify(&nu, config, &mut out)?,
        Params::SpectralScan { a, b, n, m } => spectral_scan(&nu, *a, b, *n, *m, config.eps, &mut out)?,
        Params::RenewalTest { k, t, tail_len, n_mc, g } => renewal_test(&nu, config, k, t, *tail_len, *n_mc, g, &mut out)?,
        Params::DecayReport { q_min, q_max, n_points, n_mc, tol } => {
            let opts = PipelineOptions {
                n_mc: *n_mc,
                seed: config.seed.expect("validated"),
                eps: config.eps,
                tol: *tol,
                cap: config.cost_caps.leaves as u128,
            };
            decay(&nu, (*q_min, *q_max), *n_points, opts, &mut out)?
        }
    };
    Ok(RunSummary { command: config.command, files: out.files, details })
}

struct Artifacts<'a> {
    config: &'a ExperimentConfig,
    meta: Meta,
    files: Vec<PathBuf>,
}

impl Artifacts<'_> {
    fn csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let path = write_atomic(&self.config.out, name, table.render(&self.meta).as_bytes())?;
        self.files.push(path);
        Ok(())
    }

    fn raw(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = write_atomic(&self.config.out, name, text.as_bytes())?;
        self.files.push(path);
        Ok(())
    }
}

fn uni_check(nu: &SelfConformalMeasure, max_generation: usize, induce_cap: usize, out: &mut Artifacts) -> Result<Value, CliError> {
    let shallow = uni_max_shallow(nu.ifs());
    let mut t = Table::new(&[
        "verdict",
        "generation",
        "case",
        "word1",
        "word2",
        "word3",
        "word4",
        "m",
        "m_prime",
        "min_gap",
        "gap_target",
        "uni_max_shallow",
    ]);
    let verdict = match find_uni_quadruple(nu.ifs(), UniBudget { max_generation, induce_cap }) {
        Ok(q) => {
            t.push(vec![
                "UNI".into(),
                q.generation.to_string(),
                format!("{:?}", q.case),
                word(&q.words[0]),
                word(&q.words[1]),
                word(&q.words[2]),
                word(&q.words[3]),
                num(q.m),
                num(q.m_prime),
                num(q.min_gap),
                num(q.gap_target),
                num(shallow),
            ]);
            "UNI"
        }
        Err(Error::NotUni(_)) => {
            let mut row = vec!["NOT-UNI".to_string()];
            row.extend(std::iter::repeat_n(String::new(), 10));
            row.push(num(shallow));
            t.push(row);
            "NOT-UNI"
        }
        Err(e) => return Err(e.into()),
    };
    out.csv("uni_check.csv", &t)?;
    Ok(json!({ "verdict": verdict, "uni_max_shallow": shallow }))
}

fn searched_model(nu: &SelfConformalMeasure) -> Result<RandomModel, CliError> {
    let budget = UniBudget::default();
    let q = find_uni_quadruple(nu.ifs(), budget)?;
    let induced = nu.induced(q.generation, budget.induce_cap)?;
    Ok(build_model(&induced, &q)?)
}

fn model_verify(nu: &SelfConformalMeasure, config: &ExperimentConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    let Params::ModelVerify { n_omega, prefix_len, federer_samples, radii, depths, partition_eps } = &config.params else {
        unreachable!()
    };
    let seed = config.seed.expect("validated");
    let cap = config.cost_caps.leaves as u128;
    let model = searched_model(nu)?;
    let mut t = Table::new(&["check_name", "omega_prefix", "statistic", "bound", "pass"]);
    let mut passed = 0usize;
    let mut push = |name: &str, omega: &str, stat: f64, bound: Option<f64>, pass: bool| {
        passed += pass as usize;
        t.push(vec![name.into(), omega.into(), num(stat), opt_num(bound), pass.to_string()]);
    };

    push("marginal_identity", "", model.marginal_residual(), Some(0.0), model.marginal_identity_exact());

    let (lo, hi) = model.hull();
    let xs: Vec<f64> = (0..17).map(|i| lo + (hi - lo) * i as f64 / 16.0).collect();
    let g = |x: f64| Complex64::new(x.exp(), (2.0 * x).sin());
    for (n, s) in [(1, Complex64::new(0.0, 0.0)), (2, Complex64::new(0.01, 5.0))] {
        let r = check_operator_disintegration(&model, s, n, &g, &xs, cap)?;
        push(&format!("operator_disintegration_n{n}"), "", r, Some(1e-10), r < 1e-10);
    }

    let depth = depth_for_scale(&model, 1e-12);
    let pts = sample_model_average(&model, depth, *federer_samples, rng::derive(seed, 0x5a));
    for q in [1.0, 5.0, 10.0] {
        let mc = fourier_from_samples(&pts, q);
        let exact = fourier_cylinder(model.parent(), q, 1e-9, cap)?;
        let z = (mc.value - exact.value).norm() / mc.stderr_abs().max(f64::MIN_POSITIVE);
        push(&format!("measure_disintegration_q{q}"), "", z, Some(4.0), z <= 4.0);
    }

    let width = hi - lo;
    let abs_radii: Vec<f64> = radii.iter().map(|r| r * width).collect();
    let mut omegas = Vec::with_capacity(*n_omega);
    for i in 0..*n_omega {
        let mut r = rng::substream(seed, 0x1000 + i as u64);
        let omega = model.random_omega(*prefix_len, &mut r);
        let tag = word(&omega);
        let probe_seed = rng::derive(seed, 0x2000 + i as u64);
        let probes = federer_probes(&model, &omega, depths[1], 6, &abs_radii, probe_seed)?;
        let sample_seed = rng::derive(seed, 0x3000 + i as u64);
        let a = federer_constant(&model, &omega, 2.0, &probes, depths[0], *federer_samples, sample_seed)?;
        let b = federer_constant(&model, &omega, 2.0, &probes, depths[1], *federer_samples, sample_seed)?;
        let change = (a.c_hat / b.c_hat - 1.0).abs();
        push("federer_depth_stability", &tag, change, Some(0.1), a.c_hat.is_finite() && change <= 0.1);
        push("federer_constant", &tag, b.c_hat, None, b.c_hat.is_finite());

        let p = triadic_partition(&model, &omega, *partition_eps)?;
        push("triadic_partition_cells", &tag, p.cells.len() as f64, None, p.covers_unit && p.triple_ok);
        push("triadic_partition_a2", &tag, p.a2, Some(0.0), p.a2 > 0.0);
        omegas.push(omega);
    }
    // a common tail scales the functional by |tail'|, which on deep induced
    // systems drops below double precision; the pair itself is what is certified
    let (m, m_prime) = uni_in_parts(&model, &omegas, 1)?;
    push("uni_in_parts_min", "", m, Some(0.0), m > 0.0);
    push("uni_in_parts_max", "", m_prime, None, m_prime >= m);

    let total = t.len();
    out.csv("model_verify.csv", &t)?;
    Ok(json!({
        "generation": model.quadruple().generation,
        "families": model.families().len(),
        "checks": total,
        "passed": passed,
    }))
}

fn spectral_scan(
    nu: &SelfConformalMeasure,
    a: f64,
    b: &[f64],
    n: usize,
    m: usize,
    eps: f64,
    out: &mut Artifacts,
) -> Result<Value, CliError> {
    let report = spectral_gap_scan(nu, a, b, n, m, eps)?;
    let mut t = Table::new(&["a", "b", "n", "alpha", "C", "gamma_fit", "M"]);
    for r in &report.rows {
        t.push(vec![num(report.a), num(r.b), report.n.to_string(), num(r.alpha), num(r.c), num(report.gamma), report.m.to_string()]);
    }
    out.csv("spectral_scan.csv", &t)?;
    let max_alpha = report.rows.iter().map(|r| r.alpha).fold(0.0, f64::max);
    Ok(json!({ "max_alpha": max_alpha, "gamma_fit": finite(report.gamma) }))
}

fn bump(u: f64, center: f64, half: f64) -> f64 {
    let v = (u - center) / half;
    if v.abs() < 1.0 {
        (-1.0 / (1.0 - v * v)).exp()
    } else {
        0.0
    }
}

#[allow(clippy::too_many_arguments)]
fn renewal_test(
    nu: &SelfConformalMeasure,
    config: &ExperimentConfig,
    k_list: &[f64],
    t_list: &[f64],
    tail_len: usize,
    n_mc: usize,
    g_name: &str,
    out: &mut Artifacts,
) -> Result<Value, CliError> {
    let seed = config.seed.expect("validated");
    let g: &(dyn Fn(f64) -> f64 + Sync) = match g_name {
        "one" => &|_| 1.0,
        "identity" => &|u| u,
        _ => &|u| bump(u, 1.0, 0.8),
    };
    let report = equidistribution_test(nu, g, k_list, ResidueOptions { tail_len, n_mc, seed })?;
    let lim = report.limit.value;
    let mut t = Table::new(&["k", "bin", "estimate", "limit", "error", "stderr", "count"]);
    for row in &report.rows {
        let tab = &row.table;
        t.push(vec![
            num(row.k),
            "all".into(),
            num(tab.overall),
            num(lim),
            num(row.error),
            num(tab.overall_stderr),
            tab.bins.iter().map(|b| b.count).sum::<u64>().to_string(),
        ]);
        for b in tab.bins.iter().filter(|b| b.count > 0) {
            t.push(vec![
                num(row.k),
                word(&b.prefix),
                num(b.mean),
                num(lim),
                num((b.mean - lim).abs()),
                num(b.stderr),
                b.count.to_string(),
            ]);
        }
    }
    out.csv("residues.csv", &t)?;

    // Rf(z, t) for a bump in the gap variable, started at the base point
    let f = |_y: f64, u: f64| bump(u, 0.5, 1.0);
    let support = (-0.5, 1.5);
    let z = nu.ifs().base_point();
    let cap = config.cost_caps.leaves as u128;
    let limit = renewal_limit(nu, &f, support, 1e9, n_mc, rng::derive(seed, 0x400));
    let mut r = Table::new(&["t", "Rf", "truncation_bound", "method", "limit", "limit_stderr"]);
    for (i, &tt) in t_list.iter().enumerate() {
        let opts = RenewalOptions { cap, mc_samples: n_mc, seed: rng::derive(seed, 0x300 + i as u64) };
        let v = renewal_apply(nu, &f, support, z, tt, opts)?;
        let method = match v.method {
            RenewalMethod::Enumeration => "enumeration",
            RenewalMethod::MonteCarlo => "monte_carlo",
        };
        r.push(vec![num(tt), num(v.value), num(v.stderr), method.into(), num(limit.value), num(limit.stderr)]);
    }
    out.csv("renewal.csv", &r)?;
    Ok(json!({
        "limit": lim,
        "errors": report.rows.iter().map(|r| r.error).collect::<Vec<_>>(),
        "noise_floors": report.rows.iter().map(|r| r.noise_floor).collect::<Vec<_>>(),
        "decreasing": report.decreasing,
        "rate": report.rate.map(|(r, se)| json!({ "rate": r, "stderr": se })),
    }))
}

fn decay(
    nu: &SelfConformalMeasure,
    range: (f64, f64),
    n_points: usize,
    opts: PipelineOptions,
    out: &mut Artifacts,
) -> Result<Value, CliError> {
    let rep = decay_report(nu, range, n_points, opts)?;

    let mut blocks = Table::new(&["q_lo", "q_hi", "sup", "sup_integer", "argmax", "n_samples"]);
    if let Some(fit) = &rep.fit {
        for b in &fit.blocks {
            blocks.push(vec![num(b.q_lo), num(b.q_hi), num(b.sup), num(b.sup_integer), num(b.argmax), b.n_samples.to_string()]);
        }
    }
    out.csv("decay_blocks.csv", &blocks)?;

    let mut points = Table::new(&[
        "q",
        "k",
        "r",
        "lhs",
        "rhs_main",
        "rhs_stderr",
        "error_term",
        "slack",
        "slack_stderr",
        "holds",
        "push_min",
        "push_max",
        "osc_integral",
        "osc_stderr",
        "sup_mass",
        "osc_bound",
    ]);
    for p in &rep.points {
        let (l, o) = (&p.linearization, &p.oscillatory);
        points.push(vec![
            num(p.entry.q),
            num(p.entry.k),
            num(p.entry.r),
            num(l.lhs),
            num(l.rhs_main),
            num(l.rhs_stderr),
            num(l.error_term),
            num(l.slack),
            num(l.slack_stderr),
            l.holds(4.0).to_string(),
            num(l.push_min),
            num(l.push_max),
            num(o.integral),
            num(o.stderr),
            num(o.sup_mass),
            num(o.bound),
        ]);
    }
    out.csv("decay_points.csv", &points)?;

    let mut summary = Table::new(&["key", "value"]);
    let mut kv = |k: String, v: String| summary.push(vec![k, v]);
    kv("alpha".into(), num(rep.alpha));
    kv("lattice_span".into(), opt_num(rep.lattice));
    kv("block_ratio".into(), num(rep.block_ratio));
    kv("induced_depth".into(), rep.induced_depth.to_string());
    kv("linearization_ok".into(), num(rep.linearization_ok));
    kv("eps".into(), num(rep.eps));
    for (e, a) in &rep.alpha_per_k {
        kv(format!("alpha_per_k_eps_{}", num(*e)), num(*a));
    }
    for row in &rep.predictions {
        kv(format!("predicted_rate_{}", row.term), num(row.predicted_rate));
        kv(format!("measured_rate_{}", row.term), opt_num(row.measured_rate));
    }
    out.csv("decay_summary.csv", &summary)?;

    let plot: Vec<PlotPoint> = rep
        .fit
        .iter()
        .flat_map(|f| f.blocks.iter())
        .map(|b| PlotPoint { q: (b.q_lo * b.q_hi).sqrt(), sup: b.sup })
        .collect();
    let line = rep.fit.as_ref().map(|f| (f.intercept, f.alpha));
    let title = match &rep.fit {
        Some(f) => format!("block sups, fitted exponent {:.4}", f.alpha),
        None => "block sups (range too short for a fit)".to_string(),
    };
    out.raw("decay_report.svg", &decay_svg(&title, &plot, line))?;

    Ok(json!({
        "alpha": finite(rep.alpha),
        "lattice_span": rep.lattice,
        "linearization_ok": finite(rep.linearization_ok),
        "induced_depth": rep.induced_depth,
    }))
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}
