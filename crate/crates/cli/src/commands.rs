use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gsr_core::analysis::{build_matrix, calibrate_threshold, compare_methods, convergence_study};
use gsr_core::oracle::{simulate_run_length, SimulationConfig};
use gsr_core::{
    solve_arl, survival_series, ChangePointModel, KernelMatrix, Method, Moments, Psi, SurvivalOptions,
    SurvivalSeries,
};

use crate::args::*;
use crate::report::{Cell, Report};
use crate::CliError;

fn model(args: &ModelArgs) -> Result<ChangePointModel, CliError> {
    let psi = match args.psi {
        PsiKind::Gsr => Psi::Gsr,
        PsiKind::Cusum => Psi::Cusum,
    };
    Ok(ChangePointModel::with_psi(args.theta, psi)?)
}

fn method(kind: MethodKind) -> Method {
    match kind {
        MethodKind::Hat => Method::CollocationHat,
        MethodKind::Midpoint => Method::Midpoint,
    }
}

/// `A`, plus `Some(A)` when it had to be calibrated from `--gamma`.
fn threshold(m: &ChangePointModel, args: &ThresholdArgs, r: f64) -> Result<(f64, Option<f64>), CliError> {
    match (args.source.threshold, args.source.gamma) {
        (Some(a), None) => Ok((a, None)),
        (None, Some(gamma)) => {
            let c = calibrate_threshold(m, gamma, r, args.calibration_nodes, args.rel_tol)?;
            Ok((c.threshold, Some(c.threshold)))
        }
        _ => Err(CliError::Usage("exactly one of --threshold and --gamma is required".into())),
    }
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn run(command: &Command) -> Result<(Report, &OutputArgs), CliError> {
    match command {
        Command::Arl(a) => Ok((arl(a)?, &a.output)),
        Command::Moments(a) => Ok((moments(a)?, &a.output)),
        Command::Survival(a) => Ok((survival(a, false)?, &a.output)),
        Command::Pmf(a) => Ok((survival(a, true)?, &a.output)),
        Command::Pfa(a) => Ok((pfa(a)?, &a.output)),
        Command::Calibrate(a) => Ok((calibrate(a)?, &a.output)),
        Command::Converge(a) => Ok((converge(a)?, &a.output)),
        Command::Compare(a) => Ok((compare(a)?, &a.output)),
        Command::Simulate(a) => Ok((simulate(a)?, &a.output)),
        Command::Replay(_) => Err(CliError::Usage("replay cannot be nested".into())),
    }
}

fn arl(a: &ArlArgs) -> Result<Report, CliError> {
    let m = model(&a.model)?;
    let (thr, calibrated) = threshold(&m, &a.threshold, a.headstart)?;
    let k = build_matrix(&m, thr, a.nodes, method(a.method))?;
    if let Some(path) = &a.dump_matrix {
        write_file(path, |w| k.write_csv(w))?;
    }
    let value = solve_arl(k)?.evaluate_iterated(a.headstart)?;
    let config = a
        .threshold
        .canonical(a.model.canonical(Canonical::new("arl")))
        .num("headstart", a.headstart)
        .flag("nodes", a.nodes)
        .flag("method", a.method.name())
        .flag("format", a.output.format.name())
        .finish();
    let mut r = Report::new(config, calibrated, &["N", "method", "r", "value"]);
    r.push(vec![a.nodes.into(), a.method.name().into(), a.headstart.into(), value.into()]);
    Ok(r)
}

fn moments(a: &MomentsArgs) -> Result<Report, CliError> {
    let m = model(&a.model)?;
    let first = *a.headstart.first().ok_or_else(|| CliError::Usage("no headstart given".into()))?;
    let (thr, calibrated) = threshold(&m, &a.threshold, first)?;
    let sol = Moments::solve(build_matrix(&m, thr, a.nodes, method(a.method))?)?;
    let config = a
        .threshold
        .canonical(a.model.canonical(Canonical::new("moments")))
        .nums("headstart", &a.headstart)
        .flag("nodes", a.nodes)
        .flag("method", a.method.name())
        .flag("format", a.output.format.name())
        .finish();
    let mut r = Report::new(config, calibrated, &["r", "arl", "stddev"]);
    for &x in &a.headstart {
        let (l, sd) = sol.at(x)?;
        r.push(vec![x.into(), l.into(), sd.into()]);
    }
    Ok(r)
}

fn series(
    m: &ChangePointModel,
    thr: f64,
    nodes: usize,
    kind: MethodKind,
    r: f64,
    horizon: Option<usize>,
    epsilon_tail: f64,
) -> Result<(KernelMatrix, f64, SurvivalSeries), CliError> {
    let k = build_matrix(m, thr, nodes, method(kind))?;
    let arl = solve_arl(k.clone())?.evaluate_iterated(r)?;
    let k_max = horizon.unwrap_or_else(|| SurvivalOptions::for_arl(arl).k_max);
    let s = survival_series(&k, r, SurvivalOptions { epsilon_tail, k_max })?;
    Ok((k, arl, s))
}

fn survival(a: &SurvivalArgs, pmf_only: bool) -> Result<Report, CliError> {
    let m = model(&a.model)?;
    let (thr, calibrated) = threshold(&m, &a.threshold, a.headstart)?;
    let (_, arl, s) = series(&m, thr, a.nodes, a.method, a.headstart, a.horizon, a.epsilon_tail)?;
    let pmf = s.pmf()?;
    let mut c = a
        .threshold
        .canonical(a.model.canonical(Canonical::new(if pmf_only { "pmf" } else { "survival" })))
        .num("headstart", a.headstart)
        .flag("nodes", a.nodes)
        .flag("method", a.method.name());
    if let Some(h) = a.horizon {
        c = c.flag("horizon", h);
    }
    let config = c.num("epsilon-tail", a.epsilon_tail).flag("format", a.output.format.name()).finish();
    if pmf_only {
        let mut r = Report::new(config, calibrated, &["k", "pmf"]);
        for (i, p) in pmf.iter().enumerate() {
            r.push(vec![(i + 1).into(), (*p).into()]);
        }
        return Ok(r);
    }
    let q = 1.0 - 1.0 / arl;
    let mut r = Report::new(config, calibrated, &["k", "rho", "pmf", "geom_ref"]);
    for (k, &rho) in s.values().iter().enumerate() {
        let p = if k == 0 { 0.0 } else { pmf[k - 1] };
        r.push(vec![k.into(), rho.into(), p.into(), q.powi(k as i32).into()]);
    }
    Ok(r)
}

fn pfa(a: &PfaArgs) -> Result<Report, CliError> {
    let m = model(&a.model)?;
    let (thr, calibrated) = threshold(&m, &a.threshold, a.headstart)?;
    let end = a.k.iter().max().copied().unwrap_or(0) + a.m.iter().max().copied().unwrap_or(0);
    let (_, _, s) = series(&m, thr, a.nodes, a.method, a.headstart, Some(end.max(1)), f64::MIN_POSITIVE)?;
    let config = a
        .threshold
        .canonical(a.model.canonical(Canonical::new("pfa")))
        .num("headstart", a.headstart)
        .flag("nodes", a.nodes)
        .flag("method", a.method.name())
        .list("k", &a.k)
        .list("m", &a.m)
        .flag("format", a.output.format.name())
        .finish();
    let mut r = Report::new(config, calibrated, &["k", "m", "pfa"]);
    for &k in &a.k {
        for &w in &a.m {
            let value = if k + w > s.horizon() {
                // the series stopped early because survival hit zero
                return Err(gsr_core::Error::UndefinedConditional { k }.into());
            } else {
                s.conditional_pfa(k, w)?
            };
            r.push(vec![k.into(), w.into(), value.into()]);
        }
    }
    Ok(r)
}

fn calibrate(a: &CalibrateArgs) -> Result<Report, CliError> {
    let m = model(&a.model)?;
    let c = calibrate_threshold(&m, a.gamma, a.headstart, a.nodes, a.rel_tol)?;
    let config = a
        .model
        .canonical(Canonical::new("calibrate"))
        .num("gamma", a.gamma)
        .num("headstart", a.headstart)
        .flag("nodes", a.nodes)
        .num("rel-tol", a.rel_tol)
        .flag("format", a.output.format.name())
        .finish();
    let mut r = Report::new(config, Some(c.threshold), &["gamma", "threshold", "achieved", "iterations"]);
    r.push(vec![c.gamma.into(), c.threshold.into(), c.achieved.into(), c.iterations.into()]);
    Ok(r)
}

fn converge(a: &ConvergeArgs) -> Result<Report, CliError> {
    let m = model(&a.model)?;
    let (thr, calibrated) = threshold(&m, &a.threshold, a.headstart)?;
    let methods: Vec<&str> = a.method.iter().map(|k| k.name()).collect();
    let config = a
        .threshold
        .canonical(a.model.canonical(Canonical::new("converge")))
        .num("headstart", a.headstart)
        .list("nodes", &a.nodes.0)
        .list("method", &methods)
        .flag("probe-points", a.probe_points)
        .flag("format", a.output.format.name())
        .finish();
    let mut r = Report::new(config, calibrated, &["N", "method", "value", "rate", "err_est"]);
    for &kind in &a.method {
        let rep = convergence_study(&m, thr, a.headstart, &a.nodes.0, method(kind), a.probe_points)?;
        for row in rep.rows {
            r.push(vec![row.n.into(), kind.name().into(), row.value.into(), row.rate.into(), row.err_est.into()]);
        }
    }
    Ok(r)
}

fn compare(a: &CompareArgs) -> Result<Report, CliError> {
    let m = model(&a.model)?;
    let (thr, calibrated) = threshold(&m, &a.threshold, a.headstart)?;
    let cmp = compare_methods(&m, thr, a.headstart, &a.nodes.0, a.probe_points)?;
    let config = a
        .threshold
        .canonical(a.model.canonical(Canonical::new("compare")))
        .num("headstart", a.headstart)
        .list("nodes", &a.nodes.0)
        .flag("probe-points", a.probe_points)
        .flag("format", a.output.format.name())
        .finish();
    let mut r = Report::new(config, calibrated, &["N", "method", "value", "ref_error", "rate"]);
    for row in cmp.rows {
        r.push(vec![row.n.into(), row.method.name().into(), row.value.into(), row.ref_error.into(), row.rate.into()]);
    }
    Ok(r)
}

fn simulate(a: &SimulateArgs) -> Result<Report, CliError> {
    let m = model(&a.model)?;
    let (thr, calibrated) = threshold(&m, &a.threshold, a.headstart)?;
    let mut cfg = SimulationConfig::new(thr, a.headstart, a.paths, a.seed);
    if let Some(cap) = a.cap {
        cfg = cfg.with_cap(cap);
    }
    let run = simulate_run_length(&m, cfg)?;
    if let Some(path) = &a.histogram {
        write_file(path, |w| {
            writeln!(w, "run_length,count")?;
            for (t, n) in run.histogram() {
                writeln!(w, "{t},{n}")?;
            }
            Ok(())
        })?;
    }
    let mut c = a
        .threshold
        .canonical(a.model.canonical(Canonical::new("simulate")))
        .num("headstart", a.headstart)
        .flag("paths", a.paths)
        .flag("seed", a.seed)
        .flag("cap", cfg.cap);
    if !a.k.is_empty() {
        c = c.list("k", &a.k);
    }
    if !a.m.is_empty() {
        c = c.list("m", &a.m);
    }
    let config = c.flag("format", a.output.format.name()).finish();

    let mut estimates = vec![("arl".to_string(), run.arl()), ("stddev".to_string(), run.std_dev())];
    for &k in &a.k {
        estimates.push((format!("survival(k={k})"), run.survival(k)));
        for &w in &a.m {
            estimates.push((format!("pfa(k={k};m={w})"), run.conditional_pfa(k, w)?));
        }
    }
    let mut r = Report::new(config, calibrated, &["quantity", "estimate", "std_error", "paths", "seed", "cap", "capped"]);
    for (name, e) in estimates {
        r.push(vec![
            Cell::Text(name),
            e.estimate.into(),
            e.std_error.into(),
            e.paths.into(),
            e.seed.into(),
            e.cap.into(),
            e.capped.into(),
        ]);
    }
    Ok(r)
}
