//! Runs one experiment mode and collects its rows.

use rayon::prelude::*;
use s3_core::stats::loglog_slope;
use s3_core::{
    convergence_probe, fd_sensitivity, lyapunov_exponents, run, BuiltinMap64, BuiltinObservable,
    DiscreteMap, FdConfig, ProbeConfig, S3Config, S3Error, SensitivityResult64,
};
use serde_json::json;

use crate::config::{ExperimentConfig, Mode, ScalingAxis};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Result of one experiment: a rectangular table plus an optional summary
/// object and the per-run failures that still produced (partial) rows.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Option<serde_json::Value>,
    pub failures: Vec<String>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            ..Self::default()
        }
    }
}

fn build_map(cfg: &ExperimentConfig, s: f64) -> Result<BuiltinMap64, CliError> {
    let dir = cfg.perturb_dir.as_deref().unwrap_or(&[]);
    BuiltinMap64::from_name(&cfg.map, &cfg.params_at(s), dir)
        .map_err(|e| CliError::config("map", e.to_string()))
}

fn observable(cfg: &ExperimentConfig) -> Result<BuiltinObservable, CliError> {
    BuiltinObservable::from_name(cfg.observable.as_deref().unwrap_or(""))
        .map_err(|e| CliError::config("observable", e.to_string()))
}

fn s3_config(cfg: &ExperimentConfig, n: usize, seed: u64) -> S3Config {
    S3Config {
        n_steps: n,
        warmup: cfg.t,
        k_grid: cfg.k_grid.clone(),
        selected_k: cfg.k,
        deterministic_init: cfg.deterministic_init,
        center_observable: cfg.center,
        record_norms: false,
        batches: cfg.batches,
        seed,
    }
}

fn fd_config(cfg: &ExperimentConfig, delta_s: f64, seed: u64) -> FdConfig {
    FdConfig {
        delta_s,
        n_samples: cfg.n_fd,
        warmup: cfg.t,
        seed,
        chains: cfg.fd_chains,
        batches: cfg.batches,
    }
}

/// One estimator run; numerical failures keep whatever partial result the
/// run produced.
struct Outcome {
    result: Option<SensitivityResult64>,
    error: Option<S3Error>,
}

fn s3_run(map: &BuiltinMap64, obs: &BuiltinObservable, c: &S3Config) -> Result<Outcome, CliError> {
    match run(map, obs, c) {
        Ok(r) => Ok(Outcome {
            result: Some(r),
            error: None,
        }),
        Err(f) if f.error.is_numerical() => Ok(Outcome {
            result: f.partial.map(|b| *b),
            error: Some(f.error),
        }),
        Err(f) => Err(CliError::from(f.error)),
    }
}

fn status(e: &Option<S3Error>) -> Cell {
    match e {
        None => "ok".into(),
        Some(e) => Cell::Text(e.to_string()),
    }
}

/// Central finite-difference reference (optionally Richardson-extrapolated)
/// at offset `s`, unless the config fixes one.
fn reference(
    cfg: &ExperimentConfig,
    obs: &BuiltinObservable,
    s: f64,
) -> Result<(f64, f64), CliError> {
    if let Some(r) = cfg.reference {
        return Ok((r, 0.0));
    }
    let map = build_map(cfg, s)?;
    let d1 = fd_sensitivity(&map, obs, &fd_config(cfg, cfg.delta_s, cfg.fd_seed))?;
    if !cfg.richardson {
        return Ok((d1.mean, d1.stderr));
    }
    let d2 = fd_sensitivity(&map, obs, &fd_config(cfg, 2.0 * cfg.delta_s, cfg.fd_seed))?;
    let se = ((4.0 * d1.stderr).powi(2) + d2.stderr.powi(2)).sqrt() / 3.0;
    Ok(((4.0 * d1.mean - d2.mean) / 3.0, se))
}

/// Runs `cfg` in `mode`. Jobs fan out over the current rayon pool; rows are
/// merged in (sweep index, seed) order.
pub fn run_experiment(cfg: &ExperimentConfig, mode: Mode) -> Result<Table, CliError> {
    match mode {
        Mode::Run => run_mode(cfg),
        Mode::Sweep => sweep_mode(cfg),
        Mode::Converge => converge_mode(cfg),
        Mode::Scaling => match cfg.scaling {
            ScalingAxis::N => scaling_n_mode(cfg),
            ScalingAxis::K => scaling_k_mode(cfg),
        },
        Mode::Lyapunov => lyapunov_mode(cfg),
        Mode::Fd => fd_mode(cfg),
    }
}

fn run_mode(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let map = build_map(cfg, cfg.s)?;
    let obs = observable(cfg)?;
    let outcomes: Vec<Outcome> = cfg
        .seeds
        .par_iter()
        .map(|&seed| s3_run(&map, &obs, &s3_config(cfg, cfg.n, seed)))
        .collect::<Result<_, _>>()?;

    let mut t = Table::new(&[
        "seed",
        "k",
        "stable",
        "stable_stderr",
        "unstable",
        "total",
        "stderr",
        "selected_k",
        "samples",
        "status",
    ]);
    for (&seed, o) in cfg.seeds.iter().zip(&outcomes) {
        if let Some(e) = &o.error {
            t.failures.push(format!("seed {seed}: {e}"));
        }
        let Some(r) = &o.result else {
            t.rows.push(vec![
                seed.into(),
                Cell::Int(0),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                Cell::Int(0),
                Cell::Int(0),
                status(&o.error),
            ]);
            continue;
        };
        for (i, &k) in r.k_grid.iter().enumerate() {
            t.rows.push(vec![
                seed.into(),
                k.into(),
                r.stable.into(),
                r.stable_stderr.into(),
                r.unstable_by_k[i].into(),
                r.total_by_k[i].into(),
                r.stderr_by_k[i].into(),
                r.selected_k.into(),
                r.samples.into(),
                status(&o.error),
            ]);
        }
    }
    Ok(t)
}

fn sweep_mode(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let obs = observable(cfg)?;
    let maps: Vec<BuiltinMap64> = cfg
        .sweep
        .iter()
        .map(|&s| build_map(cfg, s))
        .collect::<Result<_, _>>()?;
    let refs: Vec<(f64, f64)> = cfg
        .sweep
        .par_iter()
        .map(|&s| reference(cfg, &obs, s))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, u64)> = (0..cfg.sweep.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&seed| (i, seed)))
        .collect();
    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|&(i, seed)| s3_run(&maps[i], &obs, &s3_config(cfg, cfg.n, seed)))
        .collect::<Result<_, _>>()?;

    let mut t = Table::new(&[
        "s",
        "seed",
        "k",
        "total",
        "stderr",
        "fd",
        "fd_stderr",
        "rel_err",
        "status",
    ]);
    for (&(i, seed), o) in jobs.iter().zip(&outcomes) {
        if let Some(e) = &o.error {
            t.failures
                .push(format!("s = {}, seed {seed}: {e}", cfg.sweep[i]));
        }
        let (k, total, se) = o.result.as_ref().map_or((0, f64::NAN, f64::NAN), |r| {
            (r.selected_k, r.total, r.stderr)
        });
        let (fd, fd_se) = refs[i];
        t.rows.push(vec![
            cfg.sweep[i].into(),
            seed.into(),
            k.into(),
            total.into(),
            se.into(),
            fd.into(),
            fd_se.into(),
            ((total - fd).abs() / fd.abs()).into(),
            status(&o.error),
        ]);
    }
    Ok(t)
}

fn converge_mode(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let map = build_map(cfg, cfg.s)?;
    let rows = convergence_probe(
        &map,
        &ProbeConfig {
            n_steps: cfg.converge_steps,
            seed_pair: (cfg.seed_pair[0], cfg.seed_pair[1]),
            vary_q0: cfg.vary_q0,
        },
    )?;
    let mut t = Table::new(&["k", "da", "dw", "dq", "du"]);
    t.rows = rows
        .iter()
        .map(|r| {
            vec![
                r.k.into(),
                r.da.into(),
                r.dw.into(),
                r.dq.into(),
                r.du.into(),
            ]
        })
        .collect();
    Ok(t)
}

/// Mean relative error per group, and the log-log slope over groups.
fn scaling_summary(xs: &[usize], errors: &[Vec<f64>], reference: (f64, f64)) -> serde_json::Value {
    let means: Vec<f64> = errors
        .iter()
        .map(|e| e.iter().sum::<f64>() / e.len() as f64)
        .collect();
    let x: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
    json!({
        "reference": reference.0,
        "reference_stderr": reference.1,
        "x": xs,
        "mean_rel_err": means,
        "loglog_slope": loglog_slope(&x, &means),
    })
}

fn scaling_n_mode(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let map = build_map(cfg, cfg.s)?;
    let obs = observable(cfg)?;
    let refv = reference(cfg, &obs, cfg.s)?;
    let jobs: Vec<(usize, u64)> = cfg
        .scaling_n
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&seed| (n, seed)))
        .collect();
    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|&(n, seed)| s3_run(&map, &obs, &s3_config(cfg, n, seed)))
        .collect::<Result<_, _>>()?;

    let mut t = Table::new(&[
        "axis",
        "value",
        "seed",
        "k",
        "total",
        "stderr",
        "reference",
        "rel_err",
        "status",
    ]);
    let mut errors = vec![Vec::new(); cfg.scaling_n.len()];
    for (j, (&(n, seed), o)) in jobs.iter().zip(&outcomes).enumerate() {
        if let Some(e) = &o.error {
            t.failures.push(format!("n = {n}, seed {seed}: {e}"));
        }
        let (k, total, se) = o.result.as_ref().map_or((0, f64::NAN, f64::NAN), |r| {
            (r.selected_k, r.total, r.stderr)
        });
        let rel = (total - refv.0).abs() / refv.0.abs();
        errors[j / cfg.seeds.len()].push(rel);
        t.rows.push(vec![
            "n".into(),
            n.into(),
            seed.into(),
            k.into(),
            total.into(),
            se.into(),
            refv.0.into(),
            rel.into(),
            status(&o.error),
        ]);
    }
    t.summary = Some(scaling_summary(&cfg.scaling_n, &errors, refv));
    Ok(t)
}

fn scaling_k_mode(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let map = build_map(cfg, cfg.s)?;
    let obs = observable(cfg)?;
    let refv = reference(cfg, &obs, cfg.s)?;
    let outcomes: Vec<Outcome> = cfg
        .seeds
        .par_iter()
        .map(|&seed| s3_run(&map, &obs, &s3_config(cfg, cfg.n, seed)))
        .collect::<Result<_, _>>()?;

    let mut t = Table::new(&[
        "axis",
        "value",
        "seed",
        "k",
        "total",
        "stderr",
        "reference",
        "rel_err",
        "status",
    ]);
    let mut errors = vec![Vec::new(); cfg.k_grid.len()];
    let mut rows = Vec::new();
    for (&seed, o) in cfg.seeds.iter().zip(&outcomes) {
        if let Some(e) = &o.error {
            t.failures.push(format!("seed {seed}: {e}"));
        }
        for (i, &k) in cfg.k_grid.iter().enumerate() {
            let (total, se) = o.result.as_ref().map_or((f64::NAN, f64::NAN), |r| {
                (r.total_by_k[i], r.stderr_by_k[i])
            });
            let rel = (total - refv.0).abs() / refv.0.abs();
            errors[i].push(rel);
            rows.push((
                i,
                seed,
                vec![
                    "k".into(),
                    k.into(),
                    seed.into(),
                    k.into(),
                    total.into(),
                    se.into(),
                    refv.0.into(),
                    rel.into(),
                    status(&o.error),
                ],
            ));
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));
    t.rows = rows.into_iter().map(|r| r.2).collect();
    t.summary = Some(scaling_summary(&cfg.k_grid, &errors, refv));
    Ok(t)
}

fn lyapunov_mode(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let map = build_map(cfg, cfg.s)?;
    let spectra: Vec<_> = cfg
        .seeds
        .par_iter()
        .map(|&seed| lyapunov_exponents::<f64, _>(&map, cfg.n, cfg.t, seed))
        .collect::<Result<_, _>>()?;
    let mut t = Table::new(&["seed", "index", "exponent", "stderr"]);
    for (&seed, spec) in cfg.seeds.iter().zip(&spectra) {
        for (i, e) in spec.iter().enumerate() {
            t.rows.push(vec![
                seed.into(),
                (i + 1).into(),
                e.mean.into(),
                e.stderr.into(),
            ]);
        }
    }
    t.summary = Some(json!({ "unstable_dim": map.unstable_dim() }));
    Ok(t)
}

fn fd_mode(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let map = build_map(cfg, cfg.s)?;
    let obs = observable(cfg)?;
    let estimates: Vec<_> = cfg
        .seeds
        .par_iter()
        .map(|&seed| fd_sensitivity(&map, &obs, &fd_config(cfg, cfg.delta_s, seed)))
        .collect::<Result<_, _>>()?;
    let mut t = Table::new(&["seed", "s", "delta_s", "n_fd", "value", "stderr"]);
    for (&seed, e) in cfg.seeds.iter().zip(&estimates) {
        t.rows.push(vec![
            seed.into(),
            cfg.s.into(),
            cfg.delta_s.into(),
            cfg.n_fd.into(),
            e.mean.into(),
            e.stderr.into(),
        ]);
    }
    Ok(t)
}
