//! The five subcommands. Each writes its artifacts into the output
//! directory and finishes with a manifest listing every file it wrote.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use otlab_core::checks::reference_scaling;
use otlab_core::dual::{gd_run, StepsizeSchedule};
use otlab_core::linalg::singular_values;
use otlab_core::oracles::sort_oracle;
use otlab_core::problem::{cost_matrix, grid_instance, random_instance, ProblemInstance};
use otlab_core::prompt::{build_prompt, read_dual};
use otlab_core::sinkhorn::{
    gibbs_kernel, log_marginal_error, mu_log, s_eps_membership, sinkhorn_solve, sinkhorn_sweep, ScalingPair,
};
use otlab_core::transformer::{sort_readout, AuxUpdate, Transformer};
use otlab_core::Matrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::harness::{verify as run_suites, VerifyOptions};
use crate::io::{write_atomic, write_csv, write_json, write_pgm, WeightsFile};
use crate::{Failure, Fault};

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a RunConfig,
    pub metrics: Value,
    pub wall_time_s: f64,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
}

/// Collects written file names relative to a root directory.
struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(root: PathBuf) -> Self {
        Self {
            root,
            files: Vec::new(),
        }
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.root.join(rel)
    }

    fn matrix(&mut self, stem: &str, m: &Matrix) -> anyhow::Result<()> {
        write_csv(&self.path(&format!("{stem}.csv")), m)?;
        write_pgm(&self.path(&format!("{stem}.pgm")), m)
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, metrics: Value, start: Instant) -> anyhow::Result<()> {
        self.files.push("manifest.json".into());
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            metrics,
            wall_time_s: start.elapsed().as_secs_f64(),
            files: self.files.clone(),
        };
        write_json(&self.root.join("manifest.json"), &manifest)
    }
}

/// `d = 1`: the shuffled-grid instance; otherwise uniform points.
fn instance(cfg: &RunConfig, n: usize, lambda: f64) -> Result<ProblemInstance, Failure> {
    Ok(if cfg.d == 1 {
        grid_instance(n, cfg.seed)?.with_lambda(lambda)?
    } else {
        random_instance(n, cfg.d, lambda, cfg.seed)?
    })
}

fn schedule(cfg: &RunConfig) -> StepsizeSchedule {
    match cfg.r {
        Some(r) => StepsizeSchedule::Radius { r },
        None => StepsizeSchedule::Fixed { gamma: cfg.gamma },
    }
}

/// Model and its `(d, λ, γ)`: loaded from `--weights` or constructed.
fn model(cfg: &RunConfig, n_for_gamma: usize) -> Result<(Transformer, WeightsFile), Failure> {
    if let Some(p) = &cfg.weights {
        let file: WeightsFile = crate::io::read_json(p)?;
        if file.d != cfg.d {
            return Err(Failure::Usage(format!(
                "weights are for d = {}, run has d = {}",
                file.d, cfg.d
            )));
        }
        let m = file.to_model()?;
        return Ok((m, file));
    }
    let gamma = schedule(cfg).gamma(n_for_gamma, cfg.lambda);
    let m = Transformer::constructed(cfg.d, cfg.lambda, gamma)?;
    let file = WeightsFile::from_model(&m, cfg.d, cfg.lambda, gamma);
    Ok((m, file))
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn forward_one(
    cfg: &RunConfig,
    model: &Transformer,
    lambda: f64,
    n: usize,
    outs: &mut Outputs,
    prefix: &str,
    log: &mut dyn Write,
) -> Result<Value, Failure> {
    let inst = instance(cfg, n, lambda)?;
    let layers = cfg.export_layers();
    let depth = layers.iter().copied().max().unwrap_or(0);
    let trace = model.run(build_prompt(&inst), depth, AuxUpdate::KeyValueOnly)?;
    let k = gibbs_kernel(&cost_matrix(&inst), lambda)?;
    let star = reference_scaling(&k, cfg.tol, cfg.max_iters, 10_000)?;
    let pstar = star.plan(&k).matrix().clone();
    let mut rows = Vec::new();
    for &l in &layers {
        let m = trace.kernel(l);
        outs.matrix(&format!("{prefix}A_{l:04}"), m)?;
        let (u, v) = read_dual(&trace.states[l]);
        let log_w: Vec<f64> = u.iter().map(|a| a / lambda).collect();
        let log_q: Vec<f64> = v.iter().map(|a| a / lambda).collect();
        let eps = s_eps_membership(m, 0.0).1;
        let frob = m.sub(&pstar)?.frobenius();
        writeln!(log, "n={n} layer {l:>5}: eps* {eps:.3e}  |A - P*|_F {frob:.3e}").ok();
        rows.push(json!({
            "layer": l,
            "eps": eps,
            "frob_to_pstar": frob,
            "mu_w": mu_log(&log_w, &star.log_w),
            "mu_q": mu_log(&log_q, &star.log_q),
        }));
    }
    outs.matrix(&format!("{prefix}Pstar"), &pstar)?;
    let last = trace.kernel(depth);
    let sv = singular_values(last);
    let final_eps = s_eps_membership(last, 0.0).1;
    Ok(json!({
        "n": n,
        "x": inst.x().column(0),
        "final_eps": final_eps,
        "final_eps_within_0.05_over_n": final_eps <= 0.05 / n as f64,
        "singular_value_ratio": sv.last().copied().unwrap_or(0.0) / sv.first().copied().unwrap_or(1.0),
        "checkpoints": rows,
    }))
}

pub fn forward(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), Failure> {
    let start = Instant::now();
    let ns = cfg.ns.clone().unwrap_or_else(|| vec![cfg.n()]);
    if ns.len() > 1 && cfg.r.is_some() {
        return Err(Failure::Usage(
            "--r depends on n and cannot be shared across --ns".into(),
        ));
    }
    let (model, file) = model(cfg, ns[0])?;
    let lambda = file.lambda;
    let mut outs = Outputs::new(cfg.out_dir());
    write_json(&outs.path("weights.json"), &file)?;
    let mut runs = Vec::new();
    for &n in &ns {
        let prefix = if cfg.ns.is_some() {
            format!("n{n}/")
        } else {
            String::new()
        };
        runs.push(forward_one(cfg, &model, lambda, n, &mut outs, &prefix, log)?);
    }
    let metrics = json!({ "lambda": lambda, "gamma": file.gamma, "runs": runs });
    outs.finish("forward", cfg, metrics, start)?;
    Ok(())
}

pub fn sort(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), Failure> {
    let x = cfg.x.clone().ok_or_else(|| Failure::Usage("sort needs --x".into()))?;
    let inst = ProblemInstance::sorting(&x, cfg.lambda)?;
    let (model, _) = model(cfg, x.len())?;
    let trace = model.run(build_prompt(&inst), cfg.depth, AuxUpdate::KeyValueOnly)?;
    let output = sort_readout(&trace, &x)?;
    let target = sort_oracle(&x);
    let error: Vec<f64> = output.iter().zip(&target).map(|(a, b)| (a - b).abs()).collect();
    let max_error = error.iter().copied().fold(0.0, f64::max);
    writeln!(log, "input:       {}", fmt_list(&x)).ok();
    writeln!(log, "transformer: {}", fmt_list(&output)).ok();
    writeln!(log, "sorted:      {}", fmt_list(&target)).ok();
    writeln!(log, "abs error:   {}", fmt_list(&error)).ok();
    writeln!(log, "max error:   {max_error:.4}").ok();
    if let Some(dir) = &cfg.out {
        let report =
            json!({ "input": x, "output": output, "target": target, "abs_error": error, "max_error": max_error });
        write_json(&dir.join("sort.json"), &report)?;
    }
    Ok(())
}

pub fn gd(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), Failure> {
    let start = Instant::now();
    let n = cfg.n();
    let inst = instance(cfg, n, cfg.lambda)?;
    let sched = schedule(cfg);
    let traj = gd_run(&inst, cfg.depth, sched)?;
    let k = gibbs_kernel(&traj.cost, cfg.lambda)?;
    let star = reference_scaling(&k, cfg.tol, cfg.max_iters, 10_000)?;
    let mut csv = String::from("step,grad_u_norm,grad_v_norm,objective,marginal_error,mu_w,mu_q\n");
    for (rec, it) in traj.records.iter().zip(&traj.iterates) {
        let log_w: Vec<f64> = it.u.iter().map(|a| a / cfg.lambda).collect();
        let log_q: Vec<f64> = it.v.iter().map(|a| a / cfg.lambda).collect();
        csv.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            rec.step,
            rec.grad_u_norm,
            rec.grad_v_norm,
            rec.objective,
            rec.marginal_error,
            mu_log(&log_w, &star.log_w),
            mu_log(&log_q, &star.log_q)
        ));
    }
    let mut outs = Outputs::new(cfg.out_dir());
    write_atomic(&outs.path("trajectory.csv"), csv.as_bytes())?;
    let last = traj.records.last().expect("trajectory holds step 0");
    writeln!(
        log,
        "steps {}  gamma {:e}  final eps* {:.3e}  radius {:.4}",
        cfg.depth,
        last.gamma,
        last.marginal_error,
        traj.radius()
    )
    .ok();
    let metrics = json!({
        "n": n,
        "gamma": last.gamma,
        "final_eps": last.marginal_error,
        "final_eps_within_0.05_over_n": last.marginal_error <= 0.05 / n as f64,
        "radius": traj.radius(),
        "min_grad_norm_sq": traj.min_grad_norm_sq(),
    });
    outs.finish("gd", cfg, metrics, start)?;
    Ok(())
}

pub fn sinkhorn(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), Failure> {
    let start = Instant::now();
    let n = cfg.n();
    let inst = instance(cfg, n, cfg.lambda)?;
    let k = gibbs_kernel(&cost_matrix(&inst), cfg.lambda)?;
    let sol = match sinkhorn_solve(&k, cfg.tol, cfg.max_iters) {
        Ok(s) => s,
        Err(e) => {
            writeln!(log, "no convergence: {e}").ok();
            return Err(e.into());
        }
    };
    let mut csv = String::from("sweep,marginal_error,mu_w,mu_q\n");
    let mut s = ScalingPair::ones(n);
    for sweep in 0..=sol.iterations {
        if sweep > 0 {
            s = sinkhorn_sweep(&k, &s);
        }
        csv.push_str(&format!(
            "{sweep},{:e},{:e},{:e}\n",
            log_marginal_error(&s.log_plan(&k)),
            mu_log(&s.log_w, &sol.scaling.log_w),
            mu_log(&s.log_q, &sol.scaling.log_q)
        ));
    }
    let mut outs = Outputs::new(cfg.out_dir());
    write_atomic(&outs.path("sinkhorn.csv"), csv.as_bytes())?;
    outs.matrix("Pstar", sol.plan.matrix())?;
    write_json(
        &outs.path("scaling.json"),
        &json!({ "log_w": sol.scaling.log_w, "log_q": sol.scaling.log_q }),
    )?;
    writeln!(
        log,
        "converged in {} sweeps, eps* {:.3e}",
        sol.iterations,
        sol.plan.marginal_error()
    )
    .ok();
    let metrics = json!({ "n": n, "iterations": sol.iterations, "eps": sol.plan.marginal_error() });
    outs.finish("sinkhorn", cfg, metrics, start)?;
    Ok(())
}

pub fn verify(
    cfg: &RunConfig,
    fault: Option<Fault>,
    report: Option<PathBuf>,
    log: &mut dyn Write,
) -> Result<(), Failure> {
    let opts = VerifyOptions {
        n: cfg.n,
        seed: cfg.seed,
        flip_value_sign: fault == Some(Fault::ValueSignFlip),
    };
    let rep = run_suites(&opts);
    for s in &rep.suites {
        let status = if s.passed() { "PASS" } else { "FAIL" };
        writeln!(
            log,
            "{status} {:<34} trials {:>5}  violations {:>4}  worst slack {:.3e}",
            s.name, s.trials, s.violations, s.worst_slack
        )
        .ok();
        for f in &s.failures {
            writeln!(log, "     {f}").ok();
        }
    }
    let path = report.unwrap_or_else(|| cfg.out_dir().join("report.json"));
    write_report(&path, &rep)?;
    if rep.passed {
        Ok(())
    } else {
        Err(Failure::Verification(
            rep.failing().into_iter().map(String::from).collect(),
        ))
    }
}

fn write_report(path: &Path, rep: &crate::harness::VerifyReport) -> anyhow::Result<()> {
    write_json(path, rep).with_context(|| format!("writing report {}", path.display()))
}
