//! Subcommand bodies. Result files are written atomically (temp file in the
//! target directory, then rename), so a partially written artifact is never
//! observable at the output path.

use std::io::Write;
use std::path::Path;

use anyhow::Context;

use scalim_core::analysis::{
    self, run_property_suite, sweep_truncation_floor, SolverOptions, SuiteOptions, TestVectorSet,
};
use scalim_core::assembly::Model;

use crate::config::RunConfig;
use crate::{EXIT_CHECK_FAILURE, EXIT_UNCONVERGED};

fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".scalim-tmp-")
        .tempfile_in(dir)
        .context("cannot create temp file")?;
    tmp.write_all(contents).context("cannot write temp file")?;
    tmp.flush()?;
    let target = dir.join(name);
    tmp.persist(&target)
        .with_context(|| format!("cannot move result into place at {}", target.display()))?;
    Ok(())
}

fn solver_options(config: &RunConfig) -> SolverOptions {
    SolverOptions {
        tol: config.solver_tol,
        max_iter: config.max_iterations,
        restart: None,
    }
}

pub fn run_check(config: &RunConfig, out_dir: &Path) -> anyhow::Result<u8> {
    let suite = run_property_suite(
        config.model_config(),
        &SuiteOptions {
            seed: config.seed,
            trials: config.suite_trials,
            lambda: 1.0,
        },
    );
    write_atomic(out_dir, "check.json", suite.to_json().as_bytes())?;
    println!("seed={}", config.seed);
    for (name, check) in &suite.checks {
        let verdict = match check.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "vacuous",
        };
        match (check.residual, check.threshold) {
            (Some(r), Some(t)) => {
                println!("check {name}: {verdict} (residual={r:.3e}, threshold={t:.3e})")
            }
            _ => println!("check {name}: {verdict} ({})", check.details),
        }
    }
    let all = suite.all_pass();
    println!(
        "property suite: {} ({} checks)",
        if all { "PASS" } else { "FAIL" },
        suite.checks.len()
    );
    Ok(if all { 0 } else { EXIT_CHECK_FAILURE })
}

pub fn run_sweep(config: &RunConfig, out_dir: &Path) -> anyhow::Result<u8> {
    let model = Model::new(config.model_config())?;
    let vectors = TestVectorSet::standard(&model)?;
    let opts = solver_options(config);
    let records = analysis::sweep_lambda(&model, &config.lambda_list, config.z(), &vectors, &opts)?;

    let mut buf = Vec::new();
    analysis::write_sweep_csv(&mut buf, &records)?;
    write_atomic(out_dir, "sweep.csv", &buf)?;

    println!("seed={}", config.seed);
    for r in &records {
        println!(
            "sweep lambda={} vector={} error={:.6e} residual={:.3e}{}",
            r.lambda,
            r.vector_id,
            r.error,
            r.residual,
            if r.converged { "" } else { " UNCONVERGED" }
        );
    }
    // truncation floor: where Λ-convergence claims must stop
    let last = *config.lambda_list.last().expect("validated nonempty");
    match sweep_truncation_floor(&model, last, config.z(), &opts) {
        Ok(floor) => println!("truncation floor at lambda={last}: {floor:.6e}"),
        Err(e) => println!("truncation floor unavailable: {e}"),
    }

    if records.iter().any(|r| !r.converged) {
        eprintln!("one or more resolvent solves did not converge");
        return Ok(EXIT_UNCONVERGED);
    }
    Ok(0)
}

pub fn run_evolve(config: &RunConfig, out_dir: &Path) -> anyhow::Result<u8> {
    let model = Model::new(config.model_config())?;
    let vectors = TestVectorSet::standard(&model)?;
    let records =
        analysis::evolve_sweep(&model, &config.lambda_list, &config.t_list, &vectors)?;

    let mut buf = Vec::new();
    analysis::write_evolution_csv(&mut buf, &records)?;
    write_atomic(out_dir, "evolve.csv", &buf)?;

    println!("seed={}", config.seed);
    for r in &records {
        println!(
            "evolve lambda={} t={} vector={} error={:.6e} unitarity_defect={:.3e}",
            r.lambda, r.t, r.vector_id, r.error, r.unitarity_defect
        );
    }
    let worst = records
        .iter()
        .map(|r| r.unitarity_defect)
        .fold(0.0f64, f64::max);
    if worst > 1e-10 {
        eprintln!("propagator unitarity defect {worst:.3e} exceeds 1e-10");
        return Ok(EXIT_UNCONVERGED);
    }
    Ok(0)
}

pub fn run_veff(config: &RunConfig, out_dir: &Path) -> anyhow::Result<u8> {
    let model = Model::new(config.model_config())?;
    let veff = model.effective_potential()?;

    let mut buf = Vec::new();
    analysis::write_veff_csv(&mut buf, &model, &veff)?;
    write_atomic(out_dir, "veff.csv", &buf)?;

    let lo = veff.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = veff
        .values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    println!("v_eff over {} tuples: min={lo:.9}, max={hi:.9}", veff.values.len());
    match model.effective_potential_remark() {
        Ok(remark) => {
            let dev = veff.max_abs_deviation(&remark);
            println!("closed-form cross-check deviation: {dev:.3e}");
        }
        Err(e) => println!("closed-form cross-check unavailable: {e}"),
    }
    Ok(0)
}
