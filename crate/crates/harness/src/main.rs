//! Command-line front end: run scenario files, print space diagnostics,
//! build and verify dyadic systems, and sweep a scenario directory.
//!
//! Exit codes: 0 when every expectation or property holds, 1 when a run
//! completes but something fails, 2 on operational errors (bad paths,
//! malformed files, invalid parameters).

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use homspace::report::{ReportFormat, RunReport};
use homspace::scenario::{load_scenario, run_scenario, system_failures, RunOptions};
use homspace_core::dyadic::{
    admissible_delta_adjacent, admissible_delta_single, adjacent_cover_check,
    build_adjacent_systems, build_system, verify_system,
};
use homspace_core::space::{structure_report, Space};

#[derive(Parser)]
#[command(name = "homspace", version, about = "Checks on finite spaces of homogeneous type")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file and report each check.
    Run {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Directory to write <scenario>.json / <scenario>.csv into.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated output formats (csv, json).
        #[arg(long, default_value = "csv,json")]
        format: String,
        /// Replaces the seed of a random-cloud generator.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print structural diagnostics of a space file.
    Diag {
        /// Space JSON file (ids, distance table, masses).
        space: PathBuf,
    },
    /// Build dyadic systems on a space file and verify every property.
    Dyadic {
        /// Space JSON file.
        space: PathBuf,
        /// Scale ratio; defaults to the admissible value.
        #[arg(long)]
        delta: Option<f64>,
        /// Build this many adjacent systems instead of a single one.
        #[arg(long)]
        adjacent: Option<usize>,
    },
    /// Run every scenario in a directory and summarize.
    VerifyAll {
        /// Directory of scenario JSON files.
        #[arg(default_value = "scenarios")]
        dir: PathBuf,
        /// Directory to write per-scenario reports into.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    if let Ok(raw) = std::env::var("HOMSPACE_THREADS") {
        if let Ok(k) = raw.parse::<usize>() {
            if k > 0 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                    .ok();
            }
        }
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    match cli.cmd {
        Cmd::Run { scenario, out, format, seed } => cmd_run(&scenario, out.as_deref(), &format, seed),
        Cmd::Diag { space } => cmd_diag(&space),
        Cmd::Dyadic { space, delta, adjacent } => cmd_dyadic(&space, delta, adjacent),
        Cmd::VerifyAll { dir, out } => cmd_verify_all(&dir, out.as_deref()),
    }
}

fn print_report(rep: &RunReport) {
    println!("scenario {} ({} checks)", rep.scenario, rep.rows.len());
    for r in &rep.rows {
        let status = if r.met_expectation { " ok " } else { "FAIL" };
        let outcome = if r.pass { "pass" } else { "fail" };
        println!(
            "[{status}] {:<24} {outcome} (expected {})  measured {:.6e}  bound {:.6e}",
            r.name,
            if r.expected_pass { "pass" } else { "fail" },
            r.measured,
            r.bound,
        );
        if !r.met_expectation {
            println!("       {}", r.witness);
        }
    }
    println!(
        "result: {} in {:.1} ms",
        if rep.all_met { "all expectations met" } else { "expectations NOT met" },
        rep.runtime.total_ms
    );
}

fn cmd_run(
    scenario: &Path,
    out: Option<&Path>,
    format: &str,
    seed: Option<u64>,
) -> anyhow::Result<bool> {
    let formats = ReportFormat::parse_list(format)?;
    let sc = load_scenario(scenario)?;
    let rep = run_scenario(&sc, &RunOptions { seed_override: seed })?;
    print_report(&rep);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        rep.write_files(dir, &formats)?;
    }
    Ok(rep.all_met)
}

fn load_space(path: &Path) -> anyhow::Result<Space> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let s = Space::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(s)
}

fn cmd_diag(space: &Path) -> anyhow::Result<bool> {
    let s = load_space(space)?;
    let st = structure_report(&s);
    println!("{}", serde_json::to_string_pretty(&st)?);
    Ok(true)
}

fn cmd_dyadic(space: &Path, delta: Option<f64>, adjacent: Option<usize>) -> anyhow::Result<bool> {
    let s = load_space(space)?;
    let st = structure_report(&s);
    match adjacent {
        Some(t) => {
            let delta = delta.unwrap_or_else(|| admissible_delta_adjacent(st.a0));
            let seeds: Vec<u64> = (0..t as u64).map(|i| 101 + i).collect();
            let adj = build_adjacent_systems(&s, t, delta, &seeds, false)?;
            let reports: Vec<_> = adj
                .systems
                .iter()
                .map(|sys| verify_system(&s, sys, s.masses(), st.a0, st.a1))
                .collect();
            let cover = adjacent_cover_check(&s, &adj);
            let ok = reports
                .iter()
                .all(|r| system_failures(r).is_empty() && r.dydbl_ok)
                && cover.c_adj <= cover.dilation_bound;
            let payload = serde_json::json!({
                "delta": adj.delta,
                "dilation_bound": adj.dilation_bound,
                "systems": reports,
                "cover": cover,
                "ok": ok,
            });
            println!("{}", serde_json::to_string_pretty(&payload)?);
            Ok(ok)
        }
        None => {
            let delta = delta.unwrap_or_else(|| admissible_delta_single(st.a0));
            let sys = build_system(&s, delta, 100, false)?;
            let rep = verify_system(&s, &sys, s.masses(), st.a0, st.a1);
            let ok = system_failures(&rep).is_empty() && rep.dydbl_ok;
            let payload = serde_json::json!({
                "delta": sys.delta(),
                "levels": sys.num_levels(),
                "report": rep,
                "ok": ok,
            });
            println!("{}", serde_json::to_string_pretty(&payload)?);
            Ok(ok)
        }
    }
}

fn cmd_verify_all(dir: &Path, out: Option<&Path>) -> anyhow::Result<bool> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        anyhow::bail!("no scenario files in {}", dir.display());
    }
    let scenarios: Vec<_> = files
        .iter()
        .map(|p| load_scenario(p))
        .collect::<anyhow::Result<_>>()?;

    // Scenarios run concurrently; reports are printed and written from
    // this thread afterwards so the output order is stable.
    let results: Vec<anyhow::Result<RunReport>> = scenarios
        .par_iter()
        .map(|sc| run_scenario(sc, &RunOptions::default()))
        .collect();

    let mut all_ok = true;
    for (path, result) in files.iter().zip(results) {
        match result {
            Ok(rep) => {
                let failed: Vec<&str> = rep
                    .rows
                    .iter()
                    .filter(|r| !r.met_expectation)
                    .map(|r| r.name.as_str())
                    .collect();
                println!(
                    "[{}] {:<32} {} checks, {:.1} ms{}",
                    if rep.all_met { " ok " } else { "FAIL" },
                    rep.scenario,
                    rep.rows.len(),
                    rep.runtime.total_ms,
                    if failed.is_empty() {
                        String::new()
                    } else {
                        format!("  failed: {}", failed.join(", "))
                    }
                );
                if let Some(dir) = out {
                    std::fs::create_dir_all(dir)?;
                    rep.write_files(dir, &[ReportFormat::Csv, ReportFormat::Json])?;
                }
                all_ok &= rep.all_met;
            }
            Err(e) => {
                println!("[FAIL] {:<32} error: {e:#}", path.display());
                all_ok = false;
            }
        }
    }
    println!(
        "{}: {} scenario(s)",
        if all_ok { "all expectations met" } else { "expectations NOT met" },
        files.len()
    );
    Ok(all_ok)
}
