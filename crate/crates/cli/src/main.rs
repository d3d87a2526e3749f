use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pendrift::harness::{
    fit_rate, run_barrier_check, run_decay_counterexample, run_disk, run_optimality_study, run_perturbed_potential,
    run_quasilinear_rate, run_solve, run_table1, write_state, ConvergenceReport, DiskRun, ScenarioConfig, Sweep1d,
    TABLE1_NS,
};
use pendrift::quasilinear::QuasiLinearOp;

#[derive(Parser)]
#[command(name = "pendrift", version, about = "Penalized-drift solvers and convergence studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single penalized run; writes the final state.
    Solve(Common),
    /// Error and rate table for the interval scenario.
    Table1(Common),
    /// Non-divergence counterexample against the divergence form.
    Decay(Common),
    /// Long-time gap against its predicted value.
    Optimality(Common),
    /// Interval sweep with a perturbed potential.
    Perturbed(Common),
    /// Quasi-linear N-rate and r-Cauchy study.
    QuasilinearRate(Common),
    /// Barrier supersolution certificates.
    BarrierCheck(Common),
    /// Disk scenario against the radial oracle.
    Disk(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    panels: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Penalty strength; repeat for a sweep.
    #[arg(long = "N", value_name = "N")]
    n: Vec<f64>,
    #[arg(long = "T", value_name = "T")]
    t_end: Option<f64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// `interval(a,b)`, `disk(R)` or `ellipse(a,b)`.
    #[arg(long, value_name = "NAME")]
    shape: Option<String>,
    /// TOML file with the same keys; flags take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run without the thread pool.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn resolve(&self, scenario: &str) -> Result<ScenarioConfig> {
        let flags = ScenarioConfig {
            scenario: Some(scenario.into()),
            panels: self.panels,
            steps: self.steps,
            t_end: self.t_end,
            n: self.n.clone(),
            out: self.out.clone(),
            shape: self.shape.clone(),
            sequential: self.sequential,
            ..Default::default()
        };
        Ok(match &self.config {
            Some(path) => {
                let file = ScenarioConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
                flags.overlay(file)
            }
            None => flags,
        })
    }
}

fn out_dir(cfg: &ScenarioConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn print_report(report: &ConvergenceReport) {
    println!("{:>10} {:>14} {:>10}", "N", "error", "p");
    for r in &report.rows {
        let p = r.p.map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into());
        println!("{:>10} {:>14.7} {:>10}", r.n, r.error, p);
    }
    if let Ok(fit) = fit_rate(report) {
        println!("fitted exponent {:.4}", fit.global);
    }
    println!("runtime {:.1} s", report.runtime_s);
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Solve(c) => {
            let cfg = c.resolve("solve")?;
            let run = run_solve(&cfg)?;
            let dir = out_dir(&cfg);
            write_state(&run.final_state, &dir, "solve")?;
            if let Some(cons) = run.conservation {
                println!(
                    "initial mass {:.12e}, boundary outflow {:.3e}, max step defect {:.3e}",
                    cons.initial_mass, cons.boundary_outflow, cons.max_step_defect
                );
            }
            println!("wrote {}", dir.join("solve.csv").display());
        }
        Command::Table1(c) => {
            let cfg = c.resolve("table1")?;
            let ns = cfg.n_list(&TABLE1_NS, true)?;
            let out = run_table1(&Sweep1d::from_config(&cfg, Sweep1d::production()), &ns)?;
            print_report(&out.report);
            out.report.write_files(&out_dir(&cfg), "table1")?;
        }
        Command::Perturbed(c) => {
            let cfg = c.resolve("perturbed")?;
            let ns = cfg.n_list(&TABLE1_NS, true)?;
            let preset = cfg.perturbation.clone().unwrap_or_else(|| "quartic".into());
            let out = run_perturbed_potential(&preset, &Sweep1d::from_config(&cfg, Sweep1d::production()), &ns)?;
            print_report(&out.report);
            out.report.write_files(&out_dir(&cfg), &format!("perturbed-{preset}"))?;
        }
        Command::Decay(c) => {
            let cfg = c.resolve("decay")?;
            let delta = cfg.delta.unwrap_or(0.1);
            let mut rows = Vec::new();
            for n in cfg.n_list(&[1e4, 1e5], false)? {
                let o = run_decay_counterexample(n, delta, cfg.panels.unwrap_or(1200), cfg.steps.unwrap_or(6750))?;
                println!(
                    "N {n:e}: T0 {}, non-divergence sup {:.3e}, divergence min {:.6}, heat sup {:.3e}",
                    o.t0, o.sup_nondivergence, o.min_divergence, o.sup_heat
                );
                rows.push(o);
            }
            let dir = out_dir(&cfg);
            std::fs::create_dir_all(&dir)?;
            let mut w = csv::Writer::from_path(dir.join("decay.csv"))?;
            w.write_record(["N", "delta", "T0", "sup_nondivergence", "min_divergence", "sup_heat"])?;
            for o in &rows {
                w.write_record(
                    [o.n, o.delta, o.t0, o.sup_nondivergence, o.min_divergence, o.sup_heat].map(|v| format!("{v:e}")),
                )?;
            }
            w.flush()?;
        }
        Command::Optimality(c) => {
            let cfg = c.resolve("optimality")?;
            let ns = cfg.n_list(&[8192.0, 65536.0], false)?;
            let rows = run_optimality_study(&ns, cfg.panels.unwrap_or(3200), 2.5e-5, 0.01, cfg.t_end.unwrap_or(2.0))?;
            let dir = out_dir(&cfg);
            std::fs::create_dir_all(&dir)?;
            let mut w = csv::Writer::from_path(dir.join("optimality.csv"))?;
            w.write_record(["N", "gap", "predicted", "stop_time", "converged"])?;
            for r in &rows {
                println!(
                    "N {}: gap {:.6e}, predicted {:.6e}, ratio {:.4}, stopped at t = {:.2} ({})",
                    r.n,
                    r.gap,
                    r.predicted,
                    r.gap / r.predicted,
                    r.stop_time,
                    if r.converged { "converged" } else { "time limit" }
                );
                w.write_record([
                    format!("{}", r.n),
                    format!("{:e}", r.gap),
                    format!("{:e}", r.predicted),
                    format!("{:e}", r.stop_time),
                    format!("{}", r.converged),
                ])?;
            }
            w.flush()?;
        }
        Command::QuasilinearRate(c) => {
            let cfg = c.resolve("quasilinear-rate")?;
            let ns = cfg.n_list(&TABLE1_NS, true)?;
            let op = QuasiLinearOp::preset(cfg.operator.as_deref().unwrap_or("tanh-diffusion"))?;
            let sweep = Sweep1d::from_config(&cfg, Sweep1d { panels: 1200, steps: 4800, ..Sweep1d::production() });
            let out = run_quasilinear_rate(&op, cfg.r.unwrap_or(0.05), &sweep, &ns)?;
            print_report(&out.report);
            println!(
                "r-Cauchy: |w_r − w_r/2| {:.4e}, |w_r/2 − w_r/4| {:.4e}, ratio {:.3}",
                out.r_differences.0, out.r_differences.1, out.r_ratio
            );
            println!("doubling the coefficient freezes changes the solution by {:.3e}", out.freeze_doubling_change);
            out.report.write_files(&out_dir(&cfg), "quasilinear-rate")?;
        }
        Command::BarrierCheck(c) => {
            let cfg = c.resolve("barrier-check")?;
            let eps = if cfg.eps.is_empty() { vec![0.05, 0.1] } else { cfg.eps.clone() };
            let out = run_barrier_check(&eps, cfg.exec())?;
            print!("{}", out.summary());
            let dir = out_dir(&cfg);
            std::fs::create_dir_all(&dir)?;
            out.write_csv(std::fs::File::create(dir.join("barrier-check.csv"))?)?;
        }
        Command::Disk(c) => {
            let cfg = c.resolve("disk")?;
            let ns = cfg.n_list(&[1e3, 1e4, 1e5], false)?;
            let base = DiskRun::production();
            let run = DiskRun {
                panels: cfg.panels.unwrap_or(base.panels),
                steps: cfg.steps.unwrap_or(base.steps),
                t_end: cfg.t_end.unwrap_or(base.t_end),
                exec: cfg.exec(),
                ..base
            };
            let out = run_disk(&run, &ns)?;
            print_report(&out.report);
            out.report.write_files(&out_dir(&cfg), "disk")?;
        }
    }
    Ok(())
}
