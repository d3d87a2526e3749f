//! Scenario runners, rate fitting and report files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Deserialize;

use crate::barriers::{
    build_f_1d, build_u_eps_1d, critical_coupling_1d, disk_certificate, verify_ordering_at_boundary,
    verify_supersolution_1d, verify_transform_identity, BoundaryTrace, Certificate, OrderingReport, ResidualGrid, Side,
};
use crate::coefficients::{parse_point_expr, ConstantField, DiffusionPreset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{band_width, smoothstep5, Aabb, DomainSpec, Perturbation, Point, Potential, Shape};
use crate::grid::{GridFunction, GridSpec};
use crate::penalized::{
    crank_nicolson_run, restrict_and_error, scalar_fn, Conservation, DriftForm, FaceScheme, InitialData,
    PenalizedProblem, RunResult, ScalarFn, Stepper,
};
use crate::quasilinear::{blend_fr, quasilinear_penalized_run, quasilinear_reference_run, QuasiLinearOp, QuasiSetup};
use crate::reference::{heat_exact, neumann_fd_1d, radial_disk_oracle, TimeGrid};

pub const TABLE1_NS: [f64; 6] = [8192.0, 16384.0, 32768.0, 65536.0, 131072.0, 262144.0];

/// Flags or file keys shared by every scenario; unset fields fall back to
/// the scenario defaults.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Option<String>,
    pub panels: Option<usize>,
    pub steps: Option<usize>,
    #[serde(rename = "T")]
    pub t_end: Option<f64>,
    #[serde(rename = "N", default)]
    pub n: Vec<f64>,
    pub out: Option<PathBuf>,
    pub shape: Option<String>,
    pub u0: Option<String>,
    pub diffusion: Option<String>,
    pub perturbation: Option<String>,
    pub operator: Option<String>,
    pub r: Option<f64>,
    pub delta: Option<f64>,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub sequential: bool,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&fs::read_to_string(path)?)?)
    }

    /// Fields set here win over `base`.
    pub fn overlay(self, base: Self) -> Self {
        Self {
            scenario: self.scenario.or(base.scenario),
            panels: self.panels.or(base.panels),
            steps: self.steps.or(base.steps),
            t_end: self.t_end.or(base.t_end),
            n: if self.n.is_empty() { base.n } else { self.n },
            out: self.out.or(base.out),
            shape: self.shape.or(base.shape),
            u0: self.u0.or(base.u0),
            diffusion: self.diffusion.or(base.diffusion),
            perturbation: self.perturbation.or(base.perturbation),
            operator: self.operator.or(base.operator),
            r: self.r.or(base.r),
            delta: self.delta.or(base.delta),
            eps: if self.eps.is_empty() { base.eps } else { self.eps },
            sequential: self.sequential || base.sequential,
        }
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    /// The N list, or `default` when unset; rate sweeps need each entry to
    /// double the previous one.
    pub fn n_list(&self, default: &[f64], doubling: bool) -> Result<Vec<f64>> {
        let ns = if self.n.is_empty() { default.to_vec() } else { self.n.clone() };
        if ns.iter().any(|n| !(*n >= 0.0)) {
            return Err(Error::RejectedConfig("N values must be non-negative".into()));
        }
        for w in ns.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::RejectedConfig("N list must be strictly increasing".into()));
            }
            if doubling && (w[1] / w[0] - 2.0).abs() > 1e-12 {
                return Err(Error::RejectedConfig(format!("N list must double: {} then {}", w[0], w[1])));
            }
        }
        Ok(ns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: f64,
    pub error: f64,
    /// `log2(e_{N/2}/e_N)` against the previous row.
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub scenario: String,
    pub panels: usize,
    pub steps: usize,
    pub t_end: f64,
    pub rows: Vec<ConvergenceRow>,
    pub runtime_s: f64,
}

impl ConvergenceReport {
    pub fn from_errors(scenario: &str, grid: &GridSpec, ns: &[f64], errors: &[f64], runtime_s: f64) -> Self {
        let rows = ns
            .iter()
            .zip(errors)
            .enumerate()
            .map(|(k, (&n, &error))| ConvergenceRow {
                n,
                error,
                p: (k > 0).then(|| (errors[k - 1] / error).ln() / (n / ns[k - 1]).ln()),
            })
            .collect();
        Self { scenario: scenario.into(), panels: grid.panels, steps: grid.steps, t_end: grid.t_end, rows, runtime_s }
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["N", "error", "p"])?;
        for r in &self.rows {
            out.write_record([
                format!("{}", r.n),
                format!("{:e}", r.error),
                r.p.map(|p| format!("{p:e}")).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_dat<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {} panels={} steps={} T={}", self.scenario, self.panels, self.steps, self.t_end)?;
        writeln!(w, "# N error p")?;
        for r in &self.rows {
            writeln!(w, "{} {:e} {}", r.n, r.error, r.p.map(|p| format!("{p:e}")).unwrap_or_else(|| "nan".into()))?;
        }
        Ok(())
    }

    /// Writes `<name>.csv` and `<name>.dat` into `dir`.
    pub fn write_files(&self, dir: &Path, name: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join(format!("{name}.csv")))?)?;
        self.write_dat(fs::File::create(dir.join(format!("{name}.dat")))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    /// Least-squares slope of `−log e` against `log N`.
    pub global: f64,
    pub pairwise: Vec<Option<f64>>,
}

pub fn fit_rate(report: &ConvergenceReport) -> Result<RateFit> {
    if report.rows.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 rows, got {}", report.rows.len())));
    }
    if report.rows.iter().any(|r| !(r.error > 0.0) || !(r.n > 0.0)) {
        return Err(Error::InvalidArgument("errors and N must be positive".into()));
    }
    let xs: Vec<f64> = report.rows.iter().map(|r| r.n.ln()).collect();
    let ys: Vec<f64> = report.rows.iter().map(|r| r.error.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(RateFit { global: -sxy / sxx, pairwise: report.rows.iter().map(|r| r.p).collect() })
}

/// Grid parameters of a one-dimensional sweep on the box `[−1, 2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep1d {
    pub panels: usize,
    pub steps: usize,
    pub t_end: f64,
    pub exec: Exec,
}

impl Sweep1d {
    pub fn production() -> Self {
        Self { panels: 6400, steps: 102_400, t_end: 0.3, exec: Exec::default() }
    }

    pub fn from_config(cfg: &ScenarioConfig, default: Self) -> Self {
        Self {
            panels: cfg.panels.unwrap_or(default.panels),
            steps: cfg.steps.unwrap_or(default.steps),
            t_end: cfg.t_end.unwrap_or(default.t_end),
            exec: cfg.exec(),
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(Aabb::interval(-1.0, 2.0), 1, self.panels, self.steps, self.t_end)
    }
}

pub fn table1_domain() -> DomainSpec {
    DomainSpec::new(Shape::Interval { a: 0.0, b: 1.0 }, Aabb::interval(-1.0, 2.0)).expect("valid interval")
}

pub fn table1_u0() -> ScalarFn {
    scalar_fn(|x| (2.0 * std::f64::consts::PI * x.x).cos() + 1.0)
}

pub fn table1_problem(n: f64, grid: GridSpec) -> PenalizedProblem {
    PenalizedProblem::new(table1_domain(), Arc::new(ConstantField::identity()), n, table1_u0(), grid)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: ConvergenceReport,
    pub conservation: Vec<Option<Conservation>>,
}

/// Runs `problem(n)` for every `n` (one worker per value) and measures the
/// sup error on Ω against `reference` at the final time.
fn sweep<P, R>(scenario: &str, grid: GridSpec, ns: &[f64], exec: Exec, problem: P, reference: R) -> Result<SweepOutcome>
where
    P: Fn(f64) -> Result<PenalizedProblem> + Sync + Send,
    R: Fn(&Point, f64) -> f64 + Sync + Send,
{
    let start = Instant::now();
    let results: Vec<Result<(f64, Option<Conservation>)>> = exec.map(ns.to_vec(), |n| {
        let p = problem(n)?;
        let run = crank_nicolson_run(&p)?;
        let e = restrict_and_error(&run.final_state, &p.domain, &reference, grid.t_end);
        log::info!("{scenario}: N = {n} error {e:e}");
        Ok((e, run.conservation))
    });
    let mut errors = Vec::with_capacity(ns.len());
    let mut conservation = Vec::with_capacity(ns.len());
    for r in results {
        let (e, c) = r?;
        errors.push(e);
        conservation.push(c);
    }
    let report = ConvergenceReport::from_errors(scenario, &grid, ns, &errors, start.elapsed().as_secs_f64());
    Ok(SweepOutcome { report, conservation })
}

/// The `[0,1]` scenario with `u0 = cos(2πx) + 1`, errors against the exact
/// solution at `T`.
pub fn run_table1(sweep_cfg: &Sweep1d, ns: &[f64]) -> Result<SweepOutcome> {
    let grid = sweep_cfg.grid()?;
    sweep("table1", grid, ns, sweep_cfg.exec, |n| Ok(table1_problem(n, grid)), |x, t| heat_exact(x.x, t))
}

/// The same scenario with `Φ + Ψ`. Perturbations violating `|∇Ψ| ≤ d³` are
/// rejected before any run.
pub fn run_perturbed_potential(preset: &str, sweep_cfg: &Sweep1d, ns: &[f64]) -> Result<SweepOutcome> {
    let grid = sweep_cfg.grid()?;
    let mut potential = Potential::cubic(table1_domain().shape);
    if let Some(p) = Perturbation::preset(preset)? {
        potential = potential.with_perturbation(p, &grid.bbox)?;
    }
    sweep(
        &format!("perturbed-{preset}"),
        grid,
        ns,
        sweep_cfg.exec,
        |n| Ok(PenalizedProblem { potential, ..table1_problem(n, grid) }),
        |x, t| heat_exact(x.x, t),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayOutcome {
    pub n: f64,
    pub delta: f64,
    pub t0: f64,
    /// `sup_{[0,1]} v(·, T0)` for the non-divergence drift.
    pub sup_nondivergence: f64,
    /// `min_{[0,1]} v(·, T0)` for the divergence-form drift.
    pub min_divergence: f64,
    /// `sup_{[0,1]}` of the `N = 0` run.
    pub sup_heat: f64,
}

/// Indicator of `[0,1]` with quintic ramps of half-width `h` at both ends.
pub fn mollified_indicator(h: f64) -> ScalarFn {
    scalar_fn(move |x| smoothstep5((x.x + h) / (2.0 * h)) * smoothstep5((1.0 + h - x.x) / (2.0 * h)))
}

/// Runs the indicator data to `T0 = 1/δ − 13/4` under the non-divergence
/// drift (upwinded), the divergence-form drift and plain heat flow.
pub fn run_decay_counterexample(n: f64, delta: f64, panels: usize, steps: usize) -> Result<DecayOutcome> {
    let t0 = 1.0 / delta - 13.0 / 4.0;
    if !(t0 > 0.0) {
        return Err(Error::InvalidArgument(format!("δ = {delta} gives T0 = {t0} ≤ 0")));
    }
    let grid = GridSpec::new(Aabb::interval(-1.0, 2.0), 1, panels, steps, t0)?;
    let make = |n: f64, drift: DriftForm| {
        let mut p = table1_problem(n, grid);
        p.initial = InitialData::Whole(mollified_indicator(grid.hx()));
        p.options.drift = drift;
        if drift == DriftForm::NonDivergence {
            p.options.face = FaceScheme::Upwind;
        }
        p
    };
    let inside = |v: &GridFunction| -> Vec<f64> {
        (0..=panels).filter(|&i| (0.0..=1.0).contains(&grid.node_x(i))).map(|i| v.values[i]).collect()
    };
    let runs: Vec<Result<RunResult>> = Exec::default().map(
        vec![(n, DriftForm::NonDivergence), (n, DriftForm::Divergence), (0.0, DriftForm::Divergence)],
        |(n, d)| crank_nicolson_run(&make(n, d)),
    );
    let mut it = runs.into_iter();
    let nondiv = inside(&it.next().expect("three runs")?.final_state);
    let div = inside(&it.next().expect("three runs")?.final_state);
    let heat = inside(&it.next().expect("three runs")?.final_state);
    Ok(DecayOutcome {
        n,
        delta,
        t0,
        sup_nondivergence: nondiv.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_divergence: div.iter().copied().fold(f64::INFINITY, f64::min),
        sup_heat: heat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// `∫₀^∞ e^{−u³} du` by double-exponential quadrature (the integrand is
/// below 1e-300 past u = 9).
pub fn cubic_tail_integral() -> f64 {
    quadrature::integrate(|u: f64| (-u * u * u).exp(), 0.0, 9.0, 1e-15).integral
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalityRow {
    pub n: f64,
    /// `sup_Ω |v − 1|` at the stopping time.
    pub gap: f64,
    /// `2aI/(1 + 2aI)` with `a = N^{−1/3}`.
    pub predicted: f64,
    pub stop_time: f64,
    pub converged: bool,
}

/// Long-time runs of the interval scenario: snapshots every `interval`, stopping
/// once successive snapshots differ by less than 1e-8 in sup norm or at
/// `t_max`.
pub fn run_optimality_study(
    ns: &[f64],
    panels: usize,
    dt: f64,
    interval: f64,
    t_max: f64,
) -> Result<Vec<OptimalityRow>> {
    let i_cubic = cubic_tail_integral();
    let per_snapshot = (interval / dt).round().max(1.0) as usize;
    let max_steps = (t_max / dt).ceil() as usize;
    let rows: Vec<Result<OptimalityRow>> = Exec::default().map(ns.to_vec(), |n| {
        let grid = GridSpec::new(Aabb::interval(-1.0, 2.0), 1, panels, max_steps, max_steps as f64 * dt)?;
        let problem = table1_problem(n, grid);
        let mut stepper = Stepper::new(&problem)?;
        let mut last = stepper.values().to_vec();
        let mut converged = false;
        while stepper.steps_taken() < max_steps {
            for _ in 0..per_snapshot {
                stepper.advance()?;
            }
            let now = stepper.values();
            let diff = now.iter().zip(&last).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            last.copy_from_slice(now);
            if diff < 1e-8 {
                converged = true;
                break;
            }
        }
        let gap = restrict_and_error(&stepper.state(), &problem.domain, |_, _| 1.0, 0.0);
        let a = n.powf(-1.0 / 3.0);
        Ok(OptimalityRow {
            n,
            gap,
            predicted: 2.0 * a * i_cubic / (1.0 + 2.0 * a * i_cubic),
            stop_time: stepper.time(),
            converged,
        })
    });
    rows.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiRateOutcome {
    pub report: ConvergenceReport,
    pub r_values: Vec<f64>,
    /// `sup_Ω |w_r − w_{r/2}|` and `sup_Ω |w_{r/2} − w_{r/4}|` of the
    /// boundary-fitted runs.
    pub r_differences: (f64, f64),
    pub r_ratio: f64,
    /// Change of the penalized solution at the largest N when the number of
    /// coefficient freezes doubles.
    pub freeze_doubling_change: f64,
}

/// N-sweep of the penalized quasi-linear solver against the boundary-fitted
/// reference at fixed `r`, plus the `r → r/2 → r/4` Cauchy study.
pub fn run_quasilinear_rate(op: &QuasiLinearOp, r: f64, sweep_cfg: &Sweep1d, ns: &[f64]) -> Result<QuasiRateOutcome> {
    let start = Instant::now();
    let grid = sweep_cfg.grid()?;
    if grid.panels % 3 != 0 {
        return Err(Error::InvalidArgument("panels must be a multiple of 3 so Ω nodes coincide".into()));
    }
    let inner = grid.panels / 3;
    let domain = table1_domain();
    let setup_for = |r: f64| -> Result<QuasiSetup> {
        let blended = blend_fr(op.clone(), Arc::new(ConstantField::identity()), r, domain)?;
        Ok(QuasiSetup::new(blended, table1_u0()))
    };
    let setup = setup_for(r)?;
    let time = TimeGrid::new(grid.steps, grid.t_end);
    let reference = quasilinear_reference_run(&setup, inner, time)?;
    let w = reference.trajectory.final_values();
    let sup_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let runs: Vec<Result<Vec<f64>>> = sweep_cfg.exec.map(ns.to_vec(), |n| {
        let run = quasilinear_penalized_run(&setup, n, grid, grid.steps)?;
        Ok(run.trajectory.final_values()[inner..=2 * inner].to_vec())
    });
    let mut errors = Vec::new();
    let mut last = Vec::new();
    for v in runs {
        let v = v?;
        errors.push(sup_diff(&v, w));
        last = v;
    }
    let mut doubled = setup.clone();
    doubled.freeze_iterations *= 2;
    let n_max = *ns.last().ok_or_else(|| Error::InvalidArgument("empty N list".into()))?;
    let v2 = quasilinear_penalized_run(&doubled, n_max, grid, grid.steps)?;
    let freeze_doubling_change = sup_diff(&v2.trajectory.final_values()[inner..=2 * inner], &last);

    let r_values = vec![r, r / 2.0, r / 4.0];
    let refs: Vec<Result<Vec<f64>>> = sweep_cfg.exec.map(r_values.clone(), |rr| {
        Ok(quasilinear_reference_run(&setup_for(rr)?, inner, time)?.trajectory.final_values().to_vec())
    });
    let refs: Vec<Vec<f64>> = refs.into_iter().collect::<Result<_>>()?;
    let d1 = sup_diff(&refs[0], &refs[1]);
    let d2 = sup_diff(&refs[1], &refs[2]);
    let report = ConvergenceReport::from_errors(
        &format!("quasilinear-{}", op.name),
        &grid,
        ns,
        &errors,
        start.elapsed().as_secs_f64(),
    );
    Ok(QuasiRateOutcome { report, r_values, r_differences: (d1, d2), r_ratio: d1 / d2, freeze_doubling_change })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCertificate {
    pub label: String,
    pub side: Option<Side>,
    pub certificate: Certificate,
    /// Calibrated `C` for the multi-d certificate.
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierOutcome {
    pub certificates: Vec<LabeledCertificate>,
    /// Critical `K` of `N = K·ε⁻³` per ε.
    pub critical_k: Vec<(f64, Option<f64>)>,
    /// Transform-identity defects at `panels` and `2·panels` and their ratio.
    pub transform: (f64, f64, f64),
    pub ordering: Vec<(f64, OrderingReport)>,
    /// Defect of the identity for the boundary barrier itself, a diagnostic.
    pub boundary_transform_defect: f64,
}

impl BarrierOutcome {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["label", "side", "eps", "N", "alpha", "C", "min_residual", "at_y", "at_t", "pass"])?;
        for c in &self.certificates {
            let k = &c.certificate;
            out.write_record([
                c.label.clone(),
                c.side.map(|s| format!("{s:?}")).unwrap_or_else(|| "all".into()),
                format!("{}", k.eps),
                format!("{:e}", k.n),
                format!("{:e}", k.alpha),
                c.c.map(|v| format!("{v:e}")).unwrap_or_default(),
                format!("{:e}", k.min_residual),
                format!("{:e}", k.at_y),
                format!("{:e}", k.at_t),
                format!("{}", k.pass),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.certificates {
            let k = &c.certificate;
            s.push_str(&format!(
                "{:<28} {:<6} ε={:<5} N={:<12.4e} min residual {:>12.4e} at (y={:.4}, t={:.4}) {}\n",
                c.label,
                c.side.map(|s| format!("{s:?}")).unwrap_or_else(|| "all".into()),
                k.eps,
                k.n,
                k.min_residual,
                k.at_y,
                k.at_t,
                if k.pass { "PASS" } else { "FAIL" }
            ));
        }
        for (eps, k) in &self.critical_k {
            s.push_str(&format!("critical K at ε={eps}: {k:?}\n"));
        }
        s.push_str(&format!(
            "transform identity defects {:.4e} / {:.4e}, ratio {:.3}\n",
            self.transform.0, self.transform.1, self.transform.2
        ));
        s
    }
}

/// 1D certificates on the interval scenario with `α` measured from a
/// boundary-fitted reference, the transform identity check and the disk
/// certificate (`R = 1`, `u0 = 1 + cos(πr)/2`, `T = 0.1`).
pub fn run_barrier_check(eps_list: &[f64], exec: Exec) -> Result<BarrierOutcome> {
    let t_end = 0.3;
    let reference = neumann_fd_1d(
        0.0,
        1.0,
        |_, _| 1.0,
        |x| (2.0 * std::f64::consts::PI * x).cos() + 1.0,
        400,
        TimeGrid::new(12_000, t_end).recording_every(1),
    )?;
    let traces = [
        (Side::Left, BoundaryTrace::from_trajectory(&reference, 0)?),
        (Side::Right, BoundaryTrace::from_trajectory(&reference, 400)?),
    ];
    let domain = table1_domain();
    let potential = Potential::cubic(domain.shape);
    let d0 = band_width(domain.gamma, 1.0)?;
    let grid = ResidualGrid::new(d0, t_end);
    let mut certificates = Vec::new();
    let mut critical_k = Vec::new();
    let mut ordering = Vec::new();
    for &eps in eps_list {
        let scale = (domain_length(&domain) / 10.0).powi(-3);
        for (side, trace) in &traces {
            let ue = build_u_eps_1d(Arc::new(heat_exact), trace, eps, 0.0, 1.0)?;
            let f = build_f_1d(&ue, trace, *side)?;
            let k_pass = 10.0 * (1.0 / eps.powi(3)).max(scale);
            for (label, n) in
                [("N=10/eps^3", k_pass), ("N=8/eps^3", 8.0 / eps.powi(3)), ("N=1/eps^3", 1.0 / eps.powi(3))]
            {
                let certificate = verify_supersolution_1d(&f, &potential, n, grid, exec);
                certificates.push(LabeledCertificate { label: label.into(), side: Some(*side), certificate, c: None });
            }
            if *side == Side::Right {
                critical_k.push((eps, critical_coupling_1d(&f, &potential, grid, 10.0, 1e-4, exec)));
                let times: Vec<f64> = (0..=30).map(|k| t_end * k as f64 / 30.0).collect();
                ordering.push((eps, verify_ordering_at_boundary(&ue, &f, &times, 1e-4)));
            }
        }
    }
    let smooth = |x: f64| (x * x, 2.0 * x, 2.0);
    let shifted = DomainSpec::new(Shape::Interval { a: -1.0, b: 0.0 }, Aabb::interval(-2.0, 1.0))?;
    let e1 = verify_transform_identity(&smooth, &shifted, 100.0, 600, (0.1, 0.9))?;
    let e2 = verify_transform_identity(&smooth, &shifted, 100.0, 1200, (0.1, 0.9))?;

    // the right-boundary barrier at ε = 0.1, N = 10⁴, frozen at t = 0
    let trace = &traces[1].1;
    let ue = build_u_eps_1d(Arc::new(heat_exact), trace, 0.1, 0.0, 1.0)?;
    let f = build_f_1d(&ue, trace, Side::Right)?;
    let profile = move |x: f64| {
        let y = x - 1.0;
        (f.value(y, 0.0), f.f_y(y), f.f_yy(y))
    };
    let boundary_transform_defect = verify_transform_identity(&profile, &domain, 1e4, 6400, (0.75, 1.25))?;

    let radial = radial_disk_oracle(
        1.0,
        |r| 1.0 + 0.5 * (std::f64::consts::PI * r).cos(),
        200,
        TimeGrid::new(2000, 0.1).recording_every(1),
    )?;
    let disk_trace = BoundaryTrace::from_trajectory(&radial, 200)?;
    let disk_d0 = band_width(1.0, 1.0)?;
    for &eps in eps_list {
        let (certificate, c) = disk_certificate(1.0, &disk_trace, eps, disk_d0, 0.1, exec)?;
        certificates.push(LabeledCertificate {
            label: "disk N=12(Cd0+L+1)/eps^3".into(),
            side: None,
            certificate,
            c: Some(c),
        });
    }
    Ok(BarrierOutcome { certificates, critical_k, transform: (e1, e2, e1 / e2), ordering, boundary_transform_defect })
}

fn domain_length(domain: &DomainSpec) -> f64 {
    match domain.shape {
        Shape::Interval { a, b } => b - a,
        _ => domain.diameter(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichOutcome {
    pub eps: f64,
    pub n: f64,
    pub delta_h: f64,
    /// Smallest `v − (u_{−ε} − δ_h)` and `(u_ε + δ_h) − v` over Ω and the
    /// recorded times.
    pub lower_margin: f64,
    pub upper_margin: f64,
}

impl SandwichOutcome {
    pub fn pass(&self) -> bool {
        self.lower_margin >= 0.0 && self.upper_margin >= 0.0
    }
}

/// Penalized interval-scenario run at `N = 10ε⁻³` against `u_{±ε}`; the
/// discretization error is the sup difference to a run with halved `h`
/// and `dt`, at nodes of Ω and every recorded time.
pub fn run_sandwich(eps: f64, sweep_cfg: &Sweep1d) -> Result<SandwichOutcome> {
    let n = 10.0 / eps.powi(3);
    let coarse = sweep_cfg.grid()?;
    let fine = GridSpec { panels: 2 * coarse.panels, steps: 2 * coarse.steps, ..coarse };
    let times: Vec<f64> = (1..=6).map(|k| coarse.t_end * k as f64 / 6.0).collect();
    let runs: Vec<Result<RunResult>> = sweep_cfg.exec.map(vec![coarse, fine], |g| {
        let mut p = table1_problem(n, g);
        p.options.snapshot_times = times.clone();
        crank_nicolson_run(&p)
    });
    let mut runs = runs.into_iter();
    let c = runs.next().expect("two runs")?;
    let f = runs.next().expect("two runs")?;
    let reference = neumann_fd_1d(
        0.0,
        1.0,
        |_, _| 1.0,
        |x| (2.0 * std::f64::consts::PI * x).cos() + 1.0,
        400,
        TimeGrid::new(12_000, coarse.t_end).recording_every(1),
    )?;
    let trace = BoundaryTrace::from_trajectory(&reference, 400)?;
    let upper = build_u_eps_1d(Arc::new(heat_exact), &trace, eps, 0.0, 1.0)?;
    let lower = upper.lower();
    let inside: Vec<usize> = (0..=coarse.panels).filter(|&i| (0.0..=1.0).contains(&coarse.node_x(i))).collect();
    let mut delta: f64 = 0.0;
    for ((_, vc), (_, vf)) in c.snapshots.iter().zip(&f.snapshots) {
        for &i in &inside {
            delta = delta.max((vc.values[i] - vf.values[2 * i]).abs());
        }
    }
    let delta_h = 2.0 * delta;
    let (mut lo, mut hi) = (f64::INFINITY, f64::INFINITY);
    for (t, v) in &c.snapshots {
        for &i in &inside {
            let x = coarse.node_x(i);
            lo = lo.min(v.values[i] - (lower.value(x, *t) - delta_h));
            hi = hi.min(upper.value(x, *t) + delta_h - v.values[i]);
        }
    }
    Ok(SandwichOutcome { eps, n, delta_h, lower_margin: lo, upper_margin: hi })
}

/// Disk grid parameters: `panels` cells per side on the box of margin `d0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskRun {
    pub panels: usize,
    pub steps: usize,
    pub t_end: f64,
    pub tol: f64,
    pub exec: Exec,
}

impl DiskRun {
    pub fn production() -> Self {
        Self { panels: 400, steps: 200, t_end: 0.1, tol: 1e-11, exec: Exec::default() }
    }
}

pub fn disk_u0(r: f64) -> f64 {
    1.0 + 0.5 * (std::f64::consts::PI * r).cos()
}

/// Unit disk, `A = Id`, fitted face fluxes; errors on Ω against the radial
/// oracle at `T`. N values run one after another, each using `exec`
/// internally.
pub fn run_disk(cfg: &DiskRun, ns: &[f64]) -> Result<SweepOutcome> {
    let start = Instant::now();
    let d0 = band_width(1.0, 1.0)?;
    let domain = DomainSpec::with_margin(Shape::Disk { radius: 1.0 }, d0)?;
    let grid = GridSpec::new(domain.bounding_box, 2, cfg.panels, cfg.steps, cfg.t_end)?;
    let oracle = radial_disk_oracle(1.0, disk_u0, 2000, TimeGrid::new(4000, cfg.t_end))?;
    let last = oracle.snapshots.len() - 1;
    let mut errors = Vec::new();
    let mut conservation = Vec::new();
    for &n in ns {
        let mut p = PenalizedProblem::new(
            domain,
            Arc::new(ConstantField::identity()),
            n,
            scalar_fn(|x| disk_u0(x.norm())),
            grid,
        );
        p.options.face = FaceScheme::Fitted;
        p.options.tol = cfg.tol;
        p.options.exec = cfg.exec;
        let run = crank_nicolson_run(&p)?;
        let e = restrict_and_error(&run.final_state, &domain, |x, _| oracle.interpolate(last, x.norm()), cfg.t_end);
        log::info!("disk: N = {n} error {e:e}, max BiCGSTAB iterations {}", run.max_iterations);
        errors.push(e);
        conservation.push(run.conservation);
    }
    let report = ConvergenceReport::from_errors("disk", &grid, ns, &errors, start.elapsed().as_secs_f64());
    Ok(SweepOutcome { report, conservation })
}

/// One penalized run from a config: shape, diffusion preset, `u0`
/// expression, N and grid. Returns the final state.
pub fn run_solve(cfg: &ScenarioConfig) -> Result<RunResult> {
    let shape = Shape::parse(cfg.shape.as_deref().unwrap_or("interval(0,1)"))?;
    let preset = DiffusionPreset::parse(cfg.diffusion.as_deref().unwrap_or("identity"))?;
    let n = cfg.n.first().copied().unwrap_or(1e4);
    let u0_src = cfg.u0.clone().unwrap_or_else(|| match shape {
        Shape::Interval { .. } => "cos(2*pi*x) + 1".into(),
        _ => "1 + 0.5*cos(pi*sqrt(x*x + y*y))".into(),
    });
    let u0 = parse_point_expr(&u0_src)?;
    let probe = DomainSpec::with_margin(shape, 1.0)?;
    let field = preset.build(&probe)?;
    let d0 = band_width(probe.gamma, field.ellipticity_ratio())?;
    // far enough out that e^{-NΦ} ≈ e^{-40} at the box edge
    let confine = if n > 0.0 { (40.0 / n).cbrt().min(1.0) } else { 1.0 };
    let margin = if shape.dimension() == 1 { (2.0 * d0).max(1.0) } else { (2.0 * d0).max(confine) };
    let domain = DomainSpec::with_margin(shape, margin)?;
    let diffusion = preset.build(&domain)?;
    let dim = shape.dimension();
    let grid = GridSpec::new(
        domain.bounding_box,
        dim,
        cfg.panels.unwrap_or(if dim == 1 { 1200 } else { 160 }),
        cfg.steps.unwrap_or(if dim == 1 { 4800 } else { 100 }),
        cfg.t_end.unwrap_or(0.1),
    )?;
    let mut p = PenalizedProblem::new(domain, diffusion, n, u0, grid);
    p.options.exec = cfg.exec();
    if dim == 2 {
        p.options.face = FaceScheme::Fitted;
    }
    if let Some(name) = &cfg.perturbation {
        if let Some(pert) = Perturbation::preset(name)? {
            p.potential = p.potential.with_perturbation(pert, &grid.bbox)?;
        }
    }
    crank_nicolson_run(&p)
}

/// Writes a state as `<name>.csv` and a whitespace-separated `<name>.dat`.
pub fn write_state(v: &GridFunction, dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    v.write_csv(&dir.join(format!("{name}.csv")))?;
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join(format!("{name}.dat")))?);
    if v.grid.dimension == 1 {
        writeln!(w, "# x v")?;
    } else {
        writeln!(w, "# x y v")?;
    }
    for (k, val) in v.values.iter().enumerate() {
        let p = v.grid.point(k);
        if v.grid.dimension == 1 {
            writeln!(w, "{:e} {:e}", p.x, val)?;
        } else {
            writeln!(w, "{:e} {:e} {:e}", p.x, p.y, val)?;
            if (k + 1) % v.grid.panels == 0 {
                writeln!(w)?;
            }
        }
    }
    Ok(())
}
