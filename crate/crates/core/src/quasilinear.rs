//! One-dimensional quasi-linear problems: `q(u,x,t)u_xx + b(u_x,u,x,t)` in
//! the interior of Ω, blended to `(a u_x)_x` within `2r` of ∂Ω, solved
//! either with the penalty drift on a box or boundary-fitted with zero
//! co-normal flux.

use std::sync::Arc;

use crate::coefficients::DiffusionField;
use crate::error::{Error, Result};
use crate::geometry::{pt, smoothstep5, DomainSpec, Shape};
use crate::grid::GridSpec;
use crate::linalg::Tridiag;
use crate::penalized::{assemble_flux_operator, extend_initial, PenalizedProblem, ScalarFn};
use crate::reference::{TimeGrid, Trajectory};

pub type QFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type BFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// `F(u) = q(u,x,t)·u_xx + b(u_x,u,x,t)`.
#[derive(Clone)]
pub struct QuasiLinearOp {
    pub name: String,
    /// `q(z, x, t)`.
    pub q: QFn,
    /// `b(p, z, x, t)`.
    pub b: BFn,
    pub lambda: f64,
    pub big_lambda: f64,
    /// Lipschitz constant of `b` in `(p, z)`.
    pub lipschitz: f64,
    /// Whether `b` vanishes identically.
    pub b_is_zero: bool,
}

impl std::fmt::Debug for QuasiLinearOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuasiLinearOp")
            .field("name", &self.name)
            .field("lambda", &self.lambda)
            .field("big_lambda", &self.big_lambda)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl QuasiLinearOp {
    /// `q ≡ 1`, `b ≡ 0`.
    pub fn heat() -> Self {
        Self {
            name: "heat".into(),
            q: Arc::new(|_, _, _| 1.0),
            b: Arc::new(|_, _, _, _| 0.0),
            lambda: 1.0,
            big_lambda: 1.0,
            lipschitz: 0.0,
            b_is_zero: true,
        }
    }

    /// `q(z) = 1 + (1 + tanh z)/4 ∈ [1, 1.5]`, `b ≡ 0`.
    pub fn tanh_diffusion() -> Self {
        Self {
            name: "tanh-diffusion".into(),
            q: Arc::new(|z, _, _| 1.0 + 0.25 * (1.0 + z.tanh())),
            b: Arc::new(|_, _, _, _| 0.0),
            lambda: 1.0,
            big_lambda: 1.5,
            lipschitz: 0.0,
            b_is_zero: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "heat" => Ok(Self::heat()),
            "tanh-diffusion" => Ok(Self::tanh_diffusion()),
            other => Err(Error::InvalidArgument(format!("unknown operator preset '{other}'"))),
        }
    }

    /// Samples `λ ≤ q ≤ Λ` and the Lipschitz bound of `b` on a lattice.
    pub fn check(&self, z: (f64, f64), x: (f64, f64), t: (f64, f64), samples: usize) -> Result<()> {
        let s = samples.max(2);
        let at = |r: (f64, f64), k: usize| r.0 + (r.1 - r.0) * k as f64 / (s - 1) as f64;
        for iz in 0..s {
            for ix in 0..s {
                for it in 0..s {
                    let (zz, xx, tt) = (at(z, iz), at(x, ix), at(t, it));
                    let q = (self.q)(zz, xx, tt);
                    if !(q >= self.lambda * (1.0 - 1e-12) && q <= self.big_lambda * (1.0 + 1e-12)) {
                        return Err(Error::EllipticityFailure {
                            reason: format!("q({zz}, {xx}, {tt}) = {q} outside [{}, {}]", self.lambda, self.big_lambda),
                        });
                    }
                    let p = zz;
                    let d = 1e-3 * (1.0 + p.abs());
                    let db = ((self.b)(p + d, zz, xx, tt) - (self.b)(p, zz, xx, tt)).abs()
                        + ((self.b)(p, zz + d, xx, tt) - (self.b)(p, zz, xx, tt)).abs();
                    if db > 2.0 * self.lipschitz * d * (1.0 + 1e-9) + 1e-14 {
                        return Err(Error::InvalidArgument(format!(
                            "b exceeds its Lipschitz bound {} near ({p}, {zz}, {xx}, {tt})",
                            self.lipschitz
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `g(x) = f(d(x,∂Ω)/r)` with `f` the quintic step from 0 at 1 to 1 at 2;
/// zero outside Ω.
pub fn blend_weight(domain: &DomainSpec, r: f64, x: f64) -> f64 {
    let inside = -domain.sdf(&pt(x, 0.0));
    smoothstep5(inside / r - 1.0)
}

/// `F_r = g·F + (1 − g)·(a u_x)_x` as a pointwise oracle.
#[derive(Clone)]
pub struct BlendedOp {
    pub op: QuasiLinearOp,
    pub diffusion: Arc<dyn DiffusionField>,
    pub domain: DomainSpec,
    pub r: f64,
}

impl BlendedOp {
    pub fn weight(&self, x: f64) -> f64 {
        blend_weight(&self.domain, self.r, x)
    }

    /// `F_r` for the local jet `(u, u_x, u_xx)`; `a_x` by central difference.
    pub fn eval(&self, x: f64, t: f64, u: f64, ux: f64, uxx: f64) -> f64 {
        let g = self.weight(x);
        let h = 1e-6;
        let a = self.diffusion.scalar(x, t);
        let ax = (self.diffusion.scalar(x + h, t) - self.diffusion.scalar(x - h, t)) / (2.0 * h);
        let f = (self.op.q)(u, x, t) * uxx + (self.op.b)(ux, u, x, t);
        g * f + (1.0 - g) * (a * uxx + ax * ux)
    }
}

pub fn blend_fr(
    op: QuasiLinearOp,
    diffusion: Arc<dyn DiffusionField>,
    r: f64,
    domain: DomainSpec,
) -> Result<BlendedOp> {
    if domain.dimension() != 1 {
        return Err(Error::InvalidArgument("the quasi-linear solvers are one-dimensional".into()));
    }
    let d0 = crate::geometry::band_width(domain.gamma, diffusion.ellipticity_ratio())?;
    if !(r > 0.0 && r < d0 / 4.0) {
        return Err(Error::InvalidArgument(format!("r = {r} must lie in (0, d0/4) with d0 = {d0}")));
    }
    Ok(BlendedOp { op, diffusion, domain, r })
}

/// Shared setup of the two quasi-linear solvers.
#[derive(Clone)]
pub struct QuasiSetup {
    pub blended: BlendedOp,
    pub u0: ScalarFn,
    /// Coefficient freezes per step.
    pub freeze_iterations: usize,
}

impl QuasiSetup {
    pub fn new(blended: BlendedOp, u0: ScalarFn) -> Self {
        Self { blended, u0, freeze_iterations: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct QuasiRun {
    pub trajectory: Trajectory,
    /// Largest relative sup change between the last two freezes of a step.
    pub max_freeze_change: f64,
    /// Trapezoid mass at every recorded snapshot.
    pub masses: Vec<f64>,
}

/// Linear pieces of one step: `full` carries the divergence part and any
/// drift, `div` the divergence part alone, `second` the plain 3-point
/// second difference; all share the node set.
struct Pieces {
    full: Tridiag,
    div: Tridiag,
    second: Tridiag,
}

fn frozen_operator(pieces: &Pieces, g: &[f64], q: &[f64]) -> Tridiag {
    let mut m = pieces.full.clone();
    for i in 0..m.len() {
        if g[i] == 0.0 {
            continue;
        }
        m.lower[i] += g[i] * (q[i] * pieces.second.lower[i] - pieces.div.lower[i]);
        m.diag[i] += g[i] * (q[i] * pieces.second.diag[i] - pieces.div.diag[i]);
        m.upper[i] += g[i] * (q[i] * pieces.second.upper[i] - pieces.div.upper[i]);
    }
    m
}

struct Driver<'a, P: Fn(f64) -> Result<Pieces>> {
    setup: &'a QuasiSetup,
    nodes: Vec<f64>,
    pieces: P,
    time_independent: bool,
    /// Box-boundary nodes held at zero.
    dirichlet: bool,
    h: f64,
    /// Trapezoid weights over the node set.
    weights: Vec<f64>,
}

impl<P: Fn(f64) -> Result<Pieces>> Driver<'_, P> {
    fn run(&self, mut v: Vec<f64>, time: TimeGrid) -> Result<QuasiRun> {
        if time.steps == 0 || !(time.t_end > 0.0) {
            return Err(Error::InvalidArgument("need steps > 0 and T > 0".into()));
        }
        let op = &self.setup.blended;
        let n = v.len();
        let dt = time.t_end / time.steps as f64;
        let g: Vec<f64> = self.nodes.iter().map(|&x| op.weight(x)).collect();
        let mass = |v: &[f64]| v.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>();
        let mut snapshots = vec![(0.0, v.clone())];
        let mut masses = vec![mass(&v)];
        let mut max_change: f64 = 0.0;
        let fixed = if self.time_independent { Some((self.pieces)(0.0)?) } else { None };
        let iterations = self.setup.freeze_iterations.max(1);
        let mut q = vec![0.0; n];
        let mut lv = vec![0.0; n];
        let mut src = vec![0.0; n];
        for k in 0..time.steps {
            let t0 = k as f64 * dt;
            let t1 = (k + 1) as f64 * dt;
            let tm = 0.5 * (t0 + t1);
            let owned;
            let (p0, p1) = match &fixed {
                Some(p) => (p, p),
                None => {
                    owned = ((self.pieces)(t0)?, (self.pieces)(t1)?);
                    (&owned.0, &owned.1)
                }
            };
            let mut guess = v.clone();
            let mut prev: Option<Vec<f64>> = None;
            for _ in 0..iterations {
                for i in 0..n {
                    let z = 0.5 * (v[i] + guess[i]);
                    q[i] = (op.op.q)(z, self.nodes[i], tm);
                    src[i] = 0.0;
                    if !op.op.b_is_zero && g[i] > 0.0 && i > 0 && i + 1 < n {
                        let zl = 0.5 * (v[i - 1] + guess[i - 1]);
                        let zr = 0.5 * (v[i + 1] + guess[i + 1]);
                        src[i] = g[i] * (op.op.b)((zr - zl) / (2.0 * self.h), z, self.nodes[i], tm);
                    }
                }
                let l0 = frozen_operator(p0, &g, &q);
                let l1 = frozen_operator(p1, &g, &q);
                l0.apply(&v, &mut lv);
                let mut rhs: Vec<f64> = (0..n).map(|i| v[i] + 0.5 * dt * lv[i] + dt * src[i]).collect();
                let mut lhs = l1.shifted_identity(-0.5 * dt);
                if self.dirichlet {
                    lhs.upper[0] = 0.0;
                    lhs.diag[0] = 1.0;
                    lhs.lower[n - 1] = 0.0;
                    lhs.diag[n - 1] = 1.0;
                    rhs[0] = 0.0;
                    rhs[n - 1] = 0.0;
                }
                lhs.factor()?.solve(&mut rhs);
                prev = Some(std::mem::replace(&mut guess, rhs));
            }
            if let Some(p) = prev.filter(|_| iterations > 1) {
                let scale = guess.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
                let diff = guess.iter().zip(&p).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                let rel = diff / scale;
                if rel > 1e-3 && rel > max_change {
                    log::warn!("coefficient freeze not contracting at t = {t1:.4e}: relative change {rel:.3e}");
                }
                max_change = max_change.max(rel);
            }
            v = guess;
            if (k + 1) % time.record_every == 0 || k + 1 == time.steps {
                snapshots.push((t1, v.clone()));
                masses.push(mass(&v));
            }
        }
        Ok(QuasiRun {
            trajectory: Trajectory { nodes: self.nodes.clone(), snapshots },
            max_freeze_change: max_change,
            masses,
        })
    }
}

fn interval_of(domain: &DomainSpec) -> Result<(f64, f64)> {
    match domain.shape {
        Shape::Interval { a, b } => Ok((a, b)),
        _ => Err(Error::InvalidArgument("the quasi-linear solvers are one-dimensional".into())),
    }
}

fn second_difference(len: usize, h: f64, mirrored: bool) -> Tridiag {
    let mut m = Tridiag::zeros(len);
    let c = 1.0 / (h * h);
    for i in 0..len {
        m.diag[i] = -2.0 * c;
        m.lower[i] = c;
        m.upper[i] = c;
    }
    if mirrored {
        m.upper[0] = 2.0 * c;
        m.lower[len - 1] = 2.0 * c;
    } else {
        m.diag[0] = 0.0;
        m.upper[0] = 0.0;
        m.diag[len - 1] = 0.0;
        m.lower[len - 1] = 0.0;
    }
    m
}

/// Penalized run on the grid box: `ṽ_t = F_r(ṽ) + N(ṽ a Φ_x)_x`, zero on the
/// box ends, initial data extended as in the linear solver.
pub fn quasilinear_penalized_run(setup: &QuasiSetup, n: f64, grid: GridSpec, record_every: usize) -> Result<QuasiRun> {
    let op = &setup.blended;
    interval_of(&op.domain)?;
    let problem = PenalizedProblem::new(op.domain, op.diffusion.clone(), n, setup.u0.clone(), grid);
    problem.validate()?;
    let no_drift = PenalizedProblem { n: 0.0, ..problem.clone() };
    let h = grid.hx();
    let len = grid.len();
    let pieces = |t: f64| -> Result<Pieces> {
        let full = assemble_flux_operator(&problem, t)?.tridiag().cloned().expect("1D operator");
        let div = assemble_flux_operator(&no_drift, t)?.tridiag().cloned().expect("1D operator");
        Ok(Pieces { full, div, second: second_difference(len, h, false) })
    };
    let nodes: Vec<f64> = (0..len).map(|i| grid.node_x(i)).collect();
    let weights = (0..len).map(|k| grid.weight(k)).collect();
    let v0 = extend_initial(&problem)?.values;
    let driver = Driver {
        setup,
        nodes,
        pieces,
        time_independent: op.diffusion.is_time_independent(),
        dirichlet: true,
        h,
        weights,
    };
    driver.run(v0, TimeGrid::new(grid.steps, grid.t_end).recording_every(record_every))
}

/// Boundary-fitted run on Ω with zero co-normal flux by mirrored ghosts.
pub fn quasilinear_reference_run(setup: &QuasiSetup, panels: usize, time: TimeGrid) -> Result<QuasiRun> {
    let op = &setup.blended;
    let (a, b) = interval_of(&op.domain)?;
    if panels < 4 {
        return Err(Error::InvalidArgument("need at least 4 panels".into()));
    }
    let h = (b - a) / panels as f64;
    let len = panels + 1;
    let nodes: Vec<f64> = (0..len).map(|i| a + i as f64 * h).collect();
    let diffusion = op.diffusion.clone();
    let pieces = |t: f64| -> Result<Pieces> {
        let mut m = Tridiag::zeros(len);
        for i in 0..len {
            let x = a + i as f64 * h;
            let ae = if i < panels { diffusion.scalar(x + 0.5 * h, t) } else { diffusion.scalar(x - 0.5 * h, t) };
            let aw = if i > 0 { diffusion.scalar(x - 0.5 * h, t) } else { ae };
            m.diag[i] = -(aw + ae) / (h * h);
            if i == 0 {
                m.upper[i] = 2.0 * ae / (h * h);
            } else if i == panels {
                m.lower[i] = 2.0 * aw / (h * h);
            } else {
                m.lower[i] = aw / (h * h);
                m.upper[i] = ae / (h * h);
            }
        }
        Ok(Pieces { full: m.clone(), div: m, second: second_difference(len, h, true) })
    };
    let mut weights = vec![h; len];
    weights[0] = 0.5 * h;
    weights[panels] = 0.5 * h;
    let v0 = nodes.iter().map(|&x| (setup.u0)(&pt(x, 0.0))).collect();
    let driver = Driver {
        setup,
        nodes: nodes.clone(),
        pieces,
        time_independent: diffusion.is_time_independent(),
        dirichlet: false,
        h,
        weights,
    };
    driver.run(v0, time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ConstantField;
    use crate::geometry::Aabb;
    use crate::penalized::{crank_nicolson_run, scalar_fn};
    use crate::reference::{neumann_fd_1d, trapezoid};
    use std::f64::consts::PI;

    fn domain() -> DomainSpec {
        DomainSpec::new(Shape::Interval { a: 0.0, b: 1.0 }, Aabb::interval(-1.0, 2.0)).unwrap()
    }

    fn blended(op: QuasiLinearOp, r: f64) -> BlendedOp {
        blend_fr(op, Arc::new(ConstantField::identity()), r, domain()).unwrap()
    }

    fn u0() -> ScalarFn {
        scalar_fn(|x| 1.0 + (2.0 * PI * x.x).cos())
    }

    #[test]
    fn presets_satisfy_bounds() {
        for name in ["heat", "tanh-diffusion"] {
            let op = QuasiLinearOp::preset(name).unwrap();
            op.check((-20.0, 20.0), (0.0, 1.0), (0.0, 1.0), 9).unwrap();
        }
        assert!(QuasiLinearOp::preset("porous").is_err());
        let mut bad = QuasiLinearOp::tanh_diffusion();
        bad.big_lambda = 1.2;
        assert!(matches!(bad.check((-5.0, 5.0), (0.0, 1.0), (0.0, 1.0), 5), Err(Error::EllipticityFailure { .. })));
    }

    #[test]
    fn blend_weight_limits() {
        let r = 0.05;
        let b = blended(QuasiLinearOp::tanh_diffusion(), r);
        assert_eq!(b.weight(3.0 * r), 1.0);
        assert_eq!(b.weight(0.5 * r), 0.0);
        assert_eq!(b.weight(-0.3), 0.0);
        assert_eq!(b.weight(1.0 - 0.5 * r), 0.0);
        // heat blended with the Laplacian is the Laplacian
        let heat = blended(QuasiLinearOp::heat(), r);
        for &x in &[0.01, 0.07, 0.2, 0.5] {
            assert!((heat.eval(x, 0.0, 0.3, 1.2, -4.0) + 4.0).abs() < 1e-12);
        }
        assert!(blend_fr(QuasiLinearOp::heat(), Arc::new(ConstantField::identity()), 0.07, domain()).is_err());
    }

    #[test]
    fn heat_penalized_matches_linear_solver() {
        let n = 4096.0;
        let grid = GridSpec::new(Aabb::interval(-1.0, 2.0), 1, 600, 400, 0.05).unwrap();
        let setup = QuasiSetup::new(blended(QuasiLinearOp::heat(), 0.05), u0());
        let quasi = quasilinear_penalized_run(&setup, n, grid, 400).unwrap();
        let problem = PenalizedProblem::new(domain(), Arc::new(ConstantField::identity()), n, u0(), grid);
        let linear = crank_nicolson_run(&problem).unwrap();
        let q = quasi.trajectory.final_values();
        let err = q.iter().zip(&linear.final_state.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-12, "err {err}");
        assert_eq!(quasi.max_freeze_change, 0.0);
    }

    #[test]
    fn heat_reference_matches_neumann_solver() {
        let time = TimeGrid::new(200, 0.05);
        let setup = QuasiSetup::new(blended(QuasiLinearOp::heat(), 0.03), u0());
        let quasi = quasilinear_reference_run(&setup, 200, time).unwrap();
        let lin = neumann_fd_1d(0.0, 1.0, |_, _| 1.0, |x| 1.0 + (2.0 * PI * x).cos(), 200, time).unwrap();
        let err = quasi
            .trajectory
            .final_values()
            .iter()
            .zip(lin.final_values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-12, "err {err}");
        let m0 = quasi.masses[0];
        assert!((quasi.masses.last().unwrap() - m0).abs() < 1e-10);
        assert!((trapezoid(&quasi.trajectory.nodes, quasi.trajectory.final_values()) - m0).abs() < 1e-10);
    }

    #[test]
    fn constant_data_stays_constant_in_reference() {
        let setup = QuasiSetup::new(blended(QuasiLinearOp::tanh_diffusion(), 0.05), scalar_fn(|_| 0.7));
        let run = quasilinear_reference_run(&setup, 100, TimeGrid::new(50, 0.1)).unwrap();
        assert!(run.trajectory.final_values().iter().all(|v| (v - 0.7).abs() < 1e-13));
    }

    #[test]
    fn constant_data_leaks_little_under_penalty() {
        let setup = QuasiSetup::new(blended(QuasiLinearOp::tanh_diffusion(), 0.05), scalar_fn(|_| 1.0));
        let grid = GridSpec::new(Aabb::interval(-1.0, 2.0), 1, 1200, 400, 0.1).unwrap();
        let run = quasilinear_penalized_run(&setup, 1e4, grid, 400).unwrap();
        let worst = run
            .trajectory
            .nodes
            .iter()
            .zip(run.trajectory.final_values())
            .filter(|(x, _)| (0.0..=1.0).contains(*x))
            .fold(0.0f64, |m, (_, v)| m.max((v - 1.0).abs()));
        // the extended data is already the penalized equilibrium
        assert!(worst < 1e-3, "{worst}");
    }
}
