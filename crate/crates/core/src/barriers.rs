//! Grid certificates for the barrier functions `φ = f·e^{−NΦ}` that sandwich
//! the penalized solution.
//!
//! Constants such as `α` and `C` are measured from a computed reference
//! solution, so every certificate is a-posteriori.

use std::sync::Arc;

use crate::coefficients::{ConstantField, DiffusionField};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{dprime_bound, project_s, pt, DomainSpec, Point, Potential, Shape};
use crate::grid::GridSpec;
use crate::penalized::{assemble_flux_operator, scalar_fn, PenalizedProblem};
use crate::reference::Trajectory;

/// Samples `u(x_b, t)` of a solution at one boundary location.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::InvalidArgument("trace needs at least two matching samples".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("trace times must increase".into()));
        }
        Ok(Self { times, values })
    }

    /// Trace of node `node` over every snapshot of a trajectory.
    pub fn from_trajectory(traj: &Trajectory, node: usize) -> Result<Self> {
        let times = traj.snapshots.iter().map(|(t, _)| *t).collect();
        let values = traj.snapshots.iter().map(|(_, v)| v[node]).collect();
        Self::new(times, values)
    }

    pub fn from_fn<F: Fn(f64) -> f64>(f: F, t_end: f64, samples: usize) -> Result<Self> {
        let times: Vec<f64> = (0..=samples).map(|k| t_end * k as f64 / samples as f64).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    fn segment(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        k.clamp(1, self.times.len() - 1) - 1
    }

    /// Piecewise-linear value, clamped to the sampled range.
    pub fn value(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        (1.0 - w) * self.values[k] + w * self.values[k + 1]
    }

    /// Slope of the segment containing `t`.
    pub fn derivative(&self, t: f64) -> f64 {
        let k = self.segment(t);
        (self.values[k + 1] - self.values[k]) / (self.times[k + 1] - self.times[k])
    }

    /// `sup |u_t|` over the sampled segments.
    pub fn alpha(&self) -> f64 {
        (0..self.times.len() - 1).map(|k| self.derivative(self.times[k]).abs()).fold(0.0, f64::max)
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }
}

pub type Oracle1d = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `u_ε = u + 5αε(x − (a+b)/2)²/(b−a) + 10αεt/(b−a)`. A negative `eps`
/// gives the lower perturbation `u_{−|ε|}`.
#[derive(Clone)]
pub struct UEps1d {
    pub u: Oracle1d,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub alpha: f64,
}

impl UEps1d {
    pub fn value(&self, x: f64, t: f64) -> f64 {
        let l = self.b - self.a;
        let m = 0.5 * (self.a + self.b);
        (self.u)(x, t) + 5.0 * self.alpha * self.eps * (x - m).powi(2) / l + 10.0 * self.alpha * self.eps * t / l
    }

    /// Time derivative of the perturbation alone.
    pub fn shift_rate(&self) -> f64 {
        10.0 * self.alpha * self.eps / (self.b - self.a)
    }

    /// Mirror image with `−ε`.
    pub fn lower(&self) -> Self {
        Self { eps: -self.eps, ..self.clone() }
    }
}

/// Builds `u_ε` with `α` measured as `sup|u_t|` on the boundary trace.
pub fn build_u_eps_1d(u: Oracle1d, trace: &BoundaryTrace, eps: f64, a: f64, b: f64) -> Result<UEps1d> {
    if !(b > a) {
        return Err(Error::InvalidArgument("need a < b".into()));
    }
    if !(eps >= 0.0 && eps <= (b - a) / 10.0 * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!("ε = {eps} must lie in [0, (b−a)/10]")));
    }
    Ok(UEps1d { u, a, b, eps, alpha: trace.alpha() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Sign of the outward coordinate `y` along x.
    fn outward(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

/// `f(y,t) = u_ε(x_b,t) + α((y−ε)³ + ε³)/ε + αεy`, with `y` the outward
/// distance from the boundary point `x_b`.
#[derive(Clone)]
pub struct BarrierF1d {
    pub eps: f64,
    pub alpha: f64,
    pub side: Side,
    pub xb: f64,
    trace: BoundaryTrace,
    u_eps_shift: (f64, f64),
}

impl BarrierF1d {
    /// Physical position of outward coordinate `y`.
    pub fn x_of(&self, y: f64) -> f64 {
        self.xb + self.side.outward() * y
    }

    pub fn boundary_value(&self, t: f64) -> f64 {
        self.trace.value(t) + self.u_eps_shift.0 + self.u_eps_shift.1 * t
    }

    pub fn value(&self, y: f64, t: f64) -> f64 {
        let (e, a) = (self.eps, self.alpha);
        self.boundary_value(t) + a * ((y - e).powi(3) + e.powi(3)) / e + a * e * y
    }

    pub fn f_t(&self, t: f64) -> f64 {
        self.trace.derivative(t) + self.u_eps_shift.1
    }

    pub fn f_y(&self, y: f64) -> f64 {
        3.0 * self.alpha * (y - self.eps).powi(2) / self.eps + self.alpha * self.eps
    }

    pub fn f_yy(&self, y: f64) -> f64 {
        6.0 * self.alpha * (y - self.eps) / self.eps
    }
}

/// Barrier matched to `u_ε` at the chosen endpoint; `trace` samples `u` there.
pub fn build_f_1d(u_eps: &UEps1d, trace: &BoundaryTrace, side: Side) -> Result<BarrierF1d> {
    if !(u_eps.eps > 0.0) {
        return Err(Error::InvalidArgument("the barrier needs ε > 0".into()));
    }
    let l = u_eps.b - u_eps.a;
    let xb = match side {
        Side::Left => u_eps.a,
        Side::Right => u_eps.b,
    };
    let quad = 5.0 * u_eps.alpha * u_eps.eps * (0.5 * l).powi(2) / l;
    Ok(BarrierF1d {
        eps: u_eps.eps,
        alpha: u_eps.alpha,
        side,
        xb,
        trace: trace.clone(),
        u_eps_shift: (quad, u_eps.shift_rate()),
    })
}

/// `f_t − f_yy + N f_y Φ_y`.
pub fn supersolution_residual(f_t: f64, f_yy: f64, f_y: f64, phi_y: f64, n: f64) -> f64 {
    f_t - f_yy + n * f_y * phi_y
}

/// Residual grid over `[−ε, y_max] × [0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualGrid {
    pub ny: usize,
    pub nt: usize,
    pub y_max: f64,
    pub t_end: f64,
}

impl ResidualGrid {
    pub fn new(y_max: f64, t_end: f64) -> Self {
        Self { ny: 400, nt: 100, y_max, t_end }
    }

    pub fn refined(self) -> Self {
        Self { ny: 2 * self.ny, nt: 2 * self.nt, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub min_residual: f64,
    /// Outward distance and time of the minimum.
    pub at_y: f64,
    pub at_t: f64,
    pub n: f64,
    pub eps: f64,
    pub alpha: f64,
    pub pass: bool,
}

/// Minimum of the residual of `f` on the grid. `Φ_y` is taken from the
/// potential at the physical location, so perturbed potentials are covered.
pub fn verify_supersolution_1d(
    f: &BarrierF1d,
    potential: &Potential,
    n: f64,
    grid: ResidualGrid,
    exec: Exec,
) -> Certificate {
    let ny = grid.ny.max(2);
    let nt = grid.nt.max(2);
    let y_lo = -f.eps;
    let points = ny * nt;
    let eval = |k: usize| {
        let (iy, it) = (k % ny, k / ny);
        let y = y_lo + (grid.y_max - y_lo) * iy as f64 / (ny - 1) as f64;
        let t = grid.t_end * it as f64 / (nt - 1) as f64;
        let phi_y = potential.value_grad(&pt(f.x_of(y), 0.0)).1.x * f.side.outward();
        supersolution_residual(f.f_t(t), f.f_yy(y), f.f_y(y), phi_y, n)
    };
    let (min, k) = exec.min_by(points, eval).expect("non-empty grid");
    let (iy, it) = (k % ny, k / ny);
    Certificate {
        min_residual: min,
        at_y: y_lo + (grid.y_max - y_lo) * iy as f64 / (ny - 1) as f64,
        at_t: grid.t_end * it as f64 / (nt - 1) as f64,
        n,
        eps: f.eps,
        alpha: f.alpha,
        pass: min > 0.0,
    }
}

/// Smallest `K` (to `tol`) such that `N = K·ε⁻³` certifies on the grid, found
/// by bisection on `[0, k_max]`. `None` if even `k_max` fails.
pub fn critical_coupling_1d(
    f: &BarrierF1d,
    potential: &Potential,
    grid: ResidualGrid,
    k_max: f64,
    tol: f64,
    exec: Exec,
) -> Option<f64> {
    let passes = |k: f64| verify_supersolution_1d(f, potential, k / f.eps.powi(3), grid, exec).pass;
    if !passes(k_max) {
        return None;
    }
    if passes(0.0) {
        return Some(0.0);
    }
    let (mut lo, mut hi) = (0.0, k_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if passes(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingReport {
    pub pass: bool,
    /// Set when `α = 0`, where the two slopes coincide.
    pub degenerate: bool,
    /// Smallest `u_{ε,y} − f_y` at the boundary (inward slope of `u_ε`
    /// against outward slope of `f`, both along the outward direction).
    pub min_margin: f64,
    /// Largest deviation of the measured `u_ε` slope from `5αε`.
    pub slope_error: f64,
}

/// Checks `u_{ε,y}(x_b,t) > f_y(0,t)` with the `u_ε` slope measured by
/// centred differences of step `h` at the given times.
pub fn verify_ordering_at_boundary(u_eps: &UEps1d, f: &BarrierF1d, times: &[f64], h: f64) -> OrderingReport {
    let s = f.side.outward();
    let mut min_margin = f64::INFINITY;
    let mut slope_error: f64 = 0.0;
    for &t in times {
        let slope = s * (u_eps.value(f.xb + h, t) - u_eps.value(f.xb - h, t)) / (2.0 * h);
        let target = 5.0 * u_eps.alpha * u_eps.eps;
        slope_error = slope_error.max((slope - target).abs());
        min_margin = min_margin.min(slope - f.f_y(0.0));
    }
    let degenerate = u_eps.alpha == 0.0;
    OrderingReport {
        // symbolically 5αε > 4αε
        pass: degenerate || (5.0 > 4.0 && min_margin > 0.0),
        degenerate,
        min_margin,
        slope_error,
    }
}

/// Smooth scalar test function with analytic first and second derivatives.
pub type Profile = dyn Fn(f64) -> (f64, f64, f64) + Send + Sync;

/// Largest `|L_h(f e^{−NΦ}) − e^{−NΦ}(f_xx − N f_x Φ_x)|` over interior
/// nodes with `x` in `window`, where `L_h` is the assembled penalized
/// operator (`A ≡ 1`) of the given domain and box.
pub fn verify_transform_identity(
    f: &Profile,
    domain: &DomainSpec,
    n: f64,
    panels: usize,
    window: (f64, f64),
) -> Result<f64> {
    let grid = GridSpec::new(domain.bounding_box, 1, panels, 1, 1.0)?;
    let problem = PenalizedProblem::new(*domain, Arc::new(ConstantField::identity()), n, scalar_fn(|_| 0.0), grid);
    let op = assemble_flux_operator(&problem, 0.0)?;
    let phi: Vec<f64> = (0..=panels)
        .map(|i| {
            let x = grid.node_x(i);
            f(x).0 * (-n * problem.potential.value(&pt(x, 0.0))).exp()
        })
        .collect();
    let mut out = vec![0.0; phi.len()];
    op.apply(Exec::Sequential, &phi, &mut out);
    let mut worst: f64 = 0.0;
    for i in 1..panels {
        let x = grid.node_x(i);
        if x < window.0 || x > window.1 {
            continue;
        }
        let (_, fx, fxx) = f(x);
        let (val, grad) = problem.potential.value_grad(&pt(x, 0.0));
        let exact = (-n * val).exp() * (fxx - n * fx * grad.x);
        worst = worst.max((out[i] - exact).abs());
    }
    Ok(worst)
}

/// `h̃`: signed distance to the circle (positive inside) for `r ≥ R/2`,
/// continued by the polynomial in `r²` that matches it to second order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskHeight {
    pub radius: f64,
}

impl DiskHeight {
    pub fn value(&self, x: &Point) -> f64 {
        let s = x.norm() / self.radius;
        let v = if s >= 0.5 { 1.0 - s } else { 0.8125 - 1.5 * s * s + s.powi(4) };
        self.radius * v
    }

    /// `sup|Δh̃|`, attained at the centre.
    pub fn laplacian_sup(&self) -> f64 {
        6.0 / self.radius
    }

    /// `sup|h̃|`.
    pub fn sup(&self) -> f64 {
        0.8125 * self.radius
    }
}

pub type BoundaryOracle = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;

/// The multi-dimensional barrier `f = u_ε(S(x,t),t) + α((d−ε)³+ε³)/ε + αεd`
/// with `u_ε = u + 5αεΛ(−h̃ + Kt + H)`; on ∂Ω the `h̃` term vanishes.
#[derive(Clone)]
pub struct MultiBarrier {
    pub domain: DomainSpec,
    pub diffusion: Arc<dyn DiffusionField>,
    /// `u` restricted to ∂Ω.
    pub u_boundary: BoundaryOracle,
    /// `u_t` restricted to ∂Ω.
    pub u_t_boundary: BoundaryOracle,
    pub eps: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// `sup|∇·(A∇h̃)|` and `sup|h̃|`.
    pub k_lap: f64,
    pub h_sup: f64,
}

/// Boundary point along `∓A∇d` for points on either side of ∂Ω.
fn project_band(domain: &DomainSpec, a: &dyn DiffusionField, x: &Point, t: f64) -> Result<Point> {
    let d = domain.sdf(x);
    if d > 0.0 {
        return Ok(project_s(domain, a, x, t)?.point);
    }
    if d == 0.0 {
        return Ok(*x);
    }
    let dir = a.eval(x, t) * domain.shape.grad_sdf(x);
    let bound = 2.0 * dprime_bound(-d, domain.gamma, a.ellipticity_ratio())? / dir.norm();
    let g = |lam: f64| domain.sdf(&(x + lam * dir));
    let (mut lo, mut hi) = (0.0, bound);
    if g(hi) < 0.0 {
        return Err(Error::GeometryViolation { x: x.x, y: x.y, reason: "no crossing inside the band".into() });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(x + 0.5 * (lo + hi) * dir)
}

impl MultiBarrier {
    fn shift(&self, t: f64) -> f64 {
        5.0 * self.alpha * self.eps * self.lambda * (self.k_lap * t + self.h_sup)
    }

    /// `u_ε(S(x,t), t)`.
    pub fn u_eps_on_s(&self, x: &Point, t: f64) -> Result<f64> {
        let s = project_band(&self.domain, self.diffusion.as_ref(), x, t)?;
        Ok((self.u_boundary)(&s, t) + self.shift(t))
    }

    pub fn value(&self, x: &Point, t: f64) -> Result<f64> {
        let d = self.domain.sdf(x);
        let (e, a) = (self.eps, self.alpha);
        Ok(self.u_eps_on_s(x, t)? + a * ((d - e).powi(3) + e.powi(3)) / e + a * e * d)
    }
}

/// Central-difference gradient and Hessian of `g` at `x`.
fn fd_derivatives<G: Fn(&Point) -> Result<f64>>(g: &G, x: &Point, h: f64) -> Result<(Point, [[f64; 2]; 2])> {
    let e = [pt(h, 0.0), pt(0.0, h)];
    let c = g(x)?;
    let mut grad = Point::zeros();
    let mut hess = [[0.0; 2]; 2];
    for i in 0..2 {
        let p = g(&(x + e[i]))?;
        let m = g(&(x - e[i]))?;
        grad[i] = (p - m) / (2.0 * h);
        hess[i][i] = (p - 2.0 * c + m) / (h * h);
    }
    let pp = g(&(x + e[0] + e[1]))?;
    let pm = g(&(x + e[0] - e[1]))?;
    let mp = g(&(x - e[0] + e[1]))?;
    let mm = g(&(x - e[0] - e[1]))?;
    hess[0][1] = (pp - pm - mp + mm) / (4.0 * h * h);
    hess[1][0] = hess[0][1];
    Ok((grad, hess))
}

/// `∇·(A∇g)` by central differences.
fn fd_divergence_form<G: Fn(&Point) -> Result<f64>>(
    g: &G,
    a: &dyn DiffusionField,
    x: &Point,
    t: f64,
    h: f64,
) -> Result<(f64, Point)> {
    let (grad, hess) = fd_derivatives(g, x, h)?;
    let m = a.eval(x, t);
    let mut val = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            val += m[(i, j)] * hess[i][j];
        }
    }
    // Σ_i ∂_i a^{ij} g_j
    for i in 0..2 {
        let mut e = Point::zeros();
        e[i] = h;
        let dp = a.eval(&(x + e), t);
        let dm = a.eval(&(x - e), t);
        for j in 0..2 {
            val += (dp[(i, j)] - dm[(i, j)]) / (2.0 * h) * grad[j];
        }
    }
    Ok((val, grad))
}

/// Sample layout of the multi-d certificate: signed distances in
/// `[−ε, d0]`, boundary directions and times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandGrid {
    pub nd: usize,
    pub directions: usize,
    pub nt: usize,
    pub d_max: f64,
    pub t_end: f64,
    /// Finite-difference step.
    pub h: f64,
}

impl BandGrid {
    pub fn new(d_max: f64, t_end: f64) -> Self {
        Self { nd: 400, directions: 16, nt: 100, d_max, t_end, h: 1e-4 }
    }

    /// Sample point at signed distance `d` along boundary sample `p`.
    fn point(&self, domain: &DomainSpec, p: &Point, d: f64) -> Point {
        p + d * domain.shape.normal(p)
    }
}

/// Constant `C` of the multi-d construction: the largest of
/// `|∇·(A∇(u_ε∘S))|` over the band, `sup|u_t|` on ∂Ω, `|∇u_ε·S_t|` over the
/// band and the band curvature term `|∇·(A∇d)|`.
pub fn calibrate_c(barrier: &MultiBarrier, grid: &BandGrid, exec: Exec) -> Result<f64> {
    let dom = &barrier.domain;
    let a = barrier.diffusion.as_ref();
    let bnd = dom.shape.boundary_samples(grid.directions);
    let nd = 64;
    let nt = 16;
    let count = bnd.len() * nd * nt;
    let results = exec.map((0..count).collect(), |k| -> Result<f64> {
        let ib = k % bnd.len();
        let id = (k / bnd.len()) % nd;
        let it = k / (bnd.len() * nd);
        let d = -barrier.eps + (grid.d_max + barrier.eps) * id as f64 / (nd - 1) as f64;
        let t = grid.t_end * it as f64 / (nt - 1) as f64;
        let x = grid.point(dom, &bnd[ib], d);
        let comp = |y: &Point| barrier.u_eps_on_s(y, t);
        let (lap, _) = fd_divergence_form(&comp, a, &x, t, grid.h)?;
        let dist = |y: &Point| Ok(dom.sdf(y));
        let (curv, _) = fd_divergence_form(&dist, a, &x, t, grid.h)?;
        let ut = (barrier.u_t_boundary)(&bnd[ib], t).abs();
        // ∇u_ε·S_t: change of u_ε(S(x,·), s) in the S argument only
        let ht = 1e-5 * grid.t_end.max(1e-3);
        let (t0, t1) = ((t - ht).max(0.0), t + ht);
        let s0 = project_band(dom, a, &x, t0)?;
        let s1 = project_band(dom, a, &x, t1)?;
        let drift = ((barrier.u_boundary)(&s1, t) - (barrier.u_boundary)(&s0, t)) / (t1 - t0);
        Ok(lap.abs().max(curv.abs()).max(ut).max(drift.abs()))
    });
    let mut c: f64 = 0.0;
    for r in results {
        c = c.max(r?);
    }
    Ok(c)
}

/// Minimum over the band grid of `f_t + N∇f·A∇Φ − ∇·(A∇f)`, derivatives by
/// central differences.
pub fn verify_supersolution_multi(
    barrier: &MultiBarrier,
    potential: &Potential,
    n: f64,
    grid: &BandGrid,
    exec: Exec,
) -> Result<Certificate> {
    let dom = &barrier.domain;
    let a = barrier.diffusion.as_ref();
    let bnd = dom.shape.boundary_samples(grid.directions);
    let count = bnd.len() * grid.nd * grid.nt;
    let locate = |k: usize| {
        let ib = k % bnd.len();
        let id = (k / bnd.len()) % grid.nd;
        let it = k / (bnd.len() * grid.nd);
        let d = -barrier.eps + (grid.d_max + barrier.eps) * id as f64 / (grid.nd - 1) as f64;
        let t = grid.t_end * it as f64 / (grid.nt - 1) as f64;
        (grid.point(dom, &bnd[ib], d), d, t)
    };
    let residuals = exec.map((0..count).collect(), |k| -> Result<f64> {
        let (x, _, t) = locate(k);
        let f = |y: &Point| barrier.value(y, t);
        let (div, grad) = fd_divergence_form(&f, a, &x, t, grid.h)?;
        let ht = 1e-5 * grid.t_end.max(1e-3);
        let f_t = if t >= ht {
            (barrier.value(&x, t + ht)? - barrier.value(&x, t - ht)?) / (2.0 * ht)
        } else {
            (barrier.value(&x, t + ht)? - barrier.value(&x, t)?) / ht
        };
        let (_, grad_phi) = potential.value_grad(&x);
        let drift = grad.dot(&(a.eval(&x, t) * grad_phi));
        Ok(f_t + n * drift - div)
    });
    let mut best = (f64::INFINITY, 0);
    for (k, r) in residuals.into_iter().enumerate() {
        let r = r?;
        if r < best.0 {
            best = (r, k);
        }
    }
    let (_, d, t) = locate(best.1);
    Ok(Certificate {
        min_residual: best.0,
        at_y: d,
        at_t: t,
        n,
        eps: barrier.eps,
        alpha: barrier.alpha,
        pass: best.0 > 0.0,
    })
}

/// Full disk certificate for a radial solution with `A = Id`: calibrates
/// `C`, sets `α = 3C` and `N = 12(C·d0 + Λ + 1)ε⁻³`, then evaluates the
/// residual. Returns the certificate and `C`.
pub fn disk_certificate(
    radius: f64,
    trace: &BoundaryTrace,
    eps: f64,
    d0: f64,
    t_end: f64,
    exec: Exec,
) -> Result<(Certificate, f64)> {
    let domain = DomainSpec::with_margin(Shape::Disk { radius }, d0 + eps)?;
    let height = DiskHeight { radius };
    let tr = trace.clone();
    let tr2 = trace.clone();
    let mut barrier = MultiBarrier {
        domain,
        diffusion: Arc::new(ConstantField::identity()),
        u_boundary: Arc::new(move |_, t| tr.value(t)),
        u_t_boundary: Arc::new(move |_, t| tr2.derivative(t)),
        eps,
        alpha: 0.0,
        lambda: 1.0,
        k_lap: height.laplacian_sup(),
        h_sup: height.sup(),
    };
    let grid = BandGrid::new(d0, t_end);
    let c = calibrate_c(&barrier, &grid, exec)?;
    barrier.alpha = 3.0 * c;
    let n = 12.0 * (c * d0 + barrier.lambda + 1.0) / eps.powi(3);
    let cert = verify_supersolution_multi(&barrier, &Potential::cubic(domain.shape), n, &grid, exec)?;
    Ok((cert, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::reference::heat_exact;
    use std::f64::consts::PI;

    fn exact_trace(t_end: f64) -> BoundaryTrace {
        BoundaryTrace::from_fn(|t| heat_exact(1.0, t), t_end, 20_000).unwrap()
    }

    fn interval() -> DomainSpec {
        DomainSpec::new(Shape::Interval { a: 0.0, b: 1.0 }, Aabb::interval(-1.0, 2.0)).unwrap()
    }

    #[test]
    fn trace_alpha_of_exact_solution() {
        let tr = exact_trace(0.3);
        assert!((tr.alpha() - 4.0 * PI * PI).abs() / (4.0 * PI * PI) < 1e-3);
    }

    #[test]
    fn u_eps_examples() {
        let flat = BoundaryTrace::from_fn(|_| 1.0, 1.0, 10).unwrap();
        let u: Oracle1d = Arc::new(|_, _| 1.0);
        let ue = build_u_eps_1d(u.clone(), &flat, 0.05, 0.0, 1.0).unwrap();
        assert_eq!(ue.alpha, 0.0);
        assert_eq!(ue.value(0.3, 0.7), 1.0);
        let zero = build_u_eps_1d(u, &flat, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(zero.value(0.2, 0.1), 1.0);
        assert!(build_u_eps_1d(Arc::new(|_, _| 1.0), &flat, 0.2, 0.0, 1.0).is_err());

        // 0.25α(x−½)² + 0.5αt for ε = 0.05 on [0,1]
        let u: Oracle1d = Arc::new(heat_exact);
        let ue = UEps1d { u, a: 0.0, b: 1.0, eps: 0.05, alpha: 2.0 };
        let got = ue.value(0.8, 0.1) - heat_exact(0.8, 0.1);
        assert!((got - (0.5 * 0.09 + 0.1)).abs() < 1e-14);
    }

    #[test]
    fn u_eps_boundary_slope() {
        let tr = exact_trace(0.3);
        let ue = build_u_eps_1d(Arc::new(heat_exact), &tr, 0.05, 0.0, 1.0).unwrap();
        for &t in &[0.0, 0.05, 0.2] {
            let h = 1e-4;
            let slope = (ue.value(1.0 + h, t) - ue.value(1.0 - h, t)) / (2.0 * h);
            assert!((slope - 5.0 * 0.05 * ue.alpha).abs() < 1e-10, "slope {slope}");
        }
    }

    #[test]
    fn f_examples() {
        let tr = exact_trace(0.3);
        let ue = build_u_eps_1d(Arc::new(heat_exact), &tr, 0.1, 0.0, 1.0).unwrap();
        let f = build_f_1d(&ue, &tr, Side::Right).unwrap();
        // the trace interpolates the sampled boundary values linearly
        for &t in &[0.0, 0.1, 0.3] {
            assert!((f.value(0.0, t) - ue.value(1.0, t)).abs() < 1e-7);
        }
        assert!((f.f_y(0.0) - 4.0 * f.alpha * 0.1).abs() < 1e-12);
        assert!((f.f_yy(0.0) + 6.0 * f.alpha).abs() < 1e-12);
        // analytic derivatives against differences
        let h = 1e-5;
        let y = 0.07;
        assert!(((f.value(y + h, 0.1) - f.value(y - h, 0.1)) / (2.0 * h) - f.f_y(y)).abs() < 1e-6);
    }

    #[test]
    fn trivial_residual() {
        assert_eq!(supersolution_residual(1.0, 0.0, 0.0, 0.0, 1e6), 1.0);
    }

    #[test]
    fn certificate_passes_at_ten_eps_cubed() {
        let tr = exact_trace(0.3);
        for &eps in &[0.05, 0.1] {
            let ue = build_u_eps_1d(Arc::new(heat_exact), &tr, eps, 0.0, 1.0).unwrap();
            for side in [Side::Left, Side::Right] {
                let f = build_f_1d(&ue, &tr, side).unwrap();
                let cert = verify_supersolution_1d(
                    &f,
                    &Potential::cubic(Shape::Interval { a: 0.0, b: 1.0 }),
                    10.0 / eps.powi(3),
                    ResidualGrid::new(0.25, 0.3),
                    Exec::default(),
                );
                assert!(cert.pass, "{cert:?}");
            }
        }
    }

    #[test]
    fn ordering_holds() {
        let tr = exact_trace(0.3);
        let ue = build_u_eps_1d(Arc::new(heat_exact), &tr, 0.05, 0.0, 1.0).unwrap();
        let f = build_f_1d(&ue, &tr, Side::Right).unwrap();
        let rep = verify_ordering_at_boundary(&ue, &f, &[0.0, 0.1, 0.3], 1e-4);
        assert!(rep.pass && !rep.degenerate);
        assert!((rep.min_margin - ue.alpha * 0.05).abs() < 1e-8);
        let flat = BoundaryTrace::from_fn(|_| 1.0, 1.0, 10).unwrap();
        let ue0 = build_u_eps_1d(Arc::new(|_, _| 1.0), &flat, 0.05, 0.0, 1.0).unwrap();
        let f0 = build_f_1d(&ue0, &flat, Side::Left).unwrap();
        let rep = verify_ordering_at_boundary(&ue0, &f0, &[0.5], 1e-4);
        assert!(rep.pass && rep.degenerate);
    }

    #[test]
    fn transform_identity_trivial_and_second_order() {
        let dom = DomainSpec::new(Shape::Interval { a: -1.0, b: 0.0 }, Aabb::interval(-2.0, 1.0)).unwrap();
        let one = |_: f64| (1.0, 0.0, 0.0);
        assert_eq!(verify_transform_identity(&one, &dom, 0.0, 60, (-1.9, 0.9)).unwrap(), 0.0);
        let sq = |x: f64| (x * x, 2.0 * x, 2.0);
        let e1 = verify_transform_identity(&sq, &dom, 100.0, 600, (0.1, 0.9)).unwrap();
        let e2 = verify_transform_identity(&sq, &dom, 100.0, 1200, (0.1, 0.9)).unwrap();
        assert!((3.5..4.5).contains(&(e1 / e2)), "ratio {}", e1 / e2);
        let _ = interval();
    }

    #[test]
    fn disk_height_is_c2() {
        let h = DiskHeight { radius: 1.0 };
        let f = |r: f64| h.value(&pt(r, 0.0));
        for r in [0.5 - 1e-9, 0.5 + 1e-9] {
            let d = 1e-4;
            let second = (f(r + d) - 2.0 * f(r) + f(r - d)) / (d * d);
            assert!(second.abs() < 1e-3);
        }
        assert!((f(0.5) - 0.5).abs() < 1e-15);
        assert!((f(0.0) - h.sup()).abs() < 1e-15);
    }
}
