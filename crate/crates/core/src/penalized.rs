//! The whole-box penalized problem `v_t = ∇·(A∇v + N v A∇Φ)` in flux form,
//! stepped with Crank–Nicolson and zero Dirichlet data on the box.

use std::sync::Arc;

use crate::coefficients::DiffusionField;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{band_width, cutoff_mu_distance, project_s, pt, DomainSpec, Point, Potential};
use crate::grid::{GridFunction, GridSpec};
use crate::linalg::{bicgstab, Stencil9, Tridiag, TridiagFactor};

pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

pub fn scalar_fn<F: Fn(&Point) -> f64 + Send + Sync + 'static>(f: F) -> ScalarFn {
    Arc::new(f)
}

#[derive(Clone)]
pub enum InitialData {
    /// `u0` on the closure of Ω, extended outside by the penalized profile.
    Extend(ScalarFn),
    /// Values prescribed on the whole box.
    Whole(ScalarFn),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftForm {
    /// `N∇·(vA∇Φ)`: conserves mass.
    #[default]
    Divergence,
    /// `N A∇Φ·∇v`, one-dimensional only.
    NonDivergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaceScheme {
    #[default]
    Centered,
    Upwind,
    /// Exponentially fitted (Scharfetter–Gummel) flux, exact for the local
    /// equilibrium `e^{−c x/a}`; divergence form only.
    Fitted,
}

/// `B(x) = x/(eˣ − 1)`.
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// Weights `(α, β)` of the face flux `a v_x + c v ≈ α v_left + β v_right`.
pub fn face_weights(scheme: FaceScheme, a: f64, h: f64, c: f64) -> (f64, f64) {
    match scheme {
        FaceScheme::Centered => (-a / h + 0.5 * c, a / h + 0.5 * c),
        FaceScheme::Upwind if c < 0.0 => (-a / h + c, a / h),
        FaceScheme::Upwind => (-a / h, a / h + c),
        FaceScheme::Fitted => {
            let p = c * h / a;
            (-a / h * bernoulli(p), a / h * bernoulli(-p))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub drift: DriftForm,
    pub face: FaceScheme,
    pub exec: Exec,
    /// Relative residual target of the 2D iterative solve.
    pub tol: f64,
    pub max_iter: usize,
    /// Times at which the state is recorded; each snapshot is taken at the
    /// first step on or after the requested time.
    pub snapshot_times: Vec<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            drift: DriftForm::Divergence,
            face: FaceScheme::Centered,
            exec: Exec::default(),
            tol: 1e-12,
            max_iter: 5000,
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Clone)]
pub struct PenalizedProblem {
    pub domain: DomainSpec,
    pub diffusion: Arc<dyn DiffusionField>,
    pub potential: Potential,
    pub n: f64,
    pub initial: InitialData,
    pub grid: GridSpec,
    pub options: SolverOptions,
}

impl PenalizedProblem {
    /// Problem with the cubic potential of the domain and default options.
    pub fn new(domain: DomainSpec, diffusion: Arc<dyn DiffusionField>, n: f64, u0: ScalarFn, grid: GridSpec) -> Self {
        Self {
            domain,
            diffusion,
            potential: Potential::cubic(domain.shape),
            n,
            initial: InitialData::Extend(u0),
            grid,
            options: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n >= 0.0) || !self.n.is_finite() {
            return Err(Error::InvalidArgument(format!("N must be non-negative, got {}", self.n)));
        }
        if self.grid.dimension != self.domain.dimension() {
            return Err(Error::InvalidArgument("grid and domain dimensions differ".into()));
        }
        if self.options.drift == DriftForm::NonDivergence && self.grid.dimension != 1 {
            return Err(Error::InvalidArgument("non-divergence drift is one-dimensional only".into()));
        }
        if self.options.drift == DriftForm::NonDivergence && self.options.face == FaceScheme::Fitted {
            return Err(Error::InvalidArgument("the fitted flux needs the divergence form".into()));
        }
        let check = DomainSpec { bounding_box: self.grid.bbox, ..self.domain };
        check.check_box_margin(self.band_width()?)
    }

    pub fn band_width(&self) -> Result<f64> {
        band_width(self.domain.gamma, self.diffusion.ellipticity_ratio())
    }
}

/// Initial state on the grid: `u0` inside Ω and `e^{−NΦ}·μ·u0(S(x,0))`
/// outside (`u0` at the nearest endpoint in 1D), zero on the box boundary.
pub fn extend_initial(problem: &PenalizedProblem) -> Result<GridFunction> {
    let grid = problem.grid;
    let mut values = vec![0.0; grid.len()];
    match &problem.initial {
        InitialData::Whole(f) => {
            problem.options.exec.fill(&mut values, |k| f(&grid.point(k)));
        }
        InitialData::Extend(u0) => {
            let d0 = problem.band_width()?;
            let results: Vec<Result<f64>> = problem.options.exec.map((0..grid.len()).collect(), |k| {
                let x = grid.point(k);
                let d = problem.domain.sdf(&x);
                if d <= 0.0 {
                    return Ok(u0(&x));
                }
                let decay = (-problem.n * problem.potential.value(&x)).exp();
                if grid.dimension == 1 {
                    let b = problem.domain.shape.closest_point(&x);
                    return Ok(u0(&b) * decay);
                }
                let mu = cutoff_mu_distance(d0, d);
                if mu == 0.0 || decay == 0.0 {
                    return Ok(0.0);
                }
                let s = project_s(&problem.domain, problem.diffusion.as_ref(), &x, 0.0)?;
                Ok(decay * mu * u0(&s.point))
            });
            for (slot, r) in values.iter_mut().zip(results) {
                *slot = r?;
            }
        }
    }
    if grid.dimension == 1 {
        values[0] = 0.0;
        values[grid.panels] = 0.0;
    }
    GridFunction::new(grid, values)
}

/// Face fluxes `F = α·v_left + β·v_right` of the 1D operator.
#[derive(Debug, Clone)]
struct Faces1d {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

/// Spatial operator at a fixed time.
#[derive(Debug, Clone)]
pub enum FluxOperator {
    OneD { matrix: Tridiag, faces: Option<BoundaryFaces1d>, h: f64 },
    TwoD { matrix: Stencil9, faces: Faces2d },
}

/// Boundary-face coefficients kept for the mass balance in 1D.
#[derive(Debug, Clone)]
pub struct BoundaryFaces1d {
    first: (f64, f64),
    last: (f64, f64),
}

impl FluxOperator {
    pub fn apply(&self, exec: Exec, v: &[f64], out: &mut [f64]) {
        match self {
            FluxOperator::OneD { matrix, .. } => matrix.apply(v, out),
            FluxOperator::TwoD { matrix, .. } => matrix.apply(exec, v, out),
        }
    }

    /// Net outward flux through the box boundary, or `None` for the
    /// non-conservative form.
    pub fn boundary_flux(&self, v: &[f64]) -> Option<f64> {
        match self {
            FluxOperator::OneD { faces, .. } => {
                let f = faces.as_ref()?;
                let n = v.len();
                let right = f.last.0 * v[n - 2] + f.last.1 * v[n - 1];
                let left = f.first.0 * v[0] + f.first.1 * v[1];
                Some(right - left)
            }
            FluxOperator::TwoD { faces, .. } => Some(faces.boundary_flux(v)),
        }
    }

    pub fn tridiag(&self) -> Option<&Tridiag> {
        match self {
            FluxOperator::OneD { matrix, .. } => Some(matrix),
            _ => None,
        }
    }
}

/// Assembles the discrete operator `L` at time `t`.
pub fn assemble_flux_operator(problem: &PenalizedProblem, t: f64) -> Result<FluxOperator> {
    problem.validate()?;
    Ok(assemble(problem, t))
}

fn assemble(problem: &PenalizedProblem, t: f64) -> FluxOperator {
    if problem.grid.dimension == 1 {
        match problem.options.drift {
            DriftForm::Divergence => assemble_1d_divergence(problem, t),
            DriftForm::NonDivergence => assemble_1d_nondivergence(problem, t),
        }
    } else {
        let faces = Faces2d::new(problem, t);
        let matrix = faces.stencil(problem.options.exec);
        FluxOperator::TwoD { matrix, faces }
    }
}

fn drift_potential_1d(problem: &PenalizedProblem, x: f64) -> f64 {
    problem.potential.value_grad(&pt(x, 0.0)).1.x
}

fn assemble_1d_divergence(problem: &PenalizedProblem, t: f64) -> FluxOperator {
    let g = problem.grid;
    let p = g.panels;
    let h = g.hx();
    let mut faces = Faces1d { alpha: vec![0.0; p], beta: vec![0.0; p] };
    for f in 0..p {
        let xf = g.node_x(f) + 0.5 * h;
        let a = problem.diffusion.scalar(xf, t);
        let c = problem.n * a * drift_potential_1d(problem, xf);
        let (al, be) = face_weights(problem.options.face, a, h, c);
        faces.alpha[f] = al;
        faces.beta[f] = be;
    }
    let mut m = Tridiag::zeros(p + 1);
    for i in 1..p {
        m.lower[i] = -faces.alpha[i - 1] / h;
        m.diag[i] = (faces.alpha[i] - faces.beta[i - 1]) / h;
        m.upper[i] = faces.beta[i] / h;
    }
    let boundary =
        BoundaryFaces1d { first: (faces.alpha[0], faces.beta[0]), last: (faces.alpha[p - 1], faces.beta[p - 1]) };
    FluxOperator::OneD { matrix: m, faces: Some(boundary), h }
}

fn assemble_1d_nondivergence(problem: &PenalizedProblem, t: f64) -> FluxOperator {
    let g = problem.grid;
    let p = g.panels;
    let h = g.hx();
    let mut m = Tridiag::zeros(p + 1);
    for i in 1..p {
        let x = g.node_x(i);
        let aw = problem.diffusion.scalar(x - 0.5 * h, t);
        let ae = problem.diffusion.scalar(x + 0.5 * h, t);
        let c = problem.n * problem.diffusion.scalar(x, t) * drift_potential_1d(problem, x);
        m.lower[i] = aw / (h * h);
        m.diag[i] = -(aw + ae) / (h * h);
        m.upper[i] = ae / (h * h);
        match problem.options.face {
            FaceScheme::Centered => {
                m.lower[i] -= 0.5 * c / h;
                m.upper[i] += 0.5 * c / h;
            }
            FaceScheme::Upwind | FaceScheme::Fitted => {
                if c > 0.0 {
                    m.diag[i] -= c / h;
                    m.upper[i] += c / h;
                } else {
                    m.lower[i] -= c / h;
                    m.diag[i] += c / h;
                }
            }
        }
    }
    FluxOperator::OneD { matrix: m, faces: None, h }
}

/// Per-face coefficients of the 2D flux `F = A∇v·n + N v (A∇Φ)·n`.
#[derive(Debug, Clone)]
pub struct Faces2d {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    scheme: FaceScheme,
    /// x-faces, `(nx+1)·ny`, index `j·(nx+1) + i` for the face left of cell `i`:
    /// `(a11, a12, drift)`.
    xf: Vec<[f64; 3]>,
    /// y-faces, `nx·(ny+1)`, index `j·nx + i` for the face below cell row `j`:
    /// `(a22, a12, drift)`.
    yf: Vec<[f64; 3]>,
}

impl Faces2d {
    fn new(problem: &PenalizedProblem, t: f64) -> Self {
        let g = problem.grid;
        let (nx, ny) = (g.panels, g.panels);
        let (hx, hy) = (g.hx(), g.hy());
        let lo = g.bbox.lo;
        let exec = problem.options.exec;
        let coef = |x: Point, axis: usize| {
            let a = problem.diffusion.eval(&x, t);
            let (_, grad) = problem.potential.value_grad(&x);
            let ag = a * grad;
            if axis == 0 {
                [a[(0, 0)], a[(0, 1)], problem.n * ag.x]
            } else {
                [a[(1, 1)], a[(0, 1)], problem.n * ag.y]
            }
        };
        let mut xf = vec![[0.0; 3]; (nx + 1) * ny];
        exec.fill(&mut xf, |k| {
            let (i, j) = (k % (nx + 1), k / (nx + 1));
            coef(pt(lo.x + i as f64 * hx, lo.y + (j as f64 + 0.5) * hy), 0)
        });
        let mut yf = vec![[0.0; 3]; nx * (ny + 1)];
        exec.fill(&mut yf, |k| {
            let (i, j) = (k % nx, k / nx);
            coef(pt(lo.x + (i as f64 + 0.5) * hx, lo.y + j as f64 * hy), 1)
        });
        Self { nx, ny, hx, hy, scheme: problem.options.face, xf, yf }
    }

    /// Flux through the x-face left of cell `(i, j)`, `0 ≤ i ≤ nx`, as
    /// weights on logical (possibly ghost) cells.
    fn x_face_terms(&self, i: isize, j: isize) -> [(isize, isize, f64); 6] {
        let [a11, a12, c] = self.xf[j as usize * (self.nx + 1) + i as usize];
        let (wm, wp) = face_weights(self.scheme, a11, self.hx, c);
        let q = a12 / (4.0 * self.hy);
        [(i - 1, j, wm), (i, j, wp), (i - 1, j + 1, q), (i, j + 1, q), (i - 1, j - 1, -q), (i, j - 1, -q)]
    }

    /// Flux through the y-face below cell `(i, j)`, `0 ≤ j ≤ ny`.
    fn y_face_terms(&self, i: isize, j: isize) -> [(isize, isize, f64); 6] {
        let [a22, a12, c] = self.yf[j as usize * self.nx + i as usize];
        let (wm, wp) = face_weights(self.scheme, a22, self.hy, c);
        let q = a12 / (4.0 * self.hx);
        [(i, j - 1, wm), (i, j, wp), (i + 1, j - 1, q), (i + 1, j, q), (i - 1, j - 1, -q), (i - 1, j, -q)]
    }

    /// Maps a logical cell to a stored one; ghosts mirror with a sign flip so
    /// the boundary face value is zero.
    fn reflect(&self, i: isize, j: isize) -> (usize, usize, f64) {
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let mut sign = 1.0;
        let ii = if i < 0 {
            sign = -sign;
            -1 - i
        } else if i >= nx {
            sign = -sign;
            2 * nx - 1 - i
        } else {
            i
        };
        let jj = if j < 0 {
            sign = -sign;
            -1 - j
        } else if j >= ny {
            sign = -sign;
            2 * ny - 1 - j
        } else {
            j
        };
        (ii as usize, jj as usize, sign)
    }

    fn eval_terms(&self, terms: &[(isize, isize, f64); 6], v: &[f64]) -> f64 {
        terms
            .iter()
            .map(|&(i, j, w)| {
                let (ii, jj, s) = self.reflect(i, j);
                w * s * v[jj * self.nx + ii]
            })
            .sum()
    }

    fn stencil(&self, exec: Exec) -> Stencil9 {
        let (nx, ny) = (self.nx, self.ny);
        let mut rows = vec![([0u32; 9], [0.0f64; 9]); nx * ny];
        exec.fill(&mut rows, |k| {
            let (ci, cj) = ((k % nx) as isize, (k / nx) as isize);
            let mut cols = [k as u32; 9];
            let mut vals = [0.0; 9];
            for dj in -1..=1isize {
                for di in -1..=1isize {
                    let ii = ci + di;
                    let jj = cj + dj;
                    if ii >= 0 && jj >= 0 && (ii as usize) < nx && (jj as usize) < ny {
                        cols[((dj + 1) * 3 + di + 1) as usize] = (jj as usize * nx + ii as usize) as u32;
                    }
                }
            }
            let mut add = |terms: [(isize, isize, f64); 6], scale: f64| {
                for (i, j, w) in terms {
                    let (ii, jj, s) = self.reflect(i, j);
                    let slot = (jj as isize - cj + 1) * 3 + (ii as isize - ci + 1);
                    vals[slot as usize] += scale * s * w;
                }
            };
            add(self.x_face_terms(ci + 1, cj), 1.0 / self.hx);
            add(self.x_face_terms(ci, cj), -1.0 / self.hx);
            add(self.y_face_terms(ci, cj + 1), 1.0 / self.hy);
            add(self.y_face_terms(ci, cj), -1.0 / self.hy);
            (cols, vals)
        });
        let (cols, vals) = rows.into_iter().unzip();
        Stencil9 { cols, vals }
    }

    /// Outward flux through the box boundary, times face length.
    fn boundary_flux(&self, v: &[f64]) -> f64 {
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let mut total = 0.0;
        for j in 0..ny {
            total += self.hy * self.eval_terms(&self.x_face_terms(nx, j), v);
            total -= self.hy * self.eval_terms(&self.x_face_terms(0, j), v);
        }
        for i in 0..nx {
            total += self.hx * self.eval_terms(&self.y_face_terms(i, ny), v);
            total -= self.hx * self.eval_terms(&self.y_face_terms(i, 0), v);
        }
        total
    }

    /// Largest `|N(A∇Φ)·n|` over the faces.
    fn max_drift(&self) -> f64 {
        self.xf.iter().chain(&self.yf).map(|c| c[2].abs()).fold(0.0, f64::max)
    }
}

/// Trapezoid (1D) or midpoint (2D) integral of the grid values.
pub fn total_mass(v: &GridFunction) -> f64 {
    let g = v.grid;
    Exec::Sequential.sum(v.values.len(), |k| g.weight(k) * v.values[k])
}

/// Largest `|v − u(x,t)|` over values located in the closed domain.
pub fn restrict_and_error<F: Fn(&Point, f64) -> f64>(
    v: &GridFunction,
    domain: &DomainSpec,
    reference: F,
    t: f64,
) -> f64 {
    let tol = 1e-12 * domain.diameter();
    let mut worst: f64 = 0.0;
    for (k, val) in v.values.iter().enumerate() {
        let x = v.grid.point(k);
        if domain.sdf(&x) <= tol {
            worst = worst.max((val - reference(&x, t)).abs());
        }
    }
    worst
}

/// Mass-balance bookkeeping of a divergence-form run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Conservation {
    pub initial_mass: f64,
    /// Accumulated outward flux `∫ B dt` (CN quadrature).
    pub boundary_outflow: f64,
    /// Largest per-step `|Δmass − dt·B̄|`.
    pub max_step_defect: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_state: GridFunction,
    pub snapshots: Vec<(f64, GridFunction)>,
    pub conservation: Option<Conservation>,
    /// `dt·max|N A∇Φ|/h`.
    pub stiffness: f64,
    /// Largest iteration count of the 2D linear solves.
    pub max_iterations: usize,
}

enum Solver {
    Thomas(TridiagFactor),
    Iterative(Stencil9),
}

/// Crank–Nicolson time stepper.
pub struct Stepper<'a> {
    problem: &'a PenalizedProblem,
    step: usize,
    v: Vec<f64>,
    op_now: FluxOperator,
    /// Cached operator and solver for time-independent coefficients.
    cached: Option<(FluxOperator, Solver)>,
    conservation: Option<Conservation>,
    max_iterations: usize,
    work: Vec<f64>,
    /// State before the last step, for the 2D initial guess.
    previous: Option<Vec<f64>>,
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a PenalizedProblem) -> Result<Self> {
        problem.validate()?;
        let v0 = extend_initial(problem)?;
        Self::with_state(problem, v0.values)
    }

    /// Starts from given values instead of the extended initial data.
    pub fn with_state(problem: &'a PenalizedProblem, mut v: Vec<f64>) -> Result<Self> {
        problem.validate()?;
        if v.len() != problem.grid.len() {
            return Err(Error::InvalidArgument("state length does not match the grid".into()));
        }
        if problem.grid.dimension == 1 {
            let p = problem.grid.panels;
            v[0] = 0.0;
            v[p] = 0.0;
        }
        let op_now = assemble(problem, 0.0);
        let cached = if problem.diffusion.is_time_independent() {
            Some((op_now.clone(), build_solver(problem, &op_now)?))
        } else {
            None
        };
        let conservation = op_now
            .boundary_flux(&v)
            .map(|_| Conservation { initial_mass: mass_of(&problem.grid, &v), ..Default::default() });
        let n = v.len();
        let stepper = Self {
            problem,
            step: 0,
            v,
            op_now,
            cached,
            conservation,
            max_iterations: 0,
            work: vec![0.0; n],
            previous: None,
        };
        let stiff = stepper.stiffness();
        if stiff > 10.0 {
            log::warn!("dt·N·max|A∇Φ|/h = {stiff:.3e} exceeds 10; accuracy may degrade");
        }
        Ok(stepper)
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.problem.grid.dt()
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn state(&self) -> GridFunction {
        GridFunction { grid: self.problem.grid, values: self.v.clone() }
    }

    pub fn conservation(&self) -> Option<Conservation> {
        self.conservation
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn stiffness(&self) -> f64 {
        let g = &self.problem.grid;
        let h = g.hx().min(if g.dimension == 2 { g.hy() } else { f64::INFINITY });
        let drift = match &self.op_now {
            FluxOperator::TwoD { faces, .. } => faces.max_drift(),
            FluxOperator::OneD { .. } => {
                let mut m: f64 = 0.0;
                for f in 0..g.panels {
                    let xf = g.node_x(f) + 0.5 * g.hx();
                    let c = self.problem.n
                        * self.problem.diffusion.scalar(xf, self.time())
                        * drift_potential_1d(self.problem, xf);
                    m = m.max(c.abs());
                }
                m
            }
        };
        g.dt() * drift / h
    }

    /// One Crank–Nicolson step.
    pub fn advance(&mut self) -> Result<()> {
        let problem = self.problem;
        let g = problem.grid;
        let dt = g.dt();
        let exec = problem.options.exec;
        let t1 = (self.step + 1) as f64 * dt;

        let mass_before = self.conservation.map(|_| mass_of(&g, &self.v));
        let flux_before = self.op_now.boundary_flux(&self.v);

        // rhs = (I + dt/2 L^k) v^k
        self.op_now.apply(exec, &self.v, &mut self.work);
        let mut rhs: Vec<f64> = self.v.iter().zip(&self.work).map(|(v, lv)| v + 0.5 * dt * lv).collect();
        if g.dimension == 1 {
            rhs[0] = 0.0;
            rhs[g.panels] = 0.0;
        }

        let fresh;
        let (op_next, solver) = match &self.cached {
            Some((op, solver)) => (op, solver),
            None => {
                let op = assemble(problem, t1);
                let solver = build_solver(problem, &op)?;
                fresh = (op, solver);
                (&fresh.0, &fresh.1)
            }
        };
        match solver {
            Solver::Thomas(f) => {
                f.solve(&mut rhs);
                self.v = rhs;
            }
            Solver::Iterative(m) => {
                let mut x = match &self.previous {
                    Some(prev) => self.v.iter().zip(prev).map(|(v, p)| 2.0 * v - p).collect(),
                    None => self.v.clone(),
                };
                let stats = bicgstab(exec, m, &rhs, &mut x, problem.options.tol, problem.options.max_iter)?;
                self.max_iterations = self.max_iterations.max(stats.iterations);
                self.previous = Some(std::mem::replace(&mut self.v, x));
            }
        }

        if let (Some(c), Some(m0), Some(b0)) = (self.conservation.as_mut(), mass_before, flux_before) {
            let b1 = op_next.boundary_flux(&self.v).unwrap_or(0.0);
            let flux = 0.5 * dt * (b0 + b1);
            let dm = mass_of(&g, &self.v) - m0;
            c.boundary_outflow -= flux;
            c.max_step_defect = c.max_step_defect.max((dm - flux).abs());
        }
        if self.cached.is_none() {
            self.op_now = op_next.clone();
        }
        self.step += 1;
        Ok(())
    }
}

fn mass_of(g: &GridSpec, v: &[f64]) -> f64 {
    Exec::Sequential.sum(v.len(), |k| g.weight(k) * v[k])
}

fn build_solver(problem: &PenalizedProblem, op: &FluxOperator) -> Result<Solver> {
    let half = -0.5 * problem.grid.dt();
    Ok(match op {
        FluxOperator::OneD { matrix, .. } => {
            let mut m = matrix.shifted_identity(half);
            let p = m.len() - 1;
            m.upper[0] = 0.0;
            m.diag[0] = 1.0;
            m.lower[p] = 0.0;
            m.diag[p] = 1.0;
            Solver::Thomas(m.factor()?)
        }
        FluxOperator::TwoD { matrix, .. } => Solver::Iterative(matrix.shifted_identity(half)),
    })
}

/// Runs to `T`, recording the requested snapshots.
pub fn crank_nicolson_run(problem: &PenalizedProblem) -> Result<RunResult> {
    let mut stepper = Stepper::new(problem)?;
    let mut pending: Vec<f64> = problem.options.snapshot_times.clone();
    pending.sort_by(f64::total_cmp);
    let mut snapshots = Vec::new();
    let take = |stepper: &Stepper, pending: &mut Vec<f64>, snaps: &mut Vec<(f64, GridFunction)>| {
        let eps = 1e-9 * problem.grid.dt();
        while let Some(&t) = pending.first() {
            if stepper.time() + eps >= t {
                snaps.push((stepper.time(), stepper.state()));
                pending.remove(0);
            } else {
                break;
            }
        }
    };
    let stiffness = stepper.stiffness();
    take(&stepper, &mut pending, &mut snapshots);
    for _ in 0..problem.grid.steps {
        stepper.advance()?;
        take(&stepper, &mut pending, &mut snapshots);
    }
    Ok(RunResult {
        final_state: stepper.state(),
        snapshots,
        conservation: stepper.conservation(),
        stiffness,
        max_iterations: stepper.max_iterations(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ConstantField;
    use crate::geometry::{Aabb, Shape};

    fn interval_problem(n: f64, panels: usize, steps: usize) -> PenalizedProblem {
        let domain = DomainSpec::new(Shape::Interval { a: 0.0, b: 1.0 }, Aabb::interval(-1.0, 2.0)).unwrap();
        let grid = GridSpec::new(domain.bounding_box, 1, panels, steps, 0.3).unwrap();
        PenalizedProblem::new(
            domain,
            Arc::new(ConstantField::identity()),
            n,
            scalar_fn(|x| (std::f64::consts::TAU * x.x).cos() + 1.0),
            grid,
        )
    }

    #[test]
    fn extension_matches_profile() {
        let p = interval_problem(50.0, 300, 10);
        let v0 = extend_initial(&p).unwrap();
        // node 120 sits at x = 0.2
        assert!((v0.values[120] - ((std::f64::consts::TAU * 0.2).cos() + 1.0)).abs() < 1e-12);
        // node 220 at x = 1.2
        let x = v0.grid.point(220).x;
        let expected = 2.0 * (-50.0 * (x - 1.0).powi(3)).exp();
        assert!((v0.values[220] - expected).abs() < 1e-12);
        assert_eq!(v0.values[0], 0.0);
    }

    #[test]
    fn laplacian_when_potential_is_off() {
        let p = interval_problem(0.0, 30, 10);
        let op = assemble_flux_operator(&p, 0.0).unwrap();
        let m = op.tridiag().unwrap();
        let h = 0.1;
        for i in 1..30 {
            assert!((m.lower[i] - 1.0 / (h * h)).abs() < 1e-9);
            assert!((m.diag[i] + 2.0 / (h * h)).abs() < 1e-9);
            assert!((m.upper[i] - 1.0 / (h * h)).abs() < 1e-9);
        }
        let ones = vec![1.0; 31];
        let mut out = vec![0.0; 31];
        op.apply(Exec::Sequential, &ones, &mut out);
        assert!(out[1..30].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn stationary_profile_residual_is_second_order() {
        let resid = |panels: usize| {
            let p = interval_problem(100.0, panels, 10);
            let op = assemble_flux_operator(&p, 0.0).unwrap();
            let v: Vec<f64> = (0..=panels).map(|i| (-100.0 * p.potential.value(&p.grid.point(i))).exp()).collect();
            let mut out = vec![0.0; v.len()];
            op.apply(Exec::Sequential, &v, &mut out);
            // band on the right, away from the Φ''' kink at the boundary
            (0..=panels)
                .filter(|&i| {
                    let x = p.grid.point(i).x;
                    (1.05..1.5).contains(&x)
                })
                .map(|i| out[i].abs())
                .fold(0.0, f64::max)
        };
        let ratio = resid(600) / resid(1200);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn mass_balance_is_exact_per_step() {
        let mut p = interval_problem(1000.0, 300, 200);
        p.options.snapshot_times = vec![0.1];
        let r = crank_nicolson_run(&p).unwrap();
        let c = r.conservation.unwrap();
        assert!(c.max_step_defect < 1e-13 * c.initial_mass, "{c:?}");
        assert_eq!(r.snapshots.len(), 1);
    }

    #[test]
    fn total_mass_of_constant() {
        let g = GridSpec::new(Aabb::interval(-1.0, 2.0), 1, 77, 1, 1.0).unwrap();
        let f = GridFunction::sample(g, |_| 1.0);
        assert!((total_mass(&f) - 3.0).abs() < 1e-13);
    }
}
