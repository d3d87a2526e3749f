//! Symmetric diffusion matrices `A(x,t)` and the construction that realizes
//! an oblique boundary field `v` as a co-normal direction `Aν ∥ v`.

use exmex::prelude::*;
use nalgebra::Matrix2;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{band_width, cutoff_mu_distance, parse_call, pt, DomainSpec, Point, Shape};
use crate::penalized::ScalarFn;

pub type Mat2 = Matrix2<f64>;

/// Symmetric, uniformly elliptic coefficient matrix.
///
/// One-dimensional problems use the `(0,0)` entry.
pub trait DiffusionField: Send + Sync {
    fn eval(&self, x: &Point, t: f64) -> Mat2;

    /// Lower ellipticity bound.
    fn lambda0(&self) -> f64;

    /// Upper ellipticity bound.
    fn lambda_max(&self) -> f64;

    fn ellipticity_ratio(&self) -> f64 {
        self.lambda_max() / self.lambda0()
    }

    /// True when `eval` does not depend on `t`; lets solvers cache operators.
    fn is_time_independent(&self) -> bool {
        false
    }

    /// `∂A/∂t`, when known. Diagnostics only.
    fn time_derivative(&self, _x: &Point, _t: f64) -> Option<Mat2> {
        None
    }

    fn scalar(&self, x: f64, t: f64) -> f64 {
        self.eval(&pt(x, 0.0), t)[(0, 0)]
    }
}

/// Eigenvalues `(min, max)` of a symmetric 2×2 matrix.
pub fn sym_eigenvalues(m: &Mat2) -> (f64, f64) {
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let r = half_diff.hypot(m[(0, 1)]);
    (mean - r, mean + r)
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantField {
    m: Mat2,
    lo: f64,
    hi: f64,
}

impl ConstantField {
    pub fn new(m: Mat2) -> Result<Self> {
        if m[(0, 1)] != m[(1, 0)] {
            return Err(Error::InvalidArgument("diffusion matrix must be symmetric".into()));
        }
        let (lo, hi) = sym_eigenvalues(&m);
        if !(lo > 0.0) {
            return Err(Error::EllipticityFailure { reason: format!("smallest eigenvalue {lo} is not positive") });
        }
        Ok(Self { m, lo, hi })
    }

    pub fn identity() -> Self {
        Self { m: Mat2::identity(), lo: 1.0, hi: 1.0 }
    }

    pub fn diag(a: f64, b: f64) -> Result<Self> {
        Self::new(Mat2::new(a, 0.0, 0.0, b))
    }

    pub fn scalar_value(a: f64) -> Result<Self> {
        Self::diag(a, a)
    }

    pub fn matrix(&self) -> Mat2 {
        self.m
    }
}

impl DiffusionField for ConstantField {
    fn eval(&self, _x: &Point, _t: f64) -> Mat2 {
        self.m
    }
    fn lambda0(&self) -> f64 {
        self.lo
    }
    fn lambda_max(&self) -> f64 {
        self.hi
    }
    fn is_time_independent(&self) -> bool {
        true
    }
    fn time_derivative(&self, _x: &Point, _t: f64) -> Option<Mat2> {
        Some(Mat2::zeros())
    }
}

type MatFn = dyn Fn(&Point, f64) -> Mat2 + Send + Sync;

/// Field given by a closure with declared bounds.
#[derive(Clone)]
pub struct FnField {
    f: Arc<MatFn>,
    lo: f64,
    hi: f64,
    time_independent: bool,
}

impl FnField {
    pub fn new<F>(f: F, lo: f64, hi: f64, time_independent: bool) -> Self
    where
        F: Fn(&Point, f64) -> Mat2 + Send + Sync + 'static,
    {
        Self { f: Arc::new(f), lo, hi, time_independent }
    }

    /// Scalar `a(x,t)` for one-dimensional problems.
    pub fn scalar_1d<F>(a: F, lo: f64, hi: f64) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            move |x, t| {
                let v = a(x.x, t);
                Mat2::new(v, 0.0, 0.0, v)
            },
            lo,
            hi,
            false,
        )
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnField").field("lo", &self.lo).field("hi", &self.hi).finish()
    }
}

impl DiffusionField for FnField {
    fn eval(&self, x: &Point, t: f64) -> Mat2 {
        (self.f)(x, t)
    }
    fn lambda0(&self) -> f64 {
        self.lo
    }
    fn lambda_max(&self) -> f64 {
        self.hi
    }
    fn is_time_independent(&self) -> bool {
        self.time_independent
    }
}

type VecFn = dyn Fn(&Point, f64) -> Point + Send + Sync;

/// Boundary vector field `v(x,t)` with `v·ν ≥ c0`.
#[derive(Clone)]
pub struct ObliqueField {
    v: Arc<VecFn>,
    pub c0: f64,
}

impl fmt::Debug for ObliqueField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObliqueField").field("c0", &self.c0).finish()
    }
}

impl ObliqueField {
    pub fn new<F>(v: F, c0: f64) -> Self
    where
        F: Fn(&Point, f64) -> Point + Send + Sync + 'static,
    {
        Self { v: Arc::new(v), c0 }
    }

    /// `v = ν + α₁(x,t)·τ` with `τ` the counter-clockwise unit tangent.
    pub fn from_tangential<F>(shape: Shape, alpha1: F) -> Self
    where
        F: Fn(&Point, f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            move |x, t| {
                let nu = shape.normal(x);
                nu + alpha1(x, t) * pt(-nu.y, nu.x)
            },
            1.0,
        )
    }

    pub fn eval(&self, x: &Point, t: f64) -> Point {
        (self.v)(x, t)
    }

    /// Smallest `v·ν` over the samples; errors when it drops below `c0`.
    pub fn check_obliqueness(&self, shape: &Shape, points: &[Point], times: &[f64]) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for p in points {
            let nu = shape.normal(p);
            for &t in times {
                worst = worst.min(self.eval(p, t).dot(&nu));
            }
        }
        if worst < self.c0 * (1.0 - 1e-12) {
            return Err(Error::InvalidArgument(format!("field is not oblique: min v·ν = {worst} < c0 = {}", self.c0)));
        }
        Ok(worst)
    }
}

/// `A = Q B Qᵀ` on the boundary with `Q = [ν τ]`, `B = [[1, α₁], [α₁, c]]`,
/// carried into the band by closest-point projection and blended to
/// `far·Id` with the band cutoff.
#[derive(Debug, Clone)]
pub struct ObliqueDiffusion {
    shape: Shape,
    field: ObliqueField,
    c: f64,
    far: f64,
    blend_d0: f64,
    lo: f64,
    hi: f64,
    max_alpha1: f64,
}

impl ObliqueDiffusion {
    /// Normalized tangential coefficient `α₁ = (v·τ)/(v·ν)` at a boundary point.
    pub fn alpha1(&self, p: &Point, t: f64) -> f64 {
        alpha1_at(&self.shape, &self.field, p, t)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn max_alpha1(&self) -> f64 {
        self.max_alpha1
    }

    pub fn blend_width(&self) -> f64 {
        self.blend_d0
    }

    /// The matrix before blending, at a boundary point.
    pub fn boundary_matrix(&self, p: &Point, t: f64) -> Mat2 {
        let nu = self.shape.normal(p);
        let tau = pt(-nu.y, nu.x);
        let q = Mat2::from_columns(&[nu, tau]);
        let a1 = self.alpha1(p, t);
        let b = Mat2::new(1.0, a1, a1, self.c);
        let m = q * b * q.transpose();
        // exact symmetry
        let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
        Mat2::new(m[(0, 0)], off, off, m[(1, 1)])
    }
}

fn alpha1_at(shape: &Shape, field: &ObliqueField, p: &Point, t: f64) -> f64 {
    let nu = shape.normal(p);
    let tau = pt(-nu.y, nu.x);
    let v = field.eval(p, t);
    v.dot(&tau) / v.dot(&nu)
}

impl DiffusionField for ObliqueDiffusion {
    fn eval(&self, x: &Point, t: f64) -> Mat2 {
        let dist = self.shape.sdf(x).abs();
        let mu = cutoff_mu_distance(self.blend_d0, dist);
        let far = Mat2::identity() * self.far;
        if mu == 0.0 {
            return far;
        }
        let p = self.shape.closest_point(x);
        let m = self.boundary_matrix(&p, t);
        m * mu + far * (1.0 - mu)
    }
    fn lambda0(&self) -> f64 {
        self.lo
    }
    fn lambda_max(&self) -> f64 {
        self.hi
    }
}

/// Smaller and larger roots of `λ² − (1+c)λ + c − α₁²`.
fn block_eigenvalues(c: f64, a1: f64) -> (f64, f64) {
    let mean = 0.5 * (1.0 + c);
    let r = (0.5 * (c - 1.0)).hypot(a1);
    (mean - r, mean + r)
}

/// Builds the co-normal realization of `v` on a two-dimensional domain.
///
/// `c = None` uses `2 + 4·max|α₁|²`. `sample_times` drives the sampled
/// bounds on `α₁` and on the eigenvalues.
pub fn build_a_from_field(
    domain: &DomainSpec,
    v: &ObliqueField,
    c: Option<f64>,
    sample_times: &[f64],
) -> Result<ObliqueDiffusion> {
    if domain.dimension() != 2 {
        return Err(Error::InvalidArgument("oblique construction needs a 2D domain".into()));
    }
    if sample_times.is_empty() {
        return Err(Error::InvalidArgument("no sample times".into()));
    }
    let shape = domain.shape;
    let points = shape.boundary_samples(256);
    v.check_obliqueness(&shape, &points, sample_times)?;

    let mut worst_alpha: f64 = 0.0;
    for p in &points {
        for &t in sample_times {
            let a = alpha1_at(&shape, v, p, t);
            if a.abs() > worst_alpha.abs() {
                worst_alpha = a;
            }
        }
    }
    let c = c.unwrap_or(2.0 + 4.0 * worst_alpha * worst_alpha);
    // both roots positive iff the product c − α₁² is positive
    if !(c - worst_alpha * worst_alpha > 0.0) || !(c > -1.0) {
        return Err(Error::EllipticityFailure { reason: format!("c = {c} too small for α₁ = {worst_alpha}") });
    }
    let far = 1.0;
    let (lo, hi) = block_eigenvalues(c, worst_alpha.abs());
    let (lo, hi) = (lo.min(far), hi.max(far));
    let blend_d0 = band_width(domain.gamma, hi / lo)?;
    Ok(ObliqueDiffusion { shape, field: v.clone(), c, far, blend_d0, lo, hi, max_alpha1: worst_alpha.abs() })
}

/// Sampled `(min, max)` eigenvalues of `A` over the given points and times.
pub fn ellipticity_check(field: &dyn DiffusionField, points: &[Point], times: &[f64]) -> Result<(f64, f64)> {
    if points.is_empty() || times.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in points {
        for &t in times {
            let m = field.eval(p, t);
            if m[(0, 1)] != m[(1, 0)] {
                return Err(Error::InvalidArgument(format!("non-symmetric matrix at ({}, {}), t = {t}", p.x, p.y)));
            }
            let (a, b) = sym_eigenvalues(&m);
            lo = lo.min(a);
            hi = hi.max(b);
        }
    }
    if !(lo > 0.0) {
        return Err(Error::EllipticityFailure { reason: format!("smallest sampled eigenvalue {lo} is not positive") });
    }
    Ok((lo, hi))
}

/// Expression in `x`, `y`, `t` (and the constant `pi`).
#[derive(Debug, Clone)]
pub struct XytExpr {
    flat: FlatEx<f64>,
    /// Per exmex variable: 0 = x, 1 = y, 2 = t, 3 = pi.
    slots: Vec<usize>,
}

impl XytExpr {
    pub fn parse(src: &str) -> Result<Self> {
        let bad = |e: String| Error::InvalidArgument(format!("bad expression `{src}`: {e}"));
        let flat = exmex::parse::<f64>(src.trim()).map_err(|e| bad(e.to_string()))?;
        let slots = flat
            .var_names()
            .iter()
            .map(|v| match v.as_str() {
                "x" => Ok(0),
                "y" => Ok(1),
                "t" => Ok(2),
                "pi" => Ok(3),
                other => Err(bad(format!("unknown variable `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { flat, slots })
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        let env = [x, y, t, std::f64::consts::PI];
        let vals: Vec<f64> = self.slots.iter().map(|&k| env[k]).collect();
        self.flat.eval(&vals).unwrap_or(f64::NAN)
    }
}

/// Parses an expression in `x`, `y` (and `t = 0`) into a point function.
pub fn parse_point_expr(src: &str) -> Result<ScalarFn> {
    let expr = XytExpr::parse(src)?;
    Ok(Arc::new(move |p: &Point| expr.eval(p.x, p.y, 0.0)))
}

/// Named coefficient presets: `identity`, `diag(a,b)`, `oblique(<α₁ expr>, c)`.
#[derive(Debug, Clone)]
pub enum DiffusionPreset {
    Identity,
    Diag(f64, f64),
    Oblique { alpha1: Box<XytExpr>, c: f64 },
}

impl DiffusionPreset {
    pub fn parse(spec: &str) -> Result<Self> {
        let s = spec.trim();
        if s == "identity" {
            return Ok(Self::Identity);
        }
        if s.starts_with("diag") {
            let (_, args) = parse_call(s)?;
            if args.len() != 2 {
                return Err(Error::InvalidArgument(format!("diag expects 2 entries: `{s}`")));
            }
            return Ok(Self::Diag(args[0], args[1]));
        }
        if let Some(inner) = s.strip_prefix("oblique(").and_then(|r| r.strip_suffix(')')) {
            let comma =
                inner.rfind(',').ok_or_else(|| Error::InvalidArgument(format!("oblique(expr, c) expected: `{s}`")))?;
            let alpha1 = XytExpr::parse(&inner[..comma])?;
            let c = inner[comma + 1..]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad constant c in `{s}`")))?;
            return Ok(Self::Oblique { alpha1: Box::new(alpha1), c });
        }
        Err(Error::InvalidArgument(format!("unknown diffusion preset `{s}`")))
    }

    pub fn build(&self, domain: &DomainSpec) -> Result<Arc<dyn DiffusionField>> {
        Ok(match self {
            Self::Identity => Arc::new(ConstantField::identity()),
            Self::Diag(a, b) => Arc::new(ConstantField::diag(*a, *b)?),
            Self::Oblique { alpha1, c } => {
                let expr = alpha1.clone();
                let field = ObliqueField::from_tangential(domain.shape, move |p, t| expr.eval(p.x, p.y, t));
                let times: Vec<f64> = (0..64).map(|k| std::f64::consts::TAU * k as f64 / 64.0).collect();
                Arc::new(build_a_from_field(domain, &field, Some(*c), &times)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk() -> DomainSpec {
        DomainSpec::with_margin(Shape::Disk { radius: 1.0 }, 0.6).unwrap()
    }

    #[test]
    fn normal_field_gives_eigenvalues_one_and_c() {
        let dom = disk();
        let v = ObliqueField::from_tangential(dom.shape, |_, _| 0.0);
        let a = build_a_from_field(&dom, &v, Some(3.0), &[0.0]).unwrap();
        for p in dom.shape.boundary_samples(16) {
            let m = a.eval(&p, 0.0);
            let (lo, hi) = sym_eigenvalues(&m);
            assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
            let nu = dom.shape.normal(&p);
            assert!((m * nu - nu).norm() < 1e-12);
        }
    }

    #[test]
    fn block_eigen_example() {
        // ν = (0,1), τ = (1,0) up to orientation; eigenvalues are basis-free
        let (lo, hi) = block_eigenvalues(4.0, 1.0);
        assert!((lo - (5.0 - 13f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!((hi - (5.0 + 13f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!((lo - 0.6972).abs() < 1e-4 && (hi - 4.3028).abs() < 1e-4);
        // numeric check of the 2×2 block itself
        let m = Mat2::new(1.0, 1.0, 1.0, 4.0);
        let (a, b) = sym_eigenvalues(&m);
        assert!((a - lo).abs() < 1e-14 && (b - hi).abs() < 1e-14);
        // Q = [ν τ] with ν=(0,1), τ=(1,0): Aν = Q B e1 = Q(1, α₁) = (α₁, 1)
        let q = Mat2::new(0.0, 1.0, 1.0, 0.0);
        let a_mat = q * m * q.transpose();
        let anu = a_mat * pt(0.0, 1.0);
        assert!((anu - pt(1.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn time_dependent_oblique_field_is_elliptic() {
        let dom = disk();
        let v = ObliqueField::from_tangential(dom.shape, |_, t| 0.5 * t.sin());
        let times: Vec<f64> = (0..16).map(|k| std::f64::consts::TAU * k as f64 / 16.0).collect();
        let a = build_a_from_field(&dom, &v, Some(4.0), &times).unwrap();
        let pts = dom.shape.boundary_samples(64);
        let (lo, hi) = ellipticity_check(&a, &pts, &times).unwrap();
        assert!(lo >= 0.5, "λ0 = {lo}");
        assert!(lo >= a.lambda0() - 1e-12 && hi <= a.lambda_max() + 1e-12);
        // 4× denser sampling moves the bounds by less than 1%
        let times4: Vec<f64> = (0..64).map(|k| std::f64::consts::TAU * k as f64 / 64.0).collect();
        let pts4 = dom.shape.boundary_samples(256);
        let (lo4, hi4) = ellipticity_check(&a, &pts4, &times4).unwrap();
        assert!((lo4 - lo).abs() / lo < 0.01 && (hi4 - hi).abs() / hi < 0.01);
    }

    #[test]
    fn conormal_direction_matches_field() {
        let dom = DomainSpec::with_margin(Shape::Ellipse { a: 1.3, b: 0.8 }, 0.6).unwrap();
        let v = ObliqueField::from_tangential(dom.shape, |p, t| 0.4 * (p.x + t).cos());
        let a = build_a_from_field(&dom, &v, None, &[0.0, 0.5, 1.0]).unwrap();
        for p in dom.shape.boundary_samples(40) {
            for &t in &[0.0, 0.5, 1.0] {
                let anu = a.eval(&p, t) * dom.shape.normal(&p);
                let vv = v.eval(&p, t);
                let cross = anu.x * vv.y - anu.y * vv.x;
                let angle = (cross / (anu.norm() * vv.norm())).asin().abs();
                assert!(angle < 1e-10, "angle {angle}");
            }
        }
    }

    #[test]
    fn cosine_between_grad_d_and_a_grad_d() {
        let dom = disk();
        let v = ObliqueField::from_tangential(dom.shape, |_, _| 0.7);
        let a = build_a_from_field(&dom, &v, None, &[0.0]).unwrap();
        let band = a.blend_width();
        let pts = dom.shape.boundary_samples(64);
        let (lo, hi) = ellipticity_check(&a, &pts, &[0.0]).unwrap();
        for k in 0..64 {
            let th = 0.1 * k as f64;
            let x = pt(th.cos(), th.sin()) * (1.0 + band * (k % 8) as f64 / 8.0);
            let g = dom.shape.grad_sdf(&x);
            let ag = a.eval(&x, 0.0) * g;
            let cos = g.dot(&ag) / ag.norm();
            assert!(cos >= lo / hi - 1e-12, "cos θ = {cos}");
        }
    }

    #[test]
    fn too_small_c_is_rejected() {
        let dom = disk();
        let v = ObliqueField::from_tangential(dom.shape, |_, _| 2.0);
        let r = build_a_from_field(&dom, &v, Some(3.5), &[0.0]);
        assert!(matches!(r, Err(Error::EllipticityFailure { .. })));
    }

    #[test]
    fn ellipticity_check_constants_and_asymmetry() {
        let pts = [pt(0.0, 0.0), pt(1.0, 2.0)];
        assert_eq!(ellipticity_check(&ConstantField::identity(), &pts, &[0.0]).unwrap(), (1.0, 1.0));
        let d = ConstantField::diag(1.0, 2.0).unwrap();
        assert_eq!(ellipticity_check(&d, &pts, &[0.0]).unwrap(), (1.0, 2.0));
        let skew = FnField::new(|_, _| Mat2::new(1.0, 0.1, 0.0, 1.0), 0.5, 2.0, true);
        assert!(matches!(ellipticity_check(&skew, &pts, &[0.0]), Err(Error::InvalidArgument(_))));
        assert!(ConstantField::new(Mat2::new(1.0, 0.1, 0.0, 1.0)).is_err());
    }

    #[test]
    fn presets_parse() {
        assert!(matches!(DiffusionPreset::parse("identity").unwrap(), DiffusionPreset::Identity));
        assert!(matches!(
            DiffusionPreset::parse("diag(1, 2.5)").unwrap(),
            DiffusionPreset::Diag(a, b) if a == 1.0 && b == 2.5
        ));
        let p = DiffusionPreset::parse("oblique(0.5*sin(t), 4)").unwrap();
        let a = p.build(&disk()).unwrap();
        assert!(a.lambda0() > 0.0);
        assert!(DiffusionPreset::parse("oblique(foo(t), 4)").is_err());
        assert!(DiffusionPreset::parse("bogus").is_err());
    }

    #[test]
    fn expressions_bind_coordinates_and_pi() {
        let e = XytExpr::parse("cos(2*pi*x) + y*t").unwrap();
        assert!((e.eval(0.5, 2.0, 3.0) - 5.0).abs() < 1e-14);
        let f = parse_point_expr("atan2(y, x)").unwrap();
        assert!((f(&pt(1.0, 1.0)) - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!(XytExpr::parse("z + 1").is_err());
        assert!(XytExpr::parse("cos(").is_err());
    }
}
