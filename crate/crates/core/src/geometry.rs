//! Signed distance, the cubic penalization potential, the band around the
//! domain and the projection map `S(x,t) = x − d̃·A∇d` onto the boundary.
//!
//! Points are always two-dimensional; one-dimensional shapes read only the
//! first coordinate.

use nalgebra::Vector2;
use std::f64::consts::FRAC_PI_2;

use crate::coefficients::DiffusionField;
use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

pub fn pt(x: f64, y: f64) -> Point {
    Point::new(x, y)
}

/// Shipped domain shapes, all centred at the origin except the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Interval {
        a: f64,
        b: f64,
    },
    Disk {
        radius: f64,
    },
    /// Semi-axes along x and y.
    Ellipse {
        a: f64,
        b: f64,
    },
}

impl Shape {
    /// Parses `interval(a,b)`, `disk(R)` or `ellipse(a,b)`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, args) = parse_call(spec)?;
        let need = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("shape `{name}` expects {n} argument(s), got {}", args.len())))
            }
        };
        let shape = match name.as_str() {
            "interval" => {
                need(2)?;
                Shape::Interval { a: args[0], b: args[1] }
            }
            "disk" => {
                need(1)?;
                Shape::Disk { radius: args[0] }
            }
            "ellipse" => {
                need(2)?;
                Shape::Ellipse { a: args[0], b: args[1] }
            }
            _ => return Err(Error::InvalidArgument(format!("unknown shape `{spec}`"))),
        };
        shape.validate()?;
        Ok(shape)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Interval { a, b } => a.is_finite() && b.is_finite() && b > a,
            Shape::Disk { radius } => radius.is_finite() && radius > 0.0,
            Shape::Ellipse { a, b } => a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("degenerate shape {self:?}")))
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Shape::Interval { .. } => 1,
            _ => 2,
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            Shape::Interval { a, b } => b - a,
            Shape::Disk { radius } => 2.0 * radius,
            Shape::Ellipse { a, b } => 2.0 * a.max(b),
        }
    }

    /// Largest radius such that every boundary point touches interior and
    /// exterior balls of that radius.
    pub fn ball_radius(&self) -> f64 {
        match *self {
            Shape::Interval { a, b } => 0.5 * (b - a),
            Shape::Disk { radius } => radius,
            // convex: exterior balls are unbounded, interior ones limited by
            // the smallest radius of curvature
            Shape::Ellipse { a, b } => a.min(b).powi(2) / a.max(b),
        }
    }

    /// Signed distance: negative inside, positive outside.
    pub fn sdf(&self, x: &Point) -> f64 {
        match *self {
            Shape::Interval { a, b } => (a - x.x).max(x.x - b),
            Shape::Disk { radius } => x.norm() - radius,
            Shape::Ellipse { .. } => {
                let c = self.closest_point(x);
                let dist = (x - c).norm();
                if self.ellipse_level(x) < 0.0 {
                    -dist
                } else {
                    dist
                }
            }
        }
    }

    /// Unit gradient of the signed distance. On the medial axis an arbitrary
    /// but fixed choice is made.
    pub fn grad_sdf(&self, x: &Point) -> Point {
        match *self {
            Shape::Interval { a, b } => {
                if a - x.x > x.x - b {
                    pt(-1.0, 0.0)
                } else {
                    pt(1.0, 0.0)
                }
            }
            Shape::Disk { .. } => {
                let r = x.norm();
                if r == 0.0 {
                    pt(1.0, 0.0)
                } else {
                    x / r
                }
            }
            Shape::Ellipse { a, b } => {
                let c = self.closest_point(x);
                let diff = x - c;
                let dist = diff.norm();
                let normal = pt(c.x / (a * a), c.y / (b * b)).normalize();
                if dist < 1e-9 * a.max(b) {
                    normal
                } else if self.ellipse_level(x) < 0.0 {
                    -diff / dist
                } else {
                    diff / dist
                }
            }
        }
    }

    /// Outward unit normal at a boundary point.
    pub fn normal(&self, boundary_point: &Point) -> Point {
        match *self {
            Shape::Ellipse { a, b } => pt(boundary_point.x / (a * a), boundary_point.y / (b * b)).normalize(),
            _ => self.grad_sdf(boundary_point),
        }
    }

    /// Nearest boundary point.
    pub fn closest_point(&self, x: &Point) -> Point {
        match *self {
            Shape::Interval { a, b } => {
                if a - x.x > x.x - b {
                    pt(a, x.y)
                } else {
                    pt(b, x.y)
                }
            }
            Shape::Disk { radius } => radius * self.grad_sdf(x),
            Shape::Ellipse { a, b } => {
                let theta = ellipse_nearest_parameter(a, b, x.x.abs(), x.y.abs());
                pt((a * theta.cos()).copysign(x.x), (b * theta.sin()).copysign(x.y))
            }
        }
    }

    /// Boundary points, evenly spaced in the natural parameter.
    pub fn boundary_samples(&self, count: usize) -> Vec<Point> {
        match *self {
            Shape::Interval { a, b } => vec![pt(a, 0.0), pt(b, 0.0)],
            Shape::Disk { radius } => (0..count)
                .map(|k| {
                    let th = std::f64::consts::TAU * k as f64 / count as f64;
                    pt(radius * th.cos(), radius * th.sin())
                })
                .collect(),
            Shape::Ellipse { a, b } => (0..count)
                .map(|k| {
                    let th = std::f64::consts::TAU * k as f64 / count as f64;
                    pt(a * th.cos(), b * th.sin())
                })
                .collect(),
        }
    }

    fn ellipse_level(&self, x: &Point) -> f64 {
        match *self {
            Shape::Ellipse { a, b } => (x.x / a).powi(2) + (x.y / b).powi(2) - 1.0,
            _ => unreachable!(),
        }
    }
}

/// Parameter θ ∈ [0, π/2] of the point `(a cosθ, b sinθ)` nearest to
/// `(px, py)` with `px, py ≥ 0`.
fn ellipse_nearest_parameter(a: f64, b: f64, px: f64, py: f64) -> f64 {
    // g(θ) is half the derivative of the squared distance
    let g = |th: f64| {
        let (s, c) = th.sin_cos();
        (b * b - a * a) * s * c + a * px * s - b * py * c
    };
    let dg = |th: f64| {
        let (s, c) = th.sin_cos();
        (b * b - a * a) * (2.0 * th).cos() + a * px * c + b * py * s
    };
    let dist2 = |th: f64| {
        let (s, c) = th.sin_cos();
        (a * c - px).powi(2) + (b * s - py).powi(2)
    };

    // coarse scan picks the basin of the global minimum; inside points
    // near the evolute can have several critical points
    const SAMPLES: usize = 64;
    let step = FRAC_PI_2 / SAMPLES as f64;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for k in 0..=SAMPLES {
        let d = dist2(k as f64 * step);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    let mut lo = (best.saturating_sub(1)) as f64 * step;
    let mut hi = ((best + 1).min(SAMPLES)) as f64 * step;
    if g(lo) > 0.0 || g(hi) < 0.0 {
        // minimum at a bracket end
        return best as f64 * step;
    }

    let mut th = best as f64 * step;
    for _ in 0..100 {
        let gv = g(th);
        if gv == 0.0 {
            break;
        }
        if gv < 0.0 {
            lo = th;
        } else {
            hi = th;
        }
        let d = dg(th);
        let mut next = if d > 0.0 { th - gv / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - th).abs() <= 1e-16 * (1.0 + th.abs()) || hi - lo <= 1e-16 {
            th = next;
            break;
        }
        th = next;
    }
    th
}

pub(crate) fn parse_call(spec: &str) -> Result<(String, Vec<f64>)> {
    let spec = spec.trim();
    let open = spec.find('(').ok_or_else(|| Error::InvalidArgument(format!("expected name(args): `{spec}`")))?;
    if !spec.ends_with(')') {
        return Err(Error::InvalidArgument(format!("missing `)` in `{spec}`")));
    }
    let name = spec[..open].trim().to_ascii_lowercase();
    let inner = &spec[open + 1..spec.len() - 1];
    let args = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad number `{s}` in `{spec}`")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok((name, args))
}

/// Axis-aligned box. One-dimensional problems ignore the y extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub lo: Point,
    pub hi: Point,
}

impl Aabb {
    pub fn new(lo: Point, hi: Point) -> Self {
        Self { lo, hi }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(pt(lo, 0.0), pt(hi, 0.0))
    }

    pub fn contains(&self, x: &Point, dimension: usize) -> bool {
        let inx = x.x >= self.lo.x && x.x <= self.hi.x;
        if dimension == 1 {
            inx
        } else {
            inx && x.y >= self.lo.y && x.y <= self.hi.y
        }
    }
}

/// Embedded domain plus the data the band construction needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub shape: Shape,
    pub gamma: f64,
    pub bounding_box: Aabb,
}

impl DomainSpec {
    pub fn new(shape: Shape, bounding_box: Aabb) -> Result<Self> {
        let gamma = shape.ball_radius();
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        Ok(Self { shape, gamma, bounding_box })
    }

    /// Box enclosing the shape with the given margin on every side.
    pub fn with_margin(shape: Shape, margin: f64) -> Result<Self> {
        let bbox = match shape {
            Shape::Interval { a, b } => Aabb::interval(a - margin, b + margin),
            Shape::Disk { radius } => {
                let r = radius + margin;
                Aabb::new(pt(-r, -r), pt(r, r))
            }
            Shape::Ellipse { a, b } => Aabb::new(pt(-a - margin, -b - margin), pt(a + margin, b + margin)),
        };
        Self::new(shape, bbox)
    }

    pub fn dimension(&self) -> usize {
        self.shape.dimension()
    }

    pub fn sdf(&self, x: &Point) -> f64 {
        self.shape.sdf(x)
    }

    /// Distance to the domain (zero inside).
    pub fn distance(&self, x: &Point) -> f64 {
        self.shape.sdf(x).max(0.0)
    }

    pub fn diameter(&self) -> f64 {
        self.shape.diameter()
    }

    /// Checks that the box holds the `d0` band around the domain.
    pub fn check_box_margin(&self, d0: f64) -> Result<()> {
        let bb = &self.bounding_box;
        let ok = match self.shape {
            Shape::Interval { a, b } => bb.lo.x <= a - d0 && bb.hi.x >= b + d0,
            Shape::Disk { radius } => {
                let r = radius + d0;
                bb.lo.x <= -r && bb.lo.y <= -r && bb.hi.x >= r && bb.hi.y >= r
            }
            Shape::Ellipse { a, b } => {
                bb.lo.x <= -a - d0 && bb.hi.x >= a + d0 && bb.lo.y <= -b - d0 && bb.hi.y >= b + d0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("computational box {bb:?} does not contain the band of width {d0}")))
        }
    }
}

/// Half-width `d0` of the band in which the projection is well defined.
///
/// `lambda` is the ellipticity ratio (largest over smallest eigenvalue).
pub fn band_width(gamma: f64, lambda: f64) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    if !(lambda >= 1.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("Lambda must be >= 1, got {lambda}")));
    }
    let root = (lambda * lambda - 1.0).sqrt();
    let second = if root == 0.0 { f64::INFINITY } else { gamma * (lambda - root) / root };
    Ok(0.5 * gamma.min(second))
}

/// Upper bound on the travel length from distance `d` along a direction
/// deflected from the normal by at most `arccos(1/Λ)`.
pub fn dprime_bound(d: f64, gamma: f64, lambda: f64) -> Result<f64> {
    let s = d + gamma;
    let disc = s * s - d * (d + 2.0 * gamma) * lambda * lambda;
    if disc < 0.0 {
        return Err(Error::HitConditionViolated { d, gamma, lambda });
    }
    Ok(d * (d + 2.0 * gamma) * lambda / (s + disc.sqrt()))
}

/// Quintic smoothstep `6s⁵ − 15s⁴ + 10s³` on `[0, 1]`, clamped outside.
pub fn smoothstep5(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

/// Cutoff that is one within `d0/2` of the domain and zero beyond `d0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    pub d0: f64,
    pub shape: Shape,
}

impl BandSpec {
    pub fn new(shape: Shape, d0: f64) -> Self {
        Self { d0, shape }
    }

    pub fn mu(&self, x: &Point) -> f64 {
        cutoff_mu_distance(self.d0, self.shape.sdf(x).max(0.0))
    }
}

/// The cutoff as a function of distance alone.
pub fn cutoff_mu_distance(d0: f64, dist: f64) -> f64 {
    let half = 0.5 * d0;
    1.0 - smoothstep5((dist - half) / half)
}

pub fn cutoff_mu(band: &BandSpec, x: &Point) -> f64 {
    band.mu(x)
}

/// Additive perturbation `Ψ = coef·d^exponent` of the potential outside Ω.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub coef: f64,
    pub exponent: f64,
}

impl Perturbation {
    /// `none`, `quartic` (¼d⁴) or `quadratic` (d²).
    pub fn preset(name: &str) -> Result<Option<Self>> {
        match name.trim() {
            "none" | "zero" => Ok(None),
            "quartic" => Ok(Some(Self { coef: 0.25, exponent: 4.0 })),
            "quadratic" => Ok(Some(Self { coef: 1.0, exponent: 2.0 })),
            other => Err(Error::InvalidArgument(format!("unknown perturbation `{other}`"))),
        }
    }
}

/// `Φ = d³` outside the domain, zero inside, plus an optional perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    pub shape: Shape,
    pub perturbation: Option<Perturbation>,
}

impl Potential {
    pub fn cubic(shape: Shape) -> Self {
        Self { shape, perturbation: None }
    }

    /// Adds `Ψ`, rejecting it unless `|∇Ψ| ≤ d³` on samples of `bbox`.
    pub fn with_perturbation(self, p: Perturbation, bbox: &Aabb) -> Result<Self> {
        let out = Self { perturbation: Some(p), ..self };
        let dim = self.shape.dimension();
        let n = 401;
        let ny = if dim == 1 { 1 } else { n };
        for j in 0..ny {
            for i in 0..n {
                let x = bbox.lo.x + (bbox.hi.x - bbox.lo.x) * i as f64 / (n - 1) as f64;
                let y = if dim == 1 { 0.0 } else { bbox.lo.y + (bbox.hi.y - bbox.lo.y) * j as f64 / (n - 1) as f64 };
                let x = pt(x, y);
                let d = self.shape.sdf(&x).max(0.0);
                let (_, g) = out.perturbation_value_grad(&x);
                if g.norm() > d.powi(3) * (1.0 + 1e-12) + 1e-300 {
                    return Err(Error::RejectedConfig(format!(
                        "perturbation violates |∇Ψ| <= d^3 at ({}, {}): |∇Ψ| = {:e}, d^3 = {:e}",
                        x.x,
                        x.y,
                        g.norm(),
                        d.powi(3)
                    )));
                }
            }
        }
        Ok(out)
    }

    fn perturbation_value_grad(&self, x: &Point) -> (f64, Point) {
        match self.perturbation {
            None => (0.0, Point::zeros()),
            Some(Perturbation { coef, exponent }) => {
                let d = self.shape.sdf(x);
                if d <= 0.0 {
                    return (0.0, Point::zeros());
                }
                let g = self.shape.grad_sdf(x);
                (coef * d.powf(exponent), coef * exponent * d.powf(exponent - 1.0) * g)
            }
        }
    }

    /// `(Φ + Ψ, ∇(Φ + Ψ))`.
    pub fn value_grad(&self, x: &Point) -> (f64, Point) {
        let d = self.shape.sdf(x);
        let (pv, pg) = self.perturbation_value_grad(x);
        if d <= 0.0 {
            return (pv, pg);
        }
        let g = self.shape.grad_sdf(x);
        (d * d * d + pv, 3.0 * d * d * g + pg)
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.value_grad(x).0
    }

    /// Second derivative of `Φ + Ψ` along x for one-dimensional shapes.
    pub fn d2_1d(&self, x: f64) -> f64 {
        let p = pt(x, 0.0);
        let d = self.shape.sdf(&p);
        if d <= 0.0 {
            return 0.0;
        }
        let extra = match self.perturbation {
            None => 0.0,
            Some(Perturbation { coef, exponent }) => coef * exponent * (exponent - 1.0) * d.powf(exponent - 2.0),
        };
        6.0 * d + extra
    }
}

pub fn potential_phi(domain: &DomainSpec, x: &Point) -> (f64, Point) {
    Potential::cubic(domain.shape).value_grad(x)
}

/// Boundary point reached from `x` along `−A∇d`, and the travel length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: Point,
    pub travel: f64,
}

/// Smallest `λ ≥ 0` with `sdf(x − λ A(x,t)∇d(x)) = 0`.
pub fn project_s(domain: &DomainSpec, diffusion: &dyn DiffusionField, x: &Point, t: f64) -> Result<Projection> {
    let shape = &domain.shape;
    let d = shape.sdf(x);
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!("projection needs a point outside the domain, sdf = {d}")));
    }
    let ratio = diffusion.ellipticity_ratio();
    let grad = shape.grad_sdf(x);
    let mut dir = diffusion.eval(x, t) * grad;
    if domain.dimension() == 1 {
        dir.y = 0.0;
    }
    let speed = dir.norm();
    let bound = dprime_bound(d, domain.gamma, ratio)?;
    let lam_max = 2.0 * bound / speed;
    let f = |lam: f64| shape.sdf(&(x - lam * dir));
    let tol = 1e-12 * domain.diameter();

    const SCAN: usize = 64;
    let mut lo = 0.0;
    let mut hi = None;
    for k in 1..=SCAN {
        let lam = lam_max * k as f64 / SCAN as f64;
        if f(lam) <= 0.0 {
            hi = Some(lam);
            break;
        }
        lo = lam;
    }
    let Some(mut hi) = hi else {
        return Err(Error::GeometryViolation {
            x: x.x,
            y: x.y,
            reason: format!("no boundary crossing within travel bound {lam_max:e}"),
        });
    };

    let mut flo = f(lo);
    let mut fhi = f(hi);
    while hi - lo > 4.0 * f64::EPSILON * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm > 0.0 {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fhi = fm;
        }
    }
    let (mut lam, mut fl) = if flo.abs() < fhi.abs() { (lo, flo) } else { (hi, fhi) };
    // secant polish on the final bracket
    let (mut a, mut fa, mut b, mut fb) = (lo, flo, hi, fhi);
    for _ in 0..2 {
        if fb == fa {
            break;
        }
        let c = b - fb * (b - a) / (fb - fa);
        if !c.is_finite() {
            break;
        }
        let fc = f(c);
        if fc.abs() < fl.abs() {
            lam = c;
            fl = fc;
        }
        a = b;
        fa = fb;
        b = c;
        fb = fc;
    }
    if fl.abs() > tol {
        return Err(Error::GeometryViolation {
            x: x.x,
            y: x.y,
            reason: format!("root solve stalled at |sdf| = {:e}", fl.abs()),
        });
    }
    Ok(Projection { point: x - lam * dir, travel: lam })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ConstantField;
    use nalgebra::Matrix2;

    #[test]
    fn band_width_examples() {
        assert_eq!(band_width(1.0, 1.0).unwrap(), 0.5);
        let expect = 0.5 * (2.0 - 3f64.sqrt()) / 3f64.sqrt();
        assert!((band_width(1.0, 2.0).unwrap() - expect).abs() < 1e-15);
        assert!((band_width(1.0, 2.0).unwrap() - 0.0773503).abs() < 1e-7);
        // exact rational value: √(Λ²−1) = 3/4, so d0 = ½·min(½, ½·½/¾) = 1/6
        assert!((band_width(0.5, 1.25).unwrap() - 1.0 / 6.0).abs() < 1e-14);
        assert!(matches!(band_width(0.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(band_width(-1.0, 2.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dprime_examples() {
        assert_eq!(dprime_bound(0.0, 1.0, 2.0).unwrap(), 0.0);
        // Λ = 1 collapses to d exactly
        assert!((dprime_bound(0.05, 1.0, 1.0).unwrap() - 0.05).abs() < 1e-15);
        // inside the hit region at d = 0.07, outside it past the root 0.1547…
        assert!(dprime_bound(0.07, 1.0, 2.0).is_ok());
        let root = (-6.0 + 48f64.sqrt()) / 6.0;
        assert!(dprime_bound(root * 0.999, 1.0, 2.0).is_ok());
        assert!(matches!(dprime_bound(root * 1.001, 1.0, 2.0), Err(Error::HitConditionViolated { .. })));
    }

    #[test]
    fn dprime_dominates_distance() {
        for i in 1..50 {
            let d = 0.15 * i as f64 / 50.0;
            for &lam in &[1.0, 1.2, 1.5, 2.0] {
                if let Ok(v) = dprime_bound(d, 1.0, lam) {
                    assert!(v >= d * (1.0 - 1e-14), "d'={v} < d={d} at Λ={lam}");
                }
            }
        }
    }

    #[test]
    fn potential_examples() {
        let iv = Shape::Interval { a: 0.0, b: 1.0 };
        let dom = DomainSpec::with_margin(iv, 1.0).unwrap();
        let (v, g) = potential_phi(&dom, &pt(1.2, 0.0));
        assert!((v - 0.008).abs() < 1e-15);
        assert!((g.x - 0.12).abs() < 1e-15);
        assert_eq!(potential_phi(&dom, &pt(0.5, 0.0)), (0.0, Point::zeros()));
        let disk = DomainSpec::with_margin(Shape::Disk { radius: 1.0 }, 0.6).unwrap();
        let (v, g) = potential_phi(&disk, &pt(1.5, 0.0));
        assert!((v - 0.125).abs() < 1e-15);
        assert!((g - pt(0.75, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn potential_is_c1_across_boundary() {
        let pot = Potential::cubic(Shape::Disk { radius: 1.0 });
        for k in 0..32 {
            let th = k as f64 * 0.2;
            let n = pt(th.cos(), th.sin());
            let outside = pot.value_grad(&(n * (1.0 + 1e-6))).1;
            let inside = pot.value_grad(&(n * (1.0 - 1e-6))).1;
            assert!((outside - inside).norm() < 1e-10);
        }
    }

    #[test]
    fn cutoff_examples() {
        let band = BandSpec::new(Shape::Interval { a: 0.0, b: 1.0 }, 0.2);
        assert_eq!(band.mu(&pt(0.5, 0.0)), 1.0);
        assert_eq!(band.mu(&pt(1.0, 0.0)), 1.0);
        assert_eq!(band.mu(&pt(1.4, 0.0)), 0.0);
        assert!((band.mu(&pt(1.15, 0.0)) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn cutoff_second_derivative_is_bounded() {
        let d0 = 0.3;
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let mut x = 0.0;
        while x < 1.5 * d0 {
            let m = |s: f64| cutoff_mu_distance(d0, s);
            let d2 = (m(x + h) - 2.0 * m(x) + m(x - h)) / (h * h);
            worst = worst.max(d2.abs());
            x += 1e-3;
        }
        // analytic max of |μ''| is (10/√3)/(d0/2)² ≈ 256.6
        assert!(worst < 260.0, "max |μ''| = {worst}");
    }

    #[test]
    fn ellipse_reduces_to_disk() {
        let e = Shape::Ellipse { a: 1.0, b: 1.0 };
        let d = Shape::Disk { radius: 1.0 };
        for k in 0..50 {
            let x = pt(0.1 + 0.05 * k as f64, -0.3 + 0.02 * k as f64);
            assert!((e.sdf(&x) - d.sdf(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipse_closest_point_is_stationary() {
        let e = Shape::Ellipse { a: 1.5, b: 0.8 };
        for k in 0..40 {
            let th = 0.3 + 0.15 * k as f64;
            for &r in &[0.3, 0.9, 1.3, 2.0] {
                let x = pt(1.5 * r * th.cos(), 0.8 * r * th.sin());
                let c = e.closest_point(&x);
                assert!(((c.x / 1.5).powi(2) + (c.y / 0.8).powi(2) - 1.0).abs() < 1e-12);
                // brute-force distance over a fine parameter sweep
                let dist = |p: f64| (x - pt(1.5 * p.cos(), 0.8 * p.sin())).norm();
                let step = std::f64::consts::TAU / 200_000.0;
                let j = (0..200_000).min_by(|&i, &k| dist(i as f64 * step).total_cmp(&dist(k as f64 * step))).unwrap();
                // ternary refinement inside the winning cell
                let (mut lo, mut hi) = ((j as f64 - 1.0) * step, (j as f64 + 1.0) * step);
                for _ in 0..100 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if dist(m1) < dist(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                let best = dist(0.5 * (lo + hi));
                assert!((e.sdf(&x).abs() - best).abs() < 1e-9, "x={x:?} {} {best}", e.sdf(&x));
            }
        }
    }

    #[test]
    fn sdf_is_one_lipschitz() {
        let shapes =
            [Shape::Interval { a: 0.0, b: 1.0 }, Shape::Disk { radius: 1.0 }, Shape::Ellipse { a: 1.4, b: 0.7 }];
        for s in shapes {
            for i in 0..300 {
                let a = pt((i as f64 * 0.37).sin() * 2.0, (i as f64 * 0.91).cos() * 2.0);
                let b = pt((i as f64 * 1.37).cos() * 2.0, (i as f64 * 0.53).sin() * 2.0);
                assert!((s.sdf(&a) - s.sdf(&b)).abs() <= (a - b).norm() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn project_identity_examples() {
        let id = ConstantField::identity();
        let disk = DomainSpec::with_margin(Shape::Disk { radius: 1.0 }, 0.6).unwrap();
        let p = project_s(&disk, &id, &pt(1.5, 0.0), 0.0).unwrap();
        assert!((p.point - pt(1.0, 0.0)).norm() < 1e-12);
        assert!((p.travel - 0.5).abs() < 1e-12);
        let iv = DomainSpec::with_margin(Shape::Interval { a: 0.0, b: 1.0 }, 1.0).unwrap();
        let p = project_s(&iv, &id, &pt(1.3, 0.0), 0.0).unwrap();
        assert!((p.point.x - 1.0).abs() < 1e-12);
        assert!((p.travel - 0.3).abs() < 1e-12);
        assert!(project_s(&iv, &id, &pt(0.5, 0.0), 0.0).is_err());
    }

    #[test]
    fn project_anisotropic_matches_ray_march() {
        let a = Matrix2::new(1.0, 0.3, 0.3, 2.0);
        let field = ConstantField::new(a).unwrap();
        let disk = DomainSpec::with_margin(Shape::Disk { radius: 1.0 }, 0.6).unwrap();
        let x = pt(1.07, 0.04);
        let p = project_s(&disk, &field, &x, 0.0).unwrap();
        // dense ray march along −A∇d with step 1e-7, independent of the bracket
        let dir = a * (x / x.norm());
        let mut lam = 0.0;
        while (x - (lam + 1e-7) * dir).norm() > 1.0 {
            lam += 1e-7;
        }
        let marched = x - (lam + 0.5e-7) * dir;
        assert!((p.point - marched).norm() < 1e-6);
        assert!((p.point.norm() - 1.0).abs() < 1e-12);
    }
}
