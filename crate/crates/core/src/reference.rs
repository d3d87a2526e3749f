//! Ground truth on Ω: the exact interval solution, a boundary-fitted
//! zero-flux solver, a radial oracle for the disk and a plain Dirichlet heat
//! solver on the box.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::linalg::Tridiag;

/// `e^{−4π²t}cos(2πx) + 1`, the zero-flux solution on `[0,1]` with
/// `u0 = cos(2πx) + 1`.
pub fn heat_exact(x: f64, t: f64) -> f64 {
    (-4.0 * PI * PI * t).exp() * (TAU * x).cos() + 1.0
}

/// Values on a uniform node set, recorded at selected times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub nodes: Vec<f64>,
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

impl Trajectory {
    pub fn final_values(&self) -> &[f64] {
        &self.snapshots.last().expect("trajectory is never empty").1
    }

    pub fn final_time(&self) -> f64 {
        self.snapshots.last().expect("trajectory is never empty").0
    }

    /// Piecewise-linear interpolation of snapshot `k` at `x`, clamped to
    /// the node range.
    pub fn interpolate(&self, k: usize, x: f64) -> f64 {
        interpolate_uniform(&self.nodes, &self.snapshots[k].1, x)
    }

    /// Snapshot closest in time to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, (s, _)) in self.snapshots.iter().enumerate() {
            if (s - t).abs() < (self.snapshots[best].0 - t).abs() {
                best = k;
            }
        }
        best
    }
}

fn interpolate_uniform(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    let h = (nodes[n - 1] - nodes[0]) / (n - 1) as f64;
    let s = ((x - nodes[0]) / h).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    let w = s - i as f64;
    (1.0 - w) * values[i] + w * values[i + 1]
}

/// Uniform time stepping and recording cadence of a reference run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub steps: usize,
    pub t_end: f64,
    /// Record every this many steps; the initial and final states are always kept.
    pub record_every: usize,
}

impl TimeGrid {
    pub fn new(steps: usize, t_end: f64) -> Self {
        Self { steps, t_end, record_every: steps.max(1) }
    }

    pub fn recording_every(mut self, k: usize) -> Self {
        self.record_every = k.max(1);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.t_end > 0.0) {
            return Err(Error::InvalidArgument("need steps > 0 and T > 0".into()));
        }
        Ok(())
    }

    fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }
}

/// CN driver for `u_t = L(t)u` with a tridiagonal `L` assembled per time.
fn cn_tridiag<F>(assemble: F, nodes: Vec<f64>, mut u: Vec<f64>, time: TimeGrid, fixed: bool) -> Result<Trajectory>
where
    F: Fn(f64) -> Tridiag,
{
    time.validate()?;
    let dt = time.dt();
    let n = u.len();
    let mut snapshots = vec![(0.0, u.clone())];
    let mut l_now = assemble(0.0);
    let cached = if fixed { Some(l_now.shifted_identity(-0.5 * dt).factor()?) } else { None };
    let mut lu = vec![0.0; n];
    for k in 0..time.steps {
        let t1 = if k + 1 == time.steps { time.t_end } else { (k + 1) as f64 * dt };
        l_now.apply(&u, &mut lu);
        for i in 0..n {
            u[i] += 0.5 * dt * lu[i];
        }
        match &cached {
            Some(f) => f.solve(&mut u),
            None => {
                let l_next = assemble(t1);
                l_next.shifted_identity(-0.5 * dt).factor()?.solve(&mut u);
                l_now = l_next;
            }
        }
        if (k + 1) % time.record_every == 0 || k + 1 == time.steps {
            snapshots.push((t1, u.clone()));
        }
    }
    Ok(Trajectory { nodes, snapshots })
}

/// Boundary-fitted CN for `u_t = (a u_x)_x` on `[a, b]` with zero flux via
/// mirrored ghost nodes.
pub fn neumann_fd_1d<A, U>(
    left: f64,
    right: f64,
    diffusion: A,
    u0: U,
    panels: usize,
    time: TimeGrid,
) -> Result<Trajectory>
where
    A: Fn(f64, f64) -> f64,
    U: Fn(f64) -> f64,
{
    if panels < 2 || !(right > left) {
        return Err(Error::InvalidArgument("need right > left and at least 2 panels".into()));
    }
    let h = (right - left) / panels as f64;
    let nodes: Vec<f64> = (0..=panels).map(|i| left + i as f64 * h).collect();
    let u: Vec<f64> = nodes.iter().map(|&x| u0(x)).collect();
    let assemble = |t: f64| {
        let mut m = Tridiag::zeros(panels + 1);
        for i in 0..=panels {
            let x = left + i as f64 * h;
            let ae = if i < panels { diffusion(x + 0.5 * h, t) } else { diffusion(x - 0.5 * h, t) };
            let aw = if i > 0 { diffusion(x - 0.5 * h, t) } else { ae };
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
        m
    };
    cn_tridiag(assemble, nodes, u, time, false)
}

/// Trapezoid integral on uniform nodes; the conserved mass of the zero-flux solver.
pub fn trapezoid(nodes: &[f64], values: &[f64]) -> f64 {
    let n = nodes.len();
    let h = (nodes[n - 1] - nodes[0]) / (n - 1) as f64;
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Radial heat flow `u_t = u_rr + u_r/r` on `[0, R]` with zero flux at
/// `R`, by finite volumes on `r_i = iΔr`; the centre cell is `[0, Δr/2]`.
pub fn radial_disk_oracle<U: Fn(f64) -> f64>(radius: f64, u0: U, panels: usize, time: TimeGrid) -> Result<Trajectory> {
    if panels < 2 || !(radius > 0.0) {
        return Err(Error::InvalidArgument("need R > 0 and at least 2 panels".into()));
    }
    let dr = radius / panels as f64;
    let nodes: Vec<f64> = (0..=panels).map(|i| i as f64 * dr).collect();
    let u: Vec<f64> = nodes.iter().map(|&r| u0(r)).collect();
    let volumes = radial_volumes(radius, panels);
    let mut m = Tridiag::zeros(panels + 1);
    for i in 0..=panels {
        let r = i as f64 * dr;
        let fe = if i < panels { (r + 0.5 * dr) / dr } else { 0.0 };
        let fw = if i > 0 { (r - 0.5 * dr) / dr } else { 0.0 };
        m.diag[i] = -(fe + fw) / volumes[i];
        m.upper[i] = fe / volumes[i];
        m.lower[i] = fw / volumes[i];
    }
    cn_tridiag(|_| m.clone(), nodes, u, time, true)
}

/// Control-volume weights `∫ r dr` of the radial scheme.
pub fn radial_volumes(radius: f64, panels: usize) -> Vec<f64> {
    let dr = radius / panels as f64;
    (0..=panels)
        .map(|i| {
            let lo = ((i as f64 - 0.5) * dr).max(0.0);
            let hi = ((i as f64 + 0.5) * dr).min(radius);
            0.5 * (hi * hi - lo * lo)
        })
        .collect()
}

/// Plain CN for `u_t = u_xx` on a box with zero Dirichlet ends, built from
/// the 3-point Laplacian.
pub fn dirichlet_heat_1d(lo: f64, hi: f64, u0: &[f64], time: TimeGrid) -> Result<Trajectory> {
    let n = u0.len();
    if n < 3 {
        return Err(Error::InvalidArgument("need at least 3 nodes".into()));
    }
    let panels = n - 1;
    let h = (hi - lo) / panels as f64;
    let nodes: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    let mut m = Tridiag::zeros(n);
    for i in 1..panels {
        m.lower[i] = 1.0 / (h * h);
        m.diag[i] = -2.0 / (h * h);
        m.upper[i] = 1.0 / (h * h);
    }
    let mut u = u0.to_vec();
    u[0] = 0.0;
    u[panels] = 0.0;
    cn_tridiag(|_| m.clone(), nodes, u, time, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_solution_values() {
        assert!((heat_exact(0.25, 0.1) - 1.0).abs() < 1e-15);
        assert_eq!(heat_exact(0.0, 0.0), 2.0);
        // cosine series of u0 by quadrature, one mode survives
        let m = 4000;
        let mut u = 1.0;
        for k in 1..6 {
            let mut ck = 0.0;
            for j in 0..m {
                let x = (j as f64 + 0.5) / m as f64;
                ck += ((TAU * x).cos() + 1.0) * (k as f64 * PI * x).cos() / m as f64;
            }
            ck *= 2.0;
            u += ck * (-(k as f64 * PI).powi(2) * 0.3).exp() * (k as f64 * PI * 0.5).cos();
        }
        assert!((heat_exact(0.5, 0.3) - u).abs() < 1e-10);
        assert!((heat_exact(0.5, 0.3) - (1.0 - (-1.2 * PI * PI).exp())).abs() < 1e-15);
    }

    #[test]
    fn neumann_matches_exact_and_conserves() {
        let traj = neumann_fd_1d(
            0.0,
            1.0,
            |_, _| 1.0,
            |x| heat_exact(x, 0.0),
            200,
            TimeGrid::new(600, 0.3).recording_every(100),
        )
        .unwrap();
        let err = traj
            .nodes
            .iter()
            .zip(traj.final_values())
            .map(|(&x, v)| (v - heat_exact(x, 0.3)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "err {err}");
        let m0 = trapezoid(&traj.nodes, &traj.snapshots[0].1);
        for (_, s) in &traj.snapshots {
            assert!((trapezoid(&traj.nodes, s) - m0).abs() < 1e-12);
        }
    }

    #[test]
    fn neumann_is_second_order() {
        let err = |p: usize| {
            let traj =
                neumann_fd_1d(0.0, 1.0, |_, _| 1.0, |x| heat_exact(x, 0.0), p, TimeGrid::new(4 * p, 0.05)).unwrap();
            traj.nodes
                .iter()
                .zip(traj.final_values())
                .map(|(&x, v)| (v - heat_exact(x, 0.05)).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(40) / err(80);
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn constants_are_steady() {
        let traj =
            neumann_fd_1d(0.0, 1.0, |x, t| 1.0 + 0.5 * (x + t).sin(), |_| 3.0, 50, TimeGrid::new(50, 1.0)).unwrap();
        assert!(traj.final_values().iter().all(|v| (v - 3.0).abs() < 1e-13));
        let rad = radial_disk_oracle(1.0, |_| 1.0, 40, TimeGrid::new(40, 0.5)).unwrap();
        assert!(rad.final_values().iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn radial_tends_to_mean_and_conserves() {
        let u0 = |r: f64| 1.0 + (PI * r).cos() / 2.0;
        let traj = radial_disk_oracle(1.0, u0, 100, TimeGrid::new(400, 2.0).recording_every(100)).unwrap();
        let vols = radial_volumes(1.0, 100);
        let mass = |v: &[f64]| v.iter().zip(&vols).map(|(a, b)| a * b).sum::<f64>();
        let m0 = mass(&traj.snapshots[0].1);
        for (_, s) in &traj.snapshots {
            assert!((mass(s) - m0).abs() < 1e-12 * m0);
        }
        // mean of u0 over the disk, 2πr-weighted, by fine midpoint quadrature
        let q = 200_000;
        let mut num = 0.0;
        for j in 0..q {
            let r = (j as f64 + 0.5) / q as f64;
            num += u0(r) * r / q as f64;
        }
        let mean = num / 0.5;
        let err = traj.final_values().iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn radial_self_convergence_is_second_order() {
        let u0 = |r: f64| 1.0 + (PI * r).cos() / 2.0;
        let at = |p: usize| {
            let t = radial_disk_oracle(1.0, u0, p, TimeGrid::new(4 * p, 0.05)).unwrap();
            [0.0, 0.25, 0.5, 0.75, 1.0].map(|r| t.interpolate(t.snapshots.len() - 1, r))
        };
        let (a, b, c) = (at(40), at(80), at(160));
        let e1 = a.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let e2 = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        // Richardson: (e40 − e160)/(e80 − e160) = (1 − 1/16)/(1/4 − 1/16) = 5
        let ratio = e1 / e2;
        assert!((4.5..5.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn interpolation_is_exact_for_lines() {
        let traj = Trajectory { nodes: vec![0.0, 0.5, 1.0], snapshots: vec![(0.0, vec![1.0, 2.0, 3.0])] };
        assert!((traj.interpolate(0, 0.25) - 1.5).abs() < 1e-15);
        assert_eq!(traj.interpolate(0, 2.0), 3.0);
    }
}
