//! Tridiagonal elimination, a 9-point stencil matrix and BiCGSTAB.

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Tridiagonal matrix; `lower[0]` and `upper[n-1]` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Self { lower: vec![0.0; n], diag: vec![0.0; n], upper: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            y[i] = s;
        }
    }

    /// `I + s·self`.
    pub fn shifted_identity(&self, s: f64) -> Self {
        Self {
            lower: self.lower.iter().map(|v| s * v).collect(),
            diag: self.diag.iter().map(|v| 1.0 + s * v).collect(),
            upper: self.upper.iter().map(|v| s * v).collect(),
        }
    }

    pub fn factor(&self) -> Result<TridiagFactor> {
        let n = self.len();
        let mut inv_denom = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            let l = if i > 0 { self.lower[i] } else { 0.0 };
            let denom = self.diag[i] - l * prev_c;
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::SolverFailure { iterations: i, residual: f64::NAN });
            }
            inv_denom[i] = 1.0 / denom;
            c[i] = if i + 1 < n { self.upper[i] * inv_denom[i] } else { 0.0 };
            prev_c = c[i];
        }
        Ok(TridiagFactor { lower: self.lower.clone(), c, inv_denom })
    }
}

/// Thomas factorization without pivoting, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct TridiagFactor {
    lower: Vec<f64>,
    c: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl TridiagFactor {
    /// Solves in place.
    pub fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        if n == 0 {
            return;
        }
        rhs[0] *= self.inv_denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_denom[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c[i] * rhs[i + 1];
        }
    }
}

/// Square matrix with at most nine entries per row.
#[derive(Debug, Clone)]
pub struct Stencil9 {
    pub cols: Vec<[u32; 9]>,
    pub vals: Vec<[f64; 9]>,
}

impl Stencil9 {
    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn apply(&self, exec: Exec, x: &[f64], y: &mut [f64]) {
        exec.fill(y, |k| {
            let c = &self.cols[k];
            let v = &self.vals[k];
            let mut s = 0.0;
            for m in 0..9 {
                s += v[m] * x[c[m] as usize];
            }
            s
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let mut d = 0.0;
                for m in 0..9 {
                    if self.cols[k][m] as usize == k {
                        d += self.vals[k][m];
                    }
                }
                d
            })
            .collect()
    }

    /// `I + s·self`.
    pub fn shifted_identity(&self, s: f64) -> Self {
        let mut out = self.clone();
        for (k, row) in out.vals.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v *= s;
            }
            // slot 4 is always the centre
            debug_assert_eq!(out.cols[k][4] as usize, k);
            row[4] += 1.0;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(exec: Exec, a: &[f64], b: &[f64]) -> f64 {
    exec.sum(a.len(), |i| a[i] * b[i])
}

/// Jacobi-preconditioned BiCGSTAB; `x` holds the initial guess on entry.
///
/// Converged when `‖b − Mx‖ ≤ tol·‖b‖`.
pub fn bicgstab(exec: Exec, m: &Stencil9, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<IterStats> {
    let n = b.len();
    let inv_diag: Vec<f64> = m.diagonal().iter().map(|d| 1.0 / d).collect();
    let bnorm = dot(exec, b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(IterStats { iterations: 0, residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    m.apply(exec, x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut ph = vec![0.0; n];
    let mut sh = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut res = dot(exec, &r, &r).sqrt() / bnorm;
    if res <= tol {
        return Ok(IterStats { iterations: 0, residual: res });
    }
    for it in 1..=max_iter {
        let rho_new = dot(exec, &r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::SolverFailure { iterations: it, residual: res });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        exec.fill(&mut ph, |i| p[i] * inv_diag[i]);
        m.apply(exec, &ph, &mut v);
        alpha = rho / dot(exec, &r_hat, &v);
        exec.fill(&mut s, |i| r[i] - alpha * v[i]);
        let snorm = dot(exec, &s, &s).sqrt() / bnorm;
        if snorm <= tol {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok(IterStats { iterations: it, residual: snorm });
        }
        exec.fill(&mut sh, |i| s[i] * inv_diag[i]);
        m.apply(exec, &sh, &mut t);
        let tt = dot(exec, &t, &t);
        omega = if tt > 0.0 { dot(exec, &t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        res = dot(exec, &r, &r).sqrt() / bnorm;
        if !res.is_finite() {
            return Err(Error::SolverFailure { iterations: it, residual: res });
        }
        if res <= tol {
            // guard against drift of the recursive residual
            m.apply(exec, x, &mut t);
            let true_res = exec.sum(n, |i| (b[i] - t[i]).powi(2)).sqrt() / bnorm;
            if true_res <= tol {
                return Ok(IterStats { iterations: it, residual: true_res });
            }
            for i in 0..n {
                r[i] = b[i] - t[i];
            }
            res = true_res;
        }
    }
    Err(Error::SolverFailure { iterations: max_iter, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense_solve() {
        let n = 7;
        let mut t = Tridiag::zeros(n);
        for i in 0..n {
            t.diag[i] = 4.0 + i as f64 * 0.1;
            t.lower[i] = -1.0 + 0.05 * i as f64;
            t.upper[i] = -0.7;
        }
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = t.diag[i];
            if i > 0 {
                dense[(i, i - 1)] = t.lower[i];
            }
            if i + 1 < n {
                dense[(i, i + 1)] = t.upper[i];
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let expected = dense.lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        let mut x = b.clone();
        t.factor().unwrap().solve(&mut x);
        for i in 0..n {
            assert!((x[i] - expected[i]).abs() < 1e-14);
        }
        let mut y = vec![0.0; n];
        t.apply(&x, &mut y);
        for i in 0..n {
            assert!((y[i] - b[i]).abs() < 1e-14);
        }
    }

    fn convection_diffusion(n: usize, c: f64) -> Stencil9 {
        // 2D 5-point Laplacian plus a centred x-drift, Dirichlet folded away
        let h = 1.0 / n as f64;
        let mut cols = vec![[0u32; 9]; n * n];
        let mut vals = vec![[0.0; 9]; n * n];
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                cols[k] = [k as u32; 9];
                vals[k][4] = 4.0 / (h * h) + 1.0;
                let mut put = |slot: usize, ii: isize, jj: isize, v: f64| {
                    if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n {
                        cols[k][slot] = (jj as usize * n + ii as usize) as u32;
                        vals[k][slot] = v;
                    }
                };
                let (i, j) = (i as isize, j as isize);
                put(3, i - 1, j, -1.0 / (h * h) - c / (2.0 * h));
                put(5, i + 1, j, -1.0 / (h * h) + c / (2.0 * h));
                put(1, i, j - 1, -1.0 / (h * h));
                put(7, i, j + 1, -1.0 / (h * h));
            }
        }
        Stencil9 { cols, vals }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let m = convection_diffusion(24, 30.0);
        let n = m.len();
        let x_true: Vec<f64> = (0..n).map(|k| ((k as f64) * 0.13).cos()).collect();
        let mut b = vec![0.0; n];
        m.apply(Exec::Sequential, &x_true, &mut b);
        let mut x = vec![0.0; n];
        let stats = bicgstab(Exec::Parallel, &m, &b, &mut x, 1e-12, 2000).unwrap();
        assert!(stats.residual <= 1e-12);
        let err = x.iter().zip(&x_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn bicgstab_modes_agree_bitwise() {
        let m = convection_diffusion(70, 5.0);
        let b: Vec<f64> = (0..m.len()).map(|k| ((k as f64) * 0.37).sin()).collect();
        let mut x1 = vec![0.0; m.len()];
        let mut x2 = vec![0.0; m.len()];
        bicgstab(Exec::Sequential, &m, &b, &mut x1, 1e-10, 1000).unwrap();
        bicgstab(Exec::Parallel, &m, &b, &mut x2, 1e-10, 1000).unwrap();
        assert!(x1.iter().zip(&x2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
