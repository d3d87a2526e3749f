//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the `Parallel` mode dispatches to
//! rayon; without it every mode runs sequentially. Reductions are performed
//! over fixed-size chunks and combined in chunk order, so both modes produce
//! bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed reduction block. Changing it changes round-off, not correctness.
pub const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `out[i] = f(i)` for every index.
    pub fn fill<T, F>(self, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = f(c * CHUNK + k);
                }
            });
            return;
        }
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(i);
        }
    }

    /// Deterministic sum of `f(i)` for `i in 0..n`.
    pub fn sum<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunks = n.div_ceil(CHUNK);
        let partial = |c: usize| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        };
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            let parts: Vec<f64> = (0..chunks).into_par_iter().map(partial).collect();
            return parts.iter().sum();
        }
        (0..chunks).map(partial).sum()
    }

    /// Deterministic `(min, argmin)` of `f(i)`; ties resolve to the lowest index.
    pub fn min_by<F>(self, n: usize, f: F) -> Option<(f64, usize)>
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunks = n.div_ceil(CHUNK);
        let partial = |c: usize| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut best: Option<(f64, usize)> = None;
            for i in lo..hi {
                let v = f(i);
                match best {
                    Some((b, _)) if !(v < b) => {}
                    _ => best = Some((v, i)),
                }
            }
            best
        };
        let pick = |acc: Option<(f64, usize)>, x: Option<(f64, usize)>| match (acc, x) {
            (None, x) => x,
            (a, None) => a,
            (Some(a), Some(b)) => Some(if b.0 < a.0 { b } else { a }),
        };
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            let parts: Vec<_> = (0..chunks).into_par_iter().map(partial).collect();
            return parts.into_iter().fold(None, pick);
        }
        (0..chunks).map(partial).fold(None, pick)
    }

    /// Maximum of `f(i)`, NaN-propagating.
    pub fn max<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        match self.min_by(n, |i| -f(i)) {
            Some((m, _)) => -m,
            None => f64::NEG_INFINITY,
        }
    }

    /// Maps independent jobs, preserving input order.
    pub fn map<I, O, F>(self, items: Vec<I>, f: F) -> Vec<O>
    where
        I: Send,
        O: Send,
        F: Fn(I) -> O + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.into_par_iter().map(f).collect();
        }
        items.into_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let n = 3 * CHUNK + 17;
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let a = Exec::Sequential.sum(n, f);
        let b = Exec::Parallel.sum(n, f);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(Exec::Sequential.min_by(n, f), Exec::Parallel.min_by(n, f));
    }

    #[test]
    fn fill_and_map_preserve_order() {
        let mut out = vec![0usize; 2 * CHUNK + 3];
        Exec::Parallel.fill(&mut out, |i| i * 2);
        assert!(out.iter().enumerate().all(|(i, &v)| v == 2 * i));
        let m = Exec::Parallel.map((0..10).collect(), |x: i32| x * x);
        assert_eq!(m, (0..10).map(|x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn empty_reductions() {
        assert_eq!(Exec::Parallel.sum(0, |_| 1.0), 0.0);
        assert_eq!(Exec::Parallel.min_by(0, |_| 1.0), None);
    }
}
