//! Uniform grids on the computational box and the values living on them.
//!
//! One-dimensional grids carry values at the `panels + 1` nodes; the two end
//! nodes hold the Dirichlet data. Two-dimensional grids carry values at cell
//! centres with `panels` cells per axis.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{pt, Aabb, Point};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub bbox: Aabb,
    pub dimension: usize,
    pub panels: usize,
    pub steps: usize,
    pub t_end: f64,
}

impl GridSpec {
    pub fn new(bbox: Aabb, dimension: usize, panels: usize, steps: usize, t_end: f64) -> Result<Self> {
        if !(dimension == 1 || dimension == 2) {
            return Err(Error::InvalidArgument(format!("dimension must be 1 or 2, got {dimension}")));
        }
        if panels < 4 {
            return Err(Error::InvalidArgument(format!("need at least 4 panels, got {panels}")));
        }
        if steps == 0 || !(t_end > 0.0) {
            return Err(Error::InvalidArgument("need steps > 0 and T > 0".into()));
        }
        if !(bbox.hi.x > bbox.lo.x) || (dimension == 2 && !(bbox.hi.y > bbox.lo.y)) {
            return Err(Error::InvalidArgument(format!("degenerate box {bbox:?}")));
        }
        Ok(Self { bbox, dimension, panels, steps, t_end })
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn hx(&self) -> f64 {
        (self.bbox.hi.x - self.bbox.lo.x) / self.panels as f64
    }

    pub fn hy(&self) -> f64 {
        (self.bbox.hi.y - self.bbox.lo.y) / self.panels as f64
    }

    /// Number of stored values.
    pub fn len(&self) -> usize {
        if self.dimension == 1 {
            self.panels + 1
        } else {
            self.panels * self.panels
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Position of value `k`.
    pub fn point(&self, k: usize) -> Point {
        if self.dimension == 1 {
            pt(self.node_x(k), 0.0)
        } else {
            let (i, j) = (k % self.panels, k / self.panels);
            pt(self.bbox.lo.x + (i as f64 + 0.5) * self.hx(), self.bbox.lo.y + (j as f64 + 0.5) * self.hy())
        }
    }

    pub fn node_x(&self, i: usize) -> f64 {
        self.bbox.lo.x + i as f64 * self.hx()
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Time of step `k`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_end
        } else {
            k as f64 * self.dt()
        }
    }

    /// Quadrature weight of value `k`: trapezoid in 1D, cell area in 2D.
    pub fn weight(&self, k: usize) -> f64 {
        if self.dimension == 1 {
            if k == 0 || k == self.panels {
                0.5 * self.hx()
            } else {
                self.hx()
            }
        } else {
            self.hx() * self.hy()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!("expected {} values, got {}", grid.len(), values.len())));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at index {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn sample<F: Fn(&Point) -> f64>(grid: GridSpec, f: F) -> Self {
        let values = (0..grid.len()).map(|k| f(&grid.point(k))).collect();
        Self { grid, values }
    }

    /// Writes `x[,y],v` with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        if self.grid.dimension == 1 {
            w.write_record(["x", "v"])?;
        } else {
            w.write_record(["x", "y", "v"])?;
        }
        for (k, v) in self.values.iter().enumerate() {
            let p = self.grid.point(k);
            if self.grid.dimension == 1 {
                w.write_record([p.x.to_string(), v.to_string()])?;
            } else {
                w.write_record([p.x.to_string(), p.y.to_string(), v.to_string()])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_d_nodes_and_weights() {
        let g = GridSpec::new(Aabb::interval(-1.0, 2.0), 1, 300, 10, 0.3).unwrap();
        assert_eq!(g.len(), 301);
        assert_eq!(g.point(0).x, -1.0);
        assert!((g.point(300).x - 2.0).abs() < 1e-15);
        let total: f64 = (0..g.len()).map(|k| g.weight(k)).sum();
        assert!((total - 3.0).abs() < 1e-12);
        assert_eq!(g.time(10), 0.3);
    }

    #[test]
    fn two_d_cell_centres() {
        let g = GridSpec::new(Aabb::new(pt(-1.0, -1.0), pt(1.0, 1.0)), 2, 4, 1, 1.0).unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g.point(0), pt(-0.75, -0.75));
        assert_eq!(g.point(5), pt(-0.25, -0.25));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(Aabb::interval(0.0, 1.0), 1, 3, 1, 1.0).is_err());
        assert!(GridSpec::new(Aabb::interval(0.0, 1.0), 1, 8, 0, 1.0).is_err());
        assert!(GridSpec::new(Aabb::interval(0.0, 1.0), 3, 8, 1, 1.0).is_err());
        let g = GridSpec::new(Aabb::interval(0.0, 1.0), 1, 4, 1, 1.0).unwrap();
        assert!(GridFunction::new(g, vec![0.0; 4]).is_err());
        assert!(GridFunction::new(g, vec![0.0, 1.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = GridSpec::new(Aabb::interval(0.0, 1.0), 1, 4, 1, 1.0).unwrap();
        let f = GridFunction::sample(g, |p| p.x * p.x);
        let mut w = csv::Writer::from_writer(vec![]);
        f.write_csv_to(&mut w).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,v"));
        assert_eq!(lines.nth(1), Some("0.25,0.0625"));
    }
}
