//! Periodic grids and the field containers living on them.
//!
//! All fields are periodic on the torus `[0, 2*pi)^d`, `d = 2` or `3`,
//! sampled on a uniform grid of `n` points per axis (`n` a power of two).
//! Tensor-valued fields are stored as structure-of-arrays: one plane of
//! `f64` per independent component, which is what the spectral transforms
//! and the snapshot format operate on. In two dimensions the fields
//! depend on `x1, x2` only, but vectors and tensors keep all three
//! components, so out-of-plane order and flow are representable.

pub mod snapshot;
pub mod spectral;

pub use snapshot::{read_snapshot, write_snapshot, Snapshot};
pub use spectral::SpectralEngine;

use crate::error::{CoreError, Result};
use crate::tensor::QTensor;
use nalgebra::Vector3;

/// Uniform periodic grid: `n` points per axis on `[0, 2*pi)^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    n: usize,
    dim: usize,
}

impl Grid {
    /// Creates a grid; `n` must be a power of two at least 8 (so the
    /// dealiased band is nonempty and transforms stay fast) and `dim`
    /// must be 2 or 3.
    pub fn new(n: usize, dim: usize) -> Result<Grid> {
        if n < 8 || !n.is_power_of_two() || !(dim == 2 || dim == 3) {
            return Err(CoreError::InvalidGrid { n, dim });
        }
        Ok(Grid { n, dim })
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Spatial dimension (2 or 3).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of grid sites, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// True for a degenerate grid (never constructed).
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest retained wavenumber of the 2/3 dealiasing rule: modes with
    /// any `|k_axis| > n/3` are removed after nonlinear products.
    pub fn dealias_cut(&self) -> usize {
        self.n / 3
    }

    /// Grid spacing `2*pi / n`.
    pub fn spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n as f64
    }

    /// Volume (area) of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Total volume `(2*pi)^dim` of the torus.
    pub fn volume(&self) -> f64 {
        (2.0 * std::f64::consts::PI).powi(self.dim as i32)
    }

    /// Row-major stride of an axis (the last axis is contiguous).
    pub(crate) fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// Integer coordinates of a linear site index.
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        let mut rest = idx;
        for axis in (0..self.dim).rev() {
            c[axis] = rest % self.n;
            rest /= self.n;
        }
        c
    }

    /// Linear index of integer coordinates (third ignored in 2-D).
    pub fn index(&self, c: [usize; 3]) -> usize {
        let mut idx = 0;
        for ci in c.iter().take(self.dim) {
            idx = idx * self.n + (ci % self.n);
        }
        idx
    }

    /// Physical coordinates of a site; the third component is 0 in 2-D.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = h * c[axis] as f64;
        }
        x
    }

    /// Mean of a plane over the grid.
    pub fn mean(&self, plane: &[f64]) -> f64 {
        debug_assert_eq!(plane.len(), self.len());
        let mut s = 0.0;
        for &v in plane {
            s += v;
        }
        s / self.len() as f64
    }

    /// Integral of a plane over the torus: `cell_volume * sum`.
    pub fn integral(&self, plane: &[f64]) -> f64 {
        self.mean(plane) * self.volume()
    }
}

/// Scalar field: one value per site.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            data: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        ScalarField {
            data: vec![c; grid.len()],
        }
    }
}

/// Vector field stored as three scalar planes.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub comps: [Vec<f64>; 3],
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        VectorField {
            comps: std::array::from_fn(|_| vec![0.0; grid.len()]),
        }
    }

    #[inline]
    pub fn get(&self, idx: usize) -> Vector3<f64> {
        Vector3::new(self.comps[0][idx], self.comps[1][idx], self.comps[2][idx])
    }

    #[inline]
    pub fn set(&mut self, idx: usize, v: Vector3<f64>) {
        self.comps[0][idx] = v[0];
        self.comps[1][idx] = v[1];
        self.comps[2][idx] = v[2];
    }
}

/// Symmetric traceless tensor field stored as five scalar planes in the
/// component order `q11, q22, q12, q13, q23`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    pub comps: [Vec<f64>; 5],
}

impl TensorField {
    pub fn zeros(grid: &Grid) -> Self {
        TensorField {
            comps: std::array::from_fn(|_| vec![0.0; grid.len()]),
        }
    }

    #[inline]
    pub fn get(&self, idx: usize) -> QTensor {
        QTensor::new(
            self.comps[0][idx],
            self.comps[1][idx],
            self.comps[2][idx],
            self.comps[3][idx],
            self.comps[4][idx],
        )
    }

    #[inline]
    pub fn set(&mut self, idx: usize, q: QTensor) {
        self.comps[0][idx] = q.q11;
        self.comps[1][idx] = q.q22;
        self.comps[2][idx] = q.q12;
        self.comps[3][idx] = q.q13;
        self.comps[4][idx] = q.q23;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(Grid::new(8, 2).is_ok());
        assert!(Grid::new(64, 3).is_ok());
        assert!(matches!(Grid::new(12, 2), Err(CoreError::InvalidGrid { .. })));
        assert!(matches!(Grid::new(4, 2), Err(CoreError::InvalidGrid { .. })));
        assert!(matches!(Grid::new(32, 1), Err(CoreError::InvalidGrid { .. })));
        assert!(matches!(Grid::new(32, 4), Err(CoreError::InvalidGrid { .. })));
    }

    #[test]
    fn grid_geometry() {
        let g = Grid::new(16, 2).unwrap();
        assert_eq!(g.len(), 256);
        assert_eq!(g.dealias_cut(), 5);
        assert!((g.volume() - (2.0 * std::f64::consts::PI).powi(2)).abs() < 1e-14);
        assert!((g.cell_volume() * g.len() as f64 - g.volume()).abs() < 1e-12);
        let g3 = Grid::new(8, 3).unwrap();
        assert_eq!(g3.len(), 512);
        assert_eq!(g3.stride(0), 64);
        assert_eq!(g3.stride(1), 8);
        assert_eq!(g3.stride(2), 1);
    }

    #[test]
    fn grid_indexing_roundtrip() {
        for (n, dim) in [(8, 2), (8, 3), (16, 2)] {
            let g = Grid::new(n, dim).unwrap();
            for idx in 0..g.len() {
                let c = g.coords(idx);
                assert_eq!(g.index(c), idx);
                if dim == 2 {
                    assert_eq!(c[2], 0);
                }
            }
        }
    }

    #[test]
    fn grid_points_cover_the_torus() {
        let g = Grid::new(8, 2).unwrap();
        let x0 = g.point(0);
        assert_eq!(x0, [0.0, 0.0, 0.0]);
        let last = g.point(g.len() - 1);
        let h = g.spacing();
        assert!((last[0] - (2.0 * std::f64::consts::PI - h)).abs() < 1e-14);
        assert!((last[1] - (2.0 * std::f64::consts::PI - h)).abs() < 1e-14);
    }

    #[test]
    fn integral_of_constant_is_volume() {
        let g = Grid::new(16, 3).unwrap();
        let f = ScalarField::constant(&g, 2.5);
        assert!((g.integral(&f.data) - 2.5 * g.volume()).abs() < 1e-10);
    }

    #[test]
    fn field_get_set_roundtrip() {
        let g = Grid::new(8, 2).unwrap();
        let mut v = VectorField::zeros(&g);
        let mut t = TensorField::zeros(&g);
        let vec = Vector3::new(1.0, -2.0, 3.0);
        let q = QTensor::new(0.1, 0.2, -0.3, 0.4, -0.5);
        v.set(17, vec);
        t.set(17, q);
        assert_eq!(v.get(17), vec);
        assert_eq!(t.get(17), q);
        assert_eq!(v.get(16), Vector3::zeros());
    }
}
