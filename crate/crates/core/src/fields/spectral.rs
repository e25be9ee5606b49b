//! Fourier-space calculus on periodic grids.
//!
//! Transforms are full complex FFTs applied axis by axis (forward
//! unnormalized, inverse carrying the `1/N` factor). Real fields go in
//! and come out as `f64` planes; intermediate spectra are plain
//! `Vec<Complex<f64>>` indexed like the grid, with the signed wavenumber
//! convention `k = j` for `j <= n/2` and `k = j - n` above.
//!
//! Two symbol families keep the discrete calculus exact:
//!
//! * first derivatives (gradient, divergence, projections) use the odd
//!   symbol `i k` with the Nyquist wavenumber zeroed, so derivatives of
//!   real fields are real and `div(grad f)` equals the Laplacian symbol
//!   for every input;
//! * the Laplacian/Helmholtz symbol is `-|k|^2` built from the same
//!   zeroed-Nyquist wavenumbers, which makes the implicit-explicit
//!   splitting of diffusion terms cancel exactly for constant
//!   coefficients.
//!
//! Dealiasing follows the 2/3 rule: after a nonlinear product, every
//! mode with any `|k_axis| > n/3` is removed. Fields kept band-limited
//! this way multiply without aliasing error on the retained band.

use crate::error::Result;
use crate::fields::{Grid, ScalarField, TensorField, VectorField};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

type Cx = Complex<f64>;

/// Planned transforms and wavenumber tables for one grid.
pub struct SpectralEngine {
    grid: Grid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Signed wavenumber per index along one axis, Nyquist zeroed.
    k_axis: Vec<f64>,
    /// `|k|^2` per site (sum of squared zeroed-Nyquist wavenumbers).
    k2: Vec<f64>,
    /// Dealiasing mask per site: true when the mode is retained.
    keep: Vec<bool>,
}

impl SpectralEngine {
    /// Plans transforms and precomputes symbol tables for `grid`.
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.n());
        let inv = planner.plan_fft_inverse(grid.n());
        let n = grid.n();
        let k_axis: Vec<f64> = (0..n)
            .map(|j| {
                if 2 * j < n {
                    j as f64
                } else if 2 * j == n {
                    0.0 // Nyquist carries no usable sign information
                } else {
                    j as f64 - n as f64
                }
            })
            .collect();
        let cut = grid.dealias_cut() as f64;
        let mut k2 = vec![0.0; grid.len()];
        let mut keep = vec![true; grid.len()];
        for idx in 0..grid.len() {
            let c = grid.coords(idx);
            let mut s = 0.0;
            let mut ok = true;
            for axis in 0..grid.dim() {
                let j = c[axis];
                let k = k_axis[j];
                s += k * k;
                // The raw index decides aliasing, including the Nyquist
                // mode (which k_axis reports as 0).
                let kraw = if 2 * j <= n { j as f64 } else { (n - j) as f64 };
                ok &= kraw <= cut;
            }
            k2[idx] = s;
            keep[idx] = ok;
        }
        SpectralEngine {
            grid,
            fwd,
            inv,
            k_axis,
            k2,
            keep,
        }
    }

    /// The grid this engine transforms.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `|k|^2` table, site-indexed.
    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    fn transform(&self, data: &mut [Cx], inverse: bool) {
        let n = self.grid.n();
        let fft = if inverse { &self.inv } else { &self.fwd };
        let mut line = vec![Cx::new(0.0, 0.0); n];
        for axis in 0..self.grid.dim() {
            let stride = self.grid.stride(axis);
            for base in 0..data.len() {
                if (base / stride) % n != 0 {
                    continue;
                }
                for (j, l) in line.iter_mut().enumerate() {
                    *l = data[base + j * stride];
                }
                fft.process(&mut line);
                for (j, l) in line.iter().enumerate() {
                    data[base + j * stride] = *l;
                }
            }
        }
        if inverse {
            let scale = 1.0 / self.grid.len() as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// Forward transform of a real plane (unnormalized).
    pub fn forward(&self, plane: &[f64]) -> Vec<Cx> {
        debug_assert_eq!(plane.len(), self.grid.len());
        let mut data: Vec<Cx> = plane.iter().map(|&v| Cx::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        data
    }

    /// Inverse transform back to a real plane (applies `1/N`; the
    /// imaginary residue of Hermitian spectra is rounding and dropped).
    pub fn inverse(&self, spec: &[Cx]) -> Vec<f64> {
        let mut data = spec.to_vec();
        self.transform(&mut data, true);
        data.into_iter().map(|v| v.re).collect()
    }

    /// Signed wavenumber vector of a site (third component 0 in 2-D).
    #[inline]
    pub fn site_k(&self, idx: usize) -> [f64; 3] {
        let c = self.grid.coords(idx);
        let mut k = [0.0; 3];
        for axis in 0..self.grid.dim() {
            k[axis] = self.k_axis[c[axis]];
        }
        k
    }

    /// Spectral derivative along `axis`: multiplication by `i k_axis`.
    pub fn deriv_spec(&self, spec: &[Cx], axis: usize) -> Vec<Cx> {
        let n = self.grid.n();
        let stride = self.grid.stride(axis);
        spec.iter()
            .enumerate()
            .map(|(idx, &v)| {
                let k = self.k_axis[(idx / stride) % n];
                Cx::new(-k * v.im, k * v.re)
            })
            .collect()
    }

    /// In-place division by the Helmholtz symbol `1 + c |k|^2` (the
    /// implicit half of a diffusion step with coefficient `c = dt * nu`).
    pub fn helmholtz_solve(&self, spec: &mut [Cx], c: f64) {
        for (v, &k2) in spec.iter_mut().zip(&self.k2) {
            *v /= 1.0 + c * k2;
        }
    }

    /// In-place 2/3-rule dealiasing: removes every mode with any axis
    /// wavenumber above `n/3`.
    pub fn dealias_spec(&self, spec: &mut [Cx]) {
        for (v, &keep) in spec.iter_mut().zip(&self.keep) {
            if !keep {
                *v = Cx::new(0.0, 0.0);
            }
        }
    }

    /// In-place spectral mollification by the Gaussian symbol
    /// `exp(-(eps |k|)^2 / 2)`; `eps = 0` is the identity.
    pub fn mollify_spec(&self, spec: &mut [Cx], eps: f64) {
        if eps == 0.0 {
            return;
        }
        for (v, &k2) in spec.iter_mut().zip(&self.k2) {
            *v *= (-0.5 * eps * eps * k2).exp();
        }
    }

    /// In-place Leray projection of a spectral vector field onto
    /// divergence-free fields; the mean (k = 0) flow is untouched.
    pub fn leray_spec(&self, u: &mut [Vec<Cx>; 3]) {
        for idx in 0..self.grid.len() {
            let k = self.site_k(idx);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == 0.0 {
                continue;
            }
            let dot = u[0][idx] * k[0] + u[1][idx] * k[1] + u[2][idx] * k[2];
            let factor = dot / k2;
            for (a, plane) in u.iter_mut().enumerate() {
                plane[idx] -= factor * k[a];
            }
        }
    }

    /// Pressure spectrum recovering the potential part of a forcing:
    /// `p = -i (k . F) / |k|^2` with zero mean, so that
    /// `F - grad p = leray(F)`.
    pub fn pressure_spec(&self, f: &[Vec<Cx>; 3]) -> Vec<Cx> {
        let mut p = vec![Cx::new(0.0, 0.0); self.grid.len()];
        for (idx, pv) in p.iter_mut().enumerate() {
            let k = self.site_k(idx);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == 0.0 {
                continue;
            }
            let dot = f[0][idx] * k[0] + f[1][idx] * k[1] + f[2][idx] * k[2];
            // -i * dot / k2
            *pv = Cx::new(dot.im, -dot.re) / k2;
        }
        p
    }

    // -- Physical-space wrappers ------------------------------------------

    /// Gradient of a plane; out-of-plane components are zero in 2-D.
    pub fn gradient_plane(&self, plane: &[f64]) -> [Vec<f64>; 3] {
        let spec = self.forward(plane);
        std::array::from_fn(|axis| {
            if axis < self.grid.dim() {
                self.inverse(&self.deriv_spec(&spec, axis))
            } else {
                vec![0.0; plane.len()]
            }
        })
    }

    /// Gradient of a scalar field.
    pub fn grad(&self, f: &ScalarField) -> VectorField {
        VectorField {
            comps: self.gradient_plane(&f.data),
        }
    }

    /// Directional derivatives of a tensor field: `out[a]` holds
    /// `d_a Q` componentwise.
    pub fn grad_tensor(&self, q: &TensorField) -> [TensorField; 3] {
        let mut out: [TensorField; 3] = std::array::from_fn(|_| TensorField::zeros(&self.grid));
        for c in 0..5 {
            let spec = self.forward(&q.comps[c]);
            for axis in 0..self.grid.dim() {
                out[axis].comps[c] = self.inverse(&self.deriv_spec(&spec, axis));
            }
        }
        out
    }

    /// Divergence of a vector field.
    pub fn divergence(&self, v: &VectorField) -> ScalarField {
        let mut acc = vec![Cx::new(0.0, 0.0); self.grid.len()];
        for axis in 0..self.grid.dim() {
            let spec = self.forward(&v.comps[axis]);
            let d = self.deriv_spec(&spec, axis);
            for (a, b) in acc.iter_mut().zip(d) {
                *a += b;
            }
        }
        ScalarField {
            data: self.inverse(&acc),
        }
    }

    /// Laplacian of a scalar field.
    pub fn laplacian(&self, f: &ScalarField) -> ScalarField {
        let mut spec = self.forward(&f.data);
        for (v, &k2) in spec.iter_mut().zip(&self.k2) {
            *v *= -k2;
        }
        ScalarField {
            data: self.inverse(&spec),
        }
    }

    /// Leray projection of a vector field onto divergence-free fields.
    pub fn leray_project(&self, v: &VectorField) -> VectorField {
        let mut spec: [Vec<Cx>; 3] = std::array::from_fn(|a| self.forward(&v.comps[a]));
        self.leray_spec(&mut spec);
        VectorField {
            comps: std::array::from_fn(|a| self.inverse(&spec[a])),
        }
    }

    /// Splits a vector field into its divergence-free part and the scalar
    /// potential of the remainder: `v = leray(v) + grad p` with `p` of
    /// zero mean.
    pub fn project_with_potential(&self, v: &VectorField) -> (VectorField, ScalarField) {
        let spec: [Vec<Cx>; 3] = std::array::from_fn(|a| self.forward(&v.comps[a]));
        let p = self.pressure_spec(&spec);
        let mut sol = spec;
        self.leray_spec(&mut sol);
        (
            VectorField {
                comps: std::array::from_fn(|a| self.inverse(&sol[a])),
            },
            ScalarField {
                data: self.inverse(&p),
            },
        )
    }

    /// Mollifies a plane with the Gaussian symbol at radius `eps`.
    pub fn mollify_plane(&self, plane: &[f64], eps: f64) -> Vec<f64> {
        if eps == 0.0 {
            return plane.to_vec();
        }
        let mut spec = self.forward(plane);
        self.mollify_spec(&mut spec, eps);
        self.inverse(&spec)
    }

    /// Mollifies a scalar field; see [`SpectralEngine::mollify_plane`].
    pub fn mollify(&self, f: &ScalarField, eps: f64) -> ScalarField {
        ScalarField {
            data: self.mollify_plane(&f.data, eps),
        }
    }

    /// Removes all modes outside the 2/3 band from a plane.
    pub fn dealias_plane(&self, plane: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(plane);
        self.dealias_spec(&mut spec);
        self.inverse(&spec)
    }

    /// Convenience constructor validating the grid first.
    pub fn for_grid(n: usize, dim: usize) -> Result<Self> {
        Ok(SpectralEngine::new(Grid::new(n, dim)?))
    }
}
