//! Periodic grids, field containers and the spectral operators acting on them.
//!
//! Fields are stored row-major as flat `Vec<f64>` of length `N^d`; in two
//! dimensions the second axis is contiguous. All functionals use the discrete
//! inner product `⟨f, g⟩ = h^d Σ_i f_i g_i`, so that Parseval reads
//! `⟨f, f⟩ = (2π)^d Σ_k |f̂_k|²` with `f̂_k = N^{-d} Σ_i f_i e^{-i k·x_i}`.

pub mod io;
mod spectral;

pub use spectral::Spectral;
pub(crate) use spectral::is_constant;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Uniform grid on the torus `[0, 2π)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n < 2 || n % 2 != 0 {
            return Err(Error::Config(format!("points per axis must be even and >= 2, got {n}")));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Grid spacing `2π / N`.
    pub fn h(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Total number of nodes `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// `(2π)^d`.
    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    /// Per-axis integer coordinates of flat index `i`.
    pub fn multi_index(&self, i: usize) -> [usize; 2] {
        match self.dim {
            1 => [i, 0],
            _ => [i / self.n, i % self.n],
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[0] * self.n + idx[1],
        }
    }

    /// Coordinates of node `i`; unused axes are zero.
    pub fn node(&self, i: usize) -> [f64; 2] {
        let m = self.multi_index(i);
        let h = self.h();
        [m[0] as f64 * h, if self.dim == 2 { m[1] as f64 * h } else { 0.0 }]
    }

    /// Signed wavenumber of FFT bin `j` along one axis; Nyquist maps to `+N/2`.
    pub fn wavenumber(&self, j: usize) -> i64 {
        let n = self.n as i64;
        let j = j as i64;
        if j <= n / 2 {
            j
        } else {
            j - n
        }
    }

    /// Wrapped signed offset of `j` along an axis, in `(-N/2, N/2]`.
    pub fn wrapped_offset(&self, j: usize) -> i64 {
        self.wavenumber(j)
    }

    /// Evaluates `f` at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let x = self.node(i);
                f(&x[..self.dim])
            })
            .collect()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch { expected: self.len(), found: len });
        }
        Ok(())
    }
}

/// `h^d Σ f_i g_i`.
pub fn inner(grid: &Grid, f: &[f64], g: &[f64]) -> f64 {
    grid.cell_volume() * compensated_sum(f.iter().zip(g).map(|(a, b)| a * b))
}

/// `h^d Σ f_i`.
pub fn integral(grid: &Grid, f: &[f64]) -> f64 {
    grid.cell_volume() * compensated_sum(f.iter().copied())
}

/// Spatial mean of `f`.
pub fn mean(f: &[f64]) -> f64 {
    compensated_sum(f.iter().copied()) / f.len() as f64
}

/// A `d`-component field on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        Self { comps: vec![vec![0.0; grid.len()]; grid.dim()] }
    }

    pub fn constant(grid: &Grid, value: &[f64]) -> Result<Self> {
        if value.len() != grid.dim() {
            return Err(Error::ShapeMismatch { expected: grid.dim(), found: value.len() });
        }
        Ok(Self { comps: value.iter().map(|&v| vec![v; grid.len()]).collect() })
    }

    pub fn from_components(comps: Vec<Vec<f64>>) -> Result<Self> {
        let len = comps.first().map(Vec::len).unwrap_or(0);
        if comps.is_empty() || comps.len() > 2 {
            return Err(Error::Config(format!("vector field needs 1 or 2 components, got {}", comps.len())));
        }
        for c in &comps {
            if c.len() != len {
                return Err(Error::ShapeMismatch { expected: len, found: c.len() });
            }
        }
        Ok(Self { comps })
    }

    /// 1D convenience constructor.
    pub fn scalar(values: Vec<f64>) -> Self {
        Self { comps: vec![values] }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    /// Nodes per component.
    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn comp(&self, a: usize) -> &[f64] {
        &self.comps[a]
    }

    pub fn comp_mut(&mut self, a: usize) -> &mut Vec<f64> {
        &mut self.comps[a]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.comps
    }

    /// Value at node `i` packed into a fixed array.
    #[inline]
    pub fn at(&self, i: usize) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (a, c) in self.comps.iter().enumerate() {
            v[a] = c[i];
        }
        v
    }

    pub fn map_components(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        Self { comps: self.comps.iter().map(|c| f(c)).collect() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.dim(), other.dim());
        Self {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    /// Adds a constant vector to every node.
    pub fn shifted(&self, c: &[f64]) -> Self {
        Self {
            comps: self
                .comps
                .iter()
                .zip(c)
                .map(|(comp, &s)| comp.iter().map(|v| v + s).collect())
                .collect(),
        }
    }

    /// Pointwise `|v|²`.
    pub fn norm_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for c in &self.comps {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v * v;
            }
        }
        out
    }

    /// Pointwise `|v|`, maximised over the grid.
    pub fn max_norm(&self) -> f64 {
        self.norm_sq().into_iter().fold(0.0, f64::max).sqrt()
    }

    pub(crate) fn check(&self, grid: &Grid) -> Result<()> {
        if self.dim() != grid.dim() {
            return Err(Error::ShapeMismatch { expected: grid.dim(), found: self.dim() });
        }
        for c in &self.comps {
            grid.check_len(c.len())?;
        }
        Ok(())
    }
}

/// Density and velocity at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub rho: Vec<f64>,
    pub u: VectorField,
}

impl State {
    pub fn new(grid: &Grid, t: f64, rho: Vec<f64>, u: VectorField) -> Result<Self> {
        grid.check_len(rho.len())?;
        u.check(grid)?;
        Ok(Self { t, rho, u })
    }

    /// Spatially constant state.
    pub fn constant(grid: &Grid, rho: f64, u: &[f64]) -> Result<Self> {
        Self::new(grid, 0.0, vec![rho; grid.len()], VectorField::constant(grid, u)?)
    }

    pub fn min_density(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn momentum(&self) -> VectorField {
        self.u.map_components(|c| c.iter().zip(&self.rho).map(|(u, r)| u * r).collect())
    }

    /// Errors if any density is nonpositive.
    pub fn check_positive(&self) -> Result<()> {
        match self.rho.iter().position(|&r| !(r > 0.0)) {
            Some(node) => Err(Error::NonPositiveDensity { node, value: self.rho[node] }),
            None => Ok(()),
        }
    }
}
