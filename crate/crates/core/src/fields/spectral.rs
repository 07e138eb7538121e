use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Grid, VectorField};
use crate::error::Result;

/// Fourier transforms and mode-wise operators on a fixed grid.
///
/// Coefficients are normalised as `f̂_k = N^{-d} Σ_i f_i e^{-i k·x_i}`.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            forward: planner.plan_fft_forward(grid.n()),
            inverse: planner.plan_fft_inverse(grid.n()),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Unnormalised in-place transform along every axis.
    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.grid.n();
        let plan = if inverse { &self.inverse } else { &self.forward };
        match self.grid.dim() {
            1 => plan.process(data),
            _ => {
                // rows (contiguous second axis)
                plan.process(data);
                // columns via transpose
                let mut col = vec![Complex64::new(0.0, 0.0); n * n];
                for i in 0..n {
                    for j in 0..n {
                        col[j * n + i] = data[i * n + j];
                    }
                }
                plan.process(&mut col);
                for i in 0..n {
                    for j in 0..n {
                        data[i * n + j] = col[j * n + i];
                    }
                }
            }
        }
    }

    /// Normalised Fourier coefficients of a real field.
    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(f.len(), self.grid.len());
        let mut data: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        let scale = 1.0 / self.grid.len() as f64;
        for c in &mut data {
            *c *= scale;
        }
        data
    }

    /// Real part of the synthesis `Σ_k c_k e^{i k·x}`.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut data = coeffs.to_vec();
        self.transform(&mut data, true);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Wavenumber vector of flat coefficient index `idx`.
    #[inline]
    pub fn wavevector(&self, idx: usize) -> [i64; 2] {
        let m = self.grid.multi_index(idx);
        match self.grid.dim() {
            1 => [self.grid.wavenumber(m[0]), 0],
            _ => [self.grid.wavenumber(m[0]), self.grid.wavenumber(m[1])],
        }
    }

    #[inline]
    fn k_sq(&self, idx: usize) -> f64 {
        let k = self.wavevector(idx);
        (k[0] * k[0] + k[1] * k[1]) as f64
    }

    fn is_nyquist(&self, k: i64) -> bool {
        k == self.grid.n() as i64 / 2
    }

    /// Applies a real multiplier mode by mode.
    pub fn apply_multiplier(&self, f: &[f64], mult: impl Fn([i64; 2]) -> f64) -> Vec<f64> {
        let mut c = self.forward(f);
        for (idx, v) in c.iter_mut().enumerate() {
            *v *= mult(self.wavevector(idx));
        }
        self.inverse(&c)
    }

    /// Spectral derivative along `axis`; the Nyquist mode is dropped so the
    /// operator stays real and skew-adjoint.
    pub fn derivative(&self, f: &[f64], axis: usize) -> Vec<f64> {
        if is_constant(f) {
            return vec![0.0; f.len()];
        }
        let mut c = self.forward(f);
        for (idx, v) in c.iter_mut().enumerate() {
            let k = self.wavevector(idx)[axis];
            *v = if self.is_nyquist(k) { Complex64::new(0.0, 0.0) } else { *v * Complex64::new(0.0, k as f64) };
        }
        self.inverse(&c)
    }

    pub fn gradient(&self, f: &[f64]) -> VectorField {
        let comps = (0..self.grid.dim()).map(|a| self.derivative(f, a)).collect();
        VectorField::from_components(comps).expect("gradient components share a grid")
    }

    pub fn divergence(&self, v: &VectorField) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for a in 0..v.dim() {
            for (o, d) in out.iter_mut().zip(self.derivative(v.comp(a), a)) {
                *o += d;
            }
        }
        out
    }

    /// Solves `(I + coeff·(-Δ)^{2m}) v = f` mode-wise.
    pub fn hyperdiffusion_solve_scalar(&self, f: &[f64], coeff: f64, m: u32) -> Vec<f64> {
        if coeff == 0.0 || is_constant(f) {
            return f.to_vec();
        }
        let mut c = self.forward(f);
        for (idx, v) in c.iter_mut().enumerate() {
            *v /= 1.0 + coeff * self.k_sq(idx).powi(2 * m as i32);
        }
        self.inverse(&c)
    }

    /// Component-wise [`Self::hyperdiffusion_solve_scalar`].
    pub fn hyperdiffusion_solve(&self, u: &VectorField, coeff: f64, m: u32) -> VectorField {
        u.map_components(|c| self.hyperdiffusion_solve_scalar(c, coeff, m))
    }

    /// `(-Δ)^{2m} f`, i.e. the operator behind `Δ^{2m}`.
    pub fn hyperviscous_operator(&self, f: &[f64], m: u32) -> Vec<f64> {
        if is_constant(f) {
            return vec![0.0; f.len()];
        }
        let mut c = self.forward(f);
        for (idx, v) in c.iter_mut().enumerate() {
            *v *= self.k_sq(idx).powi(2 * m as i32);
        }
        self.inverse(&c)
    }

    /// `‖Δ^m u‖² = (2π)^d Σ_k |k|^{4m} |û_k|²`, summed over components.
    pub fn hyperviscous_energy(&self, u: &VectorField, m: u32) -> f64 {
        let vol = self.grid.volume();
        u.components()
            .iter()
            .map(|comp| {
                let c = self.forward(comp);
                vol * crate::numeric::compensated_sum(
                    c.iter().enumerate().map(|(idx, v)| self.k_sq(idx).powi(2 * m as i32) * v.norm_sqr()),
                )
            })
            .sum()
    }

    /// `(2π)^d Σ_{k≠0} |k|^{2λ} |f̂_k|²`.
    pub fn fractional_seminorm(&self, f: &[f64], lambda: f64) -> f64 {
        let c = self.forward(f);
        let terms = c.iter().enumerate().skip(1).map(|(idx, v)| self.k_sq(idx).powf(lambda) * v.norm_sqr());
        self.grid.volume() * crate::numeric::compensated_sum(terms)
    }

    /// Gaussian spectral filter `exp(-½ width² |k|²)`; the mean is untouched.
    pub fn mollify(&self, f: &[f64], width: f64) -> Vec<f64> {
        if width == 0.0 || is_constant(f) {
            return f.to_vec();
        }
        let mut c = self.forward(f);
        for (idx, v) in c.iter_mut().enumerate().skip(1) {
            *v *= (-0.5 * width * width * self.k_sq(idx)).exp();
        }
        self.inverse(&c)
    }

    /// Two-thirds truncation: zeroes every mode with some `|k_a| > N/3`.
    pub fn dealias(&self, f: &[f64]) -> Vec<f64> {
        if is_constant(f) {
            return f.to_vec();
        }
        let cutoff = self.grid.n() as i64 / 3;
        let mut c = self.forward(f);
        for (idx, v) in c.iter_mut().enumerate() {
            let k = self.wavevector(idx);
            if k[0].abs() > cutoff || k[1].abs() > cutoff {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        self.inverse(&c)
    }

    /// Largest coefficient magnitude in the band `max_a |k_a| >= N/4`,
    /// relative to the largest coefficient overall.
    pub fn tail_ratio(&self, f: &[f64]) -> f64 {
        let band = self.grid.n() as i64 / 4;
        let c = self.forward(f);
        let mut peak = 0.0f64;
        let mut tail = 0.0f64;
        for (idx, v) in c.iter().enumerate() {
            let a = v.norm();
            peak = peak.max(a);
            let k = self.wavevector(idx);
            if k[0].abs().max(k[1].abs()) >= band {
                tail = tail.max(a);
            }
        }
        if peak == 0.0 {
            0.0
        } else {
            tail / peak
        }
    }

    /// Trigonometric interpolation onto another grid of the same dimension:
    /// spectral truncation when coarsening, zero padding when refining.
    pub fn resample(&self, f: &[f64], target: &Grid) -> Result<Vec<f64>> {
        self.grid.check_len(f.len())?;
        if target.dim() != self.grid.dim() {
            return Err(crate::Error::ShapeMismatch { expected: self.grid.dim(), found: target.dim() });
        }
        if *target == self.grid {
            return Ok(f.to_vec());
        }
        let src = self.forward(f);
        let ns = self.grid.n() as i64;
        let nt = target.n() as i64;
        // per-axis map from target bin to (source bin, weight)
        let axis_map = |jt: usize| -> Option<(usize, f64)> {
            let k = target.wavenumber(jt);
            if nt < ns {
                if k.abs() >= nt / 2 {
                    return None;
                }
                Some((k.rem_euclid(ns) as usize, 1.0))
            } else if k.abs() < ns / 2 {
                Some((k.rem_euclid(ns) as usize, 1.0))
            } else if k.abs() == ns / 2 {
                // split the source Nyquist mode evenly between ±N_s/2
                Some(((ns / 2) as usize, 0.5))
            } else {
                None
            }
        };
        let mut out = vec![Complex64::new(0.0, 0.0); target.len()];
        for (it, o) in out.iter_mut().enumerate() {
            let mt = target.multi_index(it);
            let Some((s0, w0)) = axis_map(mt[0]) else { continue };
            let (s1, w1) = if self.grid.dim() == 2 {
                match axis_map(mt[1]) {
                    Some(p) => p,
                    None => continue,
                }
            } else {
                (0, 1.0)
            };
            let is = self.grid.flat_index([s0, s1]);
            *o = src[is] * (w0 * w1);
        }
        let tgt = Spectral::new(*target);
        Ok(tgt.inverse(&out))
    }

    /// Circular convolution `(w ⊛ f)_i = Σ_j w_{i-j} f_j` given the raw
    /// (unnormalised) transform of `w`.
    pub fn convolve_with(&self, w_hat_raw: &[Complex64], f: &[f64]) -> Vec<f64> {
        let mut data: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        for (d, w) in data.iter_mut().zip(w_hat_raw) {
            *d *= w;
        }
        self.transform(&mut data, true);
        let scale = 1.0 / self.grid.len() as f64;
        data.into_iter().map(|c| c.re * scale).collect()
    }

    /// Unnormalised forward transform, for use with [`Self::convolve_with`].
    pub fn raw_forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        data
    }
}

/// True when every entry equals the first; lets operators return exact
/// results on constant fields instead of transform round-off.
pub(crate) fn is_constant(f: &[f64]) -> bool {
    f.first().is_none_or(|&v| f.iter().all(|&x| x == v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::mean;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn derivative_of_sine_is_cosine() {
        let g = Grid::new(1, 32).unwrap();
        let s = Spectral::new(g);
        let d = s.derivative(&g.sample(|x| x[0].sin()), 0);
        assert!(max_diff(&d, &g.sample(|x| x[0].cos())) < 1e-13);
        let c = s.derivative(&vec![3.0; 32], 0);
        assert!(c.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn derivative_2d_resolved_mode() {
        let g = Grid::new(2, 16).unwrap();
        let s = Spectral::new(g);
        let f = g.sample(|x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let dx = s.derivative(&f, 0);
        let want = g.sample(|x| 3.0 * (3.0 * x[0]).cos() * (2.0 * x[1]).cos());
        assert!(max_diff(&dx, &want) < 1e-12);
        let dy = s.derivative(&f, 1);
        let want = g.sample(|x| -2.0 * (3.0 * x[0]).sin() * (2.0 * x[1]).sin());
        assert!(max_diff(&dy, &want) < 1e-12);
        assert!(mean(&dx).abs() < 1e-15);
    }

    #[test]
    fn roundtrip_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (dim, n) in [(1, 64), (2, 16)] {
            let g = Grid::new(dim, n).unwrap();
            let s = Spectral::new(g);
            let f: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let back = s.inverse(&s.forward(&f));
            let scale = f.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(max_diff(&f, &back) < 1e-12 * scale);
        }
    }

    #[test]
    fn product_rule_for_resolved_modes() {
        let g = Grid::new(1, 64).unwrap();
        let s = Spectral::new(g);
        let f = g.sample(|x| (2.0 * x[0]).sin() + 0.3 * (5.0 * x[0]).cos());
        let h = g.sample(|x| 1.0 + 0.5 * (3.0 * x[0]).cos());
        let fh: Vec<f64> = f.iter().zip(&h).map(|(a, b)| a * b).collect();
        let lhs = s.derivative(&fh, 0);
        let df = s.derivative(&f, 0);
        let dh = s.derivative(&h, 0);
        let rhs: Vec<f64> = (0..64).map(|i| f[i] * dh[i] + h[i] * df[i]).collect();
        assert!(max_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn hyperdiffusion_single_mode() {
        let g = Grid::new(1, 32).unwrap();
        let s = Spectral::new(g);
        let u = VectorField::scalar(g.sample(|x| (2.0 * x[0]).cos()));
        let v = s.hyperdiffusion_solve(&u, 1.0, 1);
        let want = g.sample(|x| (2.0 * x[0]).cos() / 17.0);
        assert!(max_diff(v.comp(0), &want) < 1e-14);
        assert_eq!(s.hyperdiffusion_solve(&u, 0.0, 1), u);
        let c = VectorField::scalar(vec![2.5; 32]);
        assert!(max_diff(s.hyperdiffusion_solve(&c, 10.0, 2).comp(0), c.comp(0)) < 1e-14);
    }

    #[test]
    fn seminorm_of_cosine() {
        for (dim, n) in [(1, 32), (2, 16)] {
            let g = Grid::new(dim, n).unwrap();
            let s = Spectral::new(g);
            let f = g.sample(|x| x[0].cos());
            for lambda in [0.25, 0.5, 0.9] {
                let want = 0.5 * (2.0 * PI).powi(dim as i32);
                assert!((s.fractional_seminorm(&f, lambda) - want).abs() < 1e-12 * want);
            }
            assert_eq!(s.fractional_seminorm(&vec![4.0; g.len()], 0.5), 0.0);
        }
    }

    #[test]
    fn seminorm_matches_direct_dft_sum() {
        // independent O(N²) DFT
        let g = Grid::new(1, 16).unwrap();
        let s = Spectral::new(g);
        let f = g.sample(|x| (x[0].sin() + 0.2).exp());
        let n = 16usize;
        let mut direct = 0.0;
        for k in 1..n {
            let kk = g.wavenumber(k);
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in f.iter().enumerate() {
                let ang = -2.0 * PI * (k * j) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let c2 = (re * re + im * im) / (n * n) as f64;
            direct += (kk.abs() as f64).powf(2.0 * 0.3) * c2;
        }
        direct *= 2.0 * PI;
        assert!((s.fractional_seminorm(&f, 0.3) - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn mollify_preserves_mean_and_decreases_seminorm() {
        let g = Grid::new(1, 128).unwrap();
        let s = Spectral::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = s.fractional_seminorm(&noise, 0.5);
        for w in [0.01, 0.05, 0.1, 0.3] {
            let m = s.mollify(&noise, w);
            assert!((mean(&m) - mean(&noise)).abs() < 1e-14);
            let sn = s.fractional_seminorm(&m, 0.5);
            assert!(sn < last);
            last = sn;
        }
        assert_eq!(s.mollify(&vec![1.5; 128], 0.2).iter().map(|v| (v - 1.5).abs()).fold(0.0, f64::max) < 1e-14, true);
    }

    #[test]
    fn resample_roundtrip_for_resolved_fields() {
        for (dim, nc, nf) in [(1, 32, 128), (2, 32, 64)] {
            let gc = Grid::new(dim, nc).unwrap();
            let gf = Grid::new(dim, nf).unwrap();
            let f_exact = |x: &[f64]| (x[0].sin() + x.get(1).map_or(0.0, |y| 0.5 * y.cos())).exp();
            let ff = gf.sample(f_exact);
            let sf = Spectral::new(gf);
            let coarse = sf.resample(&ff, &gc).unwrap();
            assert!(max_diff(&coarse, &gc.sample(f_exact)) < 1e-9);
            let back = Spectral::new(gc).resample(&coarse, &gf).unwrap();
            assert!(max_diff(&back, &ff) < 1e-9);
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let g = Grid::new(1, 16).unwrap();
        let s = Spectral::new(g);
        let w: Vec<f64> = (0..16).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let f: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let conv = s.convolve_with(&s.raw_forward(&w), &f);
        for i in 0..16 {
            let direct: f64 = (0..16).map(|j| w[(i + 16 - j) % 16] * f[j]).sum();
            assert!((conv[i] - direct).abs() < 1e-13);
        }
    }
}
