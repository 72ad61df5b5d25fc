use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::lattice::LatticeBox;
use crate::numeric::fft_nd;
use crate::rng::Rng;

/// Minimum ratio of torus side to window radius.
pub const MIN_MARGIN: f64 = 4.0;

/// Spectral sampler of the free field on the torus `(Z / L Z)^d` with the
/// zero mode removed. Windows are read off one periodic sample.
///
/// Removing the zero mode lowers every covariance by about `G(0) - C_L(0)`,
/// which biases sums over large windows. [`TorusSampler::compensated`] adds
/// an independent constant of that variance to each sample.
pub struct TorusSampler {
    dim: usize,
    side: usize,
    amplitude: Vec<f64>,
    cov: Vec<f64>,
    offset_var: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TorusSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusSampler").field("dim", &self.dim).field("side", &self.side).finish()
    }
}

impl TorusSampler {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidDimension(dim));
        }
        if side < 4 {
            return Err(Error::arg(format!("torus side {side} too small")));
        }
        let total = side
            .checked_pow(dim as u32)
            .filter(|&t| t <= 1 << 28)
            .ok_or(Error::Capacity { sites: (side as u128).pow(dim as u32), limit: 1 << 28 })?;
        let fft = FftPlanner::new().plan_fft_inverse(side);
        let cosines: Vec<f64> =
            (0..side).map(|k| (2.0 * std::f64::consts::PI * k as f64 / side as f64).cos()).collect();
        let mut spectrum = vec![0.0; total];
        let mut k = vec![0usize; dim];
        for (idx, s) in spectrum.iter_mut().enumerate() {
            let mut rem = idx;
            for a in (0..dim).rev() {
                k[a] = rem % side;
                rem /= side;
            }
            if idx == 0 {
                continue;
            }
            let phi: f64 = k.iter().map(|&ki| cosines[ki]).sum::<f64>() / dim as f64;
            *s = 1.0 / (1.0 - phi);
        }
        let n = total as f64;
        let amplitude = spectrum.iter().map(|l| (l / n).sqrt()).collect();
        let mut buf: Vec<Complex64> = spectrum.iter().map(|l| Complex64::new(l / n, 0.0)).collect();
        let mut sampler = Self { dim, side, amplitude, cov: Vec::new(), offset_var: 0.0, fft };
        sampler.transform(&mut buf);
        sampler.cov = buf.iter().map(|c| c.re).collect();
        Ok(sampler)
    }

    /// Torus of side `margin * radius` for windows of radius `radius`.
    pub fn for_window(dim: usize, radius: usize, margin: f64) -> Result<Self> {
        if margin < MIN_MARGIN {
            return Err(Error::arg(format!("margin {margin} below {MIN_MARGIN}")));
        }
        let side = ((margin * radius.max(1) as f64).ceil() as usize).max(8);
        Self::new(dim, side)
    }

    /// Add a global `N(0, G(0) - C_L(0))` shift so that `C(0)` matches the
    /// infinite-volume variance and `C(x) = G(x) + O(|x|^2 / L^d)`.
    pub fn compensated(mut self) -> Result<Self> {
        let g0 = crate::green::green_function(self.dim, &vec![0; self.dim])?;
        self.offset_var = (g0 - self.cov[0]).max(0.0);
        Ok(self)
    }

    /// Variance of the global shift (0 when uncompensated).
    pub fn offset_variance(&self) -> f64 {
        self.offset_var
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Covariance of the samples: `C_L(x)` plus the shift variance.
    pub fn covariance(&self, x: &[i64]) -> f64 {
        self.cov[self.wrap(x)] + self.offset_var
    }

    pub fn variance(&self) -> f64 {
        self.cov[0] + self.offset_var
    }

    fn wrap(&self, x: &[i64]) -> usize {
        let l = self.side as i64;
        x.iter().fold(0usize, |acc, &v| acc * self.side + v.rem_euclid(l) as usize)
    }

    fn check_window(&self, window: &LatticeBox) -> Result<()> {
        if window.dim() != self.dim {
            return Err(Error::InvalidDimension(window.dim()));
        }
        let radius = (0..self.dim).map(|a| window.side(a)).max().unwrap_or(1).div_ceil(2).max(1);
        if (self.side as f64) < MIN_MARGIN * radius as f64 {
            return Err(Error::arg(format!(
                "window of radius {radius} does not fit a side-{} torus with margin {MIN_MARGIN}",
                self.side
            )));
        }
        Ok(())
    }

    /// One periodic sample, row-major over the whole torus.
    pub fn sample_torus(&self, rng: &mut Rng) -> Vec<f64> {
        let mut buf: Vec<Complex64> = self
            .amplitude
            .iter()
            .map(|a| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(a * re, a * im)
            })
            .collect();
        self.transform(&mut buf);
        let shift = if self.offset_var > 0.0 {
            self.offset_var.sqrt() * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        buf.iter().map(|c| c.re + shift).collect()
    }

    /// A sample of `f` restricted to `window`, in the window's site order.
    pub fn sample_window(&self, window: &LatticeBox, rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let full = self.sample_torus(rng);
        Ok(self.restrict(&full, window))
    }

    pub fn restrict(&self, full: &[f64], window: &LatticeBox) -> Vec<f64> {
        let mut x = vec![0i64; self.dim];
        (0..window.len())
            .map(|i| {
                window.coords_into(i, &mut x);
                full[self.wrap(&x)]
            })
            .collect()
    }

    /// Covariance columns `C_L(x - p)` over `window` for each pin `p`.
    pub fn covariance_columns(&self, window: &LatticeBox, pins: &[Vec<i64>]) -> Vec<Vec<f64>> {
        let mut x = vec![0i64; self.dim];
        pins.iter()
            .map(|p| {
                (0..window.len())
                    .map(|i| {
                        window.coords_into(i, &mut x);
                        for (a, b) in x.iter_mut().zip(p) {
                            *a -= b;
                        }
                        self.covariance(&x)
                    })
                    .collect()
            })
            .collect()
    }

    fn transform(&self, buf: &mut [Complex64]) {
        fft_nd(self.fft.as_ref(), buf, self.dim, self.side);
    }
}
