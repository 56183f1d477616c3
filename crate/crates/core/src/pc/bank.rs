use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::PcError;
use crate::fft::bin_frequency;

/// Normalized frequency radius at which the anti-corner low-pass filter
/// falls to one half, and its Butterworth order.
const LOWPASS_CUTOFF: f64 = 0.45;
const LOWPASS_ORDER: i32 = 15;

/// Log-Gabor filter bank and phase-congruency settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankParams {
    pub n_scales: usize,
    pub n_orientations: usize,
    /// Wavelength of the finest scale, pixels.
    pub min_wavelength: f64,
    /// Ratio between successive wavelengths.
    pub scale_mult: f64,
    /// Log-Gabor bandwidth: ratio of the Gaussian's deviation to the
    /// center frequency on the log axis.
    pub sigma_ratio: f64,
    /// Noise threshold multiplier (mean + k sigma of the estimated noise
    /// energy) used when noise compensation is enabled.
    pub noise_k: f64,
    /// Amplitude floor relative to the largest summed amplitude in the
    /// input. Locations whose filter energy is negligible next to the
    /// strongest structure get a PC near zero instead of an unstable ratio.
    pub amplitude_floor: f64,
}

impl Default for BankParams {
    fn default() -> Self {
        Self {
            n_scales: 4,
            n_orientations: 6,
            min_wavelength: 3.0,
            scale_mult: 2.1,
            sigma_ratio: 0.55,
            noise_k: 2.0,
            amplitude_floor: 0.01,
        }
    }
}

impl BankParams {
    pub fn validate(&self) -> Result<(), PcError> {
        let bad = |m: String| Err(PcError::InvalidBankParams(m));
        if self.n_scales < 2 {
            return bad(format!("n_scales must be >= 2, got {}", self.n_scales));
        }
        if self.n_orientations < 3 {
            return bad(format!(
                "n_orientations must be >= 3, got {}",
                self.n_orientations
            ));
        }
        if !(self.min_wavelength >= 2.0 && self.min_wavelength.is_finite()) {
            return bad(format!(
                "min_wavelength must be >= 2 (Nyquist), got {}",
                self.min_wavelength
            ));
        }
        if !(self.scale_mult > 1.0 && self.scale_mult.is_finite()) {
            return bad(format!("scale_mult must be > 1, got {}", self.scale_mult));
        }
        if !(self.sigma_ratio > 0.0 && self.sigma_ratio < 1.0) {
            return bad(format!(
                "sigma_ratio must lie in (0, 1), got {}",
                self.sigma_ratio
            ));
        }
        if !(self.noise_k >= 0.0 && self.noise_k.is_finite()) {
            return bad(format!("noise_k must be >= 0, got {}", self.noise_k));
        }
        if !(self.amplitude_floor >= 0.0 && self.amplitude_floor < 1.0) {
            return bad(format!(
                "amplitude_floor must lie in [0, 1), got {}",
                self.amplitude_floor
            ));
        }
        Ok(())
    }

    pub fn wavelength(&self, scale: usize) -> f64 {
        self.min_wavelength * self.scale_mult.powi(scale as i32)
    }

    /// Orientation angle of filter `o`, radians in `[0, pi)`.
    pub fn orientation(&self, o: usize) -> f64 {
        o as f64 * PI / self.n_orientations as f64
    }

    /// Radial log-Gabor gain at normalized frequency `radius` for `scale`,
    /// without the low-pass term. Zero at DC.
    pub(crate) fn radial_gain(&self, radius: f64, scale: usize) -> f64 {
        if radius <= 0.0 {
            return 0.0;
        }
        let fo = 1.0 / self.wavelength(scale);
        let log_sigma = self.sigma_ratio.ln();
        (-(radius / fo).ln().powi(2) / (2.0 * log_sigma * log_sigma)).exp()
    }
}

fn lowpass(radius: f64) -> f64 {
    1.0 / (1.0 + (radius / LOWPASS_CUTOFF).powi(2 * LOWPASS_ORDER))
}

/// Frequency-domain gains for every (scale, orientation), laid out in FFT
/// bin order (DC at index 0).
#[derive(Debug, Clone)]
pub struct LogGaborBank {
    params: BankParams,
    width: usize,
    height: usize,
    /// `filters[scale * n_orientations + orientation]`
    filters: Vec<Vec<f64>>,
}

impl LogGaborBank {
    pub fn build(params: &BankParams, width: usize, height: usize) -> Result<Self, PcError> {
        params.validate()?;
        if width < 32 || height < 32 {
            return Err(PcError::InvalidBankParams(format!(
                "raster must be at least 32x32, got {width}x{height}"
            )));
        }
        let n = width * height;
        let mut radius = vec![0.0; n];
        let mut theta = vec![0.0; n];
        for y in 0..height {
            let fy = bin_frequency(y, height);
            for x in 0..width {
                let fx = bin_frequency(x, width);
                radius[y * width + x] = (fx * fx + fy * fy).sqrt();
                theta[y * width + x] = fy.atan2(fx);
            }
        }

        let radial: Vec<Vec<f64>> = (0..params.n_scales)
            .map(|s| {
                radius
                    .iter()
                    .map(|&r| params.radial_gain(r, s) * lowpass(r))
                    .collect()
            })
            .collect();

        // Raised-cosine angular spread; each filter covers one half-plane so
        // the inverse transform yields an even (real) / odd (imaginary) pair.
        let half_width = params.n_orientations as f64 / 2.0;
        let spreads: Vec<Vec<f64>> = (0..params.n_orientations)
            .map(|o| {
                let angle = params.orientation(o);
                let (sa, ca) = angle.sin_cos();
                theta
                    .iter()
                    .map(|&t| {
                        let (st, ct) = t.sin_cos();
                        let ds = st * ca - ct * sa;
                        let dc = ct * ca + st * sa;
                        let dtheta = (ds.atan2(dc).abs() * half_width).min(PI);
                        (dtheta.cos() + 1.0) / 2.0
                    })
                    .collect()
            })
            .collect();

        let mut filters = Vec::with_capacity(params.n_scales * params.n_orientations);
        for radial_s in &radial {
            for spread_o in &spreads {
                let mut f: Vec<f64> = radial_s.iter().zip(spread_o).map(|(r, a)| r * a).collect();
                f[0] = 0.0;
                filters.push(f);
            }
        }
        Ok(Self {
            params: params.clone(),
            width,
            height,
            filters,
        })
    }

    pub fn params(&self) -> &BankParams {
        &self.params
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn filter(&self, scale: usize, orientation: usize) -> &[f64] {
        &self.filters[scale * self.params.n_orientations + orientation]
    }
}
