use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::{LogGaborBank, PcError, PC_EPS};
use crate::fft::Fft2;
use crate::imaging::GrayImage;

/// Per-orientation phase congruency plus the moment maps derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PcMaps {
    width: usize,
    height: usize,
    orientations: Vec<f64>,
    per_orientation: Vec<Vec<f64>>,
    max_moment: Vec<f64>,
    min_moment: Vec<f64>,
}

impl PcMaps {
    /// Assembles maps from per-orientation PC arrays, computing the moments.
    pub fn from_orientations(
        width: usize,
        height: usize,
        orientations: Vec<f64>,
        per_orientation: Vec<Vec<f64>>,
    ) -> Result<Self, PcError> {
        if orientations.len() != per_orientation.len() || orientations.is_empty() {
            return Err(PcError::InvalidInput(
                "one PC map per orientation is required".into(),
            ));
        }
        if per_orientation.iter().any(|m| m.len() != width * height) {
            return Err(PcError::InvalidInput("PC map size mismatch".into()));
        }
        let (max_moment, min_moment) = moments(&orientations, &per_orientation, width * height);
        Ok(Self {
            width,
            height,
            orientations,
            per_orientation,
            max_moment,
            min_moment,
        })
    }

    /// Builds maps directly from moment arrays, e.g. for testing detection.
    pub fn from_moments(
        width: usize,
        height: usize,
        max_moment: Vec<f64>,
        min_moment: Vec<f64>,
    ) -> Result<Self, PcError> {
        if max_moment.len() != width * height || min_moment.len() != width * height {
            return Err(PcError::InvalidInput("moment map size mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            orientations: Vec::new(),
            per_orientation: Vec::new(),
            max_moment,
            min_moment,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn orientations(&self) -> &[f64] {
        &self.orientations
    }

    pub fn per_orientation(&self) -> &[Vec<f64>] {
        &self.per_orientation
    }

    /// Maximum moment `M`: large along edges.
    pub fn max_moment(&self) -> &[f64] {
        &self.max_moment
    }

    /// Minimum moment `m`: large at corners.
    pub fn min_moment(&self) -> &[f64] {
        &self.min_moment
    }
}

fn moments(angles: &[f64], pcs: &[Vec<f64>], n: usize) -> (Vec<f64>, Vec<f64>) {
    let trig: Vec<(f64, f64)> = angles.iter().map(|a| a.sin_cos()).collect();
    let mut big = vec![0.0; n];
    let mut small = vec![0.0; n];
    for i in 0..n {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for (pc, &(s, co)) in pcs.iter().zip(&trig) {
            let px = pc[i] * co;
            let py = pc[i] * s;
            a += px * px;
            b += 2.0 * px * py;
            c += py * py;
        }
        let root = (b * b + (a - c) * (a - c)).sqrt();
        big[i] = 0.5 * (c + a + root);
        small[i] = (0.5 * (c + a - root)).max(0.0);
    }
    (big, small)
}

/// Phase congruency maps of `img` using `bank`.
///
/// For each orientation the complex responses over all scales are summed;
/// PC is the magnitude of that sum (less the noise threshold when
/// `noise_comp` is set) divided by the summed response magnitudes. The
/// intensity offset is removed up front and every quantity scales with the
/// image contrast, so the maps are invariant to `a * img + b`.
pub fn compute_pc_maps(
    img: &GrayImage,
    bank: &LogGaborBank,
    noise_comp: bool,
) -> Result<PcMaps, PcError> {
    let (width, height) = (img.width(), img.height());
    if (width, height) != (bank.width(), bank.height()) {
        return Err(PcError::DimensionMismatch {
            image: (width, height),
            bank: (bank.width(), bank.height()),
        });
    }
    let params = bank.params();
    let n = width * height;
    let pixels = img.pixels();
    let constant = pixels.iter().all(|&v| v == pixels[0]);
    let mean = pixels.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = pixels
        .iter()
        .map(|&v| if constant { 0.0 } else { v - mean })
        .collect();

    let plan = Fft2::new(width, height);
    let spectrum = plan.forward_real(&centered);

    struct OrientationSums {
        energy: Vec<f64>,
        amplitude: Vec<f64>,
    }

    let per_orientation: Vec<OrientationSums> = (0..params.n_orientations)
        .into_par_iter()
        .map(|o| {
            let mut sum_resp = vec![Complex64::new(0.0, 0.0); n];
            let mut amplitude = vec![0.0; n];
            let mut noise_tau = 0.0;
            for s in 0..params.n_scales {
                let filter = bank.filter(s, o);
                let mut resp: Vec<Complex64> =
                    spectrum.iter().zip(filter).map(|(f, g)| f * g).collect();
                plan.inverse(&mut resp);
                for ((acc, amp), r) in sum_resp.iter_mut().zip(amplitude.iter_mut()).zip(&resp) {
                    *acc += r;
                    *amp += r.norm();
                }
                if noise_comp && s == 0 {
                    let mut mags: Vec<f64> = resp.iter().map(|r| r.norm()).collect();
                    noise_tau = median(&mut mags) / (4.0f64).ln().sqrt();
                }
            }
            let threshold = if noise_comp {
                noise_threshold(noise_tau, params.scale_mult, params.n_scales, params.noise_k)
            } else {
                0.0
            };
            let energy = sum_resp
                .iter()
                .map(|z| (z.norm() - threshold).max(0.0))
                .collect();
            OrientationSums { energy, amplitude }
        })
        .collect();

    let peak_amp = per_orientation
        .iter()
        .flat_map(|o| o.amplitude.iter())
        .cloned()
        .fold(0.0, f64::max);
    let floor = PC_EPS + params.amplitude_floor * peak_amp;

    let pcs: Vec<Vec<f64>> = per_orientation
        .into_iter()
        .map(|o| {
            o.energy
                .iter()
                .zip(&o.amplitude)
                .map(|(e, a)| (e / (a + floor)).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    let angles = (0..params.n_orientations).map(|o| params.orientation(o)).collect();
    PcMaps::from_orientations(width, height, angles, pcs)
}

/// Noise energy threshold from the Rayleigh parameter of the finest-scale
/// amplitude, accumulated over scales assuming a 1/f amplitude falloff.
fn noise_threshold(tau: f64, mult: f64, n_scales: usize, k: f64) -> f64 {
    let total_tau = tau * (1.0 - (1.0 / mult).powi(n_scales as i32)) / (1.0 - 1.0 / mult);
    let mean = total_tau * (std::f64::consts::PI / 2.0).sqrt();
    let sigma = total_tau * ((4.0 - std::f64::consts::PI) / 2.0).sqrt();
    mean + k * sigma
}

fn median(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}
