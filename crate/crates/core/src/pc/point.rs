use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::{PcError, PC_EPS};

/// Amplitudes and phases of the Fourier components at one location.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierComponentSet {
    components: Vec<(f64, f64)>,
}

impl FourierComponentSet {
    /// `components` holds `(amplitude, phase)` pairs, phase in radians.
    pub fn new(components: Vec<(f64, f64)>) -> Result<Self, PcError> {
        if components.is_empty() {
            return Err(PcError::InvalidInput("need at least one component".into()));
        }
        for &(a, phi) in &components {
            if !a.is_finite() || a < 0.0 || !phi.is_finite() {
                return Err(PcError::InvalidInput(format!(
                    "component ({a}, {phi}) must have finite non-negative amplitude and finite phase"
                )));
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[(f64, f64)] {
        &self.components
    }
}

/// Phase congruency of a set of Fourier components.
///
/// The maximum over the reference phase of the amplitude-weighted cosine
/// agreement is attained at the phase of the resultant vector, which gives
/// `|sum A e^{i phi}| / (sum A + eps)`.
pub fn eval_pc_point(comps: &FourierComponentSet) -> f64 {
    let (resultant, total) = comps.components.iter().fold(
        (Complex64::new(0.0, 0.0), 0.0),
        |(z, s), &(a, phi)| (z + Complex64::from_polar(a, phi), s + a),
    );
    (resultant.norm() / (total + PC_EPS)).clamp(0.0, 1.0)
}

/// A harmonic series `f(t) = sum_n A_n sin(2 pi n f0 t + phase0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSignalSpec {
    pub f0: f64,
    pub amplitudes: Vec<f64>,
    pub phase0: f64,
}

impl SyntheticSignalSpec {
    pub fn new(f0: f64, amplitudes: Vec<f64>, phase0: f64) -> Result<Self, PcError> {
        if !(f0 > 0.0 && f0.is_finite()) {
            return Err(PcError::InvalidInput(format!("f0 must be positive, got {f0}")));
        }
        if amplitudes.is_empty() {
            return Err(PcError::InvalidInput("need at least one harmonic".into()));
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(PcError::InvalidInput("amplitudes must be finite".into()));
        }
        Ok(Self {
            f0,
            amplitudes,
            phase0,
        })
    }

    /// Odd-harmonic series `4/pi * sum sin(2 pi n f0 t)/n` over the first
    /// `n_components` harmonics: a truncated square wave.
    pub fn square_wave(f0: f64, n_components: usize) -> Result<Self, PcError> {
        let amplitudes = (1..=n_components)
            .map(|n| if n % 2 == 1 { 4.0 / (PI * n as f64) } else { 0.0 })
            .collect();
        Self::new(f0, amplitudes, 0.0)
    }

    pub fn n_components(&self) -> usize {
        self.amplitudes.len()
    }
}

pub fn synth_signal(spec: &SyntheticSignalSpec, t: &[f64]) -> Vec<f64> {
    t.iter()
        .map(|&t| {
            spec.amplitudes
                .iter()
                .enumerate()
                .map(|(i, &a)| a * (2.0 * PI * (i + 1) as f64 * spec.f0 * t + spec.phase0).sin())
                .sum()
        })
        .collect()
}
