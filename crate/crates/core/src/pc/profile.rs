use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{BankParams, PcError, PC_EPS};
use crate::fft::bin_frequency;

pub const MIN_PROFILE_LEN: usize = 64;

/// Phase congruency of every sample of a 1-D signal.
///
/// The signal is mirror-extended to avoid a wrap-around discontinuity,
/// filtered with one-sided (analytic) log-Gabor filters at each scale, and
/// the quadrature energy summed over scales is divided by the summed
/// amplitudes. Orientation settings in `params` are ignored.
pub fn pc_profile_1d(signal: &[f64], params: &BankParams) -> Result<Vec<f64>, PcError> {
    let len = signal.len();
    if len < MIN_PROFILE_LEN {
        return Err(PcError::SignalTooShort {
            len,
            min: MIN_PROFILE_LEN,
        });
    }
    params.validate()?;
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(PcError::InvalidInput("signal contains non-finite samples".into()));
    }

    let n = 2 * len;
    let mean = signal.iter().sum::<f64>() / len as f64;
    let constant = signal.iter().all(|&v| v == signal[0]);
    let mut buf: Vec<Complex64> = signal
        .iter()
        .chain(signal.iter().rev())
        .map(|&v| Complex64::new(if constant { 0.0 } else { v - mean }, 0.0))
        .collect();

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    fwd.process(&mut buf);

    let mut sum_even = vec![0.0; len];
    let mut sum_odd = vec![0.0; len];
    let mut sum_amp = vec![0.0; len];
    let mut work = vec![Complex64::new(0.0, 0.0); n];
    for scale in 0..params.n_scales {
        for (k, w) in work.iter_mut().enumerate() {
            let f = bin_frequency(k, n);
            let gain = if f > 0.0 { params.radial_gain(f, scale) } else { 0.0 };
            *w = buf[k] * gain;
        }
        inv.process(&mut work);
        for i in 0..len {
            let r = work[i] / n as f64;
            sum_even[i] += r.re;
            sum_odd[i] += r.im;
            sum_amp[i] += r.norm();
        }
    }

    let floor = PC_EPS + params.amplitude_floor * sum_amp.iter().cloned().fold(0.0, f64::max);
    Ok((0..len)
        .map(|i| {
            let energy = (sum_even[i] * sum_even[i] + sum_odd[i] * sum_odd[i]).sqrt();
            (energy / (sum_amp[i] + floor)).clamp(0.0, 1.0)
        })
        .collect())
}
