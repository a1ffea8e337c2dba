//! Signal conditioning: 5th-order 2 Hz Butterworth low-pass (zero phase),
//! z-score standardization, and the damping features the heuristic
//! backend reads off the standardized trace.

mod butterworth;
pub mod io;
mod peaks;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use butterworth::{Biquad, Butterworth};
pub use peaks::{Peak, PeakList};

use crate::domain::{mean, population_std, SignalStage, TorqueSignal};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("cutoff {cutoff_hz} Hz is not below the Nyquist frequency of {sample_rate_hz} Hz sampling")]
    CutoffAboveNyquist { cutoff_hz: f64, sample_rate_hz: f64 },
    #[error("expected a {expected} signal, got {actual}")]
    WrongStage { expected: SignalStage, actual: SignalStage },
    #[error("signal variance is too small to standardize (std = {0:e})")]
    DegenerateSignal(f64),
    #[error("need at least three peaks with a decaying same-sign pair, found {0} peaks")]
    InsufficientPeaks(usize),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error("signal file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub cutoff_hz: f64,
    pub order: usize,
    /// Minimum peak prominence in standardized units.
    pub prominence: f64,
    /// The heuristic backend raises the prominence floor to this multiple
    /// of the tail noise level.
    pub noise_floor_factor: f64,
    /// Trailing fraction of the trace used to estimate the noise level.
    pub tail_fraction: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self { cutoff_hz: 2.0, order: 5, prominence: 0.1, noise_floor_factor: 8.0, tail_fraction: 0.2 }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.order == 0 || self.order > 12 {
            return Err(DspError::InvalidConfig(format!("order {} not in 1..=12", self.order)));
        }
        if !(self.cutoff_hz > 0.0) {
            return Err(DspError::InvalidConfig(format!("cutoff {} Hz must be positive", self.cutoff_hz)));
        }
        if !(self.prominence >= 0.0) || !(self.noise_floor_factor >= 0.0) {
            return Err(DspError::InvalidConfig("prominence and noise floor factor must be >= 0".into()));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(DspError::InvalidConfig(format!("tail fraction {} not in (0, 1]", self.tail_fraction)));
        }
        Ok(())
    }
}

fn expect_stage(signal: &TorqueSignal, expected: SignalStage) -> Result<(), DspError> {
    if signal.stage() != expected {
        return Err(DspError::WrongStage { expected, actual: signal.stage() });
    }
    Ok(())
}

pub fn design_lowpass(config: &DspConfig, sample_rate_hz: f64) -> Result<Butterworth, DspError> {
    config.validate()?;
    if config.cutoff_hz >= sample_rate_hz / 2.0 {
        return Err(DspError::CutoffAboveNyquist { cutoff_hz: config.cutoff_hz, sample_rate_hz });
    }
    Ok(Butterworth::lowpass(config.order, config.cutoff_hz, sample_rate_hz))
}

pub fn lowpass(signal: &TorqueSignal, config: &DspConfig) -> Result<TorqueSignal, DspError> {
    expect_stage(signal, SignalStage::Raw)?;
    let filter = design_lowpass(config, signal.sample_rate())?;
    Ok(signal.with_samples(filter.filtfilt(signal.samples()), SignalStage::Filtered))
}

pub fn zscore(xs: &[f64]) -> Result<Vec<f64>, DspError> {
    let std = population_std(xs);
    if !(std > 1e-12) {
        return Err(DspError::DegenerateSignal(std));
    }
    let m = mean(xs);
    let mut out: Vec<f64> = xs.iter().map(|x| (x - m) / std).collect();
    // second pass removes the rounding residue of the first
    let m2 = mean(&out);
    let s2 = population_std(&out);
    out.iter_mut().for_each(|x| *x = (*x - m2) / s2);
    Ok(out)
}

pub fn standardize(signal: &TorqueSignal) -> Result<TorqueSignal, DspError> {
    expect_stage(signal, SignalStage::Filtered)?;
    Ok(signal.with_samples(zscore(signal.samples())?, SignalStage::Standardized))
}

/// Low-pass then standardize.
pub fn condition(raw: &TorqueSignal, config: &DspConfig) -> Result<TorqueSignal, DspError> {
    standardize(&lowpass(raw, config)?)
}

pub fn find_peaks(signal: &TorqueSignal, min_prominence: f64) -> Result<PeakList, DspError> {
    expect_stage(signal, SignalStage::Standardized)?;
    let xs = signal.samples();
    let rate = signal.sample_rate();
    let mut peaks = peaks::signed_peaks(xs, rate, min_prominence, 1);
    peaks.extend(peaks::signed_peaks(xs, rate, min_prominence, -1));
    peaks.sort_by_key(|p| p.index);
    Ok(PeakList { peaks })
}

/// Mean log ratio of consecutive same-sign peak prominences. Prominence
/// (rather than raw height) cancels the baseline offset left by
/// standardizing a decaying trace. Non-decaying pairs are skipped.
pub fn log_decrement(peaks: &PeakList) -> Result<f64, DspError> {
    let mut ratios = Vec::new();
    for sign in [1i8, -1] {
        let same: Vec<f64> = peaks.with_sign(sign).map(|p| p.prominence).collect();
        ratios.extend(same.windows(2).filter(|w| w[1] < w[0] && w[1] > 0.0).map(|w| (w[0] / w[1]).ln()));
    }
    if peaks.len() < 3 || ratios.is_empty() {
        return Err(DspError::InsufficientPeaks(peaks.len()));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Population std of the trailing `tail_fraction` of the trace.
pub fn tail_noise_level(signal: &TorqueSignal, tail_fraction: f64) -> f64 {
    let xs = signal.samples();
    let take = ((xs.len() as f64 * tail_fraction).round() as usize).clamp(1.min(xs.len()), xs.len());
    population_std(&xs[xs.len() - take..])
}

/// Damping feature used by the heuristic backend: the log decrement with
/// peaks below the tail noise floor discarded. `Ok(None)` means the trace
/// settled too fast to leave a measurable peak train.
pub fn damping_feature(signal: &TorqueSignal, config: &DspConfig) -> Result<Option<f64>, DspError> {
    expect_stage(signal, SignalStage::Standardized)?;
    let floor = config.noise_floor_factor * tail_noise_level(signal, config.tail_fraction);
    let peaks = find_peaks(signal, config.prominence.max(floor))?;
    match log_decrement(&peaks) {
        Ok(delta) => Ok(Some(delta)),
        Err(DspError::InsufficientPeaks(_)) => Ok(None),
        Err(e) => Err(e),
    }
}
