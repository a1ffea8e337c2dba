//! Synthetic torque traces for a shaken, partially filled container,
//! modeled as a single damped sloshing mode.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{sample_count, FillLevel, LiquidSpec, SignalMeta, SignalStage, TorqueSignal};

const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub zeta_min: f64,
    /// Damping gain per decade of (1 + viscosity).
    pub zeta_gain: f64,
    pub zeta_max: f64,
    /// Natural-frequency multipliers for one-third, half and two-thirds fill.
    pub fill_factors: [f64; 3],
    /// Initial torque amplitude, N·m.
    pub amplitude: f64,
    pub phase: f64,
    /// Noise std as a fraction of the amplitude.
    pub noise_rel: f64,
    /// Drift amplitude as a fraction of the amplitude.
    pub drift_rel: f64,
    pub drift_frequency_hz: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            zeta_min: 0.02,
            zeta_gain: 0.08,
            zeta_max: 0.95,
            fill_factors: [1.1, 1.0, 0.9],
            amplitude: 0.05,
            phase: 0.0,
            noise_rel: 0.05,
            drift_rel: 0.01,
            drift_frequency_hz: 0.1,
            duration_s: 10.0,
            sample_rate_hz: 100.0,
        }
    }
}

impl SimConfig {
    pub fn noise_free() -> Self {
        Self { noise_rel: 0.0, drift_rel: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidParams(msg));
        if !(0.0 < self.zeta_min && self.zeta_min <= self.zeta_max && self.zeta_max < 1.0) {
            return bad(format!("need 0 < zeta_min <= zeta_max < 1, got {} / {}", self.zeta_min, self.zeta_max));
        }
        if !(self.zeta_gain >= 0.0) {
            return bad(format!("zeta_gain {} must be >= 0", self.zeta_gain));
        }
        if self.fill_factors.iter().any(|c| !(*c > 0.0)) {
            return bad(format!("fill factors {:?} must be positive", self.fill_factors));
        }
        if !(self.amplitude > 0.0) {
            return bad(format!("amplitude {} must be positive", self.amplitude));
        }
        if !(self.noise_rel >= 0.0) || !(self.drift_rel >= 0.0) || !(self.drift_frequency_hz >= 0.0) {
            return bad("noise, drift and drift frequency must be >= 0".into());
        }
        if !(self.duration_s > 0.0) || !(self.sample_rate_hz > 0.0) {
            return bad("duration and sample rate must be positive".into());
        }
        Ok(())
    }

    pub fn fill_factor(&self, fill: FillLevel) -> f64 {
        self.fill_factors[fill.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloshParams {
    pub damping_ratio: f64,
    /// rad/s
    pub natural_frequency: f64,
    /// N·m
    pub initial_amplitude: f64,
    pub phase: f64,
    pub noise_sigma: f64,
    pub drift_amplitude: f64,
    pub drift_frequency_hz: f64,
}

impl SloshParams {
    pub fn new(damping_ratio: f64, natural_frequency: f64, initial_amplitude: f64) -> Result<Self, SimError> {
        let p = Self {
            damping_ratio,
            natural_frequency,
            initial_amplitude,
            phase: 0.0,
            noise_sigma: 0.0,
            drift_amplitude: 0.0,
            drift_frequency_hz: 0.1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.damping_ratio > 0.0 && self.damping_ratio < 1.0) {
            return Err(SimError::InvalidParams(format!("damping ratio {} not in (0, 1)", self.damping_ratio)));
        }
        if !(self.natural_frequency > 0.0) || !(self.initial_amplitude > 0.0) {
            return Err(SimError::InvalidParams("natural frequency and amplitude must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.drift_amplitude >= 0.0) {
            return Err(SimError::InvalidParams("noise and drift must be >= 0".into()));
        }
        Ok(())
    }

    /// Damped angular frequency ω_n·sqrt(1 − ζ²).
    pub fn damped_frequency(&self) -> f64 {
        self.natural_frequency * (1.0 - self.damping_ratio.powi(2)).sqrt()
    }

    /// Theoretical logarithmic decrement per period.
    pub fn log_decrement(&self) -> f64 {
        2.0 * PI * self.damping_ratio / (1.0 - self.damping_ratio.powi(2)).sqrt()
    }
}

pub fn damping_ratio_for(viscosity: f64, config: &SimConfig) -> f64 {
    let raw = config.zeta_min + config.zeta_gain * (1.0 + viscosity.max(0.0)).log10();
    raw.clamp(config.zeta_min, config.zeta_max)
}

pub fn params_from(liquid: &LiquidSpec, fill: FillLevel, config: &SimConfig) -> SloshParams {
    let natural_frequency =
        config.fill_factor(fill) * (GRAVITY / liquid.container.effective_length).sqrt();
    SloshParams {
        damping_ratio: damping_ratio_for(liquid.nominal_viscosity, config),
        natural_frequency,
        initial_amplitude: config.amplitude,
        phase: config.phase,
        noise_sigma: config.noise_rel * config.amplitude,
        drift_amplitude: config.drift_rel * config.amplitude,
        drift_frequency_hz: config.drift_frequency_hz,
    }
}

/// Noise-free damped oscillation value at time `t`.
pub fn clean_sample(params: &SloshParams, t: f64) -> f64 {
    let decay = (-params.damping_ratio * params.natural_frequency * t).exp();
    params.initial_amplitude * decay * (params.damped_frequency() * t + params.phase).cos()
}

pub fn simulate_shake(
    params: &SloshParams,
    duration: f64,
    sample_rate: f64,
    seed: u64,
    meta: SignalMeta,
) -> Result<TorqueSignal, SimError> {
    params.validate()?;
    if !(duration > 0.0) || !(sample_rate > 0.0) {
        return Err(SimError::InvalidParams("duration and sample rate must be positive".into()));
    }
    let n = sample_count(sample_rate, duration);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (params.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, params.noise_sigma).expect("sigma is finite and positive"));
    let drift_w = 2.0 * PI * params.drift_frequency_hz;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            let mut x = clean_sample(params, t);
            if let Some(dist) = &noise {
                x += dist.sample(&mut rng);
            }
            if params.drift_amplitude > 0.0 {
                x += params.drift_amplitude * (drift_w * t).sin();
            }
            x
        })
        .collect();
    let meta = SignalMeta { seed: Some(seed), stage: SignalStage::Raw, ..meta };
    TorqueSignal::new(samples, sample_rate, meta).map_err(|e| SimError::InvalidParams(e.to_string()))
}

/// Simulates the configured shake for one registry liquid.
pub fn simulate_liquid(
    liquid: &LiquidSpec,
    fill: FillLevel,
    config: &SimConfig,
    seed: u64,
) -> Result<TorqueSignal, SimError> {
    let params = params_from(liquid, fill, config);
    let meta = SignalMeta { liquid_id: Some(liquid.id), fill_level: Some(fill), seed: Some(seed), stage: SignalStage::Raw };
    simulate_shake(&params, config.duration_s, config.sample_rate_hz, seed, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::bundled_registry;
    use proptest::prelude::*;

    fn blank_meta() -> SignalMeta {
        SignalMeta { liquid_id: None, fill_level: None, seed: None, stage: SignalStage::Raw }
    }

    #[test]
    fn damping_examples() {
        let cfg = SimConfig::default();
        let reg = bundled_registry();
        let water = reg.iter().find(|l| l.name == "water").unwrap();
        let honey = reg.iter().find(|l| l.name == "honey").unwrap();
        let zw = params_from(water, FillLevel::Half, &cfg).damping_ratio;
        let zh = params_from(honey, FillLevel::Half, &cfg).damping_ratio;
        assert!((zw - (0.02 + 0.08 * 2f64.log10())).abs() < 1e-12);
        assert!((zw - 0.0441).abs() < 1e-4);
        assert!((zh - (0.02 + 0.08 * 10001f64.log10())).abs() < 1e-12);
        assert!((zh - 0.3401).abs() < 1e-4);
        assert!((damping_ratio_for(1e-12, &cfg) - cfg.zeta_min).abs() < 1e-9);
        assert_eq!(damping_ratio_for(0.0, &cfg), cfg.zeta_min);
        assert_eq!(damping_ratio_for(1e30, &cfg), cfg.zeta_max);
    }

    #[test]
    fn natural_frequency_follows_fill_and_length() {
        let cfg = SimConfig::default();
        let liquid = &bundled_registry()[1];
        let half = params_from(liquid, FillLevel::Half, &cfg).natural_frequency;
        assert!((half - (9.81 / liquid.container.effective_length).sqrt()).abs() < 1e-12);
        let third = params_from(liquid, FillLevel::OneThird, &cfg).natural_frequency;
        let two = params_from(liquid, FillLevel::TwoThirds, &cfg).natural_frequency;
        assert!((third / half - 1.1).abs() < 1e-12 && (two / half - 0.9).abs() < 1e-12);
    }

    #[test]
    fn sample_at_one_second_matches_closed_form() {
        let p = SloshParams::new(0.1, 2.0 * PI, 1.0).unwrap();
        let sig = simulate_shake(&p, 10.0, 100.0, 7, blank_meta()).unwrap();
        assert_eq!(sig.len(), 1000);
        let expected = (-0.2 * PI).exp() * (2.0 * PI * 0.99f64.sqrt()).cos();
        assert!((sig.samples()[100] - expected).abs() < 1e-12);
        assert!((expected - 0.5335 * 0.9995).abs() < 1e-3);
    }

    #[test]
    fn same_seed_same_samples() {
        let cfg = SimConfig::default();
        let honey = &bundled_registry()[8];
        let a = simulate_liquid(honey, FillLevel::TwoThirds, &cfg, 42).unwrap();
        let b = simulate_liquid(honey, FillLevel::TwoThirds, &cfg, 42).unwrap();
        let c = simulate_liquid(honey, FillLevel::TwoThirds, &cfg, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples(), c.samples());
        assert_eq!(a.meta.liquid_id, Some(8));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SloshParams::new(0.0, 1.0, 1.0).is_err());
        assert!(SloshParams::new(1.0, 1.0, 1.0).is_err());
        assert!(SloshParams::new(0.5, -1.0, 1.0).is_err());
        assert!(SloshParams::new(0.5, 1.0, 0.0).is_err());
        let p = SloshParams::new(0.1, 1.0, 1.0).unwrap();
        assert!(simulate_shake(&p, 0.0, 100.0, 0, blank_meta()).is_err());
    }

    /// Local maxima of the clean signal, located by brute-force sample scan.
    fn local_maxima(xs: &[f64]) -> Vec<(usize, f64)> {
        (1..xs.len() - 1)
            .filter(|&i| xs[i] > xs[i - 1] && xs[i] >= xs[i + 1])
            .map(|i| (i, xs[i]))
            .collect()
    }

    proptest! {
        #[test]
        fn noise_free_peaks_decay_by_decrement(zeta in 0.02f64..0.25) {
            let p = SloshParams::new(zeta, 2.0 * PI, 1.0).unwrap();
            let sig = simulate_shake(&p, 10.0, 1000.0, 0, blank_meta()).unwrap();
            let peaks = local_maxima(sig.samples());
            prop_assert!(peaks.len() >= 2);
            for w in peaks.windows(2) {
                // strictly decreasing magnitudes
                prop_assert!(w[1].1 < w[0].1);
            }
            let ratio = peaks[0].1 / peaks[1].1;
            let expected = p.log_decrement().exp();
            prop_assert!((ratio / expected - 1.0).abs() < 0.02, "ratio {} expected {}", ratio, expected);
        }

        #[test]
        fn simulation_is_pure(seed in any::<u64>(), zeta in 0.05f64..0.9) {
            let mut p = SloshParams::new(zeta, 7.0, 0.05).unwrap();
            p.noise_sigma = 0.0025;
            p.drift_amplitude = 0.0005;
            let a = simulate_shake(&p, 2.0, 100.0, seed, blank_meta()).unwrap();
            let b = simulate_shake(&p, 2.0, 100.0, seed, blank_meta()).unwrap();
            prop_assert_eq!(a.samples(), b.samples());
        }
    }
}
