//! Digital Butterworth low-pass design (bilinear transform with cutoff
//! pre-warping) realized as cascaded second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;

/// One direct-form-II-transposed section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[0] * z_inv + self.a[1] * z2)
    }

    /// Delay-line state that makes a constant input `u` produce a constant
    /// output from the first sample.
    fn steady_state(&self, u: f64) -> [f64; 2] {
        let y = self.dc_gain() * u;
        let z2 = self.b[2] * u - self.a[1] * y;
        let z1 = self.b[1] * u - self.a[0] * y + z2;
        [z1, z2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    pub sections: Vec<Biquad>,
}

impl Butterworth {
    /// Caller guarantees `0 < cutoff < sample_rate / 2` and `order >= 1`.
    pub fn lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        let fs2 = 2.0 * sample_rate_hz;
        let warped = fs2 * (PI * cutoff_hz / sample_rate_hz).tan();
        let bilinear = |s: Complex64| (Complex64::new(1.0, 0.0) + s / fs2) / (Complex64::new(1.0, 0.0) - s / fs2);

        let mut sections = Vec::with_capacity(order.div_ceil(2));
        // upper-half-plane poles of the analog prototype, one per conjugate pair
        for k in 0..order / 2 {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let pole = bilinear(Complex64::from_polar(warped, theta));
            let a1 = -2.0 * pole.re;
            let a2 = pole.norm_sqr();
            let gain = (1.0 + a1 + a2) / 4.0;
            sections.push(Biquad { b: [gain, 2.0 * gain, gain], a: [a1, a2] });
        }
        if order % 2 == 1 {
            let pole = bilinear(Complex64::new(-warped, 0.0)).re;
            let gain = (1.0 - pole) / 2.0;
            sections.push(Biquad { b: [gain, gain, 0.0], a: [-pole, 0.0] });
        }
        Self { order, cutoff_hz, sample_rate_hz, sections }
    }

    /// Single-pass magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm()
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.magnitude(freq_hz).log10()
    }

    /// Causal pass with delay lines initialized to the steady state of the
    /// first sample.
    pub fn filter_causal(&self, input: &[f64]) -> Vec<f64> {
        let mut data = input.to_vec();
        let Some(&first) = input.first() else {
            return data;
        };
        let mut level = first;
        for section in &self.sections {
            let mut state = section.steady_state(level);
            level *= section.dc_gain();
            for x in data.iter_mut() {
                let y = section.b[0] * *x + state[0];
                state[0] = section.b[1] * *x - section.a[0] * y + state[1];
                state[1] = section.b[2] * *x - section.a[1] * y;
                *x = y;
            }
        }
        data
    }

    /// Samples of odd-reflection padding applied at each edge before the
    /// zero-phase pass.
    pub fn warmup_len(&self) -> usize {
        (3.0 * self.sample_rate_hz / self.cutoff_hz).ceil() as usize
    }

    /// Forward-backward (zero-phase) filtering with odd reflection padding.
    /// Output length equals input length.
    pub fn filtfilt(&self, input: &[f64]) -> Vec<f64> {
        let n = input.len();
        if n < 2 {
            return input.to_vec();
        }
        let pad = self.warmup_len().min(n - 1);
        let (first, last) = (input[0], input[n - 1]);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - input[i]));
        ext.extend_from_slice(input);
        ext.extend((1..=pad).map(|i| 2.0 * last - input[n - 1 - i]));

        let mut y = self.filter_causal(&ext);
        y.reverse();
        let mut y = self.filter_causal(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}
