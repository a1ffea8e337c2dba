use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Seconds from the first sample.
    pub time: f64,
    pub index: usize,
    /// Magnitude of the extremum.
    pub amplitude: f64,
    /// +1 for maxima, -1 for minima.
    pub sign: i8,
    pub prominence: f64,
}

/// Extrema ordered by time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeakList {
    pub peaks: Vec<Peak>,
}

impl PeakList {
    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn with_sign(&self, sign: i8) -> impl Iterator<Item = &Peak> {
        self.peaks.iter().filter(move |p| p.sign == sign)
    }
}

/// Interior local maxima, plateaus reduced to their middle sample.
pub(crate) fn local_maxima(xs: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = xs.len();
    let mut i = 1;
    while i + 1 < n {
        if xs[i - 1] < xs[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && xs[ahead] == xs[i] {
                ahead += 1;
            }
            if xs[ahead] < xs[i] {
                out.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Height of a peak above the higher of its two bases, where each base is
/// the lowest point reached before the signal climbs above the peak (or
/// the edge is hit).
pub(crate) fn prominence(xs: &[f64], peak: usize) -> f64 {
    let height = xs[peak];
    let mut left_min = height;
    for &x in xs[..peak].iter().rev() {
        if x > height {
            break;
        }
        left_min = left_min.min(x);
    }
    let mut right_min = height;
    for &x in &xs[peak + 1..] {
        if x > height {
            break;
        }
        right_min = right_min.min(x);
    }
    height - left_min.max(right_min)
}

pub(crate) fn signed_peaks(xs: &[f64], sample_rate: f64, min_prominence: f64, sign: i8) -> Vec<Peak> {
    let s = f64::from(sign);
    let flipped: Vec<f64> = xs.iter().map(|x| s * x).collect();
    local_maxima(&flipped)
        .into_iter()
        .filter_map(|i| {
            let prom = prominence(&flipped, i);
            (prom >= min_prominence && prom > 0.0).then(|| Peak {
                time: i as f64 / sample_rate,
                index: i,
                amplitude: xs[i].abs(),
                sign,
                prominence: prom,
            })
        })
        .collect()
}
