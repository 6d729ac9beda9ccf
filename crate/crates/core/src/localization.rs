//! Compatibility density and peak-window localization.
//!
//! The density at position `i` is the sum of compatibility scores over the
//! window `[i - w/2, i + w/2]` clamped to the valid index range. Its strict
//! local maxima mark where the labeled activity most likely happens, and each
//! peak is expanded back to a window of raw samples.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Half-open `[start, end)` interval of raw sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if end <= start {
            return invalid("Interval", "end must exceed start");
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn center(&self) -> f64 {
        (self.start + self.end) as f64 / 2.0
    }

    pub fn contains(&self, x: f64) -> bool {
        self.start as f64 <= x && x < self.end as f64
    }

    pub fn intersection(&self, other: &Interval) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }

    pub fn iou(&self, other: &Interval) -> f64 {
        let inter = self.intersection(other);
        let union = self.len() + other.len() - inter;
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub values: Vec<f64>,
    pub window_w: usize,
    pub level: usize,
    pub stride_to_raw: usize,
}

impl DensityCurve {
    pub fn from_scores(scores: &[f64], w: usize, level: usize, stride_to_raw: usize) -> Result<Self> {
        if stride_to_raw == 0 {
            return invalid("density", "stride_to_raw must be at least 1");
        }
        Ok(Self {
            values: density(scores, w)?,
            window_w: w,
            level,
            stride_to_raw,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Clamped sliding-window sum with maximum width `w + 1` centred on each
/// position. `w` must be even, positive and below `2 * scores.len()`.
pub fn density(scores: &[f64], w: usize) -> Result<Vec<f64>> {
    let n = scores.len();
    if n == 0 {
        return invalid("density", "no scores");
    }
    if w == 0 || w % 2 != 0 {
        return invalid("density", "window width must be positive and even");
    }
    if w >= 2 * n {
        return invalid("density", "window width must be less than twice the score count");
    }
    let half = w / 2;
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            scores[lo..=hi].iter().sum()
        })
        .collect())
}

/// Strict local maxima. Interior points must beat both neighbours,
/// endpoints their single neighbour; plateaus produce nothing.
pub fn find_peaks(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    if n < 2 {
        return Vec::new();
    }
    (0..n)
        .filter(|&i| {
            let left = i == 0 || values[i] > values[i - 1];
            let right = i == n - 1 || values[i] > values[i + 1];
            left && right
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    /// Peak positions in feature coordinates.
    pub peaks: Vec<usize>,
    /// Raw-sample windows, ordered by start.
    pub windows: Vec<Interval>,
    /// Density value at each peak.
    pub scores: Vec<f64>,
}

/// Maps feature-coordinate peaks to raw windows of width
/// `w * stride_to_raw`, clamped to `[0, sequence_len)`.
pub fn to_raw_windows(peaks: &[usize], curve: &DensityCurve, sequence_len: usize) -> LocalizationResult {
    let stride = curve.stride_to_raw.max(1);
    let half = curve.window_w / 2 * stride;
    let mut entries: Vec<(Interval, usize, f64)> = peaks
        .iter()
        .filter_map(|&p| {
            let center = p * stride;
            let start = center.saturating_sub(half).min(sequence_len);
            let end = (center + half).min(sequence_len);
            (end > start).then(|| (Interval { start, end }, p, curve.values[p]))
        })
        .collect();
    entries.sort_by_key(|e| (e.0.start, e.1));
    LocalizationResult {
        peaks: entries.iter().map(|e| e.1).collect(),
        windows: entries.iter().map(|e| e.0).collect(),
        scores: entries.iter().map(|e| e.2).collect(),
    }
}

/// Density, peaks and raw windows in one call.
pub fn localize(
    scores: &[f64],
    w: usize,
    level: usize,
    stride_to_raw: usize,
    sequence_len: usize,
) -> Result<(DensityCurve, LocalizationResult)> {
    let curve = DensityCurve::from_scores(scores, w, level, stride_to_raw)?;
    let peaks = find_peaks(&curve.values);
    let result = to_raw_windows(&peaks, &curve, sequence_len);
    Ok((curve, result))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMetrics {
    /// Fraction of predicted windows whose center lies in a ground-truth segment.
    pub hit_rate: f64,
    /// Mean over predictions of the best IoU against any ground-truth segment.
    pub mean_best_iou: f64,
}

pub fn localization_metrics(windows: &[Interval], ground_truth: &[Interval]) -> Result<LocalizationMetrics> {
    if windows.iter().chain(ground_truth).any(Interval::is_empty) {
        return invalid("localization_metrics", "interval end must exceed start");
    }
    if windows.is_empty() {
        return Ok(LocalizationMetrics {
            hit_rate: 0.0,
            mean_best_iou: 0.0,
        });
    }
    let hits = windows
        .iter()
        .filter(|w| ground_truth.iter().any(|g| g.contains(w.center())))
        .count();
    let iou_total: f64 = windows
        .iter()
        .map(|w| ground_truth.iter().map(|g| w.iou(g)).fold(0.0, f64::max))
        .sum();
    Ok(LocalizationMetrics {
        hit_rate: hits as f64 / windows.len() as f64,
        mean_best_iou: iou_total / windows.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn density_of_ones() {
        assert_eq!(density(&[1.0; 8], 4).unwrap(), [3.0, 4.0, 5.0, 5.0, 5.0, 5.0, 4.0, 3.0]);
        assert_eq!(density(&[0.0; 8], 4).unwrap(), [0.0; 8]);
    }

    #[test]
    fn density_is_linear() {
        let c = [0.5, -1.0, 2.0, 0.25, 3.0, -0.5];
        let scaled: Vec<f64> = c.iter().map(|v| v * 4.0).collect();
        let d = density(&c, 2).unwrap();
        let ds = density(&scaled, 2).unwrap();
        for (a, b) in d.iter().zip(&ds) {
            assert_eq!(a * 4.0, *b);
        }
    }

    #[test]
    fn density_rejects_bad_windows() {
        assert!(density(&[1.0; 8], 3).is_err());
        assert!(density(&[1.0; 8], 0).is_err());
        assert!(density(&[1.0; 8], 16).is_err());
        assert!(density(&[], 2).is_err());
    }

    #[test]
    fn peak_rules() {
        assert_eq!(find_peaks(&[1.0, 3.0, 2.0, 5.0, 4.0]), [1, 3]);
        assert_eq!(find_peaks(&[0.0, 1.0, 2.0, 3.0]), [3]);
        assert_eq!(find_peaks(&[3.0, 2.0, 1.0]), [0]);
        assert!(find_peaks(&[2.0; 6]).is_empty());
        assert!(find_peaks(&[1.0, 2.0, 2.0, 1.0]).is_empty());
    }

    #[test]
    fn raw_window_arithmetic_and_clamping() {
        let curve = DensityCurve {
            values: vec![0.0; 512],
            window_w: 128,
            level: 3,
            stride_to_raw: 4,
        };
        let r = to_raw_windows(&[100], &curve, 2048);
        assert_eq!(r.windows, [Interval { start: 144, end: 656 }]);
        let r = to_raw_windows(&[0], &curve, 2048);
        assert_eq!(r.windows, [Interval { start: 0, end: 256 }]);
        let r = to_raw_windows(&[511], &curve, 2048);
        assert_eq!(r.windows, [Interval { start: 1788, end: 2048 }]);
    }

    #[test]
    fn metric_cases() {
        let a = Interval::new(10, 20).unwrap();
        let m = localization_metrics(&[a], &[a]).unwrap();
        assert_eq!((m.hit_rate, m.mean_best_iou), (1.0, 1.0));

        let m = localization_metrics(&[a], &[Interval::new(30, 40).unwrap()]).unwrap();
        assert_eq!((m.hit_rate, m.mean_best_iou), (0.0, 0.0));

        let m = localization_metrics(&[Interval::new(0, 100).unwrap()], &[Interval::new(50, 150).unwrap()]).unwrap();
        assert_eq!(m.hit_rate, 1.0);
        assert!((m.mean_best_iou - 50.0 / 150.0).abs() < 1e-15);

        let m = localization_metrics(&[], &[a]).unwrap();
        assert_eq!((m.hit_rate, m.mean_best_iou), (0.0, 0.0));

        let bad = Interval { start: 5, end: 5 };
        assert!(localization_metrics(&[bad], &[a]).is_err());
        assert!(Interval::new(5, 4).is_err());
    }
}
