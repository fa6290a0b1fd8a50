//! Hand-crafted uptake features of a normalized coronal MIP.
//!
//! Layout (11 values):
//! `[p50, p75, p90, p95, p99, frac>0.2, frac>0.4, frac>0.6, frac>0.8,
//!   hot_row_center, hot_row_clusters]`.
//!
//! "Hot" pixels are those above [`HOT_THRESHOLD`]. `hot_row_center` is the
//! mean row of hot pixels divided by `height - 1` (0 = superior edge, 0.5
//! when there are none). `hot_row_clusters` counts maximal runs of
//! consecutive rows containing at least one hot pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mip::MipImage;
use crate::preprocess::percentile_sorted;
use crate::scalar::Scalar;

pub const PERCENTILES: [f64; 5] = [50.0, 75.0, 90.0, 95.0, 99.0];
pub const FRACTION_THRESHOLDS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const HOT_THRESHOLD: f64 = 0.5;
pub const FEATURE_DIM: usize = PERCENTILES.len() + FRACTION_THRESHOLDS.len() + 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<T>(pub Vec<T>);

impl<T: Scalar> FeatureVector<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn percentiles(&self) -> &[T] {
        &self.0[..PERCENTILES.len()]
    }

    pub fn fractions(&self) -> &[T] {
        &self.0[PERCENTILES.len()..PERCENTILES.len() + FRACTION_THRESHOLDS.len()]
    }

    pub fn row_profile(&self) -> &[T] {
        &self.0[PERCENTILES.len() + FRACTION_THRESHOLDS.len()..]
    }
}

pub fn extract_features<T: Scalar>(mip: &MipImage<T>) -> Result<FeatureVector<T>> {
    if !mip.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let pixels = mip.pixels();
    let mut sorted = pixels.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("normalized pixels are finite"));

    let mut out = Vec::with_capacity(FEATURE_DIM);
    for q in PERCENTILES {
        out.push(percentile_sorted(&sorted, q));
    }
    let n = T::of_usize(pixels.len());
    for t in FRACTION_THRESHOLDS {
        let t = T::of(t);
        // sorted ascending: count of values strictly above t
        let above = sorted.len() - sorted.partition_point(|&v| v <= t);
        out.push(T::of_usize(above) / n);
    }

    let hot = T::of(HOT_THRESHOLD);
    let (h, w) = (mip.height(), mip.width());
    let mut row_sum = 0usize;
    let mut hot_count = 0usize;
    let mut clusters = 0usize;
    let mut prev_hot = false;
    for r in 0..h {
        let c = (0..w).filter(|&c| mip.get(r, c) > hot).count();
        row_sum += r * c;
        hot_count += c;
        let row_hot = c > 0;
        if row_hot && !prev_hot {
            clusters += 1;
        }
        prev_hot = row_hot;
    }
    let center = if hot_count == 0 || h == 1 {
        T::of(0.5)
    } else {
        T::of(row_sum as f64 / hot_count as f64 / (h - 1) as f64)
    };
    out.push(center);
    out.push(T::of_usize(clusters));
    Ok(FeatureVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mip(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> MipImage<f64> {
        let px = (0..h * w).map(|i| f(i / w, i % w)).collect();
        MipImage::new(h, w, px, "t").unwrap()
    }

    #[test]
    fn all_zero() {
        let f = extract_features(&mip(8, 8, |_, _| 0.0)).unwrap();
        assert_eq!(f.len(), FEATURE_DIM);
        assert!(f.percentiles().iter().all(|&v| v == 0.0));
        assert!(f.fractions().iter().all(|&v| v == 0.0));
        assert_eq!(f.row_profile(), &[0.5, 0.0]);
    }

    #[test]
    fn all_ones() {
        let f = extract_features(&mip(8, 8, |_, _| 1.0)).unwrap();
        assert!(f.percentiles().iter().all(|&v| v == 1.0));
        assert!(f.fractions().iter().all(|&v| v == 1.0));
        assert_eq!(f.row_profile(), &[0.5, 1.0]);
    }

    #[test]
    fn checkerboard_fractions_by_counting() {
        let m = mip(10, 12, |r, c| ((r + c) % 2) as f64);
        let f = extract_features(&m).unwrap();
        for (k, t) in FRACTION_THRESHOLDS.iter().enumerate() {
            let counted = m.pixels().iter().filter(|&&p| p > *t).count() as f64 / m.pixels().len() as f64;
            assert_eq!(counted, 0.5);
            assert_eq!(f.fractions()[k], counted);
        }
    }

    #[test]
    fn row_clusters_and_center() {
        // hot rows 1, 2 and 6 -> two clusters, center = mean row / (h-1)
        let m = mip(8, 4, |r, c| if (r == 1 || r == 2 || r == 6) && c == 0 { 0.9 } else { 0.1 });
        let f = extract_features(&m).unwrap();
        assert_eq!(f.row_profile()[1], 2.0);
        assert!((f.row_profile()[0] - (1.0 + 2.0 + 6.0) / 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unnormalized() {
        assert!(matches!(extract_features(&mip(2, 2, |_, _| 3.0)), Err(Error::NotNormalized)));
    }
}
