use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::Tensor;
use crate::error::{Error, Result};

/// How acquired k-space locations are chosen outside the centre band.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskPattern {
    /// Independent 2-D point sampling.
    Points,
    /// Whole phase-encode rows.
    Lines,
}

impl std::str::FromStr for MaskPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "points" => Ok(Self::Points),
            "lines" => Ok(Self::Lines),
            other => Err(Error::Config(format!("unknown mask pattern `{other}`"))),
        }
    }
}

impl std::fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Points => "points",
            Self::Lines => "lines",
        })
    }
}

/// Binary H×W selector of acquired k-space samples (DC at `(h/2, w/2)`).
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    rate: f64,
    seed: u64,
    center_fraction: f64,
    values: Vec<f32>,
}

/// Parameters of [`make_mask`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskParams {
    pub height: usize,
    pub width: usize,
    pub rate: f64,
    pub center_fraction: f64,
    pub seed: u64,
    pub pattern: MaskPattern,
}

impl MaskParams {
    pub fn new(size: usize, rate: f64, center_fraction: f64, seed: u64) -> Self {
        Self {
            height: size,
            width: size,
            rate,
            center_fraction,
            seed,
            pattern: MaskPattern::Points,
        }
    }
}

/// Seeded random mask with exactly `round(rate·h·w)` ones. The central
/// `round(center_fraction·h)` rows are always kept; the rest of the budget
/// is drawn uniformly without replacement.
pub fn make_mask(
    h: usize,
    w: usize,
    rate: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    make_mask_with(&MaskParams {
        height: h,
        width: w,
        rate,
        center_fraction,
        seed,
        pattern: MaskPattern::Points,
    })
}

pub fn make_mask_with(p: &MaskParams) -> Result<SamplingMask> {
    let (h, w) = (p.height, p.width);
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(
            "mask dimensions must be positive".into(),
        ));
    }
    if !(p.rate > 0.0 && p.rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling rate {} outside (0, 1]",
            p.rate
        )));
    }
    if !(0.0..=1.0).contains(&p.center_fraction) {
        return Err(Error::InvalidArgument(format!(
            "center fraction {} outside [0, 1]",
            p.center_fraction
        )));
    }
    let budget = (p.rate * (h * w) as f64).round() as usize;
    let center_rows = (p.center_fraction * h as f64).round() as usize;
    let first_center = h / 2 - center_rows / 2;
    let center = first_center..first_center + center_rows;
    if center_rows * w > budget {
        return Err(Error::InvalidArgument(format!(
            "budget of {budget} samples cannot cover {center_rows} fully sampled centre rows"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut values = vec![0.0f32; h * w];
    for row in center.clone() {
        values[row * w..(row + 1) * w].fill(1.0);
    }
    match p.pattern {
        MaskPattern::Points => {
            let free: Vec<usize> = (0..h * w).filter(|i| !center.contains(&(i / w))).collect();
            for j in index::sample(&mut rng, free.len(), budget - center_rows * w) {
                values[free[j]] = 1.0;
            }
        }
        MaskPattern::Lines => {
            if budget % w != 0 {
                return Err(Error::InvalidArgument(format!(
                    "line sampling needs a budget divisible by the width: {budget} samples, width {w}"
                )));
            }
            let free: Vec<usize> = (0..h).filter(|r| !center.contains(r)).collect();
            for j in index::sample(&mut rng, free.len(), budget / w - center_rows) {
                let row = free[j];
                values[row * w..(row + 1) * w].fill(1.0);
            }
        }
    }
    Ok(SamplingMask {
        height: h,
        width: w,
        rate: p.rate,
        seed: p.seed,
        center_fraction: p.center_fraction,
        values,
    })
}

impl SamplingMask {
    pub fn full(h: usize, w: usize) -> Self {
        Self {
            height: h,
            width: w,
            rate: 1.0,
            seed: 0,
            center_fraction: 1.0,
            values: vec![1.0; h * w],
        }
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self {
            height: h,
            width: w,
            rate: 0.0,
            seed: 0,
            center_fraction: 0.0,
            values: vec![0.0; h * w],
        }
    }

    /// Rebuilds a mask from a stored `H×W` (or `1×1×H×W`) tensor of 0/1 values.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let s = t.shape();
        let (h, w) = match *s {
            [h, w] | [1, 1, h, w] => (h, w),
            _ => {
                return Err(Error::shape(
                    "mask",
                    format!("expected H×W or 1×1×H×W, got {s:?}"),
                ))
            }
        };
        if let Some(bad) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask entry {bad} is not 0 or 1"
            )));
        }
        let count = t.data().iter().filter(|&&v| v == 1.0).count();
        Ok(Self {
            height: h,
            width: w,
            rate: count as f64 / (h * w) as f64,
            seed: 0,
            center_fraction: 0.0,
            values: t.data().to_vec(),
        })
    }

    /// Restores the seed and centre fraction a stored mask was drawn with.
    pub fn with_origin(mut self, seed: u64, center_fraction: f64) -> Self {
        self.seed = seed;
        self.center_fraction = center_fraction;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn center_fraction(&self) -> f64 {
        self.center_fraction
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    /// `1×1×H×W` tensor that broadcasts over batch and re/im channels.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([1, 1, self.height, self.width], self.values.clone()).expect("mask shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_count_and_binary() {
        let m = make_mask(64, 64, 0.125, 0.0, 3).unwrap();
        assert_eq!(m.count(), 512);
        assert!(m.values().iter().all(|&v| v == 0.0 || v == 1.0));
        let m = make_mask(64, 64, 0.125, 0.04, 3).unwrap();
        assert_eq!(m.count(), 512);
        // rows 31..34 kept in full
        for row in 31..34 {
            assert!(m.values()[row * 64..(row + 1) * 64]
                .iter()
                .all(|&v| v == 1.0));
        }
    }

    #[test]
    fn full_rate_and_determinism() {
        assert!(make_mask(16, 16, 1.0, 0.0, 9)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 1.0));
        assert_eq!(
            make_mask(32, 32, 0.3, 0.1, 5).unwrap(),
            make_mask(32, 32, 0.3, 0.1, 5).unwrap()
        );
        assert_ne!(
            make_mask(32, 32, 0.3, 0.0, 5).unwrap(),
            make_mask(32, 32, 0.3, 0.0, 6).unwrap()
        );
    }

    #[test]
    fn line_pattern_selects_whole_rows() {
        let mut p = MaskParams::new(64, 0.125, 0.04, 1);
        p.pattern = MaskPattern::Lines;
        let m = make_mask_with(&p).unwrap();
        assert_eq!(m.count(), 512);
        for row in m.values().chunks(64) {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn infeasible_budget_rejected() {
        assert!(make_mask(64, 64, 0.01, 0.5, 0).is_err());
        assert!(make_mask(64, 64, 0.0, 0.0, 0).is_err());
        assert!(make_mask(64, 64, 1.5, 0.0, 0).is_err());
    }
}
