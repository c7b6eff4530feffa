//! IoU-matched instance evaluation and scalar forms of the CycleGAN losses.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::raster::{ImageGrid, InstanceMask};

/// `|a ∩ b| / |a ∪ b|` for sorted, deduplicated pixel index lists.
pub fn iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub pred: u32,
    pub gt: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub tau: f64,
    pub matches: Vec<Match>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Nonzero IoUs between every overlapping (pred, gt) label pair.
pub fn pairwise_iou(pred: &InstanceMask, gt: &InstanceMask) -> Result<Vec<Match>> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p != 0 && g != 0 {
            *overlap.entry((p, g)).or_default() += 1;
        }
    }
    let (pa, ga) = (pred.areas(), gt.areas());
    let mut pairs: Vec<Match> = overlap
        .into_iter()
        .map(|((p, g), inter)| Match {
            pred: p,
            gt: g,
            iou: inter as f64 / (pa[p as usize] + ga[g as usize] - inter) as f64,
        })
        .collect();
    pairs.sort_by_key(|m| (m.pred, m.gt));
    Ok(pairs)
}

/// One-to-one matching of predicted to ground-truth instances at IoU ≥ `tau`.
///
/// For `tau > 0.5` an instance can exceed the threshold with at most one
/// counterpart (two disjoint sets cannot both cover more than half of the
/// union with it), so taking candidate pairs greedily by descending IoU is
/// optimal. At exactly 0.5 ties are possible; greedy still attains the
/// maximum match count.
pub fn match_instances(pred: &InstanceMask, gt: &InstanceMask, tau: f64) -> Result<MatchResult> {
    if !(0.5..=1.0).contains(&tau) {
        return Err(Error::param("tau", format!("{tau} is outside [0.5, 1]")));
    }
    let mut candidates: Vec<Match> = pairwise_iou(pred, gt)?.into_iter().filter(|m| m.iou >= tau).collect();
    candidates.sort_by(|a, b| b.iou.total_cmp(&a.iou).then(a.pred.cmp(&b.pred)).then(a.gt.cmp(&b.gt)));
    let mut pred_used = vec![false; pred.instance_count() as usize + 1];
    let mut gt_used = vec![false; gt.instance_count() as usize + 1];
    let mut matches = Vec::new();
    for m in candidates {
        if tau > 0.5 {
            debug_assert!(
                !pred_used[m.pred as usize] && !gt_used[m.gt as usize],
                "IoU above 0.5 with two counterparts"
            );
        }
        if !pred_used[m.pred as usize] && !gt_used[m.gt as usize] {
            pred_used[m.pred as usize] = true;
            gt_used[m.gt as usize] = true;
            matches.push(m);
        }
    }
    matches.sort_by_key(|m| (m.pred, m.gt));
    let tp = matches.len();
    Ok(MatchResult {
        tau,
        matches,
        tp,
        fp: pred.instance_count() as usize - tp,
        fn_: gt.instance_count() as usize - tp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Scores {
    /// 0/0 is taken as 0 for every ratio.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Scores { precision, recall, f1 }
    }
}

pub fn prf_scores(m: &MatchResult) -> Scores {
    Scores::from_counts(m.tp, m.fp, m.fn_)
}

/// Dataset-level accumulation of match counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn with_result(self, m: &MatchResult) -> Self {
        Counts {
            tp: self.tp + m.tp,
            fp: self.fp + m.fp,
            fn_: self.fn_ + m.fn_,
        }
    }

    pub fn merge(self, other: Counts) -> Self {
        Counts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn scores(&self) -> Scores {
        Scores::from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Pooled scores over summed counts and the per-image mean of scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub counts: Counts,
    pub pooled: Scores,
    pub image_mean: Scores,
    pub images: usize,
}

pub fn aggregate<'a>(results: impl IntoIterator<Item = &'a MatchResult>) -> Aggregate {
    let mut counts = Counts::default();
    let (mut p, mut r, mut f, mut n) = (0.0, 0.0, 0.0, 0usize);
    for m in results {
        counts = counts.with_result(m);
        let s = prf_scores(m);
        p += s.precision;
        r += s.recall;
        f += s.f1;
        n += 1;
    }
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Aggregate {
        counts,
        pooled: counts.scores(),
        image_mean: Scores {
            precision: mean(p),
            recall: mean(r),
            f1: mean(f),
        },
        images: n,
    }
}

/// Cycle-consistency weights: `lambda_g` for the mask → image generator,
/// `lambda_f` for image → mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_g: f64,
    pub lambda_f: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_g: 10.0,
            lambda_f: 15.0,
        }
    }
}

impl LossConfig {
    pub fn new(lambda_g: f64, lambda_f: f64) -> Result<Self> {
        for (name, v) in [("lambda_g", lambda_g), ("lambda_f", lambda_f)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("{v} must be >= 0")));
            }
        }
        Ok(LossConfig { lambda_g, lambda_f })
    }

    pub fn weighted_cycle(&self, cycle_g: f64, cycle_f: f64) -> f64 {
        self.lambda_g * cycle_g + self.lambda_f * cycle_f
    }
}

/// Mean absolute difference between an input and its round trip.
pub fn cycle_loss(original: &ImageGrid, cycled: &ImageGrid) -> Result<f64> {
    if original.dims() != cycled.dims() {
        return Err(Error::DimensionMismatch {
            expected: original.dims(),
            actual: cycled.dims(),
        });
    }
    let total: f64 = original
        .values()
        .iter()
        .zip(cycled.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / original.values().len() as f64)
}

const LOG_CLAMP: f64 = 1e-7;

fn clamped_ln(p: f64) -> f64 {
    p.clamp(LOG_CLAMP, 1.0).ln()
}

/// `log D(y) + log(1 - D(G(x)))` for one sample, probabilities clamped to
/// `[1e-7, 1]` before the log.
pub fn adversarial_loss_terms(d_real: f64, d_fake: f64) -> f64 {
    clamped_ln(d_real) + clamped_ln(1.0 - d_fake)
}

/// Mean of the per-sample adversarial terms.
pub fn adversarial_loss_batch(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    if d_real.len() != d_fake.len() || d_real.is_empty() {
        return Err(Error::param(
            "batch",
            format!("{} real vs {} fake scores", d_real.len(), d_fake.len()),
        ));
    }
    let sum: f64 = d_real
        .iter()
        .zip(d_fake)
        .map(|(&r, &f)| adversarial_loss_terms(r, f))
        .sum();
    Ok(sum / d_real.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ValueRange;

    fn row_mask(labels: &[u32]) -> InstanceMask {
        InstanceMask::new(1, labels.len(), labels.to_vec()).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a: Vec<usize> = (0..100).collect();
        let b: Vec<usize> = (50..150).collect();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a[..10], &a[20..30]), 0.0);
        assert!((iou(&a, &b) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn identical_masks_match_fully() {
        let m = row_mask(&[0, 1, 1, 2, 0, 3]);
        let r = match_instances(&m, &m, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (3, 0, 0));
    }

    #[test]
    fn empty_prediction() {
        let gt = row_mask(&[1, 2, 0, 3]);
        let pred = row_mask(&[0, 0, 0, 0]);
        let r = match_instances(&pred, &gt, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (0, 0, 3));
        assert_eq!(prf_scores(&r), Scores::from_counts(0, 0, 3));
    }

    #[test]
    fn tau_below_half_is_rejected() {
        let m = row_mask(&[1]);
        assert!(match_instances(&m, &m, 0.3).is_err());
    }

    #[test]
    fn prf_examples() {
        assert_eq!(
            Scores::from_counts(5, 0, 0),
            Scores {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        assert_eq!(
            Scores::from_counts(0, 0, 0),
            Scores {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0
            }
        );
        let s = Scores::from_counts(94, 6, 60);
        assert!((s.precision - 0.94).abs() < 1e-12);
        assert!((s.recall - 94.0 / 154.0).abs() < 1e-12);
        assert!((s.f1 - 0.7401).abs() < 1e-4);
    }

    #[test]
    fn cycle_loss_examples() {
        let x = ImageGrid::new(1, 2, vec![1.0, -1.0], ValueRange::UNIT_SIGNED).unwrap();
        let z = ImageGrid::new(1, 2, vec![0.0, 0.0], ValueRange::UNIT_SIGNED).unwrap();
        assert_eq!(cycle_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(cycle_loss(&x, &z).unwrap(), 1.0);
        let y = ImageGrid::new(1, 3, vec![0.0; 3], ValueRange::UNIT_SIGNED).unwrap();
        assert!(cycle_loss(&x, &y).is_err());
    }

    #[test]
    fn adversarial_examples() {
        assert_eq!(adversarial_loss_terms(1.0, 0.0), 0.0);
        assert!((adversarial_loss_terms(0.5, 0.5) - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((adversarial_loss_terms(0.5, 0.5) + 1.3863).abs() < 1e-4);
        let clamped = adversarial_loss_terms(0.0, 0.0);
        assert!(clamped.is_finite());
        assert!((clamped - 1e-7f64.ln()).abs() < 1e-12);
        assert!((clamped + 16.118).abs() < 1e-3);
        assert!((adversarial_loss_batch(&[1.0, 0.5], &[0.0, 0.5]).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_weights() {
        let cfg = LossConfig::default();
        assert_eq!((cfg.lambda_g, cfg.lambda_f), (10.0, 15.0));
        assert_eq!(cfg.weighted_cycle(1.0, 2.0), 40.0);
        assert!(LossConfig::new(-1.0, 0.0).is_err());
    }
}
