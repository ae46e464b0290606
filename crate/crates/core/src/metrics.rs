//! Presentation-attack metrics. The positive class is "real": a sample is
//! predicted real iff its score is `>= threshold`, so the false-positive rate
//! is APCER and the true-positive rate is `1 - NPCER`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Label;

/// Operating points reported by [`MetricsReport`].
pub const FPR_TARGETS: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores (probability of real) with their ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<Label>,
    reals: usize,
    fakes: usize,
}

impl ScoredSet {
    /// Rejects unequal lengths, scores outside `[0, 1]` and single-class sets.
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "scored set",
                axis: "labels",
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        if let Some((i, s)) = scores.iter().enumerate().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
            return Err(Error::OutOfRange(format!("score {s} at index {i} is outside [0, 1]")));
        }
        let reals = labels.iter().filter(|&&l| l == Label::Real).count();
        let fakes = labels.len() - reals;
        if reals == 0 || fakes == 0 {
            return Err(Error::SingleClass { reals, fakes });
        }
        Ok(ScoredSet { scores, labels, reals, fakes })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn reals(&self) -> usize {
        self.reals
    }

    pub fn fakes(&self) -> usize {
        self.fakes
    }

    /// Indices sorted by descending score.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRates {
    pub apcer: f64,
    pub npcer: f64,
    pub acer: f64,
}

pub fn error_rates(set: &ScoredSet, threshold: f64) -> ErrorRates {
    let mut fake_accepted = 0usize;
    let mut real_rejected = 0usize;
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        let predicted_real = s >= threshold;
        match l {
            Label::Fake if predicted_real => fake_accepted += 1,
            Label::Real if !predicted_real => real_rejected += 1,
            _ => {}
        }
    }
    let apcer = fake_accepted as f64 / set.fakes as f64;
    let npcer = real_rejected as f64 / set.reals as f64;
    ErrorRates {
        apcer,
        npcer,
        acer: (apcer + npcer) / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Lowest score still predicted real; `+inf` for the all-fake point.
    pub threshold: f64,
}

/// Step ROC with one point per distinct score plus the `+inf` origin.
pub fn roc_points(set: &ScoredSet) -> Vec<RocPoint> {
    let order = set.order();
    let mut points = Vec::with_capacity(set.len() + 1);
    points.push(RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == s {
            match set.labels[order[i]] {
                Label::Real => tp += 1,
                Label::Fake => fp += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / set.fakes as f64,
            tpr: tp as f64 / set.reals as f64,
            threshold: s,
        });
    }
    points
}

/// Trapezoidal area under [`roc_points`]; ties count one half.
pub fn auc(set: &ScoredSet) -> f64 {
    roc_points(set)
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// TPR at the largest achievable FPR not exceeding `target`, without
/// interpolation. Returns `(tpr, threshold)`.
pub fn tpr_at_fpr(set: &ScoredSet, target: f64) -> (f64, f64) {
    let points = roc_points(set);
    let best = points.iter().rev().find(|p| p.fpr <= target).unwrap_or(&points[0]);
    (best.tpr, best.threshold)
}

/// Threshold minimising ACER on `set`; ties go to the higher threshold.
pub fn best_threshold(set: &ScoredSet) -> f64 {
    let mut best = (f64::INFINITY, f64::INFINITY);
    for p in roc_points(set) {
        let acer = (p.fpr + 1.0 - p.tpr) / 2.0;
        if acer < best.0 {
            best = (acer, p.threshold);
        }
    }
    best.1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub target_fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub threshold: f64,
    pub apcer: f64,
    pub npcer: f64,
    pub acer: f64,
    pub auc: f64,
    pub tpr_at_fpr: Vec<OperatingPoint>,
    pub reals: usize,
    pub fakes: usize,
}

impl MetricsReport {
    pub fn compute(set: &ScoredSet, threshold: f64) -> Self {
        let r = error_rates(set, threshold);
        let tpr_at_fpr = FPR_TARGETS
            .iter()
            .map(|&t| {
                let (tpr, threshold) = tpr_at_fpr(set, t);
                OperatingPoint {
                    target_fpr: t,
                    tpr,
                    threshold,
                }
            })
            .collect();
        MetricsReport {
            threshold,
            apcer: r.apcer,
            npcer: r.npcer,
            acer: r.acer,
            auc: auc(set),
            tpr_at_fpr,
            reals: set.reals,
            fakes: set.fakes,
        }
    }
}
