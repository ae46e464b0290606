//! Two-stage ensemble + cascade decision over per-model scores.
//!
//! Stage 1 averages the depth ensemble and settles confident samples. The
//! rest go through the anchor model, then the IR model, and finally a blend
//! of the ensemble mean with the anchor score picks the ensemble maximum or
//! minimum.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub max: f64,
    pub min: f64,
    pub anchor: f64,
    pub ir: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            max: 0.9,
            min: 0.1,
            anchor: 0.5,
            ir: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    members: Vec<(String, f64)>,
    anchor: String,
    ir: String,
    thresholds: Thresholds,
}

impl FusionConfig {
    /// Weights must be positive; they are normalised to sum to one.
    pub fn new(members: Vec<(String, f64)>, anchor: impl Into<String>, ir: impl Into<String>, thresholds: Thresholds) -> Result<Self> {
        let anchor = anchor.into();
        let ir = ir.into();
        if members.is_empty() {
            return Err(Error::invalid("fusion: ensemble has no members"));
        }
        for (i, (name, w)) in members.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::invalid(format!("fusion: weight of '{name}' must be positive, got {w}")));
            }
            if members[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::invalid(format!("fusion: duplicate member '{name}'")));
            }
        }
        if !members.iter().any(|(n, _)| *n == anchor) {
            return Err(Error::invalid(format!("fusion: anchor '{anchor}' is not an ensemble member")));
        }
        if members.iter().any(|(n, _)| *n == ir) {
            return Err(Error::invalid(format!("fusion: ir model '{ir}' must not be an ensemble member")));
        }
        let t = thresholds;
        for (name, v) in [("max_threshold", t.max), ("min_threshold", t.min), ("anchor_threshold", t.anchor), ("ir_threshold", t.ir)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange(format!("fusion: {name} = {v} is outside [0, 1]")));
            }
        }
        if t.min >= t.max {
            return Err(Error::invalid(format!(
                "fusion: min_threshold {} must be below max_threshold {}",
                t.min, t.max
            )));
        }
        let total: f64 = members.iter().map(|(_, w)| w).sum();
        let members = members.into_iter().map(|(n, w)| (n, w / total)).collect();
        Ok(FusionConfig {
            members,
            anchor,
            ir,
            thresholds,
        })
    }

    /// Uniformly weighted ensemble.
    pub fn uniform(members: &[&str], anchor: &str, ir: &str, thresholds: Thresholds) -> Result<Self> {
        Self::new(members.iter().map(|m| (String::from(*m), 1.0)).collect(), anchor, ir, thresholds)
    }

    /// Members with their normalised weights.
    pub fn members(&self) -> &[(String, f64)] {
        &self.members
    }

    pub fn anchor(&self) -> &str {
        &self.anchor
    }

    pub fn ir(&self) -> &str {
        &self.ir
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    /// Every model a record must score.
    pub fn model_names(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|(n, _)| n.as_str()).chain(core::iter::once(self.ir.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub scores: BTreeMap<String, f64>,
}

impl ScoreRecord {
    pub fn new(id: impl Into<String>) -> Self {
        ScoreRecord {
            id: id.into(),
            scores: BTreeMap::new(),
        }
    }

    pub fn with(mut self, model: &str, score: f64) -> Self {
        self.scores.insert(String::from(model), score);
        self
    }

    pub fn score(&self, model: &str) -> Result<f64> {
        let s = *self.scores.get(model).ok_or_else(|| Error::MissingScore(String::from(model)))?;
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfRange(format!("record '{}': score {s} of '{model}' is outside [0, 1]", self.id)));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage1 {
    AcceptReal,
    AcceptFake,
    Uncertain,
}

/// Weighted ensemble mean and the stage-1 verdict (strict comparisons).
pub fn stage1_ensemble(record: &ScoreRecord, config: &FusionConfig) -> Result<(f64, Stage1)> {
    let mut mean = 0.0;
    for (name, w) in &config.members {
        mean += w * record.score(name)?;
    }
    let t = config.thresholds;
    let decision = if mean > t.max {
        Stage1::AcceptReal
    } else if mean < t.min {
        Stage1::AcceptFake
    } else {
        Stage1::Uncertain
    };
    Ok((mean, decision))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// (i) ensemble mean outside the uncertainty band.
    Ensemble,
    /// (ii) anchor model judged fake.
    Anchor,
    /// (iii) IR model judged fake.
    Ir,
    /// (iv) blend of mean and anchor picks ensemble max or min.
    Blend,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Ensemble => "ensemble",
            Branch::Anchor => "anchor",
            Branch::Ir => "ir",
            Branch::Blend => "blend",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trace {
    pub mean: f64,
    pub stage1: Stage1,
    pub branch: Branch,
    /// Set only on the blend branch.
    pub blended: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub score: f64,
    pub trace: Trace,
}

/// `(k·mean + anchor) / (k + 1)` for an ensemble of size `k`.
pub fn blend(mean: f64, anchor: f64, k: usize) -> f64 {
    (k as f64 * mean + anchor) / (k as f64 + 1.0)
}

pub fn cascade_decide(record: &ScoreRecord, config: &FusionConfig) -> Result<Decision> {
    let (mean, stage1) = stage1_ensemble(record, config)?;
    let anchor = record.score(&config.anchor)?;
    let ir = record.score(&config.ir)?;
    let t = config.thresholds;
    let done = |score, branch, blended| Decision {
        score,
        trace: Trace {
            mean,
            stage1,
            branch,
            blended,
        },
    };
    if stage1 != Stage1::Uncertain {
        return Ok(done(mean, Branch::Ensemble, None));
    }
    if anchor < t.anchor {
        return Ok(done(anchor, Branch::Anchor, None));
    }
    if ir < t.ir {
        return Ok(done(ir, Branch::Ir, None));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (name, _) in &config.members {
        let s = record.score(name)?;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    let b = blend(mean, anchor, config.members.len());
    Ok(done(if b > 0.5 { hi } else { lo }, Branch::Blend, Some(b)))
}
