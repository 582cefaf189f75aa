//! Counterfactual completeness check: outpaint around a completed object and
//! see whether the inpainter wants to grow it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{Backends, DiffusionInput, StepRange};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline::new_amodal_mask;
use crate::raster::{BinaryMask, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    BoundaryProximity,
    ContainedInDilation,
    MajorExtension,
    MinorExtensionTolerated,
}

/// Thresholds of the decision rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rule {
    /// Boundary distance under which the object counts as cut off.
    pub gamma: u32,
    /// 5×5 dilation iterations tolerated as noise.
    pub delta: u32,
    /// Area ratio above which growth means the object was incomplete.
    pub epsilon: f64,
}

impl Rule {
    pub fn from_config(c: &PipelineConfig) -> Self {
        Self {
            gamma: c.curation_gamma,
            delta: c.curation_delta,
            epsilon: c.curation_epsilon,
        }
    }
}

impl Default for Rule {
    fn default() -> Self {
        Self::from_config(&PipelineConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: Label,
    pub reason: Reason,
    pub area_ratio: f64,
}

/// Judges a completion from its mask `m` and the counterfactual mask `m_prime`.
pub fn decide(m: &BinaryMask, m_prime: &BinaryMask, rule: Rule) -> Result<Decision> {
    if m.is_empty() {
        return Err(Error::EmptyMask("amodal mask"));
    }
    let area_ratio = m_prime.area() as f64 / m.area() as f64;
    let (label, reason) = if !m_prime.touches_boundary(rule.gamma).is_empty() {
        (Label::Incomplete, Reason::BoundaryProximity)
    } else if m_prime.is_subset_of(&m.dilate(rule.delta))? {
        (Label::Complete, Reason::ContainedInDilation)
    } else if area_ratio > rule.epsilon {
        (Label::Incomplete, Reason::MajorExtension)
    } else {
        (Label::Complete, Reason::MinorExtensionTolerated)
    };
    Ok(Decision {
        label,
        reason,
        area_ratio,
    })
}

/// Pixels to outpaint: everything but the object and four corner squares
/// of side `corner_frac · min(H, W)` kept as background anchors.
pub fn counterfactual_mask(amodal: &BinaryMask, corner_frac: f64) -> Result<BinaryMask> {
    let (w, h) = amodal.dims();
    let s = (corner_frac * w.min(h) as f64).floor() as u32;
    let corner = |x: u32, y: u32| (x < s || x >= w - s.min(w)) && (y < s || y >= h - s.min(h));
    BinaryMask::from_fn(w, h, |x, y| !amodal.get(x, y) && !corner(x, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationVerdict {
    pub decision: Decision,
    pub m_prime: BinaryMask,
    pub i_prime: ImageBuffer,
}

pub fn classify_completion(
    backends: &Backends,
    image: &ImageBuffer,
    amodal: &BinaryMask,
    category: &str,
    config: &PipelineConfig,
    seed: u64,
) -> Result<CurationVerdict> {
    if amodal.is_empty() {
        return Err(Error::EmptyMask("amodal mask"));
    }
    let mask = counterfactual_mask(amodal, config.corner_frac)?;
    let range = StepRange::full(config.total_steps)?;
    let i_prime = backends
        .diffuse_range(DiffusionInput::Clean(image), &mask, category, range, seed)?
        .into_image();
    let (m_prime, _) = new_amodal_mask(backends, &i_prime, amodal, category, config)?;
    let decision = decide(amodal, &m_prime, Rule::from_config(config))?;
    Ok(CurationVerdict {
        decision,
        m_prime,
        i_prime,
    })
}

/// One completion to judge.
#[derive(Debug, Clone)]
pub struct CurationItem {
    pub id: String,
    pub image: ImageBuffer,
    pub mask: BinaryMask,
    pub category: String,
    /// Ground truth, `true` for complete.
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub id: String,
    pub label: Label,
    pub reason: Reason,
    pub area_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<Label>,
}

/// Binary confusion counts with "complete" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Complete, Label::Complete) => self.tp += 1,
            (Label::Incomplete, Label::Incomplete) => self.tn += 1,
            (Label::Complete, Label::Incomplete) => self.fp += 1,
            (Label::Incomplete, Label::Complete) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn ratio(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        Self::ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn row(&self, name: &str) -> ScoreRow {
        ScoreRow {
            name: name.to_string(),
            accuracy: self.accuracy(),
            precision: self.precision(),
            recall: self.recall(),
        }
    }
}

/// One row of an accuracy / precision / recall comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub name: String,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub items: Vec<ItemVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Confusion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    pub table: Vec<ScoreRow>,
}

/// Report over a set of verdicts; metrics appear when every item is labelled.
pub fn summarize(items: Vec<ItemVerdict>, method: &str) -> CurationReport {
    let labelled = !items.is_empty() && items.iter().all(|i| i.expected.is_some());
    let confusion = labelled.then(|| {
        let mut c = Confusion::default();
        for i in &items {
            c.add(i.label, i.expected.expect("labelled"));
        }
        c
    });
    CurationReport {
        accuracy: confusion.and_then(|c| c.accuracy()),
        precision: confusion.and_then(|c| c.precision()),
        recall: confusion.and_then(|c| c.recall()),
        table: confusion.map(|c| vec![c.row(method)]).unwrap_or_default(),
        confusion,
        items,
    }
}

/// Judges every item, in parallel on the current rayon pool.
pub fn curate_batch(
    items: &[CurationItem],
    config: &PipelineConfig,
    backends: &Backends,
    seed: u64,
) -> Result<CurationReport> {
    let verdicts: Vec<ItemVerdict> = items
        .par_iter()
        .map(|item| {
            let v = classify_completion(backends, &item.image, &item.mask, &item.category, config, seed)?;
            Ok(ItemVerdict {
                id: item.id.clone(),
                label: v.decision.label,
                reason: v.decision.reason,
                area_ratio: v.decision.area_ratio,
                expected: item
                    .label
                    .map(|c| if c { Label::Complete } else { Label::Incomplete }),
            })
        })
        .collect::<Result<_>>()?;
    Ok(summarize(verdicts, "counterfactual rule"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BBox;
    use proptest::prelude::*;

    fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::rect(w, h, BBox::new(x0, y0, x1, y1).unwrap()).unwrap()
    }

    #[test]
    fn identity_is_contained() {
        let m = rect(64, 64, 20, 20, 40, 40);
        let d = decide(&m, &m, Rule::default()).unwrap();
        assert_eq!((d.label, d.reason, d.area_ratio), (Label::Complete, Reason::ContainedInDilation, 1.0));
    }

    #[test]
    fn boundary_distance_one_vs_three() {
        let m = rect(64, 64, 20, 20, 40, 40);
        let near = m.union(&rect(64, 64, 1, 30, 20, 31)).unwrap();
        let far = m.union(&rect(64, 64, 3, 30, 20, 31)).unwrap();
        assert_eq!(decide(&m, &near, Rule::default()).unwrap().reason, Reason::BoundaryProximity);
        assert_ne!(decide(&m, &far, Rule::default()).unwrap().reason, Reason::BoundaryProximity);
    }

    #[test]
    fn full_dilation_is_still_complete() {
        let m = rect(100, 100, 40, 40, 50, 50);
        let d = decide(&m, &m.dilate(4), Rule::default()).unwrap();
        assert_eq!(d.reason, Reason::ContainedInDilation);
    }

    #[test]
    fn extension_area_thresholds() {
        // 20×20 object; a thin spur far outside the dilation adds area.
        let m = rect(200, 200, 50, 50, 70, 70);
        let grow = |extra: u32| m.union(&rect(200, 200, 70, 60, 70 + extra, 61)).unwrap();
        let minor = decide(&m, &grow(76), Rule::default()).unwrap();
        assert_eq!((minor.label, minor.reason), (Label::Complete, Reason::MinorExtensionTolerated));
        let major = decide(&m, &grow(84), Rule::default()).unwrap();
        assert_eq!((major.label, major.reason), (Label::Incomplete, Reason::MajorExtension));
    }

    #[test]
    fn empty_mask_is_an_error() {
        let e = BinaryMask::empty(10, 10).unwrap();
        assert!(decide(&e, &e, Rule::default()).is_err());
    }

    #[test]
    fn counterfactual_corners() {
        let m = BinaryMask::empty(100, 60).unwrap();
        let c = counterfactual_mask(&m, 0.15).unwrap();
        assert_eq!(c.area(), 6000 - 4 * 81);
        assert!(!c.get(0, 0) && !c.get(99, 59) && !c.get(8, 51) && c.get(9, 51));
        let full = BinaryMask::full(100, 60).unwrap();
        assert!(counterfactual_mask(&full, 0.15).unwrap().is_empty());
    }

    #[test]
    fn hundred_item_confusion() {
        let c = Confusion { tp: 35, tn: 35, fp: 15, fn_: 15 };
        assert_eq!(c.accuracy(), Some(0.70));
        assert_eq!(c.precision(), Some(0.70));
        assert_eq!(c.recall(), Some(0.70));
        assert_eq!(Confusion::default().precision(), None);
        let v = serde_json::to_value(c).unwrap();
        assert_eq!(v["fn"], 15);
    }

    proptest! {
        #[test]
        fn translation_away_from_boundary_keeps_the_verdict(
            x0 in 20u32..40, y0 in 20u32..40, w in 2u32..15, h in 2u32..15,
            ex in 0u32..20, dx in 0u32..20, dy in 0u32..20,
        ) {
            let m = rect(128, 128, x0, y0, x0 + w, y0 + h);
            let mp = m.union(&rect(128, 128, x0, y0, x0 + w + ex, y0 + 1)).unwrap();
            let a = decide(&m, &mp, Rule::default()).unwrap();
            let shift = |k: &BinaryMask| k.placed(128, 128, dx as i64, dy as i64).unwrap();
            let b = decide(&shift(&m), &shift(&mp), Rule::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
