use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backdrop used to replace the scene context on the synthetic path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CleanBackground {
    #[default]
    Gray,
    White,
    Black,
    Forest,
    Sky,
    /// Keep the original context (disables the swap).
    Original,
}

impl CleanBackground {
    /// Solid backdrop colour, `None` for [`CleanBackground::Original`].
    pub fn rgb(self) -> Option<[u8; 3]> {
        match self {
            CleanBackground::Gray => Some([128, 128, 128]),
            CleanBackground::White => Some([255, 255, 255]),
            CleanBackground::Black => Some([0, 0, 0]),
            CleanBackground::Forest => Some([34, 139, 34]),
            CleanBackground::Sky => Some([135, 206, 235]),
            CleanBackground::Original => None,
        }
    }
}

impl FromStr for CleanBackground {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::Config(format!("unknown background '{s}'")))
    }
}

/// Which completion procedure runs inside each pipeline iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Mixed-context sampling.
    #[default]
    Mc,
    /// A single inpainting pass over the occluder mask.
    Plain,
    /// Outpaint everything outside the modal mask.
    Naive,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Mc => "mc",
            SamplerKind::Plain => "plain",
            SamplerKind::Naive => "naive",
        })
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mc" => Ok(SamplerKind::Mc),
            "plain" => Ok(SamplerKind::Plain),
            "naive" => Ok(SamplerKind::Naive),
            other => Err(Error::Config(format!("unknown sampler '{other}'"))),
        }
    }
}

/// Every tunable of the completion pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Total denoising steps N.
    pub total_steps: u32,
    /// Step k at which the two sampling paths are composited.
    pub composite_step: u32,
    /// Decoder layer (1..=4) whose features are clustered.
    pub decoder_layer: u32,
    /// A cluster joins the object when more than this fraction of it lies in the modal mask.
    pub overlap_threshold: f64,
    /// Margin added around the object's bounding box before squaring the crop.
    pub pad_alpha: u32,
    /// Extra margin when the object touches the image boundary.
    pub pad_beta: u32,
    /// Distance under which the object counts as touching the boundary.
    pub boundary_eps: u32,
    pub curation_gamma: u32,
    /// Iterations of 5×5 dilation used by the curation containment test.
    pub curation_delta: u32,
    pub curation_epsilon: f64,
    /// Side of the preserved corner squares, as a fraction of the short image side.
    pub corner_frac: f64,
    pub clean_background: CleanBackground,
    pub cluster_count: usize,
    pub kmeans_max_iter: usize,
    pub max_iterations: u32,
    /// An instance is a neighbour when it meets the modal mask dilated by this many pixels.
    pub neighbor_radius: u32,
    /// Occluder masks are grown by this many pixels before they are merged.
    pub occluder_dilation: u32,
    /// Extra categories passed to the segmenter along with the query category.
    pub vocabulary: Vec<String>,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            total_steps: 50,
            composite_step: 20,
            decoder_layer: 3,
            overlap_threshold: 0.20,
            pad_alpha: 60,
            pad_beta: 60,
            boundary_eps: 10,
            curation_gamma: 2,
            curation_delta: 4,
            curation_epsilon: 1.2,
            corner_frac: 0.15,
            clean_background: CleanBackground::Gray,
            cluster_count: 6,
            kmeans_max_iter: 100,
            max_iterations: 5,
            neighbor_radius: 5,
            occluder_dilation: 2,
            vocabulary: Vec::new(),
            rng_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.composite_step == 0 || self.composite_step >= self.total_steps {
            return bad(format!(
                "composite_step must satisfy 0 < k < N (k={}, N={})",
                self.composite_step, self.total_steps
            ));
        }
        if !(1..=4).contains(&self.decoder_layer) {
            return Err(Error::InvalidLayer(self.decoder_layer));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold < 1.0) {
            return bad(format!(
                "overlap_threshold must lie in (0, 1), got {}",
                self.overlap_threshold
            ));
        }
        if self.boundary_eps == 0 || self.curation_gamma == 0 {
            return bad("boundary thresholds must be positive".into());
        }
        if self.curation_epsilon <= 1.0 || !self.curation_epsilon.is_finite() {
            return bad(format!(
                "curation_epsilon must exceed 1, got {}",
                self.curation_epsilon
            ));
        }
        if !(0.0..0.5).contains(&self.corner_frac) {
            return bad(format!("corner_frac must lie in [0, 0.5), got {}", self.corner_frac));
        }
        if self.cluster_count == 0 || self.kmeans_max_iter == 0 {
            return bad("cluster_count and kmeans_max_iter must be positive".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        Ok(())
    }

    /// Padding applied on a boundary-touching side.
    pub fn boundary_pad(&self) -> u32 {
        self.pad_alpha + self.pad_beta
    }

    /// Vocabulary handed to the segmenter for a query.
    pub fn vocabulary_for(&self, category: &str) -> Vec<String> {
        let mut v = vec![category.to_string()];
        for c in &self.vocabulary {
            if !v.contains(c) {
                v.push(c.clone());
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.boundary_pad(), 120);
    }

    #[test]
    fn published_defaults() {
        let c = PipelineConfig::default();
        assert_eq!((c.decoder_layer, c.composite_step), (3, 20));
        assert_eq!(c.overlap_threshold, 0.20);
        assert_eq!((c.curation_gamma, c.curation_delta, c.curation_epsilon), (2, 4, 1.2));
    }

    #[test]
    fn rejects_bad_composite_step() {
        let mut c = PipelineConfig {
            composite_step: 50,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.composite_step = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_bad_epsilon_and_layer() {
        let c = PipelineConfig {
            curation_epsilon: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            decoder_layer: 5,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::InvalidLayer(5))));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"composite_step": 10}"#).unwrap();
        assert_eq!(c.composite_step, 10);
        assert_eq!(c.total_steps, 50);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn parses_enums() {
        assert_eq!("gray".parse::<CleanBackground>().unwrap(), CleanBackground::Gray);
        assert_eq!("Sky".parse::<CleanBackground>().unwrap(), CleanBackground::Sky);
        assert!("mud".parse::<CleanBackground>().is_err());
        assert_eq!("naive".parse::<SamplerKind>().unwrap(), SamplerKind::Naive);
    }
}
