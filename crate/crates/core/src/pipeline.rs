//! The progressive loop: analyse, frame, sample, re-segment, repeat until the
//! query object is no longer occluded.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendIdentities, Backends, Instance};
use crate::config::{PipelineConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::framing::{conditional_pad, overlay_object, paste_back, square_crop, FrameTransform, Framed, Overlay};
use crate::occlusion::{build_occlusion_report, report_from_instances, OcclusionReport};
use crate::raster::{BinaryMask, ImageBuffer};
use crate::sampler::{mixed_context_complete, naive_outpaint, plain_complete, McTrace};

/// The object to complete: a category, optionally pinned by a pixel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_point: Option<(u32, u32)>,
}

impl QuerySpec {
    pub fn new(category: impl Into<String>, seed_point: Option<(u32, u32)>) -> Result<Self> {
        let category = category.into();
        if category.trim().is_empty() {
            return Err(Error::QueryResolution("empty query category".into()));
        }
        Ok(Self { category, seed_point })
    }
}

/// Picks the query instance: category match, then containment of the seed
/// point, then highest score, then largest area, then first listed.
pub fn resolve_query(instances: &[Instance], query: &QuerySpec) -> Result<usize> {
    let mut candidates: Vec<usize> = (0..instances.len())
        .filter(|&i| instances[i].category == query.category)
        .collect();
    if candidates.is_empty() {
        return Err(Error::QueryResolution(format!(
            "no '{}' instance among {} detections",
            query.category,
            instances.len()
        )));
    }
    if let Some((x, y)) = query.seed_point {
        candidates.retain(|&i| {
            let m = &instances[i].mask;
            x < m.width() && y < m.height() && m.get(x, y)
        });
        if candidates.is_empty() {
            return Err(Error::QueryResolution(format!(
                "no '{}' instance contains point ({x}, {y})",
                query.category
            )));
        }
    }
    Ok(candidates
        .into_iter()
        .min_by(|&a, &b| {
            let (ia, ib) = (&instances[a], &instances[b]);
            ib.score
                .total_cmp(&ia.score)
                .then(ib.mask.area().cmp(&ia.mask.area()))
                .then(a.cmp(&b))
        })
        .expect("non-empty candidates"))
}

/// Object mask in a completed crop: the detected instance overlapping the
/// previous mask most, joined with it. Falls back to the previous mask
/// (second value `true`) when nothing overlaps.
pub fn new_amodal_mask(
    backends: &Backends,
    completed: &ImageBuffer,
    prev_modal: &BinaryMask,
    category: &str,
    config: &PipelineConfig,
) -> Result<(BinaryMask, bool)> {
    let instances = backends.segment_instances(completed, &config.vocabulary_for(category))?;
    let mut best: Option<(usize, usize)> = None;
    for (i, inst) in instances.iter().enumerate() {
        let overlap = inst.mask.intersection_area(prev_modal)?;
        if overlap > 0 && best.is_none_or(|(_, o)| overlap > o) {
            best = Some((i, overlap));
        }
    }
    match best {
        Some((i, _)) => Ok((instances[i].mask.union(prev_modal)?, false)),
        None => Ok((prev_modal.clone(), true)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Unoccluded,
    MaxIterations,
}

/// What ran inside one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationWork {
    pub padded_size: (u32, u32),
    pub framed: Framed,
    pub completed: ImageBuffer,
    pub trace: Option<McTrace>,
    pub segmentation_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub index: u32,
    pub input: ImageBuffer,
    pub input_modal: BinaryMask,
    pub report: OcclusionReport,
    /// `None` when the object was already unoccluded.
    pub work: Option<IterationWork>,
    /// Working image and amodal mask after this iteration.
    pub output: ImageBuffer,
    pub amodal: BinaryMask,
    /// Position of original pixel (0, 0) in `output`.
    pub origin: (i64, i64),
}

impl IterationRecord {
    pub fn transform(&self) -> Option<&FrameTransform> {
        self.work.as_ref().map(|w| &w.framed.transform)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionBundle {
    pub original: ImageBuffer,
    pub query: QuerySpec,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub config: PipelineConfig,
    pub backends: BackendIdentities,
    /// Visible mask of the query in the original image.
    pub modal: BinaryMask,
    /// Completed working canvas (original plus any padding it grew into).
    pub final_image: ImageBuffer,
    pub final_mask: BinaryMask,
    /// Position of original pixel (0, 0) in `final_image`.
    pub origin: (i64, i64),
    pub overlay: Overlay,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    /// Set when a pass ended with a partial result after a failure.
    pub failure: Option<String>,
}

impl CompletionBundle {
    /// Final amodal mask clipped to the original image.
    pub fn mask_in_original(&self) -> Result<BinaryMask> {
        let (w, h) = self.original.dims();
        self.final_mask.placed(w, h, -self.origin.0, -self.origin.1)
    }

    /// Final image clipped to the original image window.
    pub fn image_in_original(&self) -> Result<ImageBuffer> {
        let (w, h) = self.original.dims();
        let (ox, oy) = self.origin;
        ImageBuffer::from_fn(w, h, |x, y| self.final_image.get((x as i64 + ox) as u32, (y as i64 + oy) as u32))
    }
}

/// Failure of a pipeline run, with whatever had been completed before it.
#[derive(Debug)]
pub struct RunError {
    pub source: Error,
    pub partial: Option<Box<CompletionBundle>>,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.partial {
            Some(p) => write!(f, "{} (after {} iteration(s))", self.source, p.iterations.len()),
            None => write!(f, "{}", self.source),
        }
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<Error> for RunError {
    fn from(source: Error) -> Self {
        Self { source, partial: None }
    }
}

fn sample(
    backends: &Backends,
    framed: &Framed,
    kind: SamplerKind,
    prompt: &str,
    config: &PipelineConfig,
    seed: u64,
) -> Result<(ImageBuffer, Option<McTrace>)> {
    match kind {
        SamplerKind::Mc => {
            let (img, trace) =
                mixed_context_complete(backends, &framed.image, &framed.modal, &framed.occ, prompt, config, seed)?;
            Ok((img, Some(trace)))
        }
        SamplerKind::Plain => Ok((plain_complete(backends, &framed.image, &framed.occ, prompt, config, seed)?, None)),
        SamplerKind::Naive => Ok((naive_outpaint(backends, &framed.image, &framed.modal, prompt, config, seed)?, None)),
    }
}

struct Loop<'a> {
    image: &'a ImageBuffer,
    query: &'a QuerySpec,
    config: &'a PipelineConfig,
    backends: &'a Backends,
    sampler: SamplerKind,
    seed: u64,
    modal0: BinaryMask,
    iterations: Vec<IterationRecord>,
}

impl Loop<'_> {
    fn bundle(self, termination: Termination, failure: Option<String>) -> Result<CompletionBundle> {
        let last = self.iterations.last().expect("at least one iteration");
        let (final_image, final_mask, origin) = (last.output.clone(), last.amodal.clone(), last.origin);
        let overlay = overlay_object(self.image, &final_image, &final_mask, origin)?;
        Ok(CompletionBundle {
            original: self.image.clone(),
            query: self.query.clone(),
            sampler: self.sampler,
            seed: self.seed,
            config: self.config.clone(),
            backends: self.backends.identities(),
            modal: self.modal0,
            final_image,
            final_mask,
            origin,
            overlay,
            iterations: self.iterations,
            termination,
            failure,
        })
    }

    /// One framed completion pass over `working`.
    fn step(
        &self,
        index: u32,
        working: &ImageBuffer,
        modal: &BinaryMask,
        origin: (i64, i64),
        report: &OcclusionReport,
    ) -> Result<IterationRecord> {
        let c = self.config;
        let padded = conditional_pad(
            working,
            &report.occluder_union,
            modal,
            report.boundary_sides,
            c.boundary_pad(),
        )?;
        let touching = !report.boundary_sides.is_empty();
        let framed = square_crop(&padded, c.pad_alpha, c.pad_beta, touching)?;
        let seed = self.seed.wrapping_add(index as u64 - 1);
        let (completed, trace) = sample(self.backends, &framed, self.sampler, &self.query.category, c, seed)?;
        let (crop_mask, fallback) =
            new_amodal_mask(self.backends, &completed, &framed.modal, &self.query.category, c)?;
        if fallback {
            log::warn!("iteration {index}: no instance overlaps the query, keeping the previous mask");
        }
        let t = framed.transform;
        let output = paste_back(&padded.image, &completed, &t)?;
        let (pw, ph) = t.padded_size;
        let amodal = crop_mask
            .placed(pw, ph, t.crop.x0 as i64, t.crop.y0 as i64)?
            .union(&padded.modal)?;
        Ok(IterationRecord {
            index,
            input: working.clone(),
            input_modal: modal.clone(),
            report: report.clone(),
            work: Some(IterationWork {
                padded_size: (pw, ph),
                framed,
                completed,
                trace,
                segmentation_fallback: fallback,
            }),
            output,
            amodal,
            origin: (origin.0 + t.pad.left as i64, origin.1 + t.pad.top as i64),
        })
    }
}

/// Completes the query object in `image`.
pub fn run_pipeline(
    image: &ImageBuffer,
    query: &QuerySpec,
    config: &PipelineConfig,
    backends: &Backends,
    sampler: SamplerKind,
    seed: u64,
) -> std::result::Result<CompletionBundle, RunError> {
    config.validate()?;
    let instances = backends.segment_instances(image, &config.vocabulary_for(&query.category))?;
    let modal = instances[resolve_query(&instances, query)?].mask.clone();
    let mut report = report_from_instances(image, &modal, &instances, config, backends)?;
    let mut lp = Loop {
        image,
        query,
        config,
        backends,
        sampler,
        seed,
        modal0: modal.clone(),
        iterations: Vec::new(),
    };
    if !report.is_occluded {
        lp.iterations.push(IterationRecord {
            index: 1,
            input: image.clone(),
            input_modal: modal.clone(),
            report,
            work: None,
            output: image.clone(),
            amodal: modal,
            origin: (0, 0),
        });
        return Ok(lp.bundle(Termination::Unoccluded, None)?);
    }
    let (mut working, mut modal, mut origin) = (image.clone(), modal, (0i64, 0i64));
    for index in 1..=config.max_iterations {
        let outcome = lp.step(index, &working, &modal, origin, &report).map(|rec| {
            let next = build_occlusion_report(&rec.output, &rec.amodal, &query.category, config, backends);
            (rec, next)
        });
        let (rec, next) = match outcome {
            Ok(v) => v,
            Err(e) => return Err(fail(lp, e)),
        };
        working = rec.output.clone();
        modal = rec.amodal.clone();
        origin = rec.origin;
        lp.iterations.push(rec);
        report = match next {
            Ok(r) => r,
            Err(e) => return Err(fail(lp, e)),
        };
        if !report.is_occluded {
            return Ok(lp.bundle(Termination::Unoccluded, None)?);
        }
    }
    Ok(lp.bundle(Termination::MaxIterations, None)?)
}

fn fail(lp: Loop<'_>, source: Error) -> RunError {
    let msg = source.to_string();
    let partial = if lp.iterations.is_empty() {
        None
    } else {
        lp.bundle(Termination::MaxIterations, Some(msg)).ok().map(Box::new)
    };
    RunError { source, partial }
}
