//! Model backends: the diffusion inpainter, grounded segmenter, pairwise
//! depth ordering, object remover and optional perceptual metrics.
//!
//! Every model is consumed through a trait so the orchestration never
//! depends on a particular model stack. [`Backends`] bundles one handle per
//! role and checks the call contracts (dimensions, timestep order) at the
//! boundary, whichever implementation sits behind it.

pub mod mock;
pub mod remote;
pub mod scene;
pub mod server;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Error, Result};
use crate::raster::{ensure_same, BinaryMask, ImageBuffer};

pub use mock::MockBackend;
pub use remote::{RemoteBackend, RemoteConfig};
pub use scene::ScriptedScene;

/// A partially denoised image at timestep `t` of `N`.
///
/// `raster` is the backend's pixel-space view of the state; for latent
/// models the encoder/decoder stays behind the backend and `handle` may
/// carry an opaque server-side reference to the latent.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyState {
    raster: ImageBuffer,
    timestep: u32,
    total_steps: u32,
    handle: Option<String>,
}

impl NoisyState {
    pub fn new(raster: ImageBuffer, timestep: u32, total_steps: u32) -> Result<Self> {
        if timestep > total_steps {
            return Err(Error::TimestepOutOfRange(timestep, total_steps));
        }
        Ok(Self {
            raster,
            timestep,
            total_steps,
            handle: None,
        })
    }

    pub fn with_handle(mut self, handle: Option<String>) -> Self {
        self.handle = handle;
        self
    }

    pub fn raster(&self) -> &ImageBuffer {
        &self.raster
    }

    pub fn timestep(&self) -> u32 {
        self.timestep
    }

    pub fn total_steps(&self) -> u32 {
        self.total_steps
    }

    pub fn handle(&self) -> Option<&str> {
        self.handle.as_deref()
    }

    pub fn dims(&self) -> (u32, u32) {
        self.raster.dims()
    }

    /// Decoded clean image; only meaningful once `t == N` (or `t == 0`).
    pub fn into_image(self) -> ImageBuffer {
        self.raster
    }
}

/// Starting point of a diffusion call.
#[derive(Debug, Clone, Copy)]
pub enum DiffusionInput<'a> {
    Clean(&'a ImageBuffer),
    Noisy(&'a NoisyState),
}

impl DiffusionInput<'_> {
    pub fn raster(&self) -> &ImageBuffer {
        match self {
            DiffusionInput::Clean(img) => img,
            DiffusionInput::Noisy(state) => state.raster(),
        }
    }
}

/// Denoising interval `start → end` out of `total` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRange {
    pub start: u32,
    pub end: u32,
    pub total: u32,
}

impl StepRange {
    pub fn new(start: u32, end: u32, total: u32) -> Result<Self> {
        let r = Self { start, end, total };
        r.validate()?;
        Ok(r)
    }

    pub fn full(total: u32) -> Result<Self> {
        Self::new(0, total, total)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start >= self.end || self.end > self.total {
            return Err(Error::TimestepOrder {
                start: self.start,
                end: self.end,
                total: self.total,
            });
        }
        Ok(())
    }
}

/// Decoder activations laid out as a `grid_w × grid_h` grid of `dim`-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid_w: u32,
    pub grid_h: u32,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(grid_w: u32, grid_h: u32, dim: usize, data: Vec<f32>) -> Result<Self> {
        if grid_w == 0 || grid_h == 0 || dim == 0 {
            return Err(Error::InvalidDimensions(grid_w, grid_h));
        }
        if data.len() != grid_w as usize * grid_h as usize * dim {
            return Err(BackendError::Contract(format!(
                "feature buffer of {} values does not match {grid_w}x{grid_h}x{dim}",
                data.len()
            ))
            .into());
        }
        Ok(Self {
            grid_w,
            grid_h,
            dim,
            data,
        })
    }

    pub fn cells(&self) -> usize {
        self.grid_w as usize * self.grid_h as usize
    }

    /// Feature vector of cell `i` in row-major order.
    pub fn cell(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// One detected object.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub mask: BinaryMask,
    pub category: String,
    pub score: f64,
}

pub type InstanceSet = Vec<Instance>;

/// Pairwise depth relation between two masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthVerdict {
    FirstCloser,
    SecondCloser,
    Unknown,
}

impl DepthVerdict {
    pub fn flipped(self) -> Self {
        match self {
            DepthVerdict::FirstCloser => DepthVerdict::SecondCloser,
            DepthVerdict::SecondCloser => DepthVerdict::FirstCloser,
            DepthVerdict::Unknown => DepthVerdict::Unknown,
        }
    }
}

/// Name and version a backend reports about itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    pub version: String,
}

pub trait Inpainter: Send + Sync {
    fn info(&self) -> BackendInfo;

    /// Run denoising steps `range.start → range.end`, regenerating the pixels
    /// under `mask` conditioned on `prompt`.
    fn diffuse_range(
        &self,
        input: DiffusionInput<'_>,
        mask: &BinaryMask,
        prompt: &str,
        range: StepRange,
        seed: u64,
    ) -> Result<NoisyState>;

    /// Forward-noise a clean image to timestep `k`.
    fn add_noise(&self, image: &ImageBuffer, k: u32, total: u32, seed: u64) -> Result<NoisyState>;

    fn extract_decoder_features(&self, state: &NoisyState, layer: u32) -> Result<FeatureMap>;

    /// True when the handle cannot serve overlapping calls.
    fn single_flight(&self) -> bool {
        false
    }

    fn ping(&self) -> Result<BackendInfo> {
        Ok(self.info())
    }
}

pub trait Segmenter: Send + Sync {
    fn info(&self) -> BackendInfo;
    fn segment_instances(&self, image: &ImageBuffer, vocabulary: &[String]) -> Result<InstanceSet>;
    fn single_flight(&self) -> bool {
        false
    }
    fn ping(&self) -> Result<BackendInfo> {
        Ok(self.info())
    }
}

pub trait DepthOrderer: Send + Sync {
    fn info(&self) -> BackendInfo;
    /// Whether `a` is closer to the camera than `b`.
    fn order_depth(&self, image: &ImageBuffer, a: &BinaryMask, b: &BinaryMask) -> Result<DepthVerdict>;
    fn single_flight(&self) -> bool {
        false
    }
    fn ping(&self) -> Result<BackendInfo> {
        Ok(self.info())
    }
}

pub trait Remover: Send + Sync {
    fn info(&self) -> BackendInfo;
    /// Fill the masked region with plausible background.
    fn remove_objects(&self, image: &ImageBuffer, mask: &BinaryMask) -> Result<ImageBuffer>;
    fn single_flight(&self) -> bool {
        false
    }
    fn ping(&self) -> Result<BackendInfo> {
        Ok(self.info())
    }
}

/// External perceptual similarity (CLIP / DreamSim / LPIPS style).
pub trait MetricScorer: Send + Sync {
    fn info(&self) -> BackendInfo;
    fn score(
        &self,
        metric: &str,
        image: &ImageBuffer,
        reference: &ImageBuffer,
        prompt: &str,
    ) -> Result<f64>;
    fn ping(&self) -> Result<BackendInfo> {
        Ok(self.info())
    }
}

/// Serialises calls to a single-flight handle.
struct Gate(Option<Mutex<()>>);

impl Gate {
    fn new(single_flight: bool) -> Self {
        Gate(single_flight.then(|| Mutex::new(())))
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        match &self.0 {
            Some(m) => {
                let _guard = m.lock().unwrap_or_else(|e| e.into_inner());
                f()
            }
            None => f(),
        }
    }
}

/// One handle per model role, with contract checks around every call.
#[derive(Clone)]
pub struct Backends {
    inpainter: Arc<dyn Inpainter>,
    segmenter: Arc<dyn Segmenter>,
    depth: Arc<dyn DepthOrderer>,
    remover: Arc<dyn Remover>,
    metric: Option<Arc<dyn MetricScorer>>,
    gates: Arc<[Gate; 4]>,
}

/// Identities of the configured backends, recorded in manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIdentities {
    pub inpainter: BackendInfo,
    pub segmenter: BackendInfo,
    pub depth: BackendInfo,
    pub remover: BackendInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<BackendInfo>,
}

impl Backends {
    pub fn new(
        inpainter: Arc<dyn Inpainter>,
        segmenter: Arc<dyn Segmenter>,
        depth: Arc<dyn DepthOrderer>,
        remover: Arc<dyn Remover>,
    ) -> Self {
        let gates = Arc::new([
            Gate::new(inpainter.single_flight()),
            Gate::new(segmenter.single_flight()),
            Gate::new(depth.single_flight()),
            Gate::new(remover.single_flight()),
        ]);
        Self {
            inpainter,
            segmenter,
            depth,
            remover,
            metric: None,
            gates,
        }
    }

    /// All four roles served by one object.
    pub fn uniform<B>(backend: Arc<B>) -> Self
    where
        B: Inpainter + Segmenter + DepthOrderer + Remover + 'static,
    {
        Self::new(backend.clone(), backend.clone(), backend.clone(), backend)
    }

    pub fn with_metric(mut self, metric: Arc<dyn MetricScorer>) -> Self {
        self.metric = Some(metric);
        self
    }

    pub fn identities(&self) -> BackendIdentities {
        BackendIdentities {
            inpainter: self.inpainter.info(),
            segmenter: self.segmenter.info(),
            depth: self.depth.info(),
            remover: self.remover.info(),
            metric: self.metric.as_ref().map(|m| m.info()),
        }
    }

    pub fn has_metric(&self) -> bool {
        self.metric.is_some()
    }

    /// Ping every role; one entry per role, in a fixed order.
    pub fn ping_all(&self) -> Vec<(&'static str, Result<BackendInfo>)> {
        let mut out = vec![
            ("inpainter", self.inpainter.ping()),
            ("segmenter", self.segmenter.ping()),
            ("depth", self.depth.ping()),
            ("remover", self.remover.ping()),
        ];
        if let Some(m) = &self.metric {
            out.push(("metric", m.ping()));
        }
        out
    }

    pub fn diffuse_range(
        &self,
        input: DiffusionInput<'_>,
        mask: &BinaryMask,
        prompt: &str,
        range: StepRange,
        seed: u64,
    ) -> Result<NoisyState> {
        range.validate()?;
        ensure_same(input.raster().dims(), mask.dims())?;
        match input {
            DiffusionInput::Clean(_) if range.start != 0 => {
                return Err(Error::TimestepMismatch(0, range.start));
            }
            DiffusionInput::Noisy(state) => {
                if state.timestep() != range.start {
                    return Err(Error::TimestepMismatch(state.timestep(), range.start));
                }
                if state.total_steps() != range.total {
                    return Err(Error::TimestepMismatch(state.total_steps(), range.total));
                }
            }
            _ => {}
        }
        let out = self.gates[0].run(|| {
            self.inpainter
                .diffuse_range(input, mask, prompt, range, seed)
        })?;
        if out.dims() != mask.dims() || out.timestep() != range.end {
            return Err(BackendError::Contract(format!(
                "diffuse_range returned {:?} at t={}, expected {:?} at t={}",
                out.dims(),
                out.timestep(),
                mask.dims(),
                range.end
            ))
            .into());
        }
        Ok(out)
    }

    pub fn add_noise(&self, image: &ImageBuffer, k: u32, total: u32, seed: u64) -> Result<NoisyState> {
        if k > total {
            return Err(Error::TimestepOutOfRange(k, total));
        }
        let out = self.gates[0].run(|| self.inpainter.add_noise(image, k, total, seed))?;
        if out.dims() != image.dims() || out.timestep() != k {
            return Err(BackendError::Contract("add_noise returned a mismatched state".into()).into());
        }
        Ok(out)
    }

    pub fn extract_decoder_features(&self, state: &NoisyState, layer: u32) -> Result<FeatureMap> {
        if !(1..=4).contains(&layer) {
            return Err(Error::InvalidLayer(layer));
        }
        if state.timestep() == 0 || state.timestep() >= state.total_steps() {
            return Err(Error::FeaturesUnavailable {
                timestep: state.timestep(),
                total: state.total_steps(),
            });
        }
        self.gates[0].run(|| self.inpainter.extract_decoder_features(state, layer))
    }

    pub fn segment_instances(&self, image: &ImageBuffer, vocabulary: &[String]) -> Result<InstanceSet> {
        let out = self.gates[1].run(|| self.segmenter.segment_instances(image, vocabulary))?;
        for inst in &out {
            if inst.mask.dims() != image.dims() {
                return Err(BackendError::Contract(format!(
                    "instance '{}' mask is {:?}, image is {:?}",
                    inst.category,
                    inst.mask.dims(),
                    image.dims()
                ))
                .into());
            }
            if !(0.0..=1.0).contains(&inst.score) {
                return Err(BackendError::Contract(format!(
                    "instance score {} outside [0, 1]",
                    inst.score
                ))
                .into());
            }
        }
        Ok(out)
    }

    pub fn order_depth(&self, image: &ImageBuffer, a: &BinaryMask, b: &BinaryMask) -> Result<DepthVerdict> {
        ensure_same(image.dims(), a.dims())?;
        ensure_same(image.dims(), b.dims())?;
        self.gates[2].run(|| self.depth.order_depth(image, a, b))
    }

    pub fn remove_objects(&self, image: &ImageBuffer, mask: &BinaryMask) -> Result<ImageBuffer> {
        ensure_same(image.dims(), mask.dims())?;
        let out = self.gates[3].run(|| self.remover.remove_objects(image, mask))?;
        if out.dims() != image.dims() {
            return Err(BackendError::Contract("remove_objects changed the image size".into()).into());
        }
        Ok(out)
    }

    /// `None` when no metric backend is configured.
    pub fn metric_score(
        &self,
        metric: &str,
        image: &ImageBuffer,
        reference: &ImageBuffer,
        prompt: &str,
    ) -> Option<Result<f64>> {
        self.metric
            .as_ref()
            .map(|m| m.score(metric, image, reference, prompt))
    }
}
