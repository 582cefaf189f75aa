//! Deterministic in-process backends driven by a [`ScriptedScene`].
//!
//! Every call first locates the frame it receives inside the scene canvas
//! by voting over pixel colours that occur at exactly one canvas position.
//! That keeps the mock correct on padded, cropped and composited frames
//! without the pipeline having to pass any coordinates along.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::scene::{Owner, ScriptedScene, VOID};
use super::{
    BackendInfo, DepthOrderer, DepthVerdict, DiffusionInput, FeatureMap, Inpainter, Instance,
    InstanceSet, MetricScorer, NoisyState, Remover, Segmenter, StepRange,
};
use crate::error::{BackendError, Result};
use crate::raster::{nearest, BinaryMask, ImageBuffer};

pub struct MockBackend {
    scene: Arc<ScriptedScene>,
    /// Colour → unique canvas position, `None` when the colour is ambiguous.
    index: HashMap<[u8; 3], Option<(u32, u32)>>,
    generations: AtomicUsize,
    version: String,
}

/// Per-pixel owners of a frame, `None` for pixels no scene owner claims.
struct Reading {
    owners: Vec<Option<Owner>>,
    offset: (i64, i64),
    width: u32,
}

impl Reading {
    fn owner(&self, x: u32, y: u32) -> Option<Owner> {
        self.owners[(y * self.width + x) as usize]
    }
}

impl MockBackend {
    pub fn new(scene: ScriptedScene) -> Self {
        let mut index: HashMap<[u8; 3], Option<(u32, u32)>> = HashMap::new();
        let mut add = |c: [u8; 3], p: (u32, u32)| {
            index
                .entry(c)
                .and_modify(|e| {
                    if *e != Some(p) {
                        *e = None;
                    }
                })
                .or_insert(Some(p));
        };
        for y in 0..scene.height() {
            for x in 0..scene.width() {
                add(scene.background.get(x, y), (x, y));
            }
        }
        for layer in &scene.layers {
            for (x, y) in layer.mask.iter_set() {
                add(layer.appearance.get(x, y), (x, y));
            }
        }
        let version = format!("scene:{}", &scene.content_hash()[..12]);
        Self {
            scene: Arc::new(scene),
            index,
            generations: AtomicUsize::new(0),
            version,
        }
    }

    pub fn scene(&self) -> &ScriptedScene {
        &self.scene
    }

    /// Number of generation calls served so far.
    pub fn generations(&self) -> usize {
        self.generations.load(Ordering::SeqCst)
    }

    /// Canvas position of frame pixel (0, 0), by majority vote.
    pub fn localize(&self, img: &ImageBuffer) -> Option<(i64, i64)> {
        let mut votes: HashMap<(i64, i64), usize> = HashMap::new();
        for y in 0..img.height() {
            for x in 0..img.width() {
                if let Some(Some((sx, sy))) = self.index.get(&img.get(x, y)) {
                    *votes
                        .entry((*sx as i64 - x as i64, *sy as i64 - y as i64))
                        .or_default() += 1;
                }
            }
        }
        votes
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then((b.0 .1, b.0 .0).cmp(&(a.0 .1, a.0 .0))))
            .map(|(o, _)| o)
    }

    fn read(&self, img: &ImageBuffer) -> Option<Reading> {
        let offset = self.localize(img)?;
        let (w, h) = img.dims();
        let mut owners = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                owners.push(
                    self.canvas_pos(x, y, offset)
                        .and_then(|(sx, sy)| self.scene.owner_of(sx, sy, img.get(x, y))),
                );
            }
        }
        Some(Reading {
            owners,
            offset,
            width: w,
        })
    }

    fn read_or_fail(&self, img: &ImageBuffer, op: &str) -> Result<Reading> {
        self.read(img).ok_or_else(|| {
            BackendError::Contract(format!("{op}: frame does not match the mock scene")).into()
        })
    }

    fn canvas_pos(&self, x: u32, y: u32, offset: (i64, i64)) -> Option<(u32, u32)> {
        let (sx, sy) = (x as i64 + offset.0, y as i64 + offset.1);
        (sx >= 0 && sy >= 0 && sx < self.scene.width() as i64 && sy < self.scene.height() as i64)
            .then_some((sx as u32, sy as u32))
    }

    /// Layer owning most of the pixels under `mask`.
    fn majority_layer(&self, reading: &Reading, mask: &BinaryMask) -> Option<usize> {
        let mut counts = vec![0usize; self.scene.layers.len()];
        for (x, y) in mask.iter_set() {
            if let Some(Owner::Layer(i)) = reading.owner(x, y) {
                counts[i] += 1;
            }
        }
        let (best, &n) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (n > 0).then_some(best)
    }

    /// Regenerates the masked pixels from the scene; the layers left out are
    /// those the context gives no evidence of, adjusted by bias rules and
    /// the reveal script.
    fn generate(&self, img: &ImageBuffer, mask: &BinaryMask) -> Result<ImageBuffer> {
        let call = self.generations.fetch_add(1, Ordering::SeqCst);
        let reading = self.read_or_fail(img, "diffuse_range")?;
        let n = self.scene.layers.len();
        let mut context = vec![false; n];
        let mut background_in_context = false;
        for y in 0..img.height() {
            for x in 0..img.width() {
                if mask.get(x, y) {
                    continue;
                }
                match reading.owner(x, y) {
                    Some(Owner::Layer(i)) => context[i] = true,
                    Some(Owner::Background) => background_in_context = true,
                    None => {}
                }
            }
        }
        let mut hidden: Vec<bool> = context.iter().map(|&c| !c).collect();
        for rule in &self.scene.bias {
            let cue = match rule.cue {
                Owner::Background => background_in_context,
                Owner::Layer(i) => context[i],
            };
            if cue {
                hidden[rule.regenerate] = false;
            }
        }
        if let Some(step) = self.scene.reveal_script.get(call) {
            for &i in &step.hide {
                hidden[i] = true;
            }
            for &i in &step.show {
                hidden[i] = false;
            }
        }
        let render = self.scene.render(&hidden);
        let mut out = img.clone();
        for (x, y) in mask.iter_set() {
            let c = match self.canvas_pos(x, y, reading.offset) {
                Some((sx, sy)) => render.get(sx, sy),
                None => VOID,
            };
            out.put(x, y, c);
        }
        Ok(out)
    }
}

impl Inpainter for MockBackend {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "mock".into(),
            version: self.version.clone(),
        }
    }

    fn diffuse_range(
        &self,
        input: DiffusionInput<'_>,
        mask: &BinaryMask,
        _prompt: &str,
        range: StepRange,
        _seed: u64,
    ) -> Result<NoisyState> {
        let img = input.raster();
        // Content is fixed at the first step; later steps only continue it.
        let out = if range.start > 0 || mask.is_empty() {
            img.clone()
        } else {
            self.generate(img, mask)?
        };
        NoisyState::new(out, range.end, range.total)
    }

    fn add_noise(&self, image: &ImageBuffer, k: u32, total: u32, _seed: u64) -> Result<NoisyState> {
        NoisyState::new(image.clone(), k, total)
    }

    /// One-hot owner classes (unknown, background, one per layer), pooled
    /// over `feature_cell`-sized cells.
    fn extract_decoder_features(&self, state: &NoisyState, _layer: u32) -> Result<FeatureMap> {
        let img = state.raster();
        let (w, h) = img.dims();
        let dim = 2 + self.scene.layers.len();
        let cell = self.scene.feature_cell;
        let (gw, gh) = (w.div_ceil(cell), h.div_ceil(cell));
        let reading = self.read(img);
        let mut counts = vec![0usize; (gw * gh) as usize * dim];
        for y in 0..h {
            for x in 0..w {
                let class = match reading.as_ref().and_then(|r| r.owner(x, y)) {
                    None => 0,
                    Some(Owner::Background) => 1,
                    Some(Owner::Layer(i)) => 2 + i,
                };
                let (cx, cy) = (nearest(x, w, gw), nearest(y, h, gh));
                counts[(cy * gw + cx) as usize * dim + class] += 1;
            }
        }
        let mut data = vec![0f32; counts.len()];
        for (c, chunk) in counts.chunks(dim).enumerate() {
            let best = chunk
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            data[c * dim + best] = 1.0;
        }
        FeatureMap::new(gw, gh, dim, data)
    }
}

impl Segmenter for MockBackend {
    fn info(&self) -> BackendInfo {
        Inpainter::info(self)
    }

    /// Visible region of every layer present in the frame; the vocabulary
    /// is ignored.
    fn segment_instances(&self, image: &ImageBuffer, _vocabulary: &[String]) -> Result<InstanceSet> {
        let Some(reading) = self.read(image) else {
            return Ok(Vec::new());
        };
        let (w, h) = image.dims();
        let mut out = Vec::new();
        for (i, layer) in self.scene.layers.iter().enumerate() {
            let mask = BinaryMask::from_fn(w, h, |x, y| reading.owner(x, y) == Some(Owner::Layer(i)))?;
            if !mask.is_empty() {
                out.push(Instance {
                    mask,
                    category: layer.category.clone(),
                    score: layer.score,
                });
            }
        }
        Ok(out)
    }
}

impl DepthOrderer for MockBackend {
    fn info(&self) -> BackendInfo {
        Inpainter::info(self)
    }

    fn order_depth(&self, image: &ImageBuffer, a: &BinaryMask, b: &BinaryMask) -> Result<DepthVerdict> {
        let Some(reading) = self.read(image) else {
            return Ok(DepthVerdict::Unknown);
        };
        let (Some(la), Some(lb)) = (self.majority_layer(&reading, a), self.majority_layer(&reading, b)) else {
            return Ok(DepthVerdict::Unknown);
        };
        let unknown = self
            .scene
            .unknown_pairs
            .iter()
            .any(|&(p, q)| (p, q) == (la, lb) || (q, p) == (la, lb));
        let (za, zb) = (self.scene.layers[la].z, self.scene.layers[lb].z);
        Ok(if la == lb || unknown || za == zb {
            DepthVerdict::Unknown
        } else if za > zb {
            DepthVerdict::FirstCloser
        } else {
            DepthVerdict::SecondCloser
        })
    }
}

impl Remover for MockBackend {
    fn info(&self) -> BackendInfo {
        Inpainter::info(self)
    }

    fn remove_objects(&self, image: &ImageBuffer, mask: &BinaryMask) -> Result<ImageBuffer> {
        if mask.is_empty() {
            return Ok(image.clone());
        }
        let reading = self.read_or_fail(image, "remove_objects")?;
        let mut out = image.clone();
        for (x, y) in mask.iter_set() {
            let c = match self.canvas_pos(x, y, reading.offset) {
                Some((sx, sy)) => self.scene.background.get(sx, sy),
                None => VOID,
            };
            out.put(x, y, c);
        }
        Ok(out)
    }
}

/// Pixel agreement in `[0, 1]` standing in for any perceptual metric.
impl MetricScorer for MockBackend {
    fn info(&self) -> BackendInfo {
        Inpainter::info(self)
    }

    fn score(&self, _metric: &str, image: &ImageBuffer, reference: &ImageBuffer, _prompt: &str) -> Result<f64> {
        crate::raster::ensure_same(image.dims(), reference.dims())?;
        let diff: u64 = image
            .as_raw()
            .iter()
            .zip(reference.as_raw())
            .map(|(&a, &b)| a.abs_diff(b) as u64)
            .sum();
        Ok(1.0 - diff as f64 / (255.0 * image.as_raw().len() as f64))
    }
}
