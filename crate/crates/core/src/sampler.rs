//! Completion procedures run on a framed crop: mixed-context sampling and
//! the plain and naive baselines.
//!
//! Mixed-context sampling denoises the object on a clean backdrop for the
//! first `k` steps, cuts the emerging object out of that noisy state by
//! clustering decoder features, composites it onto the object-removed
//! background noised to `k`, and finishes the remaining steps in context.

use serde::{Deserialize, Serialize};

use crate::backends::{Backends, DiffusionInput, NoisyState, StepRange};
use crate::config::{CleanBackground, PipelineConfig};
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::raster::{nearest, overlap_ratio, BinaryMask, ImageBuffer};

/// Replaces everything outside the query mask with a solid backdrop.
pub fn swap_background(image: &ImageBuffer, modal: &BinaryMask, clean: CleanBackground) -> Result<ImageBuffer> {
    match clean.rgb() {
        None => Ok(image.clone()),
        Some(rgb) => image.select(&ImageBuffer::filled(image.width(), image.height(), rgb)?, modal),
    }
}

/// Synthetic path: denoise the backdrop image over the occluder mask up to `k`.
pub fn denoise_synthetic(
    backends: &Backends,
    syn: &ImageBuffer,
    occ: &BinaryMask,
    prompt: &str,
    config: &PipelineConfig,
    seed: u64,
) -> Result<NoisyState> {
    let (k, n) = (config.composite_step, config.total_steps);
    if occ.is_empty() {
        return backends.add_noise(syn, k, n, seed);
    }
    backends.diffuse_range(DiffusionInput::Clean(syn), occ, prompt, StepRange::new(0, k, n)?, seed)
}

/// Background path: remove query and occluders, then noise to `k`.
pub fn object_removed_background(
    backends: &Backends,
    image: &ImageBuffer,
    modal: &BinaryMask,
    occ: &BinaryMask,
    config: &PipelineConfig,
    seed: u64,
) -> Result<NoisyState> {
    let removal = modal.union(occ)?;
    let bg = if removal.is_empty() {
        image.clone()
    } else {
        backends.remove_objects(image, &removal)?
    };
    backends.add_noise(&bg, config.composite_step, config.total_steps, seed)
}

/// Clustering of a noisy state and the clusters taken as the object.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSegmentation {
    pub mask: BinaryMask,
    pub grid_w: u32,
    pub grid_h: u32,
    /// Cluster label per feature cell, row-major.
    pub grid_labels: Vec<u8>,
    /// Overlap of each cluster with the modal mask, at crop resolution;
    /// `None` for clusters that vanish after upsampling.
    pub ratios: Vec<Option<f64>>,
    pub chosen: Vec<usize>,
}

/// Object mask at noise level `k` from clustered decoder features:
/// clusters overlapping the modal mask by more than the threshold, plus the
/// modal mask, limited to the modal and occluded regions.
pub fn segment_noisy_object(
    backends: &Backends,
    state: &NoisyState,
    modal: &BinaryMask,
    occ: &BinaryMask,
    config: &PipelineConfig,
) -> Result<ClusterSegmentation> {
    let features = backends.extract_decoder_features(state, config.decoder_layer)?;
    let labels = kmeans(
        &features.data,
        features.dim,
        config.cluster_count,
        config.kmeans_max_iter,
        config.rng_seed,
    );
    cluster_mask(&labels, features.grid_w, features.grid_h, modal, occ, config.overlap_threshold)
}

/// Selection step of [`segment_noisy_object`] over precomputed labels.
pub fn cluster_mask(
    labels: &[usize],
    grid_w: u32,
    grid_h: u32,
    modal: &BinaryMask,
    occ: &BinaryMask,
    threshold: f64,
) -> Result<ClusterSegmentation> {
    let (w, h) = modal.dims();
    let count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let label_at = |x: u32, y: u32| labels[(nearest(y, h, grid_h) * grid_w + nearest(x, w, grid_w)) as usize];
    let mut selected = modal.clone();
    let mut ratios = Vec::with_capacity(count);
    let mut chosen = Vec::new();
    for c in 0..count {
        let cluster = BinaryMask::from_fn(w, h, |x, y| label_at(x, y) == c)?;
        let ratio = match overlap_ratio(&cluster, modal) {
            Ok(r) => Some(r),
            Err(Error::UndefinedRatio) => None,
            Err(e) => return Err(e),
        };
        if ratio.is_some_and(|r| r > threshold) {
            selected = selected.union(&cluster)?;
            chosen.push(c);
        }
        ratios.push(ratio);
    }
    let mask = selected.intersect(&modal.union(occ)?)?;
    Ok(ClusterSegmentation {
        mask,
        grid_w,
        grid_h,
        grid_labels: labels.iter().map(|&l| l.min(255) as u8).collect(),
        ratios,
        chosen,
    })
}

/// `syn ⊙ M + bg ⊙ (1 − M)` on two states at the same timestep.
pub fn composite(syn_k: &NoisyState, bg_k: &NoisyState, mask: &BinaryMask) -> Result<NoisyState> {
    if syn_k.timestep() != bg_k.timestep() {
        return Err(Error::TimestepMismatch(syn_k.timestep(), bg_k.timestep()));
    }
    if syn_k.total_steps() != bg_k.total_steps() {
        return Err(Error::TimestepMismatch(syn_k.total_steps(), bg_k.total_steps()));
    }
    let raster = syn_k.raster().select(bg_k.raster(), mask)?;
    NoisyState::new(raster, syn_k.timestep(), syn_k.total_steps())
}

/// Finishes denoising a composited state over the occluder mask.
pub fn resume(
    backends: &Backends,
    composited: &NoisyState,
    occ: &BinaryMask,
    prompt: &str,
    seed: u64,
) -> Result<ImageBuffer> {
    let range = StepRange::new(composited.timestep(), composited.total_steps(), composited.total_steps())?;
    Ok(backends
        .diffuse_range(DiffusionInput::Noisy(composited), occ, prompt, range, seed)?
        .into_image())
}

/// Intermediates of one mixed-context run.
#[derive(Debug, Clone, PartialEq)]
pub struct McTrace {
    pub syn: ImageBuffer,
    pub syn_k: NoisyState,
    pub bg_k: NoisyState,
    pub amodal_k: BinaryMask,
    pub composite_k: NoisyState,
    pub clusters: ClusterSegmentation,
}

/// Manifest form of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub composite_step: u32,
    pub cluster_grid: (u32, u32),
    pub cluster_ratios: Vec<Option<f64>>,
    pub chosen_clusters: Vec<usize>,
    pub amodal_k_area: usize,
}

impl McTrace {
    pub fn summary(&self) -> McSummary {
        McSummary {
            composite_step: self.syn_k.timestep(),
            cluster_grid: (self.clusters.grid_w, self.clusters.grid_h),
            cluster_ratios: self.clusters.ratios.clone(),
            chosen_clusters: self.clusters.chosen.clone(),
            amodal_k_area: self.amodal_k.area(),
        }
    }
}

/// Mixed-context completion of a framed crop. The synthetic and background
/// paths run concurrently and meet at the composite.
pub fn mixed_context_complete(
    backends: &Backends,
    image: &ImageBuffer,
    modal: &BinaryMask,
    occ: &BinaryMask,
    prompt: &str,
    config: &PipelineConfig,
    seed: u64,
) -> Result<(ImageBuffer, McTrace)> {
    let (syn_path, bg_path) = rayon::join(
        || -> Result<_> {
            let syn = swap_background(image, modal, config.clean_background)?;
            let syn_k = denoise_synthetic(backends, &syn, occ, prompt, config, seed)?;
            let clusters = segment_noisy_object(backends, &syn_k, modal, occ, config)?;
            Ok((syn, syn_k, clusters))
        },
        || object_removed_background(backends, image, modal, occ, config, seed),
    );
    let (syn, syn_k, clusters) = syn_path?;
    let bg_k = bg_path?;
    let amodal_k = clusters.mask.clone();
    let composite_k = composite(&syn_k, &bg_k, &amodal_k)?;
    let out = resume(backends, &composite_k, occ, prompt, seed)?;
    Ok((
        out,
        McTrace {
            syn,
            syn_k,
            bg_k,
            amodal_k,
            composite_k,
            clusters,
        },
    ))
}

/// A single inpainting pass over the occluder mask.
pub fn plain_complete(
    backends: &Backends,
    image: &ImageBuffer,
    occ: &BinaryMask,
    prompt: &str,
    config: &PipelineConfig,
    seed: u64,
) -> Result<ImageBuffer> {
    let range = StepRange::full(config.total_steps)?;
    Ok(backends
        .diffuse_range(DiffusionInput::Clean(image), occ, prompt, range, seed)?
        .into_image())
}

/// Inpainting mask of the naive baseline: everything but the query.
pub fn naive_mask(modal: &BinaryMask) -> BinaryMask {
    modal.complement()
}

/// Regenerates everything outside the query object.
pub fn naive_outpaint(
    backends: &Backends,
    image: &ImageBuffer,
    modal: &BinaryMask,
    prompt: &str,
    config: &PipelineConfig,
    seed: u64,
) -> Result<ImageBuffer> {
    let range = StepRange::full(config.total_steps)?;
    Ok(backends
        .diffuse_range(DiffusionInput::Clean(image), &naive_mask(modal), prompt, range, seed)?
        .into_image())
}
