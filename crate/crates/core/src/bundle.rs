//! On-disk layout of a completion bundle.
//!
//! ```text
//! original.png  amodal.png  amodal_mask.png  overlay.png  manifest.json
//! iter_<n>/     per-iteration inputs, crops and outputs
//! ```
//!
//! The manifest holds no wall-clock data, so identical runs write identical
//! manifests; `content_hash` covers every pixel written plus the manifest
//! fields themselves.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::BackendIdentities;
use crate::config::{PipelineConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::framing::FrameTransform;
use crate::io;
use crate::occlusion::OcclusionSummary;
use crate::pipeline::{CompletionBundle, QuerySpec, Termination};
use crate::raster::{BinaryMask, ImageBuffer};
use crate::sampler::McSummary;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationManifest {
    pub index: u32,
    pub performed: bool,
    pub occlusion: OcclusionSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform: Option<FrameTransform>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSummary>,
    pub segmentation_fallback: bool,
    pub input_modal_area: usize,
    pub amodal_area: usize,
    pub output_size: (u32, u32),
    pub origin: (i64, i64),
    /// File name → sha256 of its raw pixel data.
    pub artifacts: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub query: QuerySpec,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub config: PipelineConfig,
    pub backends: BackendIdentities,
    pub termination: Termination,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub original_size: (u32, u32),
    pub final_size: (u32, u32),
    /// Position of original pixel (0, 0) in `amodal.png`.
    pub origin: (i64, i64),
    /// Position of original pixel (0, 0) in `overlay.png`.
    pub overlay_origin: (u32, u32),
    pub modal_area: usize,
    pub amodal_area: usize,
    pub iterations: Vec<IterationManifest>,
    pub files: Vec<(String, String)>,
    pub content_hash: String,
}

fn image_hash(img: &ImageBuffer) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex::encode(h.finalize())
}

fn mask_hash(m: &BinaryMask) -> String {
    let mut h = Sha256::new();
    h.update(m.width().to_le_bytes());
    h.update(m.height().to_le_bytes());
    h.update(m.bits().iter().map(|&b| b as u8).collect::<Vec<_>>());
    hex::encode(h.finalize())
}

/// Collects files to write together with their pixel hashes.
struct Artifacts<'a> {
    dir: &'a Path,
    write: bool,
    listed: Vec<(String, String)>,
}

impl Artifacts<'_> {
    fn image(&mut self, name: &str, img: &ImageBuffer) -> Result<()> {
        if self.write {
            io::write_image(&self.dir.join(name), img)?;
        }
        self.listed.push((name.to_string(), image_hash(img)));
        Ok(())
    }

    fn mask(&mut self, name: &str, m: &BinaryMask) -> Result<()> {
        if self.write {
            io::write_mask(&self.dir.join(name), m)?;
        }
        self.listed.push((name.to_string(), mask_hash(m)));
        Ok(())
    }
}

/// Hash of the manifest with `content_hash` blanked.
pub fn compute_content_hash(manifest: &BundleManifest) -> Result<String> {
    let mut m = manifest.clone();
    m.content_hash = String::new();
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&m)?)))
}

fn build_manifest(bundle: &CompletionBundle, dir: &Path, write: bool, debug_trace: bool) -> Result<BundleManifest> {
    let mut top = Artifacts {
        dir,
        write,
        listed: Vec::new(),
    };
    top.image("original.png", &bundle.original)?;
    top.image("amodal.png", &bundle.final_image)?;
    top.mask("amodal_mask.png", &bundle.final_mask)?;
    top.image("overlay.png", &bundle.overlay.image)?;
    top.mask("modal_mask.png", &bundle.modal)?;

    let mut iterations = Vec::new();
    for rec in &bundle.iterations {
        let sub = dir.join(format!("iter_{}", rec.index));
        if write {
            std::fs::create_dir_all(&sub)?;
        }
        let mut a = Artifacts {
            dir: &sub,
            write,
            listed: Vec::new(),
        };
        a.image("input.png", &rec.input)?;
        a.mask("input_modal.png", &rec.input_modal)?;
        a.mask("occ.png", &rec.report.occluder_union)?;
        if let Some(w) = &rec.work {
            a.image("framed.png", &w.framed.image)?;
            a.mask("framed_modal.png", &w.framed.modal)?;
            a.mask("framed_occ.png", &w.framed.occ)?;
            a.image("completed.png", &w.completed)?;
            if let (Some(t), true) = (&w.trace, debug_trace) {
                a.image("syn.png", &t.syn)?;
                a.image("syn_k.png", t.syn_k.raster())?;
                a.image("bg_k.png", t.bg_k.raster())?;
                a.mask("amodal_k.png", &t.amodal_k)?;
                a.image("composite_k.png", t.composite_k.raster())?;
                let c = &t.clusters;
                if write {
                    io::write_label_png(&sub.join("clusters.png"), c.grid_w, c.grid_h, &c.grid_labels)?;
                }
                let mut h = Sha256::new();
                h.update(&c.grid_labels);
                a.listed.push(("clusters.png".into(), hex::encode(h.finalize())));
            }
        }
        a.image("output.png", &rec.output)?;
        a.mask("amodal_mask.png", &rec.amodal)?;
        let work = rec.work.as_ref();
        let manifest = IterationManifest {
            index: rec.index,
            performed: work.is_some(),
            occlusion: rec.report.summary(),
            transform: rec.transform().copied(),
            mc: work.and_then(|w| w.trace.as_ref()).map(|t| t.summary()),
            segmentation_fallback: work.is_some_and(|w| w.segmentation_fallback),
            input_modal_area: rec.input_modal.area(),
            amodal_area: rec.amodal.area(),
            output_size: rec.output.dims(),
            origin: rec.origin,
            artifacts: a.listed,
        };
        if write && debug_trace {
            std::fs::write(sub.join("trace.json"), serde_json::to_vec_pretty(&manifest)?)?;
        }
        iterations.push(manifest);
    }

    let mut manifest = BundleManifest {
        version: MANIFEST_VERSION,
        query: bundle.query.clone(),
        sampler: bundle.sampler,
        seed: bundle.seed,
        config: bundle.config.clone(),
        backends: bundle.backends.clone(),
        termination: bundle.termination,
        failure: bundle.failure.clone(),
        original_size: bundle.original.dims(),
        final_size: bundle.final_image.dims(),
        origin: bundle.origin,
        overlay_origin: bundle.overlay.origin,
        modal_area: bundle.modal.area(),
        amodal_area: bundle.final_mask.area(),
        iterations,
        files: top.listed,
        content_hash: String::new(),
    };
    manifest.content_hash = compute_content_hash(&manifest)?;
    Ok(manifest)
}

/// Manifest of a bundle without touching the filesystem.
pub fn manifest_for(bundle: &CompletionBundle) -> Result<BundleManifest> {
    build_manifest(bundle, Path::new("."), false, false)
}

/// Writes the bundle under `dir` and returns its manifest.
pub fn write_bundle(bundle: &CompletionBundle, dir: &Path, debug_trace: bool) -> Result<BundleManifest> {
    std::fs::create_dir_all(dir)?;
    let manifest = build_manifest(bundle, dir, true, debug_trace)?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// The parts of a bundle needed to judge or score it.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleOutputs {
    pub image: ImageBuffer,
    pub mask: BinaryMask,
    pub category: Option<String>,
    pub origin: (i64, i64),
    pub original_size: Option<(u32, u32)>,
}

impl BundleOutputs {
    /// Mask clipped to the original image, when its size is known.
    pub fn mask_in_original(&self) -> Result<BinaryMask> {
        match self.original_size {
            Some((w, h)) => self.mask.placed(w, h, -self.origin.0, -self.origin.1),
            None => Ok(self.mask.clone()),
        }
    }

    pub fn image_in_original(&self) -> Result<ImageBuffer> {
        let Some((w, h)) = self.original_size else {
            return Ok(self.image.clone());
        };
        let (ox, oy) = self.origin;
        let (iw, ih) = (self.image.width() as i64, self.image.height() as i64);
        ImageBuffer::from_fn(w, h, |x, y| {
            let (sx, sy) = (x as i64 + ox, y as i64 + oy);
            if sx >= 0 && sy >= 0 && sx < iw && sy < ih {
                self.image.get(sx as u32, sy as u32)
            } else {
                [0, 0, 0]
            }
        })
    }
}

/// Reads `amodal.png` and `amodal_mask.png`, plus the manifest when present.
pub fn read_bundle_outputs(dir: &Path) -> Result<BundleOutputs> {
    let image = io::read_image(&dir.join("amodal.png"))?;
    let mask = io::read_mask(&dir.join("amodal_mask.png"))?;
    if image.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            actual: mask.dims(),
        });
    }
    let manifest_path = dir.join("manifest.json");
    let (category, origin, original_size) = if manifest_path.exists() {
        let m: BundleManifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)?;
        (Some(m.query.category), m.origin, Some(m.original_size))
    } else {
        (None, (0, 0), None)
    };
    Ok(BundleOutputs {
        image,
        mask,
        category,
        origin,
        original_size,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backends::scene::preset;
    use crate::backends::{Backends, MockBackend};
    use crate::pipeline::run_pipeline;

    fn surfer_bundle(seed: u64) -> CompletionBundle {
        let p = preset("surfer").unwrap();
        let scene = p.file.build(Path::new(".")).unwrap();
        let b = Backends::uniform(Arc::new(MockBackend::new(scene.clone())));
        let q = QuerySpec::new(p.query, None).unwrap();
        run_pipeline(&scene.photo_image(), &q, &PipelineConfig::default(), &b, SamplerKind::Mc, seed).unwrap()
    }

    #[test]
    fn writes_the_layout_and_reads_it_back() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = surfer_bundle(0);
        let m = write_bundle(&bundle, dir.path(), true).unwrap();
        for f in ["original.png", "amodal.png", "amodal_mask.png", "overlay.png", "manifest.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        for f in ["syn.png", "clusters.png", "composite_k.png", "trace.json"] {
            assert!(dir.path().join("iter_1").join(f).exists(), "{f}");
        }
        assert_eq!(m.content_hash, compute_content_hash(&m).unwrap());
        let back = read_bundle_outputs(dir.path()).unwrap();
        assert_eq!(back.mask, bundle.final_mask);
        assert_eq!(back.category.as_deref(), Some("surfboard"));
    }

    #[test]
    fn manifest_is_reproducible_and_seed_sensitive() {
        let a = manifest_for(&surfer_bundle(3)).unwrap();
        let b = manifest_for(&surfer_bundle(3)).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let c = manifest_for(&surfer_bundle(4)).unwrap();
        assert_ne!(a.content_hash, c.content_hash);
    }
}
