//! Pseudo-occlusion benchmark: paste one complete object over another and
//! keep the hidden object as ground truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::scene::{SceneLayer, ScriptedScene};
use crate::error::{Error, Result};
use crate::io;
use crate::raster::{BBox, BinaryMask, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    pub fn band(self) -> Band {
        match self {
            Difficulty::Easy => Band {
                lo: 0.20,
                hi: 0.50,
                hi_inclusive: false,
            },
            Difficulty::Hard => Band {
                lo: 0.50,
                hi: 0.80,
                hi_inclusive: true,
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        }
    }
}

/// Accepted occlusion rates, `[lo, hi)` or `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub hi_inclusive: bool,
}

impl Band {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            hi_inclusive: true,
        }
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.lo && if self.hi_inclusive { r <= self.hi } else { r < self.hi }
    }
}

/// Where and how large the occluder is pasted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub dx: u32,
    pub dy: u32,
    pub scale: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementParams {
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_attempts: u32,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self {
            scale_min: 0.3,
            scale_max: 1.5,
            max_attempts: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOcclusionSample {
    pub base_image: ImageBuffer,
    pub gt_mask: BinaryMask,
    pub occluded_image: ImageBuffer,
    pub modal_mask: BinaryMask,
    pub occluder_mask: BinaryMask,
    pub placement: Placement,
    pub object_pixels: usize,
    pub occluded_pixels: usize,
    pub occlusion_rate: f64,
}

/// `|object ∩ occluder| / |object|` as counts and ratio.
pub fn occlusion_rate(object: &BinaryMask, occluder: &BinaryMask) -> Result<(usize, usize, f64)> {
    let total = object.area();
    if total == 0 {
        return Err(Error::EmptyMask("object mask"));
    }
    let hidden = object.intersection_area(occluder)?;
    Ok((hidden, total, hidden as f64 / total as f64))
}

/// Cutout of an object: its image and mask cropped to the mask's bounding box.
pub fn cutout(image: &ImageBuffer, mask: &BinaryMask) -> Result<(ImageBuffer, BinaryMask)> {
    let b = mask.bbox().ok_or(Error::EmptyMask("occluder mask"))?;
    Ok((image.crop(b)?, mask.crop(b)?))
}

/// Pastes a cutout at a given placement; the cutout is resized to the
/// placement size with nearest-neighbour sampling.
pub fn compose(
    base: (&ImageBuffer, &BinaryMask),
    occluder: (&ImageBuffer, &BinaryMask),
    placement: Placement,
) -> Result<PseudoOcclusionSample> {
    let (bimg, bmask) = base;
    let (w, h) = bimg.dims();
    if bmask.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: bmask.dims(),
        });
    }
    let p = placement;
    BBox::new(p.dx, p.dy, p.dx + p.width, p.dy + p.height)?.check_within(w, h)?;
    let oimg = occluder.0.resize_nearest(p.width, p.height)?;
    let omask = occluder.1.resize_nearest(p.width, p.height)?;
    let placed = omask.placed(w, h, p.dx as i64, p.dy as i64)?;
    let mut occluded = bimg.clone();
    for (x, y) in placed.iter_set() {
        occluded.put(x, y, oimg.get(x - p.dx, y - p.dy));
    }
    let (hidden, total, rate) = occlusion_rate(bmask, &placed)?;
    Ok(PseudoOcclusionSample {
        base_image: bimg.clone(),
        gt_mask: bmask.clone(),
        occluded_image: occluded,
        modal_mask: bmask.difference(&placed)?,
        occluder_mask: placed,
        placement,
        object_pixels: total,
        occluded_pixels: hidden,
        occlusion_rate: rate,
    })
}

/// Rejection-samples a placement whose occlusion rate falls in `band`.
pub fn synthesize_occlusion<R: Rng + ?Sized>(
    base: (&ImageBuffer, &BinaryMask),
    occluder: (&ImageBuffer, &BinaryMask),
    band: Band,
    params: PlacementParams,
    rng: &mut R,
) -> Result<PseudoOcclusionSample> {
    let (cimg, cmask) = cutout(occluder.0, occluder.1)?;
    let (w, h) = base.0.dims();
    for _ in 0..params.max_attempts {
        let scale = rng.random_range(params.scale_min..=params.scale_max);
        let pw = ((cimg.width() as f64 * scale).round() as u32).max(1);
        let ph = ((cimg.height() as f64 * scale).round() as u32).max(1);
        if pw > w || ph > h {
            continue;
        }
        let dx = rng.random_range(0..=w - pw);
        let dy = rng.random_range(0..=h - ph);
        let placement = Placement {
            dx,
            dy,
            scale,
            width: pw,
            height: ph,
        };
        let sample = compose(base, (&cimg, &cmask), placement)?;
        if band.contains(sample.occlusion_rate) {
            return Ok(sample);
        }
    }
    Err(Error::BandUnachievable {
        lo: band.lo,
        hi: band.hi,
        attempts: params.max_attempts,
    })
}

/// Object with black everywhere else.
pub fn extract_on_black(image: &ImageBuffer, mask: &BinaryMask) -> Result<ImageBuffer> {
    image.select(&ImageBuffer::filled(image.width(), image.height(), [0, 0, 0])?, mask)
}

/// Mock scene whose ground truth is the sample: the hidden object behind
/// the pasted occluder, over a background with the object smeared out.
pub fn scene_from_sample(s: &PseudoOcclusionSample, category: &str, occluder_category: &str) -> Result<ScriptedScene> {
    let (w, h) = s.base_image.dims();
    let mut background = s.base_image.clone();
    for y in 0..h {
        let row_fill = (0..w).find(|&x| !s.gt_mask.get(x, y)).map(|x| s.base_image.get(x, y));
        let mut last = row_fill.unwrap_or([0, 0, 0]);
        for x in 0..w {
            if s.gt_mask.get(x, y) {
                background.put(x, y, last);
            } else {
                last = s.base_image.get(x, y);
            }
        }
    }
    let layers = vec![
        SceneLayer {
            category: category.to_string(),
            z: 1,
            score: 0.9,
            mask: s.gt_mask.clone(),
            appearance: s.base_image.clone(),
        },
        SceneLayer {
            category: occluder_category.to_string(),
            z: 2,
            score: 0.8,
            mask: s.occluder_mask.clone(),
            appearance: s.occluded_image.clone(),
        },
    ];
    ScriptedScene::new(background, layers, BBox::new(0, 0, w, h)?)
}

/// One object in a pool description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub category: String,
    /// Objects judged incomplete are never used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolObject {
    pub entry: PoolEntry,
    pub image: ImageBuffer,
    pub mask: BinaryMask,
}

/// Reads `pool.json` (a list of [`PoolEntry`]) from `dir`.
pub fn load_pool(dir: &Path) -> Result<Vec<PoolObject>> {
    let entries: Vec<PoolEntry> = serde_json::from_slice(&std::fs::read(dir.join("pool.json"))?)?;
    let mut out = Vec::new();
    for entry in entries {
        if entry.complete == Some(false) {
            continue;
        }
        let image = io::read_image(&dir.join(&entry.image))?;
        let mask = io::read_mask(&dir.join(&entry.mask))?;
        if image.dims() != mask.dims() {
            return Err(Error::DimensionMismatch {
                expected: image.dims(),
                actual: mask.dims(),
            });
        }
        if mask.is_empty() {
            return Err(Error::Config(format!("pool object '{}' has an empty mask", entry.id)));
        }
        out.push(PoolObject { entry, image, mask });
    }
    Ok(out)
}

/// Category → occluder categories ranked by co-occurrence.
pub type CooccurrenceTable = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub easy: usize,
    pub hard: usize,
    pub seed: u64,
    pub placement: PlacementParams,
    /// Base/occluder pairs tried per sample before giving up.
    pub pair_attempts: u32,
    /// When set, hard samples use the top co-occurring category present.
    pub cooccurrence: Option<CooccurrenceTable>,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            easy: 0,
            hard: 0,
            seed: 0,
            placement: PlacementParams::default(),
            pair_attempts: 50,
            cooccurrence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub difficulty: Difficulty,
    pub category: String,
    pub occluder_category: String,
    pub base_id: String,
    pub occluder_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub placement: Placement,
    pub object_pixels: usize,
    pub occluded_pixels: usize,
    pub occlusion_rate: f64,
    /// File name → sha256 of its pixel data.
    pub files: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub easy: usize,
    pub hard: usize,
    pub samples: Vec<SampleRecord>,
    pub hash: String,
}

pub const SAMPLE_FILES: [&str; 5] = ["base.png", "gt_mask.png", "occluded.png", "modal_mask.png", "occluder_mask.png"];

fn pixel_hash(bytes: &[u8], dims: (u32, u32)) -> String {
    let mut h = Sha256::new();
    h.update(dims.0.to_le_bytes());
    h.update(dims.1.to_le_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn mask_bytes(m: &BinaryMask) -> Vec<u8> {
    m.bits().iter().map(|&b| b as u8).collect()
}

fn sample_hashes(s: &PseudoOcclusionSample) -> Vec<(String, String)> {
    let img = |i: &ImageBuffer| pixel_hash(i.as_raw(), i.dims());
    let msk = |m: &BinaryMask| pixel_hash(&mask_bytes(m), m.dims());
    vec![
        (SAMPLE_FILES[0].into(), img(&s.base_image)),
        (SAMPLE_FILES[1].into(), msk(&s.gt_mask)),
        (SAMPLE_FILES[2].into(), img(&s.occluded_image)),
        (SAMPLE_FILES[3].into(), msk(&s.modal_mask)),
        (SAMPLE_FILES[4].into(), msk(&s.occluder_mask)),
    ]
}

pub fn manifest_hash(m: &DatasetManifest) -> Result<String> {
    let mut c = m.clone();
    c.hash = String::new();
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&c)?)))
}

fn pick_occluder(pool: &[PoolObject], base: usize, difficulty: Difficulty, table: Option<&CooccurrenceTable>, rng: &mut ChaCha8Rng) -> usize {
    let others: Vec<usize> = (0..pool.len()).filter(|&i| i != base || pool.len() == 1).collect();
    if difficulty == Difficulty::Hard {
        if let Some(ranked) = table.and_then(|t| t.get(&pool[base].entry.category)) {
            for cat in ranked {
                let hits: Vec<usize> = others
                    .iter()
                    .copied()
                    .filter(|&i| &pool[i].entry.category == cat)
                    .collect();
                if !hits.is_empty() {
                    return hits[rng.random_range(0..hits.len())];
                }
            }
        }
    }
    others[rng.random_range(0..others.len())]
}

fn synthesize_one(
    pool: &[PoolObject],
    index: usize,
    difficulty: Difficulty,
    params: &DatasetParams,
) -> Result<(SampleRecord, PseudoOcclusionSample)> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64);
    let id = format!("{}_{:05}", difficulty.as_str(), index);
    for _ in 0..params.pair_attempts.max(1) {
        let b = rng.random_range(0..pool.len());
        let o = pick_occluder(pool, b, difficulty, params.cooccurrence.as_ref(), &mut rng);
        let (base, occ) = (&pool[b], &pool[o]);
        match synthesize_occlusion(
            (&base.image, &base.mask),
            (&occ.image, &occ.mask),
            difficulty.band(),
            params.placement,
            &mut rng,
        ) {
            Ok(s) => {
                let record = SampleRecord {
                    id,
                    difficulty,
                    category: base.entry.category.clone(),
                    occluder_category: occ.entry.category.clone(),
                    base_id: base.entry.id.clone(),
                    occluder_id: occ.entry.id.clone(),
                    source: base.entry.source.clone(),
                    placement: s.placement,
                    object_pixels: s.object_pixels,
                    occluded_pixels: s.occluded_pixels,
                    occlusion_rate: s.occlusion_rate,
                    files: sample_hashes(&s),
                };
                return Ok((record, s));
            }
            Err(Error::BandUnachievable { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    let band = difficulty.band();
    Err(Error::BandUnachievable {
        lo: band.lo,
        hi: band.hi,
        attempts: params.placement.max_attempts * params.pair_attempts.max(1),
    })
}

fn write_sample(dir: &Path, s: &PseudoOcclusionSample) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_image(&dir.join(SAMPLE_FILES[0]), &s.base_image)?;
    io::write_mask(&dir.join(SAMPLE_FILES[1]), &s.gt_mask)?;
    io::write_image(&dir.join(SAMPLE_FILES[2]), &s.occluded_image)?;
    io::write_mask(&dir.join(SAMPLE_FILES[3]), &s.modal_mask)?;
    io::write_mask(&dir.join(SAMPLE_FILES[4]), &s.occluder_mask)?;
    Ok(())
}

/// Synthesizes the requested samples in parallel and writes them under
/// `out/samples/<id>/` with `out/manifest.json`.
pub fn build_dataset(pool: &[PoolObject], params: &DatasetParams, out: &Path) -> Result<DatasetManifest> {
    if pool.is_empty() {
        return Err(Error::Config("object pool is empty".into()));
    }
    let jobs: Vec<(usize, Difficulty)> = (0..params.easy)
        .map(|i| (i, Difficulty::Easy))
        .chain((0..params.hard).map(|j| (params.easy + j, Difficulty::Hard)))
        .collect();
    let samples_dir = out.join("samples");
    let records: Vec<SampleRecord> = jobs
        .par_iter()
        .map(|&(i, d)| {
            let (record, sample) = synthesize_one(pool, i, d, params)?;
            write_sample(&samples_dir.join(&record.id), &sample)?;
            Ok(record)
        })
        .collect::<Result<_>>()?;
    let mut manifest = DatasetManifest {
        version: 1,
        seed: params.seed,
        easy: params.easy,
        hard: params.hard,
        samples: records,
        hash: String::new(),
    };
    manifest.hash = manifest_hash(&manifest)?;
    std::fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_manifest(dataset: &Path) -> Result<DatasetManifest> {
    Ok(serde_json::from_slice(&std::fs::read(dataset.join("manifest.json"))?)?)
}

pub fn sample_dir(dataset: &Path, id: &str) -> PathBuf {
    dataset.join("samples").join(id)
}

/// Reads a written sample back.
pub fn load_sample(dataset: &Path, record: &SampleRecord) -> Result<PseudoOcclusionSample> {
    let dir = sample_dir(dataset, &record.id);
    let need = |name: &str| {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingGroundTruth(format!("{} lacks {name}", record.id)))
        }
    };
    Ok(PseudoOcclusionSample {
        base_image: io::read_image(&need(SAMPLE_FILES[0])?)?,
        gt_mask: io::read_mask(&need(SAMPLE_FILES[1])?)?,
        occluded_image: io::read_image(&need(SAMPLE_FILES[2])?)?,
        modal_mask: io::read_mask(&need(SAMPLE_FILES[3])?)?,
        occluder_mask: io::read_mask(&need(SAMPLE_FILES[4])?)?,
        placement: record.placement,
        object_pixels: record.object_pixels,
        occluded_pixels: record.occluded_pixels,
        occlusion_rate: record.occlusion_rate,
    })
}
