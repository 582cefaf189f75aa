//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use amodal_core::backends::scene::{random_scene, RANDOM_QUERY};
use amodal_core::backends::{
    BackendInfo, Backends, DiffusionInput, FeatureMap, Inpainter, MockBackend, NoisyState, StepRange,
};
use amodal_core::bundle::read_bundle_outputs;
use amodal_core::curation::{decide, Label, Rule};
use amodal_core::dataset::{load_manifest, DatasetManifest};
use amodal_core::framing::{conditional_pad, square_crop, uncrop_overlay};
use amodal_core::occlusion::build_occlusion_report;
use amodal_core::sampler::{composite, denoise_synthetic, naive_outpaint, segment_noisy_object, swap_background};
use amodal_core::{io, BBox, BinaryMask, ImageBuffer, PipelineConfig, Side};
use common::{ok, p, write_pool};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let t = started.elapsed();
    if t > limit {
        Err(format!("took {t:.2?}, limit {limit:?}"))
    } else {
        Ok(t)
    }
}

fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> ImageBuffer {
    ImageBuffer::from_raw(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> BinaryMask {
    BinaryMask::from_bits(w, h, (0..w * h).map(|_| rng.random_bool(0.5)).collect()).unwrap()
}

fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
    BinaryMask::rect(w, h, BBox::new(x0, y0, x1, y1).unwrap()).unwrap()
}

// 1. Composite against a per-pixel oracle.
fn composite_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let syn = random_image(&mut rng, 64, 64);
        let bg = random_image(&mut rng, 64, 64);
        let m = random_mask(&mut rng, 64, 64);
        let k = rng.random_range(1..50);
        let out = composite(
            &NoisyState::new(syn.clone(), k, 50).unwrap(),
            &NoisyState::new(bg.clone(), k, 50).unwrap(),
            &m,
        )
        .map_err(|e| e.to_string())?;
        ensure!(out.timestep() == k, "case {case}: timestep {} != {k}", out.timestep());
        let (a, b, o) = (syn.as_raw(), bg.as_raw(), out.raster().as_raw());
        for (i, &bit) in m.bits().iter().enumerate() {
            let want = if bit { &a[i * 3..i * 3 + 3] } else { &b[i * 3..i * 3 + 3] };
            ensure!(&o[i * 3..i * 3 + 3] == want, "case {case}: pixel {i} differs");
        }
    }
    let t = within(Duration::from_secs(10), started)?;
    Ok(format!("1000 triples exact in {t:.2?}"))
}

fn manifest_iterations(dir: &Path) -> usize {
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    v["iterations"].as_array().unwrap().len()
}

// 2. Mock end to end through the binary.
fn mock_end_to_end(tmp: &Path) -> Outcome {
    let started = Instant::now();
    let mut notes = Vec::new();
    for (preset, query, want_iters) in [("surfer", "surfboard", 1), ("new-occluder", "car", 2)] {
        let scene = tmp.join(format!("e2e_{preset}"));
        ok(&["scene", "init", "--preset", preset, "--out", p(&scene)]);
        let out = scene.join("run");
        ok(&[
            "complete",
            "--image",
            p(&scene.join("image.png")),
            "--query",
            query,
            "--sampler",
            "mc",
            "--backend",
            &format!("mock:{}", p(&scene.join("scene.json"))),
            "--out",
            p(&out),
        ]);
        let iters = manifest_iterations(&out);
        ensure!(iters == want_iters, "{preset}: {iters} iterations, expected {want_iters}");
        let gt = io::read_mask(&scene.join("gt_mask.png")).unwrap();
        let pred = read_bundle_outputs(&out).unwrap().mask_in_original().unwrap();
        let iou = pred.iou(&gt).unwrap();
        ensure!(iou == 1.0, "{preset}: IoU {iou}");
        notes.push(format!("{preset} {iters} iter IoU {iou}"));
    }
    let t = within(Duration::from_secs(30), started)?;
    Ok(format!("{} in {t:.2?}", notes.join(", ")))
}

/// Reference decision rule on plain grids.
fn oracle_label(m: &BinaryMask, mp: &BinaryMask, gamma: u32, delta: u32, eps: f64) -> Label {
    let (w, h) = m.dims();
    let near = mp
        .iter_set()
        .any(|(x, y)| x.min(y).min(w - 1 - x).min(h - 1 - y) < gamma);
    if near {
        return Label::Incomplete;
    }
    // δ passes of a 5×5 kernel reach Chebyshev distance 2δ.
    let r = 2 * delta as i64;
    let pts: Vec<(i64, i64)> = m.iter_set().map(|(x, y)| (x as i64, y as i64)).collect();
    let covered = |x: u32, y: u32| {
        pts.iter()
            .any(|&(a, b)| (a - x as i64).abs() <= r && (b - y as i64).abs() <= r)
    };
    if mp.iter_set().all(|(x, y)| covered(x, y)) {
        return Label::Complete;
    }
    if mp.area() as f64 / m.area() as f64 > eps {
        Label::Incomplete
    } else {
        Label::Complete
    }
}

/// `extra` pixels row-major in a 10-wide block at (x0, y0).
fn block(w: u32, h: u32, x0: u32, y0: u32, extra: u32) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| {
        x >= x0 && y >= y0 && x < x0 + 10 && (y - y0) * 10 + (x - x0) < extra
    })
    .unwrap()
}

// 3. Curation decision table.
fn curation_table() -> Outcome {
    let started = Instant::now();
    let rule = Rule {
        gamma: 2,
        delta: 4,
        epsilon: 1.2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for case in 0..200 {
        let (w, h) = (96, 96);
        let (mw, mh) = (10 * rng.random_range(1..=2u32), 10);
        let (x0, y0) = (rng.random_range(12..=20u32), rng.random_range(12..=30u32));
        let m = rect(w, h, x0, y0, x0 + mw, y0 + mh);
        let area = (mw * mh) as f64;
        let extra = |ratio: f64| ((ratio - 1.0) * area).round() as u32;
        let kind = case % 8;
        let mp = match kind {
            0 => m.clone(),
            1 => m.union(&rect(w, h, 1, y0, x0, y0 + 1)).unwrap(),
            2 => m.union(&rect(w, h, 3, y0, x0, y0 + 1)).unwrap(),
            3 => {
                let ring = m.dilate(4).difference(&m).unwrap();
                let keep: Vec<bool> = ring.bits().iter().map(|&b| b && rng.random_bool(0.3)).collect();
                m.union(&BinaryMask::from_bits(w, h, keep).unwrap()).unwrap()
            }
            4 => m.union(&block(w, h, 60, 60, extra(1.19))).unwrap(),
            5 => m.union(&block(w, h, 60, 60, extra(1.21))).unwrap(),
            6 => m.union(&block(w, h, 60, 60, extra(1.5))).unwrap(),
            _ => {
                let bx = rng.random_range(0..80u32);
                let by = rng.random_range(0..80u32);
                let blob = rect(w, h, bx, by, bx + rng.random_range(1..16), by + rng.random_range(1..16));
                m.union(&blob).unwrap()
            }
        };
        let ratio = mp.area() as f64 / area;
        let want = oracle_label(&m, &mp, 2, 4, 1.2);
        let got = decide(&m, &mp, rule).map_err(|e| e.to_string())?;
        ensure!(
            got.label == want,
            "case {case} (kind {kind}, ratio {ratio:.3}): rule says {:?}, oracle {:?}",
            got.label,
            want
        );
        ensure!((got.area_ratio - ratio).abs() < 1e-12, "case {case}: ratio {}", got.area_ratio);
        *counts.entry(format!("{:?}", got.reason)).or_default() += 1;
    }
    let t = within(Duration::from_secs(5), started)?;
    ensure!(counts.len() == 4, "only reached {counts:?}");
    Ok(format!("200/200 agree in {t:.2?}, {counts:?}"))
}

// 4. Cluster recovery on random mock scenes.
fn cluster_recovery() -> Outcome {
    let config = PipelineConfig::default();
    for seed in 0..50u64 {
        let scene = random_scene(seed).build(Path::new(".")).unwrap();
        let b = Backends::uniform(Arc::new(MockBackend::new(scene.clone())));
        let q = scene.layer_index(RANDOM_QUERY).unwrap();
        let img = scene.photo_image();
        let modal = scene.visible_mask_in_photo(q).unwrap();
        let object = scene.layer_mask_in_photo(q).unwrap();
        let report =
            build_occlusion_report(&img, &modal, RANDOM_QUERY, &config, &b).map_err(|e| e.to_string())?;
        let occ = report.occluder_union;
        let syn = swap_background(&img, &modal, config.clean_background).unwrap();
        let syn_k = denoise_synthetic(&b, &syn, &occ, RANDOM_QUERY, &config, seed).map_err(|e| e.to_string())?;
        let seg = segment_noisy_object(&b, &syn_k, &modal, &occ, &config).map_err(|e| e.to_string())?;
        ensure!(modal.is_subset_of(&seg.mask).unwrap(), "seed {seed}: modal not kept");
        ensure!(
            seg.mask.is_subset_of(&modal.union(&occ).unwrap()).unwrap(),
            "seed {seed}: mask leaves modal ∪ occ"
        );
        let want = object.union(&modal).unwrap();
        ensure!(
            seg.mask == want,
            "seed {seed}: {} pixels, object has {}",
            seg.mask.area(),
            want.area()
        );
    }
    Ok("50/50 scenes recover the object mask".into())
}

// 5. Framing round trip.
fn framing_round_trip() -> Outcome {
    const LAMBDA: u32 = 10;
    let (alpha, beta) = (60, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut padded_cases = 0;
    for case in 0..500 {
        let (w, h) = (rng.random_range(16..80u32), rng.random_range(16..80u32));
        let img = random_image(&mut rng, w, h);
        let x0 = rng.random_range(0..w);
        let y0 = rng.random_range(0..h);
        let x1 = rng.random_range(x0 + 1..=w);
        let y1 = rng.random_range(y0 + 1..=h);
        let modal = rect(w, h, x0, y0, x1, y1);
        let occ = random_mask(&mut rng, w, h).difference(&modal).unwrap();

        let sides = modal.touches_boundary(LAMBDA);
        let expect = |side: Side| {
            modal.iter_set().any(|(x, y)| match side {
                Side::Left => x < LAMBDA,
                Side::Top => y < LAMBDA,
                Side::Right => w - 1 - x < LAMBDA,
                Side::Bottom => h - 1 - y < LAMBDA,
            })
        };
        let padded = conditional_pad(&img, &occ, &modal, sides, alpha + beta).map_err(|e| e.to_string())?;
        let pad = padded.transform.pad;
        for (side, amount) in [
            (Side::Left, pad.left),
            (Side::Top, pad.top),
            (Side::Right, pad.right),
            (Side::Bottom, pad.bottom),
        ] {
            ensure!(sides.contains(side) == expect(side), "case {case}: {side:?} misreported");
            ensure!((amount > 0) == expect(side), "case {case}: padding {amount} on {side:?}");
        }
        if !sides.is_empty() {
            padded_cases += 1;
        }
        let framed = square_crop(&padded, alpha, beta, !sides.is_empty()).map_err(|e| e.to_string())?;
        let mut completed = framed.image.clone();
        for (x, y) in framed.occ.iter_set() {
            completed.put(x, y, [7, 7, 7]);
        }
        let amodal = framed.modal.union(&framed.occ).unwrap();
        let overlay = uncrop_overlay(&completed, &amodal, &framed.transform, &img).map_err(|e| e.to_string())?;
        let (ox, oy) = overlay.origin;
        let t = framed.transform;
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = t.to_framed((x as i64, y as i64));
                let inside = fx >= 0 && fy >= 0 && (fx as u32) < t.crop.width() && (fy as u32) < t.crop.height();
                if !(inside && framed.occ.get(fx as u32, fy as u32)) {
                    ensure!(
                        overlay.image.get(ox + x, oy + y) == img.get(x, y),
                        "case {case}: pixel ({x}, {y}) changed"
                    );
                }
            }
        }
    }
    Ok(format!("500 cases, {padded_cases} padded"))
}

fn recount(dir: &Path, m: &DatasetManifest) -> Result<(), String> {
    for s in &m.samples {
        let d = dir.join("samples").join(&s.id);
        let gt = io::read_mask(&d.join("gt_mask.png")).map_err(|e| e.to_string())?;
        let occluder = io::read_mask(&d.join("occluder_mask.png")).map_err(|e| e.to_string())?;
        let hidden = gt.bits().iter().zip(occluder.bits()).filter(|(a, b)| **a && **b).count();
        let rate = hidden as f64 / gt.area() as f64;
        let ok = match s.difficulty.as_str() {
            "easy" => (0.2..0.5).contains(&rate),
            "hard" => (0.5..=0.8).contains(&rate),
            other => return Err(format!("{}: difficulty {other}", s.id)),
        };
        ensure!(ok, "{}: recounted rate {rate:.4} outside the {} band", s.id, s.difficulty.as_str());
        ensure!((rate - s.occlusion_rate).abs() < 1e-9, "{}: recorded rate {}", s.id, s.occlusion_rate);
    }
    Ok(())
}

// 6. Dataset bands and determinism.
fn dataset_bands(tmp: &Path) -> Outcome {
    let started = Instant::now();
    let pool = write_pool(&tmp.join("pool"), 24, 6);
    let mut hashes = Vec::new();
    for run in ["ds_a", "ds_b"] {
        let out = tmp.join(run);
        ok(&["dataset", "build", "--pool", p(&pool), "--easy", "100", "--hard", "100", "--seed", "6", "--out", p(&out)]);
        let m = load_manifest(&out).map_err(|e| e.to_string())?;
        let easy = m.samples.iter().filter(|s| s.difficulty.as_str() == "easy").count();
        ensure!(easy == 100 && m.samples.len() == 200, "{} samples, {easy} easy", m.samples.len());
        recount(&out, &m)?;
        hashes.push(m.hash);
    }
    ensure!(hashes[0] == hashes[1], "hashes differ: {} vs {}", hashes[0], hashes[1]);
    let t = within(Duration::from_secs(120), started)?;
    Ok(format!("200 samples in band, hash {} stable, {t:.2?}", &hashes[0][..12]))
}

/// Inpainter that records masks and returns its input unchanged.
struct Recorder(Mutex<Vec<BinaryMask>>);

impl Inpainter for Recorder {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "recorder".into(),
            version: "0".into(),
        }
    }

    fn diffuse_range(
        &self,
        input: DiffusionInput<'_>,
        mask: &BinaryMask,
        _prompt: &str,
        range: StepRange,
        _seed: u64,
    ) -> amodal_core::Result<NoisyState> {
        self.0.lock().unwrap().push(mask.clone());
        NoisyState::new(input.raster().clone(), range.end, range.total)
    }

    fn add_noise(&self, image: &ImageBuffer, k: u32, total: u32, _seed: u64) -> amodal_core::Result<NoisyState> {
        NoisyState::new(image.clone(), k, total)
    }

    fn extract_decoder_features(&self, state: &NoisyState, _layer: u32) -> amodal_core::Result<FeatureMap> {
        let (w, h) = state.dims();
        FeatureMap::new(w, h, 1, vec![0.0; (w * h) as usize])
    }
}

// 7. Naive baseline mask.
fn naive_mask_is_complement() -> Outcome {
    let (scene, _) = {
        let p = amodal_core::backends::scene::preset("unoccluded").unwrap();
        (p.file.build(Path::new(".")).unwrap(), p.query)
    };
    let mock = Arc::new(MockBackend::new(scene));
    let rec = Arc::new(Recorder(Mutex::new(Vec::new())));
    let b = Backends::new(rec.clone(), mock.clone(), mock.clone(), mock);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = PipelineConfig::default();
    for case in 0..100 {
        let (w, h) = (rng.random_range(8..64u32), rng.random_range(8..64u32));
        let img = random_image(&mut rng, w, h);
        let modal = random_mask(&mut rng, w, h);
        naive_outpaint(&b, &img, &modal, "thing", &config, case).map_err(|e| e.to_string())?;
        let sent = rec.0.lock().unwrap().pop().ok_or("no inpainter call")?;
        let complement = BinaryMask::from_bits(w, h, modal.bits().iter().map(|b| !b).collect()).unwrap();
        ensure!(sent == complement, "case {case}: inpainting mask is not the complement");
    }
    Ok("100/100 masks are the exact complement".into())
}

// 8. Byte-identical manifests across runs.
fn deterministic_manifest(tmp: &Path) -> Outcome {
    let scene = tmp.join("det_scene");
    ok(&["scene", "init", "--preset", "surfer", "--out", p(&scene)]);
    let backend = format!("mock:{}", p(&scene.join("scene.json")));
    let mut bytes = Vec::new();
    for run in ["det_a", "det_b"] {
        let out = tmp.join(run);
        ok(&[
            "complete",
            "--image",
            p(&scene.join("image.png")),
            "--query",
            "surfboard",
            "--seed",
            "11",
            "--backend",
            &backend,
            "--out",
            p(&out),
        ]);
        bytes.push(std::fs::read(out.join("manifest.json")).unwrap());
    }
    ensure!(bytes[0] == bytes[1], "manifest.json differs between runs");
    Ok(format!("{} bytes identical", bytes[0].len()))
}

fn sorted_keys(v: &serde_json::Value) -> Vec<String> {
    let mut k: Vec<String> = v.as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default();
    k.sort();
    k
}

fn strings(v: &serde_json::Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

// 9. Report formats: the eval table schema and curation metrics.
fn report_formats(tmp: &Path) -> Outcome {
    let golden: serde_json::Value =
        serde_json::from_str(include_str!("golden/eval_report_schema.json")).unwrap();
    let pool = write_pool(&tmp.join("fmt_pool"), 12, 9);
    let ds = tmp.join("fmt_ds");
    ok(&["dataset", "build", "--pool", p(&pool), "--easy", "3", "--hard", "3", "--seed", "9", "--out", p(&ds)]);
    let report_path = tmp.join("fmt_report.json");
    ok(&[
        "eval",
        "--dataset",
        p(&ds),
        "--sampler",
        "mc",
        "--backend",
        "mock",
        "--metric-backend",
        "mock",
        "--out",
        p(&report_path),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    ensure!(sorted_keys(&report) == strings(&golden["report_keys"]), "report keys {:?}", sorted_keys(&report));
    let table = &report["table"];
    let mut tk = sorted_keys(table);
    tk.retain(|k| k != "by_source");
    ensure!(tk == strings(&golden["table_keys"]), "table keys {tk:?}");
    let metrics = strings(&report["metrics"]);
    for d in strings(&golden["difficulties"]) {
        let cells = sorted_keys(&table[&d]);
        let mut want = metrics.clone();
        want.sort();
        ensure!(cells == want, "{d} cells {cells:?}, metrics {want:?}");
        ensure!(
            table[&d].as_object().unwrap().values().all(|v| v.is_f64()),
            "{d} cells are not numbers"
        );
    }
    for row in report["summary"].as_array().unwrap() {
        ensure!(sorted_keys(row) == strings(&golden["summary_row_keys"]), "summary row {row}");
    }
    let csv = std::fs::read_to_string(report_path.with_extension("csv")).unwrap();
    let header = csv.lines().next().unwrap_or_default();
    ensure!(header == golden["csv_header"].as_str().unwrap(), "csv header {header}");
    ensure!(
        csv.lines().count() == 1 + report["summary"].as_array().unwrap().len(),
        "csv rows do not match summary"
    );

    // A whole cup and half a cup: the rule calls the first complete and
    // the second incomplete. Labels then fix the confusion at 35/35/15/15.
    let scene = tmp.join("fmt_cup");
    ok(&["scene", "init", "--preset", "unoccluded", "--out", p(&scene)]);
    let full = io::read_mask(&scene.join("gt_mask.png")).unwrap();
    let bb = full.bbox().unwrap();
    let half = rect(full.width(), full.height(), bb.x0, bb.y0, (bb.x0 + bb.x1) / 2, bb.y1);
    io::write_mask(&scene.join("full.png"), &full).unwrap();
    io::write_mask(&scene.join("half.png"), &half).unwrap();
    let mut entries = Vec::new();
    let mut labels = serde_json::Map::new();
    for i in 0..100 {
        let whole = i < 50;
        let id = format!("item_{i:03}");
        entries.push(serde_json::json!({
            "id": id,
            "image": "image.png",
            "mask": if whole { "full.png" } else { "half.png" },
            "category": "cup",
        }));
        // 35 of each prediction agree with the label, 15 do not.
        let truth = if whole { i < 35 } else { i >= 85 };
        labels.insert(id, serde_json::Value::Bool(truth));
    }
    std::fs::write(scene.join("batch.json"), serde_json::to_vec(&entries).unwrap()).unwrap();
    let labels_path = tmp.join("fmt_labels.json");
    std::fs::write(&labels_path, serde_json::to_vec(&labels).unwrap()).unwrap();
    let stdout = ok(&[
        "--json",
        "curate",
        "--batch",
        p(&scene),
        "--labels",
        p(&labels_path),
        "--backend",
        &format!("mock:{}", p(&scene.join("scene.json"))),
    ]);
    let cur: serde_json::Value = serde_json::from_str(&stdout).map_err(|e| format!("curate output: {e}"))?;
    let c = &cur["confusion"];
    let counts = [&c["tp"], &c["tn"], &c["fp"], &c["fn"]].map(|v| v.as_u64().unwrap_or(u64::MAX));
    ensure!(counts == [35, 35, 15, 15], "confusion tp/tn/fp/fn = {counts:?}");
    let acc = cur["accuracy"].as_f64().unwrap_or(f64::NAN);
    let prec = cur["precision"].as_f64().unwrap_or(f64::NAN);
    let rec = cur["recall"].as_f64().unwrap_or(f64::NAN);
    ensure!((acc - 0.70).abs() < 1e-12, "accuracy {acc}");
    ensure!((prec - 0.70).abs() < 1e-12 && (rec - 0.70).abs() < 1e-12, "precision {prec}, recall {rec}");
    Ok(format!("eval schema matches golden; curation accuracy {acc:.2}"))
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let criteria: Vec<(&str, Check)> = vec![
        ("composite oracle", Box::new(composite_oracle)),
        ("mock end to end", Box::new(|| mock_end_to_end(dir))),
        ("curation decision table", Box::new(curation_table)),
        ("cluster recovery", Box::new(cluster_recovery)),
        ("framing round trip", Box::new(framing_round_trip)),
        ("dataset bands", Box::new(|| dataset_bands(dir))),
        ("naive baseline mask", Box::new(naive_mask_is_complement)),
        ("deterministic manifest", Box::new(|| deterministic_manifest(dir))),
        ("report formats", Box::new(|| report_formats(dir))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
