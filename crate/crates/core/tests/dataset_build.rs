mod common;

use std::path::Path;

use amodal_core::dataset::{
    build_dataset, load_manifest, load_pool, load_sample, manifest_hash, occlusion_rate, scene_from_sample,
    Difficulty, DatasetParams, PoolEntry,
};
use amodal_core::{io, run_pipeline, BinaryMask, ImageBuffer, PipelineConfig, QuerySpec, SamplerKind};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write_pool(dir: &Path, count: usize) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cats = ["bus", "donut", "cup"];
    let mut entries = Vec::new();
    for i in 0..count {
        let px: Vec<u8> = (0..48 * 48 * 3).map(|_| rng.random()).collect();
        let img = ImageBuffer::from_raw(48, 48, px).unwrap();
        let (x0, y0) = (rng.random_range(4..16), rng.random_range(4..16));
        let (w, h) = (rng.random_range(12..28), rng.random_range(12..28));
        let mask = rect(48, 48, [x0, y0, x0 + w, y0 + h]);
        io::write_image(&dir.join(format!("{i}.png")), &img).unwrap();
        io::write_mask(&dir.join(format!("{i}_m.png")), &mask).unwrap();
        entries.push(PoolEntry {
            id: format!("o{i}"),
            image: format!("{i}.png"),
            mask: format!("{i}_m.png"),
            category: cats[i % 3].into(),
            complete: if i == count - 1 { Some(false) } else { None },
            source: None,
        });
    }
    std::fs::write(dir.join("pool.json"), serde_json::to_vec(&entries).unwrap()).unwrap();
}

fn params(seed: u64) -> DatasetParams {
    DatasetParams {
        easy: 12,
        hard: 12,
        seed,
        ..DatasetParams::default()
    }
}

#[test]
fn samples_match_their_bands_and_recount_exactly() {
    let t = tempfile::tempdir().unwrap();
    write_pool(&t.path().join("pool"), 7);
    let pool = load_pool(&t.path().join("pool")).unwrap();
    assert_eq!(pool.len(), 6, "incomplete objects are dropped");
    let out = t.path().join("ds");
    let m = build_dataset(&pool, &params(1), &out).unwrap();
    assert_eq!(m.samples.len(), 24);
    assert_eq!(load_manifest(&out).unwrap(), m);
    for rec in &m.samples {
        let s = load_sample(&out, rec).unwrap();
        let (hidden, total, rate) = occlusion_rate(&s.gt_mask, &s.occluder_mask).unwrap();
        assert_eq!((hidden, total), (rec.occluded_pixels, rec.object_pixels));
        assert_eq!(rate, rec.occlusion_rate);
        assert!(rec.difficulty.band().contains(rate), "{} {}", rec.id, rate);
        assert_eq!(s.modal_mask, s.gt_mask.difference(&s.occluder_mask).unwrap());
        for (x, y) in s.occluder_mask.complement().iter_set() {
            assert_eq!(s.occluded_image.get(x, y), s.base_image.get(x, y));
        }
    }
    assert!(m.samples[..12].iter().all(|s| s.difficulty == Difficulty::Easy));
}

#[test]
fn same_seed_same_hash() {
    let t = tempfile::tempdir().unwrap();
    write_pool(&t.path().join("pool"), 5);
    let pool = load_pool(&t.path().join("pool")).unwrap();
    let a = build_dataset(&pool, &params(9), &t.path().join("a")).unwrap();
    let b = build_dataset(&pool, &params(9), &t.path().join("b")).unwrap();
    let c = build_dataset(&pool, &params(10), &t.path().join("c")).unwrap();
    assert_eq!(a.hash, b.hash);
    assert_eq!(a.hash, manifest_hash(&a).unwrap());
    assert_ne!(a.hash, c.hash);
}

#[test]
fn cooccurrence_table_picks_hard_occluders() {
    let t = tempfile::tempdir().unwrap();
    write_pool(&t.path().join("pool"), 7);
    let pool = load_pool(&t.path().join("pool")).unwrap();
    let table = [("bus", vec!["donut".to_string()]), ("donut", vec!["cup".into()]), ("cup", vec!["bus".into()])]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let p = DatasetParams {
        easy: 0,
        hard: 10,
        seed: 2,
        cooccurrence: Some(table),
        ..DatasetParams::default()
    };
    let m = build_dataset(&pool, &p, &t.path().join("ds")).unwrap();
    for s in &m.samples {
        let want = match s.category.as_str() {
            "bus" => "donut",
            "donut" => "cup",
            _ => "bus",
        };
        assert_eq!(s.occluder_category, want);
    }
}

#[test]
fn mock_scene_from_a_sample_recovers_the_hidden_object() {
    let t = tempfile::tempdir().unwrap();
    write_pool(&t.path().join("pool"), 5);
    let pool = load_pool(&t.path().join("pool")).unwrap();
    let out = t.path().join("ds");
    let m = build_dataset(&pool, &params(4), &out).unwrap();
    for rec in m.samples.iter().take(6) {
        let s = load_sample(&out, rec).unwrap();
        let scene = scene_from_sample(&s, &rec.category, &rec.occluder_category).unwrap();
        let b = mock(&scene);
        let seed_point = s.modal_mask.iter_set().next();
        let q = QuerySpec::new(rec.category.clone(), seed_point).unwrap();
        let bundle = run_pipeline(&s.occluded_image, &q, &PipelineConfig::default(), &b, SamplerKind::Mc, 0).unwrap();
        let mask: BinaryMask = bundle.mask_in_original().unwrap();
        assert_eq!(mask, s.gt_mask, "{}", rec.id);
        let img = bundle.image_in_original().unwrap();
        for (x, y) in s.gt_mask.iter_set() {
            assert_eq!(img.get(x, y), s.base_image.get(x, y));
        }
    }
}
