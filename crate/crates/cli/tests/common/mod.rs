#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use amodal_core::dataset::PoolEntry;
use amodal_core::{io, BinaryMask, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_amodal"));
    for var in ["AMODAL_BACKEND_URL", "AMODAL_INPAINTER_URL", "AMODAL_SEGMENTER_URL", "AMODAL_DEPTH_URL", "AMODAL_REMOVER_URL", "AMODAL_METRIC_URL", "AMODAL_CONFIG"] {
        c.env_remove(var);
    }
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "amodal {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CATEGORIES: [&str; 4] = ["bus", "donut", "cup", "dog"];

/// Pool of noise-textured ellipses, one per file pair, with `pool.json`.
pub fn write_pool(dir: &Path, count: usize, seed: u64) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for i in 0..count {
        let (w, h) = (64u32, 64u32);
        let px: Vec<u8> = (0..w * h * 3).map(|_| rng.random()).collect();
        let image = ImageBuffer::from_raw(w, h, px).unwrap();
        let (cx, cy) = (rng.random_range(24.0..40.0), rng.random_range(24.0..40.0));
        let (rx, ry) = (rng.random_range(9.0..18.0), rng.random_range(9.0..18.0));
        let mask = BinaryMask::from_fn(w, h, |x, y| {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            dx * dx + dy * dy <= 1.0
        })
        .unwrap();
        let (img_name, mask_name) = (format!("obj_{i}.png"), format!("obj_{i}_mask.png"));
        io::write_image(&dir.join(&img_name), &image).unwrap();
        io::write_mask(&dir.join(&mask_name), &mask).unwrap();
        entries.push(PoolEntry {
            id: format!("obj_{i}"),
            image: img_name,
            mask: mask_name,
            category: CATEGORIES[i % CATEGORIES.len()].into(),
            complete: Some(true),
            source: Some(if i % 2 == 0 { "coco" } else { "openimages" }.into()),
        });
    }
    std::fs::write(dir.join("pool.json"), serde_json::to_vec_pretty(&entries).unwrap()).unwrap();
    dir.to_path_buf()
}
