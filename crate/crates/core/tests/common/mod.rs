#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use amodal_core::backends::scene::{preset, random_scene, ScriptedScene, RANDOM_QUERY};
use amodal_core::backends::{Backends, MockBackend};
use amodal_core::occlusion::build_occlusion_report;
use amodal_core::{BBox, BinaryMask, ImageBuffer, PipelineConfig};
use proptest::prelude::*;

pub fn mock(scene: &ScriptedScene) -> Backends {
    let m = Arc::new(MockBackend::new(scene.clone()));
    Backends::uniform(m.clone()).with_metric(m)
}

pub fn preset_scene(name: &str) -> (ScriptedScene, &'static str) {
    let p = preset(name).unwrap();
    (p.file.build(Path::new(".")).unwrap(), p.query)
}

pub fn random(seed: u64) -> ScriptedScene {
    random_scene(seed).build(Path::new(".")).unwrap()
}

pub fn query_index(scene: &ScriptedScene) -> usize {
    scene.layer_index(RANDOM_QUERY).unwrap()
}

/// Photo, modal mask and occluder union of the query in a random scene.
pub fn framed_inputs(scene: &ScriptedScene, b: &Backends) -> (ImageBuffer, BinaryMask, BinaryMask) {
    let img = scene.photo_image();
    let modal = scene.visible_mask_in_photo(query_index(scene)).unwrap();
    let report = build_occlusion_report(&img, &modal, RANDOM_QUERY, &PipelineConfig::default(), b).unwrap();
    (img, modal, report.occluder_union)
}

pub fn rect(w: u32, h: u32, r: [u32; 4]) -> BinaryMask {
    BinaryMask::rect(w, h, BBox::new(r[0], r[1], r[2], r[3]).unwrap()).unwrap()
}

pub fn arb_mask(w: u32, h: u32) -> impl Strategy<Value = BinaryMask> {
    proptest::collection::vec(any::<bool>(), (w * h) as usize).prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
}

pub fn arb_image(w: u32, h: u32) -> impl Strategy<Value = ImageBuffer> {
    proptest::collection::vec(any::<u8>(), (w * h * 3) as usize).prop_map(move |px| ImageBuffer::from_raw(w, h, px).unwrap())
}
