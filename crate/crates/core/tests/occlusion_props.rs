mod common;

use std::path::Path;

use amodal_core::backends::scene::{random_scene, LayerSpec, Shape, RANDOM_QUERY};
use amodal_core::occlusion::build_occlusion_report;
use amodal_core::{run_pipeline, PipelineConfig, QuerySpec, SamplerKind, Termination};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occluder_union_never_covers_the_query(seed in any::<u64>()) {
        let scene = random(seed);
        let b = mock(&scene);
        let (_, modal, occ) = framed_inputs(&scene, &b);
        prop_assert_eq!(occ.intersection_area(&modal).unwrap(), 0);
        prop_assert!(!occ.is_empty());
    }

    #[test]
    fn neighbours_behind_do_not_change_the_occluders(seed in any::<u64>(), r in (0u32..40, 0u32..40, 4u32..30, 4u32..30)) {
        let file = random_scene(seed);
        let base = file.build(Path::new(".")).unwrap();
        let (w, h) = (file.width, file.height);
        let (x0, y0) = (r.0.min(w - 4), r.1.min(h - 4));
        let mut more = file.clone();
        more.layers.push(LayerSpec {
            category: "backdrop".into(),
            z: -5,
            score: 0.5,
            shape: Shape::Rect([x0, y0, (x0 + r.2).min(w), (y0 + r.3).min(h)]),
            appearance: None,
        });
        let extended = more.build(Path::new(".")).unwrap();
        let cfg = PipelineConfig::default();
        let report = |s: &amodal_core::backends::ScriptedScene| {
            let modal = s.visible_mask_in_photo(s.layer_index(RANDOM_QUERY).unwrap()).unwrap();
            build_occlusion_report(&s.photo_image(), &modal, RANDOM_QUERY, &cfg, &mock(s)).unwrap()
        };
        prop_assert_eq!(report(&base).occluder_union, report(&extended).occluder_union);
    }
}

#[test]
fn unoccluded_objects_stop_after_one_check() {
    for seed in 0..10u64 {
        let mut file = random_scene(seed);
        file.layers.truncate(1);
        let scene = file.build(Path::new(".")).unwrap();
        let b = mock(&scene);
        let modal = scene.visible_mask_in_photo(0).unwrap();
        let report = build_occlusion_report(&scene.photo_image(), &modal, RANDOM_QUERY, &PipelineConfig::default(), &b).unwrap();
        let q = QuerySpec::new(RANDOM_QUERY, None).unwrap();
        let bundle = run_pipeline(&scene.photo_image(), &q, &PipelineConfig::default(), &b, SamplerKind::Mc, 0).unwrap();
        if report.is_occluded {
            // Touching the boundary counts as occlusion.
            assert!(!report.boundary_sides.is_empty());
            continue;
        }
        assert_eq!(bundle.termination, Termination::Unoccluded);
        assert_eq!(bundle.iterations.len(), 1);
        assert!(bundle.iterations[0].work.is_none());
        assert_eq!(bundle.final_mask, modal);
    }
}
