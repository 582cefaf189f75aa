mod common;

use std::sync::Arc;

use amodal_core::backends::remote::{RemoteBackend, RemoteConfig};
use amodal_core::backends::server::serve;
use amodal_core::backends::{Backends, DiffusionInput, Inpainter, Remover, StepRange};
use amodal_core::{run_pipeline, BackendError, BinaryMask, Error, PipelineConfig, QuerySpec, SamplerKind};
use common::*;

fn remote(url: &str, retries: u32) -> (Arc<RemoteBackend>, Backends) {
    let r = Arc::new(RemoteBackend::new(RemoteConfig {
        retries,
        timeout_secs: 30,
        ..RemoteConfig::with_url(url)
    }));
    (r.clone(), Backends::uniform(r.clone()).with_metric(r))
}

#[test]
fn pipeline_over_the_wire_matches_local() {
    for name in ["surfer", "new-occluder", "edge"] {
        let (scene, query) = preset_scene(name);
        let local = mock(&scene);
        let server = serve(local.clone(), "127.0.0.1:0".parse().unwrap()).unwrap();
        let (_, wire) = remote(&server.url(), 0);
        let q = QuerySpec::new(query, None).unwrap();
        let cfg = PipelineConfig::default();
        let img = scene.photo_image();
        let a = run_pipeline(&img, &q, &cfg, &local, SamplerKind::Mc, 3).unwrap();
        let b = run_pipeline(&img, &q, &cfg, &wire, SamplerKind::Mc, 3).unwrap();
        assert_eq!(a.final_mask, b.final_mask, "{name}");
        assert_eq!(a.final_image, b.final_image, "{name}");
        assert_eq!(a.iterations.len(), b.iterations.len(), "{name}");
        assert!(b.backends.inpainter.name.starts_with("remote:"));
        server.shutdown();
    }
}

#[test]
fn wire_preserves_unmasked_pixels() {
    let scene = random(11);
    let server = serve(mock(&scene), "127.0.0.1:0".parse().unwrap()).unwrap();
    let (_, wire) = remote(&server.url(), 0);
    let img = scene.photo_image();
    let (w, h) = img.dims();
    let mask = rect(w, h, [w / 4, h / 4, w / 2, h / 2]);
    let out = wire
        .diffuse_range(DiffusionInput::Clean(&img), &mask, "object", StepRange::full(50).unwrap(), 1)
        .unwrap()
        .into_image();
    for (x, y) in mask.complement().iter_set() {
        let (p, q) = (out.get(x, y), img.get(x, y));
        assert!(p.iter().zip(q).all(|(a, b)| a.abs_diff(b) <= 2));
    }
    let state = wire.add_noise(&img, 20, 50, 1).unwrap();
    let feats = wire.extract_decoder_features(&state, 3).unwrap();
    assert_eq!(feats.cells(), (w * h) as usize);
}

#[test]
fn ping_reports_server_identity() {
    let (scene, _) = preset_scene("surfer");
    let server = serve(mock(&scene), "127.0.0.1:0".parse().unwrap()).unwrap();
    let (r, wire) = remote(&server.url(), 0);
    let pong = r.ping_server().unwrap();
    assert_eq!(pong.version, amodal_core::backends::remote::PROTOCOL_VERSION);
    let local = mock(&scene).identities().inpainter;
    assert_eq!(pong.backend_version, format!("{}@{}", local.name, local.version));
    assert!(wire.ping_all().iter().all(|(_, r)| r.is_ok()));
}

#[test]
fn bad_requests_are_contract_errors() {
    let (scene, _) = preset_scene("surfer");
    let server = serve(mock(&scene), "127.0.0.1:0".parse().unwrap()).unwrap();
    let (r, _) = remote(&server.url(), 0);
    let img = scene.photo_image();
    // Straight to the wire, skipping the local contract checks: the server
    // must refuse features of a clean image and mis-sized masks.
    let clean = Inpainter::add_noise(&*r, &img, 0, 50, 0).unwrap();
    let e = Inpainter::extract_decoder_features(&*r, &clean, 3).unwrap_err();
    assert!(matches!(e, Error::Backend(BackendError::Contract(_))), "{e}");
    let wrong = BinaryMask::full(3, 3).unwrap();
    let e = Remover::remove_objects(&*r, &img, &wrong).unwrap_err();
    assert!(matches!(e, Error::Backend(BackendError::Contract(_))), "{e}");
}

#[test]
fn dead_server_is_a_transport_error() {
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let (_, wire) = remote(&format!("http://{addr}"), 1);
    let img = preset_scene("surfer").0.photo_image();
    let e = wire.remove_objects(&img, &rect(96, 96, [0, 0, 8, 8])).unwrap_err();
    assert!(e.is_transport(), "{e}");
}
