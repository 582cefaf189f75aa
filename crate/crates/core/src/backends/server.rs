//! Reference server for the wire protocol in [`super::remote`].
//!
//! Serves any [`Backends`] bundle, which makes it both a test double for the
//! remote client and a template for wrapping real models.

use std::net::{SocketAddr, TcpListener};
use std::thread::JoinHandle;

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::oneshot;

use super::remote::{
    features_to_wire, state_from_wire, PingResponse, WireInstance, WireRequest, WireResponse, OPS,
    PROTOCOL_VERSION,
};
use super::{Backends, DiffusionInput, StepRange};
use crate::error::{Error, Result};
use crate::io;

/// A running server; dropping it shuts the server down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in a background thread.
pub fn serve(backends: Backends, addr: SocketAddr) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("server listener: {e}");
                    return;
                }
            };
            let app = router(backends);
            let served = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
            if let Err(e) = served {
                log::error!("server stopped: {e}");
            }
        });
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

fn router(backends: Backends) -> Router {
    Router::new()
        .route("/v1/ping", get(ping))
        .route("/v1/{op}", post(dispatch))
        .layer(DefaultBodyLimit::max(512 * 1024 * 1024))
        .with_state(backends)
}

fn server_version(b: &Backends) -> String {
    let ids = b.identities();
    format!("{}@{}", ids.inpainter.name, ids.inpainter.version)
}

async fn ping(State(b): State<Backends>) -> Json<PingResponse> {
    let backend_version = tokio::task::spawn_blocking(move || server_version(&b))
        .await
        .unwrap_or_default();
    Json(PingResponse {
        version: PROTOCOL_VERSION,
        backend_version,
        ops: OPS.iter().map(|s| s.to_string()).collect(),
    })
}

async fn dispatch(
    State(b): State<Backends>,
    Path(op): Path<String>,
    Json(req): Json<WireRequest>,
) -> (StatusCode, Json<WireResponse>) {
    let outcome = tokio::task::spawn_blocking(move || {
        let version = server_version(&b);
        (handle(&b, &op, req), version)
    })
    .await;
    let (result, backend_version) = match outcome {
        Ok(v) => v,
        Err(e) => (Err(Error::Backend(crate::error::BackendError::Transport(e.to_string()))), String::new()),
    };
    match result {
        Ok(mut resp) => {
            resp.version = PROTOCOL_VERSION;
            resp.backend_version = backend_version;
            (StatusCode::OK, Json(resp))
        }
        Err(e) => {
            let status = if e.is_transport() || matches!(e, Error::Io(_)) {
                StatusCode::BAD_GATEWAY
            } else {
                StatusCode::BAD_REQUEST
            };
            (
                status,
                Json(WireResponse {
                    version: PROTOCOL_VERSION,
                    backend_version,
                    error: Some(e.to_string()),
                    ..Default::default()
                }),
            )
        }
    }
}

fn field<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Config(format!("request lacks '{name}'")))
}

fn handle(b: &Backends, op: &str, req: WireRequest) -> Result<WireResponse> {
    if req.version != PROTOCOL_VERSION {
        return Err(Error::Config(format!(
            "protocol {} not supported (server speaks {PROTOCOL_VERSION})",
            req.version
        )));
    }
    let image = || io::image_from_b64(field(&req.image, "image")?);
    let mask = || io::mask_from_b64(field(&req.mask, "mask")?);
    let mut out = WireResponse::default();
    match op {
        "diffuse_range" => {
            let range = StepRange::new(
                *field(&req.s, "s")?,
                *field(&req.e, "e")?,
                *field(&req.total_steps, "total_steps")?,
            )?;
            let prompt = req.prompt.clone().unwrap_or_default();
            let seed = req.seed.unwrap_or(0);
            let m = mask()?;
            let state = match &req.state {
                Some(w) => {
                    let st = state_from_wire(w)?;
                    b.diffuse_range(DiffusionInput::Noisy(&st), &m, &prompt, range, seed)?
                }
                None => {
                    let img = image()?;
                    b.diffuse_range(DiffusionInput::Clean(&img), &m, &prompt, range, seed)?
                }
            };
            out.image = Some(io::image_to_b64(state.raster())?);
            out.timestep = Some(state.timestep());
            out.handle = state.handle().map(str::to_owned);
        }
        "add_noise" => {
            let state = b.add_noise(
                &image()?,
                *field(&req.e, "e")?,
                *field(&req.total_steps, "total_steps")?,
                req.seed.unwrap_or(0),
            )?;
            out.image = Some(io::image_to_b64(state.raster())?);
            out.timestep = Some(state.timestep());
            out.handle = state.handle().map(str::to_owned);
        }
        "extract_decoder_features" => {
            let state = state_from_wire(field(&req.state, "state")?)?;
            let f = b.extract_decoder_features(&state, *field(&req.layer, "layer")?)?;
            out.features = Some(features_to_wire(&f));
        }
        "segment_instances" => {
            let vocab = req.vocabulary.clone().unwrap_or_default();
            let instances = b.segment_instances(&image()?, &vocab)?;
            out.instances = Some(
                instances
                    .iter()
                    .map(|i| {
                        Ok(WireInstance {
                            mask: io::mask_to_b64(&i.mask)?,
                            category: i.category.clone(),
                            score: i.score,
                        })
                    })
                    .collect::<Result<_>>()?,
            );
        }
        "order_depth" => {
            let mb = io::mask_from_b64(field(&req.mask_b, "mask_b")?)?;
            out.verdict = Some(b.order_depth(&image()?, &mask()?, &mb)?);
        }
        "remove_objects" => {
            out.image = Some(io::image_to_b64(&b.remove_objects(&image()?, &mask()?)?)?);
        }
        "score" => {
            let reference = io::image_from_b64(field(&req.reference, "reference")?)?;
            let metric = field(&req.metric, "metric")?;
            let prompt = req.prompt.clone().unwrap_or_default();
            out.score = match b.metric_score(metric, &image()?, &reference, &prompt) {
                Some(r) => Some(r?),
                None => return Err(Error::Config("no metric backend configured".into())),
            };
        }
        other => return Err(Error::Config(format!("unknown operation '{other}'"))),
    }
    Ok(out)
}
