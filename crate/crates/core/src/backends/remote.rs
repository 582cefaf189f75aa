//! JSON-over-HTTP adapter for out-of-process model servers.
//!
//! Every operation is a `POST {base}/v1/{op}` carrying a [`WireRequest`];
//! images and masks travel as base64 PNG, feature maps as base64
//! little-endian `f32`. `GET {base}/v1/ping` returns the server identity.
//! HTTP 4xx responses are contract violations, 5xx responses and
//! connection failures are transport errors and are retried.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    BackendInfo, DepthOrderer, DepthVerdict, DiffusionInput, FeatureMap, Inpainter, Instance,
    InstanceSet, MetricScorer, NoisyState, Remover, Segmenter, StepRange,
};
use crate::error::{BackendError, Error, Result};
use crate::io;
use crate::raster::{BinaryMask, ImageBuffer};

pub const PROTOCOL_VERSION: u32 = 1;

/// Operation names, one endpoint each.
pub const OPS: [&str; 7] = [
    "diffuse_range",
    "add_noise",
    "extract_decoder_features",
    "segment_instances",
    "order_depth",
    "remove_objects",
    "score",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireState {
    pub image: String,
    pub timestep: u32,
    pub total_steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handle: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireRequest {
    pub version: u32,
    pub op: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_b: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<WireState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireFeatures {
    pub grid_w: u32,
    pub grid_h: u32,
    pub dim: usize,
    /// Base64 of little-endian `f32` values, row-major cells.
    pub data: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireInstance {
    pub mask: String,
    pub category: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireResponse {
    pub version: u32,
    pub backend_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestep: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub handle: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<WireFeatures>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instances: Option<Vec<WireInstance>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<DepthVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Reply to `GET /v1/ping`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PingResponse {
    pub version: u32,
    pub backend_version: String,
    pub ops: Vec<String>,
}

pub fn features_to_wire(f: &FeatureMap) -> WireFeatures {
    let bytes: Vec<u8> = f.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    WireFeatures {
        grid_w: f.grid_w,
        grid_h: f.grid_h,
        dim: f.dim,
        data: io::encode_b64(&bytes),
    }
}

pub fn features_from_wire(w: &WireFeatures) -> Result<FeatureMap> {
    let bytes = io::decode_b64(&w.data)?;
    if bytes.len() % 4 != 0 {
        return Err(BackendError::Contract("feature payload is not a whole number of f32".into()).into());
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureMap::new(w.grid_w, w.grid_h, w.dim, data)
}

pub fn state_to_wire(state: &NoisyState) -> Result<WireState> {
    Ok(WireState {
        image: io::image_to_b64(state.raster())?,
        timestep: state.timestep(),
        total_steps: state.total_steps(),
        handle: state.handle().map(str::to_owned),
    })
}

pub fn state_from_wire(w: &WireState) -> Result<NoisyState> {
    Ok(NoisyState::new(io::image_from_b64(&w.image)?, w.timestep, w.total_steps)?.with_handle(w.handle.clone()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8700`.
    pub url: String,
    pub timeout_secs: u64,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    /// The server cannot take overlapping requests.
    pub single_flight: bool,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8700".into(),
            timeout_secs: 300,
            retries: 2,
            single_flight: false,
        }
    }
}

impl RemoteConfig {
    pub fn with_url(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            ..Self::default()
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    server_version: Mutex<Option<String>>,
}

const MAX_BODY: u64 = 512 * 1024 * 1024;

fn contract(msg: impl Into<String>) -> Error {
    BackendError::Contract(msg.into()).into()
}

fn missing(op: &str, field: &str) -> Error {
    contract(format!("{op} response lacks '{field}'"))
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            server_version: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/v1/{path}", self.config.url.trim_end_matches('/'))
    }

    fn remember(&self, version: &str) {
        if !version.is_empty() {
            *self.server_version.lock().unwrap_or_else(|e| e.into_inner()) = Some(version.to_owned());
        }
    }

    fn with_retries<T>(&self, mut attempt: impl FnMut() -> Result<T>) -> Result<T> {
        let mut last = None;
        for i in 0..=self.config.retries {
            match attempt() {
                Err(e) if e.is_transport() => {
                    log::warn!("{} attempt {} failed: {e}", self.config.url, i + 1);
                    last = Some(e);
                }
                other => return other,
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn call(&self, mut req: WireRequest) -> Result<WireResponse> {
        req.version = PROTOCOL_VERSION;
        let url = self.endpoint(&req.op);
        let op = req.op.clone();
        let resp = self.with_retries(|| {
            let mut resp = self
                .agent
                .post(&url)
                .send_json(&req)
                .map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
            let status = resp.status().as_u16();
            let body: std::result::Result<WireResponse, _> =
                resp.body_mut().with_config().limit(MAX_BODY).read_json();
            let detail = |b: &std::result::Result<WireResponse, ureq::Error>| {
                b.as_ref()
                    .ok()
                    .and_then(|r| r.error.clone())
                    .unwrap_or_else(|| format!("HTTP {status}"))
            };
            if status >= 500 {
                return Err(BackendError::Transport(format!("{op}: {}", detail(&body))).into());
            }
            if status >= 400 {
                return Err(contract(format!("{op}: {}", detail(&body))));
            }
            body.map_err(|e| contract(format!("{op}: malformed response: {e}")))
        })?;
        if resp.version != PROTOCOL_VERSION {
            return Err(contract(format!(
                "{op}: server speaks protocol {}, client {PROTOCOL_VERSION}",
                resp.version
            )));
        }
        self.remember(&resp.backend_version);
        Ok(resp)
    }

    pub fn ping_server(&self) -> Result<PingResponse> {
        let url = self.endpoint("ping");
        let ping: PingResponse = self.with_retries(|| {
            let mut resp = self
                .agent
                .get(&url)
                .call()
                .map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
            let status = resp.status().as_u16();
            if status >= 500 {
                return Err(BackendError::Transport(format!("ping: HTTP {status}")).into());
            }
            if status >= 400 {
                return Err(contract(format!("ping: HTTP {status}")));
            }
            resp.body_mut()
                .read_json()
                .map_err(|e| contract(format!("ping: malformed response: {e}")))
        })?;
        if ping.version != PROTOCOL_VERSION {
            return Err(contract(format!(
                "server speaks protocol {}, client {PROTOCOL_VERSION}",
                ping.version
            )));
        }
        self.remember(&ping.backend_version);
        Ok(ping)
    }

    fn identity(&self) -> BackendInfo {
        let cached = self.server_version.lock().unwrap_or_else(|e| e.into_inner()).clone();
        let version = cached
            .or_else(|| self.ping_server().ok().map(|p| p.backend_version))
            .unwrap_or_else(|| "unreachable".into());
        BackendInfo {
            name: format!("remote:{}", self.config.url),
            version,
        }
    }

    fn image_out(&self, op: &str, resp: &WireResponse) -> Result<ImageBuffer> {
        io::image_from_b64(resp.image.as_deref().ok_or_else(|| missing(op, "image"))?)
    }

    fn ping_info(&self) -> Result<BackendInfo> {
        let p = self.ping_server()?;
        Ok(BackendInfo {
            name: format!("remote:{}", self.config.url),
            version: p.backend_version,
        })
    }
}

impl Inpainter for RemoteBackend {
    fn info(&self) -> BackendInfo {
        self.identity()
    }

    fn diffuse_range(
        &self,
        input: DiffusionInput<'_>,
        mask: &BinaryMask,
        prompt: &str,
        range: StepRange,
        seed: u64,
    ) -> Result<NoisyState> {
        let mut req = WireRequest {
            op: "diffuse_range".into(),
            mask: Some(io::mask_to_b64(mask)?),
            prompt: Some(prompt.into()),
            s: Some(range.start),
            e: Some(range.end),
            total_steps: Some(range.total),
            seed: Some(seed),
            ..Default::default()
        };
        match input {
            DiffusionInput::Clean(img) => req.image = Some(io::image_to_b64(img)?),
            DiffusionInput::Noisy(state) => req.state = Some(state_to_wire(state)?),
        }
        let resp = self.call(req)?;
        let img = self.image_out("diffuse_range", &resp)?;
        let t = resp.timestep.ok_or_else(|| missing("diffuse_range", "timestep"))?;
        Ok(NoisyState::new(img, t, range.total)?.with_handle(resp.handle))
    }

    fn add_noise(&self, image: &ImageBuffer, k: u32, total: u32, seed: u64) -> Result<NoisyState> {
        let resp = self.call(WireRequest {
            op: "add_noise".into(),
            image: Some(io::image_to_b64(image)?),
            e: Some(k),
            total_steps: Some(total),
            seed: Some(seed),
            ..Default::default()
        })?;
        let img = self.image_out("add_noise", &resp)?;
        let t = resp.timestep.ok_or_else(|| missing("add_noise", "timestep"))?;
        Ok(NoisyState::new(img, t, total)?.with_handle(resp.handle))
    }

    fn extract_decoder_features(&self, state: &NoisyState, layer: u32) -> Result<FeatureMap> {
        let resp = self.call(WireRequest {
            op: "extract_decoder_features".into(),
            state: Some(state_to_wire(state)?),
            layer: Some(layer),
            ..Default::default()
        })?;
        features_from_wire(
            resp.features
                .as_ref()
                .ok_or_else(|| missing("extract_decoder_features", "features"))?,
        )
    }

    fn single_flight(&self) -> bool {
        self.config.single_flight
    }

    fn ping(&self) -> Result<BackendInfo> {
        self.ping_info()
    }
}

impl Segmenter for RemoteBackend {
    fn info(&self) -> BackendInfo {
        self.identity()
    }

    fn segment_instances(&self, image: &ImageBuffer, vocabulary: &[String]) -> Result<InstanceSet> {
        let resp = self.call(WireRequest {
            op: "segment_instances".into(),
            image: Some(io::image_to_b64(image)?),
            vocabulary: Some(vocabulary.to_vec()),
            ..Default::default()
        })?;
        resp.instances
            .ok_or_else(|| missing("segment_instances", "instances"))?
            .into_iter()
            .map(|w| {
                Ok(Instance {
                    mask: io::mask_from_b64(&w.mask)?,
                    category: w.category,
                    score: w.score,
                })
            })
            .collect()
    }

    fn single_flight(&self) -> bool {
        self.config.single_flight
    }

    fn ping(&self) -> Result<BackendInfo> {
        self.ping_info()
    }
}

impl DepthOrderer for RemoteBackend {
    fn info(&self) -> BackendInfo {
        self.identity()
    }

    fn order_depth(&self, image: &ImageBuffer, a: &BinaryMask, b: &BinaryMask) -> Result<DepthVerdict> {
        let resp = self.call(WireRequest {
            op: "order_depth".into(),
            image: Some(io::image_to_b64(image)?),
            mask: Some(io::mask_to_b64(a)?),
            mask_b: Some(io::mask_to_b64(b)?),
            ..Default::default()
        })?;
        resp.verdict.ok_or_else(|| missing("order_depth", "verdict"))
    }

    fn single_flight(&self) -> bool {
        self.config.single_flight
    }

    fn ping(&self) -> Result<BackendInfo> {
        self.ping_info()
    }
}

impl Remover for RemoteBackend {
    fn info(&self) -> BackendInfo {
        self.identity()
    }

    fn remove_objects(&self, image: &ImageBuffer, mask: &BinaryMask) -> Result<ImageBuffer> {
        let resp = self.call(WireRequest {
            op: "remove_objects".into(),
            image: Some(io::image_to_b64(image)?),
            mask: Some(io::mask_to_b64(mask)?),
            ..Default::default()
        })?;
        self.image_out("remove_objects", &resp)
    }

    fn single_flight(&self) -> bool {
        self.config.single_flight
    }

    fn ping(&self) -> Result<BackendInfo> {
        self.ping_info()
    }
}

impl MetricScorer for RemoteBackend {
    fn info(&self) -> BackendInfo {
        self.identity()
    }

    fn score(&self, metric: &str, image: &ImageBuffer, reference: &ImageBuffer, prompt: &str) -> Result<f64> {
        let resp = self.call(WireRequest {
            op: "score".into(),
            image: Some(io::image_to_b64(image)?),
            reference: Some(io::image_to_b64(reference)?),
            metric: Some(metric.into()),
            prompt: Some(prompt.into()),
            ..Default::default()
        })?;
        resp.score.ok_or_else(|| missing("score", "score"))
    }

    fn ping(&self) -> Result<BackendInfo> {
        self.ping_info()
    }
}
