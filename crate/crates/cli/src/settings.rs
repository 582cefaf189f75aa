//! Configuration resolution: flags > environment > config file > defaults.
//!
//! The environment only reaches backend endpoints; pipeline knobs come from
//! flags or the config file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use amodal_core::backends::remote::{RemoteBackend, RemoteConfig};
use amodal_core::backends::scene::{preset, ScriptedScene};
use amodal_core::backends::{Backends, DepthOrderer, Inpainter, MetricScorer, MockBackend, Remover, Segmenter};
use amodal_core::{CleanBackground, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const ENV_BACKEND_URL: &str = "AMODAL_BACKEND_URL";

pub const ROLES: [Role; 5] = [Role::Inpainter, Role::Segmenter, Role::Depth, Role::Remover, Role::Metric];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Inpainter,
    Segmenter,
    Depth,
    Remover,
    Metric,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Inpainter => "inpainter",
            Role::Segmenter => "segmenter",
            Role::Depth => "depth",
            Role::Remover => "remover",
            Role::Metric => "metric",
        }
    }

    /// `AMODAL_INPAINTER_URL` and friends.
    pub fn env_var(self) -> String {
        format!("AMODAL_{}_URL", self.name().to_ascii_uppercase())
    }
}

/// Endpoint section of the config file. Each value is a backend spec:
/// `mock`, `mock:<scene.json>`, `preset:<name>` or an `http(s)://` URL.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub default: Option<String>,
    pub inpainter: Option<String>,
    pub segmenter: Option<String>,
    pub depth: Option<String>,
    pub remover: Option<String>,
    pub metric: Option<String>,
    pub timeout_secs: Option<u64>,
    pub retries: Option<u32>,
    pub single_flight: Option<bool>,
}

impl BackendSection {
    fn role(&self, r: Role) -> Option<&String> {
        match r {
            Role::Inpainter => self.inpainter.as_ref(),
            Role::Segmenter => self.segmenter.as_ref(),
            Role::Depth => self.depth.as_ref(),
            Role::Remover => self.remover.as_ref(),
            Role::Metric => self.metric.as_ref(),
        }
    }
}

/// The config file: pipeline knobs plus backend endpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub pipeline: PipelineConfig,
    pub backends: BackendSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("bad config {}: {e}", path.display())).into())
    }
}

/// Pipeline knobs given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineFlags {
    pub composite_step: Option<u32>,
    pub decoder_layer: Option<u32>,
    pub background: Option<CleanBackground>,
    pub max_iterations: Option<u32>,
    pub seed: Option<u64>,
}

/// Backend choices given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackendFlags {
    pub backend: Option<String>,
    pub metric: Option<String>,
    pub scene: Option<String>,
}

pub fn resolve_pipeline(file: &ConfigFile, flags: &PipelineFlags) -> anyhow::Result<PipelineConfig> {
    let mut c = file.pipeline.clone();
    if let Some(k) = flags.composite_step {
        c.composite_step = k;
    }
    if let Some(l) = flags.decoder_layer {
        c.decoder_layer = l;
    }
    if let Some(b) = flags.background {
        c.clean_background = b;
    }
    if let Some(m) = flags.max_iterations {
        c.max_iterations = m;
    }
    if let Some(s) = flags.seed {
        c.rng_seed = s;
    }
    c.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(c)
}

/// Spec string per role, or `None` for an unconfigured metric role.
pub fn resolve_endpoints(
    file: &ConfigFile,
    flags: &BackendFlags,
    env: &dyn Fn(&str) -> Option<String>,
) -> HashMap<Role, Option<String>> {
    let env_default = env(ENV_BACKEND_URL).filter(|s| !s.is_empty());
    ROLES
        .iter()
        .map(|&r| {
            let flag_role = if r == Role::Metric { flags.metric.clone() } else { None };
            // The metric role never falls back to the shared endpoint: a
            // missing scorer means perceptual metrics are skipped.
            let shared = |v: Option<String>| if r == Role::Metric { None } else { v };
            let spec = flag_role
                .or_else(|| shared(flags.backend.clone()))
                .or_else(|| env(&r.env_var()).filter(|s| !s.is_empty()))
                .or_else(|| shared(env_default.clone()))
                .or_else(|| file.backends.role(r).cloned())
                .or_else(|| shared(file.backends.default.clone()))
                .or_else(|| shared(Some("mock".into())));
            (r, spec)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BackendSpec {
    /// Mock over a scene; `None` when the scene comes from elsewhere.
    Mock(Option<SceneSource>),
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SceneSource {
    Preset(String),
    File(PathBuf),
}

impl SceneSource {
    pub fn parse(s: &str) -> Self {
        match s.strip_prefix("preset:") {
            Some(name) => SceneSource::Preset(name.to_string()),
            None => SceneSource::File(PathBuf::from(s)),
        }
    }

    pub fn load(&self) -> anyhow::Result<ScriptedScene> {
        match self {
            SceneSource::Preset(name) => {
                let p = preset(name).ok_or_else(|| UsageError(format!("unknown preset '{name}'")))?;
                Ok(p.file.build(Path::new("."))?)
            }
            SceneSource::File(path) => {
                if !path.exists() {
                    return Err(UsageError(format!("scene file {} not found", path.display())).into());
                }
                Ok(ScriptedScene::load(path)?)
            }
        }
    }
}

impl BackendSpec {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(BackendSpec::Remote(s.trim_end_matches('/').to_string()));
        }
        if s == "mock" {
            return Ok(BackendSpec::Mock(None));
        }
        if let Some(rest) = s.strip_prefix("mock:") {
            return Ok(BackendSpec::Mock(Some(SceneSource::parse(rest))));
        }
        if s.starts_with("preset:") {
            return Ok(BackendSpec::Mock(Some(SceneSource::parse(s))));
        }
        Err(UsageError(format!("unrecognised backend '{s}' (expected mock, mock:<scene>, preset:<name> or a URL)")).into())
    }
}

#[derive(Clone)]
enum Handle {
    Mock(Arc<MockBackend>),
    Remote(Arc<RemoteBackend>),
}

impl Handle {
    fn inpainter(&self) -> Arc<dyn Inpainter> {
        match self {
            Handle::Mock(m) => m.clone(),
            Handle::Remote(r) => r.clone(),
        }
    }
    fn segmenter(&self) -> Arc<dyn Segmenter> {
        match self {
            Handle::Mock(m) => m.clone(),
            Handle::Remote(r) => r.clone(),
        }
    }
    fn depth(&self) -> Arc<dyn DepthOrderer> {
        match self {
            Handle::Mock(m) => m.clone(),
            Handle::Remote(r) => r.clone(),
        }
    }
    fn remover(&self) -> Arc<dyn Remover> {
        match self {
            Handle::Mock(m) => m.clone(),
            Handle::Remote(r) => r.clone(),
        }
    }
    fn metric(&self) -> Arc<dyn MetricScorer> {
        match self {
            Handle::Mock(m) => m.clone(),
            Handle::Remote(r) => r.clone(),
        }
    }
}

/// Resolved endpoints, ready to be turned into [`Backends`].
#[derive(Debug, Clone)]
pub struct BackendPlan {
    pub specs: HashMap<Role, Option<BackendSpec>>,
    pub remote: RemoteConfig,
}

impl BackendPlan {
    pub fn resolve(
        file: &ConfigFile,
        flags: &BackendFlags,
        env: &dyn Fn(&str) -> Option<String>,
    ) -> anyhow::Result<Self> {
        let scene_flag = flags.scene.as_deref().map(SceneSource::parse);
        let mut specs = HashMap::new();
        for (role, spec) in resolve_endpoints(file, flags, env) {
            let parsed = match spec {
                Some(s) => Some(match BackendSpec::parse(&s)? {
                    BackendSpec::Mock(None) => BackendSpec::Mock(scene_flag.clone()),
                    other => other,
                }),
                None => None,
            };
            specs.insert(role, parsed);
        }
        let mut remote = RemoteConfig::default();
        if let Some(t) = file.backends.timeout_secs {
            remote.timeout_secs = t;
        }
        if let Some(r) = file.backends.retries {
            remote.retries = r;
        }
        if let Some(s) = file.backends.single_flight {
            remote.single_flight = s;
        }
        Ok(Self { specs, remote })
    }

    /// True when some role is a mock still waiting for its scene.
    pub fn needs_scene(&self) -> bool {
        self.specs
            .values()
            .any(|s| matches!(s, Some(BackendSpec::Mock(None))))
    }

    pub fn is_all_mock(&self) -> bool {
        ROLES[..4]
            .iter()
            .all(|r| matches!(self.specs.get(r), Some(Some(BackendSpec::Mock(_)))))
    }

    /// Builds the backends; `fallback_scene` feeds mocks without a scene.
    pub fn build(&self, fallback_scene: Option<&ScriptedScene>) -> anyhow::Result<Backends> {
        let mut cache: HashMap<BackendSpec, Handle> = HashMap::new();
        let mut fallback: Option<Handle> = None;
        let mut handle = |spec: &BackendSpec| -> anyhow::Result<Handle> {
            if let BackendSpec::Mock(None) = spec {
                if let Some(h) = &fallback {
                    return Ok(h.clone());
                }
                let scene = fallback_scene.ok_or_else(|| {
                    UsageError("the mock backend needs a scene (--scene PATH or --scene preset:NAME)".into())
                })?;
                let h = Handle::Mock(Arc::new(MockBackend::new(scene.clone())));
                fallback = Some(h.clone());
                return Ok(h);
            }
            if let Some(h) = cache.get(spec) {
                return Ok(h.clone());
            }
            let h = match spec {
                BackendSpec::Mock(Some(src)) => Handle::Mock(Arc::new(MockBackend::new(src.load()?))),
                BackendSpec::Remote(url) => Handle::Remote(Arc::new(RemoteBackend::new(RemoteConfig {
                    url: url.clone(),
                    ..self.remote.clone()
                }))),
                BackendSpec::Mock(None) => unreachable!(),
            };
            cache.insert(spec.clone(), h.clone());
            Ok(h)
        };
        let get = |r: Role| -> &BackendSpec {
            self.specs
                .get(&r)
                .and_then(|s| s.as_ref())
                .expect("model roles always resolve")
        };
        let inpainter = handle(get(Role::Inpainter))?;
        let segmenter = handle(get(Role::Segmenter))?;
        let depth = handle(get(Role::Depth))?;
        let remover = handle(get(Role::Remover))?;
        let mut b = Backends::new(inpainter.inpainter(), segmenter.segmenter(), depth.depth(), remover.remover());
        if let Some(Some(spec)) = self.specs.get(&Role::Metric) {
            b = b.with_metric(handle(spec)?.metric());
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_of(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    fn file_with(default: &str, inpainter: Option<&str>) -> ConfigFile {
        ConfigFile {
            backends: BackendSection {
                default: Some(default.into()),
                inpainter: inpainter.map(Into::into),
                ..BackendSection::default()
            },
            ..ConfigFile::default()
        }
    }

    #[test]
    fn defaults_to_mock_without_metric() {
        let e = resolve_endpoints(&ConfigFile::default(), &BackendFlags::default(), &env_of(&[]));
        assert_eq!(e[&Role::Inpainter].as_deref(), Some("mock"));
        assert_eq!(e[&Role::Metric], None);
    }

    #[test]
    fn file_beats_default() {
        let e = resolve_endpoints(&file_with("http://file:1", None), &BackendFlags::default(), &env_of(&[]));
        assert_eq!(e[&Role::Segmenter].as_deref(), Some("http://file:1"));
    }

    #[test]
    fn env_beats_file() {
        let f = file_with("http://file:1", Some("http://file:2"));
        let e = resolve_endpoints(&f, &BackendFlags::default(), &env_of(&[(ENV_BACKEND_URL, "http://env:1")]));
        assert_eq!(e[&Role::Inpainter].as_deref(), Some("http://env:1"));
        assert_eq!(e[&Role::Depth].as_deref(), Some("http://env:1"));
        let e = resolve_endpoints(&f, &BackendFlags::default(), &env_of(&[("AMODAL_DEPTH_URL", "http://env:2")]));
        assert_eq!(e[&Role::Depth].as_deref(), Some("http://env:2"));
        assert_eq!(e[&Role::Inpainter].as_deref(), Some("http://file:2"));
    }

    #[test]
    fn flags_beat_env() {
        let flags = BackendFlags {
            backend: Some("http://flag:1".into()),
            metric: Some("mock".into()),
            scene: None,
        };
        let env = env_of(&[(ENV_BACKEND_URL, "http://env:1"), ("AMODAL_METRIC_URL", "http://env:3")]);
        let e = resolve_endpoints(&file_with("http://file:1", None), &flags, &env);
        assert!(ROLES[..4].iter().all(|r| e[r].as_deref() == Some("http://flag:1")));
        assert_eq!(e[&Role::Metric].as_deref(), Some("mock"));
    }

    #[test]
    fn pipeline_flags_beat_file() {
        let mut f = ConfigFile::default();
        f.pipeline.composite_step = 30;
        f.pipeline.decoder_layer = 2;
        let flags = PipelineFlags {
            composite_step: Some(10),
            ..PipelineFlags::default()
        };
        let c = resolve_pipeline(&f, &flags).unwrap();
        assert_eq!((c.composite_step, c.decoder_layer, c.total_steps), (10, 2, 50));
        let bad = PipelineFlags {
            composite_step: Some(50),
            ..PipelineFlags::default()
        };
        assert!(resolve_pipeline(&f, &bad).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(BackendSpec::parse("mock").unwrap(), BackendSpec::Mock(None));
        assert_eq!(
            BackendSpec::parse("preset:surfer").unwrap(),
            BackendSpec::Mock(Some(SceneSource::Preset("surfer".into())))
        );
        assert_eq!(
            BackendSpec::parse("http://h:1/").unwrap(),
            BackendSpec::Remote("http://h:1".into())
        );
        assert!(BackendSpec::parse("ftp://x").is_err());
    }

    #[test]
    fn config_file_round_trip() {
        let text = r#"{"pipeline": {"composite_step": 25}, "backends": {"default": "http://x:1", "retries": 0}}"#;
        let f: ConfigFile = serde_json::from_str(text).unwrap();
        assert_eq!(f.pipeline.composite_step, 25);
        assert_eq!(f.backends.retries, Some(0));
        assert!(serde_json::from_str::<ConfigFile>(r#"{"nope": 1}"#).is_err());
    }
}
