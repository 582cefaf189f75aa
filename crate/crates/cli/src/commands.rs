use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use amodal_core::backends::scene::{preset, ScriptedScene, PRESET_NAMES};
use amodal_core::backends::server::serve;
use amodal_core::backends::BackendIdentities;
use amodal_core::bundle::{read_bundle_outputs, write_bundle, BundleManifest};
use amodal_core::curation::{curate_batch, CurationItem, CurationReport};
use amodal_core::dataset::{self, load_pool, scene_from_sample, DatasetParams, PlacementParams};
use amodal_core::eval::{self, EvalSetup, Method, EXTERNAL_METRICS};
use amodal_core::{io, run_pipeline, BBox, ImageBuffer, PipelineConfig, QuerySpec, SamplerKind};
use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::settings::{BackendFlags, BackendPlan, ConfigFile, PipelineFlags, SceneSource};
use crate::{
    BackendArgs, BackendsCommand, Cli, Command, CompleteArgs, CurateArgs, DatasetBuildArgs, DatasetCommand, EvalArgs,
    PipelineArgs, SceneCommand, ServeArgs, UsageError,
};

type Env<'a> = &'a dyn Fn(&str) -> Option<String>;

struct Ctx<'a> {
    json: bool,
    file: ConfigFile,
    jobs: Option<usize>,
    env: Env<'a>,
}

impl Ctx<'_> {
    fn say(&self, line: impl AsRef<str>) {
        if !self.json {
            println!("{}", line.as_ref());
        }
    }

    fn emit<T: Serialize>(&self, value: &T) -> anyhow::Result<()> {
        if self.json {
            println!("{}", serde_json::to_string_pretty(value)?);
        }
        Ok(())
    }

    fn pipeline(&self, args: &PipelineArgs, seed: Option<u64>) -> anyhow::Result<PipelineConfig> {
        crate::settings::resolve_pipeline(
            &self.file,
            &PipelineFlags {
                composite_step: args.k,
                decoder_layer: args.layer,
                background: args.background,
                max_iterations: args.max_iterations,
                seed,
            },
        )
    }

    fn plan(&self, args: &BackendArgs) -> anyhow::Result<BackendPlan> {
        BackendPlan::resolve(
            &self.file,
            &BackendFlags {
                backend: args.backend.clone(),
                metric: args.metric_backend.clone(),
                scene: args.scene.clone(),
            },
            self.env,
        )
    }

    fn pool(&self) -> anyhow::Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            if j == 0 {
                return Err(UsageError("--jobs must be at least 1".into()).into());
            }
            b = b.num_threads(j);
        }
        Ok(b.build()?)
    }
}

pub fn dispatch(cli: Cli, env: Env<'_>) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let ctx = Ctx {
        json: cli.json,
        file,
        jobs: cli.jobs,
        env,
    };
    match cli.command {
        Command::Complete(a) => complete(&ctx, &a),
        Command::Curate(a) => curate(&ctx, &a),
        Command::Dataset(DatasetCommand::Build(a)) => dataset_build(&ctx, &a),
        Command::Eval(a) => evaluate(&ctx, &a),
        Command::Backends(BackendsCommand::Check(a)) => backends_check(&ctx, &a),
        Command::Backends(BackendsCommand::ServeMock(a)) => serve_mock(&ctx, &a),
        Command::Scene(SceneCommand::Init { preset, out }) => scene_init(&ctx, &preset, &out),
        Command::Scene(SceneCommand::List) => scene_list(&ctx),
    }
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} not found", path.display())).into())
    }
}

/// Run-level record written as `run.json`; the bundles' own manifests stay
/// free of wall-clock data so they hash identically across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config: PipelineConfig,
    pub backends: BackendIdentities,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub started_unix_secs: u64,
    pub wall_clock_secs: f64,
    pub outputs: Vec<RunOutput>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub seed: u64,
    pub iterations: usize,
    pub termination: String,
    pub content_hash: String,
}

fn complete(ctx: &Ctx<'_>, a: &CompleteArgs) -> anyhow::Result<()> {
    require_file(&a.image, "image")?;
    if a.variants == 0 {
        return Err(UsageError("--variants must be at least 1".into()).into());
    }
    let sampler: SamplerKind = a.sampler.parse().map_err(|e: amodal_core::Error| UsageError(e.to_string()))?;
    let config = ctx.pipeline(&a.pipeline, a.seed)?;
    let seed = config.rng_seed;
    let backends = ctx.plan(&a.backends)?.build(None)?;
    let image = io::read_image(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let query = QuerySpec::new(a.query.clone(), a.point)?;
    std::fs::create_dir_all(&a.out)?;

    let started = SystemTime::now();
    let clock = Instant::now();
    let dirs: Vec<(u64, PathBuf)> = (0..a.variants)
        .map(|i| {
            let dir = if a.variants == 1 {
                a.out.clone()
            } else {
                a.out.join(format!("variant_{i}"))
            };
            (seed.wrapping_add(i as u64), dir)
        })
        .collect();
    let run_one = |(s, dir): &(u64, PathBuf)| -> anyhow::Result<(BundleManifest, PathBuf, u64)> {
        match run_pipeline(&image, &query, &config, &backends, sampler, *s) {
            Ok(bundle) => {
                let m = write_bundle(&bundle, dir, a.debug_trace)?;
                Ok((m, dir.clone(), *s))
            }
            Err(e) => {
                if let Some(partial) = &e.partial {
                    write_bundle(partial, dir, a.debug_trace)?;
                }
                Err(e.into())
            }
        }
    };
    let results: Vec<(BundleManifest, PathBuf, u64)> = if a.variants == 1 {
        vec![run_one(&dirs[0])?]
    } else {
        ctx.pool()?.install(|| dirs.par_iter().map(run_one).collect::<anyhow::Result<_>>())?
    };

    let outputs: Vec<RunOutput> = results
        .iter()
        .map(|(m, dir, s)| RunOutput {
            dir: dir.clone(),
            seed: *s,
            iterations: m.iterations.len(),
            termination: serde_json::to_value(m.termination)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            content_hash: m.content_hash.clone(),
        })
        .collect();
    let run = RunManifest {
        command_line: std::env::args().collect(),
        config,
        backends: backends.identities(),
        sampler,
        seed,
        started_unix_secs: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        outputs,
    };
    std::fs::write(a.out.join("run.json"), serde_json::to_vec_pretty(&run)?)?;
    for o in &run.outputs {
        ctx.say(format!(
            "{}: seed {}, {} iteration(s), {}, hash {}",
            o.dir.display(),
            o.seed,
            o.iterations,
            o.termination,
            &o.content_hash[..12]
        ));
    }
    ctx.emit(&run)
}

/// Label file values: `true`/`false` or `"complete"`/`"incomplete"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum LabelValue {
    Bool(bool),
    Text(String),
}

fn load_labels(path: &Path) -> anyhow::Result<BTreeMap<String, bool>> {
    require_file(path, "labels file")?;
    let raw: BTreeMap<String, LabelValue> = serde_json::from_slice(&std::fs::read(path)?)
        .map_err(|e| UsageError(format!("bad labels file {}: {e}", path.display())))?;
    raw.into_iter()
        .map(|(k, v)| {
            let b = match v {
                LabelValue::Bool(b) => b,
                LabelValue::Text(t) => match t.to_ascii_lowercase().as_str() {
                    "complete" => true,
                    "incomplete" => false,
                    other => return Err(UsageError(format!("label '{other}' for {k}")).into()),
                },
            };
            Ok((k, b))
        })
        .collect()
}

/// One entry of `batch.json`.
#[derive(Debug, Clone, Deserialize)]
struct BatchEntry {
    id: String,
    image: String,
    mask: String,
    category: String,
}

fn bundle_item(dir: &Path, id: String, query: Option<&String>) -> anyhow::Result<CurationItem> {
    let o = read_bundle_outputs(dir).with_context(|| format!("reading bundle {}", dir.display()))?;
    let category = query
        .cloned()
        .or(o.category)
        .ok_or_else(|| UsageError(format!("{} records no category; pass --query", dir.display())))?;
    Ok(CurationItem {
        id,
        image: o.image,
        mask: o.mask,
        category,
        label: None,
    })
}

fn curation_items(a: &CurateArgs) -> anyhow::Result<Vec<CurationItem>> {
    if let Some(dir) = &a.bundle {
        if !dir.is_dir() {
            return Err(UsageError(format!("bundle {} not found", dir.display())).into());
        }
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "bundle".into());
        return Ok(vec![bundle_item(dir, id, a.query.as_ref())?]);
    }
    let dir = a.batch.as_ref().expect("clap requires --bundle or --batch");
    if !dir.is_dir() {
        return Err(UsageError(format!("batch {} not found", dir.display())).into());
    }
    let listing = dir.join("batch.json");
    if listing.is_file() {
        let entries: Vec<BatchEntry> = serde_json::from_slice(&std::fs::read(&listing)?)
            .map_err(|e| UsageError(format!("bad {}: {e}", listing.display())))?;
        return entries
            .into_iter()
            .map(|e| {
                Ok(CurationItem {
                    id: e.id,
                    image: io::read_image(&dir.join(&e.image))?,
                    mask: io::read_mask(&dir.join(&e.mask))?,
                    category: e.category,
                    label: None,
                })
            })
            .collect();
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("amodal.png").is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(UsageError(format!("{} holds no bundles and no batch.json", dir.display())).into());
    }
    subdirs
        .iter()
        .map(|p| {
            let id = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            bundle_item(p, id, a.query.as_ref())
        })
        .collect()
}

fn curate(ctx: &Ctx<'_>, a: &CurateArgs) -> anyhow::Result<()> {
    let config = ctx.pipeline(&a.pipeline, a.seed)?;
    let backends = ctx.plan(&a.backends)?.build(None)?;
    let mut items = curation_items(a)?;
    if let Some(path) = &a.labels {
        let labels = load_labels(path)?;
        for item in &mut items {
            item.label = labels.get(&item.id).copied();
        }
    }
    let report = ctx
        .pool()?
        .install(|| curate_batch(&items, &config, &backends, config.rng_seed))?;
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_vec_pretty(&report)?)?;
    }
    print_curation(ctx, &report);
    ctx.emit(&report)
}

fn print_curation(ctx: &Ctx<'_>, r: &CurationReport) {
    for i in &r.items {
        let label = serde_json::to_value(i.label).ok();
        let reason = serde_json::to_value(i.reason).ok();
        ctx.say(format!(
            "{}: {} ({}, area ratio {:.3})",
            i.id,
            label.as_ref().and_then(|v| v.as_str()).unwrap_or("?"),
            reason.as_ref().and_then(|v| v.as_str()).unwrap_or("?"),
            i.area_ratio
        ));
    }
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
    if !r.table.is_empty() {
        ctx.say(format!("{:<24} {:>9} {:>9} {:>9}", "", "Accuracy", "Precision", "Recall"));
        for row in &r.table {
            ctx.say(format!(
                "{:<24} {:>9} {:>9} {:>9}",
                row.name,
                fmt(row.accuracy),
                fmt(row.precision),
                fmt(row.recall)
            ));
        }
    }
}

fn dataset_build(ctx: &Ctx<'_>, a: &DatasetBuildArgs) -> anyhow::Result<()> {
    require_file(&a.pool.join("pool.json"), "pool description")?;
    if !(a.scale_min > 0.0 && a.scale_min <= a.scale_max) {
        return Err(UsageError("need 0 < --scale-min <= --scale-max".into()).into());
    }
    let cooccurrence = match &a.cooccurrence {
        Some(p) => {
            require_file(p, "co-occurrence table")?;
            Some(serde_json::from_slice(&std::fs::read(p)?).map_err(|e| UsageError(format!("bad co-occurrence table: {e}")))?)
        }
        None => None,
    };
    let pool = load_pool(&a.pool)?;
    let params = DatasetParams {
        easy: a.easy,
        hard: a.hard,
        seed: a.seed,
        placement: PlacementParams {
            scale_min: a.scale_min,
            scale_max: a.scale_max,
            max_attempts: a.max_attempts,
        },
        cooccurrence,
        ..DatasetParams::default()
    };
    std::fs::create_dir_all(&a.out)?;
    let manifest = ctx.pool()?.install(|| dataset::build_dataset(&pool, &params, &a.out))?;
    ctx.say(format!(
        "{} samples ({} easy, {} hard) from {} pool objects -> {}",
        manifest.samples.len(),
        manifest.easy,
        manifest.hard,
        pool.len(),
        a.out.display()
    ));
    ctx.say(format!("manifest hash {}", manifest.hash));
    ctx.emit(&serde_json::json!({
        "out": a.out,
        "samples": manifest.samples.len(),
        "easy": manifest.easy,
        "hard": manifest.hard,
        "hash": manifest.hash,
    }))
}

fn parse_metrics(list: &str) -> anyhow::Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for m in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m = m.to_ascii_lowercase();
        let expanded: Vec<String> = if m == "external" {
            EXTERNAL_METRICS.iter().map(|s| s.to_string()).collect()
        } else if eval::BUILTIN_METRICS.contains(&m.as_str()) || EXTERNAL_METRICS.contains(&m.as_str()) {
            vec![m]
        } else {
            return Err(UsageError(format!("unknown metric '{m}'")).into());
        };
        for e in expanded {
            if !out.contains(&e) {
                out.push(e);
            }
        }
    }
    if out.is_empty() {
        return Err(UsageError("no metrics selected".into()).into());
    }
    Ok(out)
}

fn evaluate(ctx: &Ctx<'_>, a: &EvalArgs) -> anyhow::Result<()> {
    require_file(&a.dataset.join("manifest.json"), "dataset manifest")?;
    let method: Method = a.sampler.parse().map_err(|e: amodal_core::Error| UsageError(e.to_string()))?;
    if let Method::External { dir, .. } = &method {
        if !dir.is_dir() {
            return Err(UsageError(format!("external results {} not found", dir.display())).into());
        }
    }
    let metrics = parse_metrics(&a.metrics)?;
    let config = ctx.pipeline(&a.pipeline, a.seed)?;
    let plan = ctx.plan(&a.backends)?;
    // Mocks without a scene are built per sample from its ground truth.
    let shared = if plan.needs_scene() { None } else { Some(plan.build(None)?) };
    let backends_for = |rec: &dataset::SampleRecord, s: &dataset::PseudoOcclusionSample| {
        match &shared {
            Some(b) => Ok(b.clone()),
            None => {
                let scene = scene_from_sample(s, &rec.category, &rec.occluder_category)?;
                plan.build(Some(&scene))
                    .map_err(|e| amodal_core::Error::Config(format!("{e:#}")))
            }
        }
    };
    let setup = EvalSetup {
        config: &config,
        seed: config.rng_seed,
        metrics: &metrics,
        backends_for: &backends_for,
    };
    let report = ctx.pool()?.install(|| eval::evaluate(&a.dataset, &method, &setup))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let csv = a.out.with_extension("csv");
    report.write(&a.out, &csv)?;
    for n in &report.notices {
        eprintln!("notice: {n}");
    }
    let cols: Vec<&String> = metrics.iter().filter(|m| {
        report.table.easy.contains_key(*m) || report.table.hard.contains_key(*m)
    }).collect();
    let cell = |t: &BTreeMap<String, f64>, m: &String| t.get(m).map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    ctx.say(format!(
        "{:<10} | {} | {}",
        "method",
        cols.iter().map(|m| format!("easy {m:>8}")).collect::<Vec<_>>().join(" "),
        cols.iter().map(|m| format!("hard {m:>8}")).collect::<Vec<_>>().join(" "),
    ));
    ctx.say(format!(
        "{:<10} | {} | {}",
        report.method,
        cols.iter().map(|m| format!("{:>13}", cell(&report.table.easy, m))).collect::<Vec<_>>().join(" "),
        cols.iter().map(|m| format!("{:>13}", cell(&report.table.hard, m))).collect::<Vec<_>>().join(" "),
    ));
    ctx.say(format!("report: {} and {}", a.out.display(), csv.display()));
    ctx.emit(&report)
}

/// Stand-in scene so a bare `mock` can answer pings.
fn placeholder_scene() -> anyhow::Result<ScriptedScene> {
    Ok(ScriptedScene::new(
        ImageBuffer::filled(1, 1, [24, 24, 24])?,
        Vec::new(),
        BBox::new(0, 0, 1, 1)?,
    )?)
}

fn backends_check(ctx: &Ctx<'_>, a: &BackendArgs) -> anyhow::Result<()> {
    let plan = ctx.plan(a)?;
    let placeholder = if plan.needs_scene() { Some(placeholder_scene()?) } else { None };
    let backends = plan.build(placeholder.as_ref())?;
    let mut rows = Vec::new();
    let mut first_err = None;
    for (role, r) in backends.ping_all() {
        match r {
            Ok(info) => {
                ctx.say(format!("{role:<10} ok    {} {}", info.name, info.version));
                rows.push(serde_json::json!({"role": role, "ok": true, "name": info.name, "version": info.version}));
            }
            Err(e) => {
                ctx.say(format!("{role:<10} FAIL  {e}"));
                rows.push(serde_json::json!({"role": role, "ok": false, "error": e.to_string()}));
                first_err.get_or_insert(e);
            }
        }
    }
    if !backends.has_metric() {
        ctx.say("metric     none  (perceptual metrics will be skipped)");
    }
    ctx.emit(&rows)?;
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn serve_mock(ctx: &Ctx<'_>, a: &ServeArgs) -> anyhow::Result<()> {
    let scene = SceneSource::parse(&a.scene).load()?;
    let addr = a
        .addr
        .parse()
        .map_err(|_| UsageError(format!("bad address '{}'", a.addr)))?;
    let mock = std::sync::Arc::new(amodal_core::backends::MockBackend::new(scene));
    let backends = amodal_core::backends::Backends::uniform(mock.clone()).with_metric(mock);
    let handle = serve(backends, addr)?;
    ctx.say(format!("serving mock backend at {}", handle.url()));
    ctx.emit(&serde_json::json!({"url": handle.url()}))?;
    std::io::stdout().flush()?;
    handle.wait();
    Ok(())
}

fn scene_init(ctx: &Ctx<'_>, name: &str, out: &Path) -> anyhow::Result<()> {
    let p = preset(name).ok_or_else(|| {
        UsageError(format!("unknown preset '{name}' (try: {})", PRESET_NAMES.join(", ")))
    })?;
    let scene = p.file.build(Path::new("."))?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("scene.json"), serde_json::to_vec_pretty(&p.file)?)?;
    io::write_image(&out.join("image.png"), &scene.photo_image())?;
    let layer = scene
        .layer_index(p.query)
        .ok_or_else(|| anyhow!("preset '{name}' lacks its query layer"))?;
    io::write_mask(&out.join("gt_mask.png"), &scene.layer_mask_in_photo(layer)?)?;
    io::write_mask(&out.join("modal_mask.png"), &scene.visible_mask_in_photo(layer)?)?;
    ctx.say(format!("wrote {} (query: {})", out.display(), p.query));
    ctx.emit(&serde_json::json!({"out": out, "query": p.query, "scene": out.join("scene.json")}))
}

fn scene_list(ctx: &Ctx<'_>) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for name in PRESET_NAMES {
        let p = preset(name).expect("listed presets exist");
        ctx.say(format!("{name:<14} query: {}", p.query));
        rows.push(serde_json::json!({"name": name, "query": p.query}));
    }
    ctx.emit(&rows)
}
