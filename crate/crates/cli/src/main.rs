use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use forge_core::benchmark_build::BuildOptions;
use forge_core::compositor::Variant;
use forge_core::eval_harness::{
    self, ensemble, human_also_wrong_fraction, run_eval, same_wrong_fraction, score, score_pooled, vqascore_eval,
    wrong_set_iou, AlwaysLetter, Answers, ChatResponder, HttpChat, HumanAggregation, KeyReader, ModelEndpoint,
    Report, Responder, RunOptions, ScoreOptions, Trial, UniformGuesser,
};
use forge_core::inpaint::InpaintBackend;
use forge_core::jsonl;
use forge_core::pipeline::{
    build_manifest_dir, expansion_treatments, generate_all, measure_throughput, run_treatments,
    self_paste_treatments, GenerateConfig, Sink, MANIFEST_FILE,
};
use forge_core::scene_bundle::{load_bundle, write_bundle, MANIFEST_FILE as BUNDLE_FILE};
use forge_core::synth::{synth_corpus, SynthConfig};
use forge_core::triplet_select::{enumerate_candidates, sample_passing_across, SelectionConfig};
use forge_core::{BenchmarkManifest, SceneBundle, TripletCandidate};

#[derive(Parser)]
#[command(name = "forge", version, about = "Build and score 3D-inconsistency benchmark pairs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render procedural scene bundles.
    Synth(SynthArgs),
    /// Pick (V1, V2, V3, object) candidates from scene bundles.
    Select(SelectArgs),
    /// Edit, label and write pairs for a candidate list.
    Generate(GenerateArgs),
    /// Build a benchmark manifest from a pairs directory.
    BuildManifest(BuildArgs),
    /// Run a model (or a mock) over a manifest, appending to a trial log.
    Eval(EvalArgs),
    /// Per-model accuracy with strata.
    Report(ReportArgs),
    /// Accuracy-weighted vote across models.
    Ensemble(EnsembleArgs),
    /// Wrong-answer overlap between two respondents.
    Agreement(AgreementArgs),
    /// VQAScore judge evaluation and its correlation with human accuracy.
    Vqascore(VqaArgs),
    /// Serve the human study and vetting API.
    Serve(ServeArgs),
    /// Manifest subset accepted by vetters, capped per scene.
    ExportCurated(CurateArgs),
    /// Pairs/sec on the synthetic corpus at several worker counts.
    Throughput(ThroughputArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    scenes: usize,
    #[arg(long, default_value_t = 1024)]
    width: u32,
    #[arg(long, default_value_t = 768)]
    height: u32,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// A bundle directory, or a directory of bundles.
    #[arg(long)]
    bundle: PathBuf,
    /// JSON selection config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    per_scene_cap: Option<usize>,
    /// Write every checked candidate, passing or not.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Expansion,
    SelfPaste,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    candidates: PathBuf,
    /// Bundle directory (or directory of bundles) the candidates refer to.
    #[arg(long)]
    bundles: PathBuf,
    /// JSON generation config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    expansion: Option<f64>,
    /// `native`, or the URL of a remote inpainting service.
    #[arg(long)]
    backend: Option<String>,
    /// Fall back to the native inpainter when the remote one fails.
    #[arg(long)]
    fallback_native: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Write one pairs directory and manifest per treatment instead.
    #[arg(long)]
    sweep: Option<Sweep>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Defaults to `<pairs>/keys.jsonl`.
    #[arg(long)]
    keys: Option<PathBuf>,
    /// Defaults to `<pairs>/manifest.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip pairs with missing metadata instead of failing.
    #[arg(long)]
    allow_partial: bool,
    /// Caption and categorize scenes with a chat model.
    #[arg(long, requires = "labeler_endpoint")]
    categorize: bool,
    /// Endpoint config file (JSON) for the labeler.
    #[arg(long)]
    labeler_endpoint: Option<PathBuf>,
    /// Endpoint name in the config; defaults to the only entry.
    #[arg(long)]
    labeler: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory image paths are relative to; defaults to the manifest's.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Endpoint config file (JSON object or array of endpoints).
    #[arg(long, conflicts_with = "mock")]
    endpoint: Option<PathBuf>,
    /// Restrict to these endpoint names.
    #[arg(long, value_delimiter = ',')]
    model: Vec<String>,
    /// `key`, `always-<letter>` or `random[:seed]`.
    #[arg(long)]
    mock: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    trials: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Count unanswered items as wrong.
    #[arg(long)]
    strict: bool,
    /// Pool every `human:*` respondent into one `human` row.
    #[arg(long)]
    pool_humans: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long)]
    trials: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    /// Weights are accuracies relative to this model.
    #[arg(long)]
    baseline: String,
}

#[derive(Args)]
struct AgreementArgs {
    #[arg(long)]
    trials: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
    /// Human trial log for the human-also-wrong fraction of `a`.
    #[arg(long)]
    humans: Option<PathBuf>,
}

#[derive(Args)]
struct VqaArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    endpoint: PathBuf,
    #[arg(long)]
    judge: String,
    #[arg(long)]
    captioner: String,
    /// Human trials (a study log or trial log) to correlate against.
    #[arg(long)]
    humans: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "item-mean")]
    aggregation: Aggregation,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregation {
    ItemMean,
    PerTrial,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Pairs directory; defaults to the manifest's.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value = "study_events.jsonl")]
    log: PathBuf,
    /// Built UI bundle to serve at `/`.
    #[arg(long, name = "static")]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CurateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Study service event log.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = forge_study::DEFAULT_PER_SCENE_CAP)]
    cap: usize,
}

#[derive(Args)]
struct ThroughputArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,8")]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pairs: usize,
    #[arg(long, default_value_t = 8)]
    scenes: usize,
    #[arg(long, default_value_t = 1024)]
    width: u32,
    #[arg(long, default_value_t = 768)]
    height: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::Select(a) => select(a),
        Cmd::Generate(a) => generate(a),
        Cmd::BuildManifest(a) => build(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Report(a) => report(a),
        Cmd::Ensemble(a) => ensemble_cmd(a),
        Cmd::Agreement(a) => agreement(a),
        Cmd::Vqascore(a) => vqascore(a),
        Cmd::Serve(a) => serve(a),
        Cmd::ExportCurated(a) => export_curated(a),
        Cmd::Throughput(a) => throughput(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf()
}

fn load_bundles(dir: &Path) -> Result<Vec<SceneBundle>> {
    if dir.join(BUNDLE_FILE).is_file() {
        return Ok(vec![load_bundle(dir)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(BUNDLE_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no scene bundles under {}", dir.display());
    }
    dirs.iter()
        .map(|d| load_bundle(d).with_context(|| format!("loading {}", d.display())))
        .collect()
}

fn load_trials(paths: &[PathBuf]) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_any_trials(p)?);
    }
    Ok(out)
}

/// A trial log, or a study event log whose answers are trials.
fn read_any_trials(p: &Path) -> Result<Vec<Trial>> {
    match jsonl::read_all::<Trial>(p) {
        Ok(t) => Ok(t),
        Err(_) => forge_study::read_trials(p).with_context(|| format!("reading trials from {}", p.display())),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        width: a.width,
        height: a.height,
        frames: a.frames,
        seed: a.seed,
        ..Default::default()
    };
    fs::create_dir_all(&a.out)?;
    for b in synth_corpus(a.scenes, &cfg) {
        write_bundle(&b, a.out.join(&b.scene_id))?;
        eprintln!("wrote {}", b.scene_id);
    }
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let mut cfg: SelectionConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SelectionConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.rng_seed = s;
    }
    if a.per_scene_cap.is_some() {
        cfg.per_scene_cap = a.per_scene_cap;
    }
    cfg.validate()?;
    let bundles = load_bundles(&a.bundle)?;
    let out: Vec<TripletCandidate> = if a.all {
        bundles.iter().flat_map(|b| enumerate_candidates(b, &cfg)).collect()
    } else {
        let sample = sample_passing_across(&bundles, &cfg, a.n.unwrap_or(usize::MAX));
        if sample.exhausted {
            eprintln!("corpus exhausted after {} passing candidates", sample.candidates.len());
        }
        sample.candidates
    };
    jsonl::write_all(&a.out, &out)?;
    eprintln!("{} candidates → {}", out.len(), a.out.display());
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg: GenerateConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GenerateConfig::default(),
    };
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(e) = a.expansion {
        cfg.expansion = e;
    }
    if let Some(s) = a.seed {
        cfg.rng_seed = s;
    }
    match a.backend.as_deref() {
        None => {}
        Some("native") => cfg.backend = InpaintBackend::Native,
        Some(url) => {
            cfg.backend = InpaintBackend::Remote {
                endpoint: url.to_string(),
                timeout_ms: 60_000,
                fallback_native: a.fallback_native,
            }
        }
    }
    let candidates: Vec<TripletCandidate> = jsonl::read_all(&a.candidates)?;
    let bundles = load_bundles(&a.bundles)?;

    let treatments = match a.sweep {
        None => {
            let s = generate_all(&bundles, &candidates, &cfg, &Sink::Dir(a.out.clone()), a.workers, Default::default())?;
            for f in &s.failures {
                eprintln!("failed {} {:?} object {}: {}", f.scene_id, f.frames, f.object_id, f.reason);
            }
            eprintln!("{} pairs → {}", s.written.len(), a.out.display());
            print_json(&s);
            return Ok(());
        }
        Some(Sweep::Expansion) => expansion_treatments(),
        Some(Sweep::SelfPaste) => self_paste_treatments(cfg.expansion),
    };
    let outcomes = run_treatments(&bundles, &candidates, &cfg, &treatments, &a.out, a.workers)?;
    for o in &outcomes {
        eprintln!("{}: {} pairs, {} manifest items", o.treatment.name, o.summary.written.len(), o.manifest_items);
    }
    print_json(&outcomes);
    Ok(())
}

fn endpoint_named(path: &Path, name: Option<&str>) -> Result<ModelEndpoint> {
    let all = ModelEndpoint::load_all(&fs::read_to_string(path)?)?;
    match name {
        Some(n) => all.into_iter().find(|e| e.name == n).with_context(|| format!("no endpoint {n} in {}", path.display())),
        None if all.len() == 1 => Ok(all.into_iter().next().expect("one")),
        None => bail!("{} defines several endpoints; pick one by name", path.display()),
    }
}

fn build(a: BuildArgs) -> Result<()> {
    let opts = BuildOptions {
        allow_partial: a.allow_partial,
        ..Default::default()
    };
    let labeler = match (&a.labeler_endpoint, a.categorize) {
        (Some(p), true) => Some(HttpChat::new(endpoint_named(p, a.labeler.as_deref())?)?),
        _ => None,
    };
    let manifest = build_manifest_dir(
        &a.pairs,
        a.keys.as_deref(),
        &opts,
        labeler.as_ref().map(|l| l as &dyn eval_harness::ChatModel),
    )?;
    let out = a.out.unwrap_or_else(|| a.pairs.join(MANIFEST_FILE));
    manifest.save(&out)?;
    if !manifest.header.skipped.is_empty() {
        eprintln!("skipped: {}", manifest.header.skipped.join(", "));
    }
    eprintln!("{} items → {}", manifest.items.len(), out.display());
    Ok(())
}

fn mock_responder(spec: &str, manifest: &BenchmarkManifest) -> Result<Box<dyn Responder>> {
    Ok(match spec.split_once(':').unwrap_or((spec, "")) {
        ("key", _) => Box::new(KeyReader::from_manifest("mock-key", manifest)),
        ("random", seed) => Box::new(UniformGuesser::new(if seed.is_empty() { 0 } else { seed.parse()? })),
        (s, _) if s.starts_with("always-") && s.len() == 8 => {
            Box::new(AlwaysLetter::new(s.as_bytes()[7].to_ascii_uppercase() as char))
        }
        _ => bail!("unknown mock {spec:?}; use key, always-<letter> or random[:seed]"),
    })
}

fn eval(a: EvalArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest)?;
    let root = a.root.clone().unwrap_or_else(|| parent_dir(&a.manifest));
    let mut responders: Vec<(Box<dyn Responder>, usize)> = Vec::new();
    if let Some(spec) = &a.mock {
        responders.push((mock_responder(spec, &manifest)?, a.concurrency.unwrap_or(1)));
    } else if let Some(p) = &a.endpoint {
        for e in ModelEndpoint::load_all(&fs::read_to_string(p)?)? {
            if a.model.is_empty() || a.model.contains(&e.name) {
                let c = a.concurrency.unwrap_or(e.max_concurrency);
                responders.push((Box::new(ChatResponder { model: HttpChat::new(e)? }), c));
            }
        }
    } else {
        bail!("pass --endpoint or --mock");
    }
    if responders.is_empty() {
        bail!("no endpoint matched {:?}", a.model);
    }
    for (r, concurrency) in &responders {
        let t = Instant::now();
        let trials = run_eval(
            &manifest,
            r.as_ref(),
            &RunOptions {
                concurrency: *concurrency,
                root: root.clone(),
                log: Some(a.out.clone()),
                resume: a.resume,
            },
        )?;
        eprintln!("{}: {} new trials in {:.1}s", r.name(), trials.len(), t.elapsed().as_secs_f64());
    }
    Ok(())
}

fn print_report(r: &Report) {
    let o = &r.overall;
    println!(
        "{}  accuracy {:.1}% ({}/{})  random {:.1}%  parse failures {}  transport failures {}  missing {}",
        r.model,
        100.0 * o.accuracy,
        o.correct,
        o.n,
        100.0 * r.expected_random_accuracy,
        r.parse_failures,
        r.transport_failures,
        r.missing.len()
    );
    for (factor, values) in &r.strata {
        let cells: Vec<String> = values
            .iter()
            .map(|(v, s)| format!("{v} {:.1}% (n={})", 100.0 * s.accuracy, s.n))
            .collect();
        println!("  {factor:<16} {}", cells.join("  "));
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest)?;
    let trials = load_trials(&a.trials)?;
    let opts = ScoreOptions {
        strict: a.strict,
        ..Default::default()
    };
    let mut reports: Vec<Report> = if a.pool_humans {
        let machine: Vec<Trial> = trials.iter().filter(|t| !t.model.starts_with("human:")).cloned().collect();
        let mut r = score(&machine, &manifest, &opts);
        if trials.iter().any(|t| t.model.starts_with("human:")) {
            r.push(score_pooled(&trials, &manifest, "human:", "human", &opts));
        }
        r
    } else {
        score(&trials, &manifest, &opts)
    };
    reports.sort_by(|a, b| a.model.cmp(&b.model));
    if a.json {
        print_json(&reports);
    } else {
        reports.iter().for_each(print_report);
    }
    Ok(())
}

fn ensemble_cmd(a: EnsembleArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest)?;
    let trials = load_trials(&a.trials)?;
    let r = ensemble(&trials, &manifest, &a.models, &a.baseline)?;
    eprintln!(
        "ensemble accuracy {:.1}% ({}/{})",
        100.0 * r.overall.accuracy,
        r.overall.correct,
        r.overall.n
    );
    print_json(&r);
    Ok(())
}

fn agreement(a: AgreementArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest)?;
    let trials = load_trials(&a.trials)?;
    let (x, y) = (
        Answers::from_trials(&trials, &manifest, &a.a),
        Answers::from_trials(&trials, &manifest, &a.b),
    );
    let humans = match &a.humans {
        Some(p) => read_any_trials(p)?,
        None => Vec::new(),
    };
    let mut out = BTreeMap::new();
    out.insert("wrong_set_iou", serde_json::json!(wrong_set_iou(&x.wrong, &y.wrong)));
    out.insert("same_wrong_fraction", serde_json::json!(same_wrong_fraction(&x, &y)));
    out.insert("wrong_a", serde_json::json!(x.wrong.len()));
    out.insert("wrong_b", serde_json::json!(y.wrong.len()));
    if a.humans.is_some() {
        out.insert(
            "human_also_wrong_fraction",
            serde_json::json!(human_also_wrong_fraction(&humans, &manifest, &x.wrong)),
        );
    }
    print_json(&out);
    Ok(())
}

fn vqascore(a: VqaArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest)?;
    let root = a.root.clone().unwrap_or_else(|| parent_dir(&a.manifest));
    let judge = HttpChat::new(endpoint_named(&a.endpoint, Some(&a.judge))?)?;
    let captioner = HttpChat::new(endpoint_named(&a.endpoint, Some(&a.captioner))?)?;
    let humans = match &a.humans {
        Some(p) => read_any_trials(p)?,
        None => Vec::new(),
    };
    let agg = match a.aggregation {
        Aggregation::ItemMean => HumanAggregation::ItemMean,
        Aggregation::PerTrial => HumanAggregation::PerTrial,
    };
    let r = vqascore_eval(&manifest, &root, &judge, &captioner, &humans, agg)?;
    eprintln!(
        "pairwise accuracy {:.1}%  pearson {:?}  kendall {:?}  ({} points)",
        100.0 * r.pairwise_acc,
        r.pearson_r,
        r.kendall_tau,
        r.correlated_points
    );
    match &a.out {
        Some(p) => fs::write(p, serde_json::to_vec_pretty(&r)?)?,
        None => print_json(&r),
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest)?;
    let cfg = forge_study::ServeConfig {
        manifest,
        pairs_root: a.pairs.unwrap_or_else(|| parent_dir(&a.manifest)),
        log_path: a.log,
        static_dir: a.static_dir,
        seed: a.seed,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(forge_study::serve(cfg, a.addr))?;
    Ok(())
}

fn export_curated(a: CurateArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest)?;
    let vets = forge_study::read_vets(&a.log)?;
    let curated = forge_study::export_curated(&manifest, &vets, a.cap);
    let sidecar = forge_study::write_curated(&curated, &a.out)?;
    eprintln!(
        "{} of {} items curated → {} (decisions: {})",
        curated.manifest.items.len(),
        manifest.items.len(),
        a.out.display(),
        sidecar.display()
    );
    Ok(())
}

fn throughput(a: ThroughputArgs) -> Result<()> {
    let bundles = synth_corpus(
        a.scenes,
        &SynthConfig {
            width: a.width,
            height: a.height,
            seed: a.seed,
            ..Default::default()
        },
    );
    let sel = SelectionConfig {
        per_scene_cap: Some(a.pairs.div_ceil(a.scenes.max(1)).max(1)),
        ..Default::default()
    };
    let t = Instant::now();
    let sample = sample_passing_across(&bundles, &sel, a.pairs);
    let select_ms = t.elapsed().as_secs_f64() * 1e3;
    let r = measure_throughput(&bundles, &sample.candidates, &GenerateConfig::default(), &a.workers)?;
    if a.json {
        print_json(&r);
        return Ok(());
    }
    println!(
        "{}x{}, {} pairs, {} cores available, selection {:.0} ms",
        r.width,
        r.height,
        sample.candidates.len(),
        r.available_cores,
        select_ms
    );
    println!("workers  pairs/s  inpaint  paste  label  meta  encode  (mean ms/pair)");
    for run in &r.runs {
        let m = &run.stage_mean_ms;
        println!(
            "{:>7}  {:>7.2}  {:>7.1}  {:>5.1}  {:>5.1}  {:>4.1}  {:>6.1}",
            run.workers,
            run.pairs_per_sec.unwrap_or(0.0),
            m.inpaint_ms,
            m.paste_ms,
            m.label_ms,
            m.metadata_ms,
            m.encode_ms
        );
    }
    if let Some(s) = r.scaling {
        println!("scaling {s:.2}x");
    }
    Ok(())
}
