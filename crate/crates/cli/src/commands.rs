use crate::args::{BenchArgs, Cli, Cmd, EmbedArgs, Format, MaskArg, ModelArgs, ProcessArgs, ProfileArgs, ServeArgs, SynthArgs, TrainArgs};
use crate::config::{Overlay, Resolver, DATA_DIR_ENV};
use crate::CliError;
use anyhow::Context;
use attn_core::audio::{read_wav, write_wav, WavEncoding, Waveform};
use attn_core::datagen::{read_shards, synth_corpus, toy_catalog, write_shard_examples, ClassCatalog, LoadedCatalog, ShardExample, TOY_CLASSES};
use attn_core::embeddings::{build_class_embedding, is_builtin, EmbeddingExtractor, EmbeddingStore, Provenance, SharedStore};
use attn_core::metrics::{model_id, profile_stream, run_benchmark, score_estimates};
use attn_core::personalization::DataDir;
use attn_core::streaming::{process_file, process_offline, StreamConfig, StreamSession};
use attn_core::suppressor::{init_model, MaskOverride, SuppressorConfig};
use attn_core::training::{refresh_class_embeddings, train_with, validation_set, TrainConfig};
use attn_core::Model;
use attn_service::driver::{run_driver, LoopSource, SilenceSource};
use attn_service::{serve_tcp, serve_ws, Service};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

pub const DEFAULT_SEED: u64 = 7;
pub const TOY_FILES: usize = 8;
pub const TOY_SECS: f64 = 6.0;
pub const DEFAULT_PORT: u16 = 7700;
pub const DEFAULT_WS_PORT: u16 = 7701;
pub const DEFAULT_DATA_DIR: &str = "attn-data";
pub const PROGRESS_EVERY: u64 = 100;

/// Settings shared by every subcommand.
struct Common {
    seed: u64,
    format: Format,
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let overlay = match &cli.config {
        Some(p) => Overlay::load(p)?,
        None => Overlay::default(),
    };
    let mut r = Resolver::new(overlay);
    let common = Common { seed: r.get("seed", cli.seed, DEFAULT_SEED)?, format: r.get("format", cli.format, Format::Text)? };
    // resolution finishes before any work so --verbose reports it first
    let job = match cli.cmd {
        Cmd::Process(a) => Job::Process(resolve_process(&mut r, a)?),
        Cmd::Train(a) => Job::Train(resolve_train(&mut r, a)?),
        Cmd::Bench(a) => Job::Bench(resolve_bench(&mut r, a)?),
        Cmd::SynthCorpus(a) => Job::Synth(resolve_synth(&mut r, a)?),
        Cmd::Embed(a) => Job::Embed(resolve_embed(&mut r, a)?),
        Cmd::Serve(a) => Job::Serve(resolve_serve(&mut r, a)?),
        Cmd::Profile(a) => Job::Profile(resolve_profile(&mut r, a)?),
    };
    if cli.verbose {
        eprint!("{}", r.report());
    }
    match job {
        Job::Process(p) => process(&common, p),
        Job::Train(p) => train(&common, p),
        Job::Bench(p) => bench(&common, p),
        Job::Synth(p) => synth(&common, p),
        Job::Embed(p) => embed(&common, p),
        Job::Serve(p) => serve(&common, p),
        Job::Profile(p) => profile(&common, p),
    }
}

enum Job {
    Process(ProcessPlan),
    Train(TrainPlan),
    Bench(BenchPlan),
    Synth(SynthPlan),
    Embed(EmbedPlan),
    Serve(ServePlan),
    Profile(ProfilePlan),
}

struct Sources {
    model: Option<PathBuf>,
    store: Option<PathBuf>,
}

fn resolve_sources(r: &mut Resolver, m: ModelArgs) -> Result<Sources, CliError> {
    Ok(Sources { model: r.opt("model", m.model.map(path_str))?.map(PathBuf::from), store: r.opt("store", m.store.map(path_str))?.map(PathBuf::from) })
}

fn path_str(p: PathBuf) -> String {
    p.to_string_lossy().into_owned()
}

fn split_ids(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_string).collect()
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>, CliError> {
    split_ids(s).iter().map(|x| x.parse().map_err(|_| CliError::Usage(format!("bad value {x:?} in {key}")))).collect()
}

fn load_model(path: Option<&Path>, seed: u64) -> anyhow::Result<Model> {
    match path {
        Some(p) => Model::load(p).with_context(|| format!("loading model {}", p.display())),
        None => Ok(init_model(&SuppressorConfig::toy(), seed)?),
    }
}

fn load_store(path: Option<&Path>) -> anyhow::Result<EmbeddingStore> {
    match path {
        Some(p) => EmbeddingStore::load(p).with_context(|| format!("loading store {}", p.display())),
        None => Ok(EmbeddingStore::new()),
    }
}

fn toy(seed: u64) -> anyhow::Result<LoadedCatalog> {
    Ok(toy_catalog(&TOY_CLASSES, TOY_FILES, TOY_SECS, seed)?)
}

// process

struct ProcessPlan {
    input: PathBuf,
    output: PathBuf,
    src: Sources,
    targets: Vec<String>,
    strength: f64,
    offline: bool,
}

fn resolve_process(r: &mut Resolver, a: ProcessArgs) -> Result<ProcessPlan, CliError> {
    let src = resolve_sources(r, a.m)?;
    let targets = split_ids(&r.get("targets", a.targets, String::new())?);
    let strength = r.get("strength", a.strength, 1.0)?;
    if !(0.0..=1.0).contains(&strength) {
        return Err(CliError::Usage(format!("--strength {strength} outside [0, 1]")));
    }
    let offline = r.switch("offline", a.offline)?;
    Ok(ProcessPlan { input: a.input, output: a.output, src, targets, strength, offline })
}

fn process(c: &Common, p: ProcessPlan) -> Result<(), CliError> {
    let model = load_model(p.src.model.as_deref(), c.seed)?;
    let store = load_store(p.src.store.as_deref())?;
    let wave = read_wav(&p.input).with_context(|| format!("reading {}", p.input.display()))?;
    let out = if p.offline { process_offline(&model, &store, &wave, &p.targets, p.strength)? } else { process_file(Arc::new(model), &store, &wave, &p.targets, p.strength)? };
    write_wav(&p.output, &out, WavEncoding::Float32).with_context(|| format!("writing {}", p.output.display()))?;
    match c.format {
        Format::Text => println!("wrote {} ({} samples at {} Hz, targets [{}], strength {})", p.output.display(), out.len(), out.sample_rate, p.targets.join(", "), p.strength),
        Format::Records => println!(
            "kind=process input={} output={} samples={} rate={} targets={} strength={} offline={}",
            p.input.display(),
            p.output.display(),
            out.len(),
            out.sample_rate,
            p.targets.join(","),
            p.strength,
            p.offline
        ),
    }
    Ok(())
}

// train

struct TrainPlan {
    catalog: Option<PathBuf>,
    out: PathBuf,
    model: Option<PathBuf>,
    cfg: TrainConfig,
}

const TRAIN_KEYS: &[&str] = &[
    "batch", "lr", "weight_decay", "clip_norm", "crop_secs", "epoch_steps", "embed_recordings", "val_examples", "val_conditions", "validate_every", "checkpoint_every",
];

fn resolve_train(r: &mut Resolver, a: TrainArgs) -> Result<TrainPlan, CliError> {
    let toy_flag = r.switch("toy", a.toy)?;
    let catalog = r.opt("catalog", a.catalog.map(path_str))?.map(PathBuf::from);
    if toy_flag == catalog.is_some() {
        return Err(CliError::Usage("train needs exactly one of --toy or --catalog".into()));
    }
    let mut cfg = TrainConfig::default();
    cfg.steps = r.get("steps", a.steps, cfg.steps)?;
    for k in TRAIN_KEYS {
        if let Some(v) = r.file_raw(k) {
            cfg.set(k, &v).map_err(|e| CliError::Usage(e.to_string()))?;
        }
    }
    let out = PathBuf::from(r.get("out", a.out.map(path_str), "attn-train".to_string())?);
    cfg.out_dir = Some(out.clone());
    let model = r.opt("model", a.model.map(path_str))?.map(PathBuf::from);
    Ok(TrainPlan { catalog, out, model, cfg })
}

fn train(c: &Common, mut p: TrainPlan) -> Result<(), CliError> {
    p.cfg.seed = c.seed;
    let catalog = match &p.catalog {
        Some(m) => ClassCatalog::from_manifest(m).with_context(|| format!("reading catalog {}", m.display()))?.load()?,
        None => toy(c.seed)?,
    };
    let model = load_model(p.model.as_deref(), c.seed)?;
    let fmt = c.format;
    let mut acc = 0.0;
    let outcome = train_with(model, &catalog, &p.cfg, |s| match fmt {
        Format::Records => println!("kind=step {}", s.to_line()),
        Format::Text => {
            acc += s.loss;
            if (s.step + 1) % PROGRESS_EVERY == 0 {
                println!("step {:>6}  mean loss {:.3}  lr {:.2e}", s.step + 1, acc / PROGRESS_EVERY as f64, s.lr);
                acc = 0.0;
            }
        }
    })?;
    match fmt {
        Format::Text => {
            if let Some(b) = &outcome.baseline {
                println!("before training\n{}", b.table());
            }
            if let Some(v) = outcome.final_validation() {
                println!("after {} steps\n{}", p.cfg.steps, v.table());
            }
            println!("wrote {}", p.out.display());
        }
        Format::Records => {
            if let Some(v) = outcome.final_validation() {
                print!("{}", v.to_records());
            }
            println!("kind=train out={} steps={} model={}", p.out.display(), p.cfg.steps, model_id(&outcome.model));
        }
    }
    Ok(())
}

// bench

struct BenchPlan {
    src: Sources,
    shards: Option<PathBuf>,
    conditions: Vec<usize>,
    examples: usize,
    estimates: Option<PathBuf>,
    mask: MaskArg,
    records_out: Option<PathBuf>,
    write_shards: Option<PathBuf>,
}

fn resolve_bench(r: &mut Resolver, a: BenchArgs) -> Result<BenchPlan, CliError> {
    let src = resolve_sources(r, a.m)?;
    let shards = r.opt("shards", a.shards.map(path_str))?.map(PathBuf::from);
    let conditions = parse_list("conditions", &r.get("conditions", a.conditions, "1,2,3".to_string())?)?;
    if conditions.is_empty() || conditions.contains(&0) {
        return Err(CliError::Usage("--conditions needs positive target counts".into()));
    }
    let examples = r.get("examples", a.examples, 20)?;
    let estimates = r.opt("estimates", a.estimates.map(path_str))?.map(PathBuf::from);
    let mask = r.get("mask_override", a.mask_override, MaskArg::None)?;
    let records_out = r.opt("records_out", a.records_out.map(path_str))?.map(PathBuf::from);
    Ok(BenchPlan { src, shards, conditions, examples, estimates, mask, records_out, write_shards: a.write_shards })
}

fn bench(c: &Common, p: BenchPlan) -> Result<(), CliError> {
    let mut model = load_model(p.src.model.as_deref(), c.seed)?;
    model = match p.mask {
        MaskArg::None => model,
        MaskArg::Ones => model.with_mask_override(MaskOverride::Ones),
        MaskArg::Zeros => model.with_mask_override(MaskOverride::Zeros),
    };
    let need_toy = p.shards.is_none() || p.src.store.is_none();
    let cat = if need_toy { Some(toy(c.seed)?) } else { None };
    let store = match (&p.src.store, &cat) {
        (Some(path), _) => load_store(Some(path))?,
        (None, Some(cat)) => {
            let mut s = EmbeddingStore::new();
            refresh_class_embeddings(&mut model, cat, TrainConfig::default().embed_recordings, &mut s)?;
            s
        }
        (None, None) => unreachable!(),
    };
    let examples: Vec<ShardExample> = match (&p.shards, &cat) {
        (Some(dir), _) => read_shards(dir).with_context(|| format!("reading shards {}", dir.display()))?,
        (None, Some(cat)) => validation_set(cat, &p.conditions, p.examples, c.seed)?,
        (None, None) => unreachable!(),
    };
    if let Some(dir) = &p.write_shards {
        write_shard_examples(dir, &examples)?;
    }
    let report = match &p.estimates {
        Some(dir) => {
            let ests = examples
                .iter()
                .map(|ex| {
                    let f = dir.join(format!("{:04}.est.wav", ex.index));
                    if p.conditions.contains(&ex.target_ids.len()) {
                        read_wav(&f).with_context(|| format!("reading {}", f.display()))
                    } else {
                        Ok(Waveform::silence(0, ex.mixture.sample_rate))
                    }
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            score_estimates(&examples, &ests, &p.conditions, c.seed, &model_id(&model))?
        }
        None => run_benchmark(&model, &store, &examples, &p.conditions, c.seed)?,
    };
    let records = report.to_records();
    if let Some(path) = &p.records_out {
        std::fs::write(path, &records).with_context(|| format!("writing {}", path.display()))?;
    }
    match c.format {
        Format::Text => print!("{}", report.table()),
        Format::Records => print!("{records}"),
    }
    Ok(())
}

// synth-corpus

struct SynthPlan {
    out: PathBuf,
    classes: Vec<String>,
    files: usize,
    secs: f64,
}

fn resolve_synth(r: &mut Resolver, a: SynthArgs) -> Result<SynthPlan, CliError> {
    let out = PathBuf::from(r.get("out", a.out.map(path_str), "attn-corpus".to_string())?);
    let classes = split_ids(&r.get("classes", a.classes, TOY_CLASSES.join(","))?);
    let files = r.get("files", a.files, TOY_FILES)?;
    let secs = r.get("secs", a.secs, TOY_SECS)?;
    if files == 0 || !(secs > 0.0) {
        return Err(CliError::Usage("--files and --secs must be positive".into()));
    }
    Ok(SynthPlan { out, classes, files, secs })
}

fn synth(c: &Common, p: SynthPlan) -> Result<(), CliError> {
    let names: Vec<&str> = p.classes.iter().map(String::as_str).collect();
    let cat = synth_corpus(&p.out, &names, p.files, p.secs, c.seed)?;
    match c.format {
        Format::Text => {
            for (id, n) in cat.counts() {
                println!("{id:<12} {n} clips");
            }
            println!("wrote {}", p.out.join("manifest.tsv").display());
        }
        Format::Records => {
            for (id, n) in cat.counts() {
                println!("kind=class id={id} clips={n}");
            }
        }
    }
    Ok(())
}

// embed

struct EmbedPlan {
    class_id: String,
    recordings: Vec<PathBuf>,
    src: Sources,
}

fn resolve_embed(r: &mut Resolver, a: EmbedArgs) -> Result<EmbedPlan, CliError> {
    let class_id = r.opt("class_id", a.class_id)?.ok_or_else(|| CliError::Usage("embed needs --class-id".into()))?;
    let src = resolve_sources(r, a.m)?;
    if src.store.is_none() {
        return Err(CliError::Usage("embed needs --store".into()));
    }
    Ok(EmbedPlan { class_id, recordings: a.recordings, src })
}

fn embed(c: &Common, p: EmbedPlan) -> Result<(), CliError> {
    let model = load_model(p.src.model.as_deref(), c.seed)?;
    let path = p.src.store.as_deref().expect("checked at resolution");
    let mut store = if path.exists() { load_store(Some(path))? } else { EmbeddingStore::new() };
    let waves = p.recordings.iter().map(|f| read_wav(f).with_context(|| format!("reading {}", f.display()))).collect::<anyhow::Result<Vec<_>>>()?;
    let mut ex = EmbeddingExtractor::new(&model)?;
    let e = build_class_embedding(&waves, &model, &mut ex)?;
    let prov = if is_builtin(&p.class_id) { Provenance::Builtin } else { Provenance::Custom };
    store.upsert(&p.class_id, e, prov, waves.len() as u32)?;
    store.save(path)?;
    match c.format {
        Format::Text => println!("stored {} ({}, {} recordings) in {}", p.class_id, prov.as_str(), waves.len(), path.display()),
        Format::Records => println!("kind=embed id={} provenance={} recordings={} store={}", p.class_id, prov.as_str(), waves.len(), path.display()),
    }
    Ok(())
}

// serve

struct ServePlan {
    src: Sources,
    port: u16,
    ws_port: u16,
    data_dir: PathBuf,
    input: Option<PathBuf>,
    duration: Option<f64>,
}

fn resolve_serve(r: &mut Resolver, a: ServeArgs) -> Result<ServePlan, CliError> {
    let src = resolve_sources(r, a.m)?;
    let port = r.get("port", a.port, DEFAULT_PORT)?;
    let ws_port = r.get("ws_port", a.ws_port, DEFAULT_WS_PORT)?;
    let data_dir = PathBuf::from(r.opt_env("data_dir", a.data_dir, DATA_DIR_ENV)?.unwrap_or_else(|| DEFAULT_DATA_DIR.into()));
    let input = r.opt("input", a.input.map(path_str))?.map(PathBuf::from);
    let duration = r.opt("duration", a.duration)?;
    if duration.is_some_and(|d| !(d > 0.0)) {
        return Err(CliError::Usage("--duration must be positive".into()));
    }
    Ok(ServePlan { src, port, ws_port, data_dir, input, duration })
}

fn serve(c: &Common, p: ServePlan) -> Result<(), CliError> {
    let model = Arc::new(load_model(p.src.model.as_deref(), c.seed)?);
    let data = DataDir::open(&p.data_dir)?;
    let store_path = p.src.store.clone().unwrap_or_else(|| data.store_path());
    let store = if store_path.exists() { load_store(Some(&store_path))? } else { EmbeddingStore::new() };
    let service = Arc::new(Service::new(model, store, data)?);
    let stop = Arc::new(AtomicBool::new(false));
    let listener = TcpListener::bind(("127.0.0.1", p.port)).with_context(|| format!("binding port {}", p.port))?;
    let addr = listener.local_addr().map_err(anyhow::Error::from)?;
    let mut threads = Vec::new();
    {
        let (svc, stop) = (service.clone(), stop.clone());
        threads.push(std::thread::spawn(move || serve_tcp(svc, listener, stop)));
    }
    let ws_addr = if p.ws_port != 0 {
        let l = TcpListener::bind(("127.0.0.1", p.ws_port)).with_context(|| format!("binding port {}", p.ws_port))?;
        let a = l.local_addr().map_err(anyhow::Error::from)?;
        let (svc, stop) = (service.clone(), stop.clone());
        threads.push(std::thread::spawn(move || serve_ws(svc, l, stop)));
        Some(a)
    } else {
        None
    };
    let source: Box<dyn attn_core::streaming::SampleSource + Send> = match &p.input {
        Some(f) => Box::new(LoopSource::new(read_wav(f).with_context(|| format!("reading {}", f.display()))?)),
        None => Box::new(SilenceSource { rate: service.device_rate() }),
    };
    match c.format {
        Format::Text => {
            println!("tcp control on {addr}");
            if let Some(a) = ws_addr {
                println!("websocket control on ws://{a}");
            }
        }
        Format::Records => println!("kind=serve tcp={addr} ws={}", ws_addr.map_or_else(|| "off".to_string(), |a| a.to_string())),
    }
    if let Some(d) = p.duration {
        let stop = stop.clone();
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_secs_f64(d));
            stop.store(true, Ordering::Relaxed);
        });
    }
    let driven = run_driver(service, source, true, stop.clone());
    stop.store(true, Ordering::Relaxed);
    for t in threads {
        let _ = t.join();
    }
    let stats = driven?;
    if c.format == Format::Records {
        println!("kind=driver chunks={} analysis_dropped={}", stats.chunks, stats.analysis_dropped);
    }
    Ok(())
}

// profile

struct ProfilePlan {
    src: Sources,
    duration: f64,
    rate: u32,
    targets: Vec<String>,
}

fn resolve_profile(r: &mut Resolver, a: ProfileArgs) -> Result<ProfilePlan, CliError> {
    let src = resolve_sources(r, a.m)?;
    let duration = r.get("duration", a.duration, 10.0)?;
    if !(duration > 0.0) {
        return Err(CliError::Usage("--duration must be positive".into()));
    }
    let rate = r.get("rate", a.rate, 48_000)?;
    let targets = split_ids(&r.get("targets", a.targets, String::new())?);
    Ok(ProfilePlan { src, duration, rate, targets })
}

fn profile(c: &Common, p: ProfilePlan) -> Result<(), CliError> {
    let mut model = load_model(p.src.model.as_deref(), c.seed)?;
    let mut store = load_store(p.src.store.as_deref())?;
    let mut targets = p.targets.clone();
    if targets.is_empty() && p.src.store.is_none() {
        // toy embeddings from the given network so the suppression path runs
        refresh_class_embeddings(&mut model, &toy(c.seed)?, 1, &mut store)?;
        targets.push(TOY_CLASSES[0].to_string());
    }
    let model = Arc::new(model);
    let cfg = StreamConfig { active_targets: targets.clone(), ..StreamConfig::with_rate(p.rate) };
    let mut session = StreamSession::new(model, Arc::new(SharedStore::new(store)), cfg)?;
    let rec = profile_stream(&mut session, p.duration, c.seed)?;
    match c.format {
        Format::Text => {
            println!("streamed {} s at {} Hz, targets [{}]", p.duration, p.rate, targets.join(", "));
            println!("{rec}");
        }
        Format::Records => println!("{}", rec.to_record()),
    }
    Ok(())
}
