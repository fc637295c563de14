//! Command-line pipeline: data generation, training, evaluation and report
//! export. Every command resolves its configuration as defaults, then the
//! `--config` file section named after the command, then flags, and records
//! the result in `<out-dir>/manifest.json`.

pub mod plot;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use mirlab::dataset::{self, Pairing, Split};
use mirlab::eval::{self, CemConfig, Demo, EvalReport, ImitationConfig, MethodSummary};
use mirlab::repr::{self, checkpoint, EncoderConfig, LossKind, TrainConfig};
use mirlab::sim::DomainKind;

#[derive(Parser, Debug)]
#[command(name = "mirlab", version, about = "Cross-domain representation learning for visual imitation")]
pub struct Cli {
    /// Directory that relative paths and outputs resolve against.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// JSON file with one object per command name.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the paired dataset.
    GenData(GenDataFlags),
    /// Train one objective on a dataset.
    Train(TrainFlags),
    /// Reachability rank correlation and cross-domain alignment.
    EvalReachability(ReachFlags),
    /// Goal-sequence imitation with staged success accounting.
    EvalImitate(ImitateFlags),
    /// SVG plots and embedding export.
    Report(ReportFlags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::EvalReachability(_) => "eval-reachability",
            Command::EvalImitate(_) => "eval-imitate",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenDataFlags {
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct GenDataConfig {
    episodes: usize,
    seed: u64,
    out: String,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            episodes: 64,
            seed: 1,
            out: "d.mird".into(),
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    gcp_horizon: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Checkpoint path (default `<loss>.mirm`).
    #[arg(long)]
    out: Option<String>,
    /// Metrics CSV path (default `<loss>_metrics.csv`).
    #[arg(long)]
    metrics: Option<String>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct TrainRunConfig {
    loss: String,
    data: String,
    steps: usize,
    seed: u64,
    lr: f64,
    batch: usize,
    window: usize,
    gcp_horizon: usize,
    lambda: f64,
    log_every: usize,
    out: Option<String>,
    metrics: Option<String>,
    encoder: EncoderConfig,
    policy_hidden: Vec<usize>,
    classifier_hidden: usize,
    distance_pairs: usize,
    holdout_batches: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainRunConfig {
            loss: t.loss_kind.name().into(),
            data: "d.mird".into(),
            steps: t.steps,
            seed: t.seed,
            lr: t.adam.learning_rate,
            batch: t.batch.batch,
            window: t.batch.window,
            gcp_horizon: t.batch.gcp_horizon,
            lambda: t.lambda_cdgcp,
            log_every: t.log_every,
            out: None,
            metrics: None,
            encoder: t.encoder,
            policy_hidden: t.policy_hidden,
            classifier_hidden: t.classifier_hidden,
            distance_pairs: t.distance_pairs,
            holdout_batches: t.holdout_batches,
        }
    }
}

impl TrainRunConfig {
    fn train_config(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig {
            loss_kind: parse_loss(&self.loss)?,
            steps: self.steps,
            seed: self.seed,
            lambda_cdgcp: self.lambda,
            log_every: self.log_every,
            encoder: self.encoder.clone(),
            policy_hidden: self.policy_hidden.clone(),
            classifier_hidden: self.classifier_hidden,
            distance_pairs: self.distance_pairs,
            holdout_batches: self.holdout_batches,
            ..TrainConfig::default()
        };
        t.adam.learning_rate = self.lr;
        t.batch.batch = self.batch;
        t.batch.window = self.window;
        t.batch.gcp_horizon = self.gcp_horizon;
        Ok(t)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ReachFlags {
    /// Comma-separated methods; checkpoints are `<checkpoints>/<method>.mirm`.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    checkpoints: Option<String>,
    #[arg(long)]
    data: Option<String>,
    /// Demos to evaluate; with `pairs`, held-out trajectories.
    #[arg(long)]
    demos: Option<usize>,
    /// `dr_invisible` or `dr_arm`.
    #[arg(long)]
    pairing: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<String>,
    /// Directory for per-trajectory `frame,normalized_distance` curves.
    #[arg(long)]
    curves: Option<String>,
    /// Held-out rendering for the cross-domain curve (`invisible`, `stick`,
    /// `blobhand`), or `pairs` for domain B of the dataset pairs.
    #[arg(long)]
    cross_domain: Option<String>,
    #[arg(long)]
    demo_seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ReachConfig {
    methods: String,
    checkpoints: String,
    data: String,
    demos: usize,
    pairing: String,
    k: usize,
    out: String,
    curves: String,
    cross_domain: String,
    demo_seed: u64,
}

impl Default for ReachConfig {
    fn default() -> Self {
        ReachConfig {
            methods: "mir,tcn".into(),
            checkpoints: ".".into(),
            data: "d.mird".into(),
            demos: 10,
            pairing: "dr_invisible".into(),
            k: 5,
            out: "reachability.csv".into(),
            curves: "curves".into(),
            cross_domain: "blobhand".into(),
            demo_seed: 31,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ImitateFlags {
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    checkpoints: Option<String>,
    /// Comma-separated evaluation domains.
    #[arg(long)]
    domains: Option<String>,
    #[arg(long)]
    demos: Option<usize>,
    #[arg(long)]
    attempts: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    demo_seed: Option<u64>,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ImitateConfig {
    methods: String,
    checkpoints: String,
    domains: String,
    demos: usize,
    attempts: usize,
    stride: usize,
    epsilon: f64,
    jitter: f64,
    budget_factor: usize,
    seed: u64,
    demo_seed: u64,
    out: String,
    cem: CemConfig,
}

impl Default for ImitateConfig {
    fn default() -> Self {
        let i = ImitationConfig::default();
        ImitateConfig {
            methods: "mir,tcn,tdc,gcp".into(),
            checkpoints: ".".into(),
            domains: "invisible,stick,blobhand".into(),
            demos: 10,
            attempts: i.attempts,
            stride: i.stride,
            epsilon: i.epsilon,
            jitter: i.jitter,
            budget_factor: i.budget_factor,
            seed: i.seed,
            demo_seed: 21,
            out: "eval_report".into(),
            cem: CemConfig::default(),
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ReportFlags {
    /// `reachability`, `loss`, `success` (SVG) or `embeddings` (CSV).
    #[arg(long)]
    kind: Option<String>,
    /// CSV to plot.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// For `embeddings`: checkpoint, dataset and trajectory index.
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    trajectory: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ReportConfig {
    kind: String,
    input: Option<String>,
    out: Option<String>,
    checkpoint: Option<String>,
    data: String,
    trajectory: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            kind: "success".into(),
            input: None,
            out: None,
            checkpoint: None,
            data: "d.mird".into(),
            trajectory: 0,
        }
    }
}

/// Defaults, then the config file section, then non-null flags.
fn resolve<T: Serialize + DeserializeOwned + Default>(section: Option<&Value>, flags: &impl Serialize) -> Result<T> {
    let mut v = serde_json::to_value(T::default())?;
    let obj = v.as_object_mut().expect("config structs are objects");
    if let Some(sec) = section {
        let sec = sec.as_object().ok_or_else(|| anyhow!("config section must be a JSON object"))?;
        for (k, x) in sec {
            obj.insert(k.clone(), x.clone());
        }
    }
    if let Value::Object(f) = serde_json::to_value(flags)? {
        for (k, x) in f {
            if !x.is_null() {
                obj.insert(k, x);
            }
        }
    }
    serde_json::from_value(v).context("invalid configuration")
}

fn parse_loss(s: &str) -> Result<LossKind> {
    LossKind::parse(s).ok_or_else(|| anyhow!("unknown method {s:?}"))
}

fn list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_string).collect()
}

struct Ctx {
    out_dir: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    fn write(&mut self, p: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        std::fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display()))?;
        self.outputs.push(p.to_path_buf());
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_manifest(ctx: &Ctx, command: &str, config: Value) -> Result<()> {
    let path = ctx.out_dir.join("manifest.json");
    let mut root = match std::fs::read(&path) {
        Ok(b) => serde_json::from_slice::<Value>(&b).unwrap_or_else(|_| Value::Object(Map::new())),
        Err(_) => Value::Object(Map::new()),
    };
    let outputs: Vec<Value> = ctx
        .outputs
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).unwrap_or_default();
            let rel = p.strip_prefix(&ctx.out_dir).unwrap_or(p);
            serde_json::json!({
                "path": rel.to_string_lossy(),
                "bytes": bytes.len(),
                "sha256": sha256_hex(&bytes),
            })
        })
        .collect();
    let obj = root.as_object_mut().ok_or_else(|| anyhow!("manifest.json is not an object"))?;
    obj.insert("tool".into(), Value::from("mirlab"));
    obj.insert("version".into(), Value::from(env!("CARGO_PKG_VERSION")));
    let runs = obj.entry("runs").or_insert_with(|| Value::Object(Map::new()));
    runs.as_object_mut()
        .ok_or_else(|| anyhow!("manifest runs is not an object"))?
        .insert(command.into(), serde_json::json!({ "config": config, "outputs": outputs }));
    std::fs::write(&path, serde_json::to_string_pretty(&root)? + "\n")?;
    Ok(())
}

fn gen_data(ctx: &mut Ctx, cfg: &GenDataConfig) -> Result<String> {
    let ds = dataset::build_dataset(cfg.episodes, cfg.seed)?;
    let out = ctx.path(&cfg.out);
    ctx.write(&out, &dataset::format::to_bytes(&ds))?;
    Ok(format!(
        "wrote {} paired trajectories ({} discarded) to {}",
        ds.trajectories.len(),
        ds.manifest.discarded.len(),
        out.display()
    ))
}

fn train_cmd(ctx: &mut Ctx, cfg: &TrainRunConfig) -> Result<String> {
    let tc = cfg.train_config()?;
    let ds = load_dataset(ctx, &cfg.data)?;
    let out = match repr::train(&ds, &tc) {
        Ok(o) => o,
        Err(repr::train::TrainError::NonFinite { step, last_good }) => {
            let p = ctx.path(&format!("{}_last_good.mirm", cfg.loss));
            ctx.write(&p, &checkpoint::to_bytes(&last_good))?;
            bail!("non-finite loss at step {step}; last good checkpoint written to {}", p.display());
        }
        Err(e) => return Err(e.into()),
    };
    let ck = ctx.path(cfg.out.as_deref().unwrap_or(&format!("{}.mirm", cfg.loss)));
    ctx.write(&ck, &checkpoint::to_bytes(&out.models))?;
    let mp = ctx.path(cfg.metrics.as_deref().unwrap_or(&format!("{}_metrics.csv", cfg.loss)));
    ctx.write(&mp, repr::train::metrics_csv(&out.metrics).as_bytes())?;
    let last = out.metrics.last().map_or(f64::NAN, |r| r.holdout_loss);
    Ok(format!("trained {} for {} steps; holdout loss {last:.4}; checkpoint {}", cfg.loss, cfg.steps, ck.display()))
}

fn load_dataset(ctx: &Ctx, p: &str) -> Result<dataset::Dataset> {
    let path = ctx.path(p);
    dataset::load(&path).with_context(|| format!("cannot load dataset {}", path.display()))
}

fn load_method(ctx: &Ctx, dir: &str, method: &str) -> Result<repr::TrainedModels> {
    let kind = parse_loss(method)?;
    let p = ctx.path(dir).join(format!("{method}.mirm"));
    let m = checkpoint::load(&p).with_context(|| format!("cannot load {}", p.display()))?;
    if m.kind != kind {
        bail!("{} holds a {} model, expected {method}", p.display(), m.kind.name());
    }
    Ok(m)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn reachability_cmd(ctx: &mut Ctx, cfg: &ReachConfig) -> Result<String> {
    let pairing = match cfg.pairing.as_str() {
        "dr_invisible" => Pairing::DrInvisible,
        "dr_arm" => Pairing::DrArm,
        p => bail!("unknown pairing {p:?}"),
    };
    let ds = load_dataset(ctx, &cfg.data)?;
    let hold: Vec<usize> = ds.indices_with(Split::Holdout, pairing).into_iter().take(cfg.demos).collect();
    if hold.is_empty() {
        bail!("dataset has no held-out {} trajectories", cfg.pairing);
    }
    // canonical and held-out renderings of the same demos, unless the
    // dataset pairs themselves are requested
    let renderings = match cfg.cross_domain.as_str() {
        "pairs" => None,
        d => {
            let kind = DomainKind::parse(d).ok_or_else(|| anyhow!("unknown domain {d:?}"))?;
            let make = |k| -> Result<Vec<Demo>> {
                (0..cfg.demos).map(|i| Ok(eval::make_demo(i, k, cfg.demo_seed)?)).collect()
            };
            Some((make(DomainKind::Canonical)?, make(kind)?))
        }
    };
    let mut csv = String::from("method,trajectory,rho_same,rho_cross,alignment\n");
    let mut summaries = Vec::new();
    for method in list(&cfg.methods) {
        let m = load_method(ctx, &cfg.checkpoints, &method)?;
        let mut sum = MethodSummary {
            method: method.clone(),
            ..MethodSummary::default()
        };
        let mut acc = Vec::new();
        let rows = renderings.as_ref().map_or(hold.len(), |r| r.0.len());
        for j in 0..rows {
            let mut rho = [None, None];
            for (c, cross) in [false, true].into_iter().enumerate() {
                let curve = match &renderings {
                    None => eval::reachability_eval(&m.encoder, &ds.trajectories[hold[j]], cross),
                    Some((canon, held)) => {
                        eval::reachability_demos(&m.encoder, &canon[j], if cross { &held[j] } else { &canon[j] })
                    }
                };
                match curve {
                    Ok((curve, r)) => {
                        rho[c] = Some(r);
                        let mut s = String::from("frame,normalized_distance\n");
                        for (f, d) in curve.iter().enumerate() {
                            let _ = writeln!(s, "{f},{d:.6}");
                        }
                        let tag = if cross { "cross" } else { "same" };
                        let p = ctx.path(&cfg.curves).join(format!("{method}_{j}_{tag}.csv"));
                        ctx.write(&p, s.as_bytes())?;
                    }
                    Err(e) => log::warn!("{method} demo {j}: {e}"),
                }
            }
            sum.rho_same_domain.extend(rho[0]);
            sum.rho_cross_domain.extend(rho[1]);
            let a = match hold.get(j) {
                Some(&i) => {
                    let a = eval::alignment_accuracy(&m.encoder, &ds.trajectories[i], cfg.k)?;
                    acc.push(a);
                    format!("{a:.6}")
                }
                None => String::new(),
            };
            let _ = writeln!(csv, "{method},{j},{},{},{a}", fmt_opt(rho[0]), fmt_opt(rho[1]));
        }
        sum.alignment_accuracy = (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64);
        summaries.push(sum);
    }
    let out = ctx.path(&cfg.out);
    ctx.write(&out, csv.as_bytes())?;
    let report = EvalReport {
        rows: vec![],
        methods: summaries,
    };
    ctx.write(&out.with_extension("json"), (report.to_json() + "\n").as_bytes())?;
    let mut msg = String::new();
    for s in &report.methods {
        let _ = writeln!(
            msg,
            "{:<6} rho same {:>7} cross {:>7} alignment(k={}) {}",
            s.method,
            fmt_opt(s.mean_rho_same()),
            fmt_opt(s.mean_rho_cross()),
            cfg.k,
            fmt_opt(s.alignment_accuracy)
        );
    }
    Ok(msg.trim_end().to_string())
}

fn imitate_cmd(ctx: &mut Ctx, cfg: &ImitateConfig) -> Result<String> {
    let mut domains = Vec::new();
    for d in list(&cfg.domains) {
        let kind = DomainKind::parse(&d).ok_or_else(|| anyhow!("unknown domain {d:?}"))?;
        let demos: Vec<Demo> = (0..cfg.demos)
            .map(|i| eval::make_demo(i, kind, cfg.demo_seed))
            .collect::<std::result::Result<_, _>>()?;
        domains.push(demos);
    }
    let icfg = ImitationConfig {
        attempts: cfg.attempts,
        stride: cfg.stride,
        epsilon: cfg.epsilon,
        jitter: cfg.jitter,
        budget_factor: cfg.budget_factor,
        seed: cfg.seed,
    };
    let mut report = EvalReport::default();
    for method in list(&cfg.methods) {
        let m = load_method(ctx, &cfg.checkpoints, &method)?;
        let enc = m.encoder.cast::<f32>();
        let policy = m.policy.as_ref().map(|p| p.cast::<f32>());
        let tracker = eval::tracker_for(m.kind, &enc, policy.as_ref(), cfg.cem)?;
        for demos in &domains {
            report.rows.extend(eval::imitation_eval(&method, &tracker, demos, &icfg)?);
        }
    }
    report.sort_rows();
    ctx.write(&ctx.path(&format!("{}.csv", cfg.out)), report.to_csv().as_bytes())?;
    ctx.write(&ctx.path(&format!("{}.json", cfg.out)), (report.to_json() + "\n").as_bytes())?;
    Ok(report.table().trim_end().to_string())
}

fn report_cmd(ctx: &mut Ctx, cfg: &ReportConfig) -> Result<String> {
    if cfg.kind == "embeddings" {
        let ck = cfg.checkpoint.as_deref().ok_or_else(|| anyhow!("embeddings export needs --checkpoint"))?;
        let m = checkpoint::load(&ctx.path(ck)).with_context(|| format!("cannot load {ck}"))?;
        let ds = load_dataset(ctx, &cfg.data)?;
        let t = ds
            .trajectories
            .get(cfg.trajectory)
            .ok_or_else(|| anyhow!("trajectory {} out of range ({})", cfg.trajectory, ds.trajectories.len()))?;
        let d = m.encoder.embed_dim();
        let mut s = String::from("side,domain,frame");
        for j in 0..d {
            let _ = write!(s, ",e{j}");
        }
        s.push('\n');
        let frames: Vec<usize> = (0..t.len()).collect();
        for side in [dataset::Side::A, dataset::Side::B] {
            let e = m.encoder.encode(&t.obs_tensor::<f64>(side, &frames))?;
            let name = t.domain(side).kind.name();
            for (f, row) in e.data().chunks(d).enumerate() {
                let _ = write!(s, "{side:?},{name},{f}");
                for v in row {
                    let _ = write!(s, ",{v:.6}");
                }
                s.push('\n');
            }
        }
        let out = ctx.path(cfg.out.as_deref().unwrap_or("embeddings.csv"));
        ctx.write(&out, s.as_bytes())?;
        return Ok(format!("wrote {} embeddings to {}", 2 * t.len(), out.display()));
    }
    let kind = plot::parse_kind(&cfg.kind)?;
    let input = cfg.input.as_deref().ok_or_else(|| anyhow!("plot needs --input"))?;
    let text = std::fs::read_to_string(ctx.path(input)).with_context(|| format!("cannot read {input}"))?;
    let svg = plot::plot(&text, kind).with_context(|| input.to_string())?;
    let out = ctx.path(cfg.out.as_deref().unwrap_or(&format!("{}.svg", cfg.kind)));
    ctx.write(&out, svg.as_bytes())?;
    Ok(format!("wrote {}", out.display()))
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MIRLAB_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow!("MIRLAB_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            bail!("MIRLAB_THREADS must be positive");
        }
        // A pool already built by an earlier in-process call is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<String> {
    configure_threads()?;
    let file: Option<Value> = match &cli.config {
        Some(p) => {
            let b = std::fs::read(p).with_context(|| format!("cannot read config {}", p.display()))?;
            Some(serde_json::from_slice(&b).with_context(|| format!("config {} is not valid JSON", p.display()))?)
        }
        None => None,
    };
    let name = cli.command.name();
    let section = file.as_ref().and_then(|f| f.get(name));
    std::fs::create_dir_all(&cli.out_dir).with_context(|| format!("cannot create {}", cli.out_dir.display()))?;
    let mut ctx = Ctx {
        out_dir: cli.out_dir.clone(),
        outputs: Vec::new(),
    };
    let (msg, resolved) = match &cli.command {
        Command::GenData(f) => {
            let c: GenDataConfig = resolve(section, f)?;
            (gen_data(&mut ctx, &c)?, serde_json::to_value(c)?)
        }
        Command::Train(f) => {
            let c: TrainRunConfig = resolve(section, f)?;
            (train_cmd(&mut ctx, &c)?, serde_json::to_value(c)?)
        }
        Command::EvalReachability(f) => {
            let c: ReachConfig = resolve(section, f)?;
            (reachability_cmd(&mut ctx, &c)?, serde_json::to_value(c)?)
        }
        Command::EvalImitate(f) => {
            let c: ImitateConfig = resolve(section, f)?;
            (imitate_cmd(&mut ctx, &c)?, serde_json::to_value(c)?)
        }
        Command::Report(f) => {
            let c: ReportConfig = resolve(section, f)?;
            (report_cmd(&mut ctx, &c)?, serde_json::to_value(c)?)
        }
    };
    write_manifest(&ctx, name, resolved)?;
    Ok(msg)
}

/// The error chain joined with `: `, skipping causes whose text the previous
/// message already carries.
fn one_line(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let m = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&m)) {
            parts.push(m);
        }
    }
    parts.join(": ").replace('\n', " ")
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
/// Failures print one `error:` line to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            eprintln!("{first}");
            return 2;
        }
    };
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            1
        }
    }
}
