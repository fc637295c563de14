//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//!     cargo test --release -p mirlab-cli --test acceptance
//!
//! Trained checkpoints are cached under the cargo target tmpdir, keyed by a
//! hash of the training config and dataset parameters. Set `MIRLAB_FULL=1`
//! for the full imitation protocol (100 attempts per demo) instead of smoke.
//! `-- --cache-paths` lists where each checkpoint and metrics file lives.

#[path = "../../core/tests/support/gradcheck_suite.rs"]
mod gradcheck_suite;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mirlab::dataset::{build_dataset, Dataset, Pairing, Side, Split};
use mirlab::eval::{self, make_demo, reachability_demos, reward, CemConfig, Demo, ImitationConfig, ReportRow};
use mirlab::numerics::Tape;
use mirlab::repr::losses::{contrastive, entropy_bound, identity, loss_tcn, loss_tscn, smoothing_distribution};
use mirlab::repr::train::{metrics_csv, MetricRow};
use mirlab::repr::{checkpoint, train, LossKind, TrainConfig, TrainedModels};
use mirlab::sim::render::{color_centroid, frame_seed};
use mirlab::sim::{render, DomainKind, DomainSpec, NUM_OBJECTS};
use mirlab::Tensor64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const EPISODES_PER_PAIRING: usize = 64;
const DATA_SEED: u64 = 1;
const TRAIN_SEED: u64 = 7;
const STEPS: usize = 2000;
// frozen after the pilot run (holdout 230.3 -> 152.9 at step 2000)
const MIN_HOLDOUT_DROP: f64 = 0.30;
const ALIGN_K: usize = 5;
const ALIGN_FACTOR: f64 = 3.0;
const DEMOS: usize = 10;
const REACH_DEMO_SEED: u64 = 31;
const REACH_DOMAIN: DomainKind = DomainKind::BlobHand;
const IMITATE_DEMO_SEED: u64 = 21;

struct Verdict {
    id: usize,
    pass: bool,
    detail: String,
    secs: f64,
}

fn report(v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("criterion {}: {tag} ({:.1} s) {}", v.id, v.secs, v.detail);
}

fn timed(id: usize, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let t = Instant::now();
    let (pass, detail) = f();
    let v = Verdict { id, pass, detail, secs: t.elapsed().as_secs_f64() };
    report(&v);
    v
}

fn gradient_suite() -> (bool, String) {
    let errs = gradcheck_suite::run_all(20, 2024);
    let worst = errs.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let bad: Vec<&str> = errs.iter().filter(|e| !(e.1 < gradcheck_suite::REL_TOL)).map(|e| e.0).collect();
    (
        bad.is_empty(),
        format!("{} ops x 20 probes, worst {} rel err {:.2e}; failing {:?}", errs.len(), worst.0, worst.1, bad),
    )
}

fn scalar(f: impl FnOnce(&mut Tape<f64>) -> mirlab::numerics::Var) -> f64 {
    let mut tape = Tape::new();
    let v = f(&mut tape);
    tape.value(v).item().unwrap()
}

fn loss_identities() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let (mut max_gap, mut min_slack) = (0.0f64, f64::INFINITY);
    for _ in 0..50 {
        let n = rng.gen_range(2..=16);
        let d = rng.gen_range(1..=8);
        let mut draw = || Tensor64::new(vec![n, d], (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let (x, xb) = (draw(), draw());
        let pair = |t: &mut Tape<f64>| (t.leaf(x.clone()), t.leaf(xb.clone()));
        let tcn = scalar(|t| {
            let (a, b) = pair(t);
            loss_tcn(t, a, b, None).unwrap()
        });
        let one_hot = scalar(|t| {
            let (a, b) = pair(t);
            contrastive(t, a, b, None, &identity(n)).unwrap()
        });
        let tscn = scalar(|t| {
            let (a, b) = pair(t);
            loss_tscn(t, a, b, None).unwrap()
        });
        max_gap = max_gap.max((tcn - one_hot).abs());
        min_slack = min_slack.min(tscn - entropy_bound(&smoothing_distribution::<f64>(n)));
    }
    let mut row_err = 0.0f64;
    for n in [1, 2, 3, 50] {
        let p = smoothing_distribution::<f64>(n);
        for row in p.data().chunks(n) {
            row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    (
        max_gap < 1e-10 && min_slack >= 0.0 && row_err < 1e-12,
        format!("one-hot gap {max_gap:.1e}, min TSCN minus entropy {min_slack:.3e}, row-sum err {row_err:.1e}"),
    )
}

/// Object centroids measured on the pixels of both stored renderings of a
/// regenerated rollout. Stored frames must match a fresh render exactly; the
/// centroid pass then re-renders without noise, view shift or arm so each
/// object's color can be segmented.
fn paired_alignment(ds: &Dataset) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    let mut measured = 0usize;
    for _ in 0..8 {
        let i = rng.gen_range(0..ds.trajectories.len());
        let traj = &ds.trajectories[i];
        let states = traj.regenerate_states().unwrap();
        if states.len() != traj.len() {
            problems.push(format!("traj {i}: length"));
            continue;
        }
        let mut clean = Vec::new();
        for side in [Side::A, Side::B] {
            let dom = traj.domain(side);
            let seed = match side {
                Side::A => traj.meta.domain_seed_a,
                Side::B => traj.meta.domain_seed_b,
            };
            for (t, s) in states.iter().enumerate() {
                if render(s, &dom, frame_seed(seed, t)).data != traj.frame(side, t) {
                    problems.push(format!("traj {i} side {side:?} frame {t} differs from regenerated render"));
                    break;
                }
            }
            let mut c: DomainSpec = dom.clone();
            c.noise_amplitude = 0;
            c.view_offsets = [[0, 0]; 2];
            c.arm_visible = false;
            clean.push(c);
        }
        for s in &states {
            let (ia, ib) = (render(s, &clean[0], 0), render(s, &clean[1], 0));
            for v in 0..2 {
                for k in 0..NUM_OBJECTS {
                    let ca = color_centroid(&ia, v, clean[0].palette.objects[k]);
                    let cb = color_centroid(&ib, v, clean[1].palette.objects[k]);
                    match (ca, cb) {
                        (Some(a), Some(b)) => {
                            worst = worst.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
                            measured += 1;
                        }
                        (None, None) => {}
                        _ => problems.push(format!("traj {i} object {k} visible on one side only")),
                    }
                }
            }
        }
    }
    (
        problems.is_empty() && worst < 1.0,
        format!("{measured} centroid pairs, max offset {worst:.3} px; issues {problems:?}"),
    )
}

fn cache_dir() -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn train_config(kind: LossKind) -> TrainConfig {
    TrainConfig { loss_kind: kind, steps: STEPS, seed: TRAIN_SEED, log_every: 50, ..TrainConfig::default() }
}

fn cache_key(cfg: &TrainConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).unwrap());
    h.update(format!("{EPISODES_PER_PAIRING}/{DATA_SEED}/{}", mirlab::dataset::FORMAT_VERSION));
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

struct Trained {
    models: TrainedModels,
    metrics: Vec<MetricRow>,
    secs: Option<f64>,
}

fn parse_metrics(text: &str) -> Vec<MetricRow> {
    let opt = |s: &str| if s.is_empty() { None } else { Some(s.parse().unwrap()) };
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            MetricRow {
                step: f[0].parse().unwrap(),
                loss: f[1].parse().unwrap(),
                loss_tscn: opt(f[2]),
                loss_cdgcp: opt(f[3]),
                holdout_loss: f[4].parse().unwrap(),
            }
        })
        .collect()
}

fn cache_paths(kind: LossKind) -> (PathBuf, PathBuf) {
    let cfg = train_config(kind);
    let stem = cache_dir().join(format!("{}_{}", kind.name(), cache_key(&cfg)));
    (stem.with_extension("mirm"), stem.with_extension("csv"))
}

fn trained(ds: &Dataset, kind: LossKind) -> Trained {
    let cfg = train_config(kind);
    let (ckpt, csv) = cache_paths(kind);
    if let (Ok(models), Ok(text)) = (checkpoint::load(&ckpt), std::fs::read_to_string(&csv)) {
        println!("  using cached {} checkpoint {}", kind.name(), ckpt.display());
        return Trained { models, metrics: parse_metrics(&text), secs: None };
    }
    println!("  training {} for {STEPS} steps", kind.name());
    let t = Instant::now();
    let out = train(ds, &cfg).unwrap_or_else(|e| panic!("training {} failed: {e}", kind.name()));
    let secs = t.elapsed().as_secs_f64();
    checkpoint::save(&out.models, &ckpt).unwrap();
    std::fs::write(&csv, metrics_csv(&out.metrics)).unwrap();
    Trained { models: out.models, metrics: out.metrics, secs: Some(secs) }
}

fn training_efficacy(ds: &Dataset, mir: &Trained) -> (bool, String) {
    let first = mir.metrics.first().unwrap().holdout_loss;
    let last = mir.metrics.last().unwrap().holdout_loss;
    let drop = 1.0 - last / first;
    let hold = ds.indices_with(Split::Holdout, Pairing::DrInvisible);
    let mut acc = 0.0;
    let mut t_len = 0;
    for &i in &hold {
        acc += eval::alignment_accuracy(&mir.models.encoder, &ds.trajectories[i], ALIGN_K).unwrap();
        t_len = ds.trajectories[i].len();
    }
    acc /= hold.len() as f64;
    let base = (2 * ALIGN_K + 1) as f64 / t_len as f64;
    let time = match mir.secs {
        Some(s) => format!("trained in {:.1} min", s / 60.0),
        None => "cached checkpoint".to_string(),
    };
    let fast = mir.secs.map_or(true, |s| s < 20.0 * 60.0);
    (
        drop >= MIN_HOLDOUT_DROP && acc > ALIGN_FACTOR * base && fast,
        format!(
            "holdout TSCN {first:.2} -> {last:.2} ({:.1}% drop, need {:.0}%); alignment k={ALIGN_K} {acc:.3} on {} pairs vs {:.3}; {time}",
            100.0 * drop,
            100.0 * MIN_HOLDOUT_DROP,
            hold.len(),
            ALIGN_FACTOR * base
        ),
    )
}

fn mean_rho(m: &TrainedModels, canon: &[Demo], target: &[Demo]) -> f64 {
    let rho: Vec<f64> = canon
        .iter()
        .zip(target)
        .map(|(c, t)| reachability_demos(&m.encoder, c, t).unwrap().1)
        .collect();
    rho.iter().sum::<f64>() / rho.len() as f64
}

fn reachability_ordering(mir: &TrainedModels, tcn: &TrainedModels) -> (bool, String) {
    let demos = |kind| (0..DEMOS).map(|i| make_demo(i, kind, REACH_DEMO_SEED).unwrap()).collect::<Vec<_>>();
    let canon = demos(DomainKind::Canonical);
    let held = demos(REACH_DOMAIN);
    let mir_cross = mean_rho(mir, &canon, &held);
    let tcn_same = mean_rho(tcn, &canon, &canon);
    let tcn_cross = mean_rho(tcn, &canon, &held);
    let mir_same = mean_rho(mir, &canon, &canon);
    (
        mir_cross > tcn_cross && tcn_same > tcn_cross,
        format!(
            "{DEMOS} demos, cross domain {}: MIR same {mir_same:.3} cross {mir_cross:.3}; TCN same {tcn_same:.3} cross {tcn_cross:.3}",
            REACH_DOMAIN.name()
        ),
    )
}

fn imitation_ordering(methods: &[(&str, &TrainedModels)], full: bool) -> (bool, String) {
    let domains = [DomainKind::InvisibleArm, DomainKind::Stick, DomainKind::BlobHand];
    let cfg = ImitationConfig { attempts: if full { 100 } else { 1 }, ..ImitationConfig::default() };
    let mut rows: Vec<ReportRow> = Vec::new();
    let sets: Vec<Vec<Demo>> = domains
        .iter()
        .map(|&k| (0..DEMOS).map(|i| make_demo(i, k, IMITATE_DEMO_SEED).unwrap()).collect())
        .collect();
    for (name, m) in methods {
        let enc = m.encoder.cast::<f32>();
        let policy = m.policy.as_ref().map(|p| p.cast::<f32>());
        let tracker = eval::tracker_for(m.kind, &enc, policy.as_ref(), CemConfig::default()).unwrap();
        for demos in &sets {
            rows.extend(eval::imitation_eval(name, &tracker, demos, &cfg).unwrap());
        }
    }
    let report = eval::EvalReport { rows, methods: Vec::new() };
    println!("{}", report.table());
    let cell = |m: &str, d: DomainKind| report.cell(m, d.name()).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for d in domains {
        let mir = cell("mir", d).lift_rate;
        for (name, _) in &methods[1..] {
            let other = cell(name, d).lift_rate;
            if mir < other {
                ok = false;
                notes.push(format!("{}: mir lift {mir:.2} < {name} {other:.2}", d.name()));
            }
        }
    }
    let mut stacked_somewhere = false;
    for (name, _) in methods {
        for d in domains {
            let c = cell(name, d);
            if c.stack_rate > c.lift_rate {
                ok = false;
                notes.push(format!("{name} {}: stack > lift", d.name()));
            }
            stacked_somewhere |= *name == "mir" && c.stack_rate > 0.0;
        }
    }
    if full && !stacked_somewhere {
        ok = false;
        notes.push("mir never stacks".into());
    }
    let mode = if full { "full 10x100" } else { "smoke 10x1, lifting ordering and stack<=lift only" };
    (ok, format!("{mode}; mir stacks somewhere: {stacked_somewhere}; {notes:?}"))
}

fn reward_examples() -> (bool, String) {
    let ident = reward(&[0.3, -1.2], &[0.3, -1.2], 1.0, 0.3).unwrap();
    let near = reward(&[1.0], &[0.0], 1.0, 0.3).unwrap();
    let far = reward(&[2.0], &[0.0], 1.0, 0.3).unwrap();
    ((ident, near, far) == (1, 1, 0), format!("identity {ident}, d=1 {near}, d=2 {far}"))
}

const TINY: &str = r#"{
  "train": {
    "steps": 4, "log_every": 2, "holdout_batches": 1, "distance_pairs": 8,
    "policy_hidden": [8], "classifier_hidden": 8,
    "encoder": {"views": 2, "in_channels": 3, "image_size": 32, "stage_channels": [2, 2, 4, 4],
                "feature_dim": 8, "mlp_hidden": [16, 16], "embed_dim": 8}
  },
  "eval-imitate": {
    "demos": 2, "attempts": 2, "budget_factor": 1,
    "cem": {"population": 8, "elites": 2, "iterations": 1, "horizon": 3, "init_std": 0.6, "min_std": 0.05}
  }
}"#;

fn cli_run(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("cfg.json"), TINY).unwrap();
    let cfg = dir.join("cfg.json");
    let steps: [&[&str]; 4] = [
        &["gen-data", "--episodes", "4", "--seed", "5"],
        &["train", "--loss", "mir", "--seed", "3"],
        &["train", "--loss", "tcn", "--seed", "3"],
        &["eval-imitate", "--methods", "mir,tcn", "--domains", "invisible,blobhand"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_mirlab"))
            .arg("--out-dir")
            .arg(dir)
            .arg("--config")
            .arg(&cfg)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    Ok(())
}

fn determinism() -> (bool, String) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        if let Err(e) = cli_run(d.path()) {
            return (false, e);
        }
    }
    let files = ["d.mird", "mir.mirm", "mir_metrics.csv", "tcn.mirm", "tcn_metrics.csv", "eval_report.csv", "eval_report.json"];
    let differ: Vec<&str> = files
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .copied()
        .collect();
    (differ.is_empty(), format!("{} outputs compared across two runs; differing {differ:?}", files.len()))
}

const METHODS: [LossKind; 4] = [LossKind::Mir, LossKind::Tcn, LossKind::Tdc, LossKind::Gcp];

fn main() {
    if std::env::args().any(|a| a == "--cache-paths") {
        for kind in METHODS {
            let (ckpt, csv) = cache_paths(kind);
            println!("{} {} {}", kind.name(), ckpt.display(), csv.display());
        }
        return;
    }
    let full = std::env::var("MIRLAB_FULL").is_ok_and(|v| v == "1");
    let mut verdicts = vec![timed(1, gradient_suite), timed(2, loss_identities)];

    let t = Instant::now();
    let ds = build_dataset(EPISODES_PER_PAIRING, DATA_SEED).expect("dataset");
    println!("  dataset: {} paired trajectories in {:.1} s", ds.trajectories.len(), t.elapsed().as_secs_f64());
    verdicts.push(timed(3, || paired_alignment(&ds)));

    let mir = trained(&ds, LossKind::Mir);
    verdicts.push(timed(4, || training_efficacy(&ds, &mir)));

    let tcn = trained(&ds, LossKind::Tcn);
    verdicts.push(timed(5, || reachability_ordering(&mir.models, &tcn.models)));

    let tdc = trained(&ds, LossKind::Tdc);
    let gcp = trained(&ds, LossKind::Gcp);
    let methods = [("mir", &mir.models), ("tcn", &tcn.models), ("tdc", &tdc.models), ("gcp", &gcp.models)];
    verdicts.push(timed(6, || imitation_ordering(&methods, full)));

    verdicts.push(timed(7, reward_examples));
    verdicts.push(timed(8, determinism));

    println!();
    for v in &verdicts {
        report(v);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
