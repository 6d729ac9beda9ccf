//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria 4 and 8 need the UCI HAR dataset: set `UCIHAR_DIR` to its root
//! (the directory holding `train/` and `test/`). Criterion 5 trains two
//! models on the full synthetic set and takes hours on one core: pass
//! `--full` (or set `ATTNHAR_FULL=1`) to run it.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use attnhar::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, DataProvenance};
use attnhar::config::{Compat, Norm, RunConfig, Variant};
use attnhar::run::{build_model, prepare_data, train_run, CHECKPOINT_FILE, FINAL_CHECKPOINT_FILE};
use attnhar::ucihar::{load_ucihar, Split};
use attnhar_core::attention::{attend_pool, normalize_softmax, normalize_tanh, FeatureMap};
use attnhar_core::gradcheck::case_names;
use attnhar_core::localization::density;
use attnhar_core::synth::SynthConfig;
use attnhar_core::train::{self, Silent, TrainConfig};
use attnhar_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_attnhar");

// Criterion 1
const GRAD_TOL: f64 = 1e-4;
const GRAD_MIN_SEEDS: u64 = 20;
const GRAD_MAX_SECONDS: f64 = 300.0;
// Criterion 2
const DENSITY_CASES: usize = 1000;
const DENSITY_MAX_N: usize = 512;
const DENSITY_MAX_W: usize = 128;
// Criterion 3
const ATTENTION_CASES: usize = 10_000;
const SOFTMAX_SUM_TOL: f64 = 1e-9;
// Criterion 4
const UCI_MIN_ACC: f64 = 0.915;
const UCI_MAX_GAP: f64 = 0.02;
const UCI_DEFAULT_EPOCHS: usize = 30;
// Criterion 5
const WEAK_N: usize = 8000;
const WEAK_SEED: u64 = 7;
const WEAK_DEFAULT_EPOCHS: usize = 8;
// pilot at 8 epochs measured 0.348; gate is five points under it
const HIT_RATE_GATE: f64 = 0.298;
// Criterion 8
const UCI_TRAIN_N: usize = 7352;
const UCI_TEST_N: usize = 2947;

enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn attnhar(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    Ok(out)
}

fn attnhar_ok(args: &[&str]) -> Result<String, String> {
    let out = attnhar(args)?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn s(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn gradient_suite(dir: &Path) -> Result<Verdict, String> {
    let report = dir.join("gradcheck.json");
    let start = Instant::now();
    let out = attnhar(&["gradcheck", "--seeds", &GRAD_MIN_SEEDS.to_string(), "--report", s(&report)])?;
    let seconds = start.elapsed().as_secs_f64();
    let report = read_json(&report)?;
    let cases = report["cases"].as_array().ok_or("report without cases")?;
    let names: Vec<&str> = cases.iter().filter_map(|c| c["name"].as_str()).collect();
    let required = [
        "conv1d", "dense", "relu", "softmax_cross_entropy", "compat_dot", "compat_pc", "normalize_softmax",
        "normalize_tanh", "attend_pool", "net_att3_pc_tanh",
    ];
    let missing: Vec<&str> = required.iter().copied().filter(|r| !names.contains(r)).collect();
    let worst = cases.iter().filter_map(|c| c["max_rel_err"].as_f64()).fold(0.0, f64::max);
    let all_checked = cases.iter().all(|c| c["checked"].as_u64().unwrap_or(0) > 0);
    let ok = out.status.code() == Some(0)
        && missing.is_empty()
        && names == case_names()
        && all_checked
        && worst <= GRAD_TOL
        && report["seeds"].as_u64() >= Some(GRAD_MIN_SEEDS)
        && seconds <= GRAD_MAX_SECONDS;
    Ok(check(
        ok,
        format!(
            "{} cases x {GRAD_MIN_SEEDS} seeds, worst rel err {worst:.2e} (tol {GRAD_TOL:e}), {seconds:.1}s{}",
            names.len(),
            if missing.is_empty() { String::new() } else { format!(", missing {missing:?}") }
        ),
    ))
}

fn brute_density(scores: &[f64], w: usize) -> Vec<f64> {
    let n = scores.len() as i64;
    let half = (w / 2) as i64;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for j in (i - half).max(0)..=(i + half).min(n - 1) {
                acc += scores[j as usize];
            }
            acc
        })
        .collect()
}

fn density_oracle() -> Result<Verdict, String> {
    let hand = density(&[1.0; 8], 4).map_err(|e| e.to_string())?;
    let hand_ok = hand == [3.0, 4.0, 5.0, 5.0, 5.0, 5.0, 4.0, 3.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut ran = 0;
    while ran < DENSITY_CASES {
        let n = rng.random_range(1..=DENSITY_MAX_N);
        let w = 2 * rng.random_range(1..=DENSITY_MAX_W / 2);
        if w >= 2 * n {
            continue;
        }
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        if density(&scores, w).map_err(|e| e.to_string())? != brute_density(&scores, w) {
            mismatches += 1;
        }
        ran += 1;
    }
    Ok(check(
        hand_ok && mismatches == 0,
        format!("{ran} random cases, {mismatches} mismatches, hand case {hand:?}"),
    ))
}

fn attention_invariants() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    for case in 0..ATTENTION_CASES {
        let n = rng.random_range(1..=64);
        let c = rng.random_range(1..=16);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..30.0)).collect();
        let shift = rng.random_range(-100.0..100.0);
        let a = normalize_softmax(&scores).map_err(|e| e.to_string())?;
        let shifted: Vec<f64> = scores.iter().map(|v| v + shift).collect();
        let b = normalize_softmax(&shifted).map_err(|e| e.to_string())?;
        if (a.iter().sum::<f64>() - 1.0).abs() > SOFTMAX_SUM_TOL || a.iter().any(|&v| v < 0.0) {
            failures.push(format!("case {case}: softmax sum"));
        }
        if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > SOFTMAX_SUM_TOL) {
            failures.push(format!("case {case}: shift"));
        }
        let t_scores: Vec<f64> = (0..n).map(|_| rng.random_range(-15.0..15.0)).collect();
        if normalize_tanh(&t_scores).iter().any(|&v| !(v > -1.0 && v < 1.0)) {
            failures.push(format!("case {case}: tanh range"));
        }
        let data: Vec<f64> = (0..c * n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let fm = FeatureMap::new(&data, c, n).map_err(|e| e.to_string())?;
        let g = attend_pool(&fm, &a).map_err(|e| e.to_string())?;
        for (k, gk) in g.iter().enumerate() {
            let row = fm.channel(k);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
            if *gk < lo - slack || *gk > hi + slack {
                failures.push(format!("case {case}: hull, channel {k}"));
            }
        }
    }
    Ok(check(
        failures.is_empty(),
        format!(
            "{ATTENTION_CASES} instances per property, {} violations{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    ))
}

fn env_epochs(var: &str, default: usize) -> usize {
    std::env::var(var).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn accuracy(dir: &Path) -> Result<f64, String> {
    read_json(&dir.join("metrics.json"))?["test_accuracy"]
        .as_f64()
        .ok_or_else(|| "metrics without test_accuracy".to_string())
}

fn uci_reproduction(root: &Path, dir: &Path) -> Result<Verdict, String> {
    let epochs = env_epochs("ATTNHAR_UCI_EPOCHS", UCI_DEFAULT_EPOCHS).to_string();
    let plain = dir.join("uci_none");
    let att2 = dir.join("uci_att2");
    let common = ["--dataset", "ucihar", "--data-dir", s(root), "--epochs", &epochs, "--batch", "50", "--lr", "0.001"];
    for (out, model) in [(&plain, &["--variant", "none"][..]), (&att2, &["--variant", "att2", "--compat", "pc", "--norm", "tanh"][..])] {
        let mut args = vec!["train", "--out", s(out)];
        args.extend_from_slice(&common);
        args.extend_from_slice(model);
        attnhar_ok(&args)?;
    }
    let (a, b) = (accuracy(&plain)?, accuracy(&att2)?);
    Ok(check(
        a >= UCI_MIN_ACC && b >= UCI_MIN_ACC && b >= a - UCI_MAX_GAP,
        format!("{epochs} epochs: fundamental CNN {:.2}%, Net-att2-pc-tanh {:.2}% (need >= {:.1}%, gap <= {:.1} points)",
            100.0 * a, 100.0 * b, 100.0 * UCI_MIN_ACC, 100.0 * UCI_MAX_GAP),
    ))
}

fn weak_label_substitute(dir: &Path) -> Result<Verdict, String> {
    let epochs = env_epochs("ATTNHAR_WEAK_EPOCHS", WEAK_DEFAULT_EPOCHS).to_string();
    let data = dir.join("weak_data");
    let cfg = dir.join("weak.json");
    let config = RunConfig {
        synth: SynthConfig {
            n: WEAK_N,
            ..SynthConfig::default()
        },
        synth_seed: WEAK_SEED,
        ..RunConfig::default()
    };
    fs::write(&cfg, serde_json::to_string_pretty(&config).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    if !data.join("synthetic.bin").exists() {
        attnhar_ok(&["synth", "--config", s(&cfg), "--out", s(&data)])?;
    }
    let plain = dir.join("weak_none");
    let att3 = dir.join("weak_att3_pc_tanh");
    let mut reused = 0;
    for (out, model) in [(&plain, &["--variant", "none"][..]), (&att3, &["--variant", "att3", "--compat", "pc", "--norm", "tanh"][..])] {
        // Training is deterministic, so a finished run in a kept work
        // directory stands in for a rerun.
        let done = read_json(&out.join("metrics.json")).is_ok_and(|m| m["epochs"].as_u64().map(|e| e.to_string()) == Some(epochs.clone()));
        if done && out.join(CHECKPOINT_FILE).exists() {
            reused += 1;
            continue;
        }
        let mut args = vec!["train", "--config", s(&cfg), "--data-dir", s(&data), "--epochs", &epochs, "--out", s(out)];
        args.extend_from_slice(model);
        attnhar_ok(&args)?;
    }
    attnhar_ok(&["locate", "--config", s(&cfg), "--out", s(&att3)])?;
    let (a, b) = (accuracy(&plain)?, accuracy(&att3)?);
    let hit = read_json(&att3.join("locate_metrics.json"))?["hit_rate"]
        .as_f64()
        .ok_or("locate metrics without hit_rate")?;
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    Ok(check(
        b >= a && hit >= HIT_RATE_GATE,
        format!(
            "{epochs} epochs: (a) {} Net-att3-pc-tanh {:.2}% vs fundamental CNN {:.2}%; (b) {} hit_rate {hit:.3} (gate {HIT_RATE_GATE}){}",
            mark(b >= a),
            100.0 * b,
            100.0 * a,
            mark(hit >= HIT_RATE_GATE),
            if reused > 0 { format!(", {reused} finished runs reused") } else { String::new() }
        ),
    ))
}

fn small_config(variant: Variant, compat: Compat, norm: Norm, out: PathBuf) -> RunConfig {
    RunConfig {
        synth: SynthConfig {
            n: 48,
            seq_len: 256,
            segment_len_min: 32,
            segment_len_max: 128,
            ..SynthConfig::default()
        },
        variant,
        compat,
        norm,
        train: TrainConfig {
            epochs: 3,
            batch_size: 10,
            seed: 5,
            ..TrainConfig::default()
        },
        w: 16,
        out,
        ..RunConfig::default()
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn determinism(dir: &Path) -> Result<Verdict, String> {
    let err = |e: attnhar::Error| e.to_string();
    let runs: Vec<PathBuf> = ["det_a", "det_b"].iter().map(|n| dir.join(n)).collect();
    for out in &runs {
        train_run(&small_config(Variant::Att3, Compat::Pc, Norm::Tanh, out.clone()), true).map_err(err)?;
    }
    let mut identical = true;
    for f in [FINAL_CHECKPOINT_FILE, CHECKPOINT_FILE] {
        let a = fs::read(runs[0].join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(runs[1].join(f)).map_err(|e| e.to_string())?;
        identical &= a == b;
    }

    // in-memory model against its saved and reloaded copy
    let config = small_config(Variant::Att3, Compat::Pc, Norm::Tanh, dir.join("det_c"));
    let data = prepare_data(&config, None).map_err(err)?;
    let mut model = build_model(&config, &data.train).map_err(err)?;
    let outcome = train::train(&mut model, &data.train, data.val.as_ref(), &config.train, None, &mut Silent)
        .map_err(|e| e.to_string())?;
    let ckpt = Checkpoint::new(
        model.spec(),
        model.params(),
        outcome.final_state,
        config.train.epochs,
        &config.train,
        DataProvenance::from_run(&config, data.stats.clone()),
    );
    let path = dir.join("det_c.json");
    save_checkpoint(&ckpt, &path).map_err(err)?;
    let loaded = load_checkpoint(&path).map_err(err)?.to_model(None).map_err(err)?;
    let (x, _) = data.test.batch(&(0..data.test.len()).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let same_logits = bits(&model.logits(&x).map_err(|e| e.to_string())?) == bits(&loaded.logits(&x).map_err(|e| e.to_string())?);
    Ok(check(
        identical && same_logits,
        format!(
            "repeated runs {} checkpoints; reloaded logits {}",
            if identical { "wrote identical" } else { "DIFFER in" },
            if same_logits { "bit-identical" } else { "DIFFER" }
        ),
    ))
}

fn curve_stats(path: &Path, n: usize) -> Result<(bool, f64, f64), String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut scores = Vec::new();
    let mut weights = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| e.to_string())?;
        let parse = |k: usize| row.get(k).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite());
        match (parse(1), parse(2)) {
            (Some(c), Some(a)) => {
                scores.push(c);
                weights.push(a);
            }
            _ => return Ok((false, 0.0, 0.0)),
        }
    }
    let max_abs = weights.iter().map(|a| a.abs()).fold(0.0, f64::max);
    let total: f64 = weights.iter().map(|a| a.abs()).sum();
    // share of the total weight carried by the single largest position
    Ok((scores.len() == n, max_abs, max_abs / total.max(1e-300)))
}

fn fig4_curves(dir: &Path) -> Result<Verdict, String> {
    let mut details = Vec::new();
    let mut ok = true;
    for (name, compat, norm) in [("att3_pc_tanh", Compat::Pc, Norm::Tanh), ("att3_dot_sm", Compat::Dot, Norm::Sm)] {
        let out = dir.join(name);
        let config = small_config(Variant::Att3, compat, norm, out.clone());
        train_run(&config, true).map_err(|e| e.to_string())?;
        let cfg = dir.join(format!("{name}.json"));
        fs::write(&cfg, serde_json::to_string(&config).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        attnhar_ok(&["locate", "--config", s(&cfg), "--sequences", "0"])?;
        let n = read_json(&out.join("locate_metrics.json"))?["positions"].as_u64().unwrap_or(0) as usize;
        let (well_formed, max_abs, share) = curve_stats(&out.join("seq_0_curve.csv"), n)?;
        ok &= well_formed && n > 0;
        details.push(format!("{name}: {n} rows, max|a| {max_abs:.3}, top share {share:.3}"));
    }
    Ok(check(ok, details.join("; ")))
}

fn uci_loader(root: &Path) -> Result<Verdict, String> {
    let train = load_ucihar(root, Split::Train).map_err(|e| e.to_string())?;
    let test = load_ucihar(root, Split::Test).map_err(|e| e.to_string())?;
    let shape = |d: &attnhar_core::SequenceDataset| (d.len(), d.channels(), d.seq_len());
    Ok(check(
        shape(&train) == (UCI_TRAIN_N, 6, 128) && shape(&test) == (UCI_TEST_N, 6, 128),
        format!("train {:?}, test {:?}", shape(&train), shape(&test)),
    ))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // cargo probes test binaries with `--list`
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let full = args.iter().any(|a| a == "--full") || std::env::var("ATTNHAR_FULL").is_ok_and(|v| v == "1");
    let uci = std::env::var_os("UCIHAR_DIR").map(PathBuf::from);
    let keep = std::env::var_os("ATTNHAR_ACCEPTANCE_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    fs::create_dir_all(&dir).expect("work dir");

    let no_uci = || Verdict::NotRun("UCIHAR_DIR is not set; the UCI HAR dataset is required".to_string());
    let criteria: Vec<(&str, Box<dyn Fn() -> Result<Verdict, String>>)> = vec![
        ("1 gradient suite", Box::new(|| gradient_suite(&dir))),
        ("2 density oracle", Box::new(density_oracle)),
        ("3 attention invariants", Box::new(attention_invariants)),
        (
            "4 UCI HAR accuracy",
            Box::new(|| Ok(match &uci { Some(root) => uci_reproduction(root, &dir)?, None => no_uci() })),
        ),
        (
            "5 synthetic weak labels",
            Box::new(|| {
                if full {
                    weak_label_substitute(&dir)
                } else {
                    Ok(Verdict::NotRun("full-scale run; pass --full or set ATTNHAR_FULL=1".to_string()))
                }
            }),
        ),
        ("6 determinism", Box::new(|| determinism(&dir))),
        ("7 attention curves", Box::new(|| fig4_curves(&dir))),
        ("8 UCI HAR loader", Box::new(|| Ok(match &uci { Some(root) => uci_loader(root)?, None => no_uci() }))),
    ];

    let mut failed = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let verdict = run().unwrap_or_else(|e| Verdict::Fail(format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::NotRun(d) => ("NOT RUN", d),
        };
        println!("[{tag}] criterion {name}: {detail} ({secs:.1}s)");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
