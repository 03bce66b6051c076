//! `scorr` command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use scorr_core::datakit::{
    load_manifest, synth_warp_pairs, write_manifest, PairSample, SynthConfig,
};
use scorr_core::encoder::bench_sce;
use scorr_core::evalkit::{evaluate, Basis, FlowModel, IdentityModel, OracleModel};
use scorr_core::training::{
    train_baseline, train_mutual_online_teachers, train_single_offline_teacher, write_log,
    Checkpoint, TrainConfig, TrainOutcome, Variant,
};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "scorr",
    version,
    about = "Sparse-annotation semantic correspondence"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a baseline, single offline teacher or mutual online teacher model.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a reference model) on a manifest.
    Eval(EvalArgs),
    /// Write a synthetic dataset (PNG images, flow sidecars, manifest).
    Synth(SynthArgs),
    /// Time sparse against dense self-similarity sampling.
    BenchSce(BenchArgs),
    /// Run the built-in oracle and gradient checks.
    Selftest(OutArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Also write the JSON result here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML training config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's variant.
    #[arg(long)]
    variant: Option<Variant>,
    /// Directory for checkpoints, logs and the summary.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long, conflicts_with = "model")]
    checkpoint: Option<PathBuf>,
    /// Reference model instead of a checkpoint: `oracle` (dense ground truth) or `identity`.
    #[arg(long)]
    model: Option<String>,
    /// JSON Lines manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated PCK thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15")]
    alpha: Vec<f64>,
    /// Threshold dimensions: `image` or `bbox`.
    #[arg(long, default_value = "image")]
    basis: String,
    /// Resize images to this side length (defaults to the checkpoint's image size; none for
    /// reference models).
    #[arg(long)]
    size: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    n: usize,
    /// Output directory.
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    keypoints: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated kernel sizes.
    #[arg(long = "K", value_delimiter = ',', default_value = "3,7,15,31")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    /// Feature channels.
    #[arg(long, default_value_t = 128)]
    channels: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[command(flatten)]
    out: OutArgs,
}

fn emit(value: &serde_json::Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(p) = path {
        std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn load_data(cfg: &TrainConfig) -> Result<(Vec<PairSample>, Vec<PairSample>)> {
    if let Some(s) = &cfg.data.synthetic {
        let train = synth_warp_pairs(s.train_seed, s.train_pairs, &s.generator)?;
        let val = synth_warp_pairs(s.val_seed, s.val_pairs, &s.generator)?;
        return Ok((train, val));
    }
    let (Some(t), Some(v)) = (&cfg.data.train_manifest, &cfg.data.val_manifest) else {
        return Err(scorr_core::Error::Config(
            "config needs either [data.synthetic] or both train_manifest and val_manifest".into(),
        )
        .into());
    };
    Ok((
        load_manifest(t, Some(cfg.image_size))?,
        load_manifest(v, Some(cfg.image_size))?,
    ))
}

fn save_outcome(o: &TrainOutcome, dir: &Path, name: &str) -> Result<serde_json::Value> {
    let ck = dir.join(format!("{name}.ckpt"));
    let log = dir.join(format!("{name}.log.jsonl"));
    o.checkpoint.save(&ck)?;
    write_log(&log, &o.log)?;
    Ok(json!({
        "checkpoint": ck,
        "log": log,
        "best_epoch": o.checkpoint.epoch,
        "best_val_pck": o.checkpoint.val_pck,
    }))
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::from_file(&args.config)?;
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    let (train, val) = load_data(&cfg)?;
    info!(
        "{} training and {} validation pairs",
        train.len(),
        val.len()
    );
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let summary = match cfg.variant {
        Variant::Baseline => {
            let o = train_baseline(&cfg, &train, &val)?;
            json!({"variant": "baseline", "model": save_outcome(&o, &args.out, "best")?})
        }
        Variant::St => {
            let Some(path) = &cfg.teacher else {
                return Err(scorr_core::Error::Config(
                    "st variant needs a teacher checkpoint".into(),
                )
                .into());
            };
            let teacher = Checkpoint::load(path)?;
            let o = train_single_offline_teacher(&cfg, &teacher, &train, &val)?;
            json!({"variant": "st", "model": save_outcome(&o, &args.out, "best")?})
        }
        Variant::Mt => {
            let o = train_mutual_online_teachers(&cfg, &train, &val)?;
            let a = save_outcome(&o.first, &args.out, "teacher_a")?;
            let b = save_outcome(&o.second, &args.out, "teacher_b")?;
            let sel = save_outcome(o.selected(), &args.out, "best")?;
            json!({"variant": "mt", "teacher_a": a, "teacher_b": b, "selected": o.selected, "model": sel})
        }
    };
    let path = args.out.join("summary.json");
    emit(&summary, Some(&path))
}

fn eval(args: EvalArgs) -> Result<()> {
    let basis: Basis = args.basis.parse()?;
    let (model, size): (Box<dyn FlowModel>, Option<usize>) =
        match (&args.checkpoint, args.model.as_deref()) {
            (Some(path), None) => {
                let ck = Checkpoint::load(path)?;
                let size = args.size.or(Some(ck.config.image_size));
                (Box::new(ck.network), size)
            }
            (None, Some("oracle")) => (Box::new(OracleModel), args.size),
            (None, Some("identity")) => (Box::new(IdentityModel), args.size),
            (None, Some(other)) => bail!(scorr_core::Error::InvalidArgument(format!(
                "unknown reference model '{other}' (expected oracle or identity)"
            ))),
            _ => bail!(scorr_core::Error::InvalidArgument(
                "pass exactly one of --checkpoint or --model".into()
            )),
        };
    let mut data = load_manifest(&args.manifest, size)?;
    if args.model.as_deref() == Some("oracle") {
        attach_flows(&args.manifest, &mut data)?;
    }
    let report = evaluate(model.as_ref(), &data, &args.alpha, basis)?;
    eprint!("{}", report.table());
    emit(&serde_json::to_value(&report)?, args.out.json.as_deref())
}

/// Reads the `flows/NNNNN.flo` sidecars written by `synth` next to the manifest.
fn attach_flows(manifest: &Path, data: &mut [PairSample]) -> Result<()> {
    let dir = manifest.parent().unwrap_or(Path::new(""));
    for (i, s) in data.iter_mut().enumerate() {
        let path = dir.join(format!("flows/{i:05}.flo"));
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        if bytes.len() < 12 || &bytes[..4] != b"PIEH" {
            bail!(scorr_core::Error::InvalidInput(format!(
                "{} is not a .flo file",
                path.display()
            )));
        }
        let w = u32::from_le_bytes(bytes[4..8].try_into()?) as usize;
        let h = u32::from_le_bytes(bytes[8..12].try_into()?) as usize;
        if bytes.len() != 12 + 8 * w * h || w != s.target.width || h != s.target.height {
            bail!(scorr_core::Error::InvalidInput(format!(
                "{} does not match its {}x{} target image",
                path.display(),
                s.target.width,
                s.target.height
            )));
        }
        let mut f = scorr_core::matching::FlowField::zeros(h, w, 1.0);
        for (p, ch) in bytes[12..].chunks_exact(8).enumerate() {
            let dx = f32::from_le_bytes(ch[..4].try_into()?) as f64;
            let dy = f32::from_le_bytes(ch[4..].try_into()?) as f64;
            let (r, c) = (p / w, p % w);
            f.set(r, c, (c as f64 + 0.5 + dx, r as f64 + 0.5 + dy));
        }
        s.flow = Some(f);
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        size: args.size,
        keypoints_per_pair: args.keypoints,
        ..SynthConfig::default()
    };
    let data = synth_warp_pairs(args.seed, args.n, &cfg)?;
    let manifest = write_manifest(&args.out, &data)?;
    emit(
        &json!({"manifest": manifest, "pairs": data.len(), "seed": args.seed, "size": args.size}),
        None,
    )
}

fn bench(args: BenchArgs) -> Result<()> {
    let rows = bench_sce(args.height, args.width, args.channels, &args.k, args.reps)?;
    eprintln!(
        "{:>4} {:>12} {:>12} {:>14} {:>14}",
        "K", "sparse elts", "dense elts", "sparse time s", "dense time s"
    );
    for r in &rows {
        eprintln!(
            "{:>4} {:>12} {:>12} {:>14.6} {:>14.6}",
            r.k, r.sparse_elements, r.dense_elements, r.sparse_time, r.dense_time
        );
    }
    emit(
        &json!({"height": args.height, "width": args.width, "channels": args.channels, "rows": rows}),
        args.out.json.as_deref(),
    )
}

fn selftest(args: OutArgs) -> Result<bool> {
    let checks = scorr_core::selftest::run();
    for c in &checks {
        eprintln!(
            "{} {:<30} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let ok = checks.iter().all(|c| c.passed);
    emit(
        &json!({"passed": ok, "checks": checks}),
        args.json.as_deref(),
    )?;
    Ok(ok)
}

fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<scorr_core::Error>()
            .is_some_and(|e| e.is_validation())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::BenchSce(a) => bench(a),
        Command::Selftest(a) => selftest(a).and_then(|ok| {
            if ok {
                Ok(())
            } else {
                bail!("self-test failed")
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
