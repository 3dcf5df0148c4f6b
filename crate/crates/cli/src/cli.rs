use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use morphik::ik::{evaluate, train_with_progress, EffectorKind, TrainConfig};
use morphik::nn::{checkpoint_digest, save_checkpoint, DType, TrainingMeta};
use morphik::shape_inversion::{build_shape_bank, DEFAULT_BANK_SIZE, DEFAULT_KERNEL_WIDTH};
use morphik::skeleton::{load_skeleton, SkeletonTemplate};
use morphik::wire::{PoseWire, ShapeWire};

use crate::api::{self, ApiError, ApiResult, Artifacts, Envelope};
use crate::service::{self, ServiceConfigFile};

pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "morphik", version, about = "Shape-aware learned IK toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on synthetic poses and write a checkpoint.
    Train(TrainArgs),
    /// Held-out MPJPE / PA-MPJPE / GE under the randomized effector scheme.
    Eval(EvalArgs),
    /// Estimate shape parameters for a user skeleton.
    InvertShape(InvertArgs),
    /// Greedy effector recovery for a full pose.
    RecoverEffectors(RecoverArgs),
    /// Solve one effector set.
    Solve(SolveArgs),
    /// Import a scene and bootstrap every person.
    ImportScene(ImportArgs),
    /// Sample a shape bank.
    BuildBank(BankArgs),
    /// Run the JSON service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TrainConfig as JSON; defaults for missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config step count.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Store weights as f32.
    #[arg(long)]
    pub f32: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Effector scheme and pose prior; the training defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// User skeleton file.
    #[arg(long)]
    pub skeleton: PathBuf,
    /// JSON object, user joint name → canonical joint name.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// `{"shape"?, "root", "rotations"}`.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub max: usize,
    #[arg(long, default_value_t = 0.02)]
    pub threshold: f64,
    /// Candidate kinds, e.g. `position,rotation`.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub kinds: Option<Vec<EffectorKind>>,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// `{"shape", "effectors"}`; `-` reads stdin.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    /// User character skeleton.
    #[arg(long)]
    pub character: Option<PathBuf>,
    #[arg(long, requires = "character")]
    pub map: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub max: usize,
    #[arg(long, default_value_t = 0.02)]
    pub threshold: f64,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BankArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BANK_SIZE)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_KERNEL_WIDTH)]
    pub kernel_width: f64,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config JSON.
    #[arg(long, env = "MORPHIK_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Bytes.
    #[arg(long)]
    pub request_limit: Option<usize>,
    #[arg(long)]
    pub log_level: Option<String>,
}

fn parse_kind(s: &str) -> Result<EffectorKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown effector kind `{s}` (position, rotation, lookat)"))
}

/// Parses `argv` and runs it. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            match &e.path {
                Some(p) => eprintln!("error ({}) at {p}: {}", e.kind, e.message),
                None => eprintln!("error ({}): {}", e.kind, e.message),
            }
            EXIT_DOMAIN
        }
    }
}

fn print_json<T: Serialize>(v: &T) {
    use std::io::Write;
    // a closed pipe (e.g. `| head`) is not an error
    let _ = writeln!(
        std::io::stdout().lock(),
        "{}",
        serde_json::to_string_pretty(v).expect("output serializes")
    );
}

fn canonical(path: Option<&Path>) -> ApiResult<SkeletonTemplate> {
    Ok(match path {
        Some(p) => load_skeleton(p)?,
        None => SkeletonTemplate::bundled(),
    })
}

fn enveloped<T: Serialize>(a: &Artifacts, body: T) {
    print_json(&Envelope {
        checkpoint_hash: a.checkpoint_hash.clone(),
        body,
    });
}

fn dispatch(cmd: Command) -> ApiResult<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Eval(a) => {
            let art = Artifacts::load(&a.ckpt, a.skeleton.as_deref())?;
            let config: TrainConfig = match &a.config {
                Some(p) => api::read_json(p)?,
                None => TrainConfig::default(),
            };
            let report = evaluate(&art.model, &art.template, &config, a.n, a.seed)?;
            enveloped(&art, report);
            Ok(())
        }
        Command::InvertShape(a) => {
            let template = SkeletonTemplate::bundled();
            let bank = api::load_bank(&a.bank, &template)?;
            let req = api::InvertShapeRequest {
                features: None,
                skeleton: Some(api::read_json(&a.skeleton)?),
                map: a.map.as_deref().map(api::read_json).transpose()?,
            };
            print_json(&api::invert(&template, &bank, &req)?);
            Ok(())
        }
        Command::RecoverEffectors(a) => {
            let art = Artifacts::load(&a.ckpt, a.skeleton.as_deref())?;
            let file: PoseFile = api::read_json(&a.pose)?;
            let req = api::RecoverRequest {
                shape: file.shape,
                pose: file.pose,
                max: Some(a.max),
                threshold: Some(a.threshold),
                kinds: a.kinds,
            };
            enveloped(&art, api::recover(&art, &req)?);
            Ok(())
        }
        Command::Solve(a) => {
            let art = Artifacts::load(&a.ckpt, a.skeleton.as_deref())?;
            let req: api::SolveRequest = if a.input.as_os_str() == "-" {
                let mut buf = Vec::new();
                std::io::Read::read_to_end(&mut std::io::stdin(), &mut buf)
                    .map_err(|e| ApiError::new(500, "io", format!("stdin: {e}")))?;
                api::parse_json(&buf)?
            } else {
                api::read_json(&a.input)?
            };
            enveloped(&art, api::solve(&art, &req)?);
            Ok(())
        }
        Command::ImportScene(a) => {
            let art = Artifacts::load(&a.ckpt, a.skeleton.as_deref())?;
            let bank = api::load_bank(&a.bank, &art.template)?;
            let req = api::BootstrapRequest {
                scene: api::read_json(&a.file)?,
                character: a.character.as_deref().map(api::read_json).transpose()?,
                map: a.map.as_deref().map(api::read_json).transpose()?,
                recovery: morphik::recovery::RecoveryConfig {
                    max_effectors: a.max,
                    error_threshold: a.threshold,
                    ..Default::default()
                },
            };
            enveloped(&art, api::bootstrap(&art, &bank, &req)?);
            Ok(())
        }
        Command::BuildBank(a) => {
            let template = canonical(a.skeleton.as_deref())?;
            let bank = build_shape_bank(&template, a.n, a.seed, a.kernel_width)?;
            bank.save(&a.out)?;
            print_json(&serde_json::json!({
                "out": a.out,
                "n": bank.len(),
                "seed": a.seed,
                "kernel_width": bank.kernel_width(),
                "template_id": bank.template_id(),
            }));
            Ok(())
        }
        Command::Serve(a) => serve(a),
    }
}

/// Pose file for `recover-effectors`: a pose with an optional shape.
#[derive(serde::Deserialize)]
struct PoseFile {
    #[serde(default)]
    shape: ShapeWire,
    #[serde(flatten)]
    pose: PoseWire,
}

fn train(a: TrainArgs) -> ApiResult<()> {
    let template = canonical(a.skeleton.as_deref())?;
    let mut config: TrainConfig = match &a.config {
        Some(p) => api::read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(s) = a.steps {
        config.steps = s;
    }
    let (model, trace) = train_with_progress(&template, &config, |e| {
        eprintln!(
            "step {:>6}  train {}  val {:.5}  mpjpe {:.1} mm  ge {:.4}",
            e.step,
            e.train_loss.map_or("-".to_string(), |l| format!("{l:.5}")),
            e.validation_loss, e.validation.mpjpe_mm, e.validation.ge_rad
        );
    })?;
    let meta = TrainingMeta {
        seed: config.seed,
        step: config.steps as u64,
        dataset_tag: format!("synthetic-fk-{}", config.dataset_size),
    };
    let ckpt = model.to_checkpoint(meta, if a.f32 { DType::F32 } else { DType::F64 });
    save_checkpoint(&ckpt, &a.out)?;
    print_json(&serde_json::json!({
        "checkpoint": a.out,
        "checkpoint_hash": checkpoint_digest(&ckpt.to_bytes()),
        "steps": config.steps,
        "trace": trace,
    }));
    Ok(())
}

fn serve(a: ServeArgs) -> ApiResult<()> {
    let file: ServiceConfigFile = match &a.config {
        Some(p) => api::read_json(p)?,
        None => ServiceConfigFile::default(),
    };
    let config = file
        .merge(ServiceConfigFile {
            bind: a.bind,
            checkpoint: a.ckpt,
            bank: a.bank,
            skeleton: a.skeleton,
            request_limit: a.request_limit,
            log_level: a.log_level,
        })
        .resolve()?;
    let level: tracing::Level = config
        .log_level
        .parse()
        .map_err(|_| ApiError::new(422, "invalid_config", format!("unknown log level `{}`", config.log_level)).at("log_level"))?;
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .try_init();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ApiError::new(500, "io", e.to_string()))?;
    rt.block_on(service::serve(config))
        .map_err(|e| ApiError::new(500, "startup", e.to_string()))
}
