use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use viewsynth_cli::{config, server};
use viewsynth_core::checkpoint::{Checkpoint, IdentitySynthesizer, ViewSynthesizer};
use viewsynth_core::data::{dataset_pose_stats, generate_light_field, write_manifest};
use viewsynth_core::latency::{benchmark_latency, LatencyReport};
use viewsynth_core::metrics::{evaluate_table, render_table, Protocol};
use viewsynth_core::training::{run_ablation, run_curriculum, train, AblationAxis, DatasetSpec, Init, TrainConfig};
use viewsynth_core::{Model, ModelConfig, PoseStats, Variant};

#[derive(Parser)]
#[command(name = "viewsynth", version, about = "Single-image pose-conditioned view synthesis")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Training config (TOML or JSON); defaults to the preset.
    #[arg(long, global = true, env = "VIEWSYNTH_CONFIG")]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Override a config field, e.g. `--set epochs=5 --set model.height=128`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one stage on the configured dataset.
    Train {
        #[arg(long, default_value = "model.safetensors")]
        out: PathBuf,
        /// Continue an interrupted run from this checkpoint.
        #[arg(long, conflicts_with = "init")]
        resume: Option<PathBuf>,
        /// Start from these weights with a fresh optimizer.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Run the staged curriculum, writing every stage checkpoint.
    Curriculum {
        #[arg(long, default_value = "curriculum")]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on the validation set (or the training set).
    Evaluate {
        #[arg(long, required_unless_present = "identity")]
        checkpoint: Option<PathBuf>,
        /// Evaluate a model that returns its input unchanged.
        #[arg(long)]
        identity: bool,
        #[arg(long, value_enum, default_value = "direct")]
        protocol: ProtocolArg,
        #[arg(long, value_enum, default_value = "validation")]
        split: Split,
        /// Report as JSON; the aligned table goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score every variant along one ablation axis.
    Ablate {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, default_value = "ablation.json")]
        out: PathBuf,
    },
    /// Time end-to-end synthesis per resolution.
    Benchmark {
        /// Checkpoint to time; without one, fresh models of each variant.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "lite,full")]
        variants: Vec<VariantArg>,
        #[arg(long, value_delimiter = ',', default_value = "256,512")]
        resolutions: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 30)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a checkpoint over HTTP and WebSocket.
    Serve {
        #[arg(long, required_unless_present = "identity")]
        checkpoint: Option<PathBuf>,
        /// Serve the identity model at the configured resolution.
        #[arg(long)]
        identity: bool,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Write the configured dataset to disk.
    MakeData {
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Direct,
    #[value(alias = "round_trip")]
    RoundTrip,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Validation,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Embedding,
    Encoder1,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Lite,
    Full,
}

fn split_spec(cfg: &TrainConfig, split: Split) -> &DatasetSpec {
    match (split, &cfg.validation) {
        (Split::Validation, Some(v)) => v,
        _ => &cfg.dataset,
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = config::resolve(cli.common.config.as_deref(), &cli.common.preset, &cli.common.overrides)?;
    let (h, w) = (cfg.model.height, cfg.model.width);
    match cli.command {
        Command::Train { out, resume, init } => {
            let init = match (resume, init) {
                (Some(p), _) => Init::Resume(Checkpoint::load(&p)?),
                (None, Some(p)) => Init::Warm(Checkpoint::load(&p)?),
                (None, None) => Init::Fresh,
            };
            let result = train(&cfg, init)?;
            result.checkpoint.save(&out)?;
            let last = result.records.last().map(|r| r.loss.total).unwrap_or(f64::NAN);
            println!("{} steps, final loss {last:.5}, saved {}", result.records.len(), out.display());
        }
        Command::Curriculum { out_dir } => {
            let result = run_curriculum(&cfg, Some(&out_dir))?;
            for (i, stage) in cfg.stages.iter().enumerate() {
                println!("stage {} ({}): {}", i + 1, stage.name, out_dir.join(format!("stage{}.safetensors", i + 1)).display());
            }
            println!("final: {} ({} steps)", out_dir.join("final.safetensors").display(), result.records.len());
        }
        Command::Evaluate { checkpoint, identity, protocol, split, out } => {
            let data = split_spec(&cfg, split).load(h, w)?;
            let model: Box<dyn ViewSynthesizer> = match checkpoint {
                Some(p) if !identity => Box::new(Checkpoint::load(&p)?),
                _ => Box::new(IdentitySynthesizer { height: h, width: w, stats: dataset_pose_stats(&data)? }),
            };
            let protocol = match protocol {
                ProtocolArg::Direct => Protocol::Direct,
                ProtocolArg::RoundTrip => Protocol::RoundTrip,
            };
            let report = evaluate_table(model.as_ref(), &data, protocol)?;
            print!("{}", render_table(&[(report.model.clone(), &report)]));
            if let Some(p) = out {
                write(&p, &report.to_json()?)?;
            }
        }
        Command::Ablate { axis, out } => {
            let axis = match axis {
                AxisArg::Embedding => AblationAxis::EmbeddingVariants,
                AxisArg::Encoder1 => AblationAxis::Encoder1,
            };
            let table = run_ablation(&cfg, axis)?;
            let text = table.render();
            print!("{text}");
            write(&out, &serde_json::to_string_pretty(&table)?)?;
            write(&out.with_extension("txt"), &text)?;
        }
        Command::Benchmark { checkpoint, variants, resolutions, warmup, repeats, out } => {
            if resolutions.is_empty() {
                bail!("no resolutions given");
            }
            let mut reports: Vec<LatencyReport> = Vec::new();
            match checkpoint {
                Some(p) => reports.push(benchmark_latency(&Checkpoint::load(&p)?, &resolutions, warmup, repeats)?),
                None => {
                    let stats = PoseStats::new([-0.1; 6], [0.1; 6])?;
                    for v in variants {
                        let variant = match v {
                            VariantArg::Lite => Variant::Lite,
                            VariantArg::Full => Variant::Full,
                        };
                        let mc = ModelConfig {
                            encoder1: cfg.model.encoder1,
                            embedding: cfg.model.embedding.clone(),
                            ..ModelConfig::new(variant, cfg.model.embedding.variant, h, w)
                        };
                        let ckpt = Checkpoint::new(Model::new(mc)?, stats);
                        reports.push(benchmark_latency(&ckpt, &resolutions, warmup, repeats)?);
                    }
                }
            }
            let merged = LatencyReport {
                device: reports[0].device.clone(),
                rows: reports.into_iter().flat_map(|r| r.rows).collect(),
            };
            print!("{}", merged.render());
            if let Some(p) = out {
                write(&p, &serde_json::to_string_pretty(&merged)?)?;
            }
        }
        Command::Serve { checkpoint, identity, bind } => {
            let model: Arc<dyn ViewSynthesizer> = match checkpoint {
                Some(p) if !identity => Arc::new(Checkpoint::load(&p)?),
                _ => {
                    let data = cfg.dataset.load(h, w)?;
                    Arc::new(IdentitySynthesizer { height: h, width: w, stats: dataset_pose_stats(&data)? })
                }
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                tokio::select! {
                    r = server::serve(model, bind) => r,
                    _ = tokio::signal::ctrl_c() => Ok(()),
                }
            })?;
        }
        Command::MakeData { split, out } => match split_spec(&cfg, split) {
            DatasetSpec::LightField { spec, baseline_scale, .. } => {
                let spec = viewsynth_core::data::LightFieldSpec {
                    height: h,
                    width: w,
                    baseline: spec.baseline * baseline_scale,
                    ..spec.clone()
                };
                generate_light_field(&spec)?.save(&out)?;
                println!("{}x{} light field written to {}", spec.rows, spec.cols, out.display());
            }
            other => {
                let samples = other.load(h, w)?;
                write_manifest(&samples, &out)?;
                println!("{} samples written to {}", samples.len(), out.display());
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
