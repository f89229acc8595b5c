//! `ptywm`: run the watermarking pipeline one stage at a time or end to end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure,
//! 4 verification negative.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ptywm::fusion::{inject, FusedModel};
use ptywm::nn::load_weights;
use ptywm::pipeline::{self, ExperimentConfig, Layout};
use ptywm::ptynet::load_ptynet;
use ptywm::report::write_json;
use ptywm::trigger::VerificationKey;
use ptywm::verify::Verdict;

#[derive(Parser, Debug)]
#[command(name = "ptywm", version, about = "Plug-and-play DNN watermarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML, or JSON by `.json` extension). Defaults
    /// apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; later stages read earlier artifacts from here.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the train and test datasets.
    GenData(Common),
    /// Train the target classifier.
    TrainTarget(Common),
    /// Create the owner's verification key.
    MakeKey(Common),
    /// Train the watermark network for the key.
    TrainPtynet(Common),
    /// Fuse the watermark network into the target.
    Inject(Common),
    /// Query a fused model with verification samples and decide ownership.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Fused model directory to check; defaults to `<out>/fused`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the removal-attack grid against the fused model.
    Attack(Common),
    /// Embed the pattern-stamping baseline watermark.
    Baseline(Common),
    /// Time both schemes over several target models.
    Bench(Common),
    /// All stages end to end.
    Run(Common),
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: e.into(),
    }
}

fn stage_error(stage: &str, e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 3,
        error: e.into().context(format!("stage {stage} failed")),
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

trait StageExt<T> {
    fn stage(self, name: &str) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, name: &str) -> Outcome<T> {
        self.map_err(|e| stage_error(name, e))
    }
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        None => ExperimentConfig::default_with_seed(0),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config(path, &text)?
        }
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_config(path: &Path, text: &str) -> anyhow::Result<ExperimentConfig> {
    let json = path.extension().is_some_and(|e| e == "json");
    if json {
        serde_json::from_str(text).map_err(|e| anyhow!("{}: {e}", path.display()))
    } else {
        toml::from_str(text).map_err(|e| anyhow!("{}: {}", path.display(), e.to_string().trim_end()))
    }
}

fn setup(common: &Common) -> Outcome<(ExperimentConfig, Layout)> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(config_error(anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(config_error)?;
    }
    let cfg = load_config(common).map_err(config_error)?;
    Ok((cfg, Layout::new(&common.out)))
}

fn load_key(layout: &Layout, stage: &str) -> Outcome<VerificationKey> {
    VerificationKey::load(layout.key())
        .with_context(|| "run make-key first")
        .stage(stage)
}

fn load_target(layout: &Layout, stage: &str) -> Outcome<ptywm::nn::Network> {
    load_weights(layout.target())
        .with_context(|| "run train-target first")
        .stage(stage)
}

fn load_fused(dir: &Path, stage: &str) -> Outcome<FusedModel> {
    FusedModel::load(dir).with_context(|| "run inject first").stage(stage)
}

fn run(cmd: Command) -> Outcome<()> {
    match cmd {
        Command::GenData(c) => {
            let (cfg, layout) = setup(&c)?;
            let (train, test) = pipeline::gen_data(&cfg).stage("gen-data")?;
            pipeline::save_data(&layout, &train, &test).stage("gen-data")?;
            println!("train {} samples, test {} samples", train.len(), test.len());
            println!("data hash {}", pipeline::data_hash(&train, &test));
        }
        Command::TrainTarget(c) => {
            let (cfg, layout) = setup(&c)?;
            let (train, test) = pipeline::load_or_gen_data(&cfg, &layout).stage("train-target")?;
            let trained = pipeline::train_target(&cfg, &train).stage("train-target")?;
            pipeline::save_target(&layout, &trained.net).stage("train-target")?;
            let report = pipeline::target_report(&cfg, &trained, &train, &test).stage("train-target")?;
            write_json(layout.report("target.json"), &report).stage("train-target")?;
            println!("target test accuracy {:.4}", report.test_accuracy);
            println!("target hash {}", report.target_hash);
        }
        Command::MakeKey(c) => {
            let (cfg, layout) = setup(&c)?;
            let (train, _) = pipeline::load_or_gen_data(&cfg, &layout).stage("make-key")?;
            let key = pipeline::create_key(&cfg, &train).stage("make-key")?;
            key.save(layout.key()).stage("make-key")?;
            println!("{} key with {} watermark classes", key.kind().name(), key.watermark_classes());
            println!("key hash {}", key.hash());
        }
        Command::TrainPtynet(c) => {
            let (cfg, layout) = setup(&c)?;
            let key = load_key(&layout, "train-ptynet")?;
            let pty = pipeline::train_ptynet_for_key(&cfg, &key).stage("train-ptynet")?;
            pipeline::save_ptynet_artifact(&layout, &pty, &key).stage("train-ptynet")?;
            let report = pipeline::ptynet_report(&cfg, &key, &pty);
            write_json(layout.report("ptynet.json"), &report).stage("train-ptynet")?;
            println!(
                "hold-out accuracy {:.4} (trigger {:.4}, benign {:.4})",
                pty.report.holdout_accuracy, pty.report.trigger_accuracy, pty.report.benign_accuracy
            );
            println!("ptynet hash {}", report.ptynet_hash);
        }
        Command::Inject(c) => {
            let (_, layout) = setup(&c)?;
            let key = load_key(&layout, "inject")?;
            let target = load_target(&layout, "inject")?;
            let (pty, _) = load_ptynet(layout.ptynet())
                .with_context(|| "run train-ptynet first")
                .stage("inject")?;
            let fm = inject(target, pty, &key.mapping, key.alpha).stage("inject")?;
            fm.save(layout.fused_dir()).stage("inject")?;
            println!("fused model written to {}", layout.fused_dir().display());
            println!("target hash {} (unchanged)", fm.target_hash());
        }
        Command::Verify { common, model } => {
            let (cfg, layout) = setup(&common)?;
            let key = load_key(&layout, "verify")?;
            let original = load_target(&layout, "verify")?;
            let fm = load_fused(&model.unwrap_or_else(|| layout.fused_dir()), "verify")?;
            let (_, test) = pipeline::load_or_gen_data(&cfg, &layout).stage("verify")?;
            let report = pipeline::verify_stage(&cfg, &fm, &original, &key, &test).stage("verify")?;
            write_json(layout.report("verify.json"), &report).stage("verify")?;
            let d = &report.decision;
            println!(
                "effectiveness {:.4} ({}/{}), log10 p {:.2}, fidelity decline {:.6}",
                d.success_rate, d.successes, d.n, d.log10_p_value, report.fidelity.decline_rate
            );
            match d.verdict {
                Verdict::Owned => println!("verdict: owned"),
                Verdict::NotOwned => {
                    println!("verdict: not owned");
                    return Err(Failure {
                        code: 4,
                        error: anyhow!("verification negative"),
                    });
                }
            }
        }
        Command::Attack(c) => {
            let (cfg, layout) = setup(&c)?;
            let key = load_key(&layout, "attack")?;
            let fm = load_fused(&layout.fused_dir(), "attack")?;
            let (_, test) = pipeline::load_or_gen_data(&cfg, &layout).stage("attack")?;
            let report = pipeline::attack_stage(&cfg, &fm, &key, &test).stage("attack")?;
            write_json(layout.report("attack.json"), &report).stage("attack")?;
            let csv = report.robustness.csv();
            csv.write(layout.report("attack.csv")).stage("attack")?;
            print!("{}", csv.render());
        }
        Command::Baseline(c) => {
            let (cfg, layout) = setup(&c)?;
            let target = load_target(&layout, "baseline")?;
            let (train, test) = pipeline::load_or_gen_data(&cfg, &layout).stage("baseline")?;
            let report = pipeline::baseline_stage(&cfg, &target, &train, &test).stage("baseline")?;
            write_json(layout.report("baseline.json"), &report).stage("baseline")?;
            println!(
                "baseline effectiveness {:.4}, fidelity decline {:.6}",
                report.effectiveness.success_rate, report.fidelity.decline_rate
            );
        }
        Command::Bench(c) => {
            let (cfg, layout) = setup(&c)?;
            let target = load_target(&layout, "bench")?;
            let (train, test) = pipeline::load_or_gen_data(&cfg, &layout).stage("bench")?;
            let report = pipeline::bench_report(&cfg, &target, &train, &test).stage("bench")?;
            write_json(layout.report("bench.json"), &report).stage("bench")?;
            report.efficiency.csv().write(layout.report("bench.csv")).stage("bench")?;
            println!("{}", report.efficiency.summary());
        }
        Command::Run(c) => {
            let (cfg, _) = setup(&c)?;
            let summary = pipeline::run_pipeline(&cfg, &c.out).map_err(|f| {
                let code = if f.stage == "config" { 2 } else { 3 };
                Failure {
                    code,
                    error: anyhow::Error::new(f),
                }
            })?;
            println!("verdict: {}", serde_json::to_string(&summary.verdict).expect("enum serializes"));
            println!("summary hash {}", summary.hash());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
