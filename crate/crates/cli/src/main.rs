//! `teco`: train, evaluate, ablate and sweep the fusion model on feature
//! bundles, and generate synthetic bundles.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use teco_core::bundle::synthetic::{ChannelSignal, SyntheticConfig};
use teco_core::bundle::Dims;
use teco_core::experiment::{
    cmd_ablate, cmd_evaluate, cmd_gamma_sweep, cmd_make_synthetic, cmd_train, default_gamma_grid,
    export_report, ExperimentConfig, RunResult,
};
use teco_core::model::Variant;
use teco_core::{Result, TecoError};

#[derive(Parser)]
#[command(
    name = "teco",
    version,
    about = "Commonsense-enhanced multimodal intent recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a bundle and test the best checkpoint.
    Train(RunArgs),
    /// Score a saved checkpoint on every split.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint directory (default: <out>/checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// One run per ablation variant.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variants (default: all seven).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// One run per gamma value.
    GammaSweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated gamma values (default: 0.05 to 0.95 in steps of 0.05).
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Write a synthetic bundle plus knowledge.tsv.
    MakeSynthetic(SyntheticArgs),
    /// Summarize a bundle; with --knowledge also check its retrieved phrases.
    ExportReport {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        knowledge: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// twenty_class or binary.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
}

impl RunArgs {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| TecoError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("paths.bundle", path(&self.bundle)),
            ("paths.knowledge", path(&self.knowledge)),
            ("paths.out", path(&self.out)),
            ("seed", self.seed.map(|s| s.to_string())),
            ("task", self.task.clone()),
            ("tem.gamma", self.gamma.map(|g| g.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    /// Training samples per class.
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    /// Validation and test samples per class.
    #[arg(long, default_value_t = 5)]
    eval_per_class: usize,
    /// Class separation in units of the noise scale.
    #[arg(long, default_value_t = 5.0)]
    margin: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Feature dimension of every modality.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Channels carrying class signal, from text, vision, audio, xreact,
    /// xwant (default: all). The rest are noise only.
    #[arg(long, value_delimiter = ',')]
    signal_channels: Vec<String>,
}

impl SyntheticArgs {
    fn config(&self) -> Result<SyntheticConfig> {
        let mut cfg = SyntheticConfig {
            classes: self.classes,
            train_per_class: self.per_class,
            valid_per_class: self.eval_per_class,
            test_per_class: self.eval_per_class,
            margin: self.margin,
            noise: self.noise,
            seed: self.seed,
            dims: Dims {
                text: self.dim,
                vision: self.dim,
                audio: self.dim,
            },
            ..SyntheticConfig::default()
        };
        if !self.signal_channels.is_empty() {
            let mut channels = [
                ("text", &mut cfg.text),
                ("vision", &mut cfg.vision),
                ("audio", &mut cfg.audio),
                ("xreact", &mut cfg.xreact),
                ("xwant", &mut cfg.xwant),
            ];
            for name in &self.signal_channels {
                if !channels.iter().any(|(n, _)| n == name) {
                    return Err(TecoError::Config(format!(
                        "unknown signal channel {name:?}"
                    )));
                }
            }
            for (name, ch) in &mut channels {
                if !self.signal_channels.iter().any(|s| s == name) {
                    **ch = ChannelSignal::noise_only();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn summary(r: &RunResult) -> String {
    format!(
        "{} gamma={} acc={:.4} macro_f1={:.4} macro_prec={:.4} macro_rec={:.4} params={}",
        r.variant,
        r.gamma,
        r.test.acc,
        r.test.macro_f1,
        r.test.macro_prec,
        r.test.macro_rec,
        r.num_params
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let r = cmd_train(&args.resolve()?)?;
            println!("{}", summary(&r));
        }
        Command::Evaluate { run, checkpoint } => {
            let mut cfg = run.resolve()?;
            if checkpoint.is_some() {
                cfg.paths.checkpoint = checkpoint;
            }
            let reports = cmd_evaluate(&cfg)?;
            for (split, m) in ["train", "valid", "test"].iter().zip(reports) {
                println!("{split} acc={:.4} macro_f1={:.4}", m.acc, m.macro_f1);
            }
        }
        Command::Ablate { run, variants } => {
            let variants = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants
                    .iter()
                    .map(|v| Variant::parse(v.trim()))
                    .collect::<Result<_>>()?
            };
            for r in cmd_ablate(&run.resolve()?, &variants)? {
                println!("{}", summary(&r));
            }
        }
        Command::GammaSweep { run, grid } => {
            let grid = if grid.is_empty() {
                default_gamma_grid()
            } else {
                grid
            };
            for r in cmd_gamma_sweep(&run.resolve()?, &grid)? {
                println!("{}", summary(&r));
            }
        }
        Command::MakeSynthetic(args) => {
            let bundle = cmd_make_synthetic(&args.config()?, &args.out)?;
            let [tr, va, te] = bundle.split_sizes();
            println!(
                "wrote {} (train {tr}, valid {va}, test {te})",
                args.out.display()
            );
        }
        Command::ExportReport {
            bundle,
            knowledge,
            out,
        } => {
            let mismatches = export_report(&bundle, knowledge.as_deref(), &out)?;
            if knowledge.is_some() {
                println!("retrieval mismatches: {mismatches}");
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
