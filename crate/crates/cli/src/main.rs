mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use manifest::{FileDigest, RunManifest};
use pctnews::checkpoint::{sniff, CheckpointKind, EncoderCheckpoint};
use pctnews::config::ConfigFile;
use pctnews::data::{
    generate_ar1, generate_synthetic, load_dataset, save_dataset, split, validate_dataset, Ar1Config, SplitSpec,
    SynthConfig,
};
use pctnews::evaluation::{compare_models, MetricsReport};
use pctnews::experiment::{evaluate_encoder, evaluate_lstm_on, train_encoder, train_lstm_on};
use pctnews::lstm::{grad_check_lstm, LstmCheckpoint, LstmConfig};
use pctnews::modality::{build_examples, VersionId};
use pctnews::model::ModelConfig;
use pctnews::tokenizer::{build_vocab, Vocabulary, DEFAULT_VOCAB_SIZE};
use pctnews::training::{grad_check, loss_history_csv, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "pctnews", version, about = "Percent-change prediction from news headlines")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Arch {
    Bert,
    Lstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    /// Headlines from signed lexicons.
    News,
    /// Per-ticker AR(1) percent-change series.
    Ar1,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a dataset CSV against the schema and price invariants.
    Validate { data: PathBuf },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "news")]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a WordPiece vocabulary from a dataset's composed input text.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
        size: usize,
        /// Version whose input composition supplies the corpus.
        #[arg(long, default_value = "v4")]
        version: VersionId,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random train/test partition.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.10)]
        test_fraction: f64,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_test: PathBuf,
    },
    /// Train an encoder (per modality version) or the LSTM baseline.
    Train {
        #[arg(long, value_enum)]
        arch: Arch,
        #[arg(long)]
        version: Option<VersionId>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also draw cumulative predicted vs actual as SVG.
        #[arg(long)]
        trend: Option<PathBuf>,
    },
    /// Tabulate evaluation reports side by side.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analytic gradients against finite differences on a micro model.
    GradCheck {
        #[arg(long, value_enum)]
        arch: Arch,
    },
    /// Re-execute a recorded run and confirm its outputs are byte-identical.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<pctnews::Error> for Failure {
    fn from(e: pctnews::Error) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("no such file: {}", path.display())))
    }
}

fn load_config(path: Option<&Path>) -> std::result::Result<ConfigFile, Failure> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(ConfigFile::load(p)?)
        }
        None => Ok(ConfigFile::default()),
    }
}

struct Recorder<'a> {
    command: &'static str,
    argv: &'a [String],
    seed: u64,
}

impl Recorder<'_> {
    fn write<C: Serialize>(&self, config: &C, inputs: &[&Path], outputs: &[&Path], beside: &[&Path]) -> anyhow::Result<()> {
        let digest = |ps: &[&Path]| ps.iter().map(|p| FileDigest::of(p)).collect::<anyhow::Result<Vec<_>>>();
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            argv: self.argv.to_vec(),
            seed: self.seed,
            config: serde_json::to_value(config)?,
            inputs: digest(inputs)?,
            outputs: digest(outputs)?,
        };
        for p in beside {
            manifest.write_beside(p)?;
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn run(cli: Cli, argv: &[String]) -> Outcome {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Validate { data } => {
            require_file(&data)?;
            let file = std::fs::File::open(&data).with_context(|| format!("opening {}", data.display()))?;
            let report = validate_dataset(std::io::BufReader::new(file));
            for v in &report.violations {
                eprintln!("{v}");
            }
            if report.is_valid() {
                println!("{}: {} rows, no violations", data.display(), report.rows_checked);
                Ok(())
            } else {
                Err(anyhow!("{} violation(s) in {} rows", report.violations.len(), report.rows_checked).into())
            }
        }

        Command::Synth { config, kind, out } => {
            let mut cf = load_config(config.as_deref())?;
            let rec = Recorder { command: "synth", argv, seed };
            let inputs: Vec<&Path> = config.iter().map(|p| p.as_path()).collect();
            match kind {
                SynthKind::News => {
                    let mut c = cf.synth_config(SynthConfig::default())?;
                    cf.finish()?;
                    c.seed = cli.seed.unwrap_or(c.seed);
                    save_dataset(&generate_synthetic(&c)?, &out)?;
                    Recorder { seed: c.seed, ..rec }.write(&c, &inputs, &[&out], &[&out])?;
                }
                SynthKind::Ar1 => {
                    let mut c = cf.ar1_config(Ar1Config::default())?;
                    cf.finish()?;
                    c.seed = cli.seed.unwrap_or(c.seed);
                    save_dataset(&generate_ar1(&c)?, &out)?;
                    Recorder { seed: c.seed, ..rec }.write(&c, &inputs, &[&out], &[&out])?;
                }
            }
            Ok(())
        }

        Command::BuildVocab { data, size, version, out } => {
            require_file(&data)?;
            let ds = load_dataset(&data)?;
            let examples = build_examples(&ds, &version.spec())?;
            let texts: Vec<&str> = examples.iter().map(|e| e.input_text.as_str()).collect();
            let vocab = build_vocab(&texts, size)?;
            vocab.save(&out)?;
            println!("{} tokens", vocab.len());
            #[derive(Serialize)]
            struct VocabRun {
                size: usize,
                version: VersionId,
            }
            Recorder { command: "build-vocab", argv, seed }.write(
                &VocabRun { size, version },
                &[&data],
                &[&out],
                &[&out],
            )?;
            Ok(())
        }

        Command::Split { data, test_fraction, out_train, out_test } => {
            require_file(&data)?;
            let spec = SplitSpec { test_fraction, seed };
            let (train, test) = split(&load_dataset(&data)?, &spec)?;
            save_dataset(&train, &out_train)?;
            save_dataset(&test, &out_test)?;
            println!("{} train / {} test", train.len(), test.len());
            Recorder { command: "split", argv, seed }.write(
                &spec,
                &[&data],
                &[&out_train, &out_test],
                &[&out_train, &out_test],
            )?;
            Ok(())
        }

        Command::Train { arch, version, data, vocab, config, out } => {
            require_file(&data)?;
            let mut cf = load_config(config.as_deref())?;
            let mut inputs: Vec<&Path> = vec![&data];
            inputs.extend(config.as_deref());
            let rec = Recorder { command: "train", argv, seed };
            let losses = sibling(&out, ".loss.csv");
            let ds = load_dataset(&data)?;
            match arch {
                Arch::Bert => {
                    let version = version.ok_or_else(|| Failure::Usage("--version is required with --arch bert".into()))?;
                    let vocab_path = vocab.ok_or_else(|| Failure::Usage("--vocab is required with --arch bert".into()))?;
                    require_file(&vocab_path)?;
                    let vocab = Vocabulary::load(&vocab_path)?;
                    let mc = cf.model_config(ModelConfig { vocab_size: vocab.len(), ..ModelConfig::default() })?;
                    let mut tc = cf.train_config(TrainConfig::default())?;
                    cf.finish()?;
                    tc.seed = cli.seed.unwrap_or(tc.seed);
                    let trained = train_encoder(&ds, version, &vocab, &mc, &tc)?;
                    trained.checkpoint.save(&out)?;
                    write_text(&losses, &loss_history_csv(&trained.loss_history))?;
                    #[derive(Serialize)]
                    struct EncoderRun {
                        version: VersionId,
                        model: ModelConfig,
                        train: TrainConfig,
                    }
                    inputs.push(&vocab_path);
                    Recorder { seed: tc.seed, ..rec }.write(&EncoderRun { version, model: mc, train: tc }, &inputs, &[&out, &losses], &[&out])?;
                }
                Arch::Lstm => {
                    if version.is_some() {
                        return Err(Failure::Usage("--version applies to --arch bert only".into()));
                    }
                    if vocab.is_some() {
                        return Err(Failure::Usage("--vocab applies to --arch bert only".into()));
                    }
                    let mut lc = cf.lstm_config(LstmConfig::default())?;
                    cf.finish()?;
                    lc.train.seed = cli.seed.unwrap_or(lc.train.seed);
                    let trained = train_lstm_on(&ds, &lc)?;
                    trained.checkpoint.save(&out)?;
                    write_text(&losses, &loss_history_csv(&trained.loss_history))?;
                    Recorder { seed: lc.train.seed, ..rec }.write(&lc, &inputs, &[&out, &losses], &[&out])?;
                }
            }
            Ok(())
        }

        Command::Evaluate { ckpt, data, out, trend } => {
            require_file(&ckpt)?;
            require_file(&data)?;
            let bytes = std::fs::read(&ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
            let ds = load_dataset(&data)?;
            let (report, series) = match sniff(&bytes)? {
                CheckpointKind::Encoder => evaluate_encoder(&EncoderCheckpoint::from_bytes(&bytes)?, &ds)?,
                CheckpointKind::Lstm => evaluate_lstm_on(&LstmCheckpoint::from_bytes(&bytes)?, &ds)?,
            };
            write_text(&out, &report.to_json()?)?;
            let mut outputs: Vec<&Path> = vec![&out];
            if let Some(t) = &trend {
                write_text(t, &series.to_svg(&format!("cumulative percent change, {}", report.version)))?;
                outputs.push(t);
            }
            println!(
                "{}: direction accuracy {:.4}, test MSE {:.4}, n = {}",
                report.version, report.direction_accuracy, report.test_mse, report.n_test
            );
            #[derive(Serialize)]
            struct EvalRun {
                trend_pearson_r: Option<f64>,
            }
            Recorder { command: "evaluate", argv, seed }.write(
                &EvalRun { trend_pearson_r: series.pearson_r },
                &[&ckpt, &data],
                &outputs,
                &[&out],
            )?;
            Ok(())
        }

        Command::Compare { reports, out } => {
            if reports.len() < 2 {
                return Err(Failure::Usage("compare needs at least two --reports".into()));
            }
            let mut parsed = Vec::new();
            for r in &reports {
                require_file(r)?;
                let text = std::fs::read_to_string(r).with_context(|| format!("reading {}", r.display()))?;
                parsed.push(MetricsReport::from_json(&text).with_context(|| format!("parsing {}", r.display()))?);
            }
            let table = compare_models(&parsed)?;
            write_text(&out, &table.to_csv())?;
            let inputs: Vec<&Path> = reports.iter().map(|p| p.as_path()).collect();
            Recorder { command: "compare", argv, seed }.write(&serde_json::Value::Null, &inputs, &[&out], &[&out])?;
            Ok(())
        }

        Command::GradCheck { arch } => {
            let report = match arch {
                Arch::Bert => grad_check(&ModelConfig::micro(), seed)?,
                Arch::Lstm => grad_check_lstm(4, 3, seed)?,
            };
            println!(
                "max relative error {:.3e} at {}[{}] over {} entries",
                report.max_relative_error, report.worst.0, report.worst.1, report.entries_checked
            );
            if report.passed() {
                println!("gradient check passed");
                Ok(())
            } else {
                Err(anyhow!("gradient check failed").into())
            }
        }

        Command::Rerun { manifest } => {
            require_file(&manifest)?;
            let recorded = RunManifest::load(&manifest)?;
            if recorded.command == "rerun" {
                return Err(Failure::Usage("a manifest cannot replay a rerun".into()));
            }
            let mut full = vec!["pctnews".to_string()];
            full.extend(recorded.argv.iter().cloned());
            let cli = Cli::try_parse_from(&full).map_err(|e| Failure::Usage(format!("recorded argv: {e}")))?;
            run(cli, &recorded.argv)?;
            let mut mismatches = 0;
            for o in &recorded.outputs {
                let now = FileDigest::of(&o.path)?;
                if now.sha256 == o.sha256 {
                    println!("identical  {}", o.path.display());
                } else {
                    mismatches += 1;
                    println!("DIFFERENT  {}", o.path.display());
                }
            }
            if mismatches > 0 {
                return Err(anyhow!("{mismatches} output(s) differ from the recorded run").into());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&argv);
    match run(cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
