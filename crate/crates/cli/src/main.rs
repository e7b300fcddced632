use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selfvc_core::content::EncoderModel;
use selfvc_core::data::{build_trials, evaluate, plan_conversions, ExperimentConfig, Manifest};
use selfvc_core::dsp::{load_wav, save_wav, Waveform};
use selfvc_core::perturb::{g1, g2, random_heuristic};
use selfvc_core::pipeline::{self, LoadedCorpus};
use selfvc_core::speaker::SpeakerModel;
use selfvc_core::synth::SynthModel;
use selfvc_core::trainer::{convert, reconstruct, train, ConvertMode, Models, ReconstructMode, Variant};
use selfvc_core::Error;

#[derive(Parser)]
#[command(name = "selfvc", version, about = "Voice conversion trained on self-synthesized examples")]
struct Cli {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default configuration.
    Config {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic multi-speaker corpus.
    GenerateCorpus {
        #[arg(long)]
        out: PathBuf,
        /// Overrides the corpus seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain the content encoder on masked mel reconstruction.
    PretrainContent {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a speaker embedding model.
    TrainSpeaker {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train the scoring model (train+val splits, evaluator seed).
        #[arg(long)]
        evaluator: bool,
    },
    /// Train the synthesizer.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        frozen: Frozen,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the configured variant.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Convert a source utterance to the voice of target audio, or every planned trial conversion.
    Convert {
        #[command(flatten)]
        models: ModelPaths,
        #[arg(long, value_enum, default_value_t = ConvertArg::DurationGuided)]
        mode: ConvertArg,
        #[arg(long, requires_all = ["target_dir", "out"], conflicts_with = "manifest")]
        source: Option<PathBuf>,
        /// Directory of target speaker WAVs (all files are used).
        #[arg(long)]
        target_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, requires = "out_dir")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Apply a random heuristic perturbation; parameters go to a JSON sidecar.
    Perturb {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = TransformArg::Random)]
        transform: TransformArg,
    },
    /// Score converted files with the evaluator speaker model.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        converted_dir: PathBuf,
        #[arg(long)]
        evaluator: PathBuf,
        /// Guided reconstructions of the test split, for pitch error.
        #[arg(long)]
        reconstructions: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Resynthesize utterances with their own voice.
    Reconstruct {
        #[command(flatten)]
        models: ModelPaths,
        #[arg(long, value_enum, default_value_t = ReconstructArg::Guided)]
        mode: ReconstructArg,
        #[arg(long, requires = "out", conflicts_with = "manifest")]
        source: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reconstruct every test-split utterance.
        #[arg(long, requires = "out_dir")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Frozen {
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    speaker: PathBuf,
}

#[derive(Args)]
struct ModelPaths {
    #[command(flatten)]
    frozen: Frozen,
    #[arg(long)]
    synth: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConvertArg {
    DurationGuided,
    Predictive,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReconstructArg {
    Guided,
    Predictive,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    Random,
    G1,
    G2,
}

struct Loaded {
    encoder: EncoderModel,
    speaker: SpeakerModel,
    synth: SynthModel,
}

impl Loaded {
    fn open(paths: &ModelPaths) -> Result<Self, Error> {
        Ok(Self {
            encoder: EncoderModel::load(&paths.frozen.encoder)?.0,
            speaker: SpeakerModel::load(&paths.frozen.speaker)?.0,
            synth: SynthModel::load(&paths.synth)?.0,
        })
    }

    fn models(&self, cfg: &ExperimentConfig) -> Models<'_> {
        Models {
            encoder: &self.encoder,
            speaker: &self.speaker,
            synth: &self.synth,
            tau: cfg.prepare.tau,
            griffin_lim_iters: cfg.eval.griffin_lim_iters,
        }
    }
}

fn wavs_in(dir: &Path, sample_rate: u32) -> Result<Vec<Waveform>, Error> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> =
        fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "wav")).collect();
    paths.sort();
    paths.iter().map(|p| load_wav(p, sample_rate)).collect()
}

fn corpus(manifest: &Path, cfg: &ExperimentConfig) -> Result<(Manifest, LoadedCorpus), Error> {
    let m = Manifest::load(manifest)?;
    let c = LoadedCorpus::load(&m, &cfg.stft)?;
    Ok((m, c))
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Config { out } => cfg.save(&out)?,
        Command::GenerateCorpus { out, seed } => {
            let mut cfg = cfg;
            if let Some(s) = seed {
                cfg.corpus.seed = s;
            }
            let m = pipeline::generate(&cfg, &out)?;
            println!("wrote {} utterances to {}", m.records.len(), out.display());
        }
        Command::PretrainContent { manifest, out } => {
            let (_, c) = corpus(&manifest, &cfg)?;
            let (model, report) = pipeline::pretrain_content(&c, &cfg)?;
            model.save(&out, cfg.pretrain.seed, &c.hash)?;
            println!("masked val loss {:.4} -> {:.4}", report.untrained_val_loss, report.trained_val_loss);
        }
        Command::TrainSpeaker { manifest, out, evaluator } => {
            let (_, c) = corpus(&manifest, &cfg)?;
            let (model, report, seed) = if evaluator {
                let (m, r) = pipeline::train_evaluator_speaker(&c, &cfg)?;
                (m, r, cfg.evaluator_train.seed)
            } else {
                let (m, r) = pipeline::train_conditioning_speaker(&c, &cfg)?;
                (m, r, cfg.speaker_train.seed)
            };
            model.save(&out, seed, &c.hash)?;
            match report.val_accuracy {
                Some(acc) => println!("val accuracy {acc:.3}"),
                None => println!("final loss {:.4}", report.train_losses.last().copied().unwrap_or(f64::NAN)),
            }
        }
        Command::Train { manifest, frozen, out_dir, variant } => {
            let (_, c) = corpus(&manifest, &cfg)?;
            let encoder = EncoderModel::load(&frozen.encoder)?.0;
            let speaker = SpeakerModel::load(&frozen.speaker)?.0;
            let mut schedule = cfg.train.clone();
            if let Some(v) = variant {
                schedule.variant = v.parse::<Variant>()?;
            }
            fs::create_dir_all(&out_dir)?;
            let data = pipeline::prepare(&c, &encoder, &speaker, &cfg)?;
            let outcome = train(&data, &encoder, cfg.synth.clone(), &schedule, Some(&out_dir), &c.hash)?;
            outcome.model.save(&out_dir.join("synth.ckpt"), schedule.seed, &c.hash)?;
            outcome.log.save(&out_dir.join("train_log.csv"))?;
            println!("{} final loss {:.6}", schedule.variant, outcome.log.final_loss().unwrap_or(f64::NAN));
        }
        Command::Convert { models, mode, source, target_dir, out, manifest, out_dir } => {
            let loaded = Loaded::open(&models)?;
            let m = loaded.models(&cfg);
            let mode = match mode {
                ConvertArg::DurationGuided => ConvertMode::DurationGuided,
                ConvertArg::Predictive => ConvertMode::Predictive,
            };
            match (source, manifest) {
                (Some(src), None) => {
                    let (target_dir, out) = (target_dir.expect("required by clap"), out.expect("required by clap"));
                    let source = load_wav(&src, cfg.stft.sample_rate)?;
                    let targets = wavs_in(&target_dir, cfg.stft.sample_rate)?;
                    save_wav(&out, &convert(&source, &targets, &m, mode)?.wav)?;
                }
                (None, Some(manifest)) => {
                    let (mf, c) = corpus(&manifest, &cfg)?;
                    let plans = plan_conversions(&mf, &cfg.eval.trials)?;
                    pipeline::convert_planned(&c, &plans, &m, mode, &out_dir.expect("required by clap"))?;
                    println!("converted {} utterances", plans.len());
                }
                _ => return Err(Error::Config("convert needs either --source or --manifest".into())),
            }
        }
        Command::Perturb { input, out, seed, transform } => {
            let w = load_wav(&input, cfg.stft.sample_rate)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (y, params) = match transform {
                TransformArg::Random => random_heuristic(&w, &cfg.prepare.perturb, &mut rng)?,
                TransformArg::G1 => g1(&w, &cfg.prepare.perturb, &mut rng)?,
                TransformArg::G2 => g2(&w, &cfg.prepare.perturb, &mut rng)?,
            };
            save_wav(&out, &y)?;
            fs::write(out.with_extension("json"), serde_json::to_string_pretty(&params)?)?;
        }
        Command::Evaluate { manifest, converted_dir, evaluator, reconstructions, out_dir } => {
            let mf = Manifest::load(&manifest)?;
            if !evaluator.exists() {
                return Err(Error::MissingFile(evaluator));
            }
            let ev = SpeakerModel::load(&evaluator)?.0;
            let trials = build_trials(&mf, &converted_dir, &cfg.eval.trials)?;
            let report = evaluate(&mf, &trials, &converted_dir, reconstructions.as_deref(), &ev, &cfg.stft, &cfg.eval)?;
            report.save(&out_dir)?;
            println!("{}", serde_json::to_string(&report.summary)?);
        }
        Command::Reconstruct { models, mode, source, out, manifest, out_dir } => {
            let loaded = Loaded::open(&models)?;
            let m = loaded.models(&cfg);
            let mode = match mode {
                ReconstructArg::Guided => ReconstructMode::Guided,
                ReconstructArg::Predictive => ReconstructMode::Predictive,
            };
            match (source, manifest) {
                (Some(src), None) => {
                    let source = load_wav(&src, cfg.stft.sample_rate)?;
                    save_wav(out.expect("required by clap"), &reconstruct(&source, &m, mode, None, &cfg.prepare.yin)?.wav)?;
                }
                (None, Some(manifest)) => {
                    let (_, c) = corpus(&manifest, &cfg)?;
                    let rows = pipeline::reconstruct_test(&c, &m, mode, &cfg, out_dir.as_deref())?;
                    println!("reconstructed {} utterances", rows.len());
                }
                _ => return Err(Error::Config("reconstruct needs either --source or --manifest".into())),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
