//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 for usage errors, 2 for runtime failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::augment::{
    augment_online, derive_seed, generate_test_sets, standard_conditions, AugmentationPolicy, NoiseInventory,
    CONDITION_MANIFEST,
};
use crate::config::RunConfig;
use crate::data::{load_utterances, parse_protocol, prepare_output_dir, write_atomic, Manifest};
use crate::error::Error;
use crate::eval::{compute_eer, condition_report, label_scores, read_scores, score_dataset, write_scores};
use crate::fixture::{make_fixture, EVAL_NOISE};
use crate::signal::{read_wav, write_wav};
use crate::system::{CmSystem, SYSTEM_FILE};
use crate::train::{ablation_matrix, pretrain_encoder, train, train_frontend, TestSet, BEST_DIR};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Parser)]
#[command(name = "robustcm", version, about = "Noise-robust spoofed speech detection", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration (defaults apply when omitted)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the configured one
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus, noise inventories and protocol
    Fixture {
        #[command(flatten)]
        common: Common,
        /// Utterances per class
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Write online-augmented copies of a manifest with their corruption records
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Noise listing (`id<TAB>category<TAB>path`)
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Build the 19 corrupted evaluation conditions
    Maketests {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Evaluation noise listing; defaults to the config, then to
        /// `noise_eval.tsv` next to the manifest
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Pre-train a Conformer encoder on the synthetic pitch task and export it
    PretrainEncoder {
        #[command(flatten)]
        common: Common,
    },
    /// Mask-only training of the enhancement front-end
    TrainFrontend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Train a countermeasure system
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Continue from `<out>/last` when present
        #[arg(long)]
        resume: bool,
    },
    /// Score a manifest (to a file) or every condition of a test-set tree (to a directory)
    Score {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory, or a training output directory (uses `best/`)
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "test_sets")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        test_sets: Option<PathBuf>,
    },
    /// Equal error rate of a score file against a protocol
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        protocol: Option<PathBuf>,
    },
    /// Per-condition EER table from scored test sets
    Report {
        #[command(flatten)]
        common: Common,
        /// `NAME=DIR` with one `<condition>.txt` score file per condition; repeatable
        #[arg(long = "system", required = true)]
        systems: Vec<String>,
        #[arg(long)]
        protocol: Option<PathBuf>,
    },
    /// Train and evaluate every run listed under `[[ablation]]`
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        test_sets: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Fixture { common, .. }
            | Command::Augment { common, .. }
            | Command::Maketests { common, .. }
            | Command::PretrainEncoder { common }
            | Command::TrainFrontend { common, .. }
            | Command::Train { common, .. }
            | Command::Score { common, .. }
            | Command::Eval { common, .. }
            | Command::Report { common, .. }
            | Command::Ablate { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Fixture { .. } => "fixture",
            Command::Augment { .. } => "augment",
            Command::Maketests { .. } => "maketests",
            Command::PretrainEncoder { .. } => "pretrain-encoder",
            Command::TrainFrontend { .. } => "train-frontend",
            Command::Train { .. } => "train",
            Command::Score { .. } => "score",
            Command::Eval { .. } => "eval",
            Command::Report { .. } => "report",
            Command::Ablate { .. } => "ablate",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn pick(flag: &Option<PathBuf>, configured: &mut Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    if let Some(p) = flag {
        *configured = Some(p.clone());
    }
    configured
        .clone()
        .ok_or_else(|| usage(format!("missing {what} (pass a flag or set it under [paths])")))
}

fn require_out(c: &Common) -> CliResult<PathBuf> {
    c.out.clone().ok_or_else(|| usage("--out is required for this subcommand"))
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `robustcm {} --help` for usage.", cli.command.name());
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(cfg.with_seed(common.seed))
}

fn log_config(cfg: &RunConfig, command: &str, out_dir: Option<&Path>) -> CliResult<()> {
    let text = cfg.to_toml()?;
    info!("{command}: seed {}", cfg.seed);
    info!("resolved configuration:\n{text}");
    if let Some(dir) = out_dir {
        write_atomic(&dir.join(RESOLVED_CONFIG), text.as_bytes())?;
    }
    Ok(())
}

fn empty_inventory() -> NoiseInventory {
    NoiseInventory::new(Vec::new()).expect("empty inventory has no duplicates")
}

pub fn execute(cmd: &Command) -> CliResult<()> {
    let common = cmd.common();
    let mut cfg = load_config(common)?;
    let name = cmd.name();
    match cmd {
        Command::Fixture { n_per_class, .. } => {
            let out = require_out(common)?;
            if let Some(n) = n_per_class {
                cfg.fixture.n_per_class = *n;
            }
            cfg.validate()?;
            log_config(&cfg, name, None)?;
            let s = make_fixture(&cfg.fixture, cfg.seed, &out, common.force)?;
            write_atomic(&out.join(RESOLVED_CONFIG), cfg.to_toml()?.as_bytes())?;
            info!(
                "wrote {} utterances (train {}, dev {}, eval {}) and {} noise clips to {}",
                s.wavs,
                s.train,
                s.dev,
                s.eval,
                s.noise_clips,
                out.display()
            );
        }
        Command::Augment { manifest, noise, .. } => {
            let out = require_out(common)?;
            let mpath = pick(manifest, &mut cfg.paths.train_manifest, "--manifest")?;
            let npath = pick(noise, &mut cfg.paths.train_noise, "--noise")?;
            let policy = cfg.train.augmentation.clone().unwrap_or_default();
            prepare_output_dir(&out, common.force)?;
            log_config(&cfg, name, Some(&out))?;
            augment_manifest(&Manifest::load(&mpath)?, &NoiseInventory::load(&npath)?, &policy, cfg.seed, &out)?;
        }
        Command::Maketests { manifest, noise, .. } => {
            let out = require_out(common)?;
            let mpath = pick(manifest, &mut cfg.paths.eval_manifest, "--manifest")?;
            if noise.is_none() && cfg.paths.eval_noise.is_none() {
                let beside = mpath.parent().unwrap_or(Path::new(".")).join(EVAL_NOISE);
                if beside.exists() {
                    cfg.paths.eval_noise = Some(beside);
                }
            }
            let npath = pick(noise, &mut cfg.paths.eval_noise, "--noise")?;
            let inv = NoiseInventory::load(&npath)?;
            if let Some(tn) = &cfg.paths.train_noise {
                NoiseInventory::load(tn)?.ensure_disjoint(&inv)?;
            }
            log_config(&cfg, name, None)?;
            let s = generate_test_sets(&Manifest::load(&mpath)?, &inv, &out, cfg.seed, common.force)?;
            write_atomic(&out.join(RESOLVED_CONFIG), cfg.to_toml()?.as_bytes())?;
            info!("wrote {} conditions x {} utterances to {}", s.conditions.len(), s.utterances, out.display());
        }
        Command::PretrainEncoder { .. } => {
            let out = require_out(common)?;
            prepare_output_dir(&out, common.force)?;
            log_config(&cfg, name, Some(&out))?;
            let r = pretrain_encoder(&cfg.proxy, &cfg.arch, &out)?;
            info!(
                "exported {} encoder arrays; losses {:?}, accuracy {:.3}",
                r.exported, r.epoch_losses, r.accuracy
            );
        }
        Command::TrainFrontend { train: t, noise, .. } => {
            let out = require_out(common)?;
            let tpath = pick(t, &mut cfg.paths.train_manifest, "--train")?;
            let npath = pick(noise, &mut cfg.paths.train_noise, "--noise")?;
            prepare_output_dir(&out, common.force)?;
            log_config(&cfg, name, Some(&out))?;
            let utts = load_utterances(&Manifest::load(&tpath)?)?;
            let r = train_frontend(&cfg.train, &cfg.arch, &utts, &NoiseInventory::load(&npath)?, &out)?;
            info!("front-end loss {:.6} -> {:?}", r.initial_loss, r.epoch_losses);
        }
        Command::Train {
            train: t, dev, noise, resume, ..
        } => {
            let out = require_out(common)?;
            let tpath = pick(t, &mut cfg.paths.train_manifest, "--train")?;
            let dpath = pick(dev, &mut cfg.paths.dev_manifest, "--dev")?;
            if noise.is_some() {
                cfg.paths.train_noise = noise.clone();
            }
            if !*resume {
                prepare_output_dir(&out, common.force)?;
            }
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            log_config(&cfg, name, Some(&out))?;
            let inv = match &cfg.paths.train_noise {
                Some(p) => NoiseInventory::load(p)?,
                None => empty_inventory(),
            };
            let tr = load_utterances(&Manifest::load(&tpath)?)?;
            let dv = load_utterances(&Manifest::load(&dpath)?)?;
            let trainer = train(&cfg.train, &cfg.arch, &tr, &dv, &inv, &out, *resume)?;
            if let Some(r) = &trainer.backend_load {
                info!("pretrained backend: {}", r.summary());
            }
            info!(
                "best dev loss {:?} at epoch {:?}; checkpoint in {}",
                trainer.state.best_dev,
                trainer.state.best_epoch,
                out.join(BEST_DIR).display()
            );
        }
        Command::Score {
            checkpoint,
            manifest,
            test_sets,
            ..
        } => {
            let out = require_out(common)?;
            let ckpt = if checkpoint.join(SYSTEM_FILE).exists() {
                checkpoint.clone()
            } else {
                checkpoint.join(BEST_DIR)
            };
            let system = CmSystem::load(&ckpt)?;
            if let Some(m) = manifest {
                cfg.paths.eval_manifest = Some(m.clone());
                log_config(&cfg, name, None)?;
                score_into(&system, &Manifest::load(m)?, &out)?;
            } else {
                let root = pick(test_sets, &mut cfg.paths.test_sets, "--manifest or --test-sets")?;
                prepare_output_dir(&out, common.force)?;
                log_config(&cfg, name, Some(&out))?;
                for cond in standard_conditions() {
                    let mpath = root.join(&cond.name).join(CONDITION_MANIFEST);
                    if !mpath.exists() {
                        warn!("no test set for condition `{}` under {}", cond.name, root.display());
                        continue;
                    }
                    score_into(&system, &Manifest::load(&mpath)?, &out.join(format!("{}.txt", cond.name)))?;
                }
            }
        }
        Command::Eval { scores, protocol, .. } => {
            let ppath = pick(protocol, &mut cfg.paths.protocol, "--protocol")?;
            log_config(&cfg, name, None)?;
            let set = label_scores(&read_scores(scores)?, &parse_protocol(&ppath)?)?;
            let e = compute_eer(&set)?;
            println!("EER%: {:.4}", e.eer * 100.0);
            if let Some(out) = &common.out {
                let text = format!("eer_percent\t{:.6}\nthreshold\t{:.6}\ntrials\t{}\n", e.eer * 100.0, e.threshold, set.len());
                write_atomic(out, text.as_bytes())?;
            }
        }
        Command::Report { systems, protocol, .. } => {
            let out = require_out(common)?;
            let ppath = pick(protocol, &mut cfg.paths.protocol, "--protocol")?;
            let mut parsed = Vec::with_capacity(systems.len());
            for s in systems {
                let (n, d) = s
                    .split_once('=')
                    .ok_or_else(|| usage(format!("--system expects NAME=DIR, got `{s}`")))?;
                parsed.push((n.to_string(), PathBuf::from(d)));
            }
            prepare_output_dir(&out, common.force)?;
            log_config(&cfg, name, Some(&out))?;
            let proto = parse_protocol(&ppath)?;
            let mut inputs = Vec::with_capacity(parsed.len());
            for (n, dir) in parsed {
                let mut sets = BTreeMap::new();
                for cond in standard_conditions() {
                    let path = dir.join(format!("{}.txt", cond.name));
                    if path.exists() {
                        sets.insert(cond.name.clone(), label_scores(&read_scores(&path)?, &proto)?);
                    }
                }
                inputs.push((n, sets));
            }
            let report = condition_report(&inputs)?;
            for w in &report.warnings {
                warn!("{w}");
            }
            let text = report.to_text();
            write_atomic(&out.join("report.txt"), text.as_bytes())?;
            write_atomic(&out.join("report.tsv"), report.to_tsv().as_bytes())?;
            print!("{text}");
        }
        Command::Ablate {
            train: t,
            dev,
            noise,
            test_sets,
            ..
        } => {
            let out = require_out(common)?;
            if cfg.ablation.is_empty() {
                return Err(usage("the config lists no [[ablation]] runs"));
            }
            let tpath = pick(t, &mut cfg.paths.train_manifest, "--train")?;
            let dpath = pick(dev, &mut cfg.paths.dev_manifest, "--dev")?;
            let root = pick(test_sets, &mut cfg.paths.test_sets, "--test-sets")?;
            if noise.is_some() {
                cfg.paths.train_noise = noise.clone();
            }
            prepare_output_dir(&out, common.force)?;
            log_config(&cfg, name, Some(&out))?;
            let inv = match &cfg.paths.train_noise {
                Some(p) => NoiseInventory::load(p)?,
                None => empty_inventory(),
            };
            let tr = load_utterances(&Manifest::load(&tpath)?)?;
            let dv = load_utterances(&Manifest::load(&dpath)?)?;
            let mut tests = Vec::new();
            for cond in standard_conditions() {
                let mpath = root.join(&cond.name).join(CONDITION_MANIFEST);
                if mpath.exists() {
                    tests.push(TestSet {
                        condition: cond.name.clone(),
                        utterances: load_utterances(&Manifest::load(&mpath)?)?,
                    });
                }
            }
            let table = ablation_matrix(&cfg.ablation, &cfg.arch, &tr, &dv, &inv, &tests, &out)?;
            write_atomic(&out.join("ablation.tsv"), table.to_tsv().as_bytes())?;
            let report = table.to_report()?;
            for w in &report.warnings {
                warn!("{w}");
            }
            write_atomic(&out.join("report.txt"), report.to_text().as_bytes())?;
            write_atomic(&out.join("report.tsv"), report.to_tsv().as_bytes())?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn score_into(system: &CmSystem, manifest: &Manifest, out: &Path) -> CliResult<()> {
    let run = score_dataset(system, manifest);
    for (utt, msg) in &run.errors {
        warn!("{utt}: {msg}");
    }
    info!("{}: {}", out.display(), run.summary());
    write_scores(out, &run.scores)?;
    Ok(())
}

fn augment_manifest(
    manifest: &Manifest,
    inventory: &NoiseInventory,
    policy: &AugmentationPolicy,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let mut lines = String::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let clean = read_wav(manifest.resolve(e))?;
        let (noisy, record) = augment_online(&e.utt_id, &clean, policy, inventory, derive_seed(seed, 0xA6, i as u64))?;
        let file = format!("{}.wav", e.utt_id);
        write_wav(out.join(&file), &noisy)?;
        writeln!(lines, "{}\t{}\t{}\t{}", e.utt_id, file, e.label, record.to_json()).unwrap();
    }
    write_atomic(&out.join(CONDITION_MANIFEST), lines.as_bytes())?;
    info!("augmented {} utterances into {}", manifest.len(), out.display());
    Ok(())
}
