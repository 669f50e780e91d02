use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use resdens::data::{Ordering, Rotations, Split, SplitSizes};
use resdens::harness::{
    cmd_evaluate, cmd_gradcheck, cmd_prepare, cmd_synth, cmd_train, ClassMode, CommandFile,
};
use resdens::{Error, Result};

#[derive(Parser)]
#[command(name = "resdens", version, about = "Residual CNN breast-density classifier")]
struct Cli {
    /// Run file with [prepare], [synth], [train], [evaluate] and [gradcheck] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Network preset name (36L, 48L, 70L, tiny) or preset file.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    max_iterations: Option<u64>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// four | two
    #[arg(long, global = true)]
    class_mode: Option<ClassMode>,
    /// paper | leakfree
    #[arg(long, global = true)]
    ordering: Option<Ordering>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split, rebalance, augment and resize a dataset.
    Prepare {
        /// Manifest CSV, dataset directory, or per-class image directories.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Exact train,val,test counts, e.g. 349,77,95.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        /// Train,val,test fractions, e.g. 0.7,0.15,0.15.
        #[arg(long, value_delimiter = ',', conflicts_with = "counts")]
        ratios: Option<Vec<f64>>,
        /// Output image side length.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        no_rebalance: bool,
        #[arg(long)]
        no_expand: bool,
        /// Expansion angles: random | quarter
        #[arg(long)]
        rotations: Option<Rotations>,
    },
    /// Train a network and log curves and checkpoints.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        log_interval: Option<u64>,
        #[arg(long)]
        max_epochs: Option<u64>,
        /// Write 0 in the wall_ms column.
        #[arg(long)]
        no_wall_time: bool,
    },
    /// Evaluate a checkpoint on one split of a manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// train | val | test
        #[arg(long)]
        split: Option<Split>,
    },
    /// Finite-difference check of every gradient.
    Gradcheck,
    /// Generate a synthetic density dataset.
    Synth {
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(path) => CommandFile::load(path)?,
        None => CommandFile::default(),
    };
    match cli.command {
        Command::Prepare {
            input,
            counts,
            ratios,
            size,
            no_rebalance,
            no_expand,
            rotations,
        } => {
            let mut cfg = file.prepare;
            set(&mut cfg.input, input.or(cli.manifest));
            set(&mut cfg.out, cli.out);
            set(&mut cfg.seed, cli.seed);
            set(&mut cfg.ordering, cli.ordering);
            if let Some(c) = counts {
                cfg.sizes = SplitSizes::Counts(three(c, "--counts")?);
            }
            if let Some(r) = ratios {
                cfg.sizes = SplitSizes::Ratios(three(r, "--ratios")?);
            }
            if let Some(preset) = &cli.preset {
                cfg.image_size = resdens::network::NetworkConfig::resolve(preset)?.input_size;
            }
            if let Some(s) = size {
                cfg.image_size = [s, s];
            }
            cfg.rebalance &= !no_rebalance;
            cfg.expand &= !no_expand;
            set(&mut cfg.rotations, rotations);
            let manifest = cmd_prepare(&cfg)?;
            print!("{}", manifest.count_table());
            println!("wrote {}", cfg.out.join("manifest.csv").display());
        }
        Command::Train {
            resume,
            log_interval,
            max_epochs,
            no_wall_time,
        } => {
            let mut cfg = file.train;
            set(&mut cfg.preset, cli.preset);
            set(&mut cfg.seed, cli.seed);
            set(&mut cfg.batch_size, cli.batch_size);
            set(&mut cfg.learning_rate, cli.lr);
            set(&mut cfg.max_iterations, cli.max_iterations);
            set(&mut cfg.manifest, cli.manifest);
            set(&mut cfg.out, cli.out);
            set(&mut cfg.class_mode, cli.class_mode);
            set(&mut cfg.log_interval, log_interval);
            if max_epochs.is_some() {
                cfg.max_epochs = max_epochs;
            }
            cfg.record_wall_time &= !no_wall_time;
            let summary = cmd_train(cfg.clone(), resume.as_deref())?;
            println!(
                "{} iterations ({} epochs), train loss {:.6}, train accuracy {:.4}",
                summary.iterations, summary.epochs, summary.final_train_loss, summary.final_train_acc
            );
            println!("metrics: {}", cfg.metrics_path().display());
            println!("checkpoint: {}", summary.final_checkpoint.display());
        }
        Command::Evaluate { checkpoint, split } => {
            let mut cfg = file.evaluate;
            set(&mut cfg.checkpoint, checkpoint);
            set(&mut cfg.manifest, cli.manifest);
            set(&mut cfg.split, split);
            set(&mut cfg.class_mode, cli.class_mode);
            set(&mut cfg.batch_size, cli.batch_size);
            if cli.out.is_some() {
                cfg.out = cli.out;
            }
            let report = cmd_evaluate(&cfg)?;
            print!("{}", report.table());
            println!();
            print!("{}", report.confusion_text());
        }
        Command::Gradcheck => {
            let mut cfg = file.gradcheck;
            set(&mut cfg.preset, cli.preset);
            set(&mut cfg.seed, cli.seed);
            let report = cmd_gradcheck(&cfg)?;
            print!("{}", report.render());
            if !report.passed() {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Synth { n_per_class, size } => {
            let mut cfg = file.synth;
            set(&mut cfg.n_per_class, n_per_class);
            set(&mut cfg.size, size);
            set(&mut cfg.seed, cli.seed);
            set(&mut cfg.out, cli.out);
            let manifest = cmd_synth(&cfg)?;
            println!(
                "wrote {} images and {}",
                manifest.records.len(),
                cfg.out.join("manifest.csv").display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn three<T: Copy>(v: Vec<T>, flag: &str) -> Result<[T; 3]> {
    <[T; 3]>::try_from(v).map_err(|v| Error::Usage(format!("{flag} takes train,val,test; got {} values", v.len())))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
