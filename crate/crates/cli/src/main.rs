use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use mrirecon::data::{
    export_image, generate_dataset, ingest_image, make_sample, save_tensor, Dataset, DatasetSpec,
};
use mrirecon::kspace::{make_mask_with, MaskParams, MaskPattern};
use mrirecon::train::{evaluate, reconstruct, train, Checkpoint, TrainConfig};
use mrirecon::Error;

#[derive(Parser)]
#[command(name = "mrirecon", version, about = "Undersampled MRI reconstruction with an attention-selection GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    GenData {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.125)]
        rate: f64,
        #[arg(long, default_value_t = 0.04)]
        center_fraction: f64,
        /// `points` or `lines`.
        #[arg(long, default_value = "points")]
        pattern: MaskPattern,
        /// Give each image a smooth synthetic phase.
        #[arg(long)]
        smooth_phase: bool,
    },
    /// Write a sampling mask as a tensor file.
    Mask {
        #[arg(long)]
        size: usize,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0.04)]
        center_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "points")]
        pattern: MaskPattern,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Reconstruct one image with a trained checkpoint.
    ///
    /// A two-channel tensor is taken as the zero-filled input; a real image
    /// (PGM or one-channel tensor) is treated as fully sampled and undersampled
    /// with the checkpoint's mask first.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset against the zero-filled baseline.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn is_complex_input(path: &Path) -> anyhow::Result<bool> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"P5") {
        return Ok(false);
    }
    let t = mrirecon::data::io::decode_tensor(&bytes)?;
    Ok(matches!(t.shape(), [_, 2, _, _]))
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::GenData {
            count,
            size,
            seed,
            out,
            rate,
            center_fraction,
            pattern,
            smooth_phase,
        } => {
            let spec = DatasetSpec {
                count,
                size,
                seed,
                rate,
                center_fraction,
                pattern,
                smooth_phase,
                ..DatasetSpec::default()
            };
            generate_dataset(&spec)?.save(&out)?;
            println!("wrote {count} samples to {}", out.display());
        }
        Command::Mask {
            size,
            rate,
            center_fraction,
            seed,
            pattern,
            out,
        } => {
            let mask = make_mask_with(&MaskParams {
                pattern,
                ..MaskParams::new(size, rate, center_fraction, seed)
            })?;
            save_tensor(&out, &mask.to_tensor())?;
            println!("wrote {}×{} mask with {} samples to {}", size, size, mask.count(), out.display());
        }
        Command::Train { config, out, resume } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Io { path: config.clone(), source: e })?;
            let cfg = TrainConfig::parse(&text)?;
            let state = train(cfg, &out, resume.as_deref())?;
            if let Some(last) = state.history.last() {
                println!("{}", last.line());
            }
            println!("checkpoint: {}", out.join("final.ckpt").display());
        }
        Command::Reconstruct { ckpt, input, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let image = ingest_image(&input)?;
            let z = if is_complex_input(&input)? {
                image
            } else {
                make_sample(image, &ck.mask)?.z
            };
            let g = reconstruct(&ck, &z)?;
            let mag = |img: &mrirecon::kspace::ComplexImage| img.magnitude();
            save_tensor(out.join("recon.ktsr"), g.tensor())?;
            export_image(&mag(&g), out.join("recon.pgm"))?;
            export_image(&mag(&z), out.join("zero_filled.pgm"))?;
            println!("wrote {}", out.display());
        }
        Command::Evaluate { ckpt, data, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let data = Dataset::load(&data)?;
            if data.mask.values() != ck.mask.values() {
                eprintln!("note: dataset mask differs from the training mask");
            }
            let report = evaluate(&ck, &data, Some(&out))?;
            print!("{}", report.text());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NonFinite { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

