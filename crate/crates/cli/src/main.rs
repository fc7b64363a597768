use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scratchnet_cli::commands::{self, GanArgs, GateArg, GdArgs, GenerateArgs, PerceptronArgs};
use scratchnet_cli::tasks::{optimizer_from_name, Task, TrainConfig};
use scratchnet_cli::CliError;

#[derive(Parser)]
#[command(name = "scratchnet", version, about = "Train and inspect scratchnet models from the command line")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed-step gradient descent on f(x) = x^2 - 2x - 3.
    Gd {
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
        x0: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a perceptron on a two-input logic gate.
    Perceptron {
        #[arg(long, value_enum)]
        gate: GateArg,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one of the task architectures; unset flags take the task defaults.
    Train(TrainArgs),
    /// Re-evaluate a train run from its run.json and saved model.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Greedy text generation from a saved character model.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 200)]
        length: usize,
        #[arg(long)]
        seed_char: Option<char>,
        #[arg(long, default_value_t = 100)]
        window: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the reference GAN on IDX images.
    Gan {
        /// IDX image file, optionally followed by its label file.
        #[arg(long, num_args = 1..=2, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 10)]
        latent_dim: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 20)]
        sample_every: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: Task,
    /// Input files: a CSV (mlp-tabular), IDX train images and labels plus
    /// optional test images and labels (cnn-image), a text file (charrnn,
    /// charlstm) or label<TAB>text lines (sentiment).
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Use a seeded synthetic table instead of a CSV (mlp-tabular only).
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    validation_split: Option<f64>,
    /// Keep only the first N training rows (characters for text tasks).
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    seq_length: Option<usize>,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    maxlen: Option<usize>,
    #[arg(long)]
    num_words: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut c = TrainConfig::preset(self.task);
        c.data = self.data.clone();
        c.synthetic = self.synthetic;
        c.seed = self.seed;
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        match (&self.optimizer, self.lr) {
            (Some(name), lr) => c.optimizer = optimizer_from_name(name, lr)?,
            (None, Some(lr)) => c.optimizer = optimizer_from_name(c.optimizer.name(), Some(lr))?,
            (None, None) => {}
        }
        c.validation_split = self.validation_split.unwrap_or(c.validation_split);
        c.limit = self.limit;
        c.seq_length = self.seq_length.unwrap_or(c.seq_length);
        c.units = self.units.unwrap_or(c.units);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        c.maxlen = self.maxlen.unwrap_or(c.maxlen);
        c.num_words = self.num_words.unwrap_or(c.num_words);
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Gd {
            alpha,
            x0,
            tol,
            max_iter,
            out,
        } => {
            commands::gd(&GdArgs { alpha, x0, tol, max_iter, out }, &mut stdout)?;
            Ok(0)
        }
        Command::Perceptron {
            gate,
            alpha,
            epochs,
            seed,
            out,
        } => commands::perceptron(&PerceptronArgs { gate, alpha, epochs, seed, out }, &mut stdout),
        Command::Train(args) => {
            commands::train(&args.resolve()?, &args.out, &mut stdout)?;
            Ok(0)
        }
        Command::Evaluate { run, model } => {
            commands::evaluate(&run, model.as_deref(), &mut stdout)?;
            Ok(0)
        }
        Command::Generate {
            model,
            length,
            seed_char,
            window,
            seed,
        } => {
            let args = GenerateArgs {
                model,
                length,
                seed_char,
                window,
                seed,
            };
            commands::generate(&args, &mut stdout)?;
            Ok(0)
        }
        Command::Gan {
            data,
            limit,
            epochs,
            latent_dim,
            batch_size,
            sample_every,
            seed,
            out,
        } => {
            let args = GanArgs {
                images: data[0].clone(),
                labels: data.get(1).cloned(),
                limit,
                epochs,
                latent_dim,
                batch_size,
                sample_every,
                seed,
                out,
            };
            commands::gan(&args, &mut stdout)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
