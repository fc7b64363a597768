//! The subcommands. Each takes resolved arguments plus a sink for its
//! console output, so tests can drive them without a subprocess.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scratchnet::data::{load_idx, normalize_pixels, CharVocab, PixelRange};
use scratchnet::gan::{reference_discriminator, reference_generator, reference_optimizer, GanHistory, GanTrainer};
use scratchnet::model::Evaluation;
use scratchnet::optim::{gd_scalar, GDTrace};
use scratchnet::perceptron::{Gate, Perceptron};
use scratchnet::recurrent::generate_greedy;
use scratchnet::{FitConfig, History, Rng, SequentialModel, Tensor};

use crate::manifest::{Outputs, RunManifest};
use crate::pgm::{encode_pgm, sample_grid};
use crate::svg::{LineChart, Series};
use crate::tasks::{prepare, Task, TrainConfig, METRICS};
use crate::CliError;

pub const MODEL_FILE: &str = "model.gbk";
pub const VOCAB_SUFFIX: &str = "vocab.json";

/// `f(x) = x² − 2x − 3`, the worked example of the descent scenarios.
pub fn quadratic(x: f64) -> f64 {
    x * x - 2.0 * x - 3.0
}

pub fn quadratic_prime(x: f64) -> f64 {
    2.0 * x - 2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GdArgs {
    pub alpha: f64,
    pub x0: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub out: Option<PathBuf>,
}

impl Default for GdArgs {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            x0: -4.0,
            tol: 1e-5,
            max_iter: 1000,
            out: None,
        }
    }
}

pub fn gd(args: &GdArgs, console: &mut dyn Write) -> Result<GDTrace, CliError> {
    if !(args.alpha > 0.0 && args.alpha.is_finite()) || !(args.tol > 0.0) {
        return Err(CliError::Usage(format!(
            "--alpha and --tol must be positive, got {} and {}",
            args.alpha, args.tol
        )));
    }
    let trace = gd_scalar(quadratic, quadratic_prime, args.x0, args.alpha, args.tol, args.max_iter)?;
    if trace.converged {
        writeln!(console, "Solution found:\n y = {:.4}\n x = {:.4}", trace.final_y(), trace.final_x())?;
    } else {
        writeln!(console, "Gradient descent does not converge.")?;
    }
    if let Some(dir) = &args.out {
        let mut out = Outputs::create(dir)?;
        out.write("gd_trace.csv", trace.to_csv())?;
        let lo = trace.xs.iter().copied().fold(f64::INFINITY, f64::min).min(1.0) - 1.0;
        let hi = trace.xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1.0) + 1.0;
        let curve = (0..=200)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / 200.0;
                (x, quadratic(x))
            })
            .collect();
        let path = trace.xs.iter().copied().zip(trace.ys.iter().copied()).collect();
        let chart = LineChart::new(&format!("gradient descent, alpha = {}", args.alpha), "x", "f(x)")
            .with(Series::new("f(x)", curve))
            .with(Series::new("iterates", path));
        out.write("gd_trace.svg", chart.render())?;
        let mut manifest = RunManifest::new("gd", None, args)?;
        manifest.metrics.insert("iterations".into(), trace.iterations as f64);
        manifest.metrics.insert("final_x".into(), trace.final_x());
        manifest.metrics.insert("final_f".into(), trace.final_y());
        manifest.metrics.insert("converged".into(), f64::from(u8::from(trace.converged)));
        out.finish(manifest)?;
    }
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GateArg {
    Or,
    And,
    Xor,
}

impl From<GateArg> for Gate {
    fn from(g: GateArg) -> Self {
        match g {
            GateArg::Or => Gate::Or,
            GateArg::And => Gate::And,
            GateArg::Xor => Gate::Xor,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerceptronArgs {
    pub gate: GateArg,
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// Trains on the gate table and prints one line per row. The returned
/// exit status is 0 when every row is right, and always 0 for XOR, which a
/// single perceptron cannot represent.
pub fn perceptron(args: &PerceptronArgs, console: &mut dyn Write) -> Result<i32, CliError> {
    let (x, y) = Gate::from(args.gate).dataset();
    writeln!(console, "[INFO] training perceptron...")?;
    let mut p = Perceptron::new(2, args.alpha, &mut Rng::new(args.seed));
    p.fit(&x, &y, args.epochs)?;
    writeln!(console, "[INFO] testing perceptron...")?;
    let preds = p.predict(&x)?;
    let mut csv = String::from("x1,x2,target,pred\n");
    let mut correct = 0;
    for (i, (&t, &pred)) in y.iter().zip(&preds).enumerate() {
        let row = x.row(i);
        writeln!(
            console,
            "[INFO] data=[{} {}], ground-truth={t}, pred={pred}",
            row[0], row[1]
        )?;
        csv.push_str(&format!("{},{},{t},{pred}\n", row[0], row[1]));
        correct += usize::from(t == pred);
    }
    let mismatches = y.len() - correct;
    writeln!(console, "[INFO] accuracy={correct}/{} ({mismatches} mismatched)", y.len())?;
    if let Some(dir) = &args.out {
        let mut out = Outputs::create(dir)?;
        out.write("predictions.csv", csv)?;
        let mut manifest = RunManifest::new("perceptron", Some(args.seed), args)?;
        manifest.metrics.insert("accuracy".into(), correct as f64 / y.len() as f64);
        out.finish(manifest)?;
    }
    Ok(if mismatches == 0 || args.gate == GateArg::Xor { 0 } else { 1 })
}

pub struct TrainOutcome {
    pub history: History,
    pub evaluation: Evaluation,
    pub model: SequentialModel,
}

fn history_charts(history: &History, task: Task) -> Vec<(String, String)> {
    let mut charts = Vec::new();
    for key in ["loss", "accuracy"] {
        let mut chart = LineChart::new(&format!("{} {key}", task.name()), "epoch", key);
        chart.series.push(Series::indexed("train", &history.series(key)));
        let val = history.series(&format!("val_{key}"));
        if !val.is_empty() {
            chart.series.push(Series::indexed("validation", &val));
        }
        charts.push((format!("{key}.svg"), chart.render()));
    }
    charts
}

fn eval_line(e: &Evaluation) -> String {
    let mut line = format!("evaluate: loss={}", e.loss);
    for (m, v) in &e.metrics {
        line.push_str(&format!(" {}={v}", m.name()));
    }
    line
}

/// Evaluation split of a prepared task: the test set when there is one,
/// the training set otherwise.
fn final_evaluation(model: &SequentialModel, prepared: &crate::tasks::Prepared) -> Result<Evaluation, CliError> {
    let (x, y) = prepared.test.as_ref().unwrap_or(&prepared.train);
    Ok(model.evaluate(x, y)?)
}

pub fn vocab_path(model: &Path) -> PathBuf {
    model.with_extension(VOCAB_SUFFIX)
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    chars: String,
}

pub fn train(config: &TrainConfig, out_dir: &Path, console: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let prepared = prepare(config)?;
    let mut model = SequentialModel::new(&prepared.specs)?;
    model.compile(
        &prepared.input_shape,
        prepared.loss,
        config.optimizer,
        &METRICS,
        &mut Rng::new(config.seed),
    )?;
    write!(console, "{}", model.summary())?;
    let fit = FitConfig {
        batch_size: config.batch_size,
        epochs: config.epochs,
        validation: prepared.validation.clone(),
        shuffle: true,
        seed: config.seed,
    };
    let (x, y) = &prepared.train;
    let history = model.fit(x, y, &fit, &mut [])?;
    for e in &history.epochs {
        let mut line = format!("epoch {}/{}: loss={:.4}", e.epoch, config.epochs, e.loss);
        for (name, v) in history.metric_names.iter().zip(&e.metrics) {
            line.push_str(&format!(" {name}={v:.4}"));
        }
        if let Some(vl) = e.val_loss {
            line.push_str(&format!(" val_loss={vl:.4}"));
            for (name, v) in history.metric_names.iter().zip(&e.val_metrics) {
                line.push_str(&format!(" val_{name}={v:.4}"));
            }
        }
        writeln!(console, "{line}")?;
    }

    let mut out = Outputs::create(out_dir)?;
    out.write("history.csv", history.to_csv())?;
    for (name, svg) in history_charts(&history, config.task) {
        out.write(&name, svg)?;
    }
    model.save(out.path(MODEL_FILE))?;
    out.record(MODEL_FILE);
    if let Some(vocab) = &prepared.vocab {
        let name = vocab_path(Path::new(MODEL_FILE));
        let file = VocabFile {
            chars: vocab.chars().iter().collect(),
        };
        out.write(&name.to_string_lossy(), serde_json::to_string(&file)?)?;
    }
    let evaluation = final_evaluation(&model, &prepared)?;
    writeln!(console, "{}", eval_line(&evaluation))?;
    let mut manifest = RunManifest::new("train", Some(config.seed), config)?;
    manifest.metrics.insert("loss".into(), evaluation.loss);
    for (m, v) in &evaluation.metrics {
        manifest.metrics.insert(m.name().into(), *v);
    }
    out.finish(manifest)?;
    Ok(TrainOutcome {
        history,
        evaluation,
        model,
    })
}

/// Re-evaluates a `train` run from its manifest and saved model.
pub fn evaluate(run: &Path, model_path: Option<&Path>, console: &mut dyn Write) -> Result<Evaluation, CliError> {
    let manifest = RunManifest::read(run)?;
    if manifest.command != "train" {
        return Err(CliError::Usage(format!("{} records a {} run, not train", run.display(), manifest.command)));
    }
    let config: TrainConfig = serde_json::from_value(manifest.config)?;
    let dir = run.parent().unwrap_or(Path::new("."));
    let path = model_path.map_or_else(|| dir.join(MODEL_FILE), Path::to_path_buf);
    let model = SequentialModel::load(&path)?;
    let prepared = prepare(&config)?;
    let evaluation = final_evaluation(&model, &prepared)?;
    writeln!(console, "{}", eval_line(&evaluation))?;
    Ok(evaluation)
}

#[derive(Clone, Debug)]
pub struct GenerateArgs {
    pub model: PathBuf,
    pub length: usize,
    pub seed_char: Option<char>,
    pub window: usize,
    pub seed: u64,
}

/// Greedy decoding from a saved character model and its vocabulary
/// sidecar. Without `seed_char` the first character is drawn from `seed`.
pub fn generate(args: &GenerateArgs, console: &mut dyn Write) -> Result<String, CliError> {
    let model = SequentialModel::load(&args.model)?;
    let sidecar = vocab_path(&args.model);
    if !sidecar.is_file() {
        return Err(CliError::Usage(format!("vocabulary sidecar {} not found", sidecar.display())));
    }
    let file: VocabFile = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
    let vocab = CharVocab::from_chars(file.chars.chars().collect());
    let out_dim = model.output_shape().last().copied().unwrap_or(0);
    if model.input_shape().last() != Some(&vocab.len()) || out_dim != vocab.len() {
        return Err(CliError::Usage(format!(
            "vocabulary has {} characters but the model maps {:?} to {:?}",
            vocab.len(),
            model.input_shape(),
            model.output_shape()
        )));
    }
    let seed_id = match args.seed_char {
        Some(c) => vocab
            .index_of(c)
            .ok_or_else(|| CliError::Usage(format!("seed character {c:?} is not in the vocabulary")))?,
        None => Rng::new(args.seed).below(vocab.len()),
    };
    let ids = generate_greedy(&model, seed_id, args.length, args.window)?;
    let text = vocab.decode(&ids)?;
    writeln!(console, "{text}")?;
    Ok(text)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GanArgs {
    pub images: PathBuf,
    pub labels: Option<PathBuf>,
    pub limit: Option<usize>,
    pub epochs: usize,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub sample_every: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl GanArgs {
    /// The reference run: 200 epochs, batch 128, latent size 10 and a
    /// sample grid every 20 epochs.
    pub fn reference(images: PathBuf, out: PathBuf) -> Self {
        Self {
            images,
            labels: None,
            limit: None,
            epochs: 200,
            latent_dim: 10,
            batch_size: 128,
            sample_every: 20,
            seed: 42,
            out,
        }
    }
}

/// Loads IDX images as `[n, h*w]` rows in [-1, 1].
pub fn load_gan_images(images: &Path, labels: Option<&Path>, limit: Option<usize>) -> Result<(Tensor, usize, usize), CliError> {
    let x = match labels {
        Some(l) => load_idx(images, l)?.0,
        None => scratchnet::data::parse_idx_images(&std::fs::read(images)?)?,
    };
    let &[n, h, w] = x.shape() else {
        return Err(CliError::Usage(format!("unexpected image tensor {:?}", x.shape())));
    };
    let n = limit.map_or(n, |l| l.min(n));
    let x = normalize_pixels(&x, PixelRange::Symmetric).reshape(&[x.shape()[0], h * w])?;
    Ok((x.slice_rows(0, n)?, h, w))
}

pub fn build_gan(data_dim: usize, latent_dim: usize, batch_size: usize, rng: &mut Rng) -> Result<GanTrainer, CliError> {
    let mut g = SequentialModel::new(&reference_generator(data_dim))?;
    g.build(&[latent_dim], rng)?;
    let mut d = SequentialModel::new(&reference_discriminator())?;
    d.build(&[data_dim], rng)?;
    Ok(GanTrainer::new(g, d, reference_optimizer(), reference_optimizer(), batch_size)?)
}

pub fn gan(args: &GanArgs, console: &mut dyn Write) -> Result<GanHistory, CliError> {
    if args.epochs == 0 || args.latent_dim == 0 || args.batch_size == 0 {
        return Err(CliError::Usage("--epochs, --latent-dim and --batch-size must be positive".into()));
    }
    let (real, h, w) = load_gan_images(&args.images, args.labels.as_deref(), args.limit)?;
    let mut rng = Rng::new(args.seed);
    let mut trainer = build_gan(h * w, args.latent_dim, args.batch_size, &mut rng)?;
    let mut out = Outputs::create(&args.out)?;
    let mut grids = Vec::new();
    let history = trainer.train(&real, args.epochs, &mut rng, args.sample_every.max(1), 100, |epoch, samples| {
        let (gw, gh, px) = sample_grid(samples, 10, 10, h, w)?;
        grids.push((format!("gan_generated_image_epoch_{epoch}.pgm"), encode_pgm(gw, gh, &px)?));
        Ok(())
    })?;
    let steps_per_epoch = history.len() / args.epochs;
    for e in 1..=args.epochs {
        let span = (e - 1) * steps_per_epoch..e * steps_per_epoch;
        let mean = |v: &[f64]| v[span.clone()].iter().sum::<f64>() / steps_per_epoch.max(1) as f64;
        writeln!(
            console,
            "epoch {e}/{}: d_loss={:.4} g_loss={:.4}",
            args.epochs,
            mean(&history.d_losses),
            mean(&history.g_losses)
        )?;
    }
    out.write("gan_loss.csv", history.to_csv())?;
    let chart = LineChart::new("GAN losses", "step", "loss")
        .with(Series::indexed("discriminator", &history.d_losses))
        .with(Series::indexed("generator", &history.g_losses));
    out.write("gan_loss.svg", chart.render())?;
    for (name, bytes) in &grids {
        out.write(name, bytes)?;
    }
    trainer.generator.save(out.path("generator.gbk"))?;
    out.record("generator.gbk");
    trainer.discriminator.save(out.path("discriminator.gbk"))?;
    out.record("discriminator.gbk");
    let mut manifest = RunManifest::new("gan", Some(args.seed), args)?;
    manifest.metrics.insert("steps".into(), history.len() as f64);
    if let (Some(d), Some(g)) = (history.d_losses.last(), history.g_losses.last()) {
        manifest.metrics.insert("final_d_loss".into(), *d);
        manifest.metrics.insert("final_g_loss".into(), *g);
    }
    out.finish(manifest)?;
    Ok(history)
}
