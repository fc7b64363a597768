//! Task architectures and the data preparation behind `train`/`evaluate`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use scratchnet::conv::{Padding, PoolKind};
use scratchnet::data::{
    build_char_dataset, load_csv, load_idx, one_hot, pad_sequences, preprocess_text, CharVocab,
    MinMaxScaler, Side, Tokenizer,
};
use scratchnet::model::train_val_test_split;
use scratchnet::{Activation, Error, LayerSpec, Loss, Metric, OptimizerKind, Result, Rng, Tensor, Validation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    MlpTabular,
    CnnImage,
    Charrnn,
    Charlstm,
    Sentiment,
}

/// Default hyperparameters of a task, used wherever a flag is absent.
#[derive(Clone, Copy, Debug)]
pub struct TaskDefaults {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub validation_split: f64,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::MlpTabular => "mlp-tabular",
            Task::CnnImage => "cnn-image",
            Task::Charrnn => "charrnn",
            Task::Charlstm => "charlstm",
            Task::Sentiment => "sentiment",
        }
    }

    pub fn defaults(self) -> TaskDefaults {
        let (epochs, batch_size, optimizer, validation_split) = match self {
            Task::MlpTabular => (100, 32, OptimizerKind::sgd(0.01), 0.0),
            Task::CnnImage => (20, 32, OptimizerKind::adam(1e-3), 0.2),
            Task::Charrnn | Task::Charlstm => (300, 100, OptimizerKind::rmsprop(1e-3), 0.0),
            Task::Sentiment => (5, 32, OptimizerKind::adam(1e-3), 0.0),
        };
        TaskDefaults {
            epochs,
            batch_size,
            optimizer,
            validation_split,
        }
    }

    pub fn loss(self) -> Loss {
        match self {
            Task::MlpTabular | Task::Sentiment => Loss::BinaryCrossentropy,
            _ => Loss::CategoricalCrossentropy,
        }
    }
}

/// Optimizer from a name and an optional learning rate (Keras defaults
/// otherwise).
pub fn optimizer_from_name(name: &str, lr: Option<f64>) -> Result<OptimizerKind> {
    Ok(match name {
        "sgd" => OptimizerKind::sgd(lr.unwrap_or(0.01)),
        "momentum" => OptimizerKind::momentum(lr.unwrap_or(0.01), 0.9),
        "nesterov" => OptimizerKind::nesterov(lr.unwrap_or(0.01), 0.9),
        "adagrad" => OptimizerKind::adagrad(lr.unwrap_or(0.01)),
        "adadelta" => {
            if lr.is_some() {
                return Err(Error::invalid("adadelta takes no learning rate"));
            }
            OptimizerKind::adadelta()
        }
        "rmsprop" => OptimizerKind::rmsprop(lr.unwrap_or(1e-3)),
        "adam" => OptimizerKind::adam(lr.unwrap_or(1e-3)),
        other => return Err(Error::invalid(format!("unknown optimizer {other:?}"))),
    })
}

/// Fully resolved `train` configuration, as recorded in `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub data: Vec<PathBuf>,
    /// Seeded stand-in for the tabular CSV.
    pub synthetic: bool,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub validation_split: f64,
    /// Keep only the first `limit` training rows (characters for text).
    pub limit: Option<usize>,
    pub seq_length: usize,
    pub units: usize,
    pub dropout: f64,
    pub maxlen: usize,
    pub num_words: usize,
}

impl TrainConfig {
    /// Default settings for `task`; callers override fields from flags.
    pub fn preset(task: Task) -> Self {
        let d = task.defaults();
        let (seq_length, units, dropout) = match task {
            Task::Charlstm => (160, 800, 0.4),
            _ => (100, 800, 0.3),
        };
        Self {
            task,
            data: Vec::new(),
            synthetic: false,
            seed: 42,
            epochs: d.epochs,
            batch_size: d.batch_size,
            optimizer: d.optimizer,
            validation_split: d.validation_split,
            limit: None,
            seq_length,
            units,
            dropout,
            maxlen: 500,
            num_words: 5000,
        }
    }
}

/// Housing MLP: 10→32 relu→32 relu→1 sigmoid.
pub fn mlp_tabular() -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(32, Activation::Relu),
        LayerSpec::dense(32, Activation::Relu),
        LayerSpec::dense(1, Activation::Sigmoid),
    ]
}

/// Twelve-layer image classifier: two conv blocks, then a dense head.
pub fn cnn_classifier(classes: usize) -> Vec<LayerSpec> {
    let conv = |f| LayerSpec::conv2d(f, 3, Padding::Same, Activation::Relu);
    vec![
        conv(32),
        conv(32),
        LayerSpec::pool2d(PoolKind::Max, 2),
        LayerSpec::dropout(0.25),
        conv(64),
        conv(64),
        LayerSpec::pool2d(PoolKind::Max, 2),
        LayerSpec::dropout(0.25),
        LayerSpec::Flatten,
        LayerSpec::dense(512, Activation::Relu),
        LayerSpec::dropout(0.5),
        LayerSpec::dense(classes, Activation::Softmax),
    ]
}

/// Shorter conv stack sized for 32×32×3 inputs
/// (1,064,362 parameters).
pub fn cnn_summary() -> Vec<LayerSpec> {
    let conv = |f| LayerSpec::conv2d(f, 3, Padding::Same, Activation::Relu);
    vec![
        conv(32),
        conv(32),
        LayerSpec::pool2d(PoolKind::Max, 2),
        LayerSpec::pool2d(PoolKind::Max, 2),
        LayerSpec::dropout(0.25),
        LayerSpec::Flatten,
        LayerSpec::dense(512, Activation::Relu),
        LayerSpec::dropout(0.5),
        LayerSpec::dense(10, Activation::Softmax),
    ]
}

/// Two ReLU SimpleRNN layers with dropout, then a per-step softmax.
pub fn char_rnn(vocab: usize, units: usize, dropout: f64) -> Vec<LayerSpec> {
    let rnn = || LayerSpec::SimpleRnn {
        units,
        activation: Activation::Relu,
        return_sequences: true,
    };
    char_head(vec![rnn(), LayerSpec::dropout(dropout), rnn(), LayerSpec::dropout(dropout)], vocab)
}

pub fn char_lstm(vocab: usize, units: usize, dropout: f64) -> Vec<LayerSpec> {
    let lstm = || LayerSpec::Lstm {
        units,
        return_sequences: true,
    };
    char_head(vec![lstm(), LayerSpec::dropout(dropout), lstm(), LayerSpec::dropout(dropout)], vocab)
}

fn char_head(mut body: Vec<LayerSpec>, vocab: usize) -> Vec<LayerSpec> {
    body.push(LayerSpec::TimeDistributed {
        units: vocab,
        activation: Activation::Linear,
    });
    body.push(LayerSpec::Activation {
        activation: Activation::Softmax,
    });
    body
}

/// Embedding(words, 32) → LSTM(100) → Dense(1, sigmoid).
pub fn sentiment(words: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Embedding {
            vocab: words,
            dim: 32,
            trainable: true,
        },
        LayerSpec::Lstm {
            units: 100,
            return_sequences: false,
        },
        LayerSpec::dense(1, Activation::Sigmoid),
    ]
}

/// Frozen pretrained embedding → LSTM(128) → six independent sigmoids.
pub fn multilabel(vocab: usize, dim: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Embedding {
            vocab,
            dim,
            trainable: false,
        },
        LayerSpec::Lstm {
            units: 128,
            return_sequences: false,
        },
        LayerSpec::dense(6, Activation::Sigmoid),
    ]
}

/// Everything `train` and `evaluate` need for one task.
pub struct Prepared {
    pub specs: Vec<LayerSpec>,
    pub input_shape: Vec<usize>,
    pub loss: Loss,
    pub train: (Tensor, Tensor),
    pub validation: Validation,
    /// Held-out data for the final evaluation line, when the task has any.
    pub test: Option<(Tensor, Tensor)>,
    pub vocab: Option<CharVocab>,
}

fn need_paths(config: &TrainConfig, counts: &[usize]) -> Result<()> {
    if !counts.contains(&config.data.len()) {
        return Err(Error::invalid(format!(
            "task {} takes {} --data path(s), got {}",
            config.task.name(),
            counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" or "),
            config.data.len()
        )));
    }
    if let Some(missing) = config.data.iter().find(|p| !p.is_file()) {
        return Err(Error::invalid(format!("data file {} does not exist", missing.display())));
    }
    Ok(())
}

fn limit_rows(t: (Tensor, Tensor), limit: Option<usize>) -> Result<(Tensor, Tensor)> {
    match limit {
        Some(n) if n < t.0.rows() => Ok((t.0.slice_rows(0, n)?, t.1.slice_rows(0, n)?)),
        _ => Ok(t),
    }
}

/// `n` rows of 10 features at mixed scales whose binary label is a fixed
/// linear rule of the min-max scaled features, with a margin around the
/// boundary. Returned as CSV text with a header.
pub fn synthetic_tabular(n: usize, seed: u64) -> String {
    let mut rng = Rng::new(seed);
    let d = 10;
    let w: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scales: Vec<f64> = (0..d).map(|j| 10f64.powi(j % 4)).collect();
    let mut out = (1..=d).map(|j| format!("f{j}")).collect::<Vec<_>>().join(",") + ",label\n";
    let mut rows = 0;
    while rows < n {
        let z: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
        let s: f64 = z.iter().zip(&w).map(|(z, w)| (z - 0.5) * w).sum();
        if s.abs() < 0.05 * norm {
            continue;
        }
        let cells: Vec<String> = z.iter().zip(&scales).map(|(z, k)| format!("{:.4}", z * k)).collect();
        out.push_str(&cells.join(","));
        out.push_str(if s > 0.0 { ",1\n" } else { ",0\n" });
        rows += 1;
    }
    out
}

/// Pipeline for the housing table: min-max scale all features, then a
/// seeded 70/15/15 split (0.3 held out, half of it for test).
pub fn tabular_splits(text: &str, seed: u64) -> Result<scratchnet::model::SplitDataset> {
    let table = scratchnet::data::parse_csv(text, true)?;
    split_table(&table.data, seed)
}

fn split_table(data: &Tensor, seed: u64) -> Result<scratchnet::model::SplitDataset> {
    let cols = data.last_dim();
    if data.rank() != 2 || cols < 2 {
        return Err(Error::invalid("tabular data needs feature columns and a label column"));
    }
    let n = data.rows();
    let mut x = Vec::with_capacity(n * (cols - 1));
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let row = data.row(r);
        x.extend_from_slice(&row[..cols - 1]);
        y.push(row[cols - 1]);
    }
    let x = Tensor::new([n, cols - 1], x)?;
    let y = Tensor::new([n, 1], y)?;
    let (_, x) = MinMaxScaler::fit_transform(&x)?;
    train_val_test_split(&x, &y, 0.3, 0.5, seed)
}

fn image_set(images: &PathBuf, labels: &PathBuf) -> Result<(Tensor, Tensor)> {
    let (x, labels) = load_idx(images, labels)?;
    let &[n, h, w] = x.shape() else {
        return Err(Error::Format(format!("unexpected image tensor {:?}", x.shape())));
    };
    let x = x.map(|v| v / 255.0).reshape(&[n, h, w, 1])?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    Ok((x, one_hot(&labels, 10)?))
}

/// `label<TAB>text` lines with labels 0 or 1.
pub fn parse_labelled_text(text: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let mut texts = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("line {}: expected label<TAB>text", i + 1)))?;
        let label = match label.trim() {
            "0" => 0.0,
            "1" => 1.0,
            other => return Err(Error::Format(format!("line {}: label {other:?} is not 0/1", i + 1))),
        };
        texts.push(preprocess_text(body));
        labels.push(label);
    }
    Ok((texts, labels))
}

pub fn prepare(config: &TrainConfig) -> Result<Prepared> {
    let task = config.task;
    let loss = task.loss();
    let validation_split = || {
        if config.validation_split > 0.0 {
            Validation::Split(config.validation_split)
        } else {
            Validation::None
        }
    };
    match task {
        Task::MlpTabular => {
            let split = if config.synthetic {
                need_paths(config, &[0])?;
                tabular_splits(&synthetic_tabular(1460, config.seed), config.seed)?
            } else {
                need_paths(config, &[1])?;
                split_table(&load_csv(&config.data[0], true)?.data, config.seed)?
            };
            let train = limit_rows((split.train.x, split.train.y), config.limit)?;
            Ok(Prepared {
                specs: mlp_tabular(),
                input_shape: vec![train.0.last_dim()],
                loss,
                train,
                validation: Validation::Data(split.val.x, split.val.y),
                test: Some((split.test.x, split.test.y)),
                vocab: None,
            })
        }
        Task::CnnImage => {
            need_paths(config, &[2, 4])?;
            let train = limit_rows(image_set(&config.data[0], &config.data[1])?, config.limit)?;
            let test = if config.data.len() == 4 {
                Some(image_set(&config.data[2], &config.data[3])?)
            } else {
                None
            };
            Ok(Prepared {
                specs: cnn_classifier(10),
                input_shape: train.0.shape()[1..].to_vec(),
                loss,
                train,
                validation: validation_split(),
                test,
                vocab: None,
            })
        }
        Task::Charrnn | Task::Charlstm => {
            need_paths(config, &[1])?;
            let mut text = std::fs::read_to_string(&config.data[0])?;
            if let Some(n) = config.limit {
                if let Some((cut, _)) = text.char_indices().nth(n) {
                    text.truncate(cut);
                }
            }
            let ds = build_char_dataset(&text, config.seq_length)?;
            let vocab = ds.vocab.len();
            let specs = if task == Task::Charrnn {
                char_rnn(vocab, config.units, config.dropout)
            } else {
                char_lstm(vocab, config.units, config.dropout)
            };
            Ok(Prepared {
                specs,
                input_shape: vec![0, vocab],
                loss,
                train: ds.to_tensors()?,
                validation: validation_split(),
                test: None,
                vocab: Some(ds.vocab),
            })
        }
        Task::Sentiment => {
            need_paths(config, &[1])?;
            let (texts, labels) = parse_labelled_text(&std::fs::read_to_string(&config.data[0])?)?;
            let mut tok = Tokenizer::new(Some(config.num_words));
            tok.fit_on_texts(&texts);
            let seqs = tok.texts_to_sequences(&texts);
            let x = pad_sequences(&seqs, config.maxlen, Side::Pre, Side::Pre);
            let n = labels.len();
            let y = Tensor::new([n, 1], labels)?;
            let (train, test) =
                scratchnet::model::train_test_split(&x, &y, 0.5, &mut Rng::new(config.seed))?;
            let train = limit_rows((train.x, train.y), config.limit)?;
            Ok(Prepared {
                specs: sentiment(config.num_words),
                input_shape: vec![config.maxlen],
                loss,
                train,
                validation: Validation::Data(test.x.clone(), test.y.clone()),
                test: Some((test.x, test.y)),
                vocab: None,
            })
        }
    }
}

/// Metrics compiled for every task.
pub const METRICS: [Metric; 1] = [Metric::Accuracy];
