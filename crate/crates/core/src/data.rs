//! Dataset loading and preprocessing.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A numeric CSV body with its optional header row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Option<Vec<String>>,
    pub data: Tensor,
}

/// Parses comma-separated numeric rows. Blank lines are skipped; an empty
/// body yields a `[0, columns]` tensor (columns taken from the header).
pub fn parse_csv(text: &str, has_header: bool) -> Result<CsvTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let header = if has_header {
        lines
            .next()
            .map(|(_, l)| l.split(',').map(|c| c.trim().to_string()).collect::<Vec<_>>())
    } else {
        None
    };
    let mut cols = header.as_ref().map(Vec::len);
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, l) in lines {
        let cells: Vec<&str> = l.split(',').collect();
        match cols {
            Some(c) if c != cells.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {c} columns, found {}", cells.len()),
                })
            }
            None => cols = Some(cells.len()),
            _ => {}
        }
        for cell in cells {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric cell {:?}", cell.trim()),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let data = Tensor::new([rows, cols.unwrap_or(0)], data)?;
    Ok(CsvTable { header, data })
}

pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<CsvTable> {
    parse_csv(&std::fs::read_to_string(path)?, has_header)
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Decodes an IDX image file into `[n, rows, cols]` pixel values in
/// `[0, 255]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = be_u32(bytes, 0, "idx images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("idx images: bad magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, "idx images")? as usize;
    let rows = be_u32(bytes, 8, "idx images")? as usize;
    let cols = be_u32(bytes, 12, "idx images")? as usize;
    let len = n * rows * cols;
    let body = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Format(format!("idx images: truncated payload, need {len} bytes")))?;
    Tensor::new([n, rows, cols], body.iter().map(|&b| f64::from(b)).collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "idx labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("idx labels: bad magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, "idx labels")? as usize;
    bytes
        .get(8..8 + n)
        .map(<[u8]>::to_vec)
        .ok_or_else(|| Error::Format(format!("idx labels: truncated payload, need {n} bytes")))
}

/// Loads an image/label IDX pair; counts must agree.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(Tensor, Vec<u8>)> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::Format(format!(
            "idx count mismatch: {} images, {} labels",
            images.shape()[0],
            labels.len()
        )));
    }
    Ok((images, labels))
}

pub fn encode_idx_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if pixels.len() != n * rows * cols {
        return Err(Error::invalid(format!(
            "{} pixels for {n} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Per-column `(x - min) / (max - min)` learned from a `[rows, cols]`
/// tensor. Constant columns map to 0 and are flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &Tensor) -> Result<Self> {
        if x.rank() != 2 || x.rows() == 0 {
            return Err(Error::invalid(format!(
                "scaler needs a non-empty [rows, cols] tensor, got {:?}",
                x.shape()
            )));
        }
        let c = x.last_dim();
        let mut min = vec![f64::INFINITY; c];
        let mut max = vec![f64::NEG_INFINITY; c];
        for row in x.data().chunks(c) {
            for j in 0..c {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        Ok(Self { min, max })
    }

    /// Indices of columns whose range was zero at fit time.
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.min.len()).filter(|&j| self.max[j] == self.min[j]).collect()
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.min.len();
        if x.rank() != 2 || x.last_dim() != c {
            return Err(Error::ShapeMismatch {
                op: "scaler transform",
                left: x.shape().to_vec(),
                right: vec![c],
            });
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(c) {
            for j in 0..c {
                let range = self.max[j] - self.min[j];
                row[j] = if range == 0.0 {
                    0.0
                } else {
                    (row[j] - self.min[j]) / range
                };
            }
        }
        Ok(out)
    }

    pub fn fit_transform(x: &Tensor) -> Result<(Self, Tensor)> {
        let s = Self::fit(x)?;
        let t = s.transform(x)?;
        Ok((s, t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelRange {
    /// `x / 255`, into `[0, 1]`.
    Unit,
    /// `(x - 127.5) / 127.5`, into `[-1, 1]`.
    Symmetric,
}

pub fn normalize_pixels(x: &Tensor, range: PixelRange) -> Tensor {
    match range {
        PixelRange::Unit => x.map(|v| v / 255.0),
        PixelRange::Symmetric => x.map(|v| (v - 127.5) / 127.5),
    }
}

/// Inverse of [`PixelRange::Symmetric`], rounded and clamped to a byte.
pub fn symmetric_to_byte(v: f64) -> u8 {
    (v * 127.5 + 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut out = Tensor::zeros(&[labels.len(), num_classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::OutOfBounds(format!(
                "label {l} with {num_classes} classes"
            )));
        }
        out.data_mut()[i * num_classes + l] = 1.0;
    }
    Ok(out)
}

/// Sorted set of the characters in a text, indexed `0..len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: BTreeMap<char, usize>,
}

impl CharVocab {
    pub fn from_text(text: &str) -> Self {
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        Self::from_chars(chars)
    }

    /// From an ordered character list, e.g. a saved sidecar.
    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Self { chars, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn char_at(&self, i: usize) -> Option<char> {
        self.chars.get(i).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| Error::OutOfBounds(format!("character {c:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&i| {
                self.char_at(i)
                    .ok_or_else(|| Error::OutOfBounds(format!("id {i} outside vocabulary")))
            })
            .collect()
    }
}

/// Contiguous next-character windows over a text. Targets are the inputs
/// shifted by one character. One-hot tensors are built on demand, since the
/// full encoding of a large corpus does not fit in memory.
#[derive(Clone, Debug)]
pub struct CharDataset {
    pub vocab: CharVocab,
    ids: Vec<usize>,
    seq_length: usize,
    n_seq: usize,
}

/// Splits `text` into `floor((n_chars - 1) / seq_length)` windows, so every
/// target window is complete.
pub fn build_char_dataset(text: &str, seq_length: usize) -> Result<CharDataset> {
    let vocab = CharVocab::from_text(text);
    build_char_dataset_with(text, seq_length, vocab)
}

/// [`build_char_dataset`] with a fixed vocabulary.
pub fn build_char_dataset_with(
    text: &str,
    seq_length: usize,
    vocab: CharVocab,
) -> Result<CharDataset> {
    let ids = vocab.encode(text)?;
    if seq_length == 0 || ids.len() < seq_length + 1 {
        return Err(Error::invalid(format!(
            "text of {} characters is shorter than one window of {seq_length} + 1",
            ids.len()
        )));
    }
    let n_seq = (ids.len() - 1) / seq_length;
    Ok(CharDataset {
        vocab,
        ids,
        seq_length,
        n_seq,
    })
}

impl CharDataset {
    pub fn n_chars(&self) -> usize {
        self.ids.len()
    }

    pub fn len(&self) -> usize {
        self.n_seq
    }

    pub fn is_empty(&self) -> bool {
        self.n_seq == 0
    }

    pub fn seq_length(&self) -> usize {
        self.seq_length
    }

    /// `[n_seq, seq_length, n_vocab]`.
    pub fn x_shape(&self) -> [usize; 3] {
        [self.n_seq, self.seq_length, self.vocab.len()]
    }

    /// Input and target ids of window `i`.
    pub fn window(&self, i: usize) -> (&[usize], &[usize]) {
        let s = i * self.seq_length;
        (
            &self.ids[s..s + self.seq_length],
            &self.ids[s + 1..s + 1 + self.seq_length],
        )
    }

    /// One-hot `(X, Y)` for the given windows.
    pub fn batch(&self, windows: &[usize]) -> Result<(Tensor, Tensor)> {
        let v = self.vocab.len();
        let shape = [windows.len(), self.seq_length, v];
        let mut x = Tensor::zeros(&shape);
        let mut y = Tensor::zeros(&shape);
        for (b, &w) in windows.iter().enumerate() {
            if w >= self.n_seq {
                return Err(Error::OutOfBounds(format!("window {w} of {}", self.n_seq)));
            }
            let (xi, yi) = self.window(w);
            for t in 0..self.seq_length {
                let at = (b * self.seq_length + t) * v;
                x.data_mut()[at + xi[t]] = 1.0;
                y.data_mut()[at + yi[t]] = 1.0;
            }
        }
        Ok((x, y))
    }

    /// Every window, one-hot encoded.
    pub fn to_tensors(&self) -> Result<(Tensor, Tensor)> {
        self.batch(&(0..self.n_seq).collect::<Vec<_>>())
    }
}

/// Word-rank tokenizer: lowercases, splits on whitespace and punctuation,
/// and ranks words by descending frequency (ties by first occurrence)
/// starting at 1. Index 0 is reserved for padding.
#[derive(Clone, Debug, Default)]
pub struct Tokenizer {
    /// Only ranks `< num_words` survive `texts_to_sequences`.
    pub num_words: Option<usize>,
    word_index: HashMap<String, usize>,
    words: Vec<String>,
}

const FILTERS: &str = "!\"#$%&()*+,-./:;<=>?@[\\]^_`{|}~\t\n";

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| c.is_whitespace() || FILTERS.contains(c))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

impl Tokenizer {
    pub fn new(num_words: Option<usize>) -> Self {
        Self {
            num_words,
            ..Self::default()
        }
    }

    pub fn fit_on_texts<S: AsRef<str>>(&mut self, texts: &[S]) {
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for t in texts {
            for w in words(t.as_ref()) {
                let e = counts.entry(w).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                e.0 += 1;
            }
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        self.words = ranked.into_iter().map(|(w, _)| w).collect();
        self.word_index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 1))
            .collect();
    }

    /// Rank of a word (1-based), regardless of `num_words`.
    pub fn rank(&self, word: &str) -> Option<usize> {
        self.word_index.get(word).copied()
    }

    /// Words in rank order; `words()[r - 1]` has rank `r`.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Number of distinct words seen, plus one for the padding index.
    pub fn vocab_size(&self) -> usize {
        self.words.len() + 1
    }

    pub fn texts_to_sequences<S: AsRef<str>>(&self, texts: &[S]) -> Vec<Vec<usize>> {
        texts
            .iter()
            .map(|t| {
                words(t.as_ref())
                    .filter_map(|w| self.rank(&w))
                    .filter(|&r| self.num_words.is_none_or(|n| r < n))
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Pre,
    Post,
}

/// Pads or truncates each sequence to `maxlen`, producing `[n, maxlen]`.
pub fn pad_sequences(seqs: &[Vec<usize>], maxlen: usize, padding: Side, truncating: Side) -> Tensor {
    let mut out = Tensor::zeros(&[seqs.len(), maxlen]);
    for (i, s) in seqs.iter().enumerate() {
        let kept: &[usize] = if s.len() <= maxlen {
            s
        } else if truncating == Side::Pre {
            &s[s.len() - maxlen..]
        } else {
            &s[..maxlen]
        };
        let offset = if padding == Side::Pre { maxlen - kept.len() } else { 0 };
        let row = out.row_mut(i);
        for (k, &id) in kept.iter().enumerate() {
            row[offset + k] = id as f64;
        }
    }
    out
}

/// Parses `word v1 .. v_dim` lines into a map.
pub fn parse_text_embeddings(text: &str, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let vec = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad number {p:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if vec.len() != dim {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {dim} values, found {}", vec.len()),
            });
        }
        map.insert(word.to_string(), vec);
    }
    Ok(map)
}

pub fn load_text_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    parse_text_embeddings(&std::fs::read_to_string(path)?, dim)
}

/// `[vocab_size, dim]` table whose row `r` holds the vector of the word
/// with rank `r`; unknown words and ranks past `vocab_size` are skipped.
pub fn build_embedding_matrix(
    tokenizer: &Tokenizer,
    vectors: &HashMap<String, Vec<f64>>,
    dim: usize,
    vocab_size: usize,
) -> Result<Tensor> {
    let mut m = Tensor::zeros(&[vocab_size, dim]);
    for (i, w) in tokenizer.words().iter().enumerate() {
        let rank = i + 1;
        if rank >= vocab_size {
            break;
        }
        if let Some(v) = vectors.get(w) {
            if v.len() != dim {
                return Err(Error::invalid(format!("vector for {w:?} has length {}", v.len())));
            }
            m.row_mut(rank).copy_from_slice(v);
        }
    }
    Ok(m)
}

/// Replaces every non-ASCII-letter with a space, removes single letters
/// standing between whitespace, and collapses runs of whitespace.
pub fn preprocess_text(sentence: &str) -> String {
    let letters: Vec<u8> = sentence
        .chars()
        .map(|c| if c.is_ascii_alphabetic() { c as u8 } else { b' ' })
        .collect();
    // Non-overlapping left-to-right removal of `\s+[a-zA-Z]\s+`.
    let mut dropped = Vec::with_capacity(letters.len());
    let mut i = 0;
    while i < letters.len() {
        if letters[i] != b' ' {
            dropped.push(letters[i]);
            i += 1;
            continue;
        }
        let mut k = i;
        while k < letters.len() && letters[k] == b' ' {
            k += 1;
        }
        if k + 1 < letters.len() && letters[k + 1] == b' ' {
            let mut m = k + 1;
            while m < letters.len() && letters[m] == b' ' {
                m += 1;
            }
            dropped.push(b' ');
            i = m;
        } else {
            dropped.extend_from_slice(&letters[i..k]);
            i = k;
        }
    }
    let mut out = String::with_capacity(dropped.len());
    let mut prev_space = false;
    for b in dropped {
        let space = b == b' ';
        if !(space && prev_space) {
            out.push(b as char);
        }
        prev_space = space;
    }
    out
}
