//! The `GBK1` model file:
//!
//! ```text
//! "GBK1"                      4 bytes
//! version                     u16 LE
//! manifest length             u32 LE
//! manifest                    UTF-8 JSON
//! per parameter, in manifest order:
//!   name length               u16 LE
//!   name                      UTF-8
//!   rank                      u8
//!   extents                   u32 LE each
//!   values                    f64 LE each
//! CRC32 of everything above   u32 LE
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SequentialModel;
use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use crate::losses::Loss;
use crate::metrics::Metric;
use crate::optim::OptimizerKind;
use crate::tensor::{Rng, Tensor};

pub const MAGIC: &[u8; 4] = b"GBK1";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    input_shape: Vec<usize>,
    layers: Vec<ManifestLayer>,
    loss: Option<Loss>,
    optimizer: Option<OptimizerKind>,
    metrics: Vec<Metric>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestLayer {
    spec: LayerSpec,
    output_shape: Vec<usize>,
    params: Vec<ManifestParam>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestParam {
    name: String,
    shape: Vec<usize>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl SequentialModel {
    fn manifest(&self) -> Result<Manifest> {
        if !self.is_built() {
            return Err(Error::NotCompiled);
        }
        let layers = self
            .layers
            .iter()
            .zip(&self.shapes)
            .map(|(l, shape)| ManifestLayer {
                spec: l.spec(),
                output_shape: shape.clone(),
                params: l
                    .params()
                    .iter()
                    .map(|p| ManifestParam {
                        name: p.name.clone(),
                        shape: p.value.shape().to_vec(),
                    })
                    .collect(),
            })
            .collect();
        Ok(Manifest {
            input_shape: self.input_shape.clone(),
            layers,
            loss: self.loss(),
            optimizer: self.optimizer().map(|o| *o.kind()),
            metrics: self.metrics().to_vec(),
        })
    }

    /// Serializes architecture, training configuration and every parameter
    /// (optimizer state is not kept).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest()?)?;
        let mut out = Vec::with_capacity(manifest.len() + 8 * self.total_params() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(manifest.len()).map_err(|_| Error::Format("manifest too large".into()))?.to_le_bytes());
        out.extend_from_slice(&manifest);
        for p in self.params() {
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(p.value.rank() as u8);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// Rebuilds a model, including its loss/optimizer/metric configuration
    /// when the saved model was compiled.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, tensors) = parse(bytes)?;
        let specs: Vec<LayerSpec> = manifest.layers.iter().map(|l| l.spec.clone()).collect();
        let mut model = SequentialModel::new(&specs)?;
        model.build(&manifest.input_shape, &mut Rng::new(0))?;
        if let (Some(loss), Some(opt)) = (manifest.loss, manifest.optimizer) {
            model.set_training(loss, opt, &manifest.metrics);
        }
        model.assign(&manifest, tensors)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads parameters into this (built) model. The saved architecture must
    /// match layer for layer.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let (manifest, tensors) = parse(&std::fs::read(path)?)?;
        let mine = self.manifest()?;
        let n = mine.layers.len().max(manifest.layers.len());
        for index in 0..n {
            let describe = |l: Option<&ManifestLayer>| {
                l.map_or("nothing".to_string(), |l| {
                    format!("{} {}", l.spec.kind(), serde_json::to_string(&l.spec).unwrap_or_default())
                })
            };
            let (a, b) = (mine.layers.get(index), manifest.layers.get(index));
            let same = matches!((a, b), (Some(a), Some(b))
                if a.spec == b.spec
                    && a.output_shape == b.output_shape
                    && a.params.iter().map(|p| &p.shape).eq(b.params.iter().map(|p| &p.shape)));
            if !same {
                return Err(Error::ArchitectureMismatch {
                    index,
                    expected: describe(a),
                    found: describe(b),
                });
            }
        }
        self.assign(&manifest, tensors)
    }

    fn assign(&mut self, manifest: &Manifest, tensors: Vec<(String, Tensor)>) -> Result<()> {
        let expected: Vec<&ManifestParam> = manifest.layers.iter().flat_map(|l| &l.params).collect();
        if expected.len() != tensors.len() {
            return Err(Error::Format(format!(
                "manifest lists {} parameters, file holds {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut params = self.params_mut();
        if params.len() != tensors.len() {
            return Err(Error::Format(format!(
                "model has {} parameters, file holds {}",
                params.len(),
                tensors.len()
            )));
        }
        for ((p, (name, t)), want) in params.iter_mut().zip(tensors).zip(expected) {
            if name != want.name || name != p.name || t.shape() != want.shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter block {name} {:?} does not match {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value.expect_same_shape(&t, "load parameter")?;
            p.value = t;
        }
        Ok(())
    }
}

fn parse(bytes: &[u8]) -> Result<(Manifest, Vec<(String, Tensor)>)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    if bytes.len() < 10 {
        return Err(Error::Format("truncated file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let mut r = Reader { bytes: body, at: 4 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let len = r.u32()? as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(len)?)?;
    let mut tensors = Vec::new();
    while r.at < body.len() {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("bad extents".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    let expected: usize = manifest.layers.iter().map(|l| l.params.len()).sum();
    if tensors.len() < expected {
        return Err(Error::Format(format!(
            "truncated file: manifest lists {expected} parameters, found {}",
            tensors.len()
        )));
    }
    Ok((manifest, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::Activation;

    fn model() -> SequentialModel {
        let mut m = SequentialModel::new(&[
            LayerSpec::dense(4, Activation::Relu),
            LayerSpec::batch_norm(),
            LayerSpec::dropout(0.5),
            LayerSpec::dense(1, Activation::Sigmoid),
        ])
        .unwrap();
        m.compile(&[3], Loss::BinaryCrossentropy, OptimizerKind::sgd(0.1), &[Metric::Accuracy], &mut Rng::new(2))
            .unwrap();
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let x = Tensor::rand_normal(&mut Rng::new(3), &[5, 3], 0.0, 1.0);
        let bytes = m.to_bytes().unwrap();
        let back = SequentialModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.loss(), Some(Loss::BinaryCrossentropy));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = model().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SequentialModel::from_bytes(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut bad = bytes.clone();
        let mid = bytes.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(SequentialModel::from_bytes(&bad), Err(Error::Format(m)) if m.contains("checksum")));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(SequentialModel::from_bytes(&bad), Err(Error::Format(m)) if m.contains("version")));
        assert!(SequentialModel::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }

    #[test]
    fn truncated_body_with_valid_crc() {
        let bytes = model().to_bytes().unwrap();
        let mut cut = bytes[..bytes.len() - 20].to_vec();
        let crc = crc32fast::hash(&cut);
        cut.extend_from_slice(&crc.to_le_bytes());
        let err = SequentialModel::from_bytes(&cut).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains("truncated")), "{err}");
    }
}
