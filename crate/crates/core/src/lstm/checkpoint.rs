use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{LayerParams, LstmModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "ipaths-ckpt-1";

/// A model together with its vocabulary and free-form run information.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LstmModel,
    pub vocab: Vec<String>,
    pub info: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Dims {
    d: usize,
    #[serde(rename = "H")]
    hidden: usize,
    #[serde(rename = "L")]
    layers: usize,
    #[serde(rename = "V")]
    vocab: usize,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    w: Vec<Vec<Vec<f64>>>,
    u: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: String,
    metadata: Dims,
    bos: usize,
    eos: usize,
    vocab: Vec<String>,
    #[serde(default)]
    info: serde_json::Map<String, serde_json::Value>,
    embedding: Vec<Vec<f64>>,
    layers: Vec<LayerFile>,
    decoder: Vec<Vec<f64>>,
    decoder_bias: Vec<f64>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>, shape: (usize, usize), what: &str) -> Result<Array2<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Checkpoint(format!("{what} does not have shape {shape:?}")));
    }
    Array2::from_shape_vec(shape, rows.into_iter().flatten().collect()).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn vector(v: Vec<f64>, len: usize, what: &str) -> Result<Array1<f64>> {
    if v.len() != len {
        return Err(Error::Checkpoint(format!(
            "{what} has length {}, expected {len}",
            v.len()
        )));
    }
    Ok(Array1::from(v))
}

fn gate_array<T>(v: Vec<T>, what: &str) -> Result<[T; 4]> {
    v.try_into()
        .map_err(|_| Error::Checkpoint(format!("{what} must list four gates")))
}

impl Checkpoint {
    fn to_file(&self) -> CheckpointFile {
        let m = &self.model;
        CheckpointFile {
            version: CHECKPOINT_VERSION.into(),
            metadata: Dims {
                d: m.embed_dim(),
                hidden: m.hidden(),
                layers: m.num_layers(),
                vocab: m.vocab_size(),
            },
            bos: m.bos,
            eos: m.eos,
            vocab: self.vocab.clone(),
            info: self.info.clone(),
            embedding: rows(&m.embedding),
            layers: m
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: l.w.iter().map(rows).collect(),
                    u: l.u.iter().map(rows).collect(),
                    b: l.b.iter().map(|b| b.to_vec()).collect(),
                })
                .collect(),
            decoder: rows(&m.decoder),
            decoder_bias: m.decoder_bias.to_vec(),
        }
    }

    fn from_file(f: CheckpointFile) -> Result<Self> {
        if f.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {:?}",
                f.version
            )));
        }
        let Dims {
            d: embed_dim,
            hidden,
            layers,
            vocab,
        } = f.metadata;
        if f.vocab.len() != vocab {
            return Err(Error::Checkpoint(format!(
                "vocabulary lists {} tokens, metadata says {vocab}",
                f.vocab.len()
            )));
        }
        if f.layers.len() != layers {
            return Err(Error::Checkpoint("layer count mismatch".into()));
        }
        let mut params = Vec::with_capacity(layers);
        for (l, lf) in f.layers.into_iter().enumerate() {
            let input_dim = if l == 0 { embed_dim } else { hidden };
            let w = gate_array(lf.w, "w")?;
            let u = gate_array(lf.u, "u")?;
            let b = gate_array(lf.b, "b")?;
            let [w0, w1, w2, w3] = w;
            let [u0, u1, u2, u3] = u;
            let [b0, b1, b2, b3] = b;
            let wshape = (hidden, input_dim);
            let ushape = (hidden, hidden);
            params.push(LayerParams {
                w: [
                    matrix(w0, wshape, "w")?,
                    matrix(w1, wshape, "w")?,
                    matrix(w2, wshape, "w")?,
                    matrix(w3, wshape, "w")?,
                ],
                u: [
                    matrix(u0, ushape, "u")?,
                    matrix(u1, ushape, "u")?,
                    matrix(u2, ushape, "u")?,
                    matrix(u3, ushape, "u")?,
                ],
                b: [
                    vector(b0, hidden, "b")?,
                    vector(b1, hidden, "b")?,
                    vector(b2, hidden, "b")?,
                    vector(b3, hidden, "b")?,
                ],
            });
        }
        let model = LstmModel {
            embedding: matrix(f.embedding, (vocab, embed_dim), "embedding")?,
            layers: params,
            decoder: matrix(f.decoder, (vocab, hidden), "decoder")?,
            decoder_bias: vector(f.decoder_bias, vocab, "decoder bias")?,
            bos: f.bos,
            eos: f.eos,
        };
        model.check_shapes().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self {
            model,
            vocab: f.vocab,
            info: f.info,
        })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, writer: impl Write) -> Result<()> {
    serde_json::to_writer(writer, &ckpt.to_file())?;
    Ok(())
}

pub fn read_checkpoint(reader: impl Read) -> Result<Checkpoint> {
    let file: CheckpointFile = serde_json::from_reader(reader)?;
    Checkpoint::from_file(file)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(ckpt, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut model = LstmModel::random(5, 3, 4, 0, 1, 17);
        model.embedding[[2, 1]] = 1.0 / 3.0;
        model.decoder[[4, 3]] = -5e-324;
        let mut info = serde_json::Map::new();
        info.insert("seed".into(), 17.into());
        Checkpoint {
            model,
            vocab: ["<bos>", "<eos>", "a", "b", "c"].map(String::from).to_vec(),
            info,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample();
        let mut buf = Vec::new();
        write_checkpoint(&ckpt, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        for (a, b) in back.model.param_slices().iter().zip(ckpt.model.param_slices()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_wrong_version_and_shape() {
        let mut value = serde_json::to_value(sample().to_file()).unwrap();
        value["version"] = "other".into();
        assert!(read_checkpoint(value.to_string().as_bytes()).is_err());
        let mut value = serde_json::to_value(sample().to_file()).unwrap();
        value["decoder_bias"] = serde_json::json!([0.0]);
        assert!(matches!(
            read_checkpoint(value.to_string().as_bytes()),
            Err(Error::Checkpoint(_))
        ));
    }
}
