//! `TUCKPT1` checkpoints: a line-oriented text manifest followed by the raw
//! little-endian parameter payload.
//!
//! ```text
//! TUCKPT1
//! element f32
//! iteration 500
//! seed 0
//! config model.hidden 64
//! param encoder.embedding.weight 64,128,1,1 0 8192
//! payload 123456
//! <payload bytes>
//! ```
//!
//! Parameter offsets and counts are in elements of the declared type.

use std::fs;
use std::path::Path;

use transunet_core::nn::{ModelConfig, Parameters, TransUnet};
use transunet_core::{ElementType, Error as CoreError, Scalar};

use crate::error::{Error, Result};
use crate::text::{parse_num, tokens};

pub const MAGIC: &str = "TUCKPT1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub element: ElementType,
    pub iteration: usize,
    pub seed: u64,
    /// Model configuration as `model.*` key/value pairs.
    pub config: Vec<(String, String)>,
    pub params: Vec<ParamEntry>,
    pub payload: Vec<u8>,
}

fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &TransUnet<T>, iteration: usize, seed: u64) -> Self {
        let mut params = Vec::new();
        let mut payload = Vec::new();
        let mut offset = 0;
        for (name, t) in model.named_parameters() {
            params.push(ParamEntry { name, shape: t.shape().to_vec(), offset, count: t.numel() });
            offset += t.numel();
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        }
        Self { element: T::ELEMENT_TYPE, iteration, seed, config: model.config.to_pairs(), params, payload }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig::from_pairs(self.config.iter().map(|(k, v)| (k.as_str(), v.as_str())))?)
    }

    /// Parameter records decoded into `T`, in manifest order.
    pub fn records<T: Scalar>(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let size = self.element.size_in_bytes();
        self.params
            .iter()
            .map(|p| {
                let bytes = &self.payload[p.offset * size..(p.offset + p.count) * size];
                let data = bytes
                    .chunks_exact(size)
                    .map(|b| match self.element {
                        e if e == T::ELEMENT_TYPE => T::read_le(b),
                        ElementType::F64 => T::from_f64(f64::read_le(b)),
                        _ => T::from_f64(f32::read_le(b) as f64),
                    })
                    .collect();
                (p.name.clone(), p.shape.clone(), data)
            })
            .collect()
    }

    /// Overwrites `model`'s parameters; any name or shape disagreement is a
    /// compatibility error naming the first offending parameter.
    pub fn load_into<T: Scalar>(&self, model: &mut TransUnet<T>) -> Result<()> {
        self.check_compatible(model)?;
        model.load_parameters(&self.records())?;
        Ok(())
    }

    /// Compares names and shapes only, so a mismatch is reported without
    /// decoding the payload.
    pub fn check_compatible<T: Scalar>(&self, model: &TransUnet<T>) -> Result<()> {
        let expected = model.named_parameters();
        for (i, (name, t)) in expected.iter().enumerate() {
            match self.params.get(i) {
                Some(e) if e.name == *name && e.shape == t.shape() => {}
                Some(e) => {
                    return Err(CoreError::Compatibility(format!(
                        "parameter '{name}' {:?} does not match checkpoint entry '{}' {:?}",
                        t.shape(),
                        e.name,
                        e.shape
                    ))
                    .into())
                }
                None => return Err(CoreError::Compatibility(format!("checkpoint has no entry for parameter '{name}'")).into()),
            }
        }
        if let Some(extra) = self.params.get(expected.len()) {
            return Err(CoreError::Compatibility(format!(
                "checkpoint has {} parameters, model expects {}; first extra is '{}'",
                self.params.len(),
                expected.len(),
                extra.name
            ))
            .into());
        }
        Ok(())
    }

    /// Rebuilds the saved model from its own configuration snapshot.
    pub fn build_model<T: Scalar>(&self) -> Result<TransUnet<T>> {
        let mut model = TransUnet::new(self.model_config()?, self.seed)?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC}\nelement {}\niteration {}\nseed {}\n", self.element.tag(), self.iteration, self.seed);
        for (k, v) in &self.config {
            head += &format!("config {k} {v}\n");
        }
        for p in &self.params {
            head += &format!("param {} {} {} {}\n", p.name, format_shape(&p.shape), p.offset, p.count);
        }
        head += &format!("payload {}\n", self.payload.len());
        let mut out = head.into_bytes();
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut next_line = |what: &str| -> Result<(usize, &str)> {
            let start = pos;
            let len = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::parse(path, start, format!("unterminated line, expected {what}")))?;
            pos = start + len + 1;
            let line = std::str::from_utf8(&bytes[start..start + len])
                .map_err(|e| Error::parse(path, start + e.valid_up_to(), "manifest is not UTF-8"))?;
            Ok((start, line))
        };

        let (_, magic) = next_line("magic")?;
        if magic != MAGIC {
            return Err(Error::parse(path, 0, format!("expected magic {MAGIC}")));
        }
        let mut element = None;
        let mut iteration = None;
        let mut seed = None;
        let mut config = Vec::new();
        let mut params: Vec<ParamEntry> = Vec::new();
        let payload_len = loop {
            let (base, line) = next_line("manifest record")?;
            let t = tokens(line, base);
            let Some(&(key_offset, key)) = t.first() else {
                return Err(Error::parse(path, base, "blank manifest line"));
            };
            let arity = |n: usize| -> Result<()> {
                if t.len() == n + 1 {
                    Ok(())
                } else {
                    Err(Error::parse(path, key_offset, format!("'{key}' takes {n} fields, found {}", t.len() - 1)))
                }
            };
            match key {
                "element" => {
                    arity(1)?;
                    let e = ElementType::from_tag(t[1].1)
                        .filter(|e| *e != ElementType::U8)
                        .ok_or_else(|| Error::parse(path, t[1].0, format!("unsupported element type '{}'", t[1].1)))?;
                    element = Some(e);
                }
                "iteration" => {
                    arity(1)?;
                    iteration = Some(parse_num(path, t[1], "iteration")?);
                }
                "seed" => {
                    arity(1)?;
                    seed = Some(parse_num(path, t[1], "seed")?);
                }
                "config" => {
                    // An empty value (e.g. no decoder widths) leaves only the key.
                    if t.len() == 2 {
                        config.push((t[1].1.to_string(), String::new()));
                    } else {
                        arity(2)?;
                        config.push((t[1].1.to_string(), t[2].1.to_string()));
                    }
                }
                "param" => {
                    arity(4)?;
                    let shape = if t[2].1 == "scalar" {
                        Vec::new()
                    } else {
                        let mut dims = Vec::new();
                        let mut off = t[2].0;
                        for d in t[2].1.split(',') {
                            dims.push(parse_num(path, (off, d), "dimension")?);
                            off += d.len() + 1;
                        }
                        dims
                    };
                    let entry = ParamEntry {
                        name: t[1].1.to_string(),
                        shape,
                        offset: parse_num(path, t[3], "offset")?,
                        count: parse_num(path, t[4], "count")?,
                    };
                    if entry.shape.iter().product::<usize>() != entry.count {
                        return Err(Error::parse(path, t[4].0, format!("count {} disagrees with shape", entry.count)));
                    }
                    let expected = params.last().map_or(0, |p| p.offset + p.count);
                    if entry.offset != expected {
                        return Err(Error::parse(path, t[3].0, format!("offset {} is not contiguous, expected {expected}", entry.offset)));
                    }
                    params.push(entry);
                }
                "payload" => {
                    arity(1)?;
                    break parse_num::<usize>(path, t[1], "payload length")?;
                }
                other => return Err(Error::parse(path, key_offset, format!("unknown manifest record '{other}'"))),
            }
        };
        let missing = |what: &str| Error::parse(path, pos, format!("manifest lacks '{what}'"));
        let element = element.ok_or_else(|| missing("element"))?;
        let iteration = iteration.ok_or_else(|| missing("iteration"))?;
        let seed = seed.ok_or_else(|| missing("seed"))?;

        let payload = &bytes[pos..];
        let elements = params.last().map_or(0, |p| p.offset + p.count);
        if payload_len != elements * element.size_in_bytes() {
            return Err(Error::integrity(
                path,
                format!("payload declared as {payload_len} bytes but parameters need {}", elements * element.size_in_bytes()),
            ));
        }
        if payload.len() != payload_len {
            return Err(Error::integrity(path, format!("payload has {} bytes, manifest declares {payload_len}", payload.len())));
        }
        Ok(Self { element, iteration, seed, config, params, payload: payload.to_vec() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::decode(path, &bytes)
    }
}

/// Loads `path` into a model built from `config`, for callers that insist on
/// a particular architecture.
pub fn load_with_config<T: Scalar>(path: &Path, config: ModelConfig) -> Result<TransUnet<T>> {
    let ckpt = Checkpoint::load(path)?;
    let mut model = TransUnet::new(config, ckpt.seed)?;
    ckpt.load_into(&mut model).map_err(|e| match e {
        Error::Core(CoreError::Compatibility(m)) => Error::Core(CoreError::Compatibility(format!("{}: {m}", path.display()))),
        e => e,
    })?;
    Ok(model)
}
