//! Flat `key = value` run configuration with dotted section keys.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 7
//! model.variant = transunet
//! train.lr = 0.01
//! data.spacing = 1.0,1.0,2.5
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use transunet_core::data::DatasetSpec;
use transunet_core::nn::ModelConfig;
use transunet_core::train::TrainConfig;
use transunet_core::{Error as CoreError, Spacing};

use crate::error::{Error, Result};

pub const RESOLVED_NAME: &str = "run.cfg";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetSpec,
    /// Directory of a dataset written by `generate-data`; when unset the
    /// dataset is generated in memory from `data.*`.
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Whether any `model.*` key was set explicitly.
    pub model_explicit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::tiny(),
            train: TrainConfig::default(),
            data: DatasetSpec::default(),
            data_dir: None,
            out: None,
            seed: 0,
            model_explicit: false,
        }
    }
}

fn bad(key: &str, expected: &str, value: &str) -> Error {
    Error::Core(CoreError::Config(format!("{key}: expected {expected}, got '{value}'")))
}

impl RunConfig {
    /// Applies one setting. `seed` is the run-wide seed and also reseeds
    /// training and data generation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        let usize_of = |v: &str| v.parse::<usize>().map_err(|_| bad(key, "a non-negative integer", v));
        if key.starts_with("model.") {
            self.model.set(key, value)?;
            self.model_explicit = true;
        } else if key.starts_with("train.") {
            self.train.set(key, value)?;
        } else if let Some(field) = key.strip_prefix("data.") {
            match field {
                "cases" => self.data.cases = usize_of(value)?,
                "depth" => self.data.depth = usize_of(value)?,
                "resolution" => self.data.resolution = usize_of(value)?,
                "classes" => self.data.classes = usize_of(value)?,
                "val_cases" => self.data.val_cases = usize_of(value)?,
                "test_cases" => self.data.test_cases = usize_of(value)?,
                "seed" => self.data.seed = value.parse().map_err(|_| bad(key, "a non-negative integer", value))?,
                "spacing" => {
                    let parts = value
                        .split(',')
                        .map(|s| s.trim().parse::<f64>().map_err(|_| bad(key, "three numbers sx,sy,sz", value)))
                        .collect::<Result<Vec<_>>>()?;
                    let [x, y, z] = parts[..] else {
                        return Err(bad(key, "three numbers sx,sy,sz", value));
                    };
                    self.data.spacing = Spacing { x, y, z };
                }
                "dir" => self.data_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
                other => return Err(Error::Core(CoreError::Config(format!("unknown setting 'data.{other}'")))),
            }
        } else {
            match key {
                "seed" => {
                    self.seed = value.parse().map_err(|_| bad(key, "a non-negative integer", value))?;
                    self.train.seed = self.seed;
                    self.data.seed = self.seed;
                }
                "out" => self.out = (!value.is_empty()).then(|| PathBuf::from(value)),
                other => return Err(Error::Core(CoreError::Config(format!("unknown setting '{other}'")))),
            }
        }
        Ok(())
    }

    /// Applies a `KEY=VALUE` override as given on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{assignment}'")))?;
        self.set(k, v)
    }

    /// Applies every assignment in a config file, in order.
    pub fn apply_text(&mut self, path: &Path, text: &str) -> Result<()> {
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let line = raw.trim_end_matches(['\n', '\r']);
            let content = line.split('#').next().unwrap_or("");
            if !content.trim().is_empty() {
                let (k, v) = content.split_once('=').ok_or_else(|| {
                    let lead = content.len() - content.trim_start().len();
                    Error::parse(path, offset + lead, "expected 'key = value'")
                })?;
                if k.trim().is_empty() {
                    return Err(Error::parse(path, offset, "missing key before '='"));
                }
                self.set(k, v)?;
            }
            offset += raw.len();
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        self.apply_text(path, &text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        Ok(())
    }

    /// Canonical text; re-reading it reproduces this configuration.
    pub fn to_text(&self) -> String {
        let mut out = format!("seed = {}\n", self.seed);
        if let Some(o) = &self.out {
            out += &format!("out = {}\n", o.display());
        }
        for (k, v) in self.model.to_pairs().into_iter().chain(self.train.to_pairs()) {
            out += &format!("{k} = {v}\n");
        }
        let d = &self.data;
        let s = d.spacing;
        for (k, v) in [
            ("cases", d.cases.to_string()),
            ("depth", d.depth.to_string()),
            ("resolution", d.resolution.to_string()),
            ("classes", d.classes.to_string()),
            ("spacing", format!("{:?},{:?},{:?}", s.x, s.y, s.z)),
            ("val_cases", d.val_cases.to_string()),
            ("test_cases", d.test_cases.to_string()),
            ("seed", d.seed.to_string()),
        ] {
            out += &format!("data.{k} = {v}\n");
        }
        if let Some(dir) = &self.data_dir {
            out += &format!("data.dir = {}\n", dir.display());
        }
        out
    }
}
