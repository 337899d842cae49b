//! Training configuration, the SGD loop and the ablation runner.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{AugmentParams, Case, Dataset, DatasetSpec, Slice};
use crate::error::{config_err, contract_err, Error, Result};
use crate::loss::{segmentation_loss, LossWeights};
use crate::metrics::{evaluate_case_set, MetricReport};
use crate::nn::{EncoderKind, ModelConfig, Parameters, ScalePreset, TransUnet, Variant};
use crate::optim::Sgd;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub loss: LossWeights,
    /// Random flips and rotations on every sampled slice.
    pub augment: bool,
    /// Validation cadence in iterations; 0 disables validation.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 4,
            iterations: 500,
            seed: 0,
            loss: LossWeights::default(),
            augment: true,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lr) {
            return Err(config_err!("train.lr must be finite and non-negative, got {}", self.lr));
        }
        if !finite_nonneg(self.momentum) || self.momentum >= 1.0 {
            return Err(config_err!("train.momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !finite_nonneg(self.weight_decay) {
            return Err(config_err!("train.weight_decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(config_err!("train.batch_size must be positive"));
        }
        let (ce, dice) = (self.loss.ce, self.loss.dice);
        if !(finite_nonneg(ce) && finite_nonneg(dice) && ce + dice > 0.0) {
            return Err(config_err!("train.ce_weight and train.dice_weight must be non-negative with a positive sum"));
        }
        Ok(())
    }

    /// Applies one `train.*` setting (the prefix is optional).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.strip_prefix("train.").unwrap_or(key);
        let value = value.trim();
        let float = |v: &str| v.parse::<f64>().map_err(|_| config_err!("train.{key}: expected a number, got '{v}'"));
        let int = |v: &str| v.parse::<u64>().map_err(|_| config_err!("train.{key}: expected a non-negative integer, got '{v}'"));
        match key {
            "lr" => self.lr = float(value)?,
            "momentum" => self.momentum = float(value)?,
            "weight_decay" => self.weight_decay = float(value)?,
            "batch_size" => self.batch_size = int(value)? as usize,
            "iterations" => self.iterations = int(value)? as usize,
            "seed" => self.seed = int(value)?,
            "ce_weight" => self.loss.ce = float(value)?,
            "dice_weight" => self.loss.dice = float(value)?,
            "augment" => {
                self.augment = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    v => return Err(config_err!("train.augment: expected true or false, got '{v}'")),
                }
            }
            "eval_every" => self.eval_every = int(value)? as usize,
            other => return Err(config_err!("unknown setting 'train.{other}'")),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let pairs = [
            ("lr", format!("{:?}", self.lr)),
            ("momentum", format!("{:?}", self.momentum)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("iterations", self.iterations.to_string()),
            ("seed", self.seed.to_string()),
            ("ce_weight", format!("{:?}", self.loss.ce)),
            ("dice_weight", format!("{:?}", self.loss.dice)),
            ("augment", self.augment.to_string()),
            ("eval_every", self.eval_every.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (format!("train.{k}"), v)).collect()
    }
}

/// One record of the training curve; `iteration` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub loss: f64,
    pub val_dsc: Option<f64>,
}

/// Slice converted to a `[1, H, W]` model input.
fn slice_input<T: Scalar>(image: &[f32], h: usize, w: usize) -> Tensor<T> {
    Tensor::new(&[1, h, w], image.iter().map(|&v| T::from_f64(v as f64)).collect()).expect("slice extents")
}

/// Mean loss over a batch of `(image, labels)` pairs on one tape.
pub fn batch_loss<'a, T: Scalar>(
    model: &'a TransUnet<T>,
    tape: &mut Tape<'a, T>,
    batch: &[(Tensor<T>, Vec<u8>)],
    weights: LossWeights,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(contract_err!("empty batch"));
    }
    let mut total: Option<Var> = None;
    for (image, labels) in batch {
        let x = tape.constant(image.clone());
        let logits = model.forward(tape, x)?;
        let l = segmentation_loss(tape, logits, labels, weights)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    tape.scale(total.unwrap(), T::ONE / T::from_usize(batch.len()))
}

/// Owns a model and its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: TransUnet<T>,
    pub config: TrainConfig,
    optimizer: Sgd<T>,
    /// Completed iterations.
    pub iteration: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: TransUnet<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Sgd::new(config.lr, config.momentum, config.weight_decay);
        Ok(Self { model, config, optimizer, iteration: 0 })
    }

    /// Batch for iteration `it`, drawn from the `(seed, it)` stream.
    pub fn sample_batch(&self, slices: &[Slice], it: usize) -> Result<Vec<(Tensor<T>, Vec<u8>)>> {
        if slices.is_empty() {
            return Err(contract_err!("training set has no slices"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(it as u64);
        let b = self.config.batch_size;
        let picks: Vec<usize> = if b <= slices.len() {
            index::sample(&mut rng, slices.len(), b).into_vec()
        } else {
            (0..b).map(|_| rng.random_range(0..slices.len())).collect()
        };
        picks
            .into_iter()
            .map(|i| {
                let s = &slices[i];
                let params = if self.config.augment { AugmentParams::sample(&mut rng) } else { AugmentParams::IDENTITY };
                let (img, lab) = params.apply(&s.image, &s.labels, s.height, s.width)?;
                Ok((slice_input(&img, s.height, s.width), lab))
            })
            .collect()
    }

    /// One forward/backward/update; returns the batch loss.
    pub fn step(&mut self, slices: &[Slice]) -> Result<f64> {
        let it = self.iteration;
        let numeric = |e: Error| match e {
            Error::NonFinite { op } => Error::Numeric { iteration: it + 1, detail: format!("non-finite value in {op}") },
            e => e,
        };
        let batch = self.sample_batch(slices, it)?;
        let (loss, grads) = {
            let mut tape = Tape::new();
            let l = batch_loss(&self.model, &mut tape, &batch, self.config.loss).map_err(numeric)?;
            let loss = tape.value(l).data()[0].to_f64();
            if !loss.is_finite() {
                return Err(Error::Numeric { iteration: it + 1, detail: format!("loss is {loss}") });
            }
            tape.backward(l).map_err(numeric)?;
            (loss, self.model.gather_grads(&tape))
        };
        self.model.store_grads(grads)?;
        let params = self.model.named_parameters_mut().into_iter().map(|(_, p)| p).collect();
        self.optimizer.step(params)?;
        self.iteration += 1;
        Ok(loss)
    }

    /// Foreground mean DSC on `cases`.
    pub fn evaluate(&self, cases: &[Case]) -> Result<MetricReport> {
        evaluate_case_set(cases, |x: &Tensor<T>| self.model.predict(x))
    }

    /// Runs the remaining iterations, reporting each curve point as it is produced.
    pub fn run<F: FnMut(&CurvePoint)>(&mut self, slices: &[Slice], val: &[Case], mut on_point: F) -> Result<Vec<CurvePoint>> {
        let mut curve = Vec::new();
        while self.iteration < self.config.iterations {
            let loss = self.step(slices)?;
            let it = self.iteration;
            let every = self.config.eval_every;
            let due = every > 0 && (it % every == 0 || it == self.config.iterations);
            let val_dsc = if due && !val.is_empty() { Some(self.evaluate(val)?.mean_dsc) } else { None };
            let point = CurvePoint { iteration: it, loss, val_dsc };
            on_point(&point);
            curve.push(point);
        }
        Ok(curve)
    }
}

/// A trained model and its loss curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: TransUnet<T>,
    pub curve: Vec<CurvePoint>,
}

/// Builds a model from `model_config` (seeded by `train_config.seed`) and trains it
/// on the dataset's training split, validating on its validation split.
pub fn train<T: Scalar>(model_config: &ModelConfig, train_config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome<T>> {
    let slices = dataset.train_slices()?;
    if slices.is_empty() {
        return Err(contract_err!("dataset has no training slices"));
    }
    let val = dataset.val_cases()?;
    let model = TransUnet::new(model_config.clone(), train_config.seed)?;
    let mut trainer = Trainer::new(model, train_config.clone())?;
    let curve = trainer.run(&slices, &val, |_| {})?;
    Ok(TrainOutcome { model: trainer.model, curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Skips,
    Patch,
    Resolution,
    Scale,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [Self::Skips, Self::Patch, Self::Resolution, Self::Scale];

    pub fn keyword(self) -> &'static str {
        match self {
            Self::Skips => "skips",
            Self::Patch => "patch",
            Self::Resolution => "resolution",
            Self::Scale => "scale",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl core::str::FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.keyword() == s)
            .ok_or_else(|| config_err!("unknown ablation axis '{s}' (expected skips, patch, resolution or scale)"))
    }
}

/// One model per axis value, labelled by that value.
pub fn ablation_configs(base: &ModelConfig, axis: AblationAxis) -> Result<Vec<(String, ModelConfig)>> {
    base.validate()?;
    let rows: Vec<(String, ModelConfig)> = match axis {
        AblationAxis::Skips => {
            if base.encoder != EncoderKind::Hybrid {
                return Err(config_err!("model.skips: skip-connections above 0 require the hybrid encoder"));
            }
            [0usize, 1, 3]
                .into_iter()
                .map(|k| {
                    let mut c = base.clone();
                    c.skip_count = k;
                    (k.to_string(), c)
                })
                .collect()
        }
        AblationAxis::Patch => [8usize, 16, 32]
            .into_iter()
            .map(|p| {
                let mut c = base.clone();
                c.apply_variant(Variant::VitCup);
                c.set("patch_size", &p.to_string()).expect("numeric value");
                (p.to_string(), c)
            })
            .collect(),
        AblationAxis::Resolution => [64usize, 224]
            .into_iter()
            .map(|r| {
                let mut c = base.clone();
                c.height = r;
                c.width = r;
                (r.to_string(), c)
            })
            .collect(),
        AblationAxis::Scale => [ScalePreset::Tiny, ScalePreset::Base]
            .into_iter()
            .map(|s| {
                let mut c = base.clone();
                c.apply_scale(s);
                (s.to_string(), c)
            })
            .collect(),
    };
    for (_, c) in &rows {
        c.validate()?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub variant: String,
    pub patch_size: usize,
    pub resolution: usize,
    pub seq_len: usize,
    pub parameters: usize,
    pub final_loss: f64,
    pub mean_dsc: f64,
    pub mean_hd_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const COLUMNS: [&'static str; 9] =
        ["value", "variant", "patch_size", "resolution", "seq_len", "parameters", "final_loss", "mean_dsc", "mean_hd_mm"];

    /// Row cells in [`COLUMNS`](Self::COLUMNS) order.
    pub fn cells(row: &AblationRow) -> [String; 9] {
        [
            row.value.clone(),
            row.variant.clone(),
            row.patch_size.to_string(),
            row.resolution.to_string(),
            row.seq_len.to_string(),
            row.parameters.to_string(),
            format!("{:.6}", row.final_loss),
            format!("{:.6}", row.mean_dsc),
            format!("{:.6}", row.mean_hd_mm),
        ]
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ablation over {}", self.axis)?;
        for c in Self::COLUMNS {
            write!(f, "{c:>12}")?;
        }
        for row in &self.rows {
            writeln!(f)?;
            for c in Self::cells(row) {
                write!(f, "{c:>12}")?;
            }
        }
        Ok(())
    }
}

/// Trains and evaluates one model per axis value with a shared seed. Each row's
/// dataset is `data` regenerated at that row's resolution and class count.
pub fn run_ablation<T: Scalar>(
    base: &ModelConfig,
    train_config: &TrainConfig,
    data: &DatasetSpec,
    axis: AblationAxis,
) -> Result<AblationTable> {
    let configs = ablation_configs(base, axis)?;
    let mut cache: Vec<(usize, Dataset)> = Vec::new();
    let mut rows = Vec::with_capacity(configs.len());
    for (value, cfg) in configs {
        if cfg.height != cfg.width {
            return Err(config_err!("ablation requires square inputs, got {}x{}", cfg.height, cfg.width));
        }
        let dataset = match cache.iter().find(|(r, _)| *r == cfg.height) {
            Some((_, d)) => d.clone(),
            None => {
                let spec = DatasetSpec { resolution: cfg.height, classes: cfg.num_classes, ..data.clone() };
                let d = spec.generate()?;
                cache.push((cfg.height, d.clone()));
                d
            }
        };
        let outcome = train::<T>(&cfg, &TrainConfig { eval_every: 0, ..train_config.clone() }, &dataset)?;
        let eval_cases = match dataset.val_cases()? {
            v if !v.is_empty() => v,
            _ => dataset.train_cases()?,
        };
        let report = evaluate_case_set(&eval_cases, |x: &Tensor<T>| outcome.model.predict(x))?;
        rows.push(AblationRow {
            value,
            variant: cfg.variant().map_or_else(|| "custom".to_string(), |v| v.to_string()),
            patch_size: cfg.patch_size,
            resolution: cfg.height,
            seq_len: cfg.seq_len(),
            parameters: outcome.model.parameter_count(),
            final_loss: outcome.curve.last().map_or(f64::NAN, |p| p.loss),
            mean_dsc: report.mean_dsc,
            mean_hd_mm: report.mean_hd_mm,
        });
    }
    Ok(AblationTable { axis, rows })
}
