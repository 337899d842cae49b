//! The five subcommands as library functions over a resolved [`RunConfig`].

use std::fs;
use std::path::{Path, PathBuf};

use transunet_core::data::{Case, Dataset};
use transunet_core::metrics::{evaluate_case_set, stack_slices, MetricReport};
use transunet_core::nn::{ModelConfig, TransUnet};
use transunet_core::train::{run_ablation, AblationAxis, AblationTable, CurvePoint, Trainer};
use transunet_core::{Error as CoreError, IntensityVolume, LabelVolume, Tensor};

use crate::checkpoint::{load_with_config, Checkpoint};
use crate::error::{Error, Result};
use crate::run_config::{RunConfig, RESOLVED_NAME};
use crate::tables::{write_ablation, write_report, CurveWriter};
use crate::{manifest, overlay, volume_file};

pub const CHECKPOINT_NAME: &str = "checkpoint.tuckpt";
pub const CURVE_NAME: &str = "curve.tsv";
pub const METRICS_NAME: &str = "metrics.json";
pub const ABLATION_NAME: &str = "ablation.tsv";
pub const PREDICTION_NAME: &str = "prediction.tuvol";
pub const OVERLAY_DIR: &str = "overlay";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

impl SplitChoice {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
            Self::All => "all",
        }
    }
}

impl std::str::FromStr for SplitChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            _ => Err(format!("unknown split '{s}' (train, val, test, all)")),
        }
    }
}

fn config_error(msg: String) -> Error {
    Error::Core(CoreError::Config(msg))
}

/// Creates the output directory and records the resolved configuration in it.
fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Usage("an output directory is required (--out DIR)".into()))?;
    fs::create_dir_all(&out).map_err(Error::io(&out))?;
    let path = out.join(RESOLVED_NAME);
    fs::write(&path, cfg.to_text()).map_err(Error::io(&path))?;
    Ok(out)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data_dir {
        Some(dir) => manifest::read_dataset(dir),
        None => Ok(cfg.data.generate()?),
    }
}

/// Rejects datasets whose slices or classes the model cannot consume.
fn check_fit(model: &ModelConfig, dataset: &Dataset) -> Result<()> {
    for case in &dataset.cases {
        check_volume_fit(model, &case.image)?;
        if case.labels.classes != model.num_classes {
            return Err(config_error(format!(
                "model.classes is {} but case '{}' has {} classes",
                model.num_classes, case.id, case.labels.classes
            )));
        }
    }
    Ok(())
}

fn check_volume_fit(model: &ModelConfig, image: &IntensityVolume) -> Result<()> {
    if model.in_channels != 1 {
        return Err(config_error(format!("volumes carry one channel, model.in_channels is {}", model.in_channels)));
    }
    if (image.height(), image.width()) != (model.height, model.width) {
        return Err(config_error(format!(
            "model input is {}x{} but slices are {}x{}",
            model.height,
            model.width,
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Model from a checkpoint: its own architecture unless the run configuration
/// names one, in which case the two must agree.
fn model_from_checkpoint(cfg: &RunConfig, path: &Path) -> Result<TransUnet<f32>> {
    if cfg.model_explicit {
        load_with_config(path, cfg.model.clone())
    } else {
        Checkpoint::load(path)?.build_model()
    }
}

pub fn cmd_generate_data(cfg: &RunConfig) -> Result<usize> {
    cfg.data.validate()?;
    let out = prepare_out(cfg)?;
    let dataset = cfg.data.generate()?;
    manifest::write_dataset(&out, &dataset)?;
    Ok(dataset.cases.len())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub curve: Vec<CurvePoint>,
    pub checkpoint: PathBuf,
    pub val_report: Option<MetricReport>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let out = prepare_out(cfg)?;
    let dataset = load_dataset(cfg)?;
    check_fit(&cfg.model, &dataset)?;
    let slices = dataset.train_slices()?;
    let val = dataset.val_cases()?;

    let model = TransUnet::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let mut curve_file = CurveWriter::create(&out.join(CURVE_NAME))?;
    let mut write_err = None;
    let curve = trainer.run(&slices, &val, |p| {
        if write_err.is_none() {
            write_err = curve_file.push(p).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }

    let checkpoint = out.join(CHECKPOINT_NAME);
    Checkpoint::from_model(&trainer.model, trainer.iteration, cfg.train.seed).save(&checkpoint)?;
    let val_report = if val.is_empty() {
        None
    } else {
        let report = trainer.evaluate(&val)?;
        write_report(&out.join(METRICS_NAME), &report)?;
        Some(report)
    };
    Ok(TrainSummary { curve, checkpoint, val_report })
}

pub fn select_split(dataset: &Dataset, split: SplitChoice) -> Result<Vec<Case>> {
    Ok(match split {
        SplitChoice::Train => dataset.train_cases()?,
        SplitChoice::Val => dataset.val_cases()?,
        SplitChoice::Test => dataset.test_cases()?,
        SplitChoice::All => dataset.cases.clone(),
    })
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, split: SplitChoice) -> Result<MetricReport> {
    let model = model_from_checkpoint(cfg, checkpoint)?;
    let dataset = load_dataset(cfg)?;
    check_fit(&model.config, &dataset)?;
    let cases = select_split(&dataset, split)?;
    if cases.is_empty() {
        return Err(config_error(format!("the {} split has no cases", split.name())));
    }
    let report = evaluate_case_set(&cases, |x: &Tensor<f32>| model.predict(x))?;
    if cfg.out.is_some() {
        let out = prepare_out(cfg)?;
        write_report(&out.join(METRICS_NAME), &report)?;
    }
    Ok(report)
}

pub fn cmd_ablate(cfg: &RunConfig, axis: AblationAxis) -> Result<AblationTable> {
    if cfg.data_dir.is_some() {
        return Err(config_error("ablations generate their own data per row; unset data.dir".into()));
    }
    cfg.validate()?;
    let out = prepare_out(cfg)?;
    let table = run_ablation::<f32>(&cfg.model, &cfg.train, &cfg.data, axis)?;
    write_ablation(&out.join(ABLATION_NAME), &table)?;
    Ok(table)
}

/// Slice-by-slice argmax labels for a whole volume.
pub fn predict_volume(model: &TransUnet<f32>, image: &IntensityVolume) -> Result<LabelVolume> {
    check_volume_fit(&model.config, image)?;
    let logits = (0..image.depth())
        .map(|z| model.predict(&image.slice_tensor(z)))
        .collect::<transunet_core::Result<Vec<_>>>()?;
    Ok(stack_slices(&logits, image.spacing)?)
}

#[derive(Debug, Clone)]
pub struct PredictSummary {
    pub prediction: PathBuf,
    pub overlays: usize,
}

pub fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, input: &Path, with_overlay: bool) -> Result<PredictSummary> {
    let model = model_from_checkpoint(cfg, checkpoint)?;
    let image = volume_file::read_intensity(input)?;
    let labels = predict_volume(&model, &image)?;
    let out = prepare_out(cfg)?;
    let prediction = out.join(PREDICTION_NAME);
    volume_file::write_labels(&prediction, &labels)?;
    let overlays = if with_overlay { overlay::write_overlays(&out.join(OVERLAY_DIR), &image, &labels)? } else { 0 };
    Ok(PredictSummary { prediction, overlays })
}
