//! Run configuration, the SGD training loop, checkpoints and dataset-level
//! inference.
//!
//! A run directory holds:
//!
//! * `losses.csv`: `iteration,loss_af,loss_ab,loss_rcnn_cls,loss_rcnn_reg`,
//!   one row per optimizer step, batch means.
//! * `run.log`: the effective configuration and per-epoch summaries.
//! * `checkpoint.bin`: parameters (`model.`) and momentum (`momentum.`)
//!   after the latest epoch, with the run configuration in the header.
//! * `train.lock`: present while a training process owns the directory.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assign::mix_seed;
use crate::data::{evaluate_map, ApMetric, Dataset, MapReport, Object, Sample, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::OrientedBox;
use crate::heads::Detection;
use crate::model::{image_tensor, Detector, ImageLosses, ModelConfig};
use crate::netcore::checkpoint::{read_checkpoint, write_checkpoint};
use crate::netcore::{Scalar, Sgd, SgdConfig};

pub const LOSS_CSV_HEADER: &str = "iteration,loss_af,loss_ab,loss_rcnn_cls,loss_rcnn_reg";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOCK_FILE: &str = "train.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    /// Linear warmup from `warmup_ratio * lr` over this many steps.
    pub warmup_iters: usize,
    pub warmup_ratio: f64,
    /// Epochs (1-based) after which the rate drops tenfold. Empty means
    /// `round(2E/3)` and `round(8E/9)`.
    pub decay_epochs: Vec<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            momentum: 0.9,
            weight_decay: 1e-4,
            max_grad_norm: 35.0,
            warmup_iters: 100,
            warmup_ratio: 1.0 / 3.0,
            decay_epochs: Vec::new(),
        }
    }
}

impl OptimizerConfig {
    pub fn decay_steps(&self, epochs: usize) -> Vec<usize> {
        if !self.decay_epochs.is_empty() {
            return self.decay_epochs.clone();
        }
        let e = epochs as f64;
        vec![(e * 2.0 / 3.0).round() as usize, (e * 8.0 / 9.0).round() as usize]
    }

    /// Rate for a step taken during `epoch` (0-based) at global `iteration`.
    pub fn lr_at(&self, epochs: usize, epoch: usize, iteration: usize) -> f64 {
        let drops = self.decay_steps(epochs).iter().filter(|&&d| epoch >= d).count();
        let mut lr = self.lr * 0.1f64.powi(drops as i32);
        if iteration < self.warmup_iters {
            let t = iteration as f64 / self.warmup_iters as f64;
            lr *= self.warmup_ratio + (1.0 - self.warmup_ratio) * t;
        }
        lr
    }
}

/// Where a split comes from: a dataset directory, or `count` synthetic
/// scenes drawn from `scene`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub path: Option<PathBuf>,
    pub count: usize,
    pub scene: SceneSpec,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            path: None,
            count: 500,
            scene: SceneSpec::default(),
        }
    }
}

impl SplitConfig {
    pub fn load(&self) -> Result<Dataset> {
        match &self.path {
            Some(p) => Dataset::load(p),
            None => Dataset::synthetic(&self.scene, self.count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub flip_prob: f64,
    pub out_dir: PathBuf,
    pub optimizer: OptimizerConfig,
    pub train: SplitConfig,
    pub val: SplitConfig,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            batch_size: 2,
            flip_prob: 0.5,
            out_dir: PathBuf::from("runs/default"),
            optimizer: OptimizerConfig::default(),
            train: SplitConfig::default(),
            val: SplitConfig {
                count: 100,
                scene: SceneSpec {
                    seed: 1,
                    ..SceneSpec::default()
                },
                ..SplitConfig::default()
            },
            model: ModelConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML laid over [`RunConfig::default`], so a partial table
    /// such as `[val.scene]` keeps the other defaults of `val`. Unknown keys
    /// are errors that name the key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut tree = toml::Value::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut tree, toml::Value::Table(file));
        let cfg: Self = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `dotted.key=value` overrides, the value written as TOML
    /// (`epochs=3`, `model.rpn.conv_kind="standard"`). Unknown keys are
    /// errors.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
            let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .map(|mut t| t.remove("v").expect("parsed key"))
                .or_else(|_| Ok::<_, Error>(toml::Value::String(raw.to_string())))?;
            let mut node = &mut tree;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{key}: {part} is not a table")))?;
                if i + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            }
        }
        let cfg: Self = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip_prob must lie in [0, 1]".into()));
        }
        if self.model.num_classes != self.train.scene.classes.len() && self.train.path.is_none() {
            return Err(Error::Config(format!(
                "model.num_classes = {} but the train scene has {} classes",
                self.model.num_classes,
                self.train.scene.classes.len()
            )));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Batch-mean losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub iteration: usize,
    pub loss_af: f64,
    pub loss_ab: f64,
    pub loss_rcnn_cls: f64,
    pub loss_rcnn_reg: f64,
}

impl StepLosses {
    pub fn loss_rpn(&self) -> f64 {
        self.loss_af + self.loss_ab
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iteration, self.loss_af, self.loss_ab, self.loss_rcnn_cls, self.loss_rcnn_reg
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: Vec<StepLosses>,
    /// Mean `loss_rpn` per epoch run in this call.
    pub epoch_rpn: Vec<f64>,
    pub epochs_done: usize,
}

/// Horizontally mirrored copy of a sample.
pub fn flip_sample(s: &Sample) -> Sample {
    let mut pixels = Vec::with_capacity(s.pixels.len());
    for row in s.pixels.chunks(s.width) {
        pixels.extend(row.iter().rev());
    }
    Sample {
        id: s.id.clone(),
        width: s.width,
        height: s.height,
        pixels,
        objects: s
            .objects
            .iter()
            .map(|o| Object {
                obb: o.obb.flip_horizontal(s.width as f64),
                ..*o
            })
            .collect(),
    }
}

fn gt_pairs(s: &Sample) -> Vec<(OrientedBox, usize)> {
    s.objects.iter().filter(|o| !o.difficult).map(|o| (o.obb, o.class_id)).collect()
}

/// Holds the run directory for one process; removed on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} exists: another training process owns this directory",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Training state that survives between epochs.
pub struct Trainer {
    pub config: RunConfig,
    pub model: Detector<f32>,
    pub optimizer: Sgd<f32>,
    pub epoch: usize,
    pub iteration: usize,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = Detector::new(config.model.clone(), config.seed);
        let optimizer = Sgd::new(sgd_config(&config.optimizer), &model.params);
        Ok(Self {
            config,
            model,
            optimizer,
            epoch: 0,
            iteration: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::save`]. The
    /// checkpoint's architecture must match `config.model`.
    pub fn resume(config: RunConfig, path: &Path) -> Result<Self> {
        let mut t = Self::new(config)?;
        let ck = read_checkpoint(File::open(path)?)?;
        ck.load_into("model.", &mut t.model.params)?;
        if ck.has_group("momentum.") {
            ck.load_into("momentum.", &mut t.optimizer.velocity)?;
        }
        t.epoch = ck.meta["epoch"].as_u64().unwrap_or(0) as usize;
        t.iteration = ck.meta["iteration"].as_u64().unwrap_or(0) as usize;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "epoch": self.epoch,
            "iteration": self.iteration,
            "config": self.config,
        });
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            write_checkpoint(
                &mut w,
                meta,
                &[("model.", &self.model.params), ("momentum.", &self.optimizer.velocity)],
            )?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// One optimizer step on `batch`. Per-image gradients are summed in
    /// batch order and scaled by `1 / batch.len()`.
    pub fn step(&mut self, batch: &[Sample]) -> Result<StepLosses> {
        let mut grads = self.model.params.zeros_like();
        let mut sum = ImageLosses::default();
        for (k, s) in batch.iter().enumerate() {
            let img = image_tensor::<f32>(&s.pixels, s.height, s.width)?;
            let seed = mix_seed(self.config.seed, (self.iteration * batch.len() + k) as u64 + (1 << 32));
            let l = self.model.train_image(&img, &gt_pairs(s), seed, &mut grads)?;
            sum.accumulate(&l);
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n as f32);
        if !grads.all_finite() {
            return Err(Error::Config(format!("non-finite gradient at iteration {}", self.iteration)));
        }
        let lr = self.config.optimizer.lr_at(self.config.epochs, self.epoch, self.iteration);
        self.optimizer.step(&mut self.model.params, &grads, lr);
        let out = StepLosses {
            iteration: self.iteration,
            loss_af: sum.loss_af / n,
            loss_ab: sum.loss_ab / n,
            loss_rcnn_cls: sum.loss_rcnn_cls / n,
            loss_rcnn_reg: sum.loss_rcnn_reg() / n,
        };
        self.iteration += 1;
        Ok(out)
    }

    /// Shuffled, possibly flipped batches for one epoch.
    pub fn epoch_batches(&self, data: &Dataset) -> Vec<Vec<Sample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, 1000 + self.epoch as u64));
        let mut order: Vec<usize> = (0..data.samples.len()).collect();
        order.shuffle(&mut rng);
        let samples: Vec<Sample> = order
            .iter()
            .map(|&i| {
                let s = &data.samples[i];
                if rng.gen::<f64>() < self.config.flip_prob {
                    flip_sample(s)
                } else {
                    s.clone()
                }
            })
            .collect();
        samples.chunks(self.config.batch_size).map(|c| c.to_vec()).collect()
    }

    /// Trains until `config.epochs`, logging into `out_dir` and saving a
    /// checkpoint after each epoch.
    pub fn run(&mut self, data: &Dataset, out_dir: &Path) -> Result<TrainSummary> {
        if data.samples.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let _lock = RunLock::acquire(out_dir)?;
        let csv_path = out_dir.join("losses.csv");
        let fresh = self.iteration == 0 || !csv_path.exists();
        let mut csv = BufWriter::new(if fresh {
            File::create(&csv_path)?
        } else {
            OpenOptions::new().append(true).open(&csv_path)?
        });
        if fresh {
            writeln!(csv, "{LOSS_CSV_HEADER}")?;
        }
        let mut log = OpenOptions::new().create(true).append(true).open(out_dir.join("run.log"))?;
        writeln!(log, "# effective configuration\n{}", self.config.to_toml()?)?;
        writeln!(log, "start epoch {} iteration {}", self.epoch, self.iteration)?;

        let mut summary = TrainSummary {
            steps: Vec::new(),
            epoch_rpn: Vec::new(),
            epochs_done: self.epoch,
        };
        while self.epoch < self.config.epochs {
            let mut rpn_sum = 0.0;
            let batches = self.epoch_batches(data);
            for b in &batches {
                let s = self.step(b)?;
                writeln!(csv, "{}", s.csv_row())?;
                rpn_sum += s.loss_rpn();
                summary.steps.push(s);
            }
            csv.flush()?;
            let mean = rpn_sum / batches.len() as f64;
            summary.epoch_rpn.push(mean);
            self.epoch += 1;
            self.save(&out_dir.join(CHECKPOINT_FILE))?;
            writeln!(log, "epoch {} iterations {} mean_loss_rpn {mean}", self.epoch, self.iteration)?;
        }
        summary.epochs_done = self.epoch;
        Ok(summary)
    }
}

fn sgd_config(o: &OptimizerConfig) -> SgdConfig {
    SgdConfig {
        momentum: o.momentum,
        weight_decay: o.weight_decay,
        max_grad_norm: (o.max_grad_norm > 0.0).then_some(o.max_grad_norm),
    }
}

/// Detector and run configuration from a checkpoint.
pub fn load_detector(path: &Path) -> Result<(Detector<f32>, RunConfig)> {
    let ck = read_checkpoint(File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?)?;
    let config: RunConfig = serde_json::from_value(ck.meta["config"].clone())
        .map_err(|e| Error::Checkpoint(format!("bad config in header: {e}")))?;
    let mut model = Detector::new(config.model.clone(), config.seed);
    ck.load_into("model.", &mut model.params)?;
    Ok((model, config))
}

/// Detections for every sample, in dataset order.
pub fn predict<T: Scalar>(model: &Detector<T>, data: &Dataset) -> Result<Vec<Vec<Detection>>> {
    data.samples
        .iter()
        .map(|s| model.detect(&image_tensor::<T>(&s.pixels, s.height, s.width)?))
        .collect()
}

/// Rotated mAP of `model` on `data`.
pub fn evaluate<T: Scalar>(
    model: &Detector<T>,
    data: &Dataset,
    iou_thr: f64,
    metric: ApMetric,
) -> Result<MapReport> {
    if data.samples.is_empty() {
        return Err(Error::Eval("evaluation split is empty".into()));
    }
    evaluate_detections(&predict(model, data)?, data, iou_thr, metric)
}

/// Rotated mAP of precomputed detections, one list per sample of `data`.
pub fn evaluate_detections(
    detections: &[Vec<Detection>],
    data: &Dataset,
    iou_thr: f64,
    metric: ApMetric,
) -> Result<MapReport> {
    evaluate_map(detections, &data.ground_truth(), data.classes.len(), iou_thr, metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let o = OptimizerConfig::default();
        assert_eq!(o.decay_steps(30), vec![20, 27]);
        assert_eq!(o.decay_steps(12), vec![8, 11]);
        assert!((o.lr_at(30, 0, 0) - 0.005 / 3.0).abs() < 1e-15);
        assert_eq!(o.lr_at(30, 5, 500), 0.005);
        assert!((o.lr_at(30, 20, 5000) - 0.0005).abs() < 1e-15);
        assert!((o.lr_at(30, 29, 9000) - 0.00005).abs() < 1e-15);
    }

    #[test]
    fn toml_round_trip_and_unknown_key() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, back);
        let err = RunConfig::from_toml("epochs = 3\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let o = c
            .with_overrides(&["epochs=3".into(), "model.rpn.conv_kind=\"standard\"".into()])
            .unwrap();
        assert_eq!(o.epochs, 3);
        assert_eq!(o.model.rpn.conv_kind, crate::rpn::ConvKind::Standard);
        assert!(c.with_overrides(&["model.rpn.bogus=1".into()]).is_err());
        let partial = RunConfig::from_toml("[val.scene]\nnoise_sigma = 2.0\n").unwrap();
        assert_eq!(partial.val.count, 100);
        assert_eq!(partial.val.scene.seed, 1);
        assert_eq!(partial.val.scene.noise_sigma, 2.0);
    }

    #[test]
    fn flip_twice_is_identity() {
        let ds = Dataset::synthetic(
            &SceneSpec {
                width: 32,
                height: 32,
                long_edge: [8.0, 12.0],
                min_short_edge: 3.0,
                max_instances: 2,
                ..SceneSpec::default()
            },
            1,
        )
        .unwrap();
        let s = &ds.samples[0];
        let f = flip_sample(&flip_sample(s));
        assert_eq!(f.pixels, s.pixels);
        for (a, b) in f.objects.iter().zip(&s.objects) {
            assert!((a.obb.cx - b.obb.cx).abs() < 1e-9 && (a.obb.theta - b.obb.theta).abs() < 1e-9);
        }
    }
}
