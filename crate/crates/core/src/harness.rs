//! Seeded training runs, run logs, paired comparisons and f_c sweeps.
//!
//! Every run is single-threaded and fully determined by `(config, seed)`.
//! Distinct runs may execute in parallel; results are always returned in seed
//! order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, KeyValues};
use crate::controllers::ControllerSet;
use crate::data::{
    augment, batches, make_blobs_split, seeded_rng, AugmentationStrength, Split, SyntheticDataset,
};
use crate::error::{Error, Result};
use crate::nn::{clip_gradients, mask_high_loss, DenseNet, Sgd, SgdSettings};

const STREAM_INIT: u64 = 10;
const STREAM_SHUFFLE: u64 = 11;
const STREAM_AUGMENT: u64 = 12;

/// Column order of the per-run CSV log.
pub const RUN_LOG_HEADER: [&str; 11] = [
    "epoch",
    "lr",
    "wd",
    "momentum",
    "batch_size",
    "temperature",
    "clip",
    "train_loss",
    "masked",
    "test_acc",
    "ms",
];

/// One epoch of a run. `test_acc` is in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: usize,
    pub lr: f64,
    pub wd: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub clip: Option<f64>,
    pub train_loss: f64,
    pub masked: usize,
    pub test_acc: f64,
    pub ms: u64,
}

impl RunRecord {
    /// The hyper-parameter part of the record.
    pub fn settings(&self) -> (f64, f64, f64, usize, f64, Option<f64>) {
        (
            self.lr,
            self.wd,
            self.momentum,
            self.batch_size,
            self.temperature,
            self.clip,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    /// Test accuracy after the last epoch, in percent.
    pub final_accuracy: f64,
}

/// Train and test splits for `seed`.
pub fn make_datasets(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(SyntheticDataset, SyntheticDataset)> {
    let train = make_blobs_split(&config.dataset.train_params(), seed, Split::Train)?;
    let test = make_blobs_split(&config.dataset.test_params(), seed, Split::Test)?;
    Ok((train, test))
}

fn diverged(epoch: usize, set: &ControllerSet, err: Error) -> Error {
    match err {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!(
                "epoch {epoch} (lr={}, wd={}, momentum={}, batch_size={}, temperature={}, clip={:?}): {context}",
                set.lr, set.weight_decay, set.momentum, set.batch_size, set.temperature, set.clip_threshold
            ),
        },
        other => other,
    }
}

/// Train one seed of `config`.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    config.validate()?;
    let ranges = config.controller_ranges()?;
    let augmentation = config.augmentation_schedule()?;
    let (train, test) = make_datasets(config, seed)?;

    let mut net = DenseNet::new(&config.layer_sizes(), &mut seeded_rng(seed, STREAM_INIT))?;
    let mut optimizer = Sgd::new(&net);
    let mut shuffle_seeds = seeded_rng(seed, STREAM_SHUFFLE);
    let mut augment_seeds = seeded_rng(seed, STREAM_AUGMENT);

    let mut records = Vec::with_capacity(config.total_epochs());
    for epoch in 0..config.total_epochs() {
        let started = Instant::now();
        let set = ranges.resolve_epoch(epoch);
        let strength = augmentation
            .map(|s| AugmentationStrength::new(s.value(epoch)))
            .transpose()?;
        let settings = SgdSettings {
            lr: set.lr,
            momentum: set.momentum,
            weight_decay: set.weight_decay,
        };

        let epoch_seed: u64 = shuffle_seeds.random();
        let mut loss_sum = 0.0;
        let mut kept = 0usize;
        let mut masked = 0usize;
        for indices in batches(train.len(), set.batch_size, epoch_seed)? {
            let mut batch = train.gather(&indices);
            if let Some(strength) = strength {
                batch = augment(&batch, strength, augment_seeds.random());
            }
            let cache = net.forward_cached(batch.features.view());
            let mask = if config.mask_high_loss {
                let threshold = set
                    .clip_threshold
                    .expect("validated: masking has a threshold");
                let losses =
                    crate::nn::cross_entropy_t(cache.logits(), &batch.labels, set.temperature)
                        .map_err(|e| diverged(epoch, &set, e))?;
                mask_high_loss(&losses, threshold)
            } else {
                vec![true; batch.len()]
            };
            let mut grads = net
                .backward(&cache, &batch.labels, set.temperature, &mask)
                .map_err(|e| diverged(epoch, &set, e))?;
            if !config.mask_high_loss {
                if let Some(threshold) = set.clip_threshold {
                    clip_gradients(&mut grads, threshold, set.clip_mode)?;
                }
            }
            loss_sum += grads.mean_loss * grads.contributing as f64;
            kept += grads.contributing;
            masked += batch.len() - grads.contributing;
            optimizer
                .step(&mut net, &grads, settings)
                .map_err(|e| diverged(epoch, &set, e))?;
        }

        let test_acc = 100.0 * net.accuracy(test.features.view(), &test.labels);
        records.push(RunRecord {
            epoch,
            lr: set.lr,
            wd: set.weight_decay,
            momentum: set.momentum,
            batch_size: set.batch_size,
            temperature: set.temperature,
            clip: set.clip_threshold,
            train_loss: if kept == 0 {
                0.0
            } else {
                loss_sum / kept as f64
            },
            masked,
            test_acc,
            ms: if config.timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
    }

    let final_accuracy = records.last().map_or(0.0, |r| r.test_acc);
    Ok(RunOutcome {
        seed,
        records,
        final_accuracy,
    })
}

/// Run every seed, possibly in parallel. Output order follows `seeds`.
pub fn run_seeds(config: &ExperimentConfig, seeds: &[u64]) -> Vec<Result<RunOutcome>> {
    seeds
        .par_iter()
        .map(|&s| run_experiment(config, s))
        .collect()
}

/// Write records as CSV with [`RUN_LOG_HEADER`]. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_run_log<W: Write>(records: &[RunRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RUN_LOG_HEADER)?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.wd.to_string(),
            r.momentum.to_string(),
            r.batch_size.to_string(),
            r.temperature.to_string(),
            r.clip.map(|c| c.to_string()).unwrap_or_default(),
            r.train_loss.to_string(),
            r.masked.to_string(),
            r.test_acc.to_string(),
            r.ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_run_log_file(records: &[RunRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_run_log(records, std::io::BufWriter::new(file))
}

pub fn read_run_log<R: Read>(reader: R) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(RUN_LOG_HEADER.iter().copied()) {
        return Err(Error::invalid("run log", "unexpected header"));
    }
    fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
        rec[i]
            .parse()
            .map_err(|_| Error::invalid(RUN_LOG_HEADER[i], format!("cannot parse `{}`", &rec[i])))
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(RunRecord {
                epoch: field(&rec, 0)?,
                lr: field(&rec, 1)?,
                wd: field(&rec, 2)?,
                momentum: field(&rec, 3)?,
                batch_size: field(&rec, 4)?,
                temperature: field(&rec, 5)?,
                clip: if rec[6].is_empty() {
                    None
                } else {
                    Some(field(&rec, 6)?)
                },
                train_loss: field(&rec, 7)?,
                masked: field(&rec, 8)?,
                test_acc: field(&rec, 9)?,
                ms: field(&rec, 10)?,
            })
        })
        .collect()
}

/// Mean and sample standard deviation; `(NaN, NaN)` for no values, std 0 for one.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub message: String,
}

/// Final accuracies of one configuration over a seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    /// One entry per seed; `None` where the run aborted.
    pub per_seed: Vec<Option<f64>>,
    pub mean: f64,
    pub std: f64,
    pub completed: usize,
    pub failures: Vec<RunFailure>,
    pub config: KeyValues,
}

impl ArmSummary {
    fn from_runs(
        config: &ExperimentConfig,
        seeds: &[u64],
        runs: Vec<Result<RunOutcome>>,
    ) -> Result<Self> {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut failures = Vec::new();
        for (&seed, run) in seeds.iter().zip(runs) {
            match run {
                Ok(outcome) => per_seed.push(Some(outcome.final_accuracy)),
                Err(e) if e.is_config_error() => return Err(e),
                Err(e) => {
                    failures.push(RunFailure {
                        seed,
                        message: e.to_string(),
                    });
                    per_seed.push(None);
                }
            }
        }
        let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
        let (mean, std) = mean_std(&ok);
        Ok(Self {
            per_seed,
            mean,
            std,
            completed: ok.len(),
            failures,
            config: config.to_pairs(),
        })
    }

    /// `mean ± std`, the way accuracy tables are usually printed.
    pub fn display(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub seeds: Vec<u64>,
    pub arm_a: ArmSummary,
    pub arm_b: ArmSummary,
    /// `b - a` per seed, in accuracy points; `None` if either run failed.
    pub paired_differences: Vec<Option<f64>>,
    pub mean_paired_difference: f64,
    pub std_paired_difference: f64,
}

impl ComparisonSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Paired-seed comparison of two configurations of the same task.
pub fn compare(
    config_a: &ExperimentConfig,
    config_b: &ExperimentConfig,
    seeds: &[u64],
) -> Result<ComparisonSummary> {
    if seeds.len() < 2 {
        return Err(Error::invalid(
            "seeds",
            "a comparison needs at least 2 seeds",
        ));
    }
    config_a.validate()?;
    config_b.validate()?;
    config_a.same_task_as(config_b)?;

    let arm_a = ArmSummary::from_runs(config_a, seeds, run_seeds(config_a, seeds))?;
    let arm_b = ArmSummary::from_runs(config_b, seeds, run_seeds(config_b, seeds))?;
    let paired_differences: Vec<Option<f64>> = arm_a
        .per_seed
        .iter()
        .zip(&arm_b.per_seed)
        .map(|(a, b)| Some((*b)? - (*a)?))
        .collect();
    let diffs: Vec<f64> = paired_differences.iter().flatten().copied().collect();
    let (mean_paired_difference, std_paired_difference) = mean_std(&diffs);
    Ok(ComparisonSummary {
        seeds: seeds.to_vec(),
        arm_a,
        arm_b,
        paired_differences,
        mean_paired_difference,
        std_paired_difference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cyclical_factor: f64,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<Option<f64>>,
    pub failures: Vec<RunFailure>,
}

/// `config` with every controller using cycle shape `cyclical_factor`.
pub fn with_cyclical_factor(config: &ExperimentConfig, cyclical_factor: f64) -> ExperimentConfig {
    let mut cfg = config.clone();
    cfg.cyclical_factor = cyclical_factor;
    for r in [
        &mut cfg.wd,
        &mut cfg.temperature_range,
        &mut cfg.clip_range,
        &mut cfg.momentum_range,
        &mut cfg.augmentation,
    ]
    .into_iter()
    .flatten()
    {
        r.cyclical_factor = None;
    }
    if let Some(r) = &mut cfg.batch_range {
        r.cyclical_factor = None;
    }
    cfg
}

/// One row per cycle shape, all rows using the same seeds.
pub fn sweep_fc(
    config: &ExperimentConfig,
    fc_values: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    if fc_values.is_empty() {
        return Err(Error::invalid("fc_values", "need at least one value"));
    }
    let tag = |fc: f64| {
        move |e: Error| Error::Sweep {
            cyclical_factor: fc,
            source: Box::new(e),
        }
    };
    let configs = fc_values
        .iter()
        .map(|&fc| {
            let cfg = with_cyclical_factor(config, fc);
            cfg.validate().map_err(tag(fc))?;
            Ok((fc, cfg))
        })
        .collect::<Result<Vec<_>>>()?;

    configs
        .into_iter()
        .map(|(fc, cfg)| {
            let arm =
                ArmSummary::from_runs(&cfg, seeds, run_seeds(&cfg, seeds)).map_err(tag(fc))?;
            Ok(SweepRow {
                cyclical_factor: fc,
                mean: arm.mean,
                std: arm.std,
                per_seed: arm.per_seed,
                failures: arm.failures,
            })
        })
        .collect()
}

/// Hyper-parameter trace a run of `config` will log, computed without training.
pub fn planned_settings(config: &ExperimentConfig) -> Result<BTreeMap<usize, ControllerSet>> {
    let ranges = config.controller_ranges()?;
    Ok((0..config.total_epochs())
        .map(|e| (e, ranges.resolve_epoch(e)))
        .collect())
}
