//! Seeded synthetic classification data.
//!
//! Classes are Gaussian clouds around centroids placed on the unit
//! hypersphere. Every random draw comes from a ChaCha stream keyed by the
//! dataset seed and a fixed stream id, so regeneration is bit-exact and the
//! train split, the test split and the label noise never share randomness.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STREAM_CENTROIDS: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_TRAIN_NOISE: u64 = 4;
const STREAM_TEST_NOISE: u64 = 5;

/// Deterministic generator for stream `stream` of `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub dims: usize,
    /// Per-coordinate standard deviation of each class cloud.
    pub spread: f64,
    /// Fraction of samples whose label is replaced by a different class.
    pub label_noise_fraction: f64,
}

impl BlobParams {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::invalid("classes", "need at least 2 classes"));
        }
        if self.dims < 2 {
            return Err(Error::invalid("dims", "need at least 2 dimensions"));
        }
        if self.samples_per_class < 1 {
            return Err(Error::invalid("samples_per_class", "must be at least 1"));
        }
        if !self.spread.is_finite() || self.spread < 0.0 {
            return Err(Error::invalid("spread", "must be finite and >= 0"));
        }
        if !(0.0..0.5).contains(&self.label_noise_fraction) {
            return Err(Error::invalid("label_noise", "must be in [0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    /// Distance to the labelled centroid minus distance to the nearest other
    /// centroid; larger is harder.
    pub difficulty: Vec<f64>,
    pub centroids: Array2<f64>,
    pub class_count: usize,
    pub seed: u64,
    pub split: Split,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.ncols()
    }

    /// Rows selected by `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        Batch {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_csv(self.features.view(), &self.labels, writer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Margin-based difficulty of each sample against its labelled centroid.
pub fn compute_difficulty(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    centroids: ArrayView2<'_, f64>,
) -> Vec<f64> {
    features
        .outer_iter()
        .zip(labels)
        .map(|(x, &label)| {
            let own = distance(x, centroids.row(label));
            let nearest_other = centroids
                .outer_iter()
                .enumerate()
                .filter(|&(c, _)| c != label)
                .map(|(_, c)| distance(x, c))
                .fold(f64::INFINITY, f64::min);
            own - nearest_other
        })
        .collect()
}

fn make_centroids(class_count: usize, dims: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeded_rng(seed, STREAM_CENTROIDS);
    let mut centroids = Array2::<f64>::zeros((class_count, dims));
    for mut row in centroids.outer_iter_mut() {
        loop {
            row.mapv_inplace(|_| StandardNormal.sample(&mut rng));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row /= norm;
                break;
            }
        }
    }
    centroids
}

/// Training split of the blob task.
pub fn make_blobs(params: &BlobParams, seed: u64) -> Result<SyntheticDataset> {
    make_blobs_split(params, seed, Split::Train)
}

/// One split of the blob task. Both splits of a seed share centroids but draw
/// samples and label noise from separate streams.
pub fn make_blobs_split(params: &BlobParams, seed: u64, split: Split) -> Result<SyntheticDataset> {
    params.validate()?;
    let BlobParams {
        class_count,
        samples_per_class,
        dims,
        spread,
        label_noise_fraction,
    } = *params;

    let centroids = make_centroids(class_count, dims, seed);
    let (sample_stream, noise_stream) = match split {
        Split::Train => (STREAM_TRAIN, STREAM_TRAIN_NOISE),
        Split::Test => (STREAM_TEST, STREAM_TEST_NOISE),
    };

    let n = class_count * samples_per_class;
    let mut rng = seeded_rng(seed, sample_stream);
    let mut features = Array2::<f64>::zeros((n, dims));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.outer_iter_mut().enumerate() {
        let class = i % class_count;
        let centre = centroids.row(class);
        for (x, &c) in row.iter_mut().zip(centre.iter()) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = c + spread * z;
        }
        labels.push(class);
    }

    let flips = (label_noise_fraction * n as f64).floor() as usize;
    if flips > 0 {
        let mut noise = seeded_rng(seed, noise_stream);
        for i in index::sample(&mut noise, n, flips) {
            let offset = noise.random_range(1..class_count);
            labels[i] = (labels[i] + offset) % class_count;
        }
    }

    let difficulty = compute_difficulty(features.view(), &labels, centroids.view());
    Ok(SyntheticDataset {
        features,
        labels,
        difficulty,
        centroids,
        class_count,
        seed,
        split,
    })
}

/// Shuffle `0..len` with `epoch_seed` and cut it into consecutive batches.
/// The final batch is kept even when short.
pub fn batches(len: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 1 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    if batch_size > len {
        return Err(Error::invalid(
            "batch_size",
            format!("{batch_size} exceeds dataset size {len}"),
        ));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Strength of the feature-noise augmentation; zero means no augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentationStrength {
    noise_std: f64,
}

impl AugmentationStrength {
    pub fn new(noise_std: f64) -> Result<Self> {
        if !noise_std.is_finite() || noise_std < 0.0 {
            return Err(Error::invalid(
                "aug",
                format!("{noise_std} must be finite and >= 0"),
            ));
        }
        Ok(Self { noise_std })
    }

    pub fn noise_std(self) -> f64 {
        self.noise_std
    }
}

/// Add seeded Gaussian noise to every feature.
pub fn augment(batch: &Batch, strength: AugmentationStrength, seed: u64) -> Batch {
    let mut out = batch.clone();
    if strength.noise_std == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, strength.noise_std).expect("validated std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.features.mapv_inplace(|x| x + normal.sample(&mut rng));
    out
}

/// Write `f0..f{D-1},label` rows.
pub fn write_csv<W: Write>(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..features.ncols()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, label) in features.outer_iter().zip(labels) {
        let mut record: Vec<String> = row.iter().map(f64::to_string).collect();
        record.push(label.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Read rows written by [`write_csv`].
pub fn read_csv<R: Read>(reader: R) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let dims = headers.len().saturating_sub(1);
    if headers.get(dims) != Some("label") {
        return Err(Error::invalid("csv", "last column must be `label`"));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in r.records() {
        let record = record?;
        for field in record.iter().take(dims) {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Error::invalid("csv", format!("bad feature `{field}`: {e}")))?,
            );
        }
        let label = &record[dims];
        labels.push(
            label
                .parse::<usize>()
                .map_err(|e| Error::invalid("csv", format!("bad label `{label}`: {e}")))?,
        );
    }
    let features = Array2::from_shape_vec((labels.len(), dims), values)
        .map_err(|e| Error::invalid("csv", e.to_string()))?;
    Ok((features, labels))
}
