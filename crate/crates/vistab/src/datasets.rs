//! Dataset construction and manipulation: synthetic Gaussian clusters,
//! label corruption, train-time augmentation, single-example replacement,
//! and CSV round-tripping.
//!
//! CSV layout: a header `f0,...,f{k-1},label`, one comma-separated row per
//! example, features as finite floats and the label as an integer class
//! index. Files are written with shortest-round-trip float formatting so a
//! save/load cycle reproduces the dataset exactly.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::model::Example;
use crate::Result;

/// An in-memory labeled dataset with its provenance string (generator
/// parameters or source path plus content hash).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub feature_dim: usize,
    pub class_count: usize,
    pub provenance: String,
}

impl Dataset {
    /// Validates that every example matches the declared feature dimension
    /// and class range.
    pub fn new(
        examples: Vec<Example>,
        feature_dim: usize,
        class_count: usize,
        provenance: String,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if class_count < 2 {
            return Err(Error::out_of_range("class_count", "need at least two classes"));
        }
        for z in &examples {
            if z.x.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    got: z.x.len(),
                });
            }
            if z.y >= class_count {
                return Err(Error::LabelOutOfRange {
                    label: z.y,
                    classes: class_count,
                });
            }
            if z.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::out_of_range("features", "non-finite feature value"));
            }
        }
        Ok(Dataset {
            examples,
            feature_dim,
            class_count,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Balanced Gaussian clusters: class `c` gets every `classes`-th example,
/// drawn as `center_c + spread · N(0, I)`. Cluster centers are redrawn until
/// all pairwise distances reach 1, so as `spread → 0` the classes become
/// separable point masses. Deterministic per seed.
pub fn gen_blobs(
    n: usize,
    classes: usize,
    feature_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if classes < 2 {
        return Err(Error::out_of_range("classes", "need at least two classes"));
    }
    if feature_dim == 0 {
        return Err(Error::out_of_range("feature_dim", "need at least one feature"));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::out_of_range("spread", format!("must be finite and ≥ 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = draw_separated_centers(&mut rng, classes, feature_dim)?;
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let x: Vec<f64> = centers[c]
            .iter()
            .map(|&mu| mu + spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        examples.push(Example::new(x, c));
    }
    Dataset::new(
        examples,
        feature_dim,
        classes,
        format!("blobs(n={n},classes={classes},dim={feature_dim},spread={spread},seed={seed})"),
    )
}

/// Draws cluster centers from `N(0, 2.5² I)`, restarting until the minimum
/// pairwise distance is at least 1. Bounded retries keep termination certain.
fn draw_separated_centers(
    rng: &mut ChaCha8Rng,
    classes: usize,
    feature_dim: usize,
) -> Result<Vec<Vec<f64>>> {
    const SCALE: f64 = 2.5;
    const MIN_DIST: f64 = 1.0;
    for _ in 0..10_000 {
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| {
                (0..feature_dim)
                    .map(|_| SCALE * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut ok = true;
        'outer: for i in 0..classes {
            for j in i + 1..classes {
                if crate::numeric::l2_diff(&centers[i], &centers[j]) < MIN_DIST {
                    ok = false;
                    break 'outer;
                }
            }
        }
        if ok {
            return Ok(centers);
        }
    }
    Err(Error::Degenerate {
        reason: format!("could not place {classes} separated centers in {feature_dim} dimensions"),
    })
}

/// Returns a copy with `round(fraction · n)` labels (chosen without
/// replacement) resampled uniformly over the class range; a resampled label
/// may coincide with the original. Deterministic per seed.
pub fn corrupt_labels(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction.is_finite() && (0.0..=1.0).contains(&fraction)) {
        return Err(Error::out_of_range(
            "fraction",
            format!("must lie in [0, 1], got {fraction}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = (fraction * ds.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let mut examples = ds.examples.clone();
    for &i in order.iter().take(k) {
        examples[i].y = rng.random_range(0..ds.class_count);
    }
    Dataset::new(
        examples,
        ds.feature_dim,
        ds.class_count,
        format!("{} + corrupt(fraction={fraction},seed={seed})", ds.provenance),
    )
}

/// Train-time augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Standard deviation of additive feature jitter.
    pub jitter_scale: f64,
    /// Whether to flip the sign of coordinate 0 with probability 1/2
    /// (mirror reflection for 2-D synthetic data).
    pub flip: bool,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_scale.is_finite() && self.jitter_scale >= 0.0) {
            return Err(Error::out_of_range(
                "jitter_scale",
                format!("must be finite and ≥ 0, got {}", self.jitter_scale),
            ));
        }
        Ok(())
    }
}

/// One realized augmentation: a jitter vector and a flip decision, drawn
/// from the run's noise stream so that augmentation is part of the shared
/// training randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDraw {
    pub jitter: Vec<f64>,
    pub flip: bool,
}

impl AugmentDraw {
    /// Draws jitter (standard normals, scaled at application time) and the
    /// flip coin for one example occurrence.
    pub fn draw(rng: &mut ChaCha8Rng, feature_dim: usize, cfg: &AugmentConfig) -> Self {
        let jitter = (0..feature_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let flip = cfg.flip && rng.random_range(0..2u8) == 1;
        AugmentDraw { jitter, flip }
    }
}

/// Applies one augmentation draw to an example; the label never changes.
/// Reflection negates coordinate 0, so applying the same flip twice is the
/// identity on that coordinate.
pub fn augment(z: &Example, cfg: &AugmentConfig, draw: &AugmentDraw) -> Result<Example> {
    cfg.validate()?;
    if draw.jitter.len() != z.x.len() {
        return Err(Error::DimensionMismatch {
            expected: z.x.len(),
            got: draw.jitter.len(),
        });
    }
    let mut x: Vec<f64> = z
        .x
        .iter()
        .zip(&draw.jitter)
        .map(|(xi, j)| xi + cfg.jitter_scale * j)
        .collect();
    if draw.flip {
        x[0] = -x[0];
    }
    Ok(Example::new(x, z.y))
}

/// Copy of the dataset with the example at `index` replaced. The replacement
/// must match the feature dimension and class range; every other row is
/// carried over untouched.
pub fn replace_one(ds: &Dataset, index: usize, z: Example) -> Result<Dataset> {
    if index >= ds.len() {
        return Err(Error::IndexOutOfBounds {
            index,
            len: ds.len(),
        });
    }
    let mut examples = ds.examples.clone();
    examples[index] = z;
    Dataset::new(
        examples,
        ds.feature_dim,
        ds.class_count,
        format!("{} + replace(index={index})", ds.provenance),
    )
}

/// Expected CSV shape.
#[derive(Debug, Clone, Copy)]
pub struct CsvSchema {
    pub feature_dim: usize,
    pub class_count: usize,
}

fn expected_header(feature_dim: usize) -> Vec<String> {
    (0..feature_dim)
        .map(|i| format!("f{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect()
}

/// Loads a dataset from CSV, validating the header, feature finiteness, and
/// label range. Parse failures name the 1-based file line. The provenance
/// records the path and a SHA-256 content hash.
pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Dataset> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let digest = Sha256::digest(&raw);
    let hash_prefix: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(raw.as_slice());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let want = expected_header(schema.feature_dim);
    let got: Vec<String> = header.iter().map(str::to_string).collect();
    if got != want {
        return Err(Error::Parse {
            line: 1,
            reason: format!("header mismatch: expected {}, got {}", want.join(","), got.join(",")),
        });
    }

    let mut examples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(examples.len() + 2);
        if record.len() != schema.feature_dim + 1 {
            return Err(Error::Parse {
                line,
                reason: format!(
                    "expected {} fields, got {}",
                    schema.feature_dim + 1,
                    record.len()
                ),
            });
        }
        let mut x = Vec::with_capacity(schema.feature_dim);
        for (col, cell) in record.iter().take(schema.feature_dim).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                reason: format!("non-numeric feature {cell:?} in column f{col}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    reason: format!("non-finite feature {v} in column f{col}"),
                });
            }
            x.push(v);
        }
        let label_cell = record.get(schema.feature_dim).unwrap();
        let y: usize = label_cell.trim().parse().map_err(|_| Error::Parse {
            line,
            reason: format!("non-integer label {label_cell:?}"),
        })?;
        if y >= schema.class_count {
            return Err(Error::Parse {
                line,
                reason: format!("label {y} out of range for {} classes", schema.class_count),
            });
        }
        examples.push(Example::new(x, y));
    }
    Dataset::new(
        examples,
        schema.feature_dim,
        schema.class_count,
        format!("csv({},sha256:{hash_prefix})", path.display()),
    )
}

/// Writes the dataset in the CSV layout accepted by [`load_csv`].
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(expected_header(ds.feature_dim))
        .map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?;
    for (i, z) in ds.examples.iter().enumerate() {
        let mut row: Vec<String> = z.x.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", z.y));
        writer.write_record(&row).map_err(|e| Error::Parse {
            line: i + 2,
            reason: e.to_string(),
        })?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}
