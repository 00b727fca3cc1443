//! Synthetic attribute → glyph dataset, its persistence, and the attribute oracle.

mod glyph;
mod io;

pub use glyph::{
    all_attribute_vectors, attribute_oracle, render_glyph, Geometry, OracleReading, ATTRIBUTE_NAMES, COLUMN,
    FRAME, HAZE, HOLLOW, INTENSITY, NUM_ATTRIBUTES, ROW, SHAPE, SIZE,
};
pub use io::{load_dataset, read_dataset, read_pgm, save_dataset, write_dataset, write_pgm, DATASET_MAGIC};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::Rng;
use crate::ndgrad::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("attribute vector must have 8 entries, got {0}")]
    AttributeLength(usize),
    #[error("attribute {index} is {value}, expected 0 or 1")]
    NonBinary { index: usize, value: f64 },
    #[error("invalid glyph config: {0}")]
    InvalidConfig(String),
    #[error("dataset needs at least 10 examples, got {0}")]
    TooSmall(usize),
    #[error("bad dataset magic {0:?}")]
    BadMagic(Vec<u8>),
    #[error("dataset file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{what} entry {index} is {value}, outside the allowed range")]
    RangeViolation {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("invalid splits: {0}")]
    InvalidSplits(String),
    #[error("unknown split {0:?} (expected train|validation|test)")]
    UnknownSplit(String),
    #[error("invalid PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphConfig {
    pub side: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for GlyphConfig {
    fn default() -> Self {
        Self {
            side: 16,
            noise: 0.05,
            seed: 7,
        }
    }
}

impl GlyphConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.side < 8 {
            return Err(DataError::InvalidConfig(format!("side must be at least 8, got {}", self.side)));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(DataError::InvalidConfig(format!(
                "noise must lie in [0, 0.5), got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "validation" | "val" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            other => Err(DataError::UnknownSplit(other.to_string())),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::Test => "test",
        })
    }
}

/// Paired images `x` (`n × m`, pixels in [0, 1]) and attributes `y`
/// (`n × A`, binary) with disjoint train/validation/test index lists.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDataset {
    pub x: Tensor,
    pub y: Tensor,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl MultimodalDataset {
    pub fn new(
        x: Tensor,
        y: Tensor,
        train: Vec<usize>,
        validation: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self, DataError> {
        let d = Self {
            x,
            y,
            train,
            validation,
            test,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.len();
        if self.y.rows() != n {
            return Err(DataError::InvalidSplits(format!(
                "{} images but {} attribute rows",
                n,
                self.y.rows()
            )));
        }
        if let Some((i, &v)) = self.x.data().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::RangeViolation {
                what: "x",
                index: i,
                value: v,
            });
        }
        if let Some((i, &v)) = self.y.data().iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(DataError::RangeViolation {
                what: "y",
                index: i,
                value: v,
            });
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= n {
                return Err(DataError::InvalidSplits(format!("index {i} out of range for {n} examples")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(DataError::InvalidSplits(format!("index {i} appears twice")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(DataError::InvalidSplits(format!("index {i} is in no split")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn y_dim(&self) -> usize {
        self.y.cols()
    }

    /// Canvas side, assuming square images.
    pub fn side(&self) -> usize {
        (self.x_dim() as f64).sqrt().round() as usize
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// `(x, y)` rows for the given indices.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        (
            self.x.select_rows(idx).expect("dataset is 2-D"),
            self.y.select_rows(idx).expect("dataset is 2-D"),
        )
    }

    /// Column means of `y` over the training split.
    pub fn train_y_mean(&self) -> Vec<f64> {
        let a = self.y_dim();
        let mut mean = vec![0.0; a];
        for &i in &self.train {
            for (m, v) in mean.iter_mut().zip(self.y.row(i)) {
                *m += v;
            }
        }
        let n = self.train.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Variance of every pixel value in the dataset around their global mean.
    pub fn pixel_variance(&self) -> f64 {
        let d = self.x.data();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}

/// `n` glyphs with uniformly random attribute bits, split 80/10/10 in index
/// order. Pixel values are stored at `f32` precision so the binary file
/// format round-trips them exactly.
pub fn generate_dataset(n: usize, config: &GlyphConfig) -> Result<MultimodalDataset, DataError> {
    config.validate()?;
    if n < 10 {
        return Err(DataError::TooSmall(n));
    }
    let m = config.side * config.side;
    let mut rng = Rng::new(config.seed);
    let mut x = Vec::with_capacity(n * m);
    let mut y = Vec::with_capacity(n * NUM_ATTRIBUTES);
    for _ in 0..n {
        let bits: Vec<f64> = (0..NUM_ATTRIBUTES).map(|_| rng.below(2) as f64).collect();
        let noise = (config.noise > 0.0).then_some((config.noise, &mut rng));
        let img = render_glyph(&bits, config.side, noise)?;
        x.extend(img.into_iter().map(|v| v as f32 as f64));
        y.extend(bits);
    }
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    MultimodalDataset::new(
        Tensor::matrix(n, m, x).expect("sized above"),
        Tensor::matrix(n, NUM_ATTRIBUTES, y).expect("sized above"),
        (0..n_train).collect(),
        (n_train..n_train + n_val).collect(),
        (n_train + n_val..n).collect(),
    )
}
