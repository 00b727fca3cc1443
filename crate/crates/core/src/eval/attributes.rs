use serde::{Deserialize, Serialize};

use super::{check_dims, EvalError, EVAL_CHUNK};
use crate::data::{attribute_oracle, MultimodalDataset, ATTRIBUTE_NAMES};
use crate::model::Model;
use crate::ndgrad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Generate,
    Modify,
}

impl std::str::FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generate" => Ok(Self::Generate),
            "modify" => Ok(Self::Modify),
            other => Err(format!("unknown match mode {other:?} (expected generate|modify)")),
        }
    }
}

impl std::fmt::Display for MatchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Generate => "generate",
            Self::Modify => "modify",
        })
    }
}

/// Fraction of images whose oracle reading agrees with the target bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeAccuracy {
    pub count: usize,
    pub per_bit: Vec<f64>,
}

impl AttributeAccuracy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("attribute,accuracy\n");
        for (name, acc) in ATTRIBUTE_NAMES.iter().zip(&self.per_bit) {
            s += &format!("{name},{acc}\n");
        }
        s
    }
}

fn side_of(model: &Model) -> usize {
    (model.config().x_dim as f64).sqrt().round() as usize
}

fn oracle_bits(images: &Tensor, side: usize) -> Vec<[u8; 8]> {
    (0..images.rows())
        .map(|r| attribute_oracle(images.row(r), side).bits)
        .collect()
}

/// Decodes each row of `ys` at its prior mean and scores the oracle's
/// reading of the result against that row.
pub fn generation_accuracy(model: &Model, ys: &Tensor) -> Result<AttributeAccuracy, EvalError> {
    let side = side_of(model);
    let a = ys.cols();
    let mut hits = vec![0usize; a];
    let rows: Vec<usize> = (0..ys.rows()).collect();
    for idx in rows.chunks(EVAL_CHUNK) {
        let y = ys.select_rows(idx)?;
        let images = model.generate_from_attributes(&y, None)?;
        for (r, bits) in oracle_bits(&images, side).iter().enumerate() {
            for (b, hit) in hits.iter_mut().enumerate() {
                if bits[b] as f64 == y.row(r)[b] {
                    *hit += 1;
                }
            }
        }
    }
    let n = ys.rows();
    Ok(AttributeAccuracy {
        count: n,
        per_bit: hits.iter().map(|&h| h as f64 / n.max(1) as f64).collect(),
    })
}

/// Outcome of flipping one attribute bit with latent arithmetic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipScore {
    pub bit: usize,
    pub count: usize,
    /// Oracle reads the flipped value.
    pub flip_success: f64,
    /// Per bit, oracle still reads the original value; `None` at `bit`.
    pub preservation: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModificationTable {
    pub rows: Vec<FlipScore>,
}

impl ModificationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("flipped,count,flip_success");
        for name in ATTRIBUTE_NAMES {
            s += &format!(",keep_{name}");
        }
        s.push('\n');
        for r in &self.rows {
            s += &format!("{},{},{}", ATTRIBUTE_NAMES[r.bit], r.count, r.flip_success);
            for p in &r.preservation {
                s.push(',');
                if let Some(v) = p {
                    s += &v.to_string();
                }
            }
            s.push('\n');
        }
        s
    }
}

/// For each bit in `bits`, flips it on every instance in `indices`, runs
/// `modify`, and compares the oracle's reading with the intended vector.
pub fn modification_scores(
    model: &Model,
    dataset: &MultimodalDataset,
    indices: &[usize],
    bits: &[usize],
) -> Result<ModificationTable, EvalError> {
    check_dims(model, dataset)?;
    let side = side_of(model);
    let a = dataset.y_dim();
    let mut rows = Vec::with_capacity(bits.len());
    for &bit in bits {
        let mut flipped = 0usize;
        let mut kept = vec![0usize; a];
        for idx in indices.chunks(EVAL_CHUNK) {
            let (x, y) = dataset.batch(idx);
            let mut y_new = y.clone();
            for r in 0..idx.len() {
                let v = &mut y_new.data_mut()[r * a + bit];
                *v = 1.0 - *v;
            }
            let images = model.modify(&x, &y, &y_new)?;
            for (r, read) in oracle_bits(&images, side).iter().enumerate() {
                if read[bit] as f64 == y_new.row(r)[bit] {
                    flipped += 1;
                }
                for (b, k) in kept.iter_mut().enumerate() {
                    if b != bit && read[b] as f64 == y.row(r)[b] {
                        *k += 1;
                    }
                }
            }
        }
        let n = indices.len().max(1) as f64;
        rows.push(FlipScore {
            bit,
            count: indices.len(),
            flip_success: flipped as f64 / n,
            preservation: (0..a)
                .map(|b| (b != bit).then(|| kept[b] as f64 / n))
                .collect(),
        });
    }
    Ok(ModificationTable { rows })
}
