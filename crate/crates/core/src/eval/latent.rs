use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_dims, EvalError, EVAL_CHUNK};
use crate::data::{MultimodalDataset, Split};
use crate::model::Model;

/// Prior and posterior latent statistics for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentMapRow {
    pub id: usize,
    pub prior_mean: Vec<f64>,
    pub prior_std: Vec<f64>,
    pub posterior_mean: Vec<f64>,
    pub posterior_std: Vec<f64>,
}

pub fn latent_map(model: &Model, dataset: &MultimodalDataset, split: Split) -> Result<Vec<LatentMapRow>, EvalError> {
    check_dims(model, dataset)?;
    let mut out = Vec::new();
    for idx in dataset.split(split).chunks(EVAL_CHUNK) {
        let (x, y) = dataset.batch(idx);
        let prior = model.prior_net(&y)?;
        let post = model.encoder(&x, &y)?;
        let (ps, qs) = (prior.std(), post.std());
        for (r, &id) in idx.iter().enumerate() {
            out.push(LatentMapRow {
                id,
                prior_mean: prior.mean.row(r).to_vec(),
                prior_std: ps.row(r).to_vec(),
                posterior_mean: post.mean.row(r).to_vec(),
                posterior_std: qs.row(r).to_vec(),
            });
        }
    }
    Ok(out)
}

/// Averages of the prior and posterior stds over every row and dimension.
pub fn mean_stds(rows: &[LatentMapRow]) -> (f64, f64) {
    let avg = |f: fn(&LatentMapRow) -> &Vec<f64>| {
        let n: usize = rows.iter().map(|r| f(r).len()).sum();
        rows.iter().flat_map(|r| f(r).iter()).sum::<f64>() / n.max(1) as f64
    };
    (avg(|r| &r.prior_std), avg(|r| &r.posterior_std))
}

/// CSV with header `id,prior_mean_0,…,prior_std_0,…,posterior_mean_0,…,posterior_std_0,…`.
pub fn write_latent_csv(rows: &[LatentMapRow], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let j = rows.first().map_or(0, |r| r.prior_mean.len());
    let mut header = vec!["id".to_string()];
    for name in ["prior_mean", "prior_std", "posterior_mean", "posterior_std"] {
        header.extend((0..j).map(|d| format!("{name}_{d}")));
    }
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut fields = vec![r.id.to_string()];
        for v in [&r.prior_mean, &r.prior_std, &r.posterior_mean, &r.posterior_std] {
            fields.extend(v.iter().map(|x| x.to_string()));
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}
