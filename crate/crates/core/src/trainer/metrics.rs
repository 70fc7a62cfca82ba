use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Class indices of the `k` largest entries of `row`, best first. Equal
/// scores are ordered by ascending class index.
pub fn top_k<T: Scalar>(row: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Fraction of rows whose label is among their `k` highest-scoring classes,
/// for every `k` in `k_values`.
pub fn recall_at_k<T: Scalar>(
    probabilities: &[Vec<T>],
    labels: &[usize],
    k_values: &[usize],
) -> Result<IndexMap<usize, f64>> {
    if probabilities.is_empty() {
        return Err(Error::Parameter("cannot score an empty dataset".into()));
    }
    if probabilities.len() != labels.len() {
        return Err(Error::dim(
            "recall_at_k",
            format!("{} rows for {} labels", probabilities.len(), labels.len()),
        ));
    }
    let classes = probabilities[0].len();
    let mut out = IndexMap::new();
    for &k in k_values {
        if k == 0 || k > classes {
            return Err(Error::Parameter(format!("k = {k} outside 1..={classes}")));
        }
        let hits = probabilities
            .iter()
            .zip(labels)
            .filter(|(row, label)| top_k(row, k).contains(label))
            .count();
        out.insert(k, hits as f64 / labels.len() as f64);
    }
    Ok(out)
}
