use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Additive score for a blocked query/key pair.
pub const MASK_VALUE: f64 = -1e9;

/// Additive attention mask, `batch × queries × keys`, holding only `0` and
/// [`MASK_VALUE`]. A batch size of 1 applies to every sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub batch: usize,
    pub queries: usize,
    pub keys: usize,
    values: Vec<f64>,
}

impl AttentionMask {
    pub fn value(&self, b: usize, i: usize, j: usize) -> f64 {
        let b = if self.batch == 1 { 0 } else { b };
        self.values[(b * self.queries + i) * self.keys + j]
    }

    pub fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.value(b, i, j) == 0.0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Blocks a pair if either mask blocks it.
    pub fn combine(&self, other: &AttentionMask) -> Result<AttentionMask> {
        if self.queries != other.queries || self.keys != other.keys {
            return Err(Error::dim(
                "combine_masks",
                format!(
                    "{}x{} vs {}x{}",
                    self.queries, self.keys, other.queries, other.keys
                ),
            ));
        }
        let batch = match (self.batch, other.batch) {
            (a, b) if a == b => a,
            (1, b) => b,
            (a, 1) => a,
            (a, b) => {
                return Err(Error::dim(
                    "combine_masks",
                    format!("batch {a} vs batch {b}"),
                ))
            }
        };
        let mut values = Vec::with_capacity(batch * self.queries * self.keys);
        for b in 0..batch {
            for i in 0..self.queries {
                for j in 0..self.keys {
                    values.push(self.value(b, i, j).min(other.value(b, i, j)));
                }
            }
        }
        Ok(AttentionMask {
            batch,
            queries: self.queries,
            keys: self.keys,
            values,
        })
    }

    /// Shape `[batch, 1, queries, keys]`, ready to broadcast over heads.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64(vec![self.batch, 1, self.queries, self.keys], &self.values)
            .expect("mask values are finite")
    }
}

/// Position `i` may attend to `j` iff `i >= j`.
pub fn causal_mask(t: usize) -> Result<AttentionMask> {
    if t == 0 {
        return Err(Error::Parameter("causal mask needs at least one frame".into()));
    }
    let values = (0..t)
        .flat_map(|i| (0..t).map(move |j| if i >= j { 0.0 } else { MASK_VALUE }))
        .collect();
    Ok(AttentionMask {
        batch: 1,
        queries: t,
        keys: t,
        values,
    })
}

/// Blocks every key whose frame is padding. `frame_mask` is `batch × frames`.
pub fn padding_mask(frame_mask: &[bool], batch: usize) -> Result<AttentionMask> {
    if batch == 0 || !frame_mask.len().is_multiple_of(batch) || frame_mask.is_empty() {
        return Err(Error::dim(
            "padding_mask",
            format!("{} mask entries for batch {batch}", frame_mask.len()),
        ));
    }
    let t = frame_mask.len() / batch;
    let mut values = Vec::with_capacity(batch * t * t);
    for (b, row) in frame_mask.chunks(t).enumerate() {
        if !row.iter().any(|&v| v) {
            return Err(Error::Contract(format!("sequence {b} has no valid frames")));
        }
        for _ in 0..t {
            values.extend(row.iter().map(|&valid| if valid { 0.0 } else { MASK_VALUE }));
        }
    }
    Ok(AttentionMask {
        batch,
        queries: t,
        keys: t,
        values,
    })
}
