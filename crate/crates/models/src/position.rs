//! Bucketed relative positions (T5 and MPNet attention biases).

use candle_core::{Device, Tensor};

use crate::Result;

/// Bucket of `relative_position = key_position - query_position`.
///
/// Small distances get their own bucket; larger ones share logarithmically
/// sized buckets up to `max_distance`. In bidirectional mode half of the
/// buckets are reserved for keys to the right of the query; otherwise keys
/// to the right all fall into bucket 0.
pub fn relative_position_bucket(
    relative_position: i64,
    bidirectional: bool,
    num_buckets: usize,
    max_distance: usize,
) -> usize {
    let mut buckets = num_buckets as i64;
    let mut offset = 0i64;
    let distance = if bidirectional {
        buckets /= 2;
        if relative_position > 0 {
            offset = buckets;
        }
        relative_position.abs()
    } else {
        (-relative_position).max(0)
    };
    let max_exact = buckets / 2;
    if distance < max_exact {
        return (offset + distance) as usize;
    }
    let scaled = (distance as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln()
        * (buckets - max_exact) as f64;
    let large = max_exact.saturating_add(scaled as i64).min(buckets - 1);
    (offset + large) as usize
}

/// Bucket ids `[query_len, key_len]` as a `u32` tensor.
pub fn bucket_ids(
    query_len: usize,
    key_len: usize,
    bidirectional: bool,
    num_buckets: usize,
    max_distance: usize,
    device: &Device,
) -> Result<Tensor> {
    let ids: Vec<u32> = (0..query_len)
        .flat_map(|q| {
            (0..key_len).map(move |k| {
                relative_position_bucket(k as i64 - q as i64, bidirectional, num_buckets, max_distance) as u32
            })
        })
        .collect();
    Ok(Tensor::from_vec(ids, (query_len, key_len), device)?)
}

/// Attention bias `[1, heads, query_len, key_len]` from a `[num_buckets, heads]` table.
pub fn relative_bias(
    table: &Tensor,
    query_len: usize,
    key_len: usize,
    bidirectional: bool,
    max_distance: usize,
) -> Result<Tensor> {
    let (num_buckets, heads) = table.dims2()?;
    let ids = bucket_ids(query_len, key_len, bidirectional, num_buckets, max_distance, table.device())?;
    let flat = table.embedding(&ids.flatten_all()?)?;
    Ok(flat
        .reshape((query_len, key_len, heads))?
        .permute((2, 0, 1))?
        .unsqueeze(0)?)
}
