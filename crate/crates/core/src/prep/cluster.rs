use std::ops::Range;

use crate::error::{CoreError, Result};
use crate::event::Hit;

/// Splits a time-sorted hit stream into clusters. A hit joins the open
/// cluster iff it lies within `window_ps` of that cluster's first hit.
pub fn cluster_spans(timestamps: &[f64], window_ps: f64) -> Result<Vec<Range<usize>>> {
    let mut spans = Vec::new();
    let mut start = 0;
    for i in 0..timestamps.len() {
        if i > 0 && timestamps[i] < timestamps[i - 1] {
            return Err(CoreError::SortOrder { index: i });
        }
        if timestamps[i] - timestamps[start] > window_ps {
            spans.push(start..i);
            start = i;
        }
    }
    if start < timestamps.len() {
        spans.push(start..timestamps.len());
    }
    Ok(spans)
}

pub fn cluster_hits(hits: &[Hit], window_ps: f64) -> Result<Vec<Vec<Hit>>> {
    let ts: Vec<f64> = hits.iter().map(|h| h.timestamp_ps).collect();
    Ok(cluster_spans(&ts, window_ps)?.into_iter().map(|r| hits[r].to_vec()).collect())
}
