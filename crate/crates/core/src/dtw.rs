//! Dynamic time warping over planar coordinate sequences.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("DTW needs two non-empty sequences")]
pub struct EmptySequence;

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Classic DTW: Euclidean local cost, full window, summed along the
/// optimal monotone alignment (no length normalization).
pub fn dtw_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64, EmptySequence> {
    if a.is_empty() || b.is_empty() {
        return Err(EmptySequence);
    }
    let cols = b.len();
    // two rolling rows with a leading infinite sentinel column
    let mut prev = vec![f64::INFINITY; cols + 1];
    let mut curr = vec![f64::INFINITY; cols + 1];
    prev[0] = 0.0;
    for &pa in a {
        curr[0] = f64::INFINITY;
        for (j, &pb) in b.iter().enumerate() {
            let best = prev[j].min(prev[j + 1]).min(curr[j]);
            curr[j + 1] = euclid(pa, pb) + best;
        }
        std::mem::swap(&mut prev, &mut curr);
        prev[0] = f64::INFINITY;
    }
    Ok(prev[cols])
}
