use std::collections::VecDeque;

/// Pairs clusters of two detectors by first timestamp.
///
/// Clusters are visited in time order. Each one pairs with the earliest
/// still-unpaired cluster of the other detector at most `window_ps` earlier,
/// or waits for a later partner otherwise. Every cluster enters at most one
/// pair, and the result does not depend on which detector is called `a`.
/// Returns `(index in a, index in b)` pairs; inputs must be time-sorted.
pub fn find_coincidences(a: &[f64], b: &[f64], window_ps: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut pending: [VecDeque<usize>; 2] = [VecDeque::new(), VecDeque::new()];
    let (mut i, mut j) = (0, 0);
    let times = [a, b];
    while i < a.len() || j < b.len() {
        let take_a = j >= b.len() || (i < a.len() && a[i] <= b[j]);
        let (side, idx) = if take_a { (0, i) } else { (1, j) };
        if take_a {
            i += 1;
        } else {
            j += 1;
        }
        let t = times[side][idx];
        let other = 1 - side;
        while let Some(&p) = pending[other].front() {
            if t - times[other][p] > window_ps {
                pending[other].pop_front();
            } else {
                break;
            }
        }
        if let Some(p) = pending[other].pop_front() {
            pairs.push(if side == 0 { (idx, p) } else { (p, idx) });
        } else {
            pending[side].push_back(idx);
        }
    }
    pairs.sort_unstable();
    pairs
}
