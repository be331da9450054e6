use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved per event; draws beyond this would overlap the next event.
const EVENT_STRIDE_LOG2: u32 = 24;

/// Independent generator for event `index` of stream `stream`. Any event can
/// be regenerated without replaying the ones before it.
pub fn event_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) << EVENT_STRIDE_LOG2);
    rng
}

/// Stream ids below this are campaign grid points.
pub const STREAM_PERFORMANCE: u64 = 1 << 40;
pub const STREAM_DETECTOR: u64 = 1 << 41;
pub const STREAM_SUBSET: u64 = 1 << 42;

/// `k` distinct indices below `n` in ascending order; all of them when `k >= n`.
pub fn subset_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = event_rng(seed, STREAM_SUBSET, 0);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = event_rng(1, 2, 3).random();
        let b: u64 = event_rng(1, 2, 3).random();
        let c: u64 = event_rng(1, 2, 4).random();
        let d: u64 = event_rng(1, 3, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn subsets_are_sorted_and_distinct() {
        let s = subset_indices(100, 10, 5);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, subset_indices(100, 10, 5));
        assert_eq!(subset_indices(3, 10, 5), vec![0, 1, 2]);
    }
}
