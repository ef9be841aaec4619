//! Counter-based random streams.
//!
//! A block of uniforms is addressed by `(seed, stream, offset)`, so any sample
//! can be regenerated independently of the order in which samples are drawn.
//! Random shifts use `stream = shift index` and `offset = coordinate`; Monte
//! Carlo batches use `stream = batch` and `offset = sample * dimension`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fills `out` with uniforms in `[0, 1)` starting at position `offset` of the
/// stream `(seed, stream)`.
pub fn uniform_block(seed: u64, stream: u64, offset: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // each f64 consumes one u64, i.e. two 32-bit words
    rng.set_word_pos(u128::from(offset) * 2);
    for v in out.iter_mut() {
        *v = rng.random::<f64>();
    }
}

/// Generator positioned at the start of `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_addressable() {
        let mut whole = vec![0.0; 10];
        uniform_block(7, 3, 0, &mut whole);
        let mut tail = vec![0.0; 4];
        uniform_block(7, 3, 6, &mut tail);
        assert_eq!(&whole[6..], &tail[..]);
        assert!(whole.iter().all(|v| (0.0..1.0).contains(v)));

        let mut other = vec![0.0; 10];
        uniform_block(7, 4, 0, &mut other);
        assert_ne!(whole, other);
    }
}
