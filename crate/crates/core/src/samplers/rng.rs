use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for draw `index` of round `round`.
///
/// The key comes from the master seed and the stream id from the pair, so a
/// draw never depends on which worker produced it or in what order.
pub fn substream(seed: u64, round: u32, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 32) | index as u64);
    rng
}
