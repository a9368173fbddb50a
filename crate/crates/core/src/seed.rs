//! Seed derivation for the crate's deterministic RNG streams.
//!
//! Every random decision (epoch shuffles, batch-order shuffles, model init,
//! synthetic data) draws from a ChaCha stream whose seed is a hash of the
//! user seed plus a stream tag, so distinct purposes never share a stream
//! and identical inputs reproduce identical outputs on every worker.

pub(crate) const TAG_EPOCH_SHUFFLE: u64 = 1;
pub(crate) const TAG_BATCH_SHUFFLE: u64 = 2;
pub(crate) const TAG_MODEL_INIT: u64 = 3;
pub(crate) const TAG_SYNTH_GRAPH: u64 = 4;
pub(crate) const TAG_SYNTH_SIGNAL: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash an ordered tuple of 64-bit parts into one seed.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3; // pi fraction, arbitrary non-zero start
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}
