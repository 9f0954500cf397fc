//! Counter-based seed splitting.
//!
//! Every random stream in the experiment harness is derived from one base
//! seed, so any replication can be re-run in isolation and reproduce the
//! same rows regardless of scheduling.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for `(replication, stage)` under base `seed`.
pub fn derive_seed(seed: u64, replication: u64, stage: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ replication) ^ stage.rotate_left(32))
}
