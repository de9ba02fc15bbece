//! Counter-based seed derivation.
//!
//! A sub-seed is a pure function of the master seed and a path of counters,
//! e.g. `derive(master, &[ROUND_STREAM, round, client])`. Adding a client
//! therefore never shifts another client's random stream.

/// One step of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Stream tags keep sub-seeds for different purposes apart.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const CLIENT: u64 = 2;
    pub const EPOCH: u64 = 3;
    pub const DATA: u64 = 4;
}
