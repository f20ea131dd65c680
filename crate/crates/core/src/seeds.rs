//! Deterministic seed derivation.
//!
//! Every randomized stage draws its seed from a master seed plus a fixed
//! stream identifier, so parallel work (forest trees, experiment cells,
//! importance splits) reproduces exactly regardless of scheduling.

/// SplitMix64 output function (Steele, Lea, Flood 2014).
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a stream path.
///
/// The path components identify the consumer (stage id, cell indices,
/// replicate number, ...). Folding each component through SplitMix64 keeps
/// distinct paths statistically independent.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &component in path {
        state = splitmix64(state ^ splitmix64(component.wrapping_add(0x51_7c_c1_b7_27_22_0a_95)));
    }
    state
}
