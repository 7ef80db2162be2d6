//! Deriving per-task RNG seeds from one user-facing seed.
//!
//! Every randomized stage gets its own stream keyed by (base seed, domain
//! label, ids), so results never depend on scheduling or worker count.
//! The mix is splitmix64; std's hasher is randomly keyed per process and
//! therefore useless for reproducibility.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed, a domain label, and any number of ids into one seed.
pub fn derive_seed(base: u64, domain: &str, ids: &[u64]) -> u64 {
    let mut state = splitmix64(base ^ 0x6a09_e667_f3bc_c909);
    for &b in domain.as_bytes() {
        state = splitmix64(state ^ b as u64);
    }
    for &id in ids {
        state = splitmix64(state ^ id);
    }
    state
}
