//! Deterministic seed derivation.
//!
//! Every random decision in an experiment draws from a seed derived from the
//! master seed, a domain label, and an index. Jobs therefore stay independent
//! of scheduling order, and adding a job never shifts the seeds of existing
//! ones.

/// Derives a child seed from `master` for the given domain and index.
///
/// The domain label is folded in with FNV-1a, then the combined state is
/// finalized with the splitmix64 mixer so that related inputs (adjacent
/// indices, shared prefixes) land far apart.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = FNV_OFFSET;
    for byte in domain.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    splitmix64(master ^ hash.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
