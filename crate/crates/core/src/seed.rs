//! Seed derivation for per-task random streams.
//!
//! Every stochastic stage derives its own seed from the master seed plus a
//! domain tag and indices, so stages can run in any order (or in parallel)
//! without changing results.

/// Derive a child seed from a master seed, a domain tag and task indices.
///
/// Uses splitmix64 finalization over the concatenated inputs. The same
/// inputs always yield the same child seed.
pub fn derive_seed(master: u64, domain: &str, indices: &[u64]) -> u64 {
    let mut state = master ^ 0x9e37_79b9_7f4a_7c15;
    for byte in domain.as_bytes() {
        state = mix(state ^ u64::from(*byte));
    }
    for idx in indices {
        state = mix(state ^ *idx);
    }
    mix(state)
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
