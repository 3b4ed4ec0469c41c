//! Counter-based random numbers for reproducible dataset sampling.
//!
//! Outcome sampling must not depend on iteration order or parallelism, so
//! instead of drawing from a sequential stream, every (query, shot) pair
//! derives its own uniform variate from a stateless mix of
//! (seed, query index, shot index). The mixer is the splitmix64 finalizer
//! applied to the combined words, which passes standard avalanche checks
//! and is trivially portable.

/// splitmix64 finalizer: bijective 64-bit avalanche mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A uniform variate in [0, 1) keyed by (seed, query, shot).
pub fn unit_uniform(seed: u64, query_index: u64, shot_index: u64) -> f64 {
    let mixed = splitmix64(
        splitmix64(seed ^ 0x243f_6a88_85a3_08d3)
            .wrapping_add(splitmix64(query_index))
            .wrapping_add(splitmix64(shot_index).rotate_left(17)),
    );
    // 53 significand bits → exact dyadic rational in [0, 1).
    (mixed >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Samples an outcome index from a probability vector by inverse CDF.
///
/// Deviations of the total mass from 1 (floating-point accumulation) are
/// absorbed by the final bucket.
pub fn sample_outcome(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
