//! Counter-based deterministic randomness and low-discrepancy point sets.
//!
//! Every stochastic choice in the crate (signature sampling, scan grids) is a
//! pure function of `(seed, counter)`, so identical seeds reproduce identical
//! sequences on every platform and at any worker count.

/// SplitMix64-style finalizer applied to `seed ^ mix(counter)`.
pub fn mix(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in [0, 1) for the given (seed, counter) pair.
pub fn uniform(seed: u64, counter: u64) -> f64 {
    // 53 mantissa bits.
    (mix(seed, counter) >> 11) as f64 / (1u64 << 53) as f64
}

/// Additive-recurrence low-discrepancy sequence in the unit cube, offset by a
/// seed-derived shift. The per-axis increments come from the generalized
/// golden ratio g solving g^(d+1) = g + 1.
pub struct LowDiscrepancy {
    alphas: Vec<f64>,
    offsets: Vec<f64>,
}

impl LowDiscrepancy {
    pub fn new(dim: usize, seed: u64) -> Self {
        // Newton iteration for the root of g^(d+1) - g - 1 on (1, 2).
        let d = dim as f64;
        let mut g = 1.5f64;
        for _ in 0..64 {
            let f = g.powf(d + 1.0) - g - 1.0;
            let fp = (d + 1.0) * g.powf(d) - 1.0;
            g -= f / fp;
        }
        let alphas = (1..=dim).map(|k| (1.0 / g).powi(k as i32)).collect();
        let offsets = (0..dim).map(|k| uniform(seed, k as u64)).collect();
        Self { alphas, offsets }
    }

    /// The i-th point of the sequence, componentwise in [0, 1).
    pub fn point(&self, index: u64) -> Vec<f64> {
        self.alphas
            .iter()
            .zip(&self.offsets)
            .map(|(a, o)| (o + a * (index as f64 + 1.0)).fract())
            .collect()
    }
}
