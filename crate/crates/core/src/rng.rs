//! Deterministic pseudo-random utilities.
//!
//! Every random choice in this crate (hashed embeddings, synthetic data,
//! episode shuffling) flows through the splitmix64 mixer so that a given
//! seed reproduces the exact same bits on every platform.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Mixes a 64-bit value into a well-distributed output word (splitmix64).
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a stream tag.
#[inline]
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// Minimal deterministic generator over a 64-bit state.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    cached_gaussian: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            cached_gaussian: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = splitmix64(self.state);
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        out
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * 2f64.powi(-53)
    }

    /// Uniform in `[0, n)`. `n` must be nonzero.
    pub fn next_usize(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_usize: empty range");
        // Multiply-shift keeps the bias negligible for the small ranges
        // used here while staying branch-free and portable.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform in the inclusive range `[lo, hi]`.
    pub fn next_range(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "next_range: lo > hi");
        lo + self.next_usize(hi - lo + 1)
    }

    /// Standard normal via Box-Muller (second value cached).
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.cached_gaussian.take() {
            return z;
        }
        // Open interval (0, 1] for the log argument.
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) * 2f64.powi(-53);
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Vector of independent standard normals.
    pub fn gaussian_vector(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.next_gaussian()).collect()
    }

    /// Uniform point on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v = self.gaussian_vector(dim);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_usize(i + 1);
            xs.swap(i, j);
        }
    }
}
