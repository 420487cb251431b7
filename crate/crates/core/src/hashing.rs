//! Stable, platform-independent hashing for feature buckets and derived seeds.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a over byte strings with a splitmix64 finish.
#[derive(Debug, Clone, Copy)]
pub struct StableHasher {
    state: u64,
}

impl StableHasher {
    pub fn new(seed: u64) -> Self {
        let mut h = Self { state: FNV_OFFSET };
        h.write_u64(seed);
        h
    }

    pub fn write(&mut self, bytes: &[u8]) -> &mut Self {
        for b in bytes {
            self.state ^= u64::from(*b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
        self
    }

    pub fn write_str(&mut self, s: &str) -> &mut Self {
        self.write(s.as_bytes());
        // separator so ("ab","c") and ("a","bc") differ
        self.write(&[0xff])
    }

    pub fn write_u64(&mut self, v: u64) -> &mut Self {
        self.write(&v.to_le_bytes())
    }

    pub fn finish(&self) -> u64 {
        splitmix64(self.state)
    }

    /// Uniform draw in `[0, 1)` from the current state.
    pub fn unit(&self) -> f64 {
        (self.finish() >> 11) as f64 / (1u64 << 53) as f64
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named sub-stream of a master seed.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = StableHasher::new(master);
    for p in parts {
        h.write_str(p);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_stable_and_separated() {
        let a = StableHasher::new(7).write_str("ab").write_str("c").finish();
        let b = StableHasher::new(7).write_str("a").write_str("bc").finish();
        assert_ne!(a, b);
        assert_eq!(a, StableHasher::new(7).write_str("ab").write_str("c").finish());
        assert_ne!(derive_seed(1, &["x"]), derive_seed(2, &["x"]));
    }

    #[test]
    fn unit_draws_cover_the_interval() {
        let draws: Vec<f64> = (0..10_000u64)
            .map(|i| StableHasher::new(i).write_str("s").unit())
            .collect();
        assert!(draws.iter().all(|u| (0.0..1.0).contains(u)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }
}
