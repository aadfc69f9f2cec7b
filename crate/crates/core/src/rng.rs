//! Counter-based random streams.
//!
//! A [`StreamKey`] is a 64-bit key derived from the master seed by hashing a
//! path of labels (phase, day, agent, ...). A [`Stream`] draws its `i`-th
//! output as a pure function of `(key, i)`, so any substream can be rebuilt
//! on any thread without touching the others. Adding a phase only adds a
//! new label; existing streams are unchanged.
//!
//! The mixing function is the SplitMix64 finalizer. Streams are fast and
//! statistically adequate for simulation; they are not cryptographic.

use rand_core::{impls, RngCore};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Labels for the top-level substreams. Values are part of the determinism
/// contract: changing one changes every trajectory.
pub mod label {
    pub const POPULATION: u64 = 0x01;
    pub const SCHEDULE: u64 = 0x02;
    pub const CONTACTS: u64 = 0x03;
    pub const TRANSMISSION: u64 = 0x04;
    pub const EXTERNAL: u64 = 0x05;
    pub const TRAVEL: u64 = 0x06;
    pub const COURSE: u64 = 0x07;
    pub const OUTCOME: u64 = 0x08;
    pub const SEEDING: u64 = 0x09;
    pub const SELF_REPORT: u64 = 0x0A;
    pub const TRACING: u64 = 0x0B;
    pub const REPLICATE: u64 = 0x0C;
    pub const WARMUP: u64 = 0x0D;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(mix64(seed ^ 0x6A09_E667_F3BC_C908))
    }

    /// Derives a child key. Distinct label paths give independent keys.
    #[inline]
    pub fn child(self, label: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(label.wrapping_add(GOLDEN_GAMMA))))
    }

    #[inline]
    pub fn path(self, labels: &[u64]) -> Self {
        labels.iter().fold(self, |k, &l| k.child(l))
    }

    #[inline]
    pub fn stream(self) -> Stream {
        Stream { key: self.0, counter: 0 }
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

/// A random stream: output `i` is `mix(mix(i * gamma ^ key) + key)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn from_seed(seed: u64) -> Self {
        StreamKey::root(seed).stream()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// True with probability `p`; `p <= 0` never, `p >= 1` always.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; the bias is < n / 2^64, negligible here.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Samples `k` distinct indices from `0..n` excluding `skip`, in draw order.
    pub fn sample_distinct(&mut self, n: usize, k: usize, skip: Option<usize>, out: &mut alloc::vec::Vec<usize>) {
        out.clear();
        let pool = n - usize::from(skip.is_some_and(|s| s < n));
        if k >= pool {
            out.extend((0..n).filter(|&i| Some(i) != skip));
            return;
        }
        // Rejection sampling is fine while k is small relative to the pool.
        if k * 4 <= pool {
            while out.len() < k {
                let i = self.below(n as u64) as usize;
                if Some(i) != skip && !out.contains(&i) {
                    out.push(i);
                }
            }
        } else {
            let mut all: alloc::vec::Vec<usize> = (0..n).filter(|&i| Some(i) != skip).collect();
            for i in 0..k {
                let j = i + self.below((all.len() - i) as u64) as usize;
                all.swap(i, j);
            }
            all.truncate(k);
            out.extend(all);
        }
    }
}

impl RngCore for Stream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(self.counter.wrapping_mul(GOLDEN_GAMMA) ^ self.key).wrapping_add(self.key))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn same_key_same_sequence() {
        let k = StreamKey::root(42).path(&[label::SCHEDULE, 3, 17]);
        let a: Vec<u64> = (0..16).map({ let mut s = k.stream(); move |_| s.next_u64() }).collect();
        let b: Vec<u64> = (0..16).map({ let mut s = k.stream(); move |_| s.next_u64() }).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sibling_keys_differ() {
        let root = StreamKey::root(7);
        let mut seen = Vec::new();
        for l in 0..1000u64 {
            seen.push(root.child(l).raw());
        }
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 1000);
        assert_ne!(root.path(&[1, 2]), root.path(&[2, 1]));
    }

    #[test]
    fn uniform_buckets_are_flat() {
        let mut s = Stream::from_seed(1);
        let mut buckets = [0u32; 10];
        let n = 100_000;
        for _ in 0..n {
            buckets[(s.uniform() * 10.0) as usize] += 1;
        }
        // chi-square with 9 dof; 27.88 is the 0.999 quantile
        let e = n as f64 / 10.0;
        let chi: f64 = buckets.iter().map(|&o| (o as f64 - e) * (o as f64 - e) / e).sum();
        assert!(chi < 27.88, "chi-square {chi}");
    }

    #[test]
    fn bernoulli_edges() {
        let mut s = Stream::from_seed(9);
        assert!((0..1000).all(|_| s.bernoulli(1.0)));
        assert!((0..1000).all(|_| !s.bernoulli(0.0)));
    }

    #[test]
    fn sample_distinct_excludes_skip() {
        let mut s = Stream::from_seed(3);
        let mut out = Vec::new();
        for n in 1..40 {
            for k in 0..12 {
                s.sample_distinct(n, k, Some(0), &mut out);
                assert!(!out.contains(&0));
                assert_eq!(out.len(), k.min(n - 1));
                let mut d = out.clone();
                d.sort_unstable();
                d.dedup();
                assert_eq!(d.len(), out.len());
            }
        }
    }
}
