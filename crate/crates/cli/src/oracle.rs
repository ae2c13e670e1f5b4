// SPDX-License-Identifier: Apache-2.0

//! Sequential replay and order-independent content fingerprints.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{BenchError, BenchResult};

/// Above this size only fingerprints are compared.
pub const FULL_COMPARE_LIMIT: usize = 1 << 20;

/// Multiset fingerprint: element count plus a wrapping sum of mixed values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Fingerprint {
    pub len: usize,
    pub hash: u64,
}

fn mix(v: u32) -> u64 {
    let mut z = (v as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Fingerprint {
    pub fn of(values: impl IntoIterator<Item = u32>) -> Self {
        values
            .into_iter()
            .fold(Self::default(), |fp, v| Self { len: fp.len + 1, hash: fp.hash.wrapping_add(mix(v)) })
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.hash)
    }
}

/// Plain vector replay. Uniform additions are kept as a pending offset.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    stored: Vec<u32>,
    offset: u32,
}

impl Oracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    pub fn push_all(&mut self, values: &[u32]) {
        let offset = self.offset;
        self.stored.extend(values.iter().map(|v| v.wrapping_sub(offset)));
    }

    pub fn add_all(&mut self, k: u32) {
        self.offset = self.offset.wrapping_add(k);
    }

    pub fn contents(&self) -> Vec<u32> {
        self.stored.iter().map(|v| v.wrapping_add(self.offset)).collect()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(self.stored.iter().map(|v| v.wrapping_add(self.offset)))
    }

    /// Compare `actual` as a multiset against the replay.
    pub fn check(&self, mut actual: Vec<u32>, context: &str) -> BenchResult<Fingerprint> {
        let got = Fingerprint::of(actual.iter().copied());
        let want = self.fingerprint();
        let mismatch = |detail: String| BenchError::Oracle { context: context.to_string(), detail };
        if got != want {
            return Err(mismatch(format!(
                "{} elements with fingerprint {got}, expected {} with {want}",
                got.len, want.len
            )));
        }
        if actual.len() <= FULL_COMPARE_LIMIT {
            let mut expected = self.contents();
            expected.sort_unstable();
            actual.sort_unstable();
            if let Some(i) = actual.iter().zip(&expected).position(|(a, b)| a != b) {
                return Err(mismatch(format!("sorted contents differ at {i}")));
            }
        }
        Ok(got)
    }
}

/// Deterministic tags for one round; top bits left clear so repeated +1
/// passes never wrap in practice.
pub fn round_values(seed: u64, round: u64, n: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    (0..n).map(|_| rng.random::<u32>() >> 2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_ignores_order() {
        let a = Fingerprint::of([1, 2, 3, 3]);
        let b = Fingerprint::of([3, 1, 3, 2]);
        assert_eq!(a, b);
        assert_ne!(a, Fingerprint::of([1, 2, 3]));
        assert_ne!(a, Fingerprint::of([1, 2, 3, 4]));
    }

    #[test]
    fn offset_replay_matches_eager_replay() {
        let mut oracle = Oracle::new();
        let mut eager: Vec<u32> = Vec::new();
        for round in 0..5u64 {
            let vals = round_values(7, round, 100 + round as usize);
            oracle.push_all(&vals);
            eager.extend_from_slice(&vals);
            oracle.add_all(3);
            eager.iter_mut().for_each(|x| *x = x.wrapping_add(3));
        }
        assert_eq!(oracle.contents(), eager);
        assert!(oracle.check(eager.iter().rev().copied().collect(), "t").is_ok());
        eager[0] ^= 1;
        assert!(oracle.check(eager, "t").is_err());
    }

    #[test]
    fn round_values_are_seeded() {
        assert_eq!(round_values(1, 2, 50), round_values(1, 2, 50));
        assert_ne!(round_values(1, 2, 50), round_values(1, 3, 50));
        assert_ne!(round_values(1, 2, 50), round_values(2, 2, 50));
        assert!(round_values(1, 2, 1000).iter().all(|&v| v < 1 << 30));
    }
}
