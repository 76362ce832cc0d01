use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Counter-based random state.
///
/// The pair `(seed, counter)` fully determines every subsequent draw: the
/// counter is the word position inside a ChaCha8 keystream keyed by `seed`,
/// so draws are portable across platforms and independent of what other
/// streams were consumed in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// An independent child state for a named purpose. Does not advance `self`.
    pub fn derive(&self, tag: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tag.wrapping_add(1));
        rng.set_word_pos(u128::from(self.counter));
        Self::new(rng.next_u64())
    }

    /// Run `f` against the keystream at the current position, then advance the
    /// counter past everything `f` consumed.
    pub fn with_rng<R>(&mut self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(u128::from(self.counter));
        let out = f(&mut rng);
        self.counter = rng.get_word_pos() as u64;
        out
    }

    pub fn next_u64(&mut self) -> u64 {
        self.with_rng(|r| r.next_u64())
    }

    /// `n` uniform draws in `[0, 1)`.
    pub fn uniform(&mut self, n: usize) -> Vec<f64> {
        self.with_rng(|r| (0..n).map(|_| r.gen::<f64>()).collect())
    }

    /// `n` standard normal draws.
    pub fn normal(&mut self, n: usize) -> Vec<f64> {
        self.with_rng(|r| (0..n).map(|_| StandardNormal.sample(r)).collect())
    }
}
