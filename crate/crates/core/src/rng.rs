//! Reproducible random streams.
//!
//! All randomness comes from ChaCha8, a counter-based generator. A master seed
//! is split by label (`"truth"`, `"obs"`, `"filter"`, ...) into independent
//! streams, and each stream can be further split into per-step, per-member
//! substreams so that parallel member propagation does not depend on
//! scheduling order.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type DefaultRng = ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> [u8; 32] {
    let mut state = 0u64;
    for &p in parts {
        state ^= p;
        splitmix(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    seed
}

/// A labelled random stream derived from a master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    master: u64,
    label: u64,
}

impl RngStream {
    pub fn new(master: u64, label: &str) -> Self {
        RngStream {
            master,
            label: fnv1a(label),
        }
    }

    /// Child stream, e.g. one per chain.
    pub fn split(&self, label: &str) -> Self {
        RngStream {
            master: self.master,
            label: self.label ^ fnv1a(label).rotate_left(17),
        }
    }

    /// Sequential generator for this stream.
    pub fn rng(&self) -> DefaultRng {
        ChaCha8Rng::from_seed(derive_seed(&[self.master, self.label, u64::MAX]))
    }

    /// Generator owned by a single (step, member) pair.
    pub fn substream(&self, step: u64, member: u64) -> DefaultRng {
        let mut rng = ChaCha8Rng::from_seed(derive_seed(&[self.master, self.label, step]));
        rng.set_stream(member);
        rng
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}
