use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// A named, reproducible source of randomness.
///
/// Child streams are derived by hashing a key into the stream id, so any piece
/// of work that owns a stream produces the same draws no matter which thread
/// runs it or in what order sibling work is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    seed: u64,
    id: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { seed, id: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Independent child stream identified by `key`.
    pub fn substream(&self, key: u64) -> Self {
        RandomStream {
            seed: self.seed,
            id: splitmix64(self.id ^ splitmix64(key.wrapping_add(0x51_7c_c1_b7_27_22_0a_95))),
        }
    }

    /// Child stream keyed by a short tag plus an index, e.g. `("fit", k)`.
    pub fn child(&self, tag: &str, index: u64) -> Self {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in tag.bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
        self.substream(h).substream(index)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.id);
        rng
    }

    pub fn standard_normals(&self, n: usize) -> Vec<f64> {
        let mut rng = self.rng();
        StandardNormal.sample_iter(&mut rng).take(n).collect()
    }

    pub fn uniforms(&self, n: usize) -> Vec<f64> {
        use rand::Rng;
        let mut rng = self.rng();
        (0..n).map(|_| rng.random::<f64>()).collect()
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
