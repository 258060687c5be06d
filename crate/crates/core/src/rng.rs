//! Seeded randomness shared by every stochastic stage.
//!
//! All generators are ChaCha8 streams derived from a 64-bit seed, so a run is
//! reproducible bit-for-bit on any platform. Sub-streams for independent work
//! items (window, augmented copy, restart, ...) are derived by mixing the
//! parent seed with the item's coordinates, which keeps results independent of
//! iteration or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derive an independent seed for the work item identified by `parts`.
    pub fn derive(self, parts: &[u64]) -> RngSeed {
        let mut h = splitmix(self.0 ^ 0x5851_f42d_4c95_7f2d);
        for &p in parts {
            h = splitmix(h ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        RngSeed(h)
    }

    pub fn derive_rng(self, parts: &[u64]) -> Rng {
        self.derive(parts).rng()
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
