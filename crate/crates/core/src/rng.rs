//! Reproducible random streams.
//!
//! Every trajectory or walker draws from its own ChaCha8 stream. The key is a
//! mix of the master seed and a domain tag; the 64-bit stream id is the item
//! index. Results therefore never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Domain tags separating the random streams of different consumers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Background = 1,
    Tagged = 2,
    Walker = 3,
    OperatorMc = 4,
    Bootstrap = 5,
    Misc = 6,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key derivation: `splitmix64(master ^ splitmix64(domain))`.
pub fn stream_key(master: u64, domain: Domain) -> u64 {
    splitmix64(master ^ splitmix64(domain as u64))
}

/// Independent generator for item `index` of `domain`.
pub fn substream(master: u64, domain: Domain, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(master, domain));
    rng.set_stream(index);
    rng
}
