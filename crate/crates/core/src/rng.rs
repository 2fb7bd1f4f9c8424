//! Named random streams.
//!
//! Every stage draws from its own ChaCha stream: the 64-bit experiment seed is
//! the key and the FNV-1a hash of the stage name selects the stream id. Adding
//! draws to one stage therefore never shifts another stage's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Stream = ChaCha20Rng;

pub const CHANNEL: &str = "channel";
pub const ORACLE: &str = "oracle";
pub const IRL: &str = "irl";
pub const D3PG: &str = "d3pg";
pub const EVAL: &str = "eval";

pub fn stream_id(name: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    name.bytes().fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub fn stream(seed: u64, name: &str) -> Stream {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

/// Derives a child stream, e.g. one per seed replicate inside a stage.
pub fn substream(seed: u64, name: &str, index: u64) -> Stream {
    stream(seed, &format!("{name}/{index}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: Vec<u64> = (0..4)
            .map({
                let mut r = stream(7, CHANNEL);
                move |_| r.random()
            })
            .collect();
        let b: Vec<u64> = (0..4)
            .map({
                let mut r = stream(7, CHANNEL);
                move |_| r.random()
            })
            .collect();
        let c: Vec<u64> = (0..4)
            .map({
                let mut r = stream(7, IRL);
                move |_| r.random()
            })
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fnv_reference_value() {
        // FNV-1a of the empty string is the offset basis.
        assert_eq!(stream_id(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(stream_id("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
