//! Fixed, platform-independent hash functions for the reference embedder.
//!
//! FNV-1a (64-bit) over the n-gram's tokens joined by the unit separator
//! `0x1f`, then a 64-bit avalanche finalizer (the murmur3 `fmix64` step).
//! Two derived hashes per n-gram: the slot index uses the prefix `b"i\x1f"`,
//! the sign uses the prefix `b"s\x1f"`. Pure integer arithmetic, so outputs
//! are bit-identical across platforms and Rust versions (the standard
//! library hasher carries no such guarantee).
//!
//! The finalizer is load-bearing: raw FNV-1a's low bits are linear in the
//! input bytes' low bits (the prime is odd), which correlates slot and sign
//! across structured vocabularies and skews inner products.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte stream.
pub fn fnv1a64<'a>(chunks: impl IntoIterator<Item = &'a [u8]>) -> u64 {
    let mut h = FNV_OFFSET;
    for chunk in chunks {
        for &b in chunk {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

fn hash_ngram(prefix: &[u8], tokens: &[&str]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    feed(prefix);
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 {
            feed(&[0x1f]);
        }
        feed(tok.as_bytes());
    }
    h
}

/// murmur3 `fmix64` avalanche finalizer.
fn finalize(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

/// Slot index and sign for one n-gram under signed feature hashing.
///
/// `index = fmix64(H_idx(g)) mod dim`, `sign = +1` iff the low bit of
/// `fmix64(H_sign(g))` is set, else `-1`.
pub fn ngram_slot(tokens: &[&str], dim: usize) -> (usize, f32) {
    debug_assert!(dim >= 1);
    let idx = (finalize(hash_ngram(b"i\x1f", tokens)) % dim as u64) as usize;
    let sign = if finalize(hash_ngram(b"s\x1f", tokens)) & 1 == 1 {
        1.0
    } else {
        -1.0
    };
    (idx, sign)
}
