//! Stable 64-bit text fingerprints.
//!
//! Used for prompt matching in scripted runs, trace digests, stub search
//! lookups and the hash embedder. FNV-1a is stable across platforms and
//! compiler versions, which `std::hash` does not promise.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Collapses every whitespace run into a single space and trims the ends.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fingerprint of the whitespace-normalized text.
pub fn fingerprint(text: &str) -> u64 {
    fnv1a(normalize(text).as_bytes())
}

/// Fingerprint rendered as 16 lowercase hex digits.
pub fn digest(text: &str) -> String {
    format!("{:016x}", fingerprint(text))
}
