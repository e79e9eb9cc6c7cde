//! FNV-1a content hashing. Used for script lookup keys, cache digests and
//! the input hashes recorded in run manifests.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hex digest with a scheme prefix, e.g. `fnv:a1b2...`.
pub fn fnv_digest(bytes: &[u8]) -> String {
    format!("fnv:{:016x}", fnv64(bytes))
}

/// Digest of a file's contents.
pub fn file_digest(path: &std::path::Path) -> std::io::Result<String> {
    Ok(fnv_digest(&std::fs::read(path)?))
}
