//! Small shared helpers: stable hashing, seed derivation, and strict TSV
//! reading.
//!
//! `std::collections::hash_map::DefaultHasher` is not guaranteed stable
//! across releases, and seeds that feed persisted artifacts must never
//! drift, so the hashes here are written out by hand.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::{Error, Result};

/// FNV-1a, 64-bit. Used for content fingerprints (vocabulary, lexicon)
/// and for folding string ids into RNG seeds.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer; decorrelates structured inputs.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives an independent stream seed from a master seed and a sequence of
/// context values (strategy tags, hashed ids, loop indices). Order matters.
pub(crate) fn mix_seed(master: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(master);
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// Incremental fingerprint over a sequence of strings; order-sensitive.
/// A length prefix keeps ["ab","c"] and ["a","bc"] distinct.
pub(crate) fn fingerprint_strings<'a, I: IntoIterator<Item = &'a str>>(items: I) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in items {
        h ^= fnv1a64(&(s.len() as u64).to_le_bytes());
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        h ^= fnv1a64(s.as_bytes());
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Reads a TSV file expecting exactly `arity` fields per non-blank line.
pub(crate) fn read_tsv(path: &Path, arity: usize) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != arity {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected {arity} tab-separated fields, got {}", fields.len()),
            ));
        }
        if fields[0].is_empty() || fields.last().unwrap().is_empty() {
            return Err(Error::parse(path, lineno + 1, "empty key field"));
        }
        rows.push(fields);
    }
    Ok(rows)
}
