//! Single-byte tamper sweep over a valid package.

use std::collections::BTreeMap;

use rand::Rng;
use sre_core::lifecycle::validate_package;

use super::golden;

/// Flips one random byte per mutation and returns how often each rejection
/// code occurred. Any acceptance is an error.
pub fn tamper_sweep(rng: &mut impl Rng, mutations: usize) -> Result<BTreeMap<&'static str, usize>, String> {
    let bytes = golden::package("1.0.0", 600.0);
    let trusted = [golden::signing_key().verifying_key()];
    validate_package(&bytes, &trusted).map_err(|e| format!("untampered package rejected: {e}"))?;
    let mut codes = BTreeMap::new();
    for _ in 0..mutations {
        let mut m = bytes.clone();
        let at = rng.gen_range(0..m.len());
        m[at] ^= rng.gen_range(1..=255u8);
        match validate_package(&m, &trusted) {
            Ok(_) => return Err(format!("flip at byte {at} was accepted")),
            Err(e) => *codes.entry(e.code()).or_insert(0) += 1,
        }
    }
    Ok(codes)
}
