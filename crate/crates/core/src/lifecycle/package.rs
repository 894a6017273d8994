//! Signed rule packages.
//!
//! A package is a ZIP archive with exactly two stored entries, `rule.json`
//! followed by `rule.sig`. `rule.json` holds the manifest with the script
//! Base64-encoded; `rule.sig` holds the Base64 Ed25519 signature over the raw
//! bytes of `rule.json`, optionally followed by a second line with the
//! Base64 public key of the signer.
//!
//! Archives are written in one canonical layout (stored entries, fixed
//! 1980-01-01 timestamps, mode 0644, no extra fields) and validation rejects
//! any archive that does not re-encode to the same bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ed25519_dalek::pkcs8::{DecodePrivateKey, DecodePublicKey};
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::dsl::{parse_rule, DslError, RuleScript};
use crate::scalar::Scalar;

pub const MANIFEST_ENTRY: &str = "rule.json";
pub const SIGNATURE_ENTRY: &str = "rule.sig";

/// Contents of `rule.json`. A `null` parameter default declares a parameter
/// with no value and no fixed type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Option<Scalar>>,
    pub script: String,
}

/// Manifest fields supplied when building a package.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PackageSpec {
    pub name: String,
    pub version: String,
    pub description: Option<String>,
    pub params: BTreeMap<String, Option<Scalar>>,
}

/// A package that passed validation.
#[derive(Debug, Clone)]
pub struct RulePackage {
    pub manifest: Manifest,
    pub source: String,
    pub script: Arc<RuleScript>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PackageError {
    #[error("not a valid rule package archive: {0}")]
    BadZip(String),
    #[error("package has no '{0}' entry")]
    MissingEntry(&'static str),
    #[error("signature does not verify")]
    SignatureInvalid,
    #[error("package is signed by an untrusted key {0}")]
    UntrustedKey(String),
    #[error("script is not valid Base64 UTF-8: {0}")]
    Base64Error(String),
    #[error("invalid manifest: {0}")]
    BadManifest(String),
    #[error("manifest names rule '{manifest}' but the script defines '{script}'")]
    NameMismatch { manifest: String, script: String },
    #[error(transparent)]
    Script(#[from] DslError),
}

impl PackageError {
    pub fn code(&self) -> &'static str {
        match self {
            PackageError::BadZip(_) => "BadZip",
            PackageError::MissingEntry(_) => "MissingEntry",
            PackageError::SignatureInvalid => "SignatureInvalid",
            PackageError::UntrustedKey(_) => "UntrustedKey",
            PackageError::Base64Error(_) => "Base64Error",
            PackageError::BadManifest(_) => "BadManifest",
            PackageError::NameMismatch { .. } => "NameMismatch",
            PackageError::Script(e) => e.code(),
        }
    }
}

/// Writes entries as a canonical archive.
pub fn encode_zip(entries: &[(&str, &[u8])]) -> Vec<u8> {
    let mut w = ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    for (name, data) in entries {
        // writing into a Vec cannot fail
        w.start_file(*name, opts).expect("in-memory zip");
        w.write_all(data).expect("in-memory zip");
    }
    w.finish().expect("in-memory zip").into_inner()
}

fn bad_zip(e: impl std::fmt::Display) -> PackageError {
    PackageError::BadZip(e.to_string())
}

/// Reads `rule.json` and `rule.sig` from an archive, requiring the canonical
/// layout.
pub fn read_entries(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>), PackageError> {
    let mut archive = ZipArchive::new(Cursor::new(bytes)).map_err(bad_zip)?;
    let mut entries: Vec<(String, Vec<u8>)> = Vec::with_capacity(archive.len());
    for i in 0..archive.len() {
        let mut f = archive.by_index(i).map_err(bad_zip)?;
        let mut out = Vec::new();
        f.read_to_end(&mut out).map_err(bad_zip)?;
        entries.push((f.name().to_owned(), out));
    }
    // any byte outside the entry payloads must be exactly what we would write
    let refs: Vec<(&str, &[u8])> = entries.iter().map(|(n, d)| (n.as_str(), d.as_slice())).collect();
    if encode_zip(&refs) != bytes {
        return Err(PackageError::BadZip("archive is not in canonical form".into()));
    }
    let mut take = |name: &'static str| -> Result<Vec<u8>, PackageError> {
        let pos = entries
            .iter()
            .position(|(n, _)| n == name)
            .ok_or(PackageError::MissingEntry(name))?;
        Ok(entries.remove(pos).1)
    };
    let manifest = take(MANIFEST_ENTRY)?;
    let sig = take(SIGNATURE_ENTRY)?;
    if !entries.is_empty() {
        let extra: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
        return Err(PackageError::BadZip(format!("unexpected entries: {extra:?}")));
    }
    Ok((manifest, sig))
}

/// Base64 text of a public key, as used in configs and signature files.
pub fn encode_public_key(key: &VerifyingKey) -> String {
    B64.encode(key.as_bytes())
}

/// Parses a public key given as Base64 of its 32 bytes or as a PEM SPKI block.
pub fn parse_public_key(text: &str) -> Result<VerifyingKey, String> {
    let text = text.trim();
    if text.starts_with("-----BEGIN") {
        return VerifyingKey::from_public_key_pem(text).map_err(|e| e.to_string());
    }
    let raw = B64.decode(text).map_err(|e| e.to_string())?;
    let raw: [u8; 32] = raw
        .try_into()
        .map_err(|_| "public key must be 32 bytes".to_string())?;
    VerifyingKey::from_bytes(&raw).map_err(|e| e.to_string())
}

/// Parses a private key given as a PKCS#8 PEM block or Base64 of its 32-byte seed.
pub fn parse_signing_key(text: &str) -> Result<SigningKey, String> {
    let text = text.trim();
    if text.starts_with("-----BEGIN") {
        return SigningKey::from_pkcs8_pem(text).map_err(|e| e.to_string());
    }
    let raw = B64.decode(text).map_err(|e| e.to_string())?;
    let seed: [u8; 32] = raw
        .try_into()
        .map_err(|_| "private key seed must be 32 bytes".to_string())?;
    Ok(SigningKey::from_bytes(&seed))
}

/// Builds a signed package from script text.
pub fn build_package(script_text: &str, spec: &PackageSpec, key: &SigningKey) -> Result<Vec<u8>, PackageError> {
    let script = parse_rule(script_text)?;
    if script.rule_name != spec.name {
        return Err(PackageError::NameMismatch {
            manifest: spec.name.clone(),
            script: script.rule_name,
        });
    }
    let manifest = Manifest {
        name: spec.name.clone(),
        version: spec.version.clone(),
        description: spec.description.clone(),
        params: spec.params.clone(),
        script: B64.encode(script_text.as_bytes()),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let signature = key.sign(&json);
    let sig = format!(
        "{}\n{}\n",
        B64.encode(signature.to_bytes()),
        encode_public_key(&key.verifying_key())
    );
    Ok(encode_zip(&[(MANIFEST_ENTRY, &json), (SIGNATURE_ENTRY, sig.as_bytes())]))
}

fn verify(manifest: &[u8], sig_file: &[u8], trusted: &[VerifyingKey]) -> Result<(), PackageError> {
    let text = std::str::from_utf8(sig_file).map_err(|_| PackageError::SignatureInvalid)?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let sig_b64 = lines.next().ok_or(PackageError::SignatureInvalid)?;
    let sig_bytes: [u8; 64] = B64
        .decode(sig_b64)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or(PackageError::SignatureInvalid)?;
    let signature = Signature::from_bytes(&sig_bytes);
    match lines.next() {
        Some(key_b64) => {
            let claimed = parse_public_key(key_b64).map_err(|_| PackageError::SignatureInvalid)?;
            if !trusted.contains(&claimed) {
                return Err(PackageError::UntrustedKey(key_b64.to_owned()));
            }
            claimed
                .verify_strict(manifest, &signature)
                .map_err(|_| PackageError::SignatureInvalid)
        }
        None => trusted
            .iter()
            .any(|k| k.verify_strict(manifest, &signature).is_ok())
            .then_some(())
            .ok_or(PackageError::SignatureInvalid),
    }
}

/// Checks archive layout and signature, then decodes and parses the script.
/// The signature is checked before the manifest is parsed.
pub fn validate_package(bytes: &[u8], trusted: &[VerifyingKey]) -> Result<RulePackage, PackageError> {
    let (json, sig) = read_entries(bytes)?;
    verify(&json, &sig, trusted)?;
    let manifest: Manifest =
        serde_json::from_slice(&json).map_err(|e| PackageError::BadManifest(e.to_string()))?;
    let raw = B64
        .decode(manifest.script.trim())
        .map_err(|e| PackageError::Base64Error(e.to_string()))?;
    let source = String::from_utf8(raw).map_err(|e| PackageError::Base64Error(e.to_string()))?;
    let script = parse_rule(&source)?;
    if script.rule_name != manifest.name {
        return Err(PackageError::NameMismatch {
            manifest: manifest.name,
            script: script.rule_name,
        });
    }
    Ok(RulePackage {
        manifest,
        source,
        script: Arc::new(script),
        bytes: bytes.to_vec(),
    })
}
