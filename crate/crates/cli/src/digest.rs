use std::fs;
use std::path::Path;

use ihi_core::evaluate::directory_digest;
use ihi_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn dir(path: &Path) -> Result<String> {
    directory_digest(path)
}

/// Hash of a subcommand's resolved settings and the contents of its inputs.
///
/// Output locations are not part of the digest.
pub fn config<T: Serialize>(command: &str, settings: &T, inputs: &[(&str, String)]) -> String {
    let value = serde_json::json!({
        "command": command,
        "settings": settings,
        "inputs": inputs,
    });
    hex::encode(Sha256::digest(serde_json::to_vec(&value).expect("serializable")))
}
