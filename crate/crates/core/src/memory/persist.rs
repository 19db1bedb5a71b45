//! Canonical on-disk form of a memory bank: key-sorted, pretty-printed JSON.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{MemoryBank, MemoryError};

pub const SCHEMA_VERSION: &str = "htg-1";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: unsupported schema_version `{found}` (expected `{SCHEMA_VERSION}`)")]
    SchemaVersion { path: PathBuf, found: String },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: MemoryError,
    },
}

impl MemoryBank {
    /// Canonical text: every object's keys sorted, two-space indentation,
    /// trailing newline. Equal banks produce identical bytes.
    pub fn to_canonical_string(&self) -> String {
        let value = serde_json::to_value(self).expect("bank serializes");
        let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
        out.push('\n');
        out
    }

    pub fn from_canonical_str(text: &str, path: &Path) -> Result<MemoryBank, PersistError> {
        let parse_err = |e: serde_json::Error| PersistError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        let found = value
            .pointer("/meta/schema_version")
            .and_then(|v| v.as_str())
            .unwrap_or("<missing>");
        if found != SCHEMA_VERSION {
            return Err(PersistError::SchemaVersion {
                path: path.to_path_buf(),
                found: found.to_string(),
            });
        }
        // Re-parse from text so errors carry line and column.
        let bank: MemoryBank = serde_json::from_str(text).map_err(parse_err)?;
        bank.validate().map_err(|source| PersistError::Invalid {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(bank)
    }
}

pub fn save_bank(bank: &MemoryBank, path: &Path) -> Result<(), PersistError> {
    fs::write(path, bank.to_canonical_string()).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_bank(path: &Path) -> Result<MemoryBank, PersistError> {
    let text = fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    MemoryBank::from_canonical_str(&text, path)
}
