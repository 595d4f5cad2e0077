//! Provenance, atomic output and error categories.

use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use matcha::checkpoint::write_atomic;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Invalid command configuration; lists every problem found.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl ConfigError {
    pub fn one(msg: impl Into<String>) -> Self {
        Self(vec![msg.into()])
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("\n  "))
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Io,
    Data,
    Numeric,
}

impl Category {
    pub fn of(err: &anyhow::Error) -> Self {
        use matcha::Error as E;
        if err.downcast_ref::<ConfigError>().is_some() {
            return Category::Config;
        }
        match err.downcast_ref::<E>() {
            Some(E::InvalidArgument(_)) => Category::Config,
            Some(E::Io { .. }) => Category::Io,
            Some(
                E::Format { .. }
                | E::Integrity(_)
                | E::EmptyInput(_)
                | E::Range { .. }
                | E::InsufficientCorpus(_)
                | E::Schema(_),
            ) => Category::Data,
            Some(E::Shape(_) | E::DegenerateRepresentation(_) | E::Numeric { .. }) => {
                Category::Numeric
            }
            None if err.downcast_ref::<std::io::Error>().is_some() => Category::Io,
            None => Category::Data,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Io => "io",
            Category::Data => "data",
            Category::Numeric => "numeric",
        }
    }

    pub fn exit_code(self) -> ExitCode {
        ExitCode::from(match self {
            Category::Config => 2,
            Category::Io => 3,
            Category::Data => 4,
            Category::Numeric => 5,
        })
    }
}

/// Seed, configuration hash and tool version attached to every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl Provenance {
    /// SHA-256 over the JSON encoding of the effective configuration.
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64) -> Self {
        let body = serde_json::to_vec(&(command, config)).expect("configuration serializes");
        let digest = Sha256::digest(&body);
        Self {
            seed,
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Writes to `path` atomically, or prints when no path is given.
pub fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}
