//! Versioned JSON checkpoints for trained models.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank::BinaryHead;
use crate::tag::TagHead;

pub const CHECKPOINT_VERSION: u32 = 1;

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Refuses documents whose `version` field is missing or unknown.
pub fn check_version(text: &str) -> Result<()> {
    #[derive(Deserialize)]
    struct Probe {
        version: Option<u64>,
    }
    let probe: Probe = serde_json::from_str(text)?;
    match probe.version {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => Ok(()),
        Some(v) => Err(Error::Checkpoint(format!("unsupported checkpoint version {v}"))),
        None => Err(Error::Checkpoint("checkpoint has no version field".into())),
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    version: u32,
    kind: String,
    model: T,
}

/// Models stored in a `{"version", "kind", "model"}` envelope.
pub trait Checkpoint: Serialize + DeserializeOwned {
    const KIND: &'static str;

    fn validate_loaded(&self) -> Result<()>;

    fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Envelope {
            version: CHECKPOINT_VERSION,
            kind: Self::KIND.to_string(),
            model: self,
        })?)
    }

    fn from_json(text: &str) -> Result<Self> {
        check_version(text)?;
        let env: Envelope<Self> = serde_json::from_str(text)?;
        if env.kind != Self::KIND {
            return Err(Error::Checkpoint(format!(
                "expected a {} checkpoint, found {}",
                Self::KIND,
                env.kind
            )));
        }
        env.model.validate_loaded()?;
        Ok(env.model)
    }

    fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json()?)
    }

    fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }
}

impl Checkpoint for BinaryHead {
    const KIND: &'static str = "ranker";

    fn validate_loaded(&self) -> Result<()> {
        self.validate()
    }
}

impl Checkpoint for TagHead {
    const KIND: &'static str = "tagger";

    fn validate_loaded(&self) -> Result<()> {
        self.validate()
    }
}
