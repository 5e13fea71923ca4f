//! Versioned JSON files holding fitted policies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::PolicyFit;
use crate::swing::SwingPolicyFit;

pub const FIT_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "fit", rename_all = "snake_case")]
pub enum StoredFit {
    Single(PolicyFit),
    Swing(SwingPolicyFit),
}

#[derive(Serialize)]
struct FileRef<'a> {
    version: u32,
    #[serde(flatten)]
    body: &'a StoredFit,
}

impl StoredFit {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(&FileRef {
            version: FIT_FILE_VERSION,
            body: self,
        })?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut v: serde_json::Value = serde_json::from_str(text)?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| Error::Format("fit file is not a JSON object".into()))?;
        let version = obj
            .remove("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format("fit file has no version".into()))?;
        if version != u64::from(FIT_FILE_VERSION) {
            return Err(Error::Version {
                found: version as u32,
                expected: FIT_FILE_VERSION,
            });
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
