//! JSON container for trained mechanisms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MechanismError, MechanismParams, ScenarioFingerprint};

pub const WEIGHTS_FORMAT: &str = "vda-mechanism";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    format: String,
    version: u32,
    mechanism: MechanismParams,
}

pub fn weights_to_json(params: &MechanismParams) -> Result<String, MechanismError> {
    params.validate()?;
    let file = WeightsFile {
        format: WEIGHTS_FORMAT.into(),
        version: WEIGHTS_VERSION,
        mechanism: params.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

/// Parses a weights container. When `expected` is given the stored
/// fingerprint must match it exactly.
pub fn weights_from_json(text: &str, expected: Option<&ScenarioFingerprint>) -> Result<MechanismParams, MechanismError> {
    let file: WeightsFile = serde_json::from_str(text)?;
    if file.format != WEIGHTS_FORMAT {
        return Err(MechanismError::Invalid(format!("not a mechanism file (format {:?})", file.format)));
    }
    if file.version != WEIGHTS_VERSION {
        return Err(MechanismError::UnsupportedVersion(file.version));
    }
    file.mechanism.validate()?;
    if let Some(fp) = expected {
        if &file.mechanism.fingerprint != fp {
            return Err(MechanismError::FingerprintMismatch {
                expected: Box::new(fp.clone()),
                found: Box::new(file.mechanism.fingerprint),
            });
        }
    }
    Ok(file.mechanism)
}

/// Writes to a sibling temporary file first so readers never see a partial file.
pub fn save_weights(params: &MechanismParams, path: &Path) -> Result<(), MechanismError> {
    crate::write_atomic(path, weights_to_json(params)?.as_bytes())?;
    Ok(())
}

pub fn load_weights(path: &Path, expected: Option<&ScenarioFingerprint>) -> Result<MechanismParams, MechanismError> {
    let text = std::fs::read_to_string(path)?;
    weights_from_json(&text, expected)
}
