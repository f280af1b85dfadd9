//! Suspending a monitor to bytes and resuming it later.

use serde::{Deserialize, Serialize};

use super::{MonitorError, MonitorState};
use crate::spec::ValidatedSpec;

const FORMAT: &str = "retrolola-monitor";
const VERSION: u32 = 1;

/// A monitor's complete state, tied to the specification it was produced by.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenMonitor {
    format: String,
    version: u32,
    spec_hash: String,
    state: MonitorState,
}

impl FrozenMonitor {
    pub(crate) fn new(spec: &ValidatedSpec, state: MonitorState) -> Self {
        FrozenMonitor { format: FORMAT.into(), version: VERSION, spec_hash: spec.hash().into(), state }
    }

    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("monitor state always serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MonitorError> {
        let f: FrozenMonitor = serde_json::from_slice(bytes).map_err(|e| MonitorError::Thaw(e.to_string()))?;
        if f.format != FORMAT {
            return Err(MonitorError::Thaw(format!("unknown format `{}`", f.format)));
        }
        if f.version != VERSION {
            return Err(MonitorError::Thaw(format!("unsupported version {}", f.version)));
        }
        Ok(f)
    }

    pub(crate) fn into_state(self, spec: &ValidatedSpec) -> Result<MonitorState, MonitorError> {
        if self.spec_hash != spec.hash() {
            return Err(MonitorError::Thaw(format!(
                "frozen for specification {}, not {}",
                self.spec_hash,
                spec.hash()
            )));
        }
        if self.state.windows.len() != spec.n_streams() {
            return Err(MonitorError::Thaw("state does not match the specification".into()));
        }
        Ok(self.state)
    }
}
