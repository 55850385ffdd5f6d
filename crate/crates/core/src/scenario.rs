//! A self-contained problem instance: base station, catalog, users and the
//! channel each user sees.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{BsConfig, ChannelState};
use crate::error::{Result, SlideError};
use crate::profiles::{read_json, Catalog, UserSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioUser {
    #[serde(flatten)]
    pub spec: UserSpec,
    /// Task type the user's request belongs to, when generated from tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<u32>,
    pub channel: ChannelState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    /// Hash of the configuration the scenario was generated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub bs: BsConfig,
    pub catalog: Catalog,
    pub users: Vec<ScenarioUser>,
}

impl Scenario {
    /// Re-validates the catalog and every user, pruning compatible models the
    /// energy budget cannot instantiate.
    pub fn validate_and_prune(&mut self) -> Result<()> {
        self.bs.validate()?;
        self.catalog = Catalog::new(std::mem::take(&mut self.catalog.models))?;
        let mut ids = std::collections::BTreeSet::new();
        for user in &mut self.users {
            if !ids.insert(user.spec.user_id) {
                return Err(SlideError::invalid(
                    format!("user {}: user_id", user.spec.user_id),
                    "duplicate user id",
                ));
            }
            user.spec.validate_and_prune(&self.catalog)?;
            let ch = &user.channel;
            if !(ch.gain_linear >= 0.0 && ch.spectral_efficiency >= 0.0) {
                return Err(SlideError::invalid(
                    format!("user {}: channel", user.spec.user_id),
                    "gain and spectral efficiency must be non-negative",
                ));
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut s: Scenario = serde_json::from_str(text).map_err(|source| SlideError::Parse {
        path: "<memory>".into(),
        source,
    })?;
    s.validate_and_prune()?;
    Ok(s)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let mut s: Scenario = read_json(path.as_ref())?;
    s.validate_and_prune()?;
    Ok(s)
}
