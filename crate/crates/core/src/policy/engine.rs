use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::step::{self, Decision, Inbound};
use super::{CnState, ConfigError, PolicyConfig, PolicyKind, PolicyParams, Role};

/// Result of a successful `configure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub cn_id: String,
    /// `false` when the applied config equals the previous one.
    pub changed: bool,
    pub applied: PolicyConfig,
}

#[derive(Debug, Clone)]
pub struct CnHandle {
    pub state: CnState,
    pub config: PolicyConfig,
}

/// Owns every CN's state and active policy. Reconfiguration is applied
/// between steps by whoever owns the engine.
#[derive(Debug, Clone, Default)]
pub struct PolicyEngine {
    cns: BTreeMap<String, CnHandle>,
    enforce_roles: bool,
}

impl PolicyEngine {
    pub fn new(enforce_roles: bool) -> Self {
        Self {
            cns: BTreeMap::new(),
            enforce_roles,
        }
    }

    pub fn enforce_roles(&self) -> bool {
        self.enforce_roles
    }

    /// Adds a CN with its initial config. The config is trusted to have
    /// been validated by the caller.
    pub fn register(&mut self, state: CnState, config: PolicyConfig) {
        self.cns.insert(state.cn_id().to_string(), CnHandle { state, config });
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.cns.keys().map(String::as_str)
    }

    pub fn get(&self, cn_id: &str) -> Option<&CnHandle> {
        self.cns.get(cn_id)
    }

    pub fn config(&self, cn_id: &str) -> Option<&PolicyConfig> {
        self.cns.get(cn_id).map(|h| &h.config)
    }

    pub fn step(&mut self, cn_id: &str, inbound: &[Inbound], now: f64) -> Result<Decision, ConfigError> {
        let h = self.cns.get_mut(cn_id).ok_or_else(|| ConfigError::UnknownCn {
            cn_id: cn_id.to_string(),
        })?;
        Ok(step::step(&mut h.state, &h.config, inbound, now))
    }

    pub fn tick(&mut self, cn_id: &str, now: f64) -> Result<Decision, ConfigError> {
        let h = self.cns.get_mut(cn_id).ok_or_else(|| ConfigError::UnknownCn {
            cn_id: cn_id.to_string(),
        })?;
        Ok(step::tick(&mut h.state, &h.config, now))
    }

    /// Validates and swaps in a new config.
    ///
    /// End users may only pick the policies they execute (Constrain on an
    /// RSRCN, MsrBlock on an MSRCN) and only set `max_vel_limit` or
    /// `block_bits`. Other parameters are carried over from the active
    /// config. Role checks are skipped when enforcement is off.
    pub fn configure(&mut self, cn_id: &str, cfg: PolicyConfig, role: Role) -> Result<Ack, ConfigError> {
        let h = self.cns.get_mut(cn_id).ok_or_else(|| ConfigError::UnknownCn {
            cn_id: cn_id.to_string(),
        })?;
        let cn_type = h.state.cn_type();
        if !cn_type.allowed_policies().contains(&cfg.policy) {
            return Err(ConfigError::InvalidPolicyForCnType {
                cn_type,
                policy: cfg.policy,
            });
        }
        let role = if self.enforce_roles { role } else { Role::Developer };
        let applied = match role {
            Role::Developer => cfg,
            Role::EndUser => end_user_config(cn_id, &h.config, cfg)?,
        };
        applied.validate_for(&h.state)?;
        let changed = applied != h.config;
        if changed {
            if !applied.policy.same_class(h.config.policy) {
                h.state.clear_queue();
            }
            h.config = applied.clone();
        }
        Ok(Ack {
            cn_id: cn_id.to_string(),
            changed,
            applied,
        })
    }
}

fn end_user_config(cn_id: &str, current: &PolicyConfig, cfg: PolicyConfig) -> Result<PolicyConfig, ConfigError> {
    if current.mandatory && cfg != *current {
        return Err(ConfigError::MandatoryPolicy {
            cn_id: cn_id.to_string(),
        });
    }
    if cfg.policy.executor() != Role::EndUser {
        return Err(ConfigError::RoleViolation {
            reason: format!("{} is selected by the developer", cfg.policy),
        });
    }
    if cfg.mandatory && !current.mandatory {
        return Err(ConfigError::RoleViolation {
            reason: "end users cannot mark a policy mandatory".into(),
        });
    }
    let mut rest = cfg.params.clone();
    let mut params = current.params.clone();
    match cfg.policy {
        PolicyKind::Constrain => {
            params.max_vel_limit = rest.max_vel_limit.take();
        }
        PolicyKind::MsrBlock => {
            params.block_bits = std::mem::take(&mut rest.block_bits);
        }
        _ => unreachable!("executor checked above"),
    }
    if rest != PolicyParams::default() {
        return Err(ConfigError::RoleViolation {
            reason: match cfg.policy {
                PolicyKind::Constrain => "end users may only set max_vel_limit".into(),
                _ => "end users may only set block_bits".into(),
            },
        });
    }
    Ok(PolicyConfig {
        policy: cfg.policy,
        params,
        mandatory: current.mandatory,
    })
}
