use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use roboguard_core::instrument::CoordinationNodeSpec;
use roboguard_core::{CnType, PolicyConfig, RiskKind};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Wall-clock instant, serialized as ISO-8601 with millisecond precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn new(t: DateTime<Utc>) -> Self {
        // Truncate so values survive a serialization round trip unchanged.
        let ms = t.timestamp_millis();
        Self(DateTime::from_timestamp_millis(ms).expect("millisecond timestamp in range"))
    }

    pub fn now() -> Self {
        Self::new(Utc::now())
    }

    pub fn inner(self) -> DateTime<Utc> {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Millis, true))
    }
}

impl FromStr for Timestamp {
    type Err = chrono::ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DateTime::parse_from_rfc3339(s).map(|t| Self::new(t.with_timezone(&Utc)))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps simulator seconds onto wall-clock time for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunClock {
    pub epoch: Timestamp,
}

impl RunClock {
    pub fn new(epoch: Timestamp) -> Self {
        Self { epoch }
    }

    pub fn at(&self, sim_secs: f64) -> Timestamp {
        let ms = (sim_secs * 1e3).round() as i64;
        Timestamp::new(self.epoch.0 + Duration::milliseconds(ms))
    }
}

/// One finding a CN was inserted for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskInfo {
    pub kind: RiskKind,
    pub topic: String,
    /// Ids of the CN input flows that carry this topic.
    pub flows: Vec<String>,
}

/// What the console shows for one coordination node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub cn_id: String,
    pub cn_type: CnType,
    pub description: String,
    /// Last violation or decision of interest.
    pub trigger_time: Option<Timestamp>,
    pub risk_info: Vec<RiskInfo>,
    /// Active policy; `None` for CNs without one (fps monitors).
    pub policy_params: Option<PolicyConfig>,
}

impl RiskModel {
    pub fn from_spec(cn: &CoordinationNodeSpec, active: Option<&PolicyConfig>) -> Self {
        let risk_info = cn
            .risks
            .iter()
            .map(|r| RiskInfo {
                kind: r.kind,
                topic: r.topic.clone(),
                flows: cn
                    .inputs
                    .iter()
                    .filter(|b| b.original_topic == r.topic)
                    .map(|b| b.flow_id.clone())
                    .collect(),
            })
            .collect();
        Self {
            cn_id: cn.id.clone(),
            cn_type: cn.cn_type,
            description: cn.description.clone(),
            trigger_time: None,
            risk_info,
            policy_params: active.cloned(),
        }
    }
}

/// Append-only entry of the violation log. `index` is the position in
/// the log and never changes once assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub index: u64,
    pub time: Timestamp,
    pub cn_id: String,
    pub violated_rule: String,
    pub cause: String,
    pub details: String,
}

/// Update pushed by a running CN (or on its behalf by the controller).
#[derive(Debug, Clone, PartialEq)]
pub enum CnUpdate {
    Register(RiskModel),
    /// A decision worth surfacing that is not itself a violation.
    Trigger {
        cn_id: String,
        time: Timestamp,
    },
    /// `index` is assigned by the store.
    Violation {
        time: Timestamp,
        cn_id: String,
        violated_rule: String,
        cause: String,
        details: String,
    },
    /// Echo of the config the engine applied.
    Config {
        cn_id: String,
        config: PolicyConfig,
    },
}

impl CnUpdate {
    pub fn cn_id(&self) -> &str {
        match self {
            CnUpdate::Register(m) => &m.cn_id,
            CnUpdate::Trigger { cn_id, .. } | CnUpdate::Violation { cn_id, .. } | CnUpdate::Config { cn_id, .. } => {
                cn_id
            }
        }
    }
}
