//! Message payloads carried by the simulator and the content predicates
//! evaluated over them.
//!
//! The payload algebra is deliberately small: scalars, vectors, poses,
//! twists and opaque tokens cover every message the coordination nodes need
//! to inspect.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vec3 {
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    #[serde(default)]
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    fn scaled(&self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    fn axis(&self, name: &str) -> Option<f64> {
        match name {
            "x" => Some(self.x),
            "y" => Some(self.y),
            "z" => Some(self.z),
            _ => None,
        }
    }
}

/// Typed message body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    /// Single number (`std_msgs/Float64`, fps samples, max velocity).
    Scalar(f64),
    Vector(Vec3),
    /// Position-only pose (goals, odometry).
    Pose {
        position: Vec3,
    },
    /// Velocity command split into linear and angular parts.
    Twist {
        linear: Vec3,
        angular: Vec3,
    },
    /// Opaque token (audio chunk, detection label, ...).
    Token(String),
    Empty,
}

impl Payload {
    pub fn twist(linear_x: f64, angular_z: f64) -> Self {
        Payload::Twist {
            linear: Vec3::new(linear_x, 0.0, 0.0),
            angular: Vec3::new(0.0, 0.0, angular_z),
        }
    }

    pub fn pose(x: f64, y: f64) -> Self {
        Payload::Pose {
            position: Vec3::new(x, y, 0.0),
        }
    }

    /// Numeric field lookup by dotted path.
    ///
    /// Scalars answer to `data` or `value`; vectors to `x`/`y`/`z`; poses to
    /// `position.x` (or bare `x`); twists to `linear.x`, `angular.z`, ...
    pub fn field(&self, path: &str) -> Option<f64> {
        match self {
            Payload::Scalar(v) => matches!(path, "data" | "value").then_some(*v),
            Payload::Vector(v) => v.axis(path),
            Payload::Pose { position } => {
                let axis = path.strip_prefix("position.").unwrap_or(path);
                position.axis(axis)
            }
            Payload::Twist { linear, angular } => {
                let (part, axis) = path.split_once('.')?;
                match part {
                    "linear" => linear.axis(axis),
                    "angular" => angular.axis(axis),
                    _ => None,
                }
            }
            Payload::Token(_) | Payload::Empty => None,
        }
    }

    /// Planar position, if the payload carries one.
    pub fn position(&self) -> Option<(f64, f64)> {
        match self {
            Payload::Pose { position } | Payload::Vector(position) => Some((position.x, position.y)),
            _ => None,
        }
    }

    /// The velocity magnitude a rate limiter acts on: the value of a scalar
    /// or the linear speed of a twist.
    pub fn speed(&self) -> Option<f64> {
        match self {
            Payload::Scalar(v) => Some(*v),
            Payload::Twist { linear, .. } => Some(linear.norm()),
            _ => None,
        }
    }

    /// Returns a copy whose speed does not exceed `cap`. Twists are scaled
    /// uniformly on the linear part; the angular part is untouched.
    pub fn with_speed_cap(&self, cap: f64) -> Payload {
        match self {
            Payload::Scalar(v) => Payload::Scalar(v.min(cap)),
            Payload::Twist { linear, angular } => {
                let speed = linear.norm();
                if speed <= cap {
                    self.clone()
                } else if speed == 0.0 || cap <= 0.0 {
                    Payload::Twist {
                        linear: Vec3::ZERO,
                        angular: *angular,
                    }
                } else {
                    Payload::Twist {
                        linear: linear.scaled(cap / speed),
                        angular: *angular,
                    }
                }
            }
            other => other.clone(),
        }
    }

    /// One-line human summary used in violation details.
    pub fn summary(&self) -> String {
        match self {
            Payload::Scalar(v) => format!("{v}"),
            Payload::Vector(v) => format!("({}, {}, {})", v.x, v.y, v.z),
            Payload::Pose { position } => format!("pose({}, {})", position.x, position.y),
            Payload::Twist { linear, angular } => {
                format!("twist(lin.x={}, ang.z={})", linear.x, angular.z)
            }
            Payload::Token(t) => t.clone(),
            Payload::Empty => "empty".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "lt", alias = "<")]
    Lt,
    #[serde(rename = "le", alias = "<=")]
    Le,
    #[serde(rename = "gt", alias = ">")]
    Gt,
    #[serde(rename = "ge", alias = ">=")]
    Ge,
    #[serde(rename = "eq", alias = "==")]
    Eq,
    #[serde(rename = "ne", alias = "!=")]
    Ne,
}

impl CmpOp {
    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Content predicate over a single payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Always,
    Compare { field: String, op: CmpOp, value: f64 },
    InRect(Rect),
    Not(Box<Predicate>),
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
}

impl Predicate {
    pub fn compare(field: &str, op: CmpOp, value: f64) -> Self {
        Predicate::Compare {
            field: field.to_string(),
            op,
            value,
        }
    }

    /// A missing field or position makes the atom false.
    pub fn eval(&self, payload: &Payload) -> bool {
        match self {
            Predicate::Always => true,
            Predicate::Compare { field, op, value } => payload.field(field).is_some_and(|lhs| op.apply(lhs, *value)),
            Predicate::InRect(rect) => payload.position().is_some_and(|(x, y)| rect.contains(x, y)),
            Predicate::Not(inner) => !inner.eval(payload),
            Predicate::All(items) => items.iter().all(|p| p.eval(payload)),
            Predicate::Any(items) => items.iter().any(|p| p.eval(payload)),
        }
    }
}
