use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ObjectType, ScenarioMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    fn apply_f64(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

/// Numeric metadata fields a clause may compare.
pub const NUMERIC_FIELDS: &[&str] = &[
    "ego_moving_distance",
    "object_count",
    "light_count",
    "altitude_range",
    "episode_length",
    "dt",
    "difficulty",
    "intersection_count",
    "vehicle_count",
    "pedestrian_count",
    "cyclist_count",
    "cone_count",
    "barrier_count",
];

/// String metadata fields a clause may test for equality.
pub const TAG_FIELDS: &[&str] = &["source", "sdc_id"];

fn numeric_field(meta: &ScenarioMetadata, field: &str) -> Option<f64> {
    let count = |t| Some(meta.count_of(t) as f64);
    match field {
        "ego_moving_distance" => Some(meta.ego_moving_distance()),
        "object_count" => Some(meta.object_count as f64),
        "light_count" => Some(meta.light_count as f64),
        "altitude_range" => Some(meta.altitude_range),
        "episode_length" => Some(meta.episode_length as f64),
        "dt" => Some(meta.dt),
        "difficulty" => meta.difficulty,
        "intersection_count" => meta.intersection_count.map(|c| c as f64),
        "vehicle_count" => count(ObjectType::Vehicle),
        "pedestrian_count" => count(ObjectType::Pedestrian),
        "cyclist_count" => count(ObjectType::Cyclist),
        "cone_count" => count(ObjectType::Cone),
        "barrier_count" => count(ObjectType::Barrier),
        _ => None,
    }
}

fn tag_field<'a>(meta: &'a ScenarioMetadata, field: &str) -> &'a str {
    match field {
        "source" => &meta.source,
        "sdc_id" => &meta.sdc_id,
        _ => unreachable!("tag fields are checked at construction"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Clause {
    Numeric { field: String, op: CmpOp, value: f64 },
    Tag { field: String, value: String, negate: bool },
}

impl Clause {
    pub fn numeric(field: &str, op: CmpOp, value: f64) -> Result<Self> {
        if !NUMERIC_FIELDS.contains(&field) {
            return Err(Error::Predicate(format!("unknown numeric field {field:?}")));
        }
        Ok(Clause::Numeric {
            field: field.to_string(),
            op,
            value,
        })
    }

    pub fn tag(field: &str, value: &str, negate: bool) -> Result<Self> {
        if !TAG_FIELDS.contains(&field) {
            return Err(Error::Predicate(format!("unknown tag field {field:?}")));
        }
        Ok(Clause::Tag {
            field: field.to_string(),
            value: value.to_string(),
            negate,
        })
    }

    /// Fields without a value (an unset difficulty, say) never match.
    pub fn matches(&self, meta: &ScenarioMetadata) -> bool {
        match self {
            Clause::Numeric { field, op, value } => numeric_field(meta, field).map_or(false, |x| op.apply_f64(x, *value)),
            Clause::Tag { field, value, negate } => (tag_field(meta, field) == value) != *negate,
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::Numeric { field, op, value } => write!(f, "{field}{}{value}", op.symbol()),
            Clause::Tag { field, value, negate } => write!(f, "{field}{}{value}", if *negate { "!=" } else { "==" }),
        }
    }
}

/// Parses `field<op>value`, e.g. `ego_moving_distance>10` or `source==pg`.
impl FromStr for Clause {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ops = [
            ("<=", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("==", CmpOp::Eq),
            ("!=", CmpOp::Ne),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
            ("=", CmpOp::Eq),
        ];
        let (pos, sym, op) = ops
            .iter()
            .filter_map(|(sym, op)| s.find(sym).map(|p| (p, *sym, *op)))
            .min_by_key(|(p, sym, _)| (*p, std::cmp::Reverse(sym.len())))
            .ok_or_else(|| Error::Predicate(format!("no comparison operator in {s:?}")))?;
        let field = s[..pos].trim();
        let value = s[pos + sym.len()..].trim();
        if TAG_FIELDS.contains(&field) {
            return match op {
                CmpOp::Eq => Clause::tag(field, value, false),
                CmpOp::Ne => Clause::tag(field, value, true),
                _ => Err(Error::Predicate(format!("tag field {field:?} only supports == and !="))),
            };
        }
        let number: f64 = value
            .parse()
            .map_err(|_| Error::Predicate(format!("{value:?} is not a number in {s:?}")))?;
        Clause::numeric(field, op, number)
    }
}

/// Conjunction of clauses over scenario metadata. The empty predicate keeps everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterPredicate {
    pub clauses: Vec<Clause>,
}

impl FilterPredicate {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn new(clauses: Vec<Clause>) -> Self {
        Self { clauses }
    }

    pub fn parse<S: AsRef<str>>(clauses: &[S]) -> Result<Self> {
        clauses.iter().map(|c| c.as_ref().parse()).collect::<Result<Vec<_>>>().map(Self::new)
    }

    /// Drops scenes whose ego climbs more than `threshold` meters.
    pub fn no_overpass(threshold: f64) -> Self {
        Self::new(vec![Clause::Numeric {
            field: "altitude_range".into(),
            op: CmpOp::Le,
            value: threshold,
        }])
    }

    pub fn and(mut self, other: FilterPredicate) -> Self {
        self.clauses.extend(other.clauses);
        self
    }

    pub fn matches(&self, meta: &ScenarioMetadata) -> bool {
        self.clauses.iter().all(|c| c.matches(meta))
    }
}
