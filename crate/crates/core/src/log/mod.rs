//! Event logs a monitor appends to and retrieves its past from.

mod adapter;
mod file;

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value as Json;
use thiserror::Error;

use crate::event::{json_to_value, value_to_json, Event, WireError};
use crate::value::Value;

pub use adapter::AdapterProcess;
pub use file::{FileStore, STRIDE};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("log integrity: {0}")]
    Integrity(String),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("adapter exited with status {status}: {stderr}")]
    Adapter { status: String, stderr: String },
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("filter must be a record or an object with text keys, got {0}")]
    Shape(String),
    #[error("field `{0}`: nested filters are not supported")]
    Nested(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Clause {
    Eq(Value),
    In(BTreeSet<Value>),
}

/// Conjunction of per-field clauses. A scalar requires equality, a list or
/// set requires membership. The empty filter matches everything.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Filter {
    clauses: BTreeMap<String, Clause>,
}

fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Int(i), Value::Float(f)) | (Value::Float(f), Value::Int(i)) => *i as f64 == *f,
        (Value::Optional(Some(x)), y) | (y, Value::Optional(Some(x))) => same(x, y),
        _ => a == b,
    }
}

impl Filter {
    pub fn all() -> Self {
        Filter::default()
    }

    pub fn eq(mut self, field: &str, v: impl Into<Value>) -> Self {
        self.clauses.insert(field.into(), Clause::Eq(v.into()));
        self
    }

    pub fn one_of(mut self, field: &str, vs: impl IntoIterator<Item = Value>) -> Self {
        self.clauses.insert(field.into(), Clause::In(vs.into_iter().collect()));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn from_value(v: &Value) -> Result<Filter, FilterError> {
        let fields: Vec<(String, &Value)> = match v {
            Value::Record(fs) => fs.iter().map(|(k, v)| (k.to_string(), v)).collect(),
            Value::Map(m) => m
                .iter()
                .map(|(k, v)| {
                    k.as_text()
                        .map(|k| (k.to_string(), v))
                        .ok_or_else(|| FilterError::Shape(v.to_string()))
                })
                .collect::<Result<_, _>>()?,
            other => return Err(FilterError::Shape(other.to_string())),
        };
        let mut clauses = BTreeMap::new();
        for (k, v) in fields {
            let clause = match v {
                Value::Set(s) => Clause::In(s.iter().cloned().collect()),
                Value::List(l) => Clause::In(l.iter().cloned().collect()),
                Value::Map(_) | Value::Record(_) => return Err(FilterError::Nested(k)),
                scalar => Clause::Eq(scalar.clone()),
            };
            clauses.insert(k, clause);
        }
        Ok(Filter { clauses })
    }

    pub fn from_json(j: &Json) -> Result<Filter, FilterError> {
        match j {
            Json::Object(_) => Filter::from_value(&json_to_value(j)),
            other => Err(FilterError::Shape(other.to_string())),
        }
    }

    pub fn to_json(&self) -> Json {
        let mut obj = serde_json::Map::new();
        for (k, c) in &self.clauses {
            let v = match c {
                Clause::Eq(v) => value_to_json(v).unwrap_or(Json::Null),
                Clause::In(vs) => Json::Array(vs.iter().map(|v| value_to_json(v).unwrap_or(Json::Null)).collect()),
            };
            obj.insert(k.clone(), v);
        }
        Json::Object(obj)
    }

    pub fn matches(&self, e: &Event) -> bool {
        self.clauses.iter().all(|(k, c)| match (e.get(k), c) {
            (None, _) => false,
            (Some(v), Clause::Eq(x)) => same(v, x),
            (Some(v), Clause::In(xs)) => xs.iter().any(|x| same(v, x)),
        })
    }

    /// Replaces `{param}` and `{param.<field>}` text leaves of an initializer
    /// filter template.
    pub fn instantiate(template: &Value, param: &Value) -> Value {
        fn leaf(v: &Value, p: &Value) -> Value {
            match v {
                Value::Text(t) if &**t == "{param}" => p.clone(),
                Value::Text(t) => match t.strip_prefix("{param.").and_then(|r| r.strip_suffix('}')) {
                    Some(f) => p.field(f).cloned().unwrap_or_else(|| v.clone()),
                    None => v.clone(),
                },
                Value::Set(s) => Value::set(s.iter().map(|x| leaf(x, p))),
                Value::List(l) => Value::list(l.iter().map(|x| leaf(x, p))),
                other => other.clone(),
            }
        }
        match template {
            Value::Record(fs) => Value::record(fs.iter().map(|(k, v)| (k.to_string(), leaf(v, param)))),
            Value::Map(m) => Value::map(m.iter().map(|(k, v)| (k.clone(), leaf(v, param)))),
            other => other.clone(),
        }
    }
}

/// One retrieval from a log.
#[derive(Clone, Debug, PartialEq)]
pub struct FetchRequest {
    pub from: u64,
    /// Exclusive; `None` is the end of the log.
    pub to: Option<u64>,
    pub filter: Filter,
    /// Parameter being installed, if this retrieval initializes an instance.
    pub param: Option<Value>,
    /// Extra adapter arguments from the initializer's command template.
    pub command: Option<String>,
}

impl FetchRequest {
    pub fn range(from: u64, to: u64, filter: Filter) -> Self {
        FetchRequest { from, to: Some(to), filter, param: None, command: None }
    }

    /// Checks that `events` lie in range, are strictly increasing and match
    /// the filter.
    pub fn verify(&self, events: &[Event]) -> Result<(), LogError> {
        let mut last: Option<u64> = None;
        for e in events {
            if e.instant < self.from || self.to.is_some_and(|t| e.instant >= t) {
                return Err(LogError::Integrity(format!(
                    "instant {} outside [{}, {})",
                    e.instant,
                    self.from,
                    self.to.map_or("end".into(), |t| t.to_string())
                )));
            }
            if last.is_some_and(|l| e.instant <= l) {
                return Err(LogError::Integrity(format!("instant {} out of order", e.instant)));
            }
            if !self.filter.matches(e) {
                return Err(LogError::Integrity(format!("instant {} does not match the filter", e.instant)));
            }
            last = Some(e.instant);
        }
        Ok(())
    }
}

/// Read access to a past trace.
pub trait PastRetriever: Send {
    fn retrieve(&mut self, req: &FetchRequest) -> Result<Vec<Event>, LogError>;
    /// Number of events, if known.
    fn len(&self) -> Option<u64>;
}

/// A log a monitor appends every event to.
pub trait LogStore: PastRetriever {
    /// Appends the next event; its instant must equal the current length.
    fn append(&mut self, e: &Event) -> Result<(), LogError>;
}

#[derive(Clone, Debug, Default)]
pub struct InMemoryStore {
    events: Vec<Event>,
}

impl InMemoryStore {
    pub fn new() -> Self {
        InMemoryStore::default()
    }

    pub fn from_events(events: Vec<Event>) -> Result<Self, LogError> {
        let mut s = InMemoryStore::new();
        for e in &events {
            s.append(e)?;
        }
        Ok(s)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }
}

impl PastRetriever for InMemoryStore {
    fn retrieve(&mut self, req: &FetchRequest) -> Result<Vec<Event>, LogError> {
        let n = self.events.len() as u64;
        let to = req.to.unwrap_or(n).min(n);
        if req.from >= to {
            return Ok(vec![]);
        }
        Ok(self.events[req.from as usize..to as usize]
            .iter()
            .filter(|e| req.filter.matches(e))
            .cloned()
            .collect())
    }

    fn len(&self) -> Option<u64> {
        Some(self.events.len() as u64)
    }
}

impl LogStore for InMemoryStore {
    fn append(&mut self, e: &Event) -> Result<(), LogError> {
        check_next(self.events.len() as u64, e)?;
        self.events.push(e.clone());
        Ok(())
    }
}

fn check_next(len: u64, e: &Event) -> Result<(), LogError> {
    if e.instant != len {
        return Err(LogError::Integrity(format!(
            "appending instant {} to a log of {len} events",
            e.instant
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(i: u64, fid: i64, op: &str) -> Event {
        Event::new(i).with("fid", fid).with("op", op)
    }

    #[test]
    fn filter_equality_and_membership() {
        let f = Filter::all().eq("fid", 3i64).one_of("op", [Value::text("Create"), Value::text("Read")]);
        assert!(f.matches(&ev(0, 3, "Read")));
        assert!(!f.matches(&ev(0, 3, "Write")));
        assert!(!f.matches(&ev(0, 4, "Read")));
        assert!(Filter::all().matches(&ev(0, 4, "x")));
    }

    #[test]
    fn filter_json_round_trip() {
        let f = Filter::all().eq("fid", 3i64).one_of("op", [Value::text("Create")]);
        assert_eq!(Filter::from_json(&f.to_json()).unwrap(), f);
        assert!(matches!(
            Filter::from_json(&serde_json::json!({"a": {"b": 1}})),
            Err(FilterError::Nested(_))
        ));
    }

    #[test]
    fn template_substitution() {
        let t = Value::record([("fid", Value::text("{param}")), ("dst", Value::text("{param.dst}"))]);
        let p = Value::record([("dst", Value::text("10.0.0.1"))]);
        let got = Filter::instantiate(&t, &p);
        assert_eq!(got.field("fid"), Some(&p));
        assert_eq!(got.field("dst"), Some(&Value::text("10.0.0.1")));
    }

    #[test]
    fn in_memory_append_and_fetch() {
        let mut s = InMemoryStore::new();
        for i in 0..10 {
            s.append(&ev(i, (i % 3) as i64, "Read")).unwrap();
        }
        assert!(s.append(&ev(42, 0, "Read")).is_err());
        let req = FetchRequest::range(2, 8, Filter::all().eq("fid", 1i64));
        let got = s.retrieve(&req).unwrap();
        assert_eq!(got.iter().map(|e| e.instant).collect::<Vec<_>>(), vec![4, 7]);
        req.verify(&got).unwrap();
        assert!(req.verify(&[ev(9, 1, "Read")]).is_err());
        assert!(req.verify(&[ev(4, 1, "Read"), ev(4, 1, "Read")]).is_err());
        assert!(req.verify(&[ev(5, 2, "Read")]).is_err());
    }
}
