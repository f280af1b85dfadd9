//! Events and the line-delimited JSON wire format.
//!
//! One event per line: `{"instant": <int>, "streams": {<input>: <value>, ...}}`.
//! Values map to JSON as: booleans, integers, decimals (floats always carry a
//! fractional part or exponent), strings, `null`/inner value for optionals,
//! arrays for sets and lists, objects for maps and records. Map keys that are
//! not text are written as their own JSON encoding inside the key string.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{Map as JsonMap, Number, Value as Json};
use thiserror::Error;

use crate::value::{Type, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub instant: u64,
    pub bindings: BTreeMap<String, Value>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("event record must be an object with `instant` and `streams`")]
    Shape,
    #[error("stream `{stream}`: {msg}")]
    Binding { stream: String, msg: String },
    #[error("non-finite float cannot be encoded")]
    NonFinite,
}

impl Event {
    pub fn new(instant: u64) -> Self {
        Event { instant, bindings: BTreeMap::new() }
    }

    pub fn with(mut self, name: &str, v: impl Into<Value>) -> Self {
        self.bindings.insert(name.to_string(), v.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.bindings.get(name)
    }

    pub fn to_json(&self) -> Result<Json, WireError> {
        let mut streams = JsonMap::new();
        for (k, v) in &self.bindings {
            streams.insert(k.clone(), value_to_json(v)?);
        }
        let mut obj = JsonMap::new();
        obj.insert("instant".into(), Json::from(self.instant));
        obj.insert("streams".into(), Json::Object(streams));
        Ok(Json::Object(obj))
    }

    /// Serializes to a single line without the trailing newline.
    pub fn to_line(&self) -> Result<String, WireError> {
        Ok(self.to_json()?.to_string())
    }

    /// Parses a line without type information (see [`json_to_value`]).
    pub fn from_line(line: &str) -> Result<Event, WireError> {
        let json: Json = serde_json::from_str(line).map_err(|e| WireError::Json(e.to_string()))?;
        Event::from_json(&json)
    }

    pub fn from_json(json: &Json) -> Result<Event, WireError> {
        let obj = json.as_object().ok_or(WireError::Shape)?;
        let instant = obj.get("instant").and_then(Json::as_u64).ok_or(WireError::Shape)?;
        let streams = obj.get("streams").and_then(Json::as_object).ok_or(WireError::Shape)?;
        let bindings = streams.iter().map(|(k, v)| (k.clone(), json_to_value(v))).collect();
        Ok(Event { instant, bindings })
    }

    /// Coerces every binding to its declared input type. Bindings not named in
    /// `inputs` are dropped when `project` is set and rejected otherwise;
    /// missing inputs are always rejected.
    pub fn typed(mut self, inputs: &[(String, Type)], project: bool) -> Result<Event, WireError> {
        let mut out = BTreeMap::new();
        for (name, ty) in inputs {
            let v = self.bindings.remove(name).ok_or_else(|| WireError::Binding {
                stream: name.clone(),
                msg: "missing binding".into(),
            })?;
            let v = match v.clone().coerce(ty) {
                Ok(v) => v,
                // non-text map keys arrive as strings; retry through the typed decoder
                Err(msg) => value_to_json(&v)
                    .ok()
                    .and_then(|j| json_to_typed(&j, ty).ok())
                    .ok_or(WireError::Binding { stream: name.clone(), msg })?,
            };
            out.insert(name.clone(), v);
        }
        if !project {
            if let Some(extra) = self.bindings.keys().next() {
                return Err(WireError::Binding {
                    stream: extra.clone(),
                    msg: "not a declared input".into(),
                });
            }
        }
        Ok(Event { instant: self.instant, bindings: out })
    }
}

pub fn value_to_json(v: &Value) -> Result<Json, WireError> {
    Ok(match v {
        Value::Unit => Json::Null,
        Value::Bool(b) => Json::Bool(*b),
        Value::Int(i) => Json::from(*i),
        Value::Float(x) => Json::Number(Number::from_f64(*x).ok_or(WireError::NonFinite)?),
        Value::Text(s) => Json::String(s.to_string()),
        Value::Optional(None) => Json::Null,
        Value::Optional(Some(inner)) => value_to_json(inner)?,
        Value::Set(s) => Json::Array(s.iter().map(value_to_json).collect::<Result<_, _>>()?),
        Value::List(l) => Json::Array(l.iter().map(value_to_json).collect::<Result<_, _>>()?),
        Value::Map(m) => {
            let mut obj = JsonMap::new();
            for (k, v) in m.iter() {
                let key = match k {
                    Value::Text(s) => s.to_string(),
                    other => value_to_json(other)?.to_string(),
                };
                obj.insert(key, value_to_json(v)?);
            }
            Json::Object(obj)
        }
        Value::Record(r) => {
            let mut obj = JsonMap::new();
            for (k, v) in r.iter() {
                obj.insert(k.to_string(), value_to_json(v)?);
            }
            Json::Object(obj)
        }
    })
}

/// Untyped decoding: integers become `Int`, other numbers `Float`, arrays
/// `List`, objects text-keyed `Map`, `null` the empty optional.
/// [`Value::coerce`] recovers sets, records and non-text keys from a type.
pub fn json_to_value(j: &Json) -> Value {
    match j {
        Json::Null => Value::none(),
        Json::Bool(b) => Value::Bool(*b),
        Json::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64().unwrap_or(f64::NAN)),
        },
        Json::String(s) => Value::Text(Arc::from(s.as_str())),
        Json::Array(a) => Value::list(a.iter().map(json_to_value)),
        Json::Object(o) => Value::map(o.iter().map(|(k, v)| (Value::text(k), json_to_value(v)))),
    }
}

/// Typed decoding against a declared type.
pub fn json_to_typed(j: &Json, ty: &Type) -> Result<Value, String> {
    match (j, ty) {
        (Json::Null, Type::Unit) => Ok(Value::Unit),
        (Json::Null, Type::Optional(_)) => Ok(Value::none()),
        (_, Type::Optional(t)) => Ok(Value::some(json_to_typed(j, t)?)),
        (Json::Object(o), Type::Map(kt, vt)) if !matches!(**kt, Type::Text) => {
            let mut out = BTreeMap::new();
            for (k, v) in o {
                let key_json: Json = serde_json::from_str(k).unwrap_or(Json::String(k.clone()));
                out.insert(json_to_typed(&key_json, kt)?, json_to_typed(v, vt)?);
            }
            Ok(Value::Map(Arc::new(out)))
        }
        _ => json_to_value(j).coerce(ty),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format_is_stable() {
        let ev = Event::new(3).with("altitude", 50.0).with("id", 7i64).with("name", "a");
        assert_eq!(
            ev.to_line().unwrap(),
            r#"{"instant":3,"streams":{"altitude":50.0,"id":7,"name":"a"}}"#
        );
    }

    #[test]
    fn typed_decode_round_trips() {
        let inputs = vec![
            ("s".to_string(), Type::set(Type::Int)),
            ("m".to_string(), Type::map(Type::Int, Type::Text)),
            ("o".to_string(), Type::optional(Type::Float)),
        ];
        let ev = Event::new(0)
            .with("s", Value::set([Value::Int(2), Value::Int(1)]))
            .with("m", Value::map([(Value::Int(4), Value::text("x"))]))
            .with("o", Value::none());
        let line = ev.to_line().unwrap();
        let back = Event::from_line(&line).unwrap().typed(&inputs, false).unwrap();
        assert_eq!(back.get("s"), ev.get("s"));
        assert_eq!(back.get("o"), ev.get("o"));
        let m = json_to_typed(
            &serde_json::from_str::<Json>(r#"{"4":"x"}"#).unwrap(),
            &Type::map(Type::Int, Type::Text),
        )
        .unwrap();
        assert_eq!(Some(&m), ev.get("m"));
    }

    #[test]
    fn typed_rejects_missing_and_extra() {
        let inputs = vec![("a".to_string(), Type::Int)];
        assert!(Event::new(0).typed(&inputs, false).is_err());
        let ev = Event::new(0).with("a", 1i64).with("b", 2i64);
        assert!(ev.clone().typed(&inputs, false).is_err());
        assert!(ev.typed(&inputs, true).is_ok());
    }

    #[test]
    fn floats_keep_decimal_point() {
        let j = value_to_json(&Value::Float(2.0)).unwrap();
        assert_eq!(j.to_string(), "2.0");
        assert_eq!(json_to_value(&j), Value::Float(2.0));
    }
}
