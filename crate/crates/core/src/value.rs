//! Runtime values and their types.
//!
//! [`Value`] is the closed universe of data a stream can carry. Containers are
//! reference counted so that copying a stream value between instants is cheap;
//! updates go through copy-on-write.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// A dynamically typed datum.
///
/// Equality, ordering and hashing are structural and total (floats compare
/// with `f64::total_cmp`), so any value can be a set element or a map key.
#[derive(Clone, Debug)]
pub enum Value {
    Unit,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(Arc<str>),
    Optional(Option<Arc<Value>>),
    Set(Arc<BTreeSet<Value>>),
    Map(Arc<BTreeMap<Value, Value>>),
    List(Arc<Vec<Value>>),
    /// Fields in the order fixed by the record's type descriptor.
    Record(Arc<Vec<(Arc<str>, Value)>>),
}

impl Value {
    pub fn text(s: impl AsRef<str>) -> Value {
        Value::Text(Arc::from(s.as_ref()))
    }

    pub fn some(v: Value) -> Value {
        Value::Optional(Some(Arc::new(v)))
    }

    pub fn none() -> Value {
        Value::Optional(None)
    }

    pub fn set<I: IntoIterator<Item = Value>>(items: I) -> Value {
        Value::Set(Arc::new(items.into_iter().collect()))
    }

    pub fn empty_set() -> Value {
        Value::Set(Arc::new(BTreeSet::new()))
    }

    pub fn map<I: IntoIterator<Item = (Value, Value)>>(items: I) -> Value {
        Value::Map(Arc::new(items.into_iter().collect()))
    }

    pub fn empty_map() -> Value {
        Value::Map(Arc::new(BTreeMap::new()))
    }

    pub fn list<I: IntoIterator<Item = Value>>(items: I) -> Value {
        Value::List(Arc::new(items.into_iter().collect()))
    }

    pub fn record<I, S>(fields: I) -> Value
    where
        I: IntoIterator<Item = (S, Value)>,
        S: AsRef<str>,
    {
        Value::Record(Arc::new(
            fields
                .into_iter()
                .map(|(k, v)| (Arc::from(k.as_ref()), v))
                .collect(),
        ))
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Unit => 0,
            Value::Bool(_) => 1,
            Value::Int(_) => 2,
            Value::Float(_) => 3,
            Value::Text(_) => 4,
            Value::Optional(_) => 5,
            Value::Set(_) => 6,
            Value::Map(_) => 7,
            Value::List(_) => 8,
            Value::Record(_) => 9,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Unit => "unit",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Text(_) => "text",
            Value::Optional(_) => "optional",
            Value::Set(_) => "set",
            Value::Map(_) => "map",
            Value::List(_) => "list",
            Value::Record(_) => "record",
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_set(&self) -> Option<&BTreeSet<Value>> {
        match self {
            Value::Set(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<Value, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_optional(&self) -> Option<Option<&Value>> {
        match self {
            Value::Optional(o) => Some(o.as_deref()),
            _ => None,
        }
    }

    /// Looks up a record field by name.
    pub fn field(&self, name: &str) -> Option<&Value> {
        match self {
            Value::Record(fields) => fields.iter().find(|(k, _)| &**k == name).map(|(_, v)| v),
            _ => None,
        }
    }

    /// Does this value inhabit `ty`? Type variables accept anything.
    pub fn conforms(&self, ty: &Type) -> bool {
        match (self, ty) {
            (_, Type::Var(_)) => true,
            (Value::Unit, Type::Unit)
            | (Value::Bool(_), Type::Bool)
            | (Value::Int(_), Type::Int)
            | (Value::Float(_), Type::Float)
            | (Value::Text(_), Type::Text) => true,
            (Value::Text(_), Type::Func) => true,
            (Value::Optional(o), Type::Optional(t)) => o.as_ref().is_none_or(|v| v.conforms(t)),
            (Value::Set(s), Type::Set(t)) => s.iter().all(|v| v.conforms(t)),
            (Value::List(l), Type::List(t)) => l.iter().all(|v| v.conforms(t)),
            (Value::Map(m), Type::Map(k, v)) => m.iter().all(|(a, b)| a.conforms(k) && b.conforms(v)),
            (Value::Record(fs), Type::Record(ts)) => {
                fs.len() == ts.len()
                    && fs
                        .iter()
                        .zip(ts)
                        .all(|((a, v), (b, t))| **a == *b && v.conforms(t))
            }
            _ => false,
        }
    }

    /// Structural conversion towards `ty`: lists become sets, text-keyed maps
    /// become records, integers widen to floats. Used when decoding untyped data
    /// (wire events, fetched log records) against a declared stream type.
    pub fn coerce(self, ty: &Type) -> Result<Value, String> {
        let mismatch = |v: &Value| Err(format!("expected {ty}, found {} value {v}", v.kind()));
        match (self, ty) {
            (v, Type::Var(_)) => Ok(v),
            (Value::Int(i), Type::Float) => Ok(Value::Float(i as f64)),
            (Value::Optional(None), Type::Optional(_)) => Ok(Value::none()),
            (Value::Optional(Some(v)), Type::Optional(t)) => {
                Ok(Value::some(Value::clone(&v).coerce(t)?))
            }
            (v, Type::Optional(t)) => Ok(Value::some(v.coerce(t)?)),
            (Value::List(l), Type::Set(t)) => Ok(Value::Set(Arc::new(
                l.iter().cloned().map(|v| v.coerce(t)).collect::<Result<_, _>>()?,
            ))),
            (Value::Set(s), Type::Set(t)) => Ok(Value::Set(Arc::new(
                s.iter().cloned().map(|v| v.coerce(t)).collect::<Result<_, _>>()?,
            ))),
            (Value::List(l), Type::List(t)) => Ok(Value::List(Arc::new(
                l.iter().cloned().map(|v| v.coerce(t)).collect::<Result<_, _>>()?,
            ))),
            (Value::Map(m), Type::Map(kt, vt)) => {
                let mut out = BTreeMap::new();
                for (k, v) in m.iter() {
                    out.insert(k.clone().coerce(kt)?, v.clone().coerce(vt)?);
                }
                Ok(Value::Map(Arc::new(out)))
            }
            (Value::Map(m), Type::Record(fields)) => {
                let mut out = Vec::with_capacity(fields.len());
                for (name, t) in fields {
                    let v = m
                        .get(&Value::text(name))
                        .ok_or_else(|| format!("record field `{name}` missing"))?;
                    out.push((Arc::from(name.as_str()), v.clone().coerce(t)?));
                }
                if m.len() != fields.len() {
                    return Err(format!("record has extra fields, expected {ty}"));
                }
                Ok(Value::Record(Arc::new(out)))
            }
            (Value::Record(r), Type::Record(fields)) => {
                if r.len() != fields.len() {
                    return Err(format!("expected {ty}"));
                }
                let mut out = Vec::with_capacity(fields.len());
                for (name, t) in fields {
                    let v = r
                        .iter()
                        .find(|(k, _)| **k == **name)
                        .map(|(_, v)| v.clone())
                        .ok_or_else(|| format!("record field `{name}` missing"))?;
                    out.push((Arc::from(name.as_str()), v.coerce(t)?));
                }
                Ok(Value::Record(Arc::new(out)))
            }
            (v, t) if v.conforms(t) => Ok(v),
            (v, _) => mismatch(&v),
        }
    }

    /// Infers the type of a literal. Element types of empty containers are
    /// left open as fresh variables drawn from `fresh`.
    pub fn infer_type(&self, fresh: &mut impl FnMut() -> Type) -> Type {
        match self {
            Value::Unit => Type::Unit,
            Value::Bool(_) => Type::Bool,
            Value::Int(_) => Type::Int,
            Value::Float(_) => Type::Float,
            Value::Text(_) => Type::Text,
            Value::Optional(o) => Type::Optional(Box::new(match o {
                Some(v) => v.infer_type(fresh),
                None => fresh(),
            })),
            Value::Set(s) => Type::Set(Box::new(match s.iter().next() {
                Some(v) => v.infer_type(fresh),
                None => fresh(),
            })),
            Value::List(l) => Type::List(Box::new(match l.first() {
                Some(v) => v.infer_type(fresh),
                None => fresh(),
            })),
            Value::Map(m) => match m.iter().next() {
                Some((k, v)) => Type::Map(Box::new(k.infer_type(fresh)), Box::new(v.infer_type(fresh))),
                None => Type::Map(Box::new(fresh()), Box::new(fresh())),
            },
            Value::Record(fs) => Type::Record(
                fs.iter()
                    .map(|(k, v)| (k.to_string(), v.infer_type(fresh)))
                    .collect(),
            ),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        use Value::*;
        match (self, other) {
            (Unit, Unit) => Ordering::Equal,
            (Bool(a), Bool(b)) => a.cmp(b),
            (Int(a), Int(b)) => a.cmp(b),
            (Float(a), Float(b)) => a.total_cmp(b),
            (Text(a), Text(b)) => a.cmp(b),
            (Optional(a), Optional(b)) => a.cmp(b),
            (Set(a), Set(b)) => {
                if Arc::ptr_eq(a, b) {
                    Ordering::Equal
                } else {
                    a.iter().cmp(b.iter())
                }
            }
            (Map(a), Map(b)) => {
                if Arc::ptr_eq(a, b) {
                    Ordering::Equal
                } else {
                    a.iter().cmp(b.iter())
                }
            }
            (List(a), List(b)) => a.iter().cmp(b.iter()),
            (Record(a), Record(b)) => a.iter().cmp(b.iter()),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Unit => {}
            Value::Bool(b) => b.hash(state),
            Value::Int(i) => i.hash(state),
            Value::Float(f) => f.to_bits().hash(state),
            Value::Text(s) => s.hash(state),
            Value::Optional(o) => o.hash(state),
            Value::Set(s) => s.iter().for_each(|v| v.hash(state)),
            Value::Map(m) => m.iter().for_each(|kv| kv.hash(state)),
            Value::List(l) => l.iter().for_each(|v| v.hash(state)),
            Value::Record(r) => r.iter().for_each(|kv| kv.hash(state)),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => write!(f, "()"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Text(s) => write!(f, "{s:?}"),
            Value::Optional(None) => write!(f, "none"),
            Value::Optional(Some(v)) => write!(f, "some({v})"),
            Value::Set(s) => {
                write!(f, "{{")?;
                for (i, v) in s.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "}}")
            }
            Value::Map(m) => {
                write!(f, "{{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                write!(f, "}}")
            }
            Value::List(l) => {
                write!(f, "[")?;
                for (i, v) in l.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
            Value::Record(r) => {
                write!(f, "(")?;
                for (i, (k, v)) in r.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{k} = {v}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::text(s)
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(Arc::from(s))
    }
}

/// Tagged mirror of [`Value`] used for specification documents and frozen
/// monitor state. Maps are written as key/value pairs since keys need not be text.
#[derive(Serialize, Deserialize)]
enum Repr {
    Unit,
    Bool(bool),
    Int(i64),
    Float(f64),
    /// Non-finite floats, which JSON cannot carry as numbers.
    FloatBits(u64),
    Text(String),
    Optional(Option<Box<Repr>>),
    Set(Vec<Repr>),
    Map(Vec<(Repr, Repr)>),
    List(Vec<Repr>),
    Record(Vec<(String, Repr)>),
}

impl From<&Value> for Repr {
    fn from(v: &Value) -> Self {
        match v {
            Value::Unit => Repr::Unit,
            Value::Bool(b) => Repr::Bool(*b),
            Value::Int(i) => Repr::Int(*i),
            Value::Float(x) if x.is_finite() => Repr::Float(*x),
            Value::Float(x) => Repr::FloatBits(x.to_bits()),
            Value::Text(s) => Repr::Text(s.to_string()),
            Value::Optional(o) => Repr::Optional(o.as_ref().map(|v| Box::new(Repr::from(&**v)))),
            Value::Set(s) => Repr::Set(s.iter().map(Repr::from).collect()),
            Value::Map(m) => Repr::Map(m.iter().map(|(k, v)| (k.into(), v.into())).collect()),
            Value::List(l) => Repr::List(l.iter().map(Repr::from).collect()),
            Value::Record(r) => Repr::Record(r.iter().map(|(k, v)| (k.to_string(), v.into())).collect()),
        }
    }
}

impl From<Repr> for Value {
    fn from(r: Repr) -> Self {
        match r {
            Repr::Unit => Value::Unit,
            Repr::Bool(b) => Value::Bool(b),
            Repr::Int(i) => Value::Int(i),
            Repr::Float(x) => Value::Float(x),
            Repr::FloatBits(b) => Value::Float(f64::from_bits(b)),
            Repr::Text(s) => Value::from(s),
            Repr::Optional(o) => Value::Optional(o.map(|v| Arc::new(Value::from(*v)))),
            Repr::Set(s) => Value::set(s.into_iter().map(Value::from)),
            Repr::Map(m) => Value::map(m.into_iter().map(|(k, v)| (k.into(), v.into()))),
            Repr::List(l) => Value::list(l.into_iter().map(Value::from)),
            Repr::Record(r) => Value::record(r.into_iter().map(|(k, v)| (k, Value::from(v)))),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        Repr::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Repr::deserialize(deserializer).map(Value::from)
    }
}

/// Static type of a stream or expression.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Type {
    Unit,
    Bool,
    Int,
    Float,
    Text,
    Optional(Box<Type>),
    Set(Box<Type>),
    Map(Box<Type>, Box<Type>),
    List(Box<Type>),
    Record(Vec<(String, Type)>),
    /// Argument position taking the name of a registered function.
    Func,
    /// Type variable; only appears in function signatures and during inference.
    Var(u32),
}

impl Type {
    pub fn optional(t: Type) -> Type {
        Type::Optional(Box::new(t))
    }

    pub fn set(t: Type) -> Type {
        Type::Set(Box::new(t))
    }

    pub fn list(t: Type) -> Type {
        Type::List(Box::new(t))
    }

    pub fn map(k: Type, v: Type) -> Type {
        Type::Map(Box::new(k), Box::new(v))
    }

    pub fn record<I, S>(fields: I) -> Type
    where
        I: IntoIterator<Item = (S, Type)>,
        S: Into<String>,
    {
        Type::Record(fields.into_iter().map(|(k, t)| (k.into(), t)).collect())
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Type::Var(_) => false,
            Type::Optional(t) | Type::Set(t) | Type::List(t) => t.is_ground(),
            Type::Map(k, v) => k.is_ground() && v.is_ground(),
            Type::Record(fs) => fs.iter().all(|(_, t)| t.is_ground()),
            _ => true,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Unit => write!(f, "Unit"),
            Type::Bool => write!(f, "Bool"),
            Type::Int => write!(f, "Int"),
            Type::Float => write!(f, "Float"),
            Type::Text => write!(f, "Text"),
            Type::Optional(t) => write!(f, "Optional<{t}>"),
            Type::Set(t) => write!(f, "Set<{t}>"),
            Type::Map(k, v) => write!(f, "Map<{k}, {v}>"),
            Type::List(t) => write!(f, "List<{t}>"),
            Type::Record(fs) => {
                write!(f, "{{")?;
                for (i, (k, t)) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{k}: {t}")?;
                }
                write!(f, "}}")
            }
            Type::Func => write!(f, "Func"),
            Type::Var(n) => write!(f, "'t{n}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_order_is_total() {
        let mut v = [Value::Float(f64::NAN), Value::Float(1.0), Value::Float(-0.0), Value::Float(0.0)];
        v.sort();
        assert_eq!(v[0], Value::Float(-0.0));
        assert_eq!(v[1], Value::Float(0.0));
        assert!(matches!(v[3], Value::Float(x) if x.is_nan()));
    }

    #[test]
    fn set_iteration_is_ascending() {
        let s = Value::set([Value::Int(3), Value::Int(1), Value::Int(2)]);
        let items: Vec<_> = s.as_set().unwrap().iter().cloned().collect();
        assert_eq!(items, vec![Value::Int(1), Value::Int(2), Value::Int(3)]);
    }

    #[test]
    fn coerce_list_to_set_and_map_to_record() {
        let l = Value::list([Value::Int(2), Value::Int(1), Value::Int(2)]);
        let s = l.coerce(&Type::set(Type::Int)).unwrap();
        assert_eq!(s.as_set().unwrap().len(), 2);

        let m = Value::map([(Value::text("a"), Value::Int(1)), (Value::text("b"), Value::Int(2))]);
        let r = m
            .coerce(&Type::record([("b", Type::Int), ("a", Type::Float)]))
            .unwrap();
        assert_eq!(r.field("a"), Some(&Value::Float(1.0)));
        assert_eq!(r.field("b"), Some(&Value::Int(2)));
    }

    #[test]
    fn coerce_rejects_wrong_scalar() {
        assert!(Value::text("x").coerce(&Type::Int).is_err());
        assert!(Value::Float(1.5).coerce(&Type::Int).is_err());
    }

    #[test]
    fn serde_round_trip_keeps_non_text_keys() {
        let v = Value::map([(Value::Int(1), Value::set([Value::text("a")]))]);
        let s = serde_json::to_string(&v).unwrap();
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
    }
}
