//! The data theory: named pure functions usable inside stream expressions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::error::EvalError;
use crate::value::{Type, Value};

pub type ApplyFn = dyn Fn(&Registry, &[Value]) -> Result<Value, EvalError> + Send + Sync;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    pub args: Vec<Type>,
    pub result: Type,
}

/// A registered function. `apply` must be deterministic and may only call back
/// into the registry (for higher-order arguments passed by name).
#[derive(Clone)]
pub struct FuncDef {
    pub name: String,
    pub signature: Signature,
    pub apply: Arc<ApplyFn>,
}

impl FuncDef {
    pub fn new<F>(name: &str, args: Vec<Type>, result: Type, apply: F) -> Self
    where
        F: Fn(&Registry, &[Value]) -> Result<Value, EvalError> + Send + Sync + 'static,
    {
        FuncDef {
            name: name.to_string(),
            signature: Signature { args, result },
            apply: Arc::new(apply),
        }
    }

    pub fn arity(&self) -> usize {
        self.signature.args.len()
    }
}

impl fmt::Debug for FuncDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, a) in self.signature.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ") -> {}", self.signature.result)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("function `{name}` already registered with signature {existing}")]
    Conflict { name: String, existing: String },
}

/// Handle returned by [`Registry::register`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct FuncHandle(pub String);

#[derive(Clone, Debug, Default)]
pub struct Registry {
    funcs: BTreeMap<String, FuncDef>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    /// A registry preloaded with [`builtin_library`].
    pub fn builtin() -> Self {
        let mut r = Registry::empty();
        for def in builtin_library() {
            r.register(def).expect("builtin names are unique");
        }
        r
    }

    pub fn register(&mut self, def: FuncDef) -> Result<FuncHandle, RegistryError> {
        if let Some(existing) = self.funcs.get(&def.name) {
            if existing.signature != def.signature {
                return Err(RegistryError::Conflict {
                    name: def.name.clone(),
                    existing: format!("{existing:?}"),
                });
            }
        }
        let handle = FuncHandle(def.name.clone());
        self.funcs.insert(def.name.clone(), def);
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<&FuncDef> {
        self.funcs.get(name)
    }

    pub fn call(&self, name: &str, args: &[Value]) -> Result<Value, EvalError> {
        let def = self
            .get(name)
            .ok_or_else(|| EvalError::UnknownFunction(name.to_string()))?;
        if args.len() != def.arity() {
            return Err(EvalError::type_error(
                name,
                format!("expected {} arguments, got {}", def.arity(), args.len()),
            ));
        }
        (def.apply)(self, args)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.funcs.keys().map(String::as_str)
    }
}

fn v(n: u32) -> Type {
    Type::Var(n)
}

fn bool_arg(f: &str, x: &Value) -> Result<bool, EvalError> {
    x.as_bool().ok_or_else(|| EvalError::type_error(f, format!("expected bool, got {x}")))
}

fn int_arg(f: &str, x: &Value) -> Result<i64, EvalError> {
    x.as_int().ok_or_else(|| EvalError::type_error(f, format!("expected int, got {x}")))
}

fn float_arg(f: &str, x: &Value) -> Result<f64, EvalError> {
    x.as_float().ok_or_else(|| EvalError::type_error(f, format!("expected float, got {x}")))
}

fn map_arg<'a>(f: &str, x: &'a Value) -> Result<&'a BTreeMap<Value, Value>, EvalError> {
    x.as_map().ok_or_else(|| EvalError::type_error(f, format!("expected map, got {}", x.kind())))
}

fn set_arg<'a>(f: &str, x: &'a Value) -> Result<&'a std::collections::BTreeSet<Value>, EvalError> {
    x.as_set().ok_or_else(|| EvalError::type_error(f, format!("expected set, got {}", x.kind())))
}

fn list_arg<'a>(f: &str, x: &'a Value) -> Result<&'a [Value], EvalError> {
    x.as_list().ok_or_else(|| EvalError::type_error(f, format!("expected list, got {}", x.kind())))
}

fn opt_arg<'a>(f: &str, x: &'a Value) -> Result<Option<&'a Value>, EvalError> {
    x.as_optional()
        .ok_or_else(|| EvalError::type_error(f, format!("expected optional, got {}", x.kind())))
}

fn arith(
    name: &'static str,
    int_op: fn(i64, i64) -> Option<i64>,
    float_op: fn(f64, f64) -> f64,
) -> FuncDef {
    FuncDef::new(name, vec![v(0), v(0)], v(0), move |_, a| match (&a[0], &a[1]) {
        (Value::Int(x), Value::Int(y)) => {
            if (name == "div" || name == "rem")
                && *y == 0 {
                    return Err(EvalError::DivisionByZero);
                }
            int_op(*x, *y)
                .map(Value::Int)
                .ok_or_else(|| EvalError::Overflow(name.to_string()))
        }
        (Value::Float(x), Value::Float(y)) => Ok(Value::Float(float_op(*x, *y))),
        (x, y) => Err(EvalError::type_error(name, format!("not numeric: {x}, {y}"))),
    })
}

fn compare(name: &'static str, pred: fn(std::cmp::Ordering) -> bool) -> FuncDef {
    FuncDef::new(name, vec![v(0), v(0)], Type::Bool, move |_, a| {
        if a[0].kind() != a[1].kind() {
            return Err(EvalError::type_error(
                name,
                format!("cannot compare {} with {}", a[0].kind(), a[1].kind()),
            ));
        }
        Ok(Value::Bool(pred(a[0].cmp(&a[1]))))
    })
}

/// Functions every specification can use without registering anything.
///
/// Container arguments come first (`set_insert(s, x)`, `map_find(m, k)`),
/// except `insert_with`, which keeps its conventional `(combine, key, value, map)`
/// order. Higher-order arguments are the name of a registered function.
pub fn builtin_library() -> Vec<FuncDef> {
    use std::cmp::Ordering::*;
    let mut fs = vec![
        FuncDef::new("not", vec![Type::Bool], Type::Bool, |_, a| {
            Ok(Value::Bool(!bool_arg("not", &a[0])?))
        }),
        FuncDef::new("and", vec![Type::Bool, Type::Bool], Type::Bool, |_, a| {
            Ok(Value::Bool(bool_arg("and", &a[0])? && bool_arg("and", &a[1])?))
        }),
        FuncDef::new("or", vec![Type::Bool, Type::Bool], Type::Bool, |_, a| {
            Ok(Value::Bool(bool_arg("or", &a[0])? || bool_arg("or", &a[1])?))
        }),
        FuncDef::new("implies", vec![Type::Bool, Type::Bool], Type::Bool, |_, a| {
            Ok(Value::Bool(!bool_arg("implies", &a[0])? || bool_arg("implies", &a[1])?))
        }),
        FuncDef::new("ite", vec![Type::Bool, v(0), v(0)], v(0), |_, a| {
            Ok(if bool_arg("ite", &a[0])? { a[1].clone() } else { a[2].clone() })
        }),
        FuncDef::new("eq", vec![v(0), v(0)], Type::Bool, |_, a| Ok(Value::Bool(a[0] == a[1]))),
        FuncDef::new("neq", vec![v(0), v(0)], Type::Bool, |_, a| Ok(Value::Bool(a[0] != a[1]))),
        compare("lt", |o| o == Less),
        compare("le", |o| o != Greater),
        compare("gt", |o| o == Greater),
        compare("ge", |o| o != Less),
        arith("add", i64::checked_add, |x, y| x + y),
        arith("sub", i64::checked_sub, |x, y| x - y),
        arith("mul", i64::checked_mul, |x, y| x * y),
        arith("div", i64::checked_div, |x, y| x / y),
        arith("rem", i64::checked_rem, |x, y| x % y),
        arith("min", |x, y| Some(x.min(y)), f64::min),
        arith("max", |x, y| Some(x.max(y)), f64::max),
        FuncDef::new("neg", vec![v(0)], v(0), |_, a| match &a[0] {
            Value::Int(x) => x.checked_neg().map(Value::Int).ok_or(EvalError::Overflow("neg".into())),
            Value::Float(x) => Ok(Value::Float(-x)),
            x => Err(EvalError::type_error("neg", format!("not numeric: {x}"))),
        }),
        FuncDef::new("abs", vec![v(0)], v(0), |_, a| match &a[0] {
            Value::Int(x) => x.checked_abs().map(Value::Int).ok_or(EvalError::Overflow("abs".into())),
            Value::Float(x) => Ok(Value::Float(x.abs())),
            x => Err(EvalError::type_error("abs", format!("not numeric: {x}"))),
        }),
        FuncDef::new("to_float", vec![Type::Int], Type::Float, |_, a| {
            Ok(Value::Float(int_arg("to_float", &a[0])? as f64))
        }),
        FuncDef::new("to_int", vec![Type::Float], Type::Int, |_, a| {
            let x = float_arg("to_int", &a[0])?;
            if !x.is_finite() || x.abs() >= i64::MAX as f64 {
                return Err(EvalError::Overflow("to_int".into()));
            }
            Ok(Value::Int(x.trunc() as i64))
        }),
        FuncDef::new("concat", vec![Type::Text, Type::Text], Type::Text, |_, a| {
            match (&a[0], &a[1]) {
                (Value::Text(x), Value::Text(y)) => Ok(Value::from(format!("{x}{y}"))),
                _ => Err(EvalError::type_error("concat", "expected text")),
            }
        }),
        FuncDef::new("to_text", vec![v(0)], Type::Text, |_, a| match &a[0] {
            Value::Text(s) => Ok(Value::Text(s.clone())),
            x => Ok(Value::from(x.to_string())),
        }),
        // maps
        FuncDef::new(
            "insert_with",
            vec![Type::Func, v(0), v(1), Type::map(v(0), v(1))],
            Type::map(v(0), v(1)),
            |reg, a| {
                let combine = a[0]
                    .as_text()
                    .ok_or_else(|| EvalError::type_error("insert_with", "combiner must be a function name"))?;
                let mut m = a[3].clone();
                let Value::Map(inner) = &mut m else {
                    return Err(EvalError::type_error("insert_with", "expected map"));
                };
                let new = match inner.get(&a[1]) {
                    Some(old) => reg.call(combine, &[a[2].clone(), old.clone()])?,
                    None => a[2].clone(),
                };
                Arc::make_mut(inner).insert(a[1].clone(), new);
                Ok(m)
            },
        ),
        FuncDef::new("elems", vec![Type::map(v(0), v(1))], Type::list(v(1)), |_, a| {
            Ok(Value::list(map_arg("elems", &a[0])?.values().cloned()))
        }),
        FuncDef::new("values", vec![Type::map(v(0), v(1))], Type::list(v(1)), |_, a| {
            Ok(Value::list(map_arg("values", &a[0])?.values().cloned()))
        }),
        FuncDef::new("keys", vec![Type::map(v(0), v(1))], Type::set(v(0)), |_, a| {
            Ok(Value::set(map_arg("keys", &a[0])?.keys().cloned()))
        }),
        FuncDef::new("!", vec![Type::map(v(0), v(1)), v(0)], v(1), |_, a| {
            map_arg("!", &a[0])?
                .get(&a[1])
                .cloned()
                .ok_or_else(|| EvalError::MissingKey(a[1].to_string()))
        }),
        FuncDef::new(
            "map_find",
            vec![Type::map(v(0), v(1)), v(0)],
            Type::optional(v(1)),
            |_, a| {
                Ok(match map_arg("map_find", &a[0])?.get(&a[1]) {
                    Some(x) => Value::some(x.clone()),
                    None => Value::none(),
                })
            },
        ),
        FuncDef::new("map_find_or", vec![Type::map(v(0), v(1)), v(0), v(1)], v(1), |_, a| {
            Ok(map_arg("map_find_or", &a[0])?.get(&a[1]).cloned().unwrap_or_else(|| a[2].clone()))
        }),
        FuncDef::new(
            "map_insert",
            vec![Type::map(v(0), v(1)), v(0), v(1)],
            Type::map(v(0), v(1)),
            |_, a| {
                let mut m = a[0].clone();
                let Value::Map(inner) = &mut m else {
                    return Err(EvalError::type_error("map_insert", "expected map"));
                };
                Arc::make_mut(inner).insert(a[1].clone(), a[2].clone());
                Ok(m)
            },
        ),
        FuncDef::new(
            "map_delete",
            vec![Type::map(v(0), v(1)), v(0)],
            Type::map(v(0), v(1)),
            |_, a| {
                let mut m = a[0].clone();
                let Value::Map(inner) = &mut m else {
                    return Err(EvalError::type_error("map_delete", "expected map"));
                };
                if inner.contains_key(&a[1]) {
                    Arc::make_mut(inner).remove(&a[1]);
                }
                Ok(m)
            },
        ),
        FuncDef::new(
            "map_insert_some",
            vec![Type::map(v(0), v(1)), v(0), Type::optional(v(1))],
            Type::map(v(0), v(1)),
            |_, a| {
                let Some(x) = opt_arg("map_insert_some", &a[2])? else {
                    return Ok(a[0].clone());
                };
                let mut m = a[0].clone();
                let Value::Map(inner) = &mut m else {
                    return Err(EvalError::type_error("map_insert_some", "expected map"));
                };
                Arc::make_mut(inner).insert(a[1].clone(), x.clone());
                Ok(m)
            },
        ),
        // left-biased: keys of the first map keep their values
        FuncDef::new(
            "map_union",
            vec![Type::map(v(0), v(1)), Type::map(v(0), v(1))],
            Type::map(v(0), v(1)),
            |_, a| {
                let x = map_arg("map_union", &a[0])?;
                let y = map_arg("map_union", &a[1])?;
                if y.keys().all(|k| x.contains_key(k)) {
                    return Ok(a[0].clone());
                }
                let mut out = y.clone();
                out.extend(x.iter().map(|(k, v)| (k.clone(), v.clone())));
                Ok(Value::Map(Arc::new(out)))
            },
        ),
        FuncDef::new("map_member", vec![Type::map(v(0), v(1)), v(0)], Type::Bool, |_, a| {
            Ok(Value::Bool(map_arg("map_member", &a[0])?.contains_key(&a[1])))
        }),
        FuncDef::new("map_size", vec![Type::map(v(0), v(1))], Type::Int, |_, a| {
            Ok(Value::Int(map_arg("map_size", &a[0])?.len() as i64))
        }),
        FuncDef::new(
            "map_only_value",
            vec![Type::map(v(0), v(1))],
            Type::optional(v(1)),
            |_, a| {
                let m = map_arg("map_only_value", &a[0])?;
                match m.len() {
                    0 => Ok(Value::none()),
                    1 => Ok(Value::some(m.values().next().cloned().unwrap())),
                    n => Err(EvalError::type_error("map_only_value", format!("map has {n} entries"))),
                }
            },
        ),
        // lists
        FuncDef::new("maximum", vec![Type::list(v(0))], v(0), |_, a| {
            list_arg("maximum", &a[0])?
                .iter()
                .max()
                .cloned()
                .ok_or_else(|| EvalError::Empty("maximum".into()))
        }),
        FuncDef::new("minimum", vec![Type::list(v(0))], v(0), |_, a| {
            list_arg("minimum", &a[0])?
                .iter()
                .min()
                .cloned()
                .ok_or_else(|| EvalError::Empty("minimum".into()))
        }),
        FuncDef::new("len", vec![Type::list(v(0))], Type::Int, |_, a| {
            Ok(Value::Int(list_arg("len", &a[0])?.len() as i64))
        }),
        FuncDef::new("nth", vec![Type::list(v(0)), Type::Int], v(0), |_, a| {
            let l = list_arg("nth", &a[0])?;
            let i = int_arg("nth", &a[1])?;
            usize::try_from(i)
                .ok()
                .and_then(|i| l.get(i))
                .cloned()
                .ok_or_else(|| EvalError::MissingKey(format!("index {i}")))
        }),
        FuncDef::new("list_contains", vec![Type::list(v(0)), v(0)], Type::Bool, |_, a| {
            Ok(Value::Bool(list_arg("list_contains", &a[0])?.contains(&a[1])))
        }),
        // sets
        FuncDef::new("size", vec![Type::set(v(0))], Type::Int, |_, a| {
            Ok(Value::Int(set_arg("size", &a[0])?.len() as i64))
        }),
        FuncDef::new("set_insert", vec![Type::set(v(0)), v(0)], Type::set(v(0)), |_, a| {
            let mut s = a[0].clone();
            let Value::Set(inner) = &mut s else {
                return Err(EvalError::type_error("set_insert", "expected set"));
            };
            if !inner.contains(&a[1]) {
                Arc::make_mut(inner).insert(a[1].clone());
            }
            Ok(s)
        }),
        FuncDef::new("set_delete", vec![Type::set(v(0)), v(0)], Type::set(v(0)), |_, a| {
            let mut s = a[0].clone();
            let Value::Set(inner) = &mut s else {
                return Err(EvalError::type_error("set_delete", "expected set"));
            };
            if inner.contains(&a[1]) {
                Arc::make_mut(inner).remove(&a[1]);
            }
            Ok(s)
        }),
        FuncDef::new("set_member", vec![Type::set(v(0)), v(0)], Type::Bool, |_, a| {
            Ok(Value::Bool(set_arg("set_member", &a[0])?.contains(&a[1])))
        }),
        FuncDef::new(
            "set_union",
            vec![Type::set(v(0)), Type::set(v(0))],
            Type::set(v(0)),
            |_, a| {
                let x = set_arg("set_union", &a[0])?;
                let y = set_arg("set_union", &a[1])?;
                if y.is_subset(x) {
                    return Ok(a[0].clone());
                }
                Ok(Value::set(x.union(y).cloned()))
            },
        ),
        // optionals
        FuncDef::new("some", vec![v(0)], Type::optional(v(0)), |_, a| Ok(Value::some(a[0].clone()))),
        FuncDef::new("is_some", vec![Type::optional(v(0))], Type::Bool, |_, a| {
            Ok(Value::Bool(opt_arg("is_some", &a[0])?.is_some()))
        }),
        FuncDef::new("is_none", vec![Type::optional(v(0))], Type::Bool, |_, a| {
            Ok(Value::Bool(opt_arg("is_none", &a[0])?.is_none()))
        }),
        FuncDef::new("unwrap", vec![Type::optional(v(0))], v(0), |_, a| {
            opt_arg("unwrap", &a[0])?
                .cloned()
                .ok_or_else(|| EvalError::Empty("unwrap".into()))
        }),
        FuncDef::new("unwrap_or", vec![Type::optional(v(0)), v(0)], v(0), |_, a| {
            Ok(opt_arg("unwrap_or", &a[0])?.cloned().unwrap_or_else(|| a[1].clone()))
        }),
        FuncDef::new("opt_to_set", vec![Type::optional(v(0))], Type::set(v(0)), |_, a| {
            Ok(Value::set(opt_arg("opt_to_set", &a[0])?.cloned()))
        }),
    ];
    // Record field access. The type checker resolves the field type from the
    // constant field name; the signature here is only the fallback shape.
    fs.push(FuncDef::new("get", vec![v(0), Type::Text], v(1), |_, a| {
        let name = a[1]
            .as_text()
            .ok_or_else(|| EvalError::type_error("get", "field name must be text"))?;
        a[0].field(name)
            .cloned()
            .ok_or_else(|| EvalError::MissingKey(format!("field {name}")))
    }));
    fs
}
