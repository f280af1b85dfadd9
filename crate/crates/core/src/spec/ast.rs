use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::value::{Type, Value};

/// Reference to a stream, optionally instantiating a parametric stream at a
/// constant parameter (static parametrization).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamRef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<Value>,
}

impl StreamRef {
    pub fn new(name: impl Into<String>) -> Self {
        StreamRef { name: name.into(), param: None }
    }

    pub fn instance(name: impl Into<String>, param: Value) -> Self {
        StreamRef { name: name.into(), param: Some(param) }
    }

    /// Name of the stream a static instantiation expands to.
    pub fn resolved_name(&self) -> String {
        match &self.param {
            None => self.name.clone(),
            Some(p) => format!("{}<{}>", self.name, p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(Value),
    Apply { func: String, args: Vec<Expr> },
    /// `s[k|d]`: value of `stream` `k` instants away, `default` past either end of the trace.
    Offset { stream: StreamRef, offset: i64, default: Box<Expr> },
    /// `s[now]`.
    Now(StreamRef),
    /// `s[:n]`: list of the next `len` values of `stream`, starting now.
    Slice { stream: StreamRef, len: usize },
    RunSpec { spec: Box<Specification>, inputs: NestedInputs },
    Over(OverExpr),
    MOver(MOverExpr),
    When(WhenExpr),
    /// The bound parameter inside a parametric stream body or a `when` condition.
    Param,
    /// `{ p in set | pred(p) }`; `pred` sees the element as [`Expr::Param`].
    Filter { set: Box<Expr>, pred: Box<Expr> },
    Record(Vec<(String, Expr)>),
}

/// Where a nested specification reads its input trace from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NestedInputs {
    /// One list-valued expression per nested input; lists must have equal length.
    Streams(BTreeMap<String, Expr>),
    /// Events retrieved from the log in `[from, to)` matching `filter`.
    /// Missing bounds mean the start and the current end of the log.
    Fetch {
        from: Option<Box<Expr>>,
        to: Option<Box<Expr>>,
        filter: Option<Box<Expr>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverExpr {
    pub stream: String,
    pub params: Box<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updating: Option<Box<Expr>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Initializer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MOverExpr {
    pub stream: String,
    /// Optional-valued parameter.
    pub param: Box<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updating: Option<Box<Expr>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Initializer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhenExpr {
    pub stream: String,
    pub params: Box<Expr>,
    /// Boolean expression over [`Expr::Param`], evaluated for each live parameter.
    pub cond: Box<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Initializer>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitSource {
    #[default]
    InMemory,
    ExternalProcess,
}

/// How a freshly discovered instance recovers its past.
///
/// `filter` is a record or text-keyed map of field clauses; any text leaf equal
/// to `{param}` (or `{param.<field>}` for record parameters) is replaced by the
/// parameter before retrieval. `command` is an optional extra-argument template
/// for external adapters using the placeholders `{param}`, `{from}`, `{to}`, `{filter}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Initializer {
    pub filter: Value,
    #[serde(default)]
    pub source: InitSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
}

impl Initializer {
    pub const PLACEHOLDERS: [&'static str; 4] = ["{param}", "{from}", "{to}", "{filter}"];

    /// Replays the whole past of the log.
    pub fn all() -> Self {
        Initializer { filter: Value::empty_map(), source: InitSource::InMemory, command: None }
    }

    pub fn filtered(filter: Value) -> Self {
        Initializer { filter, source: InitSource::InMemory, command: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDecl {
    pub name: String,
    pub ty: Type,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputDecl {
    pub name: String,
    pub ty: Type,
    pub expr: Expr,
}

/// A stream abstracted over a parameter of type `param_ty`. Inside `body` the
/// parameter is [`Expr::Param`] and the stream refers to itself by `name`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricStreamDef {
    pub name: String,
    pub param_ty: Type,
    pub ty: Type,
    pub body: Expr,
}

/// `return value when cond`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnClause {
    pub value: String,
    pub when: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Specification {
    pub name: String,
    pub inputs: Vec<InputDecl>,
    pub outputs: Vec<OutputDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parametric: Vec<ParametricStreamDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub returns: Option<ReturnClause>,
}

impl Specification {
    pub fn new(name: impl Into<String>) -> Self {
        Specification {
            name: name.into(),
            inputs: vec![],
            outputs: vec![],
            parametric: vec![],
            returns: None,
        }
    }

    pub fn input(mut self, name: &str, ty: Type) -> Self {
        self.inputs.push(InputDecl { name: name.into(), ty });
        self
    }

    pub fn output(mut self, name: &str, ty: Type, expr: Expr) -> Self {
        self.outputs.push(OutputDecl { name: name.into(), ty, expr });
        self
    }

    pub fn parametric(mut self, name: &str, param_ty: Type, ty: Type, body: Expr) -> Self {
        self.parametric.push(ParametricStreamDef { name: name.into(), param_ty, ty, body });
        self
    }

    pub fn returns(mut self, value: &str, when: &str) -> Self {
        self.returns = Some(ReturnClause { value: value.into(), when: when.into() });
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specifications always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

impl Expr {
    /// Visits every sub-expression, parents before children. Nested
    /// specifications are not entered.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Now(_) | Expr::Slice { .. } | Expr::Param => {}
            Expr::Apply { args, .. } => args.iter().for_each(|a| a.walk(f)),
            Expr::Offset { default, .. } => default.walk(f),
            Expr::RunSpec { inputs, .. } => match inputs {
                NestedInputs::Streams(m) => m.values().for_each(|e| e.walk(f)),
                NestedInputs::Fetch { from, to, filter } => {
                    for e in [from, to, filter].into_iter().flatten() {
                        e.walk(f);
                    }
                }
            },
            Expr::Over(o) => {
                o.params.walk(f);
                if let Some(u) = &o.updating {
                    u.walk(f);
                }
            }
            Expr::MOver(o) => {
                o.param.walk(f);
                if let Some(u) = &o.updating {
                    u.walk(f);
                }
            }
            Expr::When(w) => {
                w.params.walk(f);
                w.cond.walk(f);
            }
            Expr::Filter { set, pred } => {
                set.walk(f);
                pred.walk(f);
            }
            Expr::Record(fields) => fields.iter().for_each(|(_, e)| e.walk(f)),
        }
    }

    /// Rebuilds the tree bottom-up, letting `f` replace any node after its
    /// children have been rewritten.
    pub fn rewrite(self, f: &mut impl FnMut(Expr) -> Expr) -> Expr {
        let boxed = |e: Box<Expr>, f: &mut dyn FnMut(Expr) -> Expr| -> Box<Expr> {
            Box::new(rewrite_dyn(*e, f))
        };
        let node = match self {
            Expr::Apply { func, args } => Expr::Apply {
                func,
                args: args.into_iter().map(|a| rewrite_dyn(a, f)).collect(),
            },
            Expr::Offset { stream, offset, default } => Expr::Offset {
                stream,
                offset,
                default: boxed(default, f),
            },
            Expr::RunSpec { spec, inputs } => Expr::RunSpec {
                spec,
                inputs: match inputs {
                    NestedInputs::Streams(m) => NestedInputs::Streams(
                        m.into_iter().map(|(k, e)| (k, rewrite_dyn(e, f))).collect(),
                    ),
                    NestedInputs::Fetch { from, to, filter } => NestedInputs::Fetch {
                        from: from.map(|e| boxed(e, f)),
                        to: to.map(|e| boxed(e, f)),
                        filter: filter.map(|e| boxed(e, f)),
                    },
                },
            },
            Expr::Over(o) => Expr::Over(OverExpr {
                stream: o.stream,
                params: boxed(o.params, f),
                updating: o.updating.map(|e| boxed(e, f)),
                init: o.init,
            }),
            Expr::MOver(o) => Expr::MOver(MOverExpr {
                stream: o.stream,
                param: boxed(o.param, f),
                updating: o.updating.map(|e| boxed(e, f)),
                init: o.init,
            }),
            Expr::When(w) => Expr::When(WhenExpr {
                stream: w.stream,
                params: boxed(w.params, f),
                cond: boxed(w.cond, f),
                init: w.init,
            }),
            Expr::Filter { set, pred } => Expr::Filter { set: boxed(set, f), pred: boxed(pred, f) },
            Expr::Record(fields) => {
                Expr::Record(fields.into_iter().map(|(k, e)| (k, rewrite_dyn(e, f))).collect())
            }
            leaf => leaf,
        };
        f(node)
    }
}

fn rewrite_dyn(e: Expr, f: &mut dyn FnMut(Expr) -> Expr) -> Expr {
    e.rewrite(&mut |x| f(x))
}
