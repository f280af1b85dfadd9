//! Shorthands for building [`Expr`] trees in Rust.
//!
//! ```
//! use retrolola_core::spec::dsl::*;
//! use retrolola_core::{Specification, Type};
//!
//! let spec = Specification::new("alt")
//!     .input("altitude", Type::Float)
//!     .output("alt_ok", Type::Bool, call("lt", [now("altitude"), lit(100.0)]));
//! assert_eq!(spec.outputs.len(), 1);
//! ```

use std::collections::BTreeMap;

use super::ast::*;
use crate::value::Value;

pub fn lit(v: impl Into<Value>) -> Expr {
    Expr::Const(v.into())
}

pub fn now(stream: &str) -> Expr {
    Expr::Now(StreamRef::new(stream))
}

/// `stream[offset|default]`.
pub fn at(stream: &str, offset: i64, default: impl Into<Value>) -> Expr {
    Expr::Offset {
        stream: StreamRef::new(stream),
        offset,
        default: Box::new(lit(default)),
    }
}

/// `stream[-1|default]`.
pub fn prev(stream: &str, default: impl Into<Value>) -> Expr {
    at(stream, -1, default)
}

pub fn slice(stream: &str, len: usize) -> Expr {
    Expr::Slice { stream: StreamRef::new(stream), len }
}

/// Static instantiation `stream<param>[now]`.
pub fn inst_now(stream: &str, param: impl Into<Value>) -> Expr {
    Expr::Now(StreamRef::instance(stream, param.into()))
}

pub fn call<const N: usize>(func: &str, args: [Expr; N]) -> Expr {
    Expr::Apply { func: func.into(), args: args.into() }
}

pub fn ite(c: Expr, t: Expr, e: Expr) -> Expr {
    call("ite", [c, t, e])
}

pub fn and(a: Expr, b: Expr) -> Expr {
    call("and", [a, b])
}

pub fn or(a: Expr, b: Expr) -> Expr {
    call("or", [a, b])
}

pub fn not(a: Expr) -> Expr {
    call("not", [a])
}

pub fn eq(a: Expr, b: Expr) -> Expr {
    call("eq", [a, b])
}

/// Conjunction of all `terms`; `true` when empty.
pub fn all_of(terms: impl IntoIterator<Item = Expr>) -> Expr {
    terms
        .into_iter()
        .reduce(and)
        .unwrap_or_else(|| lit(true))
}

pub fn param() -> Expr {
    Expr::Param
}

pub fn record<'a>(fields: impl IntoIterator<Item = (&'a str, Expr)>) -> Expr {
    Expr::Record(fields.into_iter().map(|(k, e)| (k.to_string(), e)).collect())
}

pub fn filter(set: Expr, pred: Expr) -> Expr {
    Expr::Filter { set: Box::new(set), pred: Box::new(pred) }
}

pub fn run_spec<'a>(spec: Specification, inputs: impl IntoIterator<Item = (&'a str, Expr)>) -> Expr {
    Expr::RunSpec {
        spec: Box::new(spec),
        inputs: NestedInputs::Streams(
            inputs
                .into_iter()
                .map(|(k, e)| (k.to_string(), e))
                .collect::<BTreeMap<_, _>>(),
        ),
    }
}

pub fn run_spec_fetch(spec: Specification, from: Option<Expr>, to: Option<Expr>, filter: Option<Expr>) -> Expr {
    Expr::RunSpec {
        spec: Box::new(spec),
        inputs: NestedInputs::Fetch {
            from: from.map(Box::new),
            to: to.map(Box::new),
            filter: filter.map(Box::new),
        },
    }
}

pub fn over(stream: &str, params: Expr) -> Expr {
    Expr::Over(OverExpr {
        stream: stream.into(),
        params: Box::new(params),
        updating: None,
        init: None,
    })
}

pub fn mover(stream: &str, param: Expr) -> Expr {
    Expr::MOver(MOverExpr {
        stream: stream.into(),
        param: Box::new(param),
        updating: None,
        init: None,
    })
}

pub fn when(stream: &str, params: Expr, cond: Expr) -> Expr {
    Expr::When(WhenExpr {
        stream: stream.into(),
        params: Box::new(params),
        cond: Box::new(cond),
        init: None,
    })
}

/// Adds an `updating` set to an `over`/`mover` expression.
pub fn updating(e: Expr, set: Expr) -> Expr {
    match e {
        Expr::Over(mut o) => {
            o.updating = Some(Box::new(set));
            Expr::Over(o)
        }
        Expr::MOver(mut o) => {
            o.updating = Some(Box::new(set));
            Expr::MOver(o)
        }
        other => panic!("`updating` applies to over/mover, not {other:?}"),
    }
}

/// Adds an initializer to an `over`/`mover`/`when` expression.
pub fn with_init(e: Expr, init: Initializer) -> Expr {
    match e {
        Expr::Over(mut o) => {
            o.init = Some(init);
            Expr::Over(o)
        }
        Expr::MOver(mut o) => {
            o.init = Some(init);
            Expr::MOver(o)
        }
        Expr::When(mut w) => {
            w.init = Some(init);
            Expr::When(w)
        }
        other => panic!("`withInit` applies to over/mover/when, not {other:?}"),
    }
}
