//! Expression evaluation shared by the online engine and the offline oracle.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::EvalError;
use crate::event::Event;
use crate::log::Filter;
use crate::registry::Registry;
use crate::spec::program::{NestedNode, Node};
use crate::spec::ValidatedSpec;
use crate::value::Value;

pub type Slot = Result<Value, EvalError>;

/// Where stream values, retrieval and nested runs come from.
pub(crate) trait Access {
    /// Resolves function names passed to higher-order functions.
    fn registry(&self) -> &Registry;
    /// Value of `stream` at absolute instant `at`, or `default` outside the trace.
    fn read(&mut self, stream: usize, at: i64, default: Option<&Value>) -> Slot;
    /// Values of `stream` at `from, from+1, ...` up to `len` of them, cut at the trace end.
    fn slice(&mut self, stream: usize, from: u64, len: usize) -> Slot;
    /// Events in `[from, to)` of the log matching `filter`, fetched while
    /// evaluating instant `u`. A missing `to` means the end of the log.
    fn fetch(&mut self, from: u64, to: Option<u64>, u: u64, filter: &Filter) -> Result<Vec<Event>, EvalError>;
    /// Runs `spec` on `trace` and returns its verdict.
    fn nested(&mut self, spec: &Arc<ValidatedSpec>, trace: Vec<Event>) -> Slot;
}

pub(crate) fn eval(node: &Node, u: u64, acc: &mut impl Access, params: &mut Vec<Value>) -> Slot {
    match node {
        Node::Const(v) => Ok(v.clone()),
        Node::Call { func, args } => {
            let vals = args
                .iter()
                .map(|a| eval(a, u, acc, params))
                .collect::<Result<Vec<_>, _>>()?;
            (func.apply)(acc.registry(), &vals)
        }
        Node::Ite(c, t, e) => match eval(c, u, acc, params)? {
            Value::Bool(true) => eval(t, u, acc, params),
            Value::Bool(false) => eval(e, u, acc, params),
            other => Err(EvalError::type_error("ite", format!("condition {other}"))),
        },
        Node::And(a, b) => match eval(a, u, acc, params)? {
            Value::Bool(false) => Ok(Value::Bool(false)),
            Value::Bool(true) => eval(b, u, acc, params),
            other => Err(EvalError::type_error("and", format!("operand {other}"))),
        },
        Node::Or(a, b) => match eval(a, u, acc, params)? {
            Value::Bool(true) => Ok(Value::Bool(true)),
            Value::Bool(false) => eval(b, u, acc, params),
            other => Err(EvalError::type_error("or", format!("operand {other}"))),
        },
        Node::Read { stream, offset, default } => acc.read(*stream, u as i64 + offset, default.as_ref()),
        Node::Slice { stream, len } => acc.slice(*stream, u, *len),
        Node::Param => params
            .last()
            .cloned()
            .ok_or_else(|| EvalError::type_error("param", "no parameter bound")),
        Node::Filter { set, pred } => {
            let s = eval(set, u, acc, params)?;
            let elems = s
                .as_set()
                .ok_or_else(|| EvalError::type_error("filter", format!("expected set, got {}", s.kind())))?;
            let mut out = std::collections::BTreeSet::new();
            for x in elems {
                params.push(x.clone());
                let keep = eval(pred, u, acc, params);
                params.pop();
                if keep? == Value::Bool(true) {
                    out.insert(x.clone());
                }
            }
            Ok(Value::Set(Arc::new(out)))
        }
        Node::Record(fs) => {
            let mut out = Vec::with_capacity(fs.len());
            for (k, n) in fs {
                out.push((k.clone(), eval(n, u, acc, params)?));
            }
            Ok(Value::Record(Arc::new(out)))
        }
        Node::Nested { spec, inputs } => {
            let trace = match inputs {
                NestedNode::Streams(lists) => {
                    let names = spec.inputs();
                    let mut cols = vec![];
                    for l in lists {
                        let v = eval(l, u, acc, params)?;
                        let items = v
                            .as_list()
                            .ok_or_else(|| EvalError::Nested(format!("input is not a list: {v}")))?
                            .to_vec();
                        cols.push(items);
                    }
                    let len = cols.first().map_or(0, Vec::len);
                    if cols.iter().any(|c| c.len() != len) {
                        return Err(EvalError::Nested("input lists differ in length".into()));
                    }
                    (0..len)
                        .map(|i| Event {
                            instant: i as u64,
                            bindings: names
                                .iter()
                                .zip(&cols)
                                .map(|((n, _), c)| (n.clone(), c[i].clone()))
                                .collect::<BTreeMap<_, _>>(),
                        })
                        .collect()
                }
                NestedNode::Fetch { from, to, filter } => {
                    let from = match from {
                        Some(e) => bound(eval(e, u, acc, params)?)?,
                        None => 0,
                    };
                    let to = match to {
                        Some(e) => Some(bound(eval(e, u, acc, params)?)?),
                        None => None,
                    };
                    let filter = match filter {
                        Some(e) => Filter::from_value(&eval(e, u, acc, params)?)
                            .map_err(|e| EvalError::Retrieval(e.to_string()))?,
                        None => Filter::default(),
                    };
                    let events = acc.fetch(from, to, u, &filter)?;
                    let inputs = spec.inputs();
                    events
                        .into_iter()
                        .enumerate()
                        .map(|(i, e)| {
                            let mut e = e
                                .typed(&inputs, true)
                                .map_err(|err| EvalError::Retrieval(err.to_string()))?;
                            e.instant = i as u64;
                            Ok(e)
                        })
                        .collect::<Result<Vec<_>, EvalError>>()?
                }
            };
            acc.nested(spec, trace)
        }
    }
}

fn bound(v: Value) -> Result<u64, EvalError> {
    match v {
        Value::Int(i) => Ok(i.max(0) as u64),
        other => Err(EvalError::type_error("retrieval bound", format!("{other}"))),
    }
}
