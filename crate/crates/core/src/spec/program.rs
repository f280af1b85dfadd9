//! Compiled form of a validated specification: streams addressed by index,
//! functions resolved, sugar and nested `over` expressions lifted away.

use std::sync::Arc;

use crate::registry::FuncDef;
use crate::spec::ast::Initializer;
use crate::spec::validate::ValidatedSpec;
use crate::value::{Type, Value};

#[derive(Clone, Debug)]
pub(crate) enum Node {
    Const(Value),
    Call { func: FuncDef, args: Vec<Node> },
    Ite(Box<Node>, Box<Node>, Box<Node>),
    And(Box<Node>, Box<Node>),
    Or(Box<Node>, Box<Node>),
    Read { stream: usize, offset: i64, default: Option<Value> },
    Slice { stream: usize, len: usize },
    Nested { spec: Arc<ValidatedSpec>, inputs: NestedNode },
    /// Innermost bound parameter: a filter element, else the instance parameter.
    Param,
    Filter { set: Box<Node>, pred: Box<Node> },
    Record(Vec<(Arc<str>, Node)>),
}

#[derive(Clone, Debug)]
pub(crate) enum NestedNode {
    /// One list expression per nested input, in the nested declaration order.
    Streams(Vec<Node>),
    Fetch {
        from: Option<Box<Node>>,
        to: Option<Box<Node>>,
        filter: Option<Box<Node>>,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct OverProgram {
    pub params: Node,
    pub updating: Option<Node>,
    pub init: Option<Initializer>,
    /// Single-output program run once per live parameter.
    pub instance: Arc<ValidatedSpec>,
}

#[derive(Clone, Debug)]
pub(crate) enum StreamKind {
    Input,
    Output(Node),
    Over(Box<OverProgram>),
}

#[derive(Clone, Debug)]
pub(crate) struct StreamInfo {
    pub name: String,
    pub ty: Type,
    /// Static instances and lifted `over` streams are not reported.
    pub hidden: bool,
}

impl Node {
    /// Every `(stream, offset)` this node may read, including through nested
    /// input expressions.
    pub(crate) fn reads(&self, out: &mut Vec<(usize, i64)>) {
        match self {
            Node::Const(_) | Node::Param => {}
            Node::Call { args, .. } => args.iter().for_each(|a| a.reads(out)),
            Node::Ite(a, b, c) => {
                a.reads(out);
                b.reads(out);
                c.reads(out);
            }
            Node::And(a, b) | Node::Or(a, b) => {
                a.reads(out);
                b.reads(out);
            }
            Node::Read { stream, offset, .. } => out.push((*stream, *offset)),
            Node::Slice { stream, len } => {
                out.push((*stream, 0));
                out.push((*stream, *len as i64 - 1));
            }
            Node::Nested { inputs, .. } => match inputs {
                NestedNode::Streams(es) => es.iter().for_each(|e| e.reads(out)),
                NestedNode::Fetch { from, to, filter } => {
                    for e in [from, to, filter].into_iter().flatten() {
                        e.reads(out);
                    }
                }
            },
            Node::Filter { set, pred } => {
                set.reads(out);
                pred.reads(out);
            }
            Node::Record(fs) => fs.iter().for_each(|(_, e)| e.reads(out)),
        }
    }

    pub(crate) fn uses_fetch(&self) -> bool {
        match self {
            Node::Nested { inputs: NestedNode::Fetch { .. }, .. } => true,
            Node::Nested { inputs: NestedNode::Streams(es), .. } => es.iter().any(Node::uses_fetch),
            Node::Call { args, .. } => args.iter().any(Node::uses_fetch),
            Node::Ite(a, b, c) => a.uses_fetch() || b.uses_fetch() || c.uses_fetch(),
            Node::And(a, b) | Node::Or(a, b) => a.uses_fetch() || b.uses_fetch(),
            Node::Filter { set, pred } => set.uses_fetch() || pred.uses_fetch(),
            Node::Record(fs) => fs.iter().any(|(_, e)| e.uses_fetch()),
            _ => false,
        }
    }
}
