//! Well-formedness checking and compilation.
//!
//! Validation runs to completion and reports every problem it finds. A spec
//! passes through these stages:
//!
//! 1. duplicate names;
//! 2. `mover`/`when` desugared into `over`;
//! 3. static instances `s<v>` expanded into ordinary hidden streams;
//! 4. each `over` lifted into a hidden stream of type `Map P S`;
//! 5. name resolution and type inference (with unification for the
//!    polymorphic builtins);
//! 6. dependency analysis: no cycle of non-negative total offset, latency of
//!    every stream, and the window bounds `max_back`/`max_fwd`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ast::*;
use super::desugar::desugar_spec;
use super::program::*;
use crate::error::EvalError;
use crate::registry::Registry;
use crate::value::{Type, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    DuplicateStream(String),
    UndeclaredStream { stream: String, referenced_in: String },
    /// A parametric stream used without a parameter, or a parameter given to
    /// an ordinary stream.
    Parametrization { stream: String, msg: String },
    TypeMismatch { stream: String, msg: String },
    UnknownFunction { stream: String, func: String },
    IllFormedDefault { stream: String, msg: String },
    InvalidSlice { stream: String },
    ParamOutOfScope { stream: String },
    /// Every stream listed depends on itself at the same instant.
    CyclicDependency(Vec<String>),
    /// Every stream listed depends on its own future.
    UnboundedFuture(Vec<String>),
    IllFormedParametric { stream: String, msg: String },
    Initializer { stream: String, msg: String },
    ReturnClause(String),
    Nested { spec: String, diagnostics: Vec<Diagnostic> },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DuplicateStream(s) => write!(f, "stream `{s}` declared more than once"),
            Diagnostic::UndeclaredStream { stream, referenced_in } => {
                write!(f, "`{referenced_in}` refers to undeclared stream `{stream}`")
            }
            Diagnostic::Parametrization { stream, msg } => write!(f, "`{stream}`: {msg}"),
            Diagnostic::TypeMismatch { stream, msg } => write!(f, "type error in `{stream}`: {msg}"),
            Diagnostic::UnknownFunction { stream, func } => {
                write!(f, "`{stream}` calls unknown function `{func}`")
            }
            Diagnostic::IllFormedDefault { stream, msg } => {
                write!(f, "ill-formed default in `{stream}`: {msg}")
            }
            Diagnostic::InvalidSlice { stream } => write!(f, "`{stream}` takes an empty slice"),
            Diagnostic::ParamOutOfScope { stream } => {
                write!(f, "`{stream}` uses the parameter outside a parametric stream or filter")
            }
            Diagnostic::CyclicDependency(c) => {
                write!(f, "cyclic dependency without delay among {}", c.join(" -> "))
            }
            Diagnostic::UnboundedFuture(c) => {
                write!(f, "unbounded future dependency among {}", c.join(", "))
            }
            Diagnostic::IllFormedParametric { stream, msg } => write!(f, "parametric `{stream}`: {msg}"),
            Diagnostic::Initializer { stream, msg } => write!(f, "initializer of `{stream}`: {msg}"),
            Diagnostic::ReturnClause(m) => write!(f, "return clause: {m}"),
            Diagnostic::Nested { spec, diagnostics } => {
                write!(f, "in `{spec}`: ")?;
                for (i, d) in diagnostics.iter().enumerate() {
                    if i > 0 {
                        write!(f, "; ")?;
                    }
                    write!(f, "{d}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("specification `{spec}` is not well-formed:{}", render(.diagnostics))]
pub struct ValidationError {
    pub spec: String,
    pub diagnostics: Vec<Diagnostic>,
}

fn render(ds: &[Diagnostic]) -> String {
    ds.iter().map(|d| format!("\n  - {d}")).collect()
}

impl ValidationError {
    /// True if some diagnostic (possibly nested) satisfies `pred`.
    pub fn any(&self, pred: impl Fn(&Diagnostic) -> bool + Copy) -> bool {
        fn go(ds: &[Diagnostic], pred: impl Fn(&Diagnostic) -> bool + Copy) -> bool {
            ds.iter().any(|d| {
                pred(d) || matches!(d, Diagnostic::Nested { diagnostics, .. } if go(diagnostics, pred))
            })
        }
        go(&self.diagnostics, pred)
    }
}

/// A specification that passed validation, together with its compiled program.
pub struct ValidatedSpec {
    pub(crate) source: Specification,
    pub(crate) hash: String,
    pub(crate) registry: Arc<Registry>,
    pub(crate) streams: Vec<StreamInfo>,
    pub(crate) kinds: Vec<StreamKind>,
    pub(crate) n_inputs: usize,
    pub(crate) index: HashMap<String, usize>,
    /// How many instants after `t` the value at `t` becomes computable.
    pub(crate) latency: Vec<u64>,
    pub(crate) order: Vec<usize>,
    pub(crate) max_back: u64,
    pub(crate) max_fwd: u64,
    /// `(value, when)` stream indices.
    pub(crate) returns: Option<(usize, usize)>,
    /// Reads the monitor's own log (retrieval or retroactive initialization).
    pub(crate) needs_log: bool,
}

impl fmt::Debug for ValidatedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValidatedSpec")
            .field("name", &self.source.name)
            .field("hash", &self.hash)
            .field("max_back", &self.max_back)
            .field("max_fwd", &self.max_fwd)
            .finish_non_exhaustive()
    }
}

impl ValidatedSpec {
    pub fn name(&self) -> &str {
        &self.source.name
    }

    /// The specification as written, before desugaring.
    pub fn source(&self) -> &Specification {
        &self.source
    }

    /// Hex SHA-256 of the canonical JSON form of the source.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    /// Largest backward offset any stream reads.
    pub fn max_back(&self) -> u64 {
        self.max_back
    }

    /// Largest number of instants any value waits for future input.
    pub fn max_fwd(&self) -> u64 {
        self.max_fwd
    }

    pub fn inputs(&self) -> Vec<(String, Type)> {
        self.streams[..self.n_inputs]
            .iter()
            .map(|s| (s.name.clone(), s.ty.clone()))
            .collect()
    }

    /// Declared outputs in declaration order.
    pub fn outputs(&self) -> Vec<(String, Type)> {
        self.streams[self.n_inputs..]
            .iter()
            .filter(|s| !s.hidden)
            .map(|s| (s.name.clone(), s.ty.clone()))
            .collect()
    }

    pub fn stream_type(&self, name: &str) -> Option<&Type> {
        self.index.get(name).map(|&i| &self.streams[i].ty)
    }

    pub fn latency(&self, name: &str) -> Option<u64> {
        self.index.get(name).map(|&i| self.latency[i])
    }

    /// Non-input streams (hidden ones included) in an order where every
    /// same-instant dependency comes first.
    pub fn evaluation_order(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.streams[i].name.as_str()).collect()
    }

    pub fn returns(&self) -> Option<&ReturnClause> {
        self.source.returns.as_ref()
    }

    pub fn uses_log(&self) -> bool {
        self.needs_log
    }

    pub(crate) fn n_streams(&self) -> usize {
        self.streams.len()
    }
}

pub fn validate(spec: Specification) -> Result<ValidatedSpec, ValidationError> {
    validate_with(spec, Arc::new(Registry::builtin()))
}

pub fn validate_with(spec: Specification, registry: Arc<Registry>) -> Result<ValidatedSpec, ValidationError> {
    let name = spec.name.clone();
    build(spec, registry, None).map_err(|diagnostics| ValidationError { spec: name, diagnostics })
}

pub(crate) fn spec_hash(spec: &Specification) -> String {
    let bytes = serde_json::to_vec(spec).expect("specifications always serialize");
    hex::encode(Sha256::digest(bytes))
}

fn build(
    spec: Specification,
    registry: Arc<Registry>,
    param_ty: Option<Type>,
) -> Result<ValidatedSpec, Vec<Diagnostic>> {
    let mut diags = vec![];

    let mut seen = BTreeSet::new();
    let names = spec
        .inputs
        .iter()
        .map(|i| &i.name)
        .chain(spec.outputs.iter().map(|o| &o.name))
        .chain(spec.parametric.iter().map(|p| &p.name));
    for n in names {
        if !seen.insert(n.clone()) {
            diags.push(Diagnostic::DuplicateStream(n.clone()));
        }
    }

    let work = desugar_spec(&spec);
    let defs: HashMap<String, ParametricStreamDef> =
        work.parametric.iter().map(|d| (d.name.clone(), d.clone())).collect();
    for d in &work.parametric {
        check_parametric_body(d, &mut diags);
    }

    // static instances
    let mut derived: Vec<(String, Type, Expr, bool)> = work
        .outputs
        .iter()
        .map(|o| (o.name.clone(), o.ty.clone(), o.expr.clone(), false))
        .collect();
    let mut expanded = BTreeSet::new();
    let mut i = 0;
    while i < derived.len() {
        let mut requests = vec![];
        let expr = std::mem::replace(&mut derived[i].2, Expr::Param);
        derived[i].2 = map_refs(expr, &mut |r| {
            if let Some(p) = r.param.take() {
                let resolved = StreamRef::instance(r.name.clone(), p.clone()).resolved_name();
                requests.push((r.name.clone(), p));
                r.name = resolved;
            }
        });
        for (def_name, p) in requests {
            let resolved = StreamRef::instance(def_name.clone(), p.clone()).resolved_name();
            if !expanded.insert(resolved.clone()) {
                continue;
            }
            let Some(def) = defs.get(&def_name) else {
                diags.push(Diagnostic::Parametrization {
                    stream: def_name.clone(),
                    msg: format!("not a parametric stream, cannot instantiate at {p}"),
                });
                continue;
            };
            if !p.conforms(&def.param_ty) {
                diags.push(Diagnostic::TypeMismatch {
                    stream: resolved.clone(),
                    msg: format!("parameter {p} is not of type {}", def.param_ty),
                });
                continue;
            }
            let body = instantiate(&def.body, &def.name, &p);
            derived.push((resolved, def.ty.clone(), body, true));
        }
        i += 1;
    }

    // lift `over`
    let mut aux: Vec<(String, OverExpr)> = vec![];
    for d in &mut derived {
        let expr = std::mem::replace(&mut d.2, Expr::Param);
        d.2 = expr.rewrite(&mut |n| match n {
            Expr::Over(o) => {
                let name = format!("__over{}_{}", aux.len(), o.stream);
                aux.push((name.clone(), o));
                Expr::Now(StreamRef::new(name))
            }
            other => other,
        });
    }

    // stream table
    let mut streams = vec![];
    for inp in &spec.inputs {
        streams.push(StreamInfo { name: inp.name.clone(), ty: inp.ty.clone(), hidden: false });
    }
    for (name, ty, _, hidden) in &derived {
        streams.push(StreamInfo { name: name.clone(), ty: ty.clone(), hidden: *hidden });
    }
    for (name, o) in &aux {
        let ty = match defs.get(&o.stream) {
            Some(d) => Type::map(d.param_ty.clone(), d.ty.clone()),
            None => {
                diags.push(Diagnostic::Parametrization {
                    stream: o.stream.clone(),
                    msg: "`over` needs a parametric stream".into(),
                });
                Type::Unit
            }
        };
        streams.push(StreamInfo { name: name.clone(), ty, hidden: true });
    }
    let mut index = HashMap::new();
    for (i, s) in streams.iter().enumerate() {
        index.entry(s.name.clone()).or_insert(i);
    }
    let n_inputs = spec.inputs.len();

    let mut typer = Typer {
        reg: &registry,
        vars: vec![],
        streams: &streams,
        index: &index,
        defs: &defs,
        params: param_ty.iter().cloned().collect(),
        ctx: String::new(),
        diags: vec![],
    };
    let mut kinds: Vec<StreamKind> = (0..n_inputs).map(|_| StreamKind::Input).collect();
    for (name, ty, expr, _) in &derived {
        typer.ctx = name.clone();
        let node = match typer.check(expr) {
            Some((t, node)) => {
                typer.expect(&t, ty, "declared type");
                node
            }
            None => Node::Const(Value::Unit),
        };
        kinds.push(StreamKind::Output(node));
    }
    for (name, o) in &aux {
        typer.ctx = name.clone();
        let Some(def) = defs.get(&o.stream) else {
            kinds.push(StreamKind::Output(Node::Const(Value::Unit)));
            continue;
        };
        let pset = Type::set(def.param_ty.clone());
        let params = typer.check_against(&o.params, &pset, "parameter set");
        let updating = o.updating.as_ref().map(|u| typer.check_against(u, &pset, "updating set"));
        if let Some(init) = &o.init {
            check_initializer(&def.name, init, &def.param_ty, &mut typer.diags);
        }
        let sub = Specification {
            name: def.name.clone(),
            inputs: spec.inputs.clone(),
            outputs: vec![OutputDecl { name: def.name.clone(), ty: def.ty.clone(), expr: def.body.clone() }],
            parametric: vec![],
            returns: None,
        };
        let instance = match build(sub, registry.clone(), Some(def.param_ty.clone())) {
            Ok(p) => {
                if p.max_fwd > 0 {
                    typer.diags.push(Diagnostic::IllFormedParametric {
                        stream: def.name.clone(),
                        msg: "instances cannot read future values".into(),
                    });
                }
                Some(Arc::new(p))
            }
            Err(ds) => {
                typer.diags.push(Diagnostic::Nested { spec: def.name.clone(), diagnostics: ds });
                None
            }
        };
        match (params, updating.unwrap_or(Some(Node::Const(Value::Unit))), instance) {
            (Some(params), Some(updating), Some(instance)) => {
                kinds.push(StreamKind::Over(Box::new(OverProgram {
                    params,
                    updating: o.updating.as_ref().map(|_| updating),
                    init: o.init.clone(),
                    instance,
                })))
            }
            _ => kinds.push(StreamKind::Output(Node::Const(Value::Unit))),
        }
    }
    let mut returns = None;
    if let Some(rc) = &spec.returns {
        match (index.get(&rc.value), index.get(&rc.when)) {
            (Some(&v), Some(&w)) => {
                typer.ctx = rc.when.clone();
                let wt = streams[w].ty.clone();
                if typer.unify(&wt, &Type::Bool).is_err() {
                    typer.diags.push(Diagnostic::ReturnClause(format!(
                        "condition `{}` has type {wt}, expected bool",
                        rc.when
                    )));
                }
                returns = Some((v, w));
            }
            _ => typer.diags.push(Diagnostic::ReturnClause(format!(
                "`return {} when {}` names an undeclared stream",
                rc.value, rc.when
            ))),
        }
    }
    diags.append(&mut typer.diags);

    // dependencies
    let n = streams.len();
    let mut edges: Vec<Vec<(usize, i64)>> = vec![vec![]; n];
    for (y, k) in kinds.iter().enumerate() {
        match k {
            StreamKind::Input => {}
            StreamKind::Output(node) => node.reads(&mut edges[y]),
            StreamKind::Over(o) => {
                o.params.reads(&mut edges[y]);
                if let Some(u) = &o.updating {
                    u.reads(&mut edges[y]);
                }
                edges[y].extend((0..n_inputs).map(|x| (x, 0)));
            }
        }
    }
    let (cyclic, unbounded) = bad_cycles(&edges);
    if !cyclic.is_empty() {
        diags.push(Diagnostic::CyclicDependency(cyclic.iter().map(|&i| streams[i].name.clone()).collect()));
    }
    if !unbounded.is_empty() {
        diags.push(Diagnostic::UnboundedFuture(unbounded.iter().map(|&i| streams[i].name.clone()).collect()));
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    let latency = latencies(&edges);
    let max_fwd = latency.iter().copied().max().unwrap_or(0);
    let max_back = edges
        .iter()
        .flatten()
        .map(|&(_, k)| if k < 0 { (-k) as u64 } else { 0 })
        .max()
        .unwrap_or(0);
    let order = topo_order(&edges, n_inputs);
    let needs_log = kinds.iter().any(|k| match k {
        StreamKind::Output(node) => node.uses_fetch(),
        StreamKind::Over(o) => o.init.is_some(),
        StreamKind::Input => false,
    });
    Ok(ValidatedSpec {
        hash: spec_hash(&spec),
        source: spec,
        registry,
        streams,
        kinds,
        n_inputs,
        index,
        latency,
        order,
        max_back,
        max_fwd,
        returns,
        needs_log,
    })
}

fn map_refs(e: Expr, f: &mut impl FnMut(&mut StreamRef)) -> Expr {
    e.rewrite(&mut |n| match n {
        Expr::Now(mut r) => {
            f(&mut r);
            Expr::Now(r)
        }
        Expr::Offset { mut stream, offset, default } => {
            f(&mut stream);
            Expr::Offset { stream, offset, default }
        }
        Expr::Slice { mut stream, len } => {
            f(&mut stream);
            Expr::Slice { stream, len }
        }
        other => other,
    })
}

/// Body of the static instance `name<p>`.
fn instantiate(body: &Expr, name: &str, p: &Value) -> Expr {
    let e = map_refs(body.clone(), &mut |r| {
        if r.name == name && r.param.is_none() {
            r.param = Some(p.clone());
        }
    });
    e.rewrite(&mut |n| match n {
        Expr::Param => Expr::Const(p.clone()),
        other => other,
    })
}

fn check_parametric_body(d: &ParametricStreamDef, diags: &mut Vec<Diagnostic>) {
    let mut bad = vec![];
    d.body.walk(&mut |n| match n {
        Expr::Over(_) | Expr::MOver(_) | Expr::When(_) => bad.push("instances cannot contain `over`"),
        Expr::Filter { .. } => bad.push("filters would shadow the parameter"),
        Expr::RunSpec { inputs: NestedInputs::Fetch { .. }, .. } => {
            bad.push("instances cannot retrieve from the log")
        }
        Expr::Now(r) | Expr::Offset { stream: r, .. } | Expr::Slice { stream: r, .. }
            if r.param.is_some() =>
        {
            bad.push("instances cannot instantiate other parametric streams")
        }
        _ => {}
    });
    bad.dedup();
    for msg in bad {
        diags.push(Diagnostic::IllFormedParametric { stream: d.name.clone(), msg: msg.into() });
    }
}

fn check_initializer(stream: &str, init: &Initializer, param_ty: &Type, diags: &mut Vec<Diagnostic>) {
    let mut push = |msg: String| diags.push(Diagnostic::Initializer { stream: stream.into(), msg });
    let leaves: Vec<&Value> = match &init.filter {
        Value::Record(fs) => fs.iter().map(|(_, v)| v).collect(),
        Value::Map(m) if m.keys().all(|k| k.as_text().is_some()) => m.values().collect(),
        other => {
            push(format!("filter must be a record or text-keyed map, got {other}"));
            return;
        }
    };
    let mut texts = vec![];
    for leaf in leaves {
        match leaf {
            Value::Text(t) => texts.push(t.to_string()),
            Value::Set(s) => texts.extend(s.iter().filter_map(|v| v.as_text().map(str::to_string))),
            Value::List(l) => texts.extend(l.iter().filter_map(|v| v.as_text().map(str::to_string))),
            Value::Map(_) | Value::Record(_) | Value::Optional(_) => {
                push(format!("nested filter value {leaf} is not supported"))
            }
            _ => {}
        }
    }
    for t in texts {
        if t == "{param}" {
            continue;
        }
        if let Some(field) = t.strip_prefix("{param.").and_then(|r| r.strip_suffix('}')) {
            let known = matches!(param_ty, Type::Record(fs) if fs.iter().any(|(k, _)| k == field));
            if !known {
                push(format!("parameter of type {param_ty} has no field `{field}`"));
            }
        }
    }
    if init.command.is_some() && init.source != InitSource::ExternalProcess {
        push("a command template needs an external source".into());
    }
}

/// Streams on a cycle of total offset zero, and streams on a cycle of positive
/// total offset. Uses longest paths, so it is cubic in the number of streams.
fn bad_cycles(edges: &[Vec<(usize, i64)>]) -> (Vec<usize>, Vec<usize>) {
    let n = edges.len();
    let mut dist = vec![vec![None::<i64>; n]; n];
    for (y, es) in edges.iter().enumerate() {
        for &(x, k) in es {
            // y at t needs x at t + k: a path y -> x of weight k
            let d = &mut dist[y][x];
            *d = Some(d.map_or(k, |old| old.max(k)));
        }
    }
    let cap = (n as i64 + 1) * 1_000_000;
    for m in 0..n {
        for i in 0..n {
            let Some(a) = dist[i][m] else { continue };
            for j in 0..n {
                if let Some(b) = dist[m][j] {
                    let w = (a + b).clamp(-cap, cap);
                    let d = &mut dist[i][j];
                    if d.is_none_or(|old| w > old) {
                        *d = Some(w);
                    }
                }
            }
        }
    }
    let mut zero = vec![];
    let mut positive = vec![];
    for (i, row) in dist.iter().enumerate() {
        match row[i] {
            Some(0) => zero.push(i),
            Some(w) if w > 0 => positive.push(i),
            _ => {}
        }
    }
    (zero, positive)
}

fn latencies(edges: &[Vec<(usize, i64)>]) -> Vec<u64> {
    let n = edges.len();
    let mut l = vec![0i64; n];
    for _ in 0..=n {
        let mut changed = false;
        for y in 0..n {
            for &(x, k) in &edges[y] {
                let need = k + l[x];
                if need > l[y] {
                    l[y] = need;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    l.into_iter().map(|x| x.max(0) as u64).collect()
}

/// Topological order over same-instant dependencies, ties broken by
/// declaration order. Inputs are omitted.
fn topo_order(edges: &[Vec<(usize, i64)>], n_inputs: usize) -> Vec<usize> {
    let n = edges.len();
    let mut done = vec![false; n];
    let mut order = vec![];
    for s in done.iter_mut().take(n_inputs) {
        *s = true;
    }
    while order.len() < n - n_inputs {
        let next = (n_inputs..n).find(|&y| {
            !done[y] && edges[y].iter().all(|&(x, k)| k != 0 || x == y || done[x])
        });
        match next {
            Some(y) => {
                done[y] = true;
                order.push(y);
            }
            None => break,
        }
    }
    order
}

struct Typer<'a> {
    reg: &'a Registry,
    vars: Vec<Option<Type>>,
    streams: &'a [StreamInfo],
    index: &'a HashMap<String, usize>,
    defs: &'a HashMap<String, ParametricStreamDef>,
    params: Vec<Type>,
    ctx: String,
    diags: Vec<Diagnostic>,
}

impl Typer<'_> {
    fn fresh(&mut self) -> Type {
        self.vars.push(None);
        Type::Var(self.vars.len() as u32 - 1)
    }

    fn resolve(&self, t: &Type) -> Type {
        match t {
            Type::Var(v) => match &self.vars[*v as usize] {
                Some(b) => self.resolve(b),
                None => t.clone(),
            },
            Type::Optional(a) => Type::optional(self.resolve(a)),
            Type::Set(a) => Type::set(self.resolve(a)),
            Type::List(a) => Type::list(self.resolve(a)),
            Type::Map(k, v) => Type::map(self.resolve(k), self.resolve(v)),
            Type::Record(fs) => Type::Record(fs.iter().map(|(k, t)| (k.clone(), self.resolve(t))).collect()),
            other => other.clone(),
        }
    }

    fn occurs(&self, v: u32, t: &Type) -> bool {
        match self.resolve(t) {
            Type::Var(w) => v == w,
            Type::Optional(a) | Type::Set(a) | Type::List(a) => self.occurs(v, &a),
            Type::Map(k, x) => self.occurs(v, &k) || self.occurs(v, &x),
            Type::Record(fs) => fs.iter().any(|(_, t)| self.occurs(v, t)),
            _ => false,
        }
    }

    fn unify(&mut self, a: &Type, b: &Type) -> Result<(), ()> {
        let a = match a {
            Type::Var(v) if self.vars[*v as usize].is_some() => self.resolve(a),
            _ => a.clone(),
        };
        let b = match b {
            Type::Var(v) if self.vars[*v as usize].is_some() => self.resolve(b),
            _ => b.clone(),
        };
        match (&a, &b) {
            (Type::Var(x), Type::Var(y)) if x == y => Ok(()),
            (Type::Var(x), t) | (t, Type::Var(x)) => {
                if self.occurs(*x, t) {
                    return Err(());
                }
                self.vars[*x as usize] = Some(t.clone());
                Ok(())
            }
            (Type::Optional(x), Type::Optional(y))
            | (Type::Set(x), Type::Set(y))
            | (Type::List(x), Type::List(y)) => self.unify(x, y),
            (Type::Map(k1, v1), Type::Map(k2, v2)) => {
                self.unify(k1, k2)?;
                self.unify(v1, v2)
            }
            (Type::Record(f1), Type::Record(f2)) => {
                if f1.len() != f2.len() || f1.iter().zip(f2).any(|((a, _), (b, _))| a != b) {
                    return Err(());
                }
                for ((_, x), (_, y)) in f1.iter().zip(f2) {
                    self.unify(x, y)?;
                }
                Ok(())
            }
            (x, y) if x == y => Ok(()),
            _ => Err(()),
        }
    }

    fn expect(&mut self, found: &Type, expected: &Type, what: &str) -> bool {
        if self.unify(found, expected).is_ok() {
            return true;
        }
        let msg = format!(
            "{what}: expected {}, found {}",
            self.resolve(expected),
            self.resolve(found)
        );
        self.diags.push(Diagnostic::TypeMismatch { stream: self.ctx.clone(), msg });
        false
    }

    fn check_against(&mut self, e: &Expr, ty: &Type, what: &str) -> Option<Node> {
        let (t, node) = self.check(e)?;
        self.expect(&t, ty, what).then_some(node)
    }

    fn instantiate(&mut self, ts: &[Type], map: &mut HashMap<u32, Type>) -> Vec<Type> {
        ts.iter().map(|t| self.rename(t, map)).collect()
    }

    fn rename(&mut self, t: &Type, map: &mut HashMap<u32, Type>) -> Type {
        match t {
            Type::Var(v) => {
                if let Some(x) = map.get(v) {
                    return x.clone();
                }
                let x = self.fresh();
                map.insert(*v, x.clone());
                x
            }
            Type::Optional(a) => Type::optional(self.rename(a, map)),
            Type::Set(a) => Type::set(self.rename(a, map)),
            Type::List(a) => Type::list(self.rename(a, map)),
            Type::Map(k, v) => {
                let k = self.rename(k, map);
                Type::map(k, self.rename(v, map))
            }
            Type::Record(fs) => Type::Record(fs.iter().map(|(k, t)| (k.clone(), self.rename(t, map))).collect()),
            other => other.clone(),
        }
    }

    fn lookup(&mut self, r: &StreamRef) -> Option<usize> {
        match self.index.get(&r.name) {
            Some(&i) => Some(i),
            None => {
                let d = if self.defs.contains_key(&r.name) {
                    Diagnostic::Parametrization {
                        stream: r.name.clone(),
                        msg: format!("parametric stream used in `{}` without a parameter", self.ctx),
                    }
                } else {
                    Diagnostic::UndeclaredStream { stream: r.name.clone(), referenced_in: self.ctx.clone() }
                };
                self.diags.push(d);
                None
            }
        }
    }

    fn check(&mut self, e: &Expr) -> Option<(Type, Node)> {
        match e {
            Expr::Const(v) => {
                let t = v.infer_type(&mut || {
                    self.vars.push(None);
                    Type::Var(self.vars.len() as u32 - 1)
                });
                Some((t, Node::Const(v.clone())))
            }
            Expr::Apply { func, args } => self.check_apply(func, args),
            Expr::Now(r) => {
                let i = self.lookup(r)?;
                Some((self.streams[i].ty.clone(), Node::Read { stream: i, offset: 0, default: None }))
            }
            Expr::Offset { stream, offset, default } => {
                let i = self.lookup(stream);
                let d = self.check_default(default);
                let (i, (dt, dv)) = (i?, d?);
                let ty = self.streams[i].ty.clone();
                if !self.expect(&dt, &ty, &format!("default of `{}`", stream.name)) {
                    return None;
                }
                let default = if *offset == 0 { None } else { Some(dv) };
                Some((ty, Node::Read { stream: i, offset: *offset, default }))
            }
            Expr::Slice { stream, len } => {
                let i = self.lookup(stream)?;
                if *len == 0 {
                    self.diags.push(Diagnostic::InvalidSlice { stream: self.ctx.clone() });
                    return None;
                }
                Some((Type::list(self.streams[i].ty.clone()), Node::Slice { stream: i, len: *len }))
            }
            Expr::RunSpec { spec, inputs } => self.check_nested(spec, inputs),
            Expr::Over(_) | Expr::MOver(_) | Expr::When(_) => {
                unreachable!("sugar and `over` are rewritten before type checking")
            }
            Expr::Param => match self.params.last() {
                Some(t) => Some((t.clone(), Node::Param)),
                None => {
                    self.diags.push(Diagnostic::ParamOutOfScope { stream: self.ctx.clone() });
                    None
                }
            },
            Expr::Filter { set, pred } => {
                let elem = self.fresh();
                let set = self.check_against(set, &Type::set(elem.clone()), "filtered set");
                self.params.push(elem.clone());
                let pred = self.check_against(pred, &Type::Bool, "filter predicate");
                self.params.pop();
                Some((Type::set(elem), Node::Filter { set: Box::new(set?), pred: Box::new(pred?) }))
            }
            Expr::Record(fields) => {
                let mut tys = vec![];
                let mut nodes = vec![];
                let mut ok = true;
                for (k, e) in fields {
                    match self.check(e) {
                        Some((t, n)) => {
                            tys.push((k.clone(), t));
                            nodes.push((Arc::from(k.as_str()), n));
                        }
                        None => ok = false,
                    }
                }
                ok.then(|| (Type::Record(tys), Node::Record(nodes)))
            }
        }
    }

    fn check_default(&mut self, e: &Expr) -> Option<(Type, Value)> {
        let mut bad = false;
        e.walk(&mut |n| {
            if matches!(
                n,
                Expr::Now(_)
                    | Expr::Offset { .. }
                    | Expr::Slice { .. }
                    | Expr::RunSpec { .. }
                    | Expr::Over(_)
                    | Expr::MOver(_)
                    | Expr::When(_)
                    | Expr::Param
                    | Expr::Filter { .. }
            ) {
                bad = true;
            }
        });
        if bad {
            self.diags.push(Diagnostic::IllFormedDefault {
                stream: self.ctx.clone(),
                msg: "defaults must be constant expressions".into(),
            });
            return None;
        }
        let (t, node) = self.check(e)?;
        match const_eval(&node) {
            Ok(v) => Some((t, v)),
            Err(err) => {
                self.diags.push(Diagnostic::IllFormedDefault { stream: self.ctx.clone(), msg: err.to_string() });
                None
            }
        }
    }

    fn check_apply(&mut self, func: &str, args: &[Expr]) -> Option<(Type, Node)> {
        let Some(def) = self.reg.get(func).cloned() else {
            self.diags.push(Diagnostic::UnknownFunction { stream: self.ctx.clone(), func: func.into() });
            for a in args {
                self.check(a);
            }
            return None;
        };
        if args.len() != def.arity() {
            self.diags.push(Diagnostic::TypeMismatch {
                stream: self.ctx.clone(),
                msg: format!("`{func}` takes {} arguments, got {}", def.arity(), args.len()),
            });
            return None;
        }
        if func == "get" {
            return self.check_get(args, def);
        }
        let mut map = HashMap::new();
        let sig = self.instantiate(&def.signature.args, &mut map);
        let result = self.rename(&def.signature.result, &mut map);
        let mut nodes = vec![];
        let mut ok = true;
        for (i, (a, t)) in args.iter().zip(&sig).enumerate() {
            if *t == Type::Func {
                match a {
                    Expr::Const(Value::Text(name)) if self.reg.get(name).is_some() => {
                        nodes.push(Node::Const(Value::Text(name.clone())))
                    }
                    _ => {
                        self.diags.push(Diagnostic::TypeMismatch {
                            stream: self.ctx.clone(),
                            msg: format!("argument {} of `{func}` must name a registered function", i + 1),
                        });
                        ok = false;
                    }
                }
                continue;
            }
            match self.check(a) {
                Some((at, n)) => {
                    if !self.expect(&at, t, &format!("argument {} of `{func}`", i + 1)) {
                        ok = false;
                    }
                    nodes.push(n);
                }
                None => ok = false,
            }
        }
        if !ok {
            return None;
        }
        let node = match func {
            "ite" => {
                let mut it = nodes.into_iter();
                let (c, t, e) = (it.next()?, it.next()?, it.next()?);
                Node::Ite(Box::new(c), Box::new(t), Box::new(e))
            }
            "and" | "or" => {
                let mut it = nodes.into_iter();
                let (a, b) = (Box::new(it.next()?), Box::new(it.next()?));
                if func == "and" {
                    Node::And(a, b)
                } else {
                    Node::Or(a, b)
                }
            }
            _ => Node::Call { func: def, args: nodes },
        };
        Some((result, node))
    }

    fn check_get(&mut self, args: &[Expr], def: crate::registry::FuncDef) -> Option<(Type, Node)> {
        let (rt, rn) = self.check(&args[0])?;
        let Expr::Const(Value::Text(field)) = &args[1] else {
            self.diags.push(Diagnostic::TypeMismatch {
                stream: self.ctx.clone(),
                msg: "field name of `get` must be a text literal".into(),
            });
            return None;
        };
        let found = match self.resolve(&rt) {
            Type::Record(fs) => fs.iter().find(|(k, _)| **k == **field).map(|(_, t)| t.clone()),
            _ => None,
        };
        match found {
            Some(t) => Some((t, Node::Call { func: def, args: vec![rn, Node::Const(Value::Text(field.clone()))] })),
            None => {
                let msg = format!("`get` of field `{field}` on {}", self.resolve(&rt));
                self.diags.push(Diagnostic::TypeMismatch { stream: self.ctx.clone(), msg });
                None
            }
        }
    }

    fn check_nested(&mut self, spec: &Specification, inputs: &NestedInputs) -> Option<(Type, Node)> {
        let nested = match build(spec.clone(), Arc::new(self.reg.clone()), None) {
            Ok(p) => p,
            Err(ds) => {
                self.diags.push(Diagnostic::Nested { spec: spec.name.clone(), diagnostics: ds });
                return None;
            }
        };
        let Some((rv, _)) = nested.returns else {
            self.diags.push(Diagnostic::Nested {
                spec: spec.name.clone(),
                diagnostics: vec![Diagnostic::ReturnClause("nested specifications need one".into())],
            });
            return None;
        };
        let result = nested.streams[rv].ty.clone();
        let inputs = match inputs {
            NestedInputs::Streams(m) => {
                let mut nodes = vec![];
                let mut ok = true;
                for (name, ty) in nested.inputs() {
                    match m.get(&name) {
                        Some(e) => match self.check_against(e, &Type::list(ty), &format!("nested input `{name}`")) {
                            Some(n) => nodes.push(n),
                            None => ok = false,
                        },
                        None => {
                            self.diags.push(Diagnostic::TypeMismatch {
                                stream: self.ctx.clone(),
                                msg: format!("nested input `{name}` of `{}` not bound", spec.name),
                            });
                            ok = false;
                        }
                    }
                }
                for k in m.keys() {
                    if nested.index.get(k).is_none_or(|&i| i >= nested.n_inputs) {
                        self.diags.push(Diagnostic::TypeMismatch {
                            stream: self.ctx.clone(),
                            msg: format!("`{}` has no input `{k}`", spec.name),
                        });
                        ok = false;
                    }
                }
                if !ok {
                    return None;
                }
                NestedNode::Streams(nodes)
            }
            NestedInputs::Fetch { from, to, filter } => {
                let mut bound = |e: &Option<Box<Expr>>, what: &str| -> Result<Option<Box<Node>>, ()> {
                    match e {
                        None => Ok(None),
                        Some(e) => self.check_against(e, &Type::Int, what).map(|n| Some(Box::new(n))).ok_or(()),
                    }
                };
                let from = bound(from, "retrieval start");
                let to = bound(to, "retrieval end");
                let filter = match filter {
                    None => Ok(None),
                    Some(e) => match self.check(e) {
                        Some((t, n)) => match self.resolve(&t) {
                            Type::Record(_) => Ok(Some(Box::new(n))),
                            Type::Map(k, _) if self.unify(&k, &Type::Text).is_ok() => Ok(Some(Box::new(n))),
                            other => {
                                self.diags.push(Diagnostic::TypeMismatch {
                                    stream: self.ctx.clone(),
                                    msg: format!("retrieval filter must be a record or text-keyed map, found {other}"),
                                });
                                Err(())
                            }
                        },
                        None => Err(()),
                    },
                };
                NestedNode::Fetch { from: from.ok()?, to: to.ok()?, filter: filter.ok()? }
            }
        };
        Some((result, Node::Nested { spec: Arc::new(nested), inputs }))
    }
}

/// Evaluates a stream-free node; used for offset defaults.
fn const_eval(node: &Node) -> Result<Value, EvalError> {
    match node {
        Node::Const(v) => Ok(v.clone()),
        Node::Call { func, args } => {
            let vals = args.iter().map(const_eval).collect::<Result<Vec<_>, _>>()?;
            (func.apply)(&Registry::builtin(), &vals)
        }
        Node::Ite(c, t, e) => match const_eval(c)? {
            Value::Bool(true) => const_eval(t),
            _ => const_eval(e),
        },
        Node::And(a, b) => Ok(Value::Bool(const_eval(a)? == Value::Bool(true) && const_eval(b)? == Value::Bool(true))),
        Node::Or(a, b) => Ok(Value::Bool(const_eval(a)? == Value::Bool(true) || const_eval(b)? == Value::Bool(true))),
        Node::Record(fs) => Ok(Value::Record(Arc::new(
            fs.iter().map(|(k, n)| Ok((k.clone(), const_eval(n)?))).collect::<Result<_, EvalError>>()?,
        ))),
        _ => Err(EvalError::type_error("default", "not a constant")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::dsl::*;

    fn alt() -> Specification {
        Specification::new("alt")
            .input("altitude", Type::Float)
            .output("alt_ok", Type::Bool, call("lt", [now("altitude"), lit(100.0)]))
    }

    fn err(spec: Specification) -> ValidationError {
        validate(spec).expect_err("should be rejected")
    }

    #[test]
    fn accepts_simple_spec() {
        let v = validate(alt()).unwrap();
        assert_eq!(v.max_back(), 0);
        assert_eq!(v.max_fwd(), 0);
        assert_eq!(v.outputs(), vec![("alt_ok".to_string(), Type::Bool)]);
        assert_eq!(v.hash().len(), 64);
    }

    #[test]
    fn undeclared_stream() {
        let e = err(Specification::new("x").output("a", Type::Int, now("nope")));
        assert!(e.any(|d| matches!(d, Diagnostic::UndeclaredStream { stream, .. } if stream == "nope")));
    }

    #[test]
    fn zero_offset_cycle_is_named() {
        let e = err(Specification::new("x")
            .output("a", Type::Int, now("b"))
            .output("b", Type::Int, now("a")));
        assert!(e.any(|d| matches!(d, Diagnostic::CyclicDependency(c) if c == &["a", "b"])));
    }

    #[test]
    fn zero_weight_mixed_cycle_is_rejected() {
        let e = err(Specification::new("x")
            .output("a", Type::Int, at("b", 1, 0i64))
            .output("b", Type::Int, at("a", -1, 0i64)));
        assert!(e.any(|d| matches!(d, Diagnostic::CyclicDependency(_))));
    }

    #[test]
    fn positive_cycle_is_unbounded() {
        let e = err(Specification::new("x").output("a", Type::Int, at("a", 1, 0i64)));
        assert!(e.any(|d| matches!(d, Diagnostic::UnboundedFuture(_))));
    }

    #[test]
    fn self_reference_into_past_is_fine() {
        let v = validate(
            Specification::new("count")
                .input("x", Type::Int)
                .output("n", Type::Int, call("add", [prev("n", 0i64), lit(1i64)])),
        )
        .unwrap();
        assert_eq!(v.max_back(), 1);
    }

    #[test]
    fn default_must_be_constant() {
        let e = err(Specification::new("x").input("i", Type::Int).output(
            "a",
            Type::Int,
            Expr::Offset { stream: StreamRef::new("i"), offset: -1, default: Box::new(now("i")) },
        ));
        assert!(e.any(|d| matches!(d, Diagnostic::IllFormedDefault { .. })));
    }

    #[test]
    fn type_mismatch_reported() {
        let e = err(Specification::new("x")
            .input("i", Type::Int)
            .output("a", Type::Bool, call("add", [now("i"), lit(1.5)])));
        assert!(e.any(|d| matches!(d, Diagnostic::TypeMismatch { stream, .. } if stream == "a")));
    }

    #[test]
    fn all_errors_collected() {
        let e = err(Specification::new("x")
            .output("a", Type::Int, now("u1"))
            .output("b", Type::Int, call("nosuch", [])));
        assert_eq!(e.diagnostics.len(), 2, "{e}");
    }

    #[test]
    fn slice_sets_future_window() {
        let inner = Specification::new("inner")
            .input("r", Type::Int)
            .output("done", Type::Bool, lit(true))
            .returns("done", "done");
        let v = validate(
            Specification::new("outer")
                .input("r", Type::Int)
                .output("w", Type::Bool, run_spec(inner, [("r", slice("r", 50))])),
        )
        .unwrap();
        assert_eq!(v.max_fwd(), 49);
        assert_eq!(v.latency("w"), Some(49));
    }

    #[test]
    fn latency_is_transitive() {
        let v = validate(
            Specification::new("x")
                .input("i", Type::Int)
                .output("a", Type::Int, at("i", 2, 0i64))
                .output("b", Type::Int, at("a", 3, 0i64))
                .output("c", Type::Int, at("b", -4, 0i64)),
        )
        .unwrap();
        assert_eq!(v.latency("b"), Some(5));
        assert_eq!(v.latency("c"), Some(1));
        assert_eq!(v.max_fwd(), 5);
        assert_eq!(v.max_back(), 4);
    }

    #[test]
    fn static_instance_expands() {
        let v = validate(
            Specification::new("p")
                .input("altitude", Type::Float)
                .parametric("below", Type::Float, Type::Bool, call("lt", [now("altitude"), param()]))
                .output("ok", Type::Bool, inst_now("below", 100.0)),
        )
        .unwrap();
        assert!(v.stream_type("below<100.0>").is_some() || v.stream_type("below<100>").is_some());
        assert_eq!(v.outputs().len(), 1);
    }

    #[test]
    fn parametric_without_parameter() {
        let e = err(Specification::new("p")
            .input("a", Type::Float)
            .parametric("below", Type::Float, Type::Bool, call("lt", [now("a"), param()]))
            .output("ok", Type::Bool, now("below")));
        assert!(e.any(|d| matches!(d, Diagnostic::Parametrization { .. })));
    }

    #[test]
    fn param_outside_scope() {
        let e = err(Specification::new("p").output("x", Type::Int, param()));
        assert!(e.any(|d| matches!(d, Diagnostic::ParamOutOfScope { .. })));
    }

    #[test]
    fn over_has_map_type() {
        let v = validate(
            Specification::new("p")
                .input("a", Type::Int)
                .parametric("plus", Type::Int, Type::Int, call("add", [now("a"), param()]))
                .output("m", Type::map(Type::Int, Type::Int), over("plus", lit(Value::set([Value::Int(1)])))),
        )
        .unwrap();
        assert_eq!(v.evaluation_order().len(), 2);
    }

    #[test]
    fn instance_may_not_read_future() {
        let e = err(Specification::new("p")
            .input("a", Type::Int)
            .parametric("f", Type::Int, Type::Int, at("a", 1, 0i64))
            .output("m", Type::map(Type::Int, Type::Int), over("f", lit(Value::set([Value::Int(1)])))));
        assert!(e.any(|d| matches!(d, Diagnostic::IllFormedParametric { .. })));
    }

    #[test]
    fn return_condition_must_be_bool() {
        let e = err(Specification::new("r").input("a", Type::Int).output("x", Type::Int, now("a")).returns("x", "x"));
        assert!(e.any(|d| matches!(d, Diagnostic::ReturnClause(_))));
    }

    #[test]
    fn initializer_placeholders_checked() {
        let e = err(Specification::new("p")
            .input("a", Type::Int)
            .parametric("f", Type::Int, Type::Int, now("a"))
            .output(
                "m",
                Type::map(Type::Int, Type::Int),
                with_init(
                    over("f", lit(Value::set([Value::Int(1)]))),
                    Initializer::filtered(Value::record([("a", Value::text("{param.x}"))])),
                ),
            ));
        assert!(e.any(|d| matches!(d, Diagnostic::Initializer { .. })));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = validate(alt()).unwrap();
        let b = validate(alt()).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = validate(alt().output("extra", Type::Bool, lit(true))).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
