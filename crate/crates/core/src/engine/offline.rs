//! Reference evaluator over a complete trace.
//!
//! Every stream value is computed directly from the definitions with the whole
//! trace in memory: no windows, no eviction, no incremental instance state.
//! An `over` stream at instant `t` re-runs each live instance from scratch on
//! its local trace (replayed past plus the events it was updated with). This
//! is quadratic and only meant for checking the online engine on short traces.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::eval::{eval, Access, Slot};
use super::{MonitorError, Verdict};
use crate::error::EvalError;
use crate::event::Event;
use crate::log::Filter;
use crate::registry::Registry;
use crate::spec::ast::Initializer;
use crate::spec::program::{OverProgram, StreamKind};
use crate::spec::ValidatedSpec;
use crate::value::Value;

/// Every declared output at every instant, and the verdict if the
/// specification has a return clause.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineRun {
    pub outputs: BTreeMap<String, Vec<Slot>>,
    pub verdict: Option<Verdict>,
}

pub fn run_offline(spec: &Arc<ValidatedSpec>, trace: &[Event]) -> Result<OfflineRun, MonitorError> {
    run_offline_with_log(spec, trace, None)
}

/// As [`run_offline`], retrieving from `log` instead of the trace itself.
pub fn run_offline_with_log(
    spec: &Arc<ValidatedSpec>,
    trace: &[Event],
    log: Option<&[Event]>,
) -> Result<OfflineRun, MonitorError> {
    let inputs = spec.inputs();
    let typed = trace
        .iter()
        .map(|e| e.clone().typed(&inputs, false))
        .collect::<Result<Vec<_>, _>>()?;
    let mut off = Offline::new(spec, typed, None, log);
    let len = off.len;
    for u in 0..len {
        for s in spec.n_inputs..spec.n_streams() {
            let _ = off.value(s, u);
        }
    }
    let mut outputs = BTreeMap::new();
    for (s, info) in spec.streams.iter().enumerate().skip(spec.n_inputs) {
        if !info.hidden {
            outputs.insert(info.name.clone(), (0..len).map(|u| off.value(s, u)).collect());
        }
    }
    let verdict = spec.returns.map(|(v, w)| off.verdict(v, w));
    Ok(OfflineRun { outputs, verdict })
}

struct Offline<'a> {
    spec: &'a ValidatedSpec,
    trace: Vec<Event>,
    len: u64,
    memo: Vec<Vec<Option<Slot>>>,
    param: Option<Value>,
    log: Option<&'a [Event]>,
}

impl<'a> Offline<'a> {
    fn new(spec: &'a ValidatedSpec, trace: Vec<Event>, param: Option<Value>, log: Option<&'a [Event]>) -> Self {
        let len = trace.len() as u64;
        Offline {
            spec,
            memo: vec![vec![None; trace.len()]; spec.n_streams()],
            trace,
            len,
            param,
            log,
        }
    }

    fn value(&mut self, s: usize, u: u64) -> Slot {
        if let Some(v) = &self.memo[s][u as usize] {
            return v.clone();
        }
        let spec = self.spec;
        let v = match &spec.kinds[s] {
            StreamKind::Input => Ok(self.trace[u as usize].bindings[&spec.streams[s].name].clone()),
            StreamKind::Output(node) => {
                let mut params: Vec<Value> = self.param.iter().cloned().collect();
                eval(node, u, self, &mut params)
            }
            StreamKind::Over(prog) => {
                self.over_column(s, prog);
                return self.memo[s][u as usize].clone().expect("column filled");
            }
        };
        self.memo[s][u as usize] = Some(v.clone());
        v
    }

    fn verdict(&mut self, v: usize, w: usize) -> Verdict {
        for u in 0..self.len {
            if self.value(w, u) == Ok(Value::Bool(true)) {
                return Verdict::Returned { instant: u, value: self.value(v, u) };
            }
        }
        match self.len {
            0 => Verdict::Empty,
            n => Verdict::Finished { value: self.value(v, n - 1) },
        }
    }

    /// Fills the whole column of an `over` stream.
    fn over_column(&mut self, s: usize, prog: &OverProgram) {
        struct Track {
            local: Vec<Event>,
            failed: Option<EvalError>,
        }
        let mut live: BTreeMap<Value, Track> = BTreeMap::new();
        for t in 0..self.len {
            let v = (|| -> Slot {
                let mut params: Vec<Value> = self.param.iter().cloned().collect();
                let now = eval(&prog.params, t, self, &mut params)?;
                let now = now.as_set().cloned().ok_or_else(|| EvalError::type_error("over", "expected set"))?;
                let updating = match &prog.updating {
                    Some(n) => {
                        let u = eval(n, t, self, &mut params)?;
                        u.as_set().cloned().ok_or_else(|| EvalError::type_error("updating", "expected set"))?
                    }
                    None => now.clone(),
                };
                live.retain(|p, _| now.contains(p));
                for p in &now {
                    if !live.contains_key(p) {
                        let track = match &prog.init {
                            None => Track { local: vec![], failed: None },
                            Some(init) => match self.past(init, p, t) {
                                Ok(local) => Track { local, failed: None },
                                Err(e) => Track { local: vec![], failed: Some(e) },
                            },
                        };
                        live.insert(p.clone(), track);
                    }
                    if updating.contains(p) {
                        let e = self.trace[t as usize].clone();
                        live.get_mut(p).unwrap().local.push(e);
                    }
                }
                let mut out = BTreeMap::new();
                for (p, track) in &live {
                    if let Some(e) = &track.failed {
                        return Err(e.clone());
                    }
                    if track.local.is_empty() {
                        continue;
                    }
                    match run_instance(&prog.instance, p, &track.local) {
                        Ok(v) => {
                            out.insert(p.clone(), v);
                        }
                        Err(e) => return Err(EvalError::Instance { param: p.to_string(), msg: e.to_string() }),
                    }
                }
                Ok(Value::Map(Arc::new(out)))
            })();
            self.memo[s][t as usize] = Some(v);
        }
    }

    /// Events of `[0, t)` matching the initializer's filter for `p`, taken
    /// straight from the trace (or the external log).
    fn past(&self, init: &Initializer, p: &Value, t: u64) -> Result<Vec<Event>, EvalError> {
        let filter = Filter::from_value(&Filter::instantiate(&init.filter, p))
            .map_err(|e| EvalError::Install { param: p.to_string(), msg: e.to_string() })?;
        let source: &[Event] = match self.log {
            Some(l) => l,
            None => &self.trace,
        };
        let end = (t as usize).min(source.len());
        let inputs = self.spec.inputs();
        source[..end]
            .iter()
            .filter(|e| filter.matches(e))
            .map(|e| {
                e.clone().typed(&inputs, true).map_err(|err| EvalError::Install {
                    param: p.to_string(),
                    msg: err.to_string(),
                })
            })
            .collect()
    }
}

/// Last value of a single-output instance run on `local`.
fn run_instance(spec: &ValidatedSpec, p: &Value, local: &[Event]) -> Slot {
    let mut off = Offline::new(spec, local.to_vec(), Some(p.clone()), None);
    let out = spec.n_inputs;
    off.value(out, local.len() as u64 - 1)
}

impl Access for Offline<'_> {
    fn registry(&self) -> &Registry {
        &self.spec.registry
    }

    fn read(&mut self, stream: usize, at: i64, default: Option<&Value>) -> Slot {
        if at < 0 || at as u64 >= self.len {
            return default.cloned().ok_or_else(|| EvalError::Unavailable {
                stream: self.spec.streams[stream].name.clone(),
                instant: at,
            });
        }
        self.value(stream, at as u64)
    }

    fn slice(&mut self, stream: usize, from: u64, len: usize) -> Slot {
        let end = (from + len as u64).min(self.len);
        let mut items = vec![];
        for j in from..end {
            items.push(self.value(stream, j)?);
        }
        Ok(Value::list(items))
    }

    fn fetch(&mut self, from: u64, to: Option<u64>, u: u64, filter: &Filter) -> Result<Vec<Event>, EvalError> {
        let (source, to): (&[Event], u64) = match self.log {
            Some(l) => (l, to.unwrap_or(l.len() as u64)),
            None => (&self.trace, to.unwrap_or(u + 1).min(u + 1)),
        };
        let to = (to as usize).min(source.len());
        let from = (from as usize).min(to);
        Ok(source[from..to].iter().filter(|e| filter.matches(e)).cloned().collect())
    }

    fn nested(&mut self, spec: &Arc<ValidatedSpec>, trace: Vec<Event>) -> Slot {
        let run = run_offline(spec, &trace).map_err(|e| EvalError::Nested(e.to_string()))?;
        match run.verdict {
            Some(Verdict::Returned { value, .. }) | Some(Verdict::Finished { value }) => value,
            _ => Err(EvalError::Nested(format!("`{}` ran on an empty trace", spec.name()))),
        }
    }
}
