//! Incremental evaluation.
//!
//! Values are computed on demand: once an event arrives, every stream whose
//! latency allows it is advanced in instant order, pulling the values it reads
//! from the stream windows (computing them first if needed). Windows are then
//! trimmed to what can still be read.

use std::sync::Arc;

use super::eval::{eval, Access, Slot};
use super::state::MonitorState;
use super::{run_nested, OutputValue, StepOutput, Verdict};
use crate::error::EvalError;
use crate::event::Event;
use crate::log::{FetchRequest, Filter, PastRetriever};
use crate::registry::Registry;
use crate::spec::program::StreamKind;
use crate::spec::ValidatedSpec;
use crate::value::Value;

pub(crate) struct Core<'a> {
    pub spec: &'a ValidatedSpec,
    pub st: &'a mut MonitorState,
    pub log: Option<&'a mut dyn PastRetriever>,
    /// The log is the monitor's own trace; retrieval never looks past the
    /// instant being evaluated.
    pub own_log: bool,
    pub adapter: Option<&'a mut dyn PastRetriever>,
}

impl<'a> Core<'a> {
    /// Records the input values of the next instant.
    pub fn ingest(&mut self, values: Vec<Value>) {
        let t = self.st.next;
        for (i, v) in values.into_iter().enumerate() {
            self.st.windows[i].set(t, Ok(v));
        }
        self.st.next += 1;
        self.st.metrics.events += 1;
    }

    fn ready(&self, s: usize, u: u64) -> bool {
        u < self.st.next && (self.st.finished || u + self.spec.latency[s] < self.st.next)
    }

    /// Computes everything newly computable and returns the visible outputs.
    pub fn progress(&mut self) -> StepOutput {
        let mut out = vec![];
        for s in self.spec.n_inputs..self.spec.n_streams() {
            while self.ready(s, self.st.reported[s]) {
                let u = self.st.reported[s];
                let v = self.value(s, u);
                if !self.spec.streams[s].hidden {
                    out.push((u, s, v));
                }
                self.st.reported[s] += 1;
            }
        }
        let verdict = self.scan_return();
        self.evict();
        out.sort_by_key(|&(u, s, _)| (u, s));
        StepOutput {
            values: out
                .into_iter()
                .map(|(u, s, v)| OutputValue { stream: self.spec.streams[s].name.clone(), instant: u, value: v })
                .collect(),
            verdict,
        }
    }

    fn scan_return(&mut self) -> Option<Verdict> {
        let (v, w) = self.spec.returns?;
        if self.st.ret.verdict.is_some() {
            return None;
        }
        while self.ready(v, self.st.ret.scan) && self.ready(w, self.st.ret.scan) {
            let u = self.st.ret.scan;
            if self.value(w, u) == Ok(Value::Bool(true)) {
                let verdict = Verdict::Returned { instant: u, value: self.value(v, u) };
                self.st.ret.verdict = Some(verdict.clone());
                return Some(verdict);
            }
            self.st.ret.scan += 1;
        }
        if self.st.finished {
            let verdict = match self.st.next {
                0 => Verdict::Empty,
                n => Verdict::Finished { value: self.value(v, n - 1) },
            };
            self.st.ret.verdict = Some(verdict.clone());
            return Some(verdict);
        }
        None
    }

    fn evict(&mut self) {
        let mut low = self.st.next;
        for s in self.spec.n_inputs..self.spec.n_streams() {
            low = low.min(self.st.reported[s]);
        }
        if self.spec.returns.is_some() && self.st.ret.verdict.is_none() {
            low = low.min(self.st.ret.scan);
        }
        let keep = low.saturating_sub(self.spec.max_back);
        for w in &mut self.st.windows {
            w.evict_below(keep);
        }
        debug_assert!(
            self.st.windows.iter().all(|w| w.len() as u64 <= self.spec.max_back + self.spec.max_fwd + 2),
            "stream window exceeds its bound"
        );
    }

    /// Value of stream `s` at instant `u < next`, computing it if needed.
    pub fn value(&mut self, s: usize, u: u64) -> Slot {
        if let Some(v) = self.st.windows[s].get(u) {
            return v.clone();
        }
        if u < self.st.windows[s].base || s < self.spec.n_inputs {
            return Err(EvalError::Unavailable { stream: self.spec.streams[s].name.clone(), instant: u as i64 });
        }
        let spec = self.spec;
        let v = match &spec.kinds[s] {
            StreamKind::Output(node) => {
                let mut params: Vec<Value> = self.st.param.iter().cloned().collect();
                eval(node, u, self, &mut params)
            }
            StreamKind::Over(prog) => {
                self.advance_over(s, prog, u);
                return self.st.windows[s].get(u).cloned().unwrap_or_else(|| {
                    Err(EvalError::Unavailable { stream: spec.streams[s].name.clone(), instant: u as i64 })
                });
            }
            StreamKind::Input => unreachable!(),
        };
        self.st.windows[s].set(u, v.clone());
        v
    }

    pub fn input_values(&self, u: u64) -> Vec<Value> {
        (0..self.spec.n_inputs)
            .map(|i| match self.st.windows[i].get(u) {
                Some(Ok(v)) => v.clone(),
                _ => Value::Unit,
            })
            .collect()
    }

    /// Retrieval on behalf of instance installation.
    pub fn retrieve(&mut self, req: &FetchRequest, external: bool) -> Result<Vec<Event>, EvalError> {
        let src = if external { self.adapter.as_deref_mut() } else { self.log.as_deref_mut() };
        let src = src.ok_or_else(|| {
            EvalError::Retrieval(if external { "no adapter attached" } else { "no log attached" }.into())
        })?;
        let events = src.retrieve(req).map_err(|e| EvalError::Retrieval(e.to_string()))?;
        req.verify(&events).map_err(|e| EvalError::Retrieval(e.to_string()))?;
        Ok(events)
    }
}

impl Access for Core<'_> {
    fn registry(&self) -> &Registry {
        &self.spec.registry
    }

    fn read(&mut self, stream: usize, at: i64, default: Option<&Value>) -> Slot {
        let missing = |spec: &ValidatedSpec| EvalError::Unavailable {
            stream: spec.streams[stream].name.clone(),
            instant: at,
        };
        if at < 0 || (at as u64 >= self.st.next && self.st.finished) {
            return default.cloned().ok_or_else(|| missing(self.spec));
        }
        if at as u64 >= self.st.next {
            return Err(missing(self.spec));
        }
        self.value(stream, at as u64)
    }

    fn slice(&mut self, stream: usize, from: u64, len: usize) -> Slot {
        let end = from + len as u64;
        if end > self.st.next && !self.st.finished {
            return Err(EvalError::Unavailable {
                stream: self.spec.streams[stream].name.clone(),
                instant: end as i64 - 1,
            });
        }
        let mut items = Vec::with_capacity(len);
        for j in from..end.min(self.st.next) {
            items.push(self.value(stream, j)?);
        }
        Ok(Value::list(items))
    }

    fn fetch(&mut self, from: u64, to: Option<u64>, u: u64, filter: &Filter) -> Result<Vec<Event>, EvalError> {
        let to = if self.own_log { Some(to.unwrap_or(u + 1).min(u + 1)) } else { to };
        if to.is_some_and(|t| from >= t) {
            return Ok(vec![]);
        }
        let req = FetchRequest { from, to, filter: filter.clone(), param: None, command: None };
        self.retrieve(&req, false)
    }

    fn nested(&mut self, spec: &Arc<ValidatedSpec>, trace: Vec<Event>) -> Slot {
        self.st.metrics.nested_runs += 1;
        match run_nested(spec, trace) {
            Ok((verdict, m)) => {
                self.st.metrics.nested_events += m.events + m.nested_events;
                match verdict {
                    Verdict::Returned { value, .. } | Verdict::Finished { value } => value,
                    Verdict::Empty => Err(EvalError::Nested(format!("`{}` ran on an empty trace", spec.name()))),
                }
            }
            Err(e) => Err(EvalError::Nested(e.to_string())),
        }
    }
}
