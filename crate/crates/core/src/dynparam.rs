//! Dynamic parametrization: the lifecycle of `over` instances.
//!
//! At every instant the parameter expression yields the set of live
//! parameters. Compared with the previous instant, parameters that
//! disappeared are removed, new ones are installed (optionally replaying the
//! matching part of the past from the log), and every live parameter in the
//! `updating` set receives the current event. The stream's value is the map
//! from each parameter to its instance's latest value; an instance that has
//! never received an event has no entry.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::engine::eval::{eval, Slot};
use crate::engine::state::{Instance, MonitorState, OverState};
use crate::error::EvalError;
use crate::event::Event;
use crate::log::{FetchRequest, Filter};
use crate::spec::ast::{InitSource, Initializer};
use crate::spec::program::OverProgram;
use crate::spec::ValidatedSpec;
use crate::value::Value;

/// How one instant changes the set of instances.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lifecycle {
    pub removed: BTreeSet<Value>,
    pub continued: BTreeSet<Value>,
    pub installed: BTreeSet<Value>,
    /// Live parameters receiving the current event.
    pub stepped: BTreeSet<Value>,
}

/// `removed = prev \ now`, `continued = prev ∩ now`, `installed = now \ prev`,
/// `stepped = now ∩ updating`.
pub fn plan(prev: &BTreeSet<Value>, now: &BTreeSet<Value>, updating: &BTreeSet<Value>) -> Lifecycle {
    Lifecycle {
        removed: prev.difference(now).cloned().collect(),
        continued: prev.intersection(now).cloned().collect(),
        installed: now.difference(prev).cloned().collect(),
        stepped: now.intersection(updating).cloned().collect(),
    }
}

/// The retrieval an initializer performs when `param` is installed at
/// instant `t`: the whole past `[0, t)` restricted by the instantiated filter.
pub fn subtrace_request(init: &Initializer, param: &Value, t: u64) -> Result<FetchRequest, EvalError> {
    let filter = Filter::from_value(&Filter::instantiate(&init.filter, param)).map_err(|e| EvalError::Install {
        param: param.to_string(),
        msg: e.to_string(),
    })?;
    Ok(FetchRequest {
        from: 0,
        to: Some(t),
        filter,
        param: Some(param.clone()),
        command: init.command.clone(),
    })
}

fn as_set(v: Value, what: &str) -> Result<BTreeSet<Value>, EvalError> {
    match v {
        Value::Set(s) => Ok(Arc::unwrap_or_clone(s)),
        other => Err(EvalError::type_error(what, format!("expected set, got {}", other.kind()))),
    }
}

/// Feeds one event to an instance and records its new value.
pub(crate) fn step_instance(spec: &ValidatedSpec, inst: &mut Instance, values: Vec<Value>) {
    let mut core = crate::engine::online_core(spec, &mut inst.state);
    core.ingest(values);
    let out = core.progress();
    debug_assert!(out.values.len() <= 1, "instances have a single latency-free output");
    if let Some(v) = out.values.into_iter().last() {
        inst.last = Some(v.value);
    }
}

impl crate::engine::online::Core<'_> {
    /// Computes the `over` stream `s` for every instant up to `u`.
    pub(crate) fn advance_over(&mut self, s: usize, prog: &OverProgram, u: u64) {
        let mut state = self.st.overs.remove(&s).unwrap_or_default();
        while state.next <= u {
            let t = state.next;
            let v = self.over_instant(prog, &mut state, t);
            self.st.windows[s].set(t, v);
            state.next += 1;
        }
        self.st.overs.insert(s, state);
    }

    fn over_instant(&mut self, prog: &OverProgram, state: &mut OverState, t: u64) -> Slot {
        let mut params: Vec<Value> = self.st.param.iter().cloned().collect();
        let now = as_set(eval(&prog.params, t, self, &mut params)?, "over")?;
        let updating = match &prog.updating {
            Some(n) => as_set(eval(n, t, self, &mut params)?, "updating")?,
            None => now.clone(),
        };
        let lc = plan(&state.live, &now, &updating);
        for p in &lc.removed {
            state.instances.remove(p);
            self.st.metrics.removals += 1;
        }
        let spec = &prog.instance;
        for p in &lc.installed {
            let mut inst = Instance {
                state: MonitorState::new(spec, Some(p.clone())),
                last: None,
                failed: None,
            };
            if let Some(init) = &prog.init {
                match self.past_of(init, p, t, spec) {
                    Ok(past) => {
                        self.st.metrics.replayed_events += past.len() as u64;
                        for values in past {
                            step_instance(spec, &mut inst, values);
                        }
                    }
                    Err(e) => inst.failed = Some(e),
                }
            }
            self.st.metrics.installs += 1;
            state.instances.insert(p.clone(), inst);
        }
        if !lc.stepped.is_empty() {
            let values = self.input_values(t);
            for p in &lc.stepped {
                let inst = state.instances.get_mut(p).expect("stepped parameters are live");
                if inst.failed.is_none() {
                    step_instance(spec, inst, values.clone());
                    self.st.metrics.instance_steps += 1;
                }
            }
        }
        state.live = now;
        let m = &mut self.st.metrics;
        m.live_instances = state.instances.len() as u64;
        m.max_live_instances = m.max_live_instances.max(m.live_instances);
        collect(&state.instances)
    }

    fn past_of(
        &mut self,
        init: &Initializer,
        p: &Value,
        t: u64,
        spec: &ValidatedSpec,
    ) -> Result<Vec<Vec<Value>>, EvalError> {
        let req = subtrace_request(init, p, t)?;
        let install = |e: EvalError| EvalError::Install { param: p.to_string(), msg: e.to_string() };
        let events = self
            .retrieve(&req, init.source == InitSource::ExternalProcess)
            .map_err(install)?;
        let inputs = spec.inputs();
        events
            .into_iter()
            .map(|e: Event| {
                let e = e
                    .typed(&inputs, true)
                    .map_err(|err| install(EvalError::Retrieval(err.to_string())))?;
                Ok(inputs.iter().map(|(n, _)| e.bindings[n].clone()).collect())
            })
            .collect()
    }
}

/// The `over` value from the instances' latest values.
pub(crate) fn collect(instances: &BTreeMap<Value, Instance>) -> Slot {
    let mut out = BTreeMap::new();
    for (p, inst) in instances {
        if let Some(e) = &inst.failed {
            return Err(e.clone());
        }
        match &inst.last {
            Some(Ok(v)) => {
                out.insert(p.clone(), v.clone());
            }
            Some(Err(e)) => {
                return Err(EvalError::Instance { param: p.to_string(), msg: e.to_string() });
            }
            None => {}
        }
    }
    Ok(Value::Map(Arc::new(out)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[i64]) -> BTreeSet<Value> {
        xs.iter().map(|&x| Value::Int(x)).collect()
    }

    #[test]
    fn plan_partitions() {
        let lc = plan(&set(&[1, 2, 3]), &set(&[2, 3, 4]), &set(&[3, 4, 9]));
        assert_eq!(lc.removed, set(&[1]));
        assert_eq!(lc.continued, set(&[2, 3]));
        assert_eq!(lc.installed, set(&[4]));
        assert_eq!(lc.stepped, set(&[3, 4]));
    }

    #[test]
    fn request_substitutes_parameter() {
        let init = Initializer::filtered(Value::record([("fid", Value::text("{param}"))]));
        let req = subtrace_request(&init, &Value::Int(7), 12).unwrap();
        assert_eq!((req.from, req.to), (0, Some(12)));
        assert!(req.filter.matches(&Event::new(3).with("fid", 7i64)));
        assert!(!req.filter.matches(&Event::new(3).with("fid", 8i64)));
    }
}
