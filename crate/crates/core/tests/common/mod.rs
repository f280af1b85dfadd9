//! Shared checks for the integration tests and the acceptance report.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use retrolola_core::builtins::Trace;
use retrolola_core::dynparam::plan;
use retrolola_core::oracle::{run_online, OnlineRun};
use retrolola_core::spec::dsl::*;
use retrolola_core::{
    validate, Event, FrozenMonitor, InMemoryStore, Initializer, LogAttachment, Monitor, Specification, Type,
    ValidatedSpec, Value,
};

/// One instant of a lifecycle scenario: the live parameters, the updating
/// set, and the event's payload `x`.
#[derive(Clone, Debug)]
pub struct Step {
    pub now: BTreeSet<i64>,
    pub up: BTreeSet<i64>,
    pub x: i64,
}

pub fn steps(max_len: usize) -> impl Strategy<Value = Vec<Step>> {
    let set = || proptest::collection::btree_set(0i64..6, 0..5);
    proptest::collection::vec((set(), set(), 0i64..6), 0..max_len)
        .prop_map(|v| v.into_iter().map(|(now, up, x)| Step { now, up, x }).collect())
}

/// Counts, per live parameter, the events its instance received. With
/// `retro`, a new instance first replays the past events whose `x` equals
/// its parameter.
pub fn counting_spec(retro: bool) -> Arc<ValidatedSpec> {
    let mut o = updating(over("count", now("ps")), now("up"));
    if retro {
        o = with_init(o, Initializer::filtered(Value::record([("x", Value::text("{param}"))])));
    }
    let spec = Specification::new(if retro { "count-retro" } else { "count" })
        .input("ps", Type::set(Type::Int))
        .input("up", Type::set(Type::Int))
        .input("x", Type::Int)
        .parametric("count", Type::Int, Type::Int, call("add", [prev("count", 0i64), lit(1i64)]))
        .output("counts", Type::map(Type::Int, Type::Int), o);
    Arc::new(validate(spec).unwrap())
}

fn ints(s: &BTreeSet<i64>) -> Value {
    Value::set(s.iter().map(|i| Value::Int(*i)))
}

pub fn events(steps: &[Step]) -> Vec<Event> {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Event::new(i as u64)
                .with("ps", ints(&s.now))
                .with("up", ints(&s.up))
                .with("x", Value::Int(s.x))
        })
        .collect()
}

/// Direct model of the lifecycle, written against the definitions rather
/// than the engine: removed instances vanish, installed ones start from the
/// replayed count (or nothing), stepped ones count one more.
pub fn model(steps: &[Step], retro: bool) -> Vec<BTreeMap<i64, i64>> {
    let mut live: BTreeMap<i64, Option<i64>> = BTreeMap::new();
    let mut out = vec![];
    for (t, s) in steps.iter().enumerate() {
        live.retain(|p, _| s.now.contains(p));
        for p in &s.now {
            live.entry(*p).or_insert_with(|| {
                let past = steps[..t].iter().filter(|e| e.x == *p).count() as i64;
                (retro && past > 0).then_some(past)
            });
            if s.up.contains(p) {
                let c = live.get_mut(p).unwrap();
                *c = Some(c.unwrap_or(0) + 1);
            }
        }
        out.push(live.iter().filter_map(|(p, c)| c.map(|c| (*p, c))).collect());
    }
    out
}

fn as_counts(v: &Value) -> BTreeMap<i64, i64> {
    v.as_map()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.as_int().unwrap(), v.as_int().unwrap()))
        .collect()
}

/// Checks the partition and key-set relations of one scenario against the
/// engine. Returns a description of the first violation.
pub fn check_lifecycle(steps: &[Step], retro: bool) -> Result<(), String> {
    let spec = counting_spec(retro);
    let run = run_online(Monitor::new(spec), events(steps)).map_err(|e| e.to_string())?;
    let got: Vec<BTreeMap<i64, i64>> = run.outputs["counts"]
        .iter()
        .map(|v| as_counts(v.as_ref().unwrap()))
        .collect();
    let want = model(steps, retro);
    if got != want {
        return Err(format!("engine {got:?} != model {want:?}"));
    }
    let mut prev = BTreeSet::new();
    for (t, s) in steps.iter().enumerate() {
        let v = |s: &BTreeSet<i64>| s.iter().map(|i| Value::Int(*i)).collect::<BTreeSet<_>>();
        let (pv, nv, uv) = (v(&prev), v(&s.now), v(&s.up));
        let l = plan(&pv, &nv, &uv);
        let union: BTreeSet<_> = l.continued.union(&l.installed).cloned().collect();
        if union != nv || !l.continued.is_disjoint(&l.installed) {
            return Err(format!("instant {t}: continued and installed do not partition now"));
        }
        let gone: BTreeSet<_> = l.removed.union(&l.continued).cloned().collect();
        if gone != pv || !l.removed.is_disjoint(&l.continued) {
            return Err(format!("instant {t}: removed and continued do not partition prev"));
        }
        if !l.stepped.is_subset(&nv) {
            return Err(format!("instant {t}: stepped outside now"));
        }
        let keys: BTreeSet<i64> = got[t].keys().copied().collect();
        if !keys.is_subset(&s.now) {
            return Err(format!("instant {t}: keys {keys:?} outside now {:?}", s.now));
        }
        if !s.now.intersection(&s.up).all(|p| keys.contains(p)) {
            return Err(format!("instant {t}: an updated parameter has no key"));
        }
        for p in s.now.difference(&prev) {
            let replayed = retro && steps[..t].iter().any(|e| e.x == *p);
            if !s.up.contains(p) && !replayed && keys.contains(p) {
                return Err(format!("instant {t}: fresh, empty, not updated {p} has a key"));
            }
        }
        prev = s.now.clone();
    }
    Ok(())
}

/// Runs the whole trace, and again with a freeze/serialize/thaw at `split`;
/// the two must report exactly the same.
pub fn check_freeze_thaw(spec: &Arc<ValidatedSpec>, trace: &Trace, split: usize) -> Result<(), String> {
    let whole = run_online(trace.monitor(spec.clone()), trace.events.clone()).map_err(|e| e.to_string())?;
    let split = split.min(trace.events.len());
    let mut first = trace.monitor(spec.clone());
    let mut resumed = OnlineRun { outputs: BTreeMap::new(), verdict: None, metrics: Default::default() };
    for (name, _) in spec.outputs() {
        resumed.outputs.insert(name, vec![]);
    }
    let record = |run: &mut OnlineRun, out: retrolola_core::StepOutput| {
        for o in out.values {
            run.outputs.get_mut(&o.stream).unwrap().push(o.value);
        }
        if out.verdict.is_some() {
            run.verdict = out.verdict;
        }
    };
    for e in &trace.events[..split] {
        let out = first.step(e.clone()).map_err(|e| e.to_string())?;
        record(&mut resumed, out);
    }
    if resumed.verdict.is_some() {
        return (resumed.outputs.iter().all(|(k, v)| whole.outputs[k].starts_with(v)) && resumed.verdict == whole.verdict)
            .then_some(())
            .ok_or_else(|| "early verdict differs".into());
    }
    let bytes = first.freeze().to_bytes();
    drop(first);
    let frozen = FrozenMonitor::from_bytes(&bytes).map_err(|e| e.to_string())?;
    let log = match &trace.log {
        Some(l) => LogAttachment::External(Box::new(InMemoryStore::from_events(l.clone()).unwrap())),
        None if spec.uses_log() => {
            LogAttachment::Own(Box::new(InMemoryStore::from_events(trace.events[..split].to_vec()).unwrap()))
        }
        None => LogAttachment::None,
    };
    let mut second = Monitor::thaw(spec.clone(), frozen, log).map_err(|e| e.to_string())?;
    for e in &trace.events[split..] {
        let out = second.step(e.clone()).map_err(|e| e.to_string())?;
        let done = out.verdict.is_some();
        record(&mut resumed, out);
        if done {
            break;
        }
    }
    if resumed.verdict.is_none() {
        let out = second.finish().map_err(|e| e.to_string())?;
        record(&mut resumed, out);
    }
    if resumed.outputs != whole.outputs || resumed.verdict != whole.verdict {
        let stream = resumed
            .outputs
            .iter()
            .find(|(k, v)| whole.outputs.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .unwrap_or_else(|| "<verdict>".into());
        return Err(format!("resumed run differs on `{stream}` (split {split})"));
    }
    Ok(())
}

pub fn handshake_trace(packets: &[(&str, &str, &str)]) -> Vec<Event> {
    packets
        .iter()
        .enumerate()
        .map(|(i, (s, d, f))| {
            Event::new(i as u64)
                .with("src", Value::text(s))
                .with("dst", Value::text(d))
                .with("flag", Value::text(f))
        })
        .collect()
}
