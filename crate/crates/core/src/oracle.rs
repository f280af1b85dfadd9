//! Cross-checks the online engine against the offline evaluator.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::builtins::Trace;
use crate::engine::{run_offline_with_log, Metrics, Monitor, MonitorError, OfflineRun, Slot, StepOutput, Verdict};
use crate::event::Event;
use crate::spec::ValidatedSpec;

/// Everything a monitor reported over a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineRun {
    /// Per visible output, its values in instant order.
    pub outputs: BTreeMap<String, Vec<Slot>>,
    pub verdict: Option<Verdict>,
    pub metrics: Metrics,
}

impl OnlineRun {
    fn absorb(&mut self, out: StepOutput) -> Result<(), Divergence> {
        for o in out.values {
            let column = self.outputs.entry(o.stream.clone()).or_default();
            if o.instant != column.len() as u64 {
                return Err(Divergence {
                    stream: o.stream,
                    instant: Some(o.instant),
                    online: format!("reported out of order, expected instant {}", column.len()),
                    offline: String::new(),
                });
            }
            column.push(o.value);
        }
        if out.verdict.is_some() {
            self.verdict = out.verdict;
        }
        Ok(())
    }
}

/// The first point where the two evaluations disagree. `instant` is `None`
/// for a verdict or a missing stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub stream: String,
    pub instant: Option<u64>,
    pub online: String,
    pub offline: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.instant {
            Some(u) => write!(f, "`{}` at instant {u}: online {} / offline {}", self.stream, self.online, self.offline),
            None => write!(f, "`{}`: online {} / offline {}", self.stream, self.online, self.offline),
        }
    }
}

#[derive(Debug)]
pub enum OracleError {
    Monitor(MonitorError),
    Divergence(Divergence),
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::Monitor(e) => write!(f, "{e}"),
            OracleError::Divergence(d) => write!(f, "divergence: {d}"),
        }
    }
}

impl std::error::Error for OracleError {}

impl From<MonitorError> for OracleError {
    fn from(e: MonitorError) -> Self {
        OracleError::Monitor(e)
    }
}

/// Feeds `events` one by one, then finishes. Stops early if a verdict is
/// returned.
pub fn run_online(mut monitor: Monitor, events: impl IntoIterator<Item = Event>) -> Result<OnlineRun, OracleError> {
    let mut run = OnlineRun { outputs: BTreeMap::new(), verdict: None, metrics: Metrics::default() };
    for name in monitor.spec().outputs() {
        run.outputs.insert(name.0, vec![]);
    }
    for e in events {
        let out = monitor.step(e)?;
        run.absorb(out).map_err(OracleError::Divergence)?;
        if run.verdict.is_some() {
            run.metrics = *monitor.metrics();
            return Ok(run);
        }
    }
    run.absorb(monitor.finish()?).map_err(OracleError::Divergence)?;
    run.metrics = *monitor.metrics();
    Ok(run)
}

fn show(v: Option<&Slot>) -> String {
    match v {
        None => "nothing".into(),
        Some(Ok(v)) => v.to_string(),
        Some(Err(e)) => format!("error ({e})"),
    }
}

/// First difference between an online and an offline run. After an early
/// verdict the online columns are prefixes; otherwise they must be complete.
pub fn compare(online: &OnlineRun, offline: &OfflineRun) -> Option<Divergence> {
    let early = matches!(online.verdict, Some(Verdict::Returned { .. }));
    for (name, want) in &offline.outputs {
        let Some(got) = online.outputs.get(name) else {
            return Some(Divergence {
                stream: name.clone(),
                instant: None,
                online: "missing".into(),
                offline: format!("{} values", want.len()),
            });
        };
        let n = want.len().max(got.len());
        for u in 0..n {
            if u >= got.len() && early {
                break;
            }
            if got.get(u) != want.get(u) {
                return Some(Divergence {
                    stream: name.clone(),
                    instant: Some(u as u64),
                    online: show(got.get(u)),
                    offline: show(want.get(u)),
                });
            }
        }
    }
    if let Some(extra) = online.outputs.keys().find(|k| !offline.outputs.contains_key(*k)) {
        return Some(Divergence {
            stream: extra.clone(),
            instant: None,
            online: "present".into(),
            offline: "missing".into(),
        });
    }
    if online.verdict != offline.verdict {
        return Some(Divergence {
            stream: "<verdict>".into(),
            instant: None,
            online: format!("{:?}", online.verdict),
            offline: format!("{:?}", offline.verdict),
        });
    }
    None
}

/// Runs `trace` through both evaluators and compares them.
pub fn check(spec: &Arc<ValidatedSpec>, trace: &Trace) -> Result<(), OracleError> {
    let online = run_online(trace.monitor(spec.clone()), trace.events.clone())?;
    let offline = run_offline_with_log(spec, &trace.events, trace.log.as_deref())?;
    match compare(&online, &offline) {
        None => Ok(()),
        Some(d) => Err(OracleError::Divergence(d)),
    }
}
