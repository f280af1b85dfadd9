//! Monitors: online evaluation of a validated specification over an event
//! stream, plus the offline reference evaluator.

pub(crate) mod eval;
mod frozen;
mod offline;
pub(crate) mod online;
pub(crate) mod state;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, WireError};
use crate::log::{InMemoryStore, LogError, LogStore, PastRetriever};
use crate::spec::ValidatedSpec;
use crate::value::Value;

pub use eval::Slot;
pub use frozen::FrozenMonitor;
pub use offline::{run_offline, run_offline_with_log, OfflineRun};
pub use state::{Metrics, MonitorState};

use online::Core;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("the monitor has already returned a verdict")]
    Returned,
    #[error("the monitor has already finished")]
    Finished,
    #[error("expected event for instant {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("cannot thaw: {0}")]
    Thaw(String),
}

/// Value of one output stream at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputValue {
    pub stream: String,
    pub instant: u64,
    pub value: Slot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    /// The return condition held at `instant`.
    Returned { instant: u64, value: Slot },
    /// The trace ended without the condition holding; the last value is returned.
    Finished { value: Slot },
    /// The trace was empty.
    Empty,
}

impl Verdict {
    pub fn value(&self) -> Option<&Slot> {
        match self {
            Verdict::Returned { value, .. } | Verdict::Finished { value } => Some(value),
            Verdict::Empty => None,
        }
    }
}

/// What one call to [`Monitor::step`] or [`Monitor::finish`] produced.
/// Values are ordered by instant, then by declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutput {
    pub values: Vec<OutputValue>,
    pub verdict: Option<Verdict>,
}

/// Where a monitor's log comes from.
pub enum LogAttachment {
    None,
    /// The monitor appends each event before evaluating it; retrieval sees
    /// the monitor's own past.
    Own(Box<dyn LogStore>),
    /// Read-only log of some other trace (e.g. the flows behind a summary).
    External(Box<dyn PastRetriever>),
}

impl LogAttachment {
    pub(crate) fn retriever(&mut self) -> Option<&mut dyn PastRetriever> {
        match self {
            LogAttachment::None => None,
            LogAttachment::Own(s) => Some(&mut **s as &mut dyn PastRetriever),
            LogAttachment::External(r) => Some(&mut **r),
        }
    }
}

pub struct Monitor {
    spec: Arc<ValidatedSpec>,
    state: MonitorState,
    log: LogAttachment,
    /// Used by initializers whose source is an external process.
    adapter: Option<Box<dyn PastRetriever>>,
}

impl Monitor {
    /// A monitor with an in-memory log of its own if the specification
    /// retrieves anything, and no log otherwise.
    pub fn new(spec: Arc<ValidatedSpec>) -> Self {
        let log = if spec.uses_log() {
            LogAttachment::Own(Box::new(InMemoryStore::new()))
        } else {
            LogAttachment::None
        };
        Monitor { state: MonitorState::new(&spec, None), spec, log, adapter: None }
    }

    /// A monitor with the given log. An own log must be empty.
    pub fn with_log(spec: Arc<ValidatedSpec>, log: LogAttachment) -> Result<Self, MonitorError> {
        if let LogAttachment::Own(s) = &log {
            if s.len().unwrap_or(0) != 0 {
                return Err(MonitorError::Log(LogError::Integrity(
                    "a fresh monitor needs an empty log".into(),
                )));
            }
        }
        Ok(Monitor { state: MonitorState::new(&spec, None), spec, log, adapter: None })
    }

    /// Retriever for initializers declared with an external source.
    pub fn with_adapter(mut self, adapter: Box<dyn PastRetriever>) -> Self {
        self.adapter = Some(adapter);
        self
    }

    pub fn spec(&self) -> &Arc<ValidatedSpec> {
        &self.spec
    }

    /// Number of events consumed so far.
    pub fn instant(&self) -> u64 {
        self.state.next
    }

    pub fn metrics(&self) -> &Metrics {
        &self.state.metrics
    }

    pub fn verdict(&self) -> Option<&Verdict> {
        self.state.ret.verdict.as_ref()
    }

    /// Largest number of values any stream window currently holds.
    pub fn window_len(&self) -> usize {
        self.state.windows.iter().map(|w| w.len()).max().unwrap_or(0)
    }

    pub fn step(&mut self, event: Event) -> Result<StepOutput, MonitorError> {
        self.check_open()?;
        if event.instant != self.state.next {
            return Err(MonitorError::OutOfOrder { expected: self.state.next, got: event.instant });
        }
        let event = event.typed(&self.spec.inputs(), false)?;
        if let LogAttachment::Own(store) = &mut self.log {
            store.append(&event)?;
        }
        let values: Vec<Value> = self
            .spec
            .inputs()
            .iter()
            .map(|(n, _)| event.bindings[n].clone())
            .collect();
        let mut core = self.core();
        core.ingest(values);
        Ok(core.progress())
    }

    /// Declares the end of the trace: every pending value is computed, reading
    /// defaults past the end, and the verdict (if any) is settled.
    pub fn finish(&mut self) -> Result<StepOutput, MonitorError> {
        self.check_open()?;
        self.state.finished = true;
        Ok(self.core().progress())
    }

    /// Runs a whole trace and finishes, stopping early at a returned verdict.
    pub fn run(&mut self, trace: impl IntoIterator<Item = Event>) -> Result<StepOutput, MonitorError> {
        let mut all = StepOutput::default();
        for e in trace {
            let out = self.step(e)?;
            all.values.extend(out.values);
            if out.verdict.is_some() {
                all.verdict = out.verdict;
                return Ok(all);
            }
        }
        let out = self.finish()?;
        all.values.extend(out.values);
        all.verdict = out.verdict;
        Ok(all)
    }

    pub fn freeze(&self) -> FrozenMonitor {
        FrozenMonitor::new(&self.spec, self.state.clone())
    }

    /// Resumes a frozen monitor. An own log must hold exactly the events the
    /// monitor had consumed.
    pub fn thaw(
        spec: Arc<ValidatedSpec>,
        frozen: FrozenMonitor,
        log: LogAttachment,
    ) -> Result<Self, MonitorError> {
        let state = frozen.into_state(&spec)?;
        if let LogAttachment::Own(s) = &log {
            if s.len() != Some(state.next) {
                return Err(MonitorError::Thaw(format!(
                    "log holds {:?} events, monitor consumed {}",
                    s.len(),
                    state.next
                )));
            }
        } else if spec.uses_log() && matches!(log, LogAttachment::None) {
            return Err(MonitorError::Thaw("specification retrieves from a log; attach one".into()));
        }
        Ok(Monitor { spec, state, log, adapter: None })
    }

    fn check_open(&self) -> Result<(), MonitorError> {
        if self.state.ret.verdict.is_some() {
            return Err(if self.state.finished { MonitorError::Finished } else { MonitorError::Returned });
        }
        if self.state.finished {
            return Err(MonitorError::Finished);
        }
        Ok(())
    }

    fn core(&mut self) -> Core<'_> {
        let own = matches!(self.log, LogAttachment::Own(_));
        Core {
            spec: &self.spec,
            st: &mut self.state,
            log: self.log.retriever(),
            own_log: own,
            adapter: match &mut self.adapter {
                Some(a) => Some(&mut **a),
                None => None,
            },
        }
    }
}

/// Runs `spec` over `trace` with a fresh monitor and returns its verdict.
/// This is how nested specifications execute.
pub fn run_nested(spec: &Arc<ValidatedSpec>, trace: Vec<Event>) -> Result<(Verdict, Metrics), MonitorError> {
    let mut m = Monitor::new(spec.clone());
    let out = m.run(trace)?;
    let verdict = out.verdict.unwrap_or(Verdict::Empty);
    Ok((verdict, m.state.metrics))
}

pub(crate) fn online_core<'a>(spec: &'a ValidatedSpec, st: &'a mut MonitorState) -> Core<'a> {
    Core { spec, st, log: None, own_log: false, adapter: None }
}
