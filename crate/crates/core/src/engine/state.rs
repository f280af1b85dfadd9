//! Serializable runtime state of a monitor.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::eval::Slot;
use super::Verdict;
use crate::error::EvalError;
use crate::spec::ValidatedSpec;
use crate::value::Value;

/// Values of one stream for a contiguous range of instants starting at `base`.
/// `None` marks an instant not computed yet.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct Window {
    pub base: u64,
    pub vals: VecDeque<Option<Slot>>,
}

impl Window {
    pub fn get(&self, u: u64) -> Option<&Slot> {
        if u < self.base {
            return None;
        }
        self.vals.get((u - self.base) as usize).and_then(Option::as_ref)
    }

    pub fn set(&mut self, u: u64, v: Slot) {
        debug_assert!(u >= self.base);
        let i = (u - self.base) as usize;
        while self.vals.len() <= i {
            self.vals.push_back(None);
        }
        self.vals[i] = Some(v);
    }

    pub fn evict_below(&mut self, low: u64) {
        while self.base < low && !self.vals.is_empty() {
            self.vals.pop_front();
            self.base += 1;
        }
        if self.vals.is_empty() && self.base < low {
            self.base = low;
        }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }
}

/// One live parameter of an `over` stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Instance {
    pub state: MonitorState,
    /// Value after the last step; `None` until the instance steps once.
    pub last: Option<Slot>,
    /// Set when retrieving the past failed at install time.
    pub failed: Option<EvalError>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct OverState {
    /// Next instant to compute.
    pub next: u64,
    pub live: BTreeSet<Value>,
    #[serde(with = "pairs")]
    pub instances: BTreeMap<Value, Instance>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct ReturnState {
    /// Next instant whose condition is examined.
    pub scan: u64,
    pub verdict: Option<Verdict>,
}

/// Counters describing the work a monitor has done.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub events: u64,
    /// Nested specifications started.
    pub nested_runs: u64,
    /// Events consumed by nested monitors.
    pub nested_events: u64,
    /// Instances created by `over`.
    pub installs: u64,
    /// Past events replayed into fresh instances.
    pub replayed_events: u64,
    pub removals: u64,
    pub live_instances: u64,
    pub max_live_instances: u64,
    /// Events delivered to instances, replays excluded.
    pub instance_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorState {
    pub(crate) next: u64,
    pub(crate) finished: bool,
    pub(crate) windows: Vec<Window>,
    /// Per stream, the first instant not yet computed in order.
    pub(crate) reported: Vec<u64>,
    pub(crate) overs: BTreeMap<usize, OverState>,
    pub(crate) ret: ReturnState,
    pub(crate) metrics: Metrics,
    /// Parameter of an instance monitor.
    pub(crate) param: Option<Value>,
}

impl MonitorState {
    pub(crate) fn new(spec: &ValidatedSpec, param: Option<Value>) -> Self {
        let n = spec.n_streams();
        MonitorState {
            next: 0,
            finished: false,
            windows: vec![Window::default(); n],
            reported: vec![0; n],
            overs: BTreeMap::new(),
            ret: ReturnState::default(),
            metrics: Metrics::default(),
            param,
        }
    }
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(
        m: &BTreeMap<K, V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_set_get_evict() {
        let mut w = Window::default();
        w.set(0, Ok(Value::Int(0)));
        w.set(2, Ok(Value::Int(2)));
        assert_eq!(w.get(1), None);
        assert_eq!(w.get(2), Some(&Ok(Value::Int(2))));
        w.evict_below(2);
        assert_eq!(w.len(), 1);
        assert_eq!(w.get(0), None);
        w.evict_below(10);
        assert_eq!((w.base, w.len()), (10, 0));
        w.set(10, Ok(Value::Unit));
        assert_eq!(w.get(10), Some(&Ok(Value::Unit)));
    }
}
