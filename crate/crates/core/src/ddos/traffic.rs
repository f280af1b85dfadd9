//! Synthetic flow batches, batch summaries and helpers to run the flow
//! monitors over them.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{attacks, AddrInfo, AttackSpec, FlowRecord};
use crate::builtins::Trace;
use crate::engine::{Metrics, Monitor, MonitorError};
use crate::event::Event;
use crate::spec::ValidatedSpec;
use crate::value::Value;

/// Traffic shapes, scaled-down stand-ins for the four evaluation datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    /// One batch with a malformed-UDP attack on a single victim; under 1% of
    /// the flows match the attack's filter.
    D1,
    /// One benign batch with a handful of stray malformed-UDP flows.
    D2,
    /// One benign batch with many sources and exactly 100 destinations.
    D3,
    /// Five batches, exactly one of them shaped like D1 and the rest like D2.
    D4,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(Profile::D1),
            "d2" => Ok(Profile::D2),
            "d3" => Ok(Profile::D3),
            "d4" => Ok(Profile::D4),
            other => Err(format!("unknown profile `{other}` (expected d1, d2, d3 or d4)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundTruth {
    pub file_id: i64,
    pub attack: usize,
    pub victim: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Traffic {
    /// Ordered by batch, then start time.
    pub flows: Vec<FlowRecord>,
    pub truth: Vec<GroundTruth>,
}

impl Traffic {
    pub fn batches(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.flows.iter().map(|f| f.file_id).collect();
        ids.dedup();
        ids
    }

    /// Flows of one batch as a trace starting at instant 0.
    pub fn batch_events(&self, file_id: i64) -> Vec<Event> {
        self.flows
            .iter()
            .filter(|f| f.file_id == file_id)
            .enumerate()
            .map(|(i, f)| f.to_event(i as u64))
            .collect()
    }

    /// All flows as one log.
    pub fn log_events(&self) -> Vec<Event> {
        self.flows.iter().enumerate().map(|(i, f)| f.to_event(i as u64)).collect()
    }
}

const SERVICES: [(&str, i64, u32); 10] = [
    ("TCP", 80, 30),
    ("TCP", 443, 30),
    ("TCP", 22, 4),
    ("TCP", 25, 4),
    ("TCP", 8080, 4),
    ("UDP", 53, 14),
    ("UDP", 123, 4),
    ("UDP", 5353, 3),
    ("UDP", 1900, 2),
    ("ICMP", 0, 5),
];

fn service(rng: &mut ChaCha8Rng) -> (&'static str, i64) {
    let (p, d, _) = SERVICES.choose_weighted(rng, |s| s.2).unwrap();
    (p, *d)
}

fn dst_addr(i: usize) -> String {
    format!("10.{}.{}.{}", i / 65536 % 256, i / 256 % 256, i % 256)
}

fn src_addr(i: usize) -> String {
    format!("172.{}.{}.{}", 16 + i / 65536 % 16, i / 256 % 256, i % 256)
}

struct Batch {
    file_id: i64,
    base: f64,
}

impl Batch {
    fn flow(&self, rng: &mut ChaCha8Rng, start: f64, dur: f64, src: String, dst: String, svc: (&str, i64), packets: i64, per_packet: (i64, i64)) -> FlowRecord {
        FlowRecord {
            start_time: self.base + start,
            end_time: self.base + start + dur,
            src_addr: src,
            dst_addr: dst,
            src_port: rng.gen_range(1024..65536),
            dst_port: svc.1,
            protocol: svc.0.into(),
            packets,
            bytes: packets * rng.gen_range(per_packet.0..=per_packet.1),
            file_id: self.file_id,
        }
    }

    /// Ordinary traffic plus `stray` small malformed-UDP flows.
    fn benign(&self, rng: &mut ChaCha8Rng, n: usize, dsts: usize, srcs: usize, stray: usize) -> Vec<FlowRecord> {
        (0..n)
            .map(|i| {
                let dst = if i < dsts { i } else { rng.gen_range(0..dsts) };
                let start = rng.gen_range(0.0..300.0);
                let dur = rng.gen_range(0.0..10.0);
                let src = src_addr(rng.gen_range(0..srcs));
                if i >= n - stray.min(n) {
                    let packets = rng.gen_range(1..=3);
                    self.flow(rng, start, dur, src, dst_addr(dst), ("UDP", 0), packets, (28, 64))
                } else {
                    let svc = service(rng);
                    let packets = rng.gen_range(1..=40);
                    self.flow(rng, start, dur, src, dst_addr(dst), svc, packets, (40, 1500))
                }
            })
            .collect()
    }

    /// Malformed-UDP flood on `victim` from twelve sources within one minute.
    fn attack(&self, rng: &mut ChaCha8Rng, n: usize, victim: &str) -> Vec<FlowRecord> {
        let w0 = rng.gen_range(30.0..200.0);
        (0..n)
            .map(|i| {
                let start = w0 + rng.gen_range(0.0..60.0);
                let dur = rng.gen_range(1.0..5.0);
                let packets = rng.gen_range(8000..12000);
                let src = format!("198.51.100.{}", i % 12 + 1);
                self.flow(rng, start, dur, src, victim.into(), ("UDP", 0), packets, (28, 64))
            })
            .collect()
    }
}

fn sorted(mut flows: Vec<FlowRecord>) -> Vec<FlowRecord> {
    flows.sort_by(|a, b| a.start_time.total_cmp(&b.start_time));
    flows
}

fn stray(n: usize) -> usize {
    (n / 5000).max(1)
}

fn one_batch(rng: &mut ChaCha8Rng, profile: Profile, n: usize, file_id: i64) -> (Vec<FlowRecord>, Option<GroundTruth>) {
    let b = Batch { file_id, base: file_id as f64 * 300.0 };
    match profile {
        Profile::D1 => {
            let n_attack = (n / 125).max(12).min(n);
            let victim = format!("192.0.2.{}", rng.gen_range(1..255));
            let mut flows = b.benign(rng, n - n_attack, (n / 5).max(1), 5000, stray(n));
            flows.extend(b.attack(rng, n_attack, &victim));
            let truth = GroundTruth { file_id, attack: 0, victim };
            (sorted(flows), Some(truth))
        }
        Profile::D2 => (sorted(b.benign(rng, n, (n / 5).max(1), 5000, stray(n))), None),
        Profile::D3 => (sorted(b.benign(rng, n, 100.min(n), n.max(1) * 4, stray(n))), None),
        Profile::D4 => unreachable!("multi-batch profile"),
    }
}

/// Deterministic in `(profile, flows, seed)`. For D4, `flows` is the size of
/// each of the five batches.
pub fn generate_traffic(profile: Profile, flows: usize, seed: u64) -> Traffic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = match profile {
        Profile::D4 => {
            let attacked = rng.gen_range(0..5);
            (0..5).map(|b| if b == attacked { Profile::D1 } else { Profile::D2 }).collect()
        }
        p => vec![p],
    };
    let mut all = vec![];
    let mut truth = vec![];
    for (b, p) in shapes.into_iter().enumerate() {
        let (flows, t) = one_batch(&mut rng, p, flows, b as i64);
        all.extend(flows);
        truth.extend(t);
    }
    Traffic { flows: all, truth }
}

/// Per batch and attack, the highest marker rate of any destination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub file_id: i64,
    /// `(attack id, max rate)`, one entry per attack in id order.
    pub markers: Vec<(usize, f64)>,
}

impl BatchSummary {
    pub fn of(file_id: i64, flows: &[FlowRecord], attacks: &[AttackSpec]) -> Self {
        let markers = attacks
            .iter()
            .map(|a| {
                let mut per_dst: BTreeMap<&str, AddrInfo> = BTreeMap::new();
                for f in flows.iter().filter(|f| a.matches(f)) {
                    let info = AddrInfo::of(f);
                    per_dst
                        .entry(&f.dst_addr)
                        .and_modify(|i| *i = i.merge(info))
                        .or_insert(info);
                }
                let max = per_dst.values().map(|i| i.rate(a.marker)).fold(0.0, f64::max);
                (a.id, max)
            })
            .collect();
        BatchSummary { file_id, markers }
    }

    pub fn to_event(&self, instant: u64) -> Event {
        Event::new(instant)
            .with("file_id", Value::Int(self.file_id))
            .with("markers", Value::list(self.markers.iter().map(|(_, m)| Value::Float(*m))))
    }
}

/// One summary per batch, in batch order.
pub fn summarize(flows: &[FlowRecord], attacks: &[AttackSpec]) -> Vec<BatchSummary> {
    let mut batches: BTreeMap<i64, Vec<FlowRecord>> = BTreeMap::new();
    for f in flows {
        batches.entry(f.file_id).or_default().push(f.clone());
    }
    batches
        .into_iter()
        .map(|(id, fs)| BatchSummary::of(id, &fs, attacks))
        .collect()
}

/// Result of running a flow monitor (S1 or S2) over one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowRun {
    /// Value of `attacked` at every instant.
    pub attacked: Vec<Value>,
    /// First victim of every attack detected in the batch.
    pub detected: BTreeMap<usize, String>,
    pub metrics: Metrics,
}

fn victims(v: &Value) -> BTreeMap<usize, String> {
    v.as_map()
        .map(|m| {
            m.iter()
                .filter_map(|(k, v)| Some((k.as_int()? as usize, v.as_text()?.to_string())))
                .collect()
        })
        .unwrap_or_default()
}

/// Runs a flow monitor online over one batch.
pub fn batch_verdicts(spec: &Arc<ValidatedSpec>, events: Vec<Event>) -> Result<FlowRun, MonitorError> {
    let mut m = Monitor::new(spec.clone());
    let mut attacked = vec![];
    let mut detected = BTreeMap::new();
    let mut collect = |out: crate::engine::StepOutput| {
        for o in out.values {
            match (o.stream.as_str(), o.value) {
                ("attacked", Ok(v)) => attacked.push(v),
                ("detected", Ok(v)) => detected = victims(&v),
                (_, _) => {}
            }
        }
    };
    for e in events {
        collect(m.step(e)?);
    }
    collect(m.finish()?);
    Ok(FlowRun { attacked, detected, metrics: *m.metrics() })
}

/// The `attacked` map of a summary monitor's output value.
pub fn summary_victims(v: &Value) -> BTreeMap<usize, String> {
    victims(v)
}

/// Small, dense flow traces in which the malformed-UDP thresholds are
/// regularly crossed and suspects come and go.
fn dense_flows(rng: &mut ChaCha8Rng, n: usize, file_id: i64, dsts: usize) -> Vec<FlowRecord> {
    let b = Batch { file_id, base: file_id as f64 * 300.0 };
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            t += rng.gen_range(0.0..0.2);
            let dur = rng.gen_range(0.0..3.0);
            let src = format!("s{}", rng.gen_range(0..9));
            let dst = format!("d{}", rng.gen_range(0..dsts));
            if rng.gen_bool(0.5) {
                let packets = rng.gen_range(1..4000);
                b.flow(rng, t, dur, src, dst, ("UDP", 0), packets, (28, 64))
            } else {
                let svc = service(rng);
                let packets = rng.gen_range(1..=40);
                b.flow(rng, t, dur, src, dst, svc, packets, (40, 1500))
            }
        })
        .collect()
}

pub fn random_flows(rng: &mut ChaCha8Rng, len: usize) -> Vec<Event> {
    let n = rng.gen_range(0..=len);
    dense_flows(rng, n, 0, 5).iter().enumerate().map(|(i, f)| f.to_event(i as u64)).collect()
}

/// A few dense batches: summaries as the trace, their flows as the log.
pub fn random_summaries(rng: &mut ChaCha8Rng, len: usize) -> Trace {
    let batches = rng.gen_range(0..=len.min(4));
    let mut flows = vec![];
    for b in 0..batches {
        let n = rng.gen_range(1..=80);
        flows.extend(dense_flows(rng, n, b as i64, 2));
    }
    let events = summarize(&flows, &attacks())
        .iter()
        .enumerate()
        .map(|(i, s)| s.to_event(i as u64))
        .collect();
    let log = flows.iter().enumerate().map(|(i, f)| f.to_event(i as u64)).collect();
    Trace { events, log: Some(log) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_traffic() {
        assert_eq!(generate_traffic(Profile::D1, 2000, 7), generate_traffic(Profile::D1, 2000, 7));
        assert_ne!(generate_traffic(Profile::D1, 2000, 7), generate_traffic(Profile::D1, 2000, 8));
    }

    #[test]
    fn d1_has_one_victim_and_few_attack_flows() {
        let t = generate_traffic(Profile::D1, 10_000, 7);
        assert_eq!(t.flows.len(), 10_000);
        assert_eq!(t.truth.len(), 1);
        let malformed = &attacks()[0];
        let matching = t.flows.iter().filter(|f| malformed.matches(f)).count();
        assert!(matching * 100 <= t.flows.len(), "{matching}");
        assert!(t.flows.iter().all(|f| f.end_time >= f.start_time && f.packets >= 1 && f.bytes >= f.packets));
    }

    #[test]
    fn d3_has_a_hundred_destinations() {
        let t = generate_traffic(Profile::D3, 5_000, 1);
        let dsts: std::collections::BTreeSet<_> = t.flows.iter().map(|f| &f.dst_addr).collect();
        assert_eq!(dsts.len(), 100);
        assert!(t.truth.is_empty());
    }

    #[test]
    fn d4_has_five_batches_one_attacked() {
        let t = generate_traffic(Profile::D4, 1_000, 3);
        assert_eq!(t.batches(), vec![0, 1, 2, 3, 4]);
        assert_eq!(t.truth.len(), 1);
    }

    #[test]
    fn empty_batch_summary_is_all_zero() {
        let s = BatchSummary::of(3, &[], &attacks());
        assert_eq!(s.markers.len(), 14);
        assert!(s.markers.iter().enumerate().all(|(i, (id, m))| *id == i && *m == 0.0));
    }

    #[test]
    fn attacked_batch_marker_over_threshold_only_for_malformed_udp() {
        let t = generate_traffic(Profile::D1, 10_000, 7);
        let s = &summarize(&t.flows, &attacks())[0];
        let a = attacks();
        assert!(s.markers[0].1 > a[0].t0);
        assert!(s.markers[1..].iter().all(|(id, m)| *m <= a[*id].t0));
    }
}
