//! Network flow analysis: volume and source-entropy based detection of
//! fourteen DDoS attack patterns.
//!
//! An address is under attack when the traffic it receives for an attack's
//! protocol and port exceeds that attack's volume threshold `t0` (packets or
//! bits per second), and that traffic comes from more than `t1` distinct
//! sources. Three monitors implement the same check: [`build_s1`] keeps the
//! source set of every destination, [`build_s2`] only computes it for a
//! suspect, recovering its past from the log, and [`build_s3`] works on
//! per-batch summaries and only looks at individual flows when a summary
//! marker is over threshold.

mod specs;
mod traffic;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::event::Event;
use crate::registry::{FuncDef, Registry};
use crate::value::{Type, Value};

pub use specs::{build_flow_analyzer, build_s1, build_s2, build_s3};
pub use traffic::{
    batch_verdicts, generate_traffic, random_flows, random_summaries, summarize, summary_victims, BatchSummary,
    FlowRun, GroundTruth, Profile, Traffic,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkerKind {
    PacketsPerSecond,
    BitsPerSecond,
}

impl MarkerKind {
    fn tag(self) -> &'static str {
        match self {
            MarkerKind::PacketsPerSecond => "pps",
            MarkerKind::BitsPerSecond => "bps",
        }
    }
}

/// One attack pattern: the flows it concerns and its two thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub id: usize,
    pub name: String,
    pub protocol: String,
    pub dst_port: i64,
    pub marker: MarkerKind,
    /// Volume threshold in marker units; exceeded strictly.
    pub t0: f64,
    /// Distinct-source threshold; exceeded strictly.
    pub t1: i64,
}

impl AttackSpec {
    pub fn matches(&self, flow: &FlowRecord) -> bool {
        flow.protocol == self.protocol && flow.dst_port == self.dst_port
    }

    /// The attack's flow filter as a log filter value.
    pub fn filter(&self) -> Value {
        Value::record([
            ("protocol", Value::text(&self.protocol)),
            ("dstPort", Value::Int(self.dst_port)),
        ])
    }
}

/// The shipped attack table. Only the malformed-UDP entry (id 0) has
/// field-derived thresholds; the others are placeholders set high enough
/// that ordinary traffic never reaches them.
pub fn attacks() -> Vec<AttackSpec> {
    use MarkerKind::*;
    let table: [(&str, &str, i64, MarkerKind, f64, i64); 14] = [
        ("malformed-udp", "UDP", 0, PacketsPerSecond, 2000.0, 5),
        ("dns-amplification", "UDP", 53, BitsPerSecond, 1e9, 20),
        ("ntp-amplification", "UDP", 123, BitsPerSecond, 1e9, 20),
        ("ssdp-reflection", "UDP", 1900, PacketsPerSecond, 50_000.0, 10),
        ("memcached-amplification", "UDP", 11211, BitsPerSecond, 1e9, 10),
        ("snmp-reflection", "UDP", 161, BitsPerSecond, 1e9, 10),
        ("chargen-reflection", "UDP", 19, PacketsPerSecond, 50_000.0, 10),
        ("http-flood", "TCP", 80, PacketsPerSecond, 50_000.0, 50),
        ("https-flood", "TCP", 443, PacketsPerSecond, 50_000.0, 50),
        ("ssh-flood", "TCP", 22, PacketsPerSecond, 50_000.0, 20),
        ("cldap-reflection", "UDP", 389, BitsPerSecond, 1e9, 10),
        ("netbios-reflection", "UDP", 137, PacketsPerSecond, 50_000.0, 10),
        ("mdns-reflection", "UDP", 5353, PacketsPerSecond, 50_000.0, 10),
        ("icmp-flood", "ICMP", 0, PacketsPerSecond, 50_000.0, 20),
    ];
    table
        .into_iter()
        .enumerate()
        .map(|(id, (name, protocol, dst_port, marker, t0, t1))| AttackSpec {
            id,
            name: name.into(),
            protocol: protocol.into(),
            dst_port,
            marker,
            t0,
            t1,
        })
        .collect()
}

/// One flow record. `file_id` names the batch it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub start_time: f64,
    pub end_time: f64,
    pub src_addr: String,
    pub dst_addr: String,
    pub src_port: i64,
    pub dst_port: i64,
    pub protocol: String,
    pub packets: i64,
    pub bytes: i64,
    pub file_id: i64,
}

/// Input streams of the flow monitors.
pub fn flow_inputs() -> Vec<(&'static str, Type)> {
    vec![
        ("startTime", Type::Float),
        ("endTime", Type::Float),
        ("srcAddr", Type::Text),
        ("dstAddr", Type::Text),
        ("srcPort", Type::Int),
        ("dstPort", Type::Int),
        ("protocol", Type::Text),
        ("packets", Type::Int),
        ("bytes", Type::Int),
        ("file_id", Type::Int),
    ]
}

impl FlowRecord {
    pub fn to_event(&self, instant: u64) -> Event {
        Event::new(instant)
            .with("startTime", Value::Float(self.start_time))
            .with("endTime", Value::Float(self.end_time))
            .with("srcAddr", Value::text(&self.src_addr))
            .with("dstAddr", Value::text(&self.dst_addr))
            .with("srcPort", Value::Int(self.src_port))
            .with("dstPort", Value::Int(self.dst_port))
            .with("protocol", Value::text(&self.protocol))
            .with("packets", Value::Int(self.packets))
            .with("bytes", Value::Int(self.bytes))
            .with("file_id", Value::Int(self.file_id))
    }

    pub fn from_event(e: &Event) -> Option<FlowRecord> {
        let f = |k: &str| e.get(k).and_then(Value::as_float);
        let i = |k: &str| e.get(k).and_then(Value::as_int);
        let t = |k: &str| e.get(k).and_then(Value::as_text).map(str::to_string);
        Some(FlowRecord {
            start_time: f("startTime")?,
            end_time: f("endTime")?,
            src_addr: t("srcAddr")?,
            dst_addr: t("dstAddr")?,
            src_port: i("srcPort")?,
            dst_port: i("dstPort")?,
            protocol: t("protocol")?,
            packets: i("packets")?,
            bytes: i("bytes")?,
            file_id: i("file_id")?,
        })
    }
}

/// Traffic received by one destination: totals and the time span covered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AddrInfo {
    pub packets: i64,
    pub bits: i64,
    pub start: f64,
    pub end: f64,
}

impl AddrInfo {
    pub fn of(flow: &FlowRecord) -> Self {
        AddrInfo {
            packets: flow.packets,
            bits: flow.bytes * 8,
            start: flow.start_time,
            end: flow.end_time,
        }
    }

    pub fn merge(self, o: AddrInfo) -> Self {
        AddrInfo {
            packets: self.packets + o.packets,
            bits: self.bits + o.bits,
            start: self.start.min(o.start),
            end: self.end.max(o.end),
        }
    }

    /// Packets or bits per second, over at least one second.
    pub fn rate(&self, kind: MarkerKind) -> f64 {
        let volume = match kind {
            MarkerKind::PacketsPerSecond => self.packets,
            MarkerKind::BitsPerSecond => self.bits,
        };
        volume as f64 / (self.end - self.start).max(1.0)
    }

    fn ty() -> Type {
        Type::record([
            ("packets", Type::Int),
            ("bits", Type::Int),
            ("start", Type::Float),
            ("end", Type::Float),
        ])
    }

    fn to_value(self) -> Value {
        Value::record([
            ("packets", Value::Int(self.packets)),
            ("bits", Value::Int(self.bits)),
            ("start", Value::Float(self.start)),
            ("end", Value::Float(self.end)),
        ])
    }

    fn from_value(v: &Value) -> Option<Self> {
        Some(AddrInfo {
            packets: v.field("packets")?.as_int()?,
            bits: v.field("bits")?.as_int()?,
            start: v.field("start")?.as_float()?,
            end: v.field("end")?.as_float()?,
        })
    }
}

fn arg<T>(f: &str, v: Option<T>, what: &str) -> Result<T, EvalError> {
    v.ok_or_else(|| EvalError::type_error(f, format!("expected {what}")))
}

/// The builtin function library plus the flow-analysis functions:
///
/// * `addr_info_merge(info, addr, packets, bits, start, end)` adds one flow to
///   the per-destination traffic map;
/// * `marker_rate(info, addr, kind)` is the `"pps"` or `"bps"` rate of `addr`,
///   `0.0` if it received nothing;
/// * `attacks_matching(protocol, dstPort)` is the set of attack ids whose
///   filter the flow matches;
/// * `sources_merge(srcs, ids, src)` adds `src` to the source set of every
///   attack in `ids`.
pub fn registry(attacks: &[AttackSpec]) -> Arc<Registry> {
    let mut r = Registry::builtin();
    let info_map = Type::map(Type::Text, AddrInfo::ty());
    let defs = [
        FuncDef::new(
            "addr_info_merge",
            vec![info_map.clone(), Type::Text, Type::Int, Type::Int, Type::Float, Type::Float],
            info_map.clone(),
            |_, a| {
                let f = "addr_info_merge";
                let mut m = a[0].clone();
                let Value::Map(inner) = &mut m else {
                    return Err(EvalError::type_error(f, "expected map"));
                };
                let new = AddrInfo {
                    packets: arg(f, a[2].as_int(), "int")?,
                    bits: arg(f, a[3].as_int(), "int")?,
                    start: arg(f, a[4].as_float(), "float")?,
                    end: arg(f, a[5].as_float(), "float")?,
                };
                let merged = match inner.get(&a[1]) {
                    Some(old) => arg(f, AddrInfo::from_value(old), "traffic record")?.merge(new),
                    None => new,
                };
                Arc::make_mut(inner).insert(a[1].clone(), merged.to_value());
                Ok(m)
            },
        ),
        FuncDef::new("marker_rate", vec![info_map, Type::Text, Type::Text], Type::Float, |_, a| {
            let f = "marker_rate";
            let kind = match arg(f, a[2].as_text(), "text")? {
                "pps" => MarkerKind::PacketsPerSecond,
                "bps" => MarkerKind::BitsPerSecond,
                other => return Err(EvalError::type_error(f, format!("unknown marker `{other}`"))),
            };
            Ok(Value::Float(match arg(f, a[0].as_map(), "map")?.get(&a[1]) {
                Some(v) => arg(f, AddrInfo::from_value(v), "traffic record")?.rate(kind),
                None => 0.0,
            }))
        }),
        {
            let table: Vec<(String, i64, usize)> =
                attacks.iter().map(|a| (a.protocol.clone(), a.dst_port, a.id)).collect();
            FuncDef::new("attacks_matching", vec![Type::Text, Type::Int], Type::set(Type::Int), move |_, a| {
                let f = "attacks_matching";
                let proto = arg(f, a[0].as_text(), "text")?;
                let port = arg(f, a[1].as_int(), "int")?;
                Ok(Value::set(
                    table
                        .iter()
                        .filter(|(p, d, _)| p == proto && *d == port)
                        .map(|(_, _, id)| Value::Int(*id as i64)),
                ))
            })
        },
        {
            let srcs = Type::map(Type::Int, Type::set(Type::Text));
            FuncDef::new("sources_merge", vec![srcs.clone(), Type::set(Type::Int), Type::Text], srcs, |_, a| {
                let f = "sources_merge";
                let ids = arg(f, a[1].as_set(), "set")?;
                if ids.is_empty() {
                    return Ok(a[0].clone());
                }
                let mut m: BTreeMap<Value, Value> = arg(f, a[0].as_map(), "map")?.clone();
                for id in ids {
                    let mut set = m
                        .get(id)
                        .and_then(Value::as_set)
                        .cloned()
                        .unwrap_or_default();
                    set.insert(a[2].clone());
                    m.insert(id.clone(), Value::Set(Arc::new(set)));
                }
                Ok(Value::Map(Arc::new(m)))
            })
        },
    ];
    for d in defs {
        r.register(d).expect("flow functions do not clash with the builtin library");
    }
    Arc::new(r)
}
