//! Named example specifications and seeded random traces for them.
//!
//! Every builtin can be looked up by name (the CLI does this) and comes with a
//! trace generator, so each one can be checked online against
//! [`run_offline`](crate::run_offline).

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ddos;
use crate::engine::{LogAttachment, Monitor};
use crate::event::Event;
use crate::log::InMemoryStore;
use crate::spec::dsl::*;
use crate::spec::{validate, Expr, Initializer, Specification, ValidatedSpec};
use crate::value::{Type, Value};

/// A generated trace. `log` is set for specifications that read a separate
/// store (the flows behind a summary) instead of their own past.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<Event>,
    pub log: Option<Vec<Event>>,
}

impl Trace {
    /// A monitor for `spec` wired to this trace's log, if any.
    pub fn monitor(&self, spec: Arc<ValidatedSpec>) -> Monitor {
        match &self.log {
            None => Monitor::new(spec),
            Some(log) => {
                let store = InMemoryStore::from_events(log.clone()).expect("generated logs are gap free");
                Monitor::with_log(spec, LogAttachment::External(Box::new(store))).expect("external logs attach")
            }
        }
    }
}

pub struct Builtin {
    pub name: &'static str,
    pub about: &'static str,
    build: fn() -> ValidatedSpec,
    gen: fn(&mut ChaCha8Rng, usize) -> Trace,
}

impl Builtin {
    pub fn spec(&self) -> Arc<ValidatedSpec> {
        Arc::new((self.build)())
    }

    /// A random trace of at most `len` events, fixed by `seed`.
    pub fn random_trace(&self, seed: u64, len: usize) -> Trace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (self.gen)(&mut rng, len)
    }
}

fn checked(spec: Specification) -> ValidatedSpec {
    let name = spec.name.clone();
    validate(spec).unwrap_or_else(|e| panic!("builtin `{name}` is invalid: {e}"))
}

static BUILTINS: [Builtin; 11] = [
    Builtin {
        name: "altitude",
        about: "alt_ok: altitude stays below 100",
        build: || checked(altitude()),
        gen: gen_altitude,
    },
    Builtin {
        name: "paramaltitude",
        about: "the altitude bound as a statically instantiated parametric stream",
        build: || checked(param_altitude()),
        gen: gen_altitude,
    },
    Builtin {
        name: "crossspec",
        about: "nested monitor: will r and s swap order within the next 50 instants",
        build: || checked(cross_spec()),
        gen: gen_cross,
    },
    Builtin {
        name: "handshake",
        about: "three-way handshake per connection, tracked with over",
        build: || checked(handshake()),
        gen: gen_handshake,
    },
    Builtin {
        name: "openfiles",
        about: "files are created before use, tracked for every file from the start",
        build: || checked(open_files()),
        gen: gen_files,
    },
    Builtin {
        name: "retro-openfiles",
        about: "files are created before use, tracked from first use with a replayed past",
        build: || checked(retro_open_files()),
        gen: gen_files,
    },
    Builtin {
        name: "dyn-altitude",
        about: "altitude bound discovered mid-trace and checked retroactively",
        build: || checked(dyn_altitude()),
        gen: gen_dyn_altitude,
    },
    Builtin {
        name: "packet-window",
        about: "rate heuristic that inspects the last hundred packets when triggered",
        build: || checked(packet_window()),
        gen: gen_packets,
    },
    Builtin {
        name: "ddos-s1",
        about: "flow analysis, source sets for every destination",
        build: || ddos::build_s1(&ddos::attacks()),
        gen: |rng, len| Trace { events: ddos::random_flows(rng, len), log: None },
    },
    Builtin {
        name: "ddos-s2",
        about: "flow analysis, source sets installed retroactively for suspects",
        build: || ddos::build_s2(&ddos::attacks()),
        gen: |rng, len| Trace { events: ddos::random_flows(rng, len), log: None },
    },
    Builtin {
        name: "ddos-s3",
        about: "batch summaries with nested flow analysis of suspicious batches",
        build: || ddos::build_s3(&ddos::attacks()),
        gen: ddos::random_summaries,
    },
];

pub fn all() -> &'static [Builtin] {
    &BUILTINS
}

pub fn by_name(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|b| b.name)
}

pub fn altitude() -> Specification {
    Specification::new("altitude")
        .input("altitude", Type::Float)
        .output("alt_ok", Type::Bool, call("lt", [now("altitude"), lit(100.0)]))
}

pub fn param_altitude() -> Specification {
    Specification::new("paramaltitude")
        .input("altitude", Type::Float)
        .parametric("alt_below", Type::Float, Type::Bool, call("lt", [now("altitude"), param()]))
        .output("alt_ok", Type::Bool, inst_now("alt_below", 100.0))
        .output("alt_low_ok", Type::Bool, inst_now("alt_below", 50.0))
}

/// Returns `cross` the first time the relative order of `r` and `s` changes.
pub fn cross_inner() -> Specification {
    Specification::new("crossinner")
        .input("r", Type::Int)
        .input("s", Type::Int)
        .output("less", Type::Bool, call("lt", [now("r"), now("s")]))
        .output("idx", Type::Int, call("add", [prev("idx", -1), lit(1)]))
        .output(
            "cross",
            Type::Bool,
            and(
                call("gt", [now("idx"), lit(0)]),
                call("neq", [now("less"), prev("less", false)]),
            ),
        )
        .returns("cross", "cross")
}

pub fn cross_spec() -> Specification {
    Specification::new("crossspec")
        .input("r", Type::Int)
        .input("s", Type::Int)
        .output(
            "will_cross",
            Type::Bool,
            run_spec(cross_inner(), [("r", slice("r", 50)), ("s", slice("s", 50))]),
        )
}

fn pair_ty() -> Type {
    Type::record([("a", Type::Text), ("b", Type::Text)])
}

/// A connection keyed by its initiator `a` and responder `b`.
pub fn pair(a: &str, b: &str) -> Value {
    Value::record([("a", Value::text(a)), ("b", Value::text(b))])
}

/// Connections enter the parameter set with their first packet and leave it
/// one instant after the final ACK.
pub fn handshake() -> Specification {
    let flag_is = |f: &str| eq(now("flag"), lit(f));
    let step = |prev_ok: &[&str], next: &str| {
        ite(
            prev_ok
                .iter()
                .map(|s| eq(prev("conn_state", "Idle"), lit(*s)))
                .reduce(or)
                .unwrap(),
            lit(next),
            lit("Error"),
        )
    };
    let transition = ite(
        eq(prev("conn_state", "Idle"), lit("Error")),
        lit("Error"),
        ite(
            flag_is("SYN"),
            step(&["Idle", "Established"], "SynSent"),
            ite(
                flag_is("SYNACK"),
                step(&["SynSent"], "SynAckRcvd"),
                ite(flag_is("ACK"), step(&["SynAckRcvd"], "Established"), lit("Error")),
            ),
        ),
    );
    let kept = ite(
        eq(prev("flag", ""), lit("ACK")),
        call("set_delete", [prev("params", Value::empty_set()), at("pair", -1, pair("", ""))]),
        prev("params", Value::empty_set()),
    );
    Specification::new("handshake")
        .input("src", Type::Text)
        .input("dst", Type::Text)
        .input("flag", Type::Text)
        .output(
            "pair",
            pair_ty(),
            ite(
                flag_is("SYNACK"),
                record([("a", now("dst")), ("b", now("src"))]),
                record([("a", now("src")), ("b", now("dst"))]),
            ),
        )
        .output("params", Type::set(pair_ty()), call("set_insert", [kept, now("pair")]))
        .parametric("conn_state", pair_ty(), Type::Text, transition)
        .output(
            "conns",
            Type::map(pair_ty(), Type::Text),
            updating(
                over("conn_state", now("params")),
                call("set_insert", [lit(Value::empty_set()), now("pair")]),
            ),
        )
        .output(
            "handshake_ok",
            Type::Bool,
            not(call("list_contains", [call("elems", [now("conns")]), lit("Error")])),
        )
}

/// `none` → Create → `live` → Delete → `none`; reading or writing a file
/// that is not live makes it `bad` for good.
fn file_state_body() -> Expr {
    let p = || prev("file_state", "none");
    ite(
        eq(p(), lit("bad")),
        lit("bad"),
        ite(
            eq(now("op"), lit("Create")),
            lit("live"),
            ite(
                eq(now("op"), lit("Delete")),
                lit("none"),
                ite(eq(p(), lit("live")), lit("live"), lit("bad")),
            ),
        ),
    )
}

fn files_spec(name: &str, fids: Expr, init: Option<Initializer>) -> Specification {
    let mut files = updating(
        over("file_state", now("fids")),
        call("set_insert", [lit(Value::empty_set()), now("fid")]),
    );
    if let Some(init) = init {
        files = with_init(files, init);
    }
    Specification::new(name)
        .input("fid", Type::Int)
        .input("op", Type::Text)
        .output("fids", Type::set(Type::Int), fids)
        .parametric("file_state", Type::Int, Type::Text, file_state_body())
        .output("files", Type::map(Type::Int, Type::Text), files)
        .output(
            "files_ok",
            Type::Bool,
            not(call("list_contains", [call("elems", [now("files")]), lit("bad")])),
        )
}

pub fn open_files() -> Specification {
    files_spec(
        "openfiles",
        call("set_insert", [prev("fids", Value::empty_set()), now("fid")]),
        None,
    )
}

/// Files are only tracked once read or written; their earlier creations and
/// deletions are recovered from the log.
pub fn retro_open_files() -> Specification {
    let used = call(
        "set_member",
        [lit(Value::set([Value::text("Read"), Value::text("Write")])), now("op")],
    );
    let init = Initializer::filtered(Value::record([
        ("fid", Value::text("{param}")),
        ("op", Value::list([Value::text("Create"), Value::text("Delete")])),
    ]));
    files_spec(
        "retro-openfiles",
        ite(
            used,
            call("set_insert", [prev("fids", Value::empty_set()), now("fid")]),
            prev("fids", Value::empty_set()),
        ),
        Some(init),
    )
}

/// The first positive `threshold` becomes the altitude bound, and the whole
/// past is checked against it at that point.
pub fn dyn_altitude() -> Specification {
    let none = || Value::none();
    Specification::new("dyn-altitude")
        .input("altitude", Type::Float)
        .input("threshold", Type::Float)
        .output(
            "mth",
            Type::optional(Type::Float),
            ite(
                call("is_some", [prev("mth", none())]),
                prev("mth", none()),
                ite(
                    call("gt", [now("threshold"), lit(0.0)]),
                    call("some", [now("threshold")]),
                    lit(none()),
                ),
            ),
        )
        .parametric(
            "alt_param",
            Type::Float,
            Type::Bool,
            and(call("lt", [now("altitude"), param()]), prev("alt_param", true)),
        )
        .output(
            "alt_ok",
            Type::optional(Type::Bool),
            with_init(mover("alt_param", now("mth")), Initializer::all()),
        )
}

/// Packets per destination and sources per destination over the events it
/// is given; returns `true` as soon as one destination gets more than 30
/// packets from more than 5 sources.
pub fn finer_spec() -> Specification {
    Specification::new("finer")
        .input("src", Type::Text)
        .input("dst", Type::Text)
        .output(
            "hist",
            Type::map(Type::Text, Type::Int),
            call("insert_with", [lit("add"), now("dst"), lit(1), prev("hist", Value::empty_map())]),
        )
        .output(
            "srcs",
            Type::map(Type::Text, Type::set(Type::Text)),
            call(
                "insert_with",
                [
                    lit("set_union"),
                    now("dst"),
                    call("set_insert", [lit(Value::empty_set()), now("src")]),
                    prev("srcs", Value::empty_map()),
                ],
            ),
        )
        .output(
            "under_attack",
            Type::Bool,
            and(
                call("gt", [call("!", [now("hist"), now("dst")]), lit(30)]),
                call("gt", [call("size", [call("!", [now("srcs"), now("dst")])]), lit(5)]),
            ),
        )
        .returns("under_attack", "under_attack")
}

pub const PPS_THRESHOLD: f64 = 1000.0;

/// The finer analysis runs only while the reported rate is above
/// [`PPS_THRESHOLD`], over the last hundred events.
pub fn packet_window() -> Specification {
    Specification::new("packet-window")
        .input("src", Type::Text)
        .input("dst", Type::Text)
        .input("pps", Type::Float)
        .output("counter", Type::Int, call("add", [prev("counter", -1), lit(1)]))
        .output(
            "attack",
            Type::Bool,
            ite(
                call("gt", [now("pps"), lit(PPS_THRESHOLD)]),
                run_spec_fetch(
                    finer_spec(),
                    Some(call("max", [call("sub", [now("counter"), lit(99)]), lit(0)])),
                    Some(call("add", [now("counter"), lit(1)])),
                    None,
                ),
                lit(false),
            ),
        )
        .output("traffic_ok", Type::Bool, not(now("attack")))
}

fn event(i: usize, fields: impl IntoIterator<Item = (&'static str, Value)>) -> Event {
    fields.into_iter().fold(Event::new(i as u64), |e, (k, v)| e.with(k, v))
}

fn gen_altitude(rng: &mut ChaCha8Rng, len: usize) -> Trace {
    let n = rng.gen_range(0..=len);
    let events = (0..n)
        .map(|i| event(i, [("altitude", Value::Float(rng.gen_range(0.0..150.0)))]))
        .collect();
    Trace { events, log: None }
}

fn gen_dyn_altitude(rng: &mut ChaCha8Rng, len: usize) -> Trace {
    let n = rng.gen_range(0..=len);
    let events = (0..n)
        .map(|i| {
            let th = if rng.gen_bool(0.05) { rng.gen_range(60.0..140.0) } else { 0.0 };
            event(
                i,
                [("altitude", Value::Float(rng.gen_range(0.0..150.0))), ("threshold", Value::Float(th))],
            )
        })
        .collect();
    Trace { events, log: None }
}

fn gen_cross(rng: &mut ChaCha8Rng, len: usize) -> Trace {
    let n = rng.gen_range(0..=len);
    let (mut r, mut s) = (0i64, 0i64);
    let events = (0..n)
        .map(|i| {
            r += rng.gen_range(-3..=3);
            s += rng.gen_range(-3..=3);
            event(i, [("r", Value::Int(r)), ("s", Value::Int(s))])
        })
        .collect();
    Trace { events, log: None }
}

/// Packets of one handshake, initiator first.
pub fn handshake_packets(a: &str, b: &str) -> [(String, String, &'static str); 3] {
    [
        (a.into(), b.into(), "SYN"),
        (b.into(), a.into(), "SYNACK"),
        (a.into(), b.into(), "ACK"),
    ]
}

pub fn handshake_event(i: usize, (src, dst, flag): &(String, String, &str)) -> Event {
    event(i, [("src", Value::text(src)), ("dst", Value::text(dst)), ("flag", Value::text(flag))])
}

/// Interleaved handshakes, mostly well formed; some packets are dropped or
/// replaced by a random flag.
fn gen_handshake(rng: &mut ChaCha8Rng, len: usize) -> Trace {
    let n = rng.gen_range(0..=len);
    let hosts = ["h0", "h1", "h2", "h3", "h4"];
    let mut pending: Vec<Vec<(String, String, &'static str)>> = vec![];
    let mut packets = vec![];
    while packets.len() < n {
        if pending.is_empty() || rng.gen_bool(0.3) {
            let a = *hosts.choose(rng).unwrap();
            let b = *hosts.choose(rng).unwrap();
            let mut hs: Vec<_> = handshake_packets(a, b).into_iter().rev().collect();
            if rng.gen_bool(0.1) {
                hs.remove(rng.gen_range(0..hs.len()));
            }
            pending.push(hs);
        }
        let k = rng.gen_range(0..pending.len());
        let mut p = pending[k].pop().unwrap();
        if rng.gen_bool(0.03) {
            p.2 = ["SYN", "SYNACK", "ACK", "RST"].choose(rng).unwrap();
        }
        packets.push(p);
        if pending[k].is_empty() {
            pending.swap_remove(k);
        }
    }
    let events = packets.iter().enumerate().map(|(i, p)| handshake_event(i, p)).collect();
    Trace { events, log: None }
}

pub const FILE_OPS: [&str; 4] = ["Create", "Read", "Write", "Delete"];

fn gen_files(rng: &mut ChaCha8Rng, len: usize) -> Trace {
    let n = rng.gen_range(0..=len);
    let events = (0..n)
        .map(|i| {
            let op = *FILE_OPS.choose(rng).unwrap();
            event(i, [("fid", Value::Int(rng.gen_range(0..6))), ("op", Value::text(op))])
        })
        .collect();
    Trace { events, log: None }
}

/// Benign packets at a low rate, with an attack on `victim` from a few
/// sources starting at `attack_at`.
pub fn packet_trace(rng: &mut ChaCha8Rng, len: usize, attack_at: Option<usize>) -> Vec<Event> {
    (0..len)
        .map(|i| {
            let attacking = attack_at.is_some_and(|a| i >= a && i < a + 60) && rng.gen_bool(0.8);
            let (src, dst, pps) = if attacking {
                (format!("a{}", rng.gen_range(0..10)), "victim".to_string(), rng.gen_range(1200.0..3000.0))
            } else {
                let pps = if rng.gen_bool(0.05) { rng.gen_range(1000.0..1500.0) } else { rng.gen_range(10.0..900.0) };
                (format!("s{}", rng.gen_range(0..50)), format!("d{}", rng.gen_range(0..30)), pps)
            };
            event(i, [("src", Value::text(src)), ("dst", Value::text(dst)), ("pps", Value::Float(pps))])
        })
        .collect()
}

fn gen_packets(rng: &mut ChaCha8Rng, len: usize) -> Trace {
    let n = rng.gen_range(0..=len);
    let attack = (n > 10 && rng.gen_bool(0.5)).then(|| rng.gen_range(0..n));
    Trace { events: packet_trace(rng, n, attack), log: None }
}
