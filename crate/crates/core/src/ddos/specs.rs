//! The three flow monitors.
//!
//! Per attack `k`, the flow monitors share these streams:
//!
//! * `info_k`: traffic per destination among the flows matching the attack;
//! * `hist_k`: number of matching flows per destination;
//! * `maxdst_k`: the most accessed destination (ties keep the incumbent);
//! * `rate_k`: the marker rate of `maxdst_k`;
//! * `attack_k`: `rate_k > t0` and the entropy of `maxdst_k` is above `t1`.
//!
//! They differ only in how `entropy_k` is obtained.

use super::{flow_inputs, registry, AttackSpec};
use crate::spec::dsl::*;
use crate::spec::{validate_with, Expr, Initializer, Specification, ValidatedSpec};
use crate::value::{Type, Value};

fn s(name: &str, a: &AttackSpec) -> String {
    format!("{name}_{}", a.id)
}

fn flow_spec(name: &str) -> Specification {
    flow_inputs()
        .into_iter()
        .fold(Specification::new(name), |sp, (n, ty)| sp.input(n, ty))
}

fn volume(sp: Specification, a: &AttackSpec) -> Specification {
    let m = s("match", a);
    let info = s("info", a);
    let hist = s("hist", a);
    let maxdst = s("maxdst", a);
    let empty = Value::empty_map;
    let info_ty = Type::map(
        Type::Text,
        Type::record([
            ("packets", Type::Int),
            ("bits", Type::Int),
            ("start", Type::Float),
            ("end", Type::Float),
        ]),
    );
    sp.output(
        &m,
        Type::Bool,
        and(eq(now("protocol"), lit(a.protocol.as_str())), eq(now("dstPort"), lit(a.dst_port))),
    )
    .output(
        &info,
        info_ty,
        ite(
            now(&m),
            call(
                "addr_info_merge",
                [
                    prev(&info, empty()),
                    now("dstAddr"),
                    now("packets"),
                    call("mul", [now("bytes"), lit(8)]),
                    now("startTime"),
                    now("endTime"),
                ],
            ),
            prev(&info, empty()),
        ),
    )
    .output(
        &hist,
        Type::map(Type::Text, Type::Int),
        ite(
            now(&m),
            call("insert_with", [lit("add"), now("dstAddr"), lit(1), prev(&hist, empty())]),
            prev(&hist, empty()),
        ),
    )
    .output(
        &maxdst,
        Type::Text,
        ite(
            and(
                now(&m),
                call(
                    "gt",
                    [
                        call("!", [now(&hist), now("dstAddr")]),
                        call("map_find_or", [now(&hist), prev(&maxdst, ""), lit(0)]),
                    ],
                ),
            ),
            now("dstAddr"),
            prev(&maxdst, ""),
        ),
    )
    .output(
        &s("rate", a),
        Type::Float,
        call("marker_rate", [now(&info), now(&maxdst), lit(a.marker.tag())]),
    )
}

fn detection(sp: Specification, a: &AttackSpec) -> Specification {
    sp.output(
        &s("attack", a),
        Type::Bool,
        and(
            call("gt", [now(&s("rate", a)), lit(a.t0)]),
            call("gt", [now(&s("entropy", a)), lit(a.t1)]),
        ),
    )
}

/// `victim_k`: the victim while attack `k` holds. `attacked`: the victims of
/// the attacks holding now. `detected`: the first victim of every attack that
/// held so far. `flows_ok`: nothing detected.
fn verdicts(mut sp: Specification, attacks: &[AttackSpec]) -> Specification {
    for a in attacks {
        sp = sp.output(
            &s("victim", a),
            Type::optional(Type::Text),
            ite(now(&s("attack", a)), call("some", [now(&s("maxdst", a))]), lit(Value::none())),
        );
    }
    let victims = Type::map(Type::Int, Type::Text);
    sp.output("attacked", victims.clone(), collect_victims(attacks))
        .output(
            "detected",
            victims,
            call("map_union", [prev("detected", Value::empty_map()), now("attacked")]),
        )
        .output("flows_ok", Type::Bool, eq(call("map_size", [now("detected")]), lit(0)))
}

/// Map from attack id to `victim_k`, for the attacks whose victim is set.
fn collect_victims(attacks: &[AttackSpec]) -> Expr {
    attacks.iter().fold(lit(Value::empty_map()), |acc, a| {
        call("map_insert_some", [acc, lit(a.id as i64), now(&s("victim", a))])
    })
}

fn checked(sp: Specification, attacks: &[AttackSpec]) -> ValidatedSpec {
    let name = sp.name.clone();
    validate_with(sp, registry(attacks)).unwrap_or_else(|e| panic!("`{name}` is invalid: {e}"))
}

/// Brute force: the source sets of every destination seen, one instance per
/// destination holding the sets of all attacks.
pub fn build_s1(attacks: &[AttackSpec]) -> ValidatedSpec {
    let srcs_ty = Type::map(Type::Int, Type::set(Type::Text));
    let mut sp = flow_spec("ddos-s1")
        .output(
            "dsts",
            Type::set(Type::Text),
            call("set_insert", [prev("dsts", Value::empty_set()), now("dstAddr")]),
        )
        .parametric(
            "sources",
            Type::Text,
            srcs_ty.clone(),
            call(
                "sources_merge",
                [
                    prev("sources", Value::empty_map()),
                    call("attacks_matching", [now("protocol"), now("dstPort")]),
                    now("srcAddr"),
                ],
            ),
        )
        .output(
            "srcsets",
            Type::map(Type::Text, srcs_ty),
            updating(
                over("sources", now("dsts")),
                call("set_insert", [lit(Value::empty_set()), now("dstAddr")]),
            ),
        );
    for a in attacks {
        sp = volume(sp, a);
        let of_dst = call("map_find_or", [now("srcsets"), now(&s("maxdst", a)), lit(Value::empty_map())]);
        sp = sp.output(
            &s("entropy", a),
            Type::Int,
            call("size", [call("map_find_or", [of_dst, lit(a.id as i64), lit(Value::empty_set())])]),
        );
        sp = detection(sp, a);
    }
    checked(verdicts(sp, attacks), attacks)
}

/// Entropy of `maxdst_k`, computed only while `rate_k` exceeds `t0`; the
/// instance for a new suspect first replays the suspect's matching past.
fn retro_entropy(sp: Specification, a: &AttackSpec) -> Specification {
    let suspect = s("suspect", a);
    let srcs = s("srcs", a);
    let filter = [
        ("dstAddr", Value::text("{param}")),
        ("protocol", Value::text(&a.protocol)),
        ("dstPort", Value::Int(a.dst_port)),
    ];
    let init = Initializer::filtered(Value::record(filter));
    let src_set = with_init(
        updating(
            mover("src_set", now(&suspect)),
            ite(
                now(&s("match", a)),
                call("set_insert", [lit(Value::empty_set()), now("dstAddr")]),
                lit(Value::empty_set()),
            ),
        ),
        init,
    );
    sp.output(
        &suspect,
        Type::optional(Type::Text),
        ite(
            call("gt", [now(&s("rate", a)), lit(a.t0)]),
            call("some", [now(&s("maxdst", a))]),
            lit(Value::none()),
        ),
    )
    .output(&srcs, Type::optional(Type::set(Type::Text)), src_set)
    .output(
        &s("entropy", a),
        Type::Int,
        call("size", [call("unwrap_or", [now(&srcs), lit(Value::empty_set())])]),
    )
}

fn src_set(sp: Specification) -> Specification {
    sp.parametric(
        "src_set",
        Type::Text,
        Type::set(Type::Text),
        call("set_insert", [prev("src_set", Value::empty_set()), now("srcAddr")]),
    )
}

/// Retroactive: source sets only for suspects.
pub fn build_s2(attacks: &[AttackSpec]) -> ValidatedSpec {
    let mut sp = src_set(flow_spec("ddos-s2"));
    for a in attacks {
        sp = detection(retro_entropy(volume(sp, a), a), a);
    }
    checked(verdicts(sp, attacks), attacks)
}

/// S2 restricted to one attack, returning the victim the first time the
/// attack holds (or `none` at the end of the flows).
pub fn build_flow_analyzer(a: &AttackSpec, attacks: &[AttackSpec]) -> ValidatedSpec {
    checked(flow_analyzer(a), attacks)
}

fn flow_analyzer(a: &AttackSpec) -> Specification {
    let sp = src_set(flow_spec(&format!("flow-analyzer-{}", a.id)));
    let sp = detection(retro_entropy(volume(sp, a), a), a).output(
        "victim",
        Type::optional(Type::Text),
        ite(now(&s("attack", a)), call("some", [now(&s("maxdst", a))]), lit(Value::none())),
    );
    sp.returns("victim", &s("attack", a))
}

/// Aggregated: one event per batch with the fourteen markers. A marker over
/// its threshold runs the flow analyzer on that batch's flows for the attack,
/// fetched from the flow store.
pub fn build_s3(attacks: &[AttackSpec]) -> ValidatedSpec {
    let mut sp = Specification::new("ddos-s3")
        .input("file_id", Type::Int)
        .input("markers", Type::list(Type::Float));
    for a in attacks {
        let filter = [
            ("file_id", now("file_id")),
            ("protocol", lit(a.protocol.as_str())),
            ("dstPort", lit(a.dst_port)),
        ];
        sp = sp.output(
            &s("victim", a),
            Type::optional(Type::Text),
            ite(
                call("gt", [call("nth", [now("markers"), lit(a.id as i64)]), lit(a.t0)]),
                run_spec_fetch(flow_analyzer(a), None, None, Some(record(filter))),
                lit(Value::none()),
            ),
        );
    }
    let attacked = collect_victims(attacks);
    sp = sp
        .output("attacked", Type::map(Type::Int, Type::Text), attacked)
        .output("summary_ok", Type::Bool, eq(call("map_size", [now("attacked")]), lit(0)));
    checked(sp, attacks)
}
