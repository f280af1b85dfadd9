mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use retrolola_core::spec::dsl::*;
use retrolola_core::{
    builtins, desugar, run_offline, validate, Event, Expr, FetchRequest, FileStore, Filter, InMemoryStore, Initializer,
    LogStore, PastRetriever, Specification, Type, ValidatedSpec, Value,
};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn kv_events(kv: &[(i64, i64, bool)]) -> Vec<Event> {
    kv.iter()
        .enumerate()
        .map(|(i, (k, v, f))| {
            Event::new(i as u64).with("k", Value::Int(*k)).with("v", Value::Int(*v)).with("flag", Value::Bool(*f))
        })
        .collect()
}

/// `acc = (3 * acc[-1] + v) mod 1009`: order sensitive, so any reordering or
/// dropped event shows.
fn acc_body(stream: &str) -> Expr {
    call("rem", [call("add", [call("mul", [prev(stream, 0i64), lit(3i64)]), now("v")]), lit(1009i64)])
}

fn kv_spec(name: &str) -> Specification {
    Specification::new(name).input("k", Type::Int).input("v", Type::Int).input("flag", Type::Bool)
}

/// Forward: every key seen gets an instance fed the events with that key.
/// Retro: keys enter only with a flagged event, and replay their past.
fn keyed(retro: bool) -> Arc<ValidatedSpec> {
    let seen = |f: Expr| ite(f, call("set_insert", [prev("keys", Value::empty_set()), now("k")]), prev("keys", Value::empty_set()));
    let keys = if retro { seen(now("flag")) } else { seen(lit(true)) };
    let mut accs = updating(over("acc", now("keys")), call("set_insert", [lit(Value::empty_set()), now("k")]));
    if retro {
        accs = with_init(accs, Initializer::filtered(Value::record([("k", Value::text("{param}"))])));
    }
    let spec = kv_spec("keyed")
        .output("keys", Type::set(Type::Int), keys)
        .parametric("acc", Type::Int, Type::Int, acc_body("acc"))
        .output("accs", Type::map(Type::Int, Type::Int), accs);
    Arc::new(validate(spec).unwrap())
}

fn plain_acc() -> Arc<ValidatedSpec> {
    Arc::new(validate(kv_spec("plain").output("acc", Type::Int, acc_body("acc"))).unwrap())
}

fn last_int(run: &retrolola_core::OfflineRun, stream: &str) -> Option<i64> {
    run.outputs[stream].last().map(|v| v.as_ref().unwrap().as_int().unwrap())
}

fn map_at(run: &retrolola_core::OfflineRun, stream: &str, u: usize) -> BTreeMap<i64, i64> {
    run.outputs[stream][u]
        .as_ref()
        .unwrap()
        .as_map()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.as_int().unwrap(), v.as_int().unwrap()))
        .collect()
}

fn traces() -> impl Strategy<Value = Vec<(i64, i64, bool)>> {
    proptest::collection::vec((0i64..5, 0i64..100, proptest::bool::weighted(0.3)), 0..60)
}

proptest! {
    #![proptest_config(config(64))]

    /// An instance's value is what a standalone monitor computes over the
    /// subtrace of events for its key.
    #[test]
    fn instances_see_exactly_their_subtrace(kv in traces()) {
        let events = kv_events(&kv);
        let run = run_offline(&keyed(false), &events).unwrap();
        let plain = plain_acc();
        for u in 0..events.len() {
            let got = map_at(&run, "accs", u);
            let mut want = BTreeMap::new();
            for k in 0..5 {
                let sub: Vec<Event> = events[..=u]
                    .iter()
                    .filter(|e| e.get("k") == Some(&Value::Int(k)))
                    .enumerate()
                    .map(|(i, e)| Event { instant: i as u64, ..e.clone() })
                    .collect();
                if let Some(v) = last_int(&run_offline(&plain, &sub).unwrap(), "acc") {
                    want.insert(k, v);
                }
            }
            prop_assert_eq!(got, want, "instant {}", u);
        }
    }

    /// A key installed late with a replaying initializer holds the same value
    /// as one followed from its first event.
    #[test]
    fn replay_catches_up_with_forward(kv in traces()) {
        let events = kv_events(&kv);
        let fwd = run_offline(&keyed(false), &events).unwrap();
        let retro = run_offline(&keyed(true), &events).unwrap();
        for u in 0..events.len() {
            let r = map_at(&retro, "accs", u);
            let f = map_at(&fwd, "accs", u);
            for (k, v) in &r {
                prop_assert_eq!(Some(v), f.get(k), "instant {} key {}", u, k);
            }
            let live = retro.outputs["keys"][u].as_ref().unwrap().as_set().unwrap().len();
            prop_assert_eq!(r.len(), live);
        }
    }

    /// `when` is `over` updating the parameters that satisfy the condition.
    #[test]
    fn when_matches_its_expansion(kv in traces()) {
        let cond = call("gt", [now("v"), call("mul", [param(), lit(20i64)])]);
        let params = lit(Value::set((0..5).map(Value::Int)));
        let base = || kv_spec("when").parametric("acc", Type::Int, Type::Int, acc_body("acc"));
        let ty = Type::map(Type::Int, Type::Int);
        let sugared = validate(base().output("m", ty.clone(), when("acc", params.clone(), cond.clone()))).unwrap();
        let expanded = updating(over("acc", params.clone()), filter(params, cond));
        let manual = validate(base().output("m", ty, expanded)).unwrap();
        let events = kv_events(&kv);
        let a = run_offline(&Arc::new(sugared), &events).unwrap();
        let b = run_offline(&Arc::new(manual), &events).unwrap();
        prop_assert_eq!(a.outputs, b.outputs);
    }

    /// A statically instantiated parametric stream equals the dynamic
    /// instance for the same parameter.
    #[test]
    fn static_and_dynamic_instances_agree(alts in proptest::collection::vec(0.0f64..150.0, 0..80), th in 10.0f64..140.0) {
        let spec = Specification::new("static-dynamic")
            .input("altitude", Type::Float)
            .parametric(
                "below",
                Type::Float,
                Type::Bool,
                and(call("lt", [now("altitude"), param()]), prev("below", true)),
            )
            .output("fixed", Type::Bool, inst_now("below", th))
            .output(
                "dynamic",
                Type::Bool,
                call("map_find_or", [over("below", lit(Value::set([Value::Float(th)]))), lit(th), lit(true)]),
            );
        let spec = Arc::new(validate(spec).unwrap());
        let events: Vec<_> = alts.iter().enumerate().map(|(i, a)| Event::new(i as u64).with("altitude", Value::Float(*a))).collect();
        let run = run_offline(&spec, &events).unwrap();
        prop_assert_eq!(&run.outputs["fixed"], &run.outputs["dynamic"]);
        let mut holds = true;
        for (u, a) in alts.iter().enumerate() {
            holds = holds && *a < th;
            prop_assert_eq!(run.outputs["fixed"][u].as_ref().unwrap(), &Value::Bool(holds));
        }
    }

    #[test]
    fn desugaring_preserves_every_builtin(idx in 0usize..11, seed in any::<u64>()) {
        let b = &builtins::all()[idx];
        let spec = b.spec();
        let plain = Arc::new(desugar(&spec));
        let trace = b.random_trace(seed, 80);
        let a = retrolola_core::engine::run_offline_with_log(&spec, &trace.events, trace.log.as_deref()).unwrap();
        let d = retrolola_core::engine::run_offline_with_log(&plain, &trace.events, trace.log.as_deref()).unwrap();
        prop_assert_eq!(a, d, "{}", b.name);
    }

    #[test]
    fn freeze_thaw_resumes_exactly(idx in 0usize..11, seed in any::<u64>(), cut in 0.0f64..=1.0) {
        let b = &builtins::all()[idx];
        let trace = b.random_trace(seed, 100);
        let split = (cut * trace.events.len() as f64) as usize;
        if let Err(e) = common::check_freeze_thaw(&b.spec(), &trace, split) {
            return Err(TestCaseError::fail(format!("{}: {e}", b.name)));
        }
    }
}

proptest! {
    #![proptest_config(config(32))]

    /// Fetching everything returns what was appended, from memory, from a
    /// file, and from the file reopened.
    #[test]
    fn fetch_returns_what_was_appended(kv in proptest::collection::vec((0i64..5, 0i64..100, any::<bool>()), 0..2500)) {
        let events = kv_events(&kv);
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("log");
        let mut file = FileStore::open(&path).unwrap();
        let mut mem = InMemoryStore::new();
        for e in &events {
            file.append(e).unwrap();
            mem.append(e).unwrap();
        }
        let all = FetchRequest::range(0, events.len() as u64, Filter::all());
        prop_assert_eq!(&file.retrieve(&all).unwrap(), &events);
        prop_assert_eq!(&mem.retrieve(&all).unwrap(), &events);
        drop(file);
        let mut reopened = FileStore::open(&path).unwrap();
        prop_assert_eq!(reopened.len(), Some(events.len() as u64));
        prop_assert_eq!(&reopened.retrieve(&all).unwrap(), &events);

        let keyed = FetchRequest::range(events.len() as u64 / 3, events.len() as u64, Filter::all().eq("k", Value::Int(2)));
        let want: Vec<_> = events[events.len() / 3..].iter().filter(|e| e.get("k") == Some(&Value::Int(2))).cloned().collect();
        prop_assert_eq!(reopened.retrieve(&keyed).unwrap(), want);
    }

    #[test]
    fn lifecycle_matches_model(steps in common::steps(30), retro in any::<bool>()) {
        common::check_lifecycle(&steps, retro).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn appending_out_of_order_is_refused() {
    let mut mem = InMemoryStore::new();
    mem.append(&Event::new(0)).unwrap();
    assert!(mem.append(&Event::new(2)).is_err());
    let dir = tempfile::TempDir::new().unwrap();
    let mut file = FileStore::open(dir.path().join("log")).unwrap();
    assert!(file.append(&Event::new(1)).is_err());
}

#[test]
fn empty_range_fetches_nothing() {
    let events = kv_events(&[(1, 1, true), (2, 2, false), (1, 3, true), (1, 4, false)]);
    let mut mem = InMemoryStore::from_events(events).unwrap();
    assert!(mem.retrieve(&FetchRequest::range(3, 3, Filter::all())).unwrap().is_empty());
    assert_eq!(mem.retrieve(&FetchRequest::range(0, 4, Filter::all())).unwrap().len(), 4);
}
