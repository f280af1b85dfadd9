//! Acceptance report: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retrolola_core::builtins::{self, handshake_event, handshake_packets, packet_trace, Trace};
use retrolola_core::ddos::{self, batch_verdicts, build_s1, build_s2, build_s3, generate_traffic, summarize, Profile};
use retrolola_core::oracle::{self, run_online};
use retrolola_core::{InMemoryStore, LogAttachment, Monitor, Value};

/// Wall-clock budgets.
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const SCALE_BUDGET: Duration = Duration::from_secs(120);
/// Trace length and seed count for the oracle sweep.
const ORACLE_SEEDS: u64 = 50;
const ORACLE_LEN: usize = 200;
/// Flows per profile for the scale comparisons.
const SCALE_FLOWS: usize = 10_000;
const BATCH_FLOWS: usize = 5_000;
/// Retroactive instances as a share of brute-force instances, at most.
const INSTANCE_RATIO: f64 = 0.01;
/// Share of a batch's flows the summary monitor may replay, below.
const REPLAY_RATIO: f64 = 0.01;
/// Detection within this many events of the attack start.
const LATENCY_BOUND: usize = 100;
const LIFECYCLE_CASES: u32 = 256;
const FREEZE_SPLITS: usize = 100;
const FILE_TRACES: u64 = 50;

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("online and offline evaluation agree on every builtin", oracle_sweep),
        ("brute-force and retroactive flow monitors agree", s1_s2_agree),
        ("summary monitor finds the attacked batch", summary_finds_batch),
        ("retroactive flow monitor keeps few instances", instance_counts),
        ("summary monitor replays only suspect flows", summary_replay),
        ("packet window detects an attack within the window", packet_latency),
        ("instance lifecycle follows the parameter and updating sets", lifecycle),
        ("freeze and thaw resume exactly", freeze_thaw),
        ("handshake and file monitors", handshake_and_files),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn oracle_sweep() -> Outcome {
    let t = Instant::now();
    let mut traces = 0;
    for b in builtins::all() {
        let spec = b.spec();
        for seed in 0..ORACLE_SEEDS {
            let trace = b.random_trace(seed, ORACLE_LEN);
            oracle::check(&spec, &trace).map_err(|e| format!("{} seed {seed}: {e}", b.name))?;
            traces += 1;
        }
    }
    ensure(t.elapsed() < ORACLE_BUDGET, || format!("took {:?}", t.elapsed()))?;
    Ok(format!("{traces} traces"))
}

struct ScaleRun {
    profile: Profile,
    distinct_dsts: usize,
    s1: ddos::FlowRun,
    s2: ddos::FlowRun,
}

fn scale_runs() -> &'static Result<(Vec<ScaleRun>, Duration), String> {
    static RUNS: std::sync::OnceLock<Result<(Vec<ScaleRun>, Duration), String>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let attacks = ddos::attacks();
        let s1 = Arc::new(build_s1(&attacks));
        let s2 = Arc::new(build_s2(&attacks));
        let t = Instant::now();
        let mut runs = vec![];
        for profile in [Profile::D1, Profile::D2, Profile::D3] {
            let traffic = generate_traffic(profile, SCALE_FLOWS, 7);
            let distinct_dsts = traffic.flows.iter().map(|f| f.dst_addr.as_str()).collect::<BTreeSet<_>>().len();
            let events = traffic.log_events();
            let r1 = batch_verdicts(&s1, events.clone()).map_err(|e| e.to_string())?;
            let r2 = batch_verdicts(&s2, events).map_err(|e| e.to_string())?;
            runs.push(ScaleRun { profile, distinct_dsts, s1: r1, s2: r2 });
        }
        Ok((runs, t.elapsed()))
    })
}

fn s1_s2_agree() -> Outcome {
    let (runs, took) = scale_runs().as_ref().map_err(Clone::clone)?;
    for r in runs {
        ensure(r.s1.attacked == r.s2.attacked, || format!("{:?}: attacked streams differ", r.profile))?;
        ensure(r.s1.detected == r.s2.detected, || {
            format!("{:?}: detected {:?} vs {:?}", r.profile, r.s1.detected, r.s2.detected)
        })?;
    }
    ensure(*took < SCALE_BUDGET, || format!("took {took:?}"))?;
    let d1 = &runs[0];
    ensure(d1.s2.detected.len() == 1, || format!("D1 detected {:?}", d1.s2.detected))?;
    Ok(format!("D1/D2/D3 at {SCALE_FLOWS} flows, D1 detected {:?}", d1.s2.detected))
}

fn instance_counts() -> Outcome {
    let (runs, _) = scale_runs().as_ref().map_err(Clone::clone)?;
    let d2 = &runs[1];
    ensure(d2.s2.metrics.max_live_instances == 0, || {
        format!("D2 retroactive instances {}", d2.s2.metrics.max_live_instances)
    })?;
    ensure(d2.s1.metrics.max_live_instances == d2.distinct_dsts as u64, || {
        format!("D2 brute-force instances {} != {} destinations", d2.s1.metrics.max_live_instances, d2.distinct_dsts)
    })?;
    let d1 = &runs[0];
    let (m1, m2) = (d1.s1.metrics.max_live_instances, d1.s2.metrics.max_live_instances);
    ensure((m2 as f64) < INSTANCE_RATIO * m1 as f64, || format!("D1 instances {m2} vs {m1}"))?;
    Ok(format!("D2 0 vs {} instances, D1 {m2} vs {m1}", d2.distinct_dsts))
}

struct SummaryRun {
    traffic: ddos::Traffic,
    /// Per batch: victims by the flow monitor, victims by the summary
    /// monitor, nested events spent on the summary.
    batches: Vec<(i64, BTreeMap<usize, String>, BTreeMap<usize, String>, u64)>,
}

fn summary_run() -> &'static Result<SummaryRun, String> {
    static RUN: std::sync::OnceLock<Result<SummaryRun, String>> = std::sync::OnceLock::new();
    RUN.get_or_init(|| {
        let attacks = ddos::attacks();
        let traffic = generate_traffic(Profile::D4, BATCH_FLOWS, 11);
        let s2 = Arc::new(build_s2(&attacks));
        let s3 = Arc::new(build_s3(&attacks));
        let store = InMemoryStore::from_events(traffic.log_events()).map_err(|e| e.to_string())?;
        let mut m = Monitor::with_log(s3, LogAttachment::External(Box::new(store))).map_err(|e| e.to_string())?;
        let mut batches = vec![];
        for (i, s) in summarize(&traffic.flows, &attacks).iter().enumerate() {
            let flow = batch_verdicts(&s2, traffic.batch_events(s.file_id)).map_err(|e| e.to_string())?;
            let before = m.metrics().nested_events;
            let out = m.step(s.to_event(i as u64)).map_err(|e| e.to_string())?;
            let attacked = out
                .values
                .iter()
                .find(|o| o.stream == "attacked")
                .and_then(|o| o.value.as_ref().ok())
                .map(ddos::summary_victims)
                .ok_or("no `attacked` value")?;
            batches.push((s.file_id, flow.detected, attacked, m.metrics().nested_events - before));
        }
        Ok(SummaryRun { traffic, batches })
    })
}

fn summary_finds_batch() -> Outcome {
    let run = summary_run().as_ref().map_err(Clone::clone)?;
    ensure(run.batches.len() == 5, || format!("{} batches", run.batches.len()))?;
    for (id, flow, summary, _) in &run.batches {
        ensure(flow == summary, || format!("batch {id}: flow monitor {flow:?}, summary monitor {summary:?}"))?;
    }
    let hit: Vec<_> = run.batches.iter().filter(|b| !b.2.is_empty()).collect();
    ensure(hit.len() == 1, || format!("{} batches attacked", hit.len()))?;
    let truth = &run.traffic.truth;
    ensure(truth.len() == 1, || format!("{} attacks injected", truth.len()))?;
    let (id, _, victims, _) = hit[0];
    let want = BTreeMap::from([(truth[0].attack, truth[0].victim.clone())]);
    ensure(*id == truth[0].file_id && *victims == want, || {
        format!("batch {id} {victims:?}, truth {:?}", truth[0])
    })?;
    Ok(format!("batch {id} attacked on {}", truth[0].victim))
}

fn summary_replay() -> Outcome {
    let run = summary_run().as_ref().map_err(Clone::clone)?;
    let attacks = ddos::attacks();
    let truth = run.traffic.truth.first().ok_or("no attack injected")?;
    for (id, _, _, spent) in &run.batches {
        let flows: Vec<_> = run.traffic.flows.iter().filter(|f| f.file_id == *id).collect();
        if *id != truth.file_id {
            ensure(*spent == 0, || format!("benign batch {id} replayed {spent} events"))?;
            continue;
        }
        let matching = flows.iter().filter(|f| attacks[truth.attack].matches(f)).count();
        ensure(*spent <= matching as u64, || format!("batch {id}: {spent} replayed, {matching} match"))?;
        ensure((*spent as f64) < REPLAY_RATIO * flows.len() as f64, || {
            format!("batch {id}: {spent} of {} flows replayed", flows.len())
        })?;
    }
    let spent: u64 = run.batches.iter().map(|b| b.3).sum();
    Ok(format!("{spent} events replayed over {} flows", run.traffic.flows.len()))
}

fn packet_latency() -> Outcome {
    let spec = builtins::by_name("packet-window").unwrap().spec();
    let mut lags = vec![];
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rng.gen_range(100..400);
        let events = packet_trace(&mut rng, 600, Some(a));
        let run = run_online(Monitor::new(spec.clone()), events).map_err(|e| e.to_string())?;
        let first = run.outputs["traffic_ok"]
            .iter()
            .position(|v| v.as_ref().ok() == Some(&Value::Bool(false)))
            .ok_or_else(|| format!("seed {seed}: attack at {a} never detected"))?;
        ensure(first >= a && first <= a + LATENCY_BOUND, || format!("seed {seed}: attack at {a}, detected at {first}"))?;
        lags.push(first - a);
    }
    Ok(format!("lags {lags:?}"))
}

fn lifecycle() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: LIFECYCLE_CASES, failure_persistence: None, ..Config::default() });
    for retro in [false, true] {
        runner
            .run(&common::steps(24), |steps| {
                common::check_lifecycle(&steps, retro).map_err(proptest::test_runner::TestCaseError::fail)
            })
            .map_err(|e| format!("retro={retro}: {e}"))?;
    }
    // A parameter installed without an update and with nothing to replay has
    // no value, so no key.
    let s = |v: &[i64]| v.iter().copied().collect::<BTreeSet<_>>();
    let fresh = [
        common::Step { now: s(&[1]), up: s(&[1]), x: 0 },
        common::Step { now: s(&[1, 2]), up: s(&[1]), x: 0 },
    ];
    for retro in [false, true] {
        common::check_lifecycle(&fresh, retro)?;
        let got = common::model(&fresh, retro);
        ensure(!got[1].contains_key(&2), || "fresh instance has a key".into())?;
    }
    Ok(format!("{LIFECYCLE_CASES} cases, with and without initializer"))
}

fn freeze_thaw() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let all = builtins::all();
    for i in 0..FREEZE_SPLITS {
        let b = &all[i % all.len()];
        let trace = b.random_trace(rng.gen(), 120);
        let split = rng.gen_range(0..=trace.events.len());
        common::check_freeze_thaw(&b.spec(), &trace, split).map_err(|e| format!("{}: {e}", b.name))?;
    }
    Ok(format!("{FREEZE_SPLITS} splits over {} builtins", all.len()))
}

fn bools(run: &oracle::OnlineRun, stream: &str) -> Vec<Option<bool>> {
    run.outputs[stream].iter().map(|v| v.as_ref().ok().and_then(Value::as_bool)).collect()
}

fn handshake_and_files() -> Outcome {
    let spec = builtins::by_name("handshake").unwrap().spec();
    let packets: Vec<_> = handshake_packets("h1", "h2").into_iter().chain(handshake_packets("h3", "h1")).collect();
    let events: Vec<_> = packets.iter().enumerate().map(|(i, p)| handshake_event(i, p)).collect();
    let run = run_online(Monitor::new(spec.clone()), events).map_err(|e| e.to_string())?;
    let ok = bools(&run, "handshake_ok");
    ensure(ok.iter().all(|v| *v == Some(true)), || format!("valid handshakes: {ok:?}"))?;

    let [syn, _, ack] = handshake_packets("h1", "h2");
    let events = vec![handshake_event(0, &syn), handshake_event(1, &ack)];
    let run = run_online(Monitor::new(spec), events).map_err(|e| e.to_string())?;
    let ok = bools(&run, "handshake_ok");
    ensure(ok == [Some(true), Some(false)], || format!("skipped SYNACK: {ok:?}"))?;

    let fwd = builtins::by_name("openfiles").unwrap();
    let retro = builtins::by_name("retro-openfiles").unwrap().spec();
    for seed in 0..FILE_TRACES {
        let Trace { events, .. } = fwd.random_trace(seed, 150);
        let a = run_online(Monitor::new(fwd.spec()), events.clone()).map_err(|e| e.to_string())?;
        let b = run_online(Monitor::new(retro.clone()), events).map_err(|e| e.to_string())?;
        ensure(a.outputs["files_ok"] == b.outputs["files_ok"], || format!("seed {seed}: files_ok differs"))?;
    }
    Ok(format!("2 handshake traces, {FILE_TRACES} file traces"))
}
