use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use retrolola_core::event::value_to_json;
use retrolola_core::{
    builtins, ddos, oracle, validate_with, AdapterProcess, Event, FileStore, LogAttachment, LogStore, Metrics,
    Monitor, OutputValue, PastRetriever, Slot, Specification, ValidatedSpec, Value, Verdict,
};
use serde_json::{json, Value as Json};

use crate::{CheckArgs, OutputFormat, RunArgs};

/// Outcome of a successful command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Clean,
    Violated,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Clean => 0,
            Status::Violated => 1,
        }
    }
}

/// Whether an output value is a violation: a Boolean stream named `*_ok`
/// that is false (directly or as a present optional).
pub fn is_violation(stream: &str, value: &Slot) -> bool {
    stream.ends_with("_ok") && value.as_ref().is_ok_and(is_false)
}

/// Whether a verdict returns false.
pub fn verdict_violates(v: &Verdict) -> bool {
    v.value().is_some_and(|s| s.as_ref().is_ok_and(is_false))
}

fn is_false(v: &Value) -> bool {
    match v {
        Value::Bool(b) => !b,
        Value::Optional(Some(inner)) => is_false(inner),
        _ => false,
    }
}

pub fn load_spec(name: &str) -> Result<Arc<ValidatedSpec>> {
    if let Some(b) = builtins::by_name(name) {
        return Ok(b.spec());
    }
    let path = Path::new(name);
    if !path.is_file() {
        let known: Vec<_> = builtins::names().collect();
        bail!("`{name}` is neither a builtin ({}) nor a file", known.join(", "));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: Specification =
        serde_json::from_str(&text).with_context(|| format!("parsing specification {}", path.display()))?;
    let checked = validate_with(spec, ddos::registry(&ddos::attacks()))
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok(Arc::new(checked))
}

/// Lazily reads a trace, reporting the line of any malformed record.
pub fn read_events(input: &str) -> Result<impl Iterator<Item = Result<Event>>> {
    let reader: Box<dyn BufRead> = if input == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(File::open(input).with_context(|| format!("opening {input}"))?))
    };
    Ok(reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(anyhow!("line {}: {e}", i + 1))),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Event::from_line(&l).map_err(|e| anyhow!("line {}: {e}", i + 1))),
    }))
}

fn adapter(cmd: &str, store: &Path) -> Result<AdapterProcess> {
    let mut words = cmd.split_whitespace().map(str::to_string);
    let program = words.next().ok_or_else(|| anyhow!("--adapter is empty"))?;
    Ok(AdapterProcess::new(program, store).with_args(words))
}

fn attach(spec: &Arc<ValidatedSpec>, args: &RunArgs) -> Result<Monitor> {
    let past = args.spec.past.as_deref();
    if spec.uses_log() && past.is_none() && args.log_store.is_none() {
        bail!("`{}` retrieves past events; give --log-store or --past", spec.name());
    }
    if past.is_some() && args.log_store.is_some() {
        bail!("--past and --log-store are exclusive");
    }
    let (log, store) = match (past, &args.log_store) {
        (Some(p), _) => {
            let reader: Box<dyn PastRetriever> = match &args.adapter {
                Some(cmd) => Box::new(adapter(cmd, p)?),
                None => Box::new(FileStore::open(p).with_context(|| format!("opening {}", p.display()))?),
            };
            (LogAttachment::External(reader), Some(p.to_path_buf()))
        }
        (None, Some(dir)) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("trace.log");
            let store = FileStore::open(&path).with_context(|| format!("opening {}", path.display()))?;
            if store.len() != Some(0) {
                bail!("{} already holds events", path.display());
            }
            (LogAttachment::Own(Box::new(store) as Box<dyn LogStore>), Some(path))
        }
        (None, None) => (LogAttachment::None, None),
    };
    let mut monitor = Monitor::with_log(spec.clone(), log)?;
    if let (Some(cmd), Some(store)) = (&args.adapter, store) {
        monitor = monitor.with_adapter(Box::new(adapter(cmd, &store)?));
    } else if args.adapter.is_some() {
        bail!("--adapter needs a store: give --log-store or --past");
    }
    Ok(monitor)
}

fn slot_json(s: &Slot) -> Json {
    match s {
        Ok(v) => value_to_json(v).unwrap_or_else(|e| json!({ "error": e.to_string() })),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn verdict_json(v: &Verdict) -> Json {
    match v {
        Verdict::Returned { instant, value } => json!({ "returned": slot_json(value), "instant": instant }),
        Verdict::Finished { value } => json!({ "finished": slot_json(value) }),
        Verdict::Empty => json!({ "empty": true }),
    }
}

/// Writes output values and collects violations as instants complete.
struct Sink<W: Write> {
    out: W,
    format: OutputFormat,
    pending: Option<(u64, serde_json::Map<String, Json>)>,
    violations: Vec<(u64, String)>,
}

impl<W: Write> Sink<W> {
    fn push(&mut self, values: Vec<OutputValue>) -> Result<()> {
        for v in values {
            if is_violation(&v.stream, &v.value) {
                self.violations.push((v.instant, v.stream.clone()));
                if self.format == OutputFormat::Verdicts {
                    writeln!(self.out, "{}", json!({ "instant": v.instant, "violation": v.stream }))?;
                }
            }
            if self.format == OutputFormat::Full {
                if self.pending.as_ref().is_some_and(|(u, _)| *u != v.instant) {
                    self.flush_instant()?;
                }
                let (_, row) = self.pending.get_or_insert_with(|| (v.instant, Default::default()));
                row.insert(v.stream, slot_json(&v.value));
            }
        }
        Ok(())
    }

    fn flush_instant(&mut self) -> Result<()> {
        if let Some((u, row)) = self.pending.take() {
            writeln!(self.out, "{}", json!({ "instant": u, "outputs": row }))?;
        }
        Ok(())
    }
}

fn report(
    path: &Path,
    spec: &ValidatedSpec,
    verdict: Option<&Verdict>,
    violations: &[(u64, String)],
    metrics: &Metrics,
) -> Result<()> {
    let doc = json!({
        "spec": spec.name(),
        "hash": spec.hash(),
        "verdict": verdict.map(verdict_json),
        "violations": violations.iter().map(|(u, s)| json!({ "instant": u, "stream": s })).collect::<Vec<_>>(),
        "metrics": serde_json::to_value(metrics)?,
    });
    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_run(args: &RunArgs) -> Result<Status> {
    let spec = load_spec(&args.spec.spec)?;
    let mut monitor = attach(&spec, args)?;
    let stdout = io::stdout();
    let mut sink = Sink { out: BufWriter::new(stdout.lock()), format: args.output, pending: None, violations: vec![] };
    let mut verdict = None;
    for e in read_events(&args.spec.input)? {
        let e = e?;
        let instant = e.instant;
        let out = monitor.step(e).with_context(|| format!("instant {instant}"))?;
        sink.push(out.values)?;
        if out.verdict.is_some() {
            verdict = out.verdict;
            break;
        }
    }
    if verdict.is_none() {
        let out = monitor.finish()?;
        sink.push(out.values)?;
        verdict = out.verdict;
    }
    sink.flush_instant()?;
    if let Some(v) = &verdict {
        writeln!(sink.out, "{}", json!({ "verdict": verdict_json(v) }))?;
    }
    sink.out.flush()?;
    if let Some(path) = &args.report {
        report(path, &spec, verdict.as_ref(), &sink.violations, monitor.metrics())?;
    }
    let violated = !sink.violations.is_empty() || verdict.as_ref().is_some_and(verdict_violates);
    Ok(if violated { Status::Violated } else { Status::Clean })
}

fn read_all(input: &str) -> Result<Vec<Event>> {
    read_events(input)?.collect()
}

pub fn cmd_oracle_check(args: &CheckArgs) -> Result<Status> {
    let spec = load_spec(&args.spec.spec)?;
    let events = read_all(&args.spec.input)?;
    let log = match &args.spec.past {
        Some(p) => Some(read_all(&p.to_string_lossy())?),
        None => None,
    };
    let trace = builtins::Trace { events, log };
    let n = trace.events.len();
    match oracle::check(&spec, &trace) {
        Ok(()) => {
            println!("pass: {n} events, online and offline agree");
            Ok(Status::Clean)
        }
        Err(oracle::OracleError::Divergence(d)) => {
            println!("fail: {d}");
            Ok(Status::Violated)
        }
        Err(e) => Err(e.into()),
    }
}
