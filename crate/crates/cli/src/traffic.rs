use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use retrolola_core::ddos::{self, generate_traffic, summarize, FlowRecord};
use retrolola_core::Event;

use crate::run::read_events;
use crate::{GenArgs, SummarizeArgs};

fn write_events(path: &Path, events: impl IntoIterator<Item = Event>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for e in events {
        writeln!(out, "{}", e.to_line()?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn truth_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".truth.json");
    PathBuf::from(p)
}

pub fn cmd_gen_traffic(args: &GenArgs) -> Result<()> {
    let traffic = generate_traffic(args.profile, args.flows, args.seed);
    write_events(&args.out, traffic.log_events())?;
    let truth = truth_path(&args.out);
    std::fs::write(&truth, serde_json::to_string_pretty(&traffic.truth)? + "\n")
        .with_context(|| format!("writing {}", truth.display()))?;
    eprintln!(
        "{} flows in {} batches, {} attacks injected",
        traffic.flows.len(),
        traffic.batches().len(),
        traffic.truth.len()
    );
    Ok(())
}

pub fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let flows = read_events(&args.input.to_string_lossy())?
        .map(|e| {
            let e = e?;
            FlowRecord::from_event(&e).ok_or_else(|| anyhow!("instant {}: not a flow record", e.instant))
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries = summarize(&flows, &ddos::attacks());
    write_events(&args.out, summaries.iter().enumerate().map(|(i, s)| s.to_event(i as u64)))
}
