//! Retrieval through an external adapter process.
//!
//! The adapter is invoked as
//! `<program> [args..] --store <path> --from <n> [--to <n>] --filter <json> [extra..]`
//! and must print the matching events on stdout, one wire-format line each,
//! in increasing instant order, then exit with status 0. Any other status
//! discards the output. `extra` comes from the initializer's command template.

use std::path::PathBuf;
use std::process::Command;

use super::{FetchRequest, LogError, PastRetriever};
use crate::event::{value_to_json, Event};

#[derive(Clone, Debug)]
pub struct AdapterProcess {
    program: PathBuf,
    args: Vec<String>,
    store: PathBuf,
}

impl AdapterProcess {
    pub fn new(program: impl Into<PathBuf>, store: impl Into<PathBuf>) -> Self {
        AdapterProcess { program: program.into(), args: vec![], store: store.into() }
    }

    /// Arguments placed before the contract arguments (e.g. a script path).
    pub fn with_args(mut self, args: impl IntoIterator<Item = String>) -> Self {
        self.args.extend(args);
        self
    }

    fn command(&self, req: &FetchRequest) -> Command {
        let filter = req.filter.to_json().to_string();
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .arg("--store")
            .arg(&self.store)
            .arg("--from")
            .arg(req.from.to_string());
        if let Some(to) = req.to {
            cmd.arg("--to").arg(to.to_string());
        }
        cmd.arg("--filter").arg(&filter);
        if let Some(template) = &req.command {
            let param = req
                .param
                .as_ref()
                .and_then(|p| value_to_json(p).ok())
                .map(|j| j.to_string())
                .unwrap_or_default();
            for word in template.split_whitespace() {
                cmd.arg(
                    word.replace("{param}", &param)
                        .replace("{from}", &req.from.to_string())
                        .replace("{to}", &req.to.map_or(String::new(), |t| t.to_string()))
                        .replace("{filter}", &filter),
                );
            }
        }
        cmd
    }
}

impl PastRetriever for AdapterProcess {
    fn retrieve(&mut self, req: &FetchRequest) -> Result<Vec<Event>, LogError> {
        let out = self.command(req).output()?;
        if !out.status.success() {
            return Err(LogError::Adapter {
                status: out.status.to_string(),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        let text = String::from_utf8(out.stdout)
            .map_err(|e| LogError::Malformed { line: 0, msg: e.to_string() })?;
        let mut events = vec![];
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = Event::from_line(line).map_err(|err| LogError::Malformed { line: i + 1, msg: err.to_string() })?;
            events.push(e);
        }
        req.verify(&events)?;
        Ok(events)
    }

    fn len(&self) -> Option<u64> {
        None
    }
}
