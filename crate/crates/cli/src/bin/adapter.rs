//! Reference log adapter.
//!
//! Prints the events of a file store in `[from, to)` that match a filter,
//! one wire-format line each. Seeks through the `.idx` sidecar when it is
//! present and agrees with the store; scans from the start otherwise.
//!
//! Exit status: 0 on success, 2 on bad arguments, 3 on a corrupt store.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use retrolola_core::log::STRIDE;
use retrolola_core::{Event, Filter};

#[derive(Parser)]
#[command(name = "retrolola-adapter", about = "Filtered range retrieval from an event store")]
struct Args {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    from: u64,
    #[arg(long)]
    to: Option<u64>,
    #[arg(long)]
    filter: String,
    /// Words from an initializer's command template; accepted and ignored.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
    extra: Vec<String>,
}

enum Failure {
    Usage(String),
    Corrupt(String),
    Io(io::Error),
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("retrolola-adapter: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Corrupt(m)) => {
            eprintln!("retrolola-adapter: corrupt store: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(Failure::Io(e)) => {
            eprintln!("retrolola-adapter: {e}");
            ExitCode::from(3)
        }
    }
}

fn run(args: &Args) -> Result<(), Failure> {
    if !args.store.is_file() {
        return Err(Failure::Usage(format!("no store at {}", args.store.display())));
    }
    if args.to.is_some_and(|t| t < args.from) {
        return Err(Failure::Usage(format!("empty range: from {} > to {}", args.from, args.to.unwrap())));
    }
    let json = serde_json::from_str(&args.filter).map_err(|e| Failure::Usage(format!("--filter: {e}")))?;
    let filter = Filter::from_json(&json).map_err(|e| Failure::Usage(format!("--filter: {e}")))?;
    let to = args.to.unwrap_or(u64::MAX);
    if args.from >= to {
        return Ok(());
    }

    let mut reader = BufReader::new(File::open(&args.store).map_err(Failure::Io)?);
    let mut instant = seek(&mut reader, &args.store, args.from).map_err(Failure::Io)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut line = String::new();
    while instant < to {
        line.clear();
        // a range past the end is clamped, as with in-process retrieval
        if reader.read_line(&mut line).map_err(Failure::Io)? == 0 {
            break;
        }
        if !line.ends_with('\n') {
            return Err(Failure::Corrupt(format!("truncated record at instant {instant}")));
        }
        let e = Event::from_line(line.trim_end()).map_err(|e| Failure::Corrupt(format!("instant {instant}: {e}")))?;
        if e.instant != instant {
            return Err(Failure::Corrupt(format!("expected instant {instant}, found {}", e.instant)));
        }
        if instant >= args.from && filter.matches(&e) {
            let text = e.to_line().map_err(|e| Failure::Corrupt(e.to_string()))?;
            writeln!(out, "{text}").map_err(Failure::Io)?;
        }
        instant += 1;
    }
    out.flush().map_err(Failure::Io)
}

/// Positions `reader` at or before `from` and returns the instant of the
/// next line. Falls back to the start when the index is missing, short, or
/// points somewhere that is not the expected record.
fn seek(reader: &mut BufReader<File>, store: &Path, from: u64) -> io::Result<u64> {
    let mut idx_path = store.as_os_str().to_owned();
    idx_path.push(".idx");
    let Ok(bytes) = std::fs::read(PathBuf::from(idx_path)) else {
        return Ok(0);
    };
    let block = (from / STRIDE) as usize;
    let Some(raw) = bytes.chunks_exact(8).nth(block) else {
        return Ok(0);
    };
    let offset = u64::from_le_bytes(raw.try_into().unwrap());
    let expected = block as u64 * STRIDE;
    reader.seek(SeekFrom::Start(offset))?;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let ok = Event::from_line(line.trim_end()).is_ok_and(|e| e.instant == expected);
    reader.seek(SeekFrom::Start(if ok { offset } else { 0 }))?;
    Ok(if ok { expected } else { 0 })
}
