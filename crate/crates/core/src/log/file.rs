//! Append-only log on disk.
//!
//! The store is a file of event lines. Next to it, `<store>.idx` holds the
//! byte offset (little-endian `u64`) of every [`STRIDE`]-th event so a
//! retrieval can seek close to its start. The index is derived data: it is
//! rebuilt whenever the store is opened.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{check_next, FetchRequest, LogError, LogStore, PastRetriever};
use crate::event::Event;

pub const STRIDE: u64 = 1024;

pub struct FileStore {
    path: PathBuf,
    file: File,
    index: Vec<u64>,
    len: u64,
    end: u64,
}

impl FileStore {
    /// Opens `path`, creating it if needed, and checks that its instants are
    /// `0, 1, 2, ...`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut store = FileStore { path, file, index: vec![], len: 0, end: 0 };
        store.rebuild()?;
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn index_path(&self) -> PathBuf {
        let mut p = self.path.clone().into_os_string();
        p.push(".idx");
        PathBuf::from(p)
    }

    fn rebuild(&mut self) -> Result<(), LogError> {
        let mut reader = BufReader::new(File::open(&self.path)?);
        let mut offset = 0u64;
        let mut line = String::new();
        let mut n = 0usize;
        loop {
            line.clear();
            let read = reader.read_line(&mut line)?;
            if read == 0 {
                break;
            }
            n += 1;
            if !line.ends_with('\n') {
                return Err(LogError::Malformed { line: n, msg: "truncated record".into() });
            }
            let e = Event::from_line(line.trim_end())
                .map_err(|err| LogError::Malformed { line: n, msg: err.to_string() })?;
            check_next(self.len, &e)?;
            if self.len.is_multiple_of(STRIDE) {
                self.index.push(offset);
            }
            self.len += 1;
            offset += read as u64;
        }
        self.end = offset;
        let mut idx = File::create(self.index_path())?;
        let bytes: Vec<u8> = self.index.iter().flat_map(|o| o.to_le_bytes()).collect();
        idx.write_all(&bytes)?;
        idx.flush()?;
        Ok(())
    }
}

impl PastRetriever for FileStore {
    fn retrieve(&mut self, req: &FetchRequest) -> Result<Vec<Event>, LogError> {
        let to = req.to.unwrap_or(self.len).min(self.len);
        if req.from >= to {
            return Ok(vec![]);
        }
        let block = req.from / STRIDE;
        let mut reader = BufReader::new(File::open(&self.path)?);
        reader.seek(SeekFrom::Start(self.index[block as usize]))?;
        let mut out = vec![];
        let mut line = String::new();
        let mut instant = block * STRIDE;
        while instant < to {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(LogError::Integrity(format!("store ends before instant {instant}")));
            }
            if instant >= req.from {
                let e = Event::from_line(line.trim_end()).map_err(|err| LogError::Malformed {
                    line: instant as usize + 1,
                    msg: err.to_string(),
                })?;
                if e.instant != instant {
                    return Err(LogError::Integrity(format!("expected instant {instant}, found {}", e.instant)));
                }
                if req.filter.matches(&e) {
                    out.push(e);
                }
            }
            instant += 1;
        }
        Ok(out)
    }

    fn len(&self) -> Option<u64> {
        Some(self.len)
    }
}

impl LogStore for FileStore {
    fn append(&mut self, e: &Event) -> Result<(), LogError> {
        check_next(self.len, e)?;
        let mut line = e.to_line()?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        if self.len.is_multiple_of(STRIDE) {
            self.index.push(self.end);
            let mut idx = OpenOptions::new().append(true).create(true).open(self.index_path())?;
            idx.write_all(&self.end.to_le_bytes())?;
        }
        self.end += line.len() as u64;
        self.len += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::Filter;

    #[test]
    fn reopen_rebuilds_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let mut s = FileStore::open(&path).unwrap();
            for i in 0..3000u64 {
                s.append(&Event::new(i).with("x", i as i64)).unwrap();
            }
        }
        let mut s = FileStore::open(&path).unwrap();
        assert_eq!(s.len(), Some(3000));
        let idx = std::fs::read(s.index_path()).unwrap();
        assert_eq!(idx.len(), 3 * 8);
        let got = s
            .retrieve(&FetchRequest::range(2040, 2050, Filter::all()))
            .unwrap();
        assert_eq!(got.first().unwrap().instant, 2040);
        assert_eq!(got.len(), 10);
        s.append(&Event::new(3000).with("x", 0i64)).unwrap();
        assert!(s.append(&Event::new(3005).with("x", 0i64)).is_err());
    }

    #[test]
    fn gap_on_disk_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(
            &path,
            "{\"instant\":0,\"streams\":{}}\n{\"instant\":2,\"streams\":{}}\n",
        )
        .unwrap();
        assert!(matches!(FileStore::open(&path), Err(LogError::Integrity(_))));
    }
}
