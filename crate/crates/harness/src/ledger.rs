//! Append-only JSONL ledgers: one serialized row per line, written in a
//! deterministic order so reruns produce byte-identical files.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::mpsc;
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger io at `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad ledger row at {path}:{line}: {reason}")]
    BadRow {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Serialized appender; rows flush per line so partial runs stay readable.
pub struct LedgerWriter {
    path: String,
    file: Mutex<BufWriter<File>>,
}

impl LedgerWriter {
    /// Open for appending, creating the file (and parent dirs) if needed.
    pub fn append_to(path: impl AsRef<Path>) -> Result<LedgerWriter, LedgerError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| LedgerError::Io {
                    path: parent.display().to_string(),
                    source,
                })?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| LedgerError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(LedgerWriter {
            path: path.display().to_string(),
            file: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append<T: Serialize>(&self, row: &T) -> Result<(), LedgerError> {
        let line = serde_json::to_string(row).expect("ledger row serializes");
        let mut file = self.file.lock().unwrap();
        writeln!(file, "{line}").and_then(|_| file.flush()).map_err(|source| {
            LedgerError::Io {
                path: self.path.clone(),
                source,
            }
        })
    }
}

/// Read every row of a ledger. A missing file reads as empty, so resume
/// logic does not special-case first runs.
pub fn read_ledger<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, LedgerError> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(LedgerError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| LedgerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(&line).map_err(|e| LedgerError::BadRow {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Run `task` for indices `0..n_tasks` on up to `workers` threads and hand
/// results to `sink` strictly in index order, as soon as each prefix is
/// complete. Keeps parallel stages byte-deterministic without waiting for
/// the whole batch.
pub fn for_each_ordered<R, T, S, E>(
    n_tasks: usize,
    workers: usize,
    task: T,
    mut sink: S,
) -> Result<(), E>
where
    R: Send,
    T: Fn(usize) -> R + Sync,
    S: FnMut(usize, R) -> Result<(), E>,
{
    if n_tasks == 0 {
        return Ok(());
    }
    let workers = workers.max(1).min(n_tasks);
    if workers == 1 {
        for i in 0..n_tasks {
            sink(i, task(i))?;
        }
        return Ok(());
    }

    let next = std::sync::atomic::AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, R)>();
    let mut result: Result<(), E> = Ok(());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let task = &task;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= n_tasks {
                    break;
                }
                if tx.send((i, task(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: std::collections::BTreeMap<usize, R> = std::collections::BTreeMap::new();
        let mut expected = 0usize;
        for (i, r) in rx {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&expected) {
                if let Err(e) = sink(expected, r) {
                    result = Err(e);
                    return;
                }
                expected += 1;
            }
        }
    });
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        i: usize,
        text: String,
    }

    #[test]
    fn append_and_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let writer = LedgerWriter::append_to(&path).unwrap();
        for i in 0..3 {
            writer
                .append(&Row {
                    i,
                    text: format!("r{i}"),
                })
                .unwrap();
        }
        let rows: Vec<Row> = read_ledger(&path).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].text, "r2");
        // Appending continues an existing file.
        let writer = LedgerWriter::append_to(&path).unwrap();
        writer.append(&Row { i: 3, text: "r3".into() }).unwrap();
        let rows: Vec<Row> = read_ledger(&path).unwrap();
        assert_eq!(rows.len(), 4);
    }

    #[test]
    fn missing_ledger_reads_empty() {
        let rows: Vec<Row> = read_ledger("/nonexistent/ledger.jsonl").unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn ordered_execution_is_in_order_regardless_of_workers() {
        for workers in [1, 2, 8] {
            let mut seen = Vec::new();
            for_each_ordered::<usize, _, _, std::convert::Infallible>(
                50,
                workers,
                |i| {
                    if i % 7 == 0 {
                        std::thread::sleep(std::time::Duration::from_millis(2));
                    }
                    i * 2
                },
                |i, r| {
                    seen.push((i, r));
                    Ok(())
                },
            )
            .unwrap();
            let expected: Vec<(usize, usize)> = (0..50).map(|i| (i, i * 2)).collect();
            assert_eq!(seen, expected, "workers={workers}");
        }
    }
}
