//! Small JSONL helpers used by every stage artifact.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::hash::sha256_hex;

/// Serialize items one per line and atomically replace `path`
/// (write-temp-then-rename).
pub fn write_jsonl_atomic<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).map_err(std::io::Error::other)?);
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

/// Atomically replace `path` with `bytes`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Read a JSONL file strictly: any malformed line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> std::io::Result<Vec<T>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::other(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Read a JSONL file tolerantly: malformed lines are returned alongside
/// their line numbers instead of failing the whole read.
pub fn read_jsonl_lossy<T: DeserializeOwned>(
    path: &Path,
) -> std::io::Result<(Vec<T>, Vec<(usize, String)>)> {
    let file = fs::File::open(path)?;
    let mut items = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(item) => items.push(item),
            Err(e) => bad.push((i + 1, e.to_string())),
        }
    }
    Ok((items, bad))
}

/// Append one record to a JSONL log (non-atomic; logs only).
pub fn append_jsonl<T: Serialize>(path: &Path, item: &T) -> std::io::Result<()> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{}", serde_json::to_string(item).map_err(std::io::Error::other)?)
}

/// SHA-256 of a file's bytes, for stage checksums.
pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        a: u32,
        b: String,
    }

    #[test]
    fn round_trip_and_byte_stability() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let rows = vec![Row { a: 1, b: "x".into() }, Row { a: 2, b: "y".into() }];
        write_jsonl_atomic(&path, &rows).unwrap();
        let first = fs::read(&path).unwrap();
        write_jsonl_atomic(&path, &rows).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        let back: Vec<Row> = read_jsonl(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn lossy_read_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        fs::write(&path, "{\"a\":1,\"b\":\"x\"}\nnot json\n{\"a\":2,\"b\":\"y\"}\n").unwrap();
        let (items, bad): (Vec<Row>, _) = read_jsonl_lossy(&path).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].0, 2);
    }
}
