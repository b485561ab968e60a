//! On-disk formats: line-aligned `.src`/`.tgt` files, vocabulary files,
//! `i-j` alignment lines and JSON-lines label/record files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::SentencePair;
use crate::error::{Error, Result};

/// `<prefix>.<ext>`, appending rather than replacing any existing extension.
pub fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        w.write_all(l.as_ref().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads two line-aligned files; unequal line counts are an ingestion error
/// naming the first line present in only one file.
pub fn read_parallel_lines(src: &Path, tgt: &Path) -> Result<Vec<(String, String)>> {
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    if s.len() != t.len() {
        let line = s.len().min(t.len()) + 1;
        return Err(Error::Ingest {
            line,
            msg: format!(
                "{} has {} lines but {} has {}",
                src.display(),
                s.len(),
                tgt.display(),
                t.len()
            ),
        });
    }
    Ok(s.into_iter().zip(t).collect())
}

/// Reads pre-tokenised (whitespace separated) parallel files. Pair ids are
/// 1-based line numbers.
pub fn read_corpus(src: &Path, tgt: &Path) -> Result<Vec<SentencePair>> {
    Ok(read_parallel_lines(src, tgt)?
        .into_iter()
        .enumerate()
        .map(|(i, (s, t))| SentencePair::new((i + 1).to_string(), super::toks(&s), super::toks(&t)))
        .collect())
}

pub fn write_corpus(src: &Path, tgt: &Path, pairs: &[SentencePair]) -> Result<()> {
    let s: Vec<String> = pairs.iter().map(|p| p.source.join(" ")).collect();
    let t: Vec<String> = pairs.iter().map(|p| p.target.join(" ")).collect();
    write_lines(src, &s)?;
    write_lines(tgt, &t)
}

pub fn format_alignment(links: &[(usize, usize)]) -> String {
    links
        .iter()
        .map(|(i, j)| format!("{i}-{j}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_alignment(line: &str) -> Result<Vec<(usize, usize)>> {
    line.split_whitespace()
        .map(|tok| {
            let (a, b) = tok
                .split_once('-')
                .ok_or_else(|| Error::Format(format!("bad alignment link `{tok}`")))?;
            let i = a.parse().map_err(|_| Error::Format(format!("bad alignment link `{tok}`")))?;
            let j = b.parse().map_err(|_| Error::Format(format!("bad alignment link `{tok}`")))?;
            Ok((i, j))
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
