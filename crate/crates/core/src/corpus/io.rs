use std::io::{BufRead, Read, Write};

use super::Vocabulary;
use crate::error::{Error, Result};

/// `token<TAB>count` per line; the line number is the id.
pub fn write_vocab<W: Write>(vocab: &Vocabulary, mut out: W) -> Result<()> {
    for (token, count) in vocab.tokens().iter().zip(vocab.counts()) {
        writeln!(out, "{token}\t{count}")?;
    }
    Ok(())
}

pub fn read_vocab<R: BufRead>(input: R) -> Result<Vocabulary> {
    let mut entries = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (token, count) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("vocab line {}: missing tab", lineno + 1)))?;
        let count: u64 = count.trim().parse().map_err(|_| {
            Error::Format(format!("vocab line {}: bad count '{count}'", lineno + 1))
        })?;
        entries.push((token.to_string(), count));
    }
    let min_count = entries.iter().map(|e| e.1).min().unwrap_or(0);
    Vocabulary::from_entries(entries, min_count)
}

/// Little-endian `(u32 word, u32 context)` records.
pub fn write_pairs<W, I>(pairs: I, mut out: W) -> Result<u64>
where
    W: Write,
    I: IntoIterator<Item = (u32, u32)>,
{
    let mut n = 0;
    for (w, c) in pairs {
        out.write_all(&w.to_le_bytes())?;
        out.write_all(&c.to_le_bytes())?;
        n += 1;
    }
    Ok(n)
}

pub fn read_pairs<R: Read>(mut input: R) -> Result<Vec<(u32, u32)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "pair file length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|rec| {
            let w = u32::from_le_bytes(rec[..4].try_into().expect("4 bytes"));
            let c = u32::from_le_bytes(rec[4..].try_into().expect("4 bytes"));
            (w, c)
        })
        .collect())
}
