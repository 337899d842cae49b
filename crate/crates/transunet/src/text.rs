//! Whitespace-token scanning with byte offsets, shared by the text headers.

use std::path::Path;

use crate::error::{Error, Result};

/// Splits `line` (starting at byte `base` of the file) into tokens with their offsets.
pub(crate) fn tokens(line: &str, base: usize) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_ascii_whitespace(), start) {
            (true, Some(s)) => {
                out.push((base + s, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((base + s, &line[s..]));
    }
    out
}

pub(crate) fn parse_num<N: std::str::FromStr>(path: &Path, (offset, tok): (usize, &str), what: &str) -> Result<N> {
    tok.parse().map_err(|_| Error::parse(path, offset, format!("invalid {what} '{tok}'")))
}
