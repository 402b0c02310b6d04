//! One integer class label per line.

use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};

/// Parses labels; blank lines and surrounding whitespace are ignored.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if !t.is_empty() {
            let value = t.parse::<usize>().map_err(|_| Error::Parse {
                offset,
                message: format!("expected a non-negative integer label, found {t:?}"),
            })?;
            out.push(value);
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    write_atomic(path.as_ref(), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_offsets() {
        assert_eq!(parse_labels("0\n2\r\n\n 1 \n").unwrap(), vec![0, 2, 1]);
        assert!(parse_labels("").unwrap().is_empty());
        match parse_labels("0\n1\nx\n").unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 4),
            e => panic!("{e}"),
        }
        assert!(parse_labels("-1").is_err());
    }
}
