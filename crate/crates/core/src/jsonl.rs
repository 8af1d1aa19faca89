//! JSON Lines helpers shared by every file format in the crate.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Parses one value per non-blank line; errors carry the 1-based line number.
pub fn read_lines<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::parse(format!("line {}", i + 1), e.to_string()))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_lines<T: Serialize>(mut writer: impl Write, values: &[T]) -> Result<()> {
    for v in values {
        serde_json::to_writer(&mut writer, v)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_file<T: DeserializeOwned>(path: &std::path::Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    read_lines(std::io::BufReader::new(file)).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_line_numbers() {
        let input = "{\"a\":1}\n\nnot json\n";
        let err = read_lines::<serde_json::Value>(input.as_bytes()).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 3"),
            other => panic!("{other:?}"),
        }
    }
}
