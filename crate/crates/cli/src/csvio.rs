//! CSV output with a manifest-digest comment line, and the matching
//! reader.

use std::fmt::Write as _;
use std::path::Path;

use crate::{CliError, CliResult};
use greco_core::Error;

/// First line `# manifest_digest = <hex>`, then the header, then rows.
pub fn render_csv(digest: &str, header: &str, rows: &[String]) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "# manifest_digest = {digest}");
    let _ = writeln!(text, "{header}");
    for row in rows {
        let _ = writeln!(text, "{row}");
    }
    text
}

pub fn write_csv(path: &Path, digest: &str, header: &str, rows: &[String]) -> CliResult<()> {
    std::fs::write(path, render_csv(digest, header, rows)).map_err(|e| CliError::Core(e.into()))
}

/// Reads a CSV, skipping comment and blank lines. Every row must have
/// as many fields as the header.
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Core(Error::InvalidParameter(format!("{}: {e}", path.display())))
    })?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| {
            CliError::Core(Error::InvalidParameter(format!(
                "{}: missing CSV header",
                path.display()
            )))
        })?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() != header.len() {
            return Err(CliError::Core(Error::InvalidParameter(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                i + 1,
                fields.len(),
                header.len()
            ))));
        }
        rows.push(fields);
    }
    Ok((header, rows))
}

/// Column index by header name.
pub fn column(header: &[String], name: &str, path: &Path) -> CliResult<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| {
        CliError::Core(Error::InvalidParameter(format!(
            "{}: missing column {name:?}",
            path.display()
        )))
    })
}

pub fn parse_field<T: std::str::FromStr>(field: &str, name: &str, path: &Path) -> CliResult<T> {
    field.parse().map_err(|_| {
        CliError::Core(Error::InvalidParameter(format!(
            "{}: bad {name} value {field:?}",
            path.display()
        )))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(
            &path,
            "abc123",
            "step,loss",
            &["0,2.5".into(), "1,2.25".into()],
        )
        .unwrap();
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["step", "loss"]);
        assert_eq!(rows, vec![vec!["0", "2.5"], vec!["1", "2.25"]]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# manifest_digest = abc123\n"));
    }

    #[test]
    fn header_only_file_reads_as_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, "d", "a,b", &[]).unwrap();
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header.len(), 2);
        assert!(rows.is_empty());
    }

    #[test]
    fn comment_only_file_is_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "# manifest_digest = x\n").unwrap();
        assert!(read_csv(&path).is_err());
    }

    #[test]
    fn ragged_row_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "a,b\n1,2\n3\n").unwrap();
        assert!(read_csv(&path).is_err());
    }
}
