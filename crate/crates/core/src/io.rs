//! Plain-text file formats.
//!
//! * matrix: a `rows cols` header, then one whitespace-separated row per line
//! * labels: one integer per line, `1`/`0`, with `-1` for outliers
//! * edges: `u v [w]` per line, weight defaulting to 1
//! * index lists and flags: one integer per line
//!
//! Blank lines and `#` comments are ignored on read, except in the matrix
//! body. All writers go through [`write_atomic`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Writes to a sibling temporary file, then renames it into place, so a
/// reader never sees a half-written file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| with_path(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, contents).map_err(|e| with_path(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| with_path(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| with_path(path, e))
}

/// Non-blank, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_field<T: FromStr>(path: &Path, line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse().map_err(|_| parse_err(path, line, format!("bad {what} '{tok}'")))
}

/// `{:.16e}` keeps 17 significant digits, enough to round-trip any f64.
pub fn format_matrix(a: &Matrix) -> String {
    let mut s = format!("{} {}\n", a.nrows(), a.ncols());
    for row in a.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_matrix(path: &Path, text: &str) -> Result<Matrix> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(path, 1, "missing 'rows cols' header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(path, hline, "header must be 'rows cols'"));
    }
    let rows: usize = parse_field(path, hline, dims[0], "row count")?;
    let cols: usize = parse_field(path, hline, dims[1], "column count")?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (ln, line) in lines {
        if seen == rows {
            return Err(parse_err(path, ln, format!("more than {rows} rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = parse_field(path, ln, tok, "number")?;
            if !v.is_finite() {
                return Err(parse_err(path, ln, format!("non-finite value '{tok}'")));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(parse_err(path, ln, format!("expected {cols} values, found {}", data.len() - before)));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(parse_err(path, text.lines().count().max(1), format!("expected {rows} rows, found {seen}")));
    }
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

pub fn write_matrix(path: &Path, a: &Matrix) -> Result<()> {
    write_atomic(path, &format_matrix(a))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    parse_matrix(path, &read_text(path)?)
}

pub fn format_labels(labels: &[Option<bool>]) -> String {
    labels
        .iter()
        .map(|l| match l {
            Some(true) => "1\n",
            Some(false) => "0\n",
            None => "-1\n",
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<Option<bool>>> {
    content_lines(&read_text(path)?)
        .map(|(ln, l)| match l {
            "1" => Ok(Some(true)),
            "0" => Ok(Some(false)),
            "-1" => Ok(None),
            other => Err(parse_err(path, ln, format!("label must be 1, 0 or -1, got '{other}'"))),
        })
        .collect()
}

pub fn format_edges(node_count: usize, edges: &[(usize, usize, f64)]) -> String {
    let mut s = format!("# {node_count} nodes\n");
    for (u, v, w) in edges {
        let _ = writeln!(s, "{u} {v} {w:.16e}");
    }
    s
}

pub fn parse_edges(path: &Path, text: &str) -> Result<Vec<(usize, usize, f64)>> {
    content_lines(text)
        .map(|(ln, l)| {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if !(2..=3).contains(&toks.len()) {
                return Err(parse_err(path, ln, "edge line must be 'u v [w]'"));
            }
            let u = parse_field(path, ln, toks[0], "node index")?;
            let v = parse_field(path, ln, toks[1], "node index")?;
            let w = match toks.get(2) {
                Some(t) => parse_field(path, ln, t, "weight")?,
                None => 1.0,
            };
            Ok((u, v, w))
        })
        .collect()
}

pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    parse_edges(path, &read_text(path)?)
}

pub fn format_indices(idx: &[usize]) -> String {
    idx.iter().map(|i| format!("{i}\n")).collect()
}

pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
    content_lines(&read_text(path)?).map(|(ln, l)| parse_field(path, ln, l, "index")).collect()
}

pub fn format_flags(flags: &[bool]) -> String {
    flags.iter().map(|f| if *f { "1\n" } else { "0\n" }).collect()
}

pub fn read_flags(path: &Path) -> Result<Vec<bool>> {
    content_lines(&read_text(path)?)
        .map(|(ln, l)| match l {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(parse_err(path, ln, format!("flag must be 0 or 1, got '{other}'"))),
        })
        .collect()
}

/// Tab-separated table with a header row.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join("\t");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join("\t"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let a = Matrix::from_row_slice(2, 3, &[0.1, -1e-300, 1.0 / 3.0, 12345.678, f64::MIN_POSITIVE, -0.0]);
        let b = parse_matrix(Path::new("m"), &format_matrix(&a)).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn matrix_errors_cite_lines() {
        let e = parse_matrix(Path::new("m"), "2 2\n1 2\n3 x\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_matrix(Path::new("m"), "2 2\n1 2 3\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(parse_matrix(Path::new("m"), "2 2\n1 2\n").is_err());
        assert!(parse_matrix(Path::new("m"), "").is_err());
    }

    #[test]
    fn edges_parse_with_comments_and_default_weight() {
        let e = parse_edges(Path::new("e"), "# header\n0 1\n\n1 2 0.5 # note\n").unwrap();
        assert_eq!(e, vec![(0, 1, 1.0), (1, 2, 0.5)]);
    }

    #[test]
    fn malformed_edge_cites_line() {
        let e = parse_edges(Path::new("edges.txt"), "0 1\na b\n").unwrap_err();
        assert_eq!(e.category(), "parse");
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(e.to_string().contains("edges.txt:2"));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/labels.txt");
        let labels = vec![Some(true), None, Some(false)];
        write_atomic(&p, &format_labels(&labels)).unwrap();
        assert_eq!(read_labels(&p).unwrap(), labels);
        assert!(!dir.path().join("sub/labels.txt.tmp").exists());

        let f = dir.path().join("flags.txt");
        write_atomic(&f, &format_flags(&[true, false])).unwrap();
        assert_eq!(read_flags(&f).unwrap(), vec![true, false]);

        let i = dir.path().join("idx.txt");
        write_atomic(&i, &format_indices(&[4, 0, 2])).unwrap();
        assert_eq!(read_indices(&i).unwrap(), vec![4, 0, 2]);
    }

    #[test]
    fn missing_file_is_io_error() {
        let e = read_matrix(Path::new("/nonexistent/x.txt")).unwrap_err();
        assert_eq!(e.category(), "io");
        assert!(e.to_string().contains("/nonexistent/x.txt"));
    }
}
