use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Writes `contents`, creating parent directories first.
pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Header line plus one line per row, every line newline-terminated.
pub fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// Left-aligned first column, right-aligned rest, two spaces between.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (k, c) in cells.iter().enumerate() {
            if k == 0 {
                s.push_str(&format!("{c:<w$}", w = widths[0]));
            } else {
                s.push_str(&format!("  {c:>w$}", w = widths[k]));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for r in rows {
        out.push_str(&line(r.iter().take(cols).map(String::as_str).collect()));
    }
    out
}
