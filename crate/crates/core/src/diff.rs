//! Unified diff parsing into a two-sided change set.
//!
//! Deleted lines are anchored in v1 numbering, added lines in v2
//! numbering. Context lines only advance the counters. Git extended
//! headers (`diff --git`, `rename from/to`, `Binary files ... differ`) are
//! understood; renamed files mark both paths as touched.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{normalize_path, LineRef, Version};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub deletions: BTreeSet<LineRef>,
    pub additions: BTreeSet<LineRef>,
    pub touched_files: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.deletions.is_empty() && self.additions.is_empty()
    }

    /// Deletions followed by additions, each in (file, line) order.
    pub fn changed_lines(&self) -> impl Iterator<Item = &LineRef> {
        self.deletions.iter().chain(self.additions.iter())
    }

    pub fn line_count(&self) -> usize {
        self.deletions.len() + self.additions.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("diff parse error at line {line}, column {column}: {message}")]
pub struct DiffParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

struct Hunk {
    old_next: u32,
    new_next: u32,
    old_left: u32,
    new_left: u32,
}

#[derive(Default)]
struct FileState {
    old_path: Option<String>,
    new_path: Option<String>,
}

/// Parses `text` as a unified diff.
pub fn parse_unified_diff(text: &str) -> Result<ChangeSet, DiffParseError> {
    let mut out = ChangeSet::default();
    let mut file = FileState::default();
    let mut hunk: Option<Hunk> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let err = |column: usize, message: String| DiffParseError { line: lineno, column, message };

        if let Some(h) = hunk.as_mut() {
            if h.old_left > 0 || h.new_left > 0 {
                let (marker, _) = raw.split_at(raw.len().min(1));
                match marker {
                    "-" if h.old_left > 0 => {
                        let path = file.old_path.as_deref().ok_or_else(|| err(1, "deleted line in a file without an old path".into()))?;
                        out.deletions.insert(line_ref(path, h.old_next, Version::V1, lineno)?);
                        h.old_next += 1;
                        h.old_left -= 1;
                    }
                    "+" if h.new_left > 0 => {
                        let path = file.new_path.as_deref().ok_or_else(|| err(1, "added line in a file without a new path".into()))?;
                        out.additions.insert(line_ref(path, h.new_next, Version::V2, lineno)?);
                        h.new_next += 1;
                        h.new_left -= 1;
                    }
                    // some tools strip the single space of empty context lines
                    " " | "" if h.old_left > 0 && h.new_left > 0 => {
                        h.old_next += 1;
                        h.new_next += 1;
                        h.old_left -= 1;
                        h.new_left -= 1;
                    }
                    "\\" => {}
                    _ => {
                        return Err(err(1, format!(
                            "unexpected hunk line `{raw}` ({} old and {} new lines still expected)",
                            h.old_left, h.new_left
                        )))
                    }
                }
                continue;
            }
            if raw.starts_with('\\') {
                continue;
            }
            hunk = None;
        }

        if let Some(rest) = raw.strip_prefix("diff --git ") {
            file = FileState::default();
            if let Some((a, b)) = split_git_paths(rest) {
                file.old_path = Some(a);
                file.new_path = Some(b);
            }
        } else if let Some(rest) = raw.strip_prefix("--- ") {
            file.old_path = header_path(rest, 'a');
        } else if let Some(rest) = raw.strip_prefix("+++ ") {
            file.new_path = header_path(rest, 'b');
            touch(&mut out, &file, lineno)?;
        } else if let Some(rest) = raw.strip_prefix("rename from ") {
            file.old_path = Some(rest.trim().to_owned());
            touch(&mut out, &file, lineno)?;
        } else if let Some(rest) = raw.strip_prefix("rename to ") {
            file.new_path = Some(rest.trim().to_owned());
            touch(&mut out, &file, lineno)?;
        } else if raw.starts_with("Binary files ") || raw == "GIT binary patch" {
            touch(&mut out, &file, lineno)?;
            let msg = format!("line {lineno}: binary hunk ignored ({raw})");
            log::warn!("{msg}");
            out.warnings.push(msg);
        } else if raw.starts_with("@@") {
            hunk = Some(parse_hunk_header(raw).map_err(|(column, message)| err(column, message))?);
            touch(&mut out, &file, lineno)?;
        }
        // everything else (index lines, mode changes, commit messages) carries no line information
    }

    if let Some(h) = hunk {
        if h.old_left > 0 || h.new_left > 0 {
            return Err(DiffParseError {
                line: text.lines().count(),
                column: 1,
                message: format!("truncated hunk: {} old and {} new lines missing", h.old_left, h.new_left),
            });
        }
    }
    Ok(out)
}

fn line_ref(path: &str, line: u32, version: Version, lineno: usize) -> Result<LineRef, DiffParseError> {
    LineRef::new(path, line, version).map_err(|e| DiffParseError {
        line: lineno,
        column: 1,
        message: e.to_string(),
    })
}

fn touch(out: &mut ChangeSet, file: &FileState, lineno: usize) -> Result<(), DiffParseError> {
    for p in [&file.old_path, &file.new_path].into_iter().flatten() {
        let norm = normalize_path(p).map_err(|e| DiffParseError {
            line: lineno,
            column: 1,
            message: e.to_string(),
        })?;
        out.touched_files.insert(norm);
    }
    Ok(())
}

/// `a/x b/y` from a `diff --git` line. Paths containing spaces are
/// ambiguous there; the `---`/`+++` headers override this guess.
fn split_git_paths(rest: &str) -> Option<(String, String)> {
    let idx = rest.find(" b/")?;
    let a = rest[..idx].trim();
    let b = rest[idx + 1..].trim();
    Some((strip_prefix_dir(a, 'a').to_owned(), strip_prefix_dir(b, 'b').to_owned()))
}

fn strip_prefix_dir(p: &str, side: char) -> &str {
    let p = p.trim_matches('"');
    match p.strip_prefix(side).and_then(|r| r.strip_prefix('/')) {
        Some(r) => r,
        None => p,
    }
}

fn header_path(rest: &str, side: char) -> Option<String> {
    // drop a trailing timestamp separated by a tab
    let p = rest.split('\t').next().unwrap_or(rest).trim_end();
    if p == "/dev/null" {
        return None;
    }
    Some(strip_prefix_dir(p, side).to_owned())
}

fn parse_hunk_header(raw: &str) -> Result<Hunk, (usize, String)> {
    let body = raw
        .strip_prefix("@@ ")
        .ok_or((1, format!("malformed hunk header `{raw}`")))?;
    let end = body.find(" @@").ok_or((raw.len(), "hunk header missing closing `@@`".to_owned()))?;
    let ranges = &body[..end];
    let mut parts = ranges.split(' ');
    let old = parts.next().unwrap_or("");
    let new = parts.next().unwrap_or("");
    let old_col = 4;
    let new_col = 4 + old.len() + 1;
    let (old_start, old_len) = parse_range(old, '-').ok_or((old_col, format!("bad old range `{old}`")))?;
    let (new_start, new_len) = parse_range(new, '+').ok_or((new_col, format!("bad new range `{new}`")))?;
    if parts.next().is_some() {
        return Err((new_col + new.len() + 1, "unexpected extra range in hunk header".into()));
    }
    Ok(Hunk {
        // an empty side reports the line *before* the hunk
        old_next: if old_len == 0 { old_start + 1 } else { old_start },
        new_next: if new_len == 0 { new_start + 1 } else { new_start },
        old_left: old_len,
        new_left: new_len,
    })
}

fn parse_range(s: &str, sign: char) -> Option<(u32, u32)> {
    let s = s.strip_prefix(sign)?;
    match s.split_once(',') {
        Some((start, len)) => Some((start.parse().ok()?, len.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}
