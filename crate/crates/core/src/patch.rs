//! Commit/patch parsing and reconstruction of the unpatched and patched
//! source streams.
//!
//! Accepts `git format-patch` mails, `git show` / `git log -p` output and
//! raw unified diffs. Hunk bodies are read by their declared line counts, so
//! trailers such as the `-- ` mail signature never leak into a hunk.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PatchError {
    #[error("malformed patch: {0}")]
    MalformedPatch(String),
    #[error("hunk {hunk} of {file}: declared -{old_count},+{new_count} but body has -{old_seen},+{new_seen}")]
    HunkCountMismatch {
        file: String,
        hunk: usize,
        old_count: usize,
        new_count: usize,
        old_seen: usize,
        new_seen: usize,
    },
}

/// Ground-truth class of a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NonSecurity,
    Security,
}

impl Label {
    /// Class index used by the classifier head (security is the positive class).
    pub fn index(self) -> usize {
        match self {
            Label::NonSecurity => 0,
            Label::Security => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 1 {
            Label::Security
        } else {
            Label::NonSecurity
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonSecurity => "non_security",
            Label::Security => "security",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "security" | "sec" | "1" => Ok(Label::Security),
            "non_security" | "nonsecurity" | "non_sec" | "0" => Ok(Label::NonSecurity),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Marker {
    Added,
    Removed,
    Context,
}

/// Per-line diff type: -1 deleted, 0 context, +1 added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum DiffType {
    Removed,
    Context,
    Added,
}

impl DiffType {
    pub fn value(self) -> i8 {
        match self {
            DiffType::Removed => -1,
            DiffType::Context => 0,
            DiffType::Added => 1,
        }
    }
}

impl From<DiffType> for i8 {
    fn from(d: DiffType) -> i8 {
        d.value()
    }
}

impl TryFrom<i8> for DiffType {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(DiffType::Removed),
            0 => Ok(DiffType::Context),
            1 => Ok(DiffType::Added),
            _ => Err(format!("invalid diff type {v}")),
        }
    }
}

impl From<Marker> for DiffType {
    fn from(m: Marker) -> DiffType {
        match m {
            Marker::Added => DiffType::Added,
            Marker::Removed => DiffType::Removed,
            Marker::Context => DiffType::Context,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub content: String,
    pub marker: Marker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_count: usize,
    pub new_start: usize,
    pub new_count: usize,
    pub lines: Vec<DiffLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub old_path: String,
    pub new_path: String,
    pub hunks: Vec<Hunk>,
}

const C_FAMILY_EXTENSIONS: &[&str] = &["c", "h", "cc", "cpp", "cxx", "hpp", "hh"];

impl FileDiff {
    /// The path that names the file after the change, or before it for deletions.
    pub fn path(&self) -> &str {
        if self.new_path == "/dev/null" {
            &self.old_path
        } else {
            &self.new_path
        }
    }

    pub fn is_c_family(&self) -> bool {
        let path = self.path();
        match path.rsplit_once('.') {
            Some((_, ext)) => C_FAMILY_EXTENSIONS
                .iter()
                .any(|e| e.eq_ignore_ascii_case(ext)),
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchFile {
    pub commit_id: Option<String>,
    pub message: String,
    pub file_diffs: Vec<FileDiff>,
    pub label: Option<Label>,
}

impl PatchFile {
    pub fn hunk_count(&self) -> usize {
        self.file_diffs.iter().map(|f| f.hunks.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeLine {
    pub content: String,
    pub diff_type: DiffType,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructedPair {
    pub unpatched: Vec<CodeLine>,
    pub patched: Vec<CodeLine>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReconstructOptions {
    /// Keep files outside the C/C++ extension set.
    pub include_all_files: bool,
}

fn is_commit_hash(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

/// Parse raw bytes, replacing invalid UTF-8 sequences.
pub fn parse_patch_bytes(bytes: &[u8]) -> Result<PatchFile, PatchError> {
    parse_patch(&String::from_utf8_lossy(bytes))
}

pub fn parse_patch(text: &str) -> Result<PatchFile, PatchError> {
    let lines: Vec<&str> = split_lines(text);
    let diff_start = find_diff_start(&lines).ok_or_else(|| {
        PatchError::MalformedPatch("no `diff --git` header or `---`/`+++` pair found".into())
    })?;
    let (commit_id, message) = parse_header(&lines[..diff_start]);
    let file_diffs = parse_diffs(&lines[diff_start..])?;
    Ok(PatchFile {
        commit_id,
        message,
        file_diffs,
        label: None,
    })
}

fn split_lines(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines
}

fn strip_cr(line: &str) -> &str {
    line.strip_suffix('\r').unwrap_or(line)
}

fn find_diff_start(lines: &[&str]) -> Option<usize> {
    for (i, raw) in lines.iter().enumerate() {
        let line = strip_cr(raw);
        if line.starts_with("diff --git ") {
            return Some(i);
        }
        if line.starts_with("--- ")
            && lines
                .get(i + 1)
                .is_some_and(|next| strip_cr(next).starts_with("+++ "))
        {
            return Some(i);
        }
    }
    None
}

const HEADER_KEYS: &[&str] = &[
    "from:",
    "date:",
    "author:",
    "authordate:",
    "commit:",
    "commitdate:",
    "merge:",
    "message-id:",
    "in-reply-to:",
    "references:",
    "to:",
    "content-type:",
    "content-transfer-encoding:",
    "mime-version:",
];

fn parse_header(lines: &[&str]) -> (Option<String>, String) {
    let mut commit_id = None;
    let mut subject: Vec<String> = Vec::new();
    let mut body: Vec<&str> = Vec::new();
    // header block: from the first line until the first blank line
    let mut in_header = true;
    let mut in_subject = false;

    for raw in lines {
        let line = strip_cr(raw);
        if in_header {
            if let Some(hash) = line
                .strip_prefix("From ")
                .or_else(|| line.strip_prefix("commit "))
                .and_then(|rest| rest.split_whitespace().next())
                .filter(|h| is_commit_hash(h))
            {
                commit_id = Some(hash.to_ascii_lowercase());
                continue;
            }
            if in_subject
                && (line.starts_with(' ') || line.starts_with('\t'))
                && !line.trim().is_empty()
            {
                subject.push(line.trim().to_string());
                continue;
            }
            in_subject = false;
            let lower = line.to_ascii_lowercase();
            if lower.starts_with("subject:") {
                subject.push(strip_patch_prefix(line["subject:".len()..].trim()).to_string());
                in_subject = true;
                continue;
            }
            if HEADER_KEYS.iter().any(|k| lower.starts_with(k)) {
                continue;
            }
            in_header = false;
            if line.trim().is_empty() {
                continue;
            }
        }
        // format-patch: the message ends at the `---` line before the diffstat
        if line == "---" && commit_id.is_some() {
            break;
        }
        body.push(line);
    }

    let body = dedent(&body);
    let mut message = subject.join(" ");
    let body = body.trim_matches('\n');
    if !body.trim().is_empty() {
        if !message.is_empty() {
            message.push_str("\n\n");
        }
        message.push_str(body);
    }
    (commit_id, message)
}

fn strip_patch_prefix(subject: &str) -> &str {
    let s = subject.trim_start();
    if s.starts_with('[') {
        if let Some(end) = s.find(']') {
            let tag = &s[1..end];
            if tag.to_ascii_uppercase().contains("PATCH") {
                return s[end + 1..].trim_start();
            }
        }
    }
    s
}

// `git show` indents the message by four spaces.
fn dedent(lines: &[&str]) -> String {
    let all_indented = lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .all(|l| l.starts_with("    "));
    let mut out = Vec::with_capacity(lines.len());
    for l in lines {
        if all_indented {
            out.push(l.get(4..).unwrap_or("").trim_end());
        } else {
            out.push(l.trim_end());
        }
    }
    out.join("\n")
}

#[derive(Default)]
struct PendingFile {
    git_old: Option<String>,
    git_new: Option<String>,
    old_path: Option<String>,
    new_path: Option<String>,
    hunks: Vec<Hunk>,
}

impl PendingFile {
    fn display_path(&self) -> String {
        self.new_path
            .clone()
            .filter(|p| p != "/dev/null")
            .or_else(|| self.old_path.clone())
            .or_else(|| self.git_new.clone())
            .unwrap_or_else(|| "<unknown>".into())
    }

    fn finish(self, out: &mut Vec<FileDiff>) {
        let path = self.display_path();
        if self.hunks.is_empty() {
            log::warn!("dropping {path}: no textual hunks (binary or metadata-only change)");
            return;
        }
        out.push(FileDiff {
            old_path: self.old_path.or(self.git_old).unwrap_or_default(),
            new_path: self.new_path.or(self.git_new).unwrap_or_default(),
            hunks: self.hunks,
        });
    }
}

fn strip_ab_prefix(path: &str) -> String {
    // drop a trailing timestamp (`--- a/x.c\t2020-01-01 ...`)
    let path = path.split('\t').next().unwrap_or(path).trim_end();
    let path = path.trim_matches('"');
    if path == "/dev/null" {
        return path.to_string();
    }
    path.strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(path)
        .to_string()
}

fn parse_git_header(rest: &str) -> (Option<String>, Option<String>) {
    // `a/<old> b/<new>`; ambiguous when paths contain " b/", fall back to halves
    if let Some(idx) = rest.find(" b/") {
        let old = &rest[..idx];
        let new = &rest[idx + 1..];
        return (Some(strip_ab_prefix(old)), Some(strip_ab_prefix(new)));
    }
    (None, None)
}

struct HunkHeader {
    old_start: usize,
    old_count: usize,
    new_start: usize,
    new_count: usize,
}

fn parse_hunk_header(line: &str) -> Option<HunkHeader> {
    let rest = line.strip_prefix("@@ -")?;
    let end = rest.find(" @@")?;
    let ranges = &rest[..end];
    let (old, new) = ranges.split_once(" +")?;
    let parse_range = |r: &str| -> Option<(usize, usize)> {
        match r.split_once(',') {
            Some((s, c)) => Some((s.parse().ok()?, c.parse().ok()?)),
            None => Some((r.parse().ok()?, 1)),
        }
    };
    let (old_start, old_count) = parse_range(old)?;
    let (new_start, new_count) = parse_range(new)?;
    Some(HunkHeader {
        old_start,
        old_count,
        new_start,
        new_count,
    })
}

fn parse_diffs(lines: &[&str]) -> Result<Vec<FileDiff>, PatchError> {
    let mut files = Vec::new();
    let mut current: Option<PendingFile> = None;
    let mut i = 0;
    let mut in_binary_blob = false;

    while i < lines.len() {
        let line = strip_cr(lines[i]);

        if let Some(rest) = line.strip_prefix("diff --git ") {
            if let Some(f) = current.take() {
                f.finish(&mut files);
            }
            let (git_old, git_new) = parse_git_header(rest);
            current = Some(PendingFile {
                git_old,
                git_new,
                ..Default::default()
            });
            in_binary_blob = false;
            i += 1;
            continue;
        }
        if in_binary_blob {
            i += 1;
            continue;
        }
        if line == "GIT binary patch" {
            in_binary_blob = true;
            i += 1;
            continue;
        }
        if let Some(old) = line.strip_prefix("--- ") {
            let next = lines.get(i + 1).map(|l| strip_cr(l));
            if let Some(new) = next.and_then(|n| n.strip_prefix("+++ ")) {
                let start_new_file = match &current {
                    None => true,
                    // raw diffs without `diff --git` separators
                    Some(f) => f.old_path.is_some(),
                };
                if start_new_file {
                    if let Some(f) = current.take() {
                        f.finish(&mut files);
                    }
                    current = Some(PendingFile::default());
                }
                let f = current.as_mut().expect("file in progress");
                f.old_path = Some(strip_ab_prefix(old));
                f.new_path = Some(strip_ab_prefix(new));
                i += 2;
                continue;
            }
        }
        if line.starts_with("@@ -") {
            let header = parse_hunk_header(line).ok_or_else(|| {
                PatchError::MalformedPatch(format!("unparseable hunk header `{line}`"))
            })?;
            let file = current.get_or_insert_with(PendingFile::default);
            let hunk_index = file.hunks.len();
            let (hunk, consumed) =
                read_hunk_body(&lines[i + 1..], header).map_err(|e| match e {
                    PatchError::HunkCountMismatch {
                        old_count,
                        new_count,
                        old_seen,
                        new_seen,
                        ..
                    } => PatchError::HunkCountMismatch {
                        file: file.display_path(),
                        hunk: hunk_index,
                        old_count,
                        new_count,
                        old_seen,
                        new_seen,
                    },
                    other => other,
                })?;
            file.hunks.push(hunk);
            i += 1 + consumed;

            // a body line right after a satisfied hunk means the header undercounted
            if let Some(next) = lines.get(i).map(|l| strip_cr(l)) {
                let stray = (next.starts_with('+') && !next.starts_with("+++ "))
                    || (next.starts_with('-')
                        && next != "-- "
                        && next != "--"
                        && !next.starts_with("--- "));
                if stray {
                    let h = file.hunks.last().expect("just pushed");
                    return Err(PatchError::HunkCountMismatch {
                        file: file.display_path(),
                        hunk: hunk_index,
                        old_count: h.old_count,
                        new_count: h.new_count,
                        old_seen: h.old_count + usize::from(next.starts_with('-')),
                        new_seen: h.new_count + usize::from(next.starts_with('+')),
                    });
                }
            }
            continue;
        }
        i += 1;
    }
    if let Some(f) = current.take() {
        f.finish(&mut files);
    }
    Ok(files)
}

fn read_hunk_body(lines: &[&str], header: HunkHeader) -> Result<(Hunk, usize), PatchError> {
    let mut old_seen = 0;
    let mut new_seen = 0;
    let mut body = Vec::new();
    let mut consumed = 0;

    let mismatch = |old_seen, new_seen| PatchError::HunkCountMismatch {
        file: String::new(),
        hunk: 0,
        old_count: header.old_count,
        new_count: header.new_count,
        old_seen,
        new_seen,
    };

    while old_seen < header.old_count || new_seen < header.new_count {
        let Some(raw) = lines.get(consumed) else {
            return Err(mismatch(old_seen, new_seen));
        };
        consumed += 1;
        let first = raw.as_bytes().first().copied();
        let (marker, content) = match first {
            Some(b'+') => (Marker::Added, &raw[1..]),
            Some(b'-') => (Marker::Removed, &raw[1..]),
            Some(b' ') => (Marker::Context, &raw[1..]),
            Some(b'\\') => continue,
            // some tools strip the space from empty context lines
            None | Some(b'\r') if strip_cr(raw).is_empty() => (Marker::Context, strip_cr(raw)),
            _ => return Err(mismatch(old_seen, new_seen)),
        };
        match marker {
            Marker::Added => new_seen += 1,
            Marker::Removed => old_seen += 1,
            Marker::Context => {
                old_seen += 1;
                new_seen += 1;
            }
        }
        if old_seen > header.old_count || new_seen > header.new_count {
            return Err(mismatch(old_seen, new_seen));
        }
        body.push(DiffLine {
            content: content.to_string(),
            marker,
        });
    }
    // a trailing "\ No newline at end of file" belongs to this hunk
    while lines.get(consumed).is_some_and(|l| l.starts_with("\\ ")) {
        consumed += 1;
    }
    Ok((
        Hunk {
            old_start: header.old_start,
            old_count: header.old_count,
            new_start: header.new_start,
            new_count: header.new_count,
            lines: body,
        },
        consumed,
    ))
}

/// Rebuild the pre- and post-change code streams, concatenating every hunk
/// of every (C/C++, by default) file in input order.
pub fn reconstruct(patch: &PatchFile, opts: ReconstructOptions) -> ReconstructedPair {
    let mut pair = ReconstructedPair::default();
    for file in &patch.file_diffs {
        if !opts.include_all_files && !file.is_c_family() {
            log::debug!("skipping non C/C++ file {}", file.path());
            continue;
        }
        for hunk in &file.hunks {
            for line in &hunk.lines {
                let code = CodeLine {
                    content: line.content.clone(),
                    diff_type: line.marker.into(),
                };
                match line.marker {
                    Marker::Context => {
                        pair.unpatched.push(code.clone());
                        pair.patched.push(code);
                    }
                    Marker::Removed => pair.unpatched.push(code),
                    Marker::Added => pair.patched.push(code),
                }
            }
        }
    }
    pair
}

/// Replay the hunks over the unpatched stream: drop deleted lines and insert
/// added lines at their hunk positions. The result equals the patched side.
pub fn reapply(
    unpatched: &[CodeLine],
    patch: &PatchFile,
    opts: ReconstructOptions,
) -> Result<Vec<String>, PatchError> {
    let mut cursor = unpatched.iter();
    let mut out = Vec::with_capacity(unpatched.len());
    let desync = || PatchError::MalformedPatch("unpatched stream out of sync with hunks".into());
    for file in &patch.file_diffs {
        if !opts.include_all_files && !file.is_c_family() {
            continue;
        }
        for hunk in &file.hunks {
            for line in &hunk.lines {
                match line.marker {
                    Marker::Added => out.push(line.content.clone()),
                    Marker::Context => {
                        let old = cursor.next().ok_or_else(desync)?;
                        if old.diff_type != DiffType::Context {
                            return Err(desync());
                        }
                        out.push(old.content.clone());
                    }
                    Marker::Removed => {
                        let old = cursor.next().ok_or_else(desync)?;
                        if old.diff_type != DiffType::Removed {
                            return Err(desync());
                        }
                    }
                }
            }
        }
    }
    if cursor.next().is_some() {
        return Err(desync());
    }
    Ok(out)
}
