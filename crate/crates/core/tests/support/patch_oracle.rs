//! Independent applier: GNU `patch` run over synthetic pre-images. Each
//! pre-image holds the hunks' old-side lines at their declared offsets with
//! unique filler lines in between; after `patch` runs, the filler is dropped
//! and what remains is the patched side as `patch` sees it.

use std::fs;
use std::path::Path;
use std::process::Command;

use patchrnn::patch::{Marker, PatchFile};

const FILLER: &str = "\u{1}filler";

/// Files (by `+++` header order) whose old side ends without a newline,
/// read straight from the raw text.
fn old_side_unterminated(raw: &[u8]) -> Vec<bool> {
    let text = String::from_utf8_lossy(raw);
    let mut flags: Vec<bool> = Vec::new();
    let mut prev: Option<&str> = None;
    for line in text.split('\n') {
        if line.starts_with("+++ ") {
            flags.push(false);
        } else if line.starts_with("\\ ") {
            if let (Some(p), Some(last)) = (prev, flags.last_mut()) {
                if p.starts_with('-') || p.starts_with(' ') {
                    *last = true;
                }
            }
        }
        prev = Some(line);
    }
    flags
}

fn pre_image(file: &patchrnn::patch::FileDiff, unterminated: bool) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut line_no = 0usize;
    for (h, hunk) in file.hunks.iter().enumerate() {
        // a zero-length old side means "insert after old_start"
        let first = if hunk.old_count == 0 {
            hunk.old_start + 1
        } else {
            hunk.old_start
        };
        while line_no + 1 < first {
            line_no += 1;
            out.push(format!("{FILLER} {h} {line_no}"));
        }
        for l in hunk.lines.iter().filter(|l| l.marker != Marker::Added) {
            line_no += 1;
            out.push(l.content.clone());
        }
    }
    let mut s = out.join("\n");
    if !out.is_empty() && !unterminated {
        s.push('\n');
    }
    s
}

/// Patched-side lines of every file with hunks, in patch order.
pub fn apply_with_gnu_patch(raw: &[u8], parsed: &PatchFile) -> Result<Vec<String>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let work = dir.path().join("w");
    fs::create_dir(&work).map_err(|e| e.to_string())?;
    let files: Vec<_> = parsed
        .file_diffs
        .iter()
        .filter(|f| !f.hunks.is_empty())
        .collect();
    let unterminated = old_side_unterminated(raw);
    for (i, f) in files.iter().enumerate() {
        if f.old_path == "/dev/null" {
            continue;
        }
        let p = work.join(&f.old_path);
        fs::create_dir_all(p.parent().unwrap()).map_err(|e| e.to_string())?;
        fs::write(
            &p,
            pre_image(f, unterminated.get(i).copied().unwrap_or(false)),
        )
        .map_err(|e| e.to_string())?;
    }
    let patch_path = dir.path().join("change.patch");
    fs::write(&patch_path, raw).map_err(|e| e.to_string())?;
    let out = Command::new("patch")
        .args([
            "-p1",
            "--batch",
            "--forward",
            "--no-backup-if-mismatch",
            "-F0",
            "-s",
            "-i",
        ])
        .arg(&patch_path)
        .current_dir(&work)
        .output()
        .map_err(|e| format!("cannot run patch: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "patch failed: {}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    let mut lines = Vec::new();
    for f in &files {
        if f.new_path == "/dev/null" {
            continue;
        }
        lines.extend(read_without_filler(&work.join(&f.new_path))?);
    }
    Ok(lines)
}

fn read_without_filler(path: &Path) -> Result<Vec<String>, String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let text = String::from_utf8_lossy(&bytes);
    let mut v: Vec<String> = text.split('\n').map(str::to_string).collect();
    if v.last().is_some_and(|l| l.is_empty()) {
        v.pop();
    }
    Ok(v.into_iter().filter(|l| !l.starts_with(FILLER)).collect())
}

pub fn available() -> bool {
    Command::new("patch")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}
