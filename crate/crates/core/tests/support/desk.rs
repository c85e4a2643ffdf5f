//! Seeded synthetic corpus of small C patches in git format-patch form.
//! Security patches add guards (bounds, NULL, overflow checks, bounded
//! copies); the rest add logging, renames, counters and comment edits. A
//! fraction of messages is drawn from the other class so the task is not
//! solvable from the message alone.

use std::fs;
use std::path::Path;

use patchrnn::patch::Label;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VARS: &[&str] = &[
    "buf", "len", "size", "ctx", "dev", "skb", "req", "ptr", "data", "count", "offset", "hdr",
    "msg", "node", "entry", "idx", "name", "frame", "opts", "state",
];
const FUNCS: &[&str] = &[
    "parse_header",
    "read_packet",
    "copy_data",
    "handle_request",
    "init_device",
    "free_buffer",
    "update_stats",
    "log_event",
    "process_frame",
    "decode_entry",
    "load_config",
    "send_reply",
];
const MODULES: &[&str] = &[
    "net/core",
    "drivers/usb",
    "fs/ext",
    "lib/parser",
    "src/http",
    "crypto/api",
];
const NOUNS: &[&str] = &[
    "header",
    "packet",
    "request",
    "descriptor",
    "frame",
    "option",
    "record",
];

fn ident(rng: &mut ChaCha8Rng, pool: &[&str]) -> String {
    let base = pool.choose(rng).unwrap();
    if rng.random_bool(0.6) {
        format!("{base}_{}", rng.random_range(0..40))
    } else {
        base.to_string()
    }
}

struct Edit {
    removed: Vec<String>,
    added: Vec<String>,
}

fn security_edit(rng: &mut ChaCha8Rng) -> Edit {
    let (a, b, c) = (ident(rng, VARS), ident(rng, VARS), ident(rng, VARS));
    let limit = format!("MAX_{}", a.to_uppercase());
    let lines = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match rng.random_range(0..6) {
        0 => Edit {
            removed: vec![],
            added: vec![
                format!("\tif ({a} > {limit}) {{"),
                "\t\treturn -EINVAL;".into(),
                "\t}".into(),
            ],
        },
        1 => Edit {
            removed: vec![],
            added: vec![format!("\tif (!{a})"), "\t\treturn -ENOMEM;".into()],
        },
        2 => Edit {
            removed: vec![format!("\tstrcpy({a}, {b});")],
            added: vec![format!("\tstrncpy({a}, {b}, sizeof({a}) - 1);")],
        },
        3 => Edit {
            removed: vec![format!("\tfor (i = 0; i <= {a}; i++)")],
            added: vec![format!("\tfor (i = 0; i < {a}; i++)")],
        },
        4 => Edit {
            removed: vec![],
            added: vec![format!("\t{a} = NULL;")],
        },
        _ => Edit {
            removed: vec![],
            added: lines(&[
                &format!("\tif ({c} > SIZE_MAX / sizeof(*{b}))"),
                "\t\treturn -EOVERFLOW;",
            ]),
        },
    }
}

fn other_edit(rng: &mut ChaCha8Rng) -> Edit {
    let (a, b) = (ident(rng, VARS), ident(rng, VARS));
    let f = ident(rng, FUNCS);
    match rng.random_range(0..6) {
        0 => Edit {
            removed: vec![],
            added: vec![format!("\tpr_debug(\"{f}: %d\\n\", {a});")],
        },
        1 => Edit {
            removed: vec![format!("\tint {a} = {b};")],
            added: vec![format!("\tint {a}_val = {b};")],
        },
        2 => Edit {
            removed: vec![],
            added: vec![format!("\t{a}->{b} = {};", rng.random_range(1..64))],
        },
        3 => Edit {
            removed: vec![format!("\t{a} = {};", rng.random_range(100..999))],
            added: vec![format!("\t{a} = DEFAULT_{};", b.to_uppercase())],
        },
        4 => Edit {
            removed: vec![format!("\t/* handle the {} */", NOUNS.choose(rng).unwrap())],
            added: vec![format!(
                "\t/* handle the {} case */",
                NOUNS.choose(rng).unwrap()
            )],
        },
        _ => Edit {
            removed: vec![],
            added: vec![format!("\tstats->{a}++;")],
        },
    }
}

fn context_line(rng: &mut ChaCha8Rng) -> String {
    let (a, b) = (ident(rng, VARS), ident(rng, VARS));
    let f = ident(rng, FUNCS);
    match rng.random_range(0..5) {
        0 => format!("\t{a} = {f}({b});"),
        1 => format!("\t{a} += {b};"),
        2 => format!("\tif ({a} == {b})"),
        3 => format!("\tret = {f}({a}, {b});"),
        _ => format!("\t{a}->{b} = 0;"),
    }
}

fn subject(rng: &mut ChaCha8Rng, label: Label) -> (String, String) {
    let f = ident(rng, FUNCS);
    let v = ident(rng, VARS);
    let noun = NOUNS.choose(rng).unwrap();
    match label {
        Label::Security => {
            let s = match rng.random_range(0..6) {
                0 => format!("Fix buffer overflow in {f}"),
                1 => format!("Prevent NULL pointer dereference in {f}"),
                2 => format!("{f}: validate {v} before copy"),
                3 => format!("Fix use-after-free in {f}"),
                4 => format!("Fix out-of-bounds read when parsing {noun}"),
                _ => format!("Check for integer overflow in {f}"),
            };
            (
                s,
                format!("A malformed {noun} could corrupt memory in {f}."),
            )
        }
        Label::NonSecurity => {
            let s = match rng.random_range(0..6) {
                0 => format!("Add debug logging to {f}"),
                1 => format!("Refactor {f} for readability"),
                2 => format!("Rename {v} in {f}"),
                3 => format!("Update documentation for {f}"),
                4 => format!("Add support for {noun} option"),
                _ => format!("Clean up {f}"),
            };
            (s, format!("No functional change to {noun} handling."))
        }
    }
}

/// One patch of the given class. Deterministic in `seed`.
pub fn desk_patch(seed: u64, label: Label) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let msg_label = if rng.random_bool(0.15) {
        match label {
            Label::Security => Label::NonSecurity,
            Label::NonSecurity => Label::Security,
        }
    } else {
        label
    };
    let (subj, body) = subject(&mut rng, msg_label);
    let hash: String = (0..40)
        .map(|_| char::from_digit(rng.random_range(0..16), 16).unwrap())
        .collect();
    let path = format!(
        "{}/{}.c",
        MODULES.choose(&mut rng).unwrap(),
        ident(&mut rng, FUNCS)
    );
    let func = ident(&mut rng, FUNCS);

    let mut diff = String::new();
    let hunks = rng.random_range(1..=2);
    let mut start = rng.random_range(10..200);
    let mut shift = 0i64;
    for _ in 0..hunks {
        let edit = match label {
            Label::Security => security_edit(&mut rng),
            Label::NonSecurity => other_edit(&mut rng),
        };
        let before: Vec<String> = (0..rng.random_range(1..=3))
            .map(|_| context_line(&mut rng))
            .collect();
        let after: Vec<String> = (0..rng.random_range(1..=3))
            .map(|_| context_line(&mut rng))
            .collect();
        let ctx = before.len() + after.len();
        diff.push_str(&format!(
            "@@ -{start},{} +{},{} @@ static int {func}(void)\n",
            ctx + edit.removed.len(),
            start as i64 + shift,
            ctx + edit.added.len()
        ));
        shift += edit.added.len() as i64 - edit.removed.len() as i64;
        for l in &before {
            diff.push_str(&format!(" {l}\n"));
        }
        for l in &edit.removed {
            diff.push_str(&format!("-{l}\n"));
        }
        for l in &edit.added {
            diff.push_str(&format!("+{l}\n"));
        }
        for l in &after {
            diff.push_str(&format!(" {l}\n"));
        }
        start += rng.random_range(20..60);
    }

    format!(
        "From {hash} Mon Sep 17 00:00:00 2001\n\
         From: Desk Corpus <desk@example.org>\n\
         Date: Mon, 1 Jan 2024 00:00:00 +0000\n\
         Subject: [PATCH] {subj}\n\
         \n\
         {body}\n\
         ---\n\
         \x20{path} | 4 ++--\n\
         \x201 file changed\n\
         \n\
         diff --git a/{path} b/{path}\n\
         index 1111111..2222222 100644\n\
         --- a/{path}\n\
         +++ b/{path}\n\
         {diff}-- \n\
         2.40.0\n"
    )
}

/// `n` patches, alternating security / non-security starting with security.
pub fn desk_corpus(n: usize, seed: u64) -> Vec<(String, Label)> {
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 {
                Label::Security
            } else {
                Label::NonSecurity
            };
            let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            (desk_patch(s, label), label)
        })
        .collect()
}

/// Writes the corpus in the directory-per-class layout.
pub fn write_desk_dataset(root: &Path, n: usize, seed: u64) -> std::io::Result<()> {
    for (i, (text, label)) in desk_corpus(n, seed).into_iter().enumerate() {
        let dir = root.join(label.as_str());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(format!("{i:04}.patch")), text)?;
    }
    Ok(())
}

/// Parsed, labeled and preprocessed desk samples.
pub fn desk_samples(
    n: usize,
    seed: u64,
    opts: &patchrnn::pipeline::PipelineOptions,
) -> Vec<patchrnn::pipeline::PreparedSample> {
    desk_corpus(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (text, label))| {
            let mut p = patchrnn::patch::parse_patch(&text).expect("desk patches parse");
            p.label = Some(label);
            patchrnn::pipeline::prepare(&p, format!("desk{i:04}"), opts)
        })
        .collect()
}
