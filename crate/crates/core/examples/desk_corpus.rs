//! Writes the synthetic desk corpus used by the tests:
//! `cargo run --example desk_corpus -- <out_dir> [n] [seed]`

#[allow(dead_code)]
#[path = "../tests/support/desk.rs"]
mod desk;

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "desk_corpus".into());
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    desk::write_desk_dataset(std::path::Path::new(&out), n, seed)?;
    println!("wrote {n} patches to {out}");
    Ok(())
}
