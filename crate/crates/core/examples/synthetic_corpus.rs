//! Writes the procedural 4-class corpus used by the toy training run.
//!
//! `cargo run -p sglanet --example synthetic_corpus -- <dir> [per_class] [seed]`

use std::path::PathBuf;
use std::process;

fn main() {
    let mut args = std::env::args().skip(1);
    let Some(root) = args.next().map(PathBuf::from) else {
        eprintln!("usage: synthetic_corpus <dir> [per_class] [seed]");
        process::exit(2);
    };
    let per_class = args.next().map_or(Ok(250), |s| s.parse()).unwrap_or_else(|e| {
        eprintln!("per_class: {e}");
        process::exit(2);
    });
    let seed = args.next().map_or(Ok(7), |s| s.parse()).unwrap_or_else(|e| {
        eprintln!("seed: {e}");
        process::exit(2);
    });
    if let Err(e) = sglanet::synthetic::write_corpus(&root, per_class, seed) {
        eprintln!("error: {e}");
        process::exit(3);
    }
}
