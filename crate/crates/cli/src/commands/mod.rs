//! One module per subcommand. Each exposes a clap `Args` struct and an entry
//! function taking the parsed args plus whatever resolved globals it needs.

pub mod grpo;
pub mod judge;
pub mod run;
pub mod stats;
pub mod synth;
pub mod traj;
pub mod tts;
pub mod world;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use veriseek_core::Result;

/// Open `path` for buffered writing, or standard output when `None`.
pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}
