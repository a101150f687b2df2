//! `world generate`: deterministic world fixtures.

use std::path::PathBuf;

use clap::Args;
use veriseek_core::world::generate::generate_world_with;
use veriseek_core::world::save_fixture;
use veriseek_core::Result;

#[derive(Args)]
pub struct GenerateArgs {
    /// Number of entities in the world.
    #[arg(long, default_value_t = 20)]
    pub entities: usize,
    /// Documents per entity (1-10).
    #[arg(long, default_value_t = 2)]
    pub docs: usize,
    /// Fixture output path.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

pub fn generate(args: GenerateArgs, seed: u64) -> Result<()> {
    let world = generate_world_with(seed, args.entities, args.docs)?;
    save_fixture(&world, &args.out)?;
    println!(
        "world seed={} entities={} documents={} -> {}",
        seed,
        world.entity_count(),
        world.document_count(),
        args.out.display()
    );
    Ok(())
}
