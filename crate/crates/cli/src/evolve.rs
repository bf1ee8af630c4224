use clap::Subcommand;
use eat_core::evolution::{evolve, sphere, CrossoverConfig, MutationConfig, Population};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{CliResult, Global, Table};

#[derive(Debug, Subcommand)]
pub enum EvolveCommand {
    /// Elitist evolution on the sphere function; prints the best-fitness trace.
    Demo {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        pop: usize,
        #[arg(long, default_value_t = 200)]
        generations: usize,
        /// Crossover rate.
        #[arg(long, default_value_t = 0.5)]
        cr: f64,
        /// Mutation rate.
        #[arg(long, default_value_t = 0.2)]
        mu: f64,
        /// Mutation scale bounds.
        #[arg(long, default_value_t = 0.5)]
        low: f64,
        #[arg(long, default_value_t = 1.1)]
        high: f64,
    },
}

pub fn run(cmd: EvolveCommand, g: &Global) -> CliResult {
    let EvolveCommand::Demo {
        dim,
        pop,
        generations,
        cr,
        mu,
        low,
        high,
    } = cmd;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed.unwrap_or(0));
    let population = Population::random(pop, dim, &mut rng);
    let crossover = CrossoverConfig::new(cr)?;
    let mutation = MutationConfig::uniform(mu, dim, low, high)?;
    let result = evolve(&population, sphere, generations, &crossover, &mutation, &mut rng)?;
    let mut table = Table::new(["generation", "best_fitness"]);
    for (gen, best) in result.trace.iter().enumerate() {
        table.row([gen.to_string(), format!("{best:e}")]);
    }
    print!("{}", table.render(g.format));
    Ok(())
}
