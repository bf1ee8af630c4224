use std::path::PathBuf;

use clap::{Subcommand, ValueEnum};
use eat_core::analysis::{model_cost, optimal_split_flops, optimal_split_params};
use eat_core::EatConfig;

use crate::{CliError, CliResult, Format, Global, Table};

#[derive(Debug, Subcommand)]
pub enum CostCommand {
    /// Per-component parameters and FLOPs of a model configuration.
    Report {
        /// JSON model config.
        #[arg(long, conflicts_with = "variant")]
        config: Option<PathBuf>,
        /// eat-ti, eat-s, eat-m, eat-b or micro.
        #[arg(long)]
        variant: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Objective {
    Params,
    Flops,
}

#[derive(Debug, Subcommand)]
pub enum SplitCommand {
    /// Exhaustive search over the local width d2 with the closed-form vertex.
    Solve {
        #[arg(long)]
        dim: usize,
        /// Sequence length; only the FLOP objective uses it.
        #[arg(long, default_value_t = 196)]
        len: usize,
        #[arg(long, default_value_t = 3)]
        kernel: usize,
        #[arg(long, value_enum, default_value_t = Objective::Flops)]
        objective: Objective,
    },
}

pub fn load_config(config: Option<&PathBuf>, variant: Option<&str>) -> CliResult<EatConfig> {
    match (config, variant) {
        (Some(path), _) => Ok(EatConfig::load(path)?),
        (None, Some("micro")) => Ok(EatConfig::micro()),
        (None, Some(name)) => Ok(EatConfig::variant(name)?),
        (None, None) => Err(CliError::Invalid("pass --config <path> or --variant <name>".into())),
    }
}

pub fn run_cost(cmd: CostCommand, g: &Global) -> CliResult {
    let CostCommand::Report { config, variant } = cmd;
    let cfg = load_config(config.as_ref(), variant.as_deref())?;
    let cost = model_cost(&cfg)?;
    let mut table = Table::new(["component", "part", "count", "params", "flops"]);
    for c in &cost.components {
        let t = c.total();
        let part = if c.in_head { "head" } else { "backbone" };
        table.row([c.name.clone(), part.into(), c.count.to_string(), t.params.to_string(), t.flops.to_string()]);
    }
    for (name, r) in [("backbone", cost.backbone), ("head", cost.head), ("total", cost.total)] {
        table.row([name.to_string(), "".into(), "".into(), r.params.to_string(), r.flops.to_string()]);
    }
    print!("{}", table.render(g.format));
    if g.format == Format::Table {
        println!(
            "\n{}: {:.3}M params, {:.3} GFLOPs, head/backbone flops {:.2}%",
            cfg.variant,
            cost.total.params as f64 / 1e6,
            cost.total.flops as f64 / 1e9,
            100.0 * cost.head.flops as f64 / cost.backbone.flops as f64
        );
    }
    Ok(())
}

pub fn run_split(cmd: SplitCommand, g: &Global) -> CliResult {
    let SplitCommand::Solve {
        dim,
        len,
        kernel,
        objective,
    } = cmd;
    if dim == 0 {
        return Err(CliError::Invalid("--dim must be at least 1".into()));
    }
    let s = match objective {
        Objective::Params => optimal_split_params(dim, kernel),
        Objective::Flops => optimal_split_flops(dim, len, kernel),
    };
    let ties = s.ties.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
    let mut table = Table::new(["quantity", "value"]);
    table.row(["objective".to_string(), format!("{objective:?}").to_lowercase()]);
    table.row(["vertex".to_string(), s.vertex.to_string()]);
    table.row(["argmin_d2".to_string(), s.d2_star.to_string()]);
    table.row(["argmin_d1".to_string(), s.d1_star.to_string()]);
    table.row(["tie_set".to_string(), format!("{{{}}}", ties.replace(' ', ", "))]);
    table.row(["minimum".to_string(), s.minimum.to_string()]);
    table.row(["even_split_value".to_string(), s.even_split_value.to_string()]);
    table.row(["matched_form".to_string(), s.matched.to_string()]);
    if let Some(note) = s.discrepancy_note() {
        table.row(["note".to_string(), note]);
    }
    print!("{}", table.render(g.format));
    Ok(())
}
