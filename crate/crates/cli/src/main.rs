//! `ltrw`: lifted TRW bounds from the command line.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use lifted_trw::polytope::OuterBound;
use lifted_trw::spanning::{lifted_kruskal, lifted_tree_value};
use lifted_trw::trw::FwOptions;
use lifted_trw::validate::run_suite;

use run::{infer, lift, orbit_names, output, parse_list, w_grid, write_csv, CliError, CliResult, ModelSource, RhoMode, RunConfig};

#[derive(Parser)]
#[command(name = "ltrw", version, about = "Lifted tree-reweighted bounds on log Z for symmetric MRFs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound, marginals and convergence for one W and outer bound.
    Infer {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "W", default_value_t = 0.0, allow_negative_numbers = true)]
        w: f64,
        #[arg(long, default_value = "local")]
        outer: OuterBound,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also write the result as a one-row CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CSV of bounds over a W grid for several outer bounds.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        /// Grid `from:to:step`.
        #[arg(long = "W", default_value = "-2:2:0.25", allow_hyphen_values = true)]
        w: String,
        /// Comma-separated outer bounds, or `all`.
        #[arg(long, default_value = "all")]
        outer: String,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Node and edge orbits of the grounded model.
    Orbits {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Lifted maximum spanning tree: per-orbit edge appearances and value.
    Mst {
        #[command(flatten)]
        model: ModelArgs,
        /// Orbit weights `w1,w2,..`, `uniform`, or `random` (integers drawn with --seed).
        #[arg(long, default_value = "uniform")]
        weights: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cross-checks between the lifted solvers and the exact oracles.
    Validate,
}

#[derive(Args)]
struct ModelArgs {
    /// Model file, a bundled model name (complete-graph, friends-smokers,
    /// clique-cycle) or builtin:ring.
    #[arg(long)]
    model: ModelSource,
    /// Domain size.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
}

#[derive(Args)]
struct SolverArgs {
    /// uniform, kruskal:<w,..> or optimize.
    #[arg(long, default_value = "uniform")]
    rho: RhoMode,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long = "max-iters", default_value_t = 1000)]
    max_iters: usize,
    /// Add away steps to the conditional gradient (for tight tolerances).
    #[arg(long)]
    away_steps: bool,
    /// Recorded for reproducibility; the solvers are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn config(&self, n: u64) -> CliResult<RunConfig> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(CliError::Usage("--tol must be positive".into()));
        }
        let opts = FwOptions { tol: self.tol, max_iters: self.max_iters, away_steps: self.away_steps, ..FwOptions::default() };
        Ok(RunConfig { n: n as usize, rho: self.rho.clone(), opts })
    }
}

fn parse_outers(list: &str) -> CliResult<Vec<OuterBound>> {
    if list == "all" {
        return Ok(OuterBound::ALL.to_vec());
    }
    list.split(',').map(|s| s.trim().parse::<OuterBound>().map_err(CliError::from)).collect()
}

fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let parts = parse_list(&text.replace(':', ",")).map_err(CliError::Usage)?;
    match parts[..] {
        [w] => Ok(vec![w]),
        [from, to, step] if step > 0.0 => Ok(w_grid(from, to, step)),
        _ => Err(CliError::Usage(format!("--W expects `w` or `from:to:step` with step > 0, got `{text}`"))),
    }
}

fn cmd_infer(model: &ModelArgs, w: f64, outer: OuterBound, solver: &SolverArgs, out: Option<&PathBuf>) -> CliResult<()> {
    let cfg = solver.config(model.n)?;
    let loaded = model.model.load()?;
    let row = infer(&loaded, &cfg, w, outer)?;
    println!("outer       {outer}");
    println!("W           {w}");
    println!("n           {}", row.n);
    println!("bound       {:.10}", row.bound);
    println!("gap         {:.3e}", row.gap);
    println!("iterations  {} ({:?})", row.iters, row.termination);
    println!("time        {:.3} ms", row.millis);
    println!("rho         {:?}", row.rho);
    println!("marginals");
    for (pattern, p) in &row.marginals {
        println!("  {pattern:<24} {p:.6}");
    }
    if let Some(path) = out {
        let names: Vec<String> = row.marginals.iter().map(|m| m.0.clone()).collect();
        write_csv(output(Some(path))?, &names, std::slice::from_ref(&row))?;
    }
    Ok(())
}

fn cmd_sweep(model: &ModelArgs, w: &str, outers: &str, solver: &SolverArgs, out: Option<&PathBuf>, jobs: Option<usize>) -> CliResult<()> {
    let cfg = solver.config(model.n)?;
    let grid = parse_grid(w)?;
    let outers = parse_outers(outers)?;
    let loaded = model.model.load()?;
    let names = orbit_names(&loaded, cfg.n)?;
    let tasks: Vec<(f64, OuterBound)> = grid.iter().flat_map(|&w| outers.iter().map(move |&o| (w, o))).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build().map_err(|e| CliError::Usage(e.to_string()))?;
    // collect keeps task order, so output is deterministic
    let rows = pool.install(|| tasks.par_iter().map(|&(w, o)| infer(&loaded, &cfg, w, o)).collect::<CliResult<Vec<_>>>())?;
    write_csv(output(out)?, &names, &rows)
}

fn cmd_orbits(model: &ModelArgs) -> CliResult<()> {
    let g = model.model.load()?.ground(model.n as usize, 0.0)?;
    let lg = lift(&g)?;
    println!("{} ground nodes, {} ground edges", lg.num_ground_nodes, lg.num_ground_edges);
    println!("{} node orbits", lg.nodes.len());
    for v in &lg.nodes {
        let aux = if v.is_aux { " aux" } else { "" };
        println!("  v{:<3} size {:<5} card {} {}{aux}", v.id, v.size, v.card, v.pattern);
    }
    println!("{} edge orbits", lg.edges.len());
    for e in &lg.edges {
        let flip = if e.flip { " flip" } else { "" };
        println!("  e{:<3} size {:<5} v{} - v{} {}{flip}", e.id, e.size, e.ends[0], e.ends[1], e.pattern);
    }
    Ok(())
}

fn cmd_mst(model: &ModelArgs, weights: &str, seed: u64) -> CliResult<()> {
    let g = model.model.load()?.ground(model.n as usize, 0.0)?;
    let lg = lift(&g)?;
    let m = lg.edges.len();
    let w = match weights {
        "uniform" => vec![1.0; m],
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..m).map(|_| rng.gen_range(-5..=5) as f64).collect()
        }
        list => parse_list(list).map_err(CliError::Usage)?,
    };
    if w.len() != m {
        return Err(CliError::Usage(format!("expected {m} weights, got {}", w.len())));
    }
    let rho = lifted_kruskal(&lg, &g, &w)?;
    for (e, (r, wt)) in lg.edges.iter().zip(rho.iter().zip(&w)) {
        println!("e{:<3} size {:<5} weight {wt:<8} rho {r:.6} {}", e.id, e.size, e.pattern);
    }
    println!("value {}", lifted_tree_value(&lg, &rho, &w));
    Ok(())
}

fn cmd_validate() -> CliResult<bool> {
    let checks = run_suite();
    for c in &checks {
        println!("{} {:<44} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Infer { model, w, outer, solver, out } => cmd_infer(model, *w, *outer, solver, out.as_ref()).map(|_| true),
        Command::Sweep { model, w, outer, solver, out, jobs } => cmd_sweep(model, w, outer, solver, out.as_ref(), *jobs).map(|_| true),
        Command::Orbits { model } => cmd_orbits(model).map(|_| true),
        Command::Mst { model, weights, seed } => cmd_mst(model, weights, *seed).map(|_| true),
        Command::Validate => cmd_validate(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("ltrw: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
