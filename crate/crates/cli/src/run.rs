//! Model loading, single runs and CSV output shared by the subcommands.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use lifted_trw::fixtures;
use lifted_trw::model::{ground, parse_model, PairwiseGroundModel};
use lifted_trw::polytope::OuterBound;
use lifted_trw::spanning::{init_rho_uniform, lifted_kruskal, optimize_rho};
use lifted_trw::symmetry::{compute_orbits, LiftedGraph};
use lifted_trw::trw::{frank_wolfe, EdgeAppearance, FwOptions, Termination};

pub const SCHEMA: &str = "schema=1";
/// Outer iterations of `--rho optimize`.
const RHO_ITERS: usize = 20;

#[derive(Debug)]
pub enum CliError {
    /// Model file could not be read (exit code 2).
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Lib(lifted_trw::Error),
    Usage(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl From<lifted_trw::Error> for CliError {
    fn from(e: lifted_trw::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("writing CSV: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("writing output: {e}"))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// A model source: a file, a bundled model, or the ten-node ring.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    File(PathBuf),
    Bundled(&'static str),
    Ring,
}

impl FromStr for ModelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let name = s.strip_prefix("builtin:").unwrap_or(s);
        if name == "ring" {
            return Ok(ModelSource::Ring);
        }
        match fixtures::model_text(name) {
            Some(text) => Ok(ModelSource::Bundled(text)),
            None if s.starts_with("builtin:") => Err(format!("unknown bundled model `{name}`")),
            None => Ok(ModelSource::File(PathBuf::from(s))),
        }
    }
}

impl ModelSource {
    /// Reads the template text once (ring has none).
    pub fn load(&self) -> CliResult<Loaded> {
        Ok(match self {
            ModelSource::Ring => Loaded::Ring,
            ModelSource::Bundled(text) => Loaded::Template(parse_model(text)?),
            ModelSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
                Loaded::Template(parse_model(&text)?)
            }
        })
    }
}

pub enum Loaded {
    Ring,
    Template(lifted_trw::model::TemplatedModel),
}

impl Loaded {
    pub fn ground(&self, n: usize, w: f64) -> CliResult<PairwiseGroundModel> {
        match self {
            Loaded::Ring => Ok(fixtures::ring(w)),
            Loaded::Template(m) => Ok(ground(m, n, w)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RhoMode {
    Uniform,
    Kruskal(Vec<f64>),
    Optimize,
}

impl FromStr for RhoMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(RhoMode::Uniform),
            "optimize" => Ok(RhoMode::Optimize),
            _ => match s.strip_prefix("kruskal:") {
                Some(list) => parse_list(list).map(RhoMode::Kruskal),
                None => Err(format!("unknown rho mode `{s}` (uniform, kruskal:<w,..>, optimize)")),
            },
        }
    }
}

pub fn parse_list(list: &str) -> Result<Vec<f64>, String> {
    list.split(',').map(|w| w.trim().parse::<f64>().map_err(|e| format!("bad weight `{w}`: {e}"))).collect()
}

/// Everything a single inference run depends on.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n: usize,
    pub rho: RhoMode,
    pub opts: FwOptions,
}

/// One inference result, as printed and as written to CSV.
#[derive(Debug, Clone)]
pub struct Row {
    pub w: f64,
    pub outer: OuterBound,
    pub n: usize,
    pub bound: f64,
    pub gap: f64,
    pub iters: usize,
    pub termination: Termination,
    pub millis: f64,
    /// `Pr(x = 1)` per non-auxiliary binary node orbit, with its pattern.
    pub marginals: Vec<(String, f64)>,
    pub rho: EdgeAppearance,
}

pub fn lift(g: &PairwiseGroundModel) -> CliResult<LiftedGraph> {
    Ok(compute_orbits(g)?)
}

pub fn infer(model: &Loaded, cfg: &RunConfig, w: f64, outer: OuterBound) -> CliResult<Row> {
    let start = Instant::now();
    let g = model.ground(cfg.n, w)?;
    let lg = lift(&g)?;
    let (rho, res) = match &cfg.rho {
        RhoMode::Uniform => {
            let rho = init_rho_uniform(&lg, &g)?;
            let res = frank_wolfe(&lg, &g, outer, &rho, &cfg.opts)?;
            (rho, res)
        }
        RhoMode::Kruskal(weights) => {
            if weights.len() != lg.edges.len() {
                return Err(CliError::Usage(format!("kruskal weights: expected {} values, got {}", lg.edges.len(), weights.len())));
            }
            let rho = lifted_kruskal(&lg, &g, weights)?;
            let res = frank_wolfe(&lg, &g, outer, &rho, &cfg.opts)?;
            (rho, res)
        }
        RhoMode::Optimize => optimize_rho(&lg, &g, outer, &init_rho_uniform(&lg, &g)?, RHO_ITERS, &cfg.opts)?,
    };
    let marginals = lg.nodes.iter().filter(|v| !v.is_aux && v.card == 2).map(|v| (v.pattern.clone(), res.node_marginals[v.id][1])).collect();
    Ok(Row {
        w,
        outer,
        n: cfg.n,
        bound: res.bound,
        gap: res.final_gap(),
        iters: res.iterations,
        termination: res.termination,
        millis: start.elapsed().as_secs_f64() * 1e3,
        marginals,
        rho,
    })
}

/// Writes the schema line, the header and `rows` (all sharing one orbit layout).
pub fn write_csv(out: impl Write, orbit_names: &[String], rows: &[Row]) -> CliResult<()> {
    let mut out = out;
    writeln!(out, "{SCHEMA}")?;
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["W", "outer", "n", "bound", "gap", "iters", "millis"].iter().map(|s| s.to_string()).collect();
    header.extend(orbit_names.iter().map(|p| format!("marginal:{p}")));
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.w.to_string(),
            r.outer.to_string(),
            r.n.to_string(),
            r.bound.to_string(),
            r.gap.to_string(),
            r.iters.to_string(),
            format!("{:.3}", r.millis),
        ];
        rec.extend(r.marginals.iter().map(|(_, p)| p.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Opens `--out` or stdout.
pub fn output(path: Option<&PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", p.display())))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Non-auxiliary binary node orbit patterns of the model at size `n`.
pub fn orbit_names(model: &Loaded, n: usize) -> CliResult<Vec<String>> {
    let lg = lift(&model.ground(n, 0.0)?)?;
    Ok(lg.nodes.iter().filter(|v| !v.is_aux && v.card == 2).map(|v| v.pattern.clone()).collect())
}

/// `from..=to` in steps of `step`, robust to rounding at the end.
pub fn w_grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    if from > to {
        return Vec::new();
    }
    let count = ((to - from) / step + 1e-9).floor() as usize;
    (0..=count).map(|k| from + step * k as f64).collect()
}
