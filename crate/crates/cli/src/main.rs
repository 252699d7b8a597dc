//! `graph-demix`: generate graphs, demix planted instances, run Monte-Carlo
//! experiments and report the topology-dependent recovery quantities.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when the
//! computation itself fails.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use graph_demix::experiment::{
    emit_results, emit_trials, run_experiment, ExperimentConfig, OutputFormat,
};
use graph_demix::graph::{
    barabasi_albert, barabasi_albert_pair, erdos_renyi, gso_from_graph, karate_club, load_edge_list,
};
use graph_demix::model::{
    demixing_error, demixing_error_matched, plant_ground_truth, success, synthesize_mixture,
};
use graph_demix::separation::demix_single_graph;
use graph_demix::solver::{solve_convex, solve_logdet, SolverDiagnostics};
use graph_demix::spectral::decompose;
use graph_demix::theory::{alpha_bounds, concentration_params, predictor_rho_bar, TheoryReport};
use graph_demix::{
    DemixError, Graph, GsoKind, Orthogonality, SeparationSpec, SolverConfig, SpectralBasis,
};

#[derive(Parser)]
#[command(
    name = "graph-demix",
    version,
    about = "Blind demixing of diffused graph signals"
)]
struct Cli {
    /// Master seed (overrides the seed in a config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    ErdosRenyi,
    BarabasiAlbert,
    /// Two scale-free graphs sharing a fraction `--alpha` of their edges.
    BarabasiAlbertPair,
    Karate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shift {
    Adjacency,
    Laplacian,
}

impl From<Shift> for GsoKind {
    fn from(s: Shift) -> Self {
        match s {
            Shift::Adjacency => GsoKind::Adjacency,
            Shift::Laplacian => GsoKind::Laplacian,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write generated graphs as edge-list files into the `--out` directory.
    Generate {
        #[arg(long, value_enum)]
        generator: Generator,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Number of independent graphs (ignored for pairs and karate).
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Plant one instance on the given graphs, demix it and report the error.
    Demix {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a Monte-Carlo experiment described by a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Also write every trial's record as CSV to this path.
        #[arg(long)]
        dump_trials: Option<PathBuf>,
    },
    /// Concentration parameters, recovery bounds and pairwise predictors.
    Theory {
        #[arg(long, num_args = 1.., required = true)]
        graphs: Vec<PathBuf>,
        #[arg(long = "S", default_value_t = 1)]
        s: usize,
        #[arg(long = "L", default_value_t = 2)]
        l: usize,
        #[arg(long, value_enum, default_value = "adjacency")]
        gso: Shift,
        /// Constant of the third exponent bound.
        #[arg(long, default_value_t = 1.0)]
        constant: f64,
    },
}

/// Configuration of the `demix` subcommand.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemixRun {
    /// Edge-list files, one per source; a single file with `sources > 1`
    /// selects single-graph demixing.
    graphs: Vec<PathBuf>,
    #[serde(default)]
    sources: Option<usize>,
    #[serde(default = "default_gso")]
    gso: GsoKind,
    s: usize,
    l: usize,
    #[serde(default)]
    sigma: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    method: graph_demix::experiment::Method,
    #[serde(default = "default_threshold")]
    threshold: f64,
}

fn default_gso() -> GsoKind {
    GsoKind::Adjacency
}

fn default_threshold() -> f64 {
    1e-3
}

#[derive(Serialize)]
struct DemixReport {
    de: f64,
    success: bool,
    single_graph: bool,
    diagnostics: SolverDiagnostics,
}

/// Failure split by exit code.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<DemixError> for Failure {
    fn from(e: DemixError) -> Self {
        match e {
            DemixError::Config(_)
            | DemixError::Io { .. }
            | DemixError::Json(_)
            | DemixError::Parse { .. }
            | DemixError::Parameter(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Runtime(format!("I/O error at {}: {e}", path.display()))
}

fn read_config(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))
}

fn load_graph(path: &Path) -> Result<Graph, Failure> {
    let f = File::open(path)
        .map_err(|e| Failure::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(load_edge_list(BufReader::new(f))?)
}

/// Runs `write` against `--out` (or stdout).
fn with_sink(
    out: Option<&Path>,
    write: impl FnOnce(&mut dyn Write, &str) -> Result<(), Failure>,
) -> Result<(), Failure> {
    match out {
        Some(path) => {
            let f = File::create(path).map_err(|e| io_failure(path, e))?;
            let mut w = BufWriter::new(f);
            write(&mut w, &path.display().to_string())?;
            w.flush().map_err(|e| io_failure(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock, "<stdout>")
        }
    }
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    with_sink(out, |w, path| {
        writeln!(w, "{text}").map_err(|e| io_failure(Path::new(path), e))
    })
}

fn generate(
    cli: &Cli,
    generator: Generator,
    n: usize,
    p: f64,
    alpha: f64,
    count: usize,
) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(0);
    let graphs = match generator {
        Generator::ErdosRenyi => (0..count as u64)
            .map(|k| erdos_renyi(n, p, seed.wrapping_add(k)))
            .collect::<Result<Vec<_>, _>>()?,
        Generator::BarabasiAlbert => (0..count as u64)
            .map(|k| barabasi_albert(n, seed.wrapping_add(k)))
            .collect::<Result<Vec<_>, _>>()?,
        Generator::BarabasiAlbertPair => {
            let (a, b) = barabasi_albert_pair(n, alpha, seed)?;
            vec![a, b]
        }
        Generator::Karate => vec![karate_club()],
    };
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    for (k, g) in graphs.iter().enumerate() {
        let path = dir.join(format!("graph_{k}.csv"));
        fs::write(&path, g.to_edge_list()).map_err(|e| io_failure(&path, e))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn demix(cli: &Cli, config: &Path) -> Result<(), Failure> {
    let run: DemixRun = serde_json::from_str(&read_config(config)?)
        .map_err(|e| Failure::Config(format!("invalid demix config: {e}")))?;
    if run.graphs.is_empty() {
        return Err(Failure::Config("demix needs at least one graph".into()));
    }
    let r = run.sources.unwrap_or(run.graphs.len());
    let single = run.graphs.len() == 1 && r > 1;
    if !single && r != run.graphs.len() {
        return Err(Failure::Config(
            "sources must match the number of graph files".into(),
        ));
    }
    run.solver.validate(r)?;
    let mut bases: Vec<Arc<SpectralBasis>> = Vec::with_capacity(r);
    for path in &run.graphs {
        let g = load_graph(path)?;
        bases.push(Arc::new(decompose(&gso_from_graph(&g, run.gso)?, run.l)?));
    }
    if single {
        bases = vec![Arc::clone(&bases[0]); r];
    }
    let seed = cli.seed.unwrap_or(run.seed);
    let orth = if single {
        Orthogonality::Prop1
    } else {
        Orthogonality::None
    };
    let gt = plant_ground_truth(&bases, &vec![run.s; r], seed, orth)?;
    let problem = synthesize_mixture(&bases, &gt, run.sigma, None, false, seed.wrapping_add(1))?;
    let mut solver = run.solver.clone();
    if run.sigma > 0.0 && solver.noise_epsilon.is_none() {
        solver.noise_epsilon = Some(run.sigma);
    }
    let (sol, de) = if single {
        let sol = demix_single_graph(&problem, &solver, &SeparationSpec::node_domain(r))?;
        let de = demixing_error_matched(&sol.estimates(), &gt)?;
        (sol, de)
    } else {
        let sol = match run.method {
            graph_demix::experiment::Method::Convex => solve_convex(&problem, &solver)?,
            graph_demix::experiment::Method::Logdet => solve_logdet(&problem, &solver)?,
        };
        let de = demixing_error(&sol.estimates(), &gt)?;
        (sol, de)
    };
    let report = DemixReport {
        de,
        success: success(de, run.threshold),
        single_graph: single,
        diagnostics: sol.diagnostics,
    };
    print_json(&report, cli.out.as_deref())
}

fn experiment(cli: &Cli, config: &Path, dump: Option<&Path>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::from_json(&read_config(config)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    let format = match cli.format {
        Some(Format::Json) => OutputFormat::Json,
        Some(Format::Csv) => OutputFormat::Csv,
        // infer from the output extension
        None if cli
            .out
            .as_ref()
            .is_some_and(|p| p.extension().is_some_and(|e| e == "json")) =>
        {
            OutputFormat::Json
        }
        None => OutputFormat::Csv,
    };
    let table = run_experiment(&cfg)?;
    with_sink(cli.out.as_deref(), |w, path| {
        Ok(emit_results(&table, format, w, path)?)
    })?;
    if let Some(path) = dump {
        let f = File::create(path).map_err(|e| io_failure(path, e))?;
        emit_trials(
            &table.trial_records,
            BufWriter::new(f),
            &path.display().to_string(),
        )?;
    }
    Ok(())
}

fn theory(
    cli: &Cli,
    graphs: &[PathBuf],
    s: usize,
    l: usize,
    gso: Shift,
    constant: f64,
) -> Result<(), Failure> {
    let mut bases = Vec::with_capacity(graphs.len());
    for path in graphs {
        let g = load_graph(path)?;
        bases.push(Arc::new(decompose(&gso_from_graph(&g, gso.into())?, l)?));
    }
    let n = bases[0].n;
    if bases.iter().any(|b| b.n != n) {
        return Err(Failure::Config("graphs disagree on the node count".into()));
    }
    let r = bases.len();
    // the tap coherence needs concrete taps: draw them from the seed
    let gt = plant_ground_truth(
        &bases,
        &vec![s; r],
        cli.seed.unwrap_or(0),
        Orthogonality::None,
    )?;
    let hs: Vec<_> = gt.hs.iter().map(|h| h.map(|v| v.into())).collect();
    let refs: Vec<&SpectralBasis> = bases.iter().map(|b| b.as_ref()).collect();
    let params = concentration_params(&refs, &vec![s; r], &hs)?;
    let bounds = alpha_bounds(&params, n, r, &vec![l; r], &vec![s; r], constant)?;
    let mut rho_bar = Vec::new();
    for k in 0..r {
        for j in k + 1..r {
            rho_bar.push(((k, j), predictor_rho_bar(&bases[k], &bases[j], s, s, l, l)?));
        }
    }
    let id = graphs
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join("+");
    print_json(
        &TheoryReport {
            id,
            params,
            bounds,
            rho_bar,
        },
        cli.out.as_deref(),
    )
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Generate {
            generator,
            n,
            p,
            alpha,
            count,
        } => generate(cli, *generator, *n, *p, *alpha, *count),
        Command::Demix { config } => demix(cli, config),
        Command::Experiment {
            config,
            dump_trials,
        } => experiment(cli, config, dump_trials.as_deref()),
        Command::Theory {
            graphs,
            s,
            l,
            gso,
            constant,
        } => theory(cli, graphs, *s, *l, *gso, *constant),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
