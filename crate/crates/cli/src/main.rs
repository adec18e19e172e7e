//! `negproj`: run the regularization studies and write CSV/JSON artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use negproj::mixed::SolverOptions;
use negproj::persistence::StudyArchive;
use negproj::studies::{self, Experiment, Mode, StudyConfig};
use negproj::Error;

#[derive(Parser)]
#[command(name = "negproj", version, about = "Regularize rough sources by discrete negative-norm projection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Uniform or adaptive projection study (delta1d, delta2d, linesource).
    Project(StudyArgs),
    /// L² versus discrete H⁻¹ projection onto a single hat function.
    Instability {
        /// Comma separated values in (0, 1).
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PDE solves with regularized sources (ode1d, delta2d).
    Pde(StudyArgs),
    /// Run the study described by a config file.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    experiment: String,
    /// Read settings from a key=value or JSON file before applying flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Default)]
struct Overrides {
    /// One value or a comma separated list in (1, 2].
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// `lo..hi` or a comma separated list.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Start mesh of adaptive runs.
    #[arg(long = "mesh-n")]
    mesh_n: Option<String>,
    #[arg(long)]
    max_iterations: Option<String>,
    #[arg(long)]
    max_ndofs: Option<String>,
    #[arg(long)]
    x0: Option<String>,
    #[arg(long)]
    a: Option<String>,
    /// Output directory; tables go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut StudyConfig) -> negproj::Result<()> {
        let pairs = [
            ("p", &self.p),
            ("mode", &self.mode),
            ("levels", &self.levels),
            ("tol", &self.tol),
            ("alpha", &self.alpha),
            ("mesh_n", &self.mesh_n),
            ("max_iterations", &self.max_iterations),
            ("max_ndofs", &self.max_ndofs),
            ("x0", &self.x0),
            ("a", &self.a),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()
    }
}

enum Failure {
    Usage(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::IncompatibleVersion { .. } => Self::Usage(e.to_string()),
            _ => Self::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Solver(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load_config(experiment: Option<&str>, file: Option<&Path>, overrides: &Overrides) -> CliResult<StudyConfig> {
    let mut cfg = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            StudyConfig::parse(&text)?
        }
        None => StudyConfig::new(experiment.expect("experiment or config").parse()?),
    };
    if let (Some(e), Some(_)) = (experiment, file) {
        let e: Experiment = e.parse()?;
        if e != cfg.experiment {
            return Err(Failure::Usage(format!("--experiment {} conflicts with the config file", e.name())));
        }
    }
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

/// Archive under `out`, or none when writing to stdout.
fn archive(out: Option<&Path>, cfg: &StudyConfig) -> CliResult<Option<StudyArchive>> {
    out.map(|dir| {
        let mut a = StudyArchive::create(dir)?;
        a.write_config(cfg)?;
        Ok(a)
    })
    .transpose()
}

fn emit(archive: &mut Option<StudyArchive>, name: &str, contents: &str) -> CliResult<()> {
    match archive {
        Some(a) => {
            let path = a.write_text(name, contents)?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            println!("# {name}");
            print!("{contents}");
        }
    }
    Ok(())
}

fn cmd_project(cfg: &StudyConfig, out: Option<&Path>) -> CliResult<()> {
    if !matches!(cfg.experiment, Experiment::Delta1d | Experiment::Delta2d | Experiment::Linesource) {
        return Err(Failure::Usage(format!("project does not run {}", cfg.experiment.name())));
    }
    let mut arch = archive(out, cfg)?;
    let results = studies::run_projection_study(cfg, arch.as_mut(), &SolverOptions::default())?;
    if arch.is_none() {
        for s in &results {
            emit(&mut arch, &format!("convergence_p{}.csv", s.p), &s.csv())?;
        }
    }
    for s in &results {
        let rate = s.rate().map_or("n/a".to_string(), |r| format!("{r:.4}"));
        eprintln!("p = {}: fitted rate {rate}, expected {:.4}", s.p, cfg.expected_rate(s.p));
    }
    Ok(())
}

fn cmd_instability(epsilons: Option<Vec<f64>>, out: Option<&Path>) -> CliResult<()> {
    let mut cfg = StudyConfig::new(Experiment::Instability);
    if let Some(e) = epsilons {
        cfg.epsilons = e;
    }
    cfg.validate()?;
    let rows = studies::run_instability(&cfg.epsilons)?;
    let mut arch = archive(out, &cfg)?;
    emit(&mut arch, "instability.csv", &studies::instability_csv(&rows))
}

fn cmd_pde(cfg: &StudyConfig, out: Option<&Path>) -> CliResult<()> {
    let opts = SolverOptions::default();
    let mut arch = archive(out, cfg)?;
    match cfg.experiment {
        Experiment::Ode1d => {
            for &p in &cfg.p {
                match cfg.mode {
                    Mode::Uniform => {
                        let rows = studies::run_ode_uniform(cfg, p, &opts)?;
                        emit(&mut arch, &format!("ode_uniform_p{p}.csv"), &studies::ode_uniform_csv(&rows))?;
                    }
                    Mode::Adaptive => {
                        let (rows, last) = studies::run_ode_two_stage(cfg, p, &opts)?;
                        emit(&mut arch, &format!("two_stage_p{p}.csv"), &studies::two_stage_csv(&rows))?;
                        if let Some(sol) = last {
                            let samples = studies::ode_samples_csv(&sol.u_h, cfg.x0, cfg.a, 200)?;
                            emit(&mut arch, &format!("ode_samples_p{p}.csv"), &samples)?;
                        }
                        for r in &rows {
                            eprintln!("tol {:e}: relative H1 error {:.3e}", r.tol, r.relative_h1_error);
                        }
                    }
                }
            }
        }
        Experiment::Delta2d => {
            let m = cfg.max_iterations.max(1);
            let stages = [0, m / 2, m - 1];
            for &p in &cfg.p {
                for snap in studies::run_poisson_snapshots(cfg, p, &stages, &opts)? {
                    let tag = format!("poisson_p{p}_iter{:02}", snap.iteration);
                    if let Some(a) = arch.as_mut() {
                        a.save_mesh(&tag, &snap.mesh)?;
                    }
                    emit(&mut arch, &format!("{tag}_samples.csv"), &studies::poisson_samples_csv(&snap.solution.u_h, 40)?)?;
                    eprintln!("iteration {}: {} elements, L2 error {:.3e}", snap.iteration, snap.mesh.n_elements(), snap.l2_error);
                }
            }
        }
        other => return Err(Failure::Usage(format!("pde does not run {}", other.name()))),
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Project(args) => {
            let cfg = load_config(Some(&args.experiment), args.config.as_deref(), &args.overrides)?;
            cmd_project(&cfg, args.overrides.out.as_deref())
        }
        Command::Instability { epsilons, out } => cmd_instability(epsilons, out.as_deref()),
        Command::Pde(args) => {
            let cfg = load_config(Some(&args.experiment), args.config.as_deref(), &args.overrides)?;
            cmd_pde(&cfg, args.overrides.out.as_deref())
        }
        Command::Study { config, overrides } => {
            let cfg = load_config(None, Some(&config), &overrides)?;
            let out = overrides.out.as_deref();
            match cfg.experiment {
                Experiment::Instability => cmd_instability(Some(cfg.epsilons.clone()), out),
                Experiment::Ode1d => cmd_pde(&cfg, out),
                _ => cmd_project(&cfg, out),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(m)) => {
            log::error!("{m}");
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
