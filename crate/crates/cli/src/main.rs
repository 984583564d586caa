mod grid;
mod market;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use report::{CliResult, Outcome, Run, RunReport};

/// Power-grid modeling, monitoring and optimization.
///
/// Every run writes report.json (and any CSV tables) to the output
/// directory and prints the report on stdout.
#[derive(Parser)]
#[command(name = "gridsp", version)]
struct Cli {
    /// Directory for report.json and CSV outputs
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Network case files
    #[command(subcommand)]
    Case(CaseCmd),
    /// Power flow
    #[command(subcommand)]
    Pf(PfCmd),
    /// State estimation, bad data, observability and attacks
    #[command(subcommand)]
    Se(SeCmd),
    /// Line-outage identification from angle changes
    #[command(subcommand)]
    Outage(OutageCmd),
    /// Waveform analysis
    #[command(subcommand)]
    Signal(SignalCmd),
    /// Economic dispatch on a single bus
    Ed(EdArgs),
    /// DC optimal power flow with locational prices
    Opf(OpfArgs),
    /// Unit commitment
    Uc(UcArgs),
    /// Demand response with a price-setting supplier
    Dr(DrArgs),
    /// Split a supply deficit among curtailable users
    Curtail(CurtailArgs),
    /// Electric-vehicle charging (valley filling)
    #[command(subcommand)]
    Pev(PevCmd),
}

#[derive(Subcommand)]
enum CaseCmd {
    /// Parse and check a case file, then summarize it
    Validate {
        /// Case JSON
        #[arg(long)]
        case: PathBuf,
    },
}

#[derive(Subcommand)]
enum PfCmd {
    /// DC power flow; writes theta.csv and flows.csv
    Dc {
        /// Case JSON
        #[arg(long)]
        case: PathBuf,
        /// Net injections in p.u.: an array in bus order or an object keyed
        /// by bus id [default: case loads balanced at the slack]
        #[arg(long)]
        injections: Option<PathBuf>,
        /// Id of the reference bus [default: the slack]
        #[arg(long = "ref")]
        reference: Option<usize>,
    },
    /// Newton-Raphson AC power flow; writes voltages.csv
    Ac {
        /// Case JSON
        #[arg(long)]
        case: PathBuf,
        /// Bus specification: list of {"bus", "type": slack|pv|pq, ...}
        #[arg(long)]
        spec: PathBuf,
        /// Mismatch tolerance
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Iteration limit
        #[arg(long, default_value_t = 20)]
        max_iter: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Plan {
    /// Every reading kind from the AC power flow
    Full,
    /// Active injections and both-end flows from the DC model
    Dc,
}

#[derive(Subcommand)]
enum SeCmd {
    /// Solve a power flow and draw noisy readings; writes meas.json
    Simulate {
        /// Case JSON
        #[arg(long)]
        case: PathBuf,
        /// Bus specification, as in `pf ac`; the DC plan uses only its
        /// active injections
        #[arg(long)]
        spec: PathBuf,
        /// Which readings to take
        #[arg(long, value_enum, default_value_t = Plan::Full)]
        plan: Plan,
        /// Noise standard deviation (p.u.)
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        /// Seed of the noise draws
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Gauss-Newton weighted least squares; writes state.csv
    Run {
        /// Case JSON
        #[arg(long)]
        case: PathBuf,
        /// Measurement JSON
        #[arg(long)]
        meas: PathBuf,
        /// Step tolerance
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Iteration limit
        #[arg(long, default_value_t = 30)]
        max_iter: usize,
    },
    /// Chi-square detection and largest-normalized-residual removal on the
    /// active readings; writes theta.csv
    Baddata {
        /// Case JSON
        #[arg(long)]
        case: PathBuf,
        /// Measurement JSON
        #[arg(long)]
        meas: PathBuf,
        /// Normalized-residual threshold
        #[arg(long, default_value_t = 3.0)]
        lnrt: f64,
        /// False-alarm probability of the chi-square test
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
    /// Numerical and topological observability of the active readings
    Observe {
        /// Case JSON
        #[arg(long)]
        case: PathBuf,
        /// Measurement JSON
        #[arg(long)]
        meas: PathBuf,
    },
    /// Build a stealthy attack on the active readings; writes attacked.json
    Attack {
        /// Case JSON
        #[arg(long)]
        case: PathBuf,
        /// Measurement JSON
        #[arg(long)]
        meas: PathBuf,
        /// Angle shifts: an array over non-reference buses or an object
        /// keyed by bus id [default: random]
        #[arg(long)]
        shift: Option<PathBuf>,
        /// Half-width of random shifts (rad)
        #[arg(long, default_value_t = 0.05)]
        scale: f64,
        /// Seed of the random shifts
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct OutageArgs {
    /// Case JSON
    #[arg(long)]
    case: PathBuf,
    /// Pre-event angles: array in bus order or object keyed by bus id
    #[arg(long, requires = "post", conflicts_with = "simulate")]
    pre: Option<PathBuf>,
    /// Post-event angles
    #[arg(long, requires = "pre")]
    post: Option<PathBuf>,
    /// Branch positions to trip in a simulated event (comma separated)
    #[arg(long, value_delimiter = ',')]
    simulate: Option<Vec<usize>>,
    /// Injections for the simulated event [default as in `pf dc`]
    #[arg(long)]
    injections: Option<PathBuf>,
    /// Ids of buses with angle measurements (comma separated) [default: all]
    #[arg(long, value_delimiter = ',')]
    observed: Option<Vec<usize>>,
    /// Add injection noise at this signal-to-noise ratio (dB)
    #[arg(long)]
    snr_db: Option<f64>,
    /// Seed of the noise draws
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum OutageCmd {
    /// Orthogonal matching pursuit
    Omp {
        #[command(flatten)]
        common: OutageArgs,
        /// Number of outaged lines to select
        #[arg(long, conflicts_with = "residual")]
        k: Option<usize>,
        /// Stop once the whitened residual norm falls below this
        /// [default: 1e-6 relative to the observation]
        #[arg(long)]
        residual: Option<f64>,
    },
    /// Search over every support of size k
    Exhaustive {
        #[command(flatten)]
        common: OutageArgs,
        /// Support size (1 or 2)
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum SignalCmd {
    /// Fundamental-frequency phasor by DFT
    Phasor {
        /// CSV of time,value rows
        #[arg(long)]
        record: PathBuf,
        /// Nominal frequency (Hz)
        #[arg(long, default_value_t = 60.0)]
        f0: f64,
        /// First sample of the window
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Window length in samples [default: one nominal cycle]
        #[arg(long)]
        len: Option<usize>,
    },
    /// Damped modes by Prony's method; writes modes.csv
    Modes {
        /// CSV of time,value rows
        #[arg(long)]
        record: PathBuf,
        /// Model order
        #[arg(long, default_value_t = 4)]
        order: usize,
    },
}

#[derive(Args)]
struct EdArgs {
    /// Offers JSON: list of {"cost", "p_min", "p_max"}
    #[arg(long, required_unless_present = "case", conflicts_with = "case")]
    offers: Option<PathBuf>,
    /// Take offers and demand from a case file
    #[arg(long)]
    case: Option<PathBuf>,
    /// Total demand (p.u.) [default: case load]
    #[arg(long)]
    demand: Option<f64>,
    /// Deterministic wind forecast subtracted from demand
    #[arg(long, conflicts_with = "wind")]
    wind_forecast: Option<f64>,
    /// Wind JSON {"model", "reliability"} for chance-constrained dispatch
    #[arg(long)]
    wind: Option<PathBuf>,
}

#[derive(Args)]
struct OpfArgs {
    /// Case JSON
    #[arg(long)]
    case: PathBuf,
    /// Weight of the angle-difference penalty
    #[arg(long, default_value_t = 0.0)]
    angle_penalty: f64,
}

#[derive(Args)]
struct UcArgs {
    /// Instance JSON
    #[arg(long)]
    instance: PathBuf,
    /// Dual iterations
    #[arg(long, default_value_t = 500)]
    iters: usize,
    /// Output levels per unit in the dynamic program
    #[arg(long, default_value_t = 21)]
    levels: usize,
    /// Enumerate every commitment instead (small instances)
    #[arg(long)]
    bruteforce: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DrModeArg {
    Central,
    Dual,
}

#[derive(Args)]
struct DrArgs {
    /// Instance JSON
    #[arg(long)]
    instance: PathBuf,
    /// Solve as one problem or by price exchange
    #[arg(long, value_enum, default_value_t = DrModeArg::Dual)]
    mode: DrModeArg,
    /// Iteration limit of the price exchange
    #[arg(long, default_value_t = 20000)]
    iters: usize,
    /// Constant price step [default: inverse curvature bound]
    #[arg(long)]
    step: Option<f64>,
    /// Stop when no price moves by more than this
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct CurtailArgs {
    /// Users JSON: list of {"weight", "max_cut"}
    #[arg(long)]
    users: PathBuf,
    /// Deficit to cover
    #[arg(long)]
    deficit: f64,
}

#[derive(Subcommand)]
enum PevCmd {
    /// One problem over the whole fleet; writes profiles.csv
    Central {
        /// Fleet JSON {"base", "vehicles"}
        #[arg(long)]
        fleet: PathBuf,
    },
    /// Price broadcast with per-vehicle updates; writes profiles.csv and trace.csv
    Distributed {
        /// Fleet JSON {"base", "vehicles"}
        #[arg(long)]
        fleet: PathBuf,
        /// Iteration limit
        #[arg(long, default_value_t = 500)]
        iters: usize,
        /// Stop when no profile moves by more than this
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

fn dispatch(run: &mut Run, command: Command) -> CliResult<Outcome> {
    match command {
        Command::Case(CaseCmd::Validate { case }) => grid::case_validate(run, &case),
        Command::Pf(PfCmd::Dc {
            case,
            injections,
            reference,
        }) => grid::pf_dc(run, &case, injections.as_deref(), reference),
        Command::Pf(PfCmd::Ac {
            case,
            spec,
            tol,
            max_iter,
        }) => grid::pf_ac(run, &case, &spec, tol, max_iter),
        Command::Se(cmd) => match cmd {
            SeCmd::Simulate {
                case,
                spec,
                plan,
                sigma,
                seed,
            } => grid::se_simulate(run, &case, &spec, plan, sigma, seed),
            SeCmd::Run {
                case,
                meas,
                tol,
                max_iter,
            } => grid::se_run(run, &case, &meas, tol, max_iter),
            SeCmd::Baddata {
                case,
                meas,
                lnrt,
                alpha,
            } => grid::se_baddata(run, &case, &meas, lnrt, alpha),
            SeCmd::Observe { case, meas } => grid::se_observe(run, &case, &meas),
            SeCmd::Attack {
                case,
                meas,
                shift,
                scale,
                seed,
            } => grid::se_attack(run, &case, &meas, shift.as_deref(), scale, seed),
        },
        Command::Outage(cmd) => {
            let (common, method) = match cmd {
                OutageCmd::Omp { common, k, residual } => (common, grid::OutageMethod::Omp { k, residual }),
                OutageCmd::Exhaustive { common, k } => (common, grid::OutageMethod::Exhaustive(k)),
            };
            let event = match (common.pre, common.post, common.simulate) {
                (Some(pre), Some(post), _) => grid::Event::Measured { pre, post },
                (_, _, Some(lines)) => grid::Event::Simulated {
                    lines,
                    injections: common.injections,
                },
                _ => return Err(report::CliError::Invalid("give --pre/--post or --simulate".into())),
            };
            let noise = common.snr_db.map(|snr| (snr, common.seed));
            grid::outage(run, &common.case, event, common.observed.as_deref(), noise, method)
        }
        Command::Signal(SignalCmd::Phasor { record, f0, start, len }) => {
            grid::signal_phasor(run, &record, f0, start, len)
        }
        Command::Signal(SignalCmd::Modes { record, order }) => grid::signal_modes(run, &record, order),
        Command::Ed(a) => market::ed(
            run,
            a.offers.as_deref(),
            a.case.as_deref(),
            a.demand,
            a.wind_forecast,
            a.wind.as_deref(),
        ),
        Command::Opf(a) => market::opf(run, &a.case, a.angle_penalty),
        Command::Uc(a) => market::uc(run, &a.instance, a.iters, a.levels, a.bruteforce),
        Command::Dr(a) => {
            let mode = match a.mode {
                DrModeArg::Central => gridsp::flexload::DrMode::Central,
                DrModeArg::Dual => gridsp::flexload::DrMode::Dual,
            };
            market::dr(run, &a.instance, mode, a.iters, a.step, a.tol)
        }
        Command::Curtail(a) => market::curtail(run, &a.users, a.deficit),
        Command::Pev(PevCmd::Central { fleet }) => market::pev_central(run, &fleet),
        Command::Pev(PevCmd::Distributed { fleet, iters, tol }) => market::pev_distributed(run, &fleet, iters, tol),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let started = Instant::now();
    let mut run = Run::new(&cli.out_dir);
    let outcome = dispatch(&mut run, cli.command);
    let (status, exit_code, result, error) = match outcome {
        Ok(o) if o.converged => ("ok", 0, Some(o.result), None),
        Ok(o) => ("not_converged", 1, Some(o.result), None),
        Err(e) => ("error", 1, None, Some(e.to_string())),
    };
    let mut report = RunReport {
        version: 1,
        command: argv.into_iter().skip(1).collect(),
        inputs: std::mem::take(&mut run.inputs),
        outputs: std::mem::take(&mut run.outputs),
        wall_time_s: started.elapsed().as_secs_f64(),
        status,
        exit_code,
        result,
        error,
    };
    report.outputs.push("report.json".into());
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Err(e) = run.write_text("report.json", &text) {
        eprintln!("gridsp: {e}");
    }
    println!("{text}");
    if let Some(e) = &report.error {
        eprintln!("gridsp: {e}");
    }
    ExitCode::from(exit_code as u8)
}
