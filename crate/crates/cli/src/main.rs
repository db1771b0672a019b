//! `platoon`: run, reproduce and certify platoon scenarios.
//!
//! Exit codes: 0 pass, 1 I/O or runtime error, 2 safety violation,
//! 3 check failed, 4 configuration error.

// `!(x > y)` rejects NaN as well as out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use platoon::analysis::{
    fundamental_diagram, jacobian_eigencheck, macroscopic_stability_check, FdModel, FdPoint,
};
use platoon::io::{read_trajectory_csv, write_fd_csv, write_outcome};
use platoon::numerics::linspace;
use platoon::scenario::{reproduce_many, ControllerConfig, RunStatus, ScenarioConfig, TopologyConfig, BUILTIN_IDS};
use platoon::spacing_policy::{
    mu_n, validate_gain_conditions, validate_general_conditions, validate_ring_contraction, GeneralLaw, PiecewiseG,
    ScanGrid,
};
use platoon::Error;

const EXIT_IO: u8 = 1;
const EXIT_CHECK_FAILED: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "platoon", version, about = "Safety and string-stability toolkit for adaptive-cruise platoons")]
struct Cli {
    /// Output directory [default: $PLATOON_OUT_DIR, else ./out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario config, monitor safety and run the analyses.
    Run { config: PathBuf },
    /// Re-run the analyses on an existing trajectory CSV.
    Analyze { config: PathBuf, trajectory: PathBuf },
    /// Run built-in scenarios and check their expected outcomes.
    Reproduce {
        /// Scenario id, or `all`.
        id: String,
    },
    /// Check the gain and ring conditions of a config's controller.
    Validate { config: PathBuf },
    /// Fundamental diagram of a config's controller or of a built-in family.
    Fd {
        #[arg(long, conflicts_with = "family", required_unless_present = "family")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        family: Option<Family>,
        #[arg(long, default_value_t = 1e-4)]
        rho_min: f64,
        /// Defaults to the jam density `1/a`.
        #[arg(long)]
        rho_max: Option<f64>,
        #[arg(long, default_value_t = 2000)]
        points: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    /// Nonlinear controller, λ = 30.5, k = 1.2, several (γ, g_max).
    Nonlinear,
    /// Constant time gap T = 1.4 with several standstill distances.
    Ctg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = out_dir(cli.out);
    let result = match cli.command {
        Command::Run { config } => run(&config, &out),
        Command::Analyze { config, trajectory } => analyze(&config, &trajectory, &out),
        Command::Reproduce { id } => reproduce(&id, &out),
        Command::Validate { config } => validate(&config),
        Command::Fd { config, family, rho_min, rho_max, points } => {
            fd(config.as_deref(), family, rho_min, rho_max, points, &out)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::TomlParse(_) | Error::InvalidParameter(_) | Error::Domain(_) => EXIT_CONFIG,
                _ => EXIT_IO,
            })
        }
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("PLATOON_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load(path: &Path) -> platoon::Result<ScenarioConfig> {
    ScenarioConfig::from_toml(&fs::read_to_string(path)?)
}

fn status_code(s: RunStatus) -> u8 {
    s.code() as u8
}

fn run(config: &Path, out: &Path) -> platoon::Result<u8> {
    let scenario = load(config)?.validate()?;
    let outcome = scenario.run()?;
    let files = write_outcome(out, &outcome)?;
    print!("{}", outcome.report());
    for f in files {
        println!("wrote: {}", f.display());
    }
    Ok(status_code(outcome.status()))
}

fn analyze(config: &Path, trajectory: &Path, out: &Path) -> platoon::Result<u8> {
    let scenario = load(config)?.validate()?;
    let traj = read_trajectory_csv(fs::File::open(trajectory)?)?;
    let outcome = scenario.analyze(traj)?;
    let report = outcome.report();
    fs::create_dir_all(out)?;
    let path = out.join(format!("{}_analysis.txt", outcome.scenario_name));
    fs::write(&path, &report)?;
    print!("{report}");
    println!("wrote: {}", path.display());
    Ok(status_code(outcome.status()))
}

fn reproduce(id: &str, out: &Path) -> platoon::Result<u8> {
    let ids: Vec<&str> = if id == "all" { BUILTIN_IDS.to_vec() } else { vec![id] };
    let mut all_passed = true;
    for result in reproduce_many(&ids) {
        let rep = result?;
        let dir = out.join(&rep.id);
        write_outcome(&dir, &rep.outcome)?;
        fs::write(dir.join(format!("{}.toml", rep.id)), rep.scenario.config.to_toml()?)?;
        println!("[{}] {}", rep.id, if rep.passed() { "PASS" } else { "FAIL" });
        for note in &rep.outcome.notes {
            println!("  note: {note}");
        }
        for claim in &rep.claims {
            println!("  {claim}");
        }
        println!("  output: {}", dir.display());
        all_passed &= rep.passed();
    }
    Ok(if all_passed { 0 } else { EXIT_CHECK_FAILED })
}

fn validate(config: &Path) -> platoon::Result<u8> {
    let cfg = load(config)?;
    let mut passed = true;
    match &cfg.controller {
        ControllerConfig::NonlinearAcc { k, policy, .. } => {
            let policy = policy.build(cfg.road.min_gap)?;
            let gain = validate_gain_conditions(&policy, *k, ScanGrid::default());
            println!("{gain}");
            passed &= gain.passed();
            let general = validate_general_conditions(&GeneralLaw::from_policy(&policy, *k), ScanGrid::default());
            for c in general.checks() {
                println!("general_{c}");
            }
            passed &= general.passed();
            passed &= validate_topology(&cfg, &policy, *k)?;
        }
        ControllerConfig::Ctg { k, gain, standstill } => {
            println!("controller: constant time gap (k = {k}, gain = {gain}, standstill = {standstill})");
            println!("note: no safety or string-stability certificate applies to this controller");
        }
    }
    match cfg.validate() {
        Ok(sc) => {
            println!("config: ok (hash {})", sc.hash);
            for n in &sc.notes {
                println!("note: {n}");
            }
        }
        Err(e) => {
            println!("config: {e}");
            passed = false;
        }
    }
    println!("status: {}", if passed { "pass" } else { "fail" });
    Ok(if passed { 0 } else { EXIT_CHECK_FAILED })
}

fn validate_topology(cfg: &ScenarioConfig, policy: &PiecewiseG, k: f64) -> platoon::Result<bool> {
    let mut passed = true;
    let v_star = match cfg.topology {
        TopologyConfig::Ring { length } => {
            println!("mu_n: {:.12}", mu_n(cfg.n)?);
            if let (Some(p), Some(m)) = (cfg.analysis.p, cfg.analysis.m) {
                let ring = validate_ring_contraction(policy, length, cfg.n, p, m, ScanGrid::default())?;
                println!("{ring}");
                passed &= ring.passed();
            }
            policy.equilibrium_speed(length / cfg.n as f64)?
        }
        TopologyConfig::Open => match (cfg.analysis.v_star, &cfg.leader) {
            (Some(v), _) => v,
            (None, Some(platoon::simulator::LeaderProfile::Constant { speed })) => *speed,
            _ => return Ok(passed),
        },
    };
    let jac = jacobian_eigencheck(policy, k, v_star, cfg.n)?;
    println!("{jac}");
    passed &= jac.passed(1e-6);
    Ok(passed)
}

struct Curve {
    label: String,
    model: FdModel,
}

fn family_curves(family: Family) -> platoon::Result<Vec<Curve>> {
    let a = 5.0;
    Ok(match family {
        Family::Nonlinear => [(62.1, 1.0), (55.0, 0.8), (48.0, 0.6), (42.0, 0.4)]
            .into_iter()
            .map(|(gamma, g_max)| {
                Ok(Curve {
                    label: format!("nonlinear_gamma{gamma}_gmax{g_max}"),
                    model: FdModel::Nonlinear(PiecewiseG::ramp(a, 30.5, gamma, g_max)?),
                })
            })
            .collect::<platoon::Result<_>>()?,
        Family::Ctg => [10.0, 20.0, 31.0]
            .into_iter()
            .map(|r| Curve {
                label: format!("ctg_T1.4_r{r}"),
                model: FdModel::Ctg { gain: 1.0 / 1.4, standstill: r, a, speed_limit: 30.1 },
            })
            .collect(),
    })
}

fn config_curve(path: &Path) -> platoon::Result<Curve> {
    let cfg = load(path)?;
    let a = cfg.road.min_gap;
    let model = match &cfg.controller {
        ControllerConfig::NonlinearAcc { policy, .. } => FdModel::Nonlinear(policy.build(a)?),
        ControllerConfig::Ctg { gain, standstill, .. } => FdModel::Ctg {
            gain: *gain,
            standstill: *standstill,
            a,
            speed_limit: cfg
                .road
                .speed_limit
                .ok_or_else(|| Error::Config("road.speed_limit is required for a constant-time-gap diagram".into()))?,
        },
    };
    Ok(Curve { label: cfg.name, model })
}

fn fd(
    config: Option<&Path>,
    family: Option<Family>,
    rho_min: f64,
    rho_max: Option<f64>,
    points: usize,
    out: &Path,
) -> platoon::Result<u8> {
    let curves = match (config, family) {
        (Some(path), _) => vec![config_curve(path)?],
        (None, Some(f)) => family_curves(f)?,
        (None, None) => return Err(Error::Config("give --config or --family".into())),
    };
    if points < 2 {
        return Err(Error::Config("--points must be at least 2".into()));
    }
    fs::create_dir_all(out)?;
    for curve in curves {
        let jam = 1.0 / curve.model.a();
        let (lo, hi) = clip_range(rho_min, rho_max.unwrap_or(jam), jam);
        let grid = linspace(lo, hi, points);
        let pts: Vec<FdPoint> = fundamental_diagram(&curve.model, &grid)?;
        let path = out.join(format!("fd_{}.csv", curve.label));
        write_fd_csv(fs::File::create(&path)?, &pts)?;
        let report = macroscopic_stability_check(&curve.model, lo, hi, points)?;
        println!("curve: {}", curve.label);
        println!("{report}");
        println!("wrote: {}", path.display());
    }
    Ok(0)
}

/// Clips `[lo, hi]` into the open density domain `(0, jam)`.
fn clip_range(lo: f64, hi: f64, jam: f64) -> (f64, f64) {
    let edge = jam * (1.0 - 1e-6);
    let (mut l, mut h) = (lo, hi);
    if !(l > 0.0) {
        l = jam * 1e-6;
        println!("note: rho_min clipped to {l} (density must be positive)");
    }
    if h >= edge {
        h = edge;
        println!("note: rho_max clipped to {h} (jam density 1/a = {jam} excluded)");
    }
    if l >= h {
        l = h * 0.5;
        println!("note: rho_min raised above rho_max; using {l}");
    }
    (l, h)
}
