//! `nstab`: command-line front end for the boundary-stabilization pipeline.
//!
//! Subcommands: `design`, `simulate`, `verify`, `sweep`, `dump-spectrum`.
//! All reports are JSON on standard output; trajectories and tables go to
//! CSV files. Exit codes: 0 success, 1 configuration error, 2 rank/
//! conditioning failure, 3 blow-up guard, 4 verification failure.

use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use nstab_core::design::{
    assemble_bk, build_design_from_parts, default_gammas, determinant_chain_agrees, kalman_rank,
    lambda_analytic,
};
use nstab_core::pdesim::{
    estimate_decay_rate, run_closed_loop, run_closed_loop_undelayed, run_modal_ode, run_open_loop,
};
use nstab_core::spectral::{choose_unstable_dim, eigenvalues, spectrum_table, BasisPair,
    DEFAULT_QUAD_NODES};
use nstab_core::verify::{
    verify_all, verify_delay, verify_design, verify_pdesim, verify_spectral, SuiteReport,
};
use nstab_core::{Error, RunArtifacts, SimConfig};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "nstab",
    about = "Boundary stabilization of a nonlocal heat equation with input delay",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the feedback design and print it as JSON.
    Design {
        #[command(flatten)]
        config: ConfigArgs,
        /// Replace the plant by the classical uncontrollable two-mode fixture.
        #[arg(long)]
        fixture: bool,
        /// Also write the JSON report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the plant and write the trajectory CSV.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Trajectory CSV output path.
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
        /// Integrator: full PDE or the d-dimensional modal surrogate.
        #[arg(long, value_enum, default_value_t = SimPath::Pde)]
        path: SimPath,
        /// Force u = 0 (no feedback).
        #[arg(long)]
        open_loop: bool,
        /// Use direct proportional feedback without the predictor (tau = 0 only).
        #[arg(long)]
        undelayed: bool,
        /// Also write sampled spatial profiles as CSV (t,x,y).
        #[arg(long)]
        profiles_out: Option<PathBuf>,
    },
    /// Run the built-in invariant suites and print a JSON report.
    Verify {
        /// Which suite to run.
        #[arg(value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Run one simulation per parameter value, concurrently.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Configuration key to vary.
        #[arg(long)]
        param: String,
        /// Comma-separated values for the parameter.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Maximum number of concurrent runs.
        #[arg(long, default_value_t = 2)]
        jobs: usize,
        /// Directory for the per-value trajectory files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print the spectral table (roots, eigenvalues, normalizers, traces).
    DumpSpectrum {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of index pairs to tabulate.
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SimPath {
    Pde,
    Modal,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Spectral,
    Design,
    Delay,
    Pdesim,
    All,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON configuration file; defaults to the built-in reference setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set tau=0.1 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    /// Load the base configuration, apply the overrides, and type-check the
    /// result against the full schema (unknown keys are rejected).
    fn resolve(&self) -> Result<SimConfig, Error> {
        let mut value: Value = match &self.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => serde_json::to_value(SimConfig::default())?,
        };
        let obj = value.as_object_mut().ok_or_else(|| {
            Error::InvalidConfig("configuration file must contain a JSON object".to_string())
        })?;
        for item in &self.set {
            let (key, raw) = item.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("--set expects KEY=VALUE, got '{item}'"))
            })?;
            if !obj.contains_key(key) {
                return Err(Error::InvalidConfig(format!(
                    "unknown configuration key '{key}'"
                )));
            }
            // parse as JSON when possible (numbers, arrays, null), else as a
            // bare string (e.g. y0 preset names)
            let parsed = serde_json::from_str(raw)
                .unwrap_or_else(|_| Value::String(raw.to_string()));
            obj.insert(key.to_string(), parsed);
        }
        let cfg: SimConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print to stdout and succeed; anything else is
            // a usage (configuration) error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Exit-code contract: 1 configuration, 2 rank/conditioning, 3 blow-up.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::RankConditionViolated { .. }
        | Error::NearSingular { .. }
        | Error::GammaTooSmall { .. }
        | Error::SingularClosure(_) => 2,
        Error::BlowUp { .. } => 3,
        _ => 1,
    }
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Design { config, fixture, out } => cmd_design(&config, fixture, out.as_deref()),
        Command::Simulate {
            config,
            out,
            path,
            open_loop,
            undelayed,
            profiles_out,
        } => cmd_simulate(&config, &out, path, open_loop, undelayed, profiles_out.as_deref()),
        Command::Verify { suite } => cmd_verify(suite),
        Command::Sweep {
            config,
            param,
            values,
            jobs,
            out_dir,
        } => cmd_sweep(&config, &param, &values, jobs, &out_dir),
        Command::DumpSpectrum { config, count, out } => {
            cmd_dump_spectrum(&config, count, out.as_deref())
        }
    }
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

fn vector_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|x| json!(x)).collect())
}

fn cmd_design(config: &ConfigArgs, fixture: bool, out: Option<&Path>) -> Result<ExitCode, Error> {
    let cfg = config.resolve()?;
    let (d, lambda, l_vec) = if fixture {
        // classical two-mode counterexample: diagonal plant, input along e1
        let lambda = DMatrix::from_row_slice(2, 2, &[-2.0 + cfg.c, 0.0, 0.0, -5.0 + cfg.c]);
        let l = DVector::from_row_slice(&[1.0, 0.0]);
        (2usize, lambda, l)
    } else {
        let d = choose_unstable_dim(cfg.rho, cfg.c, cfg.alpha)?;
        let spectrum = eigenvalues(d, cfg.c, cfg.alpha)?;
        let basis = BasisPair::build(spectrum, DEFAULT_QUAD_NODES)?;
        let lambda = lambda_analytic(&basis.spectrum, d);
        let l_vec = basis.l_vector(d)?;
        (d, lambda, l_vec)
    };
    let gammas = match &cfg.gammas {
        Some(g) => g.clone(),
        None => default_gammas(cfg.rho, d),
    };
    let kalman = kalman_rank(&lambda, &l_vec);
    let chain = determinant_chain_agrees(&lambda, &l_vec, &gammas)?;
    let assembly = assemble_bk(&lambda, &l_vec, &gammas)?;
    let (a_json, c_json, built) =
        match build_design_from_parts(lambda.clone(), l_vec.clone(), gammas.clone()) {
            Ok(ds) => (matrix_json(&ds.a_mat), matrix_json(&ds.c_mat), true),
            Err(Error::RankConditionViolated { .. }) => (Value::Null, Value::Null, false),
            Err(e) => return Err(e),
        };
    let report = json!({
        "d": d,
        "lambda": matrix_json(&lambda),
        "L": vector_json(&l_vec),
        "gammas": gammas,
        "A": a_json,
        "C": c_json,
        "kalman": kalman.full_rank,
        "min_singular_value": kalman.sigma_min,
        "det_chain_agrees": chain,
        "sum_bk_sigma_min": assembly.sigma_min,
        "sum_bk_cond": assembly.cond,
    });
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, text + "\n")?;
    }
    Ok(if kalman.full_rank && built {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn write_trajectory(run: &RunArtifacts, out: &Path) -> Result<(), Error> {
    let mut file = fs::File::create(out)?;
    run.trajectory.write_csv(&mut file)?;
    file.flush()?;
    Ok(())
}

fn cmd_simulate(
    config: &ConfigArgs,
    out: &Path,
    path: SimPath,
    open_loop: bool,
    undelayed: bool,
    profiles_out: Option<&Path>,
) -> Result<ExitCode, Error> {
    let cfg = config.resolve()?;
    if open_loop && undelayed {
        return Err(Error::InvalidConfig(
            "--open-loop and --undelayed are mutually exclusive".to_string(),
        ));
    }
    let artifacts = match (path, open_loop, undelayed) {
        (SimPath::Pde, true, _) => run_open_loop(&cfg)?,
        (SimPath::Pde, false, false) => run_closed_loop(&cfg)?,
        (SimPath::Pde, false, true) => run_closed_loop_undelayed(&cfg)?,
        (SimPath::Modal, false, false) => run_modal_ode(&cfg)?,
        (SimPath::Modal, _, _) => {
            return Err(Error::InvalidConfig(
                "the modal surrogate always runs the delayed closed loop".to_string(),
            ))
        }
    };
    write_trajectory(&artifacts, out)?;
    if let Some(ppath) = profiles_out {
        let mut file = fs::File::create(ppath)?;
        artifacts
            .trajectory
            .write_profiles_csv(&artifacts.grid_nodes, &mut file)?;
        file.flush()?;
    }
    let fit_start = if cfg.t_final > 2.0 * cfg.tau.max(0.5) {
        cfg.tau.max(0.5) * 2.0
    } else {
        cfg.t_final / 2.0
    };
    let rate = estimate_decay_rate(&artifacts.trajectory, fit_start)?;
    let report = json!({
        "decay_rate": rate,
        "norm_ratio": artifacts.norm_ratio(),
        "fit_t_start": fit_start,
        "out": out.display().to_string(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(suite: Suite) -> Result<ExitCode, Error> {
    let reports: Vec<SuiteReport> = match suite {
        Suite::Spectral => vec![verify_spectral()?],
        Suite::Design => vec![verify_design()?],
        Suite::Delay => vec![verify_delay()?],
        Suite::Pdesim => vec![verify_pdesim()?],
        Suite::All => verify_all()?,
    };
    println!("{}", serde_json::to_string_pretty(&reports)?);
    let all_passed = reports.iter().all(|r| r.passed);
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    })
}

fn cmd_sweep(
    config: &ConfigArgs,
    param: &str,
    values: &[String],
    jobs: usize,
    out_dir: &Path,
) -> Result<ExitCode, Error> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("--values must be nonempty".to_string()));
    }
    let jobs = jobs.max(1);
    fs::create_dir_all(out_dir)?;
    // resolve once to validate the base configuration and the key name
    let base = config.resolve()?;
    let base_value = serde_json::to_value(&base)?;
    if base_value.get(param).is_none() {
        return Err(Error::InvalidConfig(format!(
            "unknown configuration key '{param}'"
        )));
    }

    let run_one = |raw: &String| -> Result<Value, Error> {
        let mut patched = base_value.clone();
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
        patched[param] = parsed;
        let cfg: SimConfig = serde_json::from_value(patched)?;
        cfg.validate()?;
        let artifacts = run_closed_loop(&cfg)?;
        let out = out_dir.join(format!("{param}-{raw}.csv"));
        write_trajectory(&artifacts, &out)?;
        let fit_start = if cfg.t_final > 2.0 * cfg.tau.max(0.5) {
            cfg.tau.max(0.5) * 2.0
        } else {
            cfg.t_final / 2.0
        };
        let rate = estimate_decay_rate(&artifacts.trajectory, fit_start)?;
        Ok(json!({
            "param": param,
            "value": serde_json::from_str::<Value>(raw)
                .unwrap_or_else(|_| Value::String(raw.clone())),
            "decay_rate": rate,
            "norm_ratio": artifacts.norm_ratio(),
            "out": out.display().to_string(),
        }))
    };

    // run at most `jobs` simulations at a time; each writes its own file
    let mut entries: Vec<Value> = Vec::with_capacity(values.len());
    let mut first_error: Option<Error> = None;
    for chunk in values.chunks(jobs) {
        let outcomes: Vec<Result<Value, Error>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|raw| scope.spawn(|| run_one(raw))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        });
        for (raw, outcome) in chunk.iter().zip(outcomes) {
            match outcome {
                Ok(entry) => entries.push(entry),
                Err(e) => {
                    entries.push(json!({
                        "param": param,
                        "value": raw,
                        "error": e.to_string(),
                    }));
                    if first_error.is_none() {
                        first_error = Some(e);
                    }
                }
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&entries)?);
    match first_error {
        None => Ok(ExitCode::SUCCESS),
        Some(e) => Ok(ExitCode::from(exit_code_for(&e))),
    }
}

fn cmd_dump_spectrum(
    config: &ConfigArgs,
    count: usize,
    out: Option<&Path>,
) -> Result<ExitCode, Error> {
    let cfg = config.resolve()?;
    if count == 0 {
        return Err(Error::InvalidConfig(
            "--count must be at least 1".to_string(),
        ));
    }
    let rows = spectrum_table(count, cfg.c, cfg.alpha, DEFAULT_QUAD_NODES)?;
    let mut text = String::from("k,beta_k,lambda_2k,lambda_2k+1,C_k2,l_2k,l_2k+1\n");
    for row in &rows {
        text.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            row.k, row.beta_k, row.lambda_even, row.lambda_odd, row.c2, row.l_even, row.l_odd
        ));
    }
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}
