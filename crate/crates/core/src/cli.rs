//! Command-line surface: `constants`, `simulate`, `converge`, `stability`,
//! and `bound`, each driven by a flat key-value config file.
//!
//! Config keys (one `key = value` per line, `#` comments, unknown keys
//! rejected):
//!
//! | key              | meaning                                         | default |
//! |------------------|-------------------------------------------------|---------|
//! | `dim`            | spatial dimension, 1..3                         | 2       |
//! | `extent`         | box edge length per axis                        | 1.0     |
//! | `h`              | lattice spacing (coarsest level for `converge`) | 0.05    |
//! | `eps`            | horizon radius, `h < eps < extent`              | 0.2     |
//! | `gamma`          | Hoelder exponent of the manufactured profile    | 1.0     |
//! | `pot_c`          | potential plateau `f_inf`                       | 1.0     |
//! | `pot_beta`       | potential rate, `f'(0) = pot_c * pot_beta`      | 1.0     |
//! | `influence`      | `const` or `ramp`                               | const   |
//! | `theta`          | one-step blend: 0 explicit, 1/2 CN, 1 implicit  | 0.0     |
//! | `dt`             | time step (coarsest level on the time axis)     | 0.01    |
//! | `T`              | final time, an integer multiple of `dt`         | 0.1     |
//! | `tol_fp`         | implicit fixed-point relative tolerance         | 1e-10   |
//! | `max_fp_iters`   | implicit iteration budget                       | 100     |
//! | `profile`        | `zero`, `sine`, `cusp`, or `rough`              | sine    |
//! | `amp_omega`      | cosine frequency of the amplitude (0 = static)  | 0.0     |
//! | `levels`         | refinement levels of a `converge` study (>= 3)  | 4       |
//! | `axis`           | `space` or `time`                               | space   |
//! | `ref_factor`     | oracle grid refinement (>= 2)                   | 4       |
//! | `snapshot_every` | trajectory sampling cadence in steps            | 1       |
//!
//! Every floating-point value in the emitted files is printed with 17
//! significant digits so runs can be audited byte for byte.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::force::effective_cbar;
use crate::grid::{domain_taper, read_field_csv, write_field_csv, VectorField};
use crate::integrate::{
    energy_stability_report, run_simulation, semi_discrete_energy_constant, Model, Trajectory,
};
use crate::potential::constants_report;
use crate::stability::{stability_report, write_stability_csv};
use crate::study::{
    apriori_bound, consistency_constants, measured_vs_bound, refinement_study, worked_constants,
    write_rate_table_csv, ComparisonMode, StudyParams,
};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Constants,
    Simulate,
    Converge,
    Stability,
    Bound,
}

#[derive(Debug, Clone)]
pub struct CliArgs {
    pub command: Command,
    pub config: PathBuf,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub seed: u64,
    pub snapshot: Option<PathBuf>,
}

const USAGE: &str = "usage: peridyn-fd <constants|simulate|converge|stability|bound> \
--config PATH [--out DIR] [--threads N] [--seed S] [--snapshot PATH]";

pub fn parse_args(args: &[String]) -> Result<CliArgs> {
    let mut iter = args.iter();
    let command = match iter.next().map(String::as_str) {
        Some("constants") => Command::Constants,
        Some("simulate") => Command::Simulate,
        Some("converge") => Command::Converge,
        Some("stability") => Command::Stability,
        Some("bound") => Command::Bound,
        Some(other) => return Err(Error::Config(format!("unknown command `{other}`\n{USAGE}"))),
        None => return Err(Error::Config(USAGE.into())),
    };
    let mut config = None;
    let mut out = PathBuf::from("out");
    let mut threads = None;
    let mut seed = 0u64;
    let mut snapshot = None;
    while let Some(flag) = iter.next() {
        let mut need_value = || {
            iter.next()
                .cloned()
                .ok_or_else(|| Error::Config(format!("flag {flag} needs a value\n{USAGE}")))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(need_value()?)),
            "--out" => out = PathBuf::from(need_value()?),
            "--threads" => {
                let v = need_value()?;
                let n: usize = v
                    .parse()
                    .map_err(|_| Error::Config(format!("--threads needs an integer, got {v}")))?;
                if n == 0 {
                    return Err(Error::Config("--threads must be at least 1".into()));
                }
                threads = Some(n);
            }
            "--seed" => {
                let v = need_value()?;
                seed = v
                    .parse()
                    .map_err(|_| Error::Config(format!("--seed needs an integer, got {v}")))?;
            }
            "--snapshot" => snapshot = Some(PathBuf::from(need_value()?)),
            other => return Err(Error::Config(format!("unknown flag `{other}`\n{USAGE}"))),
        }
    }
    let config = config.ok_or_else(|| Error::Config(format!("--config is required\n{USAGE}")))?;
    Ok(CliArgs { command, config, out, threads, seed, snapshot })
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_entry(args: Vec<String>) -> i32 {
    match parse_args(&args).and_then(run) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

pub fn run(args: CliArgs) -> Result<()> {
    let body = move || -> Result<()> {
        let cfg = RunConfig::from_file(&args.config)?;
        std::fs::create_dir_all(&args.out)?;
        match args.command {
            Command::Constants => cmd_constants(&cfg, &args.out),
            Command::Simulate => cmd_simulate(&cfg, &args.out),
            Command::Converge => cmd_converge(&cfg, &args.out, args.seed),
            Command::Stability => cmd_stability(&cfg, &args.out, args.snapshot.as_deref()),
            Command::Bound => cmd_bound(&cfg, &args.out, args.seed),
        }
    };
    match args.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build a {n}-thread pool: {e}")))?;
            pool.install(body)
        }
        None => body(),
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_constants(cfg: &RunConfig, out: &Path) -> Result<()> {
    let pot = cfg.potential()?;
    let infl = cfg.influence_spec();
    let report = constants_report(&pot, &infl, cfg.dim, cfg.gamma)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    eprintln!(
        "note: potential family is the exponential prototype f(r) = c (1 - exp(-beta r)) \
         with c = {}, beta = {}",
        cfg.pot_c, cfg.pot_beta
    );

    let mut json = String::from("{\n");
    let _ = writeln!(json, "  \"rbar\": {},", fmt_f64(report.rbar));
    let _ = writeln!(json, "  \"C1\": {},", fmt_f64(report.c1));
    let _ = writeln!(json, "  \"C2\": {},", fmt_f64(report.c2));
    let _ = writeln!(json, "  \"C3\": {},", fmt_f64(report.c3));
    let jbar_entries: Vec<String> = report
        .jbar
        .iter()
        .map(|(a, v)| format!("    \"{a}\": {}", fmt_f64(*v)))
        .collect();
    let _ = writeln!(json, "  \"Jbar\": {{\n{}\n  }}{}", jbar_entries.join(",\n"), {
        if report.cbar.is_some() || report.lefm.is_some() {
            ","
        } else {
            ""
        }
    });
    if let Some(cbar) = report.cbar {
        let trailing = if report.lefm.is_some() { "," } else { "" };
        let _ = writeln!(json, "  \"Cbar\": {}{trailing}", fmt_f64(cbar));
    }
    if let Some((mu, lambda, gc)) = report.lefm {
        let _ = writeln!(json, "  \"mu\": {},", fmt_f64(mu));
        let _ = writeln!(json, "  \"lambda\": {},", fmt_f64(lambda));
        let _ = writeln!(json, "  \"Gc\": {}", fmt_f64(gc));
    }
    json.push_str("}\n");
    let path = out.join("constants.json");
    write_text(&path, &json)?;
    println!("constants written to {}", path.display());
    println!("rbar = {}", fmt_f64(report.rbar));
    println!("C1 = {}", fmt_f64(report.c1));
    println!("C2 = {}", fmt_f64(report.c2));
    println!("C3 = {}", fmt_f64(report.c3));
    if let Some(cbar) = report.cbar {
        println!("Cbar = {}", fmt_f64(cbar));
    }
    if let Some((mu, lambda, gc)) = report.lefm {
        println!("mu = {}", fmt_f64(mu));
        println!("lambda = {}", fmt_f64(lambda));
        println!("Gc = {}", fmt_f64(gc));
    }
    Ok(())
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut text =
        String::from("step,t,energy,kinetic,potential,max_strain,softening_fraction\n");
    for s in &traj.samples {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            s.step,
            fmt_f64(s.t),
            fmt_f64(s.energy),
            fmt_f64(s.kinetic),
            fmt_f64(s.potential),
            fmt_f64(s.max_strain),
            fmt_f64(s.softening_fraction)
        );
    }
    write_text(path, &text)
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let pot = cfg.potential()?;
    let infl = cfg.influence_spec();
    let grid = cfg.grid()?;
    let taper = domain_taper(&grid);
    let scheme = cfg.scheme()?;
    let problem = cfg.problem()?;
    let (u0, v0) = problem.sampled_state(0.0, &grid);
    let model = Model { grid: &grid, potential: &pot, influence: &infl, taper: &taper };
    let out_owned = out.to_path_buf();
    let grid_ref = &grid;
    let traj = run_simulation(
        u0,
        v0,
        &scheme,
        &model,
        &|_| VectorField::zeros(grid_ref),
        cfg.snapshot_every,
        |state, _| {
            let path = out_owned.join(format!("snapshot_{:06}.csv", state.step));
            write_field_csv(&path, &state.u, grid_ref)
        },
    )?;
    write_trajectory_csv(&out.join("trajectory.csv"), &traj)?;
    write_field_csv(&out.join("final_state.csv"), &traj.final_state.u, &grid)?;
    let c_const =
        semi_discrete_energy_constant(&pot, &infl, cfg.dim, grid.domain_measure())?;
    let report = energy_stability_report(&traj, c_const, cfg.eps, cfg.t_final);
    println!("steps = {}", traj.final_state.step);
    println!("final_energy = {}", fmt_f64(traj.samples.last().map(|s| s.energy).unwrap_or(0.0)));
    println!("max_energy = {}", fmt_f64(report.max_energy));
    println!("energy_bound = {}", fmt_f64(report.bound));
    println!("energy_margin = {}", fmt_f64(report.margin));
    Ok(())
}

fn cmd_converge(cfg: &RunConfig, out: &Path, seed: u64) -> Result<()> {
    let params = StudyParams {
        axis: cfg.axis,
        levels: cfg.levels,
        theta: cfg.theta,
        dim: cfg.dim,
        extents: vec![cfg.extent; cfg.dim],
        eps: cfg.eps,
        h0: cfg.h,
        dt0: cfg.dt,
        t_final: cfg.t_final,
        problem: cfg.problem()?,
        potential: cfg.potential()?,
        influence: cfg.influence_spec(),
        ref_factor: cfg.ref_factor,
        safety: 0.1,
        sample_budget: 200_000,
        seed,
        comparison: ComparisonMode::NodeSample,
    };
    let table = refinement_study(&params)?;
    for row in &table.rows {
        if let Some(failure) = &row.failure {
            eprintln!("warning: level h = {}, dt = {} failed: {failure}", row.h, row.dt);
        }
    }
    write_rate_table_csv(&out.join("rate_table.csv"), &table)?;
    let axis = match table.axis {
        crate::study::StudyAxis::Space => "space",
        crate::study::StudyAxis::Time => "time",
    };
    let completed = table.rows.iter().filter(|r| r.failure.is_none()).count();
    let slopes_json = format!(
        "{{\n  \"axis\": \"{axis}\",\n  \"slope\": {},\n  \"intercept\": {},\n  \
         \"residual\": {},\n  \"levels\": {},\n  \"completed\": {},\n  \"theta\": {},\n  \
         \"gamma\": {}\n}}\n",
        fmt_f64(table.slope),
        fmt_f64(table.intercept),
        fmt_f64(table.residual),
        table.rows.len(),
        completed,
        fmt_f64(cfg.theta),
        fmt_f64(cfg.gamma),
    );
    write_text(&out.join("slopes.json"), &slopes_json)?;
    let slacks = measured_vs_bound(&table)?;
    println!("axis = {axis}");
    println!("fitted_slope = {}", fmt_f64(table.slope));
    println!("fit_residual = {}", fmt_f64(table.residual));
    for (row, slack) in table.rows.iter().zip(&slacks) {
        println!(
            "level h = {} dt = {} sup_Ek = {} bound_slack = {}",
            fmt_f64(row.h),
            fmt_f64(row.dt),
            fmt_f64(row.sup_ek),
            slack.map(fmt_f64).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

fn cmd_stability(cfg: &RunConfig, out: &Path, snapshot: Option<&Path>) -> Result<()> {
    let pot = cfg.potential()?;
    let infl = cfg.influence_spec();
    let grid = cfg.grid()?;
    let taper = domain_taper(&grid);
    let field = match snapshot {
        Some(path) => read_field_csv(path, &grid)?,
        None => VectorField::zeros(&grid),
    };
    let rows = stability_report(&field, &grid, &pot, &infl, &taper, cfg.dt)?;
    write_stability_csv(&out.join("stability.csv"), &rows, cfg.dim)?;
    let flagged = rows.iter().filter(|r| r.not_negative_definite).count();
    let max_rho_f = rows.iter().fold(0.0f64, |m, r| m.max(r.rho_forward));
    let max_rho_b = rows.iter().fold(0.0f64, |m, r| m.max(r.rho_backward));
    println!("nodes = {}", rows.len());
    println!("not_negative_definite_nodes = {flagged}");
    println!("max_rho_forward = {}", fmt_f64(max_rho_f));
    println!("max_rho_backward = {}", fmt_f64(max_rho_b));
    Ok(())
}

fn cmd_bound(cfg: &RunConfig, out: &Path, seed: u64) -> Result<()> {
    let pot = cfg.potential()?;
    let infl = cfg.influence_spec();
    let grid = cfg.grid()?;
    let problem = cfg.problem()?;
    let cbar = effective_cbar(&grid, &pot, &infl)?;
    let consts = consistency_constants(
        &problem,
        &grid,
        &pot,
        &infl,
        cfg.t_final,
        cfg.gamma,
        200_000,
        seed,
    )?;
    let (bound, exponent) =
        apriori_bound(cfg.t_final, cfg.dt, cfg.h, cfg.gamma, cfg.eps, cfg.theta, &consts);
    let worked = worked_constants(cfg.t_final, cbar, cfg.eps);

    println!("Cbar = {}", fmt_f64(cbar));
    println!("C_t = {}", fmt_f64(consts.c_t));
    println!("C_s = {}", fmt_f64(consts.c_s));
    println!("C_bar_t = {}", fmt_f64(consts.c_bar_t));
    println!("exponent = {}", fmt_f64(exponent));
    if bound.is_infinite() {
        println!("bound = inf (exponent {} overflows)", fmt_f64(exponent));
    } else {
        println!("bound = {}", fmt_f64(bound));
    }
    println!("C1_formula = {}", fmt_f64(worked.c1_formula));
    println!("C2_formula = {}", fmt_f64(worked.c2_formula));
    println!("C2_over_C1 = {}", fmt_f64(worked.ratio));
    println!(
        "reference_values: C1 = {}, C2 = {}",
        fmt_f64(worked.reference_c1),
        fmt_f64(worked.reference_c2)
    );
    println!("note: {}", worked.note);

    let json = format!(
        "{{\n  \"T\": {},\n  \"dt\": {},\n  \"h\": {},\n  \"gamma\": {},\n  \"eps\": {},\n  \
         \"Cbar\": {},\n  \"C_t\": {},\n  \"C_s\": {},\n  \"C_bar_t\": {},\n  \"exponent\": {},\n  \
         \"bound\": {},\n  \"C1_formula\": {},\n  \"C2_formula\": {},\n  \"C2_over_C1\": {},\n  \
         \"C1_reference\": {},\n  \"C2_reference\": {},\n  \"note\": \"{}\"\n}}\n",
        fmt_f64(cfg.t_final),
        fmt_f64(cfg.dt),
        fmt_f64(cfg.h),
        fmt_f64(cfg.gamma),
        fmt_f64(cfg.eps),
        fmt_f64(cbar),
        fmt_f64(consts.c_t),
        fmt_f64(consts.c_s),
        fmt_f64(consts.c_bar_t),
        fmt_f64(exponent),
        if bound.is_infinite() { "\"inf\"".to_string() } else { fmt_f64(bound) },
        fmt_f64(worked.c1_formula),
        fmt_f64(worked.c2_formula),
        fmt_f64(worked.ratio),
        fmt_f64(worked.reference_c1),
        fmt_f64(worked.reference_c2),
        worked.note.replace('"', "'"),
    );
    write_text(&out.join("bound.json"), &json)?;
    Ok(())
}
