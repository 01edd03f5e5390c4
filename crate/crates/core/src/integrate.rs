//! Time integration: forward Euler, the one-step theta family solved by
//! fixed-point iteration, simulation orchestration, and the semi-discrete
//! energy stability check.
//!
//! The forward scheme updates velocity explicitly and then uses the new
//! velocity in the displacement update, which is the velocity form of the
//! central difference scheme. The theta family at theta = 0 delegates to that
//! same path (a fully explicit displacement update is not offered); for
//! theta > 0 the coupled update is solved by Picard iteration, which
//! contracts when `dt < eps^2 / Cbar`.

use crate::error::{Error, Result};
use crate::force::{
    effective_cbar, max_abs_strain, peridynamic_force, potential_energy,
};
use crate::grid::{l2_dist, l2_norm, DomainTaper, Grid, VectorField};
use crate::potential::{InfluenceSpec, PotentialSpec};
use crate::stability::softening_map;

#[derive(Debug, Clone, Copy)]
pub struct SchemeConfig {
    pub dt: f64,
    /// 0 = forward Euler, 1/2 = Crank-Nicolson, 1 = backward Euler.
    pub theta: f64,
    pub t_final: f64,
    /// Relative L2 tolerance of the fixed-point iteration.
    pub tol_fp: f64,
    pub max_fp_iters: usize,
}

impl SchemeConfig {
    pub fn new(dt: f64, theta: f64, t_final: f64) -> Result<Self> {
        let cfg = Self { dt, theta, t_final, tol_fp: 1e-10, max_fp_iters: 100 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!("final time must be positive, got {}", self.t_final)));
        }
        if !(self.tol_fp > 0.0) || self.max_fp_iters == 0 {
            return Err(Error::Config("fixed-point tolerance and iteration budget must be positive".into()));
        }
        Ok(())
    }

    /// Number of steps when `t_final` is an integer multiple of `dt`.
    pub fn step_count(&self) -> Result<usize> {
        let k = self.t_final / self.dt;
        let rounded = k.round();
        if (k - rounded).abs() > 1e-9 * rounded.max(1.0) || rounded < 1.0 {
            return Err(Error::Config(format!(
                "final time {} must be a positive integer multiple of dt {}",
                self.t_final, self.dt
            )));
        }
        Ok(rounded as usize)
    }
}

#[derive(Debug, Clone)]
pub struct State {
    pub u: VectorField,
    pub v: VectorField,
    pub time: f64,
    pub step: usize,
}

impl State {
    pub fn new(u: VectorField, v: VectorField) -> Self {
        Self { u, v, time: 0.0, step: 0 }
    }
}

/// Convergence diagnostics of one implicit solve.
#[derive(Debug, Clone, Default)]
pub struct PicardStats {
    pub iterations: usize,
    /// Successive reduction factors of the combined update norm.
    pub ratios: Vec<f64>,
}

pub struct Model<'a> {
    pub grid: &'a Grid,
    pub potential: &'a PotentialSpec,
    pub influence: &'a InfluenceSpec,
    pub taper: &'a DomainTaper,
}

impl<'a> Model<'a> {
    pub fn force(&self, u: &VectorField) -> Result<VectorField> {
        peridynamic_force(u, self.grid, self.potential, self.influence, self.taper)
    }
}

fn check_finite(state: &State) -> Result<()> {
    if state.u.all_finite() && state.v.all_finite() {
        Ok(())
    } else {
        Err(Error::BlowUp { step: state.step, time: state.time })
    }
}

/// One forward Euler step:
/// `v1 = v + dt (F(u) + b)`, then `u1 = u + dt v1`.
pub fn forward_euler_step(
    state: &State,
    model: &Model,
    b_now: &VectorField,
    dt: f64,
) -> Result<State> {
    let accel = model.force(&state.u)?.add_scaled(1.0, b_now);
    let v1 = state.v.add_scaled(dt, &accel);
    let u1 = state.u.add_scaled(dt, &v1);
    let next = State { u: u1, v: v1, time: state.time + dt, step: state.step + 1 };
    check_finite(&next)?;
    Ok(next)
}

/// One step of the theta family. The coupled update
/// `v1 = v + dt [(1-theta)(F(u) + b) + theta (F(u1) + b1)]`,
/// `u1 = u + dt [(1-theta) v + theta v1]`
/// is solved by Picard iteration seeded with the forward Euler predictor.
/// `cbar` only feeds the contraction estimate reported on failure.
pub fn theta_step(
    state: &State,
    model: &Model,
    b_now: &VectorField,
    b_next: &VectorField,
    scheme: &SchemeConfig,
    cbar: f64,
) -> Result<(State, PicardStats)> {
    let dt = scheme.dt;
    let theta = scheme.theta;
    if theta == 0.0 {
        return Ok((forward_euler_step(state, model, b_now, dt)?, PicardStats::default()));
    }
    let grid = model.grid;
    let a_now = model.force(&state.u)?.add_scaled(1.0, b_now);

    // forward Euler predictor
    let mut v_next = state.v.add_scaled(dt, &a_now);
    let mut u_next = state.u.add_scaled(dt, &v_next);

    let mut stats = PicardStats::default();
    let mut prev_diff = f64::INFINITY;
    for iter in 1..=scheme.max_fp_iters {
        let a_next = model.force(&u_next)?.add_scaled(1.0, b_next);
        let v_new = state
            .v
            .add_scaled(dt * (1.0 - theta), &a_now)
            .add_scaled(dt * theta, &a_next);
        let u_new = state
            .u
            .add_scaled(dt * (1.0 - theta), &state.v)
            .add_scaled(dt * theta, &v_new);
        if !(u_new.all_finite() && v_new.all_finite()) {
            return Err(Error::BlowUp { step: state.step + 1, time: state.time + dt });
        }
        let diff = l2_dist(&u_new, &u_next, grid) + l2_dist(&v_new, &v_next, grid);
        let denom = l2_norm(&u_new, grid) + l2_norm(&v_new, grid);
        if prev_diff.is_finite() && prev_diff > 0.0 {
            stats.ratios.push(diff / prev_diff);
        }
        prev_diff = diff;
        stats.iterations = iter;
        u_next = u_new;
        v_next = v_new;
        let rel = if denom > 1e-300 { diff / denom } else { diff };
        if rel < scheme.tol_fp {
            let next = State { u: u_next, v: v_next, time: state.time + dt, step: state.step + 1 };
            return Ok((next, stats));
        }
    }
    Err(Error::NonConvergence {
        iters: scheme.max_fp_iters,
        contraction: dt * theta * cbar / (grid.eps() * grid.eps()),
    })
}

/// One sampled row of a trajectory.
#[derive(Debug, Clone)]
pub struct TrajSample {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub max_strain: f64,
    pub softening_fraction: f64,
    /// L2 norm of the body force at this time, kept for the energy bound.
    pub body_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<TrajSample>,
    pub final_state: State,
}

/// Steps the scheme from t = 0 to `t_final`, sampling energies, the largest
/// strain, and the softening fraction every `snapshot_every` steps (the first
/// and last steps are always sampled). The observer runs at every sampled
/// step after the row is recorded. Deterministic for a fixed config.
///
/// For theta > 0 the step restriction `dt < eps^2 / Cbar` is enforced up
/// front with the grid's effective `Cbar`.
pub fn run_simulation(
    u0: VectorField,
    v0: VectorField,
    scheme: &SchemeConfig,
    model: &Model,
    body: &dyn Fn(f64) -> VectorField,
    snapshot_every: usize,
    mut observer: impl FnMut(&State, &TrajSample) -> Result<()>,
) -> Result<Trajectory> {
    scheme.validate()?;
    let steps = scheme.step_count()?;
    if snapshot_every == 0 {
        return Err(Error::Config("snapshot cadence must be at least 1".into()));
    }
    let cbar = effective_cbar(model.grid, model.potential, model.influence)?;
    let eps = model.grid.eps();
    if scheme.theta > 0.0 && scheme.dt >= eps * eps / cbar {
        return Err(Error::Config(format!(
            "implicit step requires dt < eps^2 / Cbar = {:.6e}, got dt = {:.6e}",
            eps * eps / cbar,
            scheme.dt
        )));
    }

    let mut state = State::new(u0, v0);
    check_finite(&state)?;
    let mut samples = Vec::new();
    let sample = |state: &State, b: &VectorField| -> Result<TrajSample> {
        let kinetic_norm = l2_norm(&state.v, model.grid);
        let kinetic = 0.5 * kinetic_norm * kinetic_norm;
        let potential =
            potential_energy(&state.u, model.grid, model.potential, model.influence, model.taper)?;
        let (_, global_soft) = softening_map(&state.u, model.grid, model.potential)?;
        Ok(TrajSample {
            step: state.step,
            t: state.time,
            energy: kinetic + potential,
            kinetic,
            potential,
            max_strain: max_abs_strain(&state.u, model.grid),
            softening_fraction: global_soft,
            body_norm: l2_norm(b, model.grid),
        })
    };

    let mut b_now = body(0.0);
    samples.push(sample(&state, &b_now)?);
    observer(&state, samples.last().unwrap())?;
    for k in 0..steps {
        let t_next = (k + 1) as f64 * scheme.dt;
        let next = if scheme.theta == 0.0 {
            forward_euler_step(&state, model, &b_now, scheme.dt)?
        } else {
            let b_next = body(t_next);
            let (next, _) = theta_step(&state, model, &b_now, &b_next, scheme, cbar)?;
            b_now = b_next;
            next
        };
        state = next;
        state.time = t_next; // keep t^k = k dt exactly
        if scheme.theta == 0.0 {
            b_now = body(state.time);
        }
        if state.step % snapshot_every == 0 || state.step == steps {
            samples.push(sample(&state, &b_now)?);
            observer(&state, samples.last().unwrap())?;
        }
    }
    Ok(Trajectory { samples, final_state: state })
}

/// The constant `C = 4 C1 Jbar_{1/2} sqrt(|D|)` of the semi-discrete energy
/// bound.
pub fn semi_discrete_energy_constant(
    pot: &PotentialSpec,
    infl: &InfluenceSpec,
    dim: usize,
    domain_measure: f64,
) -> Result<f64> {
    let (c1, _, _) = crate::potential::derivative_bounds(pot)?;
    let j_half = crate::potential::influence_moment(0.5, dim, infl)?;
    Ok(4.0 * c1 * j_half * domain_measure.sqrt())
}

#[derive(Debug, Clone)]
pub struct EnergyStabilityReport {
    /// `(sqrt(E(0)) + T C / eps^{3/2} + \int_0^T ||b|| dt)^2`
    pub bound: f64,
    pub max_energy: f64,
    pub margin: f64,
    pub body_force_integral: f64,
}

/// Checks the sampled energies of a trajectory against the semi-discrete
/// stability bound; the time integral of `||b||` uses the trapezoid rule over
/// the sampled instants.
pub fn energy_stability_report(
    traj: &Trajectory,
    c_const: f64,
    eps: f64,
    t_final: f64,
) -> EnergyStabilityReport {
    let e0 = traj.samples.first().map(|s| s.energy).unwrap_or(0.0);
    let mut integral = 0.0;
    for pair in traj.samples.windows(2) {
        integral += 0.5 * (pair[1].t - pair[0].t) * (pair[0].body_norm + pair[1].body_norm);
    }
    let root = e0.max(0.0).sqrt() + t_final * c_const / eps.powf(1.5) + integral;
    let bound = root * root;
    let max_energy = traj.samples.iter().fold(0.0f64, |m, s| m.max(s.energy));
    EnergyStabilityReport { bound, max_energy, margin: bound - max_energy, body_force_integral: integral }
}
