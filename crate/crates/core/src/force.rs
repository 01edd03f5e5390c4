//! Strain, the nonlocal force, potential and total energies, and the force
//! Lipschitz diagnostic.
//!
//! All quadratures are nodal midpoint rules over the shared horizon stencil
//! with the self-cell excluded; the integrable bond singularity is never
//! sampled. Stencil offsets are visited in `{+delta, -delta}` pairs and each
//! pair is summed before accumulation, so symmetric configurations cancel
//! exactly and per-node sums are bit-reproducible regardless of thread count.

use crate::error::{Error, Result};
use crate::grid::{scheme_inner, l2_dist, l2_norm, DomainTaper, Grid, VectorField};
use crate::potential::{InfluenceSpec, PotentialSpec};
use rayon::prelude::*;

/// Node counts below this run force sweeps sequentially.
const PAR_THRESHOLD: usize = 4096;

/// One directed bond from a source node along a signed stencil offset.
#[derive(Debug, Clone)]
pub struct BondState {
    pub source: usize,
    pub offset: [i64; 3],
    /// Bond length s = |x_j - x_i|.
    pub length: f64,
    /// s / eps in (0, 1].
    pub xi: f64,
    /// Unit direction from the source toward the neighbor.
    pub dir: [f64; 3],
    pub strain: f64,
}

fn check_grid(field: &VectorField, grid: &Grid) -> Result<()> {
    if grid.matches(field) {
        Ok(())
    } else {
        Err(Error::Config("field does not belong to this grid".into()))
    }
}

/// Strain of the bond between two interior nodes:
/// `S = (u_j - u_i) . e / |x_j - x_i|` with `e` the unit bond direction.
/// The strain is symmetric under exchanging the endpoints.
pub fn strain(u: &VectorField, grid: &Grid, i: usize, j: usize) -> Result<f64> {
    check_grid(u, grid)?;
    if i == j {
        return Err(Error::Domain("a bond needs two distinct endpoints".into()));
    }
    let xi = grid.coords(i);
    let xj = grid.coords(j);
    let mut dx = [0.0; 3];
    let mut len2 = 0.0;
    for a in 0..grid.dim() {
        dx[a] = xj[a] - xi[a];
        len2 += dx[a] * dx[a];
    }
    let len = len2.sqrt();
    if len > grid.eps() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "nodes are {len} apart, outside the horizon {}",
            grid.eps()
        )));
    }
    let ui = u.get(i);
    let uj = u.get(j);
    let mut s = 0.0;
    for a in 0..grid.dim() {
        s += (uj[a] - ui[a]) * dx[a] / len;
    }
    Ok(s / len)
}

/// All directed bonds of a node, strains taken with the zero extension for
/// neighbors outside the box.
pub fn bond_states(u: &VectorField, grid: &Grid, node: usize) -> Vec<BondState> {
    let lat = grid.lattice(node);
    let ui = u.get(node);
    let mut out = Vec::with_capacity(2 * grid.stencil().len());
    for bond in grid.stencil() {
        for sign in [1i64, -1] {
            let j = [
                lat[0] + sign * bond.delta[0],
                lat[1] + sign * bond.delta[1],
                lat[2] + sign * bond.delta[2],
            ];
            let uj = grid.node_id(j).map(|id| u.get(id)).unwrap_or([0.0; 3]);
            let sgn = sign as f64;
            let mut dot = 0.0;
            for a in 0..grid.dim() {
                dot += (uj[a] - ui[a]) * bond.dir[a];
            }
            out.push(BondState {
                source: node,
                offset: [sign * bond.delta[0], sign * bond.delta[1], sign * bond.delta[2]],
                length: bond.length,
                xi: bond.xi,
                dir: [sgn * bond.dir[0], sgn * bond.dir[1], sgn * bond.dir[2]],
                strain: sgn * dot / bond.length,
            });
        }
    }
    out
}

#[inline]
fn force_at_node(
    node: usize,
    u: &VectorField,
    grid: &Grid,
    pot: &PotentialSpec,
    infl: &InfluenceSpec,
    taper: &DomainTaper,
    pref: f64,
) -> [f64; 3] {
    let dim = grid.dim();
    let w_i = taper.value(node);
    if w_i == 0.0 {
        return [0.0; 3];
    }
    let lat = grid.lattice(node);
    let ui = u.get(node);
    let mut acc = [0.0f64; 3];
    for bond in grid.stencil() {
        let j_xi = infl.eval(bond.xi);
        if j_xi == 0.0 {
            continue;
        }
        let mut pair = [0.0f64; 3];
        for sign in [1i64, -1] {
            let j = [
                lat[0] + sign * bond.delta[0],
                lat[1] + sign * bond.delta[1],
                lat[2] + sign * bond.delta[2],
            ];
            let Some(jid) = grid.node_id(j) else { continue };
            let w_j = taper.value(jid);
            if w_j == 0.0 {
                continue;
            }
            let uj = u.get(jid);
            let sgn = sign as f64;
            let mut dot = 0.0;
            for a in 0..dim {
                dot += (uj[a] - ui[a]) * bond.dir[a];
            }
            let s_strain = sgn * dot / bond.length;
            let arg = bond.sqrt_length * s_strain;
            let scalar = pref * j_xi * w_i * w_j * pot.f1_prime(arg) / bond.sqrt_length;
            for a in 0..dim {
                pair[a] += scalar * sgn * bond.dir[a];
            }
        }
        for a in 0..dim {
            acc[a] += pair[a];
        }
    }
    acc
}

/// The nonlocal force at every node: the midpoint quadrature of
/// `(2 / (eps omega_d)) \int omega(x) omega(x + eps xi) J(|xi|)
///  F1'(sqrt(s) S) s^{-1/2} e dxi` over the horizon.
pub fn peridynamic_force(
    u: &VectorField,
    grid: &Grid,
    pot: &PotentialSpec,
    infl: &InfluenceSpec,
    taper: &DomainTaper,
) -> Result<VectorField> {
    check_grid(u, grid)?;
    let dim = grid.dim();
    let pref =
        2.0 / (grid.eps() * grid.omega_d()) * (grid.h() / grid.eps()).powi(dim as i32);
    let n = grid.node_count();
    let values: Vec<[f64; 3]> = if n >= PAR_THRESHOLD {
        (0..n)
            .into_par_iter()
            .map(|node| force_at_node(node, u, grid, pot, infl, taper, pref))
            .collect()
    } else {
        (0..n).map(|node| force_at_node(node, u, grid, pot, infl, taper, pref)).collect()
    };
    let mut out = VectorField::zeros(grid);
    for (node, v) in values.into_iter().enumerate() {
        out.set(node, v);
    }
    Ok(out)
}

/// Discrete potential energy
/// `sum_i h^d (1 / (eps^d omega_d)) sum_j h^d w_i w_j (J / eps) f(s S^2)`.
/// Nonnegative, bounded by `f_inf` times the double-sum weight.
pub fn potential_energy(
    u: &VectorField,
    grid: &Grid,
    pot: &PotentialSpec,
    infl: &InfluenceSpec,
    taper: &DomainTaper,
) -> Result<f64> {
    check_grid(u, grid)?;
    let dim = grid.dim();
    let h_d = grid.cell_volume();
    let pref = h_d * h_d / (grid.eps().powi(dim as i32 + 1) * grid.omega_d());
    let n = grid.node_count();
    let per_node = |node: usize| -> f64 {
        let w_i = taper.value(node);
        if w_i == 0.0 {
            return 0.0;
        }
        let lat = grid.lattice(node);
        let ui = u.get(node);
        let mut acc = 0.0;
        for bond in grid.stencil() {
            let j_xi = infl.eval(bond.xi);
            if j_xi == 0.0 {
                continue;
            }
            for sign in [1i64, -1] {
                let j = [
                    lat[0] + sign * bond.delta[0],
                    lat[1] + sign * bond.delta[1],
                    lat[2] + sign * bond.delta[2],
                ];
                let Some(jid) = grid.node_id(j) else { continue };
                let w_j = taper.value(jid);
                if w_j == 0.0 {
                    continue;
                }
                let uj = u.get(jid);
                let mut dot = 0.0;
                for a in 0..dim {
                    dot += (uj[a] - ui[a]) * bond.dir[a];
                }
                let s_strain = dot / bond.length; // sign cancels in S^2
                acc += w_i * w_j * j_xi * pot.f_raw(bond.length * s_strain * s_strain);
            }
        }
        acc
    };
    let partials: Vec<f64> = if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(per_node).collect()
    } else {
        (0..n).map(per_node).collect()
    };
    // deterministic reduction order
    Ok(pref * partials.iter().sum::<f64>())
}

/// Total energy: `(1/2) ||v||^2 + PD(u)` with the squared kinetic norm.
pub fn total_energy(
    u: &VectorField,
    v: &VectorField,
    grid: &Grid,
    pot: &PotentialSpec,
    infl: &InfluenceSpec,
    taper: &DomainTaper,
) -> Result<f64> {
    let kinetic = l2_norm(v, grid);
    Ok(0.5 * kinetic * kinetic + potential_energy(u, grid, pot, infl, taper)?)
}

/// Empirical force Lipschitz ratio `||F(u) - F(w)|| / ||u - w||` in the
/// discrete L2 norm. Always at most `6 Cbar / eps^2`; returns 0 when the
/// fields coincide.
pub fn lipschitz_ratio(
    u: &VectorField,
    w: &VectorField,
    grid: &Grid,
    pot: &PotentialSpec,
    infl: &InfluenceSpec,
    taper: &DomainTaper,
) -> Result<f64> {
    let denom = l2_dist(u, w, grid);
    if denom == 0.0 {
        return Ok(0.0);
    }
    let fu = peridynamic_force(u, grid, pot, infl, taper)?;
    let fw = peridynamic_force(w, grid, pot, infl, taper)?;
    Ok(l2_dist(&fu, &fw, grid) / denom)
}

/// `PD(u + delta p) - PD(u - delta p)` accumulated bond by bond through the
/// cancellation-free profile difference, so the O(delta) result keeps full
/// precision. The plain route (two energies, then subtract) loses the digits
/// that gradient-consistency checks need at small delta.
pub fn potential_energy_difference(
    u: &VectorField,
    p: &VectorField,
    delta: f64,
    grid: &Grid,
    pot: &PotentialSpec,
    infl: &InfluenceSpec,
    taper: &DomainTaper,
) -> Result<f64> {
    check_grid(u, grid)?;
    check_grid(p, grid)?;
    let dim = grid.dim();
    let h_d = grid.cell_volume();
    let pref = h_d * h_d / (grid.eps().powi(dim as i32 + 1) * grid.omega_d());
    let mut acc = 0.0;
    for node in 0..grid.node_count() {
        let w_i = taper.value(node);
        if w_i == 0.0 {
            continue;
        }
        let lat = grid.lattice(node);
        let ui = u.get(node);
        let pi = p.get(node);
        for bond in grid.stencil() {
            let j_xi = infl.eval(bond.xi);
            if j_xi == 0.0 {
                continue;
            }
            for sign in [1i64, -1] {
                let j = [
                    lat[0] + sign * bond.delta[0],
                    lat[1] + sign * bond.delta[1],
                    lat[2] + sign * bond.delta[2],
                ];
                let Some(jid) = grid.node_id(j) else { continue };
                let w_j = taper.value(jid);
                if w_j == 0.0 {
                    continue;
                }
                let uj = u.get(jid);
                let pj = p.get(jid);
                let mut dot_u = 0.0;
                let mut dot_p = 0.0;
                for a in 0..dim {
                    dot_u += (uj[a] - ui[a]) * bond.dir[a];
                    dot_p += (pj[a] - pi[a]) * bond.dir[a];
                }
                // arguments x_pm = s S_pm^2 with S_pm = (dot_u +- delta dot_p)/s
                // (the bond sign squares away); their gap is cancellation-free
                let s = bond.length;
                let sm = dot_u - delta * dot_p;
                let x_minus = sm * sm / s;
                let dx = 4.0 * delta * dot_u * dot_p / s;
                acc += w_i * w_j * j_xi * pot.f_diff(x_minus, dx);
            }
        }
    }
    Ok(pref * acc)
}

/// Largest |S| over every bond of the grid (zero extension outside).
pub fn max_abs_strain(u: &VectorField, grid: &Grid) -> f64 {
    let mut best = 0.0f64;
    for node in 0..grid.node_count() {
        let lat = grid.lattice(node);
        let ui = u.get(node);
        for bond in grid.stencil() {
            for sign in [1i64, -1] {
                let j = [
                    lat[0] + sign * bond.delta[0],
                    lat[1] + sign * bond.delta[1],
                    lat[2] + sign * bond.delta[2],
                ];
                let uj = grid.node_id(j).map(|id| u.get(id)).unwrap_or([0.0; 3]);
                let mut dot = 0.0;
                for a in 0..grid.dim() {
                    dot += (uj[a] - ui[a]) * bond.dir[a];
                }
                best = best.max((dot / bond.length).abs());
            }
        }
    }
    best
}

/// Midpoint quadrature of the moment `(1/omega_d) \int J |xi|^{-alpha} dxi`
/// on the actual stencil. In one dimension the continuum moment with
/// alpha = 1 diverges while the discrete sum stays finite (it grows like
/// log(eps/h)); the effective Lipschitz constant of the discrete force uses
/// this value there.
pub fn discrete_moment(grid: &Grid, infl: &InfluenceSpec, alpha: f64) -> f64 {
    let cell = (grid.h() / grid.eps()).powi(grid.dim() as i32);
    let mut acc = 0.0;
    for bond in grid.stencil() {
        acc += 2.0 * cell * infl.eval(bond.xi) * bond.xi.powf(-alpha);
    }
    acc / grid.omega_d()
}

/// `Cbar` as used by the discrete scheme on this grid: the analytic
/// `C2 * Jbar_1` when the moment exists, the stencil moment otherwise (d = 1).
pub fn effective_cbar(
    grid: &Grid,
    pot: &PotentialSpec,
    infl: &InfluenceSpec,
) -> Result<f64> {
    let (_, c2, _) = crate::potential::derivative_bounds(pot)?;
    match crate::potential::influence_moment(1.0, grid.dim(), infl) {
        Ok(j1) => Ok(c2 * j1),
        Err(_) => Ok(c2 * discrete_moment(grid, infl, 1.0)),
    }
}

/// The scheme's discrete pairing of a force field with a direction field,
/// `sum_i h^d F_i . p_i`; equals minus the Gateaux derivative of the
/// discrete potential energy along `p`.
pub fn force_inner(f: &VectorField, p: &VectorField, grid: &Grid) -> f64 {
    scheme_inner(f, p, grid)
}
