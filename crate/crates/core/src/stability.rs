//! Local stability analysis under radial perturbations: the per-node
//! stability matrix, its spectrum, spectral radii of the forward and backward
//! Euler iteration maps, and the bond-softening map.
//!
//! The stability matrix reuses the force module's midpoint stencil with the
//! same normalization, so it is the exact strain derivative of the discrete
//! force under the radial perturbation family; the reported spectrum belongs
//! to the operator the scheme actually steps.

use crate::error::{Error, Result};
use crate::grid::{DomainTaper, Grid, VectorField};
use crate::potential::{inflection_point, InfluenceSpec, PotentialSpec};
use std::io::{BufWriter, Write};
use std::path::Path;

/// Symmetric d x d matrix stored dense in a 3 x 3 frame.
pub type SymMatrix = [[f64; 3]; 3];

/// Stability matrix at one node:
/// `A = -(2 / (eps omega_d)) sum_bonds (h/eps)^d w_i w_j J F1''(sqrt(s) S) e (x) e`.
/// Negative definite while every bond sits in the convex well (|S| < S_c);
/// softening bonds flip the sign of their contribution.
pub fn stability_matrix(
    u: &VectorField,
    grid: &Grid,
    pot: &PotentialSpec,
    infl: &InfluenceSpec,
    taper: &DomainTaper,
    node: usize,
) -> SymMatrix {
    let dim = grid.dim();
    let pref = 2.0 / (grid.eps() * grid.omega_d()) * (grid.h() / grid.eps()).powi(dim as i32);
    let lat = grid.lattice(node);
    let ui = u.get(node);
    let w_i = taper.value(node);
    let mut a = [[0.0f64; 3]; 3];
    if w_i == 0.0 {
        return a;
    }
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
            let sgn = sign as f64;
            let mut dot = 0.0;
            for c in 0..dim {
                dot += (uj[c] - ui[c]) * bond.dir[c];
            }
            let s_strain = sgn * dot / bond.length;
            let (_, f1pp, _) = pot.f1_derivatives(bond.sqrt_length * s_strain);
            let scalar = -pref * j_xi * w_i * w_j * f1pp;
            // e (x) e is even in the bond sign
            for r in 0..dim {
                for c in 0..dim {
                    a[r][c] += scalar * bond.dir[r] * bond.dir[c];
                }
            }
        }
    }
    a
}

/// Eigenvalues of a symmetric d x d matrix, ascending. Closed form for
/// d in {1, 2}, cyclic Jacobi iteration for d = 3.
pub fn eigenvalues_sym(m: &SymMatrix, dim: usize) -> Vec<f64> {
    match dim {
        1 => vec![m[0][0]],
        2 => {
            let mean = 0.5 * (m[0][0] + m[1][1]);
            let half_diff = 0.5 * (m[0][0] - m[1][1]);
            let rad = (half_diff * half_diff + m[0][1] * m[0][1]).sqrt();
            vec![mean - rad, mean + rad]
        }
        3 => jacobi_eigenvalues(*m),
        _ => panic!("unsupported dimension {dim}"),
    }
}

fn jacobi_eigenvalues(mut a: SymMatrix) -> Vec<f64> {
    let frob: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-12 * (1.0 + frob);
    for _ in 0..100 {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= tol {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() <= f64::EPSILON * frob.max(1.0) {
                continue;
            }
            let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = [[0.0f64; 3]; 3];
            for r in 0..3 {
                rot[r][r] = 1.0;
            }
            rot[p][p] = c;
            rot[q][q] = c;
            rot[p][q] = s;
            rot[q][p] = -s;
            // a <- rot^T a rot
            let mut tmp = [[0.0f64; 3]; 3];
            for r in 0..3 {
                for cc in 0..3 {
                    tmp[r][cc] = (0..3).map(|k| a[r][k] * rot[k][cc]).sum();
                }
            }
            for r in 0..3 {
                for cc in 0..3 {
                    a[r][cc] = (0..3).map(|k| rot[k][r] * tmp[k][cc]).sum();
                }
            }
        }
    }
    let mut evals = vec![a[0][0], a[1][1], a[2][2]];
    evals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    evals
}

/// Spectral radius of the forward Euler iteration of the local radial mode:
/// `max_i |1 +- dt sqrt(lambda_i)|` with the complex modulus
/// `sqrt(1 + dt^2 |lambda|)` on the oscillatory branch. Exceeds 1 for every
/// nonzero eigenvalue.
pub fn forward_euler_radius(eigenvalues: &[f64], dt: f64) -> f64 {
    eigenvalues
        .iter()
        .map(|&lam| {
            if lam >= 0.0 {
                1.0 + dt * lam.sqrt()
            } else {
                (1.0 + dt * dt * lam.abs()).sqrt()
            }
        })
        .fold(1.0f64, f64::max)
}

/// Spectral radius of the backward Euler iteration:
/// `max_i |1 +- dt sqrt(lambda_i)| / |1 - lambda_i dt^2|`, complex modulus on
/// the oscillatory branch. Errors at the resonance `lambda dt^2 = 1`.
pub fn backward_euler_radius(eigenvalues: &[f64], dt: f64) -> Result<f64> {
    let mut rho = 0.0f64;
    for &lam in eigenvalues {
        let denom = 1.0 - lam * dt * dt;
        if denom.abs() < 1e-14 * (1.0 + (lam * dt * dt).abs()) {
            return Err(Error::Domain(format!(
                "backward Euler resonance: lambda dt^2 = {} is too close to 1",
                lam * dt * dt
            )));
        }
        let r = if lam >= 0.0 {
            (1.0 + dt * lam.sqrt()) / denom.abs()
        } else {
            (1.0 + dt * dt * lam.abs()).sqrt() / denom.abs()
        };
        rho = rho.max(r);
    }
    Ok(rho)
}

/// Per-node and global fraction of horizon bonds past the critical strain
/// `S_c = rbar / sqrt(s)`. Every stencil bond counts, with the zero extension
/// for neighbors outside the box.
pub fn softening_map(
    u: &VectorField,
    grid: &Grid,
    pot: &PotentialSpec,
) -> Result<(Vec<f64>, f64)> {
    let rbar = inflection_point(pot)?;
    let dim = grid.dim();
    let mut fractions = Vec::with_capacity(grid.node_count());
    let mut total_soft = 0usize;
    let bonds_per_node = 2 * grid.stencil().len();
    for node in 0..grid.node_count() {
        let lat = grid.lattice(node);
        let ui = u.get(node);
        let mut soft = 0usize;
        for bond in grid.stencil() {
            let critical = rbar / bond.sqrt_length;
            for sign in [1i64, -1] {
                let j = [
                    lat[0] + sign * bond.delta[0],
                    lat[1] + sign * bond.delta[1],
                    lat[2] + sign * bond.delta[2],
                ];
                let uj = grid.node_id(j).map(|id| u.get(id)).unwrap_or([0.0; 3]);
                let mut dot = 0.0;
                for c in 0..dim {
                    dot += (uj[c] - ui[c]) * bond.dir[c];
                }
                if (dot / bond.length).abs() > critical {
                    soft += 1;
                }
            }
        }
        total_soft += soft;
        fractions.push(soft as f64 / bonds_per_node as f64);
    }
    let global = total_soft as f64 / (bonds_per_node * grid.node_count()) as f64;
    Ok((fractions, global))
}

/// Full per-node stability report.
#[derive(Debug, Clone)]
pub struct NodeStability {
    pub node: usize,
    pub coords: [f64; 3],
    pub eigenvalues: Vec<f64>,
    pub rho_forward: f64,
    pub rho_backward: f64,
    pub softening_fraction: f64,
    /// True when some eigenvalue is positive: the matrix has left the
    /// negative-definite regime and the radial mode can grow.
    pub not_negative_definite: bool,
}

pub fn stability_report(
    u: &VectorField,
    grid: &Grid,
    pot: &PotentialSpec,
    infl: &InfluenceSpec,
    taper: &DomainTaper,
    dt: f64,
) -> Result<Vec<NodeStability>> {
    let (fractions, _) = softening_map(u, grid, pot)?;
    let mut rows = Vec::with_capacity(grid.node_count());
    for node in 0..grid.node_count() {
        let a = stability_matrix(u, grid, pot, infl, taper, node);
        let evals = eigenvalues_sym(&a, grid.dim());
        let scale = evals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let rho_forward = forward_euler_radius(&evals, dt);
        let rho_backward = backward_euler_radius(&evals, dt)?;
        rows.push(NodeStability {
            node,
            coords: grid.coords(node),
            eigenvalues: evals.clone(),
            rho_forward,
            rho_backward,
            softening_fraction: fractions[node],
            not_negative_definite: evals.iter().any(|&l| l > 1e-12 * scale),
        });
    }
    Ok(rows)
}

pub fn write_stability_csv(path: &Path, rows: &[NodeStability], dim: usize) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("index");
    for a in 0..dim {
        header.push_str(&format!(",x{}", a + 1));
    }
    for k in 0..dim {
        header.push_str(&format!(",lambda{}", k + 1));
    }
    header.push_str(",rho_forward,rho_backward,softening_fraction");
    writeln!(w, "{header}")?;
    for row in rows {
        let mut line = format!("{}", row.node);
        for a in 0..dim {
            line.push_str(&format!(",{:.16e}", row.coords[a]));
        }
        for k in 0..dim {
            line.push_str(&format!(",{:.16e}", row.eigenvalues[k]));
        }
        line.push_str(&format!(
            ",{:.16e},{:.16e},{:.16e}",
            row.rho_forward, row.rho_backward, row.softening_fraction
        ));
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}
