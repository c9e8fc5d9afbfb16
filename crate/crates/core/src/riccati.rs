//! Backward integration of the matrix Riccati equation and of the scalar
//! offset `ζ` of the quadratic value function `½xᵀφx + xᵀχ + ζ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::MfProblem;

/// Entries above this magnitude are reported as finite escape.
pub const BLOW_UP_LIMIT: f64 = 1e12;

/// `φ` and `ζ` on the grid nodes `v = 0..=V_T`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub phi: Vec<DMatrix<f64>>,
    pub zeta: Vec<f64>,
}

/// Integrates `−dφ/dt = Aᵀφ + φA − φBR⁻¹Bᵀφ + Q + Q̄`, `φ(T) = Q_T + Q̄_T`,
/// backward with classical RK4 on the problem grid. Each step is symmetrized.
pub fn solve_riccati(p: &MfProblem) -> Result<Vec<DMatrix<f64>>> {
    let grid = p.grid;
    let dt = grid.dt();
    let steps = grid.subintervals();
    let brb = p.control_weight();
    let running = &p.q + &p.q_bar;
    let at = p.a.transpose();

    // dφ/ds in reversed time s = T − t
    let rhs = |phi: &DMatrix<f64>| -> DMatrix<f64> {
        &at * phi + phi * &p.a - phi * &brb * phi + &running
    };

    let mut phi = vec![DMatrix::zeros(0, 0); steps + 1];
    phi[steps] = &p.q_terminal + &p.q_bar_terminal;
    for v in (1..=steps).rev() {
        let cur = &phi[v];
        let k1 = rhs(cur);
        let k2 = rhs(&(cur + &k1 * (0.5 * dt)));
        let k3 = rhs(&(cur + &k2 * (0.5 * dt)));
        let k4 = rhs(&(cur + &k3 * dt));
        let next = cur + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|x| !x.is_finite() || x.abs() > BLOW_UP_LIMIT) {
            return Err(Error::BlowUp {
                what: "Riccati solution",
                index: v - 1,
            });
        }
        phi[v - 1] = next;
    }
    Ok(phi)
}

fn zeta_rate(
    p: &MfProblem,
    brb: &DMatrix<f64>,
    sqs: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    eta: &DVector<f64>,
    chi: &DVector<f64>,
) -> f64 {
    (&p.rho * phi).trace() - 0.5 * chi.dot(&(brb * chi))
        + chi.dot(&(&p.gamma * eta))
        + 0.5 * eta.dot(&(sqs * eta))
}

/// Integrates the value offset backward from `ζ(T) = ½η_TᵀS_TᵀQ̄_TS_Tη_T`
/// with `−dζ/dt = tr(ρφ) − ½χᵀBR⁻¹Bᵀχ + χᵀΓη + ½ηᵀSᵀQ̄Sη` (RK4; inputs are
/// linearly interpolated at half steps).
pub fn solve_zeta(
    p: &MfProblem,
    phi: &[DMatrix<f64>],
    eta: &[DVector<f64>],
    chi: &[DVector<f64>],
) -> Result<Vec<f64>> {
    let nodes = p.grid.nodes();
    if phi.len() != nodes || eta.len() != nodes || chi.len() != nodes {
        return Err(Error::GridMismatch(format!(
            "expected {nodes} nodes, got φ={}, η={}, χ={}",
            phi.len(),
            eta.len(),
            chi.len()
        )));
    }
    let dt = p.grid.dt();
    let brb = p.control_weight();
    let sqs = p.s.transpose() * &p.q_bar * &p.s;
    let steps = p.grid.subintervals();

    let sts = p.s_terminal.transpose() * &p.q_bar_terminal * &p.s_terminal;
    let mut zeta = vec![0.0; nodes];
    zeta[steps] = 0.5 * eta[steps].dot(&(&sts * &eta[steps]));
    let mut rate_hi = zeta_rate(p, &brb, &sqs, &phi[steps], &eta[steps], &chi[steps]);
    for v in (1..=steps).rev() {
        let rate_lo = zeta_rate(p, &brb, &sqs, &phi[v - 1], &eta[v - 1], &chi[v - 1]);
        let mid_phi = (&phi[v] + &phi[v - 1]) * 0.5;
        let mid_eta = (&eta[v] + &eta[v - 1]) * 0.5;
        let mid_chi = (&chi[v] + &chi[v - 1]) * 0.5;
        let rate_mid = zeta_rate(p, &brb, &sqs, &mid_phi, &mid_eta, &mid_chi);
        // RK4 with a ζ-independent right-hand side reduces to Simpson's rule
        let next = zeta[v] + dt / 6.0 * (rate_hi + 4.0 * rate_mid + rate_lo);
        if !next.is_finite() || next.abs() > BLOW_UP_LIMIT {
            return Err(Error::BlowUp {
                what: "value offset ζ",
                index: v - 1,
            });
        }
        zeta[v - 1] = next;
        rate_hi = rate_lo;
    }
    Ok(zeta)
}
