//! Oracles shared by the integration tests. Nothing here calls the library's
//! assembly or coupling code.

#![allow(dead_code)]

use mfbeam::fbsolver::Variant;
use mfbeam::MfProblem;
use nalgebra::{DMatrix, DVector};

/// Dense `(η, χ)` solution of the explicit-Euler forward-backward
/// recurrences, written out row by row as `K z = b` and solved by full-pivot
/// LU.
pub fn dense_euler_pair(
    p: &MfProblem,
    phi: &[DMatrix<f64>],
    variant: Variant,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = p.a.nrows();
    let nodes = p.grid.nodes();
    let last = nodes - 1;
    let dt = p.grid.dt();
    let eye = DMatrix::<f64>::identity(n, n);
    let rinv = p.r.clone().try_inverse().unwrap();
    let brb = &p.b * rinv * p.b.transpose();
    let dim = 2 * n * nodes;
    let eta = |v: usize| v * n;
    let chi = |v: usize| (nodes + v) * n;
    let mut k = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);
    let put = |k: &mut DMatrix<f64>, r: usize, c: usize, m: &DMatrix<f64>| {
        let mut block = k.view_mut((r, c), (n, n));
        block += m;
    };

    // η_0 = x̂0
    put(&mut k, eta(0), eta(0), &eye);
    b.rows_mut(0, n).copy_from(&p.x0_mean);
    // η_{v+1} − [I + Δt(A + Γ − BR⁻¹Bᵀφ_v)]η_v + Δt BR⁻¹Bᵀ χ_v = 0
    for v in 0..last {
        put(&mut k, eta(v + 1), eta(v + 1), &eye);
        put(&mut k, eta(v + 1), eta(v), &-(&eye + (&p.a + &p.gamma - &brb * &phi[v]) * dt));
        put(&mut k, eta(v + 1), chi(v), &(&brb * dt));
    }
    // χ_T + Q̄_T S_T η_T = 0
    put(&mut k, chi(last), chi(last), &eye);
    let tie = match (variant, &p.mfc_terminal) {
        (Variant::Mfc, Some(m)) => m.clone(),
        _ => &p.q_bar_terminal * &p.s_terminal,
    };
    put(&mut k, chi(last), eta(last), &tie);
    // χ_{v−1} − χ_v − Δt[(Aᵀ − φ_v BR⁻¹Bᵀ)χ_v + M_η(φ_v) η_v] = 0
    for v in 1..=last {
        let ph = &phi[v];
        let m_eta = match variant {
            Variant::Mfg => ph * &p.gamma - &p.q_bar * &p.s,
            Variant::Mfc => {
                p.s.transpose() * &p.q_bar * &p.s
                    - &p.q_bar * &p.s
                    - p.s.transpose() * &p.q_bar
                    + p.gamma.transpose() * ph
                    + ph * &p.gamma
            }
        };
        put(&mut k, chi(v - 1), chi(v - 1), &eye);
        put(&mut k, chi(v - 1), chi(v), &-(&eye + (p.a.transpose() - ph * &brb) * dt));
        put(&mut k, chi(v - 1), eta(v), &-(m_eta * dt));
    }
    let z = k.full_piv_lu().solve(&b).unwrap();
    let eta_seq = (0..nodes).map(|v| z.rows(eta(v), n).clone_owned()).collect();
    let chi_seq = (0..nodes).map(|v| z.rows(chi(v), n).clone_owned()).collect();
    (eta_seq, chi_seq)
}

/// `sqrt(Δt Σ_v |a_v − b_v|²)`.
pub fn l2(a: &[DVector<f64>], b: &[DVector<f64>], dt: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    (dt * a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>()).sqrt()
}

/// Every `stride`-th entry.
pub fn every(seq: &[DVector<f64>], stride: usize) -> Vec<DVector<f64>> {
    seq.iter().step_by(stride).cloned().collect()
}
