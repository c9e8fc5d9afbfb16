//! Forward-backward solver for the mean pair `(η, χ)`.
//!
//! The forward mean equation and the backward co-state equation are
//! discretized with explicit Euler on the shared grid and stacked into the
//! affine fixed-point problem `x = Σx + Π` with `x = [η_0..η_V, χ_0..χ_V]`.
//! Two solvers act on it: a damped fixed-point iteration and Newton's method
//! on `F(x) = x − Σx − Π`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MfProblem, TimeGrid};
use crate::riccati::{self, RiccatiSolution};
use crate::sparse::SparseMatrix;

/// Competitive (Nash) or cooperative (social optimum) population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mfg,
    Mfc,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Mfg, Variant::Mfc];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Mfg => "mfg",
            Variant::Mfc => "mfc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedPoint,
    Newton,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::FixedPoint, Method::Newton];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::FixedPoint => "fixed-point",
            Method::Newton => "newton",
        }
    }
}

/// Map iterated by the fixed-point solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedPointScheme {
    /// Forward sweep over the `η` rows, then backward sweep over the `χ`
    /// rows, using freshly updated values (block Gauss–Seidel). Each sweep
    /// solves one discretized equation with the other held fixed.
    Sweep,
    /// Plain `Σx + Π`.
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: FixedPointScheme,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-8,
            max_iter: 500,
            scheme: FixedPointScheme::Sweep,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidOption(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidOption(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidOption("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Affine fixed-point problem `x = Σx + Π`.
///
/// The first `forward_rows` unknowns are swept in increasing order and the
/// rest in decreasing order. Iterate differences are measured in the norm
/// `sqrt(norm_weight · Σ x_i²)`.
#[derive(Debug, Clone)]
pub struct AffineSystem {
    pub sigma: SparseMatrix,
    pub pi: DVector<f64>,
    pub forward_rows: usize,
    pub norm_weight: f64,
}

impl AffineSystem {
    pub fn new(sigma: SparseMatrix, pi: DVector<f64>, forward_rows: usize) -> Self {
        assert_eq!(sigma.dim(), pi.len());
        assert!(forward_rows <= pi.len());
        Self {
            sigma,
            pi,
            forward_rows,
            norm_weight: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.pi.len()
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        (self.norm_weight * x.norm_squared()).sqrt()
    }

    /// Euclidean norm of `x − Σx − Π`.
    pub fn residual_norm(&self, x: &DVector<f64>) -> f64 {
        self.residual(x).norm()
    }

    /// `x − Σx − Π`, in compensated arithmetic.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            let mut acc = crate::linalg::CompensatedSum::new(x[i]);
            acc.add(-self.pi[i]);
            for (j, v) in self.sigma.row(i) {
                acc.add_product(-v, x[j]);
            }
            acc.value()
        })
    }

    /// `I − Σ` as a dense matrix.
    pub fn dense_operator(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - self.sigma.to_dense()
    }

    fn sweep(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        for i in 0..self.forward_rows {
            y[i] = self.pi[i] + self.sigma.row_dot(i, &y);
        }
        for i in (self.forward_rows..self.dim()).rev() {
            y[i] = self.pi[i] + self.sigma.row_dot(i, &y);
        }
        y
    }

    fn jacobi(&self, x: &DVector<f64>) -> DVector<f64> {
        self.sigma.mul_vec(x) + &self.pi
    }
}

/// Raw result of an iterative solve on an [`AffineSystem`].
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub x: DVector<f64>,
    pub history: Vec<f64>,
    pub converged: bool,
    pub contraction_estimate: Option<f64>,
}

impl IterationOutcome {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Geometric mean of the last few ratios of consecutive differences.
fn contraction_estimate(history: &[f64]) -> Option<f64> {
    let ratios: Vec<f64> = history
        .windows(2)
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    if ratios.is_empty() {
        return None;
    }
    let tail = &ratios[ratios.len().saturating_sub(5)..];
    Some((tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64).exp())
}

/// Damped fixed-point iteration `x ← x + δ(G(x) − x)` from `x⁰ = Π`, where
/// `G` is the map selected by `opts.scheme`. Stops when the difference of
/// two consecutive iterates drops to `opts.tol`.
pub fn fixed_point_iterate(sys: &AffineSystem, opts: &SolverOptions) -> Result<IterationOutcome> {
    opts.validate()?;
    let mut x = sys.pi.clone();
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let target = match opts.scheme {
            FixedPointScheme::Sweep => sys.sweep(&x),
            FixedPointScheme::Jacobi => sys.jacobi(&x),
        };
        let step = (target - &x) * opts.damping;
        let diff = sys.norm(&step);
        if !diff.is_finite() {
            return Err(Error::BlowUp {
                what: "fixed-point iterate",
                index: history.len(),
            });
        }
        x += step;
        history.push(diff);
        if diff <= opts.tol {
            converged = true;
            break;
        }
    }
    if converged && history.last() == Some(&0.0) && sys.residual_norm(&x) > opts.tol {
        return Err(Error::SingularSystem {
            condition: f64::INFINITY,
        });
    }
    let contraction_estimate = contraction_estimate(&history);
    Ok(IterationOutcome {
        x,
        history,
        converged,
        contraction_estimate,
    })
}

/// Newton's method on `F(x) = x − Σx − Π` with the constant Jacobian `I − Σ`,
/// starting from `x⁰ = Π`. Residuals are evaluated in compensated arithmetic
/// and each linear solve is iteratively refined, so the second step only
/// moves the iterate by rounding noise.
pub fn newton_iterate(sys: &AffineSystem, tol: f64, max_iter: usize) -> Result<IterationOutcome> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidOption(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidOption("max_iter must be at least 1".into()));
    }
    let jac = sys.dense_operator();
    let lu = jac.lu();
    let u_diag: Vec<f64> = lu.u().diagonal().iter().map(|x| x.abs()).collect();
    let u_max = u_diag.iter().copied().fold(0.0, f64::max);
    let u_min = u_diag.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if u_min > 0.0 { u_max / u_min } else { f64::INFINITY };
    if !(u_min > u_max * f64::EPSILON * sys.dim() as f64) {
        return Err(Error::SingularSystem { condition });
    }

    // (I − Σ) d = b, refined against a compensated residual
    let solve = |b: &DVector<f64>| -> DVector<f64> {
        let mut d = lu.solve(b).expect("nonsingular LU");
        for _ in 0..4 {
            let r = DVector::from_fn(sys.dim(), |i, _| {
                let mut acc = crate::linalg::CompensatedSum::new(b[i]);
                acc.add(-d[i]);
                for (j, v) in sys.sigma.row(i) {
                    acc.add_product(v, d[j]);
                }
                acc.value()
            });
            let corr = lu.solve(&r).expect("nonsingular LU");
            let small = corr.norm() <= f64::EPSILON * d.norm();
            d += corr;
            if small {
                break;
            }
        }
        d
    };

    let mut x = sys.pi.clone();
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let f = sys.residual(&x);
        let next = &x - solve(&f);
        let diff = sys.norm(&(&next - &x));
        if !diff.is_finite() {
            return Err(Error::SingularSystem { condition });
        }
        x = next;
        history.push(diff);
        if diff <= tol && history.len() >= 2 {
            converged = true;
            break;
        }
    }
    let contraction_estimate = contraction_estimate(&history);
    Ok(IterationOutcome {
        x,
        history,
        converged,
        contraction_estimate,
    })
}

/// Coefficients of `−dχ/dt = M_χ χ + M_η η` at a node with Riccati value `φ`.
///
/// Game: `M_χ = Aᵀ − φBR⁻¹Bᵀ`, `M_η = φΓ − Q̄S`.
/// Control: same `M_χ`, `M_η = −Q̄S − SᵀQ̄ + Γᵀφ + φΓ + SᵀQ̄S`.
pub fn chi_coupling(
    variant: Variant,
    p: &MfProblem,
    phi: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m_chi = p.a.transpose() - phi * p.control_weight();
    let qs = &p.q_bar * &p.s;
    let m_eta = match variant {
        Variant::Mfg => phi * &p.gamma - &qs,
        Variant::Mfc => {
            -&qs - p.s.transpose() * &p.q_bar + p.gamma.transpose() * phi + phi * &p.gamma
                + p.s.transpose() * &p.q_bar * &p.s
        }
    };
    (m_chi, m_eta)
}

/// Discretized forward-backward system on a grid.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub system: AffineSystem,
    pub grid: TimeGrid,
    pub variant: Variant,
    pub state_dim: usize,
}

impl DiscreteSystem {
    pub fn eta_index(&self, v: usize) -> usize {
        v * self.state_dim
    }

    pub fn chi_index(&self, v: usize) -> usize {
        (self.grid.nodes() + v) * self.state_dim
    }

    pub fn unpack(&self, x: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let n = self.state_dim;
        let nodes = self.grid.nodes();
        let eta = (0..nodes)
            .map(|v| x.rows(self.eta_index(v), n).clone_owned())
            .collect();
        let chi = (0..nodes)
            .map(|v| x.rows(self.chi_index(v), n).clone_owned())
            .collect();
        (eta, chi)
    }

    pub fn pack(&self, eta: &[DVector<f64>], chi: &[DVector<f64>]) -> DVector<f64> {
        let n = self.state_dim;
        let mut x = DVector::zeros(self.system.dim());
        for v in 0..self.grid.nodes() {
            x.rows_mut(self.eta_index(v), n).copy_from(&eta[v]);
            x.rows_mut(self.chi_index(v), n).copy_from(&chi[v]);
        }
        x
    }

    /// Re-imposes the two boundary blocks (`η_0 = x̂0`, terminal `χ` tie)
    /// from the current interior values.
    /// Re-runs the forward recursion for `η` from the final `χ`, then sets
    /// the terminal tie rows. The mean rows then hold to rounding, so a
    /// noiseless simulation reproduces `η` exactly.
    fn impose_boundaries(&self, x: &mut DVector<f64>) {
        let n = self.state_dim;
        let last = self.grid.subintervals();
        let sys = &self.system;
        for i in 0..sys.forward_rows {
            x[i] = sys.pi[i] + sys.sigma.row_dot(i, x);
        }
        for i in self.chi_index(last)..self.chi_index(last) + n {
            x[i] = sys.pi[i] + sys.sigma.row_dot(i, x);
        }
    }

    fn finish(&self, mut out: IterationOutcome, method: Method) -> MeanFieldPair {
        self.impose_boundaries(&mut out.x);
        let residual = self.system.residual_norm(&out.x);
        let (eta, chi) = self.unpack(&out.x);
        MeanFieldPair {
            eta,
            chi,
            residual,
            iterations: out.iterations(),
            convergence: out.history,
            method,
            contraction_estimate: out.contraction_estimate,
        }
    }
}

/// Mean trajectory `η` and co-state `χ` with the iteration record.
#[derive(Debug, Clone)]
pub struct MeanFieldPair {
    pub eta: Vec<DVector<f64>>,
    pub chi: Vec<DVector<f64>>,
    /// Euclidean norm of `x − Σx − Π` at the returned iterate.
    pub residual: f64,
    /// L²(0, T) norm of each consecutive-iterate difference.
    pub convergence: Vec<f64>,
    pub iterations: usize,
    pub method: Method,
    /// Observed contraction factor of the iteration.
    pub contraction_estimate: Option<f64>,
}

/// Builds `Σ`, `Π` from the explicit-Euler stencils
/// `η_{v+1} = η_v + Δt[(A + Γ − BR⁻¹Bᵀφ_v)η_v − BR⁻¹Bᵀχ_v]` and
/// `χ_{v−1} = χ_v + Δt[M_χ(v)χ_v + M_η(v)η_v]`, with `η_0 = x̂0` and
/// `χ_V = −M_T η_V`.
pub fn assemble(p: &MfProblem, phi: &[DMatrix<f64>], variant: Variant) -> Result<DiscreteSystem> {
    let grid = p.grid;
    let nodes = grid.nodes();
    if phi.len() != nodes {
        return Err(Error::GridMismatch(format!(
            "Riccati trajectory has {} nodes, grid has {nodes}",
            phi.len()
        )));
    }
    let n = p.state_dim();
    let dt = grid.dt();
    let last = grid.subintervals();
    let dim = 2 * n * nodes;
    let eta_at = |v: usize| v * n;
    let chi_at = |v: usize| (nodes + v) * n;
    let brb = p.control_weight();
    let drift = &p.a + &p.gamma;
    let eye = DMatrix::<f64>::identity(n, n);

    let mut entries = Vec::with_capacity(4 * n * n * nodes);
    let mut push_block = |row: usize, col: usize, block: &DMatrix<f64>| {
        for i in 0..n {
            for j in 0..n {
                entries.push((row + i, col + j, block[(i, j)]));
            }
        }
    };

    for v in 0..last {
        let transition = &eye + (&drift - &brb * &phi[v]) * dt;
        push_block(eta_at(v + 1), eta_at(v), &transition);
        push_block(eta_at(v + 1), chi_at(v), &(&brb * -dt));
    }
    let terminal = match (variant, &p.mfc_terminal) {
        (Variant::Mfc, Some(m)) => m.clone(),
        _ => p.terminal_map(),
    };
    push_block(chi_at(last), eta_at(last), &(-terminal));
    for v in (1..=last).rev() {
        let (m_chi, m_eta) = chi_coupling(variant, p, &phi[v]);
        push_block(chi_at(v - 1), chi_at(v), &(&eye + m_chi * dt));
        push_block(chi_at(v - 1), eta_at(v), &(m_eta * dt));
    }

    let mut pi = DVector::zeros(dim);
    pi.rows_mut(0, n).copy_from(&p.x0_mean);

    let mut system = AffineSystem::new(SparseMatrix::from_triplets(dim, entries), pi, n * nodes);
    system.norm_weight = dt;
    Ok(DiscreteSystem {
        system,
        grid,
        variant,
        state_dim: n,
    })
}

fn check_outcome(sys: &DiscreteSystem, out: IterationOutcome, method: Method) -> Result<MeanFieldPair> {
    let converged = out.converged;
    let last = out.history.last().copied().unwrap_or(f64::NAN);
    let pair = sys.finish(out, method);
    if converged {
        Ok(pair)
    } else {
        Err(Error::NoConvergence {
            iterations: pair.iterations,
            last_difference: last,
            best: Box::new(pair),
        })
    }
}

pub fn solve_fixed_point(sys: &DiscreteSystem, opts: &SolverOptions) -> Result<MeanFieldPair> {
    let out = fixed_point_iterate(&sys.system, opts)?;
    check_outcome(sys, out, Method::FixedPoint)
}

pub fn solve_newton(sys: &DiscreteSystem, tol: f64, max_iter: usize) -> Result<MeanFieldPair> {
    let out = newton_iterate(&sys.system, tol, max_iter)?;
    check_outcome(sys, out, Method::Newton)
}

/// Complete `(η, ζ, φ, χ)` solution of one variant.
#[derive(Debug, Clone)]
pub struct MeanFieldSolution {
    pub variant: Variant,
    pub riccati: RiccatiSolution,
    pub pair: MeanFieldPair,
}

impl MeanFieldSolution {
    pub fn phi(&self) -> &[DMatrix<f64>] {
        &self.riccati.phi
    }

    pub fn zeta(&self) -> &[f64] {
        &self.riccati.zeta
    }

    pub fn eta(&self) -> &[DVector<f64>] {
        &self.pair.eta
    }

    pub fn chi(&self) -> &[DVector<f64>] {
        &self.pair.chi
    }
}

/// Riccati solve, assembly, the chosen iteration, then the value offset.
pub fn solve_mean_field(
    p: &MfProblem,
    variant: Variant,
    method: Method,
    opts: &SolverOptions,
) -> Result<MeanFieldSolution> {
    opts.validate()?;
    let phi = riccati::solve_riccati(p)?;
    let sys = assemble(p, &phi, variant)?;
    let pair = match method {
        Method::FixedPoint => solve_fixed_point(&sys, opts)?,
        Method::Newton => solve_newton(&sys, opts.tol, opts.max_iter)?,
    };
    let zeta = riccati::solve_zeta(p, &phi, &pair.eta, &pair.chi)?;
    Ok(MeanFieldSolution {
        variant,
        riccati: RiccatiSolution { phi, zeta },
        pair,
    })
}

/// `u = −R⁻¹Bᵀ(φx + χ)`.
pub fn feedback_control(
    phi: &DMatrix<f64>,
    chi: &DVector<f64>,
    p: &MfProblem,
    x: &DVector<f64>,
) -> DVector<f64> {
    -(p.gain() * (phi * x + chi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{beam_tracking_demo, validate_problem};

    fn scalar_system(sigma: f64, pi: f64) -> AffineSystem {
        AffineSystem::new(
            SparseMatrix::from_triplets(1, vec![(0, 0, sigma)]),
            DVector::from_element(1, pi),
            1,
        )
    }

    fn opts(damping: f64, scheme: FixedPointScheme) -> SolverOptions {
        SolverOptions {
            damping,
            tol: 1e-12,
            max_iter: 200,
            scheme,
        }
    }

    #[test]
    fn zero_map_converges_to_pi() {
        let sys = AffineSystem::new(
            SparseMatrix::from_triplets(3, vec![]),
            DVector::from_vec(vec![1.0, -2.0, 3.0]),
            2,
        );
        for scheme in [FixedPointScheme::Sweep, FixedPointScheme::Jacobi] {
            let out = fixed_point_iterate(&sys, &opts(1.0, scheme)).unwrap();
            assert_eq!(out.x, sys.pi);
            assert_eq!(out.history, vec![0.0]);
        }
    }

    #[test]
    fn scalar_contraction_halves_error() {
        let sys = scalar_system(0.5, 1.0);
        for scheme in [FixedPointScheme::Sweep, FixedPointScheme::Jacobi] {
            let out = fixed_point_iterate(&sys, &opts(1.0, scheme)).unwrap();
            assert!(out.converged);
            assert!((out.x[0] - 2.0).abs() < 1e-11);
            for w in out.history.windows(2) {
                assert!((w[1] / w[0] - 0.5).abs() < 1e-9);
            }
            assert!((out.contraction_estimate.unwrap() - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_reports_no_convergence() {
        let sys = scalar_system(0.99, 1.0);
        let out = fixed_point_iterate(
            &sys,
            &SolverOptions {
                max_iter: 5,
                ..opts(1.0, FixedPointScheme::Jacobi)
            },
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations(), 5);
    }

    #[test]
    fn invalid_options_are_rejected() {
        let sys = scalar_system(0.5, 1.0);
        for bad in [
            SolverOptions { damping: 0.0, ..Default::default() },
            SolverOptions { damping: 1.5, ..Default::default() },
            SolverOptions { tol: 0.0, ..Default::default() },
            SolverOptions { max_iter: 0, ..Default::default() },
        ] {
            assert!(matches!(fixed_point_iterate(&sys, &bad), Err(Error::InvalidOption(_))));
        }
    }

    #[test]
    fn newton_is_exact_after_one_step() {
        let sys = scalar_system(0.5, 1.0);
        let out = newton_iterate(&sys, 1e-12, 10).unwrap();
        assert_eq!(out.x[0], 2.0);
        assert_eq!(out.iterations(), 2);
        assert!(out.history[1] <= 1e-12);

        let zero = AffineSystem::new(
            SparseMatrix::from_triplets(2, vec![]),
            DVector::from_vec(vec![4.0, -1.5]),
            1,
        );
        let out = newton_iterate(&zero, 1e-12, 10).unwrap();
        assert_eq!(out.x, zero.pi);
    }

    #[test]
    fn newton_detects_singular_operator() {
        let sys = scalar_system(1.0, 1.0);
        assert!(matches!(
            newton_iterate(&sys, 1e-8, 10),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn chi_coupling_without_coupling_terms() {
        let mut p = beam_tracking_demo(10).unwrap();
        p.gamma = DMatrix::zeros(2, 2);
        p.s = DMatrix::zeros(2, 2);
        let phi = DMatrix::from_row_slice(2, 2, &[3.0, 0.2, 0.2, 1.0]);
        for v in Variant::ALL {
            let (_, m_eta) = chi_coupling(v, &p, &phi);
            assert_eq!(m_eta, DMatrix::zeros(2, 2));
        }
    }

    #[test]
    fn variants_coincide_for_identity_tracking() {
        let mut p = beam_tracking_demo(10).unwrap();
        p.gamma = DMatrix::zeros(2, 2);
        p.q_bar = DMatrix::from_row_slice(2, 2, &[10.0, 1.0, 1.0, 5.0]);
        let phi = DMatrix::from_row_slice(2, 2, &[3.0, 0.2, 0.2, 1.0]);
        let (c_mfg, e_mfg) = chi_coupling(Variant::Mfg, &p, &phi);
        let (c_mfc, e_mfc) = chi_coupling(Variant::Mfc, &p, &phi);
        assert_eq!(c_mfg, c_mfc);
        assert!((&e_mfg + &p.q_bar).abs().max() < 1e-14);
        assert!((&e_mfc + &p.q_bar).abs().max() < 1e-14);
    }

    #[test]
    fn chi_coupling_demo_terminal_node() {
        let p = beam_tracking_demo(10).unwrap();
        let phi = DMatrix::from_row_slice(2, 2, &[5.5, 0.0, 0.0, 3.5]);
        let (_, m_eta) = chi_coupling(Variant::Mfg, &p, &phi);
        let expected = DMatrix::from_row_slice(2, 2, &[-4.5, 0.0, 0.0, -1.5]);
        assert!((m_eta - expected).abs().max() < 1e-14);
    }

    fn inert_scalar(subintervals: usize, x0: f64) -> MfProblem {
        let s = |x: f64| DMatrix::from_element(1, 1, x);
        validate_problem(MfProblem {
            a: s(0.0),
            b: s(1.0),
            gamma: s(0.0),
            c: s(1.0),
            d: s(0.0),
            rho: s(0.0),
            q: s(0.0),
            q_bar: s(0.0),
            r: s(1.0),
            s: s(0.0),
            q_terminal: s(0.0),
            q_bar_terminal: s(0.0),
            s_terminal: s(0.0),
            x0_mean: DVector::from_element(1, x0),
            sigma0: s(0.0),
            grid: TimeGrid::new(1.0, subintervals).unwrap(),
            mfc_terminal: None,
        })
        .unwrap()
    }

    #[test]
    fn constant_dynamics_keep_mean_fixed() {
        let p = inert_scalar(2, 3.0);
        let phi = riccati::solve_riccati(&p).unwrap();
        let sys = assemble(&p, &phi, Variant::Mfg).unwrap();
        assert_eq!(sys.system.dim(), 6);
        let pair = solve_newton(&sys, 1e-12, 10).unwrap();
        for e in &pair.eta {
            assert!((e[0] - 3.0).abs() < 1e-14);
        }
        // terminal tie with Q̄_T = 0 forces χ ≡ 0
        assert!(pair.chi.iter().all(|c| c[0].abs() < 1e-14));
    }

    #[test]
    fn boundary_rows_have_expected_structure() {
        let p = beam_tracking_demo(4).unwrap();
        let phi = riccati::solve_riccati(&p).unwrap();
        let sys = assemble(&p, &phi, Variant::Mfg).unwrap();
        let dense = sys.system.sigma.to_dense();
        for i in 0..2 {
            assert!(dense.row(i).iter().all(|&x| x == 0.0));
            assert_eq!(sys.system.pi[i], p.x0_mean[i]);
        }
        let tie = sys.chi_index(4);
        let eta_last = sys.eta_index(4);
        for i in 0..2 {
            let row = dense.row(tie + i);
            for j in 0..dense.ncols() {
                let expected = if (eta_last..eta_last + 2).contains(&j) {
                    -p.terminal_map()[(i, j - eta_last)]
                } else {
                    0.0
                };
                assert_eq!(row[j], expected);
            }
            assert_eq!(sys.system.pi[tie + i], 0.0);
        }
    }

    #[test]
    fn homogeneous_backward_system_gives_zero_costate() {
        let mut p = beam_tracking_demo(20).unwrap();
        p.gamma = DMatrix::zeros(2, 2);
        p.s = DMatrix::zeros(2, 2);
        p.q_bar = DMatrix::zeros(2, 2);
        p.q_bar_terminal = DMatrix::zeros(2, 2);
        for v in Variant::ALL {
            let sol = solve_mean_field(&p, v, Method::Newton, &SolverOptions::default()).unwrap();
            assert!(sol.chi().iter().all(|c| c.norm() < 1e-10));
        }
    }

    #[test]
    fn zero_initial_mean_gives_zero_pair() {
        let p = beam_tracking_demo(20).unwrap();
        let p = MfProblem {
            x0_mean: DVector::zeros(2),
            ..p
        };
        for v in Variant::ALL {
            for m in Method::ALL {
                let sol = solve_mean_field(&p, v, m, &SolverOptions::default()).unwrap();
                assert!(sol.eta().iter().all(|e| e.norm() == 0.0));
                assert!(sol.chi().iter().all(|c| c.norm() == 0.0));
            }
        }
    }

    #[test]
    fn boundaries_hold_on_demo() {
        let p = beam_tracking_demo(50).unwrap();
        for v in Variant::ALL {
            for m in Method::ALL {
                let sol = solve_mean_field(&p, v, m, &SolverOptions::default()).unwrap();
                assert_eq!(sol.eta()[0], p.x0_mean);
                let tie = -(p.terminal_map() * &sol.eta()[50]);
                assert!((&sol.chi()[50] - tie).norm() < 1e-9);
                assert!(sol.pair.residual < 1e-6);
            }
        }
    }

    #[test]
    fn mfc_terminal_override_is_used() {
        let mut p = beam_tracking_demo(10).unwrap();
        p.mfc_terminal = Some(DMatrix::identity(2, 2) * 2.0);
        let phi = riccati::solve_riccati(&p).unwrap();
        let mfc = assemble(&p, &phi, Variant::Mfc).unwrap();
        let mfg = assemble(&p, &phi, Variant::Mfg).unwrap();
        let (row, col) = (mfc.chi_index(10), mfc.eta_index(10));
        assert_eq!(mfc.system.sigma.to_dense()[(row, col)], -2.0);
        assert_eq!(mfg.system.sigma.to_dense()[(row, col)], -4.5);
    }

    #[test]
    fn feedback_examples() {
        let p = beam_tracking_demo(10).unwrap();
        let u = feedback_control(
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &p,
            &DVector::zeros(2),
        );
        assert_eq!(u, DVector::zeros(2));

        let s = |x: f64| DMatrix::from_element(1, 1, x);
        let mut q = inert_scalar(2, 0.0);
        q.r = s(2.0);
        let u = feedback_control(&s(4.0), &DVector::from_element(1, 1.0), &q, &DVector::from_element(1, 0.5));
        assert!((u[0] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let p = beam_tracking_demo(5).unwrap();
        let phi = riccati::solve_riccati(&p).unwrap();
        let sys = assemble(&p, &phi, Variant::Mfc).unwrap();
        let x = DVector::from_fn(sys.system.dim(), |i, _| i as f64);
        let (eta, chi) = sys.unpack(&x);
        assert_eq!(sys.pack(&eta, &chi), x);
    }

    fn demo_pairs(subintervals: usize, variant: Variant) -> (DiscreteSystem, MeanFieldPair, MeanFieldPair) {
        let p = beam_tracking_demo(subintervals).unwrap();
        let phi = riccati::solve_riccati(&p).unwrap();
        let sys = assemble(&p, &phi, variant).unwrap();
        let fp = solve_fixed_point(&sys, &SolverOptions::default()).unwrap();
        let nt = solve_newton(&sys, 1e-8, 500).unwrap();
        (sys, fp, nt)
    }

    fn l2(sys: &DiscreteSystem, a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
        crate::linalg::l2_time_distance(a, b, sys.grid.dt())
    }

    #[test]
    fn demo_solvers_agree_with_dense_oracle() {
        for v in Variant::ALL {
            let (sys, fp, nt) = demo_pairs(100, v);
            // independent oracle: Householder QR of I − Σ
            let x = sys.system.dense_operator().qr().solve(&sys.system.pi).unwrap();
            let (eta, chi) = sys.unpack(&x);
            for pair in [&fp, &nt] {
                assert!(l2(&sys, &pair.eta, &eta) < 1e-7, "{v:?} {:?}", pair.method);
                assert!(l2(&sys, &pair.chi, &chi) < 1e-7, "{v:?} {:?}", pair.method);
            }
            assert!(l2(&sys, &fp.eta, &nt.eta) < 1e-6);
            assert!(l2(&sys, &fp.chi, &nt.chi) < 1e-6);
            assert!(nt.convergence[1] <= 1e-12, "{:?}", nt.convergence);
        }
    }

    #[test]
    fn demo_fixed_point_curve_decreases() {
        for v in Variant::ALL {
            let (_, fp, _) = demo_pairs(100, v);
            let c = &fp.convergence;
            assert!(c.iter().all(|d| d.is_finite() && *d > 0.0));
            for j in 3..c.len() - 1 {
                assert!(c[j + 1] < c[j], "{v:?} iteration {j}: {:?}", &c[j..j + 2]);
            }
            let rate = fp.contraction_estimate.unwrap();
            assert!(rate > 0.0 && rate < 1.0);
        }
    }

    #[test]
    fn jacobi_scheme_converges_to_same_pair() {
        let (sys, _, nt) = demo_pairs(20, Variant::Mfg);
        let fp = solve_fixed_point(
            &sys,
            &SolverOptions {
                max_iter: 20_000,
                scheme: FixedPointScheme::Jacobi,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(l2(&sys, &fp.eta, &nt.eta) < 1e-5);
    }

    #[test]
    fn demo_pair_converges_at_first_order() {
        let fine: Vec<_> = [100, 200, 400]
            .iter()
            .map(|&n| demo_pairs(n, Variant::Mfg).2)
            .collect();
        // compare on the coarse nodes
        let dt = 0.01;
        let coarse = |pair: &MeanFieldPair, stride: usize| -> Vec<DVector<f64>> {
            let eta = pair.eta.iter().step_by(stride);
            eta.chain(pair.chi.iter().step_by(stride)).cloned().collect()
        };
        let a = coarse(&fine[0], 1);
        let b = coarse(&fine[1], 2);
        let c = coarse(&fine[2], 4);
        let e1 = crate::linalg::l2_time_distance(&a, &b, dt);
        let e2 = crate::linalg::l2_time_distance(&b, &c, dt);
        let order = (e1 / e2).log2();
        assert!(order >= 0.9, "observed order {order}");
    }

    #[test]
    fn variants_share_riccati_but_not_costate() {
        let p = beam_tracking_demo(50).unwrap();
        let g = solve_mean_field(&p, Variant::Mfg, Method::Newton, &SolverOptions::default()).unwrap();
        let c = solve_mean_field(&p, Variant::Mfc, Method::Newton, &SolverOptions::default()).unwrap();
        assert_eq!(g.phi(), c.phi());
        assert!(crate::linalg::l2_time_distance(g.chi(), c.chi(), 0.02) > 1e-3);
    }

    #[test]
    fn terminal_feedback_matches_recomputation() {
        let p = beam_tracking_demo(50).unwrap();
        let sol = solve_mean_field(&p, Variant::Mfg, Method::Newton, &SolverOptions::default()).unwrap();
        let u = feedback_control(&sol.phi()[50], &sol.chi()[50], &p, &p.x0_mean);
        let phi_t = &sol.phi()[50];
        let g = &sol.chi()[50];
        // R⁻¹Bᵀ with B = e₁e₁ᵀ, R = diag(130, 110)
        let first = -(phi_t[(0, 0)] * 40.0 + phi_t[(0, 1)] * 20.0 + g[0]) / 130.0;
        assert!((u[0] - first).abs() < 1e-12);
        assert_eq!(u[1], 0.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn methods_agree_on_random_problems(
            a in -1.0..1.0f64, g in -1.0..1.0f64, qb in 0.0..5.0f64, x0 in -10.0..10.0f64,
        ) {
            let mut p = beam_tracking_demo(40).unwrap();
            p.a[(0, 0)] = a;
            p.gamma[(0, 0)] = g;
            p.q_bar[(0, 0)] = qb;
            p.x0_mean[0] = x0;
            let phi = riccati::solve_riccati(&p).unwrap();
            for v in Variant::ALL {
                let sys = assemble(&p, &phi, v).unwrap();
                let nt = solve_newton(&sys, 1e-10, 10).unwrap();
                if let Ok(fp) = solve_fixed_point(&sys, &SolverOptions { tol: 1e-10, ..Default::default() }) {
                    proptest::prop_assert!(l2(&sys, &fp.eta, &nt.eta) < 1e-8);
                    proptest::prop_assert!(l2(&sys, &fp.chi, &nt.chi) < 1e-8);
                }
                proptest::prop_assert_eq!(&nt.eta[0], &p.x0_mean);
            }
        }
    }
}
