//! Problem data for the linear-quadratic beam tracking model.
//!
//! Each transceiver carries an augmented state `x = [x̄; x̃]`: the pointing
//! assembly state `x̄` (controlled, coupled to the population average) and the
//! line-of-sight state `x̃` (uncontrolled). The tracking error is the output
//! `θ = C x = α − β`.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Asymmetry below this is treated as rounding and removed.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
/// Allowed mismatch between `ρ` and `½ D Dᵀ`.
pub const NOISE_TOLERANCE: f64 = 1e-12;

/// Uniform partition of `[0, T]` into `V_T` subintervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    subintervals: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, subintervals: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::BadGrid(format!("horizon must be positive, got {horizon}")));
        }
        if subintervals < 2 {
            return Err(Error::BadGrid(format!(
                "at least 2 subintervals are required, got {subintervals}"
            )));
        }
        Ok(Self {
            horizon,
            subintervals,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn subintervals(&self) -> usize {
        self.subintervals
    }

    /// Number of grid nodes, `V_T + 1`.
    pub fn nodes(&self) -> usize {
        self.subintervals + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.subintervals as f64
    }

    /// Time of node `v`; the last node is exactly `T`.
    pub fn time(&self, v: usize) -> f64 {
        self.horizon * v as f64 / self.subintervals as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nodes()).map(|v| self.time(v))
    }

    /// Same horizon with `factor` times as many subintervals.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.horizon, self.subintervals * factor)
    }
}

/// Pointing assembly: `dx̄ = (Ā x̄ + Γ̄ x̄ᴺ + B̄ ū) dt + D̄ dW̄`, `α = C̄ x̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointingSystem {
    pub a: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl PointingSystem {
    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        check_shape("pointing A", &self.a, n, n)?;
        check_shape("pointing Γ", &self.gamma, n, n)?;
        check_rows("pointing B", &self.b, n)?;
        check_cols("pointing C", &self.c, n)?;
        check_rows("pointing D", &self.d, n)?;
        for (name, m) in [
            ("pointing A", &self.a),
            ("pointing Γ", &self.gamma),
            ("pointing B", &self.b),
            ("pointing C", &self.c),
            ("pointing D", &self.d),
        ] {
            check_finite(name, m)?;
        }
        Ok(())
    }
}

/// Line of sight: `dx̃ = Ã x̃ dt + D̃ dW̃`, `β = C̃ x̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct LosSystem {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LosSystem {
    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        check_shape("LoS A", &self.a, n, n)?;
        check_cols("LoS C", &self.c, n)?;
        check_rows("LoS D", &self.d, n)?;
        for (name, m) in [("LoS A", &self.a), ("LoS C", &self.c), ("LoS D", &self.d)] {
            check_finite(name, m)?;
        }
        Ok(())
    }
}

/// Quadratic cost weights of the augmented problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub q_bar_terminal: DMatrix<f64>,
    pub s_terminal: DMatrix<f64>,
}

/// Gaussian initial law `N(mean, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Full linear-quadratic mean-field problem.
///
/// Dynamics `dx = (A x + B u + Γ x̄ᴺ) dt + D dW`, output `θ = C x`, with the
/// running cost `½(xᵀQx + uᵀRu) + ½(x − S x̄ᴺ)ᵀQ̄(x − S x̄ᴺ)` and the analogous
/// terminal cost. `rho` is the noise intensity `½ D Dᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MfProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub rho: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub q_bar_terminal: DMatrix<f64>,
    pub s_terminal: DMatrix<f64>,
    pub x0_mean: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub grid: TimeGrid,
    /// Override of the terminal co-state map for the cooperative variant:
    /// `χ_T = −M η_T`. `None` means `M = Q̄_T S_T`, the same tie as the game.
    pub mfc_terminal: Option<DMatrix<f64>>,
}

impl MfProblem {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn noise_dim(&self) -> usize {
        self.d.ncols()
    }

    /// `R⁻¹`, via Cholesky. Call on validated problems only.
    pub fn r_inverse(&self) -> DMatrix<f64> {
        self.r
            .clone()
            .cholesky()
            .expect("R is positive definite on a validated problem")
            .inverse()
    }

    /// `R⁻¹ Bᵀ`, the gain applied to `φx + χ` in the feedback law.
    pub fn gain(&self) -> DMatrix<f64> {
        self.r_inverse() * self.b.transpose()
    }

    /// `B R⁻¹ Bᵀ`.
    pub fn control_weight(&self) -> DMatrix<f64> {
        &self.b * self.gain()
    }

    /// Terminal map of the game tie `χ_T = −Q̄_T S_T η_T`.
    pub fn terminal_map(&self) -> DMatrix<f64> {
        &self.q_bar_terminal * &self.s_terminal
    }

    /// Same problem on a different grid.
    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        Self {
            grid,
            ..self.clone()
        }
    }
}

/// Checks every invariant of [`MfProblem`]. Near-symmetric weights (asymmetry
/// at most [`SYMMETRY_TOLERANCE`]) come back symmetrized.
pub fn validate_problem(p: MfProblem) -> Result<MfProblem> {
    let mut p = p;
    let n = p.a.nrows();
    if n == 0 {
        return Err(Error::DimensionMismatch("state dimension is zero".into()));
    }
    let m = p.b.ncols();
    if m == 0 {
        return Err(Error::DimensionMismatch("control dimension is zero".into()));
    }
    check_shape("A", &p.a, n, n)?;
    check_shape("B", &p.b, n, m)?;
    check_shape("Γ", &p.gamma, n, n)?;
    check_cols("C", &p.c, n)?;
    check_rows("D", &p.d, n)?;
    check_shape("ρ", &p.rho, n, n)?;
    check_shape("Q", &p.q, n, n)?;
    check_shape("Q̄", &p.q_bar, n, n)?;
    check_shape("R", &p.r, m, m)?;
    check_shape("S", &p.s, n, n)?;
    check_shape("Q_T", &p.q_terminal, n, n)?;
    check_shape("Q̄_T", &p.q_bar_terminal, n, n)?;
    check_shape("S_T", &p.s_terminal, n, n)?;
    check_shape("σ0", &p.sigma0, n, n)?;
    if p.x0_mean.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x̂0 has length {}, expected {n}",
            p.x0_mean.len()
        )));
    }
    if let Some(t) = &p.mfc_terminal {
        check_shape("MFC terminal map", t, n, n)?;
    }
    if p.c.nrows() == 0 || p.c.nrows() > 2 {
        return Err(Error::DimensionMismatch(format!(
            "C must have 1 or 2 output rows, got {}",
            p.c.nrows()
        )));
    }

    for (name, mat) in [
        ("A", &p.a),
        ("B", &p.b),
        ("Γ", &p.gamma),
        ("C", &p.c),
        ("D", &p.d),
        ("ρ", &p.rho),
        ("Q", &p.q),
        ("Q̄", &p.q_bar),
        ("R", &p.r),
        ("S", &p.s),
        ("Q_T", &p.q_terminal),
        ("Q̄_T", &p.q_bar_terminal),
        ("S_T", &p.s_terminal),
        ("σ0", &p.sigma0),
    ] {
        check_finite(name, mat)?;
    }
    if !p.x0_mean.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidProblem("x̂0 has non-finite entries".into()));
    }

    p.q = symmetric_or_err("Q", p.q)?;
    p.q_bar = symmetric_or_err("Q̄", p.q_bar)?;
    p.q_terminal = symmetric_or_err("Q_T", p.q_terminal)?;
    p.q_bar_terminal = symmetric_or_err("Q̄_T", p.q_bar_terminal)?;
    p.r = symmetric_or_err("R", p.r)?;
    p.sigma0 = symmetric_or_err("σ0", p.sigma0)?;
    p.rho = symmetric_or_err("ρ", p.rho)?;

    if p.r.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite { name: "R" });
    }
    for (name, mat) in [
        ("Q", &p.q),
        ("Q̄", &p.q_bar),
        ("Q_T", &p.q_terminal),
        ("Q̄_T", &p.q_bar_terminal),
        ("σ0", &p.sigma0),
        ("ρ", &p.rho),
    ] {
        let scale = mat.abs().max().max(1.0);
        if linalg::min_eigenvalue(mat) < -SYMMETRY_TOLERANCE * scale {
            return Err(Error::InvalidProblem(format!(
                "{name} is not positive semidefinite"
            )));
        }
    }

    let implied = &p.d * p.d.transpose() * 0.5;
    let gap = (&implied - &p.rho).abs().max();
    if gap > NOISE_TOLERANCE {
        return Err(Error::InvalidProblem(format!(
            "ρ differs from ½DDᵀ by {gap:e}"
        )));
    }
    Ok(p)
}

fn symmetric_or_err(name: &'static str, m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let asymmetry = linalg::max_asymmetry(&m);
    if asymmetry > SYMMETRY_TOLERANCE {
        return Err(Error::AsymmetricWeight { name, asymmetry });
    }
    if asymmetry > 0.0 {
        Ok(linalg::symmetrize(&m))
    } else {
        Ok(m)
    }
}

fn check_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_rows(name: &str, m: &DMatrix<f64>, rows: usize) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::DimensionMismatch(format!(
            "{name} has {} rows, expected {rows}",
            m.nrows()
        )));
    }
    Ok(())
}

fn check_cols(name: &str, m: &DMatrix<f64>, cols: usize) -> Result<()> {
    if m.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "{name} has {} columns, expected {cols}",
            m.ncols()
        )));
    }
    Ok(())
}

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if linalg::is_finite(m) {
        Ok(())
    } else {
        Err(Error::InvalidProblem(format!("{name} has non-finite entries")))
    }
}

/// Optical link parameters for the received-intensity model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalLink {
    /// Beam divergence angle (rad).
    pub divergence: f64,
    /// Receiver lens focal length (m).
    pub focal_length: f64,
    /// Received optical power without pointing error (W).
    pub power: f64,
    /// Standard deviation of the Gaussian spot profile (m).
    pub spot_sigma: f64,
}

impl OpticalLink {
    pub fn new(divergence: f64, focal_length: f64, power: f64, spot_sigma: f64) -> Result<Self> {
        let link = Self {
            divergence,
            focal_length,
            power,
            spot_sigma,
        };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.divergence) || !positive(self.focal_length) || !positive(self.spot_sigma)
        {
            return Err(Error::InvalidProblem(
                "divergence, focal length and spot width must be positive".into(),
            ));
        }
        if !(self.power.is_finite() && self.power >= 0.0) {
            return Err(Error::InvalidProblem("optical power must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for OpticalLink {
    fn default() -> Self {
        Self {
            divergence: 1.0,
            focal_length: 1.0,
            power: 1.0,
            spot_sigma: 1.0,
        }
    }
}

/// Beam tracking error `θ = α − β` (azimuth, elevation).
pub fn tracking_error(alpha: &Vector2<f64>, beta: &Vector2<f64>) -> Vector2<f64> {
    alpha - beta
}

/// `exp(−2‖θ_opp‖² / φ̃²)`: power loss caused by the opposite transmitter's
/// pointing error.
pub fn attenuation_factor(theta_opp: &Vector2<f64>, link: &OpticalLink) -> f64 {
    (-2.0 * theta_opp.norm_squared() / (link.divergence * link.divergence)).exp()
}

/// Unit-integral isotropic Gaussian spot profile.
fn spot_profile(offset: &Vector2<f64>, sigma: f64) -> f64 {
    let var = sigma * sigma;
    (-offset.norm_squared() / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var)
}

/// Optical intensity at detector position `ell` (m): the received power,
/// attenuated by the opposite transmitter's error `theta_opp`, spread over a
/// Gaussian spot centred at `f_r θ_self`.
pub fn received_intensity(
    theta_self: &Vector2<f64>,
    theta_opp: &Vector2<f64>,
    ell: &Vector2<f64>,
    link: &OpticalLink,
) -> f64 {
    let centre = theta_self * link.focal_length;
    link.power * attenuation_factor(theta_opp, link) * spot_profile(&(ell - centre), link.spot_sigma)
}

/// Pads a one- or two-channel output to an (azimuth, elevation) pair.
pub fn as_angle_pair(theta: &DVector<f64>) -> Vector2<f64> {
    match theta.len() {
        0 => Vector2::zeros(),
        1 => Vector2::new(theta[0], 0.0),
        _ => Vector2::new(theta[0], theta[1]),
    }
}

/// Assembles the augmented problem from the pointing and LoS subsystems.
///
/// `A = diag(Ā, Ã)`, `B = [B̄; 0]`, `Γ = diag(Γ̄, 0)`, `D = diag(D̄, D̃)` and
/// `C = [C̄, −C̃]` so that `C x = α − β`.
pub fn augment(
    pointing: &PointingSystem,
    los: &LosSystem,
    weights: CostWeights,
    pointing_init: &InitialLaw,
    los_init: &InitialLaw,
    grid: TimeGrid,
) -> Result<MfProblem> {
    pointing.validate()?;
    los.validate()?;
    let n_bar = pointing.a.nrows();
    let n_los = los.a.nrows();
    if pointing.c.nrows() != los.c.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "pointing output has {} channels but LoS output has {}",
            pointing.c.nrows(),
            los.c.nrows()
        )));
    }
    if pointing_init.mean.len() != n_bar || los_init.mean.len() != n_los {
        return Err(Error::DimensionMismatch(
            "initial means do not match subsystem dimensions".into(),
        ));
    }
    if pointing_init.covariance.shape() != (n_bar, n_bar)
        || los_init.covariance.shape() != (n_los, n_los)
    {
        return Err(Error::DimensionMismatch(
            "initial covariances do not match subsystem dimensions".into(),
        ));
    }
    let n = n_bar + n_los;
    let m = pointing.b.ncols();

    let a = linalg::block_diag(&pointing.a, &los.a);
    let mut b = DMatrix::zeros(n, m);
    b.view_mut((0, 0), (n_bar, m)).copy_from(&pointing.b);
    let gamma = linalg::block_diag(&pointing.gamma, &DMatrix::zeros(n_los, n_los));
    let d = linalg::block_diag(&pointing.d, &los.d);
    let mut c = DMatrix::zeros(pointing.c.nrows(), n);
    c.view_mut((0, 0), pointing.c.shape()).copy_from(&pointing.c);
    c.view_mut((0, n_bar), los.c.shape()).copy_from(&(-&los.c));
    let rho = &d * d.transpose() * 0.5;

    let mut x0_mean = DVector::zeros(n);
    x0_mean.rows_mut(0, n_bar).copy_from(&pointing_init.mean);
    x0_mean.rows_mut(n_bar, n_los).copy_from(&los_init.mean);
    let sigma0 = linalg::block_diag(&pointing_init.covariance, &los_init.covariance);

    validate_problem(MfProblem {
        a,
        b,
        gamma,
        c,
        d,
        rho,
        q: weights.q,
        q_bar: weights.q_bar,
        r: weights.r,
        s: weights.s,
        q_terminal: weights.q_terminal,
        q_bar_terminal: weights.q_bar_terminal,
        s_terminal: weights.s_terminal,
        x0_mean,
        sigma0,
        grid,
        mfc_terminal: None,
    })
}

/// The two-state demonstration problem: transceiver angle `x¹` and LoS angle
/// `x²` on a one-second horizon with `V_T = subintervals`.
///
/// The control weight is `R = diag(130, 110)` while only the transceiver is
/// actuated, so `B` carries a zero second column; `D = √0.5·I` gives
/// `ρ = 0.25·I`.
pub fn beam_tracking_demo(subintervals: usize) -> Result<MfProblem> {
    let diag = |a: f64, b: f64| DMatrix::from_diagonal(&DVector::from_vec(vec![a, b]));
    let eye = DMatrix::<f64>::identity(2, 2);
    let d = eye.clone() * 0.5_f64.sqrt();
    validate_problem(MfProblem {
        a: diag(1.5, 1.0),
        b: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        gamma: eye.clone(),
        c: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        rho: &d * d.transpose() * 0.5,
        d,
        q: diag(90.0, 30.0),
        q_bar: diag(10.0, 5.0),
        r: diag(130.0, 110.0),
        s: eye.clone(),
        q_terminal: eye.clone(),
        q_bar_terminal: diag(4.5, 2.5),
        s_terminal: eye,
        x0_mean: DVector::from_vec(vec![40.0, 20.0]),
        sigma0: DMatrix::zeros(2, 2),
        grid: TimeGrid::new(1.0, subintervals)?,
        mfc_terminal: None,
    })
}
