//! Value function, analytic payoffs, exact mean-field social costs, the
//! price of anarchy and Monte-Carlo cost estimates.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbsolver::{solve_mean_field, MeanFieldSolution, Method, SolverOptions, Variant};
use crate::linalg::{self, CompensatedSum};
use crate::model::MfProblem;
use crate::simulator::Ensemble;

/// `½xᵀφ_vx + xᵀχ_v + ζ_v`.
pub fn value_function(
    x: &DVector<f64>,
    v: usize,
    phi: &[DMatrix<f64>],
    chi: &[DVector<f64>],
    zeta: &[f64],
) -> f64 {
    0.5 * x.dot(&(&phi[v] * x)) + x.dot(&chi[v]) + zeta[v]
}

/// Terms of a closed-form payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PayoffBreakdown {
    /// `½tr(φ_0σ0) + ½x̂0ᵀφ_0x̂0`
    pub quadratic_initial: f64,
    /// `x̂0ᵀχ_0`
    pub chi_initial: f64,
    pub zeta_initial: f64,
    /// `∫[(φη+χ)ᵀΓη − ηᵀ(I−S)Q̄Sη]dt`; zero for the game payoff.
    pub correction_integral: f64,
    /// `η_Tᵀ(I−S_T)Q̄_TS_Tη_T`; zero for the game payoff.
    pub terminal_correction: f64,
    pub total: f64,
}

fn leading_terms(sol: &MeanFieldSolution, p: &MfProblem) -> (f64, f64, f64) {
    let phi0 = &sol.phi()[0];
    let quadratic = 0.5 * (phi0 * &p.sigma0).trace() + 0.5 * p.x0_mean.dot(&(phi0 * &p.x0_mean));
    (quadratic, p.x0_mean.dot(&sol.chi()[0]), sol.zeta()[0])
}

/// Expected value of the game value function under the initial law.
pub fn mfg_payoff(sol: &MeanFieldSolution, p: &MfProblem) -> PayoffBreakdown {
    let (quadratic_initial, chi_initial, zeta_initial) = leading_terms(sol, p);
    PayoffBreakdown {
        quadratic_initial,
        chi_initial,
        zeta_initial,
        correction_integral: 0.0,
        terminal_correction: 0.0,
        total: quadratic_initial + chi_initial + zeta_initial,
    }
}

/// Closed-form cooperative payoff: the game-form leading terms on the control
/// solution plus the terminal and running corrections (trapezoid rule).
pub fn mfc_payoff(sol: &MeanFieldSolution, p: &MfProblem) -> PayoffBreakdown {
    let (quadratic_initial, chi_initial, zeta_initial) = leading_terms(sol, p);
    let n = p.state_dim();
    let eye = DMatrix::<f64>::identity(n, n);
    let last = p.grid.subintervals();
    let eta_t = &sol.eta()[last];
    let terminal_correction =
        eta_t.dot(&((&eye - &p.s_terminal) * &p.q_bar_terminal * &p.s_terminal * eta_t));
    let running = (&eye - &p.s) * &p.q_bar * &p.s;
    let integrand: Vec<f64> = (0..p.grid.nodes())
        .map(|v| {
            let eta = &sol.eta()[v];
            let co = &sol.phi()[v] * eta + &sol.chi()[v];
            co.dot(&(&p.gamma * eta)) - eta.dot(&(&running * eta))
        })
        .collect();
    let correction_integral = linalg::trapezoid(&integrand, p.grid.dt());
    PayoffBreakdown {
        quadratic_initial,
        chi_initial,
        zeta_initial,
        correction_integral,
        terminal_correction,
        total: quadratic_initial
            + chi_initial
            + zeta_initial
            + correction_integral
            + terminal_correction,
    }
}

/// `J_mfg / J_mfc`.
pub fn price_of_anarchy(j_mfg: f64, j_mfc: f64) -> Result<f64> {
    if !(j_mfc > 0.0) {
        return Err(Error::NonPositiveDenominator(j_mfc));
    }
    Ok(j_mfg / j_mfc)
}

/// Analytic payoffs of both variants and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PayoffReport {
    pub j_mfg: f64,
    pub j_mfc: f64,
    /// `None` when `j_mfc ≤ 0`.
    pub poa: Option<f64>,
    pub mfg: PayoffBreakdown,
    pub mfc: PayoffBreakdown,
}

pub fn payoff_report(
    mfg: &MeanFieldSolution,
    mfc: &MeanFieldSolution,
    p: &MfProblem,
) -> PayoffReport {
    let g = mfg_payoff(mfg, p);
    let c = mfc_payoff(mfc, p);
    PayoffReport {
        j_mfg: g.total,
        j_mfc: c.total,
        poa: price_of_anarchy(g.total, c.total).ok(),
        mfg: g,
        mfc: c,
    }
}

/// Per-agent cost of a population that applies `u = −R⁻¹Bᵀ(φx + χ)`, in the
/// mean-field limit, split into the part carried by the mean and the part
/// carried by the spread around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SocialCost {
    pub mean: f64,
    pub covariance: f64,
    pub total: f64,
}

/// Exact social cost of the feedback profile `(φ, χ)` whose population mean
/// is `η`, on the discrete scheme used everywhere else: Euler dynamics,
/// trapezoid running cost, terminal cost at `v = V_T`.
///
/// The deviation `x − η` evolves as `e_{v+1} = F_v e_v + D√Δt ξ` with
/// `F_v = I + Δt(A − BR⁻¹Bᵀφ_v)`, so its covariance follows
/// `P_{v+1} = F_vP_vF_vᵀ + Δt DDᵀ` from `P_0 = σ0`.
pub fn social_cost(
    p: &MfProblem,
    phi: &[DMatrix<f64>],
    eta: &[DVector<f64>],
    chi: &[DVector<f64>],
) -> Result<SocialCost> {
    let nodes = p.grid.nodes();
    if phi.len() != nodes || eta.len() != nodes || chi.len() != nodes {
        return Err(Error::GridMismatch(format!(
            "expected {nodes} nodes, got φ={}, η={}, χ={}",
            phi.len(),
            eta.len(),
            chi.len()
        )));
    }
    let n = p.state_dim();
    let dt = p.grid.dt();
    let last = p.grid.subintervals();
    let eye = DMatrix::<f64>::identity(n, n);
    let gain = p.gain();
    let brb = p.control_weight();
    let dev = &eye - &p.s;
    let dev_t = &eye - &p.s_terminal;
    let mean_weight = &p.q + dev.transpose() * &p.q_bar * &dev;
    let mean_terminal = &p.q_terminal + dev_t.transpose() * &p.q_bar_terminal * &dev_t;
    let spread_weight = &p.q + &p.q_bar;
    let noise = &p.d * p.d.transpose() * dt;

    let mut mean_rate = Vec::with_capacity(nodes);
    let mut cov_rate = Vec::with_capacity(nodes);
    let mut cov = p.sigma0.clone();
    for v in 0..nodes {
        let u = -(&gain * (&phi[v] * &eta[v] + &chi[v]));
        mean_rate.push(eta[v].dot(&(&mean_weight * &eta[v])) + u.dot(&(&p.r * &u)));
        let w = &spread_weight + &phi[v] * &brb * &phi[v];
        cov_rate.push((w * &cov).trace());
        if v < last {
            let f = &eye + (&p.a - &brb * &phi[v]) * dt;
            cov = &f * &cov * f.transpose() + &noise;
        }
    }
    let mean = 0.5 * linalg::trapezoid(&mean_rate, dt)
        + 0.5 * eta[last].dot(&(&mean_terminal * &eta[last]));
    let covariance = 0.5 * linalg::trapezoid(&cov_rate, dt)
        + 0.5 * ((&p.q_terminal + &p.q_bar_terminal) * &cov).trace();
    Ok(SocialCost {
        mean,
        covariance,
        total: mean + covariance,
    })
}

pub fn solution_social_cost(p: &MfProblem, sol: &MeanFieldSolution) -> Result<SocialCost> {
    social_cost(p, sol.phi(), sol.eta(), sol.chi())
}

/// `Cᵀ(CMCᵀ)C`: a state weight that only sees the tracking error `θ = Cx`.
pub fn tracking_weight(c: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    c.transpose() * (c * m * c.transpose()) * c
}

/// Copy of `p` whose state weights penalize only the tracking error.
pub fn tracking_problem(p: &MfProblem) -> MfProblem {
    let mut t = p.clone();
    t.q = tracking_weight(&p.c, &p.q);
    t.q_bar = tracking_weight(&p.c, &p.q_bar);
    t.q_terminal = tracking_weight(&p.c, &p.q_terminal);
    t.q_bar_terminal = tracking_weight(&p.c, &p.q_bar_terminal);
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoaDefinition {
    /// Social costs of the two equilibria of the original problem.
    StateAverage,
    /// Social costs of the two equilibria of the problem weighted on `θ = Cx`.
    Tracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoaEntry {
    pub method: Method,
    pub definition: PoaDefinition,
    pub j_mfg: f64,
    pub j_mfc: f64,
    pub poa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoaTable {
    /// Row-major: methods × definitions.
    pub entries: Vec<PoaEntry>,
    /// Ratio of the closed-form payoffs, per method.
    pub analytic: Vec<(Method, PayoffReport)>,
}

impl PoaTable {
    pub fn get(&self, method: Method, definition: PoaDefinition) -> Option<&PoaEntry> {
        self.entries
            .iter()
            .find(|e| e.method == method && e.definition == definition)
    }
}

fn poa_entry(p: &MfProblem, method: Method, definition: PoaDefinition, opts: &SolverOptions) -> Result<(PoaEntry, MeanFieldSolution, MeanFieldSolution)> {
    let mfg = solve_mean_field(p, Variant::Mfg, method, opts)?;
    let mfc = solve_mean_field(p, Variant::Mfc, method, opts)?;
    let j_mfg = solution_social_cost(p, &mfg)?.total;
    let j_mfc = solution_social_cost(p, &mfc)?.total;
    let poa = price_of_anarchy(j_mfg, j_mfc)?;
    Ok((
        PoaEntry {
            method,
            definition,
            j_mfg,
            j_mfc,
            poa,
        },
        mfg,
        mfc,
    ))
}

/// Solves both variants with each method, on the original and on the
/// tracking-weighted problem, and tabulates the social-cost ratios.
pub fn poa_table(p: &MfProblem, methods: &[Method], opts: &SolverOptions) -> Result<PoaTable> {
    let tracking = tracking_problem(p);
    let mut entries = Vec::new();
    let mut analytic = Vec::new();
    for &method in methods {
        let (entry, mfg, mfc) = poa_entry(p, method, PoaDefinition::StateAverage, opts)?;
        entries.push(entry);
        analytic.push((method, payoff_report(&mfg, &mfc, p)));
        entries.push(poa_entry(&tracking, method, PoaDefinition::Tracking, opts)?.0);
    }
    Ok(PoaTable { entries, analytic })
}

/// Which cost functional to estimate from simulated paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    /// Cost of one agent.
    Individual(usize),
    /// Average cost over the population.
    Social,
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self {
            mean,
            std_error,
            samples: n,
        }
    }
}

/// Realized cost of every agent of one ensemble, with the mean-field term
/// replaced by the exclusive average of the others.
pub fn agent_costs(e: &Ensemble, p: &MfProblem) -> Result<Vec<f64>> {
    let agents = e.agents();
    if agents < 2 {
        return Err(Error::InsufficientAgents(agents));
    }
    if e.grid != p.grid {
        return Err(Error::GridMismatch("ensemble and problem grids differ".into()));
    }
    let nodes = e.grid.nodes();
    let last = e.grid.subintervals();
    let dt = e.grid.dt();
    let inv_others = 1.0 / (agents - 1) as f64;
    let totals: Vec<DVector<f64>> = (0..nodes)
        .map(|v| {
            e.paths
                .iter()
                .fold(DVector::zeros(p.state_dim()), |acc, path| acc + &path[v])
        })
        .collect();
    Ok((0..agents)
        .map(|k| {
            let path = &e.paths[k];
            let deviation = |v: usize, s: &DMatrix<f64>| {
                let others = (&totals[v] - &path[v]) * inv_others;
                &path[v] - s * others
            };
            let rate: Vec<f64> = (0..nodes)
                .map(|v| {
                    let x = &path[v];
                    let u = &e.controls[k][v];
                    let d = deviation(v, &p.s);
                    x.dot(&(&p.q * x)) + u.dot(&(&p.r * u)) + d.dot(&(&p.q_bar * &d))
                })
                .collect();
            let x = &path[last];
            let d = deviation(last, &p.s_terminal);
            0.5 * linalg::trapezoid(&rate, dt)
                + 0.5 * (x.dot(&(&p.q_terminal * x)) + d.dot(&(&p.q_bar_terminal * &d)))
        })
        .collect())
}

/// Cost estimate pooled over independent ensembles.
///
/// `Individual(k)` takes agent `k` of every ensemble. `Social` takes every
/// agent of every ensemble; its standard error treats agents as independent,
/// which holds up to the `O(1/N)` coupling through the population average.
pub fn empirical_cost(ensembles: &[Ensemble], p: &MfProblem, mode: CostMode) -> Result<Estimate> {
    if ensembles.is_empty() {
        return Err(Error::InvalidOption("no ensembles given".into()));
    }
    let mut samples = Vec::new();
    for e in ensembles {
        let costs = agent_costs(e, p)?;
        match mode {
            CostMode::Individual(k) => {
                let c = costs.get(k).copied().ok_or_else(|| {
                    Error::InvalidOption(format!("agent {k} out of range for {} agents", costs.len()))
                })?;
                samples.push(c);
            }
            CostMode::Social => samples.extend(costs),
        }
    }
    Ok(Estimate::from_samples(&samples))
}

/// Deterministic control problems behind the optimality check, and the check
/// itself.
pub mod optimality {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Discrete LQ problem `x_{v+1} = Fx_v + Gu_v + c_v` with cost
    /// `Σ_v w_v · ½(x_vᵀWx_v − 2h_vᵀx_v + u_vᵀRu_v) + ½x_VᵀW_Tx_V − h_Tᵀx_V + k`,
    /// where `w_v` are the trapezoid weights. Controls live on all nodes;
    /// the last one only enters the cost.
    #[derive(Debug, Clone)]
    pub struct DiscreteLq {
        pub x0: DVector<f64>,
        pub f: DMatrix<f64>,
        pub g: DMatrix<f64>,
        pub c: Vec<DVector<f64>>,
        pub w: DMatrix<f64>,
        pub h: Vec<DVector<f64>>,
        pub r: DMatrix<f64>,
        pub w_terminal: DMatrix<f64>,
        pub h_terminal: DVector<f64>,
        pub constant: f64,
        pub dt: f64,
        pub nodes: usize,
    }

    impl DiscreteLq {
        pub fn control_dim(&self) -> usize {
            self.g.ncols()
        }

        fn weight(&self, v: usize) -> f64 {
            if v == 0 || v + 1 == self.nodes {
                0.5 * self.dt
            } else {
                self.dt
            }
        }

        pub fn states(&self, u: &[DVector<f64>]) -> Vec<DVector<f64>> {
            let mut x = Vec::with_capacity(self.nodes);
            x.push(self.x0.clone());
            for v in 0..self.nodes - 1 {
                let next = &self.f * &x[v] + &self.g * &u[v] + &self.c[v];
                x.push(next);
            }
            x
        }

        /// Cost of a control sequence, accumulated in compensated arithmetic.
        pub fn cost(&self, u: &[DVector<f64>]) -> f64 {
            let x = self.states(u);
            let mut acc = CompensatedSum::new(self.constant);
            for v in 0..self.nodes {
                let w = 0.5 * self.weight(v);
                acc.add_product(w, x[v].dot(&(&self.w * &x[v])));
                acc.add_product(-2.0 * w, self.h[v].dot(&x[v]));
                acc.add_product(w, u[v].dot(&(&self.r * &u[v])));
            }
            let last = &x[self.nodes - 1];
            acc.add_product(0.5, last.dot(&(&self.w_terminal * last)));
            acc.add(-self.h_terminal.dot(last));
            acc.value()
        }

        fn flatten(&self, u: &[DVector<f64>]) -> DVector<f64> {
            let m = self.control_dim();
            DVector::from_fn(m * self.nodes, |i, _| u[i / m][i % m])
        }

        fn unflatten(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
            let m = self.control_dim();
            (0..self.nodes)
                .map(|v| z.rows(v * m, m).clone_owned())
                .collect()
        }

        /// Exact minimizer from the normal equations `Hz = −g` of the
        /// quadratic `½zᵀHz + gᵀz + const`.
        pub fn minimizer(&self) -> Result<Vec<DVector<f64>>> {
            let m = self.control_dim();
            let dim = m * self.nodes;
            let zero = vec![DVector::zeros(m); self.nodes];
            let base = self.states(&zero);
            // response of the state sequence to each control coordinate
            let mut response = Vec::with_capacity(dim);
            let free = DiscreteLq {
                x0: DVector::zeros(self.x0.len()),
                c: vec![DVector::zeros(self.x0.len()); self.nodes],
                ..self.clone()
            };
            for i in 0..dim {
                let mut z = DVector::zeros(dim);
                z[i] = 1.0;
                response.push(free.states(&free.unflatten(&z)));
            }
            let mut hess = DMatrix::zeros(dim, dim);
            let mut grad = DVector::zeros(dim);
            for v in 0..self.nodes {
                let terminal = v + 1 == self.nodes;
                let wv = self.weight(v);
                let state_w = if terminal {
                    &self.w * wv + &self.w_terminal
                } else {
                    &self.w * wv
                };
                let lin = if terminal {
                    &self.h[v] * wv + &self.h_terminal
                } else {
                    &self.h[v] * wv
                };
                let gx = &state_w * &base[v] - lin;
                let weighted: Vec<DVector<f64>> =
                    response.iter().map(|s| &state_w * &s[v]).collect();
                for i in 0..dim {
                    grad[i] += response[i][v].dot(&gx);
                    for j in 0..=i {
                        hess[(i, j)] += response[i][v].dot(&weighted[j]);
                    }
                }
                for a in 0..m {
                    for b in 0..m {
                        hess[(v * m + a, v * m + b)] += wv * self.r[(a, b)];
                    }
                }
            }
            for i in 0..dim {
                for j in 0..i {
                    hess[(j, i)] = hess[(i, j)];
                }
            }
            let chol = hess
                .clone()
                .cholesky()
                .ok_or(Error::NotPositiveDefinite { name: "reduced Hessian" })?;
            let rhs = -grad;
            let mut z = chol.solve(&rhs);
            let resid = &rhs - &hess * &z;
            z += chol.solve(&resid);
            Ok(self.unflatten(&z))
        }

        pub fn gradient_norm(&self, u: &[DVector<f64>]) -> f64 {
            // central differences are exact for a quadratic up to rounding
            let z = self.flatten(u);
            let h = 1e-3;
            let grad = DVector::from_fn(z.len(), |i, _| {
                let mut plus = z.clone();
                let mut minus = z.clone();
                plus[i] += h;
                minus[i] -= h;
                (self.cost(&self.unflatten(&plus)) - self.cost(&self.unflatten(&minus))) / (2.0 * h)
            });
            grad.norm()
        }
    }

    /// Best-response problem of one agent facing the frozen mean `η`.
    pub fn agent_problem(p: &MfProblem, eta: &[DVector<f64>]) -> DiscreteLq {
        let dt = p.grid.dt();
        let n = p.state_dim();
        let qs = &p.q_bar * &p.s;
        let qs_t = &p.q_bar_terminal * &p.s_terminal;
        let last = p.grid.subintervals();
        let trap = |v: usize| if v == 0 || v == last { 0.5 * dt } else { dt };
        let constant = (0..p.grid.nodes())
            .map(|v| 0.5 * trap(v) * (&p.s * &eta[v]).dot(&(&qs * &eta[v])))
            .sum::<f64>()
            + 0.5 * (&p.s_terminal * &eta[last]).dot(&(&qs_t * &eta[last]));
        DiscreteLq {
            x0: p.x0_mean.clone(),
            f: DMatrix::identity(n, n) + &p.a * dt,
            g: &p.b * dt,
            c: eta.iter().map(|e| &p.gamma * e * dt).collect(),
            w: &p.q + &p.q_bar,
            h: eta.iter().map(|e| qs.transpose() * e).collect(),
            r: p.r.clone(),
            w_terminal: &p.q_terminal + &p.q_bar_terminal,
            h_terminal: qs_t.transpose() * &eta[last],
            constant,
            dt,
            nodes: p.grid.nodes(),
        }
    }

    /// Planner's problem for the population mean.
    pub fn mean_problem(p: &MfProblem) -> DiscreteLq {
        let dt = p.grid.dt();
        let n = p.state_dim();
        let eye = DMatrix::<f64>::identity(n, n);
        let dev = &eye - &p.s;
        let dev_t = &eye - &p.s_terminal;
        DiscreteLq {
            x0: p.x0_mean.clone(),
            f: &eye + (&p.a + &p.gamma) * dt,
            g: &p.b * dt,
            c: vec![DVector::zeros(n); p.grid.nodes()],
            w: &p.q + dev.transpose() * &p.q_bar * &dev,
            h: vec![DVector::zeros(n); p.grid.nodes()],
            r: p.r.clone(),
            w_terminal: &p.q_terminal + dev_t.transpose() * &p.q_bar_terminal * &dev_t,
            h_terminal: DVector::zeros(n),
            constant: 0.0,
            dt,
            nodes: p.grid.nodes(),
        }
    }

    /// The deterministic problem associated with a variant: best response to
    /// the solved mean for the game, the planner's mean problem for control.
    pub fn deterministic_problem(p: &MfProblem, sol: &MeanFieldSolution) -> DiscreteLq {
        match sol.variant {
            Variant::Mfg => agent_problem(p, sol.eta()),
            Variant::Mfc => mean_problem(p),
        }
    }

    /// Open-loop control produced by the forward-backward pair on the mean.
    pub fn pair_control(p: &MfProblem, sol: &MeanFieldSolution) -> Vec<DVector<f64>> {
        let gain = p.gain();
        (0..p.grid.nodes())
            .map(|v| -(&gain * (&sol.phi()[v] * &sol.eta()[v] + &sol.chi()[v])))
            .collect()
    }

    #[derive(Debug, Clone, PartialEq, Serialize)]
    pub struct PerturbationReport {
        pub base_cost: f64,
        /// Largest `J(u) − J(u + εv)` over all trials; positive means some
        /// perturbation lowered the cost.
        pub max_decrease: f64,
        pub trials: usize,
    }

    /// Perturbs `u` by `εv` for `directions` random unit directions and every
    /// `ε` in `scales`, and records the largest cost decrease.
    pub fn perturbation_check(
        lq: &DiscreteLq,
        u: &[DVector<f64>],
        directions: usize,
        scales: &[f64],
        seed: u64,
    ) -> PerturbationReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_cost = lq.cost(u);
        let mut max_decrease = f64::NEG_INFINITY;
        let m = lq.control_dim();
        let mut trials = 0;
        for _ in 0..directions {
            let mut dir: Vec<DVector<f64>> = (0..lq.nodes)
                .map(|_| DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng)))
                .collect();
            let norm = dir.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|d| *d /= norm);
            for &eps in scales {
                let moved: Vec<DVector<f64>> =
                    u.iter().zip(&dir).map(|(a, d)| a + d * eps).collect();
                max_decrease = max_decrease.max(base_cost - lq.cost(&moved));
                trials += 1;
            }
        }
        PerturbationReport {
            base_cost,
            max_decrease,
            trials,
        }
    }

    /// Check of one variant: the exact discrete minimizer against random
    /// perturbations, and how far the forward-backward control is from it.
    #[derive(Debug, Clone, PartialEq, Serialize)]
    pub struct OptimalityReport {
        pub variant: Variant,
        pub minimizer: PerturbationReport,
        /// `J(pair control) − J(minimizer)`.
        pub pair_gap: f64,
        pub pair_relative_gap: f64,
    }

    pub fn check_variant(
        p: &MfProblem,
        sol: &MeanFieldSolution,
        directions: usize,
        scales: &[f64],
        seed: u64,
    ) -> Result<OptimalityReport> {
        let lq = deterministic_problem(p, sol);
        let best = lq.minimizer()?;
        let minimizer = perturbation_check(&lq, &best, directions, scales, seed);
        let pair_gap = lq.cost(&pair_control(p, sol)) - minimizer.base_cost;
        Ok(OptimalityReport {
            variant: sol.variant,
            pair_relative_gap: pair_gap / minimizer.base_cost.abs(),
            minimizer,
            pair_gap,
        })
    }
}
