//! Euler–Maruyama simulation of the finite population under the mean-field
//! feedback law, plus the estimators used to check the mean-field limit.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, MfProblem, OpticalLink, TimeGrid};
use crate::riccati::BLOW_UP_LIMIT;

/// Simulated agent paths. `paths[k][v]` is the state of agent `k` at node
/// `v`; `controls[k][v]` the control it applied there.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub paths: Vec<Vec<DVector<f64>>>,
    pub controls: Vec<Vec<DVector<f64>>>,
    pub seed: u64,
    /// Random stream used by each agent.
    pub streams: Vec<u64>,
    pub grid: TimeGrid,
}

impl Ensemble {
    pub fn agents(&self) -> usize {
        self.paths.len()
    }
}

/// Simulates `agents` transceivers with agent `k` drawing from stream `k`.
pub fn simulate_ensemble(
    p: &MfProblem,
    phi: &[DMatrix<f64>],
    chi: &[DVector<f64>],
    agents: usize,
    seed: u64,
) -> Result<Ensemble> {
    let streams: Vec<u64> = (0..agents as u64).collect();
    simulate_with_streams(p, phi, chi, &streams, seed)
}

/// Same as [`simulate_ensemble`] with explicit stream ids, one per agent.
/// Every stream is a ChaCha8 generator keyed by `seed` and positioned on its
/// own stream id, so the result does not depend on thread scheduling.
pub fn simulate_with_streams(
    p: &MfProblem,
    phi: &[DMatrix<f64>],
    chi: &[DVector<f64>],
    streams: &[u64],
    seed: u64,
) -> Result<Ensemble> {
    let agents = streams.len();
    if agents < 2 {
        return Err(Error::InsufficientAgents(agents));
    }
    let grid = p.grid;
    let nodes = grid.nodes();
    if phi.len() != nodes || chi.len() != nodes {
        return Err(Error::GridMismatch(format!(
            "feedback given on {} / {} nodes, grid has {nodes}",
            phi.len(),
            chi.len()
        )));
    }
    let n = p.state_dim();
    let q = p.noise_dim();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let gain = p.gain();
    let init_root = linalg::psd_sqrt(&p.sigma0);

    let mut rngs: Vec<ChaCha8Rng> = streams
        .iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        })
        .collect();

    let draw = |rng: &mut ChaCha8Rng, len: usize| -> DVector<f64> {
        DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
    };

    let mut state: Vec<DVector<f64>> = rngs
        .iter_mut()
        .map(|rng| &p.x0_mean + &init_root * draw(rng, n))
        .collect();
    let mut paths = vec![Vec::with_capacity(nodes); agents];
    let mut controls = vec![Vec::with_capacity(nodes); agents];
    let inv_others = 1.0 / (agents - 1) as f64;

    for v in 0..nodes {
        let feedback = -(&gain * &phi[v]);
        let offset = -(&gain * &chi[v]);
        let u: Vec<DVector<f64>> = state.iter().map(|x| &feedback * x + &offset).collect();
        for k in 0..agents {
            paths[k].push(state[k].clone());
            controls[k].push(u[k].clone());
        }
        if v == grid.subintervals() {
            break;
        }
        let total = state.iter().fold(DVector::zeros(n), |acc, x| acc + x);
        state = state
            .par_iter()
            .zip(u.par_iter())
            .zip(rngs.par_iter_mut())
            .map(|((x, u), rng)| {
                let others = (&total - x) * inv_others;
                let drift = &p.a * x + &p.b * u + &p.gamma * others;
                x + drift * dt + &p.d * draw(rng, q) * sqrt_dt
            })
            .collect();
        if state.iter().any(|x| x.iter().any(|c| !c.is_finite() || c.abs() > BLOW_UP_LIMIT)) {
            return Err(Error::BlowUp {
                what: "ensemble state",
                index: v + 1,
            });
        }
    }

    Ok(Ensemble {
        paths,
        controls,
        seed,
        streams: streams.to_vec(),
        grid,
    })
}

/// Inclusive average over agents at every node.
pub fn empirical_mean(e: &Ensemble) -> Vec<DVector<f64>> {
    let scale = 1.0 / e.agents() as f64;
    (0..e.grid.nodes())
        .map(|v| {
            let sum = e.paths.iter().fold(DVector::zeros(e.paths[0][v].len()), |acc, path| {
                acc + &path[v]
            });
            sum * scale
        })
        .collect()
}

/// Trapezoid L²(0, T) norm of a grid sequence.
pub fn l2_trapezoid(seq: &[DVector<f64>], dt: f64) -> f64 {
    let sq: Vec<f64> = seq.iter().map(|x| x.norm_squared()).collect();
    linalg::trapezoid(&sq, dt).sqrt()
}

/// L²(0, T) distance between the ensemble mean and `eta`.
pub fn mean_consistency_error(e: &Ensemble, eta: &[DVector<f64>]) -> Result<f64> {
    if eta.len() != e.grid.nodes() {
        return Err(Error::GridMismatch(format!(
            "mean trajectory has {} nodes, ensemble has {}",
            eta.len(),
            e.grid.nodes()
        )));
    }
    let diff: Vec<DVector<f64>> = empirical_mean(e)
        .iter()
        .zip(eta)
        .map(|(m, h)| m - h)
        .collect();
    Ok(l2_trapezoid(&diff, e.grid.dt()))
}

/// Tracking error, attenuation and on-axis intensity of each agent.
/// `theta[k][v]`, `attenuation[k][v]` and `intensity[k][v]` share layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSeries {
    pub theta: Vec<Vec<Vector2<f64>>>,
    pub attenuation: Vec<Vec<f64>>,
    pub intensity: Vec<Vec<f64>>,
}

/// Agent `k` receives from agent `k + 1 (mod N)`.
pub fn partner(k: usize, agents: usize) -> usize {
    (k + 1) % agents
}

pub fn tracking_timeseries(e: &Ensemble, p: &MfProblem, link: &OpticalLink) -> TrackingSeries {
    let theta: Vec<Vec<Vector2<f64>>> = e
        .paths
        .iter()
        .map(|path| path.iter().map(|x| model::as_angle_pair(&(&p.c * x))).collect())
        .collect();
    let agents = e.agents();
    let origin = Vector2::zeros();
    let mut attenuation = Vec::with_capacity(agents);
    let mut intensity = Vec::with_capacity(agents);
    for k in 0..agents {
        let opp = &theta[partner(k, agents)];
        attenuation.push(
            opp.iter()
                .map(|t| model::attenuation_factor(t, link))
                .collect(),
        );
        intensity.push(
            theta[k]
                .iter()
                .zip(opp)
                .map(|(own, other)| model::received_intensity(own, other, &origin, link))
                .collect(),
        );
    }
    TrackingSeries {
        theta,
        attenuation,
        intensity,
    }
}

/// Per-node summary of a population quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], level: f64) -> f64 {
    let pos = level * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn spread(values: impl IntoIterator<Item = f64>) -> Spread {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    Spread {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        q05: quantile(&v, 0.05),
        median: quantile(&v, 0.5),
        q95: quantile(&v, 0.95),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingSummary {
    pub theta_norm: Vec<Spread>,
    pub attenuation: Vec<Spread>,
    pub intensity: Vec<Spread>,
}

pub fn summarize_tracking(series: &TrackingSeries) -> TrackingSummary {
    let nodes = series.theta[0].len();
    let agents = 0..series.theta.len();
    TrackingSummary {
        theta_norm: (0..nodes)
            .map(|v| spread(agents.clone().map(|k| series.theta[k][v].norm())))
            .collect(),
        attenuation: (0..nodes)
            .map(|v| spread(agents.clone().map(|k| series.attenuation[k][v])))
            .collect(),
        intensity: (0..nodes)
            .map(|v| spread(agents.clone().map(|k| series.intensity[k][v])))
            .collect(),
    }
}

/// Median consistency error at each population size and the fitted slope of
/// `log error` against `log N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyScaling {
    pub agents: Vec<usize>,
    pub seeds: Vec<u64>,
    /// `errors[i][s]`: error at `agents[i]` with `seeds[s]`.
    pub errors: Vec<Vec<f64>>,
    pub median: Vec<f64>,
    pub exponent: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Least-squares slope of `y` against `x`.
pub fn fitted_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn consistency_scaling(
    p: &MfProblem,
    phi: &[DMatrix<f64>],
    chi: &[DVector<f64>],
    eta: &[DVector<f64>],
    agents: &[usize],
    seeds: &[u64],
) -> Result<ConsistencyScaling> {
    if agents.len() < 2 || seeds.is_empty() {
        return Err(Error::InvalidOption(
            "scaling needs at least two population sizes and one seed".into(),
        ));
    }
    let mut errors = Vec::with_capacity(agents.len());
    for &n in agents {
        let row = seeds
            .iter()
            .map(|&s| mean_consistency_error(&simulate_ensemble(p, phi, chi, n, s)?, eta))
            .collect::<Result<Vec<f64>>>()?;
        errors.push(row);
    }
    let median: Vec<f64> = errors.iter().map(|row| self::median(row)).collect();
    let log_n: Vec<f64> = agents.iter().map(|&n| (n as f64).ln()).collect();
    let log_e: Vec<f64> = median.iter().map(|e| e.ln()).collect();
    Ok(ConsistencyScaling {
        agents: agents.to_vec(),
        seeds: seeds.to_vec(),
        errors,
        median,
        exponent: fitted_slope(&log_n, &log_e),
    })
}
