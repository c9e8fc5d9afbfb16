//! TOML run configuration.
//!
//! ```toml
//! [problem]
//! horizon = 1.0
//! subintervals = 100
//! a = [[1.5, 0.0], [0.0, 1.0]]
//! # ... b, gamma, c, d, q, q_bar, r, s, q_terminal, q_bar_terminal,
//! # s_terminal, x0_mean, sigma0; rho and mfc_terminal are optional
//!
//! [solver]
//! variant = "both"        # mfg | mfc | both
//! method = "fixed-point"  # fixed-point | newton | both
//! damping = 0.5
//!
//! [simulate]
//! agents = 1000
//! seed = 42
//!
//! [link]
//! divergence = 1.0
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbsolver::{FixedPointScheme, Method, SolverOptions, Variant};
use crate::model::{validate_problem, MfProblem, OpticalLink, TimeGrid};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub horizon: f64,
    pub subintervals: usize,
    pub a: Rows,
    pub b: Rows,
    pub gamma: Rows,
    pub c: Rows,
    pub d: Rows,
    /// Checked against `½DDᵀ` when given; derived from `d` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Rows>,
    pub q: Rows,
    pub q_bar: Rows,
    pub r: Rows,
    pub s: Rows,
    pub q_terminal: Rows,
    pub q_bar_terminal: Rows,
    pub s_terminal: Rows,
    pub x0_mean: Vec<f64>,
    pub sigma0: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfc_terminal: Option<Rows>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantChoice {
    Mfg,
    Mfc,
    Both,
}

impl VariantChoice {
    pub fn variants(&self) -> Vec<Variant> {
        match self {
            VariantChoice::Mfg => vec![Variant::Mfg],
            VariantChoice::Mfc => vec![Variant::Mfc],
            VariantChoice::Both => Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    FixedPoint,
    Newton,
    Both,
}

impl MethodChoice {
    pub fn methods(&self) -> Vec<Method> {
        match self {
            MethodChoice::FixedPoint => vec![Method::FixedPoint],
            MethodChoice::Newton => vec![Method::Newton],
            MethodChoice::Both => Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub variant: VariantChoice,
    pub method: MethodChoice,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: FixedPointScheme,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            variant: VariantChoice::Both,
            method: MethodChoice::FixedPoint,
            damping: o.damping,
            tol: o.tol,
            max_iter: o.max_iter,
            scheme: o.scheme,
        }
    }
}

impl SolverSection {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            damping: self.damping,
            tol: self.tol,
            max_iter: self.max_iter,
            scheme: self.scheme,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub agents: usize,
    pub seed: u64,
    /// Seeds `seed, seed + 1, …` used for the population-size scan; the scan
    /// runs only when this exceeds 1.
    pub repetitions: usize,
    pub scaling_agents: Vec<usize>,
    /// Also write every agent path to `paths.csv`.
    pub write_paths: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            agents: 1000,
            seed: 0,
            repetitions: 1,
            scaling_agents: vec![250, 1000, 4000],
            write_paths: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    pub divergence: f64,
    pub focal_length: f64,
    pub power: f64,
    pub spot_sigma: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        let l = OpticalLink::default();
        Self {
            divergence: l.divergence,
            focal_length: l.focal_length,
            power: l.power,
            spot_sigma: l.spot_sigma,
        }
    }
}

/// A configuration file with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub link: LinkSection,
}

fn config_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.display().to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(path, format!("cannot read file: {e}")))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { message, .. } => config_error(path, message),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        cfg.check_options()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn check_options(&self) -> Result<()> {
        self.solver.options().validate()?;
        if self.simulate.agents < 2 {
            return Err(Error::InsufficientAgents(self.simulate.agents));
        }
        if self.simulate.repetitions == 0 {
            return Err(Error::InvalidOption("repetitions must be at least 1".into()));
        }
        if self.simulate.scaling_agents.iter().any(|&n| n < 2) {
            return Err(Error::InsufficientAgents(
                *self.simulate.scaling_agents.iter().min().unwrap(),
            ));
        }
        self.link_params().validate()
    }

    pub fn link_params(&self) -> OpticalLink {
        OpticalLink {
            divergence: self.link.divergence,
            focal_length: self.link.focal_length,
            power: self.link.power,
            spot_sigma: self.link.spot_sigma,
        }
    }

    /// Builds and validates the problem.
    pub fn problem(&self) -> Result<MfProblem> {
        let s = &self.problem;
        let d = matrix("d", &s.d)?;
        let rho = match &s.rho {
            Some(rows) => matrix("rho", rows)?,
            None => &d * d.transpose() * 0.5,
        };
        validate_problem(MfProblem {
            a: matrix("a", &s.a)?,
            b: matrix("b", &s.b)?,
            gamma: matrix("gamma", &s.gamma)?,
            c: matrix("c", &s.c)?,
            d,
            rho,
            q: matrix("q", &s.q)?,
            q_bar: matrix("q_bar", &s.q_bar)?,
            r: matrix("r", &s.r)?,
            s: matrix("s", &s.s)?,
            q_terminal: matrix("q_terminal", &s.q_terminal)?,
            q_bar_terminal: matrix("q_bar_terminal", &s.q_bar_terminal)?,
            s_terminal: matrix("s_terminal", &s.s_terminal)?,
            x0_mean: DVector::from_vec(s.x0_mean.clone()),
            sigma0: matrix("sigma0", &s.sigma0)?,
            grid: TimeGrid::new(s.horizon, s.subintervals)?,
            mfc_terminal: s
                .mfc_terminal
                .as_ref()
                .map(|rows| matrix("mfc_terminal", rows))
                .transpose()?,
        })
    }
}

/// Dense matrix from an array of rows.
pub fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 {
        return Err(Error::DimensionMismatch(format!("{name} is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("{name} has ragged rows")));
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

pub fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Configuration of the bundled beam-tracking example.
pub fn beam_tracking_config() -> RunConfig {
    let p = crate::model::beam_tracking_demo(100).expect("demo problem is valid");
    RunConfig {
        problem: ProblemSection {
            horizon: p.grid.horizon(),
            subintervals: p.grid.subintervals(),
            a: rows(&p.a),
            b: rows(&p.b),
            gamma: rows(&p.gamma),
            c: rows(&p.c),
            d: rows(&p.d),
            rho: None,
            q: rows(&p.q),
            q_bar: rows(&p.q_bar),
            r: rows(&p.r),
            s: rows(&p.s),
            q_terminal: rows(&p.q_terminal),
            q_bar_terminal: rows(&p.q_bar_terminal),
            s_terminal: rows(&p.s_terminal),
            x0_mean: p.x0_mean.iter().copied().collect(),
            sigma0: rows(&p.sigma0),
            mfc_terminal: None,
        },
        solver: SolverSection::default(),
        simulate: SimulateSection::default(),
        link: LinkSection::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::beam_tracking_demo;

    #[test]
    fn demo_round_trips_through_toml() {
        let cfg = beam_tracking_config();
        let back = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.problem().unwrap(), beam_tracking_demo(100).unwrap());
    }

    #[test]
    fn bundled_config_matches_demo() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/beam_tracking.toml");
        let cfg = RunConfig::load(&path).unwrap();
        let p = cfg.problem().unwrap();
        let demo = beam_tracking_demo(100).unwrap();
        assert!((&p.d - &demo.d).abs().max() < 1e-15);
        assert!((&p.rho - &demo.rho).abs().max() < 1e-15);
        assert_eq!(p.a, demo.a);
        assert_eq!(p.r, demo.r);
        assert_eq!(p.x0_mean, demo.x0_mean);
    }

    #[test]
    fn defaults_are_filled() {
        let mut cfg = beam_tracking_config();
        let text = format!("[problem]\n{}", toml::to_string(&cfg.problem).unwrap());
        let parsed = RunConfig::parse(&text).unwrap();
        cfg.solver = SolverSection::default();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.solver.damping, 0.5);
        assert_eq!(parsed.solver.tol, 1e-8);
        assert_eq!(parsed.solver.max_iter, 500);
    }

    #[test]
    fn bad_options_and_matrices_are_rejected() {
        let mut cfg = beam_tracking_config();
        cfg.solver.damping = 0.0;
        assert!(matches!(RunConfig::parse(&cfg.to_toml()), Err(Error::InvalidOption(_))));

        let mut cfg = beam_tracking_config();
        cfg.simulate.agents = 1;
        assert!(matches!(RunConfig::parse(&cfg.to_toml()), Err(Error::InsufficientAgents(1))));

        let mut cfg = beam_tracking_config();
        cfg.problem.q = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(matches!(cfg.problem(), Err(Error::DimensionMismatch(_))));

        let mut cfg = beam_tracking_config();
        cfg.problem.rho = Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(cfg.problem().is_err());

        assert!(matches!(RunConfig::parse("[problem]\nhorizon = 1.0\n"), Err(Error::Config { .. })));
        assert!(matches!(
            RunConfig::load(Path::new("/nonexistent/run.toml")),
            Err(Error::Config { path, .. }) if path == "/nonexistent/run.toml"
        ));
    }
}
