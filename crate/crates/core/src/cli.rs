//! The `solve`, `poa` and `simulate` commands. Each writes CSV and JSON files
//! into an output directory and returns the paths it wrote.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::costs::{self, Estimate, PayoffBreakdown, PoaTable, SocialCost};
use crate::error::Result;
use crate::fbsolver::{solve_mean_field, MeanFieldSolution, Method, Variant};
use crate::model::{MfProblem, TimeGrid};
use crate::simulator::{self, ConsistencyScaling, Spread};

/// Formats a number with 17 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}_{i}"))
}

fn time_rows<'a>(
    grid: &'a TimeGrid,
    row: impl Fn(usize) -> Vec<f64> + 'a,
) -> impl Iterator<Item = Vec<String>> + 'a {
    (0..grid.nodes()).map(move |v| {
        std::iter::once(grid.time(v))
            .chain(row(v))
            .map(fmt)
            .collect()
    })
}

/// File-name suffix for one run: `_mfg`/`_mfc` when several variants are
/// requested, then `_newton`/`_fixed-point` when several methods are.
pub fn suffix(variant: Variant, method: Method, many_variants: bool, many_methods: bool) -> String {
    let mut s = String::new();
    if many_variants {
        s.push('_');
        s.push_str(variant.as_str());
    }
    if many_methods {
        s.push('_');
        s.push_str(method.as_str());
    }
    s
}

fn runs(cfg: &RunConfig) -> Vec<(Variant, Method, String)> {
    let variants = cfg.solver.variant.variants();
    let methods = cfg.solver.method.methods();
    let mut out = Vec::new();
    for &v in &variants {
        for &m in &methods {
            out.push((v, m, suffix(v, m, variants.len() > 1, methods.len() > 1)));
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct RunSummary {
    variant: Variant,
    method: Method,
    files_suffix: String,
    iterations: usize,
    residual: f64,
    final_difference: Option<f64>,
    contraction_estimate: Option<f64>,
    payoff: PayoffBreakdown,
    social_cost: SocialCost,
}

#[derive(Debug, Serialize)]
struct SolutionReport<'a> {
    config: &'a RunConfig,
    runs: Vec<RunSummary>,
}

fn write_solution_files(
    out: &Path,
    sfx: &str,
    p: &MfProblem,
    sol: &MeanFieldSolution,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let n = p.state_dim();
    let grid = &p.grid;

    let path = out.join(format!("phi{sfx}.csv"));
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).flat_map(|i| (1..=n).map(move |j| format!("phi_{i}_{j}"))))
        .collect();
    // row-major vec(φ)
    write_csv(
        &path,
        &header,
        time_rows(grid, |v| sol.phi()[v].transpose().iter().copied().collect()),
    )?;
    written.push(path);

    let path = out.join(format!("eta_chi{sfx}.csv"));
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("eta", n))
        .chain(numbered("chi", n))
        .collect();
    write_csv(
        &path,
        &header,
        time_rows(grid, |v| sol.eta()[v].iter().chain(sol.chi()[v].iter()).copied().collect()),
    )?;
    written.push(path);

    let path = out.join(format!("zeta{sfx}.csv"));
    write_csv(
        &path,
        &["t".into(), "zeta".into()],
        time_rows(grid, |v| vec![sol.zeta()[v]]),
    )?;
    written.push(path);

    let path = out.join(format!("convergence{sfx}.csv"));
    write_csv(
        &path,
        &["iteration".into(), "difference".into()],
        sol.pair
            .convergence
            .iter()
            .enumerate()
            .map(|(j, d)| vec![(j + 1).to_string(), fmt(*d)]),
    )?;
    written.push(path);
    Ok(())
}

fn payoff_of(sol: &MeanFieldSolution, p: &MfProblem) -> PayoffBreakdown {
    match sol.variant {
        Variant::Mfg => costs::mfg_payoff(sol, p),
        Variant::Mfc => costs::mfc_payoff(sol, p),
    }
}

/// Solves every requested variant/method pair and writes the trajectories,
/// the iteration history and `solution.json`.
pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let p = cfg.problem()?;
    let opts = cfg.solver.options();
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut summaries = Vec::new();
    for (variant, method, sfx) in runs(cfg) {
        let sol = solve_mean_field(&p, variant, method, &opts)?;
        write_solution_files(out, &sfx, &p, &sol, &mut written)?;
        summaries.push(RunSummary {
            variant,
            method,
            files_suffix: sfx,
            iterations: sol.pair.iterations,
            residual: sol.pair.residual,
            final_difference: sol.pair.convergence.last().copied(),
            contraction_estimate: sol.pair.contraction_estimate,
            payoff: payoff_of(&sol, &p),
            social_cost: costs::solution_social_cost(&p, &sol)?,
        });
    }
    let path = out.join("solution.json");
    write_json(
        &path,
        &SolutionReport {
            config: cfg,
            runs: summaries,
        },
    )?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Serialize)]
struct PoaReport<'a> {
    config: &'a RunConfig,
    table: &'a PoaTable,
}

/// Builds the method × definition price-of-anarchy table and writes
/// `poa.json`.
pub fn cmd_poa(cfg: &RunConfig, out: &Path) -> Result<(PoaTable, Vec<PathBuf>)> {
    let p = cfg.problem()?;
    let table = costs::poa_table(&p, &Method::ALL, &cfg.solver.options())?;
    fs::create_dir_all(out)?;
    let path = out.join("poa.json");
    write_json(
        &path,
        &PoaReport {
            config: cfg,
            table: &table,
        },
    )?;
    Ok((table, vec![path]))
}

#[derive(Debug, Serialize)]
struct ConsistencyReport {
    variant: Variant,
    method: Method,
    agents: usize,
    seed: u64,
    mean_consistency_error: f64,
    eta_norm: f64,
    relative_error: f64,
    empirical_social_cost: Estimate,
    mean_field_social_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    scaling: Option<ConsistencyScaling>,
}

fn spread_cells(s: &Spread) -> [f64; 4] {
    [s.mean, s.q05, s.median, s.q95]
}

/// Simulates the closed-loop population for each requested run and writes
/// the ensemble mean, tracking statistics and the consistency report.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let p = cfg.problem()?;
    let opts = cfg.solver.options();
    let sim = &cfg.simulate;
    let link = cfg.link_params();
    let n = p.state_dim();
    let grid = p.grid;
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (variant, method, sfx) in runs(cfg) {
        let sol = solve_mean_field(&p, variant, method, &opts)?;
        let ens = simulator::simulate_ensemble(&p, sol.phi(), sol.chi(), sim.agents, sim.seed)?;
        let mean = simulator::empirical_mean(&ens);

        let path = out.join(format!("ensemble_mean{sfx}.csv"));
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain(numbered("mean", n))
            .chain(numbered("eta", n))
            .collect();
        write_csv(
            &path,
            &header,
            time_rows(&grid, |v| mean[v].iter().chain(sol.eta()[v].iter()).copied().collect()),
        )?;
        written.push(path);

        let summary = simulator::summarize_tracking(&simulator::tracking_timeseries(&ens, &p, &link));
        let path = out.join(format!("tracking{sfx}.csv"));
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain(["theta_norm", "attenuation", "intensity"].iter().flat_map(|q| {
                ["mean", "q05", "median", "q95"]
                    .iter()
                    .map(move |s| format!("{q}_{s}"))
            }))
            .collect();
        write_csv(
            &path,
            &header,
            time_rows(&grid, |v| {
                [&summary.theta_norm[v], &summary.attenuation[v], &summary.intensity[v]]
                    .iter()
                    .flat_map(|s| spread_cells(s))
                    .collect()
            }),
        )?;
        written.push(path);

        if sim.write_paths {
            let path = out.join(format!("paths{sfx}.csv"));
            let header: Vec<String> = ["t".to_string(), "agent".to_string()]
                .into_iter()
                .chain(numbered("x", n))
                .collect();
            let rows = ens.paths.iter().enumerate().flat_map(|(k, path)| {
                path.iter().enumerate().map(move |(v, x)| {
                    [fmt(grid.time(v)), k.to_string()]
                        .into_iter()
                        .chain(x.iter().map(|c| fmt(*c)))
                        .collect()
                })
            });
            write_csv(&path, &header, rows)?;
            written.push(path);
        }

        let error = simulator::mean_consistency_error(&ens, sol.eta())?;
        let eta_norm = simulator::l2_trapezoid(sol.eta(), grid.dt());
        let scaling = if sim.repetitions > 1 {
            let seeds: Vec<u64> = (0..sim.repetitions as u64).map(|i| sim.seed + i).collect();
            Some(simulator::consistency_scaling(
                &p,
                sol.phi(),
                sol.chi(),
                sol.eta(),
                &sim.scaling_agents,
                &seeds,
            )?)
        } else {
            None
        };
        let path = out.join(format!("consistency{sfx}.json"));
        write_json(
            &path,
            &ConsistencyReport {
                variant,
                method,
                agents: sim.agents,
                seed: sim.seed,
                mean_consistency_error: error,
                eta_norm,
                relative_error: error / eta_norm,
                empirical_social_cost: costs::empirical_cost(
                    std::slice::from_ref(&ens),
                    &p,
                    costs::CostMode::Social,
                )?,
                mean_field_social_cost: costs::solution_social_cost(&p, &sol)?.total,
                scaling,
            },
        )?;
        written.push(path);
    }
    Ok(written)
}
