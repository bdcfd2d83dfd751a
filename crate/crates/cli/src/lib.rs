//! The `sedq` command-line front end.

pub mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sedq_core::compensation::TermTree;
use sedq_core::convergence::compute_n;
use sedq_core::oracle::oracle_solve_certified;
use sedq_core::solver::{adaptive_l_with, triangle};
use sedq_core::{
    compare, heatmap, metrics, oracle_solve, simulate, solve, validate_params, GapRule, SedError, SimConfig,
    TruncationBox,
};

use config::{Format, RunArgs};
use output::{emit, sig6, write_heatmap, write_lmap, write_nindex, write_report, write_states, LmapCell, NindexRow};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] SedError),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Tolerance(String),
}

impl CliError {
    /// 0 success, 1 numerical failure, 2 invalid input.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(e) if e.is_invalid_input() => 2,
            CliError::Input(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sedq", version, about = "Stationary distribution of the two-server shortest-expected-delay queue")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the stationary distribution and export it per state
    Solve(SolveArgs),
    /// Export P(q1, q2) on a grid
    Heatmap(HeatmapArgs),
    /// Tabulate the convergence index N
    Nindex(NindexArgs),
    /// Compare the solver against a truncated-chain solve, optionally a simulation
    Validate(ValidateArgs),
    /// Export the number of compensation passes each state needs
    Lmap(LmapArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Also write the compensation term tree, one record per term
    #[arg(long)]
    pub dump_tree: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Grid covers q1 < q1max
    #[arg(long)]
    pub q1max: u64,
    /// Grid covers q2 < q2max
    #[arg(long)]
    pub q2max: u64,
}

#[derive(Debug, Args)]
pub struct NindexArgs {
    #[arg(long)]
    pub q: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    pub s_list: Vec<i64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub rho_list: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Oracle box as Q1xQ2; grown until certified when absent
    #[arg(long = "box", value_parser = parse_box)]
    pub bounds: Option<TruncationBox>,
    /// Compare on 0 <= q1, q2 <= window
    #[arg(long, default_value_t = 15)]
    pub window: u64,
    /// Also run a discrete-event simulation against the oracle
    #[arg(long)]
    pub simulate: bool,
    #[arg(long, default_value = "1e6", value_parser = parse_count)]
    pub events: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest acceptable relative error between solver and oracle
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct LmapArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Map the states with m + |n| <= radius
    #[arg(long, default_value_t = 20)]
    pub radius: usize,
}

fn parse_box(s: &str) -> Result<TruncationBox, String> {
    let (a, b) = s.split_once(['x', 'X', ',']).ok_or("expected Q1xQ2, e.g. 40x80")?;
    let a = a.trim().parse::<u64>().map_err(|e| format!("q1max: {e}"))?;
    let b = b.trim().parse::<u64>().map_err(|e| format!("q2max: {e}"))?;
    Ok(TruncationBox::new(a, b))
}

/// Accepts `1000000` as well as `1e6`.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let x: f64 = s.parse().map_err(|_| format!("not a count: {s}"))?;
    if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(format!("not a count: {s}"))
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let res = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Nindex(a) => cmd_nindex(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Lmap(a) => cmd_lmap(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn cmd_solve(a: SolveArgs) -> Result<(), CliError> {
    let cfg = a.run.resolve()?;
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let start = Instant::now();
    let sol = solve(&cfg.model, &cfg.solver)?;
    let elapsed = start.elapsed().as_secs_f64();
    let records = sol.records();
    emit(cfg.out.as_deref(), |w| write_states(w, &records, cfg.format))?;
    if let Some(path) = &a.dump_tree {
        emit(Some(path), |w| sol.tree.write_text(w))?;
    }
    let d = &sol.diagnostics;
    let mt = metrics(&sol);
    eprintln!(
        "N = {}, M = {}, K = {}, states = {}, truncation mass = {}, max L = {}, E[q1 + q2] = {}, wall time = {} s",
        d.n_index,
        d.m,
        d.k,
        records.len(),
        sig6(d.tail_mass),
        d.max_l_used(),
        sig6(mt.mean_total),
        sig6(elapsed)
    );
    Ok(())
}

pub fn cmd_heatmap(a: HeatmapArgs) -> Result<(), CliError> {
    let mut cfg = a.run.resolve()?;
    if a.q1max == 0 || a.q2max == 0 {
        return Err(SedError::InvalidParam(format!("empty grid {}x{}", a.q1max, a.q2max)).into());
    }
    if cfg.solver.k.is_none() {
        // Grow the normalization triangle to cover the grid.
        let s = cfg.model.s() as u64;
        let need = (a.q1max - 1).max(a.q2max.div_ceil(s) - 1) as usize;
        let (m, k) = cfg.solver.resolve(compute_n(&cfg.model)?)?;
        cfg.solver.k = Some(k.max(need).max(m + 1));
    }
    let sol = solve(&cfg.model, &cfg.solver)?;
    let grid = heatmap(&sol, a.q1max, a.q2max)?;
    emit(cfg.out.as_deref(), |w| write_heatmap(w, &grid, &cfg))?;
    let (below, band, above) = grid.band_masses();
    eprintln!(
        "grid {}x{}: mass {}, below band {}, in band {}, above band {}",
        a.q1max,
        a.q2max,
        sig6(grid.total()),
        sig6(below),
        sig6(band),
        sig6(above)
    );
    Ok(())
}

pub fn cmd_nindex(a: NindexArgs) -> Result<(), CliError> {
    let mut cells = Vec::new();
    for &s in &a.s_list {
        for &rho in &a.rho_list {
            cells.push(validate_params(s, rho, a.q)?);
        }
    }
    let rows = cells
        .iter()
        .map(|p| {
            Ok(NindexRow {
                s: p.s(),
                rho: p.rho(),
                q: p.q(),
                n: compute_n(p)?,
            })
        })
        .collect::<Result<Vec<_>, SedError>>()?;
    emit(a.out.as_deref(), |w| write_nindex(w, &rows, a.format))
}

pub fn cmd_validate(a: ValidateArgs) -> Result<(), CliError> {
    let cfg = a.run.resolve()?;
    let p = cfg.model;
    if !(a.tol > 0.0) {
        return Err(CliError::Input(format!("tol must be positive, got {}", a.tol)));
    }
    let sol = solve(&p, &cfg.solver)?;
    let orc = match a.bounds {
        Some(b) => oracle_solve(&p, b)?,
        None => {
            let s = p.s() as u64;
            oracle_solve_certified(&p, TruncationBox::new(40, 40 * s), 10, 1e-8)?
        }
    };
    let k = sol.diagnostics.k as u64;
    let w = a.window.min(orc.bounds.q1max).min(orc.bounds.q2max).min(k);
    let window = TruncationBox::new(w, w);
    let rep = compare(&sol.queue_map(), &orc.probs, window);

    let mut lines: Vec<(&str, String)> = vec![
        ("window", format!("{w}x{w}")),
        ("box", format!("{}x{}", orc.bounds.q1max, orc.bounds.q2max)),
        ("boundary_mass", format!("{:.16e}", orc.boundary_mass)),
        ("compared", rep.compared.to_string()),
        ("max_rel_err", format!("{:.16e}", rep.max_rel_err)),
        ("max_abs_err", format!("{:.16e}", rep.max_abs_err)),
        (
            "worst_state",
            rep.worst_state.map_or("none".into(), |q| format!("({}, {})", q.q1, q.q2)),
        ),
        ("tol", format!("{:.16e}", a.tol)),
    ];
    if a.simulate {
        let cfg_sim = SimConfig {
            events: a.events,
            seed: a.seed,
            warmup: a.events / 100,
            ..SimConfig::default()
        };
        let est = simulate(&p, &cfg_sim)?;
        let (mut checked, mut beyond, mut max_z) = (0usize, 0usize, 0.0f64);
        for (st, &pi) in orc.probs.iter().filter(|(_, &v)| v > 1e-4) {
            let f = est.freq.get(st).copied().unwrap_or(0.0);
            let se = est.std_err.get(st).copied().unwrap_or(0.0);
            let z = if se > 0.0 { (f - pi).abs() / se } else { f64::INFINITY };
            checked += 1;
            max_z = max_z.max(z);
            if z > 3.0 {
                beyond += 1;
            }
        }
        lines.extend([
            ("sim_events", a.events.to_string()),
            ("sim_seed", a.seed.to_string()),
            ("sim_states", checked.to_string()),
            ("sim_beyond_3se", beyond.to_string()),
            ("sim_max_z", format!("{max_z:.16e}")),
        ]);
    }
    emit(cfg.out.as_deref(), |w| write_report(w, &lines, cfg.format))?;
    eprintln!(
        "max relative error {} (tol {}) at {}",
        sig6(rep.max_rel_err),
        sig6(a.tol),
        lines[6].1
    );
    if rep.max_rel_err <= a.tol {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!(
            "max relative error {} exceeds tol {} at state {}",
            sig6(rep.max_rel_err),
            sig6(a.tol),
            lines[6].1
        )))
    }
}

pub fn cmd_lmap(a: LmapArgs) -> Result<(), CliError> {
    // The map shows the literal rule unless another one is asked for.
    let rule_given = a.run.rule.is_some();
    let mut cfg = a.run.resolve()?;
    if !rule_given {
        cfg.solver.gap_rule = GapRule::Consecutive;
    }
    let p = cfg.model;
    let n_index = compute_n(&p)?;
    let (m_size, _) = cfg.solver.resolve(n_index)?;
    let mut tree = TermTree::new(&p)?;
    tree.extend_to(2.min(cfg.solver.l_max))?;
    let states = triangle(a.radius);
    let cells = loop {
        let mut cells = Vec::with_capacity(states.len());
        let mut deeper = false;
        for &(m, n) in &states {
            match adaptive_l_with(&tree, m, n, cfg.solver.eps, cfg.solver.l_max, cfg.solver.gap_rule) {
                Ok((_, l)) => cells.push(LmapCell { m, n, l, converged: true }),
                Err(SedError::NoConvergenceWithinLmax { .. }) => cells.push(LmapCell {
                    m,
                    n,
                    l: cfg.solver.l_max,
                    converged: false,
                }),
                Err(SedError::DepthExceeded { .. }) => {
                    deeper = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if !deeper {
            break cells;
        }
        tree.extend_to((tree.passes() + 2).min(cfg.solver.l_max))?;
    };
    emit(cfg.out.as_deref(), |w| write_lmap(w, &cells, cfg.format))?;
    let max_all = cells.iter().map(|c| c.l).max().unwrap_or(0);
    let max_out = cells
        .iter()
        .filter(|c| c.m + c.n.abs() > m_size as i64)
        .map(|c| c.l)
        .max()
        .unwrap_or(0);
    let unconverged = cells.iter().filter(|c| !c.converged).count();
    eprintln!(
        "N = {n_index}, M = {m_size}, states = {}, max L = {max_all}, max L outside T_{m_size} = {max_out}, unconverged = {unconverged}",
        cells.len()
    );
    Ok(())
}
