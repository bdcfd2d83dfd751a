//! Run configuration: command-line flags, optionally seeded from a TOML file
//! with the same keys.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use sedq_core::{validate_params, GapRule, ModelParams, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Consecutive,
    Round,
}

impl From<Rule> for GapRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Consecutive => GapRule::Consecutive,
            Rule::Round => GapRule::Round,
        }
    }
}

impl From<GapRule> for Rule {
    fn from(r: GapRule) -> Self {
        match r {
            GapRule::Consecutive => Rule::Consecutive,
            GapRule::Round => Rule::Round,
        }
    }
}

/// Flags shared by every command that runs the solver. All optional so a
/// config file can supply them.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    /// Service rate of the fast server (the slow one serves at rate 1)
    #[arg(long)]
    pub s: Option<i64>,
    /// Utilization, in (0, 1)
    #[arg(long)]
    pub rho: Option<f64>,
    /// Probability that a tied arrival joins the slow queue
    #[arg(long)]
    pub q: Option<f64>,
    /// Relative accuracy target of the truncated series
    #[arg(long)]
    pub eps: Option<f64>,
    /// Maximal number of compensation passes per state
    #[arg(long)]
    pub lmax: Option<usize>,
    /// Size of the directly solved triangle (default N + 2)
    #[arg(long)]
    pub m: Option<usize>,
    /// Size of the normalization triangle (default max(40, M + 30))
    #[arg(long)]
    pub k: Option<usize>,
    /// Accuracy rule: compare with the previous pass or with the previous round of two
    #[arg(long, value_enum)]
    pub rule: Option<Rule>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file (standard output when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file with the same keys as these flags; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl RunArgs {
    fn overlay(self, base: RunArgs) -> RunArgs {
        RunArgs {
            s: self.s.or(base.s),
            rho: self.rho.or(base.rho),
            q: self.q.or(base.q),
            eps: self.eps.or(base.eps),
            lmax: self.lmax.or(base.lmax),
            m: self.m.or(base.m),
            k: self.k.or(base.k),
            rule: self.rule.or(base.rule),
            format: self.format.or(base.format),
            out: self.out.or(base.out),
            config: None,
        }
    }

    /// Merges the config file (if any) under the flags and validates.
    pub fn resolve(self) -> Result<RunConfig, CliError> {
        let merged = match &self.config {
            Some(path) => {
                let file = read_config_file(path)?;
                self.overlay(file)
            }
            None => self,
        };
        RunConfig::try_from(merged)
    }
}

fn read_config_file(path: &Path) -> Result<RunArgs, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
}

/// A validated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelParams,
    pub solver: SolverConfig,
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl TryFrom<RunArgs> for RunConfig {
    type Error = CliError;

    fn try_from(a: RunArgs) -> Result<Self, CliError> {
        let missing = |name: &str| CliError::Input(format!("missing required parameter --{name}"));
        let model = validate_params(a.s.ok_or_else(|| missing("s"))?, a.rho.ok_or_else(|| missing("rho"))?, a.q.ok_or_else(|| missing("q"))?)?;
        let defaults = SolverConfig::default();
        let solver = SolverConfig {
            eps: a.eps.unwrap_or(defaults.eps),
            l_max: a.lmax.unwrap_or(defaults.l_max),
            m: a.m,
            k: a.k,
            gap_rule: a.rule.map_or(defaults.gap_rule, GapRule::from),
        };
        if !(solver.eps > 0.0 && solver.eps.is_finite()) {
            return Err(CliError::Input(format!("eps must be positive, got {}", solver.eps)));
        }
        if solver.l_max == 0 {
            return Err(CliError::Input("lmax must be at least 1".into()));
        }
        Ok(RunConfig {
            model,
            solver,
            format: a.format.unwrap_or_default(),
            out: a.out,
        })
    }
}

impl RunConfig {
    pub fn to_args(&self) -> RunArgs {
        RunArgs {
            s: Some(self.model.s() as i64),
            rho: Some(self.model.rho()),
            q: Some(self.model.q()),
            eps: Some(self.solver.eps),
            lmax: Some(self.solver.l_max),
            m: self.solver.m,
            k: self.solver.k,
            rule: Some(self.solver.gap_rule.into()),
            format: Some(self.format),
            out: self.out.clone(),
            config: None,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_args()).expect("flat config serializes")
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        let args: RunArgs = toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        RunConfig::try_from(args)
    }
}
