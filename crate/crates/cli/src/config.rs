//! Flag parsing, the flat `key = value` config file and resolution into a
//! validated run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bhdimer::dissipation::{JumpMethod, LossSchedule, LossWindow};
use bhdimer::DimerParams;
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Per-step jump test
    Fixed,
    /// Norm-threshold jump times
    Waiting,
}

impl From<Method> for JumpMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Fixed => JumpMethod::FixedStep,
            Method::Waiting => JumpMethod::WaitingTime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    /// Condensate fraction after evolution to t_final
    C,
    /// EPR observable after evolution to t_final
    Epr,
    /// Top-k projection norm of each coherent state
    Projection,
    /// Husimi function of the state evolved from (z0, phi0)
    Husimi,
}

/// Options shared by every command. Any of them may also come from
/// `--config`; flags on the command line win.
#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// Flat `key = value` file; keys are flag names without the dashes
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_atoms: Option<usize>,
    /// Tunneling rate J (s^-1)
    #[arg(long)]
    pub tunneling: Option<f64>,
    /// Interaction U (s^-1)
    #[arg(long, conflicts_with = "lambda")]
    pub interaction: Option<f64>,
    /// Dimensionless interaction U(N-1)/2J
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub z0: Option<f64>,
    #[arg(long)]
    pub phi0: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub dt_record: Option<f64>,
    /// Scan grid as NZxNPHI or a single size for both axes
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss window "well:rate:t0:t1"; repeatable
    #[arg(long = "loss")]
    pub loss: Vec<String>,
    /// Jump-time algorithm inside loss windows
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Step inside loss windows (s); default min(1e-4, 0.01 / (gamma N))
    #[arg(long)]
    pub jump_dt: Option<f64>,
    /// Number of leading eigenstates for projections
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, value_enum)]
    pub observable: Option<ScanKind>,
    /// Comma-separated Lambda values for the frequency sweep
    #[arg(long)]
    pub lambdas: Option<String>,
    /// Emit one stochastic realization instead of the ensemble mean
    #[arg(long)]
    pub single_trajectory: bool,
    /// Output file; defaults to <out dir>/<command>.<format>
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "BHDIMER_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub threads: Option<usize>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse {key} = {value:?}")))
}

fn parse_enum<T: ValueEnum>(key: &str, value: &str) -> Result<T, CliError> {
    T::from_str(value.trim(), true).map_err(|_| CliError::Config(format!("invalid {key} = {value:?}")))
}

/// Reads `key = value` lines; `#` starts a comment. A key may repeat only
/// for `loss`.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{}:{}: expected key = value", path.display(), no + 1)))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

impl Opts {
    /// Fills every unset option from the config file, if one was given.
    pub fn merge_config_file(mut self) -> Result<Self, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let entries = read_config_file(&path)?;
        let mut seen = BTreeMap::new();
        let mut file_loss = Vec::new();
        for (k, v) in entries {
            if k == "loss" {
                file_loss.push(v);
                continue;
            }
            if seen.insert(k.clone(), v).is_some() {
                return Err(CliError::Config(format!("duplicate key {k} in config file")));
            }
        }
        if self.loss.is_empty() {
            self.loss = file_loss;
        }
        macro_rules! fill {
            ($($field:ident => $how:ident),* $(,)?) => {
                $(
                    if let Some(v) = seen.remove(stringify!($field)) {
                        if self.$field.is_none() {
                            self.$field = Some($how(stringify!($field), &v)?);
                        }
                    }
                )*
            };
        }
        fill!(
            n_atoms => parse, tunneling => parse, interaction => parse, lambda => parse,
            z0 => parse, phi0 => parse, t_final => parse, dt_record => parse,
            grid => parse, samples => parse, trajectories => parse, seed => parse,
            method => parse_enum, jump_dt => parse, top_k => parse, observable => parse_enum,
            lambdas => parse, out => parse, out_dir => parse, format => parse_enum, threads => parse,
        );
        if let Some(v) = seen.remove("single_trajectory") {
            self.single_trajectory |= parse::<bool>("single_trajectory", &v)?;
        }
        if let Some(k) = seen.keys().next() {
            return Err(CliError::Config(format!("unknown key {k} in config file")));
        }
        Ok(self)
    }

    /// N, J and U from the flags; exactly one of U and Lambda.
    pub fn params(&self) -> Result<DimerParams, CliError> {
        let n = self.n_atoms.ok_or_else(|| CliError::Config("--n-atoms is required".into()))?;
        let j = self.tunneling.ok_or_else(|| CliError::Config("--tunneling is required".into()))?;
        let p = match (self.interaction, self.lambda) {
            (Some(u), None) => DimerParams::new(n, j, u),
            (None, Some(l)) => DimerParams::from_lambda(n, j, l),
            _ => return Err(CliError::Config("give exactly one of --interaction and --lambda".into())),
        };
        p.map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn schedule(&self) -> Result<LossSchedule, CliError> {
        let windows = self.loss.iter().map(|s| parse_loss(s)).collect::<Result<Vec<_>, _>>()?;
        let sched = LossSchedule::new(windows).map_err(|e| CliError::Config(e.to_string()))?;
        if !sched.is_lossless() && self.seed.is_none() {
            return Err(CliError::Config("--seed is required with a loss schedule".into()));
        }
        Ok(sched)
    }

    pub fn grid_shape(&self, default: usize) -> Result<(usize, usize), CliError> {
        match &self.grid {
            None => Ok((default, default)),
            Some(g) => {
                let (a, b) = g.split_once(['x', 'X']).unwrap_or((g, g));
                Ok((parse("grid", a)?, parse("grid", b)?))
            }
        }
    }

    pub fn lambda_list(&self) -> Result<Vec<f64>, CliError> {
        let s = self.lambdas.as_deref().unwrap_or("1,1.5,2,3,4,5,6,8,10");
        s.split(',').map(|x| parse("lambdas", x)).collect()
    }
}

/// `"well:rate:t0:t1"` with well 1 or 2.
pub fn parse_loss(spec: &str) -> Result<LossWindow, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 4 {
        return Err(CliError::Config(format!("loss {spec:?} must be well:rate:t0:t1")));
    }
    let rate: f64 = parse("loss rate", parts[1])?;
    let (gamma1, gamma2) = match parts[0].trim() {
        "1" => (rate, 0.0),
        "2" => (0.0, rate),
        w => return Err(CliError::Config(format!("loss well must be 1 or 2, got {w}"))),
    };
    Ok(LossWindow {
        t_start: parse("loss t0", parts[2])?,
        t_end: parse("loss t1", parts[3])?,
        gamma1,
        gamma2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_spec() {
        let w = parse_loss("2:50:1:1.25").unwrap();
        assert_eq!((w.gamma1, w.gamma2, w.t_start, w.t_end), (0.0, 50.0, 1.0, 1.25));
        assert!(parse_loss("3:1:0:1").is_err());
        assert!(parse_loss("1:1:0").is_err());
    }

    #[test]
    fn params_need_exactly_one_of_u_and_lambda() {
        let mut o = Opts {
            n_atoms: Some(40),
            tunneling: Some(10.0),
            lambda: Some(5.0),
            ..Default::default()
        };
        assert!((o.params().unwrap().interaction() - 100.0 / 39.0).abs() < 1e-12);
        o.interaction = Some(1.0);
        assert!(o.params().is_err());
        o.lambda = None;
        assert_eq!(o.params().unwrap().interaction(), 1.0);
    }

    #[test]
    fn seed_required_with_loss() {
        let mut o = Opts {
            loss: vec!["2:1:0:1".into()],
            ..Default::default()
        };
        assert!(matches!(o.schedule(), Err(CliError::Config(_))));
        o.seed = Some(3);
        assert!(!o.schedule().unwrap().is_lossless());
    }

    #[test]
    fn grid_forms() {
        let mut o = Opts::default();
        assert_eq!(o.grid_shape(11).unwrap(), (11, 11));
        o.grid = Some("20x25".into());
        assert_eq!(o.grid_shape(11).unwrap(), (20, 25));
        o.grid = Some("7".into());
        assert_eq!(o.grid_shape(11).unwrap(), (7, 7));
    }

    #[test]
    fn flags_win_over_file() {
        let dir = std::env::temp_dir().join(format!("bhdimer-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "n-atoms = 12\ntunneling = 3 # s^-1\nlambda = 2\nloss = 1:2:0:1\nloss = 2:2:1:2\n").unwrap();
        let o = Opts {
            config: Some(path.clone()),
            n_atoms: Some(8),
            ..Default::default()
        }
        .merge_config_file()
        .unwrap();
        assert_eq!(o.n_atoms, Some(8));
        assert_eq!(o.tunneling, Some(3.0));
        assert_eq!(o.loss.len(), 2);
        std::fs::write(&path, "bogus = 1\n").unwrap();
        let err = Opts {
            config: Some(path),
            ..Default::default()
        }
        .merge_config_file();
        assert!(matches!(err, Err(CliError::Config(_))));
        std::fs::remove_dir_all(dir).unwrap();
    }
}
