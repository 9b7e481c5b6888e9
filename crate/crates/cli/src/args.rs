//! Command-line surface. Every parameter is checked here before any data is
//! read or computed.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evofactor_core::factors::FactorCountRule;
use evofactor_core::BasisFamily;

#[derive(Parser, Debug)]
#[command(name = "evofactor", version, about = "Time-varying factor models for high-dimensional time series")]
pub struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true, env = "EVOFACTOR_THREADS")]
    pub threads: Option<usize>,

    /// Write the JSON report here instead of stdout
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,

    /// Directory for CSV series behind the report's plots
    #[arg(long, global = true, value_name = "DIR")]
    pub plot_data: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sieve estimate of the loading space and factor count at every i/n
    Estimate(EstimateArgs),
    /// Bootstrap test of static factor loadings
    Test(TestArgs),
    /// Tuning curves for the sieve order, block count and bootstrap window
    Tune(TuneArgs),
    /// Monte-Carlo study on a built-in design
    Simulate(SimulateArgs),
    /// Rolling one-step forecasts through the estimated factors
    Predict(PredictArgs),
}

/// A tuning parameter given as a number or left to a data-driven rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Auto,
    Fixed(usize),
}

impl FromStr for Choice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cv" | "mv" | "auto" => Ok(Choice::Auto),
            _ => match s.parse::<usize>() {
                Ok(0) => Err("must be positive".into()),
                Ok(v) => Ok(Choice::Fixed(v)),
                Err(_) => Err(format!("expected a positive integer, \"cv\" or \"mv\", got {s:?}")),
            },
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Auto => f.write_str("auto"),
            Choice::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Panel CSV: one row per time point, one column per series
    #[arg(long, short)]
    pub input: PathBuf,

    /// The first CSV row holds column names
    #[arg(long)]
    pub header: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SieveArgs {
    #[arg(long, default_value = "legendre", value_parser = parse_family)]
    pub basis: BasisFamily,

    /// Sieve order J, or "cv" for cross-validation
    #[arg(long, default_value = "cv")]
    pub jn: Choice,

    /// Largest order tried by cross-validation
    #[arg(long, default_value_t = 8)]
    pub jn_max: usize,

    /// Number of lags in the quadratic form
    #[arg(long, default_value_t = 3)]
    pub k0: usize,

    /// Constant of the factor-count search bound
    #[arg(long, default_value_t = 1.0)]
    pub c0: f64,

    /// Scale of the factor-count search bound; "scan" uses 1/ln^4 n
    #[arg(long, default_value = "1")]
    pub eta: Eta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eta {
    Scan,
    Value(f64),
}

impl FromStr for Eta {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "scan" {
            return Ok(Eta::Scan);
        }
        s.parse::<f64>().map(Eta::Value).map_err(|e| format!("{s:?}: {e}"))
    }
}

impl SieveArgs {
    pub fn rule(&self, n: usize) -> FactorCountRule {
        match self.eta {
            Eta::Scan => FactorCountRule { c0: self.c0, ..FactorCountRule::change_point_scan(n) },
            Eta::Value(eta) => FactorCountRule { c0: self.c0, eta },
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.k0 == 0 {
            return Err("--k0 must be at least 1".into());
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err("--c0 must be positive".into());
        }
        if let Eta::Value(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err("--eta must be positive".into());
            }
        }
        if self.jn_max == 0 {
            return Err("--jn-max must be at least 1".into());
        }
        Ok(())
    }
}

fn parse_family(s: &str) -> Result<BasisFamily, String> {
    s.parse().map_err(|e: evofactor_core::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub sieve: SieveArgs,

    /// Include the estimated loading vectors in the report
    #[arg(long)]
    pub with_vectors: bool,
}

#[derive(Args, Debug, Clone)]
pub struct StaticTestArgs {
    /// Number of blocks N, or "mv" for minimal volatility over 2..=10
    #[arg(long, default_value = "mv")]
    pub nn: Choice,

    /// Bootstrap window w, or "mv" for minimal volatility
    #[arg(long, default_value = "mv")]
    pub wn: Choice,

    /// Bootstrap replicates
    #[arg(long = "B", default_value_t = 1000)]
    pub bootstrap: usize,

    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Use this many factors instead of estimating the count
    #[arg(long)]
    pub factors: Option<usize>,

    /// Half-width of the minimal-volatility windows
    #[arg(long, default_value_t = 1)]
    pub h: usize,
}

impl StaticTestArgs {
    fn validate(&self) -> Result<(), String> {
        if self.bootstrap < 100 {
            return Err("--B must be at least 100".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err("--alpha must lie in (0, 1)".into());
        }
        if self.h == 0 {
            return Err("--h must be at least 1".into());
        }
        if self.factors == Some(0) {
            return Err("--factors must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub test: StaticTestArgs,

    /// Number of lags in the quadratic form
    #[arg(long, default_value_t = 3)]
    pub k0: usize,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub sieve: SieveArgs,

    /// Block counts and windows use these test settings, with the sieve's k0
    #[command(flatten)]
    pub test: StaticTestArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignName {
    /// Time-varying loadings; sieve, local-PCA and static span accuracy
    Table1,
    /// Static loadings with heavy-tailed noise; test size
    Table3Model1,
    /// Static loadings with product noise; test size
    Table3Model2,
    /// Drifting loadings of strength --strength; test power
    Table4,
    /// Factor count jumping from 1 to 2; count recovery
    FactorCountJump,
    /// Persistent factor; forecast accuracy
    PersistentLoading,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub design: DesignName,

    #[arg(long, default_value_t = 1000)]
    pub n: usize,

    #[arg(long, default_value_t = 50)]
    pub p: usize,

    #[arg(long, default_value_t = 100)]
    pub reps: usize,

    #[arg(long = "B", default_value_t = 1000)]
    pub bootstrap: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Loading drift strength D of the power design
    #[arg(long, default_value_t = 0.0)]
    pub strength: f64,

    /// Also write the summary as a one-row CSV table
    #[arg(long)]
    pub table_csv: Option<PathBuf>,
}

impl SimulateArgs {
    fn validate(&self) -> Result<(), String> {
        if self.n < 2 || self.p < 1 || self.reps < 1 {
            return Err("--n >= 2, --p >= 1 and --reps >= 1 are required".into());
        }
        if self.bootstrap < 100 {
            return Err("--B must be at least 100".into());
        }
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err("--strength must be a finite non-negative number".into());
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub sieve: SieveArgs,

    /// First forecast origin; defaults to n/2
    #[arg(long)]
    pub eval_start: Option<usize>,

    #[arg(long, default_value_t = 6)]
    pub ar_order_max: usize,

    /// Number of factor series; defaults to the largest estimated count
    #[arg(long)]
    pub d_max: Option<usize>,
}

impl Cli {
    /// Checks the parameters that do not depend on the data.
    pub fn validate(&self) -> Result<(), String> {
        if self.threads == Some(0) {
            return Err("--threads must be at least 1".into());
        }
        match &self.command {
            Command::Estimate(a) => a.sieve.validate(),
            Command::Test(a) => {
                if a.k0 == 0 {
                    return Err("--k0 must be at least 1".into());
                }
                a.test.validate()
            }
            Command::Tune(a) => a.sieve.validate().and(a.test.validate()),
            Command::Simulate(a) => a.validate(),
            Command::Predict(a) => {
                a.sieve.validate()?;
                if a.d_max == Some(0) {
                    return Err("--d-max must be at least 1".into());
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("evofactor").chain(args.iter().copied()))
    }

    #[test]
    fn choice_accepts_rules_and_positive_integers() {
        assert_eq!("cv".parse::<Choice>(), Ok(Choice::Auto));
        assert_eq!("mv".parse::<Choice>(), Ok(Choice::Auto));
        assert_eq!("4".parse::<Choice>(), Ok(Choice::Fixed(4)));
        assert!("0".parse::<Choice>().is_err());
        assert!("-2".parse::<Choice>().is_err());
    }

    #[test]
    fn tune_shares_k0_with_the_sieve() {
        let cli = parse(&["tune", "-i", "x.csv", "--k0", "2", "--nn", "5"]).unwrap();
        let Command::Tune(a) = cli.command else { panic!() };
        assert_eq!(a.sieve.k0, 2);
        assert_eq!(a.test.nn, Choice::Fixed(5));
        assert_eq!(a.test.wn, Choice::Auto);
    }

    #[test]
    fn eta_scan_uses_the_scan_rule() {
        let cli = parse(&["estimate", "-i", "x.csv", "--eta", "scan", "--c0", "0.5"]).unwrap();
        let Command::Estimate(a) = cli.command else { panic!() };
        let rule = a.sieve.rule(1000);
        assert_eq!(rule.c0, 0.5);
        assert_eq!(rule.eta, FactorCountRule::change_point_scan(1000).eta);
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        for bad in [
            vec!["test", "-i", "x.csv", "--B", "50"],
            vec!["test", "-i", "x.csv", "--alpha", "0"],
            vec!["estimate", "-i", "x.csv", "--eta=-1"],
            vec!["simulate", "--design", "table4", "--strength=-0.1"],
            vec!["predict", "-i", "x.csv", "--d-max", "0"],
            vec!["--threads", "0", "estimate", "-i", "x.csv"],
        ] {
            assert!(parse(&bad).unwrap().validate().is_err(), "{bad:?}");
        }
        assert!(parse(&["simulate", "--design", "table3-model2"]).unwrap().validate().is_ok());
    }
}
