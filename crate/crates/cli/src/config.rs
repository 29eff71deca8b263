use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use stabopt_core::certify::QuadraticCertificate;
use stabopt_core::fault::MAX_SERIES_CLEARING_TIME;
use stabopt_core::optimize::{ClearedModel, TscopfOptions, Variant};
use stabopt_core::simulate::SimOptions;
use stabopt_core::{load_case, load_scenario, PowerCase, ScenarioSpec};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Concave,
    Hull,
    Inner,
    Grid,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Concave => Variant::Concave,
            VariantArg::Hull => Variant::Hull,
            VariantArg::Inner => Variant::Inner,
            VariantArg::Grid => Variant::Grid,
        }
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Case file (JSON).
    #[arg(long)]
    pub case: PathBuf,
    /// Output directory; reports go to stdout when omitted.
    #[arg(long = "out", value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Seed for every randomized check.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

/// Flags of commands that involve a fault scenario.
#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Override of the scenario's clearing time, seconds.
    #[arg(long)]
    pub tc: Option<f64>,
    /// Lower sector slope.
    #[arg(long, default_value_t = stabopt_core::lure::DEFAULT_XI)]
    pub xi: f64,
    /// Cached certificate to use instead of solving the LMI.
    #[arg(long, value_name = "FILE")]
    pub certificate: Option<PathBuf>,
    /// Simulation horizon, seconds.
    #[arg(long, default_value_t = 20.0)]
    pub horizon: f64,
    /// RK4 step, seconds.
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
}

/// Flags of the constrained dispatch.
#[derive(Debug, Clone, Args)]
pub struct OptArgs {
    #[arg(long, value_enum, default_value = "inner")]
    pub variant: VariantArg,
    /// Absolute weight of the level in the objective; defaults to
    /// 1e-4·max(1, |OPF cost|).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Order of the fault-on series for the cleared state.
    #[arg(long, default_value_t = 3)]
    pub taylor_order: usize,
    /// Use the third-order closed form for the cleared state.
    #[arg(long)]
    pub closed_form: bool,
    /// Solve from the warm, flat and perturbed starts and keep the best.
    #[arg(long)]
    pub multistart: bool,
}

/// Validated inputs of one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case: PowerCase,
    pub scenario: Option<ScenarioSpec>,
    pub certificate: Option<QuadraticCertificate>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub seed: u64,
    pub xi: f64,
    pub sim: SimOptions,
    pub tscopf: TscopfOptions,
    pub multistart: bool,
}

fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

fn existing(path: &Path) -> Result<&Path, Failure> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(input(format!("{}: no such file", path.display())))
    }
}

impl RunConfig {
    pub fn new(common: &CommonArgs, study: Option<&StudyArgs>, opt: Option<&OptArgs>) -> Result<Self, Failure> {
        let case = load_case(existing(&common.case)?)?;
        let mut cfg = RunConfig {
            case,
            scenario: None,
            certificate: None,
            out: common.out.clone(),
            format: common.format,
            seed: common.seed,
            xi: stabopt_core::lure::DEFAULT_XI,
            sim: SimOptions::default(),
            tscopf: TscopfOptions::default(),
            multistart: false,
        };
        if let Some(s) = study {
            let mut spec = load_scenario(existing(&s.scenario)?)?;
            if let Some(tc) = s.tc {
                if !(tc > 0.0 && tc <= MAX_SERIES_CLEARING_TIME) {
                    return Err(input(format!("--tc must be in (0, {MAX_SERIES_CLEARING_TIME}]")));
                }
                spec.t_clear = tc;
            }
            if !(s.xi > 0.0 && s.xi < 1.0) {
                return Err(input("--xi must be in (0, 1)"));
            }
            if !(s.step > 0.0 && s.step <= 0.01) {
                return Err(input("--step must be in (0, 0.01]"));
            }
            if !(s.horizon > spec.t_clear && s.horizon.is_finite()) {
                return Err(input("--horizon must exceed the clearing time"));
            }
            if let Some(path) = &s.certificate {
                let text = std::fs::read_to_string(existing(path)?).map_err(|e| input(format!("{}: {e}", path.display())))?;
                cfg.certificate = Some(
                    QuadraticCertificate::from_json(&text)
                        .map_err(|e| input(format!("{}: unreadable certificate: {e}", path.display())))?,
                );
            }
            cfg.xi = s.xi;
            cfg.sim = SimOptions { horizon: s.horizon, step: s.step, ..SimOptions::default() };
            cfg.scenario = Some(spec);
        }
        if let Some(o) = opt {
            if !(1..=stabopt_core::fault::MAX_TAYLOR_ORDER).contains(&o.taylor_order) {
                return Err(input(format!("--taylor-order must be in 1..={}", stabopt_core::fault::MAX_TAYLOR_ORDER)));
            }
            if let Some(e) = o.epsilon {
                if !(e > 0.0 && e.is_finite()) {
                    return Err(input("--epsilon must be positive"));
                }
            }
            cfg.tscopf = TscopfOptions {
                variant: o.variant.into(),
                cleared: if o.closed_form { ClearedModel::ClosedForm } else { ClearedModel::Taylor(o.taylor_order) },
                epsilon: o.epsilon,
                ..TscopfOptions::default()
            };
            cfg.multistart = o.multistart;
        }
        Ok(cfg)
    }

    pub fn spec(&self) -> &ScenarioSpec {
        self.scenario.as_ref().expect("scenario flags are required by this command")
    }
}
