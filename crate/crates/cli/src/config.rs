//! Experiment configuration: a versioned JSON document, validated on load.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use asclt_core::covariance::CovarianceModel;
use asclt_core::hermite::TestFunction;
use asclt_core::sequences::{classify_regime, Regime};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_T_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    AscltFbm,
    AscltHermiteSub,
    AscltHermiteCrit,
    AscltGeneralF,
    NonGaussian,
    KernelsDecay,
    DeltaExactness,
    MalliavinBounds,
    SigmaLimits,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::AscltFbm,
        Experiment::AscltHermiteSub,
        Experiment::AscltHermiteCrit,
        Experiment::AscltGeneralF,
        Experiment::NonGaussian,
        Experiment::KernelsDecay,
        Experiment::DeltaExactness,
        Experiment::MalliavinBounds,
        Experiment::SigmaLimits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::AscltFbm => "asclt_fbm",
            Experiment::AscltHermiteSub => "asclt_hermite_sub",
            Experiment::AscltHermiteCrit => "asclt_hermite_crit",
            Experiment::AscltGeneralF => "asclt_general_f",
            Experiment::NonGaussian => "non_gaussian",
            Experiment::KernelsDecay => "kernels_decay",
            Experiment::DeltaExactness => "delta_exactness",
            Experiment::MalliavinBounds => "malliavin_bounds",
            Experiment::SigmaLimits => "sigma_limits",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::AscltFbm => "Theorem on B^H_k/k^H: ASCLT for scaled fractional Brownian motion",
            Experiment::AscltHermiteSub => "Breuer-Major subcritical regime: ASCLT for Hermite variations",
            Experiment::AscltHermiteCrit => "Breuer-Major critical regime H = 1 - 1/(2q): ASCLT with log normalization",
            Experiment::AscltGeneralF => "ASCLT for nonlinear functionals f(X_k) of short-memory noise",
            Experiment::NonGaussian => "Skorohod contrast: Z_n converges a.s. and the log-average stays random",
            Experiment::KernelsDecay => "Contraction norms of the chaos kernels f_n and their decay",
            Experiment::DeltaExactness => "Monte-Carlo E|Δ_n(t)|² against the exact Gaussian formula",
            Experiment::MalliavinBounds => "Variance identity, characteristic-function gap bound, Gebelein bound",
            Experiment::SigmaLimits => "Convergence of σ_n² to its limit (subcritical and critical)",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub master_seed: u64,
    pub replicates: usize,
}

/// Model parameters; unset fields take per-experiment defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<CovarianceModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<TestFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qmax: Option<u32>,
    /// Hurst index of the subcritical contrast in `non_gaussian`, or of the
    /// Gebelein check in `malliavin_bounds`.
    #[serde(default, rename = "contrast_H", skip_serializing_if = "Option::is_none")]
    pub contrast_hurst: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lag: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_final_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zn_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread_ratio_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_growth_max: Option<f64>,
}

/// The configuration file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Seeds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

/// A validated configuration with every default resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: CovarianceModel,
    pub q: u32,
    pub f: TestFunction,
    pub qmax: u32,
    #[serde(rename = "contrast_H")]
    pub contrast_hurst: f64,
    pub max_lag: usize,
    pub n_max: usize,
    pub n_grid: Vec<usize>,
    pub seeds: Seeds,
    pub t_grid: Vec<f64>,
    pub tolerances: ResolvedTolerances,
    /// Run settings; not part of the numerical identity of a run.
    #[serde(skip)]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTolerances {
    pub ks_final_max: f64,
    pub z_max: f64,
    pub sigma_rel: f64,
    pub zn_rel: f64,
    pub spread_ratio_min: f64,
    pub log_growth_max: f64,
}

fn dyadic(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|j| 1usize << j).collect()
}

fn fgn(h: f64) -> CovarianceModel {
    CovarianceModel::fgn(h).expect("default Hurst index is valid")
}

/// The configuration file produced by `list` for each experiment.
pub fn default_config(e: Experiment) -> ConfigFile {
    let (model, q, f, n_grid, reps, t_grid): (CovarianceModel, Option<u32>, Option<TestFunction>, Vec<usize>, usize, Vec<f64>) =
        match e {
            Experiment::AscltFbm => (fgn(0.5), None, None, vec![1 << 12, 1 << 16, 1 << 20], 20, DEFAULT_T_GRID.to_vec()),
            Experiment::AscltHermiteSub => (fgn(0.3), Some(2), None, vec![1 << 12, 1 << 16, 1 << 20], 20, DEFAULT_T_GRID.to_vec()),
            Experiment::AscltHermiteCrit => (fgn(0.75), Some(2), None, vec![1 << 12, 1 << 16, 1 << 20], 20, DEFAULT_T_GRID.to_vec()),
            Experiment::AscltGeneralF => (
                fgn(0.3),
                None,
                Some(TestFunction::Quartic),
                vec![1 << 12, 1 << 16, 1 << 20],
                20,
                DEFAULT_T_GRID.to_vec(),
            ),
            Experiment::NonGaussian => (fgn(0.9), Some(2), None, dyadic(4, 16), 50, vec![1.0]),
            Experiment::KernelsDecay => (fgn(0.3), Some(2), None, dyadic(6, 14), 1, vec![]),
            Experiment::DeltaExactness => (fgn(0.8), None, None, vec![16, 256, 1024], 5000, vec![0.5, 1.0, 2.0]),
            Experiment::MalliavinBounds => (fgn(0.3), Some(2), Some(TestFunction::Arctan), vec![1024], 2000, vec![0.5, 1.0, 2.0]),
            Experiment::SigmaLimits => (fgn(0.75), Some(2), None, vec![10_000, 100_000, 1_000_000], 1, vec![]),
        };
    ConfigFile {
        schema_version: SCHEMA_VERSION,
        experiment: e,
        params: Params {
            model: Some(model),
            q,
            f,
            ..Params::default()
        },
        n_max: n_grid.last().copied(),
        n_grid: Some(n_grid),
        seeds: Some(Seeds {
            master_seed: 1,
            replicates: reps,
        }),
        t_grid: if t_grid.is_empty() { None } else { Some(t_grid) },
        tolerances: Tolerances::default(),
        output_dir: None,
        workers: None,
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Parses JSON text; syntax and schema errors carry line and column.
pub fn parse(text: &str) -> Result<ConfigFile, CliError> {
    let file: ConfigFile = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(invalid(
            "schema_version",
            format!("expected {SCHEMA_VERSION}, found {}", file.schema_version),
        ));
    }
    Ok(file)
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    resolve(parse(&text)?)
}

/// Fills defaults and checks every field.
pub fn resolve(file: ConfigFile) -> Result<ExperimentConfig, CliError> {
    let e = file.experiment;
    let d = default_config(e);
    let dp = d.params;
    let p = file.params;
    let model = p.model.or(dp.model).expect("defaults carry a model");
    let q = p.q.or(dp.q).unwrap_or(1);
    let f = p.f.or(dp.f).unwrap_or(TestFunction::Arctan);
    let qmax = p.qmax.unwrap_or(20);
    let n_grid = file.n_grid.or(d.n_grid).expect("defaults carry a grid");
    if n_grid.is_empty() {
        return Err(invalid("n_grid", "must not be empty"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("n_grid", "must be strictly increasing"));
    }
    let n_max = file.n_max.unwrap_or(*n_grid.last().unwrap());
    if *n_grid.last().unwrap() > n_max {
        return Err(invalid("n_max", format!("{n_max} is below the largest grid point")));
    }
    let min_n = match e {
        Experiment::SigmaLimits | Experiment::KernelsDecay => 1,
        _ => 2,
    };
    if n_grid[0] < min_n {
        return Err(invalid("n_grid", format!("entries must be ≥ {min_n}")));
    }
    let seeds = file.seeds.or(d.seeds).expect("defaults carry seeds");
    if seeds.replicates == 0 {
        return Err(invalid("seeds.replicates", "must be ≥ 1"));
    }
    let t_grid = file.t_grid.or(d.t_grid).unwrap_or_default();
    if t_grid.iter().any(|t| !t.is_finite()) {
        return Err(invalid("t_grid", "entries must be finite"));
    }
    if let Some(0) = file.workers {
        return Err(invalid("workers", "must be ≥ 1"));
    }
    if qmax == 0 || qmax > asclt_core::hermite::MAX_EXPANSION_ORDER {
        return Err(invalid("params.qmax", format!("must be in 1..={}", asclt_core::hermite::MAX_EXPANSION_ORDER)));
    }
    let t = file.tolerances;
    let regime = classify_regime(&model, q.max(1));
    let tolerances = ResolvedTolerances {
        ks_final_max: t.ks_final_max.unwrap_or(0.25),
        z_max: t.z_max.unwrap_or(4.0),
        sigma_rel: t.sigma_rel.unwrap_or(if regime == Regime::Critical { 0.10 } else { 0.01 }),
        zn_rel: t.zn_rel.unwrap_or(0.02),
        spread_ratio_min: t.spread_ratio_min.unwrap_or(5.0),
        log_growth_max: t.log_growth_max.unwrap_or(0.1),
    };
    for (name, v) in [
        ("tolerances.ks_final_max", tolerances.ks_final_max),
        ("tolerances.z_max", tolerances.z_max),
        ("tolerances.sigma_rel", tolerances.sigma_rel),
        ("tolerances.zn_rel", tolerances.zn_rel),
        ("tolerances.spread_ratio_min", tolerances.spread_ratio_min),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(invalid(name, "must be a positive number"));
        }
    }
    let contrast_hurst = p.contrast_hurst.unwrap_or(match e {
        Experiment::MalliavinBounds => 0.7,
        _ => 0.3,
    });
    if !(contrast_hurst > 0.0 && contrast_hurst < 1.0) {
        return Err(invalid("params.contrast_H", "must lie in (0, 1)"));
    }
    let cfg = ExperimentConfig {
        experiment: e,
        model,
        q,
        f,
        qmax,
        contrast_hurst,
        max_lag: p.max_lag.unwrap_or(20),
        n_max,
        n_grid,
        seeds,
        t_grid,
        tolerances,
        output_dir: file.output_dir.unwrap_or_else(|| PathBuf::from(format!("out/{}", e.name()))),
        workers: file.workers,
    };
    check_regime(&cfg)?;
    Ok(cfg)
}

/// `H = 1 - 1/(2q)` checked as `2qH = 2q - 1`.
fn is_critical_hurst(h: f64, q: u32) -> bool {
    let two_q = 2.0 * q as f64;
    (two_q * h - (two_q - 1.0)).abs() <= 1e-12
}

fn check_regime(c: &ExperimentConfig) -> Result<(), CliError> {
    let hurst = c.model.hurst();
    let need_fgn = |field: &str| -> Result<f64, CliError> {
        hurst.ok_or_else(|| invalid(field, format!("{} needs an fgn model", c.experiment)))
    };
    let q = c.q;
    let needs_q = !matches!(c.experiment, Experiment::AscltFbm | Experiment::DeltaExactness | Experiment::AscltGeneralF);
    if needs_q && q < 2 {
        return Err(invalid("params.q", format!("{} needs q ≥ 2", c.experiment)));
    }
    let regime = classify_regime(&c.model, q.max(1));
    match c.experiment {
        Experiment::AscltFbm | Experiment::DeltaExactness => {
            if !matches!(c.model, CovarianceModel::Iid) {
                need_fgn("params.model")?;
            }
        }
        Experiment::AscltHermiteSub => {
            if regime != Regime::Subcritical {
                return Err(invalid("params.model", format!("{} with q = {q} is not subcritical", c.model)));
            }
        }
        Experiment::AscltHermiteCrit => {
            let h = need_fgn("params.model")?;
            if !is_critical_hurst(h, q) {
                return Err(invalid(
                    "params.model.H",
                    format!("critical regime needs H = 1 - 1/(2q) = {}, got {h}", 1.0 - 0.5 / q as f64),
                ));
            }
        }
        Experiment::AscltGeneralF => {
            if !c.model.is_power_summable(1.0) {
                return Err(invalid("params.model", format!("{} does not have summable covariances", c.model)));
            }
        }
        Experiment::NonGaussian => {
            need_fgn("params.model")?;
            if regime != Regime::Supercritical {
                return Err(invalid("params.model", format!("{} with q = {q} is not supercritical", c.model)));
            }
            if c.n_max.trailing_zeros() > asclt_core::sim::MAX_GRID_LEVEL || !c.n_max.is_power_of_two() {
                return Err(invalid("n_max", "must be a power of two no larger than 2^24"));
            }
            if !c.n_grid.iter().all(|n| n.is_power_of_two()) {
                return Err(invalid("n_grid", "entries must be powers of two"));
            }
            if classify_regime(&fgn(c.contrast_hurst), q) != Regime::Subcritical {
                return Err(invalid("params.contrast_H", "the contrast must be subcritical"));
            }
        }
        Experiment::SigmaLimits => {
            if regime == Regime::Supercritical {
                return Err(invalid("params.model", "σ_n² has no limit in the supercritical regime"));
            }
        }
        Experiment::KernelsDecay | Experiment::MalliavinBounds => {}
    }
    if c.experiment == Experiment::MalliavinBounds && regime == Regime::Supercritical {
        return Err(invalid("params.model", "Malliavin bounds need a Gaussian limit"));
    }
    Ok(())
}
