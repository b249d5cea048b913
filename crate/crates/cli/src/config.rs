//! TOML run configuration.
//!
//! A config holds the blocks a task needs; unknown keys are rejected. Sampling
//! sets use 1-based component labels. File references (`sigma_csv`,
//! `mesh_csv`) resolve relative to the config file's directory.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use nalgebra::DMatrix;
use serde::Deserialize;
use srdf_kit::gmf::{FieldModel, FieldSamplingSet, Kernel, PlacementObjective, PlacementOptions, TabulatedKernel, DEFAULT_QUAD_PANELS};
use srdf_kit::setopt::SetObjective;
use srdf_kit::simulate::SimConfig;
use srdf_kit::srdf::covariance_from_correlation;
use srdf_kit::universal::{CovTemplate, ParamFamily, Prior, DEFAULT_GRID_RES};
use srdf_kit::{validate_covariance, CovarianceModel, SamplingSet};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    /// SRDf curve of a finite source over a distortion grid.
    Srdf,
    /// Distortion-rate curve over a rate grid.
    Distrate,
    /// SRDf curve of a Gaussian memoryless field.
    GmfSrdf,
    /// Exhaustive search for the best k-subset.
    OptimizeSet,
    /// Sampling-point placement on [0, 1].
    Place,
    /// Bayesian universal SRDf curve.
    UsrdfBayes,
    /// NonBayesian universal SRDf curve.
    UsrdfNonbayes,
    /// Monte Carlo run of the two-step code.
    Simulate,
    /// Monte Carlo run of the universal two-step code.
    Usim,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Srdf => "srdf",
            Task::Distrate => "distrate",
            Task::GmfSrdf => "gmf-srdf",
            Task::OptimizeSet => "optimize-set",
            Task::Place => "place",
            Task::UsrdfBayes => "usrdf-bayes",
            Task::UsrdfNonbayes => "usrdf-nonbayes",
            Task::Simulate => "simulate",
            Task::Usim => "usim",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional; must agree with the task given on the command line.
    pub task: Option<String>,
    pub seed: Option<u64>,
    pub model: Option<ModelSection>,
    pub sampling: Option<SamplingSection>,
    pub grid: Option<GridSection>,
    pub field: Option<FieldSection>,
    pub family: Option<FamilySection>,
    pub placement: Option<PlacementSection>,
    pub setopt: Option<SetoptSection>,
    pub sim: Option<SimSection>,
    pub output: Option<OutputSection>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Covariance rows.
    pub sigma: Option<Vec<Vec<f64>>>,
    /// CSV file with one covariance row per line.
    pub sigma_csv: Option<String>,
    /// Alternative parameterization: standard deviations and correlations.
    pub std_devs: Option<Vec<f64>>,
    pub corr: Option<Vec<Vec<f64>>>,
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    /// 1-based component labels.
    pub set: Vec<usize>,
}

/// Evenly spaced grid `from..=to` with `count` points, or explicit `values`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub count: Option<usize>,
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    /// `gauss-markov` or `tabulated`.
    pub kernel: String,
    pub p: Option<f64>,
    pub mesh_csv: Option<String>,
    pub quad_panels: Option<usize>,
    /// Sampling points in [0, 1].
    pub points: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    /// `example3` or `general`.
    pub template: String,
    pub sigma2: Option<f64>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub base: Option<Vec<Vec<f64>>>,
    pub terms: Option<Vec<Vec<Vec<f64>>>>,
    pub boxes: Option<Vec<[f64; 2]>>,
    /// `uniform` (default), `none` or `density`.
    pub prior: Option<String>,
    pub prior_density: Option<Vec<f64>>,
    pub grid_res: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSection {
    pub k: usize,
    /// `min-delta` (default) or `min-rate`.
    pub objective: Option<String>,
    pub delta: Option<f64>,
    pub restarts: Option<usize>,
    pub pin_endpoints: Option<bool>,
    pub max_sweeps: Option<usize>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetoptSection {
    pub k: usize,
    /// `min-delta-min` (default) or `min-rate`.
    pub objective: Option<String>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n: Option<usize>,
    pub rate_bits: Option<f64>,
    pub train_blocks: Option<usize>,
    pub eval_blocks: Option<usize>,
    pub lbg_iters: Option<usize>,
    pub grid_delta: Option<f64>,
    pub estimation_len: Option<usize>,
    /// Also write per-block distortions as CSV.
    pub trace: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    /// `csv` (tables plus JSON summary, default) or `json` (JSON only).
    pub format: Option<String>,
    /// Also write the pointwise MMSE profile for field tasks.
    pub profile: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let m = rows.len();
    if m == 0 {
        return Err(CliError::config(format!("{what} is empty")));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != m) {
        return Err(CliError::config(format!(
            "{what} must be square: row {} has {} entries, expected {m}",
            bad + 1,
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

/// Reads a headerless CSV of numeric rows; `#` starts a comment line.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let io = |e: &dyn std::fmt::Display| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| io(&e))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| io(&e))?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| CliError::config(format!("{}: not a number: {f:?}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string().trim_end()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    fn resolve(&self, file: &str) -> PathBuf {
        self.base_dir.join(file)
    }

    pub fn check_task(&self, task: Task) -> Result<()> {
        match &self.task {
            Some(t) if t != task.name() => Err(CliError::config(format!(
                "config is for task {t:?} but {:?} was requested",
                task.name()
            ))),
            _ => Ok(()),
        }
    }

    pub fn covariance(&self) -> Result<CovarianceModel> {
        let section = self.model.as_ref().ok_or_else(|| CliError::Missing("model.sigma".into()))?;
        let sigma = match (&section.sigma, &section.sigma_csv, &section.std_devs) {
            (Some(rows), None, None) => matrix_from_rows(rows, "model.sigma")?,
            (None, Some(file), None) => matrix_from_rows(&read_matrix_csv(&self.resolve(file))?, "model.sigma_csv")?,
            (None, None, Some(sd)) => {
                let corr = section.corr.as_ref().ok_or_else(|| CliError::Missing("model.corr".into()))?;
                let corr = matrix_from_rows(corr, "model.corr")?;
                if corr.nrows() != sd.len() {
                    return Err(CliError::config("model.corr and model.std_devs differ in size"));
                }
                covariance_from_correlation(sd, &corr)
            }
            (None, None, None) => return Err(CliError::Missing("model.sigma".into())),
            _ => {
                return Err(CliError::config(
                    "give exactly one of model.sigma, model.sigma_csv, model.std_devs",
                ))
            }
        };
        let model = validate_covariance(&sigma)?;
        match &section.labels {
            Some(labels) => Ok(model.with_labels(labels.clone())?),
            None => Ok(model),
        }
    }

    pub fn sampling_set(&self, dim: usize) -> Result<SamplingSet> {
        let section = self.sampling.as_ref().ok_or_else(|| CliError::Missing("sampling.set".into()))?;
        Ok(SamplingSet::from_one_based(&section.set, dim)?)
    }

    fn grid_values(&self, default: (f64, f64, usize), name: &str) -> Result<Vec<f64>> {
        let g = self.grid.clone().unwrap_or_default();
        if let Some(values) = g.values {
            if g.from.is_some() || g.to.is_some() || g.count.is_some() {
                return Err(CliError::config("grid: give either values or from/to/count"));
            }
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(CliError::config("grid.values must be finite and nonempty"));
            }
            return Ok(values);
        }
        let count = g.count.unwrap_or(default.2);
        if count == 0 {
            return Err(CliError::config("grid.count must be positive"));
        }
        let (from, to) = (g.from.unwrap_or(default.0), g.to.unwrap_or(default.1));
        if !(from.is_finite() && to.is_finite()) || from > to {
            return Err(CliError::config(format!("invalid {name} grid [{from}, {to}]")));
        }
        if count == 1 {
            return Ok(vec![from]);
        }
        Ok((0..count)
            .map(|i| from + (to - from) * i as f64 / (count - 1) as f64)
            .collect())
    }

    /// Distortion grid; by default 50 points evenly spaced over `(lo, hi]`.
    pub fn delta_grid(&self, lo: f64, hi: f64) -> Result<Vec<f64>> {
        let has_range = self
            .grid
            .as_ref()
            .is_some_and(|g| g.values.is_some() || g.from.is_some());
        if has_range {
            return self.grid_values((lo, hi, 50), "distortion");
        }
        let count = self.grid.as_ref().and_then(|g| g.count).unwrap_or(50);
        let to = self.grid.as_ref().and_then(|g| g.to).unwrap_or(hi);
        if count == 0 || !(to > lo) {
            return Err(CliError::config("distortion grid is empty or below the floor"));
        }
        Ok((1..=count).map(|i| lo + (to - lo) * i as f64 / count as f64).collect())
    }

    /// Rate grid in bits; 0 to 8 in steps of 0.25 by default.
    pub fn rate_grid(&self) -> Result<Vec<f64>> {
        let grid = self.grid_values((0.0, 8.0, 33), "rate")?;
        if grid.iter().any(|r| *r < 0.0) {
            return Err(CliError::config("rates must be nonnegative"));
        }
        Ok(grid)
    }

    pub fn field_model(&self) -> Result<FieldModel> {
        let f = self.field.as_ref().ok_or_else(|| CliError::Missing("field.kernel".into()))?;
        let kernel = match f.kernel.as_str() {
            "gauss-markov" => {
                let p = f.p.ok_or_else(|| CliError::Missing("field.p".into()))?;
                Kernel::gauss_markov(p)?
            }
            "tabulated" => {
                let file = f.mesh_csv.as_ref().ok_or_else(|| CliError::Missing("field.mesh_csv".into()))?;
                let path = self.resolve(file);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                Kernel::Tabulated(TabulatedKernel::from_csv_str(&text)?)
            }
            other => {
                return Err(CliError::config(format!(
                    "field.kernel must be \"gauss-markov\" or \"tabulated\", got {other:?}"
                )))
            }
        };
        Ok(FieldModel::new(kernel, f.quad_panels.unwrap_or(DEFAULT_QUAD_PANELS))?)
    }

    pub fn field_points(&self) -> Result<FieldSamplingSet> {
        let points = self
            .field
            .as_ref()
            .and_then(|f| f.points.clone())
            .ok_or_else(|| CliError::Missing("field.points".into()))?;
        Ok(FieldSamplingSet::new(points)?)
    }

    pub fn family(&self) -> Result<ParamFamily> {
        let f = self.family.as_ref().ok_or_else(|| CliError::Missing("family.template".into()))?;
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| CliError::Missing(format!("family.{key}")));
        let grid_res = f.grid_res.unwrap_or(DEFAULT_GRID_RES);
        let prior = match f.prior.as_deref().unwrap_or("uniform") {
            "uniform" => Some(Prior::Uniform),
            "none" => None,
            "density" => Some(Prior::Density(
                f.prior_density
                    .clone()
                    .ok_or_else(|| CliError::Missing("family.prior_density".into()))?,
            )),
            other => {
                return Err(CliError::config(format!(
                    "family.prior must be \"uniform\", \"none\" or \"density\", got {other:?}"
                )))
            }
        };
        let family = match f.template.as_str() {
            "example3" => ParamFamily::example3(
                need(f.sigma2, "sigma2")?,
                need(f.r_min, "r_min")?,
                need(f.r_max, "r_max")?,
                prior,
                grid_res,
            )?,
            "general" => {
                let base = f.base.as_ref().ok_or_else(|| CliError::Missing("family.base".into()))?;
                let terms = f.terms.as_ref().ok_or_else(|| CliError::Missing("family.terms".into()))?;
                let boxes = f.boxes.as_ref().ok_or_else(|| CliError::Missing("family.boxes".into()))?;
                let terms = terms
                    .iter()
                    .map(|t| matrix_from_rows(t, "family.terms"))
                    .collect::<Result<Vec<_>>>()?;
                ParamFamily::new(
                    boxes.iter().map(|b| (b[0], b[1])).collect(),
                    CovTemplate::GeneralCorr {
                        base: matrix_from_rows(base, "family.base")?,
                        terms,
                    },
                    prior,
                    grid_res,
                )?
            }
            other => {
                return Err(CliError::config(format!(
                    "family.template must be \"example3\" or \"general\", got {other:?}"
                )))
            }
        };
        Ok(family)
    }

    pub fn set_objective(&self) -> Result<(usize, SetObjective)> {
        let s = self.setopt.as_ref().ok_or_else(|| CliError::Missing("setopt.k".into()))?;
        let objective = match s.objective.as_deref().unwrap_or("min-delta-min") {
            "min-delta-min" => SetObjective::MinDeltaMin,
            "min-rate" => SetObjective::MinRateAt {
                delta: s.delta.ok_or_else(|| CliError::Missing("setopt.delta".into()))?,
            },
            other => {
                return Err(CliError::config(format!(
                    "setopt.objective must be \"min-delta-min\" or \"min-rate\", got {other:?}"
                )))
            }
        };
        Ok((s.k, objective))
    }

    /// Set-selection objective as spelled in the config.
    pub fn set_objective_name(&self) -> &str {
        self.setopt.as_ref().and_then(|s| s.objective.as_deref()).unwrap_or("min-delta-min")
    }

    /// Placement objective as spelled in the config.
    pub fn placement_objective_name(&self) -> &str {
        self.placement.as_ref().and_then(|p| p.objective.as_deref()).unwrap_or("min-delta")
    }

    pub fn placement(&self, seed: u64) -> Result<(usize, PlacementObjective, PlacementOptions)> {
        let p = self.placement.as_ref().ok_or_else(|| CliError::Missing("placement.k".into()))?;
        let objective = match p.objective.as_deref().unwrap_or("min-delta") {
            "min-delta" => PlacementObjective::MinDelta,
            "min-rate" => PlacementObjective::MinRateAt {
                delta: p.delta.ok_or_else(|| CliError::Missing("placement.delta".into()))?,
            },
            other => {
                return Err(CliError::config(format!(
                    "placement.objective must be \"min-delta\" or \"min-rate\", got {other:?}"
                )))
            }
        };
        let d = PlacementOptions::default();
        let opts = PlacementOptions {
            restarts: p.restarts.unwrap_or(d.restarts),
            pin_endpoints: p.pin_endpoints.unwrap_or(d.pin_endpoints),
            seed,
            max_sweeps: p.max_sweeps.unwrap_or(d.max_sweeps),
            tolerance: p.tolerance.unwrap_or(d.tolerance),
        };
        Ok((p.k, objective, opts))
    }

    pub fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        let s = self.sim.as_ref().ok_or_else(|| CliError::Missing("sim.rate_bits".into()))?;
        let d = SimConfig::default();
        let cfg = SimConfig {
            n: s.n.unwrap_or(d.n),
            rate_bits: s.rate_bits.ok_or_else(|| CliError::Missing("sim.rate_bits".into()))?,
            train_blocks: s.train_blocks.unwrap_or(d.train_blocks),
            eval_blocks: s.eval_blocks.unwrap_or(d.eval_blocks),
            seed,
            lbg_iters: s.lbg_iters.unwrap_or(d.lbg_iters),
            grid_delta: s.grid_delta.unwrap_or(d.grid_delta),
            estimation_len: s.estimation_len.unwrap_or(d.estimation_len),
            trace: s.trace.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn output_format(&self) -> Result<OutputFormat> {
        match self.output.as_ref().and_then(|o| o.format.as_deref()).unwrap_or("csv") {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(CliError::config(format!(
                "output.format must be \"csv\" or \"json\", got {other:?}"
            ))),
        }
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output.as_ref().and_then(|o| o.dir.as_ref()).map(|d| self.resolve(d))
    }

    pub fn want_profile(&self) -> bool {
        self.output.as_ref().and_then(|o| o.profile).unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_toml_str(text, Path::new("."))
    }

    #[test]
    fn missing_model_reports_sigma() {
        let cfg = parse("[sampling]\nset = [1]\n").unwrap();
        let err = cfg.covariance().unwrap_err();
        assert_eq!(err.to_string(), "model.sigma required");
        assert_eq!(err.exit_code(), 2);
        let cfg = parse("[model]\nlabels = [\"a\"]\n").unwrap();
        assert_eq!(cfg.covariance().unwrap_err().to_string(), "model.sigma required");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse("[model]\nsigmaa = [[1.0]]\n").is_err());
        assert!(parse("bogus = 1\n").is_err());
    }

    #[test]
    fn correlation_form() {
        let cfg = parse("[model]\nstd_devs = [1.0, 2.0]\ncorr = [[1.0, 0.5], [0.5, 1.0]]\n").unwrap();
        let m = cfg.covariance().unwrap();
        assert_eq!(m.sigma()[(0, 1)], 1.0);
        assert_eq!(m.sigma()[(1, 1)], 4.0);
    }

    #[test]
    fn grids() {
        let cfg = parse("").unwrap();
        let g = cfg.delta_grid(1.0, 2.0).unwrap();
        assert_eq!(g.len(), 50);
        assert!(g[0] > 1.0 && g[49] == 2.0);
        let cfg = parse("[grid]\nfrom = 0.0\nto = 1.0\ncount = 3\n").unwrap();
        assert_eq!(cfg.rate_grid().unwrap(), vec![0.0, 0.5, 1.0]);
        let cfg = parse("[grid]\nvalues = [0.5]\ncount = 3\n").unwrap();
        assert!(cfg.rate_grid().is_err());
    }

    #[test]
    fn task_mismatch() {
        let cfg = parse("task = \"srdf\"\n").unwrap();
        assert!(cfg.check_task(Task::Srdf).is_ok());
        assert!(cfg.check_task(Task::Simulate).is_err());
    }
}
