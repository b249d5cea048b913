//! Task dispatch. Every task renders its artifacts in memory first, so the
//! output is a pure function of the config and seed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use srdf_kit::gmf::{analyze_field, field_mmse_profile, optimize_placement, FieldAnalysis, FieldModel, FieldSamplingSet};
use srdf_kit::setopt::best_fixed_set;
use srdf_kit::simulate::{two_step_code, universal_two_step, SimReport};
use srdf_kit::universal::{project_family, BayesProblem, NonBayesProblem};
use srdf_kit::srdf::{max_distortion, weight_matrix};
use srdf_kit::{partition, srdf_curve, Error as CoreError};

use crate::config::{OutputFormat, RunConfig, Task};
use crate::error::{CliError, Result};
use crate::format::{g9, to_json, Table};

pub const TOOL: &str = "srdf-kit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SUMMARY_FILE: &str = "summary.json";

/// Machine-readable summary written next to every run's tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub tool: String,
    pub version: String,
    pub task: String,
    pub seed: u64,
    /// Distortion floor in variance units.
    pub delta_min: f64,
    /// Rate-zero distortion in variance units.
    pub delta_max: f64,
    /// One spectrum per law: the source, each atom, or each family member.
    pub eigenvalues: Vec<Vec<f64>>,
    /// 1-based sampled components, for finite sources.
    pub sampling_set: Option<Vec<usize>>,
    /// Sampling points in [0, 1], for fields.
    pub sampling_points: Option<Vec<f64>>,
    /// Other artifacts written by the run.
    pub files: Vec<String>,
    #[serde(default)]
    pub details: BTreeMap<String, Value>,
}

impl Summary {
    /// Output contract checked when a summary is read back.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::config(format!("summary: {m}")));
        if self.tool != TOOL {
            return bad(format!("tool is {:?}", self.tool));
        }
        if self.version.is_empty() {
            return bad("missing version".into());
        }
        if !<Task as clap::ValueEnum>::value_variants().iter().any(|t| t.name() == self.task) {
            return bad(format!("unknown task {:?}", self.task));
        }
        if !(self.delta_min.is_finite() && self.delta_max.is_finite()) {
            return bad("distortion bounds must be finite".into());
        }
        if self.delta_min < 0.0 || self.delta_min > self.delta_max {
            return bad(format!("need 0 <= delta_min <= delta_max, got {} and {}", self.delta_min, self.delta_max));
        }
        if self.eigenvalues.is_empty() || self.eigenvalues.iter().flatten().any(|l| !(*l >= 0.0)) {
            return bad("eigenvalues must be nonempty and nonnegative".into());
        }
        if let Some(set) = &self.sampling_set {
            if set.is_empty() || set.iter().any(|&i| i == 0) || set.windows(2).any(|w| w[0] >= w[1]) {
                return bad("sampling_set must be increasing 1-based labels".into());
            }
        }
        if let Some(points) = &self.sampling_points {
            if points.is_empty() || points.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad("sampling_points must lie in [0, 1]".into());
            }
        }
        if self.files.iter().any(|f| f.is_empty() || f.contains('/') || f == SUMMARY_FILE) {
            return bad("invalid file list".into());
        }
        Ok(())
    }
}

/// Parses and validates a summary document.
pub fn parse_summary(text: &str) -> Result<Summary> {
    let s: Summary = serde_json::from_str(text).map_err(|e| CliError::config(format!("summary: {e}")))?;
    s.validate()?;
    Ok(s)
}

/// Named text files produced by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
}

impl Artifacts {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let io = |p: &Path, e: std::io::Error| CliError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for (name, content) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(|e| io(&path, e))?;
        }
        Ok(())
    }
}

struct Builder {
    format: OutputFormat,
    tables: Vec<(String, String)>,
    /// Tables as JSON objects, for JSON-only output.
    json_tables: BTreeMap<String, Value>,
    documents: Vec<(String, String)>,
}

impl Builder {
    fn new(format: OutputFormat) -> Self {
        Self {
            format,
            tables: Vec::new(),
            json_tables: BTreeMap::new(),
            documents: Vec::new(),
        }
    }

    fn table(&mut self, name: &str, table: Table) -> Result<()> {
        match self.format {
            OutputFormat::Csv => self.tables.push((format!("{name}.csv"), table.to_csv()?)),
            OutputFormat::Json => {
                let rows: Vec<Value> = table
                    .rows
                    .iter()
                    .map(|r| Value::Array(r.iter().map(|c| Value::String(c.clone())).collect()))
                    .collect();
                self.json_tables
                    .insert(name.to_string(), json!({ "columns": table.header, "rows": rows }));
            }
        }
        Ok(())
    }

    fn document(&mut self, name: &str, body: String) {
        self.documents.push((name.to_string(), body));
    }

    fn finish(mut self, mut summary: Summary) -> Result<Artifacts> {
        if self.format == OutputFormat::Json && !self.json_tables.is_empty() {
            summary
                .details
                .insert("tables".into(), Value::Object(self.json_tables.into_iter().collect()));
        }
        let mut files = self.tables;
        files.append(&mut self.documents);
        summary.files = files.iter().map(|(n, _)| n.clone()).collect();
        let body = to_json(&summary)?;
        // The rounded document must satisfy the same contract readers check.
        parse_summary(&body)?;
        files.push((SUMMARY_FILE.to_string(), body));
        Ok(Artifacts { files })
    }
}

fn summary(task: Task, seed: u64, delta_min: f64, delta_max: f64, eigenvalues: Vec<Vec<f64>>) -> Summary {
    Summary {
        tool: TOOL.into(),
        version: VERSION.into(),
        task: task.name().into(),
        seed,
        delta_min,
        delta_max,
        eigenvalues,
        sampling_set: None,
        sampling_points: None,
        files: Vec::new(),
        details: BTreeMap::new(),
    }
}

/// Rate at `delta`, or `+∞` below the floor.
fn rate_or_inf(result: srdf_kit::Result<f64>) -> srdf_kit::Result<f64> {
    match result {
        Err(CoreError::InfeasibleDistortion { .. }) => Ok(f64::INFINITY),
        other => other,
    }
}

fn curve_table(grid: &[f64], rate: impl Fn(f64) -> srdf_kit::Result<f64>) -> Result<Table> {
    let mut t = Table::new(vec!["delta_variance", "rate_bits"]);
    for &d in grid {
        t.push(vec![g9(d), g9(rate_or_inf(rate(d))?)]);
    }
    Ok(t)
}

/// Entries below this fraction of the largest magnitude are quadrature or
/// factorization noise and are written as exact zeros.
const MATRIX_NOISE_FLOOR: f64 = 1e-11;

fn matrix_json(m: &nalgebra::DMatrix<f64>) -> Value {
    let floor = MATRIX_NOISE_FLOOR * m.amax();
    let entry = |x: f64| if x.abs() < floor { 0.0 } else { x };
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(entry(m[(i, j)]))).collect()))
            .collect(),
    )
}

/// Runs `task` and returns its artifacts without touching the filesystem.
pub fn run(task: Task, cfg: &RunConfig, seed: u64) -> Result<Artifacts> {
    cfg.check_task(task)?;
    let mut out = Builder::new(cfg.output_format()?);
    let summary = match task {
        Task::Srdf | Task::Distrate => {
            let model = cfg.covariance()?;
            let set = cfg.sampling_set(model.dim())?;
            let curve = srdf_curve(&model, &set)?;
            let trace = max_distortion(&model);
            if task == Task::Srdf {
                let grid = cfg.delta_grid(curve.delta_min, trace)?;
                out.table("srdf_curve", curve_table(&grid, |d| curve.rate(d).map(|p| p.rate_bits))?)?;
            } else {
                let mut t = Table::new(vec!["rate_bits", "delta_variance"]);
                for r in cfg.rate_grid()? {
                    t.push(vec![g9(r), g9(curve.distortion(r)?)]);
                }
                out.table("distortion_rate", t)?;
            }
            let mut s = summary(task, seed, curve.delta_min, trace, vec![curve.lambdas.clone()]);
            s.sampling_set = Some(set.one_based());
            let bp = partition(&model, &set)?;
            s.details
                .insert("weight_matrix".into(), matrix_json(weight_matrix(&bp)?.matrix()));
            if !model.labels().is_empty() {
                s.details.insert("labels".into(), json!(model.labels()));
            }
            s
        }
        Task::GmfSrdf => {
            let field = cfg.field_model()?;
            let points = cfg.field_points()?;
            let analysis = analyze_field(&field, &points)?;
            let curve = analysis.curve()?;
            let grid = cfg.delta_grid(analysis.delta_min, analysis.delta_max)?;
            out.table("gmf_srdf_curve", curve_table(&grid, |d| curve.rate(d).map(|p| p.rate_bits))?)?;
            field_summary(task, seed, &field, &points, &analysis, cfg, &mut out)?
        }
        Task::Place => {
            let field = cfg.field_model()?;
            let (k, objective, opts) = cfg.placement(seed)?;
            let result = optimize_placement(&field, k, objective, &opts)?;
            let mut t = Table::new(vec!["index", "point"]);
            for (i, p) in result.points.points().iter().enumerate() {
                t.push(vec![(i + 1).to_string(), g9(*p)]);
            }
            out.table("placement", t)?;
            let analysis = analyze_field(&field, &result.points)?;
            let mut s = field_summary(task, seed, &field, &result.points, &analysis, cfg, &mut out)?;
            s.details.insert("objective".into(), json!(cfg.placement_objective_name()));
            s.details.insert("objective_value".into(), json!(result.objective));
            s.details.insert("best_restart".into(), json!(result.restart));
            s
        }
        Task::OptimizeSet => {
            let model = cfg.covariance()?;
            let (k, objective) = cfg.set_objective()?;
            let res = best_fixed_set(&model, k, objective)?;
            let mut t = Table::new(vec!["subset", "delta_min_variance", "rate_bits"]);
            for row in &res.table {
                let rate = row.rate_bits.map(g9).unwrap_or_default();
                t.push(vec![row.set.to_string(), g9(row.delta_min), rate]);
            }
            out.table("setopt_table", t)?;
            let curve = srdf_curve(&model, &res.best)?;
            let mut s = summary(task, seed, curve.delta_min, max_distortion(&model), vec![curve.lambdas]);
            s.sampling_set = Some(res.best.one_based());
            s.details.insert("objective".into(), json!(cfg.set_objective_name()));
            s.details.insert("objective_value".into(), json!(res.objective));
            s
        }
        Task::UsrdfBayes => {
            let family = cfg.family()?;
            let set = cfg.sampling_set(family.dim())?;
            let part = project_family(&family, &set)?;
            let problem = BayesProblem::new(&part)?;
            let grid = cfg.delta_grid(problem.delta_min(), problem.delta_max())?;
            out.table("usrdf_bayes_curve", curve_table(&grid, |d| problem.solve(d).map(|p| p.rate_bits))?)?;
            let mut atoms = Table::new(vec!["atom", "weight", "members", "delta_min_variance", "delta_max_variance"]);
            for (i, (a, w)) in problem.atoms.iter().zip(&problem.weights).enumerate() {
                atoms.push(vec![
                    (i + 1).to_string(),
                    g9(*w),
                    part.atoms[i].members.len().to_string(),
                    g9(a.delta_min),
                    g9(a.delta_max),
                ]);
            }
            out.table("bayes_atoms", atoms)?;
            let spectra = problem.atoms.iter().map(|a| a.lambdas.clone()).collect();
            let mut s = summary(task, seed, problem.delta_min(), problem.delta_max(), spectra);
            s.sampling_set = Some(set.one_based());
            s.details.insert("atoms".into(), json!(part.atoms.len()));
            s.details.insert("grid_nodes".into(), json!(part.nodes.len()));
            s
        }
        Task::UsrdfNonbayes => {
            let family = cfg.family()?;
            let set = cfg.sampling_set(family.dim())?;
            let part = project_family(&family, &set)?;
            let problem = NonBayesProblem::new(&part)?;
            let grid = cfg.delta_grid(problem.delta_min(), problem.delta_max())?;
            out.table("usrdf_nonbayes_curve", curve_table(&grid, |d| problem.solve(d).map(|p| p.rate_bits))?)?;
            let (spectra, method) = match &problem {
                NonBayesProblem::Singletons { curves } => {
                    (curves.iter().map(|(c, _)| c.lambdas.clone()).collect(), "singleton-atoms")
                }
                NonBayesProblem::SymmetricPair { sigma2, r2_min } => {
                    (vec![vec![sigma2 * (1.0 + r2_min)]], "symmetric-pair")
                }
            };
            let mut s = summary(task, seed, problem.delta_min(), problem.delta_max(), spectra);
            s.sampling_set = Some(set.one_based());
            s.details.insert("method".into(), json!(method));
            s.details.insert("atoms".into(), json!(part.atoms.len()));
            s
        }
        Task::Simulate => {
            let model = cfg.covariance()?;
            let set = cfg.sampling_set(model.dim())?;
            let sim = cfg.sim_config(seed)?;
            let report = two_step_code(&model, &set, &sim)?;
            let curve = srdf_curve(&model, &set)?;
            sim_outputs(&report, &mut out)?;
            let mut s = summary(task, seed, curve.delta_min, max_distortion(&model), vec![curve.lambdas]);
            s.sampling_set = Some(set.one_based());
            s
        }
        Task::Usim => {
            let family = cfg.family()?;
            let set = cfg.sampling_set(family.dim())?;
            let sim = cfg.sim_config(seed)?;
            let report = universal_two_step(&family, &set, &sim)?;
            let part = project_family(&family, &set)?;
            let problem = BayesProblem::new(&part)?;
            sim_outputs(&report, &mut out)?;
            let spectra = problem.atoms.iter().map(|a| a.lambdas.clone()).collect();
            let mut s = summary(task, seed, problem.delta_min(), problem.delta_max(), spectra);
            s.sampling_set = Some(set.one_based());
            s
        }
    };
    out.finish(summary)
}

fn field_summary(
    task: Task,
    seed: u64,
    field: &FieldModel,
    points: &FieldSamplingSet,
    analysis: &FieldAnalysis,
    cfg: &RunConfig,
    out: &mut Builder,
) -> Result<Summary> {
    if cfg.want_profile() {
        let mut t = Table::new(vec!["u", "mmse_variance"]);
        for (u, v) in field_mmse_profile(field, points)? {
            t.push(vec![g9(u), g9(v.max(0.0))]);
        }
        out.table("gmf_mmse_profile", t)?;
    }
    let mut s = summary(task, seed, analysis.delta_min, analysis.delta_max, vec![analysis.lambdas.clone()]);
    s.sampling_points = Some(points.points().to_vec());
    s.details.insert("weight_matrix".into(), matrix_json(&analysis.weight));
    s.details.insert("quad_panels".into(), json!(field.quad_panels));
    Ok(s)
}

fn sim_outputs(report: &SimReport, out: &mut Builder) -> Result<()> {
    out.document("sim_report.json", to_json(report)?);
    if !report.trace.is_empty() {
        let mut t = Table::new(vec!["block", "total_variance", "weighted_variance", "lift_variance"]);
        for b in &report.trace {
            t.push(vec![b.block.to_string(), g9(b.total), g9(b.weighted), g9(b.lift)]);
        }
        out.table("sim_trace", t)?;
    }
    Ok(())
}
