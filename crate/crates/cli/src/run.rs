//! Scenario execution and artifact emission.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stretchlab::diagnostics::{
    evolve_line_partial, fit_blowup_exponent, stretch_supremum, weak_form_residual, BumpTestFunction, LineSpec,
    QuadratureSpec,
};
use stretchlab::geometry::vector_to_cylindrical;
use stretchlab::montecarlo::{
    bootstrap_median_ci, map_replicates, records_from, suppression_ratio, LineArcLengthMetric, StretchSupremumMetric,
    WeakResidualMetric,
};
use stretchlab::transport::PullbackReconstructor;
use stretchlab::{
    blowup_envelope, holder_velocity, integrate_flow, reconstruct_grid, run_ensemble, sample_brownian, BrownianPath,
    CylPoint, EnsembleSpec, EnsembleStats, ExactSolution, GridSpec, InitialField, PullbackOptions, ReplicateMetric,
    Vec3, VelocityField, ZeroField,
};
use thiserror::Error;

use crate::config::{fmt_f64, ConfigError, Experiment, FieldKind, MetricKind, Scenario};
use crate::svg::{emit_svg, Style};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerical(#[from] stretchlab::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {message}")]
    Replay { path: PathBuf, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Replay { .. } => 2,
            RunError::Numerical(_) => 3,
            RunError::Io { .. } | RunError::Csv(_) => 1,
        }
    }

    /// Machine-readable rendering for stderr.
    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        let kind = match self {
            RunError::Config(ConfigError::Parse { line, key, .. }) => {
                v["line"] = json!(line);
                v["key"] = json!(key);
                "parse_error"
            }
            RunError::Config(ConfigError::Validation { key, constraint }) => {
                v["key"] = json!(key);
                v["constraint"] = json!(constraint);
                "validation_error"
            }
            RunError::Numerical(e) => e.kind(),
            RunError::Io { .. } | RunError::Csv(_) => "io_error",
            RunError::Replay { .. } => "replay_error",
        };
        v["error"] = json!(kind);
        v
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Column set of one CSV output. Bump `version` whenever `columns` changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub name: String,
    pub version: u32,
    pub columns: Vec<String>,
}

pub fn schema(experiment: Experiment) -> CsvSchema {
    let columns: &[&str] = match experiment {
        Experiment::Trajectories => &["trajectory", "step", "t", "x", "y", "z"],
        Experiment::Line => &["snapshot_t", "vertex_index", "x", "y", "z"],
        Experiment::BlowupScan => &["r", "sup_B", "sup_B_theta", "envelope", "skipped"],
        Experiment::Reconstruct => &[
            "point", "x", "y", "z", "b_x", "b_y", "b_z", "exact_x", "exact_y", "exact_z", "rel_err",
        ],
        Experiment::Weakcheck => &[
            "replicate",
            "seed",
            "lhs_t",
            "lhs_0",
            "drift",
            "ito_correction",
            "ito_sum",
            "residual",
            "residual_2dt",
            "metric",
            "scale",
        ],
        Experiment::Ensemble => &["replicate", "seed", "metric"],
    };
    CsvSchema {
        name: experiment.to_string(),
        version: 1,
        columns: columns.iter().map(|c| c.to_string()).collect(),
    }
}

/// Contents of `<stem>.json`. `config` alone is enough to replay the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub tool: String,
    pub version: String,
    pub stem: String,
    pub config: String,
    pub scenario: Scenario,
    pub csv_schema: CsvSchema,
    pub files: Vec<String>,
    pub results: Value,
}

struct Csv {
    writer: csv::Writer<std::fs::File>,
}

impl Csv {
    fn create(path: &Path, schema: &CsvSchema) -> Result<Self, RunError> {
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(&schema.columns)?;
        Ok(Self { writer })
    }

    fn row(&mut self, fields: &[String]) -> Result<(), RunError> {
        self.writer.write_record(fields)?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), RunError> {
        self.writer.flush().map_err(|e| RunError::Csv(e.into()))
    }
}

fn num(x: f64) -> String {
    fmt_f64(x)
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn velocity(s: &Scenario) -> Result<Box<dyn VelocityField>, RunError> {
    Ok(match s.field {
        FieldKind::Holder => Box::new(holder_velocity(s.alpha, s.gamma)?),
        FieldKind::Zero => Box::new(ZeroField),
    })
}

fn noise_path(s: &Scenario) -> Result<BrownianPath, RunError> {
    Ok(if s.sigma == 0.0 {
        BrownianPath::zero(s.dt, s.n_steps())?
    } else {
        sample_brownian(s.seed, s.dt, s.n_steps())?
    })
}

fn vec_json(v: Vec3) -> Value {
    json!([v.x, v.y, v.z])
}

struct Ctx<'a> {
    s: &'a Scenario,
    out: &'a Path,
    stem: &'a str,
    files: Vec<String>,
}

impl Ctx<'_> {
    fn file(&mut self, ext: &str) -> PathBuf {
        let name = format!("{}.{ext}", self.stem);
        self.files.push(name.clone());
        self.out.join(name)
    }
}

/// Run `s`, writing `<stem>.csv`, `<stem>.json` and, for geometric
/// experiments, `<stem>.svg` into `out`.
pub fn run(s: &Scenario, out: &Path, stem: &str) -> Result<Summary, RunError> {
    s.validate()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut ctx = Ctx {
        s,
        out,
        stem,
        files: Vec::new(),
    };
    let results = match s.experiment {
        Experiment::Trajectories => trajectories(&mut ctx)?,
        Experiment::Line => line(&mut ctx)?,
        Experiment::BlowupScan => blowup_scan(&mut ctx)?,
        Experiment::Reconstruct => reconstruct(&mut ctx)?,
        Experiment::Weakcheck => weakcheck(&mut ctx)?,
        Experiment::Ensemble => ensemble(&mut ctx)?,
    };
    let json_path = ctx.file("json");
    let summary = Summary {
        tool: "simulate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        stem: stem.into(),
        config: s.to_config_text(),
        scenario: s.clone(),
        csv_schema: schema(s.experiment),
        files: ctx.files,
        results,
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&json_path, text + "\n").map_err(io_err(&json_path))?;
    Ok(summary)
}

/// Re-run the configuration embedded in a summary written by [`run`].
pub fn replay(summary_path: &Path, out: &Path) -> Result<Summary, RunError> {
    let text = std::fs::read_to_string(summary_path).map_err(io_err(summary_path))?;
    let bad = |message: String| RunError::Replay {
        path: summary_path.to_path_buf(),
        message,
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let config = value["config"].as_str().ok_or_else(|| bad("no `config` string".into()))?;
    let stem = value["stem"].as_str().ok_or_else(|| bad("no `stem` string".into()))?;
    let scenario = Scenario::parse(config)?;
    run(&scenario, out, stem)
}

fn trajectories(ctx: &mut Ctx) -> Result<Value, RunError> {
    let s = ctx.s;
    let field = velocity(s)?;
    let path = noise_path(s)?;
    let n = s.trajectory_starts;
    let n_steps = s.n_steps();
    let stride = n_steps.div_ceil(1000).max(1);
    let mut steps: Vec<usize> = (0..=n_steps).step_by(stride).collect();
    if steps.last() != Some(&n_steps) {
        steps.push(n_steps);
    }
    let csv_path = ctx.file("csv");
    let mut csv = Csv::create(&csv_path, &schema(Experiment::Trajectories))?;
    let mut drawn = Vec::with_capacity(n);
    let mut per = Vec::with_capacity(n);
    for i in 1..=n {
        let x0 = Vec3::new(i as f64 / n as f64, 0.0, 0.0);
        let flow = integrate_flow(field.as_ref(), x0, &path, s.sigma)?;
        let drift = flow
            .trajectory
            .iter()
            .map(|x| (x.radius() - x0.radius()).abs())
            .fold(0.0_f64, f64::max);
        let mut pts = Vec::with_capacity(steps.len());
        for &k in &steps {
            let x = flow.trajectory[k];
            csv.row(&[
                (i - 1).to_string(),
                k.to_string(),
                num(k as f64 * s.dt),
                num(x.x),
                num(x.y),
                num(x.z),
            ])?;
            pts.push(x);
        }
        per.push(json!({
            "start": vec_json(x0),
            "end": vec_json(flow.end()),
            "max_radius_change": drift,
        }));
        drawn.push(pts);
    }
    csv.finish()?;
    let svg_path = ctx.file("svg");
    let title = format!("Lagrangian trajectories, alpha = {}, sigma = {}", s.alpha, s.sigma);
    emit_svg(&svg_path, &drawn, &Style::titled(title)).map_err(io_err(&svg_path))?;
    Ok(json!({ "trajectories": per, "csv_stride": stride }))
}

pub fn line_spec(s: &Scenario) -> LineSpec {
    LineSpec {
        from: s.line_from(),
        to: s.line_to(),
        refine_len: s.refine_len,
        vertex_budget: s.vertex_budget,
        ..LineSpec::default()
    }
}

fn line(ctx: &mut Ctx) -> Result<Value, RunError> {
    let s = ctx.s;
    let field = velocity(s)?;
    let path = noise_path(s)?;
    let evo = evolve_line_partial(field.as_ref(), &path, s.sigma, &s.snapshots, &line_spec(s))?;
    let csv_path = ctx.file("csv");
    let mut csv = Csv::create(&csv_path, &schema(Experiment::Line))?;
    for p in &evo.polylines {
        for (k, v) in p.vertices.iter().enumerate() {
            csv.row(&[num(p.t), k.to_string(), num(v.x), num(v.y), num(v.z)])?;
        }
    }
    csv.finish()?;
    let svg_path = ctx.file("svg");
    let mut style = Style::titled(format!("Ideal line, alpha = {}, sigma = {}", s.alpha, s.sigma));
    style.labels = evo.polylines.iter().map(|p| format!("t = {}", p.t)).collect();
    let drawn: Vec<Vec<Vec3>> = evo.polylines.iter().map(|p| p.vertices.clone()).collect();
    emit_svg(&svg_path, &drawn, &style).map_err(io_err(&svg_path))?;
    let snaps: Vec<Value> = evo
        .polylines
        .iter()
        .map(|p| json!({ "t": p.t, "arc_length": p.arc_length, "vertices": p.vertices.len() }))
        .collect();
    Ok(json!({
        "snapshots": snaps,
        "budget_exhausted": evo.exhausted_at.is_some(),
        "exhausted_at": evo.exhausted_at,
    }))
}

/// `sup_θ |B_r⁰|` on the circle of radius `r` in the plane `z = 0`.
fn radial_sup(b0: &InitialField, r: f64, n_theta: usize) -> f64 {
    (0..n_theta.max(64))
        .map(|k| {
            let q = CylPoint::new(r, k as f64 * std::f64::consts::TAU / n_theta.max(64) as f64, 0.0);
            let p = q.to_cartesian();
            vector_to_cylindrical(p, b0.evaluate(p)).map_or(0.0, |c| c.r_comp.abs())
        })
        .fold(0.0, f64::max)
}

fn blowup_scan(ctx: &mut Ctx) -> Result<Value, RunError> {
    let s = ctx.s;
    let field = velocity(s)?;
    let path = noise_path(s)?;
    let b0 = InitialField::preset(&s.initial_field)?;
    let rec = PullbackReconstructor {
        b0: &b0,
        field: field.as_ref(),
        path: &path,
        sigma: s.sigma,
        opts: PullbackOptions::variational(),
    };
    let report = stretch_supremum(&rec, s.t_final, s.r_min, s.r_max, s.n_r, s.n_theta)?;
    let csv_path = ctx.file("csv");
    let mut csv = Csv::create(&csv_path, &schema(Experiment::BlowupScan))?;
    let (mut rs, mut ys) = (Vec::new(), Vec::new());
    for ring in &report.rings {
        let envelope = blowup_envelope(s.alpha, s.t_final, ring.r, radial_sup(&b0, ring.r, s.n_theta));
        csv.row(&[
            num(ring.r),
            num(ring.sup_b),
            num(ring.sup_b_theta),
            num(envelope),
            ring.skipped.to_string(),
        ])?;
        if ring.sup_b_theta > 0.0 {
            rs.push(ring.r);
            ys.push(ring.sup_b_theta);
        }
    }
    csv.finish()?;
    let fit = fit_blowup_exponent(&rs, &ys);
    Ok(json!({
        "sup_B": report.sup_b,
        "sup_B_theta": report.sup_b_theta,
        "argmax": vec_json(report.argmax),
        "samples_used": report.samples_used,
        "skipped": report.skipped,
        "expected_slope": s.alpha - 1.0,
        "fit": fit.as_ref().ok().map(|f| json!({
            "slope": f.slope,
            "intercept": f.intercept,
            "r2": f.r_squared,
            "samples": f.samples,
        })),
        "fit_error": fit.as_ref().err().map(|e| e.to_string()),
    }))
}

fn reconstruct(ctx: &mut Ctx) -> Result<Value, RunError> {
    let s = ctx.s;
    let field = velocity(s)?;
    let path = noise_path(s)?;
    let b0 = InitialField::preset(&s.initial_field)?;
    let grid = GridSpec::annulus(s.r_min, s.r_max, s.n_r, s.n_theta);
    let rec = reconstruct_grid(&b0, field.as_ref(), &path, s.sigma, s.t_final, &grid, &PullbackOptions::default())?;
    // closed form: deterministic holder flow inside the unit cylinder
    let oracle = (s.sigma == 0.0 && s.field == FieldKind::Holder)
        .then(|| ExactSolution::from_initial_field(s.alpha, &b0))
        .transpose()?;
    let csv_path = ctx.file("csv");
    let mut csv = Csv::create(&csv_path, &schema(Experiment::Reconstruct))?;
    let points = grid.points()?;
    let mut worst: Option<f64> = None;
    let mut det_worst = 0.0_f64;
    for (i, (x, sample)) in points.iter().zip(&rec.samples).enumerate() {
        let exact = oracle.as_ref().and_then(|o| o.field_cartesian(s.t_final, *x).ok());
        let b = sample.as_ref().map(|smp| smp.b);
        let rel = match (b, exact) {
            (Some(b), Some(e)) => Some((b - e).norm() / e.norm().max(f64::MIN_POSITIVE)),
            _ => None,
        };
        if let Some(r) = rel {
            worst = Some(worst.map_or(r, |w: f64| w.max(r)));
        }
        if let Some(smp) = sample {
            det_worst = det_worst.max(smp.det_residual);
        }
        csv.row(&[
            i.to_string(),
            num(x.x),
            num(x.y),
            num(x.z),
            opt(b.map(|v| v.x)),
            opt(b.map(|v| v.y)),
            opt(b.map(|v| v.z)),
            opt(exact.map(|v| v.x)),
            opt(exact.map(|v| v.y)),
            opt(exact.map(|v| v.z)),
            opt(rel),
        ])?;
    }
    csv.finish()?;
    Ok(json!({
        "points": points.len(),
        "skipped": rec.skipped.len(),
        "max_rel_err": worst,
        "max_det_residual": det_worst,
    }))
}

fn weak_metric<'a>(s: &Scenario, field: &'a dyn VelocityField, b0: &'a InitialField) -> Result<WeakResidualMetric<'a>, RunError> {
    let noisy = s.sigma != 0.0;
    Ok(WeakResidualMetric {
        field,
        b0,
        sigma: s.sigma,
        t: s.t_final,
        dt: s.dt,
        phi: BumpTestFunction::new(s.phi_center(), s.phi_width)?,
        quad: if noisy {
            QuadratureSpec {
                spacing: 1.0,
                check_resolution: false,
            }
        } else {
            QuadratureSpec::default()
        },
        extrapolate: noisy,
    })
}

fn stats_json(stats: &EnsembleStats) -> Value {
    json!({
        "mean": stats.mean,
        "std_err": stats.std_err,
        "z": if stats.std_err > 0.0 { stats.mean / stats.std_err } else { 0.0 },
        "quantiles": stats.quantiles,
        "failed": stats.failed,
    })
}

fn weakcheck(ctx: &mut Ctx) -> Result<Value, RunError> {
    let s = ctx.s;
    let field = velocity(s)?;
    let b0 = InitialField::preset(&s.initial_field)?;
    let metric = weak_metric(s, field.as_ref(), &b0)?;
    let csv_path = ctx.file("csv");
    let mut csv = Csv::create(&csv_path, &schema(Experiment::Weakcheck))?;
    if s.sigma == 0.0 {
        let path = BrownianPath::zero(s.dt, s.n_steps())?;
        let rep = weak_form_residual(&b0, field.as_ref(), &path, 0.0, s.t_final, &metric.phi, &metric.quad, 1e-2)?;
        csv.row(&[
            "0".into(),
            String::new(),
            num(rep.lhs_t),
            num(rep.lhs_0),
            num(rep.drift),
            num(rep.ito_correction),
            num(rep.ito_sum),
            num(rep.residual),
            String::new(),
            num(rep.residual),
            num(rep.scale),
        ])?;
        csv.finish()?;
        return Ok(json!({
            "report": rep,
            "tolerance": 1e-2,
            "passes": rep.relative <= 1e-2,
        }));
    }
    let spec = EnsembleSpec::new(s.replicates, s.seed);
    let results = map_replicates(&spec, |seed| metric.residuals(seed))?;
    let mut raw = Vec::with_capacity(results.len());
    let mut extrapolated = Vec::with_capacity(results.len());
    for (i, (seed, res)) in results.into_iter().enumerate() {
        match res {
            Ok((fine, coarse)) => {
                let coarse = coarse.expect("extrapolating metric");
                let value = 2.0 * fine.residual - coarse.residual;
                csv.row(&[
                    i.to_string(),
                    seed.to_string(),
                    num(fine.lhs_t),
                    num(fine.lhs_0),
                    num(fine.drift),
                    num(fine.ito_correction),
                    num(fine.ito_sum),
                    num(fine.residual),
                    num(coarse.residual),
                    num(value),
                    num(fine.scale),
                ])?;
                raw.push((seed, Ok(fine.residual)));
                extrapolated.push((seed, Ok(value)));
            }
            Err(e) => {
                let mut row = vec![i.to_string(), seed.to_string()];
                row.resize(schema(Experiment::Weakcheck).columns.len(), String::new());
                csv.row(&row)?;
                raw.push((seed, Err(e.clone())));
                extrapolated.push((seed, Err(e)));
            }
        }
    }
    csv.finish()?;
    let raw = EnsembleStats::from_records("weak_residual", records_from(raw))?;
    let ext = EnsembleStats::from_records(metric.name(), records_from(extrapolated))?;
    Ok(json!({
        "replicates": s.replicates,
        "extrapolated": stats_json(&ext),
        "raw": stats_json(&raw),
        "within_two_standard_errors": ext.mean.abs() <= 2.0 * ext.std_err,
    }))
}

fn ensemble(ctx: &mut Ctx) -> Result<Value, RunError> {
    let s = ctx.s;
    let field = velocity(s)?;
    let b0 = InitialField::preset(&s.initial_field)?;
    let spec = EnsembleSpec::new(s.replicates, s.seed);
    let stretch = StretchSupremumMetric {
        field: field.as_ref(),
        b0: &b0,
        sigma: s.sigma,
        t: s.t_final,
        dt: s.dt,
        r_min: s.r_min,
        r_max: s.r_max,
        n_r: s.n_r,
        n_theta: s.n_theta,
        opts: PullbackOptions::variational(),
    };
    let arc = LineArcLengthMetric {
        field: field.as_ref(),
        sigma: s.sigma,
        t: s.t_final,
        dt: s.dt,
        spec: line_spec(s),
    };
    let weak = weak_metric(s, field.as_ref(), &b0)?;
    let metric: &dyn ReplicateMetric = match s.metric {
        MetricKind::StretchSupremum => &stretch,
        MetricKind::ArcLength => &arc,
        MetricKind::WeakResidual => &weak,
    };
    let stats = run_ensemble(metric, &spec)?;
    let csv_path = ctx.file("csv");
    let mut csv = Csv::create(&csv_path, &schema(Experiment::Ensemble))?;
    for r in &stats.records {
        csv.row(&[r.index.to_string(), r.seed.to_string(), opt(r.value)])?;
    }
    csv.finish()?;
    let ci = bootstrap_median_ci(&stats.values, 2000, s.seed, 0.95)?;
    let mut results = stats_json(&stats);
    results["metric"] = json!(stats.metric);
    results["median"] = json!(stats.median());
    results["median_ci95"] = json!([ci.0, ci.1]);
    results["failures"] = json!(stats
        .records
        .iter()
        .filter(|r| r.value.is_none())
        .map(|r| json!({ "replicate": r.index, "seed": r.seed, "error": r.error }))
        .collect::<Vec<_>>());
    if s.metric == MetricKind::StretchSupremum {
        let zero = BrownianPath::zero(s.dt, s.n_steps())?;
        let rec = PullbackReconstructor {
            b0: &b0,
            field: field.as_ref(),
            path: &zero,
            sigma: 0.0,
            opts: PullbackOptions::variational(),
        };
        let det = stretch_supremum(&rec, s.t_final, s.r_min, s.r_max, s.n_r, s.n_theta)?;
        results["deterministic_sup_B"] = json!(det.sup_b);
        results["suppression_ratio"] = json!(suppression_ratio(det.sup_b, &stats));
    }
    Ok(results)
}

/// The four figure scenarios, as shipped in `configs/`.
pub const FIG_SUITE: [(&str, &str); 4] = [
    ("fig1", include_str!("../../../configs/fig1.cfg")),
    ("fig2", include_str!("../../../configs/fig2.cfg")),
    ("fig3", include_str!("../../../configs/fig3.cfg")),
    ("fig4", include_str!("../../../configs/fig4.cfg")),
];

/// Run every figure scenario into `out`; returns the summaries in order.
pub fn fig_suite(out: &Path) -> Result<Vec<Summary>, RunError> {
    FIG_SUITE
        .iter()
        .map(|(stem, text)| run(&Scenario::parse(text)?, out, stem))
        .collect()
}
