//! Flat `key = value` scenario files.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use stretchlab::{BrownianPath, Vec3};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, key: Option<String>, message: String },
    #[error("{key}: {constraint}")]
    Validation { key: String, constraint: String },
}

impl ConfigError {
    fn parse(line: usize, key: Option<&str>, message: impl Into<String>) -> Self {
        Self::Parse {
            line,
            key: key.map(str::to_string),
            message: message.into(),
        }
    }

    pub fn invalid(key: &str, constraint: impl Into<String>) -> Self {
        Self::Validation {
            key: key.to_string(),
            constraint: constraint.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Holder,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Trajectories,
    Line,
    BlowupScan,
    Reconstruct,
    Weakcheck,
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    StretchSupremum,
    ArcLength,
    WeakResidual,
}

macro_rules! keyword_enum {
    ($ty:ident { $($text:literal => $variant:ident),+ $(,)? }) => {
        impl $ty {
            pub const NAMES: &'static [&'static str] = &[$($text),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $text),+
                }
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    _ => Err(format!("expected one of {}", Self::NAMES.join(" | "))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

keyword_enum!(FieldKind { "holder" => Holder, "zero" => Zero });
keyword_enum!(Experiment {
    "trajectories" => Trajectories,
    "line" => Line,
    "blowup_scan" => BlowupScan,
    "reconstruct" => Reconstruct,
    "weakcheck" => Weakcheck,
    "ensemble" => Ensemble,
});
keyword_enum!(MetricKind {
    "stretch_supremum" => StretchSupremum,
    "arc_length" => ArcLength,
    "weak_residual" => WeakResidual,
});

/// A validated run description. Every field has a value; the defaults are
/// listed in [`KEYS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub field: FieldKind,
    pub alpha: f64,
    pub gamma: f64,
    pub initial_field: String,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub dt: f64,
    pub seed: u64,
    pub experiment: Experiment,
    pub r_min: f64,
    pub r_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub line_from: [f64; 3],
    pub line_to: [f64; 3],
    pub refine_len: f64,
    pub vertex_budget: usize,
    pub snapshots: Vec<f64>,
    pub replicates: usize,
    pub phi_center: [f64; 3],
    pub phi_width: f64,
    pub metric: MetricKind,
    pub trajectory_starts: usize,
}

/// `(key, default, description)`; the `--help` text is generated from this.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("field", "holder", "velocity field: holder | zero"),
    ("alpha", "0.5", "Hölder exponent, in (0, 1]"),
    ("gamma", "4", "far-field decay rate of the holder profile, >= 1"),
    ("initial_field", "constant_ex", "B0 preset: constant_ex | constant_ez | solid_rotor"),
    ("sigma", "0", "noise intensity, >= 0"),
    ("T", "1", "final time; must be a whole number of steps"),
    ("dt", "1e-4", "time step"),
    ("seed", "0", "base seed of the Brownian path (and of ensemble replicates)"),
    ("experiment", "(required)", "trajectories | line | blowup_scan | reconstruct | weakcheck | ensemble"),
    ("r_min", "1e-3", "inner radius of the scanned annulus"),
    ("r_max", "1e-1", "outer radius of the scanned annulus"),
    ("n_r", "24", "radii (log-spaced for scans, linear for reconstruct)"),
    ("n_theta", "32", "angles per radius"),
    ("line_from", "-1,0,0", "start of the initial ideal line"),
    ("line_to", "1,0,0", "end of the initial ideal line"),
    ("refine_len", "0.05", "longest allowed segment before bisection"),
    ("vertex_budget", "2000", "maximum vertices of the ideal line"),
    ("snapshots", "T/4,T/2,3T/4,T", "output times of the line experiment"),
    ("replicates", "64", "ensemble size"),
    ("phi_center", "0.5,0,0", "centre of the Gaussian test function"),
    ("phi_width", "0.1", "width of the Gaussian test function"),
    ("metric", "stretch_supremum", "ensemble metric: stretch_supremum | arc_length | weak_residual"),
    ("trajectory_starts", "12", "trajectories start at i/n on the x-axis, i = 1..n"),
];

impl Scenario {
    /// Parse and validate config text.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let n = idx + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| ConfigError::parse(n, None, format!("expected `key = value`, got `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _, _)| *k == key) {
                return Err(ConfigError::parse(n, Some(key), format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(ConfigError::parse(n, Some(key), format!("`{key}` has no value")));
            }
            if let Some((first, _)) = raw.insert(key.to_string(), (n, value.to_string())) {
                return Err(ConfigError::parse(n, Some(key), format!("`{key}` already set on line {first}")));
            }
        }
        Self::from_pairs(&raw)
    }

    fn from_pairs(raw: &BTreeMap<String, (usize, String)>) -> Result<Self, ConfigError> {
        fn get<T: FromStr>(raw: &BTreeMap<String, (usize, String)>, key: &str, default: T) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            match raw.get(key) {
                None => Ok(default),
                Some((line, v)) => v
                    .parse()
                    .map_err(|e| ConfigError::parse(*line, Some(key), format!("`{key} = {v}`: {e}"))),
            }
        }
        fn triple(raw: &BTreeMap<String, (usize, String)>, key: &str, default: [f64; 3]) -> Result<[f64; 3], ConfigError> {
            match raw.get(key) {
                None => Ok(default),
                Some((line, v)) => {
                    let parts = parse_list(v).map_err(|e| ConfigError::parse(*line, Some(key), e))?;
                    <[f64; 3]>::try_from(parts.as_slice())
                        .map_err(|_| ConfigError::parse(*line, Some(key), format!("`{key}` needs three numbers")))
                }
            }
        }

        let experiment = match raw.get("experiment") {
            None => return Err(ConfigError::invalid("experiment", "required")),
            Some((line, v)) => v
                .parse()
                .map_err(|e| ConfigError::parse(*line, Some("experiment"), format!("`experiment = {v}`: {e}")))?,
        };
        let t_final: f64 = get(raw, "T", 1.0)?;
        let snapshots = match raw.get("snapshots") {
            None => vec![0.25 * t_final, 0.5 * t_final, 0.75 * t_final, t_final],
            Some((line, v)) => parse_list(v).map_err(|e| ConfigError::parse(*line, Some("snapshots"), e))?,
        };
        let scenario = Scenario {
            field: get(raw, "field", FieldKind::Holder)?,
            alpha: get(raw, "alpha", 0.5)?,
            gamma: get(raw, "gamma", stretchlab::HolderRotationField::DEFAULT_GAMMA)?,
            initial_field: get(raw, "initial_field", "constant_ex".to_string())?,
            sigma: get(raw, "sigma", 0.0)?,
            t_final,
            dt: get(raw, "dt", 1e-4)?,
            seed: get(raw, "seed", 0)?,
            experiment,
            r_min: get(raw, "r_min", 1e-3)?,
            r_max: get(raw, "r_max", 1e-1)?,
            n_r: get(raw, "n_r", 24)?,
            n_theta: get(raw, "n_theta", 32)?,
            line_from: triple(raw, "line_from", [-1.0, 0.0, 0.0])?,
            line_to: triple(raw, "line_to", [1.0, 0.0, 0.0])?,
            refine_len: get(raw, "refine_len", 0.05)?,
            vertex_budget: get(raw, "vertex_budget", 2000)?,
            snapshots,
            replicates: get(raw, "replicates", 64)?,
            phi_center: triple(raw, "phi_center", [0.5, 0.0, 0.0])?,
            phi_width: get(raw, "phi_width", 0.1)?,
            metric: get(raw, "metric", MetricKind::StretchSupremum)?,
            trajectory_starts: get(raw, "trajectory_starts", 12)?,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &str, constraint: &str| -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, constraint))
            }
        };
        check(self.alpha > 0.0 && self.alpha <= 1.0, "alpha", "alpha ∈ (0,1]")?;
        check(self.gamma >= 1.0 && self.gamma.is_finite(), "gamma", "gamma >= 1")?;
        check(
            stretchlab::InitialField::PRESETS.contains(&self.initial_field.as_str()),
            "initial_field",
            "one of constant_ex | constant_ez | solid_rotor",
        )?;
        check(self.sigma >= 0.0 && self.sigma.is_finite(), "sigma", "sigma >= 0")?;
        check(self.t_final > 0.0 && self.t_final.is_finite(), "T", "T > 0")?;
        check(self.dt > 0.0 && self.dt.is_finite(), "dt", "dt > 0")?;
        check(BrownianPath::steps_for(self.t_final, self.dt).is_ok(), "dt", "T/dt must be an integer")?;
        check(self.r_min > 0.0 && self.r_min < self.r_max, "r_min", "0 < r_min < r_max")?;
        check(self.r_max.is_finite(), "r_max", "r_max finite")?;
        check(self.n_r >= 2, "n_r", "n_r >= 2")?;
        check(self.n_theta >= 2, "n_theta", "n_theta >= 2")?;
        check(self.line_from.iter().chain(&self.line_to).all(|v| v.is_finite()), "line_from", "finite coordinates")?;
        check(self.line_from != self.line_to, "line_to", "line_to must differ from line_from")?;
        check(self.refine_len > 0.0, "refine_len", "refine_len > 0")?;
        check(self.vertex_budget >= 2, "vertex_budget", "vertex_budget >= 2")?;
        check(!self.snapshots.is_empty(), "snapshots", "at least one snapshot")?;
        check(
            self.snapshots.windows(2).all(|w| w[0] < w[1]),
            "snapshots",
            "snapshots strictly increasing",
        )?;
        let grid = BrownianPath::zero(self.dt, BrownianPath::steps_for(self.t_final, self.dt).unwrap_or(1)).ok();
        check(
            self.experiment != Experiment::Line
                || self
                    .snapshots
                    .iter()
                    .all(|&s| s > 0.0 && grid.as_ref().is_some_and(|g| g.step_index(s).is_ok())),
            "snapshots",
            "snapshots in (0, T] on the dt grid",
        )?;
        check(self.replicates >= 1, "replicates", "replicates >= 1")?;
        check(self.phi_center.iter().all(|v| v.is_finite()), "phi_center", "finite coordinates")?;
        check(self.phi_width > 0.0 && self.phi_width.is_finite(), "phi_width", "phi_width > 0")?;
        check(self.trajectory_starts >= 1, "trajectory_starts", "trajectory_starts >= 1")?;
        // the noisy weak residual is extrapolated against the path at 2 dt
        let weak = self.experiment == Experiment::Weakcheck
            || (self.experiment == Experiment::Ensemble && self.metric == MetricKind::WeakResidual);
        check(
            !(weak && self.sigma > 0.0) || self.n_steps().is_multiple_of(2),
            "dt",
            "T/dt must be even for a noisy weak residual",
        )?;
        Ok(())
    }

    /// Canonical config text: every key, in [`KEYS`] order. Parsing it gives
    /// back `self`.
    pub fn to_config_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        for (key, _, _) in KEYS {
            let value = match *key {
                "field" => self.field.to_string(),
                "alpha" => fmt_f64(self.alpha),
                "gamma" => fmt_f64(self.gamma),
                "initial_field" => self.initial_field.clone(),
                "sigma" => fmt_f64(self.sigma),
                "T" => fmt_f64(self.t_final),
                "dt" => fmt_f64(self.dt),
                "seed" => self.seed.to_string(),
                "experiment" => self.experiment.to_string(),
                "r_min" => fmt_f64(self.r_min),
                "r_max" => fmt_f64(self.r_max),
                "n_r" => self.n_r.to_string(),
                "n_theta" => self.n_theta.to_string(),
                "line_from" => list(&self.line_from),
                "line_to" => list(&self.line_to),
                "refine_len" => fmt_f64(self.refine_len),
                "vertex_budget" => self.vertex_budget.to_string(),
                "snapshots" => list(&self.snapshots),
                "replicates" => self.replicates.to_string(),
                "phi_center" => list(&self.phi_center),
                "phi_width" => fmt_f64(self.phi_width),
                "metric" => self.metric.to_string(),
                "trajectory_starts" => self.trajectory_starts.to_string(),
                other => unreachable!("key {other} missing from to_config_text"),
            };
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn n_steps(&self) -> usize {
        BrownianPath::steps_for(self.t_final, self.dt).expect("validated")
    }

    pub fn line_from(&self) -> Vec3 {
        Vec3::from(self.line_from)
    }

    pub fn line_to(&self) -> Vec3 {
        Vec3::from(self.line_to)
    }

    pub fn phi_center(&self) -> Vec3 {
        Vec3::from(self.phi_center)
    }
}

fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>().map_err(|e| format!("`{p}`: {e}"))
        })
        .collect()
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
