//! Seeded replicate ensembles with order-independent statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    evolve_line, stretch_supremum, weak_form_residual, BumpTestFunction, LineSpec, QuadratureSpec, WeakFormReport,
};
use crate::error::{Error, Result};
use crate::fields::{InitialField, VelocityField};
use crate::flow::{sample_brownian, BrownianPath};
use crate::transport::{PullbackOptions, PullbackReconstructor};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of replicate `index`: the splitmix64 output for state
/// `base + (index + 1)·φ`. Distinct indices give distinct seeds.
pub fn split_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_replicates: usize,
    pub base_seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub parallelism: usize,
}

impl EnsembleSpec {
    pub fn new(n_replicates: usize, base_seed: u64) -> Self {
        Self {
            n_replicates,
            base_seed,
            parallelism: 0,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_replicates as u64).map(|i| split_seed(self.base_seed, i)).collect()
    }
}

/// A scalar computed from one noise realization.
pub trait ReplicateMetric: Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, seed: u64) -> Result<f64>;
}

/// Adapter for closures.
pub struct FnMetric<F> {
    pub name: String,
    pub f: F,
}

impl<F: Fn(u64) -> Result<f64> + Sync> ReplicateMetric for FnMetric<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, seed: u64) -> Result<f64> {
        (self.f)(seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    pub value: Option<f64>,
    pub error: Option<String>,
}

/// Type-7 (linear interpolation) quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of_sorted(sorted: &[f64]) -> Self {
        Self {
            min: sorted[0],
            q05: quantile(sorted, 0.05),
            q25: quantile(sorted, 0.25),
            median: quantile(sorted, 0.5),
            q75: quantile(sorted, 0.75),
            q95: quantile(sorted, 0.95),
            max: sorted[sorted.len() - 1],
        }
    }
}

/// Type-7 quantile of ascending `sorted`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub metric: String,
    pub records: Vec<ReplicateRecord>,
    /// Successful values in replicate order.
    pub values: Vec<f64>,
    pub quantiles: Quantiles,
    pub mean: f64,
    pub std_err: f64,
    pub failed: usize,
}

impl EnsembleStats {
    pub fn from_records(metric: impl Into<String>, records: Vec<ReplicateRecord>) -> Result<Self> {
        let total = records.len();
        let failures: Vec<&ReplicateRecord> = records.iter().filter(|r| r.value.is_none()).collect();
        let failed = failures.len();
        if total == 0 || failed == total || failed * 10 > total {
            let first = failures.first();
            return Err(Error::EnsembleFailed {
                failed,
                total,
                first_seed: first.map_or(0, |r| r.seed),
                first_error: first.and_then(|r| r.error.clone()).unwrap_or_else(|| "no replicates".into()),
            });
        }
        let values: Vec<f64> = records.iter().filter_map(|r| r.value).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let var = if sorted.len() > 1 {
            sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(Self {
            metric: metric.into(),
            quantiles: Quantiles::of_sorted(&sorted),
            records,
            values,
            mean,
            std_err: (var / n).sqrt(),
            failed,
        })
    }

    pub fn median(&self) -> f64 {
        self.quantiles.median
    }
}

/// `f` on every replicate seed, in replicate order, on the pool selected by
/// `spec.parallelism`. Returns `(seed, result)` pairs.
pub fn map_replicates<T: Send>(
    spec: &EnsembleSpec,
    f: impl Fn(u64) -> Result<T> + Sync,
) -> Result<Vec<(u64, Result<T>)>> {
    let seeds = spec.seeds();
    let work = || -> Vec<(u64, Result<T>)> { seeds.par_iter().map(|&seed| (seed, f(seed))).collect() };
    if spec.parallelism == 0 {
        Ok(work())
    } else {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(spec.parallelism)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(work))
    }
}

/// Turn per-seed outcomes into records; non-finite values count as failures.
pub fn records_from(results: impl IntoIterator<Item = (u64, Result<f64>)>) -> Vec<ReplicateRecord> {
    results
        .into_iter()
        .enumerate()
        .map(|(index, (seed, res))| match res {
            Ok(v) if v.is_finite() => ReplicateRecord {
                index,
                seed,
                value: Some(v),
                error: None,
            },
            Ok(v) => ReplicateRecord {
                index,
                seed,
                value: None,
                error: Some(format!("non-finite metric {v}")),
            },
            Err(e) => ReplicateRecord {
                index,
                seed,
                value: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// Evaluate `metric` on every replicate seed. Results do not depend on the
/// thread count. Fails if more than 10% of replicates fail.
pub fn run_ensemble(metric: &dyn ReplicateMetric, spec: &EnsembleSpec) -> Result<EnsembleStats> {
    let results = map_replicates(spec, |seed| metric.evaluate(seed))?;
    EnsembleStats::from_records(metric.name(), records_from(results))
}

/// Percentile bootstrap interval for the median.
pub fn bootstrap_median_ci(values: &[f64], n_boot: usize, seed: u64, level: f64) -> Result<(f64, f64)> {
    if values.is_empty() || n_boot == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter("bootstrap needs data, resamples, and level in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medians = Vec::with_capacity(n_boot);
    let mut buf = vec![0.0; values.len()];
    for _ in 0..n_boot {
        for b in buf.iter_mut() {
            *b = values[rng.random_range(0..values.len())];
        }
        buf.sort_by(f64::total_cmp);
        medians.push(quantile(&buf, 0.5));
    }
    medians.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok((quantile(&medians, tail), quantile(&medians, 1.0 - tail)))
}

/// Deterministic supremum over the stochastic ensemble median.
pub fn suppression_ratio(deterministic_sup: f64, stochastic: &EnsembleStats) -> f64 {
    deterministic_sup / stochastic.median()
}

fn path_for(seed: u64, t: f64, dt: f64) -> Result<BrownianPath> {
    sample_brownian(seed, dt, BrownianPath::steps_for(t, dt)?)
}

/// `sup |B(t, ·)|` on a log-spaced annulus for one realization.
pub struct StretchSupremumMetric<'a> {
    pub field: &'a dyn VelocityField,
    pub b0: &'a InitialField,
    pub sigma: f64,
    pub t: f64,
    pub dt: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub opts: PullbackOptions,
}

impl ReplicateMetric for StretchSupremumMetric<'_> {
    fn name(&self) -> &str {
        "sup_B"
    }

    fn evaluate(&self, seed: u64) -> Result<f64> {
        let path = path_for(seed, self.t, self.dt)?;
        let rec = PullbackReconstructor {
            b0: self.b0,
            field: self.field,
            path: &path,
            sigma: self.sigma,
            opts: self.opts,
        };
        Ok(stretch_supremum(&rec, self.t, self.r_min, self.r_max, self.n_r, self.n_theta)?.sup_b)
    }
}

/// Arc length of the ideal line at the last snapshot.
pub struct LineArcLengthMetric<'a> {
    pub field: &'a dyn VelocityField,
    pub sigma: f64,
    pub t: f64,
    pub dt: f64,
    pub spec: LineSpec,
}

impl ReplicateMetric for LineArcLengthMetric<'_> {
    fn name(&self) -> &str {
        "arc_length"
    }

    fn evaluate(&self, seed: u64) -> Result<f64> {
        let path = path_for(seed, self.t, self.dt)?;
        let lines = evolve_line(self.field, &path, self.sigma, &[self.t], &self.spec)?;
        Ok(lines[0].arc_length)
    }
}

/// Signed weak-form residual.
///
/// With `extrapolate`, the residual is computed on the realization at `dt`
/// and on the same realization coarsened to `2 dt`, and `2 R(dt) - R(2 dt)`
/// is reported. Euler–Maruyama leaves a deterministic `O(dt)` bias in the
/// residual that is much larger than its seed-to-seed spread; one Richardson
/// step removes it.
pub struct WeakResidualMetric<'a> {
    pub field: &'a dyn VelocityField,
    pub b0: &'a InitialField,
    pub sigma: f64,
    pub t: f64,
    pub dt: f64,
    pub phi: BumpTestFunction,
    pub quad: QuadratureSpec,
    pub extrapolate: bool,
}

impl WeakResidualMetric<'_> {
    /// `(R(dt), R(2 dt))` on the realization of `seed`; the second entry only
    /// with `extrapolate`.
    pub fn residuals(&self, seed: u64) -> Result<(WeakFormReport, Option<WeakFormReport>)> {
        let path = path_for(seed, self.t, self.dt)?;
        let fine = weak_form_residual(self.b0, self.field, &path, self.sigma, self.t, &self.phi, &self.quad, 1e-2)?;
        if !self.extrapolate {
            return Ok((fine, None));
        }
        let coarse_path = path.coarsen(2)?;
        let coarse = weak_form_residual(self.b0, self.field, &coarse_path, self.sigma, self.t, &self.phi, &self.quad, 1e-2)?;
        Ok((fine, Some(coarse)))
    }
}

impl ReplicateMetric for WeakResidualMetric<'_> {
    fn name(&self) -> &str {
        if self.extrapolate {
            "weak_residual_extrapolated"
        } else {
            "weak_residual"
        }
    }

    fn evaluate(&self, seed: u64) -> Result<f64> {
        Ok(match self.residuals(seed)? {
            (fine, None) => fine.residual,
            (fine, Some(coarse)) => 2.0 * fine.residual - coarse.residual,
        })
    }
}
