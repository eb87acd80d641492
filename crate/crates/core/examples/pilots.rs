//! Pilot runs behind the empirical thresholds used in the test suites.
//!
//! `cargo run --release -p stretchlab --example pilots -- <suppression|lines|weak|bias|weakgrid|det> [replicates]`

use std::time::Instant;

use stretchlab::diagnostics::{
    evolve_line_partial, stretch_supremum, weak_form_residual, BumpTestFunction, LineSpec, QuadratureSpec,
};
use stretchlab::montecarlo::{run_ensemble, EnsembleSpec, StretchSupremumMetric, WeakResidualMetric};
use stretchlab::transport::PullbackReconstructor;
use stretchlab::*;

fn suppression(replicates: usize) -> Result<()> {
    let field = holder_velocity(0.2, HolderRotationField::DEFAULT_GAMMA)?;
    let b0 = InitialField::preset("constant_ex")?;
    let (t, dt, n_r, n_theta) = (1.0, 1e-4, 16, 32);
    let path = BrownianPath::zero(dt, 10_000)?;
    let rec = PullbackReconstructor {
        b0: &b0,
        field: &field,
        path: &path,
        sigma: 0.0,
        opts: PullbackOptions::variational(),
    };
    let det = stretch_supremum(&rec, t, 1e-4, 1e-1, n_r, n_theta)?;
    println!("deterministic sup {:.2} (envelope {:.2})", det.sup_b, blowup_envelope(0.2, t, 1e-4, 1.0));
    let metric = StretchSupremumMetric {
        field: &field,
        b0: &b0,
        sigma: 0.1,
        t,
        dt,
        r_min: 1e-4,
        r_max: 1e-1,
        n_r,
        n_theta,
        opts: PullbackOptions::variational(),
    };
    let start = Instant::now();
    let stats = run_ensemble(&metric, &EnsembleSpec::new(replicates, 2024))?;
    println!(
        "sigma=0.1: {} replicates in {:.1?}, failed {}, quantiles {:?}, ratio {:.1}",
        replicates,
        start.elapsed(),
        stats.failed,
        stats.quantiles,
        det.sup_b / stats.median()
    );
    Ok(())
}

fn lines() -> Result<()> {
    let field = holder_velocity(0.2, HolderRotationField::DEFAULT_GAMMA)?;
    let snaps = [0.25, 0.5, 0.75, 1.0];
    for (sigma, seed) in [(0.0, 0), (0.1, 1), (0.1, 2), (0.1, 3)] {
        let path = if sigma == 0.0 { BrownianPath::zero(1e-4, 10_000)? } else { sample_brownian(seed, 1e-4, 10_000)? };
        for budget in [1000, 2000, 4000] {
            let spec = LineSpec {
                vertex_budget: budget,
                ..LineSpec::default()
            };
            let start = Instant::now();
            let evo = evolve_line_partial(&field, &path, sigma, &snaps, &spec)?;
            let lens: Vec<String> = evo.polylines.iter().map(|p| format!("{:.4}", p.arc_length)).collect();
            println!(
                "sigma {sigma} seed {seed} budget {budget}: exhausted {:?}, vertices {}, arc {:?} ({:.1?})",
                evo.exhausted_at,
                evo.polylines.last().unwrap().vertices.len(),
                lens,
                start.elapsed()
            );
        }
    }
    Ok(())
}

fn weak(replicates: usize) -> Result<()> {
    let field = holder_velocity(0.5, HolderRotationField::DEFAULT_GAMMA)?;
    let b0 = InitialField::preset("constant_ex")?;
    let phi = BumpTestFunction::new(Vec3::new(0.5, 0.0, 0.0), 0.1)?;
    let start = Instant::now();
    let path = BrownianPath::zero(1e-4, 5000)?;
    let rep = weak_form_residual(&b0, &field, &path, 0.0, 0.5, &phi, &QuadratureSpec::default(), 1e-2)?;
    println!("sigma=0 dt=1e-4: {rep:?} ({:.1?})", start.elapsed());
    let metric = WeakResidualMetric {
        field: &field,
        b0: &b0,
        sigma: 0.1,
        t: 0.5,
        dt: 1e-3,
        phi,
        quad: QuadratureSpec {
            spacing: 1.0,
            check_resolution: false,
        },
        extrapolate: true,
    };
    let start = Instant::now();
    let stats = run_ensemble(&metric, &EnsembleSpec::new(replicates, 77))?;
    println!(
        "sigma=0.1: mean {:.3e} se {:.3e} z {:.2} quantiles {:?} ({:.1?})",
        stats.mean,
        stats.std_err,
        stats.mean / stats.std_err,
        stats.quantiles,
        start.elapsed()
    );
    let path = sample_brownian(5, 1e-3, 500)?;
    let rep = weak_form_residual(&b0, &field, &path, 0.1, 0.5, &phi, &QuadratureSpec::default(), 1e-2)?;
    println!("one noisy replicate: {rep:?}");
    Ok(())
}

fn bias(replicates: usize) -> Result<()> {
    let field = holder_velocity(0.5, HolderRotationField::DEFAULT_GAMMA)?;
    let b0 = InitialField::preset("constant_ex")?;
    let phi = BumpTestFunction::new(Vec3::new(0.5, 0.0, 0.0), 0.1)?;
    let quad = QuadratureSpec {
        spacing: 1.0,
        check_resolution: false,
    };
    let tiny = BrownianPath::zero(1e-3, 500)?;
    let det_em = weak_form_residual(&b0, &field, &tiny, 1e-12, 0.5, &phi, &quad, 1e-2)?;
    let det_em2 = weak_form_residual(&b0, &field, &tiny.coarsen(2)?, 1e-12, 0.5, &phi, &quad, 1e-2)?;
    println!("EM, no noise: R(1e-3) {:.3e}, R(2e-3) {:.3e}, nodes {}", det_em.residual, det_em2.residual, det_em.nodes);
    let start = Instant::now();
    let mut rows = Vec::new();
    for i in 0..replicates {
        let path = sample_brownian(montecarlo::split_seed(77, i as u64), 5e-4, 1000)?;
        let mut r = [0.0; 3];
        for (j, f) in [1, 2, 4].into_iter().enumerate() {
            r[j] = weak_form_residual(&b0, &field, &path.coarsen(f)?, 0.1, 0.5, &phi, &quad, 1e-2)?.residual;
        }
        rows.push([r[0], r[1], r[2], 2.0 * r[1] - r[2], 2.0 * r[0] - r[1]]);
    }
    let names = ["R(5e-4)", "R(1e-3)", "R(2e-3)", "2R(1e-3)-R(2e-3)", "2R(5e-4)-R(1e-3)"];
    for (j, name) in names.iter().enumerate() {
        let v: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        println!("{name:>18}: mean {mean:.3e} se {se:.3e} z {:.2}", mean / se);
    }
    println!("({:.1?})", start.elapsed());
    Ok(())
}

fn weakgrid() -> Result<()> {
    let field = holder_velocity(0.5, HolderRotationField::DEFAULT_GAMMA)?;
    let b0 = InitialField::preset("constant_ex")?;
    let phi = BumpTestFunction::new(Vec3::new(0.5, 0.0, 0.0), 0.1)?;
    for dt in [0.1, 0.05, 0.025, 1e-3] {
        for spacing in [1.6, 1.2, 0.8] {
            let quad = QuadratureSpec {
                spacing,
                check_resolution: false,
            };
            let path = BrownianPath::zero(dt, BrownianPath::steps_for(0.5, dt)?)?;
            let rep = weak_form_residual(&b0, &field, &path, 0.0, 0.5, &phi, &quad, 1e-2)?;
            println!("dt {dt:e} spacing {spacing}: residual {:.3e} relative {:.3e} nodes {}", rep.residual, rep.relative, rep.nodes);
        }
    }
    Ok(())
}

fn det() -> Result<()> {
    use rand::{Rng, SeedableRng};
    for alpha in [0.2, 0.5] {
        let field = holder_velocity(alpha, HolderRotationField::DEFAULT_GAMMA)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for sigma in [0.0, 0.1] {
            let mut worst = (0.0_f64, 0.0_f64);
            for i in 0..100 {
                // uniform in volume over the shell 0.05 <= r <= 2
                let r = rng.random_range(0.05f64.powi(2)..4.0).sqrt();
                let th = rng.random_range(0.0..std::f64::consts::TAU);
                let z = rng.random_range(-1.0..1.0);
                let x0 = CylPoint::new(r, th, z).to_cartesian();
                let path = sample_brownian(i, 1e-4, 10_000)?;
                for (k, method) in [JacobianMethod::Variational, JacobianMethod::finite_difference()].into_iter().enumerate() {
                    let j = flow_jacobian(&field, x0, &path, sigma, method)?;
                    let dev = (j[10_000].det() - 1.0).abs();
                    if k == 0 {
                        worst.0 = worst.0.max(dev);
                    } else {
                        worst.1 = worst.1.max(dev);
                    }
                }
            }
            println!("alpha {alpha} sigma {sigma}: max |det-1| variational {:.3e}, fd {:.3e}", worst.0, worst.1);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n = args.get(2).and_then(|s| s.parse().ok());
    match args.get(1).map(String::as_str) {
        Some("suppression") => suppression(n.unwrap_or(256)),
        Some("lines") => lines(),
        Some("weak") => weak(n.unwrap_or(64)),
        Some("det") => det(),
        Some("weakgrid") => weakgrid(),
        Some("bias") => bias(n.unwrap_or(16)),
        _ => {
            eprintln!("usage: pilots <suppression|lines|weak|bias|weakgrid|det> [replicates]");
            Ok(())
        }
    }
}
