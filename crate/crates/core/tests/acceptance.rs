//! Acceptance criteria. Prints one PASS/FAIL line per criterion.
//!
//! The binary exits successfully either way so that the workspace test run
//! stays usable; set `ACCEPTANCE_STRICT=1` to fail on any FAIL line.

use std::time::{Duration, Instant};

use msafe::assembly::{truncation_error, Assembler};
use msafe::basis::{build_multiscale_basis, decay_constant, project, CollocationSeed};
use msafe::bench::entry_stats;
use msafe::cv::CvGrid;
use msafe::lasso::{substitute, GroupProblem, SolverOptions, Storage};
use msafe::penalty::PenaltyMatrix;
use msafe::pipeline::{assemble_all, run_full, Bases, Mode, Model, RunConfig};
use msafe::signal::{Dataset, PositionMap};
use msafe::sim::{run_sim, sample_noise, sigma_for_snr, NoiseModel, SimSettings};
use msafe::sparse::CsrMatrix;
use msafe::synth::{synthetic_dataset, SyntheticConfig, Truth};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

struct Outcome {
    pass: bool,
    detail: String,
}

/// `ACCEPTANCE_ONLY=5,6` restricts the run to the listed criteria.
fn selected(id: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        Err(_) => true,
    }
}

fn criterion(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> Option<bool> {
    if !selected(id) {
        println!("SKIP [{id}] {name}");
        return None;
    }
    let clock = Instant::now();
    let out = f();
    let took = clock.elapsed();
    let in_time = took <= limit;
    let pass = out.pass && in_time;
    let timing = if in_time {
        format!("{:.1}s", took.as_secs_f64())
    } else {
        format!("{:.1}s exceeds {:.0}s", took.as_secs_f64(), limit.as_secs_f64())
    };
    println!(
        "{} [{id}] {name}: {} ({timing})",
        if pass { "PASS" } else { "FAIL" },
        out.detail
    );
    Some(pass)
}

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        sxy += (i as f64 - mx) * (y - my);
        sxx += (i as f64 - mx).powi(2);
    }
    sxy / sxx
}

fn noisy_dataset(seed: u64) -> Dataset {
    let truth = Truth::fixture();
    let d = synthetic_dataset(&SyntheticConfig::default()).unwrap();
    let clean = truth.clean_response(&d).unwrap();
    let model = NoiseModel {
        theta: 0.25,
        eta: 10.0,
        sigma_h: sigma_for_snr(&clean, 10.0, 0.25),
        len: d.n_obs(),
    };
    let noise = sample_noise(&model, seed).unwrap();
    d.with_responses(clean.iter().zip(&noise).map(|(a, b)| a + b).collect()).unwrap()
}

fn basis_suite() -> Outcome {
    let (mut moment, mut interp, mut ortho) = (0.0f64, 0.0f64, 0.0f64);
    let seed = CollocationSeed::cubic();
    for (i, w) in seed.w0.iter().enumerate() {
        for (j, &t) in seed.t_points.iter().enumerate() {
            let delta = if i == j { 1.0 } else { 0.0 };
            interp = interp.max((w.eval(t).unwrap() - delta).abs());
        }
    }
    for n in 0..=4 {
        let b = build_multiscale_basis(3, n).unwrap();
        for j in 0..b.len() {
            if b.level(j) >= 1 {
                for k in 0..=3 {
                    moment = moment.max(b.function(j).moment(k).abs());
                }
            }
            for i in 0..b.len() {
                if b.level(i) < b.level(j) {
                    ortho = ortho.max(b.gram()[(i, j)].abs());
                }
            }
        }
    }
    Outcome {
        pass: moment < 1e-12 && interp < 1e-12 && ortho < 1e-12,
        detail: format!("max moment {moment:.1e}, interpolation {interp:.1e}, cross-level inner product {ortho:.1e}"),
    }
}

fn decay_check() -> Outcome {
    let b = build_multiscale_basis(3, 4).unwrap();
    let coef = project(&b, |x| (std::f64::consts::TAU * x).sin());
    let cp = decay_constant(&b).unwrap();
    let fp = std::f64::consts::TAU.powi(3);
    let mut within = true;
    let mut logs = Vec::new();
    for level in 1..=4 {
        let m = (0..b.len())
            .filter(|&j| b.level(j) == level)
            .map(|j| coef[j].abs())
            .fold(0.0, f64::max);
        let bound = cp * 2f64.powi(-4 * level as i32) * fp;
        within &= m <= bound;
        logs.push(m.log2());
    }
    let s = slope(&logs);
    Outcome {
        pass: within && s <= -4.0 + 0.5,
        detail: format!("c_p = {cp:.3e}, bound holds on all levels: {within}, log2 slope {s:.2}"),
    }
}

fn truncation_check() -> Outcome {
    let data = noisy_dataset(7);
    let t = build_multiscale_basis(3, 4).unwrap();
    let z = msafe::basis::build_spline_basis(10).unwrap();
    let pm = PositionMap::fit(data.positions());
    let asm = Assembler::new(&data, &t, &z, &pm).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..data.n_sensors() {
        let full = asm.block(k, None).unwrap();
        let errs: Vec<f64> = (0..4).map(|m| truncation_error(&full, &t, m).unwrap().log2()).collect();
        worst = worst.max(slope(&errs));
    }
    // truncated (m = n - 1) against untruncated kernel estimates on the
    // true sensors; m = 0 reported for reference
    let truth = Truth::fixture().sensors();
    let cv = |m: Option<usize>| {
        let cfg = RunConfig {
            m,
            grids: CvGrid::default().coarsened(8.0),
            ..Default::default()
        };
        let bases = Bases::new(&cfg).unwrap();
        let assembled = assemble_all(&data, &bases, &cfg).unwrap();
        let model = Model::new(&cfg, &bases, &assembled, data.responses()).unwrap();
        model.estimate_kernels(&truth).unwrap().cv_mse
    };
    let full = cv(None);
    let gap = (cv(Some(1)) - full).abs() / full;
    let gap0 = (cv(Some(0)) - full).abs() / full;
    Outcome {
        pass: worst <= -3.0 + 0.5 && gap < 0.05,
        detail: format!(
            "worst per-sensor log2 slope {worst:.2}, CV gap m=1 vs full {:.2}% (m=0: {:.2}%)",
            100.0 * gap,
            100.0 * gap0
        ),
    }
}

/// `‖Σ Ã_k u_k − y‖² + λ Σ ‖u_k‖` minimized by accelerated proximal
/// gradient run to a fixed point.
fn oracle(a: &[DMatrix<f64>], y: &[f64], lambda: f64) -> (Vec<Vec<f64>>, f64) {
    let full = DMatrix::from_columns(&a.iter().flat_map(|m| m.column_iter().map(|c| c.into_owned())).collect::<Vec<_>>());
    let sizes: Vec<usize> = a.iter().map(|m| m.ncols()).collect();
    let yv = nalgebra::DVector::from_column_slice(y);
    let lip = 2.0 * (full.transpose() * &full).symmetric_eigen().eigenvalues.max() + 1e-12;
    let n = full.ncols();
    let (mut x, mut v) = (nalgebra::DVector::zeros(n), nalgebra::DVector::zeros(n));
    let mut t = 1.0f64;
    let prox = |w: nalgebra::DVector<f64>| {
        let mut out = w.clone();
        let mut off = 0;
        for &s in &sizes {
            let norm = w.rows(off, s).norm();
            let shrink = if norm > lambda / lip { 1.0 - lambda / (lip * norm) } else { 0.0 };
            out.rows_mut(off, s).scale_mut(shrink);
            off += s;
        }
        out
    };
    for _ in 0..200_000 {
        let grad = 2.0 * full.transpose() * (&full * &v - &yv);
        let next = prox(&v - grad / lip);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        v = &next + (&next - &x) * ((t - 1.0) / tn);
        let moved = (&next - &x).amax();
        x = next;
        t = tn;
        if moved < 1e-15 {
            break;
        }
    }
    let mut off = 0;
    let groups: Vec<Vec<f64>> = sizes
        .iter()
        .map(|&s| {
            let g = x.rows(off, s).iter().copied().collect();
            off += s;
            g
        })
        .collect();
    let r = &full * &x - &yv;
    let obj = r.norm_squared() + lambda * groups.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>();
    (groups, obj)
}

fn solver_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut worst_obj, mut worst_kkt) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(5..=20);
        let groups = rng.random_range(1..=5);
        let mut designs = Vec::new();
        let mut dense = Vec::new();
        for _ in 0..groups {
            let d = rng.random_range(1..=4);
            let a = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let pen = PenaltyMatrix::new(&b * b.transpose() + DMatrix::identity(d, d) * 0.5).unwrap();
            let g = substitute(&CsrMatrix::from_dense(&a), &pen, Storage::Dense).unwrap();
            dense.push(g.to_dense());
            designs.push(g);
        }
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let problem = GroupProblem::new(designs, y.clone()).unwrap();
        let lambda = rng.random_range(0.02..0.9) * problem.lambda_max();
        let opts = SolverOptions {
            tol: 1e-12,
            ..Default::default()
        };
        let sol = problem.solve(lambda, None, &opts).unwrap();
        let ours = problem.objective(&sol.u, lambda);
        let (_, reference) = oracle(&dense, &y, lambda);
        worst_obj = worst_obj.max((ours - reference).abs() / reference.abs().max(1.0));
        worst_kkt = worst_kkt.max(problem.kkt_residual(&sol.u, lambda));
    }
    Outcome {
        pass: worst_obj < 1e-6 && worst_kkt < 1e-7,
        detail: format!("50 instances, worst objective gap {worst_obj:.1e}, worst KKT residual {worst_kkt:.1e}"),
    }
}

fn recovery() -> Outcome {
    let defaults = SimSettings::default();
    let coarse = |c: RunConfig| RunConfig {
        grids: c.grids.coarsened(8.0),
        ..c
    };
    let settings = SimSettings {
        thetas: vec![0.25],
        etas: vec![10.0],
        replicates: 20,
        modes: vec![Mode::Multiscale],
        multiscale: coarse(defaults.multiscale.clone()),
        spline: coarse(defaults.spline.clone()),
        ..defaults
    };
    let report = run_sim(&settings, &Truth::fixture()).unwrap();
    let s = &report.summaries[0];
    Outcome {
        pass: s.mean_size <= 3.0 && s.truth_selected >= 19 && s.mean_false_positive <= 1.0,
        detail: format!(
            "J = {}, Mean Size {:.2}, truth selected {}/{}, Mean False Positive {:.2}",
            s.replicates, s.mean_size, s.truth_selected, s.replicates, s.mean_false_positive
        ),
    }
}

fn speedup() -> Outcome {
    let data = noisy_dataset(7);
    let grids = CvGrid::default().coarsened(8.0);
    let run = |cfg: RunConfig| {
        let clock = Instant::now();
        let fit = run_full(&data, &RunConfig { grids: grids.clone(), ..cfg }).unwrap();
        (clock.elapsed().as_secs_f64(), fit)
    };
    let (t_ms, ms) = run(RunConfig::default());
    let (t_sp, sp) = run(RunConfig::spline());
    let ratio = t_ms / t_sp;
    let rel = (ms.cv_mse - sp.cv_mse).abs() / sp.cv_mse;
    Outcome {
        pass: ratio <= 1.0 / 3.0 && rel <= 0.10,
        detail: format!(
            "multiscale {t_ms:.1}s vs spline {t_sp:.1}s (ratio {ratio:.3}), CV MSE {:.3e} vs {:.3e} ({:.1}% apart)",
            ms.cv_mse,
            sp.cv_mse,
            100.0 * rel
        ),
    }
}

fn sparsity() -> Outcome {
    let data = synthetic_dataset(&SyntheticConfig::default()).unwrap();
    let ms = entry_stats(&data, &RunConfig::default()).unwrap();
    let sp = entry_stats(&data, &RunConfig::spline()).unwrap();
    let ratio = ms.stored_small_fraction / sp.stored_small_fraction;
    Outcome {
        pass: ratio >= 2.0,
        detail: format!(
            "stored entries below 1e-3 max: multiscale {:.3} vs spline {:.3} (ratio {ratio:.2}); over all N x dim entries {:.3} vs {:.3}",
            ms.stored_small_fraction, sp.stored_small_fraction, ms.small_fraction, sp.small_fraction
        ),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::msafe(&["generate", "--out", data.to_str().unwrap()]);
    let report = |name: &str| {
        let out = dir.path().join(name);
        common::msafe(&[
            "run",
            "--signals",
            data.join("signals.csv").to_str().unwrap(),
            "--observations",
            data.join("observations.csv").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--stages",
            "2",
            "--coarsen",
            "8",
            "--seed",
            "11",
        ]);
        std::fs::read(out.join("report.json")).unwrap()
    };
    let (a, b) = (report("a"), report("b"));
    Outcome {
        pass: !a.is_empty() && a == b,
        detail: format!("{} and {} byte reports, identical: {}", a.len(), b.len(), a == b),
    }
}

fn main() {
    println!("acceptance criteria");
    let mins = |m: u64| Duration::from_secs(60 * m);
    let results = [
        criterion(1, "basis correctness", Duration::from_secs(5), basis_suite),
        criterion(2, "coefficient decay", Duration::from_secs(5), decay_check),
        criterion(3, "truncation bound", mins(2), truncation_check),
        criterion(4, "solver oracle", mins(2), solver_oracle),
        criterion(5, "recovery experiment", mins(30), recovery),
        criterion(6, "speedup", mins(60), speedup),
        criterion(7, "sparsity", mins(1), sparsity),
        criterion(8, "determinism", mins(10), determinism),
    ];
    let run: Vec<bool> = results.iter().flatten().copied().collect();
    let passed = run.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", run.len());
    if passed < run.len() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
