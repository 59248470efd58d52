use msafe::cv::CvGrid;
use msafe::pipeline::{predict, run_full, Mode, RunConfig};
use msafe::synth::{synthetic_dataset, SyntheticConfig};

fn data() -> msafe::signal::Dataset {
    let d = synthetic_dataset(&SyntheticConfig {
        sensors: 4,
        observations: 60,
        duration: 4.0,
        ..Default::default()
    })
    .unwrap();
    // response driven by the recent mean of sensor 3
    let y = d
        .times()
        .iter()
        .map(|&t| {
            let s = d.signal(2);
            let w = d.window();
            (0..8).map(|i| s.eval(t - w * i as f64 / 8.0).unwrap()).sum::<f64>() / 8.0
        })
        .collect();
    d.with_responses(y).unwrap()
}

fn quick(mode: Mode) -> RunConfig {
    let base = if mode == Mode::Spline { RunConfig::spline() } else { RunConfig::default() };
    RunConfig {
        stages: 2,
        q: 6,
        t_dim: 6,
        grids: CvGrid::default().coarsened(8.0),
        ..base
    }
}

#[test]
fn strong_single_sensor_is_found() {
    let d = data();
    for mode in [Mode::Multiscale, Mode::Spline] {
        let cfg = quick(mode);
        let fit = run_full(&d, &cfg).unwrap();
        assert!(fit.selected.contains(&2), "{mode:?} selected {:?}", fit.selected);
        assert!(fit.cv_mse.is_finite() && fit.cv_mse > 0.0);
        let var = {
            let y = d.responses();
            let m = y.iter().sum::<f64>() / y.len() as f64;
            y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64
        };
        assert!(fit.cv_mse < 0.5 * var, "{mode:?}: cv {} vs variance {var}", fit.cv_mse);
        let yhat = predict(&fit, &d, &cfg).unwrap();
        assert_eq!(yhat.len(), d.n_obs());
        // stages only shrink the candidate set
        for w in fit.stages.windows(2) {
            assert!(w[1].candidates.iter().all(|k| w[0].active.contains(k)));
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let d = data();
    let cfg = quick(Mode::Multiscale);
    let a = run_full(&d, &cfg).unwrap();
    let b = run_full(&d, &cfg).unwrap();
    assert_eq!(a.selected, b.selected);
    assert_eq!(a.cv_mse.to_bits(), b.cv_mse.to_bits());
    let (ea, eb) = (a.estimate.unwrap(), b.estimate.unwrap());
    assert_eq!(ea.betas, eb.betas);
}

#[test]
fn window_mismatch_is_rejected() {
    let d = data();
    let cfg = RunConfig { window: 0.25, ..quick(Mode::Multiscale) };
    assert!(run_full(&d, &cfg).is_err());
}
