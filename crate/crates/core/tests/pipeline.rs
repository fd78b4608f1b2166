use nalgebra::DMatrix;
use proptest::prelude::*;

use vehid::commands::{cmd_pilot, cmd_simulate, ThetaChoice, TRAJECTORY_FILE};
use vehid::config::ExperimentConfig;
use vehid::excitation::RngStream;
use vehid::inference::{rejection_abc, run_snpe, LinearGaussianSimulator, MdnPosterior, PriorBox, TrainConfig};
use vehid::io::read_trajectory;
use vehid::summaries::default_layout;

fn toy() -> (LinearGaussianSimulator, PriorBox) {
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, -0.5]);
    let sigma = DMatrix::from_diagonal_element(3, 3, 0.04);
    let prior = PriorBox::new(vec!["a".into(), "b".into()], vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
    (LinearGaussianSimulator::new(a, sigma).unwrap(), prior)
}

fn ks_uniform(mut v: Vec<f64>, lo: f64, hi: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn abc_keeping_everything_reproduces_the_prior() {
    let (sim, prior) = toy();
    let r = rejection_abc(&sim, &prior, &[0.0, 1.0, 0.0], 10_000, 1.0, RngStream::new(1, 0)).unwrap();
    assert_eq!(r.samples.len(), 10_000);
    for k in 0..2 {
        let d = ks_uniform(r.samples.iter().map(|s| s[k]).collect(), prior.lower[k], prior.upper[k]);
        assert!(d < 0.02, "KS distance {d} for dimension {k}");
    }
}

#[test]
fn abc_row_count_follows_fraction() {
    let (sim, prior) = toy();
    for (n, f, want) in [(1000, 0.01, 10), (999, 0.1, 100), (7, 0.5, 4)] {
        let r = rejection_abc(&sim, &prior, &[0.0; 3], n, f, RngStream::new(2, 0)).unwrap();
        assert_eq!(r.samples.len(), want);
        assert!(r.distances.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn posterior_model_file_round_trips() {
    let (sim, prior) = toy();
    let config = TrainConfig {
        rounds: 2,
        sims_per_round: 300,
        pilot_sims: 100,
        posterior_samples: 50,
        epochs: 5,
        hidden: vec![8, 8],
        components: 2,
        ..TrainConfig::default()
    };
    let x = [0.2, 1.1, -0.4];
    let mut per_round = Vec::new();
    let result = run_snpe(&sim, &prior, &x, None, &config, RngStream::new(3, 0), &mut |r, _| {
        per_round.push(r.round)
    })
    .unwrap();
    assert_eq!(per_round, vec![1, 2]);
    assert_eq!(result.samples.len(), 50);
    assert!(result.samples.iter().all(|s| prior.contains(s)));
    let back = MdnPosterior::from_json(&result.posterior.to_json().unwrap()).unwrap();
    assert_eq!(back, result.posterior);
    let theta = [0.1, 1.0];
    assert_eq!(back.log_prob(&theta, &x), result.posterior.log_prob(&theta, &x));
}

#[test]
fn pilot_normalizer_covers_the_summary_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.train.pilot_sims = 40;
    let n = cmd_pilot(&cfg, tmp.path()).unwrap();
    assert_eq!(n.dim(), 35);
    assert_eq!(n.layout, default_layout());
    assert!(n.std.iter().all(|s| *s > 0.0));
    let again = cmd_pilot(&cfg, &tmp.path().join("again")).unwrap();
    assert_eq!(
        std::fs::read(tmp.path().join("normalizer.json")).unwrap(),
        std::fs::read(tmp.path().join("again/normalizer.json")).unwrap()
    );
    assert_eq!(n, again);
}

#[test]
fn simulated_observation_reads_back() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { seed: 4, ..Default::default() };
    let out = cmd_simulate(&cfg, &ThetaChoice::Sample, tmp.path()).unwrap();
    assert!(cfg.prior.contains(&out.meta.theta.to_array()));
    let (record, meta) = read_trajectory(&tmp.path().join(TRAJECTORY_FILE)).unwrap();
    assert_eq!(record.channels, out.record.channels);
    assert_eq!(record.t, out.record.t);
    assert_eq!(meta.unwrap(), out.meta);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_cube_map_inverts(u in proptest::collection::vec(0.0f64..=1.0, 6)) {
        let prior = PriorBox::vehicle_default();
        let theta = prior.from_unit(&u);
        prop_assert!(prior.contains(&theta));
        for (a, b) in prior.to_unit(&theta).iter().zip(&u) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn abc_accepts_exactly_the_requested_count(n in 1usize..200, f in 0.01f64..=1.0) {
        let (sim, prior) = toy();
        let keep = vehid::inference::abc::accepted_count(n, f);
        prop_assume!(keep > 0);
        let r = rejection_abc(&sim, &prior, &[0.0; 3], n, f, RngStream::new(n as u64, 1)).unwrap();
        prop_assert_eq!(r.samples.len(), keep);
        prop_assert!(r.samples.iter().all(|s| prior.contains(s)));
    }
}
