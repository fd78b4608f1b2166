//! Acceptance suite. Run all criteria with `cargo test --test acceptance`, or
//! a subset with `cargo test --test acceptance -- 4 8`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use vehid::commands::{cmd_analyze, cmd_infer, cmd_simulate, ThetaChoice, POSTERIOR_SAMPLES_FILE, TRAJECTORY_FILE};
use vehid::config::ExperimentConfig;
use vehid::excitation::{ExcitationProfile, RngStream};
use vehid::inference::train::{atomic_loss_with_atoms, draw_atoms, nll_loss};
use vehid::inference::{
    pilot_normalizer, rejection_abc, run_snpe, LinearGaussianSimulator, MdnModel, Normalized, PriorBox, Subset,
    SummarySimulator, TrainConfig,
};
use vehid::observability::{fisher_matrix, FisherSettings};
use vehid::simulator::propagate;
use vehid::vehicle::{
    dugoff_forces, dugoff_saturation, resolve_params, rolling_equilibrium, IdentifiedParams, VehicleConstants,
    VehicleState, STATE_DIM,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for eps in [1e-3, 1e-6, 1e-9] {
        let gap = (dugoff_saturation(1.0 - eps) - 1.0).abs();
        pass &= gap <= 2.0 * eps;
        worst = worst.max(gap / eps);
    }
    Outcome { pass, detail: format!("max |f(1-eps)-1|/eps = {worst:.3e} (limit 2)") }
}

fn criterion_2() -> Outcome {
    let mu = VehicleConstants::default().friction;
    let mut rng = RngStream::new(2, 0).rng();
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..100_000 {
        let kappa = rng.random_range(-0.95..1.0);
        let alpha = rng.random_range(-0.6..0.6);
        let fz = rng.random_range(100.0..10_000.0);
        let ck = rng.random_range(2e4..3e5);
        let ca = rng.random_range(2e4..3e5);
        let (fx, fy) = dugoff_forces(kappa, alpha, fz, ck, ca, mu).unwrap();
        let ratio = fx.hypot(fy) / (mu * fz);
        worst = worst.max(ratio);
        violations += (ratio > 1.0 + 1e-9) as usize;
    }
    Outcome { pass: violations == 0, detail: format!("{violations} violations, max |F|/(mu Fz) = {worst:.12}") }
}

fn noise_free_states(profile: &ExcitationProfile, substeps: usize) -> Vec<VehicleState> {
    let c = VehicleConstants::default();
    let eff = resolve_params(&c, &IdentifiedParams::nominal(), &[0.0; 4]).unwrap();
    let s0 = rolling_equilibrium(10.5, &eff, &c).unwrap();
    // 100 Hz output: substeps 5, 10, 20 give 2, 1, 0.5 ms; 1000 gives 0.01 ms.
    propagate(&eff, &c, profile, s0, 100.0, substeps, 500).unwrap().0
}

fn criterion_3() -> Outcome {
    let profile = ExcitationProfile::default();
    let reference = noise_free_states(&profile, 1000);
    let mut scale = [0.0f64; STATE_DIM];
    for s in &reference {
        for (m, v) in scale.iter_mut().zip(s.to_array()) {
            *m = m.max(v.abs());
        }
    }
    let mut points = Vec::new();
    for (dt, substeps) in [(2e-3f64, 5usize), (1e-3, 10), (5e-4, 20)] {
        let states = noise_free_states(&profile, substeps);
        let mut err: f64 = 0.0;
        for (s, r) in states.iter().zip(&reference) {
            for ((a, b), m) in s.to_array().iter().zip(r.to_array()).zip(scale) {
                err = err.max((a - b).abs() / m.max(1e-12));
            }
        }
        points.push((dt.ln(), err.ln()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let order = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();

    let quiet = ExcitationProfile { steer_amplitude: 0.0, torque_amplitude: 0.0, ..Default::default() };
    let c = VehicleConstants::default();
    let eff = resolve_params(&c, &IdentifiedParams::nominal(), &[0.0; 4]).unwrap();
    let s0 = rolling_equilibrium(10.5, &eff, &c).unwrap();
    let (states, _) = propagate(&eff, &c, &quiet, s0, 200.0, 5, 1000).unwrap();
    let drift = states
        .iter()
        .flat_map(|s| s.to_array().into_iter().zip(s0.to_array()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let errs: Vec<String> = points.iter().map(|p| format!("{:.2e}", p.1.exp())).collect();
    Outcome {
        pass: order >= 3.5 && drift < 1e-9,
        detail: format!("order {order:.2} (errors {}), equilibrium drift {drift:.2e}", errs.join(", ")),
    }
}

fn surrogate() -> LinearGaussianSimulator {
    let mut rng = RngStream::new(20, 0).rng();
    let a = DMatrix::from_fn(10, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma = DMatrix::from_diagonal_element(10, 10, 0.25);
    LinearGaussianSimulator::new(a, sigma).unwrap()
}

fn wide_prior(d: usize) -> PriorBox {
    PriorBox::new((0..d).map(|i| format!("t{i}")).collect(), vec![-3.0; d], vec![3.0; d]).unwrap()
}

fn mean_std(samples: &[Vec<f64>], k: usize) -> (f64, f64) {
    let n = samples.len() as f64;
    let m = samples.iter().map(|s| s[k]).sum::<f64>() / n;
    let v = samples.iter().map(|s| (s[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn criterion_4() -> Outcome {
    let sim = surrogate();
    let prior = wide_prior(6);
    let config = TrainConfig { rounds: 3, sims_per_round: 2000, ..TrainConfig::default() };
    let mut passes = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let stream = RngStream::new(400 + seed, 0);
        let mut rng = stream.derive("truth", 0).rng();
        let truth: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x_obs = sim.simulate(&truth, stream.derive("observation", 0)).unwrap();
        let (mean, cov) = sim.posterior(&x_obs).unwrap();
        let result = run_snpe(&sim, &prior, &x_obs, None, &config, stream, &mut |_, _| {}).unwrap();
        let mut worst_mean: f64 = 0.0;
        let mut worst_std: f64 = 0.0;
        for k in 0..6 {
            let (m, s) = mean_std(&result.samples, k);
            let sd = cov[(k, k)].sqrt();
            worst_mean = worst_mean.max((m - mean[k]).abs() / sd);
            worst_std = worst_std.max((s / sd - 1.0).abs());
        }
        let ok = worst_mean <= 0.2 && worst_std <= 0.3;
        passes += ok as usize;
        lines.push(format!("seed {seed}: mean err {worst_mean:.3} std, std err {:.1}%", 100.0 * worst_std));
    }
    Outcome { pass: passes >= 4, detail: format!("{passes}/5 seeds [{}]", lines.join("; ")) }
}

fn criterion_5() -> Outcome {
    let mut rng = RngStream::new(5, 0).rng();
    let mut model = MdnModel::new(35, &[50, 50], 6, 8, &mut rng);
    let n = 24;
    let thetas: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random()).collect()).collect();
    let xs: Vec<Vec<f64>> =
        (0..n).map(|_| (0..35).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let from_prior: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    let t: Vec<&[f64]> = thetas.iter().map(|v| v.as_slice()).collect();
    let x: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let atoms = draw_atoms(n, 10, &mut rng);

    let mut details = Vec::new();
    let mut pass = true;
    for (name, combined) in [("likelihood", None), ("atomic", Some(false)), ("combined", Some(true))] {
        let loss = |m: &MdnModel, g: Option<&mut [f64]>| match combined {
            None => nll_loss(m, &t, &x, g),
            Some(c) => atomic_loss_with_atoms(m, &t, &x, &atoms, c.then_some(from_prior.as_slice()), g),
        };
        let mut grad = vec![0.0; model.weights.len()];
        loss(&model, Some(&mut grad));
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let i = rng.random_range(0..model.weights.len());
            let h = 1e-5;
            let w0 = model.weights[i];
            model.weights[i] = w0 + h;
            let up = loss(&model, None);
            model.weights[i] = w0 - h;
            let down = loss(&model, None);
            model.weights[i] = w0;
            let fd = (up - down) / (2.0 * h);
            // Relative to the larger magnitude, with a floor for coordinates
            // whose gradient is below the finite-difference noise level.
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            worst = worst.max(err);
        }
        pass &= worst <= 1e-5;
        details.push(format!("{name} {worst:.2e}"));
    }
    Outcome { pass, detail: format!("35-50-50-224 network, worst relative error: {}", details.join(", ")) }
}

fn criterion_6() -> Outcome {
    let cfg = ExperimentConfig::default();
    let truth = IdentifiedParams::nominal().to_array().to_vec();
    let dims = vec![0, 4];
    let prior = cfg.prior.select(&dims);
    let sub = Subset { inner: cfg.simulator(), base: truth.clone(), dims: dims.clone() };
    let stream = RngStream::new(600, 0);
    let norm = pilot_normalizer(&sub, &prior, 1000, stream).unwrap().normalizer;
    let x_raw = sub.simulate(&[truth[0], truth[4]], stream.derive("observation", 0)).unwrap();

    let normalized = Normalized { inner: &sub, normalizer: norm.clone() };
    let abc = rejection_abc(&normalized, &prior, &norm.apply(&x_raw), 20_000, 0.01, stream.derive("abc", 0)).unwrap();
    let config = TrainConfig { rounds: 3, sims_per_round: 2000, ..TrainConfig::default() };
    let snpe = run_snpe(&sub, &prior, &x_raw, Some(norm), &config, stream, &mut |_, _| {}).unwrap();

    let mut pass = true;
    let mut lines = Vec::new();
    for k in 0..2 {
        let (ma, sa) = mean_std(&abc.samples, k);
        let (ms, ss) = mean_std(&snpe.samples, k);
        let pooled = ((sa * sa + ss * ss) / 2.0).sqrt();
        let gap = (ma - ms).abs() / pooled;
        pass &= gap <= 0.5;
        lines.push(format!(
            "{}: abc {ma:.4}+-{sa:.4}, snpe {ms:.4}+-{ss:.4}, gap {gap:.2} pooled std",
            prior.names[k]
        ));
    }
    Outcome { pass, detail: format!("{} ABC draws; {}", abc.samples.len(), lines.join("; ")) }
}

fn criterion_7() -> Outcome {
    let cfg = ExperimentConfig::default();
    let sim = cfg.simulator();
    let prior = &cfg.prior;
    let width: Vec<f64> = prior.widths();
    let mut counts = [0usize; 3];
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let stream = RngStream::new(700 + seed, 0);
        let truth = prior.sample(&mut stream.derive("truth", 0).rng());
        let x_obs = match sim.simulate(&truth, stream.derive("observation", 0)) {
            Some(x) => x,
            None => {
                lines.push(format!("seed {seed}: observation run failed"));
                continue;
            }
        };
        let result = match run_snpe(&sim, prior, &x_obs, None, &cfg.train, stream, &mut |_, _| {}) {
            Ok(r) => r,
            Err(e) => {
                lines.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let stats: Vec<(f64, f64)> = (0..6).map(|k| mean_std(&result.samples, k)).collect();
        let (m_lf, s_lf) = stats[0];
        let a = (truth[0] - m_lf).abs() <= 3.0 * s_lf && s_lf <= 0.1;
        let b = stats[3].1 > stats[2].1;
        let mut rel: Vec<(f64, usize)> = (0..6).map(|k| (stats[k].1 / width[k], k)).collect();
        rel.sort_by(|x, y| y.0.total_cmp(&x.0));
        let rank_h = rel.iter().position(|r| r.1 == 1).unwrap() + 1;
        let c = rank_h <= 2;
        for (n, ok) in counts.iter_mut().zip([a, b, c]) {
            *n += ok as usize;
        }
        let stds: Vec<String> = stats.iter().map(|s| format!("{:.3}", s.1)).collect();
        lines.push(format!(
            "seed {seed}: l_f {:.3} vs {m_lf:.3}+-{s_lf:.3} [{}], std(d_Ckr)/std(d_Ckf) {:.2} [{}], h_cog rank {rank_h} [{}], stds [{}]",
            truth[0],
            if a { "ok" } else { "x" },
            stats[3].1 / stats[2].1,
            if b { "ok" } else { "x" },
            if c { "ok" } else { "x" },
            stds.join(" ")
        ));
    }
    Outcome {
        pass: counts.iter().all(|&n| n >= 4),
        detail: format!("(a) {}/5, (b) {}/5, (c) {}/5; {}", counts[0], counts[1], counts[2], lines.join("; ")),
    }
}

fn criterion_8() -> Outcome {
    let sim = surrogate();
    let names: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
    let settings = FisherSettings { n_sims: 2000, ..FisherSettings::default() };
    let theta = vec![0.3, -0.2, 0.1, 0.5, -0.4, 0.0];
    let report = fisher_matrix(&sim, &names, &theta, &[0.05; 6], &settings, None, RngStream::new(800, 0)).unwrap();
    let analytic = sim.fisher();
    let rel = (report.matrix() - &analytic).norm() / analytic.norm();
    let a = rel <= 0.05;
    // Spread of the same estimate over independent seeds, reported only.
    let mut spread: Vec<f64> = (1..=20u64)
        .map(|s| {
            let r = fisher_matrix(&sim, &names, &theta, &[0.05; 6], &settings, None, RngStream::new(800 + s, 0)).unwrap();
            (r.matrix() - &analytic).norm() / analytic.norm()
        })
        .collect();
    spread.sort_by(f64::total_cmp);

    let vehicle_condition = |braking: bool| {
        let mut cfg = ExperimentConfig::default();
        cfg.excitation.braking = braking;
        let stream = RngStream::new(801, 0);
        let norm = pilot_normalizer(&cfg.simulator(), &cfg.prior, 1000, stream).unwrap().normalizer;
        let sim = Normalized { inner: cfg.simulator(), normalizer: norm };
        fisher_matrix(
            &sim,
            &cfg.prior.names,
            &IdentifiedParams::nominal().to_array(),
            &cfg.fisher.fd_steps(&cfg.prior),
            &cfg.fisher,
            Some(&cfg.prior),
            stream.derive("fisher", 0),
        )
        .unwrap()
    };
    let with = vehicle_condition(true);
    let without = vehicle_condition(false);
    let b = !with.singular;
    let cond = |r: &vehid::observability::FisherReport| r.condition_number.map_or("inf".into(), |c| format!("{c:.3e}"));
    Outcome {
        pass: a && b,
        detail: format!(
            "(a) surrogate relative error {rel:.4} (20 other seeds: median {:.4}, max {:.4}); (b) vehicle eigenvalues {:.3e}..{:.3e}, condition {} (without braking {}, min eigenvalue {:.3e})",
            spread[10],
            spread[19],
            with.eigenvalues[0],
            with.eigenvalues[5],
            cond(&with),
            cond(&without),
            without.eigenvalues[0]
        ),
    }
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed: 9, ..Default::default() };
    cfg.train = TrainConfig {
        rounds: 2,
        sims_per_round: 300,
        pilot_sims: 200,
        posterior_samples: 300,
        epochs: 20,
        ..TrainConfig::default()
    };
    cfg
}

fn run_pipeline(cfg: &ExperimentConfig, out: &Path) {
    cmd_simulate(cfg, &ThetaChoice::Sample, out).unwrap();
    cmd_infer(cfg, &out.join(TRAJECTORY_FILE), None, out).unwrap();
    let truth = vehid::commands::truth_from_observation(&out.join(TRAJECTORY_FILE)).unwrap();
    cmd_analyze(cfg, &out.join(POSTERIOR_SAMPLES_FILE), truth, &out.join("analysis")).unwrap();
}

fn collect_files(dir: &Path, prefix: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, prefix, out);
        } else {
            out.push((p.strip_prefix(prefix).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
}

fn criterion_9() -> Outcome {
    let cfg = small_config();
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        run_pipeline(&cfg, &dir);
        let mut files = Vec::new();
        collect_files(&dir, &dir, &mut files);
        runs.push(files);
    }
    let names: Vec<&str> = runs[0].iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> =
        runs[0].iter().zip(&runs[1]).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let pass = runs[0].len() == runs[1].len() && differing.is_empty() && names.len() > 5;
    Outcome {
        pass,
        detail: format!("{} files compared, {} differ {:?}", names.len(), differing.len(), differing),
    }
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "Dugoff branch continuity", criterion_1),
        (2, "friction circle", criterion_2),
        (3, "integrator order and equilibrium drift", criterion_3),
        (4, "conjugate-Gaussian posterior recovery", criterion_4),
        (5, "loss gradient correctness", criterion_5),
        (6, "ABC and SNPE agreement on two parameters", criterion_6),
        (7, "six-parameter identification properties", criterion_7),
        (8, "Fisher observability", criterion_8),
        (9, "end-to-end determinism", criterion_9),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let status = if out.pass { "PASS" } else { "FAIL" };
        failed += !out.pass as usize;
        println!("{status} criterion {id} ({name}) [{:.1}s]: {}", start.elapsed().as_secs_f64(), out.detail);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
