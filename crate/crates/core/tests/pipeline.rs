use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phdnet::experiment::{run_experiment, track, Algorithm, ExperimentConfig};
use phdnet::phd::{filter_step, PhdConfig};
use phdnet::scenario::{generate_ground_truth, generate_measurement_stream, Scenario};
use phdnet::seed::SeedTree;
use phdnet::GaussianMixture;

fn small(algorithm: Algorithm, alpha: usize) -> ExperimentConfig {
    ExperimentConfig { algorithm, alpha, mc_runs: 2, jobs: 1, ..ExperimentConfig::reference() }
}

#[test]
fn streams_depend_only_on_the_seed() {
    let sc = Scenario::reference();
    let seeds = SeedTree::new(5).at("run", 3);
    let a = generate_ground_truth(&sc.config, &seeds);
    let b = generate_ground_truth(&sc.config, &seeds);
    assert_eq!(a, b);
    assert_eq!(
        generate_measurement_stream(&a, &sc.config, &seeds),
        generate_measurement_stream(&b, &sc.config, &seeds)
    );
    let other = generate_measurement_stream(&a, &sc.config, &SeedTree::new(6).at("run", 3));
    assert_ne!(generate_measurement_stream(&a, &sc.config, &seeds), other);
}

fn sorted_components(gm: &GaussianMixture) -> Vec<(f64, Vec<f64>)> {
    let mut v: Vec<(f64, Vec<f64>)> = gm.iter().map(|c| (c.weight(), c.mean().iter().cloned().collect())).collect();
    v.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]).then(a.1[1].total_cmp(&b.1[1])));
    v
}

#[test]
fn filter_ignores_measurement_order() {
    let sc = Scenario::reference();
    let seeds = SeedTree::new(11).at("run", 0);
    let truth = generate_ground_truth(&sc.config, &seeds);
    let frames = generate_measurement_stream(&truth, &sc.config, &seeds);
    let m = &sc.models;
    let cfg = PhdConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut a, mut b) = (GaussianMixture::empty(4), GaussianMixture::empty(4));
    for f in frames.iter().take(15) {
        let z = &f.per_sensor[0];
        let mut shuffled = z.clone();
        shuffled.shuffle(&mut rng);
        a = filter_step(&a, &m.motion, &m.birth, &m.spawn, &m.sensor, z, &cfg).unwrap();
        b = filter_step(&b, &m.motion, &m.birth, &m.spawn, &m.sensor, &shuffled, &cfg).unwrap();
        let (ca, cb) = (sorted_components(&a), sorted_components(&b));
        assert_eq!(ca.len(), cb.len());
        for ((wa, ma), (wb, mb)) in ca.iter().zip(&cb) {
            assert!((wa - wb).abs() <= 1e-9 * wa.max(1.0));
            for (x, y) in ma.iter().zip(mb) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }
}

#[test]
fn experiments_are_reproducible_and_independent_of_parallelism() {
    let cfg = small(Algorithm::SampleReplacement, 2);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&ExperimentConfig { jobs: 2, ..cfg.clone() }).unwrap();
    assert!(a.failures.is_empty());
    assert_eq!(a.per_run_ospa(), b.per_run_ospa());
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_runs_csv(&mut ca).unwrap();
    b.write_runs_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn tracking_recorded_measurements_matches_the_simulation() {
    let cfg = small(Algorithm::PartialRank, 1);
    let scenario = Scenario::reference();
    let seeds = SeedTree::new(cfg.master_seed).at("run", 1);
    let truth = generate_ground_truth(&scenario.config, &seeds);
    let frames = generate_measurement_stream(&truth, &scenario.config, &seeds);
    let steps = track(&cfg, &scenario, &frames, &seeds).unwrap();
    assert_eq!(steps.len(), scenario.config.horizon);
    for s in &steps {
        assert!(s.transmissions.iter().all(|t| t.distinct <= cfg.bandwidth));
    }
    let result = run_experiment(&cfg).unwrap();
    let run = result.runs.iter().find(|r| r.run == 1).unwrap();
    let last = steps.last().unwrap();
    let from_track: Vec<usize> = last.estimates.iter().map(Vec::len).collect();
    let from_run: Vec<usize> = run.steps.iter().filter(|s| s.timestep == 40).map(|s| s.extracted).collect();
    assert_eq!(from_track, from_run);
}

#[test]
fn every_run_stays_within_cutoff() {
    let result = run_experiment(&small(Algorithm::Full, 1)).unwrap();
    for run in &result.runs {
        assert!(run.steps.iter().all(|s| s.ospa_m >= 0.0 && s.ospa_m <= 100.0));
        assert!(run.time_averaged_ospa <= 100.0);
    }
}
