use pstm_core::bitdata::BinaryDataset;
use pstm_core::ensemble::{train_baseline, Presort};
use pstm_core::{
    evaluate, presort, BitVector, EarlyStop, EnsemblePlan, PresortConfig, PresortedEnsemble, RoutingMode, TmParams,
    TrainOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const F: usize = 32;
const PER_MODE: usize = 20;

/// Class c, mode m is a Hamming ball of radius 2 around 8 consecutive set
/// bits starting at 16c + 8m.
fn two_mode(seed: u64) -> (BinaryDataset, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut points, mut labels, mut modes) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..4 * PER_MODE {
        let (class, mode) = ((i / PER_MODE) / 2, (i / PER_MODE) % 2);
        let start = 16 * class + 8 * mode;
        let mut x = BitVector::from_bits((0..F).map(|b| (start..start + 8).contains(&b)));
        for _ in 0..rng.random_range(0..=2) {
            let b = rng.random_range(0..F);
            x.set(b, !x.get(b));
        }
        points.push(x);
        labels.push(class);
        modes.push(mode);
    }
    (BinaryDataset::new(points, labels, 2).unwrap(), modes)
}

fn params(clauses: usize, seed: u64) -> TmParams {
    TmParams {
        clauses_per_class: clauses,
        threshold: 8,
        specificity: 3.0,
        states: 100,
        epochs: 40,
        seed,
    }
}

fn sorted(data: &BinaryDataset, k: usize) -> Presort {
    let mut cfg = PresortConfig {
        k,
        ..PresortConfig::default()
    };
    cfg.dispersion.seed = 11;
    cfg.alignment.seed = 12;
    presort(data, &cfg).unwrap()
}

#[test]
fn each_machine_gets_one_mode_per_class() {
    let (data, modes) = two_mode(1);
    let p = sorted(&data, 2);
    assert_eq!(p.partitions.len(), 2);
    for part in &p.partitions {
        for class in 0..2 {
            let seen: Vec<usize> = part.iter().filter(|&&i| data.label(i) == class).map(|&i| modes[i]).collect();
            assert_eq!(seen.len(), PER_MODE, "class {class} split across machines");
            assert!(seen.iter().all(|&m| m == seen[0]));
        }
    }
}

#[test]
fn presort_is_deterministic() {
    let (data, _) = two_mode(2);
    assert_eq!(sorted(&data, 2), sorted(&data, 2));
}

#[test]
fn single_machine_is_the_baseline() {
    let (data, _) = two_mode(3);
    let p = sorted(&data, 1);
    let plan = EnsemblePlan::new(&p, &params(20, 77), RoutingMode::NearestMedoid).unwrap();
    let opts = TrainOptions {
        early_stop: EarlyStop::Off,
        ..TrainOptions::default()
    };
    let (ens, report) = plan.train_parallel(&data, &opts, None).unwrap();
    let (base, stats) = train_baseline(&data, &params(20, 77), None).unwrap();
    assert_eq!(ens.machines[0], base);
    assert_eq!(report.total.clause_updates, stats.clause_updates);
    for x in data.points() {
        assert_eq!(ens.classify(x), base.predict(x));
    }
}

#[test]
fn sequential_matches_parallel() {
    let (data, _) = two_mode(4);
    let (test, _) = two_mode(40);
    let plan = EnsemblePlan::new(&sorted(&data, 2), &params(20, 5), RoutingMode::NearestMedoid).unwrap();
    let opts = TrainOptions::default();
    let (ens, par) = plan.train_parallel(&data, &opts, Some(&test)).unwrap();
    let mut files = Vec::new();
    let seq = plan
        .train_sequential(&data, &opts, Some(&test), |m, tm| {
            files.push((m, tm.to_bytes()));
            Ok(())
        })
        .unwrap();
    assert_eq!(seq.digests, par.digests);
    assert_eq!(seq.peak_resident_machines, 1);
    assert_eq!(par.total.clause_updates, seq.total.clause_updates);
    for (m, bytes) in files {
        assert_eq!(bytes, ens.machines[m].to_bytes());
    }
    let shot = seq.one_shot.unwrap();
    let eval = evaluate(&ens, &test).unwrap();
    assert_eq!(shot.correct, eval.correct);
    assert_eq!(shot.clause_evaluations, eval.clause_evaluations);
}

#[test]
fn routing_modes_agree_after_convergence() {
    let (data, _) = two_mode(5);
    let p = sorted(&data, 2);
    let long = TmParams {
        threshold: 16,
        epochs: 60,
        ..params(40, 9)
    };
    let plan = EnsemblePlan::new(&p, &long, RoutingMode::NearestMedoid).unwrap();
    let opts = TrainOptions {
        early_stop: EarlyStop::Off,
        ..TrainOptions::default()
    };
    let (ens, report) = plan.train_parallel(&data, &opts, None).unwrap();
    assert!(report.per_machine.iter().all(|s| s.epochs_run == 60));

    for (class, row) in p.grid.medoids.iter().enumerate() {
        for medoid in row {
            assert_eq!(ens.classify(medoid), class);
        }
    }
    let argmax = ens.clone().with_routing(RoutingMode::AllMachinesArgmax);
    let nearest_eval = evaluate(&ens, &data).unwrap();
    let argmax_eval = evaluate(&argmax, &data).unwrap();
    assert_eq!(nearest_eval.accuracy, 1.0);
    assert_eq!(argmax_eval.accuracy, 1.0);
    for x in data.points() {
        assert_eq!(ens.classify(x), argmax.classify(x));
    }
    // argmax touches every machine, nearest-medoid exactly one
    assert_eq!(argmax_eval.clause_evaluations, 2 * nearest_eval.clause_evaluations);
}

#[test]
fn held_out_points_after_early_stop() {
    let (data, _) = two_mode(5);
    let (test, _) = two_mode(50);
    let plan = EnsemblePlan::new(&sorted(&data, 2), &params(20, 9), RoutingMode::NearestMedoid).unwrap();
    let (ens, report) = plan.train_parallel(&data, &TrainOptions::default(), None).unwrap();
    assert!(report.per_machine.iter().all(|s| s.early_stopped));
    assert_eq!(evaluate(&ens, &test).unwrap().accuracy, 1.0);
}

#[test]
fn ensemble_files_round_trip() {
    let (data, _) = two_mode(6);
    let plan = EnsemblePlan::new(&sorted(&data, 2), &params(20, 3), RoutingMode::NearestMedoid).unwrap();
    let (ens, report) = plan.train_parallel(&data, &TrainOptions::default(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = ens.save(dir.path()).unwrap();
    assert_eq!(manifest.digests, report.digests);
    let back = PresortedEnsemble::load(dir.path()).unwrap();
    assert_eq!(back, ens);

    std::fs::write(dir.path().join("machine_1.tm"), b"PSTM").unwrap();
    assert!(PresortedEnsemble::load(dir.path()).is_err());
}

#[test]
fn class_smaller_than_k_is_named() {
    let (data, _) = two_mode(7);
    let keep: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == 0 || i % 40 < 2).collect();
    let small = data.subset(&keep);
    let err = presort(&small, &PresortConfig { k: 3, ..PresortConfig::default() }).unwrap_err();
    assert!(matches!(err, pstm_core::Error::ClassTooSmall { class: 1, available: 2, required: 3 }));
}

