//! End-to-end runs through generation, labeling, training, checkpoints and
//! policy evaluation.

mod common;

use std::collections::HashMap;

use rgnn::checkpoint;
use rgnn::domains::{load_dir, DomainKind, GeneratedSet, GeneratorSpec};
use rgnn::net::{Model, ModelKind};
use rgnn::policy::{evaluate_suite, write_records_csv, OracleValues, PolicyOptions};
use rgnn::statespace::{
    expand, optimal_values, sample_training_set, LabeledSpace, SampleOptions, DEFAULT_STATE_CAP,
};
use rgnn::train::{mean_loss, prepare_examples, train, CurvePoint, TrainConfig};

use common::*;

#[test]
fn generated_sets_round_trip_through_disk_and_search() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = rng(31);
    for kind in DomainKind::ALL {
        let spec = small_spec(kind, &mut rng);
        let set = GeneratedSet::generate(&spec, 3).unwrap();
        let dir = tmp.path().join(kind.tag());
        set.write_dir(&dir).unwrap();
        let (_, problems) = load_dir(&dir).unwrap();
        assert_eq!(problems.len(), 3);
        for (name, p) in &problems {
            let space = expand(p, DEFAULT_STATE_CAP).unwrap();
            let v = optimal_values(&space);
            let oracle: HashMap<_, _> = bfs_values(p).into_iter().map(|(s, v)| (s.atoms().to_vec(), v)).collect();
            assert_eq!(oracle.len(), space.len(), "{} {name}", kind.tag());
            for (i, s) in space.states.iter().enumerate() {
                assert_eq!(oracle[s.atoms()], v[i], "{} {name} state {i}", kind.tag());
            }
            assert!(v[0].is_some(), "{} {name} is solvable", kind.tag());
        }
    }
}

#[test]
fn oracle_policy_solves_every_domain_optimally() {
    let mut rng = rng(32);
    let mut suite = Vec::new();
    let mut oracle = OracleValues::new();
    for kind in DomainKind::ALL {
        for j in 0..2 {
            let spec = small_spec(kind, &mut rng);
            let p = problem_of(&spec, "p");
            oracle.add_space(&expand(&p, DEFAULT_STATE_CAP).unwrap());
            suite.push((format!("{}-{j}", kind.tag()), p));
        }
    }
    let opts = PolicyOptions {
        oracle_cap: Some(DEFAULT_STATE_CAP),
        ..Default::default()
    };
    let (summary, records) = evaluate_suite(&suite, &oracle, opts);
    assert_eq!(summary.solved, summary.total);
    for r in &records {
        assert_eq!(Some(r.steps as u32), r.vstar_initial, "{}", r.instance);
        assert_eq!(r.plan.len(), r.steps);
    }
    let mut csv = Vec::new();
    write_records_csv(&mut csv, &records).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), records.len() + 1);
}

#[test]
fn single_state_dataset_is_fit() {
    let layout = rgnn::domains::gen_navig_xy(3, 3, 0.0, 4).unwrap();
    let domain = std::sync::Arc::new(rgnn::pddl::parse_domain(DomainKind::NavigXy.domain_pddl()).unwrap());
    let p = rgnn::pddl::parse_problem(&layout.to_pddl("one"), &domain).unwrap();
    let space = LabeledSpace::new("one", expand(&p, DEFAULT_STATE_CAP).unwrap());
    let state = space.labeled_states().next().unwrap();
    let kind = ModelKind::RgnnT { t: 1, cumulative: false };
    let mut cfg = TrainConfig::new(kind, 16, 8);
    cfg.max_steps = 2000;
    cfg.seeds = vec![0];
    cfg.eval_every = 10;
    let vocab = p.state.vocab();
    let shape = Model::new(kind, cfg.net, vocab, 0).unwrap();
    let examples = prepare_examples(&shape, &[state]).unwrap();
    let report = train(&cfg, vocab, &examples, &[], &|_: &CurvePoint| {}).unwrap();
    assert_eq!(report.seeds[0].steps, 2000);
    // The emitted checkpoint is the best evaluated one.
    let loss = mean_loss(&report.model, report.model.params(), &examples).unwrap();
    assert!(loss < 0.1, "loss of the trained model {loss}");
}

#[test]
fn trained_checkpoint_reloads_with_identical_values() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec::new(DomainKind::Gripper, 2, 1, 0);
    let set = GeneratedSet::generate(&spec, 2).unwrap();
    set.write_dir(tmp.path()).unwrap();
    let (_, problems) = load_dir(tmp.path()).unwrap();
    let spaces: Vec<_> = problems
        .iter()
        .map(|(n, p)| LabeledSpace::new(n.clone(), expand(p, DEFAULT_STATE_CAP).unwrap()))
        .collect();
    let states = sample_training_set(&spaces, SampleOptions::new(usize::MAX, 1)).unwrap();
    let vocab = problems[0].1.state.vocab();
    for kind in [ModelKind::Rgnn, ModelKind::RgnnT { t: 2, cumulative: true }, ModelKind::Rgnn2] {
        let mut cfg = TrainConfig::new(kind, 6, 2);
        cfg.max_steps = 30;
        cfg.seeds = vec![5];
        cfg.eval_every = 10;
        let shape = Model::new(kind, cfg.net, vocab, 0).unwrap();
        let ex = prepare_examples(&shape, &states).unwrap();
        let report = train(&cfg, vocab, &ex, &[], &|_: &CurvePoint| {}).unwrap();
        let path = tmp.path().join(format!("{}.ckpt", kind.tag()));
        checkpoint::save(&report.model, &path).unwrap();
        let loaded = checkpoint::load(&path).unwrap();
        let all: Vec<_> = states.iter().map(|s| s.state.clone()).collect();
        let a = report.model.values(&all).unwrap();
        let b = loaded.values(&all).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "{kind}");
    }
}
