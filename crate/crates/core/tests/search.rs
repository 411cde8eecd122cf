mod common;

use std::collections::BTreeSet;

use common::spaces::random_space;
use hournas::data::{split_80_20, Dataset, Split, SynthRecipe};
use hournas::proposal::{softmax_rows, LogitMatrix, ProposalSet};
use hournas::rng::seeded;
use hournas::search::{
    build_vital_supernet, derive_final, fit_stage_proposals, network_resources, run_search, search_nonvital,
    search_vital, DataSource, Phase, SearchConfig, SearchState, StepKind,
};
use hournas::space::{build_resource_table, resource_of, Objective, SuperNetSpec, Target};
use hournas::vitality::{vital_by_rule, VitalSet};

fn data(classes: usize, per_class: usize, res: usize, noise: f64, seed: u64) -> (Dataset, Split) {
    let ds = SynthRecipe::new(classes, per_class, res, seed)
        .with_noise(noise)
        .generate()
        .unwrap();
    let split = split_80_20(&ds, seed).unwrap();
    (ds, split)
}

fn flops_table(spec: &SuperNetSpec, target: Target) -> hournas::space::ResourceTable {
    build_resource_table(spec, &[(Objective::Flops, target)].into()).unwrap()
}

fn both_table(spec: &SuperNetSpec, pct: f64) -> hournas::space::ResourceTable {
    let t = [
        (Objective::Flops, Target::PercentOfMax(pct)),
        (Objective::Params, Target::PercentOfMax(pct)),
    ];
    build_resource_table(spec, &t.into()).unwrap()
}

#[test]
fn vital_supernet_examples() {
    let json = r#"{"stem":{"in_ch":3,"out_ch":8,"kernel":3,"stride":1,"resolution":[16,16]},
        "layers":[{"in_ch":8,"out_ch":8,"stride":2},{"in_ch":8,"out_ch":8,"stride":1},
                  {"in_ch":8,"out_ch":8,"stride":1},{"in_ch":8,"out_ch":8,"stride":2},
                  {"in_ch":8,"out_ch":8,"stride":1}],
        "catalog":[{"kind":"mbconv","kernel":3,"expansion":1},{"kind":"skip"}],"num_classes":2}"#;
    let spec = SuperNetSpec::from_json(json).unwrap();
    let v = build_vital_supernet(&spec, &vital_by_rule(&spec)).unwrap();
    assert_eq!(v.num_layers(), 2);
    assert!(v.layers.iter().all(|l| l.stride == 2));
}

#[test]
fn omitted_layers_never_change_shape() {
    let mut rng = seeded(99, 0);
    for _ in 0..50 {
        let spec = random_space(&mut rng);
        let vital = vital_by_rule(&spec);
        for l in vital.complement(spec.num_layers()) {
            let layer = &spec.layers[l];
            assert_eq!(layer.stride, 1);
            assert_eq!(layer.in_channels, layer.out_channels);
        }
        let v = build_vital_supernet(&spec, &vital).unwrap();
        assert_eq!(v.num_layers(), vital.layers.len());
        assert_eq!(v.final_channels(), spec.final_channels());
    }
}

#[test]
fn single_candidate_needs_no_arch_updates() {
    let json = r#"{"stem":{"in_ch":3,"out_ch":4,"kernel":3,"stride":1,"resolution":[8,8]},
        "layers":[{"in_ch":4,"out_ch":8,"stride":2}],
        "catalog":[{"kind":"mbconv","kernel":3,"expansion":1}],"num_classes":2}"#;
    let spec = SuperNetSpec::from_json(json).unwrap();
    let (ds, split) = data(2, 20, 8, 0.5, 1);
    let cfg = SearchConfig { batch_size: 8, ..Default::default() };
    let mut st = SearchState::new(&spec, vec![0], &cfg);
    search_vital::<f64>(&spec, &ds, &split, &cfg, &mut st, None).unwrap();
    assert_eq!(st.vital_choices, vec![0]);
    assert!(st.log.iter().all(|r| r.kind == StepKind::Weights));
    assert_eq!(st.phase, Phase::ProposalFit);
}

/// Layer 1 is vital and feeds the head; its first candidate outputs zeros.
const ZERO_VITAL: &str = r#"{"stem":{"in_ch":3,"out_ch":8,"kernel":3,"stride":1,"resolution":[16,16]},
    "layers":[{"in_ch":8,"out_ch":8,"stride":1},{"in_ch":8,"out_ch":16,"stride":2}],
    "catalog":[{"kind":"zero"},{"kind":"mbconv","kernel":3,"expansion":3}],"num_classes":4}"#;

#[test]
fn zeroed_vital_candidate_loses() {
    let spec = SuperNetSpec::from_json(ZERO_VITAL).unwrap();
    let vital = vital_by_rule(&spec);
    assert_eq!(vital.indices(), vec![1]);
    let vspec = build_vital_supernet(&spec, &vital).unwrap();
    let (ds, split) = data(4, 60, 16, 0.5, 5);
    let cfg = SearchConfig { batch_size: 4, ..Default::default() };
    let mut st = SearchState::new(&spec, vital.indices(), &cfg);
    search_vital::<f64>(&vspec, &ds, &split, &cfg, &mut st, None).unwrap();
    assert_eq!(st.vital_choices, vec![1]);
    let theta = st.theta_vital.as_ref().unwrap();
    assert!(theta.data().iter().all(|v| v.is_finite()));
    for row in softmax_rows(theta.data(), theta.cols(), 1.0).chunks(theta.cols()) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

/// Layer 0 is vital with one real candidate; layer 1 is residual, feeds the
/// head, and its first candidate outputs zeros.
const ZERO_NONVITAL: &str = r#"{"stem":{"in_ch":3,"out_ch":8,"kernel":3,"stride":1,"resolution":[16,16]},
    "layers":[{"in_ch":8,"out_ch":16,"stride":2,"candidates":[{"kind":"mbconv","kernel":3,"expansion":3},{"kind":"disallowed"}]},
              {"in_ch":16,"out_ch":16,"stride":1,"candidates":[{"kind":"zero"},{"kind":"mbconv","kernel":3,"expansion":1}]}],
    "num_classes":4}"#;

#[test]
fn zeroed_nonvital_candidate_loses_without_resource_pressure() {
    let spec = SuperNetSpec::from_json(ZERO_NONVITAL).unwrap();
    // halfway between the two candidates, so fitting leaves them balanced
    let probe = flops_table(&spec, Target::PercentOfMax(100.0));
    let target = probe.fixed[0] + probe.costs[0][0][0] + probe.costs[0][1][1] / 2.0;
    let table = flops_table(&spec, Target::Absolute(target));
    let (ds, split) = data(4, 60, 16, 0.5, 6);
    let cfg = SearchConfig {
        m: 1,
        alpha: 0.0,
        batch_size: 4,
        lr_arch: 0.05,
        ..Default::default()
    };
    let out = run_search::<f64>(&spec, &table, &ds, &split, &cfg, None).unwrap();
    assert_eq!(out.state.vital_layers, vec![0]);
    assert_eq!(out.arch.argmax(), vec![0, 1]);
}

#[test]
fn huge_alpha_drives_cost_to_target() {
    let json = r#"{"stem":{"in_ch":3,"out_ch":8,"kernel":3,"stride":1,"resolution":[8,8]},
        "layers":[{"in_ch":8,"out_ch":8,"stride":1},{"in_ch":8,"out_ch":8,"stride":1},{"in_ch":8,"out_ch":8,"stride":1}],
        "catalog":[{"kind":"mbconv","kernel":3,"expansion":1},{"kind":"mbconv","kernel":3,"expansion":4},{"kind":"skip"}],
        "num_classes":2}"#;
    let spec = SuperNetSpec::from_json(json).unwrap();
    // the cost of [e4, e1, skip] is the target
    let probe = flops_table(&spec, Target::PercentOfMax(100.0));
    let target_arch = hournas::space::ArchMatrix::one_hot(&[1, 0, 2], 3).unwrap();
    let target = resource_of(&target_arch, &probe, 0).unwrap();
    let table = flops_table(&spec, Target::Absolute(target));
    let (ds, split) = data(2, 60, 8, 0.5, 7);
    let cfg = SearchConfig {
        m: 1,
        alpha: 1e6,
        batch_size: 4,
        lr_arch: 0.05,
        e_nonvital: 3,
        ..Default::default()
    };
    let out = run_search::<f64>(&spec, &table, &ds, &split, &cfg, None).unwrap();
    assert!(out.state.vital_layers.is_empty());
    let cost = resource_of(&out.arch, &table, 0).unwrap();
    assert!((cost - target).abs() <= 0.01 * target, "derived {cost}, target {target}");
}

fn default_run(seed: u64, vital_priori: bool) -> (SuperNetSpec, hournas::search::SearchOutcome<f64>, Split) {
    let spec = SuperNetSpec::default_miniature();
    let table = both_table(&spec, 40.0);
    let (ds, split) = data(4, 100, 16, 1.0, 11);
    let cfg = SearchConfig { seed, vital_priori, ..Default::default() };
    let out = run_search::<f64>(&spec, &table, &ds, &split, &cfg, None).unwrap();
    (spec, out, split)
}

#[test]
fn search_invariants_on_default_space() {
    let (spec, out, split) = default_run(0, true);
    let st = &out.state;
    assert_eq!(st.phase, Phase::Done);
    assert_eq!(st.vital_layers, vec![1, 4]);
    let train: BTreeSet<usize> = split.train.iter().copied().collect();
    let val: BTreeSet<usize> = split.val.iter().copied().collect();
    for (i, r) in st.log.iter().enumerate() {
        assert_eq!(r.iteration, i as u64);
        assert!((r.tau - 5.0 * 0.9999f64.powi(i as i32)).abs() < 1e-12);
        assert!(r.loss.is_finite());
        let pool = match r.kind {
            StepKind::Weights => {
                assert_eq!(r.source, DataSource::Train);
                &train
            }
            StepKind::Arch => {
                assert_eq!(r.source, DataSource::Val);
                &val
            }
        };
        assert!(r.batch.iter().all(|b| pool.contains(b)));
        // one branch per layer with the Gumbel-Max sampler
        assert_eq!(r.branches, r.active.len());
        assert!(r.active.iter().all(|a| a.len() == 1));
        if r.phase == Phase::Nonvital {
            assert_eq!(r.active.len(), spec.num_layers());
            for (&l, &o) in st.vital_layers.iter().zip(&st.vital_choices) {
                assert_eq!(r.active[l], vec![o]);
            }
        }
    }
    assert!(st.log.iter().any(|r| r.phase == Phase::Vital));
    let arch = derive_final(st).unwrap();
    assert_eq!(arch, out.arch);
    for (&l, &o) in st.vital_layers.iter().zip(&st.vital_choices) {
        assert_eq!(arch.argmax()[l], o);
    }
    let (flops, params) = network_resources(&spec, &arch).unwrap();
    let table = both_table(&spec, 40.0);
    assert!((flops - table.targets[0]).abs() <= 0.1 * table.targets[0], "flops {flops}");
    assert!((params - table.targets[1]).abs() <= 0.1 * table.targets[1], "params {params}");
}

#[test]
fn search_is_deterministic() {
    let (_, a, _) = default_run(3, true);
    let (_, b, _) = default_run(3, true);
    assert_eq!(a.arch, b.arch);
    assert_eq!(a.state.weight_loss, b.state.weight_loss);
    assert_eq!(a.state.proposals, b.state.proposals);
}

#[test]
fn single_stage_searches_every_layer() {
    let (spec, out, _) = default_run(1, false);
    assert!(out.state.vital_layers.is_empty());
    assert!(out.state.log.iter().all(|r| r.phase == Phase::Nonvital));
    assert_eq!(out.state.proposals.as_ref().unwrap().layers, (0..spec.num_layers()).collect::<Vec<_>>());
    // the same epoch budget as the two-stage run
    let weight_steps = out.state.log.iter().filter(|r| r.kind == StepKind::Weights).count();
    assert_eq!(weight_steps, 2 * 10);
}

#[test]
fn soft_mixture_runs_every_candidate() {
    let spec = SuperNetSpec::from_json(ZERO_NONVITAL).unwrap();
    let table = flops_table(&spec, Target::PercentOfMax(50.0));
    let (ds, split) = data(4, 20, 16, 0.5, 6);
    let cfg = SearchConfig {
        m: 2,
        i_sp: 20,
        batch_size: 16,
        sampler: hournas::proposal::SamplerKind::GumbelSoftmax,
        ..Default::default()
    };
    let out = run_search::<f64>(&spec, &table, &ds, &split, &cfg, None).unwrap();
    for r in out.state.log.iter().filter(|r| r.phase == Phase::Nonvital) {
        assert_eq!(r.active[1], vec![0, 1]);
        assert_eq!(r.branches, 3);
    }
}

#[test]
fn stage_order_is_enforced() {
    let spec = SuperNetSpec::default_miniature();
    let table = both_table(&spec, 40.0);
    let (ds, split) = data(4, 10, 16, 1.0, 2);
    let cfg = SearchConfig::default();
    let mut st = SearchState::new(&spec, vec![1, 4], &cfg);
    assert!(fit_stage_proposals(&table, &cfg, &mut st).is_err());
    assert!(search_nonvital::<f64>(&spec, &table, &ds, &split, &cfg, &mut st, None, None).is_err());
    assert!(derive_final(&st).is_err());
    // proposals over the wrong rows are rejected
    st.phase = Phase::Nonvital;
    st.vital_choices = vec![0, 0];
    st.proposals = Some(ProposalSet {
        thetas: vec![LogitMatrix::uniform(&vec![vec![true; 5]; 4]).unwrap()],
        pi_logits: vec![0.0],
        alpha: 5.0,
        beta: 0.01,
        tau: 1.0,
        objective_names: vec!["flops".into(), "params".into()],
        targets: table.targets.clone(),
        layers: vec![0, 2, 3, 5],
        objective_trace: vec![],
        penalty_trace: vec![],
    });
    assert!(search_nonvital::<f64>(&spec, &table, &ds, &split, &cfg, &mut st, None, None).is_err());
    let empty = Split { train: vec![], val: vec![] };
    let mut st = SearchState::new(&spec, vec![1, 4], &cfg);
    let vspec = build_vital_supernet(&spec, &VitalSet { layers: [1, 4].into() }).unwrap();
    assert!(search_vital::<f64>(&vspec, &ds, &empty, &cfg, &mut st, None).is_err());
}

#[test]
fn epoch_checkpoints_are_written() {
    let spec = SuperNetSpec::from_json(ZERO_NONVITAL).unwrap();
    let table = flops_table(&spec, Target::PercentOfMax(50.0));
    let (ds, split) = data(4, 10, 16, 0.5, 6);
    let cfg = SearchConfig { m: 2, i_sp: 5, batch_size: 8, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    run_search::<f64>(&spec, &table, &ds, &split, &cfg, Some(dir.path())).unwrap();
    let ck = hournas::data::Checkpoint::load(&dir.path().join("vital_epoch0.ckpt")).unwrap();
    assert!(ck.get("arch.theta_vital").is_some());
    let ck = hournas::data::Checkpoint::load(&dir.path().join("nonvital_epoch0.ckpt")).unwrap();
    assert!(ck.get("arch.pi").is_some() && ck.get("arch.theta1").is_some());
    assert!(ck.get("stem.conv.weight").is_some());
    assert_eq!(ck.meta["stage"], "nonvital");
}
