use std::collections::BTreeMap;

use hournas::rng::{seeded, uniform_open01};
use hournas::space::{
    build_resource_table, op_cost, resource_of, ArchMatrix, LayerSpec, Network, Objective, OpSpec,
    SuperNetSpec, Target,
};
use proptest::prelude::*;

/// Counts one MAC per (output pixel, output channel, input channel in group, tap).
fn brute_force_macs(h: usize, w: usize, cin: usize, cout: usize, k: usize, stride: usize, groups: usize) -> u64 {
    let pad = (k - 1) / 2;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut macs = 0u64;
    for _oy in 0..oh {
        for _ox in 0..ow {
            for co in 0..cout {
                let grp = co / (cout / groups);
                for ci in grp * (cin / groups)..(grp + 1) * (cin / groups) {
                    let _ = ci;
                    for _ky in 0..k {
                        for _kx in 0..k {
                            macs += 1;
                        }
                    }
                }
            }
        }
    }
    macs
}

fn layer(cin: usize, cout: usize, stride: usize, res: usize, ops: Vec<OpSpec>) -> LayerSpec {
    let allowed = ops.iter().map(|op| op.inadmissible_reason(cin, cout, stride).is_none()).collect();
    LayerSpec {
        index: 0,
        in_channels: cin,
        out_channels: cout,
        stride,
        input_resolution: (res, res),
        candidates: ops,
        allowed,
    }
}

#[test]
fn plain_pointwise_conv_macs() {
    assert_eq!(brute_force_macs(4, 4, 8, 16, 1, 1, 1), 2048);
    assert_eq!(hournas::space::conv_macs(4, 4, 8, 16, 1, 1), 2048.0);
}

#[test]
fn mbconv_flops_match_loop_nest() {
    for (cin, cout, stride, res, k, e, g) in [(8, 8, 1, 4, 3, 6, 1), (8, 16, 2, 7, 5, 3, 2), (4, 4, 1, 5, 3, 1, 4)] {
        let op = OpSpec::Mbconv { kernel: k, expansion: e, groups: g };
        let l = layer(cin, cout, stride, res, vec![op]);
        let mid = cin * e;
        let oh = res.div_ceil(stride);
        let want = brute_force_macs(res, res, cin, mid, 1, 1, g)
            + brute_force_macs(res, res, mid, mid, k, stride, mid)
            + brute_force_macs(oh, oh, mid, cout, 1, 1, g);
        assert_eq!(op_cost(&op, &l, Objective::Flops).unwrap(), want as f64);
    }
}

#[test]
fn mbconv_params_by_enumeration() {
    let op = OpSpec::mbconv(3, 6);
    let l = layer(8, 8, 1, 4, vec![op]);
    // expand 8·48, depthwise 48·9, project 48·8, three batchnorm affines
    let want = 8 * 48 + 48 * 9 + 48 * 8 + 2 * (48 + 48 + 8);
    assert_eq!(want, 1408);
    assert_eq!(op_cost(&op, &l, Objective::Params).unwrap(), 1408.0);
}

fn tiny_space(layers: &[(usize, usize, usize)], catalog: &str, res: usize) -> SuperNetSpec {
    let ls: Vec<String> = layers
        .iter()
        .map(|(i, o, s)| format!(r#"{{"in_ch":{i},"out_ch":{o},"stride":{s}}}"#))
        .collect();
    let text = format!(
        r#"{{"stem":{{"in_ch":1,"out_ch":{},"kernel":3,"stride":1,"resolution":[{res},{res}]}},
            "layers":[{}],"catalog":{catalog},"num_classes":3}}"#,
        layers[0].0,
        ls.join(",")
    );
    SuperNetSpec::from_json(&text).unwrap()
}

fn both_targets(flops: Target, params: Target) -> BTreeMap<Objective, Target> {
    BTreeMap::from([(Objective::Flops, flops), (Objective::Params, params)])
}

#[test]
fn single_layer_table_row() {
    let net = tiny_space(&[(8, 8, 1)], r#"[{"kind":"mbconv","kernel":1,"expansion":1},{"kind":"skip"}]"#, 4);
    let t = build_resource_table(&net, &BTreeMap::from([(Objective::Flops, Target::PercentOfMax(50.0))])).unwrap();
    // expand 16·8·8, depthwise 16·8·1, project 16·8·8
    let op = 16.0 * 64.0 + 16.0 * 8.0 + 16.0 * 64.0;
    assert_eq!(t.costs[0][0], vec![op, 0.0]);
    let fixed = 16.0 * 9.0 * 8.0 + 8.0 * 3.0;
    assert_eq!(t.fixed[0], fixed);
    assert_eq!(t.max[0], op + fixed);
    assert_eq!(t.min_cost(0), fixed);
}

#[test]
fn two_objectives_have_independent_normalizers() {
    let net = SuperNetSpec::default_miniature();
    let t = build_resource_table(&net, &both_targets(Target::PercentOfMax(40.0), Target::PercentOfMax(40.0))).unwrap();
    assert_eq!(t.objective_names, ["flops", "params"]);
    assert_eq!(t.costs.len(), 2);
    assert!(t.max[0] != t.max[1]);
    assert!((t.targets[0] - 0.4 * t.max[0]).abs() < 1e-9);
}

#[test]
fn unreachable_target_rejected() {
    let net = SuperNetSpec::default_miniature();
    let err = build_resource_table(&net, &both_targets(Target::PercentOfMax(101.0), Target::Absolute(1.0))).unwrap_err();
    assert!(err.to_string().contains("unreachable"), "{err}");
}

#[test]
fn soft_resource_matches_sampled_expectation() {
    let net = SuperNetSpec::default_miniature();
    let t = build_resource_table(&net, &both_targets(Target::PercentOfMax(50.0), Target::PercentOfMax(50.0))).unwrap();
    let mut rng = seeded(99, 0);
    let (l, o) = (t.num_layers(), t.num_ops());
    let mut data = Vec::new();
    for row in &t.allowed {
        let w: Vec<f64> = row.iter().map(|&a| if a { uniform_open01(&mut rng) } else { 0.0 }).collect();
        let s: f64 = w.iter().sum();
        data.extend(w.iter().map(|v| v / s));
    }
    let a = ArchMatrix::new(l, o, data).unwrap();
    for obj in 0..2 {
        let exact = resource_of(&a, &t, obj).unwrap();
        let draws = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws {
            let mut choice = Vec::with_capacity(l);
            for r in 0..l {
                let u = uniform_open01(&mut rng);
                let mut acc = 0.0;
                let mut pick = o - 1;
                for c in 0..o {
                    acc += a.get(r, c);
                    if u < acc {
                        pick = c;
                        break;
                    }
                }
                choice.push(pick);
            }
            let v = resource_of(&ArchMatrix::one_hot(&choice, o).unwrap(), &t, obj).unwrap();
            sum += v;
            sq += v * v;
        }
        let mean = sum / draws as f64;
        let sd = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * sd, "objective {obj}: {mean} vs {exact} (sd {sd})");
    }
}

#[test]
fn exhaustive_small_space_param_counts() {
    let net = tiny_space(
        &[(4, 4, 1), (4, 8, 2), (8, 8, 1)],
        r#"[{"kind":"mbconv","kernel":3,"expansion":1},{"kind":"mbconv","kernel":5,"expansion":2},{"kind":"skip"}]"#,
        8,
    );
    let t = build_resource_table(&net, &both_targets(Target::Absolute(0.0), Target::Absolute(0.0))).unwrap();
    let p = t.objective_index("params").unwrap();
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                let arch = ArchMatrix::one_hot(&[a, b, c], 3).unwrap();
                if !net.layers[1].allowed[b] {
                    assert!(Network::<f64>::instantiate(&net, &arch, &mut seeded(0, 0)).is_err());
                    continue;
                }
                let model = Network::<f64>::instantiate(&net, &arch, &mut seeded(0, 0)).unwrap();
                assert_eq!(model.num_params() as f64, resource_of(&arch, &t, p).unwrap());
            }
        }
    }
}

fn soft_arch(allowed: &[Vec<bool>], seed: u64) -> ArchMatrix {
    let mut rng = seeded(seed, 3);
    let o = allowed[0].len();
    let mut data = Vec::new();
    for row in allowed {
        let w: Vec<f64> = row.iter().map(|&a| if a { uniform_open01(&mut rng) } else { 0.0 }).collect();
        let s: f64 = w.iter().sum();
        data.extend(w.iter().map(|v| v / s));
    }
    ArchMatrix::new(allowed.len(), o, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resource_is_linear_and_normalized(s1 in 0u64..10_000, s2 in 0u64..10_000, lambda in 0.0f64..=1.0) {
        let net = SuperNetSpec::default_miniature();
        let t = build_resource_table(&net, &both_targets(Target::PercentOfMax(50.0), Target::PercentOfMax(50.0))).unwrap();
        let a1 = soft_arch(&t.allowed, s1);
        let a2 = soft_arch(&t.allowed, s2);
        let mixed = a1.mix(&a2, lambda).unwrap();
        prop_assert!(mixed.is_row_stochastic(1e-9));
        for i in 0..2 {
            let lhs = resource_of(&mixed, &t, i).unwrap();
            let rhs = lambda * resource_of(&a1, &t, i).unwrap() + (1.0 - lambda) * resource_of(&a2, &t, i).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * t.max[i]);
            let frac = lhs / t.max[i];
            prop_assert!((0.0..=1.0).contains(&frac));
        }
    }

    #[test]
    fn one_hot_params_equal_model_size(choice in proptest::collection::vec(0usize..5, 7)) {
        let net = SuperNetSpec::default_miniature();
        let t = build_resource_table(&net, &both_targets(Target::PercentOfMax(50.0), Target::PercentOfMax(50.0))).unwrap();
        let choice: Vec<usize> = choice
            .iter()
            .enumerate()
            .map(|(l, &o)| if net.layers[l].allowed[o] { o } else { 0 })
            .collect();
        let arch = ArchMatrix::one_hot(&choice, 5).unwrap();
        let model = Network::<f64>::instantiate(&net, &arch, &mut seeded(1, 0)).unwrap();
        prop_assert_eq!(model.num_params() as f64, resource_of(&arch, &t, 1).unwrap());
    }
}
