use hournas::data::{split_80_20, SynthRecipe};
use hournas::space::{ArchMatrix, SuperNetSpec};
use hournas::train::{evaluate, retrain, TrainConfig};

const TWO_LAYER: &str = r#"{
  "stem": { "in_ch": 3, "out_ch": 8, "kernel": 3, "stride": 1, "resolution": [8, 8] },
  "layers": [
    { "in_ch": 8, "out_ch": 8, "stride": 1 },
    { "in_ch": 8, "out_ch": 16, "stride": 2 }
  ],
  "catalog": [ { "kind": "mbconv", "kernel": 3, "expansion": 3 } ],
  "head": { "bias": true },
  "num_classes": 4
}"#;

#[test]
fn two_layer_net_learns_low_noise_blobs() {
    let spec = SuperNetSpec::from_json(TWO_LAYER).unwrap();
    let ds = SynthRecipe::new(4, 100, 8, 5).with_noise(0.1).generate().unwrap();
    let split = split_80_20(&ds, 5).unwrap();
    let arch = ArchMatrix::one_hot(&[0, 0], 1).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 32, lr: 0.1, seed: 1 };
    let (net, acc) = retrain::<f64>(&spec, &arch, &ds, &split.train, (&ds, &split.val), &cfg).unwrap();
    assert!(acc > 0.95, "val accuracy {acc}");
    let again = evaluate(&net, &[0, 0], &ds, Some(&split.val), None).unwrap();
    assert_eq!(acc, again);
}
