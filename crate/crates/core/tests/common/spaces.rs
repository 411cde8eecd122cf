use hournas::space::SuperNetSpec;
use rand::Rng;

/// Serial space with random stride/width changes and at most 12 residual layers.
pub fn random_space(rng: &mut impl Rng) -> SuperNetSpec {
    let n = rng.gen_range(1..=14);
    let mut ch = 4;
    let mut layers = Vec::new();
    let mut residual = 0;
    for _ in 0..n {
        let stride = if rng.gen_bool(0.2) { 2 } else { 1 };
        let out = if rng.gen_bool(0.2) { ch + 4 } else { ch };
        if stride == 1 && out == ch {
            if residual == 12 {
                continue;
            }
            residual += 1;
        }
        layers.push(format!(r#"{{ "in_ch": {ch}, "out_ch": {out}, "stride": {stride} }}"#));
        ch = out;
    }
    let json = format!(
        r#"{{ "stem": {{ "in_ch": 1, "out_ch": 4, "kernel": 3, "stride": 1, "resolution": [64, 64] }},
             "layers": [{}], "catalog": [ {{ "kind": "mbconv", "kernel": 3, "expansion": 1 }}, {{ "kind": "skip" }} ],
             "head": {{ "bias": false }}, "num_classes": 2 }}"#,
        layers.join(",")
    );
    SuperNetSpec::from_json(&json).unwrap()
}
