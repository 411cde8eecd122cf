mod common;

use common::gradcases::cases;
use hournas::rng::seeded;

#[test]
fn every_op_matches_finite_differences() {
    for (ix, (name, case)) in cases().into_iter().enumerate() {
        let mut rng = seeded(2024, ix as u64);
        let worst = (0..100).map(|_| case(&mut rng)).fold(0.0f64, f64::max);
        assert!(worst < 1e-4, "{name}: max relative error {worst:e}");
    }
}
