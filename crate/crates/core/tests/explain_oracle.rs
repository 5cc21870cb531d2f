//! Solver checks against exhaustive and scalar grid oracles.

mod common;

use common::{grid_oracle, instances, objective, scalar_prox_oracle};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skintone_audit::explain::{pertinent_positive, prox_l1_box, search_c, CemParams};
use skintone_audit::model::{CompactNet, Gender, InputShape};

#[test]
fn solver_matches_box_grid_oracle() {
    let params = CemParams::default();
    let mut ok = 0;
    for inst in instances(2024, 100) {
        let pp = pertinent_positive(&inst.net, &inst.x, inst.k, &params, inst.c).unwrap();
        let grid = grid_oracle(&inst, &params);
        let own = objective(&inst, &pp.delta, &params);
        assert!((own - pp.objective).abs() < 1e-9);
        assert!(pp.delta.iter().zip(inst.x).all(|(d, x)| (0.0..=x).contains(d)));
        if own <= grid + 1e-3 {
            ok += 1;
        }
    }
    assert!(ok >= 95);
}

#[test]
fn best_objective_trace_never_rises() {
    let params = CemParams::default();
    for inst in instances(5, 20) {
        let pp = pertinent_positive(&inst.net, &inst.x, inst.k, &params, inst.c).unwrap();
        assert!(pp.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn prox_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let v = rng.random_range(-2.0..2.0);
        let lambda = rng.random_range(0.0..0.5);
        let upper = rng.random_range(0.0..1.0);
        let oracle = scalar_prox_oracle(v, lambda, upper);
        assert!((prox_l1_box(v, lambda, upper) - oracle).abs() < 1e-9, "v {v} λ {lambda} u {upper}");
    }
}

#[test]
fn support_shrinks_as_beta_grows() {
    let net = CompactNet::linear(InputShape::flat(2), [vec![0.0, 0.0], vec![2.0, 1.0]], [0.0, -1.0])
        .unwrap();
    let x = [0.9, 0.9];
    let mut last = (usize::MAX, f64::INFINITY);
    for beta in [0.001, 0.01, 0.1, 1.0, 10.0, 100.0] {
        let params = CemParams { beta, ..CemParams::default() };
        let pp = pertinent_positive(&net, &x, Gender::Male, &params, 1.0).unwrap();
        let support = pp.support();
        let l1 = pp.l1();
        assert!(support <= last.0, "beta {beta}: support {support} after {}", last.0);
        assert!(l1 <= last.1 + 1e-9, "beta {beta}: l1 {l1} after {}", last.1);
        last = (support, l1);
    }
    assert_eq!(last.0, 0);
}

#[test]
fn feature_one_only_model_ignores_feature_two() {
    let net = CompactNet::linear(InputShape::flat(2), [vec![-3.0, 0.0], vec![3.0, 0.0]], [1.5, -1.5])
        .unwrap();
    let params = CemParams::default();
    for x in [[0.9, 0.9], [0.7, 1.0], [1.0, 0.3]] {
        let pp = search_c(&net, &x, Gender::Male, &params).unwrap();
        assert!(pp.delta[1].abs() <= 1e-3);
        assert!(pp.achieved_f_kappa < 0.0);
        assert_eq!(net.logits(&pp.delta).unwrap().argmax(), Gender::Male);
    }
    for x in [[0.1, 0.9], [0.2, 0.5]] {
        let pp = search_c(&net, &x, Gender::Female, &params).unwrap();
        assert!(pp.delta[1].abs() <= 1e-3);
    }
}
