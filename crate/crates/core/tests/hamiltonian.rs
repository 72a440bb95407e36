mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weak_mfg::hamiltonian::{argmax_control, hamiltonian_value, maximize_hamiltonian, Model, SearchConfig};
use weak_mfg::measures::{ControlSamples, WeightedMeasure};
use weak_mfg::paths::{simulate_driftless, PathEnsemble, TimeGrid};

use common::{model, Searched};

fn analytic_models() -> Vec<(&'static str, Arc<dyn Model<f64>>)> {
    vec![
        ("price_impact", model("price_impact", serde_json::Value::Null)),
        ("clipped_lq", model("clipped_lq", serde_json::json!({"cost": 0.7, "control_bound": 2.0, "sigma": 0.8}))),
        ("gbm", model("gbm", serde_json::json!({"deviation_reward": 0.5}))),
        ("flocking", model("flocking", serde_json::Value::Null)),
        (
            "flocking_2d",
            model(
                "flocking",
                serde_json::json!({"dim": 2, "r": [2.0, 0.0, 0.0, 0.5], "interaction": {"kind": "nearest_neighbor", "radius": 0.5, "scale": 1.0}}),
            ),
        ),
    ]
}

fn ensemble(m: &dyn Model<f64>) -> PathEnsemble<f64> {
    simulate_driftless(m, TimeGrid::new(1.0, 10).unwrap(), 200, 11).unwrap()
}

fn random_z(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let scale = [0.05, 0.5, 2.0, 8.0][rng.random_range(0..4)];
    (0..d).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

#[test]
fn analytic_argmax_matches_numerical_search() {
    let search = SearchConfig::default();
    for (name, m) in analytic_models() {
        let golden = Searched { inner: m.clone(), concave: true };
        let grid = Searched { inner: m.clone(), concave: false };
        let ens = ensemble(&*m);
        let mu = WeightedMeasure::uniform(ens.paths().clone());
        let view = mu.view();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (p, k) = (rng.random_range(0..200), rng.random_range(0..10));
            let x = ens.paths().slice(p, k);
            let z = random_z(&mut rng, m.dim());
            let (_, h) = argmax_control(&*m, 0.1 * k as f64, &x, &view, &z, &search).unwrap();
            for other in [&golden, &grid] {
                let (_, hs) = argmax_control(other, 0.1 * k as f64, &x, &view, &z, &search).unwrap();
                assert!(h >= hs - 1e-9, "{}: analytic {} below search {}", name, h, hs);
                assert!(h - hs <= 1e-9 * (1.0 + h.abs()), "{}: analytic {} search {}", name, h, hs);
            }
        }
    }
}

#[test]
fn maximizer_dominates_a_fine_grid() {
    for (name, m) in analytic_models() {
        let ens = ensemble(&*m);
        let mu = WeightedMeasure::uniform(ens.paths().clone());
        let view = mu.view();
        let q = ControlSamples::uniform(m.control_set().dim(), m.control_set().smallest()).unwrap();
        // two-dimensional controls: a coarser grid and fewer probes keep the scan affordable
        let (res, probes) = if m.control_set().dim() == 1 { (4097, 1000) } else { (129, 100) };
        let fine = m.control_set().grid(res);
        let da = m.control_set().dim();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..probes {
            let (p, k) = (rng.random_range(0..200), rng.random_range(0..10));
            let x = ens.paths().slice(p, k);
            let z = random_z(&mut rng, m.dim());
            let best = maximize_hamiltonian(&*m, 0.0, &x, &view, &q.view(), &z).unwrap();
            for a in fine.chunks_exact(da) {
                let h = hamiltonian_value(&*m, 0.0, &x, &view, &q.view(), &z, a).unwrap();
                assert!(best.value >= h - 1e-9, "{}: grid point {:?} beats the maximizer", name, a);
            }
        }
    }
}

#[test]
fn argmax_ignores_the_control_law() {
    let m = model("price_impact", serde_json::Value::Null);
    let ens = ensemble(&*m);
    let mu = WeightedMeasure::uniform(ens.paths().clone());
    let q1 = ControlSamples::uniform(1, vec![-1.0, 0.2, 0.9]).unwrap();
    let q2 = ControlSamples::uniform(1, vec![0.7]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let x = ens.paths().slice(rng.random_range(0..200), rng.random_range(0..10));
        let z = random_z(&mut rng, 1);
        let a = maximize_hamiltonian(&*m, 0.0, &x, &mu.view(), &q1.view(), &z).unwrap();
        let b = maximize_hamiltonian(&*m, 0.0, &x, &mu.view(), &q2.view(), &z).unwrap();
        assert_eq!(a.control, b.control);
    }
}

#[test]
fn numerical_ties_resolve_to_the_smallest_control() {
    // f ≡ 0 and z = 0: every control is optimal
    let m = model("clipped_lq", serde_json::json!({"cost": 0.0}));
    let ens = ensemble(&*m);
    let mu = WeightedMeasure::uniform(ens.paths().clone());
    let x = ens.paths().slice(0, 0);
    for concave in [true, false] {
        let s = Searched { inner: m.clone(), concave };
        let (a, _) = argmax_control(&s, 0.0, &x, &mu.view(), &[0.0], &SearchConfig::default()).unwrap();
        assert_eq!(a, vec![-1.0]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamiltonian_is_lipschitz_in_z(
        which in 0usize..5, p in 0usize..200, k in 0usize..10,
        z1 in prop::collection::vec(-5.0f64..5.0, 2), z2 in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let (_, m) = analytic_models().swap_remove(which);
        let ens = ensemble(&*m);
        let mu = WeightedMeasure::uniform(ens.paths().clone());
        let q = ControlSamples::uniform(m.control_set().dim(), m.control_set().smallest()).unwrap();
        let x = ens.paths().slice(p, k);
        let d = m.dim();
        let h1 = maximize_hamiltonian(&*m, 0.0, &x, &mu.view(), &q.view(), &z1[..d]).unwrap().value;
        let h2 = maximize_hamiltonian(&*m, 0.0, &x, &mu.view(), &q.view(), &z2[..d]).unwrap().value;
        let dz = z1[..d].iter().zip(&z2[..d]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!((h1 - h2).abs() <= m.drift_bound() * dz + 1e-9);
    }

    #[test]
    fn midpoint_of_near_optimal_controls_is_near_optimal(
        which in 0usize..5, p in 0usize..200, k in 0usize..10,
        z in prop::collection::vec(-3.0f64..3.0, 2), u in 0.0f64..1.0, v in 0.0f64..1.0,
    ) {
        let (_, m) = analytic_models().swap_remove(which);
        let ens = ensemble(&*m);
        let mu = WeightedMeasure::uniform(ens.paths().clone());
        let q = ControlSamples::uniform(m.control_set().dim(), m.control_set().smallest()).unwrap();
        let x = ens.paths().slice(p, k);
        let d = m.dim();
        let best = maximize_hamiltonian(&*m, 0.0, &x, &mu.view(), &q.view(), &z[..d]).unwrap();
        let set = m.control_set();
        let perturb = |s: f64| {
            let mut a: Vec<f64> = best.control.iter().map(|c| c + 0.1 * (2.0 * s - 1.0)).collect();
            set.clip(&mut a);
            a
        };
        let (a1, a2) = (perturb(u), perturb(v));
        let mid: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| 0.5 * (x + y)).collect();
        let h = |a: &[f64]| hamiltonian_value(&*m, 0.0, &x, &mu.view(), &q.view(), &z[..d], a).unwrap();
        prop_assert!(h(&mid) >= h(&a1).min(h(&a2)) - 1e-12);
    }
}
