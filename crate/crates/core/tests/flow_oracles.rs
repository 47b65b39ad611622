use envyprice_core::flow::{kkt_violation, min_cost_flow, welfare_opt, DEFAULT_TOL};
use envyprice_core::functions::{CostFn, DemandFn};
use envyprice_core::market::{BuyerType, Item, MarketInstance};
use envyprice_core::oracle::discrete::round_to_grid;
use envyprice_core::oracle::{discrete_min_cost_flow, gen_random_mhr_instance, RandomMhrSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(seed: u64, buyers: usize, items: usize) -> RandomMhrSpec {
    RandomMhrSpec::new(seed, buyers, items)
}

#[test]
fn continuous_flow_matches_lattice_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..25 {
        let inst = gen_random_mhr_instance(&spec(seed, 1 + seed as usize % 6, 1 + (seed as usize / 3) % 6)).unwrap();
        let x: Vec<f64> = inst.buyers().iter().map(|b| rng.gen_range(0.0..=b.demand.support())).collect();
        let step = 1e-3;
        let disc = discrete_min_cost_flow(&inst, &x, step).unwrap();
        let cont = min_cost_flow(&inst, &round_to_grid(&x, step), DEFAULT_TOL).unwrap();
        let scale = inst.max_peak().max(1.0);
        assert!(
            (disc.cost - cont.cost).abs() <= 1e-4 * scale,
            "seed {seed}: lattice {} vs continuous {}",
            disc.cost,
            cont.cost
        );
        assert!(cont.cost <= disc.cost + 1e-9 * scale);
    }
}

#[test]
fn two_buyers_one_quadratic_item_fixed_point() {
    // c(y) = y/2; the optimum has p = c(x1 + x2) with x_i = λ_i⁻¹(p)
    let inst = MarketInstance::from_pairs(
        vec![
            BuyerType { id: "a".into(), demand: DemandFn::linear(1.0, 1.0, 1.0).unwrap() },
            BuyerType { id: "b".into(), demand: DemandFn::exponential(1.0, 2.0, 1.0).unwrap() },
        ],
        vec![Item { id: "t".into(), cost: CostFn::quadratic(0.25).unwrap() }],
        &[(0, 0), (1, 0)],
    )
    .unwrap();
    let residual = |p: f64| {
        let y: f64 = inst.buyers().iter().map(|b| b.demand.inverse(p)).sum();
        y / 2.0 - p
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p = 0.5 * (lo + hi);
    let opt = welfare_opt(&inst, DEFAULT_TOL).unwrap();
    assert!((opt.prices[0] - p).abs() < 1e-8, "{} vs {p}", opt.prices[0]);
    assert!((opt.demand[0] - (1.0 - p)).abs() < 1e-8);
    assert!((opt.demand[1] - (1.0 / p).ln() / 2.0).abs() < 1e-8);
}

/// Welfare of the best grid demand vector, with the cheapest routing for each.
fn brute_welfare(inst: &MarketInstance, points: usize) -> f64 {
    let nb = inst.num_buyers();
    let mut idx = vec![0usize; nb];
    let mut best = f64::NEG_INFINITY;
    loop {
        let x: Vec<f64> = (0..nb).map(|i| inst.buyers()[i].demand.support() * idx[i] as f64 / (points - 1) as f64).collect();
        let f = min_cost_flow(inst, &x, DEFAULT_TOL).unwrap();
        let value: f64 = inst.buyers().iter().zip(&x).map(|(b, &v)| b.demand.antiderivative(v)).sum();
        best = best.max(value - f.cost);
        let mut d = 0;
        loop {
            if d == nb {
                return best;
            }
            idx[d] += 1;
            if idx[d] < points {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

#[test]
fn welfare_optimum_beats_every_grid_demand() {
    for seed in 0..6 {
        let s = RandomMhrSpec { cost_families: vec![envyprice_core::oracle::generate::CostFamily::Quadratic], ..spec(100 + seed, 4, 4) };
        let inst = gen_random_mhr_instance(&s).unwrap();
        let opt = welfare_opt(&inst, DEFAULT_TOL).unwrap();
        let grid = brute_welfare(&inst, 13);
        assert!(opt.welfare >= grid - 1e-9, "seed {seed}: {} < grid {grid}", opt.welfare);
        // 13 points per buyer leave a small gap for strictly concave welfare
        assert!(opt.welfare - grid < 0.05, "seed {seed}: {} vs grid {grid}", opt.welfare);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn min_cost_flow_certifies(seed in 0u64..10_000, nb in 1usize..7, nt in 1usize..7, fr in prop::collection::vec(0.0f64..=1.0, 6)) {
        let inst = gen_random_mhr_instance(&spec(seed, nb, nt)).unwrap();
        let x: Vec<f64> = inst.buyers().iter().zip(&fr).map(|(b, u)| u * b.demand.support()).collect();
        let f = min_cost_flow(&inst, &x, DEFAULT_TOL).unwrap();
        let shipped = inst.shipped(&f.allocation);
        for (s, d) in shipped.iter().zip(&x) {
            prop_assert!((s - d).abs() <= 1e-9 * d.max(1.0));
        }
        prop_assert!(f.allocation.flows.iter().all(|&v| v >= 0.0));
        prop_assert!(kkt_violation(&inst, &x, &f.allocation).unwrap() <= 1e-8);
    }

    #[test]
    fn welfare_prices_are_envy_free(seed in 0u64..10_000, nb in 1usize..7, nt in 1usize..7) {
        let inst = gen_random_mhr_instance(&spec(seed, nb, nt)).unwrap();
        let opt = welfare_opt(&inst, DEFAULT_TOL).unwrap();
        let env = opt.solution().envy(&inst, 1e-7).unwrap();
        prop_assert!(env.passes, "{:?}", env);
        prop_assert!(opt.certificate <= 1e-8);
    }
}
