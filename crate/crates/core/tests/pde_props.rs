mod common;

use std::sync::Arc;

use proptest::prelude::*;

use common::{max_relative_diff, random_field};
use se3_scale::pde::{build_lb_operator, consistency_residual, evolve, impulse_response, kernel_table_from_pde, EvolutionConfig};
use se3_scale::{Boundary, DiffusionParams, Error, FodField, GridSpec, SphereSampling, Vec3};

fn setup(t: f64, boundary: Boundary) -> (Arc<SphereSampling>, DiffusionParams, EvolutionConfig) {
    let s = Arc::new(SphereSampling::icosphere(1).unwrap());
    let p = DiffusionParams::new(1.0, 0.02, t).unwrap();
    let cfg = EvolutionConfig::auto(&p, 1.0, &build_lb_operator(&s), boundary);
    (s, p, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn periodic_evolution_conserves_mass_and_sign(seed in any::<u64>()) {
        let (s, p, cfg) = setup(0.5, Boundary::Periodic);
        let u = random_field(GridSpec::new([5, 5, 5], 1.0).unwrap(), s, seed);
        let w = evolve(&u, &p, &cfg).unwrap();
        prop_assert!((w.mass() - u.mass()).abs() <= 1e-8 * u.mass());
        prop_assert!(w.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn evolution_is_linear(seed in any::<u64>(), a in 0.0..2.0f64, b in 0.0..2.0f64) {
        let (s, p, cfg) = setup(0.3, Boundary::Zero);
        let grid = GridSpec::new([5, 4, 5], 1.0).unwrap();
        let u1 = random_field(grid, s.clone(), seed);
        let u2 = random_field(grid, s.clone(), !seed);
        let mix: Vec<f64> = u1.values().iter().zip(u2.values()).map(|(x, y)| a * x + b * y).collect();
        let mixed = evolve(&FodField::new(grid, s, mix).unwrap(), &p, &cfg).unwrap();
        let w1 = evolve(&u1, &p, &cfg).unwrap();
        let w2 = evolve(&u2, &p, &cfg).unwrap();
        let expect: Vec<f64> = w1.values().iter().zip(w2.values()).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(max_relative_diff(mixed.values(), &expect) <= 1e-10);
    }
}

#[test]
fn impulse_response_is_elongated_along_its_orientation() {
    let (s, p, cfg) = setup(2.0, Boundary::Zero);
    let r = cfg.steps + 1;
    let grid = GridSpec::new([2 * r + 1; 3], 1.0).unwrap();
    let resp = impulse_response(&p, grid, s.clone(), &cfg).unwrap();
    let src = s.nearest(&Vec3::z());
    let c = grid.center();
    let along = resp.get([c[0], c[1], c[2] + 1], src);
    let across = resp.get([c[0] + 1, c[1], c[2]], src);
    assert!(along > 2.0 * across, "along {along}, across {across}");
    assert!((resp.mass() - 1.0).abs() <= 1e-8);
}

#[test]
fn table_from_pde_reproduces_evolution() {
    for (boundary, side) in [(Boundary::Periodic, 7), (Boundary::Zero, 11)] {
        let (s, p, cfg) = setup(0.5, boundary);
        let table = kernel_table_from_pde(&p, s.clone(), 1.0, &cfg, None).unwrap();
        let u = random_field(GridSpec::new([side; 3], 1.0).unwrap(), s, 5);
        let residual = consistency_residual(&table, &u, &p, &cfg).unwrap();
        assert!(residual <= 1e-6, "{boundary:?}: {residual}");
    }
}

#[test]
fn folded_table_matches_on_small_periodic_grid() {
    let (s, p, cfg) = setup(1.0, Boundary::Periodic);
    let table = kernel_table_from_pde(&p, s.clone(), 1.0, &cfg, None).unwrap();
    assert!(table.radius() > 2);
    let folded = table.fold_periodic(5).unwrap();
    let u = random_field(GridSpec::new([5, 5, 5], 1.0).unwrap(), s, 6);
    assert!(consistency_residual(&folded, &u, &p, &cfg).unwrap() <= 1e-6);
}

#[test]
fn oversized_step_is_rejected() {
    let (s, p, _) = setup(1.0, Boundary::Zero);
    let cfg = EvolutionConfig::with_dt(&p, 0.5, Boundary::Zero).unwrap();
    let u = FodField::zeros(GridSpec::cube(1), s);
    assert!(matches!(evolve(&u, &p, &cfg), Err(Error::Unstable { .. })));
    assert!(EvolutionConfig::with_dt(&p, 0.3, Boundary::Zero).is_err());
}
