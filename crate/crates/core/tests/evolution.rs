use proptest::prelude::*;
use toadwave_core::evolution::{simulate, Stepper};
use toadwave_core::grid::make_trait_grid;
use toadwave_core::{EvolutionConfig, Field2D};

fn config(theta_max: f64, h_x: f64, dt: f64) -> EvolutionConfig {
    let x_max = 120.0;
    EvolutionConfig {
        x_min: 0.0,
        x_max,
        n_x: (x_max / h_x).round() as usize + 1,
        trait_grid: make_trait_grid(1.0, theta_max, 11).unwrap(),
        alpha: 1.0,
        r: 1.0,
        dt,
        t_end: 40.0,
        initial_mass_width: 5.0,
        thresholds: vec![0.1, 0.01, 0.001],
        record_every: 1.0,
    }
}

#[test]
fn fitted_speed_is_stable_under_refinement() {
    let coarse = simulate(&config(2.0, 0.2, 0.02)).unwrap();
    let fine = simulate(&config(2.0, 0.1, 0.01)).unwrap();
    for thr in [0.1, 0.01, 0.001] {
        let a = coarse.trace.speed(thr).unwrap();
        let b = fine.trace.speed(thr).unwrap();
        assert!((a / b - 1.0).abs() < 0.01, "threshold {thr}: {a} vs {b}");
    }
}

#[test]
fn speed_does_not_drop_when_theta_max_grows() {
    let narrow = simulate(&config(1.5, 0.2, 0.02)).unwrap();
    let wide = simulate(&config(2.0, 0.2, 0.02)).unwrap();
    let a = narrow.trace.speed(0.01).unwrap();
    let b = wide.trace.speed(0.01).unwrap();
    assert!(b >= a * (1.0 - 0.01), "{a} then {b}");
}

#[test]
fn nearly_constant_diffusivity_spreads_at_the_kpp_speed() {
    let cfg = config(1.0 + 1e-9, 0.2, 0.02);
    let sim = simulate(&cfg).unwrap();
    for thr in [0.1, 0.01, 0.001] {
        let s = sim.trace.speed(thr).unwrap();
        assert!((s / 2.0 - 1.0).abs() < 0.03, "threshold {thr}: {s}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn steps_keep_the_density_nonnegative(
        values in prop::collection::vec(0.0f64..2.0, 41 * 5),
        dt in 0.01f64..0.5,
    ) {
        let cfg = EvolutionConfig {
            x_min: 0.0,
            x_max: 4.0,
            n_x: 41,
            trait_grid: make_trait_grid(1.0, 2.0, 5).unwrap(),
            alpha: 1.0,
            r: 1.0,
            dt,
            t_end: 10.0,
            initial_mass_width: 1.0,
            thresholds: vec![0.1],
            record_every: 1.0,
        };
        let mut n = Field2D::from_values(41, 5, values).unwrap();
        // the explicit reaction keeps signs only while dt r (rho - 1) <= 1
        let rho_max = n.marginal(&cfg.trait_grid).into_iter().fold(0.0, f64::max);
        prop_assume!(dt * (rho_max - 1.0) <= 1.0);
        let mut st = Stepper::new(&cfg).unwrap();
        st.step(&mut n).unwrap();
        prop_assert!(n.min() >= -1e-12);
    }
}
