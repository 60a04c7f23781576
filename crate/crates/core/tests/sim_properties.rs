use std::f64::consts::PI;

use fwmeta::grid::build_operator;
use fwmeta::sim::{self, Flow};
use fwmeta::{ControlPath, Field, GridSpec, ModelSpec, OperatorDisc, SimConfig};
use proptest::prelude::*;

fn setup(points: usize) -> (ModelSpec, OperatorDisc, GridSpec) {
    let model = ModelSpec::allen_cahn(5.0);
    let grid = GridSpec::new(5.0, points, 1).unwrap();
    let op = build_operator(&model, &grid).unwrap();
    (model, op, grid)
}

fn sine(grid: GridSpec, mode: f64, amp: f64) -> Field {
    Field::from_fn(grid, |_, xi| amp * (mode * PI * xi / grid.length).sin())
}

#[test]
fn flow_endpoints_converge_at_first_order() {
    let (model, op, grid) = setup(99);
    let x0 = sine(grid, 1.0, 0.5).add(&sine(grid, 3.0, 0.3));
    let end = |dt: f64| {
        sim::integrate_flow(&x0, &model, &op, &SimConfig::new(dt, 1.0, 0.0))
            .unwrap()
            .last()
            .clone()
    };
    let (a, b, c) = (end(4e-3), end(2e-3), end(1e-3));
    let ratio = a.sub(&b).sup_norm() / b.sub(&c).sup_norm();
    assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn skeleton_is_lipschitz_in_the_initial_condition() {
    let (model, op, grid) = setup(99);
    let dt = 1e-3;
    let cfg = SimConfig::new(dt, 2.0, 0.0);
    let u = ControlPath::new(
        dt,
        (0..cfg.steps())
            .map(|n| sine(grid, 2.0, ((n as f64 + 0.5) * dt).cos()))
            .collect(),
    );
    let x0 = sine(grid, 1.0, 0.4);
    let direction = Field::from_fn(grid, |j, _| if j % 3 == 0 { 1.0 } else { -0.5 });
    let run = |x: &Field| sim::integrate_skeleton(x, &u, &model, &op, &cfg, |_, _| Flow::Continue).unwrap();
    let base = run(&x0);
    let gain = |eta: f64| base.sup_distance(&run(&x0.add(&direction.scaled(eta)))) / eta;
    let k = gain(1e-2);
    for eta in [1e-3, 1e-4] {
        let g = gain(eta);
        assert!(g <= 1.05 * k, "eta {eta}: gain {g} against {k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flow_obeys_the_maximum_principle(values in prop::collection::vec(-3.0f64..3.0, 49)) {
        let (model, op, grid) = setup(49);
        let x0 = Field::from_values(grid, values).unwrap();
        let bound = x0.sup_norm().max(1.0);
        let path = sim::integrate_flow(&x0, &model, &op, &SimConfig::new(1e-3, 0.5, 0.0)).unwrap();
        for s in &path.states {
            prop_assert!(s.sup_norm() <= bound + 1e-12);
        }
    }
}
