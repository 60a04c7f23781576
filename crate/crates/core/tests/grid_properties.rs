use fwmeta::grid::{apply_a, build_operator, h_norm, implicit_solve, semigroup_apply, sobolev_norm, sup_norm};
use fwmeta::{Field, GridSpec, ModelSpec, OperatorDisc};
use proptest::prelude::*;

const M: usize = 31;

fn operator() -> OperatorDisc {
    let model = ModelSpec::allen_cahn(5.0);
    build_operator(&model, &GridSpec::new(5.0, M, 1).unwrap()).unwrap()
}

fn field(values: Vec<f64>) -> Field {
    Field::from_values(GridSpec::new(5.0, M, 1).unwrap(), values).unwrap()
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, M)
}

proptest! {
    #[test]
    fn h_norm_is_bounded_by_the_sup_norm(v in values()) {
        let x = field(v);
        prop_assert!(h_norm(&x) <= 5f64.sqrt() * sup_norm(&x) + 1e-12);
    }

    #[test]
    fn implicit_solve_inverts_the_shifted_operator(v in values(), dt in 1e-4f64..1.0) {
        let op = operator();
        let rhs = field(v);
        let y = implicit_solve(&op, dt, &rhs).unwrap();
        let back = y.sub(&apply_a(&op, &y).unwrap().scaled(dt));
        prop_assert!(back.sub(&rhs).sup_norm() <= 1e-10 * (1.0 + rhs.sup_norm()));
    }

    #[test]
    fn semigroup_composes(v in values(), t in 0.0f64..1.0, s in 0.0f64..1.0) {
        let op = operator();
        let x = field(v);
        let once = semigroup_apply(&op, t + s, &x).unwrap();
        let twice = semigroup_apply(&op, t, &semigroup_apply(&op, s, &x).unwrap()).unwrap();
        prop_assert!(once.sub(&twice).sup_norm() <= 1e-10 * (1.0 + x.sup_norm()));
    }

    #[test]
    fn semigroup_contracts_the_h_norm(v in values(), t in 0.0f64..2.0) {
        let op = operator();
        let x = field(v);
        prop_assert!(h_norm(&semigroup_apply(&op, t, &x).unwrap()) <= h_norm(&x) * (1.0 + 1e-12));
    }

    #[test]
    fn sobolev_norm_of_order_zero_is_the_h_norm(v in values()) {
        let op = operator();
        let x = field(v);
        prop_assert!((sobolev_norm(&x, 0.0, &op).unwrap() - h_norm(&x)).abs() <= 1e-12 * (1.0 + h_norm(&x)));
    }

    #[test]
    fn sobolev_norm_grows_with_order_on_rough_fields(v in prop::collection::vec(0.5f64..2.0, M)) {
        // alternating signs put the weight on high modes
        let op = operator();
        let x = field(v.iter().enumerate().map(|(j, a)| if j % 2 == 0 { *a } else { -*a }).collect());
        let n: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|d| sobolev_norm(&x, *d, &op).unwrap()).collect();
        prop_assert!(n[0] < n[1] && n[1] < n[2]);
    }
}
