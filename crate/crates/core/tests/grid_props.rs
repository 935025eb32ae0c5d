use proptest::prelude::*;
use stablenorm::grid::{divergence, gradient, BitMask, BoxGrid, Grid, ScalarField, TorusGrid, VectorField};

fn grids() -> impl Strategy<Value = Grid> {
    prop_oneof![
        (4usize..12).prop_map(|n| Grid::Torus(TorusGrid::new(2, n).unwrap())),
        (4usize..7).prop_map(|n| Grid::Torus(TorusGrid::new(3, n).unwrap())),
        (2usize..12, 0.05..2.0f64).prop_map(|(n, h)| Grid::Box(BoxGrid::new(n, h).unwrap())),
    ]
}

fn fields() -> impl Strategy<Value = (ScalarField, VectorField)> {
    grids().prop_flat_map(|g| {
        (
            prop::collection::vec(-1.0..1.0f64, g.cells()),
            prop::collection::vec(-1.0..1.0f64, g.dim() * g.vector_cells()),
        )
            .prop_map(move |(v, z)| {
                (
                    ScalarField::from_values(g, v).unwrap(),
                    VectorField::from_values(g, z).unwrap(),
                )
            })
    })
}

proptest! {
    #[test]
    fn divergence_is_minus_the_adjoint((v, z) in fields()) {
        let lhs = gradient(&v).dot(&z);
        let rhs = -v.dot(&divergence(&z));
        let scale = gradient(&v).norm() * z.norm() + v.norm() * divergence(&z).norm();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn gradient_respects_its_norm_bound((v, _) in fields()) {
        let g = v.grid;
        let dv = gradient(&v);
        prop_assert!(dv.norm().powi(2) <= g.gradient_norm_sq_bound() * v.norm().powi(2) * (1.0 + 1e-12));
    }

    #[test]
    fn scalar_csv_round_trip_is_bit_exact((v, z) in fields()) {
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        let back = ScalarField::read_csv(&v.header(), &buf[..]).unwrap();
        prop_assert_eq!(&back.values, &v.values);
        let mut buf = Vec::new();
        z.write_csv(&mut buf).unwrap();
        let back = VectorField::read_csv(&z.header(), &buf[..]).unwrap();
        prop_assert_eq!(&back.values, &z.values);
    }

    #[test]
    fn mask_run_lengths_round_trip(n in 4usize..10, bits in prop::collection::vec(any::<bool>(), 100)) {
        let g = Grid::Box(BoxGrid::new(n, 0.1).unwrap());
        let mut m = BitMask::empty(g);
        for (c, b) in m.cells.iter_mut().zip(&bits) {
            *c = *b;
        }
        let back = BitMask::from_run_lengths(g, &m.run_lengths()).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn torus_divergence_of_gradient_sums_to_zero() {
    let g = TorusGrid::new(2, 9).unwrap();
    let v = ScalarField::from_fn(g, |x| (7.0 * x[0]).sin() + x[1] * x[1]);
    let total: f64 = divergence(&gradient(&v)).values.iter().sum();
    assert!(total.abs() < 1e-10);
}
