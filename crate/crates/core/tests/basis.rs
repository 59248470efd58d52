use msafe::basis::{build_multiscale_basis, build_spline_basis, decay_constant, project};
use msafe::poly::{inner_product, linear_combination, PiecewisePolynomial};
use proptest::prelude::*;

fn piecewise(cuts: &[f64], coefs: &[Vec<f64>]) -> PiecewisePolynomial {
    let mut bps = vec![0.0];
    bps.extend_from_slice(cuts);
    bps.push(1.0);
    PiecewisePolynomial::new(bps, coefs.to_vec()).unwrap()
}

fn arb_poly() -> impl Strategy<Value = PiecewisePolynomial> {
    (1usize..5)
        .prop_flat_map(|pieces| {
            (
                proptest::collection::btree_set(1u32..999, pieces - 1),
                proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 1..5), pieces),
            )
        })
        .prop_map(|(cuts, coefs)| {
            let cuts: Vec<f64> = cuts.into_iter().map(|c| c as f64 / 1000.0).collect();
            piecewise(&cuts, &coefs)
        })
}

#[test]
fn counts_and_level_sizes() {
    for n in 0..=5 {
        let b = build_multiscale_basis(3, n).unwrap();
        assert_eq!(b.len(), 4 << n);
        for level in 1..=n {
            assert_eq!(b.levels().iter().filter(|&&l| l == level).count(), 4 << (level - 1));
        }
        // ordered by level
        assert!(b.levels().windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn gram_matrices_are_symmetric_and_definite() {
    for b in [build_multiscale_basis(3, 3).unwrap(), build_spline_basis(10).unwrap()] {
        let g = b.gram();
        let d = b.d2gram();
        assert_eq!(g, &g.transpose());
        assert_eq!(d, &d.transpose());
        assert!(g.clone().cholesky().is_some());
    }
}

#[test]
fn prefix_truncation_matches_levels() {
    let b = build_multiscale_basis(3, 3).unwrap();
    for m in 0..=3 {
        assert_eq!(b.prefix_through_level(m), 4 << m);
    }
}

#[test]
fn smooth_projection_coefficients_decay() {
    let b = build_multiscale_basis(3, 4).unwrap();
    let c = project(&b, |x| (std::f64::consts::TAU * x).sin());
    let cp = decay_constant(&b).unwrap();
    for level in 1..=4 {
        let m = (0..b.len()).filter(|&j| b.level(j) == level).map(|j| c[j].abs()).fold(0.0, f64::max);
        assert!(m <= cp * 2f64.powi(-4 * level as i32) * std::f64::consts::TAU.powi(3));
    }
    // polynomials of degree ≤ 3 have no wavelet component
    let c = project(&b, |x| 1.0 - 2.0 * x + x * x * x);
    assert!((0..b.len()).filter(|&j| b.level(j) > 0).all(|j| c[j].abs() < 1e-13));
}

proptest! {
    #[test]
    fn refinement_preserves_values(f in arb_poly(), x in 0.0f64..1.0) {
        let mut bps = f.breakpoints().to_vec();
        bps.extend([0.125, 0.3, 0.77]);
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        let r = f.refine(&bps).unwrap();
        let (a, b) = (f.eval(x).unwrap(), r.eval(x).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn inner_product_is_symmetric_and_bilinear(f in arb_poly(), g in arb_poly(), h in arb_poly(), s in -2.0f64..2.0) {
        let fg = inner_product(&f, &g);
        prop_assert!((fg - inner_product(&g, &f)).abs() <= 1e-12 * (1.0 + fg.abs()));
        let combo = linear_combination(&[&g, &h], &[s, 1.0]);
        let lhs = inner_product(&f, &combo);
        let rhs = s * fg + inner_product(&f, &h);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs() + rhs.abs()));
    }

    #[test]
    fn self_inner_product_matches_zeroth_moment_of_square(f in arb_poly()) {
        let sq = inner_product(&f, &f);
        prop_assert!(sq >= 0.0);
        let one = PiecewisePolynomial::constant(1.0);
        prop_assert!((inner_product(&f, &one) - f.integral()).abs() <= 1e-12 * (1.0 + f.integral().abs()));
    }

    #[test]
    fn wavelets_kill_cubics(n in 1usize..4, c in proptest::collection::vec(-5.0f64..5.0, 4)) {
        let b = build_multiscale_basis(3, n).unwrap();
        let cubic = PiecewisePolynomial::from_global_monomials(vec![0.0, 1.0], vec![c]).unwrap();
        for j in (0..b.len()).filter(|&j| b.level(j) > 0) {
            prop_assert!(inner_product(&cubic, b.function(j)).abs() < 1e-11);
        }
    }
}
