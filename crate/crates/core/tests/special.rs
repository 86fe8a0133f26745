//! Properties of the special functions and the test statistics.

use forgetting_curve::analysis::special::{betainc, chi2_sf as chi2_sf_generic, ln_gamma};
use forgetting_curve::{anova_oneway, chi2_sf, f_sf, kruskal_wallis};
use proptest::prelude::*;

proptest! {
    #[test]
    fn chi2_two_df_closed_form(x in 0.0f64..50.0) {
        prop_assert!((chi2_sf(x, 2.0).unwrap() - (-x / 2.0).exp()).abs() < 1e-10);
    }

    #[test]
    fn f_two_numerator_df_closed_form(x in 0.0f64..50.0, nu in 0.5f64..200.0) {
        let closed = (1.0 + 2.0 * x / nu).powf(-nu / 2.0);
        prop_assert!((f_sf(x, 2.0, nu).unwrap() - closed).abs() < 1e-10);
    }

    #[test]
    fn tails_are_monotone(a in 0.0f64..40.0, b in 0.0f64..40.0, d1 in 1.0f64..30.0, d2 in 1.0f64..60.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(chi2_sf(hi, d1).unwrap() <= chi2_sf(lo, d1).unwrap() + 1e-15);
        prop_assert!(f_sf(hi, d1, d2).unwrap() <= f_sf(lo, d1, d2).unwrap() + 1e-15);
        let p = f_sf(lo, d1, d2).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn f_approaches_scaled_chi2(x in 0.05f64..8.0, d1 in 1.0f64..12.0) {
        let f = f_sf(x, d1, 1e6).unwrap();
        let c = chi2_sf(d1 * x, d1).unwrap();
        prop_assert!((f - c).abs() < 1e-3, "{f} vs {c}");
    }

    #[test]
    fn betainc_symmetry(x in 0.0f64..=1.0, a in 0.1f64..20.0, b in 0.1f64..20.0) {
        let l = betainc(a, b, x).unwrap();
        let r = 1.0 - betainc(b, a, 1.0 - x).unwrap();
        prop_assert!((l - r).abs() < 1e-10);
    }

    #[test]
    fn ln_gamma_recurrence(x in 0.1f64..100.0) {
        let lhs: f64 = ln_gamma(x + 1.0);
        let rhs = ln_gamma(x) + x.ln();
        prop_assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn anova_is_affine_invariant(
        groups in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 2..8), 2..5),
        scale in 0.1f64..50.0,
        shift in -1000.0f64..1000.0,
    ) {
        let moved: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| v * scale + shift).collect()).collect();
        match (anova_oneway(&groups), anova_oneway(&moved)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a.p_value - b.p_value).abs() < 1e-6);
                prop_assert!((a.statistic - b.statistic).abs() < 1e-6 * a.statistic.abs().max(1.0));
            }
            (Err(_), _) | (_, Err(_)) => {}
        }
    }

    #[test]
    fn kruskal_wallis_is_rank_based(
        groups in proptest::collection::vec(proptest::collection::vec(0u8..20, 2..8), 2..5),
    ) {
        let raw: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|&v| f64::from(v)).collect()).collect();
        let cubed: Vec<Vec<f64>> = raw.iter().map(|g| g.iter().map(|v| v * v * v + 7.0).collect()).collect();
        match (kruskal_wallis(&raw), kruskal_wallis(&cubed)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a.statistic - b.statistic).abs() < 1e-9);
                prop_assert!((a.p_value - b.p_value).abs() < 1e-9);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "one side failed: {a:?} / {b:?}"),
        }
    }
}

#[test]
fn single_precision_core_is_usable() {
    let p: f32 = chi2_sf_generic(2.0f32, 2.0f32).unwrap();
    assert!((p - (-1.0f32).exp()).abs() < 1e-5);
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(anova_oneway(&[vec![1.0, 2.0]]).is_err());
    assert!(anova_oneway(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
    assert!(kruskal_wallis(&[vec![3.0, 3.0], vec![3.0, 3.0]]).is_err());
    assert!(f_sf(-1.0, 2.0, 3.0).is_err());
    assert_eq!(f_sf(0.0, 2.0, 3.0).unwrap(), 1.0);
    assert!(chi2_sf(1.0, 0.0).is_err());
    assert!(chi2_sf(f64::NAN, 2.0).is_err());
}
