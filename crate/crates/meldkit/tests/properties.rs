use std::sync::Arc;

use meldkit::diagnostics::{ess, qq_compare, stuck_runs};
use meldkit::kde::{gaussian_product_params, naive_ratio, Kde};
use meldkit::models::gaussian::{standard_normal_ratio, GaussianTestbed};
use meldkit::models::h1n1::{eta_convolution, eta_recursive, h1n1_synthetic, H1n1Icu, H1n1Severity};
use meldkit::models::hiv::{hiv_links, HivData, HivModel, HivVariant};
use meldkit::special::{ln_normal_pdf, sorted};
use meldkit::wsre::{combine, estimate_single, JonesRatio, WeightingFunction, WsreMcmc};
use meldkit::{constant_ratio, DensityModel, RatioEvaluator, SampleSet, SharedRatio};
use proptest::prelude::*;

fn testbed_sets() -> Vec<meldkit::wsre::WeightedSampleSet> {
    let bed: Arc<dyn DensityModel> = Arc::new(GaussianTestbed::new(0.5).unwrap());
    WeightingFunction::grid_1d(-2.0, 4.0, 4, 2.25)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, wf)| {
            estimate_single(bed.clone(), wf, 200, &WsreMcmc::default(), 10 + i as u64, None)
                .unwrap()
                .0
        })
        .collect()
}

fn evaluators() -> Vec<(&'static str, SharedRatio)> {
    let sets = testbed_sets();
    let draws: Vec<f64> = (0..300).map(|i| ((i as f64 + 0.5) / 300.0 - 0.5) * 6.0).collect();
    let sample = SampleSet::from_scalars(&draws, "grid", None).unwrap();
    vec![
        ("analytic", standard_normal_ratio()),
        ("naive", naive_ratio(&sample, None).unwrap()),
        ("jones", Arc::new(JonesRatio::new(&sets[1]).unwrap())),
        ("combined", Arc::new(combine(&sets).unwrap())),
        ("constant", constant_ratio()),
    ]
}

/// Study proportions written out from the published link table, one
/// formula per study, without shared intermediate terms.
fn links_from_table(r: &[f64]) -> [f64; 12] {
    let q = 1.0 - r[0] - r[1];
    [
        r[0],
        r[1],
        r[2],
        r[3],
        (r[3] * r[1] + r[4] * q) / (1.0 - r[0]),
        r[2] * r[0] + r[3] * r[1] + r[4] * q,
        r[5] * r[2] * r[0] / (r[5] * r[2] * r[0] + r[6] * r[3] * r[1] + r[7] * r[4] * q),
        r[6] * r[3] * r[1] / (r[6] * r[3] * r[1] + r[7] * r[4] * q),
        (r[5] * r[2] * r[0] + r[6] * r[3] * r[1] + r[7] * r[4] * q) / (r[2] * r[0] + r[3] * r[1] + r[4] * q),
        r[6],
        r[8],
        (r[3] * r[1] + r[8] * r[4] * q) / (r[3] * r[1] + r[4] * q),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn self_ratio_is_exactly_one(x in -8.0f64..8.0) {
        for (name, r) in evaluators() {
            prop_assert_eq!(r.log_ratio(&[x], &[x]).unwrap(), 0.0, "{}", name);
        }
    }

    #[test]
    fn single_wsre_antisymmetric_and_additive(a in -3.0f64..5.0, b in -3.0f64..5.0, c in -3.0f64..5.0) {
        let sets = testbed_sets();
        let j = JonesRatio::new(&sets[2]).unwrap();
        let ab = j.log_ratio(&[a], &[b]).unwrap();
        prop_assert_eq!(ab, -j.log_ratio(&[b], &[a]).unwrap());
        let (bc, ac) = (j.log_ratio(&[b], &[c]).unwrap(), j.log_ratio(&[a], &[c]).unwrap());
        // Equal up to the rounding of one subtraction per term.
        let scale = ab.abs().max(bc.abs()).max(ac.abs()).max(1.0);
        prop_assert!((ab + bc - ac).abs() <= 8.0 * f64::EPSILON * scale);
    }

    #[test]
    fn kde_is_permutation_invariant(
        (xs, ys) in prop::collection::vec(-5.0f64..5.0, 5..40).prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle())),
        at in -6.0f64..6.0,
    ) {
        prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-3));
        let a = Kde::new(&SampleSet::from_scalars(&xs, "a", None).unwrap(), None).unwrap();
        let b = Kde::new(&SampleSet::from_scalars(&ys, "b", None).unwrap(), None).unwrap();
        prop_assert!((a.bandwidth()[0] - b.bandwidth()[0]).abs() <= 1e-14 * a.bandwidth()[0]);
        let (la, lb) = (a.log_pdf(&[at]).unwrap(), b.log_pdf(&[at]).unwrap());
        prop_assert!((la - lb).abs() <= 1e-12 * la.abs().max(1.0));
    }

    #[test]
    fn gaussian_product_identity(phi in -10.0f64..10.0, phin in -10.0f64..10.0, h in 0.05f64..3.0, mu in -10.0f64..10.0, s2 in 0.05f64..9.0) {
        let g = gaussian_product_params(phin, h, mu, s2).unwrap();
        let lhs = ln_normal_pdf(phi, phin, h * h) + ln_normal_pdf(phi, mu, s2);
        let rhs = g.log_s + ln_normal_pdf(phi, g.mean, g.var);
        prop_assert!((lhs.exp() - rhs.exp()).abs() <= 1e-12 * lhs.exp().max(1e-300) + 1e-300);
    }

    #[test]
    fn hiv_links_match_table(r in prop::array::uniform9(0.001f64..0.999)) {
        prop_assume!(r[0] + r[1] < 0.999);
        let got = hiv_links(&r).unwrap();
        let want = links_from_table(&r);
        for s in 0..12 {
            prop_assert!((got[s] - want[s]).abs() <= 1e-12 * want[s].abs().max(1e-300), "π{}", s + 1);
        }
    }

    #[test]
    fn eta_forms_agree(lambda in prop::collection::vec(0.0f64..200.0, 1..80), mu in 0.001f64..2.0) {
        let a = eta_recursive(&lambda, mu);
        let b = eta_convolution(&lambda, mu);
        prop_assert_eq!(a[0], 0.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
        }
    }

    #[test]
    fn hiv_densities_are_never_nan(r in prop::array::uniform9(-0.2f64..1.2)) {
        for v in [HivVariant::Full, HivVariant::Sub1] {
            let m = HivModel::new(HivData::default(), v);
            prop_assert!(!m.log_density(&r).is_nan());
            prop_assert!(!m.prior().log_density(&r).is_nan());
        }
        let m2 = HivModel::new(HivData::default(), HivVariant::Sub2);
        prop_assert!(!m2.log_density(&r[..1]).is_nan());
    }

    #[test]
    fn h1n1_densities_are_never_nan(u in prop::collection::vec(-0.5f64..1.5, 200), scale in 0.0f64..500.0) {
        let icu = H1n1Icu::new(h1n1_synthetic(2, 28).unwrap()).unwrap();
        let theta: Vec<f64> = (0..icu.dim()).map(|i| u[i % u.len()] * if i < 56 { scale } else { 1.0 }).collect();
        prop_assert!(!icu.log_density(&theta).is_nan());
        let sev = [u[0] * scale, u[1] * scale * 8.0, u[2] * 200.0, u[3] * 3000.0, u[4]];
        prop_assert!(!H1n1Severity.log_density(&sev).is_nan());
    }

    #[test]
    fn ess_is_scale_and_shift_invariant(xs in prop::collection::vec(-3.0f64..3.0, 20..200), a in 0.01f64..100.0, b in -50.0f64..50.0) {
        prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-6));
        let e0 = ess(&xs).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let e1 = ess(&ys).unwrap();
        prop_assert_eq!(e0.flag, e1.flag);
        prop_assert!((e0.value - e1.value).abs() <= 1e-6 * e0.value);
    }

    #[test]
    fn qq_quantiles_monotone_and_order_free(xs in prop::collection::vec(-9.0f64..9.0, 1..100), ys in prop::collection::vec(-9.0f64..9.0, 1..100)) {
        let grid = meldkit::diagnostics::default_grid();
        let t = qq_compare(&xs, &ys, &grid).unwrap();
        prop_assert!(t.a.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(t.b.windows(2).all(|w| w[0] <= w[1]));
        let mut rev = xs.clone();
        rev.reverse();
        let u = qq_compare(&rev, &ys, &grid).unwrap();
        prop_assert_eq!(&t.a, &u.a);
        let swapped = qq_compare(&ys, &xs, &grid).unwrap();
        prop_assert_eq!(&t.a, &swapped.b);
        prop_assert_eq!(t.max_gap, swapped.max_gap);
        prop_assert_eq!(sorted(&xs).len(), xs.len());
    }

    #[test]
    fn stuck_runs_are_exact(runs in prop::collection::vec(1usize..30, 1..20)) {
        // Piecewise-constant chain with known run lengths.
        let xs: Vec<f64> = runs.iter().enumerate().flat_map(|(k, &len)| std::iter::repeat(k as f64).take(len)).collect();
        let r = stuck_runs(&xs, 10);
        let longest = *runs.iter().max().unwrap();
        prop_assert_eq!(r.longest_run, longest);
        prop_assert_eq!(r.longest_start, runs[..runs.iter().position(|&l| l == longest).unwrap()].iter().sum::<usize>());
        prop_assert_eq!(r.terminal_run, *runs.last().unwrap());
        prop_assert!(r.longest_run <= r.length);
        let long: usize = runs.iter().filter(|&&l| l >= 10).sum();
        prop_assert_eq!(r.fraction_in_long_runs, long as f64 / xs.len() as f64);
    }
}
