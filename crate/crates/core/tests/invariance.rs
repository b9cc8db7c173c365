// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use sparselift::metrics::{interpretability_proxy, intrusion_task, match_codes, match_dictionaries};
use sparselift::seed;
use sparselift::synthdgp::{codes_to_matrix, sample_codes, sample_dictionary, Dictionary, DictionaryKind, ValueDist};

/// Samples as rows.
fn truth() -> DMatrix<f64> {
    codes_to_matrix(&sample_codes(10, 3, ValueDist::UniformSigned, 600, 1).unwrap()).transpose()
}

/// A noisy, partly mixed estimate with two spurious units.
fn estimate(t: &DMatrix<f64>) -> DMatrix<f64> {
    let mut rng = seed::rng(2);
    let mix = DMatrix::from_fn(t.ncols(), t.ncols() + 2, |i, j| {
        if i == j {
            1.0
        } else {
            0.15 * rng.random_range(-1.0..1.0)
        }
    });
    let mut e = t * mix;
    e.apply(|v| *v += 0.05 * rng.random_range(-1.0..1.0));
    e
}

/// Column `j` of the output is column `perm[j]` of the input, times `signs[j]`.
fn permute(m: &DMatrix<f64>, perm: &[usize], signs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| signs[j] * m[(i, perm[j])])
}

fn random_perm(n: usize, s: u64, flip: bool) -> (Vec<usize>, Vec<f64>) {
    let mut rng = seed::rng(s);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let signs = (0..n).map(|_| if flip && rng.random_bool(0.5) { -1.0 } else { 1.0 }).collect();
    (perm, signs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn match_codes_is_bit_identical(s in any::<u64>()) {
        let t = truth();
        let e = estimate(&t);
        let base = match_codes(&t, &e).unwrap();
        let (perm, signs) = random_perm(e.ncols(), s, true);
        let r = match_codes(&t, &permute(&e, &perm, &signs)).unwrap();
        prop_assert_eq!(r.scalars(), base.scalars());
        prop_assert_eq!(r.matched_scores(), base.matched_scores());
        for (a, b) in base.permutation.iter().zip(&r.permutation) {
            let (a, b) = (a.unwrap(), b.unwrap());
            // estimated unit j of the permuted input is unit perm[j] of the original
            prop_assert_eq!(perm[b.estimated], a.estimated);
            prop_assert_eq!(f64::from(b.sign) * signs[b.estimated], f64::from(a.sign));
        }
    }

    #[test]
    fn match_dictionaries_is_bit_identical(s in any::<u64>()) {
        let t = sample_dictionary(12, 20, DictionaryKind::GaussianNormalized, 3).unwrap();
        let mut rng = seed::rng(4);
        let noisy = t.atoms().map(|v| v + 0.05 * rng.random_range(-1.0..1.0));
        let learned = Dictionary::from_unnormalized(noisy).unwrap();
        let base = match_dictionaries(&t, &learned).unwrap();
        let (perm, signs) = random_perm(20, s, true);
        let shuffled = Dictionary::new(permute(learned.atoms(), &perm, &signs)).unwrap();
        let r = match_dictionaries(&t, &shuffled).unwrap();
        prop_assert_eq!(r.scalars(), base.scalars());
        prop_assert_eq!(r.matched_scores(), base.matched_scores());
    }

    #[test]
    fn interpretability_proxy_is_bit_identical(s in any::<u64>()) {
        let t = truth();
        let e = estimate(&t);
        let base = interpretability_proxy(&e, &t).unwrap();
        let (perm, signs) = random_perm(e.ncols(), s, true);
        let r = interpretability_proxy(&permute(&e, &perm, &signs), &t).unwrap();
        prop_assert_eq!(r.mean, base.mean);
        for (j, &p) in perm.iter().enumerate() {
            prop_assert_eq!(r.per_unit[j], base.per_unit[p]);
        }
    }

    #[test]
    fn intrusion_is_bit_identical_under_permutation(s in any::<u64>()) {
        let t = truth();
        let e = estimate(&t);
        let base = intrusion_task(&e, &t, 4, 5, 7).unwrap();
        let (perm, signs) = random_perm(e.ncols(), s, false);
        let r = intrusion_task(&permute(&e, &perm, &signs), &t, 4, 5, 7).unwrap();
        prop_assert_eq!(r.accuracy, base.accuracy);
        prop_assert_eq!(r.correct, base.correct);
        prop_assert_eq!(r.trials, base.trials);
    }
}

#[test]
fn proxy_mean_is_the_exact_arithmetic_mean() {
    let t = truth();
    let r = interpretability_proxy(&estimate(&t), &t).unwrap();
    let mut v = r.per_unit.clone();
    v.sort_by(f64::total_cmp);
    let direct: f64 = v.iter().sum::<f64>() / v.len() as f64;
    assert!((r.mean - direct).abs() <= 2.0 * f64::EPSILON);
}

#[test]
fn perfect_recovery_fixed_point() {
    let t = truth();
    let r = match_codes(&t, &t).unwrap();
    assert_eq!(r.mcc, 1.0);
    assert_eq!(r.relative_l2, 0.0);
    assert_eq!((r.support_precision, r.support_recall), (Some(1.0), Some(1.0)));
    assert_eq!(interpretability_proxy(&t, &t).unwrap().mean, 1.0);
}
