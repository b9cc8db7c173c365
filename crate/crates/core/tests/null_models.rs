// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::DMatrix;
use sparselift::metrics::match_dictionaries;
use sparselift::synthdgp::{sample_dictionary, Dictionary, DictionaryKind};

/// Mean of the row-wise best |cosine|: an upper bound on any one-to-one matching.
fn row_max_mean(a: &Dictionary, b: &Dictionary) -> f64 {
    let g: DMatrix<f64> = a.atoms().tr_mul(b.atoms()).map(f64::abs);
    g.row_iter().map(|r| r.max()).sum::<f64>() / g.nrows() as f64
}

/// Greedy matching on |cosine|: a lower bound on the optimal matching.
fn greedy_mean(a: &Dictionary, b: &Dictionary) -> f64 {
    let g: DMatrix<f64> = a.atoms().tr_mul(b.atoms()).map(f64::abs);
    let mut entries: Vec<(f64, usize, usize)> =
        (0..g.nrows()).flat_map(|i| (0..g.ncols()).map(move |j| (i, j))).map(|(i, j)| (g[(i, j)], i, j)).collect();
    entries.sort_by(|x, y| y.0.total_cmp(&x.0));
    let (mut row_used, mut col_used) = (vec![false; g.nrows()], vec![false; g.ncols()]);
    let mut total = 0.0;
    for (v, i, j) in entries {
        if !row_used[i] && !col_used[j] {
            row_used[i] = true;
            col_used[j] = true;
            total += v;
        }
    }
    total / g.nrows() as f64
}

#[test]
fn random_dictionary_null_is_bracketed() {
    // Frozen from 200 independent pairs (M=32, N=64): mean 0.4173, sd 0.0065,
    // range [0.397, 0.433].
    let mut scores = Vec::new();
    for s in 0..20u64 {
        let a = sample_dictionary(32, 64, DictionaryKind::GaussianNormalized, 10_000 + 2 * s).unwrap();
        let b = sample_dictionary(32, 64, DictionaryKind::GaussianNormalized, 10_001 + 2 * s).unwrap();
        let mcc = match_dictionaries(&a, &b).unwrap().mcc;
        assert!(mcc <= row_max_mean(&a, &b) + 1e-12);
        assert!(mcc >= greedy_mean(&a, &b) - 1e-12);
        assert!((0.38..=0.46).contains(&mcc), "{mcc}");
        scores.push(mcc);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!((mean - 0.4173).abs() < 0.01, "{mean}");
}

#[test]
fn superposed_random_dictionaries() {
    for s in 0..5 {
        let d = sample_dictionary(8, 12, DictionaryKind::GaussianNormalized, s).unwrap();
        assert!(sparselift::metrics::superposition_check(&d).is_superposed);
    }
}
