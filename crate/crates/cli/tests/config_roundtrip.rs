// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use sparselift::dictlearn::{DeadAtomPolicy, InferenceMethod, UpdateRule};
use sparselift::ident::Activation;
use sparselift::phase::{PhaseSolver, SuccessCriterion};
use sparselift::solvers::StepRule;
use sparselift::synthdgp::{DictionaryKind, GeneratorKind, ValueDist};
use sparselift_cli::config::{parse_config, ExperimentConfig, ExperimentKind, SolveMethod};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), 1e-6..10.0f64, (1u32..1000).prop_map(|v| v as f64 / 7.0)]
}

fn positive() -> impl Strategy<Value = f64> {
    prop_oneof![1e-12..1e-3f64, 1e-3..5.0f64]
}

fn seed() -> impl Strategy<Value = u64> {
    0..=i64::MAX as u64
}

prop_compose! {
    fn config()(
        kind in prop::sample::select(ExperimentKind::ALL.to_vec()),
        master_seed in seed(),
        (n, k, m) in (2usize..40).prop_flat_map(|n| (Just(n), 0..=n.min(3), 1usize..40)),
        samples in 1usize..5000,
        value_dist in prop::sample::select(vec![ValueDist::UnitGaussianMagnitude, ValueDist::UniformSigned, ValueDist::Binary]),
        noise_sigma in finite(),
        method in prop::sample::select(vec![SolveMethod::Ista, SolveMethod::Fista, SolveMethod::Omp, SolveMethod::Exhaustive]),
        lambda in finite(),
        tol in positive(),
        iters in 1usize..5000,
        step_rule in prop::sample::select(vec![StepRule::FixedInverseLipschitz, StepRule::Backtracking]),
        solver_k in prop::option::of(0usize..=2),
        rounds in 1usize..100,
        dl_lambda in finite(),
        inference in prop::sample::select(vec![InferenceMethod::Ista, InferenceMethod::Fista]),
        update_rule in prop::sample::select(vec![UpdateRule::LeastSquaresThenProject, UpdateRule::ProjectedGradient]),
        dead in prop::sample::select(vec![DeadAtomPolicy::ReinitToWorstResidual, DeadAtomPolicy::Keep]),
        batch in prop::option::of(1usize..512),
        sae_lr in finite(),
        tie in any::<bool>(),
        sweep_n in 8usize..200,
        k_values in prop::collection::vec(1usize..=8, 1..5),
        m_values in prop::collection::vec(1usize..100, 1..8),
        trials in 1usize..300,
        criterion in prop::sample::select(vec![SuccessCriterion::SupportExact, SuccessCriterion::Mcc, SuccessCriterion::RelativeL2]),
        phase_solver in prop::sample::select(vec![PhaseSolver::Omp, PhaseSolver::Ista]),
        generator in prop::sample::select(vec![GeneratorKind::Linear, GeneratorKind::PointwiseCubicThenRotation, GeneratorKind::TwoLayerInvertible]),
        activation in prop::sample::select(vec![Activation::Tanh, Activation::Identity]),
        hidden in prop::collection::vec(1usize..128, 0..3),
        ident_seeds in prop::collection::vec(seed(), 1..6),
        observed in prop::option::of(4usize..10),
        top_q in 1usize..10,
    ) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(kind);
        c.master_seed = master_seed;
        c.output_dir = (master_seed % 3 == 0).then(|| format!("runs/{master_seed}").into());
        c.dgp.n = n;
        c.dgp.k = k;
        c.dgp.m = if c.dgp.dictionary_kind == DictionaryKind::Identity { n } else { m.max(n) };
        c.dgp.samples = samples;
        c.dgp.value_dist = value_dist;
        c.dgp.noise_sigma = noise_sigma;
        c.solver.method = method;
        c.solver.lambda = lambda;
        c.solver.tol = tol;
        c.solver.max_iters = iters;
        c.solver.step_rule = step_rule;
        c.solver.k = solver_k;
        c.dict_learn.outer_rounds = rounds;
        c.dict_learn.solver.lambda = dl_lambda;
        c.dict_learn.inference = inference;
        c.dict_learn.update_rule = update_rule;
        c.dict_learn.dead_atom_policy = dead;
        c.dict_learn.batch_size = batch;
        c.sae.learning_rate = sae_lr;
        c.sae.tie_weights = tie;
        c.sweep.n = sweep_n;
        c.sweep.k_values = k_values;
        c.sweep.m_values = m_values;
        c.sweep.trials_per_cell = trials;
        c.sweep.criterion = criterion;
        c.sweep.solver = phase_solver;
        c.ident.dgp.generator = generator;
        c.ident.dgp.observed_dim = observed;
        c.ident.classifier.activation = activation;
        c.ident.classifier.hidden = hidden;
        c.ident.seeds = ident_seeds;
        c.eval.top_q = top_q;
        c
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn serialized_configs_parse_back_equal(cfg in config()) {
        let text = cfg.to_toml();
        let back = parse_config(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml(), text);
    }
}

#[test]
fn defaults_round_trip_for_every_kind() {
    for kind in ExperimentKind::ALL {
        let cfg = ExperimentConfig::new(kind);
        assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }
}
