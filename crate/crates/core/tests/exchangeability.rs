mod common;

use common::{hmm_joint, markov_joint, random_chain, random_hmm};
use knockoff_sim::model::{HiddenMarkovModel, MarkovChainModel};
use knockoff_sim::rng::seeded;
use nalgebra::DMatrix;

fn fixed_chain() -> MarkovChainModel {
    MarkovChainModel::new(
        vec![0.6, 0.4],
        vec![
            DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.1, 0.9]),
        ],
    )
    .unwrap()
}

#[test]
fn markov_knockoffs_swap_invariant_on_fixed_chain() {
    let law = markov_joint(&fixed_chain());
    assert!((law.total() - 1.0).abs() < 1e-12);
    let tv = law.max_any_swap_tv();
    assert!(tv <= 1e-10, "tv = {tv:e}");
}

#[test]
fn hmm_knockoffs_swap_invariant_on_fixed_model() {
    let emissions = vec![
        DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
        DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]),
        DMatrix::from_row_slice(2, 2, &[0.85, 0.15, 0.1, 0.9]),
    ];
    let hmm = HiddenMarkovModel::new(fixed_chain(), emissions).unwrap();
    let fresh = hmm_joint(&hmm, false);
    let reused = hmm_joint(&hmm, true);
    for law in [&fresh, &reused] {
        assert!((law.total() - 1.0).abs() < 1e-12);
        let tv = law.max_any_swap_tv();
        assert!(tv <= 1e-10, "tv = {tv:e}");
    }
    // reusing the latent path gives knockoffs more correlated with X
    assert!(reused.mean_self_correlation() > fresh.mean_self_correlation());
}

#[test]
fn random_models_swap_invariant() {
    let mut rng = seeded(2024);
    for p in 1..=4 {
        for k in 1..=3 {
            let chain = random_chain(p, k, &mut rng);
            let tv = markov_joint(&chain).max_any_swap_tv();
            assert!(tv <= 1e-10, "chain p={p} k={k} tv={tv:e}");
        }
    }
    for (p, k, m) in [(2, 2, 2), (3, 2, 3), (3, 3, 2), (4, 2, 2)] {
        let hmm = random_hmm(p, k, m, &mut rng);
        for reuse in [false, true] {
            let tv = hmm_joint(&hmm, reuse).max_single_swap_tv();
            assert!(tv <= 1e-10, "hmm p={p} k={k} m={m} reuse={reuse} tv={tv:e}");
        }
    }
}
