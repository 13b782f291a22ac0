//! Shared fixture builders for the criterion benchmarks.

use vptag::rng::SplitMix64;
use vptag::synthbench::{generate_domains, SynthConfig};
use vptag::{EmbeddingProvider, Episode, ExpandedTransitions, Lattice, SynthData};

/// A dense random lattice of the given size.
pub fn random_lattice(t: usize, k: usize, seed: u64) -> Lattice {
    let mut rng = SplitMix64::new(seed);
    let emissions = (0..t)
        .map(|_| (0..k).map(|_| rng.next_f64() * 4.0 - 2.0).collect())
        .collect();
    let start = (0..k).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
    let trans = (0..k * k).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
    Lattice::new(emissions, ExpandedTransitions::from_parts(start, trans, k))
}

/// Benchmark-sized synthetic data: one 5-shot episode plus its provider.
pub fn bench_episode(seed: u64) -> (Episode, EmbeddingProvider) {
    let cfg = SynthConfig {
        n_slots: 4,
        dim: 32,
        shots: 5,
        n_train_episodes: 1,
        n_val_episodes: 1,
        n_test_episodes: 1,
        cluster_std: 0.15,
        norm_skew: 1.0,
        sentence_len_range: (8, 14),
        slot_density: 0.4,
        seed,
    };
    let SynthData { test, store, .. } = generate_domains(&cfg).unwrap();
    (
        test.episodes.into_iter().next().unwrap(),
        EmbeddingProvider::Contextual(store),
    )
}
