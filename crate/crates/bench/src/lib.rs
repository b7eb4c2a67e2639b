//! Inputs shared by the benchmarks.

use d2c_core::capmetrics::EvalPair;
use d2c_core::geom::Point;
use d2c_core::scenegen::{derive_seed, generate_episode, generate_scene, EpisodeConfig, Episode, Scene, SceneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` points scattered over a 96-pixel square.
pub fn cloud(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (rng.random_range(0.0..96.0), rng.random_range(0.0..96.0)))
        .collect()
}

pub fn scene(seed: u64) -> Scene {
    generate_scene(derive_seed(seed, 1, 0), &SceneConfig::default()).expect("default scene")
}

pub fn episode(seed: u64) -> Episode {
    generate_episode(derive_seed(seed, 3, 0), &EpisodeConfig::default()).expect("default episode")
}

/// Captions scored against their own episode's command, shifted by one so
/// most pairs only partly agree.
pub fn corpus(n: usize) -> Vec<EvalPair> {
    let cmds: Vec<_> = (0..n as u64).map(|s| episode(s).command).collect();
    (0..n)
        .map(|k| EvalPair::single(cmds[k].tokens(), cmds[(k + 1) % n].tokens()))
        .collect()
}
