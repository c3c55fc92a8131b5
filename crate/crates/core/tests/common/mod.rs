#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use latent_langevin::checkpoint;
use latent_langevin::flow::{FlowModel, MixtureSpec, Pipeline};
use latent_langevin::reward::{Generator, PullbackReward, RewardSpec};

/// Sources that determine trained weights; editing any of them retrains.
const TRAINING_SOURCES: [&str; 4] = [
    include_str!("../../src/flow.rs"),
    include_str!("../../src/diffnet.rs"),
    include_str!("../../src/optim.rs"),
    include_str!("../../src/rng.rs"),
];

fn cache_dir() -> PathBuf {
    let pipeline = Pipeline::quick();
    let mut h = DefaultHasher::new();
    TRAINING_SOURCES.hash(&mut h);
    format!("{pipeline:?}").hash(&mut h);
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("quick-pipeline-{:016x}", h.finish()))
}

fn train_or_load() -> Vec<Arc<FlowModel>> {
    let dir = cache_dir();
    let paths: Vec<PathBuf> = (1..=3).map(|l| dir.join(format!("level{l}.bin"))).collect();
    if paths.iter().all(|p| p.exists()) {
        if let Ok(models) = paths.iter().map(|p| checkpoint::load(p)).collect::<Result<Vec<_>, _>>() {
            return models.into_iter().map(Arc::new).collect();
        }
    }
    let levels = Pipeline::quick().run(&MixtureSpec::default()).expect("quick pipeline trains");
    std::fs::create_dir_all(&dir).expect("cache directory");
    for ((model, _), path) in levels.iter().zip(&paths) {
        checkpoint::save(model, path).expect("cache checkpoint");
    }
    levels.into_iter().map(|(m, _)| Arc::new(m)).collect()
}

/// Levels 1, 2 and 3 of the quick pipeline on the default mixture.
pub fn levels() -> &'static [Arc<FlowModel>] {
    static LEVELS: OnceLock<Vec<Arc<FlowModel>>> = OnceLock::new();
    LEVELS.get_or_init(train_or_load)
}

pub fn level3() -> Arc<FlowModel> {
    levels()[2].clone()
}

pub fn toy_pullback() -> PullbackReward {
    PullbackReward::new(RewardSpec::ToyMixture, Generator::Flow(level3())).expect("2D model")
}
