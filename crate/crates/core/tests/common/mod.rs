//! Shared fixtures: a small surrogate of the first study zone, trained once
//! per test binary.
#![allow(dead_code)]

use std::sync::OnceLock;

use irrsched_core::field::{study_zones, ZoneSpec};
use irrsched_core::harness::{train_zone_surrogate, SurrogateOutcome, TrainingPlan};
use irrsched_core::surrogate::{Record, TrainHyper};

pub struct Fixture {
    pub zone: ZoneSpec,
    pub outcome: SurrogateOutcome,
}

pub fn small_plan() -> TrainingPlan {
    TrainingPlan {
        episodes: 60,
        episode_days: 45,
        evaluation_episodes: 12,
        surrogate: TrainHyper { units: 16, epochs: 24, ..TrainHyper::default() },
        seed: 11,
        ..TrainingPlan::default()
    }
}

pub fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let zone = study_zones().into_iter().next().expect("three zones");
        let outcome = train_zone_surrogate(&zone, &small_plan()).expect("fixture training");
        Fixture { zone, outcome }
    })
}

/// `lag` identical records at moisture `y` with no water.
pub fn flat_history(y: f64, lag: usize, z_r: f64) -> Vec<Record> {
    vec![[y, 0.0, 0.7, 4.0, z_r]; lag]
}
