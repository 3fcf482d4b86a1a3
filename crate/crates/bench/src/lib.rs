//! Shared fixtures for the benchmarks.

use metalift::datagen::{gen_dataset, DataConfig, DatasetEntry};
use metalift::lifter::{init_params, LifterConfig, LifterParams, WindowBatch};
use metalift::skeleton::default_topology;
use metalift::taskgen::{preset, task_from_predicted};

pub fn dataset(sequences: usize, frames: usize) -> Vec<DatasetEntry> {
    let cfg = DataConfig {
        sequences,
        frames,
        ..DataConfig::default()
    };
    gen_dataset(&default_topology(), &cfg, 0).expect("dataset")
}

/// A lifter and `windows` d1-distorted windows of one sequence.
pub fn lifter_fixture(frames: usize, channels: usize, windows: usize) -> (LifterParams, WindowBatch) {
    let cfg = LifterConfig {
        frames,
        channels,
        ..LifterConfig::default()
    };
    let params = init_params(&cfg).expect("params");
    let entry = &dataset(1, frames + windows)[0];
    let d = preset("d1").expect("preset");
    let task = task_from_predicted(&entry.detected, &entry.motion.gt3d, &entry.motion.intrinsics, &d).expect("task");
    let mut batch = WindowBatch::new(frames, cfg.joints, cfg.root);
    for s in 0..windows {
        batch
            .push(&task.input, s, &task.intrinsics, &task.target.frames[s + frames / 2])
            .expect("window");
    }
    (params, batch)
}
