use metalift::checkpoint::Checkpoint;
use metalift::config::Config;
use metalift::datagen::{gen_dataset, DataConfig};
use metalift::dataset::{dataset_to_string, load_dataset, save_dataset};
use metalift::lifter::{init_params, LifterConfig, LifterParams};
use metalift::skeleton::default_topology;
use metalift::training::{pretrain_random_distortion, TrainConfig};
use proptest::prelude::*;

fn small_data() -> Vec<metalift::DatasetEntry> {
    let data = DataConfig {
        sequences: 2,
        frames: 30,
        ..DataConfig::default()
    };
    gen_dataset(&default_topology(), &data, 9).unwrap()
}

#[test]
fn dataset_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let entries = small_data();
    let path = dir.path().join("ds.txt");
    save_dataset(&path, &entries).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(dataset_to_string(&back).unwrap(), dataset_to_string(&entries).unwrap());
}

#[test]
fn trained_checkpoint_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let lifter = LifterConfig {
        frames: 3,
        channels: 8,
        ..LifterConfig::default()
    };
    let train = TrainConfig {
        pretrain_epochs: 2,
        steps_per_epoch: 3,
        batch_size: 8,
        meta_batch: 2,
        ..TrainConfig::default()
    };
    let (params, report) = pretrain_random_distortion(init_params(&lifter).unwrap(), &small_data(), &train).unwrap();
    assert_eq!(report.records.len(), 2);

    let path = dir.path().join("m.ckpt");
    params.to_checkpoint().save(&path).unwrap();
    let back = LifterParams::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.config, params.config);
    assert!(back.values.iter().zip(&params.values).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let p = init_params(&LifterConfig {
        frames: 3,
        channels: 8,
        ..LifterConfig::default()
    })
    .unwrap();
    let mut bytes = p.to_checkpoint().to_bytes();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bytes).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..n - 3]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_toml_round_trips(seed in 0u64..1_000_000, epochs in 1usize..20, alpha in 0.0f64..1.0, frames in prop::sample::select(vec![9usize, 27])) {
        let mut c = Config::default().with_seed(seed);
        c.train.epochs = epochs;
        c.train.alpha = alpha;
        c.lifter.frames = frames;
        let back = Config::from_toml_str(&c.to_toml()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        prop_assert_eq!(back, c);
    }
}
