//! Train a reduced model on one cross-validation fold.

use rasnet::dataset::{generate_synthetic, SynthConfig};
use rasnet::encoder::EncoderConfig;
use rasnet::model::{Model, ModelConfig};
use rasnet::ras::RasConfig;
use rasnet::trainer::{evaluate, history_csv, kfold_split, TrainConfig, Trainer};

fn main() -> rasnet::Result<()> {
    let data = generate_synthetic(&SynthConfig {
        n_subjects: 10,
        height: 46,
        width: 46,
        fps: 5,
        median_time_s: 2.4,
        time_sigma: 0.25,
        min_time_s: 2.0,
        max_time_s: 3.0,
        ..SynthConfig::default()
    })?;
    let model_cfg = ModelConfig {
        encoder: EncoderConfig {
            feature_dim: 8,
            ..EncoderConfig::compact(46, [1, 2, 2, 4, 8])
        },
        ras: RasConfig {
            blocks: 2,
            ..RasConfig::default()
        },
        hidden: vec![16],
        ..ModelConfig::default()
    };
    let split = kfold_split(&data.ids(), 5, 0)?;
    let (train, val) = (split.train_indices(0), split.folds[0].clone());

    let model = Model::new(model_cfg, 0)?;
    println!("{} parameters", model.store().scalar_count());
    let mut trainer = Trainer::new(
        model,
        TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
    )?;
    trainer.fit(&data, &train, &val)?;
    print!("{}", history_csv(&trainer.history));
    let report = evaluate(&trainer.model, &data, &val, 0.5)?;
    println!("held-out accuracy {:.3} on {} subjects", report.accuracy, val.len());
    Ok(())
}
