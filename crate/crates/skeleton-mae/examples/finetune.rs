//! Fine-tunes the sequence classifier twice from the same seed, once with
//! randomly initialized encoders and once with pre-trained weights, and
//! prints both accuracy trajectories side by side.
//!
//!     cargo run --release --example finetune

use skeleton_mae::checkpoint::read_checkpoint;
use skeleton_mae::classifier::{finetune, SequenceClassifier};
use skeleton_mae::config::RunConfig;
use skeleton_mae::data::{generate_synthetic, prepare_sequence, SkeletonSequence, SynthSpec};
use skeleton_mae::mae::{pretrain, save_pretrain_checkpoint, MaeModel};
use skeleton_mae::numerics::Adam;

fn main() -> skeleton_mae::Result<()> {
    let mut run = RunConfig::default();
    run.seed = 9;
    run.model.frames = 16;
    run.model.embed_dim = 16;
    run.model.hidden_dim = 16;
    run.model.encoder_depth = 1;
    run.model.strl_depth = 1;
    run.pretrain.epochs = 8;
    run.pretrain.batch_size = 128;
    run.finetune.epochs = 30;
    run.finetune.learning_rate = 3e-4;
    run.finetune.warmup_epochs = 5;
    run.finetune.decay_epochs = vec![];
    run.finetune.batch_size = 32;
    run.data.noise_sigma = 0.0;

    let layout = run.layout()?;
    let spec = SynthSpec {
        sequences_per_class: 25,
        seed: run.seed,
        ..Default::default()
    };
    let (train_raw, test_raw) = generate_synthetic(&spec, &layout)?;
    let prep = |raw: &[SkeletonSequence]| -> skeleton_mae::Result<Vec<SkeletonSequence>> {
        raw.iter()
            .map(|s| prepare_sequence(s, &layout, run.model.frames))
            .collect()
    };
    let (train, test) = (prep(&train_raw)?, prep(&test_raw)?);

    // Pre-train once and stash the encoder checkpoint in a temp dir.
    let mut mae: MaeModel<f32> = MaeModel::new(&run.model, run.layout()?, run.seed)?;
    let mut opt = Adam::new(&mae.store, run.pretrain.learning_rate as f32);
    pretrain(&mut mae, &mut opt, &train, &run, 0, None)?;
    let dir = std::env::temp_dir().join("skmae_finetune_example");
    let ckpt_path = dir.join("pretrained.skmae");
    save_pretrain_checkpoint(&mae, &opt, &run, run.pretrain.epochs, &ckpt_path)?;

    let mut scratch: SequenceClassifier<f32> =
        SequenceClassifier::new(&run.model, run.layout()?, run.seed)?;
    let scratch_report = finetune(&mut scratch, &train, &test, &run)?;

    let mut warm: SequenceClassifier<f32> =
        SequenceClassifier::new(&run.model, run.layout()?, run.seed)?;
    warm.load_pretrained(&read_checkpoint(&ckpt_path)?)?;
    let warm_report = finetune(&mut warm, &train, &test, &run)?;

    println!("epoch  random-init  pre-trained   (train accuracy)");
    for e in (0..run.finetune.epochs).step_by(5) {
        println!(
            "{e:>5}  {:>11.3}  {:>11.3}",
            scratch_report.epoch_train_accuracy[e], warm_report.epoch_train_accuracy[e]
        );
    }
    println!(
        "test top-1: random-init {:.3}, pre-trained {:.3}",
        scratch_report.test_top1, warm_report.test_top1
    );
    Ok(())
}
