//! Desk-scale masked-autoencoder pre-training: masks one random body
//! region per sample, reconstructs the masked joint embeddings, and
//! prints the per-epoch reconstruction loss falling.
//!
//!     cargo run --example pretrain

use skeleton_mae::config::RunConfig;
use skeleton_mae::data::{generate_synthetic, prepare_sequence, SynthSpec};
use skeleton_mae::mae::{pretrain, MaeModel};
use skeleton_mae::numerics::Adam;

fn main() -> skeleton_mae::Result<()> {
    let mut run = RunConfig::default();
    run.seed = 5;
    run.model.frames = 16;
    run.model.embed_dim = 16;
    run.model.hidden_dim = 16;
    run.model.encoder_depth = 2;
    run.pretrain.epochs = 10;
    run.pretrain.batch_size = 128;

    let layout = run.layout()?;
    let spec = SynthSpec {
        sequences_per_class: 15,
        seed: run.seed,
        ..Default::default()
    };
    let (train_raw, _) = generate_synthetic(&spec, &layout)?;
    let train: Vec<_> = train_raw
        .iter()
        .map(|s| prepare_sequence(s, &layout, run.model.frames))
        .collect::<skeleton_mae::Result<_>>()?;

    let mut model: MaeModel<f32> = MaeModel::new(&run.model, layout, run.seed)?;
    let mut opt = Adam::new(&model.store, run.pretrain.learning_rate as f32);
    let report = pretrain(&mut model, &mut opt, &train, &run, 0, None)?;

    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {epoch:>2}  loss {loss:.6}");
    }
    println!(
        "{} sequences, {:.1}s wall time",
        train.len(),
        report.wall_time_secs
    );
    Ok(())
}
