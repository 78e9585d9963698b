//! Hides both arms of held-out sequences and reconstructs the hidden
//! joint embeddings, printing how the mean cosine between target and
//! reconstruction on the hidden joints improves with pre-training.
//!
//!     cargo run --release --example reconstruct

use skeleton_mae::data::{generate_synthetic, prepare_sequence, SkeletonSequence, SynthSpec};
use skeleton_mae::config::RunConfig;
use skeleton_mae::mae::{frame_coords, pretrain, MaeModel};
use skeleton_mae::masking::{resolve_mask, MaskStrategy};
use skeleton_mae::numerics::{stream, Adam, Scalar, Tape};

/// Mean cosine over all masked joints of all frames of `seqs`, person 0.
fn mean_masked_cosine<T: Scalar>(
    model: &MaeModel<T>,
    seqs: &[SkeletonSequence],
    mask: &[usize],
    d: usize,
) -> skeleton_mae::Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in seqs {
        for t in 0..seq.frame_count() {
            let coords = frame_coords(seq, 0, t);
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape)?;
            let (target, recon) = model.reconstruction_pair(&mut tape, &bound, &coords, mask)?;
            let tv = tape.value(target).to_vec();
            let rv = tape.value(recon).to_vec();
            for &j in mask {
                let (mut dot, mut nt, mut nr) = (0.0, 0.0, 0.0);
                for k in 0..d {
                    let a = tv[j * d + k].widen();
                    let b = rv[j * d + k].widen();
                    dot += a * b;
                    nt += a * a;
                    nr += b * b;
                }
                total += dot / (nt.sqrt() * nr.sqrt());
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn main() -> skeleton_mae::Result<()> {
    let mut run = RunConfig::default();
    run.seed = 11;
    run.model.frames = 16;
    run.model.embed_dim = 16;
    run.model.hidden_dim = 16;
    run.model.encoder_depth = 2;
    run.pretrain.epochs = 12;
    run.pretrain.batch_size = 128;

    let layout = run.layout()?;
    let spec = SynthSpec {
        sequences_per_class: 15,
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

    // Both arms: the strategy the downstream comparison defaults to.
    let strategy = MaskStrategy::BodyParts {
        regions: vec![3, 5],
    };
    let mask = resolve_mask(&strategy, &layout, &mut stream(run.seed, "mask", 0, 0))?;
    println!("masking {} -> joints {:?}", strategy.label(), mask);

    let d = run.model.embed_dim;
    let mut model: MaeModel<f32> = MaeModel::new(&run.model, run.layout()?, run.seed)?;
    let before = mean_masked_cosine(&model, &test, &mask, d)?;
    println!("mean cosine on hidden joints, random init : {before:+.4}");

    let mut opt = Adam::new(&model.store, run.pretrain.learning_rate as f32);
    let report = pretrain(&mut model, &mut opt, &train, &run, 0, None)?;
    let after = mean_masked_cosine(&model, &test, &mask, d)?;
    println!("mean cosine on hidden joints, pre-trained : {after:+.4}");
    println!(
        "pre-training loss {:.4} -> {:.4} over {} epochs",
        report.epoch_losses.first().unwrap(),
        report.epoch_losses.last().unwrap(),
        report.epoch_losses.len()
    );
    Ok(())
}
