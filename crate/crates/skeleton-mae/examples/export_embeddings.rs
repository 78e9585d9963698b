//! Exports sequence-level encoder features as JSONL, one `{label, vector}`
//! object per line, and probes them with a nearest-centroid classifier
//! before and after pre-training.
//!
//! The probe is deliberately crude: features are averaged over frames, so
//! motion classes stay hard to separate without fine-tuning (the finetune
//! example shows the actual transfer gain). The point here is the export
//! shape and that pre-training moves the features at all.
//!
//!     cargo run --release --example export_embeddings

use std::io::Write as _;

use skeleton_mae::config::RunConfig;
use skeleton_mae::data::{generate_synthetic, prepare_sequence, SkeletonSequence, SynthSpec};
use skeleton_mae::mae::{pretrain, MaeModel};
use skeleton_mae::numerics::Adam;

fn pooled_set(
    model: &MaeModel<f32>,
    seqs: &[SkeletonSequence],
) -> skeleton_mae::Result<Vec<(usize, Vec<f64>)>> {
    seqs.iter()
        .map(|s| Ok((s.label, model.encode_sequence_pooled(s)?)))
        .collect()
}

/// Classifies each held-out vector by its nearest train-class centroid.
fn nearest_centroid_accuracy(
    train: &[(usize, Vec<f64>)],
    test: &[(usize, Vec<f64>)],
    classes: usize,
) -> f64 {
    let dim = train[0].1.len();
    let mut centroids = vec![vec![0.0f64; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (label, v) in train {
        counts[*label] += 1;
        for (acc, x) in centroids[*label].iter_mut().zip(v) {
            *acc += x;
        }
    }
    for (c, count) in centroids.iter_mut().zip(&counts) {
        for x in c.iter_mut() {
            *x /= (*count).max(1) as f64;
        }
    }
    let mut hits = 0usize;
    for (label, v) in test {
        let best = centroids
            .iter()
            .enumerate()
            .map(|(c, cv)| {
                let d2: f64 = cv.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (c, d2)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c)
            .unwrap();
        hits += usize::from(best == *label);
    }
    hits as f64 / test.len() as f64
}

fn main() -> skeleton_mae::Result<()> {
    let mut run = RunConfig::default();
    run.seed = 13;
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
    let classes = spec.class_count;

    let mut model: MaeModel<f32> = MaeModel::new(&run.model, run.layout()?, run.seed)?;
    let init_test = pooled_set(&model, &test)?;
    let acc_init = nearest_centroid_accuracy(&pooled_set(&model, &train)?, &init_test, classes);
    println!("nearest-centroid accuracy, random encoder : {acc_init:.3}");

    let mut opt = Adam::new(&model.store, run.pretrain.learning_rate as f32);
    pretrain(&mut model, &mut opt, &train, &run, 0, None)?;
    let train_pooled = pooled_set(&model, &train)?;
    let test_pooled = pooled_set(&model, &test)?;
    let acc_trained = nearest_centroid_accuracy(&train_pooled, &test_pooled, classes);
    println!("nearest-centroid accuracy, pre-trained    : {acc_trained:.3}");

    let moved: f64 = init_test
        .iter()
        .zip(&test_pooled)
        .map(|((_, a), (_, b))| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / init_test.len() as f64;
    println!("mean feature displacement after pre-training: {moved:.4}");

    // One `{label, vector}` JSON object per line, ready for projection
    // or probing tools.
    let path = std::env::temp_dir().join("skmae_embeddings.jsonl");
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(&path).map_err(|e| skeleton_mae::Error::Io {
            path: path.display().to_string(),
            source: e,
        })?,
    );
    for (label, vector) in train_pooled.iter().chain(&test_pooled) {
        let line = serde_json::json!({ "label": label, "vector": vector });
        writeln!(out, "{line}").map_err(|e| skeleton_mae::Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    println!(
        "wrote {} embedding rows to {}",
        train_pooled.len() + test_pooled.len(),
        path.display()
    );
    Ok(())
}
