//! Downstream sequence classifier built from pre-trained graph encoders.
//!
//! Per frame, each person's embedded joint features (plus a learnable
//! temporal position embedding) pass through a residual graph block: an
//! encoder stack over the normalized adjacency, a joint sum-pool, a repeat
//! back to joint count, a bias-free projection, and an elementwise add with
//! the input. Person streams merge by addition after the first stacked
//! layer; each layer applies a shared linear map and ReLU. A multi-scale
//! temporal mean-pool (windows T, T/2, T/4, stride = window) feeds a
//! projection, a joint sum, and a linear head.
//!
//! Fine-tuning is SGD with momentum, linear warmup, step decay, and
//! label-smoothed cross-entropy.

use crate::backbones::{Activation, AdjacencyMode, BackboneKind, EncoderStack, GraphLayerConfig};
use crate::checkpoint::{self, Checkpoint, KIND_CLASSIFIER, KIND_PRETRAIN};
use crate::config::{FinetuneConfig, ModelConfig, RunConfig};
use crate::data::{pixel_noise, SkeletonSequence};
use crate::error::{Error, Result};
use crate::mae::embed_frame;
use crate::numerics::{
    stream, Bound, GradAccum, ParamId, ParamStore, Scalar, SgdMomentum, Tape, TensorId,
};
use crate::skeleton::{normalize_adjacency, Adjacency, SkeletonLayout};
use rand::Rng;
use std::path::{Path, PathBuf};

// ── residual graph block ────────────────────────────────────────────────

/// Encoder stack plus the bias-free residual projection closing the block.
pub struct SmBlock {
    encoder: EncoderStack,
    residual_proj: ParamId,
}

impl SmBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let act = match cfg.backbone {
            BackboneKind::Gin => Activation::None,
            _ => Activation::Prelu,
        };
        let configs = EncoderStack::uniform_configs(
            cfg.backbone,
            cfg.embed_dim,
            cfg.hidden_dim,
            cfg.encoder_depth,
            act,
            cfg.gat_heads,
        );
        Self::with_configs(store, prefix, &configs, cfg.embed_dim, rng)
    }

    /// Explicit layer configs, for variants and tests.
    pub fn with_configs<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        configs: &[GraphLayerConfig],
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let encoder = EncoderStack::new(store, &format!("{prefix}.encoder"), configs, rng)?;
        if encoder.in_dim() != width {
            return Err(Error::Config(format!(
                "block encoder expects width {}, layer width is {width}",
                encoder.in_dim()
            )));
        }
        let residual_proj = store.xavier_uniform(
            format!("{prefix}.residual_proj.weight"),
            &[encoder.out_dim(), width],
            rng,
        )?;
        Ok(SmBlock {
            encoder,
            residual_proj,
        })
    }

    pub fn encoder(&self) -> &EncoderStack {
        &self.encoder
    }

    /// Encode over the normalized adjacency, sum-pool joints, repeat the
    /// pooled vector per joint, project, and add the input back.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        h: TensorId,
        adj: &Adjacency,
    ) -> Result<TensorId> {
        let g = self
            .encoder
            .forward(tape, bound, h, adj, AdjacencyMode::NormalizedOnly)?;
        let pooled = tape.sum_axis(g, 0)?;
        let n = tape.shape(h)[0];
        let repeated = tape.repeat_rows(pooled, n)?;
        let projected = tape.matmul(repeated, bound.id(self.residual_proj))?;
        tape.add(projected, h)
    }
}

/// Free-function spelling of the block forward.
pub fn sm_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    block: &SmBlock,
    h: TensorId,
    adj: &Adjacency,
) -> Result<TensorId> {
    block.forward(tape, bound, h, adj)
}

// ── classifier ──────────────────────────────────────────────────────────

struct StrlLayer {
    blocks: [SmBlock; 2],
    weight: ParamId,
}

pub struct SequenceClassifier<T: Scalar> {
    pub store: ParamStore<T>,
    layout: SkeletonLayout,
    normalized: Adjacency,
    embed_weight: ParamId,
    embed_bias: ParamId,
    pe: ParamId,
    layers: Vec<StrlLayer>,
    pool_proj: ParamId,
    head_weight: ParamId,
    head_bias: ParamId,
    cfg: ModelConfig,
}

impl<T: Scalar> SequenceClassifier<T> {
    pub fn new(cfg: &ModelConfig, layout: SkeletonLayout, seed: u64) -> Result<Self> {
        if cfg.joints != layout.joint_count() {
            return Err(Error::Config(format!(
                "config joints {} but layout has {}",
                cfg.joints,
                layout.joint_count()
            )));
        }
        if cfg.frames % 4 != 0 {
            return Err(Error::Config(format!(
                "frame count {} is not divisible by 4; multi-scale pooling needs T, T/2, T/4",
                cfg.frames
            )));
        }
        if cfg.strl_depth == 0 {
            return Err(Error::Config("classifier needs at least one layer".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = stream(seed, "init", 0, 0);
        let embed_weight =
            store.xavier_uniform("input_embed.weight", &[2, cfg.embed_dim], &mut rng)?;
        let embed_bias = store.zeros("input_embed.bias", &[cfg.embed_dim])?;
        let pe = store.zeros("pe", &[cfg.frames, cfg.embed_dim])?;
        let mut layers = Vec::with_capacity(cfg.strl_depth);
        for l in 0..cfg.strl_depth {
            let blocks = [
                SmBlock::new(&mut store, &format!("layer{l}.block0"), cfg, &mut rng)?,
                SmBlock::new(&mut store, &format!("layer{l}.block1"), cfg, &mut rng)?,
            ];
            let weight = store.xavier_uniform(
                format!("layer{l}.weight"),
                &[cfg.embed_dim, cfg.embed_dim],
                &mut rng,
            )?;
            layers.push(StrlLayer { blocks, weight });
        }
        let pool_proj = store.xavier_uniform(
            "pool_proj.weight",
            &[7 * cfg.embed_dim, cfg.embed_dim],
            &mut rng,
        )?;
        // The forward path sums joints twice (block pool and final pool),
        // so features reach the head two orders of magnitude larger than
        // the input. A full-scale head init saturates the softmax before
        // the first step and training falls into a dead-ReLU basin; a
        // small head starts near the uniform distribution instead.
        let limit = 0.01 * (6.0 / (cfg.embed_dim + cfg.class_count) as f64).sqrt();
        let head_init: Vec<T> = (0..cfg.embed_dim * cfg.class_count)
            .map(|_| T::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit))
            .collect();
        let head_weight = store.add(
            "head.weight",
            &[cfg.embed_dim, cfg.class_count],
            head_init,
        )?;
        let head_bias = store.zeros("head.bias", &[cfg.class_count])?;
        let raw = layout.raw_adjacency();
        let normalized = normalize_adjacency(&raw)?;
        Ok(SequenceClassifier {
            store,
            layout,
            normalized,
            embed_weight,
            embed_bias,
            pe,
            layers,
            pool_proj,
            head_weight,
            head_bias,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &SkeletonLayout {
        &self.layout
    }

    /// Class logits for one prepared sequence (exactly 2 person slots,
    /// frame count matching the model).
    pub fn logits(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        seq: &SkeletonSequence,
    ) -> Result<TensorId> {
        let t = self.cfg.frames;
        let n = self.layout.joint_count();
        if seq.persons.len() != 2 {
            return Err(Error::Data(format!(
                "classifier expects 2 person slots, got {}",
                seq.persons.len()
            )));
        }
        if seq.frame_count() != t {
            return Err(Error::Data(format!(
                "sequence has {} frames; model expects {t}",
                seq.frame_count()
            )));
        }
        let mut frame_features = Vec::with_capacity(t);
        for frame in 0..t {
            let pe_row = tape.gather_rows(bound.id(self.pe), &[frame])?;
            // First layer: one block per person, merged by addition.
            let mut merged = None;
            for person in 0..2 {
                let coords: Vec<f64> = seq.persons[person][frame]
                    .iter()
                    .flat_map(|j| [j[0], j[1]])
                    .collect();
                let embedded = embed_frame(
                    tape,
                    bound,
                    self.embed_weight,
                    self.embed_bias,
                    &coords,
                    n,
                )?;
                let positioned = tape.add(embedded, pe_row)?;
                let out = self.layers[0].blocks[person].forward(
                    tape,
                    bound,
                    positioned,
                    &self.normalized,
                )?;
                merged = Some(match merged {
                    None => out,
                    Some(acc) => tape.add(acc, out)?,
                });
            }
            let mixed = tape.matmul(merged.expect("two persons"), bound.id(self.layers[0].weight))?;
            let mut h = tape.relu(mixed)?;
            // Later layers: the merged stream feeds both blocks.
            for layer in &self.layers[1..] {
                let a = layer.blocks[0].forward(tape, bound, h, &self.normalized)?;
                let b = layer.blocks[1].forward(tape, bound, h, &self.normalized)?;
                let sum = tape.add(a, b)?;
                let mixed = tape.matmul(sum, bound.id(layer.weight))?;
                h = tape.relu(mixed)?;
            }
            frame_features.push(h);
        }
        // Multi-scale temporal mean-pool: windows T, T/2, T/4, stride = window.
        let mut pooled = Vec::with_capacity(7);
        for window in [t, t / 2, t / 4] {
            let mut start = 0;
            while start < t {
                let mut acc = frame_features[start];
                for &f in &frame_features[start + 1..start + window] {
                    acc = tape.add(acc, f)?;
                }
                pooled.push(tape.scale(acc, T::from_f64(1.0 / window as f64))?);
                start += window;
            }
        }
        let concat = tape.concat(&pooled, 1)?;
        let projected = tape.matmul(concat, bound.id(self.pool_proj))?;
        let joints = tape.sum_axis(projected, 0)?;
        let row = tape.reshape(joints, &[1, self.cfg.embed_dim])?;
        let scores = tape.matmul(row, bound.id(self.head_weight))?;
        let biased = tape.add(scores, bound.id(self.head_bias))?;
        tape.reshape(biased, &[self.cfg.class_count])
    }

    /// Argmax prediction with lowest-index tie-break, plus the raw logits.
    pub fn predict(&self, seq: &SkeletonSequence) -> Result<(usize, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape)?;
        let logits = self.logits(&mut tape, &bound, seq)?;
        let values: Vec<f64> = tape.value(logits).iter().map(|v| v.widen()).collect();
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = i;
            }
        }
        Ok((best, values))
    }

    /// Copies pre-trained weights into this model: the input embedding by
    /// exact name, and every `encoder.*` tensor into each block's encoder
    /// by suffix match. Both directions must match completely.
    pub fn load_pretrained(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.meta.kind != KIND_PRETRAIN {
            return Err(Error::Checkpoint(format!(
                "expected a {KIND_PRETRAIN} checkpoint, found kind {:?}",
                ckpt.meta.kind
            )));
        }
        let mut filled: Vec<ParamId> = Vec::new();
        for name in ["input_embed.weight", "input_embed.bias"] {
            let (shape, data) = ckpt
                .tensor(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks tensor {name}")))?;
            let id = self.store.find(name).expect("embed params exist");
            copy_tensor(&mut self.store, id, name, shape, data)?;
            filled.push(id);
        }
        let encoder_tensors: Vec<&str> = ckpt
            .tensor_names()
            .filter(|n| n.starts_with("encoder."))
            .collect();
        for name in &encoder_tensors {
            let (shape, data) = ckpt.tensor(name).expect("listed above");
            let suffix = format!(".{name}");
            let targets: Vec<ParamId> = self
                .store
                .iter()
                .filter(|(_, p)| p.name.ends_with(&suffix))
                .map(|(id, _)| id)
                .collect();
            if targets.is_empty() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint tensor {name} matches no classifier parameter \
                     (encoder depth or backbone mismatch)"
                )));
            }
            for id in targets {
                copy_tensor(&mut self.store, id, name, shape, data)?;
                filled.push(id);
            }
        }
        // Every block encoder parameter must have been covered.
        let unfilled: Vec<String> = self
            .store
            .iter()
            .filter(|(id, p)| p.name.contains(".encoder.") && !filled.contains(id))
            .map(|(_, p)| p.name.clone())
            .collect();
        if !unfilled.is_empty() {
            return Err(Error::Checkpoint(format!(
                "checkpoint leaves encoder parameters unfilled: {}",
                unfilled.join(", ")
            )));
        }
        Ok(())
    }
}

fn copy_tensor<T: Scalar>(
    store: &mut ParamStore<T>,
    id: ParamId,
    name: &str,
    shape: &[usize],
    data: &[f32],
) -> Result<()> {
    if store.shape(id) != shape {
        return Err(Error::Checkpoint(format!(
            "tensor {name}: checkpoint shape {shape:?} does not match model shape {:?}",
            store.shape(id)
        )));
    }
    let values: Vec<T> = data.iter().map(|&v| T::from_f64(v as f64)).collect();
    store.set_data(id, &values)
}

// ── loss and schedule ───────────────────────────────────────────────────

/// Label-smoothed cross-entropy of one logit vector against a class index:
/// the target distribution puts 1−s on the label and s/C elsewhere (s/C
/// added everywhere, 1−s on top of the label).
pub fn cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: TensorId,
    label: usize,
    smoothing: f64,
) -> Result<TensorId> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 1 {
        return Err(Error::Shape {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![0],
        });
    }
    let classes = shape[0];
    if label >= classes {
        return Err(Error::Data(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Config(format!(
            "label smoothing must be in [0,1), got {smoothing}"
        )));
    }
    let mut target = vec![smoothing / classes as f64; classes];
    target[label] += 1.0 - smoothing;
    let q = tape.constant_f64(&target, &[classes])?;
    let logp = tape.log_softmax_last(logits)?;
    let weighted = tape.mul(q, logp)?;
    let sum = tape.sum_all(weighted)?;
    tape.neg(sum)
}

/// Piecewise learning rate: linear warmup from 0.01·lr to lr over
/// `warmup_epochs`, then flat with a multiplicative drop entering each
/// decay epoch (0-indexed).
pub fn learning_rate_at(cfg: &FinetuneConfig, epoch: usize) -> f64 {
    if epoch < cfg.warmup_epochs {
        return cfg.learning_rate
            * (0.01 + 0.99 * epoch as f64 / cfg.warmup_epochs as f64);
    }
    let mut lr = cfg.learning_rate;
    for &d in &cfg.decay_epochs {
        if epoch >= d {
            lr *= cfg.decay_factor;
        }
    }
    lr
}

// ── training and evaluation ─────────────────────────────────────────────

#[derive(Clone, Debug, serde::Serialize)]
pub struct FinetuneReport {
    pub epoch_losses: Vec<f64>,
    pub epoch_train_accuracy: Vec<f64>,
    pub test_top1: f64,
    pub test_mean_top1: f64,
    pub wall_time_secs: f64,
    pub checkpoint_path: Option<PathBuf>,
    /// "none" or the path of the loaded pre-training checkpoint.
    pub pretrained: String,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct EvalReport {
    pub top1: f64,
    pub mean_top1: f64,
    /// confusion[true_label][predicted_label]
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate<T: Scalar>(
    model: &SequenceClassifier<T>,
    data: &[SkeletonSequence],
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("evaluation dataset is empty".into()));
    }
    let classes = model.cfg.class_count;
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (i, seq) in data.iter().enumerate() {
        if seq.label >= classes {
            return Err(Error::Data(format!(
                "sequence {i}: label {} out of range for {classes} classes",
                seq.label
            )));
        }
        let (pred, _) = model.predict(seq)?;
        confusion[seq.label][pred] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let top1 = correct as f64 / data.len() as f64;
    let mut recalls = Vec::new();
    for c in 0..classes {
        let support: usize = confusion[c].iter().sum();
        if support > 0 {
            recalls.push(confusion[c][c] as f64 / support as f64);
        }
    }
    let mean_top1 = recalls.iter().sum::<f64>() / recalls.len() as f64;
    Ok(EvalReport {
        top1,
        mean_top1,
        confusion,
    })
}

/// SGD fine-tuning with momentum, seeded shuffling, optional coordinate
/// jitter, and label-smoothed cross-entropy. Reported train accuracy is
/// measured on the pre-update forward passes of each epoch.
pub fn finetune<T: Scalar>(
    model: &mut SequenceClassifier<T>,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    run: &RunConfig,
) -> Result<FinetuneReport> {
    let start = std::time::Instant::now();
    if train.is_empty() {
        return Err(Error::Data("fine-tuning dataset is empty".into()));
    }
    let cfg = &run.finetune;
    let classes = model.cfg.class_count;
    for (i, seq) in train.iter().enumerate() {
        if seq.label >= classes {
            return Err(Error::Data(format!(
                "sequence {i}: label {} out of range for {classes} classes",
                seq.label
            )));
        }
    }
    let mut opt = SgdMomentum::new(&model.store, T::from_f64(cfg.momentum));
    let n = train.len();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut epoch_train_accuracy = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let lr = T::from_f64(learning_rate_at(cfg, epoch));
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(run.seed, "ft-shuffle", epoch as u64, 0);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = GradAccum::zeros_like(&model.store);
            let scale = T::from_f64(1.0 / chunk.len() as f64);
            for &i in chunk {
                let seq = if run.data.noise_sigma > 0.0 {
                    let mut nrng = stream(run.seed, "ft-noise", epoch as u64, i as u64);
                    pixel_noise(&train[i], run.data.noise_sigma, &mut nrng)?
                } else {
                    train[i].clone()
                };
                let mut tape = Tape::new();
                let bound = model.store.bind(&mut tape)?;
                let logits = model.logits(&mut tape, &bound, &seq)?;
                let loss = cross_entropy(&mut tape, logits, seq.label, cfg.label_smoothing)
                    .map_err(|e| at_step(e, step))?;
                tape.backward(loss).map_err(|e| at_step(e, step))?;
                loss_sum += tape.item(loss).widen();
                let values = tape.value(logits);
                let mut best = 0;
                for (k, v) in values.iter().enumerate() {
                    if *v > values[best] {
                        best = k;
                    }
                }
                if best == seq.label {
                    correct += 1;
                }
                grads.add_scaled_from_tape(&model.store, &bound, &tape, scale);
            }
            opt.step(&mut model.store, &grads, lr)
                .map_err(|e| at_step(e, step))?;
            step += 1;
        }
        epoch_losses.push(loss_sum / n as f64);
        epoch_train_accuracy.push(correct as f64 / n as f64);
    }
    let (test_top1, test_mean_top1) = if test.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let report = evaluate(model, test)?;
        (report.top1, report.mean_top1)
    };
    Ok(FinetuneReport {
        epoch_losses,
        epoch_train_accuracy,
        test_top1,
        test_mean_top1,
        wall_time_secs: start.elapsed().as_secs_f64(),
        checkpoint_path: None,
        pretrained: "none".into(),
    })
}

fn at_step(err: Error, step: u64) -> Error {
    match err {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{op} at fine-tuning step {step}"),
        },
        other => other,
    }
}

/// Saves classifier parameters under the shared binary format.
pub fn save_classifier_checkpoint<T: Scalar>(
    model: &SequenceClassifier<T>,
    run: &RunConfig,
    epochs_completed: usize,
    path: &Path,
) -> Result<()> {
    checkpoint::write_checkpoint(
        path,
        KIND_CLASSIFIER,
        run,
        epochs_completed,
        0,
        &checkpoint::store_tensors(&model.store),
    )
}

/// Rebuilds a classifier exactly as checkpointed.
pub fn load_classifier<T: Scalar>(
    ckpt: &Checkpoint,
    layout: SkeletonLayout,
) -> Result<SequenceClassifier<T>> {
    if ckpt.meta.kind != KIND_CLASSIFIER {
        return Err(Error::Checkpoint(format!(
            "expected a {KIND_CLASSIFIER} checkpoint, found kind {:?}",
            ckpt.meta.kind
        )));
    }
    let mut model =
        SequenceClassifier::new(&ckpt.meta.config.model, layout, ckpt.meta.config.seed)?;
    checkpoint::load_store_exact(ckpt, &mut model.store)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, prepare_sequence, SynthSpec};
    use crate::mae::MaeModel;
    use crate::numerics::{finite_difference_check, DEFAULT_FD_STEP};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            frames: 8,
            embed_dim: 8,
            hidden_dim: 8,
            encoder_depth: 1,
            strl_depth: 1,
            ..Default::default()
        }
    }

    fn tiny_sets(per_class: usize, frames: usize) -> (Vec<SkeletonSequence>, Vec<SkeletonSequence>) {
        let layout = SkeletonLayout::coco17();
        let spec = SynthSpec {
            sequences_per_class: per_class,
            ..Default::default()
        };
        let (train, test) = generate_synthetic(&spec, &layout).unwrap();
        let prep = |v: Vec<SkeletonSequence>| {
            v.iter()
                .map(|s| prepare_sequence(s, &layout, frames).unwrap())
                .collect::<Vec<_>>()
        };
        (prep(train), prep(test))
    }

    // ── residual block ──────────────────────────────────────────────────

    #[test]
    fn zeroed_encoder_makes_the_block_an_exact_identity() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = stream(20, "test", 0, 0);
        let block = SmBlock::new(&mut store, "b", &tiny_cfg(), &mut rng).unwrap();
        // Zero every encoder weight; leave residual_proj random.
        let names: Vec<String> = store
            .iter()
            .filter(|(_, p)| p.name.starts_with("b.encoder."))
            .map(|(_, p)| p.name.clone())
            .collect();
        for name in names {
            let id = store.find(&name).unwrap();
            let len = store.data(id).len();
            store.set_data(id, &vec![0.0; len]).unwrap();
        }
        let layout = SkeletonLayout::coco17();
        let adj = normalize_adjacency(&layout.raw_adjacency()).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let mut hrng = stream(21, "test", 0, 0);
        let h_vals: Vec<f64> = (0..17 * 8).map(|_| hrng.random::<f64>()).collect();
        let h = tape.constant_f64(&h_vals, &[17, 8]).unwrap();
        let out = block.forward(&mut tape, &bound, h, &adj).unwrap();
        assert_eq!(tape.value(out), tape.value(h));
    }

    #[test]
    fn identity_encoder_on_ones_adds_the_joint_count() {
        // Edgeless 4-joint layout: normalized adjacency is the identity, so
        // a single no-activation GCN layer with unit weight is an identity
        // map. Sum-pool of ones = 4, repeated, projected by 1, added to 1.
        let layout = SkeletonLayout::custom(
            4,
            vec![vec![0, 1], vec![2, 3]],
            Vec::new(),
        )
        .unwrap();
        let adj = normalize_adjacency(&layout.raw_adjacency()).unwrap();
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = stream(22, "test", 0, 0);
        let cfgs = [GraphLayerConfig::new(
            BackboneKind::Gcn,
            1,
            1,
            Activation::None,
        )];
        let block = SmBlock::with_configs(&mut store, "b", &cfgs, 1, &mut rng).unwrap();
        for name in ["b.encoder.layer0.weight", "b.residual_proj.weight"] {
            let id = store.find(name).unwrap();
            store.set_data(id, &[1.0]).unwrap();
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let h = tape.constant_f64(&[1.0; 4], &[4, 1]).unwrap();
        let out = block.forward(&mut tape, &bound, h, &adj).unwrap();
        assert_eq!(tape.value(out), &[5.0, 5.0, 5.0, 5.0]);
    }

    #[test]
    fn block_matches_a_naive_pool_repeat_project_loop() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = stream(23, "test", 0, 0);
        let block = SmBlock::new(&mut store, "b", &tiny_cfg(), &mut rng).unwrap();
        let layout = SkeletonLayout::coco17();
        let adj = normalize_adjacency(&layout.raw_adjacency()).unwrap();
        let h_vals: Vec<f64> = (0..17 * 8).map(|_| rng.random::<f64>() - 0.5).collect();

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let h = tape.constant_f64(&h_vals, &[17, 8]).unwrap();
        let got_id = block.forward(&mut tape, &bound, h, &adj).unwrap();
        let got = tape.value(got_id).to_vec();

        // Naive: read the encoder output, then loop the rest.
        let g_id = block
            .encoder
            .forward(&mut tape, &bound, h, &adj, AdjacencyMode::NormalizedOnly)
            .unwrap();
        let g = tape.value(g_id);
        let proj = store.data(store.find("b.residual_proj.weight").unwrap());
        let mut pooled = [0.0f64; 8];
        for j in 0..17 {
            for k in 0..8 {
                pooled[k] += g[j * 8 + k];
            }
        }
        for j in 0..17 {
            for c in 0..8 {
                let mut v = 0.0;
                for k in 0..8 {
                    v += pooled[k] * proj[k * 8 + c];
                }
                v += h_vals[j * 8 + c];
                assert!((got[j * 8 + c] - v).abs() < 1e-6, "joint {j} dim {c}");
            }
        }
    }

    // ── forward shape and invariants ────────────────────────────────────

    #[test]
    fn logits_have_class_count_length_and_softmax_sums_to_one() {
        let cfg = ModelConfig {
            strl_depth: 3,
            ..tiny_cfg()
        };
        let model: SequenceClassifier<f64> =
            SequenceClassifier::new(&cfg, SkeletonLayout::coco17(), 30).unwrap();
        let (train, _) = tiny_sets(1, 8);
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape).unwrap();
        let logits = model.logits(&mut tape, &bound, &train[0]).unwrap();
        assert_eq!(tape.shape(logits), &[4]);
        let sm = tape.softmax_last(logits).unwrap();
        let sum: f64 = tape.value(sm).iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fresh_model_on_zero_input_gives_equal_logits() {
        // Embedding bias, PE, and head bias all start at zero.
        let model: SequenceClassifier<f64> =
            SequenceClassifier::new(&tiny_cfg(), SkeletonLayout::coco17(), 31).unwrap();
        let zero = SkeletonSequence {
            label: 0,
            persons: vec![vec![vec![[0.0, 0.0]; 17]; 8]; 2],
            confidence: None,
        };
        let (pred, logits) = model.predict(&zero).unwrap();
        for v in &logits {
            assert_eq!(*v, logits[0]);
        }
        // Tie-break goes to the lowest class index.
        assert_eq!(pred, 0);
    }

    #[test]
    fn wrong_frame_count_or_person_count_is_rejected() {
        let model: SequenceClassifier<f64> =
            SequenceClassifier::new(&tiny_cfg(), SkeletonLayout::coco17(), 32).unwrap();
        let bad_frames = SkeletonSequence {
            label: 0,
            persons: vec![vec![vec![[0.1, 0.2]; 17]; 6]; 2],
            confidence: None,
        };
        assert!(model.predict(&bad_frames).is_err());
        let one_person = SkeletonSequence {
            label: 0,
            persons: vec![vec![vec![[0.1, 0.2]; 17]; 8]],
            confidence: None,
        };
        assert!(model.predict(&one_person).is_err());
    }

    #[test]
    fn position_embedding_receives_gradient() {
        let model: SequenceClassifier<f64> =
            SequenceClassifier::new(&tiny_cfg(), SkeletonLayout::coco17(), 33).unwrap();
        let (train, _) = tiny_sets(1, 8);
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape).unwrap();
        let logits = model.logits(&mut tape, &bound, &train[0]).unwrap();
        let loss = cross_entropy(&mut tape, logits, train[0].label, 0.1).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(bound.id(model.pe)).expect("pe gradient");
        assert!(g.iter().any(|v| v.abs() > 0.0));
    }

    // ── loss and schedule ───────────────────────────────────────────────

    #[test]
    fn perfect_unsmoothed_logits_give_vanishing_loss() {
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.constant_f64(&[1e3, 0.0, 0.0, 0.0], &[4]).unwrap();
        let loss = cross_entropy(&mut tape, logits, 0, 0.0).unwrap();
        assert!(tape.item(loss) < 1e-3);
    }

    #[test]
    fn smoothed_loss_matches_a_manual_formula() {
        let mut rng = stream(24, "test", 0, 0);
        let raw: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.constant_f64(&raw, &[6]).unwrap();
        let loss = cross_entropy(&mut tape, logits, 2, 0.1).unwrap();
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let logz = max + raw.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let mut expect = 0.0;
        for (c, v) in raw.iter().enumerate() {
            let q = 0.1 / 6.0 + if c == 2 { 0.9 } else { 0.0 };
            expect -= q * (v - logz);
        }
        assert!((tape.item(loss) - expect).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = stream(25, "test", 0, 0);
        let raw: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let report = finite_difference_check(&raw, &[5], DEFAULT_FD_STEP, |tape, x| {
            cross_entropy(tape, x, 3, 0.1)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }

    #[test]
    fn out_of_range_labels_are_typed_errors() {
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.constant_f64(&[0.0; 4], &[4]).unwrap();
        let err = cross_entropy(&mut tape, logits, 4, 0.1).unwrap_err();
        assert!(err.to_string().contains("label 4"));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn learning_rate_schedule_is_piecewise_as_documented() {
        let cfg = FinetuneConfig::default();
        assert!((learning_rate_at(&cfg, 0) - 0.001).abs() < 1e-15);
        let e3 = 0.1 * (0.01 + 0.99 * 3.0 / 5.0);
        assert!((learning_rate_at(&cfg, 3) - e3).abs() < 1e-15);
        assert_eq!(learning_rate_at(&cfg, 5), 0.1);
        assert_eq!(learning_rate_at(&cfg, 89), 0.1);
        assert!((learning_rate_at(&cfg, 89) * 0.1 - learning_rate_at(&cfg, 90)).abs() < 1e-12);
        assert!((learning_rate_at(&cfg, 100) - 0.001).abs() < 1e-15);
        assert!((learning_rate_at(&cfg, 109) - 0.001).abs() < 1e-15);
        let no_warmup = FinetuneConfig {
            warmup_epochs: 0,
            ..FinetuneConfig::default()
        };
        assert_eq!(learning_rate_at(&no_warmup, 0), 0.1);
    }

    // ── evaluation ──────────────────────────────────────────────────────

    #[test]
    fn constant_predictor_scores_chance_on_a_balanced_set() {
        // Zero weights -> equal logits -> always class 0.
        let mut model: SequenceClassifier<f64> =
            SequenceClassifier::new(&tiny_cfg(), SkeletonLayout::coco17(), 34).unwrap();
        let names: Vec<String> = model.store.iter().map(|(_, p)| p.name.clone()).collect();
        for name in names {
            let id = model.store.find(&name).unwrap();
            let len = model.store.data(id).len();
            model.store.set_data(id, &vec![0.0; len]).unwrap();
        }
        let (_, test) = tiny_sets(5, 8);
        let report = evaluate(&model, &test).unwrap();
        assert_eq!(report.top1, 0.25);
        assert_eq!(report.mean_top1, 0.25);
        for (c, row) in report.confusion.iter().enumerate() {
            let support: usize = row.iter().sum();
            assert_eq!(support, test.iter().filter(|s| s.label == c).count());
            assert_eq!(row[0], support, "everything lands on class 0");
        }
    }

    #[test]
    fn empty_dataset_is_a_typed_error() {
        let model: SequenceClassifier<f64> =
            SequenceClassifier::new(&tiny_cfg(), SkeletonLayout::coco17(), 35).unwrap();
        let err = evaluate(&model, &[]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    // ── fine-tuning ─────────────────────────────────────────────────────

    fn tiny_run(epochs: usize) -> RunConfig {
        let mut run = RunConfig::default();
        run.model = tiny_cfg();
        run.finetune.epochs = epochs;
        run.finetune.warmup_epochs = 2.min(epochs);
        run.finetune.decay_epochs = vec![];
        run.finetune.batch_size = 16;
        run.finetune.learning_rate = 3e-4;
        run.data.noise_sigma = 0.0;
        run
    }

    #[test]
    fn zero_learning_rate_freezes_parameters_and_accuracy() {
        let mut run = tiny_run(2);
        run.finetune.learning_rate = 0.0;
        run.finetune.warmup_epochs = 0;
        let mut model: SequenceClassifier<f32> =
            SequenceClassifier::new(&run.model, SkeletonLayout::coco17(), 36).unwrap();
        let before: Vec<Vec<f32>> =
            model.store.iter().map(|(_, p)| p.data.clone()).collect();
        let (train, test) = tiny_sets(5, 8);
        let init_eval = evaluate(&model, &test).unwrap();
        let report = finetune(&mut model, &train, &test, &run).unwrap();
        for ((_, p), old) in model.store.iter().zip(&before) {
            assert_eq!(&p.data, old, "{} moved", p.name);
        }
        assert_eq!(report.test_top1, init_eval.top1);
    }

    #[test]
    fn a_few_epochs_of_training_beat_chance_on_the_toy_set() {
        let run = tiny_run(40);
        let mut model: SequenceClassifier<f32> =
            SequenceClassifier::new(&run.model, SkeletonLayout::coco17(), 37).unwrap();
        let (train, test) = tiny_sets(10, 8);
        let report = finetune(&mut model, &train, &test, &run).unwrap();
        assert_eq!(report.epoch_losses.len(), 40);
        assert_eq!(report.epoch_train_accuracy.len(), 40);
        let last = *report.epoch_train_accuracy.last().unwrap();
        assert!(last > 0.5, "train accuracy stuck at {last}");
        assert!(report.test_top1 > 0.3, "test top1 {}", report.test_top1);
        assert!(report.test_top1 >= 0.0 && report.test_top1 <= 1.0);
    }

    #[test]
    fn identical_seeds_give_identical_finetune_trajectories() {
        let run = tiny_run(3);
        let (train, test) = tiny_sets(5, 8);
        let go = || {
            let mut model: SequenceClassifier<f32> =
                SequenceClassifier::new(&run.model, SkeletonLayout::coco17(), 38).unwrap();
            finetune(&mut model, &train, &test, &run).unwrap()
        };
        let a = go();
        let b = go();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.test_top1, b.test_top1);
    }

    // ── pre-trained weight loading ──────────────────────────────────────

    fn pretrain_checkpoint(dir: &Path, cfg: &ModelConfig, seed: u64) -> PathBuf {
        let mut run = RunConfig::default();
        run.model = cfg.clone();
        run.seed = seed;
        let model: MaeModel<f32> =
            MaeModel::new(cfg, SkeletonLayout::coco17(), seed).unwrap();
        let opt = crate::numerics::Adam::new(&model.store, 1e-3f32);
        let path = dir.join("pre.skmae");
        crate::mae::save_pretrain_checkpoint(&model, &opt, &run, 0, &path).unwrap();
        path
    }

    #[test]
    fn loading_pretrained_weights_changes_the_initial_loss() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let path = pretrain_checkpoint(dir.path(), &cfg, 99);
        let ckpt = checkpoint::read_checkpoint(&path).unwrap();
        let (train, _) = tiny_sets(2, 8);
        let fresh: SequenceClassifier<f32> =
            SequenceClassifier::new(&cfg, SkeletonLayout::coco17(), 40).unwrap();
        let mut loaded: SequenceClassifier<f32> =
            SequenceClassifier::new(&cfg, SkeletonLayout::coco17(), 40).unwrap();
        loaded.load_pretrained(&ckpt).unwrap();
        // Every block encoder now carries the pre-trained tensors.
        let (_, w) = ckpt.tensor("encoder.layer0.mlp1.weight").unwrap();
        for (_, p) in loaded.store.iter() {
            if p.name.ends_with(".encoder.layer0.mlp1.weight") {
                assert_eq!(p.data, w.to_vec());
            }
        }
        let mean_loss = |m: &SequenceClassifier<f32>| {
            let mut total = 0.0;
            for seq in &train {
                let mut tape = Tape::new();
                let bound = m.store.bind(&mut tape).unwrap();
                let logits = m.logits(&mut tape, &bound, seq).unwrap();
                let loss = cross_entropy(&mut tape, logits, seq.label, 0.1).unwrap();
                total += tape.item(loss).widen();
            }
            total
        };
        assert_ne!(mean_loss(&fresh), mean_loss(&loaded));
    }

    #[test]
    fn dimension_mismatch_names_the_offending_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let wide = ModelConfig {
            embed_dim: 16,
            hidden_dim: 16,
            ..tiny_cfg()
        };
        let path = pretrain_checkpoint(dir.path(), &wide, 1);
        let ckpt = checkpoint::read_checkpoint(&path).unwrap();
        let mut narrow: SequenceClassifier<f32> =
            SequenceClassifier::new(&tiny_cfg(), SkeletonLayout::coco17(), 2).unwrap();
        let err = narrow.load_pretrained(&ckpt).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("input_embed.weight"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn depth_mismatch_is_rejected_in_both_directions() {
        let dir = tempfile::tempdir().unwrap();
        let deep = ModelConfig {
            encoder_depth: 2,
            ..tiny_cfg()
        };
        let shallow = tiny_cfg();
        // Checkpoint deeper than the classifier: extra tensor unmatched.
        let path = pretrain_checkpoint(dir.path(), &deep, 3);
        let ckpt = checkpoint::read_checkpoint(&path).unwrap();
        let mut model: SequenceClassifier<f32> =
            SequenceClassifier::new(&shallow, SkeletonLayout::coco17(), 4).unwrap();
        let msg = model.load_pretrained(&ckpt).unwrap_err().to_string();
        assert!(msg.contains("encoder.layer1"), "{msg}");
        // Classifier deeper than the checkpoint: parameters left unfilled.
        let path = pretrain_checkpoint(dir.path(), &shallow, 5);
        let ckpt = checkpoint::read_checkpoint(&path).unwrap();
        let mut model: SequenceClassifier<f32> =
            SequenceClassifier::new(&deep, SkeletonLayout::coco17(), 6).unwrap();
        let msg = model.load_pretrained(&ckpt).unwrap_err().to_string();
        assert!(msg.contains("unfilled"), "{msg}");
    }

    #[test]
    fn classifier_checkpoint_round_trips_predictions_bitwise() {
        let run = tiny_run(1);
        let mut model: SequenceClassifier<f32> =
            SequenceClassifier::new(&run.model, SkeletonLayout::coco17(), 41).unwrap();
        let (train, test) = tiny_sets(5, 8);
        finetune(&mut model, &train, &test, &run).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cls.skmae");
        save_classifier_checkpoint(&model, &run, 1, &path).unwrap();
        let ckpt = checkpoint::read_checkpoint(&path).unwrap();
        let loaded: SequenceClassifier<f32> =
            load_classifier(&ckpt, SkeletonLayout::coco17()).unwrap();
        for seq in &test {
            assert_eq!(model.predict(seq).unwrap(), loaded.predict(seq).unwrap());
        }
    }
}
