//! Masked-autoencoder pre-training over skeleton graphs.
//!
//! Each skeleton frame is embedded per joint by a shared learnable linear
//! map, a region-derived subset of joint rows is replaced by a learnable
//! mask token, an encoder stack produces hidden features, and a single
//! graph layer decodes them back to embedding width. The objective pushes
//! the cosine between each masked row's reconstruction and its embedded
//! target toward 1, re-weighted by a power beta.
//!
//! Reconstruction targets are the embedded inputs with gradient flow
//! blocked (a learnable target would let the embedding collapse all rows
//! onto one direction and win for free). Gradients still reach the
//! embedding through the unmasked rows entering the encoder.

use crate::backbones::{
    Activation, AdjacencyMode, BackboneKind, EncoderStack, GraphLayer, GraphLayerConfig,
};
use crate::checkpoint::{self, Checkpoint, KIND_PRETRAIN};
use crate::config::{ModelConfig, RunConfig};
use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::masking::{apply_mask, resolve_mask};
use crate::numerics::{
    stream, Adam, Bound, GradAccum, ParamId, ParamStore, Scalar, Tape, TensorId,
};
use crate::skeleton::{normalize_adjacency, Adjacency, SkeletonLayout};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::path::{Path, PathBuf};

/// Guard added to each norm in the cosine denominator.
pub const NORM_EPSILON: f64 = 1e-12;

// ── model ───────────────────────────────────────────────────────────────

pub struct MaeModel<T: Scalar> {
    pub store: ParamStore<T>,
    layout: SkeletonLayout,
    raw: Adjacency,
    normalized: Adjacency,
    encoder: EncoderStack,
    decoder: GraphLayer,
    embed_weight: ParamId,
    embed_bias: ParamId,
    mask_token: ParamId,
    cfg: ModelConfig,
}

impl<T: Scalar> MaeModel<T> {
    /// Builds a freshly initialized model. Parameter creation order is
    /// fixed; it defines the checkpoint descriptor order.
    pub fn new(cfg: &ModelConfig, layout: SkeletonLayout, seed: u64) -> Result<Self> {
        if cfg.joints != layout.joint_count() {
            return Err(Error::Config(format!(
                "config joints {} but layout has {}",
                cfg.joints,
                layout.joint_count()
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = stream(seed, "init", 0, 0);
        let embed_weight =
            store.xavier_uniform("input_embed.weight", &[2, cfg.embed_dim], &mut rng)?;
        let embed_bias = store.zeros("input_embed.bias", &[cfg.embed_dim])?;
        // A zero token would make every interior masked row reconstruct to
        // exactly zero at init (zero biases, PReLU(0) = 0), which the
        // degenerate-cosine guard rejects; start it small but nonzero.
        let limit = (6.0 / (1.0 + cfg.embed_dim as f64)).sqrt();
        let token_init: Vec<T> = (0..cfg.embed_dim)
            .map(|_| T::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit))
            .collect();
        let mask_token = store.add("mask_token", &[cfg.embed_dim], token_init)?;
        // GIN layers carry a PReLU inside their two-layer MLP, so they take
        // no output activation; GCN/GAT get PReLU as their output nonlinearity.
        let enc_act = match cfg.backbone {
            BackboneKind::Gin => Activation::None,
            _ => Activation::Prelu,
        };
        let configs = EncoderStack::uniform_configs(
            cfg.backbone,
            cfg.embed_dim,
            cfg.hidden_dim,
            cfg.encoder_depth,
            enc_act,
            cfg.gat_heads,
        );
        let encoder = EncoderStack::new(&mut store, "encoder", &configs, &mut rng)?;
        // The decoder is always one GIN layer back to embedding width, with
        // no activation so reconstructions are not positivity-biased.
        let decoder = GraphLayer::new(
            &mut store,
            "decoder.layer0",
            GraphLayerConfig::new(
                BackboneKind::Gin,
                cfg.hidden_dim,
                cfg.embed_dim,
                Activation::None,
            ),
            &mut rng,
        )?;
        let raw = layout.raw_adjacency();
        let normalized = normalize_adjacency(&raw)?;
        Ok(MaeModel {
            store,
            layout,
            raw,
            normalized,
            encoder,
            decoder,
            embed_weight,
            embed_bias,
            mask_token,
            cfg: cfg.clone(),
        })
    }

    pub fn layout(&self) -> &SkeletonLayout {
        &self.layout
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn mask_token_id(&self) -> ParamId {
        self.mask_token
    }

    /// Adjacency the encoder consumes: spectral-normalized for GCN, raw
    /// binary for GIN and GAT.
    pub fn encoder_adjacency(&self) -> &Adjacency {
        match self.cfg.backbone {
            BackboneKind::Gcn => &self.normalized,
            _ => &self.raw,
        }
    }

    pub fn embed_frame(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        coords: &[f64],
    ) -> Result<TensorId> {
        embed_frame(
            tape,
            bound,
            self.embed_weight,
            self.embed_bias,
            coords,
            self.layout.joint_count(),
        )
    }

    /// Per-frame embeddings of one person track; logically joints×frames×D.
    pub fn embed_sequence(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        track: &[Vec<[f64; 2]>],
    ) -> Result<Vec<TensorId>> {
        track
            .iter()
            .map(|frame| {
                let coords: Vec<f64> = frame.iter().flat_map(|j| [j[0], j[1]]).collect();
                self.embed_frame(tape, bound, &coords)
            })
            .collect()
    }

    /// Embeds, masks, encodes, decodes. Returns the stop-gradient target
    /// and the reconstruction, both joints×D.
    pub fn reconstruction_pair(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        coords: &[f64],
        mask: &[usize],
    ) -> Result<(TensorId, TensorId)> {
        let embedded = self.embed_frame(tape, bound, coords)?;
        let target = tape.detach(embedded)?;
        let masked = apply_mask(tape, embedded, mask, bound.id(self.mask_token))?;
        let hidden = self.encoder.forward(
            tape,
            bound,
            masked,
            self.encoder_adjacency(),
            AdjacencyMode::PerBackbone,
        )?;
        let recon = self
            .decoder
            .forward(tape, bound, hidden, &self.raw, AdjacencyMode::PerBackbone)?;
        Ok((target, recon))
    }

    pub fn sample_loss(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        coords: &[f64],
        mask: &[usize],
        beta: f64,
    ) -> Result<TensorId> {
        let (target, recon) = self.reconstruction_pair(tape, bound, coords, mask)?;
        cosine_reconstruction_loss(tape, target, recon, mask, beta)
    }

    /// Mean encoder feature over all real persons, frames, and joints;
    /// the sequence-level vector exported for external projection plots.
    pub fn encode_sequence_pooled(&self, seq: &SkeletonSequence) -> Result<Vec<f64>> {
        let persons = seq.real_person_indices();
        if persons.is_empty() {
            return Err(Error::Data("sequence has no real persons to encode".into()));
        }
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape)?;
        let mut pooled = vec![0.0f64; self.cfg.hidden_dim];
        let mut count = 0usize;
        for &p in &persons {
            for t in 0..seq.frame_count() {
                let coords = frame_coords(seq, p, t);
                let embedded = self.embed_frame(&mut tape, &bound, &coords)?;
                let hidden = self.encoder.forward(
                    &mut tape,
                    &bound,
                    embedded,
                    self.encoder_adjacency(),
                    AdjacencyMode::PerBackbone,
                )?;
                let mean = tape.mean_axis(hidden, 0)?;
                for (acc, v) in pooled.iter_mut().zip(tape.value(mean)) {
                    *acc += v.widen();
                }
                count += 1;
            }
        }
        for v in pooled.iter_mut() {
            *v /= count as f64;
        }
        Ok(pooled)
    }
}

/// Shared per-joint linear embedding: coords (joints×2, row-major flat)
/// mapped to joints×D by `weight` plus `bias`.
pub fn embed_frame<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    weight: ParamId,
    bias: ParamId,
    coords: &[f64],
    joints: usize,
) -> Result<TensorId> {
    if coords.len() != joints * 2 {
        return Err(Error::Shape {
            op: "embed_frame",
            lhs: vec![coords.len()],
            rhs: vec![joints, 2],
        });
    }
    let x = tape.constant_f64(coords, &[joints, 2])?;
    let projected = tape.matmul(x, bound.id(weight))?;
    tape.add(projected, bound.id(bias))
}

/// Flat (x, y) coordinates of one person's frame.
pub fn frame_coords(seq: &SkeletonSequence, person: usize, frame: usize) -> Vec<f64> {
    seq.persons[person][frame]
        .iter()
        .flat_map(|j| [j[0], j[1]])
        .collect()
}

// ── loss ────────────────────────────────────────────────────────────────

/// Re-weighted cosine error over the masked rows:
/// sum_i ((1 − cos(target_i, recon_i)) / |mask|)^beta.
///
/// No gradient blocking happens here; callers decide which side is a
/// constant. Rejects beta < 1 and exactly-zero masked rows (degenerate
/// cosine); each norm gets a 1e-12 guard on top.
pub fn cosine_reconstruction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    targets: TensorId,
    recon: TensorId,
    mask: &[usize],
    beta: f64,
) -> Result<TensorId> {
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(Error::Config(format!(
            "cosine error power beta must be >= 1, got {beta}"
        )));
    }
    let shape = tape.shape(targets).to_vec();
    if shape.len() != 2 || tape.shape(recon) != shape.as_slice() {
        return Err(Error::Shape {
            op: "cosine_reconstruction_loss",
            lhs: shape,
            rhs: tape.shape(recon).to_vec(),
        });
    }
    if mask.is_empty() {
        return Err(Error::Config("cosine loss needs at least one masked joint".into()));
    }
    for w in mask.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Config(format!(
                "mask indices must be sorted and distinct, got {mask:?}"
            )));
        }
    }
    if *mask.last().expect("nonempty") >= shape[0] {
        return Err(Error::Config(format!(
            "masked joint {} out of range for {} rows",
            mask.last().expect("nonempty"),
            shape[0]
        )));
    }
    let m = mask.len();
    let xm = tape.gather_rows(targets, mask)?;
    let ym = tape.gather_rows(recon, mask)?;
    let nx = tape.l2_norm_rows(xm)?;
    let ny = tape.l2_norm_rows(ym)?;
    for (which, norms) in [("target", nx), ("reconstruction", ny)] {
        for (i, v) in tape.value(norms).iter().enumerate() {
            if *v == T::zero() {
                return Err(Error::Numeric(format!(
                    "masked joint {} has an exactly-zero {which} row; cosine undefined",
                    mask[i]
                )));
            }
        }
    }
    let prod = tape.mul(xm, ym)?;
    let dot = tape.sum_axis(prod, 1)?;
    let eps = T::from_f64(NORM_EPSILON);
    let nx_g = tape.add_scalar(nx, eps)?;
    let ny_g = tape.add_scalar(ny, eps)?;
    let denom = tape.mul(nx_g, ny_g)?;
    let inv = tape.pow_scalar(denom, T::from_f64(-1.0))?;
    let cos = tape.mul(dot, inv)?;
    let neg_cos = tape.neg(cos)?;
    let omc = tape.add_scalar(neg_cos, T::one())?;
    // cos can exceed 1 by an ulp; clamp keeps non-integer powers real.
    let omc = tape.relu(omc)?;
    let scaled = tape.scale(omc, T::from_f64(1.0 / m as f64))?;
    let powed = tape.pow_scalar(scaled, T::from_f64(beta))?;
    tape.sum_all(powed)
}

// ── training ────────────────────────────────────────────────────────────

/// One (sequence, person, frame) pre-training sample.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct FrameSample {
    pub sequence: usize,
    pub person: usize,
    pub frame: usize,
}

/// Enumerates every frame of every real person; zero-padded person slots
/// contribute nothing.
pub fn enumerate_frame_samples(seqs: &[SkeletonSequence]) -> Vec<FrameSample> {
    let mut out = Vec::new();
    for (s, seq) in seqs.iter().enumerate() {
        for p in seq.real_person_indices() {
            for t in 0..seq.frame_count() {
                out.push(FrameSample {
                    sequence: s,
                    person: p,
                    frame: t,
                });
            }
        }
    }
    out
}

/// One optimizer update over a batch of (frame coords, mask) samples.
/// Per-sample graphs are built independently and gradients averaged, so
/// memory stays flat in the batch size. Returns the pre-update mean loss.
pub fn pretrain_step<T: Scalar>(
    model: &mut MaeModel<T>,
    opt: &mut Adam<T>,
    batch: &[(Vec<f64>, Vec<usize>)],
    beta: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("pre-training batch is empty".into()));
    }
    let scale = T::from_f64(1.0 / batch.len() as f64);
    let mut grads = GradAccum::zeros_like(&model.store);
    let mut total = 0.0f64;
    for (coords, mask) in batch {
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape)?;
        let loss = model.sample_loss(&mut tape, &bound, coords, mask, beta)?;
        tape.backward(loss)?;
        total += tape.item(loss).widen();
        grads.add_scaled_from_tape(&model.store, &bound, &tape, scale);
    }
    opt.step(&mut model.store, &grads)?;
    Ok(total / batch.len() as f64)
}

fn with_step_index(err: Error, step: u64) -> Error {
    match err {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{op} at pre-training step {step}"),
        },
        other => other,
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
    pub wall_time_secs: f64,
    pub checkpoint_path: Option<PathBuf>,
}

/// Saves model parameters plus Adam state under the shared binary format.
pub fn save_pretrain_checkpoint<T: Scalar>(
    model: &MaeModel<T>,
    opt: &Adam<T>,
    run: &RunConfig,
    epochs_completed: usize,
    path: &Path,
) -> Result<()> {
    let mut tensors = checkpoint::store_tensors(&model.store);
    for (name, shape, data) in opt.state_tensors(&model.store) {
        tensors.push((name, shape, data.iter().map(|v| v.widen() as f32).collect()));
    }
    checkpoint::write_checkpoint(
        path,
        KIND_PRETRAIN,
        run,
        epochs_completed,
        opt.step_count() as usize,
        &tensors,
    )
}

/// Rebuilds model and optimizer exactly as checkpointed; returns the number
/// of epochs already completed so training can continue where it stopped.
pub fn resume_pretrain<T: Scalar>(
    ckpt: &Checkpoint,
    layout: SkeletonLayout,
) -> Result<(MaeModel<T>, Adam<T>, usize)> {
    if ckpt.meta.kind != KIND_PRETRAIN {
        return Err(Error::Checkpoint(format!(
            "expected a {KIND_PRETRAIN} checkpoint, found kind {:?}",
            ckpt.meta.kind
        )));
    }
    let run = &ckpt.meta.config;
    let mut model = MaeModel::new(&run.model, layout, run.seed)?;
    checkpoint::load_store_exact(ckpt, &mut model.store)?;
    let mut opt = Adam::new(&model.store, T::from_f64(run.pretrain.learning_rate));
    opt.restore(&model.store, ckpt.meta.optimizer_steps as u64, |name| {
        ckpt.tensor(name)
            .map(|(_, data)| data.iter().map(|&v| T::from_f64(v as f64)).collect())
    })?;
    Ok((model, opt, ckpt.meta.epochs_completed))
}

/// Full pre-training: seeded shuffle over (sequence, person, frame) samples,
/// one mask draw per sample per epoch, optional coordinate jitter, one
/// optimizer update per batch. Deterministic given the config seed; every
/// random stream is keyed by (seed, purpose, epoch, sample), so resuming
/// from a checkpoint reproduces the uninterrupted run bitwise.
pub fn pretrain<T: Scalar>(
    model: &mut MaeModel<T>,
    opt: &mut Adam<T>,
    train: &[SkeletonSequence],
    run: &RunConfig,
    start_epoch: usize,
    out_dir: Option<&Path>,
) -> Result<PretrainReport> {
    let start = std::time::Instant::now();
    if train.is_empty() {
        return Err(Error::Data("pre-training dataset is empty".into()));
    }
    let samples = enumerate_frame_samples(train);
    if samples.is_empty() {
        return Err(Error::Data("no real-person frames to pre-train on".into()));
    }
    let p = &run.pretrain;
    let n = samples.len();
    // The configured batch targets full datasets; desk-scale sets fall back
    // to 256 or the whole set, whichever is smaller.
    let batch_size = if p.batch_size > n { n.min(256) } else { p.batch_size };
    let mut epoch_losses = Vec::new();
    for epoch in start_epoch..p.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(run.seed, "shuffle", epoch as u64, 0);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<(Vec<f64>, Vec<usize>)> = chunk
                .iter()
                .map(|&i| {
                    let s = samples[i];
                    let mut coords = frame_coords(&train[s.sequence], s.person, s.frame);
                    if run.data.noise_sigma > 0.0 {
                        let mut nrng = stream(run.seed, "noise", epoch as u64, i as u64);
                        let normal = Normal::new(0.0, run.data.noise_sigma)
                            .expect("validated sigma");
                        for c in coords.iter_mut() {
                            *c += normal.sample(&mut nrng);
                        }
                    }
                    let mut mrng = stream(run.seed, "mask", epoch as u64, i as u64);
                    let mask = resolve_mask(&p.mask.strategy, &model.layout, &mut mrng)?;
                    Ok((coords, mask))
                })
                .collect::<Result<_>>()?;
            let loss = pretrain_step(model, opt, &batch, p.beta)
                .map_err(|e| with_step_index(e, opt.step_count()))?;
            loss_sum += loss * chunk.len() as f64;
        }
        epoch_losses.push(loss_sum / n as f64);
        if p.checkpoint_every_epoch {
            if let Some(dir) = out_dir {
                let path = dir.join(format!("checkpoint_epoch{epoch}.skmae"));
                save_pretrain_checkpoint(model, opt, run, epoch + 1, &path)?;
            }
        }
    }
    let checkpoint_path = match out_dir {
        Some(dir) => {
            let path = dir.join("checkpoint.skmae");
            save_pretrain_checkpoint(model, opt, run, p.epochs, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok(PretrainReport {
        epoch_losses,
        wall_time_secs: start.elapsed().as_secs_f64(),
        checkpoint_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, RunConfig};
    use crate::data::{generate_synthetic, prepare_sequence, SynthSpec};
    use crate::masking::MaskStrategy;
    use crate::numerics::{finite_difference_check, DEFAULT_FD_STEP};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            hidden_dim: 8,
            encoder_depth: 1,
            ..Default::default()
        }
    }

    fn loss_on_leaves(
        x_rows: &[f64],
        y_rows: &[f64],
        n: usize,
        d: usize,
        mask: &[usize],
        beta: f64,
    ) -> Result<f64> {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant_f64(x_rows, &[n, d])?;
        let y = tape.constant_f64(y_rows, &[n, d])?;
        let loss = cosine_reconstruction_loss(&mut tape, x, y, mask, beta)?;
        Ok(tape.item(loss))
    }

    // ── analytic loss values ────────────────────────────────────────────

    #[test]
    fn identical_rows_give_zero_loss() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 + 1.0).collect();
        let v = loss_on_leaves(&x, &x, 4, 3, &[0, 2], 2.0).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn opposite_rows_with_two_masked_give_two() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 + 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let v = loss_on_leaves(&x, &y, 4, 3, &[1, 3], 2.0).unwrap();
        assert!((v - 2.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn orthogonal_rows_with_four_masked_give_a_quarter() {
        // x rows point along dim 0, y rows along dim 1: cosine 0 everywhere.
        let mut x = vec![0.0; 8];
        let mut y = vec![0.0; 8];
        for r in 0..4 {
            x[r * 2] = 1.0;
            y[r * 2 + 1] = 1.0;
        }
        let v = loss_on_leaves(&x, &y, 4, 2, &[0, 1, 2, 3], 2.0).unwrap();
        assert!((v - 0.25).abs() < 1e-6, "{v}");
    }

    #[test]
    fn beta_below_one_is_a_config_error() {
        let x = vec![1.0; 6];
        let err = loss_on_leaves(&x, &x, 3, 2, &[0], 0.5).unwrap_err();
        assert!(err.to_string().contains("beta"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn zero_masked_rows_are_rejected_on_either_side() {
        let x = vec![0.0, 0.0, 1.0, 2.0];
        let y = vec![1.0, 1.0, 1.0, 1.0];
        let err = loss_on_leaves(&x, &y, 2, 2, &[0], 2.0).unwrap_err();
        assert!(err.to_string().contains("target"), "{err}");
        assert_eq!(err.exit_code(), 4);
        let err = loss_on_leaves(&y, &x, 2, 2, &[0], 2.0).unwrap_err();
        assert!(err.to_string().contains("reconstruction"), "{err}");
        // Zero rows outside the mask are fine.
        loss_on_leaves(&x, &y, 2, 2, &[1], 2.0).unwrap();
    }

    #[test]
    fn per_row_positive_scaling_leaves_the_loss_unchanged() {
        let mut rng = stream(11, "test", 0, 0);
        let x: Vec<f64> = (0..20).map(|_| rng.random::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>() - 0.5).collect();
        let mask = [0, 2, 3];
        let base = loss_on_leaves(&x, &y, 5, 4, &mask, 2.0).unwrap();
        let mut scaled = y.clone();
        for (row, c) in [(0usize, 3.7), (2, 0.04), (3, 251.0)] {
            for k in 0..4 {
                scaled[row * 4 + k] *= c;
            }
        }
        let v = loss_on_leaves(&x, &scaled, 5, 4, &mask, 2.0).unwrap();
        assert!((v - base).abs() < 1e-6, "{v} vs {base}");
    }

    #[test]
    fn unmasked_rows_are_exactly_irrelevant() {
        let mut rng = stream(12, "test", 0, 0);
        let x: Vec<f64> = (0..20).map(|_| rng.random::<f64>() + 0.1).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>() + 0.1).collect();
        let mask = [1, 4];
        let base = loss_on_leaves(&x, &y, 5, 4, &mask, 2.0).unwrap();
        let mut bent = y.clone();
        for row in [0usize, 2, 3] {
            for k in 0..4 {
                bent[row * 4 + k] = 1e6 * (row as f64 + 1.0);
            }
        }
        let v = loss_on_leaves(&x, &bent, 5, 4, &mask, 2.0).unwrap();
        assert!(v == base, "{v} vs {base}");
    }

    #[test]
    fn loss_respects_the_theoretical_bounds() {
        let mut rng = stream(13, "test", 0, 0);
        for trial in 0..50 {
            let beta = [1.0, 1.5, 2.0, 3.0][trial % 4];
            let m = 1 + trial % 5;
            let mask: Vec<usize> = (0..m).collect();
            let x: Vec<f64> = (0..30).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..30).map(|_| rng.random::<f64>() - 0.5).collect();
            let v = loss_on_leaves(&x, &y, 6, 5, &mask, beta).unwrap();
            let upper = 2f64.powf(beta) / (m as f64).powf(beta - 1.0);
            assert!(v >= 0.0 && v <= upper + 1e-9, "loss {v} bound {upper}");
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences_on_both_sides() {
        let mut rng = stream(14, "test", 0, 0);
        let n = 5;
        let d = 4;
        let mask = vec![0usize, 2, 4];
        let x0: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() - 0.5).collect();
        let other: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() - 0.5).collect();
        for swap in [false, true] {
            let fixed = other.clone();
            let report = finite_difference_check(&x0, &[n, d], DEFAULT_FD_STEP, |tape, v| {
                let c = tape.constant_f64(&fixed, &[n, d])?;
                let (x, y) = if swap { (v, c) } else { (c, v) };
                cosine_reconstruction_loss(tape, x, y, &mask, 2.0)
            })
            .unwrap();
            assert!(report.max_rel_err < 1e-6, "swap {swap}: {report:?}");
        }
    }

    // ── embedding ───────────────────────────────────────────────────────

    #[test]
    fn embedding_matches_a_per_element_loop() {
        let model: MaeModel<f64> =
            MaeModel::new(&tiny_cfg(), SkeletonLayout::coco17(), 3).unwrap();
        let mut rng = stream(15, "test", 0, 0);
        let coords: Vec<f64> = (0..34).map(|_| rng.random::<f64>()).collect();
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape).unwrap();
        let out = model.embed_frame(&mut tape, &bound, &coords).unwrap();
        let w = model.store.data(model.embed_weight);
        let b = model.store.data(model.embed_bias);
        let d = model.cfg.embed_dim;
        let got = tape.value(out);
        for j in 0..17 {
            for k in 0..d {
                let expect =
                    coords[j * 2] * w[k] + coords[j * 2 + 1] * w[d + k] + b[k];
                assert!((got[j * d + k] - expect).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn sequence_embedding_is_one_tensor_per_frame() {
        let model: MaeModel<f64> =
            MaeModel::new(&tiny_cfg(), SkeletonLayout::coco17(), 3).unwrap();
        let track = vec![vec![[0.1, 0.2]; 17]; 6];
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape).unwrap();
        let frames = model.embed_sequence(&mut tape, &bound, &track).unwrap();
        assert_eq!(frames.len(), 6);
        for f in frames {
            assert_eq!(tape.shape(f), &[17, 8]);
        }
    }

    // ── model training behavior ────────────────────────────────────────

    fn constant_batch(model: &MaeModel<f64>, count: usize) -> Vec<(Vec<f64>, Vec<usize>)> {
        let mut rng = stream(16, "test", 0, 0);
        let coords: Vec<f64> = (0..model.layout.joint_count() * 2)
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let mask = vec![8usize, 10];
        (0..count).map(|_| (coords.clone(), mask.clone())).collect()
    }

    #[test]
    fn gradient_reaches_the_mask_token() {
        let model: MaeModel<f64> =
            MaeModel::new(&tiny_cfg(), SkeletonLayout::coco17(), 4).unwrap();
        let batch = constant_batch(&model, 1);
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape).unwrap();
        let loss = model
            .sample_loss(&mut tape, &bound, &batch[0].0, &batch[0].1, 2.0)
            .unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(bound.id(model.mask_token)).expect("token gradient");
        assert!(g.iter().any(|v| v.abs() > 0.0), "token gradient all zero");
        // The stop-gradient target keeps the embedding from collapsing, but
        // unmasked rows still feed the encoder, so the embedding trains too.
        let ge = tape.grad(bound.id(model.embed_weight)).expect("embed gradient");
        assert!(ge.iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut model: MaeModel<f64> =
            MaeModel::new(&tiny_cfg(), SkeletonLayout::coco17(), 5).unwrap();
        let before: Vec<Vec<f64>> = model
            .store
            .iter()
            .map(|(_, p)| p.data.clone())
            .collect();
        let mut opt = Adam::new(&model.store, 0.0);
        let batch = constant_batch(&model, 3);
        pretrain_step(&mut model, &mut opt, &batch, 2.0).unwrap();
        for ((_, p), old) in model.store.iter().zip(&before) {
            assert_eq!(&p.data, old, "{} moved", p.name);
        }
    }

    #[test]
    fn repeated_frame_loss_halves_within_200_steps() {
        let mut model: MaeModel<f64> =
            MaeModel::new(&tiny_cfg(), SkeletonLayout::coco17(), 6).unwrap();
        let mut opt = Adam::new(&model.store, 1.5e-4);
        let batch = constant_batch(&model, 4);
        let first = pretrain_step(&mut model, &mut opt, &batch, 2.0).unwrap();
        let mut last = first;
        for _ in 1..200 {
            last = pretrain_step(&mut model, &mut opt, &batch, 2.0).unwrap();
        }
        assert!(
            last < 0.5 * first,
            "loss went {first} -> {last}, expected at least a halving"
        );
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_loss_trajectories() {
        let run = |()| -> Vec<f64> {
            let mut model: MaeModel<f32> =
                MaeModel::new(&tiny_cfg(), SkeletonLayout::coco17(), 7).unwrap();
            let mut opt = Adam::new(&model.store, 1.5e-4f32);
            let batch: Vec<(Vec<f64>, Vec<usize>)> = constant_batch(
                &MaeModel::<f64>::new(&tiny_cfg(), SkeletonLayout::coco17(), 7).unwrap(),
                2,
            );
            (0..10)
                .map(|_| pretrain_step(&mut model, &mut opt, &batch, 2.0).unwrap())
                .collect()
        };
        assert_eq!(run(()), run(()));
    }

    // ── pretrain loop ───────────────────────────────────────────────────

    fn tiny_run_config(epochs: usize) -> RunConfig {
        let mut run = RunConfig::default();
        run.model = tiny_cfg();
        run.model.frames = 8;
        run.pretrain.epochs = epochs;
        run.pretrain.batch_size = 1024; // exceeds the toy set; falls back
        run.pretrain.mask.strategy = MaskStrategy::RandomRegions { count: 1 };
        run.data.noise_sigma = 0.01;
        run
    }

    fn tiny_train_set(seqs: usize) -> Vec<SkeletonSequence> {
        let layout = SkeletonLayout::coco17();
        let spec = SynthSpec {
            sequences_per_class: seqs,
            ..Default::default()
        };
        let (train, _) = generate_synthetic(&spec, &layout).unwrap();
        train
            .iter()
            .map(|s| prepare_sequence(s, &layout, 8).unwrap())
            .collect()
    }

    #[test]
    fn zero_epochs_yield_an_empty_report_and_untouched_model() {
        let run = tiny_run_config(0);
        let layout = SkeletonLayout::coco17();
        let mut model: MaeModel<f32> = MaeModel::new(&run.model, layout, run.seed).unwrap();
        let before: Vec<Vec<f32>> =
            model.store.iter().map(|(_, p)| p.data.clone()).collect();
        let mut opt = Adam::new(&model.store, run.pretrain.learning_rate as f32);
        let train = tiny_train_set(2);
        let report = pretrain(&mut model, &mut opt, &train, &run, 0, None).unwrap();
        assert!(report.epoch_losses.is_empty());
        for ((_, p), old) in model.store.iter().zip(&before) {
            assert_eq!(&p.data, old);
        }
    }

    #[test]
    fn empty_dataset_is_a_data_error() {
        let run = tiny_run_config(1);
        let mut model: MaeModel<f32> =
            MaeModel::new(&run.model, SkeletonLayout::coco17(), 0).unwrap();
        let mut opt = Adam::new(&model.store, 1e-3f32);
        let err = pretrain(&mut model, &mut opt, &[], &run, 0, None).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn resumed_training_matches_the_uninterrupted_run_bitwise() {
        let run = tiny_run_config(4);
        let layout = SkeletonLayout::coco17();
        let train = tiny_train_set(2);
        let dir = tempfile::tempdir().unwrap();

        // Uninterrupted: 4 epochs straight.
        let mut full: MaeModel<f32> = MaeModel::new(&run.model, layout.clone(), run.seed).unwrap();
        let mut opt = Adam::new(&full.store, run.pretrain.learning_rate as f32);
        let full_dir = dir.path().join("full");
        let report = pretrain(&mut full, &mut opt, &train, &run, 0, Some(&full_dir)).unwrap();
        assert_eq!(report.epoch_losses.len(), 4);

        // Interrupted: 2 epochs, checkpoint, rebuild, 2 more.
        let mut half_run = run.clone();
        half_run.pretrain.epochs = 2;
        let mut half: MaeModel<f32> =
            MaeModel::new(&half_run.model, layout.clone(), half_run.seed).unwrap();
        let mut half_opt = Adam::new(&half.store, half_run.pretrain.learning_rate as f32);
        let half_dir = dir.path().join("half");
        pretrain(&mut half, &mut half_opt, &train, &half_run, 0, Some(&half_dir)).unwrap();
        let ckpt = checkpoint::read_checkpoint(&half_dir.join("checkpoint.skmae")).unwrap();
        assert_eq!(ckpt.meta.epochs_completed, 2);
        let (mut resumed, mut resumed_opt, done) =
            resume_pretrain::<f32>(&ckpt, layout).unwrap();
        // The snapshot carried the 2-epoch config; finish under the real one.
        let resumed_dir = dir.path().join("resumed");
        let report2 =
            pretrain(&mut resumed, &mut resumed_opt, &train, &run, done, Some(&resumed_dir))
                .unwrap();
        assert_eq!(report2.epoch_losses.len(), 2);
        assert_eq!(
            report.epoch_losses[2..],
            report2.epoch_losses[..],
            "resumed losses diverged"
        );
        assert_eq!(
            std::fs::read(full_dir.join("checkpoint.skmae")).unwrap(),
            std::fs::read(resumed_dir.join("checkpoint.skmae")).unwrap(),
            "final checkpoints differ"
        );
    }

    #[test]
    fn per_epoch_checkpoints_are_written_when_asked() {
        let mut run = tiny_run_config(2);
        run.pretrain.checkpoint_every_epoch = true;
        let layout = SkeletonLayout::coco17();
        let train = tiny_train_set(1);
        let mut model: MaeModel<f32> = MaeModel::new(&run.model, layout, run.seed).unwrap();
        let mut opt = Adam::new(&model.store, run.pretrain.learning_rate as f32);
        let dir = tempfile::tempdir().unwrap();
        pretrain(&mut model, &mut opt, &train, &run, 0, Some(dir.path())).unwrap();
        assert!(dir.path().join("checkpoint_epoch0.skmae").exists());
        assert!(dir.path().join("checkpoint_epoch1.skmae").exists());
        assert!(dir.path().join("checkpoint.skmae").exists());
    }

    #[test]
    fn pooled_encoding_has_hidden_width_and_ignores_zero_persons() {
        let model: MaeModel<f64> =
            MaeModel::new(&tiny_cfg(), SkeletonLayout::coco17(), 8).unwrap();
        let train = tiny_train_set(1);
        let v = model.encode_sequence_pooled(&train[0]).unwrap();
        assert_eq!(v.len(), 8);
        assert!(v.iter().all(|x| x.is_finite()));
        // Identical sequences give identical vectors.
        let v2 = model.encode_sequence_pooled(&train[0].clone()).unwrap();
        assert_eq!(v, v2);
    }

    #[test]
    fn frame_sample_enumeration_skips_padding_persons() {
        let train = tiny_train_set(1);
        let samples = enumerate_frame_samples(&train);
        // Synthetic data has one real person: person 1 never appears.
        assert!(samples.iter().all(|s| s.person == 0));
        assert_eq!(samples.len(), train.len() * train[0].frame_count());
    }
}
