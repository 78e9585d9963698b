//! Implementations behind the `skmae` binary's subcommands.
//!
//! Each function takes plain paths and values (argument parsing lives in
//! the binary), performs one pipeline stage, and returns the report it
//! wrote so library callers and tests can inspect results without
//! re-reading files. Machine-readable output goes to stdout; progress
//! notes go to stderr. With a fixed seed every artifact written here is
//! byte-identical across runs.

use crate::checkpoint::{read_checkpoint, Checkpoint, KIND_CLASSIFIER};
use crate::classifier::{
    evaluate, finetune, load_classifier, save_classifier_checkpoint, EvalReport, FinetuneReport,
    SequenceClassifier,
};
use crate::config::RunConfig;
use crate::data::{
    generate_synthetic_files, load_jsonl, prepare_sequence, SkeletonSequence, Split, SynthSpec,
};
use crate::error::{io_err, Error, Result};
use crate::mae::{frame_coords, pretrain, resume_pretrain, MaeModel, PretrainReport};
use crate::masking::{resolve_mask, MaskStrategy};
use crate::numerics::{stream, Adam, Scalar, Tape};
use crate::skeleton::SkeletonLayout;
use serde::Serialize;
use std::path::{Path, PathBuf};

// ── shared plumbing ─────────────────────────────────────────────────────

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serialize report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_prepared(
    path: &Path,
    layout: &SkeletonLayout,
    frames: usize,
    split: Split,
) -> Result<Vec<SkeletonSequence>> {
    let dataset = load_jsonl(path, layout, split)?;
    dataset
        .sequences
        .iter()
        .map(|s| prepare_sequence(s, layout, frames))
        .collect()
}

/// Parses the textual form produced by [`MaskStrategy::label`]:
/// `body_parts(3+5)`, `random_regions(2)`, or `random(50%)`. Region lists
/// accept `+` or `,` separators.
pub fn parse_mask_strategy(text: &str) -> Result<MaskStrategy> {
    let t = text.trim();
    let bad = || {
        Error::Config(format!(
            "cannot parse mask strategy {t:?}; expected body_parts(3+5), \
             random_regions(2), or random(50%)"
        ))
    };
    let open = t.find('(').ok_or_else(bad)?;
    if !t.ends_with(')') {
        return Err(bad());
    }
    let head = &t[..open];
    let arg = &t[open + 1..t.len() - 1];
    match head {
        "body_parts" => {
            let regions = arg
                .split(['+', ','])
                .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<usize>>>()?;
            Ok(MaskStrategy::BodyParts { regions })
        }
        "random_regions" => {
            let count = arg.trim().parse::<usize>().map_err(|_| bad())?;
            Ok(MaskStrategy::RandomRegions { count })
        }
        "random" => {
            let pct = arg.trim().strip_suffix('%').ok_or_else(bad)?;
            let ratio = pct.trim().parse::<f64>().map_err(|_| bad())? / 100.0;
            Ok(MaskStrategy::Random { ratio })
        }
        _ => Err(bad()),
    }
}

// ── synth ───────────────────────────────────────────────────────────────

/// Generates the synthetic dataset files `train.jsonl` and `test.jsonl`.
pub fn cmd_synth(spec: &SynthSpec, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let layout = SkeletonLayout::coco17();
    let (train, test) = generate_synthetic_files(spec, &layout, out_dir)?;
    eprintln!(
        "wrote {} and {} ({} classes, {} sequences per class)",
        train.display(),
        test.display(),
        spec.class_count,
        spec.sequences_per_class
    );
    Ok((train, test))
}

// ── pretrain ────────────────────────────────────────────────────────────

/// Masked-reconstruction pre-training: reads the config, trains on the
/// configured train split, writes `checkpoint.skmae` and
/// `pretrain_report.json` into the output directory.
pub fn cmd_pretrain(config_path: &Path, out_dir: &Path) -> Result<PretrainReport> {
    let cfg = RunConfig::load(config_path)?;
    cfg.validate()?;
    let layout = cfg.layout()?;
    let train = load_prepared(
        Path::new(&cfg.data.train),
        &layout,
        cfg.model.frames,
        Split::Train,
    )?;
    let mut model: MaeModel<f32> = MaeModel::new(&cfg.model, layout, cfg.seed)?;
    let mut opt = Adam::new(&model.store, cfg.pretrain.learning_rate as f32);
    let report = pretrain(&mut model, &mut opt, &train, &cfg, 0, Some(out_dir))?;
    write_json(&out_dir.join("pretrain_report.json"), &report)?;
    eprintln!(
        "pre-trained {} epochs, final loss {:.6}",
        report.epoch_losses.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(report)
}

// ── finetune ────────────────────────────────────────────────────────────

/// Supervised fine-tuning, optionally seeded from a pre-training
/// checkpoint. Writes `classifier.skmae` and `finetune_report.json`.
pub fn cmd_finetune(
    config_path: &Path,
    pretrained: Option<&Path>,
    out_dir: &Path,
) -> Result<FinetuneReport> {
    let cfg = RunConfig::load(config_path)?;
    cfg.validate()?;
    let layout = cfg.layout()?;
    let train = load_prepared(
        Path::new(&cfg.data.train),
        &layout,
        cfg.model.frames,
        Split::Train,
    )?;
    let test = load_prepared(
        Path::new(&cfg.data.test),
        &layout,
        cfg.model.frames,
        Split::Test,
    )?;
    let mut model: SequenceClassifier<f32> =
        SequenceClassifier::new(&cfg.model, layout, cfg.seed)?;
    if let Some(path) = pretrained {
        let ckpt = read_checkpoint(path)?;
        model.load_pretrained(&ckpt)?;
    }
    let mut report = finetune(&mut model, &train, &test, &cfg)?;
    report.pretrained = match pretrained {
        Some(p) => p.display().to_string(),
        None => "none".into(),
    };
    let ckpt_path = out_dir.join("classifier.skmae");
    save_classifier_checkpoint(&model, &cfg, cfg.finetune.epochs, &ckpt_path)?;
    report.checkpoint_path = Some(ckpt_path);
    write_json(&out_dir.join("finetune_report.json"), &report)?;
    eprintln!(
        "fine-tuned {} epochs, test top-1 {:.4}",
        report.epoch_losses.len(),
        report.test_top1
    );
    Ok(report)
}

// ── eval ────────────────────────────────────────────────────────────────

/// Evaluates a fine-tuned classifier checkpoint on a dataset and prints
/// the metrics as JSON on stdout.
pub fn cmd_eval(model_path: &Path, data_path: &Path) -> Result<EvalReport> {
    let ckpt = read_checkpoint(model_path)?;
    if ckpt.meta.kind != KIND_CLASSIFIER {
        return Err(Error::Checkpoint(format!(
            "expected a {KIND_CLASSIFIER} checkpoint, found kind {:?}",
            ckpt.meta.kind
        )));
    }
    let layout = ckpt.meta.config.layout()?;
    let model: SequenceClassifier<f32> = load_classifier(&ckpt, layout)?;
    let layout = ckpt.meta.config.layout()?;
    let data = load_prepared(
        data_path,
        &layout,
        ckpt.meta.config.model.frames,
        Split::Test,
    )?;
    let report = evaluate(&model, &data)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("serialize metrics: {e}")))?;
    println!("{json}");
    Ok(report)
}

// ── reconstruct ─────────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize)]
pub struct FrameReconstruction {
    /// Input coordinates after resampling and normalization, `[N][2]`.
    pub input: Vec<[f64; 2]>,
    /// Decoder output mapped back to coordinates, `[N][2]`.
    pub reconstructed: Vec<[f64; 2]>,
    /// Embedding-space cosine similarity per masked joint, aligned with
    /// the record's mask order.
    pub cosine: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconstructionRecord {
    pub index: usize,
    pub label: usize,
    /// Masked joint ids (sorted), shared by every frame of the sequence.
    pub mask: Vec<usize>,
    pub frames: Vec<FrameReconstruction>,
}

/// Right pseudo-inverse of the `[2, d]` embedding matrix: returns a
/// `[d, 2]` row-major matrix `P` with `W · P = I₂`. Fails when the
/// embedding rows are linearly dependent (the map cannot be undone).
fn embedding_pinv(weight: &[f64], d: usize) -> Result<Vec<f64>> {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for k in 0..d {
        a += weight[k] * weight[k];
        b += weight[k] * weight[d + k];
        c += weight[d + k] * weight[d + k];
    }
    let det = a * c - b * b;
    if det.abs() < 1e-12 {
        return Err(Error::Numeric(
            "input embedding is rank-deficient; coordinates cannot be recovered".into(),
        ));
    }
    let mut pinv = vec![0.0; d * 2];
    for k in 0..d {
        pinv[k * 2] = (weight[k] * c - weight[d + k] * b) / det;
        pinv[k * 2 + 1] = (weight[d + k] * a - weight[k] * b) / det;
    }
    Ok(pinv)
}

/// Runs masked reconstruction over a dataset with a pre-training
/// checkpoint and writes one JSONL record per sequence (first person) to
/// `reconstructions.jsonl`: per frame, the normalized input joints, the
/// decoder output mapped back to coordinates through the embedding's
/// pseudo-inverse, and the embedding-space cosine per masked joint.
pub fn cmd_reconstruct(
    model_path: &Path,
    data_path: &Path,
    mask_text: &str,
    out_dir: &Path,
) -> Result<PathBuf> {
    let strategy = parse_mask_strategy(mask_text)?;
    let ckpt = read_checkpoint(model_path)?;
    let layout = ckpt.meta.config.layout()?;
    strategy.validate(&layout)?;
    let (model, _opt, _epochs) = resume_pretrain::<f32>(&ckpt, layout)?;
    let cfg = &ckpt.meta.config;
    let layout = cfg.layout()?;
    let data = load_prepared(data_path, &layout, cfg.model.frames, Split::Test)?;
    let n = layout.joint_count();
    let d = cfg.model.embed_dim;

    let store = &model.store;
    let weight_id = store.find("input_embed.weight").expect("embed weight");
    let bias_id = store.find("input_embed.bias").expect("embed bias");
    let weight: Vec<f64> = store.data(weight_id).iter().map(|v| v.widen()).collect();
    let bias: Vec<f64> = store.data(bias_id).iter().map(|v| v.widen()).collect();
    let pinv = embedding_pinv(&weight, d)?;

    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let out_path = out_dir.join("reconstructions.jsonl");
    let file = std::fs::File::create(&out_path).map_err(|e| io_err(&out_path, e))?;
    let mut writer = std::io::BufWriter::new(file);

    for (index, seq) in data.iter().enumerate() {
        let mut rng = stream(cfg.seed, "reconstruct-mask", 0, index as u64);
        let mask = resolve_mask(&strategy, &layout, &mut rng)?;
        let mut frames = Vec::with_capacity(seq.frame_count());
        for t in 0..seq.frame_count() {
            let coords = frame_coords(seq, 0, t);
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape)?;
            let (target, recon) = model.reconstruction_pair(&mut tape, &bound, &coords, &mask)?;
            let target_vals = tape.value(target).to_vec();
            let recon_vals = tape.value(recon).to_vec();
            let mut reconstructed = Vec::with_capacity(n);
            for j in 0..n {
                let (mut x, mut y) = (0.0, 0.0);
                for k in 0..d {
                    let e = recon_vals[j * d + k].widen() - bias[k];
                    x += e * pinv[k * 2];
                    y += e * pinv[k * 2 + 1];
                }
                reconstructed.push([x, y]);
            }
            let mut cosine = Vec::with_capacity(mask.len());
            for &j in &mask {
                let mut dot = 0.0;
                let mut nt = 0.0;
                let mut nr = 0.0;
                for k in 0..d {
                    let tv = target_vals[j * d + k].widen();
                    let rv = recon_vals[j * d + k].widen();
                    dot += tv * rv;
                    nt += tv * tv;
                    nr += rv * rv;
                }
                if nt == 0.0 || nr == 0.0 {
                    return Err(Error::Numeric(format!(
                        "sequence {index} frame {t}: masked joint {j} has a zero-norm row; \
                         cosine undefined"
                    )));
                }
                // Exact division can exceed |1| by an ulp; keep the
                // reported value inside the definition's range.
                cosine.push((dot / (nt.sqrt() * nr.sqrt())).clamp(-1.0, 1.0));
            }
            let input: Vec<[f64; 2]> = (0..n).map(|j| seq.persons[0][t][j]).collect();
            frames.push(FrameReconstruction {
                input,
                reconstructed,
                cosine,
            });
        }
        let record = ReconstructionRecord {
            index,
            label: seq.label,
            mask,
            frames,
        };
        let json = serde_json::to_string(&record)
            .map_err(|e| Error::Data(format!("serialize reconstruction: {e}")))?;
        use std::io::Write;
        writeln!(writer, "{json}").map_err(|e| io_err(&out_path, e))?;
    }
    eprintln!("wrote {}", out_path.display());
    Ok(out_path)
}

// ── compare_masking ─────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize)]
pub struct MaskingCell {
    pub strategy: String,
    pub seed: u64,
    pub masked_joints: usize,
    pub top1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaskingComparison {
    pub cells: Vec<MaskingCell>,
    /// Per-strategy mean test top-1, in grid order.
    pub means: Vec<(String, f64)>,
    pub csv_path: PathBuf,
}

/// For every masking strategy in the config's grid and every seed offset
/// `0..seeds`: pre-train, fine-tune from that checkpoint, evaluate; then
/// write `comparison.csv` (strategy, seed, masked joint count, test top-1)
/// plus `comparison_summary.json`, and print the per-strategy means.
pub fn cmd_compare_masking(
    config_path: &Path,
    seeds: u64,
    out_dir: &Path,
) -> Result<MaskingComparison> {
    let base = RunConfig::load(config_path)?;
    base.validate()?;
    if base.masking_grid.is_empty() {
        return Err(Error::Config(
            "config has an empty masking_grid; nothing to compare".into(),
        ));
    }
    if seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let layout = base.layout()?;
    let train = load_prepared(
        Path::new(&base.data.train),
        &layout,
        base.model.frames,
        Split::Train,
    )?;
    let test = load_prepared(
        Path::new(&base.data.test),
        &layout,
        base.model.frames,
        Split::Test,
    )?;
    let cells_dir = out_dir.join("cells");
    let mut cells = Vec::new();
    for (si, strategy) in base.masking_grid.iter().enumerate() {
        for offset in 0..seeds {
            let mut run = base.clone();
            run.seed = base.seed + offset;
            run.pretrain.mask.strategy = strategy.clone();
            let layout = run.layout()?;
            let masked_joints =
                resolve_mask(strategy, &layout, &mut stream(run.seed, "mask", 0, 0))?.len();

            let mut mae: MaeModel<f32> = MaeModel::new(&run.model, layout, run.seed)?;
            let mut opt = Adam::new(&mae.store, run.pretrain.learning_rate as f32);
            pretrain(&mut mae, &mut opt, &train, &run, 0, None)?;
            let ckpt_path = cells_dir.join(format!("strategy{si}_seed{offset}.skmae"));
            crate::mae::save_pretrain_checkpoint(
                &mae,
                &opt,
                &run,
                run.pretrain.epochs,
                &ckpt_path,
            )?;

            let layout = run.layout()?;
            let mut classifier: SequenceClassifier<f32> =
                SequenceClassifier::new(&run.model, layout, run.seed)?;
            classifier.load_pretrained(&read_checkpoint(&ckpt_path)?)?;
            let report = finetune(&mut classifier, &train, &test, &run)?;
            eprintln!(
                "{} seed {}: test top-1 {:.4}",
                strategy.label(),
                run.seed,
                report.test_top1
            );
            cells.push(MaskingCell {
                strategy: strategy.label(),
                seed: run.seed,
                masked_joints,
                top1: report.test_top1,
            });
        }
    }

    let mut csv = String::from("strategy,seed,masked_joints,top1\n");
    for cell in &cells {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            cell.strategy, cell.seed, cell.masked_joints, cell.top1
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let csv_path = out_dir.join("comparison.csv");
    std::fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;

    let mut means = Vec::new();
    for strategy in &base.masking_grid {
        let label = strategy.label();
        let scores: Vec<f64> = cells
            .iter()
            .filter(|c| c.strategy == label)
            .map(|c| c.top1)
            .collect();
        means.push((label, scores.iter().sum::<f64>() / scores.len() as f64));
    }
    let comparison = MaskingComparison {
        cells,
        means,
        csv_path,
    };
    write_json(&out_dir.join("comparison_summary.json"), &comparison)?;
    let summary = serde_json::to_string_pretty(&comparison.means)
        .map_err(|e| Error::Data(format!("serialize summary: {e}")))?;
    println!("{summary}");
    Ok(comparison)
}

// ── embed ───────────────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize)]
struct EmbeddingRecord {
    label: usize,
    vector: Vec<f64>,
}

/// Writes per-sequence pooled encoder features as JSONL `{label, vector}`
/// rows for external projection or plotting. Returns the row count.
pub fn cmd_embed(model_path: &Path, data_path: &Path, out_path: &Path) -> Result<usize> {
    let ckpt = read_checkpoint(model_path)?;
    let layout = ckpt.meta.config.layout()?;
    let (model, _opt, _epochs) = resume_pretrain::<f32>(&ckpt, layout)?;
    let cfg = &ckpt.meta.config;
    let layout = cfg.layout()?;
    let data = load_prepared(data_path, &layout, cfg.model.frames, Split::Test)?;
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let file = std::fs::File::create(out_path).map_err(|e| io_err(out_path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    for seq in &data {
        let record = EmbeddingRecord {
            label: seq.label,
            vector: model.encode_sequence_pooled(seq)?,
        };
        let json = serde_json::to_string(&record)
            .map_err(|e| Error::Data(format!("serialize embedding: {e}")))?;
        use std::io::Write;
        writeln!(writer, "{json}").map_err(|e| io_err(out_path, e))?;
    }
    eprintln!("wrote {} rows to {}", data.len(), out_path.display());
    Ok(data.len())
}

// ── checkpoint inspection helper shared by tests ────────────────────────

/// Convenience for tests and tools: the checkpoint's kind and tensor count.
pub fn checkpoint_brief(ckpt: &Checkpoint) -> (String, usize) {
    (ckpt.meta.kind.clone(), ckpt.meta.tensors.len())
}
