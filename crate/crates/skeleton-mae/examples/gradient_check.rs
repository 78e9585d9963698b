//! Verifies tape gradients against central finite differences for each
//! graph backbone, the masked cosine reconstruction loss, and the label
//! cross entropy, printing the worst relative error of each check.
//!
//!     cargo run --example gradient_check

use rand::Rng;
use skeleton_mae::backbones::{Activation, BackboneKind, GraphLayer, GraphLayerConfig};
use skeleton_mae::classifier::cross_entropy;
use skeleton_mae::mae::cosine_reconstruction_loss;
use skeleton_mae::numerics::{
    fd_check_params, finite_difference_check, stream, FdReport, ParamStore, DEFAULT_FD_STEP,
};
use skeleton_mae::skeleton::{normalize_adjacency, SkeletonLayout};

fn row(name: &str, report: &FdReport) {
    let verdict = if report.max_rel_err < 1e-6 { "ok" } else { "FAIL" };
    println!(
        "{name:<28} {:>4} coords  max rel err {:.3e}  worst {}[{}]  {verdict}",
        report.coords_checked, report.max_rel_err, report.worst_name, report.worst_index
    );
}

fn main() -> skeleton_mae::Result<()> {
    let layout = SkeletonLayout::coco17();
    let raw = layout.raw_adjacency();
    let normalized = normalize_adjacency(&raw)?;
    let n = layout.joint_count();
    let (d_in, d_out) = (3usize, 4usize);
    let mut rng = stream(7, "init", 0, 0);
    let x0: Vec<f64> = (0..n * d_in).map(|_| rng.random::<f64>() - 0.5).collect();

    // Every parameter of each backbone layer, loss = sum of squares of
    // the layer output so each output coordinate carries gradient.
    for kind in [BackboneKind::Gin, BackboneKind::Gcn, BackboneKind::Gat] {
        let mut store: ParamStore<f64> = ParamStore::new();
        let cfg = GraphLayerConfig::new(kind, d_in, d_out, Activation::Prelu).with_heads(2);
        let layer = GraphLayer::new(&mut store, "layer", cfg, &mut rng)?;
        let adj = if kind == BackboneKind::Gcn { &normalized } else { &raw };
        let x = x0.clone();
        let report = fd_check_params(&mut store, DEFAULT_FD_STEP, |tape, _, bound| {
            let h = tape.constant_f64(&x, &[n, d_in])?;
            let out = layer.forward(
                tape,
                bound,
                h,
                adj,
                skeleton_mae::backbones::AdjacencyMode::PerBackbone,
            )?;
            let sq = tape.mul(out, out)?;
            tape.sum_all(sq)
        })?;
        row(&format!("{kind:?} layer parameters"), &report);
    }

    // Reconstruction loss, gradient through the reconstruction side.
    let mask = vec![1usize, 5, 9, 12];
    let d = 6usize;
    let target: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() - 0.5).collect();
    let recon0: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() - 0.5).collect();
    let report = finite_difference_check(&recon0, &[n, d], DEFAULT_FD_STEP, |tape, recon| {
        let t = tape.constant_f64(&target, &[n, d])?;
        cosine_reconstruction_loss(tape, t, recon, &mask, 2.0)
    })?;
    row("reconstruction loss", &report);

    // Smoothed cross entropy, gradient through the logits.
    let logits0: Vec<f64> = (0..5).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let report = finite_difference_check(&logits0, &[5], DEFAULT_FD_STEP, |tape, logits| {
        cross_entropy(tape, logits, 2, 0.1)
    })?;
    row("smoothed cross entropy", &report);

    Ok(())
}
