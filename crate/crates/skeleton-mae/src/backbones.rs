//! Graph layers over joint features: GIN (default), GCN, and GAT, plus the
//! encoder stacks built from them.
//!
//! Aggregation conventions differ per kind and are enforced at forward
//! time: GIN and GAT aggregate over the raw binary adjacency, GCN over the
//! symmetric-normalized form. Stacks running inside the downstream
//! classifier aggregate over the normalized form for every kind
//! ([`AdjacencyMode::NormalizedOnly`]).

use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamId, ParamStore, Scalar, Tape, TensorId};
use crate::skeleton::Adjacency;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Gin,
    Gcn,
    Gat,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Prelu,
}

/// Which adjacency form a stack feeds its layers.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AdjacencyMode {
    /// GIN/GAT aggregate the raw matrix, GCN the normalized one.
    PerBackbone,
    /// Every layer aggregates the normalized matrix.
    NormalizedOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLayerConfig {
    pub kind: BackboneKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// GAT only; must divide out_dim.
    pub gat_heads: usize,
}

impl GraphLayerConfig {
    pub fn new(kind: BackboneKind, in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        GraphLayerConfig {
            kind,
            in_dim,
            out_dim,
            activation,
            gat_heads: 1,
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.gat_heads = heads;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!(
                "layer dims must be positive, got {}x{}",
                self.in_dim, self.out_dim
            )));
        }
        if self.kind == BackboneKind::Gat {
            if self.gat_heads == 0 || self.out_dim % self.gat_heads != 0 {
                return Err(Error::Config(format!(
                    "gat_heads {} must divide out_dim {}",
                    self.gat_heads, self.out_dim
                )));
            }
        }
        Ok(())
    }
}

const PRELU_INIT_SLOPE: f64 = 0.25;
const GAT_LEAKY_SLOPE: f64 = 0.2;
const GAT_MASK_FILL: f64 = -1e9;

struct GatHead {
    weight: ParamId,
    att_src: ParamId,
    att_dst: ParamId,
}

enum KindParams {
    Gin {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
        epsilon: ParamId,
        mlp_slope: ParamId,
    },
    Gcn {
        // Bias-free: h' = sigma(A_norm h W).
        weight: ParamId,
    },
    Gat {
        heads: Vec<GatHead>,
    },
}

/// One graph layer with materialized parameters in a [`ParamStore`].
pub struct GraphLayer {
    cfg: GraphLayerConfig,
    params: KindParams,
    out_slope: Option<ParamId>,
}

impl GraphLayer {
    /// Creates parameters under `prefix` (e.g. `encoder.layer0`).
    /// Weights are Xavier-uniform; GIN epsilon starts at 0, PReLU slopes
    /// at 0.25.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: GraphLayerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let params = match cfg.kind {
            BackboneKind::Gin => KindParams::Gin {
                w1: store.xavier_uniform(
                    format!("{prefix}.mlp1.weight"),
                    &[cfg.in_dim, cfg.out_dim],
                    rng,
                )?,
                b1: store.zeros(format!("{prefix}.mlp1.bias"), &[cfg.out_dim])?,
                w2: store.xavier_uniform(
                    format!("{prefix}.mlp2.weight"),
                    &[cfg.out_dim, cfg.out_dim],
                    rng,
                )?,
                b2: store.zeros(format!("{prefix}.mlp2.bias"), &[cfg.out_dim])?,
                epsilon: store.zeros(format!("{prefix}.epsilon"), &[1])?,
                mlp_slope: store.constant(
                    format!("{prefix}.mlp_slope"),
                    &[1],
                    T::from_f64(PRELU_INIT_SLOPE),
                )?,
            },
            BackboneKind::Gcn => KindParams::Gcn {
                weight: store.xavier_uniform(
                    format!("{prefix}.weight"),
                    &[cfg.in_dim, cfg.out_dim],
                    rng,
                )?,
            },
            BackboneKind::Gat => {
                let dh = cfg.out_dim / cfg.gat_heads;
                let mut heads = Vec::with_capacity(cfg.gat_heads);
                for k in 0..cfg.gat_heads {
                    heads.push(GatHead {
                        weight: store.xavier_uniform(
                            format!("{prefix}.head{k}.weight"),
                            &[cfg.in_dim, dh],
                            rng,
                        )?,
                        att_src: store.xavier_uniform(
                            format!("{prefix}.head{k}.att_src"),
                            &[dh, 1],
                            rng,
                        )?,
                        att_dst: store.xavier_uniform(
                            format!("{prefix}.head{k}.att_dst"),
                            &[dh, 1],
                            rng,
                        )?,
                    });
                }
                KindParams::Gat { heads }
            }
        };
        let out_slope = match cfg.activation {
            Activation::Prelu => Some(store.constant(
                format!("{prefix}.out_slope"),
                &[1],
                T::from_f64(PRELU_INIT_SLOPE),
            )?),
            _ => None,
        };
        Ok(GraphLayer {
            cfg,
            params,
            out_slope,
        })
    }

    pub fn config(&self) -> &GraphLayerConfig {
        &self.cfg
    }

    fn check_adjacency(&self, adj: &Adjacency, mode: AdjacencyMode) -> Result<()> {
        let want_normalized = match mode {
            AdjacencyMode::NormalizedOnly => true,
            AdjacencyMode::PerBackbone => self.cfg.kind == BackboneKind::Gcn,
        };
        if want_normalized && !adj.normalized {
            return Err(Error::Config(format!(
                "{:?} layer requires the normalized adjacency here, got raw",
                self.cfg.kind
            )));
        }
        if !want_normalized && adj.normalized {
            return Err(Error::Config(format!(
                "{:?} layer aggregates the raw adjacency, got normalized",
                self.cfg.kind
            )));
        }
        Ok(())
    }

    fn activate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        z: TensorId,
    ) -> Result<TensorId> {
        match self.cfg.activation {
            Activation::None => Ok(z),
            Activation::Relu => tape.relu(z),
            Activation::Prelu => tape.prelu(z, bound.id(self.out_slope.unwrap())),
        }
    }

    /// Forward on one graph: `h` is `[N, in_dim]`, output `[N, out_dim]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        h: TensorId,
        adj: &Adjacency,
        mode: AdjacencyMode,
    ) -> Result<TensorId> {
        self.check_adjacency(adj, mode)?;
        let sh = tape.shape(h).to_vec();
        if sh.len() != 2 || sh[0] != adj.n || sh[1] != self.cfg.in_dim {
            return Err(Error::Shape {
                op: "graph_layer",
                lhs: sh,
                rhs: vec![adj.n, self.cfg.in_dim],
            });
        }
        let a = adj.to_tensor(tape)?;
        let z = match &self.params {
            KindParams::Gin {
                w1,
                b1,
                w2,
                b2,
                epsilon,
                mlp_slope,
            } => {
                // h' = MLP((1+eps)*h + A h)
                let ah = tape.matmul(a, h)?;
                let one_plus_eps = tape.add_scalar(bound.id(*epsilon), T::one())?;
                let scaled = tape.mul(h, one_plus_eps)?;
                let agg = tape.add(scaled, ah)?;
                let z1 = tape.matmul(agg, bound.id(*w1))?;
                let z1 = tape.add(z1, bound.id(*b1))?;
                let a1 = tape.prelu(z1, bound.id(*mlp_slope))?;
                let z2 = tape.matmul(a1, bound.id(*w2))?;
                tape.add(z2, bound.id(*b2))?
            }
            KindParams::Gcn { weight } => {
                let hw = tape.matmul(h, bound.id(*weight))?;
                tape.matmul(a, hw)?
            }
            KindParams::Gat { heads } => {
                // Additive attention over 1-hop neighbors including self.
                let n = adj.n;
                let mut mask = vec![GAT_MASK_FILL; n * n];
                for i in 0..n {
                    for j in 0..n {
                        if i == j || adj.at(i, j) != 0.0 {
                            mask[i * n + j] = 0.0;
                        }
                    }
                }
                let mask_t = tape.constant_f64(&mask, &[n, n])?;
                let leak = tape.constant(vec![T::from_f64(GAT_LEAKY_SLOPE)], &[1])?;
                let mut outs = Vec::with_capacity(heads.len());
                for head in heads {
                    let hw = tape.matmul(h, bound.id(head.weight))?;
                    let s = tape.matmul(hw, bound.id(head.att_src))?;
                    let d = tape.matmul(hw, bound.id(head.att_dst))?;
                    let d_row = tape.reshape(d, &[1, n])?;
                    let e = tape.add(s, d_row)?;
                    let e = tape.prelu(e, leak)?;
                    let masked = tape.add(e, mask_t)?;
                    let alpha = tape.softmax_last(masked)?;
                    outs.push(tape.matmul(alpha, hw)?);
                }
                if outs.len() == 1 {
                    outs[0]
                } else {
                    tape.concat(&outs, 1)?
                }
            }
        };
        self.activate(tape, bound, z)
    }
}

// ── Spec-shaped single-layer entry points ──────────────────────────────
// Thin wrappers that also assert the adjacency form the kind expects.

pub fn gin_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    layer: &GraphLayer,
    h: TensorId,
    adj: &Adjacency,
) -> Result<TensorId> {
    if layer.cfg.kind != BackboneKind::Gin {
        return Err(Error::Config("gin_forward called on a non-GIN layer".into()));
    }
    layer.forward(tape, bound, h, adj, AdjacencyMode::PerBackbone)
}

pub fn gcn_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    layer: &GraphLayer,
    h: TensorId,
    adj: &Adjacency,
) -> Result<TensorId> {
    if layer.cfg.kind != BackboneKind::Gcn {
        return Err(Error::Config("gcn_forward called on a non-GCN layer".into()));
    }
    layer.forward(tape, bound, h, adj, AdjacencyMode::PerBackbone)
}

pub fn gat_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    layer: &GraphLayer,
    h: TensorId,
    adj: &Adjacency,
) -> Result<TensorId> {
    if layer.cfg.kind != BackboneKind::Gat {
        return Err(Error::Config("gat_forward called on a non-GAT layer".into()));
    }
    layer.forward(tape, bound, h, adj, AdjacencyMode::PerBackbone)
}

/// A sequence of graph layers with chained dims.
pub struct EncoderStack {
    layers: Vec<GraphLayer>,
}

impl EncoderStack {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        configs: &[GraphLayerConfig],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::Config("encoder stack needs at least one layer".into()));
        }
        for w in configs.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Config(format!(
                    "stack dims do not chain: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        let layers = configs
            .iter()
            .enumerate()
            .map(|(i, c)| GraphLayer::new(store, &format!("{prefix}.layer{i}"), c.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderStack { layers })
    }

    /// Uniform stack: `depth` layers of one kind, hidden width = out width.
    pub fn uniform_configs(
        kind: BackboneKind,
        in_dim: usize,
        out_dim: usize,
        depth: usize,
        activation: Activation,
        gat_heads: usize,
    ) -> Vec<GraphLayerConfig> {
        (0..depth)
            .map(|i| {
                GraphLayerConfig::new(
                    kind,
                    if i == 0 { in_dim } else { out_dim },
                    out_dim,
                    activation,
                )
                .with_heads(gat_heads)
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[GraphLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].cfg.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().cfg.out_dim
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        h: TensorId,
        adj: &Adjacency,
        mode: AdjacencyMode,
    ) -> Result<TensorId> {
        let mut cur = h;
        for layer in &self.layers {
            cur = layer.forward(tape, bound, cur, adj, mode)?;
        }
        Ok(cur)
    }
}
