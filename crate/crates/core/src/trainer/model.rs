use std::sync::Arc;

use ndarray::{s, Array2};
use rand::Rng;

use super::{GraphContext, TrainConfig, ViewMode};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::filters::WeightedView;
use crate::fusion::fuse;
use crate::moe::{
    backbone_forward, diversity_loss, enhance, load_balance_loss, residual_forward,
    BackboneOutput, Channel, DiversityTarget, ExpertBank, ResidualOutput, ResidualPool,
};
use crate::views::{edge_logits, gumbel_sigmoid_weights, EdgeGateParams};
use crate::Matrix;

/// `in → hidden → out` MLP with a relu hidden layer.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: store.add_glorot(format!("{prefix}.w1"), input, hidden, rng),
            b1: store.add_zeros(format!("{prefix}.b1"), 1, hidden),
            w2: store.add_glorot(format!("{prefix}.w2"), hidden, output, rng),
            b2: store.add_zeros(format!("{prefix}.b2"), 1, output),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, trainable: bool) -> Result<Var> {
        let w1 = tape.param(store, self.w1, trainable);
        let b1 = tape.param(store, self.b1, trainable);
        let w2 = tape.param(store, self.w2, trainable);
        let b2 = tape.param(store, self.b2, trainable);
        let z = tape.matmul(h, w1)?;
        let z = tape.add_row(z, b1)?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, w2)?;
        tape.add_row(z, b2)
    }
}

/// Every learnable component of the framework.
#[derive(Debug, Clone)]
pub struct Model {
    pub gate: EdgeGateParams,
    pub banks: [ExpertBank; 2],
    pub decoder: Decoder,
    pub mask_token: ParamId,
    pub pools: [ResidualPool; 2],
}

impl Model {
    /// Residual pools are created last so that disabling them leaves every
    /// other initial value unchanged.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &TrainConfig,
        n_features: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let node_dim = n_features + cfg.struct_dim;
        let gate = EdgeGateParams::new(store, node_dim, cfg.gate_hidden, rng);
        let coh = ExpertBank::new(
            store,
            Channel::Coh,
            cfg.coh_bank.clone(),
            cfg.top_k,
            n_features,
            node_dim,
            cfg.hidden,
            rng,
        )?;
        let disp = ExpertBank::new(
            store,
            Channel::Disp,
            cfg.disp_bank.clone(),
            cfg.top_k,
            n_features,
            node_dim,
            cfg.hidden,
            rng,
        )?;
        let decoder = Decoder::new(store, "decoder", 2 * cfg.hidden, cfg.hidden, n_features, rng);
        let mask_token = store.add_zeros("mask_token", 1, n_features);
        let pools = [
            ResidualPool::new(store, Channel::Coh, &cfg.residual, n_features, cfg.hidden, rng),
            ResidualPool::new(store, Channel::Disp, &cfg.residual, n_features, cfg.hidden, rng),
        ];
        Ok(Self {
            gate,
            banks: [coh, disp],
            decoder,
            mask_token,
            pools,
        })
    }

    /// Parameters updated by the cross-filter step.
    pub fn view_group(&self) -> Vec<ParamId> {
        self.gate.ids()
    }

    /// Parameters updated by the masked-reconstruction step.
    pub fn main_group(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for b in &self.banks {
            ids.extend(b.ids());
        }
        for p in &self.pools {
            ids.extend(p.ids());
        }
        ids.extend(self.decoder.ids());
        ids.push(self.mask_token);
        ids
    }

    /// Backbone and residual parameters, frozen during fine-tuning.
    pub fn expert_group(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for b in &self.banks {
            ids.extend(b.ids());
        }
        for p in &self.pools {
            ids.extend(p.ids());
        }
        ids
    }
}

/// Source of the per-edge weights for one forward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Weights<'a> {
    /// Run the gate; `noise` selects train-mode sampling.
    Gate { trainable: bool, noise: bool },
    /// Constant weights, used to evaluate detached copies.
    Given(&'a [f64]),
}

/// How far a forward pass goes. Later stages never change earlier values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stage {
    /// Stop once the edge weights exist.
    Weights,
    /// Both backbones, no residual pools.
    Backbones,
    /// The cohesive channel only, residual included.
    Cohesive,
    Full,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardSpec<'a> {
    /// Raw feature matrix; masked rows are overwritten before use.
    pub input: &'a Matrix,
    pub mask: Option<Arc<Vec<usize>>>,
    pub weights: Weights<'a>,
    pub main_trainable: bool,
    pub token_trainable: bool,
    /// Fusion coefficients; `None` skips the fused embedding.
    pub alpha: Option<&'a [f64]>,
    pub stage: Stage,
}

#[derive(Debug, Clone)]
pub(crate) struct ChannelOutput {
    pub backbone: BackboneOutput,
    pub residual: ResidualOutput,
    pub h: Var,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardOutput {
    /// Cohesive-view weights, `None` for the raw view mode.
    pub weights: Option<Var>,
    /// Cohesive then dispersive, as far as the stage reached.
    pub channels: Vec<ChannelOutput>,
    pub fused: Option<Var>,
}

impl ForwardOutput {
    pub fn load_loss(&self, tape: &mut Tape) -> Result<Var> {
        let a = load_balance_loss(tape, &self.channels[0].backbone.stats)?;
        let b = load_balance_loss(tape, &self.channels[1].backbone.stats)?;
        let s = tape.add(a, b)?;
        tape.scale(s, 0.5)
    }

    pub fn diversity_loss(&self, tape: &mut Tape, target: DiversityTarget) -> Result<Var> {
        let mut per_channel = Vec::with_capacity(2);
        for ch in &self.channels {
            let outputs: Vec<Var> = match target {
                DiversityTarget::Foundational => ch.backbone.experts.clone(),
                DiversityTarget::Residual => ch.residual.outputs.clone(),
                DiversityTarget::Both => ch
                    .backbone
                    .experts
                    .iter()
                    .chain(&ch.residual.outputs)
                    .copied()
                    .collect(),
            };
            per_channel.push(diversity_loss(tape, &outputs)?);
        }
        let s = tape.add(per_channel[0], per_channel[1])?;
        tape.scale(s, 0.5)
    }
}

/// Features with masked rows replaced by `token`, as plain values.
pub(crate) fn substitute(input: &Matrix, token: &Matrix, mask: &[usize]) -> Matrix {
    let mut x = input.clone();
    for &r in mask {
        x.row_mut(r).assign(&token.row(0));
    }
    x
}

fn hconcat_values(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(a);
    out.slice_mut(s![.., a.ncols()..]).assign(b);
    out
}

/// One pass through views, both channels and (optionally) fusion.
pub(crate) fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    model: &Model,
    cfg: &TrainConfig,
    ctx: &GraphContext,
    spec: &ForwardSpec<'_>,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let adj = ctx.graph.adjacency();
    let s_mat = ctx.structural.matrix();

    let raw = tape.constant(spec.input.clone());
    let (x, x_values) = match &spec.mask {
        Some(mask) => {
            let token = tape.param(store, model.mask_token, spec.token_trainable);
            let x = tape.replace_rows(raw, token, Arc::clone(mask))?;
            let v = substitute(spec.input, store.value(model.mask_token), mask);
            (x, v)
        }
        None => (raw, spec.input.clone()),
    };
    let s_var = tape.constant(s_mat.clone());
    let router_in = tape.hconcat(&[x, s_var])?;

    let weights = match (spec.weights, &cfg.view_mode) {
        (Weights::Given(w), _) => Some(tape.constant(crate::views::column(w))),
        (_, ViewMode::Raw) => None,
        (_, ViewMode::Fixed(w)) => Some(tape.constant(crate::views::column(w))),
        (Weights::Gate { trainable, noise }, ViewMode::Learned) => {
            let desc = tape.constant(hconcat_values(&x_values, s_mat));
            let logits = edge_logits(tape, store, &model.gate, adj, desc, trainable)?;
            Some(gumbel_sigmoid_weights(tape, logits, cfg.tau, rng, noise)?)
        }
    };
    if spec.stage == Stage::Weights {
        return Ok(ForwardOutput {
            weights,
            channels: Vec::new(),
            fused: None,
        });
    }
    let (coh_view, disp_view) = match weights {
        Some(w) => {
            let views = crate::views::build_views(tape, adj, w)?;
            (views.coh, views.disp)
        }
        None => {
            let v = WeightedView::unweighted(tape, adj)?;
            (v.clone(), v)
        }
    };

    let n_channels = if spec.stage == Stage::Cohesive { 1 } else { 2 };
    let mut channels = Vec::with_capacity(2);
    for (c, view) in [coh_view, disp_view].iter().enumerate().take(n_channels) {
        let backbone = backbone_forward(
            tape,
            store,
            &model.banks[c],
            x,
            router_in,
            view,
            spec.main_trainable,
        )?;
        let residual = if spec.stage == Stage::Backbones {
            ResidualOutput {
                h_r: None,
                outputs: Vec::new(),
            }
        } else {
            residual_forward(tape, store, &model.pools[c], x, view, spec.main_trainable)?
        };
        let h = enhance(tape, backbone.h_b, residual.h_r)?;
        channels.push(ChannelOutput {
            backbone,
            residual,
            h,
        });
    }
    let fused = match (spec.alpha, channels.as_slice()) {
        (Some(a), [coh, disp]) => Some(fuse(tape, coh.h, disp.h, a)?),
        _ => None,
    };
    Ok(ForwardOutput {
        weights,
        channels,
        fused,
    })
}
