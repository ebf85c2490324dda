use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};

use super::model::{forward, ForwardOutput, ForwardSpec, Model, Stage, Weights};
use super::{GraphContext, LossRecord, TrainConfig, ViewMode};
use crate::autodiff::{checkpoint, AdamConfig, AdamState, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::fusion::{fusion_state, FusionMode};
use crate::loss::{cross_entropy, scaled_cosine_error};
use crate::moe::RoutingRecord;
use crate::views::{svg_loss, weight_values};
use crate::{Matrix, SessionRng};

/// Nodes whose features are hidden in one reconstruction step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub nodes: Arc<Vec<usize>>,
}

impl MaskPlan {
    /// `round(ratio · n)` distinct nodes, sorted.
    pub fn sample<R: Rng + ?Sized>(n: usize, ratio: f64, rng: &mut R) -> Result<Self> {
        let m = (ratio * n as f64).round() as usize;
        if m == 0 {
            return Err(Error::invalid(format!(
                "mask ratio {ratio} selects no node out of {n}"
            )));
        }
        let mut nodes = sample(rng, n, m.min(n)).into_vec();
        nodes.sort_unstable();
        Ok(Self {
            nodes: Arc::new(nodes),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `(1/|M|) Σ_{i∈M} (1 − cos(decoder(h_i), x_i)^γ)`.
pub fn mae_loss(
    tape: &mut Tape,
    store: &ParamStore,
    decoder: &super::Decoder,
    h_final: Var,
    x_orig: &Matrix,
    mask: &MaskPlan,
    gamma: f64,
    trainable: bool,
) -> Result<Var> {
    if mask.is_empty() {
        return Err(Error::invalid("empty mask set"));
    }
    let h = tape.gather_rows(h_final, Arc::clone(&mask.nodes))?;
    let recon = decoder.forward(tape, store, h, trainable)?;
    let target = tape.constant(x_orig.select(ndarray::Axis(0), &mask.nodes));
    scaled_cosine_error(tape, recon, target, gamma)
}

/// `L_mae + λ_load · L_load + λ_div · L_div`.
pub fn composite_loss(
    tape: &mut Tape,
    l_mae: Var,
    l_load: Var,
    l_div: Var,
    cfg: &TrainConfig,
) -> Result<Var> {
    let a = tape.scale(l_load, cfg.lambda_load)?;
    let b = tape.scale(l_div, cfg.lambda_div)?;
    let s = tape.add(l_mae, a)?;
    tape.add(s, b)
}

fn diverged(epoch: usize, component: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { epoch, component },
        other => other,
    }
}

#[derive(Debug, Clone)]
struct FewShotHead {
    w: ParamId,
    b: ParamId,
}

/// Parameters, optimiser moments, generator and history of one session.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub cfg: TrainConfig,
    pub store: ParamStore,
    pub model: Model,
    view_opt: AdamState,
    main_opt: AdamState,
    rng: SessionRng,
    pub history: Vec<LossRecord>,
    pub routing: Vec<RoutingRecord>,
    /// Fusion coefficients used by the most recent reconstruction step.
    pub alpha: Vec<f64>,
    head: Option<FewShotHead>,
}

/// Breakdown of one reconstruction objective.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MainLoss {
    pub l_mae: Var,
    pub l_load: Var,
    pub l_div: Var,
    pub total: Var,
}

impl TrainState {
    pub fn new(ctx: &GraphContext, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if let ViewMode::Fixed(w) = &cfg.view_mode {
            if w.len() != ctx.graph.n_edges() {
                return Err(Error::Config(format!(
                    "{} fixed weights for {} edges",
                    w.len(),
                    ctx.graph.n_edges()
                )));
            }
        }
        let mut init_rng = SessionRng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let model = Model::new(&mut store, &cfg, ctx.graph.n_features(), &mut init_rng)?;
        let view_opt = AdamState::new(&store, model.view_group(), AdamConfig::with_lr(cfg.lr));
        let main_opt = AdamState::new(&store, model.main_group(), AdamConfig::with_lr(cfg.lr));
        let mut rng = SessionRng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            alpha: vec![0.5; ctx.n_nodes()],
            cfg,
            store,
            model,
            view_opt,
            main_opt,
            rng,
            history: Vec::new(),
            routing: Vec::new(),
            head: None,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    fn fusion_alpha(&self, adaptive: &[f64]) -> Vec<f64> {
        let n = adaptive.len();
        match self.cfg.fusion {
            FusionMode::Adaptive => adaptive.to_vec(),
            FusionMode::CohesiveOnly => vec![1.0; n],
            FusionMode::DispersiveOnly => vec![0.0; n],
            FusionMode::NaiveConcat => vec![0.5; n],
        }
    }

    /// Eval-mode pass on unmasked features: cohesive weights and the
    /// channel embeddings the stage reaches.
    fn eval_pass(&mut self, ctx: &GraphContext, stage: Stage) -> Result<(Vec<f64>, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let spec = ForwardSpec {
            input: ctx.graph.features(),
            mask: None,
            weights: Weights::Gate {
                trainable: false,
                noise: false,
            },
            main_trainable: false,
            token_trainable: false,
            alpha: None,
            stage,
        };
        let out = forward(&mut tape, &self.store, &self.model, &self.cfg, ctx, &spec, &mut self.rng)?;
        let w = match out.weights {
            Some(w) => weight_values(&tape, w),
            None => vec![1.0; ctx.graph.n_edges()],
        };
        let h = out.channels.iter().map(|c| tape.value(c.h).clone()).collect();
        Ok((w, h))
    }

    /// Eval-mode cohesive edge weights (all ones in the raw view mode).
    pub fn eval_weights(&mut self, ctx: &GraphContext) -> Result<Vec<f64>> {
        Ok(self.eval_pass(ctx, Stage::Weights)?.0)
    }

    /// Adaptive coefficients from the current weights and embeddings,
    /// before the fusion-mode override.
    pub fn adaptive_alpha(&mut self, ctx: &GraphContext) -> Result<Vec<f64>> {
        let (w, h) = self.eval_pass(ctx, Stage::Cohesive)?;
        Ok(fusion_state(&h[0], &w, &ctx.graph, &ctx.ops, self.cfg.weight_stat).alpha)
    }

    /// Final embedding `[α ⊙ h_coh | (1 − α) ⊙ h_disp]`, eval mode.
    pub fn embed(&mut self, ctx: &GraphContext) -> Result<Matrix> {
        Ok(self.embed_with_alpha(ctx)?.0)
    }

    /// The embedding together with the fusion coefficients it used.
    pub fn embed_with_alpha(&mut self, ctx: &GraphContext) -> Result<(Matrix, Vec<f64>)> {
        let (w, mut h) = self.eval_pass(ctx, Stage::Full)?;
        let h_disp = h.pop().expect("two channels");
        let h_coh = h.pop().expect("two channels");
        let adaptive = fusion_state(&h_coh, &w, &ctx.graph, &ctx.ops, self.cfg.weight_stat).alpha;
        let alpha = self.fusion_alpha(&adaptive);
        let mut tape = Tape::new();
        let c = tape.constant(h_coh);
        let d = tape.constant(h_disp);
        let f = crate::fusion::fuse(&mut tape, c, d, &alpha)?;
        Ok((tape.value(f).clone(), alpha))
    }

    /// Cross-filter step: train-mode weights on the tape, backbone targets
    /// evaluated as constants with the same weights. Updates the gate only.
    fn svg_step(&mut self, ctx: &GraphContext, epoch: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let spec = ForwardSpec {
            input: ctx.graph.features(),
            mask: None,
            weights: Weights::Gate {
                trainable: true,
                noise: true,
            },
            main_trainable: false,
            token_trainable: false,
            alpha: None,
            stage: Stage::Weights,
        };
        let out = forward(&mut tape, &self.store, &self.model, &self.cfg, ctx, &spec, &mut self.rng)
            .map_err(diverged(epoch, "l_svg"))?;
        let w_var = out.weights.expect("learned view mode");
        let w = weight_values(&tape, w_var);

        let mut detached = Tape::new();
        let spec = ForwardSpec {
            weights: Weights::Given(&w),
            stage: Stage::Backbones,
            ..spec
        };
        let targets = forward(&mut detached, &self.store, &self.model, &self.cfg, ctx, &spec, &mut self.rng)
            .map_err(diverged(epoch, "l_svg"))?;
        let h_coh = detached.value(targets.channels[0].backbone.h_b).clone();
        let h_disp = detached.value(targets.channels[1].backbone.h_b).clone();

        let views = crate::views::build_views(&mut tape, ctx.graph.adjacency(), w_var)?;
        let loss = svg_loss(&mut tape, &views, &h_coh, &h_disp, self.cfg.gamma_svg)
            .map_err(diverged(epoch, "l_svg"))?;
        tape.backward(loss.total)?;
        tape.accumulate_grads(&mut self.store);
        self.view_opt.step(&mut self.store);
        Ok(tape.scalar(loss.total))
    }

    /// Masked-reconstruction objective on `input`, whose masked rows are
    /// replaced by the mask token before anything reads them. Targets come
    /// from the context's clean features.
    pub(crate) fn main_objective(
        &mut self,
        tape: &mut Tape,
        ctx: &GraphContext,
        input: &Matrix,
        mask: &MaskPlan,
        alpha: &[f64],
        finetune: bool,
    ) -> Result<(ForwardOutput, MainLoss)> {
        let spec = ForwardSpec {
            input,
            mask: Some(Arc::clone(&mask.nodes)),
            weights: Weights::Gate {
                trainable: finetune,
                noise: finetune,
            },
            main_trainable: !finetune,
            token_trainable: !finetune,
            alpha: Some(alpha),
            stage: Stage::Full,
        };
        let out = forward(tape, &self.store, &self.model, &self.cfg, ctx, &spec, &mut self.rng)?;
        let fused = out.fused.expect("alpha supplied");
        let l_mae = mae_loss(
            tape,
            &self.store,
            &self.model.decoder,
            fused,
            ctx.graph.features(),
            mask,
            self.cfg.gamma,
            !finetune,
        )?;
        let l_load = out.load_loss(tape)?;
        let l_div = out.diversity_loss(tape, self.cfg.div_target)?;
        let total = composite_loss(tape, l_mae, l_load, l_div, &self.cfg)?;
        Ok((
            out,
            MainLoss {
                l_mae,
                l_load,
                l_div,
                total,
            },
        ))
    }

    /// Loss of one reconstruction step on possibly altered inputs, without
    /// updating anything. Used to audit that masked rows never leak.
    pub fn probe_masked_loss(
        &mut self,
        ctx: &GraphContext,
        input: &Matrix,
        mask: &MaskPlan,
    ) -> Result<f64> {
        let alpha = self.alpha.clone();
        let mut tape = Tape::new();
        let (_, loss) = self.main_objective(&mut tape, ctx, input, mask, &alpha, false)?;
        Ok(tape.scalar(loss.total))
    }

    /// One epoch: recompute `α`, run the gate update(s), then the main
    /// update on a fresh mask.
    pub fn train_epoch(&mut self, ctx: &GraphContext) -> Result<LossRecord> {
        let epoch = self.history.len() + 1;
        let adaptive = if self.cfg.fusion == FusionMode::Adaptive {
            self.adaptive_alpha(ctx).map_err(diverged(epoch, "alpha"))?
        } else {
            vec![0.5; ctx.n_nodes()]
        };
        self.alpha = self.fusion_alpha(&adaptive);

        let mut l_svg = 0.0;
        if self.cfg.view_mode == ViewMode::Learned {
            for _ in 0..self.cfg.svg_steps {
                l_svg = self.svg_step(ctx, epoch)?;
            }
        }

        let mask = MaskPlan::sample(ctx.n_nodes(), self.cfg.mask_ratio, &mut self.rng)?;
        let mut tape = Tape::new();
        let alpha = self.alpha.clone();
        let (out, loss) = self
            .main_objective(&mut tape, ctx, ctx.graph.features(), &mask, &alpha, false)
            .map_err(diverged(epoch, "l_ADaMoRE"))?;
        tape.backward(loss.total)?;
        tape.accumulate_grads(&mut self.store);
        self.main_opt.step(&mut self.store);

        for (c, ch) in out.channels.iter().enumerate() {
            let channel = self.model.banks[c].channel;
            self.routing
                .extend(RoutingRecord::from_stats(epoch, channel, &ch.backbone.stats));
        }
        let rec = LossRecord {
            epoch,
            l_mae: tape.scalar(loss.l_mae),
            l_load: tape.scalar(loss.l_load),
            l_div: tape.scalar(loss.l_div),
            l_svg,
            total: tape.scalar(loss.total),
        };
        self.history.push(rec);
        Ok(rec)
    }

    /// Runs the configured number of epochs.
    pub fn fit(&mut self, ctx: &GraphContext) -> Result<&[LossRecord]> {
        for _ in 0..self.cfg.epochs {
            self.train_epoch(ctx)?;
        }
        Ok(&self.history)
    }

    /// Adds a linear classifier on the fused embedding and trains it together
    /// with the edge gate on `L_ADaMoRE + λ_cls · CE(support)`. Backbone,
    /// residual experts, decoder and mask token stay frozen.
    pub fn finetune_fewshot(&mut self, ctx: &GraphContext, support: &[usize]) -> Result<()> {
        let labels = ctx.graph.require_labels()?;
        let n_classes = ctx.graph.n_classes().unwrap_or(0);
        if support.is_empty() {
            return Err(Error::invalid("empty support set"));
        }
        let mut seen = vec![false; n_classes];
        for &i in support {
            if i >= ctx.n_nodes() {
                return Err(Error::invalid(format!("support node {i} out of range")));
            }
            seen[labels[i]] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("class {c} has no support node")));
        }
        let width = 2 * self.cfg.hidden;
        let head = match &self.head {
            Some(h) => h.clone(),
            None => {
                let mut init = SessionRng::seed_from_u64(self.cfg.seed);
                init.set_stream(2);
                let h = FewShotHead {
                    w: self.store.add_glorot("head.w", width, n_classes, &mut init),
                    b: self.store.add_zeros("head.b", 1, n_classes),
                };
                self.head = Some(h.clone());
                h
            }
        };
        let mut group = self.model.view_group();
        group.extend([head.w, head.b]);
        let mut opt = AdamState::new(&self.store, group, AdamConfig::with_lr(self.cfg.finetune_lr));
        let support_idx = Arc::new(support.to_vec());
        let support_labels: Vec<usize> = support.iter().map(|&i| labels[i]).collect();

        for ep in 0..self.cfg.finetune_epochs {
            let adaptive = if self.cfg.fusion == FusionMode::Adaptive {
                self.adaptive_alpha(ctx)?
            } else {
                vec![0.5; ctx.n_nodes()]
            };
            self.alpha = self.fusion_alpha(&adaptive);
            let mask = MaskPlan::sample(ctx.n_nodes(), self.cfg.mask_ratio, &mut self.rng)?;
            let mut tape = Tape::new();
            let alpha = self.alpha.clone();
            let (out, loss) = self
                .main_objective(&mut tape, ctx, ctx.graph.features(), &mask, &alpha, true)
                .map_err(diverged(ep + 1, "l_fewshot"))?;
            let fused = out.fused.expect("alpha supplied");
            let hs = tape.gather_rows(fused, Arc::clone(&support_idx))?;
            let w = tape.param(&self.store, head.w, true);
            let b = tape.param(&self.store, head.b, true);
            let logits = tape.matmul(hs, w)?;
            let logits = tape.add_row(logits, b)?;
            let ce = cross_entropy(&mut tape, logits, &support_labels)?;
            let ce = tape.scale(ce, self.cfg.lambda_cls)?;
            let total = tape.add(loss.total, ce)?;
            tape.backward(total)?;
            tape.accumulate_grads(&mut self.store);
            opt.step(&mut self.store);
        }
        Ok(())
    }

    /// Head predictions on every node, if a head was trained.
    pub fn classify(&mut self, ctx: &GraphContext) -> Result<Option<Vec<usize>>> {
        let Some(head) = self.head.clone() else {
            return Ok(None);
        };
        let h = self.embed(ctx)?;
        let logits = h.dot(self.store.value(head.w)) + self.store.value(head.b);
        Ok(Some(
            logits
                .rows()
                .into_iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                        .0
                })
                .collect(),
        ))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store)
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        checkpoint::restore(path, &mut self.store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_sbm, SbmConfig};

    fn small() -> (GraphContext, TrainConfig) {
        let g = gen_sbm(&SbmConfig {
            n_per_block: 15,
            feat_dim: 6,
            ..SbmConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            hidden: 8,
            gate_hidden: 8,
            epochs: 3,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        (GraphContext::new(&g, &cfg).unwrap(), cfg)
    }

    #[test]
    fn mask_size_is_rounded_ratio() {
        let mut rng = SessionRng::seed_from_u64(0);
        let m = MaskPlan::sample(101, 0.5, &mut rng).unwrap();
        assert_eq!(m.len(), 51);
        assert!(m.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(MaskPlan::sample(3, 0.1, &mut rng).is_err());
    }

    #[test]
    fn composite_arithmetic() {
        let mut t = Tape::new();
        let a = t.scalar_constant(0.8);
        let b = t.scalar_constant(1.0);
        let c = t.scalar_constant(0.5);
        let l = composite_loss(&mut t, a, b, c, &TrainConfig::default()).unwrap();
        assert!((t.scalar(l) - 0.95).abs() < 1e-12);
        let zero = TrainConfig {
            lambda_load: 0.0,
            lambda_div: 0.0,
            ..TrainConfig::default()
        };
        let l = composite_loss(&mut t, a, b, c, &zero).unwrap();
        assert_eq!(t.scalar(l), 0.8);
    }

    #[test]
    fn epoch_records_and_embedding_shape() {
        let (ctx, cfg) = small();
        let mut st = TrainState::new(&ctx, cfg).unwrap();
        let r = st.train_epoch(&ctx).unwrap();
        assert_eq!(r.epoch, 1);
        assert!(r.l_svg > 0.0 && r.total.is_finite());
        let e = st.embed(&ctx).unwrap();
        assert_eq!(e.dim(), (30, 16));
        assert_eq!(e, st.embed(&ctx).unwrap());
        assert_eq!(st.routing.len(), 8);
    }

    #[test]
    fn fewshot_rejects_missing_class() {
        let (ctx, cfg) = small();
        let mut st = TrainState::new(&ctx, cfg).unwrap();
        let labels = ctx.graph.labels().unwrap();
        let only0: Vec<usize> = (0..30).filter(|&i| labels[i] == 0).take(2).collect();
        assert!(st.finetune_fewshot(&ctx, &only0).is_err());
        assert!(st.finetune_fewshot(&ctx, &[]).is_err());
    }
}
