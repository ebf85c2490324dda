use std::sync::Arc;

use rand::SeedableRng;

use super::model::Decoder;
use super::session::{mae_loss, MaskPlan};
use super::{GraphContext, LossRecord, TrainConfig};
use crate::autodiff::{AdamConfig, AdamState, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::filters::WeightedView;
use crate::moe::{expert_forward, ExpertKind, ResidualExpert};
use crate::SessionRng;

/// Expert pool of the flat MoE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaivePool {
    /// One expert of each kind: gcn, sage, gin, gat.
    Heterogeneous,
    /// Four gcn layers.
    Homogeneous,
}

impl NaivePool {
    fn kinds(self) -> [ExpertKind; 4] {
        match self {
            NaivePool::Heterogeneous => ExpertKind::ALL,
            NaivePool::Homogeneous => [ExpertKind::Gcn; 4],
        }
    }
}

/// Population standard deviation of the last quarter of `curve`
/// (at least one point).
pub fn volatility(curve: &[f64]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let tail = (curve.len() / 4).max(1);
    let xs = &curve[curve.len() - tail..];
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Trains a single dense softmax gate over the pool on the raw graph with
/// the masked reconstruction loss alone. Returns one record per epoch with
/// `total = l_mae`.
pub fn naive_moe_baseline(ctx: &GraphContext, cfg: &TrainConfig, pool: NaivePool) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let n_features = ctx.graph.n_features();
    let gate_in = n_features + ctx.structural.dim();
    let mut init = SessionRng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let gate_w = store.add_glorot("naive.router.w", gate_in, 4, &mut init);
    let gate_b = store.add_zeros("naive.router.b", 1, 4);
    let experts: Vec<ResidualExpert> = pool
        .kinds()
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            ResidualExpert::new(&mut store, &format!("naive.e{k}.{}", kind.name()), kind, n_features, cfg.hidden, &mut init)
        })
        .collect();
    let decoder = Decoder::new(&mut store, "naive.decoder", cfg.hidden, cfg.hidden, n_features, &mut init);
    let token = store.add_zeros("naive.mask_token", 1, n_features);

    let mut group: Vec<ParamId> = vec![gate_w, gate_b, token];
    for e in &experts {
        group.extend(e.weights.iter().copied());
    }
    group.extend(decoder.ids());
    let mut opt = AdamState::new(&store, group, AdamConfig::with_lr(cfg.lr));
    let mut rng = SessionRng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let s_mat = ctx.structural.matrix();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mask = MaskPlan::sample(ctx.n_nodes(), cfg.mask_ratio, &mut rng)?;
        let mut tape = Tape::new();
        let raw = tape.constant(ctx.graph.features().clone());
        let tok = tape.param(&store, token, true);
        let x = tape.replace_rows(raw, tok, Arc::clone(&mask.nodes))?;
        let s_var = tape.constant(s_mat.clone());
        let router_in = tape.hconcat(&[x, s_var])?;
        let w = tape.param(&store, gate_w, true);
        let b = tape.param(&store, gate_b, true);
        let logits = tape.matmul(router_in, w)?;
        let logits = tape.add_row(logits, b)?;
        let gates = tape.softmax(logits)?;
        let view = WeightedView::unweighted(&mut tape, ctx.graph.adjacency())?;
        let mut mix = None;
        for (k, e) in experts.iter().enumerate() {
            let out = expert_forward(&mut tape, &store, e, x, &view, true)?;
            let g = tape.select_col(gates, k)?;
            let term = tape.mul_col(out, g)?;
            mix = Some(match mix {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let h = mix.expect("four experts");
        let l_mae = mae_loss(&mut tape, &store, &decoder, h, ctx.graph.features(), &mask, cfg.gamma, true)
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged {
                    epoch,
                    component: "l_mae",
                },
                other => other,
            })?;
        tape.backward(l_mae)?;
        tape.accumulate_grads(&mut store);
        opt.step(&mut store);
        let v = tape.scalar(l_mae);
        history.push(LossRecord {
            epoch,
            l_mae: v,
            l_load: 0.0,
            l_div: 0.0,
            l_svg: 0.0,
            total: v,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_sbm, SbmConfig};

    #[test]
    fn volatility_of_known_tails() {
        assert_eq!(volatility(&[5.0, 5.0, 1.0, 1.0]), 0.0);
        // last quarter of 8 points: [1, 3] → std 1
        assert!((volatility(&[9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 1.0, 3.0]) - 1.0).abs() < 1e-12);
        assert_eq!(volatility(&[]), 0.0);
        assert_eq!(volatility(&[2.0]), 0.0);
    }

    #[test]
    fn baseline_is_deterministic() {
        let g = gen_sbm(&SbmConfig {
            n_per_block: 12,
            feat_dim: 5,
            ..SbmConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            hidden: 6,
            epochs: 4,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let ctx = GraphContext::new(&g, &cfg).unwrap();
        let a = naive_moe_baseline(&ctx, &cfg, NaivePool::Heterogeneous).unwrap();
        let b = naive_moe_baseline(&ctx, &cfg, NaivePool::Heterogeneous).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|r| r.total == r.l_mae && r.l_mae.is_finite()));
        let h = naive_moe_baseline(&ctx, &cfg, NaivePool::Homogeneous).unwrap();
        assert_ne!(a, h);
    }
}
