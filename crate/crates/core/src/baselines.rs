//! Single-model comparison baselines trained with the same BPR loop:
//! matrix factorization, LightGCN on the buy graph, and LightGCN on the
//! union of all behaviors.

use std::time::Instant;

use serde::Serialize;

use crate::encoder::{EmbeddingPair, PropagationPlan};
use crate::error::{Error, Result};
use crate::evaluator::{self, Metric, Protocol, Scorer};
use crate::expert::{dot, xavier};
use crate::objectives::{bpr_loss, LossBreakdown, Triplet};
use crate::rng::{self, Stream};
use crate::store::{self, HeldOut, InteractionLog, Split, BUY};
use crate::trainer::{self, Adam, EarlyStopper, EpochLog, Precision, TrainConfig, TrainData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    MfBpr,
    LgcnBuy,
    LgcnGlobal,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::MfBpr => "mf_bpr",
            BaselineKind::LgcnBuy => "lgcn_buy",
            BaselineKind::LgcnGlobal => "lgcn_global",
        }
    }
}

/// Propagation plan a baseline scores through; `None` for MF.
pub fn baseline_plan(kind: BaselineKind, train: &InteractionLog, layers: usize) -> Result<Option<PropagationPlan>> {
    Ok(match kind {
        BaselineKind::MfBpr => None,
        BaselineKind::LgcnBuy => Some(PropagationPlan::prepare(&store::build_behavior_graph(train, BUY)?, layers)),
        BaselineKind::LgcnGlobal => {
            let graphs = store::build_all_behavior_graphs(train)?;
            Some(PropagationPlan::prepare(&store::build_global_graph(&graphs)?, layers))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub kind: BaselineKind,
    pub init: EmbeddingPair,
    pub layers: usize,
}

/// Parameters together with the embeddings used for scoring.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub params: BaselineParams,
    pub output: EmbeddingPair,
}

impl BaselineModel {
    pub fn new(params: BaselineParams, plan: Option<&PropagationPlan>) -> Result<Self> {
        let output = match plan {
            Some(p) => p.propagate(&params.init)?,
            None => params.init.clone(),
        };
        Ok(Self { params, output })
    }

    pub fn score(&self, u: usize, i: usize) -> Result<f64> {
        if u >= self.output.num_users() || i >= self.output.num_items() {
            return Err(Error::Index(format!(
                "({u}, {i}) outside {}x{}",
                self.output.num_users(),
                self.output.num_items()
            )));
        }
        Ok(self.score_unchecked(u, i))
    }

    fn score_unchecked(&self, u: usize, i: usize) -> f64 {
        dot(self.output.users.row(u), self.output.items.row(i))
    }
}

/// Dot product of the baseline's (propagated, for LightGCN kinds) rows.
pub fn baseline_score(params: &BaselineParams, plan: Option<&PropagationPlan>, u: usize, i: usize) -> Result<f64> {
    BaselineModel::new(params.clone(), plan)?.score(u, i)
}

impl Scorer for BaselineModel {
    fn num_items(&self) -> usize {
        self.output.num_items()
    }

    fn scores(&self, u: usize) -> Vec<f64> {
        (0..self.num_items()).map(|i| self.score_unchecked(u, i)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BaselineFit {
    pub best: BaselineParams,
    pub last: BaselineParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

fn bpr_step(
    params: &mut BaselineParams,
    adam: &mut Adam,
    plan: Option<&PropagationPlan>,
    triplets: &[Triplet],
    config: &TrainConfig,
) -> Result<f64> {
    let model = BaselineModel::new(params.clone(), plan)?;
    let loss = bpr_loss(triplets, |u, i| model.score_unchecked(u, i))?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            component: "bpr".into(),
            detail: format!("baseline {} loss {loss}", params.kind.name()),
        });
    }
    let out = &model.output;
    let mut g = EmbeddingPair::zeros(out.num_users(), out.num_items(), out.dim());
    let scale = 1.0 / triplets.len() as f64;
    for t in triplets {
        let x = model.score_unchecked(t.user, t.pos) - model.score_unchecked(t.user, t.neg);
        let dx = -scale / (1.0 + x.exp());
        let diff = &out.items.row(t.pos) - &out.items.row(t.neg);
        g.users.row_mut(t.user).scaled_add(dx, &diff);
        g.items.row_mut(t.pos).scaled_add(dx, &out.users.row(t.user));
        g.items.row_mut(t.neg).scaled_add(-dx, &out.users.row(t.user));
    }
    let g = match plan {
        Some(p) => p.transport_gradient(&g)?,
        None => g,
    };
    adam.step(
        &mut [&mut params.init.users, &mut params.init.items],
        &[&g.users, &g.items],
        config.learning_rate,
    );
    if config.precision == Precision::Single {
        params.init.round_to_f32();
    }
    Ok(loss)
}

fn validation_hr10(
    params: &BaselineParams,
    plan: Option<&PropagationPlan>,
    data: &TrainData,
    pairs: &[HeldOut],
) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let model = BaselineModel::new(params.clone(), plan)?;
    let r = evaluator::evaluate("baseline", &model, pairs, data.eval_context(), &[Protocol::Standard], &[10])?;
    Ok(r.get("baseline", Protocol::Standard, Metric::HR, 10))
}

/// Initial baseline parameters drawn from the run seed.
pub fn baseline_init(kind: BaselineKind, num_users: usize, num_items: usize, config: &TrainConfig) -> BaselineParams {
    let mut r = rng::stream(config.seed, Stream::Baseline);
    let mut init = EmbeddingPair {
        users: xavier(num_users, config.dim, &mut r),
        items: xavier(num_items, config.dim, &mut r),
    };
    if config.precision == Precision::Single {
        init.round_to_f32();
    }
    BaselineParams {
        kind,
        init,
        layers: if kind == BaselineKind::MfBpr { 0 } else { config.layers },
    }
}

/// BPR training with the trainer's sampler, optimizer and stopping rule.
pub fn baseline_fit(kind: BaselineKind, split: &Split, config: &TrainConfig) -> Result<BaselineFit> {
    trainer::check_fit_inputs(split, config)?;
    let data = TrainData::new(&split.train, config.layers)?;
    let plan = baseline_plan(kind, &split.train, config.layers)?;
    let plan = plan.as_ref();
    let mut params = baseline_init(kind, data.num_users, data.num_items, config);
    let mut adam = Adam::new(&[params.init.users.dim(), params.init.items.dim()]);
    let mut sampler = rng::stream(config.seed, Stream::BprSampler);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut stopper = EarlyStopper::new(config.patience);
    let mut log = Vec::new();
    let steps = data.buy_edges.len().div_ceil(config.batch_size);

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let mut sum = 0.0;
        for _ in 0..steps {
            let triplets =
                trainer::sample_bpr_batch(&data.buy_edges, &data.buys_by_user, data.num_items, config.batch_size, &mut sampler)?;
            sum += bpr_step(&mut params, &mut adam, plan, &triplets, config)?;
        }
        let bpr = sum / steps.max(1) as f64;
        let val = validation_hr10(&params, plan, &data, &split.validation)?;
        let losses = LossBreakdown {
            bpr,
            total_visited_objective: bpr,
            total_unvisited_objective: bpr,
            ..Default::default()
        };
        log.push(EpochLog::from_losses(epoch, &losses, val, start.elapsed().as_secs_f64()));
        if config.early_stopping {
            if stopper.observe(val.unwrap_or(0.0)) {
                best = params.clone();
                best_epoch = epoch;
            }
            if stopper.should_stop() {
                break;
            }
        } else {
            best = params.clone();
            best_epoch = epoch;
        }
    }
    Ok(BaselineFit {
        best,
        last: params,
        log,
        best_epoch,
    })
}
