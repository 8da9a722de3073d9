//! Mini-batch training of both experts.
//!
//! Every step re-encodes both experts from the current parameters, samples
//! one BPR batch, and applies two masked gradient passes computed from the
//! same snapshot: the visited objective updates only the visited expert and
//! the unvisited objective only the unvisited expert.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluator::{self, EvalContext, Metric, Protocol};
use crate::expert::{self, EncodedExpert, ExpertParams, Gate, GatedModel, Lambdas, PlanSet, Role};
use crate::objectives::{self, Batch, GenSamples, GenTerm, GradAccumulator, LossBreakdown, LossWeights, NormPolicy, ObjectiveInputs, Triplet};
use crate::rng::{self, Stream};
use crate::store::{self, HeldOut, InteractionLog, Split, VisitedIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

/// Denominator set of the contrastive losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastiveMode {
    /// Users and items of the sampled BPR batch.
    Batch,
    /// Every user and item.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub lambda_visited: f64,
    pub lambda_unvisited: f64,
    pub tau: f64,
    pub tau_prime: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gen_negatives_k: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Stop on validation HR@10; requires validation pairs.
    pub early_stopping: bool,
    pub seed: u64,
    pub precision: Precision,
    pub contrastive_mode: ContrastiveMode,
    pub gate: Gate,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            layers: 2,
            lambda_visited: 0.5,
            lambda_unvisited: 0.5,
            tau: 0.2,
            tau_prime: 0.2,
            gamma1: 0.1,
            gamma2: 0.1,
            gamma3: 0.1,
            learning_rate: 5e-3,
            batch_size: 1024,
            gen_negatives_k: 1,
            max_epochs: 500,
            patience: 20,
            early_stopping: true,
            seed: 0,
            precision: Precision::Double,
            contrastive_mode: ContrastiveMode::Batch,
            gate: Gate::Hard,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        for (name, g) in [("gamma1", self.gamma1), ("gamma2", self.gamma2), ("gamma3", self.gamma3)] {
            if !(g >= 0.0 && g.is_finite()) {
                return fail(format!("{name} must be a finite non-negative number, got {g}"));
            }
        }
        for (name, t) in [("tau", self.tau), ("tau_prime", self.tau_prime)] {
            if !(t > 0.0 && t.is_finite()) {
                return fail(format!("{name} must be positive, got {t}"));
            }
        }
        expert::check_lambda(self.lambda_visited)?;
        expert::check_lambda(self.lambda_unvisited)?;
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            tau: self.tau,
            tau_prime: self.tau_prime,
        }
    }

    pub fn lambdas(&self) -> Lambdas {
        Lambdas {
            visited: self.lambda_visited,
            unvisited: self.lambda_unvisited,
        }
    }
}

/// Adaptive-moment optimizer state for a list of tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moment_shapes(&self) -> Vec<(usize, usize)> {
        self.m.iter().map(|m| m.dim()).collect()
    }

    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[&Array2<f64>], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(&mut **p)
                .and(*g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

fn table_shapes(p: &ExpertParams) -> Vec<(usize, usize)> {
    p.tables().iter().map(|t| t.dim()).collect()
}

/// Parameters, optimizer moments and random streams of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub visited: ExpertParams,
    pub unvisited: ExpertParams,
    pub adam_visited: Adam,
    pub adam_unvisited: Adam,
    pub epoch: usize,
    /// Incremented once per optimizer step.
    pub version: u64,
    pub sampler_rng: ChaCha8Rng,
    pub gen_rng: ChaCha8Rng,
}

impl ModelState {
    pub fn init(num_users: usize, num_items: usize, config: &TrainConfig) -> Result<Self> {
        let mut init = rng::stream(config.seed, Stream::Init);
        let mut visited = ExpertParams::xavier(num_users, num_items, config.dim, config.lambda_visited, Role::Visited, &mut init)?;
        let mut unvisited =
            ExpertParams::xavier(num_users, num_items, config.dim, config.lambda_unvisited, Role::Unvisited, &mut init)?;
        if config.precision == Precision::Single {
            round_params(&mut visited);
            round_params(&mut unvisited);
        }
        Ok(Self::from_params(visited, unvisited, config.seed))
    }

    pub fn from_params(visited: ExpertParams, unvisited: ExpertParams, seed: u64) -> Self {
        Self {
            adam_visited: Adam::new(&table_shapes(&visited)),
            adam_unvisited: Adam::new(&table_shapes(&unvisited)),
            visited,
            unvisited,
            epoch: 0,
            version: 0,
            sampler_rng: rng::stream(seed, Stream::BprSampler),
            gen_rng: rng::stream(seed, Stream::GenNegatives),
        }
    }

    pub fn expert(&self, role: Role) -> &ExpertParams {
        match role {
            Role::Visited => &self.visited,
            Role::Unvisited => &self.unvisited,
        }
    }

    /// Encodes both experts from the current parameters.
    pub fn encode(&self, plans: &PlanSet) -> Result<(EncodedExpert, EncodedExpert)> {
        Ok((
            expert::encode(&self.visited, plans, self.version)?,
            expert::encode(&self.unvisited, plans, self.version)?,
        ))
    }
}

fn round_params(p: &mut ExpertParams) {
    p.global.round_to_f32();
    p.local.round_to_f32();
}

/// Immutable training-side data derived from a training log.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub num_users: usize,
    pub num_items: usize,
    pub plans: PlanSet,
    pub index: VisitedIndex,
    /// Training buy edges, user-major.
    pub buy_edges: Vec<(usize, usize)>,
    /// Training buys per user, sorted.
    pub buys_by_user: Vec<Vec<usize>>,
    /// Per behavior, per user, sorted items.
    pub items_by_behavior: Vec<Vec<Vec<usize>>>,
}

impl TrainData {
    /// Behaviors without any training record are dropped from the funnel.
    pub fn new(train: &InteractionLog, layers: usize) -> Result<Self> {
        let train = &train.present_behaviors_only()?;
        let buys_by_user = store::buys_by_user(train);
        let buy_edges = buys_by_user
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
            .collect();
        Ok(Self {
            num_users: train.num_users(),
            num_items: train.num_items(),
            plans: PlanSet::from_train(train, layers)?,
            index: store::derive_visited_index(train),
            buy_edges,
            buys_by_user,
            items_by_behavior: (0..train.behaviors().len())
                .map(|b| store::items_by_user(train, b))
                .collect(),
        })
    }

    pub fn eval_context(&self) -> EvalContext<'_> {
        EvalContext {
            exclusions: &self.buys_by_user,
            index: &self.index,
        }
    }
}

/// Uniform item outside `taken` (sorted), or `None` when `taken` covers
/// every item.
pub fn sample_outside<R: Rng>(taken: &[usize], num_items: usize, rng: &mut R) -> Option<usize> {
    if taken.len() >= num_items {
        return None;
    }
    loop {
        let j = rng.gen_range(0..num_items);
        if taken.binary_search(&j).is_err() {
            return Some(j);
        }
    }
}

/// `batch_size` positives drawn uniformly from training buys, each with
/// one uniformly drawn negative outside the user's buys.
pub fn sample_bpr_batch<R: Rng>(
    buy_edges: &[(usize, usize)],
    buys_by_user: &[Vec<usize>],
    num_items: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    if buy_edges.is_empty() {
        return Err(Error::EmptyInput("no training buys to sample".into()));
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (user, pos) = buy_edges[rng.gen_range(0..buy_edges.len())];
        match sample_outside(&buys_by_user[user], num_items, rng) {
            Some(neg) => out.push(Triplet { user, pos, neg }),
            None => log::warn!("user {user} bought every item; no negative available"),
        }
    }
    Ok(out)
}

/// Generative supervision for one epoch: every edge of each behavior that
/// is predicted by a later one, plus `k` negatives per positive.
/// Indexed `[behavior][user]`.
pub fn sample_gen_epoch<R: Rng>(data: &TrainData, k: usize, rng: &mut R) -> Vec<Vec<Vec<GenTerm>>> {
    let m_count = data.items_by_behavior.len();
    data.items_by_behavior
        .iter()
        .enumerate()
        .map(|(m, per_user)| {
            if m + 1 >= m_count {
                return vec![Vec::new(); data.num_users];
            }
            per_user
                .iter()
                .enumerate()
                .map(|(user, items)| {
                    let mut terms = Vec::with_capacity(items.len() * (1 + k));
                    for &item in items {
                        terms.push(GenTerm { user, item, positive: true });
                        for _ in 0..k {
                            if let Some(neg) = sample_outside(items, data.num_items, rng) {
                                terms.push(GenTerm { user, item: neg, positive: false });
                            }
                        }
                    }
                    terms
                })
                .collect()
        })
        .collect()
}

/// Selects the generative terms of `users` (ascending).
pub fn gen_for_users(epoch_terms: &[Vec<Vec<GenTerm>>], users: &[usize]) -> GenSamples {
    GenSamples {
        per_behavior: epoch_terms
            .iter()
            .map(|per_user| users.iter().flat_map(|&u| per_user[u].iter().copied()).collect())
            .collect(),
    }
}

/// Assembles a step batch from sampled triplets.
pub fn make_batch(
    triplets: Vec<Triplet>,
    epoch_terms: &[Vec<Vec<GenTerm>>],
    data: &TrainData,
    mode: ContrastiveMode,
) -> Batch {
    let mut batch = Batch::with_triplet_sets(triplets, GenSamples::default());
    if mode == ContrastiveMode::Full {
        batch.users = (0..data.num_users).collect();
        batch.items = (0..data.num_items).collect();
    }
    batch.gen = gen_for_users(epoch_terms, &batch.users);
    batch
}

/// One optimizer step on both experts.
pub fn train_step(state: &mut ModelState, data: &TrainData, batch: &Batch, config: &TrainConfig) -> Result<LossBreakdown> {
    let (venc, uenc) = state.encode(&data.plans)?;
    let inputs = ObjectiveInputs {
        visited: &venc,
        unvisited: &uenc,
        index: &data.index,
        lambdas: config.lambdas(),
        gate: config.gate,
        batch,
        weights: config.weights(),
        norms: NormPolicy::Floor,
    };
    let losses = inputs.breakdown()?;
    if let Some((component, value)) = losses.first_non_finite() {
        return Err(Error::NonFinite {
            component: component.into(),
            detail: format!("value {value} at version {} ({losses:?})", state.version),
        });
    }
    let mut acc = GradAccumulator::zeros(data.num_users, data.num_items, config.dim);
    objectives::accumulate_gradients(&inputs, &data.plans, Role::Visited, &mut acc, state.version)?;
    objectives::accumulate_gradients(&inputs, &data.plans, Role::Unvisited, &mut acc, state.version)?;
    for role in [Role::Visited, Role::Unvisited] {
        if acc.slot(role).tables().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite {
                component: format!("{role:?} gradient"),
                detail: format!("at version {}", state.version),
            });
        }
    }

    let lr = config.learning_rate;
    {
        let g = acc.visited.tables();
        state.adam_visited.step(&mut state.visited.tables_mut(), &g, lr);
    }
    {
        let g = acc.unvisited.tables();
        state.adam_unvisited.step(&mut state.unvisited.tables_mut(), &g, lr);
    }
    if config.precision == Precision::Single {
        round_params(&mut state.visited);
        round_params(&mut state.unvisited);
    }
    state.version += 1;
    Ok(losses)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub bpr: f64,
    pub cl_v: f64,
    pub cl_u: f64,
    pub gen: f64,
    pub objective_v: f64,
    pub objective_u: f64,
    pub val_hr10: Option<f64>,
    pub elapsed_s: f64,
}

impl EpochLog {
    pub fn from_losses(epoch: usize, mean: &LossBreakdown, val_hr10: Option<f64>, elapsed_s: f64) -> Self {
        Self {
            epoch,
            bpr: mean.bpr,
            cl_v: mean.cl_visited,
            cl_u: mean.cl_unvisited,
            gen: mean.gen,
            objective_v: mean.total_visited_objective,
            objective_u: mean.total_unvisited_objective,
            val_hr10,
            elapsed_s,
        }
    }
}

/// Tracks the best validation score and the patience counter.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records a score; true when it is a new best.
    pub fn observe(&mut self, score: f64) -> bool {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

pub(crate) fn check_fit_inputs(split: &Split, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if config.early_stopping && config.max_epochs > 0 && split.validation.is_empty() {
        return Err(Error::Config("early stopping needs validation pairs".into()));
    }
    Ok(())
}

/// HR@10 of `pairs` under the standard protocol.
pub fn validation_hr10(state: &ModelState, data: &TrainData, pairs: &[HeldOut], gate: Gate, lambdas: Lambdas) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let (v, u) = state.encode(&data.plans)?;
    let model = GatedModel {
        visited: &v,
        unvisited: &u,
        lambdas,
        index: &data.index,
        gate,
    };
    let report = evaluator::evaluate("member", &model, pairs, data.eval_context(), &[Protocol::Standard], &[10])?;
    Ok(report.get("member", Protocol::Standard, Metric::HR, 10))
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Best-validation snapshot, or the final state without early stopping.
    pub best: ModelState,
    pub last: ModelState,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Trains on `split.train` and selects the best snapshot by validation HR@10.
pub fn fit(split: &Split, config: &TrainConfig) -> Result<FitResult> {
    let data = TrainData::new(&split.train, config.layers)?;
    fit_with_data(&data, split, config)
}

pub fn fit_with_data(data: &TrainData, split: &Split, config: &TrainConfig) -> Result<FitResult> {
    check_fit_inputs(split, config)?;
    let mut state = ModelState::init(data.num_users, data.num_items, config)?;
    let mut best = state.clone();
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let mut stopper = EarlyStopper::new(config.patience);
    let steps = data.buy_edges.len().div_ceil(config.batch_size);

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let epoch_terms = sample_gen_epoch(data, config.gen_negatives_k, &mut state.gen_rng);
        let mut sum = LossBreakdown::default();
        for _ in 0..steps {
            let triplets = sample_bpr_batch(
                &data.buy_edges,
                &data.buys_by_user,
                data.num_items,
                config.batch_size,
                &mut state.sampler_rng,
            )?;
            let batch = make_batch(triplets, &epoch_terms, data, config.contrastive_mode);
            let l = train_step(&mut state, data, &batch, config)?;
            sum.bpr += l.bpr;
            sum.cl_visited += l.cl_visited;
            sum.cl_unvisited += l.cl_unvisited;
            sum.gen += l.gen;
            sum.total_visited_objective += l.total_visited_objective;
            sum.total_unvisited_objective += l.total_unvisited_objective;
        }
        let n = steps.max(1) as f64;
        let mean = LossBreakdown {
            bpr: sum.bpr / n,
            cl_visited: sum.cl_visited / n,
            cl_unvisited: sum.cl_unvisited / n,
            gen: sum.gen / n,
            total_visited_objective: sum.total_visited_objective / n,
            total_unvisited_objective: sum.total_unvisited_objective / n,
        };
        state.epoch = epoch;
        let val = validation_hr10(&state, data, &split.validation, config.gate, config.lambdas())?;
        log.push(EpochLog::from_losses(epoch, &mean, val, start.elapsed().as_secs_f64()));
        log::info!("epoch {epoch}: bpr {:.5} val_hr10 {:?}", mean.bpr, val);

        if config.early_stopping {
            if stopper.observe(val.unwrap_or(0.0)) {
                best = state.clone();
                best_epoch = epoch;
            }
            if stopper.should_stop() {
                break;
            }
        } else {
            best = state.clone();
            best_epoch = epoch;
        }
    }
    Ok(FitResult {
        best,
        last: state,
        log,
        best_epoch,
    })
}
