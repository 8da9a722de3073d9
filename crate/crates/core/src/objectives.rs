//! Losses and their analytic gradients.
//!
//! Gradients are formed in two stages: first with respect to each encoded
//! view (scores, cosines, softmaxes and sigmoids), then transported through
//! the propagation plans back to the expert's initial tables.

use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;

use crate::encoder::EmbeddingPair;
use crate::error::{Error, Result};
use crate::expert::{self, dot, EncodedExpert, Gate, Lambdas, PlanSet, Role, GLOBAL};
use crate::store::VisitedIndex;

/// Rows with a norm below this are floored in training mode.
pub const NORM_FLOOR: f64 = 1e-12;

/// `(user, positive item, negative item)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Handling of zero-norm rows in cosine similarities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormPolicy {
    /// Zero norm is an error.
    Strict,
    /// Norms are clamped to [`NORM_FLOOR`].
    Floor,
}

/// One binary cross-entropy target of the generative loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenTerm {
    pub user: usize,
    pub item: usize,
    pub positive: bool,
}

/// Generative supervision terms, indexed by the behavior being predicted.
/// Terms are grouped by user in ascending user order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenSamples {
    pub per_behavior: Vec<Vec<GenTerm>>,
}

/// Everything a training step's losses consume besides the encodings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub triplets: Vec<Triplet>,
    /// Users whose views are contrasted (denominator set).
    pub users: Vec<usize>,
    /// Items whose views are contrasted (denominator set).
    pub items: Vec<usize>,
    pub gen: GenSamples,
}

impl Batch {
    /// Contrastive index sets taken from the distinct users and items of
    /// the triplets.
    pub fn with_triplet_sets(triplets: Vec<Triplet>, gen: GenSamples) -> Self {
        let mut users: Vec<usize> = triplets.iter().map(|t| t.user).collect();
        users.sort_unstable();
        users.dedup();
        let mut items: Vec<usize> = triplets.iter().flat_map(|t| [t.pos, t.neg]).collect();
        items.sort_unstable();
        items.dedup();
        Self {
            triplets,
            users,
            items,
            gen,
        }
    }
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub tau: f64,
    pub tau_prime: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma1: 0.1,
            gamma2: 0.1,
            gamma3: 0.1,
            tau: 0.2,
            tau_prime: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub cl_visited: f64,
    pub cl_unvisited: f64,
    pub gen: f64,
    pub total_visited_objective: f64,
    pub total_unvisited_objective: f64,
}

impl LossBreakdown {
    pub fn first_non_finite(&self) -> Option<(&'static str, f64)> {
        [
            ("bpr", self.bpr),
            ("cl_visited", self.cl_visited),
            ("cl_unvisited", self.cl_unvisited),
            ("gen", self.gen),
            ("objective_visited", self.total_visited_objective),
            ("objective_unvisited", self.total_unvisited_objective),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
    }
}

/// Coefficients of a linear combination of the four losses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Terms {
    pub bpr: f64,
    pub cl_visited: f64,
    pub cl_unvisited: f64,
    pub gen: f64,
}

impl Terms {
    pub const BPR: Terms = Terms { bpr: 1.0, cl_visited: 0.0, cl_unvisited: 0.0, gen: 0.0 };
    pub const CL_VISITED: Terms = Terms { bpr: 0.0, cl_visited: 1.0, cl_unvisited: 0.0, gen: 0.0 };
    pub const CL_UNVISITED: Terms = Terms { bpr: 0.0, cl_visited: 0.0, cl_unvisited: 1.0, gen: 0.0 };
    pub const GEN: Terms = Terms { bpr: 0.0, cl_visited: 0.0, cl_unvisited: 0.0, gen: 1.0 };

    /// The composite objective minimized by the given expert.
    pub fn objective(role: Role, w: &LossWeights) -> Terms {
        match role {
            Role::Visited => Terms {
                bpr: 1.0,
                cl_visited: w.gamma1,
                ..Terms::default()
            },
            Role::Unvisited => Terms {
                bpr: 1.0,
                cl_unvisited: w.gamma2,
                gen: w.gamma3,
                ..Terms::default()
            },
        }
    }
}

/// Encodings and batch data shared by every loss of one step.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub visited: &'a EncodedExpert,
    pub unvisited: &'a EncodedExpert,
    pub index: &'a VisitedIndex,
    pub lambdas: Lambdas,
    pub gate: Gate,
    pub batch: &'a Batch,
    pub weights: LossWeights,
    pub norms: NormPolicy,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Batch mean of `-ln sigmoid(s(u, pos) - s(u, neg))`.
pub fn bpr_loss<F: Fn(usize, usize) -> f64>(triplets: &[Triplet], scorer: F) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput("BPR batch".into()));
    }
    let sum: f64 = triplets
        .iter()
        .map(|t| softplus(-(scorer(t.user, t.pos) - scorer(t.user, t.neg))))
        .sum();
    Ok(sum / triplets.len() as f64)
}

struct Normalized {
    unit: Array2<f64>,
    norms: Vec<f64>,
}

fn normalize_rows(table: &Array2<f64>, rows: &[usize], policy: NormPolicy, view: &'static str) -> Result<Normalized> {
    let mut unit = Array2::zeros((rows.len(), table.ncols()));
    let mut norms = Vec::with_capacity(rows.len());
    for (k, &r) in rows.iter().enumerate() {
        let row = table.row(r);
        let n = dot(row, row).sqrt();
        let n = match policy {
            NormPolicy::Strict if n == 0.0 => return Err(Error::ZeroNorm { view, row: r }),
            NormPolicy::Strict => n,
            NormPolicy::Floor => n.max(NORM_FLOOR),
        };
        unit.row_mut(k).assign(&(&row / n));
        norms.push(n);
    }
    Ok(Normalized { unit, norms })
}

/// Chain rule through `x / max(|x|, floor)`.
fn unnormalize_grad(unit: ArrayView1<f64>, norm: f64, raw_norm_above_floor: bool, g: &Array1<f64>) -> Array1<f64> {
    if raw_norm_above_floor {
        let along = dot(unit, g.view());
        (g - &(&unit * along)) / norm
    } else {
        g / norm
    }
}

/// In-batch InfoNCE with cosine similarity:
/// mean over `k` of `-ln( e^{cos(a_k, b_k)/tau} / sum_{k'} e^{cos(a_k, b_k')/tau} )`.
pub fn info_nce(
    anchor: &Array2<f64>,
    positive: &Array2<f64>,
    tau: f64,
    batch: &[usize],
    policy: NormPolicy,
) -> Result<f64> {
    info_nce_impl(anchor, positive, tau, batch, policy, None)
}

type GradSink<'a> = (&'a mut Array2<f64>, &'a mut Array2<f64>, f64);

fn info_nce_impl(
    anchor: &Array2<f64>,
    positive: &Array2<f64>,
    tau: f64,
    batch: &[usize],
    policy: NormPolicy,
    grad: Option<GradSink<'_>>,
) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if anchor.dim() != positive.dim() {
        return Err(Error::Dimension("InfoNCE views differ in shape".into()));
    }
    if let Some(&bad) = batch.iter().find(|&&k| k >= anchor.nrows()) {
        return Err(Error::Index(format!("batch row {bad} outside {} rows", anchor.nrows())));
    }
    let b = batch.len();
    if b == 0 {
        return Ok(0.0);
    }
    let a = normalize_rows(anchor, batch, policy, "anchor")?;
    let p = normalize_rows(positive, batch, policy, "positive")?;
    let logits = a.unit.dot(&p.unit.t()) / tau;

    let mut loss = 0.0;
    let mut probs = Array2::<f64>::zeros((b, b));
    for k in 0..b {
        let row = logits.row(k);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - logits[[k, k]];
        for (kp, &v) in row.iter().enumerate() {
            probs[[k, kp]] = (v - max).exp() / sum;
        }
    }
    loss /= b as f64;

    if let Some((ga, gp, scale)) = grad {
        // dL/dlogit[k][k'] = (p - delta) / B; logits = cos / tau.
        let mut g = probs;
        for k in 0..b {
            g[[k, k]] -= 1.0;
        }
        g *= scale / (b as f64 * tau);
        let d_unit_a = g.dot(&p.unit);
        let d_unit_p = g.t().dot(&a.unit);
        for (k, &r) in batch.iter().enumerate() {
            let da = unnormalize_grad(a.unit.row(k), a.norms[k], a.norms[k] > NORM_FLOOR, &d_unit_a.row(k).to_owned());
            ga.row_mut(r).scaled_add(1.0, &da);
            let dp = unnormalize_grad(p.unit.row(k), p.norms[k], p.norms[k] > NORM_FLOOR, &d_unit_p.row(k).to_owned());
            gp.row_mut(r).scaled_add(1.0, &dp);
        }
    }
    Ok(loss)
}

fn check_role(enc: &EncodedExpert, role: Role) -> Result<()> {
    if enc.role != role {
        return Err(Error::Config(format!("expected the {role:?} expert, got {:?}", enc.role)));
    }
    Ok(())
}

/// Visit-filtering contrastive loss: local view against the `V` view,
/// averaged over the user and item sides.
pub fn cl_visited(enc: &EncodedExpert, tau: f64, users: &[usize], items: &[usize], policy: NormPolicy) -> Result<f64> {
    check_role(enc, Role::Visited)?;
    let u = info_nce(&enc.local.users, &enc.partition.users, tau, users, policy)?;
    let i = info_nce(&enc.local.items, &enc.partition.items, tau, items, policy)?;
    Ok(0.5 * (u + i))
}

/// Novelty-inferring contrastive loss: global view against the `R` view.
pub fn cl_unvisited(enc: &EncodedExpert, tau: f64, users: &[usize], items: &[usize], policy: NormPolicy) -> Result<f64> {
    check_role(enc, Role::Unvisited)?;
    let u = info_nce(&enc.global.users, &enc.partition.users, tau, users, policy)?;
    let i = info_nce(&enc.global.items, &enc.partition.items, tau, items, policy)?;
    Ok(0.5 * (u + i))
}

/// Ordered behavior pairs `(m, n)` with `m` earlier in the funnel than `n`;
/// `n`'s view predicts `m`'s edges.
pub fn funnel_pairs(num_behaviors: usize) -> Vec<(usize, usize)> {
    (0..num_behaviors)
        .flat_map(|m| (m + 1..num_behaviors).map(move |n| (m, n)))
        .collect()
}

/// Splits terms into per-user runs.
fn user_runs(terms: &[GenTerm]) -> impl Iterator<Item = &[GenTerm]> {
    terms.chunk_by(|a, b| a.user == b.user)
}

/// Behavior-generative loss over per-behavior local views.
///
/// For each pair `(m, n)` the BCE terms of every user are averaged, then
/// averaged over the users that have terms, and the pair losses are
/// combined with weight `2 / (|M| (|M| - 1))`.
pub fn generative_loss(views: &[EmbeddingPair], samples: &GenSamples) -> Result<f64> {
    generative_impl(views, samples, None)
}

fn generative_impl(views: &[EmbeddingPair], samples: &GenSamples, mut grad: Option<(&mut [EmbeddingPair], f64)>) -> Result<f64> {
    let m_count = views.len();
    if m_count < 2 {
        return Err(Error::Config(format!("generative loss needs two behaviors, got {m_count}")));
    }
    if samples.per_behavior.len() != m_count {
        return Err(Error::Dimension(format!(
            "{} sample groups for {m_count} behaviors",
            samples.per_behavior.len()
        )));
    }
    let coef = 2.0 / (m_count as f64 * (m_count as f64 - 1.0));
    let mut total = 0.0;
    for (m, n) in funnel_pairs(m_count) {
        let view = &views[n];
        let terms = &samples.per_behavior[m];
        let users = user_runs(terms).count();
        if users == 0 {
            continue;
        }
        let mut pair_loss = 0.0;
        for run in user_runs(terms) {
            let per_term = 1.0 / run.len() as f64;
            let mut user_loss = 0.0;
            for t in run {
                let s = dot(view.users.row(t.user), view.items.row(t.item));
                let (bce, dbce) = if t.positive {
                    (softplus(-s), sigmoid(s) - 1.0)
                } else {
                    (softplus(s), sigmoid(s))
                };
                user_loss += bce;
                if let Some((grads, scale)) = grad.as_mut() {
                    let c = *scale * coef * dbce * per_term / users as f64;
                    let g = &mut grads[n];
                    g.users.row_mut(t.user).scaled_add(c, &view.items.row(t.item));
                    g.items.row_mut(t.item).scaled_add(c, &view.users.row(t.user));
                }
            }
            pair_loss += user_loss * per_term;
        }
        total += coef * pair_loss / users as f64;
    }
    Ok(total)
}

/// Loss gradient with respect to every view of one expert.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrads {
    pub global: EmbeddingPair,
    pub local: EmbeddingPair,
    pub per_behavior: Vec<EmbeddingPair>,
    pub partition: EmbeddingPair,
}

impl ViewGrads {
    pub fn zeros_like(enc: &EncodedExpert) -> Self {
        let z = EmbeddingPair::zeros(enc.global.num_users(), enc.global.num_items(), enc.global.dim());
        Self {
            global: z.clone(),
            local: z.clone(),
            per_behavior: vec![z.clone(); enc.per_behavior.len()],
            partition: z,
        }
    }
}

/// Gradient with respect to one expert's four initial tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertGrads {
    pub global: EmbeddingPair,
    pub local: EmbeddingPair,
}

impl ExpertGrads {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        let z = EmbeddingPair::zeros(num_users, num_items, dim);
        Self { global: z.clone(), local: z }
    }

    pub fn is_zero(&self) -> bool {
        self.global.is_zero() && self.local.is_zero()
    }

    pub fn tables(&self) -> [&Array2<f64>; 4] {
        [&self.global.users, &self.global.items, &self.local.users, &self.local.items]
    }

    pub fn add(&mut self, other: &ExpertGrads) {
        self.global.scaled_add(1.0, &other.global);
        self.local.scaled_add(1.0, &other.local);
    }
}

/// Per-expert gradient slots, zeroed between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct GradAccumulator {
    pub visited: ExpertGrads,
    pub unvisited: ExpertGrads,
}

impl GradAccumulator {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Self {
            visited: ExpertGrads::zeros(num_users, num_items, dim),
            unvisited: ExpertGrads::zeros(num_users, num_items, dim),
        }
    }

    pub fn slot(&self, role: Role) -> &ExpertGrads {
        match role {
            Role::Visited => &self.visited,
            Role::Unvisited => &self.unvisited,
        }
    }

    pub fn slot_mut(&mut self, role: Role) -> &mut ExpertGrads {
        match role {
            Role::Visited => &mut self.visited,
            Role::Unvisited => &mut self.unvisited,
        }
    }

    pub fn clear(&mut self) {
        for slot in [&mut self.visited, &mut self.unvisited] {
            slot.global.scale(0.0);
            slot.local.scale(0.0);
        }
    }
}

impl<'a> ObjectiveInputs<'a> {
    fn expert(&self, role: Role) -> (&'a EncodedExpert, f64) {
        match role {
            Role::Visited => (self.visited, self.lambdas.visited),
            Role::Unvisited => (self.unvisited, self.lambdas.unvisited),
        }
    }

    /// Final model score of a pair under the configured gate.
    pub fn model_score(&self, u: usize, i: usize) -> f64 {
        match self.gate {
            Gate::Hard => expert::gated_score(self.visited, self.unvisited, self.lambdas, self.index, u, i),
            Gate::Average => {
                0.5 * (self.visited.score_unchecked(self.lambdas.visited, u, i)
                    + self.unvisited.score_unchecked(self.lambdas.unvisited, u, i))
            }
        }
    }

    /// Share of the model score of `(u, i)` contributed by `role`'s expert.
    fn gate_weight(&self, role: Role, u: usize, i: usize) -> f64 {
        match self.gate {
            Gate::Hard => {
                if self.index.is_visited(u, i) == (role == Role::Visited) {
                    1.0
                } else {
                    0.0
                }
            }
            Gate::Average => 0.5,
        }
    }

    pub fn bpr(&self) -> Result<f64> {
        bpr_loss(&self.batch.triplets, |u, i| self.model_score(u, i))
    }

    pub fn cl_visited(&self) -> Result<f64> {
        cl_visited(self.visited, self.weights.tau, &self.batch.users, &self.batch.items, self.norms)
    }

    pub fn cl_unvisited(&self) -> Result<f64> {
        cl_unvisited(self.unvisited, self.weights.tau_prime, &self.batch.users, &self.batch.items, self.norms)
    }

    pub fn generative(&self) -> Result<f64> {
        generative_loss(&self.unvisited.per_behavior, &self.batch.gen)
    }

    /// Every loss and both composites.
    pub fn breakdown(&self) -> Result<LossBreakdown> {
        let bpr = self.bpr()?;
        let cl_visited = self.cl_visited()?;
        let cl_unvisited = self.cl_unvisited()?;
        let gen = self.generative()?;
        let w = &self.weights;
        Ok(LossBreakdown {
            bpr,
            cl_visited,
            cl_unvisited,
            gen,
            total_visited_objective: bpr + w.gamma1 * cl_visited,
            total_unvisited_objective: bpr + w.gamma2 * cl_unvisited + w.gamma3 * gen,
        })
    }

    /// Value of a linear combination of losses; zero-weight terms are not
    /// evaluated.
    pub fn value(&self, terms: &Terms) -> Result<f64> {
        let mut v = 0.0;
        if terms.bpr != 0.0 {
            v += terms.bpr * self.bpr()?;
        }
        if terms.cl_visited != 0.0 {
            v += terms.cl_visited * self.cl_visited()?;
        }
        if terms.cl_unvisited != 0.0 {
            v += terms.cl_unvisited * self.cl_unvisited()?;
        }
        if terms.gen != 0.0 {
            v += terms.gen * self.generative()?;
        }
        Ok(v)
    }

    /// Gradient of `terms` with respect to the views of `role`'s expert.
    pub fn view_gradients(&self, terms: &Terms, role: Role) -> Result<ViewGrads> {
        let (enc, lambda) = self.expert(role);
        let mut g = ViewGrads::zeros_like(enc);

        if terms.bpr != 0.0 {
            let triplets = &self.batch.triplets;
            if triplets.is_empty() {
                return Err(Error::EmptyInput("BPR batch".into()));
            }
            let scale = terms.bpr / triplets.len() as f64;
            for t in triplets {
                let x = self.model_score(t.user, t.pos) - self.model_score(t.user, t.neg);
                // d/dx of softplus(-x)
                let dx = -sigmoid(-x) * scale;
                for (item, sign) in [(t.pos, 1.0), (t.neg, -1.0)] {
                    let w = self.gate_weight(role, t.user, item);
                    if w != 0.0 {
                        add_score_grad(enc, lambda, t.user, item, sign * dx * w, &mut g);
                    }
                }
            }
        }

        match role {
            Role::Visited if terms.cl_visited != 0.0 => {
                let (w, b) = (self.weights.tau, self.batch);
                info_nce_impl(
                    &enc.local.users,
                    &enc.partition.users,
                    w,
                    &b.users,
                    self.norms,
                    Some((&mut g.local.users, &mut g.partition.users, 0.5 * terms.cl_visited)),
                )?;
                info_nce_impl(
                    &enc.local.items,
                    &enc.partition.items,
                    w,
                    &b.items,
                    self.norms,
                    Some((&mut g.local.items, &mut g.partition.items, 0.5 * terms.cl_visited)),
                )?;
            }
            Role::Unvisited => {
                if terms.cl_unvisited != 0.0 {
                    let (w, b) = (self.weights.tau_prime, self.batch);
                    info_nce_impl(
                        &enc.global.users,
                        &enc.partition.users,
                        w,
                        &b.users,
                        self.norms,
                        Some((&mut g.global.users, &mut g.partition.users, 0.5 * terms.cl_unvisited)),
                    )?;
                    info_nce_impl(
                        &enc.global.items,
                        &enc.partition.items,
                        w,
                        &b.items,
                        self.norms,
                        Some((&mut g.global.items, &mut g.partition.items, 0.5 * terms.cl_unvisited)),
                    )?;
                }
                if terms.gen != 0.0 {
                    generative_impl(&enc.per_behavior, &self.batch.gen, Some((&mut g.per_behavior, terms.gen)))?;
                }
            }
            Role::Visited => {}
        }
        Ok(g)
    }

    /// Gradient of `terms` with respect to `role`'s initial tables.
    pub fn gradients(&self, plans: &PlanSet, terms: &Terms, role: Role) -> Result<ExpertGrads> {
        let g = self.view_gradients(terms, role)?;
        backprop(&g, plans, role)
    }
}

fn add_score_grad(enc: &EncodedExpert, lambda: f64, u: usize, i: usize, c: f64, g: &mut ViewGrads) {
    let gl = c * lambda;
    let lo = c * (1.0 - lambda);
    g.global.users.row_mut(u).scaled_add(gl, &enc.global.items.row(i));
    g.global.items.row_mut(i).scaled_add(gl, &enc.global.users.row(u));
    g.local.users.row_mut(u).scaled_add(lo, &enc.local.items.row(i));
    g.local.items.row_mut(i).scaled_add(lo, &enc.local.users.row(u));
}

/// Transports view gradients back to the initial tables.
pub fn backprop(g: &ViewGrads, plans: &PlanSet, role: Role) -> Result<ExpertGrads> {
    let mut global = plans.get(GLOBAL)?.transport_gradient(&g.global)?;
    let share = 1.0 / g.per_behavior.len() as f64;
    let mut local = EmbeddingPair::zeros(g.local.num_users(), g.local.num_items(), g.local.dim());
    for (name, own) in plans.behaviors().iter().zip(&g.per_behavior) {
        let mut out = own.clone();
        out.scaled_add(share, &g.local);
        local.scaled_add(1.0, &plans.get(name)?.transport_gradient(&out)?);
    }
    let partition = plans.get(role.partition_label())?.transport_gradient(&g.partition)?;
    match role {
        Role::Visited => local.scaled_add(1.0, &partition),
        Role::Unvisited => global.scaled_add(1.0, &partition),
    }
    Ok(ExpertGrads { global, local })
}

/// Adds the gradient of `role`'s composite objective into its slot of
/// `acc`; the other slot is not touched.
pub fn accumulate_gradients(
    inputs: &ObjectiveInputs<'_>,
    plans: &PlanSet,
    which: Role,
    acc: &mut GradAccumulator,
    current_version: u64,
) -> Result<()> {
    for enc in [inputs.visited, inputs.unvisited] {
        if enc.version != current_version {
            return Err(Error::StaleSnapshot {
                encoded: enc.version,
                current: current_version,
            });
        }
    }
    let terms = Terms::objective(which, &inputs.weights);
    let grads = inputs.gradients(plans, &terms, which)?;
    acc.slot_mut(which).add(&grads);
    Ok(())
}
