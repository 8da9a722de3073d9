//! Central finite-difference check of every loss gradient.
//!
//! Each component is differentiated with respect to all four tables of both
//! experts, so a gradient leaking into the wrong expert fails as well.

use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::expert::{self, EncodedExpert, Gate, Lambdas, Role};
use crate::objectives::{Batch, LossWeights, NormPolicy, ObjectiveInputs, Terms};
use crate::rng::{self, Stream};
use crate::store::{InteractionLog, Record, Schema};
use crate::trainer::{self, ContrastiveMode, ModelState, Precision, TrainConfig, TrainData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Bpr,
    ClVisited,
    ClUnvisited,
    Gen,
    ObjectiveVisited,
    ObjectiveUnvisited,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::Bpr,
        Component::ClVisited,
        Component::ClUnvisited,
        Component::Gen,
        Component::ObjectiveVisited,
        Component::ObjectiveUnvisited,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Bpr => "bpr",
            Component::ClVisited => "cl_visited",
            Component::ClUnvisited => "cl_unvisited",
            Component::Gen => "gen",
            Component::ObjectiveVisited => "objective_visited",
            Component::ObjectiveUnvisited => "objective_unvisited",
        }
    }

    pub fn terms(self, w: &LossWeights) -> Terms {
        match self {
            Component::Bpr => Terms::BPR,
            Component::ClVisited => Terms::CL_VISITED,
            Component::ClUnvisited => Terms::CL_UNVISITED,
            Component::Gen => Terms::GEN,
            Component::ObjectiveVisited => Terms::objective(Role::Visited, w),
            Component::ObjectiveUnvisited => Terms::objective(Role::Unvisited, w),
        }
    }

    /// Expert whose parameters the component's gradient is taken for.
    /// The composites only update their own expert.
    pub fn roles(self) -> &'static [Role] {
        match self {
            Component::ObjectiveVisited => &[Role::Visited],
            Component::ObjectiveUnvisited => &[Role::Unvisited],
            _ => &[Role::Visited, Role::Unvisited],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub layers: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Test hook: negates the analytic BPR gradient of the visited expert.
    pub sabotage: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            num_users: 8,
            num_items: 12,
            dim: 4,
            layers: 2,
            seed: 0,
            precision: Precision::Double,
            sabotage: false,
        }
    }
}

impl GradcheckConfig {
    pub fn tolerance(&self) -> f64 {
        match self.precision {
            Precision::Double => 1e-4,
            Precision::Single => 1e-2,
        }
    }

    fn step(&self) -> f64 {
        match self.precision {
            Precision::Double => 1e-5,
            // coarser step for f32-rounded parameters
            Precision::Single => 1.0 / 1024.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub component: Component,
    pub role: &'static str,
    pub entries: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(
                f,
                "{} {:<20} {:<9} max_rel_err={:.3e} entries={} (tol {:.0e})",
                if r.passed { "PASS" } else { "FAIL" },
                r.component.name(),
                r.role,
                r.max_rel_err,
                r.entries,
                self.tolerance
            )?;
        }
        Ok(())
    }
}

/// `|a - f| / max(1e-8, |a| + |f|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Random click/cart/buy log with some buys lacking any precursor.
pub fn random_log(num_users: usize, num_items: usize, seed: u64) -> Result<InteractionLog> {
    let mut r = rng::stream(seed, Stream::Synthetic);
    let mut records = Vec::new();
    for user in 0..num_users {
        for item in 0..num_items {
            let clicked = r.gen_bool(0.35);
            if clicked {
                records.push(Record { user, item, behavior: 0, timestamp: None });
                if r.gen_bool(0.4) {
                    records.push(Record { user, item, behavior: 1, timestamp: None });
                }
            }
            let p_buy = if clicked { 0.4 } else { 0.1 };
            if r.gen_bool(p_buy) {
                records.push(Record { user, item, behavior: 2, timestamp: None });
            }
        }
    }
    InteractionLog::new(num_users, num_items, Schema::three_stage().behaviors, records)
}

fn inputs<'a>(
    visited: &'a EncodedExpert,
    unvisited: &'a EncodedExpert,
    data: &'a TrainData,
    lambdas: Lambdas,
    batch: &'a Batch,
    weights: LossWeights,
) -> ObjectiveInputs<'a> {
    ObjectiveInputs {
        visited,
        unvisited,
        index: &data.index,
        lambdas,
        gate: Gate::Hard,
        batch,
        weights,
        norms: NormPolicy::Strict,
    }
}

/// Runs the check on one random instance.
pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let log = random_log(cfg.num_users, cfg.num_items, cfg.seed)?;
    let train = TrainConfig {
        dim: cfg.dim,
        layers: cfg.layers,
        seed: cfg.seed,
        precision: cfg.precision,
        ..TrainConfig::default()
    };
    let weights = LossWeights {
        gamma1: 0.7,
        gamma2: 0.6,
        gamma3: 0.8,
        tau: 0.5,
        tau_prime: 0.4,
    };
    let data = TrainData::new(&log, cfg.layers)?;
    let mut state = ModelState::init(data.num_users, data.num_items, &train)?;
    let triplets = trainer::sample_bpr_batch(&data.buy_edges, &data.buys_by_user, data.num_items, 16, &mut state.sampler_rng)?;
    let terms = trainer::sample_gen_epoch(&data, 1, &mut state.gen_rng);
    let batch = trainer::make_batch(triplets, &terms, &data, ContrastiveMode::Batch);
    let (venc, uenc) = state.encode(&data.plans)?;

    let lambdas = train.lambdas();
    let h = cfg.step();
    let mut results = Vec::new();

    for component in Component::ALL {
        let t = component.terms(&weights);
        for &role in component.roles() {
            let mut analytic = inputs(&venc, &uenc, &data, lambdas, &batch, weights).gradients(&data.plans, &t, role)?;
            if cfg.sabotage && component == Component::Bpr && role == Role::Visited {
                analytic.global.scale(-1.0);
                analytic.local.scale(-1.0);
            }
            let mut params = state.expert(role).clone();
            let mut max_err: f64 = 0.0;
            let mut entries = 0;
            for (k, grad) in analytic.tables().into_iter().enumerate() {
                for (idx, &a) in grad.indexed_iter() {
                    let mut eval = |delta: f64| -> Result<f64> {
                        let original = params.tables()[k][idx];
                        params.tables_mut()[k][idx] = original + delta;
                        let enc = expert::encode(&params, &data.plans, 0);
                        params.tables_mut()[k][idx] = original;
                        let enc = enc?;
                        match role {
                            Role::Visited => inputs(&enc, &uenc, &data, lambdas, &batch, weights).value(&t),
                            Role::Unvisited => inputs(&venc, &enc, &data, lambdas, &batch, weights).value(&t),
                        }
                    };
                    let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
                    max_err = max_err.max(relative_error(a, numeric));
                    entries += 1;
                }
            }
            results.push(CheckResult {
                component,
                role: match role {
                    Role::Visited => "visited",
                    Role::Unvisited => "unvisited",
                },
                entries,
                max_rel_err: max_err,
                passed: max_err <= cfg.tolerance(),
            });
        }
    }
    Ok(GradcheckReport {
        seed: cfg.seed,
        tolerance: cfg.tolerance(),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn default_seed_passes() {
        let report = run(&GradcheckConfig::default()).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.results.len(), 10);
    }

    #[test]
    fn single_precision_passes_relaxed() {
        for seed in 0..5 {
            let report = run(&GradcheckConfig {
                seed,
                precision: Precision::Single,
                ..Default::default()
            })
            .unwrap();
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn sabotage_fails() {
        let report = run(&GradcheckConfig {
            sabotage: true,
            ..Default::default()
        })
        .unwrap();
        assert!(!report.passed());
    }
}
