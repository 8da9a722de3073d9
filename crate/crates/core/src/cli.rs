//! Command-line front end: `prep`, `train`, `eval`, `analyze`, `gradcheck`
//! and `synth`.
//!
//! Every command writes into `--out` under fixed file names. Errors map to
//! exit codes through [`Error::exit_code`]; a failed gradient check exits
//! with 1.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::baselines::{self, BaselineModel};
use crate::checkpoint::Checkpoint;
use crate::config::{self, ModelKind, RunConfig};
use crate::error::{Error, Result};
use crate::evaluator::{self, EvalReport, Scorer};
use crate::expert::{self, Gate, GatedModel};
use crate::gradcheck::{self, GradcheckConfig};
use crate::store::{self, ItemKind, Split};
use crate::synthetic::{self, SyntheticConfig};
use crate::trainer::{self, TrainData};

pub const STATS: &str = "stats.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const CHECKPOINT: &str = "checkpoint.mbrx";
pub const CHECKPOINT_LAST: &str = "checkpoint_last.mbrx";
pub const EVAL: &str = "eval.jsonl";
pub const EVAL_TABLE: &str = "eval.txt";
pub const GAP: &str = "gap.json";
pub const RESOLVED_CONFIG: &str = "config.txt";
pub const TRAIN_TSV: &str = "train.tsv";
pub const SPLIT_TSV: &str = "split.tsv";
pub const USER_MAP: &str = "user_map.tsv";
pub const ITEM_MAP: &str = "item_map.tsv";
pub const SYNTH_TSV: &str = "interactions.tsv";

#[derive(Debug, Parser)]
#[command(name = "mbrec", version, about = "Two-expert multi-behavior recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// member, mf_bpr, lgcn_buy, lgcn_global or member_avg_gate.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Comma-separated protocols: standard, visited, unvisited.
    #[arg(long, global = true)]
    pub protocol: Option<String>,
    /// Comma-separated cutoffs.
    #[arg(long, global = true)]
    pub k: Option<String>,
    /// Prepared dataset directory.
    #[arg(long, global = true)]
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load raw interactions, split, and write a dataset bundle.
    Prep {
        /// Raw `user<TAB>item<TAB>behavior[<TAB>timestamp]` file.
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Train the configured model on a bundle.
    Train,
    /// Evaluate a checkpoint on a bundle's test pairs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Model name written into the report; defaults to the kind.
        #[arg(long)]
        name: Option<String>,
        /// Debug hook: score every test item as +inf.
        #[arg(long)]
        debug_oracle: bool,
    },
    /// Summarize visited/unvisited gaps across eval reports.
    Analyze { reports: Vec<PathBuf> },
    /// Finite-difference check of all loss gradients.
    Gradcheck {
        /// Number of consecutive seeds starting at the configured seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Test hook: flips the sign of one analytic gradient.
        #[arg(long)]
        sabotage: bool,
    },
    /// Write a planted-cluster raw interaction file.
    Synth {
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 0.3)]
        unvisited_share: f64,
    },
}

impl Cli {
    /// The configuration file with command-line overrides applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        self.resolve_from(self.config.as_deref())
    }

    fn resolve_from(&self, config: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(m) = &self.model {
            cfg.set_model(ModelKind::parse(m)?);
        }
        if let Some(p) = &self.protocol {
            cfg.protocols = config::parse_protocols(p)?;
        }
        if let Some(k) = &self.k {
            cfg.ks = config::parse_ks(k)?;
        }
        if let Some(b) = &self.bundle {
            cfg.bundle = Some(b.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn bundle_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.bundle
        .as_deref()
        .ok_or_else(|| Error::Config("no bundle: pass --bundle or set `bundle`".into()))
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Config(format!("{what} `{}` does not exist", path.display())));
    }
    Ok(())
}

fn write_with<F: FnOnce(&mut BufWriter<File>) -> Result<()>>(path: &Path, f: F) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn load_split(bundle: &Path) -> Result<Split> {
    let train = store::InteractionLog::read_indexed_tsv(&bundle.join(TRAIN_TSV))?;
    Split::read_tsv(&bundle.join(SPLIT_TSV), train)
}

#[derive(Debug, Serialize)]
struct BehaviorStats {
    behavior: String,
    raw: usize,
    dedup: usize,
    train: usize,
}

#[derive(Debug, Serialize)]
struct Stats {
    users: usize,
    items: usize,
    behaviors: Vec<BehaviorStats>,
    test_pairs: usize,
    test_visited: usize,
    test_unvisited: usize,
    validation_pairs: usize,
    sparse_users: usize,
    visited_partition_edges: usize,
    remaining_partition_edges: usize,
}

fn cmd_prep(cfg: &RunConfig, raw: Option<PathBuf>) -> Result<()> {
    let raw = raw
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::Config("no raw data: pass --raw or set `data`".into()))?;
    existing(&raw, "raw data")?;
    let out = out_dir(cfg)?;
    let loaded = store::load_interactions(&raw, &cfg.schema)?;
    let split = store::split_leave_one_out(&loaded.log, cfg.train.seed, cfg.valid)?;
    let (v, r) = store::derive_ssl_partitions(&split.train)?;
    let behaviors = loaded
        .log
        .behaviors()
        .iter()
        .enumerate()
        .map(|(b, name)| BehaviorStats {
            behavior: name.clone(),
            raw: loaded.raw_counts[b],
            dedup: loaded.dedup_counts[b],
            train: split.train.count(b),
        })
        .collect();
    let count = |k: ItemKind| split.test.iter().filter(|h| h.kind == k).count();
    let stats = Stats {
        users: loaded.log.num_users(),
        items: loaded.log.num_items(),
        behaviors,
        test_pairs: split.test.len(),
        test_visited: count(ItemKind::Visited),
        test_unvisited: count(ItemKind::Unvisited),
        validation_pairs: split.validation.len(),
        sparse_users: split.sparse_users.len(),
        visited_partition_edges: v.len(),
        remaining_partition_edges: r.len(),
    };
    write_with(&out.join(TRAIN_TSV), |w| split.train.write_tsv(w))?;
    write_with(&out.join(SPLIT_TSV), |w| split.write_tsv(w))?;
    write_with(&out.join(USER_MAP), |w| loaded.users.write_tsv(w))?;
    write_with(&out.join(ITEM_MAP), |w| loaded.items.write_tsv(w))?;
    write_json(&out.join(STATS), &stats)?;
    println!(
        "{} users, {} items, {} test pairs ({} visited, {} unvisited) -> {}",
        stats.users,
        stats.items,
        stats.test_pairs,
        stats.test_visited,
        stats.test_unvisited,
        out.display()
    );
    Ok(())
}

fn write_log<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_with(path, |w| {
        for row in rows {
            serde_json::to_writer(&mut *w, row)?;
            writeln!(w)?;
        }
        Ok(())
    })
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let bundle = bundle_dir(cfg)?;
    existing(bundle, "bundle")?;
    let split = load_split(bundle)?;
    let out = out_dir(cfg)?;
    let t = cfg.effective_train();
    let (best, last, log, best_epoch) = if cfg.model.is_member() {
        let fit = trainer::fit(&split, &t)?;
        let ck = |s: &trainer::ModelState| Checkpoint::from_member(cfg.model, t.layers, &s.visited, &s.unvisited);
        (ck(&fit.best)?, ck(&fit.last)?, fit.log, fit.best_epoch)
    } else {
        let kind = match cfg.model {
            ModelKind::MfBpr => baselines::BaselineKind::MfBpr,
            ModelKind::LgcnBuy => baselines::BaselineKind::LgcnBuy,
            _ => baselines::BaselineKind::LgcnGlobal,
        };
        let fit = baselines::baseline_fit(kind, &split, &t)?;
        (
            Checkpoint::from_baseline(&fit.best),
            Checkpoint::from_baseline(&fit.last),
            fit.log,
            fit.best_epoch,
        )
    };
    write_log(&out.join(TRAIN_LOG), &log)?;
    best.save(&out.join(CHECKPOINT))?;
    last.save(&out.join(CHECKPOINT_LAST))?;
    fs::write(out.join(RESOLVED_CONFIG), cfg.to_text())?;
    println!(
        "{}: {} epochs, best epoch {best_epoch} -> {}",
        cfg.model.name(),
        log.len(),
        out.display()
    );
    Ok(())
}

/// Scores each user's test item as +inf on top of another scorer.
struct Oracle<S> {
    inner: S,
    target: Vec<Option<usize>>,
}

impl<S: Scorer> Oracle<S> {
    fn lift(&self, u: usize, mut scores: Vec<f64>) -> Vec<f64> {
        if let Some(i) = self.target[u] {
            scores[i] = f64::INFINITY;
        }
        scores
    }
}

impl<S: Scorer> Scorer for Oracle<S> {
    fn num_items(&self) -> usize {
        self.inner.num_items()
    }

    fn scores(&self, u: usize) -> Vec<f64> {
        self.lift(u, self.inner.scores(u))
    }

    fn typed_scores(&self, u: usize, kind: ItemKind) -> Vec<f64> {
        self.lift(u, self.inner.typed_scores(u, kind))
    }
}

fn evaluate_with(
    name: &str,
    scorer: &dyn Scorer,
    split: &Split,
    data: &TrainData,
    cfg: &RunConfig,
    oracle: bool,
) -> Result<EvalReport> {
    if oracle {
        let mut target = vec![None; data.num_users];
        for h in &split.test {
            target[h.user] = Some(h.item);
        }
        let o = Oracle { inner: scorer, target };
        evaluator::evaluate(name, &o, &split.test, data.eval_context(), &cfg.protocols, &cfg.ks)
    } else {
        evaluator::evaluate(name, scorer, &split.test, data.eval_context(), &cfg.protocols, &cfg.ks)
    }
}

/// Lambdas come from `--config` when given, otherwise from the
/// configuration saved next to the checkpoint.
fn eval_config(cli: &Cli, checkpoint: &Path) -> Result<RunConfig> {
    let saved = checkpoint.with_file_name(RESOLVED_CONFIG);
    match &cli.config {
        Some(p) => cli.resolve_from(Some(p)),
        None if saved.exists() => cli.resolve_from(Some(&saved)),
        None => cli.resolve_from(None),
    }
}

pub fn eval_checkpoint(ck: &Checkpoint, name: &str, split: &Split, cfg: &RunConfig, oracle: bool) -> Result<EvalReport> {
    let data = TrainData::new(&split.train, ck.layers)?;
    if ck.num_users != data.num_users || ck.num_items != data.num_items {
        return Err(Error::Checkpoint(format!(
            "checkpoint is {}x{}, bundle is {}x{}",
            ck.num_users, ck.num_items, data.num_users, data.num_items
        )));
    }
    if ck.kind.is_member() {
        let (v, u) = ck.to_member(cfg.train.lambdas())?;
        let venc = expert::encode(&v, &data.plans, 0)?;
        let uenc = expert::encode(&u, &data.plans, 0)?;
        let model = GatedModel {
            visited: &venc,
            unvisited: &uenc,
            lambdas: cfg.train.lambdas(),
            index: &data.index,
            gate: if ck.kind == ModelKind::MemberAvgGate {
                Gate::Average
            } else {
                Gate::Hard
            },
        };
        evaluate_with(name, &model, split, &data, cfg, oracle)
    } else {
        let params = ck.to_baseline()?;
        let plan = baselines::baseline_plan(params.kind, &split.train, params.layers)?;
        let model = BaselineModel::new(params, plan.as_ref())?;
        evaluate_with(name, &model, split, &data, cfg, oracle)
    }
}

fn cmd_eval(cli: &Cli, checkpoint: &Path, name: Option<&str>, oracle: bool) -> Result<()> {
    existing(checkpoint, "checkpoint")?;
    let cfg = eval_config(cli, checkpoint)?;
    let bundle = bundle_dir(&cfg)?;
    existing(bundle, "bundle")?;
    let split = load_split(bundle)?;
    let ck = Checkpoint::load(checkpoint)?;
    let name = name.unwrap_or(ck.kind.name());
    let report = eval_checkpoint(&ck, name, &split, &cfg, oracle)?;
    let out = out_dir(&cfg)?;
    write_with(&out.join(EVAL), |w| report.write_jsonl(w))?;
    let table = report.to_table();
    fs::write(out.join(EVAL_TABLE), &table)?;
    print!("{table}");
    for (p, n) in &report.skipped {
        println!("{}: {n} pair(s) skipped (empty candidate pool)", p.name());
    }
    Ok(())
}

fn cmd_analyze(cfg: &RunConfig, reports: &[PathBuf]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Config("analyze needs at least one report".into()));
    }
    let mut loaded = Vec::new();
    for p in reports {
        existing(p, "report")?;
        loaded.push(EvalReport::read_jsonl(&fs::read_to_string(p)?)?);
    }
    let k = cfg.ks[0];
    let summary = evaluator::gap_analysis(&loaded, k);
    let out = out_dir(cfg)?;
    write_json(&out.join(GAP), &summary)?;
    for g in &summary.models {
        let ratio = g.ratio.map_or_else(|| "-".to_string(), |r| format!("{r:.2}"));
        println!(
            "{:<16} visited HR@{k} {:.4}  unvisited HR@{k} {:.4}  ratio {ratio}",
            g.model, g.visited_hr, g.unvisited_hr
        );
    }
    println!("divergence: {}", summary.divergence);
    for n in &summary.notes {
        println!("note: {n}");
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, seeds: u64, sabotage: bool) -> Result<bool> {
    let mut ok = true;
    for seed in cfg.train.seed..cfg.train.seed + seeds.max(1) {
        let report = gradcheck::run(&GradcheckConfig {
            seed,
            precision: cfg.train.precision,
            sabotage,
            ..Default::default()
        })?;
        println!("seed {seed}");
        print!("{report}");
        ok &= report.passed();
    }
    println!("{}", if ok { "gradcheck passed" } else { "gradcheck FAILED" });
    Ok(ok)
}

fn cmd_synth(cfg: &RunConfig, users: usize, items: usize, unvisited_share: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&unvisited_share) {
        return Err(Error::Config(format!("unvisited_share must lie in [0, 1], got {unvisited_share}")));
    }
    if users == 0 || items == 0 {
        return Err(Error::Config("users and items must be positive".into()));
    }
    let log = synthetic::planted_clusters(&SyntheticConfig {
        num_users: users,
        num_items: items,
        unvisited_buy_share: unvisited_share,
        seed: cfg.train.seed,
        ..Default::default()
    })?;
    let out = out_dir(cfg)?;
    let path = out.join(SYNTH_TSV);
    write_with(&path, |w| {
        for r in log.records() {
            let b = &log.behaviors()[r.behavior];
            match r.timestamp {
                Some(t) => writeln!(w, "u{}\ti{}\t{b}\t{t}", r.user, r.item)?,
                None => writeln!(w, "u{}\ti{}\t{b}", r.user, r.item)?,
            }
        }
        Ok(())
    })?;
    println!("{} records -> {}", log.records().len(), path.display());
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> Result<i32> {
    if let Command::Eval {
        checkpoint,
        name,
        debug_oracle,
    } = &cli.command
    {
        cmd_eval(cli, checkpoint, name.as_deref(), *debug_oracle)?;
        return Ok(0);
    }
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Prep { raw } => cmd_prep(&cfg, raw.clone())?,
        Command::Train => cmd_train(&cfg)?,
        Command::Analyze { reports } => cmd_analyze(&cfg, reports)?,
        Command::Gradcheck { seeds, sabotage } => {
            if !cmd_gradcheck(&cfg, *seeds, *sabotage)? {
                return Ok(1);
            }
        }
        Command::Synth {
            users,
            items,
            unvisited_share,
        } => cmd_synth(&cfg, *users, *items, *unvisited_share)?,
        Command::Eval { .. } => unreachable!("handled above"),
    }
    Ok(0)
}
