//! Interaction store: ingestion, per-behavior graphs, visited/unvisited
//! item sets, contrastive edge partitions and leave-one-out splits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Name of the target behavior.
pub const BUY: &str = "buy";

/// One deduplicated interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub user: usize,
    pub item: usize,
    pub behavior: usize,
    pub timestamp: Option<i64>,
}

/// Declared behavior names in funnel order, e.g. `click < collect < cart < buy`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub behaviors: Vec<String>,
}

impl Schema {
    pub fn new<S: AsRef<str>>(behaviors: &[S]) -> Result<Self> {
        let behaviors: Vec<String> = behaviors.iter().map(|b| b.as_ref().trim().to_string()).collect();
        if behaviors.is_empty() {
            return Err(Error::Schema("no behaviors declared".into()));
        }
        for (k, b) in behaviors.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::Schema("empty behavior name".into()));
            }
            if behaviors[..k].contains(b) {
                return Err(Error::Schema(format!("behavior `{b}` declared twice")));
            }
        }
        if !behaviors.iter().any(|b| b == BUY) {
            return Err(Error::Schema(format!("behavior list must contain `{BUY}`")));
        }
        Ok(Self { behaviors })
    }

    /// Parses a comma separated funnel, `"click,cart,buy"`.
    pub fn parse(list: &str) -> Result<Self> {
        let parts: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        Self::new(&parts)
    }

    /// Tmall and JData funnel.
    pub fn four_stage() -> Self {
        Self::new(&["click", "collect", "cart", BUY]).expect("static schema")
    }

    /// Taobao funnel (no collect).
    pub fn three_stage() -> Self {
        Self::new(&["click", "cart", BUY]).expect("static schema")
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.behaviors.iter().position(|b| b == name)
    }
}

/// Deduplicated interactions over contiguous user/item/behavior id spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionLog {
    num_users: usize,
    num_items: usize,
    behaviors: Vec<String>,
    records: Vec<Record>,
}

impl InteractionLog {
    /// Validates ranges and collapses repeated `(user, item, behavior)`
    /// triples, keeping the first occurrence.
    pub fn new(
        num_users: usize,
        num_items: usize,
        behaviors: Vec<String>,
        records: Vec<Record>,
    ) -> Result<Self> {
        let schema = Schema::new(&behaviors)?;
        let mut seen = std::collections::HashSet::with_capacity(records.len());
        let mut kept = Vec::with_capacity(records.len());
        for r in records {
            if r.user >= num_users || r.item >= num_items || r.behavior >= schema.behaviors.len() {
                return Err(Error::Index(format!(
                    "record ({}, {}, {}) outside universe {}x{}x{}",
                    r.user,
                    r.item,
                    r.behavior,
                    num_users,
                    num_items,
                    schema.behaviors.len()
                )));
            }
            if seen.insert((r.user, r.item, r.behavior)) {
                kept.push(r);
            }
        }
        Ok(Self {
            num_users,
            num_items,
            behaviors: schema.behaviors,
            records: kept,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn behaviors(&self) -> &[String] {
        &self.behaviors
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn behavior_id(&self, name: &str) -> Option<usize> {
        self.behaviors.iter().position(|b| b == name)
    }

    pub fn buy_id(&self) -> usize {
        self.behavior_id(BUY).expect("log invariant: buy declared")
    }

    /// Ids of every behavior except buy, in funnel order.
    pub fn auxiliary_ids(&self) -> Vec<usize> {
        let buy = self.buy_id();
        (0..self.behaviors.len()).filter(|&b| b != buy).collect()
    }

    pub fn count(&self, behavior: usize) -> usize {
        self.records.iter().filter(|r| r.behavior == behavior).count()
    }

    /// The same log with declared-but-absent behaviors removed from the
    /// funnel. `buy` is always kept.
    pub fn present_behaviors_only(&self) -> Result<Self> {
        let buy = self.buy_id();
        let mut present = vec![false; self.behaviors.len()];
        present[buy] = true;
        for r in &self.records {
            present[r.behavior] = true;
        }
        if present.iter().all(|&p| p) {
            return Ok(self.clone());
        }
        let mut remap = vec![usize::MAX; self.behaviors.len()];
        let mut behaviors = Vec::new();
        for (b, name) in self.behaviors.iter().enumerate() {
            if present[b] {
                remap[b] = behaviors.len();
                behaviors.push(name.clone());
            }
        }
        let records = self
            .records
            .iter()
            .map(|r| Record {
                behavior: remap[r.behavior],
                ..*r
            })
            .collect();
        Self::new(self.num_users, self.num_items, behaviors, records)
    }

    /// Writes the log as index-space TSV with header comments that preserve
    /// the universe sizes and funnel declaration.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# behaviors\t{}", self.behaviors.join(","))?;
        writeln!(out, "# universe\t{}\t{}", self.num_users, self.num_items)?;
        for r in &self.records {
            let b = &self.behaviors[r.behavior];
            match r.timestamp {
                Some(t) => writeln!(out, "{}\t{}\t{}\t{}", r.user, r.item, b, t)?,
                None => writeln!(out, "{}\t{}\t{}", r.user, r.item, b)?,
            }
        }
        Ok(())
    }

    /// Reads a log produced by [`InteractionLog::write_tsv`]; ids are taken
    /// as indices rather than remapped.
    pub fn read_indexed_tsv(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut behaviors: Option<Vec<String>> = None;
        let mut universe: Option<(usize, usize)> = None;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let perr = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message,
            };
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.trim().split('\t');
                match parts.next() {
                    Some("behaviors") => {
                        let list = parts.next().ok_or_else(|| perr("missing behavior list".into()))?;
                        behaviors = Some(Schema::parse(list)?.behaviors);
                    }
                    Some("universe") => {
                        let u = parts.next().and_then(|s| s.parse().ok());
                        let i = parts.next().and_then(|s| s.parse().ok());
                        match (u, i) {
                            (Some(u), Some(i)) => universe = Some((u, i)),
                            _ => return Err(perr("bad universe header".into())),
                        }
                    }
                    _ => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let names = behaviors
                .as_ref()
                .ok_or_else(|| perr("records before `# behaviors` header".into()))?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 || fields.len() > 4 {
                return Err(perr(format!("expected 3 or 4 fields, found {}", fields.len())));
            }
            let user = fields[0].parse().map_err(|_| perr(format!("bad user index `{}`", fields[0])))?;
            let item = fields[1].parse().map_err(|_| perr(format!("bad item index `{}`", fields[1])))?;
            let behavior = names
                .iter()
                .position(|b| b == fields[2])
                .ok_or_else(|| Error::UnknownBehavior(fields[2].to_string()))?;
            let timestamp = match fields.get(3) {
                Some(t) => Some(t.parse().map_err(|_| perr(format!("bad timestamp `{t}`")))?),
                None => None,
            };
            records.push(Record {
                user,
                item,
                behavior,
                timestamp,
            });
        }
        let behaviors = behaviors.ok_or_else(|| Error::EmptyInput(path.display().to_string()))?;
        let (num_users, num_items) =
            universe.ok_or_else(|| Error::Schema(format!("{}: missing universe header", path.display())))?;
        Self::new(num_users, num_items, behaviors, records)
    }
}

/// Raw id to contiguous index table, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&k) = self.index.get(raw) {
            return k;
        }
        let k = self.raw.len();
        self.raw.push(raw.to_string());
        self.index.insert(raw.to_string(), k);
        k
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, index: usize) -> Option<&str> {
        self.raw.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// `raw_id<TAB>index` lines.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, raw) in self.raw.iter().enumerate() {
            writeln!(out, "{raw}\t{k}")?;
        }
        Ok(())
    }
}

/// Result of [`load_interactions`]: the log plus mapping tables and both
/// raw and deduplicated per-behavior counts.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub log: InteractionLog,
    pub users: IdMap,
    pub items: IdMap,
    pub raw_counts: Vec<usize>,
    pub dedup_counts: Vec<usize>,
}

/// Reads `user<TAB>item<TAB>behavior[<TAB>timestamp]` lines. Lines starting
/// with `#` are comments; blank lines are skipped.
pub fn load_interactions(path: &Path, schema: &Schema) -> Result<Loaded> {
    let file = File::open(path)?;
    parse_interactions(BufReader::new(file), path, schema)
}

pub fn parse_interactions<R: BufRead>(reader: R, origin: &Path, schema: &Schema) -> Result<Loaded> {
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut raw_counts = vec![0usize; schema.behaviors.len()];
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let perr = |message: String| Error::Parse {
            path: PathBuf::from(origin),
            line: lineno,
            message,
        };
        if fields.len() < 3 || fields.len() > 4 {
            return Err(perr(format!("expected 3 or 4 tab-separated fields, found {}", fields.len())));
        }
        if fields[..3].iter().any(|f| f.is_empty()) {
            return Err(perr("empty field".into()));
        }
        let behavior = schema
            .position(fields[2])
            .ok_or_else(|| Error::UnknownBehavior(format!("{} (line {lineno})", fields[2])))?;
        let timestamp = match fields.get(3) {
            Some(t) if !t.is_empty() => Some(
                t.trim()
                    .parse::<i64>()
                    .map_err(|_| perr(format!("timestamp `{t}` is not an integer")))?,
            ),
            _ => None,
        };
        raw_counts[behavior] += 1;
        records.push(Record {
            user: users.intern(fields[0]),
            item: items.intern(fields[1]),
            behavior,
            timestamp,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(origin.display().to_string()));
    }
    let log = InteractionLog::new(users.len(), items.len(), schema.behaviors.clone(), records)?;
    let dedup_counts = (0..schema.behaviors.len()).map(|b| log.count(b)).collect();
    Ok(Loaded {
        log,
        users,
        items,
        raw_counts,
        dedup_counts,
    })
}

/// A bipartite edge set with degree tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorGraph {
    label: String,
    num_users: usize,
    num_items: usize,
    edges: Vec<(usize, usize)>,
    user_degrees: Vec<usize>,
    item_degrees: Vec<usize>,
}

impl BehaviorGraph {
    /// Builds a graph from any edge iterator; repeated edges collapse.
    pub fn from_edges<I>(label: impl Into<String>, num_users: usize, num_items: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        edges.sort_unstable();
        edges.dedup();
        let mut user_degrees = vec![0; num_users];
        let mut item_degrees = vec![0; num_items];
        for &(u, i) in &edges {
            if u >= num_users || i >= num_items {
                return Err(Error::Index(format!("edge ({u}, {i}) outside {num_users}x{num_items}")));
            }
            user_degrees[u] += 1;
            item_degrees[i] += 1;
        }
        Ok(Self {
            label: label.into(),
            num_users,
            num_items,
            edges,
            user_degrees,
            item_degrees,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Sorted, unique edges.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.edges.binary_search(&(u, i)).is_ok()
    }

    pub fn user_degrees(&self) -> &[usize] {
        &self.user_degrees
    }

    pub fn item_degrees(&self) -> &[usize] {
        &self.item_degrees
    }

    /// Items adjacent to `u`, ascending.
    pub fn items_of(&self, u: usize) -> &[(usize, usize)] {
        let lo = self.edges.partition_point(|&(x, _)| x < u);
        let hi = self.edges.partition_point(|&(x, _)| x <= u);
        &self.edges[lo..hi]
    }
}

pub fn build_behavior_graph(log: &InteractionLog, behavior: &str) -> Result<BehaviorGraph> {
    let b = log
        .behavior_id(behavior)
        .ok_or_else(|| Error::UnknownBehavior(behavior.to_string()))?;
    BehaviorGraph::from_edges(
        behavior,
        log.num_users(),
        log.num_items(),
        log.records().iter().filter(|r| r.behavior == b).map(|r| (r.user, r.item)),
    )
}

/// Union of the given graphs under set semantics, labelled `global`.
pub fn build_global_graph(graphs: &[BehaviorGraph]) -> Result<BehaviorGraph> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::EmptyInput("no graphs to combine".into()))?;
    for g in graphs {
        if g.num_users != first.num_users || g.num_items != first.num_items {
            return Err(Error::Dimension(format!(
                "graph `{}` is {}x{}, expected {}x{}",
                g.label, g.num_users, g.num_items, first.num_users, first.num_items
            )));
        }
    }
    BehaviorGraph::from_edges(
        "global",
        first.num_users,
        first.num_items,
        graphs.iter().flat_map(|g| g.edges.iter().copied()),
    )
}

/// One graph per declared behavior, in funnel order.
pub fn build_all_behavior_graphs(log: &InteractionLog) -> Result<Vec<BehaviorGraph>> {
    log.behaviors().iter().map(|b| build_behavior_graph(log, b)).collect()
}

/// Per-user visited item sets: items reached through any auxiliary behavior.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitedIndex {
    num_items: usize,
    visited: Vec<Vec<usize>>,
}

impl VisitedIndex {
    pub fn num_users(&self) -> usize {
        self.visited.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Sorted visited items of `u`.
    pub fn visited(&self, u: usize) -> &[usize] {
        &self.visited[u]
    }

    pub fn is_visited(&self, u: usize, i: usize) -> bool {
        self.visited[u].binary_search(&i).is_ok()
    }

    pub fn unvisited(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_items).filter(move |&i| !self.is_visited(u, i))
    }

    pub fn visited_count(&self, u: usize) -> usize {
        self.visited[u].len()
    }

    pub fn kind(&self, u: usize, i: usize) -> ItemKind {
        if self.is_visited(u, i) {
            ItemKind::Visited
        } else {
            ItemKind::Unvisited
        }
    }
}

/// Which side of the visited/unvisited partition an item falls on for a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ItemKind {
    Visited,
    Unvisited,
}

impl ItemKind {
    pub fn tag(self) -> &'static str {
        match self {
            ItemKind::Visited => "V",
            ItemKind::Unvisited => "U",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "V" => Some(ItemKind::Visited),
            "U" => Some(ItemKind::Unvisited),
            _ => None,
        }
    }
}

pub fn derive_visited_index(train: &InteractionLog) -> VisitedIndex {
    let buy = train.buy_id();
    let mut visited = vec![Vec::new(); train.num_users()];
    for r in train.records().iter().filter(|r| r.behavior != buy) {
        visited[r.user].push(r.item);
    }
    for v in &mut visited {
        v.sort_unstable();
        v.dedup();
    }
    VisitedIndex {
        num_items: train.num_items(),
        visited,
    }
}

/// `E_V = E_buy ∩ (∪ auxiliary)` and `E_R = E_global \ E_V`.
pub fn derive_ssl_partitions(train: &InteractionLog) -> Result<(BehaviorGraph, BehaviorGraph)> {
    let graphs = build_all_behavior_graphs(train)?;
    let global = build_global_graph(&graphs)?;
    let buy = train.buy_id();
    let aux = build_global_graph(
        &graphs
            .iter()
            .enumerate()
            .filter(|&(b, _)| b != buy)
            .map(|(_, g)| g.clone())
            .collect::<Vec<_>>(),
    )
    .ok();
    let visited_edges: Vec<(usize, usize)> = match &aux {
        Some(aux) => graphs[buy].edges().iter().copied().filter(|&(u, i)| aux.contains(u, i)).collect(),
        None => Vec::new(),
    };
    let v = BehaviorGraph::from_edges("V", train.num_users(), train.num_items(), visited_edges)?;
    let r = BehaviorGraph::from_edges(
        "R",
        train.num_users(),
        train.num_items(),
        global.edges().iter().copied().filter(|&(u, i)| !v.contains(u, i)),
    )?;
    Ok((v, r))
}

/// A held-out purchase and its visited/unvisited label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeldOut {
    pub user: usize,
    pub item: usize,
    pub kind: ItemKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: InteractionLog,
    pub validation: Vec<HeldOut>,
    pub test: Vec<HeldOut>,
    /// Users left with no training buy after holding out.
    pub sparse_users: Vec<usize>,
}

impl Split {
    /// Lines of `user<TAB>item<TAB>role<TAB>label`, test rows first.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (role, rows) in [("test", &self.test), ("valid", &self.validation)] {
            for h in rows.iter() {
                writeln!(out, "{}\t{}\t{}\t{}", h.user, h.item, role, h.kind.tag())?;
            }
        }
        Ok(())
    }

    /// Rebuilds held-out lists from a split file plus the training log.
    pub fn read_tsv(path: &Path, train: InteractionLog) -> Result<Self> {
        let mut test = Vec::new();
        let mut validation = Vec::new();
        let file = File::open(path)?;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |message: &str| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: message.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(perr("expected user, item, role, label"));
            }
            let user: usize = f[0].parse().map_err(|_| perr("bad user index"))?;
            let item: usize = f[1].parse().map_err(|_| perr("bad item index"))?;
            if user >= train.num_users() || item >= train.num_items() {
                return Err(perr("held-out pair outside universe"));
            }
            let kind = ItemKind::from_tag(f[3]).ok_or_else(|| perr("label must be V or U"))?;
            let h = HeldOut { user, item, kind };
            match f[2] {
                "test" => test.push(h),
                "valid" => validation.push(h),
                _ => return Err(perr("role must be test or valid")),
            }
        }
        let sparse_users = sparse_users(&train, test.iter().chain(&validation));
        Ok(Self {
            train,
            validation,
            test,
            sparse_users,
        })
    }
}

fn sparse_users<'a>(train: &InteractionLog, held: impl Iterator<Item = &'a HeldOut>) -> Vec<usize> {
    let buy = train.buy_id();
    let mut has_buy = vec![false; train.num_users()];
    for r in train.records().iter().filter(|r| r.behavior == buy) {
        has_buy[r.user] = true;
    }
    let mut users: Vec<usize> = held.map(|h| h.user).filter(|&u| !has_buy[u]).collect();
    users.sort_unstable();
    users.dedup();
    users
}

/// Holds out each user's latest buy for test (and the second latest for
/// validation when `valid`). Without timestamps the order is a seeded
/// shuffle. Users with a single buy keep it in training.
pub fn split_leave_one_out(log: &InteractionLog, seed: u64, valid: bool) -> Result<Split> {
    let buy = log
        .behavior_id(BUY)
        .ok_or_else(|| Error::Schema(format!("log has no `{BUY}` behavior")))?;
    let mut rng = rng::stream(seed, Stream::Split);
    let mut buys: Vec<Vec<(usize, Option<i64>)>> = vec![Vec::new(); log.num_users()];
    for r in log.records().iter().filter(|r| r.behavior == buy) {
        buys[r.user].push((r.item, r.timestamp));
    }
    let mut held_test = Vec::new();
    let mut held_valid = Vec::new();
    for (u, list) in buys.iter_mut().enumerate() {
        if list.len() < 2 {
            continue;
        }
        list.sort_unstable();
        list.shuffle(&mut rng);
        // Stable: equal timestamps keep the shuffled order.
        list.sort_by_key(|&(_, t)| t);
        held_test.push((u, list[list.len() - 1].0));
        if valid {
            held_valid.push((u, list[list.len() - 2].0));
        }
    }
    let removed: std::collections::HashSet<(usize, usize)> =
        held_test.iter().chain(&held_valid).copied().collect();
    let train_records: Vec<Record> = log
        .records()
        .iter()
        .filter(|r| !(r.behavior == buy && removed.contains(&(r.user, r.item))))
        .copied()
        .collect();
    let train = InteractionLog::new(log.num_users(), log.num_items(), log.behaviors().to_vec(), train_records)?;
    let index = derive_visited_index(&train);
    let label = |(user, item): (usize, usize)| HeldOut {
        user,
        item,
        kind: index.kind(user, item),
    };
    let test: Vec<HeldOut> = held_test.into_iter().map(label).collect();
    let validation: Vec<HeldOut> = held_valid.into_iter().map(label).collect();
    let sparse_users = sparse_users(&train, test.iter().chain(&validation));
    for &u in &sparse_users {
        log::debug!("user {u} has no remaining training buy");
    }
    Ok(Split {
        train,
        validation,
        test,
        sparse_users,
    })
}

/// Per-user training buy items, sorted.
pub fn buys_by_user(train: &InteractionLog) -> Vec<Vec<usize>> {
    items_by_user(train, train.buy_id())
}

pub fn items_by_user(log: &InteractionLog, behavior: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); log.num_users()];
    for r in log.records().iter().filter(|r| r.behavior == behavior) {
        out[r.user].push(r.item);
    }
    for v in &mut out {
        v.sort_unstable();
        v.dedup();
    }
    out
}
