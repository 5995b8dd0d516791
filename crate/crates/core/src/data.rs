//! Rating-file ingestion: parsing, implicit-feedback binarization, user
//! filtering, leave-one-out splitting and negative sampling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TrainingEntry;
use crate::rng::{self, Purpose};

pub const DEFAULT_MIN_INTERACTIONS: usize = 10;
pub const DEFAULT_EVAL_NEGATIVES: usize = 99;
pub const DEFAULT_NEGATIVES_PER_POSITIVE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatingFormat {
    /// `user\titem\trating[\ttimestamp]` (MovieLens 100K `u.data`).
    #[serde(rename = "tab")]
    Tab,
    /// `user::item::rating[::timestamp]` (MovieLens 1M `ratings.dat`).
    #[serde(rename = "double-colon")]
    DoubleColon,
}

impl RatingFormat {
    fn separator(self) -> &'static str {
        match self {
            RatingFormat::Tab => "\t",
            RatingFormat::DoubleColon => "::",
        }
    }

    /// Guesses the format from the first non-blank line.
    pub fn detect(sample: &str) -> RatingFormat {
        match sample.lines().find(|l| !l.trim().is_empty()) {
            Some(line) if line.contains("::") => RatingFormat::DoubleColon,
            _ => RatingFormat::Tab,
        }
    }
}

impl std::str::FromStr for RatingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tab" | "tsv" => Ok(RatingFormat::Tab),
            "double-colon" | "::" | "dat" => Ok(RatingFormat::DoubleColon),
            other => Err(Error::InvalidParam(format!("unknown rating format {other:?}"))),
        }
    }
}

/// Parses one interaction per line. Blank lines are skipped; anything else
/// that does not match the format is an error carrying its 1-based line number.
pub fn parse_ratings(source: impl BufRead, format: RatingFormat) -> Result<Vec<RawInteraction>> {
    let sep = format.separator();
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(line, sep, lineno)?);
    }
    Ok(out)
}

fn parse_line(line: &str, sep: &str, lineno: usize) -> Result<RawInteraction> {
    let err = |message: String| Error::Parse {
        line: lineno,
        message,
    };
    let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(err(format!(
            "expected 3 or 4 fields separated by {sep:?}, found {}",
            fields.len()
        )));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err(err("empty user or item id".into()));
    }
    let rating: f64 = fields[2]
        .parse()
        .map_err(|_| err(format!("bad rating {:?}", fields[2])))?;
    if !(rating >= 0.0) || !rating.is_finite() {
        return Err(err(format!("rating must be finite and >= 0, got {rating}")));
    }
    let timestamp = match fields.get(3) {
        Some(ts) => Some(
            ts.parse::<i64>()
                .or_else(|_| ts.parse::<f64>().map(|f| f as i64))
                .map_err(|_| err(format!("bad timestamp {ts:?}")))?,
        ),
        None => None,
    };
    Ok(RawInteraction {
        user_id: fields[0].to_string(),
        item_id: fields[1].to_string(),
        rating,
        timestamp,
    })
}

pub fn load_ratings(path: &Path, format: Option<RatingFormat>) -> Result<Vec<RawInteraction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let format = match format {
        Some(f) => f,
        None => {
            let head = reader.fill_buf().map_err(|e| Error::io(path, e))?;
            RatingFormat::detect(&String::from_utf8_lossy(head))
        }
    };
    parse_ratings(reader, format)
}

/// Dense index maps for the retained users and items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    #[serde(skip)]
    user_index: HashMap<String, usize>,
    #[serde(skip)]
    item_index: HashMap<String, usize>,
}

impl DatasetMeta {
    pub fn new(user_ids: Vec<String>, item_ids: Vec<String>) -> Self {
        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        let item_index = item_ids
            .iter()
            .enumerate()
            .map(|(j, it)| (it.clone(), j))
            .collect();
        DatasetMeta {
            user_ids,
            item_ids,
            user_index,
            item_index,
        }
    }

    pub fn n(&self) -> usize {
        self.user_ids.len()
    }

    pub fn m(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.user_index.get(user_id).copied()
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.item_index.get(item_id).copied()
    }
}

/// One implicit positive with the ordering keys used by the holdout rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Positive {
    pub item: u32,
    pub timestamp: Option<i64>,
    /// Position of the surviving raw line in the input stream.
    pub order: usize,
}

/// Per-user positives, indexed by dense user index.
pub type UserPositives = Vec<Vec<Positive>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n: usize,
    pub m: usize,
    pub positives: usize,
    pub density: f64,
}

impl DatasetStats {
    pub fn sparsity(&self) -> f64 {
        1.0 - self.density
    }
}

pub fn dataset_stats(meta: &DatasetMeta, positives: &UserPositives) -> DatasetStats {
    let count: usize = positives.iter().map(Vec::len).sum();
    DatasetStats {
        n: meta.n(),
        m: meta.m(),
        positives: count,
        density: count as f64 / (meta.n() as f64 * meta.m() as f64),
    }
}

/// Deduplicates `(user, item)` pairs (latest timestamp wins, ties go to the
/// later line), keeps ratings `> 0` as positives, drops users with fewer than
/// `min_interactions` positives and then items nobody retained touches.
///
/// Users and items are indexed in order of first appearance in the input.
pub fn binarize_and_filter(
    interactions: &[RawInteraction],
    min_interactions: usize,
) -> Result<(DatasetMeta, UserPositives)> {
    if min_interactions == 0 {
        return Err(Error::InvalidParam("min_interactions must be >= 1".into()));
    }

    // (user, item) -> index of the winning raw line
    let mut latest: HashMap<(&str, &str), usize> = HashMap::new();
    for (idx, it) in interactions.iter().enumerate() {
        latest
            .entry((it.user_id.as_str(), it.item_id.as_str()))
            .and_modify(|cur| {
                let prev = &interactions[*cur];
                if it.timestamp.unwrap_or(i64::MIN) >= prev.timestamp.unwrap_or(i64::MIN) {
                    *cur = idx;
                }
            })
            .or_insert(idx);
    }
    let mut winners: Vec<usize> = latest
        .into_values()
        .filter(|&idx| interactions[idx].rating > 0.0)
        .collect();
    winners.sort_unstable();

    let mut per_user: HashMap<&str, usize> = HashMap::new();
    for &idx in &winners {
        *per_user.entry(interactions[idx].user_id.as_str()).or_default() += 1;
    }

    let mut user_ids = Vec::new();
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_ids = Vec::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut positives: UserPositives = Vec::new();

    for &idx in &winners {
        let it = &interactions[idx];
        if per_user[it.user_id.as_str()] < min_interactions {
            continue;
        }
        let u = *user_index.entry(it.user_id.as_str()).or_insert_with(|| {
            user_ids.push(it.user_id.clone());
            positives.push(Vec::new());
            user_ids.len() - 1
        });
        let j = *item_index.entry(it.item_id.as_str()).or_insert_with(|| {
            item_ids.push(it.item_id.clone());
            item_ids.len() - 1
        });
        positives[u].push(Positive {
            item: j as u32,
            timestamp: it.timestamp,
            order: idx,
        });
    }

    if user_ids.is_empty() {
        return Err(Error::EmptyDataset { min_interactions });
    }
    Ok((DatasetMeta::new(user_ids, item_ids), positives))
}

/// Compact membership set over item indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemSet {
    bits: Vec<u64>,
    len: usize,
    universe: usize,
}

impl ItemSet {
    pub fn new(universe: usize) -> Self {
        ItemSet {
            bits: vec![0; universe.div_ceil(64)],
            len: 0,
            universe,
        }
    }

    pub fn insert(&mut self, item: usize) {
        let (w, b) = (item / 64, item % 64);
        if self.bits[w] & (1 << b) == 0 {
            self.bits[w] |= 1 << b;
            self.len += 1;
        }
    }

    pub fn remove(&mut self, item: usize) {
        let (w, b) = (item / 64, item % 64);
        if self.bits[w] & (1 << b) != 0 {
            self.bits[w] &= !(1 << b);
            self.len -= 1;
        }
    }

    #[inline]
    pub fn contains(&self, item: usize) -> bool {
        self.bits[item / 64] & (1 << (item % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    /// Items of the universe not in the set, ascending.
    pub fn complement(&self) -> Vec<u32> {
        (0..self.universe)
            .filter(|&j| !self.contains(j))
            .map(|j| j as u32)
            .collect()
    }
}

/// One client's share of the data after the leave-one-out split.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    /// Ascending item indices.
    pub train_positives: Vec<u32>,
    pub test_positive: u32,
    pub eval_negatives: Vec<u32>,
    pub negatives_per_positive: usize,
    interacted: ItemSet,
}

impl ClientDataset {
    pub fn new(
        client_id: usize,
        m: usize,
        mut train_positives: Vec<u32>,
        test_positive: u32,
        eval_negatives: Vec<u32>,
    ) -> Result<Self> {
        train_positives.sort_unstable();
        train_positives.dedup();
        let mut interacted = ItemSet::new(m);
        for &j in train_positives.iter().chain(std::iter::once(&test_positive)) {
            if j as usize >= m {
                return Err(Error::InvalidParam(format!(
                    "client {client_id}: item {j} out of range (m = {m})"
                )));
            }
            interacted.insert(j as usize);
        }
        if train_positives.binary_search(&test_positive).is_ok() {
            return Err(Error::InvalidParam(format!(
                "client {client_id}: test positive {test_positive} is also a training positive"
            )));
        }
        if let Some(&bad) = eval_negatives
            .iter()
            .find(|&&j| j as usize >= m || interacted.contains(j as usize))
        {
            return Err(Error::InvalidParam(format!(
                "client {client_id}: eval negative {bad} collides with a positive or is out of range"
            )));
        }
        Ok(ClientDataset {
            client_id,
            train_positives,
            test_positive,
            eval_negatives,
            negatives_per_positive: DEFAULT_NEGATIVES_PER_POSITIVE,
            interacted,
        })
    }

    pub fn n_items(&self) -> usize {
        self.interacted.universe()
    }

    /// True for train positives and the held-out positive.
    pub fn has_interacted(&self, item: usize) -> bool {
        self.interacted.contains(item)
    }

    /// Number of items this client may draw as a training negative.
    pub fn negative_candidates(&self) -> usize {
        self.interacted.universe() - self.interacted.len()
    }

    /// The ranking candidates: held-out positive first, then the eval negatives.
    pub fn ranking_candidates(&self) -> Vec<u32> {
        std::iter::once(self.test_positive)
            .chain(self.eval_negatives.iter().copied())
            .collect()
    }
}

/// Holds out each user's most recent positive and draws the evaluation
/// negatives from a per-user stream keyed by `(seed, client_id)`.
pub fn leave_one_out_split(
    positives: &UserPositives,
    meta: &DatasetMeta,
    seed: u64,
    eval_negatives: usize,
) -> Result<Vec<ClientDataset>> {
    let m = meta.m();
    positives
        .iter()
        .enumerate()
        .map(|(client_id, pos)| {
            let latest = pos
                .iter()
                .max_by_key(|p| (p.timestamp.unwrap_or(i64::MIN), p.order))
                .ok_or(Error::NoTrainPositives { client_id })?;
            let train: Vec<u32> = pos
                .iter()
                .filter(|p| p.item != latest.item)
                .map(|p| p.item)
                .collect();

            let mut seen = ItemSet::new(m);
            pos.iter().for_each(|p| seen.insert(p.item as usize));
            let candidates = seen.complement();
            if candidates.len() < eval_negatives {
                return Err(Error::NotEnoughNegatives {
                    user_id: meta.user_ids[client_id].clone(),
                    available: candidates.len(),
                    required: eval_negatives,
                });
            }
            let mut rng = rng::stream(seed, Purpose::EvalNegatives, &[client_id as u64]);
            let picked = index::sample(&mut rng, candidates.len(), eval_negatives)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
            ClientDataset::new(client_id, m, train, latest.item, picked)
        })
        .collect()
}

/// Draws `negatives_per_positive * |train_positives|` items uniformly with
/// replacement from items the client never interacted with.
pub fn sample_train_negatives<R: Rng + ?Sized>(
    client: &ClientDataset,
    rng: &mut R,
) -> Result<Vec<TrainingEntry>> {
    if client.train_positives.is_empty() {
        return Err(Error::NoTrainPositives {
            client_id: client.client_id,
        });
    }
    if client.negative_candidates() == 0 {
        return Err(Error::NoNegativeCandidates {
            client_id: client.client_id,
        });
    }
    let count = client.negatives_per_positive * client.train_positives.len();
    let m = client.n_items();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let j = rng.random_range(0..m);
        if !client.has_interacted(j) {
            out.push(TrainingEntry::negative(j));
        }
    }
    Ok(out)
}

/// On-disk record of a split so that evaluation can be reproduced in another
/// process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub min_interactions: usize,
    pub eval_negative_count: usize,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub clients: Vec<ClientSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSplit {
    pub client_id: usize,
    pub test_positive: u32,
    pub eval_negatives: Vec<u32>,
}

impl SplitManifest {
    pub fn new(
        seed: u64,
        min_interactions: usize,
        meta: &DatasetMeta,
        clients: &[ClientDataset],
    ) -> Self {
        SplitManifest {
            seed,
            n: meta.n(),
            m: meta.m(),
            min_interactions,
            eval_negative_count: clients.first().map_or(0, |c| c.eval_negatives.len()),
            user_ids: meta.user_ids.clone(),
            item_ids: meta.item_ids.clone(),
            clients: clients
                .iter()
                .map(|c| ClientSplit {
                    client_id: c.client_id,
                    test_positive: c.test_positive,
                    eval_negatives: c.eval_negatives.clone(),
                })
                .collect(),
        }
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta::new(self.user_ids.clone(), self.item_ids.clone())
    }

    /// Rebuilds client datasets from the recorded split and the positives of
    /// the same ingested data.
    pub fn restore(&self, positives: &UserPositives) -> Result<Vec<ClientDataset>> {
        if positives.len() != self.n || self.clients.len() != self.n {
            return Err(Error::MismatchedRuns(format!(
                "manifest has {} users, data has {}",
                self.n,
                positives.len()
            )));
        }
        self.clients
            .iter()
            .map(|s| {
                let pos = &positives[s.client_id];
                if !pos.iter().any(|p| p.item == s.test_positive) {
                    return Err(Error::MismatchedRuns(format!(
                        "client {}: recorded test positive is not a positive of the data",
                        s.client_id
                    )));
                }
                let train = pos
                    .iter()
                    .filter(|p| p.item != s.test_positive)
                    .map(|p| p.item)
                    .collect();
                ClientDataset::new(
                    s.client_id,
                    self.m,
                    train,
                    s.test_positive,
                    s.eval_negatives.clone(),
                )
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Everything ingestion produces for one input file and seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub meta: DatasetMeta,
    pub positives: UserPositives,
    pub clients: Vec<ClientDataset>,
    pub seed: u64,
    pub min_interactions: usize,
}

impl PreparedData {
    pub fn from_interactions(
        raw: &[RawInteraction],
        min_interactions: usize,
        eval_negatives: usize,
        seed: u64,
    ) -> Result<Self> {
        let (meta, positives) = binarize_and_filter(raw, min_interactions)?;
        let clients = leave_one_out_split(&positives, &meta, seed, eval_negatives)?;
        Ok(PreparedData {
            meta,
            positives,
            clients,
            seed,
            min_interactions,
        })
    }

    pub fn load(
        path: &Path,
        format: Option<RatingFormat>,
        min_interactions: usize,
        eval_negatives: usize,
        seed: u64,
    ) -> Result<Self> {
        let raw = load_ratings(path, format)?;
        Self::from_interactions(&raw, min_interactions, eval_negatives, seed)
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(&self.meta, &self.positives)
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest::new(self.seed, self.min_interactions, &self.meta, &self.clients)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(user: &str, item: &str, rating: f64, ts: Option<i64>) -> RawInteraction {
        RawInteraction {
            user_id: user.into(),
            item_id: item.into(),
            rating,
            timestamp: ts,
        }
    }

    #[test]
    fn parses_tab_line() {
        let got = parse_ratings("1\t50\t5\t881250949\n".as_bytes(), RatingFormat::Tab).unwrap();
        assert_eq!(got, vec![raw("1", "50", 5.0, Some(881250949))]);
    }

    #[test]
    fn parses_double_colon_line() {
        let got = parse_ratings(
            "1::1193::5::978300760\n".as_bytes(),
            RatingFormat::DoubleColon,
        )
        .unwrap();
        assert_eq!(got, vec![raw("1", "1193", 5.0, Some(978300760))]);
    }

    #[test]
    fn empty_stream_is_empty_list() {
        assert!(parse_ratings("".as_bytes(), RatingFormat::Tab)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn timestamp_is_optional() {
        let got = parse_ratings("u\ti\t3.5\n".as_bytes(), RatingFormat::Tab).unwrap();
        assert_eq!(got[0].timestamp, None);
        assert_eq!(got[0].rating, 3.5);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = "1\t2\t3\t4\n\n1\t2\n";
        match parse_ratings(input.as_bytes(), RatingFormat::Tab) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_ratings("1\t2\t-1\n".as_bytes(), RatingFormat::Tab) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detects_format() {
        assert_eq!(RatingFormat::detect("1::2::3::4"), RatingFormat::DoubleColon);
        assert_eq!(RatingFormat::detect("\n1\t2\t3"), RatingFormat::Tab);
    }

    #[test]
    fn ten_distinct_items_retained_nine_dropped() {
        let ratings = [5.0, 4.0, 3.0, 1.0, 2.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        let mut rows: Vec<_> = ratings
            .iter()
            .enumerate()
            .map(|(j, &r)| raw("keep", &format!("i{j}"), r, Some(j as i64)))
            .collect();
        rows.extend((0..9).map(|j| raw("drop", &format!("i{j}"), 5.0, None)));
        let (meta, pos) = binarize_and_filter(&rows, 10).unwrap();
        assert_eq!(meta.n(), 1);
        assert_eq!(meta.user_ids, vec!["keep".to_string()]);
        assert_eq!(pos[0].len(), 10);
    }

    #[test]
    fn items_without_retained_users_are_dropped() {
        let mut rows: Vec<_> = (0..3).map(|j| raw("a", &format!("i{j}"), 1.0, None)).collect();
        rows.push(raw("b", "only_b", 1.0, None));
        let (meta, _) = binarize_and_filter(&rows, 3).unwrap();
        assert_eq!(meta.m(), 3);
        assert!(meta.item_index("only_b").is_none());
    }

    #[test]
    fn duplicates_keep_latest_occurrence() {
        let rows = vec![
            raw("a", "x", 5.0, Some(10)),
            raw("a", "x", 0.0, Some(5)),
            raw("a", "y", 4.0, Some(1)),
            raw("a", "y", 0.0, Some(1)),
        ];
        let (meta, pos) = binarize_and_filter(&rows, 1).unwrap();
        // x survives from the ts=10 line; y's tie goes to the later zero rating.
        assert_eq!(meta.m(), 1);
        assert_eq!(pos[0].len(), 1);
        assert_eq!(pos[0][0].order, 0);
    }

    #[test]
    fn all_users_filtered_is_an_error() {
        let rows = vec![raw("a", "x", 1.0, None)];
        assert!(matches!(
            binarize_and_filter(&rows, 10),
            Err(Error::EmptyDataset { .. })
        ));
        assert!(binarize_and_filter(&[], 1).is_err());
    }

    fn small_catalog(n_items: usize) -> Vec<RawInteraction> {
        // user "u" rates a,b,c at t=1,2,3; two filler users split the catalog.
        let mut rows = vec![
            raw("u", "a", 4.0, Some(1)),
            raw("u", "c", 4.0, Some(3)),
            raw("u", "b", 4.0, Some(2)),
        ];
        rows.extend((0..n_items).map(|j| {
            let user = if j % 2 == 0 { "filler0" } else { "filler1" };
            raw(user, &format!("n{j}"), 1.0, Some(0))
        }));
        rows
    }

    #[test]
    fn holdout_is_most_recent() {
        let rows = small_catalog(220);
        let (meta, pos) = binarize_and_filter(&rows, 3).unwrap();
        let clients = leave_one_out_split(&pos, &meta, 1, 99).unwrap();
        let u = &clients[meta.user_index("u").unwrap()];
        assert_eq!(meta.item_ids[u.test_positive as usize], "c");
        let train: Vec<&str> = u
            .train_positives
            .iter()
            .map(|&j| meta.item_ids[j as usize].as_str())
            .collect();
        assert_eq!(train, vec!["a", "b"]);
    }

    #[test]
    fn holdout_falls_back_to_file_order() {
        let mut rows: Vec<_> = ["p", "q", "r"]
            .iter()
            .map(|it| raw("u", it, 1.0, None))
            .collect();
        rows.extend((0..5).map(|j| raw("w", &format!("n{j}"), 1.0, None)));
        let (meta, pos) = binarize_and_filter(&rows, 3).unwrap();
        let clients = leave_one_out_split(&pos, &meta, 0, 3).unwrap();
        assert_eq!(meta.item_ids[clients[0].test_positive as usize], "r");
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let rows = small_catalog(220);
        let (meta, pos) = binarize_and_filter(&rows, 3).unwrap();
        let a = leave_one_out_split(&pos, &meta, 42, 99).unwrap();
        let b = leave_one_out_split(&pos, &meta, 42, 99).unwrap();
        assert_eq!(a, b);
        let c = &a[0];
        assert_eq!(c.eval_negatives.len(), 99);
        assert!(c.eval_negatives.iter().all(|&j| !c.has_interacted(j as usize)));
        let mut uniq = c.eval_negatives.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 99);
    }

    #[test]
    fn too_few_negative_candidates_names_user() {
        let rows = small_catalog(50);
        let (meta, pos) = binarize_and_filter(&rows, 3).unwrap();
        match leave_one_out_split(&pos, &meta, 0, 99) {
            Err(Error::NotEnoughNegatives { user_id, .. }) => {
                assert!(user_id == "u" || user_id.starts_with("filler"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn four_negatives_per_positive() {
        let train: Vec<u32> = (0..10).collect();
        let client = ClientDataset::new(0, 100, train, 10, vec![]).unwrap();
        let mut rng = rng::stream(3, Purpose::Epoch, &[0]);
        let negs = sample_train_negatives(&client, &mut rng).unwrap();
        assert_eq!(negs.len(), 40);
        assert!(negs
            .iter()
            .all(|e| e.label == 0.0 && !client.has_interacted(e.item as usize)));
    }

    #[test]
    fn sampling_without_positives_or_candidates_fails() {
        let empty = ClientDataset::new(0, 5, vec![], 0, vec![]).unwrap();
        let mut rng = rng::stream(3, Purpose::Epoch, &[0]);
        assert!(matches!(
            sample_train_negatives(&empty, &mut rng),
            Err(Error::NoTrainPositives { .. })
        ));
        let full = ClientDataset::new(1, 3, vec![0, 1], 2, vec![]).unwrap();
        assert!(matches!(
            sample_train_negatives(&full, &mut rng),
            Err(Error::NoNegativeCandidates { .. })
        ));
    }

    #[test]
    fn client_dataset_rejects_overlap() {
        assert!(ClientDataset::new(0, 10, vec![1, 2], 2, vec![]).is_err());
        assert!(ClientDataset::new(0, 10, vec![1, 2], 3, vec![1]).is_err());
    }

    #[test]
    fn manifest_restores_clients() {
        let rows = small_catalog(220);
        let data = PreparedData::from_interactions(&rows, 3, 99, 9).unwrap();
        let manifest = data.manifest();
        let json = serde_json::to_string(&manifest).unwrap();
        let back: SplitManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.restore(&data.positives).unwrap(), data.clients);
        assert_eq!(back.meta().user_index("u"), data.meta.user_index("u"));
    }
}
