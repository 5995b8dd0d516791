//! Round-based simulation: client sampling, local updates, server averaging
//! of the global item table, evaluation and per-round reports.
//!
//! Clients own their user vector and local item table for the whole run; the
//! only value that leaves a client is its [`Upload`]. Within a round clients
//! are processed in parallel, but uploads are summed in client-index order in
//! fixed-size groups, so the result does not depend on the worker count.

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{comm_estimate, sparsity_stats};
use crate::curriculum::{ScheduleKind, ScheduleSpec};
use crate::data::{sample_train_negatives, ClientDataset};
use crate::error::{Error, Result};
use crate::eval::{rank_position, summarize_ranks, MetricSummary, RankingCase, DEFAULT_CUTOFF};
use crate::matrix::Matrix;
use crate::model::{
    sigmoid, step_in_place, GlobalRule, HyperParams, StepRule, StepScratch, TrainingEntry,
    INIT_SCALE,
};
use crate::privacy::PrivacyConfig;
use crate::rng::{self, Purpose, StreamRng};

/// Absolute objective value above which a client run is treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Clients whose uploads are summed together before being folded into the
/// round total. Fixed so that the floating-point sum order never changes.
const AGGREGATION_GROUP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VariantKind {
    #[default]
    #[serde(rename = "fedrap")]
    FedRap,
    /// Shared item table only.
    #[serde(rename = "fedrap-c")]
    FedRapC,
    /// Local item tables only; nothing is communicated.
    #[serde(rename = "fedrap-d")]
    FedRapD,
    /// No L1 term on the shared table.
    #[serde(rename = "fedrap-no")]
    FedRapNo,
    /// Squared Frobenius penalty on the shared table instead of L1.
    #[serde(rename = "fedrap-l2")]
    FedRapL2,
    /// All clients in one process updating a single shared table in turn.
    #[serde(rename = "centrap")]
    CentRap,
}

impl VariantKind {
    pub const ALL: [VariantKind; 6] = [
        VariantKind::FedRap,
        VariantKind::FedRapC,
        VariantKind::FedRapD,
        VariantKind::FedRapNo,
        VariantKind::FedRapL2,
        VariantKind::CentRap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::FedRap => "fedrap",
            VariantKind::FedRapC => "fedrap-c",
            VariantKind::FedRapD => "fedrap-d",
            VariantKind::FedRapNo => "fedrap-no",
            VariantKind::FedRapL2 => "fedrap-l2",
            VariantKind::CentRap => "centrap",
        }
    }

    pub fn uses_local(self) -> bool {
        self != VariantKind::FedRapC
    }

    pub fn uses_global(self) -> bool {
        self != VariantKind::FedRapD
    }

    pub fn global_rule(self) -> GlobalRule {
        match self {
            VariantKind::FedRapD => GlobalRule::Frozen,
            VariantKind::FedRapL2 => GlobalRule::Ridge,
            _ => GlobalRule::Prox,
        }
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub lambda_schedule: ScheduleKind,
    pub mu_schedule: ScheduleKind,
    pub dp: Option<PrivacyConfig>,
}

impl VariantSpec {
    pub fn new(kind: VariantKind) -> Self {
        VariantSpec {
            kind,
            lambda_schedule: ScheduleKind::Tanh,
            mu_schedule: ScheduleKind::Tanh,
            dp: None,
        }
    }

    pub fn with_schedule(mut self, kind: ScheduleKind) -> Self {
        self.lambda_schedule = kind;
        self.mu_schedule = kind;
        self
    }

    pub fn with_privacy(mut self, dp: PrivacyConfig) -> Self {
        self.dp = dp.enabled.then_some(dp);
        self
    }

    /// Label used in reports, e.g. `fedrap`, `fedrap-sin`, `fedrap-noise`.
    pub fn label(&self) -> String {
        let mut s = self.kind.as_str().to_string();
        if self.lambda_schedule == self.mu_schedule {
            if self.lambda_schedule != ScheduleKind::Tanh {
                s.push('-');
                s.push_str(self.lambda_schedule.as_str());
            }
        } else {
            s.push_str(&format!(
                "-{}-{}",
                self.lambda_schedule.as_str(),
                self.mu_schedule.as_str()
            ));
        }
        if self.dp.is_some() {
            s.push_str("-noise");
        }
        s
    }

    /// `(lambda, mu)` at round `a`, after the variant's overrides. Variants
    /// without one of the tables drop the difference term entirely.
    pub fn weights(&self, hp: &HyperParams, a: u64) -> (f64, f64) {
        let lambda = ScheduleSpec::new(self.lambda_schedule, hp.v1).weight(a);
        let mu = ScheduleSpec::new(self.mu_schedule, hp.v2).weight(a);
        match self.kind {
            VariantKind::FedRapC => (0.0, mu),
            VariantKind::FedRapD => (0.0, 0.0),
            VariantKind::FedRapNo => (lambda, 0.0),
            _ => (lambda, mu),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(dp) = &self.dp {
            dp.validate()?;
            if matches!(self.kind, VariantKind::FedRapD | VariantKind::CentRap) {
                return Err(Error::InvalidParam(format!(
                    "{} has no client upload to privatize",
                    self.kind.as_str()
                )));
            }
        }
        Ok(())
    }
}

/// State that lives on one client for the whole run.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub u: Vec<f64>,
    /// `None` when the variant has no local item table.
    pub d: Option<Matrix>,
    pub dataset: ClientDataset,
}

impl ClientState {
    pub fn init(dataset: ClientDataset, k: usize, with_local: bool, seed: u64) -> Self {
        let m = dataset.n_items();
        let mut rng = rng::stream(seed, Purpose::ClientInit, &[dataset.client_id as u64]);
        let u = (0..k)
            .map(|_| rand::Rng::random_range(&mut rng, -INIT_SCALE..=INIT_SCALE))
            .collect();
        let d = with_local.then(|| Matrix::uniform(m, k, INIT_SCALE, &mut rng));
        ClientState {
            client_id: dataset.client_id,
            u,
            d,
            dataset,
        }
    }

    /// Scores of `[test_positive, eval_negatives...]` against `c`.
    pub fn ranking_case(&self, c: &Matrix) -> RankingCase {
        let scores = self
            .dataset
            .ranking_candidates()
            .into_iter()
            .map(|j| self.score(c, j as usize))
            .collect();
        RankingCase::positive_first(scores)
    }

    pub fn score(&self, c: &Matrix, item: usize) -> f64 {
        let cj = c.row(item);
        let z: f64 = match &self.d {
            Some(d) => self
                .u
                .iter()
                .zip(cj)
                .zip(d.row(item))
                .map(|((u, c), d)| u * (c + d))
                .sum(),
            None => self.u.iter().zip(cj).map(|(u, c)| u * c).sum(),
        };
        sigmoid(z)
    }
}

/// Server-side state. Holds no user vectors and no local tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub c: Matrix,
    /// Number of completed rounds.
    pub round: u64,
    pub last_selection: Vec<usize>,
}

impl ServerState {
    pub fn init(m: usize, k: usize, variant: VariantKind, seed: u64) -> Self {
        let c = if variant.uses_global() {
            let mut rng = rng::stream(seed, Purpose::GlobalInit, &[]);
            Matrix::uniform(m, k, INIT_SCALE, &mut rng)
        } else {
            Matrix::zeros(m, k)
        };
        ServerState {
            c,
            round: 0,
            last_selection: Vec::new(),
        }
    }
}

/// Builds the initial server and client states for a set of client datasets.
pub fn initialize(
    variant: &VariantSpec,
    datasets: Vec<ClientDataset>,
    k: usize,
    seed: u64,
) -> Result<(ServerState, Vec<ClientState>)> {
    let m = datasets
        .first()
        .map(ClientDataset::n_items)
        .ok_or(Error::EmptyDataset { min_interactions: 0 })?;
    let clients: Vec<ClientState> = datasets
        .into_iter()
        .map(|ds| ClientState::init(ds, k, variant.kind.uses_local(), seed))
        .collect();
    Ok((ServerState::init(m, k, variant.kind, seed), clients))
}

/// What a client sends to the server at the end of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Upload {
    pub c: Matrix,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// `None` means every client participates every round.
    pub clients_per_round: Option<usize>,
    /// Skip clients that participated in the previous round.
    pub exclude_previous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    /// Ascending client indices.
    pub selected: Vec<usize>,
}

impl RoundPlan {
    pub fn n_s(&self) -> usize {
        self.selected.len()
    }
}

/// Uniform sample of `n_s` distinct clients out of `n`, optionally excluding
/// the previous round's participants.
pub fn sample_clients(
    n: usize,
    n_s: usize,
    rng: &mut StreamRng,
    exclude: Option<&[usize]>,
) -> Result<RoundPlan> {
    if n_s == 0 || n_s > n {
        return Err(Error::InvalidParam(format!(
            "clients per round must be in [1, {n}], got {n_s}"
        )));
    }
    let eligible: Vec<usize> = match exclude {
        Some(ex) if !ex.is_empty() => {
            let mut skip = vec![false; n];
            ex.iter().filter(|&&i| i < n).for_each(|&i| skip[i] = true);
            (0..n).filter(|&i| !skip[i]).collect()
        }
        _ => (0..n).collect(),
    };
    if n_s > eligible.len() {
        return Err(Error::InfeasibleSampling {
            n,
            n_s,
            eligible: eligible.len(),
        });
    }
    let mut selected: Vec<usize> = if n_s == eligible.len() {
        eligible
    } else {
        index::sample(rng, eligible.len(), n_s)
            .into_iter()
            .map(|i| eligible[i])
            .collect()
    };
    selected.sort_unstable();
    Ok(RoundPlan { selected })
}

/// Elementwise mean of the received tables.
pub fn aggregate(received: &[Matrix]) -> Result<Matrix> {
    let first = received.first().ok_or(Error::EmptyAggregation)?;
    let mut sum = Matrix::zeros(first.rows(), first.cols());
    for m in received {
        sum.add_assign(m)?;
    }
    sum.scale(1.0 / received.len() as f64);
    Ok(sum)
}

/// Per-round inputs shared by every participating client.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub hp: &'a HyperParams,
    pub variant: &'a VariantSpec,
    /// 1-based round index; also the curriculum argument.
    pub round: u64,
    pub lambda: f64,
    pub mu: f64,
    pub seed: u64,
    pub n_s: usize,
    /// Accumulate the gradient applied to `C` into the output.
    pub record_gradient: bool,
}

impl RoundContext<'_> {
    fn step_rule(&self) -> StepRule {
        StepRule {
            eta: self.hp.eta,
            lambda: self.lambda,
            mu: self.mu,
            reg_sign: self.hp.reg_sign,
            global: self.variant.kind.global_rule(),
            clip: self.variant.dp.map(|dp| dp.tau),
        }
    }
}

/// Result of one client's local work in a round.
#[derive(Debug, Clone)]
pub struct ClientOutput {
    pub client_id: usize,
    /// `None` for variants that communicate nothing.
    pub upload: Option<Upload>,
    /// Rank of the held-out positive under the client's post-update tables.
    pub rank: usize,
    /// Summed BCE and entry count of the last local epoch.
    pub last_epoch_bce: f64,
    pub last_epoch_entries: usize,
    pub clipped_steps: usize,
    pub steps: usize,
    pub grad_c_sum: Option<Matrix>,
}

/// Runs the local epochs of one client against the broadcast table `c_in`.
///
/// The client's `u` and `D` are updated in place. Its working copy of the
/// global table is returned as the upload, after clipping-aware steps and,
/// when privacy is on, Gaussian noise.
pub fn client_update(
    state: &mut ClientState,
    c_in: &Matrix,
    ctx: &RoundContext<'_>,
    scratch: &mut StepScratch,
) -> Result<ClientOutput> {
    let mut c_local = c_in.clone();
    let out = local_epochs(state, &mut c_local, ctx, scratch)?;
    let mut upload = None;
    if ctx.variant.kind.uses_global() {
        if let Some(dp) = ctx.variant.dp {
            let sigma = dp.noise_sigma(ctx.hp.eta, ctx.n_s);
            let mut rng = rng::stream(
                ctx.seed,
                Purpose::Noise,
                &[state.client_id as u64, ctx.round],
            );
            crate::privacy::add_gaussian_noise_in_place(&mut c_local, sigma, &mut rng)?;
        }
        upload = Some(Upload { c: c_local });
    }
    Ok(ClientOutput { upload, ..out })
}

/// Local epochs against a table updated in place; shared by the federated
/// and the centralized loops.
fn local_epochs(
    state: &mut ClientState,
    c: &mut Matrix,
    ctx: &RoundContext<'_>,
    scratch: &mut StepScratch,
) -> Result<ClientOutput> {
    let rule = ctx.step_rule();
    let cid = state.client_id;
    let mut grad_sink = ctx.record_gradient.then(|| Matrix::zeros(c.rows(), c.cols()));
    let mut out = ClientOutput {
        client_id: cid,
        upload: None,
        rank: 0,
        last_epoch_bce: 0.0,
        last_epoch_entries: 0,
        clipped_steps: 0,
        steps: 0,
        grad_c_sum: None,
    };
    let mut entries: Vec<TrainingEntry> = Vec::new();
    for epoch in 0..ctx.hp.t2 {
        let mut rng = rng::stream(ctx.seed, Purpose::Epoch, &[cid as u64, ctx.round, epoch as u64]);
        entries.clear();
        entries.extend(
            state
                .dataset
                .train_positives
                .iter()
                .map(|&j| TrainingEntry::positive(j as usize)),
        );
        entries.extend(sample_train_negatives(&state.dataset, &mut rng)?);
        entries.shuffle(&mut rng);

        let mut epoch_bce = 0.0;
        for batch in entries.chunks(ctx.hp.batch_size) {
            let stats = step_in_place(
                &mut state.u,
                c,
                state.d.as_mut(),
                batch,
                &rule,
                scratch,
                grad_sink.as_mut(),
            )?;
            let objective = stats.bce + ctx.hp.reg_sign.factor() * ctx.lambda * stats.gap_sq;
            if !objective.is_finite() || objective.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    round: ctx.round as usize,
                    client_id: cid,
                    loss: objective,
                });
            }
            epoch_bce += stats.bce;
            out.steps += 1;
            out.clipped_steps += stats.clipped as usize;
        }
        out.last_epoch_bce = epoch_bce;
        out.last_epoch_entries = entries.len();
    }
    out.rank = rank_position(&state.ranking_case(c))?;
    out.grad_c_sum = grad_sink;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpEcho {
    pub tau: f64,
    pub z: f64,
    pub eta: f64,
    pub n_s: usize,
    pub sigma: f64,
}

/// One line of the JSON-lines round stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub variant: String,
    pub hr10: f64,
    pub ndcg10: f64,
    pub mean_loss: f64,
    pub c_frac_gt_1e1: f64,
    pub c_frac_gt_1e2: f64,
    #[serde(rename = "nonzero_C_entries")]
    pub nonzero_c_entries: usize,
    pub bytes_up_estimate: u64,
    pub n_sampled: usize,
    pub lambda: f64,
    pub mu: f64,
    /// Metrics of every client against the aggregated table; present on
    /// full-evaluation rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_hr10: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_ndcg10: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpEcho>,
}

impl RoundReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub sampler: SamplerConfig,
    /// Worker threads for client updates; `0` uses the rayon default.
    pub workers: usize,
    /// Evaluate every client against the aggregated table every this many
    /// rounds (and after the last round). `0` disables it.
    pub full_eval_every: u64,
    pub cutoff: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            sampler: SamplerConfig::default(),
            workers: 0,
            full_eval_every: 10,
            cutoff: DEFAULT_CUTOFF,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub reports: Vec<RoundReport>,
}

/// Everything the round loop exposes to an observer after a round.
pub struct RoundView<'a> {
    pub report: &'a RoundReport,
    pub server: &'a ServerState,
    pub clients: &'a [ClientState],
}

/// Ranks of every client against `c` with its own local state.
pub fn evaluate_clients(clients: &[ClientState], c: &Matrix, cutoff: usize) -> Result<MetricSummary> {
    let ranks = clients
        .par_iter()
        .map(|cl| rank_position(&cl.ranking_case(c)))
        .collect::<Result<Vec<_>>>()?;
    summarize_ranks(&ranks, cutoff)
}

/// Runs `hp.t1` rounds. `on_round` sees each report as soon as it exists, so a
/// divergence error still leaves every completed round persisted.
pub fn run_training(
    variant: &VariantSpec,
    server: ServerState,
    clients: Vec<ClientState>,
    hp: &HyperParams,
    seed: u64,
    opts: &RunOptions,
    on_round: &mut dyn FnMut(RoundView<'_>) -> Result<()>,
) -> Result<TrainingOutcome> {
    hp.validate()?;
    variant.validate()?;
    let (m, k) = server.c.shape();
    if hp.k != k {
        return Err(Error::shape(format!("k = {}", hp.k), k));
    }
    for cl in &clients {
        if cl.u.len() != k || cl.dataset.n_items() != m {
            return Err(Error::shape(format!("client with m = {m}, k = {k}"), cl.client_id));
        }
        if let Some(d) = &cl.d {
            d.check_shape(m, k, "local table")?;
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::InvalidParam(e.to_string()))?;
    round_loop(&pool, variant, server, clients, hp, seed, opts, on_round)
}

#[allow(clippy::too_many_arguments)]
fn round_loop(
    pool: &rayon::ThreadPool,
    variant: &VariantSpec,
    mut server: ServerState,
    mut clients: Vec<ClientState>,
    hp: &HyperParams,
    seed: u64,
    opts: &RunOptions,
    on_round: &mut dyn FnMut(RoundView<'_>) -> Result<()>,
) -> Result<TrainingOutcome> {
    let n = clients.len();
    let (m, k) = server.c.shape();
    let n_s = opts.sampler.clients_per_round.unwrap_or(n);
    let mut reports = Vec::with_capacity(hp.t1);
    let last_round = server.round + hp.t1 as u64;

    for a in server.round + 1..=last_round {
        let plan = if variant.kind == VariantKind::CentRap {
            RoundPlan {
                selected: (0..n).collect(),
            }
        } else {
            let mut rng = rng::stream(seed, Purpose::ClientSampling, &[a]);
            let exclude = opts
                .sampler
                .exclude_previous
                .then_some(server.last_selection.as_slice());
            sample_clients(n, n_s, &mut rng, exclude)?
        };
        let (lambda, mu) = variant.weights(hp, a);
        let ctx = RoundContext {
            hp,
            variant,
            round: a,
            lambda,
            mu,
            seed,
            n_s: plan.n_s(),
            record_gradient: false,
        };

        let mut ranks = Vec::with_capacity(plan.n_s());
        let mut bce_sum = 0.0;
        let mut entry_count = 0usize;
        let mut bytes_up = 0u64;

        if variant.kind == VariantKind::CentRap {
            let mut scratch = StepScratch::new(m, k);
            for cl in clients.iter_mut() {
                let out = local_epochs(cl, &mut server.c, &ctx, &mut scratch)?;
                ranks.push(out.rank);
                bce_sum += out.last_epoch_bce;
                entry_count += out.last_epoch_entries;
            }
        } else {
            let mut selected: Vec<&mut ClientState> = {
                let mut mask = vec![false; n];
                plan.selected.iter().for_each(|&i| mask[i] = true);
                clients
                    .iter_mut()
                    .enumerate()
                    .filter(|(i, _)| mask[*i])
                    .map(|(_, c)| c)
                    .collect()
            };
            let broadcast = &server.c;
            let mut total = variant.kind.uses_global().then(|| Matrix::zeros(m, k));
            for group in selected.chunks_mut(AGGREGATION_GROUP) {
                let outputs = pool.install(|| {
                    group
                        .par_iter_mut()
                        .map_init(
                            || StepScratch::new(m, k),
                            |scratch, cl| client_update(cl, broadcast, &ctx, scratch),
                        )
                        .collect::<Result<Vec<_>>>()
                })?;
                for out in outputs {
                    ranks.push(out.rank);
                    bce_sum += out.last_epoch_bce;
                    entry_count += out.last_epoch_entries;
                    if let (Some(total), Some(up)) = (total.as_mut(), out.upload) {
                        let sp = sparsity_stats(&up.c);
                        let comm = comm_estimate(&sp, m, k);
                        bytes_up += comm.dense_bytes.min(comm.sparse_bytes);
                        total.add_assign(&up.c)?;
                    }
                }
            }
            if let Some(mut total) = total {
                total.scale(1.0 / plan.n_s() as f64);
                server.c = total;
            }
        }
        server.round = a;
        server.last_selection = plan.selected.clone();

        let sampled = summarize_ranks(&ranks, opts.cutoff)?;
        let full = if opts.full_eval_every > 0
            && (a % opts.full_eval_every == 0 || a == last_round)
        {
            Some(pool.install(|| evaluate_clients(&clients, &server.c, opts.cutoff))?)
        } else {
            None
        };
        let sp = sparsity_stats(&server.c);
        let report = RoundReport {
            round: a,
            variant: variant.label(),
            hr10: sampled.hr_at_k,
            ndcg10: sampled.ndcg_at_k,
            mean_loss: if entry_count > 0 {
                bce_sum / entry_count as f64
            } else {
                0.0
            },
            c_frac_gt_1e1: sp.frac_abs_gt_1e1,
            c_frac_gt_1e2: sp.frac_abs_gt_1e2,
            nonzero_c_entries: sp.nonzero_count,
            bytes_up_estimate: bytes_up,
            n_sampled: plan.n_s(),
            lambda,
            mu,
            full_hr10: full.map(|f| f.hr_at_k),
            full_ndcg10: full.map(|f| f.ndcg_at_k),
            dp: variant.dp.map(|dp| DpEcho {
                tau: dp.tau,
                z: dp.z,
                eta: hp.eta,
                n_s: plan.n_s(),
                sigma: dp.noise_sigma(hp.eta, plan.n_s()),
            }),
        };
        log::debug!(
            "round {a}: hr={:.4} ndcg={:.4} loss={:.4}",
            report.hr10,
            report.ndcg10,
            report.mean_loss
        );
        on_round(RoundView {
            report: &report,
            server: &server,
            clients: &clients,
        })?;
        reports.push(report);
    }

    Ok(TrainingOutcome {
        server,
        clients,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_clients(n: usize, m: usize) -> Vec<ClientDataset> {
        (0..n)
            .map(|i| {
                let train = (0..3).map(|t| ((i + t) % m) as u32).collect();
                let test = ((i + 3) % m) as u32;
                let negs = vec![((i + 5) % m) as u32, ((i + 6) % m) as u32];
                ClientDataset::new(i, m, train, test, negs).unwrap()
            })
            .collect()
    }

    fn small_hp() -> HyperParams {
        HyperParams {
            k: 4,
            eta: 0.1,
            v1: 0.01,
            v2: 0.01,
            t1: 3,
            t2: 2,
            batch_size: 8,
            ..HyperParams::default()
        }
    }

    fn no_op(_: RoundView<'_>) -> Result<()> {
        Ok(())
    }

    #[test]
    fn full_participation_selects_everyone() {
        let mut rng = rng::stream(0, Purpose::ClientSampling, &[]);
        let plan = sample_clients(5, 5, &mut rng, None).unwrap();
        assert_eq!(plan.selected, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn infeasible_exclusion_is_an_error() {
        let mut rng = rng::stream(0, Purpose::ClientSampling, &[]);
        assert!(matches!(
            sample_clients(5, 3, &mut rng, Some(&[0, 1, 2])),
            Err(Error::InfeasibleSampling { eligible: 2, .. })
        ));
        assert!(sample_clients(5, 0, &mut rng, None).is_err());
        assert!(sample_clients(5, 6, &mut rng, None).is_err());
    }

    #[test]
    fn exclusion_skips_previous_round() {
        let mut rng = rng::stream(1, Purpose::ClientSampling, &[]);
        for _ in 0..50 {
            let plan = sample_clients(10, 4, &mut rng, Some(&[1, 3, 5])).unwrap();
            assert_eq!(plan.n_s(), 4);
            assert!(plan.selected.iter().all(|i| ![1, 3, 5].contains(i)));
            let mut uniq = plan.selected.clone();
            uniq.dedup();
            assert_eq!(uniq.len(), 4);
        }
    }

    #[test]
    fn selection_frequency_is_uniform() {
        let mut counts = [0usize; 100];
        for a in 0..10_000u64 {
            let mut rng = rng::stream(2, Purpose::ClientSampling, &[a]);
            for i in sample_clients(100, 10, &mut rng, None).unwrap().selected {
                counts[i] += 1;
            }
        }
        for c in counts {
            let frac = c as f64 / 10_000.0;
            assert!((frac - 0.1).abs() <= 0.01, "{frac}");
        }
    }

    #[test]
    fn aggregate_examples() {
        let mut rng = rng::stream(3, Purpose::GlobalInit, &[]);
        let m = Matrix::uniform(4, 3, 1.0, &mut rng);
        assert_eq!(aggregate(&[m.clone(), m.clone(), m.clone()]).unwrap(), m);
        let half = aggregate(&[Matrix::zeros(4, 3), m.clone()]).unwrap();
        for (h, v) in half.as_slice().iter().zip(m.as_slice()) {
            assert_eq!(*h, v / 2.0);
        }
        assert!(matches!(aggregate(&[]), Err(Error::EmptyAggregation)));
        assert!(aggregate(&[m, Matrix::zeros(2, 2)]).is_err());
    }

    #[test]
    fn no_local_epochs_returns_broadcast() {
        let variant = VariantSpec::new(VariantKind::FedRap);
        let (server, mut clients) = initialize(&variant, toy_clients(2, 12), 4, 5).unwrap();
        let hp = HyperParams { t2: 0, ..small_hp() };
        let before = clients[0].clone();
        let ctx = RoundContext {
            hp: &hp,
            variant: &variant,
            round: 1,
            lambda: 0.01,
            mu: 0.01,
            seed: 5,
            n_s: 2,
            record_gradient: false,
        };
        let mut scratch = StepScratch::new(12, 4);
        let out = client_update(&mut clients[0], &server.c, &ctx, &mut scratch).unwrap();
        assert_eq!(out.upload.unwrap().c, server.c);
        assert_eq!(clients[0].u, before.u);
        assert_eq!(clients[0].d, before.d);
    }

    #[test]
    fn zero_rate_without_l1_returns_broadcast() {
        let variant = VariantSpec::new(VariantKind::FedRap);
        let (server, mut clients) = initialize(&variant, toy_clients(2, 12), 4, 5).unwrap();
        // eta must be > 0 for validation, but the step rule accepts 0.
        let hp = HyperParams { eta: 0.0, ..small_hp() };
        let ctx = RoundContext {
            hp: &hp,
            variant: &variant,
            round: 1,
            lambda: 0.3,
            mu: 0.0,
            seed: 5,
            n_s: 2,
            record_gradient: false,
        };
        let mut scratch = StepScratch::new(12, 4);
        let out = client_update(&mut clients[1], &server.c, &ctx, &mut scratch).unwrap();
        assert_eq!(out.upload.unwrap().c, server.c);
    }

    #[test]
    fn zero_rounds_returns_initial_state() {
        let variant = VariantSpec::new(VariantKind::FedRap);
        let (server, clients) = initialize(&variant, toy_clients(3, 12), 4, 5).unwrap();
        let hp = HyperParams { t1: 0, ..small_hp() };
        let out = run_training(
            &variant,
            server.clone(),
            clients.clone(),
            &hp,
            5,
            &RunOptions::default(),
            &mut no_op,
        )
        .unwrap();
        assert!(out.reports.is_empty());
        assert_eq!(out.server, server);
        assert_eq!(out.clients[2].u, clients[2].u);
    }

    #[test]
    fn local_only_variant_never_touches_c() {
        let variant = VariantSpec::new(VariantKind::FedRapD);
        let (server, clients) = initialize(&variant, toy_clients(4, 12), 4, 6).unwrap();
        assert!(server.c.as_slice().iter().all(|&v| v == 0.0));
        let out = run_training(&variant, server, clients, &small_hp(), 6, &RunOptions::default(), &mut no_op)
            .unwrap();
        assert!(out.server.c.as_slice().iter().all(|&v| v == 0.0));
        assert!(out.reports.iter().all(|r| r.bytes_up_estimate == 0));
    }

    #[test]
    fn shared_only_variant_has_no_local_tables() {
        let variant = VariantSpec::new(VariantKind::FedRapC);
        let (server, clients) = initialize(&variant, toy_clients(4, 12), 4, 6).unwrap();
        assert!(clients.iter().all(|c| c.d.is_none()));
        let out = run_training(&variant, server, clients, &small_hp(), 6, &RunOptions::default(), &mut no_op)
            .unwrap();
        assert!(out.clients.iter().all(|c| c.d.is_none()));
        assert_eq!(out.reports.len(), 3);
    }

    #[test]
    fn privacy_needs_an_upload() {
        let variant = VariantSpec::new(VariantKind::FedRapD).with_privacy(PrivacyConfig::enabled(0.1, 1.0));
        assert!(variant.validate().is_err());
        let ok = VariantSpec::new(VariantKind::FedRap).with_privacy(PrivacyConfig::enabled(0.1, 1.0));
        assert!(ok.validate().is_ok());
        assert_eq!(ok.label(), "fedrap-noise");
    }

    #[test]
    fn labels_and_parsing() {
        for k in VariantKind::ALL {
            assert_eq!(k.as_str().parse::<VariantKind>().unwrap(), k);
        }
        let v = VariantSpec::new(VariantKind::FedRap).with_schedule(ScheduleKind::Sin);
        assert_eq!(v.label(), "fedrap-sin");
    }

    #[test]
    fn full_evaluation_cadence() {
        let variant = VariantSpec::new(VariantKind::FedRap);
        let (server, clients) = initialize(&variant, toy_clients(3, 12), 4, 7).unwrap();
        let hp = HyperParams { t1: 5, ..small_hp() };
        let opts = RunOptions {
            full_eval_every: 2,
            ..RunOptions::default()
        };
        let out = run_training(&variant, server, clients, &hp, 7, &opts, &mut no_op).unwrap();
        let flags: Vec<bool> = out.reports.iter().map(|r| r.full_hr10.is_some()).collect();
        assert_eq!(flags, vec![false, true, false, true, true]);
    }

    #[test]
    fn report_keys() {
        let variant = VariantSpec::new(VariantKind::FedRap);
        let (server, clients) = initialize(&variant, toy_clients(3, 12), 4, 7).unwrap();
        let hp = HyperParams { t1: 1, ..small_hp() };
        let out = run_training(&variant, server, clients, &hp, 7, &RunOptions::default(), &mut no_op)
            .unwrap();
        let v: serde_json::Value = serde_json::from_str(&out.reports[0].to_json_line()).unwrap();
        for key in [
            "round",
            "variant",
            "hr10",
            "ndcg10",
            "mean_loss",
            "c_frac_gt_1e1",
            "c_frac_gt_1e2",
            "nonzero_C_entries",
            "bytes_up_estimate",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
