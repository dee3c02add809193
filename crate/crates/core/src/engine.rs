//! Discrete-event simulation of semi-asynchronous and synchronous federated
//! learning over a virtual clock.
//!
//! In SAFL mode every client loops autonomously: pull the newest global
//! model if one is available, adapt (FedQS strategies only), train locally
//! for a virtual duration `(c0 + c1 * n_i * E) / speed`, and push the
//! update. The server records each update on receipt and aggregates the
//! oldest `K` pending updates the moment the buffer fills, so staleness
//! emerges naturally from speed heterogeneity. Events pop in
//! `(time, client id)` order, which makes every run bit-reproducible for a
//! given configuration.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::client::{
    self, AdaptParams, ClientRuntime, LocalTrainCfg, LocalUpdate, PayloadKind, SimilarityKind,
    WireReader,
};
use crate::error::{Error, Result};
use crate::metrics::{RoundRecord, Trace};
use crate::numcore::{self, LabeledDataset, ModelSpec, ParamVec};
use crate::server::{self, AggBuffer, GlobalState, StateTable, DEFAULT_G_CAP};

/// Aggregation strategy of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    FedQsSgd,
    FedQsAvg,
    FedSgd,
    FedAvg,
}

impl Strategy {
    pub fn is_fedqs(self) -> bool {
        matches!(self, Strategy::FedQsSgd | Strategy::FedQsAvg)
    }

    pub fn payload_kind(self) -> PayloadKind {
        match self {
            Strategy::FedQsSgd | Strategy::FedSgd => PayloadKind::Gradient,
            Strategy::FedQsAvg | Strategy::FedAvg => PayloadKind::Model,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedQsSgd => "fedqs-sgd",
            Strategy::FedQsAvg => "fedqs-avg",
            Strategy::FedSgd => "fedsgd",
            Strategy::FedAvg => "fedavg",
        }
    }
}

/// Communication mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Semi-asynchronous: autonomous clients, K-triggered aggregation.
    Safl,
    /// Synchronous: server-activated rounds with a barrier.
    Sync,
}

/// Client-side hyperparameters and ablation toggles.
#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    /// Initial local learning rate.
    pub lr_init: f64,
    /// Learning-rate change rate (`a`).
    pub lr_adjust_rate: f64,
    /// Base momentum rate (`m0`).
    pub momentum_base: f64,
    /// Momentum change speed (`k`).
    pub momentum_gain: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    /// Momentum clipping boundary (`theta`).
    pub momentum_cap: f64,
    /// Gradient clipping bound (`G_c`).
    pub clip_bound: f64,
    /// Recall-spread threshold for straggling-biased clients.
    pub spread_threshold: f64,
    pub sim_kind: SimilarityKind,
    /// Carry momentum velocity across global pulls instead of resetting.
    pub momentum_carryover: bool,
    /// Ablation: momentum term on/off.
    pub use_momentum: bool,
    /// Ablation: feedback mechanism on/off.
    pub use_feedback: bool,
    /// Global learning rate for the synchronous gradient rule.
    pub eta_g: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr_init: 0.1,
            lr_adjust_rate: 0.002,
            momentum_base: 0.1,
            momentum_gain: 0.2,
            lr_min: 0.001,
            lr_max: 0.2,
            momentum_cap: 0.9,
            clip_bound: 20.0,
            spread_threshold: 0.2,
            sim_kind: SimilarityKind::Cosine,
            momentum_carryover: false,
            use_momentum: true,
            use_feedback: true,
            eta_g: 0.1,
        }
    }
}

impl Hyper {
    fn adapt_params(&self) -> AdaptParams {
        AdaptParams {
            lr_adjust_rate: self.lr_adjust_rate,
            momentum_base: self.momentum_base,
            momentum_gain: self.momentum_gain,
            eta_min: self.lr_min,
            eta_max: self.lr_max,
            momentum_cap: self.momentum_cap,
            spread_threshold: self.spread_threshold,
            use_momentum: self.use_momentum,
            use_feedback: self.use_feedback,
        }
    }
}

/// Virtual-time cost model: training takes `(c0 + c1 * n_i * E) / speed`.
#[derive(Debug, Clone, Copy)]
pub struct CostModel {
    pub c0: f64,
    pub c1: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { c0: 1.0, c1: 0.01 }
    }
}

/// Full configuration of one simulation run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub num_clients: usize,
    /// Updates required to trigger an aggregation (`K`).
    pub agg_updates: usize,
    /// Global rounds to simulate (`T`).
    pub rounds: u64,
    /// Local epochs per training call (`E`).
    pub local_epochs: u32,
    pub strategy: Strategy,
    pub mode: Mode,
    pub model: ModelSpec,
    /// Fastest-to-slowest client speed ratio.
    pub speed_ratio: f64,
    pub hyper: Hyper,
    pub cost: CostModel,
    pub seed: u64,
    /// Synchronous mode: clients activated per round (defaults to `K`).
    pub activation: Option<usize>,
    /// Run protocol invariant checks during the simulation.
    pub validate: bool,
}

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::InvalidArgument("need at least one client".into()));
        }
        if self.agg_updates == 0 || self.agg_updates > self.num_clients {
            return Err(Error::InvalidArgument(format!(
                "aggregation trigger K = {} must be in [1, N = {}]",
                self.agg_updates, self.num_clients
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("need at least one round".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidArgument("need at least one local epoch".into()));
        }
        if !(self.speed_ratio >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "speed ratio must be >= 1, got {}",
                self.speed_ratio
            )));
        }
        if self.mode == Mode::Sync && self.strategy.is_fedqs() {
            return Err(Error::InvalidArgument(
                "FedQS strategies are defined for SAFL mode only".into(),
            ));
        }
        if let Some(a) = self.activation {
            if a == 0 || a > self.num_clients {
                return Err(Error::InvalidArgument(format!(
                    "activation count {} must be in [1, N = {}]",
                    a, self.num_clients
                )));
            }
        }
        self.model.validate()
    }
}

// Seed-stream tags so each random purpose draws from its own generator.
const STREAM_INIT: u64 = 1;
const STREAM_SPEEDS: u64 = 2;
const STREAM_ACTIVATION: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-client speed multipliers drawn uniformly from `[1, ratio]`.
pub fn assign_speeds(num_clients: usize, ratio: f64, seed: u64) -> Result<Vec<f64>> {
    if !(ratio >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "speed ratio must be >= 1, got {}",
            ratio
        )));
    }
    let mut rng = stream_rng(seed, STREAM_SPEEDS);
    let dist = Uniform::new_inclusive(1.0, ratio);
    Ok((0..num_clients).map(|_| dist.sample(&mut rng)).collect())
}

/// Staleness of an update relative to the current round.
pub fn staleness_of(update: &LocalUpdate, current_round: u64) -> Result<u64> {
    if update.base_round > current_round {
        return Err(Error::Invariant(format!(
            "update from client {} claims base round {} > current round {}",
            update.client_id, update.base_round, current_round
        )));
    }
    Ok(current_round - update.base_round)
}

/// Everything a finished run exposes: the measurement trace, the final
/// model, the state table, and the per-round update batches for replay.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Trace,
    pub initial_params: ParamVec,
    pub final_params: ParamVec,
    pub table: StateTable,
    /// The K updates consumed by each aggregation, in arrival order.
    pub round_batches: Vec<Vec<LocalUpdate>>,
}

struct Event {
    time: f64,
    client: usize,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time.total_cmp(&other.time) == Ordering::Equal && self.client == other.client
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // BinaryHeap is a max-heap; reverse so the earliest (time, client) pops
    // first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.client.cmp(&other.client))
            .reverse()
    }
}

struct Simulation<'a> {
    cfg: &'a SimConfig,
    testset: &'a LabeledDataset,
    state: GlobalState,
    table: StateTable,
    buffer: AggBuffer,
    clients: Vec<ClientRuntime>,
    durations: Vec<f64>,
    records: Vec<RoundRecord>,
    round_batches: Vec<Vec<LocalUpdate>>,
    last_vtime: f64,
}

impl<'a> Simulation<'a> {
    fn new(
        cfg: &'a SimConfig,
        client_data: &[(LabeledDataset, LabeledDataset)],
        testset: &'a LabeledDataset,
    ) -> Result<Self> {
        cfg.check()?;
        if client_data.len() != cfg.num_clients {
            return Err(Error::InvalidArgument(format!(
                "{} client datasets for {} clients",
                client_data.len(),
                cfg.num_clients
            )));
        }
        let init_seed = {
            use rand::Rng;
            stream_rng(cfg.seed, STREAM_INIT).gen::<u64>()
        };
        let w0 = numcore::init_params(&cfg.model, init_seed);
        let speeds = assign_speeds(cfg.num_clients, cfg.speed_ratio, cfg.seed)?;
        let clients: Vec<ClientRuntime> = client_data
            .iter()
            .enumerate()
            .map(|(id, (train, val))| {
                ClientRuntime::new(
                    id,
                    train.clone(),
                    val.clone(),
                    w0.clone(),
                    cfg.hyper.lr_init,
                    cfg.hyper.lr_min,
                    cfg.hyper.lr_max,
                    cfg.hyper.momentum_base,
                )
            })
            .collect();
        let durations: Vec<f64> = clients
            .iter()
            .zip(&speeds)
            .map(|(c, &s)| {
                (cfg.cost.c0 + cfg.cost.c1 * c.n_i() as f64 * cfg.local_epochs as f64) / s
            })
            .collect();
        Ok(Simulation {
            cfg,
            testset,
            state: GlobalState::new(w0.clone(), cfg.hyper.eta_g),
            table: StateTable::new(cfg.num_clients),
            buffer: AggBuffer::new(),
            clients,
            durations,
            records: Vec::with_capacity(cfg.rounds as usize),
            round_batches: Vec::with_capacity(cfg.rounds as usize),
            last_vtime: 0.0,
        })
    }

    /// One client cycle: pull the newest global if any, adapt (FedQS), train
    /// locally, and produce the update that will be pushed when training
    /// completes.
    fn client_cycle(&mut self, id: usize) -> Result<LocalUpdate> {
        let hyper = &self.cfg.hyper;
        if self.state.round > self.clients[id].base_round {
            self.clients[id].receive_global(self.state.params.clone(), self.state.round);
        }
        if self.cfg.strategy.is_fedqs() {
            let info = server::broadcast_for(&self.state, &self.table, id);
            let s_i = self.clients[id].last_similarity;
            let params = hyper.adapt_params();
            client::adapt(&mut self.clients[id], &self.cfg.model, &info, s_i, &params)?;
        } else {
            // Baselines train plainly: fixed rate, no momentum, no feedback.
            self.clients[id].feedback = false;
            self.clients[id].momentum_enabled = false;
        }
        let rt = &self.clients[id];
        let train_cfg = LocalTrainCfg {
            eta: rt.eta,
            momentum: rt.momentum,
            epochs: self.cfg.local_epochs,
            clip_bound: hyper.clip_bound,
            momentum_enabled: rt.momentum_enabled,
        };
        let carry = hyper.momentum_carryover.then_some(&rt.velocity);
        let outcome = client::local_train(&self.cfg.model, &rt.global_now, &rt.train_set, &train_cfg, carry)?;
        let s_i = client::local_similarity(rt, &outcome.params_end, hyper.sim_kind)?;
        let rt = &mut self.clients[id];
        rt.last_similarity = s_i;
        if hyper.momentum_carryover {
            rt.velocity = outcome.velocity.clone();
        }
        if self.cfg.validate && !(rt.eta >= hyper.lr_min && rt.eta <= hyper.lr_max) {
            return Err(Error::Invariant(format!(
                "client {} learning rate {} escaped [{}, {}]",
                id, rt.eta, hyper.lr_min, hyper.lr_max
            )));
        }
        if self.cfg.validate && !(rt.momentum >= 0.0 && rt.momentum <= hyper.momentum_cap) {
            return Err(Error::Invariant(format!(
                "client {} momentum {} escaped [0, {}]",
                id, rt.momentum, hyper.momentum_cap
            )));
        }
        Ok(client::build_update(
            &self.clients[id],
            &outcome,
            s_i,
            self.cfg.strategy.payload_kind(),
        ))
    }

    /// Consume the oldest K updates and produce the next global round.
    fn aggregate(&mut self, vtime: f64) -> Result<()> {
        let k = self.cfg.agg_updates;
        let batch = self.buffer.take_batch(k)?;
        let weights = server::compute_weights(
            &batch,
            &self.table,
            k,
            self.cfg.num_clients,
            DEFAULT_G_CAP,
        )?;
        let mut staleness_sum = 0u64;
        for update in &batch {
            staleness_sum += staleness_of(update, self.state.round)?;
        }
        let mean_staleness = staleness_sum as f64 / k as f64;
        let num_feedback = batch.iter().filter(|u| u.feedback).count() as u32;
        match self.cfg.strategy.payload_kind() {
            PayloadKind::Gradient => server::aggregate_sgd(&mut self.state, &batch, &weights)?,
            PayloadKind::Model => {
                server::aggregate_avg(&mut self.state, &batch, &weights)?;
                if self.cfg.validate {
                    check_hull(&self.state.params, &batch)?;
                }
            }
        }
        if self.cfg.validate {
            let consumed = self.state.round * k as u64;
            let recorded = self.table.total_updates();
            let pending = self.buffer.len() as u64;
            if recorded != consumed + pending {
                return Err(Error::Invariant(format!(
                    "round {}: {} recorded updates != {} consumed + {} pending",
                    self.state.round, recorded, consumed, pending
                )));
            }
        }
        self.record_round(vtime, mean_staleness, num_feedback)?;
        self.round_batches.push(batch);
        Ok(())
    }

    fn record_round(&mut self, vtime: f64, mean_staleness: f64, num_feedback: u32) -> Result<()> {
        if self.cfg.validate && vtime < self.last_vtime {
            return Err(Error::Invariant(format!(
                "virtual clock moved backwards: {} after {}",
                vtime, self.last_vtime
            )));
        }
        self.last_vtime = vtime;
        let (test_loss, test_acc) =
            numcore::forward_eval(&self.cfg.model, &self.state.params, self.testset)?;
        let averages = self.table.averages();
        self.records.push(RoundRecord {
            round: self.state.round,
            vtime,
            test_acc,
            test_loss,
            mean_staleness,
            num_feedback,
            f_bar: averages.f_bar,
            s_bar: averages.s_bar,
        });
        Ok(())
    }

    fn into_output(self, w0: ParamVec) -> SimOutput {
        SimOutput {
            trace: Trace {
                records: self.records,
            },
            initial_params: w0,
            final_params: self.state.params,
            table: self.table,
            round_batches: self.round_batches,
        }
    }
}

fn check_hull(params: &ParamVec, batch: &[LocalUpdate]) -> Result<()> {
    for coord in 0..params.len() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for update in batch {
            let v = update.payload.vector().0[coord];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let v = params.0[coord];
        let slack = 1e-9 * (1.0 + hi.abs().max(lo.abs()));
        if v < lo - slack || v > hi + slack {
            return Err(Error::Invariant(format!(
                "aggregated coordinate {} = {} escapes payload hull [{}, {}]",
                coord, v, lo, hi
            )));
        }
    }
    Ok(())
}

/// Run a semi-asynchronous simulation.
pub fn run_safl(
    cfg: &SimConfig,
    client_data: &[(LabeledDataset, LabeledDataset)],
    testset: &LabeledDataset,
) -> Result<SimOutput> {
    if cfg.mode != Mode::Safl {
        return Err(Error::InvalidArgument(
            "run_safl called with a synchronous config".into(),
        ));
    }
    let mut sim = Simulation::new(cfg, client_data, testset)?;
    let w0 = sim.state.params.clone();
    let mut heap: BinaryHeap<Event> = BinaryHeap::new();
    let mut pending: Vec<Option<LocalUpdate>> = Vec::with_capacity(cfg.num_clients);
    for id in 0..cfg.num_clients {
        pending.push(Some(sim.client_cycle(id)?));
        heap.push(Event {
            time: sim.durations[id],
            client: id,
        });
    }
    'simulation: while sim.state.round < cfg.rounds {
        let event = heap.pop().ok_or_else(|| {
            Error::Invariant(format!("event queue drained at round {}", sim.state.round))
        })?;
        // Events sharing a timestamp are simultaneous: all of their pushes
        // land before any of those clients checks for a new global model.
        let time = event.time;
        let mut group = vec![event.client];
        while let Some(next) = heap.peek() {
            if next.time.total_cmp(&time) == Ordering::Equal {
                group.push(heap.pop().expect("peeked event exists").client);
            } else {
                break;
            }
        }
        for &id in &group {
            let update = pending[id].take().ok_or_else(|| {
                Error::Invariant(format!("client {} fired without an update", id))
            })?;
            sim.table.record_update(&update)?;
            sim.buffer.push(update);
            if sim.buffer.len() >= cfg.agg_updates {
                sim.aggregate(time)?;
                if sim.state.round >= cfg.rounds {
                    break 'simulation;
                }
            }
        }
        for &id in &group {
            pending[id] = Some(sim.client_cycle(id)?);
            heap.push(Event {
                time: time + sim.durations[id],
                client: id,
            });
        }
    }
    Ok(sim.into_output(w0))
}

/// Run a synchronous (barrier) simulation for the baselines.
pub fn run_sync(
    cfg: &SimConfig,
    client_data: &[(LabeledDataset, LabeledDataset)],
    testset: &LabeledDataset,
) -> Result<SimOutput> {
    if cfg.mode != Mode::Sync {
        return Err(Error::InvalidArgument(
            "run_sync called with a semi-asynchronous config".into(),
        ));
    }
    let mut sim = Simulation::new(cfg, client_data, testset)?;
    let w0 = sim.state.params.clone();
    let activation = cfg.activation.unwrap_or(cfg.agg_updates);
    let mut rng = stream_rng(cfg.seed, STREAM_ACTIVATION);
    let mut vtime = 0.0;
    let all_ids: Vec<usize> = (0..cfg.num_clients).collect();
    for _ in 0..cfg.rounds {
        let mut activated: Vec<usize> = all_ids
            .choose_multiple(&mut rng, activation)
            .copied()
            .collect();
        activated.sort_unstable();
        let mut batch = Vec::with_capacity(activation);
        let mut round_duration = 0.0f64;
        for &id in &activated {
            // Activated clients always start from the current global model.
            sim.clients[id].receive_global(sim.state.params.clone(), sim.state.round);
            let update = sim.client_cycle(id)?;
            if cfg.validate && staleness_of(&update, sim.state.round)? != 0 {
                return Err(Error::Invariant(format!(
                    "synchronous update from client {} is stale",
                    id
                )));
            }
            round_duration = round_duration.max(sim.durations[id]);
            sim.table.record_update(&update)?;
            batch.push(update);
        }
        vtime += round_duration;
        server::aggregate_sync(&mut sim.state, &batch, cfg.strategy.payload_kind())?;
        sim.record_round(vtime, 0.0, 0)?;
        sim.round_batches.push(batch);
    }
    Ok(sim.into_output(w0))
}

/// Run whichever mode the config selects.
pub fn run(
    cfg: &SimConfig,
    client_data: &[(LabeledDataset, LabeledDataset)],
    testset: &LabeledDataset,
) -> Result<SimOutput> {
    match cfg.mode {
        Mode::Safl => run_safl(cfg, client_data, testset),
        Mode::Sync => run_sync(cfg, client_data, testset),
    }
}

// --- Replay dump ---------------------------------------------------------
//
// Binary layout (all integers little-endian u64 unless noted):
// magic "FQRP", version u32, strategy tag u8, N, K, initial params vector,
// round count, then per round: the K consumed updates (client wire format)
// followed by the round record (round, vtime, test_acc, test_loss,
// mean_staleness, num_feedback, f_bar, s_bar), and finally the final
// params vector.

const REPLAY_MAGIC: &[u8; 4] = b"FQRP";
const REPLAY_VERSION: u32 = 1;

fn strategy_tag(strategy: Strategy) -> u8 {
    match strategy {
        Strategy::FedQsSgd => 0,
        Strategy::FedQsAvg => 1,
        Strategy::FedSgd => 2,
        Strategy::FedAvg => 3,
    }
}

fn strategy_from_tag(tag: u8) -> Result<Strategy> {
    Ok(match tag {
        0 => Strategy::FedQsSgd,
        1 => Strategy::FedQsAvg,
        2 => Strategy::FedSgd,
        3 => Strategy::FedAvg,
        other => return Err(Error::Data(format!("unknown strategy tag {}", other))),
    })
}

fn write_vec(buf: &mut Vec<u8>, v: &ParamVec) {
    buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v.as_slice() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// A parsed replay dump.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub strategy: Strategy,
    pub num_clients: usize,
    pub agg_updates: usize,
    pub initial_params: ParamVec,
    pub rounds: Vec<(Vec<LocalUpdate>, RoundRecord)>,
    pub final_params: ParamVec,
}

/// Serialize a finished run into the replay wire format.
pub fn encode_replay(cfg: &SimConfig, output: &SimOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(REPLAY_MAGIC);
    buf.extend_from_slice(&REPLAY_VERSION.to_le_bytes());
    buf.push(strategy_tag(cfg.strategy));
    buf.extend_from_slice(&(cfg.num_clients as u64).to_le_bytes());
    buf.extend_from_slice(&(cfg.agg_updates as u64).to_le_bytes());
    write_vec(&mut buf, &output.initial_params);
    buf.extend_from_slice(&(output.round_batches.len() as u64).to_le_bytes());
    for (batch, record) in output.round_batches.iter().zip(&output.trace.records) {
        buf.extend_from_slice(&(batch.len() as u64).to_le_bytes());
        for update in batch {
            buf.extend_from_slice(&update.encode());
        }
        buf.extend_from_slice(&record.round.to_le_bytes());
        buf.extend_from_slice(&record.vtime.to_le_bytes());
        buf.extend_from_slice(&record.test_acc.to_le_bytes());
        buf.extend_from_slice(&record.test_loss.to_le_bytes());
        buf.extend_from_slice(&record.mean_staleness.to_le_bytes());
        buf.extend_from_slice(&u64::from(record.num_feedback).to_le_bytes());
        buf.extend_from_slice(&record.f_bar.to_le_bytes());
        buf.extend_from_slice(&record.s_bar.to_le_bytes());
    }
    write_vec(&mut buf, &output.final_params);
    buf
}

/// Parse a replay dump produced by [`encode_replay`].
pub fn decode_replay(data: &[u8]) -> Result<Replay> {
    if data.len() < 8 || &data[..4] != REPLAY_MAGIC {
        return Err(Error::Data("not a replay dump (bad magic)".into()));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != REPLAY_VERSION {
        return Err(Error::Data(format!("unsupported replay version {}", version)));
    }
    let mut reader = WireReader::new(&data[8..]);
    let strategy = strategy_from_tag(reader.read_u8()?)?;
    let num_clients = reader.read_u64()? as usize;
    let agg_updates = reader.read_u64()? as usize;
    let initial_params = reader.read_vec()?;
    let round_count = reader.read_u64()? as usize;
    let mut rounds = Vec::with_capacity(round_count);
    for _ in 0..round_count {
        let batch_len = reader.read_u64()? as usize;
        let mut batch = Vec::with_capacity(batch_len);
        for _ in 0..batch_len {
            // Records are length-prefixed; skip the prefix and decode the body.
            let _body_len = reader.read_u64()?;
            batch.push(LocalUpdate::decode_body(&mut reader)?);
        }
        let record = RoundRecord {
            round: reader.read_u64()?,
            vtime: reader.read_f64()?,
            test_acc: reader.read_f64()?,
            test_loss: reader.read_f64()?,
            mean_staleness: reader.read_f64()?,
            num_feedback: reader.read_u64()? as u32,
            f_bar: reader.read_f64()?,
            s_bar: reader.read_f64()?,
        };
        rounds.push((batch, record));
    }
    let final_params = reader.read_vec()?;
    if !reader.is_done() {
        return Err(Error::Data("trailing bytes after replay dump".into()));
    }
    Ok(Replay {
        strategy,
        num_clients,
        agg_updates,
        initial_params,
        rounds,
        final_params,
    })
}

pub fn write_replay(path: &Path, cfg: &SimConfig, output: &SimOutput) -> Result<()> {
    let bytes = encode_replay(cfg, output);
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_replay(path: &Path) -> Result<Replay> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_replay(&bytes)
}

/// Re-run the server-side aggregation recorded in a replay (SAFL
/// strategies) and check that it reproduces the recorded state table
/// statistics and final model bit-for-bit.
pub fn verify_replay(replay: &Replay) -> Result<()> {
    let mut state = GlobalState::new(replay.initial_params.clone(), 1.0);
    let mut table = StateTable::new(replay.num_clients);
    for (batch, record) in &replay.rounds {
        for update in batch {
            table.record_update(update)?;
        }
        let weights = server::compute_weights(
            batch,
            &table,
            replay.agg_updates,
            replay.num_clients,
            DEFAULT_G_CAP,
        )?;
        match replay.strategy.payload_kind() {
            PayloadKind::Gradient => server::aggregate_sgd(&mut state, batch, &weights)?,
            PayloadKind::Model => server::aggregate_avg(&mut state, batch, &weights)?,
        }
        if state.round != record.round {
            return Err(Error::Invariant(format!(
                "replay round counter {} != recorded {}",
                state.round, record.round
            )));
        }
        let averages = table.averages();
        if averages.f_bar != record.f_bar || averages.s_bar != record.s_bar {
            return Err(Error::Invariant(format!(
                "replay averages diverge at round {}",
                record.round
            )));
        }
    }
    if state.params != replay.final_params {
        return Err(Error::Invariant(
            "replayed aggregation does not reproduce the final model".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{self, SyntheticSpec};

    fn tiny_synthetic(seed: u64) -> LabeledDataset {
        datagen::gen_synthetic(
            &SyntheticSpec {
                num_classes: 3,
                dim: 4,
                per_class: 30,
                class_sep: 3.0,
                noise_sd: 1.0,
            },
            seed,
        )
        .unwrap()
    }

    fn split_clients(
        ds: &LabeledDataset,
        num_clients: usize,
        seed: u64,
    ) -> Vec<(LabeledDataset, LabeledDataset)> {
        let plan = datagen::partition_iid(ds, num_clients, seed).unwrap();
        plan.split(ds)
            .unwrap()
            .into_iter()
            .map(|shard| {
                if shard.len() < 2 {
                    (shard.clone(), shard)
                } else {
                    datagen::split_train_val(&shard, 0.8, seed).unwrap()
                }
            })
            .collect()
    }

    fn base_cfg(strategy: Strategy, mode: Mode) -> SimConfig {
        SimConfig {
            num_clients: 4,
            agg_updates: 2,
            rounds: 6,
            local_epochs: 2,
            strategy,
            mode,
            model: ModelSpec::LogReg {
                input_dim: 4,
                num_classes: 3,
            },
            speed_ratio: 4.0,
            hyper: Hyper::default(),
            cost: CostModel::default(),
            seed: 11,
            activation: None,
            validate: true,
        }
    }

    #[test]
    fn speeds_degenerate_ratio_is_all_ones() {
        let speeds = assign_speeds(5, 1.0, 3).unwrap();
        assert_eq!(speeds, vec![1.0; 5]);
    }

    #[test]
    fn speeds_stay_in_support_and_spread_out() {
        // Sampling oracle for the order-statistics check: over 20 fixed
        // seeds the mean max/min ratio of 100 draws from U[1, 50] sits far
        // above 20.
        let mut mean_ratio = 0.0;
        for seed in 0..20 {
            let speeds = assign_speeds(100, 50.0, seed).unwrap();
            let lo = speeds.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = speeds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo >= 1.0 && hi <= 50.0);
            mean_ratio += hi / lo;
        }
        mean_ratio /= 20.0;
        assert!(mean_ratio >= 20.0, "mean max/min ratio {mean_ratio}");
        assert!(assign_speeds(3, 0.5, 1).is_err());
    }

    #[test]
    fn staleness_arithmetic() {
        let mut u = LocalUpdate {
            client_id: 0,
            base_round: 3,
            payload: crate::client::UpdatePayload::Params(ParamVec::zeros(1)),
            eta_used: 0.1,
            similarity: 1.0,
            feedback: false,
            n_i: 1,
        };
        assert_eq!(staleness_of(&u, 7).unwrap(), 4);
        assert_eq!(staleness_of(&u, 3).unwrap(), 0);
        u.base_round = 9;
        assert!(staleness_of(&u, 7).is_err());
    }

    #[test]
    fn single_client_fedavg_is_local_training() {
        let ds = tiny_synthetic(1);
        let clients = vec![(ds.clone(), ds.clone())];
        let mut cfg = base_cfg(Strategy::FedAvg, Mode::Safl);
        cfg.num_clients = 1;
        cfg.agg_updates = 1;
        cfg.rounds = 4;
        let out = run_safl(&cfg, &clients, &ds).unwrap();
        // With one client and K = 1 the global model after each round is
        // exactly the client's trained parameters.
        let mut w = out.initial_params.clone();
        for _ in 0..4 {
            let outcome = client::local_train(
                &cfg.model,
                &w,
                &ds,
                &LocalTrainCfg {
                    eta: cfg.hyper.lr_init,
                    momentum: 0.0,
                    epochs: cfg.local_epochs,
                    clip_bound: cfg.hyper.clip_bound,
                    momentum_enabled: false,
                },
                None,
            )
            .unwrap();
            w = outcome.params_end;
        }
        assert_eq!(out.final_params, w);
    }

    #[test]
    fn equal_speeds_and_full_quorum_mean_zero_staleness() {
        // Equal data sizes and speed ratio 1: every wave completes together,
        // so the SAFL barrier coincides with synchronous behavior.
        let ds = tiny_synthetic(2);
        let clients: Vec<(LabeledDataset, LabeledDataset)> = split_clients(&ds, 3, 4)
            .into_iter()
            .map(|(train, _)| {
                let n = train.len().min(20);
                let idx: Vec<usize> = (0..n).collect();
                let trimmed = train.subset(&idx).unwrap();
                (trimmed.clone(), trimmed)
            })
            .collect();
        let mut cfg = base_cfg(Strategy::FedSgd, Mode::Safl);
        cfg.num_clients = 3;
        cfg.agg_updates = 3;
        cfg.speed_ratio = 1.0;
        cfg.rounds = 5;
        let out = run_safl(&cfg, &clients, &ds).unwrap();
        for record in &out.trace.records {
            assert_eq!(record.mean_staleness, 0.0);
        }
    }

    #[test]
    fn safl_trace_is_deterministic() {
        let ds = tiny_synthetic(3);
        let clients = split_clients(&ds, 4, 9);
        let cfg = base_cfg(Strategy::FedQsSgd, Mode::Safl);
        let a = run_safl(&cfg, &clients, &ds).unwrap();
        let b = run_safl(&cfg, &clients, &ds).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert_eq!(a.final_params, b.final_params);
        let mut other = cfg.clone();
        other.seed = 12;
        let c = run_safl(&other, &clients, &ds).unwrap();
        assert_ne!(a.trace.to_csv(), c.trace.to_csv());
    }

    #[test]
    fn update_conservation_holds_after_each_run() {
        let ds = tiny_synthetic(4);
        let clients = split_clients(&ds, 4, 2);
        for strategy in [Strategy::FedQsSgd, Strategy::FedQsAvg, Strategy::FedSgd, Strategy::FedAvg] {
            let cfg = base_cfg(strategy, Mode::Safl);
            let out = run_safl(&cfg, &clients, &ds).unwrap();
            assert_eq!(out.trace.records.len(), cfg.rounds as usize);
            // Buffer is drained the instant it reaches K, so right after the
            // final aggregation the recorded total equals K * rounds.
            assert_eq!(out.table.total_updates(), cfg.agg_updates as u64 * cfg.rounds);
        }
    }

    #[test]
    fn sync_mode_has_zero_staleness_and_barrier_durations() {
        let ds = tiny_synthetic(5);
        let clients = split_clients(&ds, 4, 7);
        let mut cfg = base_cfg(Strategy::FedSgd, Mode::Sync);
        cfg.activation = Some(3);
        let out = run_sync(&cfg, &clients, &ds).unwrap();
        assert_eq!(out.trace.records.len(), cfg.rounds as usize);
        for record in &out.trace.records {
            assert_eq!(record.mean_staleness, 0.0);
        }
        // vtime advances by the slowest activated client each round.
        let mut last = 0.0;
        for record in &out.trace.records {
            assert!(record.vtime > last);
            last = record.vtime;
        }
        // Same seed, same activations, byte-identical trace.
        let again = run_sync(&cfg, &clients, &ds).unwrap();
        assert_eq!(out.trace.to_csv(), again.trace.to_csv());
    }

    #[test]
    fn full_activation_with_identical_data_is_centralized_descent() {
        let ds = tiny_synthetic(6);
        let shard: Vec<usize> = (0..30).collect();
        let shared = ds.subset(&shard).unwrap();
        let clients: Vec<(LabeledDataset, LabeledDataset)> =
            (0..3).map(|_| (shared.clone(), shared.clone())).collect();
        let mut cfg = base_cfg(Strategy::FedSgd, Mode::Sync);
        cfg.num_clients = 3;
        cfg.agg_updates = 3;
        cfg.activation = Some(3);
        cfg.rounds = 5;
        let out = run_sync(&cfg, &clients, &ds).unwrap();
        // Direct descent with the same step budget: eta_g scales the summed
        // per-epoch gradients of each round.
        let mut w = out.initial_params.clone();
        for _ in 0..cfg.rounds {
            let outcome = client::local_train(
                &cfg.model,
                &w,
                &shared,
                &LocalTrainCfg {
                    eta: cfg.hyper.lr_init,
                    momentum: 0.0,
                    epochs: cfg.local_epochs,
                    clip_bound: cfg.hyper.clip_bound,
                    momentum_enabled: false,
                },
                None,
            )
            .unwrap();
            w = w.axpy(-cfg.hyper.eta_g, &outcome.accumulated).unwrap();
        }
        for (a, b) in out.final_params.0.iter().zip(&w.0) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn fedqs_in_sync_mode_is_rejected() {
        let cfg = base_cfg(Strategy::FedQsAvg, Mode::Sync);
        assert!(cfg.check().is_err());
    }

    #[test]
    fn mean_staleness_grows_with_speed_heterogeneity() {
        // Mean staleness saturates near N/K once clients cycle steadily, so
        // the strong signal is homogeneous vs heterogeneous; between
        // heterogeneous ratios the means sit on a plateau.
        let ds = tiny_synthetic(8);
        let clients = split_clients(&ds, 6, 21);
        let mut means = Vec::new();
        for ratio in [1.0, 10.0, 50.0] {
            let mut total = 0.0;
            for seed in 0..5 {
                let mut cfg = base_cfg(Strategy::FedAvg, Mode::Safl);
                cfg.num_clients = 6;
                cfg.agg_updates = 2;
                cfg.rounds = 40;
                cfg.speed_ratio = ratio;
                cfg.seed = seed;
                let out = run_safl(&cfg, &clients, &ds).unwrap();
                total += out
                    .trace
                    .records
                    .iter()
                    .map(|r| r.mean_staleness)
                    .sum::<f64>()
                    / out.trace.records.len() as f64;
            }
            means.push(total / 5.0);
        }
        assert!(
            means[0] < means[1] && means[0] < means[2],
            "heterogeneity did not raise staleness: {means:?}"
        );
        assert!(
            means[1] >= 2.0 * means[0] && means[2] >= 2.0 * means[0],
            "staleness increase too weak: {means:?}"
        );
        assert!(
            (means[2] - means[1]).abs() <= 0.15 * means[1],
            "ratios 10 and 50 should plateau: {means:?}"
        );
    }

    #[test]
    fn replay_round_trips_and_reaggregates() {
        let ds = tiny_synthetic(9);
        let clients = split_clients(&ds, 4, 5);
        let cfg = base_cfg(Strategy::FedQsAvg, Mode::Safl);
        let out = run_safl(&cfg, &clients, &ds).unwrap();
        let bytes = encode_replay(&cfg, &out);
        let replay = decode_replay(&bytes).unwrap();
        assert_eq!(replay.strategy, Strategy::FedQsAvg);
        assert_eq!(replay.rounds.len(), cfg.rounds as usize);
        assert_eq!(replay.final_params, out.final_params);
        verify_replay(&replay).unwrap();
        assert!(decode_replay(&bytes[..bytes.len() - 3]).is_err());
    }
}
