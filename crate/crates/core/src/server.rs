//! Server-side aggregation machinery: the per-client state table, speed and
//! similarity averages, feedback weighting, and the gradient/model
//! aggregation rules for both semi-asynchronous and synchronous operation.

use std::collections::VecDeque;

use crate::client::{BroadcastInfo, LocalUpdate, PayloadKind, UpdatePayload};
use crate::error::{Error, Result};
use crate::numcore::ParamVec;

/// Cap on the similarity ratio `G = s_bar / s_u` when the update's
/// similarity is zero (or the ratio overflows).
pub const DEFAULT_G_CAP: f64 = 100.0;

/// Floor applied to raw aggregation weights before normalization, keeping
/// every normalized weight nonnegative.
pub const RAW_WEIGHT_FLOOR: f64 = 1e-6;

/// Tolerance on the normalized-weight sum.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Per-client participation counts and latest reported similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTable {
    update_counts: Vec<u64>,
    latest_similarity: Vec<f64>,
}

/// Snapshot of the speed shares and averages derived from a state table.
#[derive(Debug, Clone, PartialEq)]
pub struct Averages {
    /// Per-client speed shares `f_i`; uniform `1/N` before any update.
    pub f: Vec<f64>,
    /// Always `1/N`: the shares sum to one by construction.
    pub f_bar: f64,
    /// Mean of the latest similarities over all `N` clients (including the
    /// never-seen ones, whose entry is zero).
    pub s_bar: f64,
}

impl StateTable {
    pub fn new(num_clients: usize) -> Self {
        StateTable {
            update_counts: vec![0; num_clients],
            latest_similarity: vec![0.0; num_clients],
        }
    }

    pub fn num_clients(&self) -> usize {
        self.update_counts.len()
    }

    pub fn update_count(&self, client: usize) -> u64 {
        self.update_counts[client]
    }

    pub fn latest_similarity(&self, client: usize) -> f64 {
        self.latest_similarity[client]
    }

    pub fn total_updates(&self) -> u64 {
        self.update_counts.iter().sum()
    }

    /// Record a received update: bump the client's count and replace its
    /// latest similarity. Other rows are untouched.
    pub fn record_update(&mut self, update: &LocalUpdate) -> Result<()> {
        let id = update.client_id;
        if id >= self.num_clients() {
            return Err(Error::UnknownClient {
                id,
                population: self.num_clients(),
            });
        }
        self.update_counts[id] += 1;
        self.latest_similarity[id] = update.similarity;
        Ok(())
    }

    /// Speed shares and averages. With no updates recorded yet every share
    /// is `1/N`.
    pub fn averages(&self) -> Averages {
        let n = self.num_clients() as f64;
        let total = self.total_updates();
        let f: Vec<f64> = if total == 0 {
            vec![1.0 / n; self.num_clients()]
        } else {
            self.update_counts
                .iter()
                .map(|&c| c as f64 / total as f64)
                .collect()
        };
        let f_bar = f.iter().sum::<f64>() / n;
        let s_bar = self.latest_similarity.iter().sum::<f64>() / n;
        Averages { f, f_bar, s_bar }
    }
}

/// FIFO buffer of pending updates; aggregation consumes the oldest `K`.
#[derive(Debug, Clone, Default)]
pub struct AggBuffer {
    pending: VecDeque<LocalUpdate>,
}

impl AggBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, update: LocalUpdate) {
        self.pending.push_back(update);
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Remove and return the first `k` pending updates in arrival order.
    pub fn take_batch(&mut self, k: usize) -> Result<Vec<LocalUpdate>> {
        if self.pending.len() < k {
            return Err(Error::Invariant(format!(
                "aggregation asked for {} updates with only {} pending",
                k,
                self.pending.len()
            )));
        }
        Ok(self.pending.drain(..k).collect())
    }
}

/// The global model, its round counter, and the synchronous-mode global
/// learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub round: u64,
    pub params: ParamVec,
    /// Global learning rate; used only by the synchronous gradient rule.
    pub eta_g: f64,
}

impl GlobalState {
    pub fn new(params: ParamVec, eta_g: f64) -> Self {
        GlobalState {
            round: 0,
            params,
            eta_g,
        }
    }
}

/// Aggregation weights for one K-batch.
///
/// Every update starts at its data share `n_i / n`. Updates carrying the
/// feedback flag are rescaled to `exp(phi - F) / 2^(phi - F) * (1 + G)^2 / K`
/// with `phi = K / N`, `F = f_bar / f_u`, and `G = s_bar / s_u`, where the
/// shares come from the post-recording state table. Raw weights are floored
/// and normalized to sum to one.
pub fn compute_weights(
    batch: &[LocalUpdate],
    table: &StateTable,
    k: usize,
    num_clients: usize,
    g_cap: f64,
) -> Result<Vec<f64>> {
    if batch.len() != k {
        return Err(Error::Invariant(format!(
            "weight computation over {} updates, expected K = {}",
            batch.len(),
            k
        )));
    }
    let n: usize = batch.iter().map(|u| u.n_i).sum();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "batch carries zero total samples".into(),
        ));
    }
    let averages = table.averages();
    let phi = k as f64 / num_clients as f64;
    let mut raw: Vec<f64> = Vec::with_capacity(k);
    for update in batch {
        let mut weight = update.n_i as f64 / n as f64;
        if update.feedback {
            let f_u = averages.f[update.client_id];
            if !(f_u > 0.0) {
                return Err(Error::Invariant(format!(
                    "feedback client {} has zero speed share after recording",
                    update.client_id
                )));
            }
            let speed_ratio = averages.f_bar / f_u;
            let g = crate::client::similarity_ratio(averages.s_bar, update.similarity, g_cap);
            let x = phi - speed_ratio;
            weight = x.exp() / 2f64.powf(x) * (1.0 + g) * (1.0 + g) / k as f64;
        }
        raw.push(weight.max(RAW_WEIGHT_FLOOR));
    }
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::Invariant(format!(
            "normalized weights sum to {} (off by {:e})",
            sum,
            (sum - 1.0).abs()
        )));
    }
    Ok(weights)
}

fn expect_payload<'a>(update: &'a LocalUpdate, kind: PayloadKind) -> Result<&'a ParamVec> {
    match (&update.payload, kind) {
        (UpdatePayload::PseudoGrad(v), PayloadKind::Gradient) => Ok(v),
        (UpdatePayload::Params(v), PayloadKind::Model) => Ok(v),
        (other, _) => Err(Error::PayloadMismatch(format!(
            "client {} sent {:?} under the {:?} aggregation route",
            update.client_id,
            match other {
                UpdatePayload::PseudoGrad(_) => "a pseudo-gradient",
                UpdatePayload::Params(_) => "model parameters",
            },
            kind
        ))),
    }
}

/// Gradient-route aggregation:
/// `w_g <- w_g - sum_u p_u * eta_u * payload_u`, then advance the round.
pub fn aggregate_sgd(
    state: &mut GlobalState,
    batch: &[LocalUpdate],
    weights: &[f64],
) -> Result<()> {
    if batch.len() != weights.len() {
        return Err(Error::Invariant(format!(
            "{} updates vs {} weights",
            batch.len(),
            weights.len()
        )));
    }
    let mut next = state.params.clone();
    for (update, &p) in batch.iter().zip(weights) {
        let payload = expect_payload(update, PayloadKind::Gradient)?;
        next.axpy_inplace(-(p * update.eta_used), payload)?;
    }
    state.params = next;
    state.round += 1;
    Ok(())
}

/// Model-route aggregation: `w_g <- sum_u p_u * payload_u`.
pub fn aggregate_avg(
    state: &mut GlobalState,
    batch: &[LocalUpdate],
    weights: &[f64],
) -> Result<()> {
    if batch.len() != weights.len() {
        return Err(Error::Invariant(format!(
            "{} updates vs {} weights",
            batch.len(),
            weights.len()
        )));
    }
    let mut next = ParamVec::zeros(state.params.len());
    for (update, &p) in batch.iter().zip(weights) {
        let payload = expect_payload(update, PayloadKind::Model)?;
        next.axpy_inplace(p, payload)?;
    }
    state.params = next;
    state.round += 1;
    Ok(())
}

/// Synchronous-FL aggregation: data-size weights only, no feedback, no
/// state-table weighting. The gradient rule applies the global learning
/// rate `eta_g`; the model rule averages parameters. Every update must come
/// from the current round.
pub fn aggregate_sync(
    state: &mut GlobalState,
    batch: &[LocalUpdate],
    kind: PayloadKind,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty synchronous batch".into()));
    }
    for update in batch {
        if update.base_round != state.round {
            return Err(Error::StaleSyncUpdate {
                client: update.client_id,
                base_round: update.base_round,
                round: state.round,
            });
        }
    }
    let n: usize = batch.iter().map(|u| u.n_i).sum();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "batch carries zero total samples".into(),
        ));
    }
    match kind {
        PayloadKind::Gradient => {
            let mut next = state.params.clone();
            for update in batch {
                let payload = expect_payload(update, PayloadKind::Gradient)?;
                let share = update.n_i as f64 / n as f64;
                next.axpy_inplace(-(state.eta_g * share), payload)?;
            }
            state.params = next;
        }
        PayloadKind::Model => {
            let mut next = ParamVec::zeros(state.params.len());
            for update in batch {
                let payload = expect_payload(update, PayloadKind::Model)?;
                next.axpy_inplace(update.n_i as f64 / n as f64, payload)?;
            }
            state.params = next;
        }
    }
    state.round += 1;
    Ok(())
}

/// Immutable per-client broadcast snapshots of the current global model and
/// table averages.
pub fn make_broadcast(state: &GlobalState, table: &StateTable) -> Vec<BroadcastInfo> {
    let averages = table.averages();
    (0..table.num_clients())
        .map(|i| BroadcastInfo {
            round: state.round,
            global_params: state.params.clone(),
            f_bar: averages.f_bar,
            s_bar: averages.s_bar,
            f_i: averages.f[i],
        })
        .collect()
}

/// Broadcast snapshot for a single client.
pub fn broadcast_for(state: &GlobalState, table: &StateTable, client: usize) -> BroadcastInfo {
    let averages = table.averages();
    BroadcastInfo {
        round: state.round,
        global_params: state.params.clone(),
        f_bar: averages.f_bar,
        s_bar: averages.s_bar,
        f_i: averages.f[client],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grad_update(client_id: usize, values: Vec<f64>, eta: f64, n_i: usize) -> LocalUpdate {
        LocalUpdate {
            client_id,
            base_round: 0,
            payload: UpdatePayload::PseudoGrad(ParamVec(values)),
            eta_used: eta,
            similarity: 0.5,
            feedback: false,
            n_i,
        }
    }

    fn model_update(client_id: usize, values: Vec<f64>, n_i: usize) -> LocalUpdate {
        LocalUpdate {
            client_id,
            base_round: 0,
            payload: UpdatePayload::Params(ParamVec(values)),
            eta_used: 0.1,
            similarity: 0.5,
            feedback: false,
            n_i,
        }
    }

    #[test]
    fn record_update_tracks_counts_and_latest_similarity() {
        let mut table = StateTable::new(5);
        let mut u = grad_update(3, vec![0.0], 0.1, 4);
        u.similarity = 0.4;
        table.record_update(&u).unwrap();
        assert_eq!(table.update_count(3), 1);
        assert_eq!(table.latest_similarity(3), 0.4);
        for other in [0, 1, 2, 4] {
            assert_eq!(table.update_count(other), 0);
            assert_eq!(table.latest_similarity(other), 0.0);
        }
        u.similarity = 0.6;
        table.record_update(&u).unwrap();
        assert_eq!(table.update_count(3), 2);
        assert_eq!(table.latest_similarity(3), 0.6);
    }

    #[test]
    fn record_update_rejects_unknown_clients() {
        let mut table = StateTable::new(2);
        let u = grad_update(2, vec![0.0], 0.1, 1);
        assert!(matches!(
            table.record_update(&u),
            Err(Error::UnknownClient { id: 2, population: 2 })
        ));
    }

    #[test]
    fn averages_match_hand_arithmetic() {
        let mut table = StateTable::new(4);
        for (client, count) in [(0usize, 1usize), (1, 2), (2, 3), (3, 4)] {
            for _ in 0..count {
                let mut u = grad_update(client, vec![0.0], 0.1, 1);
                u.similarity = 0.5;
                table.record_update(&u).unwrap();
            }
        }
        let a = table.averages();
        assert_eq!(a.f, vec![0.1, 0.2, 0.3, 0.4]);
        assert_relative_eq!(a.f_bar, 0.25, epsilon = 1e-15);
        assert_relative_eq!(a.s_bar, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cold_start_shares_are_uniform() {
        let table = StateTable::new(8);
        let a = table.averages();
        assert!(a.f.iter().all(|&f| f == 0.125));
        assert_relative_eq!(a.f_bar, 0.125, epsilon = 1e-15);
        assert_eq!(a.s_bar, 0.0);
    }

    #[test]
    fn f_bar_is_reciprocal_population_after_any_updates() {
        let mut table = StateTable::new(7);
        for i in 0..30 {
            table.record_update(&grad_update(i % 7, vec![0.0], 0.1, 1)).unwrap();
            let a = table.averages();
            assert_relative_eq!(a.f_bar, 1.0 / 7.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_batch_gets_uniform_weights() {
        let table = {
            let mut t = StateTable::new(10);
            for i in 0..10 {
                t.record_update(&grad_update(i, vec![0.0], 0.1, 5)).unwrap();
            }
            t
        };
        let batch: Vec<LocalUpdate> = (0..10).map(|i| grad_update(i, vec![0.0], 0.1, 5)).collect();
        let w = compute_weights(&batch, &table, 10, 10, DEFAULT_G_CAP).unwrap();
        for p in &w {
            assert_relative_eq!(*p, 0.1, epsilon = 1e-12);
        }
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    /// Build a table/batch where one feedback client has exactly the given
    /// speed ratio F and similarity ratio G, then return its raw weight by
    /// un-normalizing against a known companion batch.
    fn raw_feedback_weight(k: usize, num_clients: usize, want_f: f64, want_g: f64) -> f64 {
        // One update per client in the batch; the feedback client is 0.
        // With every client recorded the same number of times, f_u = 1/N and
        // F = f_bar / f_u = 1. Scale the feedback client's recording count
        // to hit other ratios.
        assert_eq!(want_f, 1.0, "helper only supports F = 1");
        let mut table = StateTable::new(num_clients);
        let s_i = 0.5;
        let s_bar_target = want_g * s_i; // since G = s_bar / s_i
        // Set every client's similarity to the same value so s_bar comes out
        // exactly at target: mean of N equal values.
        for c in 0..num_clients {
            let mut u = grad_update(c, vec![0.0], 0.1, 1);
            u.similarity = s_bar_target;
            table.record_update(&u).unwrap();
        }
        let mut batch: Vec<LocalUpdate> = (0..k).map(|c| grad_update(c, vec![0.0], 0.1, 1)).collect();
        batch[0].feedback = true;
        batch[0].similarity = s_i;
        let w = compute_weights(&batch, &table, k, num_clients, DEFAULT_G_CAP).unwrap();
        // All k-1 companions have raw weight 1/k each; solve the
        // normalization for the feedback client's raw weight.
        let companion_raw = 1.0 / k as f64;
        let companions: f64 = companion_raw * (k - 1) as f64;
        w[0] * companions / (1.0 - w[0])
    }

    #[test]
    fn feedback_weight_with_zero_exponent() {
        // F = phi and G = 1 kill the exponential ratio: raw = (1+1)^2 / K.
        // Use K = N so phi = 1 = F.
        let raw = raw_feedback_weight(10, 10, 1.0, 1.0);
        assert_relative_eq!(raw, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn feedback_weight_matches_high_precision_arithmetic() {
        // phi = 0.1, F = 1, G = 1, K = 10:
        // raw = (e/2)^(-0.9) * 0.4 = 0.30347432471669846...
        let raw = raw_feedback_weight(10, 100, 1.0, 1.0);
        assert_relative_eq!(raw, 0.3034743247166984, epsilon = 1e-9);
    }

    #[test]
    fn feedback_weight_monotone_in_g_and_antitone_in_f() {
        // The raw rule exp(phi - F)/2^(phi - F) * (1+G)^2/K, evaluated
        // directly on a grid: increasing in G, decreasing in F past phi.
        let phi = 0.1;
        let k = 10.0;
        let raw = |f: f64, g: f64| {
            let x: f64 = phi - f;
            x.exp() / 2f64.powf(x) * (1.0 + g) * (1.0 + g) / k
        };
        let mut prev = 0.0;
        for step in 0..50 {
            let g = 0.1 + step as f64 * 0.2;
            let w = raw(1.0, g);
            assert!(w > prev);
            prev = w;
        }
        let mut prev = f64::INFINITY;
        for step in 0..50 {
            let f = phi + step as f64 * 0.25;
            let w = raw(f, 1.0);
            assert!(w < prev, "raw weight not decreasing at F = {f}");
            prev = w;
        }
    }

    #[test]
    fn zero_similarity_ratio_is_capped() {
        let mut table = StateTable::new(4);
        for c in 0..4 {
            let mut u = grad_update(c, vec![0.0], 0.1, 1);
            u.similarity = 0.5;
            table.record_update(&u).unwrap();
        }
        let mut batch: Vec<LocalUpdate> = (0..4).map(|c| grad_update(c, vec![0.0], 0.1, 1)).collect();
        batch[0].feedback = true;
        batch[0].similarity = 0.0; // s_bar > 0 here, so G caps at 100
        let w = compute_weights(&batch, &table, 4, 4, DEFAULT_G_CAP).unwrap();
        assert!(w.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // The capped client dominates but does not blow up.
        assert!(w[0] > 0.9 && w[0] < 1.0);
    }

    #[test]
    fn weights_reject_empty_sample_counts() {
        let table = StateTable::new(2);
        let batch = vec![grad_update(0, vec![0.0], 0.1, 0), grad_update(1, vec![0.0], 0.1, 0)];
        assert!(compute_weights(&batch, &table, 2, 2, DEFAULT_G_CAP).is_err());
    }

    #[test]
    fn sgd_aggregation_single_term() {
        let mut state = GlobalState::new(ParamVec(vec![1.0]), 1.0);
        let batch = vec![grad_update(0, vec![2.0], 0.1, 1)];
        aggregate_sgd(&mut state, &batch, &[1.0]).unwrap();
        assert_relative_eq!(state.params.0[0], 0.8, epsilon = 1e-15);
        assert_eq!(state.round, 1);
    }

    #[test]
    fn sgd_aggregation_zero_and_cancelling_payloads() {
        let mut state = GlobalState::new(ParamVec(vec![0.5, -0.5]), 1.0);
        let baseline = state.params.clone();
        let batch = vec![
            grad_update(0, vec![0.0, 0.0], 0.1, 1),
            grad_update(1, vec![0.0, 0.0], 0.1, 1),
        ];
        aggregate_sgd(&mut state, &batch, &[0.5, 0.5]).unwrap();
        assert_eq!(state.params, baseline);
        assert_eq!(state.round, 1);
        let batch = vec![
            grad_update(0, vec![3.0, -1.0], 0.2, 1),
            grad_update(1, vec![-3.0, 1.0], 0.2, 1),
        ];
        aggregate_sgd(&mut state, &batch, &[0.5, 0.5]).unwrap();
        assert_eq!(state.params, baseline);
    }

    #[test]
    fn sgd_aggregation_rejects_model_payloads() {
        let mut state = GlobalState::new(ParamVec(vec![0.0]), 1.0);
        let batch = vec![model_update(0, vec![1.0], 1)];
        assert!(matches!(
            aggregate_sgd(&mut state, &batch, &[1.0]),
            Err(Error::PayloadMismatch(_))
        ));
    }

    #[test]
    fn avg_aggregation_examples() {
        let mut state = GlobalState::new(ParamVec(vec![9.0]), 1.0);
        let batch = vec![model_update(0, vec![1.0], 1), model_update(1, vec![3.0], 1)];
        aggregate_avg(&mut state, &batch, &[0.5, 0.5]).unwrap();
        assert_relative_eq!(state.params.0[0], 2.0, epsilon = 1e-15);

        // Convex-combination fixed point.
        let mut state = GlobalState::new(ParamVec(vec![0.7]), 1.0);
        let batch = vec![model_update(0, vec![0.7], 1), model_update(1, vec![0.7], 1)];
        aggregate_avg(&mut state, &batch, &[0.25, 0.75]).unwrap();
        assert_relative_eq!(state.params.0[0], 0.7, epsilon = 1e-15);

        // Degenerate weights pick one payload exactly.
        let mut state = GlobalState::new(ParamVec(vec![0.0]), 1.0);
        let batch = vec![model_update(0, vec![4.0], 1), model_update(1, vec![-4.0], 1)];
        aggregate_avg(&mut state, &batch, &[1.0, 0.0]).unwrap();
        assert_eq!(state.params.0[0], 4.0);
    }

    #[test]
    fn avg_aggregation_stays_in_the_hull() {
        let mut state = GlobalState::new(ParamVec(vec![0.0, 0.0]), 1.0);
        let batch = vec![
            model_update(0, vec![1.0, -2.0], 1),
            model_update(1, vec![3.0, 4.0], 3),
        ];
        let table = {
            let mut t = StateTable::new(2);
            t.record_update(&batch[0]).unwrap();
            t.record_update(&batch[1]).unwrap();
            t
        };
        let w = compute_weights(&batch, &table, 2, 2, DEFAULT_G_CAP).unwrap();
        aggregate_avg(&mut state, &batch, &w).unwrap();
        for (coord, value) in state.params.0.iter().enumerate() {
            let lo = batch
                .iter()
                .map(|u| u.payload.vector().0[coord])
                .fold(f64::INFINITY, f64::min);
            let hi = batch
                .iter()
                .map(|u| u.payload.vector().0[coord])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(*value >= lo - 1e-12 && *value <= hi + 1e-12);
        }
    }

    #[test]
    fn sync_aggregation_rules() {
        // Single client, model rule: global becomes that client's params.
        let mut state = GlobalState::new(ParamVec(vec![0.0]), 0.5);
        aggregate_sync(&mut state, &[model_update(0, vec![2.5], 3)], PayloadKind::Model).unwrap();
        assert_eq!(state.params.0[0], 2.5);

        // Gradient rule with eta_g = 0 leaves the model unchanged.
        let mut state = GlobalState::new(ParamVec(vec![1.0]), 0.0);
        aggregate_sync(&mut state, &[grad_update(0, vec![5.0], 0.1, 2)], PayloadKind::Gradient)
            .unwrap();
        assert_eq!(state.params.0[0], 1.0);

        // Two clients n = (1, 3): weights 0.25 / 0.75.
        let mut state = GlobalState::new(ParamVec(vec![0.0]), 1.0);
        let batch = vec![grad_update(0, vec![4.0], 0.1, 1), grad_update(1, vec![8.0], 0.1, 3)];
        aggregate_sync(&mut state, &batch, PayloadKind::Gradient).unwrap();
        assert_relative_eq!(state.params.0[0], -(0.25 * 4.0 + 0.75 * 8.0), epsilon = 1e-12);
    }

    #[test]
    fn sync_aggregation_rejects_stale_updates() {
        let mut state = GlobalState::new(ParamVec(vec![0.0]), 1.0);
        state.round = 3;
        let mut u = model_update(0, vec![1.0], 1);
        u.base_round = 2;
        assert!(matches!(
            aggregate_sync(&mut state, &[u], PayloadKind::Model),
            Err(Error::StaleSyncUpdate { .. })
        ));
    }

    #[test]
    fn broadcast_is_a_pure_snapshot() {
        let mut table = StateTable::new(3);
        let state = GlobalState::new(ParamVec(vec![1.0, 2.0]), 1.0);
        let fresh = make_broadcast(&state, &table);
        assert_eq!(fresh.len(), 3);
        for info in &fresh {
            assert_relative_eq!(info.f_i, 1.0 / 3.0, epsilon = 1e-15);
            assert_eq!(info.round, 0);
        }
        let issued = fresh[1].clone();
        table.record_update(&grad_update(1, vec![0.0], 0.1, 1)).unwrap();
        // Recording afterwards does not mutate the issued snapshot.
        assert_eq!(issued, fresh[1]);
        let refreshed = broadcast_for(&state, &table, 1);
        assert_eq!(refreshed.f_i, 1.0);
    }

    #[test]
    fn no_feedback_equals_data_share_weights() {
        let table = {
            let mut t = StateTable::new(3);
            for c in 0..3 {
                t.record_update(&grad_update(c, vec![0.0], 0.1, c + 1)).unwrap();
            }
            t
        };
        let batch = vec![
            grad_update(0, vec![0.0], 0.1, 2),
            grad_update(1, vec![0.0], 0.1, 2),
            grad_update(2, vec![0.0], 0.1, 4),
        ];
        let w = compute_weights(&batch, &table, 3, 3, DEFAULT_G_CAP).unwrap();
        assert_relative_eq!(w[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(w[1], 0.25, epsilon = 1e-12);
        assert_relative_eq!(w[2], 0.5, epsilon = 1e-12);
    }
}
