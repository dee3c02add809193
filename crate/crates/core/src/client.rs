//! Client-side protocol logic: pseudo-global gradients, update similarity,
//! quadrant classification, learning-rate/momentum adaptation, and momentum
//! local training.
//!
//! A client keeps the latest two global models it has received. The
//! difference of those two models acts as a pseudo-global gradient; comparing
//! it with the client's own parameter displacement yields the update
//! similarity `s_i` that drives classification. Together with the update
//! speed share `f_i` broadcast by the server, each client falls into one of
//! four quadrants and adjusts its learning rate, momentum rate, and feedback
//! flag accordingly before the next local training round.

use crate::error::{Error, Result};
use crate::numcore::{self, LabeledDataset, ModelSpec, ParamVec};

/// Similarity measure between the local and pseudo-global update directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityKind {
    #[default]
    Cosine,
    Euclidean,
    Manhattan,
}

/// The four client types, split by update speed (fast vs straggling) and
/// update alignment (biased vs unbiased).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrant {
    /// Fast-but-Biased: quick updates that deviate from the global direction.
    FastBiased,
    /// Fast-and-Unbiased.
    FastUnbiased,
    /// Straggling-and-Unbiased.
    StragglingUnbiased,
    /// Straggling-and-Biased.
    StragglingBiased,
}

/// Snapshot the server hands to a client when it pulls the global model.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastInfo {
    pub round: u64,
    pub global_params: ParamVec,
    /// Mean update-speed share; equals `1/N` by construction.
    pub f_bar: f64,
    /// Mean of the latest reported similarities over all clients.
    pub s_bar: f64,
    /// The receiving client's own speed share.
    pub f_i: f64,
}

/// Strategy-dependent body of a client's pushed update.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdatePayload {
    /// Accumulated (momentum-inclusive, clipped) gradient sum over the local
    /// epochs — the gradient-aggregation route.
    PseudoGrad(ParamVec),
    /// Final local model parameters — the model-aggregation route.
    Params(ParamVec),
}

impl UpdatePayload {
    pub fn vector(&self) -> &ParamVec {
        match self {
            UpdatePayload::PseudoGrad(v) | UpdatePayload::Params(v) => v,
        }
    }
}

/// The message a client pushes to the server after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub client_id: usize,
    /// Round index of the global model this update was trained from.
    pub base_round: u64,
    pub payload: UpdatePayload,
    pub eta_used: f64,
    pub similarity: f64,
    pub feedback: bool,
    pub n_i: usize,
}

/// Per-client mutable state owned by the simulation engine.
#[derive(Debug, Clone)]
pub struct ClientRuntime {
    pub id: usize,
    pub train_set: LabeledDataset,
    pub val_set: LabeledDataset,
    pub eta: f64,
    pub momentum: f64,
    /// Latest global model received.
    pub global_now: ParamVec,
    /// The global model received before that, if any.
    pub global_prev: Option<ParamVec>,
    /// Round index of `global_now`.
    pub base_round: u64,
    pub quadrant: Option<Quadrant>,
    pub feedback: bool,
    pub momentum_enabled: bool,
    /// Similarity of the most recent pushed update; 1 before the first push.
    pub last_similarity: f64,
    /// Momentum velocity carried across rounds when carryover is enabled.
    pub velocity: ParamVec,
}

impl ClientRuntime {
    pub fn new(
        id: usize,
        train_set: LabeledDataset,
        val_set: LabeledDataset,
        initial_global: ParamVec,
        eta0: f64,
        eta_min: f64,
        eta_max: f64,
        momentum0: f64,
    ) -> Self {
        let param_len = initial_global.len();
        ClientRuntime {
            id,
            train_set,
            val_set,
            eta: eta0.clamp(eta_min, eta_max),
            momentum: momentum0,
            global_now: initial_global,
            global_prev: None,
            base_round: 0,
            quadrant: None,
            feedback: false,
            momentum_enabled: false,
            last_similarity: 1.0,
            velocity: ParamVec::zeros(param_len),
        }
    }

    pub fn n_i(&self) -> usize {
        self.train_set.len()
    }

    /// Store a newly received global model, retiring the previous one.
    pub fn receive_global(&mut self, params: ParamVec, round: u64) {
        let old = std::mem::replace(&mut self.global_now, params);
        self.global_prev = Some(old);
        self.base_round = round;
    }
}

/// Difference of the two latest received global models. Absent a previous
/// model (first round) the pseudo-global gradient is zero.
pub fn pseudo_global_gradient(
    global_now: &ParamVec,
    global_prev: Option<&ParamVec>,
) -> Result<ParamVec> {
    match global_prev {
        Some(prev) => global_now.sub(prev),
        None => Ok(ParamVec::zeros(global_now.len())),
    }
}

/// Similarity between two vectors, arranged so larger always means more
/// aligned: cosine in [-1, 1] (1 when either norm vanishes), and `1/(1+d)`
/// in (0, 1] for the distance-based kinds.
pub fn similarity(u: &ParamVec, v: &ParamVec, kind: SimilarityKind) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "similarity operands of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(match kind {
        SimilarityKind::Cosine => {
            let nu = u.norm();
            let nv = v.norm();
            if nu == 0.0 || nv == 0.0 {
                1.0
            } else {
                (u.dot(v)? / (nu * nv)).clamp(-1.0, 1.0)
            }
        }
        SimilarityKind::Euclidean => {
            let d = u.sub(v)?.norm();
            1.0 / (1.0 + d)
        }
        SimilarityKind::Manhattan => {
            let d: f64 = u
                .as_slice()
                .iter()
                .zip(v.as_slice())
                .map(|(a, b)| (a - b).abs())
                .sum();
            1.0 / (1.0 + d)
        }
    })
}

/// Quadrant assignment. "Fast" is strict (`f_i > f_bar`); "unbiased" is
/// inclusive (`s_i >= s_bar`), so a perfectly average client counts as a
/// straggling-unbiased one.
pub fn classify(f_i: f64, f_bar: f64, s_i: f64, s_bar: f64) -> Quadrant {
    let fast = f_i > f_bar;
    let unbiased = s_i >= s_bar;
    match (fast, unbiased) {
        (true, false) => Quadrant::FastBiased,
        (true, true) => Quadrant::FastUnbiased,
        (false, true) => Quadrant::StragglingUnbiased,
        (false, false) => Quadrant::StragglingBiased,
    }
}

/// Spread of per-class recall of a model over a validation set: the gap
/// between the best- and worst-recalled class among classes present.
pub fn validation_spread(
    spec: &ModelSpec,
    params: &ParamVec,
    val: &LabeledDataset,
) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let predictions = numcore::predict(spec, params, val)?;
    Ok(recall_spread(&predictions, &val.labels, spec.num_classes()))
}

/// Max minus min per-class recall over the classes present in `labels`.
pub fn recall_spread(predictions: &[usize], labels: &[usize], num_classes: usize) -> f64 {
    let mut correct = vec![0usize; num_classes];
    let mut total = vec![0usize; num_classes];
    for (&pred, &label) in predictions.iter().zip(labels) {
        total[label] += 1;
        if pred == label {
            correct[label] += 1;
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in 0..num_classes {
        if total[c] > 0 {
            let recall = correct[c] as f64 / total[c] as f64;
            lo = lo.min(recall);
            hi = hi.max(recall);
        }
    }
    if hi.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Knobs for [`adapt`]: change rates, clamp intervals, the SBC validation
/// threshold, and the ablation toggles.
#[derive(Debug, Clone, Copy)]
pub struct AdaptParams {
    /// Learning-rate change rate (`a`).
    pub lr_adjust_rate: f64,
    /// Base momentum rate (`m0`).
    pub momentum_base: f64,
    /// Momentum change speed (`k`).
    pub momentum_gain: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    /// Momentum clipping boundary (`theta`).
    pub momentum_cap: f64,
    /// Recall-spread threshold separating the two straggling-biased cases.
    pub spread_threshold: f64,
    /// Ablation: disable the momentum term everywhere.
    pub use_momentum: bool,
    /// Ablation: never raise the feedback flag.
    pub use_feedback: bool,
}

/// Speed ratio `F = f_bar / f_i` and similarity ratio `G = s_bar / s_i`,
/// with the division-by-zero guards shared by adaptation and weighting:
/// `G = 1` when both similarities are zero, and a huge `G` when only the
/// client's similarity vanishes.
pub fn similarity_ratio(s_bar: f64, s_i: f64, g_cap: f64) -> f64 {
    if s_i == 0.0 {
        if s_bar == 0.0 {
            1.0
        } else {
            g_cap
        }
    } else {
        let g = s_bar / s_i;
        if g.is_finite() {
            g
        } else {
            g_cap
        }
    }
}

fn momentum_rate(p: &AdaptParams, g: f64) -> f64 {
    // With a zero gain the ratio term must not contribute (it can be inf).
    let raw = if p.momentum_gain == 0.0 {
        p.momentum_base
    } else {
        p.momentum_base + p.momentum_gain * (1.0 / g - 1.0)
    };
    raw.clamp(0.0, p.momentum_cap)
}

/// Per-round client adaptation: classify, then adjust the learning rate,
/// momentum rate, feedback flag, and momentum switch according to the
/// client's quadrant. Returns the assigned quadrant.
pub fn adapt(
    rt: &mut ClientRuntime,
    spec: &ModelSpec,
    info: &BroadcastInfo,
    s_i: f64,
    p: &AdaptParams,
) -> Result<Quadrant> {
    if !(info.f_i > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "nonpositive speed share {} for client {}",
            info.f_i, rt.id
        )));
    }
    let quadrant = classify(info.f_i, info.f_bar, s_i, info.s_bar);
    let speed_ratio = info.f_bar / info.f_i;
    let g = similarity_ratio(info.s_bar, s_i, f64::INFINITY);
    match quadrant {
        Quadrant::FastBiased => {
            // Learning rate untouched; ask the server to reweight instead.
            rt.feedback = p.use_feedback;
            rt.momentum_enabled = false;
        }
        Quadrant::FastUnbiased => {
            rt.eta = (rt.eta - p.lr_adjust_rate * speed_ratio).clamp(p.eta_min, p.eta_max);
            rt.momentum = momentum_rate(p, g);
            rt.momentum_enabled = p.use_momentum;
            rt.feedback = false;
        }
        Quadrant::StragglingUnbiased => {
            rt.eta = (rt.eta + p.lr_adjust_rate * speed_ratio).clamp(p.eta_min, p.eta_max);
            rt.momentum = momentum_rate(p, g);
            rt.momentum_enabled = p.use_momentum;
            rt.feedback = false;
        }
        Quadrant::StragglingBiased => {
            rt.eta = (rt.eta + p.lr_adjust_rate * speed_ratio).clamp(p.eta_min, p.eta_max);
            let spread = validation_spread(spec, &info.global_params, &rt.val_set)?;
            if spread <= p.spread_threshold {
                // The global model treats every label alike: a plain
                // straggler, handled like the unbiased case.
                rt.momentum = momentum_rate(p, g);
                rt.momentum_enabled = p.use_momentum;
                rt.feedback = false;
            } else {
                // Dispersed local distribution: fall back to feedback.
                rt.feedback = p.use_feedback;
                rt.momentum_enabled = false;
            }
        }
    }
    rt.quadrant = Some(quadrant);
    Ok(quadrant)
}

/// Options for one local training call.
#[derive(Debug, Clone, Copy)]
pub struct LocalTrainCfg {
    pub eta: f64,
    pub momentum: f64,
    pub epochs: u32,
    pub clip_bound: f64,
    pub momentum_enabled: bool,
}

/// Result of local training: the final parameters, the accumulated
/// (momentum-inclusive) step sum, and the final momentum velocity.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params_end: ParamVec,
    pub accumulated: ParamVec,
    pub velocity: ParamVec,
}

/// Momentum gradient descent driven by an arbitrary gradient oracle.
///
/// Per epoch: `v <- m * v + g`, `w <- w - eta * v`, with the velocity
/// starting from `carry_in` (zero when absent). The identity
/// `params_end = start - eta * accumulated` holds bit-exactly because every
/// iterate is recomputed from `start` and the running step sum.
pub fn train_with_gradient(
    grad_fn: impl FnMut(&ParamVec) -> Result<ParamVec>,
    start: &ParamVec,
    cfg: &LocalTrainCfg,
    carry_in: Option<&ParamVec>,
) -> Result<TrainOutcome> {
    let mut grad_fn = grad_fn;
    if cfg.epochs < 1 {
        return Err(Error::InvalidArgument("need at least one local epoch".into()));
    }
    if !(cfg.eta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            cfg.eta
        )));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::InvalidArgument(format!(
            "momentum rate must be in [0, 1), got {}",
            cfg.momentum
        )));
    }
    let m = if cfg.momentum_enabled { cfg.momentum } else { 0.0 };
    let mut velocity = match carry_in {
        Some(v) if v.len() == start.len() => v.clone(),
        Some(v) => {
            return Err(Error::DimensionMismatch(format!(
                "carried velocity of length {} vs {} params",
                v.len(),
                start.len()
            )))
        }
        None => ParamVec::zeros(start.len()),
    };
    let mut accumulated = ParamVec::zeros(start.len());
    for _ in 0..cfg.epochs {
        let w = start.axpy(-cfg.eta, &accumulated)?;
        let g = crate::numcore::clip_gradient(&grad_fn(&w)?, cfg.clip_bound)?;
        velocity = g.axpy(m, &velocity)?;
        accumulated.axpy_inplace(1.0, &velocity)?;
    }
    let params_end = start.axpy(-cfg.eta, &accumulated)?;
    Ok(TrainOutcome {
        params_end,
        accumulated,
        velocity,
    })
}

/// Local training on a client dataset with the model's analytic gradient.
pub fn local_train(
    spec: &ModelSpec,
    start: &ParamVec,
    data: &LabeledDataset,
    cfg: &LocalTrainCfg,
    carry_in: Option<&ParamVec>,
) -> Result<TrainOutcome> {
    train_with_gradient(|w| numcore::gradient(spec, w, data), start, cfg, carry_in)
}

/// Similarity between the client's parameter displacement and the
/// pseudo-global gradient. Defined as 1 on the first round (no previous
/// global model to compare against).
pub fn local_similarity(
    rt: &ClientRuntime,
    params_end: &ParamVec,
    kind: SimilarityKind,
) -> Result<f64> {
    match rt.global_prev.as_ref() {
        None => Ok(1.0),
        Some(prev) => {
            let displacement = params_end.sub(&rt.global_now)?;
            let pseudo = pseudo_global_gradient(&rt.global_now, Some(prev))?;
            similarity(&displacement, &pseudo, kind)
        }
    }
}

/// Aggregation route selected by the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    /// Transmit the accumulated pseudo-gradient (gradient aggregation).
    Gradient,
    /// Transmit the final local parameters (model aggregation).
    Model,
}

/// Package the outcome of a training round into the pushed message.
pub fn build_update(
    rt: &ClientRuntime,
    outcome: &TrainOutcome,
    s_i: f64,
    kind: PayloadKind,
) -> LocalUpdate {
    let payload = match kind {
        PayloadKind::Gradient => UpdatePayload::PseudoGrad(outcome.accumulated.clone()),
        PayloadKind::Model => UpdatePayload::Params(outcome.params_end.clone()),
    };
    LocalUpdate {
        client_id: rt.id,
        base_round: rt.base_round,
        payload,
        eta_used: rt.eta,
        similarity: s_i,
        feedback: rt.feedback,
        n_i: rt.n_i(),
    }
}

// --- Wire format --------------------------------------------------------
//
// A LocalUpdate record is length-prefixed (u64 little-endian byte count),
// followed by the fields in order: client_id (u64), base_round (u64),
// payload tag (u8: 0 = pseudo-gradient, 1 = params) and vector (u64 element
// count, then little-endian f64 values), eta_used (f64), similarity (f64),
// feedback (u8), n_i (u64).

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_vec(buf: &mut Vec<u8>, v: &ParamVec) {
    push_u64(buf, v.len() as u64);
    for x in v.as_slice() {
        push_f64(buf, *x);
    }
}

pub(crate) struct WireReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> WireReader<'a> {
    pub(crate) fn new(data: &'a [u8]) -> Self {
        WireReader { data, pos: 0 }
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Data(format!(
                "truncated record: wanted {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub(crate) fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn read_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn read_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn read_vec(&mut self) -> Result<ParamVec> {
        let len = self.read_u64()? as usize;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(self.read_f64()?);
        }
        Ok(ParamVec(values))
    }
}

impl LocalUpdate {
    /// Serialize into the length-prefixed wire format.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        push_u64(&mut body, self.client_id as u64);
        push_u64(&mut body, self.base_round);
        match &self.payload {
            UpdatePayload::PseudoGrad(v) => {
                body.push(0u8);
                push_vec(&mut body, v);
            }
            UpdatePayload::Params(v) => {
                body.push(1u8);
                push_vec(&mut body, v);
            }
        }
        push_f64(&mut body, self.eta_used);
        push_f64(&mut body, self.similarity);
        body.push(u8::from(self.feedback));
        push_u64(&mut body, self.n_i as u64);
        let mut out = Vec::with_capacity(body.len() + 8);
        push_u64(&mut out, body.len() as u64);
        out.extend_from_slice(&body);
        out
    }

    /// Decode one record from the front of `data`; returns the update and
    /// the number of bytes consumed.
    pub fn decode(data: &[u8]) -> Result<(LocalUpdate, usize)> {
        let mut reader = WireReader::new(data);
        let body_len = reader.read_u64()? as usize;
        if data.len() < 8 + body_len {
            return Err(Error::Data(format!(
                "truncated record: body of {} bytes, {} available",
                body_len,
                data.len() - 8
            )));
        }
        let update = Self::decode_body(&mut reader)?;
        Ok((update, 8 + body_len))
    }

    pub(crate) fn decode_body(reader: &mut WireReader) -> Result<LocalUpdate> {
        let client_id = reader.read_u64()? as usize;
        let base_round = reader.read_u64()?;
        let tag = reader.read_u8()?;
        let vector = reader.read_vec()?;
        let payload = match tag {
            0 => UpdatePayload::PseudoGrad(vector),
            1 => UpdatePayload::Params(vector),
            other => return Err(Error::Data(format!("unknown payload tag {}", other))),
        };
        let eta_used = reader.read_f64()?;
        let similarity = reader.read_f64()?;
        let feedback = reader.read_u8()? != 0;
        let n_i = reader.read_u64()? as usize;
        Ok(LocalUpdate {
            client_id,
            base_round,
            payload,
            eta_used,
            similarity,
            feedback,
            n_i,
        })
    }
}
