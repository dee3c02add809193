//! Parameter vectors, small differentiable models, and gradient utilities.
//!
//! Two classifiers are supported: multinomial logistic regression and a
//! one-hidden-layer MLP with tanh activation. Both are evaluated with a
//! softmax cross-entropy loss and expose exact analytic gradients, which is
//! what the rest of the simulator builds on.
//!
//! Parameters live in a flat [`ParamVec`] with a fixed layout (weights then
//! biases, layer by layer) so that vector arithmetic — aggregation,
//! similarity, clipping — is well defined across modules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Flat vector of 64-bit parameters or gradient entries.
///
/// The length is fixed by the owning [`ModelSpec`] and never changes after
/// creation. Layout for logistic regression: class-major weight matrix
/// (`num_classes x input_dim`, row by row), then biases (`num_classes`).
/// For the MLP: hidden weights (`hidden_dim x input_dim`), hidden biases,
/// output weights (`num_classes x hidden_dim`), output biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec(pub Vec<f64>);

impl ParamVec {
    pub fn zeros(len: usize) -> Self {
        ParamVec(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVec) -> Result<f64> {
        self.check_len(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ParamVec) -> Result<ParamVec> {
        self.check_len(other)?;
        Ok(ParamVec(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Elementwise `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &ParamVec) -> Result<ParamVec> {
        self.check_len(other)?;
        Ok(ParamVec(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + scale * b)
                .collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> ParamVec {
        ParamVec(self.0.iter().map(|x| x * factor).collect())
    }

    /// In-place `self += scale * other`.
    pub fn axpy_inplace(&mut self, scale: f64, other: &ParamVec) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn check_len(&self, other: &ParamVec) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::DimensionMismatch(format!(
                "param vectors of length {} and {}",
                self.0.len(),
                other.0.len()
            )));
        }
        Ok(())
    }
}

/// Architecture of a differentiable classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    /// Multinomial logistic regression: softmax over `W x + b`.
    LogReg { input_dim: usize, num_classes: usize },
    /// One hidden layer with tanh activation, softmax output.
    Mlp {
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
    },
}

impl ModelSpec {
    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::LogReg { input_dim, .. } | ModelSpec::Mlp { input_dim, .. } => input_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            ModelSpec::LogReg { num_classes, .. } | ModelSpec::Mlp { num_classes, .. } => {
                num_classes
            }
        }
    }

    /// Total number of parameters; a pure function of the spec.
    pub fn param_count(&self) -> usize {
        match *self {
            ModelSpec::LogReg {
                input_dim,
                num_classes,
            } => num_classes * input_dim + num_classes,
            ModelSpec::Mlp {
                input_dim,
                hidden_dim,
                num_classes,
            } => hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim + num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ModelSpec::LogReg {
                input_dim,
                num_classes,
            } => input_dim >= 1 && num_classes >= 2,
            ModelSpec::Mlp {
                input_dim,
                hidden_dim,
                num_classes,
            } => input_dim >= 1 && hidden_dim >= 1 && num_classes >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad model spec {:?}", self)))
        }
    }
}

/// A dense feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// Row-major `n x dim` features.
    pub features: Vec<Vec<f64>>,
    /// Class ids in `[0, num_classes)`; one per feature row.
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            let dim = first.len();
            if features.iter().any(|row| row.len() != dim) {
                return Err(Error::DimensionMismatch(
                    "ragged feature rows".to_string(),
                ));
            }
        }
        Ok(LabeledDataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |row| row.len())
    }

    /// Dataset restricted to the given sample indices (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let mut features = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let row = self.features.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("sample index {} out of range ({})", i, self.len()))
            })?;
            features.push(row.clone());
            labels.push(self.labels[i]);
        }
        Ok(LabeledDataset { features, labels })
    }
}

/// Seeded parameter initialization: uniform noise in [-0.05, 0.05].
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVec {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    ParamVec(
        (0..spec.param_count())
            .map(|_| rng.gen_range(-0.05..=0.05))
            .collect(),
    )
}

fn check_eval_inputs(spec: &ModelSpec, params: &ParamVec, data: &LabeledDataset) -> Result<()> {
    spec.validate()?;
    if params.len() != spec.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} params for a model with {}",
            params.len(),
            spec.param_count()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".to_string()));
    }
    if data.dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dim {} vs model input dim {}",
            data.dim(),
            spec.input_dim()
        )));
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= spec.num_classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {} out of range for {} classes",
            bad,
            spec.num_classes()
        )));
    }
    Ok(())
}

/// Forward pass for one sample: logits, plus the hidden activation for the MLP.
fn forward_sample(spec: &ModelSpec, params: &[f64], x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
    match *spec {
        ModelSpec::LogReg {
            input_dim,
            num_classes,
        } => {
            let bias_off = num_classes * input_dim;
            let mut logits = Vec::with_capacity(num_classes);
            for c in 0..num_classes {
                let row = &params[c * input_dim..(c + 1) * input_dim];
                let mut z = params[bias_off + c];
                for (w, xi) in row.iter().zip(x) {
                    z += w * xi;
                }
                logits.push(z);
            }
            (logits, None)
        }
        ModelSpec::Mlp {
            input_dim,
            hidden_dim,
            num_classes,
        } => {
            let w1_off = 0;
            let b1_off = hidden_dim * input_dim;
            let w2_off = b1_off + hidden_dim;
            let b2_off = w2_off + num_classes * hidden_dim;
            let mut hidden = Vec::with_capacity(hidden_dim);
            for h in 0..hidden_dim {
                let row = &params[w1_off + h * input_dim..w1_off + (h + 1) * input_dim];
                let mut z = params[b1_off + h];
                for (w, xi) in row.iter().zip(x) {
                    z += w * xi;
                }
                hidden.push(z.tanh());
            }
            let mut logits = Vec::with_capacity(num_classes);
            for c in 0..num_classes {
                let row = &params[w2_off + c * hidden_dim..w2_off + (c + 1) * hidden_dim];
                let mut z = params[b2_off + c];
                for (w, hi) in row.iter().zip(&hidden) {
                    z += w * hi;
                }
                logits.push(z);
            }
            (logits, Some(hidden))
        }
    }
}

/// Numerically stable softmax probabilities together with log-sum-exp.
fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    (probs, max + sum.ln())
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy loss and classification accuracy over a dataset.
pub fn forward_eval(
    spec: &ModelSpec,
    params: &ParamVec,
    data: &LabeledDataset,
) -> Result<(f64, f64)> {
    check_eval_inputs(spec, params, data)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let (logits, _) = forward_sample(spec, params.as_slice(), x);
        let (_, lse) = softmax(&logits);
        loss += lse - logits[y];
        if argmax(&logits) == y {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Predicted class ids (argmax of logits, ties to the lowest class id).
pub fn predict(spec: &ModelSpec, params: &ParamVec, data: &LabeledDataset) -> Result<Vec<usize>> {
    check_eval_inputs(spec, params, data)?;
    Ok(data
        .features
        .iter()
        .map(|x| argmax(&forward_sample(spec, params.as_slice(), x).0))
        .collect())
}

/// Analytic gradient of the mean cross-entropy at `params`.
pub fn gradient(spec: &ModelSpec, params: &ParamVec, data: &LabeledDataset) -> Result<ParamVec> {
    check_eval_inputs(spec, params, data)?;
    let n = data.len() as f64;
    let mut grad = vec![0.0; spec.param_count()];
    match *spec {
        ModelSpec::LogReg {
            input_dim,
            num_classes,
        } => {
            let bias_off = num_classes * input_dim;
            for (x, &y) in data.features.iter().zip(&data.labels) {
                let (logits, _) = forward_sample(spec, params.as_slice(), x);
                let (probs, _) = softmax(&logits);
                for c in 0..num_classes {
                    let delta = probs[c] - if c == y { 1.0 } else { 0.0 };
                    let row = &mut grad[c * input_dim..(c + 1) * input_dim];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += delta * xi;
                    }
                    grad[bias_off + c] += delta;
                }
            }
        }
        ModelSpec::Mlp {
            input_dim,
            hidden_dim,
            num_classes,
        } => {
            let b1_off = hidden_dim * input_dim;
            let w2_off = b1_off + hidden_dim;
            let b2_off = w2_off + num_classes * hidden_dim;
            let p = params.as_slice();
            for (x, &y) in data.features.iter().zip(&data.labels) {
                let (logits, hidden) = forward_sample(spec, p, x);
                let hidden = hidden.expect("mlp forward yields hidden activations");
                let (probs, _) = softmax(&logits);
                // Output layer.
                let mut delta_out = Vec::with_capacity(num_classes);
                for c in 0..num_classes {
                    let d = probs[c] - if c == y { 1.0 } else { 0.0 };
                    delta_out.push(d);
                    let row = &mut grad[w2_off + c * hidden_dim..w2_off + (c + 1) * hidden_dim];
                    for (g, hi) in row.iter_mut().zip(&hidden) {
                        *g += d * hi;
                    }
                    grad[b2_off + c] += d;
                }
                // Backprop through tanh.
                for h in 0..hidden_dim {
                    let mut upstream = 0.0;
                    for c in 0..num_classes {
                        upstream += delta_out[c] * p[w2_off + c * hidden_dim + h];
                    }
                    let d = upstream * (1.0 - hidden[h] * hidden[h]);
                    let row = &mut grad[h * input_dim..(h + 1) * input_dim];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                    grad[b1_off + h] += d;
                }
            }
        }
    }
    for g in &mut grad {
        *g /= n;
    }
    Ok(ParamVec(grad))
}

// Slack absorbing the rescale rounding of a previous clip, so clipping is
// exactly idempotent.
const CLIP_SLACK: f64 = 1e-12;

/// L2 gradient clipping: rescale `g` so its norm does not exceed `bound`.
pub fn clip_gradient(g: &ParamVec, bound: f64) -> Result<ParamVec> {
    if !(bound > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip bound must be positive, got {}",
            bound
        )));
    }
    let norm = g.norm();
    if norm <= bound * (1.0 + CLIP_SLACK) {
        Ok(g.clone())
    } else {
        Ok(g.scale(bound / norm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ds(features: Vec<Vec<f64>>, labels: Vec<usize>) -> LabeledDataset {
        LabeledDataset::new(features, labels).unwrap()
    }

    /// Straight-line softmax cross-entropy evaluation, kept deliberately
    /// independent of the main implementation (naive exp-normalization, no
    /// shared helpers).
    fn reference_logreg_loss(
        input_dim: usize,
        num_classes: usize,
        params: &[f64],
        features: &[Vec<f64>],
        labels: &[usize],
    ) -> f64 {
        let mut total = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let mut logits = vec![0.0f64; num_classes];
            for c in 0..num_classes {
                let mut z = params[num_classes * input_dim + c];
                for j in 0..input_dim {
                    z += params[c * input_dim + j] * x[j];
                }
                logits[c] = z;
            }
            let mut denom = 0.0;
            for c in 0..num_classes {
                denom += logits[c].exp();
            }
            let p_y = logits[y].exp() / denom;
            total -= p_y.ln();
        }
        total / features.len() as f64
    }

    #[test]
    fn zero_params_logreg_loss_is_ln2() {
        let spec = ModelSpec::LogReg {
            input_dim: 1,
            num_classes: 2,
        };
        let params = ParamVec::zeros(spec.param_count());
        for y in 0..2 {
            let data = ds(vec![vec![3.7]], vec![y]);
            let (loss, _) = forward_eval(&spec, &params, &data).unwrap();
            assert_relative_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_params_mlp_loss_is_ln_c() {
        let spec = ModelSpec::Mlp {
            input_dim: 3,
            hidden_dim: 5,
            num_classes: 4,
        };
        let params = ParamVec::zeros(spec.param_count());
        let data = ds(vec![vec![1.0, -2.0, 0.5], vec![0.3, 0.1, -9.0]], vec![2, 0]);
        let (loss, _) = forward_eval(&spec, &params, &data).unwrap();
        assert_relative_eq!(loss, 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn logreg_loss_matches_reference_evaluation() {
        use rand::Rng;
        let spec = ModelSpec::LogReg {
            input_dim: 2,
            num_classes: 3,
        };
        let params = init_params(&spec, 72431);
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let features: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let labels = vec![0, 2, 1, 1, 0];
        let data = ds(features.clone(), labels.clone());
        let (loss, _) = forward_eval(&spec, &params, &data).unwrap();
        let reference = reference_logreg_loss(2, 3, params.as_slice(), &features, &labels);
        assert!((loss - reference).abs() < 1e-12, "{loss} vs {reference}");
    }

    #[test]
    fn binary_logreg_gradient_closed_form() {
        // w = 0, single sample x = [1], y = 1: d/dW[c] = (softmax_c - 1{c=y}) x.
        let spec = ModelSpec::LogReg {
            input_dim: 1,
            num_classes: 2,
        };
        let params = ParamVec::zeros(spec.param_count());
        let data = ds(vec![vec![1.0]], vec![1]);
        let g = gradient(&spec, &params, &data).unwrap();
        // Layout: W[0][0], W[1][0], b[0], b[1].
        assert_relative_eq!(g.0[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(g.0[1], -0.5, epsilon = 1e-15);
        assert_relative_eq!(g.0[2], 0.5, epsilon = 1e-15);
        assert_relative_eq!(g.0[3], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_features_kill_weight_gradients() {
        for spec in [
            ModelSpec::LogReg {
                input_dim: 3,
                num_classes: 3,
            },
            ModelSpec::Mlp {
                input_dim: 3,
                hidden_dim: 4,
                num_classes: 3,
            },
        ] {
            let params = init_params(&spec, 5);
            let data = ds(vec![vec![0.0; 3], vec![0.0; 3]], vec![0, 2]);
            let g = gradient(&spec, &params, &data).unwrap();
            match spec {
                ModelSpec::LogReg {
                    input_dim,
                    num_classes,
                } => {
                    for v in &g.0[..num_classes * input_dim] {
                        assert_eq!(*v, 0.0);
                    }
                    // Bias gradient = mean(softmax(bias) - one-hot): with
                    // zero inputs the logits are just the biases.
                    let bias = &params.0[num_classes * input_dim..];
                    let exps: Vec<f64> = bias.iter().map(|b| b.exp()).collect();
                    let total: f64 = exps.iter().sum();
                    let p0 = exps[0] / total;
                    // Labels are {0, 2}: the class-0 one-hot mean is 0.5.
                    assert_relative_eq!(
                        g.0[num_classes * input_dim],
                        p0 - 0.5,
                        epsilon = 1e-12
                    );
                }
                ModelSpec::Mlp {
                    input_dim,
                    hidden_dim,
                    ..
                } => {
                    for v in &g.0[..hidden_dim * input_dim] {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }

    fn finite_difference(
        spec: &ModelSpec,
        params: &ParamVec,
        data: &LabeledDataset,
        step: f64,
    ) -> ParamVec {
        let mut fd = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.0[i] += step;
            let mut minus = params.clone();
            minus.0[i] -= step;
            let (lp, _) = forward_eval(spec, &plus, data).unwrap();
            let (lm, _) = forward_eval(spec, &minus, data).unwrap();
            fd.push((lp - lm) / (2.0 * step));
        }
        ParamVec(fd)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng;
        let spec = ModelSpec::LogReg {
            input_dim: 3,
            num_classes: 4,
        };
        let params = init_params(&spec, 31);
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let features: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..4)).collect();
        let data = ds(features, labels);
        let g = gradient(&spec, &params, &data).unwrap();
        let fd = finite_difference(&spec, &params, &data, 1e-5);
        for (a, f) in g.0.iter().zip(&fd.0) {
            assert!(
                (a - f).abs() < 1e-5 * f.abs().max(1.0),
                "analytic {a} vs fd {f}"
            );
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        use rand::Rng;
        let spec = ModelSpec::Mlp {
            input_dim: 2,
            hidden_dim: 3,
            num_classes: 3,
        };
        let params = init_params(&spec, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let features: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let data = ds(features, labels);
        let g = gradient(&spec, &params, &data).unwrap();
        let fd = finite_difference(&spec, &params, &data, 1e-5);
        for (a, f) in g.0.iter().zip(&fd.0) {
            assert!(
                (a - f).abs() < 1e-5 * f.abs().max(1.0),
                "analytic {a} vs fd {f}"
            );
        }
    }

    #[test]
    fn small_gradient_step_decreases_loss() {
        let spec = ModelSpec::Mlp {
            input_dim: 2,
            hidden_dim: 4,
            num_classes: 3,
        };
        let params = init_params(&spec, 2);
        let data = ds(
            vec![vec![1.0, 0.2], vec![-0.5, 1.4], vec![0.0, -1.0]],
            vec![0, 1, 2],
        );
        let (before, _) = forward_eval(&spec, &params, &data).unwrap();
        let g = gradient(&spec, &params, &data).unwrap();
        let stepped = params.axpy(-1e-3, &g).unwrap();
        let (after, _) = forward_eval(&spec, &stepped, &data).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn clip_leaves_small_gradients_unchanged() {
        let g = ParamVec(vec![3.0, 4.0]); // norm 5
        let out = clip_gradient(&g, 20.0).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn clip_rescales_to_bound() {
        let g = ParamVec(vec![30.0, 40.0]); // norm 50
        let out = clip_gradient(&g, 20.0).unwrap();
        assert_relative_eq!(out.0[0], 12.0, epsilon = 1e-12);
        assert_relative_eq!(out.0[1], 16.0, epsilon = 1e-12);
        assert!(out.norm() <= 20.0 * (1.0 + 1e-12));
    }

    #[test]
    fn clip_zero_is_fixed_point() {
        let g = ParamVec::zeros(4);
        assert_eq!(clip_gradient(&g, 1.0).unwrap(), g);
    }

    #[test]
    fn clip_rejects_nonpositive_bound() {
        assert!(clip_gradient(&ParamVec::zeros(1), 0.0).is_err());
        assert!(clip_gradient(&ParamVec::zeros(1), -3.0).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = ModelSpec::Mlp {
            input_dim: 4,
            hidden_dim: 3,
            num_classes: 2,
        };
        let a = init_params(&spec, 42);
        let b = init_params(&spec, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), spec.param_count());
        assert!(a.0.iter().all(|v| (-0.05..=0.05).contains(v)));
        assert_ne!(init_params(&spec, 43), a);
    }

    #[test]
    fn eval_rejects_bad_inputs() {
        let spec = ModelSpec::LogReg {
            input_dim: 2,
            num_classes: 2,
        };
        let params = ParamVec::zeros(3); // wrong length
        let data = ds(vec![vec![1.0, 2.0]], vec![0]);
        assert!(forward_eval(&spec, &params, &data).is_err());
        let params = ParamVec::zeros(spec.param_count());
        let empty = LabeledDataset::new(vec![], vec![]).unwrap();
        assert!(forward_eval(&spec, &params, &empty).is_err());
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(values in proptest::collection::vec(-100.0f64..100.0, 1..20),
                              bound in 0.1f64..50.0) {
            let g = ParamVec(values);
            let once = clip_gradient(&g, bound).unwrap();
            let twice = clip_gradient(&once, bound).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn gradients_match_finite_differences_sweep(seed in 0u64..40) {
            use rand::Rng;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let spec = if seed % 2 == 0 {
                ModelSpec::LogReg { input_dim: 2 + (seed as usize % 3), num_classes: 2 + (seed as usize % 2) }
            } else {
                ModelSpec::Mlp { input_dim: 2, hidden_dim: 2 + (seed as usize % 3), num_classes: 3 }
            };
            let params = init_params(&spec, seed.wrapping_mul(31).wrapping_add(7));
            let n = 4;
            let features: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..spec.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.num_classes())).collect();
            let data = ds(features, labels);
            let g = gradient(&spec, &params, &data).unwrap();
            let fd = finite_difference(&spec, &params, &data, 1e-5);
            for (a, f) in g.0.iter().zip(&fd.0) {
                prop_assert!((a - f).abs() < 1e-5 * f.abs().max(1.0));
            }
        }
    }
}
