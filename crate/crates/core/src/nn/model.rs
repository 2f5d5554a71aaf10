//! Network parameters, the width rule, forward/backward passes, and the
//! value-exact JSON model file.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::features::{FeatureVector, SENTINEL};
use crate::geometry::{wrap_angle, Point};
use crate::util::write_atomic;
use crate::{Error, Result};

/// Identifier of the reference-anchor rule the features were built with.
/// Stored in the model file so a consumer can refuse mismatched features.
pub const REFERENCE_RULE: &str = "first-valid";

/// Layer widths: input, two hidden layers, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub n_input: usize,
    pub n_hidden1: usize,
    pub n_hidden2: usize,
    pub n_output: usize,
}

impl LayerDims {
    /// Total number of weights and biases.
    pub fn n_params(&self) -> usize {
        self.n_input * self.n_hidden1
            + self.n_hidden1
            + self.n_hidden1 * self.n_hidden2
            + self.n_hidden2
            + self.n_hidden2 * self.n_output
            + self.n_output
    }
}

/// Ceiling that forgives representation error in `k * n` (0.8 * 15 must be
/// 12, not 13).
fn ceil_count(v: f64) -> usize {
    ((v - 1e-9).ceil() as usize).max(1)
}

/// Width rule: input = roster size - 1, first hidden = ceil(input * k),
/// second hidden = ceil(first / 2), output = 2.
pub fn layer_sizes(n_anchors: usize, k: f64) -> Result<LayerDims> {
    if n_anchors < 3 {
        return Err(Error::Shape(format!(
            "need at least 3 anchors to size the network, got {n_anchors}"
        )));
    }
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::Train(format!("node factor must be in (0, 1], got {k}")));
    }
    let n_input = n_anchors - 1;
    let n_hidden1 = ceil_count(n_input as f64 * k);
    let n_hidden2 = ceil_count(n_hidden1 as f64 / 2.0);
    Ok(LayerDims {
        n_input,
        n_hidden1,
        n_hidden2,
        n_output: 2,
    })
}

/// Dense row-major matrix; serialized as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// out[j] = bias[j] + sum_i x[i] * M[i][j]  (transposed application)
    fn apply_t(&self, x: &[f64], bias: &[f64], out: &mut [f64]) {
        out.copy_from_slice(bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    /// out[i] = sum_j M[i][j] * v[j]  (plain application)
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(v).map(|(w, x)| w * x).sum();
        }
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Vec<Vec<f64>> {
        m.data.chunks(m.cols).map(|r| r.to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Matrix, String> {
        if rows.is_empty() {
            return Err("matrix must have at least one row".into());
        }
        let cols = rows[0].len();
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err("matrix rows must be non-empty and equally long".into());
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

/// All trainable tensors: three weight matrices and three bias vectors.
/// Also reused as the container for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Params {
    pub fn zeros(dims: LayerDims) -> Params {
        Params {
            weights: vec![
                Matrix::zeros(dims.n_input, dims.n_hidden1),
                Matrix::zeros(dims.n_hidden1, dims.n_hidden2),
                Matrix::zeros(dims.n_hidden2, dims.n_output),
            ],
            biases: vec![
                vec![0.0; dims.n_hidden1],
                vec![0.0; dims.n_hidden2],
                vec![0.0; dims.n_output],
            ],
        }
    }

    /// Flat views over all tensors in a fixed order (weights then biases);
    /// parallel Params instances stay aligned slice-by-slice.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .map(|m| m.as_slice())
            .chain(self.biases.iter().map(|b| b.as_slice()))
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .map(|m| m.as_mut_slice())
            .chain(self.biases.iter_mut().map(|b| b.as_mut_slice()))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// self += other * scale
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * scale;
            }
        }
    }

    fn matches(&self, dims: LayerDims) -> bool {
        let shapes = [
            (dims.n_input, dims.n_hidden1),
            (dims.n_hidden1, dims.n_hidden2),
            (dims.n_hidden2, dims.n_output),
        ];
        self.weights.len() == 3
            && self.biases.len() == 3
            && self
                .weights
                .iter()
                .zip(shapes)
                .all(|(m, (r, c))| m.rows == r && m.cols == c)
            && self
                .biases
                .iter()
                .zip(shapes)
                .all(|(b, (_, c))| b.len() == c)
    }
}

/// Provenance recorded in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    /// Measurement noise the training data was synthesized with, radians.
    pub sigma: Option<f64>,
    /// "truth" or "geo".
    pub label_source: Option<String>,
    pub seed: u64,
}

/// A trained (or freshly initialized) network. Immutable after training;
/// shareable across threads for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub dims: LayerDims,
    pub node_factor: f64,
    #[serde(flatten)]
    pub params: Params,
    /// Per-input standardization constants, computed on the training split.
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    /// Digest of the anchor roster the features were computed against.
    pub roster_fingerprint: String,
    pub reference_rule: String,
    pub meta: TrainMeta,
}

/// Forward-pass execution mode.
pub enum Mode<'a> {
    /// Deterministic inference; dropout disabled.
    Infer,
    /// Training pass: inverted dropout on hidden activations with rate `p`
    /// (survivors scaled by 1/(1-p)).
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

/// Intermediate activations kept for backpropagation. `drop1`/`drop2` hold
/// the applied dropout factors (0 or 1/(1-p); all 1 outside training).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub drop1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub drop2: Vec<f64>,
    pub a2: Vec<f64>,
    pub y: [f64; 2],
}

impl Model {
    /// He-initialized network (weight std sqrt(2/fan-in), zero biases) with
    /// identity normalization; training fills in the rest.
    ///
    /// `input_rms`, when given, rescales first-layer rows by each input's
    /// root-mean-square value. Standardized slots have RMS 1 so this is a
    /// no-op for them; sentinel-heavy slots (RMS near 10) get proportionally
    /// smaller weights, keeping the first layer's pre-activations at the
    /// scale the fan-in rule assumes.
    pub fn new_random(
        dims: LayerDims,
        node_factor: f64,
        roster_fingerprint: String,
        meta: TrainMeta,
        input_rms: Option<&[f64]>,
        rng: &mut ChaCha8Rng,
    ) -> Model {
        let mut params = Params::zeros(dims);
        for m in &mut params.weights {
            let std = (2.0 / m.rows as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("finite std");
            for v in m.as_mut_slice() {
                *v = dist.sample(rng);
            }
        }
        if let Some(rms) = input_rms {
            let w1 = &mut params.weights[0];
            for i in 0..dims.n_input {
                let scale = if rms[i] > 1.0 { 1.0 / rms[i] } else { 1.0 };
                for j in 0..dims.n_hidden1 {
                    *w1.at_mut(i, j) *= scale;
                }
            }
        }
        Model {
            dims,
            node_factor,
            params,
            norm_mean: vec![0.0; dims.n_input],
            norm_std: vec![1.0; dims.n_input],
            roster_fingerprint,
            reference_rule: REFERENCE_RULE.to_string(),
            meta,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    /// Structural and numeric sanity: shapes consistent with dims, all
    /// parameters finite, normalization stds positive.
    pub fn validate(&self) -> Result<()> {
        if !self.params.matches(self.dims) {
            return Err(Error::Shape(
                "model parameter shapes do not match the declared dims".into(),
            ));
        }
        if self.dims.n_output != 2 {
            return Err(Error::Shape("model output layer must have 2 units".into()));
        }
        if !self.params.is_finite() {
            return Err(Error::NonFinite("model holds non-finite parameters".into()));
        }
        if self.norm_mean.len() != self.dims.n_input || self.norm_std.len() != self.dims.n_input {
            return Err(Error::Shape(
                "normalization arrays do not match the input width".into(),
            ));
        }
        if !self.norm_mean.iter().all(|v| v.is_finite())
            || !self.norm_std.iter().all(|v| v.is_finite() && *v > 0.0)
        {
            return Err(Error::NonFinite(
                "normalization constants must be finite with positive std".into(),
            ));
        }
        Ok(())
    }

    /// Standardizes valid features with the stored constants; masked slots
    /// become the sentinel constant regardless of their stored value.
    ///
    /// Inputs are angle differences, so centering is circular: the stored
    /// mean is subtracted and the result re-wrapped to (-pi, pi] before
    /// scaling. This keeps each slot's discontinuity at the antipode of its
    /// typical value instead of wherever the raw wrap put it.
    fn normalize(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        if fv.values.len() != self.dims.n_input || fv.mask.len() != self.dims.n_input {
            return Err(Error::Shape(format!(
                "feature vector has {} slots, model expects {}",
                fv.values.len(),
                self.dims.n_input
            )));
        }
        let mut x = Vec::with_capacity(self.dims.n_input);
        for i in 0..self.dims.n_input {
            if fv.mask[i] {
                let v = fv.values[i];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "feature slot {i} is not finite: {v}"
                    )));
                }
                x.push(wrap_angle(v - self.norm_mean[i]) / self.norm_std[i]);
            } else {
                x.push(SENTINEL);
            }
        }
        Ok(x)
    }

    /// Full forward pass: standardize, two ReLU hidden layers (with dropout
    /// in training mode), identity output layer.
    pub fn forward(&self, fv: &FeatureVector, mode: Mode<'_>) -> Result<(Point, ForwardCache)> {
        let x = self.normalize(fv)?;
        let (p, mut rng) = match mode {
            Mode::Infer => (0.0, None),
            Mode::Train { dropout, rng } => {
                if !(0.0..1.0).contains(&dropout) {
                    return Err(Error::Train(format!(
                        "dropout rate must be in [0, 1), got {dropout}"
                    )));
                }
                (dropout, Some(rng))
            }
        };
        let mut dropout_factors = |n: usize| -> Vec<f64> {
            match (&mut rng, p > 0.0) {
                (Some(rng), true) => {
                    let keep = 1.0 / (1.0 - p);
                    (0..n)
                        .map(|_| {
                            use rand::Rng;
                            if rng.random::<f64>() < p {
                                0.0
                            } else {
                                keep
                            }
                        })
                        .collect()
                }
                _ => vec![1.0; n],
            }
        };

        let mut z1 = vec![0.0; self.dims.n_hidden1];
        self.params.weights[0].apply_t(&x, &self.params.biases[0], &mut z1);
        let drop1 = dropout_factors(self.dims.n_hidden1);
        let a1: Vec<f64> = z1
            .iter()
            .zip(&drop1)
            .map(|(&z, &d)| z.max(0.0) * d)
            .collect();

        let mut z2 = vec![0.0; self.dims.n_hidden2];
        self.params.weights[1].apply_t(&a1, &self.params.biases[1], &mut z2);
        let drop2 = dropout_factors(self.dims.n_hidden2);
        let a2: Vec<f64> = z2
            .iter()
            .zip(&drop2)
            .map(|(&z, &d)| z.max(0.0) * d)
            .collect();

        let mut y = vec![0.0; 2];
        self.params.weights[2].apply_t(&a2, &self.params.biases[2], &mut y);
        let y = [y[0], y[1]];
        Ok((
            Point::new(y[0], y[1]),
            ForwardCache {
                x,
                z1,
                drop1,
                a1,
                z2,
                drop2,
                a2,
                y,
            },
        ))
    }

    /// Inference-mode position estimate.
    pub fn predict(&self, fv: &FeatureVector) -> Result<Point> {
        Ok(self.forward(fv, Mode::Infer)?.0)
    }

    /// Order-preserving batch prediction.
    pub fn predict_batch(&self, fvs: &[FeatureVector]) -> Result<Vec<Point>> {
        fvs.iter().map(|fv| self.predict(fv)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let model: Model =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Model> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_json(&text)
    }
}

/// Squared Euclidean distance between truth and estimate.
pub fn mse_loss(truth: Point, estimate: Point) -> f64 {
    let d = estimate - truth;
    d.dot(d)
}

/// Exact gradient of [`mse_loss`] through the forward pass that produced
/// `cache`, respecting its dropout factors. ReLU subgradient at 0 is 0.
pub fn backward(model: &Model, cache: &ForwardCache, truth: Point) -> Result<Params> {
    let dims = model.dims;
    if cache.x.len() != dims.n_input
        || cache.z1.len() != dims.n_hidden1
        || cache.z2.len() != dims.n_hidden2
    {
        return Err(Error::Shape(
            "forward cache does not match the model's dims".into(),
        ));
    }
    let mut g = Params::zeros(dims);
    let dy = [
        2.0 * (cache.y[0] - truth.x),
        2.0 * (cache.y[1] - truth.y),
    ];

    // output layer
    for i in 0..dims.n_hidden2 {
        for j in 0..2 {
            *g.weights[2].at_mut(i, j) = cache.a2[i] * dy[j];
        }
    }
    g.biases[2].copy_from_slice(&dy);
    let mut da2 = vec![0.0; dims.n_hidden2];
    model.params.weights[2].apply(&dy, &mut da2);

    // second hidden layer
    let dz2: Vec<f64> = (0..dims.n_hidden2)
        .map(|i| {
            if cache.z2[i] > 0.0 {
                da2[i] * cache.drop2[i]
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..dims.n_hidden1 {
        for j in 0..dims.n_hidden2 {
            *g.weights[1].at_mut(i, j) = cache.a1[i] * dz2[j];
        }
    }
    g.biases[1].copy_from_slice(&dz2);
    let mut da1 = vec![0.0; dims.n_hidden1];
    model.params.weights[1].apply(&dz2, &mut da1);

    // first hidden layer
    let dz1: Vec<f64> = (0..dims.n_hidden1)
        .map(|i| {
            if cache.z1[i] > 0.0 {
                da1[i] * cache.drop1[i]
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..dims.n_input {
        for j in 0..dims.n_hidden1 {
            *g.weights[0].at_mut(i, j) = cache.x[i] * dz1[j];
        }
    }
    g.biases[0].copy_from_slice(&dz1);
    Ok(g)
}
