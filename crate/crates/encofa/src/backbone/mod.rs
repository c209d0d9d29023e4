//! The trainable stack: encoder (MLP or small CNN), classifier head,
//! and projector, plus weak input augmentation and per-sample channel
//! gradients for the feature-augmentation stage.
//!
//! Feature vectors are rows of `Array2<f64>`; probability rows live on the
//! simplex (softmax output); projected rows are L2-normalized, with a
//! first-basis-vector fallback for an exactly zero pre-normalization row.

pub mod augment;
mod checkpoint;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::{last_map_extent, Cnn, CnnCache, Conv3x3Grads, Linear, LinearGrads, Mlp, MlpCache};

use ndarray::{Array1, Array2, Array4, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::InputShape;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Encoder family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneKind {
    /// Dense encoder for vector inputs; hidden layer widths in order.
    Mlp { hidden: Vec<usize> },
    /// Convolutional encoder for image inputs; channels per stage, the last
    /// stage width being the feature dimension.
    Cnn { channels: Vec<usize> },
}

/// Architecture descriptor; everything needed to rebuild a model skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub backbone: BackboneKind,
    pub input_shape: InputShape,
    pub feature_dim: usize,
    pub classes: usize,
    pub projection_dim: usize,
}

impl ModelArch {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "model needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.feature_dim == 0 || self.projection_dim == 0 {
            return Err(Error::Config(
                "model.feature_dim and model.projection_dim must be positive".into(),
            ));
        }
        match (&self.backbone, &self.input_shape) {
            (BackboneKind::Mlp { .. }, InputShape::Vector { .. }) => Ok(()),
            (BackboneKind::Cnn { channels }, InputShape::Image { channels: c, height, width }) => {
                if channels.last() != Some(&self.feature_dim) {
                    return Err(Error::Config(
                        "model.channels must end at model.feature_dim".into(),
                    ));
                }
                let _ = c;
                let (h, w) = last_map_extent(channels.len(), *height, *width);
                if h == 0 || w == 0 {
                    return Err(Error::Config(
                        "image too small for the configured conv stages".into(),
                    ));
                }
                Ok(())
            }
            (BackboneKind::Mlp { .. }, InputShape::Image { .. }) => Err(Error::Config(
                "mlp backbone expects vector inputs".into(),
            )),
            (BackboneKind::Cnn { .. }, InputShape::Vector { .. }) => Err(Error::Config(
                "cnn backbone expects image inputs".into(),
            )),
        }
    }
}

pub enum Encoder {
    Mlp(Mlp),
    Cnn(Cnn),
}

pub enum EncoderCache {
    Mlp(MlpCache),
    Cnn(CnnCache),
}

pub enum EncoderGrads {
    Mlp(Vec<LinearGrads>),
    Cnn(Vec<Conv3x3Grads>),
}

/// Gradients mirroring [`Model`] tensor layout.
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub head: LinearGrads,
    pub projector: LinearGrads,
}

/// One input batch, matching the encoder family.
#[derive(Debug, Clone)]
pub enum BatchInput {
    Dense(Array2<f64>),
    Images(Array4<f64>),
}

impl BatchInput {
    pub fn len(&self) -> usize {
        match self {
            BatchInput::Dense(x) => x.nrows(),
            BatchInput::Images(x) => x.dim().0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Assemble a batch from flattened sample inputs.
    pub fn from_rows(rows: &[&[f64]], shape: &InputShape) -> BatchInput {
        match *shape {
            InputShape::Vector { dim } => {
                let mut x = Array2::zeros((rows.len(), dim));
                for (i, row) in rows.iter().enumerate() {
                    debug_assert_eq!(row.len(), dim);
                    for (j, v) in row.iter().enumerate() {
                        x[[i, j]] = *v;
                    }
                }
                BatchInput::Dense(x)
            }
            InputShape::Image { channels, height, width } => {
                let mut x = Array4::zeros((rows.len(), channels, height, width));
                for (i, row) in rows.iter().enumerate() {
                    debug_assert_eq!(row.len(), channels * height * width);
                    for c in 0..channels {
                        for y in 0..height {
                            for xx in 0..width {
                                x[[i, c, y, xx]] = row[c * height * width + y * width + xx];
                            }
                        }
                    }
                }
                BatchInput::Images(x)
            }
        }
    }
}

/// The full trainable stack.
pub struct Model {
    pub arch: ModelArch,
    pub encoder: Encoder,
    pub head: Linear,
    pub projector: Linear,
}

impl Model {
    pub fn new(arch: ModelArch, seed: u64) -> Result<Model> {
        arch.validate()?;
        let mut rng = stream_rng(seed, "model-init", 0, 0);
        let encoder = match &arch.backbone {
            BackboneKind::Mlp { hidden } => {
                let mut sizes = vec![arch.input_shape.len()];
                sizes.extend_from_slice(hidden);
                sizes.push(arch.feature_dim);
                Encoder::Mlp(Mlp::new(&sizes, &mut rng))
            }
            BackboneKind::Cnn { channels } => {
                let in_ch = match arch.input_shape {
                    InputShape::Image { channels, .. } => channels,
                    InputShape::Vector { .. } => unreachable!("validated above"),
                };
                let mut chs = vec![in_ch];
                chs.extend_from_slice(channels);
                Encoder::Cnn(Cnn::new(&chs, &mut rng))
            }
        };
        let head = Linear::new(arch.feature_dim, arch.classes, &mut rng);
        let projector = Linear::new(arch.feature_dim, arch.projection_dim, &mut rng);
        Ok(Model {
            arch,
            encoder,
            head,
            projector,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    /// Encoder forward with cached intermediates for a later backward.
    pub fn encode_cached(&self, batch: &BatchInput) -> (Array2<f64>, EncoderCache) {
        match (&self.encoder, batch) {
            (Encoder::Mlp(mlp), BatchInput::Dense(x)) => {
                let (f, cache) = mlp.forward(x);
                (f, EncoderCache::Mlp(cache))
            }
            (Encoder::Cnn(cnn), BatchInput::Images(x)) => {
                let (f, cache) = cnn.forward(x);
                (f, EncoderCache::Cnn(cache))
            }
            _ => panic!("batch kind does not match encoder family"),
        }
    }

    /// Extract feature vectors; deterministic, no training side effects.
    pub fn encode(&self, batch: &BatchInput) -> Array2<f64> {
        self.encode_cached(batch).0
    }

    pub fn encoder_backward(&self, cache: &EncoderCache, dfeat: &Array2<f64>) -> EncoderGrads {
        match (&self.encoder, cache) {
            (Encoder::Mlp(mlp), EncoderCache::Mlp(c)) => EncoderGrads::Mlp(mlp.backward(c, dfeat)),
            (Encoder::Cnn(cnn), EncoderCache::Cnn(c)) => EncoderGrads::Cnn(cnn.backward(c, dfeat)),
            _ => panic!("cache kind does not match encoder family"),
        }
    }

    /// Class probabilities for a feature batch.
    pub fn classify(&self, features: &Array2<f64>) -> Array2<f64> {
        softmax_rows(&self.head.forward(features))
    }

    /// Projected, L2-normalized features.
    pub fn project(&self, features: &Array2<f64>) -> Array2<f64> {
        normalize_rows(&self.projector.forward(features)).0
    }

    /// Per-sample channel gradients: the gradient of the predicted-class
    /// logit with respect to the last feature map, pooled over space.
    ///
    /// With a global-average-pooled linear head this gradient is exactly the
    /// head weight row of the predicted class (scaled by the pooling factor
    /// for the CNN), so it is computed in closed form from a fresh forward
    /// pass; no recorded state is involved.
    pub fn record_channel_gradients(&self, batch: &BatchInput) -> Array2<f64> {
        let features = self.encode(batch);
        let logits = self.head.forward(&features);
        let n = logits.nrows();
        let pool_scale = match (&self.encoder, batch) {
            (Encoder::Cnn(cnn), BatchInput::Images(x)) => {
                let (_, _, h, w) = x.dim();
                let (mh, mw) = last_map_extent(cnn.convs.len(), h, w);
                1.0 / (mh * mw) as f64
            }
            _ => 1.0,
        };
        let mut out = Array2::zeros((n, self.feature_dim()));
        for i in 0..n {
            let pred = argmax_row(logits.row(i));
            out.row_mut(i).assign(&(&self.head.w.row(pred) * pool_scale));
        }
        out
    }

    /// Tensors in canonical order: encoder layers (w, b each), head w, head
    /// b, projector w, projector b. Checkpointing and the optimizer both
    /// rely on this order.
    pub fn flat_tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        match &self.encoder {
            Encoder::Mlp(mlp) => {
                for layer in &mlp.layers {
                    out.push(layer.w.as_slice().unwrap());
                    out.push(layer.b.as_slice().unwrap());
                }
            }
            Encoder::Cnn(cnn) => {
                for conv in &cnn.convs {
                    out.push(conv.w.as_slice().unwrap());
                    out.push(conv.b.as_slice().unwrap());
                }
            }
        }
        out.push(self.head.w.as_slice().unwrap());
        out.push(self.head.b.as_slice().unwrap());
        out.push(self.projector.w.as_slice().unwrap());
        out.push(self.projector.b.as_slice().unwrap());
        out
    }

    pub fn flat_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        match &mut self.encoder {
            Encoder::Mlp(mlp) => {
                for layer in &mut mlp.layers {
                    out.push(layer.w.as_slice_mut().unwrap());
                    out.push(layer.b.as_slice_mut().unwrap());
                }
            }
            Encoder::Cnn(cnn) => {
                for conv in &mut cnn.convs {
                    out.push(conv.w.as_slice_mut().unwrap());
                    out.push(conv.b.as_slice_mut().unwrap());
                }
            }
        }
        out.push(self.head.w.as_slice_mut().unwrap());
        out.push(self.head.b.as_slice_mut().unwrap());
        out.push(self.projector.w.as_slice_mut().unwrap());
        out.push(self.projector.b.as_slice_mut().unwrap());
        out
    }
}

impl ModelGrads {
    /// Same canonical order as [`Model::flat_tensors`].
    pub fn flat_tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        match &self.encoder {
            EncoderGrads::Mlp(layers) => {
                for g in layers {
                    out.push(g.w.as_slice().unwrap());
                    out.push(g.b.as_slice().unwrap());
                }
            }
            EncoderGrads::Cnn(convs) => {
                for g in convs {
                    out.push(g.w.as_slice().unwrap());
                    out.push(g.b.as_slice().unwrap());
                }
            }
        }
        out.push(self.head.w.as_slice().unwrap());
        out.push(self.head.b.as_slice().unwrap());
        out.push(self.projector.w.as_slice().unwrap());
        out.push(self.projector.b.as_slice().unwrap());
        out
    }
}

/// Row-wise softmax with the usual max-shift for stability.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// L2-normalize each row; exactly zero rows become the first basis vector.
/// Returns the normalized rows and the pre-normalization norms (zero rows
/// report a norm of 0), which the backward pass needs.
pub fn normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut out = x.clone();
    let mut norms = Array1::zeros(x.nrows());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-300 {
            row.fill(0.0);
            row[0] = 1.0;
            norms[i] = 0.0;
        } else {
            row.mapv_inplace(|v| v / norm);
            norms[i] = norm;
        }
    }
    (out, norms)
}

/// Backward through row normalization: dL/du = (dL/dz - z (z . dL/dz)) / |u|.
/// Rows that hit the zero fallback get zero gradient (the fallback is
/// locally constant).
pub fn normalize_rows_backward(
    z: &Array2<f64>,
    norms: &Array1<f64>,
    dz: &Array2<f64>,
) -> Array2<f64> {
    let mut du = Array2::zeros(dz.raw_dim());
    for i in 0..z.nrows() {
        let norm = norms[i];
        if norm == 0.0 {
            continue;
        }
        let zi = z.row(i);
        let gi = dz.row(i);
        let dot = zi.dot(&gi);
        for (j, d) in du.row_mut(i).iter_mut().enumerate() {
            *d = (gi[j] - zi[j] * dot) / norm;
        }
    }
    du
}

pub fn argmax_row(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of softmax predictions against hard labels; the
/// plain-CE training objective.
pub fn mean_ce(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    debug_assert_eq!(probs.nrows(), labels.len());
    let mut total = 0.0;
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        total -= row[y].max(crate::losses::CE_EPS).ln();
    }
    total / labels.len().max(1) as f64
}

/// Gradient of [`mean_ce`] with respect to the logits.
pub fn mean_ce_grad(probs: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let n = labels.len().max(1) as f64;
    let mut grad = probs.clone();
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }
    grad
}
