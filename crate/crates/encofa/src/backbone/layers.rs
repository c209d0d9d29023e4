//! Dense and convolutional building blocks with explicit backward passes.
//!
//! Everything is f64 and single-threaded; batches are small enough that
//! clarity wins over blocking tricks. Convolutions are 3x3 with padding 1,
//! pooling is 2x2 average with stride 2 (floor semantics on odd extents).

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fully connected layer, `w` laid out (out, in).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Linear {
        let bound = (6.0 / in_dim as f64).sqrt();
        let mut w = Array2::zeros((out_dim, in_dim));
        for v in w.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        Linear {
            w,
            b: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Returns (dx, grads) for upstream gradient `dy`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (Array2<f64>, LinearGrads) {
        let dx = dy.dot(&self.w);
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(ndarray::Axis(0));
        (dx, LinearGrads { w: dw, b: db })
    }

    pub fn zero_grads(&self) -> LinearGrads {
        LinearGrads {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }
}

/// Multi-layer perceptron encoder: Linear-ReLU blocks ending in a plain
/// Linear that emits the feature vector.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation outputs of each hidden layer.
    pre_acts: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes` runs input -> hidden... -> feature.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
        assert!(sizes.len() >= 2, "mlp needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::new();
        let mut cur = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let z = layer.forward(&cur);
            if i < last {
                pre_acts.push(z.clone());
                cur = z.mapv(|v| v.max(0.0));
            } else {
                cur = z;
            }
        }
        (cur, MlpCache { inputs, pre_acts })
    }

    pub fn backward(&self, cache: &MlpCache, dfeat: &Array2<f64>) -> Vec<LinearGrads> {
        let mut grads = vec![self.layers[0].zero_grads(); self.layers.len()];
        let mut dy = dfeat.clone();
        for i in (0..self.layers.len()).rev() {
            let (dx, g) = self.layers[i].backward(&cache.inputs[i], &dy);
            grads[i] = g;
            if i > 0 {
                // Gate through the ReLU that fed this layer.
                let pre = &cache.pre_acts[i - 1];
                dy = dx * pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            }
        }
        grads
    }
}

/// Small convolutional encoder: per stage a 3x3 conv (pad 1) + ReLU, with a
/// 2x2 average pool after every stage except the last, then global average
/// pooling to the feature vector. The channel count of the last stage is
/// the feature dimension.
#[derive(Debug, Clone)]
pub struct Cnn {
    pub convs: Vec<Conv3x3>,
}

pub struct CnnCache {
    /// Input to each conv.
    inputs: Vec<Array4<f64>>,
    /// Pre-ReLU outputs of each conv.
    pre_acts: Vec<Array4<f64>>,
    /// Post-ReLU activation of the last conv (the feature map fed to GAP).
    pub last_map: Array4<f64>,
}

impl Cnn {
    /// `channels` runs input channels -> stage channels...; the final entry
    /// is the feature dimension.
    pub fn new(channels: &[usize], rng: &mut ChaCha8Rng) -> Cnn {
        assert!(channels.len() >= 2, "cnn needs at least one conv stage");
        let convs = channels
            .windows(2)
            .map(|w| Conv3x3::new(w[0], w[1], rng))
            .collect();
        Cnn { convs }
    }

    pub fn forward(&self, x: &Array4<f64>) -> (Array2<f64>, CnnCache) {
        let mut inputs = Vec::new();
        let mut pre_acts = Vec::new();
        let mut cur = x.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            inputs.push(cur.clone());
            let z = conv.forward(&cur);
            pre_acts.push(z.clone());
            let a = z.mapv(|v| v.max(0.0));
            cur = if i < last { avg_pool2(&a) } else { a };
        }
        let feat = global_avg_pool(&cur);
        (
            feat,
            CnnCache {
                inputs,
                pre_acts,
                last_map: cur,
            },
        )
    }

    pub fn backward(&self, cache: &CnnCache, dfeat: &Array2<f64>) -> Vec<Conv3x3Grads> {
        let mut grads: Vec<Conv3x3Grads> = self.convs.iter().map(Conv3x3::zero_grads).collect();
        let last = self.convs.len() - 1;
        let mut da = global_avg_pool_backward(dfeat, &cache.last_map);
        for i in (0..self.convs.len()).rev() {
            if i < last {
                // Undo the pool that followed stage i: the forward pooled
                // the post-ReLU activation of this stage.
                let pooled_from = cache.pre_acts[i].mapv(|v| v.max(0.0));
                da = avg_pool2_backward(&da, &pooled_from);
            }
            let dz = &da * &cache.pre_acts[i].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let (dx, g) = self.convs[i].backward(&cache.inputs[i], &dz);
            grads[i] = g;
            da = dx;
        }
        grads
    }

    pub fn feature_dim(&self) -> usize {
        self.convs.last().unwrap().w.shape()[0]
    }
}

/// 3x3 convolution with padding 1 and stride 1.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    /// (out_ch, in_ch, 3, 3)
    pub w: Array4<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Conv3x3Grads {
    pub w: Array4<f64>,
    pub b: Array1<f64>,
}

impl Conv3x3 {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Conv3x3 {
        let fan_in = (in_ch * 9) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let mut w = Array4::zeros((out_ch, in_ch, 3, 3));
        for v in w.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        Conv3x3 {
            w,
            b: Array1::zeros(out_ch),
        }
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, in_ch, h, w) = x.dim();
        let out_ch = self.w.shape()[0];
        debug_assert_eq!(in_ch, self.w.shape()[1]);
        let mut out = Array4::zeros((n, out_ch, h, w));
        for ni in 0..n {
            for oc in 0..out_ch {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = self.b[oc];
                        for ic in 0..in_ch {
                            for ky in 0..3usize {
                                let sy = y as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..3usize {
                                    let sx = xx as isize + kx as isize - 1;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    acc += self.w[[oc, ic, ky, kx]]
                                        * x[[ni, ic, sy as usize, sx as usize]];
                                }
                            }
                        }
                        out[[ni, oc, y, xx]] = acc;
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, x: &Array4<f64>, dy: &Array4<f64>) -> (Array4<f64>, Conv3x3Grads) {
        let (n, in_ch, h, w) = x.dim();
        let out_ch = self.w.shape()[0];
        let mut dx = Array4::zeros(x.raw_dim());
        let mut dw = Array4::zeros(self.w.raw_dim());
        let mut db = Array1::zeros(out_ch);
        for ni in 0..n {
            for oc in 0..out_ch {
                for y in 0..h {
                    for xx in 0..w {
                        let g = dy[[ni, oc, y, xx]];
                        if g == 0.0 {
                            continue;
                        }
                        db[oc] += g;
                        for ic in 0..in_ch {
                            for ky in 0..3usize {
                                let sy = y as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..3usize {
                                    let sx = xx as isize + kx as isize - 1;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    dw[[oc, ic, ky, kx]] += g * x[[ni, ic, sy as usize, sx as usize]];
                                    dx[[ni, ic, sy as usize, sx as usize]] +=
                                        g * self.w[[oc, ic, ky, kx]];
                                }
                            }
                        }
                    }
                }
            }
        }
        (dx, Conv3x3Grads { w: dw, b: db })
    }

    pub fn zero_grads(&self) -> Conv3x3Grads {
        Conv3x3Grads {
            w: Array4::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }
}

fn avg_pool2(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::zeros((n, c, oh, ow));
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[[ni, ci, y, xx]] = 0.25
                        * (x[[ni, ci, 2 * y, 2 * xx]]
                            + x[[ni, ci, 2 * y, 2 * xx + 1]]
                            + x[[ni, ci, 2 * y + 1, 2 * xx]]
                            + x[[ni, ci, 2 * y + 1, 2 * xx + 1]]);
                }
            }
        }
    }
    out
}

fn avg_pool2_backward(dy: &Array4<f64>, x_like: &Array4<f64>) -> Array4<f64> {
    let (n, c, oh, ow) = dy.dim();
    let mut dx = Array4::zeros(x_like.raw_dim());
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let g = 0.25 * dy[[ni, ci, y, xx]];
                    dx[[ni, ci, 2 * y, 2 * xx]] += g;
                    dx[[ni, ci, 2 * y, 2 * xx + 1]] += g;
                    dx[[ni, ci, 2 * y + 1, 2 * xx]] += g;
                    dx[[ni, ci, 2 * y + 1, 2 * xx + 1]] += g;
                }
            }
        }
    }
    dx
}

fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut out = Array2::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    acc += x[[ni, ci, y, xx]];
                }
            }
            out[[ni, ci]] = acc * scale;
        }
    }
    out
}

fn global_avg_pool_backward(dfeat: &Array2<f64>, map_like: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = map_like.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut dx = Array4::zeros(map_like.raw_dim());
    for ni in 0..n {
        for ci in 0..c {
            let g = dfeat[[ni, ci]] * scale;
            for y in 0..h {
                for xx in 0..w {
                    dx[[ni, ci, y, xx]] = g;
                }
            }
        }
    }
    dx
}

/// Spatial extent of the last conv feature map for an input of `h x w`:
/// one 2x2 pool per stage except the last.
pub fn last_map_extent(stages: usize, h: usize, w: usize) -> (usize, usize) {
    let mut h = h;
    let mut w = w;
    for _ in 0..stages.saturating_sub(1) {
        h /= 2;
        w /= 2;
    }
    (h, w)
}
