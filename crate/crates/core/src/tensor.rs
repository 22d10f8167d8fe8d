//! Dense `f32` tensors and the primitive inference operators.
//!
//! Every operator is a pure function of its inputs. Convolution and the
//! fully-connected product accumulate in `f64` and round once to `f32` per
//! output element, so results do not depend on thread scheduling.
//!
//! # Convolution orientation
//!
//! [`conv2d`] computes a *cross-correlation*: the kernel is applied as
//! stored, without flipping. This is the convention of every mainstream
//! deep-learning framework, and pre-trained VGG weights assume it. A
//! textbook (flipped) convolution can be obtained by reversing both spatial
//! axes of the kernel before the call.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} values were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("invalid shape {0:?}: rank must be >= 1 and every dimension >= 1")]
    InvalidShape(Vec<usize>),
    #[error("{op}: expected {expected}, got shape {actual:?}")]
    Rank {
        op: &'static str,
        expected: &'static str,
        actual: Vec<usize>,
    },
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Mismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: window {window:?} does not fit padded input of spatial size {input:?}")]
    Window {
        op: &'static str,
        window: (usize, usize),
        input: (usize, usize),
    },
    #[error("{op}: stride must be positive, got {stride:?}")]
    Stride { op: &'static str, stride: (usize, usize) },
    #[error("{op}: input contains a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense tensor of `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    /// Rank-1 tensor holding `data`.
    pub fn vector(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    fn check_finite(&self, op: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    fn chw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: "rank-3 [C,H,W]",
                actual: self.shape.clone(),
            }),
        }
    }
}

/// Convolution hyperparameters plus borrowed kernel and optional bias.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams<'a> {
    /// `[out_channels, in_channels, kh, kw]`.
    pub kernel: &'a Tensor,
    /// `[out_channels]`; treated as zeros when absent.
    pub bias: Option<&'a Tensor>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<'a> ConvParams<'a> {
    pub fn new(kernel: &'a Tensor) -> Self {
        Self {
            kernel,
            bias: None,
            stride: (1, 1),
            padding: (0, 0),
        }
    }

    pub fn with_bias(mut self, bias: &'a Tensor) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn with_stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: (usize, usize)) -> Self {
        self.padding = padding;
        self
    }
}

/// `floor((input + 2*pad - window) / stride) + 1`, or `None` when the window
/// does not fit.
pub fn output_dim(input: usize, window: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if window == 0 || stride == 0 || window > padded {
        return None;
    }
    Some((padded - window) / stride + 1)
}

/// 2-D cross-correlation of a `[C,H,W]` input. See the module docs on
/// orientation.
pub fn conv2d(input: &Tensor, params: &ConvParams<'_>) -> Result<Tensor> {
    const OP: &str = "conv2d";
    let (c_in, h, w) = input.chw(OP)?;
    let (c_out, k_in, kh, kw) = match params.kernel.shape[..] {
        [o, i, kh, kw] => (o, i, kh, kw),
        _ => {
            return Err(TensorError::Rank {
                op: OP,
                expected: "rank-4 kernel [C_out,C_in,KH,KW]",
                actual: params.kernel.shape.clone(),
            })
        }
    };
    if k_in != c_in {
        return Err(TensorError::Mismatch {
            op: OP,
            left: input.shape.clone(),
            right: params.kernel.shape.clone(),
        });
    }
    if let Some(bias) = params.bias {
        if bias.shape[..] != [c_out] {
            return Err(TensorError::Mismatch {
                op: OP,
                left: params.kernel.shape.clone(),
                right: bias.shape.clone(),
            });
        }
    }
    let (sh, sw) = params.stride;
    if sh == 0 || sw == 0 {
        return Err(TensorError::Stride {
            op: OP,
            stride: params.stride,
        });
    }
    let (ph, pw) = params.padding;
    let window_err = || TensorError::Window {
        op: OP,
        window: (kh, kw),
        input: (h + 2 * ph, w + 2 * pw),
    };
    let h_out = output_dim(h, kh, sh, ph).ok_or_else(window_err)?;
    let w_out = output_dim(w, kw, sw, pw).ok_or_else(window_err)?;
    input.check_finite(OP)?;
    params.kernel.check_finite(OP)?;

    let x = &input.data;
    let k = &params.kernel.data;
    let plane = h_out * w_out;
    let mut out = vec![0.0f32; c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        let bias = params.bias.map_or(0.0, |b| f64::from(b.data[o]));
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut acc = bias;
                for c in 0..c_in {
                    for ky in 0..kh {
                        // Padded coordinates; rows in the zero border add nothing.
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = (c * h + iy as usize) * w;
                        let krow = ((o * c_in + c) * kh + ky) * kw;
                        for kx in 0..kw {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += f64::from(x[row + ix as usize]) * f64::from(k[krow + kx]);
                        }
                    }
                }
                dst[oy * w_out + ox] = acc as f32;
            }
        }
    });
    Tensor::new(vec![c_out, h_out, w_out], out)
}

/// Max-pooling over whole windows. Trailing rows/columns that cannot hold a
/// full window are not visited; windows never overhang the input.
pub fn max_pool(input: &Tensor, window: (usize, usize), stride: (usize, usize)) -> Result<Tensor> {
    const OP: &str = "max_pool";
    let (c, h, w) = input.chw(OP)?;
    let (kh, kw) = window;
    let (sh, sw) = stride;
    if sh == 0 || sw == 0 {
        return Err(TensorError::Stride { op: OP, stride });
    }
    let window_err = || TensorError::Window {
        op: OP,
        window,
        input: (h, w),
    };
    let h_out = output_dim(h, kh, sh, 0).ok_or_else(window_err)?;
    let w_out = output_dim(w, kw, sw, 0).ok_or_else(window_err)?;

    let mut out = Vec::with_capacity(c * h_out * w_out);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut best = f32::NEG_INFINITY;
                for ky in 0..kh {
                    let row = base + (oy * sh + ky) * w + ox * sw;
                    for v in &input.data[row..row + kw] {
                        best = best.max(*v);
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(vec![c, h_out, w_out], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

pub fn flatten(input: &Tensor) -> Tensor {
    Tensor {
        shape: vec![input.data.len()],
        data: input.data.clone(),
    }
}

/// `out[i] = bias[i] + sum_j weights[i, j] * input[j]`.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const OP: &str = "fully_connected";
    if input.rank() != 1 {
        return Err(TensorError::Rank {
            op: OP,
            expected: "rank-1 input (flatten first)",
            actual: input.shape.clone(),
        });
    }
    let n = input.len();
    let m = match weights.shape[..] {
        [m, cols] if cols == n => m,
        _ => {
            return Err(TensorError::Mismatch {
                op: OP,
                left: input.shape.clone(),
                right: weights.shape.clone(),
            })
        }
    };
    if bias.shape[..] != [m] {
        return Err(TensorError::Mismatch {
            op: OP,
            left: weights.shape.clone(),
            right: bias.shape.clone(),
        });
    }
    input.check_finite(OP)?;

    let x = &input.data;
    let out: Vec<f32> = weights
        .data
        .par_chunks(n)
        .zip(bias.data.par_iter())
        .map(|(row, &b)| {
            let dot = row
                .iter()
                .zip(x)
                .fold(f64::from(b), |acc, (&wv, &xv)| acc + f64::from(wv) * f64::from(xv));
            dot as f32
        })
        .collect();
    Tensor::new(vec![m], out)
}

/// Numerically stable softmax in `f64`.
pub fn softmax_f64(logits: &[f64]) -> Result<Vec<f64>> {
    const OP: &str = "softmax";
    if logits.is_empty() {
        return Err(TensorError::Empty { op: OP });
    }
    if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: OP, index });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Softmax over a rank-1 tensor. Computed in `f64`, stored as `f32`.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 {
        return Err(TensorError::Rank {
            op: "softmax",
            expected: "rank-1 logits",
            actual: logits.shape.clone(),
        });
    }
    let wide: Vec<f64> = logits.data.iter().map(|&v| f64::from(v)).collect();
    let probs = softmax_f64(&wide)?;
    Tensor::vector(probs.into_iter().map(|p| p as f32).collect())
}
