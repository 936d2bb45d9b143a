//! Forward pass: per-layer batch kernels and the activation trace.
//!
//! Convolution goes through im2col plus one matrix multiply per batch, so
//! throughput tracks the GEMM backend. Every layer output is retained in
//! the trace; zero-activation statistics and backprop both read it.

use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;

use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::network::NetworkT;
use crate::tensor::{Element, TensorT};

/// Ordered per-layer outputs of one forward pass, plus the batch input.
#[derive(Debug, Clone)]
pub struct ActivationTraceT<F> {
    pub input: TensorT<F>,
    pub outputs: Vec<TensorT<F>>,
}

pub type ActivationTrace = ActivationTraceT<f32>;

impl<F: Element> ActivationTraceT<F> {
    /// Input tensor of layer `i` (the previous layer's output).
    pub fn input_of(&self, i: usize) -> &TensorT<F> {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }

    /// Final-layer output: class probabilities, one row per example.
    pub fn probabilities(&self) -> &TensorT<F> {
        self.outputs.last().expect("trace has at least one layer")
    }
}

impl<F: Element> NetworkT<F> {
    /// Run the batch through every layer, collecting all outputs.
    pub fn forward(&self, batch: &TensorT<F>) -> Result<ActivationTraceT<F>> {
        self.forward_masked(batch, &BTreeMap::new())
    }

    /// Forward pass with selected neurons' outputs forced to zero.
    /// `masks` maps a parameterized layer index to the neuron indices to
    /// silence; downstream relu/pool keep zeros at zero, so this is the
    /// behavioral twin of structural removal.
    pub fn forward_masked(
        &self,
        batch: &TensorT<F>,
        masks: &BTreeMap<usize, Vec<usize>>,
    ) -> Result<ActivationTraceT<F>> {
        let (c, h, w) = self.input_shape();
        let shape = batch.shape();
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(Error::Input(format!(
                "batch shape {:?} does not match network input (N, {c}, {h}, {w})",
                shape
            )));
        }
        let mut outputs: Vec<TensorT<F>> = Vec::with_capacity(self.layer_count());
        for (i, layer) in self.layers().iter().enumerate() {
            let input = if i == 0 { batch } else { &outputs[i - 1] };
            let mut out = match layer {
                LayerSpec::Conv2d {
                    stride, padding, ..
                } => {
                    let p = self.params(i).expect("conv has params");
                    let out_shape = self.output_shape_of(i);
                    conv2d_forward(input, &p.weight, &p.bias, *stride, *padding, out_shape)
                }
                LayerSpec::Maxpool2d { window, stride } => {
                    maxpool_forward(input, *window, *stride, self.output_shape_of(i))
                }
                LayerSpec::Dense { .. } => {
                    let p = self.params(i).expect("dense has params");
                    dense_forward(input, &p.weight, &p.bias)
                }
                LayerSpec::Relu => relu_forward(input),
                LayerSpec::SoftmaxXent => softmax_forward(input),
            };
            if let Some(idx) = masks.get(&i) {
                zero_units(&mut out, idx);
            }
            debug_assert_eq!(
                &out.shape()[1..],
                self.output_shape_of(i),
                "layer {i} output disagrees with the static shape chain"
            );
            if !out.all_finite() {
                return Err(Error::Numeric {
                    layer: i,
                    name: self.name_of(i).to_string(),
                });
            }
            outputs.push(out);
        }
        Ok(ActivationTraceT {
            input: batch.clone(),
            outputs,
        })
    }

    /// Forward pass returning only the class probabilities.
    pub fn predict(&self, batch: &TensorT<F>) -> Result<TensorT<F>> {
        let mut trace = self.forward(batch)?;
        Ok(trace.outputs.pop().expect("network has layers"))
    }
}

/// Zero the per-example slices of the listed output units (channels of a
/// feature map, or features of a vector).
pub(crate) fn zero_units<F: Element>(out: &mut TensorT<F>, units: &[usize]) {
    let shape = out.shape().to_vec();
    let n = shape[0];
    let c = shape[1];
    let m: usize = shape[2..].iter().product();
    let data = out.as_mut_slice();
    for ex in 0..n {
        for &u in units {
            debug_assert!(u < c);
            let base = (ex * c + u) * m;
            data[base..base + m].fill(F::zero());
        }
    }
}

/// Number of columns (output positions) of an im2col matrix.
pub(crate) fn conv_geometry(
    in_shape: &[usize],
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
) -> (usize, usize, usize) {
    let (h, w) = (in_shape[1], in_shape[2]);
    let out_h = (h + 2 * padding - kernel_h) / stride + 1;
    let out_w = (w + 2 * padding - kernel_w) / stride + 1;
    (in_shape[0], out_h, out_w)
}

/// Unfold one example's patches into a `(K, L)` column block, where
/// `K = in_c * kh * kw` and `L = out_h * out_w`. `cols` is the full-batch
/// buffer of width `n * L`; this fills columns `[ex*L, (ex+1)*L)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_example<F: Element>(
    x: &[F],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
    cols: &mut [F],
    cols_width: usize,
    col_offset: usize,
) {
    let out_h = (in_h + 2 * padding - kernel_h) / stride + 1;
    let out_w = (in_w + 2 * padding - kernel_w) / stride + 1;
    for ci in 0..in_c {
        let x_ch = &x[ci * in_h * in_w..(ci + 1) * in_h * in_w];
        for ki in 0..kernel_h {
            for kj in 0..kernel_w {
                let row = (ci * kernel_h + ki) * kernel_w + kj;
                let row_base = row * cols_width + col_offset;
                for oh in 0..out_h {
                    let ih = (oh * stride + ki) as isize - padding as isize;
                    let dst = &mut cols[row_base + oh * out_w..row_base + (oh + 1) * out_w];
                    if ih < 0 || ih as usize >= in_h {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src_row = &x_ch[ih as usize * in_w..(ih as usize + 1) * in_w];
                    if padding == 0 && stride == 1 {
                        dst.copy_from_slice(&src_row[kj..kj + out_w]);
                    } else {
                        for (ow, d) in dst.iter_mut().enumerate() {
                            let iw = (ow * stride + kj) as isize - padding as isize;
                            *d = if iw < 0 || iw as usize >= in_w {
                                F::zero()
                            } else {
                                src_row[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Fold a `(K, L)` gradient column block back onto one example's input
/// gradient (scatter-add; patches overlap when stride < kernel).
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_example<F: Element>(
    dcols: &[F],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
    dx: &mut [F],
    cols_width: usize,
    col_offset: usize,
) {
    let out_h = (in_h + 2 * padding - kernel_h) / stride + 1;
    let out_w = (in_w + 2 * padding - kernel_w) / stride + 1;
    for ci in 0..in_c {
        let dx_ch = &mut dx[ci * in_h * in_w..(ci + 1) * in_h * in_w];
        for ki in 0..kernel_h {
            for kj in 0..kernel_w {
                let row = (ci * kernel_h + ki) * kernel_w + kj;
                let row_base = row * cols_width + col_offset;
                for oh in 0..out_h {
                    let ih = (oh * stride + ki) as isize - padding as isize;
                    if ih < 0 || ih as usize >= in_h {
                        continue;
                    }
                    let src = &dcols[row_base + oh * out_w..row_base + (oh + 1) * out_w];
                    for (ow, &g) in src.iter().enumerate() {
                        let iw = (ow * stride + kj) as isize - padding as isize;
                        if iw < 0 || iw as usize >= in_w {
                            continue;
                        }
                        dx_ch[ih as usize * in_w + iw as usize] =
                            dx_ch[ih as usize * in_w + iw as usize] + g;
                    }
                }
            }
        }
    }
}

/// Build the whole-batch im2col matrix `(K, N*L)`.
pub(crate) fn batch_cols<F: Element>(
    input: &TensorT<F>,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
) -> (TensorT<F>, usize) {
    let shape = input.shape();
    let (n, in_c, in_h, in_w) = (shape[0], shape[1], shape[2], shape[3]);
    let (_, out_h, out_w) = conv_geometry(&shape[1..], kernel_h, kernel_w, stride, padding);
    let l = out_h * out_w;
    let k = in_c * kernel_h * kernel_w;
    let mut cols = TensorT::zeros(vec![k, n * l]);
    let per_ex = in_c * in_h * in_w;
    let cols_data = cols.as_mut_slice();
    for ex in 0..n {
        im2col_example(
            &input.as_slice()[ex * per_ex..(ex + 1) * per_ex],
            in_c,
            in_h,
            in_w,
            kernel_h,
            kernel_w,
            stride,
            padding,
            cols_data,
            n * l,
            ex * l,
        );
    }
    (cols, l)
}

fn conv2d_forward<F: Element>(
    input: &TensorT<F>,
    weight: &TensorT<F>,
    bias: &TensorT<F>,
    stride: usize,
    padding: usize,
    out_shape: &[usize],
) -> TensorT<F> {
    let n = input.shape()[0];
    let (out_c, out_h, out_w) = (out_shape[0], out_shape[1], out_shape[2]);
    let w_shape = weight.shape();
    let (kernel_h, kernel_w) = (w_shape[2], w_shape[3]);
    let k = w_shape[1] * kernel_h * kernel_w;
    let (cols, l) = batch_cols(input, kernel_h, kernel_w, stride, padding);

    // (out_c, K) x (K, N*L) -> (out_c, N*L)
    let mut y = TensorT::<F>::zeros(vec![out_c, n * l]);
    general_mat_mul(
        F::one(),
        &weight.view2(out_c, k),
        &cols.view2(k, n * l),
        F::zero(),
        &mut y.view2_mut(out_c, n * l),
    );

    // Scatter example-major and add bias.
    let mut out = TensorT::zeros(vec![n, out_c, out_h, out_w]);
    let y_data = y.as_slice();
    let b = bias.as_slice();
    let out_data = out.as_mut_slice();
    for ex in 0..n {
        for oc in 0..out_c {
            let src = &y_data[oc * n * l + ex * l..oc * n * l + (ex + 1) * l];
            let dst = &mut out_data[(ex * out_c + oc) * l..(ex * out_c + oc + 1) * l];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + b[oc];
            }
        }
    }
    out
}

fn maxpool_forward<F: Element>(
    input: &TensorT<F>,
    window: usize,
    stride: usize,
    out_shape: &[usize],
) -> TensorT<F> {
    let shape = input.shape();
    let (n, c, in_h, in_w) = (shape[0], shape[1], shape[2], shape[3]);
    let (out_h, out_w) = (out_shape[1], out_shape[2]);
    let mut out = TensorT::zeros(vec![n, c, out_h, out_w]);
    let x = input.as_slice();
    let o = out.as_mut_slice();
    for nc in 0..n * c {
        let x_ch = &x[nc * in_h * in_w..(nc + 1) * in_h * in_w];
        let o_ch = &mut o[nc * out_h * out_w..(nc + 1) * out_h * out_w];
        for oh in 0..out_h {
            for ow in 0..out_w {
                let mut best = F::neg_infinity();
                for ki in 0..window {
                    let row = (oh * stride + ki) * in_w + ow * stride;
                    for kj in 0..window {
                        let v = x_ch[row + kj];
                        if v > best {
                            best = v;
                        }
                    }
                }
                o_ch[oh * out_w + ow] = best;
            }
        }
    }
    out
}

fn dense_forward<F: Element>(
    input: &TensorT<F>,
    weight: &TensorT<F>,
    bias: &TensorT<F>,
) -> TensorT<F> {
    let n = input.shape()[0];
    let features: usize = input.shape()[1..].iter().product();
    let out_f = weight.shape()[0];
    let mut out = TensorT::<F>::zeros(vec![n, out_f]);
    // (N, F) x (F, out) -> (N, out)
    general_mat_mul(
        F::one(),
        &input.view2(n, features),
        &weight.view2(out_f, features).reversed_axes(),
        F::zero(),
        &mut out.view2_mut(n, out_f),
    );
    let b = bias.as_slice();
    let data = out.as_mut_slice();
    for ex in 0..n {
        for (j, v) in data[ex * out_f..(ex + 1) * out_f].iter_mut().enumerate() {
            *v = *v + b[j];
        }
    }
    out
}

fn relu_forward<F: Element>(input: &TensorT<F>) -> TensorT<F> {
    let mut out = input.clone();
    for v in out.as_mut_slice() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
    out
}

/// Row-wise numerically-stable softmax over the flattened features.
fn softmax_forward<F: Element>(input: &TensorT<F>) -> TensorT<F> {
    let n = input.shape()[0];
    let classes: usize = input.shape()[1..].iter().product();
    let mut data = input.as_slice().to_vec();
    for row in data.chunks_exact_mut(classes) {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    TensorT::new(vec![n, classes], data).expect("shape preserved")
}

/// Log-sum-exp of each row; paired with the label logit this yields an
/// exactly non-negative cross-entropy without forming log(0).
pub(crate) fn row_logsumexp<F: Element>(logits: &[F]) -> F {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for &v in logits {
        sum = sum + (v - max).exp();
    }
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_network, lenet_specs};
    use crate::tensor::Tensor;

    #[test]
    fn identity_conv_passes_input_through() {
        // 1x1 conv, identity weight, zero bias: output equals input.
        let weight = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::zeros(vec![1]);
        let batch = Tensor::new(vec![2, 1, 1, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, -4.0]).unwrap();
        let out = conv2d_forward(&batch, &weight, &bias, 1, 0, &[1, 1, 3]);
        assert_eq!(out.as_slice(), batch.as_slice());
    }

    #[test]
    fn relu_definition() {
        let t = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let out = relu_forward(&t);
        assert_eq!(out.as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn dense_hand_example() {
        // y = Wx + b with W=[[1,2],[3,4]], b=[0.5,-0.5], x=[1,1] -> [3.5, 6.5]
        let weight = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bias = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let y = dense_forward(&x, &weight, &bias);
        assert_eq!(y.as_slice(), &[3.5, 6.5]);
    }

    #[test]
    fn maxpool_takes_window_max() {
        let x = Tensor::new(
            vec![1, 1, 4, 4],
            vec![
                1.0, 2.0, 5.0, 6.0, //
                3.0, 4.0, 7.0, 8.0, //
                -1.0, -2.0, 0.0, 0.0, //
                -3.0, -4.0, 0.0, 9.0,
            ],
        )
        .unwrap();
        let y = maxpool_forward(&x, 2, 2, &[1, 2, 2]);
        assert_eq!(y.as_slice(), &[4.0, 8.0, -1.0, 9.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        let y = softmax_forward(&x);
        for row in y.as_slice().chunks(3) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn lenet_forward_shapes_and_probabilities() {
        let net = init_network(&lenet_specs(), (1, 28, 28), 3).unwrap();
        let batch = Tensor::new(vec![2, 1, 28, 28], vec![0.5; 2 * 28 * 28]).unwrap();
        let trace = net.forward(&batch).unwrap();
        assert_eq!(trace.outputs[0].shape(), &[2, 20, 24, 24]);
        assert_eq!(trace.outputs[2].shape(), &[2, 20, 12, 12]);
        assert_eq!(trace.outputs[3].shape(), &[2, 50, 8, 8]);
        assert_eq!(trace.outputs[5].shape(), &[2, 50, 4, 4]);
        assert_eq!(trace.outputs[6].shape(), &[2, 500]);
        assert_eq!(trace.probabilities().shape(), &[2, 10]);
        for row in trace.probabilities().as_slice().chunks(10) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn non_finite_output_names_the_layer() {
        let mut net = init_network(&lenet_specs(), (1, 28, 28), 3).unwrap();
        net.params_mut(3).unwrap().bias.as_mut_slice()[0] = f32::NAN;
        let batch = Tensor::new(vec![1, 1, 28, 28], vec![0.1; 28 * 28]).unwrap();
        match net.forward(&batch) {
            Err(Error::Numeric { layer, name }) => {
                assert_eq!(layer, 3);
                assert_eq!(name, "conv2");
            }
            other => panic!("expected numeric fault, got {other:?}"),
        }
    }

    #[test]
    fn batch_shape_is_checked() {
        let net = init_network(&lenet_specs(), (1, 28, 28), 3).unwrap();
        let bad = Tensor::new(vec![1, 1, 27, 28], vec![0.0; 27 * 28]).unwrap();
        assert!(net.forward(&bad).is_err());
    }

    #[test]
    fn padded_conv_matches_direct_computation() {
        // 1 channel, 2x2 input, 3x3 kernel of ones, padding 1: each output
        // equals the sum of the in-range neighbours.
        let weight = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let bias = Tensor::zeros(vec![1]);
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv2d_forward(&x, &weight, &bias, 1, 1, &[1, 2, 2]);
        assert_eq!(y.as_slice(), &[10.0, 10.0, 10.0, 10.0]);
    }
}
