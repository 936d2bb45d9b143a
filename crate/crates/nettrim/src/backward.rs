//! Backpropagation through a recorded activation trace.
//!
//! Gradients are batch-mean scaled: the softmax/cross-entropy head divides
//! by the batch size once and every upstream gradient inherits it, so the
//! learning rate is independent of batch size.

use ndarray::linalg::general_mat_mul;

use crate::error::{Error, Result};
use crate::forward::{batch_cols, col2im_example, row_logsumexp, ActivationTraceT};
use crate::layer::LayerSpec;
use crate::network::{LayerParams, NetworkT};
use crate::tensor::{Element, TensorT};

/// One gradient tensor pair per parameterized layer, same shapes as the
/// parameters they correspond to.
#[derive(Debug, Clone)]
pub struct GradientsT<F> {
    pub layers: Vec<Option<LayerParams<F>>>,
}

pub type Gradients = GradientsT<f32>;

impl<F: Element> NetworkT<F> {
    /// Compute parameter gradients and the batch-mean cross-entropy loss.
    /// `trace` must come from a forward pass of this network.
    pub fn backward(
        &self,
        trace: &ActivationTraceT<F>,
        labels: &[u8],
    ) -> Result<(GradientsT<F>, F)> {
        backward(self, trace, labels)
    }

    /// Batch-mean cross-entropy loss from a forward pass alone.
    pub fn batch_loss(&self, batch: &TensorT<F>, labels: &[u8]) -> Result<F> {
        let trace = self.forward(batch)?;
        loss_from_trace(self, &trace, labels)
    }
}

/// Free-function form of [`NetworkT::backward`].
pub fn backward<F: Element>(
    net: &NetworkT<F>,
    trace: &ActivationTraceT<F>,
    labels: &[u8],
) -> Result<(GradientsT<F>, F)> {
    let last = net.layer_count() - 1;
    if !matches!(net.layers()[last], LayerSpec::SoftmaxXent) {
        return Err(Error::Config(
            "backward requires a softmax-xent head".into(),
        ));
    }
    if trace.outputs.len() != net.layer_count() {
        return Err(Error::Input(format!(
            "trace has {} layer outputs, network has {} layers",
            trace.outputs.len(),
            net.layer_count()
        )));
    }
    let probs = &trace.outputs[last];
    let n = probs.shape()[0];
    let classes = probs.shape()[1];
    if labels.len() != n {
        return Err(Error::Input(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Input(format!(
            "label {bad} out of range [0, {classes})"
        )));
    }

    let loss = loss_from_trace(net, trace, labels)?;

    // d(loss)/d(logits) = (P - onehot) / N
    let inv_n = F::one() / F::from_usize(n).unwrap();
    let mut grad = TensorT::<F>::zeros(vec![n, classes]);
    {
        let g = grad.as_mut_slice();
        let p = probs.as_slice();
        for ex in 0..n {
            let y = labels[ex] as usize;
            for c in 0..classes {
                let delta = if c == y { F::one() } else { F::zero() };
                g[ex * classes + c] = (p[ex * classes + c] - delta) * inv_n;
            }
        }
    }

    let mut grads: Vec<Option<LayerParams<F>>> = vec![None; net.layer_count()];
    // Walk layers in reverse, skipping the head we just differentiated.
    for i in (0..last).rev() {
        let input = trace.input_of(i);
        let output = &trace.outputs[i];
        let need_dx = i > 0;
        grad = match &net.layers()[i] {
            LayerSpec::Conv2d {
                stride, padding, ..
            } => {
                let p = net.params(i).expect("conv has params");
                let (dw, db, dx) =
                    conv2d_backward(input, &p.weight, &grad, *stride, *padding, need_dx);
                grads[i] = Some(LayerParams {
                    weight: dw,
                    bias: db,
                });
                match dx {
                    Some(dx) => dx,
                    None => break,
                }
            }
            LayerSpec::Maxpool2d { window, stride } => {
                maxpool_backward(input, &grad, *window, *stride)
            }
            LayerSpec::Dense { .. } => {
                let p = net.params(i).expect("dense has params");
                let (dw, db, dx) = dense_backward(input, &p.weight, &grad, need_dx);
                grads[i] = Some(LayerParams {
                    weight: dw,
                    bias: db,
                });
                match dx {
                    Some(dx) => dx,
                    None => break,
                }
            }
            LayerSpec::Relu => relu_backward(output, &grad),
            LayerSpec::SoftmaxXent => {
                return Err(Error::Config(
                    "softmax-xent must be the final layer only".into(),
                ))
            }
        };
    }

    Ok((GradientsT { layers: grads }, loss))
}

/// Mean of `logsumexp(logits) - logits[label]` over the batch; exact zero
/// when the predicted distribution is exactly one-hot on the label.
fn loss_from_trace<F: Element>(
    net: &NetworkT<F>,
    trace: &ActivationTraceT<F>,
    labels: &[u8],
) -> Result<F> {
    let last = net.layer_count() - 1;
    let logits = trace.input_of(last);
    let n = logits.shape()[0];
    let classes: usize = logits.shape()[1..].iter().product();
    if labels.len() != n {
        return Err(Error::Input(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    let mut total = F::zero();
    for (ex, row) in logits.as_slice().chunks_exact(classes).enumerate() {
        let y = labels[ex] as usize;
        if y >= classes {
            return Err(Error::Input(format!(
                "label {y} out of range [0, {classes})"
            )));
        }
        total = total + row_logsumexp(row) - row[y];
    }
    Ok(total / F::from_usize(n).unwrap())
}

fn dense_backward<F: Element>(
    input: &TensorT<F>,
    weight: &TensorT<F>,
    grad_out: &TensorT<F>,
    need_dx: bool,
) -> (TensorT<F>, TensorT<F>, Option<TensorT<F>>) {
    let n = input.shape()[0];
    let features: usize = input.shape()[1..].iter().product();
    let out_f = weight.shape()[0];

    // dW = gOut^T (out, N) x X (N, F)
    let mut dw = TensorT::<F>::zeros(vec![out_f, features]);
    general_mat_mul(
        F::one(),
        &grad_out.view2(n, out_f).t(),
        &input.view2(n, features),
        F::zero(),
        &mut dw.view2_mut(out_f, features),
    );

    let mut db = TensorT::<F>::zeros(vec![out_f]);
    {
        let db_s = db.as_mut_slice();
        for row in grad_out.as_slice().chunks_exact(out_f) {
            for (d, &g) in db_s.iter_mut().zip(row) {
                *d = *d + g;
            }
        }
    }

    let dx = need_dx.then(|| {
        // dX = gOut (N, out) x W (out, F)
        let mut dx = TensorT::<F>::zeros(input.shape().to_vec());
        general_mat_mul(
            F::one(),
            &grad_out.view2(n, out_f),
            &weight.view2(out_f, features),
            F::zero(),
            &mut dx.view2_mut(n, features),
        );
        dx
    });
    (dw, db, dx)
}

fn conv2d_backward<F: Element>(
    input: &TensorT<F>,
    weight: &TensorT<F>,
    grad_out: &TensorT<F>,
    stride: usize,
    padding: usize,
    need_dx: bool,
) -> (TensorT<F>, TensorT<F>, Option<TensorT<F>>) {
    let in_shape = input.shape().to_vec();
    let (n, in_c, in_h, in_w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let w_shape = weight.shape().to_vec();
    let (out_c, kernel_h, kernel_w) = (w_shape[0], w_shape[2], w_shape[3]);
    let k = in_c * kernel_h * kernel_w;
    // Output geometry from the layer parameters; the incoming gradient
    // may arrive flattened (e.g. straight from the softmax head).
    let out_h = (in_h + 2 * padding - kernel_h) / stride + 1;
    let out_w = (in_w + 2 * padding - kernel_w) / stride + 1;
    let l = out_h * out_w;
    debug_assert_eq!(grad_out.len(), n * out_c * l);

    let (cols, _) = batch_cols(input, kernel_h, kernel_w, stride, padding);

    // Gather grad into channel-major (out_c, N*L) to match the cols layout.
    let mut g2 = TensorT::<F>::zeros(vec![out_c, n * l]);
    {
        let g2s = g2.as_mut_slice();
        let gs = grad_out.as_slice();
        for ex in 0..n {
            for oc in 0..out_c {
                let src = &gs[(ex * out_c + oc) * l..(ex * out_c + oc + 1) * l];
                g2s[oc * n * l + ex * l..oc * n * l + (ex + 1) * l].copy_from_slice(src);
            }
        }
    }

    // dW = g2 (out_c, N*L) x cols^T (N*L, K)
    let mut dw = TensorT::<F>::zeros(vec![out_c, in_c, kernel_h, kernel_w]);
    general_mat_mul(
        F::one(),
        &g2.view2(out_c, n * l),
        &cols.view2(k, n * l).t(),
        F::zero(),
        &mut dw.view2_mut(out_c, k),
    );

    let mut db = TensorT::<F>::zeros(vec![out_c]);
    {
        let db_s = db.as_mut_slice();
        for (oc, row) in g2.as_slice().chunks_exact(n * l).enumerate() {
            let mut acc = F::zero();
            for &g in row {
                acc = acc + g;
            }
            db_s[oc] = acc;
        }
    }

    let dx = need_dx.then(|| {
        // dCols = W^T (K, out_c) x g2 (out_c, N*L), then fold back.
        let mut dcols = TensorT::<F>::zeros(vec![k, n * l]);
        general_mat_mul(
            F::one(),
            &weight.view2(out_c, k).t(),
            &g2.view2(out_c, n * l),
            F::zero(),
            &mut dcols.view2_mut(k, n * l),
        );
        let mut dx = TensorT::<F>::zeros(in_shape.clone());
        let per_ex = in_c * in_h * in_w;
        let dxs = dx.as_mut_slice();
        for ex in 0..n {
            col2im_example(
                dcols.as_slice(),
                in_c,
                in_h,
                in_w,
                kernel_h,
                kernel_w,
                stride,
                padding,
                &mut dxs[ex * per_ex..(ex + 1) * per_ex],
                n * l,
                ex * l,
            );
        }
        dx
    });
    (dw, db, dx)
}

fn relu_backward<F: Element>(output: &TensorT<F>, grad_out: &TensorT<F>) -> TensorT<F> {
    let mut dx = grad_out.clone();
    for (d, &o) in dx.as_mut_slice().iter_mut().zip(output.as_slice()) {
        if o <= F::zero() {
            *d = F::zero();
        }
    }
    dx
}

/// Routes each window's gradient to the first (lowest linear index)
/// maximal element, matching the forward tie rule.
fn maxpool_backward<F: Element>(
    input: &TensorT<F>,
    grad_out: &TensorT<F>,
    window: usize,
    stride: usize,
) -> TensorT<F> {
    let in_shape = input.shape();
    let (in_h, in_w) = (in_shape[2], in_shape[3]);
    let nc = in_shape[0] * in_shape[1];
    let out_h = (in_h - window) / stride + 1;
    let out_w = (in_w - window) / stride + 1;
    debug_assert_eq!(grad_out.len(), nc * out_h * out_w);
    let mut dx = TensorT::<F>::zeros(in_shape.to_vec());
    let x = input.as_slice();
    let g = grad_out.as_slice();
    let d = dx.as_mut_slice();
    for ch in 0..nc {
        let x_ch = &x[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        let g_ch = &g[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        let d_ch = &mut d[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for oh in 0..out_h {
            for ow in 0..out_w {
                let mut best = F::neg_infinity();
                let mut best_idx = 0usize;
                for ki in 0..window {
                    let row = (oh * stride + ki) * in_w + ow * stride;
                    for kj in 0..window {
                        let v = x_ch[row + kj];
                        if v > best {
                            best = v;
                            best_idx = row + kj;
                        }
                    }
                }
                d_ch[best_idx] = d_ch[best_idx] + g_ch[oh * out_w + ow];
            }
        }
    }
    dx
}
