//! Classic momentum SGD with optional L2 weight decay.

use crate::backward::Gradients;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

/// Velocity buffers, one per parameter tensor, zero-initialized.
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<Option<(Tensor, Tensor)>>,
}

impl SgdState {
    pub fn new(net: &Network) -> Self {
        SgdState {
            velocity: net
                .all_params()
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| {
                        (
                            Tensor::zeros(p.weight.shape().to_vec()),
                            Tensor::zeros(p.bias.shape().to_vec()),
                        )
                    })
                })
                .collect(),
        }
    }
}

/// One update: `v <- momentum * v + g (+ wd * w)`, `w <- w - lr * v`.
/// With momentum 0 and decay 0 this is exactly `w <- w - lr * g`.
pub fn sgd_step(
    net: &mut Network,
    grads: &Gradients,
    lr: f32,
    momentum: f32,
    weight_decay: f32,
    state: &mut SgdState,
) -> Result<()> {
    if grads.layers.len() != net.layer_count() {
        return Err(Error::Input(format!(
            "gradient list covers {} layers, network has {}",
            grads.layers.len(),
            net.layer_count()
        )));
    }
    for i in 0..net.layer_count() {
        let Some(g) = grads.layers[i].as_ref() else {
            continue;
        };
        let p = net
            .params_mut(i)
            .ok_or_else(|| Error::Input(format!("gradient for unparameterized layer {i}")))?;
        let (vw, vb) = state.velocity[i].as_mut().expect("state matches net");
        if g.weight.shape() != p.weight.shape() || g.bias.shape() != p.bias.shape() {
            return Err(Error::Input(format!(
                "gradient shapes do not match parameters at layer {i}"
            )));
        }
        update(
            p.weight.as_mut_slice(),
            g.weight.as_slice(),
            vw.as_mut_slice(),
            lr,
            momentum,
            weight_decay,
        );
        // Biases are not decayed.
        update(
            p.bias.as_mut_slice(),
            g.bias.as_slice(),
            vb.as_mut_slice(),
            lr,
            momentum,
            0.0,
        );
    }
    Ok(())
}

fn update(w: &mut [f32], g: &[f32], v: &mut [f32], lr: f32, momentum: f32, weight_decay: f32) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        let g = g + weight_decay * *w;
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
}
