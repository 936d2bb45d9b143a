//! Network structure: an ordered layer stack with parameter tensors and a
//! statically computed shape chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{layer_names, LayerSpec};
use crate::tensor::{Element, Tensor, TensorT};

/// Weight and bias of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub weight: TensorT<F>,
    pub bias: TensorT<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkT<F> {
    input_shape: (usize, usize, usize),
    layers: Vec<LayerSpec>,
    params: Vec<Option<LayerParams<F>>>,
    /// Per-example output shape of every layer, computed once.
    shapes: Vec<Vec<usize>>,
    names: Vec<String>,
}

pub type Network = NetworkT<f32>;

/// Side-channel identifying shapes for the serialized header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkHeader {
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl<F: Element> NetworkT<F> {
    /// Assemble a network from specs and existing parameter tensors,
    /// checking that everything composes.
    pub fn assemble(
        input_shape: (usize, usize, usize),
        layers: Vec<LayerSpec>,
        params: Vec<Option<LayerParams<F>>>,
    ) -> Result<Self> {
        if params.len() != layers.len() {
            return Err(Error::Config(format!(
                "params list length {} does not match layer count {}",
                params.len(),
                layers.len()
            )));
        }
        let shapes = compose_shapes(input_shape, &layers)?;
        let names = layer_names(&layers);
        let net = Self {
            input_shape,
            layers,
            params,
            shapes,
            names,
        };
        net.validate()?;
        Ok(net)
    }

    /// Check parameter tensors against the shape chain.
    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let input = self.input_shape_of(i);
            match (layer.is_parameterized(), &self.params[i]) {
                (true, Some(p)) => {
                    let want_w = layer.weight_shape(&input).unwrap();
                    let want_b = vec![layer.out_units().unwrap()];
                    if p.weight.shape() != want_w.as_slice() {
                        return Err(self.shape_chain_error(
                            i,
                            &input,
                            format!(
                                "weight shape {:?} does not match expected {:?}",
                                p.weight.shape(),
                                want_w
                            ),
                        ));
                    }
                    if p.bias.shape() != want_b.as_slice() {
                        return Err(self.shape_chain_error(
                            i,
                            &input,
                            format!(
                                "bias shape {:?} does not match expected {:?}",
                                p.bias.shape(),
                                want_b
                            ),
                        ));
                    }
                }
                (true, None) => {
                    return Err(Error::Config(format!(
                        "layer {} ({}) is parameterized but has no parameters",
                        i, self.names[i]
                    )))
                }
                (false, Some(_)) => {
                    return Err(Error::Config(format!(
                        "layer {} ({}) carries parameters but takes none",
                        i, self.names[i]
                    )))
                }
                (false, None) => {}
            }
        }
        Ok(())
    }

    fn shape_chain_error(&self, i: usize, input: &[usize], detail: String) -> Error {
        let upstream = i.saturating_sub(1);
        Error::ShapeChain {
            upstream,
            upstream_desc: if i == 0 {
                "input".to_string()
            } else {
                self.names[upstream].clone()
            },
            downstream: i,
            downstream_desc: self.names[i].clone(),
            shape: input.to_vec(),
            detail,
        }
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn params(&self, layer: usize) -> Option<&LayerParams<F>> {
        self.params[layer].as_ref()
    }

    pub fn params_mut(&mut self, layer: usize) -> Option<&mut LayerParams<F>> {
        self.params[layer].as_mut()
    }

    pub fn all_params(&self) -> &[Option<LayerParams<F>>] {
        &self.params
    }

    /// Per-example output shape of layer `i`.
    pub fn output_shape_of(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Per-example input shape of layer `i`.
    pub fn input_shape_of(&self, i: usize) -> Vec<usize> {
        if i == 0 {
            let (c, h, w) = self.input_shape;
            vec![c, h, w]
        } else {
            self.shapes[i - 1].clone()
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name_of(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// Layer index for a name like "conv2"; also accepts a bare index.
    pub fn layer_by_name(&self, name: &str) -> Option<usize> {
        if let Ok(i) = name.parse::<usize>() {
            return (i < self.layers.len()).then_some(i);
        }
        self.names.iter().position(|n| n == name)
    }

    /// Total number of scalar parameters (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Widths of the parameterized layers, e.g. "20-50-500-10".
    pub fn config_string(&self) -> String {
        self.layers
            .iter()
            .filter_map(|l| l.out_units())
            .map(|u| u.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Indices of parameterized layers, in order.
    pub fn parameterized_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_parameterized())
            .collect()
    }

    /// Next parameterized layer after `i`, skipping relu/pool. `None` when
    /// `i` is the last one (the classifier head).
    pub fn parameterized_successor(&self, i: usize) -> Option<usize> {
        ((i + 1)..self.layers.len()).find(|&j| self.layers[j].is_parameterized())
    }

    /// ReLU layer measuring layer `i`'s output: the first relu after `i`
    /// with no other parameterized layer in between.
    pub fn activation_of(&self, i: usize) -> Option<usize> {
        for j in (i + 1)..self.layers.len() {
            match self.layers[j] {
                LayerSpec::Relu => return Some(j),
                LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } | LayerSpec::SoftmaxXent => {
                    return None
                }
                LayerSpec::Maxpool2d { .. } => {}
            }
        }
        None
    }

    pub fn cast<G: Element>(&self) -> NetworkT<G> {
        NetworkT {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
            shapes: self.shapes.clone(),
            names: self.names.clone(),
        }
    }

    pub fn header(&self) -> NetworkHeader {
        NetworkHeader {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
        }
    }

    /// Bitwise equality of all parameter tensors.
    pub fn params_bit_eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => a.weight.bit_eq(&b.weight) && a.bias.bit_eq(&b.bias),
                    (None, None) => true,
                    _ => false,
                })
    }
}

fn compose_shapes(
    input_shape: (usize, usize, usize),
    layers: &[LayerSpec],
) -> Result<Vec<Vec<usize>>> {
    if layers.is_empty() {
        return Err(Error::Config("network has no layers".into()));
    }
    let names = layer_names(layers);
    let (c, h, w) = input_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!(
            "input shape {input_shape:?} has a zero extent"
        )));
    }
    let mut cur = vec![c, h, w];
    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        layer.validate()?;
        cur = layer.output_shape(&cur).map_err(|e| Error::ShapeChain {
            upstream: i.saturating_sub(1),
            upstream_desc: if i == 0 {
                "input".to_string()
            } else {
                names[i - 1].clone()
            },
            downstream: i,
            downstream_desc: names[i].clone(),
            shape: if i == 0 {
                vec![c, h, w]
            } else {
                shapes[i - 1].clone()
            },
            detail: e.to_string(),
        })?;
        shapes.push(cur.clone());
    }
    Ok(shapes)
}

/// Initialize a network with fan-in-scaled uniform weights
/// (bound = sqrt(6 / fan_in)) and zero biases, deterministically per seed.
pub fn init_network(
    specs: &[LayerSpec],
    input_shape: (usize, usize, usize),
    seed: u64,
) -> Result<Network> {
    if specs.last() != Some(&LayerSpec::SoftmaxXent) {
        return Err(Error::Config(
            "network must end with a softmax-xent head".into(),
        ));
    }
    let shapes = compose_shapes(input_shape, specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<Option<LayerParams<f32>>> = Vec::with_capacity(specs.len());
    for (i, layer) in specs.iter().enumerate() {
        if !layer.is_parameterized() {
            params.push(None);
            continue;
        }
        let input = if i == 0 {
            vec![input_shape.0, input_shape.1, input_shape.2]
        } else {
            shapes[i - 1].clone()
        };
        let w_shape = layer.weight_shape(&input).unwrap();
        let fan_in: usize = w_shape[1..].iter().product();
        let bound = (6.0 / fan_in as f32).sqrt();
        let n: usize = w_shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        params.push(Some(LayerParams {
            weight: Tensor::new(w_shape, data)?,
            bias: Tensor::zeros(vec![layer.out_units().unwrap()]),
        }));
    }
    NetworkT::assemble(input_shape, specs.to_vec(), params)
}

/// The standard LeNet-class stack: two ReLU-activated conv/pool blocks,
/// a 500-wide ReLU-activated dense layer, and a 10-way classifier.
pub fn lenet_specs() -> Vec<LayerSpec> {
    lenet_sized(20, 50, 500, 10)
}

/// LeNet-shaped stack with explicit widths.
pub fn lenet_sized(conv1: usize, conv2: usize, fc1: usize, classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv2d(conv1, 5),
        LayerSpec::Relu,
        LayerSpec::maxpool2d(2),
        LayerSpec::conv2d(conv2, 5),
        LayerSpec::Relu,
        LayerSpec::maxpool2d(2),
        LayerSpec::dense(fc1),
        LayerSpec::Relu,
        LayerSpec::dense(classes),
        LayerSpec::SoftmaxXent,
    ]
}
