//! MLP backbone plus two-layer projection head onto the unit sphere.
//!
//! Forward, backward and the SGD-with-momentum update are written out by
//! hand so the whole training path stays dependency-free and checkable
//! against finite differences. The projector output is L2-normalized with an
//! epsilon guard; an exactly-zero pre-normalization vector falls back to the
//! first basis direction so the forward map stays total.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};
use crate::rng::seeded;

/// Guard added to the norm before dividing.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Which representation the evaluation side reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FeatureSpace {
    /// Activation after the last backbone layer (pre-projector).
    Backbone,
    /// The normalized projector output.
    Projector,
}

/// Layer sizes for [`init_params`]: `input_dim -> backbone... -> projector
/// hidden -> embedding_dim`, ReLU everywhere except the final linear map.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpSpec {
    pub input_dim: usize,
    pub backbone: Vec<usize>,
    pub projector_hidden: usize,
    pub embedding_dim: usize,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.projector_hidden == 0
            || self.embedding_dim == 0
            || self.backbone.iter().any(|&s| s == 0)
        {
            return Err(Error::Config("all layer sizes must be positive".into()));
        }
        if self.backbone.is_empty() {
            return Err(Error::Config("backbone needs at least one layer".into()));
        }
        Ok(())
    }
}

/// One dense layer: `activation(weight * x + bias)`, weight is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Full parameter set. The momentum buffers live here so repeated updates
/// through [`backward_and_step`] behave like one optimizer; they are not part
/// of the model function itself.
#[derive(Clone, Debug)]
pub struct MlpParams {
    layers: Vec<Layer>,
    backbone_layers: usize,
    velocity: Vec<(Mat, Vec<f64>)>,
    version: u64,
}

impl MlpParams {
    /// Assembles parameters from explicit layers, checking that consecutive
    /// dimensions chain. `backbone_layers` marks where the projector starts.
    pub fn from_layers(layers: Vec<Layer>, backbone_layers: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("at least one layer required".into()));
        }
        if backbone_layers > layers.len() {
            return Err(Error::Config(format!(
                "backbone_layers {} exceeds layer count {}",
                backbone_layers,
                layers.len()
            )));
        }
        for w in layers.windows(2) {
            if w[1].weight.cols() != w[0].weight.rows() {
                return Err(Error::Shape {
                    expected: (w[1].weight.rows(), w[0].weight.rows()),
                    got: (w[1].weight.rows(), w[1].weight.cols()),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.rows() {
                return Err(Error::Shape {
                    expected: (l.weight.rows(), 1),
                    got: (l.bias.len(), 1),
                });
            }
        }
        let velocity = layers
            .iter()
            .map(|l| {
                (
                    Mat::zeros(l.weight.rows(), l.weight.cols()),
                    vec![0.0; l.bias.len()],
                )
            })
            .collect();
        Ok(Self {
            layers,
            backbone_layers,
            velocity,
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn backbone_layers(&self) -> usize {
        self.backbone_layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.rows()
    }

    pub fn feature_dim(&self, space: FeatureSpace) -> usize {
        match space {
            FeatureSpace::Projector => self.output_dim(),
            FeatureSpace::Backbone => {
                if self.backbone_layers == 0 {
                    self.input_dim()
                } else {
                    self.layers[self.backbone_layers - 1].weight.rows()
                }
            }
        }
    }

    /// Monotonic counter bumped by every parameter update; forward caches
    /// record it so stale caches are rejected.
    pub fn version(&self) -> u64 {
        self.version
    }
}

/// Seeded initialization: weights drawn from a Gaussian scaled by
/// `1/sqrt(fan_in)`, biases zero.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<MlpParams> {
    spec.validate()?;
    let mut dims = Vec::with_capacity(spec.backbone.len() + 2);
    let mut prev = spec.input_dim;
    for &b in &spec.backbone {
        dims.push((prev, b, Activation::Relu));
        prev = b;
    }
    dims.push((prev, spec.projector_hidden, Activation::Relu));
    dims.push((spec.projector_hidden, spec.embedding_dim, Activation::Identity));

    let mut rng = seeded(seed);
    let mut layers = Vec::with_capacity(dims.len());
    for (fan_in, fan_out, activation) in dims {
        let scale = 1.0 / crate::math::sqrt(fan_in as f64);
        let mut weight = Mat::zeros(fan_out, fan_in);
        for v in weight.data_mut() {
            *v = scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        layers.push(Layer {
            weight,
            bias: vec![0.0; fan_out],
            activation,
        });
    }
    MlpParams::from_layers(layers, spec.backbone.len())
}

/// Everything backward needs: layer inputs, pre-activations, and the
/// pre-normalization row norms of the final output.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    inputs: Mat,
    pre: Vec<Mat>,
    act: Vec<Mat>,
    out_norms: Vec<f64>,
}

fn layer_forward(layer: &Layer, input: &Mat) -> (Mat, Mat) {
    let batch = input.rows();
    let out_dim = layer.weight.rows();
    let mut pre = Mat::zeros(batch, out_dim);
    let mut act = Mat::zeros(batch, out_dim);
    for b in 0..batch {
        let x = input.row(b);
        for o in 0..out_dim {
            let v = dot(layer.weight.row(o), x) + layer.bias[o];
            pre.set(b, o, v);
            act.set(b, o, layer.activation.apply(v));
        }
    }
    (pre, act)
}

fn normalize_rows(raw: &Mat) -> (Mat, Vec<f64>) {
    let mut z = Mat::zeros(raw.rows(), raw.cols());
    let mut norms = Vec::with_capacity(raw.rows());
    for b in 0..raw.rows() {
        let row = raw.row(b);
        let n = norm(row);
        norms.push(n);
        let out = z.row_mut(b);
        if n == 0.0 {
            out[0] = 1.0;
        } else {
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o = v / (n + NORM_EPS);
            }
        }
    }
    (z, norms)
}

/// Maps a batch of inputs to unit embeddings, returning the cache needed for
/// an exact backward pass.
pub fn forward(params: &MlpParams, inputs: &Mat) -> Result<(Mat, ForwardCache)> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::Shape {
            expected: (inputs.rows(), params.input_dim()),
            got: (inputs.rows(), inputs.cols()),
        });
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut act = Vec::with_capacity(params.layers.len());
    let mut current = inputs;
    for layer in &params.layers {
        let (p, a) = layer_forward(layer, current);
        pre.push(p);
        act.push(a);
        current = act.last().unwrap();
    }
    let (z, out_norms) = normalize_rows(act.last().unwrap());
    Ok((
        z,
        ForwardCache {
            version: params.version,
            inputs: inputs.clone(),
            pre,
            act,
            out_norms,
        },
    ))
}

/// Forward pass that stops at the requested representation; no cache.
pub fn forward_features(params: &MlpParams, inputs: &Mat, space: FeatureSpace) -> Result<Mat> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::Shape {
            expected: (inputs.rows(), params.input_dim()),
            got: (inputs.rows(), inputs.cols()),
        });
    }
    let stop_at = match space {
        FeatureSpace::Backbone => params.backbone_layers,
        FeatureSpace::Projector => params.layers.len(),
    };
    let mut current = inputs.clone();
    for layer in params.layers.iter().take(stop_at) {
        current = layer_forward(layer, &current).1;
    }
    if matches!(space, FeatureSpace::Projector) {
        current = normalize_rows(&current).0;
    }
    Ok(current)
}

/// Gradient of the loss with respect to a pre-normalization row, given the
/// gradient with respect to the normalized row. Exposed for property checks:
/// away from the guard regime the result is orthogonal to the output
/// direction.
pub fn normalization_backward(raw_row: &[f64], raw_norm: f64, grad_z_row: &[f64]) -> Vec<f64> {
    if raw_norm == 0.0 {
        // Constant fallback direction: no gradient flows.
        return vec![0.0; raw_row.len()];
    }
    let denom = raw_norm + NORM_EPS;
    let along = dot(grad_z_row, raw_row) / (raw_norm * denom * denom);
    raw_row
        .iter()
        .zip(grad_z_row.iter())
        .map(|(&y, &g)| g / denom - y * along)
        .collect()
}

/// Per-layer parameter gradients, same shapes as the layers.
pub type ParamGrads = Vec<(Mat, Vec<f64>)>;

/// Backpropagates `grad_z` (gradient with respect to the unit embeddings)
/// to every weight and bias. The cache must come from a [`forward`] call on
/// these exact parameters.
pub fn backward(params: &MlpParams, cache: &ForwardCache, grad_z: &Mat) -> Result<ParamGrads> {
    if cache.version != params.version {
        return Err(Error::Cache(format!(
            "cache built at parameter version {}, parameters now at {}",
            cache.version, params.version
        )));
    }
    let batch = cache.inputs.rows();
    if grad_z.rows() != batch || grad_z.cols() != params.output_dim() {
        return Err(Error::Cache(format!(
            "gradient shape {}x{} does not match forward output {}x{}",
            grad_z.rows(),
            grad_z.cols(),
            batch,
            params.output_dim()
        )));
    }

    let n_layers = params.layers.len();
    let mut grads: ParamGrads = params
        .layers
        .iter()
        .map(|l| {
            (
                Mat::zeros(l.weight.rows(), l.weight.cols()),
                vec![0.0; l.bias.len()],
            )
        })
        .collect();

    // Gradient w.r.t. the activation of the last layer, through the
    // normalization.
    let raw = &cache.act[n_layers - 1];
    let mut grad_act = Mat::zeros(batch, raw.cols());
    for b in 0..batch {
        let g = normalization_backward(raw.row(b), cache.out_norms[b], grad_z.row(b));
        grad_act.row_mut(b).copy_from_slice(&g);
    }

    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        let pre = &cache.pre[l];
        let input = if l == 0 {
            &cache.inputs
        } else {
            &cache.act[l - 1]
        };
        let (grad_w, grad_b) = &mut grads[l];
        let mut grad_input = if l > 0 {
            Some(Mat::zeros(batch, layer.weight.cols()))
        } else {
            None
        };
        for b in 0..batch {
            for o in 0..layer.weight.rows() {
                let gp = grad_act.get(b, o) * layer.activation.derivative(pre.get(b, o));
                if gp == 0.0 {
                    continue;
                }
                grad_b[o] += gp;
                let wrow = layer.weight.row(o);
                let grow = grad_w.row_mut(o);
                for (c, &x) in input.row(b).iter().enumerate() {
                    grow[c] += gp * x;
                }
                if let Some(gi) = grad_input.as_mut() {
                    let gi_row = gi.row_mut(b);
                    for (c, &w) in wrow.iter().enumerate() {
                        gi_row[c] += gp * w;
                    }
                }
            }
        }
        if let Some(gi) = grad_input {
            grad_act = gi;
        }
    }
    Ok(grads)
}

/// SGD with momentum: `v = momentum * v + g; p -= lr * v`. Bumps the
/// parameter version so older caches are rejected.
pub fn apply_sgd(params: &mut MlpParams, grads: &ParamGrads, lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config("momentum must lie in [0, 1)".into()));
    }
    if grads.len() != params.layers.len() {
        return Err(Error::Cache("gradient/layer count mismatch".into()));
    }
    for ((layer, (vw, vb)), (gw, gb)) in params
        .layers
        .iter_mut()
        .zip(params.velocity.iter_mut())
        .zip(grads.iter())
    {
        for (v, g) in vw.data_mut().iter_mut().zip(gw.data()) {
            *v = momentum * *v + g;
        }
        for (w, v) in layer.weight.data_mut().iter_mut().zip(vw.data()) {
            *w -= lr * v;
        }
        for (v, g) in vb.iter_mut().zip(gb.iter()) {
            *v = momentum * *v + g;
        }
        for (b, v) in layer.bias.iter_mut().zip(vb.iter()) {
            *b -= lr * v;
        }
    }
    params.version += 1;
    Ok(())
}

/// Backward pass followed by one SGD step.
pub fn backward_and_step(
    params: &mut MlpParams,
    cache: &ForwardCache,
    grad_z: &Mat,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let grads = backward(params, cache, grad_z)?;
    apply_sgd(params, &grads, lr, momentum)
}

/// Frozen deep copy of the parameters after finishing task `task`.
#[derive(Clone, Debug)]
pub struct ModelSnapshot {
    params: MlpParams,
    task: usize,
}

pub fn snapshot(params: &MlpParams, task: usize) -> ModelSnapshot {
    ModelSnapshot {
        params: params.clone(),
        task,
    }
}

impl ModelSnapshot {
    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn task(&self) -> usize {
        self.task
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> MlpSpec {
        MlpSpec {
            input_dim: 20,
            backbone: vec![32, 16],
            projector_hidden: 16,
            embedding_dim: 8,
        }
    }

    fn random_inputs(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = seeded(seed);
        let mut m = Mat::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        m
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(&spec(), 1).unwrap();
        let b = init_params(&spec(), 1).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            assert_eq!(la.weight.data(), lb.weight.data());
            assert!(la.bias.iter().all(|&x| x == 0.0));
            assert_eq!(la.bias, lb.bias);
        }
        let c = init_params(&spec(), 2).unwrap();
        assert_ne!(a.layers()[0].weight.data(), c.layers()[0].weight.data());
    }

    #[test]
    fn weight_scale_tracks_fan_in() {
        // One big layer: 100 -> 100 gives 10k draws.
        let s = MlpSpec {
            input_dim: 100,
            backbone: vec![100],
            projector_hidden: 8,
            embedding_dim: 4,
        };
        let params = init_params(&s, 7).unwrap();
        let w = params.layers()[0].weight.data();
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64;
        let std = var.sqrt();
        let target = 0.1; // 1/sqrt(100)
        assert!(
            (std - target).abs() / target < 0.1,
            "std {std} not within 10% of {target}"
        );
    }

    #[test]
    fn forward_outputs_unit_rows() {
        let params = init_params(&spec(), 3).unwrap();
        let inputs = random_inputs(5, 20, 4);
        let (z, _) = forward(&params, &inputs).unwrap();
        for r in 0..z.rows() {
            assert!((norm(z.row(r)) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_parameters_fall_back_to_first_basis_direction() {
        let mut layers = Vec::new();
        layers.push(Layer {
            weight: Mat::zeros(4, 3),
            bias: vec![0.0; 4],
            activation: Activation::Relu,
        });
        layers.push(Layer {
            weight: Mat::zeros(2, 4),
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        });
        let params = MlpParams::from_layers(layers, 1).unwrap();
        let (z, _) = forward(&params, &random_inputs(3, 3, 9)).unwrap();
        for r in 0..3 {
            assert_eq!(z.row(r), &[1.0, 0.0]);
        }
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let params = init_params(&spec(), 3).unwrap();
        assert!(matches!(
            forward(&params, &random_inputs(2, 7, 0)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = init_params(&spec(), 5).unwrap();
        let reference = params.clone();
        let inputs = random_inputs(4, 20, 6);
        let (z, cache) = forward(&params, &inputs).unwrap();
        let grad = Mat::zeros(z.rows(), z.cols());
        backward_and_step(&mut params, &cache, &grad, 0.1, 0.9).unwrap();
        for (a, b) in params.layers().iter().zip(reference.layers()) {
            assert_eq!(a.weight.data(), b.weight.data());
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut params = init_params(&spec(), 5).unwrap();
        let inputs = random_inputs(4, 20, 6);
        let (z, cache) = forward(&params, &inputs).unwrap();
        let mut grad = Mat::zeros(z.rows(), z.cols());
        grad.set(0, 0, 1.0);
        backward_and_step(&mut params, &cache, &grad, 0.1, 0.0).unwrap();
        // Same cache again: parameters moved on.
        assert!(matches!(
            backward_and_step(&mut params, &cache, &grad, 0.1, 0.0),
            Err(Error::Cache(_))
        ));
    }

    #[test]
    fn single_linear_layer_gradient_is_the_hand_outer_product() {
        // One identity layer, one sample; check dL/dW == grad_pre x^T where
        // grad_pre comes from the normalization Jacobian.
        let mut weight = Mat::zeros(2, 3);
        let entries = [[0.4, -0.2, 0.7], [0.1, 0.9, -0.5]];
        for (r, row) in entries.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                weight.set(r, c, v);
            }
        }
        let layer = Layer {
            weight,
            bias: vec![0.05, -0.1],
            activation: Activation::Identity,
        };
        let params = MlpParams::from_layers(vec![layer], 0).unwrap();
        let x = vec![0.3, -0.6, 1.2];
        let inputs = Mat::from_rows(&[x.clone()]);
        let (z, cache) = forward(&params, &inputs).unwrap();

        let mut grad_z = Mat::zeros(1, 2);
        grad_z.set(0, 0, 0.8);
        grad_z.set(0, 1, -0.3);

        let grads = backward(&params, &cache, &grad_z).unwrap();

        // Hand computation.
        let y: Vec<f64> = (0..2)
            .map(|o| dot(params.layers()[0].weight.row(o), &x) + params.layers()[0].bias[o])
            .collect();
        let n = norm(&y);
        let grad_y = normalization_backward(&y, n, grad_z.row(0));
        for o in 0..2 {
            assert!((grads[0].1[o] - grad_y[o]).abs() < 1e-10);
            for c in 0..3 {
                let expected = grad_y[o] * x[c];
                assert!((grads[0].0.get(o, c) - expected).abs() < 1e-10);
            }
        }
        let _ = z;
    }

    #[test]
    fn pre_normalization_gradient_is_orthogonal_to_output() {
        let params = init_params(&spec(), 11).unwrap();
        let inputs = random_inputs(6, 20, 12);
        let (z, cache) = forward(&params, &inputs).unwrap();
        let mut rng = seeded(13);
        for b in 0..6 {
            let grad_row: Vec<f64> = (0..8)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let raw = cache.act.last().unwrap().row(b);
            let g = normalization_backward(raw, cache.out_norms[b], &grad_row);
            let alignment = dot(&g, z.row(b));
            assert!(alignment.abs() < 1e-9, "row {b}: alignment {alignment}");
        }
    }

    #[test]
    fn snapshot_is_independent_of_later_updates() {
        let mut params = init_params(&spec(), 21).unwrap();
        let frozen = snapshot(&params, 1);
        assert_eq!(frozen.task(), 1);
        let before: Vec<Vec<f64>> = frozen
            .params()
            .layers()
            .iter()
            .map(|l| l.weight.data().to_vec())
            .collect();

        let inputs = random_inputs(4, 20, 22);
        let (z_at_snapshot, _) = forward(frozen.params(), &inputs).unwrap();

        for step in 0..10u64 {
            let (z, cache) = forward(&params, &inputs).unwrap();
            let mut grad = Mat::zeros(z.rows(), z.cols());
            grad.set(0, (step % 8) as usize, 0.5);
            backward_and_step(&mut params, &cache, &grad, 0.05, 0.9).unwrap();
        }

        for (l, b) in frozen.params().layers().iter().zip(before.iter()) {
            assert_eq!(l.weight.data(), b.as_slice());
        }
        // And the snapshot still computes what the live params once did.
        let (z_now, _) = forward(frozen.params(), &inputs).unwrap();
        assert_eq!(z_now.data(), z_at_snapshot.data());
        assert_ne!(
            forward(&params, &inputs).unwrap().0.data(),
            z_at_snapshot.data()
        );
    }
}
