use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{Cache, Conv2d, Dense, Layer};
use super::tensor::{Scalar, Tensor};
use super::{Result, SurrogateError};
use crate::raster::GrayImage;

/// Parameter-free description of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    MaxPool2d,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Dropout {
        p: f64,
    },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            _ => 0,
        }
    }

    fn build<S: Scalar>(&self) -> Result<Layer<S>> {
        Ok(match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => Layer::Conv2d(Conv2d::new(in_channels, out_channels, kernel)?),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2d => Layer::MaxPool2d,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::new(inputs, outputs)?),
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(SurrogateError::Config(format!(
                        "dropout rate must lie in [0, 1), got {p}"
                    )));
                }
                Layer::Dropout(p)
            }
        })
    }

    fn of<S: Scalar>(layer: &Layer<S>) -> Self {
        match layer {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2d => LayerSpec::MaxPool2d,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::Dropout(p) => LayerSpec::Dropout { p: *p },
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                write!(f, "conv2d {in_channels} {out_channels} {kernel}")
            }
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool2d => f.write_str("maxpool2d"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense {inputs} {outputs}"),
            LayerSpec::Dropout { p } => write!(f, "dropout {p:?}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = SurrogateError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SurrogateError::Config(format!("bad layer line `{s}`"));
        let mut parts = s.split_whitespace();
        let kind = parts.next().ok_or_else(bad)?;
        let nums: Vec<&str> = parts.collect();
        let int = |i: usize| {
            nums.get(i)
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(bad)
        };
        let spec = match (kind, nums.len()) {
            ("conv2d", 3) => LayerSpec::Conv2d {
                in_channels: int(0)?,
                out_channels: int(1)?,
                kernel: int(2)?,
            },
            ("relu", 0) => LayerSpec::Relu,
            ("maxpool2d", 0) => LayerSpec::MaxPool2d,
            ("flatten", 0) => LayerSpec::Flatten,
            ("dense", 2) => LayerSpec::Dense {
                inputs: int(0)?,
                outputs: int(1)?,
            },
            ("dropout", 1) => LayerSpec::Dropout {
                p: nums[0].parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

/// Named layer stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Three two-conv stacks of 8/16/32 kernels, FC128, FC1.
    Desk,
    /// Thirteen 3×3 convolutions in five stacks, FC 4096/4096/1000/1.
    Vgg16,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Desk => "desk",
            Architecture::Vgg16 => "vgg16",
        }
    }

    /// Native input side.
    pub fn default_input_side(&self) -> usize {
        match self {
            Architecture::Desk => 64,
            Architecture::Vgg16 => 224,
        }
    }

    fn stacks(&self) -> &'static [(usize, usize)] {
        match self {
            Architecture::Desk => &[(8, 2), (16, 2), (32, 2)],
            Architecture::Vgg16 => &[(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)],
        }
    }

    fn hidden(&self) -> &'static [usize] {
        match self {
            Architecture::Desk => &[128],
            Architecture::Vgg16 => &[4096, 4096, 1000],
        }
    }

    /// The layer list for a square single-channel input of side `input_side`.
    pub fn layers(&self, input_side: usize, dropout: f64) -> Result<Vec<LayerSpec>> {
        let pools = self.stacks().len();
        let stride = 1usize << pools;
        if input_side == 0 || !input_side.is_multiple_of(stride) {
            return Err(SurrogateError::Config(format!(
                "{} needs an input side divisible by {stride}, got {input_side}",
                self.name()
            )));
        }
        let mut specs = Vec::new();
        let mut channels = 1;
        for &(width, depth) in self.stacks() {
            for _ in 0..depth {
                specs.push(LayerSpec::Conv2d {
                    in_channels: channels,
                    out_channels: width,
                    kernel: 3,
                });
                specs.push(LayerSpec::Relu);
                channels = width;
            }
            specs.push(LayerSpec::MaxPool2d);
        }
        specs.push(LayerSpec::Flatten);
        let side = input_side / stride;
        let mut features = channels * side * side;
        for &width in self.hidden() {
            specs.push(LayerSpec::Dense {
                inputs: features,
                outputs: width,
            });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::Dropout { p: dropout });
            features = width;
        }
        specs.push(LayerSpec::Dense {
            inputs: features,
            outputs: 1,
        });
        Ok(specs)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = SurrogateError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Architecture::Desk),
            "vgg16" => Ok(Architecture::Vgg16),
            other => Err(SurrogateError::Config(format!(
                "unknown architecture `{other}` (expected desk or vgg16)"
            ))),
        }
    }
}

/// Activations recorded by a training-mode forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace<S> {
    caches: Vec<Cache<S>>,
    batch: usize,
}

impl<S> Trace<S> {
    /// A trace with nothing recorded; backward on it fails.
    pub fn empty() -> Self {
        Self {
            caches: Vec::new(),
            batch: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Fingerprint of every ReLU on/off state and max-pool winner; two
    /// traces with equal patterns lie on the same linear piece of the network.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for cache in &self.caches {
            match cache {
                Cache::Relu(mask) => mask.hash(&mut h),
                Cache::Pool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

/// Gradient buffers aligned with [`Model::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub buffers: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn flat(&self) -> Vec<S> {
        self.buffers.iter().flatten().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.buffers
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }
}

/// `mean((y − ŷ)²) + λ Σ w²`.
pub fn loss(preds: &[f64], targets: &[f64], weights: &[f64], lambda: f64) -> Result<f64> {
    Ok(mse(preds, targets)? + lambda * weights.iter().map(|w| w * w).sum::<f64>())
}

/// Mean squared error.
pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(SurrogateError::Length {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(SurrogateError::EmptyBatch);
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64)
}

/// A sequential convolutional regressor with a single scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    /// Per-sample input shape `[channels, side, side]`.
    input_shape: Vec<usize>,
    layers: Vec<Layer<S>>,
}

impl<S: Scalar> Model<S> {
    /// Builds a zero-initialized model, checking that consecutive shapes fit
    /// and that the output is a single scalar.
    pub fn from_specs(input_shape: Vec<usize>, specs: &[LayerSpec]) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|s| s.build())
            .collect::<Result<Vec<_>>>()?;
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        if shape != [1] {
            return Err(SurrogateError::Shape {
                context: "model output",
                expected: vec![1],
                found: shape,
            });
        }
        Ok(Self {
            input_shape,
            layers,
        })
    }

    /// Builds a named architecture with He-normal weights and zero biases.
    pub fn build(arch: Architecture, input_side: usize, dropout: f64, seed: u64) -> Result<Self> {
        let specs = arch.layers(input_side, dropout)?;
        let mut model = Self::from_specs(vec![1, input_side, input_side], &specs)?;
        model.init_he(seed);
        Ok(model)
    }

    /// Redraws weights from `N(0, 2 / fan_in)` and zeroes biases.
    pub fn init_he(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let (fan_in, weight, bias) = match layer {
                Layer::Conv2d(c) => (
                    c.in_channels * c.kernel * c.kernel,
                    &mut c.weight,
                    &mut c.bias,
                ),
                Layer::Dense(d) => (d.inputs, &mut d.weight, &mut d.bias),
                _ => continue,
            };
            let normal =
                Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive deviation");
            weight
                .iter_mut()
                .for_each(|w| *w = S::from_f64_lossy(normal.sample(&mut rng)));
            bias.fill(S::zero());
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_side(&self) -> usize {
        self.input_shape[1]
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(LayerSpec::of).collect()
    }

    /// Sets the rate of every dropout layer.
    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(SurrogateError::Config(format!(
                "dropout rate must lie in [0, 1), got {p}"
            )));
        }
        for layer in &mut self.layers {
            if let Layer::Dropout(rate) = layer {
                *rate = p;
            }
        }
        Ok(())
    }

    /// Text descriptor: input shape, then one layer per line.
    pub fn descriptor(&self) -> String {
        let mut out = format!(
            "input {}\n",
            self.input_shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        );
        for spec in self.specs() {
            out.push_str(&spec.to_string());
            out.push('\n');
        }
        out
    }

    /// Zero-initialized model from a [`Model::descriptor`] string.
    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().unwrap_or_default();
        let input_shape = first
            .strip_prefix("input ")
            .map(|rest| {
                rest.split_whitespace()
                    .map(|v| v.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .and_then(|r| r.ok())
            .filter(|s| s.len() == 3)
            .ok_or_else(|| SurrogateError::Config(format!("bad input line `{first}`")))?;
        let specs = lines.map(str::parse).collect::<Result<Vec<LayerSpec>>>()?;
        Self::from_specs(input_shape, &specs)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Parameter buffers in layer order (weight, bias per parametric layer).
    pub fn params(&self) -> Vec<&[S]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [S]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    /// For each buffer of [`Model::params`], whether it holds penalized
    /// weights (true) or biases (false).
    pub fn weight_flags(&self) -> Vec<bool> {
        self.params()
            .iter()
            .enumerate()
            .map(|(i, _)| i % 2 == 0)
            .collect()
    }

    /// All multiplicative weights (kernels and FC matrices), flattened.
    pub fn weights(&self) -> Vec<f64> {
        self.params()
            .iter()
            .step_by(2)
            .flat_map(|w| w.iter().map(|v| v.as_f64()))
            .collect()
    }

    /// `Σ w²` over kernels and FC matrices.
    pub fn weight_penalty(&self) -> f64 {
        self.params()
            .iter()
            .step_by(2)
            .flat_map(|w| w.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }

    /// The same network in another precision.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let mut out =
            Model::<T>::from_specs(self.input_shape.clone(), &self.specs()).expect("same layout");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.iter_mut()
                .zip(src)
                .for_each(|(d, s)| *d = T::from_f64_lossy(s.as_f64()));
        }
        out
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        if x.shape().len() != 4 || x.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![0];
            expected.extend(&self.input_shape);
            return Err(SurrogateError::Shape {
                context: "model input",
                expected,
                found: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Inference-mode forward pass over a `[batch, c, h, w]` tensor.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let mut y = x.clone();
        for layer in &self.layers {
            y = layer.forward(&y)?;
        }
        Ok(y)
    }

    /// Inference-mode activations entering the first dense layer, before
    /// flattening (`[batch, c, h, w]`).
    pub fn features(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let mut y = x.clone();
        for layer in self
            .layers
            .iter()
            .take_while(|l| !matches!(l, Layer::Flatten))
        {
            y = layer.forward(&y)?;
        }
        Ok(y)
    }

    /// Training-mode forward pass; dropout masks are drawn from `rng`.
    pub fn forward_trace<R: Rng>(
        &self,
        x: &Tensor<S>,
        rng: &mut R,
    ) -> Result<(Tensor<S>, Trace<S>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut y = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward_train(y, rng)?;
            caches.push(cache);
            y = next;
        }
        Ok((
            y,
            Trace {
                caches,
                batch: x.batch(),
            },
        ))
    }

    /// Gradient of `Σ dy·ŷ` with respect to the parameters, using the
    /// activations in `trace`.
    pub fn backward(&self, trace: &Trace<S>, dy: &Tensor<S>) -> Result<Gradients<S>> {
        if trace.is_empty() {
            return Err(SurrogateError::NoForward);
        }
        if trace.caches.len() != self.layers.len() {
            return Err(SurrogateError::TraceMismatch(format!(
                "trace has {} layers, model has {}",
                trace.caches.len(),
                self.layers.len()
            )));
        }
        if dy.shape() != [trace.batch, 1] {
            return Err(SurrogateError::Shape {
                context: "output gradient",
                expected: vec![trace.batch, 1],
                found: dy.shape().to_vec(),
            });
        }
        let mut buffers: Vec<Vec<S>> = Vec::new();
        let mut g = dy.clone();
        let first_param = self
            .layers
            .iter()
            .position(|l| !l.params().is_empty())
            .unwrap_or(0);
        for (i, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            let (dx, grads) = layer.backward(cache, g, i > first_param)?;
            for grad in grads.into_iter().rev() {
                buffers.push(grad);
            }
            match dx {
                Some(dx) => g = dx,
                None => break,
            }
        }
        buffers.reverse();
        Ok(Gradients { buffers })
    }

    /// Loss on a batch and its exact gradient, penalty included.
    pub fn loss_and_gradient<R: Rng>(
        &self,
        x: &Tensor<S>,
        targets: &[f64],
        lambda: f64,
        rng: &mut R,
    ) -> Result<(f64, Gradients<S>)> {
        if targets.is_empty() {
            return Err(SurrogateError::EmptyBatch);
        }
        let (y, trace) = self.forward_trace(x, rng)?;
        let preds: Vec<f64> = y.data().iter().map(|v| v.as_f64()).collect();
        let penalty = self.weight_penalty();
        let value = mse(&preds, targets)? + lambda * penalty;
        let scale = 2.0 / targets.len() as f64;
        let dy = Tensor::new(
            vec![targets.len(), 1],
            preds
                .iter()
                .zip(targets)
                .map(|(p, t)| S::from_f64_lossy(scale * (p - t)))
                .collect(),
        )
        .expect("one output per sample");
        let mut grads = self.backward(&trace, &dy)?;
        let two_lambda = S::from_f64_lossy(2.0 * lambda);
        for ((grad, param), is_weight) in grads
            .buffers
            .iter_mut()
            .zip(self.params())
            .zip(self.weight_flags())
        {
            if is_weight && lambda != 0.0 {
                grad.iter_mut()
                    .zip(param)
                    .for_each(|(g, &w)| *g += two_lambda * w);
            }
        }
        Ok((value, grads))
    }

    /// Stacks images into a `[batch, 1, n, n]` tensor.
    pub fn batch_tensor(&self, images: &[&GrayImage]) -> Result<Tensor<S>> {
        let side = self.input_side();
        let mut data = Vec::with_capacity(images.len() * side * side);
        for img in images {
            if img.side() != side || self.input_shape[0] != 1 {
                return Err(SurrogateError::Shape {
                    context: "image",
                    expected: vec![side, side],
                    found: vec![img.side(), img.side()],
                });
            }
            data.extend(
                img.data()
                    .iter()
                    .map(|&v| S::from_f32(v).expect("finite pixel")),
            );
        }
        Ok(Tensor::new(vec![images.len(), 1, side, side], data).expect("consistent sizes"))
    }

    /// Inference prediction for one image.
    pub fn predict(&self, image: &GrayImage) -> Result<f64> {
        Ok(self.forward(&self.batch_tensor(&[image])?)?.data()[0].as_f64())
    }

    /// Order-preserving inference over many images.
    pub fn predict_batch(&self, images: &[&GrayImage]) -> Result<Vec<f64>> {
        const CHUNK: usize = 32;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let y = self.forward(&self.batch_tensor(chunk)?)?;
            out.extend(y.data().iter().map(|v| v.as_f64()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_images(n: usize, side: usize, seed: u64) -> Vec<GrayImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                GrayImage::new(side, (0..side * side).map(|_| rng.gen::<f32>()).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn desk_parameter_count_matches_shape_arithmetic() {
        let model = Model::<f32>::build(Architecture::Desk, 64, 0.5, 0).unwrap();
        let conv = |i: usize, o: usize| o * i * 9 + o;
        let expected = conv(1, 8)
            + conv(8, 8)
            + conv(8, 16)
            + conv(16, 16)
            + conv(16, 32)
            + conv(32, 32)
            + (32 * 8 * 8 * 128 + 128)
            + (128 + 1);
        assert_eq!(model.param_count(), expected);
        assert_eq!(expected, 280_441);
        let specs = Architecture::Desk.layers(64, 0.5).unwrap();
        assert_eq!(
            specs.iter().map(LayerSpec::param_count).sum::<usize>(),
            expected
        );
    }

    #[test]
    fn vgg16_layout() {
        let specs = Architecture::Vgg16.layers(224, 0.5).unwrap();
        let convs: Vec<_> = specs
            .iter()
            .filter(|s| matches!(s, LayerSpec::Conv2d { .. }))
            .collect();
        assert_eq!(convs.len(), 13);
        assert!(convs
            .iter()
            .all(|s| matches!(s, LayerSpec::Conv2d { kernel: 3, .. })));
        let pools = specs
            .iter()
            .filter(|s| matches!(s, LayerSpec::MaxPool2d))
            .count();
        assert_eq!(pools, 5);
        let dense: Vec<usize> = specs
            .iter()
            .filter_map(|s| match s {
                LayerSpec::Dense { outputs, .. } => Some(*outputs),
                _ => None,
            })
            .collect();
        assert_eq!(dense, vec![4096, 4096, 1000, 1]);
        assert!(matches!(
            specs.iter().find(|s| matches!(s, LayerSpec::Dense { .. })),
            Some(LayerSpec::Dense { inputs: 25088, .. })
        ));
        assert!(Architecture::Vgg16.layers(100, 0.5).is_err());
        assert!(Architecture::Desk.layers(60, 0.5).is_err());
    }

    #[test]
    fn zero_model_predicts_zero_and_output_is_scalar() {
        let specs = Architecture::Desk.layers(16, 0.5).unwrap();
        let model = Model::<f32>::from_specs(vec![1, 16, 16], &specs).unwrap();
        let img = GrayImage::new(16, vec![0.0; 256]).unwrap();
        assert_eq!(model.predict(&img).unwrap(), 0.0);
        let y = model
            .forward(&model.batch_tensor(&[&img, &img]).unwrap())
            .unwrap();
        assert_eq!(y.shape(), &[2, 1]);
    }

    #[test]
    fn batched_forward_equals_looped() {
        let model = Model::<f32>::build(Architecture::Desk, 32, 0.5, 9).unwrap();
        let images = random_images(37, 32, 1);
        let refs: Vec<_> = images.iter().collect();
        let batched = model.predict_batch(&refs).unwrap();
        for (img, b) in images.iter().zip(&batched) {
            assert_eq!(model.predict(img).unwrap(), *b);
        }
        assert!(model.predict_batch(&[]).unwrap().is_empty());
        let mut reversed = refs.clone();
        reversed.reverse();
        let mut back = model.predict_batch(&reversed).unwrap();
        back.reverse();
        assert_eq!(back, batched);
    }

    #[test]
    fn wrong_input_side_is_rejected() {
        let model = Model::<f32>::build(Architecture::Desk, 32, 0.5, 9).unwrap();
        let img = GrayImage::new(16, vec![0.0; 256]).unwrap();
        assert!(matches!(
            model.predict(&img),
            Err(SurrogateError::Shape { .. })
        ));
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&[0.3, 0.2], &[0.3, 0.2], &[], 0.0).unwrap(), 0.0);
        assert_eq!(loss(&[1.0], &[0.0], &[], 0.0).unwrap(), 1.0);
        assert_eq!(loss(&[0.5], &[0.5], &[2.0], 1.0).unwrap(), 4.0);
        assert!(matches!(
            loss(&[], &[], &[], 0.0),
            Err(SurrogateError::EmptyBatch)
        ));
        assert!(matches!(
            loss(&[1.0], &[], &[], 0.0),
            Err(SurrogateError::Length { .. })
        ));
    }

    #[test]
    fn backward_without_forward_fails() {
        let model = Model::<f64>::build(Architecture::Desk, 8, 0.5, 1).unwrap();
        let dy = Tensor::zeros(vec![1, 1]);
        assert!(matches!(
            model.backward(&Trace::empty(), &dy),
            Err(SurrogateError::NoForward)
        ));

        let other = Model::<f64>::from_specs(
            vec![1, 8, 8],
            &[
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 64,
                    outputs: 1,
                },
            ],
        )
        .unwrap();
        let x = Tensor::zeros(vec![1, 1, 8, 8]);
        let (_, trace) = other
            .forward_trace(&x, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!(matches!(
            model.backward(&trace, &dy),
            Err(SurrogateError::TraceMismatch(_))
        ));
    }

    #[test]
    fn penalty_gradient_on_isolated_weight() {
        // One weight, zero input: the data term has no weight gradient.
        let mut model = Model::<f64>::from_specs(
            vec![1, 1, 1],
            &[
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 1,
                    outputs: 1,
                },
            ],
        )
        .unwrap();
        model.params_mut()[0][0] = 2.0;
        let x = Tensor::zeros(vec![1, 1, 1, 1]);
        let lambda = 0.3;
        let (value, grads) = model
            .loss_and_gradient(&x, &[0.0], lambda, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!((value - lambda * 4.0).abs() < 1e-15);
        assert!((grads.buffers[0][0] - 2.0 * lambda * 2.0).abs() < 1e-15);
        assert_eq!(grads.buffers[1][0], 0.0);
    }

    #[test]
    fn zero_gradient_at_perfect_fit() {
        let model = Model::<f64>::build(Architecture::Desk, 8, 0.0, 3).unwrap();
        let images = random_images(3, 8, 2);
        let refs: Vec<_> = images.iter().collect();
        let x = model.batch_tensor(&refs).unwrap();
        let targets = model.predict_batch(&refs).unwrap();
        let (value, grads) = model
            .loss_and_gradient(&x, &targets, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn descriptor_round_trip() {
        let model = Model::<f32>::build(Architecture::Desk, 32, 0.25, 0).unwrap();
        let rebuilt = Model::<f32>::from_descriptor(&model.descriptor()).unwrap();
        assert_eq!(rebuilt.specs(), model.specs());
        assert_eq!(rebuilt.input_shape(), model.input_shape());
        assert!(Model::<f32>::from_descriptor("input 1 8 8\nconv2d 1 2\n").is_err());
        assert!("vgg19".parse::<Architecture>().is_err());
        assert_eq!(
            "vgg16".parse::<Architecture>().unwrap(),
            Architecture::Vgg16
        );
    }

    #[test]
    fn features_are_translation_consistent() {
        let side = 64;
        let model = Model::<f64>::build(Architecture::Desk, side, 0.5, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Content confined to the centre so that an 8-pixel shift stays in frame.
        let mut base = vec![0.0f32; side * side];
        for i in 20..36 {
            for j in 20..36 {
                base[i * side + j] = rng.gen();
            }
        }
        let shift = 8;
        let mut shifted = vec![0.0f32; side * side];
        for i in 0..side - shift {
            for j in 0..side - shift {
                shifted[(i + shift) * side + j + shift] = base[i * side + j];
            }
        }
        let a = model
            .features(
                &model
                    .batch_tensor(&[&GrayImage::new(side, base).unwrap()])
                    .unwrap(),
            )
            .unwrap();
        let b = model
            .features(
                &model
                    .batch_tensor(&[&GrayImage::new(side, shifted).unwrap()])
                    .unwrap(),
            )
            .unwrap();
        let [_, c, h, w] = a.shape().try_into().unwrap();
        let mut worst = 0.0f64;
        for ch in 0..c {
            for i in 2..h - 3 {
                for j in 2..w - 3 {
                    let va = a.data()[(ch * h + i) * w + j];
                    let vb = b.data()[(ch * h + i + 1) * w + j + 1];
                    worst = worst.max((va - vb).abs());
                }
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }
}
