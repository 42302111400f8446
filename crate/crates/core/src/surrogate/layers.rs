use rand::Rng;

use super::tensor::{gemm, MatRef, Scalar, Tensor};
use super::{Result, SurrogateError};

/// `(dx, dW, db)` of a parameterized layer.
type ParamGrads<S> = (Option<Tensor<S>>, Vec<S>, Vec<S>);
/// `(dx, per-parameter grads)` of any layer.
type LayerGrads<S> = (Option<Tensor<S>>, Vec<Vec<S>>);

fn shape_error(context: &'static str, expected: &[usize], found: &[usize]) -> SurrogateError {
    SurrogateError::Shape {
        context,
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}

/// 2-D cross-correlation with stride 1 and zero padding that preserves the
/// spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `out × in × k × k`, row-major.
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

/// Unfolds one `c × h × w` sample into a `(c·k·k) × (h·w)` patch matrix.
fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize, col: &mut [S]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[((ch * k + ki) * k + kj) * hw..][..hw];
                let di = ki as isize - pad;
                let dj = kj as isize - pad;
                for i in 0..h {
                    let si = i as isize + di;
                    let out = &mut row[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        out.fill(S::zero());
                        continue;
                    }
                    let src = &plane[si as usize * w..][..w];
                    for (j, o) in out.iter_mut().enumerate() {
                        let sj = j as isize + dj;
                        *o = if sj < 0 || sj >= w as isize {
                            S::zero()
                        } else {
                            src[sj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto the sample.
fn col2im<S: Scalar>(col: &[S], c: usize, h: usize, w: usize, k: usize, x: &mut [S]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = &col[((ch * k + ki) * k + kj) * hw..][..hw];
                let di = ki as isize - pad;
                let dj = kj as isize - pad;
                for i in 0..h {
                    let si = i as isize + di;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[si as usize * w..][..w];
                    for j in 0..w {
                        let sj = j as isize + dj;
                        if sj >= 0 && sj < w as isize {
                            dst[sj as usize] += row[i * w + j];
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) || in_channels == 0 || out_channels == 0 {
            return Err(SurrogateError::Config(format!(
                "conv2d needs an odd kernel and nonzero channels, got {in_channels}→{out_channels} k={kernel}"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![S::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![S::zero(); out_channels],
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<(usize, usize, usize)> {
        match *x.shape() {
            [b, c, h, w] if c == self.in_channels => Ok((b, h, w)),
            _ => Err(shape_error(
                "conv2d input",
                &[0, self.in_channels, 0, 0],
                x.shape(),
            )),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (b, h, w) = self.check_input(x)?;
        let hw = h * w;
        let ck = self.patch_len();
        let mut col = vec![S::zero(); ck * hw];
        let mut out = Tensor::zeros(vec![b, self.out_channels, h, w]);
        let in_len = self.in_channels * hw;
        let out_len = self.out_channels * hw;
        for s in 0..b {
            im2col(
                &x.data()[s * in_len..(s + 1) * in_len],
                self.in_channels,
                h,
                w,
                self.kernel,
                &mut col,
            );
            let y = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
            gemm(
                self.out_channels,
                ck,
                hw,
                MatRef::rm(&self.weight, ck),
                MatRef::rm(&col, hw),
                S::zero(),
                y,
            );
            for (o, &bias) in self.bias.iter().enumerate() {
                y[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v += bias);
            }
        }
        Ok(out)
    }

    /// Returns `(dx, dW, db)`; `dx` only when requested.
    fn backward(&self, x: &Tensor<S>, dy: &Tensor<S>, need_dx: bool) -> Result<ParamGrads<S>> {
        let (b, h, w) = self.check_input(x)?;
        if dy.shape() != [b, self.out_channels, h, w] {
            return Err(shape_error(
                "conv2d output gradient",
                &[b, self.out_channels, h, w],
                dy.shape(),
            ));
        }
        let hw = h * w;
        let ck = self.patch_len();
        let in_len = self.in_channels * hw;
        let out_len = self.out_channels * hw;
        let mut col = vec![S::zero(); ck * hw];
        let mut dcol = vec![S::zero(); ck * hw];
        let mut dw = vec![S::zero(); self.weight.len()];
        let mut db = vec![S::zero(); self.out_channels];
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape().to_vec()));
        for s in 0..b {
            let g = &dy.data()[s * out_len..(s + 1) * out_len];
            im2col(
                &x.data()[s * in_len..(s + 1) * in_len],
                self.in_channels,
                h,
                w,
                self.kernel,
                &mut col,
            );
            gemm(
                self.out_channels,
                hw,
                ck,
                MatRef::rm(g, hw),
                MatRef::tr(&col, hw),
                S::one(),
                &mut dw,
            );
            for (o, d) in db.iter_mut().enumerate() {
                *d += g[o * hw..(o + 1) * hw]
                    .iter()
                    .fold(S::zero(), |a, &v| a + v);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    ck,
                    self.out_channels,
                    hw,
                    MatRef::tr(&self.weight, ck),
                    MatRef::rm(g, hw),
                    S::zero(),
                    &mut dcol,
                );
                col2im(
                    &dcol,
                    self.in_channels,
                    h,
                    w,
                    self.kernel,
                    &mut dx.data_mut()[s * in_len..(s + 1) * in_len],
                );
            }
        }
        Ok((dx, dw, db))
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn new(inputs: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(SurrogateError::Config(format!(
                "dense layer {inputs}→{outputs} is empty"
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            weight: vec![S::zero(); inputs * outputs],
            bias: vec![S::zero(); outputs],
        })
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<usize> {
        match *x.shape() {
            [b, f] if f == self.inputs => Ok(b),
            _ => Err(shape_error("dense input", &[0, self.inputs], x.shape())),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let b = self.check_input(x)?;
        let mut y = Tensor::zeros(vec![b, self.outputs]);
        gemm(
            b,
            self.inputs,
            self.outputs,
            MatRef::rm(x.data(), self.inputs),
            MatRef::tr(&self.weight, self.inputs),
            S::zero(),
            y.data_mut(),
        );
        for row in y.data_mut().chunks_mut(self.outputs) {
            row.iter_mut()
                .zip(&self.bias)
                .for_each(|(v, &bias)| *v += bias);
        }
        Ok(y)
    }

    fn backward(&self, x: &Tensor<S>, dy: &Tensor<S>, need_dx: bool) -> Result<ParamGrads<S>> {
        let b = self.check_input(x)?;
        if dy.shape() != [b, self.outputs] {
            return Err(shape_error(
                "dense output gradient",
                &[b, self.outputs],
                dy.shape(),
            ));
        }
        let mut dw = vec![S::zero(); self.weight.len()];
        gemm(
            self.outputs,
            b,
            self.inputs,
            MatRef::tr(dy.data(), self.outputs),
            MatRef::rm(x.data(), self.inputs),
            S::zero(),
            &mut dw,
        );
        let mut db = vec![S::zero(); self.outputs];
        for row in dy.data().chunks(self.outputs) {
            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
        }
        let dx = need_dx.then(|| {
            let mut dx = Tensor::zeros(vec![b, self.inputs]);
            gemm(
                b,
                self.outputs,
                self.inputs,
                MatRef::rm(dy.data(), self.outputs),
                MatRef::rm(&self.weight, self.inputs),
                S::zero(),
                dx.data_mut(),
            );
            dx
        });
        Ok((dx, dw, db))
    }
}

/// One stage of the network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S> {
    Conv2d(Conv2d<S>),
    Relu,
    /// 2×2 window, stride 2.
    MaxPool2d,
    Flatten,
    Dense(Dense<S>),
    /// Inverted dropout with drop probability `p`; identity at inference.
    Dropout(f64),
}

/// What the backward pass needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache<S> {
    Conv(Tensor<S>),
    Relu(Vec<bool>),
    Pool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Flatten(Vec<usize>),
    Dense(Tensor<S>),
    Dropout(Vec<S>),
}

impl<S: Scalar> Layer<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Dropout(_) => "dropout",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match (self, input) {
            (Layer::Conv2d(c), &[ch, h, w]) if ch == c.in_channels => {
                Ok(vec![c.out_channels, h, w])
            }
            (Layer::Conv2d(c), _) => {
                Err(shape_error("conv2d input", &[c.in_channels, 0, 0], input))
            }
            (Layer::Relu | Layer::Dropout(_), _) => Ok(input.to_vec()),
            (Layer::MaxPool2d, &[c, h, w]) if h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0 => {
                Ok(vec![c, h / 2, w / 2])
            }
            (Layer::MaxPool2d, _) => Err(shape_error(
                "maxpool2d input (even sides)",
                &[0, 0, 0],
                input,
            )),
            (Layer::Flatten, _) => Ok(vec![input.iter().product()]),
            (Layer::Dense(d), &[f]) if f == d.inputs => Ok(vec![d.outputs]),
            (Layer::Dense(d), _) => Err(shape_error("dense input", &[d.inputs], input)),
        }
    }

    /// Parameter buffers in canonical order (weight, then bias).
    pub fn params(&self) -> Vec<&[S]> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [S]> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Layer::Conv2d(c) => c.forward(x),
            Layer::Dense(d) => d.forward(x),
            Layer::Relu => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.max(S::zero()));
                Ok(y)
            }
            Layer::MaxPool2d => Ok(maxpool(x)?.0),
            Layer::Flatten => flatten(x),
            Layer::Dropout(_) => Ok(x.clone()),
        }
    }

    /// Training-mode forward pass recording what backward needs.
    pub(crate) fn forward_train<R: Rng>(
        &self,
        x: Tensor<S>,
        rng: &mut R,
    ) -> Result<(Tensor<S>, Cache<S>)> {
        match self {
            Layer::Conv2d(c) => {
                let y = c.forward(&x)?;
                Ok((y, Cache::Conv(x)))
            }
            Layer::Dense(d) => {
                let y = d.forward(&x)?;
                Ok((y, Cache::Dense(x)))
            }
            Layer::Relu => {
                let mut y = x;
                let mask = y
                    .data_mut()
                    .iter_mut()
                    .map(|v| {
                        let keep = *v > S::zero();
                        if !keep {
                            *v = S::zero();
                        }
                        keep
                    })
                    .collect();
                Ok((y, Cache::Relu(mask)))
            }
            Layer::MaxPool2d => {
                let (y, argmax) = maxpool(&x)?;
                Ok((
                    y,
                    Cache::Pool {
                        argmax,
                        input_shape: x.shape().to_vec(),
                    },
                ))
            }
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                Ok((flatten(&x)?, Cache::Flatten(shape)))
            }
            Layer::Dropout(p) => {
                let keep = S::from_f64_lossy(1.0 / (1.0 - p));
                let mut y = x;
                let mask: Vec<S> = (0..y.len())
                    .map(|_| {
                        if rng.gen::<f64>() >= *p {
                            keep
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                y.data_mut()
                    .iter_mut()
                    .zip(&mask)
                    .for_each(|(v, &m)| *v *= m);
                Ok((y, Cache::Dropout(mask)))
            }
        }
    }

    /// Reverse-mode step; returns the input gradient (when `need_dx`) and the
    /// parameter gradients in [`Layer::params`] order.
    pub(crate) fn backward(
        &self,
        cache: &Cache<S>,
        dy: Tensor<S>,
        need_dx: bool,
    ) -> Result<LayerGrads<S>> {
        let mismatch = || {
            SurrogateError::TraceMismatch(format!("{} layer has no matching record", self.name()))
        };
        match (self, cache) {
            (Layer::Conv2d(c), Cache::Conv(x)) => {
                let (dx, dw, db) = c.backward(x, &dy, need_dx)?;
                Ok((dx, vec![dw, db]))
            }
            (Layer::Dense(d), Cache::Dense(x)) => {
                let (dx, dw, db) = d.backward(x, &dy, need_dx)?;
                Ok((dx, vec![dw, db]))
            }
            (Layer::Relu, Cache::Relu(mask)) => {
                if mask.len() != dy.len() {
                    return Err(mismatch());
                }
                let mut dx = dy;
                dx.data_mut().iter_mut().zip(mask).for_each(|(v, &m)| {
                    if !m {
                        *v = S::zero()
                    }
                });
                Ok((Some(dx), Vec::new()))
            }
            (Layer::Dropout(_), Cache::Dropout(mask)) => {
                if mask.len() != dy.len() {
                    return Err(mismatch());
                }
                let mut dx = dy;
                dx.data_mut()
                    .iter_mut()
                    .zip(mask)
                    .for_each(|(v, &m)| *v *= m);
                Ok((Some(dx), Vec::new()))
            }
            (
                Layer::MaxPool2d,
                Cache::Pool {
                    argmax,
                    input_shape,
                },
            ) => {
                if argmax.len() != dy.len() {
                    return Err(mismatch());
                }
                let mut dx = Tensor::zeros(input_shape.clone());
                for (&src, &g) in argmax.iter().zip(dy.data()) {
                    dx.data_mut()[src] += g;
                }
                Ok((Some(dx), Vec::new()))
            }
            (Layer::Flatten, Cache::Flatten(shape)) => {
                let dx = dy.reshape(shape.clone()).ok_or_else(mismatch)?;
                Ok((Some(dx), Vec::new()))
            }
            _ => Err(mismatch()),
        }
    }
}

fn flatten<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let b = *x
        .shape()
        .first()
        .ok_or_else(|| shape_error("flatten input", &[0], x.shape()))?;
    let f = x.len().checked_div(b).unwrap_or(0);
    Ok(Tensor::new(vec![b, f], x.data().to_vec()).expect("same element count"))
}

/// 2×2 max pooling; also returns the flat input index of each maximum.
fn maxpool<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    let (b, c, h, w) = match *x.shape() {
        [b, c, h, w] if h % 2 == 0 && w % 2 == 0 => (b, c, h, w),
        _ => {
            return Err(shape_error(
                "maxpool2d input (even sides)",
                &[0, 0, 0, 0],
                x.shape(),
            ))
        }
    };
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros(vec![b, c, ho, wo]);
    let mut argmax = Vec::with_capacity(y.len());
    let data = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                y.data_mut()[argmax.len()] = data[best];
                argmax.push(best);
            }
        }
    }
    Ok((y, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_conv(i: usize, o: usize, k: usize, rng: &mut ChaCha8Rng) -> Conv2d<f64> {
        let mut c = Conv2d::new(i, o, k).unwrap();
        c.weight
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-1.0..1.0));
        c.bias
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-1.0..1.0));
        c
    }

    /// Direct six-loop cross-correlation.
    fn conv_reference(c: &Conv2d<f64>, x: &Tensor<f64>) -> Vec<f64> {
        let [b, ci, h, w] = x.shape().try_into().unwrap();
        let k = c.kernel;
        let p = (k / 2) as isize;
        let mut out = vec![0.0; b * c.out_channels * h * w];
        for s in 0..b {
            for o in 0..c.out_channels {
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = c.bias[o];
                        for ch in 0..ci {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let si = i as isize + ki as isize - p;
                                    let sj = j as isize + kj as isize - p;
                                    if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                        continue;
                                    }
                                    acc += c.weight[((o * ci + ch) * k + ki) * k + kj]
                                        * x.data()
                                            [((s * ci + ch) * h + si as usize) * w + sj as usize];
                                }
                            }
                        }
                        out[((s * c.out_channels + o) * h + i) * w + j] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_six_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (i, o, k) in [(1, 4, 3), (3, 2, 3), (2, 3, 5), (2, 2, 1)] {
            let conv = random_conv(i, o, k, &mut rng);
            let x = random_tensor(vec![2, i, 8, 8], &mut rng);
            let y = conv.forward(&x).unwrap();
            let reference = conv_reference(&conv, &x);
            let diff = y
                .data()
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn identity_and_box_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(vec![1, 1, 6, 6], &mut rng);
        let mut c = Conv2d::<f64>::new(1, 1, 3).unwrap();
        c.weight[4] = 1.0;
        assert_eq!(c.forward(&x).unwrap(), x);

        c.weight.fill(1.0);
        let ones = Tensor::new(vec![1, 1, 5, 5], vec![1.0; 25]).unwrap();
        let y = c.forward(&ones).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 9.0);
        assert_eq!(y.data()[2], 6.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn even_kernel_and_bad_channels_rejected() {
        assert!(Conv2d::<f32>::new(1, 1, 2).is_err());
        let c = Conv2d::<f32>::new(2, 1, 3).unwrap();
        assert!(matches!(
            c.forward(&Tensor::zeros(vec![1, 1, 4, 4])),
            Err(SurrogateError::Shape { .. })
        ));
        assert!(Layer::<f32>::MaxPool2d.output_shape(&[1, 5, 4]).is_err());
    }

    #[test]
    fn im2col_adjoint_identity() {
        // <im2col(x), y> = <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (c, h, w, k) = (2, 5, 4, 3);
        let x = random_tensor(vec![c * h * w], &mut rng);
        let y = random_tensor(vec![c * k * k * h * w], &mut rng);
        let mut col = vec![0.0; y.len()];
        im2col(x.data(), c, h, w, k, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(y.data(), c, h, w, k, &mut back);
        let lhs: f64 = col.iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_picks_window_maximum() {
        let x = Tensor::new(
            vec![1, 1, 2, 4],
            vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 9.0, -1.0],
        )
        .unwrap();
        let (y, arg) = maxpool(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 9.0]);
        assert_eq!(arg, vec![1, 6]);
    }

    #[test]
    fn dropout_is_identity_at_inference_and_scaled_in_training() {
        let x = Tensor::new(vec![1, 1000], vec![1.0f64; 1000]).unwrap();
        let layer = Layer::Dropout(0.5);
        assert_eq!(layer.forward(&x).unwrap(), x);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (y, _) = layer.forward_train(x, &mut rng).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.data().iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    /// Finite-difference check of one layer against the scalar functional
    /// `L = <r, layer(x)>` for a fixed random `r`.
    fn check_layer(layer: Layer<f64>, x: Tensor<f64>, seed: u64) {
        let eps = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out_shape = layer.forward(&x).unwrap().shape().to_vec();
        let r = random_tensor(out_shape, &mut rng);
        let value = |layer: &Layer<f64>, x: &Tensor<f64>| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let (y, _) = layer.forward_train(x.clone(), &mut rng).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let mut rng_fwd = ChaCha8Rng::seed_from_u64(seed + 1);
        let (_, cache) = layer.forward_train(x.clone(), &mut rng_fwd).unwrap();
        let (dx, grads) = layer.backward(&cache, r.clone(), true).unwrap();
        let dx = dx.unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (value(&layer, &xp) - value(&layer, &xm)) / (2.0 * eps);
            worst = worst.max(rel(fd, dx.data()[i]));
        }
        for (p, grad) in grads.iter().enumerate() {
            for (i, &g) in grad.iter().enumerate() {
                let mut lp = layer.clone();
                lp.params_mut()[p][i] += eps;
                let mut lm = layer.clone();
                lm.params_mut()[p][i] -= eps;
                let fd = (value(&lp, &x) - value(&lm, &x)) / (2.0 * eps);
                worst = worst.max(rel(fd, g));
            }
        }
        assert!(
            worst < 1e-4,
            "{} layer: worst relative error {worst}",
            layer.name()
        );
    }

    #[test]
    fn every_layer_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x4 = random_tensor(vec![2, 2, 4, 4], &mut rng);
        check_layer(
            Layer::Conv2d(random_conv(2, 3, 3, &mut rng)),
            x4.clone(),
            10,
        );
        check_layer(Layer::Relu, x4.clone(), 11);
        check_layer(Layer::MaxPool2d, x4.clone(), 12);
        check_layer(Layer::Flatten, x4, 13);
        let mut dense = Dense::new(5, 3).unwrap();
        dense
            .weight
            .iter_mut()
            .chain(dense.bias.iter_mut())
            .for_each(|w| *w = rng.gen_range(-1.0..1.0));
        let x2 = random_tensor(vec![3, 5], &mut rng);
        check_layer(Layer::Dense(dense), x2.clone(), 14);
        check_layer(Layer::Dropout(0.3), x2, 15);
    }
}
