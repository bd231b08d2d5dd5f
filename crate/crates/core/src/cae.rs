//! Convolutional autoencoder used as the retrieval feature extractor.
//!
//! Encoder: stride-2 3×3 convolutions. Residual block: 1×1 → 3×3 → 1×1
//! convolutions whose output is added back onto the block input. Bottleneck:
//! dense projection of the flattened grid to the feature vector, then a dense
//! expansion back to the grid. Decoder: stride-2 4×4 transposed convolutions,
//! sigmoid on the last one. ReLU follows every other conv/dense.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, LayoutId, ModelWeights, OptimizerState, ParamLayout, Real, Tensor, Var};

pub const ENCODER_KERNEL: usize = 3;
pub const DECODER_KERNEL: usize = 4;
pub const SAMPLING_STRIDE: usize = 2;
pub const SAMPLING_PADDING: usize = 1;
pub const DEFAULT_FEATURE_DIM: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaeConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub encoder_filters: Vec<usize>,
    /// Residual branch widths; the last must equal the final encoder width so
    /// the skip connection can add the block input to its output.
    pub residual_filters: Vec<usize>,
    pub bottleneck_dim: usize,
    /// Must mirror the encoder depth and end with `channels`.
    pub decoder_filters: Vec<usize>,
    pub seed: u64,
}

impl Default for CaeConfig {
    fn default() -> Self {
        CaeConfig {
            channels: 3,
            height: 64,
            width: 64,
            encoder_filters: vec![32, 64, 128, 256],
            residual_filters: vec![64, 32, 256],
            bottleneck_dim: DEFAULT_FEATURE_DIM,
            decoder_filters: vec![128, 64, 32, 3],
            seed: 0,
        }
    }
}

impl CaeConfig {
    /// Full-width filters at an arbitrary input size.
    pub fn with_size(height: usize, width: usize) -> Self {
        CaeConfig {
            height,
            width,
            ..Self::default()
        }
    }

    /// Two-level desk-scale network for 16×16 inputs.
    pub fn tiny() -> Self {
        CaeConfig {
            channels: 3,
            height: 16,
            width: 16,
            encoder_filters: vec![4, 8],
            residual_filters: vec![4, 2, 8],
            bottleneck_dim: 16,
            decoder_filters: vec![4, 3],
            seed: 0,
        }
    }

    pub fn downsampling(&self) -> usize {
        1 << self.encoder_filters.len()
    }

    /// `[channels, height, width]` of the encoder output.
    pub fn grid_shape(&self) -> [usize; 3] {
        let f = self.downsampling();
        [
            self.encoder_filters.last().copied().unwrap_or(self.channels),
            self.height / f,
            self.width / f,
        ]
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.channels == 0 || self.bottleneck_dim == 0 {
            return bad("channels and bottleneck dimension must be positive".into());
        }
        if self.encoder_filters.is_empty() || self.encoder_filters.contains(&0) {
            return bad("encoder filters must be a non-empty list of positive widths".into());
        }
        let f = self.downsampling();
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(f) || !self.width.is_multiple_of(f) {
            return bad(alloc::format!(
                "input {}x{} must be a positive multiple of {f} in both dimensions",
                self.height,
                self.width
            ));
        }
        if self.decoder_filters.len() != self.encoder_filters.len() {
            return bad("decoder depth must equal encoder depth".into());
        }
        if self.decoder_filters.last() != Some(&self.channels) || self.decoder_filters.contains(&0) {
            return bad("decoder must end with the input channel count".into());
        }
        if let Some(&last) = self.residual_filters.last() {
            if last != self.grid_shape()[0] || self.residual_filters.contains(&0) {
                return bad(alloc::format!(
                    "residual block must project back to {} channels",
                    self.grid_shape()[0]
                ));
            }
        }
        Ok(())
    }

    fn residual_kernel(&self, j: usize) -> usize {
        if j == 0 || j + 1 == self.residual_filters.len() {
            1
        } else {
            3
        }
    }

    /// Parameter layout, in serialization order. Returns the layout and the
    /// fan-in of each entry (used for initialization; 0 for biases).
    fn layout_with_fan_in(&self) -> (ParamLayout, Vec<usize>) {
        let mut layout = ParamLayout::new();
        let mut fan = Vec::new();
        let mut push = |layout: &mut ParamLayout, name: String, shape: &[usize], fan_in: usize, bias: usize| {
            layout.push(alloc::format!("{name}.weight"), shape);
            layout.push(alloc::format!("{name}.bias"), &[bias]);
            fan.push(fan_in);
            fan.push(0);
        };
        let k = ENCODER_KERNEL;
        let mut c = self.channels;
        for (i, &f) in self.encoder_filters.iter().enumerate() {
            push(&mut layout, alloc::format!("enc{i}"), &[f, c, k, k], c * k * k, f);
            c = f;
        }
        for (j, &f) in self.residual_filters.iter().enumerate() {
            let rk = self.residual_kernel(j);
            push(&mut layout, alloc::format!("res{j}"), &[f, c, rk, rk], c * rk * rk, f);
            c = f;
        }
        let grid: usize = self.grid_shape().iter().product();
        let d = self.bottleneck_dim;
        push(&mut layout, "bottleneck".into(), &[d, grid], grid, d);
        push(&mut layout, "expand".into(), &[grid, d], d, grid);
        let mut c = self.grid_shape()[0];
        let k = DECODER_KERNEL;
        let s = SAMPLING_STRIDE;
        for (i, &f) in self.decoder_filters.iter().enumerate() {
            push(&mut layout, alloc::format!("dec{i}"), &[c, f, k, k], (c * k * k / (s * s)).max(1), f);
            c = f;
        }
        (layout, fan)
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout_with_fan_in().0
    }
}

/// Bottleneck activations of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub source_id: String,
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(source_id: impl Into<String>, values: Vec<f32>) -> Self {
        FeatureVector {
            source_id: source_id.into(),
            values,
        }
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle stream.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub model: CaeModel<T>,
    /// Mean reconstruction MSE of each epoch.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaeModel<T> {
    config: CaeConfig,
    layout: ParamLayout,
    weights: ModelWeights<T>,
}

struct Recorded {
    reconstruction: Var,
    features: Var,
}

impl<T: Real> CaeModel<T> {
    /// Uniform He-style initialization, `U(±√(6/fan_in))`, zero biases.
    pub fn build(config: CaeConfig) -> Result<Self> {
        config.validate()?;
        let (layout, fans) = config.layout_with_fan_in();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut values = Vec::with_capacity(layout.total_len());
        for (spec, &fan_in) in layout.specs().iter().zip(&fans) {
            if fan_in == 0 {
                values.extend(core::iter::repeat_n(T::zero(), spec.len()));
            } else {
                let bound = libm_sqrt(6.0 / fan_in as f64);
                values.extend((0..spec.len()).map(|_| T::lit(rng.gen_range(-bound..bound))));
            }
        }
        let weights = ModelWeights::new(layout.id(), values);
        Ok(CaeModel { config, layout, weights })
    }

    pub fn from_weights(config: CaeConfig, weights: ModelWeights<T>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        weights.ensure_layout(&layout)?;
        Ok(CaeModel { config, layout, weights })
    }

    pub fn with_weights(&self, weights: ModelWeights<T>) -> Result<Self> {
        weights.ensure_layout(&self.layout)?;
        Ok(CaeModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            weights,
        })
    }

    pub fn config(&self) -> &CaeConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn layout_id(&self) -> LayoutId {
        self.weights.layout_id
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    pub fn into_weights(self) -> ModelWeights<T> {
        self.weights
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_len()
    }

    pub fn feature_dim(&self) -> usize {
        self.config.bottleneck_dim
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        let expected = self.config.input_shape();
        if image.shape() != expected {
            return Err(Error::dim("cae input", &expected, image.shape()));
        }
        Ok(())
    }

    fn tensors(&self) -> Vec<Tensor<T>> {
        self.layout
            .split(&self.weights.values)
            .expect("weights validated against layout")
    }

    /// Records encoder → residual → bottleneck, returning the block output
    /// grid and feature node. `p[i]` are the parameter leaves in layout order.
    fn record_encoder(&self, g: &mut Graph<'_, T>, p: &[Var], image: Var) -> Result<(Var, Var)> {
        let mut x = image;
        let mut idx = 0;
        for _ in &self.config.encoder_filters {
            let y = g.conv2d(x, p[idx], p[idx + 1], SAMPLING_STRIDE, SAMPLING_PADDING)?;
            x = g.relu(y);
            idx += 2;
        }
        let block_in = x;
        if !self.config.residual_filters.is_empty() {
            let mut r = block_in;
            for j in 0..self.config.residual_filters.len() {
                let pad = self.config.residual_kernel(j) / 2;
                let y = g.conv2d(r, p[idx], p[idx + 1], 1, pad)?;
                r = g.relu(y);
                idx += 2;
            }
            x = g.add(block_in, r)?;
        }
        let z = g.dense(x, p[idx], p[idx + 1])?;
        let features = g.relu(z);
        Ok((x, features))
    }

    fn record(&self, g: &mut Graph<'_, T>, p: &[Var], image: Var) -> Result<Recorded> {
        let (_, features) = self.record_encoder(g, p, image)?;
        let mut idx = 2 * (self.config.encoder_filters.len() + self.config.residual_filters.len()) + 2;
        let e = g.dense(features, p[idx], p[idx + 1])?;
        let e = g.relu(e);
        let mut x = g.reshape(e, &self.config.grid_shape())?;
        idx += 2;
        let last = self.config.decoder_filters.len() - 1;
        for i in 0..=last {
            let y = g.transpose_conv2d(x, p[idx], p[idx + 1], SAMPLING_STRIDE, SAMPLING_PADDING)?;
            x = if i == last { g.sigmoid(y) } else { g.relu(y) };
            idx += 2;
        }
        Ok(Recorded {
            reconstruction: x,
            features,
        })
    }

    fn to_features(&self, t: &Tensor<T>) -> FeatureVector {
        FeatureVector::new(String::new(), t.data().iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with_features(image)?.0)
    }

    /// Reconstruction plus the bottleneck captured on the same pass.
    pub fn forward_with_features(&self, image: &Tensor<T>) -> Result<(Tensor<T>, FeatureVector)> {
        self.check_image(image)?;
        let params = self.tensors();
        let mut g = Graph::new();
        let p: Vec<Var> = params.iter().map(|t| g.input(t)).collect();
        let x = g.input(image);
        let rec = self.record(&mut g, &p, x)?;
        Ok((g.value(rec.reconstruction).clone(), self.to_features(g.value(rec.features))))
    }

    /// Feature extraction with the decoder removed.
    pub fn encode(&self, image: &Tensor<T>) -> Result<FeatureVector> {
        self.check_image(image)?;
        let params = self.tensors();
        let mut g = Graph::new();
        let p: Vec<Var> = params.iter().map(|t| g.input(t)).collect();
        let x = g.input(image);
        let (_, features) = self.record_encoder(&mut g, &p, x)?;
        Ok(self.to_features(g.value(features)))
    }

    /// Encoder output grid before the residual block.
    pub fn encoder_output(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_image(image)?;
        let params = self.tensors();
        let mut x = image.clone();
        for i in 0..self.config.encoder_filters.len() {
            let y = crate::numerics::conv2d(&x, &params[2 * i], &params[2 * i + 1], SAMPLING_STRIDE, SAMPLING_PADDING)?;
            x = crate::numerics::relu(&y);
        }
        Ok(x)
    }

    /// Applies only the residual block (with its skip connection) to a grid.
    pub fn residual_block(&self, grid: &Tensor<T>) -> Result<Tensor<T>> {
        let expected = self.config.grid_shape();
        if grid.shape() != expected {
            return Err(Error::dim("residual block", &expected, grid.shape()));
        }
        let params = self.tensors();
        let mut idx = 2 * self.config.encoder_filters.len();
        let mut r = grid.clone();
        for j in 0..self.config.residual_filters.len() {
            let pad = self.config.residual_kernel(j) / 2;
            let y = crate::numerics::conv2d(&r, &params[idx], &params[idx + 1], 1, pad)?;
            r = crate::numerics::relu(&y);
            idx += 2;
        }
        if self.config.residual_filters.is_empty() {
            return Ok(r);
        }
        crate::numerics::add(grid, &r)
    }

    pub fn loss(&self, image: &Tensor<T>) -> Result<f64> {
        crate::numerics::mse(image, &self.forward(image)?)
    }

    /// Mean reconstruction loss over `batch` and its gradient, flat in layout order.
    pub fn loss_and_gradient(&self, batch: &[&Tensor<T>]) -> Result<(f64, Vec<T>)> {
        if batch.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let params = self.tensors();
        let mut grad = vec![T::zero(); self.layout.total_len()];
        let mut loss_sum = 0.0;
        for image in batch {
            self.check_image(image)?;
            let mut g = Graph::new();
            let p: Vec<Var> = params.iter().map(|t| g.param(t)).collect();
            let x = g.input(image);
            let rec = self.record(&mut g, &p, x)?;
            let loss = g.mse(rec.reconstruction, x)?;
            loss_sum += g.value(loss).data()[0].as_f64();
            let grads = g.backward(loss)?;
            for (spec, var) in self.layout.specs().iter().zip(&p) {
                if let Some(t) = grads.get(*var) {
                    grad[spec.offset..spec.offset + spec.len()]
                        .iter_mut()
                        .zip(t.data())
                        .for_each(|(acc, &v)| *acc += v);
                }
            }
        }
        let scale = T::lit(1.0 / batch.len() as f64);
        grad.iter_mut().for_each(|v| *v *= scale);
        Ok((loss_sum / batch.len() as f64, grad))
    }

    /// Mini-batch training on a private copy of the weights.
    pub fn train(
        &self,
        dataset: &[Tensor<T>],
        opts: &TrainOptions,
        optimizer: &mut OptimizerState<T>,
    ) -> Result<Trained<T>> {
        if opts.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if dataset.is_empty() {
            return Err(Error::Training("empty dataset".into()));
        }
        for image in dataset {
            self.check_image(image)?;
        }
        let mut model = self.clone();
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut trace = Vec::with_capacity(opts.epochs);
        for epoch in 0..opts.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(opts.batch_size) {
                let batch: Vec<&Tensor<T>> = chunk.iter().map(|&i| &dataset[i]).collect();
                let (loss, grad) = model.loss_and_gradient(&batch)?;
                if !loss.is_finite() {
                    return Err(Error::Training(alloc::format!("non-finite loss at epoch {epoch}")));
                }
                epoch_loss += loss * batch.len() as f64;
                optimizer
                    .step(&model.layout, &mut model.weights.values, &grad)
                    .map_err(|e| match e {
                        Error::Training(msg) => Error::Training(alloc::format!("epoch {epoch}: {msg}")),
                        other => other,
                    })?;
            }
            trace.push(epoch_loss / dataset.len() as f64);
        }
        Ok(Trained {
            model,
            loss_trace: trace,
        })
    }
}

fn libm_sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::OptimizerSpec;

    fn image<T: Real>(cfg: &CaeConfig, seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(cfg.input_shape().to_vec(), |_| T::lit(rng.gen_range(0.0..1.0)))
    }

    fn bits(t: &[f32]) -> Vec<u32> {
        t.iter().map(|v| v.to_bits()).collect()
    }

    /// Parameter count walked layer by layer from the architecture description.
    fn walked_param_count(cfg: &CaeConfig) -> usize {
        let mut total = 0;
        let mut c = cfg.channels;
        for &f in &cfg.encoder_filters {
            total += f * c * 9 + f;
            c = f;
        }
        let n = cfg.residual_filters.len();
        for (j, &f) in cfg.residual_filters.iter().enumerate() {
            let k = if j == 0 || j == n - 1 { 1 } else { 9 };
            total += f * c * k + f;
            c = f;
        }
        let grid = c * (cfg.height / 16) * (cfg.width / 16);
        total += grid * cfg.bottleneck_dim + cfg.bottleneck_dim;
        total += cfg.bottleneck_dim * grid + grid;
        for &f in &cfg.decoder_filters {
            total += c * f * 16 + f;
            c = f;
        }
        total
    }

    #[test]
    fn rejects_sizes_not_divisible_by_16() {
        let cfg = CaeConfig::with_size(60, 64);
        assert!(matches!(CaeModel::<f32>::build(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn default_parameter_count_matches_layer_walk() {
        let cfg = CaeConfig::default();
        let model = CaeModel::<f32>::build(cfg.clone()).unwrap();
        assert_eq!(model.param_count(), walked_param_count(&cfg));
        // 4×4×256 grid at 64×64.
        assert_eq!(cfg.grid_shape(), [256, 4, 4]);
        // Frozen from an offline shape walk.
        assert_eq!(model.param_count(), 2_764_363);
    }

    #[test]
    fn default_encoder_grid_is_4x4x256() {
        let cfg = CaeConfig::default();
        let model = CaeModel::<f32>::build(cfg.clone()).unwrap();
        let out = model.encoder_output(&image(&cfg, 1)).unwrap();
        assert_eq!(out.shape(), &[256, 4, 4]);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = CaeModel::<f32>::build(CaeConfig::tiny()).unwrap();
        let b = CaeModel::<f32>::build(CaeConfig::tiny()).unwrap();
        assert_eq!(bits(&a.weights().values), bits(&b.weights().values));
        let c = CaeModel::<f32>::build(CaeConfig { seed: 1, ..CaeConfig::tiny() }).unwrap();
        assert_ne!(a.weights().values, c.weights().values);
    }

    #[test]
    fn forward_shape_range_and_features() {
        let cfg = CaeConfig::with_size(32, 32);
        let model = CaeModel::<f32>::build(cfg.clone()).unwrap();
        let x = image(&cfg, 2);
        let (y, f) = model.forward_with_features(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(f.len(), 200);
        let e = model.encode(&x).unwrap();
        assert_eq!(bits(&e.values), bits(&f.values));
        assert_eq!(bits(&model.encode(&x).unwrap().values), bits(&e.values));
    }

    #[test]
    fn zero_weights_give_half_output_and_zero_features() {
        let cfg = CaeConfig::tiny();
        let m = CaeModel::<f32>::build(cfg.clone()).unwrap();
        let zero = ModelWeights::new(m.layout_id(), vec![0.0; m.param_count()]);
        let m = m.with_weights(zero).unwrap();
        let x = image(&cfg, 3);
        assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.5));
        assert!(m.encode(&x).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn size_mismatch_is_dimension_error() {
        let m = CaeModel::<f32>::build(CaeConfig::tiny()).unwrap();
        let x = Tensor::zeros([3, 32, 32]);
        assert!(matches!(m.forward(&x), Err(Error::Dimension { .. })));
        assert!(matches!(m.encode(&x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zeroed_residual_branch_is_identity() {
        let cfg = CaeConfig::tiny();
        let m = CaeModel::<f64>::build(cfg.clone()).unwrap();
        let mut values = m.weights().values.clone();
        for spec in m.layout().specs() {
            if spec.name.starts_with("res") {
                values[spec.offset..spec.offset + spec.len()].fill(0.0);
            }
        }
        let m = m.with_weights(ModelWeights::new(m.layout_id(), values)).unwrap();
        let grid = m.encoder_output(&image(&cfg, 4)).unwrap();
        assert_eq!(m.residual_block(&grid).unwrap(), grid);
    }

    #[test]
    fn weight_round_trip_preserves_forward() {
        let cfg = CaeConfig::tiny();
        let m = CaeModel::<f32>::build(cfg.clone()).unwrap();
        let tensors = m.layout().split(&m.weights().values).unwrap();
        let flat = m.layout().flatten(&tensors).unwrap();
        let m2 = CaeModel::from_weights(cfg.clone(), ModelWeights::new(m.layout_id(), flat)).unwrap();
        let x = image(&cfg, 5);
        assert_eq!(
            bits(m.forward(&x).unwrap().data()),
            bits(m2.forward(&x).unwrap().data())
        );
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let cfg = CaeConfig::tiny();
        let m = CaeModel::<f32>::build(cfg.clone()).unwrap();
        let mut opt = OptimizerState::new(OptimizerSpec::default()).unwrap();
        let out = m
            .train(&[image(&cfg, 6)], &TrainOptions { epochs: 0, batch_size: 1, seed: 0 }, &mut opt)
            .unwrap();
        assert!(out.loss_trace.is_empty());
        assert_eq!(out.model.weights(), m.weights());
    }

    #[test]
    fn empty_dataset_is_training_error() {
        let m = CaeModel::<f32>::build(CaeConfig::tiny()).unwrap();
        let mut opt = OptimizerState::new(OptimizerSpec::default()).unwrap();
        let err = m.train(&[], &TrainOptions { epochs: 1, batch_size: 1, seed: 0 }, &mut opt);
        assert!(matches!(err, Err(Error::Training(_))));
    }

    #[test]
    fn adam_overfits_single_image() {
        let cfg = CaeConfig::tiny();
        let m = CaeModel::<f32>::build(cfg.clone()).unwrap();
        let mut opt = OptimizerState::new(OptimizerSpec::adam(1e-3)).unwrap();
        let out = m
            .train(&[image(&cfg, 7)], &TrainOptions { epochs: 200, batch_size: 1, seed: 0 }, &mut opt)
            .unwrap();
        assert_eq!(out.loss_trace.len(), 200);
        assert!(out.loss_trace[199] < out.loss_trace[0]);
    }

    #[test]
    fn small_step_sgd_decreases_loss() {
        let cfg = CaeConfig::tiny();
        let m = CaeModel::<f32>::build(cfg.clone()).unwrap();
        let mut opt = OptimizerState::new(OptimizerSpec::sgd(1e-3)).unwrap();
        let out = m
            .train(&[image(&cfg, 8)], &TrainOptions { epochs: 50, batch_size: 1, seed: 0 }, &mut opt)
            .unwrap();
        assert!(out.loss_trace[49] < out.loss_trace[0]);
    }

    #[test]
    fn full_batch_sgd_epoch_is_one_gradient_step() {
        let cfg = CaeConfig::tiny();
        let m = CaeModel::<f64>::build(cfg.clone()).unwrap();
        let data: Vec<Tensor<f64>> = (0..3).map(|s| image(&cfg, 10 + s)).collect();
        let refs: Vec<&Tensor<f64>> = data.iter().collect();
        let (_, grad) = m.loss_and_gradient(&refs).unwrap();
        let lr = 0.05;
        let expected: Vec<f64> = m.weights().values.iter().zip(&grad).map(|(w, g)| w - lr * g).collect();
        let mut opt = OptimizerState::new(OptimizerSpec::sgd(lr)).unwrap();
        let out = m
            .train(&data, &TrainOptions { epochs: 1, batch_size: 3, seed: 99 }, &mut opt)
            .unwrap();
        for (a, e) in out.model.weights().values.iter().zip(&expected) {
            assert!((a - e).abs() <= 1e-6 * e.abs().max(1e-3), "{a} vs {e}");
        }
    }
}
