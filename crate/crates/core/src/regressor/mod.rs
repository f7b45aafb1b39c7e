//! Fully-connected network regressing a PSF kernel from a field point.
//!
//! Inputs are encoded as `[Δz / dz_scale, R / r_scale, cos φ, sin φ]`; hidden
//! layers use `tanh`, the output layer is linear with one unit per kernel
//! pixel. Training minimizes the mean squared error of the raw outputs;
//! inference clamps negative outputs to zero and renormalizes to unit sum.

mod io;
mod train;

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_FORMAT_VERSION};
pub use train::{split_indices, train, Optimizer, EpochRecord, TrainConfig, TrainHistory};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PsfDataset;
use crate::error::{Error, Result};
use crate::kernel::{wrap_degrees, FieldPoint, PsfKernel};
use crate::scalar::Scalar;

/// Encoded input width.
pub const INPUT_DIM: usize = 4;

/// Default hidden layer widths.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

/// Inference post-processing of the raw network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Negative outputs set to zero, then scaled to unit sum.
    #[default]
    ClampRenormalize,
}

/// Input scaling and the field-point ranges the model accepts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConstants<T> {
    pub dz_scale: T,
    pub r_scale: T,
    pub dz_min: T,
    pub dz_max: T,
    pub r_max: T,
    pub output_mode: OutputMode,
}

impl<T: Scalar> NormConstants<T> {
    /// Scales chosen so the encoded defocus and radius lie in `[-1, 1]`.
    pub fn from_ranges(dz_min: T, dz_max: T, r_max: T) -> Result<Self> {
        let norm = Self {
            dz_scale: dz_min.abs().max(dz_max.abs()),
            r_scale: r_max,
            dz_min,
            dz_max,
            r_max,
            output_mode: OutputMode::ClampRenormalize,
        };
        norm.validate()?;
        Ok(norm)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: T| v.is_finite() && v != T::zero();
        if !(ok(self.dz_scale) && ok(self.r_scale) && self.r_max > T::zero()) {
            return Err(Error::InvalidParameter(
                "normalization constants must be finite and nonzero".into(),
            ));
        }
        if !(self.dz_min <= self.dz_max) {
            return Err(Error::InvalidParameter("dz_min above dz_max".into()));
        }
        Ok(())
    }
}

/// Network input for a field point.
pub fn encode_input<T: Scalar>(fp: &FieldPoint<T>, norm: &NormConstants<T>) -> Result<[T; INPUT_DIM]> {
    if !(fp.dz >= norm.dz_min && fp.dz <= norm.dz_max) {
        return Err(Error::OutOfRange(format!(
            "defocus {} µm (model covers {}..{})",
            fp.dz, norm.dz_min, norm.dz_max
        )));
    }
    if !(fp.r.abs() <= norm.r_max) {
        return Err(Error::OutOfRange(format!(
            "image height {} mm (model covers ±{})",
            fp.r, norm.r_max
        )));
    }
    if !fp.phi.is_finite() {
        return Err(Error::OutOfRange(format!("azimuth {}", fp.phi)));
    }
    let c = fp.canonical();
    let (sin, cos) = wrap_degrees(c.phi).to_radians().sin_cos();
    Ok([c.dz / norm.dz_scale, c.r / norm.r_scale, cos, sin])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `out x in`.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// Per-layer gradients, same shapes as the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel<T> {
    layers: Vec<Layer<T>>,
    hidden_activation: Activation,
    output_activation: Activation,
    norm: NormConstants<T>,
    size_k: usize,
    kernel_pitch: T,
    training_mse: Option<T>,
}

impl<T: Scalar> RegressorModel<T> {
    /// Seeded Glorot-uniform weights, zero biases.
    pub fn init(
        hidden: &[usize],
        size_k: usize,
        kernel_pitch: T,
        norm: NormConstants<T>,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(hidden, size_k, kernel_pitch, norm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let (fan_out, fan_in) = layer.weights.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = T::lit(rng.gen_range(-limit..=limit));
            }
        }
        Ok(model)
    }

    /// Model with every weight and bias zero.
    pub fn zeros(
        hidden: &[usize],
        size_k: usize,
        kernel_pitch: T,
        norm: NormConstants<T>,
    ) -> Result<Self> {
        norm.validate()?;
        if size_k == 0 || size_k.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("kernel size {size_k} is not odd")));
        }
        if !(kernel_pitch > T::zero()) {
            return Err(Error::InvalidParameter(format!("kernel pitch {kernel_pitch}")));
        }
        if hidden.contains(&0) {
            return Err(Error::InvalidParameter("empty hidden layer".into()));
        }
        let mut sizes = vec![INPUT_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(size_k * size_k);
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self {
            layers,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            norm,
            size_k,
            kernel_pitch,
            training_mse: None,
        })
    }

    /// Randomly initialized model sized and scaled for a dataset.
    pub fn for_dataset(dataset: &PsfDataset<T>, hidden: &[usize], seed: u64) -> Result<Self> {
        let meta = dataset.meta();
        let norm = NormConstants::from_ranges(
            T::lit(meta.dz_min),
            T::lit(meta.dz_max),
            T::lit(meta.r_max),
        )?;
        Self::init(hidden, meta.size_k, T::lit(meta.pitch_target), norm, seed)
    }

    pub(crate) fn from_parts(
        layers: Vec<Layer<T>>,
        hidden_activation: Activation,
        output_activation: Activation,
        norm: NormConstants<T>,
        size_k: usize,
        kernel_pitch: T,
        training_mse: Option<T>,
    ) -> Result<Self> {
        norm.validate()?;
        if layers.is_empty() {
            return Err(Error::InvalidParameter("model without layers".into()));
        }
        let mut fan_in = INPUT_DIM;
        for (i, l) in layers.iter().enumerate() {
            let (out, inp) = l.weights.dim();
            if inp != fan_in || l.bias.len() != out {
                return Err(Error::ShapeMismatch(format!("layer {i} shapes are inconsistent")));
            }
            fan_in = out;
        }
        if fan_in != size_k * size_k {
            return Err(Error::ShapeMismatch(format!(
                "output width {fan_in} does not match a {size_k}x{size_k} kernel"
            )));
        }
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
            norm,
            size_k,
            kernel_pitch,
            training_mse,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![INPUT_DIM];
        s.extend(self.layers.iter().map(|l| l.bias.len()));
        s
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn norm(&self) -> &NormConstants<T> {
        &self.norm
    }

    pub fn size_k(&self) -> usize {
        self.size_k
    }

    pub fn kernel_pitch(&self) -> T {
        self.kernel_pitch
    }

    pub fn activations(&self) -> (Activation, Activation) {
        (self.hidden_activation, self.output_activation)
    }

    /// Training-set MSE of the raw outputs recorded by [`train`].
    pub fn training_mse(&self) -> Option<T> {
        self.training_mse
    }

    pub(crate) fn set_training_mse(&mut self, mse: Option<T>) {
        self.training_mse = mse;
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weights (row-major) before biases.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn activate(&self, layer: usize, z: &mut Array2<T>) {
        let act = if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        };
        if act == Activation::Tanh {
            z.mapv_inplace(T::tanh);
        }
    }

    /// Raw outputs for a batch of encoded inputs (`N x 4`), keeping every
    /// layer's activations (input first).
    fn forward_trace(&self, inputs: ArrayView2<'_, T>) -> Vec<Array2<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let prev = acts.last().expect("input pushed");
            let mut z = prev.dot(&l.weights.t());
            z += &l.bias;
            self.activate(i, &mut z);
            acts.push(z);
        }
        acts
    }

    /// Raw outputs for a batch of encoded inputs (`N x 4`).
    pub fn forward_raw_batch(&self, inputs: ArrayView2<'_, T>) -> Array2<T> {
        self.forward_trace(inputs).pop().expect("at least one layer")
    }

    /// Raw (un-post-processed) output for one field point.
    pub fn forward_raw(&self, fp: &FieldPoint<T>) -> Result<Vec<T>> {
        let x = encode_input(fp, &self.norm)?;
        let inputs = Array2::from_shape_vec((1, INPUT_DIM), x.to_vec()).expect("1x4");
        Ok(self.forward_raw_batch(inputs.view()).into_raw_vec_and_offset().0)
    }

    /// Post-processed kernel for one field point.
    pub fn forward(&self, fp: &FieldPoint<T>) -> Result<PsfKernel<T>> {
        self.postprocess(self.forward_raw(fp)?)
    }

    fn postprocess(&self, mut raw: Vec<T>) -> Result<PsfKernel<T>> {
        match self.norm.output_mode {
            OutputMode::ClampRenormalize => {
                for v in raw.iter_mut() {
                    if !(*v > T::zero()) {
                        *v = T::zero();
                    }
                }
                crate::kernel::normalize_values(&mut raw)?;
            }
        }
        PsfKernel::new_normalized(self.size_k, self.kernel_pitch, raw)
    }
}

/// Encoded inputs (`N x 4`) and flattened targets (`N x k²`) of a dataset.
pub fn design_matrices<T: Scalar>(
    model: &RegressorModel<T>,
    dataset: &PsfDataset<T>,
) -> Result<(Array2<T>, Array2<T>)> {
    let k2 = model.size_k * model.size_k;
    let n = dataset.len();
    let mut x = Array2::zeros((n, INPUT_DIM));
    let mut y = Array2::zeros((n, k2));
    for (i, (fp, kernel)) in dataset.entries().iter().enumerate() {
        if kernel.size() != model.size_k {
            return Err(Error::ShapeMismatch(format!(
                "dataset kernel {}x{0} vs model output {}x{1}",
                kernel.size(),
                model.size_k
            )));
        }
        let e = encode_input(fp, &model.norm)?;
        for (j, v) in e.iter().enumerate() {
            x[[i, j]] = *v;
        }
        for (j, v) in kernel.values().iter().enumerate() {
            y[[i, j]] = *v;
        }
    }
    Ok((x, y))
}

/// Mean over entries and pixels of the squared error between post-processed
/// predictions and dataset kernels.
pub fn loss_mse<T: Scalar>(model: &RegressorModel<T>, dataset: &PsfDataset<T>) -> Result<T> {
    let mut acc = T::zero();
    let mut count = 0usize;
    for (fp, target) in dataset.entries() {
        if target.size() != model.size_k {
            return Err(Error::ShapeMismatch(format!(
                "dataset kernel {}x{0} vs model output {}x{1}",
                target.size(),
                model.size_k
            )));
        }
        let pred = model.forward(fp)?;
        for (p, t) in pred.values().iter().zip(target.values()) {
            let d = *p - *t;
            acc += d * d;
        }
        count += target.values().len();
    }
    if count == 0 {
        return Ok(T::zero());
    }
    Ok(acc / T::from_usize_lossy(count))
}

/// Training objective on raw outputs: mean over entries and outputs of
/// `(raw - target)²`.
pub fn raw_loss<T: Scalar>(model: &RegressorModel<T>, x: ArrayView2<'_, T>, y: ArrayView2<'_, T>) -> T {
    if y.is_empty() {
        return T::zero();
    }
    let out = model.forward_raw_batch(x);
    let diff = out - y;
    diff.mapv(|d| d * d).sum() / T::from_usize_lossy(y.len())
}

/// Raw-output loss and its gradient with respect to every weight and bias.
pub fn backward_matrices<T: Scalar>(
    model: &RegressorModel<T>,
    x: ArrayView2<'_, T>,
    y: ArrayView2<'_, T>,
) -> Result<(T, Gradients<T>)> {
    let out_dim = model.size_k * model.size_k;
    if x.nrows() != y.nrows() || x.ncols() != INPUT_DIM || y.ncols() != out_dim {
        return Err(Error::ShapeMismatch(format!(
            "inputs {:?} / targets {:?} for model {:?}",
            x.dim(),
            y.dim(),
            model.layer_sizes()
        )));
    }
    let mut grads: Vec<Layer<T>> = model
        .layers
        .iter()
        .map(|l| Layer::zeros(l.weights.ncols(), l.weights.nrows()))
        .collect();
    if y.is_empty() {
        return Ok((T::zero(), Gradients { layers: grads }));
    }
    let acts = model.forward_trace(x);
    let count = T::from_usize_lossy(y.len());
    let diff = &acts[acts.len() - 1] - &y;
    let loss = diff.mapv(|d| d * d).sum() / count;
    let two = T::lit(2.0);
    let mut delta = diff.mapv(|d| two * d / count);
    for li in (0..model.layers.len()).rev() {
        let is_output = li + 1 == model.layers.len();
        let act = if is_output {
            model.output_activation
        } else {
            model.hidden_activation
        };
        if act == Activation::Tanh {
            // d tanh(z) / dz = 1 - tanh(z)²; acts[li + 1] holds tanh(z).
            delta.zip_mut_with(&acts[li + 1], |d, &a| *d *= T::one() - a * a);
        }
        grads[li].weights = delta.t().dot(&acts[li]);
        grads[li].bias = delta.sum_axis(Axis(0));
        if li > 0 {
            delta = delta.dot(&model.layers[li].weights);
        }
    }
    Ok((loss, Gradients { layers: grads }))
}

/// Gradient of the raw-output training loss over a whole dataset.
pub fn backward<T: Scalar>(
    model: &RegressorModel<T>,
    dataset: &PsfDataset<T>,
) -> Result<(T, Gradients<T>)> {
    let (x, y) = design_matrices(model, dataset)?;
    backward_matrices(model, x.view(), y.view())
}

impl<T: Scalar> Gradients<T> {
    /// Flattened in the same order as [`RegressorModel::params`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetMeta, DatasetSource};
    use crate::lens::{generate_dataset, PlanGroup, SamplingPlan, SyntheticLensSpec};

    fn norm() -> NormConstants<f64> {
        NormConstants::from_ranges(-50.0, 50.0, 3.0).unwrap()
    }

    fn fp(dz: f64, r: f64, phi: f64) -> FieldPoint<f64> {
        FieldPoint::new(dz, r, phi)
    }

    #[test]
    fn encode_examples() {
        let n = norm();
        assert_eq!(encode_input(&fp(0.0, 0.0, 0.0), &n).unwrap(), [0.0, 0.0, 1.0, 0.0]);
        let e = encode_input(&fp(50.0, 3.0, 90.0), &n).unwrap();
        assert_eq!(&e[..2], &[1.0, 1.0]);
        assert!(e[2].abs() < 1e-15 && (e[3] - 1.0).abs() < 1e-15);
        for phi in [0.0, 15.0, 30.0, 162.0, 359.0] {
            assert_eq!(
                encode_input(&fp(3.0, 1.0, phi), &n).unwrap(),
                encode_input(&fp(3.0, 1.0, phi + 360.0), &n).unwrap()
            );
        }
        assert!(matches!(encode_input(&fp(51.0, 0.0, 0.0), &n), Err(Error::OutOfRange(_))));
        assert!(encode_input(&fp(0.0, -3.1, 0.0), &n).is_err());
        assert_eq!(
            encode_input(&fp(1.0, -2.0, 10.0), &n).unwrap(),
            encode_input(&fp(1.0, 2.0, 190.0), &n).unwrap()
        );
    }

    #[test]
    fn zero_weight_model_outputs_uniform_kernel() {
        for b in [1e-3, 1.0, 42.0] {
            let mut m = RegressorModel::zeros(&[8], 13, 6.14, norm()).unwrap();
            let last = m.layers.len() - 1;
            m.layers[last].bias.fill(b);
            let k = m.forward(&fp(10.0, 1.0, 30.0)).unwrap();
            for &v in k.values() {
                assert!((v - 1.0 / 169.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn all_nonpositive_output_fails() {
        let mut m = RegressorModel::zeros(&[8], 3, 6.0, norm()).unwrap();
        let last = m.layers.len() - 1;
        m.layers[last].bias.fill(-1.0);
        assert!(matches!(m.forward(&fp(0.0, 0.0, 0.0)), Err(Error::AllZeroKernel)));
    }

    #[test]
    fn forward_is_deterministic_and_valid() {
        let m = RegressorModel::init(&DEFAULT_HIDDEN, 13, 6.14, norm(), 3).unwrap();
        let p = fp(-20.0, 2.5, 200.0);
        let a = m.forward(&p).unwrap();
        let b = m.forward(&p).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| *v >= 0.0));
        assert!((a.sum() - 1.0).abs() < 1e-9);
        assert_eq!(m.layer_sizes(), vec![4, 64, 64, 169]);
    }

    #[test]
    fn init_is_seeded() {
        let a = RegressorModel::init(&[16], 5, 6.0, norm(), 11).unwrap();
        let b = RegressorModel::init(&[16], 5, 6.0, norm(), 11).unwrap();
        let c = RegressorModel::init(&[16], 5, 6.0, norm(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / (4 + 16) as f64).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
    }

    fn tiny_dataset() -> PsfDataset<f64> {
        let plan = SamplingPlan {
            name: "tiny".into(),
            groups: vec![PlanGroup {
                dz: vec![-20.0, 0.0, 20.0],
                r: vec![0.0, 1.0, 2.5],
                phi: vec![0.0, 120.0],
            }],
        };
        generate_dataset(&SyntheticLensSpec::default(), &plan, 5, 12.0).unwrap()
    }

    #[test]
    fn loss_of_exact_predictor_is_zero() {
        // A dataset built from the model's own outputs.
        let m = RegressorModel::init(&[8], 5, 12.0, norm(), 1).unwrap();
        let base = tiny_dataset();
        let entries = base
            .entries()
            .iter()
            .map(|(p, _)| (*p, m.forward(p).unwrap()))
            .collect();
        let ds = PsfDataset::new(base.meta().clone(), entries).unwrap();
        assert_eq!(loss_mse(&m, &ds).unwrap(), 0.0);
    }

    #[test]
    fn loss_single_pixel_difference() {
        let m = RegressorModel::init(&[8], 5, 12.0, norm(), 1).unwrap();
        let base = tiny_dataset();
        let delta = 1e-3;
        let mut entries: Vec<_> = base
            .entries()
            .iter()
            .map(|(p, _)| (*p, m.forward(p).unwrap()))
            .collect();
        let mut v = entries[2].1.values().to_vec();
        v[7] += delta;
        entries[2].1 = PsfKernel::new(5, 12.0, v).unwrap();
        let n = entries.len();
        let ds = PsfDataset::new(base.meta().clone(), entries).unwrap();
        let expect = delta * delta / (n * 25) as f64;
        assert!((loss_mse(&m, &ds).unwrap() - expect).abs() < 1e-18);
    }

    #[test]
    fn loss_shape_mismatch() {
        let m = RegressorModel::init(&[8], 3, 12.0, norm(), 1).unwrap();
        assert!(matches!(loss_mse(&m, &tiny_dataset()), Err(Error::ShapeMismatch(_))));
        assert!(matches!(backward(&m, &tiny_dataset()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let m = RegressorModel::init(&[8], 5, 12.0, norm(), 4).unwrap();
        let (x, _) = design_matrices(&m, &tiny_dataset()).unwrap();
        let y = m.forward_raw_batch(x.view());
        let (loss, g) = backward_matrices(&m, x.view(), y.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn linear_layer_gradient_closed_form() {
        // No hidden layer: out = W x + b, loss = mean((out - t)²).
        let mut m = RegressorModel::init(&[], 3, 6.0, norm(), 9).unwrap();
        m.layers[0].bias.fill(0.01);
        let x = Array2::from_shape_vec((1, 4), vec![0.3, -0.5, 0.8, 0.6]).unwrap();
        let t = Array2::from_shape_fn((1, 9), |(_, j)| j as f64 * 0.05);
        let (_, g) = backward_matrices(&m, x.view(), t.view()).unwrap();
        let pred = m.forward_raw_batch(x.view());
        for o in 0..9 {
            let e = 2.0 * (pred[[0, o]] - t[[0, o]]) / 9.0;
            for i in 0..4 {
                assert!((g.layers[0].weights[[o, i]] - e * x[[0, i]]).abs() < 1e-15);
            }
            assert!((g.layers[0].bias[o] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut m = RegressorModel::init(&[6, 5], 3, 6.0, norm(), 2).unwrap();
        let p = m.params();
        assert_eq!(p.len(), m.param_count());
        assert_eq!(m.param_count(), 4 * 6 + 6 + 6 * 5 + 5 + 5 * 9 + 9);
        let doubled: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        m.set_params(&doubled).unwrap();
        assert_eq!(m.params(), doubled);
        assert!(m.set_params(&p[1..]).is_err());
    }

    #[test]
    fn from_parts_validates_shapes() {
        let m = RegressorModel::init(&[6], 3, 6.0, norm(), 2).unwrap();
        let mut layers = m.layers.clone();
        layers[1].bias = Array1::zeros(4);
        assert!(RegressorModel::from_parts(
            layers,
            Activation::Tanh,
            Activation::Identity,
            norm(),
            3,
            6.0,
            None
        )
        .is_err());
    }

    #[test]
    fn for_dataset_uses_meta_ranges() {
        let meta = DatasetMeta {
            pitch_native: 6.0,
            pitch_target: 6.0,
            size_k: 5,
            r_max: 2.0,
            dz_min: -30.0,
            dz_max: 10.0,
            source: DatasetSource::Scans {
                description: "none".into(),
            },
            plan: None,
        };
        let ds = PsfDataset::<f64>::new(meta, vec![]).unwrap();
        let m = RegressorModel::for_dataset(&ds, &[4], 0).unwrap();
        assert_eq!(m.norm().dz_scale, 30.0);
        assert_eq!(m.norm().r_scale, 2.0);
        assert_eq!(m.size_k(), 5);
    }
}
