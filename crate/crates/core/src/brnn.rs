//! Two-layer bidirectional recurrent network over the fixed three-step
//! sequence `(subject vector, spatial vector, object vector)`.
//!
//! Each layer runs a forward and a backward ReLU recurrence whose input,
//! recurrent and bias parameters are shared across the three steps. Layer 2
//! reads the concatenation `[fwd; bwd]` of layer-1 states. The output is a
//! single logit vector: every layer-2 state `(t, direction)` is projected by
//! its own matrix and the six projections are summed with one bias.
//!
//! Gradients are derived by hand; [`grad_check`] compares them against
//! central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings::DEFAULT_DIM;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const NUM_LAYERS: usize = 2;
pub const SEQ_LEN: usize = 3;
pub const DEFAULT_HIDDEN: usize = 128;

/// Floor applied to the target probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward = 0,
    Backward = 1,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }

    /// Time steps in the order the recurrence visits them.
    fn order(self) -> [usize; SEQ_LEN] {
        match self {
            Direction::Forward => [0, 1, 2],
            Direction::Backward => [2, 1, 0],
        }
    }

    /// The step whose state feeds step `t`, if any.
    fn previous(self, t: usize) -> Option<usize> {
        match self {
            Direction::Forward => t.checked_sub(1),
            Direction::Backward => (t + 1 < SEQ_LEN).then_some(t + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Number of predicates plus one for "no relation".
    pub output_dim: usize,
}

impl Default for NetworkDims {
    fn default() -> Self {
        Self {
            input_dim: DEFAULT_DIM,
            hidden_dim: DEFAULT_HIDDEN,
            output_dim: 71,
        }
    }
}

impl NetworkDims {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Result<Self> {
        let dims = Self {
            input_dim,
            hidden_dim,
            output_dim,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "input and hidden dimensions must be positive".into(),
            ));
        }
        if self.output_dim < 2 {
            return Err(Error::Config("output dimension must be at least 2".into()));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        NUM_LAYERS
    }

    pub fn activation(&self) -> Activation {
        Activation::Relu
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            2 * self.hidden_dim
        }
    }

    pub fn num_parameters(&self) -> usize {
        let h = self.hidden_dim;
        let recurrent: usize = (0..NUM_LAYERS)
            .map(|l| 2 * (h * self.layer_input(l) + h * h + h))
            .sum();
        recurrent + 2 * SEQ_LEN * self.output_dim * h + self.output_dim
    }
}

/// Parameters of one direction of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionParams<T = f64> {
    pub w_xh: Matrix<T>,
    pub w_hh: Matrix<T>,
    pub b_h: Vec<T>,
}

impl<T: Scalar> DirectionParams<T> {
    fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w_xh: Matrix::zeros(hidden, input),
            w_hh: Matrix::zeros(hidden, hidden),
            b_h: vec![T::zero(); hidden],
        }
    }
}

/// All network weights. Gradients share the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BrnnParams<T = f64> {
    dims: NetworkDims,
    /// `recurrent[layer][direction]`
    pub recurrent: [[DirectionParams<T>; 2]; NUM_LAYERS],
    /// `w_hy[t][direction]`: `output_dim x hidden_dim`
    pub w_hy: [[Matrix<T>; 2]; SEQ_LEN],
    pub b_y: Vec<T>,
}

pub type Gradients<T = f64> = BrnnParams<T>;

/// A named view of one parameter tensor.
#[derive(Debug)]
pub struct TensorView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

#[derive(Debug)]
pub struct TensorViewMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

impl<T: Scalar> BrnnParams<T> {
    pub fn zeros(dims: NetworkDims) -> Self {
        let h = dims.hidden_dim;
        let layer = |l: usize| {
            [
                DirectionParams::zeros(h, dims.layer_input(l)),
                DirectionParams::zeros(h, dims.layer_input(l)),
            ]
        };
        let out = || {
            [
                Matrix::zeros(dims.output_dim, h),
                Matrix::zeros(dims.output_dim, h),
            ]
        };
        Self {
            dims,
            recurrent: [layer(0), layer(1)],
            w_hy: [out(), out(), out()],
            b_y: vec![T::zero(); dims.output_dim],
        }
    }

    pub fn dims(&self) -> NetworkDims {
        self.dims
    }

    /// Tensors in a fixed order; checkpoints and flattening rely on it.
    pub fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = Vec::with_capacity(NUM_LAYERS * 6 + SEQ_LEN * 2 + 1);
        for (l, layer) in self.recurrent.iter().enumerate() {
            for (dir, p) in Direction::BOTH.iter().zip(layer) {
                let prefix = format!("l{}.{}", l + 1, dir.name());
                out.push(matrix_view(format!("{prefix}.w_xh"), &p.w_xh));
                out.push(matrix_view(format!("{prefix}.w_hh"), &p.w_hh));
                out.push(TensorView {
                    name: format!("{prefix}.b_h"),
                    shape: vec![p.b_h.len()],
                    data: &p.b_h,
                });
            }
        }
        for (t, per_dir) in self.w_hy.iter().enumerate() {
            for (dir, m) in Direction::BOTH.iter().zip(per_dir) {
                out.push(matrix_view(
                    format!("out.t{}.{}.w_hy", t + 1, dir.name()),
                    m,
                ));
            }
        }
        out.push(TensorView {
            name: "out.b_y".into(),
            shape: vec![self.b_y.len()],
            data: &self.b_y,
        });
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, T>> {
        let mut out = Vec::with_capacity(NUM_LAYERS * 6 + SEQ_LEN * 2 + 1);
        for (l, layer) in self.recurrent.iter_mut().enumerate() {
            for (dir, p) in Direction::BOTH.iter().zip(layer.iter_mut()) {
                let prefix = format!("l{}.{}", l + 1, dir.name());
                out.push(matrix_view_mut(format!("{prefix}.w_xh"), &mut p.w_xh));
                out.push(matrix_view_mut(format!("{prefix}.w_hh"), &mut p.w_hh));
                out.push(TensorViewMut {
                    name: format!("{prefix}.b_h"),
                    shape: vec![p.b_h.len()],
                    data: &mut p.b_h,
                });
            }
        }
        for (t, per_dir) in self.w_hy.iter_mut().enumerate() {
            for (dir, m) in Direction::BOTH.iter().zip(per_dir.iter_mut()) {
                out.push(matrix_view_mut(
                    format!("out.t{}.{}.w_hy", t + 1, dir.name()),
                    m,
                ));
            }
        }
        let n = self.b_y.len();
        out.push(TensorViewMut {
            name: "out.b_y".into(),
            shape: vec![n],
            data: &mut self.b_y,
        });
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// All entries concatenated in tensor order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors()
            .into_iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims == other.dims
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{:?} vs {:?}", self.dims, other.dims)))
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_shape(other)?;
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.data.iter_mut().zip(src.data) {
                *d = *d + alpha * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    /// L2 norm over every entry of every tensor.
    pub fn global_norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Converts every entry to another scalar type.
    pub fn cast<U: Scalar>(&self) -> BrnnParams<U> {
        let mut out = BrnnParams::<U>::zeros(self.dims);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, &s) in dst.data.iter_mut().zip(src.data) {
                *d = U::lit(s.as_f64());
            }
        }
        out
    }
}

fn matrix_view<T: Scalar>(name: String, m: &Matrix<T>) -> TensorView<'_, T> {
    TensorView {
        name,
        shape: vec![m.rows(), m.cols()],
        data: m.as_slice(),
    }
}

fn matrix_view_mut<T: Scalar>(name: String, m: &mut Matrix<T>) -> TensorViewMut<'_, T> {
    TensorViewMut {
        name,
        shape: vec![m.rows(), m.cols()],
        data: m.as_mut_slice(),
    }
}

/// Uniform fan-based initialization: every matrix entry is drawn from
/// `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
pub fn init_params<T: Scalar>(dims: NetworkDims, seed: u64) -> Result<BrnnParams<T>> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BrnnParams::zeros(dims);
    for t in params.tensors_mut() {
        if let [fan_out, fan_in] = t.shape[..] {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in t.data.iter_mut() {
                *v = T::lit(rng.random_range(-a..=a));
            }
        }
    }
    Ok(params)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Pre-activations and states of one direction of one layer, indexed by step.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionTrace<T> {
    pub pre: [Vec<T>; SEQ_LEN],
    pub hidden: [Vec<T>; SEQ_LEN],
}

/// Everything `backward` needs from a forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T = f64> {
    pub inputs: [Vec<T>; SEQ_LEN],
    /// `layers[layer][direction]`
    pub layers: [[DirectionTrace<T>; 2]; NUM_LAYERS],
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Input of layer 2 at step `t`: `[h1_fwd(t); h1_bwd(t)]`.
    fn layer2_input(&self, t: usize) -> Vec<T> {
        let [f, b] = &self.layers[0];
        f.hidden[t].iter().chain(&b.hidden[t]).copied().collect()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, &p)| {
            if p > best.1 {
                (i, p)
            } else {
                best
            }
        })
        .0
}

fn run_direction<T: Scalar>(
    p: &DirectionParams<T>,
    inputs: &[Vec<T>],
    dir: Direction,
) -> DirectionTrace<T> {
    let h = p.b_h.len();
    let mut pre: [Vec<T>; SEQ_LEN] = Default::default();
    let mut hidden: [Vec<T>; SEQ_LEN] = Default::default();
    for t in dir.order() {
        let mut a = p.b_h.clone();
        p.w_xh.mul_vec_acc(&inputs[t], &mut a);
        if let Some(prev) = dir.previous(t) {
            p.w_hh.mul_vec_acc(&hidden[prev], &mut a);
        }
        hidden[t] = a.iter().map(|&v| relu(v)).collect();
        debug_assert_eq!(hidden[t].len(), h);
        pre[t] = a;
    }
    DirectionTrace { pre, hidden }
}

pub fn forward<T: Scalar>(
    params: &BrnnParams<T>,
    x1: &[T],
    x2: &[T],
    x3: &[T],
) -> Result<ForwardTrace<T>> {
    let d = params.dims.input_dim;
    for (i, x) in [x1, x2, x3].iter().enumerate() {
        if x.len() != d {
            return Err(Error::Shape(format!(
                "input x{} has length {}, expected {d}",
                i + 1,
                x.len()
            )));
        }
    }
    let inputs = [x1.to_vec(), x2.to_vec(), x3.to_vec()];
    let [l1f, l1b] = &params.recurrent[0];
    let layer1 = [
        run_direction(l1f, &inputs, Direction::Forward),
        run_direction(l1b, &inputs, Direction::Backward),
    ];
    let z: Vec<Vec<T>> = (0..SEQ_LEN)
        .map(|t| {
            layer1[0].hidden[t]
                .iter()
                .chain(&layer1[1].hidden[t])
                .copied()
                .collect()
        })
        .collect();
    let [l2f, l2b] = &params.recurrent[1];
    let layer2 = [
        run_direction(l2f, &z, Direction::Forward),
        run_direction(l2b, &z, Direction::Backward),
    ];

    let mut logits = vec![T::zero(); params.dims.output_dim];
    for t in 0..SEQ_LEN {
        for dir in Direction::BOTH {
            params.w_hy[t][dir as usize].mul_vec_acc(&layer2[dir as usize].hidden[t], &mut logits);
        }
    }
    for (y, &b) in logits.iter_mut().zip(&params.b_y) {
        *y = *y + b;
    }
    let probs = softmax(&logits);
    Ok(ForwardTrace {
        inputs,
        layers: [layer1, layer2],
        logits,
        probs,
    })
}

/// Cross-entropy `-ln(max(probs[target], 1e-12))`.
pub fn loss<T: Scalar>(trace: &ForwardTrace<T>, target: usize) -> Result<T> {
    let p = *trace.probs.get(target).ok_or(Error::Index {
        index: target,
        len: trace.probs.len(),
    })?;
    Ok(-p.max(T::lit(PROB_FLOOR)).ln())
}

/// Backpropagates one direction of one layer through its three steps.
/// `dh_out[t]` is the gradient reaching `h(t)` from above; when
/// `dinputs` is given, input gradients are accumulated there.
fn backprop_direction<T: Scalar>(
    p: &DirectionParams<T>,
    g: &mut DirectionParams<T>,
    inputs: &[Vec<T>],
    trace: &DirectionTrace<T>,
    dh_out: &[Vec<T>],
    dir: Direction,
    mut dinputs: Option<&mut [Vec<T>]>,
) {
    let h = p.b_h.len();
    let mut carry = vec![T::zero(); h];
    for &t in dir.order().iter().rev() {
        let da: Vec<T> = (0..h)
            .map(|i| {
                // subgradient 0 at exactly 0
                if trace.pre[t][i] > T::zero() {
                    dh_out[t][i] + carry[i]
                } else {
                    T::zero()
                }
            })
            .collect();
        for (b, &v) in g.b_h.iter_mut().zip(&da) {
            *b = *b + v;
        }
        g.w_xh.add_outer(&da, &inputs[t]);
        if let Some(prev) = dir.previous(t) {
            g.w_hh.add_outer(&da, &trace.hidden[prev]);
        }
        carry.iter_mut().for_each(|c| *c = T::zero());
        p.w_hh.mul_vec_t_acc(&da, &mut carry);
        if let Some(dx) = dinputs.as_deref_mut() {
            p.w_xh.mul_vec_t_acc(&da, &mut dx[t]);
        }
    }
}

/// Gradient of the cross-entropy loss with respect to every parameter.
pub fn backward<T: Scalar>(
    params: &BrnnParams<T>,
    trace: &ForwardTrace<T>,
    target: usize,
) -> Result<Gradients<T>> {
    let mut grads = BrnnParams::zeros(params.dims);
    backward_acc(params, trace, target, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but adds into an existing gradient buffer.
pub fn backward_acc<T: Scalar>(
    params: &BrnnParams<T>,
    trace: &ForwardTrace<T>,
    target: usize,
    grads: &mut Gradients<T>,
) -> Result<()> {
    let k = params.dims.output_dim;
    if target >= k {
        return Err(Error::Index {
            index: target,
            len: k,
        });
    }
    params.check_shape(grads)?;
    let h = params.dims.hidden_dim;

    let mut dy = trace.probs.clone();
    dy[target] = dy[target] - T::one();
    for (b, &v) in grads.b_y.iter_mut().zip(&dy) {
        *b = *b + v;
    }

    // gradient reaching each layer-2 state from the output block
    let mut dh2: [Vec<Vec<T>>; 2] = [
        vec![vec![T::zero(); h]; SEQ_LEN],
        vec![vec![T::zero(); h]; SEQ_LEN],
    ];
    #[allow(clippy::needless_range_loop)]
    for t in 0..SEQ_LEN {
        for dir in Direction::BOTH {
            let d = dir as usize;
            grads.w_hy[t][d].add_outer(&dy, &trace.layers[1][d].hidden[t]);
            params.w_hy[t][d].mul_vec_t_acc(&dy, &mut dh2[d][t]);
        }
    }

    let z: Vec<Vec<T>> = (0..SEQ_LEN).map(|t| trace.layer2_input(t)).collect();
    let mut dz = vec![vec![T::zero(); 2 * h]; SEQ_LEN];
    for dir in Direction::BOTH {
        let d = dir as usize;
        backprop_direction(
            &params.recurrent[1][d],
            &mut grads.recurrent[1][d],
            &z,
            &trace.layers[1][d],
            &dh2[d],
            dir,
            Some(&mut dz),
        );
    }

    let dh1: [Vec<Vec<T>>; 2] = [
        dz.iter().map(|v| v[..h].to_vec()).collect(),
        dz.iter().map(|v| v[h..].to_vec()).collect(),
    ];
    for dir in Direction::BOTH {
        let d = dir as usize;
        backprop_direction(
            &params.recurrent[0][d],
            &mut grads.recurrent[0][d],
            &trace.inputs,
            &trace.layers[0][d],
            &dh1[d],
            dir,
            None,
        );
    }
    Ok(())
}

/// Loss and gradient for a single example.
pub fn loss_and_gradients<T: Scalar>(
    params: &BrnnParams<T>,
    inputs: [&[T]; SEQ_LEN],
    target: usize,
) -> Result<(T, Gradients<T>)> {
    let trace = forward(params, inputs[0], inputs[1], inputs[2])?;
    let l = loss(&trace, target)?;
    Ok((l, backward(params, &trace, target)?))
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: (String, usize),
    pub coordinates: usize,
}

/// Relative error used by [`grad_check`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences over every
/// parameter of a randomly initialized network on one random example.
pub fn grad_check(dims: NetworkDims, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    let mut params: BrnnParams<f64> = init_params(dims, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    // non-zero biases so every tensor is exercised
    for t in params.tensors_mut() {
        if t.shape.len() == 1 {
            t.data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.1..=0.1));
        }
    }
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dims.input_dim)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect()
    };
    let xs = [draw(&mut rng), draw(&mut rng), draw(&mut rng)];
    let target = rng.random_range(0..dims.output_dim);
    grad_check_at(&params, [&xs[0], &xs[1], &xs[2]], target, epsilon)
}

/// Finite-difference comparison at a given point.
pub fn grad_check_at(
    params: &BrnnParams<f64>,
    inputs: [&[f64]; SEQ_LEN],
    target: usize,
    epsilon: f64,
) -> Result<GradCheckReport> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Domain {
            what: "epsilon must be positive",
            value: epsilon,
        });
    }
    let (_, analytic) = loss_and_gradients(params, inputs, target)?;
    let eval = |p: &BrnnParams<f64>| -> Result<f64> {
        let trace = forward(p, inputs[0], inputs[1], inputs[2])?;
        loss(&trace, target)
    };

    let mut probe = params.clone();
    let names: Vec<(String, usize)> = params
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.data.len()))
        .collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (String::new(), 0),
        coordinates: 0,
    };
    for (ti, (name, len)) in names.iter().enumerate() {
        for i in 0..*len {
            let original = probe.tensors()[ti].data[i];
            probe.tensors_mut()[ti].data[i] = original + epsilon;
            let up = eval(&probe)?;
            probe.tensors_mut()[ti].data[i] = original - epsilon;
            let down = eval(&probe)?;
            probe.tensors_mut()[ti].data[i] = original;

            let numeric = (up - down) / (2.0 * epsilon);
            let err = relative_error(analytic.tensors()[ti].data[i], numeric);
            if report.coordinates == 0 || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (name.clone(), i);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}
