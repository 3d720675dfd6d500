//! Differentiable primitives with hand-written partial derivatives.
//!
//! Every forward function here has a matching backward function (or returns
//! its gradient alongside the value). Networks built on top compose these
//! explicitly; there is no dynamic graph.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::contract(format!(
                "tensor dims must be positive, got {dims:?}"
            )));
        }
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(Error::contract(format!(
                "tensor dims {dims:?} need {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::contract(format!("tensor value {bad} is not finite")));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(
            !dims.is_empty() && dims.iter().all(|&d| d > 0),
            "bad dims {dims:?}"
        );
        Self {
            dims: dims.to_vec(),
            values: vec![0.0; dims.iter().product()],
        }
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    /// Internal constructor for values produced by finite arithmetic on finite inputs.
    pub(crate) fn from_raw(dims: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        Self { dims, values }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Views the tensor as a matrix: 1-D is a single row, N-D folds trailing dims.
    pub fn shape2(&self) -> (usize, usize) {
        match self.dims.len() {
            1 => (1, self.dims[0]),
            _ => (self.dims[0], self.dims[1..].iter().product()),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, cols) = self.shape2();
        &self.values[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `out[n×m] = a[n×k] · b[k×m]`, accumulated into `out`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Fully-connected layer `y = xW + b`.
///
/// `x` is either a vector of length `in` or an `n×in` matrix; `weight` is `in×out`
/// and `bias` has `out` entries. The output keeps the rank of `x`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, inp) = x.shape2();
    let (w_in, out) = weight_shape(weight)?;
    if w_in != inp {
        return Err(Error::contract(format!(
            "linear: input width {inp} does not match weight rows {w_in}"
        )));
    }
    if bias.len() != out {
        return Err(Error::contract(format!(
            "linear: bias has {} entries, weight has {out} columns",
            bias.len()
        )));
    }
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(bias.values());
    }
    matmul_acc(x.values(), weight.values(), &mut y, n, inp, out);
    let dims = if x.dims().len() == 1 {
        vec![out]
    } else {
        vec![n, out]
    };
    Ok(Tensor::from_raw(dims, y))
}

fn weight_shape(weight: &Tensor) -> Result<(usize, usize)> {
    match weight.dims() {
        [i, o] => Ok((*i, *o)),
        d => Err(Error::contract(format!(
            "linear: weight must be 2-D, got {d:?}"
        ))),
    }
}

/// Partials of [`linear`] given the upstream gradient `dy`.
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub dx: Tensor,
    pub dweight: Tensor,
    pub dbias: Tensor,
}

pub fn linear_backward(x: &Tensor, weight: &Tensor, dy: &Tensor) -> Result<LinearGrads> {
    let (n, inp) = x.shape2();
    let (w_in, out) = weight_shape(weight)?;
    let (dn, dout) = dy.shape2();
    if w_in != inp || dn != n || dout != out {
        return Err(Error::contract("linear_backward: dimension mismatch"));
    }
    let mut dx = vec![0.0; n * inp];
    let mut dw = vec![0.0; inp * out];
    let mut db = vec![0.0; out];
    linear_backward_into(
        x.values(),
        weight.values(),
        dy.values(),
        n,
        inp,
        out,
        &mut dx,
        &mut dw,
        &mut db,
    );
    Ok(LinearGrads {
        dx: Tensor::from_raw(x.dims().to_vec(), dx),
        dweight: Tensor::from_raw(vec![inp, out], dw),
        dbias: Tensor::from_raw(vec![out], db),
    })
}

/// Slice-level backward of `y = xW + b`; all outputs are accumulated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward_into(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n: usize,
    inp: usize,
    out: usize,
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    for r in 0..n {
        let xr = &x[r * inp..(r + 1) * inp];
        let dyr = &dy[r * out..(r + 1) * out];
        for (b, &g) in db.iter_mut().zip(dyr) {
            *b += g;
        }
        let dxr = &mut dx[r * inp..(r + 1) * inp];
        for p in 0..inp {
            let wrow = &w[p * out..(p + 1) * out];
            let dwrow = &mut dw[p * out..(p + 1) * out];
            let xv = xr[p];
            let mut acc = 0.0;
            for j in 0..out {
                acc += dyr[j] * wrow[j];
                dwrow[j] += xv * dyr[j];
            }
            dxr[p] += acc;
        }
    }
}

/// `y = xW + b` over raw row-major slices, reading `W`/`b` from the store.
pub(crate) fn dense(
    params: &ParamStore,
    weight: &str,
    bias: &str,
    x: &[f64],
    n: usize,
) -> Vec<f64> {
    let w = params.value(weight);
    let (inp, out) = (w.dims()[0], w.dims()[1]);
    debug_assert_eq!(x.len(), n * inp);
    let b = params.value(bias).values();
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    matmul_acc(x, w.values(), &mut y, n, inp, out);
    y
}

/// Backward of [`dense`]: accumulates parameter gradients and returns `dx`.
pub(crate) fn dense_backward(
    params: &mut ParamStore,
    weight: &str,
    bias: &str,
    x: &[f64],
    n: usize,
    dy: &[f64],
) -> Vec<f64> {
    let (inp, out) = {
        let w = params.value(weight);
        (w.dims()[0], w.dims()[1])
    };
    let mut dx = vec![0.0; n * inp];
    let mut db = vec![0.0; out];
    {
        let (w, gw) = params.split_mut(weight);
        linear_backward_into(
            x,
            w.values(),
            dy,
            n,
            inp,
            out,
            &mut dx,
            gw.values_mut(),
            &mut db,
        );
    }
    params.accumulate(bias, &db);
    dx
}

pub(crate) fn relu_slice(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Masks `dy` in place by `pre > 0`.
pub(crate) fn relu_backward_slice(pre: &[f64], dy: &mut [f64]) {
    for (g, &p) in dy.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn min_abs(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_raw(
        x.dims().to_vec(),
        x.values().iter().map(|&v| v.max(0.0)).collect(),
    )
}

/// Backward of [`relu`]; the subgradient at exactly zero is 0.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.dims() != dy.dims() {
        return Err(Error::contract("relu_backward: dimension mismatch"));
    }
    let values = x
        .values()
        .iter()
        .zip(dy.values())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_raw(x.dims().to_vec(), values))
}

/// A scalar loss together with its gradient with respect to the loss input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]` with gradient `softmax - onehot`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<LossGrad> {
    if logits.len() < 2 {
        return Err(Error::contract(
            "softmax_cross_entropy needs at least two logits",
        ));
    }
    if label >= logits.len() {
        return Err(Error::contract(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let top = (0..logits.len())
        .max_by(|&a, &b| logits[a].total_cmp(&logits[b]))
        .expect("at least two logits");
    let max = logits[top];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &z)| (z - max).exp())
        .sum();
    let log_norm = max + rest.ln_1p();
    let loss = (max - logits[label]) + rest.ln_1p();
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - log_norm).exp()).collect();
    grad[label] -= 1.0;
    Ok(LossGrad { loss, grad })
}

/// Foreground/background loss over a `(background, foreground)` logit pair.
pub fn binary_score_loss(logits: [f64; 2], foreground: bool) -> LossGrad {
    softmax_cross_entropy(&logits, usize::from(foreground)).expect("two logits, label in {0,1}")
}

/// Foreground probability of a `(background, foreground)` logit pair.
pub fn foreground_probability(logits: [f64; 2]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

/// Summed Huber loss with unit transition point.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<LossGrad> {
    if pred.len() != target.len() {
        return Err(Error::contract(format!(
            "smooth_l1: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            if d.abs() < 1.0 {
                loss += 0.5 * d * d;
                d
            } else {
                loss += d.abs() - 0.5;
                d.signum()
            }
        })
        .collect();
    Ok(LossGrad { loss, grad })
}

#[derive(Debug, Clone, PartialEq)]
struct Param {
    value: Tensor,
    grad: Tensor,
}

/// Named parameters with one gradient accumulator each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.dims());
        self.entries.insert(name.into(), Param { value, grad });
    }

    /// Glorot-uniform initialisation of an `fan_in × fan_out` weight.
    pub fn insert_glorot<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-s..=s))
            .collect();
        self.insert(name, Tensor::from_raw(vec![fan_in, fan_out], values));
    }

    pub fn insert_zeros(&mut self, name: &str, dims: &[usize]) {
        self.insert(name, Tensor::zeros(dims));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    /// Parameter value; panics on an unknown name (a wiring bug, not a runtime condition).
    pub fn value(&self, name: &str) -> &Tensor {
        &self.entry(name).value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.entry_mut(name).value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.entry(name).grad
    }

    /// Simultaneous access to a parameter and its gradient buffer.
    pub fn split_mut(&mut self, name: &str) -> (&Tensor, &mut Tensor) {
        let p = self.entry_mut(name);
        (&p.value, &mut p.grad)
    }

    pub fn accumulate(&mut self, name: &str, delta: &[f64]) {
        let g = &mut self.entry_mut(name).grad;
        assert_eq!(g.len(), delta.len(), "gradient size mismatch for {name}");
        for (a, &d) in g.values_mut().iter_mut().zip(delta) {
            *a += d;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.values_mut().fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn grads_finite(&self) -> bool {
        self.entries.values().all(|p| p.grad.is_finite())
    }

    /// Euclidean norm of all accumulated gradients taken together.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|p| p.grad.values())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales the gradients so their joint norm is at most `max_norm`.
    /// Returns the norm before rescaling.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in self.entries.values_mut() {
                p.grad.values_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    fn entry(&self, name: &str) -> &Param {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    fn entry_mut(&mut self, name: &str) -> &mut Param {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }
}

/// `p ← p − lr·g` for every parameter, then zero the gradients.
pub fn sgd_step(params: &mut ParamStore, learning_rate: f64) {
    for p in params.entries.values_mut() {
        for (v, g) in p.value.values_mut().iter_mut().zip(p.grad.values()) {
            *v -= learning_rate * g;
        }
        p.grad.values_mut().fill(0.0);
    }
}

/// Relative-error denominators are floored here so that near-zero gradients
/// are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry with its analytic and numeric gradients.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub non_finite: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.non_finite && self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(move |p| p.max_rel_error.is_nan() || p.max_rel_error >= self.tolerance)
    }
}

/// Compares analytic gradients against central differences `(f(p+h) − f(p−h)) / 2h`.
///
/// `loss` must return the loss value and accumulate its gradient into the store
/// it is given. It is called once on a zeroed copy of `params` for the analytic
/// gradient, then twice per scalar parameter entry.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &ParamStore,
    step: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&mut ParamStore) -> f64,
{
    let mut analytic = params.clone();
    analytic.zero_grads();
    let base = loss(&mut analytic);
    let mut non_finite = !base.is_finite() || !analytic.grads_finite();

    let mut scratch = params.clone();
    let mut checks = Vec::with_capacity(params.len());
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        let mut worst = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..params.value(&name).len() {
            let orig = scratch.value(&name).values()[i];
            scratch.value_mut(&name).values_mut()[i] = orig + step;
            let up = loss(&mut scratch);
            scratch.value_mut(&name).values_mut()[i] = orig - step;
            let down = loss(&mut scratch);
            scratch.value_mut(&name).values_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic.grad(&name).values()[i];
            if !numeric.is_finite() {
                non_finite = true;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            if i == 0 || rel > worst.max_rel_error || !rel.is_finite() {
                worst.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        scratch.zero_grads();
        checks.push(worst);
    }
    GradCheckReport {
        params: checks,
        tolerance,
        non_finite,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::vector(vec![v]).unwrap());
        s
    }

    #[test]
    fn linear_identity_and_scalar_cases() {
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_b = Tensor::vector(vec![0.0, 0.0]).unwrap();
        assert_eq!(linear(&x, &eye, &zero_b).unwrap().values(), &[1.0, 2.0]);

        let x = Tensor::vector(vec![1.0, 1.0]).unwrap();
        let w = Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap();
        let b = Tensor::vector(vec![1.0]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().values(), &[6.0]);

        let z = Tensor::zeros(&[3, 2]);
        let b = Tensor::vector(vec![0.5, -1.5]).unwrap();
        let y = linear(&z, &eye, &b).unwrap();
        assert_eq!(y.dims(), &[3, 2]);
        assert!(y.values().chunks(2).all(|r| r == [0.5, -1.5]));
    }

    #[test]
    fn linear_rejects_mismatch() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(linear(&x, &w, &b), Err(Error::Contract(_))));
        let w = Tensor::zeros(&[3, 2]);
        let b = Tensor::zeros(&[3]);
        assert!(matches!(linear(&x, &w, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn linear_backward_matches_hand_computation() {
        let x = Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap();
        let w = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        let dy = Tensor::matrix(1, 1, vec![0.5]).unwrap();
        let g = linear_backward(&x, &w, &dy).unwrap();
        assert_eq!(g.dx.values(), &[1.5, 2.0]);
        assert_eq!(g.dweight.values(), &[0.5, -1.0]);
        assert_eq!(g.dbias.values(), &[0.5]);
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).values(), &[0.0, 0.0, 2.0]);
        let dy = Tensor::vector(vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(relu_backward(&x, &dy).unwrap().values(), &[0.0, 0.0, 1.0]);
        let neg = Tensor::vector(vec![-3.0, -0.1]).unwrap();
        assert!(relu(&neg).values().iter().all(|&v| v == 0.0));
        let pos = Tensor::vector(vec![3.0, 0.1]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = softmax_cross_entropy(&[0.3; 5], 2).unwrap();
        assert!((uniform.loss - 5f64.ln()).abs() < 1e-12);
        assert!((uniform.loss - 1.60944).abs() < 1e-5);

        let logits = [0.1, -2.0, 3.5, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|z| z + 123.0).collect();
        let a = softmax_cross_entropy(&logits, 1).unwrap();
        let b = softmax_cross_entropy(&shifted, 1).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-10);

        // -log(e^10 / (e^10 + 4)) computed independently.
        let peaked = softmax_cross_entropy(&[10.0, 0.0, 0.0, 0.0, 0.0], 0).unwrap();
        let oracle = -(10f64.exp() / (10f64.exp() + 4.0)).ln();
        assert!((peaked.loss - oracle).abs() < 1e-12);
        assert!(peaked.loss < 0.001);

        assert!(softmax_cross_entropy(&[1.0, 2.0], 2).is_err());
        assert!(softmax_cross_entropy(&[1.0], 0).is_err());
    }

    #[test]
    fn binary_loss_cases() {
        let ln2 = 2f64.ln();
        assert!((binary_score_loss([0.7, 0.7], true).loss - ln2).abs() < 1e-12);
        assert!((binary_score_loss([0.7, 0.7], false).loss - ln2).abs() < 1e-12);
        let strong = binary_score_loss([0.0, 30.0], true);
        assert!(strong.loss < 1e-12);
        let a = binary_score_loss([1.0, -1.0], true).loss;
        let b = binary_score_loss([-1.0, 1.0], false).loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_cases() {
        assert_eq!(smooth_l1(&[1.0, -2.0], &[1.0, -2.0]).unwrap().loss, 0.0);
        assert_eq!(smooth_l1(&[0.5], &[0.0]).unwrap().loss, 0.125);
        assert_eq!(smooth_l1(&[2.0], &[0.0]).unwrap().loss, 1.5);
        // Gradient is continuous at the transition point.
        let below = smooth_l1(&[1.0 - 1e-9], &[0.0]).unwrap().grad[0];
        let above = smooth_l1(&[1.0 + 1e-9], &[0.0]).unwrap().grad[0];
        assert!((below - above).abs() < 1e-8);
        assert!(smooth_l1(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sgd_cases() {
        let mut s = scalar_store(1.0);
        s.accumulate("p", &[2.0]);
        sgd_step(&mut s, 0.1);
        assert!((s.value("p").values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.grad("p").values(), &[0.0]);

        let before = s.clone();
        sgd_step(&mut s, 0.1);
        assert_eq!(s, before);
    }

    #[test]
    fn sgd_steps_compose_linearly_for_identical_gradients() {
        let mut twice = scalar_store(1.0);
        for _ in 0..2 {
            twice.accumulate("p", &[0.3]);
            sgd_step(&mut twice, 0.5);
        }
        let mut once = scalar_store(1.0);
        once.accumulate("p", &[0.6]);
        sgd_step(&mut once, 0.5);
        assert!((twice.value("p").values()[0] - once.value("p").values()[0]).abs() < 1e-15);
    }

    #[test]
    fn gradcheck_quadratic_constant_linear() {
        let quad = |s: &mut ParamStore| {
            let p = s.value("p").values()[0];
            s.accumulate("p", &[2.0 * p]);
            p * p
        };
        let r = finite_diff_check(quad, &scalar_store(3.0), 1e-4, 1e-5);
        assert!(r.passed());
        assert!((r.params[0].analytic - 6.0).abs() < 1e-12);
        assert!((r.params[0].numeric - 6.0).abs() < 1e-7);

        let r = finite_diff_check(|_s: &mut ParamStore| 4.2, &scalar_store(3.0), 1e-4, 1e-5);
        assert!(r.passed());
        assert_eq!(r.params[0].numeric, 0.0);

        let c = 2.5;
        let lin = |s: &mut ParamStore| {
            s.accumulate("p", &[c]);
            c * s.value("p").values()[0]
        };
        let r = finite_diff_check(lin, &scalar_store(0.0), 1e-4, 1e-5);
        assert!(r.passed());
        assert_eq!(r.params[0].analytic, c);
        assert!((r.params[0].numeric - c).abs() < 1e-9);
    }

    #[test]
    fn gradcheck_flags_wrong_and_non_finite_gradients() {
        let wrong = |s: &mut ParamStore| {
            let p = s.value("p").values()[0];
            s.accumulate("p", &[p]);
            p * p
        };
        assert!(!finite_diff_check(wrong, &scalar_store(3.0), 1e-4, 1e-5).passed());

        let blowup = |s: &mut ParamStore| {
            let p = s.value("p").values()[0];
            if p > 3.0 {
                f64::NAN
            } else {
                p
            }
        };
        let r = finite_diff_check(blowup, &scalar_store(3.0), 1e-4, 1e-5);
        assert!(r.non_finite);
        assert!(!r.passed());
    }

    #[test]
    fn tensor_rejects_bad_shapes_and_values() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::vector(vec![f64::NAN]).is_err());
    }
}
