//! Reverse-mode differentiation over a linear tape of tensor ops.
//!
//! Every op evaluates eagerly. When gradients are enabled and at least one
//! input is tracked, the op appends a node holding its parents and a
//! backward closure that captures whatever forward values it needs.
//! [`GradTape::backward`] then walks the tape once in reverse.

use std::rc::Rc;

use crate::activation::Activation;
use crate::conv::{self, ConvSpec};
use crate::counter;
use crate::error::{shape_err, Result, TensorError};
use crate::fft;
use crate::pool::{self, PoolKind};
use crate::resize::{ResizeMode, ResizePlan};
use crate::scalar::Real;
use crate::shuffle;
use crate::tensor::{inverse_permutation, ComplexTensor, Tensor};

thread_local! {
    static BRANCHES: std::cell::Cell<Option<u64>> = const { std::cell::Cell::new(None) };
}

/// Folds the discrete choices of non-smooth ops (ReLU side, max-pool
/// winner, sign of an absolute value) into a running hash, when a gradient
/// check has asked for it. Two evaluations with equal hashes lie on the same
/// smooth piece of the function.
fn note_branches(words: impl Iterator<Item = u64>) {
    BRANCHES.with(|b| {
        if let Some(mut h) = b.get() {
            for w in words {
                h = (h ^ w).wrapping_mul(0x0100_0000_01b3);
            }
            b.set(Some(h));
        }
    });
}

fn branches_enabled() -> bool {
    BRANCHES.with(|b| b.get().is_some())
}

fn sign_word<T: Real>(v: T) -> u64 {
    if v > T::ZERO {
        1
    } else if v < T::ZERO {
        2
    } else {
        3
    }
}

/// A value produced on a tape. Cheap to clone.
#[derive(Clone)]
pub struct Var<T> {
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    pub fn id(&self) -> Option<usize> {
        self.id
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(id={:?}, {:?})", self.id, self.value)
    }
}

type Grads<T> = Vec<Option<Tensor<T>>>;
type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Result<Grads<T>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    /// `None` marks a leaf.
    backward: Option<BackwardFn<T>>,
}

pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

/// Gradients of one backward pass, indexed by tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.id
            .and_then(|i| self.grads.get(i))
            .and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros when it did not influence the output.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()).expect("shape of a live tensor"))
    }
}

impl<T: Real> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> GradTape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records nothing; intermediate values are freed as soon as
    /// the last `Var` referring to them is dropped.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A tracked leaf (a learnable tensor or an input to differentiate by).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var<T> {
        if !self.grad_enabled {
            return self.constant(t);
        }
        self.nodes.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            id: Some(self.nodes.len() - 1),
            value: Rc::new(t),
        }
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var<T> {
        Var {
            id: None,
            value: Rc::new(t),
        }
    }

    fn record(
        &mut self,
        value: Tensor<T>,
        parents: &[&Var<T>],
        backward: impl Fn(&Tensor<T>) -> Result<Grads<T>> + 'static,
    ) -> Var<T> {
        let ids: Vec<Option<usize>> = parents.iter().map(|p| p.id).collect();
        if !self.grad_enabled || ids.iter().all(Option::is_none) {
            return self.constant(value);
        }
        self.nodes.push(Node {
            parents: ids,
            backward: Some(Box::new(backward)),
        });
        Var {
            id: Some(self.nodes.len() - 1),
            value: Rc::new(value),
        }
    }

    /// Backpropagates from `output`, seeding its gradient with ones.
    pub fn backward(&self, output: &Var<T>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let Some(root) = output.id else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::ones(output.shape())?);
        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let parent_grads = backward(&gout)?;
            // keep the output gradient of non-leaf nodes for inspection
            grads[id] = Some(gout);
            for (pid, g) in node.parents.iter().zip(parent_grads) {
                if let (Some(pid), Some(g)) = (pid, g) {
                    match &mut grads[*pid] {
                        Some(acc) => acc.add_assign(&g)?,
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = a.value.add(&b.value)?;
        counter::add_elementwise(y.len());
        Ok(self.record(y, &[a, b], |g| Ok(vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = a.value.sub(&b.value)?;
        counter::add_elementwise(y.len());
        Ok(self.record(y, &[a, b], |g| {
            Ok(vec![Some(g.clone()), Some(g.scale(-T::ONE))])
        }))
    }

    pub fn mul(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = a.value.mul(&b.value)?;
        counter::add_elementwise(y.len());
        let (av, bv) = (a.value.clone(), b.value.clone());
        Ok(self.record(y, &[a, b], move |g| {
            Ok(vec![Some(g.mul(&bv)?), Some(g.mul(&av)?)])
        }))
    }

    pub fn scale(&mut self, a: &Var<T>, s: f64) -> Result<Var<T>> {
        let s = T::from_f64(s);
        let y = a.value.scale(s);
        counter::add_elementwise(y.len());
        Ok(self.record(y, &[a], move |g| Ok(vec![Some(g.scale(s))])))
    }

    /// Multiplies `x` by `gate`, where `gate` has `x`'s shape with a trailing
    /// run of axes set to 1 (e.g. a `[N, C, 1, 1]` gate on `[N, C, H, W]`).
    pub fn mul_broadcast(&mut self, x: &Var<T>, gate: &Var<T>) -> Result<Var<T>> {
        let (xs, gs) = (x.shape(), gate.shape());
        let lead = gs.iter().rposition(|&d| d != 1).map_or(0, |p| p + 1);
        if gs.len() != xs.len() || gs[..lead] != xs[..lead] {
            return shape_err(format!("cannot broadcast gate {gs:?} over {xs:?}"));
        }
        let block = x.value.len() / gate.value.len();
        let (xv, gv) = (x.value.clone(), gate.value.clone());
        let y = Tensor::from_fn(xs, |i| xv.data()[i] * gv.data()[i / block])?;
        counter::add_elementwise(y.len());
        Ok(self.record(y, &[x, gate], move |g| {
            let gx = Tensor::from_fn(xv.shape(), |i| g.data()[i] * gv.data()[i / block])?;
            let mut gg = vec![T::ZERO; gv.len()];
            for (i, (&go, &xi)) in g.data().iter().zip(xv.data()).enumerate() {
                gg[i / block] += go * xi;
            }
            Ok(vec![Some(gx), Some(Tensor::new(gv.shape(), gg)?)])
        }))
    }

    pub fn activation(&mut self, x: &Var<T>, kind: Activation) -> Result<Var<T>> {
        let y = kind.forward(&x.value);
        if matches!(kind, Activation::LeakyRelu(_)) && branches_enabled() {
            note_branches(x.value.data().iter().map(|&v| sign_word(v)));
        }
        let xv = x.value.clone();
        let yv = Rc::new(y.clone());
        Ok(self.record(y, &[x], move |g| Ok(vec![Some(kind.backward(&xv, &yv, g))])))
    }

    // ---- convolutions ----

    pub fn conv2d(
        &mut self,
        x: &Var<T>,
        w: &Var<T>,
        b: Option<&Var<T>>,
        spec: ConvSpec,
    ) -> Result<Var<T>> {
        let y = conv::conv2d(&x.value, &w.value, b.map(|b| b.value()), &spec)?;
        let (xv, wv) = (x.value.clone(), w.value.clone());
        let has_bias = b.is_some();
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.record(y, &parents, move |g| {
            let grads = conv::conv2d_backward(&xv, &wv, &spec, g)?;
            let mut out = vec![Some(grads.input), Some(grads.weight)];
            if has_bias {
                out.push(Some(grads.bias));
            }
            Ok(out)
        }))
    }

    /// `1×k×k` 3D convolution on `[N, C, D, H, W]`.
    pub fn conv3d_1xkxk(
        &mut self,
        x: &Var<T>,
        w: &Var<T>,
        b: Option<&Var<T>>,
        spec: ConvSpec,
    ) -> Result<Var<T>> {
        let y = conv::conv3d_1xkxk(&x.value, &w.value, b.map(|b| b.value()), &spec)?;
        let (xv, wv) = (x.value.clone(), w.value.clone());
        let has_bias = b.is_some();
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.record(y, &parents, move |g| {
            let grads = conv::conv3d_1xkxk_backward(&xv, &wv, &spec, g)?;
            let mut out = vec![Some(grads.input), Some(grads.weight)];
            if has_bias {
                out.push(Some(grads.bias));
            }
            Ok(out)
        }))
    }

    // ---- pooling / resampling ----

    pub fn pool2d(
        &mut self,
        x: &Var<T>,
        kind: PoolKind,
        kernel: usize,
        stride: usize,
    ) -> Result<Var<T>> {
        let pooled = pool::pool2d(&x.value, kind, kernel, stride)?;
        note_branches(pooled.selected().iter().map(|&i| i as u64));
        let y = pooled.output.clone();
        Ok(self.record(y, &[x], move |g| Ok(vec![Some(pooled.backward(g)?)])))
    }

    pub fn adaptive_pool2d(
        &mut self,
        x: &Var<T>,
        kind: PoolKind,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var<T>> {
        let pooled = pool::adaptive_pool2d(&x.value, kind, out_h, out_w)?;
        note_branches(pooled.selected().iter().map(|&i| i as u64));
        let y = pooled.output.clone();
        Ok(self.record(y, &[x], move |g| Ok(vec![Some(pooled.backward(g)?)])))
    }

    /// Resizes the trailing two axes to `out_h × out_w`.
    pub fn resize(
        &mut self,
        x: &Var<T>,
        out_h: usize,
        out_w: usize,
        mode: ResizeMode,
    ) -> Result<Var<T>> {
        let (_, h, w) = x.value.trailing_2d()?;
        let plan = ResizePlan::new(h, w, out_h, out_w, mode)?;
        let y = plan.forward(&x.value)?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(y, &[x], move |g| {
            Ok(vec![Some(plan.backward(&in_shape, g)?)])
        }))
    }

    pub fn pixel_shuffle(&mut self, x: &Var<T>, r: usize) -> Result<Var<T>> {
        let y = shuffle::pixel_shuffle(&x.value, r)?;
        Ok(self.record(y, &[x], move |g| {
            Ok(vec![Some(shuffle::pixel_unshuffle(g, r)?)])
        }))
    }

    // ---- layout ----

    pub fn reshape(&mut self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let y = x.value.reshape(shape)?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(y, &[x], move |g| Ok(vec![Some(g.reshape(&in_shape)?)])))
    }

    pub fn permute(&mut self, x: &Var<T>, axes: &[usize]) -> Result<Var<T>> {
        let y = x.value.permute(axes)?;
        let inv = inverse_permutation(axes);
        Ok(self.record(y, &[x], move |g| Ok(vec![Some(g.permute(&inv)?)])))
    }

    pub fn narrow(&mut self, x: &Var<T>, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let y = x.value.narrow(axis, start, len)?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(y, &[x], move |g| {
            let extent = in_shape[axis];
            let mut parts = Vec::new();
            let mut shape = in_shape.clone();
            if start > 0 {
                shape[axis] = start;
                parts.push(Tensor::zeros(&shape)?);
            }
            parts.push(g.clone());
            if start + len < extent {
                shape[axis] = extent - start - len;
                parts.push(Tensor::zeros(&shape)?);
            }
            let refs: Vec<&Tensor<T>> = parts.iter().collect();
            Ok(vec![Some(Tensor::concat(&refs, axis)?)])
        }))
    }

    pub fn concat(&mut self, parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let y = Tensor::concat(&values, axis)?;
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Ok(self.record(y, parts, move |g| {
            let mut start = 0;
            extents
                .iter()
                .map(|&e| {
                    let piece = g.narrow(axis, start, e)?;
                    start += e;
                    Ok(Some(piece))
                })
                .collect()
        }))
    }

    // ---- reductions / losses ----

    pub fn sum(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let y = Tensor::scalar(x.value.sum());
        let shape = x.shape().to_vec();
        Ok(self.record(y, &[x], move |g| {
            Ok(vec![Some(Tensor::full(&shape, g.item())?)])
        }))
    }

    pub fn mean(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let y = Tensor::scalar(x.value.mean());
        let shape = x.shape().to_vec();
        let n = T::from_f64(x.value.len() as f64);
        Ok(self.record(y, &[x], move |g| {
            Ok(vec![Some(Tensor::full(&shape, g.item() / n)?)])
        }))
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let d = a.value.sub(&b.value)?;
        if branches_enabled() {
            note_branches(d.data().iter().map(|&v| sign_word(v)));
        }
        let n = T::from_f64(d.len() as f64);
        let y = Tensor::scalar(d.map(T::abs).sum() / n);
        Ok(self.record(y, &[a, b], move |g| {
            let s = g.item() / n;
            let ga = d.map(|v| {
                if v > T::ZERO {
                    s
                } else if v < T::ZERO {
                    -s
                } else {
                    T::ZERO
                }
            });
            let gb = ga.scale(-T::ONE);
            Ok(vec![Some(ga), Some(gb)])
        }))
    }

    /// Charbonnier penalty on the spectral difference:
    /// `mean_bins sqrt(|DFT(a) − DFT(b)|² + eps²)`, DFT over the trailing two
    /// axes of every leading slice.
    pub fn spectral_charbonnier(&mut self, a: &Var<T>, b: &Var<T>, eps: f64) -> Result<Var<T>> {
        let diff = a.value.sub(&b.value)?;
        let spec = fft::fft2d(&diff)?;
        let eps2 = T::from_f64(eps * eps);
        let n = T::from_f64(diff.len() as f64);
        let mag = spec
            .real
            .zip_map(&spec.imag, |re, im| (re * re + im * im + eps2).sqrt())?;
        let y = Tensor::scalar(mag.sum() / n);
        Ok(self.record(y, &[a, b], move |g| {
            // d/dx of Σ|X_k| is Re(IDFT(X/|X|)) for real x
            let s = g.item() / n;
            let gre = spec.real.zip_map(&mag, |r, m| r / m * s)?;
            let gim = spec.imag.zip_map(&mag, |i, m| i / m * s)?;
            let back = fft::dft2d(&ComplexTensor::new(gre, gim)?, true)?;
            let ga = back.real;
            let gb = ga.scale(-T::ONE);
            Ok(vec![Some(ga), Some(gb)])
        }))
    }
}

/// Result of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index, analytic, numeric)` of the worst component.
    pub worst: (usize, usize, f64, f64),
    pub components: usize,
    /// Components whose `±ε` probes crossed a kink and were re-measured with
    /// a one-sided difference or a smaller step.
    pub refined: usize,
    /// Components left unchecked because the point itself sits on a kink.
    pub on_kink: usize,
}

/// Compares tape gradients of the scalar function `f` at `point` with
/// fourth-order central differences
/// `(8(f(x+ε) − f(x−ε)) − (f(x+2ε) − f(x−2ε))) / 12ε`, component by component.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradcheck<F>(f: F, point: &[Tensor<f64>], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut GradTape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    gradcheck_with_floor(f, point, eps, 1e-8)
}

/// Number of times the step is divided by ten when a probe lands on a
/// different smooth piece than the base point.
const REFINEMENTS: i32 = 3;

/// [`gradcheck`] with an explicit denominator floor. Deep compositions need
/// a floor above the finite-difference noise level `~ |f|·1e-16 / eps`,
/// otherwise components whose true gradient is near zero report noise.
///
/// Piecewise-smooth functions (LeakyReLU, max pooling, L1) are handled by
/// tracking which branch every non-smooth op takes. When a probe lands on a
/// different branch than the base point, the component is measured with a
/// third-order one-sided difference on the side that stays on the base
/// branch, shrinking the step if neither side does.
pub fn gradcheck_with_floor<F>(
    f: F,
    point: &[Tensor<f64>],
    eps: f64,
    floor: f64,
) -> Result<GradcheckReport>
where
    F: Fn(&mut GradTape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut tape = GradTape::inference();
        let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let saved = BRANCHES.with(|b| b.replace(Some(0xcbf2_9ce4_8422_2325)));
        let out = f(&mut tape, &vars);
        let branch = BRANCHES.with(|b| b.replace(saved)).unwrap_or(0);
        let out = out?;
        if out.value().len() != 1 {
            return Err(TensorError::Evaluation(format!(
                "gradcheck needs a scalar function, got shape {:?}",
                out.shape()
            )));
        }
        let v = out.value().item();
        if !v.is_finite() {
            return Err(TensorError::Evaluation(format!(
                "function value {v} is not finite"
            )));
        }
        Ok((v, branch))
    };
    let (f0, base) = eval(point)?;

    let mut tape = GradTape::new();
    let vars: Vec<Var<f64>> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(&out)?;

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (0, 0, 0.0, 0.0),
        components: 0,
        refined: 0,
        on_kink: 0,
    };
    let mut inputs = point.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var);
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            let mut probe = |step: f64| -> Result<(f64, u64)> {
                inputs[k].data_mut()[i] = orig + step;
                let r = eval(&inputs);
                inputs[k].data_mut()[i] = orig;
                r
            };
            let mut numeric = None;
            let mut last = None;
            for attempt in 0..=REFINEMENTS {
                let e = eps / 10f64.powi(attempt);
                let (plus, bp) = probe(e)?;
                let (minus, bm) = probe(-e)?;
                let mut central = false;
                if bp == base && bm == base {
                    let (plus2, b2p) = probe(2.0 * e)?;
                    let (minus2, b2m) = probe(-2.0 * e)?;
                    if b2p == base && b2m == base {
                        numeric = Some((8.0 * (plus - minus) - (plus2 - minus2)) / (12.0 * e));
                        central = true;
                    }
                }
                if numeric.is_none() {
                    for (side, f1, b1) in [(1.0, plus, bp), (-1.0, minus, bm)] {
                        if b1 != base {
                            continue;
                        }
                        let (f2, f3) = (probe(2.0 * side * e)?, probe(3.0 * side * e)?);
                        if f2.1 == base && f3.1 == base {
                            let d = (18.0 * f1 - 11.0 * f0 - 9.0 * f2.0 + 2.0 * f3.0) / (6.0 * e);
                            numeric = Some(side * d);
                            break;
                        }
                    }
                }
                if numeric.is_some() {
                    if attempt > 0 || !central {
                        report.refined += 1;
                    }
                    break;
                }
                last = Some((e, plus, bp, minus, bm));
            }
            if numeric.is_none() {
                let (e, plus, bp, minus, bm) = last.expect("at least one attempt");
                numeric = if bp == base {
                    Some((plus - f0) / e)
                } else if bm == base {
                    Some((f0 - minus) / e)
                } else {
                    None
                };
                match numeric {
                    Some(_) => report.refined += 1,
                    None => {
                        report.on_kink += 1;
                        continue;
                    }
                }
            }
            let numeric = numeric.expect("set above");
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.components += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (k, i, a, numeric);
            }
        }
    }
    Ok(report)
}
