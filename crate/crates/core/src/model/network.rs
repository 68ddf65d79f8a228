use crate::error::{Error, Result};
use crate::loss::{per_sample_loss, pinball_subgrad, QuantileGrid};
use crate::numerics::{Matrix, RngState};

/// Weights of the single-hidden-layer ReLU network.
///
/// `w1` is `d x H` and `w2` is `H x K`; the forward pass computes
/// `h = ReLU(w1ᵀx + b1)` and `out = w2ᵀh + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Total trainable parameters of a `d -> H -> K` network.
pub fn param_count(d: usize, hidden: usize, outputs: usize) -> usize {
    d * hidden + hidden + hidden * outputs + outputs
}

impl NetworkParams {
    pub fn zeros(d: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            w1: Matrix::zeros(d, hidden),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, outputs),
            b2: vec![0.0; outputs],
        }
    }

    /// He-uniform weights (`±sqrt(6 / fan_in)`), zero biases.
    pub fn init(d: usize, hidden: usize, outputs: usize, rng: &mut RngState) -> Result<Self> {
        if d == 0 || hidden == 0 || outputs == 0 {
            return Err(Error::invalid(format!(
                "network dimensions must be positive (d={d}, H={hidden}, K={outputs})"
            )));
        }
        let mut p = Self::zeros(d, hidden, outputs);
        let b1 = (6.0 / d as f64).sqrt();
        for w in p.w1.as_mut_slice() {
            *w = (2.0 * rng.next_f64() - 1.0) * b1;
        }
        let b2 = (6.0 / hidden as f64).sqrt();
        for w in p.w2.as_mut_slice() {
            *w = (2.0 * rng.next_f64() - 1.0) * b2;
        }
        Ok(p)
    }

    /// Builds parameters from explicit blocks, checking that the shapes agree.
    pub fn from_parts(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>) -> Result<Self> {
        if w1.cols() != b1.len() || w2.rows() != b1.len() || w2.cols() != b2.len() {
            return Err(Error::shape(format!(
                "inconsistent blocks: W1 {}x{}, b1 {}, W2 {}x{}, b2 {}",
                w1.rows(),
                w1.cols(),
                b1.len(),
                w2.rows(),
                w2.cols(),
                b2.len()
            )));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn outputs(&self) -> usize {
        self.b2.len()
    }

    pub fn param_count(&self) -> usize {
        param_count(self.input_dim(), self.hidden(), self.outputs())
    }

    pub fn is_finite(&self) -> bool {
        self.buffers()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn buffers(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub(crate) fn buffers_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub(crate) fn fill(&mut self, v: f64) {
        for b in self.buffers_mut() {
            b.fill(v);
        }
    }

    pub(crate) fn scale(&mut self, c: f64) {
        for b in self.buffers_mut() {
            b.iter_mut().for_each(|x| *x *= c);
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// `w1ᵀx + b1`.
    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.pre_activation_unchecked(x))
    }

    pub(crate) fn pre_activation_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (zj, &w) in z.iter_mut().zip(self.w1.row(i)) {
                *zj += xi * w;
            }
        }
        z
    }

    /// Single output head from a hidden activation vector. Uses the same
    /// summation order as [`NetworkParams::outputs_from_hidden`], so the two
    /// agree bit-for-bit.
    #[inline]
    pub(crate) fn head(&self, hidden: &[f64], k: usize) -> f64 {
        let cols = self.outputs();
        let w2 = self.w2.as_slice();
        let mut s = self.b2[k];
        for (j, &h) in hidden.iter().enumerate() {
            s += h * w2[j * cols + k];
        }
        s
    }

    pub(crate) fn outputs_from_hidden(&self, hidden: &[f64]) -> Vec<f64> {
        let mut out = self.b2.clone();
        for (j, &h) in hidden.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.w2.row(j)) {
                *o += h * w;
            }
        }
        out
    }

    /// Hidden activations after ReLU and, if a mask is given, inverted dropout
    /// `(h ⊙ mask) / (1 − p)`.
    pub(crate) fn hidden_from_pre(
        pre: &[f64],
        mask: Option<&[f64]>,
        dropout_rate: f64,
    ) -> Vec<f64> {
        match mask {
            None => pre.iter().map(|&z| relu(z)).collect(),
            Some(m) => pre
                .iter()
                .zip(m)
                .map(|(&z, &mk)| relu(z) * mk / (1.0 - dropout_rate))
                .collect(),
        }
    }

    /// One forward pass; `mask` switches dropout on for this pass.
    pub fn forward(&self, x: &[f64], mask: Option<&[f64]>, dropout_rate: f64) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if let Some(m) = mask {
            if m.len() != self.hidden() {
                return Err(Error::shape(format!(
                    "dropout mask has {} entries, hidden layer has {}",
                    m.len(),
                    self.hidden()
                )));
            }
        }
        let pre = self.pre_activation_unchecked(x);
        let hidden = Self::hidden_from_pre(&pre, mask, dropout_rate);
        Ok(self.outputs_from_hidden(&hidden))
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Per-sample training objective attached to the output layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Mean tilted loss over the quantile grid, one head per level.
    Composite(QuantileGrid),
    /// Absolute error on a single head; subgradient 0 at a zero residual.
    AbsoluteError,
}

impl Objective {
    pub fn outputs(&self) -> usize {
        match self {
            Objective::Composite(g) => g.len(),
            Objective::AbsoluteError => 1,
        }
    }

    /// Loss for one sample, writing `∂loss/∂out` into `grad`.
    pub(crate) fn loss_and_grad(&self, y: f64, out: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Objective::Composite(grid) => {
                let k = grid.len() as f64;
                for ((g, &o), &tau) in grad.iter_mut().zip(out).zip(grid.taus()) {
                    *g = -pinball_subgrad(y - o, tau) / k;
                }
                per_sample_loss(y, out, grid.taus())
            }
            Objective::AbsoluteError => {
                let r = y - out[0];
                grad[0] = if r > 0.0 {
                    -1.0
                } else if r < 0.0 {
                    1.0
                } else {
                    0.0
                };
                r.abs()
            }
        }
    }

    pub fn loss(&self, y: f64, out: &[f64]) -> f64 {
        let mut g = vec![0.0; out.len()];
        self.loss_and_grad(y, out, &mut g)
    }
}

/// Gradient of one sample's loss with respect to every parameter.
pub fn backprop(
    params: &NetworkParams,
    x: &[f64],
    mask: Option<&[f64]>,
    dropout_rate: f64,
    y: f64,
    objective: &Objective,
) -> Result<NetworkParams> {
    params.check_input(x)?;
    if objective.outputs() != params.outputs() {
        return Err(Error::shape(format!(
            "objective expects {} outputs, network has {}",
            objective.outputs(),
            params.outputs()
        )));
    }
    if mask.is_some_and(|m| m.len() != params.hidden()) {
        return Err(Error::shape(
            "dropout mask length differs from hidden width",
        ));
    }
    let mut grads = NetworkParams::zeros(params.input_dim(), params.hidden(), params.outputs());
    let mut scratch = Scratch::new(params);
    accumulate_gradients(
        params,
        x,
        mask,
        dropout_rate,
        y,
        objective,
        &mut grads,
        &mut scratch,
    );
    Ok(grads)
}

pub(crate) struct Scratch {
    out_grad: Vec<f64>,
    hidden_grad: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(params: &NetworkParams) -> Self {
        Self {
            out_grad: vec![0.0; params.outputs()],
            hidden_grad: vec![0.0; params.hidden()],
        }
    }
}

/// Adds one sample's gradient into `grads` and returns its loss.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_gradients(
    params: &NetworkParams,
    x: &[f64],
    mask: Option<&[f64]>,
    dropout_rate: f64,
    y: f64,
    objective: &Objective,
    grads: &mut NetworkParams,
    scratch: &mut Scratch,
) -> f64 {
    let pre = params.pre_activation_unchecked(x);
    let hidden = NetworkParams::hidden_from_pre(&pre, mask, dropout_rate);
    let out = params.outputs_from_hidden(&hidden);
    let loss = objective.loss_and_grad(y, &out, &mut scratch.out_grad);

    let k = params.outputs();
    for (g, &d) in grads.b2.iter_mut().zip(&scratch.out_grad) {
        *g += d;
    }
    {
        let gw2 = grads.w2.as_mut_slice();
        let w2 = params.w2.as_slice();
        for (j, &h) in hidden.iter().enumerate() {
            let mut back = 0.0;
            for (c, &d) in scratch.out_grad.iter().enumerate() {
                gw2[j * k + c] += h * d;
                back += w2[j * k + c] * d;
            }
            scratch.hidden_grad[j] = back;
        }
    }
    // through dropout scaling and ReLU
    for (j, hg) in scratch.hidden_grad.iter_mut().enumerate() {
        let active = pre[j] > 0.0;
        let keep = match mask {
            Some(m) => m[j] / (1.0 - dropout_rate),
            None => 1.0,
        };
        *hg = if active { *hg * keep } else { 0.0 };
    }
    for (g, &d) in grads.b1.iter_mut().zip(&scratch.hidden_grad) {
        *g += d;
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (g, &d) in grads.w1.row_mut(i).iter_mut().zip(&scratch.hidden_grad) {
            *g += xi * d;
        }
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(rng: &mut RngState, d: usize, h: usize, k: usize) -> NetworkParams {
        NetworkParams::from_parts(
            Matrix::from_vec(d, h, rng.normal(d * h)).unwrap(),
            rng.normal(h),
            Matrix::from_vec(h, k, rng.normal(h * k)).unwrap(),
            rng.normal(k),
        )
        .unwrap()
    }

    #[test]
    fn paper_scale_parameter_count() {
        assert_eq!(param_count(1, 32, 101), 32 + 32 + 3232 + 101);
        assert_eq!(param_count(39_573, 32, 101), 1_269_701);
    }

    #[test]
    fn init_bounds_and_determinism() {
        let a = NetworkParams::init(10, 32, 101, &mut RngState::new(1)).unwrap();
        let b = NetworkParams::init(10, 32, 101, &mut RngState::new(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.b1.iter().chain(&a.b2).all(|&v| v == 0.0));
        let bound = (6.0f64 / 10.0).sqrt();
        assert!(a.w1.as_slice().iter().all(|w| w.abs() <= bound));
        let bound2 = (6.0f64 / 32.0).sqrt();
        assert!(a.w2.as_slice().iter().all(|w| w.abs() <= bound2));
        assert!(NetworkParams::init(0, 3, 3, &mut RngState::new(1)).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = NetworkParams::zeros(3, 4, 5);
        assert_eq!(
            p.forward(&[1.0, 2.0, 3.0], None, 0.0).unwrap(),
            vec![0.0; 5]
        );
    }

    #[test]
    fn hand_example() {
        let p = NetworkParams::from_parts(
            Matrix::from_rows(&[[2.0]]).unwrap(),
            vec![1.0],
            Matrix::from_rows(&[[1.0, -1.0]]).unwrap(),
            vec![0.5, 0.25],
        )
        .unwrap();
        assert_eq!(p.forward(&[0.5], None, 0.0).unwrap(), vec![2.5, -1.75]);
    }

    #[test]
    fn all_ones_mask_without_dropout_is_identity() {
        let mut rng = RngState::new(2);
        let p = random_params(&mut rng, 4, 6, 3);
        let x = rng.normal(4);
        let plain = p.forward(&x, None, 0.0).unwrap();
        let masked = p.forward(&x, Some(&[1.0; 6]), 0.0).unwrap();
        assert_eq!(plain, masked);
    }

    #[test]
    fn single_head_matches_full_forward() {
        let mut rng = RngState::new(3);
        let p = random_params(&mut rng, 4, 6, 7);
        let x = rng.normal(4);
        let hidden = NetworkParams::hidden_from_pre(&p.pre_activation(&x).unwrap(), None, 0.0);
        let all = p.outputs_from_hidden(&hidden);
        for (k, v) in all.iter().enumerate() {
            assert_eq!(p.head(&hidden, k).to_bits(), v.to_bits());
        }
    }

    #[test]
    fn mask_length_checked() {
        let p = NetworkParams::zeros(2, 3, 1);
        assert!(p.forward(&[0.0, 0.0], Some(&[1.0, 1.0]), 0.2).is_err());
        assert!(p.forward(&[0.0], None, 0.2).is_err());
    }

    fn loss_of(
        p: &NetworkParams,
        x: &[f64],
        mask: Option<&[f64]>,
        rate: f64,
        y: f64,
        obj: &Objective,
    ) -> f64 {
        obj.loss(y, &p.forward(x, mask, rate).unwrap())
    }

    fn near_kink(p: &NetworkParams, x: &[f64], mask: Option<&[f64]>, rate: f64, y: f64) -> bool {
        let pre = p.pre_activation(x).unwrap();
        let out = p.forward(x, mask, rate).unwrap();
        pre.iter().any(|z| z.abs() < 1e-4) || out.iter().any(|o| (y - o).abs() < 1e-4)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let grid = QuantileGrid::equally_spaced(5).unwrap();
        let obj = Objective::Composite(grid);
        let mut rng = RngState::new(31);
        let mut checked = 0;
        while checked < 10 {
            let p = random_params(&mut rng, 3, 4, 5);
            let x = rng.normal(3);
            let y = rng.normal(1)[0];
            let mask = [1.0, 0.0, 1.0, 1.0];
            if near_kink(&p, &x, Some(&mask), 0.2, y) {
                continue;
            }
            checked += 1;
            let g = backprop(&p, &x, Some(&mask), 0.2, y, &obj).unwrap();
            let h = 1e-6;
            for b in 0..4 {
                for i in 0..p.buffers()[b].len() {
                    let mut plus = p.clone();
                    plus.buffers_mut()[b][i] += h;
                    let mut minus = p.clone();
                    minus.buffers_mut()[b][i] -= h;
                    let fd = (loss_of(&plus, &x, Some(&mask), 0.2, y, &obj)
                        - loss_of(&minus, &x, Some(&mask), 0.2, y, &obj))
                        / (2.0 * h);
                    let an = g.buffers()[b][i];
                    let denom = an.abs().max(fd.abs());
                    if denom > 0.0 {
                        assert!(
                            (an - fd).abs() / denom < 1e-6,
                            "block {b} idx {i}: {an} vs {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn dropped_unit_gets_zero_gradient() {
        let obj = Objective::Composite(QuantileGrid::equally_spaced(5).unwrap());
        let mut rng = RngState::new(8);
        let p = random_params(&mut rng, 3, 4, 5);
        let x = rng.normal(3);
        let g = backprop(&p, &x, Some(&[1.0, 0.0, 1.0, 1.0]), 0.2, 0.3, &obj).unwrap();
        for i in 0..3 {
            assert_eq!(g.w1.get(i, 1), 0.0);
        }
        assert_eq!(g.b1[1], 0.0);
        assert!(g.w2.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_sample_doubles_gradient() {
        let obj = Objective::Composite(QuantileGrid::equally_spaced(3).unwrap());
        let mut rng = RngState::new(9);
        let p = random_params(&mut rng, 2, 3, 3);
        let x = rng.normal(2);
        let single = backprop(&p, &x, None, 0.0, 0.7, &obj).unwrap();
        let mut twice = NetworkParams::zeros(2, 3, 3);
        let mut s = Scratch::new(&p);
        accumulate_gradients(&p, &x, None, 0.0, 0.7, &obj, &mut twice, &mut s);
        accumulate_gradients(&p, &x, None, 0.0, 0.7, &obj, &mut twice, &mut s);
        for b in 0..4 {
            for (a, c) in single.buffers()[b].iter().zip(twice.buffers()[b]) {
                assert_eq!(2.0 * a, *c);
            }
        }
    }

    #[test]
    fn absolute_error_gradient_matches_finite_differences() {
        let obj = Objective::AbsoluteError;
        let mut rng = RngState::new(12);
        let p = random_params(&mut rng, 3, 4, 1);
        let x = rng.normal(3);
        let y = 5.0;
        assert!(!near_kink(&p, &x, None, 0.0, y));
        let g = backprop(&p, &x, None, 0.0, y, &obj).unwrap();
        let h = 1e-6;
        for b in 0..4 {
            for i in 0..p.buffers()[b].len() {
                let mut plus = p.clone();
                plus.buffers_mut()[b][i] += h;
                let mut minus = p.clone();
                minus.buffers_mut()[b][i] -= h;
                let fd = (loss_of(&plus, &x, None, 0.0, y, &obj)
                    - loss_of(&minus, &x, None, 0.0, y, &obj))
                    / (2.0 * h);
                let an = g.buffers()[b][i];
                let denom = an.abs().max(fd.abs());
                if denom > 0.0 {
                    assert!((an - fd).abs() / denom < 1e-6);
                }
            }
        }
    }
}
