//! The three differentiable building blocks the encoders need. Each forward
//! function returns its output together with a tape holding what the
//! matching pullback needs.

use serde::{Deserialize, Serialize};

use super::tensor::{mat_vec, outer_acc, vec_mat, vec_mat_acc, Tensor};
use super::KernelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => f64::from(u8::from(y > 0.0)),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone)]
pub struct DenseTape {
    input: Tensor,
    weight: Tensor,
    output: Tensor,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `act(input · weight + bias)` for an `n×a` input and `a×b` weight.
pub fn dense(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<(Tensor, DenseTape), KernelError> {
    if input.shape().len() != 2 || weight.shape().len() != 2 || input.cols() != weight.rows() {
        return Err(KernelError::ShapeMismatch(format!(
            "dense: input {:?} x weight {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    let (n, b) = (input.rows(), weight.cols());
    bias.expect_shape(&[b], "dense bias")?;
    let mut out = Vec::with_capacity(n * b);
    for i in 0..n {
        let mut row = bias.data().to_vec();
        vec_mat_acc(input.row(i), weight, &mut row);
        out.extend(row.into_iter().map(|z| activation.apply(z)));
    }
    let output = Tensor::matrix(n, b, out)?;
    Ok((
        output.clone(),
        DenseTape {
            input: input.clone(),
            weight: weight.clone(),
            output,
            activation,
        },
    ))
}

impl DenseTape {
    pub fn pullback(&self, grad_out: &Tensor) -> Result<DenseGrads, KernelError> {
        grad_out.expect_shape(self.output.shape(), "dense upstream gradient")?;
        let (n, a, b) = (self.input.rows(), self.weight.rows(), self.weight.cols());
        let mut d_input = Tensor::zeros(&[n, a]);
        let mut d_weight = Tensor::zeros(&[a, b]);
        let mut d_bias = Tensor::zeros(&[b]);
        for i in 0..n {
            let dz: Vec<f64> = grad_out
                .row(i)
                .iter()
                .zip(self.output.row(i))
                .map(|(g, y)| g * self.activation.grad_from_output(*y))
                .collect();
            d_input.row_mut(i).copy_from_slice(&mat_vec(&self.weight, &dz));
            outer_acc(&mut d_weight, self.input.row(i), &dz);
            for (db, d) in d_bias.data_mut().iter_mut().zip(&dz) {
                *db += d;
            }
        }
        Ok(DenseGrads {
            input: d_input,
            weight: d_weight,
            bias: d_bias,
        })
    }
}

/// Borrowed LSTM parameters with gate blocks ordered input, forget,
/// candidate, output along the `4·d_h` axis.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    /// `d_in × 4d_h`
    pub w_x: &'a Tensor,
    /// `d_h × 4d_h`
    pub w_h: &'a Tensor,
    /// `4d_h`
    pub b: &'a Tensor,
}

impl LstmWeights<'_> {
    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }

    pub fn input(&self) -> usize {
        self.w_x.rows()
    }

    fn check(&self) -> Result<(), KernelError> {
        let h = self.hidden();
        self.w_h.expect_shape(&[h, 4 * h], "lstm w_h")?;
        if self.w_x.shape().len() != 2 || self.w_x.cols() != 4 * h {
            return Err(KernelError::ShapeMismatch(format!(
                "lstm w_x: expected [_, {}], got {:?}",
                4 * h,
                self.w_x.shape()
            )));
        }
        self.b.expect_shape(&[4 * h], "lstm bias")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(d_h: usize) -> Self {
        LstmState {
            h: vec![0.0; d_h],
            c: vec![0.0; d_h],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmStepTape {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Gradients of one step: inputs and previous state, plus parameter grads.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepGrads {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub params: LstmGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

impl LstmGrads {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        LstmGrads {
            w_x: Tensor::zeros(&[d_in, 4 * d_h]),
            w_h: Tensor::zeros(&[d_h, 4 * d_h]),
            b: Tensor::zeros(&[4 * d_h]),
        }
    }
}

pub fn lstm_step(
    x: &[f64],
    state: &LstmState,
    p: LstmWeights<'_>,
) -> Result<(LstmState, LstmStepTape), KernelError> {
    p.check()?;
    let h = p.hidden();
    if x.len() != p.input() || state.h.len() != h || state.c.len() != h {
        return Err(KernelError::ShapeMismatch(format!(
            "lstm step: x {} (want {}), h {}, c {} (want {h})",
            x.len(),
            p.input(),
            state.h.len(),
            state.c.len()
        )));
    }
    let mut z = p.b.data().to_vec();
    vec_mat_acc(x, p.w_x, &mut z);
    vec_mat_acc(&state.h, p.w_h, &mut z);

    let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
    let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..h).map(|j| f[j] * state.c[j] + i[j] * g[j]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = (0..h).map(|j| o[j] * tanh_c[j]).collect();

    Ok((
        LstmState { h: h_new, c },
        LstmStepTape {
            x: x.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            i,
            f,
            g,
            o,
            tanh_c,
        },
    ))
}

impl LstmStepTape {
    /// Backpropagate `(∂/∂h, ∂/∂c)` of the new state through the step,
    /// accumulating parameter gradients into `acc`. Returns gradients for
    /// `x`, `h_prev` and `c_prev`.
    pub fn pullback_into(
        &self,
        p: LstmWeights<'_>,
        dh: &[f64],
        dc: &[f64],
        acc: &mut LstmGrads,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.i.len();
        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let dct = dc[j] + dh[j] * self.o[j] * (1.0 - self.tanh_c[j] * self.tanh_c[j]);
            let d_o = dh[j] * self.tanh_c[j];
            let d_i = dct * self.g[j];
            let d_g = dct * self.i[j];
            let d_f = dct * self.c_prev[j];
            dc_prev[j] = dct * self.f[j];
            dz[j] = d_i * self.i[j] * (1.0 - self.i[j]);
            dz[h + j] = d_f * self.f[j] * (1.0 - self.f[j]);
            dz[2 * h + j] = d_g * (1.0 - self.g[j] * self.g[j]);
            dz[3 * h + j] = d_o * self.o[j] * (1.0 - self.o[j]);
        }
        let dx = mat_vec(p.w_x, &dz);
        let dh_prev = mat_vec(p.w_h, &dz);
        outer_acc(&mut acc.w_x, &self.x, &dz);
        outer_acc(&mut acc.w_h, &self.h_prev, &dz);
        for (b, d) in acc.b.data_mut().iter_mut().zip(&dz) {
            *b += d;
        }
        (dx, dh_prev, dc_prev)
    }

    pub fn pullback(&self, p: LstmWeights<'_>, dh: &[f64], dc: &[f64]) -> LstmStepGrads {
        let mut params = LstmGrads::zeros(p.input(), p.hidden());
        let (x, h_prev, c_prev) = self.pullback_into(p, dh, dc, &mut params);
        LstmStepGrads {
            x,
            h_prev,
            c_prev,
            params,
        }
    }
}

/// Global bank of `K` candidate explanation vectors (`K × d_x`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Tensor,
}

impl Dictionary {
    pub fn new(atoms: Tensor) -> Result<Self, KernelError> {
        if atoms.shape().len() != 2 || atoms.rows() == 0 {
            return Err(KernelError::ShapeMismatch(format!(
                "dictionary must be K x d_x with K >= 1, got {:?}",
                atoms.shape()
            )));
        }
        if !atoms.is_finite() {
            return Err(KernelError::NonFinite("dictionary atoms".into()));
        }
        Ok(Dictionary { atoms })
    }

    pub fn size(&self) -> usize {
        self.atoms.rows()
    }

    pub fn dim(&self) -> usize {
        self.atoms.cols()
    }

    pub fn atoms(&self) -> &Tensor {
        &self.atoms
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        self.atoms.row(k)
    }

    /// `Σ_k α_k · atom_k`.
    pub fn mix(&self, alpha: &[f64]) -> Vec<f64> {
        vec_mat(alpha, &self.atoms)
    }
}

#[derive(Debug, Clone)]
pub struct AttentionTape {
    h: Vec<f64>,
    alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub h: Vec<f64>,
    pub w_att: Tensor,
    pub atoms: Tensor,
}

/// Soft attention over the dictionary: `α = softmax(h · W_att)`,
/// `θ = Σ_k α_k D_k`. Returns `(θ, α, tape)`.
pub fn attention_combine(
    h: &[f64],
    w_att: &Tensor,
    dict: &Dictionary,
) -> Result<(Vec<f64>, Vec<f64>, AttentionTape), KernelError> {
    w_att.expect_shape(&[h.len(), dict.size()], "attention weights")?;
    let alpha = softmax(&vec_mat(h, w_att));
    let theta = dict.mix(&alpha);
    Ok((
        theta,
        alpha.clone(),
        AttentionTape {
            h: h.to_vec(),
            alpha,
        },
    ))
}

impl AttentionTape {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Accumulating pullback; returns `∂/∂h`.
    pub fn pullback_into(
        &self,
        w_att: &Tensor,
        dict: &Dictionary,
        d_theta: &[f64],
        d_w_att: &mut Tensor,
        d_atoms: &mut Tensor,
    ) -> Vec<f64> {
        let d_alpha = mat_vec(dict.atoms(), d_theta);
        let mean: f64 = self.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        let d_logits: Vec<f64> = self
            .alpha
            .iter()
            .zip(&d_alpha)
            .map(|(a, d)| a * (d - mean))
            .collect();
        outer_acc(d_w_att, &self.h, &d_logits);
        outer_acc(d_atoms, &self.alpha, d_theta);
        mat_vec(w_att, &d_logits)
    }

    pub fn pullback(&self, w_att: &Tensor, dict: &Dictionary, d_theta: &[f64]) -> AttentionGrads {
        let mut w = Tensor::zeros(w_att.shape());
        let mut atoms = Tensor::zeros(dict.atoms().shape());
        let h = self.pullback_into(w_att, dict, d_theta, &mut w, &mut atoms);
        AttentionGrads { h, w_att: w, atoms }
    }
}
