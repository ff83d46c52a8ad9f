//! Forward and backward passes for the gradient-trained families.
//!
//! Static context goes through a one-layer tanh MLP whose output is fed to
//! every step of the output LSTM. Series context goes through an input LSTM
//! whose final hidden state is fed to every step of the output LSTM. The
//! output LSTM runs for `m` steps and `h^t` drives interval `t`, either
//! through dictionary attention (CEN) or a per-interval linear map (neural
//! CRF). The plain CRF has no encoder.

use rand::Rng;

use super::{names, Family, ModelError, ModelSpec};
use crate::kernel::{
    attention_combine, dense, lstm_step, Activation, AttentionTape, DenseTape, Dictionary,
    LstmGrads, LstmState, LstmStepTape, LstmWeights, ParamStore, Tensor,
};
use crate::likelihood::{Chain, ExplanationSet, PairwisePotentials};
use crate::survival::{Context, ContextKind, PatientRecord};

pub(crate) fn init_params<R: Rng>(
    spec: &ModelSpec,
    m: usize,
    d_x: usize,
    d_c: usize,
    rng: &mut R,
) -> Result<ParamStore, ModelError> {
    let mut s = ParamStore::new();
    let h = spec.lstm_hidden;
    match spec.family {
        Family::Crf => s.insert(names::CRF_THETA, Tensor::zeros(&[m, d_x]))?,
        f if f.is_neural() => {
            let d_in = match f.required_context() {
                Some(ContextKind::Static) => {
                    s.insert(names::MLP_W, Tensor::glorot(d_c, spec.mlp_hidden, rng))?;
                    s.insert(names::MLP_B, Tensor::zeros(&[spec.mlp_hidden]))?;
                    spec.mlp_hidden
                }
                _ => {
                    let [wx, wh, b] = names::ENC_LSTM;
                    s.insert(wx, Tensor::glorot(d_c, 4 * h, rng))?;
                    s.insert(wh, Tensor::glorot(h, 4 * h, rng))?;
                    s.insert(b, Tensor::zeros(&[4 * h]))?;
                    h
                }
            };
            let [wx, wh, b] = names::OUT_LSTM;
            s.insert(wx, Tensor::glorot(d_in, 4 * h, rng))?;
            s.insert(wh, Tensor::glorot(h, 4 * h, rng))?;
            s.insert(b, Tensor::zeros(&[4 * h]))?;
            if f.is_cen() {
                s.insert(names::ATT_W, Tensor::glorot_scaled(h, spec.dict_size, 0.1, rng))?;
                s.insert(names::DICT, Tensor::normal(&[spec.dict_size, d_x], 0.1, rng))?;
            } else {
                s.insert(names::HEAD_W, Tensor::glorot(m, h, rng))?;
                s.insert(names::HEAD_B, Tensor::zeros(&[m]))?;
            }
        }
        f => {
            return Err(ModelError::InvalidSpec(format!(
                "{f} is not trained by gradient descent"
            )))
        }
    }
    if spec.pairwise_enabled() {
        s.insert(names::PAIRWISE, Tensor::zeros(&[3]))?;
    }
    Ok(s)
}

/// Per-interval explanations and attention maps produced by a CEN encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CenOutput {
    /// `θ^1..θ^m`, each of length `d_x`.
    pub thetas: Vec<Vec<f64>>,
    /// `α^1..α^m`, each on the `K`-simplex.
    pub alphas: Vec<Vec<f64>>,
}

/// Run the CEN encoder and attention head for one context.
pub fn cen_forward(
    spec: &ModelSpec,
    params: &ParamStore,
    context: &Context,
    m: usize,
) -> Result<CenOutput, ModelError> {
    if !spec.family.is_cen() {
        return Err(ModelError::InvalidSpec(format!("{} is not a CEN family", spec.family)));
    }
    Net::new(spec, params, m)?.cen(context)
}

enum EncoderTape {
    Mlp(DenseTape),
    Lstm(Vec<LstmStepTape>),
}

pub(crate) struct Forward {
    pub chain: Chain,
    encoder: Option<EncoderTape>,
    decoder: Vec<LstmStepTape>,
    hs: Vec<Vec<f64>>,
    attention: Vec<AttentionTape>,
    thetas: Vec<Vec<f64>>,
    alphas: Vec<Vec<f64>>,
}

/// A view of a parameter store as a network of a given family.
pub(crate) struct Net<'a> {
    family: Family,
    params: &'a ParamStore,
    m: usize,
    dict: Option<Dictionary>,
}

fn lstm<'a>(p: &'a ParamStore, n: [&str; 3]) -> Result<LstmWeights<'a>, ModelError> {
    Ok(LstmWeights {
        w_x: p.get(n[0])?,
        w_h: p.get(n[1])?,
        b: p.get(n[2])?,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn add_lstm(grads: &mut [Tensor], p: &ParamStore, n: [&str; 3], acc: &LstmGrads) {
    for (name, g) in n.iter().zip([&acc.w_x, &acc.w_h, &acc.b]) {
        grads[slot(p, name)].add_assign(g);
    }
}

fn slot(p: &ParamStore, name: &str) -> usize {
    p.index_of(name).expect("parameter present for this family")
}

impl<'a> Net<'a> {
    pub fn new(spec: &ModelSpec, params: &'a ParamStore, m: usize) -> Result<Self, ModelError> {
        let dict = if spec.family.is_cen() {
            Some(Dictionary::new(params.get(names::DICT)?.clone())?)
        } else {
            None
        };
        if spec.family == Family::Crf {
            let theta = params.get(names::CRF_THETA)?;
            theta.expect_shape(&[m, theta.cols()], names::CRF_THETA)?;
        }
        Ok(Net {
            family: spec.family,
            params,
            m,
            dict,
        })
    }

    pub fn pairwise(&self) -> Result<PairwisePotentials, ModelError> {
        match self.params.get(names::PAIRWISE) {
            Ok(w) => {
                let w = w.data();
                Ok(PairwisePotentials::new(w[0], w[1], w[2]))
            }
            Err(_) => Ok(PairwisePotentials::DISABLED),
        }
    }

    pub fn crf_explanation(&self) -> Result<ExplanationSet, ModelError> {
        let theta = self.params.get(names::CRF_THETA)?;
        Ok(ExplanationSet {
            thetas: (0..self.m).map(|t| theta.row(t).to_vec()).collect(),
            pairwise: self.pairwise()?,
        })
    }

    fn encode(&self, ctx: &Context) -> Result<(Vec<f64>, EncoderTape), ModelError> {
        let p = self.params;
        match (self.family.required_context(), ctx) {
            (Some(ContextKind::Static), Context::Static(c)) => {
                let input = Tensor::matrix(1, c.len(), c.clone())?;
                let (out, tape) =
                    dense(&input, p.get(names::MLP_W)?, p.get(names::MLP_B)?, Activation::Tanh)?;
                Ok((out.into_data(), EncoderTape::Mlp(tape)))
            }
            (Some(ContextKind::Series), Context::Series(rows)) => {
                if rows.is_empty() {
                    return Err(ModelError::DimMismatch("empty context series".into()));
                }
                let w = lstm(p, names::ENC_LSTM)?;
                let mut state = LstmState::zeros(w.hidden());
                let mut tapes = Vec::with_capacity(rows.len());
                for row in rows {
                    let (next, tape) = lstm_step(row, &state, w)?;
                    state = next;
                    tapes.push(tape);
                }
                Ok((state.h, EncoderTape::Lstm(tapes)))
            }
            _ => Err(ModelError::DimMismatch(format!(
                "{} context given to {}",
                ctx.kind(),
                self.family
            ))),
        }
    }

    fn decode(&self, z: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<LstmStepTape>), ModelError> {
        let w = lstm(self.params, names::OUT_LSTM)?;
        let mut state = LstmState::zeros(w.hidden());
        let mut hs = Vec::with_capacity(self.m);
        let mut tapes = Vec::with_capacity(self.m);
        for _ in 0..self.m {
            let (next, tape) = lstm_step(z, &state, w)?;
            hs.push(next.h.clone());
            state = next;
            tapes.push(tape);
        }
        Ok((hs, tapes))
    }

    pub fn cen(&self, ctx: &Context) -> Result<CenOutput, ModelError> {
        let (z, _) = self.encode(ctx)?;
        let (hs, _) = self.decode(&z)?;
        let dict = self.dict.as_ref().expect("cen family has a dictionary");
        let w_att = self.params.get(names::ATT_W)?;
        let mut out = CenOutput {
            thetas: Vec::with_capacity(self.m),
            alphas: Vec::with_capacity(self.m),
        };
        for h in &hs {
            let (theta, alpha, _) = attention_combine(h, w_att, dict)?;
            out.thetas.push(theta);
            out.alphas.push(alpha);
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[f64], ctx: &Context) -> Result<Forward, ModelError> {
        let pairwise = self.pairwise()?;
        let mut f = Forward {
            chain: Chain::new(Vec::new(), pairwise),
            encoder: None,
            decoder: Vec::new(),
            hs: Vec::new(),
            attention: Vec::new(),
            thetas: Vec::new(),
            alphas: Vec::new(),
        };
        if self.family == Family::Crf {
            let theta = self.params.get(names::CRF_THETA)?;
            if theta.cols() != x.len() {
                return Err(ModelError::DimMismatch(format!(
                    "x has {} entries, model expects {}",
                    x.len(),
                    theta.cols()
                )));
            }
            f.chain.unary = (0..self.m).map(|t| dot(theta.row(t), x)).collect();
            return Ok(f);
        }
        let (z, enc) = self.encode(ctx)?;
        let (hs, dec) = self.decode(&z)?;
        f.encoder = Some(enc);
        f.decoder = dec;
        if let Some(dict) = &self.dict {
            if dict.dim() != x.len() {
                return Err(ModelError::DimMismatch(format!(
                    "x has {} entries, dictionary atoms have {}",
                    x.len(),
                    dict.dim()
                )));
            }
            let w_att = self.params.get(names::ATT_W)?;
            for h in &hs {
                let (theta, alpha, tape) = attention_combine(h, w_att, dict)?;
                f.chain.unary.push(dot(&theta, x));
                f.thetas.push(theta);
                f.alphas.push(alpha);
                f.attention.push(tape);
            }
        } else {
            let w = self.params.get(names::HEAD_W)?;
            let b = self.params.get(names::HEAD_B)?.data();
            f.chain.unary = hs.iter().enumerate().map(|(t, h)| dot(w.row(t), h) + b[t]).collect();
        }
        f.hs = hs;
        Ok(f)
    }

    pub fn chain(&self, r: &PatientRecord) -> Result<Chain, ModelError> {
        Ok(self.forward(&r.attributes, &r.context)?.chain)
    }

    /// Accumulate `∂loss/∂params` into `grads` (store order) given the loss
    /// gradient with respect to the unary and pairwise potentials.
    pub fn backward(
        &self,
        x: &[f64],
        f: &Forward,
        d_unary: &[f64],
        d_pairwise: [f64; 3],
        grads: &mut [Tensor],
    ) -> Result<(), ModelError> {
        let p = self.params;
        if let Some(i) = p.index_of(names::PAIRWISE) {
            axpy(grads[i].data_mut(), 1.0, &d_pairwise);
        }
        if self.family == Family::Crf {
            let g = &mut grads[slot(p, names::CRF_THETA)];
            for (t, &du) in d_unary.iter().enumerate() {
                axpy(g.row_mut(t), du, x);
            }
            return Ok(());
        }

        let mut dh: Vec<Vec<f64>> = Vec::with_capacity(self.m);
        if let Some(dict) = &self.dict {
            let w_att = p.get(names::ATT_W)?;
            let mut g_att = Tensor::zeros(w_att.shape());
            let mut g_dict = Tensor::zeros(dict.atoms().shape());
            for (tape, &du) in f.attention.iter().zip(d_unary) {
                let d_theta: Vec<f64> = x.iter().map(|v| du * v).collect();
                dh.push(tape.pullback_into(w_att, dict, &d_theta, &mut g_att, &mut g_dict));
            }
            grads[slot(p, names::ATT_W)].add_assign(&g_att);
            grads[slot(p, names::DICT)].add_assign(&g_dict);
        } else {
            let w = p.get(names::HEAD_W)?;
            let gw = slot(p, names::HEAD_W);
            let gb = slot(p, names::HEAD_B);
            for (t, (h, &du)) in f.hs.iter().zip(d_unary).enumerate() {
                axpy(grads[gw].row_mut(t), du, h);
                grads[gb].data_mut()[t] += du;
                dh.push(w.row(t).iter().map(|v| du * v).collect());
            }
        }

        // output LSTM, unrolled backwards; the input z is shared by all steps
        let w_out = lstm(p, names::OUT_LSTM)?;
        let hidden = w_out.hidden();
        let mut acc = LstmGrads::zeros(w_out.input(), hidden);
        let mut dz = vec![0.0; w_out.input()];
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        for (tape, dh_t) in f.decoder.iter().zip(&dh).rev() {
            let total: Vec<f64> = dh_t.iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dx, dhp, dcp) = tape.pullback_into(w_out, &total, &dc_next, &mut acc);
            axpy(&mut dz, 1.0, &dx);
            dh_next = dhp;
            dc_next = dcp;
        }
        add_lstm(grads, p, names::OUT_LSTM, &acc);

        match f.encoder.as_ref().expect("neural forward records an encoder") {
            EncoderTape::Mlp(tape) => {
                let g = tape.pullback(&Tensor::matrix(1, dz.len(), dz)?)?;
                grads[slot(p, names::MLP_W)].add_assign(&g.weight);
                grads[slot(p, names::MLP_B)].add_assign(&g.bias);
            }
            EncoderTape::Lstm(tapes) => {
                let w_enc = lstm(p, names::ENC_LSTM)?;
                let mut acc = LstmGrads::zeros(w_enc.input(), w_enc.hidden());
                let mut dh = dz;
                let mut dc = vec![0.0; w_enc.hidden()];
                for tape in tapes.iter().rev() {
                    let (_, dhp, dcp) = tape.pullback_into(w_enc, &dh, &dc, &mut acc);
                    dh = dhp;
                    dc = dcp;
                }
                add_lstm(grads, p, names::ENC_LSTM, &acc);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
impl Forward {
    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{grad_check, GradCheckOptions};
    use crate::likelihood::brute_force_distribution;
    use crate::survival::Outcome;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(family: Family) -> ModelSpec {
        let mut s = ModelSpec::new(family);
        s.mlp_hidden = 5;
        s.lstm_hidden = 4;
        s.dict_size = 3;
        s
    }

    fn toy(kind: ContextKind) -> Vec<(Vec<f64>, Context, Outcome)> {
        let ctx = |i: usize| match kind {
            ContextKind::Static => Context::Static(vec![0.3 * i as f64 - 0.4, 0.7, -0.2 * i as f64]),
            ContextKind::Series => Context::Series(vec![
                vec![0.1 * i as f64, -0.5, 0.2],
                vec![0.4, 0.3 * i as f64, -0.1],
            ]),
        };
        vec![
            (vec![1.0, 0.5, -1.2], ctx(0), Outcome::Event { k: 1 }),
            (vec![1.0, -0.3, 0.8], ctx(1), Outcome::Censored { last_alive: 2 }),
            (vec![1.0, 1.1, 0.1], ctx(2), Outcome::Event { k: 3 }),
            (vec![1.0, 0.0, -0.6], ctx(3), Outcome::Censored { last_alive: 0 }),
        ]
    }

    /// Total NLL over the toy set, writing analytic gradients into the store.
    fn total_loss(spec: &ModelSpec, store: &mut ParamStore, data: &[(Vec<f64>, Context, Outcome)]) -> f64 {
        let mut grads = store.zeros_like();
        let mut loss = 0.0;
        {
            let net = Net::new(spec, store, 4).unwrap();
            for (x, c, o) in data {
                let f = net.forward(x, c).unwrap();
                let g = f.chain.grad(o).unwrap();
                loss -= g.log_prob;
                let du: Vec<f64> = g.d_unary.iter().map(|v| -v).collect();
                let dp = g.d_pairwise.map(|v| -v);
                net.backward(x, &f, &du, dp, &mut grads).unwrap();
            }
        }
        store.set_grads(grads).unwrap();
        loss
    }

    fn perturbed(spec: &ModelSpec, d_c: usize) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = init_params(spec, 4, 3, d_c, &mut rng).unwrap();
        // move off the zero-bias initialization so every path is exercised
        for t in store.values_mut() {
            for v in t.data_mut() {
                *v += 0.3 * (rng.random::<f64>() - 0.5);
            }
        }
        store
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        for family in [Family::Crf, Family::MlpCen, Family::LstmCen, Family::MlpCrf, Family::LstmCrf] {
            let mut spec = small(family);
            spec.pairwise = Some(true);
            let kind = family.required_context().unwrap_or(ContextKind::Static);
            let data = toy(kind);
            let mut store = perturbed(&spec, 3);
            let report = grad_check(
                &mut store,
                |s| total_loss(&spec, s, &data),
                GradCheckOptions {
                    tolerance: 1e-4,
                    ..GradCheckOptions::default()
                },
            );
            assert!(report.passed(), "{family}: {report:?}");
            assert!(report.checked > 10);
        }
    }

    #[test]
    fn zero_encoder_gives_atom_mean() {
        let spec = small(Family::MlpCen);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = init_params(&spec, 4, 3, 3, &mut rng).unwrap();
        for name in [names::MLP_W, names::OUT_LSTM[0], names::OUT_LSTM[1], names::ATT_W] {
            store.get_mut(name).unwrap().fill(0.0);
        }
        let atoms = store.get(names::DICT).unwrap().clone();
        let out = cen_forward(&spec, &store, &Context::Static(vec![1.0, 2.0, 3.0]), 4).unwrap();
        for (theta, alpha) in out.thetas.iter().zip(&out.alphas) {
            for a in alpha {
                assert_abs_diff_eq!(*a, 1.0 / 3.0, epsilon = 1e-15);
            }
            for j in 0..3 {
                let mean = (0..3).map(|k| atoms.row(k)[j]).sum::<f64>() / 3.0;
                assert_abs_diff_eq!(theta[j], mean, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_interval_theta_is_in_the_hull() {
        let spec = small(Family::LstmCen);
        let store = perturbed(&spec, 3);
        let ctx = toy(ContextKind::Series).remove(2).1;
        let out = cen_forward(&spec, &store, &ctx, 1).unwrap();
        assert_eq!(out.thetas.len(), 1);
        let alpha = &out.alphas[0];
        assert!(alpha.iter().all(|&a| a >= 0.0));
        assert_abs_diff_eq!(alpha.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let atoms = store.get(names::DICT).unwrap();
        for j in 0..3 {
            let mixed: f64 = (0..3).map(|k| alpha[k] * atoms.row(k)[j]).sum();
            assert_abs_diff_eq!(out.thetas[0][j], mixed, epsilon = 1e-12);
        }
    }

    #[test]
    fn cen_distribution_matches_enumeration() {
        let mut spec = small(Family::MlpCen);
        spec.pairwise = Some(true);
        let mut store = perturbed(&spec, 3);
        store.get_mut(names::PAIRWISE).unwrap().data_mut().copy_from_slice(&[0.4, -0.7, 0.2]);
        let net = Net::new(&spec, &store, 4).unwrap();
        for (x, c, _) in toy(ContextKind::Static) {
            let f = net.forward(&x, &c).unwrap();
            let e = ExplanationSet {
                thetas: f.thetas().to_vec(),
                pairwise: net.pairwise().unwrap(),
            };
            let exact = brute_force_distribution(&x, &e).unwrap();
            for (a, b) in f.chain.distribution().log_probs.iter().zip(&exact.log_probs) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn wrong_context_kind_is_rejected() {
        let spec = small(Family::LstmCen);
        let store = perturbed(&spec, 3);
        let net = Net::new(&spec, &store, 4).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 0.0, 0.0], &Context::Static(vec![0.0; 3])),
            Err(ModelError::DimMismatch(_))
        ));
    }
}
