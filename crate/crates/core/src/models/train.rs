//! Minibatch SGD on the mean negative log-likelihood with early stopping.
//!
//! Per-record gradients are summed within a fixed number of contiguous
//! chunks (evaluated in parallel) and the chunk sums are then added in chunk
//! order, so results do not depend on the thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{init_params, Net};
use super::{ModelArtifact, ModelError, ModelSpec, TrainingMeta};
use crate::kernel::{clip_grad_norm, sgd_step, KernelError, ParamStore, Tensor};
use crate::survival::{Context, Dataset, Outcome};

const CHUNKS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the minibatch losses seen during the epoch.
    pub train_loss: f64,
    /// Mean NLL on the monitored split after the epoch.
    pub valid_loss: f64,
}

struct Example<'a> {
    x: &'a [f64],
    ctx: &'a Context,
    outcome: Outcome,
}

fn examples(d: &Dataset) -> Result<Vec<Example<'_>>, ModelError> {
    let outcomes = d.outcomes()?;
    Ok(d.records
        .iter()
        .zip(outcomes)
        .map(|(r, outcome)| Example {
            x: &r.attributes,
            ctx: &r.context,
            outcome,
        })
        .collect())
}

fn chunks(n: usize) -> Vec<std::ops::Range<usize>> {
    let size = n.div_ceil(CHUNKS).max(1);
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

fn nll_sum(net: &Net<'_>, batch: &[&Example<'_>]) -> Result<f64, ModelError> {
    let parts: Vec<Result<f64, ModelError>> = chunks(batch.len())
        .into_par_iter()
        .map(|r| {
            let mut s = 0.0;
            for ex in &batch[r] {
                s -= net.forward(ex.x, ex.ctx)?.chain.log_prob(&ex.outcome)?;
            }
            Ok(s)
        })
        .collect();
    parts.into_iter().sum()
}

fn nll_and_grad(
    net: &Net<'_>,
    store: &ParamStore,
    batch: &[&Example<'_>],
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let parts: Vec<Result<(f64, Vec<Tensor>), ModelError>> = chunks(batch.len())
        .into_par_iter()
        .map(|r| {
            let mut grads = store.zeros_like();
            let mut loss = 0.0;
            for ex in &batch[r] {
                let f = net.forward(ex.x, ex.ctx)?;
                let g = f.chain.grad(&ex.outcome)?;
                loss -= g.log_prob;
                let du: Vec<f64> = g.d_unary.iter().map(|v| -v).collect();
                net.backward(ex.x, &f, &du, g.d_pairwise.map(|v| -v), &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = store.zeros_like();
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (t, gi) in total.iter_mut().zip(&g) {
            t.add_assign(gi);
        }
    }
    Ok((loss, total))
}

fn mean_of(spec: &ModelSpec, store: &ParamStore, m: usize, ex: &[Example<'_>]) -> Result<f64, ModelError> {
    if ex.is_empty() {
        return Ok(f64::NAN);
    }
    let refs: Vec<&Example<'_>> = ex.iter().collect();
    Ok(nll_sum(&Net::new(spec, store, m)?, &refs)? / ex.len() as f64)
}

/// Mean negative log-likelihood of a gradient-trained artifact on `d`.
pub fn mean_nll(artifact: &ModelArtifact, d: &Dataset) -> Result<f64, ModelError> {
    if !artifact.spec.family.is_gradient_trained() {
        return Err(ModelError::InvalidSpec(format!(
            "{} has no structured likelihood",
            artifact.spec.family
        )));
    }
    let ex = examples(d)?;
    mean_of(&artifact.spec, &artifact.params, artifact.m(), &ex)
}

/// Summed negative log-likelihood of `d` under `spec` with parameters
/// `store`, writing its gradient into `store`'s gradient slots.
pub fn total_nll_with_grads(
    spec: &ModelSpec,
    store: &mut ParamStore,
    m: usize,
    d: &Dataset,
) -> Result<f64, ModelError> {
    if !spec.family.is_gradient_trained() {
        return Err(ModelError::InvalidSpec(format!(
            "{} has no structured likelihood",
            spec.family
        )));
    }
    let ex = examples(d)?;
    let refs: Vec<&Example<'_>> = ex.iter().collect();
    let (loss, grads) = nll_and_grad(&Net::new(spec, store, m)?, store, &refs)?;
    store.set_grads(grads)?;
    Ok(loss)
}

fn diverged(epoch: usize, detail: impl Into<String>) -> ModelError {
    ModelError::Diverged {
        epoch,
        detail: detail.into(),
    }
}

pub(crate) fn train(
    spec: &ModelSpec,
    train: &Dataset,
    valid: &Dataset,
) -> Result<(ParamStore, TrainingMeta), ModelError> {
    if train.is_empty() {
        return Err(ModelError::InvalidSpec("empty training set".into()));
    }
    if spec.family.is_neural() && train.d_c() == 0 {
        return Err(ModelError::InvalidSpec("context has no variables".into()));
    }
    let m = train.grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut store = init_params(spec, m, train.d_x(), train.d_c(), &mut rng)?;
    let tr = examples(train)?;
    let va = examples(valid)?;
    let monitor = if va.is_empty() { &tr } else { &va };

    let mut meta = TrainingMeta::default();
    let initial = mean_of(spec, &store, m, &tr)?;
    if !initial.is_finite() {
        return Err(diverged(0, "initial loss is not finite"));
    }
    meta.initial_train_loss = Some(initial);
    let mut best_loss = mean_of(spec, &store, m, monitor)?;
    let mut best = store.snapshot();
    let mut wait = 0;
    let opt = spec.optimizer;
    let mut order: Vec<usize> = (0..tr.len()).collect();

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut seen = 0.0;
        for batch in order.chunks(opt.batch_size) {
            let refs: Vec<&Example<'_>> = batch.iter().map(|&i| &tr[i]).collect();
            let (loss, mut grads) = nll_and_grad(&Net::new(spec, &store, m)?, &store, &refs)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, "non-finite training loss"));
            }
            seen += loss;
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(scale));
            store.set_grads(grads)?;
            if let Some(c) = opt.clip_norm {
                if !clip_grad_norm(&mut store, c).is_finite() {
                    return Err(diverged(epoch, "non-finite gradient"));
                }
            }
            sgd_step(&mut store, opt.lr, opt.momentum, spec.l2).map_err(|e| match e {
                KernelError::NonFinite(name) => diverged(epoch, format!("{name} became non-finite")),
                other => other.into(),
            })?;
        }
        let valid_loss = mean_of(spec, &store, m, monitor)?;
        if !valid_loss.is_finite() {
            return Err(diverged(epoch, "non-finite validation loss"));
        }
        let rec = EpochRecord {
            epoch,
            train_loss: seen / tr.len() as f64,
            valid_loss,
        };
        log::info!(
            "{} epoch {epoch}: train {:.6} valid {:.6}",
            spec.family,
            rec.train_loss,
            rec.valid_loss
        );
        meta.history.push(rec);
        meta.epochs_run = epoch;
        if valid_loss < best_loss {
            best_loss = valid_loss;
            best = store.snapshot();
            wait = 0;
        } else {
            wait += 1;
            if spec.patience > 0 && wait >= spec.patience {
                log::info!("early stop after {epoch} epochs");
                break;
            }
        }
    }

    let store = best;
    meta.best_valid_loss = Some(best_loss);
    meta.final_train_loss = Some(mean_of(spec, &store, m, &tr)?);
    Ok((store, meta))
}
