//! Synthetic survival data drawn from the exact model distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ensure_valid, PipelineError};
use crate::kernel::softmax;
use crate::likelihood::{outcome_distribution, ExplanationSet};
use crate::survival::{Context, ContextKind, Dataset, PatientRecord, SurvivalLabel, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorFamily {
    /// One global `Θ*` shared by all records.
    Crf,
    /// Per-record `θ^t` from a dictionary and a random attention encoder.
    Cen,
}

/// Generator settings. Missing fields in a config file take the
/// [`Default`] values (a 1000-record `crf` corpus with 10 attributes, 10
/// context features and 20 intervals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Attribute count including the bias.
    pub d_x: usize,
    pub d_c: usize,
    pub m: usize,
    /// Dictionary size for the `cen` generator.
    pub k_atoms: usize,
    /// Target fraction of censored labels, in `[0, 1)`.
    pub censoring_rate: f64,
    pub family: GeneratorFamily,
    pub seed: u64,
    pub interval_days: f64,
    /// Multiplier on the true weights.
    pub effect_scale: f64,
    /// Steps of series context; 0 yields static context.
    pub series_len: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec::new(GeneratorFamily::Crf, 1000, 10, 10, 20)
    }
}

impl SyntheticSpec {
    pub fn new(family: GeneratorFamily, n: usize, d_x: usize, d_c: usize, m: usize) -> Self {
        SyntheticSpec {
            n,
            d_x,
            d_c,
            m,
            k_atoms: 4,
            censoring_rate: 0.0,
            family,
            seed: 0,
            interval_days: 1.0,
            effect_scale: 1.0,
            series_len: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |s: &str| Err(PipelineError::InvalidConfig(s.to_owned()));
        if self.n == 0 || self.d_x == 0 || self.d_c == 0 || self.m == 0 || self.k_atoms == 0 {
            return bad("n, d_x, d_c, m and k_atoms must be positive");
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return bad("censoring_rate must be in [0, 1)");
        }
        if !(self.interval_days.is_finite() && self.interval_days > 0.0) {
            return bad("interval_days must be positive");
        }
        if !self.effect_scale.is_finite() {
            return bad("effect_scale must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Crf {
        /// `m × d_x`
        theta: Vec<Vec<f64>>,
    },
    Cen {
        /// `K × d_x`
        atoms: Vec<Vec<f64>>,
        /// `d_c × K` attention weights on the latent context.
        encoder: Vec<Vec<f64>>,
        /// `m × K` per-interval attention offsets.
        offsets: Vec<Vec<f64>>,
        /// Per-record `θ^1..θ^m`, in record order.
        thetas: Vec<Vec<Vec<f64>>>,
    },
}

fn normals<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| normals(rng, cols, scale)).collect()
}

/// Draw `k` from a probability vector by inversion.
fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth), PipelineError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d_x, d_c, m) = (spec.n, spec.d_x, spec.d_c, spec.m);
    let grid = TimeGrid::uniform(m, spec.interval_days)?;
    let w = spec.interval_days;
    let theta_scale = spec.effect_scale / (d_x as f64).sqrt();

    let mut truth = match spec.family {
        GeneratorFamily::Crf => GroundTruth::Crf {
            theta: matrix(&mut rng, m, d_x, theta_scale),
        },
        GeneratorFamily::Cen => GroundTruth::Cen {
            atoms: matrix(&mut rng, spec.k_atoms, d_x, theta_scale),
            encoder: matrix(&mut rng, d_c, spec.k_atoms, 2.0 / (d_c as f64).sqrt()),
            offsets: matrix(&mut rng, m, spec.k_atoms, 1.0),
            thetas: Vec::with_capacity(n),
        },
    };

    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = vec![1.0];
        x.extend(normals(&mut rng, d_x - 1, 1.0));
        let latent: Vec<f64> = match spec.family {
            // the encoder sees the attributes plus filler noise
            GeneratorFamily::Crf => x[1..]
                .iter()
                .copied()
                .chain(normals(&mut rng, d_c.saturating_sub(d_x - 1), 1.0))
                .take(d_c)
                .collect(),
            GeneratorFamily::Cen => normals(&mut rng, d_c, 1.0),
        };
        let e = match &mut truth {
            GroundTruth::Crf { theta } => ExplanationSet {
                thetas: theta.clone(),
                pairwise: Default::default(),
            },
            GroundTruth::Cen {
                atoms,
                encoder,
                offsets,
                thetas,
            } => {
                let th: Vec<Vec<f64>> = offsets
                    .iter()
                    .map(|off| {
                        let logits: Vec<f64> = (0..spec.k_atoms)
                            .map(|k| off[k] + (0..d_c).map(|j| latent[j] * encoder[j][k]).sum::<f64>())
                            .collect();
                        let alpha = softmax(&logits);
                        (0..d_x)
                            .map(|j| (0..spec.k_atoms).map(|k| alpha[k] * atoms[k][j]).sum())
                            .collect()
                    })
                    .collect();
                thetas.push(th.clone());
                ExplanationSet {
                    thetas: th,
                    pairwise: Default::default(),
                }
            }
        };
        let probs = outcome_distribution(&x, &e)
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?
            .probs();
        let k = sample_index(&mut rng, &probs);
        // death time uniform within interval k + 1; k = m dies past the cap
        let death = (k as f64 + rng.random::<f64>()) * w;
        let context = if spec.series_len == 0 {
            Context::Static(latent)
        } else {
            Context::Series(
                (0..spec.series_len)
                    .map(|_| latent.iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect(),
            )
        };
        rows.push((x, context, death, rng.random::<f64>(), rng.random::<f64>()));
    }

    // censor each record with probability q at a uniform time on [0, cap);
    // only censor times before death take effect, so q is scaled up by the
    // mean chance of that happening
    let cap = grid.cap();
    let reach = rows.iter().map(|r| r.2.min(cap) / cap).sum::<f64>() / n as f64;
    let q = if spec.censoring_rate == 0.0 {
        0.0
    } else if reach <= 0.0 {
        1.0
    } else {
        (spec.censoring_rate / reach).min(1.0)
    };
    if spec.censoring_rate > 0.0 && spec.censoring_rate > reach {
        log::warn!(
            "censoring target {} exceeds the attainable {:.3}",
            spec.censoring_rate,
            reach
        );
    }

    let records = rows
        .into_iter()
        .enumerate()
        .map(|(i, (x, context, death, u_select, u_time))| {
            let c = u_time * cap;
            let label = if u_select < q && c < death {
                SurvivalLabel::censored(c)
            } else {
                SurvivalLabel::event(death)
            };
            PatientRecord {
                id: format!("s{i:06}"),
                attributes: x,
                context,
                label,
            }
        })
        .collect();

    let mut attribute_names = vec!["bias".to_owned()];
    attribute_names.extend((1..d_x).map(|j| format!("x{j}")));
    let dataset = Dataset {
        grid,
        attribute_names,
        context_names: (1..=d_c).map(|j| format!("c{j}")).collect(),
        context_kind: if spec.series_len == 0 {
            ContextKind::Static
        } else {
            ContextKind::Series
        },
        records,
    };
    Ok((ensure_valid(dataset)?, truth))
}
