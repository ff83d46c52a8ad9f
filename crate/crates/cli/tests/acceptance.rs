//! Acceptance suite: one PASS/FAIL/SKIP line per criterion, non-zero exit on
//! any failure. Criterion 7 needs a local SUPPORT2 table in `SUPPORT2_CSV`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cen_survival::kernel::{
    attention_combine, dense, grad_check, lstm_step, Activation, Dictionary, GradCheckOptions,
    LstmState, LstmWeights, ParamStore, Tensor,
};
use cen_survival::likelihood::{
    brute_force_distribution, grad_log_prob, outcome_distribution, survival_curve, ExplanationSet,
    PairwisePotentials,
};
use cen_survival::metrics::kfold_eval;
use cen_survival::models::{
    aalen_fit_data, fit, partial_likelihood, total_nll_with_grads, CoxData, Family, ModelSpec,
};
use cen_survival::pipelines::{
    gen_synthetic, ingest_support2, GeneratorFamily, GroundTruth, IngestConfig, SyntheticSpec,
};
use cen_survival::survival::{Dataset, Outcome};

type Check = Result<String, String>;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Option<Check>) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let verdict = match outcome {
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Verdict::Fail(format!("panicked: {msg}"))
        }
        Ok(None) => Verdict::Skip("SUPPORT2_CSV not set".into()),
        Ok(Some(Err(e))) => Verdict::Fail(e),
        Ok(Some(Ok(_))) if elapsed > budget => {
            Verdict::Fail(format!("over the {:.0} s budget", budget.as_secs_f64()))
        }
        Ok(Some(Ok(detail))) => Verdict::Pass(detail),
    };
    let secs = elapsed.as_secs_f64();
    let (tag, detail, ok) = match verdict {
        Verdict::Pass(d) => ("PASS", d, true),
        Verdict::Fail(d) => ("FAIL", d, false),
        Verdict::Skip(d) => ("SKIP", d, true),
    };
    println!("criterion {id} {name}: {tag} ({detail}; {secs:.2} s)");
    ok
}

fn random_set(rng: &mut ChaCha8Rng, m: usize, d_x: usize, scale: f64, pairwise: bool) -> ExplanationSet {
    let thetas = (0..m)
        .map(|_| (0..d_x).map(|_| rng.random_range(-scale..scale)).collect())
        .collect();
    let pairwise = if pairwise {
        PairwisePotentials::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    } else {
        PairwisePotentials::DISABLED
    };
    ExplanationSet { thetas, pairwise }
}

fn random_x(rng: &mut ChaCha8Rng, d_x: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..d_x).map(|_| rng.random_range(-1.5..1.5)).collect();
    x[0] = 1.0;
    x
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let m = rng.random_range(1..=12);
        let d_x = rng.random_range(1..=5);
        let e = random_set(&mut rng, m, d_x, 2.0, i % 2 == 0);
        let x = random_x(&mut rng, d_x);
        let fast = outcome_distribution(&x, &e).map_err(|e| e.to_string())?;
        let slow = brute_force_distribution(&x, &e).map_err(|e| e.to_string())?;
        for (a, b) in fast.log_probs.iter().zip(&slow.log_probs) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in fast.probs().iter().zip(slow.probs()) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 instances, max deviation {worst:.1e}"))
}

fn normalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut count = 0;
    for m in [1, 2, 5, 10, 25, 50, 100, 150, 200] {
        for rep in 0..10 {
            let d_x = 6;
            let norm = 10.0 * rep as f64 / 9.0;
            let mut e = random_set(&mut rng, m, d_x, 1.0, rep % 2 == 1);
            for th in &mut e.thetas {
                let n = th.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                th.iter_mut().for_each(|v| *v *= norm / n);
            }
            let x = random_x(&mut rng, d_x);
            let p = outcome_distribution(&x, &e).map_err(|e| e.to_string())?.probs();
            worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
            count += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("max |sum - 1| {worst:e}"))?;
    Ok(format!("{count} instances up to m=200, max |sum - 1| {worst:.1e}"))
}

fn report_line(label: &str, r: &cen_survival::kernel::GradCheckReport) -> Result<String, String> {
    ensure(r.passed(), || format!("{label}: rel error {:e} at {:?}", r.max_rel_error, r.worst))?;
    Ok(format!("{label} {:.1e}", r.max_rel_error))
}

fn likelihood_gradients() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let opts = GradCheckOptions {
        tolerance: 1e-5,
        ..GradCheckOptions::default()
    };
    let mut worst = 0.0f64;
    for i in 0..40 {
        let m = rng.random_range(1..=15);
        let d_x = rng.random_range(1..=4);
        let e = random_set(&mut rng, m, d_x, 1.0, i % 2 == 0);
        let x = random_x(&mut rng, d_x);
        let outcome = if i % 4 < 2 {
            Outcome::Censored { last_alive: rng.random_range(0..m) }
        } else {
            Outcome::Event { k: rng.random_range(0..m) }
        };
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::matrix(m, d_x, e.thetas.concat()).unwrap()).unwrap();
        let p = e.pairwise;
        store.insert("pairwise", Tensor::vector(vec![p.w00, p.w01, p.w11])).unwrap();
        let enabled = p.enabled;
        let report = grad_check(
            &mut store,
            |s| {
                let th = s.get("theta").unwrap();
                let w = s.get("pairwise").unwrap().data().to_vec();
                let set = ExplanationSet {
                    thetas: (0..th.rows()).map(|t| th.row(t).to_vec()).collect(),
                    pairwise: PairwisePotentials { w00: w[0], w01: w[1], w11: w[2], enabled },
                };
                let g = grad_log_prob(&x, &set, &outcome).unwrap();
                let d_pair = if enabled { g.d_pairwise.to_vec() } else { vec![0.0; 3] };
                s.set_grads(vec![
                    Tensor::matrix(th.rows(), th.cols(), g.d_thetas.concat()).unwrap(),
                    Tensor::vector(d_pair),
                ])
                .unwrap();
                g.log_prob
            },
            opts,
        );
        report_line(&format!("{outcome:?}"), &report)?;
        worst = worst.max(report.max_rel_error);
    }
    Ok(format!("grad_log_prob {worst:.1e}"))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn kernel_gradients() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let opts = GradCheckOptions {
        tolerance: 1e-4,
        ..GradCheckOptions::default()
    };
    let mut worst = 0.0f64;

    for act in [Activation::Identity, Activation::Tanh, Activation::Relu] {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::normal(&[3, 4], 1.0, &mut rng)).unwrap();
        store.insert("w", Tensor::normal(&[4, 5], 0.7, &mut rng)).unwrap();
        store.insert("b", Tensor::normal(&[5], 0.5, &mut rng)).unwrap();
        let up = Tensor::normal(&[3, 5], 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |s| {
                let (y, tape) = dense(s.get("x").unwrap(), s.get("w").unwrap(), s.get("b").unwrap(), act).unwrap();
                let g = tape.pullback(&up).unwrap();
                s.set_grads(vec![g.input, g.weight, g.bias]).unwrap();
                dot(y.data(), up.data())
            },
            opts,
        );
        report_line(&format!("dense {act:?}"), &r)?;
        worst = worst.max(r.max_rel_error);
    }

    let (d_in, d_h) = (3, 4);
    let mut store = ParamStore::new();
    store.insert("x", Tensor::normal(&[d_in], 1.0, &mut rng)).unwrap();
    store.insert("h", Tensor::normal(&[d_h], 0.5, &mut rng)).unwrap();
    store.insert("c", Tensor::normal(&[d_h], 0.5, &mut rng)).unwrap();
    store.insert("w_x", Tensor::normal(&[d_in, 4 * d_h], 0.6, &mut rng)).unwrap();
    store.insert("w_h", Tensor::normal(&[d_h, 4 * d_h], 0.6, &mut rng)).unwrap();
    store.insert("b", Tensor::normal(&[4 * d_h], 0.3, &mut rng)).unwrap();
    let up_h: Vec<f64> = (0..d_h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let up_c: Vec<f64> = (0..d_h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = grad_check(
        &mut store,
        |s| {
            let p = LstmWeights {
                w_x: s.get("w_x").unwrap(),
                w_h: s.get("w_h").unwrap(),
                b: s.get("b").unwrap(),
            };
            let state = LstmState {
                h: s.get("h").unwrap().data().to_vec(),
                c: s.get("c").unwrap().data().to_vec(),
            };
            let (next, tape) = lstm_step(s.get("x").unwrap().data(), &state, p).unwrap();
            let g = tape.pullback(p, &up_h, &up_c);
            let loss = dot(&next.h, &up_h) + dot(&next.c, &up_c);
            s.set_grads(vec![
                Tensor::vector(g.x),
                Tensor::vector(g.h_prev),
                Tensor::vector(g.c_prev),
                g.params.w_x,
                g.params.w_h,
                g.params.b,
            ])
            .unwrap();
            loss
        },
        opts,
    );
    report_line("lstm_step", &r)?;
    worst = worst.max(r.max_rel_error);

    let (d_h, k, d_x) = (5, 4, 3);
    let mut store = ParamStore::new();
    store.insert("h", Tensor::normal(&[d_h], 1.0, &mut rng)).unwrap();
    store.insert("w_att", Tensor::normal(&[d_h, k], 0.8, &mut rng)).unwrap();
    store.insert("atoms", Tensor::normal(&[k, d_x], 1.0, &mut rng)).unwrap();
    let up: Vec<f64> = (0..d_x).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = grad_check(
        &mut store,
        |s| {
            let dict = Dictionary::new(s.get("atoms").unwrap().clone()).unwrap();
            let w_att = s.get("w_att").unwrap();
            let (theta, _, tape) = attention_combine(s.get("h").unwrap().data(), w_att, &dict).unwrap();
            let g = tape.pullback(w_att, &dict, &up);
            s.set_grads(vec![Tensor::vector(g.h), g.w_att, g.atoms]).unwrap();
            dot(&theta, &up)
        },
        opts,
    );
    report_line("attention_combine", &r)?;
    worst = worst.max(r.max_rel_error);
    Ok(format!("kernel pullbacks {worst:.1e}"))
}

fn cen_data(n: usize, m: usize, series_len: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        censoring_rate: 0.3,
        seed,
        series_len,
        ..SyntheticSpec::new(GeneratorFamily::Cen, n, 4, 3, m)
    };
    gen_synthetic(&spec).unwrap().0
}

fn small_spec(family: Family, epochs: usize) -> ModelSpec {
    let mut s = ModelSpec::new(family);
    s.mlp_hidden = 6;
    s.lstm_hidden = 5;
    s.dict_size = 3;
    s.epochs = epochs;
    s.patience = 0;
    s.seed = 9;
    s
}

fn end_to_end_gradients() -> Result<String, String> {
    let opts = GradCheckOptions {
        tolerance: 1e-4,
        ..GradCheckOptions::default()
    };
    let mut worst = 0.0f64;
    for (family, series) in [(Family::MlpCen, 0), (Family::LstmCen, 3)] {
        let d = cen_data(4, 5, series, 17);
        let spec = small_spec(family, 3);
        let a = fit(&spec, &d, &d.subset(&[])).map_err(|e| e.to_string())?;
        let mut store = a.params.clone();
        let m = d.grid.len();
        let r = grad_check(&mut store, |s| total_nll_with_grads(&spec, s, m, &d).unwrap(), opts);
        report_line(&format!("{family} loss"), &r)?;
        worst = worst.max(r.max_rel_error);
    }
    Ok(format!("CEN loss {worst:.1e}"))
}

fn gradient_suite() -> Check {
    let parts = [likelihood_gradients()?, kernel_gradients()?, end_to_end_gradients()?];
    Ok(parts.join(", "))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn parameter_recovery() -> Check {
    let spec = SyntheticSpec {
        censoring_rate: 0.3,
        effect_scale: 2.0,
        ..SyntheticSpec::new(GeneratorFamily::Crf, 5000, 10, 9, 20)
    };
    let (d, truth) = gen_synthetic(&spec).map_err(|e| e.to_string())?;
    let GroundTruth::Crf { theta } = truth else {
        return Err("generator returned a non-CRF truth".into());
    };
    let mut ms = ModelSpec::new(Family::Crf);
    ms.optimizer.lr = 0.002;
    let a = fit(&ms, &d, &d.subset(&[])).map_err(|e| e.to_string())?;
    let learned = a.explain(&d.records[0]).map_err(|e| e.to_string())?.set.thetas;
    let r = pearson(&learned.concat(), &theta.concat());
    let cv = kfold_eval(&ms, &d, 5, 0).map_err(|e| e.to_string())?;
    let gap = cv.mean.acc50 - cv.constant_baseline[1];
    let detail = format!(
        "r={r:.3}, Acc@50 {:.1} vs constant {:.1}",
        cv.mean.acc50, cv.constant_baseline[1]
    );
    ensure(r > 0.9 && gap >= 10.0, || detail.clone())?;
    Ok(detail)
}

fn trivial_identities() -> Check {
    // zero weights: uniform outcomes, linear survival
    for m in [1, 2, 7, 40, 200] {
        let e = ExplanationSet::zeros(m, 3);
        let x = [1.0, -0.4, 2.5];
        let p = outcome_distribution(&x, &e).map_err(|e| e.to_string())?.probs();
        let s = survival_curve(&x, &e).map_err(|e| e.to_string())?;
        let u = 1.0 / (m + 1) as f64;
        ensure(p.iter().all(|v| (v - u).abs() <= 1e-10), || format!("theta=0, m={m}: {p:?}"))?;
        for (i, v) in s.iter().enumerate() {
            let want = (m + 1 - i) as f64 / (m + 1) as f64;
            ensure((v - want).abs() <= 1e-10, || format!("theta=0, m={m}: S[{i}]={v}"))?;
        }
    }

    // one interval: death in it has the logistic probability of x·θ
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..50 {
        let e = random_set(&mut rng, 1, 4, 3.0, false);
        let x = random_x(&mut rng, 4);
        let z = dot(&x, &e.thetas[0]);
        let logistic = 1.0 / (1.0 + (-z).exp());
        let p = outcome_distribution(&x, &e).map_err(|e| e.to_string())?.probs();
        ensure((p[0] - logistic).abs() <= 1e-10 && (p[1] - (1.0 - logistic)).abs() <= 1e-10, || {
            format!("m=1: {p:?} vs logistic {logistic}")
        })?;
    }

    // intercept-only additive hazards against Nelson–Aalen increments
    let times = vec![1.0, 1.0, 2.0, 3.0, 3.0, 4.0, 5.0, 5.5, 6.0];
    let events = vec![true, false, true, true, true, false, true, false, true];
    let data = CoxData {
        times: times.clone(),
        events: events.clone(),
        covariates: vec![vec![1.0]; times.len()],
    };
    let fit = aalen_fit_data(&data).map_err(|e| e.to_string())?;
    let mut event_times: Vec<f64> = times.iter().zip(&events).filter(|(_, &e)| e).map(|(t, _)| *t).collect();
    event_times.dedup();
    ensure(fit.event_times == event_times, || format!("event times {:?}", fit.event_times))?;
    for (t, db) in event_times.iter().zip(&fit.increments) {
        let deaths = times.iter().zip(&events).filter(|(s, &e)| e && *s == t).count() as f64;
        let at_risk = times.iter().filter(|s| *s >= t).count() as f64;
        ensure((db[0] - deaths / at_risk).abs() <= 1e-10, || {
            format!("increment at {t}: {} vs {}", db[0], deaths / at_risk)
        })?;
    }

    // Cox score at β = 0: Σ over deaths of (x_i − unweighted at-risk mean).
    // At t=1 the risk set is everyone: means (1.125, 0.5); at t=3 it is the
    // last two: means (1.75, 0); at t=4 only the last: residual zero.
    let cox = CoxData {
        times: vec![1.0, 2.0, 3.0, 4.0],
        events: vec![true, false, true, true],
        covariates: vec![vec![2.0, 1.0], vec![-1.0, 1.0], vec![0.5, 0.0], vec![3.0, 0.0]],
    };
    let score = partial_likelihood(&cox, &[0.0, 0.0]).score;
    let hand = [(2.0 - 1.125) + (0.5 - 1.75) + 0.0, (1.0 - 0.5) + 0.0 + 0.0];
    ensure(score.iter().zip(&hand).all(|(a, b)| (a - b).abs() <= 1e-10), || {
        format!("Cox score {score:?} vs {hand:?}")
    })?;
    Ok("theta=0, m=1 logistic, Nelson-Aalen, Cox score all exact".into())
}

fn cen_invariants() -> Check {
    let mut checked = 0;
    let (mut simplex, mut mixing) = (0.0f64, 0.0f64);
    for (family, series) in [(Family::MlpCen, 0), (Family::LstmCen, 4)] {
        let d = cen_data(200, 10, series, 23);
        let a = fit(&small_spec(family, 20), &d, &d.subset(&[])).map_err(|e| e.to_string())?;
        let atoms = a.dictionary().ok_or("no dictionary")?.clone();
        for r in &d.records {
            let e = a.explain(r).map_err(|e| e.to_string())?;
            let alphas = e.attention.ok_or("no attention")?;
            for (alpha, theta) in alphas.iter().zip(&e.set.thetas) {
                simplex = simplex.max((alpha.iter().sum::<f64>() - 1.0).abs());
                simplex = simplex.max(alpha.iter().fold(0.0f64, |acc, &w| acc.max(-w)));
                for (j, th) in theta.iter().enumerate() {
                    let mixed: f64 = (0..atoms.rows()).map(|k| alpha[k] * atoms.row(k)[j]).sum();
                    mixing = mixing.max((mixed - th).abs());
                }
                checked += 1;
            }
        }
    }
    let detail = format!("{checked} interval explanations, simplex {simplex:.1e}, mixing {mixing:.1e}");
    ensure(simplex <= 1e-6 && mixing <= 1e-5, || detail.clone())?;
    Ok(detail)
}

fn table_reproduction() -> Option<Check> {
    let path = std::env::var_os("SUPPORT2_CSV")?;
    Some((|| {
        let d = ingest_support2(Path::new(&path), &IngestConfig::default()).map_err(|e| e.to_string())?;
        let crf = kfold_eval(&ModelSpec::new(Family::Crf), &d, 5, 0).map_err(|e| e.to_string())?;
        let cen = kfold_eval(&ModelSpec::new(Family::MlpCen), &d, 5, 0).map_err(|e| e.to_string())?;
        let reference = [84.4, 89.3, 79.2];
        let got = crf.mean.accuracies();
        let wins = crf
            .folds
            .iter()
            .zip(&cen.folds)
            .filter(|(c, n)| n.acc75 >= c.acc75)
            .count();
        let detail = format!(
            "CRF Acc {:.1}/{:.1}/{:.1} RAE {:.3}; MLP-CEN Acc@75 >= CRF on {wins}/5 folds",
            got[0], got[1], got[2], crf.mean.rae
        );
        let in_band = got.iter().zip(&reference).all(|(g, r)| (g - r).abs() <= 3.0)
            && (crf.mean.rae - 0.59).abs() <= 0.10;
        ensure(in_band && wins >= 4, || detail.clone())?;
        Ok(detail)
    })())
}

fn censurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_censurv"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("run censurv")
}

fn expect_ok(o: &Output, what: &str) -> Result<(), String> {
    ensure(o.status.success(), || {
        format!("{what}: exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr))
    })
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = r.headers().map_err(|e| e.to_string())?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok((header, rows))
}

fn numeric(cells: &[String]) -> Result<Vec<f64>, String> {
    cells
        .iter()
        .map(|c| c.parse::<f64>().map_err(|_| format!("not a number: {c:?}")))
        .collect()
}

fn smoke() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let m = 10;
    for (name, extra) in [("static.jsonl", vec![]), ("series.jsonl", vec!["--series-len", "4"])] {
        let mut args = vec!["ingest", "synthetic", "--n", "200", "--m", "10", "--d-x", "5", "--d-c", "4"];
        let out = p(name);
        args.extend(["--out", out.as_str()]);
        args.extend(extra);
        expect_ok(&censurv(&args), "ingest")?;
    }

    for family in Family::ALL {
        let fam = family.as_str();
        let data = if fam.starts_with("lstm") { p("series.jsonl") } else { p("static.jsonl") };
        let model = p(&format!("{fam}.model"));
        let o = censurv(&["train", "--data", &data, "--family", fam, "--epochs", "5", "--out", &model]);
        expect_ok(&o, &format!("train {fam}"))?;

        let eval_out = p(&format!("{fam}.csv"));
        expect_ok(&censurv(&["eval", "--data", &data, "--artifact", &model, "--out", &eval_out]), "eval")?;
        let (header, rows) = read_csv(Path::new(&eval_out))?;
        ensure(header[..5] == ["model", "acc25", "acc50", "acc75", "rae"], || format!("eval header {header:?}"))?;
        ensure(rows.len() == 1, || format!("{fam}: {} eval rows", rows.len()))?;
        for v in numeric(&rows[0][1..4])? {
            ensure((0.0..=100.0).contains(&v), || format!("{fam}: accuracy {v}"))?;
        }

        let out_dir = p(&format!("{fam}-explain"));
        let o = censurv(&["explain", "--artifact", &model, "--data", &data, "--patient", "s000000", "--out-dir", &out_dir]);
        if matches!(family, Family::MlpCrf | Family::LstmCrf) {
            ensure(o.status.code() == Some(6), || format!("{fam}: explain exit {:?}", o.status.code()))?;
            continue;
        }
        expect_ok(&o, &format!("explain {fam}"))?;
        let out_dir = Path::new(&out_dir);
        let (header, rows) = read_csv(&out_dir.join("explanation.csv"))?;
        ensure(header.len() == m + 1 && header[0] == "feature" && header[m] == format!("interval_{m}"), || {
            format!("{fam}: explanation header {header:?}")
        })?;
        ensure(!rows.is_empty(), || format!("{fam}: empty explanation"))?;
        for row in &rows {
            numeric(&row[1..])?;
        }
        let (header, rows) = read_csv(&out_dir.join("survival.csv"))?;
        ensure(header == ["time_days", "survival_prob"] && rows.len() == m + 1, || {
            format!("{fam}: survival.csv {header:?} with {} rows", rows.len())
        })?;
        let s: Vec<f64> = rows.iter().map(|r| numeric(&r[1..])).collect::<Result<Vec<_>, _>>()?.concat();
        ensure(s[0] == 1.0 && s.windows(2).all(|w| w[1] <= w[0]) && s.iter().all(|v| (0.0..=1.0).contains(v)), || {
            format!("{fam}: survival curve {s:?}")
        })?;
        if family.is_cen() {
            let (_, rows) = read_csv(&out_dir.join("attention.csv"))?;
            ensure(rows.len() == m, || format!("{fam}: {} attention rows", rows.len()))?;
            for row in &rows {
                let total: f64 = numeric(&row[1..])?.iter().sum();
                ensure((total - 1.0).abs() <= 1e-6, || format!("{fam}: attention sums to {total}"))?;
            }
        }
    }
    Ok("7 families trained, evaluated and explained".into())
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let minutes = |n: u64| Duration::from_secs(60 * n);
    let results = [
        run(1, "oracle equivalence", Duration::from_secs(5), || Some(oracle_equivalence())),
        run(2, "normalization", Duration::from_secs(5), || Some(normalization())),
        run(3, "gradient suite", Duration::from_secs(60), || Some(gradient_suite())),
        run(4, "parameter recovery", minutes(10), || Some(parameter_recovery())),
        run(5, "trivial identities", Duration::from_secs(60), || Some(trivial_identities())),
        run(6, "CEN invariants", minutes(5), || Some(cen_invariants())),
        run(7, "SUPPORT2 reproduction", minutes(60), table_reproduction),
        run(8, "end-to-end smoke", minutes(5), || Some(smoke())),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of 8 criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
