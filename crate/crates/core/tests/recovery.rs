//! A plain CRF fitted to data drawn from a known CRF should find the
//! generating weights and beat every constant survivor call.

use cen_survival::metrics::kfold_eval;
use cen_survival::models::{fit, Family, ModelSpec};
use cen_survival::pipelines::{gen_synthetic, GeneratorFamily, GroundTruth, SyntheticSpec};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn crf_recovers_generating_weights() {
    let spec = SyntheticSpec {
        censoring_rate: 0.3,
        effect_scale: 2.0,
        ..SyntheticSpec::new(GeneratorFamily::Crf, 5000, 10, 9, 20)
    };
    let (d, truth) = gen_synthetic(&spec).unwrap();
    assert!((d.censoring_rate() - 0.3).abs() < 0.05);
    let GroundTruth::Crf { theta } = truth else { unreachable!() };

    let mut ms = ModelSpec::new(Family::Crf);
    ms.optimizer.lr = 0.002;
    let a = fit(&ms, &d, &d.subset(&[])).unwrap();
    let meta = &a.meta;
    assert!(meta.final_train_loss.unwrap() <= meta.initial_train_loss.unwrap());

    let learned = a.explain(&d.records[0]).unwrap().set.thetas;
    assert_eq!(learned, a.explain(&d.records[1]).unwrap().set.thetas);
    let r = pearson(&learned.concat(), &theta.concat());
    assert!(r > 0.9, "correlation {r}");

    let cv = kfold_eval(&ms, &d, 5, 0).unwrap();
    let gap = cv.mean.acc50 - cv.constant_baseline[1];
    assert!(gap >= 10.0, "Acc@50 {} vs constant {}", cv.mean.acc50, cv.constant_baseline[1]);
}
