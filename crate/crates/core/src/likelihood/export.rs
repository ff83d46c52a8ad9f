use std::io::Write;

use super::ExplanationSet;
use crate::survival::TimeGrid;

/// Indices of the `k` attributes with the largest mean `|weight|` across
/// intervals, skipping attribute 0 (the bias). Ties keep attribute order.
pub fn top_k_features(e: &ExplanationSet, k: usize) -> Vec<usize> {
    let m = e.m().max(1) as f64;
    let mut ranked: Vec<(usize, f64)> = (1..e.d_x())
        .map(|j| {
            let mean = e.thetas.iter().map(|th| th[j].abs()).sum::<f64>() / m;
            (j, mean)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(j, _)| j).collect()
}

/// Heatmap data: header `feature,interval_1,…,interval_m`, one row per
/// selected attribute.
pub fn write_explanation_csv<W: Write>(
    names: &[String],
    e: &ExplanationSet,
    rows: &[usize],
    w: W,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["feature".to_string()];
    header.extend((1..=e.m()).map(|t| format!("interval_{t}")));
    out.write_record(&header)?;
    for &j in rows {
        let mut row = vec![names[j].clone()];
        row.extend(e.thetas.iter().map(|th| th[j].to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `time_days,survival_prob`, one row per grid boundary.
pub fn write_curve_csv<W: Write>(grid: &TimeGrid, curve: &[f64], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time_days", "survival_prob"])?;
    for (t, s) in grid.boundaries().iter().zip(curve) {
        out.write_record([t.to_string(), s.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::PairwisePotentials;

    #[test]
    fn csv_shapes() {
        let e = ExplanationSet {
            thetas: vec![vec![0.1, -2.0, 0.5], vec![0.2, 1.0, 0.0]],
            pairwise: PairwisePotentials::DISABLED,
        };
        let names: Vec<String> = ["bias", "a", "b"].iter().map(|s| s.to_string()).collect();
        let mut buf = Vec::new();
        write_explanation_csv(&names, &e, &[0, 1, 2], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "feature,interval_1,interval_2");
        assert_eq!(lines[2], "a,-2,1");
        assert_eq!(lines.len(), 4);

        assert_eq!(top_k_features(&e, 1), vec![1]);
        assert_eq!(top_k_features(&e, 5), vec![1, 2]);

        let grid = TimeGrid::uniform(2, 7.0).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&grid, &[1.0, 0.5, 0.25], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "time_days,survival_prob\n0,1\n7,0.5\n14,0.25\n");
    }
}
