use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates checked per tensor; larger tensors are sampled at an even
    /// stride.
    pub max_coords_per_tensor: usize,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as the
    /// denominator so that near-zero gradients are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            tolerance: 1e-5,
            max_coords_per_tensor: 64,
            floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare the gradients `f` writes into the store against central
/// differences of the value it returns. `f` must be deterministic and must
/// populate every gradient slot it depends on; unset slots count as zero.
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, opts: GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&mut ParamStore) -> f64,
{
    store.clear_grads();
    f(store);
    let analytic: Vec<(String, Vec<f64>)> = store
        .iter()
        .map(|(name, p)| {
            let g = p
                .grad
                .as_ref()
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; p.value.len()]);
            (name.to_owned(), g)
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance: opts.tolerance,
    };
    for (name, grad) in &analytic {
        let n = grad.len();
        let picks: Vec<usize> = if n <= opts.max_coords_per_tensor {
            (0..n).collect()
        } else {
            (0..opts.max_coords_per_tensor)
                .map(|i| i * n / opts.max_coords_per_tensor)
                .collect()
        };
        for idx in picks {
            let orig = store.get(name).expect("name from store").data()[idx];
            store.get_mut(name).expect("name").data_mut()[idx] = orig + opts.step;
            let up = f(store);
            store.get_mut(name).expect("name").data_mut()[idx] = orig - opts.step;
            let down = f(store);
            store.get_mut(name).expect("name").data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(grad[idx], numeric, opts.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    // leave the analytic gradients in place
    store.clear_grads();
    f(store);
    report
}
