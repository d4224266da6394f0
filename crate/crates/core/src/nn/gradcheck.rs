//! Central finite-difference gradient verification.

use super::param::Parameterized;
use crate::seed;
use rand::Rng as _;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }
}

/// Relative error with an absolute floor so that two vanishing gradients
/// compare as equal.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compare analytic gradients against `(L(w+h) - L(w-h)) / 2h` for
/// `n_samples` trainable scalars drawn uniformly over all trainable elements.
///
/// `loss(model, backward)` must zero nothing itself; it returns the loss and,
/// when `backward` is set, accumulates gradients into the model's params.
pub fn check_gradients<M, F>(model: &mut M, mut loss: F, n_samples: usize, step: f64, seed: u64) -> GradCheckReport
where
    M: Parameterized,
    F: FnMut(&mut M, bool) -> f64,
{
    model.zero_grad();
    loss(model, true);

    let mut sizes = Vec::new();
    let mut names = Vec::new();
    let mut grads = Vec::new();
    model.visit_params("", &mut |name, p| {
        if p.trainable {
            sizes.push(p.value.len());
            names.push(name.to_string());
            grads.push(p.grad.data().to_vec());
        }
    });
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return GradCheckReport { checks: Vec::new() };
    }
    let mut rng = seed::rng(seed);
    let mut checks = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let analytic = grads[which][flat];
        let numeric = {
            let perturb = |delta: f64, model: &mut M| {
                let mut k = 0;
                model.visit_params("", &mut |_, p| {
                    if p.trainable {
                        if k == which {
                            p.value.data_mut()[flat] += delta;
                        }
                        k += 1;
                    }
                });
            };
            perturb(step, model);
            let lp = loss(model, false);
            perturb(-2.0 * step, model);
            let lm = loss(model, false);
            perturb(step, model);
            (lp - lm) / (2.0 * step)
        };
        checks.push(ParamCheck {
            name: names[which].clone(),
            index: flat,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric, 1e-7),
        });
    }
    GradCheckReport { checks }
}
