//! Finite-difference verification of analytic gradients.
//!
//! The checker projects a layer's output onto a random direction `c`, so the
//! scalar objective is `L(x, theta) = sum(c * forward(x))`. Analytic
//! gradients come from one `backward(c)` call; numerical ones from central
//! differences `(L(v + eps) - L(v - eps)) / (2 eps)` applied to every input
//! and parameter component.
//!
//! Finite differences are only meaningful where the function is smooth at
//! the scale of `eps`. Callers draw random trials and consult
//! [`DiffLayer::kink_distance`] to discard those that sit within a few
//! `eps` of a ReLU corner or pooling tie; see [`KINK_MARGIN_FACTOR`].

use crate::{Error, Result};
use rand::Rng;

use super::{DiffLayer, Tensor};

/// Trials whose kink distance is below `KINK_MARGIN_FACTOR * eps` are
/// rejected. A single component perturbed by `eps` moves any downstream
/// pre-activation by at most `eps` times the largest factor it is
/// multiplied with, so a handful of eps of clearance is enough for the
/// layer sizes and unit-scale data used in the tests.
pub const KINK_MARGIN_FACTOR: f64 = 4.0;

/// Default perturbation size. Large enough that f64 rounding in the loss
/// difference is negligible, small enough that curvature error stays well
/// under the acceptance threshold.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Relative-error threshold below which analytic and numerical gradients
/// are considered to agree.
pub const REL_ERR_TOLERANCE: f64 = 1e-4;

/// Symmetric relative error with an absolute floor, so comparisons between
/// two near-zero gradients do not explode.
pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Outcome of one gradient check: the worst relative error seen and where.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub layer: String,
    pub max_rel_err: f64,
    pub components_checked: usize,
    /// Human-readable location of the worst component, e.g. `param[0][17]`.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_ERR_TOLERANCE
    }
}

/// Checks one layer on one input. Returns `Error::GradCheck` if the trial
/// lands too close to a kink for finite differences to be trusted; callers
/// doing randomized trials should resample the input in that case (see
/// [`check_layer_randomized`]).
pub fn check_layer(
    layer: &mut dyn DiffLayer,
    input: &Tensor,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let y = layer.forward(input)?;
    if layer.kink_distance() < KINK_MARGIN_FACTOR * eps {
        return Err(Error::GradCheck(format!(
            "{}: trial too close to a non-differentiable point (distance {:.2e})",
            layer.name(),
            layer.kink_distance()
        )));
    }
    let c = Tensor::uniform(y.shape(), -1.0, 1.0, rng);

    // Analytic pass: input gradient from backward, parameter gradients
    // snapshotted before the numerical passes overwrite any layer state.
    let d_input = layer.backward(&c)?;
    let param_grads: Vec<Tensor> = layer.grads().into_iter().cloned().collect();

    let loss = |layer: &mut dyn DiffLayer, x: &Tensor| -> Result<f64> {
        let out = layer.forward(x)?;
        Ok(out
            .data()
            .iter()
            .zip(c.data())
            .map(|(o, w)| o * w)
            .sum())
    };

    let mut report = GradCheckReport {
        layer: layer.name().to_string(),
        max_rel_err: 0.0,
        components_checked: 0,
        worst: String::new(),
    };
    let record = |report: &mut GradCheckReport, analytic: f64, numeric: f64, at: String| {
        let e = rel_err(analytic, numeric);
        report.components_checked += 1;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst = at;
        }
    };

    // Input components.
    let mut x = input.clone();
    for i in 0..x.len() {
        let v = x.data()[i];
        x.data_mut()[i] = v + eps;
        let lp = loss(layer, &x)?;
        x.data_mut()[i] = v - eps;
        let lm = loss(layer, &x)?;
        x.data_mut()[i] = v;
        record(
            &mut report,
            d_input.data()[i],
            (lp - lm) / (2.0 * eps),
            format!("input[{i}]"),
        );
    }

    // Parameter components, tensor by tensor.
    let n_params = param_grads.len();
    for t in 0..n_params {
        for i in 0..param_grads[t].len() {
            let v = layer.params_mut()[t].data()[i];
            layer.params_mut()[t].data_mut()[i] = v + eps;
            let lp = loss(layer, input)?;
            layer.params_mut()[t].data_mut()[i] = v - eps;
            let lm = loss(layer, input)?;
            layer.params_mut()[t].data_mut()[i] = v;
            record(
                &mut report,
                param_grads[t].data()[i],
                (lp - lm) / (2.0 * eps),
                format!("param[{t}][{i}]"),
            );
        }
    }

    Ok(report)
}

/// Runs [`check_layer`] over `trials` random unit-scale inputs built by
/// `make`, resampling any trial that lands too close to a kink. `make`
/// receives the rng and the trial number and returns (layer, input).
pub fn check_layer_randomized<L, F>(
    mut make: F,
    trials: usize,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    L: DiffLayer,
    F: FnMut(&mut dyn rand::RngCore) -> (L, Tensor),
{
    let mut worst: Option<GradCheckReport> = None;
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < trials {
        attempts += 1;
        if attempts > trials * 200 {
            return Err(Error::GradCheck(
                "could not find enough kink-free trials; inputs may be degenerate".into(),
            ));
        }
        let (mut layer, input) = make(rng);
        match check_layer(&mut layer, &input, eps, rng) {
            Ok(report) => {
                done += 1;
                let replace = worst
                    .as_ref()
                    .map(|w| report.max_rel_err > w.max_rel_err)
                    .unwrap_or(true);
                if replace {
                    worst = Some(report);
                }
            }
            // Too close to a kink: resample.
            Err(Error::GradCheck(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(worst.expect("at least one trial"))
}
