use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::unrolled::{backward_from_trace, forward_traced, loss_and_pattern};
use crate::net::{NetworkParams, TensorId, TensorKind};
use crate::sim::Sample;

/// Sampling and tolerance settings for [`grad_check_with`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Number of non-excluded entries to compare.
    pub entries: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is near zero are judged on absolute error instead.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            entries: 256,
            seed: 0,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Largest gradient magnitude seen, analytic or numeric, over every
    /// evaluated entry including excluded ones.
    pub max_abs_gradient: f64,
    pub checked: usize,
    /// Entries skipped because a ±step perturbation flips a ReLU or a
    /// shrinkage unit.
    pub excluded: usize,
    /// Tensor kinds that contributed at least one checked entry.
    pub kinds: BTreeSet<&'static str>,
    pub worst: Option<(TensorId, usize)>,
}

pub fn kind_name(kind: TensorKind) -> &'static str {
    match kind {
        TensorKind::Gamma => "gamma",
        TensorKind::Lambda => "lambda",
        TensorKind::ForwardWeight(_) => "forward_weight",
        TensorKind::ForwardBias(_) => "forward_bias",
        TensorKind::BackwardWeight(_) => "backward_weight",
        TensorKind::BackwardBias(_) => "backward_bias",
    }
}

/// [`grad_check_with`] using default options.
pub fn grad_check(params: &NetworkParams, sample: &Sample, step: f64) -> Result<GradCheckReport> {
    grad_check_with(params, sample, step, &GradCheckOptions::default())
}

/// Compares analytic gradients with central differences of the loss on a
/// random subset of entries. Every tensor is visited at least once before
/// entries are drawn uniformly from the rest.
pub fn grad_check_with(params: &NetworkParams, sample: &Sample, step: f64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let (y, c, u, truth) = (&sample.kspace, &sample.coils, &sample.mask, &sample.truth);
    let trace = forward_traced(y, c, u, params)?;
    let base_pattern = trace.activation_pattern();
    let grads = backward_from_trace(&trace, c, u, params, truth);
    let grad_tensors = grads.tensors();
    let ids: Vec<TensorId> = grad_tensors.iter().map(|(id, _)| *id).collect();
    let sizes: Vec<usize> = grad_tensors.iter().map(|(_, t)| t.len()).collect();
    let total: usize = sizes.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut candidates: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(t, &n)| (t, rng.gen_range(0..n))).collect();
    let mut seen: HashSet<(usize, usize)> = candidates.iter().copied().collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        max_abs_gradient: 0.0,
        checked: 0,
        excluded: 0,
        kinds: BTreeSet::new(),
        worst: None,
    };
    let mut work = params.clone();
    let mut next = 0;
    while report.checked < opts.entries {
        if next == candidates.len() {
            if seen.len() == total {
                break;
            }
            let mut flat = rng.gen_range(0..total);
            let mut t = 0;
            while flat >= sizes[t] {
                flat -= sizes[t];
                t += 1;
            }
            if seen.insert((t, flat)) {
                candidates.push((t, flat));
            }
            continue;
        }
        let (t, i) = candidates[next];
        next += 1;

        let orig = work.tensors_mut()[t][i];
        work.tensors_mut()[t][i] = orig + step;
        let (lp, pp) = loss_and_pattern(y, c, u, &work, truth)?;
        work.tensors_mut()[t][i] = orig - step;
        let (lm, pm) = loss_and_pattern(y, c, u, &work, truth)?;
        work.tensors_mut()[t][i] = orig;
        let numeric = (lp - lm) / (2.0 * step);
        let analytic = grad_tensors[t].1[i];
        report.max_abs_gradient = report.max_abs_gradient.max(numeric.abs()).max(analytic.abs());
        if pp != base_pattern || pm != base_pattern {
            report.excluded += 1;
            continue;
        }
        let abs = (numeric - analytic).abs();
        let rel = abs / numeric.abs().max(analytic.abs()).max(opts.floor);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((ids[t], i));
        }
        report.kinds.insert(kind_name(ids[t].kind));
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{xavier_init, Activation, NetworkShape, Variant};
    use crate::par::Exec;
    use crate::sense::{sense_forward, SamplingMask};
    use crate::sim::{generate_dataset, DatasetSpec};

    fn shape(activation: Activation, variant: Variant) -> NetworkShape {
        NetworkShape {
            blocks: 2,
            layers: 2,
            channels: 8,
            kernel: 3,
            variant,
            activation,
        }
    }

    fn sample() -> Sample {
        let mut spec = DatasetSpec::desk(1, 11);
        spec.size = 16;
        spec.coils = 2;
        spec.center_lines = 2;
        generate_dataset(&spec, Exec::Sequential).unwrap().remove(0)
    }

    fn params(s: NetworkShape) -> NetworkParams {
        let mut p = xavier_init(&s, 5).unwrap();
        for b in p.blocks.iter_mut() {
            b.lambda = 0.02;
        }
        p
    }

    #[test]
    fn relu_network_passes() {
        let s = sample();
        for v in [Variant::ResNet, Variant::Net] {
            let r = grad_check(&params(shape(Activation::Relu, v)), &s, 1e-5).unwrap();
            assert!(r.checked >= 200);
            assert_eq!(r.kinds.len(), 6, "{:?}", r.kinds);
            assert!(r.max_rel_error <= 1e-4, "{v:?}: {r:?}");
        }
    }

    #[test]
    fn linear_network_is_tighter() {
        let s = sample();
        let r = grad_check(&params(shape(Activation::Identity, Variant::ResNet)), &s, 1e-5).unwrap();
        assert!(r.checked >= 200);
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
    }

    #[test]
    fn zero_loss_point_has_vanishing_gradients() {
        let mut s = sample();
        let full = SamplingMask::full(16, 16);
        s.kspace = sense_forward(&s.truth, &s.coils, &full).unwrap();
        s.mask = full;
        let p = NetworkParams::zeros(shape(Activation::Relu, Variant::ResNet)).unwrap();
        let r = grad_check_with(&p, &s, 1e-5, &GradCheckOptions { entries: 50, ..Default::default() }).unwrap();
        assert!(r.max_abs_gradient <= 1e-9, "{r:?}");
    }

    #[test]
    fn rejects_bad_step() {
        let s = sample();
        let p = params(shape(Activation::Relu, Variant::ResNet));
        assert!(grad_check(&p, &s, 0.0).is_err());
        assert!(grad_check(&p, &s, f64::NAN).is_err());
    }
}
