//! Projected iterative soft-thresholding for the sparse SENSE model
//! `min_x λ‖Ψx‖₁ + ½ Σ_j ‖U F C_j x − y_j‖²` with the Haar tight frame as Ψ.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::frame::{analyze, soft_threshold, synthesize};
use crate::metrics::rlne;
use crate::numerics::ComplexImage;
use crate::sense::{self, CoilSensitivities, MultiCoilKSpace, SamplingMask};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// FISTA extrapolation between iterations. Off by default.
    pub momentum: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lambda: 1e-3,
            max_iters: 200,
            tol: 1e-6,
            momentum: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 2), got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid(format!("tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverDiagnostics {
    /// Objective value after each iteration.
    pub objective: Vec<f64>,
    /// RLNE against the reference after each iteration, when one was supplied.
    pub rlne: Option<Vec<f64>>,
    pub iterations_run: usize,
}

/// `λ‖Ψx‖₁ + ½ Σ_j ‖A_j x − y_j‖²`
pub fn objective(
    x: &ComplexImage,
    y: &MultiCoilKSpace,
    c: &CoilSensitivities,
    u: &SamplingMask,
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let ax = sense::sense_forward(x, c, u)?;
    if ax.coils() != y.coils() || ax.dims() != y.dims() {
        return Err(Error::shape("k-space does not match the encoding operator"));
    }
    let data: f64 = ax
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| a.sub(b).norm_sqr())
        .sum();
    let reg = if lambda == 0.0 { 0.0 } else { lambda * analyze(x)?.l1_norm() };
    Ok(reg + 0.5 * data)
}

/// Runs the iteration from `x₀ = 0` until `max_iters` or the relative
/// iterate change drops below `tol`.
pub fn reconstruct_pista(
    y: &MultiCoilKSpace,
    c: &CoilSensitivities,
    u: &SamplingMask,
    cfg: &SolverConfig,
    reference: Option<&ComplexImage>,
) -> Result<(ComplexImage, SolverDiagnostics)> {
    cfg.validate()?;
    let (h, w) = y.dims();
    if c.dims() != (h, w) || u.dims() != (h, w) || c.coils() != y.coils() {
        return Err(Error::shape("k-space, coil maps and mask disagree"));
    }
    if let Some(r) = reference {
        if r.dims() != (h, w) {
            return Err(Error::shape("reference image does not match k-space"));
        }
    }

    let threshold = cfg.lambda * cfg.gamma;
    let mut x = ComplexImage::zeros(h, w);
    // extrapolated point; equals x when momentum is off
    let mut z = x.clone();
    let mut t_k = 1.0f64;
    let mut diag = SolverDiagnostics {
        rlne: reference.map(|_| Vec::new()),
        ..Default::default()
    };

    for _ in 0..cfg.max_iters {
        let (t, _) = sense::dc_step(&z, y.data(), c, u, cfg.gamma);
        let next = synthesize(&soft_threshold(&analyze(&t)?, threshold)?)?;

        let change = next.sub(&x).norm();
        let prev_norm = x.norm();

        if cfg.momentum {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
            let beta = (t_k - 1.0) / t_next;
            z = next.clone();
            z.axpy(Complex64::new(beta, 0.0), &next.sub(&x));
            t_k = t_next;
        } else {
            z = next.clone();
        }
        x = next;

        diag.iterations_run += 1;
        diag.objective.push(objective(&x, y, c, u, cfg.lambda)?);
        if let (Some(r), Some(trace)) = (reference, diag.rlne.as_mut()) {
            trace.push(rlne(r, &x)?);
        }

        let converged = if prev_norm > 0.0 {
            change / prev_norm < cfg.tol
        } else {
            change == 0.0
        };
        if converged {
            break;
        }
    }
    Ok((x, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sense::sense_forward;
    use crate::testutil::random_image;

    fn random_coils(j: usize, h: usize, w: usize, seed: u64) -> CoilSensitivities {
        let maps = (0..j).map(|i| random_image(h, w, seed + i as u64)).collect();
        CoilSensitivities::normalized(maps).unwrap()
    }

    /// Term-by-term scalar evaluation of the objective.
    fn objective_oracle(x: &ComplexImage, y: &MultiCoilKSpace, c: &CoilSensitivities, u: &SamplingMask, lambda: f64) -> f64 {
        use std::f64::consts::PI;
        let (h, w) = x.dims();
        let mut reg = 0.0;
        let signs = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
        for (sv, sh) in signs {
            for r in 0..h {
                for cc in 0..w {
                    let v = 0.25
                        * (x[(r, cc)]
                            + x[(r, (cc + 1) % w)] * sh
                            + x[((r + 1) % h, cc)] * sv
                            + x[((r + 1) % h, (cc + 1) % w)] * (sv * sh));
                    reg += v.norm();
                }
            }
        }
        let mut data = 0.0;
        let scale = 1.0 / ((h * w) as f64).sqrt();
        for j in 0..c.coils() {
            for kr in 0..h {
                for kc in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    if u.lines().contains(&kr) {
                        for r in 0..h {
                            for cc in 0..w {
                                let ph = -2.0 * PI
                                    * ((kr as f64 - (h / 2) as f64) * (r as f64 - (h / 2) as f64) / h as f64
                                        + (kc as f64 - (w / 2) as f64) * (cc as f64 - (w / 2) as f64) / w as f64);
                                acc += Complex64::from_polar(scale, ph) * c.map(j)[(r, cc)] * x[(r, cc)];
                            }
                        }
                    }
                    data += (acc - y.coil(j)[(kr, kc)]).norm_sqr();
                }
            }
        }
        lambda * reg + 0.5 * data
    }

    #[test]
    fn objective_reductions_and_oracle() {
        let (h, w) = (6, 8);
        let c = random_coils(2, h, w, 1);
        let u = SamplingMask::new(h, w, vec![0, 2, 3]).unwrap();
        let xt = random_image(h, w, 5);
        let y = sense_forward(&xt, &c, &u).unwrap();

        let zero = objective(&ComplexImage::zeros(h, w), &y, &c, &u, 0.3).unwrap();
        assert!((zero - 0.5 * y.norm_sqr()).abs() < 1e-12);
        assert!(objective(&xt, &y, &c, &u, 0.0).unwrap().abs() < 1e-24);

        let x = random_image(h, w, 9);
        let got = objective(&x, &y, &c, &u, 0.07).unwrap();
        let expect = objective_oracle(&x, &y, &c, &u, 0.07);
        assert!((got - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn exact_recovery_at_full_sampling() {
        let (h, w) = (8, 8);
        let c = random_coils(3, h, w, 2);
        let u = SamplingMask::full(h, w);
        let xt = random_image(h, w, 3);
        let y = sense_forward(&xt, &c, &u).unwrap();
        let cfg = SolverConfig { lambda: 0.0, max_iters: 1, ..Default::default() };
        let (x, diag) = reconstruct_pista(&y, &c, &u, &cfg, Some(&xt)).unwrap();
        assert_eq!(diag.iterations_run, 1);
        assert!(rlne(&xt, &x).unwrap() < 1e-10);
        assert_eq!(diag.rlne.unwrap().len(), 1);
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let (h, w) = (8, 8);
        let c = random_coils(2, h, w, 2);
        let u = SamplingMask::new(h, w, vec![3, 4]).unwrap();
        let y = sense_forward(&ComplexImage::zeros(h, w), &c, &u).unwrap();
        let cfg = SolverConfig { lambda: 1e12, ..Default::default() };
        let (x, diag) = reconstruct_pista(&y, &c, &u, &cfg, None).unwrap();
        assert_eq!(x.norm(), 0.0);
        assert_eq!(diag.iterations_run, 1);

        let y2 = sense_forward(&random_image(h, w, 1), &c, &u).unwrap();
        let (x2, _) = reconstruct_pista(&y2, &c, &u, &cfg, None).unwrap();
        assert_eq!(x2.norm(), 0.0);
    }

    #[test]
    fn fixed_point_moves_at_most_the_threshold_bound() {
        let (h, w) = (8, 8);
        let c = random_coils(2, h, w, 4);
        let u = SamplingMask::new(h, w, vec![1, 3, 4, 6]).unwrap();
        let xt = random_image(h, w, 8);
        let y = sense_forward(&xt, &c, &u).unwrap();
        let cfg = SolverConfig { lambda: 1e-3, max_iters: 1, ..Default::default() };
        // one step starting from x*: emulate by running the update directly
        let (t, _) = sense::dc_step(&xt, y.data(), &c, &u, cfg.gamma);
        let next = synthesize(&soft_threshold(&analyze(&t).unwrap(), cfg.lambda * cfg.gamma).unwrap()).unwrap();
        let bound = cfg.lambda * cfg.gamma * ((4 * h * w) as f64).sqrt();
        assert!(next.sub(&xt).norm() <= bound);
    }

    #[test]
    fn deterministic_and_validated() {
        let (h, w) = (8, 8);
        let c = random_coils(2, h, w, 4);
        let u = SamplingMask::new(h, w, vec![0, 4, 5]).unwrap();
        let y = sense_forward(&random_image(h, w, 1), &c, &u).unwrap();
        let cfg = SolverConfig { max_iters: 20, ..Default::default() };
        let a = reconstruct_pista(&y, &c, &u, &cfg, None).unwrap();
        let b = reconstruct_pista(&y, &c, &u, &cfg, None).unwrap();
        assert_eq!(a, b);

        for bad in [
            SolverConfig { gamma: 2.0, ..Default::default() },
            SolverConfig { gamma: 0.0, ..Default::default() },
            SolverConfig { lambda: -1.0, ..Default::default() },
            SolverConfig { max_iters: 0, ..Default::default() },
        ] {
            assert!(matches!(reconstruct_pista(&y, &c, &u, &bad, None), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn objective_decreases_on_random_problem() {
        let (h, w) = (16, 16);
        let c = random_coils(3, h, w, 40);
        let u = SamplingMask::new(h, w, vec![2, 5, 7, 8, 9, 12]).unwrap();
        let y = sense_forward(&random_image(h, w, 41), &c, &u).unwrap();
        let cfg = SolverConfig { lambda: 1e-2, max_iters: 60, tol: 0.0, ..Default::default() };
        let (_, diag) = reconstruct_pista(&y, &c, &u, &cfg, None).unwrap();
        for pair in diag.objective.windows(2).skip(1) {
            assert!(pair[1] <= pair[0] + 1e-9, "{pair:?}");
        }
    }

    #[test]
    fn momentum_runs_and_is_distinct() {
        let (h, w) = (16, 16);
        let c = random_coils(3, h, w, 50);
        let u = SamplingMask::new(h, w, vec![1, 5, 7, 8, 9, 13]).unwrap();
        let xt = random_image(h, w, 51);
        let y = sense_forward(&xt, &c, &u).unwrap();
        let base = SolverConfig { lambda: 1e-3, max_iters: 30, tol: 0.0, ..Default::default() };
        let fast = SolverConfig { momentum: true, ..base.clone() };
        let (_, d0) = reconstruct_pista(&y, &c, &u, &base, None).unwrap();
        let (_, d1) = reconstruct_pista(&y, &c, &u, &fast, None).unwrap();
        assert_ne!(d0.objective, d1.objective);
        assert!(d1.objective.last().unwrap() <= d0.objective.last().unwrap());
    }
}
