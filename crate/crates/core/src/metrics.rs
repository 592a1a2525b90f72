//! Reconstruction quality: RLNE, mean SSIM and aggregate reports.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ComplexImage;
use crate::par::Exec;
use crate::sim::Sample;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `‖x − x̂‖₂ / ‖x‖₂`
pub fn rlne(truth: &ComplexImage, estimate: &ComplexImage) -> Result<f64> {
    truth.check_same_shape(estimate, "rlne")?;
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(truth.sub(estimate).norm() / denom)
}

/// Normalized 11×11 Gaussian window, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| {
            let (r, c) = ((i / SSIM_WINDOW) as f64 - half, (i % SSIM_WINDOW) as f64 - half);
            (-(r * r + c * c) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mean SSIM of the magnitude images, both scaled so the reference peak is 1.
pub fn mssim(truth: &ComplexImage, estimate: &ComplexImage) -> Result<f64> {
    truth.check_same_shape(estimate, "mssim")?;
    let (h, w) = truth.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "mssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let peak = truth.max_magnitude();
    if peak == 0.0 {
        return Err(Error::ZeroReference);
    }
    let a: Vec<f64> = truth.data().iter().map(|z| z.norm() / peak).collect();
    let b: Vec<f64> = estimate.data().iter().map(|z| z.norm() / peak).collect();
    Ok(mssim_real(&a, &b, h, w))
}

/// Mean SSIM on real images already in dynamic range `L = 1`.
pub(crate) fn mssim_real(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let (mh, mw) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for r0 in 0..mh {
        for c0 in 0..mw {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            for wr in 0..SSIM_WINDOW {
                let row = (r0 + wr) * w + c0;
                for wc in 0..SSIM_WINDOW {
                    let k = win[wr * SSIM_WINDOW + wc];
                    mu_a += k * a[row + wc];
                    mu_b += k * b[row + wc];
                }
            }
            let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
            for wr in 0..SSIM_WINDOW {
                let row = (r0 + wr) * w + c0;
                for wc in 0..SSIM_WINDOW {
                    let k = win[wr * SSIM_WINDOW + wc];
                    let da = a[row + wc] - mu_a;
                    let db = b[row + wc] - mu_b;
                    var_a += k * (da * da);
                    var_b += k * (db * db);
                    cov += k * (da * db);
                }
            }
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    }
    total / (mh * mw) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub rlne: f64,
    pub mssim: f64,
}

/// Table-style summary of one method on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub method: String,
    pub af: f64,
    pub per_image: Vec<ImageScore>,
    pub mean_rlne: f64,
    pub std_rlne: f64,
    pub mean_mssim: f64,
    pub std_mssim: f64,
    pub sec_per_slice: f64,
}

/// Mean and sample standard deviation (divisor n − 1; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

impl ReconReport {
    pub fn from_scores(method: impl Into<String>, af: f64, per_image: Vec<ImageScore>, sec_per_slice: f64) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Empty("report needs at least one image".into()));
        }
        let r: Vec<f64> = per_image.iter().map(|s| s.rlne).collect();
        let m: Vec<f64> = per_image.iter().map(|s| s.mssim).collect();
        let (mean_rlne, std_rlne) = mean_std(&r);
        let (mean_mssim, std_mssim) = mean_std(&m);
        Ok(Self {
            method: method.into(),
            af,
            per_image,
            mean_rlne,
            std_rlne,
            mean_mssim,
            std_mssim,
            sec_per_slice,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs `recon` on every sample and scores the result against its ground truth.
pub fn evaluate<F>(samples: &[Sample], method: &str, exec: Exec, recon: F) -> Result<ReconReport>
where
    F: Fn(&Sample) -> Result<ComplexImage> + Sync + Send,
{
    if samples.is_empty() {
        return Err(Error::Empty("test set is empty".into()));
    }
    let results = exec.try_map(samples, |s| {
        let start = Instant::now();
        let x = recon(s)?;
        let secs = start.elapsed().as_secs_f64();
        Ok::<_, Error>((
            ImageScore {
                rlne: rlne(&s.truth, &x)?,
                mssim: mssim(&s.truth, &x)?,
            },
            secs,
        ))
    })?;
    let n = results.len() as f64;
    let sec = results.iter().map(|(_, t)| t).sum::<f64>() / n;
    let af = samples.iter().map(|s| s.mask.acceleration()).sum::<f64>() / n;
    ReconReport::from_scores(method, af, results.into_iter().map(|(s, _)| s).collect(), sec)
}
