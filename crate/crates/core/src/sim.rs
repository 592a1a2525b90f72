//! Synthetic acquisitions: ellipse phantoms, smooth coil maps, variable-density
//! Cartesian masks and noisy multi-coil k-space.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ComplexImage;
use crate::par::Exec;
use crate::sense::{self, CoilSensitivities, MultiCoilKSpace, SamplingMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Inclusive range for the number of random inner ellipses.
    pub ellipses: (usize, usize),
    /// Range of ellipse intensities; must lie within [0, 1].
    pub intensity: (f64, f64),
    pub smooth_phase: bool,
    /// Use the modified Shepp-Logan layout instead of random ellipses.
    pub shepp_logan: bool,
}

impl PhantomSpec {
    pub fn new(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            seed,
            ellipses: (3, 8),
            intensity: (0.1, 1.0),
            smooth_phase: false,
            shepp_logan: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 || self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::invalid(format!(
                "phantom size must be even and at least 16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.ellipses.0 > self.ellipses.1 {
            return Err(Error::invalid("ellipse count range is empty"));
        }
        let (lo, hi) = self.intensity;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::invalid("intensity range must be an ordered sub-range of [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub coils: usize,
    pub af: f64,
    pub center_lines: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl AcquisitionSpec {
    pub fn validate(&self, height: usize) -> Result<()> {
        if self.coils == 0 {
            return Err(Error::invalid("coil count must be at least 1"));
        }
        if !(self.af >= 1.0) || !self.af.is_finite() {
            return Err(Error::invalid(format!("acceleration factor must be >= 1, got {}", self.af)));
        }
        if self.center_lines > height {
            return Err(Error::invalid("more center lines than rows"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid("noise standard deviation must be non-negative"));
        }
        Ok(())
    }
}

/// Default fully sampled center band: the 24-of-320 calibration fraction,
/// scaled to `height`.
pub fn default_center_lines(height: usize) -> usize {
    ((height as f64) * 24.0 / 320.0).round().max(1.0) as usize
}

/// One ground-truth image together with everything needed to reconstruct it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub truth: ComplexImage,
    pub coils: CoilSensitivities,
    pub mask: SamplingMask,
    pub kspace: MultiCoilKSpace,
}

struct Ellipse {
    intensity: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    phi: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi.sin_cos();
        let dx = x - self.x0;
        let dy = y - self.y0;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Normalized coordinates in [−1, 1): `x` to the right, `y` up.
fn coords(r: usize, c: usize, h: usize, w: usize) -> (f64, f64) {
    let x = (c as f64 - (w / 2) as f64) / (w / 2) as f64;
    let y = -((r as f64 - (h / 2) as f64) / (h / 2) as f64);
    (x, y)
}

pub fn gen_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ellipses: Vec<Ellipse> = if spec.shepp_logan {
        SHEPP_LOGAN
            .iter()
            .map(|&(intensity, a, b, x0, y0, deg)| Ellipse {
                intensity,
                a,
                b,
                x0,
                y0,
                phi: deg.to_radians(),
            })
            .collect()
    } else {
        let (lo, hi) = spec.intensity;
        let draw_intensity = |rng: &mut ChaCha8Rng| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let mut list = vec![Ellipse {
            intensity: draw_intensity(&mut rng) * 0.6,
            a: rng.gen_range(0.6..0.85),
            b: rng.gen_range(0.7..0.9),
            x0: rng.gen_range(-0.05..0.05),
            y0: rng.gen_range(-0.05..0.05),
            phi: rng.gen_range(-0.3..0.3),
        }];
        let count = rng.gen_range(spec.ellipses.0..=spec.ellipses.1);
        for _ in 0..count {
            let sign = if rng.gen_bool(0.7) { 1.0 } else { -1.0 };
            list.push(Ellipse {
                intensity: sign * draw_intensity(&mut rng),
                a: rng.gen_range(0.05..0.35),
                b: rng.gen_range(0.05..0.35),
                x0: rng.gen_range(-0.5..0.5),
                y0: rng.gen_range(-0.5..0.5),
                phi: rng.gen_range(0.0..PI),
            });
        }
        list
    };
    let phase_coeffs: Option<[f64; 6]> = spec
        .smooth_phase
        .then(|| std::array::from_fn(|_| rng.gen_range(-0.5..0.5)));

    let (h, w) = (spec.height, spec.width);
    Ok(ComplexImage::from_fn(h, w, |r, c| {
        let (x, y) = coords(r, c, h, w);
        let mag: f64 = ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum::<f64>()
            .clamp(0.0, 1.0);
        match phase_coeffs {
            Some(p) => {
                let phi = p[0] + p[1] * x + p[2] * y + p[3] * x * x + p[4] * x * y + p[5] * y * y;
                Complex64::from_polar(mag, phi)
            }
            None => Complex64::new(mag, 0.0),
        }
    }))
}

/// Gaussian receive profiles placed around the field of view, with linear phase
/// ramps, normalized pixelwise to unit total energy.
pub fn gen_coils(coils: usize, height: usize, width: usize, seed: u64) -> Result<CoilSensitivities> {
    if coils == 0 {
        return Err(Error::invalid("coil count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.gen_range(0.0..2.0 * PI);
    let width_sigma = 0.9;
    let maps = (0..coils)
        .map(|j| {
            let theta = offset + 2.0 * PI * j as f64 / coils as f64;
            let (cx, cy) = (1.2 * theta.cos(), 1.2 * theta.sin());
            let (px, py, p0) = (
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-PI..PI),
            );
            ComplexImage::from_fn(height, width, |r, c| {
                let (x, y) = coords(r, c, height, width);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let mag = (-d2 / (2.0 * width_sigma * width_sigma)).exp();
                Complex64::from_polar(mag, p0 + px * x + py * y)
            })
        })
        .collect();
    CoilSensitivities::normalized(maps)
}

/// Number of rows `gen_mask` keeps, after checking that the parameters are
/// feasible.
pub fn mask_line_budget(height: usize, af: f64, center_lines: usize) -> Result<usize> {
    if height == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    if !(af >= 1.0) || !af.is_finite() {
        return Err(Error::invalid(format!("acceleration factor must be >= 1, got {af}")));
    }
    let total = (height as f64 / af).round() as usize;
    if center_lines > total {
        return Err(Error::invalid(format!(
            "{center_lines} center lines do not fit in {total} sampled lines"
        )));
    }
    if total == 0 {
        return Err(Error::invalid("acceleration factor leaves no lines to sample"));
    }
    Ok(total)
}

/// Variable-density 1D Cartesian mask over phase-encode rows.
///
/// `round(H/AF)` rows are kept: the `center_lines` rows around `H/2`, plus
/// rows drawn without replacement with weight `exp(−(d/(H/4))²)` where `d` is
/// the distance to the center row.
pub fn gen_mask(height: usize, width: usize, af: f64, center_lines: usize, seed: u64) -> Result<SamplingMask> {
    if width == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    let total = mask_line_budget(height, af, center_lines)?;
    let center = height / 2;
    let start = center - center_lines / 2;
    let mut lines: Vec<usize> = (start..start + center_lines).collect();

    let rest: Vec<usize> = (0..height).filter(|r| !(start..start + center_lines).contains(r)).collect();
    let scale = height as f64 / 4.0;
    let weight = |i: usize| {
        let d = rest[i] as f64 - center as f64;
        (-(d / scale).powi(2)).exp()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample_weighted(&mut rng, rest.len(), weight, total - center_lines)
        .map_err(|e| Error::invalid(format!("mask sampling failed: {e}")))?;
    lines.extend(picked.iter().map(|i| rest[i]));
    SamplingMask::new(height, width, lines)
}

/// `y = A x + n`, with complex Gaussian noise of per-component standard
/// deviation `sigma` on sampled entries only.
pub fn simulate_acquisition(
    x: &ComplexImage,
    c: &CoilSensitivities,
    u: &SamplingMask,
    sigma: f64,
    seed: u64,
) -> Result<MultiCoilKSpace> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise std must be non-negative, got {sigma}")));
    }
    let clean = sense::sense_forward(x, c, u)?;
    if sigma == 0.0 {
        return Ok(clean);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = u.width();
    let coils = clean
        .data()
        .iter()
        .map(|k| {
            let mut k = k.clone();
            for &r in u.lines() {
                for z in &mut k.data_mut()[r * w..(r + 1) * w] {
                    *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
            k
        })
        .collect();
    MultiCoilKSpace::new(coils, u.clone())
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub count: usize,
    pub size: usize,
    pub coils: usize,
    pub af: f64,
    pub center_lines: usize,
    pub noise_std: f64,
    pub smooth_phase: bool,
    pub seed: u64,
}

impl DatasetSpec {
    /// Checks every generation parameter without generating anything.
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Empty("dataset count must be positive".into()));
        }
        PhantomSpec::new(self.size, self.size, self.seed).validate()?;
        self.acquisition().validate(self.size)?;
        mask_line_budget(self.size, self.af, self.center_lines).map(|_| ())
    }

    fn acquisition(&self) -> AcquisitionSpec {
        AcquisitionSpec {
            coils: self.coils,
            af: self.af,
            center_lines: self.center_lines,
            noise_std: self.noise_std,
            seed: self.seed,
        }
    }

    pub fn desk(count: usize, seed: u64) -> Self {
        Self {
            count,
            size: 64,
            coils: 4,
            af: 4.0,
            center_lines: default_center_lines(64),
            noise_std: 0.0,
            smooth_phase: true,
            seed,
        }
    }
}

/// Generates sample `index` of the dataset; every sample draws its own
/// phantom, coil maps, mask and noise from seeds derived from `spec.seed`.
pub fn generate_sample(spec: &DatasetSpec, index: usize) -> Result<Sample> {
    let mut seeder = ChaCha8Rng::seed_from_u64(spec.seed);
    seeder.set_stream(index as u64 + 1);
    let seeds: [u64; 4] = std::array::from_fn(|_| seeder.gen());
    let mut ph = PhantomSpec::new(spec.size, spec.size, seeds[0]);
    ph.smooth_phase = spec.smooth_phase;
    let truth = gen_phantom(&ph)?;
    let coils = gen_coils(spec.coils, spec.size, spec.size, seeds[1])?;
    let mask = gen_mask(spec.size, spec.size, spec.af, spec.center_lines, seeds[2])?;
    let kspace = simulate_acquisition(&truth, &coils, &mask, spec.noise_std, seeds[3])?;
    Ok(Sample {
        truth,
        coils,
        mask,
        kspace,
    })
}

pub fn generate_dataset(spec: &DatasetSpec, exec: Exec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let idx: Vec<usize> = (0..spec.count).collect();
    exec.try_map(&idx, |&i| generate_sample(spec, i))
}

/// Zero-filled coil-combined reconstruction `Aᴴ y`.
pub fn zero_filled(sample: &Sample) -> Result<ComplexImage> {
    sense::sense_adjoint(&sample.kspace, &sample.coils, &sample.mask)
}
