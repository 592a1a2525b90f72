//! SENSE encoding `A_j = U F C_j`, its adjoint, and the data-consistency step.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{fft2c, ifft2c, ComplexImage};
use crate::par::Exec;

const NORMALIZATION_TOL: f64 = 1e-10;

/// Per-coil complex sensitivity maps with `Σ_j |C_j(p)|² = 1` at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivities {
    maps: Vec<ComplexImage>,
}

impl CoilSensitivities {
    /// Validates shape agreement and pixelwise normalization.
    pub fn new(maps: Vec<ComplexImage>) -> Result<Self> {
        Self::check_shapes(&maps)?;
        let dev = max_normalization_deviation(&maps);
        if dev > NORMALIZATION_TOL {
            return Err(Error::invalid(format!(
                "coil maps are not pixelwise normalized (max deviation {dev:.3e})"
            )));
        }
        Ok(Self { maps })
    }

    /// Rescales arbitrary maps so their per-pixel energy sums to one.
    pub fn normalized(mut maps: Vec<ComplexImage>) -> Result<Self> {
        Self::check_shapes(&maps)?;
        let n = maps[0].len();
        for p in 0..n {
            let energy: f64 = maps.iter().map(|m| m.data()[p].norm_sqr()).sum();
            if !(energy > 0.0) || !energy.is_finite() {
                return Err(Error::invalid(format!("coil maps have zero energy at pixel {p}")));
            }
            let inv = 1.0 / energy.sqrt();
            for m in maps.iter_mut() {
                m.data_mut()[p] *= inv;
            }
        }
        Ok(Self { maps })
    }

    /// Single coil with unit sensitivity everywhere.
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            maps: vec![ComplexImage::from_fn(height, width, |_, _| Complex64::new(1.0, 0.0))],
        }
    }

    fn check_shapes(maps: &[ComplexImage]) -> Result<()> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("at least one coil map is required"))?;
        for (j, m) in maps.iter().enumerate().skip(1) {
            first.check_same_shape(m, &format!("coil map {j}"))?;
        }
        Ok(())
    }

    #[inline]
    pub fn coils(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    pub fn maps(&self) -> &[ComplexImage] {
        &self.maps
    }

    pub fn map(&self, j: usize) -> &ComplexImage {
        &self.maps[j]
    }

    pub fn max_normalization_deviation(&self) -> f64 {
        max_normalization_deviation(&self.maps)
    }
}

fn max_normalization_deviation(maps: &[ComplexImage]) -> f64 {
    let n = maps[0].len();
    (0..n)
        .map(|p| {
            let e: f64 = maps.iter().map(|m| m.data()[p].norm_sqr()).sum();
            (e - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Cartesian mask: a set of fully sampled phase-encode rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    lines: Vec<usize>,
    sampled: Vec<bool>,
}

impl SamplingMask {
    pub fn new(height: usize, width: usize, mut lines: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        lines.sort_unstable();
        let before = lines.len();
        lines.dedup();
        if lines.len() != before {
            return Err(Error::invalid("sampled lines must be unique"));
        }
        if lines.is_empty() {
            return Err(Error::invalid("mask must sample at least one line"));
        }
        if let Some(&bad) = lines.iter().find(|&&l| l >= height) {
            return Err(Error::invalid(format!("line {bad} out of range for height {height}")));
        }
        let mut sampled = vec![false; height];
        for &l in &lines {
            sampled[l] = true;
        }
        Ok(Self {
            height,
            width,
            lines,
            sampled,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(height, width, (0..height).collect()).expect("full mask is valid")
    }

    /// Rebuilds a mask from a realized row-major 0/1 array.
    pub fn from_binary(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("binary mask length does not match its dimensions"));
        }
        let mut lines = Vec::new();
        for r in 0..height {
            let row = &values[r * width..(r + 1) * width];
            if row.iter().all(|&v| v == 1.0) {
                lines.push(r);
            } else if !row.iter().all(|&v| v == 0.0) {
                return Err(Error::invalid(format!(
                    "row {r} is neither fully sampled nor empty"
                )));
            }
        }
        Self::new(height, width, lines)
    }

    pub fn to_binary(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.height * self.width];
        for &l in &self.lines {
            out[l * self.width..(l + 1) * self.width].fill(1.0);
        }
        out
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn lines(&self) -> &[usize] {
        &self.lines
    }

    #[inline]
    pub fn is_sampled(&self, row: usize) -> bool {
        self.sampled[row]
    }

    /// Ratio of total rows to acquired rows.
    pub fn acceleration(&self) -> f64 {
        self.height as f64 / self.lines.len() as f64
    }

    /// Zeroes every unsampled row in place (`UᵀU`).
    pub fn apply(&self, k: &mut ComplexImage) {
        let w = self.width;
        let data = k.data_mut();
        for (r, &keep) in self.sampled.iter().enumerate() {
            if !keep {
                data[r * w..(r + 1) * w].fill(Complex64::new(0.0, 0.0));
            }
        }
    }
}

/// Undersampled multi-coil k-space together with the mask it was acquired on.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKSpace {
    coils: Vec<ComplexImage>,
    mask: SamplingMask,
}

impl MultiCoilKSpace {
    pub fn new(coils: Vec<ComplexImage>, mask: SamplingMask) -> Result<Self> {
        if coils.is_empty() {
            return Err(Error::invalid("k-space needs at least one coil"));
        }
        for (j, k) in coils.iter().enumerate() {
            if k.dims() != mask.dims() {
                return Err(Error::shape(format!("coil {j} k-space does not match mask")));
            }
            let w = k.width();
            for r in 0..k.height() {
                if !mask.is_sampled(r)
                    && k.data()[r * w..(r + 1) * w].iter().any(|z| z.re != 0.0 || z.im != 0.0)
                {
                    return Err(Error::invalid(format!(
                        "coil {j} has non-zero samples on unsampled line {r}"
                    )));
                }
            }
        }
        Ok(Self { coils, mask })
    }

    pub(crate) fn from_parts_unchecked(coils: Vec<ComplexImage>, mask: SamplingMask) -> Self {
        Self { coils, mask }
    }

    pub fn coils(&self) -> usize {
        self.coils.len()
    }

    pub fn coil(&self, j: usize) -> &ComplexImage {
        &self.coils[j]
    }

    pub fn data(&self) -> &[ComplexImage] {
        &self.coils
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coils.iter().map(|k| k.norm_sqr()).sum()
    }

    /// `Σ_j ⟨self_j, other_j⟩`
    pub fn inner(&self, other: &MultiCoilKSpace) -> Result<Complex64> {
        if self.coils() != other.coils() || self.dims() != other.dims() {
            return Err(Error::shape("k-space inner product over mismatched shapes"));
        }
        Ok(self
            .coils
            .iter()
            .zip(&other.coils)
            .map(|(a, b)| crate::numerics::inner_unchecked(a.data(), b.data()))
            .sum())
    }
}

fn check_operator_shapes(img: (usize, usize), c: &CoilSensitivities, u: &SamplingMask) -> Result<()> {
    if c.dims() != img {
        return Err(Error::shape(format!(
            "coil maps are {:?}, image is {:?}",
            c.dims(),
            img
        )));
    }
    if u.dims() != img {
        return Err(Error::shape(format!("mask is {:?}, image is {:?}", u.dims(), img)));
    }
    Ok(())
}

pub(crate) fn forward_unchecked(x: &ComplexImage, c: &CoilSensitivities, u: &SamplingMask) -> Vec<ComplexImage> {
    Exec::default().map(c.maps(), |cj| {
        let mut k = fft2c(&cj.mul(x));
        u.apply(&mut k);
        k
    })
}

pub(crate) fn adjoint_unchecked(y: &[ComplexImage], c: &CoilSensitivities, u: &SamplingMask) -> ComplexImage {
    let parts = Exec::default().map_range(y.len(), |j| {
        let mut k = y[j].clone();
        u.apply(&mut k);
        c.map(j).conj_mul(&ifft2c(&k))
    });
    sum_in_order(parts)
}

/// `AᴴA x = Σ_j C_jᴴ Fᴴ UᵀU F C_j x`
pub(crate) fn normal_unchecked(x: &ComplexImage, c: &CoilSensitivities, u: &SamplingMask) -> ComplexImage {
    let parts = Exec::default().map(c.maps(), |cj| {
        let mut k = fft2c(&cj.mul(x));
        u.apply(&mut k);
        cj.conj_mul(&ifft2c(&k))
    });
    sum_in_order(parts)
}

fn sum_in_order(parts: Vec<ComplexImage>) -> ComplexImage {
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one coil");
    for p in it {
        acc.add_assign(&p);
    }
    acc
}

/// `y_j = U F (C_j ⊙ x)` for every coil.
pub fn sense_forward(x: &ComplexImage, c: &CoilSensitivities, u: &SamplingMask) -> Result<MultiCoilKSpace> {
    check_operator_shapes(x.dims(), c, u)?;
    Ok(MultiCoilKSpace::from_parts_unchecked(forward_unchecked(x, c, u), u.clone()))
}

/// `x = Σ_j conj(C_j) ⊙ Fᴴ Uᵀ y_j`; on acquired data this is the zero-filled
/// coil-combined reconstruction.
pub fn sense_adjoint(y: &MultiCoilKSpace, c: &CoilSensitivities, u: &SamplingMask) -> Result<ComplexImage> {
    check_operator_shapes(y.dims(), c, u)?;
    if y.coils() != c.coils() {
        return Err(Error::shape(format!(
            "k-space has {} coils, maps have {}",
            y.coils(),
            c.coils()
        )));
    }
    Ok(adjoint_unchecked(y.data(), c, u))
}

/// Gradient step on the data term: `x + γ Aᴴ(y − A x)`.
pub fn data_consistency(
    x: &ComplexImage,
    y: &MultiCoilKSpace,
    c: &CoilSensitivities,
    u: &SamplingMask,
    gamma: f64,
) -> Result<ComplexImage> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("step size must be positive, got {gamma}")));
    }
    check_operator_shapes(x.dims(), c, u)?;
    if y.coils() != c.coils() || y.dims() != x.dims() {
        return Err(Error::shape("k-space does not match image or coil maps"));
    }
    Ok(dc_step(x, y.data(), c, u, gamma).0)
}

/// Returns `(t, g)` with `g = Aᴴ(y − A x)` and `t = x + γ g`. No validation.
pub(crate) fn dc_step(
    x: &ComplexImage,
    y: &[ComplexImage],
    c: &CoilSensitivities,
    u: &SamplingMask,
    gamma: f64,
) -> (ComplexImage, ComplexImage) {
    let residual = Exec::default().map_range(c.coils(), |j| {
        let mut k = fft2c(&c.map(j).mul(x));
        u.apply(&mut k);
        let mut r = y[j].sub(&k);
        u.apply(&mut r);
        c.map(j).conj_mul(&ifft2c(&r))
    });
    let g = sum_in_order(residual);
    let mut t = x.clone();
    t.axpy(Complex64::new(gamma, 0.0), &g);
    (t, g)
}

/// Largest eigenvalue of `AᴴA` by power iteration.
pub fn normal_operator_norm(c: &CoilSensitivities, u: &SamplingMask, iters: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = c.dims();
    let mut v = ComplexImage::from_fn(h, w, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let n = v.norm();
    v.scale(1.0 / n);
    let mut est = 0.0;
    for _ in 0..iters {
        let av = normal_unchecked(&v, c, u);
        est = av.norm();
        if est == 0.0 {
            return 0.0;
        }
        v = av.scaled(1.0 / est);
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_image, rel_err};

    fn random_coils(j: usize, h: usize, w: usize, seed: u64) -> CoilSensitivities {
        let maps = (0..j).map(|i| random_image(h, w, seed + i as u64)).collect();
        CoilSensitivities::normalized(maps).unwrap()
    }

    fn random_mask(h: usize, w: usize, seed: u64) -> SamplingMask {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut lines: Vec<usize> = (0..h).filter(|_| rng.gen_bool(0.5)).collect();
        if lines.is_empty() {
            lines.push(h / 2);
        }
        SamplingMask::new(h, w, lines).unwrap()
    }

    /// Dense JHW×HW matrix of U F C, built column by column from unit impulses
    /// with an explicit DFT sum.
    fn dense_forward_oracle(x: &ComplexImage, c: &CoilSensitivities, u: &SamplingMask) -> Vec<ComplexImage> {
        use std::f64::consts::PI;
        let (h, w) = x.dims();
        let (ch, cw) = ((h / 2) as f64, (w / 2) as f64);
        let n = h * w;
        let scale = 1.0 / (n as f64).sqrt();
        let mut out = Vec::new();
        for j in 0..c.coils() {
            // row of the matrix for output index (kr,kc), column for input (r,c)
            let mut k = ComplexImage::zeros(h, w);
            for kr in 0..h {
                if !u.lines().contains(&kr) {
                    continue;
                }
                for kc in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for r in 0..h {
                        for cc in 0..w {
                            let phase = -2.0
                                * PI
                                * ((kr as f64 - ch) * (r as f64 - ch) / h as f64
                                    + (kc as f64 - cw) * (cc as f64 - cw) / w as f64);
                            let m = Complex64::from_polar(scale, phase) * c.map(j)[(r, cc)];
                            acc += m * x[(r, cc)];
                        }
                    }
                    k[(kr, kc)] = acc;
                }
            }
            out.push(k);
        }
        out
    }

    #[test]
    fn single_uniform_coil_full_mask_is_fft() {
        let x = random_image(6, 6, 3);
        let c = CoilSensitivities::uniform(6, 6);
        let y = sense_forward(&x, &c, &SamplingMask::full(6, 6)).unwrap();
        assert!(rel_err(y.coil(0), &fft2c(&x)) < 1e-15);
    }

    #[test]
    fn zero_in_zero_out() {
        let c = random_coils(3, 8, 8, 1);
        let u = random_mask(8, 8, 2);
        let y = sense_forward(&ComplexImage::zeros(8, 8), &c, &u).unwrap();
        assert_eq!(y.norm_sqr(), 0.0);
        let x = sense_adjoint(&y, &c, &u).unwrap();
        assert_eq!(x.norm_sqr(), 0.0);
    }

    #[test]
    fn forward_matches_dense_matrix_oracle() {
        let x = random_image(8, 8, 11);
        let c = random_coils(3, 8, 8, 20);
        let u = random_mask(8, 8, 30);
        let y = sense_forward(&x, &c, &u).unwrap();
        let oracle = dense_forward_oracle(&x, &c, &u);
        for j in 0..3 {
            assert!(rel_err(y.coil(j), &oracle[j]) < 1e-10);
        }
    }

    #[test]
    fn unsampled_lines_are_zero() {
        let x = random_image(8, 8, 1);
        let c = random_coils(2, 8, 8, 2);
        let u = SamplingMask::new(8, 8, vec![1, 4]).unwrap();
        let y = sense_forward(&x, &c, &u).unwrap();
        for k in y.data() {
            for r in [0, 2, 3, 5, 6, 7] {
                for col in 0..8 {
                    assert_eq!(k[(r, col)], Complex64::new(0.0, 0.0));
                }
            }
        }
        assert!(MultiCoilKSpace::new(y.data().to_vec(), u).is_ok());
    }

    #[test]
    fn adjoint_identity_random_instances() {
        for seed in 0..20u64 {
            let (h, w) = (4 + (seed as usize % 5) * 3, 16 - (seed as usize % 4) * 3);
            let j = 1 + seed as usize % 4;
            let x = random_image(h, w, seed);
            let c = random_coils(j, h, w, 100 + seed);
            let u = random_mask(h, w, 200 + seed);
            let mut yk: Vec<_> = (0..j).map(|i| random_image(h, w, 300 + seed * 7 + i as u64)).collect();
            for k in &mut yk {
                u.apply(k);
            }
            let y = MultiCoilKSpace::new(yk, u.clone()).unwrap();
            let ax = sense_forward(&x, &c, &u).unwrap();
            let lhs = ax.inner(&y).unwrap();
            let rhs = inner_img(&x, &sense_adjoint(&y, &c, &u).unwrap());
            assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
        }
    }

    fn inner_img(a: &ComplexImage, b: &ComplexImage) -> Complex64 {
        crate::numerics::inner(a, b).unwrap()
    }

    #[test]
    fn full_sampling_normal_operator_is_identity() {
        let x = random_image(10, 12, 5);
        let c = random_coils(4, 10, 12, 6);
        let u = SamplingMask::full(10, 12);
        let back = sense_adjoint(&sense_forward(&x, &c, &u).unwrap(), &c, &u).unwrap();
        assert!(rel_err(&back, &x) < 1e-10);
    }

    #[test]
    fn data_consistency_reductions() {
        let (h, w) = (8, 8);
        let c = random_coils(3, h, w, 1);
        let u = random_mask(h, w, 2);
        let xt = random_image(h, w, 3);
        let y = sense_forward(&xt, &c, &u).unwrap();

        // exactly consistent iterate is a fixed point
        let t = data_consistency(&xt, &y, &c, &u, 0.7).unwrap();
        assert!(rel_err(&t, &xt) < 1e-12);

        // zero iterate gives γ Aᴴy
        let t0 = data_consistency(&ComplexImage::zeros(h, w), &y, &c, &u, 0.7).unwrap();
        let expect = sense_adjoint(&y, &c, &u).unwrap().scaled(0.7);
        assert!(rel_err(&t0, &expect) < 1e-12);

        // full sampling, γ = 1: one step lands on the truth from anywhere
        let full = SamplingMask::full(h, w);
        let yf = sense_forward(&xt, &c, &full).unwrap();
        let t1 = data_consistency(&random_image(h, w, 99), &yf, &c, &full, 1.0).unwrap();
        assert!(rel_err(&t1, &xt) < 1e-10);
    }

    #[test]
    fn data_consistency_is_affine() {
        let (h, w) = (8, 6);
        let c = random_coils(2, h, w, 1);
        let u = random_mask(h, w, 2);
        let y = sense_forward(&random_image(h, w, 3), &c, &u).unwrap();
        let a = random_image(h, w, 4);
        let b = random_image(h, w, 5);
        let s = 0.3;
        let mut mid = a.scaled(1.0 - s);
        mid.axpy(Complex64::new(s, 0.0), &b);
        let ta = data_consistency(&a, &y, &c, &u, 1.3).unwrap();
        let tb = data_consistency(&b, &y, &c, &u, 1.3).unwrap();
        let mut interp = ta.scaled(1.0 - s);
        interp.axpy(Complex64::new(s, 0.0), &tb);
        let tm = data_consistency(&mid, &y, &c, &u, 1.3).unwrap();
        assert!(rel_err(&tm, &interp) < 1e-12);
    }

    #[test]
    fn normal_operator_bounded_by_one() {
        let c = random_coils(4, 16, 16, 8);
        let u = random_mask(16, 16, 9);
        let est = normal_operator_norm(&c, &u, 100, 1);
        assert!(est <= 1.0 + 1e-8, "‖AᴴA‖ = {est}");
        assert!(est > 0.5);
    }

    #[test]
    fn errors_on_bad_input() {
        let c = random_coils(2, 8, 8, 1);
        let u = SamplingMask::full(8, 8);
        let x = random_image(6, 8, 1);
        assert!(matches!(sense_forward(&x, &c, &u), Err(Error::Shape(_))));
        let y = sense_forward(&random_image(8, 8, 1), &c, &u).unwrap();
        assert!(data_consistency(&random_image(8, 8, 1), &y, &c, &u, 0.0).is_err());
        let c3 = random_coils(3, 8, 8, 1);
        assert!(sense_adjoint(&y, &c3, &u).is_err());
        assert!(SamplingMask::new(8, 8, vec![]).is_err());
        assert!(SamplingMask::new(8, 8, vec![8]).is_err());
        assert!(SamplingMask::new(8, 8, vec![1, 1]).is_err());
        let unnormalized = vec![random_image(8, 8, 1), random_image(8, 8, 2)];
        assert!(CoilSensitivities::new(unnormalized).is_err());
        let mut bad = vec![ComplexImage::zeros(8, 8); 2];
        bad[0][(0, 0)] = Complex64::new(1.0, 0.0);
        assert!(MultiCoilKSpace::new(bad, SamplingMask::new(8, 8, vec![3]).unwrap()).is_err());
    }

    #[test]
    fn mask_binary_roundtrip() {
        let u = SamplingMask::new(6, 4, vec![0, 3, 5]).unwrap();
        let b = u.to_binary();
        assert_eq!(SamplingMask::from_binary(6, 4, &b).unwrap(), u);
        let mut partial = b.clone();
        partial[1] = 0.0;
        assert!(SamplingMask::from_binary(6, 4, &partial).is_err());
        assert!((u.acceleration() - 2.0).abs() < 1e-15);
    }
}
