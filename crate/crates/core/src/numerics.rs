//! Complex images, real feature maps and centered unitary 2D FFTs.

use std::cell::RefCell;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Row-major H×W complex image.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("image dimensions must be positive, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{}x{} image needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut img = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                img.data[r * width + c] = f(r, c);
            }
        }
        img
    }

    pub fn from_real(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        Self::new(height, width, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn same_shape(&self, other: &ComplexImage) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_same_shape(&self, other: &ComplexImage, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, alpha: f64) {
        for z in &mut self.data {
            *z *= alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: Complex64, other: &ComplexImage) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add_assign(&mut self, other: &ComplexImage) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &ComplexImage) -> ComplexImage {
        debug_assert!(self.same_shape(other));
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &ComplexImage) -> ComplexImage {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    /// Elementwise product.
    pub fn mul(&self, other: &ComplexImage) -> ComplexImage {
        debug_assert!(self.same_shape(other));
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        }
    }

    /// Elementwise `conj(self) * other`.
    pub fn conj_mul(&self, other: &ComplexImage) -> ComplexImage {
        debug_assert!(self.same_shape(other));
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize)> for ComplexImage {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.width + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexImage {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.width + c]
    }
}

/// Row-major C×H×W real feature stack.
#[derive(Debug, Clone, PartialEq)]
pub struct RealFeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RealFeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape("feature map dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} feature map needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Splits a complex image into (real, imaginary) channels.
    pub fn from_complex(img: &ComplexImage) -> Self {
        let n = img.len();
        let mut data = vec![0.0; 2 * n];
        for (i, z) in img.data().iter().enumerate() {
            data[i] = z.re;
            data[n + i] = z.im;
        }
        Self {
            channels: 2,
            height: img.height(),
            width: img.width(),
            data,
        }
    }

    /// Recombines a 2-channel map as `re + i·im`.
    pub fn to_complex(&self) -> Result<ComplexImage> {
        if self.channels != 2 {
            return Err(Error::shape(format!(
                "complex recombination needs 2 channels, got {}",
                self.channels
            )));
        }
        let n = self.plane_len();
        let data = (0..n)
            .map(|i| Complex64::new(self.data[i], self.data[n + i]))
            .collect();
        Ok(ComplexImage {
            height: self.height,
            width: self.width,
            data,
        })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `Σ conj(a_i)·b_i`
pub fn inner(a: &ComplexImage, b: &ComplexImage) -> Result<Complex64> {
    a.check_same_shape(b, "inner product")?;
    Ok(inner_unchecked(a.data(), b.data()))
}

pub(crate) fn inner_unchecked(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(len: usize) -> (std::sync::Arc<dyn Fft<f64>>, std::sync::Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(len), p.plan_fft_inverse(len))
    })
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

fn fft2c_dir(img: &ComplexImage, dir: Direction) -> ComplexImage {
    let (h, w) = img.dims();
    let (ch, cw) = (h / 2, w / 2);
    // ifftshift on the way in
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        let src_r = (r + ch) % h;
        for c in 0..w {
            buf[r * w + c] = img.data[src_r * w + (c + cw) % w];
        }
    }

    let pick = |(f, i): (std::sync::Arc<dyn Fft<f64>>, std::sync::Arc<dyn Fft<f64>>)| match dir {
        Direction::Forward => f,
        Direction::Inverse => i,
    };
    let row_fft = pick(plans(w));
    row_fft.process(&mut buf);

    let mut cols = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            cols[c * h + r] = buf[r * w + c];
        }
    }
    let col_fft = pick(plans(h));
    col_fft.process(&mut cols);

    // fftshift on the way out, fused with the transpose back and the unitary scale
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        let dst_r = (r + ch) % h;
        for c in 0..w {
            out[dst_r * w + (c + cw) % w] = cols[c * h + r] * scale;
        }
    }
    ComplexImage {
        height: h,
        width: w,
        data: out,
    }
}

/// Centered, unitary 2D forward FFT (DC at index (H/2, W/2)).
pub fn fft2c(img: &ComplexImage) -> ComplexImage {
    fft2c_dir(img, Direction::Forward)
}

/// Inverse of [`fft2c`].
pub fn ifft2c(k: &ComplexImage) -> ComplexImage {
    fft2c_dir(k, Direction::Inverse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_image, rel_err};
    use std::f64::consts::PI;

    fn dft_oracle(x: &ComplexImage, sign: f64) -> ComplexImage {
        let (h, w) = x.dims();
        let (ch, cw) = ((h / 2) as f64, (w / 2) as f64);
        let scale = 1.0 / ((h * w) as f64).sqrt();
        ComplexImage::from_fn(h, w, |kr, kc| {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let phase = sign
                        * 2.0
                        * PI
                        * ((kr as f64 - ch) * (r as f64 - ch) / h as f64
                            + (kc as f64 - cw) * (c as f64 - cw) / w as f64);
                    acc += x[(r, c)] * Complex64::from_polar(1.0, phase);
                }
            }
            acc * scale
        })
    }

    #[test]
    fn centered_impulse_has_flat_spectrum() {
        let mut x = ComplexImage::zeros(4, 4);
        x[(2, 2)] = Complex64::new(1.0, 0.0);
        let k = fft2c(&x);
        for z in k.data() {
            assert!((z - Complex64::new(0.25, 0.0)).norm() < 1e-15);
        }
        let back = ifft2c(&k);
        assert!(rel_err(&back, &x) < 1e-14);
    }

    #[test]
    fn constant_plane_inverts_to_impulse() {
        let k = ComplexImage::from_fn(4, 4, |_, _| Complex64::new(0.25, 0.0));
        let x = ifft2c(&k);
        for r in 0..4 {
            for c in 0..4 {
                let expect = if (r, c) == (2, 2) { 1.0 } else { 0.0 };
                assert!((x[(r, c)] - Complex64::new(expect, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_brute_force_dft_on_small_sizes() {
        for h in 1..=8 {
            for w in 1..=8 {
                let x = random_image(h, w, (h * 31 + w) as u64);
                let fwd = fft2c(&x);
                let inv = ifft2c(&x);
                let fo = dft_oracle(&x, -1.0);
                let io = dft_oracle(&x, 1.0);
                assert!(rel_err(&fwd, &fo) < 1e-10, "fwd {h}x{w}");
                assert!(rel_err(&inv, &io) < 1e-10, "inv {h}x{w}");
            }
        }
    }

    #[test]
    fn inner_product_basics() {
        let a = ComplexImage::new(1, 1, vec![Complex64::new(1.0, 1.0)]).unwrap();
        assert_eq!(inner(&a, &a).unwrap(), Complex64::new(2.0, 0.0));
        let x = random_image(5, 7, 1);
        let y = random_image(5, 7, 2);
        let xy = inner(&x, &y).unwrap();
        let yx = inner(&y, &x).unwrap();
        assert!((xy - yx.conj()).norm() < 1e-14);
        let xx = inner(&x, &x).unwrap();
        assert!(xx.im == 0.0 && xx.re >= 0.0);
        assert!((xx.re - x.norm_sqr()).abs() < 1e-12);
        let z = random_image(5, 6, 3);
        assert!(matches!(inner(&x, &z), Err(Error::Shape(_))));
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(ComplexImage::new(2, 2, vec![Complex64::new(0.0, 0.0); 3]).is_err());
        assert!(ComplexImage::new(0, 2, vec![]).is_err());
        let bad = vec![Complex64::new(f64::NAN, 0.0); 4];
        assert!(ComplexImage::new(2, 2, bad).is_err());
    }

    #[test]
    fn realify_roundtrip() {
        let x = random_image(3, 4, 9);
        let f = RealFeatureMap::from_complex(&x);
        assert_eq!(f.channels(), 2);
        assert_eq!(f.to_complex().unwrap(), x);
        assert!(RealFeatureMap::zeros(3, 2, 2).to_complex().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn parseval_roundtrip_linearity(h in 1usize..20, w in 1usize..20, seed in any::<u64>(),
                                            a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let x = random_image(h, w, seed);
                let y = random_image(h, w, seed ^ 0x5555);
                let kx = fft2c(&x);
                prop_assert!((kx.norm() - x.norm()).abs() <= 1e-12 * x.norm());
                prop_assert!(rel_err(&ifft2c(&kx), &x) <= 1e-12);
                prop_assert!(rel_err(&fft2c(&ifft2c(&x)), &x) <= 1e-12);

                let alpha = Complex64::new(a, b);
                let beta = Complex64::new(b, -a);
                let mut combo = x.clone();
                combo.scale(0.0);
                combo.axpy(alpha, &x);
                combo.axpy(beta, &y);
                let mut expect = ComplexImage::zeros(h, w);
                expect.axpy(alpha, &kx);
                expect.axpy(beta, &fft2c(&y));
                prop_assert!(rel_err(&fft2c(&combo), &expect) <= 1e-12);
            }
        }
    }
}
