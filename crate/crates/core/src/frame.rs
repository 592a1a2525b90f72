//! Single-level undecimated Haar tight frame and complex soft-thresholding.
//!
//! Filters are scaled by ½ per direction so that the four subband responses
//! satisfy `Σ_b |H_b(ω)|² = 1`; with periodic extension this gives
//! `synthesize ∘ analyze = I` exactly and `‖analyze(x)‖ = ‖x‖`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::ComplexImage;

/// Subband order: LL, LH, HL, HH (first letter = vertical filter).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCoefficients {
    subbands: [ComplexImage; 4],
}

// (vertical sign, horizontal sign) for the second tap of each subband
const SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

impl FrameCoefficients {
    pub fn new(subbands: [ComplexImage; 4]) -> Result<Self> {
        for (i, b) in subbands.iter().enumerate().skip(1) {
            subbands[0].check_same_shape(b, &format!("subband {i}"))?;
        }
        Ok(Self { subbands })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            subbands: std::array::from_fn(|_| ComplexImage::zeros(height, width)),
        }
    }

    pub fn subbands(&self) -> &[ComplexImage; 4] {
        &self.subbands
    }

    pub fn ll(&self) -> &ComplexImage {
        &self.subbands[0]
    }

    pub fn lh(&self) -> &ComplexImage {
        &self.subbands[1]
    }

    pub fn hl(&self) -> &ComplexImage {
        &self.subbands[2]
    }

    pub fn hh(&self) -> &ComplexImage {
        &self.subbands[3]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.subbands[0].dims()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.subbands.iter().map(|b| b.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Sum of complex magnitudes over every coefficient.
    pub fn l1_norm(&self) -> f64 {
        self.subbands
            .iter()
            .flat_map(|b| b.data().iter())
            .map(|z| z.norm())
            .sum()
    }

    pub fn inner(&self, other: &FrameCoefficients) -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, b) in self.subbands.iter().zip(&other.subbands) {
            acc += crate::numerics::inner(a, b)?;
        }
        Ok(acc)
    }

    pub fn sub(&self, other: &FrameCoefficients) -> FrameCoefficients {
        FrameCoefficients {
            subbands: std::array::from_fn(|i| self.subbands[i].sub(&other.subbands[i])),
        }
    }
}

/// Undecimated Haar analysis `Ψ x`.
pub fn analyze(x: &ComplexImage) -> Result<FrameCoefficients> {
    let (h, w) = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("Haar frame needs even dimensions, got {h}x{w}")));
    }
    let mut out = FrameCoefficients::zeros(h, w);
    for r in 0..h {
        let r1 = (r + 1) % h;
        for c in 0..w {
            let c1 = (c + 1) % w;
            let (a, b, d, e) = (x[(r, c)], x[(r, c1)], x[(r1, c)], x[(r1, c1)]);
            for (band, &(sv, sh)) in out.subbands.iter_mut().zip(&SIGNS) {
                band[(r, c)] = (a + b * sh + d * sv + e * (sv * sh)) * 0.25;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`analyze`]; exact inverse on its range.
pub fn synthesize(a: &FrameCoefficients) -> Result<ComplexImage> {
    let (h, w) = a.dims();
    for (i, b) in a.subbands.iter().enumerate() {
        if b.dims() != (h, w) {
            return Err(Error::shape(format!("subband {i} has mismatched shape")));
        }
    }
    let mut x = ComplexImage::zeros(h, w);
    for r in 0..h {
        let rm = (r + h - 1) % h;
        for c in 0..w {
            let cm = (c + w - 1) % w;
            let mut acc = Complex64::new(0.0, 0.0);
            for (band, &(sv, sh)) in a.subbands.iter().zip(&SIGNS) {
                acc += band[(r, c)] + band[(r, cm)] * sh + band[(rm, c)] * sv + band[(rm, cm)] * (sv * sh);
            }
            x[(r, c)] = acc * 0.25;
        }
    }
    Ok(x)
}

/// `T_t(β) = max(|β| − t, 0) · β/|β|`, with `T_t(0) = 0`.
#[inline]
pub fn shrink_complex(beta: Complex64, t: f64) -> Complex64 {
    let mag = beta.norm();
    if mag <= t || mag == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        beta * ((mag - t) / mag)
    }
}

/// Elementwise complex soft-thresholding of every subband.
pub fn soft_threshold(a: &FrameCoefficients, t: f64) -> Result<FrameCoefficients> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("threshold must be non-negative, got {t}")));
    }
    let mut out = a.clone();
    for band in out.subbands.iter_mut() {
        for z in band.data_mut() {
            *z = shrink_complex(*z, t);
        }
    }
    Ok(out)
}
