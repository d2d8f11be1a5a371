//! Small linear-algebra kernels: log-scaled complex numbers, the 2×2
//! spectral norm and a complex banded LU with partial pivoting.

use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// `mantissa · e^{log_scale}`, for determinants far outside `f64` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledComplex {
    pub mantissa: Complex64,
    pub log_scale: f64,
}

impl ScaledComplex {
    pub const ONE: ScaledComplex = ScaledComplex { mantissa: Complex64::new(1.0, 0.0), log_scale: 0.0 };
    pub const ZERO: ScaledComplex = ScaledComplex { mantissa: Complex64::new(0.0, 0.0), log_scale: 0.0 };

    pub fn new(mantissa: Complex64) -> Self {
        ScaledComplex { mantissa, log_scale: 0.0 }.normalized()
    }

    /// Fold the magnitude of the mantissa into the exponent.
    pub fn normalized(self) -> Self {
        let a = self.mantissa.norm();
        if a == 0.0 || !a.is_finite() {
            return self;
        }
        ScaledComplex { mantissa: self.mantissa / a, log_scale: self.log_scale + a.ln() }
    }

    pub fn ln_abs(&self) -> f64 {
        self.mantissa.norm().ln() + self.log_scale
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa == Complex64::new(0.0, 0.0)
    }

    pub fn mul(self, o: ScaledComplex) -> Self {
        ScaledComplex { mantissa: self.mantissa * o.mantissa, log_scale: self.log_scale + o.log_scale }.normalized()
    }

    pub fn div(self, o: ScaledComplex) -> Self {
        ScaledComplex { mantissa: self.mantissa / o.mantissa, log_scale: self.log_scale - o.log_scale }.normalized()
    }

    pub fn neg(self) -> Self {
        ScaledComplex { mantissa: -self.mantissa, log_scale: self.log_scale }
    }

    /// Plain value; overflows to infinity or underflows to zero silently.
    pub fn value(&self) -> Complex64 {
        self.mantissa * self.log_scale.exp()
    }

    /// Value multiplied by `e^{-shift}`.
    pub fn value_scaled(&self, shift: f64) -> Complex64 {
        self.mantissa * (self.log_scale - shift).exp()
    }
}

/// Largest singular value of a complex 2×2 matrix.
pub fn norm2x2(m: &Matrix2<Complex64>) -> f64 {
    let f2: f64 = m.iter().map(|c| c.norm_sqr()).sum();
    let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).norm();
    let disc = (f2 * f2 - 4.0 * det * det).max(0.0).sqrt();
    ((f2 + disc) / 2.0).sqrt()
}

/// LU factorization with partial pivoting of a complex band matrix with
/// `kl` sub- and `ku` super-diagonals.
///
/// Row `i` keeps columns `i − kl ..= i + ku + kl`, which leaves room for
/// the fill created by row interchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<Complex64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    /// Factor `A` given as `entry(i, j)` for `|i − j|` within the band.
    pub fn factor<F>(n: usize, kl: usize, ku: usize, entry: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Complex64,
    {
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu { n, kl, ku, width, data: vec![Complex64::new(0.0, 0.0); n * width], pivots: vec![0; n] };
        let mut scale = 0.0f64;
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n - 1);
            for j in lo..=hi {
                let v = entry(i, j);
                scale = scale.max(v.norm());
                *lu.at_mut(i, j) = v;
            }
        }
        let tol = 1e-14 * scale.max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.at(k, k).norm();
            for i in k + 1..=last_row {
                let v = lu.at(i, k).norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tol {
                return Err(Error::NearSpectrum { z: Complex64::new(f64::NAN, f64::NAN) });
            }
            lu.pivots[k] = p;
            let last_col = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = lu.at(k, j);
                    let b = lu.at(p, j);
                    *lu.at_mut(k, j) = b;
                    *lu.at_mut(p, j) = a;
                }
            }
            let piv = lu.at(k, k);
            for i in k + 1..=last_row {
                let l = lu.at(i, k) / piv;
                *lu.at_mut(i, k) = l;
                if l.norm() == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let u = lu.at(k, j);
                    *lu.at_mut(i, j) -= l * u;
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut Complex64 {
        let k = self.idx(i, j);
        &mut self.data[k]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Overwrite `b` with `A⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                b[i] -= self.at(i, k) * bk;
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + self.ku + self.kl).min(n - 1) {
                s -= self.at(i, j) * b[j];
            }
            b[i] = s / self.at(i, i);
        }
    }
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 1 for a constant `y`.
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LinearFit { slope, intercept, r2 })
}
