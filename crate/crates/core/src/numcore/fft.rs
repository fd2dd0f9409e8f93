//! Complex FFT of arbitrary length (iterative radix-2, Bluestein otherwise),
//! real-input transforms, and direct evaluation of a few low modes.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::NumError;
use crate::math::{cos, sin, PI};

fn twiddle(num: u64, den: u64, sign: f64) -> Complex64 {
    // exp(sign * 2πi num/den) with the angle reduced exactly first
    let r = num % den;
    let ang = 2.0 * PI * (r as f64) / (den as f64);
    Complex64::new(cos(ang), sign * sin(ang))
}

fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let tw: Vec<Complex64> = (0..n / 2).map(|j| twiddle(j as u64, n as u64, sign)).collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let w = tw[j * stride];
                let a = buf[start + j];
                let b = buf[start + j + half] * w;
                buf[start + j] = a + b;
                buf[start + j + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn bluestein(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };
    // chirp w_k = exp(sign·πi k²/n) = exp(sign·2πi k²/(2n))
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k = k as u64;
            twiddle(k * k % (2 * n as u64), 2 * n as u64, sign)
        })
        .collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, false);
    radix2(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2(&mut a, true);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k] * scale * chirp[k];
    }
}

/// Unnormalized DFT in place; `inverse` flips the exponent sign.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, inverse);
    } else {
        bluestein(buf, inverse);
    }
}

/// `X_k = Σ_j x_j exp(-2πi jk/n)` for `k = 0..=n/2`.
pub fn rfft(x: &[f64]) -> Result<Vec<Complex64>, NumError> {
    let n = x.len();
    if n < 2 {
        return Err(NumError::Length { expected: 2, got: n });
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf, false);
    buf.truncate(n / 2 + 1);
    Ok(buf)
}

/// Inverse of [`rfft`]; `modes` must hold exactly `n/2 + 1` entries.
pub fn irfft(modes: &[Complex64], n: usize) -> Result<Vec<f64>, NumError> {
    if n < 2 {
        return Err(NumError::Length { expected: 2, got: n });
    }
    if modes.len() != n / 2 + 1 {
        return Err(NumError::Length { expected: n / 2 + 1, got: modes.len() });
    }
    Ok(irfft_truncated(modes, n))
}

/// Inverse real transform treating modes beyond `modes.len()` as zero.
/// Imaginary parts of the DC and Nyquist modes are ignored.
pub fn irfft_truncated(modes: &[Complex64], n: usize) -> Vec<f64> {
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    let m = modes.len().min(n / 2 + 1);
    for k in 0..m {
        let mut v = modes[k];
        if k == 0 || (n % 2 == 0 && k == n / 2) {
            v.im = 0.0;
        }
        full[k] = v;
        if k != 0 && !(n % 2 == 0 && k == n / 2) {
            full[n - k] = v.conj();
        }
    }
    fft_in_place(&mut full, true);
    let scale = 1.0 / n as f64;
    full.iter().map(|c| c.re * scale).collect()
}

/// `cos`/`sin` of `2π r/n` for `r < n`, indexed by `(j·k) mod n`.
#[derive(Debug, Clone)]
pub struct TwiddleTable {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl TwiddleTable {
    pub fn new(n: usize) -> Self {
        let mut c = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        for r in 0..n {
            let ang = 2.0 * PI * r as f64 / n as f64;
            c.push(cos(ang));
            s.push(sin(ang));
        }
        Self { n, cos: c, sin: s }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> (f64, f64) {
        let r = (j * k) % self.n;
        (self.cos[r], self.sin[r])
    }
}

/// Whether the first `m` modes of a length-`n` signal are cheaper to get by
/// direct summation than by a full transform.
pub fn prefer_direct(n: usize, m: usize) -> bool {
    let log = usize::BITS - n.leading_zeros();
    m <= 16 * log as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
                    acc += Complex64::new(cos(ang), sin(ang)) * v;
                }
                acc
            })
            .collect()
    }

    fn signal(n: usize, seed: u64) -> Vec<f64> {
        let mut r = crate::rng::stream(&[seed]);
        (0..n).map(|_| crate::rng::uniform(&mut r, -1.0, 1.0)).collect()
    }

    #[test]
    fn constant_signal_has_only_dc() {
        let x = [2.5; 8];
        let m = rfft(&x).unwrap();
        assert_eq!(m.len(), 5);
        assert!((m[0].re - 20.0).abs() < 1e-12 && m[0].im.abs() < 1e-12);
        for c in &m[1..] {
            assert!(c.norm() < 1e-12);
        }
    }

    #[test]
    fn single_harmonic() {
        let x: Vec<f64> = (0..8).map(|j| cos(2.0 * PI * j as f64 / 8.0)).collect();
        let m = rfft(&x).unwrap();
        for (k, c) in m.iter().enumerate() {
            if k == 1 {
                assert!((c.norm() - 4.0).abs() < 1e-12);
            } else {
                assert!(c.norm() < 1e-12, "mode {k}: {c}");
            }
        }
    }

    #[test]
    fn matches_naive_dft_for_many_lengths() {
        for n in [2usize, 3, 5, 8, 16, 29, 64, 100, 101, 127] {
            let x = signal(n, n as u64);
            let got = rfft(&x).unwrap();
            let want = naive_dft(&x);
            for k in 0..got.len() {
                assert!((got[k] - want[k]).norm() < 1e-10 * n as f64, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn parseval_and_round_trip_length_29() {
        let x = signal(29, 7);
        let modes = rfft(&x).unwrap();
        let n = 29usize;
        let lhs: f64 = x.iter().map(|v| v * v).sum();
        let mut rhs = modes[0].norm_sqr();
        for k in 1..modes.len() {
            if n % 2 == 0 && k == n / 2 {
                rhs += modes[k].norm_sqr();
            } else {
                rhs += 2.0 * modes[k].norm_sqr();
            }
        }
        rhs /= n as f64;
        assert!((lhs - rhs).abs() < 1e-10);
        let back = irfft(&modes, n).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn length_errors() {
        assert!(rfft(&[1.0]).is_err());
        assert!(irfft(&[Complex64::new(1.0, 0.0); 3], 8).is_err());
        assert!(irfft(&[Complex64::new(1.0, 0.0); 1], 1).is_err());
    }

    #[test]
    fn twiddle_table_matches_direct_angles() {
        let t = TwiddleTable::new(29);
        let (c, s) = t.at(5, 7);
        let ang = 2.0 * PI * 35.0 / 29.0;
        assert!((c - cos(ang)).abs() < 1e-12 && (s - sin(ang)).abs() < 1e-12);
    }
}
