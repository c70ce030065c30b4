//! Radix-2 Cooley-Tukey FFT on split real/imaginary planes.
//!
//! All transforms are orthonormal (1/sqrt(n) per axis) and DC-centred: the
//! zero frequency sits at index `(h/2, w/2)`. For even sizes the centring
//! shift is its own inverse, so the centred transform is `shift ∘ F ∘ shift`
//! and its adjoint is the centred inverse.

use std::f64::consts::PI;

use crate::engine::Element;
use crate::error::{Error, Result};

pub fn check_power_of_two(op: &'static str, h: usize, w: usize) -> Result<()> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::shape(
            op,
            format!("spatial size {h}x{w} is not a power of two"),
        ));
    }
    Ok(())
}

struct Plan<T> {
    n: usize,
    cos: Vec<T>,
    sin: Vec<T>,
    bitrev: Vec<usize>,
}

impl<T: Element> Plan<T> {
    fn new(n: usize) -> Self {
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| {
                if n == 1 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        let half = n / 2;
        let cos = (0..half)
            .map(|k| T::from_f64((2.0 * PI * k as f64 / n as f64).cos()))
            .collect();
        let sin = (0..half)
            .map(|k| T::from_f64((2.0 * PI * k as f64 / n as f64).sin()))
            .collect();
        Self {
            n,
            cos,
            sin,
            bitrev,
        }
    }

    /// In-place unnormalised transform; forward uses exp(-2πi kn/N).
    fn run(&self, re: &mut [T], im: &mut [T], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let step = n / len;
            let half = len / 2;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let wr = self.cos[k * step];
                    let wi = if inverse {
                        self.sin[k * step]
                    } else {
                        -self.sin[k * step]
                    };
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] = re[a] + tr;
                    im[a] = im[a] + ti;
                }
            }
            len <<= 1;
        }
    }
}

/// Swaps quadrants so index 0 moves to the centre (and back).
pub fn center_shift<T: Copy>(plane: &mut [T], h: usize, w: usize) {
    let (hh, hw) = (h / 2, w / 2);
    if hh == 0 {
        for row in plane.chunks_mut(w) {
            row.rotate_left(hw);
        }
        return;
    }
    for y in 0..hh {
        for x in 0..w {
            let a = y * w + x;
            let b = (y + hh) * w + (x + hw) % w;
            plane.swap(a, b);
        }
    }
}

/// Centred orthonormal 2-D transform of one complex plane, in place.
pub fn fft2_plane<T: Element>(re: &mut [T], im: &mut [T], h: usize, w: usize, inverse: bool) {
    debug_assert!(h.is_power_of_two() && w.is_power_of_two());
    center_shift(re, h, w);
    center_shift(im, h, w);
    let row_plan = Plan::<T>::new(w);
    for y in 0..h {
        row_plan.run(
            &mut re[y * w..(y + 1) * w],
            &mut im[y * w..(y + 1) * w],
            inverse,
        );
    }
    let col_plan = Plan::<T>::new(h);
    let mut cr = vec![T::zero(); h];
    let mut ci = vec![T::zero(); h];
    for x in 0..w {
        for y in 0..h {
            cr[y] = re[y * w + x];
            ci[y] = im[y * w + x];
        }
        col_plan.run(&mut cr, &mut ci, inverse);
        for y in 0..h {
            re[y * w + x] = cr[y];
            im[y * w + x] = ci[y];
        }
    }
    let scale = T::from_f64(1.0 / ((h * w) as f64).sqrt());
    for v in re.iter_mut().chain(im.iter_mut()) {
        *v = *v * scale;
    }
    center_shift(re, h, w);
    center_shift(im, h, w);
}

/// Applies the centred transform to every complex image of an `N×2×H×W`
/// buffer (channel 0 real, channel 1 imaginary).
pub fn fft2_batch<T: Element>(data: &mut [T], n: usize, h: usize, w: usize, inverse: bool) {
    let plane = h * w;
    for i in 0..n {
        let img = &mut data[i * 2 * plane..(i + 1) * 2 * plane];
        let (re, im) = img.split_at_mut(plane);
        fft2_plane(re, im, h, w, inverse);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(n^4) DFT with the same centring and normalisation.
    fn direct_dft(re: &[f64], im: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let (mut or, mut oi) = (vec![0.0; h * w], vec![0.0; h * w]);
        for ky in 0..h {
            for kx in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        // centred coordinates on both sides
                        let (yy, xx) = (y as f64 - (h / 2) as f64, x as f64 - (w / 2) as f64);
                        let (fy, fx) = (ky as f64 - (h / 2) as f64, kx as f64 - (w / 2) as f64);
                        let ang = -2.0 * PI * (fy * yy / h as f64 + fx * xx / w as f64);
                        let (c, s) = (ang.cos(), ang.sin());
                        let (a, b) = (re[y * w + x], im[y * w + x]);
                        sr += a * c - b * s;
                        si += a * s + b * c;
                    }
                }
                let scale = 1.0 / ((h * w) as f64).sqrt();
                or[ky * w + kx] = sr * scale;
                oi[ky * w + kx] = si * scale;
            }
        }
        (or, oi)
    }

    #[test]
    fn matches_direct_dft() {
        let (h, w) = (8, 4);
        let re: Vec<f64> = (0..h * w).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let im: Vec<f64> = (0..h * w).map(|i| ((i * 3 % 5) as f64) * 0.5).collect();
        let (er, ei) = direct_dft(&re, &im, h, w);
        let (mut r, mut i) = (re.clone(), im.clone());
        fft2_plane(&mut r, &mut i, h, w, false);
        for k in 0..h * w {
            assert!((r[k] - er[k]).abs() < 1e-10 && (i[k] - ei[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn centred_impulse_has_flat_spectrum() {
        let n = 8;
        let mut re = vec![0.0f64; n * n];
        let mut im = vec![0.0f64; n * n];
        re[(n / 2) * n + n / 2] = 1.0;
        let (er, ei) = direct_dft(&re, &im, n, n);
        fft2_plane(&mut re, &mut im, n, n, false);
        for k in 0..n * n {
            assert!((re[k] - 1.0 / 8.0).abs() < 1e-12 && im[k].abs() < 1e-12);
            assert!((er[k] - 1.0 / 8.0).abs() < 1e-12 && ei[k].abs() < 1e-12);
        }
    }
}
