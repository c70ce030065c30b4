//! SSIM written directly from the definition, one window at a time.

use mrirecon::engine::Tensor;
use mrirecon::losses::SsimConfig;

fn gaussian_window(size: usize, sigma: f64) -> Vec<Vec<f64>> {
    let r = (size as f64 - 1.0) / 2.0;
    let mut w = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (y, row) in w.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let d2 = (y as f64 - r).powi(2) + (x as f64 - r).powi(2);
            *v = (-d2 / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    w.iter_mut().flatten().for_each(|v| *v /= total);
    w
}

pub type Image = Vec<Vec<f64>>;

pub fn to_image(t: &Tensor<f64>) -> Image {
    let w = t.shape()[t.ndim() - 1];
    t.data().chunks(w).map(<[f64]>::to_vec).collect()
}

/// Mean SSIM and mean contrast-structure term over valid windows.
pub fn reference_ssim(a: &Image, b: &Image, cfg: &SsimConfig) -> (f64, f64) {
    let win = gaussian_window(cfg.window, cfg.sigma);
    let (c1, c2) = ((cfg.k1 * cfg.data_range).powi(2), (cfg.k2 * cfg.data_range).powi(2));
    let (h, w) = (a.len() - cfg.window + 1, a[0].len() - cfg.window + 1);
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, row) in win.iter().enumerate() {
                for (dx, &k) in row.iter().enumerate() {
                    let (p, q) = (a[y + dy][x + dx], b[y + dy][x + dx]);
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            let cs = (2.0 * cov + c2) / (va + vb + c2);
            let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            s_sum += lum * cs;
            cs_sum += cs;
        }
    }
    let n = (h * w) as f64;
    (s_sum / n, cs_sum / n)
}

pub fn halve(a: &Image) -> Image {
    (0..a.len() / 2)
        .map(|y| {
            (0..a[0].len() / 2)
                .map(|x| (a[2 * y][2 * x] + a[2 * y][2 * x + 1] + a[2 * y + 1][2 * x] + a[2 * y + 1][2 * x + 1]) / 4.0)
                .collect()
        })
        .collect()
}

pub fn reference_ms_ssim(a: &Image, b: &Image, cfg: &SsimConfig, weights: &[f64]) -> f64 {
    let (mut x, mut y) = (a.clone(), b.clone());
    let mut total = 1.0;
    for (j, &w) in weights.iter().enumerate() {
        if j > 0 {
            x = halve(&x);
            y = halve(&y);
        }
        let (s, cs) = reference_ssim(&x, &y, cfg);
        let term = if j + 1 == weights.len() { s } else { cs };
        total *= term.max(1e-6).powf(w);
    }
    total
}
