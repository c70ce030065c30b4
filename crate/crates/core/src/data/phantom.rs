use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::Tensor;
use crate::error::{Error, Result};

const SUPERSAMPLE: usize = 4;

/// One additive ellipse in normalised coordinates (`[-1, 1]` across the image).
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub axes: (f64, f64),
    /// Rotation in radians.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.axes.0;
        let v = (-dx * s + dy * c) / self.axes.1;
        u * u + v * v <= 1.0
    }

    /// Area as a fraction of the `[-1, 1]²` field of view.
    pub fn area_fraction(&self) -> f64 {
        std::f64::consts::PI * self.axes.0 * self.axes.1 / 4.0
    }
}

/// A real image in `[0, 1]` and the ellipses it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: Tensor<f32>,
    pub ellipses: Vec<Ellipse>,
}

/// Renders ellipses on a `size × size` grid with 4×4 supersampling, clips to
/// `[0, 1]` and optionally applies a 3×3 binomial blur.
pub fn render(ellipses: &[Ellipse], size: usize, smooth: bool) -> Tensor<f32> {
    let mut img = vec![0f64; size * size];
    let step = 2.0 / (size * SUPERSAMPLE) as f64;
    for (py, row) in img.chunks_mut(size).enumerate() {
        for (px, v) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                let y = -1.0 + ((py * SUPERSAMPLE + sy) as f64 + 0.5) * step;
                for sx in 0..SUPERSAMPLE {
                    let x = -1.0 + ((px * SUPERSAMPLE + sx) as f64 + 0.5) * step;
                    acc += ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum::<f64>();
                }
            }
            *v = (acc / (SUPERSAMPLE * SUPERSAMPLE) as f64).clamp(0.0, 1.0);
        }
    }
    if smooth {
        img = blur(&img, size);
    }
    Tensor::from_fn([size, size], |i| img[i] as f32)
}

/// Separable `[1, 2, 1] / 4` blur, renormalised at the borders.
fn blur(img: &[f64], n: usize) -> Vec<f64> {
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let (mut s, mut wsum) = (0.0, 0.0);
                for (d, w) in [(-1isize, 1.0), (0, 2.0), (1, 1.0)] {
                    let (xx, yy) = if horizontal {
                        (x as isize + d, y as isize)
                    } else {
                        (x as isize, y as isize + d)
                    };
                    if xx >= 0 && yy >= 0 && (xx as usize) < n && (yy as usize) < n {
                        s += w * src[yy as usize * n + xx as usize];
                        wsum += w;
                    }
                }
                out[y * n + x] = s / wsum;
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

fn random_ellipses(rng: &mut ChaCha8Rng, count: usize) -> Vec<Ellipse> {
    let mut out = Vec::with_capacity(count);
    out.push(Ellipse {
        center: (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
        axes: (rng.gen_range(0.6..0.85), rng.gen_range(0.6..0.85)),
        angle: rng.gen_range(0.0..std::f64::consts::PI),
        intensity: rng.gen_range(0.4..0.7),
    });
    for _ in 1..count {
        out.push(Ellipse {
            center: (rng.gen_range(-0.55..0.55), rng.gen_range(-0.55..0.55)),
            axes: (rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4)),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            intensity: rng.gen_range(-0.3..0.4),
        });
    }
    out
}

/// `count` phantoms of `size × size`, each with an ellipse count drawn from
/// `ellipses` (inclusive). Phantom `i` depends only on `(seed, i)`.
pub fn phantom_generate(
    count: usize,
    size: usize,
    seed: u64,
    ellipses: (usize, usize),
) -> Result<Vec<Phantom>> {
    if count == 0 {
        return Err(Error::InvalidArgument("phantom count must be at least 1".into()));
    }
    if !size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("phantom size {size} is not a power of two")));
    }
    if ellipses.0 == 0 || ellipses.0 > ellipses.1 {
        return Err(Error::InvalidArgument(format!("invalid ellipse range {ellipses:?}")));
    }
    Ok((0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let k = rng.gen_range(ellipses.0..=ellipses.1);
            let ellipses = random_ellipses(&mut rng, k);
            Phantom {
                image: render(&ellipses, size, true),
                ellipses,
            }
        })
        .collect())
}
