mod common;

use common::reference::{reference_ms_ssim, reference_ssim, to_image};
use mrirecon::engine::{grad_check, Element, Precision, ScalarFn, Tape, Tensor, Var};
use mrirecon::kspace::{dc_residual, fft2, make_mask, undersample, ComplexImage};
use mrirecon::losses::{
    gram, l1_loss, lsgan_d_loss, lsgan_g_loss, magnitude, ms_ssim, perceptual_loss, recon_loss,
    ssim, total_d_loss, total_g_loss, FeatureExtractor, LossWeights, ReconInputs, SsimConfig,
    Structural, EXTRACTOR_SEED,
};
use mrirecon::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

fn zero_weights() -> LossWeights {
    LossWeights {
        lambda_rec: 0.0,
        alpha: 0.0,
        omega: 0.0,
        beta: 0.0,
        lambda_cyc: 0.0,
        lambda_vgg: 0.0,
        gamma: 0.0,
        adversarial: 0.0,
    }
}

fn eval_ssim(a: &Tensor<f64>, b: &Tensor<f64>, cfg: &SsimConfig) -> f64 {
    let tape = Tape::<f64>::new();
    ssim(tape.constant(a.clone()), tape.constant(b.clone()), cfg).unwrap().item()
}

#[test]
fn l1_examples() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.constant(Tensor::full([2, 2], 2.0));
    assert_eq!(l1_loss(a, b).unwrap().item(), 1.0);
    assert_eq!(l1_loss(a, a).unwrap().item(), 0.0);
    let z = tape.constant(Tensor::zeros([3, 3]));
    let o = tape.constant(Tensor::ones([3, 3]));
    assert_eq!(l1_loss(z, o).unwrap().item(), 1.0);
    assert!(l1_loss(a, z).is_err());
}

#[test]
fn ssim_of_identical_images_is_one() {
    let x = uniform(&[2, 1, 32, 32], 0.0, 1.0, 1);
    let cfg = SsimConfig::default();
    assert!((eval_ssim(&x, &x, &cfg) - 1.0).abs() < 1e-12);
    let tape = Tape::<f64>::new();
    let s = Structural::for_size(32).unwrap();
    assert_eq!(s.weights.len(), 2);
    let v = s.ms_ssim(tape.constant(x.clone()), tape.constant(x)).unwrap().item();
    assert!((v - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_of_noisy_constant_matches_direct_formula() {
    let c = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // uniform noise with standard deviation 0.1
    let half = 0.1 * 3f64.sqrt();
    let a = Tensor::full([1, 1, 32, 32], c);
    let b = Tensor::from_fn([1, 1, 32, 32], |_| c + rng.gen_range(-half..half));
    let cfg = SsimConfig::default();
    let (want, _) = reference_ssim(&to_image(&a), &to_image(&b), &cfg);
    assert!((eval_ssim(&a, &b, &cfg) - want).abs() < 1e-5);
}

#[test]
fn ssim_and_ms_ssim_match_reference_on_random_pairs() {
    let cfg = SsimConfig::default();
    let s = Structural::for_size(64).unwrap();
    for k in 0..10 {
        let a = uniform(&[1, 1, 64, 64], 0.0, 1.0, 100 + k);
        let noise = uniform(&[1, 1, 64, 64], -0.2, 0.2, 200 + k);
        let b = Tensor::from_fn([1, 1, 64, 64], |i| (a.data()[i] + noise.data()[i]).clamp(0.0, 1.0));
        let (ia, ib) = (to_image(&a), to_image(&b));
        let (want, _) = reference_ssim(&ia, &ib, &cfg);
        assert!((eval_ssim(&a, &b, &cfg) - want).abs() < 1e-5);
        let tape = Tape::<f64>::new();
        let got = s.ms_ssim(tape.constant(a), tape.constant(b)).unwrap().item();
        let want = reference_ms_ssim(&ia, &ib, &cfg, &s.weights);
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }
}

#[test]
fn ms_ssim_rejects_small_images() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros([1, 1, 16, 16]));
    let cfg = SsimConfig::default();
    assert!(ms_ssim(x, x, &cfg, &[0.5, 0.5]).is_err());
    assert!(ms_ssim(x, x, &cfg, &[1.0]).is_ok());
}

#[test]
fn reduced_scale_weights_are_a_renormalised_prefix() {
    let cfg = SsimConfig::default();
    assert_eq!(cfg.max_scales(64), 3);
    assert_eq!(cfg.max_scales(256), 5);
    let w = cfg.weights_for(3).unwrap();
    let total = 0.0448 + 0.2856 + 0.3001;
    for (got, raw) in w.iter().zip([0.0448, 0.2856, 0.3001]) {
        assert!((got - raw / total).abs() < 1e-15);
    }
    assert_eq!(Structural::for_size(256).unwrap().weights.len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>()) {
        let a = uniform(&[1, 1, 16, 16], 0.0, 1.0, seed);
        let b = uniform(&[1, 1, 16, 16], 0.0, 1.0, seed ^ 1);
        let cfg = SsimConfig::default();
        let (ab, ba) = (eval_ssim(&a, &b, &cfg), eval_ssim(&b, &a, &cfg));
        prop_assert!((ab - ba).abs() < 1e-6);
        prop_assert!(ab <= 1.0);
    }

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>()) {
        let tape = Tape::<f64>::new();
        let x = tape.constant(uniform(&[1, 2, 16, 16], -1.0, 1.0, seed));
        let y = tape.constant(uniform(&[1, 2, 16, 16], -1.0, 1.0, seed ^ 7));
        prop_assert!(l1_loss(x, y).unwrap().item() >= 0.0);
        prop_assert!(lsgan_d_loss(&[x], &[y]).unwrap().item() >= 0.0);
        prop_assert!(lsgan_g_loss(&[y]).unwrap().item() >= 0.0);
        let fx = FeatureExtractor::new(EXTRACTOR_SEED);
        let w = LossWeights::default();
        let p = perceptual_loss(magnitude(x).unwrap(), magnitude(y).unwrap(), &fx, &w).unwrap();
        prop_assert!(p.item() >= 0.0);
    }

    #[test]
    fn masked_l1_collapses_when_all_images_agree(seed in any::<u64>(), pairs in 1usize..5) {
        let tape = Tape::<f64>::new();
        let g = tape.constant(uniform(&[2, 2, 8, 8], -1.0, 1.0, seed));
        let s = tape.constant(uniform(&[2, 2, 8, 8], -1.0, 1.0, seed ^ 3));
        let logits: Vec<_> = (0..pairs)
            .map(|i| tape.constant(uniform(&[2, 1, 8, 8], -3.0, 3.0, seed.wrapping_add(i as u64))))
            .collect();
        let images = vec![g; pairs];
        let sel = mrirecon::blocks::attention_selection(&images, &logits).unwrap();
        let masked: f64 = sel
            .maps
            .iter()
            .map(|m| l1_loss(g.mul(*m).unwrap(), s.mul(*m).unwrap()).unwrap().item())
            .sum();
        let whole = l1_loss(sel.fused, s).unwrap().item();
        prop_assert!((masked - whole).abs() < 1e-5);
    }
}

#[test]
fn reconstruction_loss_is_zero_at_identity_and_degenerates_to_l1() {
    let tape = Tape::<f64>::new();
    let s = tape.constant(uniform(&[1, 2, 32, 32], 0.0, 0.6, 4));
    let g = tape.constant(uniform(&[1, 2, 32, 32], 0.0, 0.6, 5));
    let m = tape.constant(Tensor::full([1, 1, 32, 32], 0.5));
    let structural = Structural::for_size(32).unwrap();
    let w = LossWeights::default();
    let at_identity = recon_loss(
        ReconInputs { coarse: s, fused: s, images: &[s, s], maps: &[m, m], target: s },
        &w,
        &structural,
    )
    .unwrap();
    assert!(at_identity.item().abs() < 1e-12);

    let w = LossWeights { lambda_rec: 3.0, ..zero_weights() };
    let r = recon_loss(
        ReconInputs { coarse: g, fused: g, images: &[g, g], maps: &[m, m], target: s },
        &w,
        &structural,
    )
    .unwrap();
    assert!((r.item() - 3.0 * l1_loss(g, s).unwrap().item()).abs() < 1e-12);
}

#[test]
fn reconstruction_loss_hand_computed_case() {
    // 1×1 structural window so a 2×2 image is valid; SSIM reduces to the
    // per-pixel luminance term.
    let structural = Structural {
        config: SsimConfig { window: 1, ..SsimConfig::default() },
        weights: vec![1.0],
    };
    let w = LossWeights { lambda_rec: 2.0, alpha: 0.5, omega: 1.0, beta: 1.0, ..zero_weights() };
    let s = [0.2, 0.4, 0.6, 0.8, 0.0, 0.0, 0.0, 0.0];
    let fused = [0.3, 0.4, 0.5, 0.8, 0.0, 0.0, 0.0, 0.0];
    let coarse = [0.2, 0.2, 0.6, 0.6, 0.0, 0.0, 0.0, 0.0];
    let g1 = [0.1, 0.5, 0.6, 0.9, 0.0, 0.0, 0.0, 0.0];
    let g2 = [0.4, 0.4, 0.4, 0.4, 0.0, 0.0, 0.0, 0.0];
    let m1 = [0.25, 0.5, 0.75, 1.0];
    let m2 = [0.75, 0.5, 0.25, 0.0];
    let t = |v: &[f64]| Tensor::new([1, v.len() / 4, 2, 2], v.to_vec()).unwrap();
    let tape = Tape::<f64>::new();
    let c = |v: &[f64]| tape.constant(t(v));
    let r = recon_loss(
        ReconInputs {
            coarse: c(&coarse),
            fused: c(&fused),
            images: &[c(&g1), c(&g2)],
            maps: &[c(&m1), c(&m2)],
            target: c(&s),
        },
        &w,
        &structural,
    )
    .unwrap()
    .item();

    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    let masked = |g: &[f64], m: &[f64]| {
        (0..8).map(|i| (m[i % 4] * g[i] - m[i % 4] * s[i]).abs()).sum::<f64>() / 8.0
    };
    let c1 = 0.01f64.powi(2);
    let mag = |v: &[f64], i: usize| (v[i] * v[i] + v[i + 4] * v[i + 4] + 1e-8).sqrt();
    let ssim: f64 = (0..4)
        .map(|i| {
            let (a, b) = (mag(&fused, i), mag(&s, i));
            (2.0 * a * b + c1) / (a * a + b * b + c1)
        })
        .sum::<f64>()
        / 4.0;
    let want = 2.0
        * (0.5 * (l1(&fused, &s) + masked(&g1, &m1) + masked(&g2, &m2))
            + 0.5 * (1.0 - ssim)
            + l1(&coarse, &s));
    assert!((r - want).abs() < 1e-12, "{r} vs {want}");
}

#[test]
fn lsgan_values() {
    let tape = Tape::<f64>::new();
    let ones: Vec<_> = [8, 4, 2].iter().map(|&n| tape.constant(Tensor::ones([1, 1, n, n]))).collect();
    let zeros: Vec<_> = [8, 4, 2].iter().map(|&n| tape.constant(Tensor::zeros([1, 1, n, n]))).collect();
    let halves: Vec<_> = [8, 4, 2].iter().map(|&n| tape.constant(Tensor::full([1, 1, n, n], 0.5))).collect();
    assert_eq!(lsgan_d_loss(&ones, &zeros).unwrap().item(), 0.0);
    assert_eq!(lsgan_g_loss(&ones).unwrap().item(), 0.0);
    assert_eq!(lsgan_d_loss(&halves, &halves).unwrap().item(), 0.5);
    assert_eq!(lsgan_g_loss(&halves).unwrap().item(), 0.25);
    assert_eq!(total_d_loss(&halves, &halves).unwrap().item(), 0.5);
    assert!(lsgan_d_loss(&ones, &zeros[..2]).is_err());
}

#[test]
fn perceptual_loss_identities() {
    let fx = FeatureExtractor::new(EXTRACTOR_SEED);
    let tape = Tape::<f64>::new();
    let a = tape.constant(uniform(&[1, 1, 16, 16], 0.0, 1.0, 1));
    let b = tape.constant(uniform(&[1, 1, 16, 16], 0.0, 1.0, 2));
    let w = LossWeights::default();
    assert_eq!(perceptual_loss(a, a, &fx, &w).unwrap().item(), 0.0);

    let no_gram = LossWeights { gamma: 0.0, ..w.clone() };
    let (fa, fb) = (fx.features(&tape, a).unwrap(), fx.features(&tape, b).unwrap());
    let direct: f64 = fa
        .stages
        .iter()
        .zip(&fb.stages)
        .map(|(x, y)| x.sub(*y).unwrap().square().mean().item())
        .sum();
    let got = perceptual_loss(a, b, &fx, &no_gram).unwrap().item();
    assert!((got - w.lambda_vgg * direct).abs() < 1e-12);
    assert!(perceptual_loss(a, b, &fx, &w).unwrap().item() > got);
}

#[test]
fn gram_of_constant_single_channel_map() {
    let tape = Tape::<f64>::new();
    let c = 0.7;
    let g = gram(tape.constant(Tensor::full([1, 1, 5, 3], c))).unwrap();
    assert_eq!(g.shape(), vec![1, 1, 1]);
    assert!((g.item() - c * c).abs() < 1e-15);
}

#[test]
fn feature_extractor_is_deterministic_and_importable() {
    let tape = Tape::<f32>::new();
    let a = tape.constant(uniform(&[1, 1, 16, 16], 0.0, 1.0, 1).cast());
    let b = tape.constant(uniform(&[1, 1, 16, 16], 0.0, 1.0, 2).cast());
    let w = LossWeights::default();
    let one = perceptual_loss(a, b, &FeatureExtractor::new(9), &w).unwrap().item();
    let two = perceptual_loss(a, b, &FeatureExtractor::new(9), &w).unwrap().item();
    assert_eq!(one.to_bits(), two.to_bits());
    let imported = FeatureExtractor::from_store(FeatureExtractor::new(9).store().clone()).unwrap();
    assert_eq!(perceptual_loss(a, b, &imported, &w).unwrap().item().to_bits(), one.to_bits());
    let mut broken = FeatureExtractor::new(9).store().clone();
    broken.insert("fx.stage0.weight", Tensor::zeros([1]));
    assert!(FeatureExtractor::from_store(broken).is_err());
}

#[test]
fn total_generator_loss_composition() {
    let tape = Tape::<f64>::new();
    let parts: Vec<_> = [0.7, 0.2, 0.05, 0.01].iter().map(|&v| tape.scalar(v)).collect();
    let w = LossWeights::default();
    let t = total_g_loss(parts[0], parts[1], parts[2], parts[3], &w).unwrap();
    let want = 0.7 + w.adversarial * 0.2 + w.lambda_cyc * 0.05 + 0.01;
    assert!((t.total.item() - want).abs() < 1e-12);
    let sum = t.recon.item() + t.adversarial.item() + t.consistency.item() + t.perceptual.item();
    assert!((t.total.item() - sum).abs() < 1e-6);

    let only_adv = LossWeights { adversarial: 1.0, ..zero_weights() };
    let scores = vec![tape.constant(Tensor::full([1, 1, 4, 4], 0.3))];
    let g = lsgan_g_loss(&scores).unwrap();
    let zero = tape.scalar(0.0);
    let t = total_g_loss(zero, g, zero, zero, &only_adv).unwrap();
    assert_eq!(t.total.item(), g.item());
}

#[test]
fn perfect_generator_leaves_only_the_adversarial_term() {
    let tape = Tape::<f64>::new();
    let s = ComplexImage::new(uniform(&[1, 2, 32, 32], 0.0, 0.6, 8).cast()).unwrap();
    let mask = make_mask(32, 32, 0.25, 0.0, 1).unwrap();
    let y = undersample(&fft2(&s).unwrap(), &mask).unwrap();
    let g = tape.constant(s.tensor().cast::<f64>());
    let m = tape.constant(Tensor::ones([1, 1, 32, 32]));
    let w = LossWeights::default();
    let recon = recon_loss(
        ReconInputs { coarse: g, fused: g, images: &[g], maps: &[m], target: g },
        &w,
        &Structural::for_size(32).unwrap(),
    )
    .unwrap();
    let dc = dc_residual(g, &y, &mask).unwrap();
    let fx = FeatureExtractor::new(EXTRACTOR_SEED);
    let perc = perceptual_loss(magnitude(g).unwrap(), magnitude(g).unwrap(), &fx, &w).unwrap();
    let adv = lsgan_g_loss(&[tape.constant(Tensor::full([1, 1, 4, 4], 0.5))]).unwrap();
    let t = total_g_loss(recon, adv, dc, perc, &w).unwrap();
    assert!((t.total.item() - adv.item()).abs() < 1e-5);
}

// Finite-difference checks at 16×16. Inputs stay away from the L1 kinks
// and the magnitude clip.

fn check<F: ScalarFn>(f: &F, x: &Tensor<f64>) {
    check_with(f, x, 1e-5);
}

fn check_with<F: ScalarFn>(f: &F, x: &Tensor<f64>, wide_eps: f64) {
    let single = grad_check(f, x, 1e-4, Precision::Single, None).unwrap();
    assert!(single.max_rel_error < 1e-3, "f32 rel err {}", single.max_rel_error);
    let wide = grad_check(f, x, wide_eps, Precision::Wide, None).unwrap();
    assert!(wide.max_rel_error < 1e-6, "f64 rel err {}", wide.max_rel_error);
}

macro_rules! loss_fn {
    ($name:ident, |$tape:ident, $x:ident| $body:expr) => {
        struct $name;
        impl ScalarFn for $name {
            fn eval<'t, T: Element>(&self, $tape: &'t Tape<T>, $x: Var<'t, T>) -> Result<Var<'t, T>> {
                #[allow(unused_variables)]
                let tape = $tape;
                $body
            }
        }
    };
}

fn target<T: Element>(tape: &Tape<T>, channels: usize) -> Var<'_, T> {
    tape.constant(uniform(&[1, channels, 16, 16], 0.05, 0.6, 77).cast())
}

/// An input offset from `target` by at least 0.05 everywhere, so no L1 kink
/// is within reach of the probe.
fn offset_input(channels: usize) -> Tensor<f64> {
    let t = uniform(&[1, channels, 16, 16], 0.05, 0.6, 77);
    let d = uniform(&[1, channels, 16, 16], 0.05, 0.15, 78);
    let sign = uniform(&[1, channels, 16, 16], -1.0, 1.0, 79);
    Tensor::from_fn(t.shape().to_vec(), |i| t.data()[i] + d.data()[i] * sign.data()[i].signum())
}

loss_fn!(L1Fn, |tape, x| l1_loss(x, target(tape, 2)));
loss_fn!(SsimFn, |tape, x| ssim(x, target(tape, 1), &SsimConfig::default()));
loss_fn!(MsSsimFn, |tape, x| Structural::for_size(16)?.ms_ssim(x, target(tape, 1)));
loss_fn!(MagnitudeFn, |tape, x| Ok(magnitude(x)?.square().sum()));
loss_fn!(ReconFn, |tape, x| {
    let s = target(tape, 2);
    let m = tape.constant(uniform(&[1, 1, 16, 16], 0.1, 0.9, 80).cast());
    let m2 = m.neg().add_scalar(1.0);
    let coarse = x.scale(0.5);
    recon_loss(
        ReconInputs { coarse: x, fused: x, images: &[x, coarse], maps: &[m, m2], target: s },
        &LossWeights { beta: 0.0, ..LossWeights::default() },
        &Structural::for_size(16)?,
    )
});
loss_fn!(LsganDFn, |tape, x| {
    let fake = tape.constant(uniform(&[1, 1, 16, 16], -1.0, 1.0, 81).cast());
    lsgan_d_loss(&[x, x.avg_pool2d(2, 2)?], &[fake, fake.avg_pool2d(2, 2)?])
});
loss_fn!(LsganGFn, |tape, x| lsgan_g_loss(&[x, x.avg_pool2d(2, 2)?]));
loss_fn!(PerceptualFn, |tape, x| {
    perceptual_loss(x, target(tape, 1), &FeatureExtractor::new(EXTRACTOR_SEED), &LossWeights::default())
});
loss_fn!(GramFn, |tape, x| Ok(gram(x)?.square().sum()));
loss_fn!(ConsistencyFn, |tape, x| {
    let s = ComplexImage::new(uniform(&[1, 2, 16, 16], 0.0, 1.0, 82).cast()).unwrap();
    let mask = make_mask(16, 16, 0.3, 0.0, 2)?;
    let y = undersample(&fft2(&s)?, &mask)?;
    dc_residual(x, &y, &mask)
});

#[test]
fn l1_gradient() {
    check(&L1Fn, &offset_input(2));
}

#[test]
fn ssim_gradient() {
    check(&SsimFn, &uniform(&[1, 1, 16, 16], 0.0, 1.0, 1));
}

#[test]
fn ms_ssim_gradient() {
    check(&MsSsimFn, &uniform(&[1, 1, 16, 16], 0.0, 1.0, 2));
}

#[test]
fn magnitude_gradient() {
    check(&MagnitudeFn, &uniform(&[1, 2, 16, 16], 0.05, 0.6, 3));
}

#[test]
fn reconstruction_gradient() {
    check(&ReconFn, &offset_input(2));
}

#[test]
fn lsgan_d_gradient() {
    check(&LsganDFn, &uniform(&[1, 1, 16, 16], -1.0, 1.0, 4));
}

#[test]
fn lsgan_g_gradient() {
    check(&LsganGFn, &uniform(&[1, 1, 16, 16], -1.0, 1.0, 5));
}

#[test]
fn perceptual_gradient() {
    check(&PerceptualFn, &uniform(&[1, 1, 16, 16], 0.0, 1.0, 6));
}

#[test]
fn gram_gradient() {
    check(&GramFn, &uniform(&[1, 3, 16, 16], -1.0, 1.0, 7));
}

#[test]
fn consistency_gradient() {
    // piecewise linear: a wide step is exact between kinks and keeps
    // cancellation error small
    check_with(&ConsistencyFn, &uniform(&[1, 2, 16, 16], 0.0, 1.0, 8), 1e-3);
}

