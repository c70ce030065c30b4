use mrirecon::data::{load_tensor, phantom_generate, save_tensor, to_complex, PhaseMode};
use mrirecon::engine::Tensor;
use mrirecon::kspace::{
    fft2, ifft2, make_mask, make_mask_with, undersample, zero_filled, ComplexImage, KSpace,
    MaskParams, MaskPattern, SamplingMask,
};
use mrirecon::train::psnr;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(n: usize, size: usize, seed: u64) -> ComplexImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexImage::new(Tensor::from_fn([n, 2, size, size], |_| rng.gen_range(-1.0f32..1.0))).unwrap()
}

fn energy(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| f64::from(v) * f64::from(v)).sum()
}

#[test]
fn round_trip_and_parseval_for_every_size() {
    for size in [8, 16, 32, 64, 128, 256] {
        let x = random_image(1, size, size as u64);
        let k = fft2(&x).unwrap();
        let back = ifft2(&k).unwrap();
        assert!(back.tensor().max_abs_diff(x.tensor()) < 1e-5, "size {size}");
        let (ex, ek) = (energy(x.tensor()), energy(k.tensor()));
        assert!(((ek - ex) / ex).abs() < 1e-4, "size {size}");
    }
}

#[test]
fn transform_is_linear() {
    for size in [8, 64, 256] {
        let (x, z) = (random_image(1, size, 1), random_image(1, size, 2));
        let (a, b) = (0.7f32, -1.3f32);
        let mix = ComplexImage::new(Tensor::from_fn([1, 2, size, size], |i| {
            a * x.tensor().data()[i] + b * z.tensor().data()[i]
        }))
        .unwrap();
        let (kx, kz, km) = (fft2(&x).unwrap(), fft2(&z).unwrap(), fft2(&mix).unwrap());
        let scale = km.tensor().data().iter().fold(0f32, |m, v| m.max(v.abs()));
        for i in 0..km.tensor().numel() {
            let want = a * kx.tensor().data()[i] + b * kz.tensor().data()[i];
            assert!((km.tensor().data()[i] - want).abs() <= 1e-4 * scale.max(1.0));
        }
    }
}

#[test]
fn zero_filled_examples() {
    let s = random_image(1, 32, 3);
    let full = undersample(&fft2(&s).unwrap(), &SamplingMask::full(32, 32)).unwrap();
    assert!(zero_filled(&full).unwrap().tensor().max_abs_diff(s.tensor()) < 1e-5);
    let zero = zero_filled(&KSpace::zeros(1, 32, 32)).unwrap();
    assert!(zero.tensor().data().iter().all(|&v| v == 0.0));
}

#[test]
fn undersampled_phantom_is_aliased() {
    let p = &phantom_generate(1, 64, 4, (5, 12)).unwrap()[0];
    let s = to_complex(&p.image, PhaseMode::Zero).unwrap();
    let k = fft2(&s).unwrap();
    let recon = |m: &SamplingMask| zero_filled(&undersample(&k, m).unwrap()).unwrap().magnitude();
    let truth = s.magnitude();
    let full = psnr(&recon(&SamplingMask::full(64, 64)), &truth, 1.0).unwrap();
    let eighth = psnr(&recon(&make_mask(64, 64, 0.125, 0.04, 1).unwrap()), &truth, 1.0).unwrap();
    assert!(eighth.is_finite());
    assert!(eighth < full);
}

#[test]
fn mask_round_trips_through_tensor_files() {
    let dir = tempdir();
    let m = make_mask(32, 32, 0.25, 0.1, 9).unwrap();
    let path = dir.join("mask.ktsr");
    save_tensor(&path, &m.to_tensor()).unwrap();
    let t = load_tensor(&path).unwrap();
    assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0));
    let back = SamplingMask::from_tensor(&t).unwrap();
    assert_eq!(back.values(), m.values());
    assert!(SamplingMask::from_tensor(&Tensor::full([4, 4], 0.5)).is_err());
}

fn tempdir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("mrirecon-kspace-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

proptest! {
    #[test]
    fn masks_have_exact_cardinality(
        log in 3u32..7,
        rate in 0.05f64..1.0,
        seed in any::<u64>(),
        lines in any::<bool>(),
    ) {
        let size = 1usize << log;
        let mut p = MaskParams::new(size, rate, 0.0, seed);
        if lines {
            p.pattern = MaskPattern::Lines;
            let rows = ((rate * size as f64).round() as usize).max(1);
            p.rate = rows as f64 / size as f64;
        }
        let budget = (p.rate * (size * size) as f64).round() as usize;
        let m = make_mask_with(&p).unwrap();
        prop_assert_eq!(m.count(), budget);
        prop_assert_eq!(make_mask_with(&p).unwrap(), m);
    }

    #[test]
    fn undersampling_is_idempotent(seed in any::<u64>(), rate in 0.05f64..1.0) {
        let k = fft2(&random_image(1, 16, seed)).unwrap();
        let m = make_mask(16, 16, rate, 0.0, seed).unwrap();
        let once = undersample(&k, &m).unwrap();
        prop_assert_eq!(undersample(&once, &m).unwrap(), once);
    }
}
