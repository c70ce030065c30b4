mod common;

use common::{scratch, tiny_dataset, tiny_setup, TINY};
use mrirecon::blocks::{Conv, ParamStore, Params};
use mrirecon::data::{load_tensor, make_sample, to_complex, DatasetSpec, PhaseMode};
use mrirecon::engine::{ConvSpec, Tape, Tensor};
use mrirecon::kspace::{dc_residual, magnitude, make_mask};
use mrirecon::losses::FeatureExtractor;
use mrirecon::train::{
    checkpoint_path, evaluate, kid, kid_subsets, mmd2_unbiased, poly_kernel, psnr, reconstruct,
    score, ssim_value, train, Adam, Checkpoint, LogRow, TrainConfig, Trainer,
};
use mrirecon::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn config_text_round_trips() {
    let mut c = TrainConfig::parse(TINY).unwrap();
    c.seed = 17;
    c.weights.lambda_cyc = 0.25;
    c.optimizer.lr_g = 1.5e-4;
    let back = TrainConfig::parse(&c.render()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.fingerprint(), c.fingerprint());
    assert_ne!(TrainConfig::default().fingerprint(), c.fingerprint());
    assert_eq!(TrainConfig::parse("# nothing\n\n").unwrap(), TrainConfig::default());
}

#[test]
fn bad_config_text_is_rejected() {
    for text in [
        "learning_rate = 1",
        "seed = 1\nseed = 2",
        "seed",
        "lr_g = -1",
        "total_steps = 0",
        "beta1 = 1.0",
        "optimizer = sgd",
        "g.lcfi_dilations = 2,1",
        "batch_size = many",
    ] {
        assert!(matches!(TrainConfig::parse(text), Err(Error::Config(_))), "{text}");
    }
}

#[test]
fn log_lines_round_trip() {
    let row = LogRow {
        step: 12,
        d: 0.5,
        g: 1.25e-3,
        recon: 0.1,
        adversarial: 0.3333,
        consistency: 7.0,
        perceptual: 1e-9,
    };
    let line = row.line();
    assert_eq!(line.split('\t').count(), 7);
    assert!(line.starts_with("step=12\td=0.5\t"));
    assert_eq!(LogRow::parse(&line).unwrap(), row);
    assert!(LogRow::parse("step=1\td=2").is_err());
}

#[test]
fn one_step_on_one_sample_writes_a_loadable_checkpoint() {
    let dir = scratch("one-step");
    let config = tiny_setup(&dir, 1, 1);
    let out = dir.join("run");
    let state = train(config.clone(), &out, None).unwrap();
    assert_eq!(state.history.len(), 1);
    let ck = Checkpoint::load(out.join("final.ckpt")).unwrap();
    assert_eq!(ck.step, 1);
    assert_eq!(ck.config, config);
    assert_eq!(ck.g, state.checkpoint.g);
    let log = std::fs::read_to_string(out.join("loss.log")).unwrap();
    assert_eq!(LogRow::parse(log.lines().next().unwrap()).unwrap(), state.history[0]);
}

#[test]
fn checkpoints_round_trip_bitwise() {
    let trainer = Trainer::with_dataset(TrainConfig::parse(TINY).unwrap(), tiny_dataset(3, 1)).unwrap();
    let mut ck = trainer.initial_state();
    trainer.step(&mut ck).unwrap();
    let bytes = ck.encode();
    let back = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(back.encode(), bytes);
    assert_eq!(back.g, ck.g);
    assert_eq!(back.adam_g, ck.adam_g);
    assert_eq!(back.adam_d, ck.adam_d);
    assert_eq!(back.rng, ck.rng);

    let mut bad = bytes.clone();
    bad[0] = b'?';
    assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() / 2]), Err(Error::Format { .. })));
}

#[test]
fn identical_runs_and_resumed_runs_agree_bitwise() {
    let dir = scratch("resume");
    let config = tiny_setup(&dir, 4, 6);

    let a = train(config.clone(), &dir.join("a"), None).unwrap();
    let b = train(config.clone(), &dir.join("b"), None).unwrap();
    let final_a = std::fs::read(dir.join("a/final.ckpt")).unwrap();
    assert_eq!(final_a, std::fs::read(dir.join("b/final.ckpt")).unwrap());
    assert_eq!(a.history, b.history);

    let mut half = config.clone();
    half.total_steps = 3;
    half.checkpoint_interval = 3;
    train(half, &dir.join("c"), None).unwrap();
    let resumed = train(config.clone(), &dir.join("c"), Some(&checkpoint_path(&dir.join("c"), 3))).unwrap();
    assert_eq!(resumed.history[..], a.history[3..]);
    assert_eq!(std::fs::read(dir.join("c/final.ckpt")).unwrap(), final_a);

    let log = std::fs::read_to_string(dir.join("c/loss.log")).unwrap();
    let rows: Vec<LogRow> = log.lines().map(|l| LogRow::parse(l).unwrap()).collect();
    assert_eq!(rows, a.history);

    let mut other = config;
    other.seed = 99;
    let err = train(other, &dir.join("d"), Some(&checkpoint_path(&dir.join("c"), 3))).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn invalid_data_is_rejected_before_training() {
    let dir = scratch("bad-data");
    let mut config = TrainConfig::parse(TINY).unwrap();
    config.data = dir.join("missing");
    assert!(Trainer::new(config.clone()).is_err());
    let small = mrirecon::data::generate_dataset(&DatasetSpec { count: 2, size: 8, ..DatasetSpec::default() }).unwrap();
    assert!(matches!(Trainer::with_dataset(config, small), Err(Error::Dataset(_))));
}

#[test]
fn divergence_names_the_failing_component() {
    let mut config = TrainConfig::parse(TINY).unwrap();
    config.optimizer.lr_g = 1e30;
    config.optimizer.lr_d = 1e30;
    let trainer = Trainer::with_dataset(config, tiny_dataset(2, 1)).unwrap();
    let mut ck = trainer.initial_state();
    let err = (0..5).find_map(|_| trainer.step(&mut ck).err()).expect("training diverges");
    match err {
        Error::NonFinite { component, step } => {
            assert!(!component.is_empty());
            assert!(step >= 1);
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn consistency_alone_drives_a_linear_generator_down() {
    let img = tiny_dataset(1, 5).image(0).clone();
    let mask = make_mask(32, 32, 0.125, 0.04, 2).unwrap();
    let sample = make_sample(img, &mask).unwrap();
    let conv = Conv::new("toy", ConvSpec::same(2, 2, 1, 1));
    let mut store = ParamStore::new();
    conv.init(&mut store, 0);
    let mut adam = Adam::new(1e-3, 0.5, 0.999, 1e-8);
    let mut losses = Vec::new();
    for _ in 0..100 {
        let tape = Tape::<f32>::new();
        let p = Params::new(&tape, &store, true);
        let g = conv.forward(&p, tape.constant(sample.z.tensor().clone())).unwrap();
        let loss = dc_residual(g, &sample.y, &sample.mask).unwrap();
        losses.push(loss.item());
        let grads = p.gradients(&tape.backward(loss).unwrap());
        drop(p);
        adam.update(&mut store, &grads).unwrap();
    }
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{} then {}", w[0], w[1]);
    }
}

#[test]
fn psnr_closed_forms() {
    let a = Tensor::from_fn([8, 8], |i| (i * 3 % 200) as f32);
    let b = a.map(|v| v + 1.0);
    assert!((psnr(&a, &b, 255.0).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-6);
    assert!((psnr(&a, &b, 255.0).unwrap() - 48.1308).abs() < 1e-4);

    let x = Tensor::full([4, 4], 0.25f32);
    let y = Tensor::from_fn([4, 4], |i| if i % 2 == 0 { 0.35 } else { 0.15 });
    assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-5);
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
    assert!(psnr(&x, &a, 1.0).is_err());
}

fn cloud(n: usize, d: usize, shift: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([n, d], |_| shift + rng.sample::<f64, _>(StandardNormal))
}

/// Direct double sum over every ordered pair of distinct indices.
fn brute_mmd(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let m = x.len() as f64;
    let k = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        (dot / a.len() as f64 + 1.0).powi(3)
    };
    let (mut s, mut t) = (0.0, 0.0);
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                s += k(&x[i], &x[j]) + k(&y[i], &y[j]);
                t += k(&x[i], &y[j]) + k(&y[i], &x[j]);
            }
        }
    }
    (s - t) / (m * (m - 1.0))
}

#[test]
fn kid_matches_a_brute_force_double_sum() {
    let (real, fake) = (cloud(40, 16, 0.0, 1), cloud(35, 16, 0.3, 2));
    let rows = |t: &Tensor<f64>, idx: &[usize]| -> Vec<Vec<f64>> {
        idx.iter().map(|&i| t.data()[i * 16..(i + 1) * 16].to_vec()).collect()
    };
    let subsets = kid_subsets(40, 35, 20, 5, 11);
    let want = subsets
        .iter()
        .map(|(r, f)| brute_mmd(&rows(&real, r), &rows(&fake, f)))
        .sum::<f64>()
        / 5.0;
    let got = kid(&real, &fake, 3, 20, 5, 11).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");

    let x: Vec<Vec<f64>> = rows(&real, &[0, 1, 2, 3]);
    let y: Vec<Vec<f64>> = rows(&fake, &[4, 5, 6, 7]);
    let xs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let ys: Vec<&[f64]> = y.iter().map(Vec::as_slice).collect();
    assert!((mmd2_unbiased(&xs, &ys, 3).unwrap() - brute_mmd(&x, &y)).abs() < 1e-9);
    assert_eq!(poly_kernel(&[1.0, 2.0], &[3.0, 4.0], 3), 6.5f64.powi(3));
}

#[test]
fn kid_orders_distant_clouds_above_identical_ones() {
    let base = cloud(50, 8, 0.0, 3);
    let same = kid(&base, &cloud(50, 8, 0.0, 4), 3, 50, 1, 0).unwrap();
    let far = kid(&base, &cloud(50, 8, 10.0, 4), 3, 50, 1, 0).unwrap();
    assert!(far > same);
    assert!(far > 100.0, "{far}");
    assert!(kid(&base, &base, 3, 10, 1, 0).is_ok());
    assert!(kid(&base, &cloud(5, 8, 0.0, 1), 3, 10, 1, 0).is_err());
}

proptest! {
    #[test]
    fn self_kid_vanishes(n in 2usize..30, d in 1usize..10, seed in any::<u64>()) {
        let x = cloud(n, d, 0.0, seed);
        let v = kid(&x, &x, 3, n, 1, seed).unwrap();
        prop_assert!(v.abs() <= 1e-6, "{}", v);
    }
}

#[test]
fn ground_truth_scored_against_itself_is_perfect() {
    let d = tiny_dataset(4, 9);
    let images: Vec<Tensor<f32>> = (0..4)
        .map(|i| magnitude(d.image(i).tensor()).map(|v| v.clamp(0.0, 1.0)))
        .collect();
    let r = score("truth", &images, &images, &FeatureExtractor::new(1)).unwrap();
    assert_eq!(r.mean_psnr, f64::INFINITY);
    assert!((r.mean_ssim - 1.0).abs() < 1e-9);
    assert!((r.mean_ms_ssim - 1.0).abs() < 1e-9);
    assert!(r.kid.abs() <= 1e-6);
    assert!(r.rows.iter().all(|row| row.psnr == f64::INFINITY));
}

#[test]
fn evaluation_reports_are_consistent_and_auditable() {
    let dir = scratch("evaluate");
    let data = tiny_dataset(3, 4);
    let trainer = Trainer::with_dataset(TrainConfig::parse(TINY).unwrap(), data.clone()).unwrap();
    let mut ck = trainer.initial_state();
    trainer.step(&mut ck).unwrap();
    let out = dir.join("eval");
    let report = evaluate(&ck, &data, Some(&out)).unwrap();
    assert_eq!(report.count, 3);
    assert_eq!(report.fingerprint, ck.config.fingerprint());
    assert_eq!(report.baseline.name, "zero-filled");
    for m in [&report.model, &report.baseline] {
        assert_eq!(m.rows.len(), 3);
        let mean = |f: fn(&mrirecon::train::EvalRow) -> f64| m.rows.iter().map(f).sum::<f64>() / 3.0;
        assert!((m.mean_psnr - mean(|r| r.psnr)).abs() < 1e-9);
        assert!((m.mean_ssim - mean(|r| r.ssim)).abs() < 1e-9);
        assert!((m.mean_ms_ssim - mean(|r| r.ms_ssim)).abs() < 1e-9);
    }
    for (i, row) in report.model.rows.iter().enumerate() {
        let g = load_tensor(out.join(format!("recon/{i}.ktsr"))).unwrap();
        let again = reconstruct(&ck, &data.sample(i).unwrap().z).unwrap();
        assert_eq!(&g, again.tensor());
        let shown = magnitude(&g).map(|v| v.clamp(0.0, 1.0));
        let truth = magnitude(data.image(i).tensor()).map(|v| v.clamp(0.0, 1.0));
        assert_eq!(psnr(&shown, &truth, 1.0).unwrap(), row.psnr);
        assert_eq!(ssim_value(&shown, &truth).unwrap(), row.ssim);
        assert!(out.join(format!("recon/{i}.pgm")).exists());
    }
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("zero-filled,mean")), "{csv}");
    assert!(std::fs::read_to_string(out.join("report.txt")).unwrap().contains("zero-filled"));
    assert!(evaluate(&ck, &tiny_dataset(1, 4), None).is_err());
}

#[test]
fn reconstruction_is_deterministic_and_shape_preserving() {
    let data = tiny_dataset(2, 6);
    let trainer = Trainer::with_dataset(TrainConfig::parse(TINY).unwrap(), data.clone()).unwrap();
    let ck = trainer.initial_state();
    let z = data.sample(1).unwrap().z;
    let a = reconstruct(&ck, &z).unwrap();
    assert_eq!(a, reconstruct(&ck, &z).unwrap());
    assert_eq!(a.tensor().shape(), z.tensor().shape());
    let wrong = to_complex(&Tensor::zeros([12, 12]), PhaseMode::Zero).unwrap();
    assert!(reconstruct(&ck, &wrong).is_err());
}
