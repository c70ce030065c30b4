use mrirecon::blocks::{GeneratorSpec, LcfiSpec, UNetSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A small valid generator spec covering every structural option.
pub fn random_generator_spec(rng: &mut ChaCha8Rng) -> GeneratorSpec {
    let depth = rng.gen_range(1..=3);
    let branches = rng.gen_range(1..=3);
    let mut dilations: Vec<usize> = Vec::new();
    for _ in 0..branches {
        let last = dilations.last().copied().unwrap_or(0);
        dilations.push(last + rng.gen_range(1..=2));
    }
    let mut taps: Vec<usize> = (0..depth).filter(|_| rng.gen_bool(0.6)).collect();
    if taps.is_empty() {
        taps.push(rng.gen_range(0..depth));
    }
    GeneratorSpec {
        backbone: UNetSpec {
            depth,
            base_channels: rng.gen_range(2..=4),
            channel_mult: rng.gen_range(1..=2),
            max_channels: 8,
            residual: rng.gen_bool(0.5),
            instance_norm: rng.gen_bool(0.3),
            ..UNetSpec::default()
        },
        tap_levels: taps,
        pairs: rng.gen_range(1..=3),
        rrdb_count: rng.gen_range(0..=1),
        lcfi: LcfiSpec {
            branch_count: branches,
            dilations,
            shallow_depth: rng.gen_range(0..=1),
            channels: rng.gen_range(1..=3),
            cbam_reduction: rng.gen_range(1..=2),
            cbam_kernel: 3,
        },
        fusion_channels: rng.gen_range(1..=4),
        head_channels: rng.gen_range(1..=3),
        head_growth: rng.gen_range(1..=2),
    }
}
