use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use crate::blocks::{Discriminator, Generator, Params};
use crate::data::Dataset;
use crate::engine::{Tape, Var};
use crate::error::{Error, Result};
use crate::kspace::dc_residual;
use crate::losses::{
    lsgan_g_loss, magnitude, perceptual_loss, recon_loss, total_d_loss, total_g_loss,
    FeatureExtractor, ReconInputs, Structural,
};

/// Losses of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub d: f32,
    pub g: f32,
    pub recon: f32,
    pub adversarial: f32,
    pub consistency: f32,
    pub perceptual: f32,
}

impl LogRow {
    pub const FIELDS: [&'static str; 7] =
        ["step", "d", "g", "recon", "adversarial", "consistency", "perceptual"];

    /// Tab-separated `name=value` fields; values use the shortest exact
    /// decimal form.
    pub fn line(&self) -> String {
        format!(
            "step={}\td={}\tg={}\trecon={}\tadversarial={}\tconsistency={}\tperceptual={}",
            self.step, self.d, self.g, self.recon, self.adversarial, self.consistency, self.perceptual
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let mut vals = [0f64; 7];
        let fields: Vec<&str> = line.trim_end().split('\t').collect();
        if fields.len() != Self::FIELDS.len() {
            return Err(Error::InvalidArgument(format!("loss log line has {} fields", fields.len())));
        }
        for ((f, want), v) in fields.iter().zip(Self::FIELDS).zip(vals.iter_mut()) {
            let (k, raw) = f
                .split_once('=')
                .filter(|(k, _)| *k == want)
                .ok_or_else(|| Error::InvalidArgument(format!("expected `{want}=` in loss log, got `{f}`")))?;
            *v = raw
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value for `{k}` in loss log")))?;
        }
        Ok(Self {
            step: vals[0] as u64,
            d: vals[1] as f32,
            g: vals[2] as f32,
            recon: vals[3] as f32,
            adversarial: vals[4] as f32,
            consistency: vals[5] as f32,
            perceptual: vals[6] as f32,
        })
    }
}

/// The state after training plus the losses of every step run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub checkpoint: Checkpoint,
    pub history: Vec<LogRow>,
}

/// Models, loss helpers and data of one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub extractor: FeatureExtractor,
    pub structural: Structural,
    pub dataset: Dataset,
}

fn finite<T: crate::engine::Element>(v: Var<'_, T>, component: &str, step: u64) -> Result<f32> {
    let x = v.item().as_f64();
    if !x.is_finite() {
        return Err(Error::NonFinite {
            component: component.to_string(),
            step,
        });
    }
    Ok(x as f32)
}

impl Trainer {
    /// Loads the dataset named in the config.
    pub fn new(config: TrainConfig) -> Result<Self> {
        let dataset = Dataset::load(&config.data)?;
        Self::with_dataset(config, dataset)
    }

    pub fn with_dataset(config: TrainConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.generator.clone())?;
        let discriminator = Discriminator::new(config.discriminator.clone())?;
        let shape = [1, 2, dataset.size(), dataset.size()];
        generator
            .check_input(&shape)
            .and_then(|_| discriminator.check_input(&shape))
            .map_err(|e| Error::Dataset(format!("samples do not fit the models: {e}")))?;
        let structural = Structural::for_size(dataset.size())
            .map_err(|e| Error::Dataset(format!("samples too small for ms-ssim: {e}")))?;
        Ok(Self {
            extractor: FeatureExtractor::new(config.extractor_seed),
            structural,
            generator,
            discriminator,
            dataset,
            config,
        })
    }

    /// Step-0 state: fresh weights and moments, RNG seeded from the config.
    pub fn initial_state(&self) -> Checkpoint {
        let seed = self.config.seed;
        let o = &self.config.optimizer;
        Checkpoint {
            config: self.config.clone(),
            step: 0,
            g: self.generator.init(seed),
            d: self.discriminator.init(seed.wrapping_add(1)),
            adam_g: Adam::new(o.lr_g, o.beta1, o.beta2, o.eps),
            adam_d: Adam::new(o.lr_d, o.beta1, o.beta2, o.eps),
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: self.dataset.mask.clone(),
        }
    }

    /// One discriminator phase on a detached reconstruction followed by one
    /// generator update.
    pub fn step(&self, ck: &mut Checkpoint) -> Result<LogRow> {
        let step = ck.step + 1;
        let c = &self.config;
        let n = self.dataset.len();
        let picked = index::sample(&mut ck.rng, n, c.batch_size.min(n)).into_vec();
        let batch = self.dataset.batch(&picked)?;

        let tape = Tape::<f32>::new();
        let gp = Params::new(&tape, &ck.g, true);
        let out = self.generator.forward(&gp, tape.constant(batch.z.tensor().clone()))?;
        let fake = out.fused.value();

        let mut d_loss = 0.0;
        for _ in 0..c.d_steps_per_g {
            let dt = Tape::<f32>::new();
            let dp = Params::new(&dt, &ck.d, true);
            let real = self.discriminator.forward(&dp, dt.constant(batch.s.tensor().clone()))?;
            let fake = self.discriminator.forward(&dp, dt.constant((*fake).clone()))?;
            let loss = total_d_loss(&real, &fake)?;
            d_loss = finite(loss, "d", step)?;
            let grads = dp.gradients(&dt.backward(loss)?);
            drop(dp);
            ck.adam_d.update(&mut ck.d, &grads)?;
        }

        let target = tape.constant(batch.s.tensor().clone());
        let recon = recon_loss(
            ReconInputs {
                coarse: out.coarse,
                fused: out.fused,
                images: &out.images,
                maps: &out.maps,
                target,
            },
            &c.weights,
            &self.structural,
        )?;
        let dp = Params::new(&tape, &ck.d, false);
        let adv = lsgan_g_loss(&self.discriminator.forward(&dp, out.fused)?)?;
        let dc = dc_residual(out.fused, &batch.y, &batch.mask)?;
        let perc = if c.weights.lambda_vgg > 0.0 {
            perceptual_loss(magnitude(out.fused)?, magnitude(target)?, &self.extractor, &c.weights)?
        } else {
            tape.scalar(0.0)
        };
        let total = total_g_loss(recon, adv, dc, perc, &c.weights)?;
        let row = LogRow {
            step,
            d: d_loss,
            recon: finite(total.recon, "recon", step)?,
            adversarial: finite(total.adversarial, "adversarial", step)?,
            consistency: finite(total.consistency, "consistency", step)?,
            perceptual: finite(total.perceptual, "perceptual", step)?,
            g: finite(total.total, "g", step)?,
        };
        let grads = gp.gradients(&tape.backward(total.total)?);
        drop(gp);
        ck.adam_g.update(&mut ck.g, &grads)?;
        ck.step = step;
        Ok(row)
    }

    /// Runs until `config.total_steps`. With an output directory, appends to
    /// `loss.log`, writes `checkpoints/step_{n}.ckpt` every
    /// `checkpoint_interval` steps and `final.ckpt` at the end.
    pub fn run(&self, mut ck: Checkpoint, out: Option<&Path>) -> Result<TrainState> {
        let mut log = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("loss.log");
                let file = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((path, file))
            }
            None => None,
        };
        let mut history = Vec::new();
        let total = self.config.total_steps as u64;
        while ck.step < total {
            let row = self.step(&mut ck)?;
            if let Some((path, file)) = log.as_mut() {
                writeln!(file, "{}", row.line()).map_err(|e| Error::io(path.clone(), e))?;
            }
            history.push(row);
            let interval = self.config.checkpoint_interval as u64;
            if let Some(dir) = out {
                if interval > 0 && ck.step % interval == 0 {
                    ck.save(checkpoint_path(dir, ck.step))?;
                }
            }
        }
        if let Some(dir) = out {
            ck.save(dir.join("final.ckpt"))?;
        }
        Ok(TrainState {
            checkpoint: ck,
            history,
        })
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step}.ckpt"))
}

/// Trains from scratch or resumes from `resume`. A resumed run keeps the
/// checkpoint's model and optimiser settings; only `total_steps` and
/// `checkpoint_interval` may differ.
pub fn train(config: TrainConfig, out: &Path, resume: Option<&Path>) -> Result<TrainState> {
    let trainer = Trainer::new(config.clone())?;
    let ck = match resume {
        None => trainer.initial_state(),
        Some(path) => {
            let mut ck = Checkpoint::load(path)?;
            let mut expect = ck.config.clone();
            expect.total_steps = config.total_steps;
            expect.checkpoint_interval = config.checkpoint_interval;
            if expect != config {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration",
                    path.display()
                )));
            }
            ck.config = config;
            ck
        }
    };
    trainer.run(ck, Some(out))
}

