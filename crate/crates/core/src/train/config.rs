use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::blocks::{DiscriminatorSpec, GeneratorSpec};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, EXTRACTOR_SEED};

/// Optimiser family; only Adam is implemented.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub data: PathBuf,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub total_steps: usize,
    pub d_steps_per_g: usize,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub extractor_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 4,
            total_steps: 3000,
            d_steps_per_g: 1,
            checkpoint_interval: 500,
            seed: 0,
            extractor_seed: EXTRACTOR_SEED,
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',').map(|s| parse(key, s.trim())).collect()
}

impl TrainConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let g = &self.generator;
        let u = &g.backbone;
        let l = &g.lcfi;
        let d = &self.discriminator;
        let w = &self.weights;
        let o = &self.optimizer;
        vec![
            ("data", self.data.display().to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("d_steps_per_g", self.d_steps_per_g.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("extractor_seed", self.extractor_seed.to_string()),
            ("optimizer", "adam".to_string()),
            ("lr_g", o.lr_g.to_string()),
            ("lr_d", o.lr_d.to_string()),
            ("beta1", o.beta1.to_string()),
            ("beta2", o.beta2.to_string()),
            ("eps", o.eps.to_string()),
            ("lambda_rec", w.lambda_rec.to_string()),
            ("alpha", w.alpha.to_string()),
            ("omega", w.omega.to_string()),
            ("beta", w.beta.to_string()),
            ("lambda_cyc", w.lambda_cyc.to_string()),
            ("lambda_vgg", w.lambda_vgg.to_string()),
            ("gamma", w.gamma.to_string()),
            ("adversarial", w.adversarial.to_string()),
            ("g.depth", u.depth.to_string()),
            ("g.base_channels", u.base_channels.to_string()),
            ("g.channel_mult", u.channel_mult.to_string()),
            ("g.max_channels", u.max_channels.to_string()),
            ("g.residual", u.residual.to_string()),
            ("g.instance_norm", u.instance_norm.to_string()),
            ("g.tap_levels", list(&g.tap_levels)),
            ("g.pairs", g.pairs.to_string()),
            ("g.rrdb_count", g.rrdb_count.to_string()),
            ("g.fusion_channels", g.fusion_channels.to_string()),
            ("g.head_channels", g.head_channels.to_string()),
            ("g.head_growth", g.head_growth.to_string()),
            ("g.lcfi_dilations", list(&l.dilations)),
            ("g.lcfi_depth", l.shallow_depth.to_string()),
            ("g.lcfi_channels", l.channels.to_string()),
            ("g.cbam_reduction", l.cbam_reduction.to_string()),
            ("g.cbam_kernel", l.cbam_kernel.to_string()),
            ("d.base_channels", d.base_channels.to_string()),
            ("d.n_layers", d.n_layers.to_string()),
            ("d.share_weights", d.share_weights.to_string()),
            ("d.instance_norm", d.instance_norm.to_string()),
        ]
    }

    /// `key = value` text that [`TrainConfig::parse`] reads back unchanged.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k} = {v}").expect("write to string");
        }
        s
    }

    /// Parses flat `key = value` lines over the defaults. `#` starts a
    /// comment; unknown and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
        }
        let mut c = TrainConfig::default();
        for (k, v) in &kv {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let g = &mut self.generator;
        let d = &mut self.discriminator;
        let w = &mut self.weights;
        let o = &mut self.optimizer;
        match key {
            "data" => self.data = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "total_steps" => self.total_steps = parse(key, v)?,
            "d_steps_per_g" => self.d_steps_per_g = parse(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "extractor_seed" => self.extractor_seed = parse(key, v)?,
            "optimizer" => {
                if v != "adam" {
                    return Err(Error::Config(format!("unknown optimizer `{v}`")));
                }
                o.kind = OptimizerKind::Adam;
            }
            "lr_g" => o.lr_g = parse(key, v)?,
            "lr_d" => o.lr_d = parse(key, v)?,
            "beta1" => o.beta1 = parse(key, v)?,
            "beta2" => o.beta2 = parse(key, v)?,
            "eps" => o.eps = parse(key, v)?,
            "lambda_rec" => w.lambda_rec = parse(key, v)?,
            "alpha" => w.alpha = parse(key, v)?,
            "omega" => w.omega = parse(key, v)?,
            "beta" => w.beta = parse(key, v)?,
            "lambda_cyc" => w.lambda_cyc = parse(key, v)?,
            "lambda_vgg" => w.lambda_vgg = parse(key, v)?,
            "gamma" => w.gamma = parse(key, v)?,
            "adversarial" => w.adversarial = parse(key, v)?,
            "g.depth" => g.backbone.depth = parse(key, v)?,
            "g.base_channels" => g.backbone.base_channels = parse(key, v)?,
            "g.channel_mult" => g.backbone.channel_mult = parse(key, v)?,
            "g.max_channels" => g.backbone.max_channels = parse(key, v)?,
            "g.residual" => g.backbone.residual = parse(key, v)?,
            "g.instance_norm" => g.backbone.instance_norm = parse(key, v)?,
            "g.tap_levels" => g.tap_levels = parse_list(key, v)?,
            "g.pairs" => g.pairs = parse(key, v)?,
            "g.rrdb_count" => g.rrdb_count = parse(key, v)?,
            "g.fusion_channels" => g.fusion_channels = parse(key, v)?,
            "g.head_channels" => g.head_channels = parse(key, v)?,
            "g.head_growth" => g.head_growth = parse(key, v)?,
            "g.lcfi_dilations" => {
                g.lcfi.dilations = parse_list(key, v)?;
                g.lcfi.branch_count = g.lcfi.dilations.len();
            }
            "g.lcfi_depth" => g.lcfi.shallow_depth = parse(key, v)?,
            "g.lcfi_channels" => g.lcfi.channels = parse(key, v)?,
            "g.cbam_reduction" => g.lcfi.cbam_reduction = parse(key, v)?,
            "g.cbam_kernel" => g.lcfi.cbam_kernel = parse(key, v)?,
            "d.base_channels" => d.base_channels = parse(key, v)?,
            "d.n_layers" => d.n_layers = parse(key, v)?,
            "d.share_weights" => d.share_weights = parse(key, v)?,
            "d.instance_norm" => d.instance_norm = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        for (name, v) in [("lr_g", o.lr_g), ("lr_d", o.lr_d), ("eps", o.eps)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if self.batch_size == 0 || self.d_steps_per_g == 0 {
            return Err(Error::Config("batch_size and d_steps_per_g must be at least 1".into()));
        }
        self.weights.validate()?;
        self.generator
            .validate()
            .map_err(|e| Error::Config(format!("generator: {e}")))?;
        self.discriminator
            .validate()
            .map_err(|e| Error::Config(format!("discriminator: {e}")))?;
        Ok(())
    }

    /// Hex FNV-1a digest of the rendered config.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.render().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
