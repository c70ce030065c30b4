use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::io::{load_tensor, read_file, save_tensor};
use super::{make_sample, phantom_generate, to_complex, PhaseMode, Sample};
use crate::error::{Error, Result};
use crate::kspace::{make_mask_with, ComplexImage, MaskParams, MaskPattern, SamplingMask};

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub ellipses: (usize, usize),
    pub rate: f64,
    pub center_fraction: f64,
    pub pattern: MaskPattern,
    pub smooth_phase: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 200,
            size: 64,
            seed: 0,
            ellipses: (5, 12),
            rate: 0.125,
            center_fraction: 0.04,
            pattern: MaskPattern::Points,
            smooth_phase: false,
        }
    }
}

/// Contents of `manifest.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub rate: f64,
    pub center_fraction: f64,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("count", self.count.to_string()),
            ("size", self.size.to_string()),
            ("seed", self.seed.to_string()),
            ("rate", self.rate.to_string()),
            ("center_fraction", self.center_fraction.to_string()),
        ] {
            writeln!(s, "{k} = {v}").expect("write to string");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Dataset(format!("manifest line {}: expected key = value", no + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn field<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = kv
                .get(key)
                .ok_or_else(|| Error::Dataset(format!("manifest is missing `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::Dataset(format!("manifest `{key}` has invalid value `{raw}`")))
        }
        Ok(Self {
            count: field(&kv, "count")?,
            size: field(&kv, "size")?,
            seed: field(&kv, "seed")?,
            rate: field(&kv, "rate")?,
            center_fraction: field(&kv, "center_fraction")?,
        })
    }
}

/// Fully sampled images sharing one sampling mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub mask: SamplingMask,
    images: Vec<ComplexImage>,
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let phantoms = phantom_generate(spec.count, spec.size, spec.seed, spec.ellipses)?;
    let images = phantoms
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mode = if spec.smooth_phase {
                PhaseMode::Smooth(spec.seed.wrapping_add(i as u64))
            } else {
                PhaseMode::Zero
            };
            to_complex(&p.image, mode)
        })
        .collect::<Result<Vec<_>>>()?;
    let mask = make_mask_with(&MaskParams {
        pattern: spec.pattern,
        ..MaskParams::new(spec.size, spec.rate, spec.center_fraction, spec.seed)
    })?;
    Dataset::new(spec.seed, images, mask)
}

impl Dataset {
    pub fn new(seed: u64, images: Vec<ComplexImage>, mask: SamplingMask) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Dataset("dataset has no samples".into()))?;
        let size = first.height();
        for (i, img) in images.iter().enumerate() {
            if img.batch() != 1 || img.height() != size || img.width() != size {
                return Err(Error::Dataset(format!(
                    "sample {i} has shape {:?}, expected [1, 2, {size}, {size}]",
                    img.tensor().shape()
                )));
            }
        }
        if mask.height() != size || mask.width() != size {
            return Err(Error::Dataset(format!(
                "mask is {}×{}, samples are {size}×{size}",
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self {
            manifest: Manifest {
                count: images.len(),
                size,
                seed,
                rate: mask.rate(),
                center_fraction: mask.center_fraction(),
            },
            mask,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn size(&self) -> usize {
        self.manifest.size
    }

    pub fn image(&self, i: usize) -> &ComplexImage {
        &self.images[i]
    }

    pub fn sample(&self, i: usize) -> Result<Sample> {
        make_sample(self.images[i].clone(), &self.mask)
    }

    /// Stacks the given samples into one batched [`Sample`].
    pub fn batch(&self, indices: &[usize]) -> Result<Sample> {
        let picked: Vec<&ComplexImage> = indices.iter().map(|&i| &self.images[i]).collect();
        make_sample(ComplexImage::stack(&picked)?, &self.mask)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let images = indices.iter().map(|&i| self.images[i].clone()).collect();
        let mut d = Dataset::new(self.manifest.seed, images, self.mask.clone())?;
        d.manifest.center_fraction = self.manifest.center_fraction;
        Ok(d)
    }

    /// Writes `manifest.txt`, `mask.ktsr` and `samples/{i}/s.ktsr`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = dir.join("manifest.txt");
        fs::write(&manifest, self.manifest.render()).map_err(|e| Error::io(&manifest, e))?;
        save_tensor(dir.join("mask.ktsr"), &self.mask.to_tensor())?;
        for (i, img) in self.images.iter().enumerate() {
            save_tensor(dir.join("samples").join(i.to_string()).join("s.ktsr"), img.tensor())?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let text = read_file(&dir.join("manifest.txt"))?;
        let manifest = Manifest::parse(
            std::str::from_utf8(&text).map_err(|_| Error::Dataset("manifest is not UTF-8".into()))?,
        )?;
        let mask = SamplingMask::from_tensor(&load_tensor(dir.join("mask.ktsr"))?)?
            .with_origin(manifest.seed, manifest.center_fraction);
        let images = (0..manifest.count)
            .map(|i| {
                let t = load_tensor(dir.join("samples").join(i.to_string()).join("s.ktsr"))?;
                ComplexImage::new(t)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut d = Dataset::new(manifest.seed, images, mask)?;
        if d.manifest.size != manifest.size {
            return Err(Error::Dataset(format!(
                "manifest size {} does not match samples of size {}",
                manifest.size, d.manifest.size
            )));
        }
        d.manifest = manifest;
        Ok(d)
    }
}

/// Loads one input image: a KTSR complex field (`1×2×H×W`), a KTSR real image
/// or a PGM. Real images are scaled by their maximum to `[0, 1]`.
pub fn ingest_image(path: impl AsRef<Path>) -> Result<ComplexImage> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let t = if bytes.starts_with(b"P5") {
        super::io::decode_pgm(&bytes)?
    } else {
        let t = super::io::decode_tensor(&bytes)?;
        if let [_, 2, _, _] = t.shape() {
            return ComplexImage::new(t);
        }
        t
    };
    let max = t.data().iter().fold(0f32, |m, &v| m.max(v));
    let t = if max > 0.0 { t.map(|v| v / max) } else { t };
    to_complex(&t, PhaseMode::Zero)
}

/// Seeded shuffle of `0..n` split into `(train, test)` with
/// `round(n·fraction)` training indices.
pub fn dataset_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(k.min(n));
    Ok((idx, test))
}

