use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::checkpoint::Checkpoint;
use super::metrics::{kid, ms_ssim_value, psnr, ssim_value};
use crate::blocks::{Generator, Params};
use crate::data::{export_image, save_tensor, Dataset};
use crate::engine::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::kspace::{magnitude, ComplexImage};
use crate::losses::FeatureExtractor;

pub const KID_DEGREE: i32 = 3;
const KID_SUBSET: usize = 100;
const KID_SUBSETS: usize = 10;
const KID_SEED: u64 = 7;

/// Single deterministic generator pass; returns the fused reconstruction.
pub fn reconstruct(ck: &Checkpoint, z: &ComplexImage) -> Result<ComplexImage> {
    let generator = Generator::new(ck.config.generator.clone())?;
    let shape = z.tensor().shape();
    generator.check_input(shape)?;
    if shape[2..] != [ck.mask.height(), ck.mask.width()] {
        return Err(Error::ShapeMismatch {
            op: "reconstruct",
            lhs: shape.to_vec(),
            rhs: vec![ck.mask.height(), ck.mask.width()],
        });
    }
    let tape = Tape::<f32>::new();
    let p = Params::new(&tape, &ck.g, false);
    let out = generator.forward(&p, tape.constant(z.tensor().clone()))?;
    ComplexImage::new((*out.fused.value()).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

/// Per-sample metrics of one method and their means.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodReport {
    pub name: String,
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_ms_ssim: f64,
    pub kid: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub count: usize,
    pub fingerprint: String,
    pub model: MethodReport,
    /// The zero-filled input scored the same way.
    pub baseline: MethodReport,
}

/// Magnitude clipped to `[0, 1]`, the image every metric is computed on.
fn display(img: &ComplexImage) -> Tensor<f32> {
    magnitude(img.tensor()).map(|v| v.clamp(0.0, 1.0))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn stack(images: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let [h, w] = [images[0].shape()[2], images[0].shape()[3]];
    let data = images.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new([images.len(), 1, h, w], data)
}

/// Scores `1×1×H×W` magnitude images against their targets.
pub fn score(
    name: &str,
    targets: &[Tensor<f32>],
    outputs: &[Tensor<f32>],
    fx: &FeatureExtractor,
) -> Result<MethodReport> {
    if targets.len() != outputs.len() || targets.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "scoring needs two equal sets of at least two images, got {} and {}",
            targets.len(),
            outputs.len()
        )));
    }
    let real_features = fx.embed(&stack(targets)?)?;
    let rows = targets
        .iter()
        .zip(outputs)
        .enumerate()
        .map(|(index, (t, o))| {
            Ok(EvalRow {
                index,
                psnr: psnr(o, t, 1.0)?,
                ssim: ssim_value(o, t)?,
                ms_ssim: ms_ssim_value(o, t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = targets.len();
    let subset = n.min(KID_SUBSET);
    let subsets = if subset == n { 1 } else { KID_SUBSETS };
    let fake_features = fx.embed(&stack(outputs)?)?;
    Ok(MethodReport {
        name: name.to_string(),
        mean_psnr: mean(rows.iter().map(|r| r.psnr)),
        mean_ssim: mean(rows.iter().map(|r| r.ssim)),
        mean_ms_ssim: mean(rows.iter().map(|r| r.ms_ssim)),
        kid: kid(&real_features, &fake_features, KID_DEGREE, subset, subsets, KID_SEED)?,
        rows,
    })
}

/// Reconstructs every sample of `data` and scores it against the fully
/// sampled image, alongside the zero-filled baseline. With `out`, writes
/// `report.csv`, `report.txt` and `recon/{i}.ktsr` / `recon/{i}.pgm`.
pub fn evaluate(ck: &Checkpoint, data: &Dataset, out: Option<&Path>) -> Result<EvalReport> {
    if data.len() < 2 {
        return Err(Error::Dataset("evaluation needs at least two samples".into()));
    }
    let fx = FeatureExtractor::new(ck.config.extractor_seed);
    let mut targets = Vec::with_capacity(data.len());
    let mut recon = Vec::with_capacity(data.len());
    let mut zero_filled = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let sample = data.sample(i)?;
        let g = reconstruct(ck, &sample.z)?;
        if let Some(dir) = out {
            let stem = dir.join("recon").join(i.to_string());
            save_tensor(stem.with_extension("ktsr"), g.tensor())?;
            export_image(&display(&g), stem.with_extension("pgm"))?;
        }
        targets.push(display(&sample.s));
        recon.push(display(&g));
        zero_filled.push(display(&sample.z));
    }
    let report = EvalReport {
        count: data.len(),
        fingerprint: ck.config.fingerprint(),
        model: score("model", &targets, &recon, &fx)?,
        baseline: score("zero-filled", &targets, &zero_filled, &fx)?,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [("report.csv", report.csv()), ("report.txt", report.text())] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(report)
}

impl EvalReport {
    /// `method,index,psnr,ssim,ms_ssim,kid`; one row per sample, then a
    /// `mean` row per method carrying the KID.
    pub fn csv(&self) -> String {
        let mut s = String::from("method,index,psnr,ssim,ms_ssim,kid\n");
        for m in [&self.model, &self.baseline] {
            for r in &m.rows {
                writeln!(s, "{},{},{},{},{},", m.name, r.index, r.psnr, r.ssim, r.ms_ssim).expect("write");
            }
        }
        for m in [&self.model, &self.baseline] {
            writeln!(s, "{},mean,{},{},{},{}", m.name, m.mean_psnr, m.mean_ssim, m.mean_ms_ssim, m.kid)
                .expect("write");
        }
        s
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "samples: {}", self.count).expect("write");
        writeln!(s, "config: {}", self.fingerprint).expect("write");
        writeln!(s, "{:<12} {:>10} {:>8} {:>8} {:>10}", "method", "psnr_db", "ssim", "ms_ssim", "kid").expect("write");
        for m in [&self.model, &self.baseline] {
            writeln!(
                s,
                "{:<12} {:>10.3} {:>8.4} {:>8.4} {:>10.6}",
                m.name, m.mean_psnr, m.mean_ssim, m.mean_ms_ssim, m.kid
            )
            .expect("write");
        }
        s
    }
}
