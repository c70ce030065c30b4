use crate::blocks::{Conv, ParamStore, Params};
use crate::engine::{ConvSpec, Element, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const STAGE_CHANNELS: [usize; 4] = [16, 32, 64, 128];
pub const DEFAULT_SEED: u64 = 0x5eed_f00d;

/// Fixed conv -> relu -> 2×2 average-pool pyramid on one-channel images.
///
/// Weights are drawn once from a seed (or imported) and never trained.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    convs: Vec<Conv>,
    store: ParamStore,
}

/// Per-stage pre-activations and the pooled final-stage embedding.
pub struct Features<'t, T: Element> {
    pub stages: Vec<Var<'t, T>>,
    pub embedding: Var<'t, T>,
}

impl FeatureExtractor {
    fn layers() -> Vec<Conv> {
        let mut cin = 1;
        STAGE_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv::new(format!("fx.stage{i}"), ConvSpec::same(cin, c, 3, 1));
                cin = c;
                conv
            })
            .collect()
    }

    pub fn new(seed: u64) -> Self {
        let convs = Self::layers();
        let mut store = ParamStore::new();
        for c in &convs {
            c.init(&mut store, seed);
        }
        Self { convs, store }
    }

    /// Uses externally supplied weights; every expected tensor must be
    /// present with the right shape.
    pub fn from_store(store: ParamStore) -> Result<Self> {
        let convs = Self::layers();
        for c in &convs {
            let want_w = c.spec().weight_shape();
            let want_b = [c.spec().out_channels];
            for (name, shape) in [(c.weight_name(), &want_w[..]), (c.bias_name(), &want_b[..])] {
                match store.get(&name) {
                    Some(t) if t.shape() == shape => {}
                    Some(t) => {
                        return Err(Error::ShapeMismatch {
                            op: "feature_extractor",
                            lhs: t.shape().to_vec(),
                            rhs: shape.to_vec(),
                        })
                    }
                    None => return Err(Error::MissingParam(name)),
                }
            }
        }
        Ok(Self { convs, store })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Features of an `N×1×H×W` image with `H`, `W` divisible by 8.
    pub fn features<'t, T: Element>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Features<'t, T>> {
        let p = Params::new(tape, &self.store, false);
        let mut h = x;
        let mut stages = Vec::with_capacity(self.convs.len());
        let last = self.convs.len() - 1;
        let mut embedding = None;
        for (i, conv) in self.convs.iter().enumerate() {
            let pre = conv.forward(&p, h)?;
            stages.push(pre);
            let act = pre.relu();
            if i == last {
                let [n, c] = [act.shape()[0], act.shape()[1]];
                embedding = Some(act.global_avg_pool()?.reshape(&[n, c])?);
            } else {
                h = act.avg_pool2d(2, 2)?;
            }
        }
        Ok(Features {
            stages,
            embedding: embedding.expect("non-empty pyramid"),
        })
    }

    /// Pooled final-stage embeddings (`N × 128`) of a batch of one-channel images.
    pub fn embed(&self, images: &Tensor<f32>) -> Result<Tensor<f64>> {
        let tape = Tape::<f64>::new();
        let f = self.features(&tape, tape.constant(images.cast()))?;
        Ok((*f.embedding.value()).clone())
    }
}

/// `(1 / (C·H·W)) · F Fᵀ` for each item, with `F` the `C × HW` unfolding.
pub fn gram<'t, T: Element>(f: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = f.shape();
    let [n, c, h, w] = match s[..] {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::shape("gram", format!("expected N×C×H×W, got {s:?}"))),
    };
    let flat = f.reshape(&[n, c, h * w])?;
    Ok(flat.matmul_t(flat, false, true)?.scale(1.0 / (c * h * w) as f64))
}
