use crate::engine::{concat, sum_all, Element, Var};
use crate::error::{Error, Result};

/// Couples equally shaped branch features through their channel
/// descriptors.
///
/// For global-average descriptors `d_b`, the weight of branch `j` in output
/// `b` at channel `c` is `softmax_j(d_b[c] * d_j[c])`, and
/// `out_b = sum_j w[b, j, c] * f_j`. One branch passes through unchanged and
/// permuting the inputs permutes the outputs.
pub fn sci_forward<'t, T: Element>(features: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
    let first = features
        .first()
        .ok_or_else(|| Error::InvalidArgument("sci needs at least one feature map".into()))?;
    let shape = first.shape();
    if let Some(f) = features.iter().find(|f| f.shape() != shape) {
        return Err(Error::ShapeMismatch {
            op: "sci",
            lhs: shape,
            rhs: f.shape(),
        });
    }
    let (n, c) = match shape[..] {
        [n, c, _, _] => (n, c),
        _ => {
            return Err(Error::shape(
                "sci",
                format!("expected N×C×H×W, got {shape:?}"),
            ))
        }
    };
    let b = features.len();
    let desc = features
        .iter()
        .map(|f| f.global_avg_pool()?.reshape(&[n, 1, c]))
        .collect::<Result<Vec<_>>>()?;
    let d = concat(&desc, 1)?;
    let affinity = d.reshape(&[n, b, 1, c])?.mul(d.reshape(&[n, 1, b, c])?)?;
    let weights = affinity.softmax(2)?;
    (0..b)
        .map(|i| {
            let row = weights.slice(1, i, 1)?;
            let terms = features
                .iter()
                .enumerate()
                .map(|(j, f)| f.mul(row.slice(2, j, 1)?.reshape(&[n, c, 1, 1])?))
                .collect::<Result<Vec<_>>>()?;
            sum_all(&terms)
        })
        .collect()
}
