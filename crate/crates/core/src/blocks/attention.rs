use crate::engine::{concat, sum_all, Element, Var};
use crate::error::{Error, Result};

/// Fused image and the normalised selection maps.
pub struct Selection<'t, T: Element> {
    pub fused: Var<'t, T>,
    pub maps: Vec<Var<'t, T>>,
}

/// Pixelwise softmax across the `N` logit maps, then
/// `fused = sum_i maps[i] * images[i]`.
pub fn attention_selection<'t, T: Element>(
    images: &[Var<'t, T>],
    logits: &[Var<'t, T>],
) -> Result<Selection<'t, T>> {
    if images.is_empty() || images.len() != logits.len() {
        return Err(Error::InvalidArgument(format!(
            "attention selection needs matching non-empty lists, got {} images and {} logit maps",
            images.len(),
            logits.len()
        )));
    }
    let shape = images[0].shape();
    if let Some(g) = images.iter().find(|g| g.shape() != shape) {
        return Err(Error::ShapeMismatch {
            op: "attention_selection",
            lhs: shape,
            rhs: g.shape(),
        });
    }
    let expected = match shape[..] {
        [n, _, h, w] => vec![n, 1, h, w],
        _ => {
            return Err(Error::shape(
                "attention_selection",
                format!("expected N×C×H×W, got {shape:?}"),
            ))
        }
    };
    if let Some(m) = logits.iter().find(|m| m.shape() != expected) {
        return Err(Error::ShapeMismatch {
            op: "attention_selection",
            lhs: expected,
            rhs: m.shape(),
        });
    }
    let weights = concat(logits, 1)?.softmax(1)?;
    let maps = (0..logits.len())
        .map(|i| weights.slice(1, i, 1))
        .collect::<Result<Vec<_>>>()?;
    let terms = maps
        .iter()
        .zip(images)
        .map(|(m, g)| g.mul(*m))
        .collect::<Result<Vec<_>>>()?;
    Ok(Selection {
        fused: sum_all(&terms)?,
        maps,
    })
}
