use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean softmax cross-entropy plus the row softmax needed by the backward pass.
pub struct CrossEntropy<F> {
    pub loss: F,
    pub probs: Tensor<F>,
}

/// Mean over rows of `-log softmax(logits)[label]`, stabilised by subtracting the row max.
pub fn softmax_cross_entropy<F: Element>(logits: &Tensor<F>, labels: &[usize]) -> Result<CrossEntropy<F>> {
    let [n, k] = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::Axis { op: "softmax_cross_entropy", axis: 0, expected: n, got: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label { label: bad, classes: k });
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = F::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let start = probs.len();
        probs.extend(row.iter().map(|&z| (z - m).exp()));
        let denom: F = probs[start..].iter().copied().sum();
        total += denom.ln() - (row[label] - m);
        for p in &mut probs[start..] {
            *p /= denom;
        }
    }
    Ok(CrossEntropy { loss: total / F::from_usize(n), probs: Tensor::new([n, k], probs)? })
}

/// `d loss / d logits = (softmax - onehot) / n`, scaled by the upstream scalar gradient.
pub fn softmax_cross_entropy_backward<F: Element>(probs: &Tensor<F>, labels: &[usize], grad: F) -> Tensor<F> {
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    let scale = grad / F::from_usize(n);
    let mut g = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let row = &mut g.data_mut()[i * k..(i + 1) * k];
        row[label] -= F::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    g
}
