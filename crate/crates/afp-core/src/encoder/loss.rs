//! Temperature-scaled contrastive loss over batches of 2N unit-norm
//! embeddings, where row k and row N+k are a positive pair.

use crate::{Error, Result};

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Directed similarity loss of the ordered pair (i, j):
/// `-log( exp(<z_i,z_j>/tau) / sum_{k != i} exp(<z_i,z_k>/tau) )`.
///
/// Not symmetric: the denominator runs over the anchor i's similarities.
pub fn pair_loss(i: usize, j: usize, embeddings: &[Vec<f64>], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if i == j || i >= embeddings.len() || j >= embeddings.len() {
        return Err(Error::InvalidArgument(format!(
            "pair indices ({i}, {j}) invalid for batch of {}",
            embeddings.len()
        )));
    }
    let anchor = &embeddings[i];
    let logits: Vec<f64> = embeddings
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != i)
        .map(|(_, z)| dot(anchor, z) / tau)
        .collect();
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let log_denom = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(log_denom - dot(anchor, &embeddings[j]) / tau)
}

/// Batch loss: `(1/2N) * sum_k [ l(k, N+k) + l(N+k, k) ]`.
pub fn batch_loss(embeddings: &[Vec<f64>], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let rows = embeddings.len();
    if rows == 0 || rows % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "batch must hold an even, positive number of rows, got {rows}"
        )));
    }
    let n = rows / 2;
    let mut total = 0.0;
    for k in 0..n {
        total += pair_loss(k, n + k, embeddings, tau)?;
        total += pair_loss(n + k, k, embeddings, tau)?;
    }
    Ok(total / rows as f64)
}

/// Batch loss plus its analytic gradient with respect to every embedding row.
pub fn batch_loss_with_grad(embeddings: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    check_tau(tau)?;
    let rows = embeddings.len();
    if rows == 0 || rows % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "batch must hold an even, positive number of rows, got {rows}"
        )));
    }
    let n = rows / 2;
    let dim = embeddings[0].len();
    let mut grad = vec![vec![0.0; dim]; rows];
    let mut total = 0.0;
    let scale = 1.0 / rows as f64;

    for anchor_idx in 0..rows {
        let positive = if anchor_idx < n {
            anchor_idx + n
        } else {
            anchor_idx - n
        };
        let anchor = &embeddings[anchor_idx];
        let logits: Vec<f64> = embeddings
            .iter()
            .map(|z| dot(anchor, z) / tau)
            .collect();
        let max = logits
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != anchor_idx)
            .fold(f64::NEG_INFINITY, |a, (_, b)| a.max(*b));
        let denom: f64 = logits
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != anchor_idx)
            .map(|(_, l)| (l - max).exp())
            .sum();
        total += max + denom.ln() - logits[positive];

        // dL/ds_k = p_k / tau for negatives, (p_pos - 1) / tau for the positive
        for k in 0..rows {
            if k == anchor_idx {
                continue;
            }
            let p = (logits[k] - max).exp() / denom;
            let mut coeff = p / tau;
            if k == positive {
                coeff -= 1.0 / tau;
            }
            let coeff = coeff * scale;
            for d in 0..dim {
                grad[anchor_idx][d] += coeff * embeddings[k][d];
                grad[k][d] += coeff * anchor[d];
            }
        }
    }
    Ok((total * scale, grad))
}
