//! Loss terms and their gradients with respect to the rendered quantities.

use crate::math::norm;

/// Mean squared error over all elements; returns the loss and `dL/d rendered`.
pub fn photometric_loss(rendered: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = rendered.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = rendered
        .iter()
        .zip(target)
        .map(|(r, t)| {
            let d = r - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}

/// `1 − p̂·t̂`. A zero-norm prediction scores 1 with no gradient.
pub fn cosine_loss(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let (np, nt) = (norm(pred), norm(target));
    if np == 0.0 || nt == 0.0 {
        return (1.0, vec![0.0; pred.len()]);
    }
    let c: f64 = pred.iter().zip(target).map(|(p, t)| p * t).sum::<f64>() / (np * nt);
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| -(t / nt - c * p / np) / np)
        .collect();
    (1.0 - c, grad)
}

/// Margin contrastive grouping loss: mean squared distance over same-id
/// pairs plus mean squared hinge `max(0, m − d)²` over different-id pairs.
/// Returns the loss and one gradient per embedding.
pub fn instance_contrastive_loss(embeddings: &[Vec<f64>], ids: &[u16], margin: f64) -> (f64, Vec<Vec<f64>>) {
    let n = embeddings.len();
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut grads = vec![vec![0.0; dim]; n];
    let (mut same, mut diff) = (0usize, 0usize);
    for a in 0..n {
        for b in a + 1..n {
            if ids[a] == ids[b] {
                same += 1;
            } else {
                diff += 1;
            }
        }
    }
    let (mut ls, mut ld) = (0.0, 0.0);
    let mut delta = vec![0.0; dim];
    for a in 0..n {
        for b in a + 1..n {
            for (d, (x, y)) in delta.iter_mut().zip(embeddings[a].iter().zip(&embeddings[b])) {
                *d = x - y;
            }
            let d2: f64 = delta.iter().map(|x| x * x).sum();
            if ids[a] == ids[b] {
                ls += d2;
                let s = 2.0 / same as f64;
                for i in 0..dim {
                    grads[a][i] += s * delta[i];
                    grads[b][i] -= s * delta[i];
                }
            } else {
                let d = d2.sqrt();
                if d < margin {
                    let h = margin - d;
                    ld += h * h;
                    if d > 0.0 {
                        let s = -2.0 * h / d / diff as f64;
                        for i in 0..dim {
                            grads[a][i] += s * delta[i];
                            grads[b][i] -= s * delta[i];
                        }
                    }
                }
            }
        }
    }
    let loss = if same > 0 { ls / same as f64 } else { 0.0 } + if diff > 0 { ld / diff as f64 } else { 0.0 };
    (loss, grads)
}
