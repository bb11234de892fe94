use rand::Rng;

/// `n` stratified depths in `[near, far]`, one per equal-width bin. Without
/// an rng the bin centers are returned.
pub fn sample_along_ray<R: Rng + ?Sized>(near: f64, far: f64, n: usize, rng: Option<&mut R>) -> Vec<f64> {
    let width = (far - near) / n as f64;
    match rng {
        None => (0..n).map(|k| near + (k as f64 + 0.5) * width).collect(),
        Some(rng) => (0..n)
            .map(|k| near + (k as f64 + rng.random::<f64>()) * width)
            .collect(),
    }
}

/// Emission-absorption weights `w_k = T_k (1 - exp(-σ_k δ_k))` and the
/// residual transmittance `T_{N+1}`.
pub fn compositing_weights(sigmas: &[f64], deltas: &[f64]) -> (Vec<f64>, f64) {
    let mut t = 1.0;
    let mut weights = Vec::with_capacity(sigmas.len());
    for (&s, &d) in sigmas.iter().zip(deltas) {
        let alpha = -(-s * d).exp_m1();
        weights.push(t * alpha);
        t *= (-s * d).exp();
    }
    (weights, t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub value: Vec<f64>,
    pub weights: Vec<f64>,
    pub transmittance: f64,
}

/// `Σ w_k v_k + T_{N+1} v_bg` for `channels`-wide values laid out sample-major.
pub fn composite_values(weights: &[f64], transmittance: f64, values: &[f64], channels: usize, background: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = background.iter().map(|b| transmittance * b).collect();
    for (k, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(&values[k * channels..(k + 1) * channels]) {
            *o += w * v;
        }
    }
    out
}

pub fn composite(sigmas: &[f64], deltas: &[f64], values: &[f64], channels: usize, background: &[f64]) -> Composite {
    let (weights, transmittance) = compositing_weights(sigmas, deltas);
    let value = composite_values(&weights, transmittance, values, channels, background);
    Composite {
        value,
        weights,
        transmittance,
    }
}

/// Gradient of a scalar loss with respect to the densities, given the
/// per-sample projections `s_k = v_k · g` of the values onto the upstream
/// gradient and `s_bg = v_bg · g`:
///
/// `dL/dσ_k = δ_k (T_{k+1} s_k − Σ_{j>k} w_j s_j − T_{N+1} s_bg)`.
pub fn sigma_gradient(sigmas: &[f64], deltas: &[f64], weights: &[f64], transmittance: f64, projections: &[f64], background_projection: f64) -> Vec<f64> {
    let n = sigmas.len();
    // T_{k+1} for every k, recomputed forward for accuracy deep inside surfaces.
    let mut t_after = Vec::with_capacity(n);
    let mut t = 1.0;
    for (&s, &d) in sigmas.iter().zip(deltas) {
        t *= (-s * d).exp();
        t_after.push(t);
    }
    let mut out = vec![0.0; n];
    let mut suffix = transmittance * background_projection;
    for k in (0..n).rev() {
        out[k] = deltas[k] * (t_after[k] * projections[k] - suffix);
        suffix += weights[k] * projections[k];
    }
    out
}

/// Expected depth under the rendering weights, or `None` when the
/// accumulated weight is below `hit_threshold`.
pub fn expected_depth(weights: &[f64], depths: &[f64], hit_threshold: f64) -> Option<f64> {
    let acc: f64 = weights.iter().sum();
    if acc < hit_threshold || acc <= 0.0 {
        return None;
    }
    Some(weights.iter().zip(depths).map(|(w, t)| w * t).sum::<f64>() / acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bin_centers_without_jitter() {
        let d = sample_along_ray::<ChaCha8Rng>(0.0, 1.0, 4, None);
        assert_eq!(d, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(sample_along_ray::<ChaCha8Rng>(2.0, 5.0, 1, None), vec![3.5]);
    }

    #[test]
    fn jittered_samples_are_uniform_within_bins() {
        // Kolmogorov-Smirnov against U(0,1) of the within-bin offsets.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n_bins = 4;
        let draws = 10_000;
        let mut offsets: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
        for _ in 0..draws {
            let d = sample_along_ray(1.0, 3.0, n_bins, Some(&mut rng));
            for (k, t) in d.iter().enumerate() {
                let lo = 1.0 + 0.5 * k as f64;
                assert!(*t >= lo && *t < lo + 0.5);
                offsets[k].push((t - lo) / 0.5);
            }
        }
        // critical value at alpha = 0.01
        let crit = 1.628 / (draws as f64).sqrt();
        for mut o in offsets {
            o.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = o.len() as f64;
            let d = o
                .iter()
                .enumerate()
                .map(|(i, x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
                .fold(0.0, f64::max);
            assert!(d < crit, "KS statistic {d} >= {crit}");
        }
    }

    #[test]
    fn single_sample_closed_form() {
        let c = composite(&[1.0], &[1.0], &[1.0], 1, &[0.0]);
        let expected = 1.0 - (-1.0f64).exp();
        assert!((c.weights[0] - expected).abs() < 1e-15);
        assert!((c.value[0] - 0.632_120_558_8).abs() < 1e-9);
    }

    #[test]
    fn empty_space_shows_background() {
        let c = composite(&[0.0; 5], &[0.2; 5], &[0.3; 5], 1, &[0.9]);
        assert_eq!(c.value, vec![0.9]);
        assert!(c.weights.iter().all(|&w| w == 0.0));
        assert_eq!(c.transmittance, 1.0);
    }

    #[test]
    fn opaque_first_sample_saturates() {
        let c = composite(&[50.0, 1.0, 3.0], &[1.0; 3], &[0.7, 0.1, 0.2], 1, &[1.0]);
        assert!((c.value[0] - 0.7).abs() < 1e-12);
        assert!(c.weights[1] < 1e-12 && c.weights[2] < 1e-12);
    }

    #[test]
    fn expected_depth_cases() {
        assert_eq!(expected_depth(&[1.0], &[2.0], 0.5), Some(2.0));
        assert_eq!(expected_depth(&[0.5, 0.5], &[1.0, 3.0], 0.5), Some(2.0));
        let (w, _) = compositing_weights(&[0.0; 4], &[0.1; 4]);
        assert_eq!(expected_depth(&w, &[1.0, 2.0, 3.0, 4.0], 0.5), None);
    }

    #[test]
    fn sigma_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-4;
        for _ in 0..50 {
            let n = rng.random_range(1..8);
            let sig: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
            let del: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.5)).collect();
            let vals: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bg = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let loss = |s: &[f64]| {
                let c = composite(s, &del, &vals, 2, &bg);
                c.value[0] * g[0] + c.value[1] * g[1]
            };
            let c = composite(&sig, &del, &vals, 2, &bg);
            let proj: Vec<f64> = (0..n).map(|k| vals[2 * k] * g[0] + vals[2 * k + 1] * g[1]).collect();
            let grad = sigma_gradient(&sig, &del, &c.weights, c.transmittance, &proj, bg[0] * g[0] + bg[1] * g[1]);
            for k in 0..n {
                let mut p = sig.clone();
                p[k] += h;
                let mut m = sig.clone();
                m[k] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
                assert!(rel < 1e-5, "fd {fd} analytic {}", grad[k]);
            }
        }
    }
}
