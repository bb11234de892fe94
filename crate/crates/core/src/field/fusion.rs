use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Two-layer network mapping `concat(f(x_ray), f(z))` to a relationship
/// feature: `W2 · tanh(W1 · [a; b] + b1) + b2`.
#[derive(Clone, Debug)]
pub struct RelationFusionNet {
    pub input_half: usize,
    pub hidden: usize,
    pub output: usize,
    /// `hidden × 2·input_half`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `output × hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub grad_w1: Vec<f64>,
    pub grad_b1: Vec<f64>,
    pub grad_w2: Vec<f64>,
    pub grad_b2: Vec<f64>,
}

/// First-layer contribution of the query point, shared by every sample of a ray.
#[derive(Clone, Debug)]
pub struct QueryProjection {
    pub features: Vec<f64>,
    /// `W1[:, half..] · f(z) + b1`
    pub pre: Vec<f64>,
}

/// Activations kept from one forward evaluation for the backward pass.
#[derive(Clone, Debug)]
pub struct FusionActivation {
    pub ray_features: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl RelationFusionNet {
    pub fn zeros(input_half: usize, hidden: usize, output: usize) -> Self {
        let n1 = hidden * 2 * input_half;
        let n2 = output * hidden;
        Self {
            input_half,
            hidden,
            output,
            w1: vec![0.0; n1],
            b1: vec![0.0; hidden],
            w2: vec![0.0; n2],
            b2: vec![0.0; output],
            grad_w1: vec![0.0; n1],
            grad_b1: vec![0.0; hidden],
            grad_w2: vec![0.0; n2],
            grad_b2: vec![0.0; output],
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init<R: Rng>(input_half: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input_half, hidden, output);
        let a1 = (6.0 / (2 * input_half + hidden) as f64).sqrt();
        let d1 = Uniform::new_inclusive(-a1, a1).expect("finite range");
        net.w1.iter_mut().for_each(|w| *w = d1.sample(rng));
        let a2 = (6.0 / (hidden + output) as f64).sqrt();
        let d2 = Uniform::new_inclusive(-a2, a2).expect("finite range");
        net.w2.iter_mut().for_each(|w| *w = d2.sample(rng));
        net
    }

    pub fn zero_grad(&mut self) {
        self.grad_w1.fill(0.0);
        self.grad_b1.fill(0.0);
        self.grad_w2.fill(0.0);
        self.grad_b2.fill(0.0);
    }

    fn row(&self, j: usize) -> &[f64] {
        let w = 2 * self.input_half;
        &self.w1[j * w..(j + 1) * w]
    }

    pub fn project_query(&self, z_features: &[f64]) -> QueryProjection {
        let h = self.input_half;
        let pre = (0..self.hidden)
            .map(|j| {
                let row = &self.row(j)[h..];
                self.b1[j] + row.iter().zip(z_features).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        QueryProjection {
            features: z_features.to_vec(),
            pre,
        }
    }

    pub fn forward_with(&self, ray_features: &[f64], query: &QueryProjection) -> FusionActivation {
        let h = self.input_half;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.row(j)[..h];
                let s = query.pre[j] + row.iter().zip(ray_features).map(|(w, x)| w * x).sum::<f64>();
                s.tanh()
            })
            .collect();
        let output = (0..self.output)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                self.b2[o] + row.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        FusionActivation {
            ray_features: ray_features.to_vec(),
            hidden,
            output,
        }
    }

    pub fn forward(&self, ray_features: &[f64], z_features: &[f64]) -> Vec<f64> {
        self.forward_with(ray_features, &self.project_query(z_features)).output
    }

    /// Accumulates parameter gradients for one activation and returns
    /// `(d/d ray_features, d/d hidden pre-activation)`. The pre-activation
    /// gradient is summed by the caller and pushed into the query features
    /// with [`Self::backward_query`].
    pub fn backward(&mut self, act: &FusionActivation, upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nh = self.hidden;
        let half = self.input_half;
        let mut d_pre = vec![0.0; nh];
        for o in 0..self.output {
            let u = upstream[o];
            if u == 0.0 {
                continue;
            }
            self.grad_b2[o] += u;
            let row = o * nh;
            for j in 0..nh {
                self.grad_w2[row + j] += u * act.hidden[j];
                d_pre[j] += u * self.w2[row + j];
            }
        }
        for j in 0..nh {
            d_pre[j] *= 1.0 - act.hidden[j] * act.hidden[j];
        }
        let mut d_ray = vec![0.0; half];
        let w = 2 * half;
        for j in 0..nh {
            let d = d_pre[j];
            if d == 0.0 {
                continue;
            }
            self.grad_b1[j] += d;
            for i in 0..half {
                self.grad_w1[j * w + i] += d * act.ray_features[i];
                d_ray[i] += d * self.w1[j * w + i];
            }
        }
        (d_ray, d_pre)
    }

    /// Pushes a summed pre-activation gradient into the query half of `W1`;
    /// returns the gradient with respect to the query features.
    pub fn backward_query(&mut self, query: &QueryProjection, d_pre_sum: &[f64]) -> Vec<f64> {
        let half = self.input_half;
        let w = 2 * half;
        let mut d_z = vec![0.0; half];
        for j in 0..self.hidden {
            let d = d_pre_sum[j];
            if d == 0.0 {
                continue;
            }
            for i in 0..half {
                self.grad_w1[j * w + half + i] += d * query.features[i];
                d_z[i] += d * self.w1[j * w + half + i];
            }
        }
        d_z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_emit_bias() {
        let mut net = RelationFusionNet::zeros(3, 4, 2);
        net.b2 = vec![0.25, -1.5];
        net.b1 = vec![0.3; 4];
        assert_eq!(net.forward(&[1.0, 2.0, 3.0], &[-1.0, 0.5, 9.0]), vec![0.25, -1.5]);
    }

    #[test]
    fn matches_independent_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = RelationFusionNet::init(2, 3, 2, &mut rng);
        let a = [0.4, -0.2];
        let b = [0.9, 0.1];
        let x = [a[0], a[1], b[0], b[1]];
        let mut hidden = [0.0; 3];
        for j in 0..3 {
            let mut s = net.b1[j];
            for i in 0..4 {
                s += net.w1[j * 4 + i] * x[i];
            }
            hidden[j] = s.tanh();
        }
        let got = net.forward(&a, &b);
        for o in 0..2 {
            let mut s = net.b2[o];
            for j in 0..3 {
                s += net.w2[o * 3 + j] * hidden[j];
            }
            assert!((got[o] - s).abs() < 1e-14);
        }
    }
}
