//! Small fully connected network: ReLU hidden layers, softmax output,
//! cross-entropy loss and Adam.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs x inputs`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn he<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let s = (2.0 / inputs as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { inputs, outputs, w, b: vec![0.0; outputs] }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

impl Mlp {
    /// `sizes` lists every layer width, input first.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::he(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    // Post-activation outputs of every layer; the last is the softmax.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &acts[i - 1] };
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward(input, &mut out);
            if i == last {
                softmax_in_place(&mut out);
            } else {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    /// Class probabilities.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().unwrap_or_default()
    }

    /// Adds the cross-entropy gradient for one example to `grad` (laid out
    /// like the parameters) and returns the loss.
    fn accumulate(&self, x: &[f64], label: usize, grad: &mut [Vec<f64>]) -> f64 {
        let acts = self.activations(x);
        let probs = acts.last().expect("at least one layer");
        let loss = -probs[label].max(1e-300).ln();
        let mut delta: Vec<f64> = probs.clone();
        delta[label] -= 1.0;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = if i == 0 { x } else { &acts[i - 1] };
            let g = &mut grad[i];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut g[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
                g[layer.outputs * layer.inputs + o] += d;
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                for (p, a) in prev.iter_mut().zip(&acts[i - 1]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam state over an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    pub fn new(net: &Mlp, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.w.len() + l.b.len()]).collect();
        Self { cfg, m: zeros.clone(), v: zeros, step: 0 }
    }

    /// One minibatch update; returns the mean loss.
    pub fn train_batch(&mut self, net: &mut Mlp, batch: &[(&[f64], usize)]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let mut grad: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.w.len() + l.b.len()]).collect();
        let loss: f64 = batch.iter().map(|(x, y)| net.accumulate(x, *y, &mut grad)).sum();
        let n = batch.len() as f64;
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let nw = layer.w.len();
            for (j, g) in grad[li].iter().enumerate() {
                let g = g / n;
                let m = &mut self.m[li][j];
                let v = &mut self.v[li][j];
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let delta = c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
                if j < nw {
                    layer.w[j] -= delta;
                } else {
                    layer.b[j - nw] -= delta;
                }
            }
        }
        loss / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[3, 4, 2], &mut rng);
        let x = [0.3, -0.7, 1.1];
        let mut grad: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.w.len() + l.b.len()]).collect();
        net.accumulate(&x, 1, &mut grad);
        let loss = |n: &Mlp| -n.predict(&x)[1].ln();
        let h = 1e-6;
        for li in 0..net.layers.len() {
            let nw = net.layers[li].w.len();
            for j in 0..grad[li].len() {
                let mut a = net.clone();
                let mut b = net.clone();
                if j < nw {
                    a.layers[li].w[j] += h;
                    b.layers[li].w[j] -= h;
                } else {
                    a.layers[li].b[j - nw] += h;
                    b.layers[li].b[j - nw] -= h;
                }
                let fd = (loss(&a) - loss(&b)) / (2.0 * h);
                assert!((fd - grad[li][j]).abs() < 1e-6, "layer {li} param {j}: {fd} vs {}", grad[li][j]);
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[18, 128, 64, 2], &mut rng);
        let p = net.predict(&[0.1; 18]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
