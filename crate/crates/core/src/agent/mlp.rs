use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected network with ReLU hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `in × out` per layer.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Layer inputs: the network input, then each post-ReLU hidden layer.
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Gradients shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Layer sizes and flattened parameters, for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDocument {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Mlp {
    /// Uniform He-style initialization; the output layer is scaled by `out_scale`.
    pub fn new<R: Rng>(sizes: &[usize], out_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        let layers = sizes.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut bound = (6.0 / fan_in as f64).sqrt();
            if l + 1 == layers {
                bound *= out_scale;
            }
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound)));
            biases.push(Array1::zeros(fan_out));
        }
        Self { weights, biases }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            weights: sizes.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect(),
            biases: sizes[1..].iter().map(|&n| Array1::zeros(n)).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].nrows()];
        s.extend(self.weights.iter().map(|w| w.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("at least one layer").ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Trace {
        let layers = self.weights.len();
        let mut inputs = Vec::with_capacity(layers);
        let mut h = x.to_owned();
        for l in 0..layers {
            let mut z = h.dot(&self.weights[l]) + &self.biases[l];
            if l + 1 < layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        Trace { inputs, output: h }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).output
    }

    /// Parameter gradients of `Σ d_out ⊙ output`.
    pub fn backward(&self, trace: &Trace, d_out: &Array2<f64>) -> MlpGrad {
        let layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        let mut delta = d_out.clone();
        for l in (0..layers).rev() {
            let input = &trace.inputs[l];
            gw[l] = input.t().dot(&delta);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                // ReLU derivative from the stored post-activation
                back.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        MlpGrad {
            weights: gw,
            biases: gb,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter count");
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = params[k];
                k += 1;
            }
        }
    }

    pub fn to_document(&self) -> MlpDocument {
        MlpDocument {
            sizes: self.sizes(),
            params: self.flat(),
        }
    }

    pub fn from_document(doc: &MlpDocument) -> Result<Self, String> {
        if doc.sizes.len() < 2 {
            return Err("network needs at least two layer sizes".into());
        }
        let mut net = Self::zeros(&doc.sizes);
        if doc.params.len() != net.num_params() {
            return Err(format!(
                "expected {} parameters for sizes {:?}, found {}",
                net.num_params(),
                doc.sizes,
                doc.params.len()
            ));
        }
        if doc.params.iter().any(|v| !v.is_finite()) {
            return Err("non-finite parameter".into());
        }
        net.set_flat(&doc.params);
        Ok(net)
    }
}

impl MlpGrad {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 5, 2], 1.0, &mut rng);
        let doc = net.to_document();
        assert_eq!(doc.sizes, vec![3, 5, 2]);
        assert_eq!(Mlp::from_document(&doc).unwrap(), net);
        let bad = MlpDocument {
            sizes: vec![3, 5, 2],
            params: vec![0.0; 3],
        };
        assert!(Mlp::from_document(&bad).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[2, 4, 1]);
        let y = net.predict(array![[1.0, -2.0]].view());
        assert_eq!(y, array![[0.0]]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::new(&[3, 4, 3, 2], 1.0, &mut rng);
        let x = array![[0.3, -0.7, 1.1], [-0.2, 0.5, 0.9]];
        let w = array![[1.0, -0.5], [0.25, 2.0]];
        let loss = |n: &Mlp| (n.predict(x.view()) * &w).sum();
        let g = net.backward(&net.forward(x.view()), &w).flat();
        let base = net.flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let mut up = net.clone();
            up.set_flat(&p);
            p[i] -= 2.0 * h;
            let mut dn = net.clone();
            dn.set_flat(&p);
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }
}
