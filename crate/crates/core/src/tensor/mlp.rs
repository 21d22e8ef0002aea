use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{relu, sigmoid, softmax, Matrix};
use crate::error::{Error, Result};

/// Output nonlinearity applied after the last layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Sigmoid,
    Softmax,
    Linear,
}

/// A bias-free perceptron `head(Wₖ·ReLU(…ReLU(W₁·x)))`.
///
/// `layers[0]` touches the input and `layers.last()` produces the output, so
/// the two-matrix case `W_outer·ReLU(W_inner·x)` is `layers = [W_inner, W_outer]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Matrix>,
}

/// Activations retained by [`Mlp::forward`] for the matching backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    shapes: Vec<(usize, usize)>,
    /// Input seen by each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation produced by each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
    head: Head,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Pre-activations of every layer, input side first.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("perceptron layers"));
        }
        for pair in layers.windows(2) {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::shape(
                    "perceptron layer chain",
                    pair[0].rows(),
                    pair[1].cols(),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    /// Glorot-initialized chain `input → sizes[0] → … → sizes[last]`.
    pub fn glorot<R: Rng + ?Sized>(input: usize, sizes: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut fan_in = input;
        for &fan_out in sizes {
            layers.push(Matrix::glorot(fan_out, fan_in, rng));
            fan_in = fan_out;
        }
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(Matrix::shape).collect()
    }

    pub fn forward(&self, x: &[f64], head: Head) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("perceptron input", self.input_dim(), x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("perceptron input"));
        }
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.matvec(&current)?;
            inputs.push(current);
            current = if i + 1 < depth {
                z.iter().map(|&v| relu(v)).collect()
            } else {
                apply_head(&z, head)
            };
            pre.push(z);
        }
        let cache = MlpCache {
            shapes: self.shapes(),
            inputs,
            pre,
            output: current.clone(),
            head,
        };
        Ok((current, cache))
    }

    /// Forward pass without keeping activations.
    pub fn eval(&self, x: &[f64], head: Head) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("perceptron input", self.input_dim(), x.len()));
        }
        let depth = self.layers.len();
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.matvec(&current)?;
            current = if i + 1 < depth {
                z.into_iter().map(relu).collect()
            } else {
                apply_head(&z, head)
            };
        }
        Ok(current)
    }

    /// Reverse-mode gradients of `⟨upstream, output⟩` with respect to every
    /// layer, returned in the same layout as `self`.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> Result<Mlp> {
        if cache.shapes != self.shapes() {
            return Err(Error::StaleCache);
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::shape(
                "perceptron upstream gradient",
                self.output_dim(),
                upstream.len(),
            ));
        }
        let mut grads = self.zeros_like();
        let mut delta = head_backward(&cache.output, upstream, cache.head);
        for i in (0..self.layers.len()).rev() {
            grads.layers[i].add_outer(1.0, &delta, &cache.inputs[i]);
            if i == 0 {
                break;
            }
            let mut below = self.layers[i].tr_matvec(&delta)?;
            for (g, &z) in below.iter_mut().zip(&cache.pre[i - 1]) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = below;
        }
        Ok(grads)
    }

    /// `self += alpha · other`, layer by layer.
    pub fn add_scaled(&mut self, alpha: f64, other: &Mlp) -> Result<()> {
        if self.shapes() != other.shapes() {
            return Err(Error::StaleCache);
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_scaled(alpha, b)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }
}

fn apply_head(z: &[f64], head: Head) -> Vec<f64> {
    match head {
        Head::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
        Head::Softmax => softmax(z),
        Head::Linear => z.to_vec(),
    }
}

fn head_backward(output: &[f64], upstream: &[f64], head: Head) -> Vec<f64> {
    match head {
        Head::Linear => upstream.to_vec(),
        Head::Sigmoid => output
            .iter()
            .zip(upstream)
            .map(|(&y, &g)| g * y * (1.0 - y))
            .collect(),
        Head::Softmax => {
            let inner: f64 = output.iter().zip(upstream).map(|(y, g)| y * g).sum();
            output
                .iter()
                .zip(upstream)
                .map(|(&y, &g)| y * (g - inner))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line re-implementation of `head(W1·ReLU(W2·x))` used as an
    /// independent oracle for the layered forward pass.
    fn straight_line(w2: &Matrix, w1: &Matrix, x: &[f64], head: Head) -> Vec<f64> {
        let mut hidden = vec![0.0; w2.rows()];
        for (r, h) in hidden.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..w2.cols() {
                acc += w2.get(r, c) * x[c];
            }
            *h = acc.max(0.0);
        }
        let mut out = vec![0.0; w1.rows()];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..w1.cols() {
                acc += w1.get(r, c) * hidden[c];
            }
            *o = acc;
        }
        match head {
            Head::Linear => out,
            Head::Sigmoid => out.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
            Head::Softmax => {
                let m = out.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = out.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            }
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_sigmoid_gives_half() {
        let mlp = Mlp::from_layers(vec![Matrix::zeros(4, 3), Matrix::zeros(2, 4)]).unwrap();
        let (y, _) = mlp.forward(&[1.0, -2.0, 3.0], Head::Sigmoid).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_chain_reproduces_relu() {
        let w2 = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let w1 = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let mlp = Mlp::from_layers(vec![w2, w1]).unwrap();
        for x in [2.5, 0.0, -1.5] {
            let (y, _) = mlp.forward(&[x], Head::Linear).unwrap();
            assert_eq!(y, vec![relu(x)]);
        }
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for head in [Head::Linear, Head::Sigmoid, Head::Softmax] {
            for _ in 0..20 {
                let w2 = Matrix::from_vec(5, 4, random_vec(&mut rng, 20)).unwrap();
                let w1 = Matrix::from_vec(3, 5, random_vec(&mut rng, 15)).unwrap();
                let x = random_vec(&mut rng, 4);
                let mlp = Mlp::from_layers(vec![w2.clone(), w1.clone()]).unwrap();
                let (y, _) = mlp.forward(&x, head).unwrap();
                let oracle = straight_line(&w2, &w1, &x, head);
                for (a, b) in y.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-12, "{head:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let mlp = Mlp::glorot(3, &[2, 1], &mut ChaCha8Rng::seed_from_u64(0));
        assert!(mlp.forward(&[1.0, 2.0], Head::Linear).is_err());
        assert!(matches!(
            mlp.forward(&[1.0, f64::INFINITY, 0.0], Head::Linear),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::glorot(4, &[6, 2], &mut rng);
        let (_, cache) = mlp.forward(&random_vec(&mut rng, 4), Head::Softmax).unwrap();
        let grads = mlp.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(grads.layers().iter().all(|m| m.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn dead_relu_unit_has_zero_inner_row_gradient() {
        // Row 0 of the inner layer sees a strictly negative pre-activation.
        let w2 = Matrix::from_rows(&[vec![-1.0, -1.0], vec![1.0, 0.5]]).unwrap();
        let w1 = Matrix::from_rows(&[vec![0.7, -0.3]]).unwrap();
        let mlp = Mlp::from_layers(vec![w2, w1]).unwrap();
        let (_, cache) = mlp.forward(&[1.0, 2.0], Head::Sigmoid).unwrap();
        let grads = mlp.backward(&cache, &[1.0]).unwrap();
        assert_eq!(grads.layers()[0].row(0), &[0.0, 0.0]);
        assert!(grads.layers()[0].row(1).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Mlp::glorot(3, &[4, 1], &mut rng);
        let b = Mlp::glorot(3, &[5, 1], &mut rng);
        let (_, cache) = a.forward(&[0.1, 0.2, 0.3], Head::Linear).unwrap();
        assert!(matches!(b.backward(&cache, &[1.0]), Err(Error::StaleCache)));
    }
}
