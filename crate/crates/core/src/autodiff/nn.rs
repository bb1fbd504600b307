use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::{gemm, Tensor};
use super::AutodiffError;

/// Activation applied after every hidden layer. The last layer is always
/// linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_widths: &[usize], seed: u64) -> Self {
        Self {
            layer_widths: layer_widths.to_vec(),
            activation: Activation::Relu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.layer_widths.len() < 2 {
            return Err(AutodiffError::Spec("an MLP needs at least two widths".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(AutodiffError::Spec("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

/// Named, ordered access to trainable tensors. `params_mut` must yield the
/// same order as `named_params`.
pub trait Parameters {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Fully connected network computing `y = x·W + b` per layer, `W` stored
/// `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

/// Graph handles for one binding of an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl Mlp {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new(spec: MlpSpec) -> Result<Self, AutodiffError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in spec.layer_widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            weights.push(Tensor::new(fan_in, fan_out, w)?);
            biases.push(Tensor::new(1, fan_out, b)?);
        }
        Ok(Self { spec, weights, biases })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self, AutodiffError> {
        spec.validate()?;
        let weights = spec.layer_widths.windows(2).map(|p| Tensor::zeros(p[0], p[1])).collect();
        let biases = spec.layer_widths[1..].iter().map(|w| Tensor::zeros(1, *w)).collect();
        Ok(Self { spec, weights, biases })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.biases[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.biases[layer]
    }

    fn check_input(&self, cols: usize) -> Result<(), AutodiffError> {
        if cols != self.spec.input_width() {
            return Err(AutodiffError::Shape(format!(
                "MLP expects width {}, got {cols}",
                self.spec.input_width()
            )));
        }
        Ok(())
    }

    /// Forward pass without recording a graph.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.check_input(x.cols())?;
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            // same rounding as the recorded path: product first, then bias
            let mut out = Tensor::zeros(h.rows(), w.cols());
            gemm(h.rows(), w.rows(), w.cols(), 1.0, h.data(), false, w.data(), false, 0.0, out.data_mut());
            for row in out.data_mut().chunks_mut(w.cols()) {
                for (o, bb) in row.iter_mut().zip(b.data()) {
                    *o += bb;
                }
            }
            if i < last && self.spec.activation == Activation::Relu {
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// Puts the parameters on the tape, as leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> MlpVars {
        let mut put = |t: &Tensor| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) };
        let weights = self.weights.iter().map(&mut put).collect();
        let biases = self.biases.iter().map(&mut put).collect();
        MlpVars { weights, biases }
    }

    pub fn forward_graph(&self, g: &mut Graph, vars: &MlpVars, x: Var) -> Result<Var, AutodiffError> {
        self.check_input(g.value(x).cols())?;
        let last = self.weights.len() - 1;
        let mut h = x;
        for i in 0..self.weights.len() {
            h = g.matmul(h, vars.weights[i])?;
            h = g.add_bias(h, vars.biases[i])?;
            if i < last && self.spec.activation == Activation::Relu {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Gradients for each parameter in [`Parameters`] order; zeros where the
    /// backward pass did not reach.
    pub fn gradients(&self, vars: &MlpVars, grads: &Gradients) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for i in 0..self.weights.len() {
            out.push(grads.get_or_zeros(vars.weights[i], &self.weights[i]));
            out.push(grads.get_or_zeros(vars.biases[i], &self.biases[i]));
        }
        out
    }

    /// Product of per-layer spectral norm upper bounds (Frobenius), a
    /// Lipschitz constant of the whole network for 1-Lipschitz activations.
    pub fn lipschitz_bound(&self) -> f64 {
        self.weights.iter().map(|w| w.norm()).product()
    }
}

impl Parameters for Mlp {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("layer{i}.weight"), w));
            out.push((format!("layer{i}.bias"), b));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }
}

pub const POINTNET_WIDTHS: [usize; 4] = [3, 64, 128, 1024];

/// Shared per-point MLP followed by a column-wise max over points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointNet {
    mlp: Mlp,
}

impl PointNet {
    pub fn new(seed: u64) -> Self {
        Self {
            mlp: Mlp::new(MlpSpec::new(&POINTNET_WIDTHS, seed)).expect("fixed widths are valid"),
        }
    }

    pub fn zeros() -> Self {
        Self {
            mlp: Mlp::zeros(MlpSpec::new(&POINTNET_WIDTHS, 0)).expect("fixed widths are valid"),
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn output_width(&self) -> usize {
        self.mlp.spec().output_width()
    }

    /// Global feature of an `N x 3` cloud.
    pub fn encode(&self, cloud: &Tensor) -> Result<Vec<f64>, AutodiffError> {
        if cloud.rows() == 0 {
            return Err(AutodiffError::EmptyInput("point cloud"));
        }
        let h = self.mlp.forward(cloud)?;
        let cols = h.cols();
        let mut best = h.row_slice(0).to_vec();
        for r in 1..h.rows() {
            for (b, v) in best.iter_mut().zip(h.row_slice(r)) {
                if *v > *b {
                    *b = *v;
                }
            }
        }
        debug_assert_eq!(best.len(), cols);
        Ok(best)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> MlpVars {
        self.mlp.bind(g, trainable)
    }

    pub fn encode_graph(&self, g: &mut Graph, vars: &MlpVars, cloud: Var) -> Result<Var, AutodiffError> {
        if g.value(cloud).rows() == 0 {
            return Err(AutodiffError::EmptyInput("point cloud"));
        }
        let h = self.mlp.forward_graph(g, vars, cloud)?;
        g.max_pool_rows(h)
    }

    pub fn gradients(&self, vars: &MlpVars, grads: &Gradients) -> Vec<Tensor> {
        self.mlp.gradients(vars, grads)
    }
}

impl Parameters for PointNet {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.mlp.named_params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.params_mut()
    }
}
