use crate::autodiff::{Matrix, RngStream, Scalar, Tape, Var};

use super::ModelConfig;

/// Weights of one pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<W> {
    pub wq: W,
    pub wk: W,
    pub wv: W,
    pub wo: W,
    pub ff1: W,
    pub ff2: W,
    pub ln1_gamma: W,
    pub ln1_beta: W,
    pub ln2_gamma: W,
    pub ln2_beta: W,
}

const LAYER_NAMES: [&str; 10] = [
    "wq", "wk", "wv", "wo", "ff1", "ff2", "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta",
];

impl<W> LayerWeights<W> {
    fn refs(&self) -> [&W; 10] {
        [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ff1,
            &self.ff2,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]
    }

    fn refs_mut(&mut self) -> [&mut W; 10] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ff1,
            &mut self.ff2,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }

    fn from_iter(it: &mut impl Iterator<Item = W>) -> Option<Self> {
        Some(LayerWeights {
            wq: it.next()?,
            wk: it.next()?,
            wv: it.next()?,
            wo: it.next()?,
            ff1: it.next()?,
            ff2: it.next()?,
            ln1_gamma: it.next()?,
            ln1_beta: it.next()?,
            ln2_gamma: it.next()?,
            ln2_beta: it.next()?,
        })
    }
}

/// Every learnable tensor of the model. `W` is a matrix for stored parameters,
/// a [`Var`] once bound to a tape, or a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<W> {
    pub gcn_weight: W,
    pub gcn_bias: W,
    pub layers: Vec<LayerWeights<W>>,
    /// hidden x 4*lstm_hidden, gate blocks ordered i, f, g, o.
    pub lstm_input: W,
    pub lstm_recurrent: W,
    pub lstm_bias: W,
    pub head_w1: W,
    pub head_b1: W,
    pub head_w2: W,
    pub head_b2: W,
}

pub type ModelParams = ModelWeights<Matrix<f32>>;

impl<W> ModelWeights<W> {
    /// All tensors in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = &W> {
        let head = [&self.gcn_weight, &self.gcn_bias];
        let tail = [
            &self.lstm_input,
            &self.lstm_recurrent,
            &self.lstm_bias,
            &self.head_w1,
            &self.head_b1,
            &self.head_w2,
            &self.head_b2,
        ];
        head.into_iter()
            .chain(self.layers.iter().flat_map(|l| l.refs()))
            .chain(tail)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut W> {
        let head = [&mut self.gcn_weight, &mut self.gcn_bias];
        let tail = [
            &mut self.lstm_input,
            &mut self.lstm_recurrent,
            &mut self.lstm_bias,
            &mut self.head_w1,
            &mut self.head_b1,
            &mut self.head_w2,
            &mut self.head_b2,
        ];
        head.into_iter()
            .chain(self.layers.iter_mut().flat_map(|l| l.refs_mut()))
            .chain(tail)
    }

    /// Rebuild from tensors in canonical order; `None` if the count is wrong.
    pub fn from_ordered(depth: usize, items: impl IntoIterator<Item = W>) -> Option<Self> {
        let mut it = items.into_iter();
        let gcn_weight = it.next()?;
        let gcn_bias = it.next()?;
        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            layers.push(LayerWeights::from_iter(&mut it)?);
        }
        let w = ModelWeights {
            gcn_weight,
            gcn_bias,
            layers,
            lstm_input: it.next()?,
            lstm_recurrent: it.next()?,
            lstm_bias: it.next()?,
            head_w1: it.next()?,
            head_b1: it.next()?,
            head_w2: it.next()?,
            head_b2: it.next()?,
        };
        it.next().is_none().then_some(w)
    }

    pub fn map<U>(&self, f: impl FnMut(&W) -> U) -> ModelWeights<U> {
        ModelWeights::from_ordered(self.layers.len(), self.iter().map(f)).expect("same structure")
    }

    pub fn zip_map<V, U>(&self, other: &ModelWeights<V>, mut f: impl FnMut(&W, &V) -> U) -> ModelWeights<U> {
        assert_eq!(self.layers.len(), other.layers.len());
        ModelWeights::from_ordered(self.layers.len(), self.iter().zip(other.iter()).map(|(a, b)| f(a, b)))
            .expect("same structure")
    }

    pub fn len(&self) -> usize {
        9 + 10 * self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl<T: Scalar> ModelWeights<Matrix<T>> {
    /// Register every tensor on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> ModelWeights<Var> {
        self.map(|m| tape.leaf(m.clone()))
    }

    /// Register every tensor as a constant (inference).
    pub fn bind_constant(&self, tape: &mut Tape<T>) -> ModelWeights<Var> {
        self.map(|m| tape.constant(m.clone()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<Matrix<U>> {
        self.map(Matrix::cast)
    }

    pub fn num_scalars(&self) -> usize {
        self.iter().map(Matrix::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(Matrix::all_finite)
    }
}

/// Canonical tensor names, e.g. `gcn.weight`, `layer3.wq`, `lstm.bias`.
pub fn param_names(depth: usize) -> Vec<String> {
    let mut names = vec!["gcn.weight".to_string(), "gcn.bias".to_string()];
    for l in 0..depth {
        names.extend(LAYER_NAMES.iter().map(|n| format!("layer{l}.{n}")));
    }
    names.extend(
        [
            "lstm.input",
            "lstm.recurrent",
            "lstm.bias",
            "head.w1",
            "head.b1",
            "head.w2",
            "head.b2",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    names
}

/// Expected shape of every tensor, in canonical order.
pub fn param_shapes(config: &ModelConfig) -> Vec<(usize, usize)> {
    let (h, m, l) = (config.hidden_dim, config.mlp_dim, config.lstm_hidden);
    let mut shapes = vec![(config.in_dim, h), (1, h)];
    for _ in 0..config.transformer_depth {
        shapes.extend([(h, h), (h, h), (h, h), (h, h), (h, m), (m, h), (1, h), (1, h), (1, h), (1, h)]);
    }
    shapes.extend([(h, 4 * l), (l, 4 * l), (1, 4 * l), (l, m), (1, m), (m, 1), (1, 1)]);
    shapes
}

fn xavier(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix<f32> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform_in(-bound, bound) as f32).collect())
}

/// Xavier-uniform weights, zero biases, unit layer-norm scales and a forget-gate bias of one.
pub fn init_params(config: &ModelConfig) -> ModelParams {
    let mut rng = RngStream::with_stream(config.seed, 0x1417);
    let (h, m, l) = (config.hidden_dim, config.mlp_dim, config.lstm_hidden);
    let gcn_weight = xavier(config.in_dim, h, &mut rng);
    let layers = (0..config.transformer_depth)
        .map(|_| LayerWeights {
            wq: xavier(h, h, &mut rng),
            wk: xavier(h, h, &mut rng),
            wv: xavier(h, h, &mut rng),
            wo: xavier(h, h, &mut rng),
            ff1: xavier(h, m, &mut rng),
            ff2: xavier(m, h, &mut rng),
            ln1_gamma: Matrix::filled(1, h, 1.0),
            ln1_beta: Matrix::zeros(1, h),
            ln2_gamma: Matrix::filled(1, h, 1.0),
            ln2_beta: Matrix::zeros(1, h),
        })
        .collect();
    let mut lstm_bias = Matrix::zeros(1, 4 * l);
    for c in l..2 * l {
        lstm_bias.set(0, c, 1.0);
    }
    ModelWeights {
        gcn_weight,
        gcn_bias: Matrix::zeros(1, h),
        layers,
        lstm_input: xavier(h, 4 * l, &mut rng),
        lstm_recurrent: xavier(l, 4 * l, &mut rng),
        lstm_bias,
        head_w1: xavier(l, m, &mut rng),
        head_b1: Matrix::zeros(1, m),
        head_w2: xavier(m, 1, &mut rng),
        head_b2: Matrix::zeros(1, 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_names_and_order_agree() {
        let c = ModelConfig {
            transformer_depth: 2,
            ..Default::default()
        };
        let p = init_params(&c);
        let shapes: Vec<_> = p.iter().map(Matrix::shape).collect();
        assert_eq!(shapes, param_shapes(&c));
        assert_eq!(param_names(2).len(), p.len());
        assert_eq!(p.gcn_weight.shape(), (92, 128));
    }

    #[test]
    fn deterministic_and_forget_bias() {
        let c = ModelConfig::default();
        assert_eq!(init_params(&c), init_params(&c));
        let p = init_params(&c);
        let l = c.lstm_hidden;
        assert!(p.lstm_bias.row(0)[l..2 * l].iter().all(|&b| b == 1.0));
        assert!(p.lstm_bias.row(0)[..l].iter().all(|&b| b == 0.0));
        assert!(p.lstm_bias.row(0)[2 * l..].iter().all(|&b| b == 0.0));
        let other = init_params(&ModelConfig { seed: 1, ..c });
        assert_ne!(p.gcn_weight, other.gcn_weight);
    }

    #[test]
    fn xavier_bound() {
        let p = init_params(&ModelConfig::default());
        let bound = (6.0f64 / (92.0 + 128.0)).sqrt() as f32;
        assert!(p.gcn_weight.as_slice().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn ordered_round_trip() {
        let p = init_params(&ModelConfig {
            transformer_depth: 1,
            hidden_dim: 8,
            heads: 2,
            mlp_dim: 4,
            lstm_hidden: 3,
            ..Default::default()
        });
        let items: Vec<_> = p.iter().cloned().collect();
        assert_eq!(ModelWeights::from_ordered(1, items.clone()).unwrap(), p);
        assert!(ModelWeights::from_ordered(2, items).is_none());
    }
}
