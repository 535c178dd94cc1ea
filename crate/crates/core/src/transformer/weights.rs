use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::transformer::TransformerConfig;

/// Parameters of one pre-norm encoder layer.
///
/// Projections act on row vectors (`y = x·W + b`), so `W_Q`, `W_K`, `W_V`
/// are `d × d` with head `h` owning the column block `[h·d_k, (h+1)·d_k)`,
/// and `W_O` is `d × d` with head `h` owning the matching *row* block.
/// (In the transposed out×in storage used by most frameworks these are the
/// row blocks of `W_Q` and the column blocks of `W_O`.)
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub b_q: T,
    pub b_k: T,
    pub b_v: T,
    pub b_o: T,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
}

impl<T> LayerWeights<T> {
    pub const NAMES: [&'static str; 16] = [
        "W_Q",
        "W_K",
        "W_V",
        "W_O",
        "b_Q",
        "b_K",
        "b_V",
        "b_O",
        "mlp.W1",
        "mlp.b1",
        "mlp.W2",
        "mlp.b2",
        "ln1.gamma",
        "ln1.beta",
        "ln2.gamma",
        "ln2.beta",
    ];

    pub fn fields(&self) -> [&T; 16] {
        [
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.b_q,
            &self.b_k,
            &self.b_v,
            &self.b_o,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]
    }

    pub fn fields_mut(&mut self) -> [&mut T; 16] {
        [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.b_q,
            &mut self.b_k,
            &mut self.b_v,
            &mut self.b_o,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }

    pub fn from_fields(f: [T; 16]) -> Self {
        let [w_q, w_k, w_v, w_o, b_q, b_k, b_v, b_o, w1, b1, w2, b2, ln1_gamma, ln1_beta, ln2_gamma, ln2_beta] =
            f;
        Self {
            w_q,
            w_k,
            w_v,
            w_o,
            b_q,
            b_k,
            b_v,
            b_o,
            w1,
            b1,
            w2,
            b2,
            ln1_gamma,
            ln1_beta,
            ln2_gamma,
            ln2_beta,
        }
    }

    pub fn map<'s, U>(&'s self, mut f: impl FnMut(&'s T) -> U) -> LayerWeights<U> {
        LayerWeights::from_fields(self.fields().map(&mut f))
    }
}

/// Every parameter of the encoder, generic over the slot type so the same
/// layout holds tensors, gradients, tape handles or shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    /// `V × d`
    pub tok_emb: T,
    /// `(T+1) × d`, row 0 belongs to the classification token.
    pub pos_emb: T,
    /// `1 × d` classification-token embedding.
    pub cls: T,
    pub layers: Vec<LayerWeights<T>>,
    pub final_gamma: T,
    pub final_beta: T,
    /// `d × C`
    pub head_w: T,
    pub head_b: T,
}

impl<T> Weights<T> {
    pub fn map<'s, U>(&'s self, mut f: impl FnMut(&'s T) -> U) -> Weights<U> {
        Weights {
            tok_emb: f(&self.tok_emb),
            pos_emb: f(&self.pos_emb),
            cls: f(&self.cls),
            layers: self.layers.iter().map(|l| l.map(&mut f)).collect(),
            final_gamma: f(&self.final_gamma),
            final_beta: f(&self.final_beta),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }

    /// `(name, slot)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("embed.tok".to_string(), &self.tok_emb),
            ("embed.pos".to_string(), &self.pos_emb),
            ("embed.cls".to_string(), &self.cls),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in LayerWeights::<T>::NAMES.iter().zip(layer.fields()) {
                out.push((format!("layer{l}.shared.{name}"), t));
            }
        }
        out.push(("final_ln.gamma".to_string(), &self.final_gamma));
        out.push(("final_ln.beta".to_string(), &self.final_beta));
        out.push(("head.W".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb, &mut self.cls];
        for layer in &mut self.layers {
            out.extend(layer.fields_mut());
        }
        out.extend([
            &mut self.final_gamma,
            &mut self.final_beta,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }
}

impl<S: Scalar> Weights<Tensor<S>> {
    pub fn zeros_like(&self) -> Self {
        self.map(|t| Tensor::zeros(t.shape()))
    }

    /// `self += alpha * other`, slot by slot.
    pub fn axpy(&mut self, alpha: S, other: &Self) -> Result<()> {
        let others = other.named();
        for (dst, (_, src)) in self.slots_mut().into_iter().zip(others) {
            dst.axpy(alpha, src)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: S) {
        for t in self.slots_mut() {
            for x in t.data_mut() {
                *x *= s;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

/// Shapes implied by a config, in the same layout as the parameters.
pub fn expected_shapes(cfg: &TransformerConfig) -> Weights<Vec<usize>> {
    let (d, f) = (cfg.hidden, cfg.ff);
    let layer = LayerWeights::from_fields([
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d],
        vec![d],
        vec![d],
        vec![d],
        vec![d, f],
        vec![f],
        vec![f, d],
        vec![d],
        vec![d],
        vec![d],
        vec![d],
        vec![d],
    ]);
    Weights {
        tok_emb: vec![cfg.vocab, d],
        pos_emb: vec![cfg.positions(), d],
        cls: vec![1, d],
        layers: vec![layer; cfg.layers],
        final_gamma: vec![d],
        final_beta: vec![d],
        head_w: vec![d, cfg.classes],
        head_b: vec![cfg.classes],
    }
}

/// A sequence classifier: embeddings, `L` pre-norm layers, final layernorm and
/// a linear head reading the classification token.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub config: TransformerConfig,
    pub weights: Weights<Tensor<S>>,
}

impl<S: Scalar> Model<S> {
    /// Random initialization: fan-in scaled Gaussian projections, unit
    /// layernorms, zero biases.
    pub fn init(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = expected_shapes(&config);
        let d = config.hidden as f64;
        let ff = config.ff as f64;
        let emb_std = 0.5;
        let mut randn = |shape: &[usize], std: f64| Tensor::randn(shape, std, &mut rng);
        let mut layers = Vec::with_capacity(config.layers);
        for ls in &shapes.layers {
            layers.push(LayerWeights {
                w_q: randn(&ls.w_q, d.powf(-0.5)),
                w_k: randn(&ls.w_k, d.powf(-0.5)),
                w_v: randn(&ls.w_v, d.powf(-0.5)),
                w_o: randn(&ls.w_o, d.powf(-0.5)),
                b_q: Tensor::zeros(&ls.b_q),
                b_k: Tensor::zeros(&ls.b_k),
                b_v: Tensor::zeros(&ls.b_v),
                b_o: Tensor::zeros(&ls.b_o),
                w1: randn(&ls.w1, d.powf(-0.5)),
                b1: Tensor::zeros(&ls.b1),
                w2: randn(&ls.w2, ff.powf(-0.5)),
                b2: Tensor::zeros(&ls.b2),
                ln1_gamma: Tensor::full(&ls.ln1_gamma, S::one()),
                ln1_beta: Tensor::zeros(&ls.ln1_beta),
                ln2_gamma: Tensor::full(&ls.ln2_gamma, S::one()),
                ln2_beta: Tensor::zeros(&ls.ln2_beta),
            });
        }
        let weights = Weights {
            tok_emb: randn(&shapes.tok_emb, emb_std),
            pos_emb: randn(&shapes.pos_emb, 0.1),
            cls: randn(&shapes.cls, emb_std),
            layers,
            final_gamma: Tensor::full(&shapes.final_gamma, S::one()),
            final_beta: Tensor::zeros(&shapes.final_beta),
            head_w: randn(&shapes.head_w, d.powf(-0.5)),
            head_b: Tensor::zeros(&shapes.head_b),
        };
        Ok(Self { config, weights })
    }

    /// Wraps weights after checking every shape against the config.
    pub fn from_weights(config: TransformerConfig, weights: Weights<Tensor<S>>) -> Result<Self> {
        config.validate()?;
        let expected = expected_shapes(&config);
        if weights.layers.len() != config.layers {
            return Err(Error::contract(
                "transformer",
                format!(
                    "{} layers for config with {}",
                    weights.layers.len(),
                    config.layers
                ),
            ));
        }
        for ((name, shape), (_, t)) in expected.named().into_iter().zip(weights.named()) {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "model",
                    format!("{name}: expected {shape:?}, got {:?}", t.shape()),
                ));
            }
        }
        Ok(Self { config, weights })
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config,
            weights: self.weights.map(|t| t.cast()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_matches_expected_shapes() {
        let cfg = TransformerConfig::default();
        let m = Model::<f64>::init(cfg, 1).unwrap();
        let again = Model::from_weights(cfg, m.weights.clone()).unwrap();
        assert_eq!(again, m);
        assert_eq!(m.weights.named().len(), 3 + 16 * cfg.layers + 4);
    }

    #[test]
    fn from_weights_names_bad_tensor() {
        let cfg = TransformerConfig::default();
        let mut w = Model::<f64>::init(cfg, 1).unwrap().weights;
        w.layers[1].b_o = Tensor::zeros(&[3]);
        let err = Model::from_weights(cfg, w).unwrap_err().to_string();
        assert!(err.contains("layer1.shared.b_O"), "{err}");
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = TransformerConfig::default();
        assert_eq!(
            Model::<f64>::init(cfg, 5).unwrap(),
            Model::<f64>::init(cfg, 5).unwrap()
        );
    }
}
