use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{lit, ModelConfig, Scalar};
use crate::error::{Error, Result};

pub(crate) const TOK: usize = 0;
pub(crate) const POS: usize = 1;
pub(crate) const PER_LAYER: usize = 16;

// Offsets inside a layer block.
pub(crate) const LN1_G: usize = 0;
pub(crate) const LN1_B: usize = 1;
pub(crate) const WQ: usize = 2;
pub(crate) const BQ: usize = 3;
pub(crate) const WK: usize = 4;
pub(crate) const BK: usize = 5;
pub(crate) const WV: usize = 6;
pub(crate) const BV: usize = 7;
pub(crate) const WO: usize = 8;
pub(crate) const BO: usize = 9;
pub(crate) const LN2_G: usize = 10;
pub(crate) const LN2_B: usize = 11;
pub(crate) const W1: usize = 12;
pub(crate) const B1: usize = 13;
pub(crate) const W2: usize = 14;
pub(crate) const B2: usize = 15;

// Offsets after the last layer.
pub(crate) const LNF_G: usize = 0;
pub(crate) const LNF_B: usize = 1;
pub(crate) const WC: usize = 2;
pub(crate) const BC: usize = 3;

const LAYER_NAMES: [&str; PER_LAYER] = [
    "ln1.gamma", "ln1.beta", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln2.gamma", "ln2.beta", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows_cols(&self) -> (usize, usize) {
        match self.shape[..] {
            [n] => (1, n),
            [r, c] => (r, c),
            _ => unreachable!("tensors are vectors or matrices"),
        }
    }
}

pub(crate) fn layout(c: &ModelConfig) -> (Vec<TensorInfo>, usize) {
    let (d, f) = (c.d_model, c.d_ff);
    let mut specs: Vec<(String, Vec<usize>)> = vec![
        ("tok_emb".into(), vec![c.vocab_size, d]),
        ("pos_emb".into(), vec![c.max_seq_len, d]),
    ];
    for l in 0..c.n_layers {
        let shapes = [
            vec![d], vec![d], vec![d, d], vec![d], vec![d, d], vec![d], vec![d, d], vec![d],
            vec![d, d], vec![d], vec![d], vec![d], vec![d, f], vec![f], vec![f, d], vec![d],
        ];
        for (name, shape) in LAYER_NAMES.iter().zip(shapes) {
            specs.push((format!("layers.{l}.{name}"), shape));
        }
    }
    specs.push(("lnf.gamma".into(), vec![d]));
    specs.push(("lnf.beta".into(), vec![d]));
    specs.push(("classifier.w".into(), vec![d, c.n_labels]));
    specs.push(("classifier.b".into(), vec![c.n_labels]));
    let mut offset = 0;
    let infos = specs
        .into_iter()
        .map(|(name, shape)| {
            let info = TensorInfo { name, shape, offset };
            offset += info.len();
            info
        })
        .collect();
    (infos, offset)
}

/// All weights in one flat buffer, addressed through a fixed layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub config: ModelConfig,
    pub tensors: Vec<TensorInfo>,
    pub data: Vec<T>,
}

impl<T: Scalar> Params<T> {
    /// Deterministic initialization: embeddings from N(0, 0.02²), weight
    /// matrices from N(0, 1/fan_in), biases zero, layer-norm gains one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (tensors, total) = layout(config);
        let mut data = vec![T::zero(); total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for info in &tensors {
            let slot = &mut data[info.offset..info.offset + info.len()];
            if info.name == "pos_emb" {
                sinusoid_init(slot, config.d_model);
                continue;
            }
            let std = if info.name.ends_with("_emb") {
                0.02
            } else if info.shape.len() == 2 {
                (1.0 / info.shape[0] as f64).sqrt()
            } else if info.name.ends_with("gamma") {
                slot.fill(T::one());
                continue;
            } else {
                continue;
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            for x in slot.iter_mut() {
                *x = lit(normal.sample(&mut rng));
            }
        }
        Ok(Params {
            config: config.clone(),
            tensors,
            data,
        })
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    pub(crate) fn layer(&self, l: usize, k: usize) -> usize {
        2 + l * PER_LAYER + k
    }

    pub(crate) fn head(&self, k: usize) -> usize {
        2 + self.config.n_layers * PER_LAYER + k
    }

    pub(crate) fn m(&self, i: usize) -> ArrayView2<'_, T> {
        view2(&self.tensors[i], &self.data)
    }

    pub(crate) fn v(&self, i: usize) -> ArrayView1<'_, T> {
        let t = &self.tensors[i];
        ArrayView1::from(&self.data[t.offset..t.offset + t.len()])
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.data[t.offset..t.offset + t.len()])
    }

    /// Appends `n_new` freshly initialized embedding rows for new tokens;
    /// every other weight is kept as is.
    pub fn grow_vocab(&self, n_new: usize, seed: u64) -> Result<Self> {
        let mut config = self.config.clone();
        config.vocab_size += n_new;
        let (tensors, total) = layout(&config);
        let mut data = Vec::with_capacity(total);
        let old_tok = &self.tensors[TOK];
        data.extend_from_slice(&self.data[..old_tok.len()]);
        let normal = Normal::new(0.0, 0.02).expect("positive std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n_new * config.d_model {
            data.push(lit(normal.sample(&mut rng)));
        }
        data.extend_from_slice(&self.data[old_tok.len()..]);
        debug_assert_eq!(data.len(), total);
        Ok(Params {
            config,
            tensors,
            data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            config: self.config.clone(),
            tensors: self.tensors.clone(),
            data: self
                .data
                .iter()
                .map(|x| lit(x.to_f64().expect("finite weight")))
                .collect(),
        }
    }

    pub(crate) fn from_parts(config: ModelConfig, data: Vec<T>) -> Result<Self> {
        config.validate()?;
        let (tensors, total) = layout(&config);
        if data.len() != total {
            return Err(Error::LengthMismatch(data.len(), total));
        }
        Ok(Params {
            config,
            tensors,
            data,
        })
    }
}

/// Sinusoidal rows at the token-embedding scale; the table stays trainable.
fn sinusoid_init<T: Scalar>(slot: &mut [T], d: usize) {
    let amplitude = 0.02 * std::f64::consts::SQRT_2;
    for (pos, row) in slot.chunks_mut(d).enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            let freq = 1.0 / 10_000f64.powf((j / 2 * 2) as f64 / d as f64);
            let angle = pos as f64 * freq;
            *x = lit(amplitude * if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
}

pub(crate) fn view2<'a, T>(t: &TensorInfo, data: &'a [T]) -> ArrayView2<'a, T> {
    ArrayView2::from_shape(t.rows_cols(), &data[t.offset..t.offset + t.len()]).expect("layout")
}

pub(crate) fn view2_mut<'a, T>(t: &TensorInfo, data: &'a mut [T]) -> ArrayViewMut2<'a, T> {
    ArrayViewMut2::from_shape(t.rows_cols(), &mut data[t.offset..t.offset + t.len()])
        .expect("layout")
}

pub(crate) fn view1_mut<'a, T>(t: &TensorInfo, data: &'a mut [T]) -> ArrayViewMut1<'a, T> {
    ArrayViewMut1::from(&mut data[t.offset..t.offset + t.len()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            d_model: 16,
            n_heads: 4,
            n_layers: 2,
            d_ff: 32,
            max_seq_len: 20,
            n_labels: 5,
            dropout: 0.1,
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Params::<f32>::init(&config(), 7).unwrap();
        let b = Params::<f32>::init(&config(), 7).unwrap();
        let c = Params::<f32>::init(&config(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn growing_vocab_appends_rows() {
        let a = Params::<f32>::init(&config(), 7).unwrap();
        let b = a.grow_vocab(7, 1).unwrap();
        assert_eq!(b.config.vocab_size, 37);
        let (ta, tb) = (a.tensor("tok_emb").unwrap(), b.tensor("tok_emb").unwrap());
        assert_eq!(tb.len(), ta.len() + 7 * 16);
        assert_eq!(&tb[..ta.len()], ta);
        for t in a.tensors.iter().skip(1) {
            assert_eq!(a.tensor(&t.name), b.tensor(&t.name), "{}", t.name);
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let c = ModelConfig {
            n_heads: 3,
            d_model: 128,
            ..config()
        };
        assert!(matches!(Params::<f32>::init(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn layout_covers_buffer_without_gaps() {
        let (t, total) = layout(&config());
        let mut off = 0;
        for info in &t {
            assert_eq!(info.offset, off);
            off += info.len();
        }
        assert_eq!(off, total);
        assert_eq!(t.len(), 2 + 2 * PER_LAYER + 4);
    }
}
