use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GOP_DIM, MAX_LEN, NUM_PHONES, UTT_ASPECTS, WORD_ASPECTS};
use crate::{Error, Result, Scalar};

use super::ErMode;

/// Width of the encoder representation.
pub const D_MODEL: usize = 24;
/// Feed-forward hidden width.
pub const D_FF: usize = 4 * D_MODEL;
pub const N_LAYERS: usize = 3;
/// Head input: representation followed by (cer, mer).
pub const HEAD_IN: usize = D_MODEL + 2;

/// One pre-norm encoder block. Biases and norm parameters are stored as 1×n.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub ln1_gain: Array2<T>,
    pub ln1_bias: Array2<T>,
    pub wq: Array2<T>,
    pub bq: Array2<T>,
    pub wk: Array2<T>,
    pub bk: Array2<T>,
    pub wv: Array2<T>,
    pub bv: Array2<T>,
    pub wo: Array2<T>,
    pub bo: Array2<T>,
    pub ln2_gain: Array2<T>,
    pub ln2_bias: Array2<T>,
    pub w1: Array2<T>,
    pub b1: Array2<T>,
    pub w2: Array2<T>,
    pub b2: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// 84×24
    pub proj_w: Array2<T>,
    pub proj_b: Array2<T>,
    /// 43×24, the last row embeds the pad phone.
    pub phone_emb: Array2<T>,
    /// 50×24 learned positions.
    pub pos_emb: Array2<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub final_gain: Array2<T>,
    pub final_bias: Array2<T>,
    /// 26×1
    pub phone_head_w: Array2<T>,
    pub phone_head_b: Array2<T>,
    /// 26×3
    pub word_head_w: Array2<T>,
    pub word_head_b: Array2<T>,
    /// 26×5
    pub utt_head_w: Array2<T>,
    pub utt_head_b: Array2<T>,
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || T::of(rng.random_range(-bound..=bound)))
}

impl<T: Scalar> EncoderLayer<T> {
    fn init(rng: &mut ChaCha8Rng) -> Self {
        let d = 1.0 / (D_MODEL as f64).sqrt();
        let f = 1.0 / (D_FF as f64).sqrt();
        EncoderLayer {
            ln1_gain: Array2::ones((1, D_MODEL)),
            ln1_bias: Array2::zeros((1, D_MODEL)),
            wq: uniform(rng, (D_MODEL, D_MODEL), d),
            bq: uniform(rng, (1, D_MODEL), d),
            wk: uniform(rng, (D_MODEL, D_MODEL), d),
            bk: uniform(rng, (1, D_MODEL), d),
            wv: uniform(rng, (D_MODEL, D_MODEL), d),
            bv: uniform(rng, (1, D_MODEL), d),
            wo: uniform(rng, (D_MODEL, D_MODEL), d),
            bo: uniform(rng, (1, D_MODEL), d),
            ln2_gain: Array2::ones((1, D_MODEL)),
            ln2_bias: Array2::zeros((1, D_MODEL)),
            w1: uniform(rng, (D_MODEL, D_FF), d),
            b1: uniform(rng, (1, D_FF), d),
            w2: uniform(rng, (D_FF, D_MODEL), f),
            b2: uniform(rng, (1, D_MODEL), f),
        }
    }

    fn tensors(&self) -> [(&'static str, &Array2<T>); 16] {
        [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Array2<T>; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Deterministic initialization: every weight and bias uniform in
    /// `±1/sqrt(fan_in)`, embeddings uniform in `±1/sqrt(24)`, norm gains 1
    /// and norm biases 0.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 1.0 / (D_MODEL as f64).sqrt();
        let g = 1.0 / (GOP_DIM as f64).sqrt();
        let h = 1.0 / (HEAD_IN as f64).sqrt();
        let proj_w = uniform(&mut rng, (GOP_DIM, D_MODEL), g);
        let proj_b = uniform(&mut rng, (1, D_MODEL), g);
        let phone_emb = uniform(&mut rng, (NUM_PHONES + 1, D_MODEL), d);
        let pos_emb = uniform(&mut rng, (MAX_LEN, D_MODEL), d);
        let layers = (0..N_LAYERS)
            .map(|_| EncoderLayer::init(&mut rng))
            .collect();
        ModelParams {
            proj_w,
            proj_b,
            phone_emb,
            pos_emb,
            layers,
            final_gain: Array2::ones((1, D_MODEL)),
            final_bias: Array2::zeros((1, D_MODEL)),
            phone_head_w: uniform(&mut rng, (HEAD_IN, 1), h),
            phone_head_b: uniform(&mut rng, (1, 1), h),
            word_head_w: uniform(&mut rng, (HEAD_IN, WORD_ASPECTS), h),
            word_head_b: uniform(&mut rng, (1, WORD_ASPECTS), h),
            utt_head_w: uniform(&mut rng, (HEAD_IN, UTT_ASPECTS), h),
            utt_head_b: uniform(&mut rng, (1, UTT_ASPECTS), h),
        }
    }

    /// Same structure, all zeros. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(T::zero());
        }
        out
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<T>)> {
        let mut out = vec![
            ("proj_w".to_string(), &self.proj_w),
            ("proj_b".to_string(), &self.proj_b),
            ("phone_emb".to_string(), &self.phone_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(
                layer
                    .tensors()
                    .into_iter()
                    .map(|(n, t)| (format!("layers.{i}.{n}"), t)),
            );
        }
        out.extend([
            ("final_gain".to_string(), &self.final_gain),
            ("final_bias".to_string(), &self.final_bias),
            ("phone_head_w".to_string(), &self.phone_head_w),
            ("phone_head_b".to_string(), &self.phone_head_b),
            ("word_head_w".to_string(), &self.word_head_w),
            ("word_head_b".to_string(), &self.word_head_b),
            ("utt_head_w".to_string(), &self.utt_head_w),
            ("utt_head_b".to_string(), &self.utt_head_b),
        ]);
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut out = vec![
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.phone_emb,
            &mut self.pos_emb,
        ];
        for layer in self.layers.iter_mut() {
            out.extend(layer.tensors_mut());
        }
        out.extend([
            &mut self.final_gain,
            &mut self.final_bias,
            &mut self.phone_head_w,
            &mut self.phone_head_b,
            &mut self.word_head_w,
            &mut self.word_head_b,
            &mut self.utt_head_w,
            &mut self.utt_head_b,
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn to_checkpoint(&self, er_mode: ErMode) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            er_mode,
            tensors: self
                .tensors()
                .into_iter()
                .map(|(name, t)| TensorRecord {
                    name,
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().map(|v| v.to_f64_lossy()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut params = Self::init(0);
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != ckpt.tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model has {}",
                ckpt.tensors.len(),
                names.len()
            )));
        }
        for ((name, slot), rec) in names.iter().zip(params.tensors_mut()).zip(&ckpt.tensors) {
            if &rec.name != name || rec.shape != [slot.nrows(), slot.ncols()] {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {} {:?} does not match {name} {:?}",
                    rec.name,
                    rec.shape,
                    slot.dim()
                )));
            }
            if rec.data.len() != slot.len() {
                return Err(Error::Shape(format!("tensor {name}: wrong element count")));
            }
            for (dst, &src) in slot.iter_mut().zip(&rec.data) {
                *dst = T::of(src);
            }
        }
        Ok(params)
    }
}

pub const CHECKPOINT_FORMAT: &str = "amix-scorer";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// JSON checkpoint: every tensor with its name and shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub er_mode: ErMode,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}
