//! Residual MLP denoiser over expression-coefficient sequences.
//!
//! Every frame token is `[noisy_n, time_embedding(t), condition_n]`. An input
//! projection maps tokens to the hidden width, each block applies a shared
//! per-frame MLP and a linear mixing over the frame axis (both residual), and
//! an output projection returns to `D_exp`.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::conditioning::ConditionVector;
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::nn::{init_uniform, zeros, Linear, ParamId, ParamStore, Session};
use crate::scalar::Scalar;

pub const GROUP: &str = "denoiser";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub hidden_width: usize,
    pub num_blocks: usize,
    pub time_embed_dim: usize,
    pub sequence_length: usize,
    pub d_exp: usize,
    pub condition_dim: usize,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("hidden_width", self.hidden_width),
            ("time_embed_dim", self.time_embed_dim),
            ("sequence_length", self.sequence_length),
            ("d_exp", self.d_exp),
            ("condition_dim", self.condition_dim),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("denoiser {name} must be positive")));
        }
        Ok(())
    }

    fn token_dim(&self) -> usize {
        self.d_exp + self.time_embed_dim + self.condition_dim
    }
}

/// Trainable parameters of one residual block.
pub fn block_parameter_count(cfg: &DenoiserConfig) -> usize {
    let h = cfg.hidden_width;
    let n = cfg.sequence_length;
    2 * Linear::param_count(h, h) + n * n + n
}

/// Exact number of trainable parameters.
pub fn parameter_count(cfg: &DenoiserConfig) -> usize {
    Linear::param_count(cfg.token_dim(), cfg.hidden_width)
        + cfg.num_blocks * block_parameter_count(cfg)
        + Linear::param_count(cfg.hidden_width, cfg.d_exp)
}

/// Sinusoidal embedding of a diffusion step: `sin(t w_i)` then `cos(t w_i)`
/// with `w_i = 10000^(-i / half)`. An odd trailing slot is zero.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = 10000f64.powf(-(i as f64) / half.max(1) as f64);
        out[i] = (t as f64 * w).sin();
        out[half + i] = (t as f64 * w).cos();
    }
    out
}

#[derive(Clone, Debug)]
struct Block {
    fc1: Linear,
    fc2: Linear,
    mix: ParamId,
    mix_bias: ParamId,
}

/// `x0`-predicting residual MLP.
#[derive(Clone, Debug)]
pub struct MlpDenoiser<S: Scalar> {
    config: DenoiserConfig,
    store: ParamStore<S>,
    input: Linear,
    blocks: Vec<Block>,
    output: Linear,
}

impl<S: Scalar> MlpDenoiser<S> {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (h, n) = (config.hidden_width, config.sequence_length);
        let input = Linear::new(&mut store, &mut rng, GROUP, "input", config.token_dim(), h, 1.0);
        let blocks = (0..config.num_blocks)
            .map(|i| {
                let fc1 = Linear::new(&mut store, &mut rng, GROUP, &format!("block{i}.fc1"), h, h, 1.0);
                let fc2 = Linear::new(&mut store, &mut rng, GROUP, &format!("block{i}.fc2"), h, h, 0.5);
                let mix = store.add(GROUP, &format!("block{i}.mix.weight"), init_uniform(&mut rng, &[n, n], n, 0.5));
                let mix_bias = store.add(GROUP, &format!("block{i}.mix.bias"), zeros(&[n]));
                Block { fc1, fc2, mix, mix_bias }
            })
            .collect();
        let output = Linear::new(&mut store, &mut rng, GROUP, "output", h, config.d_exp, 0.01);
        Ok(Self { config, store, input, blocks, output })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Zeroes every block parameter, leaving the input and output projections.
    pub fn zero_blocks(&mut self) {
        for b in &self.blocks {
            b.fc1.zero_init(&mut self.store);
            b.fc2.zero_init(&mut self.store);
            self.store.get_mut(b.mix).fill(S::zero());
            self.store.get_mut(b.mix_bias).fill(S::zero());
        }
    }

    /// Binds the network to a session so its parameters join the graph.
    pub fn bind<'a>(&'a self, session: &'a Session<'a, S>) -> BoundDenoiser<'a, S> {
        BoundDenoiser { net: self, session }
    }

    /// Single-sequence prediction of the clean `(N, D_exp)` sequence.
    pub fn denoise(&self, noisy: &Array2<S>, condition: &ConditionVector<S>, t: usize) -> Result<Array2<S>> {
        let x = Var::constant(noisy.clone().insert_axis(Axis(0)).into_dyn());
        let c = Var::constant(condition.fused().insert_axis(Axis(0)).into_dyn());
        let out = self.predict(&x, &c, &[t])?;
        Ok(out.value().clone().index_axis_move(Axis(0), 0).into_dimensionality().unwrap())
    }

    fn check(&self, noisy: &Var<S>, condition: &Var<S>, t: &[usize]) -> Result<usize> {
        let cfg = &self.config;
        let (ns, cs) = (noisy.shape(), condition.shape());
        if ns.len() != 3 || ns[1] != cfg.sequence_length || ns[2] != cfg.d_exp {
            return Err(Error::Shape(format!(
                "noisy input {ns:?} does not match (B, {}, {})",
                cfg.sequence_length, cfg.d_exp
            )));
        }
        if cs.len() != 3 || cs[0] != ns[0] || cs[1] != ns[1] || cs[2] != cfg.condition_dim {
            return Err(Error::Shape(format!(
                "condition {cs:?} does not match (B, {}, {})",
                cfg.sequence_length, cfg.condition_dim
            )));
        }
        if t.len() != ns[0] {
            return Err(Error::Shape(format!("{} steps for a batch of {}", t.len(), ns[0])));
        }
        if t.contains(&0) {
            return Err(Error::Index("diffusion step must be at least 1".into()));
        }
        Ok(ns[0])
    }

    fn forward(&self, sess: &Session<S>, noisy: &Var<S>, condition: &Var<S>, t: &[usize]) -> Result<Var<S>> {
        let b = self.check(noisy, condition, t)?;
        let cfg = &self.config;
        let (n, h, e) = (cfg.sequence_length, cfg.hidden_width, cfg.time_embed_dim);
        let mut temb = Array3::<S>::zeros((b, n, e));
        for (i, &ti) in t.iter().enumerate() {
            let v = time_embedding(ti, e);
            for mut row in temb.index_axis_mut(Axis(0), i).axis_iter_mut(Axis(0)) {
                row.iter_mut().zip(&v).for_each(|(d, &s)| *d = S::c(s));
            }
        }
        let tokens = Var::concat(2, &[noisy.clone(), Var::constant(temb.into_dyn()), condition.clone()])
            .reshape(&[b * n, cfg.token_dim()]);
        let mut x = self.input.forward(sess, &tokens);
        for blk in &self.blocks {
            let y = blk.fc2.forward(sess, &blk.fc1.forward(sess, &x).silu());
            x = &x + &y;
            let seq = x.reshape(&[b, n, h]).permute(&[0, 2, 1]).reshape(&[b * h, n]);
            let mixed = &seq.matmul(&sess.param(blk.mix)) + &sess.param(blk.mix_bias);
            let mixed = mixed.reshape(&[b, h, n]).permute(&[0, 2, 1]).reshape(&[b * n, h]);
            x = &x + &mixed;
        }
        Ok(self.output.forward(sess, &x).reshape(&[b, n, cfg.d_exp]))
    }
}

impl<S: Scalar> Denoiser<S> for MlpDenoiser<S> {
    fn predict(&self, noisy: &Var<S>, condition: &Var<S>, t: &[usize]) -> Result<Var<S>> {
        self.forward(&Session::inference(&self.store), noisy, condition, t)
    }

    fn coeff_dim(&self) -> usize {
        self.config.d_exp
    }
}

/// A denoiser whose parameters come from a (possibly training) session.
pub struct BoundDenoiser<'a, S: Scalar> {
    net: &'a MlpDenoiser<S>,
    session: &'a Session<'a, S>,
}

impl<S: Scalar> Denoiser<S> for BoundDenoiser<'_, S> {
    fn predict(&self, noisy: &Var<S>, condition: &Var<S>, t: &[usize]) -> Result<Var<S>> {
        self.net.forward(self.session, noisy, condition, t)
    }

    fn coeff_dim(&self) -> usize {
        self.net.config.d_exp
    }
}
