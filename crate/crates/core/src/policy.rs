//! Attention sequence-to-action policy with an optional ask action and a
//! linear critic head.
//!
//! A bidirectional LSTM encodes the instruction. Each decoder step attends
//! over the 36-slot panorama using the previous instruction-aware hidden
//! state, advances the decoder LSTM on `[attended view; previous action]`,
//! attends over the instruction, fuses the result, and scores every
//! candidate action feature. When asking is enabled the ask action is an
//! extra all-ones feature row scored by the same matrix, so enabling it adds
//! no parameters and leaves the move scores untouched.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{lstm_cell, read_checkpoint, write_checkpoint, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::world::{standard_normal, ActionSet, ViewFeature, VIEW_SLOTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub word_dim: usize,
    pub vis_dim: usize,
    pub hidden: usize,
    pub ask_enabled: bool,
    /// Standard deviation scale for initial weights (times 1/sqrt(fan_in)).
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 69,
            word_dim: 32,
            vis_dim: 32,
            hidden: 64,
            ask_enabled: false,
            init_scale: 1.0,
        }
    }
}

impl ModelConfig {
    /// Width of a view row or action feature.
    pub fn feature_dim(&self) -> usize {
        self.vis_dim + 4
    }

    /// Expected shape of every named parameter, in storage order.
    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (w, h, f) = (self.word_dim, self.hidden, self.feature_dim());
        vec![
            ("embedding", vec![self.vocab_size, w]),
            ("enc_fw_w", vec![4 * h, w + h]),
            ("enc_fw_b", vec![4 * h]),
            ("enc_bw_w", vec![4 * h, w + h]),
            ("enc_bw_b", vec![4 * h]),
            ("dec_w", vec![4 * h, 2 * f + h]),
            ("dec_b", vec![4 * h]),
            ("w_f", vec![f, h]),
            ("w_u", vec![2 * h, h]),
            ("w_h", vec![h, 3 * h]),
            ("w_a", vec![f, h]),
            ("critic_w", vec![1, h]),
            ("critic_b", vec![1]),
        ]
    }
}

/// Named policy and critic weights plus the model configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore<f32>,
}

/// Names of the parameters only the critic loss touches.
pub const CRITIC_PARAMS: [&str; 2] = ["critic_w", "critic_b"];

impl ModelParams {
    /// Random initialisation; LSTM forget-gate biases start at 1.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        if config.vocab_size < 2 || config.hidden == 0 || config.word_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in config.shapes() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with("_b") {
                let mut b = vec![0f32; n];
                if name != "critic_b" {
                    let h = config.hidden;
                    b[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
                }
                b
            } else {
                let fan_in = if shape.len() == 2 { shape[1] } else { 1 };
                let std = if name == "embedding" {
                    0.3
                } else {
                    config.init_scale / (fan_in as f64).sqrt()
                };
                (0..n).map(|_| (std * standard_normal(&mut rng)) as f32).collect()
            };
            store.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self {
            config: config.clone(),
            store,
        })
    }

    /// Wraps an existing store after checking every shape.
    pub fn from_store(config: ModelConfig, store: ParamStore<f32>) -> Result<Self> {
        for (name, shape) in config.shapes() {
            let t = store
                .get(name)
                .ok_or_else(|| Error::Data(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "load_checkpoint",
                    lhs: shape,
                    rhs: t.shape().to_vec(),
                });
            }
        }
        if store.len() != config.shapes().len() {
            return Err(Error::Data("checkpoint has unexpected extra tensors".into()));
        }
        Ok(Self { config, store })
    }

    pub fn ask_enabled(&self) -> bool {
        self.config.ask_enabled
    }

    /// Same weights with the ask action switched on or off.
    pub fn with_ask(&self, enabled: bool) -> Self {
        let mut p = self.clone();
        p.config.ask_enabled = enabled;
        p
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with_meta(path, serde_json::Value::Null)
    }

    /// Writes an `ASKC1` checkpoint; the model config (including the ask
    /// flag) lands in the manifest next to `extra`.
    pub fn save_with_meta(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({ "model": self.config, "extra": extra });
        write_checkpoint(path, &self.store, meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::load_with_meta(path)?.0)
    }

    pub fn load_with_meta(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (store, meta) = read_checkpoint(path)?;
        let config: ModelConfig = serde_json::from_value(meta["model"].clone()).map_err(|e| {
            Error::Corrupt {
                kind: "checkpoint",
                path: path.to_path_buf(),
                reason: format!("bad model config: {e}"),
            }
        })?;
        let extra = meta["extra"].clone();
        Ok((Self::from_store(config, store)?, extra))
    }
}

/// Parameters placed on a tape, in [`ModelConfig::shapes`] order.
pub struct Bound {
    pub vars: Vec<Var>,
    pub hidden: usize,
    pub feature_dim: usize,
    pub ask_enabled: bool,
    /// Critic reads a detached copy of the fused hidden state, so its loss
    /// trains only the critic head.
    pub detach_critic: bool,
}

impl Bound {
    fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
    fn embedding(&self) -> Var {
        self.get(0)
    }
    fn w_f(&self) -> Var {
        self.get(7)
    }
    fn w_u(&self) -> Var {
        self.get(8)
    }
    fn w_h(&self) -> Var {
        self.get(9)
    }
    fn w_a(&self) -> Var {
        self.get(10)
    }
}

/// Puts every parameter on `tape` as a trainable leaf.
pub fn bind<T: Real>(tape: &mut Tape<T>, config: &ModelConfig, store: &ParamStore<T>) -> Result<Bound> {
    let mut vars = Vec::with_capacity(store.len());
    for (name, shape) in config.shapes() {
        let t = store
            .get(name)
            .ok_or_else(|| Error::Data(format!("missing parameter {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Shape {
                op: "bind",
                lhs: shape,
                rhs: t.shape().to_vec(),
            });
        }
        vars.push(tape.param(t.clone()));
    }
    Ok(Bound {
        vars,
        hidden: config.hidden,
        feature_dim: config.feature_dim(),
        ask_enabled: config.ask_enabled,
        detach_critic: false,
    })
}

/// Per-position encoder outputs, `[l, 2H]`.
#[derive(Clone, Copy, Debug)]
pub struct EncodedInstruction {
    pub u: Var,
    pub len: usize,
}

pub fn encode_instruction<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    vocab_size: usize,
    tokens: &[usize],
) -> Result<EncodedInstruction> {
    if tokens.is_empty() {
        return Err(Error::Data("cannot encode an empty instruction".into()));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab_size) {
        return Err(Error::Index {
            op: "encode_instruction",
            index: bad,
            len: vocab_size,
        });
    }
    let h = p.hidden;
    let emb = tape.embedding(p.embedding(), tokens)?;
    let words: Vec<Var> = (0..tokens.len())
        .map(|i| tape.row(emb, i))
        .collect::<Result<_>>()?;
    let zero = tape.constant(Tensor::zeros(&[h]));

    let mut fw = Vec::with_capacity(words.len());
    let mut state = (zero, zero);
    for &x in &words {
        state = lstm_cell(tape, p.get(1), p.get(2), x, state)?;
        fw.push(state.0);
    }
    let mut bw = vec![zero; words.len()];
    let mut state = (zero, zero);
    for (i, &x) in words.iter().enumerate().rev() {
        state = lstm_cell(tape, p.get(3), p.get(4), x, state)?;
        bw[i] = state.0;
    }
    let rows: Vec<Var> = fw
        .iter()
        .zip(&bw)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect::<Result<_>>()?;
    Ok(EncodedInstruction {
        u: tape.stack(&rows)?,
        len: tokens.len(),
    })
}

/// Recurrent decoder state carried between steps.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub h_tilde: Var,
    pub prev_action: Var,
}

impl DecoderState {
    /// All-zero hidden, cell, fused hidden and previous-action feature.
    pub fn initial<T: Real>(tape: &mut Tape<T>, p: &Bound) -> Self {
        let zh = tape.constant(Tensor::zeros(&[p.hidden]));
        let za = tape.constant(Tensor::zeros(&[p.feature_dim]));
        Self {
            h: zh,
            c: zh,
            h_tilde: zh,
            prev_action: za,
        }
    }
}

/// Panorama as a `[36, D+4]` constant.
pub fn view_matrix<T: Real>(tape: &mut Tape<T>, view: &ViewFeature) -> Result<Var> {
    let rows: Vec<Vec<T>> = view
        .rows
        .iter()
        .map(|r| r.iter().map(|&x| T::of(x as f64)).collect())
        .collect();
    if rows.len() != VIEW_SLOTS {
        return Err(Error::Shape {
            op: "view_matrix",
            lhs: vec![VIEW_SLOTS],
            rhs: vec![rows.len()],
        });
    }
    Ok(tape.constant(Tensor::from_rows(&rows)?))
}

/// Returns the attended feature and the attention weights.
pub fn attend_visual<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    view: Var,
    h_tilde_prev: Var,
) -> Result<(Var, Var)> {
    let key = tape.matmul(p.w_f(), h_tilde_prev)?;
    let scores = tape.matmul(view, key)?;
    let alpha = tape.softmax(scores, 0)?;
    let attended = tape.matmul(alpha, view)?;
    Ok((attended, alpha))
}

/// Candidate features as rows, stop (zeros) last, then the all-ones ask row
/// when `ask` is set.
pub fn action_matrix<T: Real>(tape: &mut Tape<T>, actions: &ActionSet, ask: bool) -> Result<Var> {
    let mut rows: Vec<Vec<T>> = (0..actions.len())
        .map(|k| actions.feature(k).iter().map(|&x| T::of(x as f64)).collect())
        .collect();
    if ask {
        rows.push(vec![T::one(); actions.feature_dim]);
    }
    Ok(tape.constant(Tensor::from_rows(&rows)?))
}

/// Output of one decoder step.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub logits: Var,
    pub value: Var,
    pub alpha: Var,
    pub beta: Var,
    pub state: DecoderState,
}

pub fn decode_step<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    enc: &EncodedInstruction,
    view: Var,
    actions: Var,
    state: &DecoderState,
) -> Result<StepOutput> {
    let (attended, alpha) = attend_visual(tape, p, view, state.h_tilde)?;
    let input = tape.concat(&[attended, state.prev_action])?;
    let (h, c) = lstm_cell(tape, p.get(5), p.get(6), input, (state.h_tilde, state.c))?;
    let query = tape.matmul(p.w_u(), h)?;
    let scores = tape.matmul(enc.u, query)?;
    let beta = tape.softmax(scores, 0)?;
    let context = tape.matmul(beta, enc.u)?;
    let fused = tape.concat(&[context, h])?;
    let pre = tape.matmul(p.w_h(), fused)?;
    let h_tilde = tape.tanh(pre);
    let proj = tape.matmul(p.w_a(), h_tilde)?;
    let logits = tape.matmul(actions, proj)?;
    let critic_in = if p.detach_critic {
        let copy = tape.value(h_tilde).clone();
        tape.constant(copy)
    } else {
        h_tilde
    };
    let v = tape.matmul(p.get(11), critic_in)?;
    let value = tape.add(v, p.get(12))?;
    Ok(StepOutput {
        logits,
        value,
        alpha,
        beta,
        state: DecoderState {
            h,
            c,
            h_tilde,
            prev_action: state.prev_action,
        },
    })
}

/// Softmax of a logit slice, computed at `f64`.
pub fn probabilities(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let e: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Convenience driver holding one tape for a whole episode.
pub struct Session<'a> {
    pub tape: Tape<f32>,
    pub bound: Bound,
    pub enc: EncodedInstruction,
    pub state: DecoderState,
    params: &'a ModelParams,
}

/// What a single step of a [`Session`] produced.
#[derive(Clone, Debug)]
pub struct StepView {
    pub probs: Vec<f64>,
    pub logits: Var,
    pub value: Var,
    pub value_f64: f64,
}

impl<'a> Session<'a> {
    pub fn start(params: &'a ModelParams, tokens: &[usize]) -> Result<Self> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params.config, &params.store)?;
        let enc = encode_instruction(&mut tape, &bound, params.config.vocab_size, tokens)?;
        let state = DecoderState::initial(&mut tape, &bound);
        Ok(Self {
            tape,
            bound,
            enc,
            state,
            params,
        })
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    /// Scores the actions at the current viewpoint and advances the
    /// recurrent state. The caller reports the executed action through
    /// [`Session::executed`].
    pub fn step(&mut self, view: &ViewFeature, actions: &ActionSet) -> Result<StepView> {
        let v = view_matrix(&mut self.tape, view)?;
        let a = action_matrix(&mut self.tape, actions, self.bound.ask_enabled)?;
        let out = decode_step(&mut self.tape, &self.bound, &self.enc, v, a, &self.state)?;
        self.state = out.state;
        let probs = probabilities(self.tape.value(out.logits).data());
        Ok(StepView {
            probs,
            logits: out.logits,
            value: out.value,
            value_f64: self.tape.scalar(out.value),
        })
    }

    /// Records the feature of the action actually executed this step.
    pub fn executed(&mut self, actions: &ActionSet, index: usize) {
        let f = Tensor::vector(actions.feature(index));
        self.state.prev_action = self.tape.constant(f);
    }
}
