//! The streaming pose network.
//!
//! Per frame: each present component's input slice is embedded into a
//! `d_model` token, then `n_blocks` blocks each run a per-component LSTM
//! (temporal) followed by a stack of masked attention encoder layers
//! (spatial). The final tokens are concatenated and regressed to 22 local
//! 6D rotations and 16 shape coefficients, and forward kinematics places the
//! body so that its head joint sits on the headset position.
//!
//! Absent components never enter the computation: their LSTMs do not run,
//! their tokens are excluded from attention keys and queries, and their
//! slots in the head input are zero. Outputs are therefore bit-identical
//! whatever values the padded input slots contain.

pub mod kernels;
pub mod weights;

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyState, LocalPose, ShapeParams, Skeleton, NUM_JOINTS, NUM_SHAPE};
use crate::error::{Error, Result};
use crate::rotmath::Rot6D;
use crate::sensing::{Component, FrameInput, NUM_COMPONENTS};
use kernels::{encoder_layer, leaky_relu, lstm_step};
pub use weights::{init_weights, NetworkWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_components: usize,
    pub transformer_layers_per_block: usize,
    pub attention_heads: usize,
    pub feedforward_dim: usize,
    pub head_hidden: usize,
    pub pose_out: usize,
    pub shape_out: usize,
    pub leaky_slope: f32,
    /// Embedding widths for position, velocity, rotation, angular velocity.
    pub six_dof_embed_widths: [usize; 4],
    /// Embedding widths for rotation, angular velocity, acceleration.
    pub imu_embed_widths: [usize; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_blocks: 2,
            d_model: 256,
            n_components: NUM_COMPONENTS,
            transformer_layers_per_block: 3,
            attention_heads: 8,
            feedforward_dim: 256,
            head_hidden: 256,
            pose_out: NUM_JOINTS * 6,
            shape_out: NUM_SHAPE,
            leaky_slope: 0.01,
            six_dof_embed_widths: [64, 64, 64, 64],
            imu_embed_widths: [96, 96, 64],
        }
    }
}

impl ModelConfig {
    /// A narrow variant for fast experiments; same topology, `d_model = 32`.
    pub fn small() -> Self {
        ModelConfig {
            d_model: 32,
            attention_heads: 4,
            feedforward_dim: 32,
            head_hidden: 32,
            six_dof_embed_widths: [8, 8, 8, 8],
            imu_embed_widths: [12, 12, 8],
            ..Default::default()
        }
    }

    pub fn embed_widths(&self, c: Component) -> &[usize] {
        if c.is_imu() {
            &self.imu_embed_widths
        } else {
            &self.six_dof_embed_widths
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let dims = [
            self.n_blocks,
            self.d_model,
            self.transformer_layers_per_block,
            self.attention_heads,
            self.feedforward_dim,
            self.head_hidden,
        ];
        if dims.contains(&0) {
            return bad("all dimensions must be positive".into());
        }
        if self.n_components != NUM_COMPONENTS {
            return bad(format!("n_components must be {NUM_COMPONENTS}"));
        }
        if !self.d_model.is_multiple_of(self.attention_heads) {
            return bad(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.attention_heads
            ));
        }
        if self.pose_out != NUM_JOINTS * 6 {
            return bad(format!("pose_out must be {}", NUM_JOINTS * 6));
        }
        if self.shape_out != NUM_SHAPE {
            return bad(format!("shape_out must be {NUM_SHAPE}"));
        }
        if !(self.leaky_slope.is_finite()) {
            return bad("leaky_slope must be finite".into());
        }
        for (what, w) in [
            ("six_dof_embed_widths", &self.six_dof_embed_widths[..]),
            ("imu_embed_widths", &self.imu_embed_widths[..]),
        ] {
            if w.contains(&0) || w.iter().sum::<usize>() != self.d_model {
                return bad(format!("{what} must be positive and sum to d_model"));
            }
        }
        Ok(())
    }
}

/// Recurrent state for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    d_model: usize,
    n_blocks: usize,
    h: Vec<f32>,
    c: Vec<f32>,
    frames: u64,
}

impl StreamState {
    pub fn new(config: &ModelConfig) -> Self {
        let n = config.n_blocks * NUM_COMPONENTS * config.d_model;
        StreamState {
            d_model: config.d_model,
            n_blocks: config.n_blocks,
            h: vec![0.0; n],
            c: vec![0.0; n],
            frames: 0,
        }
    }

    pub fn reset(&mut self) {
        self.h.fill(0.0);
        self.c.fill(0.0);
        self.frames = 0;
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn hidden(&self, block: usize, c: Component) -> &[f32] {
        let o = (block * NUM_COMPONENTS + c.index()) * self.d_model;
        &self.h[o..o + self.d_model]
    }

    pub fn cell(&self, block: usize, c: Component) -> &[f32] {
        let o = (block * NUM_COMPONENTS + c.index()) * self.d_model;
        &self.c[o..o + self.d_model]
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(|v| v.is_finite())
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.d_model != config.d_model || self.n_blocks != config.n_blocks {
            return Err(Error::ShapeMismatch(format!(
                "stream state is {}×{}, weights are {}×{}",
                self.n_blocks, self.d_model, config.n_blocks, config.d_model
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseOutput {
    pub theta: LocalPose,
    pub beta: ShapeParams,
    pub body: BodyState,
}

/// Wall time spent in each stage of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub embed: Duration,
    pub recurrent: Duration,
    pub attention: Duration,
    pub heads: Duration,
    pub kinematics: Duration,
}

impl std::ops::AddAssign for StageTimes {
    fn add_assign(&mut self, o: Self) {
        self.embed += o.embed;
        self.recurrent += o.recurrent;
        self.attention += o.attention;
        self.heads += o.heads;
        self.kinematics += o.kinematics;
    }
}

struct Clock<'a> {
    times: Option<&'a mut StageTimes>,
    last: Option<Instant>,
}

impl Clock<'_> {
    fn start(&mut self) {
        if self.times.is_some() {
            self.last = Some(Instant::now());
        }
    }

    fn lap(&mut self, f: impl FnOnce(&mut StageTimes) -> &mut Duration) {
        if let Some(t) = self.times.as_deref_mut() {
            let now = Instant::now();
            *f(t) += now - self.last.unwrap_or(now);
            self.last = Some(now);
        }
    }
}

/// Embeds each present component; absent tokens are zero.
pub fn embed(x: &FrameInput, w: &NetworkWeights) -> Vec<Vec<f32>> {
    let d = w.config.d_model;
    let slope = w.config.leaky_slope;
    Component::ALL
        .iter()
        .map(|&c| {
            let mut token = vec![0f32; d];
            if !x.mask[c.index()] {
                return token;
            }
            let block = x.block(c);
            let mut src = 0;
            let mut dst = 0;
            for (q, lin) in c.layout().iter().zip(&w.embed[c.index()]) {
                let input: Vec<f32> = block[src..src + q.width()].iter().map(|&v| v as f32).collect();
                let out = &mut token[dst..dst + lin.out_dim];
                lin.forward(&input, out);
                out.iter_mut().for_each(|v| *v = leaky_relu(*v, slope));
                src += q.width();
                dst += lin.out_dim;
            }
            let pos = &w.token_pos_embedding[c.index() * d..(c.index() + 1) * d];
            token.iter_mut().zip(pos).for_each(|(t, p)| *t += p);
            token
        })
        .collect()
}

/// Runs the network trunk and heads, returning raw pose and shape outputs.
fn network(
    state: &mut StreamState,
    x: &FrameInput,
    w: &NetworkWeights,
    clock: &mut Clock,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let cfg = &w.config;
    let d = cfg.d_model;
    let present: Vec<usize> = (0..NUM_COMPONENTS).filter(|&i| x.mask[i]).collect();
    if present.is_empty() {
        return Err(Error::AllMasked);
    }
    for &i in &present {
        let c = Component::ALL[i];
        if let Some(k) = x.block(c).iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame(format!(
                "non-finite value at index {}",
                c.range().start + k
            )));
        }
    }
    clock.start();
    let mut tokens = embed(x, w);
    clock.lap(|t| &mut t.embed);

    let mut gates = vec![0f32; 4 * d];
    for (b, block) in w.blocks.iter().enumerate() {
        for &i in &present {
            let o = (b * NUM_COMPONENTS + i) * d;
            let (h, c) = (&mut state.h[o..o + d], &mut state.c[o..o + d]);
            lstm_step(&block.lstm[i], &tokens[i], h, c, &mut gates);
            tokens[i].copy_from_slice(h);
        }
        clock.lap(|t| &mut t.recurrent);
        for layer in &block.encoder {
            encoder_layer(layer, cfg.attention_heads, cfg.leaky_slope, &mut tokens, &present);
        }
        clock.lap(|t| &mut t.attention);
    }
    state.frames += 1;

    let mut features = vec![0f32; NUM_COMPONENTS * d];
    for &i in &present {
        features[i * d..(i + 1) * d].copy_from_slice(&tokens[i]);
    }
    let head = |layers: &[weights::Linear; 2]| {
        let mut hidden = layers[0].forward_vec(&features);
        hidden.iter_mut().for_each(|v| *v = leaky_relu(*v, cfg.leaky_slope));
        layers[1].forward_vec(&hidden)
    };
    let out = (head(&w.pose_head), head(&w.shape_head));
    clock.lap(|t| &mut t.heads);
    Ok(out)
}

fn step_impl(
    state: &mut StreamState,
    x: &FrameInput,
    w: &NetworkWeights,
    skel: &Skeleton,
    times: Option<&mut StageTimes>,
) -> Result<PoseOutput> {
    state.check(&w.config)?;
    let mut clock = Clock { times, last: None };
    let (pose, shape) = network(state, x, w, &mut clock)?;
    let mut theta = LocalPose::identity();
    for (j, r) in theta.0.iter_mut().enumerate() {
        let mut v = [0.0; 6];
        for (dst, src) in v.iter_mut().zip(&pose[6 * j..6 * j + 6]) {
            *dst = *src as f64;
        }
        *r = Rot6D(v);
    }
    let mut beta = ShapeParams::zero();
    for (dst, src) in beta.0.iter_mut().zip(&shape) {
        *dst = *src as f64;
    }
    let head: Vector3<f64> = x.head_position();
    let body = skel.forward_kinematics_anchored(&beta, &theta, &head)?;
    clock.lap(|t| &mut t.kinematics);
    Ok(PoseOutput { theta, beta, body })
}

/// Advances `state` by one frame and returns the pose for that frame.
pub fn forward_step(state: &mut StreamState, x: &FrameInput, w: &NetworkWeights, skel: &Skeleton) -> Result<PoseOutput> {
    step_impl(state, x, w, skel, None)
}

/// [`forward_step`] that also accumulates per-stage wall time into `times`.
pub fn forward_step_profiled(
    state: &mut StreamState,
    x: &FrameInput,
    w: &NetworkWeights,
    skel: &Skeleton,
    times: &mut StageTimes,
) -> Result<PoseOutput> {
    step_impl(state, x, w, skel, Some(times))
}

/// Runs a clip from a fresh state.
pub fn forward_clip(w: &NetworkWeights, inputs: &[FrameInput], skel: &Skeleton) -> Result<Vec<PoseOutput>> {
    if inputs.is_empty() {
        return Err(Error::Empty);
    }
    let mut state = StreamState::new(&w.config);
    inputs.iter().map(|x| forward_step(&mut state, x, w, skel)).collect()
}

impl PoseOutput {
    pub fn is_finite(&self) -> bool {
        self.theta.0.iter().all(|r| r.0.iter().all(|v| v.is_finite()))
            && self.beta.0.iter().all(|v| v.is_finite())
            && self.body.joint_pos.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.body.global_rot.iter().all(|r| r.matrix().iter().all(|v| v.is_finite()))
            && self.body.root_translation.iter().all(|v| v.is_finite())
    }
}
