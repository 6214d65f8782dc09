//! Small tanh scorer with inverted dropout and exact reverse-mode gradients.
//!
//! Both members of a pair run through the same trunk. The score head maps each
//! trunk output to a raw score; the confidence head reads the concatenation
//! `[h_gen; h_ref]` and emits one logit.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::FeatureVector;
use crate::rng;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Affine map `y = W x + b`, `W` stored row-major as `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn uniform(rows: usize, cols: usize, rng: &mut rng::Rng) -> Self {
        let scale = 1.0 / (cols as f64).sqrt();
        let weights = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        Dense {
            rows,
            cols,
            weights,
            bias: vec![0.0; rows],
        }
    }

    fn well_formed(&self) -> bool {
        self.weights.len() == self.rows * self.cols && self.bias.len() == self.rows
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        let nonzero = x.iter().filter(|v| **v != 0.0).count();
        if nonzero * 4 < x.len() {
            // Hashed inputs are sparse; walk columns instead of rows.
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += self.weights[i * self.cols + j] * xj;
                    }
                }
            }
        } else {
            for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.cols)) {
                *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            }
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Trunk, score head, confidence head and dropout rate.
///
/// Every mutation through the public API assigns a fresh stamp; traces record
/// the stamp they were produced under so `backward` can reject stale ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    trunk: Vec<Dense>,
    score_head: Dense,
    confidence_head: Dense,
    dropout_rate: f64,
    #[serde(skip, default = "fresh_stamp")]
    stamp: u64,
}

/// Parameter gradients share the parameter layout.
pub type ParamGrads = ModelParams;

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.trunk == other.trunk
            && self.score_head == other.score_head
            && self.confidence_head == other.confidence_head
            && self.dropout_rate.to_bits() == other.dropout_rate.to_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
    McDropout,
}

impl ModelParams {
    /// Scaled-uniform init in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    /// Draw order: trunk layers, score head, confidence head, each row-major.
    pub fn init(input_dim: usize, hidden_dims: &[usize], dropout_rate: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dims.is_empty() || hidden_dims.contains(&0) {
            return Err(Error::validation(format!(
                "invalid shape: input_dim {input_dim}, hidden_dims {hidden_dims:?}"
            )));
        }
        check_dropout(dropout_rate)?;
        let mut rng = rng::rng_from(seed);
        let mut trunk = Vec::with_capacity(hidden_dims.len());
        let mut fan_in = input_dim;
        for &h in hidden_dims {
            trunk.push(Dense::uniform(h, fan_in, &mut rng));
            fan_in = h;
        }
        let score_head = Dense::uniform(1, fan_in, &mut rng);
        let confidence_head = Dense::uniform(1, 2 * fan_in, &mut rng);
        Ok(ModelParams {
            trunk,
            score_head,
            confidence_head,
            dropout_rate,
            stamp: fresh_stamp(),
        })
    }

    /// Assembles parameters from explicit layers, checking that shapes chain.
    pub fn from_layers(trunk: Vec<Dense>, score_head: Dense, confidence_head: Dense, dropout_rate: f64) -> Result<Self> {
        check_dropout(dropout_rate)?;
        let p = ModelParams {
            trunk,
            score_head,
            confidence_head,
            dropout_rate,
            stamp: fresh_stamp(),
        };
        p.check_shapes()?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite parameter"));
        }
        Ok(p)
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if self.trunk.is_empty() {
            return bad("empty trunk".into());
        }
        let mut fan_in = self.trunk[0].cols;
        for (i, layer) in self.trunk.iter().enumerate() {
            if !layer.well_formed() || layer.cols != fan_in {
                return bad(format!("trunk layer {i} does not chain"));
            }
            fan_in = layer.rows;
        }
        if !self.score_head.well_formed() || self.score_head.rows != 1 || self.score_head.cols != fan_in {
            return bad("score head shape mismatch".into());
        }
        if !self.confidence_head.well_formed()
            || self.confidence_head.rows != 1
            || self.confidence_head.cols != 2 * fan_in
        {
            return bad("confidence head shape mismatch".into());
        }
        Ok(())
    }

    /// All-zero parameters with the same layout.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            trunk: self.trunk.iter().map(|l| Dense::zeros(l.rows, l.cols)).collect(),
            score_head: Dense::zeros(1, self.score_head.cols),
            confidence_head: Dense::zeros(1, self.confidence_head.cols),
            dropout_rate: self.dropout_rate,
            stamp: fresh_stamp(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk[0].cols
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.trunk.iter().map(|l| l.rows).collect()
    }

    pub fn trunk_dim(&self) -> usize {
        self.score_head.cols
    }

    pub fn trunk(&self) -> &[Dense] {
        &self.trunk
    }

    pub fn score_head(&self) -> &Dense {
        &self.score_head
    }

    pub fn confidence_head(&self) -> &Dense {
        &self.confidence_head
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        check_dropout(rate)?;
        self.dropout_rate = rate;
        self.stamp = fresh_stamp();
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.trunk.iter().map(Dense::param_count).sum::<usize>()
            + self.score_head.param_count()
            + self.confidence_head.param_count()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain([&self.score_head, &self.confidence_head])
    }

    /// Parameters in canonical order: per layer weights then bias, trunk first.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    /// Mutable visit in canonical order; invalidates outstanding traces.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        self.stamp = fresh_stamp();
        let mut k = 0;
        for layer in self
            .trunk
            .iter_mut()
            .chain([&mut self.score_head, &mut self.confidence_head])
        {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                f(k, v);
                k += 1;
            }
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.iter().nth(index).expect("parameter index in range")
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk
            .iter_mut()
            .chain([&mut self.score_head, &mut self.confidence_head])
    }

    /// `self += alpha * other`, elementwise. Layouts must match.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        self.stamp = fresh_stamp();
        for (dst, src) in self.layers_mut().zip(other.layers()) {
            for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                *d += alpha * s;
            }
            for (d, s) in dst.bias.iter_mut().zip(&src.bias) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.for_each_mut(|_, v| *v *= alpha);
    }

    /// Sets every entry to zero, keeping the allocation.
    pub fn fill_zero(&mut self) {
        self.for_each_mut(|_, v| *v = 0.0);
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.trunk.len() == other.trunk.len()
            && self.layers().zip(other.layers()).all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    /// Plain gradient step `params -= learning_rate * grads`.
    pub fn sgd_step(&mut self, grads: &ParamGrads, learning_rate: f64) -> Result<()> {
        if !self.same_layout(grads) {
            return Err(Error::validation("gradient layout does not match parameters"));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric("non-finite gradient"));
        }
        self.axpy(-learning_rate, grads);
        Ok(())
    }
}

fn check_dropout(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::validation(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<ModelParams>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads) -> Result<()> {
        if self.momentum == 0.0 {
            return params.sgd_step(grads, self.learning_rate);
        }
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        velocity.scale(self.momentum);
        velocity.axpy(1.0, grads);
        params.sgd_step(velocity, self.learning_rate)
    }
}

/// Activations of one pair member.
#[derive(Debug, Clone)]
pub struct MemberTrace {
    input: Vec<f64>,
    /// Pre-activations per trunk layer.
    pub pre_activations: Vec<Vec<f64>>,
    /// `tanh` of the pre-activations, before dropout.
    activations: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers per layer; `None` when dropout is off.
    pub masks: Vec<Option<Vec<f64>>>,
    /// Post-dropout outputs per layer.
    outputs: Vec<Vec<f64>>,
}

impl MemberTrace {
    /// Post-dropout outputs per trunk layer.
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    fn top(&self) -> &[f64] {
        self.outputs.last().expect("non-empty trunk")
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub gen: MemberTrace,
    pub reference: MemberTrace,
    pub raw_score_gen: f64,
    pub raw_score_ref: f64,
    pub confidence_logit: f64,
    stamp: u64,
}

/// Loss derivatives with respect to the three forward outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Upstream {
    pub d_score_gen: f64,
    pub d_score_ref: f64,
    pub d_confidence_logit: f64,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ParamGrads,
    /// `(d/d gen, d/d ref)`; empty when input gradients were not requested.
    pub inputs: (Vec<f64>, Vec<f64>),
}

/// Draws the inverted-dropout masks for one forward pass.
///
/// Order: for each trunk layer, the generation member's units then the
/// reference member's units, one `f64` per unit; a unit is dropped when its
/// draw is below the rate.
pub fn dropout_masks(params: &ModelParams, seed: u64) -> [Vec<Option<Vec<f64>>>; 2] {
    let rate = params.dropout_rate;
    if rate == 0.0 {
        let none = vec![None; params.trunk.len()];
        return [none.clone(), none];
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut rng = rng::rng_from(seed);
    let mut gen = Vec::with_capacity(params.trunk.len());
    let mut reference = Vec::with_capacity(params.trunk.len());
    for layer in &params.trunk {
        for out in [&mut gen, &mut reference] {
            let mask = (0..layer.rows)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
                .collect();
            out.push(Some(mask));
        }
    }
    [gen, reference]
}

fn run_member(params: &ModelParams, x: &[f64], masks: Vec<Option<Vec<f64>>>) -> MemberTrace {
    let mut pre_activations = Vec::with_capacity(params.trunk.len());
    let mut activations = Vec::with_capacity(params.trunk.len());
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(params.trunk.len());
    for (layer, mask) in params.trunk.iter().zip(&masks) {
        let input = outputs.last().map_or(x, |v| v.as_slice());
        let mut z = Vec::with_capacity(layer.rows);
        layer.apply(input, &mut z);
        let a: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let h = match mask {
            Some(m) => a.iter().zip(m).map(|(a, m)| a * m).collect(),
            None => a.clone(),
        };
        pre_activations.push(z);
        activations.push(a);
        outputs.push(h);
    }
    MemberTrace {
        input: x.to_vec(),
        pre_activations,
        activations,
        masks,
        outputs,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs both members through the shared trunk and both heads.
///
/// `Eval` disables dropout; `Train` and `McDropout` draw fresh masks from `seed`.
pub fn forward_pair(
    params: &ModelParams,
    gen: &FeatureVector,
    reference: &FeatureVector,
    mode: Mode,
    seed: u64,
) -> Result<ForwardTrace> {
    forward_raw(params, gen.values(), reference.values(), mode, seed)
}

pub fn forward_raw(params: &ModelParams, gen: &[f64], reference: &[f64], mode: Mode, seed: u64) -> Result<ForwardTrace> {
    let dim = params.input_dim();
    if gen.len() != dim || reference.len() != dim {
        return Err(Error::validation(format!(
            "input length ({}, {}) does not match model input dim {dim}",
            gen.len(),
            reference.len()
        )));
    }
    let [gen_masks, ref_masks] = match mode {
        Mode::Eval => {
            let none = vec![None; params.trunk.len()];
            [none.clone(), none]
        }
        Mode::Train | Mode::McDropout => dropout_masks(params, seed),
    };
    let g = run_member(params, gen, gen_masks);
    let r = run_member(params, reference, ref_masks);
    let head = &params.score_head;
    let raw_score_gen = head.bias[0] + dot(&head.weights, g.top());
    let raw_score_ref = head.bias[0] + dot(&head.weights, r.top());
    let h = params.trunk_dim();
    let conf = &params.confidence_head;
    let confidence_logit =
        conf.bias[0] + dot(&conf.weights[..h], g.top()) + dot(&conf.weights[h..], r.top());
    if ![raw_score_gen, raw_score_ref, confidence_logit].iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("forward pass produced a non-finite output"));
    }
    Ok(ForwardTrace {
        gen: g,
        reference: r,
        raw_score_gen,
        raw_score_ref,
        confidence_logit,
        stamp: params.stamp,
    })
}

// Backpropagates `d_top` (gradient at the member's trunk output), adding
// parameter gradients into `grads` when given. Returns the input gradient when
// requested, otherwise an empty vector.
fn backward_member(
    params: &ModelParams,
    trace: &MemberTrace,
    d_top: Vec<f64>,
    mut grads: Option<&mut ParamGrads>,
    want_input: bool,
) -> Vec<f64> {
    let mut dh = d_top;
    for l in (0..params.trunk.len()).rev() {
        let layer = &params.trunk[l];
        let a = &trace.activations[l];
        let dz: Vec<f64> = match &trace.masks[l] {
            Some(m) => dh.iter().zip(m).zip(a).map(|((d, m), a)| d * m * (1.0 - a * a)).collect(),
            None => dh.iter().zip(a).map(|(d, a)| d * (1.0 - a * a)).collect(),
        };
        if let Some(grads) = grads.as_deref_mut() {
            let input = if l == 0 { &trace.input } else { &trace.outputs[l - 1] };
            let nonzero: Vec<usize> = input
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, _)| j)
                .collect();
            let sparse = nonzero.len() * 4 < input.len();
            let g = &mut grads.trunk[l];
            for (i, &dzi) in dz.iter().enumerate() {
                if dzi == 0.0 {
                    continue;
                }
                g.bias[i] += dzi;
                let row = &mut g.weights[i * layer.cols..(i + 1) * layer.cols];
                if sparse {
                    for &j in &nonzero {
                        row[j] += dzi * input[j];
                    }
                } else {
                    for (w, &x) in row.iter_mut().zip(input) {
                        *w += dzi * x;
                    }
                }
            }
        }
        if l == 0 && !want_input {
            return Vec::new();
        }
        let mut prev = vec![0.0; layer.cols];
        for (i, &dzi) in dz.iter().enumerate() {
            if dzi == 0.0 {
                continue;
            }
            let row = &layer.weights[i * layer.cols..(i + 1) * layer.cols];
            for (p, &w) in prev.iter_mut().zip(row) {
                *p += dzi * w;
            }
        }
        dh = prev;
    }
    dh
}

/// Exact reverse-mode gradients for parameters and both inputs.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, upstream: Upstream) -> Result<Gradients> {
    backward_with(params, trace, upstream, true)
}

/// As [`backward`]; skips the dense input-gradient product when `want_inputs` is false.
pub fn backward_with(
    params: &ModelParams,
    trace: &ForwardTrace,
    upstream: Upstream,
    want_inputs: bool,
) -> Result<Gradients> {
    let mut grads = params.zeros_like();
    let inputs = backward_into(params, trace, upstream, Some(&mut grads), want_inputs)?;
    if grads.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite gradient"));
    }
    Ok(Gradients {
        params: grads,
        inputs,
    })
}

/// Accumulating form of [`backward`]: parameter gradients are added into
/// `grads` when given (it must share the parameter layout), and input
/// gradients are returned when `want_inputs` is set.
pub fn backward_into(
    params: &ModelParams,
    trace: &ForwardTrace,
    upstream: Upstream,
    mut grads: Option<&mut ParamGrads>,
    want_inputs: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if trace.stamp != params.stamp {
        return Err(Error::validation(
            "stale trace: parameters changed since the forward pass",
        ));
    }
    if let Some(g) = grads.as_deref() {
        if !params.same_layout(g) {
            return Err(Error::validation("gradient buffer layout does not match parameters"));
        }
    }
    let h = params.trunk_dim();
    let Upstream {
        d_score_gen,
        d_score_ref,
        d_confidence_logit,
    } = upstream;
    let g_top = trace.gen.top();
    let r_top = trace.reference.top();
    let sw = &params.score_head.weights;
    let cw = &params.confidence_head.weights;

    if let Some(grads) = grads.as_deref_mut() {
        let sg = &mut grads.score_head;
        for k in 0..h {
            sg.weights[k] += d_score_gen * g_top[k] + d_score_ref * r_top[k];
        }
        sg.bias[0] += d_score_gen + d_score_ref;
        let cg = &mut grads.confidence_head;
        for k in 0..h {
            cg.weights[k] += d_confidence_logit * g_top[k];
            cg.weights[h + k] += d_confidence_logit * r_top[k];
        }
        cg.bias[0] += d_confidence_logit;
    }

    let d_gen_top: Vec<f64> = (0..h).map(|k| d_score_gen * sw[k] + d_confidence_logit * cw[k]).collect();
    let d_ref_top: Vec<f64> = (0..h).map(|k| d_score_ref * sw[k] + d_confidence_logit * cw[h + k]).collect();

    let d_gen = backward_member(params, &trace.gen, d_gen_top, grads.as_deref_mut(), want_inputs);
    let d_ref = backward_member(params, &trace.reference, d_ref_top, grads, want_inputs);
    if d_gen.iter().chain(&d_ref).any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite input gradient"));
    }
    Ok((d_gen, d_ref))
}
