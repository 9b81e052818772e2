//! Surrogate-gradient backpropagation through time with per-source-neuron
//! sign constraints, Adam updates, and the Gaussian noisy-update model.
//!
//! Excitatory/inhibitory identity is a property of the source neuron: all
//! outgoing weights of one neuron share one sign. Initialization draws the
//! folded normal with the population's sign; after every optimizer step,
//! any weight that crossed zero against its mask is clamped back to 0 and
//! all others are left untouched.

use crate::encode::{make_batches, EncodedDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{activity_summary, ActivitySummary};
use crate::net::{classify, simulate, NetworkSpec, NeuronParams, SimulationTrace, SpikeRaster};
use crate::rng::{self, derive, stream};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Per-source-row sign of a weight matrix: +1 excitatory, -1 inhibitory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMask {
    signs: Vec<i8>,
}

impl SignMask {
    pub fn all_excitatory(rows: usize) -> Self {
        SignMask {
            signs: vec![1; rows],
        }
    }

    /// First `n_excitatory` rows +1, the rest -1.
    pub fn split(rows: usize, n_excitatory: usize) -> Result<Self> {
        if n_excitatory > rows {
            return Err(Error::Parameter(format!(
                "n_excitatory {n_excitatory} exceeds rows {rows}"
            )));
        }
        let mut signs = vec![1i8; rows];
        for s in signs.iter_mut().skip(n_excitatory) {
            *s = -1;
        }
        Ok(SignMask { signs })
    }

    pub fn from_signs(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Data("sign mask entries must be +1 or -1".into()));
        }
        Ok(SignMask { signs })
    }

    #[inline]
    pub fn sign(&self, row: usize) -> i8 {
        self.signs[row]
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }
}

/// Weights with their sign mask. Every value satisfies
/// `sign(value) in {mask sign, 0}` at any observable point.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub values: Matrix,
    pub mask: SignMask,
}

impl WeightMatrix {
    pub fn new(values: Matrix, mask: SignMask) -> Result<Self> {
        if mask.len() != values.rows() {
            return Err(Error::Shape(format!(
                "mask has {} rows, matrix has {}",
                mask.len(),
                values.rows()
            )));
        }
        let wm = WeightMatrix { values, mask };
        if wm.count_sign_violations() > 0 {
            return Err(Error::Data("weight values violate their sign mask".into()));
        }
        Ok(wm)
    }

    /// Number of entries whose sign disagrees with the mask (exhaustive).
    pub fn count_sign_violations(&self) -> usize {
        let mut violations = 0;
        for r in 0..self.values.rows() {
            let s = self.mask.sign(r) as f64;
            for &v in self.values.row(r) {
                if v * s < 0.0 {
                    violations += 1;
                }
            }
        }
        violations
    }

    /// Clamp entries that crossed zero against the mask back to 0.
    pub fn clamp_to_mask(&mut self) {
        for r in 0..self.values.rows() {
            let s = self.mask.sign(r) as f64;
            for v in self.values.row_mut(r) {
                if *v * s < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    PerStepNll,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Std of the input-to-hidden initialization normal (the swept one).
    pub sigma_init: f64,
    /// Std of the hidden-to-output initialization normal.
    pub sigma_out: f64,
    pub surrogate_beta: f64,
    pub loss_mode: LossMode,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 30,
            sigma_init: 1e-3,
            sigma_out: 1e-2,
            surrogate_beta: 10.0,
            loss_mode: LossMode::PerStepNll,
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_init > 0.0) || !(self.sigma_out > 0.0) {
            return Err(Error::Parameter(format!(
                "initialization stds must be positive ({}, {})",
                self.sigma_init, self.sigma_out
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        if !(self.surrogate_beta > 0.0) {
            return Err(Error::Parameter("surrogate_beta must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
            return Err(Error::Parameter("invalid Adam parameters".into()));
        }
        Ok(())
    }
}

/// Gaussian perturbation of each weight update, with std expressed as a
/// fraction of the input-to-hidden sigma_init. Ratio 0 reproduces
/// noiseless training exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_noise_ratio: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_noise_ratio < 0.0 {
            return Err(Error::Parameter("sigma_noise_ratio must be >= 0".into()));
        }
        Ok(())
    }
}

/// Draw the folded normal |N(0, sigma)| with the row's sign.
fn init_matrix(
    rows: usize,
    cols: usize,
    sigma: f64,
    mask: SignMask,
    rng: &mut ChaCha12Rng,
) -> Result<WeightMatrix> {
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::Parameter(format!("bad init sigma {sigma}: {e}")))?;
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let s = mask.sign(r) as f64;
        for v in m.row_mut(r) {
            *v = s * normal.sample(rng).abs();
        }
    }
    WeightMatrix::new(m, mask)
}

/// Seeded initialization: input weights are the absolute value of a
/// normal (the input layer is all-excitatory); hidden-to-output rows take
/// the absolute value for excitatory source units and its negative for
/// inhibitory ones.
pub fn init_weights(
    spec: &NetworkSpec,
    sigma_init: f64,
    sigma_out: f64,
    seed: u64,
) -> Result<(WeightMatrix, WeightMatrix)> {
    if !(sigma_init > 0.0) || !(sigma_out > 0.0) {
        return Err(Error::Parameter(format!(
            "initialization stds must be positive ({sigma_init}, {sigma_out})"
        )));
    }
    let mut rng = rng::rng_from(seed);
    let w_in = init_matrix(
        spec.n_input,
        spec.n_hidden,
        sigma_init,
        SignMask::all_excitatory(spec.n_input),
        &mut rng,
    )?;
    let w_out = init_matrix(
        spec.n_hidden,
        spec.n_output,
        sigma_out,
        SignMask::split(spec.n_hidden, spec.n_excitatory)?,
        &mut rng,
    )?;
    Ok((w_in, w_out))
}

/// Exponential surrogate derivative of the spike nonlinearity:
/// `exp(-beta * |v - threshold|)`, peaking at 1 on the threshold.
#[inline]
pub fn surrogate_grad(v: f64, beta: f64, threshold: f64) -> f64 {
    (-beta * (v - threshold).abs()).exp()
}

/// Per-step negative log-likelihood of the label under a softmax over the
/// readout voltages, averaged over steps.
pub fn loss_per_step(readout_voltages: &Matrix, label: usize) -> Result<f64> {
    let (t_steps, n_o) = (readout_voltages.rows(), readout_voltages.cols());
    if label >= n_o {
        return Err(Error::Data(format!("label {label} out of range ({n_o} outputs)")));
    }
    if t_steps == 0 {
        return Err(Error::State("loss of an empty trace".into()));
    }
    let mut total = 0.0;
    for t in 0..t_steps {
        let row = readout_voltages.row(t);
        let mut m = f64::NEG_INFINITY;
        for &v in row {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite readout voltage at step {t}")));
            }
            m = m.max(v);
        }
        let log_z = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        total += log_z - readout_voltages.get(t, label);
    }
    Ok(total / t_steps as f64)
}

/// Gradients with the same shapes as the weight matrices.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w_in: Matrix,
    pub w_out: Matrix,
}

impl Gradients {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Gradients {
            w_in: Matrix::zeros(spec.n_input, spec.n_hidden),
            w_out: Matrix::zeros(spec.n_hidden, spec.n_output),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.w_in.data_mut().iter_mut().zip(other.w_in.data()) {
            *a += b;
        }
        for (a, b) in self.w_out.data_mut().iter_mut().zip(other.w_out.data()) {
            *a += b;
        }
    }

    fn scale(&mut self, factor: f64) {
        for v in self.w_in.data_mut() {
            *v *= factor;
        }
        for v in self.w_out.data_mut() {
            *v *= factor;
        }
    }
}

/// Reverse-time accumulation of the per-step-NLL loss gradient for one
/// case. The spike nonlinearity's derivative is replaced by
/// `surrogate_grad`; the reset gate is treated as a constant in the
/// backward graph (no gradient flows through the reset branch). Gradients
/// are not sign-constrained here: constraints apply at update time.
pub fn backward_bptt(
    trace: &SimulationTrace,
    input_raster: &SpikeRaster,
    label: usize,
    w_out: &Matrix,
    params: &NeuronParams,
    surrogate_beta: f64,
) -> Result<Gradients> {
    let t_steps = trace.readout_voltages.rows();
    let n_h = trace.hidden_voltages.cols();
    let n_o = trace.readout_voltages.cols();
    let n_in = input_raster.units();
    if w_out.rows() != n_h || w_out.cols() != n_o {
        return Err(Error::Shape(format!(
            "w_out is {}x{}, trace implies {}x{}",
            w_out.rows(),
            w_out.cols(),
            n_h,
            n_o
        )));
    }
    if input_raster.steps() != t_steps || trace.hidden_voltages.rows() != t_steps {
        return Err(Error::Shape("trace and raster horizons disagree".into()));
    }
    if label >= n_o {
        return Err(Error::Data(format!("label {label} out of range ({n_o} outputs)")));
    }
    let a_mem = params.decay_mem()?;
    let a_syn = params.decay_syn()?;
    let theta = params.threshold;
    let inv_t = 1.0 / t_steps as f64;

    let mut grad_in = Matrix::zeros(n_in, n_h);
    let mut grad_out = Matrix::zeros(n_h, n_o);

    let mut l_vo = vec![0.0f64; n_o]; // dL/dV_out[t+1]
    let mut l_io = vec![0.0f64; n_o]; // dL/dI_out[t+1]
    let mut l_vint = vec![0.0f64; n_h]; // dL/dV_hidden[t+1]
    let mut l_ih = vec![0.0f64; n_h]; // dL/dI_hidden[t+1]
    let mut l_vo_new = vec![0.0f64; n_o];
    let mut l_io_new = vec![0.0f64; n_o];
    let mut l_vint_new = vec![0.0f64; n_h];
    let mut l_ih_new = vec![0.0f64; n_h];
    let mut probs = vec![0.0f64; n_o];

    for t in (0..t_steps).rev() {
        // output weight gradient through I_out[t+1]
        for &i in trace.hidden_spikes.step_units(t) {
            let row = grad_out.row_mut(i as usize);
            for (g, l) in row.iter_mut().zip(&l_io) {
                *g += l;
            }
        }
        // input weight gradient through I_hidden[t+1]
        for &u in input_raster.step_units(t) {
            let row = grad_in.row_mut(u as usize);
            for (g, l) in row.iter_mut().zip(&l_ih) {
                *g += l;
            }
        }

        // softmax of the readout row feeds the direct loss term
        let row = trace.readout_voltages.row(t);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Numeric(format!("non-finite readout at step {t}")));
        }
        let mut z = 0.0;
        for (p, &v) in probs.iter_mut().zip(row) {
            *p = (v - m).exp();
            z += *p;
        }
        for (j, p) in probs.iter_mut().enumerate() {
            *p /= z;
            let direct = (*p - if j == label { 1.0 } else { 0.0 }) * inv_t;
            l_vo_new[j] = direct + a_mem * l_vo[j];
            l_io_new[j] = l_vo[j] + a_syn * l_io[j];
        }

        // hidden adjoints: spike path through w_out, carry through decay
        for i in 0..n_h {
            let w_row = w_out.row(i);
            let mut l_spike = 0.0;
            for (w, l) in w_row.iter().zip(&l_io) {
                l_spike += w * l;
            }
            let v = trace.hidden_voltages.get(t, i);
            let gate = if v > theta { 0.0 } else { 1.0 };
            l_vint_new[i] =
                l_spike * surrogate_grad(v, surrogate_beta, theta) + gate * a_mem * l_vint[i];
            l_ih_new[i] = l_vint[i] + a_syn * l_ih[i];
        }

        std::mem::swap(&mut l_vo, &mut l_vo_new);
        std::mem::swap(&mut l_io, &mut l_io_new);
        std::mem::swap(&mut l_vint, &mut l_vint_new);
        std::mem::swap(&mut l_ih, &mut l_ih_new);
    }

    Ok(Gradients {
        w_in: grad_in,
        w_out: grad_out,
    })
}

/// Adam moment estimates for both weight matrices.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_in: Matrix,
    v_in: Matrix,
    m_out: Matrix,
    v_out: Matrix,
    step: u64,
}

impl AdamState {
    pub fn new(spec: &NetworkSpec) -> Self {
        AdamState {
            m_in: Matrix::zeros(spec.n_input, spec.n_hidden),
            v_in: Matrix::zeros(spec.n_input, spec.n_hidden),
            m_out: Matrix::zeros(spec.n_hidden, spec.n_output),
            v_out: Matrix::zeros(spec.n_hidden, spec.n_output),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn adam_update_matrix(
    w: &mut Matrix,
    g: &Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bias1: f64,
    bias2: f64,
    noise: Option<(&mut ChaCha12Rng, &Normal<f64>)>,
) -> Result<()> {
    let n = w.data().len();
    if g.data().len() != n {
        return Err(Error::Shape("gradient shape mismatch".into()));
    }
    let wd = w.data_mut();
    let gd = g.data();
    let md = m.data_mut();
    let vd = v.data_mut();
    match noise {
        None => {
            for i in 0..n {
                let gi = gd[i];
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let step = -lr * (md[i] / bias1) / ((vd[i] / bias2).sqrt() + epsilon);
                if !step.is_finite() {
                    return Err(Error::Numeric(format!("non-finite update at entry {i}")));
                }
                wd[i] += step;
            }
        }
        Some((rng, normal)) => {
            for i in 0..n {
                let gi = gd[i];
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let step = -lr * (md[i] / bias1) / ((vd[i] / bias2).sqrt() + epsilon)
                    + normal.sample(rng);
                if !step.is_finite() {
                    return Err(Error::Numeric(format!("non-finite update at entry {i}")));
                }
                wd[i] += step;
            }
        }
    }
    Ok(())
}

/// One optimizer step over both matrices: Adam step, optional Gaussian
/// perturbation with std `sigma_noise_ratio * sigma_init` (drawn per entry
/// from `noise_rng`, w_in first then w_out, row-major), then the sign
/// clamp that zeros every entry disagreeing with its mask.
///
/// When the ratio is 0 the noise path is skipped entirely: no draws are
/// taken, making ratio-0 runs bitwise identical to runs with no noise
/// model at all.
#[allow(clippy::too_many_arguments)]
pub fn apply_update(
    w_in: &mut WeightMatrix,
    w_out: &mut WeightMatrix,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
    noise: Option<&NoiseModel>,
    noise_rng: Option<&mut ChaCha12Rng>,
) -> Result<()> {
    let Optimizer::Adam { beta1, beta2, epsilon } = cfg.optimizer;
    state.step += 1;
    let bias1 = 1.0 - beta1.powi(state.step as i32);
    let bias2 = 1.0 - beta2.powi(state.step as i32);

    let sigma_noise = noise.map_or(0.0, |n| n.sigma_noise_ratio * cfg.sigma_init);
    if sigma_noise > 0.0 {
        let rng = noise_rng.ok_or_else(|| {
            Error::State("noise model requires a noise RNG stream".into())
        })?;
        let normal = Normal::new(0.0, sigma_noise)
            .map_err(|e| Error::Parameter(format!("bad noise sigma: {e}")))?;
        adam_update_matrix(
            &mut w_in.values,
            &grads.w_in,
            &mut state.m_in,
            &mut state.v_in,
            cfg.learning_rate,
            beta1,
            beta2,
            epsilon,
            bias1,
            bias2,
            Some((rng, &normal)),
        )?;
        adam_update_matrix(
            &mut w_out.values,
            &grads.w_out,
            &mut state.m_out,
            &mut state.v_out,
            cfg.learning_rate,
            beta1,
            beta2,
            epsilon,
            bias1,
            bias2,
            Some((rng, &normal)),
        )?;
    } else {
        adam_update_matrix(
            &mut w_in.values,
            &grads.w_in,
            &mut state.m_in,
            &mut state.v_in,
            cfg.learning_rate,
            beta1,
            beta2,
            epsilon,
            bias1,
            bias2,
            None,
        )?;
        adam_update_matrix(
            &mut w_out.values,
            &grads.w_out,
            &mut state.m_out,
            &mut state.v_out,
            cfg.learning_rate,
            beta1,
            beta2,
            epsilon,
            bias1,
            bias2,
            None,
        )?;
    }
    w_in.clamp_to_mask();
    w_out.clamp_to_mask();
    Ok(())
}

/// Fixed chunk size for batch parallelism. Gradient reduction always runs
/// over chunks in index order, so results do not depend on worker count.
const BATCH_CHUNK: usize = 32;

/// Forward + backward over one batch; returns (mean loss, mean gradients).
pub fn batch_forward_backward(
    spec: &NetworkSpec,
    w_in: &Matrix,
    w_out: &Matrix,
    data: &EncodedDataset,
    batch: &[usize],
    surrogate_beta: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let chunks: Vec<&[usize]> = batch.chunks(BATCH_CHUNK).collect();
    let partials: Vec<Result<(f64, Gradients)>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grads = Gradients::zeros(spec);
            for &idx in *chunk {
                let raster = &data.rasters[idx];
                let label = data.labels[idx];
                let trace = simulate(spec, w_in, w_out, raster)?;
                loss += loss_per_step(&trace.readout_voltages, label)?;
                let g = backward_bptt(
                    &trace,
                    raster,
                    label,
                    w_out,
                    &spec.neuron_params,
                    surrogate_beta,
                )?;
                grads.add_assign(&g);
            }
            Ok((loss, grads))
        })
        .collect();

    let mut total_loss = 0.0;
    let mut total = Gradients::zeros(spec);
    for partial in partials {
        let (loss, grads) = partial?;
        total_loss += loss;
        total.add_assign(&grads);
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    Ok((total_loss * scale, total))
}

/// Accuracy over a labelled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub cases: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

struct EvalDetail {
    report: EvalReport,
    hidden_rasters: Vec<SpikeRaster>,
}

fn eval_detail(
    spec: &NetworkSpec,
    w_in: &Matrix,
    w_out: &Matrix,
    data: &EncodedDataset,
    keep_rasters: bool,
) -> Result<EvalDetail> {
    if data.len() == 0 {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(BATCH_CHUNK).collect();
    let partials: Vec<Result<(Vec<(usize, usize)>, Vec<SpikeRaster>)>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut pairs = Vec::with_capacity(chunk.len());
            let mut rasters = Vec::new();
            for &idx in *chunk {
                let trace = simulate(spec, w_in, w_out, &data.rasters[idx])?;
                let pred = classify(&trace)?;
                pairs.push((data.labels[idx], pred));
                if keep_rasters {
                    rasters.push(trace.hidden_spikes);
                }
            }
            Ok((pairs, rasters))
        })
        .collect();

    let n_classes = spec.n_output;
    let mut cases = vec![0usize; n_classes];
    let mut correct = vec![0usize; n_classes];
    let mut hidden_rasters = Vec::new();
    for partial in partials {
        let (pairs, rasters) = partial?;
        for (label, pred) in pairs {
            cases[label] += 1;
            if pred == label {
                correct[label] += 1;
            }
        }
        hidden_rasters.extend(rasters);
    }
    let total: usize = cases.iter().sum();
    let hits: usize = correct.iter().sum();
    let per_class = (0..n_classes)
        .map(|c| ClassAccuracy {
            class: c,
            cases: cases[c],
            correct: correct[c],
            accuracy: if cases[c] > 0 {
                Some(correct[c] as f64 / cases[c] as f64)
            } else {
                None
            },
        })
        .collect();
    Ok(EvalDetail {
        report: EvalReport {
            accuracy: hits as f64 / total as f64,
            per_class,
        },
        hidden_rasters,
    })
}

/// Overall and per-class accuracy of a weight pair on a test set.
pub fn evaluate(
    spec: &NetworkSpec,
    w_in: &WeightMatrix,
    w_out: &WeightMatrix,
    test: &EncodedDataset,
) -> Result<EvalReport> {
    test.check_against(spec)?;
    Ok(eval_detail(spec, &w_in.values, &w_out.values, test, false)?.report)
}

/// One epoch row of a training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss across the epoch; absent for the initial evaluation.
    pub train_loss: Option<f64>,
    pub test_accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub activity: ActivitySummary,
}

/// Weight-distribution snapshot at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub epoch: usize,
    pub input_hidden: crate::metrics::WeightStats,
    pub hidden_output: crate::metrics::WeightStats,
}

#[derive(Debug, Clone)]
pub struct TrainRunOptions {
    /// Scan both matrices after every update and count mask violations.
    pub scan_sign_violations: bool,
    /// Histogram bins for weight snapshots.
    pub histogram_bins: usize,
}

impl Default for TrainRunOptions {
    fn default() -> Self {
        TrainRunOptions {
            scan_sign_violations: false,
            histogram_bins: 64,
        }
    }
}

/// Full output of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    pub weight_snapshots: Vec<WeightSnapshot>,
    pub w_in: WeightMatrix,
    pub w_out: WeightMatrix,
    pub updates_applied: u64,
    /// (updates scanned, violations found) when scanning was requested.
    pub sign_scan: Option<(u64, u64)>,
}

impl TrainOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.test_accuracy)
    }

    pub fn peak_accuracy(&self) -> f64 {
        self.epochs
            .iter()
            .map(|e| e.test_accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Epochs at which weight snapshots are taken: initial, after one epoch,
/// after ten, and after training completes.
fn snapshot_epochs(total: usize) -> Vec<usize> {
    let mut set = vec![0, 1, 10, total];
    set.retain(|&e| e <= total);
    set.sort_unstable();
    set.dedup();
    set
}

/// Run the full training protocol: seeded init, per-epoch seeded shuffle,
/// per-batch forward/backward, Adam + optional noise + sign clamp, and
/// per-epoch evaluation with activity summaries.
pub fn train_run(
    spec: &NetworkSpec,
    train: &EncodedDataset,
    test: &EncodedDataset,
    cfg: &TrainConfig,
    noise: Option<&NoiseModel>,
    opts: &TrainRunOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(n) = noise {
        n.validate()?;
    }
    spec.validate()?;
    train.check_against(spec)?;
    test.check_against(spec)?;

    let init_seed = derive(cfg.seed, stream::INIT);
    let shuffle_base = derive(cfg.seed, stream::SHUFFLE);
    let (mut w_in, mut w_out) = init_weights(spec, cfg.sigma_init, cfg.sigma_out, init_seed)?;
    let mut adam = AdamState::new(spec);
    let mut noise_rng = noise.map(|n| rng::rng_from(n.seed));

    let snapshots_at = snapshot_epochs(cfg.epochs);
    let mut epochs = Vec::with_capacity(cfg.epochs + 1);
    let mut weight_snapshots = Vec::new();
    let mut scan: Option<(u64, u64)> = opts.scan_sign_violations.then_some((0, 0));

    let record_epoch = |epoch: usize,
                            train_loss: Option<f64>,
                            w_in: &WeightMatrix,
                            w_out: &WeightMatrix,
                            epochs: &mut Vec<EpochRecord>,
                            weight_snapshots: &mut Vec<WeightSnapshot>|
     -> Result<()> {
        let detail = eval_detail(spec, &w_in.values, &w_out.values, test, true)?;
        let activity = activity_summary(
            &detail.hidden_rasters,
            &test.labels,
            spec.n_excitatory,
            spec.n_output,
        )?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            test_accuracy: detail.report.accuracy,
            per_class: detail.report.per_class,
            activity,
        });
        if snapshots_at.contains(&epoch) {
            weight_snapshots.push(WeightSnapshot {
                epoch,
                input_hidden: crate::metrics::weight_stats(&w_in.values, opts.histogram_bins),
                hidden_output: crate::metrics::weight_stats(&w_out.values, opts.histogram_bins),
            });
        }
        Ok(())
    };

    record_epoch(0, None, &w_in, &w_out, &mut epochs, &mut weight_snapshots)?;

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(train.len(), cfg.batch_size, derive(shuffle_base, epoch as u64))?;
        let mut epoch_loss = 0.0;
        let n_batches = batches.len();
        for batch in batches {
            let (loss, grads) = batch_forward_backward(
                spec,
                &w_in.values,
                &w_out.values,
                train,
                &batch,
                cfg.surrogate_beta,
            )?;
            epoch_loss += loss;
            apply_update(
                &mut w_in,
                &mut w_out,
                &grads,
                &mut adam,
                cfg,
                noise,
                noise_rng.as_mut(),
            )?;
            if let Some((scanned, violations)) = scan.as_mut() {
                *scanned += 1;
                *violations +=
                    (w_in.count_sign_violations() + w_out.count_sign_violations()) as u64;
            }
        }
        record_epoch(
            epoch,
            Some(epoch_loss / n_batches as f64),
            &w_in,
            &w_out,
            &mut epochs,
            &mut weight_snapshots,
        )?;
    }

    Ok(TrainOutcome {
        epochs,
        weight_snapshots,
        updates_applied: adam.step_count(),
        sign_scan: scan,
        w_in,
        w_out,
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SNNWT001";

/// Write one weight matrix checkpoint: magic, u32 rows, u32 cols, u8
/// matrix id, f64 values row-major, then the sign mask as one i8 per row
/// (all little-endian).
pub fn write_checkpoint(path: &Path, matrix_id: u8, weights: &WeightMatrix) -> Result<()> {
    let (rows, cols) = (weights.values.rows(), weights.values.cols());
    let mut buf = Vec::with_capacity(17 + rows * cols * 8 + rows);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    buf.push(matrix_id);
    for &v in weights.values.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for r in 0..rows {
        buf.push(weights.mask.sign(r) as u8);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read a checkpoint written by `write_checkpoint`.
pub fn read_checkpoint(path: &Path) -> Result<(u8, WeightMatrix)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 17 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad checkpoint magic"));
    }
    let rows = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let matrix_id = buf[16];
    let expected = 17 + rows * cols * 8 + rows;
    if buf.len() != expected {
        return Err(Error::format(
            path,
            format!("checkpoint is {} bytes, header implies {expected}", buf.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        let at = 17 + i * 8;
        data.push(f64::from_le_bytes(buf[at..at + 8].try_into().unwrap()));
    }
    let mask_at = 17 + rows * cols * 8;
    let signs: Vec<i8> = buf[mask_at..mask_at + rows].iter().map(|&b| b as i8).collect();
    let mask = SignMask::from_signs(signs).map_err(|_| Error::format(path, "invalid sign mask"))?;
    let wm = WeightMatrix::new(Matrix::from_vec(rows, cols, data), mask)
        .map_err(|_| Error::format(path, "checkpoint values violate sign mask"))?;
    Ok((matrix_id, wm))
}

/// Smooth reference variant used to verify the hidden-weight gradient
/// path against finite differences. The hard threshold is replaced by the
/// antiderivative of the surrogate (so the surrogate is this model's
/// exact spike derivative) and the reset is removed, making the loss
/// differentiable end to end.
pub mod relaxed {
    use super::*;

    /// Antiderivative of `surrogate_grad` in v: a smooth monotone gate.
    pub fn smooth_gate(v: f64, beta: f64, threshold: f64) -> f64 {
        if v < threshold {
            (beta * (v - threshold)).exp() / beta
        } else {
            2.0 / beta - (-beta * (v - threshold)).exp() / beta
        }
    }

    pub struct RelaxedTrace {
        pub hidden_voltages: Matrix,
        pub gates: Matrix,
        pub readout_voltages: Matrix,
    }

    /// Forward pass with the smooth gate as spike output and no reset.
    pub fn simulate_relaxed(
        spec: &NetworkSpec,
        w_in: &Matrix,
        w_out: &Matrix,
        input_raster: &SpikeRaster,
        beta: f64,
    ) -> Result<RelaxedTrace> {
        let p = &spec.neuron_params;
        let a_mem = p.decay_mem()?;
        let a_syn = p.decay_syn()?;
        let (t_steps, n_h, n_o) = (spec.horizon_steps, spec.n_hidden, spec.n_output);
        let mut voltages = Matrix::zeros(t_steps, n_h);
        let mut gates = Matrix::zeros(t_steps, n_h);
        let mut readout = Matrix::zeros(t_steps, n_o);

        let mut i_h = vec![0.0f64; n_h];
        let mut v_h = vec![0.0f64; n_h];
        let mut g_h = vec![0.0f64; n_h];
        let mut i_o = vec![0.0f64; n_o];
        let mut v_o = vec![0.0f64; n_o];

        for t in 0..t_steps {
            voltages.row_mut(t).copy_from_slice(&v_h);
            gates.row_mut(t).copy_from_slice(&g_h);
            readout.row_mut(t).copy_from_slice(&v_o);
            if t + 1 == t_steps {
                break;
            }
            for j in 0..n_o {
                v_o[j] = a_mem * v_o[j] + i_o[j];
                i_o[j] *= a_syn;
            }
            for (i, &g) in g_h.iter().enumerate() {
                let row = w_out.row(i);
                for (io, w) in i_o.iter_mut().zip(row) {
                    *io += g * w;
                }
            }
            for i in 0..n_h {
                v_h[i] = a_mem * v_h[i] + i_h[i];
                i_h[i] *= a_syn;
            }
            for &u in input_raster.step_units(t) {
                let row = w_in.row(u as usize);
                for (ih, w) in i_h.iter_mut().zip(row) {
                    *ih += w;
                }
            }
            for i in 0..n_h {
                g_h[i] = smooth_gate(v_h[i], beta, p.threshold);
            }
        }
        Ok(RelaxedTrace {
            hidden_voltages: voltages,
            gates,
            readout_voltages: readout,
        })
    }

    /// Backward pass of the relaxed model: same reverse recurrences with
    /// gate pass-through 1 (no reset) and real-valued spike drive.
    pub fn backward_relaxed(
        trace: &RelaxedTrace,
        input_raster: &SpikeRaster,
        label: usize,
        w_out: &Matrix,
        params: &NeuronParams,
        beta: f64,
    ) -> Result<Gradients> {
        let t_steps = trace.readout_voltages.rows();
        let n_h = trace.hidden_voltages.cols();
        let n_o = trace.readout_voltages.cols();
        let n_in = input_raster.units();
        let a_mem = params.decay_mem()?;
        let a_syn = params.decay_syn()?;
        let theta = params.threshold;
        let inv_t = 1.0 / t_steps as f64;

        let mut grad_in = Matrix::zeros(n_in, n_h);
        let mut grad_out = Matrix::zeros(n_h, n_o);
        let mut l_vo = vec![0.0f64; n_o];
        let mut l_io = vec![0.0f64; n_o];
        let mut l_v = vec![0.0f64; n_h];
        let mut l_ih = vec![0.0f64; n_h];
        let mut l_vo_new = vec![0.0f64; n_o];
        let mut l_io_new = vec![0.0f64; n_o];
        let mut l_v_new = vec![0.0f64; n_h];
        let mut l_ih_new = vec![0.0f64; n_h];
        let mut probs = vec![0.0f64; n_o];

        for t in (0..t_steps).rev() {
            for i in 0..n_h {
                let g = trace.gates.get(t, i);
                let row = grad_out.row_mut(i);
                for (gr, l) in row.iter_mut().zip(&l_io) {
                    *gr += g * l;
                }
            }
            for &u in input_raster.step_units(t) {
                let row = grad_in.row_mut(u as usize);
                for (gr, l) in row.iter_mut().zip(&l_ih) {
                    *gr += l;
                }
            }
            let row = trace.readout_voltages.row(t);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &v) in probs.iter_mut().zip(row) {
                *p = (v - m).exp();
                z += *p;
            }
            for (j, p) in probs.iter_mut().enumerate() {
                *p /= z;
                let direct = (*p - if j == label { 1.0 } else { 0.0 }) * inv_t;
                l_vo_new[j] = direct + a_mem * l_vo[j];
                l_io_new[j] = l_vo[j] + a_syn * l_io[j];
            }
            for i in 0..n_h {
                let w_row = w_out.row(i);
                let mut l_gate = 0.0;
                for (w, l) in w_row.iter().zip(&l_io) {
                    l_gate += w * l;
                }
                let v = trace.hidden_voltages.get(t, i);
                l_v_new[i] = l_gate * surrogate_grad(v, beta, theta) + a_mem * l_v[i];
                l_ih_new[i] = l_v[i] + a_syn * l_ih[i];
            }
            std::mem::swap(&mut l_vo, &mut l_vo_new);
            std::mem::swap(&mut l_io, &mut l_io_new);
            std::mem::swap(&mut l_v, &mut l_v_new);
            std::mem::swap(&mut l_ih, &mut l_ih_new);
        }
        Ok(Gradients {
            w_in: grad_in,
            w_out: grad_out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{latency_encode, EncodingConfig, ImageSample};
    use rand::Rng;

    fn small_spec() -> NetworkSpec {
        NetworkSpec::new(12, 6, 3, 4, 20, NeuronParams::default()).unwrap()
    }

    fn fixture_dataset(spec: &NetworkSpec, n: usize, seed: u64) -> EncodedDataset {
        let cfg = EncodingConfig::new(spec.horizon_steps, spec.neuron_params.dt);
        let mut rng = rng::rng_from(seed);
        let mut rasters = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let pixels: Vec<f64> = (0..spec.n_input).map(|_| rng.random_range(0.0..1.0)).collect();
            let label = rng.random_range(0..spec.n_output);
            let sample = ImageSample { pixels, label };
            rasters.push(latency_encode(&sample, &cfg).unwrap());
            labels.push(label);
        }
        EncodedDataset::new(rasters, labels).unwrap()
    }

    #[test]
    fn init_weights_respects_signs_and_seed() {
        let spec = NetworkSpec::fashion_mnist(80).unwrap();
        let (w_in, w_out) = init_weights(&spec, 0.001, 0.01, 7).unwrap();
        assert_eq!(w_in.count_sign_violations(), 0);
        assert_eq!(w_out.count_sign_violations(), 0);
        // excitatory rows non-negative, inhibitory rows non-positive
        for r in 0..100 {
            for &v in w_out.values.row(r) {
                if r < 80 {
                    assert!(v >= 0.0);
                } else {
                    assert!(v <= 0.0);
                }
            }
        }
        let (w_in2, w_out2) = init_weights(&spec, 0.001, 0.01, 7).unwrap();
        assert_eq!(w_in.values.data(), w_in2.values.data());
        assert_eq!(w_out.values.data(), w_out2.values.data());
        let (w_in3, _) = init_weights(&spec, 0.001, 0.01, 8).unwrap();
        assert_ne!(w_in.values.data(), w_in3.values.data());
    }

    #[test]
    fn init_weights_folded_normal_std() {
        let spec = NetworkSpec::fashion_mnist(80).unwrap();
        let sigma = 0.001;
        let (w_in, _) = init_weights(&spec, sigma, 0.01, 3).unwrap();
        let data = w_in.values.data(); // 78400 entries
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let std = (data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / data.len() as f64)
            .sqrt();
        let expect = sigma * (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (std - expect).abs() / expect < 0.05,
            "folded-normal std {std} vs {expect}"
        );
    }

    #[test]
    fn init_weights_rejects_bad_sigma() {
        let spec = small_spec();
        assert!(init_weights(&spec, 0.0, 0.01, 1).is_err());
        assert!(init_weights(&spec, 0.01, -1.0, 1).is_err());
    }

    #[test]
    fn surrogate_shape() {
        assert_eq!(surrogate_grad(1.0, 10.0, 1.0), 1.0);
        let up = surrogate_grad(1.3, 10.0, 1.0);
        let down = surrogate_grad(0.7, 10.0, 1.0);
        assert_eq!(up, down);
        assert!((surrogate_grad(1.1, 10.0, 1.0) - 0.36787944117144233).abs() < 1e-12);
    }

    #[test]
    fn loss_per_step_uniform_and_saturated() {
        let readout = Matrix::zeros(5, 10);
        let l = loss_per_step(&readout, 3).unwrap();
        assert!((l - 2.3025850929940455).abs() < 1e-12);

        let mut readout = Matrix::zeros(5, 10);
        for t in 0..5 {
            readout.set(t, 2, 1000.0);
        }
        assert!(loss_per_step(&readout, 2).unwrap() < 1e-6);
    }

    #[test]
    fn loss_per_step_handcrafted_table() {
        // 3 steps, 2 classes, label 0; value checked against an
        // independent scalar softmax evaluation
        let readout = Matrix::from_rows(vec![
            vec![0.2, -0.1],
            vec![1.0, 0.5],
            vec![-0.3, 0.4],
        ]);
        let l = loss_per_step(&readout, 0).unwrap();
        assert!((l - 0.7105394258446971).abs() < 1e-12);
    }

    #[test]
    fn loss_per_step_rejects_non_finite() {
        let mut readout = Matrix::zeros(2, 3);
        readout.set(1, 1, f64::NAN);
        assert!(matches!(loss_per_step(&readout, 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn bptt_zero_input_zero_gradients() {
        let spec = small_spec();
        let (w_in, w_out) = init_weights(&spec, 0.3, 0.3, 5).unwrap();
        let raster = SpikeRaster::empty(spec.horizon_steps, spec.n_input, 1.0);
        let trace = simulate(&spec, &w_in.values, &w_out.values, &raster).unwrap();
        let g = backward_bptt(&trace, &raster, 0, &w_out.values, &spec.neuron_params, 10.0)
            .unwrap();
        assert!(g.w_in.data().iter().all(|&x| x == 0.0));
        assert!(g.w_out.data().iter().all(|&x| x == 0.0));
    }

    fn spiking_loss(
        spec: &NetworkSpec,
        w_in: &Matrix,
        w_out: &Matrix,
        data: &EncodedDataset,
    ) -> f64 {
        let mut total = 0.0;
        for i in 0..data.len() {
            let tr = simulate(spec, w_in, w_out, &data.rasters[i]).unwrap();
            total += loss_per_step(&tr.readout_voltages, data.labels[i]).unwrap();
        }
        total / data.len() as f64
    }

    #[test]
    fn readout_gradient_matches_finite_differences() {
        let spec = small_spec();
        let data = fixture_dataset(&spec, 10, 42);
        let (w_in, w_out) = init_weights(&spec, 0.3, 0.3, 11).unwrap();

        let mut grads = Gradients::zeros(&spec);
        for i in 0..data.len() {
            let tr = simulate(&spec, &w_in.values, &w_out.values, &data.rasters[i]).unwrap();
            let g = backward_bptt(
                &tr,
                &data.rasters[i],
                data.labels[i],
                &w_out.values,
                &spec.neuron_params,
                10.0,
            )
            .unwrap();
            grads.add_assign(&g);
        }
        grads.scale(1.0 / data.len() as f64);

        // central finite differences of the true (spiking) loss: the
        // readout path is smooth in w_out
        let h = 1e-5;
        let mut w = w_out.values.clone();
        let mut num = 0.0;
        let mut denom = 0.0;
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                let orig = w.get(r, c);
                w.set(r, c, orig + h);
                let lp = spiking_loss(&spec, &w_in.values, &w, &data);
                w.set(r, c, orig - h);
                let lm = spiking_loss(&spec, &w_in.values, &w, &data);
                w.set(r, c, orig);
                let fd = (lp - lm) / (2.0 * h);
                let diff = fd - grads.w_out.get(r, c);
                num += diff * diff;
                denom += fd * fd;
            }
        }
        let rel = (num / denom.max(1e-300)).sqrt();
        assert!(rel < 1e-4, "readout gradient relative error {rel}");
    }

    fn relaxed_loss(
        spec: &NetworkSpec,
        w_in: &Matrix,
        w_out: &Matrix,
        data: &EncodedDataset,
        beta: f64,
    ) -> f64 {
        let mut total = 0.0;
        for i in 0..data.len() {
            let tr = relaxed::simulate_relaxed(spec, w_in, w_out, &data.rasters[i], beta).unwrap();
            total += loss_per_step(&tr.readout_voltages, data.labels[i]).unwrap();
        }
        total / data.len() as f64
    }

    #[test]
    fn relaxed_hidden_gradient_matches_finite_differences() {
        let spec = small_spec();
        let data = fixture_dataset(&spec, 10, 42);
        let (w_in, w_out) = init_weights(&spec, 0.3, 0.3, 11).unwrap();
        let beta = 10.0;

        let mut grads = Gradients::zeros(&spec);
        for i in 0..data.len() {
            let tr = relaxed::simulate_relaxed(
                &spec,
                &w_in.values,
                &w_out.values,
                &data.rasters[i],
                beta,
            )
            .unwrap();
            let g = relaxed::backward_relaxed(
                &tr,
                &data.rasters[i],
                data.labels[i],
                &w_out.values,
                &spec.neuron_params,
                beta,
            )
            .unwrap();
            grads.add_assign(&g);
        }
        grads.scale(1.0 / data.len() as f64);

        let h = 1e-5;
        let mut w = w_in.values.clone();
        let mut num = 0.0;
        let mut denom = 0.0;
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                let orig = w.get(r, c);
                w.set(r, c, orig + h);
                let lp = relaxed_loss(&spec, &w, &w_out.values, &data, beta);
                w.set(r, c, orig - h);
                let lm = relaxed_loss(&spec, &w, &w_out.values, &data, beta);
                w.set(r, c, orig);
                let fd = (lp - lm) / (2.0 * h);
                let diff = fd - grads.w_in.get(r, c);
                num += diff * diff;
                denom += fd * fd;
            }
        }
        let rel = (num / denom.max(1e-300)).sqrt();
        assert!(rel < 1e-3, "relaxed hidden gradient relative error {rel}");
    }

    #[test]
    fn apply_update_noiseless_matches_manual_adam() {
        let spec = small_spec();
        let (mut w_in, mut w_out) = init_weights(&spec, 0.1, 0.1, 2).unwrap();
        let w_in_before = w_in.values.clone();
        let mut grads = Gradients::zeros(&spec);
        for (i, v) in grads.w_in.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.13).sin() * 0.01;
        }
        let cfg = TrainConfig {
            sigma_init: 0.1,
            sigma_out: 0.1,
            ..TrainConfig::default()
        };
        let mut adam = AdamState::new(&spec);
        apply_update(&mut w_in, &mut w_out, &grads, &mut adam, &cfg, None, None).unwrap();
        // manual first adam step: mhat = g, vhat = g^2 -> step = -lr*g/(|g|+eps)
        for (i, (&before, &after)) in w_in_before
            .data()
            .iter()
            .zip(w_in.values.data())
            .enumerate()
        {
            let g = grads.w_in.data()[i];
            let step = -cfg.learning_rate * g / (g.abs() + 1e-8);
            let expect = (before + step).max(0.0); // all-excitatory mask
            assert!((after - expect).abs() < 1e-15, "entry {i}");
        }
    }

    #[test]
    fn apply_update_clamps_sign_violations_to_zero() {
        let spec = small_spec();
        let (mut w_in, mut w_out) = init_weights(&spec, 1e-6, 1e-6, 2).unwrap();
        // strong positive gradient drives excitatory weights negative
        let mut grads = Gradients::zeros(&spec);
        grads.w_in.data_mut().fill(1.0);
        grads.w_out.data_mut().fill(1.0);
        let cfg = TrainConfig {
            learning_rate: 0.5,
            sigma_init: 1e-6,
            sigma_out: 1e-6,
            ..TrainConfig::default()
        };
        let mut adam = AdamState::new(&spec);
        apply_update(&mut w_in, &mut w_out, &grads, &mut adam, &cfg, None, None).unwrap();
        assert_eq!(w_in.count_sign_violations(), 0);
        assert_eq!(w_out.count_sign_violations(), 0);
        // excitatory rows of w_out pushed negative must be exactly 0
        for r in 0..spec.n_excitatory {
            for &v in w_out.values.row(r) {
                assert_eq!(v, 0.0);
            }
        }
        // inhibitory rows move freely downward
        assert!(w_out.values.row(spec.n_excitatory).iter().all(|&v| v < 0.0));
    }

    #[test]
    fn apply_update_noise_std_matches_ratio() {
        // zero gradients isolate the noise: deltas are pure draws
        let spec = NetworkSpec::new(100, 1000, 2, 1000, 5, NeuronParams::default()).unwrap();
        let mask_in = SignMask::all_excitatory(100);
        let big = Matrix::from_vec(100, 1000, vec![1.0; 100_000]);
        let mut w_in = WeightMatrix::new(big, mask_in).unwrap();
        let mut w_out = WeightMatrix::new(
            Matrix::from_vec(1000, 2, vec![1.0; 2000]),
            SignMask::all_excitatory(1000),
        )
        .unwrap();
        let before = w_in.values.clone();
        let grads = Gradients::zeros(&spec);
        let cfg = TrainConfig {
            sigma_init: 0.05,
            ..TrainConfig::default()
        };
        let noise = NoiseModel {
            sigma_noise_ratio: 0.2,
            seed: 9,
        };
        let mut adam = AdamState::new(&spec);
        let mut nrng = rng::rng_from(noise.seed);
        apply_update(
            &mut w_in,
            &mut w_out,
            &grads,
            &mut adam,
            &cfg,
            Some(&noise),
            Some(&mut nrng),
        )
        .unwrap();
        let deltas: Vec<f64> = before
            .data()
            .iter()
            .zip(w_in.values.data())
            .map(|(b, a)| a - b)
            .collect();
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        let std = (deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / deltas.len() as f64)
            .sqrt();
        let expect = 0.2 * cfg.sigma_init;
        assert!(
            (std - expect).abs() / expect < 0.05,
            "noise std {std} vs {expect}"
        );
    }

    #[test]
    fn train_run_zero_epochs_initial_only() {
        let spec = small_spec();
        let data = fixture_dataset(&spec, 12, 3);
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 4,
            sigma_init: 0.3,
            sigma_out: 0.3,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train_run(&spec, &data, &data, &cfg, None, &TrainRunOptions::default()).unwrap();
        assert_eq!(out.epochs.len(), 1);
        assert_eq!(out.epochs[0].epoch, 0);
        assert!(out.epochs[0].train_loss.is_none());
        assert_eq!(out.updates_applied, 0);
    }

    #[test]
    fn train_run_deterministic_and_noise_zero_equivalent() {
        let spec = small_spec();
        let data = fixture_dataset(&spec, 16, 3);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            sigma_init: 0.3,
            sigma_out: 0.3,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train_run(&spec, &data, &data, &cfg, None, &TrainRunOptions::default()).unwrap();
        let b = train_run(&spec, &data, &data, &cfg, None, &TrainRunOptions::default()).unwrap();
        assert_eq!(a.w_in.values.data(), b.w_in.values.data());
        assert_eq!(a.w_out.values.data(), b.w_out.values.data());
        assert_eq!(a.epochs, b.epochs);

        // ratio-0 noise model: bitwise identical to no noise model at all
        let zero = NoiseModel {
            sigma_noise_ratio: 0.0,
            seed: 77,
        };
        let c = train_run(&spec, &data, &data, &cfg, Some(&zero), &TrainRunOptions::default())
            .unwrap();
        assert_eq!(a.w_in.values.data(), c.w_in.values.data());
        assert_eq!(a.w_out.values.data(), c.w_out.values.data());
        assert_eq!(a.epochs, c.epochs);
    }

    #[test]
    fn train_run_overfit_fixture_halves_loss() {
        // 10-case overfit fixture: 200 updates must cut loss by >= 50%
        let spec = small_spec();
        let data = fixture_dataset(&spec, 10, 21);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 10,
            sigma_init: 0.4,
            sigma_out: 0.1,
            learning_rate: 2e-3,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train_run(&spec, &data, &data, &cfg, None, &TrainRunOptions::default()).unwrap();
        assert_eq!(out.updates_applied, 200);
        let first = out.epochs[1].train_loss.unwrap();
        let last = out.epochs.last().unwrap().train_loss.unwrap();
        assert!(
            last <= 0.5 * first,
            "loss {first} -> {last} did not halve over 200 updates"
        );
    }

    #[test]
    fn train_run_sign_scan_counts_updates() {
        let spec = small_spec();
        let data = fixture_dataset(&spec, 16, 3);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            sigma_init: 0.3,
            sigma_out: 0.3,
            seed: 5,
            ..TrainConfig::default()
        };
        let noise = NoiseModel {
            sigma_noise_ratio: 0.4,
            seed: 123,
        };
        let opts = TrainRunOptions {
            scan_sign_violations: true,
            ..TrainRunOptions::default()
        };
        let out = train_run(&spec, &data, &data, &cfg, Some(&noise), &opts).unwrap();
        let (scanned, violations) = out.sign_scan.unwrap();
        assert_eq!(scanned, 4); // 2 epochs x 2 batches
        assert_eq!(violations, 0);
    }

    #[test]
    fn batch_gradients_identical_across_worker_counts() {
        let spec = small_spec();
        let data = fixture_dataset(&spec, 70, 8); // spans multiple chunks
        let (w_in, w_out) = init_weights(&spec, 0.3, 0.3, 11).unwrap();
        let batch: Vec<usize> = (0..70).collect();
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                batch_forward_backward(&spec, &w_in.values, &w_out.values, &data, &batch, 10.0)
                    .unwrap()
            })
        };
        let (loss1, g1) = run_with(1);
        let (loss4, g4) = run_with(4);
        assert_eq!(loss1.to_bits(), loss4.to_bits());
        assert_eq!(g1.w_in.data(), g4.w_in.data());
        assert_eq!(g1.w_out.data(), g4.w_out.data());
    }

    #[test]
    fn evaluate_chance_and_perfect() {
        let spec = small_spec();
        // constant classifier: zero weights always tie -> class 0
        let (w_in0, w_out0) = (
            WeightMatrix::new(Matrix::zeros(12, 6), SignMask::all_excitatory(12)).unwrap(),
            WeightMatrix::new(Matrix::zeros(6, 3), SignMask::split(6, 4).unwrap()).unwrap(),
        );
        // balanced 3-class set
        let cfg = EncodingConfig::new(spec.horizon_steps, 1.0);
        let mut rasters = Vec::new();
        let mut labels = Vec::new();
        let mut rng = rng::rng_from(4);
        for i in 0..30 {
            let pixels: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..1.0)).collect();
            rasters.push(latency_encode(&ImageSample { pixels, label: 0 }, &cfg).unwrap());
            labels.push(i % 3);
        }
        let data = EncodedDataset::new(rasters, labels).unwrap();
        let report = evaluate(&spec, &w_in0, &w_out0, &data).unwrap();
        assert!((report.accuracy - 1.0 / 3.0).abs() < 1e-12);

        // per-class bookkeeping matches a hand count on a tiny fixture
        let hand = evaluate(&spec, &w_in0, &w_out0, &data).unwrap();
        let c0 = &hand.per_class[0];
        assert_eq!(c0.cases, 10);
        assert_eq!(c0.correct, 10);
        assert_eq!(hand.per_class[1].correct, 0);
    }

    #[test]
    fn evaluate_rejects_empty() {
        let spec = small_spec();
        let (w_in, w_out) = init_weights(&spec, 0.1, 0.1, 2).unwrap();
        let data = EncodedDataset::new(vec![], vec![]).unwrap();
        assert!(matches!(
            evaluate(&spec, &w_in, &w_out, &data),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.snnwt");
        let spec = small_spec();
        let (w_in, _) = init_weights(&spec, 0.1, 0.1, 2).unwrap();
        write_checkpoint(&path, 0, &w_in).unwrap();
        let (id, loaded) = read_checkpoint(&path).unwrap();
        assert_eq!(id, 0);
        assert_eq!(loaded.values.data(), w_in.values.data());
        assert_eq!(loaded.mask, w_in.mask);

        // known-byte fixture: 1x2 matrix, id 7
        let tiny = WeightMatrix::new(
            Matrix::from_vec(1, 2, vec![0.5, 0.25]),
            SignMask::all_excitatory(1),
        )
        .unwrap();
        let p2 = dir.path().join("tiny.snnwt");
        write_checkpoint(&p2, 7, &tiny).unwrap();
        let bytes = std::fs::read(&p2).unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"SNNWT001");
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.push(7);
        expect.extend_from_slice(&0.5f64.to_le_bytes());
        expect.extend_from_slice(&0.25f64.to_le_bytes());
        expect.push(1);
        assert_eq!(bytes, expect);

        // corrupt magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&p2, &bad).unwrap();
        assert!(matches!(read_checkpoint(&p2), Err(Error::Format { .. })));
    }

    #[test]
    fn smooth_gate_is_surrogate_antiderivative() {
        // numerical derivative of the gate equals the surrogate
        let beta = 7.0;
        let h = 1e-6;
        for &v in &[0.2, 0.9, 1.0, 1.1, 2.3] {
            let d = (relaxed::smooth_gate(v + h, beta, 1.0) - relaxed::smooth_gate(v - h, beta, 1.0))
                / (2.0 * h);
            assert!((d - surrogate_grad(v, beta, 1.0)).abs() < 1e-5, "at v={v}");
        }
        // continuous at the threshold
        let below = relaxed::smooth_gate(1.0 - 1e-12, 10.0, 1.0);
        let above = relaxed::smooth_gate(1.0 + 1e-12, 10.0, 1.0);
        assert!((below - above).abs() < 1e-9);
    }
}
