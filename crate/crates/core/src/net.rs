//! Time-stepped forward simulation of the three-layer network: spike
//! generator inputs, a LIF hidden layer, and a leaky-integrator readout.
//!
//! Discrete dynamics per step, with decay factors `a = exp(-dt/tau)`:
//!
//! ```text
//! I[t+1] = a_syn * I[t] + sum_i W_i * S_in_i[t]
//! V[t+1] = a_mem * Vc[t] + I[t]
//! S[t+1] = 1  where V[t+1] > threshold
//! ```
//!
//! `Vc` is the carried voltage: a unit that spiked at step `t` carries
//! `reset_potential` into the next update, so the voltage stored in the
//! trace for the following step equals the reset plus that step's
//! integration contribution. The trace keeps the pre-reset voltage, which
//! is the value the threshold test saw. The readout layer runs the same
//! current/voltage recurrences but never spikes and never resets.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

/// LIF time constants and firing parameters. Times are in ms; the
/// threshold/reset are nominal mV but treated as dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub threshold: f64,
    pub reset_potential: f64,
    pub dt: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            tau_mem: 10.0,
            tau_syn: 5.0,
            threshold: 1.0,
            reset_potential: 0.0,
            dt: 1.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_mem > 0.0) || !(self.tau_syn > 0.0) {
            return Err(Error::Parameter(format!(
                "time constants must be positive (tau_mem={}, tau_syn={})",
                self.tau_mem, self.tau_syn
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Parameter(format!("dt must be positive ({})", self.dt)));
        }
        if !(self.threshold > self.reset_potential) {
            return Err(Error::Parameter(format!(
                "threshold ({}) must exceed reset potential ({})",
                self.threshold, self.reset_potential
            )));
        }
        Ok(())
    }

    pub fn decay_mem(&self) -> Result<f64> {
        decay_factor(self.tau_mem, self.dt)
    }

    pub fn decay_syn(&self) -> Result<f64> {
        decay_factor(self.tau_syn, self.dt)
    }
}

/// Per-step decay factor `exp(-dt/tau)`, strictly inside (0, 1).
pub fn decay_factor(tau: f64, dt: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be positive ({tau})")));
    }
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be positive ({dt})")));
    }
    let f = (-dt / tau).exp();
    if f <= 0.0 || f >= 1.0 {
        return Err(Error::Numeric(format!(
            "decay factor exp(-{dt}/{tau}) = {f} left (0, 1)"
        )));
    }
    Ok(f)
}

/// Layer sizes, E:I partition of the hidden layer, and simulation horizon.
/// The first `n_excitatory` hidden units are excitatory, the rest inhibitory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub n_input: usize,
    pub n_hidden: usize,
    pub n_output: usize,
    pub n_excitatory: usize,
    pub n_inhibitory: usize,
    pub horizon_steps: usize,
    pub neuron_params: NeuronParams,
}

impl NetworkSpec {
    pub fn new(
        n_input: usize,
        n_hidden: usize,
        n_output: usize,
        n_excitatory: usize,
        horizon_steps: usize,
        neuron_params: NeuronParams,
    ) -> Result<Self> {
        if n_excitatory > n_hidden {
            return Err(Error::Parameter(format!(
                "n_excitatory ({n_excitatory}) exceeds n_hidden ({n_hidden})"
            )));
        }
        neuron_params.validate()?;
        let spec = NetworkSpec {
            n_input,
            n_hidden,
            n_output,
            n_excitatory,
            n_inhibitory: n_hidden - n_excitatory,
            horizon_steps,
            neuron_params,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_excitatory + self.n_inhibitory != self.n_hidden {
            return Err(Error::Parameter(format!(
                "E:I partition {}+{} != n_hidden {}",
                self.n_excitatory, self.n_inhibitory, self.n_hidden
            )));
        }
        if self.n_input == 0 || self.n_hidden == 0 || self.n_output == 0 || self.horizon_steps == 0
        {
            return Err(Error::Parameter("all network dimensions must be nonzero".into()));
        }
        self.neuron_params.validate()
    }

    /// 784-100-10 image preset, 100 steps of 1 ms, 80:20 unless changed.
    pub fn fashion_mnist(n_excitatory: usize) -> Result<Self> {
        NetworkSpec::new(784, 100, 10, n_excitatory, 100, NeuronParams::default())
    }

    /// 700-200-20 audio preset, 200 steps of 1 ms.
    pub fn shd(n_excitatory: usize) -> Result<Self> {
        NetworkSpec::new(700, 200, 20, n_excitatory, 200, NeuronParams::default())
    }

    /// Simulated duration in milliseconds.
    pub fn duration_ms(&self) -> f64 {
        self.horizon_steps as f64 * self.neuron_params.dt
    }
}

/// Binary spike tensor (steps x units) stored sparsely, one sorted unit
/// list per step. Entry semantics are {0, 1}: at most one spike per unit
/// per step by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeRaster {
    steps: usize,
    units: usize,
    dt: f64,
    offsets: Vec<u32>,
    unit_ids: Vec<u32>,
}

impl SpikeRaster {
    pub fn empty(steps: usize, units: usize, dt: f64) -> Self {
        SpikeRaster {
            steps,
            units,
            dt,
            offsets: vec![0; steps + 1],
            unit_ids: Vec::new(),
        }
    }

    /// Build from (step, unit) pairs; duplicates collapse to one spike.
    pub fn from_pairs(
        steps: usize,
        units: usize,
        dt: f64,
        mut pairs: Vec<(u32, u32)>,
    ) -> Result<Self> {
        for &(t, u) in &pairs {
            if t as usize >= steps {
                return Err(Error::Data(format!("spike step {t} out of range (steps={steps})")));
            }
            if u as usize >= units {
                return Err(Error::Data(format!("spike unit {u} out of range (units={units})")));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = Vec::with_capacity(steps + 1);
        let mut unit_ids = Vec::with_capacity(pairs.len());
        let mut cursor = 0usize;
        offsets.push(0);
        for t in 0..steps {
            while cursor < pairs.len() && pairs[cursor].0 as usize == t {
                unit_ids.push(pairs[cursor].1);
                cursor += 1;
            }
            offsets.push(unit_ids.len() as u32);
        }
        Ok(SpikeRaster {
            steps,
            units,
            dt,
            offsets,
            unit_ids,
        })
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn units(&self) -> usize {
        self.units
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Sorted unit ids spiking at step `t`.
    #[inline]
    pub fn step_units(&self, t: usize) -> &[u32] {
        &self.unit_ids[self.offsets[t] as usize..self.offsets[t + 1] as usize]
    }

    pub fn is_set(&self, t: usize, unit: u32) -> bool {
        self.step_units(t).binary_search(&unit).is_ok()
    }

    pub fn total_spikes(&self) -> usize {
        self.unit_ids.len()
    }

    /// Spikes of one unit as times in ms (step * dt), ascending.
    pub fn unit_times_ms(&self, unit: u32) -> Vec<f64> {
        let mut times = Vec::new();
        for t in 0..self.steps {
            if self.is_set(t, unit) {
                times.push(t as f64 * self.dt);
            }
        }
        times
    }

    /// Spike times in ms for every unit at once (single pass).
    pub fn all_unit_times_ms(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.units];
        for t in 0..self.steps {
            let time = t as f64 * self.dt;
            for &u in self.step_units(t) {
                out[u as usize].push(time);
            }
        }
        out
    }

    /// Spike count per unit.
    pub fn counts_per_unit(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.units];
        for &u in &self.unit_ids {
            counts[u as usize] += 1;
        }
        counts
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut dense = vec![vec![0u8; self.units]; self.steps];
        for t in 0..self.steps {
            for &u in self.step_units(t) {
                dense[t][u as usize] = 1;
            }
        }
        dense
    }

    /// All (step, unit) pairs in step order.
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.unit_ids.len());
        for t in 0..self.steps {
            for &u in self.step_units(t) {
                out.push((t as u32, u));
            }
        }
        out
    }
}

/// Per-timestep record of one simulated case.
///
/// `hidden_voltages` holds the pre-reset membrane value each step's
/// threshold test saw; `hidden_spikes` marks the units that crossed.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub hidden_currents: Matrix,
    pub hidden_voltages: Matrix,
    pub hidden_spikes: SpikeRaster,
    pub readout_voltages: Matrix,
}

/// One reference update of a spiking layer: dense, validating. Returns
/// (current', carried voltage', spikes). Spiking units carry the reset
/// potential; `spikes[i]` marks `a_mem*voltage[i] + current[i] > threshold`.
pub fn step_layer(
    current: &[f64],
    voltage: &[f64],
    prev_spikes_in: &[f64],
    weights: &Matrix,
    params: &NeuronParams,
) -> Result<(Vec<f64>, Vec<f64>, Vec<bool>)> {
    params.validate()?;
    let n = weights.cols();
    if current.len() != n || voltage.len() != n {
        return Err(Error::Shape(format!(
            "state length {}/{} does not match weight columns {}",
            current.len(),
            voltage.len(),
            n
        )));
    }
    if prev_spikes_in.len() != weights.rows() {
        return Err(Error::Shape(format!(
            "input length {} does not match weight rows {}",
            prev_spikes_in.len(),
            weights.rows()
        )));
    }
    for (k, &s) in prev_spikes_in.iter().enumerate() {
        if s != 0.0 && s != 1.0 {
            return Err(Error::Data(format!("input spike {k} = {s} is not binary")));
        }
    }
    if current.iter().chain(voltage.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite state entering step_layer".into()));
    }
    let a_mem = params.decay_mem()?;
    let a_syn = params.decay_syn()?;

    let mut next_current: Vec<f64> = current.iter().map(|c| a_syn * c).collect();
    for (k, &s) in prev_spikes_in.iter().enumerate() {
        if s == 1.0 {
            for (nc, w) in next_current.iter_mut().zip(weights.row(k)) {
                *nc += w;
            }
        }
    }
    let mut next_voltage = Vec::with_capacity(n);
    let mut spikes = Vec::with_capacity(n);
    for i in 0..n {
        let v_int = a_mem * voltage[i] + current[i];
        if !v_int.is_finite() {
            return Err(Error::Numeric(format!("non-finite voltage at unit {i}")));
        }
        let fired = v_int > params.threshold;
        spikes.push(fired);
        next_voltage.push(if fired { params.reset_potential } else { v_int });
    }
    Ok((next_current, next_voltage, spikes))
}

/// Simulate one case over the full horizon.
pub fn simulate(
    spec: &NetworkSpec,
    w_in: &Matrix,
    w_out: &Matrix,
    input_raster: &SpikeRaster,
) -> Result<SimulationTrace> {
    spec.validate()?;
    if input_raster.units() != spec.n_input {
        return Err(Error::Shape(format!(
            "input raster has {} units, spec expects {}",
            input_raster.units(),
            spec.n_input
        )));
    }
    if input_raster.steps() != spec.horizon_steps {
        return Err(Error::Shape(format!(
            "input raster has {} steps, spec expects {}",
            input_raster.steps(),
            spec.horizon_steps
        )));
    }
    if w_in.rows() != spec.n_input || w_in.cols() != spec.n_hidden {
        return Err(Error::Shape(format!(
            "w_in is {}x{}, spec expects {}x{}",
            w_in.rows(),
            w_in.cols(),
            spec.n_input,
            spec.n_hidden
        )));
    }
    if w_out.rows() != spec.n_hidden || w_out.cols() != spec.n_output {
        return Err(Error::Shape(format!(
            "w_out is {}x{}, spec expects {}x{}",
            w_out.rows(),
            w_out.cols(),
            spec.n_hidden,
            spec.n_output
        )));
    }

    let p = &spec.neuron_params;
    let a_mem = p.decay_mem()?;
    let a_syn = p.decay_syn()?;
    let (t_steps, n_h, n_o) = (spec.horizon_steps, spec.n_hidden, spec.n_output);

    let mut currents = Matrix::zeros(t_steps, n_h);
    let mut voltages = Matrix::zeros(t_steps, n_h);
    let mut readout = Matrix::zeros(t_steps, n_o);
    let mut spike_offsets: Vec<u32> = Vec::with_capacity(t_steps + 1);
    let mut spike_units: Vec<u32> = Vec::new();
    spike_offsets.push(0);

    let mut i_h = vec![0.0f64; n_h];
    let mut vint = vec![p.reset_potential; n_h];
    let mut spiked: Vec<u32> = Vec::new();
    let mut i_o = vec![0.0f64; n_o];
    let mut v_o = vec![0.0f64; n_o];

    for t in 0..t_steps {
        currents.row_mut(t).copy_from_slice(&i_h);
        voltages.row_mut(t).copy_from_slice(&vint);
        readout.row_mut(t).copy_from_slice(&v_o);
        spike_units.extend_from_slice(&spiked);
        spike_offsets.push(spike_units.len() as u32);

        if t + 1 == t_steps {
            break;
        }

        // readout advances on the hidden spikes recorded this step
        for j in 0..n_o {
            v_o[j] = a_mem * v_o[j] + i_o[j];
            i_o[j] *= a_syn;
        }
        for &i in &spiked {
            let row = w_out.row(i as usize);
            for (io, w) in i_o.iter_mut().zip(row) {
                *io += w;
            }
        }

        // hidden: carry reset for spiking units, then integrate
        for &i in &spiked {
            vint[i as usize] = p.reset_potential;
        }
        for i in 0..n_h {
            vint[i] = a_mem * vint[i] + i_h[i];
            i_h[i] *= a_syn;
        }
        for &u in input_raster.step_units(t) {
            let row = w_in.row(u as usize);
            for (ih, w) in i_h.iter_mut().zip(row) {
                *ih += w;
            }
        }
        spiked.clear();
        for (i, &v) in vint.iter().enumerate() {
            if v > p.threshold {
                spiked.push(i as u32);
            }
        }
    }

    let hidden_spikes = SpikeRaster {
        steps: t_steps,
        units: n_h,
        dt: p.dt,
        offsets: spike_offsets,
        unit_ids: spike_units,
    };
    Ok(SimulationTrace {
        hidden_currents: currents,
        hidden_voltages: voltages,
        hidden_spikes,
        readout_voltages: readout,
    })
}

/// Class decision: argmax over output units of the per-unit maximum
/// readout voltage over time; ties resolve to the lowest unit index.
pub fn classify(trace: &SimulationTrace) -> Result<usize> {
    let readout = &trace.readout_voltages;
    if readout.rows() == 0 || readout.cols() == 0 {
        return Err(Error::State("classify called on an empty trace".into()));
    }
    let n_o = readout.cols();
    let mut best_per_unit = vec![f64::NEG_INFINITY; n_o];
    for t in 0..readout.rows() {
        for (m, &v) in best_per_unit.iter_mut().zip(readout.row(t)) {
            if v > *m {
                *m = v;
            }
        }
    }
    let mut best = 0usize;
    for (j, &m) in best_per_unit.iter().enumerate() {
        if m > best_per_unit[best] {
            best = j;
        }
    }
    Ok(best)
}
