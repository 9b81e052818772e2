//! Dataset ingestion and spike encoding.
//!
//! Images become spike rasters through linear latency encoding: brighter
//! pixels fire earlier, each input unit fires at most once. Event data
//! (audio converted off-line to the canonical event file) is binned onto
//! the simulation grid.

use crate::error::{Error, Result};
use crate::net::SpikeRaster;
use crate::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Read;
use std::path::Path;

/// One grayscale image with normalized pixels in [0, 1].
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub pixels: Vec<f64>,
    pub label: usize,
}

/// Spike events for one recording: (unit, time in seconds), sorted by
/// time then unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeEventSet {
    pub events: Vec<(u32, f64)>,
    pub label: u32,
    pub n_units: u32,
    pub duration: f64,
}

impl SpikeEventSet {
    pub fn new(events: Vec<(u32, f64)>, label: u32, n_units: u32, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::Data(format!("non-positive duration {duration}")));
        }
        for (idx, &(unit, time)) in events.iter().enumerate() {
            if unit >= n_units {
                return Err(Error::Data(format!(
                    "record {idx}: unit {unit} out of range (n_units={n_units})"
                )));
            }
            if !(0.0..duration).contains(&time) {
                return Err(Error::Data(format!(
                    "record {idx}: time {time} outside [0, {duration})"
                )));
            }
            if idx > 0 {
                let prev = events[idx - 1];
                if (time, unit) < (prev.1, prev.0) {
                    return Err(Error::Data(format!(
                        "record {idx}: events not sorted by (time, unit)"
                    )));
                }
            }
        }
        Ok(SpikeEventSet {
            events,
            label,
            n_units,
            duration,
        })
    }

    /// Event list of a raster, with times at bin centers so that binning
    /// it back reproduces the raster exactly.
    pub fn from_raster(raster: &SpikeRaster, label: u32) -> Result<Self> {
        let dt_s = raster.dt() / 1000.0;
        let duration = raster.steps() as f64 * dt_s;
        let mut events = Vec::with_capacity(raster.total_spikes());
        for (t, u) in raster.pairs() {
            events.push((u, (t as f64 + 0.5) * dt_s));
        }
        SpikeEventSet::new(events, label, raster.units() as u32, duration)
    }
}

/// How images are mapped to spike times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    LatencyLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub horizon_steps: usize,
    pub dt: f64,
    /// Pixels must exceed this to spike at all. The default 0 means
    /// strictly positive pixels spike; zero-intensity pixels stay silent.
    pub intensity_threshold: f64,
    pub mode: EncodingMode,
}

impl EncodingConfig {
    pub fn new(horizon_steps: usize, dt: f64) -> Self {
        EncodingConfig {
            horizon_steps,
            dt,
            intensity_threshold: 0.0,
            mode: EncodingMode::LatencyLinear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps < 1 {
            return Err(Error::Parameter("horizon_steps must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Parameter(format!("dt must be positive ({})", self.dt)));
        }
        if !(0.0..1.0).contains(&self.intensity_threshold) {
            return Err(Error::Parameter(format!(
                "intensity_threshold {} outside [0, 1)",
                self.intensity_threshold
            )));
        }
        Ok(())
    }
}

/// Latency-encode one image: a pixel with intensity `x` above the
/// threshold fires once at step `floor((T-1) * (1-x))`.
pub fn latency_encode(sample: &ImageSample, cfg: &EncodingConfig) -> Result<SpikeRaster> {
    cfg.validate()?;
    let t_max = (cfg.horizon_steps - 1) as f64;
    let mut pairs = Vec::new();
    for (u, &x) in sample.pixels.iter().enumerate() {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Parameter(format!("pixel {u} = {x} outside [0, 1]")));
        }
        if x > cfg.intensity_threshold {
            let step = (t_max * (1.0 - x)).floor() as u32;
            pairs.push((step, u as u32));
        }
    }
    SpikeRaster::from_pairs(cfg.horizon_steps, sample.pixels.len(), cfg.dt, pairs)
}

/// Bin an event set onto the simulation grid: raster[t][u] = 1 iff at
/// least one event for unit u lands in [t*dt, (t+1)*dt). Events beyond
/// the horizon are dropped.
pub fn bin_events(ev: &SpikeEventSet, horizon_steps: usize, dt: f64) -> Result<SpikeRaster> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be positive ({dt})")));
    }
    let mut pairs = Vec::with_capacity(ev.events.len());
    for &(unit, time) in &ev.events {
        if unit >= ev.n_units {
            return Err(Error::Data(format!(
                "unit {unit} out of range (n_units={})",
                ev.n_units
            )));
        }
        let bin = (time * 1000.0 / dt).floor();
        if bin >= 0.0 && (bin as usize) < horizon_steps {
            pairs.push((bin as u32, unit));
        }
    }
    SpikeRaster::from_pairs(horizon_steps, ev.n_units as usize, dt, pairs)
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, format!("truncated header at byte {at}")))
}

/// Load IDX image/label files (the Fashion-MNIST distribution layout).
/// Pixel bytes are scaled by 1/255 into [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<ImageSample>> {
    let img = read_all(images_path)?;
    if be_u32(&img, 0, images_path)? != IDX_IMAGE_MAGIC {
        return Err(Error::format(images_path, "bad IDX image magic"));
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let pixel_count = rows * cols;
    let expected = 16 + count * pixel_count;
    if img.len() != expected {
        return Err(Error::format(
            images_path,
            format!("payload is {} bytes, header implies {expected}", img.len()),
        ));
    }

    let lab = read_all(labels_path)?;
    if be_u32(&lab, 0, labels_path)? != IDX_LABEL_MAGIC {
        return Err(Error::format(labels_path, "bad IDX label magic"));
    }
    let label_count = be_u32(&lab, 4, labels_path)? as usize;
    if lab.len() != 8 + label_count {
        return Err(Error::format(
            labels_path,
            format!("payload is {} bytes, header implies {}", lab.len(), 8 + label_count),
        ));
    }
    if label_count != count {
        return Err(Error::Data(format!(
            "{count} images but {label_count} labels"
        )));
    }

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * pixel_count;
        let pixels = img[start..start + pixel_count]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        samples.push(ImageSample {
            pixels,
            label: lab[8 + i] as usize,
        });
    }
    Ok(samples)
}

/// Write an IDX image/label pair (inverse of `load_idx`, for fixtures and
/// synthetic data).
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    samples: &[ImageSample],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let mut img = Vec::with_capacity(16 + samples.len() * rows * cols);
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut lab = Vec::with_capacity(8 + samples.len());
    lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    for s in samples {
        if s.pixels.len() != rows * cols {
            return Err(Error::Shape(format!(
                "sample has {} pixels, expected {}",
                s.pixels.len(),
                rows * cols
            )));
        }
        if s.label > u8::MAX as usize {
            return Err(Error::Data(format!("label {} does not fit a byte", s.label)));
        }
        for &p in &s.pixels {
            img.push((p.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        lab.push(s.label as u8);
    }
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

const EVENT_MAGIC: &[u8; 8] = b"SPKEVT01";

/// Load the canonical event file (little-endian, header `SPKEVT01`).
pub fn load_events(path: &Path) -> Result<Vec<SpikeEventSet>> {
    let buf = read_all(path)?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        let slice = buf
            .get(*at..*at + n)
            .ok_or_else(|| Error::format(path, format!("truncated at byte {at}", at = *at)))?;
        *at += n;
        Ok(slice)
    };
    if take(&mut at, 8)? != EVENT_MAGIC {
        return Err(Error::format(path, "bad event file magic"));
    }
    let le_u32 = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let le_u64 = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
    let le_f64 = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());

    let n_samples = le_u32(take(&mut at, 4)?) as usize;
    let mut sets = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let label = le_u32(take(&mut at, 4)?);
        let n_units = le_u32(take(&mut at, 4)?);
        let duration = le_f64(take(&mut at, 8)?);
        let n_events = le_u64(take(&mut at, 8)?) as usize;
        let mut events = Vec::with_capacity(n_events);
        for _ in 0..n_events {
            let unit = le_u32(take(&mut at, 4)?);
            let time = le_f64(take(&mut at, 8)?);
            events.push((unit, time));
        }
        sets.push(
            SpikeEventSet::new(events, label, n_units, duration)
                .map_err(|e| Error::Data(format!("sample {s}: {e}")))?,
        );
    }
    if at != buf.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after last sample", buf.len() - at),
        ));
    }
    Ok(sets)
}

/// Write the canonical event file.
pub fn write_events(path: &Path, sets: &[SpikeEventSet]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(EVENT_MAGIC);
    buf.extend_from_slice(&(sets.len() as u32).to_le_bytes());
    for set in sets {
        buf.extend_from_slice(&set.label.to_le_bytes());
        buf.extend_from_slice(&set.n_units.to_le_bytes());
        buf.extend_from_slice(&set.duration.to_le_bytes());
        buf.extend_from_slice(&(set.events.len() as u64).to_le_bytes());
        for &(unit, time) in &set.events {
            buf.extend_from_slice(&unit.to_le_bytes());
            buf.extend_from_slice(&time.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// A dataset already encoded into spike rasters, immutable and shareable
/// across parallel workers.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    pub rasters: Vec<SpikeRaster>,
    pub labels: Vec<usize>,
}

impl EncodedDataset {
    pub fn new(rasters: Vec<SpikeRaster>, labels: Vec<usize>) -> Result<Self> {
        if rasters.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rasters but {} labels",
                rasters.len(),
                labels.len()
            )));
        }
        Ok(EncodedDataset { rasters, labels })
    }

    /// Latency-encode a list of image samples.
    pub fn from_images(samples: &[ImageSample], cfg: &EncodingConfig) -> Result<Self> {
        let mut rasters = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            rasters.push(latency_encode(s, cfg)?);
            labels.push(s.label);
        }
        Ok(EncodedDataset { rasters, labels })
    }

    /// Bin a list of event sets onto the simulation grid.
    pub fn from_event_sets(sets: &[SpikeEventSet], horizon_steps: usize, dt: f64) -> Result<Self> {
        let mut rasters = Vec::with_capacity(sets.len());
        let mut labels = Vec::with_capacity(sets.len());
        for set in sets {
            rasters.push(bin_events(set, horizon_steps, dt)?);
            labels.push(set.label as usize);
        }
        Ok(EncodedDataset { rasters, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Raster shapes and labels must fit the network spec.
    pub fn check_against(&self, spec: &crate::net::NetworkSpec) -> Result<()> {
        for (i, raster) in self.rasters.iter().enumerate() {
            if raster.units() != spec.n_input || raster.steps() != spec.horizon_steps {
                return Err(Error::Shape(format!(
                    "case {i}: raster {}x{} does not fit spec {}x{}",
                    raster.steps(),
                    raster.units(),
                    spec.horizon_steps,
                    spec.n_input
                )));
            }
        }
        for (i, &label) in self.labels.iter().enumerate() {
            if label >= spec.n_output {
                return Err(Error::Data(format!(
                    "case {i}: label {label} out of range ({} outputs)",
                    spec.n_output
                )));
            }
        }
        Ok(())
    }

    /// Seeded subset of `count` cases drawn without replacement.
    pub fn seeded_subset(&self, count: usize, seed: u64) -> Result<Self> {
        if self.is_empty() {
            return Err(Error::Data("cannot subsample an empty dataset".into()));
        }
        let count = count.min(self.len());
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::rng_from(seed));
        order.truncate(count);
        let rasters = order.iter().map(|&i| self.rasters[i].clone()).collect();
        let labels = order.iter().map(|&i| self.labels[i]).collect();
        Ok(EncodedDataset { rasters, labels })
    }

    /// Keep only the cases whose label passes the filter, remapping labels
    /// through `remap` (used to carve class subsets out of a dataset).
    pub fn filter_classes(&self, keep: &[usize]) -> Result<Self> {
        let mut rasters = Vec::new();
        let mut labels = Vec::new();
        for (raster, &label) in self.rasters.iter().zip(&self.labels) {
            if let Some(new) = keep.iter().position(|&k| k == label) {
                rasters.push(raster.clone());
                labels.push(new);
            }
        }
        if rasters.is_empty() {
            return Err(Error::Data("class filter removed every case".into()));
        }
        Ok(EncodedDataset { rasters, labels })
    }
}

/// Seeded index batches for one epoch: every sample exactly once, final
/// partial batch retained.
pub fn make_batches(n_items: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 1 {
        return Err(Error::Parameter("batch_size must be >= 1".into()));
    }
    if n_items == 0 {
        return Err(Error::Data("cannot batch an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    order.shuffle(&mut rng::rng_from(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
