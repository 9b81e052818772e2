//! Spike-train analysis: Van Rossum distances by E/I pair category,
//! inter-spike intervals, firing frequencies, activity summaries, weight
//! distribution summaries, and the nonparametric tests used to compare
//! them.

pub mod special;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::SpikeRaster;
use serde::{Deserialize, Serialize};

/// Sorted spike times (ms) of one neuron in one case.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTimeList {
    times: Vec<f64>,
}

impl SpikeTimeList {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Data(format!(
                    "spike times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Data("spike times must be finite and non-negative".into()));
        }
        Ok(SpikeTimeList { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Hidden-layer pair category under the E:I partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairCategory {
    EE,
    EI,
    II,
}

impl PairCategory {
    /// Category of the unordered pair (i, j) when the first
    /// `n_excitatory` units are excitatory.
    pub fn of(i: usize, j: usize, n_excitatory: usize) -> PairCategory {
        match (i < n_excitatory, j < n_excitatory) {
            (true, true) => PairCategory::EE,
            (false, false) => PairCategory::II,
            _ => PairCategory::EI,
        }
    }
}

impl std::fmt::Display for PairCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairCategory::EE => "E-E",
            PairCategory::EI => "E-I",
            PairCategory::II => "I-I",
        })
    }
}

/// The three pairwise kernel sums of the closed form, computed in one
/// merged pass over both (sorted) trains. Decaying prefix accumulators
/// turn the quadratic double sums into O(na + nb) work:
/// `sum_{i,j} e^{-|ti-tj|/tau}` = n + 2 * sum of each spike's decayed
/// prefix, and the cross sum adds the other train's accumulator as each
/// spike is processed in time order.
fn kernel_sums_merged(a: &[f64], b: &[f64], tau: f64) -> (f64, f64, f64) {
    let mut acc_a = 0.0f64;
    let mut acc_b = 0.0f64;
    let mut off_a = 0.0f64;
    let mut off_b = 0.0f64;
    let mut cross = 0.0f64;
    let mut t_prev = f64::NEG_INFINITY;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() || j < b.len() {
        let take_a = match (a.get(i), b.get(j)) {
            (Some(&ta), Some(&tb)) => ta <= tb,
            (Some(_), None) => true,
            _ => false,
        };
        let t = if take_a { a[i] } else { b[j] };
        if t_prev.is_finite() && t > t_prev {
            let decay = (-(t - t_prev) / tau).exp();
            acc_a *= decay;
            acc_b *= decay;
        }
        if take_a {
            off_a += acc_a;
            cross += acc_b;
            acc_a += 1.0;
            i += 1;
        } else {
            off_b += acc_b;
            cross += acc_a;
            acc_b += 1.0;
            j += 1;
        }
        t_prev = t;
    }
    (
        a.len() as f64 + 2.0 * off_a,
        b.len() as f64 + 2.0 * off_b,
        cross,
    )
}

/// Van Rossum distance between two spike trains with a causal exponential
/// kernel of time constant `tau` (ms), in closed form:
///
/// ```text
/// dist^2 = 1/2 [ sum_{i,j in a} e^{-|di-dj|/tau}
///              + sum_{i,j in b} e^{-|..|/tau}
///              - 2 sum_{i in a, j in b} e^{-|..|/tau} ]
/// ```
///
/// evaluated by `kernel_sums_merged` in linear time.
pub fn van_rossum_distance(a: &SpikeTimeList, b: &SpikeTimeList, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be positive ({tau})")));
    }
    // lists are sorted by construction; re-check cheaply so raw misuse
    // surfaces as a data error rather than a wrong number
    for w in a.times.windows(2).chain(b.times.windows(2)) {
        if w[1] <= w[0] {
            return Err(Error::Data("unsorted spike train".into()));
        }
    }
    // metric identity holds exactly
    if a.times == b.times {
        return Ok(0.0);
    }
    // canonical operand order makes the result bitwise symmetric
    let (x, y) = if a.times <= b.times { (a, b) } else { (b, a) };
    let (sxx, syy, sxy) = kernel_sums_merged(&x.times, &y.times, tau);
    let d2 = 0.5 * (sxx + syy - 2.0 * sxy);
    Ok(d2.max(0.0).sqrt())
}

/// Mean distances per pair category. Categories without pairs are absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryDistances {
    pub ee: Option<f64>,
    pub ei: Option<f64>,
    pub ii: Option<f64>,
}

impl CategoryDistances {
    pub fn get(&self, cat: PairCategory) -> Option<f64> {
        match cat {
            PairCategory::EE => self.ee,
            PairCategory::EI => self.ei,
            PairCategory::II => self.ii,
        }
    }
}

/// Average Van Rossum distance over all unordered within-category hidden
/// pairs and over all cases. The balanced pair-by-case grid makes the
/// case-first and pair-first averaging orders identical.
pub fn mean_category_distances(
    cases: &[SpikeRaster],
    n_excitatory: usize,
    tau: f64,
) -> Result<CategoryDistances> {
    if cases.is_empty() {
        return Err(Error::Data("no cases for distance averaging".into()));
    }
    let n = cases[0].units();
    if n_excitatory > n {
        return Err(Error::Parameter(format!(
            "n_excitatory {n_excitatory} exceeds layer size {n}"
        )));
    }
    let mut sums = [0.0f64; 3];
    let mut pair_counts = [0usize; 3];
    for case in cases {
        if case.units() != n {
            return Err(Error::Shape("cases disagree on layer size".into()));
        }
        let per_unit = case.all_unit_times_ms();
        let trains: Vec<SpikeTimeList> = per_unit
            .into_iter()
            .map(|t| SpikeTimeList::new(t).expect("raster times are sorted"))
            .collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let cat = PairCategory::of(i, j, n_excitatory) as usize;
                sums[cat] += van_rossum_distance(&trains[i], &trains[j], tau)?;
                pair_counts[cat] += 1;
            }
        }
    }
    let mean = |cat: usize| {
        if pair_counts[cat] == 0 {
            None
        } else {
            Some(sums[cat] / pair_counts[cat] as f64)
        }
    };
    Ok(CategoryDistances {
        ee: mean(PairCategory::EE as usize),
        ei: mean(PairCategory::EI as usize),
        ii: mean(PairCategory::II as usize),
    })
}

/// Inter-spike intervals (ms) of every neuron in a raster, concatenated in
/// unit order. Neurons with fewer than two spikes contribute nothing.
pub fn isi_list(raster: &SpikeRaster) -> Vec<f64> {
    let mut out = Vec::new();
    for times in raster.all_unit_times_ms() {
        for w in times.windows(2) {
            out.push(w[1] - w[0]);
        }
    }
    out
}

/// Spike count over a duration (ms), expressed in Hz.
pub fn firing_frequency(spike_count: usize, duration_ms: f64) -> Result<f64> {
    if !(duration_ms > 0.0) {
        return Err(Error::Parameter(format!(
            "duration must be positive ({duration_ms} ms)"
        )));
    }
    Ok(spike_count as f64 / (duration_ms / 1000.0))
}

/// Spikes per case split by population, with per-class breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySummary {
    pub spikes_per_case_excitatory: f64,
    pub spikes_per_case_inhibitory: f64,
    /// 100 * E / (E + I); absent when the layer was silent.
    pub percent_excitatory: Option<f64>,
    pub per_class: Vec<ClassActivity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassActivity {
    pub class: usize,
    pub cases: usize,
    pub spikes_per_case_excitatory: f64,
    pub spikes_per_case_inhibitory: f64,
    pub percent_excitatory: Option<f64>,
}

fn percent_exc(e: f64, i: f64) -> Option<f64> {
    if e + i > 0.0 {
        Some(100.0 * e / (e + i))
    } else {
        None
    }
}

/// Mean hidden spikes per case split by E/I and by class.
pub fn activity_summary(
    rasters: &[SpikeRaster],
    labels: &[usize],
    n_excitatory: usize,
    n_classes: usize,
) -> Result<ActivitySummary> {
    if rasters.is_empty() {
        return Err(Error::Data("no cases for activity summary".into()));
    }
    if rasters.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rasters but {} labels",
            rasters.len(),
            labels.len()
        )));
    }
    let mut class_e = vec![0.0f64; n_classes];
    let mut class_i = vec![0.0f64; n_classes];
    let mut class_n = vec![0usize; n_classes];
    for (raster, &label) in rasters.iter().zip(labels) {
        if label >= n_classes {
            return Err(Error::Data(format!(
                "label {label} out of range (n_classes={n_classes})"
            )));
        }
        let counts = raster.counts_per_unit();
        let e: u32 = counts[..n_excitatory.min(counts.len())].iter().sum();
        let i: u32 = counts[n_excitatory.min(counts.len())..].iter().sum();
        class_e[label] += e as f64;
        class_i[label] += i as f64;
        class_n[label] += 1;
    }
    let total_cases = rasters.len() as f64;
    let total_e: f64 = class_e.iter().sum();
    let total_i: f64 = class_i.iter().sum();
    let per_class = (0..n_classes)
        .map(|c| {
            let n = class_n[c].max(1) as f64;
            ClassActivity {
                class: c,
                cases: class_n[c],
                spikes_per_case_excitatory: class_e[c] / n,
                spikes_per_case_inhibitory: class_i[c] / n,
                percent_excitatory: percent_exc(class_e[c], class_i[c]),
            }
        })
        .collect();
    Ok(ActivitySummary {
        spikes_per_case_excitatory: total_e / total_cases,
        spikes_per_case_inhibitory: total_i / total_cases,
        percent_excitatory: percent_exc(total_e, total_i),
        per_class,
    })
}

/// Statistic, p-value, and sample size of one hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kruskal-Wallis rank test across two or more groups: mid-ranks with the
/// standard tie-correction divisor, chi-square upper-tail p-value with
/// k-1 degrees of freedom. All values identical across all groups yields
/// H = 0, p = 1.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<StatTestResult> {
    if groups.len() < 2 {
        return Err(Error::Parameter("kruskal_wallis needs at least 2 groups".into()));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::Parameter("kruskal_wallis groups must be non-empty".into()));
    }
    let n_total: usize = groups.iter().map(Vec::len).sum();
    if n_total < 3 {
        return Err(Error::Parameter("kruskal_wallis needs total n >= 3".into()));
    }
    let mut all: Vec<(f64, usize)> = Vec::with_capacity(n_total);
    for (g, group) in groups.iter().enumerate() {
        for &v in group {
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite value in kruskal_wallis".into()));
            }
            all.push((v, g));
        }
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values"));

    // mid-ranks and tie correction
    let mut rank_sums = vec![0.0f64; groups.len()];
    let mut tie_term = 0.0f64;
    let mut idx = 0usize;
    while idx < all.len() {
        let mut end = idx + 1;
        while end < all.len() && all[end].0 == all[idx].0 {
            end += 1;
        }
        let t = (end - idx) as f64;
        let mid_rank = (idx + 1 + end) as f64 / 2.0; // average of ranks idx+1..=end
        for item in &all[idx..end] {
            rank_sums[item.1] += mid_rank;
        }
        tie_term += t * t * t - t;
        idx = end;
    }

    let n = n_total as f64;
    let mut h = 0.0;
    for (group, rs) in groups.iter().zip(&rank_sums) {
        h += rs * rs / group.len() as f64;
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    let correction = 1.0 - tie_term / (n * n * n - n);
    if correction <= 0.0 {
        // every observation identical: no group effect by definition
        return Ok(StatTestResult {
            statistic: 0.0,
            p_value: 1.0,
            n: n_total,
        });
    }
    h /= correction;
    let df = (groups.len() - 1) as f64;
    let p = special::chi2_sf(h, df)?;
    Ok(StatTestResult {
        statistic: h,
        p_value: p.clamp(0.0, 1.0),
        n: n_total,
    })
}

/// Welch's two-sample t-test with the Welch-Satterthwaite degrees of
/// freedom and a two-sided p-value.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Parameter("welch_t_test needs >= 2 values per sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in welch_t_test".into()));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64], m: f64| {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 <= 0.0 {
        return Err(Error::Data(
            "degenerate variance: both samples are constant".into(),
        ));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    let p = if t == 0.0 {
        1.0
    } else {
        special::student_t_two_sided(t, df)?
    };
    Ok(StatTestResult {
        statistic: t,
        p_value: p.clamp(0.0, 1.0),
        n: a.len() + b.len(),
    })
}

/// Histogram plus moments of a weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub mean: f64,
    pub std: f64,
    /// Fraction of entries exactly zero (weights clamped by bounding).
    pub fraction_zero: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
}

/// Fixed-bin histogram, mean, std, and zero fraction of a matrix.
pub fn weight_stats(weights: &Matrix, n_bins: usize) -> WeightStats {
    let data = weights.data();
    let n = data.len().max(1) as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let zero = data.iter().filter(|&&x| x == 0.0).count() as f64 / n;
    let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (min, max) = if data.is_empty() { (0.0, 0.0) } else { (min, max) };
    let n_bins = n_bins.max(1);
    let mut counts = vec![0u64; n_bins];
    if max > min {
        let width = (max - min) / n_bins as f64;
        for &x in data {
            let bin = (((x - min) / width) as usize).min(n_bins - 1);
            counts[bin] += 1;
        }
    } else {
        counts[0] = data.len() as u64;
    }
    WeightStats {
        mean,
        std: var.sqrt(),
        fraction_zero: zero,
        histogram: Histogram { min, max, counts },
    }
}

/// Independent quadrature reference for the Van Rossum distance, used as
/// a test oracle against the closed form. Composite trapezoid with
/// breakpoints at every spike time (the filtered signal jumps there) and
/// a grid step of tau/1000 inside each smooth segment; integration runs
/// to the last spike plus 20 tau.
pub mod oracle {
    use super::SpikeTimeList;

    pub fn van_rossum_quadrature(a: &SpikeTimeList, b: &SpikeTimeList, tau: f64) -> f64 {
        let mut breaks: Vec<f64> = a.times().iter().chain(b.times()).cloned().collect();
        breaks.push(0.0);
        breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
        breaks.dedup();
        let last = breaks.last().copied().unwrap_or(0.0);
        breaks.push(last + 20.0 * tau);

        let dt = tau / 1000.0;
        let mut integral = 0.0;
        for w in breaks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            // only spikes at or before the segment start are active inside
            // the segment, so the integrand is smooth here
            let active_a: Vec<f64> = a.times().iter().cloned().filter(|&s| s <= lo).collect();
            let active_b: Vec<f64> = b.times().iter().cloned().filter(|&s| s <= lo).collect();
            let diff = |t: f64| -> f64 {
                let ga: f64 = active_a.iter().map(|&s| (-(t - s) / tau).exp()).sum();
                let gb: f64 = active_b.iter().map(|&s| (-(t - s) / tau).exp()).sum();
                ga - gb
            };
            let steps = ((hi - lo) / dt).ceil().max(1.0) as usize;
            let h = (hi - lo) / steps as f64;
            let mut prev = diff(lo).powi(2);
            for k in 1..=steps {
                let d = diff(lo + k as f64 * h);
                let cur = d * d;
                integral += 0.5 * (prev + cur) * h;
                prev = cur;
            }
        }
        (integral / tau).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn stl(times: &[f64]) -> SpikeTimeList {
        SpikeTimeList::new(times.to_vec()).unwrap()
    }

    #[test]
    fn van_rossum_identity() {
        let a = stl(&[1.0, 4.0, 9.5]);
        assert_eq!(van_rossum_distance(&a, &a, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn van_rossum_single_vs_empty() {
        let a = stl(&[3.0]);
        let b = stl(&[]);
        let d = van_rossum_distance(&a, &b, 1.0).unwrap();
        assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn van_rossum_offset_pair() {
        // dist^2 = 1 - e^{-delta/tau}; delta = tau gives sqrt(1 - 1/e)
        let a = stl(&[2.0]);
        let b = stl(&[3.0]);
        let d = van_rossum_distance(&a, &b, 1.0).unwrap();
        assert!((d - 0.7950600976206501).abs() < 1e-12);
        // general delta
        let b = stl(&[4.5]);
        let d = van_rossum_distance(&a, &b, 1.0).unwrap();
        assert!((d - (1.0 - (-2.5f64).exp()).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn van_rossum_symmetry_is_bitwise() {
        let mut rng = crate::rng::rng_from(8);
        for _ in 0..200 {
            let mut ta: Vec<f64> = (0..rng.random_range(0..8))
                .map(|_| rng.random_range(0.0..50.0))
                .collect();
            let mut tb: Vec<f64> = (0..rng.random_range(0..8))
                .map(|_| rng.random_range(0.0..50.0))
                .collect();
            ta.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ta.dedup();
            tb.sort_by(|a, b| a.partial_cmp(b).unwrap());
            tb.dedup();
            let a = stl(&ta);
            let b = stl(&tb);
            let d1 = van_rossum_distance(&a, &b, 1.0).unwrap();
            let d2 = van_rossum_distance(&b, &a, 1.0).unwrap();
            assert_eq!(d1, d2);
        }
    }

    #[test]
    fn van_rossum_triangle_inequality() {
        let mut rng = crate::rng::rng_from(9);
        let mut random_train = |max_len: usize| {
            let mut t: Vec<f64> = (0..rng.random_range(0..max_len))
                .map(|_| rng.random_range(0.0..30.0))
                .collect();
            t.sort_by(|a, b| a.partial_cmp(b).unwrap());
            t.dedup();
            SpikeTimeList::new(t).unwrap()
        };
        for _ in 0..1000 {
            let (a, b, c) = (random_train(6), random_train(6), random_train(6));
            let dab = van_rossum_distance(&a, &b, 1.0).unwrap();
            let dbc = van_rossum_distance(&b, &c, 1.0).unwrap();
            let dac = van_rossum_distance(&a, &c, 1.0).unwrap();
            assert!(dac <= dab + dbc + 1e-12);
        }
    }

    #[test]
    fn van_rossum_zero_iff_equal() {
        let a = stl(&[1.0, 2.0]);
        let b = stl(&[1.0, 2.0001]);
        assert!(van_rossum_distance(&a, &b, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn van_rossum_matches_quadrature() {
        let mut rng = crate::rng::rng_from(10);
        fn gen_train(rng: &mut impl Rng, n: usize) -> SpikeTimeList {
            let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..60.0)).collect();
            t.sort_by(|a, b| a.partial_cmp(b).unwrap());
            t.dedup();
            SpikeTimeList::new(t).unwrap()
        }
        for _ in 0..25 {
            let na = rng.random_range(0..20);
            let a = gen_train(&mut rng, na);
            let nb = rng.random_range(0..20);
            let b = gen_train(&mut rng, nb);
            let closed = van_rossum_distance(&a, &b, 1.0).unwrap();
            let quad = oracle::van_rossum_quadrature(&a, &b, 1.0);
            assert!(
                (closed - quad).abs() < 1e-4,
                "closed {closed} vs quadrature {quad}"
            );
        }
    }

    #[test]
    fn van_rossum_rejects_bad_tau() {
        let a = stl(&[1.0]);
        assert!(van_rossum_distance(&a, &a, 0.0).is_err());
    }

    #[test]
    fn merged_kernel_sums_match_direct_double_sum() {
        // direct quadratic reference for the three pairwise sums
        fn direct(a: &[f64], b: &[f64], tau: f64) -> f64 {
            let mut acc = 0.0;
            for &ta in a {
                for &tb in b {
                    acc += (-(ta - tb).abs() / tau).exp();
                }
            }
            acc
        }
        fn gen(rng: &mut impl Rng, n: usize) -> Vec<f64> {
            let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..80.0)).collect();
            t.sort_by(|a, b| a.partial_cmp(b).unwrap());
            t.dedup();
            t
        }
        let mut rng = crate::rng::rng_from(14);
        for _ in 0..100 {
            let na = rng.random_range(0..30);
            let a = gen(&mut rng, na);
            let nb = rng.random_range(0..30);
            let b = gen(&mut rng, nb);
            let (saa, sbb, sab) = kernel_sums_merged(&a, &b, 1.3);
            assert!((saa - direct(&a, &a, 1.3)).abs() < 1e-9);
            assert!((sbb - direct(&b, &b, 1.3)).abs() < 1e-9);
            assert!((sab - direct(&a, &b, 1.3)).abs() < 1e-9);
        }
    }

    #[test]
    fn spike_time_list_rejects_unsorted() {
        assert!(SpikeTimeList::new(vec![2.0, 1.0]).is_err());
        assert!(SpikeTimeList::new(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn category_of_partition() {
        assert_eq!(PairCategory::of(0, 1, 2), PairCategory::EE);
        assert_eq!(PairCategory::of(0, 2, 2), PairCategory::EI);
        assert_eq!(PairCategory::of(2, 3, 2), PairCategory::II);
    }

    #[test]
    fn mean_category_distances_silent_is_zero() {
        let cases = vec![SpikeRaster::empty(20, 6, 1.0); 3];
        let d = mean_category_distances(&cases, 4, 1.0).unwrap();
        assert_eq!(d.ee, Some(0.0));
        assert_eq!(d.ei, Some(0.0));
        assert_eq!(d.ii, Some(0.0));
    }

    #[test]
    fn mean_category_distances_matches_bruteforce() {
        // 4 neurons (2 E, 2 I), 2 handcrafted cases
        let case1 =
            SpikeRaster::from_pairs(30, 4, 1.0, vec![(1, 0), (5, 1), (9, 2), (20, 3), (25, 0)])
                .unwrap();
        let case2 =
            SpikeRaster::from_pairs(30, 4, 1.0, vec![(2, 1), (2, 2), (14, 3)]).unwrap();
        let cases = [case1, case2];
        let got = mean_category_distances(&cases, 2, 1.0).unwrap();

        let mut sums = std::collections::HashMap::new();
        let mut counts = std::collections::HashMap::new();
        for case in &cases {
            let trains: Vec<SpikeTimeList> = (0..4)
                .map(|u| SpikeTimeList::new(case.unit_times_ms(u as u32)).unwrap())
                .collect();
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let cat = PairCategory::of(i, j, 2);
                    let d = van_rossum_distance(&trains[i], &trains[j], 1.0).unwrap();
                    *sums.entry(cat).or_insert(0.0) += d;
                    *counts.entry(cat).or_insert(0usize) += 1;
                }
            }
        }
        for cat in [PairCategory::EE, PairCategory::EI, PairCategory::II] {
            let expect = sums[&cat] / counts[&cat] as f64;
            assert!((got.get(cat).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_category_distances_absent_category() {
        let cases = vec![SpikeRaster::empty(10, 4, 1.0)];
        let d = mean_category_distances(&cases, 4, 1.0).unwrap();
        assert!(d.ee.is_some());
        assert_eq!(d.ei, None);
        assert_eq!(d.ii, None);
    }

    #[test]
    fn isi_examples() {
        let r = SpikeRaster::from_pairs(30, 2, 1.0, vec![(3, 0), (7, 0), (20, 0), (9, 1)]).unwrap();
        assert_eq!(isi_list(&r), vec![4.0, 13.0]);
        let r = SpikeRaster::from_pairs(30, 1, 1.0, vec![(9, 0)]).unwrap();
        assert!(isi_list(&r).is_empty());
    }

    #[test]
    fn isi_matches_hand_enumeration() {
        let r = SpikeRaster::from_pairs(
            50,
            3,
            1.0,
            vec![(0, 0), (10, 0), (11, 0), (5, 2), (45, 2)],
        )
        .unwrap();
        assert_eq!(isi_list(&r), vec![10.0, 1.0, 40.0]);
    }

    #[test]
    fn firing_frequency_examples() {
        assert_eq!(firing_frequency(0, 100.0).unwrap(), 0.0);
        assert_eq!(firing_frequency(5, 100.0).unwrap(), 50.0);
        assert!(firing_frequency(1, 0.0).is_err());
        // 1 spike over 100 ms spread across a 100-neuron layer
        let per_neuron = firing_frequency(1, 100.0).unwrap() / 100.0;
        assert!((per_neuron - 0.1).abs() < 1e-12);
    }

    #[test]
    fn activity_summary_cases() {
        // silent network
        let r = vec![SpikeRaster::empty(10, 4, 1.0)];
        let s = activity_summary(&r, &[0], 2, 2).unwrap();
        assert_eq!(s.spikes_per_case_excitatory, 0.0);
        assert_eq!(s.percent_excitatory, None);

        // all-excitatory activity
        let r = vec![SpikeRaster::from_pairs(10, 4, 1.0, vec![(0, 0), (1, 1)]).unwrap()];
        let s = activity_summary(&r, &[1], 2, 2).unwrap();
        assert_eq!(s.percent_excitatory, Some(100.0));

        // 3-case fixture, hand-tallied: E units {0,1}, I units {2,3}
        let r = vec![
            SpikeRaster::from_pairs(10, 4, 1.0, vec![(0, 0), (2, 2)]).unwrap(), // class 0: E1 I1
            SpikeRaster::from_pairs(10, 4, 1.0, vec![(1, 1), (3, 1), (4, 3)]).unwrap(), // class 0: E2 I1
            SpikeRaster::from_pairs(10, 4, 1.0, vec![(5, 2)]).unwrap(), // class 1: E0 I1
        ];
        let s = activity_summary(&r, &[0, 0, 1], 2, 2).unwrap();
        assert!((s.spikes_per_case_excitatory - 1.0).abs() < 1e-12); // (1+2+0)/3
        assert!((s.spikes_per_case_inhibitory - 1.0).abs() < 1e-12); // (1+1+1)/3
        assert!((s.percent_excitatory.unwrap() - 50.0).abs() < 1e-12);
        assert!((s.per_class[0].spikes_per_case_excitatory - 1.5).abs() < 1e-12);
        assert_eq!(s.per_class[1].percent_excitatory, Some(0.0));
        // population split must conserve totals
        let total = s.spikes_per_case_excitatory + s.spikes_per_case_inhibitory;
        assert!((total - 2.0).abs() < 1e-12); // 6 spikes / 3 cases
    }

    #[test]
    fn kruskal_wallis_frozen_fixtures() {
        // hand-derived: H = 12/(9*10) * (36/3 + 225/3 + 576/3) - 3*10 = 7.2
        let r = kruskal_wallis(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
        ])
        .unwrap();
        assert!((r.statistic - 7.2).abs() < 1e-6);
        assert!((r.p_value - 0.02732372244729252).abs() < 1e-6);
        assert_eq!(r.n, 9);

        // frozen from an independent statistics package (ties present)
        let r = kruskal_wallis(&[
            vec![1.2, 3.4, 3.4, 5.6, 7.8],
            vec![2.1, 3.4, 4.5, 6.7],
            vec![0.5, 1.2, 2.2, 3.3, 4.4, 5.5],
        ])
        .unwrap();
        assert!((r.statistic - 1.8536336336336396).abs() < 1e-6);
        assert!((r.p_value - 0.3958116481683501).abs() < 1e-6);

        // frozen: two clearly different groups
        let r = kruskal_wallis(&[
            vec![10.1, 11.3, 9.8, 12.0, 10.7, 11.1],
            vec![14.2, 15.1, 13.9, 16.0, 14.8],
        ])
        .unwrap();
        assert!((r.statistic - 7.5).abs() < 1e-6);
        assert!((r.p_value - 0.0061698993205441645).abs() < 1e-6);
    }

    #[test]
    fn kruskal_wallis_identical_groups() {
        let r = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        // fully degenerate: every value equal
        let r = kruskal_wallis(&[vec![5.0, 5.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    proptest! {
        #[test]
        fn kruskal_wallis_rank_invariance(
            a in proptest::collection::vec(-50.0f64..50.0, 3..10),
            b in proptest::collection::vec(-50.0f64..50.0, 3..10),
        ) {
            let base = kruskal_wallis(&[a.clone(), b.clone()]).unwrap();
            // strictly monotone map x -> x^3 + 2x preserves all ranks
            let f = |x: f64| x * x * x + 2.0 * x;
            let mapped = kruskal_wallis(&[
                a.iter().map(|&x| f(x)).collect(),
                b.iter().map(|&x| f(x)).collect(),
            ]).unwrap();
            prop_assert_eq!(base.statistic, mapped.statistic);
        }
    }

    #[test]
    fn welch_frozen_fixtures() {
        // frozen from an independent statistics package
        let r = welch_t_test(&[2.1, 2.5, 2.3, 2.7, 2.4], &[3.0, 3.4, 3.1, 3.6]).unwrap();
        assert!((r.statistic - (-5.141872122181113)).abs() < 1e-6);
        assert!((r.p_value - 0.002369580320191808).abs() < 1e-6);
        assert_eq!(r.n, 9);

        let r = welch_t_test(
            &[5.0, 5.1, 4.9, 5.2, 5.05, 4.95, 5.15, 4.85],
            &[5.0, 5.3, 4.7, 5.5, 4.6, 5.2, 4.8, 5.4],
        )
        .unwrap();
        assert!((r.statistic - (-0.29518964998891684)).abs() < 1e-6);
        assert!((r.p_value - 0.7746878534409452).abs() < 1e-6);

        // zero mean difference: shifted copies
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn welch_separated_means() {
        let a: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        let r = welch_t_test(&a, &b).unwrap();
        assert!(r.p_value < 0.001);
    }

    #[test]
    fn welch_degenerate_variance() {
        assert!(matches!(
            welch_t_test(&[1.0, 1.0, 1.0], &[2.0, 2.0]),
            Err(Error::Data(_))
        ));
        assert!(welch_t_test(&[1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn weight_stats_cases() {
        let m = Matrix::zeros(3, 4);
        let s = weight_stats(&m, 8);
        assert_eq!(s.fraction_zero, 1.0);
        assert_eq!(s.histogram.counts.iter().sum::<u64>(), 12);

        // handcrafted 6-entry matrix, 3 bins over [0, 6]
        let m = Matrix::from_vec(2, 3, vec![0.0, 1.0, 2.5, 3.0, 5.0, 6.0]);
        let s = weight_stats(&m, 3);
        assert_eq!(s.histogram.min, 0.0);
        assert_eq!(s.histogram.max, 6.0);
        assert_eq!(s.histogram.counts, vec![2, 2, 2]);
        assert!((s.mean - 17.5 / 6.0).abs() < 1e-12);
        assert!((s.fraction_zero - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn weight_stats_folded_normal_moment() {
        use rand_distr::{Distribution, Normal};
        let mut rng = crate::rng::rng_from(3);
        let sigma = 0.5;
        let normal = Normal::new(0.0, sigma).unwrap();
        let data: Vec<f64> = (0..100_000)
            .map(|_| {
                let x: f64 = normal.sample(&mut rng);
                x.abs()
            })
            .collect();
        let m = Matrix::from_vec(1, data.len(), data);
        let s = weight_stats(&m, 16);
        let expect_mean = sigma * (2.0 / std::f64::consts::PI).sqrt();
        assert!((s.mean - expect_mean).abs() / expect_mean < 0.05);
    }
}
