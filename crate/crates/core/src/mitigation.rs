//! Readout-error mitigation: an asymmetric per-bit channel, the
//! expectation-maximisation reconstruction over the blockaded subspace with
//! a Bernoulli background for out-of-subspace strings, and percentile
//! bootstrap intervals.

use crate::error::{Error, Result};
use crate::subspace::{format_bits, full_mask, parse_bits, SubspaceBasis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Correct-readout probabilities of `|0>` and `|1>`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutChannel {
    pub p00: f64,
    pub p11: f64,
}

impl ReadoutChannel {
    pub fn new(p00: f64, p11: f64) -> Result<Self> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(p00) || !ok(p11) {
            return Err(Error::InvalidArgument(format!("channel ({p00}, {p11}) outside [0, 1]")));
        }
        Ok(Self { p00, p11 })
    }

    pub fn perfect() -> Self {
        Self { p00: 1.0, p11: 1.0 }
    }

    /// Global drive only.
    pub fn standard() -> Self {
        Self { p00: 0.99, p11: 0.93 }
    }

    /// With local detuning in the program.
    pub fn with_local_detuning() -> Self {
        Self { p00: 0.90, p11: 0.93 }
    }

    /// `P(read z | true s)` for one bit.
    pub fn bit(&self, z: bool, s: bool) -> f64 {
        match (s, z) {
            (false, false) => self.p00,
            (false, true) => 1.0 - self.p00,
            (true, true) => self.p11,
            (true, false) => 1.0 - self.p11,
        }
    }
}

impl Default for ReadoutChannel {
    fn default() -> Self {
        Self::standard()
    }
}

/// `K(z|s) = prod_j P(z_j|s_j)` over `n` bits.
pub fn channel_likelihood(z: u64, s: u64, n: usize, channel: &ReadoutChannel) -> f64 {
    let m = full_mask(n);
    let (z, s) = (z & m, s & m);
    let c00 = (!z & !s & m).count_ones() as i32;
    let c01 = (z & !s).count_ones() as i32;
    let c11 = (z & s).count_ones() as i32;
    let c10 = (!z & s & m).count_ones() as i32;
    pow(channel.p00, c00) * pow(1.0 - channel.p00, c01) * pow(channel.p11, c11) * pow(1.0 - channel.p11, c10)
}

// 0^0 = 1
fn pow(x: f64, k: i32) -> f64 {
    if k == 0 {
        1.0
    } else {
        x.powi(k)
    }
}

/// Measured bitstrings with the channel and seed that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotSet {
    pub n: usize,
    pub shots: Vec<u64>,
    pub channel: ReadoutChannel,
    pub seed: u64,
}

impl ShotSet {
    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    /// Distinct strings with their counts, ascending.
    pub fn histogram(&self) -> BTreeMap<u64, usize> {
        let mut h = BTreeMap::new();
        for &s in &self.shots {
            *h.entry(s).or_insert(0) += 1;
        }
        h
    }

    /// Header `# n=.. shots=.. p00=.. p11=.. seed=..`, then one bitstring per line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# n={} shots={} p00={} p11={} seed={}\n",
            self.n,
            self.shots.len(),
            self.channel.p00,
            self.channel.p11,
            self.seed
        );
        for &s in &self.shots {
            let _ = writeln!(out, "{}", format_bits(s, self.n));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::InvalidArgument("empty shot file".into()))?;
        let header = header
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::InvalidArgument("shot file must start with a '#' header".into()))?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("malformed header field '{kv}'")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> {
            fields.get(k).copied().ok_or_else(|| Error::InvalidArgument(format!("header is missing '{k}'")))
        };
        let bad = |k: &str| Error::InvalidArgument(format!("header field '{k}' is not a number"));
        let n: usize = get("n")?.parse().map_err(|_| bad("n"))?;
        let count: usize = get("shots")?.parse().map_err(|_| bad("shots"))?;
        let p00: f64 = get("p00")?.parse().map_err(|_| bad("p00"))?;
        let p11: f64 = get("p11")?.parse().map_err(|_| bad("p11"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| bad("seed"))?;
        let mut shots = Vec::with_capacity(count);
        for (ln, l) in lines {
            let (z, len) = parse_bits(l.trim())
                .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", ln + 1)))?;
            if len != n {
                return Err(Error::InvalidArgument(format!("line {}: {len} bits, expected {n}", ln + 1)));
            }
            shots.push(z);
        }
        if shots.len() != count {
            return Err(Error::InvalidArgument(format!("header says {count} shots, found {}", shots.len())));
        }
        Ok(Self { n, shots, channel: ReadoutChannel::new(p00, p11)?, seed })
    }
}

/// Draws `shots` Z-basis samples from full-space probabilities `probs`
/// (index = bitstring) and passes each bit through the channel.
/// Deterministic for a given seed regardless of thread count.
pub fn sample_bitstrings(probs: &[f64], n: usize, shots: usize, channel: &ReadoutChannel, seed: u64) -> Result<ShotSet> {
    if shots == 0 {
        return Err(Error::InvalidArgument("need at least one shot".into()));
    }
    if probs.len() != 1usize << n {
        return Err(Error::InconsistentBasis { expected: 1 << n, got: probs.len() });
    }
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p.max(0.0);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::InvalidArgument("probabilities sum to zero".into()));
    }
    const CHUNK: usize = 4096;
    let chunks = shots.div_ceil(CHUNK);
    let out: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(shots - c * CHUNK);
            (0..len)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() * acc;
                    let s = cdf.partition_point(|&x| x <= u).min(probs.len() - 1) as u64;
                    let mut z = 0u64;
                    for j in 0..n {
                        let sj = (s >> j) & 1 == 1;
                        let keep = if sj { channel.p11 } else { channel.p00 };
                        let read = if rng.random::<f64>() < keep { sj } else { !sj };
                        z |= (read as u64) << j;
                    }
                    z
                })
                .collect()
        })
        .collect();
    Ok(ShotSet { n, shots: out.concat(), channel: *channel, seed })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Beta prior pseudo-counts on each background bit.
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, eps: 1e-8, max_iter: 10_000 }
    }
}

const FLOOR: f64 = 1e-300;
const CLIP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmModel {
    /// Probability of each subspace state.
    pub phi_v: Vec<f64>,
    /// Per-bit Bernoulli parameters of the out-of-subspace background.
    pub phi_perp: Vec<f64>,
    /// Out-of-subspace mass, `1 - sum(phi_v)`.
    pub out_of_subspace: f64,
    /// Log posterior after each iteration (entry 0 is the initial model).
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EmModel {
    pub fn probability_of(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&k| self.phi_v[k]).sum()
    }
}

/// Bernoulli-product probability of `s`.
fn bernoulli(s: u64, phi: &[f64]) -> f64 {
    phi.iter().enumerate().map(|(j, &p)| if (s >> j) & 1 == 1 { p } else { 1.0 - p }).product()
}

// sum_{s in {0,1}^n} K(z|s) Bern(s; phi), one factor per bit
fn full_space_likelihood(z: u64, channel: &ReadoutChannel, phi: &[f64]) -> f64 {
    phi.iter()
        .enumerate()
        .map(|(j, &p)| {
            let zj = (z >> j) & 1 == 1;
            channel.bit(zj, true) * p + channel.bit(zj, false) * (1.0 - p)
        })
        .product()
}

/// `sum_{s not in V} K(z|s) Bern(s; phi)` from the per-bit factorisation of
/// the full-space sum minus the in-subspace terms.
pub fn background_likelihood(z: u64, basis: &SubspaceBasis, channel: &ReadoutChannel, phi: &[f64]) -> f64 {
    let inside: f64 = basis
        .states()
        .iter()
        .map(|&s| channel_likelihood(z, s, basis.n(), channel) * bernoulli(s, phi))
        .sum();
    (full_space_likelihood(z, channel, phi) - inside).max(0.0)
}

/// Same sum by enumerating all `2^n` strings. Test oracle.
pub fn background_likelihood_brute(z: u64, basis: &SubspaceBasis, channel: &ReadoutChannel, phi: &[f64]) -> f64 {
    let n = basis.n();
    (0..1u64 << n)
        .filter(|&s| basis.index_of(s).is_none())
        .map(|s| channel_likelihood(z, s, n, channel) * bernoulli(s, phi))
        .sum()
}

// Cached likelihood matrices above this many entries are recomputed per row instead.
const CACHE_LIMIT: usize = 1 << 24;

// Distinct observed strings and their channel likelihoods against V.
// Counts are kept separately so bootstrap resamples reuse the matrix.
struct EmData<'a> {
    n: usize,
    basis: &'a SubspaceBasis,
    channel: ReadoutChannel,
    strings: Vec<u64>,
    lik: Option<Vec<f64>>,
}

impl<'a> EmData<'a> {
    fn new(strings: Vec<u64>, basis: &'a SubspaceBasis, channel: ReadoutChannel) -> Self {
        let n = basis.n();
        let v = basis.len();
        let lik = (strings.len() * v <= CACHE_LIMIT).then(|| {
            let mut m = Vec::with_capacity(strings.len() * v);
            for &z in &strings {
                m.extend(basis.states().iter().map(|&s| channel_likelihood(z, s, n, &channel)));
            }
            m
        });
        Self { n, basis, channel, strings, lik }
    }

    fn row<'b>(&'b self, i: usize, buf: &'b mut Vec<f64>) -> &'b [f64] {
        let v = self.basis.len();
        match &self.lik {
            Some(m) => &m[i * v..(i + 1) * v],
            None => {
                buf.clear();
                let z = self.strings[i];
                buf.extend(self.basis.states().iter().map(|&s| channel_likelihood(z, s, self.n, &self.channel)));
                buf
            }
        }
    }
}

struct Estep {
    /// Summed responsibilities per subspace state.
    r_v: Vec<f64>,
    /// Responsibility of the background per distinct string.
    rho_perp: Vec<f64>,
    log_lik: f64,
}

// Model: m_z = sum_k phi_k K(z|s_k) + pi_perp L_perp(z) / Z_perp,
// pi_perp = 1 - sum(phi_v), Z_perp = 1 - sum_{s in V} Bern(s).
fn e_step(data: &EmData, counts: &[f64], phi_v: &[f64], phi_perp: &[f64]) -> Estep {
    let states = data.basis.states();
    let pi_perp = (1.0 - phi_v.iter().sum::<f64>()).max(0.0);
    let bern: Vec<f64> = states.iter().map(|&s| bernoulli(s, phi_perp)).collect();
    let z_perp = (1.0 - bern.iter().sum::<f64>()).max(FLOOR);
    let mut r_v = vec![0.0; states.len()];
    let mut rho_perp = vec![0.0; data.strings.len()];
    let mut log_lik = 0.0;
    let mut buf = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let lk = data.row(i, &mut buf);
        let mut inside_v = 0.0;
        let mut inside_bg = 0.0;
        for ((l, p), b) in lk.iter().zip(phi_v).zip(&bern) {
            inside_v += l * p;
            inside_bg += l * b;
        }
        let lperp = if pi_perp > 0.0 {
            let bg = (full_space_likelihood(data.strings[i], &data.channel, phi_perp) - inside_bg).max(0.0);
            pi_perp * bg / z_perp
        } else {
            0.0
        };
        let m = (inside_v + lperp).max(FLOOR);
        let w = c / m;
        for ((r, l), p) in r_v.iter_mut().zip(lk).zip(phi_v) {
            *r += w * l * p;
        }
        rho_perp[i] = lperp / m;
        log_lik += c * m.ln();
    }
    Estep { r_v, rho_perp, log_lik }
}

fn log_prior(phi_perp: &[f64], opts: &EmOptions) -> f64 {
    phi_perp.iter().map(|&p| (opts.alpha - 1.0) * p.ln() + (opts.beta - 1.0) * (1.0 - p).ln()).sum()
}

fn m_step_perp(data: &EmData, counts: &[f64], rho_perp: &[f64], phi_perp: &[f64], opts: &EmOptions) -> Vec<f64> {
    let ch = &data.channel;
    let w: f64 = rho_perp.iter().zip(counts).map(|(r, c)| r * c).sum();
    (0..data.n)
        .map(|j| {
            let p = phi_perp[j];
            let mut num = 0.0;
            for ((&z, &c), &r) in data.strings.iter().zip(counts).zip(rho_perp) {
                if c == 0.0 {
                    continue;
                }
                let zj = (z >> j) & 1 == 1;
                let a = p * ch.bit(zj, true);
                let b = (1.0 - p) * ch.bit(zj, false);
                let t = if a + b > 0.0 { a / (a + b) } else { p };
                num += c * r * t;
            }
            ((num + opts.alpha) / (w + opts.alpha + opts.beta)).clamp(CLIP, 1.0 - CLIP)
        })
        .collect()
}

/// Expectation-maximisation over the subspace plus background.
///
/// The subspace weights get the exact M-step. The background bits get the
/// closed-form Beta-prior update; if that update would lower the log
/// posterior it is backtracked towards the previous value, so the trace is
/// non-decreasing.
pub fn em_reconstruct(shots: &ShotSet, basis: &SubspaceBasis, opts: &EmOptions) -> Result<EmModel> {
    check_shots(shots, basis)?;
    let hist = shots.histogram();
    let data = EmData::new(hist.keys().copied().collect(), basis, shots.channel);
    let counts: Vec<f64> = hist.values().map(|&c| c as f64).collect();
    Ok(em_on(&data, &counts, opts, None))
}

/// EM continued from an earlier model instead of the uniform start.
pub fn em_reconstruct_from(shots: &ShotSet, basis: &SubspaceBasis, opts: &EmOptions, start: &EmModel) -> Result<EmModel> {
    check_shots(shots, basis)?;
    if start.phi_v.len() != basis.len() || start.phi_perp.len() != basis.n() {
        return Err(Error::InconsistentBasis { expected: basis.len(), got: start.phi_v.len() });
    }
    let hist = shots.histogram();
    let data = EmData::new(hist.keys().copied().collect(), basis, shots.channel);
    let counts: Vec<f64> = hist.values().map(|&c| c as f64).collect();
    Ok(em_on(&data, &counts, opts, Some(start)))
}

/// Posterior responsibilities of each subspace state and of the background
/// for one observed string under `model`.
pub fn responsibilities(z: u64, basis: &SubspaceBasis, channel: &ReadoutChannel, model: &EmModel) -> (Vec<f64>, f64) {
    let pi_perp = (1.0 - model.phi_v.iter().sum::<f64>()).max(0.0);
    let z_perp = (1.0 - basis.states().iter().map(|&s| bernoulli(s, &model.phi_perp)).sum::<f64>()).max(FLOOR);
    let parts: Vec<f64> = basis
        .states()
        .iter()
        .zip(&model.phi_v)
        .map(|(&s, p)| p * channel_likelihood(z, s, basis.n(), channel))
        .collect();
    let bg = pi_perp * background_likelihood(z, basis, channel, &model.phi_perp) / z_perp;
    let m = (parts.iter().sum::<f64>() + bg).max(FLOOR);
    (parts.iter().map(|p| p / m).collect(), bg / m)
}

fn check_shots(shots: &ShotSet, basis: &SubspaceBasis) -> Result<()> {
    if shots.is_empty() {
        return Err(Error::InvalidArgument("no shots".into()));
    }
    if shots.n != basis.n() {
        return Err(Error::InconsistentBasis { expected: basis.n(), got: shots.n });
    }
    Ok(())
}

fn em_on(data: &EmData, counts: &[f64], opts: &EmOptions, start: Option<&EmModel>) -> EmModel {
    let v = data.basis.len();
    let total: f64 = counts.iter().sum();
    let (mut phi_v, mut phi_perp) = match start {
        Some(m) => (m.phi_v.clone(), m.phi_perp.clone()),
        // the background starts as one more uniform component
        None => (vec![1.0 / (v + 1) as f64; v], vec![0.5; data.n]),
    };
    let objective = |e: &Estep, phi: &[f64]| e.log_lik + log_prior(phi, opts);
    let mut e = e_step(data, counts, &phi_v, &phi_perp);
    let mut trace = vec![objective(&e, &phi_perp)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let new_v: Vec<f64> = e.r_v.iter().map(|r| r / total).collect();
        let target = m_step_perp(data, counts, &e.rho_perp, &phi_perp, opts);
        let base = trace[trace.len() - 1];
        let mut step = 1.0;
        let mut accepted = None;
        while step >= 0.06 {
            let cand: Vec<f64> = phi_perp.iter().zip(&target).map(|(o, t)| o + step * (t - o)).collect();
            let ce = e_step(data, counts, &new_v, &cand);
            if objective(&ce, &cand) >= base {
                accepted = Some((cand, ce));
                break;
            }
            step *= 0.5;
        }
        let (cand, ce) = match accepted {
            Some(a) => a,
            None => {
                let ce = e_step(data, counts, &new_v, &phi_perp);
                (phi_perp.clone(), ce)
            }
        };
        let dv: f64 = new_v.iter().zip(&phi_v).map(|(a, b)| (a - b).abs()).sum();
        let dp: f64 = cand.iter().zip(&phi_perp).map(|(a, b)| (a - b).abs()).sum::<f64>() / data.n as f64;
        phi_v = new_v;
        phi_perp = cand;
        e = ce;
        trace.push(objective(&e, &phi_perp));
        if dv + dp < opts.eps {
            converged = true;
            break;
        }
    }
    let out_of_subspace = (1.0 - phi_v.iter().sum::<f64>()).max(0.0);
    EmModel { phi_v, phi_perp, out_of_subspace, log_likelihood: trace, iterations, converged }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { resamples: 1000, level: 0.95, seed: 0 }
    }
}

/// Percentile bootstrap of the EM target probability. Returns `(low, point, high)`.
pub fn bootstrap_ci(
    shots: &ShotSet,
    basis: &SubspaceBasis,
    target: &[usize],
    em: &EmOptions,
    boot: &BootstrapOptions,
) -> Result<(f64, f64, f64)> {
    let point = em_reconstruct(shots, basis, em)?.probability_of(target);
    let (low, high) = bootstrap_interval(shots, basis, target, em, boot)?;
    Ok((low, point, high))
}

fn bootstrap_interval(
    shots: &ShotSet,
    basis: &SubspaceBasis,
    target: &[usize],
    em: &EmOptions,
    boot: &BootstrapOptions,
) -> Result<(f64, f64)> {
    if boot.resamples == 0 {
        return Err(Error::InvalidArgument("need at least one resample".into()));
    }
    if !(boot.level > 0.0 && boot.level < 1.0) {
        return Err(Error::InvalidArgument("level must be in (0, 1)".into()));
    }
    check_shots(shots, basis)?;
    let hist = shots.histogram();
    let data = EmData::new(hist.keys().copied().collect(), basis, shots.channel);
    // shot -> distinct-string slot
    let slots: Vec<usize> = {
        let keys: Vec<u64> = hist.keys().copied().collect();
        shots.shots.iter().map(|s| keys.binary_search(s).unwrap_or(0)).collect()
    };
    let n_shots = shots.len();
    let full: Vec<f64> = hist.values().map(|&c| c as f64).collect();
    // replicates start from the full-sample fit, kept away from the boundary
    let mut start = em_on(&data, &full, em, None);
    let floor = 1e-3 / (basis.len() + 1) as f64;
    let mass: f64 = start.phi_v.iter().map(|p| p.max(floor)).sum::<f64>() + start.out_of_subspace.max(floor);
    start.phi_v.iter_mut().for_each(|p| *p = p.max(floor) / mass);
    let estimates: Vec<f64> = (0..boot.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(boot.seed);
            rng.set_stream(b as u64);
            let mut counts = vec![0.0; data.strings.len()];
            for _ in 0..n_shots {
                counts[slots[rng.random_range(0..n_shots)]] += 1.0;
            }
            em_on(&data, &counts, em, Some(&start)).probability_of(target)
        })
        .collect();
    let mut est = estimates;
    est.sort_by(|a, b| a.total_cmp(b));
    let tail = 0.5 * (1.0 - boot.level);
    Ok((quantile(&est, tail), quantile(&est, 1.0 - tail)))
}

// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    /// Bitstring label to probability, subspace states only.
    pub probabilities: BTreeMap<String, f64>,
    pub out_of_subspace_mass: f64,
    pub target: f64,
    pub ci: [f64; 2],
    pub iterations: usize,
    pub converged: bool,
}

/// EM point estimate plus bootstrap interval for `target`.
pub fn reconstruct(
    shots: &ShotSet,
    basis: &SubspaceBasis,
    target: &[usize],
    em: &EmOptions,
    boot: &BootstrapOptions,
) -> Result<ReconstructionResult> {
    let model = em_reconstruct(shots, basis, em)?;
    let (low, high) = bootstrap_interval(shots, basis, target, em, boot)?;
    let probabilities = basis
        .states()
        .iter()
        .zip(&model.phi_v)
        .map(|(&s, &p)| (format_bits(s, basis.n()), p))
        .collect();
    Ok(ReconstructionResult {
        probabilities,
        out_of_subspace_mass: model.out_of_subspace,
        target: model.probability_of(target),
        ci: [low, high],
        iterations: model.iterations,
        converged: model.converged,
    })
}

/// Fraction of shots equal to one of `targets`.
pub fn naive_fraction(shots: &ShotSet, targets: &[u64]) -> f64 {
    let hits = shots.shots.iter().filter(|s| targets.contains(s)).count();
    hits as f64 / shots.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::ConstraintGraph;

    #[test]
    fn likelihood_examples() {
        let p = ReadoutChannel::perfect();
        assert_eq!(channel_likelihood(0b101, 0b101, 3, &p), 1.0);
        assert_eq!(channel_likelihood(0b100, 0b101, 3, &p), 0.0);
        let ch = ReadoutChannel::standard();
        assert!((channel_likelihood(1, 1, 1, &ch) - 0.93).abs() < 1e-15);
        assert!((channel_likelihood(0, 1, 1, &ch) - 0.07).abs() < 1e-15);
        assert!((channel_likelihood(0b00, 0b11, 2, &ch) - 0.0049).abs() < 1e-15);
    }

    #[test]
    fn background_factorisation_matches_enumeration() {
        let ch = ReadoutChannel::new(0.9, 0.93).unwrap();
        for n in [3, 6, 9, 10] {
            let b = SubspaceBasis::ring(n).unwrap();
            let phi: Vec<f64> = (0..n).map(|j| 0.1 + 0.8 * j as f64 / n as f64).collect();
            for z in [0u64, 1, 0b11, (1 << n) - 1, 0b1011 & ((1 << n) - 1)] {
                let f = background_likelihood(z, &b, &ch, &phi);
                let g = background_likelihood_brute(z, &b, &ch, &phi);
                assert!((f - g).abs() < 1e-10 * g.max(1e-300), "n={n} z={z}: {f} vs {g}");
            }
        }
    }

    #[test]
    fn perfect_channel_gives_empirical_frequencies() {
        let b = SubspaceBasis::ring(5).unwrap();
        let shots = vec![0b00101, 0b00101, 0b00000, 0b01001, 0b00101, 0b00000];
        let set = ShotSet { n: 5, shots, channel: ReadoutChannel::perfect(), seed: 0 };
        let m = em_reconstruct(&set, &b, &EmOptions::default()).unwrap();
        let f = |z: u64| m.phi_v[b.index_of(z).unwrap()];
        assert!((f(0b00101) - 0.5).abs() < 1e-10);
        assert!((f(0b00000) - 1.0 / 3.0).abs() < 1e-10);
        assert!((f(0b01001) - 1.0 / 6.0).abs() < 1e-10);
        assert!(m.phi_perp.iter().all(|&p| (p - 0.5).abs() < 1e-10));
        assert!(m.converged);
    }

    #[test]
    fn identical_shots_give_zero_width_interval() {
        let b = SubspaceBasis::ring(5).unwrap();
        let set = ShotSet { n: 5, shots: vec![0b00101; 50], channel: ReadoutChannel::perfect(), seed: 0 };
        let k = b.index_of(0b00101).unwrap();
        let boot = BootstrapOptions { resamples: 100, ..Default::default() };
        let (lo, pt, hi) = bootstrap_ci(&set, &b, &[k], &EmOptions::default(), &boot).unwrap();
        assert!((lo - 1.0).abs() < 1e-10 && (pt - 1.0).abs() < 1e-10 && (hi - 1.0).abs() < 1e-10);
        let one = BootstrapOptions { resamples: 1, ..Default::default() };
        let (lo, _, hi) = bootstrap_ci(&set, &b, &[k], &EmOptions::default(), &one).unwrap();
        assert_eq!(lo, hi);
    }

    #[test]
    fn shot_file_round_trip() {
        let set = ShotSet {
            n: 4,
            shots: vec![0b0101, 0b0000, 0b1001],
            channel: ReadoutChannel::new(0.9, 0.93).unwrap(),
            seed: 17,
        };
        let text = set.to_text();
        assert!(text.starts_with("# n=4 shots=3 p00=0.9 p11=0.93 seed=17\n0101\n"));
        assert_eq!(ShotSet::from_text(&text).unwrap(), set);
        assert!(ShotSet::from_text("0101\n").is_err());
        assert!(ShotSet::from_text("# n=4 shots=2 p00=1 p11=1 seed=0\n0101\n").is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_perfect_basis_states_repeat() {
        let n = 3;
        let mut probs = vec![0.0; 8];
        probs[0b101] = 1.0;
        let s = sample_bitstrings(&probs, n, 10_000, &ReadoutChannel::perfect(), 3).unwrap();
        assert!(s.shots.iter().all(|&z| z == 0b101));
        let uni = vec![1.0 / 8.0; 8];
        let a = sample_bitstrings(&uni, n, 9000, &ReadoutChannel::perfect(), 5).unwrap();
        let b = sample_bitstrings(&uni, n, 9000, &ReadoutChannel::perfect(), 5).unwrap();
        assert_eq!(a, b);
        for (_, c) in a.histogram() {
            // 1125 expected, sd ~ 31
            assert!((c as f64 - 1125.0).abs() < 160.0);
        }
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        let g = ConstraintGraph::ring(6).unwrap();
        let b = SubspaceBasis::enumerate(&g);
        let mut probs = vec![0.0; 64];
        for (k, &s) in b.states().iter().enumerate() {
            probs[s as usize] = (k + 1) as f64;
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let ch = ReadoutChannel::new(0.9, 0.93).unwrap();
        let shots = sample_bitstrings(&probs, 6, 1000, &ch, 11).unwrap();
        let m = em_reconstruct(&shots, &b, &EmOptions::default()).unwrap();
        assert!(m.converged);
        assert!(m.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!((m.phi_v.iter().sum::<f64>() + m.out_of_subspace - 1.0).abs() < 1e-12);
    }
}
