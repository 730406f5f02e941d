//! Bracelet targets: the walk restricted to the dihedral-symmetric sector,
//! peak scans, depth plans, phase-vector optimisation and the spectral
//! resolvability analysis of the accumulated walk time.

use crate::ctqw::{AnsatzSchedule, DenseEigen, Layer, PhasorKind, C64};
use crate::error::{Error, Result};
use crate::optim::{trust_region_box, TrustRegionOptions};
use crate::subspace::{dihedral_orbit, orbit_partition, DihedralOrbit, SubspaceBasis};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

/// Shortest walk fragment the hardware can realise, in units of 1/J.
pub const TAU_MIN_HW: f64 = 0.4;

/// The walk generator in the basis of bracelet states `|[z]>`.
#[derive(Clone, Debug)]
pub struct BraceletSector {
    pub n: usize,
    pub orbits: Vec<DihedralOrbit>,
    /// `<[a]|G|[b]>`.
    pub generator: DMatrix<f64>,
    /// Hamming weight of each orbit.
    pub weights: Vec<f64>,
    /// Orbit of `|0...0>`.
    pub start: usize,
    eigen: DenseEigen,
}

impl BraceletSector {
    /// Reduced generator from orbit adjacency: `<[b]|G|[a]> = d_ba sqrt(|b|/|a|)`
    /// where `d_ba` counts the neighbours of one member of `b` lying in `a`.
    pub fn new(basis: &SubspaceBasis) -> Result<Self> {
        let n = basis.n();
        let ring_edges = (0..n).all(|i| basis.graph().neighbor_mask(i) == ring_mask(i, n));
        if !ring_edges {
            return Err(Error::InvalidArgument("bracelet sectors need a ring constraint graph".into()));
        }
        let orbits = orbit_partition(basis);
        let mut which: HashMap<u64, usize> = HashMap::new();
        for (k, o) in orbits.iter().enumerate() {
            for &m in &o.members {
                which.insert(m, k);
            }
        }
        let dim = orbits.len();
        let mut generator = DMatrix::zeros(dim, dim);
        for (b, ob) in orbits.iter().enumerate() {
            let r = ob.representative;
            for i in 0..n {
                let v = r ^ (1u64 << i);
                if let Some(&a) = which.get(&v) {
                    let size_a = orbits[a].size() as f64;
                    generator[(b, a)] += (ob.size() as f64 / size_a).sqrt();
                }
            }
        }
        let weights = orbits.iter().map(|o| o.weight() as f64).collect();
        let start = which[&0];
        let eigen = DenseEigen::new(generator.clone());
        Ok(Self { n, orbits, generator, weights, start, eigen })
    }

    pub fn dim(&self) -> usize {
        self.orbits.len()
    }

    pub fn eigen(&self) -> &DenseEigen {
        &self.eigen
    }

    pub fn orbit_index(&self, z: u64) -> Result<usize> {
        let rep = dihedral_orbit(z, self.n).representative;
        self.orbits
            .iter()
            .position(|o| o.representative == rep)
            .ok_or_else(|| Error::NotInSubspace(format!("orbit of {z:#b} is not in the subspace")))
    }

    pub fn vacuum(&self) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); self.dim()];
        v[self.start] = C64::new(1.0, 0.0);
        v
    }

    pub fn evolve(&self, psi: &[C64], tau: f64) -> Vec<C64> {
        self.eigen.evolve(psi, tau)
    }

    /// `e^{-i gamma n}` on the sector.
    pub fn apply_phase(&self, psi: &mut [C64], gamma: f64) {
        for (a, &w) in psi.iter_mut().zip(&self.weights) {
            *a *= C64::from_polar(1.0, -gamma * w);
        }
    }

    /// Embeds a sector vector in the full subspace.
    pub fn lift(&self, psi: &[C64], basis: &SubspaceBasis) -> Result<Vec<C64>> {
        let mut out = vec![C64::new(0.0, 0.0); basis.len()];
        for (o, a) in self.orbits.iter().zip(psi) {
            let s = 1.0 / (o.size() as f64).sqrt();
            for &m in &o.members {
                out[basis.require_index(m)?] = a * s;
            }
        }
        Ok(out)
    }
}

fn ring_mask(i: usize, n: usize) -> u64 {
    if n < 3 {
        return u64::MAX;
    }
    (1u64 << ((i + 1) % n)) | (1u64 << ((i + n - 1) % n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub tau: f64,
    pub population: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakScan {
    pub tau_grid: Vec<f64>,
    pub populations: Vec<f64>,
    pub peaks: Vec<Peak>,
    pub threshold: f64,
}

/// Orbit population of `e^{-i tau G}|0>` on the grid `tau_j = j dtau <= tau_max`.
/// Peaks are interior grid points strictly above their left neighbour and
/// not below their right one, with population above `1/(2N)`.
pub fn peak_scan(sector: &BraceletSector, target: usize, tau_max: f64, dtau: f64) -> Result<PeakScan> {
    if !(dtau > 0.0) || !dtau.is_finite() {
        return Err(Error::InvalidArgument(format!("grid step must be > 0, got {dtau}")));
    }
    if target >= sector.dim() {
        return Err(Error::InconsistentTarget(format!("orbit index {target} out of range")));
    }
    let threshold = 1.0 / (2 * sector.n) as f64;
    if !(tau_max > 0.0) {
        return Ok(PeakScan { tau_grid: vec![], populations: vec![], peaks: vec![], threshold });
    }
    let eig = sector.eigen();
    let c = eig.to_eigenbasis(&sector.vacuum());
    let row: Vec<f64> = (0..sector.dim()).map(|k| eig.vectors[(target, k)]).collect();
    let steps = (tau_max / dtau + 1e-9).floor() as usize;
    let mut tau_grid = Vec::with_capacity(steps + 1);
    let mut populations = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let tau = j as f64 * dtau;
        let amp: C64 = (0..row.len())
            .map(|k| c[k] * row[k] * C64::from_polar(1.0, -eig.values[k] * tau))
            .sum();
        tau_grid.push(tau);
        populations.push(amp.norm_sqr());
    }
    let mut peaks = Vec::new();
    for j in 1..populations.len().saturating_sub(1) {
        let p = populations[j];
        if p > populations[j - 1] && p >= populations[j + 1] && p > threshold {
            peaks.push(Peak { tau: tau_grid[j], population: p });
        }
    }
    Ok(PeakScan { tau_grid, populations, peaks, threshold })
}

/// How a phase count `p` maps to walk segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthConvention {
    /// `p` phases, `p + 1` walks of `tau_eff/(p+1)` (fiducial walk first).
    PhasesPlusFiducial,
    /// `p` phases, `p + 1` walks of `tau_eff/p`.
    WalkTimeOverPhases,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BraceletPlan {
    pub tau_tot: f64,
    pub p: usize,
    pub tau: f64,
    pub gamma: Vec<f64>,
    /// Accumulated walk time `(p+1) tau`.
    pub tau_eff: f64,
}

impl BraceletPlan {
    /// Plan with the printed phase vector and total walk time.
    pub fn from_gammas(tau_eff: f64, gamma: Vec<f64>) -> Result<Self> {
        Self::from_gammas_with(tau_eff, gamma, DepthConvention::PhasesPlusFiducial)
    }

    pub fn from_gammas_with(tau_eff: f64, gamma: Vec<f64>, conv: DepthConvention) -> Result<Self> {
        let p = gamma.len();
        if p == 0 || !(tau_eff > 0.0) {
            return Err(Error::InvalidArgument("need at least one phase and tau_eff > 0".into()));
        }
        let tau = match conv {
            DepthConvention::PhasesPlusFiducial => tau_eff / (p + 1) as f64,
            DepthConvention::WalkTimeOverPhases => tau_eff / p as f64,
        };
        Ok(Self { tau_tot: tau_eff, p, tau, gamma, tau_eff: tau * (p + 1) as f64 })
    }

    pub fn schedule(&self) -> AnsatzSchedule {
        AnsatzSchedule {
            tau0: self.tau,
            layers: self.gamma.iter().map(|&g| Layer { gamma: g, tau: self.tau }).collect(),
            phasor: PhasorKind::GlobalHamming,
        }
    }
}

/// `p = floor(tau_tot / tau_min_hw) - 2`, `tau = tau_tot/(p+1)`, zero phases.
pub fn plan_from_peak(tau_tot: f64, tau_min_hw: f64) -> Result<BraceletPlan> {
    if !(tau_min_hw > 0.0) || !tau_tot.is_finite() {
        return Err(Error::InvalidArgument("tau_min_hw must be > 0".into()));
    }
    let raw = (tau_tot / tau_min_hw).floor() - 2.0;
    if raw <= 1.0 {
        return Err(Error::PlanInfeasible(format!(
            "tau_tot = {tau_tot} gives depth {raw} <= 1 at tau_min = {tau_min_hw}"
        )));
    }
    let p = raw as usize;
    Ok(BraceletPlan {
        tau_tot,
        p,
        tau: tau_tot / (p + 1) as f64,
        gamma: vec![0.0; p],
        tau_eff: tau_tot,
    })
}

/// Final sector state of the plan from `|0...0>`.
pub fn bracelet_state(plan: &BraceletPlan, sector: &BraceletSector) -> Vec<C64> {
    let mut psi = sector.evolve(&sector.vacuum(), plan.tau);
    for &g in &plan.gamma {
        sector.apply_phase(&mut psi, g);
        psi = sector.evolve(&psi, plan.tau);
    }
    psi
}

/// `|<[z*]|psi>|^2`, equal to the orbit population inside the sector.
pub fn evaluate_plan(plan: &BraceletPlan, sector: &BraceletSector, target: usize) -> f64 {
    bracelet_state(plan, sector)[target].norm_sqr()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BraceletOutcome {
    pub plan: BraceletPlan,
    pub success: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Maximises `score(plan)` over `gamma` in `[-pi, pi]^p`, walk times fixed.
pub fn optimize_bracelet_with<F>(plan: &BraceletPlan, mut score: F, opts: &TrustRegionOptions) -> BraceletOutcome
where
    F: FnMut(&BraceletPlan) -> f64,
{
    let mut trial = plan.clone();
    let lo = vec![-PI; plan.p];
    let hi = vec![PI; plan.p];
    let r = trust_region_box(
        |g| {
            trial.gamma.copy_from_slice(g);
            1.0 - score(&trial)
        },
        &plan.gamma,
        &lo,
        &hi,
        opts,
    );
    let mut best = plan.clone();
    best.gamma = r.x;
    BraceletOutcome { plan: best, success: 1.0 - r.f, evals: r.evals, converged: r.converged }
}

/// Coherent CTQW objective.
pub fn optimize_bracelet(
    plan: &BraceletPlan,
    sector: &BraceletSector,
    target: usize,
    opts: &TrustRegionOptions,
) -> BraceletOutcome {
    optimize_bracelet_with(plan, |pl| evaluate_plan(pl, sector, target), opts)
}

/// `(P_CTQW + P_Ryd)/2`, with the Rydberg probability supplied by the caller.
pub fn optimize_bracelet_joint<R>(
    plan: &BraceletPlan,
    sector: &BraceletSector,
    target: usize,
    mut rydberg: R,
    opts: &TrustRegionOptions,
) -> BraceletOutcome
where
    R: FnMut(&BraceletPlan) -> f64,
{
    optimize_bracelet_with(plan, |pl| 0.5 * (evaluate_plan(pl, sector, target) + rydberg(pl)), opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakProtocolResult {
    pub scan: PeakScan,
    /// One entry per attempted peak, in order.
    pub attempts: Vec<BraceletOutcome>,
    pub best: BraceletOutcome,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakProtocolOptions {
    pub tau_max: f64,
    pub dtau: f64,
    pub tau_min_hw: f64,
    /// Also stop once this success probability is reached.
    pub stop_at: Option<f64>,
    pub optimizer: TrustRegionOptions,
}

impl Default for PeakProtocolOptions {
    fn default() -> Self {
        Self {
            tau_max: 20.0,
            dtau: 0.02,
            tau_min_hw: TAU_MIN_HW,
            stop_at: None,
            optimizer: TrustRegionOptions::default(),
        }
    }
}

fn scan_with_escalation(sector: &BraceletSector, target: usize, opts: &PeakProtocolOptions) -> Result<PeakScan> {
    let mut tau_max = opts.tau_max;
    let mut scan = peak_scan(sector, target, tau_max, opts.dtau)?;
    while scan.peaks.len() < 2 && tau_max < 8.0 * opts.tau_max {
        tau_max *= 2.0;
        scan = peak_scan(sector, target, tau_max, opts.dtau)?;
    }
    Ok(scan)
}

/// Optimises at successive scan peaks (the first is discarded) and stops at
/// the first decrease in success probability.
pub fn successive_peaks(
    sector: &BraceletSector,
    target: usize,
    opts: &PeakProtocolOptions,
) -> Result<PeakProtocolResult> {
    let scan = scan_with_escalation(sector, target, opts)?;
    let mut attempts: Vec<BraceletOutcome> = Vec::new();
    for peak in scan.peaks.iter().skip(1) {
        let plan = match plan_from_peak(peak.tau, opts.tau_min_hw) {
            Ok(p) => p,
            Err(Error::PlanInfeasible(_)) => continue,
            Err(e) => return Err(e),
        };
        let out = optimize_bracelet(&plan, sector, target, &opts.optimizer);
        let worse = attempts.last().map(|prev| out.success < prev.success).unwrap_or(false);
        let done = opts.stop_at.map_or(false, |t| out.success >= t);
        attempts.push(out);
        if worse || done {
            break;
        }
    }
    let best = attempts
        .iter()
        .max_by(|a, b| a.success.total_cmp(&b.success))
        .cloned()
        .ok_or_else(|| Error::PlanInfeasible("no feasible peak found".into()))?;
    Ok(PeakProtocolResult { scan, attempts, best })
}

/// Accumulated walk time of the first peak (after the first) whose
/// optimised plan reaches `threshold`, scanning all peaks up to `tau_max`.
pub fn required_walk_time(
    sector: &BraceletSector,
    target: usize,
    threshold: f64,
    opts: &PeakProtocolOptions,
) -> Result<Option<BraceletOutcome>> {
    let scan = peak_scan(sector, target, opts.tau_max, opts.dtau)?;
    for peak in scan.peaks.iter().skip(1) {
        let Ok(plan) = plan_from_peak(peak.tau, opts.tau_min_hw) else { continue };
        let out = optimize_bracelet(&plan, sector, target, &opts.optimizer);
        if out.success >= threshold {
            return Ok(Some(out));
        }
    }
    Ok(None)
}

/// Relative threshold for a non-zero target-sector weight.
pub const WEIGHT_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, row-major `dim x dim`.
    pub eigenvectors: Vec<f64>,
    /// Weight of each eigenmode in the target Hamming sector.
    pub weights: Vec<f64>,
    pub kappa: f64,
    pub tau_eff: f64,
    /// `None` when no supported pair is resolvable.
    pub delta_min: Option<f64>,
}

impl SpectralProfile {
    /// Smallest gap `|l_r - l_s| >= kappa/tau_eff` among modes with target weight.
    pub fn delta_min_at(&self, kappa: f64, tau_eff: f64) -> Option<f64> {
        delta_min(&self.eigenvalues, &self.weights, kappa, tau_eff)
    }
}

fn delta_min(values: &[f64], weights: &[f64], kappa: f64, tau_eff: f64) -> Option<f64> {
    let wmax = weights.iter().cloned().fold(0.0, f64::max);
    let floor = WEIGHT_THRESHOLD * wmax;
    let cut = kappa / tau_eff;
    let support: Vec<f64> = values.iter().zip(weights).filter(|(_, &w)| w > floor).map(|(&l, _)| l).collect();
    let mut best: Option<f64> = None;
    for i in 0..support.len() {
        for j in i + 1..support.len() {
            let g = (support[i] - support[j]).abs();
            if g >= cut && best.map_or(true, |b| g < b) {
                best = Some(g);
            }
        }
    }
    best
}

/// Eigenmodes of the sector generator and their weight on orbits with the
/// target's Hamming weight.
pub fn spectral_profile(sector: &BraceletSector, target: usize, kappa: f64, tau_eff: f64) -> Result<SpectralProfile> {
    if target >= sector.dim() {
        return Err(Error::InconsistentTarget(format!("orbit index {target} out of range")));
    }
    if !(tau_eff > 0.0) {
        return Err(Error::InvalidArgument("tau_eff must be > 0".into()));
    }
    let h = sector.weights[target];
    let eig = sector.eigen();
    let dim = sector.dim();
    let weights: Vec<f64> = (0..dim)
        .map(|r| (0..dim).filter(|&a| sector.weights[a] == h).map(|a| eig.vectors[(a, r)].powi(2)).sum())
        .collect();
    let mut eigenvectors = Vec::with_capacity(dim * dim);
    for a in 0..dim {
        for r in 0..dim {
            eigenvectors.push(eig.vectors[(a, r)]);
        }
    }
    let delta_min = delta_min(&eig.values, &weights, kappa, tau_eff);
    Ok(SpectralProfile { eigenvalues: eig.values.clone(), eigenvectors, weights, kappa, tau_eff, delta_min })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaCalibration {
    pub kappa_star: f64,
    pub kappa_grid: Vec<f64>,
    /// Pearson correlation of `tau_eff` against `1/Delta_min(kappa)`.
    pub r: Vec<f64>,
    pub window: usize,
    pub score: f64,
}

/// `kappa*` maximising `mean(r) - 2 std(r)` over sliding windows of
/// `window` grid points; returns the window centre.
pub fn calibrate_kappa(instances: &[SpectralProfile], kappa_grid: &[f64], window: usize) -> Result<KappaCalibration> {
    if instances.len() < 10 {
        return Err(Error::TooFewInstances { needed: 10, got: instances.len() });
    }
    if window == 0 || window > kappa_grid.len() {
        return Err(Error::InvalidArgument("window must fit inside the kappa grid".into()));
    }
    let r: Vec<f64> = kappa_grid
        .iter()
        .map(|&k| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for inst in instances {
                if let Some(d) = inst.delta_min_at(k, inst.tau_eff) {
                    xs.push(1.0 / d);
                    ys.push(inst.tau_eff);
                }
            }
            if xs.len() < instances.len() {
                // an undefined gap disqualifies this kappa
                f64::NAN
            } else {
                pearson(&xs, &ys)
            }
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for s in 0..=kappa_grid.len() - window {
        let w = &r[s..s + window];
        if w.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let m = w.iter().sum::<f64>() / window as f64;
        let sd = (w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / window as f64).sqrt();
        let score = m - 2.0 * sd;
        if score > best.0 {
            best = (score, s);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::FitFailure("no kappa window with defined gaps".into()));
    }
    let s = best.1;
    let kappa_star = 0.5 * (kappa_grid[s] + kappa_grid[s + window - 1]);
    Ok(KappaCalibration { kappa_star, kappa_grid: kappa_grid.to_vec(), r, window, score: best.0 })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// One output row: N, |V|, state, depth, tau_eff, gammas (3 decimals), P_perfect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BraceletRow {
    pub n: usize,
    pub size: usize,
    pub state: String,
    pub depth: usize,
    pub tau_eff: f64,
    pub gammas: String,
    pub perfect: f64,
}

impl BraceletRow {
    pub fn new(basis: &SubspaceBasis, orbit: &DihedralOrbit, outcome: &BraceletOutcome) -> Self {
        Self {
            n: basis.n(),
            size: basis.len(),
            state: orbit.label(),
            depth: outcome.plan.p,
            tau_eff: outcome.plan.tau_eff,
            gammas: format_gammas(&outcome.plan.gamma),
            perfect: outcome.success,
        }
    }
}

pub fn format_gammas(g: &[f64]) -> String {
    g.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctqw::{StateVector, WalkGenerator};
    use crate::subspace::bracelet_vector;

    #[test]
    fn sector_matches_full_matrix_elements() {
        for n in [5, 6, 9, 10] {
            let b = SubspaceBasis::ring(n).unwrap();
            let s = BraceletSector::new(&b).unwrap();
            let g = WalkGenerator::from_basis(&b);
            let vecs: Vec<Vec<C64>> = s.orbits.iter().map(|o| bracelet_vector(o, &b).unwrap()).collect();
            for (a, va) in vecs.iter().enumerate() {
                let gv = g.apply(va);
                for (c, vc) in vecs.iter().enumerate() {
                    let m: C64 = vc.iter().zip(&gv).map(|(x, y)| x.conj() * y).sum();
                    assert!((m.re - s.generator[(c, a)]).abs() < 1e-12, "n={n} ({c},{a})");
                }
            }
        }
    }

    #[test]
    fn sector_walk_matches_full_walk() {
        let b = SubspaceBasis::ring(8).unwrap();
        let s = BraceletSector::new(&b).unwrap();
        let g = WalkGenerator::from_basis(&b);
        let full = g.evolve(&StateVector::vacuum(&b), 3.3).unwrap();
        let lifted = s.lift(&s.evolve(&s.vacuum(), 3.3), &b).unwrap();
        assert!(full.distance(&StateVector::new(lifted)) < 1e-12);
    }

    #[test]
    fn n5_sector_has_three_orbits() {
        let b = SubspaceBasis::ring(5).unwrap();
        let s = BraceletSector::new(&b).unwrap();
        let labels: Vec<String> = s.orbits.iter().map(|o| o.label()).collect();
        assert_eq!(labels, vec!["[00000]", "[00001]", "[00101]"]);
    }

    #[test]
    fn scan_examples() {
        let b = SubspaceBasis::ring(9).unwrap();
        let s = BraceletSector::new(&b).unwrap();
        let t = s.orbit_index(0b000010101).unwrap();
        let empty = peak_scan(&s, t, 0.0, 0.02).unwrap();
        assert!(empty.tau_grid.is_empty() && empty.peaks.is_empty());
        let scan = peak_scan(&s, t, 20.0, 0.02).unwrap();
        assert_eq!(scan.populations[0], 0.0);
        assert!(scan.peaks.len() >= 2);
        assert!(scan.peaks.iter().all(|p| p.population > 1.0 / 18.0));
        assert!(scan.peaks.windows(2).all(|w| w[0].tau < w[1].tau));
        assert!(peak_scan(&s, t, 1.0, 0.0).is_err());
    }

    #[test]
    fn plan_rule() {
        let p = plan_from_peak(4.0, 0.4).unwrap();
        assert_eq!(p.p, 8);
        assert!((p.tau - 4.0 / 9.0).abs() < 1e-15);
        assert!(p.gamma.iter().all(|&g| g == 0.0));
        let p = plan_from_peak(8.234, 0.4).unwrap();
        assert_eq!(p.p, 18);
        assert!((p.tau - 0.4334).abs() < 1e-4);
        assert!(matches!(plan_from_peak(1.3, 0.4), Err(Error::PlanInfeasible(_))));
    }

    #[test]
    fn zero_phases_equal_plain_walk() {
        let b = SubspaceBasis::ring(7).unwrap();
        let s = BraceletSector::new(&b).unwrap();
        let t = s.orbit_index(0b0000101).unwrap();
        let plan = plan_from_peak(6.1, 0.4).unwrap();
        let walk = s.evolve(&s.vacuum(), 6.1)[t].norm_sqr();
        assert!((evaluate_plan(&plan, &s, t) - walk).abs() < 1e-12);
    }

    #[test]
    fn target_sector_weights_sum_to_sector_size() {
        let b = SubspaceBasis::ring(10).unwrap();
        let s = BraceletSector::new(&b).unwrap();
        let t = s.orbit_index(0b0000010101).unwrap();
        let prof = spectral_profile(&s, t, 7.2, 19.0).unwrap();
        let count = s.weights.iter().filter(|&&w| w == 3.0).count() as f64;
        assert!((prof.weights.iter().sum::<f64>() - count).abs() < 1e-12);
        assert!(prof.weights.iter().all(|&u| (0.0..=1.0 + 1e-12).contains(&u)));
        let d = prof.delta_min.unwrap();
        assert!(d >= 7.2 / 19.0);
    }

    #[test]
    fn calibration_needs_instances() {
        let b = SubspaceBasis::ring(6).unwrap();
        let s = BraceletSector::new(&b).unwrap();
        let prof = spectral_profile(&s, 1, 1.0, 5.0).unwrap();
        let grid: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(
            calibrate_kappa(&[prof], &grid, 3),
            Err(Error::TooFewInstances { needed: 10, got: 1 })
        ));
    }

    #[test]
    fn protocol_reaches_table_quality() {
        // N=7 [0000101] and N=6 [010101]: table values 0.960 and 0.996
        for (n, z, table) in [(7, 0b0000101u64, 0.960), (6, 0b010101, 0.996)] {
            let b = SubspaceBasis::ring(n).unwrap();
            let s = BraceletSector::new(&b).unwrap();
            let t = s.orbit_index(z).unwrap();
            let r = successive_peaks(&s, t, &PeakProtocolOptions::default()).unwrap();
            assert!(r.best.success >= table - 0.01, "n={n}: {}", r.best.success);
            assert!(r.attempts.len() >= 2 || r.best.success > 0.99);
        }
    }

    #[test]
    fn printed_plan_n6_mis() {
        let b = SubspaceBasis::ring(6).unwrap();
        let s = BraceletSector::new(&b).unwrap();
        let t = s.orbit_index(0b010101).unwrap();
        let g = [
            0.921, 0.081, -0.386, -0.371, -0.530, 0.084, 0.064, 0.035, -0.321, 0.254, 0.245, 0.035,
            -0.056, 0.248, 0.065, 0.009, -0.068, 0.102, 0.016, 0.103, 0.353, 0.396, -0.422, -0.587,
        ];
        let plan = BraceletPlan::from_gammas(10.095, g.to_vec()).unwrap();
        assert!((evaluate_plan(&plan, &s, t) - 0.996).abs() < 0.02);
        // the phase sign convention does not matter
        let neg = BraceletPlan::from_gammas(10.095, g.iter().map(|x| -x).collect()).unwrap();
        assert!((evaluate_plan(&plan, &s, t) - evaluate_plan(&neg, &s, t)).abs() < 1e-12);
    }

    #[test]
    fn gammas_print_with_three_decimals() {
        assert_eq!(format_gammas(&[0.4941, -0.0078, 1.0]), "0.494 -0.008 1.000");
    }
}
