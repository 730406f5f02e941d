//! Compilation of walk schedules to neutral-atom analog programs (ring
//! geometry plus piecewise-linear waveforms) and a dense emulator of the
//! full Rydberg Hamiltonian
//!
//! `H(t) = Σ Ω/2 (e^{iφ}|g><r| + h.c.) − Σ δ w_i n_i + Σ_{i<j} C6/r_ij^6 n_i n_j`.

use crate::ctqw::{AnsatzSchedule, PhasorKind, StateVector, C64};
use crate::error::{Error, Result};
use crate::mitigation::{sample_bitstrings, ReadoutChannel, ShotSet};
use crate::subspace::{ConstraintGraph, SubspaceBasis};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// μm⁶·rad/μs
    pub c6: f64,
    /// rad/μs
    pub omega_max: f64,
    /// μs
    pub rise_time: f64,
    /// rad/μs
    pub local_detuning_cap: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { c6: 5_420_503.0, omega_max: 15.8, rise_time: 0.05, local_detuning_cap: 62.0 }
    }
}

impl PhysicalConstants {
    /// Distance at which the interaction equals `omega`.
    pub fn r_d(&self, omega: f64) -> f64 {
        (self.c6 / omega).powf(1.0 / 6.0)
    }

    pub fn max_slew(&self) -> f64 {
        self.omega_max / self.rise_time
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomLayout {
    /// μm
    pub positions: Vec<(f64, f64)>,
    /// Largest edge distance.
    pub r_min: f64,
    /// Smallest non-edge distance.
    pub r_max: f64,
    pub eta: f64,
    /// `η √(r_min r_max)`
    pub r_b: f64,
    /// Ring radius.
    pub d: f64,
}

impl AtomLayout {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.positions[i], self.positions[j]);
        (a.0 - b.0).hypot(a.1 - b.1)
    }

    /// `V_ij = C6 / r_ij^6` for `i < j`.
    pub fn interactions(&self, c6: f64) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut v = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                v.push((i, j, c6 / self.distance(i, j).powi(6)));
            }
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutOptions {
    /// Quantize positions to 0.1 μm.
    pub snap: bool,
    /// Variational multiplier on the ring radius.
    pub scale: f64,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        Self { snap: false, scale: 1.0 }
    }
}

/// `n` atoms on a circle of radius `D = r_d / (2η √(sin(π/n) sin(2π/n)))`.
pub fn ring_layout(n: usize, constants: &PhysicalConstants, omega_avg: f64, eta: f64, opts: &LayoutOptions) -> Result<AtomLayout> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("a ring needs at least 3 atoms, got {n}")));
    }
    if !(omega_avg > 0.0) || !(eta > 0.0) || !(opts.scale > 0.0) {
        return Err(Error::InvalidArgument("omega_avg, eta and scale must be positive".into()));
    }
    let nf = n as f64;
    let r_d = constants.r_d(omega_avg);
    let d = opts.scale * r_d / (2.0 * eta * ((PI / nf).sin() * (2.0 * PI / nf).sin()).sqrt());
    let positions: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let th = TAU * k as f64 / nf;
            let p = (d * th.sin(), d * th.cos());
            if opts.snap {
                ((p.0 * 10.0).round() / 10.0, (p.1 * 10.0).round() / 10.0)
            } else {
                p
            }
        })
        .collect();
    let mut layout = AtomLayout { positions, r_min: 0.0, r_max: f64::INFINITY, eta, r_b: 0.0, d };
    let graph = ConstraintGraph::ring(n)?;
    let (r_min, r_max) = edge_extremes(&layout, &graph);
    layout.r_min = r_min;
    layout.r_max = r_max;
    layout.r_b = if r_max.is_finite() { eta * (r_min * r_max).sqrt() } else { eta * r_min };
    Ok(layout)
}

// (max edge distance, min non-edge distance); the latter is inf with no non-edges
fn edge_extremes(layout: &AtomLayout, graph: &ConstraintGraph) -> (f64, f64) {
    let n = layout.n();
    let mut r_min: f64 = 0.0;
    let mut r_max = f64::INFINITY;
    for i in 0..n {
        let nb = graph.neighbor_mask(i);
        for j in i + 1..n {
            let r = layout.distance(i, j);
            if (nb >> j) & 1 == 1 {
                r_min = r_min.max(r);
            } else {
                r_max = r_max.min(r);
            }
        }
    }
    (r_min, r_max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaReport {
    pub eta: f64,
    /// Mean blockaded sum per vertex.
    pub n_b: f64,
    /// Mean unblockaded sum per vertex.
    pub n_u: f64,
    /// `‖H_err‖/N` in units of Ω².
    pub error_norm: f64,
}

/// `η = (n_b / 4n_u)^{1/24}`.
pub fn eta_from_counts(n_b: f64, n_u: f64) -> f64 {
    (n_b / (4.0 * n_u)).powf(1.0 / 24.0)
}

/// Blockade-radius prefactor of a unit-disk layout. Edge terms are weighted
/// by `(r/r_min)^12`, non-edge terms by `(2 r_min / r)^12`.
pub fn compute_eta(positions: &[(f64, f64)], graph: &ConstraintGraph) -> Result<EtaReport> {
    if positions.len() != graph.n() {
        return Err(Error::InconsistentBasis { expected: graph.n(), got: positions.len() });
    }
    let layout = AtomLayout { positions: positions.to_vec(), r_min: 0.0, r_max: 0.0, eta: 1.0, r_b: 0.0, d: 0.0 };
    let (r_min, r_max) = edge_extremes(&layout, graph);
    if !(r_min > 0.0) || !r_max.is_finite() || r_min >= r_max {
        return Err(Error::DegenerateGeometry(format!("r_min = {r_min}, r_max = {r_max}")));
    }
    let n = graph.n();
    let (mut n_b, mut n_u) = (0.0, 0.0);
    for i in 0..n {
        let nb = graph.neighbor_mask(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let r = layout.distance(i, j);
            if (nb >> j) & 1 == 1 {
                n_b += (r / r_min).powi(12);
            } else {
                n_u += (2.0 * r_min / r).powi(12);
            }
        }
    }
    n_b /= n as f64;
    n_u /= n as f64;
    Ok(EtaReport {
        eta: eta_from_counts(n_b, n_u),
        n_b,
        n_u,
        error_norm: (n_b * n_u).sqrt() * (r_min / r_max).powi(6),
    })
}

/// η of an `n`-atom ring (scale free).
pub fn ring_eta(n: usize) -> Result<EtaReport> {
    let g = ConstraintGraph::ring(n)?;
    let pos: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let th = TAU * k as f64 / n as f64;
            (th.sin(), th.cos())
        })
        .collect();
    compute_eta(&pos, &g)
}

/// Piecewise-linear waveform, breakpoints `(t, value)` from `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pwl {
    pub points: Vec<(f64, f64)>,
}

impl Pwl {
    pub fn duration(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.0)
    }

    pub fn area(&self) -> f64 {
        self.points.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
    }

    pub fn peak(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn max_slew(&self) -> f64 {
        self.points
            .windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }

    pub fn value(&self, t: f64) -> f64 {
        for w in self.points.windows(2) {
            if t >= w[0].0 && t <= w[1].0 && w[1].0 > w[0].0 {
                return w[0].1 + (t - w[0].0) / (w[1].0 - w[0].0) * (w[1].1 - w[0].1);
            }
        }
        0.0
    }

    fn triangle(duration: f64, peak: f64) -> Self {
        Self { points: vec![(0.0, 0.0), (0.5 * duration, peak), (duration, 0.0)] }
    }

    fn trapezoid(ramp: f64, plateau: f64, height: f64) -> Self {
        Self { points: vec![(0.0, 0.0), (ramp, height), (ramp + plateau, height), (2.0 * ramp + plateau, 0.0)] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseRegime {
    /// Fixed-length triangle below full amplitude.
    ShortTriangle,
    /// Full-amplitude triangle of growing length.
    Triangle,
    /// Reduced-amplitude trapezoid of fixed length.
    ShortTrapezoid,
    /// Full-amplitude trapezoid of growing length.
    Trapezoid,
}

// boundary between the growing triangle and the fixed trapezoid
const TAU_TRIANGLE_MAX: f64 = 0.59;

/// Rabi pulse with `∫Ω dt = 2τ`.
pub fn synthesize_walk_pulse(tau: f64, c: &PhysicalConstants) -> Result<(PulseRegime, Pwl)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("walk time must be positive, got {tau}")));
    }
    let area = 2.0 * tau;
    let rise = c.rise_time;
    let om = c.omega_max;
    // fixed 2·rise triangle while its peak stays under Ω_max
    if area / rise <= om {
        return Ok((PulseRegime::ShortTriangle, Pwl::triangle(2.0 * rise, area / rise)));
    }
    if tau < TAU_TRIANGLE_MAX {
        return Ok((PulseRegime::Triangle, Pwl::triangle(2.0 * area / om, om)));
    }
    if tau <= om * rise {
        return Ok((PulseRegime::ShortTrapezoid, Pwl::trapezoid(rise, rise, area / (2.0 * rise))));
    }
    Ok((PulseRegime::Trapezoid, Pwl::trapezoid(rise, area / om - rise, om)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fragment {
    Walk { tau: f64, regime: PulseRegime, rabi: Pwl },
    /// Rabi off; `pulses` identical detuning triangles with total area `phi_max`.
    LocalPulse { phases: Vec<f64>, weights: Vec<f64>, detuning: Pwl, pulses: usize },
    /// Zero-duration step of the Rabi phase by `−gamma`.
    PhaseJump { gamma: f64 },
}

impl Fragment {
    pub fn duration(&self) -> f64 {
        match self {
            Fragment::Walk { rabi, .. } => rabi.duration(),
            Fragment::LocalPulse { detuning, pulses, .. } => detuning.duration() * *pulses as f64,
            Fragment::PhaseJump { .. } => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PhaseRequest {
    GlobalJump(f64),
    /// Target phase per site, each in `[0, 2π)`.
    LocalPulse(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseFragment {
    /// `None` for a zero phase.
    pub fragment: Option<Fragment>,
    pub warning: Option<String>,
}

const PHASE_EPS: f64 = 1e-12;

pub fn synthesize_phase_fragment(req: &PhaseRequest, c: &PhysicalConstants) -> Result<PhaseFragment> {
    match req {
        PhaseRequest::GlobalJump(g) => {
            if !g.is_finite() || g.abs() > TAU + PHASE_EPS {
                return Err(Error::InvalidArgument(format!("phase jump |γ| must be ≤ 2π, got {g}")));
            }
            let fragment = (g.abs() > PHASE_EPS).then_some(Fragment::PhaseJump { gamma: *g });
            Ok(PhaseFragment { fragment, warning: None })
        }
        PhaseRequest::LocalPulse(phases) => {
            if phases.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > TAU + PHASE_EPS) {
                return Err(Error::InvalidArgument("local phases must lie in [0, 2π]".into()));
            }
            let phi_max = phases.iter().copied().fold(0.0, f64::max);
            if phi_max <= PHASE_EPS {
                return Ok(PhaseFragment { fragment: None, warning: None });
            }
            let width = 2.0 * c.rise_time;
            // area of one capped triangle
            let per = 0.5 * c.local_detuning_cap * width;
            let pulses = (phi_max / per - 1e-12).ceil().max(1.0) as usize;
            let peak = 2.0 * phi_max / (pulses as f64 * width);
            let warning = (pulses > 1).then(|| {
                format!(
                    "local phase {phi_max:.4} needs peak {:.1} rad/us over the cap {}; split into {pulses} pulses",
                    2.0 * phi_max / width,
                    c.local_detuning_cap
                )
            });
            Ok(PhaseFragment {
                fragment: Some(Fragment::LocalPulse {
                    weights: phases.iter().map(|p| p / phi_max).collect(),
                    phases: phases.clone(),
                    detuning: Pwl::triangle(width, peak),
                    pulses,
                }),
                warning,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileOptions {
    /// `None` computes η for the ring.
    pub eta: Option<f64>,
    pub layout: LayoutOptions,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self { eta: None, layout: LayoutOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RydbergProgram {
    pub constants: PhysicalConstants,
    pub layout: AtomLayout,
    pub fragments: Vec<Fragment>,
    pub duration: f64,
    pub omega_avg: f64,
    pub schedule: AnsatzSchedule,
    pub warnings: Vec<String>,
}

impl RydbergProgram {
    pub fn n(&self) -> usize {
        self.layout.n()
    }

    /// Accumulated Rabi phase after the last jump.
    pub fn final_phase(&self) -> f64 {
        self.fragments
            .iter()
            .map(|f| match f {
                Fragment::PhaseJump { gamma } => -gamma,
                _ => 0.0,
            })
            .sum()
    }

    /// Time-aligned channel breakpoints.
    pub fn waveforms(&self) -> Waveforms {
        let n = self.n();
        let mut w = Waveforms {
            rabi_amplitude: vec![(0.0, 0.0)],
            rabi_phase: vec![(0.0, 0.0)],
            global_detuning: vec![(0.0, 0.0), (self.duration, 0.0)],
            local_detuning: vec![(0.0, 0.0)],
            site_weights: vec![0.0; n],
        };
        let mut t = 0.0;
        let mut phase = 0.0;
        let push = |ch: &mut Vec<(f64, f64)>, pt: (f64, f64)| {
            if ch.last() != Some(&pt) {
                ch.push(pt);
            }
        };
        for f in &self.fragments {
            match f {
                Fragment::Walk { rabi, .. } => {
                    for &(s, v) in &rabi.points {
                        push(&mut w.rabi_amplitude, (t + s, v));
                    }
                    t += rabi.duration();
                }
                Fragment::LocalPulse { detuning, pulses, weights, .. } => {
                    for _ in 0..*pulses {
                        for &(s, v) in &detuning.points {
                            push(&mut w.local_detuning, (t + s, v));
                        }
                        t += detuning.duration();
                    }
                    for (a, b) in w.site_weights.iter_mut().zip(weights) {
                        *a = f64::max(*a, *b);
                    }
                }
                Fragment::PhaseJump { gamma } => {
                    push(&mut w.rabi_phase, (t, phase));
                    phase -= gamma;
                    w.rabi_phase.push((t, phase));
                }
            }
        }
        for ch in [&mut w.rabi_amplitude, &mut w.rabi_phase, &mut w.local_detuning] {
            let last = ch.last().map_or(0.0, |p| p.1);
            push(ch, (self.duration, last));
        }
        w
    }

    pub fn export(&self) -> ProgramExport {
        ProgramExport {
            n: self.n(),
            positions_um: self
                .layout
                .positions
                .iter()
                .map(|&(x, y)| ((x * 10.0).round() / 10.0, (y * 10.0).round() / 10.0))
                .collect(),
            duration_us: self.duration,
            omega_avg: self.omega_avg,
            eta: self.layout.eta,
            r_b: self.layout.r_b,
            waveforms: self.waveforms(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Channel breakpoints `(t μs, value)`; phase steps appear as repeated times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveforms {
    pub rabi_amplitude: Vec<(f64, f64)>,
    pub rabi_phase: Vec<(f64, f64)>,
    pub global_detuning: Vec<(f64, f64)>,
    pub local_detuning: Vec<(f64, f64)>,
    pub site_weights: Vec<f64>,
}

/// Stable export schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramExport {
    pub n: usize,
    pub positions_um: Vec<(f64, f64)>,
    pub duration_us: f64,
    pub omega_avg: f64,
    pub eta: f64,
    pub r_b: f64,
    pub waveforms: Waveforms,
    pub warnings: Vec<String>,
}

fn phase_request(schedule: &AnsatzSchedule, gamma: f64, n: usize) -> PhaseRequest {
    match schedule.phasor {
        PhasorKind::GlobalHamming => PhaseRequest::GlobalJump(gamma),
        PhasorKind::LocalMask { mask } => PhaseRequest::LocalPulse(
            (0..n)
                .map(|i| {
                    let c = ((mask >> i) & 1) as f64;
                    let p = (-gamma * c).rem_euclid(TAU);
                    if TAU - p < PHASE_EPS { 0.0 } else { p }
                })
                .collect(),
        ),
    }
}

pub fn compile_program(schedule: &AnsatzSchedule, n: usize, c: &PhysicalConstants, opts: &CompileOptions) -> Result<RydbergProgram> {
    schedule.validate()?;
    if let PhasorKind::LocalMask { mask } = schedule.phasor {
        if mask >> n != 0 {
            return Err(Error::InvalidArgument(format!("phasor mask {mask:#b} exceeds {n} sites")));
        }
    }
    let mut fragments = Vec::new();
    let mut warnings = Vec::new();
    let walk = |tau: f64, fragments: &mut Vec<Fragment>| -> Result<()> {
        if tau > 0.0 {
            let (regime, rabi) = synthesize_walk_pulse(tau, c)?;
            fragments.push(Fragment::Walk { tau, regime, rabi });
        }
        Ok(())
    };
    walk(schedule.tau0, &mut fragments)?;
    for layer in &schedule.layers {
        let ph = synthesize_phase_fragment(&phase_request(schedule, layer.gamma, n), c)?;
        fragments.extend(ph.fragment);
        warnings.extend(ph.warning);
        walk(layer.tau, &mut fragments)?;
    }
    let (area, on): (f64, f64) = fragments
        .iter()
        .filter_map(|f| match f {
            Fragment::Walk { rabi, .. } => Some((rabi.area(), rabi.duration())),
            _ => None,
        })
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let omega_avg = if on > 0.0 { area / on } else { c.omega_max };
    let eta = match opts.eta {
        Some(e) => e,
        None => match ring_eta(n) {
            Ok(r) => r.eta,
            Err(_) => {
                warnings.push(format!("no blockade correction for a {n}-atom ring"));
                1.0
            }
        },
    };
    let layout = ring_layout(n, c, omega_avg, eta, &opts.layout)?;
    let duration = fragments.iter().map(Fragment::duration).sum();
    let program = RydbergProgram {
        constants: *c,
        layout,
        fragments,
        duration,
        omega_avg,
        schedule: schedule.clone(),
        warnings,
    };
    check_caps(&program)?;
    Ok(program)
}

/// Amplitude, slew and local-detuning limits.
pub fn check_caps(p: &RydbergProgram) -> Result<()> {
    let c = &p.constants;
    let tol = 1e-9;
    for f in &p.fragments {
        match f {
            Fragment::Walk { rabi, .. } => {
                if rabi.points.iter().any(|q| q.1 < 0.0) || rabi.peak() > c.omega_max * (1.0 + tol) {
                    return Err(Error::InvalidArgument(format!("Rabi amplitude {} exceeds {}", rabi.peak(), c.omega_max)));
                }
                if rabi.max_slew() > c.max_slew() * (1.0 + tol) {
                    return Err(Error::InvalidArgument(format!("Rabi slew {} exceeds {}", rabi.max_slew(), c.max_slew())));
                }
            }
            Fragment::LocalPulse { detuning, weights, .. } => {
                if detuning.peak() > c.local_detuning_cap * (1.0 + tol) {
                    return Err(Error::InvalidArgument(format!(
                        "local detuning {} exceeds {}",
                        detuning.peak(),
                        c.local_detuning_cap
                    )));
                }
                if weights.iter().any(|w| !(0.0..=1.0 + tol).contains(w)) {
                    return Err(Error::InvalidArgument("site weight outside [0, 1]".into()));
                }
            }
            Fragment::PhaseJump { .. } => {}
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulateOptions {
    /// Base step, μs.
    pub dt: f64,
    /// Accepted state distance between step `h` and `h/2`.
    pub tol: f64,
    pub max_refinements: usize,
}

impl Default for EmulateOptions {
    fn default() -> Self {
        Self { dt: 1e-3, tol: 1e-4, max_refinements: 6 }
    }
}

/// Largest register handled by the dense emulator.
pub const MAX_DENSE_ATOMS: usize = 14;

#[derive(Clone, Debug)]
pub struct Emulation {
    pub state: StateVector,
    /// Richardson distance of the accepted run.
    pub error_estimate: f64,
    pub dt: f64,
}

/// Dense integration from the all-ground state.
pub fn emulate(program: &RydbergProgram, opts: &EmulateOptions) -> Result<Emulation> {
    if program.n() > MAX_DENSE_ATOMS {
        return Err(Error::InvalidArgument(format!("dense emulation supports up to {MAX_DENSE_ATOMS} atoms, got {}", program.n())));
    }
    let mut ground = vec![C64::new(0.0, 0.0); 1 << program.n()];
    ground[0] = C64::new(1.0, 0.0);
    emulate_from(program, &StateVector::new(ground), opts)
}

/// Dense integration from a full-register state.
pub fn emulate_from(program: &RydbergProgram, initial: &StateVector, opts: &EmulateOptions) -> Result<Emulation> {
    let n = program.n();
    if n > MAX_DENSE_ATOMS {
        return Err(Error::InvalidArgument(format!("dense emulation supports up to {MAX_DENSE_ATOMS} atoms, got {n}")));
    }
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    if initial.len() != 1 << n {
        return Err(Error::InconsistentBasis { expected: 1 << n, got: initial.len() });
    }
    let init = initial.amplitudes();
    let diag = interaction_diagonal(program);
    let mut dt = opts.dt;
    let mut coarse = integrate(program, &diag, dt, init);
    let mut history = Vec::new();
    for _ in 0..=opts.max_refinements {
        let fine = integrate(program, &diag, 0.5 * dt, init);
        let err = coarse.distance(&fine);
        history.push((dt, err));
        if err <= opts.tol {
            return Ok(Emulation { state: fine, error_estimate: err, dt: 0.5 * dt });
        }
        coarse = fine;
        dt *= 0.5;
    }
    Err(Error::IntegrationFailure(format!("no convergence to {}: (dt, distance) = {history:?}", opts.tol)))
}

/// Fixed-step integration; exposed for convergence studies.
pub fn emulate_fixed(program: &RydbergProgram, dt: f64) -> Result<StateVector> {
    if program.n() > MAX_DENSE_ATOMS || !(dt > 0.0) {
        return Err(Error::InvalidArgument("bad register size or step".into()));
    }
    let mut init = vec![C64::new(0.0, 0.0); 1 << program.n()];
    init[0] = C64::new(1.0, 0.0);
    Ok(integrate(program, &interaction_diagonal(program), dt, &init))
}

fn interaction_diagonal(p: &RydbergProgram) -> Vec<f64> {
    let n = p.n();
    let pairs = p.layout.interactions(p.constants.c6);
    (0..1usize << n)
        .map(|s| pairs.iter().filter(|(i, j, _)| (s >> i) & 1 == 1 && (s >> j) & 1 == 1).map(|t| t.2).sum())
        .collect()
}

fn integrate(p: &RydbergProgram, diag: &[f64], dt: f64, init: &[C64]) -> StateVector {
    let n = p.n();
    let mut psi = init.to_vec();
    let mut phase = 0.0;
    for f in &p.fragments {
        match f {
            Fragment::Walk { rabi, .. } => {
                for w in rabi.points.windows(2) {
                    let len = w[1].0 - w[0].0;
                    if len <= 0.0 {
                        continue;
                    }
                    let m = (len / dt - 1e-9).ceil().max(1.0) as usize;
                    let h = len / m as f64;
                    for k in 0..m {
                        let frac = (k as f64 + 0.5) / m as f64;
                        let om = w[0].1 + frac * (w[1].1 - w[0].1);
                        strang_step(&mut psi, diag, n, om, phase, h);
                    }
                }
            }
            Fragment::LocalPulse { weights, detuning, pulses, .. } => {
                // Rabi off: H is diagonal, exp(-i (V T - A Σ w_i n_i))
                let t = detuning.duration() * *pulses as f64;
                let a = detuning.area() * *pulses as f64;
                for (s, amp) in psi.iter_mut().enumerate() {
                    let wn: f64 = (0..n).filter(|i| (s >> i) & 1 == 1).map(|i| weights[i]).sum();
                    *amp *= C64::from_polar(1.0, -(diag[s] * t - a * wn));
                }
            }
            Fragment::PhaseJump { gamma } => phase -= gamma,
        }
    }
    StateVector::new(psi)
}

fn strang_step(psi: &mut [C64], diag: &[f64], n: usize, omega: f64, phase: f64, h: f64) {
    for (a, v) in psi.iter_mut().zip(diag) {
        *a *= C64::from_polar(1.0, -0.5 * h * v);
    }
    if omega != 0.0 {
        let c = C64::new((0.5 * omega * h).cos(), 0.0);
        let s = (0.5 * omega * h).sin();
        // -i sin · e^{±iφ}
        let up = C64::new(0.0, -s) * C64::from_polar(1.0, phase);
        let down = C64::new(0.0, -s) * C64::from_polar(1.0, -phase);
        for q in 0..n {
            let bit = 1usize << q;
            for i in 0..psi.len() {
                if i & bit == 0 {
                    let (g, r) = (psi[i], psi[i | bit]);
                    psi[i] = c * g + up * r;
                    psi[i | bit] = down * g + c * r;
                }
            }
        }
    }
    for (a, v) in psi.iter_mut().zip(diag) {
        *a *= C64::from_polar(1.0, -0.5 * h * v);
    }
}

/// Amplitudes on the independent sets, in basis order, after undoing the
/// final Rabi-phase frame; second value is the population outside.
pub fn blockade_projection(program: &RydbergProgram, state: &StateVector, basis: &SubspaceBasis) -> Result<(Vec<C64>, f64)> {
    if state.len() != 1 << basis.n() || basis.n() != program.n() {
        return Err(Error::InconsistentBasis { expected: 1 << program.n(), got: state.len() });
    }
    let phi = program.final_phase();
    let amps = state.amplitudes();
    let inside: Vec<C64> = basis
        .states()
        .iter()
        .map(|&s| amps[s as usize] * C64::from_polar(1.0, phi * s.count_ones() as f64))
        .collect();
    let kept: f64 = inside.iter().map(|a| a.norm_sqr()).sum();
    Ok((inside, (state.norm().powi(2) - kept).max(0.0)))
}

/// `|<ψ_ctqw|ψ_ryd>|²` against a subspace reference state.
pub fn ctqw_fidelity(program: &RydbergProgram, state: &StateVector, basis: &SubspaceBasis, reference: &StateVector) -> Result<f64> {
    let (inside, _) = blockade_projection(program, state, basis)?;
    if reference.len() != inside.len() {
        return Err(Error::InconsistentBasis { expected: inside.len(), got: reference.len() });
    }
    let ov: C64 = reference.amplitudes().iter().zip(&inside).map(|(r, a)| r.conj() * a).sum();
    Ok(ov.norm_sqr())
}

/// Z-basis shots from a full-register state through the readout channel.
pub fn sample_shots(state: &StateVector, n: usize, shots: usize, channel: &ReadoutChannel, seed: u64) -> Result<ShotSet> {
    sample_bitstrings(&state.probabilities(), n, shots, channel, seed)
}
