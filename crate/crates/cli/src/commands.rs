//! Subcommand implementations. Files written here carry `schema_version`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::Deserialize;
use serde_json::{json, Value};

use phasewalk::analysis::{fit_power_law, quench, quench_rydberg, QuenchMode};
use phasewalk::ctqw::{run_ansatz, AnsatzSchedule, StateVector, WalkGenerator};
use phasewalk::mitigation::{reconstruct, sample_bitstrings, BootstrapOptions, EmOptions, ReadoutChannel, ShotSet};
use phasewalk::optim::NelderMeadOptions;
use phasewalk::prep_bracelet::{format_gammas, successive_peaks, BraceletSector, PeakProtocolOptions};
use phasewalk::prep_product::{alternating_target, half_target, optimize_product, product_schedule};
use phasewalk::rydberg::{
    blockade_projection, compile_program, emulate, ring_eta, ring_layout, CompileOptions, EmulateOptions,
    LayoutOptions, PhysicalConstants, RydbergProgram,
};
use phasewalk::subspace::{dihedral_orbit, format_bits, parse_bits, SubspaceBasis};

use crate::config::{Backend, ExperimentConfig, MAX_RYDBERG_N};
use crate::pipeline::{self, OUTPUT_VERSION};
use crate::{Cli, CliError, Command, Global};

type Res<T> = Result<T, CliError>;

fn invalid<T>(msg: impl Into<String>) -> Res<T> {
    Err(CliError::Validation(msg.into()))
}

fn read(path: &Path) -> Res<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&PathBuf>, text: &str) -> Res<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json(out: Option<&PathBuf>, v: &Value) -> Res<()> {
    emit(out, &(serde_json::to_string_pretty(v).expect("json") + "\n"))
}

fn ring(n: usize) -> Res<SubspaceBasis> {
    if !(3..=63).contains(&n) {
        return invalid(format!("ring size {n} outside 3..=63"));
    }
    Ok(SubspaceBasis::ring(n)?)
}

/// `half`, `mis` or a bitstring of length `n`.
fn target(name: &str, n: usize) -> Res<u64> {
    match name {
        "half" => Ok(half_target(n)),
        "mis" => Ok(alternating_target(n)),
        bits => {
            let (z, len) = parse_bits(bits)?;
            if len != n {
                return invalid(format!("target {bits} has {len} sites, expected {n}"));
            }
            Ok(z)
        }
    }
}

fn load_config(g: &Global) -> Res<ExperimentConfig> {
    let Some(path) = &g.config else { return invalid("--config is required") };
    let mut cfg = ExperimentConfig::parse(&read(path)?).map_err(|e| match e {
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if !g.backend.is_empty() {
        cfg.backends = g.backend.clone();
    }
    if let Some(o) = &g.out {
        cfg.out = Some(o.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn dispatch(cli: Cli) -> Res<()> {
    if cli.global.workers == 0 {
        return invalid("--workers must be at least 1");
    }
    let g = &cli.global;
    match cli.command {
        Command::Enumerate(a) => enumerate(g, a),
        Command::PrepProduct(a) => prep_product(g, a),
        Command::PrepBracelet(a) => prep_bracelet(g, a),
        Command::Compile(a) => compile(g, a),
        Command::Emulate(a) => emulate_cmd(g, a),
        Command::Sample(a) => sample(g, a),
        Command::Mitigate(a) => mitigate(g, a),
        Command::Analyze(a) => analyze(g, a),
        Command::Quench(a) => quench_cmd(g, a),
        Command::Run => run(g),
    }
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    /// Ring size.
    #[arg(long)]
    pub ring: Option<usize>,
    /// Also list every independent set.
    #[arg(long)]
    pub list: bool,
}

fn enumerate(g: &Global, a: EnumerateArgs) -> Res<()> {
    let sizes = match (a.ring, &g.config) {
        (Some(n), _) => vec![n],
        (None, Some(_)) => load_config(g)?.sizes(),
        (None, None) => return invalid("give --ring N or --config"),
    };
    let mut text = String::new();
    for n in sizes {
        let b = ring(n)?;
        text += &format!("N={n} |V|={}\n", b.len());
        if a.list {
            for &s in b.states() {
                text += &format_bits(s, n);
                text.push('\n');
            }
        }
    }
    emit(g.out.as_ref(), &text)
}

#[derive(Debug, Args)]
pub struct PrepProductArgs {
    #[arg(long)]
    pub ring: usize,
    /// `half`, `mis` or a bitstring.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
}

fn prep_product(g: &Global, a: PrepProductArgs) -> Res<()> {
    let b = ring(a.ring)?;
    let z = target(&a.target, a.ring)?;
    if a.p == 0 {
        return invalid("--p must be at least 1");
    }
    let gen = WalkGenerator::from_basis(&b);
    let sol = optimize_product(&b, &gen, z, a.p, &NelderMeadOptions::default())?;
    emit_json(
        g.out.as_ref(),
        &json!({
            "schema_version": OUTPUT_VERSION,
            "kind": "product",
            "n": a.ring,
            "size": b.len(),
            "state": format_bits(z, a.ring),
            "p": a.p,
            "solution": sol,
            "schedule": product_schedule(z, a.ring, a.p, sol.tau0, sol.tau1),
        }),
    )
}

#[derive(Debug, Args)]
pub struct PrepBraceletArgs {
    #[arg(long)]
    pub ring: usize,
    /// Any member of the target orbit, or `mis`.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 20.0)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub dtau: f64,
    /// Stop once this success is reached.
    #[arg(long)]
    pub stop_at: Option<f64>,
}

fn prep_bracelet(g: &Global, a: PrepBraceletArgs) -> Res<()> {
    let b = ring(a.ring)?;
    let z = target(&a.target, a.ring)?;
    if !(a.dtau > 0.0 && a.tau_max > a.dtau) {
        return invalid("need 0 < --dtau < --tau-max");
    }
    let sector = BraceletSector::new(&b)?;
    let t = sector.orbit_index(z)?;
    let opts = PeakProtocolOptions { tau_max: a.tau_max, dtau: a.dtau, stop_at: a.stop_at, ..Default::default() };
    let res = successive_peaks(&sector, t, &opts)?;
    let plan = &res.best.plan;
    let orbit = dihedral_orbit(z, a.ring);
    let attempts: Vec<Value> =
        res.attempts.iter().map(|o| json!({"depth": o.plan.p, "tau_eff": o.plan.tau_eff, "success": o.success})).collect();
    emit_json(
        g.out.as_ref(),
        &json!({
            "schema_version": OUTPUT_VERSION,
            "kind": "bracelet",
            "n": a.ring,
            "size": b.len(),
            "state": orbit.label(),
            "orbit_size": orbit.size(),
            "depth": plan.p,
            "tau_eff": plan.tau_eff,
            "gammas": format_gammas(&plan.gamma),
            "success": res.best.success,
            "attempts": attempts,
            "schedule": plan.schedule(),
        }),
    )
}

/// Schedule plus register size from a prep file or a bare schedule (`--ring` required then).
fn load_schedule(path: &Path, ring: Option<usize>) -> Res<(AnsatzSchedule, usize)> {
    let v: Value = serde_json::from_str(&read(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let (sched, n) = match v.get("schedule") {
        Some(s) => (s.clone(), v.get("n").and_then(Value::as_u64).map(|n| n as usize)),
        None => (v, None),
    };
    let sched: AnsatzSchedule =
        serde_json::from_value(sched).map_err(|e| CliError::Validation(format!("{}: schedule: {e}", path.display())))?;
    let n = match (ring, n) {
        (Some(r), Some(f)) if r != f => return invalid(format!("--ring {r} disagrees with the file's n={f}")),
        (Some(r), _) => r,
        (None, Some(f)) => f,
        (None, None) => return invalid("bare schedules need --ring"),
    };
    Ok((sched, n))
}

fn load_program(path: &Path) -> Res<RydbergProgram> {
    let v: Value = serde_json::from_str(&read(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let p = v.get("program").cloned().ok_or_else(|| CliError::Validation(format!("{}: no `program` field", path.display())))?;
    serde_json::from_value(p).map_err(|e| CliError::Validation(format!("{}: program: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    /// Prep output or bare schedule JSON.
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long)]
    pub ring: Option<usize>,
    /// Blockade prefactor; computed for the ring when omitted.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Multiplier on the ring radius.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Quantize positions to 0.1 μm.
    #[arg(long)]
    pub snap: bool,
}

fn compile(g: &Global, a: CompileArgs) -> Res<()> {
    let (sched, n) = load_schedule(&a.schedule, a.ring)?;
    if !(a.scale > 0.0) {
        return invalid("--scale must be positive");
    }
    let opts = CompileOptions { eta: a.eta, layout: LayoutOptions { snap: a.snap, scale: a.scale } };
    let p = compile_program(&sched, n, &PhysicalConstants::default(), &opts)?;
    for w in &p.warnings {
        eprintln!("warning: {w}");
    }
    emit_json(
        g.out.as_ref(),
        &json!({ "schema_version": OUTPUT_VERSION, "kind": "program", "export": p.export(), "program": p }),
    )
}

#[derive(Debug, Args)]
pub struct EmulateArgs {
    /// Compiled program JSON.
    #[arg(long)]
    pub program: PathBuf,
    /// Report the success probability of this target (bitstring, `half` or `mis`).
    #[arg(long)]
    pub target: Option<String>,
    /// Count the whole dihedral orbit of the target.
    #[arg(long)]
    pub orbit: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
}

fn emulate_cmd(g: &Global, a: EmulateArgs) -> Res<()> {
    let p = load_program(&a.program)?;
    let n = p.n();
    if n > MAX_RYDBERG_N {
        return invalid(format!("emulation supports at most {MAX_RYDBERG_N} atoms"));
    }
    let b = ring(n)?;
    let e = emulate(&p, &EmulateOptions { dt: a.dt, ..Default::default() })?;
    let (inside, leak) = blockade_projection(&p, &e.state, &b)?;
    let probs: BTreeMap<String, f64> =
        b.states().iter().zip(&inside).map(|(&s, a)| (format_bits(s, n), a.norm_sqr())).collect();
    let mut doc = json!({
        "schema_version": OUTPUT_VERSION,
        "kind": "emulation",
        "n": n,
        "dt": e.dt,
        "error_estimate": e.error_estimate,
        "leakage": leak,
        "probabilities": probs,
    });
    if let Some(t) = &a.target {
        let z = target(t, n)?;
        let members = if a.orbit { dihedral_orbit(z, n).members } else { vec![z] };
        let mut s = 0.0;
        for m in members {
            s += inside[b.require_index(m)?].norm_sqr();
        }
        doc["target"] = json!({ "state": format_bits(z, n), "orbit": a.orbit, "success": s });
    }
    emit_json(g.out.as_ref(), &doc)
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Prep output (ideal walk) or compiled program (emulated atoms).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub shots: usize,
    #[arg(long, default_value_t = 0.99)]
    pub p00: f64,
    #[arg(long, default_value_t = 0.93)]
    pub p11: f64,
}

fn sample(g: &Global, a: SampleArgs) -> Res<()> {
    let text = read(&a.input)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", a.input.display())))?;
    let (probs, n) = if v.get("program").is_some() {
        let p = load_program(&a.input)?;
        if p.n() > MAX_RYDBERG_N {
            return invalid(format!("emulation supports at most {MAX_RYDBERG_N} atoms"));
        }
        let e = emulate(&p, &EmulateOptions::default())?;
        (e.state.probabilities(), p.n())
    } else {
        let (sched, n) = load_schedule(&a.input, None)?;
        let b = ring(n)?;
        let gen = WalkGenerator::from_basis(&b);
        let psi: StateVector = run_ansatz(&sched, &gen, &sched.phasor_for(&b), 0)?;
        let mut full = vec![0.0; 1 << n];
        for (&s, q) in b.states().iter().zip(psi.probabilities()) {
            full[s as usize] = q;
        }
        (full, n)
    };
    let ch = ReadoutChannel::new(a.p00, a.p11)?;
    let shots = sample_bitstrings(&probs, n, a.shots, &ch, g.seed.unwrap_or(0))?;
    emit(g.out.as_ref(), &shots.to_text())
}

#[derive(Debug, Args)]
pub struct MitigateArgs {
    /// Shot file written by `sample`.
    #[arg(long)]
    pub shots: PathBuf,
    /// Bitstring, `half` or `mis`.
    #[arg(long)]
    pub target: String,
    /// Count the whole dihedral orbit of the target.
    #[arg(long)]
    pub orbit: bool,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

fn mitigate(g: &Global, a: MitigateArgs) -> Res<()> {
    let shots = ShotSet::from_text(&read(&a.shots)?)?;
    let b = ring(shots.n)?;
    let z = target(&a.target, shots.n)?;
    let members = if a.orbit { dihedral_orbit(z, shots.n).members } else { vec![z] };
    let idx: Vec<usize> = members.iter().map(|&m| b.require_index(m)).collect::<phasewalk::Result<_>>()?;
    let boot = BootstrapOptions { resamples: a.resamples, level: a.level, seed: g.seed.unwrap_or(shots.seed) };
    let r = reconstruct(&shots, &b, &idx, &EmOptions::default(), &boot)?;
    emit_json(
        g.out.as_ref(),
        &json!({
            "schema_version": OUTPUT_VERSION,
            "kind": "reconstruction",
            "state": format_bits(z, shots.n),
            "orbit": a.orbit,
            "naive": phasewalk::mitigation::naive_fraction(&shots, &members),
            "result": r,
        }),
    )
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Amplification table (`fig4_*.csv` from `run`).
    #[arg(long)]
    pub input: PathBuf,
    /// Restrict to instances with at least this many sites.
    #[arg(long, default_value_t = 0)]
    pub min_n: usize,
}

#[derive(Debug, Deserialize)]
struct AmpRow {
    #[serde(rename = "N")]
    n: usize,
    size: usize,
    p: usize,
    amplification: f64,
}

fn analyze(g: &Global, a: AnalyzeArgs) -> Res<()> {
    let mut rdr = csv::Reader::from_path(&a.input).map_err(|e| CliError::Validation(format!("{}: {e}", a.input.display())))?;
    let mut by_p: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<AmpRow>().enumerate() {
        let r = row.map_err(|e| CliError::Validation(format!("{} row {}: {e}", a.input.display(), line + 2)))?;
        if r.n >= a.min_n {
            let e = by_p.entry(r.p).or_default();
            e.0.push(r.size as f64);
            e.1.push(r.amplification);
        }
    }
    if by_p.is_empty() {
        return invalid("no rows to fit");
    }
    let mut fits = Vec::new();
    for (p, (v, amp)) in by_p {
        let f = fit_power_law(&v, &amp, None)?;
        fits.push(json!({ "p": p, "instances": v.len(), "fit": f, "speedup_order": f.speedup.to_string() }));
    }
    emit_json(g.out.as_ref(), &json!({ "schema_version": OUTPUT_VERSION, "kind": "fits", "fits": fits }))
}

#[derive(Debug, Args)]
pub struct QuenchArgs {
    #[arg(long)]
    pub ring: usize,
    /// Any member of the starting orbit.
    #[arg(long)]
    pub orbit: String,
    #[arg(long, default_value_t = 8.0)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub dtau: f64,
}

fn quench_cmd(g: &Global, a: QuenchArgs) -> Res<()> {
    let b = ring(a.ring)?;
    let z = target(&a.orbit, a.ring)?;
    b.require_index(z)?;
    if !(a.dtau > 0.0 && a.tau_max >= 0.0) {
        return invalid("need --dtau > 0 and --tau-max >= 0");
    }
    let orbit = dihedral_orbit(z, a.ring);
    let steps = (a.tau_max / a.dtau).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * a.dtau).collect();
    let backend = match g.backend.as_slice() {
        [] | [Backend::Ctqw] => Backend::Ctqw,
        [Backend::Rydberg] => Backend::Rydberg,
        _ => return invalid("quench takes one backend: ctqw or rydberg"),
    };
    let traces = match backend {
        Backend::Ctqw => {
            let gen = WalkGenerator::from_basis(&b);
            [quench(&b, &gen, &orbit, &grid, QuenchMode::Coherent)?, quench(&b, &gen, &orbit, &grid, QuenchMode::Incoherent)?]
        }
        _ => {
            if a.ring > MAX_RYDBERG_N {
                return invalid(format!("emulation supports at most {MAX_RYDBERG_N} atoms"));
            }
            let c = PhysicalConstants::default();
            let layout = ring_layout(a.ring, &c, c.omega_max, ring_eta(a.ring)?.eta, &LayoutOptions::default())?;
            let dim = 1usize << a.ring;
            let amp = 1.0 / (orbit.size() as f64).sqrt();
            let mut coherent = vec![phasewalk::ctqw::C64::new(0.0, 0.0); dim];
            for &m in &orbit.members {
                coherent[m as usize] = phasewalk::ctqw::C64::new(amp, 0.0);
            }
            let singles: Vec<StateVector> = orbit.members.iter().map(|&m| StateVector::basis_state(dim, m as usize)).collect();
            let opts = EmulateOptions::default();
            [
                quench_rydberg(&layout, &c, &[StateVector::new(coherent)], &orbit, &grid, QuenchMode::Coherent, &opts)?,
                quench_rydberg(&layout, &c, &singles, &orbit, &grid, QuenchMode::Incoherent, &opts)?,
            ]
        }
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tau", "density_coherent", "density_incoherent", "orbit_coherent", "orbit_incoherent"])
        .expect("in-memory write");
    for k in 0..grid.len() {
        w.write_record([
            format!("{:.6}", grid[k]),
            format!("{:.8}", traces[0].density[k]),
            format!("{:.8}", traces[1].density[k]),
            format!("{:.8}", traces[0].orbit_population[k]),
            format!("{:.8}", traces[1].orbit_population[k]),
        ])
        .expect("in-memory write");
    }
    emit(g.out.as_ref(), &String::from_utf8(w.into_inner().expect("flush")).expect("utf8"))
}

fn run(g: &Global) -> Res<()> {
    let cfg = load_config(g)?;
    let Some(out) = cfg.out.clone() else { return invalid("no output directory: set `out` or pass --out") };
    let s = pipeline::run(&cfg, Path::new(&out), g.workers)?;
    eprintln!("{} rows written to {out}, {} failed instances", s.rows, s.failures);
    if s.failures > 0 {
        return Err(CliError::Runtime(anyhow::anyhow!("{} instances failed; see manifest.json", s.failures)));
    }
    Ok(())
}
