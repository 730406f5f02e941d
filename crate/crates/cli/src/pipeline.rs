//! Config-driven batch run.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use phasewalk::analysis::{amplification, fit_power_law, PowerLawFit};
use phasewalk::ctqw::{run_ansatz, StateVector, WalkGenerator};
use phasewalk::mitigation::{naive_fraction, reconstruct, sample_bitstrings, BootstrapOptions, EmOptions, ReadoutChannel};
use phasewalk::optim::NelderMeadOptions;
use phasewalk::prep_bracelet::{format_gammas, successive_peaks, BraceletSector, PeakProtocolOptions};
use phasewalk::prep_product::{alternating_target, half_target, optimize_product, product_schedule};
use phasewalk::rydberg::{blockade_projection, compile_program, emulate, CompileOptions, EmulateOptions, PhysicalConstants};
use phasewalk::subspace::{dihedral_orbit, format_bits, parse_bits, ConstraintGraph, SubspaceBasis};

use crate::config::{Ansatz, Backend, ExperimentConfig, GraphSpec, MAX_RYDBERG_N, MAX_SHOTS_N};
use crate::CliError;

pub const OUTPUT_VERSION: u32 = 1;

struct Problem {
    basis: SubspaceBasis,
    gen: WalkGenerator,
    sector: Option<BraceletSector>,
}

#[derive(Clone, Debug)]
struct Instance {
    n: usize,
    /// Target names from the config resolving to this bitstring.
    names: Vec<String>,
    z: u64,
    /// Product depth; unused for bracelets.
    p: usize,
}

impl Instance {
    fn label(&self, ansatz: Ansatz) -> String {
        match ansatz {
            Ansatz::Product => format!("N={} target={} p={}", self.n, self.names.join("/"), self.p),
            Ansatz::Bracelet => format!("N={} target={}", self.n, self.names.join("/")),
        }
    }
}

#[derive(Clone, Debug, Default)]
struct ShotsRecord {
    naive: f64,
    em: f64,
    ci: [f64; 2],
}

#[derive(Clone, Debug)]
struct Record {
    size: usize,
    state: String,
    /// tau0, tau1, J_eff for products; tau_eff for bracelets.
    times: Vec<f64>,
    depth: usize,
    gammas: Option<String>,
    ctqw: f64,
    rydberg: Option<(f64, f64)>,
    shots: Option<ShotsRecord>,
    /// Target cardinality used for amplification.
    card: usize,
}

#[derive(Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct InstanceTiming {
    instance: String,
    seconds: f64,
}

#[derive(Serialize)]
struct Failure {
    instance: String,
    error: String,
}

#[derive(Serialize)]
struct FitRecord {
    target: String,
    backend: &'static str,
    p: usize,
    fit: PowerLawFit,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    config_sha256: String,
    phasewalk_version: &'static str,
    cli_version: &'static str,
    workers: usize,
    config: &'a ExperimentConfig,
    outputs: Vec<OutputFile>,
    instances: Vec<InstanceTiming>,
    failures: Vec<Failure>,
    total_seconds: f64,
}

pub struct RunSummary {
    pub rows: usize,
    pub failures: usize,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn build_problem(cfg: &ExperimentConfig, n: usize) -> Result<Problem, CliError> {
    let graph = match &cfg.graph {
        GraphSpec::Ring { .. } => ConstraintGraph::ring(n),
        GraphSpec::Edges { n, edges } => ConstraintGraph::new(*n, edges),
    }
    .map_err(|e| CliError::Validation(format!("config field `graph`: {e}")))?;
    let basis = SubspaceBasis::enumerate(&graph);
    let gen = WalkGenerator::from_basis(&basis);
    let sector = match cfg.ansatz {
        Ansatz::Bracelet => Some(BraceletSector::new(&basis).map_err(|e| CliError::Runtime(e.into()))?),
        Ansatz::Product => None,
    };
    Ok(Problem { basis, gen, sector })
}

fn resolve_target(name: &str, n: usize) -> Option<u64> {
    match name {
        "half" => Some(half_target(n)),
        "mis" => Some(alternating_target(n)),
        bits if bits.len() == n => parse_bits(bits).ok().map(|(z, _)| z),
        _ => None,
    }
}

/// One instance per distinct (N, target, depth); `half` and `mis` coincide at N=5.
fn instances(cfg: &ExperimentConfig) -> Vec<Instance> {
    let mut out: Vec<Instance> = Vec::new();
    let depths = match cfg.ansatz {
        Ansatz::Product => cfg.depths.clone(),
        Ansatz::Bracelet => vec![0],
    };
    for n in cfg.sizes() {
        for name in &cfg.targets {
            let Some(z) = resolve_target(name, n) else { continue };
            let z = match cfg.ansatz {
                Ansatz::Product => z,
                Ansatz::Bracelet => dihedral_orbit(z, n).representative,
            };
            for &p in &depths {
                match out.iter_mut().find(|i| i.n == n && i.z == z && i.p == p) {
                    Some(i) => i.names.push(name.clone()),
                    None => out.push(Instance { n, names: vec![name.clone()], z, p }),
                }
            }
        }
    }
    out
}

fn solve(cfg: &ExperimentConfig, prob: &Problem, inst: &Instance, seed: u64) -> anyhow::Result<Record> {
    let basis = &prob.basis;
    let n = inst.n;
    basis.require_index(inst.z)?;
    let (schedule, mut rec, members) = match cfg.ansatz {
        Ansatz::Product => {
            let sol = optimize_product(basis, &prob.gen, inst.z, inst.p, &NelderMeadOptions::default())?;
            let rec = Record {
                size: basis.len(),
                state: format_bits(inst.z, n),
                times: vec![sol.tau0, sol.tau1, sol.j_eff],
                depth: inst.p,
                gammas: None,
                ctqw: sol.success,
                rydberg: None,
                shots: None,
                card: 1,
            };
            (product_schedule(inst.z, n, inst.p, sol.tau0, sol.tau1), rec, vec![inst.z])
        }
        Ansatz::Bracelet => {
            let sector = prob.sector.as_ref().expect("bracelet sector");
            let t = sector.orbit_index(inst.z)?;
            let b = cfg.bracelet;
            let opts = PeakProtocolOptions { tau_max: b.tau_max, dtau: b.dtau, stop_at: b.stop_at, ..Default::default() };
            let res = successive_peaks(sector, t, &opts)?;
            let plan = &res.best.plan;
            let orbit = dihedral_orbit(inst.z, n);
            let rec = Record {
                size: basis.len(),
                state: format_bits(orbit.representative, n),
                times: vec![plan.tau_eff],
                depth: plan.p,
                gammas: Some(format_gammas(&plan.gamma)),
                ctqw: res.best.success,
                rydberg: None,
                shots: None,
                card: 1,
            };
            (plan.schedule(), rec, orbit.members)
        }
    };
    // full-register probabilities for sampling
    let mut full: Option<Vec<f64>> = None;
    if cfg.backends.contains(&Backend::Rydberg) {
        anyhow::ensure!(n <= MAX_RYDBERG_N, "rydberg backend emulates at most {MAX_RYDBERG_N} atoms");
        let program = compile_program(&schedule, n, &PhysicalConstants::default(), &CompileOptions::default())?;
        let e = emulate(&program, &EmulateOptions::default())?;
        let (inside, leak) = blockade_projection(&program, &e.state, basis)?;
        let success: f64 =
            members.iter().map(|&m| basis.require_index(m).map(|k| inside[k].norm_sqr())).sum::<phasewalk::Result<f64>>()?;
        rec.rydberg = Some((success, leak));
        full = Some(e.state.probabilities());
    }
    if cfg.backends.contains(&Backend::Shots) {
        anyhow::ensure!(n <= MAX_SHOTS_N, "shot sampling supports at most {MAX_SHOTS_N} sites");
        let probs = match full {
            Some(p) => p,
            None => {
                let psi: StateVector = run_ansatz(&schedule, &prob.gen, &schedule.phasor_for(basis), 0)?;
                let mut p = vec![0.0; 1 << n];
                for (&s, q) in basis.states().iter().zip(psi.probabilities()) {
                    p[s as usize] = q;
                }
                p
            }
        };
        let ch = ReadoutChannel::new(cfg.channel.p00, cfg.channel.p11)?;
        let shots = sample_bitstrings(&probs, n, cfg.shots.count, &ch, seed)?;
        let idx: Vec<usize> = members.iter().map(|&m| basis.require_index(m)).collect::<phasewalk::Result<_>>()?;
        let boot = BootstrapOptions { resamples: cfg.shots.resamples, level: cfg.shots.level, seed };
        let r = reconstruct(&shots, basis, &idx, &EmOptions::default(), &boot)?;
        rec.shots = Some(ShotsRecord { naive: naive_fraction(&shots, &members), em: r.target, ci: r.ci });
    }
    Ok(rec)
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn table_csv(cfg: &ExperimentConfig, rows: &[(Instance, Record)]) -> String {
    let mut head: Vec<&str> = match cfg.ansatz {
        Ansatz::Product => vec!["N", "size", "state", "p", "tau0", "tau1", "J_eff"],
        Ansatz::Bracelet => vec!["N", "size", "state", "depth", "tau_eff", "gammas"],
    };
    head.push("P_ctqw");
    if cfg.backends.contains(&Backend::Rydberg) {
        head.extend(["P_rydberg", "leakage"]);
    }
    if cfg.backends.contains(&Backend::Shots) {
        head.extend(["P_naive", "P_em", "ci_low", "ci_high"]);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&head).expect("in-memory write");
    for (inst, r) in rows {
        let mut line = vec![inst.n.to_string(), r.size.to_string(), r.state.clone(), r.depth.to_string()];
        line.extend(r.times.iter().map(|&t| f6(t)));
        if let Some(g) = &r.gammas {
            line.push(g.clone());
        }
        line.push(f6(r.ctqw));
        if let Some((p, l)) = r.rydberg {
            line.extend([f6(p), f6(l)]);
        }
        if let Some(s) = &r.shots {
            line.extend([f6(s.naive), f6(s.em), f6(s.ci[0]), f6(s.ci[1])]);
        }
        w.write_record(&line).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn success_for(r: &Record, b: Backend) -> Option<f64> {
    match b {
        Backend::Ctqw => Some(r.ctqw),
        Backend::Rydberg => r.rydberg.map(|x| x.0),
        Backend::Shots => r.shots.as_ref().map(|s| s.em),
    }
}

/// Amplification tables and power-law fits per (target, backend).
fn scaling_outputs(cfg: &ExperimentConfig, rows: &[(Instance, Record)]) -> (BTreeMap<String, String>, Vec<FitRecord>) {
    let mut files = BTreeMap::new();
    let mut fits = Vec::new();
    let mut backends = cfg.backends.clone();
    backends.sort();
    backends.dedup();
    for target in &cfg.targets {
        for &b in &backends {
            let pts: Vec<(&Instance, &Record, f64)> = rows
                .iter()
                .filter(|(i, _)| i.names.contains(target))
                .filter_map(|(i, r)| success_for(r, b).map(|s| (i, r, s)))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["N", "size", "p", "success", "amplification"]).expect("in-memory write");
            for (i, r, s) in &pts {
                let a = amplification(r.size, s.clamp(0.0, 1.0), r.card).map(|a| a.amplification).unwrap_or(f64::NAN);
                w.write_record([i.n.to_string(), r.size.to_string(), r.depth.to_string(), f6(*s), f6(a)])
                    .expect("in-memory write");
            }
            files.insert(
                format!("fig4_{target}_{}.csv", b.name()),
                String::from_utf8(w.into_inner().expect("flush")).expect("utf8"),
            );
            let mut depths: Vec<usize> = pts.iter().map(|(_, r, _)| r.depth).collect();
            depths.sort_unstable();
            depths.dedup();
            for p in depths {
                let (v, a): (Vec<f64>, Vec<f64>) = pts
                    .iter()
                    .filter(|(_, r, _)| r.depth == p)
                    .map(|(_, r, s)| (r.size as f64, r.size as f64 * s / r.card as f64))
                    .unzip();
                if let Ok(fit) = fit_power_law(&v, &a, None) {
                    fits.push(FitRecord { target: target.clone(), backend: b.name(), p, fit });
                }
            }
        }
    }
    (files, fits)
}

pub fn run(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let mut problems = BTreeMap::new();
    for n in cfg.sizes() {
        problems.insert(n, build_problem(cfg, n)?);
    }
    let insts = instances(cfg);
    if insts.is_empty() {
        return Err(CliError::Validation("config field `targets`: no target matches any graph size".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(e.into()))?;
    let results: Vec<(anyhow::Result<Record>, f64)> = pool.install(|| {
        insts
            .par_iter()
            .enumerate()
            .map(|(k, inst)| {
                let t = Instant::now();
                let r = solve(cfg, &problems[&inst.n], inst, cfg.seed.wrapping_add(k as u64));
                (r, t.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for (inst, (res, secs)) in insts.into_iter().zip(results) {
        let label = inst.label(cfg.ansatz);
        timings.push(InstanceTiming { instance: label.clone(), seconds: secs });
        match res {
            Ok(r) => rows.push((inst, r)),
            Err(e) => failures.push(Failure { instance: label, error: format!("{e:#}") }),
        }
    }

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    let table = match cfg.ansatz {
        Ansatz::Product => "product.csv",
        Ansatz::Bracelet => "bracelet.csv",
    };
    files.insert(table.into(), table_csv(cfg, &rows));
    if cfg.ansatz == Ansatz::Product {
        let (figs, fits) = scaling_outputs(cfg, &rows);
        files.extend(figs);
        let doc = serde_json::json!({ "schema_version": OUTPUT_VERSION, "fits": fits });
        files.insert("fits.json".into(), serde_json::to_string_pretty(&doc).expect("json") + "\n");
    }
    let mut outputs = Vec::new();
    for (name, body) in &files {
        let path = out.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(OutputFile { file: name.clone(), sha256: hex::encode(Sha256::digest(body.as_bytes())) });
    }
    let manifest = Manifest {
        schema_version: OUTPUT_VERSION,
        config_sha256: config_hash(cfg),
        phasewalk_version: phasewalk::VERSION,
        cli_version: env!("CARGO_PKG_VERSION"),
        workers,
        config: cfg,
        outputs,
        instances: timings,
        failures,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("json") + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(RunSummary { rows: rows.len(), failures: manifest.failures.len() })
}
