//! Scenario runner behind the `morsefn` binary: a TOML config names the
//! systems, maps and tolerances, each command writes one JSON report.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::complex::{build_morse_complex, homology, to_rows, ChainComplex, IntMatrix};
use crate::critical::{catalogue_json, find_critical_points, CriticalPoint};
use crate::cup::{cup_report, cup_tensor, draw_offsets, seeded_triple, TripleSystem};
use crate::dynamics::{flow, flow_with_jacobian, trajectory};
use crate::functor::{
    attaching_degree, chain_map_by_flow, chain_map_by_intersection, check_morse_smale, check_stably_regular, check_transverse_map, compose_experiment, induced_on_homology,
    Composition, MapProblem, SmoothMap,
};
use crate::geometry::{builtin_system, MorseSystem, Point, SystemSpec};
use crate::invariants::count_trajectories;
use crate::settings::Tolerances;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Crit,
    Complex,
    Chainmap,
    Flowmap,
    Compose,
    Cup,
    DegreeCheck,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Crit => "crit",
            Command::Complex => "complex",
            Command::Chainmap => "chainmap",
            Command::Flowmap => "flowmap",
            Command::Compose => "compose",
            Command::Cup => "cup",
            Command::DegreeCheck => "degree-check",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeConfig {
    pub middle: SystemSpec,
    pub target: SystemSpec,
    pub phi: SmoothMap,
    pub psi: SmoothMap,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripleConfig {
    /// Three explicit systems; when empty, offsets of `base` are drawn from the seed.
    #[serde(default)]
    pub systems: Vec<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<SystemSpec>,
    #[serde(default = "default_draws")]
    pub max_draws: usize,
}

fn default_draws() -> usize {
    12
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Seeded offset redraws on which `∂² = 0` is rechecked.
    pub perturbations: usize,
    /// Seeded (point, time) pairs for the variational Jacobian check.
    pub jacobian_pairs: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { perturbations: 2, jacobian_pairs: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default)]
    pub commands: Vec<Command>,
    pub system: SystemSpec,
    /// Target of `chainmap` and `flowmap`; the source system when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<SmoothMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compose: Option<ComposeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triple: Option<TripleConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.tolerances.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

impl Status {
    fn from(ok: bool) -> Self {
        if ok { Status::Pass } else { Status::Fail }
    }
}

pub struct Report {
    pub command: Command,
    pub status: Status,
    pub result: Value,
    pub csv: Option<String>,
}

impl Report {
    /// The full report with the effective config, tolerances and seed.
    pub fn to_json(&self, cfg: &ScenarioConfig) -> Value {
        json!({
            "command": self.command.name(),
            "seed": cfg.seed,
            "tolerances": cfg.tolerances,
            "config": cfg,
            "status": self.status,
            "result": self.result,
        })
    }
}

struct Loaded {
    sys: MorseSystem,
    cps: Vec<CriticalPoint>,
    complex: ChainComplex,
}

fn load(spec: &SystemSpec, tol: &Tolerances) -> Result<Loaded> {
    let sys = builtin_system(spec)?;
    let cps = find_critical_points(&sys, tol)?;
    let complex = build_morse_complex(&sys, &cps, tol)?;
    Ok(Loaded { sys, cps, complex })
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 records")
}

fn matrix_rows(name: &str, ms: &[IntMatrix]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (k, m) in ms.iter().enumerate() {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                rows.push(vec![name.to_string(), k.to_string(), i.to_string(), j.to_string(), m[(i, j)].to_string()]);
            }
        }
    }
    rows
}

fn euler(cps: &[CriticalPoint]) -> i64 {
    cps.iter().map(|c| if c.index % 2 == 0 { 1 } else { -1 }).sum()
}

fn crit(cfg: &ScenarioConfig) -> Result<Report> {
    let tol = &cfg.tolerances;
    let sys = builtin_system(&cfg.system)?;
    let cps = find_critical_points(&sys, tol)?;
    let expected = sys.manifold.euler_characteristic();
    let rows = cps
        .iter()
        .map(|c| {
            let mut r = vec![c.id.to_string(), c.index.to_string(), format!("{:.12e}", c.value), c.point.chart.to_string()];
            r.extend(c.point.coords.iter().map(|x| format!("{x:.12e}")));
            r
        })
        .collect();
    let n = sys.dim();
    let mut header = vec!["id", "index", "value", "chart"];
    let coord_names: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    header.extend(coord_names.iter().map(|s| s.as_str()));
    Ok(Report {
        command: Command::Crit,
        status: Status::from(euler(&cps) == expected),
        result: json!({ "manifold": sys.manifold.describe(), "catalogue": catalogue_json(&cps), "euler": euler(&cps), "expected_euler": expected }),
        csv: Some(csv_string(&header, rows)),
    })
}

fn complex(cfg: &ScenarioConfig) -> Result<Report> {
    let l = load(&cfg.system, &cfg.tolerances)?;
    let squared = l.complex.check_boundary_squared();
    let h = homology(&l.complex)?;
    let expected = l.sys.manifold.betti_numbers();
    let ok = squared.is_ok() && h.betti == expected && h.torsion.iter().all(|t| t.is_empty());
    Ok(Report {
        command: Command::Complex,
        status: Status::from(ok),
        result: json!({
            "manifold": l.sys.manifold.describe(),
            "complex": l.complex.to_json(),
            "boundary_squared_zero": squared.is_ok(),
            "homology": h,
            "expected_betti": expected,
        }),
        csv: Some(csv_string(&["matrix", "degree", "row", "col", "value"], matrix_rows("boundary", &l.complex.boundaries))),
    })
}

fn map_pair(cfg: &ScenarioConfig) -> Result<(Loaded, Loaded, SmoothMap)> {
    let src = load(&cfg.system, &cfg.tolerances)?;
    let dst = load(cfg.target.as_ref().unwrap_or(&cfg.system), &cfg.tolerances)?;
    Ok((src, dst, cfg.map.clone().unwrap_or(SmoothMap::Identity)))
}

fn homology_maps(phi: &crate::functor::ChainMap, src: &ChainComplex, dst: &ChainComplex) -> Result<Vec<Vec<Vec<i64>>>> {
    (0..=src.top_degree().min(dst.top_degree())).map(|k| Ok(to_rows(&induced_on_homology(phi, src, dst, k)?))).collect()
}

fn chainmap(cfg: &ScenarioConfig) -> Result<Report> {
    let tol = &cfg.tolerances;
    let (src, dst, map) = map_pair(cfg)?;
    let problem = MapProblem { src: &src.sys, src_cps: &src.cps, dst: &dst.sys, dst_cps: &dst.cps, map: &map };
    let transverse = check_transverse_map(&problem, tol)?;
    let phi = chain_map_by_intersection(&problem, &src.complex, &dst.complex, tol)?;
    Ok(Report {
        command: Command::Chainmap,
        status: Status::from(transverse.pass),
        result: json!({
            "chain_map": phi.to_json(),
            "homology": homology_maps(&phi, &src.complex, &dst.complex)?,
            "transversality": transverse,
        }),
        csv: Some(csv_string(&["matrix", "degree", "row", "col", "value"], matrix_rows("chain_map", &phi.matrices))),
    })
}

fn flowmap(cfg: &ScenarioConfig) -> Result<Report> {
    let tol = &cfg.tolerances;
    let (src, dst, map) = map_pair(cfg)?;
    let problem = MapProblem { src: &src.sys, src_cps: &src.cps, dst: &dst.sys, dst_cps: &dst.cps, map: &map };
    let by_flow = chain_map_by_flow(&problem, &src.complex, &dst.complex, tol, cfg.seed)?;
    let by_intersection = chain_map_by_intersection(&problem, &src.complex, &dst.complex, tol)?;
    let equal = by_flow.map == by_intersection;
    let mut rows = matrix_rows("flow", &by_flow.map.matrices);
    rows.extend(matrix_rows("intersection", &by_intersection.matrices));
    Ok(Report {
        command: Command::Flowmap,
        status: Status::from(equal),
        result: json!({
            "flow": by_flow.map.to_json(),
            "flow_time": by_flow.time,
            "intersection": by_intersection.to_json(),
            "equal": equal,
        }),
        csv: Some(csv_string(&["matrix", "degree", "row", "col", "value"], rows)),
    })
}

fn compose(cfg: &ScenarioConfig) -> Result<Report> {
    let tol = &cfg.tolerances;
    let c = cfg.compose.as_ref().ok_or_else(|| Error::Config("`compose` needs a [compose] section".into()))?;
    let x = load(&cfg.system, tol)?;
    let y = load(&c.middle, tol)?;
    let z = load(&c.target, tol)?;
    let systems = Composition { x: (&x.sys, &x.cps, &x.complex), y: (&y.sys, &y.cps, &y.complex), z: (&z.sys, &z.cps, &z.complex) };
    let report = compose_experiment(&systems, &c.phi, &c.psi, tol);
    let stable = check_stably_regular(&y.sys, &z.sys, &z.cps, &c.psi, c.samples, cfg.seed, tol)?;
    Ok(Report {
        command: Command::Compose,
        status: Status::from(report.errors.is_empty() && report.equal),
        result: json!({ "composition": report, "psi_stably_regular": stable }),
        csv: None,
    })
}

fn cup(cfg: &ScenarioConfig) -> Result<Report> {
    let tol = &cfg.tolerances;
    let t = cfg.triple.clone().unwrap_or(TripleConfig { systems: vec![], base: None, max_draws: default_draws() });
    let (ts, tensor) = match t.systems.len() {
        3 => {
            let [a, b, c]: [SystemSpec; 3] = t.systems.clone().try_into().expect("length checked");
            let ts = TripleSystem::new([a, b, c], tol)?;
            let tensor = cup_tensor(&ts, tol)?;
            (ts, tensor)
        }
        0 => seeded_triple(t.base.as_ref().unwrap_or(&cfg.system), cfg.seed, t.max_draws, tol)?,
        n => return Err(Error::Config(format!("[triple] systems needs exactly three entries, got {n}"))),
    };
    let result = cup_report(&ts, &tensor, tol)?;
    let pairing_ok = result["pairing"].is_null() || (result["pairing"]["antisymmetric"] == json!(true) && result["pairing"]["unimodular"] == json!(true));
    let ok = result["bichain"]["pass"] == json!(true) && pairing_ok;
    let rows = tensor.records.iter().map(|r| vec![r.x1.to_string(), r.x2.to_string(), r.x3.to_string(), r.count.to_string()]).collect();
    Ok(Report { command: Command::Cup, status: Status::from(ok), result, csv: Some(csv_string(&["x1", "x2", "x3", "count"], rows)) })
}

#[derive(Debug, Clone, Serialize)]
struct DegreeRow {
    x: usize,
    y: usize,
    count: i64,
    degree: i64,
    equal: bool,
}

fn degree_rows(l: &Loaded, tol: &Tolerances) -> Result<Vec<DegreeRow>> {
    let mut rows = Vec::new();
    for x in &l.cps {
        for y in l.cps.iter().filter(|y| y.index + 1 == x.index) {
            let count = count_trajectories(&l.sys, &l.cps, x, y, tol)?;
            let degree = attaching_degree(&l.sys, &l.cps, x, y, tol)?;
            rows.push(DegreeRow { x: x.id, y: y.id, count, degree, equal: count == degree });
        }
    }
    Ok(rows)
}

fn degree_check(cfg: &ScenarioConfig) -> Result<Report> {
    let l = load(&cfg.system, &cfg.tolerances)?;
    let rows = degree_rows(&l, &cfg.tolerances)?;
    let csv = csv_string(&["x", "y", "count", "degree", "equal"], rows.iter().map(|r| vec![r.x.to_string(), r.y.to_string(), r.count.to_string(), r.degree.to_string(), r.equal.to_string()]).collect());
    Ok(Report { command: Command::DegreeCheck, status: Status::from(rows.iter().all(|r| r.equal)), result: json!({ "pairs": rows }), csv: Some(csv) })
}

/// Largest relative error of the variational Jacobian against central
/// differences over seeded (point, time) pairs. Times are scaled by the
/// fastest rate at the critical points.
pub fn jacobian_defect(sys: &MorseSystem, cps: &[CriticalPoint], pairs: usize, seed: u64, tol: &Tolerances) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let rate = cps.iter().flat_map(|c| c.eigenvalues.iter().map(|l| l.abs())).fold(1.0, f64::max);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let p = sys.manifold.random_point(&mut rng);
        let t = rng.gen_range(0.1..2.0) / rate;
        let (q, j) = flow_with_jacobian(sys, &p, t, &tol.flow)?;
        let n = sys.dim();
        let mut fd = DMatrix::zeros(n, n);
        for i in 0..n {
            let shifted = |s: f64| -> Result<DVector<f64>> {
                let mut c = p.coords.clone();
                c[i] += s;
                let r = flow(sys, &Point { chart: p.chart, coords: c }, t, &tol.flow)?;
                sys.manifold.local_displacement(&r, &q).map(|d| d.0).ok_or_else(|| Error::InvalidPoint("displaced flow left the chart".into()))
            };
            fd.set_column(i, &((shifted(h)? - shifted(-h)?) / (2.0 * h)));
        }
        worst = worst.max((&j - &fd).norm() / j.norm().max(1e-12));
    }
    Ok(worst)
}

/// Largest increase of `F` between recorded steps of seeded trajectories.
pub fn monotonicity_defect(sys: &MorseSystem, samples: usize, seed: u64, tol: &Tolerances) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p = sys.manifold.random_point(&mut rng);
        let tr = trajectory(sys, &p, 5.0, &tol.flow)?;
        for w in tr.points.windows(2) {
            worst = worst.max(sys.value(&w[1]) - sys.value(&w[0]));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
struct Check {
    name: &'static str,
    status: &'static str,
    detail: Value,
}

fn check(name: &'static str, outcome: Result<(bool, Value)>) -> Check {
    match outcome {
        Ok((ok, detail)) => Check { name, status: if ok { "pass" } else { "fail" }, detail },
        Err(e) => Check { name, status: "error", detail: json!(e.to_string()) },
    }
}

fn verify(cfg: &ScenarioConfig) -> Result<(Report, bool)> {
    let tol = &cfg.tolerances;
    let l = load(&cfg.system, tol)?;
    let mut checks = Vec::new();
    let expected_euler = l.sys.manifold.euler_characteristic();
    checks.push(check("euler_characteristic", Ok((euler(&l.cps) == expected_euler, json!({ "found": euler(&l.cps), "expected": expected_euler })))));
    checks.push(check(
        "boundary_squared",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut systems = vec![cfg.system.clone()];
            systems.extend((0..cfg.verify.perturbations).map(|_| draw_offsets(&cfg.system, &mut rng)));
            let mut failures = Vec::new();
            for spec in &systems {
                let c = if *spec == cfg.system { l.complex.clone() } else { load(spec, tol)?.complex };
                if c.check_boundary_squared().is_err() {
                    failures.push(spec.clone());
                }
            }
            Ok((failures.is_empty(), json!({ "systems": systems.len(), "failures": failures })))
        })(),
    ));
    checks.push(check(
        "homology",
        (|| {
            let h = homology(&l.complex)?;
            let expected = l.sys.manifold.betti_numbers();
            Ok((h.betti == expected && h.torsion.iter().all(|t| t.is_empty()), json!({ "homology": h, "expected_betti": expected })))
        })(),
    ));
    checks.push(check(
        "morse_smale",
        (|| {
            let r = check_morse_smale(&l.sys, &l.cps, tol)?;
            Ok((r.pass, json!({ "min_margin": r.min_margin(), "threshold": r.threshold })))
        })(),
    ));
    checks.push(check(
        "identity_chain_map",
        (|| {
            let problem = MapProblem { src: &l.sys, src_cps: &l.cps, dst: &l.sys, dst_cps: &l.cps, map: &SmoothMap::Identity };
            let phi = chain_map_by_intersection(&problem, &l.complex, &l.complex, tol)?;
            let ok = phi.matrices.iter().enumerate().all(|(k, m)| *m == IntMatrix::identity(l.complex.rank(k), l.complex.rank(k)));
            Ok((ok, phi.to_json()))
        })(),
    ));
    checks.push(check(
        "attaching_degree",
        (|| {
            let rows = degree_rows(&l, tol)?;
            Ok((rows.iter().all(|r| r.equal), json!(rows)))
        })(),
    ));
    checks.push(check(
        "variational_jacobian",
        (|| {
            let d = jacobian_defect(&l.sys, &l.cps, cfg.verify.jacobian_pairs, cfg.seed, tol)?;
            Ok((d <= 1e-4, json!({ "max_relative_error": d, "threshold": 1e-4 })))
        })(),
    ));
    checks.push(check(
        "monotone_descent",
        (|| {
            let d = monotonicity_defect(&l.sys, cfg.verify.jacobian_pairs, cfg.seed, tol)?;
            Ok((d <= 1e-8, json!({ "max_increase": d, "threshold": 1e-8 })))
        })(),
    ));
    let errored = checks.iter().any(|c| c.status == "error");
    let ok = checks.iter().all(|c| c.status == "pass");
    let rows = checks.iter().map(|c| vec![c.name.to_string(), c.status.to_string()]).collect();
    let report = Report {
        command: Command::Verify,
        status: Status::from(ok),
        result: json!({ "manifold": l.sys.manifold.describe(), "betti": homology(&l.complex)?.betti, "checks": checks }),
        csv: Some(csv_string(&["check", "status"], rows)),
    };
    Ok((report, errored))
}

/// Run one command. The flag is set when a check could not be evaluated.
pub fn run_command(cfg: &ScenarioConfig, command: Command) -> Result<(Report, bool)> {
    let plain = |r: Result<Report>| r.map(|r| (r, false));
    match command {
        Command::Crit => plain(crit(cfg)),
        Command::Complex => plain(complex(cfg)),
        Command::Chainmap => plain(chainmap(cfg)),
        Command::Flowmap => plain(flowmap(cfg)),
        Command::Compose => plain(compose(cfg)),
        Command::Cup => plain(cup(cfg)),
        Command::DegreeCheck => plain(degree_check(cfg)),
        Command::Verify => verify(cfg),
    }
}

/// Deterministic report text: sorted keys, two-space indentation.
pub fn render(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json values serialize");
    s.push('\n');
    s
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::UnknownFamily(_) => "usage",
        _ => "numerical",
    }
}

pub fn error_json(command: Option<Command>, seed: Option<u64>, e: &Error) -> Value {
    json!({
        "command": command.map(Command::name),
        "seed": seed,
        "error": { "kind": error_kind(e), "message": e.to_string(), "debug": format!("{e:?}") },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    #[value(name = "json+csv")]
    JsonCsv,
}

#[derive(Debug, Parser)]
#[command(name = "morsefn", about = "Morse complexes, induced chain maps and cup products from gradient flows")]
pub struct Args {
    /// Command to run; defaults to the `commands` list of the config.
    #[arg(value_enum)]
    pub command: Option<Command>,
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

fn write(path: &Path, text: &str) -> std::io::Result<()> {
    std::fs::write(path, text)
}

/// Exit codes: 0 success, 1 check failure, 2 usage, 3 numerical failure.
pub fn run(args: &Args) -> i32 {
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("cannot create {}: {e}", args.out.display());
        return 2;
    }
    let mut cfg = match ScenarioConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            let _ = write(&args.out.join("error.json"), &render(&error_json(args.command, args.seed, &e)));
            return 2;
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let commands: Vec<Command> = match args.command {
        Some(c) => vec![c],
        None => cfg.commands.clone(),
    };
    if commands.is_empty() {
        eprintln!("no command given and the config lists none");
        return 2;
    }
    let mut code = 0;
    for command in commands {
        let path = args.out.join(format!("{}.json", command.name()));
        let (text, status, c) = match run_command(&cfg, command) {
            Ok((report, errored)) => {
                if args.format == Format::JsonCsv {
                    if let Some(csv) = &report.csv {
                        if let Err(e) = write(&args.out.join(format!("{}.csv", command.name())), csv) {
                            eprintln!("cannot write csv: {e}");
                            return 2;
                        }
                    }
                }
                let c = if errored { 3 } else if report.status == Status::Fail { 1 } else { 0 };
                let status = if errored { "error" } else if report.status == Status::Pass { "pass" } else { "fail" };
                (render(&report.to_json(&cfg)), status, c)
            }
            Err(e) => {
                let c = if error_kind(&e) == "usage" { 2 } else { 3 };
                eprintln!("{}: {e}", command.name());
                (render(&error_json(Some(command), Some(cfg.seed), &e)), "error", c)
            }
        };
        if let Err(e) = write(&path, &text) {
            eprintln!("cannot write {}: {e}", path.display());
            return 2;
        }
        println!("{}: {status} ({})", command.name(), path.display());
        code = code.max(c);
    }
    code
}

pub fn main() -> i32 {
    match Args::try_parse() {
        Ok(args) => run(&args),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TORUS: &str = r#"
seed = 7
commands = ["crit", "complex"]

[system]
family = "torus"
offsets = [0.0, 0.0]

[map]
kind = "torus_affine"
matrix = [[1, 0], [0, 1]]
shift = [0.1, 0.2]

[tolerances]
tau = 1e-5

[tolerances.flow]
t_max = 150.0
"#;

    #[test]
    fn config_round_trips_through_toml_and_json() {
        let cfg = ScenarioConfig::parse(TORUS).unwrap();
        assert_eq!(cfg.tolerances.tau, 1e-5);
        assert_eq!(cfg.tolerances.flow.t_max, 150.0);
        assert_eq!(cfg.tolerances.mesh_density, Tolerances::default().mesh_density);
        assert_eq!(ScenarioConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        let back: ScenarioConfig = serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_errors_name_the_problem() {
        let missing = ScenarioConfig::parse("[system]\nfamily = \"circle\"\n").unwrap_err();
        assert!(missing.to_string().contains("seed"), "{missing}");
        let bad = ScenarioConfig::parse("seed = 1\n[system]\nfamily = \"circle\"\n[tolerances]\ntau = -1.0\n").unwrap_err();
        assert!(bad.to_string().contains("tau"), "{bad}");
        let unknown = ScenarioConfig::parse("seed = 1\nsystm = 3\n[system]\nfamily = \"circle\"\n").unwrap_err();
        assert!(unknown.to_string().contains("line"), "{unknown}");
    }

    #[test]
    fn crit_report_is_deterministic() {
        let cfg = ScenarioConfig::parse(TORUS).unwrap();
        let a = render(&run_command(&cfg, Command::Crit).unwrap().0.to_json(&cfg));
        let b = render(&run_command(&cfg, Command::Crit).unwrap().0.to_json(&cfg));
        assert_eq!(a, b);
        let v: Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["status"], "pass");
        assert_eq!(v["seed"], 7);
        assert_eq!(v["result"]["catalogue"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn unknown_command_is_a_usage_error() {
        let err = Args::try_parse_from(["morsefn", "frobnicate", "--config", "x.toml"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
