//! Batch front-end: one subcommand per experiment, a flat TOML config,
//! per-stage seeding, CSV/JSON/binary artifacts and a run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cocycle::{wilson, CocycleField, FieldSpec, TrigField, TrigTerm};
use crate::dynamics::{enumerate_periodic_orbits, HyperbolicMap, PeriodicOrbit};
use crate::livsic::{fit_loglog, livsic_solve_staged, section_bytes, LivsicConfig};
use crate::matalg::{CMatrix, C64};
use crate::repstab::{near_conjugacy, UnitaryRep};
use crate::rng::{random_near_identity, random_unitary, stage_rng};
use crate::surface::{
    abelian_recover, enumerate_geodesics, random_flat, select_unimodular_basis, stability_sweep, wilson_table, FlatConnection, FuchsianModel,
};

#[derive(Parser, Debug)]
#[command(name = "holiv", version, about = "Wilson-loop and Livšic experiments on unitary cocycles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write every intermediate artifact.
    #[arg(long, global = true)]
    pub dump_stages: bool,
    /// Worker threads; falls back to HOLIV_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Record wall time in the manifest (breaks byte-identical reruns).
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Near-conjugacy residual against character discrepancy.
    RepstabSweep,
    /// Periodic orbits of the toral map.
    Orbits,
    /// Wilson loops of a cocycle over periodic orbits.
    Wilson,
    /// Approximate Livšic solve for a pair of cocycles.
    Livsic,
    /// Wilson-data stability sweep on the genus-2 surface.
    SurfaceSweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::RepstabSweep => "repstab-sweep",
            Command::Orbits => "orbits",
            Command::Wilson => "wilson",
            Command::Livsic => "livsic",
            Command::SurfaceSweep => "surface-sweep",
        }
    }
}

/// How the second cocycle of a `livsic` run is built from the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LivsicTarget {
    Identical,
    Gauge,
    Twist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Row-major integer matrix of the toral map.
    pub map: [i64; 4],
    pub rank: usize,
    pub seed: u64,
    /// Perturbation sizes; strictly monotone.
    pub sweep: Vec<f64>,
    /// Draws per sweep point in `repstab-sweep`.
    pub samples: usize,
    /// Generators of the abstract representations in `repstab-sweep`.
    pub generators: usize,
    pub period_max: u32,
    pub length_max: f64,
    pub out: Option<PathBuf>,
    /// JSON field specs; random trig fields when absent.
    pub field: Option<PathBuf>,
    pub target_field: Option<PathBuf>,
    /// JSON flat connection; random when absent.
    pub connection: Option<PathBuf>,
    pub field_amplitude: f64,
    pub livsic_target: LivsicTarget,
    pub sigma: f64,
    pub eps_budget: f64,
    #[serde(flatten)]
    pub livsic: LivsicConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            map: [2, 1, 1, 1],
            rank: 2,
            seed: 0,
            sweep: vec![1e-2, 1e-3, 1e-4, 1e-5],
            samples: 20,
            generators: 2,
            period_max: 6,
            length_max: 8.0,
            out: None,
            field: None,
            target_field: None,
            connection: None,
            field_amplitude: 0.4,
            livsic_target: LivsicTarget::Gauge,
            sigma: 1e-2,
            eps_budget: 1e-8,
            livsic: LivsicConfig::default(),
        }
    }
}

/// A failed run: the stage and a message, written as `error.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunError {
    pub stage: String,
    pub message: String,
}

impl RunError {
    fn new(stage: &str, message: impl ToString) -> Self {
        RunError { stage: stage.to_string(), message: message.to_string() }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.message)
    }
}

impl std::error::Error for RunError {}

impl ExperimentConfig {
    /// Parses a flat TOML document; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let table: toml::Table = text.parse().map_err(|e| RunError::new("config", e))?;
        let known = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
        let known = known.as_object().expect("config is a map");
        for key in table.keys() {
            if !known.contains_key(key) {
                return Err(RunError::new("config", format!("unknown key {key:?}")));
            }
        }
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e| RunError::new("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let up = self.sweep.windows(2).all(|w| w[0] < w[1]);
        let down = self.sweep.windows(2).all(|w| w[0] > w[1]);
        if !(up || down) {
            return Err(RunError::new("config", "sweep must be strictly monotone"));
        }
        if self.rank == 0 {
            return Err(RunError::new("config", "rank must be positive"));
        }
        HyperbolicMap::from_entries(self.map).map_err(|e| RunError::new("config", e))?;
        Ok(())
    }
}

/// Files written by a run, in write order.
#[derive(Default)]
struct Emitter {
    dir: PathBuf,
    written: Vec<String>,
}

impl Emitter {
    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<(), RunError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| RunError::new("output", e))?;
        }
        fs::write(&path, data).map_err(|e| RunError::new("output", format!("{}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(&crate::livsic::sort_keys(value.clone())).expect("json serializes");
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| RunError::new("output", e))?;
        for r in rows {
            w.write_record(r).map_err(|e| RunError::new("output", e))?;
        }
        let data = w.into_inner().map_err(|e| RunError::new("output", e))?;
        self.bytes(name, &data)
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &str) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::new(stage, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| RunError::new(stage, format!("{}: {e}", path.display())))
}

fn field_spec(cfg: &ExperimentConfig, path: Option<&PathBuf>, stage: &str) -> Result<FieldSpec, RunError> {
    match path {
        Some(p) => read_json(p, stage),
        None => {
            let mut rng = stage_rng(cfg.seed, stage);
            Ok(FieldSpec::Trig(TrigField::random(&mut rng, cfg.rank, cfg.field_amplitude)))
        }
    }
}

/// The config without the output directory, so reruns elsewhere match.
fn config_echo(cfg: &ExperimentConfig) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("out");
    }
    v
}

/// Executes one subcommand, writing artifacts and a manifest into
/// `cfg.out`. On failure `error.json` names the stage.
pub fn run(command: Command, cfg: &ExperimentConfig, dump_stages: bool, timing: bool) -> Result<Vec<String>, RunError> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("holiv-out"));
    fs::create_dir_all(&dir).map_err(|e| RunError::new("output", e))?;
    let mut em = Emitter { dir: dir.clone(), written: Vec::new() };
    let start = Instant::now();
    let outcome = match command {
        Command::RepstabSweep => repstab_sweep(cfg, &mut em),
        Command::Orbits => orbits(cfg, &mut em),
        Command::Wilson => wilson_loops(cfg, &mut em),
        Command::Livsic => livsic(cfg, &mut em, dump_stages),
        Command::SurfaceSweep => surface_sweep(cfg, &mut em),
    };
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!("{}: {:.3} s", command.name(), elapsed);
    let mut manifest = json!({
        "command": command.name(),
        "config": config_echo(cfg),
        "versions": { "holiv": env!("CARGO_PKG_VERSION") },
        "status": if outcome.is_ok() { "ok" } else { "error" },
    });
    if timing {
        manifest["wall_time_s"] = json!(elapsed);
    }
    if let Err(e) = &outcome {
        let mut err_em = Emitter { dir: dir.clone(), written: Vec::new() };
        err_em.json("error.json", &json!({ "stage": e.stage, "message": e.message, "command": command.name() }))?;
        em.written.push("error.json".into());
    }
    manifest["outputs"] = json!(em.written);
    em.json("manifest.json", &manifest)?;
    outcome.map(|_| em.written)
}

fn repstab_sweep(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<(), RunError> {
    let words = crate::freemonoid::words_of_length(&(0..cfg.generators as u32).collect::<Vec<_>>(), 3);
    let mut rows = Vec::new();
    let mut medians: BTreeMap<String, Value> = BTreeMap::new();
    let (mut eps_med, mut res_med) = (Vec::new(), Vec::new());
    for (k, &delta) in cfg.sweep.iter().enumerate() {
        let mut rng = stage_rng(cfg.seed, &format!("repstab/{k}"));
        let mut pairs = Vec::with_capacity(cfg.samples);
        for sample in 0..cfg.samples {
            let base: Vec<_> = (0..cfg.generators).map(|_| random_unitary(&mut rng, cfg.rank)).collect();
            let rep0 = UnitaryRep::from_list(base.clone()).map_err(|e| RunError::new("repstab", e))?;
            let u = random_unitary(&mut rng, cfg.rank);
            let moved: Vec<_> = base.iter().map(|g| random_near_identity(&mut rng, cfg.rank, delta).mul(g)).collect();
            let rep = UnitaryRep::from_list(moved).map_err(|e| RunError::new("repstab", e))?.conjugated(&u);
            let report = near_conjugacy(&rep0, &rep, &words).map_err(|e| RunError::new("near_conjugacy", e))?;
            rows.push(vec![num(delta), sample.to_string(), num(report.epsilon), num(report.residual), num(report.m0_condition)]);
            pairs.push((report.epsilon, report.residual));
        }
        let median = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let (me, mr) = (median(pairs.iter().map(|p| p.0).collect()), median(pairs.iter().map(|p| p.1).collect()));
        medians.insert(num(delta), json!({ "epsilon": me, "residual": mr }));
        eps_med.push(me);
        res_med.push(mr);
    }
    em.csv("repstab_sweep.csv", &["delta", "sample", "epsilon", "residual", "m0_condition"], &rows)?;
    let eps: Vec<f64> = rows.iter().map(|r| r[2].parse().expect("written above")).collect();
    let res: Vec<f64> = rows.iter().map(|r| r[3].parse().expect("written above")).collect();
    em.json("repstab_summary.json", &json!({ "slope": fit_loglog(&eps, &res), "median_slope": fit_loglog(&eps_med, &res_med), "medians": medians }))
}

/// Every orbit of every period up to `n_max`, non-primitive ones included.
pub fn orbit_rows(map: &HyperbolicMap, n_max: u32) -> Vec<PeriodicOrbit> {
    let primitive = enumerate_periodic_orbits(map, n_max);
    let mut out = Vec::new();
    for n in 1..=n_max {
        for o in primitive.iter().filter(|o| n % o.period == 0) {
            out.push(PeriodicOrbit { period: n, points: o.points.clone(), primitive: o.period == n });
        }
    }
    out
}

fn orbits(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<(), RunError> {
    let map = HyperbolicMap::from_entries(cfg.map).map_err(|e| RunError::new("map", e))?;
    let rows: Vec<Vec<String>> = orbit_rows(&map, cfg.period_max)
        .iter()
        .map(|o| {
            let pts: Vec<String> = o.points.iter().map(|p| p.to_string()).collect();
            vec![o.id(), o.period.to_string(), o.primitive.to_string(), pts.join(";")]
        })
        .collect();
    em.csv("orbits.csv", &["orbit_id", "period", "primitive", "points"], &rows)
}

fn wilson_loops(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<(), RunError> {
    let map = HyperbolicMap::from_entries(cfg.map).map_err(|e| RunError::new("map", e))?;
    let spec = field_spec(cfg, cfg.field.as_ref(), "field")?;
    em.json("field.json", &serde_json::to_value(&spec).expect("spec serializes"))?;
    let c = CocycleField::new(map.clone(), spec).map_err(|e| RunError::new("field", e))?;
    let rows: Vec<Vec<String>> = enumerate_periodic_orbits(&map, cfg.period_max)
        .iter()
        .map(|o| {
            let w = wilson(&c, o);
            vec![w.orbit_id, w.length.to_string(), num(w.trace.re), num(w.trace.im)]
        })
        .collect();
    em.csv("wilson.csv", &["orbit_id", "length", "re_trace", "im_trace"], &rows)
}

fn livsic(cfg: &ExperimentConfig, em: &mut Emitter, dump_stages: bool) -> Result<(), RunError> {
    let map = HyperbolicMap::from_entries(cfg.map).map_err(|e| RunError::new("map", e))?;
    let base = field_spec(cfg, cfg.field.as_ref(), "field")?;
    let target = match &cfg.target_field {
        Some(p) => read_json(p, "target_field")?,
        None => match cfg.livsic_target {
            LivsicTarget::Identical => base.clone(),
            LivsicTarget::Gauge => {
                let mut rng = stage_rng(cfg.seed, "gauge");
                let gauge = FieldSpec::Trig(TrigField::random(&mut rng, base.rank(), cfg.field_amplitude));
                FieldSpec::Gauge { base: Box::new(base.clone()), gauge: Box::new(gauge) }
            }
            LivsicTarget::Twist => {
                let twist = TrigField { rank: base.rank(), terms: vec![TrigTerm(1, 0, CMatrix::identity(base.rank()).scale(C64::new(0.0, 1.0)))] };
                FieldSpec::Twist { base: Box::new(base.clone()), generator: twist, sigma: cfg.sigma }
            }
        },
    };
    em.json("field.json", &serde_json::to_value(&base).expect("spec serializes"))?;
    em.json("target_field.json", &serde_json::to_value(&target).expect("spec serializes"))?;
    let c0 = CocycleField::new(map.clone(), base).map_err(|e| RunError::new("field", e))?;
    let c = CocycleField::new(map, target).map_err(|e| RunError::new("target_field", e))?;
    let (report, stages) = livsic_solve_staged(&c0, &c, cfg.eps_budget, &cfg.livsic).map_err(|e| RunError::new(e.stage, e.error))?;
    em.json("livsic_report.json", &report.scalars_json())?;
    em.bytes("livsic_p.bin", &report.grid_bytes())?;
    if dump_stages {
        em.json("stages/good_orbit.json", &to(&stages.good))?;
        em.json("stages/p_star.json", &to(&stages.p_star))?;
        em.json("stages/trunk.json", &to(&stages.trunk))?;
        em.json("stages/charts.json", &to(&stages.coefficients))?;
        let mut ext = to(&stages.extended);
        if let Some(obj) = ext.as_object_mut() {
            obj.remove("values");
        }
        em.json("stages/extended.json", &ext)?;
        em.bytes("stages/extended.bin", &section_bytes(&stages.extended.values))?;
    }
    Ok(())
}

fn to<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("artifact serializes")
}

fn surface_sweep(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<(), RunError> {
    let model = FuchsianModel::bolza();
    let conn: FlatConnection = match &cfg.connection {
        Some(p) => read_json(p, "connection")?,
        None => {
            let mut rng = stage_rng(cfg.seed, "connection");
            random_flat(&mut rng, cfg.rank, model.genus).map_err(|e| RunError::new("connection", e))?
        }
    };
    if conn.images.len() != 2 * model.genus {
        return Err(RunError::new("connection", format!("expected {} generator images, got {}", 2 * model.genus, conn.images.len())));
    }
    em.json("connection.json", &serde_json::to_value(&conn).expect("connection serializes"))?;
    let table = stability_sweep(&conn, &model, &cfg.sweep, cfg.length_max, cfg.seed).map_err(|e| RunError::new("stability_sweep", e))?;
    em.bytes("surface_sweep.csv", table.to_csv().as_bytes())?;
    let mut summary = json!({ "tau_hat": table.tau_hat, "classes": table.classes });
    if conn.rank == 1 {
        let classes = enumerate_geodesics(&model, cfg.length_max);
        let basis = select_unimodular_basis(&classes, model.genus).map_err(|e| RunError::new("abelian_recover", e))?;
        let rec = abelian_recover(&wilson_table(&conn, &classes), &basis, model.genus).map_err(|e| RunError::new("abelian_recover", e))?;
        summary["abelian"] = serde_json::to_value(&rec).expect("recovery serializes");
        summary["basis"] = json!(basis.iter().map(|w| w.to_string()).collect::<Vec<_>>());
    }
    em.json("surface_summary.json", &summary)
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = cli.threads.or_else(|| std::env::var("HOLIV_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(dir) = &cli.out {
                let _ = fs::create_dir_all(dir);
                let body = json!({ "stage": e.stage, "message": e.message, "command": cli.command.name() });
                let _ = fs::write(dir.join("error.json"), format!("{}\n", serde_json::to_string_pretty(&body).expect("json")));
            }
            return 2;
        }
    };
    match run(cli.command, &cfg, cli.dump_stages, cli.timing) {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {f}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, RunError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| RunError::new("config", format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}
