//! Identification, closed-loop runs, comparisons and PRBS previews.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{Anchor, ExperimentConfig, PlantSource, RunSection};
use super::metrics::{channel_metrics, ChannelMetrics};
use super::svg::{line_plot, Series};
use crate::error::{Error, Result};
use crate::model::{OperatingPoint, StateSpaceModel};
use crate::mpc::{MpcController, PlanStatus};
use crate::multimodel::{BankEntry, ModelBank};
use crate::plant::FccuPlant;
use crate::signals::{fmt_f64, prbs_channels, Dataset};
use crate::subspace::{estimate_n4sid, IdentificationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    Single,
    Multi,
}

impl ControlMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::Single => "single",
            ControlMode::Multi => "multi",
        }
    }
}

impl std::str::FromStr for ControlMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(ControlMode::Single),
            "multi" => Ok(ControlMode::Multi),
            other => Err(Error::Config(format!("unknown mode {other:?}; expected single or multi"))),
        }
    }
}

/// Model with its identification operating point, keyed by config id.
#[derive(Debug, Clone)]
pub struct NamedModel {
    pub id: String,
    pub model: StateSpaceModel,
    pub operating_point: OperatingPoint,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(format!("cannot serialize: {e}")))
}

// ---------------------------------------------------------------------------
// identification

pub struct IdentifyOutcome {
    pub dataset: Dataset,
    pub n_train: usize,
    pub n_valid: usize,
    pub reports: Vec<(String, IdentificationReport)>,
}

impl IdentifyOutcome {
    pub fn models(&self) -> Vec<NamedModel> {
        self.reports
            .iter()
            .map(|(id, r)| NamedModel {
                id: id.clone(),
                model: r.model.clone(),
                operating_point: r.operating_point.clone(),
            })
            .collect()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "split: {} train / {} validation samples", self.n_train, self.n_valid);
        for (id, r) in &self.reports {
            let fit = r.fit_valid.as_ref().unwrap_or(&r.fit_train);
            let fit: Vec<String> = fit.iter().map(|f| format!("{f:.2}%")).collect();
            let _ = writeln!(
                s,
                "model {id}: order {} (f = {}, p = {}), validation fit [{}]",
                r.chosen_order,
                r.future,
                r.past,
                fit.join(", ")
            );
        }
        s
    }
}

/// Excites the surrogate with the configured PRBS, or loads the replay CSV.
pub fn identification_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match cfg.plant.source {
        PlantSource::ExternalCsv => {
            let rel = cfg
                .plant
                .csv
                .as_ref()
                .ok_or_else(|| Error::Config("[plant] source = \"external-csv\" needs a csv path".into()))?;
            Dataset::load_csv(cfg.base_dir.join(rel))
        }
        PlantSource::Surrogate => {
            let plant_cfg = cfg.plant.resolve()?;
            let exc = cfg.excitation()?;
            let u = prbs_channels(&exc.prbs_spec()?, &exc.levels(&plant_cfg.u_ss)?)?;
            let ts = plant_cfg.ts;
            let mut plant = FccuPlant::new(plant_cfg, u64::from(exc.seed))?;
            let d = DVector::zeros(plant.config().disturbance_gain[0].len());
            let mut y = DMatrix::zeros(u.nrows(), plant.config().y_ss.len());
            for k in 0..u.nrows() {
                let uk = u.row(k).transpose();
                y.set_row(k, &plant.measure(&uk, &d)?.transpose());
                plant.advance(&uk, &d)?;
            }
            Dataset::new(u, y, ts)
        }
    }
}

pub fn identify(cfg: &ExperimentConfig) -> Result<IdentifyOutcome> {
    let ident = cfg.identification()?;
    if ident.models.is_empty() {
        return Err(Error::Config("[identification] lists no models".into()));
    }
    let dataset = identification_data(cfg)?;
    let (train, valid) = dataset.split(ident.train_fraction)?;
    let mut reports = Vec::with_capacity(ident.models.len());
    for spec in &ident.models {
        let mut report = estimate_n4sid(&train, &spec.n4sid())?;
        report.validate(&valid)?;
        reports.push((spec.id.clone(), report));
    }
    Ok(IdentifyOutcome {
        n_train: train.len(),
        n_valid: valid.len(),
        dataset,
        reports,
    })
}

fn model_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("model-{id}.toml"))
}

pub fn write_identification(outcome: &IdentifyOutcome, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    outcome.dataset.save_csv(dir.join("dataset.csv"))?;
    for (id, r) in &outcome.reports {
        r.model.save(model_path(dir, id), Some(&r.operating_point))?;
        write_file(&dir.join(format!("report-{id}.txt")), &r.summary())?;
    }
    write_file(&dir.join("identification.txt"), &outcome.summary())
}

pub fn load_models(dir: &Path, ids: &[String]) -> Result<Vec<NamedModel>> {
    ids.iter()
        .map(|id| {
            let path = model_path(dir, id);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "model '{id}' not found at {}; run identify first or pass --identify",
                    path.display()
                )));
            }
            let (model, op) = StateSpaceModel::load(&path)?;
            Ok(NamedModel {
                id: id.clone(),
                operating_point: op.unwrap_or_else(|| OperatingPoint::zero(model.n_inputs(), model.n_outputs())),
                model,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// closed loop

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    /// Objective of the applied plan; NaN when the input was held.
    pub j: f64,
    /// Bank index of the applied controller, -1 when none was usable.
    pub model_id: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: ControlMode,
    pub models: Vec<String>,
    pub steps: usize,
    pub ts: f64,
    pub seed: u64,
    /// Instants at which the applied move came from the softened problem.
    pub fallback_count: usize,
    /// Instants at which the previous input was held.
    pub held_count: usize,
    pub warning_count: usize,
    pub violation_count: usize,
    pub selection_frequency: Vec<f64>,
    pub channels: Vec<ChannelMetrics>,
}

impl RunSummary {
    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode {} over {} steps, models {:?}", self.mode.as_str(), self.steps, self.models);
        for (i, c) in self.channels.iter().enumerate() {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = write!(
                s,
                "y{}: IAE {:.4}, rise {}, settling {}, overshoot {}%, violations {}",
                i + 1,
                c.iae,
                opt(c.rise_time),
                opt(c.settling_time),
                opt(c.overshoot_pct),
                c.violations
            );
            if let Some(v) = c.iae_post_disturbance {
                let _ = write!(s, ", post-disturbance IAE {v:.4}");
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "fallbacks {}, held {}, warnings {}, selection {:?}",
            self.fallback_count, self.held_count, self.warning_count, self.selection_frequency
        );
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<TrajectoryRow>,
    pub events: Vec<Event>,
    pub summary: RunSummary,
}

/// Bank composition for a mode: the single model, or every bank model.
pub fn bank_ids(cfg: &ExperimentConfig, mode: ControlMode) -> Result<Vec<String>> {
    match mode {
        ControlMode::Single => Ok(vec![cfg.single_model_id()?]),
        ControlMode::Multi => {
            let ids = cfg.multimodel()?.models.clone();
            if ids.is_empty() {
                return Err(Error::Config("[multimodel] models is empty".into()));
            }
            Ok(ids)
        }
    }
}

fn pick_models(available: &[NamedModel], ids: &[String]) -> Result<Vec<NamedModel>> {
    ids.iter()
        .map(|id| {
            available
                .iter()
                .find(|m| &m.id == id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("model '{id}' is not defined in [identification]")))
        })
        .collect()
}

/// Runs the closed loop over the configured schedule.
///
/// At every instant the plant is measured under the previous input, the
/// bank plans against a constant reference at the current setpoint, and
/// the applied move drives the plant to the next instant.
pub fn simulate(cfg: &ExperimentConfig, mode: ControlMode, available: &[NamedModel]) -> Result<RunOutcome> {
    let ids = bank_ids(cfg, mode)?;
    let models = pick_models(available, &ids)?;
    let mpc = cfg.controller()?;
    let run = cfg.run()?;
    let plant_cfg = cfg.plant.resolve()?;
    if plant_cfg.ts != mpc.ts {
        return Err(Error::Config(format!(
            "[controller] ts = {} differs from the plant sampling interval {}",
            mpc.ts, plant_cfg.ts
        )));
    }
    let n_steps = run.n_steps(mpc.ts)?;
    let p = plant_cfg.y_ss.len();
    let n_dist = plant_cfg.disturbance_gain[0].len();
    let initial_sp = run.initial_setpoint.clone().unwrap_or_else(|| plant_cfg.y_ss.clone());
    check_schedule(run, "setpoints", p, &initial_sp)?;
    check_schedule(run, "disturbances", n_dist, &[])?;

    let u0 = DVector::from_column_slice(&plant_cfg.u_ss);
    let entries = models
        .iter()
        .map(|nm| {
            Ok(BankEntry {
                id: nm.id.clone(),
                controller: MpcController::new(
                    Arc::new(nm.model.clone()),
                    mpc.clone(),
                    match run.anchor {
                        Anchor::Equilibrium => OperatingPoint {
                            u: plant_cfg.u_ss.clone(),
                            y: plant_cfg.y_ss.clone(),
                        },
                        Anchor::Identification => nm.operating_point.clone(),
                    },
                    u0.clone(),
                )?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mm = cfg.multimodel.as_ref();
    let mut bank = ModelBank::new(entries, mm.map(|s| s.sync_mode).unwrap_or_default())?
        .with_hysteresis(mm.map_or(0.0, |s| s.hysteresis))?;
    let mut plant = FccuPlant::new(plant_cfg.clone(), run.seed)?;

    let zeros_d = vec![0.0; n_dist];
    let mut u_prev = u0;
    let mut rows = Vec::with_capacity(n_steps);
    let mut events = Vec::new();
    let (mut fallback_count, mut held_count, mut warning_count) = (0, 0, 0);
    let mut last_selected: Option<usize> = None;
    for k in 0..n_steps {
        let t = k as f64 * mpc.ts;
        for (name, sched) in [("setpoint", &run.setpoints), ("disturbance", &run.disturbances)] {
            for e in sched.iter().filter(|e| (e.t - t).abs() < 0.5 * mpc.ts && e.t <= t + 1e-9) {
                events.push(Event { t, kind: name.into(), detail: format!("{:?}", e.values) });
            }
        }
        let sp = RunSection::value_at(&run.setpoints, &initial_sp, t);
        let d = DVector::from_vec(RunSection::value_at(&run.disturbances, &zeros_d, t));
        let y = plant.measure(&u_prev, &d).map_err(|e| with_time(e, t))?;
        let reference = DVector::from_fn(mpc.prediction_horizon * p, |i, _| sp[i % p]);
        let step = bank.step(&y, &reference)?;
        for w in &step.warnings {
            events.push(Event { t, kind: "warning".into(), detail: w.clone() });
        }
        warning_count += step.warnings.len();
        let plan = step.selected_plan();
        match plan.map(|p| p.status) {
            Some(PlanStatus::Optimal) => {}
            Some(PlanStatus::Softened) => {
                fallback_count += 1;
                events.push(Event { t, kind: "fallback".into(), detail: "applied move from softened problem".into() });
            }
            Some(PlanStatus::Held) | None => {
                held_count += 1;
                events.push(Event { t, kind: "held".into(), detail: "previous input held".into() });
            }
        }
        if mode == ControlMode::Multi && k > 0 && step.selected != last_selected {
            let name = |s: Option<usize>| s.map_or("none".to_string(), |i| ids[i].clone());
            events.push(Event {
                t,
                kind: "switch".into(),
                detail: format!("{} -> {}", name(last_selected), name(step.selected)),
            });
        }
        last_selected = step.selected;
        let du = &step.u - &u_prev;
        rows.push(TrajectoryRow {
            t,
            r: sp,
            y: y.iter().copied().collect(),
            u: step.u.iter().copied().collect(),
            du: du.iter().copied().collect(),
            j: plan.map_or(f64::NAN, |p| p.j_opt),
            model_id: step.selected.map_or(-1, |i| i as i64),
        });
        plant.advance(&step.u, &d).map_err(|e| with_time(e, t))?;
        u_prev = step.u;
    }

    let times: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let channels = (0..p)
        .map(|i| {
            let r: Vec<f64> = rows.iter().map(|row| row.r[i]).collect();
            let y: Vec<f64> = rows.iter().map(|row| row.y[i]).collect();
            channel_metrics(&times, &r, &y, mpc.ts, (mpc.y_min[i], mpc.y_max[i]), run.first_disturbance())
        })
        .collect::<Vec<_>>();
    let summary = RunSummary {
        mode,
        models: ids,
        steps: n_steps,
        ts: mpc.ts,
        seed: run.seed,
        fallback_count,
        held_count,
        warning_count,
        violation_count: channels.iter().map(|c| c.violations).sum(),
        selection_frequency: bank.selection_frequency(),
        channels,
    };
    Ok(RunOutcome { rows, events, summary })
}

fn with_time(e: Error, t: f64) -> Error {
    match e {
        Error::Divergence { .. } => Error::Divergence { time: t },
        other => other,
    }
}

fn check_schedule(run: &RunSection, name: &str, width: usize, initial: &[f64]) -> Result<()> {
    if !initial.is_empty() && initial.len() != width {
        return Err(Error::Config(format!("[run] initial_setpoint needs {width} values")));
    }
    let sched = if name == "setpoints" { &run.setpoints } else { &run.disturbances };
    for e in sched {
        if e.values.len() != width {
            return Err(Error::Config(format!(
                "[run] {name} entry at t = {} needs {width} values, has {}",
                e.t,
                e.values.len()
            )));
        }
    }
    Ok(())
}

fn trajectory_header(p: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=p).map(|i| format!("r{i}")));
    h.extend((1..=p).map(|i| format!("y{i}")));
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend((1..=m).map(|i| format!("du{i}")));
    h.push("J".into());
    h.push("model_id".into());
    h
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

pub fn write_trajectory(rows: &[TrajectoryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let (p, m) = rows.first().map_or((0, 0), |r| (r.y.len(), r.u.len()));
    w.write_record(trajectory_header(p, m)).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let mut rec: Vec<String> = vec![fmt_f64(row.t)];
        rec.extend(row.r.iter().chain(&row.y).chain(&row.u).chain(&row.du).map(|&v| fmt_f64(v)));
        rec.push(fmt_f64(row.j));
        rec.push(row.model_id.to_string());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix) && h[prefix.len()..].parse::<usize>().is_ok()).count();
    let (p, m) = (count("y"), count("u"));
    if header != trajectory_header(p, m) {
        return Err(Error::Csv { line: 1, message: format!("unexpected trajectory header {header:?}") });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i as u64 + 2;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Csv { line, message: format!("bad number {:?}", &rec[j]) })
        };
        let vals = (0..header.len() - 1).map(num).collect::<Result<Vec<f64>>>()?;
        let model_id = rec[header.len() - 1]
            .parse()
            .map_err(|_| Error::Csv { line, message: "bad model_id".into() })?;
        rows.push(TrajectoryRow {
            t: vals[0],
            r: vals[1..1 + p].to_vec(),
            y: vals[1 + p..1 + 2 * p].to_vec(),
            u: vals[1 + 2 * p..1 + 2 * p + m].to_vec(),
            du: vals[1 + 2 * p + m..1 + 2 * p + 2 * m].to_vec(),
            j: vals[1 + 2 * p + 2 * m],
            model_id,
        });
    }
    Ok(rows)
}

fn write_events(events: &[Event], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["t", "kind", "detail"]).map_err(|e| csv_error(path, e))?;
    for e in events {
        w.write_record([fmt_f64(e.t), e.kind.clone(), e.detail.clone()])
            .map_err(|err| csv_error(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_run(outcome: &RunOutcome, dir: &Path, svg: bool) -> Result<()> {
    create_dir(dir)?;
    write_trajectory(&outcome.rows, &dir.join("trajectory.csv"))?;
    write_events(&outcome.events, &dir.join("events.csv"))?;
    write_file(&dir.join("summary.toml"), &to_toml(&outcome.summary)?)?;
    if svg {
        let t: Vec<f64> = outcome.rows.iter().map(|r| r.t).collect();
        let p = outcome.rows.first().map_or(0, |r| r.y.len());
        for i in 0..p {
            let r: Vec<f64> = outcome.rows.iter().map(|row| row.r[i]).collect();
            let y: Vec<f64> = outcome.rows.iter().map(|row| row.y[i]).collect();
            let plot = line_plot(
                &format!("output {} ({})", i + 1, outcome.summary.mode.as_str()),
                "t [s]",
                &[Series { name: "setpoint", x: &t, y: &r }, Series { name: "output", x: &t, y: &y }],
            );
            write_file(&dir.join(format!("y{}.svg", i + 1)), &plot)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// comparison

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `b - a`.
    pub delta: Option<f64>,
    /// "a", "b" or "tie"; smaller is better.
    pub winner: String,
}

impl MetricDelta {
    fn new(a: Option<f64>, b: Option<f64>) -> Self {
        let delta = a.zip(b).map(|(a, b)| b - a);
        let winner = match (a, b) {
            (Some(a), Some(b)) if a < b => "a",
            (Some(a), Some(b)) if b < a => "b",
            (Some(_), None) => "a",
            (None, Some(_)) => "b",
            _ => "tie",
        };
        MetricDelta { a, b, delta, winner: winner.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelComparison {
    pub channel: usize,
    pub iae: MetricDelta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iae_post_disturbance: Option<MetricDelta>,
    pub settling_time: MetricDelta,
    pub overshoot_pct: MetricDelta,
    pub rise_time: MetricDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub run_a: String,
    pub run_b: String,
    pub channels: Vec<ChannelComparison>,
}

impl Comparison {
    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "a = {}\nb = {}", self.run_a, self.run_b);
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for c in &self.channels {
            let mut metrics = vec![
                ("IAE", &c.iae),
                ("settling", &c.settling_time),
                ("overshoot", &c.overshoot_pct),
                ("rise", &c.rise_time),
            ];
            if let Some(d) = &c.iae_post_disturbance {
                metrics.insert(1, ("post-disturbance IAE", d));
            }
            for (name, d) in metrics {
                let _ = writeln!(
                    s,
                    "y{} {name}: a {} b {} delta {} winner {}",
                    c.channel,
                    fmt(d.a),
                    fmt(d.b),
                    fmt(d.delta),
                    d.winner
                );
            }
        }
        s
    }
}

fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("summary.toml");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

/// Compares two run directories; overlay series and the delta table go
/// to `out`.
pub fn compare_runs(dir_a: &Path, dir_b: &Path, out: &Path, svg: bool) -> Result<Comparison> {
    for dir in [dir_a, dir_b] {
        if !dir.is_dir() {
            return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found")));
        }
    }
    let (sa, sb) = (read_summary(dir_a)?, read_summary(dir_b)?);
    let ta = read_trajectory(&dir_a.join("trajectory.csv"))?;
    let tb = read_trajectory(&dir_b.join("trajectory.csv"))?;
    let same_schedule = ta.len() == tb.len() && ta.iter().zip(&tb).all(|(a, b)| a.t == b.t && a.r == b.r);
    if !same_schedule || sa.ts != sb.ts {
        return Err(Error::Config("runs have mismatched schedules".into()));
    }
    let channels = sa
        .channels
        .iter()
        .zip(&sb.channels)
        .enumerate()
        .map(|(i, (a, b))| ChannelComparison {
            channel: i + 1,
            iae: MetricDelta::new(Some(a.iae), Some(b.iae)),
            iae_post_disturbance: a
                .iae_post_disturbance
                .zip(b.iae_post_disturbance)
                .map(|(a, b)| MetricDelta::new(Some(a), Some(b))),
            settling_time: MetricDelta::new(a.settling_time, b.settling_time),
            overshoot_pct: MetricDelta::new(a.overshoot_pct, b.overshoot_pct),
            rise_time: MetricDelta::new(a.rise_time, b.rise_time),
        })
        .collect();
    let cmp = Comparison {
        run_a: dir_a.display().to_string(),
        run_b: dir_b.display().to_string(),
        channels,
    };

    create_dir(out)?;
    let p = ta.first().map_or(0, |r| r.y.len());
    let m = ta.first().map_or(0, |r| r.u.len());
    for (prefix, width, get) in [
        ("y", p, (|r: &TrajectoryRow, i: usize| r.y[i]) as fn(&TrajectoryRow, usize) -> f64),
        ("u", m, |r: &TrajectoryRow, i: usize| r.u[i]),
    ] {
        for i in 0..width {
            let path = out.join(format!("overlay_{prefix}{}.csv", i + 1));
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
            let with_r = prefix == "y";
            let mut header = vec!["t".to_string()];
            if with_r {
                header.push("r".into());
            }
            header.extend(["a".to_string(), "b".to_string()]);
            w.write_record(&header).map_err(|e| csv_error(&path, e))?;
            for (ra, rb) in ta.iter().zip(&tb) {
                let mut rec = vec![fmt_f64(ra.t)];
                if with_r {
                    rec.push(fmt_f64(ra.r[i]));
                }
                rec.push(fmt_f64(get(ra, i)));
                rec.push(fmt_f64(get(rb, i)));
                w.write_record(&rec).map_err(|e| csv_error(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            if svg && with_r {
                let t: Vec<f64> = ta.iter().map(|r| r.t).collect();
                let r: Vec<f64> = ta.iter().map(|row| row.r[i]).collect();
                let ya: Vec<f64> = ta.iter().map(|row| row.y[i]).collect();
                let yb: Vec<f64> = tb.iter().map(|row| row.y[i]).collect();
                let label_a = format!("a ({})", sa.mode.as_str());
                let label_b = format!("b ({})", sb.mode.as_str());
                let plot = line_plot(
                    &format!("output {}", i + 1),
                    "t [s]",
                    &[
                        Series { name: "setpoint", x: &t, y: &r },
                        Series { name: &label_a, x: &t, y: &ya },
                        Series { name: &label_b, x: &t, y: &yb },
                    ],
                );
                write_file(&out.join(format!("overlay_y{}.svg", i + 1)), &plot)?;
            }
        }
    }
    write_file(&out.join("comparison.toml"), &to_toml(&cmp)?)?;
    write_file(&out.join("comparison.txt"), &cmp.text())?;
    Ok(cmp)
}

// ---------------------------------------------------------------------------
// commands

/// Result of a CLI command: where artifacts went and what to print.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub dir: PathBuf,
    pub report: String,
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    created_unix: f64,
    elapsed_s: f64,
}

fn write_metadata(dir: &Path, command: &str, started: Instant) -> Result<()> {
    let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let meta = Metadata {
        command,
        version: env!("CARGO_PKG_VERSION"),
        created_unix,
        elapsed_s: started.elapsed().as_secs_f64(),
    };
    write_file(&dir.join("metadata.toml"), &to_toml(&meta)?)
}

/// Config copy with the plant fully spelled out and paths made absolute.
fn resolved_config(cfg: &ExperimentConfig) -> Result<String> {
    let mut copy = cfg.clone();
    if copy.plant.source == PlantSource::Surrogate {
        copy.plant.surrogate = Some(cfg.plant.resolve()?);
        copy.plant.noise_std = None;
    }
    if let Some(csv) = &cfg.plant.csv {
        let full = cfg.base_dir.join(csv);
        copy.plant.csv = Some(std::fs::canonicalize(&full).unwrap_or(full));
    }
    copy.to_toml()
}

fn finish(cfg: &ExperimentConfig, dir: &Path, command: &str, started: Instant) -> Result<()> {
    write_file(&dir.join("config.toml"), &resolved_config(cfg)?)?;
    write_metadata(dir, command, started)
}

pub fn cmd_identify(config_path: &Path) -> Result<CommandOutput> {
    let started = Instant::now();
    let cfg = ExperimentConfig::load(config_path)?;
    cfg.excitation_if_needed()?;
    let outcome = identify(&cfg)?;
    let dir = cfg.output_dir().join("identify");
    write_identification(&outcome, &dir)?;
    finish(&cfg, &dir, "identify", started)?;
    Ok(CommandOutput { report: outcome.summary(), dir })
}

pub fn cmd_control(config_path: &Path, mode: ControlMode, identify_inline: bool) -> Result<CommandOutput> {
    let started = Instant::now();
    let cfg = ExperimentConfig::load(config_path)?;
    let ident_dir = cfg.output_dir().join("identify");
    let mut report = String::new();
    let models = if identify_inline {
        cfg.excitation_if_needed()?;
        let outcome = identify(&cfg)?;
        write_identification(&outcome, &ident_dir)?;
        finish(&cfg, &ident_dir, "identify", started)?;
        report.push_str(&outcome.summary());
        outcome.models()
    } else {
        load_models(&ident_dir, &bank_ids(&cfg, mode)?)?
    };
    let outcome = simulate(&cfg, mode, &models)?;
    let dir = cfg.output_dir().join(format!("control-{}", mode.as_str()));
    write_run(&outcome, &dir, cfg.output.svg)?;
    finish(&cfg, &dir, &format!("control --mode {}", mode.as_str()), started)?;
    report.push_str(&outcome.summary.text());
    Ok(CommandOutput { report, dir })
}

/// Output defaults to `compare` inside `dir_a`'s parent.
pub fn cmd_compare(dir_a: &Path, dir_b: &Path, out: Option<&Path>) -> Result<CommandOutput> {
    let started = Instant::now();
    let name = |d: &Path| d.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
    let out = match out {
        Some(o) => o.to_path_buf(),
        None => dir_a
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("compare-{}-vs-{}", name(dir_a), name(dir_b))),
    };
    let cmp = compare_runs(dir_a, dir_b, &out, true)?;
    write_metadata(&out, "compare", started)?;
    Ok(CommandOutput { report: cmp.text(), dir: out })
}

pub fn cmd_prbs_preview(config_path: &Path) -> Result<CommandOutput> {
    let started = Instant::now();
    let cfg = ExperimentConfig::load(config_path)?;
    let exc = cfg.excitation()?;
    let spec = exc.prbs_spec()?;
    let u_ss = cfg.plant.resolve()?.u_ss;
    let u = prbs_channels(&spec, &exc.levels(&u_ss)?)?;
    let dir = cfg.output_dir().join("prbs-preview");
    create_dir(&dir)?;
    let ts = cfg.plant.resolve()?.ts;
    let path = dir.join("prbs.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=u.ncols()).map(|i| format!("u{i}")));
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;
    for k in 0..u.nrows() {
        let mut rec = vec![fmt_f64(k as f64 * ts)];
        rec.extend(u.row(k).iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    if cfg.output.svg {
        let t: Vec<f64> = (0..u.nrows()).map(|k| k as f64 * ts).collect();
        for j in 0..u.ncols() {
            let col: Vec<f64> = u.column(j).iter().copied().collect();
            let plot = line_plot(&format!("PRBS input {}", j + 1), "t [s]", &[Series { name: "u", x: &t, y: &col }]);
            write_file(&dir.join(format!("u{}.svg", j + 1)), &plot)?;
        }
    }
    let mut report = String::new();
    let _ = writeln!(
        report,
        "register length {}, taps {:?}, period {} bits, clock period {}, {} samples x {} channels",
        spec.register_length,
        spec.taps,
        spec.period(),
        spec.clock_period,
        u.nrows(),
        u.ncols()
    );
    let switches: BTreeMap<usize, usize> = (0..u.ncols())
        .map(|j| (j + 1, (1..u.nrows()).filter(|&k| u[(k, j)] != u[(k - 1, j)]).count()))
        .collect();
    let _ = writeln!(report, "level switches per channel: {switches:?}");
    finish(&cfg, &dir, "prbs-preview", started)?;
    Ok(CommandOutput { report, dir })
}

impl ExperimentConfig {
    /// Surrogate excitation needs `[excitation]`; CSV replay does not.
    fn excitation_if_needed(&self) -> Result<()> {
        if self.plant.source == PlantSource::Surrogate {
            self.excitation()?;
        }
        Ok(())
    }
}
