//! Labelled synthetic acceleration data from a temperature-sensitive,
//! optionally damaged shear building.
//!
//! Training data is one continuous ambient record of the intact building,
//! delivered in blocks over which the temperature is held constant. Each
//! test case subjects a (possibly damaged) building to a scaled event, labels
//! it from the peak inter-story drift, and then records ambient vibration.

pub mod building;
pub mod excitation;
pub mod material;

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::AccelRecord;
use crate::seed::derive_seed;

pub use building::{
    integrate, natural_frequencies, stiffness_matrix, BuildingSpec, DirectionResponse, ShearModel, State, DRIFT_LIMIT,
    G,
};
pub use excitation::{ricker, ExcitationKind, ExcitationSpec};
pub use material::{es_of_temp, fc_of_temp, stiffness_scale, REFERENCE_TEMPERATURE};

/// Damaged iff any story's peak drift ratio exceeds [`DRIFT_LIMIT`].
pub fn label_from_drift(peak_drift: &[f64]) -> bool {
    peak_drift.iter().any(|d| *d > DRIFT_LIMIT)
}

/// Output of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Base (ground) and absolute roof accelerations, g.
    pub record: AccelRecord,
    /// Peak inter-story drift ratio per story over both directions.
    pub peak_drift: Vec<f64>,
    pub damaged: bool,
}

/// Both directions of a building at one temperature, with persistent state
/// so consecutive runs continue the same motion.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: BuildingSpec,
    sample_rate: f64,
    models: [ShearModel; 2],
    states: [State; 2],
}

impl Simulator {
    /// Starts at rest.
    pub fn new(spec: &BuildingSpec, tau: f64, sample_rate: f64) -> Result<Self> {
        let dt = 1.0 / sample_rate;
        let models = [spec.direction_model(0, tau, dt)?, spec.direction_model(1, tau, dt)?];
        let n = spec.stories();
        Ok(Self {
            spec: spec.clone(),
            sample_rate,
            models,
            states: [State::at_rest(n), State::at_rest(n)],
        })
    }

    /// Changes the temperature, keeping displacement and velocity.
    pub fn set_temperature(&mut self, tau: f64) -> Result<()> {
        let dt = 1.0 / self.sample_rate;
        self.models = [self.spec.direction_model(0, tau, dt)?, self.spec.direction_model(1, tau, dt)?];
        Ok(())
    }

    pub fn state(&self, direction: usize) -> &State {
        &self.states[direction]
    }

    /// Integrates through `ground` (g per direction). The first sample is the
    /// current instant, so consecutive runs share their boundary sample.
    pub fn run(&mut self, ground: [Vec<f64>; 2]) -> Result<Simulation> {
        if ground[0].len() != ground[1].len() || ground[0].len() < 2 {
            return Err(invalid("both directions need the same number (at least 2) of samples"));
        }
        let h = self.spec.story_height;
        let r1 = integrate(&self.models[0], &mut self.states[0], &ground[0], h);
        let r2 = integrate(&self.models[1], &mut self.states[1], &ground[1], h);
        let peak_drift: Vec<f64> = r1.peak_drift.iter().zip(&r2.peak_drift).map(|(a, b)| a.max(*b)).collect();
        let [g1, g2] = ground;
        let record = AccelRecord::new(self.sample_rate, [g1, g2, r1.roof_g, r2.roof_g])?;
        Ok(Simulation {
            damaged: label_from_drift(&peak_drift),
            record,
            peak_drift,
        })
    }
}

/// Simulates `spec` under `exc` at `tau` °C, starting from rest.
pub fn simulate(spec: &BuildingSpec, exc: &ExcitationSpec, tau: f64) -> Result<Simulation> {
    spec.validate()?;
    let ground = exc.ground_motion()?;
    Simulator::new(spec, tau, exc.sample_rate)?.run(ground)
}

/// Seasonal plus daily sinusoids with Gaussian jitter, °C. Time is in hours
/// from the start of the training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSampler {
    pub annual_mean: f64,
    pub annual_amplitude: f64,
    pub daily_amplitude: f64,
    pub jitter: f64,
    /// Day of year at hour 0.
    pub start_day: f64,
}

impl Default for TemperatureSampler {
    fn default() -> Self {
        Self {
            annual_mean: 18.0,
            annual_amplitude: 6.0,
            daily_amplitude: 4.0,
            jitter: 1.5,
            start_day: 0.0,
        }
    }
}

impl TemperatureSampler {
    /// Deterministic part; the annual peak falls mid-year and the daily
    /// peak at 15:00.
    pub fn mean_at(&self, hours: f64) -> f64 {
        let day = self.start_day + hours / 24.0;
        self.annual_mean - self.annual_amplitude * (2.0 * PI * day / 365.25).cos()
            + self.daily_amplitude * (2.0 * PI * (hours - 9.0) / 24.0).sin()
    }

    pub fn sample<R: Rng>(&self, hours: f64, rng: &mut R) -> Result<f64> {
        let normal = Normal::new(0.0, self.jitter).map_err(|e| invalid(format!("temperature jitter: {e}")))?;
        Ok(self.mean_at(hours) + normal.sample(rng))
    }
}

/// Everything needed to generate a labelled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub building: BuildingSpec,
    pub sample_rate: f64,
    pub ambient_std_g: f64,
    pub train_hours: f64,
    /// Length of a constant-temperature training block.
    pub block_minutes: f64,
    pub test_cases: usize,
    pub damaged_fraction: f64,
    /// Every test case intact with sub-threshold events.
    pub null_experiment: bool,
    /// Range of per-story stiffness factors of damaged cases.
    pub damage_range: [f64; 2],
    /// Range of target peak drift ratios for damaged cases.
    pub damaged_drift: [f64; 2],
    /// Range of target peak drift ratios for undamaged cases.
    pub undamaged_drift: [f64; 2],
    pub test_minutes: f64,
    /// Ambient motion discarded before any recording.
    pub warmup_seconds: f64,
    pub temperature: TemperatureSampler,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            building: BuildingSpec::default(),
            sample_rate: 100.0,
            ambient_std_g: 1e-4,
            train_hours: 48.0,
            block_minutes: 10.0,
            test_cases: 100,
            damaged_fraction: 0.78,
            null_experiment: false,
            damage_range: [0.5, 0.8],
            damaged_drift: [0.006, 0.02],
            undamaged_drift: [0.0005, 0.004],
            test_minutes: 10.0,
            warmup_seconds: 20.0,
            temperature: TemperatureSampler::default(),
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0] >= lo && r[0] <= r[1] && r[1] <= hi) {
        return Err(invalid(format!("{name} [{}, {}] must be an ordered range within [{lo}, {hi}]", r[0], r[1])));
    }
    Ok(())
}

const TRAIN_STREAM: u64 = 1 << 32;
const TEST_STREAM: u64 = 2 << 32;

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.building.validate()?;
        if !(self.sample_rate > 0.0 && self.ambient_std_g > 0.0) {
            return Err(invalid("sample rate and ambient standard deviation must be positive"));
        }
        if !(self.train_hours > 0.0 && self.block_minutes > 0.0 && self.test_minutes > 0.0 && self.warmup_seconds >= 0.0) {
            return Err(invalid("durations must be positive"));
        }
        let block = self.block_minutes * 60.0 * self.sample_rate;
        if (block - block.round()).abs() > 1e-6 {
            return Err(invalid("block length must be a whole number of samples"));
        }
        check_range("damaged fraction", [self.damaged_fraction; 2], 0.0, 1.0)?;
        check_range("damage range", self.damage_range, f64::MIN_POSITIVE, 1.0)?;
        check_range("damaged drift", self.damaged_drift, DRIFT_LIMIT * (1.0 + 1e-12), f64::INFINITY)?;
        check_range("undamaged drift", self.undamaged_drift, 0.0, DRIFT_LIMIT)?;
        if !(self.temperature.jitter >= 0.0) {
            return Err(invalid("temperature jitter must be non-negative"));
        }
        Ok(())
    }

    pub fn train_blocks(&self) -> usize {
        (self.train_hours * 60.0 / self.block_minutes).round() as usize
    }

    fn ambient(&self, seconds: f64, seed: u64) -> ExcitationSpec {
        ExcitationSpec {
            kind: ExcitationKind::Ambient {
                std_g: self.ambient_std_g,
            },
            duration: seconds,
            sample_rate: self.sample_rate,
            seed,
        }
    }

    /// Planned class of every test case, shuffled deterministically.
    pub fn test_plan(&self) -> Vec<bool> {
        if self.null_experiment {
            return vec![false; self.test_cases];
        }
        let damaged = (self.test_cases as f64 * self.damaged_fraction).round() as usize;
        let mut plan: Vec<bool> = (0..self.test_cases).map(|i| i < damaged).collect();
        plan.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, TEST_STREAM - 1)));
        plan
    }
}

/// One constant-temperature block of the training record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBlock {
    pub index: usize,
    pub start_hours: f64,
    pub temperature: f64,
    pub record: AccelRecord,
}

/// Generates the intact-building training record block by block, handing
/// each to `sink` in order. Consecutive blocks share their boundary sample.
pub fn generate_training<F>(config: &DatasetConfig, mut sink: F) -> Result<()>
where
    F: FnMut(TrainingBlock) -> Result<()>,
{
    config.validate()?;
    let mut intact = config.building.clone();
    intact.damage.iter_mut().for_each(|d| *d = 1.0);
    let block_seconds = config.block_minutes * 60.0;
    let mut sim: Option<Simulator> = None;
    let mut carry = [0.0f64; 2];
    for k in 0..config.train_blocks() {
        let stream = derive_seed(config.seed, TRAIN_STREAM + k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let start_hours = k as f64 * config.block_minutes / 60.0;
        let tau = config.temperature.sample(start_hours, &mut rng)?;
        match sim.as_mut() {
            Some(s) => s.set_temperature(tau)?,
            None => {
                let mut s = Simulator::new(&intact, tau, config.sample_rate)?;
                if config.warmup_seconds > 0.0 {
                    let warm = config.ambient(config.warmup_seconds, derive_seed(stream, 0)).ground_motion()?;
                    carry = [warm[0][warm[0].len() - 1], warm[1][warm[1].len() - 1]];
                    s.run(warm)?;
                }
                sim = Some(s);
            }
        }
        let mut ground = config.ambient(block_seconds, derive_seed(stream, 1)).ground_motion()?;
        for d in 0..2 {
            ground[d][0] = carry[d];
            carry[d] = ground[d][ground[d].len() - 1];
        }
        let out = sim.as_mut().expect("simulator initialised").run(ground)?;
        sink(TrainingBlock {
            index: k,
            start_hours,
            temperature: tau,
            record: out.record,
        })?;
    }
    Ok(())
}

/// Ground truth and provenance of one test case.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub simulation_id: String,
    pub file: String,
    pub temperature: f64,
    pub damage: Vec<f64>,
    pub pga_g: [f64; 2],
    pub peak_drift: Vec<f64>,
    pub damaged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub row: ManifestRow,
    /// Post-event ambient record.
    pub record: AccelRecord,
}

/// Runs test case `index` of the planned class `damaged`.
pub fn simulate_test_case(config: &DatasetConfig, index: usize, damaged: bool) -> Result<TestCase> {
    config.validate()?;
    let stream = derive_seed(config.seed, TEST_STREAM + index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    // Test temperatures come from the same period as the training record.
    let hours = rng.random_range(0.0..config.train_hours);
    let tau = config.temperature.sample(hours, &mut rng)?;
    let mut building = config.building.clone();
    for d in building.damage.iter_mut() {
        *d = if damaged {
            rng.random_range(config.damage_range[0]..=config.damage_range[1])
        } else {
            1.0
        };
    }
    let drift_range = if damaged { config.damaged_drift } else { config.undamaged_drift };
    let target = rng.random_range(drift_range[0]..=drift_range[1]);

    // The system is linear, so drift scales exactly with the event amplitude.
    let mut event = ExcitationSpec::event([1.0, 1.0], derive_seed(stream, 0));
    event.sample_rate = config.sample_rate;
    let unit = simulate(&building, &event, tau)?;
    let unit_peak = unit.peak_drift.iter().copied().fold(0.0, f64::max);
    if !(unit_peak > 0.0) {
        return Err(Error::Numerical("event produced no drift".into()));
    }
    let pga = target / unit_peak;
    let peak_drift: Vec<f64> = unit.peak_drift.iter().map(|d| d * pga).collect();

    let mut sim = Simulator::new(&building, tau, config.sample_rate)?;
    if config.warmup_seconds > 0.0 {
        sim.run(config.ambient(config.warmup_seconds, derive_seed(stream, 1)).ground_motion()?)?;
    }
    let record = sim
        .run(config.ambient(config.test_minutes * 60.0, derive_seed(stream, 2)).ground_motion()?)?
        .record;
    let simulation_id = format!("test_{index:04}");
    Ok(TestCase {
        row: ManifestRow {
            file: format!("{simulation_id}.csv"),
            simulation_id,
            temperature: tau,
            damage: building.damage,
            pga_g: [pga, pga],
            damaged: label_from_drift(&peak_drift),
            peak_drift,
        },
        record,
    })
}

/// Generates every test case, handing them to `sink` in index order.
/// Cases are simulated in parallel batches.
pub fn generate_tests<F>(config: &DatasetConfig, mut sink: F) -> Result<()>
where
    F: FnMut(TestCase) -> Result<()>,
{
    config.validate()?;
    let plan = config.test_plan();
    let batch = rayon::current_num_threads().max(1);
    for start in (0..plan.len()).step_by(batch) {
        let end = (start + batch).min(plan.len());
        let cases: Vec<Result<TestCase>> = (start..end)
            .into_par_iter()
            .map(|i| simulate_test_case(config, i, plan[i]))
            .collect();
        for case in cases {
            sink(case?)?;
        }
    }
    Ok(())
}

fn label_name(damaged: bool) -> &'static str {
    if damaged {
        "damaged"
    } else {
        "undamaged"
    }
}

/// Writes `simulation_id,file,temperature,damage_1..,pga_d1,pga_d2,drift_1..,label`.
pub fn write_manifest<W: Write>(mut w: W, rows: &[ManifestRow], comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let stories = rows.first().map_or(0, |r| r.damage.len());
    let mut header = vec!["simulation_id".to_string(), "file".into(), "temperature".into()];
    header.extend((1..=stories).map(|i| format!("damage_{i}")));
    header.extend(["pga_d1".to_string(), "pga_d2".into()]);
    header.extend((1..=stories).map(|i| format!("drift_{i}")));
    header.push("label".into());
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        if r.damage.len() != stories || r.peak_drift.len() != stories {
            return Err(invalid("manifest rows must all describe the same number of stories"));
        }
        let mut cells = vec![r.simulation_id.clone(), r.file.clone(), format!("{:.16e}", r.temperature)];
        cells.extend(r.damage.iter().map(|v| format!("{v:.16e}")));
        cells.extend(r.pga_g.iter().map(|v| format!("{v:.16e}")));
        cells.extend(r.peak_drift.iter().map(|v| format!("{v:.16e}")));
        cells.push(label_name(r.damaged).into());
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Reads a manifest written by [`write_manifest`]; `#` lines are skipped.
pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<ManifestRow>> {
    let mut header: Option<(usize, Vec<String>)> = None;
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let number = i + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = text.split(',').map(str::trim).collect();
        let Some((stories, _)) = &header else {
            let names: Vec<String> = cells.iter().map(|s| s.to_string()).collect();
            let stories = names.iter().filter(|n| n.starts_with("damage_")).count();
            let expected = 3 + 2 * stories + 3;
            if names.len() != expected
                || names[..3] != ["simulation_id", "file", "temperature"]
                || names.last().map(String::as_str) != Some("label")
            {
                return Err(Error::Parse {
                    line: number,
                    message: "unrecognised manifest header".into(),
                });
            }
            header = Some((stories, names));
            continue;
        };
        let s = *stories;
        if cells.len() != 6 + 2 * s {
            return Err(Error::Parse {
                line: number,
                message: format!("expected {} fields, found {}", 6 + 2 * s, cells.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            cells[k].parse().map_err(|_| Error::Parse {
                line: number,
                message: format!("'{}' is not a number", cells[k]),
            })
        };
        let damaged = match cells[cells.len() - 1] {
            "damaged" => true,
            "undamaged" => false,
            other => {
                return Err(Error::Parse {
                    line: number,
                    message: format!("label must be 'damaged' or 'undamaged', found '{other}'"),
                })
            }
        };
        rows.push(ManifestRow {
            simulation_id: cells[0].to_string(),
            file: cells[1].to_string(),
            temperature: num(2)?,
            damage: (0..s).map(|k| num(3 + k)).collect::<Result<_>>()?,
            pga_g: [num(3 + s)?, num(4 + s)?],
            peak_drift: (0..s).map(|k| num(5 + s + k)).collect::<Result<_>>()?,
            damaged,
        });
    }
    if header.is_none() {
        return Err(Error::Parse {
            line: 0,
            message: "manifest is empty".into(),
        });
    }
    Ok(rows)
}
