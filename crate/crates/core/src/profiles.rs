//! Daily load/DG profiles at 5-minute resolution.
//!
//! Profile files are comma-separated text. The first line is the version tag
//! `# vvc-profile 1`; the second names the columns: `day,step`, then one
//! `load:<bus id>` column per bus in feeder order and one `dg:<bus id>` column
//! per DG. Load columns hold nonnegative multipliers of the base load in
//! `[0, 2]`; DG columns hold active output in MW, at most the DG rating.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::grid::NetworkModel;

/// Fast steps per day (24 h at 5 min).
pub const STEPS_PER_DAY: usize = 288;
pub const MAX_LOAD_SCALE: f64 = 2.0;
pub const PROFILE_TAG: &str = "# vvc-profile 1";

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("row {row} (line {line}), column `{column}`: {reason}")]
    Value {
        row: usize,
        line: usize,
        column: String,
        reason: String,
    },
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("day {day} has {rows} rows, expected {STEPS_PER_DAY}")]
    DayLength { day: usize, rows: usize },
    #[error("day {day}, step {step}: {reason}")]
    Invariant {
        day: usize,
        step: usize,
        reason: String,
    },
    #[error("profile i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One day of exogenous inputs: one row per 5-minute step.
#[derive(Debug, Clone, PartialEq)]
pub struct DayProfile {
    n_buses: usize,
    n_dgs: usize,
    load_scale: Vec<f64>,
    dg_active: Vec<f64>,
}

impl DayProfile {
    /// Builds a day from row-major matrices, validating every invariant.
    pub fn new(
        net: &NetworkModel,
        day: usize,
        load_scale: Vec<f64>,
        dg_active: Vec<f64>,
    ) -> Result<Self, ProfileError> {
        let n_buses = net.n_buses();
        let n_dgs = net.dgs().len();
        if load_scale.len() != STEPS_PER_DAY * n_buses || dg_active.len() != STEPS_PER_DAY * n_dgs {
            return Err(ProfileError::DayLength {
                day,
                rows: load_scale.len() / n_buses.max(1),
            });
        }
        for (i, &v) in load_scale.iter().enumerate() {
            if let Some(reason) = load_scale_problem(v) {
                return Err(ProfileError::Invariant {
                    day,
                    step: i / n_buses,
                    reason: format!("bus {}: {reason}", net.buses()[i % n_buses].id),
                });
            }
        }
        for (i, &p) in dg_active.iter().enumerate() {
            let dg = &net.dgs()[i % n_dgs];
            if let Some(reason) = dg_output_problem(p, dg.s_mva) {
                return Err(ProfileError::Invariant {
                    day,
                    step: i / n_dgs,
                    reason: format!("DG {}: {reason}", i % n_dgs),
                });
            }
        }
        Ok(Self {
            n_buses,
            n_dgs,
            load_scale,
            dg_active,
        })
    }

    /// A flat day: every load at `scale`, every DG at `dg_mw` (clipped to its rating).
    pub fn constant(net: &NetworkModel, scale: f64, dg_mw: f64) -> Result<Self, ProfileError> {
        let dg_row: Vec<f64> = net.dgs().iter().map(|d| dg_mw.min(d.s_mva)).collect();
        Self::new(
            net,
            0,
            vec![scale; STEPS_PER_DAY * net.n_buses()],
            dg_row.repeat(STEPS_PER_DAY),
        )
    }

    pub fn steps(&self) -> usize {
        STEPS_PER_DAY
    }
    pub fn load_row(&self, step: usize) -> &[f64] {
        &self.load_scale[step * self.n_buses..(step + 1) * self.n_buses]
    }
    pub fn dg_row(&self, step: usize) -> &[f64] {
        &self.dg_active[step * self.n_dgs..(step + 1) * self.n_dgs]
    }
    pub fn load_matrix(&self) -> &[f64] {
        &self.load_scale
    }
    pub fn dg_matrix(&self) -> &[f64] {
        &self.dg_active
    }
}

fn load_scale_problem(v: f64) -> Option<String> {
    (!(0.0..=MAX_LOAD_SCALE).contains(&v))
        .then(|| format!("load scale {v} outside [0, {MAX_LOAD_SCALE}]"))
}

fn dg_output_problem(p: f64, s: f64) -> Option<String> {
    (!(0.0..=s).contains(&p)).then(|| format!("active output {p} MW outside [0, {s}]"))
}

fn column_names(net: &NetworkModel) -> Vec<String> {
    let mut cols = vec!["day".to_string(), "step".to_string()];
    cols.extend(net.buses().iter().map(|b| format!("load:{}", b.id)));
    cols.extend(net.dgs().iter().map(|d| format!("dg:{}", net.buses()[d.bus].id)));
    cols
}

pub fn write_profiles<W: Write>(out: W, net: &NetworkModel, days: &[DayProfile]) -> Result<(), ProfileError> {
    let mut out = out;
    writeln!(out, "{PROFILE_TAG}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(column_names(net))?;
    for (d, day) in days.iter().enumerate() {
        for step in 0..STEPS_PER_DAY {
            let mut rec = vec![d.to_string(), step.to_string()];
            // `Display` for f64 prints the shortest round-tripping representation.
            rec.extend(day.load_row(step).iter().map(|v| v.to_string()));
            rec.extend(day.dg_row(step).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_profiles(path: &Path, net: &NetworkModel, days: &[DayProfile]) -> Result<(), ProfileError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_profiles(file, net, days)
}

pub fn load_profiles(path: &Path, net: &NetworkModel) -> Result<Vec<DayProfile>, ProfileError> {
    read_profiles(std::fs::File::open(path)?, net)
}

pub fn read_profiles<R: Read>(input: R, net: &NetworkModel) -> Result<Vec<DayProfile>, ProfileError> {
    let mut input = BufReader::new(input);
    let mut tag = String::new();
    input.read_line(&mut tag)?;
    if tag.trim_end() != PROFILE_TAG {
        return Err(ProfileError::Schema {
            line: 1,
            reason: format!("expected version tag `{PROFILE_TAG}`"),
        });
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let expected = column_names(net);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(ProfileError::Schema {
            line: 2,
            reason: format!(
                "columns do not match the feeder: expected {} columns starting `{}`",
                expected.len(),
                expected[..expected.len().min(4)].join(",")
            ),
        });
    }
    let n_buses = net.n_buses();
    let n_dgs = net.dgs().len();
    let mut days: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let line = row + 2;
        let bad = |col: usize, reason: String| ProfileError::Value {
            row,
            line,
            column: expected[col].clone(),
            reason,
        };
        let int = |col: usize| -> Result<usize, ProfileError> {
            rec[col]
                .trim()
                .parse::<usize>()
                .map_err(|_| bad(col, format!("`{}` is not an index", &rec[col])))
        };
        let (day, step) = (int(0)?, int(1)?);
        if day != days.len() && day + 1 != days.len() {
            return Err(bad(0, format!("day {day} out of sequence")));
        }
        if day == days.len() {
            days.push((Vec::new(), Vec::new()));
        }
        let (loads, dgs) = days.last_mut().unwrap();
        if step != loads.len() / n_buses.max(1) {
            return Err(bad(1, format!("step {step} out of sequence")));
        }
        for col in 2..expected.len() {
            let v: f64 = rec[col]
                .trim()
                .parse()
                .map_err(|_| bad(col, format!("`{}` is not a number", &rec[col])))?;
            if col < 2 + n_buses {
                if let Some(reason) = load_scale_problem(v) {
                    return Err(bad(col, reason));
                }
                loads.push(v);
            } else {
                if let Some(reason) = dg_output_problem(v, net.dgs()[col - 2 - n_buses].s_mva) {
                    return Err(bad(col, reason));
                }
                dgs.push(v);
            }
        }
        debug_assert_eq!(dgs.len() * n_buses.max(1), loads.len() * n_dgs);
    }
    days.into_iter()
        .enumerate()
        .map(|(d, (loads, dgs))| {
            if loads.len() != STEPS_PER_DAY * n_buses {
                return Err(ProfileError::DayLength {
                    day: d,
                    rows: loads.len() / n_buses.max(1),
                });
            }
            DayProfile::new(net, d, loads, dgs)
        })
        .collect()
}

/// Shape constants of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthShape {
    pub load_base: f64,
    pub peak_weight: f64,
    pub morning_hour: f64,
    pub evening_hour: f64,
    pub morning_width_h: f64,
    pub evening_width_h: f64,
    pub ar_coefficient: f64,
    pub ar_sigma: f64,
    /// Range of the per-day solar peak as a fraction of each DG's declared maximum output.
    pub solar_peak: (f64, f64),
}

impl Default for SynthShape {
    fn default() -> Self {
        Self {
            load_base: 0.55,
            peak_weight: 0.5,
            morning_hour: 9.0,
            evening_hour: 19.0,
            morning_width_h: 1.5,
            evening_width_h: 2.0,
            ar_coefficient: 0.95,
            ar_sigma: 0.01,
            solar_peak: (0.7, 1.0),
        }
    }
}

fn gaussian(hour: f64, center: f64, width: f64) -> f64 {
    let z = (hour - center) / width;
    (-0.5 * z * z).exp()
}

/// Solar bell centered at noon, exactly zero outside 06:00-18:00.
pub fn solar_bell(hour: f64) -> f64 {
    if !(6.0..=18.0).contains(&hour) {
        return 0.0;
    }
    (std::f64::consts::PI * (hour - 6.0) / 12.0).sin().max(0.0).powf(1.5)
}

/// Deterministic synthetic days with the default shape.
pub fn synthesize_profiles(net: &NetworkModel, seed: u64, n_days: usize) -> Vec<DayProfile> {
    synthesize_with_shape(net, seed, n_days, &SynthShape::default())
}

/// Loads follow a double-peak daily curve with per-bus spread and AR(1)
/// multiplicative noise; DGs follow a solar bell with AR(1) cloud dips.
/// Loads and DG output are drawn from independent streams.
pub fn synthesize_with_shape(
    net: &NetworkModel,
    seed: u64,
    n_days: usize,
    shape: &SynthShape,
) -> Vec<DayProfile> {
    let mut load_rng = ChaCha8Rng::seed_from_u64(seed);
    load_rng.set_stream(1);
    let mut solar_rng = ChaCha8Rng::seed_from_u64(seed);
    solar_rng.set_stream(2);
    let n_buses = net.n_buses();
    let noise_sd = shape.ar_sigma;
    let mut days = Vec::with_capacity(n_days);
    for d in 0..n_days {
        let amplitude: f64 = load_rng.gen_range(0.92..1.05);
        let bus_factor: Vec<f64> = (0..n_buses).map(|_| load_rng.gen_range(0.92..1.08)).collect();
        let mut ar = vec![0.0f64; n_buses];
        let mut loads = Vec::with_capacity(STEPS_PER_DAY * n_buses);
        for step in 0..STEPS_PER_DAY {
            let hour = step as f64 / 12.0;
            let curve = shape.load_base
                + shape.peak_weight
                    * (gaussian(hour, shape.morning_hour, shape.morning_width_h)
                        + gaussian(hour, shape.evening_hour, shape.evening_width_h));
            for (b, state) in ar.iter_mut().enumerate() {
                let eps: f64 = load_rng.sample(StandardNormal);
                *state = shape.ar_coefficient * *state + noise_sd * eps;
                let v = curve * amplitude * bus_factor[b] * (1.0 + *state);
                loads.push(v.clamp(0.0, MAX_LOAD_SCALE));
            }
        }

        let n_dgs = net.dgs().len();
        let peak: f64 = solar_rng.gen_range(shape.solar_peak.0..shape.solar_peak.1);
        let cloudiness: f64 = solar_rng.gen_range(0.0..0.15);
        let mut cloud = 0.0f64;
        let mut dgs = Vec::with_capacity(STEPS_PER_DAY * n_dgs);
        for step in 0..STEPS_PER_DAY {
            let hour = step as f64 / 12.0;
            let eps: f64 = solar_rng.sample(StandardNormal);
            cloud = 0.9 * cloud + cloudiness * eps;
            let sun = solar_bell(hour) * peak * (1.0 - cloud.abs()).clamp(0.3, 1.0);
            for dg in net.dgs() {
                dgs.push((sun * dg.p_max_mw).clamp(0.0, dg.s_mva));
            }
        }
        days.push(
            DayProfile::new(net, d, loads, dgs).expect("synthetic values respect profile invariants"),
        );
    }
    days
}
