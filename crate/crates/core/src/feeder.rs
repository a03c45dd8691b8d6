//! Feeder description files.
//!
//! ```text
//! vvc-feeder 1
//! base_kv 12.66
//! base_mva 10
//! slack <bus id> <voltage p.u.>
//! [buses]      id p_kw q_kvar
//! [branches]   from to r_ohm x_ohm
//! [oltc]       from to taps ratio_min ratio_max
//! [cb]         bus taps q_min_mvar q_max_mvar
//! [dg]         bus s_mva p_max_mw
//! [svc]        bus q_min_mvar q_max_mvar
//! ```
//!
//! Bus ids are free-form labels; `#` starts a comment.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::grid::{
    BranchSpec, BusSpec, CbSpec, DgSpec, GridError, NetworkModel, NetworkParts, OltcSpec, SvcSpec,
};

pub const FEEDER_MAGIC: &str = "vvc-feeder";
pub const FEEDER_VERSION: u32 = 1;

pub(crate) const IEEE33_FEEDER: &str = include_str!("../data/ieee33.feeder");

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("reading feeder file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Header,
    Buses,
    Branches,
    Oltc,
    Cb,
    Dg,
    Svc,
}

pub fn load_feeder(path: &Path) -> Result<NetworkModel, FeederError> {
    parse_feeder(&std::fs::read_to_string(path)?)
}

pub fn parse_feeder(text: &str) -> Result<NetworkModel, FeederError> {
    let mut section = Section::Header;
    let mut seen_magic = false;
    let mut base_kv = None;
    let mut base_mva = None;
    let mut slack: Option<(String, f64, usize)> = None;
    let mut buses = Vec::new();
    let mut bus_index: HashMap<String, usize> = HashMap::new();
    // Raw device/branch rows are resolved once all buses are known.
    let mut branch_rows = Vec::new();
    let mut oltc_rows = Vec::new();
    let mut cb_rows = Vec::new();
    let mut dg_rows = Vec::new();
    let mut svc_rows = Vec::new();

    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| FeederError::Syntax { line, message };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if !seen_magic {
            if fields.len() != 2 || fields[0] != FEEDER_MAGIC {
                return Err(err(format!("expected header `{FEEDER_MAGIC} {FEEDER_VERSION}`")));
            }
            if fields[1] != FEEDER_VERSION.to_string() {
                return Err(err(format!("unsupported feeder version {}", fields[1])));
            }
            seen_magic = true;
            continue;
        }
        if content.starts_with('[') {
            section = match content {
                "[buses]" => Section::Buses,
                "[branches]" => Section::Branches,
                "[oltc]" => Section::Oltc,
                "[cb]" => Section::Cb,
                "[dg]" => Section::Dg,
                "[svc]" => Section::Svc,
                other => return Err(err(format!("unknown section {other}"))),
            };
            continue;
        }
        let nums = |from: usize, count: usize| -> Result<Vec<f64>, FeederError> {
            if fields.len() != from + count {
                return Err(err(format!(
                    "expected {} columns, found {}",
                    from + count,
                    fields.len()
                )));
            }
            fields[from..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(format!("`{f}` is not a number")))
                })
                .collect()
        };
        match section {
            Section::Header => match fields[0] {
                "base_kv" => base_kv = Some(nums(1, 1)?[0]),
                "base_mva" => base_mva = Some(nums(1, 1)?[0]),
                "slack" => {
                    if fields.len() != 3 {
                        return Err(err("expected `slack <bus id> <voltage>`".into()));
                    }
                    let volt = fields[2]
                        .parse::<f64>()
                        .map_err(|_| err(format!("`{}` is not a number", fields[2])))?;
                    slack = Some((fields[1].to_string(), volt, line));
                }
                other => return Err(err(format!("unknown header key `{other}`"))),
            },
            Section::Buses => {
                let v = nums(1, 2)?;
                let id = fields[0].to_string();
                let label = id
                    .parse::<usize>()
                    .map_err(|_| err(format!("bus id `{id}` is not a non-negative integer")))?;
                if bus_index.insert(id.clone(), buses.len()).is_some() {
                    return Err(err(format!("duplicate bus id {id}")));
                }
                buses.push(BusSpec {
                    id: label,
                    load_p_mw: v[0] / 1000.0,
                    load_q_mvar: v[1] / 1000.0,
                });
            }
            Section::Branches => {
                let v = nums(2, 2)?;
                branch_rows.push((line, fields[0].to_string(), fields[1].to_string(), v));
            }
            Section::Oltc => {
                let v = nums(2, 3)?;
                oltc_rows.push((line, fields[0].to_string(), fields[1].to_string(), v));
            }
            Section::Cb => {
                let v = nums(1, 3)?;
                cb_rows.push((line, fields[0].to_string(), v));
            }
            Section::Dg => {
                let v = nums(1, 2)?;
                dg_rows.push((line, fields[0].to_string(), v));
            }
            Section::Svc => {
                let v = nums(1, 2)?;
                svc_rows.push((line, fields[0].to_string(), v));
            }
        }
    }

    let missing = |what: &str| FeederError::Syntax {
        line: text.lines().count(),
        message: format!("missing {what}"),
    };
    if !seen_magic {
        return Err(missing("file header"));
    }
    let base_kv = base_kv.ok_or_else(|| missing("base_kv"))?;
    let base_mva = base_mva.ok_or_else(|| missing("base_mva"))?;
    let (slack_id, slack_voltage, slack_line) = slack.ok_or_else(|| missing("slack"))?;
    let resolve = |line: usize, id: &str| {
        bus_index.get(id).copied().ok_or_else(|| FeederError::Syntax {
            line,
            message: format!("unknown bus id {id}"),
        })
    };
    let z_base = base_kv * base_kv / base_mva;

    let mut branches = Vec::with_capacity(branch_rows.len());
    let mut branch_lookup = HashMap::new();
    for (line, from, to, v) in &branch_rows {
        let (f, t) = (resolve(*line, from)?, resolve(*line, to)?);
        branch_lookup.insert((f.min(t), f.max(t)), branches.len());
        branches.push(BranchSpec {
            from: f,
            to: t,
            r_pu: v[0] / z_base,
            x_pu: v[1] / z_base,
        });
    }
    let mut oltcs = Vec::new();
    for (line, from, to, v) in &oltc_rows {
        let (f, t) = (resolve(*line, from)?, resolve(*line, to)?);
        let branch = *branch_lookup
            .get(&(f.min(t), f.max(t)))
            .ok_or_else(|| FeederError::Syntax {
                line: *line,
                message: format!("no branch between {from} and {to}"),
            })?;
        oltcs.push(OltcSpec {
            branch,
            taps: tap_count(*line, v[0])?,
            ratio_min: v[1],
            ratio_max: v[2],
        });
    }
    let mut cbs = Vec::new();
    for (line, bus, v) in &cb_rows {
        cbs.push(CbSpec {
            bus: resolve(*line, bus)?,
            taps: tap_count(*line, v[0])?,
            q_min_mvar: v[1],
            q_max_mvar: v[2],
        });
    }
    let mut dgs = Vec::new();
    for (line, bus, v) in &dg_rows {
        dgs.push(DgSpec {
            bus: resolve(*line, bus)?,
            s_mva: v[0],
            p_max_mw: v[1],
        });
    }
    let mut svcs = Vec::new();
    for (line, bus, v) in &svc_rows {
        svcs.push(SvcSpec {
            bus: resolve(*line, bus)?,
            q_min_mvar: v[0],
            q_max_mvar: v[1],
        });
    }

    Ok(NetworkModel::new(NetworkParts {
        buses,
        branches,
        oltcs,
        cbs,
        dgs,
        svcs,
        slack: resolve(slack_line, &slack_id)?,
        slack_voltage,
        base_kv,
        base_mva,
    })?)
}

fn tap_count(line: usize, v: f64) -> Result<usize, FeederError> {
    if v.fract() != 0.0 || v < 0.0 {
        return Err(FeederError::Syntax {
            line,
            message: format!("tap count {v} is not an integer"),
        });
    }
    Ok(v as usize)
}

/// Serializes a network back into the feeder format.
pub fn write_feeder(net: &NetworkModel) -> String {
    let p = net.parts();
    let z_base = p.base_kv * p.base_kv / p.base_mva;
    let id = |bus: usize| p.buses[bus].id;
    let mut out = String::new();
    let _ = writeln!(out, "{FEEDER_MAGIC} {FEEDER_VERSION}");
    let _ = writeln!(out, "base_kv {}", p.base_kv);
    let _ = writeln!(out, "base_mva {}", p.base_mva);
    let _ = writeln!(out, "slack {} {}", id(p.slack), p.slack_voltage);
    let _ = writeln!(out, "\n[buses]");
    for b in &p.buses {
        let _ = writeln!(out, "{} {} {}", b.id, b.load_p_mw * 1000.0, b.load_q_mvar * 1000.0);
    }
    let _ = writeln!(out, "\n[branches]");
    for b in &p.branches {
        let _ = writeln!(out, "{} {} {} {}", id(b.from), id(b.to), b.r_pu * z_base, b.x_pu * z_base);
    }
    let _ = writeln!(out, "\n[oltc]");
    for o in &p.oltcs {
        let b = &p.branches[o.branch];
        let _ = writeln!(out, "{} {} {} {} {}", id(b.from), id(b.to), o.taps, o.ratio_min, o.ratio_max);
    }
    let _ = writeln!(out, "\n[cb]");
    for c in &p.cbs {
        let _ = writeln!(out, "{} {} {} {}", id(c.bus), c.taps, c.q_min_mvar, c.q_max_mvar);
    }
    let _ = writeln!(out, "\n[dg]");
    for d in &p.dgs {
        let _ = writeln!(out, "{} {} {}", id(d.bus), d.s_mva, d.p_max_mw);
    }
    let _ = writeln!(out, "\n[svc]");
    for s in &p.svcs {
        let _ = writeln!(out, "{} {} {}", id(s.bus), s.q_min_mvar, s.q_max_mvar);
    }
    out
}
