//! Radial distribution feeder model and backward/forward sweep power flow.
//!
//! Quantities crossing the public API are in engineering units (MW, MVar,
//! p.u. voltage); the solver itself works in per-unit on the network's
//! declared base. Branch impedances are stored in per-unit.

use num_complex::Complex64;
use thiserror::Error;

/// Solver tolerance on the per-bus complex power mismatch, in p.u.
pub const PF_TOLERANCE: f64 = 1e-8;
/// Iteration cap for the sweep.
pub const PF_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("a radial feeder with {buses} buses needs {} branches, found {branches}", buses.saturating_sub(1))]
    BranchCount { buses: usize, branches: usize },
    #[error("bus {0} is not connected to the slack bus")]
    Disconnected(usize),
    #[error("branch {0} has zero series impedance")]
    ZeroImpedance(usize),
    #[error("{device} {index}: tap count {taps} is not an odd integer >= 3")]
    TapCount {
        device: &'static str,
        index: usize,
        taps: usize,
    },
    #[error("{device} {index} refers to {kind} {reference}, which does not exist")]
    DanglingReference {
        device: &'static str,
        index: usize,
        kind: &'static str,
        reference: usize,
    },
    #[error("bus {0} hosts more than one controllable device")]
    SharedNode(usize),
    #[error("{device} {index}: {reason}")]
    DeviceRange {
        device: &'static str,
        index: usize,
        reason: String,
    },
    #[error("invalid operating point: {0}")]
    OperatingPoint(String),
    #[error("tap vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusSpec {
    /// Label used by feeder files; buses are addressed by position everywhere else.
    pub id: usize,
    pub load_p_mw: f64,
    pub load_q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchSpec {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
}

/// Ideal ratio transformer on a branch; tap `i` maps linearly onto
/// `[ratio_min, ratio_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OltcSpec {
    pub branch: usize,
    pub taps: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

impl OltcSpec {
    pub fn ratio(&self, tap: usize) -> f64 {
        linear_tap(tap, self.taps, self.ratio_min, self.ratio_max)
    }
}

/// Switched capacitor bank; tap `i` maps linearly onto `[q_min, q_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CbSpec {
    pub bus: usize,
    pub taps: usize,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
}

impl CbSpec {
    pub fn reactive_mvar(&self, tap: usize) -> f64 {
        linear_tap(tap, self.taps, self.q_min_mvar, self.q_max_mvar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgSpec {
    pub bus: usize,
    pub s_mva: f64,
    /// Declared maximum active output.
    pub p_max_mw: f64,
}

impl DgSpec {
    /// Reactive range from the rated capacity and the declared maximum output.
    pub fn q_bound_static(&self) -> f64 {
        q_headroom(self.s_mva, self.p_max_mw)
    }

    /// Reactive range at the instantaneous active output; this is the bound
    /// enforced on operating points.
    pub fn q_bound_at(&self, p_mw: f64) -> f64 {
        q_headroom(self.s_mva, p_mw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvcSpec {
    pub bus: usize,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
}

/// Plain description of a feeder, validated by [`NetworkModel::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParts {
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
    pub oltcs: Vec<OltcSpec>,
    pub cbs: Vec<CbSpec>,
    pub dgs: Vec<DgSpec>,
    pub svcs: Vec<SvcSpec>,
    pub slack: usize,
    pub slack_voltage: f64,
    pub base_kv: f64,
    pub base_mva: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Topology {
    /// Buses in breadth-first order from the slack.
    order: Vec<usize>,
    /// Branch feeding each bus (None for the slack).
    feeder_branch: Vec<Option<usize>>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// OLTC index per branch, if any.
    branch_oltc: Vec<Option<usize>>,
}

/// A validated radial feeder with its device descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    parts: NetworkParts,
    topo: Topology,
}

fn linear_tap(tap: usize, taps: usize, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * tap as f64 / (taps - 1) as f64
}

fn q_headroom(s: f64, p: f64) -> f64 {
    (s * s - p * p).max(0.0).sqrt()
}

fn check_taps(device: &'static str, index: usize, taps: usize) -> Result<(), GridError> {
    if taps < 3 || taps % 2 == 0 {
        return Err(GridError::TapCount {
            device,
            index,
            taps,
        });
    }
    Ok(())
}

impl NetworkModel {
    pub fn new(parts: NetworkParts) -> Result<Self, GridError> {
        let n = parts.buses.len();
        if n == 0 || parts.branches.len() + 1 != n {
            return Err(GridError::BranchCount {
                buses: n,
                branches: parts.branches.len(),
            });
        }
        if parts.slack >= n {
            return Err(GridError::Disconnected(parts.slack));
        }
        let mut adjacency = vec![Vec::new(); n];
        for (b, br) in parts.branches.iter().enumerate() {
            for end in [br.from, br.to] {
                if end >= n {
                    return Err(GridError::DanglingReference {
                        device: "branch",
                        index: b,
                        kind: "bus",
                        reference: end,
                    });
                }
            }
            if br.r_pu == 0.0 && br.x_pu == 0.0 {
                return Err(GridError::ZeroImpedance(b));
            }
            adjacency[br.from].push((br.to, b));
            adjacency[br.to].push((br.from, b));
        }

        let mut parent = vec![None; n];
        let mut feeder_branch = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        seen[parts.slack] = true;
        order.push(parts.slack);
        let mut head = 0;
        while head < order.len() {
            let bus = order[head];
            head += 1;
            for &(next, b) in &adjacency[bus] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some(bus);
                    feeder_branch[next] = Some(b);
                    children[bus].push(next);
                    order.push(next);
                }
            }
        }
        if let Some(lost) = seen.iter().position(|s| !s) {
            return Err(GridError::Disconnected(lost));
        }

        let mut branch_oltc = vec![None; parts.branches.len()];
        for (i, oltc) in parts.oltcs.iter().enumerate() {
            check_taps("OLTC", i, oltc.taps)?;
            if oltc.branch >= parts.branches.len() {
                return Err(GridError::DanglingReference {
                    device: "OLTC",
                    index: i,
                    kind: "branch",
                    reference: oltc.branch,
                });
            }
            if !(oltc.ratio_min > 0.0 && oltc.ratio_min < oltc.ratio_max) {
                return Err(GridError::DeviceRange {
                    device: "OLTC",
                    index: i,
                    reason: format!("ratio range [{}, {}]", oltc.ratio_min, oltc.ratio_max),
                });
            }
            if branch_oltc[oltc.branch].replace(i).is_some() {
                return Err(GridError::SharedNode(parts.branches[oltc.branch].to));
            }
        }

        let mut occupied = vec![false; n];
        let mut claim = |device: &'static str, index: usize, bus: usize| {
            if bus >= n {
                return Err(GridError::DanglingReference {
                    device,
                    index,
                    kind: "bus",
                    reference: bus,
                });
            }
            if std::mem::replace(&mut occupied[bus], true) {
                return Err(GridError::SharedNode(bus));
            }
            Ok(())
        };
        for (i, cb) in parts.cbs.iter().enumerate() {
            check_taps("CB", i, cb.taps)?;
            claim("CB", i, cb.bus)?;
            if cb.q_min_mvar > cb.q_max_mvar {
                return Err(GridError::DeviceRange {
                    device: "CB",
                    index: i,
                    reason: "q_min exceeds q_max".into(),
                });
            }
        }
        for (i, dg) in parts.dgs.iter().enumerate() {
            claim("DG", i, dg.bus)?;
            if !(dg.s_mva > 0.0) || dg.p_max_mw < 0.0 || dg.p_max_mw > dg.s_mva {
                return Err(GridError::DeviceRange {
                    device: "DG",
                    index: i,
                    reason: format!("rating {} MVA with maximum output {} MW", dg.s_mva, dg.p_max_mw),
                });
            }
        }
        for (i, svc) in parts.svcs.iter().enumerate() {
            claim("SVC", i, svc.bus)?;
            if svc.q_min_mvar > svc.q_max_mvar {
                return Err(GridError::DeviceRange {
                    device: "SVC",
                    index: i,
                    reason: "q_min exceeds q_max".into(),
                });
            }
        }

        Ok(Self {
            parts,
            topo: Topology {
                order,
                feeder_branch,
                parent,
                children,
                branch_oltc,
            },
        })
    }

    /// The built-in 33-bus test feeder.
    pub fn ieee33() -> Self {
        crate::feeder::parse_feeder(crate::feeder::IEEE33_FEEDER)
            .expect("bundled 33-bus feeder is valid")
    }

    pub fn parts(&self) -> &NetworkParts {
        &self.parts
    }
    pub fn buses(&self) -> &[BusSpec] {
        &self.parts.buses
    }
    pub fn branches(&self) -> &[BranchSpec] {
        &self.parts.branches
    }
    pub fn oltcs(&self) -> &[OltcSpec] {
        &self.parts.oltcs
    }
    pub fn cbs(&self) -> &[CbSpec] {
        &self.parts.cbs
    }
    pub fn dgs(&self) -> &[DgSpec] {
        &self.parts.dgs
    }
    pub fn svcs(&self) -> &[SvcSpec] {
        &self.parts.svcs
    }
    pub fn slack(&self) -> usize {
        self.parts.slack
    }
    pub fn slack_voltage(&self) -> f64 {
        self.parts.slack_voltage
    }
    pub fn base_mva(&self) -> f64 {
        self.parts.base_mva
    }
    pub fn base_kv(&self) -> f64 {
        self.parts.base_kv
    }
    pub fn n_buses(&self) -> usize {
        self.parts.buses.len()
    }

    /// Buses in breadth-first order from the slack.
    pub fn sweep_order(&self) -> &[usize] {
        &self.topo.order
    }

    pub fn parent(&self, bus: usize) -> Option<usize> {
        self.topo.parent[bus]
    }

    /// Whether `bus` lies in the subtree rooted at `root` (inclusive).
    pub fn is_downstream(&self, root: usize, bus: usize) -> bool {
        let mut cur = Some(bus);
        while let Some(b) = cur {
            if b == root {
                return true;
            }
            cur = self.topo.parent[b];
        }
        false
    }

    /// Downstream bus of a branch under the slack-rooted orientation.
    pub fn branch_downstream(&self, branch: usize) -> usize {
        let br = &self.parts.branches[branch];
        if self.topo.feeder_branch[br.to] == Some(branch) {
            br.to
        } else {
            br.from
        }
    }

    /// Tap counts of all slow devices: OLTCs first, then CBs.
    pub fn slow_tap_counts(&self) -> Vec<usize> {
        self.parts
            .oltcs
            .iter()
            .map(|o| o.taps)
            .chain(self.parts.cbs.iter().map(|c| c.taps))
            .collect()
    }

    /// Middle tap of every slow device (ratio 1 / zero output on symmetric ranges).
    pub fn neutral_taps(&self) -> Vec<usize> {
        self.slow_tap_counts().iter().map(|t| t / 2).collect()
    }

    /// Number of fast continuous devices: DGs first, then SVCs.
    pub fn n_fast_devices(&self) -> usize {
        self.parts.dgs.len() + self.parts.svcs.len()
    }

    pub fn total_load_mw(&self) -> f64 {
        self.parts.buses.iter().map(|b| b.load_p_mw).sum()
    }
}

/// Device settings and exogenous injections for one power-flow evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOperatingPoint {
    pub oltc_taps: Vec<usize>,
    pub cb_taps: Vec<usize>,
    pub dg_reactive: Vec<f64>,
    pub svc_reactive: Vec<f64>,
    pub dg_active: Vec<f64>,
    /// Per-bus multiplier applied to both P and Q of the base load.
    pub load_scale: Vec<f64>,
}

impl GridOperatingPoint {
    /// Neutral taps, zero DG/SVC output, base load.
    pub fn neutral(net: &NetworkModel) -> Self {
        let n_oltc = net.oltcs().len();
        let taps = net.neutral_taps();
        Self {
            oltc_taps: taps[..n_oltc].to_vec(),
            cb_taps: taps[n_oltc..].to_vec(),
            dg_reactive: vec![0.0; net.dgs().len()],
            svc_reactive: vec![0.0; net.svcs().len()],
            dg_active: vec![0.0; net.dgs().len()],
            load_scale: vec![1.0; net.n_buses()],
        }
    }

    pub fn validate(&self, net: &NetworkModel) -> Result<(), GridError> {
        let bad = |msg: String| Err(GridError::OperatingPoint(msg));
        if self.oltc_taps.len() != net.oltcs().len()
            || self.cb_taps.len() != net.cbs().len()
            || self.dg_reactive.len() != net.dgs().len()
            || self.dg_active.len() != net.dgs().len()
            || self.svc_reactive.len() != net.svcs().len()
            || self.load_scale.len() != net.n_buses()
        {
            return bad("vector lengths do not match the network".into());
        }
        for (i, (&t, o)) in self.oltc_taps.iter().zip(net.oltcs()).enumerate() {
            if t >= o.taps {
                return bad(format!("OLTC {i} tap {t} outside [0, {})", o.taps));
            }
        }
        for (i, (&t, c)) in self.cb_taps.iter().zip(net.cbs()).enumerate() {
            if t >= c.taps {
                return bad(format!("CB {i} tap {t} outside [0, {})", c.taps));
            }
        }
        for (i, dg) in net.dgs().iter().enumerate() {
            let p = self.dg_active[i];
            let q = self.dg_reactive[i];
            if !p.is_finite() || p < 0.0 || p > dg.s_mva + 1e-12 {
                return bad(format!("DG {i} active output {p} MW outside [0, {}]", dg.s_mva));
            }
            if !q.is_finite() || q.abs() > dg.q_bound_at(p) + 1e-9 {
                return bad(format!(
                    "DG {i} reactive output {q} MVar exceeds {}",
                    dg.q_bound_at(p)
                ));
            }
        }
        for (i, svc) in net.svcs().iter().enumerate() {
            let q = self.svc_reactive[i];
            if !q.is_finite() || q < svc.q_min_mvar - 1e-9 || q > svc.q_max_mvar + 1e-9 {
                return bad(format!("SVC {i} output {q} MVar outside its bounds"));
            }
        }
        if let Some(s) = self.load_scale.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return bad(format!("load scale {s} is negative or non-finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Voltage magnitudes in p.u.
    pub voltages: Vec<f64>,
    pub angles_rad: Vec<f64>,
    /// Net nodal injections (generation minus load) implied by the solved voltages.
    pub p_inj_mw: Vec<f64>,
    pub q_inj_mvar: Vec<f64>,
    /// Series-impedance loss per branch.
    pub branch_loss_mw: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest per-bus complex power mismatch at exit, in p.u.
    pub max_mismatch_pu: f64,
}

/// Specified net complex injection per bus in p.u.
pub(crate) fn specified_injections(net: &NetworkModel, op: &GridOperatingPoint) -> Vec<Complex64> {
    let base = net.base_mva();
    let mut s: Vec<Complex64> = net
        .buses()
        .iter()
        .zip(&op.load_scale)
        .map(|(b, k)| Complex64::new(-b.load_p_mw * k, -b.load_q_mvar * k) / base)
        .collect();
    for (cb, &tap) in net.cbs().iter().zip(&op.cb_taps) {
        s[cb.bus].im += cb.reactive_mvar(tap) / base;
    }
    for (i, dg) in net.dgs().iter().enumerate() {
        s[dg.bus] += Complex64::new(op.dg_active[i], op.dg_reactive[i]) / base;
    }
    for (svc, &q) in net.svcs().iter().zip(&op.svc_reactive) {
        s[svc.bus].im += q / base;
    }
    s
}

/// Turns ratio of every branch (1 where no OLTC is installed).
pub(crate) fn branch_ratios(net: &NetworkModel, oltc_taps: &[usize]) -> Vec<f64> {
    net.topo
        .branch_oltc
        .iter()
        .map(|o| o.map_or(1.0, |i| net.oltcs()[i].ratio(oltc_taps[i])))
        .collect()
}

/// Solves the power flow with a backward/forward sweep.
///
/// The OLTC is an ideal transformer at the upstream end of its branch
/// followed by the branch series impedance. Returns `converged = false`
/// rather than an error when the sweep fails to reach [`PF_TOLERANCE`]
/// within [`PF_MAX_ITERATIONS`].
pub fn solve_power_flow(
    net: &NetworkModel,
    op: &GridOperatingPoint,
) -> Result<PowerFlowSolution, GridError> {
    op.validate(net)?;
    let n = net.n_buses();
    let s_spec = specified_injections(net, op);
    let ratio = branch_ratios(net, &op.oltc_taps);
    let z: Vec<Complex64> = net
        .branches()
        .iter()
        .map(|b| Complex64::new(b.r_pu, b.x_pu))
        .collect();
    let order = &net.topo.order;
    let fb = &net.topo.feeder_branch;

    let mut v = vec![Complex64::new(net.slack_voltage(), 0.0); n];
    for &bus in &order[1..] {
        let b = fb[bus].unwrap();
        v[bus] = v[net.topo.parent[bus].unwrap()] * ratio[b];
    }
    // Series current of the branch feeding each bus, flowing downstream.
    let mut j = vec![Complex64::new(0.0, 0.0); n];
    let mut converged = false;
    let mut iterations = 0;
    let mut mismatch = f64::INFINITY;

    while iterations < PF_MAX_ITERATIONS {
        iterations += 1;
        for &bus in order[1..].iter().rev() {
            let mut cur = -(s_spec[bus] / v[bus]).conj();
            for &c in &net.topo.children[bus] {
                cur += j[c] * ratio[fb[c].unwrap()];
            }
            j[bus] = cur;
        }
        for &bus in &order[1..] {
            let b = fb[bus].unwrap();
            v[bus] = v[net.topo.parent[bus].unwrap()] * ratio[b] - z[b] * j[bus];
        }
        if v.iter().any(|x| !x.re.is_finite() || !x.im.is_finite() || x.norm() < 0.05) {
            break;
        }
        mismatch = kvl_mismatch(net, &v, &ratio, &z, &s_spec);
        if mismatch <= PF_TOLERANCE {
            converged = true;
            break;
        }
    }

    // Currents consistent with the final voltages (Kirchhoff's voltage law).
    for &bus in &order[1..] {
        let b = fb[bus].unwrap();
        j[bus] = (v[net.topo.parent[bus].unwrap()] * ratio[b] - v[bus]) / z[b];
    }
    let base = net.base_mva();
    let mut p_inj = vec![0.0; n];
    let mut q_inj = vec![0.0; n];
    for bus in 0..n {
        let s = v[bus] * node_current(net, bus, &j, &ratio).conj() * base;
        p_inj[bus] = s.re;
        q_inj[bus] = s.im;
    }
    let mut branch_loss = vec![0.0; net.branches().len()];
    for &bus in &order[1..] {
        let b = fb[bus].unwrap();
        branch_loss[b] = j[bus].norm_sqr() * z[b].re * base;
    }
    Ok(PowerFlowSolution {
        voltages: v.iter().map(|x| x.norm()).collect(),
        angles_rad: v.iter().map(|x| x.arg()).collect(),
        p_inj_mw: p_inj,
        q_inj_mvar: q_inj,
        branch_loss_mw: branch_loss,
        converged,
        iterations,
        max_mismatch_pu: mismatch,
    })
}

/// Net current injected by `bus` into the network given branch currents `j`.
fn node_current(net: &NetworkModel, bus: usize, j: &[Complex64], ratio: &[f64]) -> Complex64 {
    let mut out: Complex64 = net.topo.children[bus]
        .iter()
        .map(|&c| j[c] * ratio[net.topo.feeder_branch[c].unwrap()])
        .sum();
    if net.topo.parent[bus].is_some() {
        out -= j[bus];
    }
    out
}

/// Recomputes branch currents from the voltages and returns the largest
/// non-slack power mismatch.
fn kvl_mismatch(
    net: &NetworkModel,
    v: &[Complex64],
    ratio: &[f64],
    z: &[Complex64],
    s_spec: &[Complex64],
) -> f64 {
    let mut kvl = vec![Complex64::new(0.0, 0.0); v.len()];
    for &bus in &net.topo.order[1..] {
        let b = net.topo.feeder_branch[bus].unwrap();
        kvl[bus] = (v[net.topo.parent[bus].unwrap()] * ratio[b] - v[bus]) / z[b];
    }
    net.topo.order[1..]
        .iter()
        .map(|&bus| (v[bus] * node_current(net, bus, &kvl, ratio).conj() - s_spec[bus]).norm())
        .fold(0.0, f64::max)
}

/// Total active loss: the sum of all nodal active injections, in MW.
pub fn active_loss(sol: &PowerFlowSolution) -> f64 {
    sol.p_inj_mw.iter().sum()
}

/// Smooth voltage violation index `sqrt(sum([V-hi]+^2 + [lo-V]+^2))` in p.u.
pub fn voltage_violation_rate(sol: &PowerFlowSolution, v_lo: f64, v_hi: f64) -> f64 {
    violation_rate(&sol.voltages, v_lo, v_hi)
}

pub fn violation_rate(voltages: &[f64], v_lo: f64, v_hi: f64) -> f64 {
    voltages
        .iter()
        .map(|&v| {
            let over = (v - v_hi).max(0.0);
            let under = (v_lo - v).max(0.0);
            over * over + under * under
        })
        .sum::<f64>()
        .sqrt()
}

/// L1 distance between two tap vectors.
pub fn switching_cost(prev: &[usize], next: &[usize]) -> Result<usize, GridError> {
    if prev.len() != next.len() {
        return Err(GridError::LengthMismatch(prev.len(), next.len()));
    }
    Ok(prev.iter().zip(next).map(|(a, b)| a.abs_diff(*b)).sum())
}
