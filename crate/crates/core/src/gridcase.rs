//! Grid case ingestion and bus admittance construction.
//!
//! A case is a JSON document with top-level keys `buses`, `branches`,
//! `generators`, `loads` and `limits`. Electrical quantities are per-unit,
//! angles are radians and costs are $/h per per-unit power. Branches carry
//! the series admittance `g + jb` of the line element directly (an inductive
//! line has `b < 0`).

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Generator,
    Load,
    /// Fixed voltage and angle; absorbs any mismatch and has no dynamics.
    Infinite,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Frequency coefficient of a load-kind bus without a load entry.
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub shunt_g: f64,
    #[serde(default)]
    pub shunt_b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series conductance of the line element.
    pub g: f64,
    /// Series susceptance of the line element.
    pub b: f64,
    #[serde(default)]
    pub shunt_b: f64,
    /// Apparent power rating; `S_ij <= s_max^2`.
    #[serde(default = "unbounded")]
    pub s_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// `a_{i1}` in `a_{i1} p^2 + a_{i2} p`.
    pub cost_quadratic: f64,
    /// `a_{i2}`.
    pub cost_linear: f64,
    #[serde(default)]
    pub inertia: f64,
    #[serde(default)]
    pub damping: f64,
    #[serde(default = "one")]
    pub v_set: f64,
    /// Nominal dispatch used by plain power flow runs.
    #[serde(default)]
    pub p_set: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub damping: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Limits {
    pub v_min: f64,
    pub v_max: f64,
    pub angle_diff_min: f64,
    pub angle_diff_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseFile {
    #[serde(default)]
    name: String,
    #[serde(default = "default_base")]
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    #[serde(default)]
    loads: Vec<Load>,
    limits: Limits,
}

fn unbounded() -> f64 {
    f64::INFINITY
}
fn one() -> f64 {
    1.0
}
fn default_base() -> f64 {
    100.0
}

/// Validated static grid description. Bus references inside branches,
/// generators and loads are rewritten to dense bus indices.
#[derive(Debug, Clone, Serialize)]
pub struct PowerCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub limits: Limits,
    #[serde(skip)]
    gen_at: Vec<Option<usize>>,
}

impl PowerCase {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<memory>"))
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let file: CaseFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::validate(file)
    }

    fn validate(file: CaseFile) -> Result<Self> {
        let CaseFile { name, base_mva, buses, mut branches, mut generators, mut loads, limits } = file;
        let n = buses.len();
        if n == 0 {
            return Err(Error::Invariant("case has no buses".into()));
        }
        let mut index = HashMap::new();
        for (k, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, k).is_some() {
                return Err(Error::Invariant(format!("duplicate bus id {}", bus.id)));
            }
        }
        let lookup = |id: usize| index.get(&id).copied().ok_or(Error::UnknownBus(id));

        for br in branches.iter_mut() {
            br.from = lookup(br.from)?;
            br.to = lookup(br.to)?;
            if br.from == br.to {
                return Err(Error::Invariant(format!("branch connects bus {} to itself", buses[br.from].id)));
            }
        }
        let mut gen_at = vec![None; n];
        for (k, gen) in generators.iter_mut().enumerate() {
            let id = gen.bus;
            gen.bus = lookup(id)?;
            if gen_at[gen.bus].replace(k).is_some() {
                return Err(Error::Invariant(format!("more than one generator at bus {id}")));
            }
            if buses[gen.bus].kind == BusKind::Load {
                return Err(Error::Invariant(format!("generator at load bus {id}")));
            }
            if gen.cost_quadratic < 0.0 {
                return Err(Error::Invariant(format!("negative quadratic cost at bus {id}")));
            }
            if gen.p_min > gen.p_max || gen.q_min > gen.q_max {
                return Err(Error::Invariant(format!("empty generator limits at bus {id}")));
            }
            if buses[gen.bus].kind == BusKind::Generator && (gen.inertia <= 0.0 || gen.damping <= 0.0) {
                return Err(Error::Invariant(format!(
                    "generator at bus {id} needs positive inertia and damping"
                )));
            }
        }
        for load in loads.iter_mut() {
            load.bus = lookup(load.bus)?;
        }
        for (k, bus) in buses.iter().enumerate() {
            if bus.kind != BusKind::Load && gen_at[k].is_none() {
                return Err(Error::Invariant(format!("bus {} has no generator entry", bus.id)));
            }
        }
        if buses.iter().filter(|b| b.kind == BusKind::Infinite).count() > 1 {
            return Err(Error::Invariant("at most one infinite bus is supported".into()));
        }
        if !(limits.v_min > 0.0) || limits.v_min > limits.v_max {
            return Err(Error::Invariant("voltage bounds must satisfy 0 < v_min <= v_max".into()));
        }
        if limits.angle_diff_min > limits.angle_diff_max {
            return Err(Error::Invariant("angle-difference bounds are empty".into()));
        }
        if generators.is_empty() {
            return Err(Error::Invariant("case has no generator to act as slack".into()));
        }

        let case = PowerCase { name, base_mva, buses, branches, generators, loads, limits, gen_at };
        for i in 0..n {
            if case.buses[i].kind == BusKind::Load && !(case.load_damping(i) > 0.0) {
                return Err(Error::Invariant(format!(
                    "load bus {} needs positive damping",
                    case.buses[i].id
                )));
            }
        }
        if !case.is_connected(None) {
            return Err(Error::Invariant("network graph is not connected".into()));
        }
        Ok(case)
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: usize) -> Result<usize> {
        self.buses.iter().position(|b| b.id == id).ok_or(Error::UnknownBus(id))
    }

    /// Generator entry at bus `i`, if any.
    pub fn generator_at(&self, i: usize) -> Option<&Generator> {
        self.gen_at[i].map(|k| &self.generators[k])
    }

    pub fn generator_index_at(&self, i: usize) -> Option<usize> {
        self.gen_at[i]
    }

    /// Angle reference: the infinite bus if present, else the first
    /// generator-kind bus.
    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Infinite)
            .or_else(|| self.buses.iter().position(|b| b.kind == BusKind::Generator))
            .expect("validated case has a generator")
    }

    pub fn infinite_bus(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Infinite)
    }

    pub fn is_pv(&self, i: usize) -> bool {
        self.buses[i].kind != BusKind::Load
    }

    pub fn load_p(&self, i: usize) -> f64 {
        self.loads.iter().filter(|l| l.bus == i).map(|l| l.p).sum()
    }

    pub fn load_q(&self, i: usize) -> f64 {
        self.loads.iter().filter(|l| l.bus == i).map(|l| l.q).sum()
    }

    /// Damping of a load-kind bus: bus-level coefficient plus its loads'.
    pub fn load_damping(&self, i: usize) -> f64 {
        self.buses[i].damping + self.loads.iter().filter(|l| l.bus == i).map(|l| l.damping).sum::<f64>()
    }

    /// Nominal generator dispatch: `p_set`, else the midpoint of the limits.
    pub fn nominal_dispatch(&self) -> Vec<f64> {
        self.generators
            .iter()
            .map(|g| g.p_set.unwrap_or(0.5 * (g.p_min + g.p_max)))
            .collect()
    }

    /// Per-bus net injections `p^G - p^L`, `q^G - q^L`.
    pub fn net_injections(&self, p_gen: &[f64], q_gen: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_bus();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for (k, g) in self.generators.iter().enumerate() {
            p[g.bus] += p_gen[k];
            q[g.bus] += q_gen.get(k).copied().unwrap_or(0.0);
        }
        for l in &self.loads {
            p[l.bus] -= l.p;
            q[l.bus] -= l.q;
        }
        (p, q)
    }

    /// Copy of the case with every load scaled by `factor`.
    pub fn with_load_factor(&self, factor: f64) -> PowerCase {
        let mut c = self.clone();
        for l in c.loads.iter_mut() {
            l.p *= factor;
            l.q *= factor;
        }
        c
    }

    fn is_connected(&self, skip: Option<usize>) -> bool {
        let n = self.n_bus();
        let mut adj = vec![Vec::new(); n];
        for (k, br) in self.branches.iter().enumerate() {
            if Some(k) != skip {
                adj[br.from].push(br.to);
                adj[br.to].push(br.from);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// True if the network stays connected with branch `k` out of service.
    pub fn connected_without(&self, k: usize) -> bool {
        self.is_connected(Some(k))
    }
}

pub fn load_case(path: impl AsRef<Path>) -> Result<PowerCase> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    PowerCase::parse(&text, path)
}

/// Fault location and clearing description, as read from a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioSpec {
    /// Zero-based index into the case's branch list.
    #[serde(default)]
    pub faulted_branch: Option<usize>,
    pub fault_type: FaultType,
    /// Bus id of a bus fault.
    #[serde(default)]
    pub fault_bus: Option<usize>,
    pub t_clear: f64,
    #[serde(default)]
    pub permanent: bool,
    /// Shunt admittance to ground of a bus fault.
    #[serde(default = "default_fault_admittance")]
    pub fault_admittance: ShuntAdmittance,
    #[serde(default)]
    pub injection_override: OverrideScope,
    #[serde(default)]
    pub delta_reference: DeltaReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultType {
    /// Line-to-ground fault at the middle of `faulted_branch`.
    MidpointLtg,
    /// Bus-to-ground fault at `fault_bus`; `faulted_branch`, if given, is
    /// tripped to clear it.
    BusLtg,
    /// No disturbance.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuntAdmittance {
    pub g: f64,
    pub b: f64,
}

fn default_fault_admittance() -> ShuntAdmittance {
    ShuntAdmittance { g: 0.0, b: -1.0e4 }
}

/// Which buses have `p^G`, `p^L` forced to zero while the fault is on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideScope {
    #[default]
    FaultedBuses,
    System,
    None,
}

/// Reference network for the fault-on admittance change `ΔY`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaReference {
    #[default]
    PreFault,
    PostFault,
}

impl ScenarioSpec {
    pub fn null(t_clear: f64) -> Self {
        ScenarioSpec {
            faulted_branch: None,
            fault_type: FaultType::None,
            fault_bus: None,
            t_clear,
            permanent: false,
            fault_admittance: default_fault_admittance(),
            injection_override: OverrideScope::None,
            delta_reference: DeltaReference::PreFault,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<memory>"))
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if !(spec.t_clear > 0.0) && !spec.permanent {
            return Err(Error::Scenario("t_clear must be positive".into()));
        }
        Ok(spec)
    }

    /// Effective clearing time; infinite for a permanent fault.
    pub fn clearing_time(&self) -> f64 {
        if self.permanent {
            f64::INFINITY
        } else {
            self.t_clear
        }
    }

    /// Checks the scenario against a case. Returns the fault bus index.
    pub fn check(&self, case: &PowerCase) -> Result<Option<usize>> {
        if let Some(k) = self.faulted_branch {
            if k >= case.branches.len() {
                return Err(Error::UnknownBranch(k));
            }
        }
        match self.fault_type {
            FaultType::MidpointLtg if self.faulted_branch.is_none() => {
                Err(Error::Scenario("midpoint_ltg needs faulted_branch".into()))
            }
            FaultType::BusLtg => {
                let id = self.fault_bus.ok_or_else(|| Error::Scenario("bus_ltg needs fault_bus".into()))?;
                Ok(Some(case.bus_index(id)?))
            }
            _ => Ok(None),
        }
    }

    /// Buses whose injections are overridden during the fault.
    pub fn overridden_buses(&self, case: &PowerCase) -> Result<Vec<bool>> {
        let n = case.n_bus();
        let fault_bus = self.check(case)?;
        Ok(match (self.injection_override, self.fault_type) {
            (OverrideScope::None, _) | (_, FaultType::None) => vec![false; n],
            (OverrideScope::System, _) => vec![true; n],
            (OverrideScope::FaultedBuses, _) => {
                let mut v = vec![false; n];
                if let Some(i) = fault_bus {
                    v[i] = true;
                }
                v
            }
        })
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    ScenarioSpec::parse(&text, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkVariant {
    Base,
    Faulted,
    PostFault,
}

/// Dense complex bus admittance matrix `Y = G + jB`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    y: Vec<Complex64>,
    /// Off-diagonal neighbours of each bus (nonzero `Y_ij`).
    adjacency: Vec<Vec<usize>>,
}

impl AdmittanceMatrix {
    pub fn zeros(n: usize) -> Self {
        AdmittanceMatrix { n, y: vec![Complex64::new(0.0, 0.0); n * n], adjacency: vec![Vec::new(); n] }
    }

    /// Row-major dense entries.
    pub fn from_dense(n: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Dimension(format!("{} entries for a {n}x{n} matrix", entries.len())));
        }
        let mut m = AdmittanceMatrix { n, y: entries, adjacency: Vec::new() };
        m.refresh_adjacency();
        Ok(m)
    }

    fn from_parts(n: usize, branches: &[(usize, usize, Complex64, f64)], shunts: &[Complex64]) -> Self {
        let mut m = Self::zeros(n);
        for &(i, j, y, bsh) in branches {
            m.add_branch(i, j, y, bsh);
        }
        for (i, s) in shunts.iter().enumerate() {
            m.y[i * n + i] += s;
        }
        m.refresh_adjacency();
        m
    }

    fn add_branch(&mut self, i: usize, j: usize, y: Complex64, shunt_b: f64) {
        let n = self.n;
        let half = Complex64::new(0.0, 0.5 * shunt_b);
        self.y[i * n + i] += y + half;
        self.y[j * n + j] += y + half;
        self.y[i * n + j] -= y;
        self.y[j * n + i] -= y;
    }

    fn refresh_adjacency(&mut self) {
        let n = self.n;
        self.adjacency = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && self.y[i * n + j] != Complex64::new(0.0, 0.0)).collect())
            .collect();
    }

    /// Incremental outage of one branch.
    pub fn with_branch_removed(&self, br: &Branch) -> Self {
        let mut m = self.clone();
        m.add_branch(br.from, br.to, -Complex64::new(br.g, br.b), -br.shunt_b);
        m.refresh_adjacency();
        m
    }

    /// Incremental insertion of one branch.
    pub fn with_branch_added(&self, br: &Branch) -> Self {
        let mut m = self.clone();
        m.add_branch(br.from, br.to, Complex64::new(br.g, br.b), br.shunt_b);
        m.refresh_adjacency();
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.y[i * self.n + j]
    }

    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.y[i * self.n + j].re
    }

    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.y[i * self.n + j].im
    }

    pub fn abs(&self, i: usize, j: usize) -> f64 {
        self.y[i * self.n + j].norm()
    }

    /// `α_ij = arctan(G_ij / B_ij)`, in `(-π/2, π/2]`; zero when lossless.
    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        let (g, b) = (self.g(i, j), self.b(i, j));
        if g == 0.0 {
            0.0
        } else if b == 0.0 {
            std::f64::consts::FRAC_PI_2 * g.signum()
        } else {
            (g / b).atan()
        }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Unordered bus pairs `(i, j)`, `i < j`, with nonzero `Y_ij`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for &j in &self.adjacency[i] {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn max_abs_diff(&self, other: &AdmittanceMatrix) -> f64 {
        self.y.iter().zip(&other.y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

fn base_parts(case: &PowerCase) -> (Vec<(usize, usize, Complex64, f64)>, Vec<Complex64>) {
    let branches = case
        .branches
        .iter()
        .map(|br| (br.from, br.to, Complex64::new(br.g, br.b), br.shunt_b))
        .collect();
    let shunts = case.buses.iter().map(|b| Complex64::new(b.shunt_g, b.shunt_b)).collect();
    (branches, shunts)
}

/// Builds `Y` (base), `Y''` (fault on) or `Y'` (fault cleared).
///
/// A midpoint line-to-ground fault removes the faulted branch and grounds
/// both of its end buses through half of it (admittance `2y` each). A bus
/// fault adds the fault admittance as a shunt at the faulted bus.
pub fn build_admittance(
    case: &PowerCase,
    variant: NetworkVariant,
    scenario: Option<&ScenarioSpec>,
) -> Result<AdmittanceMatrix> {
    let n = case.n_bus();
    let (mut branches, mut shunts) = base_parts(case);
    if variant == NetworkVariant::Base {
        return Ok(AdmittanceMatrix::from_parts(n, &branches, &shunts));
    }
    let sc = scenario.ok_or_else(|| Error::Scenario("faulted/post-fault network needs a scenario".into()))?;
    let fault_bus = sc.check(case)?;
    match (variant, sc.fault_type) {
        (_, FaultType::None) => {}
        (NetworkVariant::Faulted, FaultType::MidpointLtg) => {
            let k = sc.faulted_branch.expect("checked");
            let (i, j, y, _) = branches.remove(k);
            shunts[i] += 2.0 * y;
            shunts[j] += 2.0 * y;
        }
        (NetworkVariant::Faulted, FaultType::BusLtg) => {
            let i = fault_bus.expect("checked");
            shunts[i] += Complex64::new(sc.fault_admittance.g, sc.fault_admittance.b);
        }
        (NetworkVariant::PostFault, _) => {
            if let Some(k) = sc.faulted_branch {
                branches.remove(k);
            }
        }
        (NetworkVariant::Base, _) => unreachable!(),
    }
    if variant == NetworkVariant::PostFault && sc.faulted_branch.is_some() {
        let k = sc.faulted_branch.unwrap();
        if !case.connected_without(k) {
            return Err(Error::Scenario(format!("clearing branch {k} islands the network")));
        }
    }
    Ok(AdmittanceMatrix::from_parts(n, &branches, &shunts))
}

/// Summary of parallel branches per bus pair, used for line limits.
pub fn pair_ratings(case: &PowerCase, skip: Option<usize>) -> BTreeMap<(usize, usize), f64> {
    let mut out = BTreeMap::new();
    for (k, br) in case.branches.iter().enumerate() {
        if Some(k) == skip {
            continue;
        }
        let key = (br.from.min(br.to), br.from.max(br.to));
        *out.entry(key).or_insert(0.0) += br.s_max;
    }
    out
}
