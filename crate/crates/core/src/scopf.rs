//! DC security-constrained optimal power flow.
//!
//! Scenario 0 is the intact network, scenario `c ≥ 1` has one branch out of service. The
//! pre-contingency dispatch `P⁰` and each post-contingency dispatch `Pᶜ` are tied by the ramp
//! limit `|P⁰ − Pᶜ| ≤ Δ`, rewritten with a slack `0 ≤ pᶜ ≤ 2Δ` as
//!
//! ```text
//!   P⁰ − Pᶜ + pᶜ = Δ
//! ```
//!
//! Angles are eliminated: with the slack-bus angle pinned to zero, flows are a linear map
//! (PTDF) of the bus injections `A^g P − P^d`, so every scenario constraint set is a
//! polyhedron in the generation variables alone. Only the pre-contingency generation cost
//! enters the objective.
//!
//! [`run_distributed_scopf`] alternates a base-case QP, `C` independent contingency QPs and
//! a local scaled dual update per contingency. The contingency QPs are the workers of a
//! coordinator/worker round, so the same code runs in-process or logged through
//! [`simulate_scopf`].

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::MessageLog;
use crate::engines::{drive, EngineError, Protocol, Rounds, RunOutcome, SolverConfig, StepMetrics};
use crate::problem::BlockVector;
use crate::prox::{solve_ineq_qp, InequalityQp, ProxError};
use crate::{Matrix, Vector};

const QP_TOL: f64 = 1e-12;
const QP_MAX_ITER: usize = 200;

#[derive(Debug, Error)]
pub enum ScopfError {
    #[error("case file, line {line} column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("cannot read case file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("network is disconnected{}", outage.map(|b| format!(" after the outage of branch {b}")).unwrap_or_default())]
    Disconnected { outage: Option<usize> },
    #[error("scenario {0} has no feasible dispatch")]
    InfeasibleScenario(usize),
    #[error("the stacked problem is infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    /// MW.
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Per unit.
    pub susceptance: f64,
    /// Flow limit in MW.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: usize,
    /// Cost `cost_a·P² + cost_b·P`.
    pub cost_a: f64,
    pub cost_b: f64,
    pub pmin: f64,
    pub pmax: f64,
    /// Ramp limit Δ between pre- and post-contingency dispatch, MW.
    pub ramp: f64,
}

fn default_base_mva() -> f64 {
    100.0
}

/// Network data. Bus ids are arbitrary distinct integers; branches and generators refer to
/// them by id. `contingencies` lists outaged branch indices (0-based) and may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerCase {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub slack_bus: usize,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    #[serde(default)]
    pub contingencies: Vec<usize>,
}

impl PowerCase {
    pub fn parse(text: &str) -> Result<Self, ScopfError> {
        let case: PowerCase = serde_json::from_str(text).map_err(|e| ScopfError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        case.validate()?;
        Ok(case)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    fn bus_index(&self) -> BTreeMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    /// Checks every invariant of the data model, including connectivity of the intact
    /// network.
    pub fn validate(&self) -> Result<(), ScopfError> {
        let bad = |m: String| Err(ScopfError::InvalidCase(m));
        if self.buses.is_empty() {
            return bad("no buses".into());
        }
        let index = self.bus_index();
        if index.len() != self.buses.len() {
            return bad("duplicate bus id".into());
        }
        if !index.contains_key(&self.slack_bus) {
            return bad(format!("slack bus {} does not exist", self.slack_bus));
        }
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return bad(format!("base_mva must be positive, got {}", self.base_mva));
        }
        for b in &self.buses {
            if !b.demand.is_finite() {
                return bad(format!("bus {}: demand must be finite", b.id));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            if !index.contains_key(&br.from) || !index.contains_key(&br.to) {
                return bad(format!("branch {k}: unknown end bus"));
            }
            if br.from == br.to {
                return bad(format!("branch {k}: both ends at bus {}", br.from));
            }
            if !(br.susceptance > 0.0 && br.susceptance.is_finite()) {
                return bad(format!("branch {k}: susceptance must be > 0, got {}", br.susceptance));
            }
            if !(br.limit >= 0.0 && br.limit.is_finite()) {
                return bad(format!("branch {k}: flow limit must be finite and ≥ 0, got {}", br.limit));
            }
        }
        if self.generators.is_empty() {
            return bad("no generators".into());
        }
        for (k, g) in self.generators.iter().enumerate() {
            if !index.contains_key(&g.bus) {
                return bad(format!("generator {k}: unknown bus {}", g.bus));
            }
            if !(g.pmin >= 0.0 && g.pmin <= g.pmax && g.pmax.is_finite()) {
                return bad(format!("generator {k}: need 0 ≤ pmin ≤ pmax, got [{}, {}]", g.pmin, g.pmax));
            }
            if !(g.cost_a >= 0.0 && g.cost_a.is_finite() && g.cost_b.is_finite()) {
                return bad(format!("generator {k}: cost must be convex with finite coefficients"));
            }
            if !(g.ramp >= 0.0 && g.ramp.is_finite()) {
                return bad(format!("generator {k}: ramp limit must be finite and ≥ 0, got {}", g.ramp));
            }
        }
        for &c in &self.contingencies {
            if c >= self.branches.len() {
                return bad(format!("contingency refers to branch {c}, case has {}", self.branches.len()));
            }
        }
        if !self.connected(None) {
            return Err(ScopfError::Disconnected { outage: None });
        }
        Ok(())
    }

    fn connected(&self, outage: Option<usize>) -> bool {
        let index = self.bus_index();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for (k, br) in self.branches.iter().enumerate() {
            if Some(k) == outage {
                continue;
            }
            let (f, t) = (index[&br.from], index[&br.to]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    fn demand(&self) -> Vector {
        Vector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.demand))
    }

    fn num_generators(&self) -> usize {
        self.generators.len()
    }
}

/// Reads and validates a case file.
pub fn load_case(path: &Path) -> Result<PowerCase, ScopfError> {
    PowerCase::parse(&std::fs::read_to_string(path)?)
}

/// DC network matrices of one scenario, in bus order of the case.
#[derive(Debug, Clone)]
pub struct DcMatrices {
    /// Weighted Laplacian `B_fᵀ diag(1/b) B_f`, buses × buses.
    pub b_bus: Matrix,
    /// One row `b_ℓ(e_from − e_to)ᵀ` per in-service branch.
    pub b_f: Matrix,
    /// Bus/generator incidence, buses × generators.
    pub a_g: Matrix,
    /// Case branch index of every row of `b_f`.
    pub branches: Vec<usize>,
}

/// Builds `B_bus`, `B_f` and `A^g` with branch `outage` removed.
pub fn build_dc_matrices(case: &PowerCase, outage: Option<usize>) -> Result<DcMatrices, ScopfError> {
    if let Some(o) = outage {
        if o >= case.branches.len() {
            return Err(ScopfError::InvalidCase(format!("outage of branch {o}, case has {}", case.branches.len())));
        }
    }
    if !case.connected(outage) {
        return Err(ScopfError::Disconnected { outage });
    }
    let index = case.bus_index();
    let n = case.buses.len();
    let branches: Vec<usize> = (0..case.branches.len()).filter(|k| Some(*k) != outage).collect();
    let mut b_f = Matrix::zeros(branches.len(), n);
    let mut b_bus = Matrix::zeros(n, n);
    for (row, &k) in branches.iter().enumerate() {
        let br = &case.branches[k];
        let (f, t) = (index[&br.from], index[&br.to]);
        let b = br.susceptance;
        b_f[(row, f)] = b;
        b_f[(row, t)] = -b;
        b_bus[(f, f)] += b;
        b_bus[(t, t)] += b;
        b_bus[(f, t)] -= b;
        b_bus[(t, f)] -= b;
    }
    let mut a_g = Matrix::zeros(n, case.num_generators());
    for (j, g) in case.generators.iter().enumerate() {
        a_g[(index[&g.bus], j)] = 1.0;
    }
    Ok(DcMatrices { b_bus, b_f, a_g, branches })
}

/// One scenario with flows expressed in the generation variables.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// `None` for the intact network.
    pub outage: Option<usize>,
    pub dc: DcMatrices,
    /// Maps bus injections (MW) to bus angles (rad), slack angle zero.
    angle_map: Matrix,
    /// Flows are `flow_gen · P + flow_offset` (MW).
    flow_gen: Matrix,
    flow_offset: Vector,
    limits: Vector,
}

impl Scenario {
    fn new(case: &PowerCase, outage: Option<usize>) -> Result<Self, ScopfError> {
        let dc = build_dc_matrices(case, outage)?;
        let n = case.buses.len();
        let slack = case.bus_index()[&case.slack_bus];
        let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
        let reduced = Matrix::from_fn(keep.len(), keep.len(), |r, c| dc.b_bus[(keep[r], keep[c])]);
        let inv = reduced
            .cholesky()
            .ok_or(ScopfError::Disconnected { outage })?
            .inverse();
        // angles in "MW units"; divide by base MVA for radians
        let mut angle_map = Matrix::zeros(n, n);
        for (r, &i) in keep.iter().enumerate() {
            for (c, &j) in keep.iter().enumerate() {
                angle_map[(i, j)] = inv[(r, c)] / case.base_mva;
            }
        }
        let ptdf = &dc.b_f * &angle_map * case.base_mva;
        let flow_gen = &ptdf * &dc.a_g;
        let flow_offset = -(&ptdf * case.demand());
        let limits = Vector::from_iterator(dc.branches.len(), dc.branches.iter().map(|&k| case.branches[k].limit));
        Ok(Self { outage, dc, angle_map, flow_gen, flow_offset, limits })
    }

    /// Branch flows (MW) of the in-service branches for dispatch `p`.
    pub fn flows(&self, p: &Vector) -> Vector {
        &self.flow_gen * p + &self.flow_offset
    }

    /// Bus angles (rad) for dispatch `p`.
    pub fn angles(&self, p: &Vector, demand: &Vector) -> Vector {
        &self.angle_map * (&self.dc.a_g * p - demand)
    }

    /// Appends power balance, flow limits and generator bounds on the `G` variables starting
    /// at column `col` of a problem with `width` columns.
    fn constrain(&self, case: &PowerCase, col: usize, width: usize, eq: &mut Rows, ineq: &mut Rows) {
        let g = case.num_generators();
        let mut balance = Vector::zeros(width);
        balance.rows_mut(col, g).fill(1.0);
        eq.push(balance, case.demand().sum());
        for l in 0..self.flow_gen.nrows() {
            let mut row = Vector::zeros(width);
            row.rows_mut(col, g).copy_from(&self.flow_gen.row(l).transpose());
            ineq.push(row.clone(), self.limits[l] - self.flow_offset[l]);
            ineq.push(-row, self.limits[l] + self.flow_offset[l]);
        }
        for (j, gen) in case.generators.iter().enumerate() {
            ineq.push(unit(width, col + j, 1.0), gen.pmax);
            ineq.push(unit(width, col + j, -1.0), -gen.pmin);
        }
    }
}

fn unit(width: usize, i: usize, v: f64) -> Vector {
    let mut e = Vector::zeros(width);
    e[i] = v;
    e
}

/// Constraint rows under construction.
#[derive(Default)]
struct Rows {
    rows: Vec<Vector>,
    rhs: Vec<f64>,
}

impl Rows {
    fn push(&mut self, row: Vector, rhs: f64) {
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    fn build(self, width: usize) -> (Matrix, Vector) {
        let mut m = Matrix::zeros(self.rows.len(), width);
        for (i, r) in self.rows.iter().enumerate() {
            m.set_row(i, &r.transpose());
        }
        (m, Vector::from_vec(self.rhs))
    }
}

/// Branch outages defining the post-contingency scenarios, in order `c = 1..C`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContingencySet {
    pub outages: Vec<usize>,
}

impl ContingencySet {
    pub fn new(outages: Vec<usize>) -> Self {
        Self { outages }
    }

    pub fn from_case(case: &PowerCase) -> Self {
        Self::new(case.contingencies.clone())
    }

    pub fn len(&self) -> usize {
        self.outages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outages.is_empty()
    }
}

/// Assembled instance: scenario 0 plus one scenario per contingency.
#[derive(Debug, Clone)]
pub struct ScopfInstance {
    pub case: PowerCase,
    pub scenarios: Vec<Scenario>,
    /// Ramp limits Δ per generator.
    pub ramp: Vector,
}

pub fn assemble_scopf(case: &PowerCase, cont: &ContingencySet) -> Result<ScopfInstance, ScopfError> {
    case.validate()?;
    let mut scenarios = vec![Scenario::new(case, None)?];
    for &o in &cont.outages {
        if o >= case.branches.len() {
            return Err(ScopfError::InvalidCase(format!("contingency refers to branch {o}, case has {}", case.branches.len())));
        }
        scenarios.push(Scenario::new(case, Some(o))?);
    }
    let ramp = Vector::from_iterator(case.num_generators(), case.generators.iter().map(|g| g.ramp));
    Ok(ScopfInstance { case: case.clone(), scenarios, ramp })
}

impl ScopfInstance {
    pub fn num_contingencies(&self) -> usize {
        self.scenarios.len() - 1
    }

    pub fn num_generators(&self) -> usize {
        self.case.num_generators()
    }

    /// Pre-contingency generation cost.
    pub fn cost(&self, p: &Vector) -> f64 {
        self.case.generators.iter().zip(p.iter()).map(|(g, v)| g.cost_a * v * v + g.cost_b * v).sum()
    }

    /// Coupling residual `P⁰ − Pᶜ + pᶜ − Δ` of contingency `c ≥ 1`.
    pub fn coupling_residual(&self, base: &Vector, post: &Vector, slack: &Vector) -> Vector {
        base - post + slack - &self.ramp
    }

    fn cost_hessian(&self) -> Vector {
        Vector::from_iterator(self.num_generators(), self.case.generators.iter().map(|g| 2.0 * g.cost_a))
    }

    fn cost_linear(&self) -> Vector {
        Vector::from_iterator(self.num_generators(), self.case.generators.iter().map(|g| g.cost_b))
    }
}

/// Values handed to a [`RhoHook`] after each iteration.
pub struct RhoContext<'a> {
    pub k: usize,
    /// Coupling residual per contingency (∞-norm).
    pub primal: &'a [f64],
    /// Dual residual per contingency (∞-norm).
    pub dual: &'a [f64],
    pub rho: &'a [f64],
}

/// Optional per-iteration penalty adjustment. Returning `Some(new)` replaces the penalties
/// `ρᶜ` (one per contingency); the scaled duals are rescaled so the unscaled multipliers are
/// unchanged.
pub type RhoHook = Box<dyn FnMut(&RhoContext<'_>) -> Option<Vec<f64>> + Send + Sync>;

/// Options beyond [`SolverConfig`].
#[derive(Default)]
pub struct ScopfOptions {
    pub rho_hook: Option<RhoHook>,
}

/// Dispatch, angles and flows of one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSolution {
    pub scenario: usize,
    pub outage: Option<usize>,
    /// Radians, in case bus order.
    pub theta: Vec<f64>,
    /// MW per generator.
    pub generation: Vec<f64>,
    /// MW per case branch; `None` for the outaged branch.
    pub flows: Vec<Option<f64>>,
}

impl ScopfInstance {
    /// Angles and flows of scenario `s` at dispatch `p`.
    pub fn scenario_solution(&self, s: usize, p: &Vector) -> ScenarioSolution {
        let sc = &self.scenarios[s];
        let theta = sc.angles(p, &self.case.demand());
        let flows_in_service = sc.flows(p);
        let mut flows = vec![None; self.case.branches.len()];
        for (row, &k) in sc.dc.branches.iter().enumerate() {
            flows[k] = Some(flows_in_service[row]);
        }
        ScenarioSolution {
            scenario: s,
            outage: sc.outage,
            theta: theta.iter().copied().collect(),
            generation: p.iter().copied().collect(),
            flows,
        }
    }
}

/// Solution export: one entry per scenario.
pub fn solutions_to_json(solutions: &[ScenarioSolution]) -> String {
    serde_json::to_string_pretty(solutions).expect("solutions serialize")
}

fn infeasible_as_scenario(e: EngineError) -> ScopfError {
    match e {
        EngineError::Subproblem { block, source: ProxError::Infeasible(_) } => ScopfError::InfeasibleScenario(block),
        other => ScopfError::Engine(other),
    }
}

/// Coordinator: base-case dispatch and scaled duals. Workers: contingency QPs.
struct ScopfProtocol<'a> {
    inst: &'a ScopfInstance,
    rho: Vec<f64>,
    /// `[P⁰, (P¹, p¹), …]`.
    x: BlockVector,
    /// Scaled duals `μᶜ`, concatenated.
    mu: Vector,
    /// Base dispatch for the next round.
    next_base: Vector,
    hook: Option<RhoHook>,
    round: usize,
}

impl<'a> ScopfProtocol<'a> {
    fn new(inst: &'a ScopfInstance, cfg: &SolverConfig, opts: ScopfOptions) -> Result<Self, EngineError> {
        cfg.validate()?;
        let g = inst.num_generators();
        let c = inst.num_contingencies();
        // start: post-contingency dispatch at zero with the slack at mid-range, duals zero
        let mut segments = vec![Vector::zeros(g)];
        for _ in 0..c {
            let mut v = Vector::zeros(2 * g);
            v.rows_mut(g, g).copy_from(&inst.ramp);
            segments.push(v);
        }
        let mut proto = Self {
            inst,
            rho: vec![cfg.rho; c],
            x: BlockVector::new(segments),
            mu: Vector::zeros(g * c),
            next_base: Vector::zeros(g),
            hook: opts.rho_hook,
            round: 0,
        };
        proto.next_base = proto.base_update()?;
        proto.x.segment_mut(0).copy_from(&proto.next_base);
        Ok(proto)
    }

    fn mu(&self, c: usize) -> Vector {
        let g = self.inst.num_generators();
        self.mu.rows(c * g, g).into_owned()
    }

    /// `min f(P) + Σ ρᶜ/2 ‖P − wᶜ‖²`, `wᶜ = Pᶜ − pᶜ + Δ − μᶜ`, over the intact network.
    fn base_update(&self) -> Result<Vector, EngineError> {
        let inst = self.inst;
        let g = inst.num_generators();
        let mut diag = inst.cost_hessian();
        let mut q = inst.cost_linear();
        for c in 0..inst.num_contingencies() {
            let seg = self.x.segment(c + 1);
            let w = seg.rows(0, g) - seg.rows(g, g) + &inst.ramp - self.mu(c);
            diag.add_scalar_mut(self.rho[c]);
            q -= w * self.rho[c];
        }
        let (mut eq, mut ineq) = (Rows::default(), Rows::default());
        inst.scenarios[0].constrain(&inst.case, 0, g, &mut eq, &mut ineq);
        let (eq_mat, eq_rhs) = eq.build(g);
        let (ineq_mat, ineq_rhs) = ineq.build(g);
        let qp = InequalityQp { q_mat: Matrix::from_diagonal(&diag), q, eq_mat, eq_rhs, ineq_mat, ineq_rhs };
        solve_ineq_qp(&qp, QP_TOL, QP_MAX_ITER)
            .map(|s| s.x)
            .map_err(|source| EngineError::Subproblem { block: 0, source })
    }
}

impl Protocol for ScopfProtocol<'_> {
    fn workers(&self) -> usize {
        self.inst.num_contingencies()
    }

    /// `uᶜ = P⁰ − Δ + μᶜ`.
    fn signal(&self, w: usize) -> Vector {
        &self.next_base - &self.inst.ramp + self.mu(w)
    }

    /// `min ρ/2 ‖uᶜ − Pᶜ + pᶜ‖²` over the post-contingency network and `0 ≤ pᶜ ≤ 2Δ`.
    fn update(&self, w: usize, signal: &Vector) -> Result<Vector, EngineError> {
        let inst = self.inst;
        let g = inst.num_generators();
        let rho = self.rho[w];
        let mut q_mat = Matrix::zeros(2 * g, 2 * g);
        let mut q = Vector::zeros(2 * g);
        for j in 0..g {
            q_mat[(j, j)] = rho;
            q_mat[(g + j, g + j)] = rho;
            q_mat[(j, g + j)] = -rho;
            q_mat[(g + j, j)] = -rho;
            q[j] = -rho * signal[j];
            q[g + j] = rho * signal[j];
        }
        let (mut eq, mut ineq) = (Rows::default(), Rows::default());
        inst.scenarios[w + 1].constrain(&inst.case, 0, 2 * g, &mut eq, &mut ineq);
        for j in 0..g {
            ineq.push(unit(2 * g, g + j, 1.0), 2.0 * inst.ramp[j]);
            ineq.push(unit(2 * g, g + j, -1.0), 0.0);
        }
        let (eq_mat, eq_rhs) = eq.build(2 * g);
        let (ineq_mat, ineq_rhs) = ineq.build(2 * g);
        let qp = InequalityQp { q_mat, q, eq_mat, eq_rhs, ineq_mat, ineq_rhs };
        solve_ineq_qp(&qp, QP_TOL, QP_MAX_ITER)
            .map(|s| s.x)
            .map_err(|source| EngineError::Subproblem { block: w + 1, source })
    }

    fn absorb(&mut self, blocks: Vec<Vector>) -> Result<StepMetrics, EngineError> {
        let inst = self.inst;
        let g = inst.num_generators();
        let base = self.next_base.clone();
        let mut primal = Vec::with_capacity(blocks.len());
        let mut dual = Vec::with_capacity(blocks.len());
        for (c, block) in blocks.iter().enumerate() {
            let prev = self.x.segment(c + 1);
            let shift = |v: &Vector| v.rows(0, g) - v.rows(g, g);
            dual.push((shift(block) - shift(prev)).amax() * self.rho[c]);
            let r = inst.coupling_residual(&base, &block.rows(0, g).into_owned(), &block.rows(g, g).into_owned());
            primal.push(r.amax());
            let mut mu = self.mu.rows_mut(c * g, g);
            mu += &r;
        }
        let mut segments = vec![base.clone()];
        segments.extend(blocks);
        self.x = BlockVector::new(segments);

        let k = self.round;
        self.round += 1;
        if let Some(hook) = self.hook.as_mut() {
            let ctx = RhoContext { k, primal: &primal, dual: &dual, rho: &self.rho };
            if let Some(new) = hook(&ctx) {
                if new.len() != self.rho.len() || new.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                    return Err(EngineError::InvalidConfig(format!(
                        "penalty hook returned {new:?} for {} contingencies",
                        self.rho.len()
                    )));
                }
                for (c, (old, new)) in self.rho.iter().zip(&new).enumerate() {
                    let mut mu = self.mu.rows_mut(c * g, g);
                    mu *= old / new;
                }
                self.rho = new;
            }
        }
        self.next_base = self.base_update()?;
        Ok(StepMetrics {
            objective: inst.cost(&base),
            primal_residual: primal.iter().copied().fold(0.0, f64::max),
            dual_metric: dual.iter().copied().fold(0.0, f64::max),
            block_ms: Vec::new(),
        })
    }

    fn x(&self) -> &BlockVector {
        &self.x
    }

    fn lambda(&self) -> &Vector {
        &self.mu
    }
}

/// Result of a distributed run.
#[derive(Debug, Clone)]
pub struct ScopfRun {
    pub outcome: RunOutcome,
    pub solutions: Vec<ScenarioSolution>,
}

fn finish(inst: &ScopfInstance, outcome: RunOutcome) -> ScopfRun {
    let g = inst.num_generators();
    let x = &outcome.report.x;
    let solutions = (0..inst.scenarios.len())
        .map(|s| {
            let p = if s == 0 { x.segment(0).clone() } else { x.segment(s).rows(0, g).into_owned() };
            inst.scenario_solution(s, &p)
        })
        .collect();
    ScopfRun { outcome, solutions }
}

/// Distributed SCOPF. The trace objective is the pre-contingency cost, the primal residual
/// `max_c ‖P⁰ − Pᶜ + pᶜ − Δ‖∞` and the dual metric `max_c ρᶜ‖Δ(Pᶜ − pᶜ)‖∞`.
///
/// The report's `x` holds `[P⁰, (P¹, p¹), …, (Pᶜ, pᶜ)]` and `lambda` the scaled duals.
pub fn run_distributed_scopf(inst: &ScopfInstance, cfg: &SolverConfig) -> Result<ScopfRun, ScopfError> {
    run_distributed_scopf_with(inst, cfg, ScopfOptions::default())
}

pub fn run_distributed_scopf_with(
    inst: &ScopfInstance,
    cfg: &SolverConfig,
    opts: ScopfOptions,
) -> Result<ScopfRun, ScopfError> {
    let protocol = ScopfProtocol::new(inst, cfg, opts).map_err(infeasible_as_scenario)?;
    let mut rounds = Rounds::new(protocol, cfg, None)?;
    let outcome = drive(&mut rounds, cfg, None).map_err(infeasible_as_scenario)?;
    Ok(finish(inst, outcome))
}

/// [`run_distributed_scopf`] with every coordinator/worker message logged.
pub fn simulate_scopf(inst: &ScopfInstance, cfg: &SolverConfig) -> Result<(ScopfRun, MessageLog), ScopfError> {
    let mut log = MessageLog::new();
    let protocol = ScopfProtocol::new(inst, cfg, ScopfOptions::default()).map_err(infeasible_as_scenario)?;
    let mut rounds = Rounds::new(protocol, cfg, Some(&mut log))?;
    let outcome = drive(&mut rounds, cfg, None).map_err(infeasible_as_scenario)?;
    Ok((finish(inst, outcome), log))
}

/// Centralized reference: one QP over `(P⁰, P¹, …, Pᶜ)` with every scenario's constraints
/// and `|P⁰ − Pᶜ| ≤ Δ`. Returns the cost and the dispatch of every scenario, base first.
pub fn centralized_scopf_oracle(inst: &ScopfInstance) -> Result<(f64, Vec<Vector>), ScopfError> {
    let g = inst.num_generators();
    let s = inst.scenarios.len();
    let width = g * s;
    let demand: f64 = inst.case.demand().sum();
    let capacity: f64 = inst.case.generators.iter().map(|gen| gen.pmax).sum();
    if demand > capacity {
        return Err(ScopfError::Infeasible(format!("demand {demand} MW exceeds capacity {capacity} MW")));
    }
    let (mut eq, mut ineq) = (Rows::default(), Rows::default());
    for (c, sc) in inst.scenarios.iter().enumerate() {
        sc.constrain(&inst.case, c * g, width, &mut eq, &mut ineq);
        if c > 0 {
            for j in 0..g {
                let mut row = unit(width, j, 1.0);
                row[c * g + j] = -1.0;
                ineq.push(row.clone(), inst.ramp[j]);
                ineq.push(-row, inst.ramp[j]);
            }
        }
    }
    let mut q_mat = Matrix::zeros(width, width);
    let mut q = Vector::zeros(width);
    q_mat.view_mut((0, 0), (g, g)).copy_from(&Matrix::from_diagonal(&inst.cost_hessian()));
    q.rows_mut(0, g).copy_from(&inst.cost_linear());
    let (eq_mat, eq_rhs) = eq.build(width);
    let (ineq_mat, ineq_rhs) = ineq.build(width);
    let qp = InequalityQp { q_mat, q, eq_mat, eq_rhs, ineq_mat, ineq_rhs };
    let sol = solve_ineq_qp(&qp, 1e-11, 500).map_err(|e| ScopfError::Infeasible(e.to_string()))?;
    let dispatch: Vec<Vector> = (0..s).map(|c| sol.x.rows(c * g, g).into_owned()).collect();
    Ok((inst.cost(&dispatch[0]), dispatch))
}

/// Three buses on a triangle of unit-susceptance 300 MW lines, a 450 MW load at bus 3,
/// generator A (330 MW) at the slack bus 1 and generator B at bus 2, ramp limit 20 MW, and
/// the outage of line 1–2 as the single contingency.
///
/// Generator B's capacity is 300 MW: with 120 MW the post-contingency network (where line
/// 1–3 alone carries A's output) cannot serve the load.
pub fn three_bus_case() -> PowerCase {
    let line = |from, to| Branch { from, to, susceptance: 1.0, limit: 300.0 };
    PowerCase {
        buses: vec![Bus { id: 1, demand: 0.0 }, Bus { id: 2, demand: 0.0 }, Bus { id: 3, demand: 450.0 }],
        branches: vec![line(1, 2), line(1, 3), line(2, 3)],
        generators: vec![
            Generator { bus: 1, cost_a: 0.02, cost_b: 20.0, pmin: 0.0, pmax: 330.0, ramp: 20.0 },
            Generator { bus: 2, cost_a: 0.04, cost_b: 30.0, pmin: 0.0, pmax: 300.0, ramp: 20.0 },
        ],
        slack_bus: 1,
        base_mva: 100.0,
        contingencies: vec![0],
    }
}

pub fn three_bus_case_json() -> String {
    three_bus_case().to_json()
}

/// Seeded six-bus network: a ring with two chords (so every single outage leaves it
/// connected), three generators and loads on the other buses. Line limits are 1.1× the
/// largest flow of a capacity-proportional reference dispatch across the intact network and
/// the first three outages, which keeps every scenario feasible while letting the economic
/// dispatch hit limits. `contingencies` lists the first three ring branches.
pub fn synthetic_six_bus_case(seed: u64) -> PowerCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut branches: Vec<Branch> = (1..=6)
        .map(|i| Branch { from: i, to: i % 6 + 1, susceptance: rng.random_range(0.5..2.0), limit: 0.0 })
        .collect();
    branches.push(Branch { from: 1, to: 4, susceptance: rng.random_range(0.5..2.0), limit: 0.0 });
    branches.push(Branch { from: 2, to: 5, susceptance: rng.random_range(0.5..2.0), limit: 0.0 });
    let buses: Vec<Bus> = (1..=6)
        .map(|id| Bus { id, demand: if id % 2 == 0 { rng.random_range(50.0..150.0) } else { 0.0 } })
        .collect();
    let demand: f64 = buses.iter().map(|b| b.demand).sum();
    let generators: Vec<Generator> = [1, 3, 5]
        .iter()
        .map(|&bus| Generator {
            bus,
            cost_a: rng.random_range(0.01..0.05),
            cost_b: rng.random_range(10.0..40.0),
            pmin: 0.0,
            pmax: demand * rng.random_range(0.5..0.8),
            ramp: rng.random_range(10.0..30.0),
        })
        .collect();
    let mut case = PowerCase {
        buses,
        branches,
        generators,
        slack_bus: 1,
        base_mva: 100.0,
        contingencies: vec![0, 1, 2],
    };
    let capacity: f64 = case.generators.iter().map(|g| g.pmax).sum();
    let reference = Vector::from_iterator(3, case.generators.iter().map(|g| g.pmax * demand / capacity));
    let mut worst = vec![0.0f64; case.branches.len()];
    for outage in [None, Some(0), Some(1), Some(2)] {
        let sc = Scenario::new(&case, outage).expect("ring with chords survives single outages");
        for (row, &k) in sc.dc.branches.iter().enumerate() {
            worst[k] = worst[k].max(sc.flows(&reference)[row].abs());
        }
    }
    for (br, w) in case.branches.iter_mut().zip(worst) {
        br.limit = (1.1 * w).max(10.0);
    }
    case
}

pub fn synthetic_six_bus_case_json(seed: u64) -> String {
    synthetic_six_bus_case(seed).to_json()
}
