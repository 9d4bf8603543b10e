//! The outer iteration loop shared by every engine, and the coordinator/worker split used by
//! the Jacobi-family engines.

use std::time::Instant;

use rayon::prelude::*;

use super::{ConvergenceReport, EngineError, IterationRecord, IterationTrace, RunOutcome, SolverConfig, Status};
use crate::dist::{MessageKind, MessageLog, NodeId};
use crate::problem::BlockVector;
use crate::Vector;

/// Per-iteration observer. Returning `Err` aborts the run with
/// [`EngineError::ObserverFailure`].
pub type Observer<'a> = dyn FnMut(&IterationView<'_>) -> Result<(), String> + 'a;

/// Read-only snapshot handed to an [`Observer`] after iteration `k`.
pub struct IterationView<'a> {
    pub k: usize,
    pub x: &'a BlockVector,
    pub lambda: &'a Vector,
    pub aux: Aux<'a>,
}

/// Engine-specific extra state.
pub enum Aux<'a> {
    None,
    /// Variable splitting: auxiliary `z_i` and per-block multipliers `λ_i`.
    Splitting { z: &'a [Vector], multipliers: &'a [Vector] },
    /// Gaussian back substitution: the prediction `(x̃, λ̃)` of this iteration.
    Gbs { x_pred: &'a BlockVector, lambda_pred: &'a Vector },
}

pub(crate) struct StepMetrics {
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_metric: f64,
    pub block_ms: Vec<f64>,
}

pub(crate) trait Scheme {
    fn step(&mut self, k: usize) -> Result<StepMetrics, EngineError>;
    fn x(&self) -> &BlockVector;
    fn lambda(&self) -> &Vector;
    fn aux(&self) -> Aux<'_> {
        Aux::None
    }
    /// Called once after the last iteration with the number of iterations performed.
    fn finish(&mut self, _iterations: usize) {}
}

pub(crate) fn drive<S: Scheme>(
    scheme: &mut S,
    cfg: &SolverConfig,
    mut observer: Option<&mut Observer<'_>>,
) -> Result<RunOutcome, EngineError> {
    let mut trace = IterationTrace::new();
    let mut status = Status::MaxIterReached;
    let mut last = None;
    for k in 0..cfg.max_iter {
        let m = scheme.step(k)?;
        trace.push(IterationRecord {
            k,
            objective: m.objective,
            primal_residual: m.primal_residual,
            dual_metric: m.dual_metric,
            block_ms: m.block_ms,
        });
        if let Some(obs) = observer.as_mut() {
            let view = IterationView { k, x: scheme.x(), lambda: scheme.lambda(), aux: scheme.aux() };
            obs(&view).map_err(EngineError::ObserverFailure)?;
        }
        let finite = m.primal_residual.is_finite()
            && m.dual_metric.is_finite()
            && !m.objective.is_nan()
            && scheme.x().is_finite()
            && scheme.lambda().iter().all(|v| v.is_finite());
        last = Some((m.objective, m.primal_residual, m.dual_metric));
        if !finite || m.primal_residual > cfg.divergence_threshold {
            status = Status::Diverged;
            break;
        }
        if m.primal_residual <= cfg.tol_primal && m.dual_metric <= cfg.tol_dual {
            status = Status::Converged;
            break;
        }
    }
    let iterations = trace.len();
    scheme.finish(iterations);
    let (objective, primal_residual, dual_metric) =
        last.ok_or_else(|| EngineError::InvalidConfig("max_iter must be at least 1".into()))?;
    let report = ConvergenceReport {
        status,
        iterations,
        objective,
        primal_residual,
        dual_metric,
        x: scheme.x().clone(),
        lambda: scheme.lambda().clone(),
    };
    Ok(RunOutcome { trace, report })
}

/// A Jacobi-type iteration split into coordinator and worker roles.
///
/// Each iteration the coordinator computes one signal per worker from iteration-`k` state,
/// every worker maps its signal to a new local block, and the coordinator absorbs all blocks
/// at once. Workers never read each other's state, so the evaluation order cannot matter.
pub(crate) trait Protocol: Sync {
    fn workers(&self) -> usize;
    fn signal(&self, w: usize) -> Vector;
    fn update(&self, w: usize, signal: &Vector) -> Result<Vector, EngineError>;
    /// Installs the new blocks, updates multipliers and returns the iteration metrics
    /// (`block_ms` left empty).
    fn absorb(&mut self, blocks: Vec<Vector>) -> Result<StepMetrics, EngineError>;
    fn x(&self) -> &BlockVector;
    fn lambda(&self) -> &Vector;
    fn aux(&self) -> Aux<'_> {
        Aux::None
    }
}

/// Runs a [`Protocol`] in lock-step rounds, optionally logging every message.
pub(crate) struct Rounds<'a, P: Protocol> {
    pub protocol: P,
    order: Vec<usize>,
    parallel: bool,
    timing: bool,
    log: Option<&'a mut MessageLog>,
}

impl<'a, P: Protocol> Rounds<'a, P> {
    pub fn new(protocol: P, cfg: &SolverConfig, log: Option<&'a mut MessageLog>) -> Result<Self, EngineError> {
        let order = cfg.order(protocol.workers())?;
        Ok(Self { protocol, order, parallel: cfg.parallel, timing: cfg.record_timing, log })
    }
}

impl<P: Protocol> Scheme for Rounds<'_, P> {
    fn step(&mut self, k: usize) -> Result<StepMetrics, EngineError> {
        let n = self.protocol.workers();
        let signals: Vec<Vector> = (0..n).map(|w| self.protocol.signal(w)).collect();
        let protocol = &self.protocol;
        let timing = self.timing;
        type Timed = Result<(Vector, f64), EngineError>;
        let work = |w: usize| -> Timed {
            let start = timing.then(Instant::now);
            let block = protocol.update(w, &signals[w])?;
            Ok((block, start.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3)))
        };
        let results: Vec<(usize, Timed)> = if self.parallel {
            self.order.par_iter().map(|&w| (w, work(w))).collect()
        } else {
            self.order.iter().map(|&w| (w, work(w))).collect()
        };
        let mut blocks = vec![None; n];
        let mut ms = vec![0.0; n];
        for (w, r) in results {
            let (b, t) = r?;
            blocks[w] = Some(b);
            ms[w] = t;
        }
        let blocks: Vec<Vector> = blocks.into_iter().map(|b| b.expect("every worker reported")).collect();
        if let Some(log) = self.log.as_deref_mut() {
            for (w, s) in signals.iter().enumerate() {
                log.push(k, NodeId::Coordinator, NodeId::Worker(w), MessageKind::Signal, s.clone());
            }
            for (w, b) in blocks.iter().enumerate() {
                log.push(k, NodeId::Worker(w), NodeId::Coordinator, MessageKind::BlockUpdate, b.clone());
            }
        }
        let mut m = self.protocol.absorb(blocks)?;
        if timing {
            m.block_ms = ms;
        }
        Ok(m)
    }

    fn x(&self) -> &BlockVector {
        self.protocol.x()
    }

    fn lambda(&self) -> &Vector {
        self.protocol.lambda()
    }

    fn aux(&self) -> Aux<'_> {
        self.protocol.aux()
    }

    fn finish(&mut self, iterations: usize) {
        if let Some(log) = self.log.as_deref_mut() {
            for w in 0..self.protocol.workers() {
                log.push(iterations, NodeId::Coordinator, NodeId::Worker(w), MessageKind::Halt, Vector::zeros(0));
            }
        }
    }
}
