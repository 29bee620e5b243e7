//! Recorded trajectories of `Z^N` and `Z`, shared by both simulators.

use crate::network::{HybridState, NetworkError, ReactionClass, ReactionNetwork};
use crate::prm::Point;
use std::io::{self, Write};
use thiserror::Error;

/// Default number of grid intervals on `[0, T]`.
pub const DEFAULT_GRID: usize = 256;
/// Default safety cap on the number of accepted events per path.
pub const DEFAULT_EVENT_CAP: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event cap of {cap} events exceeded at t = {time}")]
    EventCap { cap: u64, time: f64 },
    #[error("flow integrator step size underflow at t = {time} (h = {step:e})")]
    StepUnderflow { time: f64, step: f64 },
    #[error("rate of reaction '{reaction}' is not a number at t = {time}")]
    InvalidRate { reaction: String, time: f64 },
    #[error("SDE solution diverged at t = {time} (|V| = {norm:e})")]
    Divergence { time: f64, norm: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Which process a path realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    /// Scaled jump process with scale parameter `N`.
    Jump { n: u64 },
    /// Piecewise deterministic limit.
    Pdmp,
}

/// One accepted point of a Poisson random measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    /// Index into the network's reaction list.
    pub reaction: usize,
    pub point: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub t: f64,
    pub state: HybridState,
    /// Discrete jumps on `[0, t]`.
    pub jumps: u64,
}

/// Accepted integrator step end: time, position and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowKnot {
    pub t: f64,
    pub x: Vec<f64>,
    pub f: Vec<f64>,
}

/// Flow between two discrete jumps; `y` is constant on the segment.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSegment {
    pub y: Vec<i64>,
    pub knots: Vec<FlowKnot>,
}

impl FlowSegment {
    pub fn start(&self) -> f64 {
        self.knots[0].t
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1].t
    }
}

/// A càdlàg path on `[0, T]`.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub kind: PathKind,
    pub initial: HybridState,
    pub horizon: f64,
    pub events: Vec<Event>,
    pub grid: Vec<GridSample>,
    pub jump_counts: Vec<u64>,
    pub reaction_ids: Vec<String>,
    pub continuous_names: Vec<String>,
    pub discrete_names: Vec<String>,
    pub(crate) h: Vec<Vec<i64>>,
    pub(crate) e: Vec<Vec<i64>>,
    pub(crate) discrete: Vec<bool>,
    /// Flow segments, in time order (PDMP paths only).
    pub flow: Vec<FlowSegment>,
}

impl PathRecord {
    pub(crate) fn empty(
        kind: PathKind,
        net: &ReactionNetwork,
        initial: &HybridState,
        horizon: f64,
    ) -> Self {
        PathRecord {
            kind,
            initial: initial.clone(),
            horizon,
            events: Vec::new(),
            grid: Vec::new(),
            jump_counts: vec![0; net.reactions().len()],
            reaction_ids: net.reactions().iter().map(|r| r.id.clone()).collect(),
            continuous_names: net.continuous_species().to_vec(),
            discrete_names: net.discrete_species().to_vec(),
            h: net.reactions().iter().map(|r| r.h.clone()).collect(),
            e: net.reactions().iter().map(|r| r.e.clone()).collect(),
            discrete: net
                .reactions()
                .iter()
                .map(|r| r.class == ReactionClass::Discrete)
                .collect(),
            flow: Vec::new(),
        }
    }

    pub fn scale(&self) -> Option<u64> {
        match self.kind {
            PathKind::Jump { n } => Some(n),
            PathKind::Pdmp => None,
        }
    }

    pub fn is_discrete(&self, reaction: usize) -> bool {
        self.discrete[reaction]
    }

    /// Accepted events of discrete-class reactions, in time order.
    pub fn discrete_events(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| self.discrete[e.reaction])
    }

    /// Discrete jump count `J_T`.
    pub fn total_discrete_jumps(&self) -> u64 {
        self.jump_counts
            .iter()
            .zip(&self.discrete)
            .filter(|(_, d)| **d)
            .map(|(c, _)| *c)
            .sum()
    }

    /// Right-continuous state at `t ∈ [0, T]`.
    pub fn state_at(&self, t: f64) -> HybridState {
        match self.kind {
            PathKind::Jump { n } => self.jump_state_at(n, t),
            PathKind::Pdmp => {
                let mut cursor = FlowCursor::new(self);
                let x = cursor.x_at(t);
                let y = cursor.y_at(t).to_vec();
                HybridState::raw(x, y)
            }
        }
    }

    fn jump_state_at(&self, n: u64, t: f64) -> HybridState {
        let mut counts = vec![0i64; self.initial.x().len()];
        let mut y = self.initial.y().to_vec();
        for ev in self.events.iter().take_while(|e| e.time <= t) {
            for (c, h) in counts.iter_mut().zip(&self.h[ev.reaction]) {
                *c += h;
            }
            for (v, e) in y.iter_mut().zip(&self.e[ev.reaction]) {
                *v += e;
            }
        }
        HybridState::raw(scaled_position(self.initial.x(), &counts, n), y)
    }

    /// Writes `t, x_1..x_n, y_1..y_d, J_t` rows for the grid.
    pub fn write_grid_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(self.continuous_names.iter().cloned());
        header.extend(self.discrete_names.iter().cloned());
        header.push("J_t".to_string());
        writeln!(w, "{}", header.join(","))?;
        for g in &self.grid {
            let mut row = vec![format!("{}", g.t)];
            row.extend(g.state.x().iter().map(|v| format!("{v}")));
            row.extend(g.state.y().iter().map(|v| format!("{v}")));
            row.push(format!("{}", g.jumps));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Writes `s, reaction, u` rows, one per accepted event.
    pub fn write_events_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "s,reaction,u")?;
        for ev in &self.events {
            writeln!(
                w,
                "{},{},{}",
                ev.point.s, self.reaction_ids[ev.reaction], ev.point.u
            )?;
        }
        Ok(())
    }
}

/// `x0 + c / N`, computed so that equal counts give bit-equal positions.
pub(crate) fn scaled_position(x0: &[f64], counts: &[i64], n: u64) -> Vec<f64> {
    x0.iter()
        .zip(counts)
        .map(|(x, c)| x + *c as f64 / n as f64)
        .collect()
}

/// Monotone-friendly evaluator of a PDMP path's continuous component.
///
/// Uses cubic Hermite interpolation between integrator knots. Queries may
/// go in any order; forward sweeps are amortized O(1).
#[derive(Debug, Clone)]
pub struct FlowCursor<'a> {
    path: &'a PathRecord,
    seg: usize,
    knot: usize,
}

impl<'a> FlowCursor<'a> {
    pub fn new(path: &'a PathRecord) -> Self {
        assert!(
            !path.flow.is_empty(),
            "flow cursor needs a recorded PDMP path"
        );
        FlowCursor {
            path,
            seg: 0,
            knot: 0,
        }
    }

    fn locate(&mut self, t: f64) {
        let flow = &self.path.flow;
        if t < flow[self.seg].start() {
            self.seg = flow.partition_point(|s| s.start() <= t).saturating_sub(1);
            self.knot = 0;
        }
        // right-continuous: a jump time belongs to the segment it starts
        while self.seg + 1 < flow.len() && flow[self.seg + 1].start() <= t {
            self.seg += 1;
            self.knot = 0;
        }
        let knots = &flow[self.seg].knots;
        if self.knot >= knots.len() || knots[self.knot].t > t {
            self.knot = knots
                .partition_point(|k| k.t <= t)
                .saturating_sub(1)
                .min(knots.len().saturating_sub(2));
        }
        while self.knot + 2 < knots.len() && knots[self.knot + 1].t <= t {
            self.knot += 1;
        }
    }

    /// Segment index holding time `t`.
    pub fn segment_at(&mut self, t: f64) -> usize {
        self.locate(t);
        self.seg
    }

    pub fn y_at(&mut self, t: f64) -> &'a [i64] {
        self.locate(t);
        &self.path.flow[self.seg].y
    }

    pub fn x_at(&mut self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.path.initial.x().len()];
        self.x_into(t, &mut out);
        out
    }

    pub fn x_into(&mut self, t: f64, out: &mut [f64]) {
        self.locate(t);
        let knots = &self.path.flow[self.seg].knots;
        if knots.len() == 1 {
            out.copy_from_slice(&knots[0].x);
            return;
        }
        let a = &knots[self.knot];
        let b = &knots[self.knot + 1];
        hermite(a, b, t, out);
    }
}

fn hermite(a: &FlowKnot, b: &FlowKnot, t: f64, out: &mut [f64]) {
    let h = b.t - a.t;
    if h <= 0.0 {
        out.copy_from_slice(&a.x);
        return;
    }
    if t <= a.t {
        out.copy_from_slice(&a.x);
        return;
    }
    if t >= b.t {
        out.copy_from_slice(&b.x);
        return;
    }
    let s = (t - a.t) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for i in 0..out.len() {
        out[i] = h00 * a.x[i] + h10 * h * a.f[i] + h01 * b.x[i] + h11 * h * b.f[i];
    }
}
