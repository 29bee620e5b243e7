//! Simulation of the piecewise deterministic limit `Z = (X, Y)`.
//!
//! `X` follows `x' = F(x, y)` between jumps. Each discrete reaction reads
//! the same stream as in [`crate::jump_sim`] and fires at points with
//! `u <= μ_r(Z(s-))`, changing only `y`. The flow is integrated exactly to
//! every candidate time so the rate is evaluated at the true left limit.

use crate::jump_sim::{check_inputs, earliest, grid_time, tie_ranks};
use crate::network::{HybridState, ReactionNetwork};
use crate::path::{
    Event, FlowKnot, FlowSegment, GridSample, PathKind, PathRecord, SimError, DEFAULT_EVENT_CAP,
    DEFAULT_GRID,
};
use crate::prm::{PrmCursor, PrmStream};

pub const DEFAULT_RTOL: f64 = 1e-8;
pub const DEFAULT_ATOL: f64 = 1e-10;
/// Largest flow step; also the length of one thinning window.
pub const MAX_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdmpOptions {
    pub grid: usize,
    pub event_cap: u64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for PdmpOptions {
    fn default() -> Self {
        PdmpOptions {
            grid: DEFAULT_GRID,
            event_cap: DEFAULT_EVENT_CAP,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Difference between the 5th and 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince integrator of `x' = F(x, y)` for fixed `y`.
#[derive(Debug, Clone)]
pub(crate) struct FlowIntegrator<'a> {
    net: &'a ReactionNetwork,
    rtol: f64,
    atol: f64,
    h: f64,
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    xnew: Vec<f64>,
}

impl<'a> FlowIntegrator<'a> {
    pub(crate) fn new(net: &'a ReactionNetwork, rtol: f64, atol: f64) -> Self {
        let n = net.n();
        FlowIntegrator {
            net,
            rtol,
            atol,
            h: 0.01,
            k: vec![vec![0.0; n]; 7],
            tmp: vec![0.0; n],
            xnew: vec![0.0; n],
        }
    }

    /// Advances `(t, x)` to `target`. `f` must hold `F(x, y)` on entry and
    /// holds it on exit. `knot` is called after every accepted step.
    pub(crate) fn advance(
        &mut self,
        t: &mut f64,
        x: &mut [f64],
        f: &mut [f64],
        y: &[i64],
        target: f64,
        mut knot: impl FnMut(f64, &[f64], &[f64]),
    ) -> Result<(), SimError> {
        let n = x.len();
        while *t < target {
            let remaining = target - *t;
            let cap = self.h.min(MAX_STEP);
            let clipped = remaining <= cap;
            let h = if clipped { remaining } else { cap };
            self.k[0].copy_from_slice(f);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = x[i];
                    for j in 0..s {
                        acc += h * A[s][j] * self.k[j][i];
                    }
                    self.tmp[i] = acc;
                }
                let (tmp, k) = (&self.tmp, &mut self.k[s]);
                self.net.drift_into(tmp, y, k);
            }
            // stage 7 is evaluated at the 5th order solution
            self.xnew.copy_from_slice(&self.tmp);
            let mut err = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for s in 0..7 {
                    e += E[s] * self.k[s][i];
                }
                let scale = self.atol + self.rtol * x[i].abs().max(self.xnew[i].abs());
                err += (h * e / scale).powi(2);
            }
            let err = if n > 0 { (err / n as f64).sqrt() } else { 0.0 };
            if !err.is_finite() {
                self.h = h * 0.2;
            } else if err <= 1.0 {
                *t = if clipped { target } else { *t + h };
                x.copy_from_slice(&self.xnew);
                f.copy_from_slice(&self.k[6]);
                knot(*t, x, f);
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if !clipped || h * grow > self.h {
                    self.h = (h * grow).min(MAX_STEP);
                }
                continue;
            } else {
                self.h = h * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            }
            if self.h < 64.0 * f64::EPSILON * t.abs().max(1.0) {
                return Err(SimError::StepUnderflow {
                    time: *t,
                    step: self.h,
                });
            }
        }
        Ok(())
    }
}

/// `φ(t1 - t0, x0, y)` with relative tolerance `tol`; `y` is unchanged.
pub fn integrate_flow(
    net: &ReactionNetwork,
    s0: &HybridState,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<HybridState, SimError> {
    if s0.x().len() != net.n() || s0.y().len() != net.d() {
        return Err(crate::network::NetworkError::DimensionMismatch {
            expected: format!("(n={}, d={})", net.n(), net.d()),
            found: format!("(n={}, d={})", s0.x().len(), s0.y().len()),
        }
        .into());
    }
    if !(t1 >= t0) || !(tol > 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "need t0 <= t1 and tol > 0, got t0 = {t0}, t1 = {t1}, tol = {tol}"
        )));
    }
    let mut x = s0.x().to_vec();
    let mut f = vec![0.0; net.n()];
    net.drift_into(&x, s0.y(), &mut f);
    let mut t = t0;
    let mut integ = FlowIntegrator::new(net, tol, tol * 1e-2);
    integ.advance(&mut t, &mut x, &mut f, s0.y(), t1, |_, _, _| {})?;
    Ok(HybridState::raw(x, s0.y().to_vec()))
}

/// Simulates `Z` on `[0, T]` with default options.
pub fn simulate_pdmp(
    net: &ReactionNetwork,
    z0: &HybridState,
    horizon: f64,
    seed: u64,
    replica: u64,
) -> Result<PathRecord, SimError> {
    simulate_pdmp_with(net, z0, horizon, seed, replica, &PdmpOptions::default())
}

struct Snapshot {
    t: f64,
    x: Vec<f64>,
    f: Vec<f64>,
    knots: usize,
    grid: usize,
}

pub fn simulate_pdmp_with(
    net: &ReactionNetwork,
    z0: &HybridState,
    horizon: f64,
    seed: u64,
    replica: u64,
    opts: &PdmpOptions,
) -> Result<PathRecord, SimError> {
    check_inputs(net, z0, horizon, opts.grid)?;
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(SimError::InvalidArgument("tolerances must be positive".into()));
    }
    let reactions = net.reactions();
    let disc: Vec<usize> = net.discrete_reactions().to_vec();
    let rank_all = tie_ranks(net);
    let rank: Vec<usize> = disc.iter().map(|&k| rank_all[k]).collect();
    let mut cursors: Vec<PrmCursor> = disc
        .iter()
        .map(|&k| PrmStream::new(seed, replica, &reactions[k].id).cursor())
        .collect();
    let flow_free: Vec<bool> = disc
        .iter()
        .map(|&k| !reactions[k].rate.depends_on_any_continuous(net.n()))
        .collect();

    let mut path = PathRecord::empty(PathKind::Pdmp, net, z0, horizon);
    let mut integ = FlowIntegrator::new(net, opts.rtol, opts.atol);
    let mut t = 0.0;
    let mut x = z0.x().to_vec();
    let mut y = z0.y().to_vec();
    let mut f = vec![0.0; net.n()];
    net.drift_into(&x, &y, &mut f);
    let mut discrete_jumps = 0u64;
    path.flow.push(FlowSegment {
        y: y.clone(),
        knots: vec![FlowKnot {
            t,
            x: x.clone(),
            f: f.clone(),
        }],
    });
    path.grid.push(GridSample {
        t: 0.0,
        state: z0.clone(),
        jumps: 0,
    });
    let mut next_grid = 1usize;

    let mu = |k: usize, x: &[f64], y: &[i64], t: f64| -> Result<f64, SimError> {
        let v = net.rate_value(k, x, y);
        if v.is_nan() {
            return Err(SimError::InvalidRate {
                reaction: reactions[k].id.clone(),
                time: t,
            });
        }
        Ok(v.max(0.0))
    };

    let mut levels = vec![0.0; disc.len()];
    let mut candidates = vec![None; disc.len()];
    while t < horizon {
        let t_end = (t + MAX_STEP).min(horizon);
        // thinning levels for this window
        let needs_probe = net.rate_bound().is_none() && flow_free.iter().any(|v| !v);
        let mut probes: Vec<(Vec<f64>, f64)> = vec![(x.clone(), t)];
        if needs_probe {
            let mut pt = t;
            let mut px = x.clone();
            let mut pf = f.clone();
            let mut probe = integ.clone();
            let mid = 0.5 * (t + t_end);
            probe.advance(&mut pt, &mut px, &mut pf, &y, mid, |_, _, _| {})?;
            probes.push((px.clone(), pt));
            probe.advance(&mut pt, &mut px, &mut pf, &y, t_end, |_, _, _| {})?;
            probes.push((px, pt));
        }
        for (i, &k) in disc.iter().enumerate() {
            levels[i] = if flow_free[i] {
                mu(k, &x, &y, t)?
            } else if let Some(bound) = net.rate_bound() {
                bound
            } else {
                let mut m: f64 = 0.0;
                for (px, pt) in &probes {
                    m = m.max(mu(k, px, &y, *pt)?);
                }
                2.0 * m
            };
        }

        let snap = Snapshot {
            t,
            x: x.clone(),
            f: f.clone(),
            knots: path.flow.last().unwrap().knots.len(),
            grid: path.grid.len(),
        };
        let snap_next_grid = next_grid;
        let snap_h = integ.h;
        'attempt: loop {
            for (i, c) in candidates.iter_mut().enumerate() {
                *c = cursors[i].next_point(t, levels[i], t_end);
            }
            loop {
                let pick = earliest(&candidates, &rank);
                let target = pick.map_or(t_end, |i| candidates[i].unwrap().s);
                // integrate to target, stopping at grid times
                while t < target {
                    let g_t = if next_grid <= opts.grid {
                        grid_time(horizon, opts.grid, next_grid)
                    } else {
                        f64::INFINITY
                    };
                    let stop = target.min(g_t);
                    let seg = path.flow.last_mut().unwrap();
                    integ.advance(&mut t, &mut x, &mut f, &y, stop, |kt, kx, kf| {
                        seg.knots.push(FlowKnot {
                            t: kt,
                            x: kx.to_vec(),
                            f: kf.to_vec(),
                        })
                    })?;
                    if t >= g_t {
                        path.grid.push(GridSample {
                            t: g_t,
                            state: HybridState::raw(x.clone(), y.clone()),
                            jumps: discrete_jumps,
                        });
                        next_grid += 1;
                    }
                }
                let mut raised = false;
                match pick {
                    None => {
                        for (i, &k) in disc.iter().enumerate() {
                            let m = mu(k, &x, &y, t)?;
                            if m > levels[i] {
                                levels[i] = 2.0 * m;
                                raised = true;
                            }
                        }
                    }
                    Some(i) => {
                        let k = disc[i];
                        let p = candidates[i].unwrap();
                        let m = mu(k, &x, &y, t)?;
                        if m > levels[i] {
                            levels[i] = 2.0 * m;
                            raised = true;
                        } else if p.u <= m {
                            if path.events.len() as u64 >= opts.event_cap {
                                return Err(SimError::EventCap {
                                    cap: opts.event_cap,
                                    time: t,
                                });
                            }
                            for (v, e) in y.iter_mut().zip(&reactions[k].e) {
                                *v += e;
                            }
                            discrete_jumps += 1;
                            path.jump_counts[k] += 1;
                            path.events.push(Event {
                                time: t,
                                reaction: k,
                                point: p,
                            });
                            net.drift_into(&x, &y, &mut f);
                            path.flow.push(FlowSegment {
                                y: y.clone(),
                                knots: vec![FlowKnot {
                                    t,
                                    x: x.clone(),
                                    f: f.clone(),
                                }],
                            });
                            break 'attempt;
                        } else {
                            candidates[i] = cursors[i].next_point(t, levels[i], t_end);
                            continue;
                        }
                    }
                }
                if raised {
                    t = snap.t;
                    x.copy_from_slice(&snap.x);
                    f.copy_from_slice(&snap.f);
                    integ.h = snap_h;
                    path.flow.last_mut().unwrap().knots.truncate(snap.knots);
                    path.grid.truncate(snap.grid);
                    next_grid = snap_next_grid;
                    continue 'attempt;
                }
                break 'attempt;
            }
        }
    }
    while next_grid <= opts.grid {
        path.grid.push(GridSample {
            t: grid_time(horizon, opts.grid, next_grid),
            state: HybridState::raw(x.clone(), y.clone()),
            jumps: discrete_jumps,
        });
        next_grid += 1;
    }
    Ok(path)
}
