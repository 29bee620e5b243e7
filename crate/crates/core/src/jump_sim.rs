//! Exact simulation of the scaled jump process `Z^N = (X^N, Y^N)`.
//!
//! A continuous reaction `r` fires at the points `(s, u)` of `Q_r` with
//! `u <= N·λ_r(Z^N(s-))` and moves the state by `(h_r/N, 0)`; a discrete
//! reaction fires when `u <= μ_r(Z^N(s-))` and moves it by `(h_r/N, e_r)`.
//!
//! Between events every rate is constant, so the thinning level of each
//! reaction is its current rate: the first stream point under that level
//! is the reaction's next firing, and only reactions whose rate changed
//! need a new candidate after an event.

use crate::network::{HybridState, NetworkError, ReactionClass, ReactionNetwork};
use crate::path::{
    scaled_position, Event, GridSample, PathKind, PathRecord, SimError, DEFAULT_EVENT_CAP,
    DEFAULT_GRID,
};
use crate::prm::{Point, PrmCursor, PrmStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpOptions {
    /// Number of grid intervals on `[0, T]`.
    pub grid: usize,
    pub event_cap: u64,
}

impl Default for JumpOptions {
    fn default() -> Self {
        JumpOptions {
            grid: DEFAULT_GRID,
            event_cap: DEFAULT_EVENT_CAP,
        }
    }
}

/// Simulates `Z^N` on `[0, T]` with default options.
pub fn simulate_scaled(
    net: &ReactionNetwork,
    n: u64,
    z0: &HybridState,
    horizon: f64,
    seed: u64,
    replica: u64,
) -> Result<PathRecord, SimError> {
    simulate_scaled_with(net, n, z0, horizon, seed, replica, &JumpOptions::default())
}

pub(crate) fn check_inputs(
    net: &ReactionNetwork,
    z0: &HybridState,
    horizon: f64,
    grid: usize,
) -> Result<(), SimError> {
    if z0.x().len() != net.n() || z0.y().len() != net.d() {
        return Err(NetworkError::DimensionMismatch {
            expected: format!("(n={}, d={})", net.n(), net.d()),
            found: format!("(n={}, d={})", z0.x().len(), z0.y().len()),
        }
        .into());
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if grid == 0 {
        return Err(SimError::InvalidArgument("grid needs at least one interval".into()));
    }
    Ok(())
}

/// Position of each reaction in lexicographic id order, used to break ties.
pub(crate) fn tie_ranks(net: &ReactionNetwork) -> Vec<usize> {
    let mut order: Vec<usize> = (0..net.reactions().len()).collect();
    order.sort_by(|&a, &b| net.reactions()[a].id.cmp(&net.reactions()[b].id));
    let mut rank = vec![0; order.len()];
    for (pos, &k) in order.iter().enumerate() {
        rank[k] = pos;
    }
    rank
}

/// Index of the earliest candidate; ties go to the smaller rank.
pub(crate) fn earliest(candidates: &[Option<Point>], rank: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, c) in candidates.iter().enumerate() {
        let Some(p) = c else { continue };
        best = match best {
            None => Some(k),
            Some(b) => {
                let q = candidates[b].unwrap();
                if p.s < q.s || (p.s == q.s && rank[k] < rank[b]) {
                    Some(k)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

pub(crate) fn grid_time(horizon: f64, grid: usize, g: usize) -> f64 {
    if g == grid {
        horizon
    } else {
        horizon * g as f64 / grid as f64
    }
}

pub fn simulate_scaled_with(
    net: &ReactionNetwork,
    n: u64,
    z0: &HybridState,
    horizon: f64,
    seed: u64,
    replica: u64,
    opts: &JumpOptions,
) -> Result<PathRecord, SimError> {
    check_inputs(net, z0, horizon, opts.grid)?;
    if n == 0 {
        return Err(SimError::InvalidArgument("N must be positive".into()));
    }
    let reactions = net.reactions();
    let nf = n as f64;
    let rank = tie_ranks(net);
    let mut cursors: Vec<PrmCursor> = reactions
        .iter()
        .map(|r| PrmStream::new(seed, replica, &r.id).cursor())
        .collect();

    let mut path = PathRecord::empty(PathKind::Jump { n }, net, z0, horizon);
    let mut counts = vec![0i64; net.n()];
    let mut x = z0.x().to_vec();
    let mut y = z0.y().to_vec();
    let mut discrete_jumps = 0u64;
    let mut t = 0.0;

    let level = |k: usize, x: &[f64], y: &[i64], t: f64| -> Result<f64, SimError> {
        let raw = net.rate_value(k, x, y);
        if raw.is_nan() {
            return Err(SimError::InvalidRate {
                reaction: reactions[k].id.clone(),
                time: t,
            });
        }
        let scale = match reactions[k].class {
            ReactionClass::Continuous => nf,
            ReactionClass::Discrete => 1.0,
        };
        Ok(scale * raw.max(0.0))
    };

    let mut levels = Vec::with_capacity(reactions.len());
    let mut candidates = Vec::with_capacity(reactions.len());
    for k in 0..reactions.len() {
        let l = level(k, &x, &y, t)?;
        levels.push(l);
        candidates.push(cursors[k].next_point(t, l, horizon));
    }

    let mut next_grid = 0usize;
    while let Some(k) = earliest(&candidates, &rank) {
        let p = candidates[k].unwrap();
        while next_grid <= opts.grid && grid_time(horizon, opts.grid, next_grid) < p.s {
            path.grid.push(GridSample {
                t: grid_time(horizon, opts.grid, next_grid),
                state: HybridState::raw(x.clone(), y.clone()),
                jumps: discrete_jumps,
            });
            next_grid += 1;
        }
        if path.events.len() as u64 >= opts.event_cap {
            return Err(SimError::EventCap {
                cap: opts.event_cap,
                time: p.s,
            });
        }
        let r = &reactions[k];
        for (c, h) in counts.iter_mut().zip(&r.h) {
            *c += h;
        }
        if r.class == ReactionClass::Discrete {
            for (v, e) in y.iter_mut().zip(&r.e) {
                *v += e;
            }
            discrete_jumps += 1;
        }
        x = scaled_position(z0.x(), &counts, n);
        t = p.s;
        path.jump_counts[k] += 1;
        path.events.push(Event {
            time: t,
            reaction: k,
            point: p,
        });
        for j in 0..reactions.len() {
            let l = level(j, &x, &y, t)?;
            if j == k || l != levels[j] {
                levels[j] = l;
                candidates[j] = cursors[j].next_point(t, l, horizon);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::network::parse_network;
    use statrs::distribution::{ContinuousCDF, Exp};

    #[test]
    fn zero_rates_give_a_constant_path() {
        let net = parse_network(
            "species continuous: X\nspecies discrete: G\n\
             reaction a class=C h=[+1] rate = 0\n\
             reaction b class=D h=[0] e=[+1] rate = 0\n",
        )
        .unwrap();
        let z0 = HybridState::new(vec![0.5], vec![2]).unwrap();
        let path = simulate_scaled(&net, 50, &z0, 3.0, 1, 0).unwrap();
        assert!(path.events.is_empty());
        assert_eq!(path.grid.len(), DEFAULT_GRID + 1);
        assert!(path.grid.iter().all(|g| g.state == z0 && g.jumps == 0));
        assert_eq!(path.grid.last().unwrap().t, 3.0);
    }

    #[test]
    fn grid_states_replay_from_events() {
        let net = models::telegraph();
        let z0 = HybridState::new(vec![1.0], vec![1]).unwrap();
        let path = simulate_scaled(&net, 64, &z0, 2.0, 5, 3).unwrap();
        assert!(!path.events.is_empty());
        for w in path.events.windows(2) {
            assert!(w[0].time < w[1].time);
        }
        for g in &path.grid {
            assert_eq!(path.state_at(g.t), g.state);
        }
        for w in path.grid.windows(2) {
            assert!(w[0].jumps <= w[1].jumps);
        }
        let again = simulate_scaled(&net, 64, &z0, 2.0, 5, 3).unwrap();
        assert_eq!(path.events, again.events);
    }

    #[test]
    fn event_cap_is_reported() {
        let net = models::pure_birth();
        let z0 = HybridState::new(vec![0.0], vec![]).unwrap();
        let opts = JumpOptions {
            event_cap: 10,
            ..JumpOptions::default()
        };
        let err = simulate_scaled_with(&net, 1000, &z0, 1.0, 0, 0, &opts).unwrap_err();
        assert!(matches!(err, SimError::EventCap { cap: 10, .. }));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = models::telegraph();
        let z0 = HybridState::new(vec![1.0, 2.0], vec![1]).unwrap();
        assert!(matches!(
            simulate_scaled(&net, 4, &z0, 1.0, 0, 0),
            Err(SimError::Network(NetworkError::DimensionMismatch { .. }))
        ));
    }

    #[test]
    fn single_switch_time_is_exponential() {
        let net = parse_network(
            "species continuous: P\nspecies discrete: G\nparam b = 1\nrange G = [0, 1]\n\
             reaction off class=D h=[0] e=[-1] rate = b*G\n",
        )
        .unwrap();
        let z0 = HybridState::new(vec![0.0], vec![1]).unwrap();
        let opts = JumpOptions {
            grid: 1,
            ..JumpOptions::default()
        };
        let mut times: Vec<f64> = (0..10_000u64)
            .map(|seed| {
                let p = simulate_scaled_with(&net, 10, &z0, 50.0, seed, 0, &opts).unwrap();
                assert_eq!(p.events.len(), 1);
                p.events[0].time
            })
            .collect();
        times.sort_by(f64::total_cmp);
        let law = Exp::new(1.0).unwrap();
        let n = times.len() as f64;
        let d = times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let c = law.cdf(t);
                (c - i as f64 / n).max((i + 1) as f64 / n - c)
            })
            .fold(0.0, f64::max);
        // 1% critical value of the Kolmogorov distribution is 1.628/√n
        assert!(d < 1.628 / n.sqrt(), "KS distance {d}");
    }

    #[test]
    fn pure_birth_count_is_poisson() {
        let net = models::pure_birth();
        let z0 = HybridState::new(vec![0.25], vec![]).unwrap();
        let n = 100u64;
        let opts = JumpOptions {
            grid: 1,
            ..JumpOptions::default()
        };
        let counts: Vec<f64> = (0..4000u64)
            .map(|seed| {
                let p = simulate_scaled_with(&net, n, &z0, 1.0, seed, 7, &opts).unwrap();
                let x1 = p.grid.last().unwrap().state.x()[0];
                let c = (x1 - 0.25) * n as f64;
                assert!((c - c.round()).abs() < 1e-9);
                c.round()
            })
            .collect();
        let m = counts.len() as f64;
        let mean = counts.iter().sum::<f64>() / m;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!((mean - 100.0).abs() < 4.0 * (100.0 / m).sqrt(), "mean {mean}");
        // Var of the sample variance for Poisson(100) ≈ (2·100² + 100)/m
        assert!((var - 100.0).abs() < 4.0 * ((2.0e4 + 100.0) / m).sqrt(), "var {var}");
    }

    #[test]
    fn short_horizon_matches_generator() {
        // L_N x = F(x, y) for f(z) = x on the telegraph model
        let net = models::telegraph();
        let z0 = HybridState::new(vec![1.0], vec![1]).unwrap();
        let dt = 0.01;
        let reps = 100_000u64;
        let opts = JumpOptions {
            grid: 1,
            ..JumpOptions::default()
        };
        let incs: Vec<f64> = (0..reps)
            .map(|r| {
                let p = simulate_scaled_with(&net, 16, &z0, dt, 11, r, &opts).unwrap();
                p.grid.last().unwrap().state.x()[0] - 1.0
            })
            .collect();
        let m = reps as f64;
        let mean = incs.iter().sum::<f64>() / m;
        let sd = (incs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        let drift = net.drift(&z0).unwrap()[0];
        assert!(
            (mean - dt * drift).abs() < 4.0 * sd / m.sqrt() + 2.0 * dt * dt,
            "mean increment {mean} vs {}",
            dt * drift
        );
    }

    #[test]
    fn ties_follow_reaction_id_order() {
        let p = Point { s: 1.0, u: 0.0 };
        let q = Point { s: 2.0, u: 0.0 };
        assert_eq!(earliest(&[Some(p), Some(p)], &[1, 0]), Some(1));
        assert_eq!(earliest(&[Some(q), None, Some(p)], &[0, 1, 2]), Some(2));
        assert_eq!(earliest(&[None, None], &[0, 1]), None);
    }
}
