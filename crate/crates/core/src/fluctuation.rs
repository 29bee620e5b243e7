//! Fluctuations of the continuous scale and the limiting linear SDE.
//!
//! For a coupled pair `(Z^N, Z)` driven by the same streams,
//! `V^N = √N (X^N - X)` splits as
//!
//! ```text
//! V^N_t = V^N_0 + U^N_t + √N γ^N_t + ∫₀ᵗ ∇ₓF(X, Y^N) V^N ds + ζ^N_t + ξ^N_t
//! ```
//!
//! with `U^N = √N M^N` the compensated continuous-reaction noise, `γ^N`
//! the `h_r/N` kicks of discrete reactions, and `ζ^N`, `ξ^N` the
//! linearization and discrete-scale remainders. Integrals are evaluated on
//! the merged mesh of grid times, jump times and flow knots, on which
//! `Z^N` and `Y` are constant and `X` is smooth.

use crate::jump_sim::{simulate_scaled_with, JumpOptions};
use crate::network::{HybridState, ReactionClass, ReactionNetwork};
use crate::path::{FlowCursor, PathRecord, SimError, DEFAULT_EVENT_CAP, DEFAULT_GRID};
use crate::pdmp_sim::{simulate_pdmp_with, PdmpOptions, DEFAULT_ATOL, DEFAULT_RTOL};
use crate::prm::{derive_key, fnv1a};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{self, Write};

/// Euler–Maruyama steps on `[0, T]`.
pub const DEFAULT_SDE_STEPS: usize = 4096;
/// `|V|` beyond which an SDE run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingOptions {
    pub grid: usize,
    pub event_cap: u64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        CouplingOptions {
            grid: DEFAULT_GRID,
            event_cap: DEFAULT_EVENT_CAP,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
        }
    }
}

/// `Z^N` and `Z` realized on the same streams.
#[derive(Debug, Clone)]
pub struct CoupledPair {
    pub n: u64,
    pub jump: PathRecord,
    pub pdmp: PathRecord,
}

#[allow(clippy::too_many_arguments)]
pub fn coupled_pair(
    net: &ReactionNetwork,
    n: u64,
    z0n: &HybridState,
    z0: &HybridState,
    horizon: f64,
    seed: u64,
    replica: u64,
    opts: &CouplingOptions,
) -> Result<CoupledPair, SimError> {
    let jump = simulate_scaled_with(
        net,
        n,
        z0n,
        horizon,
        seed,
        replica,
        &JumpOptions {
            grid: opts.grid,
            event_cap: opts.event_cap,
        },
    )?;
    let pdmp = simulate_pdmp_with(
        net,
        z0,
        horizon,
        seed,
        replica,
        &PdmpOptions {
            grid: opts.grid,
            event_cap: opts.event_cap,
            rtol: opts.rtol,
            atol: opts.atol,
        },
    )?;
    Ok(CoupledPair { n, jump, pdmp })
}

/// Pathwise summaries of one coupled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwiseMetrics {
    /// `sup_t |Z^N - Z|` with `|z| = |x| + |y|`.
    pub sup_error: f64,
    pub sup_x_error: f64,
    pub sup_y_error: f64,
    /// `sup_t |M^N_t|`.
    pub sup_martingale: f64,
    /// `sup_t |γ^N_t|`.
    pub sup_gamma: f64,
    /// Discrete event lists of both paths coincide.
    pub y_equal: bool,
    /// `∫₀ᵀ λ_r(Z^N) ds` per reaction (unscaled rates).
    pub jump_rate_integrals: Vec<f64>,
    /// `∫₀ᵀ λ_r(Z) ds` per reaction.
    pub pdmp_rate_integrals: Vec<f64>,
    pub jump_counts: Vec<u64>,
    /// `V^N_T`.
    pub v_final: Vec<f64>,
}

/// Decomposition of `V^N` sampled on the grid.
#[derive(Debug, Clone)]
pub struct FluctuationDecomposition {
    pub n: u64,
    pub species: Vec<String>,
    pub times: Vec<f64>,
    pub v0: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub sqrt_n_gamma: Vec<Vec<f64>>,
    pub zeta: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub drift_integral: Vec<Vec<f64>>,
    /// Row-major `n × n` matrix `[U^N_i, U^N_j]_t` per grid time.
    pub qv: Vec<Vec<f64>>,
    /// Accumulated quadrature error estimate per grid time.
    pub quad_error: Vec<f64>,
    /// Floor for flow integration error per grid time.
    pub integrator_floor: Vec<f64>,
    pub metrics: PathwiseMetrics,
}

impl FluctuationDecomposition {
    /// Largest coordinate gap in the reconstruction identity at grid index `g`.
    pub fn residual(&self, g: usize) -> f64 {
        (0..self.v0.len())
            .map(|i| {
                let rhs = self.v0[i]
                    + self.u[g][i]
                    + self.sqrt_n_gamma[g][i]
                    + self.drift_integral[g][i]
                    + self.zeta[g][i]
                    + self.xi[g][i];
                (self.v[g][i] - rhs).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Allowed identity gap at grid index `g`.
    pub fn tolerance(&self, g: usize) -> f64 {
        10.0 * self.quad_error[g] + self.integrator_floor[g]
    }

    /// Grid index of time `t`, if `t` is a grid time.
    pub fn grid_index(&self, t: f64) -> Option<usize> {
        let scale = self.times.last().copied().unwrap_or(1.0).abs().max(1.0);
        let g = self.times.partition_point(|&s| s < t - 1e-12 * scale);
        (g < self.times.len() && (self.times[g] - t).abs() <= 1e-12 * scale).then_some(g)
    }

    /// Writes the decomposition CSV, one row per grid time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.v0.len();
        let col = |base: &str, i: usize| {
            if n == 1 {
                base.to_string()
            } else {
                format!("{base}_{}", self.species[i])
            }
        };
        let mut header = vec!["t".to_string()];
        for base in ["V^N", "U^N", "sqrtN_gamma", "zeta", "xi", "drift_integral"] {
            header.extend((0..n).map(|i| col(base, i)));
        }
        for i in 0..n {
            for j in 0..n {
                header.push(format!("qv_{}{}", i + 1, j + 1));
            }
        }
        header.push("identity_residual".into());
        header.push("identity_tolerance".into());
        writeln!(w, "{}", header.join(","))?;
        for g in 0..self.times.len() {
            let mut row = vec![format!("{}", self.times[g])];
            for block in [
                &self.v,
                &self.u,
                &self.sqrt_n_gamma,
                &self.zeta,
                &self.xi,
                &self.drift_integral,
            ] {
                row.extend(block[g].iter().map(|v| format!("{v}")));
            }
            row.extend(self.qv[g].iter().map(|v| format!("{v}")));
            row.push(format!("{:e}", self.residual(g)));
            row.push(format!("{:e}", self.tolerance(g)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `[U^N_i, U^N_j]_t` for a grid time `t`.
pub fn quadratic_variation(
    dec: &FluctuationDecomposition,
    i: usize,
    j: usize,
    t: f64,
) -> Result<f64, SimError> {
    let n = dec.v0.len();
    if i >= n || j >= n {
        return Err(SimError::InvalidArgument(format!(
            "species index ({i}, {j}) out of range for n = {n}"
        )));
    }
    let g = dec
        .grid_index(t)
        .ok_or_else(|| SimError::InvalidArgument(format!("t = {t} is not a grid time")))?;
    Ok(dec.qv[g][i * n + j])
}

/// Runs a coupled pair and decomposes its fluctuations.
#[allow(clippy::too_many_arguments)]
pub fn coupled_fluctuation(
    net: &ReactionNetwork,
    n: u64,
    z0n: &HybridState,
    z0: &HybridState,
    horizon: f64,
    seed: u64,
    replica: u64,
    opts: &CouplingOptions,
) -> Result<FluctuationDecomposition, SimError> {
    let pair = coupled_pair(net, n, z0n, z0, horizon, seed, replica, opts)?;
    Ok(decompose(net, &pair, opts.rtol))
}

/// Summaries of a coupled pair without the decomposition integrals.
pub fn pathwise_metrics(net: &ReactionNetwork, pair: &CoupledPair) -> PathwiseMetrics {
    walk(net, pair, None).0
}

/// Full decomposition of a coupled pair.
pub fn decompose(net: &ReactionNetwork, pair: &CoupledPair, rtol: f64) -> FluctuationDecomposition {
    let (metrics, dec) = walk(net, pair, Some(rtol));
    let mut dec = dec.expect("decomposition requested");
    dec.metrics = metrics;
    dec
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn merged_mesh(pair: &CoupledPair) -> Vec<f64> {
    let mut mesh: Vec<f64> = pair.jump.grid.iter().map(|g| g.t).collect();
    mesh.extend(pair.jump.events.iter().map(|e| e.time));
    for seg in &pair.pdmp.flow {
        mesh.extend(seg.knots.iter().map(|k| k.t));
    }
    mesh.extend(pair.pdmp.events.iter().map(|e| e.time));
    mesh.retain(|t| *t >= 0.0 && *t <= pair.jump.horizon);
    mesh.sort_by(f64::total_cmp);
    mesh.dedup();
    mesh
}

/// Integrands of `drift`, `ζ` and `ξ` at one instant of a mesh interval.
struct Integrands {
    drift: Vec<f64>,
    zeta: Vec<f64>,
    xi: Vec<f64>,
    /// `√N F(X, Y)` for the quadrature error estimate.
    limit: Vec<f64>,
}

struct Scratch {
    fx: Vec<f64>,
    fy: Vec<f64>,
    jac: Vec<f64>,
    v: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn integrands(
    net: &ReactionNetwork,
    sqrt_n: f64,
    xn: &[f64],
    yn: &[i64],
    f_jump: &[f64],
    x: &[f64],
    y: &[i64],
    s: &mut Scratch,
) -> Integrands {
    let n = x.len();
    net.drift_into(x, yn, &mut s.fx);
    net.jacobian_into(x, yn, &mut s.jac);
    for i in 0..n {
        s.v[i] = sqrt_n * (xn[i] - x[i]);
    }
    let mut drift = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            drift[i] += s.jac[i * n + j] * s.v[j];
        }
    }
    let zeta = (0..n)
        .map(|i| sqrt_n * (f_jump[i] - s.fx[i]) - drift[i])
        .collect();
    let (xi, limit) = if yn == y {
        (vec![0.0; n], s.fx.iter().map(|v| sqrt_n * v).collect())
    } else {
        net.drift_into(x, y, &mut s.fy);
        (
            (0..n).map(|i| sqrt_n * (s.fx[i] - s.fy[i])).collect(),
            s.fy.iter().map(|v| sqrt_n * v).collect(),
        )
    };
    Integrands {
        drift,
        zeta,
        xi,
        limit,
    }
}

fn walk(
    net: &ReactionNetwork,
    pair: &CoupledPair,
    full: Option<f64>,
) -> (PathwiseMetrics, Option<FluctuationDecomposition>) {
    let jump = &pair.jump;
    let pdmp = &pair.pdmp;
    let nn = pair.n;
    let nf = nn as f64;
    let sqrt_n = nf.sqrt();
    let n = net.n();
    let reactions = net.reactions();
    let nr = reactions.len();
    let mesh = merged_mesh(pair);
    let grid_times: Vec<f64> = jump.grid.iter().map(|g| g.t).collect();

    let mut flow = FlowCursor::new(pdmp);
    let mut counts = vec![0i64; n];
    let mut xn = jump.initial.x().to_vec();
    let mut yn = jump.initial.y().to_vec();
    let mut f_jump = vec![0.0; n];
    net.drift_into(&xn, &yn, &mut f_jump);
    let mut rates_jump: Vec<f64> = (0..nr)
        .map(|k| net.rate_value(k, &xn, &yn).max(0.0))
        .collect();
    let mut reaction_counts = vec![0u64; nr];
    let mut m = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    let mut jump_int = vec![0.0; nr];
    let mut pdmp_int = vec![0.0; nr];
    let mut sup_err: f64 = 0.0;
    let mut sup_x: f64 = 0.0;
    let mut sup_y: f64 = 0.0;
    let mut sup_m: f64 = 0.0;
    let mut sup_g: f64 = 0.0;

    let mut scratch = Scratch {
        fx: vec![0.0; n],
        fy: vec![0.0; n],
        jac: vec![0.0; n * n],
        v: vec![0.0; n],
    };
    let v0: Vec<f64> = (0..n)
        .map(|i| sqrt_n * (jump.initial.x()[i] - pdmp.initial.x()[i]))
        .collect();
    let mut dec = full.map(|_| FluctuationDecomposition {
        n: nn,
        species: net.continuous_species().to_vec(),
        times: Vec::new(),
        v0: v0.clone(),
        v: Vec::new(),
        u: Vec::new(),
        sqrt_n_gamma: Vec::new(),
        zeta: Vec::new(),
        xi: Vec::new(),
        drift_integral: Vec::new(),
        qv: Vec::new(),
        quad_error: Vec::new(),
        integrator_floor: Vec::new(),
        metrics: PathwiseMetrics {
            sup_error: 0.0,
            sup_x_error: 0.0,
            sup_y_error: 0.0,
            sup_martingale: 0.0,
            sup_gamma: 0.0,
            y_equal: false,
            jump_rate_integrals: Vec::new(),
            pdmp_rate_integrals: Vec::new(),
            jump_counts: Vec::new(),
            v_final: Vec::new(),
        },
    });
    let mut zeta = vec![0.0; n];
    let mut xi = vec![0.0; n];
    let mut drift = vec![0.0; n];
    let mut quad_err = 0.0;
    let mut sup_xabs: f64 = pdmp.initial.x().iter().fold(0.0, |a, v| a.max(v.abs()));

    let mut ev = 0usize;
    let mut next_grid = 0usize;
    let mut xa = vec![0.0; n];
    let mut xb = vec![0.0; n];
    let mut xm = vec![0.0; n];
    let mut track = |xn: &[f64], yn: &[i64], x: &[f64], y: &[i64], m: &[f64], gamma: &[f64]| {
        let dx = crate::network::distance_parts(xn, &[], x, &[]);
        let dy = crate::network::distance_parts(&[], yn, &[], y);
        sup_x = sup_x.max(dx);
        sup_y = sup_y.max(dy);
        sup_err = sup_err.max(dx + dy);
        sup_m = sup_m.max(norm2(m));
        sup_g = sup_g.max(norm2(gamma));
    };

    for (idx, &a) in mesh.iter().enumerate() {
        // events of Z^N at time a
        let mut changed = false;
        while ev < jump.events.len() && jump.events[ev].time <= a {
            let e = jump.events[ev];
            let r = &reactions[e.reaction];
            for (c, h) in counts.iter_mut().zip(&r.h) {
                *c += h;
            }
            match r.class {
                ReactionClass::Continuous => {
                    for (mi, h) in m.iter_mut().zip(&r.h) {
                        *mi += *h as f64 / nf;
                    }
                }
                ReactionClass::Discrete => {
                    for (gi, h) in gamma.iter_mut().zip(&r.h) {
                        *gi += *h as f64 / nf;
                    }
                    for (v, d) in yn.iter_mut().zip(&r.e) {
                        *v += d;
                    }
                }
            }
            reaction_counts[e.reaction] += 1;
            ev += 1;
            changed = true;
        }
        if changed {
            xn = crate::path::scaled_position(jump.initial.x(), &counts, nn);
            net.drift_into(&xn, &yn, &mut f_jump);
            for (k, r) in rates_jump.iter_mut().enumerate() {
                *r = net.rate_value(k, &xn, &yn).max(0.0);
            }
        }
        flow.x_into(a, &mut xa);
        let ya = flow.y_at(a).to_vec();
        sup_xabs = xa.iter().fold(sup_xabs, |acc, v| acc.max(v.abs()));
        track(&xn, &yn, &xa, &ya, &m, &gamma);

        if next_grid < grid_times.len() && grid_times[next_grid] <= a {
            if let Some(d) = dec.as_mut() {
                let t = grid_times[next_grid];
                d.times.push(t);
                d.v.push((0..n).map(|i| sqrt_n * (xn[i] - xa[i])).collect());
                d.u.push(m.iter().map(|v| sqrt_n * v).collect());
                d.sqrt_n_gamma.push(gamma.iter().map(|v| sqrt_n * v).collect());
                d.zeta.push(zeta.clone());
                d.xi.push(xi.clone());
                d.drift_integral.push(drift.clone());
                let mut q = vec![0.0; n * n];
                for (k, r) in reactions.iter().enumerate() {
                    if r.class != ReactionClass::Continuous || reaction_counts[k] == 0 {
                        continue;
                    }
                    for i in 0..n {
                        for j in 0..n {
                            q[i * n + j] +=
                                (r.h[i] * r.h[j]) as f64 * reaction_counts[k] as f64 / nf;
                        }
                    }
                }
                d.qv.push(q);
                d.quad_error.push(quad_err);
                let rtol = full.unwrap_or(DEFAULT_RTOL);
                d.integrator_floor
                    .push(10.0 * sqrt_n * rtol * (1.0 + sup_xabs) * (1.0 + t));
            }
            next_grid += 1;
        }

        let Some(&b) = mesh.get(idx + 1) else { break };
        let h = b - a;
        // Z^N, Y constant on [a, b); X smooth
        flow.x_into(b, &mut xb);
        for i in 0..n {
            m[i] -= h * f_jump[i];
        }
        for k in 0..nr {
            jump_int[k] += h * rates_jump[k];
            let ra = net.rate_value(k, &xa, &ya).max(0.0);
            let rb = net.rate_value(k, &xb, &ya).max(0.0);
            pdmp_int[k] += 0.5 * h * (ra + rb);
        }
        // left limits at b
        track(&xn, &yn, &xb, &ya, &m, &gamma);

        if dec.is_some() {
            let mid = 0.5 * (a + b);
            flow.x_into(mid, &mut xm);
            let ia = integrands(net, sqrt_n, &xn, &yn, &f_jump, &xa, &ya, &mut scratch);
            let ib = integrands(net, sqrt_n, &xn, &yn, &f_jump, &xb, &ya, &mut scratch);
            let im = integrands(net, sqrt_n, &xn, &yn, &f_jump, &xm, &ya, &mut scratch);
            let mut err: f64 = 0.0;
            let acc = |total: &mut [f64], fa: &[f64], fb: &[f64], fm: &[f64]| {
                let mut e: f64 = 0.0;
                for i in 0..n {
                    let trap = 0.5 * h * (fa[i] + fb[i]);
                    total[i] += trap;
                    e = e.max((trap - h * fm[i]).abs());
                }
                e
            };
            err += acc(&mut drift, &ia.drift, &ib.drift, &im.drift);
            err += acc(&mut zeta, &ia.zeta, &ib.zeta, &im.zeta);
            err += acc(&mut xi, &ia.xi, &ib.xi, &im.xi);
            let mut sink = vec![0.0; n];
            err += acc(&mut sink, &ia.limit, &ib.limit, &im.limit);
            quad_err += err;
        }
    }
    // remaining grid rows cannot occur: every grid time is a mesh point
    debug_assert!(next_grid == grid_times.len());

    let y_equal = {
        let a: Vec<_> = jump.discrete_events().map(|e| (e.reaction, e.point)).collect();
        let b: Vec<_> = pdmp.discrete_events().map(|e| (e.reaction, e.point)).collect();
        a == b
    };
    let x_end = pdmp.grid.last().map(|g| g.state.x().to_vec()).unwrap_or_default();
    let xn_end = jump.grid.last().map(|g| g.state.x().to_vec()).unwrap_or_default();
    let metrics = PathwiseMetrics {
        sup_error: sup_err,
        sup_x_error: sup_x,
        sup_y_error: sup_y,
        sup_martingale: sup_m,
        sup_gamma: sup_g,
        y_equal,
        jump_rate_integrals: jump_int,
        pdmp_rate_integrals: pdmp_int,
        jump_counts: jump.jump_counts.clone(),
        v_final: (0..n).map(|i| sqrt_n * (xn_end[i] - x_end[i])).collect(),
    };
    (metrics, dec)
}

/// Solution of a linear SDE `dV = A(t) V dt + σ(t) dB` on a uniform grid.
#[derive(Debug, Clone)]
pub struct SdePath {
    pub times: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    /// Brownian increments per step, one entry per noise channel.
    pub increments: Vec<Vec<f64>>,
    /// `θ_r(t) = ∫₀ᵗ λ_r(Z) ds` per grid time, one entry per continuous
    /// reaction; empty for generic coefficients.
    pub clocks: Vec<Vec<f64>>,
}

impl SdePath {
    pub fn final_value(&self) -> &[f64] {
        self.v.last().expect("non-empty path")
    }
}

/// Generator of the Brownian drivers for `(seed, replica)`.
pub fn sde_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(&[seed, replica, fnv1a(b"sde")]))
}

/// Euler–Maruyama for `dV = A(t) V dt + σ(t) dB`.
///
/// `coeffs(t, a, sigma)` fills the row-major `n × n` matrix `A(t)` and the
/// `n × m` matrix `σ(t)`.
pub fn euler_maruyama<R: rand::Rng>(
    n: usize,
    m: usize,
    v0: &[f64],
    horizon: f64,
    steps: usize,
    rng: &mut R,
    mut coeffs: impl FnMut(f64, &mut [f64], &mut [f64]) -> Result<(), SimError>,
) -> Result<SdePath, SimError> {
    if v0.len() != n || v0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::InvalidArgument(
            "initial value must be a finite vector of length n".into(),
        ));
    }
    if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::InvalidArgument(
            "need a positive horizon and at least one step".into(),
        ));
    }
    let dt = horizon / steps as f64;
    let sq = dt.sqrt();
    let mut a = vec![0.0; n * n];
    let mut sigma = vec![0.0; n * m];
    let mut v = v0.to_vec();
    let mut path = SdePath {
        times: Vec::with_capacity(steps + 1),
        v: Vec::with_capacity(steps + 1),
        increments: Vec::with_capacity(steps),
        clocks: Vec::new(),
    };
    path.times.push(0.0);
    path.v.push(v.clone());
    let mut next = vec![0.0; n];
    for k in 0..steps {
        let t = k as f64 * dt;
        coeffs(t, &mut a, &mut sigma)?;
        let db: Vec<f64> = (0..m)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sq * z
            })
            .collect();
        for i in 0..n {
            let mut acc = v[i];
            for j in 0..n {
                acc += a[i * n + j] * v[j] * dt;
            }
            for c in 0..m {
                acc += sigma[i * m + c] * db[c];
            }
            next[i] = acc;
        }
        std::mem::swap(&mut v, &mut next);
        let norm = norm2(&v);
        let t1 = if k + 1 == steps { horizon } else { (k + 1) as f64 * dt };
        if !(norm <= DIVERGENCE_LIMIT) {
            return Err(SimError::Divergence { time: t1, norm });
        }
        path.times.push(t1);
        path.v.push(v.clone());
        path.increments.push(db);
    }
    Ok(path)
}

/// Euler–Maruyama for the limit SDE `dV = σ(Z) dB + ∇ₓF(Z) V dt` along a
/// PDMP path, with `σ_{i,r} = h_r^i √λ_r(Z)` and one Brownian motion per
/// continuous reaction.
pub fn simulate_limit_sde(
    net: &ReactionNetwork,
    zpath: &PathRecord,
    v0: &[f64],
    steps: usize,
    seed: u64,
    replica: u64,
) -> Result<SdePath, SimError> {
    if zpath.flow.is_empty() {
        return Err(SimError::InvalidArgument("SDE needs a PDMP path".into()));
    }
    let n = net.n();
    let cont: Vec<usize> = net.continuous_reactions().to_vec();
    let m = cont.len();
    let horizon = zpath.horizon;
    let mut rng = sde_rng(seed, replica);
    let mut flow = FlowCursor::new(zpath);
    let mut x = vec![0.0; n];
    let mut lam_hist: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut sample = |t: f64, x: &mut [f64], lam_hist: &mut Vec<Vec<f64>>| {
        flow.x_into(t, x);
        let y = flow.y_at(t);
        let lam: Vec<f64> = cont.iter().map(|&k| net.rate_value(k, x, y)).collect();
        lam_hist.push(lam);
        y
    };
    let reactions = net.reactions();
    let mut path = euler_maruyama(n, m, v0, horizon, steps, &mut rng, |t, a, sigma| {
        let y = sample(t, &mut x, &mut lam_hist);
        net.jacobian_into(&x, y, a);
        let lam = lam_hist.last().unwrap();
        for (c, &k) in cont.iter().enumerate() {
            if lam[c].is_nan() || lam[c] < 0.0 {
                return Err(SimError::InvalidRate {
                    reaction: reactions[k].id.clone(),
                    time: t,
                });
            }
            let root = lam[c].sqrt();
            for i in 0..n {
                sigma[i * m + c] = reactions[k].h[i] as f64 * root;
            }
        }
        Ok(())
    })?;
    sample(horizon, &mut x, &mut lam_hist);
    let dt = horizon / steps as f64;
    let mut theta = vec![0.0; m];
    path.clocks.push(theta.clone());
    for w in lam_hist.windows(2) {
        for c in 0..m {
            theta[c] += 0.5 * dt * (w[0][c] + w[1][c]);
        }
        path.clocks.push(theta.clone());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::network::parse_network;
    use rand::SeedableRng;

    fn telegraph_pair(n: u64, seed: u64, replica: u64) -> (ReactionNetwork, CoupledPair) {
        let net = models::telegraph();
        let z0 = HybridState::new(vec![1.0], vec![1]).unwrap();
        let pair =
            coupled_pair(&net, n, &z0, &z0, 5.0, seed, replica, &CouplingOptions::default())
                .unwrap();
        (net, pair)
    }

    #[test]
    fn zero_rates_give_zero_decomposition() {
        let net = parse_network(
            "species continuous: X\nspecies discrete: G\n\
             reaction a class=C h=[+1] rate = 0\nreaction b class=D h=[+1] e=[+1] rate = 0\n",
        )
        .unwrap();
        let z0 = HybridState::new(vec![0.3], vec![1]).unwrap();
        let dec =
            coupled_fluctuation(&net, 100, &z0, &z0, 2.0, 1, 0, &CouplingOptions::default())
                .unwrap();
        for g in 0..dec.times.len() {
            for block in [&dec.v, &dec.u, &dec.sqrt_n_gamma, &dec.zeta, &dec.xi, &dec.drift_integral]
            {
                assert_eq!(block[g], vec![0.0]);
            }
            assert_eq!(dec.qv[g], vec![0.0]);
        }
        assert_eq!(dec.metrics.sup_error, 0.0);
        assert!(dec.metrics.y_equal);
    }

    #[test]
    fn identity_holds_on_the_grid() {
        for (net, n) in [
            (models::telegraph(), 256u64),
            (models::telegraph_feedback(), 64),
            (models::telegraph_burst(), 1024),
        ] {
            let z0 = HybridState::new(vec![1.0], vec![1]).unwrap();
            for replica in 0..4 {
                let dec = coupled_fluctuation(
                    &net,
                    n,
                    &z0,
                    &z0,
                    3.0,
                    17,
                    replica,
                    &CouplingOptions::default(),
                )
                .unwrap();
                for g in 0..dec.times.len() {
                    assert!(
                        dec.residual(g) <= dec.tolerance(g),
                        "t = {}: residual {} > {}",
                        dec.times[g],
                        dec.residual(g),
                        dec.tolerance(g)
                    );
                }
            }
        }
    }

    #[test]
    fn continuous_only_network_has_no_discrete_terms() {
        let net = parse_network(
            "species continuous: X\nparam k = 1.5\n\
             reaction birth class=C h=[+1] rate = k\nreaction death class=C h=[-1] rate = X\n",
        )
        .unwrap();
        let z0 = HybridState::new(vec![0.5], vec![]).unwrap();
        let dec =
            coupled_fluctuation(&net, 300, &z0, &z0, 2.0, 3, 0, &CouplingOptions::default())
                .unwrap();
        assert!(dec.xi.iter().all(|v| v[0] == 0.0));
        assert!(dec.sqrt_n_gamma.iter().all(|v| v[0] == 0.0));
        assert!(dec.metrics.y_equal);
    }

    #[test]
    fn quadratic_variation_counts_points() {
        let (net, pair) = telegraph_pair(128, 4, 2);
        let dec = decompose(&net, &pair, DEFAULT_RTOL);
        assert_eq!(quadratic_variation(&dec, 0, 0, 0.0).unwrap(), 0.0);
        let t_end = *dec.times.last().unwrap();
        let expected = pair
            .jump
            .jump_counts
            .iter()
            .enumerate()
            .filter(|(k, _)| !pair.jump.is_discrete(*k))
            .map(|(_, c)| *c as f64)
            .sum::<f64>()
            / 128.0;
        assert_eq!(quadratic_variation(&dec, 0, 0, t_end).unwrap(), expected);
        assert!(quadratic_variation(&dec, 1, 0, t_end).is_err());
        assert!(quadratic_variation(&dec, 0, 0, 0.123_456).is_err());
        for w in dec.qv.windows(2) {
            assert!(w[0][0] <= w[1][0] && w[0][0] >= 0.0);
        }
    }

    #[test]
    fn quadratic_variation_is_symmetric() {
        let net = parse_network(
            "species continuous: A B\n\
             reaction mk class=C h=[+1, 0] rate = 1\n\
             reaction conv class=C h=[-1, +1] rate = A\n\
             reaction out class=C h=[0, -1] rate = 0.5*B\n",
        )
        .unwrap();
        let z0 = HybridState::new(vec![1.0, 1.0], vec![]).unwrap();
        let dec =
            coupled_fluctuation(&net, 200, &z0, &z0, 1.0, 8, 1, &CouplingOptions::default())
                .unwrap();
        let t = *dec.times.last().unwrap();
        assert_eq!(
            quadratic_variation(&dec, 0, 1, t).unwrap(),
            quadratic_variation(&dec, 1, 0, t).unwrap()
        );
        assert!(quadratic_variation(&dec, 0, 1, t).unwrap() < 0.0);
        for g in 0..dec.times.len() {
            assert!(dec.residual(g) <= dec.tolerance(g));
        }
    }

    #[test]
    fn pure_birth_compensated_noise() {
        // U^N_T = (P - N T)/√N with P ~ Poisson(N T): variance T
        let net = models::pure_birth();
        let z0 = HybridState::new(vec![0.0], vec![]).unwrap();
        let n = 400u64;
        let horizon = 1.5;
        let opts = CouplingOptions {
            grid: 4,
            ..CouplingOptions::default()
        };
        let (us, qvs): (Vec<f64>, Vec<f64>) = (0..10_000u64)
            .map(|r| {
                let dec = coupled_fluctuation(&net, n, &z0, &z0, horizon, 99, r, &opts).unwrap();
                let last = dec.times.len() - 1;
                let count = dec.metrics.jump_counts[0] as f64;
                let u = dec.u[last][0];
                assert!((u - (count - n as f64 * horizon) / (n as f64).sqrt()).abs() < 1e-9);
                (u, dec.qv[last][0])
            })
            .unzip();
        let m = us.len() as f64;
        let mean = us.iter().sum::<f64>() / m;
        let var = us.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!((var / horizon - 1.0).abs() < 0.05, "variance {var}");
        let qmean = qvs.iter().sum::<f64>() / m;
        let qse = (horizon / n as f64 / m).sqrt();
        assert!((qmean - horizon).abs() < 4.0 * qse, "{qmean}");
    }

    #[test]
    fn metrics_match_decomposition() {
        let (net, pair) = telegraph_pair(256, 12, 0);
        let metrics = pathwise_metrics(&net, &pair);
        let dec = decompose(&net, &pair, DEFAULT_RTOL);
        assert_eq!(metrics, dec.metrics);
        assert!(metrics.y_equal);
        assert_eq!(metrics.sup_gamma, 0.0);
        assert_eq!(metrics.sup_y_error, 0.0);
        let last = dec.times.len() - 1;
        assert!((metrics.v_final[0] - dec.v[last][0]).abs() < 1e-9);
        // grid samples bound the mesh supremum from below
        let grid_sup = pair
            .jump
            .grid
            .iter()
            .zip(&pair.pdmp.grid)
            .map(|(a, b)| a.state.distance(&b.state))
            .fold(0.0, f64::max);
        assert!(metrics.sup_error >= grid_sup - 1e-12);
        // compensator of the jump path is exact: U^N_T from counts and integrals
        let u_direct: f64 = net
            .continuous_reactions()
            .iter()
            .map(|&k| {
                net.reactions()[k].h[0] as f64
                    * (metrics.jump_counts[k] as f64 - 256.0 * metrics.jump_rate_integrals[k])
            })
            .sum::<f64>()
            / 16.0;
        assert!((u_direct - dec.u[last][0]).abs() < 1e-9);
    }

    #[test]
    fn frozen_sde_without_noise_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = euler_maruyama(2, 1, &[0.5, -1.0], 1.0, 64, &mut rng, |_, a, s| {
            a.fill(0.0);
            s.fill(0.0);
            Ok(())
        })
        .unwrap();
        assert!(p.v.iter().all(|v| v == &[0.5, -1.0]));
    }

    #[test]
    fn linear_decay_has_first_order_error() {
        let v_end = |steps: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            euler_maruyama(1, 1, &[1.0], 2.0, steps, &mut rng, |_, a, s| {
                a[0] = -1.0;
                s[0] = 0.0;
                Ok(())
            })
            .unwrap()
            .final_value()[0]
        };
        let exact = f64::exp(-2.0);
        let e1 = (v_end(256) - exact).abs();
        let e2 = (v_end(512) - exact).abs();
        assert!(e1 < 2.0 * 2.0 / 256.0 * exact * 2.0);
        let order = (e1 / e2).log2();
        assert!((0.8..=1.2).contains(&order), "{order}");
    }

    #[test]
    fn constant_noise_has_ito_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 1.5;
        let vals: Vec<f64> = (0..10_000)
            .map(|_| {
                euler_maruyama(1, 2, &[0.0], t, 16, &mut rng, |_, a, s| {
                    a[0] = 0.0;
                    s[0] = 2f64.sqrt();
                    s[1] = -1.0;
                    Ok(())
                })
                .unwrap()
                .final_value()[0]
            })
            .collect();
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!((var / (3.0 * t) - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn divergence_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = euler_maruyama(1, 1, &[1.0], 10.0, 10, &mut rng, |_, a, s| {
            a[0] = 1e3;
            s[0] = 0.0;
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, SimError::Divergence { .. }));
    }

    #[test]
    fn limit_sde_clocks_and_start() {
        let net = models::telegraph();
        let z0 = HybridState::new(vec![1.0], vec![1]).unwrap();
        let zp = crate::pdmp_sim::simulate_pdmp(&net, &z0, 2.0, 3, 1 << 32).unwrap();
        let p = simulate_limit_sde(&net, &zp, &[0.25], 512, 3, 0).unwrap();
        assert_eq!(p.v[0], vec![0.25]);
        assert_eq!(p.times.len(), 513);
        assert_eq!(p.clocks.len(), 513);
        assert_eq!(p.increments.len(), 512);
        for w in p.clocks.windows(2) {
            assert!(w[0].iter().zip(&w[1]).all(|(a, b)| a <= b));
        }
        let again = simulate_limit_sde(&net, &zp, &[0.25], 512, 3, 0).unwrap();
        assert_eq!(p.v, again.v);
        // θ for prod is 2·(time spent on)
        let on: f64 = {
            let mut acc = 0.0;
            let mut last = 0.0;
            let mut g = 1;
            for ev in zp.discrete_events() {
                if g == 1 {
                    acc += ev.time - last;
                }
                g += net.reactions()[ev.reaction].e[0];
                last = ev.time;
            }
            if g == 1 {
                acc += 2.0 - last;
            }
            acc
        };
        let prod = net.reaction_index("prod").unwrap();
        let c = net.continuous_reactions().iter().position(|&k| k == prod).unwrap();
        assert!((p.clocks.last().unwrap()[c] - 2.0 * on).abs() < 2.0 * 2.0 / 512.0 * 2.0);
    }
}
