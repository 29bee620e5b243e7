//! Multiscale reaction networks.
//!
//! A network has `n` continuous species (concentrations, scaled by `1/N` in
//! the jump process) and `d` discrete species (counts). Continuous-class
//! reactions change only the continuous species and fire at rate
//! `N·λ_r(x, y)`; discrete-class reactions fire at rate `μ_r(x, y)` and may
//! change both scales. The drift of the limiting flow is
//! `F(x, y) = Σ_{r continuous} h_r λ_r(x, y)`.

mod expr;
mod parse;

pub use expr::{cutoff_profile, state_norm, RateExpr, Symbol, SymbolNames};
pub use parse::parse_network;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::fmt;

/// Number of random states drawn when checking rates over the sampling box.
pub const VALIDATION_SAMPLES: usize = 1000;

const VALIDATION_SEED: u64 = 0x6d73_676e_7661_6c31;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("undeclared symbol `{name}` at line {line}, column {column}")]
    UndeclaredSymbol {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("reaction `{reaction}`: {message}")]
    Stoichiometry { reaction: String, message: String },
    #[error("reaction `{reaction}` has rate {value} at x={x:?}, y={y:?}")]
    NegativeRate {
        reaction: String,
        value: f64,
        x: Vec<f64>,
        y: Vec<i64>,
    },
    #[error("reaction `{reaction}` exceeds declared bound {bound} (rate {value})")]
    BoundExceeded {
        reaction: String,
        bound: f64,
        value: f64,
    },
    #[error("unknown reaction `{0}`")]
    UnknownReaction(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// State `z = (x, y)` of the hybrid process.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    x: Vec<f64>,
    y: Vec<i64>,
}

impl HybridState {
    /// Builds a state, rejecting negative or non-finite components.
    pub fn new(x: Vec<f64>, y: Vec<i64>) -> Result<Self, NetworkError> {
        if let Some(v) = x.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(NetworkError::InvalidState(format!(
                "continuous component {v} is not a finite nonnegative number"
            )));
        }
        if let Some(v) = y.iter().find(|v| **v < 0) {
            return Err(NetworkError::InvalidState(format!(
                "discrete component {v} is negative"
            )));
        }
        Ok(HybridState { x, y })
    }

    /// State recorded by a simulator; may leave the nonnegative orthant
    /// after a boundary jump.
    pub(crate) fn raw(x: Vec<f64>, y: Vec<i64>) -> Self {
        HybridState { x, y }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[i64] {
        &self.y
    }

    /// `|z| = |x| + |y|`.
    pub fn norm(&self) -> f64 {
        state_norm(&self.x, &self.y)
    }

    /// `|z - w|` in the same norm.
    pub fn distance(&self, other: &HybridState) -> f64 {
        distance_parts(&self.x, &self.y, &other.x, &other.y)
    }
}

pub(crate) fn distance_parts(x1: &[f64], y1: &[i64], x2: &[f64], y2: &[i64]) -> f64 {
    let dx = x1
        .iter()
        .zip(x2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let dy = y1
        .iter()
        .zip(y2)
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    dx + dy
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReactionClass {
    /// Fast reaction on the concentration scale (rate `N·λ_r`).
    Continuous,
    /// Slow reaction touching the discrete scale (rate `μ_r`).
    Discrete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub id: String,
    pub class: ReactionClass,
    /// Continuous stoichiometry, length `n`.
    pub h: Vec<i64>,
    /// Discrete stoichiometry, length `d`; zero for continuous reactions.
    pub e: Vec<i64>,
    pub rate: RateExpr,
}

/// Inclusive sampling range for one species, used by rate validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeciesRange {
    pub lo: f64,
    pub hi: f64,
}

pub const DEFAULT_CONTINUOUS_RANGE: SpeciesRange = SpeciesRange { lo: 0.0, hi: 10.0 };
pub const DEFAULT_DISCRETE_RANGE: SpeciesRange = SpeciesRange { lo: 0.0, hi: 5.0 };

/// A validated multiscale reaction network. Immutable once built.
#[derive(Debug, Clone)]
pub struct ReactionNetwork {
    continuous: Vec<String>,
    discrete: Vec<String>,
    param_names: Vec<String>,
    param_values: Vec<f64>,
    reactions: Vec<Reaction>,
    rate_bound: Option<f64>,
    ranges: Vec<SpeciesRange>,
    gradients: Vec<Vec<RateExpr>>,
    continuous_ids: Vec<usize>,
    discrete_ids: Vec<usize>,
}

/// Incremental construction of a [`ReactionNetwork`].
#[derive(Debug, Clone, Default)]
pub struct NetworkBuilder {
    continuous: Vec<String>,
    discrete: Vec<String>,
    params: Vec<(String, f64)>,
    reactions: Vec<Reaction>,
    rate_bound: Option<f64>,
    ranges: Vec<(String, SpeciesRange)>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn continuous(mut self, name: &str) -> Self {
        self.continuous.push(name.to_string());
        self
    }

    pub fn discrete(mut self, name: &str) -> Self {
        self.discrete.push(name.to_string());
        self
    }

    pub fn param(mut self, name: &str, value: f64) -> Self {
        self.params.push((name.to_string(), value));
        self
    }

    pub fn rate_bound(mut self, bound: f64) -> Self {
        self.rate_bound = Some(bound);
        self
    }

    pub fn range(mut self, species: &str, lo: f64, hi: f64) -> Self {
        self.ranges.push((species.to_string(), SpeciesRange { lo, hi }));
        self
    }

    /// Adds a reaction whose rate is given in the description syntax.
    pub fn reaction(
        mut self,
        id: &str,
        class: ReactionClass,
        h: Vec<i64>,
        e: Vec<i64>,
        rate: &str,
    ) -> Result<Self, NetworkError> {
        let rate = parse::parse_rate_expr(rate, &self.continuous, &self.discrete, &self.params)?;
        self.reactions.push(Reaction {
            id: id.to_string(),
            class,
            h,
            e,
            rate,
        });
        Ok(self)
    }

    pub fn reaction_expr(mut self, reaction: Reaction) -> Self {
        self.reactions.push(reaction);
        self
    }

    pub fn build(self) -> Result<ReactionNetwork, NetworkError> {
        ReactionNetwork::assemble(self)
    }
}

impl ReactionNetwork {
    pub fn builder() -> NetworkBuilder {
        NetworkBuilder::new()
    }

    fn assemble(b: NetworkBuilder) -> Result<Self, NetworkError> {
        let mut seen = HashSet::new();
        for name in b
            .continuous
            .iter()
            .chain(&b.discrete)
            .chain(b.params.iter().map(|(n, _)| n))
        {
            if !seen.insert(name.as_str()) {
                return Err(NetworkError::DuplicateName(name.clone()));
            }
        }
        let mut ids = HashSet::new();
        for r in &b.reactions {
            if !ids.insert(r.id.as_str()) {
                return Err(NetworkError::DuplicateName(r.id.clone()));
            }
        }
        if let Some(l) = b.rate_bound {
            if !(l.is_finite() && l > 0.0) {
                return Err(NetworkError::InvalidArgument(format!(
                    "rate bound must be a positive real, got {l}"
                )));
            }
        }
        let n = b.continuous.len();
        let d = b.discrete.len();
        let mut ranges: Vec<SpeciesRange> = (0..n)
            .map(|_| DEFAULT_CONTINUOUS_RANGE)
            .chain((0..d).map(|_| DEFAULT_DISCRETE_RANGE))
            .collect();
        for (name, range) in &b.ranges {
            let idx = if let Some(i) = b.continuous.iter().position(|s| s == name) {
                i
            } else if let Some(j) = b.discrete.iter().position(|s| s == name) {
                n + j
            } else {
                return Err(NetworkError::UndeclaredSymbol {
                    name: name.clone(),
                    line: 0,
                    column: 0,
                });
            };
            if !(range.lo.is_finite() && range.hi.is_finite() && 0.0 <= range.lo && range.lo <= range.hi)
            {
                return Err(NetworkError::InvalidArgument(format!(
                    "range of `{name}` must satisfy 0 <= lo <= hi"
                )));
            }
            ranges[idx] = *range;
        }

        let np = b.params.len();
        for r in &b.reactions {
            if r.h.len() != n || r.e.len() != d {
                return Err(NetworkError::Stoichiometry {
                    reaction: r.id.clone(),
                    message: format!(
                        "h has length {} and e has length {}, expected {n} and {d}",
                        r.h.len(),
                        r.e.len()
                    ),
                });
            }
            if r.class == ReactionClass::Continuous && r.e.iter().any(|&v| v != 0) {
                return Err(NetworkError::Stoichiometry {
                    reaction: r.id.clone(),
                    message: "continuous-class reactions must have e = 0".into(),
                });
            }
            if r.h.iter().all(|&v| v == 0) && r.e.iter().all(|&v| v == 0) {
                return Err(NetworkError::Stoichiometry {
                    reaction: r.id.clone(),
                    message: "h and e are both zero".into(),
                });
            }
            let mut bad = None;
            r.rate.visit_symbols(&mut |s| {
                let ok = match s {
                    Symbol::Continuous(i) => i < n,
                    Symbol::Discrete(j) => j < d,
                    Symbol::Param(p) => p < np,
                };
                if !ok && bad.is_none() {
                    bad = Some(s);
                }
            });
            if let Some(s) = bad {
                return Err(NetworkError::UndeclaredSymbol {
                    name: format!("{s:?}"),
                    line: 0,
                    column: 0,
                });
            }
        }

        let gradients = b
            .reactions
            .iter()
            .map(|r| (0..n).map(|i| r.rate.derivative(i)).collect())
            .collect();
        let continuous_ids = (0..b.reactions.len())
            .filter(|&k| b.reactions[k].class == ReactionClass::Continuous)
            .collect();
        let discrete_ids = (0..b.reactions.len())
            .filter(|&k| b.reactions[k].class == ReactionClass::Discrete)
            .collect();
        let (param_names, param_values) = b.params.into_iter().unzip();
        let net = ReactionNetwork {
            continuous: b.continuous,
            discrete: b.discrete,
            param_names,
            param_values,
            reactions: b.reactions,
            rate_bound: b.rate_bound,
            ranges,
            gradients,
            continuous_ids,
            discrete_ids,
        };
        net.check_sampled_rates()?;
        Ok(net)
    }

    /// Draws [`VALIDATION_SAMPLES`] states from the sampling box and checks
    /// every rate is finite, nonnegative and below the declared bound.
    fn check_sampled_rates(&self) -> Result<(), NetworkError> {
        let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
        let n = self.n();
        let mut x = vec![0.0; n];
        let mut y = vec![0i64; self.d()];
        for _ in 0..VALIDATION_SAMPLES {
            for (i, xi) in x.iter_mut().enumerate() {
                let r = self.ranges[i];
                *xi = if r.hi > r.lo { rng.random_range(r.lo..=r.hi) } else { r.lo };
            }
            for (j, yj) in y.iter_mut().enumerate() {
                let r = self.ranges[n + j];
                let (lo, hi) = (r.lo.ceil() as i64, r.hi.floor() as i64);
                *yj = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            }
            for r in &self.reactions {
                let v = r.rate.eval(&x, &y, &self.param_values);
                if !v.is_finite() || v < 0.0 {
                    return Err(NetworkError::NegativeRate {
                        reaction: r.id.clone(),
                        value: v,
                        x: x.clone(),
                        y: y.clone(),
                    });
                }
                if let Some(l) = self.rate_bound {
                    if v > l {
                        return Err(NetworkError::BoundExceeded {
                            reaction: r.id.clone(),
                            bound: l,
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of continuous species.
    pub fn n(&self) -> usize {
        self.continuous.len()
    }

    /// Number of discrete species.
    pub fn d(&self) -> usize {
        self.discrete.len()
    }

    pub fn continuous_species(&self) -> &[String] {
        &self.continuous
    }

    pub fn discrete_species(&self) -> &[String] {
        &self.discrete
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, f64)> {
        self.param_names
            .iter()
            .map(String::as_str)
            .zip(self.param_values.iter().copied())
    }

    pub fn param_values(&self) -> &[f64] {
        &self.param_values
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn rate_bound(&self) -> Option<f64> {
        self.rate_bound
    }

    pub fn ranges(&self) -> &[SpeciesRange] {
        &self.ranges
    }

    /// Indices of continuous-class reactions, in declaration order.
    pub fn continuous_reactions(&self) -> &[usize] {
        &self.continuous_ids
    }

    /// Indices of discrete-class reactions, in declaration order.
    pub fn discrete_reactions(&self) -> &[usize] {
        &self.discrete_ids
    }

    pub fn reaction_index(&self, id: &str) -> Result<usize, NetworkError> {
        self.reactions
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| NetworkError::UnknownReaction(id.to_string()))
    }

    pub fn symbol_names(&self) -> SymbolNames<'_> {
        SymbolNames {
            continuous: &self.continuous,
            discrete: &self.discrete,
            params: &self.param_names,
        }
    }

    fn check_dims(&self, s: &HybridState) -> Result<(), NetworkError> {
        if s.x.len() != self.n() || s.y.len() != self.d() {
            return Err(NetworkError::DimensionMismatch {
                expected: format!("(n={}, d={})", self.n(), self.d()),
                found: format!("(n={}, d={})", s.x.len(), s.y.len()),
            });
        }
        Ok(())
    }

    /// Raw rate value of reaction `k` at `(x, y)`; no dimension checks.
    #[inline]
    pub fn rate_value(&self, k: usize, x: &[f64], y: &[i64]) -> f64 {
        self.reactions[k].rate.eval(x, y, &self.param_values)
    }

    /// `λ_r(s)` or `μ_r(s)` for the reaction with the given id.
    pub fn eval_rate(&self, id: &str, s: &HybridState) -> Result<f64, NetworkError> {
        let k = self.reaction_index(id)?;
        self.check_dims(s)?;
        Ok(self.rate_value(k, &s.x, &s.y))
    }

    /// Writes `F(x, y)` into `out`.
    pub fn drift_into(&self, x: &[f64], y: &[i64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &k in &self.continuous_ids {
            let lam = self.rate_value(k, x, y);
            for (o, &h) in out.iter_mut().zip(&self.reactions[k].h) {
                if h != 0 {
                    *o += h as f64 * lam;
                }
            }
        }
    }

    /// Drift `F(s) = Σ_{r continuous} h_r λ_r(s)`.
    pub fn drift(&self, s: &HybridState) -> Result<Vec<f64>, NetworkError> {
        self.check_dims(s)?;
        let mut out = vec![0.0; self.n()];
        self.drift_into(&s.x, &s.y, &mut out);
        Ok(out)
    }

    /// Symbolic gradient `(∂λ_r/∂x_1, ..., ∂λ_r/∂x_n)`.
    pub fn rate_gradient(&self, id: &str) -> Result<Vec<RateExpr>, NetworkError> {
        let k = self.reaction_index(id)?;
        Ok(self.gradients[k].clone())
    }

    #[cfg(test)]
    pub(crate) fn gradient_exprs(&self, k: usize) -> &[RateExpr] {
        &self.gradients[k]
    }

    /// Writes `∇_x F(x, y)` row-major (`n × n`) into `out`.
    pub fn jacobian_into(&self, x: &[f64], y: &[i64], out: &mut [f64]) {
        let n = self.n();
        out.iter_mut().for_each(|v| *v = 0.0);
        for &k in &self.continuous_ids {
            let h = &self.reactions[k].h;
            for (j, g) in self.gradients[k].iter().enumerate() {
                if let RateExpr::Const(c) = g {
                    if *c == 0.0 {
                        continue;
                    }
                }
                let dj = g.eval(x, y, &self.param_values);
                for i in 0..n {
                    if h[i] != 0 {
                        out[i * n + j] += h[i] as f64 * dj;
                    }
                }
            }
        }
    }

    /// Jacobian of the drift in the continuous coordinates.
    pub fn drift_jacobian(&self, s: &HybridState) -> Result<Vec<Vec<f64>>, NetworkError> {
        self.check_dims(s)?;
        let n = self.n();
        let mut flat = vec![0.0; n * n];
        self.jacobian_into(&s.x, &s.y, &mut flat);
        Ok(flat.chunks(n.max(1)).take(n).map(<[f64]>::to_vec).collect())
    }

    /// `σ` with `σ[i][c] = h_r^i · sqrt(λ_r(s))`, one column per continuous
    /// reaction in declaration order.
    pub fn diffusion_matrix(&self, s: &HybridState) -> Result<Vec<Vec<f64>>, NetworkError> {
        self.check_dims(s)?;
        let mut sigma = vec![vec![0.0; self.continuous_ids.len()]; self.n()];
        for (c, &k) in self.continuous_ids.iter().enumerate() {
            let lam = self.rate_value(k, &s.x, &s.y);
            if !(lam >= 0.0) {
                return Err(NetworkError::NegativeRate {
                    reaction: self.reactions[k].id.clone(),
                    value: lam,
                    x: s.x.clone(),
                    y: s.y.clone(),
                });
            }
            let root = lam.sqrt();
            for (i, row) in sigma.iter_mut().enumerate() {
                row[c] = self.reactions[k].h[i] as f64 * root;
            }
        }
        Ok(sigma)
    }

    /// Multiplies every rate by `θ(|z|/k)` and declares the sampled maximum
    /// over `|z| <= 2k` as the network's rate bound.
    pub fn truncate_rates(&self, k: f64) -> Result<ReactionNetwork, NetworkError> {
        if !(k.is_finite() && k > 0.0) {
            return Err(NetworkError::InvalidArgument(format!(
                "truncation level must be positive, got {k}"
            )));
        }
        let mut b = NetworkBuilder {
            continuous: self.continuous.clone(),
            discrete: self.discrete.clone(),
            params: self
                .param_names
                .iter()
                .cloned()
                .zip(self.param_values.iter().copied())
                .collect(),
            reactions: Vec::with_capacity(self.reactions.len()),
            rate_bound: None,
            ranges: self.named_ranges(),
        };
        for r in &self.reactions {
            let rate = RateExpr::product(vec![
                RateExpr::Cutoff {
                    scale: k,
                    wrt: vec![],
                },
                r.rate.clone(),
            ]);
            b.reactions.push(Reaction {
                rate,
                ..r.clone()
            });
        }
        let mut truncated = ReactionNetwork::assemble(b)?;
        // 1% headroom over the sampled maximum
        let bound = 1.01 * truncated.sample_max_rate_in_ball(2.0 * k);
        truncated.rate_bound = (bound > 0.0).then_some(bound);
        Ok(truncated)
    }

    fn named_ranges(&self) -> Vec<(String, SpeciesRange)> {
        self.continuous
            .iter()
            .chain(&self.discrete)
            .cloned()
            .zip(self.ranges.iter().copied())
            .collect()
    }

    /// Largest rate value found by sampling states with `|z| <= radius`.
    fn sample_max_rate_in_ball(&self, radius: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED ^ radius.to_bits());
        let n = self.n();
        let d = self.d();
        let ymax = radius.floor() as i64;
        let mut x = vec![0.0; n];
        let mut y = vec![0i64; d];
        let mut best: f64 = 0.0;
        let mut accepted = 0;
        let mut tries = 0;
        while accepted < 4 * VALIDATION_SAMPLES && tries < 400 * VALIDATION_SAMPLES {
            tries += 1;
            for xi in x.iter_mut() {
                *xi = rng.random_range(0.0..=radius);
            }
            for yj in y.iter_mut() {
                *yj = rng.random_range(0..=ymax.max(0));
            }
            if state_norm(&x, &y) > radius {
                continue;
            }
            accepted += 1;
            for r in &self.reactions {
                best = best.max(r.rate.eval(&x, &y, &self.param_values));
            }
        }
        best
    }

    /// Renders the network in the description format accepted by
    /// [`parse_network`].
    pub fn serialize(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "species continuous: {}", self.continuous.join(", "));
        let _ = writeln!(out, "species discrete: {}", self.discrete.join(", "));
        for (name, v) in self.param_names.iter().zip(&self.param_values) {
            let _ = writeln!(out, "param {name} = {v:?}");
        }
        if let Some(l) = self.rate_bound {
            let _ = writeln!(out, "bound = {l:?}");
        }
        for (name, r) in self.continuous.iter().chain(&self.discrete).zip(&self.ranges) {
            let _ = writeln!(out, "range {name} = [{:?}, {:?}]", r.lo, r.hi);
        }
        let names = self.symbol_names();
        for r in &self.reactions {
            let class = match r.class {
                ReactionClass::Continuous => "C",
                ReactionClass::Discrete => "D",
            };
            let _ = writeln!(
                out,
                "reaction {} class={class} h=[{}] e=[{}] rate = {}",
                r.id,
                join_ints(&r.h),
                join_ints(&r.e),
                r.rate.render(&names)
            );
        }
        out
    }
}

fn join_ints(v: &[i64]) -> String {
    v.iter()
        .map(|k| if *k > 0 { format!("+{k}") } else { k.to_string() })
        .collect::<Vec<_>>()
        .join(", ")
}

impl fmt::Display for ReactionNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}
