//! Polynomial rate expressions with an optional smooth cutoff factor.
//!
//! Rates are trees over continuous species `x_i`, discrete species `y_j`,
//! named parameters and constants. Powers take nonnegative integer
//! exponents only, so every expression is a polynomial in the state apart
//! from the cutoff node introduced by rate truncation.

use std::fmt::Write as _;

/// A symbol referenced by a rate expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    /// Continuous species by index.
    Continuous(usize),
    /// Discrete species by index.
    Discrete(usize),
    /// Named parameter by index into the network's parameter table.
    Param(usize),
}

/// Expression tree for a reaction rate.
#[derive(Debug, Clone, PartialEq)]
pub enum RateExpr {
    Const(f64),
    Sym(Symbol),
    Sum(Vec<RateExpr>),
    Product(Vec<RateExpr>),
    Pow(Box<RateExpr>, u32),
    /// `θ(|z| / scale)` differentiated with respect to the continuous
    /// coordinates listed in `wrt` (empty for the cutoff itself).
    Cutoff { scale: f64, wrt: Vec<usize> },
}

/// Smooth cutoff profile `θ(u)`: one on `[0, 1]`, zero on `[2, ∞)` and the
/// quintic smoothstep `1 - (10w³ - 15w⁴ + 6w⁵)` with `w = u - 1` in between.
/// The profile is C² with vanishing first and second derivatives at both
/// junctions.
pub fn cutoff_profile(u: f64) -> f64 {
    if u <= 1.0 {
        1.0
    } else if u >= 2.0 {
        0.0
    } else {
        let w = u - 1.0;
        1.0 - w * w * w * (10.0 - 15.0 * w + 6.0 * w * w)
    }
}

fn cutoff_profile_d1(u: f64) -> f64 {
    if u <= 1.0 || u >= 2.0 {
        0.0
    } else {
        let w = u - 1.0;
        -30.0 * w * w * (1.0 - w) * (1.0 - w)
    }
}

fn cutoff_profile_d2(u: f64) -> f64 {
    if u <= 1.0 || u >= 2.0 {
        0.0
    } else {
        let w = u - 1.0;
        -60.0 * w * (1.0 - w) * (1.0 - 2.0 * w)
    }
}

/// The norm `|z| = |x| + |y|` used by the cutoff (Euclidean on each scale).
pub fn state_norm(x: &[f64], y: &[i64]) -> f64 {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    nx + ny
}

fn eval_cutoff(scale: f64, wrt: &[usize], x: &[f64], y: &[i64]) -> f64 {
    let u = state_norm(x, y) / scale;
    match wrt {
        [] => cutoff_profile(u),
        [i] => {
            let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rho == 0.0 {
                return 0.0;
            }
            cutoff_profile_d1(u) / scale * x[*i] / rho
        }
        [i, j] => {
            let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rho == 0.0 {
                return 0.0;
            }
            let (xi, xj) = (x[*i], x[*j]);
            let delta = if i == j { 1.0 } else { 0.0 };
            cutoff_profile_d2(u) / (scale * scale) * (xi / rho) * (xj / rho)
                + cutoff_profile_d1(u) / scale * (delta / rho - xi * xj / (rho * rho * rho))
        }
        // Orders above two fall back to a central difference of the
        // next-lower derivative.
        [rest @ .., last] => {
            let h = 1e-6 * (1.0 + x[*last].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[*last] += h;
            xm[*last] -= h;
            (eval_cutoff(scale, rest, &xp, y) - eval_cutoff(scale, rest, &xm, y)) / (2.0 * h)
        }
    }
}

impl RateExpr {
    pub fn constant(v: f64) -> Self {
        RateExpr::Const(v)
    }

    pub fn symbol(s: Symbol) -> Self {
        RateExpr::Sym(s)
    }

    /// Builds a simplified sum: nested sums are flattened, constants folded
    /// and zero terms dropped.
    pub fn sum(terms: Vec<RateExpr>) -> Self {
        let mut out = Vec::with_capacity(terms.len());
        let mut c = 0.0;
        for t in terms {
            match t {
                RateExpr::Const(v) => c += v,
                RateExpr::Sum(inner) => {
                    for u in inner {
                        match u {
                            RateExpr::Const(v) => c += v,
                            other => out.push(other),
                        }
                    }
                }
                other => out.push(other),
            }
        }
        if c != 0.0 {
            out.push(RateExpr::Const(c));
        }
        match out.len() {
            0 => RateExpr::Const(0.0),
            1 => out.pop().unwrap(),
            _ => RateExpr::Sum(out),
        }
    }

    /// Builds a simplified product: nested products are flattened, constants
    /// folded to a single leading factor, and a zero factor collapses the
    /// whole product.
    pub fn product(factors: Vec<RateExpr>) -> Self {
        let mut out = Vec::with_capacity(factors.len());
        let mut c = 1.0;
        for f in factors {
            match f {
                RateExpr::Const(v) => c *= v,
                RateExpr::Product(inner) => {
                    for g in inner {
                        match g {
                            RateExpr::Const(v) => c *= v,
                            other => out.push(other),
                        }
                    }
                }
                other => out.push(other),
            }
        }
        if c == 0.0 {
            return RateExpr::Const(0.0);
        }
        if c != 1.0 {
            out.insert(0, RateExpr::Const(c));
        }
        match out.len() {
            0 => RateExpr::Const(1.0),
            1 => out.pop().unwrap(),
            _ => RateExpr::Product(out),
        }
    }

    pub fn pow(base: RateExpr, exp: u32) -> Self {
        match (base, exp) {
            (_, 0) => RateExpr::Const(1.0),
            (b, 1) => b,
            (RateExpr::Const(v), e) => RateExpr::Const(v.powi(e as i32)),
            (b, e) => RateExpr::Pow(Box::new(b), e),
        }
    }

    /// Evaluates the expression at `(x, y)` with the given parameter values.
    pub fn eval(&self, x: &[f64], y: &[i64], params: &[f64]) -> f64 {
        match self {
            RateExpr::Const(v) => *v,
            RateExpr::Sym(Symbol::Continuous(i)) => x[*i],
            RateExpr::Sym(Symbol::Discrete(j)) => y[*j] as f64,
            RateExpr::Sym(Symbol::Param(p)) => params[*p],
            RateExpr::Sum(ts) => ts.iter().map(|t| t.eval(x, y, params)).sum(),
            RateExpr::Product(fs) => fs.iter().map(|f| f.eval(x, y, params)).product(),
            RateExpr::Pow(b, e) => b.eval(x, y, params).powi(*e as i32),
            RateExpr::Cutoff { scale, wrt } => eval_cutoff(*scale, wrt, x, y),
        }
    }

    /// Symbolic partial derivative with respect to continuous species `var`.
    pub fn derivative(&self, var: usize) -> RateExpr {
        match self {
            RateExpr::Const(_) => RateExpr::Const(0.0),
            RateExpr::Sym(Symbol::Continuous(i)) if *i == var => RateExpr::Const(1.0),
            RateExpr::Sym(_) => RateExpr::Const(0.0),
            RateExpr::Sum(ts) => RateExpr::sum(ts.iter().map(|t| t.derivative(var)).collect()),
            RateExpr::Product(fs) => {
                let mut terms = Vec::new();
                for (k, f) in fs.iter().enumerate() {
                    let df = f.derivative(var);
                    if df == RateExpr::Const(0.0) {
                        continue;
                    }
                    let mut factors: Vec<RateExpr> = Vec::with_capacity(fs.len());
                    for (m, g) in fs.iter().enumerate() {
                        factors.push(if m == k { df.clone() } else { g.clone() });
                    }
                    terms.push(RateExpr::product(factors));
                }
                RateExpr::sum(terms)
            }
            RateExpr::Pow(b, e) => {
                let db = b.derivative(var);
                if db == RateExpr::Const(0.0) {
                    return RateExpr::Const(0.0);
                }
                RateExpr::product(vec![
                    RateExpr::Const(*e as f64),
                    RateExpr::pow((**b).clone(), e - 1),
                    db,
                ])
            }
            RateExpr::Cutoff { scale, wrt } => {
                let mut wrt = wrt.clone();
                wrt.push(var);
                RateExpr::Cutoff { scale: *scale, wrt }
            }
        }
    }

    /// True when the expression mentions continuous species `var`
    /// (the cutoff depends on every coordinate).
    pub fn depends_on_continuous(&self, var: usize) -> bool {
        match self {
            RateExpr::Const(_) => false,
            RateExpr::Sym(Symbol::Continuous(i)) => *i == var,
            RateExpr::Sym(_) => false,
            RateExpr::Sum(ts) | RateExpr::Product(ts) => {
                ts.iter().any(|t| t.depends_on_continuous(var))
            }
            RateExpr::Pow(b, _) => b.depends_on_continuous(var),
            RateExpr::Cutoff { .. } => true,
        }
    }

    /// True when the expression depends on any continuous coordinate.
    pub fn depends_on_any_continuous(&self, n: usize) -> bool {
        (0..n).any(|i| self.depends_on_continuous(i))
    }

    pub(crate) fn visit_symbols(&self, f: &mut impl FnMut(Symbol)) {
        match self {
            RateExpr::Sym(s) => f(*s),
            RateExpr::Sum(ts) | RateExpr::Product(ts) => {
                for t in ts {
                    t.visit_symbols(f);
                }
            }
            RateExpr::Pow(b, _) => b.visit_symbols(f),
            RateExpr::Const(_) | RateExpr::Cutoff { .. } => {}
        }
    }

    /// Renders the expression in the network description syntax.
    pub fn render(&self, names: &SymbolNames<'_>) -> String {
        let mut out = String::new();
        self.render_into(names, 0, &mut out);
        out
    }

    // Precedence levels: 0 = sum context, 1 = product factor, 2 = power base.
    fn render_into(&self, names: &SymbolNames<'_>, prec: u8, out: &mut String) {
        match self {
            RateExpr::Const(v) => {
                if *v < 0.0 && prec > 0 {
                    let _ = write!(out, "({v:?})");
                } else {
                    let _ = write!(out, "{v:?}");
                }
            }
            RateExpr::Sym(s) => out.push_str(names.name(*s)),
            RateExpr::Sum(ts) => {
                if prec > 0 {
                    out.push('(');
                }
                for (k, t) in ts.iter().enumerate() {
                    if k > 0 {
                        out.push_str(" + ");
                    }
                    t.render_into(names, 0, out);
                }
                if prec > 0 {
                    out.push(')');
                }
            }
            RateExpr::Product(fs) => {
                if prec > 1 {
                    out.push('(');
                }
                for (k, f) in fs.iter().enumerate() {
                    if k > 0 {
                        out.push('*');
                    }
                    f.render_into(names, 1, out);
                }
                if prec > 1 {
                    out.push(')');
                }
            }
            RateExpr::Pow(b, e) => {
                b.render_into(names, 2, out);
                let _ = write!(out, "^{e}");
            }
            RateExpr::Cutoff { scale, wrt } => {
                let _ = write!(out, "cutoff({scale:?}");
                for i in wrt {
                    let _ = write!(out, ", {}", names.name(Symbol::Continuous(*i)));
                }
                out.push(')');
            }
        }
    }
}

/// Name tables used when rendering expressions.
pub struct SymbolNames<'a> {
    pub continuous: &'a [String],
    pub discrete: &'a [String],
    pub params: &'a [String],
}

impl SymbolNames<'_> {
    fn name(&self, s: Symbol) -> &str {
        match s {
            Symbol::Continuous(i) => &self.continuous[i],
            Symbol::Discrete(j) => &self.discrete[j],
            Symbol::Param(p) => &self.params[p],
        }
    }
}
