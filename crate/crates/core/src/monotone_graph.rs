//! Maximal monotone graphs on the real line.
//!
//! A graph `β ⊂ ℝ×ℝ` is stored by kind; everything the solver needs is
//! derived from three scalar maps:
//!
//! ```text
//! resolvent  J_λ(x) = (I + λβ)^{-1}(x)
//! yosida     β_λ(x) = (x - J_λ(x)) / λ
//! moreau     j_λ(x) = j(J_λ x) + (λ/2) β_λ(x)²
//! ```
//!
//! All built-in graphs have `dom(β) = ℝ`, `0 ∈ β(0)` and a convex
//! potential `j ≥ 0` with `j(0) = 0`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Absolute/relative step tolerance of the scalar root finder.
pub const RESOLVENT_TOL: f64 = 1e-13;
/// Iteration cap of the scalar root finder.
pub const RESOLVENT_MAX_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("resolvent did not converge for x = {x}, lambda = {lambda} after {iterations} iterations")]
    NoConvergence { x: f64, lambda: f64, iterations: usize },
    #[error("non-finite argument {0}")]
    NonFinite(f64),
}

/// Regularization parameter `λ > 0` of the Yosida approximation.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct YosidaScale(f64);

impl YosidaScale {
    pub fn new(lambda: f64) -> Result<Self, GraphError> {
        if lambda.is_finite() && lambda > 0.0 {
            Ok(Self(lambda))
        } else {
            Err(GraphError::Parameter(format!(
                "lambda must be positive and finite, got {lambda}"
            )))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

/// Closed interval `[lo, hi]`, the value set `β(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    /// Distance from `y` to the interval (zero inside).
    pub fn distance(&self, y: f64) -> f64 {
        if y < self.lo {
            self.lo - y
        } else if y > self.hi {
            y - self.hi
        } else {
            0.0
        }
    }

    pub fn contains(&self, y: f64, tol: f64) -> bool {
        self.distance(y) <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MonotoneGraph {
    /// `β(x) = c·x`, `c ≥ 0`.
    Linear { c: f64 },
    /// `β(x) = |x|^{p-1} sign(x)`, `p ≥ 1`. `p = 1` is the sign graph.
    Power { p: f64 },
    /// `β(x) = x³`.
    Cubic,
    /// `β = ∂|·|`, with `β(0) = [-1, 1]`.
    Sign,
    /// `β(x) = x + a·H(x)` with the jump filled in, `β(0) = [0, a]`.
    Jump { a: f64 },
}

impl MonotoneGraph {
    pub fn linear(c: f64) -> Result<Self, GraphError> {
        if c.is_finite() && c >= 0.0 {
            Ok(Self::Linear { c })
        } else {
            Err(GraphError::Parameter(format!("linear slope must be >= 0, got {c}")))
        }
    }

    pub fn power(p: f64) -> Result<Self, GraphError> {
        if p.is_finite() && p >= 1.0 {
            Ok(Self::Power { p })
        } else {
            Err(GraphError::Parameter(format!("power exponent must be >= 1, got {p}")))
        }
    }

    pub fn jump(a: f64) -> Result<Self, GraphError> {
        if a.is_finite() && a > 0.0 {
            Ok(Self::Jump { a })
        } else {
            Err(GraphError::Parameter(format!("jump height must be > 0, got {a}")))
        }
    }

    /// Convex potential `j` with `∂j = β`, `j ≥ 0`, `j(0) = 0`.
    pub fn potential_at(&self, x: f64) -> f64 {
        match *self {
            Self::Linear { c } => 0.5 * c * x * x,
            Self::Power { p } => x.abs().powf(p) / p,
            Self::Cubic => 0.25 * x * x * x * x,
            Self::Sign => x.abs(),
            Self::Jump { a } => 0.5 * x * x + a * x.max(0.0),
        }
    }

    /// The set `β(x)` as a closed interval.
    pub fn section(&self, x: f64) -> Interval {
        match *self {
            Self::Linear { c } => Interval::point(c * x),
            Self::Power { p } => {
                if x != 0.0 {
                    Interval::point(power_branch(p, x))
                } else if p == 1.0 {
                    Interval { lo: -1.0, hi: 1.0 }
                } else {
                    Interval::point(0.0)
                }
            }
            Self::Cubic => Interval::point(x * x * x),
            Self::Sign => {
                if x > 0.0 {
                    Interval::point(1.0)
                } else if x < 0.0 {
                    Interval::point(-1.0)
                } else {
                    Interval { lo: -1.0, hi: 1.0 }
                }
            }
            Self::Jump { a } => {
                if x > 0.0 {
                    Interval::point(x + a)
                } else if x < 0.0 {
                    Interval::point(x)
                } else {
                    Interval { lo: 0.0, hi: a }
                }
            }
        }
    }

    /// `J_λ(x)`: the unique `y` with `x ∈ y + λβ(y)`.
    pub fn resolvent(&self, lambda: YosidaScale, x: f64) -> Result<f64, GraphError> {
        if !x.is_finite() {
            return Err(GraphError::NonFinite(x));
        }
        let l = lambda.get();
        let y = match *self {
            Self::Linear { c } => x / (1.0 + l * c),
            Self::Sign | Self::Power { p: 1.0 } => soft_threshold(x, l),
            Self::Jump { a } => {
                if x < 0.0 {
                    x / (1.0 + l)
                } else if x <= l * a {
                    0.0
                } else {
                    (x - l * a) / (1.0 + l)
                }
            }
            Self::Power { p } => solve_power_resolvent(p, l, x)?,
            Self::Cubic => solve_power_resolvent(4.0, l, x)?,
        };
        Ok(y)
    }

    /// Yosida approximation `β_λ(x) = (x - J_λ x)/λ`.
    pub fn yosida(&self, lambda: YosidaScale, x: f64) -> Result<f64, GraphError> {
        let y = self.resolvent(lambda, x)?;
        Ok((x - y) / lambda.get())
    }

    /// Resolvent and Yosida value from a single root solve.
    pub fn resolvent_and_yosida(
        &self,
        lambda: YosidaScale,
        x: f64,
    ) -> Result<(f64, f64), GraphError> {
        let y = self.resolvent(lambda, x)?;
        Ok((y, (x - y) / lambda.get()))
    }

    /// Moreau-Yosida envelope `j_λ(x) = min_y j(y) + |x-y|²/(2λ)`.
    pub fn moreau(&self, lambda: YosidaScale, x: f64) -> Result<f64, GraphError> {
        let (y, b) = self.resolvent_and_yosida(lambda, x)?;
        Ok(self.potential_at(y) + 0.5 * lambda.get() * b * b)
    }
}

impl fmt::Display for MonotoneGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { c } => write!(f, "linear:{c}"),
            Self::Power { p } => write!(f, "power:{p}"),
            Self::Cubic => write!(f, "cubic"),
            Self::Sign => write!(f, "sign"),
            Self::Jump { a } => write!(f, "jump:{a}"),
        }
    }
}

impl FromStr for MonotoneGraph {
    type Err = GraphError;

    /// Parses `cubic`, `sign`, `linear:c`, `power:p`, `jump:a`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let num = |what: &str| -> Result<f64, GraphError> {
            let a = arg.ok_or_else(|| {
                GraphError::Parameter(format!("graph `{name}` needs a parameter ({what})"))
            })?;
            a.parse::<f64>()
                .map_err(|_| GraphError::Parameter(format!("bad {what} `{a}` for graph `{name}`")))
        };
        match name {
            "cubic" if arg.is_none() => Ok(Self::Cubic),
            "sign" if arg.is_none() => Ok(Self::Sign),
            "linear" => Self::linear(num("slope")?),
            "power" => Self::power(num("exponent")?),
            "jump" => Self::jump(num("height")?),
            _ => Err(GraphError::Parameter(format!("unknown graph `{s}`"))),
        }
    }
}

#[inline]
fn soft_threshold(x: f64, l: f64) -> f64 {
    x.signum() * (x.abs() - l).max(0.0)
}

#[inline]
fn power_branch(p: f64, y: f64) -> f64 {
    odd_power(p - 1.0, y)
}

/// `|y|^e sign(y)`.
#[inline]
fn odd_power(e: f64, y: f64) -> f64 {
    if e == 3.0 {
        y * y * y
    } else if e == 2.0 {
        y * y.abs()
    } else if e == 1.0 {
        y
    } else {
        y.abs().powf(e).copysign(y)
    }
}

/// Solves `y + λ|y|^{p-1} sign(y) = x` for `p > 1`.
///
/// Newton iteration safeguarded by bisection on `[min(0,x), max(0,x)]`.
/// The root has the sign of `x` and `|J_λ x| ≤ |x|`, so the bracket is valid.
fn solve_power_resolvent(p: f64, l: f64, x: f64) -> Result<f64, GraphError> {
    if x == 0.0 {
        return Ok(0.0);
    }
    // Work on |x| and restore the sign; the map is odd.
    let target = x.abs();
    let residual = |y: f64| y + l * odd_power(p - 1.0, y) - target;
    let mut lo = 0.0_f64;
    let mut hi = target;
    // Starting point: the smaller of the two asymptotic regimes.
    let mut y = target.min((target / l).powf(1.0 / (p - 1.0)));
    if !(y > lo && y < hi) {
        y = 0.5 * (lo + hi);
    }
    for _ in 0..RESOLVENT_MAX_ITER {
        let r = residual(y);
        if r == 0.0 {
            return Ok(y.copysign(x));
        }
        if r > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let slope = 1.0 + l * (p - 1.0) * y.powf(p - 2.0);
        let next = y - r / slope;
        if next.is_finite() && (next - y).abs() <= RESOLVENT_TOL * (1.0 + y.abs()) {
            return Ok(next.clamp(lo, hi).copysign(x));
        }
        y = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * hi {
            return Ok(y.copysign(x));
        }
    }
    Err(GraphError::NoConvergence {
        x,
        lambda: l,
        iterations: RESOLVENT_MAX_ITER,
    })
}
