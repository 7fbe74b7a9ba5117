//! Convex hulls of activation functions and the scalar piecewise
//! minimization primitives used by all dual solvers.

use crate::net::{sigmoid, sigmoid_prime};
use crate::{Error, Result};

/// State of a ReLU given pre-activation bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluState {
    /// `u <= 0`: output pinned to zero.
    Blocked,
    /// `l >= 0`: output equals input.
    Passing,
    /// `l < 0 < u`: triangle hull applies.
    Ambiguous,
}

impl ReluState {
    /// Classification used consistently everywhere bounds meet a ReLU;
    /// blocked wins on the degenerate `l = u = 0` interval.
    pub fn from_bounds(l: f64, u: f64) -> Self {
        if u <= 0.0 {
            ReluState::Blocked
        } else if l >= 0.0 {
            ReluState::Passing
        } else {
            ReluState::Ambiguous
        }
    }
}

/// Lower and upper hull values of the ReLU at `zhat` for bounds `[l, u]`.
pub fn relu_hull_eval(l: f64, u: f64, zhat: f64) -> Result<(f64, f64)> {
    if zhat < l || zhat > u {
        return Err(Error::OutOfDomain {
            value: zhat,
            lo: l,
            hi: u,
        });
    }
    Ok(match ReluState::from_bounds(l, u) {
        ReluState::Blocked => (0.0, 0.0),
        ReluState::Passing => (zhat, zhat),
        ReluState::Ambiguous => (zhat.max(0.0), u * (zhat - l) / (u - l)),
    })
}

/// Minimum of `a * zhat + b * max(zhat, 0)` over the triangle vertex set
/// `{(l, 0), (0, 0), (u, u)}` of an ambiguous ReLU (`l < 0 < u`).
///
/// Returns the minimizing vertex `(zhat, z)` and the attained value; ties
/// resolve to the smallest `zhat`.
pub fn relu_vertex_min(a: f64, b: f64, l: f64, u: f64) -> (f64, f64, f64) {
    debug_assert!(l < 0.0 && u > 0.0, "vertex rule needs an ambiguous ReLU");
    let candidates = [(l, 0.0, a * l), (0.0, 0.0, 0.0), (u, u, (a + b) * u)];
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.2 < best.2 {
            best = *c;
        }
    }
    best
}

/// Minimum of the linear function `coeff * x` over `[l, u]`; ties resolve
/// to `l`.
pub fn min_linear_interval(coeff: f64, l: f64, u: f64) -> (f64, f64) {
    if coeff < 0.0 {
        (u, coeff * u)
    } else {
        (l, coeff * l)
    }
}

/// One-sided bounding function of the sigmoid on `[l, u]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundShape {
    /// The chord through `(l, sig(l))` and `(u, sig(u))`.
    Chord,
    /// Chord from `(l, sig(l))` tangent at `t`, then the curve on `[t, u]`.
    ChordThenCurve { t: f64 },
    /// The curve on `[l, s]`, then the chord from `(s, sig(s))` to
    /// `(u, sig(u))` tangent at `s`.
    CurveThenChord { s: f64 },
    /// The sigmoid itself (already concave resp. convex on `[l, u]`).
    Curve,
    /// Degenerate `l == u` interval.
    Point,
}

/// Convex hull of the sigmoid on `[l, u]`: a concave upper bound and a
/// convex lower bound, both through the interval endpoints.
#[derive(Debug, Clone, Copy)]
pub struct SigmoidHull {
    pub l: f64,
    pub u: f64,
    pub upper: BoundShape,
    pub lower: BoundShape,
}

/// A maximal interval on which one side of the hull is a single formula.
#[derive(Debug, Clone, Copy)]
pub struct HullPiece {
    pub lo: f64,
    pub hi: f64,
    pub kind: PieceKind,
}

#[derive(Debug, Clone, Copy)]
pub enum PieceKind {
    Linear { slope: f64, intercept: f64 },
    Sigma,
}

impl HullPiece {
    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            PieceKind::Linear { slope, intercept } => slope * x + intercept,
            PieceKind::Sigma => sigmoid(x),
        }
    }
}

fn chord_piece(lo: f64, hi: f64) -> HullPiece {
    let slope = (sigmoid(hi) - sigmoid(lo)) / (hi - lo);
    HullPiece {
        lo,
        hi,
        kind: PieceKind::Linear {
            slope,
            intercept: sigmoid(lo) - slope * lo,
        },
    }
}

/// Builds the sigmoid hull on `[l, u]`.
///
/// The upper bound is the chord when `sig'(u)` is at least the chord slope,
/// and otherwise a chord tangent to the curve at `t > 0` followed by the
/// curve (degenerating to the curve alone when `l >= 0`). The lower bound is
/// the mirror construction under `sig(-x) = 1 - sig(x)`.
pub fn sigmoid_hull_build(l: f64, u: f64) -> Result<SigmoidHull> {
    if l > u {
        return Err(Error::OutOfDomain {
            value: l,
            lo: f64::NEG_INFINITY,
            hi: u,
        });
    }
    if l == u {
        return Ok(SigmoidHull {
            l,
            u,
            upper: BoundShape::Point,
            lower: BoundShape::Point,
        });
    }
    let chord = (sigmoid(u) - sigmoid(l)) / (u - l);
    let upper = if sigmoid_prime(u) >= chord {
        BoundShape::Chord
    } else if l >= 0.0 {
        BoundShape::Curve
    } else {
        BoundShape::ChordThenCurve {
            t: solve_tangent_from(l, u),
        }
    };
    let lower = if sigmoid_prime(l) >= chord {
        BoundShape::Chord
    } else if u <= 0.0 {
        BoundShape::Curve
    } else {
        // Mirror of the upper-bound construction on [-u, -l].
        BoundShape::CurveThenChord {
            s: -solve_tangent_from(-u, -l),
        }
    };
    Ok(SigmoidHull { l, u, upper, lower })
}

/// Finds `t > 0` with `sig'(t) = (sig(t) - sig(l)) / (t - l)`: the tangent
/// point of the chord from `(l, sig(l))`. Bisection on `[max(0, l), min(u, 50)]`
/// brackets the root; the residual is driven below 1e-12.
fn solve_tangent_from(l: f64, u: f64) -> f64 {
    let g = |t: f64| sigmoid_prime(t) - (sigmoid(t) - sigmoid(l)) / (t - l);
    let mut lo = l.max(0.0);
    let mut hi = u.min(50.0);
    debug_assert!(g(lo) >= 0.0 && g(hi) <= 0.0, "tangent root not bracketed");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() <= 1e-12 || hi - lo <= 1e-15 {
            return mid;
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl SigmoidHull {
    pub fn upper_at(&self, x: f64) -> f64 {
        self.side_at(self.upper, x)
    }

    pub fn lower_at(&self, x: f64) -> f64 {
        self.side_at(self.lower, x)
    }

    fn side_at(&self, shape: BoundShape, x: f64) -> f64 {
        match shape {
            BoundShape::Point => sigmoid(self.l),
            _ => {
                let pieces = self.pieces_for(shape);
                for p in &pieces {
                    if x <= p.hi {
                        return p.eval(x);
                    }
                }
                pieces.last().unwrap().eval(x)
            }
        }
    }

    pub fn upper_pieces(&self) -> Vec<HullPiece> {
        self.pieces_for(self.upper)
    }

    pub fn lower_pieces(&self) -> Vec<HullPiece> {
        self.pieces_for(self.lower)
    }

    fn pieces_for(&self, shape: BoundShape) -> Vec<HullPiece> {
        let (l, u) = (self.l, self.u);
        match shape {
            BoundShape::Point => vec![HullPiece {
                lo: l,
                hi: u,
                kind: PieceKind::Sigma,
            }],
            BoundShape::Chord => vec![chord_piece(l, u)],
            BoundShape::Curve => vec![HullPiece {
                lo: l,
                hi: u,
                kind: PieceKind::Sigma,
            }],
            BoundShape::ChordThenCurve { t } => vec![
                chord_piece(l, t),
                HullPiece {
                    lo: t,
                    hi: u,
                    kind: PieceKind::Sigma,
                },
            ],
            BoundShape::CurveThenChord { s } => vec![
                HullPiece {
                    lo: l,
                    hi: s,
                    kind: PieceKind::Sigma,
                },
                chord_piece(s, u),
            ],
        }
    }
}

/// Minimum of `c_lin * x + c_sig * sig(x)` over `[l, u]`.
///
/// Evaluates the endpoints plus any real stationary points inside the
/// interval; ties resolve to the smallest `x`.
pub fn sigmoid_piece_min(c_lin: f64, c_sig: f64, l: f64, u: f64) -> (f64, f64) {
    let mut candidates = vec![l, u];
    if c_sig != 0.0 {
        let disc = 1.0 + 4.0 * c_lin / c_sig;
        if disc >= 0.0 {
            let r = disc.sqrt();
            for s in [(1.0 - r) / 2.0, (1.0 + r) / 2.0] {
                if s > 0.0 && s < 1.0 {
                    let x = (s / (1.0 - s)).ln();
                    if x > l && x < u {
                        candidates.push(x);
                    }
                }
            }
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_x = candidates[0];
    let mut best_v = c_lin * best_x + c_sig * sigmoid(best_x);
    for &x in &candidates[1..] {
        let v = c_lin * x + c_sig * sigmoid(x);
        if v < best_v {
            best_v = v;
            best_x = x;
        }
    }
    (best_x, best_v)
}
