//! Margin-function algebra: target margins are nonpositive inside the target
//! set, failure margins are positive inside the failure set. Every margin
//! carries first and second derivatives so the solver can quadratize it.

use nalgebra::{DMatrix, DVector};

use crate::types::MarginKind;

/// A scalar functional of joint state and time step with derivatives.
///
/// Sign conventions: `Target` margins satisfy `value <= 0` iff the state is
/// in the target set; `Failure` margins satisfy `value > 0` iff the state is
/// in the failure set. Derivatives of the nonsmooth combinators come from the
/// active branch, with ties broken by lowest list index.
pub trait MarginFn: Send + Sync {
    fn value(&self, x: &DVector<f64>, t: usize) -> f64;
    fn gradient(&self, x: &DVector<f64>, t: usize) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64>;
    fn kind(&self) -> MarginKind;
    fn name(&self) -> String;
}

pub type Margin = Box<dyn MarginFn>;

/// Indices of a planar position inside the joint state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PlanarRef {
    pub x: usize,
    pub y: usize,
}

impl PlanarRef {
    pub fn extract(&self, x: &DVector<f64>) -> (f64, f64) {
        (x[self.x], x[self.y])
    }
}

fn scatter_grad(n: usize, entries: &[(usize, f64)]) -> DVector<f64> {
    let mut g = DVector::zeros(n);
    for &(i, v) in entries {
        g[i] = v;
    }
    g
}

fn scatter_hess(n: usize, entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, n);
    for &(i, j, v) in entries {
        h[(i, j)] = v;
    }
    h
}

// ---------------------------------------------------------------------------
// Distance primitives
// ---------------------------------------------------------------------------

struct DiskMargin {
    center: (f64, f64),
    radius: f64,
    pos: PlanarRef,
    kind: MarginKind,
    name: String,
}

impl DiskMargin {
    /// Signed distance to the disk boundary, positive outside.
    fn signed_distance(&self, x: &DVector<f64>) -> f64 {
        let (px, py) = self.pos.extract(x);
        ((px - self.center.0).hypot(py - self.center.1)) - self.radius
    }

    fn orientation(&self) -> f64 {
        match self.kind {
            MarginKind::Target => 1.0,
            MarginKind::Failure => -1.0,
        }
    }
}

impl MarginFn for DiskMargin {
    fn value(&self, x: &DVector<f64>, _t: usize) -> f64 {
        self.orientation() * self.signed_distance(x)
    }

    fn gradient(&self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
        let (px, py) = self.pos.extract(x);
        let (dx, dy) = (px - self.center.0, py - self.center.1);
        let dist = dx.hypot(dy);
        if dist == 0.0 {
            return DVector::zeros(x.len());
        }
        let s = self.orientation() / dist;
        scatter_grad(x.len(), &[(self.pos.x, s * dx), (self.pos.y, s * dy)])
    }

    fn hessian(&self, x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        let (px, py) = self.pos.extract(x);
        let (dx, dy) = (px - self.center.0, py - self.center.1);
        let dist = dx.hypot(dy);
        if dist == 0.0 {
            return DMatrix::zeros(x.len(), x.len());
        }
        // Hessian of the Euclidean norm: (I - u u') / dist.
        let (ux, uy) = (dx / dist, dy / dist);
        let s = self.orientation() / dist;
        scatter_hess(
            x.len(),
            &[
                (self.pos.x, self.pos.x, s * (1.0 - ux * ux)),
                (self.pos.x, self.pos.y, s * (-ux * uy)),
                (self.pos.y, self.pos.x, s * (-ux * uy)),
                (self.pos.y, self.pos.y, s * (1.0 - uy * uy)),
            ],
        )
    }

    fn kind(&self) -> MarginKind {
        self.kind
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Target margin `|p - center| - radius`: nonpositive inside the disk.
pub fn disk_target(center: (f64, f64), radius: f64, pos: PlanarRef) -> Margin {
    assert!(radius > 0.0);
    Box::new(DiskMargin {
        center,
        radius,
        pos,
        kind: MarginKind::Target,
        name: format!("disk_target(r={radius})"),
    })
}

/// Failure margin `radius - |p - center|`: positive inside the disk.
pub fn disk_failure(center: (f64, f64), radius: f64, pos: PlanarRef) -> Margin {
    assert!(radius > 0.0);
    Box::new(DiskMargin {
        center,
        radius,
        pos,
        kind: MarginKind::Failure,
        name: format!("disk_failure(r={radius})"),
    })
}

struct HalfplaneMargin {
    normal: (f64, f64),
    offset: f64,
    pos: PlanarRef,
    name: String,
}

impl MarginFn for HalfplaneMargin {
    fn value(&self, x: &DVector<f64>, _t: usize) -> f64 {
        let (px, py) = self.pos.extract(x);
        self.normal.0 * px + self.normal.1 * py - self.offset
    }

    fn gradient(&self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
        scatter_grad(
            x.len(),
            &[(self.pos.x, self.normal.0), (self.pos.y, self.normal.1)],
        )
    }

    fn hessian(&self, x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }

    fn kind(&self) -> MarginKind {
        MarginKind::Failure
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Failure margin `normal . p - offset`: positive beyond the boundary line.
/// `normal` must be a unit vector.
pub fn halfplane_failure(normal: (f64, f64), offset: f64, pos: PlanarRef) -> Margin {
    let norm = normal.0.hypot(normal.1);
    assert!((norm - 1.0).abs() < 1e-9, "normal must be a unit vector");
    Box::new(HalfplaneMargin {
        normal,
        offset,
        pos,
        name: format!("halfplane(n=({}, {}), o={})", normal.0, normal.1, offset),
    })
}

struct PairDistanceMargin {
    pos_a: PlanarRef,
    pos_b: PlanarRef,
    clearance: f64,
    name: String,
}

impl MarginFn for PairDistanceMargin {
    fn value(&self, x: &DVector<f64>, _t: usize) -> f64 {
        let (ax, ay) = self.pos_a.extract(x);
        let (bx, by) = self.pos_b.extract(x);
        self.clearance - (ax - bx).hypot(ay - by)
    }

    fn gradient(&self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
        let (ax, ay) = self.pos_a.extract(x);
        let (bx, by) = self.pos_b.extract(x);
        let (dx, dy) = (ax - bx, ay - by);
        let dist = dx.hypot(dy);
        if dist == 0.0 {
            // Coincident positions: documented nonsmooth point, zero gradient.
            return DVector::zeros(x.len());
        }
        let (ux, uy) = (dx / dist, dy / dist);
        scatter_grad(
            x.len(),
            &[
                (self.pos_a.x, -ux),
                (self.pos_a.y, -uy),
                (self.pos_b.x, ux),
                (self.pos_b.y, uy),
            ],
        )
    }

    fn hessian(&self, x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        let (ax, ay) = self.pos_a.extract(x);
        let (bx, by) = self.pos_b.extract(x);
        let (dx, dy) = (ax - bx, ay - by);
        let dist = dx.hypot(dy);
        if dist == 0.0 {
            return DMatrix::zeros(x.len(), x.len());
        }
        let (ux, uy) = (dx / dist, dy / dist);
        // -(I - u u') / dist replicated over the (a, b) block pattern.
        let p = [
            [-(1.0 - ux * ux) / dist, (ux * uy) / dist],
            [(ux * uy) / dist, -(1.0 - uy * uy) / dist],
        ];
        let a = [self.pos_a.x, self.pos_a.y];
        let b = [self.pos_b.x, self.pos_b.y];
        let mut entries = Vec::with_capacity(16);
        for i in 0..2 {
            for j in 0..2 {
                entries.push((a[i], a[j], p[i][j]));
                entries.push((b[i], b[j], p[i][j]));
                entries.push((a[i], b[j], -p[i][j]));
                entries.push((b[i], a[j], -p[i][j]));
            }
        }
        scatter_hess(x.len(), &entries)
    }

    fn kind(&self) -> MarginKind {
        MarginKind::Failure
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Failure margin `clearance - |p_a - p_b|`: positive when the two points are
/// closer than `clearance`.
pub fn pairwise_distance_failure(pos_a: PlanarRef, pos_b: PlanarRef, clearance: f64) -> Margin {
    assert!(clearance > 0.0);
    Box::new(PairDistanceMargin {
        pos_a,
        pos_b,
        clearance,
        name: format!("pair_distance(c={clearance})"),
    })
}

struct IntervalMargin {
    index: usize,
    lower: f64,
    upper: f64,
    name: String,
}

impl MarginFn for IntervalMargin {
    fn value(&self, x: &DVector<f64>, _t: usize) -> f64 {
        (self.lower - x[self.index]).max(x[self.index] - self.upper)
    }

    fn gradient(&self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
        // Ties go to the lower branch.
        let below = self.lower - x[self.index];
        let above = x[self.index] - self.upper;
        let sign = if below >= above { -1.0 } else { 1.0 };
        scatter_grad(x.len(), &[(self.index, sign)])
    }

    fn hessian(&self, x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }

    fn kind(&self) -> MarginKind {
        MarginKind::Failure
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Failure margin `max(lower - x[i], x[i] - upper)`: positive outside the
/// interval. Used for e.g. steering-angle limits.
pub fn box_interval_failure(index: usize, lower: f64, upper: f64) -> Margin {
    assert!(lower < upper);
    Box::new(IntervalMargin {
        index,
        lower,
        upper,
        name: format!("interval(x[{index}] in [{lower}, {upper}])"),
    })
}

struct BoxSdfMargin {
    center: (f64, f64),
    half: (f64, f64),
    pos: PlanarRef,
    kind: MarginKind,
    name: String,
}

impl BoxSdfMargin {
    /// Signed distance to the box boundary (negative inside) and the branch
    /// data needed for derivatives.
    fn parts(&self, x: &DVector<f64>) -> (f64, f64, f64, f64, f64) {
        let (px, py) = self.pos.extract(x);
        let dx = px - self.center.0;
        let dy = py - self.center.1;
        let qx = dx.abs() - self.half.0;
        let qy = dy.abs() - self.half.1;
        let sx = if dx < 0.0 { -1.0 } else { 1.0 };
        let sy = if dy < 0.0 { -1.0 } else { 1.0 };
        (qx, qy, sx, sy, 0.0)
    }

    fn orientation(&self) -> f64 {
        match self.kind {
            MarginKind::Target => 1.0,
            // Failure use means "positive outside the box" too, so both kinds
            // share the raw SDF; the kind tag only records intent.
            MarginKind::Failure => 1.0,
        }
    }
}

impl MarginFn for BoxSdfMargin {
    fn value(&self, x: &DVector<f64>, _t: usize) -> f64 {
        let (qx, qy, ..) = self.parts(x);
        let outside = (qx.max(0.0)).hypot(qy.max(0.0));
        let inside = qx.max(qy).min(0.0);
        self.orientation() * (outside + inside)
    }

    fn gradient(&self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
        let (qx, qy, sx, sy, _) = self.parts(x);
        let n = x.len();
        let (gx, gy) = if qx <= 0.0 && qy <= 0.0 {
            // Inside: nearest face, ties to the x axis.
            if qx >= qy {
                (sx, 0.0)
            } else {
                (0.0, sy)
            }
        } else if qx > 0.0 && qy > 0.0 {
            let d = qx.hypot(qy);
            (sx * qx / d, sy * qy / d)
        } else if qx > 0.0 {
            (sx, 0.0)
        } else {
            (0.0, sy)
        };
        scatter_grad(n, &[(self.pos.x, gx), (self.pos.y, gy)])
    }

    fn hessian(&self, x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        let (qx, qy, sx, sy, _) = self.parts(x);
        let n = x.len();
        if qx > 0.0 && qy > 0.0 {
            // Corner region: distance to the corner point.
            let d = qx.hypot(qy);
            let (wx, wy) = (sx * qx / d, sy * qy / d);
            scatter_hess(
                n,
                &[
                    (self.pos.x, self.pos.x, (1.0 - wx * wx) / d),
                    (self.pos.x, self.pos.y, -(wx * wy) / d),
                    (self.pos.y, self.pos.x, -(wx * wy) / d),
                    (self.pos.y, self.pos.y, (1.0 - wy * wy) / d),
                ],
            )
        } else {
            // Face regions and the interior are locally affine.
            DMatrix::zeros(n, n)
        }
    }

    fn kind(&self) -> MarginKind {
        self.kind
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Target margin: axis-aligned-box signed distance, nonpositive inside.
pub fn box_target(center: (f64, f64), half_extents: (f64, f64), pos: PlanarRef) -> Margin {
    assert!(half_extents.0 > 0.0 && half_extents.1 > 0.0);
    Box::new(BoxSdfMargin {
        center,
        half: half_extents,
        pos,
        kind: MarginKind::Target,
        name: format!("box_target({}x{})", 2.0 * half_extents.0, 2.0 * half_extents.1),
    })
}

/// Failure margin: positive outside the axis-aligned box. Combine several
/// with [`combine_min`] to keep an agent inside a union of boxes (e.g. an
/// L-shaped lane corridor).
pub fn box_region_failure(center: (f64, f64), half_extents: (f64, f64), pos: PlanarRef) -> Margin {
    assert!(half_extents.0 > 0.0 && half_extents.1 > 0.0);
    Box::new(BoxSdfMargin {
        center,
        half: half_extents,
        pos,
        kind: MarginKind::Failure,
        name: format!("box_exit({}x{})", 2.0 * half_extents.0, 2.0 * half_extents.1),
    })
}

// ---------------------------------------------------------------------------
// Combinators
// ---------------------------------------------------------------------------

enum Extremum {
    Max,
    Min,
}

struct CombineMargin {
    parts: Vec<Margin>,
    which: Extremum,
    kind: MarginKind,
    name: String,
}

impl CombineMargin {
    fn active_index(&self, x: &DVector<f64>, t: usize) -> usize {
        let mut best = 0;
        let mut best_v = self.parts[0].value(x, t);
        for (i, part) in self.parts.iter().enumerate().skip(1) {
            let v = part.value(x, t);
            let better = match self.which {
                Extremum::Max => v > best_v,
                Extremum::Min => v < best_v,
            };
            if better {
                best = i;
                best_v = v;
            }
        }
        best
    }
}

impl MarginFn for CombineMargin {
    fn value(&self, x: &DVector<f64>, t: usize) -> f64 {
        let vals = self.parts.iter().map(|p| p.value(x, t));
        match self.which {
            Extremum::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            Extremum::Min => vals.fold(f64::INFINITY, f64::min),
        }
    }

    fn gradient(&self, x: &DVector<f64>, t: usize) -> DVector<f64> {
        self.parts[self.active_index(x, t)].gradient(x, t)
    }

    fn hessian(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64> {
        self.parts[self.active_index(x, t)].hessian(x, t)
    }

    fn kind(&self) -> MarginKind {
        self.kind
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

fn combine(parts: Vec<Margin>, which: Extremum) -> Margin {
    assert!(!parts.is_empty(), "combinators need at least one margin");
    let kind = parts[0].kind();
    let label = match which {
        Extremum::Max => "max",
        Extremum::Min => "min",
    };
    let name = format!(
        "{label}({})",
        parts.iter().map(|p| p.name()).collect::<Vec<_>>().join(", ")
    );
    Box::new(CombineMargin {
        parts,
        which,
        kind,
        name,
    })
}

/// Pointwise maximum; derivatives from the first-listed maximizer.
pub fn combine_max(parts: Vec<Margin>) -> Margin {
    combine(parts, Extremum::Max)
}

/// Pointwise minimum; derivatives from the first-listed minimizer.
pub fn combine_min(parts: Vec<Margin>) -> Margin {
    combine(parts, Extremum::Min)
}

struct NegateMargin {
    inner: Margin,
}

impl MarginFn for NegateMargin {
    fn value(&self, x: &DVector<f64>, t: usize) -> f64 {
        -self.inner.value(x, t)
    }

    fn gradient(&self, x: &DVector<f64>, t: usize) -> DVector<f64> {
        -self.inner.gradient(x, t)
    }

    fn hessian(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64> {
        -self.inner.hessian(x, t)
    }

    fn kind(&self) -> MarginKind {
        match self.inner.kind() {
            MarginKind::Target => MarginKind::Failure,
            MarginKind::Failure => MarginKind::Target,
        }
    }

    fn name(&self) -> String {
        format!("neg({})", self.inner.name())
    }
}

/// Pointwise negation; flips the kind tag.
pub fn negate(inner: Margin) -> Margin {
    Box::new(NegateMargin { inner })
}

// ---------------------------------------------------------------------------
// Time gating, constants, synthetic margins
// ---------------------------------------------------------------------------

struct GatedMargin {
    active_from: usize,
    inactive_value: f64,
    inner: Margin,
}

impl MarginFn for GatedMargin {
    fn value(&self, x: &DVector<f64>, t: usize) -> f64 {
        if t >= self.active_from {
            self.inner.value(x, t)
        } else {
            self.inactive_value
        }
    }

    fn gradient(&self, x: &DVector<f64>, t: usize) -> DVector<f64> {
        if t >= self.active_from {
            self.inner.gradient(x, t)
        } else {
            DVector::zeros(x.len())
        }
    }

    fn hessian(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64> {
        if t >= self.active_from {
            self.inner.hessian(x, t)
        } else {
            DMatrix::zeros(x.len(), x.len())
        }
    }

    fn kind(&self) -> MarginKind {
        self.inner.kind()
    }

    fn name(&self) -> String {
        format!("from_t{}({})", self.active_from, self.inner.name())
    }
}

/// Margin that reports `inactive_value` (with zero derivatives) before step
/// `active_from` and delegates to `inner` from then on.
pub fn active_from(start: usize, inactive_value: f64, inner: Margin) -> Margin {
    Box::new(GatedMargin {
        active_from: start,
        inactive_value,
        inner,
    })
}

struct ShiftedMargin {
    offset: usize,
    inner: std::sync::Arc<dyn MarginFn>,
}

impl MarginFn for ShiftedMargin {
    fn value(&self, x: &DVector<f64>, t: usize) -> f64 {
        self.inner.value(x, t + self.offset)
    }

    fn gradient(&self, x: &DVector<f64>, t: usize) -> DVector<f64> {
        self.inner.gradient(x, t + self.offset)
    }

    fn hessian(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64> {
        self.inner.hessian(x, t + self.offset)
    }

    fn kind(&self) -> MarginKind {
        self.inner.kind()
    }

    fn name(&self) -> String {
        format!("shift_t{}({})", self.offset, self.inner.name())
    }
}

/// View of `inner` with local step `t` mapped to absolute step `t + offset`.
/// Used when truncating a problem to a sub-horizon.
pub fn shift_time(offset: usize, inner: std::sync::Arc<dyn MarginFn>) -> Margin {
    Box::new(ShiftedMargin { offset, inner })
}

/// The sentinel used for "no failure set": a large negative constant rather
/// than a literal -inf so quadratization stays finite.
pub const NO_FAILURE: f64 = -1e6;

struct ConstantMargin {
    value: f64,
    kind: MarginKind,
}

impl MarginFn for ConstantMargin {
    fn value(&self, _x: &DVector<f64>, _t: usize) -> f64 {
        self.value
    }

    fn gradient(&self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
        DVector::zeros(x.len())
    }

    fn hessian(&self, x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }

    fn kind(&self) -> MarginKind {
        self.kind
    }

    fn name(&self) -> String {
        format!("const({})", self.value)
    }
}

pub fn constant(kind: MarginKind, value: f64) -> Margin {
    Box::new(ConstantMargin { value, kind })
}

struct TabulatedMargin {
    values: Vec<f64>,
    kind: MarginKind,
}

impl MarginFn for TabulatedMargin {
    fn value(&self, _x: &DVector<f64>, t: usize) -> f64 {
        self.values[t]
    }

    fn gradient(&self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
        DVector::zeros(x.len())
    }

    fn hessian(&self, x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }

    fn kind(&self) -> MarginKind {
        self.kind
    }

    fn name(&self) -> String {
        format!("tabulated(len={})", self.values.len())
    }
}

/// State-independent margin reading `values[t]`. Drives the dynamic
/// programming recursion in tests and synthetic benchmarks.
pub fn tabulated(kind: MarginKind, values: Vec<f64>) -> Margin {
    Box::new(TabulatedMargin { values, kind })
}

struct QuadraticMargin {
    center: DVector<f64>,
    weights: DMatrix<f64>,
    offset: f64,
    kind: MarginKind,
}

impl MarginFn for QuadraticMargin {
    fn value(&self, x: &DVector<f64>, _t: usize) -> f64 {
        let d = x - &self.center;
        0.5 * (&self.weights * &d).dot(&d) + self.offset
    }

    fn gradient(&self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
        &self.weights * (x - &self.center)
    }

    fn hessian(&self, _x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        self.weights.clone()
    }

    fn kind(&self) -> MarginKind {
        self.kind
    }

    fn name(&self) -> String {
        "quadratic".to_string()
    }
}

/// Smooth quadratic margin `0.5 (x - center)' W (x - center) + offset`.
pub fn quadratic_form(
    kind: MarginKind,
    center: DVector<f64>,
    weights: DMatrix<f64>,
    offset: f64,
) -> Margin {
    Box::new(QuadraticMargin {
        center,
        weights,
        offset,
        kind,
    })
}

// ---------------------------------------------------------------------------
// Quadratization
// ---------------------------------------------------------------------------

/// Default Hessian regularization added during quadratization.
pub const DEFAULT_HESSIAN_REG: f64 = 1e-4;

/// Second-order model of a margin about a reference state, arranged as
/// `0.5 x' Q x + q' x + c` in absolute coordinates. `hessian` is the PSD
/// projection of the true Hessian plus `lambda_reg * I`; `gradient` is the
/// raw margin gradient at the reference (the linear coefficient in deviation
/// coordinates).
#[derive(Debug, Clone)]
pub struct Quadratization {
    pub q_matrix: DMatrix<f64>,
    pub q_vector: DVector<f64>,
    pub constant: f64,
    pub gradient: DVector<f64>,
}

/// Quadratize `margin` about `x_ref` at step `t`, clamping negative Hessian
/// eigenvalues to zero and adding `lambda_reg * I` so downstream Riccati
/// solves stay well posed.
pub fn quadratize(
    margin: &dyn MarginFn,
    x_ref: &DVector<f64>,
    t: usize,
    lambda_reg: f64,
) -> Quadratization {
    let value = margin.value(x_ref, t);
    let gradient = margin.gradient(x_ref, t);
    let hessian = margin.hessian(x_ref, t);
    let q_matrix = psd_projection(&hessian, lambda_reg);
    let q_vector = &gradient - &q_matrix * x_ref;
    let constant =
        value - q_vector.dot(x_ref) - 0.5 * (&q_matrix * x_ref).dot(x_ref);
    Quadratization {
        q_matrix,
        q_vector,
        constant,
        gradient,
    }
}

/// Clamp negative eigenvalues of a symmetric matrix to zero and add
/// `lambda_reg * I`.
pub fn psd_projection(hessian: &DMatrix<f64>, lambda_reg: f64) -> DMatrix<f64> {
    let n = hessian.nrows();
    let sym = (hessian + hessian.transpose()) * 0.5;
    if sym.amax() == 0.0 {
        return DMatrix::identity(n, n) * lambda_reg;
    }
    let eig = sym.symmetric_eigen();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += lam * v * v.transpose();
        }
    }
    // Kill reconstruction asymmetry before adding the ridge.
    out = (&out + out.transpose()) * 0.5;
    out + DMatrix::identity(n, n) * lambda_reg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verification::derivative_check;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn state(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    const POS: PlanarRef = PlanarRef { x: 0, y: 1 };

    #[test]
    fn disk_target_sign_convention() {
        let m = disk_target((0.0, 0.0), 1.0, POS);
        assert_relative_eq!(m.value(&state(&[2.0, 0.0]), 0), 1.0);
        assert_relative_eq!(m.value(&state(&[1.0, 0.0]), 0), 0.0);
        assert_relative_eq!(m.value(&state(&[0.0, 0.0]), 0), -1.0);
    }

    #[test]
    fn disk_failure_sign_convention() {
        let m = disk_failure((0.0, 0.0), 1.0, POS);
        assert_relative_eq!(m.value(&state(&[0.0, 0.0]), 0), 1.0);
        assert_relative_eq!(m.value(&state(&[3.0, 0.0]), 0), -2.0);
        let g = m.gradient(&state(&[2.0, 0.0]), 0);
        assert_relative_eq!(g[0], -1.0);
        assert_relative_eq!(g[1], 0.0);
    }

    #[test]
    fn halfplane_road_edge() {
        let m = halfplane_failure((0.0, 1.0), 3.0, POS);
        assert_relative_eq!(m.value(&state(&[0.0, 4.0]), 0), 1.0);
        assert_relative_eq!(m.value(&state(&[5.0, 3.0]), 0), 0.0);
        assert_eq!(m.hessian(&state(&[1.0, 1.0]), 0).amax(), 0.0);
    }

    #[test]
    fn pairwise_distance_values() {
        let pos_b = PlanarRef { x: 2, y: 3 };
        let m = pairwise_distance_failure(POS, pos_b, 3.0);
        assert_relative_eq!(m.value(&state(&[0.0, 0.0, 10.0, 0.0]), 0), -7.0);
        assert_relative_eq!(m.value(&state(&[0.0, 0.0, 3.0, 0.0]), 0), 0.0);
    }

    #[test]
    fn pairwise_distance_coincident_point() {
        let pos_b = PlanarRef { x: 2, y: 3 };
        let m = pairwise_distance_failure(POS, pos_b, 3.0);
        let x = state(&[1.0, 1.0, 1.0, 1.0]);
        assert_relative_eq!(m.value(&x, 0), 3.0);
        assert_eq!(m.gradient(&x, 0).amax(), 0.0);
    }

    #[test]
    fn steering_interval_values() {
        let lim = PI / 6.0;
        let m = box_interval_failure(0, -lim, lim);
        assert_relative_eq!(m.value(&state(&[0.0]), 0), -lim);
        assert_relative_eq!(m.value(&state(&[2.0 * PI / 9.0]), 0), PI / 18.0, epsilon = 1e-12);
        assert_relative_eq!(m.value(&state(&[-2.0 * PI / 9.0]), 0), PI / 18.0, epsilon = 1e-12);
    }

    #[test]
    fn combinators_pick_branch_derivatives() {
        let a = constant(MarginKind::Failure, -7.0);
        let b = halfplane_failure((1.0, 0.0), -1.0, POS);
        let x = state(&[0.0, 0.0]);
        let m = combine_max(vec![a, b]);
        assert_relative_eq!(m.value(&x, 0), 1.0);
        assert_relative_eq!(m.gradient(&x, 0)[0], 1.0);

        let single = combine_max(vec![disk_failure((0.0, 0.0), 1.0, POS)]);
        let inner = disk_failure((0.0, 0.0), 1.0, POS);
        let y = state(&[0.3, 0.4]);
        assert_eq!(single.value(&y, 0), inner.value(&y, 0));
        assert_eq!(single.gradient(&y, 0), inner.gradient(&y, 0));
    }

    #[test]
    fn combinator_ties_break_by_index() {
        let a = constant(MarginKind::Failure, 1.0);
        let b = halfplane_failure((1.0, 0.0), -1.0, POS); // also 1.0 at x=0
        let m = combine_max(vec![a, b]);
        let x = state(&[0.0, 0.0]);
        assert_eq!(m.gradient(&x, 0).amax(), 0.0); // constant branch wins the tie
    }

    #[test]
    fn box_sdf_values() {
        let m = box_target((0.0, 0.0), (2.0, 1.0), POS);
        assert_relative_eq!(m.value(&state(&[0.0, 0.0]), 0), -1.0);
        assert_relative_eq!(m.value(&state(&[3.0, 0.0]), 0), 1.0);
        assert_relative_eq!(m.value(&state(&[3.0, 2.0]), 0), 2f64.sqrt());
        assert_relative_eq!(m.value(&state(&[2.0, 1.0]), 0), 0.0);
    }

    #[test]
    fn gated_margin_switches_on() {
        let m = active_from(5, NO_FAILURE, disk_failure((0.0, 0.0), 1.0, POS));
        let x = state(&[0.0, 0.0]);
        assert_eq!(m.value(&x, 4), NO_FAILURE);
        assert_eq!(m.gradient(&x, 4).amax(), 0.0);
        assert_relative_eq!(m.value(&x, 5), 1.0);
    }

    fn random_smooth_point(rng: &mut ChaCha8Rng) -> DVector<f64> {
        // Keep away from margin nonsmooth loci (disk centers, box faces).
        loop {
            let x: DVector<f64> = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
            let r0 = (x[0].hypot(x[1]) - 0.0f64).abs();
            if r0 > 0.3 && (x[0] - x[2]).hypot(x[1] - x[3]) > 0.3 {
                return x;
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let pos_b = PlanarRef { x: 2, y: 3 };
        let margins: Vec<Margin> = vec![
            disk_target((0.5, -0.25), 1.0, POS),
            disk_failure((0.5, -0.25), 1.5, POS),
            halfplane_failure((0.6, 0.8), 0.7, POS),
            pairwise_distance_failure(POS, pos_b, 2.0),
            box_interval_failure(2, -0.5, 0.5),
            box_target((0.1, 0.2), (1.3, 0.9), POS),
            combine_max(vec![
                disk_failure((0.5, -0.25), 1.5, POS),
                halfplane_failure((0.0, 1.0), 2.0, POS),
            ]),
            negate(pairwise_distance_failure(POS, pos_b, 2.0)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in &margins {
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let x = random_smooth_point(&mut rng);
                let err = derivative_check(
                    |x| m.value(x, 0),
                    |x| m.gradient(x, 0),
                    Some(&|x: &DVector<f64>| m.hessian(x, 0)),
                    &x,
                    1e-5,
                );
                worst = worst.max(err);
            }
            assert!(worst < 1e-5, "{}: max relative error {worst}", m.name());
        }
    }

    #[test]
    fn quadratize_affine_margin() {
        let m = halfplane_failure((0.6, 0.8), 0.7, POS);
        let x0 = state(&[0.0, 0.0]);
        let quad = quadratize(m.as_ref(), &x0, 0, 1e-4);
        assert_eq!(quad.q_matrix, DMatrix::identity(2, 2) * 1e-4);
        assert_relative_eq!(quad.q_vector[0], 0.6);
        assert_relative_eq!(quad.q_vector[1], 0.8);

        // Away from the origin the ridge shifts q by -lambda * x_ref.
        let x1 = state(&[2.0, -1.0]);
        let quad1 = quadratize(m.as_ref(), &x1, 0, 1e-4);
        assert_relative_eq!(quad1.q_vector[0], 0.6 - 1e-4 * 2.0);
        assert_relative_eq!(quad1.q_vector[1], 0.8 + 1e-4);
    }

    #[test]
    fn quadratize_convex_quadratic() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = quadratic_form(MarginKind::Target, DVector::zeros(2), w.clone(), 0.0);
        let x_ref = state(&[0.7, -0.4]);
        let quad = quadratize(m.as_ref(), &x_ref, 0, 1e-4);
        let expect_q = &w + DMatrix::identity(2, 2) * 1e-4;
        assert_relative_eq!((quad.q_matrix.clone() - expect_q).amax(), 0.0, epsilon = 1e-12);
        // q = grad - Q x_ref = W x_ref - (W + reg I) x_ref = -reg * x_ref.
        assert_relative_eq!(quad.q_vector[0], -1e-4 * 0.7, epsilon = 1e-12);
        assert_relative_eq!(quad.q_vector[1], 1e-4 * 0.4, epsilon = 1e-12);
    }

    #[test]
    fn quadratize_reconstructs_value_and_gradient() {
        let pos_b = PlanarRef { x: 2, y: 3 };
        let m = pairwise_distance_failure(POS, pos_b, 2.0);
        let x_ref = state(&[0.3, 1.4, -2.0, 0.5]);
        let quad = quadratize(m.as_ref(), &x_ref, 0, 1e-4);
        let model_value =
            0.5 * (&quad.q_matrix * &x_ref).dot(&x_ref) + quad.q_vector.dot(&x_ref) + quad.constant;
        assert_relative_eq!(model_value, m.value(&x_ref, 0), epsilon = 1e-12);
        let model_grad = &quad.q_matrix * &x_ref + &quad.q_vector;
        assert_relative_eq!((model_grad - m.gradient(&x_ref, 0)).amax(), 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn psd_projection_has_min_eigenvalue_at_least_reg(
            raw in proptest::collection::vec(-2.0f64..2.0, 9)
        ) {
            let m = DMatrix::from_row_slice(3, 3, &raw);
            let sym = (&m + m.transpose()) * 0.5;
            let clamped = psd_projection(&sym, 1e-4);
            let min_eig = clamped
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |a, &b| a.min(b));
            prop_assert!(min_eig >= 1e-4 - 1e-12);
        }

        #[test]
        fn double_negation_is_identity(px in -5.0f64..5.0, py in -5.0f64..5.0) {
            let m = disk_failure((0.5, -0.25), 1.5, POS);
            let nn = negate(negate(disk_failure((0.5, -0.25), 1.5, POS)));
            let x = state(&[px, py]);
            prop_assert_eq!(m.value(&x, 0), nn.value(&x, 0));
            prop_assert_eq!(m.gradient(&x, 0), nn.gradient(&x, 0));
        }
    }
}
