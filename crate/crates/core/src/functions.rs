//! Inverse-demand curves and production-cost curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FunctionError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("x = {x} lies outside the support [0, {support}]")]
    OutsideSupport { x: f64, support: f64 },
    #[error("hazard rate is undefined at x = {x} where demand vanishes")]
    HazardUndefined { x: f64 },
    #[error("quantity {y} exceeds capacity {capacity}")]
    BeyondCapacity { y: f64, capacity: f64 },
    #[error("marginal {m} lies below the marginal at zero {floor}")]
    BelowFloor { m: f64, floor: f64 },
    #[error("grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> FunctionError {
    FunctionError::InvalidParameter { field, reason: reason.into() }
}

fn require_finite(field: &'static str, v: f64) -> Result<(), FunctionError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite, got {v}")))
    }
}

fn require_positive(field: &'static str, v: f64) -> Result<(), FunctionError> {
    require_finite(field, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn require_nonnegative(field: &'static str, v: f64) -> Result<(), FunctionError> {
    require_finite(field, v)?;
    if v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be non-negative, got {v}")))
    }
}

/// Serialized form of a demand curve, tagged by family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DemandSpec {
    /// Constant value on `[0, support]`.
    Uniform { value: f64, support: f64 },
    /// `intercept - slope * x`.
    Linear { intercept: f64, slope: f64, support: f64 },
    /// `scale * exp(-rate * x)`.
    Exponential { scale: f64, rate: f64, support: f64 },
    /// `scale * (1 - x / support)^exponent`.
    PowerLaw { scale: f64, exponent: f64, support: f64 },
    /// Piecewise-linear interpolation through `(x, value)` knots starting at `x = 0`.
    Tabulated { points: Vec<[f64; 2]> },
}

/// A validated inverse-demand curve `λ(x)` on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DemandSpec", into = "DemandSpec")]
pub struct DemandFn {
    spec: DemandSpec,
    support: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandPoint {
    pub value: f64,
    pub derivative: f64,
    /// `|λ'(x)| / λ(x)`; `None` where `λ(x) = 0`.
    pub hazard: Option<f64>,
}

/// Outcome of a grid-based monotone-hazard-rate check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhrCertificate {
    pub passes: bool,
    pub grid: usize,
    /// Largest relative drop in hazard rate between consecutive grid points.
    pub worst_violation: f64,
    pub location: Option<f64>,
}

impl TryFrom<DemandSpec> for DemandFn {
    type Error = FunctionError;

    fn try_from(spec: DemandSpec) -> Result<Self, FunctionError> {
        let support = match &spec {
            DemandSpec::Uniform { value, support } => {
                require_positive("value", *value)?;
                require_positive("support", *support)?;
                *support
            }
            DemandSpec::Linear { intercept, slope, support } => {
                require_positive("intercept", *intercept)?;
                require_nonnegative("slope", *slope)?;
                require_positive("support", *support)?;
                if intercept - slope * support < -1e-12 * intercept {
                    return Err(invalid("support", "linear demand turns negative inside the support"));
                }
                *support
            }
            DemandSpec::Exponential { scale, rate, support } => {
                require_positive("scale", *scale)?;
                require_nonnegative("rate", *rate)?;
                require_positive("support", *support)?;
                *support
            }
            DemandSpec::PowerLaw { scale, exponent, support } => {
                require_positive("scale", *scale)?;
                require_positive("exponent", *exponent)?;
                require_positive("support", *support)?;
                *support
            }
            DemandSpec::Tabulated { points } => {
                if points.len() < 2 {
                    return Err(invalid("points", "need at least two knots"));
                }
                for p in points {
                    require_finite("points", p[0])?;
                    require_nonnegative("points", p[1])?;
                }
                if points[0][0] != 0.0 {
                    return Err(invalid("points", "first knot must sit at x = 0"));
                }
                if points[0][1] <= 0.0 {
                    return Err(invalid("points", "value at x = 0 must be positive"));
                }
                for w in points.windows(2) {
                    if w[1][0] <= w[0][0] {
                        return Err(invalid("points", "knot abscissae must strictly increase"));
                    }
                    if w[1][1] > w[0][1] {
                        return Err(invalid("points", "values must be non-increasing"));
                    }
                }
                points[points.len() - 1][0]
            }
        };
        Ok(DemandFn { spec, support })
    }
}

impl From<DemandFn> for DemandSpec {
    fn from(f: DemandFn) -> Self {
        f.spec
    }
}

impl DemandFn {
    pub fn new(spec: DemandSpec) -> Result<Self, FunctionError> {
        Self::try_from(spec)
    }

    pub fn uniform(value: f64, support: f64) -> Result<Self, FunctionError> {
        Self::new(DemandSpec::Uniform { value, support })
    }

    pub fn linear(intercept: f64, slope: f64, support: f64) -> Result<Self, FunctionError> {
        Self::new(DemandSpec::Linear { intercept, slope, support })
    }

    pub fn exponential(scale: f64, rate: f64, support: f64) -> Result<Self, FunctionError> {
        Self::new(DemandSpec::Exponential { scale, rate, support })
    }

    pub fn power_law(scale: f64, exponent: f64, support: f64) -> Result<Self, FunctionError> {
        Self::new(DemandSpec::PowerLaw { scale, exponent, support })
    }

    pub fn tabulated(points: Vec<[f64; 2]>) -> Result<Self, FunctionError> {
        Self::new(DemandSpec::Tabulated { points })
    }

    pub fn spec(&self) -> &DemandSpec {
        &self.spec
    }

    pub fn family(&self) -> &'static str {
        match self.spec {
            DemandSpec::Uniform { .. } => "uniform",
            DemandSpec::Linear { .. } => "linear",
            DemandSpec::Exponential { .. } => "exponential",
            DemandSpec::PowerLaw { .. } => "power-law",
            DemandSpec::Tabulated { .. } => "tabulated",
        }
    }

    /// Total population mass `T`.
    pub fn support(&self) -> f64 {
        self.support
    }

    /// `λ(0)`.
    pub fn peak(&self) -> f64 {
        self.value(0.0)
    }

    /// `λ(T)`.
    pub fn floor(&self) -> f64 {
        self.value(self.support)
    }

    /// `λ(x)` with `x` clamped into the support.
    pub fn value(&self, x: f64) -> f64 {
        let t = self.support;
        let x = x.clamp(0.0, t);
        match &self.spec {
            DemandSpec::Uniform { value, .. } => *value,
            DemandSpec::Linear { intercept, slope, .. } => (intercept - slope * x).max(0.0),
            DemandSpec::Exponential { scale, rate, .. } => scale * (-rate * x).exp(),
            DemandSpec::PowerLaw { scale, exponent, .. } => scale * (1.0 - x / t).max(0.0).powf(*exponent),
            DemandSpec::Tabulated { points } => {
                let k = segment(points, x);
                let (a, b) = (points[k], points[k + 1]);
                let w = (x - a[0]) / (b[0] - a[0]);
                a[1] + w * (b[1] - a[1])
            }
        }
    }

    /// `λ'(x)`; at tabulated knots the slope of the segment to the right is used.
    pub fn derivative(&self, x: f64) -> f64 {
        let t = self.support;
        let x = x.clamp(0.0, t);
        match &self.spec {
            DemandSpec::Uniform { .. } => 0.0,
            DemandSpec::Linear { slope, .. } => -slope,
            DemandSpec::Exponential { scale, rate, .. } => -rate * scale * (-rate * x).exp(),
            DemandSpec::PowerLaw { scale, exponent, .. } => {
                let u = (1.0 - x / t).max(0.0);
                if *exponent == 1.0 {
                    -scale / t
                } else if u == 0.0 {
                    if *exponent < 1.0 { f64::NEG_INFINITY } else { 0.0 }
                } else {
                    -scale * exponent / t * u.powf(exponent - 1.0)
                }
            }
            DemandSpec::Tabulated { points } => {
                let k = segment(points, x);
                let (a, b) = (points[k], points[k + 1]);
                (b[1] - a[1]) / (b[0] - a[0])
            }
        }
    }

    pub fn query(&self, x: f64) -> Result<DemandPoint, FunctionError> {
        self.check_inside(x)?;
        let value = self.value(x);
        let derivative = self.derivative(x);
        let hazard = (value > 0.0).then(|| -derivative / value);
        Ok(DemandPoint { value, derivative, hazard })
    }

    pub fn hazard(&self, x: f64) -> Result<f64, FunctionError> {
        self.query(x)?.hazard.ok_or(FunctionError::HazardUndefined { x })
    }

    fn check_inside(&self, x: f64) -> Result<(), FunctionError> {
        let slack = 1e-12 * self.support.max(1.0);
        if x.is_nan() || x < -slack || x > self.support + slack {
            Err(FunctionError::OutsideSupport { x, support: self.support })
        } else {
            Ok(())
        }
    }

    /// Best-response quantity `sup { x in [0, T] : λ(x) >= p }`, or 0 when the set is empty.
    pub fn inverse(&self, p: f64) -> f64 {
        let t = self.support;
        if p <= self.floor() {
            return t;
        }
        if p > self.peak() {
            return 0.0;
        }
        let x = match &self.spec {
            DemandSpec::Uniform { .. } => t,
            DemandSpec::Linear { intercept, slope, .. } => (intercept - p) / slope,
            DemandSpec::Exponential { scale, rate, .. } => (scale / p).ln() / rate,
            DemandSpec::PowerLaw { scale, exponent, .. } => t * (1.0 - (p / scale).powf(1.0 / exponent)),
            DemandSpec::Tabulated { points } => {
                let k = points.partition_point(|q| q[1] >= p);
                if k == points.len() {
                    t
                } else if k == 0 {
                    0.0
                } else {
                    let (a, b) = (points[k - 1], points[k]);
                    a[0] + (a[1] - p) / (a[1] - b[1]) * (b[0] - a[0])
                }
            }
        };
        x.clamp(0.0, t)
    }

    /// `inf { x in [0, T] : λ(x) <= p }`, or `T` when the set is empty.
    pub fn lower_inverse(&self, p: f64) -> f64 {
        let t = self.support;
        if p >= self.peak() {
            return 0.0;
        }
        if p < self.floor() {
            return t;
        }
        let x = match &self.spec {
            DemandSpec::Uniform { .. } => 0.0,
            DemandSpec::Tabulated { points } => {
                let k = points.partition_point(|q| q[1] > p);
                if k == 0 {
                    0.0
                } else if k == points.len() {
                    t
                } else {
                    let (a, b) = (points[k - 1], points[k]);
                    a[0] + (a[1] - p) / (a[1] - b[1]) * (b[0] - a[0])
                }
            }
            _ => self.inverse(p),
        };
        x.clamp(0.0, t)
    }

    /// `∫_0^x λ`, with `x` clamped into the support.
    pub fn antiderivative(&self, x: f64) -> f64 {
        let t = self.support;
        let x = x.clamp(0.0, t);
        match &self.spec {
            DemandSpec::Uniform { value, .. } => value * x,
            DemandSpec::Linear { intercept, slope, .. } => intercept * x - 0.5 * slope * x * x,
            DemandSpec::Exponential { scale, rate, .. } => {
                if *rate == 0.0 {
                    scale * x
                } else {
                    scale * (-(-rate * x).exp_m1()) / rate
                }
            }
            DemandSpec::PowerLaw { scale, exponent, .. } => {
                let u = (1.0 - x / t).max(0.0);
                scale * t / (exponent + 1.0) * (1.0 - u.powf(exponent + 1.0))
            }
            DemandSpec::Tabulated { points } => {
                let mut acc = 0.0;
                for w in points.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    if x <= a[0] {
                        break;
                    }
                    let end = x.min(b[0]);
                    let v_end = a[1] + (end - a[0]) / (b[0] - a[0]) * (b[1] - a[1]);
                    acc += 0.5 * (a[1] + v_end) * (end - a[0]);
                }
                acc
            }
        }
    }

    /// `∫_a^b λ` for `0 <= a <= b <= T`.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64, FunctionError> {
        self.check_inside(a)?;
        self.check_inside(b)?;
        if b < a {
            return Err(invalid("b", format!("upper limit {b} is below lower limit {a}")));
        }
        Ok(self.antiderivative(b) - self.antiderivative(a))
    }

    /// Checks that the hazard rate is non-decreasing on an interior uniform grid.
    pub fn check_mhr(&self, grid: usize) -> Result<MhrCertificate, FunctionError> {
        mhr_on_grid(grid, self.support, |x| (self.value(x), self.derivative(x)))
    }
}

/// Grid MHR check for an arbitrary `(value, derivative)` oracle on `(0, support)`.
pub fn mhr_on_grid(
    grid: usize,
    support: f64,
    f: impl Fn(f64) -> (f64, f64),
) -> Result<MhrCertificate, FunctionError> {
    if grid < 2 {
        return Err(FunctionError::GridTooSmall(grid));
    }
    let mut worst = 0.0f64;
    let mut location = None;
    let mut prev: Option<f64> = None;
    for j in 0..grid {
        let x = support * (j as f64 + 0.5) / grid as f64;
        let (v, d) = f(x);
        if v <= 1e-300 {
            continue;
        }
        let h = -d / v;
        if let Some(hp) = prev {
            let drop = (hp - h) / (1.0 + hp.abs());
            if drop > worst {
                worst = drop;
                location = Some(x);
            }
        }
        prev = Some(h);
    }
    Ok(MhrCertificate { passes: worst <= MHR_TOL, grid, worst_violation: worst, location })
}

const MHR_TOL: f64 = 1e-9;

fn segment(points: &[[f64; 2]], x: f64) -> usize {
    let k = points.partition_point(|q| q[0] <= x);
    k.saturating_sub(1).min(points.len() - 2)
}

fn default_ramp() -> f64 {
    1e-3
}

/// Serialized form of a production-cost curve, tagged by family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    Zero {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capacity: Option<f64>,
    },
    /// `rate * y`.
    Linear {
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capacity: Option<f64>,
    },
    /// `coef * y^2`.
    Quadratic {
        coef: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capacity: Option<f64>,
    },
    /// `coef * y^exponent` with `exponent >= 1`.
    Power {
        coef: f64,
        exponent: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capacity: Option<f64>,
    },
    /// Marginal `rate` up to `(1 - ramp) * capacity`, then rising as `rate + height * s^2`
    /// over the last `ramp` fraction of capacity.
    CapacitatedSmoothed {
        rate: f64,
        capacity: f64,
        height: f64,
        #[serde(default = "default_ramp")]
        ramp: f64,
    },
}

/// A validated convex production cost `C(y)` with marginal `c(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CostSpec", into = "CostSpec")]
pub struct CostFn {
    spec: CostSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostPoint {
    pub total: f64,
    pub marginal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCertificate {
    pub passes: bool,
    pub grid: usize,
    /// Marginal at zero; must vanish for double convexity.
    pub floor: f64,
    pub worst_violation: f64,
    pub location: Option<f64>,
}

impl TryFrom<CostSpec> for CostFn {
    type Error = FunctionError;

    fn try_from(spec: CostSpec) -> Result<Self, FunctionError> {
        let cap = match &spec {
            CostSpec::Zero { capacity } => *capacity,
            CostSpec::Linear { rate, capacity } => {
                require_nonnegative("rate", *rate)?;
                *capacity
            }
            CostSpec::Quadratic { coef, capacity } => {
                require_nonnegative("coef", *coef)?;
                *capacity
            }
            CostSpec::Power { coef, exponent, capacity } => {
                require_nonnegative("coef", *coef)?;
                require_finite("exponent", *exponent)?;
                if *exponent < 1.0 {
                    return Err(invalid("exponent", "must be at least 1 for a convex cost"));
                }
                *capacity
            }
            CostSpec::CapacitatedSmoothed { rate, capacity, height, ramp } => {
                require_nonnegative("rate", *rate)?;
                require_nonnegative("height", *height)?;
                require_positive("ramp", *ramp)?;
                if *ramp > 1.0 {
                    return Err(invalid("ramp", "must not exceed 1"));
                }
                Some(*capacity)
            }
        };
        if let Some(c) = cap {
            require_positive("capacity", c)?;
        }
        Ok(CostFn { spec })
    }
}

impl From<CostFn> for CostSpec {
    fn from(f: CostFn) -> Self {
        f.spec
    }
}

impl CostFn {
    pub fn new(spec: CostSpec) -> Result<Self, FunctionError> {
        Self::try_from(spec)
    }

    pub fn zero() -> Self {
        CostFn { spec: CostSpec::Zero { capacity: None } }
    }

    pub fn linear(rate: f64) -> Result<Self, FunctionError> {
        Self::new(CostSpec::Linear { rate, capacity: None })
    }

    pub fn quadratic(coef: f64) -> Result<Self, FunctionError> {
        Self::new(CostSpec::Quadratic { coef, capacity: None })
    }

    pub fn power(coef: f64, exponent: f64) -> Result<Self, FunctionError> {
        Self::new(CostSpec::Power { coef, exponent, capacity: None })
    }

    pub fn smoothed(rate: f64, capacity: f64, height: f64) -> Result<Self, FunctionError> {
        Self::new(CostSpec::CapacitatedSmoothed { rate, capacity, height, ramp: default_ramp() })
    }

    /// Returns a copy with a hard capacity; the smoothed family keeps its own.
    pub fn with_capacity(self, cap: f64) -> Result<Self, FunctionError> {
        let spec = match self.spec {
            CostSpec::Zero { .. } => CostSpec::Zero { capacity: Some(cap) },
            CostSpec::Linear { rate, .. } => CostSpec::Linear { rate, capacity: Some(cap) },
            CostSpec::Quadratic { coef, .. } => CostSpec::Quadratic { coef, capacity: Some(cap) },
            CostSpec::Power { coef, exponent, .. } => CostSpec::Power { coef, exponent, capacity: Some(cap) },
            CostSpec::CapacitatedSmoothed { rate, height, ramp, .. } => {
                CostSpec::CapacitatedSmoothed { rate, capacity: cap, height, ramp }
            }
        };
        Self::new(spec)
    }

    pub fn spec(&self) -> &CostSpec {
        &self.spec
    }

    pub fn family(&self) -> &'static str {
        match self.spec {
            CostSpec::Zero { .. } => "zero",
            CostSpec::Linear { .. } => "linear",
            CostSpec::Quadratic { .. } => "quadratic",
            CostSpec::Power { .. } => "power",
            CostSpec::CapacitatedSmoothed { .. } => "capacitated-smoothed",
        }
    }

    pub fn capacity(&self) -> Option<f64> {
        match &self.spec {
            CostSpec::Zero { capacity }
            | CostSpec::Linear { capacity, .. }
            | CostSpec::Quadratic { capacity, .. }
            | CostSpec::Power { capacity, .. } => *capacity,
            CostSpec::CapacitatedSmoothed { capacity, .. } => Some(*capacity),
        }
    }

    fn over_capacity(&self, y: f64) -> bool {
        self.capacity().is_some_and(|c| y > c * (1.0 + 1e-12))
    }

    /// `C(y)`; infinite beyond capacity.
    pub fn total(&self, y: f64) -> f64 {
        if self.over_capacity(y) {
            return f64::INFINITY;
        }
        let y = y.max(0.0);
        match &self.spec {
            CostSpec::Zero { .. } => 0.0,
            CostSpec::Linear { rate, .. } => rate * y,
            CostSpec::Quadratic { coef, .. } => coef * y * y,
            CostSpec::Power { coef, exponent, .. } => coef * y.powf(*exponent),
            CostSpec::CapacitatedSmoothed { rate, capacity, height, ramp } => {
                let w = ramp * capacity;
                let s = ((y - (capacity - w)) / w).clamp(0.0, 1.0);
                rate * y + height * w * s * s * s / 3.0
            }
        }
    }

    /// `c(y)`; infinite beyond capacity.
    pub fn marginal(&self, y: f64) -> f64 {
        if self.over_capacity(y) {
            return f64::INFINITY;
        }
        let y = y.max(0.0);
        match &self.spec {
            CostSpec::Zero { .. } => 0.0,
            CostSpec::Linear { rate, .. } => *rate,
            CostSpec::Quadratic { coef, .. } => 2.0 * coef * y,
            CostSpec::Power { coef, exponent, .. } => {
                if *exponent == 1.0 {
                    *coef
                } else {
                    coef * exponent * y.powf(exponent - 1.0)
                }
            }
            CostSpec::CapacitatedSmoothed { rate, capacity, height, ramp } => {
                let w = ramp * capacity;
                let s = ((y - (capacity - w)) / w).clamp(0.0, 1.0);
                rate + height * s * s
            }
        }
    }

    pub fn query(&self, y: f64) -> Result<CostPoint, FunctionError> {
        if y.is_nan() || y < 0.0 {
            return Err(invalid("y", format!("quantity must be non-negative, got {y}")));
        }
        if let Some(capacity) = self.capacity().filter(|_| self.over_capacity(y)) {
            return Err(FunctionError::BeyondCapacity { y, capacity });
        }
        Ok(CostPoint { total: self.total(y), marginal: self.marginal(y) })
    }

    /// `sup { y in [0, Y] : c(y) <= m }`, or 0 when `m < c(0)`. Flat marginals yield the
    /// capacity, or infinity when uncapacitated.
    pub fn upper_quantity(&self, m: f64) -> f64 {
        let cap = self.capacity().unwrap_or(f64::INFINITY);
        if m.is_nan() || m < self.marginal(0.0) {
            return 0.0;
        }
        let y = match &self.spec {
            CostSpec::Zero { .. } => f64::INFINITY,
            CostSpec::Linear { .. } => f64::INFINITY,
            CostSpec::Quadratic { coef, .. } => {
                if *coef == 0.0 { f64::INFINITY } else { m / (2.0 * coef) }
            }
            CostSpec::Power { coef, exponent, .. } => {
                if *coef == 0.0 || *exponent == 1.0 {
                    if m >= *coef { f64::INFINITY } else { 0.0 }
                } else {
                    (m / (coef * exponent)).powf(1.0 / (exponent - 1.0))
                }
            }
            CostSpec::CapacitatedSmoothed { rate, capacity, height, ramp } => {
                let w = ramp * capacity;
                if *height == 0.0 || m >= rate + height {
                    *capacity
                } else {
                    capacity - w + w * ((m - rate) / height).sqrt()
                }
            }
        };
        y.min(cap)
    }

    /// `sup { y : c(y) <= m }`; errors when `m < c(0)`.
    pub fn marginal_inverse(&self, m: f64) -> Result<f64, FunctionError> {
        let floor = self.marginal(0.0);
        if m.is_nan() || m < floor {
            return Err(FunctionError::BelowFloor { m, floor });
        }
        Ok(self.upper_quantity(m))
    }

    fn check_horizon(&self) -> f64 {
        self.capacity().unwrap_or(1.0)
    }

    /// Checks that `c` is non-decreasing on a uniform grid over `[0, Y]` (or `[0, 1]`).
    pub fn check_convex(&self, grid: usize) -> Result<ConvexityCertificate, FunctionError> {
        if grid < 2 {
            return Err(FunctionError::GridTooSmall(grid));
        }
        let h = self.check_horizon();
        let mut worst = 0.0f64;
        let mut location = None;
        let mut prev = self.marginal(0.0);
        for j in 1..=grid {
            let y = h * j as f64 / grid as f64;
            let c = self.marginal(y);
            let drop = (prev - c) / (1.0 + prev.abs());
            if drop > worst {
                worst = drop;
                location = Some(y);
            }
            prev = c;
        }
        Ok(ConvexityCertificate {
            passes: worst <= 1e-12,
            grid,
            floor: self.marginal(0.0),
            worst_violation: worst,
            location,
        })
    }

    /// Checks `c(0) = 0` and convexity of `c` via second differences on a uniform grid.
    pub fn check_doubly_convex(&self, grid: usize) -> Result<ConvexityCertificate, FunctionError> {
        if grid < 3 {
            return Err(FunctionError::GridTooSmall(grid));
        }
        let h = self.check_horizon();
        let step = h / (grid - 1) as f64;
        let c: Vec<f64> = (0..grid).map(|j| self.marginal(step * j as f64)).collect();
        let scale = c.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut worst = 0.0f64;
        let mut location = None;
        for j in 1..grid - 1 {
            let second = c[j + 1] - 2.0 * c[j] + c[j - 1];
            let v = -second / scale;
            if v > worst {
                worst = v;
                location = Some(step * j as f64);
            }
        }
        let floor = c[0];
        Ok(ConvexityCertificate {
            passes: worst <= 1e-9 && floor.abs() <= 1e-12,
            grid,
            floor,
            worst_violation: worst,
            location,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_query_matches_closed_form() {
        let f = DemandFn::linear(1.0, 1.0, 1.0).unwrap();
        let q = f.query(0.25).unwrap();
        assert_eq!(q.value, 0.75);
        assert_eq!(q.derivative, -1.0);
        assert!((q.hazard.unwrap() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_has_zero_hazard_and_full_plateau() {
        let f = DemandFn::uniform(2.0, 1.0).unwrap();
        assert_eq!(f.query(0.3).unwrap().hazard, Some(0.0));
        assert_eq!(f.inverse(2.0), 1.0);
        assert_eq!(f.inverse(2.0 + 1e-12), 0.0);
        assert_eq!(f.inverse(0.5), 1.0);
        assert_eq!(f.lower_inverse(2.0), 0.0);
        assert_eq!(f.lower_inverse(1.0), 1.0);
    }

    #[test]
    fn query_outside_support_errors() {
        let f = DemandFn::linear(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(f.query(1.5), Err(FunctionError::OutsideSupport { .. })));
        assert!(matches!(f.hazard(1.0), Err(FunctionError::HazardUndefined { .. })));
    }

    #[test]
    fn inverse_clamps_below_floor() {
        let f = DemandFn::exponential(1.0, 1.0, 2.0).unwrap();
        assert_eq!(f.inverse(0.0), 2.0);
        assert_eq!(f.inverse(1.5), 0.0);
        assert!((f.inverse(0.5) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tabulated_plateau_uses_supremum() {
        let f = DemandFn::tabulated(vec![[0.0, 1.0], [0.5, 0.6], [1.0, 0.6], [2.0, 0.0]]).unwrap();
        assert_eq!(f.inverse(0.6), 1.0);
        assert_eq!(f.lower_inverse(0.6), 0.5);
        assert!((f.inverse(0.8) - 0.25).abs() < 1e-15);
        assert!((f.integral(0.0, 2.0).unwrap() - (0.4 + 0.3 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn tabulated_rejects_increasing_values() {
        let r = DemandFn::tabulated(vec![[0.0, 1.0], [1.0, 1.2]]);
        assert!(matches!(r, Err(FunctionError::InvalidParameter { field: "points", .. })));
    }

    #[test]
    fn spliced_exponentials_fail_mhr() {
        // rate 2 on [0, 1] followed by rate 0.5: the hazard drops at the splice
        let mut pts = Vec::new();
        for j in 0..=40 {
            let x = j as f64 / 20.0;
            let v = if x <= 1.0 { (-2.0 * x).exp() } else { (-2.0f64).exp() * (-0.5 * (x - 1.0)).exp() };
            pts.push([x, v]);
        }
        let f = DemandFn::tabulated(pts).unwrap();
        let cert = f.check_mhr(1024).unwrap();
        assert!(!cert.passes);
        let loc = cert.location.unwrap();
        assert!((loc - 1.0).abs() < 0.06, "violation located at {loc}");
    }

    #[test]
    fn standard_families_pass_mhr() {
        for f in [
            DemandFn::uniform(2.0, 1.0).unwrap(),
            DemandFn::linear(1.0, 1.0, 1.0).unwrap(),
            DemandFn::exponential(3.0, 1.5, 4.0).unwrap(),
            DemandFn::power_law(1.0, 2.5, 3.0).unwrap(),
            DemandFn::power_law(1.0, 0.5, 3.0).unwrap(),
            DemandFn::tabulated(vec![[0.0, 1.0], [0.5, 0.9], [1.0, 0.6], [1.5, 0.0]]).unwrap(),
        ] {
            let cert = f.check_mhr(1024).unwrap();
            assert!(cert.passes, "{} failed: {cert:?}", f.family());
        }
    }

    #[test]
    fn grid_must_have_two_points() {
        let f = DemandFn::linear(1.0, 1.0, 1.0).unwrap();
        assert_eq!(f.check_mhr(1), Err(FunctionError::GridTooSmall(1)));
    }

    #[test]
    fn marginal_inverse_examples() {
        let z = CostFn::zero().with_capacity(10.0).unwrap();
        assert_eq!(z.marginal_inverse(1.0).unwrap(), 10.0);
        let q = CostFn::quadratic(1.0).unwrap().with_capacity(1.0).unwrap();
        assert_eq!(q.marginal_inverse(1e9).unwrap(), 1.0);
        assert_eq!(q.marginal_inverse(1.0).unwrap(), 0.5);
        let l = CostFn::linear(0.5).unwrap();
        assert!(matches!(l.marginal_inverse(0.2), Err(FunctionError::BelowFloor { .. })));
        assert_eq!(l.marginal_inverse(0.5).unwrap(), f64::INFINITY);
    }

    #[test]
    fn cost_beyond_capacity_errors() {
        let q = CostFn::quadratic(1.0).unwrap().with_capacity(1.0).unwrap();
        assert!(matches!(q.query(1.5), Err(FunctionError::BeyondCapacity { .. })));
        assert_eq!(q.marginal(1.5), f64::INFINITY);
        assert_eq!(q.query(0.5).unwrap(), CostPoint { total: 0.25, marginal: 1.0 });
    }

    #[test]
    fn smoothed_ramp_is_continuous_and_reaches_capacity() {
        let c = CostFn::smoothed(0.2, 2.0, 5.0).unwrap();
        let start = 2.0 * (1.0 - 1e-3);
        assert_eq!(c.marginal(start), 0.2);
        assert!((c.marginal(2.0) - 5.2).abs() < 1e-12);
        assert_eq!(c.upper_quantity(6.0), 2.0);
        let y = c.upper_quantity(1.45);
        assert!((c.marginal(y) - 1.45).abs() < 1e-12);
        assert_eq!(c.upper_quantity(0.2), start);
    }

    #[test]
    fn doubly_convex_examples() {
        assert!(!CostFn::power(1.0, 1.5).unwrap().check_doubly_convex(256).unwrap().passes);
        assert!(CostFn::quadratic(1.0).unwrap().check_doubly_convex(256).unwrap().passes);
        assert!(CostFn::zero().check_doubly_convex(256).unwrap().passes);
        assert!(CostFn::power(0.5, 3.0).unwrap().check_doubly_convex(256).unwrap().passes);
        assert!(!CostFn::linear(0.3).unwrap().check_doubly_convex(256).unwrap().passes);
    }

    #[test]
    fn specs_round_trip_through_json() {
        let f = DemandFn::power_law(2.0, 1.5, 3.0).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"family":"power-law","scale":2.0,"exponent":1.5,"support":3.0}"#);
        assert_eq!(serde_json::from_str::<DemandFn>(&s).unwrap(), f);
        let c: CostFn = serde_json::from_str(r#"{"family":"capacitated-smoothed","rate":0,"capacity":1,"height":2}"#).unwrap();
        assert_eq!(c.capacity(), Some(1.0));
        assert!(serde_json::from_str::<DemandFn>(r#"{"family":"linear","intercept":1,"slope":-1,"support":1}"#).is_err());
        assert!(serde_json::from_str::<CostFn>(r#"{"family":"zero","extra":1}"#).is_err());
    }
}
