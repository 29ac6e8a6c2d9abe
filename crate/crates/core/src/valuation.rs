//! Value distributions, virtual values and the generic ironing path.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Anything with a density, a CDF and a quantile function. Implemented by
/// [`ValueDistribution`]; tests use it to iron non-regular mixtures.
pub trait ContinuousDistribution {
    fn pdf(&self, v: f64) -> f64;
    fn cdf(&self, v: f64) -> f64;
    /// Inverse CDF for `p` in `[0, 1]`; may return infinity at `p = 1`.
    fn quantile(&self, p: f64) -> f64;
    /// `(lo, hi)`; `hi` is infinite for unbounded support.
    fn support(&self) -> (f64, f64);

    /// `v - (1 - F(v)) / f(v)`; infinite or NaN where the density vanishes.
    fn raw_virtual_value(&self, v: f64) -> f64 {
        v - (1.0 - self.cdf(v)) / self.pdf(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistRepr", into = "DistRepr")]
pub enum ValueDistribution {
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
}

#[derive(Serialize, Deserialize)]
struct DistRepr {
    kind: String,
    params: Vec<f64>,
}

impl TryFrom<DistRepr> for ValueDistribution {
    type Error = CoreError;

    fn try_from(r: DistRepr) -> Result<Self> {
        match (r.kind.as_str(), r.params.as_slice()) {
            ("uniform", &[lo, hi]) => Self::uniform(lo, hi),
            ("exponential", &[rate]) => Self::exponential(rate),
            (kind, params) => Err(CoreError::InvalidDistribution(format!(
                "unknown distribution `{kind}` with {} params",
                params.len()
            ))),
        }
    }
}

impl From<ValueDistribution> for DistRepr {
    fn from(d: ValueDistribution) -> Self {
        match d {
            ValueDistribution::Uniform { lo, hi } => DistRepr { kind: "uniform".into(), params: vec![lo, hi] },
            ValueDistribution::Exponential { rate } => DistRepr { kind: "exponential".into(), params: vec![rate] },
        }
    }
}

impl fmt::Display for ValueDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform { lo, hi } => write!(f, "Uniform({lo}, {hi})"),
            Self::Exponential { rate } => write!(f, "Exponential({rate})"),
        }
    }
}

impl ValueDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
            return Err(CoreError::InvalidDistribution(format!("uniform needs 0 <= lo < hi, got ({lo}, {hi})")));
        }
        Ok(Self::Uniform { lo, hi })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(CoreError::InvalidDistribution(format!("exponential rate must be positive, got {rate}")));
        }
        Ok(Self::Exponential { rate })
    }

    /// Uniform(0, 1).
    pub fn standard_uniform() -> Self {
        Self::Uniform { lo: 0.0, hi: 1.0 }
    }

    /// `(f(v), F(v))`.
    pub fn eval(&self, v: f64) -> (f64, f64) {
        (self.pdf(v), self.cdf(v))
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::Exponential { rate } => 1.0 / rate,
        }
    }

    pub fn in_support(&self, v: f64) -> bool {
        let (lo, hi) = self.support();
        v >= lo && v <= hi
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match *self {
            Self::Uniform { lo, hi } => lo + u * (hi - lo),
            Self::Exponential { rate } => -(1.0 - u).ln() / rate,
        }
    }

    /// Closed-form `φ(v) = v - (1 - F(v)) / f(v)`. Both families are regular,
    /// so this is also the ironed virtual value.
    pub fn virtual_value(&self, v: f64) -> Result<f64> {
        if !self.in_support(v) {
            return Err(CoreError::OutsideSupport { value: v, dist: self.to_string() });
        }
        Ok(self.virtual_value_extended(v))
    }

    /// The closed form continued past the support (`2v - hi` for uniform,
    /// `v - 1/λ` for exponential). Mechanisms use this so that a misreport
    /// outside the support still gets a monotone score.
    pub fn virtual_value_extended(&self, v: f64) -> f64 {
        match *self {
            Self::Uniform { hi, .. } => 2.0 * v - hi,
            Self::Exponential { rate } => v - 1.0 / rate,
        }
    }
}

impl ContinuousDistribution for ValueDistribution {
    fn pdf(&self, v: f64) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => {
                if (lo..=hi).contains(&v) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Self::Exponential { rate } => {
                if v >= 0.0 {
                    rate * (-rate * v).exp()
                } else {
                    0.0
                }
            }
        }
    }

    fn cdf(&self, v: f64) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => ((v - lo) / (hi - lo)).clamp(0.0, 1.0),
            Self::Exponential { rate } => {
                if v <= 0.0 {
                    0.0
                } else {
                    1.0 - (-rate * v).exp()
                }
            }
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => lo + p.clamp(0.0, 1.0) * (hi - lo),
            Self::Exponential { rate } => -(1.0 - p.clamp(0.0, 1.0)).ln() / rate,
        }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            Self::Uniform { lo, hi } => (lo, hi),
            Self::Exponential { .. } => (0.0, f64::INFINITY),
        }
    }

    fn raw_virtual_value(&self, v: f64) -> f64 {
        self.virtual_value_extended(v)
    }
}

/// Upper quantile cut for unbounded supports: the grid stops at
/// `F⁻¹(UNBOUNDED_TOP)`.
pub const UNBOUNDED_TOP: f64 = 0.9999;

/// Ironed virtual values on a grid, stored in increasing value order.
#[derive(Clone, Debug, PartialEq)]
pub struct IronedCurve {
    /// Quantile `q = 1 - F(v)` of each grid point.
    pub quantiles: Vec<f64>,
    pub values: Vec<f64>,
    /// Nondecreasing in `values`.
    pub phi: Vec<f64>,
}

impl IronedCurve {
    /// Piecewise-linear interpolation; constant beyond the grid ends.
    pub fn eval(&self, v: f64) -> f64 {
        let n = self.values.len();
        if v <= self.values[0] {
            return self.phi[0];
        }
        if v >= self.values[n - 1] {
            return self.phi[n - 1];
        }
        let j = self.values.partition_point(|&x| x <= v);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        let (p0, p1) = (self.phi[j - 1], self.phi[j]);
        if v1 == v0 {
            return p1;
        }
        p0 + (p1 - p0) * (v - v0) / (v1 - v0)
    }
}

/// Irons `d` on `m` quantile points, linear in `q`, through the concave hull
/// of the revenue curve `R(q) = q F⁻¹(1 - q)`.
///
/// On hull vertices the value is the exact curve slope `R'(q) = φ(v)`, kept
/// between the slopes of the two adjacent hull segments; inside an ironed
/// interval it is the chord slope. Unbounded supports are cut at
/// [`UNBOUNDED_TOP`].
pub fn iron_curve<D: ContinuousDistribution + ?Sized>(d: &D, m: usize) -> Result<IronedCurve> {
    if m < 2 {
        return Err(CoreError::InvalidDistribution(format!("ironing grid needs at least 2 points, got {m}")));
    }
    let (_, hi) = d.support();
    let q_min = if hi.is_finite() { 0.0 } else { 1.0 - UNBOUNDED_TOP };
    let qs: Vec<f64> = (0..m).map(|j| q_min + (1.0 - q_min) * j as f64 / (m - 1) as f64).collect();
    let vs: Vec<f64> = qs.iter().map(|&q| if q == 0.0 { hi } else { d.quantile(1.0 - q) }).collect();

    // Hull points in increasing q; the origin anchors truncated supports.
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(m + 1);
    if q_min > 0.0 {
        pts.push((0.0, 0.0));
    }
    let offset = pts.len();
    pts.extend(qs.iter().zip(&vs).map(|(&q, &v)| (q, q * v)));

    let mut hull: Vec<usize> = Vec::new();
    for i in 0..pts.len() {
        while hull.len() >= 2 {
            let (a, b) = (pts[hull[hull.len() - 2]], pts[hull[hull.len() - 1]]);
            let c = pts[i];
            let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let slope = |a: usize, b: usize| (pts[b].1 - pts[a].1) / (pts[b].0 - pts[a].0);

    let mut phi_q = vec![0.0; m];
    let mut seg = 0;
    for j in 0..m {
        let p = j + offset;
        while seg + 1 < hull.len() && hull[seg + 1] < p {
            seg += 1;
        }
        if hull[seg] == p || (seg + 1 < hull.len() && hull[seg + 1] == p) {
            let h = if hull[seg] == p { seg } else { seg + 1 };
            let left = (h > 0).then(|| slope(hull[h - 1], hull[h]));
            let right = (h + 1 < hull.len()).then(|| slope(hull[h], hull[h + 1]));
            let raw = d.raw_virtual_value(vs[j]);
            phi_q[j] = match (left, right) {
                (Some(l), Some(r)) if raw.is_finite() => raw.clamp(r, l),
                (Some(l), Some(r)) => 0.5 * (l + r),
                (Some(l), None) if raw.is_finite() => raw.min(l),
                (Some(l), None) => l,
                (None, Some(r)) if raw.is_finite() => raw.max(r),
                (None, Some(r)) => r,
                (None, None) => raw,
            };
        } else {
            phi_q[j] = slope(hull[seg], hull[seg + 1]);
        }
    }

    let mut quantiles = qs;
    let mut values = vs;
    quantiles.reverse();
    values.reverse();
    phi_q.reverse();
    Ok(IronedCurve { quantiles, values, phi: phi_q })
}
