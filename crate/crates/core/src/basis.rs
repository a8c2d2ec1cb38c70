//! Univariate basis families and bounded activations.
//!
//! Both basis families are clamped uniform B-splines on a closed interval:
//! the hat basis is the degree-1 case and the cubic basis the degree-3 case.
//! Evaluation uses the triangular Cox-de Boor recurrence on the clamped knot
//! vector, and derivatives use the knot-difference recurrences on the same
//! table, so one routine serves both families.
//!
//! Inputs outside `[lo, hi]` are clamped for values; derivatives vanish there
//! because the clamped function is constant outside the interval.

use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};

/// Largest supported spline degree (cubic).
const MAX_DEGREE: usize = 3;
/// Largest number of basis functions that can be non-zero at one point.
pub const MAX_SUPPORT: usize = MAX_DEGREE + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    /// Piecewise-linear "triangular" functions centered at uniform knots.
    Hat,
    /// Clamped uniform cubic B-splines (C² inside the interval).
    CubicBspline,
}

impl BasisFamily {
    pub fn degree(self) -> usize {
        match self {
            BasisFamily::Hat => 1,
            BasisFamily::CubicBspline => 3,
        }
    }

    /// Smallest admissible number of basis functions.
    pub fn min_count(self) -> usize {
        self.degree() + 1
    }
}

impl std::fmt::Display for BasisFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisFamily::Hat => write!(f, "hat"),
            BasisFamily::CubicBspline => write!(f, "cubic_bspline"),
        }
    }
}

impl std::str::FromStr for BasisFamily {
    type Err = KanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hat" => Ok(BasisFamily::Hat),
            "cubic" | "cubic_bspline" | "cubic-bspline" => Ok(BasisFamily::CubicBspline),
            other => Err(KanError::Config(format!("unknown basis family `{other}`"))),
        }
    }
}

/// A validated basis specification with its derived clamped knot vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpecRepr", into = "BasisSpecRepr")]
pub struct BasisSpec {
    family: BasisFamily,
    count: usize,
    lo: f64,
    hi: f64,
    /// Full clamped knot vector, length `count + degree + 1`.
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisSpecRepr {
    family: BasisFamily,
    p: usize,
    lo: f64,
    hi: f64,
}

impl TryFrom<BasisSpecRepr> for BasisSpec {
    type Error = KanError;
    fn try_from(r: BasisSpecRepr) -> Result<Self> {
        BasisSpec::new(r.family, r.p, r.lo, r.hi)
    }
}

impl From<BasisSpec> for BasisSpecRepr {
    fn from(b: BasisSpec) -> Self {
        BasisSpecRepr {
            family: b.family,
            p: b.count,
            lo: b.lo,
            hi: b.hi,
        }
    }
}

impl BasisSpec {
    pub fn new(family: BasisFamily, p: usize, lo: f64, hi: f64) -> Result<Self> {
        if p < family.min_count() {
            return Err(KanError::Config(format!(
                "{family} basis needs p >= {}, got {p}",
                family.min_count()
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(KanError::Config(format!(
                "basis domain [{lo}, {hi}] must be a finite non-empty interval"
            )));
        }
        let q = family.degree();
        let intervals = p - q;
        let mut knots = Vec::with_capacity(p + q + 1);
        knots.extend(std::iter::repeat_n(lo, q));
        for j in 0..=intervals {
            let t = if j == intervals {
                hi
            } else {
                lo + (hi - lo) * j as f64 / intervals as f64
            };
            knots.push(t);
        }
        knots.extend(std::iter::repeat_n(hi, q));
        Ok(BasisSpec {
            family,
            count: p,
            lo,
            hi,
            knots,
        })
    }

    /// Hat basis with `p` functions on `[-1, 1]`.
    pub fn hat(p: usize) -> Result<Self> {
        Self::new(BasisFamily::Hat, p, -1.0, 1.0)
    }

    /// Clamped cubic B-spline basis with `p` functions on `[-1, 1]`.
    pub fn cubic(p: usize) -> Result<Self> {
        Self::new(BasisFamily::CubicBspline, p, -1.0, 1.0)
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    /// Number of basis functions `p`.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn degree(&self) -> usize {
        self.family.degree()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knot_vector(&self) -> &[f64] {
        &self.knots
    }

    /// Distinct knots, strictly increasing from `lo` to `hi`.
    pub fn breakpoints(&self) -> &[f64] {
        let q = self.degree();
        &self.knots[q..self.knots.len() - q]
    }

    /// Knot spacing of the uniform interior grid.
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.count - self.degree()) as f64
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    /// Index `s` of the knot span with `t[s] <= v < t[s+1]`; the right
    /// endpoint belongs to the last span.
    fn find_span(&self, v: f64) -> usize {
        let q = self.degree();
        let last = self.count - 1;
        if v >= self.knots[last + 1] {
            return last;
        }
        if v <= self.knots[q] {
            return q;
        }
        let (mut low, mut high) = (q, last + 1);
        let mut mid = (low + high) / 2;
        while v < self.knots[mid] || v >= self.knots[mid + 1] {
            if v < self.knots[mid] {
                high = mid;
            } else {
                low = mid;
            }
            mid = (low + high) / 2;
        }
        mid
    }

    /// Non-zero basis values and their first two derivatives at `v`.
    ///
    /// The returned span covers indices `first..first + len`.
    pub fn span_jet(&self, v: f64) -> SpanJet {
        let inside = v >= self.lo && v <= self.hi;
        let v = self.clamp(v);
        let q = self.degree();
        let s = self.find_span(v);
        let t = &self.knots;

        let mut ndu = [[0.0f64; MAX_SUPPORT]; MAX_SUPPORT];
        let mut left = [0.0f64; MAX_SUPPORT];
        let mut right = [0.0f64; MAX_SUPPORT];
        ndu[0][0] = 1.0;
        for j in 1..=q {
            left[j] = v - t[s + 1 - j];
            right[j] = t[s + j] - v;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut jet = SpanJet {
            first: s - q,
            len: q + 1,
            val: [0.0; MAX_SUPPORT],
            d1: [0.0; MAX_SUPPORT],
            d2: [0.0; MAX_SUPPORT],
        };
        for r in 0..=q {
            jet.val[r] = ndu[r][q];
        }
        if !inside {
            return jet;
        }

        let nd = q.min(2);
        let mut ders = [[0.0f64; MAX_SUPPORT]; 3];
        for r in 0..=q {
            let mut a = [[0.0f64; MAX_SUPPORT]; 2];
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = q - k;
                if r >= k {
                    let rk = rk as usize;
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                    d = a[s2][0] * ndu[rk][pk];
                }
                let j1: usize = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2: usize = if r as isize - 1 <= pk as isize {
                    k - 1
                } else {
                    q - r
                };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = q as f64;
        for (k, row) in ders.iter_mut().enumerate().take(nd + 1).skip(1) {
            for x in row.iter_mut().take(q + 1) {
                *x *= factor;
            }
            factor *= (q - k) as f64;
        }
        jet.d1[..=q].copy_from_slice(&ders[1][..=q]);
        if nd >= 2 {
            jet.d2[..=q].copy_from_slice(&ders[2][..=q]);
        }
        jet
    }

    /// `(b_1(v), ..., b_p(v))`.
    pub fn eval(&self, v: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.count];
        self.span_jet(v).scatter_values(&mut out);
        out
    }

    /// Values, first and second derivatives of every basis function at `v`.
    ///
    /// The hat basis is only C⁰; its second derivative is reported as zero
    /// away from the knots.
    pub fn jet(&self, v: f64) -> BasisJet {
        let sj = self.span_jet(v);
        let mut jet = BasisJet {
            values: vec![0.0; self.count],
            d1: vec![0.0; self.count],
            d2: vec![0.0; self.count],
        };
        for r in 0..sj.len {
            jet.values[sj.first + r] = sj.val[r];
            jet.d1[sj.first + r] = sj.d1[r];
            jet.d2[sj.first + r] = sj.d2[r];
        }
        jet
    }
}

/// Dense jet of all `p` basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisJet {
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// Jet restricted to the (at most four) basis functions supported at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanJet {
    pub first: usize,
    pub len: usize,
    pub val: [f64; MAX_SUPPORT],
    pub d1: [f64; MAX_SUPPORT],
    pub d2: [f64; MAX_SUPPORT],
}

impl SpanJet {
    pub fn scatter_values(&self, out: &mut [f64]) {
        out[self.first..self.first + self.len].copy_from_slice(&self.val[..self.len]);
    }

    /// `<coef, h(v)>` using only the supported entries.
    #[inline]
    pub fn dot_values(&self, coef: &[f64]) -> f64 {
        let c = &coef[self.first..self.first + self.len];
        c.iter().zip(&self.val).map(|(a, b)| a * b).sum()
    }

    #[inline]
    pub fn dot_d1(&self, coef: &[f64]) -> f64 {
        let c = &coef[self.first..self.first + self.len];
        c.iter().zip(&self.d1).map(|(a, b)| a * b).sum()
    }

    #[inline]
    pub fn dot_d2(&self, coef: &[f64]) -> f64 {
        let c = &coef[self.first..self.first + self.len];
        c.iter().zip(&self.d2).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::Sigmoid => write!(f, "sigmoid"),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = KanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" | "logistic" => Ok(Activation::Sigmoid),
            other => Err(KanError::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// `(σ(u), σ'(u), σ''(u))`.
    #[inline]
    pub fn jet(self, u: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = u.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Sigmoid => {
                let s = sigmoid(u);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
        }
    }

    /// Known suprema `(sup|σ|, sup|σ'|, sup|σ''|)` over the real line.
    pub fn analytic_bounds(self) -> (f64, f64, f64) {
        let sqrt3 = 3.0f64.sqrt();
        match self {
            Activation::Tanh => (1.0, 1.0, 4.0 / (3.0 * sqrt3)),
            Activation::Sigmoid => (1.0, 0.25, 1.0 / (6.0 * sqrt3)),
        }
    }
}

/// Uniform bounds on the basis family and activation (and their derivatives).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub b: f64,
    pub b1: f64,
    /// `None` when the basis is not twice differentiable (hat family).
    pub b2: Option<f64>,
    pub sigma: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl BoundConstants {
    /// Second-derivative bound of the basis, or an error for C⁰ families.
    pub fn b2_checked(&self) -> Result<f64> {
        self.b2.ok_or_else(|| {
            KanError::Assumption(
                "hat basis is only C0: no finite bound on b'' exists".to_string(),
            )
        })
    }
}

/// Number of grid points used for dense sampling of the basis domain.
pub const BOUND_GRID_POINTS: usize = 20_001;

/// Uniform bounds for `basis` and `act`.
///
/// Each basis bound is the maximum of a dense grid sample and of the exact
/// piecewise-polynomial extrema: on every knot interval `b^(r)` is a
/// polynomial of degree `q - r`, so its maximum modulus is attained at an
/// interval end or at a root of `b^(r+1)`. Activation bounds combine a wide
/// grid with the analytic suprema.
pub fn bound_constants(basis: &BasisSpec, act: Activation) -> BoundConstants {
    let (lo, hi) = basis.domain();
    let p = basis.len();
    let mut mb = [0.0f64; 3];
    let absorb = |sj: &SpanJet, mb: &mut [f64; 3]| {
        for r in 0..sj.len {
            mb[0] = mb[0].max(sj.val[r].abs());
            mb[1] = mb[1].max(sj.d1[r].abs());
            mb[2] = mb[2].max(sj.d2[r].abs());
        }
    };
    for g in 0..BOUND_GRID_POINTS {
        let v = lo + (hi - lo) * g as f64 / (BOUND_GRID_POINTS - 1) as f64;
        absorb(&basis.span_jet(v), &mut mb);
    }

    // Exact candidates per knot interval.
    let bp = basis.breakpoints().to_vec();
    for w in bp.windows(2) {
        let (a, b) = (w[0], w[1]);
        let width = b - a;
        // Evaluate just inside both ends so one-sided limits are used.
        let ea = a + width * 1e-12;
        let eb = b - width * 1e-12;
        let mut candidates = vec![ea, eb, 0.5 * (a + b)];
        if basis.degree() == 3 {
            for k in 0..p {
                // b'' is linear on the interval: root of b'' gives extremum of b'.
                let (ja, jb) = (basis.jet(ea), basis.jet(eb));
                let (fa, fb) = (ja.d2[k], jb.d2[k]);
                if fa != fb && fa * fb <= 0.0 {
                    candidates.push(ea + (eb - ea) * fa / (fa - fb));
                }
                // b' is quadratic on the interval: fit through three points.
                let jm = basis.jet(0.5 * (ea + eb));
                for root in quadratic_roots_on(ea, eb, ja.d1[k], jm.d1[k], jb.d1[k]) {
                    candidates.push(root);
                }
            }
        }
        for v in candidates {
            absorb(&basis.span_jet(v.clamp(a, b)), &mut mb);
        }
    }

    let (s0, s1, s2) = act.analytic_bounds();
    let mut ms = [s0, s1, s2];
    let n = 200_001;
    for g in 0..n {
        let u = -40.0 + 80.0 * g as f64 / (n - 1) as f64;
        let (a, b, c) = act.jet(u);
        ms[0] = ms[0].max(a.abs());
        ms[1] = ms[1].max(b.abs());
        ms[2] = ms[2].max(c.abs());
    }

    BoundConstants {
        b: mb[0],
        b1: mb[1],
        b2: match basis.family() {
            BasisFamily::Hat => None,
            BasisFamily::CubicBspline => Some(mb[2]),
        },
        sigma: ms[0],
        sigma1: ms[1],
        sigma2: ms[2],
    }
}

/// Roots in `[a, b]` of the quadratic interpolating `(a, fa), (mid, fm), (b, fb)`.
fn quadratic_roots_on(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> Vec<f64> {
    // Work in t ∈ [0, 1]: f(t) = α t² + β t + γ.
    let gamma = fa;
    let alpha = 2.0 * fb - 4.0 * fm + 2.0 * fa;
    let beta = fb - fa - alpha;
    let mut roots = Vec::new();
    let scale = fa.abs().max(fm.abs()).max(fb.abs());
    if alpha.abs() <= 1e-14 * scale.max(1e-300) {
        if beta != 0.0 {
            roots.push(-gamma / beta);
        }
    } else {
        let disc = beta * beta - 4.0 * alpha * gamma;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            roots.push((-beta + sq) / (2.0 * alpha));
            roots.push((-beta - sq) / (2.0 * alpha));
        }
    }
    roots
        .into_iter()
        .filter(|t| (0.0..=1.0).contains(t))
        .map(|t| a + (b - a) * t)
        .collect()
}
