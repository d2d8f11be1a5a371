//! Discrepancy of Kronecker orbits and the bounds that control it.
//!
//! Arcs on the torus are closed, and degenerate arcs (single points) are
//! admitted, so the supremum defining the discrepancy is attained.

use serde::{Deserialize, Serialize};

use crate::arithmetic::{ConditionForm, DiophantineCondition, FrequencyProfile};
use crate::error::{invalid, Error, Result};

/// Which indices `n` an orbit runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexRange {
    /// `n = 1, …, N`
    #[default]
    Forward,
    /// `n = −N, …, N`
    Symmetric,
}

impl IndexRange {
    pub fn indices(self, n: u64) -> std::ops::RangeInclusive<i64> {
        match self {
            IndexRange::Forward => 1..=n as i64,
            IndexRange::Symmetric => -(n as i64)..=n as i64,
        }
    }

    pub fn len(self, n: u64) -> u64 {
        match self {
            IndexRange::Forward => n,
            IndexRange::Symmetric => 2 * n + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Kronecker { theta: Vec<f64>, alpha: Vec<f64>, n: u64, range: IndexRange },
    Explicit,
}

/// Points in `[0,1)^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
    pub provenance: Provenance,
}

/// Reduce to `[0,1)`, mapping a rounded-up `1.0` back to `0.0`.
#[inline]
pub(crate) fn wrap_unit(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

impl PointSet {
    pub fn explicit(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if coords.len() % dim != 0 {
            return Err(invalid("coordinate count is not a multiple of the dimension"));
        }
        if let Some(bad) = coords.iter().find(|x| !(0.0..1.0).contains(*x)) {
            return Err(invalid(format!("coordinate {bad} outside [0,1)")));
        }
        Ok(PointSet { dim, coords, provenance: Provenance::Explicit })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// `x_n = θ + nα mod 1` componentwise, in index order.
pub fn kronecker_orbit(theta: &[f64], alpha: &[f64], n: u64, range: IndexRange) -> Result<PointSet> {
    if theta.len() != alpha.len() || theta.is_empty() {
        return Err(invalid("theta and alpha must be non-empty and of equal dimension"));
    }
    if n == 0 {
        return Err(invalid("orbit length must be at least 1"));
    }
    let dim = theta.len();
    let mut coords = Vec::with_capacity(range.len(n) as usize * dim);
    for k in range.indices(n) {
        for (t, a) in theta.iter().zip(alpha) {
            let prod = k as f64 * a;
            coords.push(wrap_unit(t + (prod - prod.floor())));
        }
    }
    Ok(PointSet {
        dim,
        coords,
        provenance: Provenance::Kronecker { theta: theta.to_vec(), alpha: alpha.to_vec(), n, range },
    })
}

/// One-dimensional orbit using the profile's extended-precision `nα`.
pub fn kronecker_orbit_profile(theta: f64, profile: &FrequencyProfile, n: u64, range: IndexRange) -> Result<PointSet> {
    if n == 0 {
        return Err(invalid("orbit length must be at least 1"));
    }
    let mut coords = Vec::with_capacity(range.len(n) as usize);
    for k in range.indices(n) {
        let r = profile.signed_frac(k.unsigned_abs() as u128)?;
        let r = if k < 0 { -r } else { r };
        coords.push(wrap_unit(theta + r));
    }
    Ok(PointSet {
        dim: 1,
        coords,
        provenance: Provenance::Kronecker { theta: vec![theta], alpha: vec![profile.alpha()], n, range },
    })
}

/// Discrepancy of a point set.
///
/// For `d = 1` the value is exact: with sorted points `x_(1) ≤ … ≤ x_(N)`
/// and `y_k = k/N − x_(k)`, the supremum over closed arcs (wrapping ones
/// included) equals `1/N + max y − min y`. For `d = 2` see
/// [`grid_discrepancy_2d`]; higher dimensions are refused.
pub fn exact_discrepancy(ps: &PointSet) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    match ps.dim() {
        1 => {
            let mut xs = ps.coords().to_vec();
            xs.sort_by(f64::total_cmp);
            let n = xs.len() as f64;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (k, x) in xs.iter().enumerate() {
                let y = (k + 1) as f64 / n - x;
                lo = lo.min(y);
                hi = hi.max(y);
            }
            Ok((1.0 / n + hi - lo).min(1.0))
        }
        2 => Err(Error::Unsupported(
            "exact discrepancy is one-dimensional; use grid_discrepancy_2d".into(),
        )),
        d => Err(Error::Unsupported(format!("discrepancy in dimension {d} is refused"))),
    }
}

/// Grid approximation of the 2-d discrepancy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDiscrepancy {
    pub value: f64,
    /// Cell side `1/G`; rectangles have corners on this grid.
    pub resolution: f64,
}

/// Sup over wrap-around rectangles with corners on a `G × G` grid of
/// `|count/N − area|`, counting points in half-open cells.
pub fn grid_discrepancy_2d(ps: &PointSet, cells: usize) -> Result<GridDiscrepancy> {
    if ps.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if ps.dim() != 2 {
        return Err(invalid("grid discrepancy needs a 2-d point set"));
    }
    if !(2..=64).contains(&cells) {
        return Err(invalid("grid size must lie in 2..=64"));
    }
    let g = cells;
    let mut hist = vec![0u64; g * g];
    for i in 0..ps.len() {
        let p = ps.point(i);
        let a = ((p[0] * g as f64) as usize).min(g - 1);
        let b = ((p[1] * g as f64) as usize).min(g - 1);
        hist[a * g + b] += 1;
    }
    // prefix sums over the doubled (unwrapped) grid
    let w = 2 * g + 1;
    let mut pre = vec![0u64; w * w];
    for i in 0..2 * g {
        for j in 0..2 * g {
            pre[(i + 1) * w + j + 1] = hist[(i % g) * g + j % g] + pre[i * w + j + 1] + pre[(i + 1) * w + j] - pre[i * w + j];
        }
    }
    let n = ps.len() as f64;
    let mut best = 0.0f64;
    for i0 in 0..g {
        for i1 in i0 + 1..=i0 + g {
            for j0 in 0..g {
                for j1 in j0 + 1..=j0 + g {
                    let c = pre[i1 * w + j1] + pre[i0 * w + j0] - pre[i0 * w + j1] - pre[i1 * w + j0];
                    let area = ((i1 - i0) * (j1 - j0)) as f64 / (g * g) as f64;
                    best = best.max((c as f64 / n - area).abs());
                }
            }
        }
    }
    Ok(GridDiscrepancy { value: best, resolution: 1.0 / g as f64 })
}

/// How `|Σ_{n=1}^N e^{2πinx}|` enters the Erdős–Turán–Koksma sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpSumMode {
    /// `|sin(πNx)/sin(πx)|`
    #[default]
    Exact,
    /// `min{N, 1/(2‖x‖)}`
    Cutoff,
}

fn exp_sum_magnitude(x: f64, n: u64, mode: ExpSumMode) -> f64 {
    let nf = n as f64;
    let t = (x - x.round()).abs();
    if t == 0.0 {
        return nf;
    }
    match mode {
        ExpSumMode::Exact => {
            let num = (std::f64::consts::PI * ((nf * t) - (nf * t).round())).sin().abs();
            (num / (std::f64::consts::PI * t).sin()).min(nf)
        }
        ExpSumMode::Cutoff => nf.min(1.0 / (2.0 * t)),
    }
}

/// Right-hand side of the Erdős–Turán–Koksma inequality for the orbit
/// `{θ + nα}_{n=1}^N`, summing over `0 < |m|_∞ < M`.
pub fn etk_bound(alpha: &[f64], n: u64, m: u64, mode: ExpSumMode) -> Result<f64> {
    if m == 0 || n == 0 {
        return Err(invalid("etk_bound needs M >= 1 and N >= 1"));
    }
    let d = alpha.len();
    if d == 0 {
        return Err(invalid("alpha must be non-empty"));
    }
    let terms = (2 * m - 1).checked_pow(d as u32).unwrap_or(u64::MAX);
    if terms > 50_000_000 {
        return Err(Error::BudgetExceeded { size: terms as u128, budget: 50_000_000 });
    }
    let mut sum = 0.0;
    let mut idx = vec![-(m as i64) + 1; d];
    let lim = m as i64 - 1;
    loop {
        if idx.iter().any(|&v| v != 0) {
            let r: f64 = idx.iter().map(|&v| v.unsigned_abs().max(1) as f64).product();
            let x: f64 = idx.iter().zip(alpha).map(|(&mi, a)| mi as f64 * a).sum();
            sum += exp_sum_magnitude(x, n, mode) / (n as f64 * r);
        }
        // odometer
        let mut pos = 0;
        loop {
            if pos == d {
                return Ok(1.5f64.powi(d as i32) * (2.0 / (m as f64 + 1.0) + sum));
            }
            if idx[pos] < lim {
                idx[pos] += 1;
                break;
            }
            idx[pos] = -lim;
            pos += 1;
        }
    }
}

/// `C·(1/M + 1/N + Φ(M) log Φ(M) (log M)^d / (MN))`.
pub fn dks_bound(cond: &DiophantineCondition, n: f64, m: f64, d: u32, constant: f64) -> Result<f64> {
    if m < cond.rho {
        return Err(invalid(format!("M = {m} is below the monotonicity threshold rho = {}", cond.rho)));
    }
    if n < 2.0 {
        return Err(invalid("dks_bound needs N >= 2"));
    }
    let ln_phi = cond.ln_phi(m);
    let third = (ln_phi + ln_phi.ln() + d as f64 * m.ln().ln() - m.ln() - n.ln()).exp();
    Ok(constant * (1.0 / m + 1.0 / n + third))
}

/// Cutoff chosen by the corollaries: `Φ(M) = N` for power-law and
/// log-power conditions, `Φ(M) = √N` for stretched exponentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChosenM {
    pub m: f64,
    /// True when the corollary choice fell below `ρ` and was raised to it.
    pub clamped: bool,
}

pub fn choose_m(cond: &DiophantineCondition, n: f64) -> ChosenM {
    let raw = match cond.form {
        ConditionForm::PowerLaw { eta, gamma } => (eta * n).powf(1.0 / gamma),
        ConditionForm::LogPower { eta, kappa, gamma } => {
            let l = (eta * n).ln();
            if l <= 0.0 {
                1.0
            } else {
                (l / kappa).powf(1.0 / gamma).exp()
            }
        }
        ConditionForm::StretchedExp { eta, kappa, gamma } => {
            let l = (eta * n.sqrt()).ln();
            if l <= 0.0 {
                0.0
            } else {
                (l / kappa).powf(1.0 / gamma)
            }
        }
    };
    if raw.is_finite() && raw >= cond.rho {
        ChosenM { m: raw, clamped: false }
    } else {
        ChosenM { m: cond.rho, clamped: true }
    }
}

/// Closed-form decay shape of the matching corollary, without constants.
pub fn corollary_shape(cond: &DiophantineCondition, n: f64, d: u32) -> f64 {
    let ln_n = n.ln();
    let d = d as f64;
    match cond.form {
        ConditionForm::PowerLaw { gamma, .. } => n.powf(-1.0 / gamma) * ln_n.powf(d + 1.0),
        ConditionForm::LogPower { kappa, gamma, .. } => {
            ln_n.powf(1.0 + d / gamma) * (-(ln_n / kappa).powf(1.0 / gamma)).exp()
        }
        ConditionForm::StretchedExp { gamma, .. } => ln_n.powf(-1.0 / gamma),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub n: u64,
    pub exact: f64,
    pub etk_bound: f64,
    pub dks_bound: f64,
    pub m_used: f64,
    pub m_clamped: bool,
    pub corollary_bound: f64,
}

/// All discrepancy quantities for the forward orbit of length `n`.
///
/// The ETK cutoff is `etk_m`; the dks cutoff is the corollary choice.
pub fn discrepancy_report(
    theta: f64,
    profile: &FrequencyProfile,
    n: u64,
    etk_m: u64,
    dks_constant: f64,
) -> Result<DiscrepancyReport> {
    let cond = profile
        .condition
        .ok_or_else(|| invalid("frequency has no Diophantine condition attached"))?;
    let ps = kronecker_orbit_profile(theta, profile, n, IndexRange::Forward)?;
    let exact = exact_discrepancy(&ps)?;
    let etk = etk_bound(&[profile.alpha()], n, etk_m, ExpSumMode::Exact)?;
    let chosen = choose_m(&cond, n as f64);
    let dks = dks_bound(&cond, n as f64, chosen.m, 1, dks_constant)?;
    Ok(DiscrepancyReport {
        n,
        exact,
        etk_bound: etk,
        dks_bound: dks,
        m_used: chosen.m,
        m_clamped: chosen.clamped,
        corollary_bound: dks_constant * corollary_shape(&cond, n as f64, 1),
    })
}

/// Finite union of closed arcs of the torus with a declared degree.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalUnionSet {
    /// Disjoint, sorted, non-touching pieces of `[0,1]`; a component
    /// crossing 0 appears as two pieces.
    pieces: Vec<(f64, f64)>,
    degree: u32,
    measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalUnionJson {
    pub arcs: Vec<[f64; 2]>,
    pub degree: u32,
}

impl IntervalUnionSet {
    /// Arcs `[a, b]` with `a, b ∈ [0,1]`; `b < a` wraps through 0.
    pub fn new(arcs: &[(f64, f64)], degree: u32) -> Result<Self> {
        let mut pieces = Vec::with_capacity(arcs.len() + 1);
        for &(a, b) in arcs {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                return Err(invalid(format!("arc endpoints must lie in [0,1], got [{a}, {b}]")));
            }
            if b >= a {
                pieces.push((a, b));
            } else {
                pieces.push((a, 1.0));
                pieces.push((0.0, b));
            }
        }
        pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pieces.len());
        for p in pieces {
            match merged.last_mut() {
                Some(last) if p.0 <= last.1 => last.1 = last.1.max(p.1),
                _ => merged.push(p),
            }
        }
        let measure = merged.iter().map(|(a, b)| b - a).sum::<f64>().min(1.0);
        let set = IntervalUnionSet { pieces: merged, degree, measure };
        if degree == 0 {
            return Err(invalid("declared degree must be at least 1"));
        }
        let needed = 2 * set.components() as u32;
        if degree < needed {
            return Err(invalid(format!(
                "declared degree {degree} is below 2 x {} components",
                set.components()
            )));
        }
        Ok(set)
    }

    pub fn empty() -> Self {
        IntervalUnionSet { pieces: Vec::new(), degree: 1, measure: 0.0 }
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Number of connected components on the torus.
    pub fn components(&self) -> usize {
        let k = self.pieces.len();
        if k >= 2 && self.pieces[0].0 == 0.0 && self.pieces[k - 1].1 == 1.0 {
            k - 1
        } else {
            k
        }
    }

    /// Normalized pieces within `[0,1]`.
    pub fn pieces(&self) -> &[(f64, f64)] {
        &self.pieces
    }

    /// Closed-arc membership for `x ∈ [0,1)`.
    pub fn contains(&self, x: f64) -> bool {
        let x = wrap_unit(x);
        let i = self.pieces.partition_point(|p| p.0 <= x);
        (i > 0 && x <= self.pieces[i - 1].1) || (x == 0.0 && self.pieces.last().is_some_and(|p| p.1 == 1.0))
    }

    pub fn to_json(&self) -> IntervalUnionJson {
        IntervalUnionJson { arcs: self.pieces.iter().map(|&(a, b)| [a, b]).collect(), degree: self.degree }
    }

    pub fn from_json(j: &IntervalUnionJson) -> Result<Self> {
        let arcs: Vec<(f64, f64)> = j.arcs.iter().map(|a| (a[0], a[1])).collect();
        Self::new(&arcs, j.degree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingCount {
    pub count: u64,
    /// `2 B^C N Y_N^{1/d}`; `None` when the set is larger than `Y_N`.
    pub bound: Option<f64>,
    pub measure: f64,
    pub y_n: f64,
}

/// Count `#{n : θ + nα ∈ S}` over the index range and evaluate the
/// sublinear bound for semi-algebraic targets.
pub fn hitting_count(
    theta: f64,
    profile: &FrequencyProfile,
    n: u64,
    set: &IntervalUnionSet,
    range: IndexRange,
    y_n: f64,
    covering_exponent: f64,
) -> Result<HittingCount> {
    if n == 0 {
        return Err(invalid("orbit length must be at least 1"));
    }
    let mut count = 0u64;
    if set.measure() > 0.0 {
        for k in range.indices(n) {
            let r = profile.signed_frac(k.unsigned_abs() as u128)?;
            let r = if k < 0 { -r } else { r };
            if set.contains(theta + r) {
                count += 1;
            }
        }
    }
    let bound = (set.measure() <= y_n)
        .then(|| 2.0 * (set.degree() as f64).powf(covering_exponent) * n as f64 * y_n);
    Ok(HittingCount { count, bound, measure: set.measure(), y_n })
}

/// Number of `m` in the dyadic box `T_r = {2^{r_i−1} ≤ |m_i| ≤ 2^{r_i}}`
/// with `l/Δ ≤ ‖⟨m,α⟩‖ ≤ (l+1)/Δ`, where `Δ = Φ(2^{max r})`.
pub fn fixed_points_check(
    alpha: &[f64],
    cond: &DiophantineCondition,
    r: &[u32],
    l: u64,
    budget: u128,
) -> Result<u64> {
    let d = alpha.len();
    if d == 0 || r.len() != d {
        return Err(invalid("alpha and r must have the same non-zero length"));
    }
    if r.iter().any(|&ri| ri == 0 || ri > 62) {
        return Err(invalid("dyadic exponents must lie in 1..=62"));
    }
    let ranges: Vec<(i64, i64)> = r.iter().map(|&ri| (1i64 << (ri - 1), 1i64 << ri)).collect();
    let size: u128 = ranges.iter().map(|&(lo, hi)| 2 * (hi - lo + 1) as u128).product();
    if size > budget {
        return Err(Error::BudgetExceeded { size, budget });
    }
    let r1 = *r.iter().max().expect("non-empty");
    let delta = cond.phi(2f64.powi(r1 as i32));
    let (lo_band, hi_band) = (l as f64 / delta, (l + 1) as f64 / delta);
    if lo_band > 0.5 {
        return Ok(0);
    }
    let mut count = 0u64;
    let mut m: Vec<i64> = ranges.iter().map(|&(_, hi)| -hi).collect();
    loop {
        let x: f64 = m.iter().zip(alpha).map(|(&mi, a)| mi as f64 * a).sum();
        let t = (x - x.round()).abs();
        if t >= lo_band && t <= hi_band {
            count += 1;
        }
        // odometer over ±[lo, hi] per coordinate
        let mut pos = 0;
        loop {
            if pos == d {
                return Ok(count);
            }
            let (lo, hi) = ranges[pos];
            let v = m[pos];
            let next = if v == -lo { lo } else { v + 1 };
            if next <= hi {
                m[pos] = next;
                break;
            }
            m[pos] = -hi;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GOLDEN: f64 = 0.618_033_988_749_894_9;

    /// Brute-force sup over all candidate closed arcs with endpoints at
    /// data points, both orientations, plus open gaps.
    fn brute_discrepancy(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mut best = 1.0 / n;
        for &a in xs {
            // complement of a neighbourhood of a
            best = best.max(xs.iter().filter(|&&x| x == a).count() as f64 / n);
            for &b in xs {
                let (len, inside): (f64, Box<dyn Fn(f64) -> bool>) = if a <= b {
                    (b - a, Box::new(move |x| x >= a && x <= b))
                } else {
                    (1.0 - a + b, Box::new(move |x| x >= a || x <= b))
                };
                let closed = xs.iter().filter(|&&x| inside(x)).count() as f64;
                let strict = xs
                    .iter()
                    .filter(|&&x| inside(x) && x != a && x != b)
                    .count() as f64;
                best = best.max(closed / n - len).max(len - strict / n);
            }
        }
        best.min(1.0)
    }

    #[test]
    fn orbit_examples() {
        let ps = kronecker_orbit(&[0.0], &[0.5], 4, IndexRange::Forward).unwrap();
        assert_eq!(ps.coords(), &[0.5, 0.0, 0.5, 0.0]);
        let ps = kronecker_orbit(&[0.25], &[0.0], 3, IndexRange::Forward).unwrap();
        assert_eq!(ps.coords(), &[0.25; 3]);
        let ps = kronecker_orbit(&[0.0], &[GOLDEN], 5, IndexRange::Forward).unwrap();
        for (got, want) in ps.coords().iter().zip([0.618034, 0.236068, 0.854102, 0.472136, 0.090170]) {
            assert!((got - want).abs() < 1e-6);
        }
        let sym = kronecker_orbit(&[0.1], &[GOLDEN], 3, IndexRange::Symmetric).unwrap();
        assert_eq!(sym.len(), 7);
        assert!((sym.point(3)[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn discrepancy_examples() {
        let single = PointSet::explicit(1, vec![0.5]).unwrap();
        assert_eq!(exact_discrepancy(&single).unwrap(), 1.0);
        let eq = PointSet::explicit(1, (0..8).map(|k| k as f64 / 8.0).collect()).unwrap();
        assert!((exact_discrepancy(&eq).unwrap() - 0.125).abs() < 1e-15);
        assert!((brute_discrepancy(eq.coords()) - 0.125).abs() < 1e-15);
        let g = kronecker_orbit(&[0.0], &[GOLDEN], 100, IndexRange::Forward).unwrap();
        let d = exact_discrepancy(&g).unwrap();
        assert!(d <= 3.0 * 100f64.ln() / 100.0, "{d}");
        assert!((d - brute_discrepancy(g.coords())).abs() < 1e-12);
        assert!(matches!(
            exact_discrepancy(&PointSet::explicit(1, vec![]).unwrap()),
            Err(Error::EmptyPointSet)
        ));
        let p3 = PointSet::explicit(3, vec![0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(exact_discrepancy(&p3), Err(Error::Unsupported(_))));
    }

    proptest! {
        #[test]
        fn exact_matches_brute_force(xs in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let ps = PointSet::explicit(1, xs.clone()).unwrap();
            let fast = exact_discrepancy(&ps).unwrap();
            prop_assert!((fast - brute_discrepancy(&xs)).abs() < 1e-12);
            prop_assert!(fast >= 1.0 / xs.len() as f64 - 1e-15);
        }

        #[test]
        fn etk_dominates_orbits(theta in 0.0f64..1.0, n in 1u64..300, m in 1u64..60) {
            let ps = kronecker_orbit(&[theta], &[GOLDEN], n, IndexRange::Forward).unwrap();
            let d = exact_discrepancy(&ps).unwrap();
            let e = etk_bound(&[GOLDEN], n, m, ExpSumMode::Exact).unwrap();
            prop_assert!(d <= e + 1e-12);
            let c = etk_bound(&[GOLDEN], n, m, ExpSumMode::Cutoff).unwrap();
            prop_assert!(e <= c + 1e-12);
        }

        #[test]
        fn interval_membership_matches_arcs(a in 0.0f64..1.0, b in 0.0f64..1.0, x in 0.0f64..1.0) {
            let s = IntervalUnionSet::new(&[(a, b)], 2).unwrap();
            let inside = if a <= b { x >= a && x <= b } else { x >= a || x <= b };
            prop_assert_eq!(s.contains(x), inside);
            let len = if a <= b { b - a } else { 1.0 - a + b };
            prop_assert!((s.measure() - len).abs() < 1e-15);
        }
    }

    #[test]
    fn etk_single_term() {
        // M = 1 leaves no frequencies: (3/2)(2/2)
        assert!((etk_bound(&[GOLDEN], 10, 1, ExpSumMode::Exact).unwrap() - 1.5).abs() < 1e-15);
        // M = 2: the pair m = ±1
        let n = 10u64;
        let s = ((std::f64::consts::PI * n as f64 * GOLDEN).sin() / (std::f64::consts::PI * GOLDEN).sin()).abs();
        let want = 1.5 * (2.0 / 3.0 + 2.0 * s / n as f64);
        assert!((etk_bound(&[GOLDEN], n, 2, ExpSumMode::Exact).unwrap() - want).abs() < 1e-12);
        // monotone upper estimate with b = min ‖mα‖
        let b = (1..10).map(|m| ((m as f64 * GOLDEN) - (m as f64 * GOLDEN).round()).abs()).fold(1.0, f64::min);
        let cap: f64 = (1..10).map(|m| 2.0 / (m as f64 * b * 2.0 * 1000.0)).sum::<f64>();
        let e = etk_bound(&[GOLDEN], 1000, 10, ExpSumMode::Cutoff).unwrap();
        assert!(e <= 1.5 * (2.0 / 11.0 + cap) + 1e-12);
    }

    #[test]
    fn etk_against_exact_at_scale() {
        let ps = kronecker_orbit(&[0.0], &[GOLDEN], 1000, IndexRange::Forward).unwrap();
        let d = exact_discrepancy(&ps).unwrap();
        let e = etk_bound(&[GOLDEN], 1000, 100, ExpSumMode::Exact).unwrap();
        assert!(e.is_finite() && d <= e);
    }

    #[test]
    fn choose_m_matches_corollaries() {
        let c = DiophantineCondition::power_law(0.38, 1.0).unwrap();
        assert!((choose_m(&c, 1e4).m - 3800.0).abs() < 1e-9);
        let c = DiophantineCondition::log_power(0.5, 1.0, 2.0).unwrap();
        let want = ((0.5f64 * 1e6).ln()).sqrt().exp();
        assert!((choose_m(&c, 1e6).m - want).abs() < 1e-9 * want);
        let c = DiophantineCondition::stretched_exp(0.5, 1.0, 0.5).unwrap();
        let want = ((0.5f64 * 1e3).ln()).powi(2);
        assert!((choose_m(&c, 1e6).m - want).abs() < 1e-9 * want);
        // below rho is clamped
        let c = DiophantineCondition::stretched_exp(1e-6, 1.0, 0.1).unwrap();
        let ch = choose_m(&c, 1e3);
        assert!(ch.clamped && ch.m == c.rho);
    }

    #[test]
    fn dks_terms() {
        let c = DiophantineCondition::power_law(0.5, 1.0).unwrap();
        let (n, m) = (1000.0, 500.0);
        let phi: f64 = m / 0.5;
        let want = 1.0 / m + 1.0 / n + phi * phi.ln() * m.ln() / (m * n);
        assert!((dks_bound(&c, n, m, 1, 1.0).unwrap() - want).abs() < 1e-12 * want);
        assert!(dks_bound(&c, n, 1.5, 1, 1.0).is_err());
        // at the corollary M the bound tracks N^{-1}(log N)^2
        let ratios: Vec<f64> = [1e3, 1e4, 1e5, 1e6]
            .iter()
            .map(|&n| dks_bound(&c, n, choose_m(&c, n).m, 1, 1.0).unwrap() / corollary_shape(&c, n, 1))
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 10.0, "{ratios:?}");
    }

    #[test]
    fn interval_union_normalization() {
        let s = IntervalUnionSet::new(&[(0.1, 0.2), (0.15, 0.3), (0.9, 0.05)], 4).unwrap();
        assert_eq!(s.components(), 2);
        assert!((s.measure() - 0.35).abs() < 1e-15);
        assert!(s.contains(0.0) && s.contains(0.95) && s.contains(0.3) && !s.contains(0.5));
        assert!(IntervalUnionSet::new(&[(0.1, 0.2), (0.4, 0.5)], 3).is_err());
        assert!(IntervalUnionSet::new(&[(0.1, 1.2)], 2).is_err());
        let j = serde_json::to_string(&s.to_json()).unwrap();
        let back = IntervalUnionSet::from_json(&serde_json::from_str(&j).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn hitting_examples() {
        let p = FrequencyProfile::golden(40);
        let s = IntervalUnionSet::new(&[(0.0, 0.1)], 2).unwrap();
        let h = hitting_count(0.0, &p, 10, &s, IndexRange::Forward, 0.2, 1.0).unwrap();
        assert_eq!(h.count, 1);
        assert!(h.count as f64 <= h.bound.unwrap());
        let full = IntervalUnionSet::new(&[(0.0, 1.0)], 2).unwrap();
        let h = hitting_count(0.3, &p, 10, &full, IndexRange::Forward, 0.2, 1.0).unwrap();
        assert_eq!(h.count, 10);
        assert!(h.bound.is_none());
        let h = hitting_count(0.7, &p, 10, &IntervalUnionSet::empty(), IndexRange::Forward, 0.2, 1.0).unwrap();
        assert_eq!(h.count, 0);
        assert!(h.bound.unwrap() >= 0.0);
    }

    #[test]
    fn fixed_points_examples() {
        let c = DiophantineCondition::power_law(0.38, 1.0).unwrap();
        let delta = c.phi(64.0);
        for l in 0..=(delta as u64) {
            assert!(fixed_points_check(&[GOLDEN], &c, &[6], l, 1 << 20).unwrap() <= 4);
        }
        assert_eq!(fixed_points_check(&[GOLDEN], &c, &[6], delta as u64 + 1, 1 << 20).unwrap(), 0);
        assert!(matches!(
            fixed_points_check(&[GOLDEN], &c, &[40], 0, 1 << 20),
            Err(Error::BudgetExceeded { .. })
        ));
        // every m of T_r lands in exactly one band l = floor(Δ‖mα‖) or on a band edge
        let total: u64 = (0..=(delta as u64)).map(|l| fixed_points_check(&[GOLDEN], &c, &[6], l, 1 << 20).unwrap()).sum();
        assert!(total >= 2 * 33);
    }

    #[test]
    fn grid_discrepancy_equispaced() {
        let mut coords = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                coords.push((i as f64 + 0.5) / 8.0);
                coords.push((j as f64 + 0.5) / 8.0);
            }
        }
        let ps = PointSet::explicit(2, coords).unwrap();
        let g = grid_discrepancy_2d(&ps, 8).unwrap();
        assert!(g.value < 1e-12);
        assert_eq!(g.resolution, 0.125);
    }
}
