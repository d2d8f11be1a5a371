//! Green's functions of finite boxes, Cramer-rule entries and the good-box
//! scanner.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{linear_fit, BandedLu, ScaledComplex};
use crate::operator::{assemble_finite, char_poly, transfer_product, FiniteOperator, OperatorSpec};

/// Boxes up to this size are inverted densely.
pub const DENSE_LIMIT: usize = 64;
const RESIDUAL_TOL: f64 = 1e-9;

/// Factorized `H_Λ − z`.
#[derive(Debug, Clone)]
pub struct Resolvent {
    lu: BandedLu,
    z: Complex64,
}

impl Resolvent {
    pub fn new(op: &FiniteOperator, z: Complex64) -> Result<Self> {
        let bw = op.bandwidth();
        let lu = BandedLu::factor(op.dim(), bw, bw, |i, j| {
            let v = op.entry(i, j);
            if i == j {
                v - z
            } else {
                v
            }
        })
        .map_err(|_| Error::NearSpectrum { z })?;
        Ok(Resolvent { lu, z })
    }

    pub fn z(&self) -> Complex64 {
        self.z
    }

    /// `(H_Λ − z)^{-1} b`.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.lu.solve_in_place(&mut x);
        x
    }
}

#[derive(Debug, Clone)]
pub struct GreenMatrix {
    pub first_site: i64,
    pub g: DMatrix<Complex64>,
    /// `‖(H_Λ − z) G − I‖_max`.
    pub residual: f64,
}

impl GreenMatrix {
    /// Entry for lattice sites `m, n`.
    pub fn at(&self, m: i64, n: i64) -> Complex64 {
        self.g[((m - self.first_site) as usize, (n - self.first_site) as usize)]
    }

    /// CSV heat table `m,n,abs` of entry magnitudes.
    pub fn heat_csv(&self) -> String {
        let mut s = String::from("m,n,abs\n");
        for i in 0..self.g.nrows() {
            for j in 0..self.g.ncols() {
                let m = self.first_site + i as i64;
                let n = self.first_site + j as i64;
                s.push_str(&format!("{m},{n},{:.16e}\n", self.g[(i, j)].norm()));
            }
        }
        s
    }
}

/// `G_Λ(z) = (R_Λ H R_Λ − z)^{-1}`: dense inverse for small boxes, banded
/// solves per column otherwise.
pub fn green_direct(spec: &OperatorSpec, z: Complex64) -> Result<GreenMatrix> {
    let op = assemble_finite(spec)?;
    let n = op.dim();
    let mut a = op.to_dense();
    for i in 0..n {
        a[(i, i)] -= z;
    }
    let g = if n <= DENSE_LIMIT {
        a.clone().try_inverse().ok_or(Error::NearSpectrum { z })?
    } else {
        let res = Resolvent::new(&op, z)?;
        let cols: Vec<Vec<Complex64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![Complex64::new(0.0, 0.0); n];
                e[j] = Complex64::new(1.0, 0.0);
                res.solve(&e)
            })
            .collect();
        DMatrix::from_fn(n, n, |i, j| cols[j][i])
    };
    let prod = &a * &g;
    let mut residual = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            residual = residual.max((prod[(i, j)] - want).norm());
        }
    }
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::NearSpectrum { z });
    }
    Ok(GreenMatrix { first_site: spec.window.0, g, residual })
}

/// Cramer-rule entry of `G_Λ(z)(m, n)` with its transfer-norm bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CramerEntry {
    /// `−det(z − H_{[x₁,m−1]}) det(z − H_{[n+1,x₂]}) / det(z − H_Λ)`.
    pub exact: ScaledComplex,
    /// `log(‖M_{[x₁,m−1]}‖ ‖M_{[n+1,x₂]}‖ / |det(H_Λ − z)|)`.
    pub log_bound: f64,
}

impl CramerEntry {
    pub fn exact_value(&self) -> Complex64 {
        self.exact.value()
    }

    pub fn upper_bound(&self) -> f64 {
        self.log_bound.exp()
    }
}

/// `G_Λ(z)(m, n)` for `x₁ ≤ m ≤ n ≤ x₂` by Cramer's rule, with empty
/// blocks contributing determinant 1.
pub fn green_entry_cramer(spec: &OperatorSpec, z: Complex64, m: i64, n: i64) -> Result<CramerEntry> {
    if !spec.is_nearest_neighbor() {
        return Err(Error::Unsupported("Cramer entries need a tridiagonal operator".into()));
    }
    let (x1, x2) = spec.window;
    if !(x1 <= m && m <= n && n <= x2) {
        return Err(invalid(format!("need x1 <= m <= n <= x2, got m={m}, n={n} in [{x1}, {x2}]")));
    }
    let (left, _) = char_poly(z, spec, x1, m - x1);
    let (right, _) = char_poly(z, spec, n + 1, x2 - n);
    let (whole, _) = char_poly(z, spec, x1, x2 - x1 + 1);
    if whole.is_zero() {
        return Err(Error::NearSpectrum { z });
    }
    let exact = left.mul(right).div(whole).neg();
    let ml = transfer_product(z, spec, (x1, m - 1))?.log_norm();
    let mr = transfer_product(z, spec, (n + 1, x2))?.log_norm();
    Ok(CramerEntry { exact, log_bound: ml + mr - whole.ln_abs() })
}

/// Target shape of the good-box decay condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecayForm {
    /// `|G_I(m,n)| < e^{−c₂|I|}` for `|m−n| > |I|/20`.
    #[default]
    Box,
    /// `|G_I(m,n)| < e^{−c₂|m−n|}` for `|m−n| > |I|/20`.
    Distance,
}

/// Scale function `Ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PsiSpec {
    /// `Ψ(N) = N^δ`
    Power { delta: f64 },
    /// `Ψ(N) = (log N)^C`
    LogPower { exponent: f64 },
}

impl PsiSpec {
    pub fn eval(&self, n: f64) -> f64 {
        match *self {
            PsiSpec::Power { delta } => n.powf(delta),
            PsiSpec::LogPower { exponent } => n.ln().powf(exponent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Shifts `I_j = I + j` inside the two windows.
    #[default]
    WindowShift,
    /// `[−n,n], [−n,n−1], [−n+1,n], [−n+1,n−1]` centred at each shift.
    FourIntervals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowTag {
    /// `[N/4, N/2]`
    Right,
    /// `[−N/2, −N/4]`
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCandidate {
    pub start: i64,
    pub end: i64,
    pub window: WindowTag,
}

impl BoxCandidate {
    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Distance from the origin to the nearer endpoint.
    pub fn distance(&self) -> i64 {
        match self.window {
            WindowTag::Right => self.start,
            WindowTag::Left => -self.end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodBoxParams {
    pub n: u64,
    pub psi: PsiSpec,
    pub c2: f64,
    pub z_grid: Vec<Complex64>,
    #[serde(default)]
    pub search: SearchMode,
    #[serde(default)]
    pub decay: DecayForm,
    /// When set, `Ψ(N) ≥ (log N)^C` is checked and reported.
    #[serde(default)]
    pub log_power_floor: Option<f64>,
}

/// `n_e` energies spread uniformly over `[−K, K]` (endpoints included) at
/// height `1/T`.
pub fn default_z_grid(k: f64, n_e: usize, t: f64) -> Vec<Complex64> {
    let eps = 1.0 / t;
    if n_e == 1 {
        return vec![Complex64::new(0.0, eps)];
    }
    (0..n_e)
        .map(|i| Complex64::new(-k + 2.0 * k * i as f64 / (n_e - 1) as f64, eps))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZMargin {
    pub z: Complex64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenBoxReport {
    pub n: u64,
    pub theta: f64,
    pub z_grid: Vec<Complex64>,
    pub found: Option<BoxCandidate>,
    pub psi_required: f64,
    pub interval_length: usize,
    pub c2: f64,
    pub decay: DecayForm,
    /// For the found interval: min over `(z, m, n)` of the log margin.
    /// Otherwise the largest such minimum over all candidates.
    pub worst_margin: f64,
    /// Per-energy margins of the reported interval.
    pub margin_table: Vec<ZMargin>,
    pub candidates_tested: usize,
    pub psi_dominates_log_power: Option<bool>,
}

/// Candidate intervals in scan order: by distance from the origin, the
/// right window first on ties.
pub fn box_candidates(n: u64, len: usize, search: SearchMode) -> Result<Vec<BoxCandidate>> {
    if n < 64 {
        return Err(Error::InfeasibleGeometry(format!("scale N = {n} is below 64")));
    }
    let n = n as i64;
    let lo = (n + 3) / 4; // ceil(N/4)
    let hi = n / 2; // floor(N/2)
    let len = len as i64;
    if len > hi - lo + 1 {
        return Err(Error::InfeasibleGeometry(format!(
            "interval length {len} exceeds window width {}",
            hi - lo + 1
        )));
    }
    let shapes: Vec<(i64, i64)> = match search {
        SearchMode::WindowShift => vec![(0, len - 1)],
        SearchMode::FourIntervals => {
            // [−r, r], [−r, r−1], [−r+1, r], [−r+1, r−1] with 2r−1 ≥ len
            let r = (len + 2) / 2;
            if 2 * r + 1 > hi - lo + 1 {
                return Err(Error::InfeasibleGeometry("four-interval candidates exceed the window".into()));
            }
            vec![(-r, r), (-r, r - 1), (-r + 1, r), (-r + 1, r - 1)]
        }
    };
    let mut out = Vec::new();
    for d in 0..=(hi - lo) {
        for window in [WindowTag::Right, WindowTag::Left] {
            for &(a, b) in &shapes {
                let width = b - a;
                let (start, end) = match window {
                    WindowTag::Right => (lo + d, lo + d + width),
                    WindowTag::Left => (-lo - d - width, -lo - d),
                };
                let inside = match window {
                    WindowTag::Right => end <= hi,
                    WindowTag::Left => start >= -hi,
                };
                if inside {
                    out.push(BoxCandidate { start, end, window });
                }
            }
        }
    }
    Ok(out)
}

/// Log margins per energy of one interval: `min_{|m−n|>|I|/20} (−log|G(m,n)| − target)`.
pub fn interval_margins(
    spec: &OperatorSpec,
    cand: &BoxCandidate,
    c2: f64,
    z_grid: &[Complex64],
    decay: DecayForm,
) -> Result<Vec<f64>> {
    let boxed = spec.with_window((cand.start, cand.end))?;
    let len = cand.len();
    let far = len as f64 / 20.0;
    z_grid
        .iter()
        .map(|&z| {
            let g = green_direct(&boxed, z)?;
            let mut worst = f64::INFINITY;
            for i in 0..len {
                for j in 0..len {
                    let d = i.abs_diff(j) as f64;
                    if d <= far {
                        continue;
                    }
                    let target = match decay {
                        DecayForm::Box => c2 * len as f64,
                        DecayForm::Distance => c2 * d,
                    };
                    worst = worst.min(-g.g[(i, j)].norm().ln() - target);
                }
            }
            Ok(worst)
        })
        .collect()
}

/// Scan the candidate intervals for one whose far off-diagonal Green's
/// entries decay at the target rate for every energy in the grid.
pub fn good_box_scan(spec: &OperatorSpec, params: &GoodBoxParams) -> Result<GreenBoxReport> {
    if !(params.c2 > 0.0) {
        return Err(invalid("c2 must be positive"));
    }
    if params.z_grid.is_empty() {
        return Err(invalid("z grid is empty"));
    }
    let nf = params.n as f64;
    let psi = params.psi.eval(nf);
    let len = psi.ceil().max(1.0) as usize;
    let cands = box_candidates(params.n, len, params.search)?;
    let margins: Vec<Vec<f64>> = cands
        .par_iter()
        .map(|c| interval_margins(spec, c, params.c2, &params.z_grid, params.decay))
        .collect::<Result<_>>()?;
    let worst: Vec<f64> = margins.iter().map(|m| m.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let pick = worst.iter().position(|&w| w > 0.0).or_else(|| {
        worst
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    });
    let idx = pick.expect("at least one candidate");
    let found = (worst[idx] > 0.0).then_some(cands[idx]);
    Ok(GreenBoxReport {
        n: params.n,
        theta: spec.theta,
        z_grid: params.z_grid.clone(),
        found,
        psi_required: psi,
        interval_length: cands[idx].len(),
        c2: params.c2,
        decay: params.decay,
        worst_margin: worst[idx],
        margin_table: params.z_grid.iter().zip(&margins[idx]).map(|(&z, &m)| ZMargin { z, margin: m }).collect(),
        candidates_tested: cands.len(),
        psi_dominates_log_power: params.log_power_floor.map(|c| psi >= nf.ln().powf(c)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullLineCheck {
    pub log_abs_g: f64,
    /// `log(T⁴ e^{−(c₂/20)|I|})`
    pub log_target: f64,
    pub margin: f64,
    /// Half-width of the box finally used.
    pub box_half_width: i64,
    /// Relative change of `|G|` under the last doubling.
    pub doubling_change: f64,
}

/// `|G(z)(j, N_target)|` on `ℤ`, approximated on `[−B, B]` with `B`
/// doubled until the entry changes by less than `1e-6` relatively, and
/// compared with `T⁴ e^{−(c₂/20)|I|}`, `T = 1/Im z`.
pub fn full_line_entry_check(
    spec: &OperatorSpec,
    big_box_size: i64,
    z: Complex64,
    j: i64,
    n_target: i64,
    interval: (i64, i64),
    c2: f64,
) -> Result<FullLineCheck> {
    if j == n_target {
        return Err(Error::DomainGuard("j equals N_target; the estimate concerns distant sites".into()));
    }
    if big_box_size < 4 * n_target.abs().max(j.abs()) {
        return Err(invalid(format!("box size {big_box_size} is below 4 x {}", n_target.abs().max(j.abs()))));
    }
    if !(z.im > 0.0) {
        return Err(invalid("full-line entries need Im z > 0"));
    }
    let entry = |b: i64| -> Result<f64> {
        let boxed = spec.with_window((-b, b))?;
        let (m, n) = if j <= n_target { (j, n_target) } else { (n_target, j) };
        if boxed.is_nearest_neighbor() {
            Ok(green_entry_cramer(&boxed, z, m, n)?.exact.ln_abs())
        } else {
            let op = assemble_finite(&boxed)?;
            let res = Resolvent::new(&op, z)?;
            let mut e = vec![Complex64::new(0.0, 0.0); op.dim()];
            e[(n + b) as usize] = Complex64::new(1.0, 0.0);
            Ok(res.solve(&e)[(m + b) as usize].norm().ln())
        }
    };
    let mut b = big_box_size;
    let mut prev = entry(b)?;
    for _ in 0..6 {
        let next = entry(2 * b)?;
        let change = (next - prev).exp_m1().abs();
        b *= 2;
        if change <= 1e-6 {
            let t = 1.0 / z.im;
            let len = (interval.1 - interval.0 + 1) as f64;
            let log_target = 4.0 * t.ln() - c2 / 20.0 * len;
            return Ok(FullLineCheck {
                log_abs_g: next,
                log_target,
                margin: log_target - next,
                box_half_width: b,
                doubling_change: change,
            });
        }
        prev = next;
    }
    Err(Error::Unconverged(format!("full-line entry still changing after doubling the box to {b}")))
}

/// Fitted exponential decay of `|G(m, source)|` in `|m − source|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombesThomasFit {
    pub rate: f64,
    pub r2: f64,
    /// Distance from `z` to the spectrum of the box.
    pub delta: f64,
}

pub fn combes_thomas_fit(spec: &OperatorSpec, z: Complex64, source: i64) -> Result<CombesThomasFit> {
    let op = assemble_finite(spec)?;
    let eig = op.eigen();
    let delta = eig.values.iter().map(|&e| (Complex64::new(e, 0.0) - z).norm()).fold(f64::INFINITY, f64::min);
    let res = Resolvent::new(&op, z)?;
    let s = (source - spec.window.0) as usize;
    if s >= op.dim() {
        return Err(invalid("source site outside the window"));
    }
    let mut e = vec![Complex64::new(0.0, 0.0); op.dim()];
    e[s] = Complex64::new(1.0, 0.0);
    let col = res.solve(&e);
    let (xs, ys): (Vec<f64>, Vec<f64>) = col
        .iter()
        .enumerate()
        .filter(|(i, g)| *i != s && g.norm() > 1e-280)
        .map(|(i, g)| (i.abs_diff(s) as f64, g.norm().ln()))
        .unzip();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| invalid("window too small for a decay fit"))?;
    Ok(CombesThomasFit { rate: -fit.slope, r2: fit.r2, delta })
}
