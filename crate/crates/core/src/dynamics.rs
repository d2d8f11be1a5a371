//! Wave-packet evolution, Abel-averaged position moments and the transport
//! bound formulas.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::green::{PsiSpec, Resolvent};
use crate::linalg::linear_fit;
use crate::operator::{assemble_finite, Eigen, OperatorSpec};

/// Tail mass allowed beyond 90% of the box half-width.
pub const TAIL_LIMIT: f64 = 1e-8;
pub const DEFAULT_PADDING: f64 = 50.0;

/// Compactly supported initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateJson", into = "StateJson")]
pub struct InitialState {
    support: Vec<(i64, Complex64)>,
    normalized: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateJson {
    /// `[site, re, im]`
    support: Vec<(i64, f64, f64)>,
    #[serde(default = "yes")]
    normalized: bool,
}

fn yes() -> bool {
    true
}

impl TryFrom<StateJson> for InitialState {
    type Error = Error;
    fn try_from(j: StateJson) -> Result<Self> {
        InitialState::new(j.support.into_iter().map(|(n, re, im)| (n, Complex64::new(re, im))).collect(), j.normalized)
    }
}

impl From<InitialState> for StateJson {
    fn from(s: InitialState) -> Self {
        StateJson { support: s.support.iter().map(|&(n, a)| (n, a.re, a.im)).collect(), normalized: s.normalized }
    }
}

impl InitialState {
    pub fn new(mut support: Vec<(i64, Complex64)>, normalized: bool) -> Result<Self> {
        if support.is_empty() {
            return Err(invalid("initial state has empty support"));
        }
        support.sort_by_key(|&(n, _)| n);
        if support.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("initial state lists a site twice"));
        }
        if support.iter().any(|(_, a)| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(invalid("non-finite amplitude"));
        }
        let s = InitialState { support, normalized };
        if normalized && (s.norm_sqr() - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("state flagged normalized has norm² {}", s.norm_sqr())));
        }
        Ok(s)
    }

    /// `δ_n`
    pub fn delta(n: i64) -> Self {
        InitialState { support: vec![(n, Complex64::new(1.0, 0.0))], normalized: true }
    }

    pub fn support(&self) -> &[(i64, Complex64)] {
        &self.support
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm_sqr(&self) -> f64 {
        self.support.iter().map(|(_, a)| a.norm_sqr()).sum()
    }

    /// `max − min` of the support.
    pub fn diameter(&self) -> i64 {
        self.support.last().unwrap().0 - self.support[0].0
    }

    fn to_box(&self, spec: &OperatorSpec) -> Result<Vec<Complex64>> {
        let (x1, x2) = spec.window;
        let mut v = vec![Complex64::new(0.0, 0.0); spec.len()];
        for &(n, a) in &self.support {
            if n < x1 || n > x2 {
                return Err(invalid(format!("initial state site {n} lies outside the box [{x1}, {x2}]")));
            }
            v[(n - x1) as usize] = a;
        }
        Ok(v)
    }
}

/// Smallest half-width covering ballistic spreading up to time `t`.
pub fn ballistic_half_width(norm_h: f64, t: f64, padding: f64) -> i64 {
    (2.0 * norm_h * t + padding).ceil() as i64
}

/// What to do when mass reaches the outer tenth of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoxPolicy {
    /// The box stands in for `ℤ`; a tail breach is an error.
    #[default]
    Guarded,
    /// The box is the object of study; the tail mass is only reported.
    FiniteBox,
}

/// Sites farther than 90% of the half-width from the box centre.
fn tail_flags(spec: &OperatorSpec) -> Vec<bool> {
    let (x1, x2) = spec.window;
    let centre = (x1 + x2) as f64 / 2.0;
    let half = (x2 - x1) as f64 / 2.0;
    (x1..=x2).map(|n| (n as f64 - centre).abs() > 0.9 * half).collect()
}

fn check_tail(tail: f64, policy: BoxPolicy) -> Result<()> {
    if policy == BoxPolicy::Guarded && tail >= TAIL_LIMIT {
        return Err(Error::BoxBreach { tail_mass: tail, limit: TAIL_LIMIT });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolvedState {
    pub first_site: i64,
    pub amplitudes: Vec<Complex64>,
    pub tail_mass: f64,
}

impl EvolvedState {
    pub fn at(&self, n: i64) -> Complex64 {
        self.amplitudes[(n - self.first_site) as usize]
    }
}

/// `ψ(t) = e^{−itH}φ` on the box.
pub fn evolve_state(spec: &OperatorSpec, phi: &InitialState, t: f64) -> Result<EvolvedState> {
    let v = phi.to_box(spec)?;
    if t == 0.0 {
        return Ok(EvolvedState { first_site: spec.window.0, amplitudes: v, tail_mass: 0.0 });
    }
    let eig = assemble_finite(spec)?.eigen();
    let coeff = eig.vectors.ad_mul(&nalgebra::DVector::from_vec(v));
    let phased = nalgebra::DVector::from_iterator(
        coeff.len(),
        coeff.iter().zip(&eig.values).map(|(c, &e)| c * Complex64::from_polar(1.0, -t * e)),
    );
    let psi: Vec<Complex64> = (&eig.vectors * phased).iter().copied().collect();
    let norm: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
    if (norm.sqrt() - phi.norm_sqr().sqrt()).abs() > 1e-10 {
        return Err(Error::Unconverged(format!("evolution lost unitarity: norm² {norm}")));
    }
    let tail = psi.iter().zip(tail_flags(spec)).filter(|(_, f)| *f).map(|(a, _)| a.norm_sqr()).sum();
    check_tail(tail, BoxPolicy::Guarded)?;
    Ok(EvolvedState { first_site: spec.window.0, amplitudes: psi, tail_mass: tail })
}

/// `|n|^p`, with `0^p = 0`.
fn weight(n: i64, p: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        (n.unsigned_abs() as f64).powf(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentValue {
    pub value: f64,
    /// `Σ_n a(n, T)`, equal to `‖φ‖²`.
    pub normalization: f64,
    pub tail_mass: f64,
}

/// Eigendecomposition of a box with the initial state in the eigenbasis,
/// reusable across `p` and `T`.
pub struct SpectralMoments {
    spec: OperatorSpec,
    eig: Eigen,
    /// `B_{nk} = u_k(n) ⟨u_k, φ⟩`
    b: DMatrix<Complex64>,
    tail: Vec<bool>,
    policy: BoxPolicy,
}

impl SpectralMoments {
    pub fn new(spec: &OperatorSpec, phi: &InitialState, policy: BoxPolicy) -> Result<Self> {
        let v = phi.to_box(spec)?;
        let eig = assemble_finite(spec)?.eigen();
        let coeff = eig.vectors.ad_mul(&nalgebra::DVector::from_vec(v));
        let mut b = eig.vectors.clone();
        for (k, mut col) in b.column_iter_mut().enumerate() {
            col *= coeff[k];
        }
        Ok(SpectralMoments { spec: spec.clone(), eig, b, tail: tail_flags(spec), policy })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig.values
    }

    /// `Q = B* D B` for the diagonal weights `D`.
    fn gram(&self, w: &[f64]) -> DMatrix<Complex64> {
        let mut db = self.b.clone();
        for (i, mut row) in db.row_iter_mut().enumerate() {
            row *= Complex64::new(w[i], 0.0);
        }
        self.b.ad_mul(&db)
    }

    /// `Σ_{k,l} W_{kl} Q_{lk}` with `W_{kl} = (2/T)/((2/T) + i(E_k − E_l))`.
    fn averaged(&self, q: &DMatrix<Complex64>, t: f64) -> Complex64 {
        let e = &self.eig.values;
        let n = e.len();
        (0..n)
            .map(|k| {
                let mut s = Complex64::new(0.0, 0.0);
                for l in 0..n {
                    let w = Complex64::new(1.0, 0.5 * t * (e[k] - e[l])).inv();
                    s += w * q[(l, k)];
                }
                s
            })
            .sum()
    }

    /// Moments `⟨|X|^p⟩(T)` for every `T` in the grid.
    pub fn moments(&self, p: f64, ts: &[f64]) -> Result<Vec<MomentValue>> {
        if !(p > 0.0) {
            return Err(invalid("moment order p must be positive"));
        }
        if ts.iter().any(|&t| !(t > 0.0)) {
            return Err(invalid("times must be positive"));
        }
        let x1 = self.spec.window.0;
        let w: Vec<f64> = (0..self.b.nrows()).map(|i| weight(x1 + i as i64, p)).collect();
        let ones = vec![1.0; w.len()];
        let tw: Vec<f64> = self.tail.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        let (qw, (qn, qt)) = rayon::join(|| self.gram(&w), || rayon::join(|| self.gram(&ones), || self.gram(&tw)));
        ts.par_iter()
            .map(|&t| {
                let value = self.averaged(&qw, t);
                let normalization = self.averaged(&qn, t).re;
                let tail_mass = self.averaged(&qt, t).re.max(0.0);
                let scale = w.iter().copied().fold(0.0, f64::max).max(1.0) * normalization.abs().max(1.0);
                if value.re < -1e-9 * scale || value.im.abs() > 1e-9 * scale {
                    return Err(Error::Unconverged(format!("moment {value} is not a nonnegative real")));
                }
                check_tail(tail_mass, self.policy)?;
                Ok(MomentValue { value: value.re.max(0.0), normalization, tail_mass })
            })
            .collect()
    }
}

/// `⟨|X|^p⟩(T) = (2/T)∫₀^∞ e^{−2t/T} ⟨ψ(t), |X|^p ψ(t)⟩ dt` in closed form
/// from the eigendecomposition of the box.
pub fn moment_spectral(spec: &OperatorSpec, phi: &InitialState, p: f64, t: f64, policy: BoxPolicy) -> Result<MomentValue> {
    SpectralMoments::new(spec, phi, policy)?.moments(p, &[t]).map(|v| v[0])
}

// Gauss–Kronrod 7/15 nodes and weights on [−1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Segment {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error).then(o.a.total_cmp(&self.a))
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let s = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    Segment { a, b, value: k * h, error: ((k - g) * h).abs() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Adaptive Gauss–Kronrod integration over consecutive breakpoints,
/// splitting the worst segments until the error estimate drops below
/// `rel_tol·|value|` or the evaluation budget is spent.
pub fn integrate_adaptive<F>(f: F, breaks: &[f64], rel_tol: f64, max_evals: usize) -> Quadrature
where
    F: Fn(f64) -> f64 + Sync,
{
    let mut heap: BinaryHeap<Segment> =
        breaks.par_windows(2).filter(|w| w[1] > w[0]).map(|w| gk15(&f, w[0], w[1])).collect::<Vec<_>>().into();
    let mut evals = 15 * heap.len();
    loop {
        let (value, error) = totals(&heap);
        if error <= rel_tol * value.abs() || evals >= max_evals {
            break;
        }
        let batch: Vec<Segment> = (0..64).map_while(|_| heap.pop()).collect();
        let split: Vec<Segment> = batch
            .par_iter()
            .flat_map_iter(|s| {
                let m = 0.5 * (s.a + s.b);
                [gk15(&f, s.a, m), gk15(&f, m, s.b)]
            })
            .collect();
        evals += 15 * split.len();
        heap.extend(split);
    }
    let (value, error) = totals(&heap);
    Quadrature { value, error, evaluations: evals }
}

fn totals(heap: &BinaryHeap<Segment>) -> (f64, f64) {
    let mut segs: Vec<&Segment> = heap.iter().collect();
    segs.sort_by(|x, y| x.a.total_cmp(&y.a));
    segs.iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParsevalMoment {
    pub value: f64,
    pub error: f64,
    /// Contribution of `[−K, K]`.
    pub core: f64,
    /// Contribution of `|E| > K`.
    pub tail: f64,
    pub evaluations: usize,
}

/// Quadrature knobs for [`moment_parseval`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    /// Extra uniform breakpoints on `[−K, K]`.
    pub base_points: usize,
    pub rel_tol: f64,
    pub max_evals: usize,
}

impl Default for EnergyGrid {
    fn default() -> Self {
        EnergyGrid { base_points: 64, rel_tol: 1e-7, max_evals: 4_000_000 }
    }
}

/// `⟨|X|^p⟩(T) = (1/(πT)) ∫ Σ_n |n|^p |((H − z)^{-1}φ)(n)|² dE`, `z = E + i/T`,
/// by adaptive quadrature with breakpoints at the box eigenvalues `± {1, 4}/T`.
pub fn moment_parseval(spec: &OperatorSpec, phi: &InitialState, p: f64, t: f64, grid: &EnergyGrid) -> Result<ParsevalMoment> {
    parseval_with_weights(spec, phi, t, grid, |n| weight(n, p), p)
}

fn parseval_with_weights<W>(
    spec: &OperatorSpec,
    phi: &InitialState,
    t: f64,
    grid: &EnergyGrid,
    w: W,
    p: f64,
) -> Result<ParsevalMoment>
where
    W: Fn(i64) -> f64,
{
    if !(p >= 0.0) {
        return Err(invalid("moment order p must be nonnegative"));
    }
    if !(t > 0.0) {
        return Err(invalid("T must be positive"));
    }
    let v = phi.to_box(spec)?;
    let op = assemble_finite(spec)?;
    let weights: Vec<f64> = (0..op.dim()).map(|i| w(spec.window.0 + i as i64)).collect();
    let eta = 1.0 / t;
    let k = spec.spectrum_radius();
    let failure = std::sync::Mutex::new(None);
    let f = |e: f64| -> f64 {
        match Resolvent::new(&op, Complex64::new(e, eta)) {
            Ok(r) => r.solve(&v).iter().zip(&weights).map(|(x, w)| w * x.norm_sqr()).sum(),
            Err(err) => {
                *failure.lock().unwrap() = Some(err);
                0.0
            }
        }
    };
    let eig = op.eigen();
    let mut breaks: Vec<f64> = (0..=grid.base_points.max(1))
        .map(|i| -k + 2.0 * k * i as f64 / grid.base_points.max(1) as f64)
        .collect();
    for &e in &eig.values {
        for d in [0.0, 1.0, -1.0, 4.0, -4.0] {
            let x = e + d * eta;
            if x > -k && x < k {
                breaks.push(x);
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let core = integrate_adaptive(f, &breaks, grid.rel_tol, grid.max_evals);
    // E = ±(K + s/(1−s)), s ∈ [0, 1)
    let tail_f = |s: f64| {
        let u = s / (1.0 - s);
        let jac = 1.0 / ((1.0 - s) * (1.0 - s));
        (f(k + u) + f(-k - u)) * jac
    };
    let tail_breaks: Vec<f64> = (0..=16).map(|i| i as f64 / 16.0).collect();
    let tail = integrate_adaptive(tail_f, &tail_breaks, grid.rel_tol, grid.max_evals);
    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }
    let scale = 1.0 / (std::f64::consts::PI * t);
    let value = scale * (core.value + tail.value);
    let error = scale * (core.error + tail.error);
    if error > 0.01 * value.abs() {
        return Err(Error::Unconverged(format!("quadrature error {error:e} exceeds 1% of {value:e}")));
    }
    Ok(ParsevalMoment {
        value,
        error,
        core: scale * core.value,
        tail: scale * tail.value,
        evaluations: core.evaluations + tail.evaluations,
    })
}

/// `Σ_n a(n, T)` by the Parseval route; equals `‖φ‖²`.
pub fn parseval_normalization(spec: &OperatorSpec, phi: &InitialState, t: f64, grid: &EnergyGrid) -> Result<ParsevalMoment> {
    parseval_with_weights(spec, phi, t, grid, |_| 1.0, 0.0)
}

/// `a(j, n, T)` by the Parseval route.
pub fn transition_parseval(spec: &OperatorSpec, j: i64, n: i64, t: f64, grid: &EnergyGrid) -> Result<ParsevalMoment> {
    parseval_with_weights(spec, &InitialState::delta(j), t, grid, |m| if m == n { 1.0 } else { 0.0 }, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundTheorem {
    #[serde(rename = "qdDC")]
    QdDc,
    #[serde(rename = "qdWDC")]
    QdWdc,
    #[serde(rename = "qdLiou")]
    QdLiou,
    #[serde(rename = "generic")]
    Generic,
    #[serde(rename = "generic_ca1")]
    Ca1,
    #[serde(rename = "generic_ca2")]
    Ca2,
    #[serde(rename = "generic_ca3")]
    Ca3,
}

impl BoundTheorem {
    pub fn tag(&self) -> &'static str {
        match self {
            BoundTheorem::QdDc => "qdDC",
            BoundTheorem::QdWdc => "qdWDC",
            BoundTheorem::QdLiou => "qdLiou",
            BoundTheorem::Generic => "generic",
            BoundTheorem::Ca1 => "generic_ca1",
            BoundTheorem::Ca2 => "generic_ca2",
            BoundTheorem::Ca3 => "generic_ca3",
        }
    }
}

fn default_c0() -> f64 {
    5.0
}

fn default_threshold() -> f64 {
    std::f64::consts::E
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    pub theorem: BoundTheorem,
    pub p: f64,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub c2: Option<f64>,
    #[serde(default)]
    pub psi: Option<PsiSpec>,
    /// Bounds are evaluated only for `T` above this.
    #[serde(default = "default_threshold")]
    pub t_threshold: f64,
}

impl BoundParams {
    pub fn new(theorem: BoundTheorem, p: f64) -> Self {
        BoundParams {
            theorem,
            p,
            c0: 5.0,
            epsilon: 0.0,
            gamma: None,
            kappa: None,
            delta: None,
            sigma: None,
            c2: None,
            psi: None,
            t_threshold: default_threshold(),
        }
    }

    /// `C₀ = 5C` for the covering exponent `C`.
    pub fn with_covering_exponent(mut self, c: f64) -> Self {
        self.c0 = 5.0 * c;
        self
    }

    fn need(v: Option<f64>, name: &str) -> Result<f64> {
        v.ok_or_else(|| invalid(format!("bound parameter {name} is required")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0) {
            return Err(invalid("p must be positive"));
        }
        if !(self.c0 > 0.0) || !(self.epsilon >= 0.0) {
            return Err(invalid("C0 must be positive and epsilon nonnegative"));
        }
        match self.theorem {
            BoundTheorem::QdDc => {
                if !(Self::need(self.gamma, "gamma")? >= 1.0) {
                    return Err(invalid("qdDC needs gamma >= 1"));
                }
            }
            BoundTheorem::QdWdc => {
                if !(Self::need(self.gamma, "gamma")? > 1.0) {
                    return Err(invalid("qdWDC needs gamma > 1"));
                }
                if !(Self::need(self.kappa, "kappa")? > 0.0) {
                    return Err(invalid("qdWDC needs kappa > 0"));
                }
            }
            BoundTheorem::QdLiou => {
                let g = Self::need(self.gamma, "gamma")?;
                if !(g > 0.0 && g < 1.0 / self.c0) {
                    return Err(invalid(format!("qdLiou needs 0 < gamma < 1/C0 = {}", 1.0 / self.c0)));
                }
            }
            BoundTheorem::Generic => {
                if !(Self::need(self.c2, "c2")? > 0.0) {
                    return Err(invalid("generic bound needs c2 > 0"));
                }
                match self.psi {
                    Some(PsiSpec::Power { delta }) if delta > 0.0 => {}
                    Some(PsiSpec::LogPower { exponent }) if exponent > 1.0 => {}
                    Some(_) => return Err(invalid("psi parameter out of range")),
                    None => return Err(invalid("generic bound needs psi")),
                }
            }
            BoundTheorem::Ca1 | BoundTheorem::Ca3 => {
                if !(Self::need(self.delta, "delta")? > 0.0) {
                    return Err(invalid("delta must be positive"));
                }
            }
            BoundTheorem::Ca2 => {
                if !(Self::need(self.delta, "delta")? > 0.0) || !(Self::need(self.sigma, "sigma")? > 0.0) {
                    return Err(invalid("delta and sigma must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// `Γ = Ψ^{-1}`, in log form: `log Γ(y)`.
fn ln_gamma_inverse(psi: PsiSpec, y: f64) -> f64 {
    match psi {
        PsiSpec::Power { delta } => y.ln() / delta,
        PsiSpec::LogPower { exponent } => y.powf(1.0 / exponent),
    }
}

/// Logarithm of the selected bound at `log T = ln_t`, usable far beyond
/// the `f64` range of `T` itself.
pub fn log_bound_at(params: &BoundParams, ln_t: f64) -> Result<f64> {
    params.validate()?;
    if !(ln_t > params.t_threshold.ln()) {
        return Err(invalid(format!("T = e^{ln_t} is not above the threshold {}", params.t_threshold)));
    }
    let p = params.p;
    let eps = params.epsilon;
    let c0 = params.c0;
    let lt = ln_t;
    let llt = lt.ln();
    let g = params.gamma.unwrap_or(0.0);
    let d = params.delta.unwrap_or(0.0);
    Ok(match params.theorem {
        BoundTheorem::Generic => {
            let c2 = params.c2.unwrap();
            p * ln_gamma_inverse(params.psi.unwrap(), 80.0 / c2 * lt)
        }
        BoundTheorem::Ca1 => (p / d + eps) * llt,
        BoundTheorem::Ca2 => p * ((1.0 + eps) / d * llt).powf(1.0 / params.sigma.unwrap()),
        BoundTheorem::Ca3 => p * lt.powf(d + eps),
        BoundTheorem::QdDc => (p * c0 * g + eps) * llt,
        BoundTheorem::QdWdc => p * params.kappa.unwrap() * (c0 + eps).powf(g) * llt.powf(g),
        BoundTheorem::QdLiou => p * lt.powf(c0 * g + eps),
    })
}

pub fn bound_eval(params: &BoundParams, t: f64) -> Result<f64> {
    log_bound_at(params, t.ln()).map(f64::exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ScaleKind {
    /// `log value` against `log T`: power laws.
    #[serde(rename = "logT")]
    LogT,
    /// `log value` against `log log T`: powers of `log T`.
    #[serde(rename = "loglogT")]
    LogLogT,
    /// `log log value` against `log log T`: `exp((log T)^a)`.
    #[serde(rename = "logT_power")]
    LogTPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub scale_kind: ScaleKind,
    pub exponent: f64,
    pub r2: f64,
    /// Set for constant curves, reported with exponent 0.
    pub degenerate: bool,
}

pub fn growth_fit(ts: &[f64], values: &[f64], scale: ScaleKind) -> Result<GrowthFit> {
    if ts.len() != values.len() {
        return Err(invalid("T grid and values are misaligned"));
    }
    if ts.len() < 6 {
        return Err(invalid(format!("growth fit needs at least 6 samples, got {}", ts.len())));
    }
    let (lo, hi) = ts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &t| (a.min(t), b.max(t)));
    if !(lo > 1.0) || hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(invalid("growth fit needs T > 1 spanning at least two decades"));
    }
    let (vmin, vmax) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if vmax - vmin <= 1e-9 * vmax.abs().max(f64::MIN_POSITIVE) {
        return Ok(GrowthFit { scale_kind: scale, exponent: 0.0, r2: 1.0, degenerate: true });
    }
    if !(vmin > 0.0) || (scale == ScaleKind::LogTPower && !(vmin > 1.0)) {
        return Err(invalid("values must be positive (above 1 for the logT_power scale)"));
    }
    let xs: Vec<f64> = ts
        .iter()
        .map(|t| match scale {
            ScaleKind::LogT => t.ln(),
            ScaleKind::LogLogT | ScaleKind::LogTPower => t.ln().ln(),
        })
        .collect();
    let ys: Vec<f64> = values
        .iter()
        .map(|v| match scale {
            ScaleKind::LogTPower => v.ln().ln(),
            _ => v.ln(),
        })
        .collect();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| invalid("degenerate T grid"))?;
    Ok(GrowthFit { scale_kind: scale, exponent: fit.slope, r2: fit.r2, degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSeries {
    pub theorem: BoundTheorem,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub p: f64,
    pub t_grid: Vec<f64>,
    pub values_spectral: Vec<f64>,
    pub values_parseval: Option<Vec<f64>>,
    pub bound_values: Vec<BoundSeries>,
    pub fit: Option<GrowthFit>,
}

impl MomentCurve {
    /// `max_T value/bound` for the given bound series.
    pub fn calibration(&self, theorem: BoundTheorem) -> Option<f64> {
        let b = self.bound_values.iter().find(|s| s.theorem == theorem)?;
        Some(self.values_spectral.iter().zip(&b.values).map(|(v, b)| v / b).fold(0.0, f64::max))
    }
}

/// Settings for [`moment_curve`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveOptions {
    pub policy: BoxPolicy,
    pub parseval: Option<EnergyGrid>,
    pub bounds: Vec<BoundParams>,
    pub fit_scale: Option<ScaleKind>,
}

pub fn moment_curve(
    spec: &OperatorSpec,
    phi: &InitialState,
    p: f64,
    t_grid: &[f64],
    opts: &CurveOptions,
) -> Result<MomentCurve> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("T grid must be nonempty and increasing"));
    }
    let sm = SpectralMoments::new(spec, phi, opts.policy)?;
    let values_spectral: Vec<f64> = sm.moments(p, t_grid)?.iter().map(|m| m.value).collect();
    let values_parseval = match &opts.parseval {
        Some(g) => Some(
            t_grid
                .iter()
                .map(|&t| moment_parseval(spec, phi, p, t, g).map(|m| m.value))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let bound_values = opts
        .bounds
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.p = p;
            Ok(BoundSeries { theorem: b.theorem, values: t_grid.iter().map(|&t| bound_eval(&b, t)).collect::<Result<_>>()? })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = opts.fit_scale.map(|s| growth_fit(t_grid, &values_spectral, s)).transpose()?;
    Ok(MomentCurve { p, t_grid: t_grid.to_vec(), values_spectral, values_parseval, bound_values, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{Hopping, PotentialSpec};

    const GOLDEN: f64 = 0.618_033_988_749_894_9;

    fn free(r: i64) -> OperatorSpec {
        OperatorSpec::new(PotentialSpec::zero(), GOLDEN, 0.0, (-r, r), Hopping::NearestNeighbor).unwrap()
    }

    fn diagonal(r: i64) -> OperatorSpec {
        OperatorSpec::new(PotentialSpec::amo(1.0), GOLDEN, 0.2, (-r, r), Hopping::None).unwrap()
    }

    /// `J_n(x)` by its power series.
    fn bessel(n: u32, x: f64) -> f64 {
        let mut term = (x / 2.0).powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
        let mut sum = term;
        for k in 1..200 {
            term *= -(x * x / 4.0) / (k as f64 * (k + n) as f64);
            sum += term;
            if term.abs() < 1e-300 {
                break;
            }
        }
        sum
    }

    #[test]
    fn initial_state_validation() {
        assert!(InitialState::new(vec![], false).is_err());
        assert!(InitialState::new(vec![(0, Complex64::new(0.5, 0.0))], true).is_err());
        assert!(InitialState::new(vec![(0, Complex64::new(1.0, 0.0)), (0, Complex64::new(0.0, 0.0))], false).is_err());
        let s: InitialState = serde_json::from_str(r#"{"support": [[2, 0.6, 0.0], [-1, 0.0, 0.8]]}"#).unwrap();
        assert_eq!(s.diameter(), 3);
        assert!(serde_json::from_str::<InitialState>(r#"{"support": [[0, 1, 0]], "extra": 1}"#).is_err());
    }

    #[test]
    fn evolution_examples() {
        let phi = InitialState::new(vec![(-1, Complex64::new(0.6, 0.0)), (2, Complex64::new(0.0, 0.8))], true).unwrap();
        let d = diagonal(20);
        let psi = evolve_state(&d, &phi, 0.0).unwrap();
        assert_eq!(psi.at(-1), Complex64::new(0.6, 0.0));
        let psi = evolve_state(&d, &phi, 3.7).unwrap();
        for &(n, a) in phi.support() {
            let want = a * Complex64::from_polar(1.0, -3.7 * d.v_at(n));
            assert!((psi.at(n) - want).norm() < 1e-12);
        }
        let f = free(60);
        let psi = evolve_state(&f, &InitialState::delta(0), 1.0).unwrap();
        for n in -60i64..=60 {
            let j = bessel(n.unsigned_abs() as u32, 2.0);
            assert!((psi.at(n).norm_sqr() - j * j).abs() < 1e-6, "site {n}");
        }
        assert!(matches!(evolve_state(&free(10), &InitialState::delta(0), 20.0), Err(Error::BoxBreach { .. })));
    }

    #[test]
    fn spectral_moment_examples() {
        let phi = InitialState::new(vec![(-1, Complex64::new(0.6, 0.0)), (2, Complex64::new(0.0, 0.8))], true).unwrap();
        let sm = SpectralMoments::new(&diagonal(20), &phi, BoxPolicy::Guarded).unwrap();
        let want = 0.36 * 1.0 + 0.64 * 4.0;
        for m in sm.moments(2.0, &[0.1, 10.0, 1e4]).unwrap() {
            assert!((m.value - want).abs() < 1e-12);
            assert!((m.normalization - 1.0).abs() < 1e-12);
        }
        let m = moment_spectral(&free(50), &InitialState::delta(0), 2.0, 1e-3, BoxPolicy::Guarded).unwrap();
        assert!(m.value <= 1e-2);
        for t in [1.0, 10.0] {
            let m = moment_spectral(&free(80), &InitialState::delta(3), 1.5, t, BoxPolicy::FiniteBox).unwrap();
            assert!((m.normalization - 1.0).abs() < 1e-9);
        }
        assert!(moment_spectral(&free(5), &InitialState::delta(0), 0.0, 1.0, BoxPolicy::Guarded).is_err());
        assert!(matches!(
            moment_spectral(&free(20), &InitialState::delta(0), 2.0, 100.0, BoxPolicy::Guarded),
            Err(Error::BoxBreach { .. })
        ));
        assert!(moment_spectral(&free(20), &InitialState::delta(0), 2.0, 100.0, BoxPolicy::FiniteBox).is_ok());
    }

    #[test]
    fn moment_matches_direct_time_average() {
        // independent route: quadrature of ⟨ψ(t), X² ψ(t)⟩ against (2/T)e^{−2t/T}
        let spec = OperatorSpec::amo(3.0, GOLDEN, 0.3, (-40, 40)).unwrap();
        let t_avg = 2.0;
        let f = |t: f64| -> f64 {
            let psi = evolve_state(&spec, &InitialState::delta(0), t).unwrap();
            (-40i64..=40).map(|n| (n * n) as f64 * psi.at(n).norm_sqr()).sum::<f64>() * (2.0 / t_avg) * (-2.0 * t / t_avg).exp()
        };
        let q = integrate_adaptive(f, &[0.0, 2.0, 5.0, 10.0, 20.0, 40.0], 1e-10, 200_000);
        let m = moment_spectral(&spec, &InitialState::delta(0), 2.0, t_avg, BoxPolicy::FiniteBox).unwrap();
        assert!((q.value - m.value).abs() < 1e-6 * m.value, "{} vs {}", q.value, m.value);
    }

    #[test]
    fn parseval_examples() {
        let d = diagonal(10);
        let grid = EnergyGrid::default();
        let t = 50.0;
        let a = transition_parseval(&d, 0, 0, t, &grid).unwrap();
        let v0 = d.v_at(0);
        let k = d.spectrum_radius();
        let core = (((k - v0) * t).atan() + ((k + v0) * t).atan()) / std::f64::consts::PI;
        assert!((a.core - core).abs() < 1e-9);
        assert!((a.value - 1.0).abs() < 1e-8);
        let m = moment_parseval(&d, &InitialState::delta(0), 2.0, t, &grid).unwrap();
        assert_eq!(m.value, 0.0);
        let f = free(100);
        let phi = InitialState::delta(0);
        let sp = moment_spectral(&f, &phi, 2.0, 50.0, BoxPolicy::FiniteBox).unwrap();
        let pv = moment_parseval(&f, &phi, 2.0, 50.0, &grid).unwrap();
        assert!((sp.value - pv.value).abs() <= 0.01 * sp.value, "{} vs {}", sp.value, pv.value);
        let n = parseval_normalization(&f, &phi, 50.0, &grid).unwrap();
        assert!((n.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ballistic_ceiling_and_monotone_in_p() {
        let spec = OperatorSpec::amo(0.5, GOLDEN, 0.1, (-150, 150)).unwrap();
        let phi = InitialState::new(vec![(3, Complex64::new(0.6, 0.0)), (5, Complex64::new(0.8, 0.0))], true).unwrap();
        let sm = SpectralMoments::new(&spec, &phi, BoxPolicy::FiniteBox).unwrap();
        let norm_h = assemble_finite(&spec).unwrap().row_sum_norm();
        let ts = [1.0, 3.0, 10.0];
        let mut prev = vec![0.0; ts.len()];
        for p in [0.5, 1.0, 2.0, 3.0] {
            let vals = sm.moments(p, &ts).unwrap();
            for (i, (m, &t)) in vals.iter().zip(&ts).enumerate() {
                assert!(m.value <= (2.0 * norm_h * t + 5.0 + 5.0).powf(p));
                assert!(m.value + 1e-12 >= prev[i]);
                prev[i] = m.value;
            }
        }
    }

    #[test]
    fn bound_examples() {
        let mut ca1 = BoundParams::new(BoundTheorem::Ca1, 2.0);
        ca1.delta = Some(0.5);
        assert!((bound_eval(&ca1, 10f64.exp()).unwrap() - 1e4).abs() < 1e-8);
        let mut dc = BoundParams::new(BoundTheorem::QdDc, 1.0);
        dc.gamma = Some(1.0);
        let t = std::f64::consts::E.powf(std::f64::consts::E);
        assert!((bound_eval(&dc, t).unwrap() - 5f64.exp()).abs() < 1e-9);
        assert!((bound_eval(&dc, t).unwrap() - 148.413).abs() < 1e-3);
        let mut generic = BoundParams::new(BoundTheorem::Generic, 2.0);
        generic.c2 = Some(0.7);
        generic.psi = Some(PsiSpec::Power { delta: 0.5 });
        let ratios: Vec<f64> =
            [1e3, 1e6, 1e12].iter().map(|&t| bound_eval(&generic, t).unwrap() / bound_eval(&ca1, t).unwrap()).collect();
        for r in &ratios {
            assert!((r / ratios[0] - 1.0).abs() < 1e-12);
        }
        assert!((ratios[0] - (80.0f64 / 0.7).powf(4.0)).abs() < 1e-6 * ratios[0]);
        dc.gamma = Some(0.9);
        assert!(bound_eval(&dc, 100.0).is_err());
        let mut liou = BoundParams::new(BoundTheorem::QdLiou, 1.0);
        liou.gamma = Some(0.2);
        assert!(bound_eval(&liou, 100.0).is_err());
        liou.gamma = Some(0.1);
        assert!(bound_eval(&liou, 100.0).is_ok());
        assert!(bound_eval(&liou, 2.0).is_err());
    }

    #[test]
    fn wdc_below_liouville_eventually() {
        let mut w = BoundParams::new(BoundTheorem::QdWdc, 2.0);
        w.gamma = Some(2.0);
        w.kappa = Some(1.0);
        let mut l = BoundParams::new(BoundTheorem::QdLiou, 2.0);
        l.gamma = Some(0.1);
        let sweep: Vec<bool> = (2..400)
            .map(|i| {
                let ln_t = 1.2f64.powi(i);
                log_bound_at(&w, ln_t).unwrap() <= log_bound_at(&l, ln_t).unwrap()
            })
            .collect();
        let first = sweep.iter().position(|&b| b).expect("crossover");
        assert!(sweep[first..].iter().all(|&b| b));
        assert!(!sweep[0]);
    }

    #[test]
    fn growth_fit_examples() {
        let ts: Vec<f64> = (0..10).map(|i| 10f64.powf(1.0 + 0.4 * i as f64)).collect();
        let v: Vec<f64> = ts.iter().map(|t| t.ln().powi(6)).collect();
        let f = growth_fit(&ts, &v, ScaleKind::LogLogT).unwrap();
        assert!((f.exponent - 6.0).abs() < 1e-10 && (f.r2 - 1.0).abs() < 1e-12);
        let f = growth_fit(&ts, &vec![3.0; 10], ScaleKind::LogLogT).unwrap();
        assert!(f.degenerate && f.exponent == 0.0);
        let v: Vec<f64> = ts.iter().map(|t| t.powf(0.5)).collect();
        assert!((growth_fit(&ts, &v, ScaleKind::LogT).unwrap().exponent - 0.5).abs() < 1e-12);
        let v: Vec<f64> = ts.iter().map(|t| t.ln().powf(0.3).exp()).collect();
        assert!((growth_fit(&ts, &v, ScaleKind::LogTPower).unwrap().exponent - 0.3).abs() < 1e-12);
        assert!(growth_fit(&ts[..5], &v[..5], ScaleKind::LogT).is_err());
        assert!(growth_fit(&[10.0, 11.0, 12.0, 13.0, 14.0, 15.0], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], ScaleKind::LogT).is_err());
    }

    #[test]
    fn diagonal_curve_is_constant() {
        let ts: Vec<f64> = (0..8).map(|i| 10f64.powi(1 + i / 2) * (1.0 + (i % 2) as f64)).collect();
        let mut dc = BoundParams::new(BoundTheorem::QdDc, 2.0);
        dc.gamma = Some(1.0);
        let opts =
            CurveOptions { policy: BoxPolicy::Guarded, parseval: None, bounds: vec![dc], fit_scale: Some(ScaleKind::LogLogT) };
        let c = moment_curve(&diagonal(10), &InitialState::delta(2), 2.0, &ts, &opts).unwrap();
        assert!(c.values_spectral.iter().all(|&v| (v - 4.0).abs() < 1e-12));
        assert!(c.fit.unwrap().degenerate);
        assert!(c.calibration(BoundTheorem::QdDc).unwrap() > 0.0);
    }
}
