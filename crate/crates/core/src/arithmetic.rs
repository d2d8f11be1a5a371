//! Frequency arithmetic: continued fractions, torus distance and the
//! Diophantine-type lower envelopes for `‖nα‖`.
//!
//! A [`FrequencyProfile`] carries the partial quotients of `α ∈ (0,1)`,
//! its convergents in exact integer arithmetic and a double-double value
//! of `α`. Profiles built from a coefficient list are *exact*: the
//! expansion is understood to continue with partial quotients equal to 1
//! after the supplied list, so the number is irrational and every
//! `‖q_k α‖` can be evaluated from the continued-fraction tail rather than
//! from floating point. Profiles expanded from an `f64` carry only the
//! quotients that survived the precision cut.

use num_bigint::{BigInt, BigUint};
use num_traits::{FromPrimitive, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Distance from `x` to the nearest integer.
pub fn torus_norm(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(invalid(format!("torus_norm of non-finite value {x}")));
    }
    Ok((x - x.round()).abs())
}

/// Lower envelope shapes for `‖nα‖`, written as `‖nα‖ ≥ 1/Φ(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ConditionForm {
    /// `‖nα‖ ≥ η n^{-γ}`, γ ≥ 1.
    PowerLaw { eta: f64, gamma: f64 },
    /// `‖nα‖ ≥ η exp(-κ (log n)^γ)`, γ > 1.
    LogPower { eta: f64, kappa: f64, gamma: f64 },
    /// `‖nα‖ ≥ η exp(-κ n^γ)`, γ > 0.
    StretchedExp { eta: f64, kappa: f64, gamma: f64 },
}

/// A Diophantine-type condition together with the monotonicity data of
/// its `Φ`: `Φ(t)/t` is increasing on `[rho, ∞)` and `mu = max_{[1,rho]} Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiophantineCondition {
    #[serde(flatten)]
    pub form: ConditionForm,
    pub rho: f64,
    pub mu: f64,
}

impl DiophantineCondition {
    pub fn new(form: ConditionForm) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let rho = match form {
            ConditionForm::PowerLaw { eta, gamma } => {
                positive("eta", eta)?;
                if !(gamma >= 1.0) || !gamma.is_finite() {
                    return Err(invalid(format!("power-law condition needs gamma >= 1, got {gamma}")));
                }
                2.0
            }
            ConditionForm::LogPower { eta, kappa, gamma } => {
                positive("eta", eta)?;
                positive("kappa", kappa)?;
                if !(gamma > 1.0) || !gamma.is_finite() {
                    return Err(invalid(format!("log-power condition needs gamma > 1, got {gamma}")));
                }
                // d/dt log(Φ/t) >= 0  <=>  κγ (log t)^{γ-1} >= 1
                let threshold = (kappa * gamma).powf(-1.0 / (gamma - 1.0)).exp();
                threshold.max(2.0)
            }
            ConditionForm::StretchedExp { eta, kappa, gamma } => {
                positive("eta", eta)?;
                positive("kappa", kappa)?;
                positive("gamma", gamma)?;
                // κγ t^γ >= 1
                (kappa * gamma).powf(-1.0 / gamma).max(2.0)
            }
        };
        let mut cond = DiophantineCondition { form, rho, mu: 0.0 };
        // Φ is increasing on [1, ∞) for every supported form.
        cond.mu = cond.phi(rho);
        Ok(cond)
    }

    pub fn power_law(eta: f64, gamma: f64) -> Result<Self> {
        Self::new(ConditionForm::PowerLaw { eta, gamma })
    }

    pub fn log_power(eta: f64, kappa: f64, gamma: f64) -> Result<Self> {
        Self::new(ConditionForm::LogPower { eta, kappa, gamma })
    }

    pub fn stretched_exp(eta: f64, kappa: f64, gamma: f64) -> Result<Self> {
        Self::new(ConditionForm::StretchedExp { eta, kappa, gamma })
    }

    pub fn eta(&self) -> f64 {
        match self.form {
            ConditionForm::PowerLaw { eta, .. }
            | ConditionForm::LogPower { eta, .. }
            | ConditionForm::StretchedExp { eta, .. } => eta,
        }
    }

    /// `log Φ(t)`; stays finite where `Φ` itself would overflow.
    pub fn ln_phi(&self, t: f64) -> f64 {
        match self.form {
            ConditionForm::PowerLaw { eta, gamma } => gamma * t.ln() - eta.ln(),
            ConditionForm::LogPower { eta, kappa, gamma } => {
                let l = t.ln().max(0.0);
                kappa * l.powf(gamma) - eta.ln()
            }
            ConditionForm::StretchedExp { eta, kappa, gamma } => kappa * t.powf(gamma) - eta.ln(),
        }
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.ln_phi(t).exp()
    }

    /// Inverse of `Φ` on `[1, ∞)`.
    pub fn phi_inverse(&self, y: f64) -> f64 {
        match self.form {
            ConditionForm::PowerLaw { eta, gamma } => (eta * y).powf(1.0 / gamma),
            ConditionForm::LogPower { eta, kappa, gamma } => {
                ((eta * y).ln().max(0.0) / kappa).powf(1.0 / gamma).exp()
            }
            ConditionForm::StretchedExp { eta, kappa, gamma } => {
                ((eta * y).ln().max(0.0) / kappa).powf(1.0 / gamma)
            }
        }
    }

    /// Replace `η`, recomputing `mu`.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        let form = match self.form {
            ConditionForm::PowerLaw { gamma, .. } => ConditionForm::PowerLaw { eta, gamma },
            ConditionForm::LogPower { kappa, gamma, .. } => ConditionForm::LogPower { eta, kappa, gamma },
            ConditionForm::StretchedExp { kappa, gamma, .. } => {
                ConditionForm::StretchedExp { eta, kappa, gamma }
            }
        };
        Self::new(form)
    }
}

/// How the continued fraction continues past the stored quotients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfTail {
    /// Exact input: every further partial quotient equals 1.
    Ones,
    /// Expanded from floating point; further quotients are unknown.
    Unknown,
}

/// Truncated estimate of `β(α)` with the depth it was computed at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub value: f64,
    /// Number of convergents available.
    pub depth: usize,
    /// Index `k` (1-based) attaining the maximum of `log(q_{k+1})/q_k`.
    pub k_at_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyProfile {
    alpha_hi: f64,
    alpha_lo: f64,
    cf: Vec<u64>,
    /// `(p_k, q_k)` for `k = 1..=cf.len()`.
    convergents: Vec<(BigUint, BigUint)>,
    tail: CfTail,
    pub beta_estimate: Option<BetaEstimate>,
    pub condition: Option<DiophantineCondition>,
}

/// `p_k, q_k` from partial quotients, with `p_0 = 0, q_0 = 1`.
fn convergents_of(cf: &[u64]) -> Vec<(BigUint, BigUint)> {
    let mut out = Vec::with_capacity(cf.len());
    let (mut p2, mut q2) = (BigUint::one(), BigUint::zero());
    let (mut p1, mut q1) = (BigUint::zero(), BigUint::one());
    for &a in cf {
        let a = BigUint::from(a);
        let p = &a * &p1 + &p2;
        let q = &a * &q1 + &q2;
        p2 = std::mem::replace(&mut p1, p.clone());
        q2 = std::mem::replace(&mut q1, q.clone());
        out.push((p, q));
    }
    out
}

/// Natural log of a big integer without overflowing through `f64`.
pub(crate) fn ln_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().unwrap_or(f64::INFINITY);
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// `p / q` as an unevaluated double-double `hi + lo`.
fn ratio_double_double(p: &BigUint, q: &BigUint) -> (f64, f64) {
    const SHIFT: u32 = 128;
    let scaled = BigInt::from((p << SHIFT) / q);
    let two_shift = 2f64.powi(SHIFT as i32);
    let hi = scaled.to_f64().unwrap_or(f64::NAN) / two_shift;
    let hi_scaled = BigInt::from_f64(hi * two_shift).unwrap_or_default();
    let lo = (scaled - hi_scaled).to_f64().unwrap_or(0.0) / two_shift;
    (hi, lo)
}

impl FrequencyProfile {
    /// Exact profile from partial quotients `a_1, a_2, …`; the expansion
    /// continues with ones.
    pub fn from_cf(cf: Vec<u64>) -> Result<Self> {
        if cf.is_empty() {
            return Err(invalid("continued fraction needs at least one partial quotient"));
        }
        if cf.iter().any(|&a| a == 0) {
            return Err(invalid("partial quotients must be positive"));
        }
        let convergents = convergents_of(&cf);
        // Extend with ones until q^2 exceeds 2^128 to pin down the value.
        let mut ext = cf.clone();
        loop {
            let conv = convergents_of(&ext);
            let (p, q) = conv.last().expect("non-empty");
            if q.bits() >= 66 && ext.len() > cf.len() {
                let (hi, lo) = ratio_double_double(p, q);
                let mut profile = FrequencyProfile {
                    alpha_hi: hi,
                    alpha_lo: lo,
                    cf,
                    convergents,
                    tail: CfTail::Ones,
                    beta_estimate: None,
                    condition: None,
                };
                profile.beta_estimate = profile.beta_exponent_estimate().ok();
                return Ok(profile);
            }
            ext.push(1);
        }
    }

    /// Golden-mean frequency `(√5−1)/2 = [0; 1, 1, 1, …]`.
    pub fn golden(depth: usize) -> Self {
        Self::from_cf(vec![1; depth.max(1)]).expect("ones are valid quotients")
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_hi
    }

    /// Double-double representation `(hi, lo)` of `α`.
    pub fn alpha_dd(&self) -> (f64, f64) {
        (self.alpha_hi, self.alpha_lo)
    }

    pub fn cf_coeffs(&self) -> &[u64] {
        &self.cf
    }

    pub fn convergents(&self) -> &[(BigUint, BigUint)] {
        &self.convergents
    }

    pub fn depth(&self) -> usize {
        self.cf.len()
    }

    pub fn tail(&self) -> CfTail {
        self.tail
    }

    pub fn with_condition(mut self, cond: DiophantineCondition) -> Self {
        self.condition = Some(cond);
        self
    }

    /// Denominators `q_1, …` as `u128`, stopping at the first that overflows.
    pub fn denominators_u128(&self) -> Vec<u128> {
        self.convergents.iter().map_while(|(_, q)| q.to_u128()).collect()
    }

    /// `x_j = [0; a_j, a_{j+1}, …]` including the implied tail of ones.
    fn tail_value(&self, j: usize) -> f64 {
        // 1-based j; beyond the stored list the tail is all ones
        const GOLD: f64 = 0.618_033_988_749_894_9;
        if j > self.cf.len() {
            return GOLD;
        }
        let mut x = match self.tail {
            CfTail::Ones => GOLD,
            CfTail::Unknown => 0.0,
        };
        for &a in self.cf[j - 1..].iter().rev() {
            x = 1.0 / (a as f64 + x);
        }
        x
    }

    /// Signed `D_k = q_k α − p_k` for `k ≥ 0`, evaluated from the
    /// continued-fraction tail: `|D_k| = 1/(q_{k+1} + q_k x_{k+2})`.
    pub fn convergent_residual(&self, k: usize) -> Result<f64> {
        let q_at = |i: usize| -> Option<f64> {
            if i == 0 {
                Some(1.0)
            } else {
                self.convergents.get(i - 1).map(|(_, q)| q.to_f64().unwrap_or(f64::INFINITY))
            }
        };
        let qk = q_at(k);
        let qk1 = match (q_at(k + 1), self.tail) {
            (Some(q), _) => Some(q),
            (None, CfTail::Ones) if k == self.cf.len() => {
                // q_{K+1} = q_K + q_{K-1}
                Some(qk.unwrap_or(0.0) + q_at(k.saturating_sub(1)).filter(|_| k > 0).unwrap_or(0.0))
            }
            _ => None,
        };
        match (qk, qk1) {
            (Some(qk), Some(qk1)) => {
                let mag = 1.0 / (qk1 + qk * self.tail_value(k + 2));
                Ok(if k % 2 == 0 { mag } else { -mag })
            }
            _ => Err(Error::TooFewConvergents { have: self.cf.len(), need: k + 1 }),
        }
    }

    /// `nα mod 1` mapped into `[-1/2, 1/2]`.
    ///
    /// Direct double-double multiply-round for `n ≤ 2^40`; above that the
    /// Ostrowski expansion `n = Σ b_k q_k` and the residuals `D_k` are used.
    pub fn signed_frac(&self, n: u128) -> Result<f64> {
        const DIRECT_LIMIT: u128 = 1 << 40;
        if n <= DIRECT_LIMIT {
            let nf = n as f64;
            let prod = nf * self.alpha_hi;
            let err = nf.mul_add(self.alpha_hi, -prod);
            let r = (prod - prod.round()) + err + nf * self.alpha_lo;
            return Ok(r - r.round());
        }
        let qs = self.denominators_u128();
        if qs.last().is_none_or(|&q| q <= n) && self.tail == CfTail::Unknown {
            return Err(Error::TooFewConvergents { have: qs.len(), need: qs.len() + 1 });
        }
        // Extend with the ones tail if needed.
        let mut qs = qs;
        let mut q_prev = if qs.len() >= 2 { qs[qs.len() - 2] } else { 1 };
        while qs.last().is_none_or(|&q| q <= n) {
            let last = *qs.last().unwrap_or(&1);
            let next = last.checked_add(q_prev).ok_or_else(|| invalid("n too large for u128 Ostrowski"))?;
            q_prev = last;
            qs.push(next);
        }
        let mut rem = n;
        let mut acc = 0.0f64;
        for k in (1..=qs.len()).rev() {
            let q = qs[k - 1];
            if q <= rem {
                let b = rem / q;
                rem -= b * q;
                acc += b as f64 * self.residual_extended(k, &qs)?;
                acc -= acc.round();
            }
        }
        // rem < q_1 = a_1 is handled by q_0 = 1
        if rem > 0 {
            acc += rem as f64 * self.residual_extended(0, &qs)?;
        }
        Ok(acc - acc.round())
    }

    fn residual_extended(&self, k: usize, qs: &[u128]) -> Result<f64> {
        if k < self.cf.len() || (k == self.cf.len() && self.tail == CfTail::Ones) {
            return self.convergent_residual(k);
        }
        // inside the ones tail: q_{k+1} = q_k + q_{k-1}, x = golden
        let qk = qs[k - 1] as f64;
        let qk1 = if k < qs.len() { qs[k] as f64 } else { qk + qs[k - 2] as f64 };
        let mag = 1.0 / (qk1 + qk * 0.618_033_988_749_894_9);
        Ok(if k % 2 == 0 { mag } else { -mag })
    }

    /// `‖nα‖_T`.
    pub fn norm_n_alpha(&self, n: u128) -> Result<f64> {
        Ok(self.signed_frac(n)?.abs())
    }

    /// `max_k log(q_{k+1})/q_k` over the tail half of the available
    /// convergents. This is a lower estimate at finite depth, never a limit.
    pub fn beta_exponent_estimate(&self) -> Result<BetaEstimate> {
        let depth = self.convergents.len();
        if depth < 3 {
            return Err(Error::TooFewConvergents { have: depth, need: 3 });
        }
        let start = (depth / 2).max(1);
        let mut best = BetaEstimate { value: f64::NEG_INFINITY, depth, k_at_max: start };
        for k in start..depth {
            let ln_next = ln_big(&self.convergents[k].1);
            let ln_q = ln_big(&self.convergents[k - 1].1);
            let v = ln_next / ln_q.exp();
            if v > best.value {
                best.value = v;
                best.k_at_max = k;
            }
        }
        best.value = best.value.max(0.0);
        Ok(best)
    }
}

/// Expand `alpha ∈ (0,1)` to at most `depth` partial quotients.
///
/// Expansion stops early once the residual carries less than half a
/// mantissa of valid bits; the returned profile then has fewer quotients
/// than requested. A residual indistinguishable from zero is reported as
/// a rational frequency.
pub fn continued_fraction(alpha: f64, depth: usize) -> Result<FrequencyProfile> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if depth == 0 {
        return Err(invalid("depth must be at least 1"));
    }
    let eps = f64::EPSILON;
    let mut x = alpha;
    let mut err = eps * alpha;
    let mut cf = Vec::new();
    while cf.len() < depth {
        if x <= 4.0 * err {
            return Err(Error::RationalFrequency { depth: cf.len() });
        }
        if err / x > 2f64.powi(-26) {
            break;
        }
        let inv = 1.0 / x;
        let a = inv.floor();
        if a > u64::MAX as f64 {
            return Err(Error::RationalFrequency { depth: cf.len() });
        }
        cf.push(a as u64);
        err = err / (x * x) + eps * inv;
        x = inv - a;
        if x == 0.0 {
            return Err(Error::RationalFrequency { depth: cf.len() });
        }
    }
    let convergents = convergents_of(&cf);
    let mut profile = FrequencyProfile {
        alpha_hi: alpha,
        alpha_lo: 0.0,
        cf,
        convergents,
        tail: CfTail::Unknown,
        beta_estimate: None,
        condition: None,
    };
    profile.beta_estimate = profile.beta_exponent_estimate().ok();
    Ok(profile)
}

/// Worst case of `‖nα‖ Φ(n)` over `1 ≤ n ≤ N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionMargin {
    pub margin: f64,
    pub argmin: u128,
    pub n_max: u128,
}

impl ConditionMargin {
    /// Margin above 1 certifies `‖nα‖ > 1/Φ(n)` for `n ≤ n_max`.
    pub fn holds(&self) -> bool {
        self.margin > 1.0
    }
}

/// Minimum of `‖nα‖_T Φ(n)` over `1 ≤ n ≤ n_max`.
///
/// `Φ` is increasing and `‖nα‖ ≥ ‖q_k α‖` for `n < q_{k+1}`, so the
/// minimum is attained at a convergent denominator `q_k ≤ n_max`
/// (with `q_0 = 1`). For profiles whose tail is unknown, the range above
/// the last stored denominator is swept directly.
pub fn verify_condition(
    profile: &FrequencyProfile,
    cond: &DiophantineCondition,
    n_max: u128,
) -> Result<ConditionMargin> {
    if n_max == 0 {
        return Err(invalid("n_max must be at least 1"));
    }
    let mut best = ConditionMargin { margin: f64::INFINITY, argmin: 1, n_max };
    let mut consider = |n: u128, norm: f64| {
        let m = (norm.ln() + cond.ln_phi(n as f64)).exp();
        if m < best.margin {
            best.margin = m;
            best.argmin = n;
        }
    };
    consider(1, profile.convergent_residual(0)?.abs().min(1.0 - profile.alpha()).abs());
    let qs = profile.denominators_u128();
    let mut last_q = 1u128;
    for (i, &q) in qs.iter().enumerate() {
        if q > n_max {
            return Ok(best);
        }
        let k = i + 1;
        let norm = match profile.convergent_residual(k) {
            Ok(d) => d.abs(),
            Err(_) => profile.norm_n_alpha(q)?,
        };
        consider(q, norm);
        last_q = q;
    }
    match profile.tail() {
        CfTail::Ones => {
            // continue through the ones tail
            let mut q_prev = if qs.len() >= 2 { qs[qs.len() - 2] } else { 1 };
            let mut q = last_q;
            loop {
                let next = match q.checked_add(q_prev) {
                    Some(v) => v,
                    None => return Ok(best),
                };
                if next > n_max {
                    return Ok(best);
                }
                q_prev = q;
                q = next;
                consider(q, profile.norm_n_alpha(q)?);
            }
        }
        CfTail::Unknown => {
            const SWEEP_LIMIT: u128 = 100_000_000;
            if n_max - last_q > SWEEP_LIMIT {
                return Err(Error::TooFewConvergents { have: qs.len(), need: qs.len() + 1 });
            }
            for n in last_q + 1..=n_max {
                consider(n, profile.norm_n_alpha(n)?);
            }
            Ok(best)
        }
    }
}

/// Family of test frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFrequencyKind {
    /// Golden mean; certified against a power law with γ = 1.
    Diophantine { depth: usize },
    /// Convergent growth `q_{k+1} ≈ exp(κ (log q_k)^γ)`, γ > 1.
    LogLiouville { kappa: f64, gamma: f64 },
    /// Convergent growth `q_{k+1} ≈ exp(κ q_k^γ)`, γ > 0.
    StretchedLiouville { kappa: f64, gamma: f64 },
}

/// A constructed frequency together with the scale up to which its
/// condition is certified.
#[derive(Debug, Clone)]
pub struct TestFrequency {
    pub profile: FrequencyProfile,
    pub condition: DiophantineCondition,
    /// Largest convergent denominator produced by the growth schedule.
    pub advertised_scale: u128,
}

/// Build an exact-CF frequency whose convergent growth follows the
/// envelope of `kind`, with `η` certified on all convergents up to the
/// advertised scale (`η = 0.99 · min_k ‖q_k α‖ Φ_1(q_k)` where `Φ_1` is the
/// envelope at `η = 1`).
pub fn build_test_frequency(kind: TestFrequencyKind) -> Result<TestFrequency> {
    const QUOTIENT_CAP: u64 = 1 << 62;
    const SCALE_CAP: u128 = 1 << 120;
    let (cf, form_of) = match kind {
        TestFrequencyKind::Diophantine { depth } => {
            if depth < 3 {
                return Err(Error::InfeasibleSchedule("diophantine depth must be >= 3".into()));
            }
            let f: Box<dyn Fn(f64) -> ConditionForm> =
                Box::new(|eta| ConditionForm::PowerLaw { eta, gamma: 1.0 });
            (vec![1u64; depth], f)
        }
        TestFrequencyKind::LogLiouville { kappa, gamma } | TestFrequencyKind::StretchedLiouville { kappa, gamma } => {
            let log_kind = matches!(kind, TestFrequencyKind::LogLiouville { .. });
            if !(kappa > 0.0 && kappa.is_finite()) {
                return Err(Error::InfeasibleSchedule(format!("kappa must be positive, got {kappa}")));
            }
            if log_kind && !(gamma > 1.0 && gamma.is_finite()) {
                return Err(Error::InfeasibleSchedule(format!("log-Liouville growth needs gamma > 1, got {gamma}")));
            }
            if !log_kind && !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::InfeasibleSchedule(format!("stretched growth needs gamma > 0, got {gamma}")));
            }
            let ln_target = move |q: f64| {
                if log_kind {
                    kappa * q.ln().max(0.0).powf(gamma)
                } else {
                    kappa * q.powf(gamma)
                }
            };
            let mut cf = Vec::new();
            let (mut q_prev, mut q) = (0u128, 1u128);
            let mut saw_jump = false;
            loop {
                let ln_t = ln_target(q as f64);
                let a = if ln_t > 130.0 {
                    None
                } else {
                    let target = ln_t.exp();
                    let a = ((target - q_prev as f64) / q as f64).floor().max(1.0);
                    if a > QUOTIENT_CAP as f64 { None } else { Some(a as u64) }
                };
                let Some(a) = a else { break };
                let next = (a as u128).checked_mul(q).and_then(|v| v.checked_add(q_prev));
                let Some(next) = next.filter(|&v| v <= SCALE_CAP) else { break };
                if a > 1 {
                    saw_jump = true;
                }
                cf.push(a);
                q_prev = q;
                q = next;
                if cf.len() > 400 {
                    break;
                }
            }
            if !saw_jump || cf.len() < 3 {
                return Err(Error::InfeasibleSchedule(format!(
                    "growth schedule never leaves the Fibonacci regime below 2^120 (kappa={kappa}, gamma={gamma})"
                )));
            }
            let f: Box<dyn Fn(f64) -> ConditionForm> = if log_kind {
                Box::new(move |eta| ConditionForm::LogPower { eta, kappa, gamma })
            } else {
                Box::new(move |eta| ConditionForm::StretchedExp { eta, kappa, gamma })
            };
            (cf, f)
        }
    };
    let profile = FrequencyProfile::from_cf(cf)?;
    let scale = *profile
        .denominators_u128()
        .last()
        .ok_or_else(|| Error::InfeasibleSchedule("empty schedule".into()))?;
    // certify η on q_0 = 1 and every stored convergent
    let unit = DiophantineCondition::new(form_of(1.0))?;
    let mut ln_min = f64::INFINITY;
    for k in 0..=profile.depth() {
        let q = if k == 0 { 1.0 } else { profile.convergents()[k - 1].1.to_f64().unwrap_or(f64::INFINITY) };
        let v = profile.convergent_residual(k)?.abs().ln() + unit.ln_phi(q);
        ln_min = ln_min.min(v);
    }
    let eta = 0.99 * ln_min.exp();
    let condition = DiophantineCondition::new(form_of(eta))?;
    let profile = profile.with_condition(condition);
    Ok(TestFrequency { profile, condition, advertised_scale: scale })
}

/// JSON form of a frequency: `{"cf": [..], "float_hint": x, "condition": {..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    #[serde(default)]
    pub cf: Vec<u64>,
    #[serde(default)]
    pub float_hint: Option<f64>,
    #[serde(default)]
    pub condition: Option<DiophantineCondition>,
}

impl FrequencySpec {
    /// Float-expansion depth used when only `float_hint` is given.
    pub const FLOAT_DEPTH: usize = 60;

    pub fn from_profile(profile: &FrequencyProfile) -> Self {
        FrequencySpec {
            cf: profile.cf_coeffs().to_vec(),
            float_hint: Some(profile.alpha()),
            condition: profile.condition,
        }
    }

    pub fn resolve(&self) -> Result<FrequencyProfile> {
        let mut profile = if !self.cf.is_empty() {
            let p = FrequencyProfile::from_cf(self.cf.clone())?;
            if let Some(h) = self.float_hint {
                if (p.alpha() - h).abs() > 1e-9 {
                    return Err(invalid(format!(
                        "float_hint {h} disagrees with continued fraction value {}",
                        p.alpha()
                    )));
                }
            }
            p
        } else if let Some(h) = self.float_hint {
            continued_fraction(h, Self::FLOAT_DEPTH)?
        } else {
            return Err(invalid("frequency needs `cf` or `float_hint`"));
        };
        if let Some(c) = self.condition {
            // re-derive rho/mu from the form
            profile.condition = Some(DiophantineCondition::new(c.form)?);
        }
        Ok(profile)
    }
}
