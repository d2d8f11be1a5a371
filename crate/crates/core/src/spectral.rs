//! Finite-scale Lyapunov exponents and large-deviation measurements.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrepancy::IntervalUnionSet;
use crate::error::{invalid, Error, Result};
use crate::linalg::{linear_fit, LinearFit};
use crate::operator::{transfer_matrix_n, OperatorSpec};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Phase samples in `[0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaGrid {
    /// `θ_i = (i + offset)/n`; the offset is `frac(golden)` when requested,
    /// else `1/2`.
    Uniform { n: usize, golden_offset: bool },
    /// Base-2 van der Corput sequence.
    LowDiscrepancy { n: usize },
    /// Seeded Monte-Carlo samples.
    Random { n: usize, seed: u64 },
}

impl ThetaGrid {
    pub fn len(&self) -> usize {
        match *self {
            ThetaGrid::Uniform { n, .. } | ThetaGrid::LowDiscrepancy { n } | ThetaGrid::Random { n, .. } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ThetaGrid::Uniform { .. } => "uniform",
            ThetaGrid::LowDiscrepancy { .. } => "low_discrepancy",
            ThetaGrid::Random { .. } => "random",
        }
    }

    /// Spacing of a uniform grid.
    pub fn spacing(&self) -> Option<f64> {
        match *self {
            ThetaGrid::Uniform { n, .. } if n > 0 => Some(1.0 / n as f64),
            _ => None,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        match *self {
            ThetaGrid::Uniform { n, golden_offset } => {
                let off = if golden_offset { GOLDEN } else { 0.5 };
                (0..n).map(|i| (i as f64 + off) / n as f64).collect()
            }
            ThetaGrid::LowDiscrepancy { n } => (1..=n as u64)
                .map(|i| (i.reverse_bits() >> 11) as f64 * 2f64.powi(-53))
                .collect(),
            ThetaGrid::Random { n, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.random::<f64>()).collect()
            }
        }
    }
}

/// `(1/N) log ‖M_N(θ)‖` at every phase of the grid, in grid order.
pub fn growth_samples(z: Complex64, spec: &OperatorSpec, n: u64, grid: &ThetaGrid) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    if grid.is_empty() {
        return Err(invalid("theta grid is empty"));
    }
    grid.points()
        .par_iter()
        .map(|&theta| Ok(transfer_matrix_n(z, &spec.with_theta(theta), n)?.log_norm() / n as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub z: Complex64,
    pub n: u64,
    pub mean_ln: f64,
    pub sup_ln: f64,
    pub theta_samples: usize,
    pub grid_kind: &'static str,
}

/// Mean and maximum of `(1/N) log ‖M_N(θ)‖` over the grid. The spec's own
/// `θ` is ignored; phases come from the grid.
pub fn lyapunov_estimate(z: Complex64, spec: &OperatorSpec, n: u64, grid: &ThetaGrid) -> Result<LyapunovEstimate> {
    let samples = growth_samples(z, spec, n, grid)?;
    Ok(summarize(z, n, grid, &samples))
}

fn summarize(z: Complex64, n: u64, grid: &ThetaGrid, samples: &[f64]) -> LyapunovEstimate {
    // sequential sum in grid order for reproducibility
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let sup = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    LyapunovEstimate { z, n, mean_ln: mean, sup_ln: sup, theta_samples: samples.len(), grid_kind: grid.kind_name() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub z: Complex64,
    pub n: u64,
    pub n_ref: u64,
    pub kappa: f64,
    /// `L_N`: mean of `(1/N) log ‖M_N‖` at this scale.
    pub mean_ln: f64,
    /// Reference exponent: the mean at scale `n_ref`.
    pub l_ref: f64,
    pub measured_fraction: f64,
    /// `e^{−c₂ L N}` for the fitted `c₂`, once a fit is available.
    pub reference_decay: Option<f64>,
    /// False when `l_ref ≤ 0`.
    pub applicable: bool,
}

fn violations(samples: &[f64], mean: f64, band: f64) -> Vec<bool> {
    samples.iter().map(|&v| (v - mean).abs() > band).collect()
}

/// Fraction of phases with `|(1/N) log ‖M_N(θ)‖ − L_N| > κ L_ref`, where
/// `L_ref` is the grid mean at `n_ref ≥ 4N`.
pub fn deviation_measure(
    z: Complex64,
    spec: &OperatorSpec,
    n: u64,
    grid: &ThetaGrid,
    kappa: f64,
    l_ref: LReference,
) -> Result<DeviationReport> {
    if !(kappa > 0.0) {
        return Err(invalid("kappa must be positive"));
    }
    let (n_ref, l) = l_ref.resolve(z, spec, n, grid)?;
    let samples = growth_samples(z, spec, n, grid)?;
    let est = summarize(z, n, grid, &samples);
    let bad = violations(&samples, est.mean_ln, kappa * l);
    let frac = bad.iter().filter(|&&b| b).count() as f64 / samples.len() as f64;
    Ok(DeviationReport {
        z,
        n,
        n_ref,
        kappa,
        mean_ln: est.mean_ln,
        l_ref: l,
        measured_fraction: frac,
        reference_decay: None,
        applicable: l > 0.0,
    })
}

/// Source of the reference exponent for deviation bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LReference {
    /// Compute the grid mean at this scale (must be at least `4N`).
    Scale(u64),
    /// Use a value already computed at the given scale.
    Known { n_ref: u64, value: f64 },
}

impl LReference {
    fn resolve(self, z: Complex64, spec: &OperatorSpec, n: u64, grid: &ThetaGrid) -> Result<(u64, f64)> {
        let n_ref = match self {
            LReference::Scale(s) => s,
            LReference::Known { n_ref, .. } => n_ref,
        };
        if n_ref < 4 * n {
            return Err(invalid(format!("reference scale {n_ref} is below 4N = {}", 4 * n)));
        }
        match self {
            LReference::Scale(s) => Ok((s, lyapunov_estimate(z, spec, s, grid)?.mean_ln)),
            LReference::Known { n_ref, value } => Ok((n_ref, value)),
        }
    }
}

/// Exponential fit `log(fraction) ≈ a − c₂ L_ref N` over scales with a
/// positive fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c2: f64,
    pub line: LinearFit,
    pub points_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationScan {
    pub reports: Vec<DeviationReport>,
    pub fit: Option<DecayFit>,
}

/// Deviation fractions at several scales sharing one reference exponent
/// taken at `4·max N`, with the fitted decay rate filled into each report.
pub fn deviation_scan(
    z: Complex64,
    spec: &OperatorSpec,
    scales: &[u64],
    grid: &ThetaGrid,
    kappa: f64,
) -> Result<DeviationScan> {
    let n_max = *scales.iter().max().ok_or_else(|| invalid("no scales given"))?;
    let n_ref = 4 * n_max;
    let l = lyapunov_estimate(z, spec, n_ref, grid)?.mean_ln;
    let mut reports = scales
        .iter()
        .map(|&n| deviation_measure(z, spec, n, grid, kappa, LReference::Known { n_ref, value: l }))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_decay(&reports);
    if let Some(f) = fit {
        for r in &mut reports {
            r.reference_decay = Some((-f.c2 * r.l_ref * r.n as f64).exp());
        }
    }
    Ok(DeviationScan { reports, fit })
}

/// Least squares of `log(fraction)` against `N`; `c₂ = −slope / L_ref`.
pub fn fit_decay(reports: &[DeviationReport]) -> Option<DecayFit> {
    let used: Vec<&DeviationReport> = reports.iter().filter(|r| r.measured_fraction > 0.0 && r.applicable).collect();
    let xs: Vec<f64> = used.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = used.iter().map(|r| r.measured_fraction.ln()).collect();
    let line = linear_fit(&xs, &ys)?;
    let l = used[0].l_ref;
    Some(DecayFit { c2: -line.slope / l, line, points_used: used.len() })
}

/// Closed arcs of half a grid spacing on either side of every violating
/// phase of a uniform grid, with degree `2 × components`.
///
/// With `measure_target`, the grid spacing must not exceed a tenth of it.
pub fn deviation_set_intervals(
    z: Complex64,
    spec: &OperatorSpec,
    n: u64,
    grid: &ThetaGrid,
    kappa: f64,
    l_ref: LReference,
    measure_target: Option<f64>,
) -> Result<IntervalUnionSet> {
    let spacing = grid.spacing().ok_or_else(|| invalid("deviation sets need a uniform theta grid"))?;
    if let Some(t) = measure_target {
        if spacing > t / 10.0 {
            return Err(Error::GridTooCoarse { spacing, limit: t / 10.0 });
        }
    }
    let (_, l) = l_ref.resolve(z, spec, n, grid)?;
    let samples = growth_samples(z, spec, n, grid)?;
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let bad = violations(&samples, mean, kappa * l);
    intervals_from_flags(&grid.points(), &bad, spacing)
}

/// `points` must be the sorted points of a uniform grid. Runs of adjacent
/// flagged points become a single arc so neighbouring cells never leave a
/// rounding gap.
pub(crate) fn intervals_from_flags(points: &[f64], flags: &[bool], spacing: f64) -> Result<IntervalUnionSet> {
    let n = flags.len();
    if !flags.iter().any(|&b| b) {
        return Ok(IntervalUnionSet::empty());
    }
    if flags.iter().all(|&b| b) {
        return IntervalUnionSet::new(&[(0.0, 1.0)], 2);
    }
    // start at a clean point so a run through index 0 is not split
    let clean = flags.iter().position(|&b| !b).expect("some point is clean");
    let mut arcs = Vec::new();
    let mut run: Option<(usize, usize)> = None;
    for step in 1..=n {
        let i = (clean + step) % n;
        if flags[i] {
            run = Some(run.map_or((i, i), |(a, _)| (a, i)));
        } else if let Some((a, b)) = run.take() {
            let lo = (points[a] - spacing / 2.0).rem_euclid(1.0);
            let hi = (points[b] + spacing / 2.0).rem_euclid(1.0);
            arcs.push((lo, hi));
        }
    }
    let probe = IntervalUnionSet::new(&arcs, u32::MAX)?;
    IntervalUnionSet::new(&arcs, (2 * probe.components()).max(1) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{Hopping, PotentialSpec};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn amo3() -> OperatorSpec {
        OperatorSpec::amo(3.0, GOLDEN, 0.0, (0, 0)).unwrap()
    }

    fn free() -> OperatorSpec {
        OperatorSpec::new(PotentialSpec::zero(), GOLDEN, 0.0, (0, 0), Hopping::NearestNeighbor).unwrap()
    }

    #[test]
    fn grids() {
        let u = ThetaGrid::Uniform { n: 4, golden_offset: false }.points();
        assert_eq!(u, vec![0.125, 0.375, 0.625, 0.875]);
        let v = ThetaGrid::LowDiscrepancy { n: 4 }.points();
        assert_eq!(v, vec![0.5, 0.25, 0.75, 0.125]);
        let r1 = ThetaGrid::Random { n: 5, seed: 7 }.points();
        assert_eq!(r1, ThetaGrid::Random { n: 5, seed: 7 }.points());
        assert!(r1.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn free_zero_energy_is_periodic() {
        let g = ThetaGrid::Uniform { n: 8, golden_offset: true };
        let e = lyapunov_estimate(c(0.0, 0.0), &free(), 400, &g).unwrap();
        assert!(e.mean_ln.abs() < 1e-12);
        assert!(e.sup_ln >= e.mean_ln);
    }

    #[test]
    fn free_hyperbolic_rate() {
        let g = ThetaGrid::Uniform { n: 4, golden_offset: false };
        let want = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        let e = lyapunov_estimate(c(3.0, 0.0), &free(), 2000, &g).unwrap();
        assert!((e.mean_ln - want).abs() < 2e-3, "{}", e.mean_ln);
        let d = deviation_measure(c(3.0, 0.0), &free(), 100, &g, 0.01, LReference::Scale(400)).unwrap();
        assert_eq!(d.measured_fraction, 0.0);
        let s = deviation_set_intervals(c(3.0, 0.0), &free(), 100, &g, 0.01, LReference::Scale(400), None).unwrap();
        assert_eq!(s.measure(), 0.0);
    }

    #[test]
    fn amo_lyapunov_is_log_lambda() {
        let g = ThetaGrid::Uniform { n: 16, golden_offset: true };
        let e = lyapunov_estimate(c(0.0, 0.0), &amo3(), 10_000, &g).unwrap();
        assert!((e.mean_ln - 3f64.ln()).abs() < 0.15, "{}", e.mean_ln);
    }

    #[test]
    fn subadditive_means() {
        let g = ThetaGrid::Uniform { n: 200, golden_offset: true };
        for n in [25u64, 50, 100] {
            let s1 = growth_samples(c(0.5, 0.0), &amo3(), n, &g).unwrap();
            let s2 = growth_samples(c(0.5, 0.0), &amo3(), 2 * n, &g).unwrap();
            let m1 = s1.iter().sum::<f64>() / s1.len() as f64;
            let m2 = s2.iter().sum::<f64>() / s2.len() as f64;
            let var = s2.iter().map(|v| (v - m2).powi(2)).sum::<f64>() / s2.len() as f64;
            let sigma = (var / s2.len() as f64).sqrt();
            assert!(m2 <= m1 + 1e-9 + 3.0 * sigma, "N={n}: {m2} > {m1}");
        }
    }

    #[test]
    fn huge_kappa_has_no_violations() {
        let g = ThetaGrid::Random { n: 500, seed: 3 };
        let d = deviation_measure(c(0.0, 0.0), &amo3(), 50, &g, 10.0, LReference::Scale(200)).unwrap();
        assert_eq!(d.measured_fraction, 0.0);
        assert!(deviation_measure(c(0.0, 0.0), &amo3(), 50, &g, 0.01, LReference::Scale(100)).is_err());
    }

    #[test]
    fn single_violation_gives_one_interval() {
        let pts = [0.125, 0.375, 0.625, 0.875];
        let s = intervals_from_flags(&pts, &[false, true, false, false], 0.25).unwrap();
        assert_eq!(s.components(), 1);
        assert!((s.measure() - 0.25).abs() < 1e-15);
        assert_eq!(s.degree(), 2);
        // runs through 0 stay one component
        let s = intervals_from_flags(&pts, &[true, true, false, true], 0.25).unwrap();
        assert_eq!(s.components(), 1);
        assert!((s.measure() - 0.75).abs() < 1e-15);
        let s = intervals_from_flags(&pts, &[true, false, true, false], 0.25).unwrap();
        assert_eq!(s.components(), 2);
        assert_eq!(s.degree(), 4);
        let none = intervals_from_flags(&pts, &[false; 4], 0.25).unwrap();
        assert_eq!(none.measure(), 0.0);
    }

    #[test]
    fn neighbouring_cells_merge_without_gaps() {
        let g = ThetaGrid::Uniform { n: 1000, golden_offset: true };
        let flags: Vec<bool> = (0..1000).map(|i| (250..700).contains(&i)).collect();
        let s = intervals_from_flags(&g.points(), &flags, 1e-3).unwrap();
        assert_eq!(s.components(), 1);
        assert!((s.measure() - 0.45).abs() < 1e-12);
    }

    #[test]
    fn coarse_grid_refused() {
        let g = ThetaGrid::Uniform { n: 10, golden_offset: false };
        let r = deviation_set_intervals(c(0.0, 0.0), &amo3(), 10, &g, 0.01, LReference::Scale(40), Some(0.05));
        assert!(matches!(r, Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn interval_measure_counts_violations() {
        let g = ThetaGrid::Uniform { n: 2000, golden_offset: true };
        let samples = growth_samples(c(0.0, 0.0), &amo3(), 50, &g).unwrap();
        let l = lyapunov_estimate(c(0.0, 0.0), &amo3(), 200, &g).unwrap().mean_ln;
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let count = samples.iter().filter(|v| (*v - mean).abs() > 0.01 * l).count();
        let s = deviation_set_intervals(
            c(0.0, 0.0),
            &amo3(),
            50,
            &g,
            0.01,
            LReference::Known { n_ref: 200, value: l },
            None,
        )
        .unwrap();
        assert!((s.measure() - count as f64 / 2000.0).abs() < 1e-12);
    }
}
