//! Discretized Ohmic bath and its two-point correlation function.
//!
//! The bath enters the dynamics only through
//! `f(s) = Σ_l c_l²/(2ω_l) [coth(βω_l/2) cos(ω_l s) − i sin(ω_l s)]`,
//! which is tabulated once on a fine uniform grid and read back by linear
//! interpolation.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default spacing of the tabulated correlation function.
pub const DEFAULT_TABLE_STEP: f64 = 5e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpec {
    /// Number of oscillator modes L.
    pub modes: usize,
    pub beta: f64,
    pub omega_c: f64,
    pub omega_max: f64,
    /// Kondo parameter.
    pub xi: f64,
}

impl Default for BathSpec {
    fn default() -> Self {
        Self {
            modes: 200,
            beta: 5.0,
            omega_c: 2.5,
            omega_max: 10.0,
            xi: 0.2,
        }
    }
}

impl BathSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("bath.{name} must be positive, got {v}")))
            }
        };
        if self.modes == 0 {
            return Err(Error::InvalidArgument("bath.modes must be at least 1".into()));
        }
        positive("beta", self.beta)?;
        positive("omega_c", self.omega_c)?;
        positive("omega_max", self.omega_max)?;
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(Error::InvalidArgument(format!("bath.xi must be nonnegative, got {}", self.xi)));
        }
        if self.omega_max < self.omega_c {
            return Err(Error::InvalidArgument("bath.omega_max must be ≥ bath.omega_c".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BathModes {
    pub omegas: Vec<f64>,
    pub couplings: Vec<f64>,
}

impl BathModes {
    /// c_l²/(2ω_l), the weight of each mode in the correlation function.
    fn weights(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.omegas
            .iter()
            .zip(&self.couplings)
            .map(|(&w, &c)| (w, c * c / (2.0 * w)))
    }
}

/// Ohmic discretization with J(ω) = (π/2) ξ ω e^{−ω/ω_c} on (0, ω_max]:
/// ω_l = −ω_c ln(1 − (l/L)(1 − e^{−ω_max/ω_c})),
/// c_l = ω_l √(ξ ω_c (1 − e^{−ω_max/ω_c}) / L).
pub fn build_modes(spec: &BathSpec) -> Result<BathModes> {
    spec.validate()?;
    let l_total = spec.modes as f64;
    // 1 − e^{−ω_max/ω_c}
    let span = -(-spec.omega_max / spec.omega_c).exp_m1();
    let scale = (spec.xi * spec.omega_c * span / l_total).sqrt();
    let omegas: Vec<f64> = (1..=spec.modes)
        .map(|l| -spec.omega_c * (-(l as f64 / l_total) * span).ln_1p())
        .collect();
    let couplings = omegas.iter().map(|w| w * scale).collect();
    Ok(BathModes { omegas, couplings })
}

/// coth(x) for x > 0, saturating to 1 without overflow.
fn coth(x: f64) -> f64 {
    1.0 + 2.0 / (2.0 * x).exp_m1()
}

pub fn correlation_f(modes: &BathModes, beta: f64, s: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (w, weight) in modes.weights() {
        let (sin, cos) = (w * s).sin_cos();
        acc += Complex64::new(weight * coth(0.5 * beta * w) * cos, -weight * sin);
    }
    acc
}

/// C_b = Σ c_l²/(2ω_l) coth(βω_l/2), the uniform bound on |f|.
pub fn bound_cb(modes: &BathModes, beta: f64) -> f64 {
    modes.weights().map(|(w, weight)| weight * coth(0.5 * beta * w)).sum()
}

/// Σ c_l² ω_l coth(βω_l/2) / 2, a bound on |f''|.
pub fn second_derivative_bound(modes: &BathModes, beta: f64) -> f64 {
    modes
        .weights()
        .map(|(w, weight)| weight * w * w * coth(0.5 * beta * w))
        .sum()
}

#[derive(Clone, Debug)]
pub struct CorrelationTable {
    step: f64,
    /// Number of nodes on each side of zero.
    half: usize,
    values: Vec<Complex64>,
    c_b: f64,
}

impl CorrelationTable {
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Largest |s| covered by the nodes.
    pub fn range(&self) -> f64 {
        self.half as f64 * self.step
    }

    pub fn c_b(&self) -> f64 {
        self.c_b
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    /// (s, f(s)) for every node, ascending in s.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, Complex64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i as f64 - self.half as f64) * self.step, v))
    }

    /// Piecewise-linear lookup; arguments beyond the range clamp to the end nodes.
    #[inline]
    pub fn lookup(&self, s: f64) -> Complex64 {
        let x = s / self.step + self.half as f64;
        let last = self.values.len() - 1;
        if x <= 0.0 {
            return self.values[0];
        }
        if x >= last as f64 {
            return self.values[last];
        }
        let i = x as usize;
        let frac = x - i as f64;
        if frac == 0.0 {
            return self.values[i];
        }
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// A table holding the same real value everywhere.
    #[cfg(test)]
    pub(crate) fn constant(value: f64, t_max: f64, step: f64) -> Self {
        let half = (t_max / step).ceil() as usize;
        Self { step, half, values: vec![Complex64::new(value, 0.0); 2 * half + 1], c_b: value }
    }

    pub fn write_csv<W: Write>(&self, out: W, header: &[String]) -> Result<()> {
        let mut out = out;
        for line in header {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "re", "im"])?;
        for (s, v) in self.nodes() {
            w.write_record(&[format!("{s:.10}"), format!("{:.17e}", v.re), format!("{:.17e}", v.im)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples f on a symmetric grid covering `[−t_max, t_max]`.
pub fn tabulate(modes: &BathModes, beta: f64, t_max: f64, step: f64) -> Result<CorrelationTable> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidArgument(format!("table step must be positive, got {step}")));
    }
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(Error::InvalidArgument(format!("table range must be nonnegative, got {t_max}")));
    }
    let half = (t_max / step - 1e-9).ceil().max(1.0) as usize;
    let c_b = bound_cb(modes, beta);
    let positive: Vec<Complex64> = (1..=half)
        .map(|i| correlation_f(modes, beta, i as f64 * step))
        .collect();
    let mut values = Vec::with_capacity(2 * half + 1);
    values.extend(positive.iter().rev().map(|v| v.conj()));
    values.push(Complex64::new(c_b, 0.0));
    values.extend(positive);
    Ok(CorrelationTable { step, half, values, c_b })
}

/// The two-point bath function on the unfolded contour of length 2t.
#[derive(Clone, Debug)]
pub struct ContourCorrelation {
    table: Arc<CorrelationTable>,
    t: f64,
    literal_difference: bool,
}

impl ContourCorrelation {
    /// Folded convention: f evaluated at the difference of physical times.
    pub fn new(table: CorrelationTable, t: f64) -> Self {
        Self::shared(Arc::new(table), t)
    }

    pub fn shared(table: Arc<CorrelationTable>, t: f64) -> Self {
        Self { table, t, literal_difference: false }
    }

    /// Selects f(τ2 − τ1) on raw contour times instead of the folded form.
    pub fn with_literal_difference(mut self, literal: bool) -> Self {
        self.literal_difference = literal;
        self
    }

    pub fn table(&self) -> &CorrelationTable {
        &self.table
    }

    pub fn measurement_time(&self) -> f64 {
        self.t
    }

    pub fn c_b(&self) -> f64 {
        self.table.c_b
    }

    /// Same correlation for another measurement time, sharing the table.
    pub fn at_measurement_time(&self, t: f64) -> Self {
        Self { table: Arc::clone(&self.table), t, literal_difference: self.literal_difference }
    }

    pub fn is_literal_difference(&self) -> bool {
        self.literal_difference
    }

    #[inline]
    fn physical(&self, tau: f64) -> f64 {
        if tau < self.t {
            tau
        } else {
            2.0 * self.t - tau
        }
    }

    /// Unchecked evaluation for `tau1 ≤ tau2` inside `[0, 2t]`.
    #[inline]
    pub fn eval(&self, tau1: f64, tau2: f64) -> Complex64 {
        if self.literal_difference {
            self.table.lookup(tau2 - tau1)
        } else {
            self.table.lookup(self.physical(tau2) - self.physical(tau1))
        }
    }

    pub fn contour_b(&self, tau1: f64, tau2: f64) -> Result<Complex64> {
        let end = 2.0 * self.t;
        if !(0.0..=end).contains(&tau1) || !(0.0..=end).contains(&tau2) {
            return Err(Error::Domain(format!("B({tau1}, {tau2}) outside [0, {end}]")));
        }
        if tau1 > tau2 {
            return Err(Error::Domain(format!("B arguments unordered: {tau1} > {tau2}")));
        }
        Ok(self.eval(tau1, tau2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn baseline() -> (BathSpec, BathModes) {
        let spec = BathSpec::default();
        let modes = build_modes(&spec).unwrap();
        (spec, modes)
    }

    #[test]
    fn top_mode_hits_cutoff() {
        let (spec, modes) = baseline();
        assert_eq!(modes.omegas.len(), 200);
        let top = *modes.omegas.last().unwrap();
        assert!((top - spec.omega_max).abs() <= 1e-12 * spec.omega_max, "{top}");
    }

    #[test]
    fn baseline_modes_satisfy_invariants() {
        let (_, modes) = baseline();
        assert!(modes.omegas.windows(2).all(|w| w[1] > w[0]));
        assert!(modes.omegas[0] > 0.0);
        assert!(modes.couplings.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn mode_density_reproduces_ohmic_reorganization() {
        // Σ c_l²/ω_l → ξ ∫_0^{ω_max} ω e^{−ω/ω_c} dω = ξ ω_c² (1 − 5e^{−4}) for ω_max = 4ω_c.
        let spec = BathSpec { modes: 20_000, ..BathSpec::default() };
        let modes = build_modes(&spec).unwrap();
        let sum: f64 = modes.omegas.iter().zip(&modes.couplings).map(|(w, c)| c * c / w).sum();
        let expected = spec.xi * spec.omega_c * spec.omega_c * (1.0 - 5.0 * (-4.0f64).exp());
        assert!((sum - expected).abs() / expected < 2e-3, "{sum} vs {expected}");
    }

    #[test]
    fn zero_coupling_gives_zero_bath() {
        let spec = BathSpec { xi: 0.0, ..BathSpec::default() };
        let modes = build_modes(&spec).unwrap();
        assert!(modes.couplings.iter().all(|&c| c == 0.0));
        assert_eq!(bound_cb(&modes, spec.beta), 0.0);
        assert_eq!(correlation_f(&modes, spec.beta, 0.7), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn correlation_basic_identities() {
        let (spec, modes) = baseline();
        let cb = bound_cb(&modes, spec.beta);
        assert!(cb > 0.0 && cb.is_finite());
        let f0 = correlation_f(&modes, spec.beta, 0.0);
        assert_eq!(f0.im, 0.0);
        assert_eq!(f0.re, cb);
        let s = 0.37;
        let (fp, fm) = (correlation_f(&modes, spec.beta, s), correlation_f(&modes, spec.beta, -s));
        assert!((fp - fm.conj()).norm() < 1e-14);
        assert!(correlation_f(&modes, spec.beta, 1.0).norm() <= cb);
    }

    #[test]
    fn bound_holds_on_random_arguments() {
        let (spec, modes) = baseline();
        let cb = bound_cb(&modes, spec.beta);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = rng.random_range(-10.0..10.0);
            let f = correlation_f(&modes, spec.beta, s);
            assert!(f.norm() <= cb * (1.0 + 1e-14));
            assert!((f - correlation_f(&modes, spec.beta, -s).conj()).norm() < 1e-13);
        }
    }

    #[test]
    fn coth_saturates() {
        assert_eq!(coth(1000.0), 1.0);
        assert!((coth(0.5) - 1.0 / 0.5f64.tanh()).abs() < 1e-14);
    }

    #[test]
    fn validation() {
        assert!(BathSpec { modes: 0, ..BathSpec::default() }.validate().is_err());
        assert!(BathSpec { beta: -1.0, ..BathSpec::default() }.validate().is_err());
        assert!(BathSpec { omega_max: 1.0, ..BathSpec::default() }.validate().is_err());
        assert!(BathSpec { xi: -0.1, ..BathSpec::default() }.validate().is_err());
    }

    #[test]
    fn table_node_properties() {
        let (spec, modes) = baseline();
        let table = tabulate(&modes, spec.beta, 2.0, 1e-2).unwrap();
        let cb = table.c_b();
        let nodes: Vec<_> = table.nodes().collect();
        let mid = nodes.len() / 2;
        assert_eq!(nodes[mid].0, 0.0);
        assert_eq!(nodes[mid].1, Complex64::new(cb, 0.0));
        for i in 0..nodes.len() {
            let (s, v) = nodes[i];
            let (s_mirror, v_mirror) = nodes[nodes.len() - 1 - i];
            assert_eq!(s, -s_mirror);
            assert_eq!(v, v_mirror.conj());
            assert!(v.norm() <= cb * (1.0 + 1e-14));
            let direct = correlation_f(&modes, spec.beta, s);
            assert!((table.lookup(s) - direct).norm() <= 1e-12 * cb, "node {s}");
        }
        assert!(table.range() >= 2.0);
    }

    fn max_lookup_error(modes: &BathModes, beta: f64, step: f64, samples: usize) -> f64 {
        let table = tabulate(modes, beta, 2.0, step).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..samples)
            .map(|_| {
                let s = rng.random_range(-2.0..2.0);
                (table.lookup(s) - correlation_f(modes, beta, s)).norm()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn interpolation_error_is_second_order() {
        let (spec, modes) = baseline();
        let c_interp = second_derivative_bound(&modes, spec.beta) / 8.0;
        let step = 1e-2;
        let e1 = max_lookup_error(&modes, spec.beta, step, 1000);
        assert!(e1 <= c_interp * step * step, "{e1} > {}", c_interp * step * step);
        let e2 = max_lookup_error(&modes, spec.beta, step / 2.0, 1000);
        assert!(e1 / e2 >= 3.5, "refinement ratio {}", e1 / e2);
    }

    #[test]
    fn default_step_meets_accuracy_target() {
        let (spec, modes) = baseline();
        let cb = bound_cb(&modes, spec.beta);
        let err = max_lookup_error(&modes, spec.beta, DEFAULT_TABLE_STEP, 1000);
        assert!(err <= 1e-6 * cb, "{err} vs C_b = {cb}");
    }

    #[test]
    fn contour_b_conventions() {
        let (spec, modes) = baseline();
        let t = 1.5;
        let table = tabulate(&modes, spec.beta, 2.0 * t, 1e-3).unwrap();
        let cb = table.c_b();
        let bath = ContourCorrelation::new(table.clone(), t);
        // Forward branch reduces to f(τ2 − τ1).
        let v = bath.contour_b(0.2, 0.9).unwrap();
        assert!((v - table.lookup(0.7)).norm() < 1e-15);
        assert_eq!(bath.contour_b(0.8, 0.8).unwrap(), Complex64::new(cb, 0.0));
        // Mirror points share a physical time.
        let v = bath.contour_b(0.4, 2.0 * t - 0.4).unwrap();
        assert!((v - Complex64::new(cb, 0.0)).norm() < 1e-15);
        // Backward pair: later contour time is the earlier physical time.
        let v = bath.contour_b(2.0, 2.5).unwrap();
        assert!((v - table.lookup(-0.5)).norm() < 1e-15);

        let literal = ContourCorrelation::new(table.clone(), t).with_literal_difference(true);
        assert!((literal.contour_b(2.0, 2.5).unwrap() - table.lookup(0.5)).norm() < 1e-15);

        assert!(bath.contour_b(-0.1, 0.5).is_err());
        assert!(bath.contour_b(0.5, 3.1).is_err());
        assert!(bath.contour_b(0.6, 0.5).is_err());
    }

    #[test]
    fn contour_b_random_properties() {
        let (spec, modes) = baseline();
        let t = 2.0;
        let table = tabulate(&modes, spec.beta, 2.0 * t, 1e-3).unwrap();
        let cb = table.c_b();
        let bath = ContourCorrelation::new(table, t);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let a: f64 = rng.random_range(0.0..2.0 * t);
            let b: f64 = rng.random_range(0.0..2.0 * t);
            let (lo, hi) = (a.min(b), a.max(b));
            assert!(bath.contour_b(lo, hi).unwrap().norm() <= cb * (1.0 + 1e-12));
            // Translation invariance on the forward branch.
            let x: f64 = rng.random_range(0.0..t);
            let y: f64 = rng.random_range(0.0..t);
            let (x, y) = (x.min(y), x.max(y));
            let shift = rng.random_range(-x..(t - y));
            let d = (bath.contour_b(x, y).unwrap() - bath.contour_b(x + shift, y + shift).unwrap()).norm();
            assert!(d < 1e-9 * cb, "{d}");
        }
    }

    #[test]
    fn csv_dump_has_header_and_columns() {
        let (spec, modes) = baseline();
        let table = tabulate(&modes, spec.beta, 0.01, 1e-3).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf, &["C_b = 1".to_string()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# C_b = 1"));
        assert_eq!(lines.next(), Some("s,re,im"));
        assert_eq!(lines.count(), table.node_count());
    }
}
