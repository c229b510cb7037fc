//! Bare Dyson-series Monte Carlo for ⟨O(τ)⟩, stratified by order, and the
//! per-sample variance diagnostic that exposes the dynamical sign problem.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::bath::ContourCorrelation;
use crate::combinatorics::{double_factorial, enumerate_pairings, Pairing};
use crate::error::{Error, Result};
use crate::streams;
use crate::system::{bare_propagator_unchecked, expectation, SystemOperator, SystemSpec};

/// Highest even order accepted by the bare estimator.
pub const MAX_BARE_ORDER: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MCEstimate {
    pub mean: Complex64,
    pub std_error: f64,
    pub samples: usize,
}

/// One term of the series: its contribution, standard error and sample variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderTerm {
    pub order: usize,
    pub mean: Complex64,
    pub std_error: f64,
    /// Sample variance of a single draw (|x − mean|²).
    pub variance: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BareEstimate {
    pub tau: f64,
    pub terms: Vec<OrderTerm>,
}

impl BareEstimate {
    pub fn total(&self) -> MCEstimate {
        let mean = self.terms.iter().map(|t| t.mean).sum();
        let var: f64 = self.terms.iter().map(|t| t.std_error * t.std_error).sum();
        let samples = self.terms.iter().map(|t| t.samples).sum::<usize>().max(1);
        MCEstimate { mean, std_error: var.sqrt(), samples }
    }
}

fn check_order(order: usize) -> Result<()> {
    if order % 2 == 1 {
        return Err(Error::InvalidArgument(format!("bare truncation order must be even, got {order}")));
    }
    if order > MAX_BARE_ORDER {
        return Err(Error::UnsupportedOrder { order, cap: MAX_BARE_ORDER });
    }
    Ok(())
}

#[derive(Clone, Copy, Default)]
struct Moments {
    sum: Complex64,
    sum_sq: f64,
    count: usize,
}

impl Moments {
    fn merge(mut self, other: Moments) -> Moments {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.count += other.count;
        self
    }
}

/// Integrand of the order-`m` term at sorted times `s` on [0, 2τ], without
/// the simplex volume and pairing multiplicity.
fn integrand(
    system: &SystemSpec,
    h: &SystemOperator,
    corr: &ContourCorrelation,
    tau: f64,
    s: &[f64],
    q: &Pairing,
) -> Complex64 {
    let w = SystemOperator::SIGMA_Z;
    let m = s.len();
    let end = 2.0 * tau;
    let mut u = bare_propagator_unchecked(h, &system.observable, end, s.get(m.wrapping_sub(1)).copied().unwrap_or(0.0), tau);
    for i in (0..m).rev() {
        let lower = if i == 0 { 0.0 } else { s[i - 1] };
        u = u * w * bare_propagator_unchecked(h, &system.observable, s[i], lower, tau);
    }
    let mut bath = Complex64::new(1.0, 0.0);
    for &(a, b) in q.pairs() {
        bath *= corr.eval(s[a], s[b]);
    }
    let below = s.iter().filter(|&&x| x < tau).count();
    let sign = if below % 2 == 0 { 1.0 } else { -1.0 };
    let phase = match m % 4 {
        0 => 1.0,
        _ => -1.0,
    };
    expectation(&system.rho_s, &u) * bath * (sign * phase)
}

/// Exact m = 0 term tr(ρ_s G_s⁽⁰⁾(2τ, 0)).
pub fn decoupled_observable(system: &SystemSpec, tau: f64) -> Complex64 {
    let h = system.hamiltonian();
    expectation(&system.rho_s, &bare_propagator_unchecked(&h, &system.observable, 2.0 * tau, 0.0, tau))
}

fn order_moments(
    system: &SystemSpec,
    corr: &ContourCorrelation,
    tau: f64,
    m: usize,
    samples: usize,
    seed: u64,
    domain: u64,
    label: u64,
) -> Result<OrderTerm> {
    let family = enumerate_pairings(m)?;
    let h = system.hamiltonian();
    let end = 2.0 * tau;
    let factorial: f64 = (1..=m).map(|x| x as f64).product();
    let scale = double_factorial(m as i64 - 1) as f64 * end.powi(m as i32) / factorial;
    let run = |(chunk, n): (u64, usize)| {
        let mut rng = streams::stream(seed, domain, label, ((m as u64) << 48) | chunk);
        let mut s = vec![0.0; m];
        let mut acc = Moments::default();
        for _ in 0..n {
            for x in s.iter_mut() {
                *x = end * rng.random::<f64>();
            }
            s.sort_unstable_by(f64::total_cmp);
            let q = &family.members[rng.random_range(0..family.members.len())];
            let v = integrand(system, &h, corr, tau, &s, q) * scale;
            acc.sum += v;
            acc.sum_sq += v.norm_sqr();
            acc.count += 1;
        }
        acc
    };
    let parts: Vec<Moments> = streams::chunks(samples).collect::<Vec<_>>().into_par_iter().map(run).collect();
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    let n = total.count.max(1) as f64;
    let mean = total.sum / n;
    let variance = ((total.sum_sq / n - mean.norm_sqr()) * n / (n - 1.0).max(1.0)).max(0.0);
    Ok(OrderTerm { order: m, mean, std_error: (variance / n).sqrt(), variance, samples: total.count })
}

/// Truncated bare series Σ_{m even ≤ M} for measurement time τ; the
/// correlation's own measurement time is replaced by τ.
pub fn bare_observable(
    system: &SystemSpec,
    correlation: &ContourCorrelation,
    tau: f64,
    order: usize,
    samples_per_order: usize,
    seed: u64,
) -> Result<BareEstimate> {
    check_order(order)?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("τ must be positive, got {tau}")));
    }
    if samples_per_order == 0 && order > 0 {
        return Err(Error::InvalidArgument("samples_per_order must be positive".into()));
    }
    system.validate()?;
    let corr = correlation.at_measurement_time(tau);
    let mut terms = vec![OrderTerm {
        order: 0,
        mean: decoupled_observable(system, tau),
        std_error: 0.0,
        variance: 0.0,
        samples: 1,
    }];
    for m in (2..=order).step_by(2) {
        let label = tau.to_bits();
        terms.push(order_moments(system, &corr, tau, m, samples_per_order, seed, streams::DYSON, label)?);
    }
    Ok(BareEstimate { tau, terms })
}

/// One row of the variance diagnostic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariancePoint {
    pub length: f64,
    /// Per-sample variance of the bare estimator, summed over orders.
    pub variance: f64,
    /// Standard error of `variance`.
    pub variance_error: f64,
    /// exp(C_b² len²/2) − 1.
    pub envelope: f64,
}

pub fn variance_envelope(c_b: f64, length: f64) -> f64 {
    (0.5 * c_b * c_b * length * length).exp_m1()
}

/// Per-sample variance of the bare estimator at contour lengths `lengths`
/// (measurement time len/2), alongside the analytic growth envelope.
pub fn variance_profile(
    system: &SystemSpec,
    correlation: &ContourCorrelation,
    lengths: &[f64],
    order: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<VariancePoint>> {
    check_order(order)?;
    if samples < 2 {
        return Err(Error::InvalidArgument("variance estimation needs at least two samples".into()));
    }
    let c_b = correlation.c_b();
    lengths
        .iter()
        .enumerate()
        .map(|(i, &length)| {
            if !(length.is_finite() && length >= 0.0) {
                return Err(Error::InvalidArgument(format!("contour length must be nonnegative, got {length}")));
            }
            let envelope = variance_envelope(c_b, length);
            if length == 0.0 {
                return Ok(VariancePoint { length, variance: 0.0, variance_error: 0.0, envelope });
            }
            let tau = 0.5 * length;
            let corr = correlation.at_measurement_time(tau);
            let mut variance = 0.0;
            let mut error_sq = 0.0;
            for m in (2..=order).step_by(2) {
                let (v, e) = variance_with_error(system, &corr, tau, m, samples, seed, i as u64)?;
                variance += v;
                error_sq += e * e;
            }
            Ok(VariancePoint { length, variance, variance_error: error_sq.sqrt(), envelope })
        })
        .collect()
}

/// Sample variance of the order-m draws and its standard error from the
/// fourth central moment.
fn variance_with_error(
    system: &SystemSpec,
    corr: &ContourCorrelation,
    tau: f64,
    m: usize,
    samples: usize,
    seed: u64,
    label: u64,
) -> Result<(f64, f64)> {
    let family = enumerate_pairings(m)?;
    let h = system.hamiltonian();
    let end = 2.0 * tau;
    let factorial: f64 = (1..=m).map(|x| x as f64).product();
    let scale = double_factorial(m as i64 - 1) as f64 * end.powi(m as i32) / factorial;
    let draws: Vec<Complex64> = streams::chunks(samples)
        .collect::<Vec<_>>()
        .into_par_iter()
        .flat_map_iter(|(chunk, n)| {
            let mut rng = streams::stream(seed, streams::VARIANCE, label, ((m as u64) << 48) | chunk);
            let mut s = vec![0.0; m];
            let family = &family;
            let h = &h;
            (0..n)
                .map(|_| {
                    for x in s.iter_mut() {
                        *x = end * rng.random::<f64>();
                    }
                    s.sort_unstable_by(f64::total_cmp);
                    let q = &family.members[rng.random_range(0..family.members.len())];
                    integrand(system, h, corr, tau, &s, q) * scale
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let n = draws.len() as f64;
    let mean: Complex64 = draws.iter().sum::<Complex64>() / n;
    let d2: Vec<f64> = draws.iter().map(|x| (x - mean).norm_sqr()).collect();
    let m2 = d2.iter().sum::<f64>() / n;
    let m4 = d2.iter().map(|v| v * v).sum::<f64>() / n;
    let variance = m2 * n / (n - 1.0);
    let error = ((m4 - m2 * m2).max(0.0) / n).sqrt();
    Ok((variance, error))
}

/// (tau, Re mean, Im mean, std_error, samples, M) rows.
pub fn write_bare_csv<W: Write>(out: W, header: &[String], rows: &[BareEstimate], order: usize) -> Result<()> {
    let mut out = out;
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "re", "im", "std_error", "samples", "M"])?;
    for row in rows {
        let total = row.total();
        w.write_record(&[
            format!("{}", row.tau),
            format!("{:.12e}", total.mean.re),
            format!("{:.12e}", total.mean.im),
            format!("{:.6e}", total.std_error),
            total.samples.to_string(),
            order.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
