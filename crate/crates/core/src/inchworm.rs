//! Inchworm integro-differential solver.
//!
//! Each off-diagonal entry G(t_j, t_k) is advanced from its row predecessor by
//! a two-stage Heun step whose right-hand side contains the connected-diagram
//! sum, evaluated on piecewise-linear interpolants of already computed
//! entries. The sweep follows rows in contour order and, within a row,
//! columns from the diagonal down to 0.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::ContourCorrelation;
use crate::combinatorics::{ConnectedCatalog, DEFAULT_ORDER_CAP};
use crate::contour::{interpolate, ContourPoint, Grid, GridIndex, Overlay, PropagatorTable};
use crate::error::{Error, Result};
use crate::streams;
use crate::system::{evolve, SystemOperator, SystemSpec};

pub const DEFAULT_SAMPLES_PER_ORDER: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SumMode {
    /// Composite midpoint rule, M = 1 only.
    DeterministicQuadrature,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    Heun,
    /// Heun with the ∓iH_s part propagated exactly.
    ExponentialHeun,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveSpec {
    /// Odd truncation order M.
    pub order: usize,
    pub mode: SumMode,
    pub samples_per_order: usize,
    pub integrator: Integrator,
    /// Steps per branch N.
    pub steps: usize,
    pub dt: f64,
    pub connected_cap: usize,
}

impl SolveSpec {
    /// Grid with `steps` steps per branch up to measurement time `t`.
    pub fn new(order: usize, mode: SumMode, steps: usize, t: f64) -> Self {
        Self {
            order,
            mode,
            samples_per_order: DEFAULT_SAMPLES_PER_ORDER,
            integrator: Integrator::Heun,
            steps,
            dt: t / steps as f64,
            connected_cap: DEFAULT_ORDER_CAP,
        }
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_samples(mut self, samples_per_order: usize) -> Self {
        self.samples_per_order = samples_per_order;
        self
    }

    pub fn measurement_time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.order % 2 == 0 {
            return Err(Error::InvalidArgument(format!("truncation order must be odd, got {}", self.order)));
        }
        if self.mode == SumMode::DeterministicQuadrature && self.order != 1 {
            return Err(Error::UnsupportedOrder { order: self.order, cap: 1 });
        }
        if self.order > self.connected_cap {
            return Err(Error::UnsupportedOrder { order: self.order, cap: self.connected_cap });
        }
        if self.mode == SumMode::MonteCarlo && self.samples_per_order == 0 {
            return Err(Error::InvalidArgument("samples_per_order must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("need at least one step per branch".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SumEstimate {
    pub value: SystemOperator,
    /// Frobenius-norm standard error; zero for quadrature.
    pub std_error: f64,
}

impl SumEstimate {
    pub const ZERO: Self = Self { value: SystemOperator::ZERO, std_error: 0.0 };
}

/// Shared read-only inputs of the connected sum.
pub struct SumContext<'a> {
    pub coupling: SystemOperator,
    pub correlation: &'a ContourCorrelation,
    pub spec: &'a SolveSpec,
    pub catalog: &'a ConnectedCatalog,
}

/// Address of the random stream for one (entry, stage).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub row: usize,
    pub col: usize,
    pub stage: u8,
}

impl StreamKey {
    fn rng(&self, order: usize, chunk: u64) -> rand_chacha::ChaCha8Rng {
        let a = ((self.row as u64) << 32) | self.col as u64;
        let b = ((self.stage as u64) << 56) | ((order as u64) << 48) | chunk;
        streams::stream(self.seed, streams::INCHWORM, a, b)
    }
}

#[inline]
fn i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Σ_{m odd ≤ M} i^{m+1} ∫_{t_f > s_m > … > s_1 > t_k} Σ_{q ∈ Q_c}
/// (−1)^{#{s<t}} L(q) W G_I(t_f, s_m) W … W G_I(s_1, t_k).
pub fn connected_sum<G: Grid + Sync + ?Sized>(
    grid: &G,
    head: GridIndex,
    base: GridIndex,
    ctx: &SumContext<'_>,
    key: StreamKey,
) -> Result<SumEstimate> {
    let dt = grid.dt();
    let (t_f, t_k) = (head.k as f64 * dt, base.k as f64 * dt);
    if t_f - t_k <= f64::EPSILON * t_f.max(1.0) {
        return Ok(SumEstimate::ZERO);
    }
    match ctx.spec.mode {
        SumMode::DeterministicQuadrature => {
            if ctx.spec.order != 1 {
                return Err(Error::UnsupportedOrder { order: ctx.spec.order, cap: 1 });
            }
            midpoint_first_order(grid, head, base, ctx).map(|value| SumEstimate { value, std_error: 0.0 })
        }
        SumMode::MonteCarlo => {
            let mut value = SystemOperator::ZERO;
            let mut variance = 0.0;
            for m in (1..=ctx.spec.order).step_by(2) {
                let est = monte_carlo_order(grid, head, base, ctx, key, m)?;
                value += est.value;
                variance += est.std_error * est.std_error;
            }
            Ok(SumEstimate { value, std_error: variance.sqrt() })
        }
    }
}

fn midpoint_first_order<G: Grid + ?Sized>(
    grid: &G,
    head: GridIndex,
    base: GridIndex,
    ctx: &SumContext<'_>,
) -> Result<SystemOperator> {
    let dt = grid.dt();
    let t = grid.steps_per_branch() as f64 * dt;
    let t_f = head.k as f64 * dt;
    let w = ctx.coupling;
    let mut acc = SystemOperator::ZERO;
    for cell in base.k..head.k {
        let s = (cell as f64 + 0.5) * dt;
        let p = ContourPoint::Interior(s);
        let left = interpolate(grid, ContourPoint::Node(head), p)?;
        let right = interpolate(grid, p, ContourPoint::Node(base))?;
        let b = ctx.correlation.eval(s, t_f);
        let sign = if s < t { -1.0 } else { 1.0 };
        acc += (w * left * w * right) * (b * sign);
    }
    // i^{1+1} = −1
    Ok(acc * (-dt))
}

#[derive(Clone, Copy)]
struct Moments {
    sum: SystemOperator,
    sum_sq: f64,
    count: usize,
}

fn monte_carlo_order<G: Grid + Sync + ?Sized>(
    grid: &G,
    head: GridIndex,
    base: GridIndex,
    ctx: &SumContext<'_>,
    key: StreamKey,
    m: usize,
) -> Result<SumEstimate> {
    use rand::Rng;

    let family = ctx.catalog.family(m)?;
    let dt = grid.dt();
    let t = grid.steps_per_branch() as f64 * dt;
    let (t_f, t_k) = (head.k as f64 * dt, base.k as f64 * dt);
    let width = t_f - t_k;
    let factorial: f64 = (1..=m).map(|x| x as f64).product();
    let weight = i_pow(m + 1) * (width.powi(m as i32) / factorial * family.len() as f64);
    let w = ctx.coupling;

    let chunk_moments = |(chunk, n): (u64, usize)| -> Result<Moments> {
        let mut rng = key.rng(m, chunk);
        let mut times = vec![0.0; m + 1];
        let mut sum = SystemOperator::ZERO;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            for s in times.iter_mut().take(m) {
                *s = t_k + width * rng.random::<f64>();
            }
            times[..m].sort_unstable_by(f64::total_cmp);
            times[m] = t_f;
            let q = &family[rng.random_range(0..family.len())];

            let mut bath = Complex64::new(1.0, 0.0);
            for &(a, b) in q.pairs() {
                bath *= ctx.correlation.eval(times[a], times[b]);
            }
            let below = times[..m].iter().filter(|&&s| s < t).count();
            if below % 2 == 1 {
                bath = -bath;
            }

            let mut chain = w * interpolate(grid, ContourPoint::Node(head), ContourPoint::Interior(times[m - 1]))?;
            for i in (1..m).rev() {
                let g = interpolate(grid, ContourPoint::Interior(times[i]), ContourPoint::Interior(times[i - 1]))?;
                chain = chain * w * g;
            }
            let last = interpolate(grid, ContourPoint::Interior(times[0]), ContourPoint::Node(base))?;
            let value = (chain * w * last) * (bath * weight);
            sum_sq += value.0.iter().map(|z| z.norm_sqr()).sum::<f64>();
            sum += value;
        }
        Ok(Moments { sum, sum_sq, count: n })
    };

    let pieces: Vec<(u64, usize)> = streams::chunks(ctx.spec.samples_per_order).collect();
    let parts: Vec<Moments> = if pieces.len() > 1 {
        pieces.into_par_iter().map(chunk_moments).collect::<Result<_>>()?
    } else {
        pieces.into_iter().map(chunk_moments).collect::<Result<_>>()?
    };
    let mut total = Moments { sum: SystemOperator::ZERO, sum_sq: 0.0, count: 0 };
    for p in parts {
        total.sum += p.sum;
        total.sum_sq += p.sum_sq;
        total.count += p.count;
    }
    let n = total.count as f64;
    let mean = total.sum.scale_re(1.0 / n);
    let mean_sq: f64 = mean.0.iter().map(|z| z.norm_sqr()).sum();
    let var = (total.sum_sq / n - mean_sq).max(0.0) * n / (n - 1.0).max(1.0);
    Ok(SumEstimate { value: mean, std_error: (var / n).sqrt() })
}

/// Options that change what `solve` computes, for testing.
#[derive(Clone, Copy, Debug, Default)]
pub struct SolveOptions {
    /// Replace the connected sum by zero.
    pub without_diagrams: bool,
    /// Keep the order in which entries were written.
    pub record_fill_order: bool,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub table: PropagatorTable,
    /// Per-entry standard error estimate, keyed by (row slot, col slot).
    std_errors: Vec<f64>,
}

impl Solution {
    pub fn std_error(&self, row: usize, col: usize) -> f64 {
        self.std_errors[row * (row + 1) / 2 + col]
    }

    pub fn max_std_error(&self) -> f64 {
        self.std_errors.iter().copied().fold(0.0, f64::max)
    }
}

struct Stepper<'a> {
    h: SystemOperator,
    ctx: SumContext<'a>,
    seed: u64,
    options: SolveOptions,
    /// e^{∓i dt H_s} for rows below / above t.
    propagators: [SystemOperator; 2],
}

impl Stepper<'_> {
    fn rhs_sum<G: Grid + Sync + ?Sized>(
        &self,
        grid: &G,
        head: GridIndex,
        base: GridIndex,
        key: StreamKey,
    ) -> Result<SumEstimate> {
        if self.options.without_diagrams {
            return Ok(SumEstimate::ZERO);
        }
        connected_sum(grid, head, base, &self.ctx, key)
    }

    /// Both Heun stages for the entry (row slot `js`, col slot `ks`).
    fn step(&self, table: &PropagatorTable, js: usize, ks: usize) -> Result<(SystemOperator, f64)> {
        let n = table.n();
        let dt = self.ctx.spec.dt;
        let jp = js - 1;
        let (row, prev_row, col) = (table.index_of_slot(js), table.index_of_slot(jp), table.index_of_slot(ks));
        let below = js <= n;
        let sgn = if below { -1.0 } else { 1.0 };
        let ih = self.h * Complex64::new(0.0, 1.0);
        let prev = table.get_slot(jp, ks)?;
        let key = |stage| StreamKey { seed: self.seed, row: js, col: ks, stage };

        let s1 = self.rhs_sum(table, prev_row, col, key(1))?;
        let (g, s2) = match self.ctx.spec.integrator {
            Integrator::Heun => {
                let star = prev + (ih * prev + s1.value).scale_re(sgn * dt);
                let view = Overlay { table, row: js, col: ks, value: star };
                let s2 = self.rhs_sum(&view, row, col, key(2))?;
                let g = (prev + star).scale_re(0.5) + (ih * star + s2.value).scale_re(0.5 * sgn * dt);
                (g, s2)
            }
            Integrator::ExponentialHeun => {
                let e = self.propagators[usize::from(!below)];
                let f1 = s1.value.scale_re(sgn);
                let star = e * prev + f1.scale_re(dt);
                let view = Overlay { table, row: js, col: ks, value: star };
                let s2 = self.rhs_sum(&view, row, col, key(2))?;
                let f2 = s2.value.scale_re(sgn);
                let g = e * prev + (e * f1 + f2).scale_re(0.5 * dt);
                (g, s2)
            }
        };
        Ok((g, 0.5 * dt * (s1.std_error + s2.std_error)))
    }
}

/// Fills the whole table for measurement time t = N·dt.
pub fn solve(system: &SystemSpec, correlation: &ContourCorrelation, spec: &SolveSpec, seed: u64) -> Result<Solution> {
    solve_with(system, correlation, spec, seed, SolveOptions::default())
}

pub fn solve_with(
    system: &SystemSpec,
    correlation: &ContourCorrelation,
    spec: &SolveSpec,
    seed: u64,
    options: SolveOptions,
) -> Result<Solution> {
    system.validate()?;
    spec.validate()?;
    let n = spec.steps;
    let t = spec.measurement_time();
    let reach = if correlation.is_literal_difference() { 2.0 * t } else { t };
    if correlation.table().range() + 1e-9 < reach {
        return Err(Error::InvalidArgument(format!(
            "correlation table covers |s| ≤ {}, contour needs {reach}",
            correlation.table().range()
        )));
    }
    let correlation = correlation.at_measurement_time(t);
    let catalog = ConnectedCatalog::new(spec.connected_cap);
    let h = system.hamiltonian();
    let observable = system.observable;
    let stepper = Stepper {
        h,
        ctx: SumContext { coupling: SystemOperator::SIGMA_Z, correlation: &correlation, spec, catalog: &catalog },
        seed,
        options,
        propagators: [evolve(&h, spec.dt), evolve(&h, -spec.dt)],
    };

    let mut table = PropagatorTable::new(n, spec.dt, observable)?;
    if options.record_fill_order {
        table = table.with_fill_log();
    }
    let slots = table.slot_count();
    let mut std_errors = vec![0.0; slots * (slots + 1) / 2];
    for js in 0..slots {
        for ks in (0..=js).rev() {
            let value = if js == ks {
                SystemOperator::IDENTITY
            } else if js == n + 1 {
                observable * table.get_slot(n, ks)?
            } else if ks == n && js > n + 1 {
                table.get_slot(js, n + 1)? * observable
            } else {
                let (value, err) = stepper.step(&table, js, ks)?;
                std_errors[js * (js + 1) / 2 + ks] = err;
                value
            };
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite propagator at ({}, {})",
                    table.index_of_slot(js),
                    table.index_of_slot(ks)
                )));
            }
            table.set_slot(js, ks, value);
        }
    }
    Ok(Solution { table, std_errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{build_modes, tabulate, BathSpec, CorrelationTable};
    use crate::contour::antidiagonal_observables;

    fn decoupled(t: f64) -> ContourCorrelation {
        ContourCorrelation::new(CorrelationTable::constant(0.0, 2.0 * t, 1e-3), t)
    }

    fn baseline_correlation(t: f64) -> ContourCorrelation {
        let bath = BathSpec::default();
        let modes = build_modes(&bath).unwrap();
        ContourCorrelation::new(tabulate(&modes, bath.beta, 2.0 * t, 1e-3).unwrap(), t)
    }

    fn bare_value(system: &SystemSpec, table: &PropagatorTable, js: usize, ks: usize) -> SystemOperator {
        let t = table.measurement_time();
        let n = table.n();
        let (tj, tk) = (table.slot_time(js), table.slot_time(ks));
        if js == ks {
            SystemOperator::IDENTITY
        } else if js == n {
            evolve(&system.hamiltonian(), tj - tk)
        } else if ks == n {
            system.bare_propagator(tj, tk, t).unwrap() * system.observable
        } else {
            system.bare_propagator(tj, tk, t).unwrap()
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SolveSpec::new(1, SumMode::DeterministicQuadrature, 4, 1.0).validate().is_ok());
        assert!(SolveSpec::new(2, SumMode::MonteCarlo, 4, 1.0).validate().is_err());
        assert!(matches!(
            SolveSpec::new(3, SumMode::DeterministicQuadrature, 4, 1.0).validate(),
            Err(Error::UnsupportedOrder { .. })
        ));
        assert!(matches!(
            SolveSpec::new(11, SumMode::MonteCarlo, 4, 1.0).validate(),
            Err(Error::UnsupportedOrder { .. })
        ));
        assert!(SolveSpec::new(1, SumMode::MonteCarlo, 4, 1.0).with_samples(0).validate().is_err());
    }

    #[test]
    fn decoupled_sum_is_zero_in_both_modes() {
        let system = SystemSpec::new(0.3, 1.0);
        let corr = decoupled(1.0);
        let table = solve(&system, &corr, &SolveSpec::new(1, SumMode::DeterministicQuadrature, 5, 1.0), 0)
            .unwrap()
            .table;
        for mode in [SumMode::DeterministicQuadrature, SumMode::MonteCarlo] {
            let order = if mode == SumMode::MonteCarlo { 3 } else { 1 };
            let spec = SolveSpec::new(order, mode, 5, 1.0).with_samples(100);
            let catalog = ConnectedCatalog::default();
            let ctx = SumContext { coupling: SystemOperator::SIGMA_Z, correlation: &corr, spec: &spec, catalog: &catalog };
            let key = StreamKey { seed: 1, row: 9, col: 2, stage: 1 };
            let est = connected_sum(&table, GridIndex::plain(8), GridIndex::plain(2), &ctx, key).unwrap();
            assert_eq!(est.value, SystemOperator::ZERO);
        }
    }

    #[test]
    fn midpoint_sum_with_constant_inputs() {
        // G_I ≡ Id, B ≡ C_b: i²·(−1)^{[s<t]}·C_b·dt·W², i.e. +C_b·dt·Id below t
        // and −C_b·dt·Id above.
        let (n, dt, cb) = (4, 0.25, 0.7);
        let mut table = PropagatorTable::new(n, dt, SystemOperator::SIGMA_Z).unwrap();
        for r in 0..table.slot_count() {
            for c in 0..=r {
                table.set_slot(r, c, SystemOperator::IDENTITY);
            }
        }
        let corr = ContourCorrelation::new(CorrelationTable::constant(cb, 2.0, 1e-3), 1.0);
        let spec = SolveSpec::new(1, SumMode::DeterministicQuadrature, n, 1.0);
        let catalog = ConnectedCatalog::default();
        let ctx = SumContext { coupling: SystemOperator::SIGMA_Z, correlation: &corr, spec: &spec, catalog: &catalog };
        let key = StreamKey { seed: 0, row: 0, col: 0, stage: 1 };
        let est = connected_sum(&table, GridIndex::plain(2), GridIndex::plain(1), &ctx, key).unwrap();
        assert!(est.value.max_abs_diff(&SystemOperator::IDENTITY.scale_re(cb * dt)) < 1e-15);
        let est = connected_sum(&table, GridIndex::plain(7), GridIndex::plain(6), &ctx, key).unwrap();
        assert!(est.value.max_abs_diff(&SystemOperator::IDENTITY.scale_re(-cb * dt)) < 1e-15);
        // Empty window.
        let est = connected_sum(&table, GridIndex::plain(2), GridIndex::plain(2), &ctx, key).unwrap();
        assert_eq!(est.value, SystemOperator::ZERO);
    }

    #[test]
    fn single_heun_step_without_bath() {
        let system = SystemSpec::new(0.4, 1.0);
        let h = system.hamiltonian();
        let dt = 0.1;
        let solution = solve(&system, &decoupled(0.4), &SolveSpec::new(1, SumMode::DeterministicQuadrature, 4, 0.4), 0)
            .unwrap();
        let ih = h * Complex64::new(0.0, 1.0);
        let expected = SystemOperator::IDENTITY - ih.scale_re(dt) - (h * h).scale_re(0.5 * dt * dt);
        assert!(solution.table.get_slot(1, 0).unwrap().max_abs_diff(&expected) < 1e-15);
        // First step on the backward branch: Id + i dt H − dt² H²/2.
        let back = SystemOperator::IDENTITY + ih.scale_re(dt) - (h * h).scale_re(0.5 * dt * dt);
        assert!(solution.table.get_slot(7, 6).unwrap().max_abs_diff(&back) < 1e-15);
    }

    #[test]
    fn exponential_integrator_is_exact_without_bath() {
        let system = SystemSpec::new(0.6, 1.0);
        let spec = SolveSpec::new(1, SumMode::DeterministicQuadrature, 10, 1.0).with_integrator(Integrator::ExponentialHeun);
        let table = solve(&system, &decoupled(1.0), &spec, 0).unwrap().table;
        let mut worst: f64 = 0.0;
        for r in 0..table.slot_count() {
            for c in 0..=r {
                let diff = table.get_slot(r, c).unwrap().max_abs_diff(&bare_value(&system, &table, r, c));
                worst = worst.max(diff);
            }
        }
        assert!(worst <= 1e-12, "{worst}");
    }

    #[test]
    fn heun_without_bath_is_second_order() {
        let system = SystemSpec::new(0.0, 1.0);
        let errs: Vec<f64> = [10, 20]
            .iter()
            .map(|&n| {
                let table =
                    solve(&system, &decoupled(1.0), &SolveSpec::new(1, SumMode::DeterministicQuadrature, n, 1.0), 0)
                        .unwrap()
                        .table;
                antidiagonal_observables(&table, &system.rho_s)
                    .unwrap()
                    .iter()
                    .map(|(tau, v)| (v.re - (2.0 * tau).cos()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((3.5..=4.5).contains(&ratio), "{errs:?}");
    }

    #[test]
    fn one_step_grid_matches_cosine() {
        let system = SystemSpec::new(0.0, 1.0);
        let t = 0.1;
        let table = solve(&system, &decoupled(t), &SolveSpec::new(1, SumMode::DeterministicQuadrature, 1, t), 0)
            .unwrap()
            .table;
        let obs = antidiagonal_observables(&table, &system.rho_s).unwrap();
        assert_eq!(obs.len(), 2);
        assert!((obs[1].1.re - (2.0 * t).cos()).abs() < 1e-3);
    }

    #[test]
    fn baseline_table_invariants_and_sweep_order() {
        let system = SystemSpec::default();
        let t = 1.0;
        let spec = SolveSpec::new(1, SumMode::DeterministicQuadrature, 8, t);
        let options = SolveOptions { record_fill_order: true, ..Default::default() };
        let solution = solve_with(&system, &baseline_correlation(t), &spec, 0, options).unwrap();
        let table = &solution.table;
        table.check_invariants(0.0).unwrap();
        assert!(table.is_complete());
        assert!(table.max_op_norm() <= 1.05);
        let log = table.fill_log().unwrap();
        let expected: Vec<(usize, usize)> =
            (0..table.slot_count()).flat_map(|r| (0..=r).rev().map(move |c| (r, c))).collect();
        assert_eq!(log, expected.as_slice());
    }

    #[test]
    fn no_diagrams_reduces_to_linear_heun() {
        let system = SystemSpec::new(0.5, 1.0);
        let t = 1.0;
        let spec = SolveSpec::new(1, SumMode::DeterministicQuadrature, 6, t);
        let options = SolveOptions { without_diagrams: true, ..Default::default() };
        let with_bath = solve_with(&system, &baseline_correlation(t), &spec, 0, options).unwrap().table;
        let free = solve(&system, &decoupled(t), &spec, 0).unwrap().table;
        for (r, c, v) in with_bath.entries() {
            assert_eq!(v, free.get_slot(r, c).unwrap());
        }
    }

    #[test]
    fn monte_carlo_solve_is_reproducible() {
        let system = SystemSpec::default();
        let t = 0.5;
        let spec = SolveSpec::new(3, SumMode::MonteCarlo, 4, t).with_samples(3000);
        let corr = baseline_correlation(t);
        let a = solve(&system, &corr, &spec, 42).unwrap();
        let b = solve(&system, &corr, &spec, 42).unwrap();
        let c = solve(&system, &corr, &spec, 43).unwrap();
        for (r, col, v) in a.table.entries() {
            assert_eq!(v, b.table.get_slot(r, col).unwrap());
        }
        assert!(a.table.entries().zip(c.table.entries()).any(|(x, y)| x.2 != y.2));
        assert!(a.max_std_error() > 0.0);
        a.table.check_invariants(1e-14).unwrap();
    }

    #[test]
    fn integrators_agree_to_second_order() {
        let system = SystemSpec::default();
        let t = 1.0;
        let corr = baseline_correlation(t);
        let diff = |n: usize| {
            let heun = solve(&system, &corr, &SolveSpec::new(1, SumMode::DeterministicQuadrature, n, t), 0).unwrap();
            let spec = SolveSpec::new(1, SumMode::DeterministicQuadrature, n, t).with_integrator(Integrator::ExponentialHeun);
            let expo = solve(&system, &corr, &spec, 0).unwrap();
            let a = antidiagonal_observables(&heun.table, &system.rho_s).unwrap();
            let b = antidiagonal_observables(&expo.table, &system.rho_s).unwrap();
            (a.last().unwrap().1 - b.last().unwrap().1).norm()
        };
        let (d1, d2) = (diff(10), diff(20));
        assert!(d1 < 1e-2, "{d1}");
        assert!(d1 / d2 > 3.0, "{d1} {d2}");
    }
}
