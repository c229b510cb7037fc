//! Run orchestration behind the command-line front end: single solves,
//! convergence studies, cross-solver comparisons, variance profiles and the
//! bath table dump. Each run returns its data; the `write_*` functions emit
//! CSV with `#` header lines.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::bath::ContourCorrelation;
use crate::config::{steps_for, RunSpec};
use crate::contour::{antidiagonal_observables, GridIndex};
use crate::dyson::{bare_observable, variance_profile, VariancePoint};
use crate::error::{Error, Result};
use crate::inchworm::{solve, Solution, SolveSpec, SumMode};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// ⟨O(τ)⟩ at one time with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservablePoint {
    pub tau: f64,
    pub value: Complex64,
    pub std_error: f64,
}

/// Header lines shared by every output: version, seed, C_b, run kind, then
/// the full configuration.
pub fn header(spec: &RunSpec, kind: &str, c_b: f64) -> Vec<String> {
    let mut lines = vec![
        format!("inchworm {VERSION}"),
        format!("run = {kind}"),
        format!("seed = {}", spec.run.seed),
        format!("c_b = {c_b:.17e}"),
    ];
    lines.extend(spec.echo_lines());
    lines
}

/// Observable along the anti-diagonal of a solved table, τ ascending.
pub fn observable_curve(solution: &Solution, system_rho: &crate::system::SystemOperator) -> Result<Vec<ObservablePoint>> {
    let table = &solution.table;
    let n = table.n();
    let values = antidiagonal_observables(table, system_rho)?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, (tau, value))| {
            let k = n - i;
            let std_error = if k == n {
                0.0
            } else {
                let row = table.slot(GridIndex::plain(2 * n - k))?;
                solution.std_error(row, k)
            };
            Ok(ObservablePoint { tau, value, std_error })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SingleRun {
    pub header: Vec<String>,
    pub points: Vec<ObservablePoint>,
    pub reference: Option<ReferenceDeviation>,
}

pub fn run_single(spec: &RunSpec) -> Result<SingleRun> {
    let solve_spec = spec.solve_spec()?;
    let corr = spec.correlation(spec.run.t_final)?;
    let system = spec.system_spec();
    let solution = solve(&system, &corr, &solve_spec, spec.run.seed)?;
    let points = observable_curve(&solution, &system.rho_s)?;
    let mut header = header(spec, "single", corr.c_b());
    header.push(format!(
        "mode = {:?}, M = {}, samples_per_order = {}, N = {}, dt = {}",
        solve_spec.mode, solve_spec.order, solve_spec.samples_per_order, solve_spec.steps, solve_spec.dt
    ));
    let reference = match &spec.reference.path {
        Some(path) => {
            let dev = compare_reference(&read_reference(path)?, &points)?;
            header.push(format!(
                "reference {}: max_abs_dev = {:.6e}, mean_abs_dev = {:.6e}, points = {}",
                path.display(),
                dev.max_abs,
                dev.mean_abs,
                dev.count
            ));
            Some(dev)
        }
        None => None,
    };
    Ok(SingleRun { header, points, reference })
}

fn write_header<W: Write>(out: &mut W, header: &[String]) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

pub fn write_single_csv<W: Write>(mut out: W, run: &SingleRun) -> Result<()> {
    write_header(&mut out, &run.header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "re", "im", "std_error"])?;
    for p in &run.points {
        w.write_record(&[
            format!("{:.10}", p.tau),
            format!("{:.12e}", p.value.re),
            format!("{:.12e}", p.value.im),
            format!("{:.6e}", p.std_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Max/mean |Re⟨O⟩ − reference| over the reference times.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceDeviation {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub count: usize,
}

/// Reads (τ, value) rows; `#` lines and a non-numeric header row are skipped.
pub fn read_reference(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::InvalidArgument(format!("{}: row {} has fewer than two columns", path.display(), i + 1)));
        }
        match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
            (Ok(t), Ok(v)) => rows.push((t, v)),
            _ if i == 0 => continue,
            _ => {
                return Err(Error::InvalidArgument(format!("{}: row {} is not numeric", path.display(), i + 1)));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no reference rows", path.display())));
    }
    Ok(rows)
}

/// Compares against the real part of `points`, linearly interpolated.
pub fn compare_reference(reference: &[(f64, f64)], points: &[ObservablePoint]) -> Result<ReferenceDeviation> {
    let (first, last) = match (points.first(), points.last()) {
        (Some(a), Some(b)) => (a.tau, b.tau),
        _ => return Err(Error::InvalidArgument("no computed points to compare".into())),
    };
    let mut max_abs = 0.0f64;
    let mut sum = 0.0;
    for &(tau, value) in reference {
        if tau < first - 1e-12 || tau > last + 1e-12 {
            return Err(Error::InvalidArgument(format!("reference time {tau} outside [{first}, {last}]")));
        }
        let i = points.partition_point(|p| p.tau < tau).min(points.len() - 1);
        let computed = if i == 0 || (points[i].tau - tau).abs() < 1e-12 {
            points[i].value.re
        } else {
            let (a, b) = (&points[i - 1], &points[i]);
            let w = (tau - a.tau) / (b.tau - a.tau);
            (1.0 - w) * a.value.re + w * b.value.re
        };
        let d = (computed - value).abs();
        max_abs = max_abs.max(d);
        sum += d;
    }
    Ok(ReferenceDeviation { max_abs, mean_abs: sum / reference.len() as f64, count: reference.len() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub t: f64,
    pub error: f64,
    /// Against the previous h in the list; `None` for the first.
    pub order: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub header: Vec<String>,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn orders(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().filter_map(|r| r.order)
    }
}

/// Deterministic M = 1 solves at each h, measured against a fine reference
/// solve at the probe times.
pub fn run_convergence(spec: &RunSpec) -> Result<ConvergenceReport> {
    let c = &spec.converge;
    let t_max = c.probe_times.iter().copied().fold(0.0, f64::max);
    let corr = spec.correlation(t_max)?;
    let system = spec.system_spec();
    let curve = |per_unit: usize| -> Result<Vec<ObservablePoint>> {
        let dt = 1.0 / per_unit as f64;
        let steps = steps_for(t_max, dt)?;
        let mut solve_spec = SolveSpec::new(1, SumMode::DeterministicQuadrature, steps, t_max);
        solve_spec.integrator = spec.solver.integrator;
        solve_spec.connected_cap = spec.solver.connected_cap;
        let solution = solve(&system, &corr, &solve_spec, spec.run.seed)?;
        observable_curve(&solution, &system.rho_s)
    };
    let at = |points: &[ObservablePoint], per_unit: usize, t: f64| -> Result<Complex64> {
        let k = steps_for(t, 1.0 / per_unit as f64)
            .map_err(|_| Error::Config(format!("probe time {t} is not a multiple of 1/{per_unit}")))?;
        Ok(points[k].value)
    };
    let reference = curve(c.reference_steps_per_unit)?;
    let mut errors = Vec::with_capacity(c.steps_per_unit.len());
    for &per_unit in &c.steps_per_unit {
        let points = curve(per_unit)?;
        let e = c
            .probe_times
            .iter()
            .map(|&t| Ok((at(&points, per_unit, t)? - at(&reference, c.reference_steps_per_unit, t)?).norm()))
            .collect::<Result<Vec<f64>>>()?;
        errors.push(e);
    }
    let mut rows = Vec::new();
    for (pi, &t) in c.probe_times.iter().enumerate() {
        for (hi, &per_unit) in c.steps_per_unit.iter().enumerate() {
            let h = 1.0 / per_unit as f64;
            let order = (hi > 0).then(|| {
                let h_prev = 1.0 / c.steps_per_unit[hi - 1] as f64;
                (errors[hi - 1][pi] / errors[hi][pi]).ln() / (h_prev / h).ln()
            });
            rows.push(ConvergenceRow { h, t, error: errors[hi][pi], order });
        }
    }
    let mut header = header(spec, "converge", corr.c_b());
    header.push(format!(
        "mode = DeterministicQuadrature, M = 1, reference dt = 1/{}",
        c.reference_steps_per_unit
    ));
    Ok(ConvergenceReport { header, rows })
}

pub fn write_convergence_csv<W: Write>(mut out: W, report: &ConvergenceReport) -> Result<()> {
    write_header(&mut out, &report.header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h", "t", "error", "order"])?;
    for r in &report.rows {
        w.write_record(&[
            format!("{}", r.h),
            format!("{}", r.t),
            format!("{:.6e}", r.error),
            r.order.map(|o| format!("{o:.4}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub tau: f64,
    /// Partial bare sums, one per entry of `compare.bare_orders`.
    pub bare: Vec<(Complex64, f64)>,
    pub inchworm_m1: Complex64,
    pub inchworm_mc: (Complex64, f64),
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    pub header: Vec<String>,
    pub bare_orders: Vec<usize>,
    pub inchworm_order: usize,
    pub rows: Vec<CompareRow>,
}

/// Seed of the r-th inchworm replica.
pub fn replica_seed(seed: u64, replica: usize) -> u64 {
    seed.wrapping_add((replica as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Mean and standard error of the mean over replicas.
fn replica_mean(values: &[Complex64]) -> (Complex64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<Complex64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Bare series partial sums, inchworm M = 1 and replicated Monte Carlo
/// inchworm on the same τ grid.
pub fn run_compare(spec: &RunSpec) -> Result<CompareReport> {
    let cmp = &spec.compare;
    let t = spec.run.t_final;
    let corr = spec.correlation(t)?;
    let system = spec.system_spec();
    let base = spec.solve_spec()?;
    let stride = cmp.tau_stride;

    let m1_spec = SolveSpec { order: 1, mode: SumMode::DeterministicQuadrature, ..base.clone() };
    let m1 = observable_curve(&solve(&system, &corr, &m1_spec, spec.run.seed)?, &system.rho_s)?;

    let mc_spec = SolveSpec { order: cmp.inchworm_order, mode: SumMode::MonteCarlo, ..base.clone() };
    let mut replicas = Vec::with_capacity(cmp.inchworm_replicas);
    for r in 0..cmp.inchworm_replicas {
        let sol = solve(&system, &corr, &mc_spec, replica_seed(spec.run.seed, r))?;
        replicas.push(observable_curve(&sol, &system.rho_s)?);
    }

    let bare_max = cmp.bare_orders.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    for i in (0..m1.len()).step_by(stride) {
        let tau = m1[i].tau;
        let bare = if tau == 0.0 {
            let v = bare_zero(&system);
            cmp.bare_orders.iter().map(|_| (v, 0.0)).collect()
        } else {
            let est = bare_observable(&system, &corr, tau, bare_max, spec.bare.samples_per_order, spec.run.seed)?;
            cmp.bare_orders
                .iter()
                .map(|&m| {
                    let terms = est.terms.iter().filter(|term| term.order <= m);
                    let (mut mean, mut var) = (Complex64::new(0.0, 0.0), 0.0);
                    for term in terms {
                        mean += term.mean;
                        var += term.std_error * term.std_error;
                    }
                    (mean, var.sqrt())
                })
                .collect()
        };
        let values: Vec<Complex64> = replicas.iter().map(|r| r[i].value).collect();
        let mut inchworm_mc = replica_mean(&values);
        if replicas.len() == 1 {
            inchworm_mc.1 = replicas[0][i].std_error;
        }
        rows.push(CompareRow { tau, bare, inchworm_m1: m1[i].value, inchworm_mc });
    }

    let mut header = header(spec, "compare", corr.c_b());
    header.push(format!(
        "bare orders = {:?}, bare samples_per_order = {}; inchworm M = {} with {} replicas of {} samples_per_order, N = {}, dt = {}",
        cmp.bare_orders, spec.bare.samples_per_order, cmp.inchworm_order, cmp.inchworm_replicas, base.samples_per_order, base.steps, base.dt
    ));
    Ok(CompareReport { header, bare_orders: cmp.bare_orders.clone(), inchworm_order: cmp.inchworm_order, rows })
}

fn bare_zero(system: &crate::system::SystemSpec) -> Complex64 {
    crate::system::expectation(&system.rho_s, &system.observable)
}

pub fn write_compare_csv<W: Write>(mut out: W, report: &CompareReport) -> Result<()> {
    write_header(&mut out, &report.header)?;
    let mut w = csv::Writer::from_writer(out);
    let mut names = vec!["tau".to_string()];
    for m in &report.bare_orders {
        names.extend([format!("bare_m{m}_re"), format!("bare_m{m}_im"), format!("bare_m{m}_std_error")]);
    }
    names.extend(["inchworm_m1_re".into(), "inchworm_m1_im".into()]);
    let m = report.inchworm_order;
    names.extend([format!("inchworm_m{m}_re"), format!("inchworm_m{m}_im"), format!("inchworm_m{m}_std_error")]);
    w.write_record(&names)?;
    for r in &report.rows {
        let mut rec = vec![format!("{:.10}", r.tau)];
        for (v, e) in &r.bare {
            rec.extend([format!("{:.12e}", v.re), format!("{:.12e}", v.im), format!("{e:.6e}")]);
        }
        rec.extend([format!("{:.12e}", r.inchworm_m1.re), format!("{:.12e}", r.inchworm_m1.im)]);
        let (v, e) = r.inchworm_mc;
        rec.extend([format!("{:.12e}", v.re), format!("{:.12e}", v.im), format!("{e:.6e}")]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct VarianceReport {
    pub header: Vec<String>,
    pub points: Vec<VariancePoint>,
}

pub fn run_variance(spec: &RunSpec) -> Result<VarianceReport> {
    let v = &spec.variance;
    let longest = v.lengths.iter().copied().fold(0.0, f64::max);
    let corr = spec.correlation((0.5 * longest).max(spec.bath.table_step))?;
    let points = variance_profile(&spec.system_spec(), &corr, &v.lengths, v.order, v.samples, spec.run.seed)?;
    let mut header = header(spec, "variance", corr.c_b());
    header.push(format!("bare M = {}, samples per order = {}", v.order, v.samples));
    Ok(VarianceReport { header, points })
}

pub fn write_variance_csv<W: Write>(mut out: W, report: &VarianceReport) -> Result<()> {
    write_header(&mut out, &report.header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["length", "variance", "variance_error", "envelope"])?;
    for p in &report.points {
        w.write_record(&[
            format!("{}", p.length),
            format!("{:.6e}", p.variance),
            format!("{:.6e}", p.variance_error),
            format!("{:.17e}", p.envelope),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the tabulated bath function f(s) for |s| ≤ 2·t_final.
pub fn dump_bath<W: Write>(spec: &RunSpec, out: W) -> Result<ContourCorrelation> {
    let corr = spec.correlation(spec.run.t_final)?;
    let mut header = header(spec, "dump-bath", corr.c_b());
    header.push(format!("table step = {}, range = {}", corr.table().step(), corr.table().range()));
    corr.table().write_csv(out, &header)?;
    Ok(corr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(text: &str) -> RunSpec {
        RunSpec::parse(text).unwrap()
    }

    #[test]
    fn decoupled_single_run_is_cosine() {
        let spec = small("bath.xi = 0.0\nrun.t_final = 2.0\nsolver.dt = 0.1\nbath.modes = 10");
        let run = run_single(&spec).unwrap();
        assert_eq!(run.points.len(), 21);
        assert_eq!(run.points[0].tau, 0.0);
        assert_eq!(run.points[0].value, Complex64::new(1.0, 0.0));
        for p in &run.points {
            assert!((p.value.re - (2.0 * p.tau).cos()).abs() < 2e-2, "{p:?}");
        }
    }

    #[test]
    fn single_csv_layout() {
        let spec = small("bath.xi = 0.0\nrun.t_final = 0.5\nrun.seed = 17\nbath.modes = 4");
        let run = run_single(&spec).unwrap();
        let mut buf = Vec::new();
        write_single_csv(&mut buf, &run).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# inchworm "));
        assert!(text.contains("# seed = 17"));
        assert!(text.contains("# c_b = "));
        assert!(text.contains("# bath.xi = 0.0"));
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body[0], "tau,re,im,std_error");
        assert_eq!(body.len(), 1 + 6);
    }

    #[test]
    fn reference_deviation_interpolates() {
        let points: Vec<ObservablePoint> = (0..=4)
            .map(|i| ObservablePoint { tau: i as f64 * 0.5, value: Complex64::new(i as f64, 0.0), std_error: 0.0 })
            .collect();
        let dev = compare_reference(&[(0.0, 0.0), (0.75, 1.0), (2.0, 4.5)], &points).unwrap();
        assert_eq!(dev.count, 3);
        assert!((dev.max_abs - 0.5).abs() < 1e-12);
        assert!((dev.mean_abs - 1.0 / 3.0 * (0.5 + 0.5)).abs() < 1e-12);
        assert!(compare_reference(&[(3.0, 0.0)], &points).is_err());
    }

    #[test]
    fn reference_file_with_header_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.csv");
        std::fs::write(&path, "# from elsewhere\ntau,value\n0.0, 1.0\n0.5,0.5\n").unwrap();
        assert_eq!(read_reference(&path).unwrap(), vec![(0.0, 1.0), (0.5, 0.5)]);
        std::fs::write(&path, "tau,value\n0.0,x\n").unwrap();
        assert!(read_reference(&path).is_err());
    }

    #[test]
    fn decoupled_compare_columns_agree() {
        let spec = small(
            "bath.xi = 0.0\nbath.modes = 4\nrun.t_final = 0.4\nsolver.dt = 0.1\nsolver.samples_per_order = 64\n\
             compare.inchworm_replicas = 2\nbare.samples_per_order = 64",
        );
        let report = run_compare(&spec).unwrap();
        assert_eq!(report.rows.len(), 5);
        for r in &report.rows {
            let exact = (2.0 * r.tau).cos();
            for (v, _) in &r.bare {
                assert!((v.re - exact).abs() < 1e-12);
            }
            assert!((r.inchworm_m1.re - exact).abs() < 1e-3);
            assert!((r.inchworm_mc.0.re - r.inchworm_m1.re).abs() < 1e-14);
        }
        let mut buf = Vec::new();
        write_compare_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("tau,bare_m0_re,bare_m0_im,bare_m0_std_error,bare_m2_re"));
        assert!(text.contains("inchworm_m3_std_error"));
    }

    #[test]
    fn variance_report_envelope() {
        let spec = small("variance.lengths = [0.0, 1.0]\nvariance.samples = 2000\nvariance.order = 2\nbath.modes = 20");
        let report = run_variance(&spec).unwrap();
        assert_eq!(report.points[0].variance, 0.0);
        assert_eq!(report.points[0].envelope, 0.0);
        assert!(report.points[1].variance > 0.0 && report.points[1].envelope > 0.0);
        let mut buf = Vec::new();
        write_variance_csv(&mut buf, &report).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("length,variance,variance_error,envelope"));
    }

    #[test]
    fn convergence_rows_cover_grid() {
        let spec = small(
            "bath.modes = 20\nconverge.steps_per_unit = [4, 8]\nconverge.reference_steps_per_unit = 32\n\
             converge.probe_times = [0.5, 1.0]",
        );
        let report = run_convergence(&spec).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows[0].order.is_none() && report.rows[1].order.is_some());
        for o in report.orders() {
            assert!(o > 1.0 && o < 3.0, "{o}");
        }
    }

    #[test]
    fn probe_off_grid_is_config_error() {
        let spec = small("converge.steps_per_unit = [3]\nconverge.probe_times = [0.5]\nbath.modes = 4");
        assert!(matches!(run_convergence(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn bath_dump_covers_range() {
        let spec = small("run.t_final = 0.1\nbath.table_step = 0.01\nbath.modes = 4");
        let mut buf = Vec::new();
        let corr = dump_bath(&spec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, 1 + corr.table().node_count());
        assert!((corr.table().range() - 0.2).abs() < 1e-9);
    }
}
