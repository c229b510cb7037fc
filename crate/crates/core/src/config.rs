//! Run configuration: a TOML document with one table per section
//! (`[system]`, `[bath]`, …) or, equivalently, dotted `section.key = value`
//! lines. Every key is optional and defaults to the baseline; unknown keys are
//! errors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bath::{build_modes, tabulate, BathSpec, ContourCorrelation, CorrelationTable, DEFAULT_TABLE_STEP};
use crate::combinatorics::DEFAULT_ORDER_CAP;
use crate::error::{Error, Result};
use crate::inchworm::{Integrator, SolveSpec, SumMode, DEFAULT_SAMPLES_PER_ORDER};
use crate::system::{InitialState, Observable, SystemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub epsilon: f64,
    pub delta: f64,
    pub initial_state: InitialState,
    pub observable: Observable,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self { epsilon: 0.0, delta: 1.0, initial_state: InitialState::Up, observable: Observable::SigmaZ }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathSection {
    pub modes: usize,
    pub beta: f64,
    pub omega_c: f64,
    pub omega_max: f64,
    pub xi: f64,
    pub table_step: f64,
    pub literal_difference: bool,
}

impl Default for BathSection {
    fn default() -> Self {
        let b = BathSpec::default();
        Self {
            modes: b.modes,
            beta: b.beta,
            omega_c: b.omega_c,
            omega_max: b.omega_max,
            xi: b.xi,
            table_step: DEFAULT_TABLE_STEP,
            literal_difference: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub order: usize,
    pub mode: SumMode,
    pub samples_per_order: usize,
    pub integrator: Integrator,
    pub dt: f64,
    pub connected_cap: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            order: 1,
            mode: SumMode::DeterministicQuadrature,
            samples_per_order: DEFAULT_SAMPLES_PER_ORDER,
            integrator: Integrator::Heun,
            dt: 0.1,
            connected_cap: DEFAULT_ORDER_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub t_final: f64,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { t_final: 5.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BareSection {
    pub order: usize,
    pub samples_per_order: usize,
}

impl Default for BareSection {
    fn default() -> Self {
        Self { order: 4, samples_per_order: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSection {
    /// Grid resolutions 1/h to test.
    pub steps_per_unit: Vec<usize>,
    pub reference_steps_per_unit: usize,
    pub probe_times: Vec<f64>,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self {
            steps_per_unit: vec![10, 20, 30, 40, 50, 60],
            reference_steps_per_unit: 320,
            probe_times: vec![0.5, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSection {
    pub lengths: Vec<f64>,
    pub order: usize,
    pub samples: usize,
}

impl Default for VarianceSection {
    fn default() -> Self {
        Self { lengths: vec![1.0, 2.0, 3.0, 4.0], order: 4, samples: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Independent Monte Carlo inchworm solves used for error bars.
    pub inchworm_replicas: usize,
    /// Truncation order of the Monte Carlo inchworm column.
    pub inchworm_order: usize,
    pub bare_orders: Vec<usize>,
    /// Emit every k-th grid time.
    pub tau_stride: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { inchworm_replicas: 4, inchworm_order: 3, bare_orders: vec![0, 2, 4], tau_stride: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    /// CSV of (τ, value) rows to compare against.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub system: SystemSection,
    pub bath: BathSection,
    pub solver: SolverSection,
    pub run: RunSection,
    pub bare: BareSection,
    pub converge: ConvergeSection,
    pub variance: VarianceSection,
    pub compare: CompareSection,
    pub output: OutputSection,
    pub reference: ReferenceSection,
}

impl RunSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: RunSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run spec serializes")
    }

    /// Every key as `section.key = value`, for output headers.
    pub fn echo_lines(&self) -> Vec<String> {
        let value = toml::Value::try_from(self).expect("run spec serializes");
        let mut lines = Vec::new();
        if let toml::Value::Table(sections) = value {
            for (section, body) in sections {
                if let toml::Value::Table(keys) = body {
                    for (key, v) in keys {
                        lines.push(format!("{section}.{key} = {v}"));
                    }
                }
            }
        }
        lines
    }

    pub fn system_spec(&self) -> SystemSpec {
        SystemSpec {
            epsilon: self.system.epsilon,
            delta: self.system.delta,
            rho_s: self.system.initial_state.density_matrix(),
            observable: self.system.observable.operator(),
        }
    }

    pub fn bath_spec(&self) -> BathSpec {
        BathSpec {
            modes: self.bath.modes,
            beta: self.bath.beta,
            omega_c: self.bath.omega_c,
            omega_max: self.bath.omega_max,
            xi: self.bath.xi,
        }
    }

    /// Steps per branch N with N·dt = t_final.
    pub fn steps(&self) -> Result<usize> {
        steps_for(self.run.t_final, self.solver.dt)
    }

    pub fn solve_spec(&self) -> Result<SolveSpec> {
        let steps = self.steps()?;
        Ok(SolveSpec {
            order: self.solver.order,
            mode: self.solver.mode,
            samples_per_order: self.solver.samples_per_order,
            integrator: self.solver.integrator,
            steps,
            dt: self.run.t_final / steps as f64,
            connected_cap: self.solver.connected_cap,
        })
    }

    /// Correlation table covering contours up to length 2·t_max.
    pub fn correlation_table(&self, t_max: f64) -> Result<Arc<CorrelationTable>> {
        let bath = self.bath_spec();
        let modes = build_modes(&bath)?;
        Ok(Arc::new(tabulate(&modes, bath.beta, 2.0 * t_max, self.bath.table_step)?))
    }

    pub fn correlation(&self, t_max: f64) -> Result<ContourCorrelation> {
        Ok(ContourCorrelation::shared(self.correlation_table(t_max)?, t_max)
            .with_literal_difference(self.bath.literal_difference))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        let s = &self.system;
        if !(s.epsilon.is_finite() && s.delta.is_finite()) {
            return cfg("system.epsilon and system.delta must be finite".into());
        }
        self.bath_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.bath.table_step.is_finite() && self.bath.table_step > 0.0) {
            return cfg(format!("bath.table_step must be positive, got {}", self.bath.table_step));
        }
        if !(self.run.t_final.is_finite() && self.run.t_final > 0.0) {
            return cfg(format!("run.t_final must be positive, got {}", self.run.t_final));
        }
        self.solve_spec()
            .and_then(|s| s.validate())
            .map_err(|e| Error::Config(format!("solver: {e}")))?;
        if self.bare.order % 2 == 1 || self.bare.order > crate::dyson::MAX_BARE_ORDER {
            return cfg(format!(
                "bare.order must be even and ≤ {}, got {}",
                crate::dyson::MAX_BARE_ORDER,
                self.bare.order
            ));
        }
        if self.bare.samples_per_order == 0 {
            return cfg("bare.samples_per_order must be positive".into());
        }
        let c = &self.converge;
        if c.steps_per_unit.is_empty() || c.steps_per_unit.contains(&0) || c.reference_steps_per_unit == 0 {
            return cfg("converge.steps_per_unit entries must be positive".into());
        }
        if c.probe_times.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return cfg("converge.probe_times must be positive".into());
        }
        let v = &self.variance;
        if v.lengths.iter().any(|&l| !(l.is_finite() && l >= 0.0)) {
            return cfg("variance.lengths must be nonnegative".into());
        }
        if v.order % 2 == 1 || v.order == 0 || v.order > crate::dyson::MAX_BARE_ORDER {
            return cfg(format!("variance.order must be even in 2..={}", crate::dyson::MAX_BARE_ORDER));
        }
        if v.samples < 2 {
            return cfg("variance.samples must be at least 2".into());
        }
        let cmp = &self.compare;
        if cmp.inchworm_replicas == 0 || cmp.tau_stride == 0 {
            return cfg("compare.inchworm_replicas and compare.tau_stride must be positive".into());
        }
        if cmp.inchworm_order % 2 == 0 || cmp.inchworm_order > self.solver.connected_cap {
            return cfg(format!("compare.inchworm_order must be odd and ≤ {}", self.solver.connected_cap));
        }
        if cmp.bare_orders.iter().any(|&m| m % 2 == 1 || m > crate::dyson::MAX_BARE_ORDER) {
            return cfg("compare.bare_orders must be even".into());
        }
        Ok(())
    }
}

/// N with N·dt = t, rejecting step sizes that do not divide t.
pub fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!("solver.dt must be positive, got {dt}")));
    }
    let n = (t / dt).round();
    if n < 1.0 || (n * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::Config(format!("solver.dt = {dt} does not divide run.t_final = {t}")));
    }
    Ok(n as usize)
}
