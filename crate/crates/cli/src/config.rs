//! Project files: one JSON document describing agents, graph, pattern,
//! reference model, tolerances and simulation settings.

use std::path::Path;

use gammastab::linalg::from_rows;
use gammastab::sim::SimConfig;
use gammastab::sync::{AgentModel, ReferenceModel, SystemMatrix, UncertainEntry};
use gammastab::{Mat, Tolerance};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const BUNDLED: &str = include_str!("../data/four_agents.json");

/// Row-major nested arrays.
pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &Mat) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Matrix from nested rows.
pub fn matrix(rows: &Rows, field: &str) -> Result<Mat, CliError> {
    let width = rows.first().map_or(0, Vec::len);
    if let Some(k) = rows.iter().position(|r| r.len() != width) {
        return Err(CliError::input(format!(
            "{field}: row {} has {} entries, row 1 has {width}",
            k + 1,
            rows[k].len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::input(format!("{field}: entries must be finite")));
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(from_rows(&refs))
}

fn expect_shape(m: &Mat, rows: usize, cols: usize, field: &str) -> Result<(), CliError> {
    if m.shape() == (rows, cols) {
        Ok(())
    } else {
        Err(CliError::input(format!("{field}: expected {rows}x{cols}, got {}x{}", m.nrows(), m.ncols())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixName {
    A,
    B,
    C,
}

/// Uncertain entry at 1-based `(row, col)`, its box and the value used in
/// simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertainSpec {
    pub matrix: MatrixName,
    pub row: usize,
    pub col: usize,
    pub bounds: [f64; 2],
    #[serde(default)]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    /// Perturbation input matrix; derived from the reference model when absent.
    #[serde(default)]
    pub r: Option<Rows>,
    #[serde(default)]
    pub uncertain: Vec<UncertainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    /// `adjacency[i][j] > 0` when agent `i` receives from agent `j`.
    pub adjacency: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub a_o: Rows,
    pub c_o: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub b_o: Rows,
    pub a_zeta: Rows,
    pub b_zeta: Rows,
    pub c_zeta: Rows,
    pub gamma_zeta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    pub rank_tol: Option<f64>,
    pub eq_tol: Option<f64>,
    pub psd_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Standard deviation of the random initial state.
    #[serde(default = "unit")]
    pub initial_scale: f64,
    #[serde(default)]
    pub record_states: bool,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub systems: Vec<SystemSpec>,
    #[serde(default)]
    pub graph: Option<GraphSpec>,
    #[serde(default)]
    pub pattern: Option<PatternSpec>,
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub margin: Option<f64>,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
}

/// Validated matrices of one system.
#[derive(Debug, Clone)]
pub struct SystemData {
    pub name: String,
    pub model: AgentModel,
    pub r: Option<Mat>,
    /// Values of the uncertain parameters used in simulations.
    pub values: Vec<f64>,
}

/// Validated project.
#[derive(Debug, Clone)]
pub struct Project {
    pub systems: Vec<SystemData>,
    pub adjacency: Option<Mat>,
    pub pattern: Option<(Mat, Mat)>,
    pub reference: Option<ReferenceModel>,
    pub gamma: Option<f64>,
    pub margin: Option<f64>,
    pub tolerance: Tolerance,
    pub simulation: Option<SimulationSpec>,
}

impl ProjectConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::input(format!("{origin}: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Self::parse(BUNDLED, "bundled example"),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::input(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    /// Checks every dimension and builds the numeric project. Tolerances
    /// start from the environment defaults; explicit values win.
    pub fn validate(&self) -> Result<Project, CliError> {
        if self.systems.is_empty() {
            return Err(CliError::input("systems: at least one system is required"));
        }
        let mut systems = Vec::with_capacity(self.systems.len());
        for (i, spec) in self.systems.iter().enumerate() {
            systems.push(system_data(spec, &format!("systems[{i}]"))?);
        }
        let outputs = systems[0].model.p();
        let pattern = match &self.pattern {
            Some(p) => {
                let a_o = matrix(&p.a_o, "pattern.a_o")?;
                let lo = a_o.nrows();
                expect_shape(&a_o, lo, lo, "pattern.a_o")?;
                let c_o = matrix(&p.c_o, "pattern.c_o")?;
                expect_shape(&c_o, c_o.nrows(), lo, "pattern.c_o")?;
                for (i, s) in systems.iter().enumerate() {
                    if s.model.p() != c_o.nrows() {
                        return Err(CliError::input(format!(
                            "systems[{i}].c: {} outputs, pattern.c_o has {}",
                            s.model.p(),
                            c_o.nrows()
                        )));
                    }
                }
                Some((a_o, c_o))
            }
            None => None,
        };
        let reference = match &self.reference {
            Some(r) => {
                let Some((a_o, _)) = &pattern else {
                    return Err(CliError::input("reference: requires a pattern"));
                };
                let a_zeta = matrix(&r.a_zeta, "reference.a_zeta")?;
                let nz = a_zeta.nrows();
                expect_shape(&a_zeta, nz, nz, "reference.a_zeta")?;
                let c_zeta = matrix(&r.c_zeta, "reference.c_zeta")?;
                expect_shape(&c_zeta, c_zeta.nrows(), nz, "reference.c_zeta")?;
                let b_o = matrix(&r.b_o, "reference.b_o")?;
                expect_shape(&b_o, a_o.nrows(), c_zeta.nrows(), "reference.b_o")?;
                let b_zeta = matrix(&r.b_zeta, "reference.b_zeta")?;
                expect_shape(&b_zeta, nz, outputs, "reference.b_zeta")?;
                if !(r.gamma_zeta.is_finite() && r.gamma_zeta > 0.0) {
                    return Err(CliError::input(format!("reference.gamma_zeta: must be positive, got {}", r.gamma_zeta)));
                }
                Some(ReferenceModel { b_o, a_zeta, b_zeta, c_zeta, gamma_zeta: r.gamma_zeta })
            }
            None => None,
        };
        let adjacency = match &self.graph {
            Some(g) => {
                let adj = matrix(&g.adjacency, "graph.adjacency")?;
                expect_shape(&adj, systems.len(), systems.len(), "graph.adjacency")?;
                if adj.iter().any(|&v| v < 0.0) {
                    return Err(CliError::input("graph.adjacency: weights must be nonnegative"));
                }
                Some(adj)
            }
            None => None,
        };
        if let Some(g) = self.gamma {
            check_gamma(g)?;
        }
        if let Some(m) = self.margin {
            if !(m.is_finite() && m > 0.0) {
                return Err(CliError::input(format!("margin: must be positive, got {m}")));
            }
        }
        let mut tolerance = Tolerance::from_env().map_err(CliError::from)?;
        let t = &self.tolerances;
        for (slot, value) in
            [(&mut tolerance.rank_tol, t.rank_tol), (&mut tolerance.eq_tol, t.eq_tol), (&mut tolerance.psd_tol, t.psd_tol)]
        {
            if let Some(v) = value {
                *slot = v;
            }
        }
        tolerance.validate().map_err(|e| CliError::input(format!("tolerances: {e}")))?;
        if let Some(s) = &self.simulation {
            sim_config(s).validate().map_err(|e| CliError::input(format!("simulation: {e}")))?;
            if !(s.initial_scale.is_finite() && s.initial_scale >= 0.0) {
                return Err(CliError::input("simulation.initial_scale: must be nonnegative"));
            }
        }
        Ok(Project {
            systems,
            adjacency,
            pattern,
            reference,
            gamma: self.gamma,
            margin: self.margin,
            tolerance,
            simulation: self.simulation.clone(),
        })
    }
}

pub fn check_gamma(gamma: f64) -> Result<(), CliError> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(CliError::input(format!("gamma: must be strictly positive and finite, got {gamma}")))
    }
}

pub fn sim_config(s: &SimulationSpec) -> SimConfig {
    SimConfig { dt: s.dt, horizon: s.horizon, seed: s.seed, record_states: s.record_states }
}

fn system_data(spec: &SystemSpec, field: &str) -> Result<SystemData, CliError> {
    let a = matrix(&spec.a, &format!("{field}.a"))?;
    let n = a.nrows();
    expect_shape(&a, n, n, &format!("{field}.a"))?;
    let b = matrix(&spec.b, &format!("{field}.b"))?;
    expect_shape(&b, n, b.ncols(), &format!("{field}.b"))?;
    let c = matrix(&spec.c, &format!("{field}.c"))?;
    expect_shape(&c, c.nrows(), n, &format!("{field}.c"))?;
    let r = match &spec.r {
        Some(rows) => {
            let r = matrix(rows, &format!("{field}.r"))?;
            expect_shape(&r, n, r.ncols(), &format!("{field}.r"))?;
            Some(r)
        }
        None => None,
    };
    let mut entries = Vec::new();
    let mut bounds = Vec::new();
    let mut values = Vec::new();
    for (k, u) in spec.uncertain.iter().enumerate() {
        let at = format!("{field}.uncertain[{k}]");
        let (target, matrix) = match u.matrix {
            MatrixName::A => (&a, SystemMatrix::A),
            MatrixName::B => (&b, SystemMatrix::B),
            MatrixName::C => (&c, SystemMatrix::C),
        };
        if u.row == 0 || u.col == 0 || u.row > target.nrows() || u.col > target.ncols() {
            return Err(CliError::input(format!(
                "{at}: position ({}, {}) is outside {:?} of size {}x{} (positions are 1-based)",
                u.row,
                u.col,
                u.matrix,
                target.nrows(),
                target.ncols()
            )));
        }
        let [lo, hi] = u.bounds;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(CliError::input(format!("{at}.bounds: invalid box [{lo}, {hi}]")));
        }
        if !(lo..=hi).contains(&u.value) {
            return Err(CliError::input(format!("{at}.value: {} is outside [{lo}, {hi}]", u.value)));
        }
        entries.push(UncertainEntry { matrix, row: u.row - 1, col: u.col - 1, param: k });
        bounds.push((lo, hi));
        values.push(u.value);
    }
    let model = AgentModel { a, b, c, entries, bounds };
    model.validate().map_err(|e| CliError::input(format!("{field}: {e}")))?;
    Ok(SystemData { name: spec.name.clone().unwrap_or_else(|| field.to_string()), model, r, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled() -> ProjectConfig {
        ProjectConfig::parse(BUNDLED, "bundled").unwrap()
    }

    #[test]
    fn bundled_example_validates() {
        let project = bundled().validate().unwrap();
        assert_eq!(project.systems.len(), 4);
        assert_eq!(project.gamma, Some(1.5));
        assert_eq!(project.reference.unwrap().gamma_zeta, 0.139);
    }

    #[test]
    fn bundled_matches_benchmark_data() {
        let project = bundled().validate().unwrap();
        let nominal = gammastab::benchmark::agent_model();
        for s in &project.systems {
            assert_eq!(s.model.a, nominal.a);
            assert_eq!(s.model.b, nominal.b);
            assert_eq!(s.model.c, nominal.c);
            assert_eq!(s.model.entries, nominal.entries);
            assert_eq!(s.model.bounds, nominal.bounds);
        }
        assert_eq!(project.adjacency.unwrap(), gammastab::benchmark::adjacency());
        assert_eq!(project.reference.unwrap(), gammastab::benchmark::reference_model());
        assert_eq!(project.pattern.unwrap(), gammastab::benchmark::pattern());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = BUNDLED.replacen("\"gamma\"", "\"gamma_typo\"", 1);
        let err = ProjectConfig::parse(&text, "test").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("unknown field"), "{err}");
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn ragged_rows_rejected() {
        let mut cfg = bundled();
        cfg.systems[0].a[1].pop();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("systems[0].a"), "{err}");
    }

    #[test]
    fn dimension_cross_check() {
        let mut cfg = bundled();
        cfg.systems[2].c = vec![vec![1.0, 0.0, 0.0, 0.0]];
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("systems[2].c"), "{err}");

        let mut cfg = bundled();
        cfg.reference.as_mut().unwrap().b_zeta = vec![vec![0.03; 3]; 2];
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("reference.b_zeta"), "{err}");

        let mut cfg = bundled();
        cfg.graph.as_mut().unwrap().adjacency.pop();
        assert!(cfg.validate().unwrap_err().to_string().contains("graph.adjacency"));
    }

    #[test]
    fn uncertain_positions_are_one_based() {
        let mut cfg = bundled();
        cfg.systems[0].uncertain[0].row = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("1-based"));
        let mut cfg = bundled();
        cfg.systems[0].uncertain[0].value = 2.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("outside"));
    }

    #[test]
    fn config_tolerances_override() {
        let mut cfg = bundled();
        cfg.tolerances.psd_tol = Some(1e-6);
        assert_eq!(cfg.validate().unwrap().tolerance.psd_tol, 1e-6);
        cfg.tolerances.rank_tol = Some(-1.0);
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 1);
    }
}
