use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gammastab::normal_form::{check_assumptions, normal_form, AssumptionReport, LinearSystem};
use gammastab::sim::{
    dominant_frequency, random_state, simulate_network_seeds, sync_error, SimConfig, Trace, DEFAULT_DT,
    FREQUENCY_TAIL, SYNC_TAIL,
};
use gammastab::sync::{
    build_network, build_pattern_companion, consensus_margin, design_agent, regulator_rank_warnings,
    solve_regulator_equations, Digraph, SyncNetwork, SyncOptions,
};
use gammastab::synthesis::{small_gain_bound, small_gain_check, synthesize_state_feedback, DEFAULT_MARGIN};
use gammastab::{Error, Mat, Tolerance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{check_gamma, sim_config, to_rows, Project, ProjectConfig, Rows, SimulationSpec};
use crate::controller::{ControllerFile, VerifyReport};
use crate::error::CliError;

/// Parameter samples per agent for the regulator rank warning.
pub const RANK_SAMPLES: usize = 32;

pub fn load(input: Option<&Path>) -> Result<Project, CliError> {
    ProjectConfig::load(input)?.validate()
}

/// Index of the 1-based `--system` selector.
fn system_index(project: &Project, system: usize) -> Result<usize, CliError> {
    if system == 0 || system > project.systems.len() {
        return Err(CliError::input(format!(
            "--system {system}: the project has {} system(s), numbered from 1",
            project.systems.len()
        )));
    }
    Ok(system - 1)
}

/// `R` of the selected system: given explicitly, else `-X B_o C_zeta` from the
/// reference model, else no perturbation input.
pub fn perturbation(project: &Project, idx: usize) -> Result<Mat, CliError> {
    let s = &project.systems[idx];
    if let Some(r) = &s.r {
        return Ok(r.clone());
    }
    match (&project.pattern, &project.reference) {
        (Some((a_o, c_o)), Some(reference)) => {
            let m = &s.model;
            let (x, _) = solve_regulator_equations(&m.a, &m.b, &m.c, a_o, c_o, &project.tolerance)?;
            Ok(-(x * reference.drive()))
        }
        _ => Ok(Mat::zeros(s.model.n(), 0)),
    }
}

fn linear_system(project: &Project, idx: usize) -> Result<LinearSystem, CliError> {
    let m = &project.systems[idx].model;
    let r = perturbation(project, idx)?;
    Ok(LinearSystem::new(m.a.clone(), m.b.clone(), m.c.clone(), r)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalFormReport {
    pub system: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub ell: usize,
    pub l: usize,
    pub ranks: Vec<usize>,
    pub block_dims: Vec<usize>,
    pub singular_values: Vec<Vec<f64>>,
    pub assumptions: AssumptionReport,
}

impl NormalFormReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "system: {} (n = {}, m = {}, p = {}, ell = {})", self.system, self.n, self.m, self.p, self.ell);
        let _ = writeln!(s, "l = {}", self.l);
        let _ = writeln!(s, "ranks = {:?}", self.ranks);
        let _ = writeln!(s, "block dimensions = {:?}", self.block_dims);
        for (j, sv) in self.singular_values.iter().enumerate() {
            let _ = writeln!(s, "step {} singular values = {:?}", j + 1, sv);
        }
        let a = &self.assumptions;
        let _ = writeln!(s, "controllable: {}", a.controllable);
        let _ = writeln!(s, "level condition: {}", a.level_condition);
        let _ = write!(s, "detectable: {}", a.detectable);
        s
    }
}

pub fn cmd_normal_form(project: &Project, system: usize) -> Result<NormalFormReport, CliError> {
    let idx = system_index(project, system)?;
    let sys = linear_system(project, idx)?;
    let tol = &project.tolerance;
    let (chain, nf) = normal_form(&sys, tol)?;
    let assumptions = check_assumptions(&sys, chain.l(), tol)?;
    assumptions.require_normal_form()?;
    Ok(NormalFormReport {
        system: project.systems[idx].name.clone(),
        n: sys.n(),
        m: sys.m(),
        p: sys.p(),
        ell: sys.ell(),
        l: chain.l(),
        ranks: chain.ranks(),
        block_dims: nf.heights.clone(),
        singular_values: chain.steps.iter().map(|s| s.sigma.clone()).collect(),
        assumptions,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisReport {
    pub system: String,
    pub output_feedback: bool,
    pub gamma: f64,
    pub margin: f64,
    pub kappas: Vec<f64>,
    pub gain: f64,
    pub alpha: f64,
    pub beta: f64,
    pub escalations: u32,
    pub verification: VerifyReport,
    pub written: Option<PathBuf>,
}

impl SynthesisReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let kind = if self.output_feedback { "output feedback" } else { "state feedback" };
        let _ = writeln!(s, "system: {} ({kind})", self.system);
        let _ = writeln!(s, "gamma = {}, margin = {}", self.gamma, self.margin);
        let _ = writeln!(s, "kappas = {:?} ({} doubling(s))", self.kappas, self.escalations);
        let _ = writeln!(s, "certificate: alpha = {}, beta = {}, gain = {}", self.alpha, self.beta, self.gain);
        let v = &self.verification;
        let _ = write!(
            s,
            "re-verified: max eigenvalue {:.3e}, closed-loop abscissa {:.4}",
            v.max_eigenvalue, v.closed_loop_abscissa
        );
        if let Some(p) = &self.written {
            let _ = write!(s, "\ncontroller written to {}", p.display());
        }
        s
    }
}

pub fn cmd_synthesize(
    project: &Project,
    system: usize,
    gamma: Option<f64>,
    output_feedback: bool,
    margin: Option<f64>,
    output: Option<&Path>,
) -> Result<(SynthesisReport, ControllerFile), CliError> {
    let idx = system_index(project, system)?;
    let gamma = gamma.or(project.gamma).ok_or_else(|| CliError::input("--gamma is required"))?;
    check_gamma(gamma)?;
    let margin = margin.or(project.margin).unwrap_or(DEFAULT_MARGIN);
    if !(margin.is_finite() && margin > 0.0) {
        return Err(CliError::input(format!("--margin: must be positive, got {margin}")));
    }
    let tol = &project.tolerance;
    let (file, sf) = if output_feedback {
        let (Some((a_o, c_o)), Some(reference)) = (&project.pattern, &project.reference) else {
            return Err(CliError::input(
                "--output-feedback needs the internal model built from a pattern and a reference model",
            ));
        };
        let pattern = build_pattern_companion(a_o, c_o, tol)?;
        let opts = SyncOptions { gamma, margin, noise_weight: None, internal_model: None };
        let d = design_agent(&project.systems[idx].model, &pattern, reference, &opts, tol)?;
        (ControllerFile::output_feedback(&d.plant, &d.controller, &d.state_feedback, &d.certificate), d.state_feedback)
    } else {
        let sys = linear_system(project, idx)?;
        let (_, nf) = normal_form(&sys, tol)?;
        let sf = synthesize_state_feedback(&nf, gamma, margin, tol)?;
        (ControllerFile::state_feedback(&sys.a, &sys.b, &sys.c, &sys.r, &sf), sf)
    };
    let verification = file.verify(tol)?;
    if !verification.passed {
        return Err(CliError::Verification(verification.failures.join("; ")));
    }
    if let Some(path) = output {
        write_file(path, &file.to_json())?;
    }
    let cert = &sf.certificate;
    Ok((
        SynthesisReport {
            system: project.systems[idx].name.clone(),
            output_feedback,
            gamma,
            margin,
            kappas: sf.kappas.clone(),
            gain: cert.gain(),
            alpha: cert.alpha,
            beta: cert.beta,
            escalations: sf.escalations,
            verification,
            written: output.map(Path::to_path_buf),
        },
        file,
    ))
}

pub fn cmd_verify(controller: &Path, tol: &Tolerance) -> Result<VerifyReport, CliError> {
    let text = fs::read_to_string(controller)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", controller.display())))?;
    let file = ControllerFile::from_json(&text, &controller.display().to_string())?;
    let report = file.verify(tol)?;
    if report.passed {
        Ok(report)
    } else {
        Err(CliError::Verification(report.failures.join("; ")))
    }
}

pub fn render_verify(v: &VerifyReport) -> String {
    format!(
        "gamma = {}, certified gain = {}\nmax eigenvalue (normalized) = {:.3e}\nP smallest eigenvalue = {:.3e}\n\
         closed-loop abscissa = {:.4}\ncoordinate residuals = {:.3e} / {:.3e}\ncertificate {}",
        v.gamma,
        v.gain,
        v.max_eigenvalue,
        v.p_min_eigenvalue,
        v.closed_loop_abscissa,
        v.similarity_residual,
        v.congruence_residual,
        if v.passed { "holds" } else { "FAILS" }
    )
}

/// Network inputs shared by `sync`, `simulate` and `reproduce-example`.
pub struct NetworkInputs {
    pub gamma: f64,
    pub bound: f64,
    pub warnings: Vec<String>,
}

/// Structural checks, small-gain test and warnings, before any synthesis.
pub fn network_precheck(project: &Project, gamma: Option<f64>) -> Result<NetworkInputs, CliError> {
    let gamma = gamma.or(project.gamma).ok_or_else(|| CliError::input("--gamma is required"))?;
    check_gamma(gamma)?;
    let reference = project.reference.as_ref().ok_or_else(|| CliError::input("reference: required for sync"))?;
    let (a_o, c_o) = project.pattern.as_ref().ok_or_else(|| CliError::input("pattern: required for sync"))?;
    let adjacency = project.adjacency.as_ref().ok_or_else(|| CliError::input("graph: required for sync"))?;
    let agents = project.systems.len();
    let bound = small_gain_bound(reference.gamma_zeta, agents);
    if !small_gain_check(gamma, reference.gamma_zeta, agents) {
        return Err(Error::DesignRejection { gamma, bound }.into());
    }
    let tol = &project.tolerance;
    let pattern = build_pattern_companion(a_o, c_o, tol)?;
    let graph = Digraph::new(adjacency.clone())?;
    let mut warnings = Vec::new();
    if agents > 1 {
        let margin = consensus_margin(&pattern, reference, &graph)?;
        if margin >= 0.0 {
            warnings.push(format!(
                "reference-model disagreement dynamics are not Hurwitz (abscissa {margin:.4}); \
                 the unperturbed reference models do not reach consensus on this graph"
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(project.simulation.as_ref().map_or(0, |s| s.seed));
    for s in &project.systems {
        if s.model.ell() == 0 {
            continue;
        }
        for w in regulator_rank_warnings(&s.model, &pattern, &mut rng, RANK_SAMPLES, 1.0, tol)? {
            warnings.push(format!("{}: {w}", s.name));
        }
    }
    Ok(NetworkInputs { gamma, bound, warnings })
}

pub fn design_network(project: &Project, gamma: f64) -> Result<SyncNetwork, CliError> {
    let tol = &project.tolerance;
    let (a_o, c_o) = project.pattern.as_ref().ok_or_else(|| CliError::input("pattern: required for sync"))?;
    let reference = project.reference.clone().ok_or_else(|| CliError::input("reference: required for sync"))?;
    let adjacency = project.adjacency.clone().ok_or_else(|| CliError::input("graph: required for sync"))?;
    let agents = project.systems.iter().map(|s| s.model.clone()).collect();
    let opts = SyncOptions {
        gamma,
        margin: project.margin.unwrap_or(DEFAULT_MARGIN),
        noise_weight: None,
        internal_model: None,
    };
    Ok(build_network(agents, Digraph::new(adjacency)?, build_pattern_companion(a_o, c_o, tol)?, reference, &opts, tol)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentSummary {
    pub name: String,
    pub normal_form_steps: usize,
    pub kappas: Vec<f64>,
    pub certified_gain: f64,
    pub closed_loop_abscissa: f64,
    pub controller_states: usize,
    pub x: Rows,
    pub u: Rows,
    pub k: Rows,
    pub k_bar: Rows,
    pub l: Rows,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignBundle {
    pub gamma: f64,
    pub small_gain_bound: f64,
    pub agents: Vec<AgentSummary>,
    pub laplacian: Rows,
    pub warnings: Vec<String>,
}

pub fn design_bundle(project: &Project, net: &SyncNetwork, inputs: &NetworkInputs) -> DesignBundle {
    let agents = net
        .designs
        .iter()
        .zip(&net.controllers)
        .zip(&project.systems)
        .map(|((d, c), s)| AgentSummary {
            name: s.name.clone(),
            normal_form_steps: d.normal_form_steps,
            kappas: d.state_feedback.kappas.clone(),
            certified_gain: d.certificate.gain(),
            closed_loop_abscissa: d.certificate.closed_loop_abscissa,
            controller_states: c.state_dim(),
            x: to_rows(&d.x),
            u: to_rows(&d.u),
            k: to_rows(&d.state_feedback.k),
            k_bar: to_rows(&d.controller.k_bar),
            l: to_rows(&d.controller.l),
        })
        .collect();
    DesignBundle {
        gamma: inputs.gamma,
        small_gain_bound: inputs.bound,
        agents,
        laplacian: to_rows(&net.graph.laplacian),
        warnings: inputs.warnings.clone(),
    }
}

/// Metrics of one simulated run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub config_hash: String,
    pub dt: f64,
    pub horizon: f64,
    pub sync_error: f64,
    pub tail_amplitude: f64,
    /// Dominant frequency of every output channel, in rad/s.
    pub frequencies: Vec<Option<f64>>,
}

pub fn run_metrics(trace: &Trace, tol: &Tolerance) -> RunMetrics {
    let start = trace.tail_start(FREQUENCY_TAIL);
    let frequencies = (0..trace.outputs.ncols())
        .map(|col| dominant_frequency(&trace.output_column(col)[start..], trace.dt(), tol).ok())
        .collect();
    RunMetrics {
        seed: trace.seed,
        config_hash: trace.config_hash.clone(),
        dt: trace.dt(),
        horizon: trace.times.last().copied().unwrap_or(0.0),
        sync_error: sync_error(trace, SYNC_TAIL),
        tail_amplitude: trace.tail_amplitude(SYNC_TAIL),
        frequencies,
    }
}

pub fn render_metrics(m: &RunMetrics) -> String {
    let freqs: Vec<String> =
        m.frequencies.iter().map(|f| f.map_or_else(|| "none".to_string(), |w| format!("{w:.4}"))).collect();
    format!(
        "seed {}: tail disagreement {:.3e} (tail amplitude {:.3e}), frequencies [{}] rad/s, config {}",
        m.seed,
        m.sync_error,
        m.tail_amplitude,
        freqs.join(", "),
        &m.config_hash[..16.min(m.config_hash.len())]
    )
}

fn simulation_spec(project: &Project) -> SimulationSpec {
    project.simulation.clone().unwrap_or(SimulationSpec {
        dt: DEFAULT_DT,
        horizon: gammastab::benchmark::HORIZON,
        seed: 0,
        initial_scale: 1.0,
        record_states: false,
    })
}

/// Uncertain parameters used in simulations.
pub fn parameter_values(project: &Project) -> Vec<Vec<f64>> {
    project.systems.iter().map(|s| s.values.clone()).collect()
}

/// Runs the network from seeded initial states, one run per seed, in parallel.
pub fn simulate_seeds(
    project: &Project,
    net: &SyncNetwork,
    ws: &[Vec<f64>],
    seeds: &[u64],
) -> Result<Vec<(Trace, RunMetrics)>, CliError> {
    let spec = simulation_spec(project);
    let cfg = sim_config(&spec);
    let mut out = Vec::with_capacity(seeds.len());
    for trace in simulate_network_seeds(net, ws, seeds, &cfg, spec.initial_scale) {
        let trace = trace?;
        let metrics = run_metrics(&trace, &project.tolerance);
        out.push((trace, metrics));
    }
    Ok(out)
}

/// Single run from `random_state(dim, seed, scale)` without the parameter-box check.
pub fn simulate_unchecked(project: &Project, net: &SyncNetwork, ws: &[Vec<f64>]) -> Result<Trace, CliError> {
    let spec = simulation_spec(project);
    let cfg: SimConfig = sim_config(&spec);
    let (f, c) = net.closed_loop(ws)?;
    let x0 = random_state(net.state_dim(), spec.seed, spec.initial_scale);
    let mut trace = gammastab::sim::integrate(&f, &c, &x0, &cfg)?;
    trace.groups = net.output_ranges();
    Ok(trace)
}

pub fn default_seed(project: &Project) -> u64 {
    simulation_spec(project).seed
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(format!("cannot serialize: {e}")))?;
    write_file(path, &(text + "\n"))
}

/// `trace.csv` plus one two-column `y_<agent>_<channel>.dat` per output.
pub fn write_trace(dir: &Path, stem: &str, trace: &Trace, include_states: bool) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let csv = dir.join(format!("{stem}.csv"));
    let file = std::io::BufWriter::new(fs::File::create(&csv)?);
    trace.write_csv(file, include_states)?;
    written.push(csv);
    for (i, &(first, width)) in trace.groups.iter().enumerate() {
        for k in 0..width {
            let path = dir.join(format!("{stem}_y_{}_{}.dat", i + 1, k + 1));
            let mut text = format!("# t y_{}_{}\n", i + 1, k + 1);
            for (row, t) in trace.times.iter().enumerate() {
                let _ = writeln!(text, "{t} {}", trace.outputs[(row, first + k)]);
            }
            fs::write(&path, text)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn sim_record_states(project: &Project) -> bool {
    simulation_spec(project).record_states
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BUNDLED;

    fn bundled() -> Project {
        load(None).unwrap()
    }

    fn project(text: &str) -> Project {
        ProjectConfig::parse(text, "test").unwrap().validate().unwrap()
    }

    const SCALAR: &str = r#"{ "systems": [ { "a": [[0]], "b": [[1]], "c": [[1]], "r": [[1]] } ] }"#;

    #[test]
    fn bundled_normal_form() {
        let r = cmd_normal_form(&bundled(), 1).unwrap();
        assert_eq!((r.l, r.ranks.clone(), r.block_dims.clone()), (1, vec![2, 2], vec![2, 2]));
        assert!(r.assumptions.controllable && r.assumptions.level_condition && r.assumptions.detectable);
    }

    #[test]
    fn identity_input_needs_no_reduction() {
        let p = project(r#"{ "systems": [ { "a": [[1, 2], [3, 4]], "b": [[1, 0], [0, 1]], "c": [[1, 0]], "r": [[1], [0]] } ] }"#);
        let r = cmd_normal_form(&p, 1).unwrap();
        assert_eq!(r.l, 0);
        assert_eq!(r.block_dims, vec![2]);
    }

    #[test]
    fn uncontrollable_toy_exits_2() {
        let p = project(r#"{ "systems": [ { "a": [[1, 0], [0, 2]], "b": [[1], [0]], "c": [[1, 1]], "r": [[1], [1]] } ] }"#);
        let err = cmd_normal_form(&p, 1).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("controllab"), "{err}");
    }

    #[test]
    fn system_selector_is_checked() {
        assert_eq!(cmd_normal_form(&bundled(), 0).unwrap_err().exit_code(), 1);
        assert_eq!(cmd_normal_form(&bundled(), 5).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn default_perturbation_is_reference_drive() {
        let p = bundled();
        let r = perturbation(&p, 0).unwrap();
        let (x, _) = gammastab::benchmark::printed_regulator_solution();
        let expected = -(x * gammastab::benchmark::reference_model().drive());
        assert!((r - expected).amax() < 1e-12);
    }

    #[test]
    fn scalar_gain_follows_kappa_rule() {
        let p = project(SCALAR);
        let margin = 0.5;
        let (report, file) = cmd_synthesize(&p, 1, Some(1.0), false, Some(margin), None).unwrap();
        // 1/4 + |R|^2 + |C|^2 / (2 gamma) + margin
        let kappa = 0.25 + 1.0 + 0.5 + margin;
        assert!((report.kappas[0] - kappa).abs() < 1e-12);
        let ControllerFile::StateFeedback { k, .. } = file else { panic!("state feedback expected") };
        assert!((k[0][0] + kappa).abs() < 1e-12);
        assert!(report.gain <= 1.0);
    }

    #[test]
    fn benchmark_agent_gain_within_gamma() {
        let (report, _) = cmd_synthesize(&bundled(), 1, Some(1.5), false, None, None).unwrap();
        assert!(report.gain <= 1.5 && report.verification.passed);
        let (report, _) = cmd_synthesize(&bundled(), 2, Some(1.5), true, None, None).unwrap();
        assert!(report.gain <= 1.5 && report.verification.passed);
        assert!(report.verification.closed_loop_abscissa < 0.0);
    }

    #[test]
    fn nonpositive_gamma_is_an_input_error() {
        for g in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert_eq!(cmd_synthesize(&bundled(), 1, Some(g), false, None, None).unwrap_err().exit_code(), 1);
        }
        assert_eq!(network_precheck(&bundled(), Some(0.0)).err().unwrap().exit_code(), 1);
    }

    #[test]
    fn output_feedback_needs_internal_model() {
        let err = cmd_synthesize(&project(SCALAR), 1, Some(1.0), true, None, None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn controller_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (i, of) in [false, true].into_iter().enumerate() {
            let path = dir.path().join(format!("c{i}.json"));
            let (_, file) = cmd_synthesize(&bundled(), 1, Some(1.5), of, None, Some(&path)).unwrap();
            let text = fs::read_to_string(&path).unwrap();
            let back = ControllerFile::from_json(&text, "test").unwrap();
            assert_eq!(back, file);
            let bits = |f: &ControllerFile| -> Vec<u64> {
                serde_json::to_value(f).unwrap().to_string().bytes().map(u64::from).collect()
            };
            assert_eq!(bits(&back), bits(&file));
            let (a, b) = (back.closed_loop(&Tolerance::default()).unwrap(), file.closed_loop(&Tolerance::default()).unwrap());
            assert!(a.0.iter().zip(b.0.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(cmd_verify(&path, &Tolerance::default()).unwrap().passed);
        }
    }

    #[test]
    fn tampered_controller_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let (_, mut file) = cmd_synthesize(&bundled(), 1, Some(1.5), false, None, None).unwrap();
        if let ControllerFile::StateFeedback { k, .. } = &mut file {
            k[0][0] += 5.0;
        }
        write_file(&path, &file.to_json()).unwrap();
        let err = cmd_verify(&path, &Tolerance::default()).unwrap_err();
        assert_eq!(err.exit_code(), 3);

        let (_, mut file) = cmd_synthesize(&bundled(), 1, Some(1.5), false, None, None).unwrap();
        if let ControllerFile::StateFeedback { certificate, .. } = &mut file {
            certificate.beta *= 1e-3;
        }
        write_file(&path, &file.to_json()).unwrap();
        assert_eq!(cmd_verify(&path, &Tolerance::default()).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn malformed_controller_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        write_file(&path, "{\"kind\": \"state_feedback\"}").unwrap();
        assert_eq!(cmd_verify(&path, &Tolerance::default()).unwrap_err().exit_code(), 1);
        assert_eq!(cmd_verify(&dir.path().join("missing.json"), &Tolerance::default()).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn small_gain_rejection_reports_bound() {
        let err = network_precheck(&bundled(), Some(2.0)).err().unwrap();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("1.798"), "{err}");
        let ok = network_precheck(&bundled(), Some(1.5)).unwrap();
        assert!((ok.bound - 1.0 / (4.0 * 0.139)).abs() < 1e-12);
    }

    #[test]
    fn bundled_reference_triggers_consensus_warning() {
        let inputs = network_precheck(&bundled(), None).unwrap();
        assert!(inputs.warnings.iter().any(|w| w.contains("consensus")));
        assert!(!inputs.warnings.iter().any(|w| w.contains("rank condition")));
    }

    #[test]
    fn single_agent_network() {
        let mut cfg = ProjectConfig::parse(BUNDLED, "bundled").unwrap();
        cfg.systems.truncate(1);
        cfg.graph.as_mut().unwrap().adjacency = vec![vec![0.0]];
        let p = cfg.validate().unwrap();
        let inputs = network_precheck(&p, Some(5.0)).unwrap();
        assert!(inputs.warnings.is_empty());
        let net = design_network(&p, inputs.gamma).unwrap();
        assert_eq!(net.designs.len(), 1);
    }

    #[test]
    fn trace_files_are_two_column() {
        let p = bundled();
        let net = design_network(&p, 1.5).unwrap();
        let mut short = p.clone();
        short.simulation = Some(SimulationSpec { dt: 1e-3, horizon: 0.05, seed: 9, initial_scale: 1.0, record_states: false });
        let runs = simulate_seeds(&short, &net, &parameter_values(&short), &[9]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_trace(dir.path(), "trace", &runs[0].0, false).unwrap();
        assert_eq!(files.len(), 1 + 8);
        let dat = fs::read_to_string(&files[1]).unwrap();
        let lines: Vec<&str> = dat.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines.len(), 1 + runs[0].0.len());
        assert!(lines[1..].iter().all(|l| l.split_whitespace().count() == 2));
        let csv = fs::read_to_string(&files[0]).unwrap();
        assert!(csv.starts_with("t,y_1_1,y_1_2,y_2_1"));
    }

    #[test]
    fn parallel_runs_match_single_runs() {
        let mut p = bundled();
        p.simulation = Some(SimulationSpec { dt: 1e-3, horizon: 0.2, seed: 3, initial_scale: 1.0, record_states: false });
        let net = design_network(&p, 1.5).unwrap();
        let ws = parameter_values(&p);
        let many = simulate_seeds(&p, &net, &ws, &[3, 4, 5]).unwrap();
        for (trace, metrics) in &many {
            let single = simulate_seeds(&p, &net, &ws, &[metrics.seed]).unwrap();
            assert_eq!(single[0].0.outputs, trace.outputs);
            assert_eq!(single[0].1.config_hash, metrics.config_hash);
        }
        assert_ne!(many[0].1.config_hash, many[1].1.config_hash);
    }
}
