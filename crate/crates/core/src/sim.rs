//! Fixed-step simulation of linear closed loops and trajectory metrics.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, is_hurwitz, spectral_abscissa, Mat, Tolerance, Vector};
use crate::sync::SyncNetwork;
use crate::synthesis::{small_gain_bound, small_gain_check};

pub const DEFAULT_DT: f64 = 1e-3;
/// Metrics window for synchronization error.
pub const SYNC_TAIL: f64 = 0.25;
/// Metrics window for frequency estimation.
pub const FREQUENCY_TAIL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default)]
    pub record_states: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> Self {
        SimConfig { dt, horizon, seed, record_states: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 10.0 * self.dt) {
            return Err(Error::InvalidInput(format!(
                "horizon {} must be at least 10 steps of {}",
                self.horizon, self.dt
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Sampled trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    /// One row per sample.
    pub outputs: Mat,
    pub states: Option<Mat>,
    /// `(first column, width)` of each agent's output.
    pub groups: Vec<(usize, usize)>,
    pub final_state: Vector,
    pub seed: u64,
    pub config_hash: String,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }

    /// First sample index of the trailing `fraction` of the horizon.
    pub fn tail_start(&self, fraction: f64) -> usize {
        let n = self.len();
        let skip = ((1.0 - fraction.clamp(0.0, 1.0)) * (n.saturating_sub(1)) as f64).floor() as usize;
        skip.min(n.saturating_sub(1))
    }

    pub fn output_column(&self, col: usize) -> Vec<f64> {
        self.outputs.column(col).iter().copied().collect()
    }

    /// Largest output norm of any agent over the tail.
    pub fn tail_amplitude(&self, fraction: f64) -> f64 {
        let mut amp: f64 = 0.0;
        for k in self.tail_start(fraction)..self.len() {
            for &(c0, w) in &self.groups {
                amp = amp.max(self.outputs.view((k, c0), (1, w)).norm());
            }
        }
        amp
    }

    /// CSV with header `t, y_1_1, ...` and optional state columns.
    pub fn write_csv<W: Write>(&self, mut out: W, include_states: bool) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        for (i, &(_, w)) in self.groups.iter().enumerate() {
            for k in 0..w {
                header.push(format!("y_{}_{}", i + 1, k + 1));
            }
        }
        let states = if include_states { self.states.as_ref() } else { None };
        if let Some(s) = states {
            for k in 0..s.ncols() {
                header.push(format!("x_{}", k + 1));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{t}")?;
            for v in self.outputs.row(k).iter() {
                write!(out, ",{v}")?;
            }
            if let Some(s) = states {
                for v in s.row(k).iter() {
                    write!(out, ",{v}")?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn hash_run(cfg: &SimConfig, a: &Mat, c: &Mat, x0: &Vector) -> String {
    let mut h = Sha256::new();
    h.update(cfg.dt.to_le_bytes());
    h.update(cfg.horizon.to_le_bytes());
    h.update(cfg.seed.to_le_bytes());
    for m in [a, c] {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
    }
    for v in x0.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn infinity_norm(a: &Mat) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Number of halvings of `dt` so that `h ||A||_inf <= 1`.
fn substep_exponent(a: &Mat, dt: f64) -> u32 {
    let norm = infinity_norm(a);
    if norm * dt <= 1.0 {
        0
    } else {
        (norm * dt).log2().ceil().max(0.0) as u32
    }
}

/// One classical RK4 step of `x' = A x` as a matrix.
fn rk4_step_matrix(a: &Mat, h: f64) -> Mat {
    let n = a.nrows();
    let eye = Mat::identity(n, n);
    let ha = a * h;
    let inner = &eye + &ha * 0.25;
    let inner = &eye + &ha * (1.0 / 3.0) * inner;
    let inner = &eye + &ha * 0.5 * inner;
    &eye + ha * inner
}

/// RK4 map over one `dt`, substepped for stiffness.
pub fn rk4_propagator(a: &Mat, dt: f64) -> Mat {
    let k = substep_exponent(a, dt);
    let mut p = rk4_step_matrix(a, dt / 2f64.powi(k as i32));
    for _ in 0..k {
        p = &p * &p;
    }
    p
}

/// Integrates `x' = A x`, `y = C x` from `x0`.
pub fn integrate(a: &Mat, c: &Mat, x0: &Vector, cfg: &SimConfig) -> Result<Trace> {
    integrate_forced(a, &Mat::zeros(a.nrows(), 0), c, x0, |_| Vector::zeros(0), cfg)
}

/// Integrates `x' = A x + R u(t)`, `y = C x` with RK4.
pub fn integrate_forced<F>(a: &Mat, r: &Mat, c: &Mat, x0: &Vector, input: F, cfg: &SimConfig) -> Result<Trace>
where
    F: Fn(f64) -> Vector,
{
    cfg.validate()?;
    let n = a.nrows();
    if !a.is_square() || r.nrows() != n || c.ncols() != n || x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "simulation operands A {:?}, R {:?}, C {:?}, x0 {}",
            a.shape(),
            r.shape(),
            c.shape(),
            x0.len()
        )));
    }
    ensure_finite(a, "A")?;
    ensure_finite(r, "R")?;
    ensure_finite(c, "C")?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial state must be finite".into()));
    }
    let steps = cfg.steps();
    let p = c.nrows();
    let mut times = Vec::with_capacity(steps + 1);
    let mut outputs = Mat::zeros(steps + 1, p);
    let mut states = cfg.record_states.then(|| Mat::zeros(steps + 1, n));
    let mut x = x0.clone();
    let record = |k: usize, x: &Vector, outputs: &mut Mat, states: &mut Option<Mat>| {
        outputs.row_mut(k).copy_from(&(c * x).transpose());
        if let Some(s) = states.as_mut() {
            s.row_mut(k).copy_from(&x.transpose());
        }
    };
    times.push(0.0);
    record(0, &x, &mut outputs, &mut states);

    let forced = r.ncols() > 0;
    let exponent = substep_exponent(a, cfg.dt);
    let substeps = 1usize << exponent;
    let h = cfg.dt / substeps as f64;
    let propagator = (!forced).then(|| rk4_propagator(a, cfg.dt));
    for k in 1..=steps {
        let t0 = (k - 1) as f64 * cfg.dt;
        match &propagator {
            Some(pm) => x = pm * &x,
            None => {
                for j in 0..substeps {
                    let t = t0 + j as f64 * h;
                    let f = |t: f64, x: &Vector| -> Result<Vector> {
                        let u = input(t);
                        if u.len() != r.ncols() {
                            return Err(Error::DimensionMismatch(format!(
                                "input signal has {} entries, expected {}",
                                u.len(),
                                r.ncols()
                            )));
                        }
                        Ok(a * x + r * u)
                    };
                    let k1 = f(t, &x)?;
                    let k2 = f(t + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
                    let k3 = f(t + 0.5 * h, &(&x + &k2 * (0.5 * h)))?;
                    let k4 = f(t + h, &(&x + &k3 * h))?;
                    x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                }
            }
        }
        let t = k as f64 * cfg.dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t });
        }
        times.push(t);
        record(k, &x, &mut outputs, &mut states);
    }
    Ok(Trace {
        times,
        outputs,
        states,
        groups: vec![(0, p)],
        final_state: x,
        seed: cfg.seed,
        config_hash: hash_run(cfg, a, c, x0),
    })
}

/// Standard normal vector scaled by `scale`, from a seeded stream.
pub fn random_state(dim: usize, seed: u64, scale: f64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Vector::from_fn(dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    })
}

/// Simulates the synchronization network at agent parameters `ws`.
pub fn simulate_network(net: &SyncNetwork, ws: &[Vec<f64>], x0: &Vector, cfg: &SimConfig) -> Result<Trace> {
    for (i, (agent, w)) in net.agents.iter().zip(ws).enumerate() {
        if !agent.in_box(w) {
            return Err(Error::InvalidInput(format!("parameters of agent {} are outside the uncertainty box", i + 1)));
        }
    }
    let (f, c) = net.closed_loop(ws)?;
    let mut trace = integrate(&f, &c, x0, cfg)?;
    trace.groups = net.output_ranges();
    Ok(trace)
}

/// One run per seed, each on its own scoped thread, starting from
/// `random_state(dim, seed, scale)`. Results are returned in seed order.
pub fn simulate_network_seeds(net: &SyncNetwork, ws: &[Vec<f64>], seeds: &[u64], cfg: &SimConfig, scale: f64) -> Vec<Result<Trace>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let run = SimConfig { seed, ..cfg.clone() };
                    let x0 = random_state(net.state_dim(), seed, scale);
                    simulate_network(net, ws, &x0, &run)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::NumericalFailure("simulation thread panicked".into()))))
            .collect()
    })
}

/// Largest pairwise output distance over the trailing `tail_fraction`.
pub fn sync_error(trace: &Trace, tail_fraction: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in trace.tail_start(tail_fraction)..trace.len() {
        for (a, &(ca, wa)) in trace.groups.iter().enumerate() {
            for &(cb, wb) in &trace.groups[a + 1..] {
                if wa != wb {
                    continue;
                }
                let d = trace.outputs.view((k, ca), (1, wa)) - trace.outputs.view((k, cb), (1, wb));
                worst = worst.max(d.norm());
            }
        }
    }
    worst
}

/// Residual sum of squares of the best `a sin(wt) + b cos(wt) + c` fit.
fn sinusoid_residual(signal: &[f64], times: &[f64], omega: f64) -> f64 {
    let mut g = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    let mut yy = 0.0;
    for (&y, &t) in signal.iter().zip(times) {
        let (s, c) = (omega * t).sin_cos();
        let phi = Vector3::new(s, c, 1.0);
        g += phi * phi.transpose();
        rhs += phi * y;
        yy += y * y;
    }
    match g.cholesky() {
        Some(ch) => {
            let coef = ch.solve(&rhs);
            (yy - coef.dot(&rhs)).max(0.0)
        }
        None => yy,
    }
}

/// Frequency (rad/s) of the best single-sinusoid least-squares fit.
pub fn dominant_frequency(signal: &[f64], dt: f64, tol: &Tolerance) -> Result<f64> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if signal.len() < 8 {
        return Err(Error::InvalidInput("signal is too short for frequency estimation".into()));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("signal must be finite".into()));
    }
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let variance = signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if variance < tol.eq_tol {
        return Err(Error::NoFrequency(format!("signal variance {variance:.3e} is below {}", tol.eq_tol)));
    }
    let centered: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    let mid = 0.5 * (n - 1) as f64 * dt;
    let times: Vec<f64> = (0..n).map(|k| k as f64 * dt - mid).collect();
    let span = (n - 1) as f64 * dt;

    let stride = n.div_ceil(2048).max(1);
    let coarse_y: Vec<f64> = centered.iter().step_by(stride).copied().collect();
    let coarse_t: Vec<f64> = times.iter().step_by(stride).copied().collect();
    let spacing = std::f64::consts::PI / (4.0 * span);
    let nyquist = std::f64::consts::PI / (stride as f64 * dt);
    let mut best = (f64::INFINITY, spacing);
    let mut omega = spacing;
    while omega < nyquist {
        let r = sinusoid_residual(&coarse_y, &coarse_t, omega);
        if r < best.0 {
            best = (r, omega);
        }
        omega += spacing;
    }

    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = ((best.1 - spacing).max(0.25 * spacing), best.1 + spacing);
    let mut x1 = hi - golden * (hi - lo);
    let mut x2 = lo + golden * (hi - lo);
    let mut f1 = sinusoid_residual(&centered, &times, x1);
    let mut f2 = sinusoid_residual(&centered, &times, x2);
    while hi - lo > 1e-10 * hi.max(1.0) {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - golden * (hi - lo);
            f1 = sinusoid_residual(&centered, &times, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + golden * (hi - lo);
            f2 = sinusoid_residual(&centered, &times, x2);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bounded perturbation signal used to probe an input-output gain.
#[derive(Debug, Clone, PartialEq)]
pub enum Excitation {
    Step(Vector),
    Sine { amplitude: Vector, omega: f64 },
    Pulse { amplitude: Vector, duration: f64 },
}

impl Excitation {
    pub fn dim(&self) -> usize {
        match self {
            Excitation::Step(v) => v.len(),
            Excitation::Sine { amplitude, .. } | Excitation::Pulse { amplitude, .. } => amplitude.len(),
        }
    }

    pub fn value(&self, t: f64) -> Vector {
        match self {
            Excitation::Step(v) => v.clone(),
            Excitation::Sine { amplitude, omega } => amplitude * (omega * t).sin(),
            Excitation::Pulse { amplitude, duration } => {
                if t < *duration {
                    amplitude.clone()
                } else {
                    Vector::zeros(amplitude.len())
                }
            }
        }
    }
}

/// Steps on each channel and on all channels, a unit pulse and sines at
/// 0.1, 1 and 10 rad/s.
pub fn standard_excitations(dim: usize) -> Vec<Excitation> {
    let ones = Vector::from_element(dim, 1.0);
    let mut out: Vec<Excitation> = (0..dim)
        .map(|k| {
            let mut v = Vector::zeros(dim);
            v[k] = 1.0;
            Excitation::Step(v)
        })
        .collect();
    if dim > 1 {
        out.push(Excitation::Step(ones.clone()));
    }
    out.push(Excitation::Pulse { amplitude: ones.clone(), duration: 1.0 });
    for omega in [0.1, 1.0, 10.0] {
        out.push(Excitation::Sine { amplitude: ones.clone(), omega });
    }
    out
}

/// Largest ratio of output energy to perturbation energy from zero initial
/// state over the given excitations.
///
/// Perturbations are held constant over each step of length `dt`; state,
/// output energy and input energy are then exact for the applied
/// piecewise-constant signal.
pub fn empirical_gain_estimate(
    ac: &Mat,
    rc: &Mat,
    cc: &Mat,
    excitations: &[Excitation],
    horizon: f64,
    dt: f64,
) -> Result<f64> {
    let n = ac.nrows();
    if !ac.is_square() || rc.nrows() != n || cc.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "gain estimate operands A {:?}, R {:?}, C {:?}",
            ac.shape(),
            rc.shape(),
            cc.shape()
        )));
    }
    SimConfig::new(dt, horizon, 0).validate()?;
    ensure_finite(ac, "A_c")?;
    ensure_finite(rc, "R_c")?;
    ensure_finite(cc, "C_c")?;
    if !is_hurwitz(ac, 0.0)? {
        return Err(Error::InvalidInput("closed-loop matrix is not Hurwitz".into()));
    }
    let q = rc.ncols();
    if excitations.iter().any(|e| e.dim() != q) {
        return Err(Error::DimensionMismatch(format!("excitations must have {q} channels")));
    }
    if rc.norm() == 0.0 || cc.norm() == 0.0 {
        return Ok(0.0);
    }
    let d = n + q;
    let mut aug = Mat::zeros(d, d);
    aug.view_mut((0, 0), (n, n)).copy_from(ac);
    aug.view_mut((0, n), (n, q)).copy_from(rc);
    let mut c_aug = Mat::zeros(cc.nrows(), d);
    c_aug.view_mut((0, 0), (cc.nrows(), n)).copy_from(cc);

    let halvings = {
        let norm = infinity_norm(&aug);
        if norm * dt <= 1.0 {
            0
        } else {
            (norm * dt).log2().ceil() as i32
        }
    };
    let h0 = dt / 2f64.powi(halvings);
    // Van Loan: exp([[-A', C'C], [0, A]] h0) gives exp(A h0) and the output
    // Gramian over one short step; doubling then reaches dt without forming
    // exp(-A' dt).
    let mut vl = Mat::zeros(2 * d, 2 * d);
    vl.view_mut((0, 0), (d, d)).copy_from(&(-aug.transpose() * h0));
    vl.view_mut((0, d), (d, d)).copy_from(&(c_aug.transpose() * &c_aug * h0));
    vl.view_mut((d, d), (d, d)).copy_from(&(&aug * h0));
    let e = vl.exp();
    let mut f22 = e.view((d, d), (d, d)).into_owned();
    let mut w = f22.transpose() * e.view((0, d), (d, d));
    for _ in 0..halvings {
        w = &w + f22.transpose() * &w * &f22;
        f22 = &f22 * &f22;
    }
    let w = (&w + w.transpose()) * 0.5;
    ensure_finite(&w, "step Gramian")?;
    let phi = f22.view((0, 0), (n, n)).into_owned();
    let gam = f22.view((0, n), (n, q)).into_owned();
    let h = dt;

    let steps = (horizon / h).round() as usize;
    let mut best: f64 = 0.0;
    for exc in excitations {
        let mut x = Vector::zeros(n);
        let mut z = Vector::zeros(d);
        let (mut ey, mut eu) = (0.0, 0.0);
        for k in 0..steps {
            let u = exc.value((k as f64 + 0.5) * h);
            z.rows_mut(0, n).copy_from(&x);
            z.rows_mut(n, q).copy_from(&u);
            ey += z.dot(&(&w * &z));
            eu += u.norm_squared() * h;
            x = &phi * &x + &gam * &u;
        }
        if !ey.is_finite() {
            return Err(Error::Divergence { time: horizon });
        }
        if eu > 0.0 {
            best = best.max(ey.max(0.0) / eu);
        }
    }
    Ok(best)
}

/// Closed-loop triple `x' = A x + R zeta`, `y = C x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    pub a: Mat,
    pub r: Mat,
    pub c: Mat,
}

impl ClosedLoop {
    pub fn new(a: Mat, r: Mat, c: Mat) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || r.nrows() != n || c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "closed loop A {:?}, R {:?}, C {:?}",
                a.shape(),
                r.shape(),
                c.shape()
            )));
        }
        Ok(ClosedLoop { a, r, c })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// Decay of the loop between `N` gamma-stabilized systems and a common
/// second subsystem.
#[derive(Debug, Clone)]
pub struct InterconnectionReport {
    pub trace: Trace,
    /// `||zeta(T)|| / ||zeta(0)||`.
    pub zeta_ratio: f64,
    /// `||y(T)|| / ||y(0)||`.
    pub y_ratio: f64,
    pub decayed: bool,
    pub abscissa: f64,
}

/// Matrix of the interconnection with state `(x_c1, ..., x_cN, tau)`; the
/// first outputs are `y = col(y_i)`, the last are `zeta`.
pub fn interconnection_matrix(sigma1: &[ClosedLoop], sigma2: &ClosedLoop) -> Result<(Mat, Mat)> {
    let ell = sigma2.c.nrows();
    let p: usize = sigma1.iter().map(|s| s.c.nrows()).sum();
    if sigma2.r.ncols() != p {
        return Err(Error::DimensionMismatch(format!("second subsystem takes {} inputs, agents emit {p}", sigma2.r.ncols())));
    }
    if let Some(bad) = sigma1.iter().position(|s| s.r.ncols() != ell) {
        return Err(Error::DimensionMismatch(format!(
            "agent {} takes {} perturbation channels, second subsystem emits {ell}",
            bad + 1,
            sigma1[bad].r.ncols()
        )));
    }
    let nx: usize = sigma1.iter().map(ClosedLoop::n).sum();
    let nt = sigma2.n();
    let dim = nx + nt;
    let mut f = Mat::zeros(dim, dim);
    let mut out = Mat::zeros(p + ell, dim);
    let (mut off, mut row) = (0, 0);
    for s in sigma1 {
        let n = s.n();
        let pi = s.c.nrows();
        f.view_mut((off, off), (n, n)).copy_from(&s.a);
        f.view_mut((off, nx), (n, nt)).copy_from(&(&s.r * &sigma2.c));
        f.view_mut((nx, off), (nt, n)).copy_from(&(sigma2.r.columns(row, pi) * &s.c));
        out.view_mut((row, off), (pi, n)).copy_from(&s.c);
        off += n;
        row += pi;
    }
    f.view_mut((nx, nx), (nt, nt)).copy_from(&sigma2.a);
    out.view_mut((p, nx), (ell, nt)).copy_from(&sigma2.c);
    Ok((f, out))
}

/// Simulates the interconnection after checking `gamma < 1 / (N gamma_zeta)`.
pub fn interconnection_sim(
    sigma1: &[ClosedLoop],
    gamma: f64,
    sigma2: &ClosedLoop,
    gamma_zeta: f64,
    x0: &Vector,
    cfg: &SimConfig,
) -> Result<InterconnectionReport> {
    if !small_gain_check(gamma, gamma_zeta, sigma1.len()) {
        return Err(Error::DesignRejection { gamma, bound: small_gain_bound(gamma_zeta, sigma1.len()) });
    }
    let (f, out) = interconnection_matrix(sigma1, sigma2)?;
    let abscissa = spectral_abscissa(&f)?;
    let mut trace = integrate(&f, &out, x0, cfg)?;
    let p: usize = sigma1.iter().map(|s| s.c.nrows()).sum();
    let ell = sigma2.c.nrows();
    let mut groups = Vec::new();
    let mut row = 0;
    for s in sigma1 {
        groups.push((row, s.c.nrows()));
        row += s.c.nrows();
    }
    trace.groups = groups;
    let last = trace.len() - 1;
    let ratio = |c0: usize, w: usize| {
        let start = trace.outputs.view((0, c0), (1, w)).norm();
        let end = trace.outputs.view((last, c0), (1, w)).norm();
        if start > 0.0 {
            end / start
        } else if end == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let zeta_ratio = ratio(p, ell);
    let y_ratio = ratio(0, p);
    Ok(InterconnectionReport { decayed: zeta_ratio <= 1e-3 && y_ratio <= 1e-3, zeta_ratio, y_ratio, abscissa, trace })
}

/// Horizon over which the slowest mode of `a` decays by `factor`.
pub fn decay_horizon(a: &Mat, factor: f64) -> Result<f64> {
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= 0.0 {
        return Err(Error::InvalidInput("matrix is not Hurwitz".into()));
    }
    Ok(factor.recip().ln() / -abscissa)
}
