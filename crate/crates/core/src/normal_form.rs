//! Recursive SVD reduction to block lower-triangular normal form.

use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result};
use crate::linalg::{
    ensure_finite, numeric_rank, pbh_controllable, pbh_detectable, rank_of_values, spectral_norm, svd_full, Mat,
    Tolerance,
};

/// `x' = A x + B u + R zeta`, `y = C x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub r: Mat,
}

impl LinearSystem {
    pub fn new(a: Mat, b: Mat, c: Mat, r: Mat) -> Result<Self> {
        let sys = LinearSystem { a, b, c, r };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::DimensionMismatch(format!("A must be square, got {}x{}", n, self.a.ncols())));
        }
        if self.b.nrows() != n {
            return Err(Error::DimensionMismatch(format!("B must have {n} rows, got {}", self.b.nrows())));
        }
        if self.c.ncols() != n {
            return Err(Error::DimensionMismatch(format!("C must have {n} columns, got {}", self.c.ncols())));
        }
        if self.r.nrows() != n {
            return Err(Error::DimensionMismatch(format!("R must have {n} rows, got {}", self.r.nrows())));
        }
        for (m, name) in [(&self.a, "A"), (&self.b, "B"), (&self.c, "C"), (&self.r, "R")] {
            ensure_finite(m, name)?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    pub fn ell(&self) -> usize {
        self.r.ncols()
    }
}

/// One reduction step: the SVD of `Gamma_j = U [Sigma 0; 0 0] H^T`.
#[derive(Debug, Clone)]
pub struct SvdStep {
    /// Leading `r_j` left singular vectors.
    pub u_tilde: Mat,
    /// Orthogonal complement of `u_tilde`.
    pub u_bar: Mat,
    pub sigma: Vec<f64>,
    pub h: Mat,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct SvdChain {
    /// `Phi_0 = A, ..., Phi_l`.
    pub phis: Vec<Mat>,
    /// `Gamma_0 = B, ..., Gamma_l`; the last one has full row rank.
    pub gammas: Vec<Mat>,
    /// SVDs of `Gamma_0 .. Gamma_{l-1}`.
    pub steps: Vec<SvdStep>,
}

impl SvdChain {
    pub fn l(&self) -> usize {
        self.steps.len()
    }

    /// `r_0, ..., r_l` (the last entry is the row count of `Gamma_l`).
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.steps.iter().map(|s| s.rank).collect();
        r.push(self.gammas.last().map_or(0, |g| g.nrows()));
        r
    }
}

fn is_numerically_zero(m: &Mat, reference: f64, tol: &Tolerance) -> bool {
    spectral_norm(m) <= tol.rank_tol * reference.max(f64::MIN_POSITIVE)
}

/// Runs the SVD recursion on `(A, B)` until `Gamma_j` has full row rank.
pub fn svd_reduction_chain(a: &Mat, b: &Mat, tol: &Tolerance) -> Result<SvdChain> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "A must be square and B must have {n} rows (A is {}x{}, B is {}x{})",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    ensure_finite(a, "A")?;
    ensure_finite(b, "B")?;
    let reference = spectral_norm(a).max(spectral_norm(b));
    if b.ncols() == 0 || is_numerically_zero(b, reference, tol) {
        return Err(Error::violation(Assumption::Controllability, "B is zero"));
    }
    if !pbh_controllable(a, b, tol)? {
        return Err(Error::violation(Assumption::Controllability, "PBH rank test fails"));
    }

    let mut phis = vec![a.clone()];
    let mut gammas = vec![b.clone()];
    let mut steps = Vec::new();
    loop {
        let j = steps.len();
        let phi = &phis[j];
        let gamma = &gammas[j];
        if j > n {
            return Err(Error::NumericalFailure("SVD reduction did not terminate".into()));
        }
        if is_numerically_zero(gamma, reference, tol) {
            return Err(Error::violation(
                Assumption::Controllability,
                format!("Gamma_{j} vanished during the reduction (numerical rank misjudged)"),
            ));
        }
        let svd = svd_full(gamma)?;
        let rank = rank_of_values(&svd.singular_values, tol.rank_tol, None);
        let rows = gamma.nrows();
        if rank == rows {
            break;
        }
        let u_tilde = svd.u.columns(0, rank).into_owned();
        let u_bar = svd.u.columns(rank, rows - rank).into_owned();
        let next_phi = u_bar.transpose() * phi * &u_bar;
        let next_gamma = u_bar.transpose() * phi * &u_tilde;
        steps.push(SvdStep {
            u_tilde,
            u_bar,
            sigma: svd.singular_values[..rank].to_vec(),
            h: svd.h,
            rank,
        });
        phis.push(next_phi);
        gammas.push(next_gamma);
    }
    Ok(SvdChain { phis, gammas, steps })
}

/// Row blocks `T_1, ..., T_{l+1}` of the orthogonal transform.
pub fn build_t(chain: &SvdChain) -> Vec<Mat> {
    let n = chain.phis[0].nrows();
    let l = chain.l();
    // prefix[j] = Ubar_j^T ... Ubar_1^T, prefix[0] = I
    let mut prefix = vec![Mat::identity(n, n)];
    for step in &chain.steps {
        let next = step.u_bar.transpose() * prefix.last().unwrap();
        prefix.push(next);
    }
    let mut blocks = vec![prefix[l].clone()];
    for k in 2..=l + 1 {
        let step = &chain.steps[l + 1 - k];
        blocks.push(step.u_tilde.transpose() * &prefix[l + 1 - k]);
    }
    blocks
}

pub fn stack_rows(blocks: &[Mat]) -> Mat {
    let refs: Vec<&Mat> = blocks.iter().collect();
    crate::linalg::vstack(&refs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub controllable: bool,
    pub level_condition: bool,
    pub detectable: bool,
}

impl AssumptionReport {
    /// First failed hypothesis needed for the normal form.
    pub fn require_normal_form(&self) -> Result<()> {
        if !self.controllable {
            return Err(Error::violation(Assumption::Controllability, "PBH rank test fails"));
        }
        if !self.level_condition {
            return Err(Error::violation(Assumption::LevelCondition, "C A^(j-1) B is nonzero"));
        }
        Ok(())
    }
}

/// `|C A^(j-1) B| <= 1e-10 |C| |A|^(j-1) |B|` for `j = 1..l` (Frobenius norms).
pub fn level_condition(sys: &LinearSystem, l: usize) -> bool {
    let (na, nb, nc) = (sys.a.norm(), sys.b.norm(), sys.c.norm());
    let mut prod = sys.b.clone();
    for j in 1..=l {
        let scale = nc * na.powi(j as i32 - 1) * nb;
        if (&sys.c * &prod).norm() > 1e-10 * scale {
            return false;
        }
        prod = &sys.a * prod;
    }
    true
}

pub fn check_assumptions(sys: &LinearSystem, l: usize, tol: &Tolerance) -> Result<AssumptionReport> {
    sys.validate()?;
    Ok(AssumptionReport {
        controllable: pbh_controllable(&sys.a, &sys.b, tol)?,
        level_condition: level_condition(sys, l),
        detectable: pbh_detectable(&sys.a, &sys.c, tol)?,
    })
}

/// Block lower-triangular coordinates `xi = T x`.
///
/// Block `j` (1-based in the math, 0-based here) evolves as
/// `xi_j' = sum_{k<j} D_{j,k} xi_k + A_j xi_j + B_j xi_{j+1} + R_j zeta`,
/// the last block receives `B_{l+1} u` and `y = C_xi xi_1`.
#[derive(Debug, Clone)]
pub struct NormalForm {
    pub t: Mat,
    pub heights: Vec<usize>,
    pub a_blocks: Vec<Mat>,
    pub b_blocks: Vec<Mat>,
    pub r_blocks: Vec<Mat>,
    /// `d_blocks[j][k]` for `k < j`.
    pub d_blocks: Vec<Vec<Mat>>,
    pub c_xi: Mat,
}

impl NormalForm {
    pub fn l(&self) -> usize {
        self.heights.len() - 1
    }

    pub fn n(&self) -> usize {
        self.t.nrows()
    }

    pub fn m(&self) -> usize {
        self.b_blocks.last().map_or(0, |b| b.ncols())
    }

    pub fn ell(&self) -> usize {
        self.r_blocks.first().map_or(0, |r| r.ncols())
    }

    /// Row offsets of each block; has `l + 2` entries.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for h in &self.heights {
            off.push(off.last().unwrap() + h);
        }
        off
    }

    pub fn t_block(&self, j: usize) -> Mat {
        let off = self.offsets();
        self.t.rows(off[j], self.heights[j]).into_owned()
    }

    /// `T A T^T` rebuilt from the blocks.
    pub fn assembled_a(&self) -> Mat {
        let off = self.offsets();
        let n = self.n();
        let mut out = Mat::zeros(n, n);
        let last = self.heights.len() - 1;
        for j in 0..=last {
            out.view_mut((off[j], off[j]), (self.heights[j], self.heights[j])).copy_from(&self.a_blocks[j]);
            if j < last {
                out.view_mut((off[j], off[j + 1]), (self.heights[j], self.heights[j + 1]))
                    .copy_from(&self.b_blocks[j]);
            }
            for k in 0..j {
                out.view_mut((off[j], off[k]), (self.heights[j], self.heights[k])).copy_from(&self.d_blocks[j][k]);
            }
        }
        out
    }

    /// `T B`: zero except for the last block.
    pub fn assembled_b(&self) -> Mat {
        let n = self.n();
        let mut out = Mat::zeros(n, self.m());
        let off = self.offsets();
        let last = self.heights.len() - 1;
        out.view_mut((off[last], 0), (self.heights[last], self.m())).copy_from(&self.b_blocks[last]);
        out
    }

    pub fn assembled_r(&self) -> Mat {
        stack_rows(&self.r_blocks)
    }

    /// `C T^T = [C_xi 0 ... 0]`.
    pub fn assembled_c(&self) -> Mat {
        let mut out = Mat::zeros(self.c_xi.nrows(), self.n());
        out.view_mut((0, 0), self.c_xi.shape()).copy_from(&self.c_xi);
        out
    }
}

/// Builds the normal form from a reduction chain of `(sys.a, sys.b)`.
pub fn to_normal_form(sys: &LinearSystem, chain: &SvdChain) -> Result<NormalForm> {
    sys.validate()?;
    let l = chain.l();
    if !level_condition(sys, l) {
        return Err(Error::violation(
            Assumption::LevelCondition,
            format!("C A^(j-1) B is nonzero for some j <= {l}"),
        ));
    }
    let t_blocks = build_t(chain);
    let t = stack_rows(&t_blocks);
    let n = sys.n();
    let heights: Vec<usize> = t_blocks.iter().map(|b| b.nrows()).collect();
    let ortho = (&t * t.transpose() - Mat::identity(n, n)).norm();
    if ortho > 1e-12 * (n.max(1) as f64) {
        return Err(Error::NumericalFailure(format!("transform is not orthogonal (defect {ortho:.3e})")));
    }

    let mut a_blocks = Vec::with_capacity(l + 1);
    let mut b_blocks = Vec::with_capacity(l + 1);
    a_blocks.push(chain.phis[l].clone());
    b_blocks.push(chain.gammas[l].clone());
    for j in 2..=l + 1 {
        let step = &chain.steps[l + 1 - j];
        let phi = &chain.phis[l + 1 - j];
        let gamma = &chain.gammas[l + 1 - j];
        a_blocks.push(step.u_tilde.transpose() * phi * &step.u_tilde);
        b_blocks.push(step.u_tilde.transpose() * gamma);
    }
    let r_blocks: Vec<Mat> = t_blocks.iter().map(|tj| tj * &sys.r).collect();
    let d_blocks: Vec<Vec<Mat>> = t_blocks
        .iter()
        .enumerate()
        .map(|(j, tj)| t_blocks[..j].iter().map(|tk| tj * &sys.a * tk.transpose()).collect())
        .collect();
    let c_xi = &sys.c * t_blocks[0].transpose();

    let c_scale = 1f64.max(sys.c.norm());
    for (j, tj) in t_blocks.iter().enumerate().skip(1) {
        let leak = (&sys.c * tj.transpose()).norm();
        if leak > 1e-10 * c_scale {
            return Err(Error::violation(
                Assumption::LevelCondition,
                format!("output leaks into block {} of the normal form (|C T_j^T| = {leak:.3e})", j + 1),
            ));
        }
    }

    let nf = NormalForm { t, heights, a_blocks, b_blocks, r_blocks, d_blocks, c_xi };
    let a_scale = 1f64.max(sys.a.norm());
    let defect = (&nf.t * &sys.a * nf.t.transpose() - nf.assembled_a()).norm();
    if defect > 1e-10 * a_scale {
        return Err(Error::Inconsistent(format!("normal form does not reproduce T A T^T (defect {defect:.3e})")));
    }
    let b_defect = (&nf.t * &sys.b - nf.assembled_b()).norm();
    if b_defect > 1e-10 * 1f64.max(sys.b.norm()) {
        return Err(Error::Inconsistent(format!("normal form does not reproduce T B (defect {b_defect:.3e})")));
    }
    Ok(nf)
}

/// Chain plus normal form in one call.
pub fn normal_form(sys: &LinearSystem, tol: &Tolerance) -> Result<(SvdChain, NormalForm)> {
    sys.validate()?;
    let chain = svd_reduction_chain(&sys.a, &sys.b, tol)?;
    let nf = to_normal_form(sys, &chain)?;
    for (j, b) in nf.b_blocks.iter().enumerate() {
        if numeric_rank(b, tol)? != b.nrows() {
            return Err(Error::Inconsistent(format!("block B_{} lost full row rank", j + 1)));
        }
    }
    Ok((chain, nf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::linalg::from_rows;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn triple_integrator() -> LinearSystem {
        let a = from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]]);
        let b = Mat::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let c = from_rows(&[&[1.0, 0.0, 0.0]]);
        LinearSystem::new(a, b, c, Mat::zeros(3, 1)).unwrap()
    }

    #[test]
    fn identity_input_gives_zero_steps() {
        let a = from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let chain = svd_reduction_chain(&a, &Mat::identity(2, 2), &tol()).unwrap();
        assert_eq!(chain.l(), 0);
        assert_eq!(chain.phis.len(), 1);
        let t = stack_rows(&build_t(&chain));
        assert_eq!(t, Mat::identity(2, 2));

        let c = from_rows(&[&[1.0, -1.0]]);
        let sys = LinearSystem::new(a.clone(), Mat::identity(2, 2), c.clone(), Mat::zeros(2, 1)).unwrap();
        let nf = to_normal_form(&sys, &chain).unwrap();
        assert_eq!(nf.a_blocks, vec![a]);
        assert_eq!(nf.b_blocks, vec![Mat::identity(2, 2)]);
        assert_eq!(nf.c_xi, c);
    }

    #[test]
    fn triple_integrator_chain() {
        let sys = triple_integrator();
        let chain = svd_reduction_chain(&sys.a, &sys.b, &tol()).unwrap();
        assert_eq!(chain.l(), 2);
        assert_eq!(chain.ranks(), vec![1, 1, 1]);
        let t = stack_rows(&build_t(&chain));
        assert!((&t * t.transpose() - Mat::identity(3, 3)).norm() <= 1e-12);

        let nf = to_normal_form(&sys, &chain).unwrap();
        assert_eq!(nf.heights, vec![1, 1, 1]);
        for b in &nf.b_blocks {
            assert!((b[(0, 0)].abs() - 1.0).abs() < 1e-14);
        }
        assert!((nf.c_xi[(0, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn nominal_agent_normal_form() {
        let agent = benchmark::agent_nominal();
        let sys = LinearSystem::new(agent.a.clone(), agent.b.clone(), agent.c.clone(), Mat::zeros(4, 1)).unwrap();
        let chain = svd_reduction_chain(&sys.a, &sys.b, &tol()).unwrap();
        assert_eq!(chain.l(), 1);
        assert_eq!(chain.steps[0].rank, 2);
        assert_eq!(numeric_rank(&chain.gammas[1], &tol()).unwrap(), 2);
        let nf = to_normal_form(&sys, &chain).unwrap();
        assert_eq!(nf.heights, vec![2, 2]);
        let rebuilt = nf.t.transpose() * nf.assembled_a() * &nf.t;
        assert!((rebuilt - &sys.a).norm() <= 1e-10);
    }

    #[test]
    fn level_condition_examples() {
        let agent = benchmark::agent_nominal();
        let sys = LinearSystem::new(agent.a, agent.b, agent.c, Mat::zeros(4, 1)).unwrap();
        assert!(level_condition(&sys, 1));
        assert!(level_condition(&triple_integrator(), 2));

        let b = Mat::from_column_slice(2, 1, &[0.0, 1.0]);
        let sys = LinearSystem::new(Mat::identity(2, 2), b.clone(), b.transpose(), Mat::zeros(2, 1)).unwrap();
        assert!(!level_condition(&sys, 1));
        let report = check_assumptions(&sys, 1, &tol()).unwrap();
        assert!(!report.level_condition);
        assert!(!report.controllable);
    }

    #[test]
    fn uncontrollable_pair_is_rejected() {
        let b = Mat::from_column_slice(2, 1, &[1.0, 1.0]);
        let err = svd_reduction_chain(&Mat::identity(2, 2), &b, &tol()).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolation { assumption: Assumption::Controllability, .. }));
        let err = svd_reduction_chain(&Mat::identity(2, 2), &Mat::zeros(2, 1), &tol()).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolation { assumption: Assumption::Controllability, .. }));
    }

    #[test]
    fn level_violation_is_rejected() {
        let sys = LinearSystem::new(
            from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]),
            Mat::from_column_slice(2, 1, &[0.0, 1.0]),
            from_rows(&[&[1.0, 1.0]]),
            Mat::zeros(2, 1),
        )
        .unwrap();
        let err = normal_form(&sys, &tol()).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolation { assumption: Assumption::LevelCondition, .. }));
    }

    #[test]
    fn dimension_checks() {
        let err = LinearSystem::new(Mat::identity(2, 2), Mat::zeros(3, 1), Mat::zeros(1, 2), Mat::zeros(2, 1));
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }
}
