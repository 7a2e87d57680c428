//! Receding-horizon convex controller over the error tube.
//!
//! At every step the controller solves a finite-horizon program in the
//! nominal trajectory: minimize a convex stage cost subject to nominal
//! dynamics and constraints tightened by the predicted error tube. The tube
//! either couples to the decision variables through epigraph bounds on the
//! mismatch generators (`coupled`) or enters as precomputed worst-case radii
//! (`worst_case`). Inclusion constraints are enforced between interval hulls,
//! exact when the constraint sets are axis-aligned boxes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::gains::GainCertificate;
use crate::reach::{NoiseLaw, PlantModel};
use crate::seed::Rng;
use crate::setalg::{
    contains_point, interval_hull, linear_map, minkowski_sum, mz_times_zonotope, IntervalBox,
    Zonotope, MEMBERSHIP_TOL,
};
use crate::solver::{solve_qp_tol, LinComb, QpProblem, SolveOutcome};
use crate::tube::{worst_case_tube_from, NominalModel, ReductionPolicy, TubeOperators};
use crate::Result;

/// Default solver feasibility/gap tolerance. Tight enough that active
/// constraints at the optimum are violated by far less than the membership
/// tolerance used in containment checks.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-12;

/// Default cap on symbolically carried tube generators per stage in coupled
/// mode; beyond it the stage folds into a box radius.
pub const DEFAULT_SYMBOLIC_GEN_CAP: usize = 4096;

/// How the tube enters the constraint tightening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TighteningMode {
    /// The mismatch contribution is a function of the decision variables.
    Coupled,
    /// Tube radii precomputed against the whole constraint sets.
    WorstCase,
}

/// The finite-horizon program: horizon, constraint sets, stage cost, mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcpSpec {
    pub horizon: usize,
    pub state_constraint: Zonotope,
    pub input_constraint: Zonotope,
    /// Quadratic state weight (positive semidefinite).
    pub q: DMatrix<f64>,
    /// Weight on the 1-norm of the input.
    pub c_u: f64,
    /// Optional linear state cost added to every stage.
    pub linear_state: Option<DVector<f64>>,
    pub tightening_mode: TighteningMode,
    /// Solver feasibility/gap tolerance (must be ≤ 1e−6).
    pub tolerance: f64,
    /// Order reduction for the worst-case tube precompute.
    pub reduction: ReductionPolicy,
    /// Coupled-mode cap on symbolic generators before boxing.
    pub symbolic_gen_cap: usize,
}

impl OcpSpec {
    pub fn new(
        horizon: usize,
        state_constraint: Zonotope,
        input_constraint: Zonotope,
        q: DMatrix<f64>,
        c_u: f64,
    ) -> Result<Self> {
        let n = state_constraint.dim();
        if horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be at least 1".into()));
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch {
                op: "ocp_spec",
                detail: format!("Q {:?} vs state dim {n}", q.shape()),
            });
        }
        if c_u < 0.0 {
            return Err(Error::InvalidSpec(format!("input weight must be ≥ 0, got {c_u}")));
        }
        let sym = 0.5 * (&q + q.transpose());
        if nalgebra::SymmetricEigen::new(sym).eigenvalues.min() < -1e-9 {
            return Err(Error::InvalidSpec("Q must be positive semidefinite".into()));
        }
        Ok(OcpSpec {
            horizon,
            state_constraint,
            input_constraint,
            q,
            c_u,
            linear_state: None,
            tightening_mode: TighteningMode::Coupled,
            tolerance: DEFAULT_SOLVE_TOL,
            reduction: ReductionPolicy::girard(n),
            symbolic_gen_cap: DEFAULT_SYMBOLIC_GEN_CAP,
        })
    }

    pub fn with_mode(mut self, mode: TighteningMode) -> Self {
        self.tightening_mode = mode;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol <= 1e-6) {
            return Err(Error::InvalidSpec(format!(
                "solver tolerance must lie in (0, 1e-6], got {tol}"
            )));
        }
        self.tolerance = tol;
        Ok(self)
    }

    fn state_dim(&self) -> usize {
        self.state_constraint.dim()
    }

    fn input_dim(&self) -> usize {
        self.input_constraint.dim()
    }

    /// Per-stage cost `x̄ᵀQx̄ + lᵀx̄ + c_u·‖ū‖₁`.
    pub fn stage_cost(&self, x_bar: &DVector<f64>, u_bar: &DVector<f64>) -> f64 {
        let mut c = (x_bar.transpose() * &self.q * x_bar)[(0, 0)];
        if let Some(l) = &self.linear_state {
            c += l.dot(x_bar);
        }
        c + self.c_u * u_bar.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Outcome of one finite-horizon solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OcpStatus {
    Optimal,
    /// `first_bad_step` names the earliest stage whose tightening already
    /// empties a constraint, when that is detectable before solving.
    Infeasible { first_bad_step: Option<usize> },
    SolverFailure(String),
}

/// Optimizer of the finite-horizon program (stages `k = 1..N`).
#[derive(Debug, Clone, Serialize)]
pub struct OcpSolution {
    pub status: OcpStatus,
    /// `x̄_{1..N}`; the first entry echoes the current nominal state.
    pub nominal_states: Vec<DVector<f64>>,
    /// `ū_{1..N}`.
    pub nominal_inputs: Vec<DVector<f64>>,
    /// Interval hull of `x̄_k + Z̄_{e,k}` per stage.
    pub tube_lower: Vec<DVector<f64>>,
    pub tube_upper: Vec<DVector<f64>>,
    /// `Σ_k x̄_kᵀQx̄_k + lᵀx̄_k + c_u‖ū_k‖₁` at the optimizer.
    pub objective: f64,
}

impl OcpSolution {
    fn not_solved(status: OcpStatus) -> Self {
        OcpSolution {
            status,
            nominal_states: Vec::new(),
            nominal_inputs: Vec::new(),
            tube_lower: Vec::new(),
            tube_upper: Vec::new(),
            objective: f64::NAN,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == OcpStatus::Optimal
    }
}

// ---------------------------------------------------------------------------
// Affine expressions over solver variables.

#[derive(Debug, Clone, Default)]
struct Aff {
    terms: Vec<(usize, f64)>,
    konst: f64,
}

impl Aff {
    fn constant(v: f64) -> Self {
        Aff { terms: Vec::new(), konst: v }
    }

    fn var(i: usize) -> Self {
        Aff { terms: vec![(i, 1.0)], konst: 0.0 }
    }

    fn add_scaled(&mut self, other: &Aff, w: f64) {
        if w == 0.0 {
            return;
        }
        for &(i, c) in &other.terms {
            self.terms.push((i, c * w));
        }
        self.konst += other.konst * w;
    }

    fn is_const(&self) -> bool {
        self.terms.is_empty()
    }
}

/// `out_i = Σ_j m_ij · v_j`.
fn mat_aff(m: &DMatrix<f64>, v: &[Aff]) -> Vec<Aff> {
    (0..m.nrows())
        .map(|i| {
            let mut a = Aff::constant(0.0);
            for (j, vj) in v.iter().enumerate() {
                a.add_scaled(vj, m[(i, j)]);
            }
            a
        })
        .collect()
}

fn aff_consts(v: &DVector<f64>) -> Vec<Aff> {
    v.iter().map(|&c| Aff::constant(c)).collect()
}

/// `|C| + Σᵢ |Gᵢ|` of a matrix zonotope — propagates box radii soundly.
fn abs_sum_matrix(m: &crate::setalg::MatrixZonotope) -> DMatrix<f64> {
    let mut a = m.center().abs();
    for g in m.generators() {
        a += g.abs();
    }
    a
}

/// One symbolically carried tube stage: an exact part `⟨center, gens⟩` plus
/// an axis-aligned box of radius `boxed` (entrywise ≥ 0 at any feasible
/// point).
struct Stage {
    center: Vec<Aff>,
    gens: Vec<GenCol>,
    boxed: Vec<Aff>,
}

enum GenCol {
    Const(DVector<f64>),
    Lin(Vec<Aff>),
}

impl GenCol {
    fn apply(&self, m: &DMatrix<f64>) -> GenCol {
        match self {
            GenCol::Const(d) => GenCol::Const(m * d),
            GenCol::Lin(v) => GenCol::collapse(mat_aff(m, v)),
        }
    }

    fn collapse(v: Vec<Aff>) -> GenCol {
        if v.iter().all(Aff::is_const) {
            GenCol::Const(DVector::from_iterator(v.len(), v.iter().map(|a| a.konst)))
        } else {
            GenCol::Lin(v)
        }
    }
}

struct Builder {
    qp: QpProblem,
}

impl Builder {
    fn new() -> Self {
        Builder { qp: QpProblem::new(0) }
    }

    fn new_var(&mut self) -> usize {
        let i = self.qp.num_vars;
        self.qp.num_vars += 1;
        self.qp.lin.push(0.0);
        i
    }

    fn new_vars(&mut self, count: usize) -> usize {
        let base = self.qp.num_vars;
        for _ in 0..count {
            self.new_var();
        }
        base
    }

    /// `expr ≤ rhs`.
    fn leq(&mut self, expr: &Aff, rhs: f64) {
        self.qp.ineq.push((expr.terms.clone(), rhs - expr.konst));
    }

    /// `expr = rhs`.
    fn eq(&mut self, expr: &Aff, rhs: f64) {
        self.qp.eq.push((expr.terms.clone(), rhs - expr.konst));
    }

    /// Fresh `τ ≥ |expr|`.
    fn abs_epigraph(&mut self, expr: &Aff) -> usize {
        let tau = self.new_var();
        let mut up: LinComb = expr.terms.clone();
        up.push((tau, -1.0));
        self.qp.ineq.push((up, -expr.konst));
        let mut dn: LinComb = expr.terms.iter().map(|&(i, c)| (i, -c)).collect();
        dn.push((tau, -1.0));
        self.qp.ineq.push((dn, expr.konst));
        tau
    }
}

/// Variable layout of the assembled program.
struct Layout {
    n: usize,
    m: usize,
    big_n: usize,
    /// Base var index of `x̄_k` for `k = 2..N` (index `k−2`).
    x_base: Vec<usize>,
    /// Base var index of `ū_k` for `k = 1..N` (index `k−1`).
    u_base: Vec<usize>,
}

impl Layout {
    fn state(&self, sol: &[f64], k: usize, x1: &DVector<f64>) -> DVector<f64> {
        if k == 1 {
            x1.clone()
        } else {
            let b = self.x_base[k - 2];
            DVector::from_iterator(self.n, (0..self.n).map(|i| sol[b + i]))
        }
    }

    fn input(&self, sol: &[f64], k: usize) -> DVector<f64> {
        let b = self.u_base[k - 1];
        DVector::from_iterator(self.m, (0..self.m).map(|i| sol[b + i]))
    }

    fn state_aff(&self, k: usize, x1: &DVector<f64>) -> Vec<Aff> {
        if k == 1 {
            aff_consts(x1)
        } else {
            let b = self.x_base[k - 2];
            (0..self.n).map(|i| Aff::var(b + i)).collect()
        }
    }

    fn input_aff(&self, k: usize) -> Vec<Aff> {
        let b = self.u_base[k - 1];
        (0..self.m).map(|i| Aff::var(b + i)).collect()
    }
}

/// Numeric mirror of a coupled stage: exact zonotope part plus box radius.
struct NumericStage {
    z: Zonotope,
    extra: DVector<f64>,
}

impl NumericStage {
    fn radius(&self) -> DVector<f64> {
        self.z.radius() + &self.extra
    }

    fn input_radius(&self, k: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(linear_map(k, &self.z)?.radius() + k.abs() * &self.extra)
    }
}

/// Runs the tube recursion numerically with the same folding rule the
/// symbolic assembly uses: exact generators until the cap, then boxed.
fn numeric_step(
    ops: &TubeOperators,
    prev: &NumericStage,
    v: &DVector<f64>,
    abs_dk: &DMatrix<f64>,
    cap: usize,
) -> Result<NumericStage> {
    let prod = mz_times_zonotope(&ops.m_dk, &prev.z)?;
    let mism = mz_times_zonotope(&ops.m_delta, &Zonotope::singleton(v.clone()))?;
    let mut z = minkowski_sum(&minkowski_sum(&prod, &mism)?, &ops.noise)?;
    let mut extra = abs_dk * &prev.extra;
    if z.num_generators() > cap {
        extra += z.radius();
        z = Zonotope::singleton(z.center().clone());
    }
    Ok(NumericStage { z, extra })
}

enum Assembled {
    PreInfeasible { step: usize },
    Program {
        qp: QpProblem,
        layout: Layout,
    },
}

/// Shared constraint assembly. `stages[k−1]` describes `Z̄_{e,k}`; in
/// worst-case mode the stages are constant, in coupled mode they reference
/// decision variables.
fn assemble(
    x_bar_t: &DVector<f64>,
    nominal: &NominalModel,
    ops: &TubeOperators,
    spec: &OcpSpec,
    e_t: &DVector<f64>,
) -> Result<Assembled> {
    let n = spec.state_dim();
    let m = spec.input_dim();
    let big_n = spec.horizon;
    let x_hull = interval_hull(&spec.state_constraint);
    let u_hull = interval_hull(&spec.input_constraint);

    let mut b = Builder::new();
    let x_base: Vec<usize> = (0..big_n.saturating_sub(1)).map(|_| b.new_vars(n)).collect();
    let u_base: Vec<usize> = (0..big_n).map(|_| b.new_vars(m)).collect();
    let layout = Layout { n, m, big_n, x_base, u_base };

    // Input-magnitude epigraphs for the cost.
    if spec.c_u > 0.0 {
        for k in 1..=big_n {
            for ua in layout.input_aff(k) {
                let s = b.abs_epigraph(&ua);
                b.qp.lin[s] += spec.c_u;
            }
        }
    }

    // Quadratic and linear state cost on the decision stages.
    for k in 2..=big_n {
        let base = layout.x_base[k - 2];
        for i in 0..n {
            for j in i..n {
                let c = spec.q[(i, j)] + if i < j { spec.q[(j, i)] } else { 0.0 };
                if c != 0.0 {
                    b.qp.quad.push((base + i, base + j, c));
                }
            }
            if let Some(l) = &spec.linear_state {
                b.qp.lin[base + i] += l[i];
            }
        }
    }

    // Nominal dynamics x̄_{k+1} = Āx̄_k + B̄ū_k.
    for k in 1..big_n {
        let xa = layout.state_aff(k, x_bar_t);
        let ua = layout.input_aff(k);
        let next = layout.state_aff(k + 1, x_bar_t);
        let ax = mat_aff(&nominal.a_bar, &xa);
        let bu = mat_aff(&nominal.b_bar, &ua);
        for i in 0..n {
            let mut expr = next[i].clone();
            expr.add_scaled(&ax[i], -1.0);
            expr.add_scaled(&bu[i], -1.0);
            b.eq(&expr, 0.0);
        }
    }

    // Tube stages.
    let abs_dk = abs_sum_matrix(&ops.m_dk);
    let mut stages: Vec<Stage> = Vec::with_capacity(big_n);
    match spec.tightening_mode {
        TighteningMode::Coupled => {
            stages.push(Stage {
                center: aff_consts(e_t),
                gens: Vec::new(),
                boxed: vec![Aff::constant(0.0); n],
            });
            for k in 1..big_n {
                let prev = &stages[k - 1];
                let mut v = layout.state_aff(k, x_bar_t);
                v.extend(layout.input_aff(k));

                let mut center = mat_aff(ops.m_dk.center(), &prev.center);
                let mism_center = mat_aff(ops.m_delta.center(), &v);
                for i in 0..n {
                    let shift = mism_center[i].clone();
                    center[i].add_scaled(&shift, 1.0);
                    center[i].konst += ops.noise.center()[i];
                }

                let mut gens: Vec<GenCol> = Vec::new();
                for g in &prev.gens {
                    gens.push(g.apply(ops.m_dk.center()));
                }
                for gi in ops.m_dk.generators() {
                    gens.push(GenCol::collapse(mat_aff(gi, &prev.center)));
                    for g in &prev.gens {
                        gens.push(g.apply(gi));
                    }
                }
                for gj in ops.m_delta.generators() {
                    gens.push(GenCol::collapse(mat_aff(gj, &v)));
                }
                for j in 0..ops.noise.num_generators() {
                    gens.push(GenCol::Const(ops.noise.generators().column(j).into_owned()));
                }

                let mut boxed = mat_aff(&abs_dk, &prev.boxed);
                if gens.len() > spec.symbolic_gen_cap {
                    for g in gens.drain(..) {
                        match g {
                            GenCol::Const(d) => {
                                for i in 0..n {
                                    boxed[i].konst += d[i].abs();
                                }
                            }
                            GenCol::Lin(affs) => {
                                for (i, a) in affs.iter().enumerate() {
                                    let tau = b.abs_epigraph(a);
                                    boxed[i].add_scaled(&Aff::var(tau), 1.0);
                                }
                            }
                        }
                    }
                }
                stages.push(Stage { center, gens, boxed });
            }
        }
        TighteningMode::WorstCase => {
            let start = Zonotope::singleton(e_t.clone());
            let seq = worst_case_tube_from(
                ops,
                start,
                &spec.state_constraint,
                &spec.input_constraint,
                big_n - 1,
                &spec.reduction,
            )?;
            for z in &seq {
                stages.push(Stage {
                    center: aff_consts(z.center()),
                    gens: (0..z.num_generators())
                        .map(|j| GenCol::Const(z.generators().column(j).into_owned()))
                        .collect(),
                    boxed: vec![Aff::constant(0.0); n],
                });
            }
        }
    }

    // Pre-check: a stage whose decision-independent tube radius already
    // exceeds a constraint's half-width can never be feasible.
    let floor = tube_radius_floor(ops, e_t, &abs_dk, spec)?;
    for k in 1..=big_n {
        let (r_floor, ru_floor) = &floor[k - 1];
        if k == 1 {
            let x1e = x_bar_t + e_t;
            if !interval_hull(&spec.state_constraint).contains(&x1e, MEMBERSHIP_TOL) {
                return Ok(Assembled::PreInfeasible { step: 1 });
            }
        } else {
            for i in 0..n {
                let half = 0.5 * (x_hull.upper[i] - x_hull.lower[i]);
                if r_floor[i] > half + MEMBERSHIP_TOL {
                    return Ok(Assembled::PreInfeasible { step: k });
                }
            }
        }
        for i in 0..m {
            let half = 0.5 * (u_hull.upper[i] - u_hull.lower[i]);
            if ru_floor[i] > half + MEMBERSHIP_TOL {
                return Ok(Assembled::PreInfeasible { step: k });
            }
        }
    }

    // Tightened interval-inclusion constraints.
    for (k, stage) in (1..=big_n).zip(&stages) {
        // Stage radius: boxed part plus per-generator magnitudes.
        let mut radius: Vec<Aff> = stage.boxed.clone();
        let mut radius_u: Vec<Aff> = vec![Aff::constant(0.0); m];
        for i in 0..m {
            let abs_k_row = ops.k.row(i).abs();
            for (j, rb) in stage.boxed.iter().enumerate() {
                radius_u[i].add_scaled(rb, abs_k_row[j]);
            }
        }
        for g in &stage.gens {
            match g {
                GenCol::Const(d) => {
                    for i in 0..n {
                        radius[i].konst += d[i].abs();
                    }
                    let kd = &ops.k * d;
                    for i in 0..m {
                        radius_u[i].konst += kd[i].abs();
                    }
                }
                GenCol::Lin(affs) => {
                    for (i, a) in affs.iter().enumerate() {
                        let tau = b.abs_epigraph(a);
                        radius[i].add_scaled(&Aff::var(tau), 1.0);
                    }
                    let k_affs = mat_aff(&ops.k, affs);
                    for (i, a) in k_affs.iter().enumerate() {
                        let sig = b.abs_epigraph(a);
                        radius_u[i].add_scaled(&Aff::var(sig), 1.0);
                    }
                }
            }
        }

        // State: x̄_k + center ± radius within the hull of Z_x.
        let xa = layout.state_aff(k, x_bar_t);
        for i in 0..n {
            let mut hi = xa[i].clone();
            hi.add_scaled(&stage.center[i], 1.0);
            hi.add_scaled(&radius[i], 1.0);
            b.leq(&hi, x_hull.upper[i]);
            let mut lo = xa[i].clone();
            lo.add_scaled(&stage.center[i], 1.0);
            lo.add_scaled(&radius[i], -1.0);
            let neg = Aff {
                terms: lo.terms.iter().map(|&(ix, c)| (ix, -c)).collect(),
                konst: -lo.konst,
            };
            b.leq(&neg, -x_hull.lower[i]);
        }

        // Input: ū_k + K·center ± radius_u within the hull of Z_u.
        let ua = layout.input_aff(k);
        let kc = mat_aff(&ops.k, &stage.center);
        for i in 0..m {
            let mut hi = ua[i].clone();
            hi.add_scaled(&kc[i], 1.0);
            hi.add_scaled(&radius_u[i], 1.0);
            b.leq(&hi, u_hull.upper[i]);
            let mut lo = ua[i].clone();
            lo.add_scaled(&kc[i], 1.0);
            lo.add_scaled(&radius_u[i], -1.0);
            let neg = Aff {
                terms: lo.terms.iter().map(|&(ix, c)| (ix, -c)).collect(),
                konst: -lo.konst,
            };
            b.leq(&neg, -u_hull.lower[i]);
        }
    }

    Ok(Assembled::Program { qp: b.qp, layout })
}

/// Decision-independent lower bounds on the stage tube radii (state and
/// K-mapped input parts), obtained by running the recursion with the nominal
/// pair forced to zero.
fn tube_radius_floor(
    ops: &TubeOperators,
    e_t: &DVector<f64>,
    abs_dk: &DMatrix<f64>,
    spec: &OcpSpec,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let n = spec.state_dim();
    let m = spec.input_dim();
    let zero_v = DVector::zeros(n + m);
    let mut st = NumericStage {
        z: Zonotope::singleton(e_t.clone()),
        extra: DVector::zeros(n),
    };
    let mut out = Vec::with_capacity(spec.horizon);
    out.push((DVector::zeros(n), DVector::zeros(m)));
    for _ in 2..=spec.horizon {
        st = numeric_step(ops, &st, &zero_v, abs_dk, spec.symbolic_gen_cap)?;
        out.push((st.radius(), st.input_radius(&ops.k)?));
    }
    Ok(out)
}

/// Solves the finite-horizon program from the current error and nominal
/// state. The prediction tube starts at the singleton `{e_t}`.
pub fn solve_ocp(
    e_t: &DVector<f64>,
    x_bar_t: &DVector<f64>,
    nominal: &NominalModel,
    ops: &TubeOperators,
    spec: &OcpSpec,
) -> Result<OcpSolution> {
    let n = spec.state_dim();
    let m = spec.input_dim();
    if nominal.state_dim() != n
        || nominal.input_dim() != m
        || ops.state_dim() != n
        || ops.input_dim() != m
        || e_t.len() != n
        || x_bar_t.len() != n
    {
        return Err(Error::DimensionMismatch {
            op: "solve_ocp",
            detail: format!(
                "state dim {n}, input dim {m}, nominal {}×{}, e {}, x̄ {}",
                nominal.state_dim(),
                nominal.input_dim(),
                e_t.len(),
                x_bar_t.len()
            ),
        });
    }

    let (qp, layout) = match assemble(x_bar_t, nominal, ops, spec, e_t)? {
        Assembled::PreInfeasible { step } => {
            return Ok(OcpSolution::not_solved(OcpStatus::Infeasible {
                first_bad_step: Some(step),
            }))
        }
        Assembled::Program { qp, layout } => (qp, layout),
    };

    let sol = match solve_qp_tol(&qp, spec.tolerance) {
        SolveOutcome::Optimal(s) => s,
        SolveOutcome::Infeasible => {
            return Ok(OcpSolution::not_solved(OcpStatus::Infeasible {
                first_bad_step: None,
            }))
        }
        SolveOutcome::Failed(status) => {
            return Ok(OcpSolution::not_solved(OcpStatus::SolverFailure(status)))
        }
    };

    let nominal_states: Vec<DVector<f64>> = (1..=layout.big_n)
        .map(|k| layout.state(&sol.x, k, x_bar_t))
        .collect();
    let nominal_inputs: Vec<DVector<f64>> = (1..=layout.big_n)
        .map(|k| layout.input(&sol.x, k))
        .collect();

    // Tight tube bounds recomputed from the recursion at the optimizer.
    let abs_dk = abs_sum_matrix(&ops.m_dk);
    let mut tube_lower = Vec::with_capacity(layout.big_n);
    let mut tube_upper = Vec::with_capacity(layout.big_n);
    let mut st = NumericStage {
        z: Zonotope::singleton(e_t.clone()),
        extra: DVector::zeros(n),
    };
    for k in 1..=layout.big_n {
        if k >= 2 {
            let mut v = nominal_states[k - 2].clone().insert_rows(n, m, 0.0);
            v.rows_mut(n, m).copy_from(&nominal_inputs[k - 2]);
            st = numeric_step(ops, &st, &v, &abs_dk, spec.symbolic_gen_cap)?;
        }
        let c = &nominal_states[k - 1] + st.z.center();
        let r = st.radius();
        tube_lower.push(&c - &r);
        tube_upper.push(c + r);
    }

    let objective = (0..layout.big_n)
        .map(|i| spec.stage_cost(&nominal_states[i], &nominal_inputs[i]))
        .sum();

    Ok(OcpSolution {
        status: OcpStatus::Optimal,
        nominal_states,
        nominal_inputs,
        tube_lower,
        tube_upper,
        objective,
    })
}

/// One recorded closed-loop step.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub x_bar: DVector<f64>,
    pub e: DVector<f64>,
    pub u: DVector<f64>,
    pub u_bar: DVector<f64>,
    /// Interval guaranteed (by the previous solve) to contain `x_t`;
    /// degenerate at `t = 0`.
    pub tube_lower: DVector<f64>,
    pub tube_upper: DVector<f64>,
    /// Realized stage cost `ℓ(x_t, u_t)`.
    pub cost: f64,
}

/// How a closed-loop run ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RunStatus {
    Completed,
    /// The solve at `step` reported infeasibility.
    InfeasibleAt {
        step: usize,
        first_bad_step: Option<usize>,
    },
}

/// Full closed-loop record: per-step states, inputs, tube bounds, costs.
#[derive(Debug, Clone, Serialize)]
pub struct TubeTrajectory {
    pub steps: Vec<StepRecord>,
    pub final_state: DVector<f64>,
    pub final_nominal: DVector<f64>,
    pub status: RunStatus,
}

impl TubeTrajectory {
    /// Plot-data CSV: `t, x1..xn, xbar1..xbarn, u1..um,
    /// tube_lo1, tube_hi1, .., tube_lon, tube_hin, cost`.
    pub fn to_csv(&self) -> String {
        let n = self.final_state.len();
        let m = self.steps.first().map_or(1, |s| s.u.len());
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for i in 1..=n {
            out.push_str(&format!(",xbar{i}"));
        }
        if m == 1 {
            out.push_str(",u");
        } else {
            for i in 1..=m {
                out.push_str(&format!(",u{i}"));
            }
        }
        for i in 1..=n {
            out.push_str(&format!(",tube_lo{i},tube_hi{i}"));
        }
        out.push_str(",cost\n");
        for s in &self.steps {
            out.push_str(&format!("{}", s.t));
            for v in s.x.iter().chain(s.x_bar.iter()).chain(s.u.iter()) {
                out.push_str(&format!(",{v}"));
            }
            for i in 0..n {
                out.push_str(&format!(",{},{}", s.tube_lower[i], s.tube_upper[i]));
            }
            out.push_str(&format!(",{}\n", s.cost));
        }
        out
    }
}

/// Runs Algorithm-style closed-loop control for `total_steps` steps from
/// `x0`: solve, apply `u = Ke + ū*₁`, advance the nominal state by the
/// nominal dynamics, observe the new error.
#[allow(clippy::too_many_arguments)]
pub fn run_receding_horizon(
    plant: &PlantModel,
    nominal: &NominalModel,
    ops: &TubeOperators,
    cert: &GainCertificate,
    spec: &OcpSpec,
    total_steps: usize,
    x0: &DVector<f64>,
    noise_law: &NoiseLaw,
    rng: &mut Rng,
) -> Result<TubeTrajectory> {
    if cert.k != ops.k {
        return Err(Error::InvalidSpec(
            "gain certificate does not match the tube operators' gain".into(),
        ));
    }
    if cert.max_spectral_radius >= 1.0 {
        return Err(Error::InvalidSpec(format!(
            "certificate is not stabilizing: max ρ = {}",
            cert.max_spectral_radius
        )));
    }
    let n = plant.state_dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            op: "run_receding_horizon",
            detail: format!("x0 len {} vs state dim {n}", x0.len()),
        });
    }
    let sampler = noise_law.sampler(&plant.noise)?;
    let u_hull = interval_hull(&spec.input_constraint);

    let mut x = x0.clone();
    let mut x_bar = x0.clone();
    let mut e = DVector::zeros(n);
    // The t = 0 "tube" is the known initial state itself.
    let mut carried: (DVector<f64>, DVector<f64>) = (x0.clone(), x0.clone());
    let mut steps = Vec::with_capacity(total_steps);

    for t in 0..total_steps {
        let sol = solve_ocp(&e, &x_bar, nominal, ops, spec)?;
        match &sol.status {
            OcpStatus::Optimal => {}
            OcpStatus::Infeasible { first_bad_step } => {
                return Ok(TubeTrajectory {
                    steps,
                    final_state: x,
                    final_nominal: x_bar,
                    status: RunStatus::InfeasibleAt {
                        step: t,
                        first_bad_step: *first_bad_step,
                    },
                });
            }
            OcpStatus::SolverFailure(s) => {
                return Err(Error::SolverFailure {
                    status: format!("step {t}: {s}"),
                });
            }
        }

        let u_bar = sol.nominal_inputs[0].clone();
        let u = &ops.k * &e + &u_bar;
        if !u_hull.contains(&u, 1e-6) {
            return Err(Error::SolverFailure {
                status: format!("applied input drifted outside the input set at step {t}: {u}"),
            });
        }

        let w = sampler.draw(rng);
        let x_next = &plant.a0 * &x + &plant.b0 * &u + w;
        let x_bar_next = &nominal.a_bar * &x_bar + &nominal.b_bar * &u_bar;

        steps.push(StepRecord {
            t,
            x: x.clone(),
            x_bar: x_bar.clone(),
            e: e.clone(),
            u: u.clone(),
            u_bar,
            tube_lower: carried.0.clone(),
            tube_upper: carried.1.clone(),
            cost: spec.stage_cost(&x, &u),
        });

        // Bounds guaranteed for x_{t+1}: the solve's stage-2 prediction, or
        // one propagation step when the horizon is 1.
        carried = if spec.horizon >= 2 {
            (sol.tube_lower[1].clone(), sol.tube_upper[1].clone())
        } else {
            let abs_dk = abs_sum_matrix(&ops.m_dk);
            let mut v = x_bar.clone().insert_rows(n, plant.input_dim(), 0.0);
            v.rows_mut(n, plant.input_dim())
                .copy_from(&sol.nominal_inputs[0]);
            let st = numeric_step(
                ops,
                &NumericStage {
                    z: Zonotope::singleton(e.clone()),
                    extra: DVector::zeros(n),
                },
                &v,
                &abs_dk,
                spec.symbolic_gen_cap,
            )?;
            let c = &x_bar_next + st.z.center();
            let r = st.radius();
            (&c - &r, c + r)
        };

        x = x_next;
        x_bar = x_bar_next;
        e = &x - &x_bar;
    }

    Ok(TubeTrajectory {
        steps,
        final_state: x,
        final_nominal: x_bar,
        status: RunStatus::Completed,
    })
}

/// A-posteriori audit of a closed-loop run.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub all_feasible: bool,
    /// Smallest distance of any realized state to its hull bound
    /// (negative = violation).
    pub worst_state_margin: f64,
    pub worst_input_margin: f64,
    pub first_violation: Option<(usize, String)>,
}

/// Checks every recorded step: solved, `x_t` inside `Z_x` (hull and exact
/// membership), `u_t` inside `Z_u` likewise.
pub fn check_recursive_feasibility(
    traj: &TubeTrajectory,
    spec: &OcpSpec,
) -> Result<FeasibilityReport> {
    let x_hull = interval_hull(&spec.state_constraint);
    let u_hull = interval_hull(&spec.input_constraint);
    let mut worst_state = f64::INFINITY;
    let mut worst_input = f64::INFINITY;
    let mut first_violation: Option<(usize, String)> = None;
    let note = |step: usize, what: String, first: &mut Option<(usize, String)>| {
        if first.is_none() {
            *first = Some((step, what));
        }
    };

    if let RunStatus::InfeasibleAt { step, .. } = traj.status {
        note(step, "optimization infeasible".into(), &mut first_violation);
    }

    for s in &traj.steps {
        let sm = hull_margin(&x_hull, &s.x);
        let um = hull_margin(&u_hull, &s.u);
        worst_state = worst_state.min(sm);
        worst_input = worst_input.min(um);
        if sm < -MEMBERSHIP_TOL || !contains_point(&spec.state_constraint, &s.x)? {
            note(s.t, format!("state outside constraint set: {}", s.x), &mut first_violation);
        }
        if um < -MEMBERSHIP_TOL || !contains_point(&spec.input_constraint, &s.u)? {
            note(s.t, format!("input outside constraint set: {}", s.u), &mut first_violation);
        }
    }

    Ok(FeasibilityReport {
        all_feasible: first_violation.is_none(),
        worst_state_margin: worst_state,
        worst_input_margin: worst_input,
        first_violation,
    })
}

fn hull_margin(hull: &IntervalBox, p: &DVector<f64>) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..p.len() {
        m = m.min(hull.upper[i] - p[i]).min(p[i] - hull.lower[i]);
    }
    m
}
