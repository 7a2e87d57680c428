//! Error-tube machinery for the nominal/error split of the closed loop.
//!
//! The controller tracks a nominal trajectory `x̄` and bounds the error
//! `e = x − x̄` by a zonotope recursion driven by three operators: the
//! closed-loop model family `M_D·[I; K]`, the model-mismatch family
//! `M_D − [Ā B̄]`, and the process noise. The recursion over-approximates
//! every error the true plant can realize as long as `(Ā, B̄)` and the true
//! `(A₀, B₀)` are members of the consistent set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::reach::PlantModel;
use crate::setalg::{
    cartesian_product, linear_map, minkowski_sum, mz_contains, mz_linear_map_right, mz_shift,
    mz_times_zonotope, reduce_order_box, reduce_order_girard, MatrixZonotope, Zonotope,
};
use crate::Result;

/// Generator-count cap that triggers order reduction, as a multiple of the
/// state dimension.
pub const DEFAULT_REDUCTION_ORDER: usize = 4;

/// Divergence guard for worst-case propagation, as a multiple of the state
/// constraint radius.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

/// How to shrink a tube zonotope once it exceeds the generator cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMethod {
    /// Replace the whole zonotope by its interval hull (order 1). Cheapest,
    /// but the hull of the propagated hull can expand step over step even
    /// when the un-reduced recursion contracts.
    Box,
    /// Keep the least box-like generators, box only the remainder. Retains
    /// enough cross-coupling for contractive dynamics to stay contractive.
    Girard,
}

/// Reduction method plus the generator cap that triggers it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionPolicy {
    pub method: ReductionMethod,
    pub cap: usize,
}

impl ReductionPolicy {
    /// Default policy: Girard reduction at order 4 (cap `4n`).
    pub fn girard(state_dim: usize) -> Self {
        ReductionPolicy {
            method: ReductionMethod::Girard,
            cap: DEFAULT_REDUCTION_ORDER * state_dim,
        }
    }

    /// Interval-hull reduction to order 1, triggered past cap `4n`.
    pub fn box_order_one(state_dim: usize) -> Self {
        ReductionPolicy {
            method: ReductionMethod::Box,
            cap: DEFAULT_REDUCTION_ORDER * state_dim,
        }
    }

    /// Never reduces; exact propagation for oracle comparisons.
    pub fn unbounded() -> Self {
        ReductionPolicy {
            method: ReductionMethod::Girard,
            cap: usize::MAX,
        }
    }

    /// Applies the policy when the generator count exceeds the cap.
    pub fn apply(&self, z: Zonotope) -> Zonotope {
        if z.num_generators() <= self.cap {
            return z;
        }
        match self.method {
            ReductionMethod::Box => reduce_order_box(&z),
            ReductionMethod::Girard => reduce_order_girard(&z, self.cap),
        }
    }
}

/// The controller's nominal dynamics `(Ā, B̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalModel {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    /// Whether `[Ā B̄]` passed the membership check against the consistent
    /// set it was built from; the error recursion is sound only if true.
    pub must_be_member: bool,
}

impl NominalModel {
    /// Canonical choice: the center of the consistent set (always a member).
    pub fn center_of(m_d: &MatrixZonotope) -> Result<Self> {
        let (n, cols) = m_d.shape();
        if cols <= n {
            return Err(Error::DimensionMismatch {
                op: "nominal_model",
                detail: format!("model set shape {n}×{cols} leaves no input columns"),
            });
        }
        let c = m_d.center();
        Self::new(
            c.columns(0, n).into_owned(),
            c.columns(n, cols - n).into_owned(),
            m_d,
        )
    }

    /// Any `(Ā, B̄)`; records the membership LP verdict against `m_d`.
    pub fn new(a_bar: DMatrix<f64>, b_bar: DMatrix<f64>, m_d: &MatrixZonotope) -> Result<Self> {
        let n = a_bar.nrows();
        if a_bar.ncols() != n || b_bar.nrows() != n {
            return Err(Error::DimensionMismatch {
                op: "nominal_model",
                detail: format!("Ā {:?}, B̄ {:?}", a_bar.shape(), b_bar.shape()),
            });
        }
        let mut stacked = DMatrix::zeros(n, n + b_bar.ncols());
        stacked.view_mut((0, 0), (n, n)).copy_from(&a_bar);
        stacked.view_mut((0, n), (n, b_bar.ncols())).copy_from(&b_bar);
        let must_be_member = mz_contains(m_d, &stacked)?;
        Ok(NominalModel {
            a_bar,
            b_bar,
            must_be_member,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_bar.ncols()
    }

    /// `[Ā B̄]` as one block.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut s = DMatrix::zeros(n, n + m);
        s.view_mut((0, 0), (n, n)).copy_from(&self.a_bar);
        s.view_mut((0, n), (n, m)).copy_from(&self.b_bar);
        s
    }
}

/// The three set-valued operators driving the error recursion, plus the gain.
#[derive(Debug, Clone)]
pub struct TubeOperators {
    /// `M_D·[I; K]`: n×n closed-loop model family.
    pub m_dk: MatrixZonotope,
    /// `M_D − [Ā B̄]`: n×(n+m) model-mismatch family.
    pub m_delta: MatrixZonotope,
    /// Process noise `Z_w`.
    pub noise: Zonotope,
    /// Error-feedback gain, m×n.
    pub k: DMatrix<f64>,
}

impl TubeOperators {
    pub fn new(
        m_d: &MatrixZonotope,
        nominal: &NominalModel,
        k: DMatrix<f64>,
        noise: Zonotope,
    ) -> Result<Self> {
        let (n, cols) = m_d.shape();
        let m = cols - n;
        if nominal.state_dim() != n || nominal.input_dim() != m {
            return Err(Error::DimensionMismatch {
                op: "tube_operators",
                detail: format!("nominal {}×{} vs model set {n}×{cols}", nominal.state_dim(), nominal.input_dim()),
            });
        }
        if k.nrows() != m || k.ncols() != n || noise.dim() != n {
            return Err(Error::DimensionMismatch {
                op: "tube_operators",
                detail: format!("K {:?}, noise dim {}", k.shape(), noise.dim()),
            });
        }
        let mut ik = DMatrix::zeros(n + m, n);
        ik.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
        ik.view_mut((n, 0), (m, n)).copy_from(&k);
        let m_dk = mz_linear_map_right(m_d, &ik)?;
        let m_delta = mz_shift(m_d, &nominal.stacked())?;
        Ok(TubeOperators {
            m_dk,
            m_delta,
            noise,
            k,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.m_dk.shape().0
    }

    pub fn input_dim(&self) -> usize {
        self.k.nrows()
    }
}

fn stack_pair(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(x.len() + u.len());
    v.rows_mut(0, x.len()).copy_from(x);
    v.rows_mut(x.len(), u.len()).copy_from(u);
    v
}

/// The error set reachable at step `t` when the true plant is known —
/// `(A₀+B₀K)ᵗ·e₀` plus the accumulated, nominal-shifted noise terms. Test
/// oracle only: generators grow linearly with `t`, nothing is reduced.
pub fn exact_error_zonotope(
    plant: &PlantModel,
    nominal: &NominalModel,
    k: &DMatrix<f64>,
    e0: &DVector<f64>,
    nominal_traj: &[(DVector<f64>, DVector<f64>)],
    t: usize,
) -> Result<Zonotope> {
    if t > nominal_traj.len() {
        return Err(Error::DimensionMismatch {
            op: "exact_error_zonotope",
            detail: format!("step {t} exceeds trajectory length {}", nominal_traj.len()),
        });
    }
    let acl = &plant.a0 + &plant.b0 * k;
    let da = &plant.a0 - &nominal.a_bar;
    let db = &plant.b0 - &nominal.b_bar;
    let mut z = Zonotope::singleton(e0.clone());
    for (x_bar, u_bar) in nominal_traj.iter().take(t) {
        let shift = &da * x_bar + &db * u_bar + plant.noise.center();
        let shifted_noise = Zonotope::new(shift, plant.noise.generators().clone())?;
        z = minkowski_sum(&linear_map(&acl, &z)?, &shifted_noise)?;
    }
    Ok(z)
}

/// One step of the over-approximating recursion:
/// `M_DK·Z ⊕ M_Δ·[x̄; ū] ⊕ Z_w`, order-reduced per policy.
pub fn propagate_error_tube(
    ops: &TubeOperators,
    z_prev: &Zonotope,
    x_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
    policy: &ReductionPolicy,
) -> Result<Zonotope> {
    let pair = Zonotope::singleton(stack_pair(x_bar, u_bar));
    let fed_back = mz_times_zonotope(&ops.m_dk, z_prev)?;
    let mismatch = mz_times_zonotope(&ops.m_delta, &pair)?;
    let z = minkowski_sum(&minkowski_sum(&fed_back, &mismatch)?, &ops.noise)?;
    Ok(policy.apply(z))
}

/// Worst-case propagation from an arbitrary start set: the decision-dependent
/// disturbance is replaced by `M_Δ·(Z_x × Z_u) ⊕ Z_w` once, up front.
pub(crate) fn worst_case_tube_from(
    ops: &TubeOperators,
    start: Zonotope,
    state_set: &Zonotope,
    input_set: &Zonotope,
    horizon: usize,
    policy: &ReductionPolicy,
) -> Result<Vec<Zonotope>> {
    let threshold = DIVERGENCE_FACTOR * state_set.radius().max();
    let worst = minkowski_sum(
        &mz_times_zonotope(&ops.m_delta, &cartesian_product(state_set, input_set))?,
        &ops.noise,
    )?;
    let mut seq = Vec::with_capacity(horizon + 1);
    seq.push(start);
    for step in 1..=horizon {
        let prev = seq.last().unwrap();
        let z = policy.apply(minkowski_sum(&mz_times_zonotope(&ops.m_dk, prev)?, &worst)?);
        let radius = z.radius().max();
        if radius > threshold {
            return Err(Error::TubeDivergent {
                step,
                radius,
                threshold,
            });
        }
        seq.push(z);
    }
    Ok(seq)
}

/// Tube sequence under the worst disturbance any feasible nominal pair can
/// produce, starting from the zero-error singleton. A bounded sequence
/// certifies (empirically) that the gain keeps the reduced tube invariant.
pub fn worst_case_tube_sequence(
    ops: &TubeOperators,
    state_set: &Zonotope,
    input_set: &Zonotope,
    horizon: usize,
    policy: &ReductionPolicy,
) -> Result<Vec<Zonotope>> {
    let start = Zonotope::singleton(DVector::zeros(ops.state_dim()));
    worst_case_tube_from(ops, start, state_set, input_set, horizon, policy)
}

/// Truncated recursion keeping only the last `k0` disturbance terms:
/// `Σ_{k<k0} M_DKᵏ·(M_Δ·[x̄; ū] ⊕ Z_w)` over the supplied window
/// (chronological order, oldest first).
pub fn truncated_tube(
    ops: &TubeOperators,
    nominal_window: &[(DVector<f64>, DVector<f64>)],
    k0: usize,
    policy: &ReductionPolicy,
) -> Result<Zonotope> {
    if nominal_window.len() != k0 {
        return Err(Error::DimensionMismatch {
            op: "truncated_tube",
            detail: format!("window length {} != k0 {}", nominal_window.len(), k0),
        });
    }
    let mut z = Zonotope::singleton(DVector::zeros(ops.state_dim()));
    for (x_bar, u_bar) in nominal_window {
        z = propagate_error_tube(ops, &z, x_bar, u_bar, policy)?;
    }
    Ok(z)
}

/// One JSON document per step, newline-separated.
pub fn tube_to_json_lines(seq: &[Zonotope]) -> Result<String> {
    let mut out = String::new();
    for z in seq {
        out.push_str(&serde_json::to_string(z).map_err(|e| Error::InvalidSpec(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// CSV of interval-hull bounds: `step,lower1..n,upper1..n`.
pub fn tube_bounds_csv(seq: &[Zonotope]) -> String {
    let n = seq.first().map_or(0, |z| z.dim());
    let mut out = String::from("step");
    for i in 1..=n {
        out.push_str(&format!(",lower{i}"));
    }
    for i in 1..=n {
        out.push_str(&format!(",upper{i}"));
    }
    out.push('\n');
    for (step, z) in seq.iter().enumerate() {
        let hull = crate::setalg::interval_hull(z);
        out.push_str(&format!("{step}"));
        for i in 0..n {
            out.push_str(&format!(",{}", hull.lower[i]));
        }
        for i in 0..n {
            out.push_str(&format!(",{}", hull.upper[i]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use crate::setalg::{contains_point, interval_hull, sample_point};
    use nalgebra::{dmatrix, dvector};

    fn small_model_set() -> MatrixZonotope {
        MatrixZonotope::new(
            dmatrix![0.5, 0.1, 1.0; 0.0, 0.4, 0.5],
            vec![
                dmatrix![0.02, 0.0, 0.01; 0.0, 0.02, 0.0],
                dmatrix![0.0, 0.01, 0.0; 0.01, 0.0, 0.02],
            ],
        )
        .unwrap()
    }

    fn small_noise() -> Zonotope {
        Zonotope::new(dvector![0.0, 0.0], dmatrix![0.05, 0.01; 0.0, 0.04]).unwrap()
    }

    fn small_ops() -> (MatrixZonotope, NominalModel, TubeOperators) {
        let m_d = small_model_set();
        let nominal = NominalModel::center_of(&m_d).unwrap();
        let k = dmatrix![-0.1, -0.05];
        let ops = TubeOperators::new(&m_d, &nominal, k, small_noise()).unwrap();
        (m_d, nominal, ops)
    }

    #[test]
    fn nominal_center_is_member() {
        let m_d = small_model_set();
        let nominal = NominalModel::center_of(&m_d).unwrap();
        assert!(nominal.must_be_member);
        assert_eq!(nominal.a_bar, dmatrix![0.5, 0.1; 0.0, 0.4]);
        assert_eq!(nominal.b_bar, dmatrix![1.0; 0.5]);
        // A far-away pair is flagged as non-member.
        let outside = NominalModel::new(
            dmatrix![5.0, 0.0; 0.0, 5.0],
            dmatrix![0.0; 0.0],
            &m_d,
        )
        .unwrap();
        assert!(!outside.must_be_member);
    }

    #[test]
    fn operators_match_manual_construction() {
        let (m_d, nominal, ops) = small_ops();
        let ik = dmatrix![1.0, 0.0; 0.0, 1.0; -0.1, -0.05];
        assert_eq!(ops.m_dk, mz_linear_map_right(&m_d, &ik).unwrap());
        assert_eq!(ops.m_delta, mz_shift(&m_d, &nominal.stacked()).unwrap());
        assert_eq!(ops.m_dk.shape(), (2, 2));
        assert_eq!(ops.m_delta.shape(), (2, 3));
        // Center of m_delta vanishes when the nominal is the center.
        assert!(ops.m_delta.center().amax() == 0.0);
    }

    #[test]
    fn exact_zonotope_step_zero_is_initial_singleton() {
        let (m_d, nominal, _) = small_ops();
        let plant = PlantModel::new(
            m_d.center().columns(0, 2).into_owned(),
            m_d.center().columns(2, 1).into_owned(),
            small_noise(),
        )
        .unwrap();
        let e0 = dvector![0.3, -0.2];
        let z = exact_error_zonotope(&plant, &nominal, &dmatrix![-0.1, -0.05], &e0, &[], 0).unwrap();
        assert_eq!(z.center(), &e0);
        assert_eq!(z.num_generators(), 0);
    }

    #[test]
    fn exact_zonotope_one_step_no_mismatch_is_noise() {
        let (_, nominal, _) = small_ops();
        let plant = PlantModel::new(
            nominal.a_bar.clone(),
            nominal.b_bar.clone(),
            small_noise(),
        )
        .unwrap();
        let traj = vec![(dvector![1.0, 1.0], dvector![0.5])];
        let z = exact_error_zonotope(
            &plant,
            &nominal,
            &dmatrix![-0.1, -0.05],
            &DVector::zeros(2),
            &traj,
            1,
        )
        .unwrap();
        assert_eq!(z.center(), small_noise().center());
        assert_eq!(z.generators(), small_noise().generators());
    }

    #[test]
    fn propagation_degenerate_cases() {
        // All operators singletons, zero state/input: one step from {0} is Z_w.
        let m_d = MatrixZonotope::singleton(dmatrix![0.5, 0.0, 1.0; 0.0, 0.5, 0.0]);
        let nominal = NominalModel::center_of(&m_d).unwrap();
        let ops = TubeOperators::new(&m_d, &nominal, dmatrix![0.0, 0.0], small_noise()).unwrap();
        let z = propagate_error_tube(
            &ops,
            &Zonotope::singleton(DVector::zeros(2)),
            &DVector::zeros(2),
            &DVector::zeros(1),
            &ReductionPolicy::unbounded(),
        )
        .unwrap();
        assert_eq!(z.center(), small_noise().center());
        assert_eq!(z.generators(), small_noise().generators());
    }

    #[test]
    fn propagation_with_exact_model_is_linear_map_plus_noise() {
        // m_delta has zero center and zero generators for a singleton model
        // set at the nominal, so the recursion is (Ā+B̄K)·Z ⊕ Z_w.
        let m_d = MatrixZonotope::singleton(dmatrix![0.5, 0.1, 1.0; 0.0, 0.4, 0.5]);
        let nominal = NominalModel::center_of(&m_d).unwrap();
        let k = dmatrix![-0.1, -0.05];
        let ops = TubeOperators::new(&m_d, &nominal, k.clone(), small_noise()).unwrap();
        let z_prev = Zonotope::new(dvector![0.2, -0.1], dmatrix![0.1, 0.0; 0.05, 0.2]).unwrap();
        let got = propagate_error_tube(
            &ops,
            &z_prev,
            &dvector![3.0, -1.0],
            &dvector![0.7],
            &ReductionPolicy::unbounded(),
        )
        .unwrap();
        let acl = &nominal.a_bar + &nominal.b_bar * &k;
        let want = minkowski_sum(&linear_map(&acl, &z_prev).unwrap(), &small_noise()).unwrap();
        assert!((got.center() - want.center()).amax() < 1e-14);
        assert_eq!(got.generators(), want.generators());
    }

    #[test]
    fn sampled_exact_errors_stay_inside_propagated_tube() {
        let (m_d, nominal, ops) = small_ops();
        // True plant: a non-center member of the model set.
        let member = {
            let mut c = m_d.center().clone();
            c += m_d.generators()[0].scale(0.9);
            c -= m_d.generators()[1].scale(0.6);
            c
        };
        assert!(crate::setalg::mz_contains(&m_d, &member).unwrap());
        let plant = PlantModel::new(
            member.columns(0, 2).into_owned(),
            member.columns(2, 1).into_owned(),
            small_noise(),
        )
        .unwrap();
        let k = ops.k.clone();
        let e0 = dvector![0.1, -0.05];
        let traj = vec![
            (dvector![2.0, -1.0], dvector![0.5]),
            (dvector![1.5, -0.5], dvector![-0.3]),
            (dvector![1.0, 0.0], dvector![0.2]),
        ];
        let exact = exact_error_zonotope(&plant, &nominal, &k, &e0, &traj, 3).unwrap();

        for policy in [ReductionPolicy::unbounded(), ReductionPolicy::girard(2)] {
            let mut tube = Zonotope::singleton(e0.clone());
            for (x_bar, u_bar) in &traj {
                tube = propagate_error_tube(&ops, &tube, x_bar, u_bar, &policy).unwrap();
            }
            let mut rng = rng_for(21, "tube-exact-in-approx", 0);
            for _ in 0..200 {
                let p = sample_point(&exact, &mut rng);
                assert!(
                    contains_point(&tube, &p).unwrap(),
                    "exact point escaped the tube under {policy:?}"
                );
            }
        }
    }

    #[test]
    fn worst_case_horizon_zero_is_zero_singleton() {
        let (_, _, ops) = small_ops();
        let zx = Zonotope::from_box(dvector![0.0, 0.0], &dvector![4.0, 2.0]).unwrap();
        let zu = Zonotope::from_box(dvector![0.0], &dvector![1.0]).unwrap();
        let seq =
            worst_case_tube_sequence(&ops, &zx, &zu, 0, &ReductionPolicy::girard(2)).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq[0].center(), &dvector![0.0, 0.0]);
        assert_eq!(seq[0].num_generators(), 0);
    }

    #[test]
    fn worst_case_matches_geometric_series_for_exact_scalar_model() {
        // Singleton model set at a contraction: radii follow Σ ρᵏ·r_w.
        let m_d = MatrixZonotope::singleton(dmatrix![0.5, 0.0]);
        let nominal = NominalModel::center_of(&m_d).unwrap();
        let noise = Zonotope::new(dvector![0.0], dmatrix![1.0]).unwrap();
        let ops = TubeOperators::new(&m_d, &nominal, dmatrix![0.0], noise).unwrap();
        let zx = Zonotope::from_box(dvector![0.0], &dvector![10.0]).unwrap();
        let zu = Zonotope::from_box(dvector![0.0], &dvector![1.0]).unwrap();
        let steps = (0.01f64.ln() / 0.5f64.ln()).ceil() as usize; // 7
        let seq =
            worst_case_tube_sequence(&ops, &zx, &zu, steps, &ReductionPolicy::unbounded()).unwrap();
        let limit = 1.0 / (1.0 - 0.5);
        let last = seq.last().unwrap().radius()[0];
        assert!((last - limit).abs() / limit < 0.01, "radius {last} vs limit {limit}");
        // Exact partial sum at every step.
        for (t, z) in seq.iter().enumerate() {
            let want = 2.0 * (1.0 - 0.5f64.powi(t as i32));
            assert!((z.radius().get(0).copied().unwrap_or(0.0) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn worst_case_detects_divergence() {
        let m_d = MatrixZonotope::singleton(dmatrix![1.2, 0.0]);
        let nominal = NominalModel::center_of(&m_d).unwrap();
        let noise = Zonotope::new(dvector![0.0], dmatrix![1.0]).unwrap();
        let ops = TubeOperators::new(&m_d, &nominal, dmatrix![0.0], noise).unwrap();
        let zx = Zonotope::from_box(dvector![0.0], &dvector![1.0]).unwrap();
        let zu = Zonotope::from_box(dvector![0.0], &dvector![1.0]).unwrap();
        let err = worst_case_tube_sequence(&ops, &zx, &zu, 200, &ReductionPolicy::girard(1))
            .unwrap_err();
        match err {
            Error::TubeDivergent { radius, threshold, .. } => {
                assert!(radius > threshold);
                assert_eq!(threshold, 1000.0);
            }
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn truncated_single_term_and_unrolling_identity() {
        let (_, _, ops) = small_ops();
        let pair = (dvector![2.0, -1.0], dvector![0.5]);
        let policy = ReductionPolicy::unbounded();

        // k0 = 1: exactly m_delta·[x̄; ū] ⊕ Z_w.
        let got = truncated_tube(&ops, std::slice::from_ref(&pair), 1, &policy).unwrap();
        let want = minkowski_sum(
            &mz_times_zonotope(
                &ops.m_delta,
                &Zonotope::singleton(stack_pair(&pair.0, &pair.1)),
            )
            .unwrap(),
            &ops.noise,
        )
        .unwrap();
        let (gh, wh) = (interval_hull(&got), interval_hull(&want));
        assert!((gh.lower - wh.lower).amax() < 1e-12);
        assert!((gh.upper - wh.upper).amax() < 1e-12);

        // k0 = full elapsed window with e0 = 0 reproduces the recursion.
        let traj = vec![
            (dvector![2.0, -1.0], dvector![0.5]),
            (dvector![1.0, 0.5], dvector![-0.2]),
            (dvector![0.5, 0.25], dvector![0.1]),
        ];
        let mut full = Zonotope::singleton(DVector::zeros(2));
        for (x, u) in &traj {
            full = propagate_error_tube(&ops, &full, x, u, &policy).unwrap();
        }
        let trunc = truncated_tube(&ops, &traj, 3, &policy).unwrap();
        let (fh, th) = (interval_hull(&full), interval_hull(&trunc));
        assert!((fh.lower - th.lower).amax() < 1e-9);
        assert!((fh.upper - th.upper).amax() < 1e-9);

        // Window-length mismatch is rejected.
        assert!(truncated_tube(&ops, &traj, 2, &policy).is_err());
    }

    #[test]
    fn zero_noise_exact_model_gives_zero_tube() {
        let m_d = MatrixZonotope::singleton(dmatrix![0.5, 0.1, 1.0; 0.0, 0.4, 0.5]);
        let nominal = NominalModel::center_of(&m_d).unwrap();
        let noise = Zonotope::singleton(DVector::zeros(2));
        let ops = TubeOperators::new(&m_d, &nominal, dmatrix![-0.1, -0.05], noise).unwrap();
        let mut z = Zonotope::singleton(DVector::zeros(2));
        for _ in 0..5 {
            z = propagate_error_tube(
                &ops,
                &z,
                &dvector![1.0, -2.0],
                &dvector![0.3],
                &ReductionPolicy::girard(2),
            )
            .unwrap();
            assert_eq!(z.center(), &dvector![0.0, 0.0]);
            assert_eq!(z.num_generators(), 0);
        }
    }

    #[test]
    fn bounds_csv_and_json_lines_round_trip() {
        let (_, _, ops) = small_ops();
        let zx = Zonotope::from_box(dvector![0.0, 0.0], &dvector![4.0, 2.0]).unwrap();
        let zu = Zonotope::from_box(dvector![0.0], &dvector![1.0]).unwrap();
        let seq =
            worst_case_tube_sequence(&ops, &zx, &zu, 5, &ReductionPolicy::girard(2)).unwrap();

        let csv = tube_bounds_csv(&seq);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "step,lower1,lower2,upper1,upper2");
        assert_eq!(lines.count(), 6);

        let jsonl = tube_to_json_lines(&seq).unwrap();
        let parsed: Vec<Zonotope> = jsonl
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed.len(), seq.len());
        for (a, b) in parsed.iter().zip(&seq) {
            assert_eq!(a.center(), b.center());
            assert_eq!(a.generators(), b.generators());
        }
    }
}
