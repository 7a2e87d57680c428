//! End-to-end experiment pipeline: collect → consistent set → gain → tube
//! → closed loop. Each phase is timed, its artifact written under the
//! output directory, and a versioned summary aggregated at the end.
//! Identical config + seed produce byte-identical numeric artifacts.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use serde::Serialize;

use zonotube::gains::{synthesize_gain, verify_gain, GainCertificate, VerifyOutcome};
use zonotube::ocp::{
    check_recursive_feasibility, run_receding_horizon, FeasibilityReport, RunStatus,
    TubeTrajectory,
};
use zonotube::reach::{build_consistent_set, collect_trajectory, DataSet};
use zonotube::seed::{rng_for, Rng};
use zonotube::setalg::{MatrixZonotope, Zonotope};
use zonotube::tube::{tube_bounds_csv, worst_case_tube_sequence, NominalModel, TubeOperators};

use crate::config::{GainMode, ResolvedConfig};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Pipeline phases in execution order; each maps to a stable exit code so
/// scripted callers can tell failures apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Config,
    Collect,
    ModelSet,
    Gain,
    Tube,
    ClosedLoop,
    Artifacts,
}

impl Phase {
    pub fn exit_code(self) -> i32 {
        match self {
            Phase::Config => 2,
            Phase::Collect => 3,
            Phase::ModelSet => 4,
            Phase::Gain => 5,
            Phase::Tube => 6,
            Phase::ClosedLoop => 7,
            Phase::Artifacts => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Config => "config",
            Phase::Collect => "collect",
            Phase::ModelSet => "model_set",
            Phase::Gain => "gain",
            Phase::Tube => "tube",
            Phase::ClosedLoop => "closed_loop",
            Phase::Artifacts => "artifacts",
        }
    }
}

#[derive(Debug)]
pub struct PhaseError {
    pub phase: Phase,
    pub message: String,
}

impl PhaseError {
    fn new(phase: Phase, message: impl Into<String>) -> Self {
        PhaseError {
            phase,
            message: message.into(),
        }
    }
}

pub type PhaseResult<T> = Result<T, PhaseError>;

#[derive(Debug, Serialize)]
struct PhaseReport {
    name: &'static str,
    wall_ms: f64,
    ok: bool,
}

#[derive(Debug, Serialize)]
struct GainReport {
    mode: &'static str,
    num_samples: u64,
    max_spectral_radius: f64,
    batch_seed: u64,
    k: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct TubeReport {
    steps: usize,
    final_radius: Vec<f64>,
    /// Largest per-coordinate radius change over the last step.
    last_increment: f64,
    /// Hull radius of the k0-step worst-case tube, when k0 is configured.
    #[serde(skip_serializing_if = "Option::is_none")]
    truncated_radius: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct ReplicateSummary {
    pub index: usize,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infeasible_at: Option<usize>,
    pub steps_recorded: usize,
    pub all_feasible: bool,
    pub worst_state_margin: f64,
    pub worst_input_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_violation: Option<(usize, String)>,
    /// Realized stage cost at each executed step.
    pub objective_per_step: Vec<f64>,
    pub total_cost: f64,
    pub initial_norm: f64,
    pub final_norm: f64,
    pub norm_decreased: bool,
}

#[derive(Debug, Serialize)]
struct ErrorRecord {
    phase: &'static str,
    exit_code: i32,
    message: String,
}

/// Everything a scripted caller needs, without parsing logs.
#[derive(Debug, Serialize)]
pub struct Summary {
    schema_version: u32,
    master_seed: u64,
    replicates: usize,
    phases: Vec<PhaseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gain: Option<GainReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tube: Option<TubeReport>,
    closed_loop: Vec<ReplicateSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<ErrorRecord>,
}

impl Summary {
    pub fn all_replicates_feasible(&self) -> bool {
        !self.closed_loop.is_empty() && self.closed_loop.iter().all(|r| r.all_feasible)
    }

    pub fn replicate_reports(&self) -> &[ReplicateSummary] {
        &self.closed_loop
    }
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// `x ‖ u ‖ x⁺` per recorded transition, one row per sample.
pub fn dataset_csv(data: &DataSet) -> String {
    let (n, m, t) = (
        data.x_minus.nrows(),
        data.u_minus.nrows(),
        data.x_minus.ncols(),
    );
    let mut s = String::new();
    let mut cols: Vec<String> = Vec::new();
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=m).map(|i| format!("u{i}")));
    cols.extend((1..=n).map(|i| format!("xplus{i}")));
    s.push_str(&cols.join(","));
    s.push('\n');
    for k in 0..t {
        let mut row: Vec<String> = Vec::new();
        row.extend((0..n).map(|i| data.x_minus[(i, k)].to_string()));
        row.extend((0..m).map(|i| data.u_minus[(i, k)].to_string()));
        row.extend((0..n).map(|i| data.x_plus[(i, k)].to_string()));
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn build_dataset(rc: &ResolvedConfig) -> PhaseResult<DataSet> {
    let mut rng = Rng::seed_from_u64(rc.collect_seed);
    collect_trajectory(
        &rc.plant,
        &rc.x0,
        rc.t_samples,
        &rc.input_law,
        &rc.noise_law,
        &mut rng,
    )
    .map_err(|e| PhaseError::new(Phase::Collect, e.to_string()))
}

pub fn build_model_set(
    rc: &ResolvedConfig,
    data: &DataSet,
) -> PhaseResult<(MatrixZonotope, NominalModel)> {
    let m_d = build_consistent_set(data, &rc.plant.noise, rc.reduce_model_set)
        .map_err(|e| PhaseError::new(Phase::ModelSet, e.to_string()))?;
    let nominal =
        NominalModel::center_of(&m_d).map_err(|e| PhaseError::new(Phase::ModelSet, e.to_string()))?;
    Ok((m_d, nominal))
}

pub fn build_gain(rc: &ResolvedConfig, m_d: &MatrixZonotope) -> PhaseResult<GainCertificate> {
    match &rc.gain_mode {
        GainMode::Verify(k) => match verify_gain(k, m_d, &rc.prob_spec, rc.gain_seed) {
            Ok(VerifyOutcome::Certified(cert)) => Ok(cert),
            Ok(VerifyOutcome::Rejected {
                sample_index,
                spectral_radius,
                ..
            }) => Err(PhaseError::new(
                Phase::Gain,
                format!(
                    "gain rejected: sample {sample_index} has spectral radius {spectral_radius:.6}"
                ),
            )),
            Err(e) => Err(PhaseError::new(Phase::Gain, e.to_string())),
        },
        GainMode::Synthesize { cap } => synthesize_gain(m_d, &rc.prob_spec, *cap, rc.gain_seed)
            .map_err(|e| PhaseError::new(Phase::Gain, e.to_string())),
    }
}

pub fn build_operators(
    rc: &ResolvedConfig,
    m_d: &MatrixZonotope,
    nominal: &NominalModel,
    cert: &GainCertificate,
) -> PhaseResult<TubeOperators> {
    TubeOperators::new(m_d, nominal, cert.k.clone(), rc.plant.noise.clone())
        .map_err(|e| PhaseError::new(Phase::Tube, e.to_string()))
}

pub fn build_tube_table(
    rc: &ResolvedConfig,
    ops: &TubeOperators,
) -> PhaseResult<Vec<Zonotope>> {
    worst_case_tube_sequence(
        ops,
        &rc.ocp_spec.state_constraint,
        &rc.ocp_spec.input_constraint,
        rc.tube_table_steps.max(rc.k0.unwrap_or(0)),
        &rc.policy,
    )
    .map_err(|e| PhaseError::new(Phase::Tube, e.to_string()))
}

fn replicate_summary(
    index: usize,
    traj: &TubeTrajectory,
    report: &FeasibilityReport,
) -> ReplicateSummary {
    let (status, infeasible_at) = match traj.status {
        RunStatus::Completed => ("completed", None),
        RunStatus::InfeasibleAt { step, .. } => ("infeasible", Some(step)),
    };
    let objective_per_step: Vec<f64> = traj.steps.iter().map(|s| s.cost).collect();
    let total_cost: f64 = objective_per_step.iter().sum();
    let initial_norm = traj
        .steps
        .first()
        .map(|s| s.x.norm())
        .unwrap_or(f64::NAN);
    let final_norm = traj.final_state.norm();
    ReplicateSummary {
        index,
        status,
        infeasible_at,
        steps_recorded: traj.steps.len(),
        all_feasible: report.all_feasible,
        worst_state_margin: report.worst_state_margin,
        worst_input_margin: report.worst_input_margin,
        first_violation: report.first_violation.clone(),
        objective_per_step,
        total_cost,
        initial_norm,
        final_norm,
        norm_decreased: final_norm < initial_norm,
    }
}

/// Runs every replicate's closed loop. Replicate `i` draws its noise from
/// the sub-seed (master, "closed-loop", i), so replicates share the model
/// set and gain but never a noise stream.
pub fn run_replicates(
    rc: &ResolvedConfig,
    nominal: &NominalModel,
    ops: &TubeOperators,
    cert: &GainCertificate,
) -> PhaseResult<Vec<(TubeTrajectory, FeasibilityReport)>> {
    let mut slots: Vec<Option<Result<(TubeTrajectory, FeasibilityReport), String>>> =
        (0..rc.replicates).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (index, slot) in slots.iter_mut().enumerate() {
            handles.push(scope.spawn(move || {
                let mut rng = rng_for(rc.master_seed, "closed-loop", index as u64);
                let run = run_receding_horizon(
                    &rc.plant,
                    nominal,
                    ops,
                    cert,
                    &rc.ocp_spec,
                    rc.total_steps,
                    &rc.x0,
                    &rc.noise_law,
                    &mut rng,
                )
                .and_then(|traj| {
                    let report = check_recursive_feasibility(&traj, &rc.ocp_spec)?;
                    Ok((traj, report))
                });
                *slot = Some(run.map_err(|e| e.to_string()));
            }));
        }
        for h in handles {
            h.join().expect("replicate thread panicked");
        }
    });
    let mut out = Vec::with_capacity(rc.replicates);
    for (index, slot) in slots.into_iter().enumerate() {
        match slot.expect("replicate slot filled") {
            Ok(pair) => out.push(pair),
            Err(msg) => {
                return Err(PhaseError::new(
                    Phase::ClosedLoop,
                    format!("replicate {index}: {msg}"),
                ))
            }
        }
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> PhaseResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| PhaseError::new(Phase::Artifacts, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text)
        .map_err(|e| PhaseError::new(Phase::Artifacts, format!("{}: {e}", path.display())))
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> PhaseResult<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| PhaseError::new(Phase::Artifacts, e.to_string()))
}

/// Replicate 0 owns the flagship `trajectory.csv`; later replicates get
/// index-scoped names.
pub fn trajectory_file_name(index: usize) -> String {
    if index == 0 {
        "trajectory.csv".to_string()
    } else {
        format!("trajectory_r{index}.csv")
    }
}

/// The full pipeline. Always returns a summary (with an error record on
/// failure) so the caller can persist it before exiting.
pub fn run_pipeline(rc: &ResolvedConfig) -> (Summary, Option<PhaseError>) {
    let mut summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        master_seed: rc.master_seed,
        replicates: rc.replicates,
        phases: Vec::new(),
        gain: None,
        tube: None,
        closed_loop: Vec::new(),
        error: None,
    };

    macro_rules! phase {
        ($phase:expr, $body:expr) => {{
            let started = Instant::now();
            let result = $body;
            let ok = result.is_ok();
            summary.phases.push(PhaseReport {
                name: $phase.name(),
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
                ok,
            });
            match result {
                Ok(v) => v,
                Err(e) => {
                    summary.error = Some(ErrorRecord {
                        phase: e.phase.name(),
                        exit_code: e.phase.exit_code(),
                        message: e.message.clone(),
                    });
                    return (summary, Some(e));
                }
            }
        }};
    }

    let out = rc.out_dir.as_path();

    let data = phase!(Phase::Collect, {
        build_dataset(rc).and_then(|data| {
            write_text(&out.join("dataset.csv"), &dataset_csv(&data))?;
            Ok(data)
        })
    });

    let (m_d, nominal) = phase!(Phase::ModelSet, {
        build_model_set(rc, &data).and_then(|pair| {
            write_text(&out.join("m_data.json"), &to_pretty_json(&pair.0)?)?;
            Ok(pair)
        })
    });

    let cert = phase!(Phase::Gain, {
        build_gain(rc, &m_d).and_then(|cert| {
            write_text(&out.join("gain_certificate.json"), &to_pretty_json(&cert)?)?;
            Ok(cert)
        })
    });
    summary.gain = Some(GainReport {
        mode: match rc.gain_mode {
            GainMode::Verify(_) => "verify",
            GainMode::Synthesize { .. } => "synthesize",
        },
        num_samples: cert.num_samples,
        max_spectral_radius: cert.max_spectral_radius,
        batch_seed: cert.batch_seed,
        k: rows_of(&cert.k),
    });

    let (ops, tube_seq) = phase!(Phase::Tube, (|| {
        let ops = build_operators(rc, &m_d, &nominal, &cert)?;
        let seq = build_tube_table(rc, &ops)?;
        let table = &seq[..=rc.tube_table_steps];
        write_text(&out.join("tube_bounds.csv"), &tube_bounds_csv(table))?;
        Ok::<_, PhaseError>((ops, seq))
    })());
    let last = tube_seq[rc.tube_table_steps].radius();
    let prev = tube_seq[rc.tube_table_steps - 1].radius();
    summary.tube = Some(TubeReport {
        steps: rc.tube_table_steps,
        final_radius: last.iter().copied().collect(),
        last_increment: (&last - &prev).amax(),
        truncated_radius: rc
            .k0
            .map(|k0| tube_seq[k0].radius().iter().copied().collect()),
    });

    let runs = phase!(Phase::ClosedLoop, (|| {
        let runs = run_replicates(rc, &nominal, &ops, &cert)?;
        for (index, (traj, _)) in runs.iter().enumerate() {
            write_text(&out.join(trajectory_file_name(index)), &traj.to_csv())?;
        }
        Ok::<_, PhaseError>(runs)
    })());
    summary.closed_loop = runs
        .iter()
        .enumerate()
        .map(|(index, (traj, report))| replicate_summary(index, traj, report))
        .collect();

    (summary, None)
}

pub fn write_summary(out_dir: &Path, summary: &Summary) -> PhaseResult<()> {
    write_text(&out_dir.join("summary.json"), &to_pretty_json(summary)?)
}
