//! Plot-data bundle: everything an external plotter needs to reproduce the
//! closed-loop figure — trajectory points, the state-constraint polygon,
//! and one tube rectangle per step. No rendering happens here.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use zonotube::setalg::{interval_hull, zonotope_vertices, Zonotope};

pub const PLOT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotPoint {
    pub t: usize,
    pub x: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub u: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TubeRect {
    pub t: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotBundle {
    pub schema_version: u32,
    /// State-constraint vertices, counter-clockwise.
    pub state_polygon: Vec<Vec<f64>>,
    /// `[lo, hi]` per input coordinate.
    pub input_box: Vec<[f64; 2]>,
    pub trajectory: Vec<PlotPoint>,
    pub tube_rectangles: Vec<TubeRect>,
}

/// Orders planar points counter-clockwise around their centroid.
fn order_polygon(mut pts: Vec<DVector<f64>>) -> Vec<Vec<f64>> {
    let k = pts.len().max(1) as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / k;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / k;
    pts.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.partial_cmp(&tb).expect("finite vertex angles")
    });
    pts.iter().map(|p| vec![p[0], p[1]]).collect()
}

/// Parsed form of the closed-loop CSV (`t, x, x_bar, u, lo/hi pairs, cost`).
pub struct TrajectoryTable {
    pub points: Vec<PlotPoint>,
    pub rects: Vec<TubeRect>,
}

pub fn parse_trajectory_csv(text: &str) -> Result<TrajectoryTable, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("trajectory csv is empty")?;
    let names: Vec<&str> = header.split(',').collect();
    let count_plain = |prefix: &str| {
        names
            .iter()
            .filter(|s| {
                s.strip_prefix(prefix)
                    .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
            })
            .count()
    };
    let n = count_plain("x");
    // Scalar inputs are written as a bare `u` column, wider ones as u1..um.
    let m = if names.contains(&"u") {
        1
    } else {
        count_plain("u")
    };
    let expected = 1 + 2 * n + m + 2 * n + 1;
    if n == 0 || names.len() != expected {
        return Err(format!(
            "trajectory csv header has {} columns, expected {expected} (n = {n}, m = {m})",
            names.len()
        ));
    }
    let mut points = Vec::new();
    let mut rects = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("trajectory csv row {}: {e}", lineno + 2))?;
        if fields.len() != expected {
            return Err(format!(
                "trajectory csv row {} has {} fields, expected {expected}",
                lineno + 2,
                fields.len()
            ));
        }
        let t = fields[0] as usize;
        let x = fields[1..1 + n].to_vec();
        let x_bar = fields[1 + n..1 + 2 * n].to_vec();
        let u = fields[1 + 2 * n..1 + 2 * n + m].to_vec();
        let bounds = &fields[1 + 2 * n + m..1 + 4 * n + m];
        let cost = fields[expected - 1];
        points.push(PlotPoint { t, x, x_bar, u, cost });
        rects.push(TubeRect {
            t,
            lower: (0..n).map(|i| bounds[2 * i]).collect(),
            upper: (0..n).map(|i| bounds[2 * i + 1]).collect(),
        });
    }
    Ok(TrajectoryTable { points, rects })
}

/// Builds the bundle from an existing trajectory artifact plus the
/// constraint sets. A missing artifact is an explicit file-level error; an
/// empty trajectory (header only) yields a constraint-polygon-only bundle.
pub fn emit_plot_data(
    trajectory_path: &Path,
    state_constraint: &Zonotope,
    input_constraint: &Zonotope,
) -> Result<PlotBundle, String> {
    if state_constraint.dim() != 2 {
        return Err(format!(
            "state polygon requires a planar state set, got dimension {}",
            state_constraint.dim()
        ));
    }
    let text = std::fs::read_to_string(trajectory_path)
        .map_err(|e| format!("missing artifact {}: {e}", trajectory_path.display()))?;
    let table = parse_trajectory_csv(&text)?;
    let vertices = zonotope_vertices(state_constraint).map_err(|e| e.to_string())?;
    let hull = interval_hull(input_constraint);
    let input_box = (0..input_constraint.dim())
        .map(|i| [hull.lower[i], hull.upper[i]])
        .collect();
    Ok(PlotBundle {
        schema_version: PLOT_SCHEMA_VERSION,
        state_polygon: order_polygon(vertices),
        input_box,
        trajectory: table.points,
        tube_rectangles: table.rects,
    })
}

fn require_array<'v>(v: &'v Value, key: &str) -> Result<&'v Vec<Value>, String> {
    v.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| format!("bundle field {key}: missing or not an array"))
}

fn numeric_list(v: &Value, what: &str) -> Result<usize, String> {
    let arr = v
        .as_array()
        .ok_or_else(|| format!("{what}: not an array"))?;
    if arr.iter().any(|e| !e.is_number()) {
        return Err(format!("{what}: non-numeric entry"));
    }
    Ok(arr.len())
}

/// Structural check of a serialized bundle; every bundle this module emits
/// must round-trip through it.
pub fn validate_bundle(v: &Value) -> Result<(), String> {
    match v.get("schema_version").and_then(Value::as_u64) {
        Some(s) if s == PLOT_SCHEMA_VERSION as u64 => {}
        other => return Err(format!("bundle field schema_version: {other:?}")),
    }
    for (i, vertex) in require_array(v, "state_polygon")?.iter().enumerate() {
        if numeric_list(vertex, &format!("state_polygon[{i}]"))? != 2 {
            return Err(format!("state_polygon[{i}]: expected a planar point"));
        }
    }
    for (i, pair) in require_array(v, "input_box")?.iter().enumerate() {
        if numeric_list(pair, &format!("input_box[{i}]"))? != 2 {
            return Err(format!("input_box[{i}]: expected [lo, hi]"));
        }
    }
    let mut state_dim = None;
    for (i, p) in require_array(v, "trajectory")?.iter().enumerate() {
        let what = format!("trajectory[{i}]");
        if p.get("t").and_then(Value::as_u64).is_none() {
            return Err(format!("{what}.t: missing or not an integer"));
        }
        let nx = numeric_list(
            p.get("x").ok_or_else(|| format!("{what}.x: missing"))?,
            &format!("{what}.x"),
        )?;
        let nb = numeric_list(
            p.get("x_bar").ok_or_else(|| format!("{what}.x_bar: missing"))?,
            &format!("{what}.x_bar"),
        )?;
        numeric_list(
            p.get("u").ok_or_else(|| format!("{what}.u: missing"))?,
            &format!("{what}.u"),
        )?;
        if p.get("cost").and_then(Value::as_f64).is_none() {
            return Err(format!("{what}.cost: missing or not numeric"));
        }
        if nx != nb {
            return Err(format!("{what}: x and x_bar lengths differ"));
        }
        if *state_dim.get_or_insert(nx) != nx {
            return Err(format!("{what}: inconsistent state dimension"));
        }
    }
    for (i, r) in require_array(v, "tube_rectangles")?.iter().enumerate() {
        let what = format!("tube_rectangles[{i}]");
        if r.get("t").and_then(Value::as_u64).is_none() {
            return Err(format!("{what}.t: missing or not an integer"));
        }
        let nl = numeric_list(
            r.get("lower").ok_or_else(|| format!("{what}.lower: missing"))?,
            &format!("{what}.lower"),
        )?;
        let nu = numeric_list(
            r.get("upper").ok_or_else(|| format!("{what}.upper: missing"))?,
            &format!("{what}.upper"),
        )?;
        if nl != nu {
            return Err(format!("{what}: lower and upper lengths differ"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn preset_state_set() -> Zonotope {
        Zonotope::new(
            DVector::from_column_slice(&[-4.0, 0.0]),
            DMatrix::from_column_slice(2, 2, &[4.0, 0.0, 0.0, 2.0]),
        )
        .unwrap()
    }

    #[test]
    fn preset_polygon_is_the_expected_box() {
        let verts = zonotope_vertices(&preset_state_set()).unwrap();
        let poly = order_polygon(verts);
        assert_eq!(poly.len(), 4);
        let expected = [[-8.0, -2.0], [0.0, -2.0], [0.0, 2.0], [-8.0, 2.0]];
        for corner in expected {
            assert!(
                poly.iter().any(|p| p[0] == corner[0] && p[1] == corner[1]),
                "missing corner {corner:?} in {poly:?}"
            );
        }
        // Counter-clockwise: positive signed area.
        let area: f64 = (0..4)
            .map(|i| {
                let (a, b) = (&poly[i], &poly[(i + 1) % 4]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        assert!(area > 0.0);
    }

    #[test]
    fn empty_trajectory_bundles_polygon_only() {
        let dir = std::env::temp_dir().join("zonotube-plotdata-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trajectory.csv");
        std::fs::write(
            &path,
            "t,x1,x2,xbar1,xbar2,u1,tube_lo1,tube_hi1,tube_lo2,tube_hi2,cost\n",
        )
        .unwrap();
        let input = Zonotope::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let bundle = emit_plot_data(&path, &preset_state_set(), &input).unwrap();
        assert_eq!(bundle.state_polygon.len(), 4);
        assert!(bundle.trajectory.is_empty());
        assert!(bundle.tube_rectangles.is_empty());
        assert_eq!(bundle.input_box, vec![[-1.0, 1.0]]);
        let v = serde_json::to_value(&bundle).unwrap();
        validate_bundle(&v).unwrap();
    }

    #[test]
    fn missing_artifact_is_a_file_level_error() {
        let input = Zonotope::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let err = emit_plot_data(
            Path::new("/nonexistent/trajectory.csv"),
            &preset_state_set(),
            &input,
        )
        .unwrap_err();
        assert!(err.starts_with("missing artifact"), "{err}");
    }

    #[test]
    fn parser_reads_rows_and_validator_rejects_corruption() {
        let text = "t,x1,x2,xbar1,xbar2,u1,tube_lo1,tube_hi1,tube_lo2,tube_hi2,cost\n\
                    0,-5,-2,-5,-2,1.5,-5,-5,-2,-2,29.015\n\
                    1,-3.5,-0.5,-3.6,-0.4,0.25,-3.8,-3.4,-0.6,-0.2,12.5025\n";
        let table = parse_trajectory_csv(text).unwrap();
        assert_eq!(table.points.len(), 2);
        assert_eq!(table.points[1].x, vec![-3.5, -0.5]);
        assert_eq!(table.rects[1].lower, vec![-3.8, -0.6]);
        assert_eq!(table.rects[1].upper, vec![-3.4, -0.2]);

        let bundle = PlotBundle {
            schema_version: PLOT_SCHEMA_VERSION,
            state_polygon: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            input_box: vec![[-1.0, 1.0]],
            trajectory: table.points,
            tube_rectangles: table.rects,
        };
        let mut v = serde_json::to_value(&bundle).unwrap();
        validate_bundle(&v).unwrap();
        v["trajectory"][0]["x"] = serde_json::json!(["oops", 1.0]);
        assert!(validate_bundle(&v).is_err());
    }
}
