//! Complexity table: the exact vertex count a min-max formulation must
//! enumerate, against the per-step row count of the tube program, which
//! does not depend on the horizon.

use zonotube::reach::minmax_vertex_bound;

/// Inequality/equality rows the tube program adds per prediction step:
/// `2n` state-inclusion rows, `2m` input-inclusion rows, `n` dynamics
/// equalities, and `2m` input-cost epigraph rows.
pub fn tube_rows_per_step(n: usize, m: usize) -> usize {
    3 * n + 4 * m
}

/// CSV table `horizon,minmax_vertex_bound,tube_rows_per_step`, one row per
/// requested horizon. The first column grows with the horizon; the last is
/// constant by construction.
pub fn bound_report(n: usize, m: usize, t: usize, gamma_w: usize, horizons: &[usize]) -> String {
    let rows = tube_rows_per_step(n, m);
    let mut s = String::from("horizon,minmax_vertex_bound,tube_rows_per_step\n");
    for &h in horizons {
        let bound = minmax_vertex_bound(n, m, t, gamma_w, h);
        s.push_str(&format!("{h},{bound},{rows}\n"));
    }
    s
}
