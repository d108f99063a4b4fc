//! CSV export of traces and sweeps.
//!
//! Trace columns: `t, s, f, err_s, err_q, u_norm`, then `x_1..x_N`,
//! `lambda_1..lambda_N` and `s_hat_1..s_hat_N`. Sweep columns:
//! `N, l, lambda_G, n, seed, t_cons, t_cons_matrix, t_feasible, t_eps`.
//! Missing events are empty cells.

use std::io::Write;

use crate::error::Result;
use crate::experiment::SweepRow;
use crate::sim::SimulationTrace;

pub fn trace_header(n_agents: usize) -> String {
    let mut cols: Vec<String> = ["t", "s", "f", "err_s", "err_q", "u_norm"].iter().map(|c| c.to_string()).collect();
    for prefix in ["x", "lambda", "s_hat"] {
        cols.extend((1..=n_agents).map(|i| format!("{prefix}_{i}")));
    }
    cols.join(",")
}

pub fn write_trace_csv<W: Write>(trace: &SimulationTrace, mut w: W) -> Result<()> {
    writeln!(w, "{}", trace_header(trace.n_agents()))?;
    for k in 0..trace.len() {
        let mut row = vec![
            trace.times[k],
            trace.s[k],
            trace.objective[k],
            trace.err_s[k],
            trace.err_q[k],
            trace.u_norm[k],
        ];
        row.extend(&trace.x[k]);
        row.extend(trace.lambda(k));
        row.extend(&trace.s_hat[k]);
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const SWEEP_HEADER: &str = "N,l,lambda_G,n,seed,t_cons,t_cons_matrix,t_feasible,t_eps";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.n_agents,
            r.n_edges,
            r.algebraic_connectivity,
            r.dim,
            r.seed,
            opt(r.t_cons),
            opt(r.t_cons_matrix),
            opt(r.t_feasible),
            opt(r.t_eps)
        )?;
    }
    Ok(())
}
