//! CSV and report output.
//!
//! Numbers are written in their shortest round-trip form, so a written
//! trajectory reads back bit-identically and repeated runs are byte-identical.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::analysis::FdPoint;
use crate::error::{config, Result};
use crate::safety::Slacks;
use crate::scenario::RunOutcome;
use crate::simulator::{Topology, Trajectory, TrajectoryMeta};

/// Shortest round-trip decimal; scientific notation outside `[1e-4, 1e15)`.
pub fn format_number(x: f64) -> String {
    let m = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&m) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Columns `t, s_1..s_n, v_1..v_n, u_1..u_n, v_0, phi, V`.
pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["s", "v", "u"] {
        h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    h.extend(["v_0", "phi", "V"].map(String::from));
    h
}

/// `phi` and `lyapunov` must have one entry per sample (NaN where undefined).
pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory, phi: &[f64], lyapunov: &[f64]) -> Result<()> {
    if phi.len() != traj.len() || lyapunov.len() != traj.len() {
        return Err(config("phi and V columns must match the trajectory length"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trajectory_header(traj.n))?;
    let mut row = Vec::with_capacity(3 * traj.n + 4);
    for j in 0..traj.len() {
        row.clear();
        row.push(format_number(traj.times[j]));
        for block in [traj.s_at(j), traj.v_at(j), traj.u_at(j)] {
            row.extend(block.iter().map(|x| format_number(*x)));
        }
        row.extend([traj.v0[j], phi[j], lyapunov[j]].map(format_number));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory_csv`]. The topology is
/// unknown to the file and is set to `Open`; callers substitute the scenario's.
pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let n = header.iter().filter(|h| h.starts_with("s_")).count();
    if n == 0 || header != trajectory_header(n) {
        return Err(config("unexpected trajectory CSV header"));
    }
    let mut traj = Trajectory {
        n,
        topology: Topology::Open,
        times: Vec::new(),
        s: Vec::new(),
        v: Vec::new(),
        u: Vec::new(),
        v0: Vec::new(),
        meta: TrajectoryMeta { output_stride: 1, ..TrajectoryMeta::default() },
    };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| config(format!("row {}: {e}", line + 2)))?;
        traj.times.push(vals[0]);
        traj.s.extend_from_slice(&vals[1..=n]);
        traj.v.extend_from_slice(&vals[n + 1..=2 * n]);
        traj.u.extend_from_slice(&vals[2 * n + 1..=3 * n]);
        traj.v0.push(vals[3 * n + 1]);
    }
    if traj.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(config("trajectory times must be strictly increasing"));
    }
    traj.meta.dt = if traj.times.len() > 1 { traj.times[1] - traj.times[0] } else { 0.0 };
    Ok(traj)
}

pub fn write_fd_csv<W: Write>(w: W, points: &[FdPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rho", "v", "Q", "rho_vmax"])?;
    for p in points {
        out.write_record([p.rho, p.v, p.q, p.rho_vmax].map(format_number))?;
    }
    out.flush()?;
    Ok(())
}

/// Per-sample minimum slack of each constraint family.
pub fn write_slack_csv<W: Write>(w: W, times: &[f64], rows: &[Slacks]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "gap", "relative_gap", "speed_positive", "speed_limit"])?;
    for (t, r) in times.iter().zip(rows) {
        out.write_record([*t, r.gap, r.relative_gap, r.speed_positive, r.speed_limit].map(format_number))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `<name>_trajectory.csv`, `<name>_slack.csv` and `<name>_report.txt` into `dir`.
pub fn write_outcome(dir: &Path, outcome: &RunOutcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let name = &outcome.scenario_name;
    let traj_path = dir.join(format!("{name}_trajectory.csv"));
    let slack_path = dir.join(format!("{name}_slack.csv"));
    let report_path = dir.join(format!("{name}_report.txt"));
    write_trajectory_csv(
        fs::File::create(&traj_path)?,
        &outcome.trajectory,
        &outcome.safety.phi,
        &outcome.lyapunov,
    )?;
    write_slack_csv(fs::File::create(&slack_path)?, &outcome.trajectory.times, &outcome.safety.rows)?;
    fs::write(&report_path, outcome.report())?;
    Ok(vec![traj_path, slack_path, report_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;

    #[test]
    fn number_format_round_trips() {
        for x in [0.0, -0.0, 1.0, 0.1, 1e-46, -3.25e-5, 27.000000001, 1e20, f64::MIN_POSITIVE] {
            let s = format_number(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_number(1e-46), "1e-46");
        assert_eq!(format_number(27.5), "27.5");
        assert_eq!(format_number(f64::NAN), "NaN");
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let mut cfg = builtin("ring").unwrap();
        cfg.sim.horizon = Some(1.0);
        let out = cfg.validate().unwrap().run().unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &out.trajectory, &out.safety.phi, &out.lyapunov).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,s_1,s_2,s_3,s_4,v_1,v_2,v_3,v_4,u_1,u_2,u_3,u_4,v_0,phi,V\n"));
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times, out.trajectory.times);
        assert_eq!(back.s, out.trajectory.s);
        assert_eq!(back.v, out.trajectory.v);
        assert_eq!(back.u, out.trajectory.u);
        assert_eq!(back.v0, out.trajectory.v0);
    }

    #[test]
    fn rejects_bad_header_and_rows() {
        assert!(read_trajectory_csv("a,b\n1,2\n".as_bytes()).is_err());
        let h = trajectory_header(1).join(",");
        assert!(read_trajectory_csv(format!("{h}\n0,1,2,3,4,x,NaN\n").as_bytes()).is_err());
        assert!(read_trajectory_csv(format!("{h}\n1,1,2,3,4,5,6\n0,1,2,3,4,5,6\n").as_bytes()).is_err());
    }
}
