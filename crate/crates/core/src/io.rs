//! CSV readers and writers for logs, command scripts and trajectories.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{DrfError, Result};
use crate::vehicle::{ControlCommand, LogRecord, Pose, Trajectory, VehicleState};

pub const LOG_HEADER: [&str; 9] = ["t", "throttle", "brake", "steering", "speed", "acceleration", "heading", "x", "y"];
pub const TRAJECTORY_HEADER: [&str; 7] = ["t", "x", "y", "heading", "speed", "sigma_x", "sigma_y"];

/// Parsed log plus the number of rows dropped for violating invariants.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedLog {
    pub records: Vec<LogRecord>,
    pub dropped: usize,
}

fn parse_err(path: &Path, line: u64, reason: impl Into<String>) -> DrfError {
    DrfError::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

struct Columns {
    names: Vec<String>,
}

impl Columns {
    fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn read_table(reader: impl Read, path: &Path) -> Result<(Columns, Vec<(u64, Vec<f64>)>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    if names.iter().all(|n| n.is_empty()) {
        return Ok((Columns { names }, Vec::new()));
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != names.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", names.len(), rec.len())));
        }
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(path, line, format!("not a number: {f:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, vals));
    }
    Ok((Columns { names }, rows))
}

/// Reads a log CSV. The header must be exactly `t,throttle,brake,steering,speed,acceleration,heading,x,y`.
pub fn read_log(path: impl AsRef<Path>) -> Result<ParsedLog> {
    let path = path.as_ref();
    read_log_from(File::open(path)?, path)
}

pub fn read_log_from(reader: impl Read, path: &Path) -> Result<ParsedLog> {
    let (cols, rows) = read_table(reader, path)?;
    if cols.names.iter().all(|n| n.is_empty()) {
        return Ok(ParsedLog::default());
    }
    if cols.names != LOG_HEADER {
        return Err(parse_err(path, 1, format!("header must be {}, found {}", LOG_HEADER.join(","), cols.names.join(","))));
    }
    let mut out = ParsedLog::default();
    for (_, v) in rows {
        let rec = LogRecord {
            t: v[0],
            command: ControlCommand {
                throttle: v[1],
                brake: v[2],
                steering: v[3],
            },
            state: VehicleState {
                speed: v[4],
                acceleration: v[5],
                heading: v[6],
            },
            pose: Pose {
                x: v[7],
                y: v[8],
                heading: v[6],
            },
        };
        if rec.validate().is_ok() {
            out.records.push(rec);
        } else {
            out.dropped += 1;
        }
    }
    Ok(out)
}

pub fn write_log(path: impl AsRef<Path>, records: &[LogRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_log_to(&mut f, records)?;
    f.flush()?;
    Ok(())
}

pub fn write_log_to(w: &mut impl Write, records: &[LogRecord]) -> Result<()> {
    writeln!(w, "{}", LOG_HEADER.join(","))?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            r.command.throttle,
            r.command.brake,
            r.command.steering,
            r.state.speed,
            r.state.acceleration,
            r.state.heading,
            r.pose.x,
            r.pose.y
        )?;
    }
    Ok(())
}

/// Command script for replay: a fixed-step command sequence and the state
/// and pose at its first tick.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandScript {
    pub t0: f64,
    pub dt: f64,
    pub commands: Vec<ControlCommand>,
    pub start_pose: Pose,
    pub start_state: VehicleState,
}

/// Reads `t,throttle,brake,steering` plus any of the optional columns
/// `speed,acceleration,heading,x,y`, whose first-row values give the
/// initial state (missing ones default to zero). Full log CSVs qualify.
pub fn read_commands(path: impl AsRef<Path>) -> Result<CommandScript> {
    let path = path.as_ref();
    let (cols, rows) = read_table(File::open(path)?, path)?;
    let need = |name: &str| cols.position(name).ok_or_else(|| parse_err(path, 1, format!("missing column {name:?}")));
    let (ti, thi, bi, si) = (need("t")?, need("throttle")?, need("brake")?, need("steering")?);
    let first = rows.first().ok_or_else(|| parse_err(path, 2, "no command rows"))?;
    let opt = |name: &str| cols.position(name).map(|i| first.1[i]).unwrap_or(0.0);
    let mut commands = Vec::with_capacity(rows.len());
    for (line, v) in &rows {
        let c = ControlCommand::new(v[thi], v[bi], v[si]).map_err(|e| parse_err(path, *line, e.to_string()))?;
        commands.push(c);
    }
    let ts: Vec<f64> = rows.iter().map(|(_, v)| v[ti]).collect();
    let dt = if ts.len() > 1 { ts[1] - ts[0] } else { crate::vehicle::DEFAULT_DT };
    for (k, w) in ts.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 || !(w[1] > w[0]) {
            return Err(parse_err(path, rows[k + 1].0, "timestamps must advance by a constant step"));
        }
    }
    let heading = opt("heading");
    let start_state = VehicleState {
        speed: opt("speed"),
        acceleration: opt("acceleration"),
        heading,
    };
    start_state.validate().map_err(|e| parse_err(path, first.0, e.to_string()))?;
    Ok(CommandScript {
        t0: ts[0],
        dt,
        commands,
        start_pose: Pose::new(opt("x"), opt("y"), heading),
        start_state,
    })
}

/// Trajectory with optional per-tick world-frame standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryFile {
    pub trajectory: Trajectory,
    pub sigmas: Option<Vec<[f64; 2]>>,
}

/// Reads any CSV with `t,x,y` columns; `heading`, `speed` and
/// `sigma_x,sigma_y` are picked up when present.
pub fn read_trajectory(path: impl AsRef<Path>) -> Result<TrajectoryFile> {
    let path = path.as_ref();
    let (cols, rows) = read_table(File::open(path)?, path)?;
    let need = |name: &str| cols.position(name).ok_or_else(|| parse_err(path, 1, format!("missing column {name:?}")));
    let (ti, xi, yi) = (need("t")?, need("x")?, need("y")?);
    let hi = cols.position("heading");
    let si = cols.position("speed");
    let sig = cols.position("sigma_x").zip(cols.position("sigma_y"));
    let ts = rows.iter().map(|(_, v)| v[ti]).collect();
    let poses = rows
        .iter()
        .map(|(_, v)| Pose::new(v[xi], v[yi], hi.map(|i| v[i]).unwrap_or(0.0)))
        .collect();
    let states = si.map(|s| {
        rows.iter()
            .map(|(_, v)| VehicleState {
                speed: v[s],
                acceleration: 0.0,
                heading: hi.map(|i| v[i]).unwrap_or(0.0),
            })
            .collect()
    });
    let trajectory = Trajectory::new(ts, poses, states).map_err(|e| parse_err(path, 1, e.to_string()))?;
    let sigmas = sig.map(|(a, b)| rows.iter().map(|(_, v)| [v[a], v[b]]).collect());
    Ok(TrajectoryFile { trajectory, sigmas })
}

pub fn write_trajectory(path: impl AsRef<Path>, traj: &Trajectory, sigmas: &[[f64; 2]]) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    writeln!(w, "{}", TRAJECTORY_HEADER.join(","))?;
    let states = traj.states();
    for (k, (t, p)) in traj.timestamps().iter().zip(traj.poses()).enumerate() {
        let speed = states.map(|s| s[k].speed).unwrap_or(0.0);
        let s = sigmas.get(k).copied().unwrap_or([0.0, 0.0]);
        writeln!(w, "{},{},{},{},{},{},{}", t, p.x, p.y, p.heading, speed, s[0], s[1])?;
    }
    w.flush()?;
    Ok(())
}
