//! Trajectory export: per-episode x/y polylines and track boundaries as CSV,
//! or one SVG overlaying everything.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::record::{EpisodeRecord, Mode};
use crate::track::TrackGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Svg,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "svg" => Ok(Self::Svg),
            other => Err(Error::Usage(format!(
                "unknown export format {other:?} (csv or svg)"
            ))),
        }
    }
}

/// Loads `episode_*.jsonl` in name order and `track.txt` if present.
pub fn load_records(dir: &Path) -> Result<(Vec<EpisodeRecord>, Option<TrackGeometry>)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "jsonl")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("episode_"))
        })
        .collect();
    paths.sort();
    let records = paths
        .iter()
        .map(|p| EpisodeRecord::load(p))
        .collect::<Result<Vec<_>>>()?;
    let track_path = dir.join("track.txt");
    let track = if track_path.exists() {
        Some(TrackGeometry::parse(&fs::read_to_string(track_path)?)?)
    } else {
        None
    };
    Ok((records, track))
}

pub fn trajectory_csv(records: &[EpisodeRecord]) -> String {
    let mut s = String::from("episode,step,mode,x,y,yaw,v\n");
    for r in records {
        for st in &r.steps {
            let mode = match st.mode {
                Mode::Forward => "FORWARD",
                Mode::Resetting => "RESETTING",
            };
            let _ = writeln!(
                s,
                "{},{},{mode},{},{},{},{}",
                st.episode, st.step, st.state.x, st.state.y, st.state.yaw, st.state.v
            );
        }
    }
    s
}

pub fn track_csv(track: &TrackGeometry) -> String {
    let mut s = String::from("boundary,index,x,y\n");
    for (name, poly) in [("outer", track.outer()), ("inner", track.inner())] {
        for (i, p) in poly.iter().enumerate() {
            let _ = writeln!(s, "{name},{i},{},{}", p.x, p.y);
        }
    }
    s
}

fn bounds(points: impl Iterator<Item = Vec2>) -> Option<(Vec2, Vec2)> {
    points.fold(None, |acc, p| match acc {
        None => Some((p, p)),
        Some((lo, hi)) => Some((
            Vec2::new(lo.x.min(p.x), lo.y.min(p.y)),
            Vec2::new(hi.x.max(p.x), hi.y.max(p.y)),
        )),
    })
}

pub fn svg(records: &[EpisodeRecord], track: Option<&TrackGeometry>) -> String {
    let traj = records
        .iter()
        .flat_map(|r| r.steps.iter().map(|s| Vec2::new(s.state.x, s.state.y)));
    let walls = track
        .into_iter()
        .flat_map(|t| t.outer().iter().chain(t.inner()).copied());
    let (lo, hi) =
        bounds(traj.chain(walls)).unwrap_or((Vec2::new(-1.0, -1.0), Vec2::new(1.0, 1.0)));
    let pad = 0.1;
    let (w, h) = (hi.x - lo.x + 2.0 * pad, hi.y - lo.y + 2.0 * pad);
    let px = |p: Vec2| (p.x - lo.x + pad, hi.y - p.y + pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.4} {h:.4}\" width=\"800\" height=\"{:.0}\">",
        800.0 * h / w
    );
    let polyline = |s: &mut String, pts: &[Vec2], closed: bool, style: &str| {
        let mut d = String::new();
        for p in pts {
            let (x, y) = px(*p);
            let _ = write!(d, "{x:.4},{y:.4} ");
        }
        let tag = if closed { "polygon" } else { "polyline" };
        let _ = writeln!(
            s,
            "<{tag} points=\"{}\" fill=\"none\" {style}/>",
            d.trim_end()
        );
    };
    if let Some(t) = track {
        polyline(
            &mut s,
            t.outer(),
            true,
            "stroke=\"black\" stroke-width=\"0.02\"",
        );
        polyline(
            &mut s,
            t.inner(),
            true,
            "stroke=\"black\" stroke-width=\"0.02\"",
        );
    }
    let n = records.len().max(1);
    for (i, r) in records.iter().enumerate() {
        let hue = 360.0 * i as f64 / n as f64;
        let fwd: Vec<Vec2> = r
            .forward_steps()
            .map(|s| Vec2::new(s.state.x, s.state.y))
            .collect();
        let reset: Vec<Vec2> = r
            .steps
            .iter()
            .filter(|s| s.mode == Mode::Resetting)
            .map(|s| Vec2::new(s.state.x, s.state.y))
            .collect();
        polyline(
            &mut s,
            &fwd,
            false,
            &format!("stroke=\"hsl({hue:.0},70%,45%)\" stroke-width=\"0.01\""),
        );
        if !reset.is_empty() {
            polyline(
                &mut s,
                &reset,
                false,
                "stroke=\"gray\" stroke-width=\"0.01\" stroke-dasharray=\"0.03\"",
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the export next to the records (or into `out`); returns the files
/// written.
pub fn export_traces(
    records_dir: &Path,
    format: ExportFormat,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let (records, track) = load_records(records_dir)?;
    let out = out.unwrap_or(records_dir);
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    match format {
        ExportFormat::Csv => {
            let p = out.join("trajectories.csv");
            fs::write(&p, trajectory_csv(&records))?;
            written.push(p);
            if let Some(t) = &track {
                let p = out.join("track.csv");
                fs::write(&p, track_csv(t))?;
                written.push(p);
            }
        }
        ExportFormat::Svg => {
            let p = out.join("trajectories.svg");
            fs::write(&p, svg(&records, track.as_ref()))?;
            written.push(p);
        }
    }
    Ok(written)
}
