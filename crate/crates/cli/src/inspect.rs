//! Human-readable summaries of artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cocycle_core::noise::WienerPath;
use cocycle_core::semiflow::CocycleTrajectory;
use cocycle_core::snapshot::{peek_kind, SnapshotKind};
use cocycle_core::stationary::StationaryPoint;

use crate::artifacts::{verify_manifest, MANIFEST};
use crate::config::ExperimentConfig;
use crate::RunError;

/// Describes a file or an artifact directory.
pub fn inspect(target: &Path) -> Result<String, RunError> {
    if target.is_dir() {
        return inspect_dir(target);
    }
    let bytes = fs::read(target).map_err(|e| RunError::io(format!("{}: {e}", target.display())))?;
    let ext = target.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "json" => json(&bytes),
        "csv" => csv(&bytes),
        "bin" => binary(&bytes),
        "toml" => {
            let text = String::from_utf8_lossy(&bytes);
            let config = ExperimentConfig::parse(&text)?;
            Ok(config.to_toml())
        }
        other => Err(RunError::io(format!("{}: unknown artifact type {other:?}", target.display()))),
    }
}

fn inspect_dir(root: &Path) -> Result<String, RunError> {
    let manifest = root.join(MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(|e| RunError::io(format!("{}: {e}", manifest.display())))?;
    let mut out = text;
    let problems = verify_manifest(root).map_err(RunError::io)?;
    if problems.is_empty() {
        out.push_str("all artifact hashes match\n");
    } else {
        for p in problems {
            let _ = writeln!(out, "mismatch: {p}");
        }
    }
    Ok(out)
}

fn json(bytes: &[u8]) -> Result<String, RunError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(RunError::io)?;
    let mut s = serde_json::to_string_pretty(&value).map_err(RunError::io)?;
    s.push('\n');
    Ok(s)
}

fn csv(bytes: &[u8]) -> Result<String, RunError> {
    let text = String::from_utf8_lossy(bytes);
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let rows: Vec<&str> = lines.filter(|l| !l.is_empty()).collect();
    let mut out = format!("columns: {header}\nrows: {}\n", rows.len());
    if let Some(first) = rows.first() {
        let _ = writeln!(out, "first: {first}");
    }
    if rows.len() > 1 {
        let _ = writeln!(out, "last: {}", rows[rows.len() - 1]);
    }
    Ok(out)
}

fn binary(bytes: &[u8]) -> Result<String, RunError> {
    let kind = peek_kind(bytes).map_err(RunError::io)?;
    Ok(match kind {
        SnapshotKind::WienerPath => {
            let p = WienerPath::from_bytes(bytes).map_err(RunError::io)?;
            let (lo, hi) = p.stored_cells();
            format!(
                "wiener path: seed {}, {} modes, h = {}, cells [{lo}, {hi}], origin cell {}, anchor {}\n",
                p.seed(),
                p.mode_count(),
                p.h(),
                p.origin_cell(),
                p.anchor()
            )
        }
        SnapshotKind::StationaryPoint => {
            let y = StationaryPoint::from_bytes(bytes).map_err(RunError::io)?;
            let s = serde_json::to_string_pretty(&y.summary()).map_err(RunError::io)?;
            format!("stationary point:\n{s}\n")
        }
        SnapshotKind::Trajectory => {
            let t = CocycleTrajectory::from_bytes(bytes).map_err(RunError::io)?;
            format!(
                "trajectory: {} records over [{}, {}], dimension {}, tangents {}, path seed {}\n",
                t.states.len(),
                t.times.first().copied().unwrap_or(0.0),
                t.times.last().copied().unwrap_or(0.0),
                t.states.first().map_or(0, |s| s.len()),
                t.tangents.is_some(),
                t.path_seed
            )
        }
    })
}
