//! Run artifacts: event log, telemetry, windows, activities and round reports.
//!
//! Each file is written to a temporary sibling and renamed into place.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::kernel::{EventKind, EventRecord};
use crate::links::WINDOW_CSV_HEADER;
use crate::scenario::OutputSpec;
use crate::sim::{Simulation, TELEMETRY_CSV_HEADER};

pub const EVENTS_CSV_HEADER: [&str; 4] = ["time", "actor_id", "kind", "payload"];
pub const ACTIVITIES_CSV_HEADER: [&str; 5] = ["time", "actor_id", "activity", "status", "reason"];

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn csv_bytes<R, I>(header: &[&str], rows: I) -> io::Result<Vec<u8>>
where
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
    I: IntoIterator<Item = R>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("record serializes");
        out.push(b'\n');
    }
    out
}

pub fn events_jsonl(log: &[EventRecord]) -> Vec<u8> {
    jsonl(log)
}

pub fn events_csv(log: &[EventRecord]) -> io::Result<Vec<u8>> {
    csv_bytes(
        &EVENTS_CSV_HEADER,
        log.iter()
            .map(|r| [r.time.to_string(), r.actor_id.to_string(), r.kind.to_string(), r.flat_payload()]),
    )
}

/// Activity lifecycle rows pulled from the event log.
pub fn activities_csv(log: &[EventRecord]) -> io::Result<Vec<u8>> {
    let get = |r: &EventRecord, k: &str| r.payload.get(k).cloned().unwrap_or_default();
    csv_bytes(
        &ACTIVITIES_CSV_HEADER,
        log.iter()
            .filter(|r| {
                matches!(
                    r.kind,
                    EventKind::ActivityStart | EventKind::ActivityEnd | EventKind::ActivityRefused
                )
            })
            .map(|r| {
                [
                    r.time.to_string(),
                    r.actor_id.to_string(),
                    get(r, "activity"),
                    get(r, "status"),
                    get(r, "reason"),
                ]
            }),
    )
}

pub fn telemetry_csv(sim: &Simulation, id: crate::ActorId) -> io::Result<Vec<u8>> {
    let rows = sim.telemetry(id).unwrap_or(&[]);
    csv_bytes(
        &TELEMETRY_CSV_HEADER,
        rows.iter().map(|r| {
            [
                r.time.to_string(),
                r.charge_j.to_string(),
                r.temperature_k.to_string(),
                r.illuminated.to_string(),
            ]
        }),
    )
}

pub fn windows_csv(windows: &[crate::links::Window]) -> io::Result<Vec<u8>> {
    csv_bytes(&WINDOW_CSV_HEADER, windows.iter().map(|w| w.csv_row()))
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    seed: u64,
    until_s: f64,
    events: usize,
    files: Vec<ManifestEntry>,
}

/// Writes every artifact of a finished run into `out`, returning the paths.
pub fn write_outputs(
    sim: &Simulation,
    out: &Path,
    opts: &OutputSpec,
    scenario_name: &str,
    seed: u64,
) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let log = sim.log();
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    if opts.events_jsonl {
        files.push(("events.jsonl".into(), events_jsonl(log)));
    }
    if opts.events_csv {
        files.push(("events.csv".into(), events_csv(log)?));
    }
    if opts.telemetry {
        for id in sim.spacecraft_ids() {
            files.push((format!("telemetry_{id}.csv"), telemetry_csv(sim, id)?));
        }
    }
    files.push(("windows.csv".into(), windows_csv(&sim.windows())?));
    files.push(("activities.csv".into(), activities_csv(log)?));
    files.push(("rounds.jsonl".into(), jsonl(sim.round_reports())));

    let manifest = Manifest {
        scenario: scenario_name,
        seed,
        until_s: sim.clock(),
        events: log.len(),
        files: files
            .iter()
            .map(|(name, bytes)| ManifestEntry {
                file: name.clone(),
                bytes: bytes.len(),
                sha256: hex(&Sha256::digest(bytes)),
            })
            .collect(),
    };
    let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    text.push(b'\n');
    files.push(("manifest.json".into(), text));

    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = out.join(name);
        write_atomic(&path, &bytes)?;
        log::debug!("wrote {} ({} bytes)", path.display(), bytes.len());
        written.push(path);
    }
    Ok(written)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
