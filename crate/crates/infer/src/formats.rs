//! Readers and writers for meshes, snapshots, traces, features, chains,
//! checkpoints, diagnostics and likelihood scans. Every writer replaces
//! its target atomically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use reentry_core::cell::TissueState;
use reentry_core::features::{FeatureVector, FEATURE_LEN};
use reentry_core::geometry::{GeometryParam, Point2};
use reentry_core::mesh::{Domain, Provenance, TriMesh};
use reentry_core::prepace::Snapshot;

use crate::error::InferError;

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), InferError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| InferError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| InferError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| InferError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| InferError::io(path, e))?;
    tmp.persist(path).map_err(|e| InferError::io(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, InferError> {
    std::fs::read_to_string(path).map_err(|e| InferError::io(path, e))
}

fn parse<T: std::str::FromStr>(path: &Path, s: &str, what: &str) -> Result<T, InferError> {
    s.trim().parse().map_err(|_| InferError::format(path, format!("cannot parse {what} from {s:?}")))
}

fn theta_fields(t: &GeometryParam) -> String {
    format!("{} {} {} {} {}", t.a, t.b, t.phi, t.center.x, t.center.y)
}

fn parse_theta(path: &Path, fields: &[&str]) -> Result<GeometryParam, InferError> {
    if fields.len() != 5 {
        return Err(InferError::format(path, "geometry needs a b phi cx cy"));
    }
    let v: Vec<f64> = fields.iter().map(|s| parse(path, s, "geometry")).collect::<Result<_, _>>()?;
    GeometryParam::with_center(v[0], v[1], v[2], Point2::new(v[3], v[4])).map_err(|e| InferError::format(path, e.to_string()))
}

/// Mesh text format: `MVMESH 1`, `nodes N` and `x y` lines, `triangles M`
/// and 0-based `i j k` lines, `snapped K` and one index per line, then the
/// optional keyed lines `dx`, `domain`, `built_for` and `provenance` that
/// node relocation needs.
pub fn mesh_to_string(mesh: &TriMesh) -> String {
    let mut s = String::from("MVMESH 1\n");
    let _ = writeln!(s, "nodes {}", mesh.nodes.len());
    for p in &mesh.nodes {
        let _ = writeln!(s, "{} {}", p.x, p.y);
    }
    let _ = writeln!(s, "triangles {}", mesh.triangles.len());
    for [i, j, k] in &mesh.triangles {
        let _ = writeln!(s, "{i} {j} {k}");
    }
    let _ = writeln!(s, "snapped {}", mesh.snapped.len());
    for i in &mesh.snapped {
        let _ = writeln!(s, "{i}");
    }
    let _ = writeln!(s, "dx {}", mesh.dx);
    let d = mesh.domain;
    let _ = writeln!(s, "domain {} {} {} {}", d.x0, d.y0, d.x1, d.y1);
    match &mesh.built_for {
        Some(t) => {
            let _ = writeln!(s, "built_for {}", theta_fields(t));
        }
        None => s.push_str("built_for none\n"),
    }
    match &mesh.provenance {
        Provenance::Independent => s.push_str("provenance independent\n"),
        Provenance::RelocationFallback => s.push_str("provenance fallback\n"),
        Provenance::Relocated { from } => {
            let _ = writeln!(s, "provenance relocated {}", theta_fields(from));
        }
    }
    s
}

pub fn mesh_from_str(path: &Path, text: &str) -> Result<TriMesh, InferError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| InferError::format(path, format!("missing {what}")));
    if next("header")? != "MVMESH 1" {
        return Err(InferError::format(path, "expected header MVMESH 1"));
    }
    let count = |line: &str, key: &str| -> Result<usize, InferError> {
        match line.split_once(' ') {
            Some((k, n)) if k == key => parse(path, n, key),
            _ => Err(InferError::format(path, format!("expected `{key} <count>`, found {line:?}"))),
        }
    };
    let n = count(next("nodes")?, "nodes")?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let l = next("node")?;
        let (x, y) = l.split_once(' ').ok_or_else(|| InferError::format(path, format!("bad node line {l:?}")))?;
        nodes.push(Point2::new(parse(path, x, "x")?, parse(path, y, "y")?));
    }
    let m = count(next("triangles")?, "triangles")?;
    let mut triangles = Vec::with_capacity(m);
    for _ in 0..m {
        let l = next("triangle")?;
        let v: Vec<u32> = l.split_whitespace().map(|s| parse(path, s, "node index")).collect::<Result<_, _>>()?;
        if v.len() != 3 || v.iter().any(|&i| i as usize >= n) {
            return Err(InferError::format(path, format!("bad triangle line {l:?}")));
        }
        triangles.push([v[0], v[1], v[2]]);
    }
    let k = count(next("snapped")?, "snapped")?;
    let mut snapped = Vec::with_capacity(k);
    for _ in 0..k {
        snapped.push(parse(path, next("snapped index")?, "snapped index")?);
    }
    let mut mesh = TriMesh {
        nodes,
        triangles,
        snapped,
        built_for: None,
        dx: 0.0,
        domain: Domain::default(),
        provenance: Provenance::Independent,
    };
    for l in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        match f.as_slice() {
            ["dx", v] => mesh.dx = parse(path, v, "dx")?,
            ["domain", x0, y0, x1, y1] => {
                mesh.domain = Domain {
                    x0: parse(path, x0, "domain")?,
                    y0: parse(path, y0, "domain")?,
                    x1: parse(path, x1, "domain")?,
                    y1: parse(path, y1, "domain")?,
                }
            }
            ["built_for", "none"] => mesh.built_for = None,
            ["built_for", rest @ ..] => mesh.built_for = Some(parse_theta(path, rest)?),
            ["provenance", "independent"] => mesh.provenance = Provenance::Independent,
            ["provenance", "fallback"] => mesh.provenance = Provenance::RelocationFallback,
            ["provenance", "relocated", rest @ ..] => {
                mesh.provenance = Provenance::Relocated { from: parse_theta(path, rest)? }
            }
            _ => return Err(InferError::format(path, format!("unexpected line {l:?}"))),
        }
    }
    Ok(mesh)
}

pub fn write_mesh(path: &Path, mesh: &TriMesh) -> Result<(), InferError> {
    write_atomic(path, mesh_to_string(mesh).as_bytes())
}

pub fn read_mesh(path: &Path) -> Result<TriMesh, InferError> {
    mesh_from_str(path, &read_text(path)?)
}

const SNAP_MAGIC: &[u8; 8] = b"MVSNAP01";
const SNAP_VERSION: u32 = 1;

/// Little-endian binary snapshot: magic, version, nodes, triangles, time,
/// potential, gate and a length-prefixed metadata string.
pub fn snapshot_to_bytes(snap: &Snapshot) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(SNAP_MAGIC);
    b.extend_from_slice(&SNAP_VERSION.to_le_bytes());
    b.extend_from_slice(&(snap.mesh.nodes.len() as u64).to_le_bytes());
    for p in &snap.mesh.nodes {
        b.extend_from_slice(&p.x.to_le_bytes());
        b.extend_from_slice(&p.y.to_le_bytes());
    }
    b.extend_from_slice(&(snap.mesh.triangles.len() as u64).to_le_bytes());
    for t in &snap.mesh.triangles {
        for i in t {
            b.extend_from_slice(&i.to_le_bytes());
        }
    }
    b.extend_from_slice(&snap.state.t.to_le_bytes());
    for v in snap.state.vm.iter().chain(&snap.state.h) {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&(snap.metadata.len() as u64).to_le_bytes());
    b.extend_from_slice(snap.metadata.as_bytes());
    b
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], InferError> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| InferError::format(self.path, "truncated snapshot"))?;
        self.pos = end;
        Ok(chunk.try_into().expect("chunk has N bytes"))
    }

    fn u32(&mut self) -> Result<u32, InferError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, InferError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, InferError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn len(&mut self) -> Result<usize, InferError> {
        let n = self.u64()? as usize;
        if n > self.bytes.len() {
            return Err(InferError::format(self.path, "count exceeds file size"));
        }
        Ok(n)
    }
}

/// `key=value` lines as a map.
pub fn parse_metadata(text: &str) -> BTreeMap<String, String> {
    text.lines().filter_map(|l| l.split_once('=')).map(|(k, v)| (k.trim().to_string(), v.trim().to_string())).collect()
}

fn metadata_floats(meta: &BTreeMap<String, String>, key: &str) -> Option<Vec<f64>> {
    meta.get(key)?.split(',').map(|s| s.trim().parse().ok()).collect()
}

pub fn snapshot_from_bytes(path: &Path, bytes: &[u8]) -> Result<Snapshot, InferError> {
    let mut c = Cursor { path, bytes, pos: 0 };
    if &c.take::<8>()? != SNAP_MAGIC {
        return Err(InferError::format(path, "not an MVSNAP01 snapshot"));
    }
    let version = c.u32()?;
    if version != SNAP_VERSION {
        return Err(InferError::format(path, format!("unsupported snapshot version {version}")));
    }
    let n = c.len()?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        nodes.push(Point2::new(c.f64()?, c.f64()?));
    }
    let m = c.len()?;
    let mut triangles = Vec::with_capacity(m);
    for _ in 0..m {
        let t = [c.u32()?, c.u32()?, c.u32()?];
        if t.iter().any(|&i| i as usize >= n) {
            return Err(InferError::format(path, "triangle refers to a missing node"));
        }
        triangles.push(t);
    }
    let t = c.f64()?;
    let vm = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
    let h = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
    let len = c.len()?;
    let end = c.pos + len;
    let raw = bytes.get(c.pos..end).ok_or_else(|| InferError::format(path, "truncated metadata"))?;
    if end != bytes.len() {
        return Err(InferError::format(path, "trailing bytes after metadata"));
    }
    let metadata = String::from_utf8(raw.to_vec()).map_err(|_| InferError::format(path, "metadata is not UTF-8"))?;
    let meta = parse_metadata(&metadata);
    let built_for = match (metadata_floats(&meta, "theta"), metadata_floats(&meta, "center")) {
        (Some(t), Some(c)) if t.len() == 3 && c.len() == 2 => {
            GeometryParam::with_center(t[0], t[1], t[2], Point2::new(c[0], c[1])).ok()
        }
        _ => None,
    };
    let domain = match metadata_floats(&meta, "domain") {
        Some(d) if d.len() == 4 => Domain { x0: d[0], y0: d[1], x1: d[2], y1: d[3] },
        _ => Domain::default(),
    };
    let dx = metadata_floats(&meta, "dx").and_then(|v| v.first().copied()).unwrap_or(0.0);
    let mesh = TriMesh { nodes, triangles, snapped: Vec::new(), built_for, dx, domain, provenance: Provenance::Independent };
    Ok(Snapshot { mesh, state: TissueState { vm, h, t }, metadata })
}

pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<(), InferError> {
    write_atomic(path, &snapshot_to_bytes(snap))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, InferError> {
    let bytes = std::fs::read(path).map_err(|e| InferError::io(path, e))?;
    snapshot_from_bytes(path, &bytes)
}

/// Trace matrix as CSV: one row per electrode, 1-based index first.
pub fn traces_to_csv(values: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for (j, row) in values.iter().enumerate() {
        let _ = write!(s, "{}", j + 1);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn read_traces(path: &Path) -> Result<Vec<Vec<f64>>, InferError> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (j, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let mut fields = line.split(',');
        let index: usize = parse(path, fields.next().unwrap_or(""), "electrode index")?;
        if index != j + 1 {
            return Err(InferError::format(path, format!("row {} carries electrode index {index}", j + 1)));
        }
        rows.push(fields.map(|s| parse(path, s, "potential")).collect::<Result<Vec<f64>, _>>()?);
    }
    Ok(rows)
}

/// Sidecar metadata of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub theta_true: [f64; 3],
    pub seed: u64,
    pub sigma2: f64,
    pub tau0: f64,
    pub dtau: f64,
    pub t0: f64,
    pub t_experiment: f64,
    pub gamma: f64,
    pub dx: f64,
    pub dt: f64,
    pub electrodes: Vec<[f64; 3]>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), InferError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, InferError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| InferError::format(path, e.to_string()))
}

/// Path of the JSON sidecar belonging to a trace file.
pub fn sidecar_path(traces: &Path) -> PathBuf {
    traces.with_extension("json")
}

pub fn features_header() -> String {
    let mut h = String::from("period");
    for j in 1..FEATURE_LEN {
        let _ = write!(h, ",rellat_{j}");
    }
    h
}

/// Header line plus one line per feature vector, period first.
pub fn features_to_csv(rows: &[FeatureVector]) -> String {
    let mut s = features_header();
    s.push('\n');
    for f in rows {
        let line: Vec<String> = f.to_array().iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureVector>, InferError> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(features_header().as_str()) {
        return Err(InferError::format(path, "unexpected feature header"));
    }
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|s| parse(path, s, "feature")).collect::<Result<_, _>>()?;
            let arr: [f64; FEATURE_LEN] =
                v.try_into().map_err(|_| InferError::format(path, format!("a feature line needs {FEATURE_LEN} values")))?;
            Ok(FeatureVector::from_array(&arr))
        })
        .collect()
}

/// Discretization covariance and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaDFile {
    pub diagonal: Vec<f64>,
    pub variance: Vec<f64>,
    pub theta_ref: [f64; 3],
    pub dx: f64,
    pub dt: f64,
    pub gamma: f64,
    pub half_width: f64,
    pub step: f64,
    pub count: usize,
    pub inflation: f64,
    pub decimals: i32,
    pub perturbed_a: Vec<f64>,
    pub fallbacks: Vec<usize>,
    pub failures: Vec<SweepFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub index: usize,
    pub reason: String,
}

impl SigmaDFile {
    pub fn diagonal_array(&self, path: &Path) -> Result<[f64; FEATURE_LEN], InferError> {
        let d: [f64; FEATURE_LEN] = self
            .diagonal
            .clone()
            .try_into()
            .map_err(|_| InferError::format(path, format!("diagonal needs {FEATURE_LEN} values")))?;
        if d.iter().any(|v| !(*v >= 0.0)) {
            return Err(InferError::format(path, "diagonal entries must be non-negative"));
        }
        Ok(d)
    }
}

/// One line of a chain file with the full geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainRow {
    pub iter: usize,
    pub theta: [f64; 3],
    pub log_post: f64,
    pub accepted: bool,
    pub fallback: bool,
}

pub const CHAIN_HEADER: &str = "iter,a,b,phi,log_post,accepted,strategy_fallback";

pub fn chain_to_csv(rows: &[ChainRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CHAIN_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.iter, r.theta[0], r.theta[1], r.theta[2], r.log_post, r.accepted as u8, r.fallback as u8
        );
    }
    s
}

pub fn chain_from_csv(path: &Path, text: &str) -> Result<Vec<ChainRow>, InferError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| InferError::format(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CHAIN_HEADER {
        return Err(InferError::format(path, format!("expected header {CHAIN_HEADER}")));
    }
    let flag = |s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(InferError::format(path, format!("expected 0 or 1, found {s:?}"))),
    };
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| InferError::format(path, e.to_string()))?;
        if rec.len() != 7 {
            return Err(InferError::format(path, format!("row {k} has {} fields", rec.len())));
        }
        let row = ChainRow {
            iter: parse(path, &rec[0], "iter")?,
            theta: [parse(path, &rec[1], "a")?, parse(path, &rec[2], "b")?, parse(path, &rec[3], "phi")?],
            log_post: parse(path, &rec[4], "log_post")?,
            accepted: flag(&rec[5])?,
            fallback: flag(&rec[6])?,
        };
        if row.iter != k {
            return Err(InferError::format(path, format!("row {k} is numbered {}", row.iter)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(InferError::format(path, "chain has no rows"));
    }
    Ok(rows)
}

pub fn read_chain(path: &Path) -> Result<Vec<ChainRow>, InferError> {
    chain_from_csv(path, &read_text(path)?)
}

/// Generator position and counters stored with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub seed: u64,
    /// Word position of the generator, as a decimal string.
    pub word_pos: String,
    pub iterations: usize,
    pub strategy: String,
    pub free: Vec<usize>,
}

/// A chain checkpoint: chain rows, generator state and current mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub rows: Vec<ChainRow>,
    pub state: CheckpointState,
    pub mesh: Option<TriMesh>,
}

fn staging(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    dir.with_file_name(name)
}

/// Writes the checkpoint into a staging directory and swaps it in, so a
/// reader sees either the old or the new checkpoint in full.
pub fn write_checkpoint(dir: &Path, cp: &Checkpoint) -> Result<(), InferError> {
    let new = staging(dir, ".new");
    let old = staging(dir, ".old");
    if new.exists() {
        std::fs::remove_dir_all(&new).map_err(|e| InferError::io(&new, e))?;
    }
    std::fs::create_dir_all(&new).map_err(|e| InferError::io(&new, e))?;
    write_atomic(&new.join("chain.csv"), chain_to_csv(&cp.rows).as_bytes())?;
    if let Some(mesh) = &cp.mesh {
        write_mesh(&new.join("mesh.mvmesh"), mesh)?;
    }
    write_json(&new.join("state.json"), &cp.state)?;
    if dir.exists() {
        if old.exists() {
            std::fs::remove_dir_all(&old).map_err(|e| InferError::io(&old, e))?;
        }
        std::fs::rename(dir, &old).map_err(|e| InferError::io(dir, e))?;
    }
    std::fs::rename(&new, dir).map_err(|e| InferError::io(dir, e))?;
    if old.exists() {
        std::fs::remove_dir_all(&old).map_err(|e| InferError::io(&old, e))?;
    }
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint, InferError> {
    let old = staging(dir, ".old");
    let dir = if !dir.exists() && old.exists() { old.as_path() } else { dir };
    let state: CheckpointState = read_json(&dir.join("state.json"))?;
    let rows = read_chain(&dir.join("chain.csv"))?;
    if rows.len() != state.iterations + 1 {
        return Err(InferError::format(
            dir,
            format!("checkpoint holds {} rows but records {} iterations", rows.len(), state.iterations),
        ));
    }
    let mesh_path = dir.join("mesh.mvmesh");
    let mesh = if mesh_path.exists() { Some(read_mesh(&mesh_path)?) } else { None };
    Ok(Checkpoint { rows, state, mesh })
}

/// `strategy,a,b,phi,log_likelihood,nodes,provenance` lines of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub strategy: String,
    pub theta: [f64; 3],
    pub log_likelihood: f64,
    pub nodes: usize,
    pub provenance: String,
}

pub const SCAN_HEADER: &str = "strategy,a,b,phi,log_likelihood,nodes,provenance";

pub fn scan_to_csv(rows: &[ScanRow]) -> String {
    let mut s = String::from(SCAN_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.strategy, r.theta[0], r.theta[1], r.theta[2], r.log_likelihood, r.nodes, r.provenance
        );
    }
    s
}

pub fn provenance_name(p: &Provenance) -> &'static str {
    match p {
        Provenance::Independent => "independent",
        Provenance::Relocated { .. } => "relocated",
        Provenance::RelocationFallback => "fallback",
    }
}

/// Builds a CSV document from a header and rows of displayable fields.
pub fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}
