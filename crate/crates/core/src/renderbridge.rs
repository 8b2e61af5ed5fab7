//! Client side of the external render / inpainting service.
//!
//! Grafted trajectories leave the augmentation stage with pending
//! observation tokens. This module turns them into service requests, ships
//! them through a file outbox or an HTTP endpoint, and folds completed
//! results back into graft records.
//!
//! Bookkeeping lives in an append-only JSONL ledger. Each line is one event;
//! the state of a graft is the fold of its events. A crash can leave at most
//! a torn final line, which is dropped when the ledger is reopened.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::apa::{GraftRecord, RenderStatus};
use crate::dataio::{write_atomic, DataError};
use crate::trajmodel::{SceneObject, Trajectory};

pub const ENDPOINT_ENV: &str = "TAILGRAFT_RENDER_ENDPOINT";

pub fn endpoint_from_env() -> Option<String> {
    std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.trim().is_empty())
}

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("graft {0} was already submitted")]
    Duplicate(String),
    #[error("transport failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("service rejected request: {0}")]
    Rejected(String),
    #[error("request for {graft_id} is inconsistent: {reason}")]
    BadRequest { graft_id: String, reason: String },
    #[error("ledger {path} line {line}: {message}")]
    Ledger { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

impl BridgeError {
    pub fn code(&self) -> &'static str {
        match self {
            BridgeError::Duplicate(_) => "renderbridge/duplicate",
            BridgeError::Transport { .. } => "renderbridge/transport",
            BridgeError::Rejected(_) => "renderbridge/rejected",
            BridgeError::BadRequest { .. } => "renderbridge/request",
            BridgeError::Ledger { .. } => "renderbridge/ledger",
            BridgeError::Data(e) => e.code(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, BridgeError::Transport { .. })
    }
}

fn io_err(path: &Path, source: io::Error) -> BridgeError {
    BridgeError::Data(DataError::Io { path: path.to_path_buf(), source })
}

/// Simulation re-render of a grafted scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub graft_id: String,
    pub objects: Vec<SceneObject>,
    pub target_object_id: String,
    pub frame_count: usize,
    #[serde(default)]
    pub camera: Value,
}

impl RenderRequest {
    pub fn from_graft(record: &GraftRecord, grafted: &Trajectory, camera: Value) -> Result<Self, BridgeError> {
        if grafted.traj_id != record.graft_id || grafted.len() != record.segment_end {
            return Err(BridgeError::BadRequest {
                graft_id: record.graft_id.clone(),
                reason: format!("trajectory {} has {} steps, segment ends at {}", grafted.traj_id, grafted.len(), record.segment_end),
            });
        }
        Ok(Self {
            graft_id: record.graft_id.clone(),
            objects: grafted.scene.objects.clone(),
            target_object_id: grafted.scene.target_object_id.clone(),
            frame_count: record.segment_end,
            camera,
        })
    }
}

/// Real-image edit: detect the source object in existing frames and paint
/// the tail object over it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub graft_id: String,
    pub source_obs_refs: Vec<String>,
    pub detect_label: String,
    pub replacement_label: String,
}

impl EditRequest {
    pub fn from_graft(record: &GraftRecord, source: &Trajectory) -> Result<Self, BridgeError> {
        if source.traj_id != record.source_traj_id || source.len() < record.segment_end {
            return Err(BridgeError::BadRequest {
                graft_id: record.graft_id.clone(),
                reason: format!("source {} cannot cover {} frames", source.traj_id, record.segment_end),
            });
        }
        Ok(Self {
            graft_id: record.graft_id.clone(),
            source_obs_refs: source.steps[..record.segment_end].iter().map(|s| s.obs_ref.clone()).collect(),
            detect_label: record.source_asset_label.clone(),
            replacement_label: record.grafted_asset_label.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    Render(RenderRequest),
    Edit(EditRequest),
}

impl Request {
    pub fn graft_id(&self) -> &str {
        match self {
            Request::Render(r) => &r.graft_id,
            Request::Edit(r) => &r.graft_id,
        }
    }

    pub fn frame_count(&self) -> usize {
        match self {
            Request::Render(r) => r.frame_count,
            Request::Edit(r) => r.source_obs_refs.len(),
        }
    }

    fn route(&self) -> &'static str {
        match self {
            Request::Render(_) => "render",
            Request::Edit(_) => "edit",
        }
    }
}

/// A completed job as delivered to the inbox or returned by `GET /jobs/<id>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobResult {
    pub job_id: String,
    pub status: JobStatus,
    #[serde(default)]
    pub obs_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Done,
    Failed,
}

/// One delivery attempt. `Err(true)` is worth retrying, `Err(false)` is not.
pub trait Transport: Sync {
    fn name(&self) -> &'static str;
    fn send(&self, request: &Request) -> Result<String, (bool, String)>;
}

/// Writes `<graft_id>.json` into an outbox directory; the job id is the
/// graft id.
pub struct FileTransport {
    pub outbox: PathBuf,
}

impl Transport for FileTransport {
    fn name(&self) -> &'static str {
        "file"
    }

    fn send(&self, request: &Request) -> Result<String, (bool, String)> {
        let path = self.outbox.join(format!("{}.json", request.graft_id()));
        let mut body = serde_json::to_string_pretty(request).map_err(|e| (false, e.to_string()))?;
        body.push('\n');
        write_atomic(&path, body.as_bytes()).map_err(|e| (true, e.to_string()))?;
        Ok(request.graft_id().to_string())
    }
}

#[derive(Deserialize)]
struct Accepted {
    job_id: String,
}

/// `POST <endpoint>/render` and `/edit`, `GET <endpoint>/jobs/<id>`.
pub struct HttpTransport {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { endpoint: endpoint.trim_end_matches('/').to_string(), agent }
    }

    fn classify(err: ureq::Error) -> (bool, String) {
        match err {
            ureq::Error::Status(code, resp) => {
                let body = resp.into_string().unwrap_or_default();
                (code >= 500 || code == 429, format!("HTTP {code}: {}", body.trim()))
            }
            ureq::Error::Transport(t) => (true, t.to_string()),
        }
    }

    /// `Ok(None)` while the job is still pending.
    pub fn fetch(&self, job_id: &str) -> Result<Option<JobResult>, (bool, String)> {
        let url = format!("{}/jobs/{job_id}", self.endpoint);
        let resp = self.agent.get(&url).call().map_err(Self::classify)?;
        let result: JobResult = resp.into_json().map_err(|e| (false, format!("bad job body: {e}")))?;
        Ok((result.status != JobStatus::Pending).then_some(result))
    }
}

impl Transport for HttpTransport {
    fn name(&self) -> &'static str {
        "http"
    }

    fn send(&self, request: &Request) -> Result<String, (bool, String)> {
        let url = format!("{}/{}", self.endpoint, request.route());
        let resp = self.agent.post(&url).send_json(request).map_err(Self::classify)?;
        let accepted: Accepted = resp.into_json().map_err(|e| (false, format!("bad accept body: {e}")))?;
        Ok(accepted.job_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(200) }
    }
}

impl RetryPolicy {
    /// Delay before attempt `k + 1`, doubling each time.
    pub fn delay(&self, k: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << k.min(16))
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, (bool, String)>) -> Result<T, BridgeError> {
        let attempts = self.attempts.max(1);
        let mut k = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err((false, msg)) => return Err(BridgeError::Rejected(msg)),
                Err((true, msg)) => {
                    k += 1;
                    if k >= attempts {
                        return Err(BridgeError::Transport { attempts: k, last: msg });
                    }
                    log::warn!("transport attempt {k} failed: {msg}");
                    thread::sleep(self.delay(k - 1));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LedgerEvent {
    Submitted { graft_id: String, job_id: String, frame_count: usize, transport: String },
    Rendered { graft_id: String, job_id: String, obs_refs: Vec<String> },
    Failed { graft_id: String, job_id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub graft_id: String,
    pub job_id: String,
    pub frame_count: usize,
    pub status: RenderStatus,
    pub obs_refs: Vec<String>,
    pub reason: Option<String>,
}

/// Append-only event log with an in-memory fold keyed by graft id.
pub struct Ledger {
    path: PathBuf,
    file: File,
    entries: BTreeMap<String, LedgerEntry>,
    jobs: BTreeMap<String, String>,
}

impl Ledger {
    /// Opens or creates a ledger. A torn final line is cut off.
    pub fn open(path: &Path) -> Result<Self, BridgeError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let mut text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(path, e)),
        };
        if !text.is_empty() && !text.ends_with('\n') {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            log::warn!("{}: dropping torn final ledger line", path.display());
            text.truncate(keep);
            let f = OpenOptions::new().write(true).open(path).map_err(|e| io_err(path, e))?;
            f.set_len(keep as u64).map_err(|e| io_err(path, e))?;
            f.sync_all().map_err(|e| io_err(path, e))?;
        }
        let mut ledger = Self {
            path: path.to_path_buf(),
            file: OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?,
            entries: BTreeMap::new(),
            jobs: BTreeMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: LedgerEvent = serde_json::from_str(line).map_err(|e| BridgeError::Ledger {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            ledger.fold(event);
        }
        Ok(ledger)
    }

    fn fold(&mut self, event: LedgerEvent) {
        match event {
            LedgerEvent::Submitted { graft_id, job_id, frame_count, .. } => {
                self.jobs.insert(job_id.clone(), graft_id.clone());
                self.entries.insert(
                    graft_id.clone(),
                    LedgerEntry { graft_id, job_id, frame_count, status: RenderStatus::Pending, obs_refs: Vec::new(), reason: None },
                );
            }
            LedgerEvent::Rendered { graft_id, obs_refs, .. } => {
                if let Some(e) = self.entries.get_mut(&graft_id) {
                    e.status = RenderStatus::Rendered;
                    e.obs_refs = obs_refs;
                    e.reason = None;
                }
            }
            LedgerEvent::Failed { graft_id, reason, .. } => {
                if let Some(e) = self.entries.get_mut(&graft_id) {
                    e.status = RenderStatus::Failed;
                    e.reason = Some(reason);
                }
            }
        }
    }

    /// The single commit point: one line, flushed and synced, then folded.
    pub fn append(&mut self, event: LedgerEvent) -> Result<(), BridgeError> {
        let mut line = serde_json::to_string(&event).expect("ledger events serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| io_err(&self.path, e))?;
        self.file.sync_data().map_err(|e| io_err(&self.path, e))?;
        self.fold(event);
        Ok(())
    }

    pub fn get(&self, graft_id: &str) -> Option<&LedgerEntry> {
        self.entries.get(graft_id)
    }

    pub fn graft_for_job(&self, job_id: &str) -> Option<&str> {
        self.jobs.get(job_id).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.entries.values()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Submits one request and records its job id.
pub fn submit(
    ledger: &mut Ledger,
    transport: &dyn Transport,
    request: &Request,
    retry: RetryPolicy,
) -> Result<String, BridgeError> {
    if ledger.get(request.graft_id()).is_some() {
        return Err(BridgeError::Duplicate(request.graft_id().to_string()));
    }
    let job_id = retry.run(|| transport.send(request))?;
    ledger.append(LedgerEvent::Submitted {
        graft_id: request.graft_id().to_string(),
        job_id: job_id.clone(),
        frame_count: request.frame_count(),
        transport: transport.name().to_string(),
    })?;
    Ok(job_id)
}

/// Sends requests concurrently and commits accepted ones to the ledger in
/// input order. Duplicates (against the ledger or within the batch) are
/// rejected without being sent.
pub fn submit_all(
    ledger: &mut Ledger,
    transport: &dyn Transport,
    requests: &[Request],
    retry: RetryPolicy,
) -> Vec<Result<String, BridgeError>> {
    use rayon::prelude::*;
    let mut seen = std::collections::HashSet::new();
    let fresh: Vec<bool> = requests
        .iter()
        .map(|r| ledger.get(r.graft_id()).is_none() && seen.insert(r.graft_id().to_string()))
        .collect();
    let sent: Vec<Option<Result<String, BridgeError>>> = requests
        .par_iter()
        .zip(fresh.par_iter())
        .map(|(r, &ok)| ok.then(|| retry.run(|| transport.send(r))))
        .collect();
    requests
        .iter()
        .zip(sent)
        .map(|(r, outcome)| {
            let job_id = outcome.ok_or_else(|| BridgeError::Duplicate(r.graft_id().to_string()))??;
            ledger.append(LedgerEvent::Submitted {
                graft_id: r.graft_id().to_string(),
                job_id: job_id.clone(),
                frame_count: r.frame_count(),
                transport: transport.name().to_string(),
            })?;
            Ok(job_id)
        })
        .collect()
}

/// Fetches finished jobs over HTTP into the inbox as `<job_id>.json`, so
/// that both transports reconcile the same way. Returns how many were
/// written.
pub fn poll_into_inbox(
    ledger: &Ledger,
    http: &HttpTransport,
    inbox: &Path,
    retry: RetryPolicy,
) -> Result<usize, BridgeError> {
    let mut written = 0;
    for entry in ledger.entries().filter(|e| e.status == RenderStatus::Pending) {
        let path = inbox.join(format!("{}.json", entry.job_id));
        if path.exists() {
            continue;
        }
        if let Some(result) = retry.run(|| http.fetch(&entry.job_id))? {
            let mut body = serde_json::to_string_pretty(&result).expect("job results serialize");
            body.push('\n');
            write_atomic(&path, body.as_bytes())?;
            written += 1;
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReconcileReport {
    pub rendered: Vec<String>,
    pub failed: Vec<String>,
    pub quarantined: Vec<PathBuf>,
    pub unchanged: usize,
    pub warnings: Vec<String>,
}

fn quarantine(file: &Path, dir: &Path, report: &mut ReconcileReport, why: String) -> Result<(), BridgeError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let dest = dir.join(file.file_name().expect("inbox entries are files"));
    fs::rename(file, &dest).map_err(|e| io_err(file, e))?;
    log::warn!("{why}");
    report.warnings.push(why);
    report.quarantined.push(dest);
    Ok(())
}

/// Folds completed results from `inbox/*.json` into the ledger, in file
/// name order. Results for unknown jobs, and files that do not parse as a
/// result, are moved to `quarantine`. Grafts already rendered or failed are
/// left alone, so re-running on the same inbox changes nothing.
pub fn reconcile(ledger: &mut Ledger, inbox: &Path, quarantine_dir: &Path) -> Result<ReconcileReport, BridgeError> {
    let mut report = ReconcileReport::default();
    let mut files: Vec<PathBuf> = match fs::read_dir(inbox) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(report),
        Err(e) => return Err(io_err(inbox, e)),
    };
    files.sort();

    for file in files {
        let text = fs::read_to_string(&file).map_err(|e| io_err(&file, e))?;
        let result: JobResult = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => {
                quarantine(&file, quarantine_dir, &mut report, format!("{}: unreadable result: {e}", file.display()))?;
                continue;
            }
        };
        let Some(graft_id) = ledger.graft_for_job(&result.job_id).map(str::to_string) else {
            quarantine(&file, quarantine_dir, &mut report, format!("orphan result for unknown job {}", result.job_id))?;
            continue;
        };
        let entry = ledger.get(&graft_id).expect("job map points at entries").clone();
        if entry.status != RenderStatus::Pending || entry.job_id != result.job_id || result.status == JobStatus::Pending {
            report.unchanged += 1;
            continue;
        }
        let event = match result.status {
            JobStatus::Failed => LedgerEvent::Failed {
                graft_id: graft_id.clone(),
                job_id: result.job_id,
                reason: result.reason.unwrap_or_else(|| "service reported failure".into()),
            },
            _ if result.obs_refs.len() != entry.frame_count => LedgerEvent::Failed {
                graft_id: graft_id.clone(),
                job_id: result.job_id,
                reason: "frame count mismatch".into(),
            },
            _ => LedgerEvent::Rendered { graft_id: graft_id.clone(), job_id: result.job_id, obs_refs: result.obs_refs },
        };
        match &event {
            LedgerEvent::Rendered { .. } => report.rendered.push(graft_id),
            _ => report.failed.push(graft_id),
        }
        ledger.append(event)?;
    }
    Ok(report)
}

/// Copies ledger state onto graft records.
pub fn apply_to_records(ledger: &Ledger, records: &mut [GraftRecord]) {
    for rec in records {
        if let Some(e) = ledger.get(&rec.graft_id) {
            rec.job_id = Some(e.job_id.clone());
            rec.render_status = e.status;
            rec.obs_refs = e.obs_refs.clone();
            rec.failure_reason = e.reason.clone();
        }
    }
}

/// Replaces pending observation tokens of a grafted trajectory with rendered
/// frame refs. Returns false, leaving the trajectory untouched, unless the
/// graft is rendered.
pub fn apply_to_trajectory(ledger: &Ledger, traj: &mut Trajectory) -> bool {
    match ledger.get(&traj.traj_id) {
        Some(e) if e.status == RenderStatus::Rendered && e.obs_refs.len() == traj.len() => {
            for (step, r) in traj.steps.iter_mut().zip(&e.obs_refs) {
                step.obs_ref = r.clone();
            }
            true
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn request(id: &str, frames: usize) -> Request {
        Request::Render(RenderRequest {
            graft_id: id.into(),
            objects: vec![],
            target_object_id: "x".into(),
            frame_count: frames,
            camera: Value::Null,
        })
    }

    fn fast() -> RetryPolicy {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) }
    }

    fn result(job: &str, n: usize) -> String {
        serde_json::to_string(&JobResult {
            job_id: job.into(),
            status: JobStatus::Done,
            obs_refs: (0..n).map(|i| format!("frames/{job}/{i}.png")).collect(),
            reason: None,
        })
        .unwrap()
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy { attempts: 4, base_delay: Duration::from_millis(10) };
        assert_eq!([p.delay(0), p.delay(1), p.delay(2)], [10, 20, 40].map(Duration::from_millis));
    }

    #[test]
    fn file_outbox_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let outbox = dir.path().join("outbox");
        let t = FileTransport { outbox: outbox.clone() };
        let mut ledger = Ledger::open(&dir.path().join("ledger.jsonl")).unwrap();
        let job = submit(&mut ledger, &t, &request("task07__d1", 5), fast()).unwrap();
        assert_eq!(job, "task07__d1");
        let written: Request = serde_json::from_str(&fs::read_to_string(outbox.join("task07__d1.json")).unwrap()).unwrap();
        assert_eq!(written, request("task07__d1", 5));
        assert_eq!(ledger.get("task07__d1").unwrap().status, RenderStatus::Pending);
        let err = submit(&mut ledger, &t, &request("task07__d1", 5), fast()).unwrap_err();
        assert_eq!(err.code(), "renderbridge/duplicate");

        let batch = [request("a", 1), request("b", 2), request("a", 1)];
        let out = submit_all(&mut ledger, &t, &batch, fast());
        assert!(out[0].is_ok() && out[1].is_ok());
        assert!(matches!(out[2], Err(BridgeError::Duplicate(_))));
    }

    #[test]
    fn reconcile_outcomes_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let t = FileTransport { outbox: dir.path().join("outbox") };
        let inbox = dir.path().join("inbox");
        let quarantine_dir = dir.path().join("quarantine");
        let ledger_path = dir.path().join("ledger.jsonl");
        let mut ledger = Ledger::open(&ledger_path).unwrap();

        assert_eq!(reconcile(&mut ledger, &inbox, &quarantine_dir).unwrap(), ReconcileReport::default());

        for id in ["good", "short", "broken"] {
            submit(&mut ledger, &t, &request(id, 4), fast()).unwrap();
        }
        fs::create_dir_all(&inbox).unwrap();
        fs::write(inbox.join("good.json"), result("good", 4)).unwrap();
        fs::write(inbox.join("short.json"), result("short", 3)).unwrap();
        fs::write(inbox.join("stray.json"), result("nobody", 4)).unwrap();
        fs::write(inbox.join("broken.json"), r#"{"job_id": "broken", "status": "failed", "reason": "detector found nothing"}"#).unwrap();

        let r = reconcile(&mut ledger, &inbox, &quarantine_dir).unwrap();
        assert_eq!(r.rendered, vec!["good"]);
        assert_eq!(r.failed, vec!["broken", "short"]);
        assert_eq!(r.quarantined.len(), 1);
        assert!(quarantine_dir.join("stray.json").exists());
        assert_eq!(ledger.get("short").unwrap().reason.as_deref(), Some("frame count mismatch"));
        assert_eq!(ledger.get("good").unwrap().obs_refs.len(), 4);

        let before = fs::read(&ledger_path).unwrap();
        let again = reconcile(&mut ledger, &inbox, &quarantine_dir).unwrap();
        assert!(again.rendered.is_empty() && again.failed.is_empty() && again.quarantined.is_empty());
        assert_eq!(fs::read(&ledger_path).unwrap(), before);

        let reopened = Ledger::open(&ledger_path).unwrap();
        assert_eq!(reopened.entries().collect::<Vec<_>>(), ledger.entries().collect::<Vec<_>>());
        assert!(reopened.entries().all(|e| e.status != RenderStatus::Rendered || e.obs_refs.len() == e.frame_count));
    }

    #[test]
    fn torn_last_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let t = FileTransport { outbox: dir.path().join("outbox") };
        {
            let mut l = Ledger::open(&path).unwrap();
            submit(&mut l, &t, &request("a", 2), fast()).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"event":"submitted","graft_id":"b","jo"#).unwrap();
        drop(f);
        let mut l = Ledger::open(&path).unwrap();
        assert!(l.get("a").is_some() && l.get("b").is_none());
        submit(&mut l, &t, &request("b", 2), fast()).unwrap();
        assert_eq!(Ledger::open(&path).unwrap().entries().count(), 2);
    }

    #[test]
    fn corrupt_interior_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        fs::write(&path, "garbage\n").unwrap();
        assert_eq!(Ledger::open(&path).err().unwrap().code(), "renderbridge/ledger");
    }

    #[test]
    fn unreachable_endpoint_retries_three_times() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let http = HttpTransport::new(&format!("http://127.0.0.1:{port}"), Duration::from_millis(500));
        let dir = tempfile::tempdir().unwrap();
        let mut ledger = Ledger::open(&dir.path().join("l.jsonl")).unwrap();
        let err = submit(&mut ledger, &http, &request("g", 3), fast()).unwrap_err();
        assert!(err.is_retryable());
        assert!(matches!(err, BridgeError::Transport { attempts: 3, .. }));
        assert!(ledger.get("g").is_none());
    }

    /// Minimal HTTP/1.1 responder: answers each connection via `reply`.
    fn serve(reply: impl Fn(&str, &str) -> (u16, String) + Send + 'static) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut start = String::new();
                if reader.read_line(&mut start).is_err() {
                    continue;
                }
                let mut len = 0usize;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h.trim().is_empty() {
                        break;
                    }
                    if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let mut parts = start.split_whitespace();
                let (method, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
                let (code, text) = reply(method, path);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
        });
        format!("http://{addr}")
    }

    #[test]
    fn http_submit_poll_reconcile() {
        let failures = Arc::new(AtomicUsize::new(0));
        let f = failures.clone();
        let endpoint = serve(move |method, path| match (method, path) {
            ("POST", "/render") if f.fetch_add(1, Ordering::SeqCst) < 2 => (503, "{}".into()),
            ("POST", "/render") => (200, r#"{"job_id":"job-7"}"#.into()),
            ("GET", "/jobs/job-7") => (200, result("job-7", 3)),
            _ => (404, "{}".into()),
        });
        let http = HttpTransport::new(&endpoint, Duration::from_secs(2));
        let dir = tempfile::tempdir().unwrap();
        let mut ledger = Ledger::open(&dir.path().join("l.jsonl")).unwrap();
        assert_eq!(submit(&mut ledger, &http, &request("g", 3), fast()).unwrap(), "job-7");
        assert_eq!(failures.load(Ordering::SeqCst), 3);

        let inbox = dir.path().join("inbox");
        assert_eq!(poll_into_inbox(&ledger, &http, &inbox, fast()).unwrap(), 1);
        let r = reconcile(&mut ledger, &inbox, &dir.path().join("q")).unwrap();
        assert_eq!(r.rendered, vec!["g"]);
        assert_eq!(poll_into_inbox(&ledger, &http, &inbox, fast()).unwrap(), 0);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let hits = Arc::new(AtomicUsize::new(0));
        let h = hits.clone();
        let endpoint = serve(move |_, _| {
            h.fetch_add(1, Ordering::SeqCst);
            (400, r#"{"error":"bad scene"}"#.into())
        });
        let http = HttpTransport::new(&endpoint, Duration::from_secs(2));
        let dir = tempfile::tempdir().unwrap();
        let mut ledger = Ledger::open(&dir.path().join("l.jsonl")).unwrap();
        let err = submit(&mut ledger, &http, &request("g", 3), fast()).unwrap_err();
        assert_eq!(err.code(), "renderbridge/rejected");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }
}
