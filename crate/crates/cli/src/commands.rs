use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value};

use tailgraft::analytics::{phase_stats, risk_report, success_table, AggregationMode};
use tailgraft::apa::{augment_dataset, AugmentParams, GraftRecord, RenderStatus, Toggles, DEFAULT_PER_TASK};
use tailgraft::dataio::{
    export_report, load_dataset, load_rollout_log, read_json, save_dataset, save_manifest, write_json, DataError,
    Report, ReportFormat,
};
use tailgraft::ltbench::{build_longtail, partition_head_tail, resolve_profile};
use tailgraft::phaseseg::{parse_chain, segment_all, GripperParams, GripperSignal, SplitSet, DEFAULT_RADIUS};
use tailgraft::renderbridge::{
    self, apply_to_records, apply_to_trajectory, EditRequest, FileTransport, HttpTransport, Ledger, RenderRequest,
    Request, RetryPolicy, Transport,
};
use tailgraft::resampler::{make_schedule, manifest_counts, sampling_probs, Schedule, Q_PRESETS};
use tailgraft::synthgen::{gen_dataset, preset, SynthConfig};
use tailgraft::trajmodel::{validate_manifest, Source, TrajectorySource};

use crate::config::{dir_snapshot, file_snapshot, required, write_snapshot};
use crate::{
    AnalyzeArgs, AugmentArgs, BridgeAction, BridgeMode, BuildLtArgs, CliError, PartitionArgs, RenderBridgeArgs,
    ReportArgs, RequestKind, ResampleArgs, SegmentArgs, SynthArgs, ValidateArgs,
};

const GRAFTS_FILE: &str = "grafts.json";

fn summary(v: Value) {
    println!("{v}");
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

fn parse_formats(s: Option<&str>) -> Result<Vec<ReportFormat>, CliError> {
    split_list(s.unwrap_or("csv,json,svg"))
        .iter()
        .map(|f| f.parse().map_err(CliError::Usage))
        .collect()
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let out = required(args.out.clone(), "out")?;
    let config: SynthConfig = match &args.spec {
        Some(path) => read_json(path)?,
        None => preset(args.preset.as_deref().unwrap_or("libero-core-full"))?,
    };
    let seed = args.seed.unwrap_or(0);
    let (manifest, trajs) = gen_dataset(&config, seed)?;
    save_dataset(&out, &manifest, &trajs)?;
    write_snapshot(&dir_snapshot(&out, "synth"), "synth", &args)?;
    summary(json!({ "dataset": out, "tasks": manifest.tasks.len(), "trajectories": trajs.len() }));
    Ok(())
}

pub fn build_lt(args: BuildLtArgs) -> Result<(), CliError> {
    let input = required(args.input.clone(), "input")?;
    let out = required(args.out.clone(), "out")?;
    let profile = resolve_profile(args.profile.as_deref().unwrap_or("libero-core-lt"))?;
    let full = load_dataset(&input)?;
    let order = match &args.order {
        Some(o) => split_list(o),
        None => profile
            .default_order
            .clone()
            .unwrap_or_else(|| full.manifest.tasks.iter().map(|t| t.task_id.clone()).collect()),
    };
    let lt = build_longtail(&full.manifest, &profile.profile, &order, args.seed.unwrap_or(0))?;
    let trajs = lt
        .trajectory_index
        .iter()
        .map(|e| full.load(&e.traj_id))
        .collect::<Result<Vec<_>, _>>()?;
    save_dataset(&out, &lt, &trajs)?;
    write_snapshot(&dir_snapshot(&out, "build-lt"), "build-lt", &args)?;
    let counts: Vec<usize> = lt.tasks.iter().map(|t| t.demo_count).collect();
    summary(json!({ "dataset": out, "profile": profile.name, "order": order, "counts": counts }));
    Ok(())
}

pub fn partition(args: PartitionArgs) -> Result<(), CliError> {
    let input = required(args.input.clone(), "input")?;
    let fraction = args.head_fraction.unwrap_or(0.3);
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Usage(format!("--head-fraction {fraction} must lie in (0, 1]")));
    }
    let ds = load_dataset(&input)?;
    let manifest = partition_head_tail(&ds.manifest, fraction);
    let out = match &args.out {
        Some(out) if out != &input => {
            let trajs = ds.load_all()?;
            save_dataset(out, &manifest, &trajs)?;
            out.clone()
        }
        _ => {
            save_manifest(&input, &manifest)?;
            input.clone()
        }
    };
    write_snapshot(&dir_snapshot(&out, "partition"), "partition", &args)?;
    let partition = manifest.partition.clone().unwrap_or_default();
    summary(json!({ "dataset": out, "partition": partition }));
    Ok(())
}

fn parse_q(s: &str) -> Result<f64, CliError> {
    if let Some((_, q)) = Q_PRESETS.iter().find(|(name, _)| *name == s) {
        return Ok(*q);
    }
    s.parse()
        .map_err(|_| CliError::Usage(format!("--q {s:?} is neither a number nor one of q075, q050, q025")))
}

pub fn resample(args: ResampleArgs) -> Result<(), CliError> {
    let input = required(args.input.clone(), "input")?;
    let out = required(args.out.clone(), "out")?;
    let q = parse_q(&required(args.q.clone(), "q")?)?;
    let draws = required(args.draws, "draws")?;
    let seed = args.seed.unwrap_or(0);
    let ds = load_dataset(&input)?;
    let weights = sampling_probs(&manifest_counts(&ds.manifest), q)?;
    let schedule = make_schedule(&weights, &ds.manifest, draws, seed)?;
    let doc = Schedule {
        dataset: ds.manifest.name.clone(),
        q,
        seed,
        num_draws: draws,
        probs: weights.probs,
        schedule,
    };
    write_json(&out, &doc)?;
    write_snapshot(&file_snapshot(&out), "resample", &args)?;
    summary(json!({ "schedule": out, "q": q, "draws": draws }));
    Ok(())
}

pub fn segment(args: SegmentArgs) -> Result<(), CliError> {
    let input = required(args.input.clone(), "input")?;
    let out = required(args.out.clone(), "out")?;
    let signal = match args.signal.as_deref().unwrap_or("action") {
        "action" => GripperSignal::Action,
        "proprio" => GripperSignal::Proprio,
        other => return Err(CliError::Usage(format!("--signal {other:?} must be action or proprio"))),
    };
    let defaults = GripperParams::default();
    let gripper = GripperParams {
        close_threshold: args.close_threshold.unwrap_or(defaults.close_threshold),
        min_hold: args.min_hold.unwrap_or(defaults.min_hold),
        signal,
    };
    let chain = parse_chain(
        args.strategy.as_deref().unwrap_or("annotated,gripper,proximity"),
        gripper,
        args.radius.unwrap_or(DEFAULT_RADIUS),
    )
    .map_err(CliError::Usage)?;
    let ds = load_dataset(&input)?;
    let trajs = ds.load_all()?;
    let set = segment_all(&trajs, &chain);
    for f in &set.failures {
        log::warn!("no split for {}: {}", f.traj_id, f.error);
    }
    write_json(&out, &set)?;
    write_snapshot(&file_snapshot(&out), "segment", &args)?;
    summary(json!({ "splits": out, "segmented": set.splits.len(), "failed": set.failures.len() }));
    Ok(())
}

fn parse_mode(s: &str) -> Result<AggregationMode, CliError> {
    match s {
        "pooled" => Ok(AggregationMode::Pooled),
        "per-seed" | "per_seed" | "per_seed_mean" => Ok(AggregationMode::PerSeedMean),
        other => Err(CliError::Usage(format!("--mode {other:?} must be pooled or per-seed"))),
    }
}

fn parse_range(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--tail-range {s:?} must look like M:N"));
    let (m, n) = s.split_once(':').ok_or_else(bad)?;
    Ok((m.trim().parse().map_err(|_| bad())?, n.trim().parse().map_err(|_| bad())?))
}

pub fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let rollouts = required(args.rollouts.clone(), "rollouts")?;
    let [full_path, lt_path] = rollouts.as_slice() else {
        return Err(CliError::Usage("--rollouts takes exactly two files: FULL LT".into()));
    };
    let out = required(args.out.clone(), "out")?;
    let tail_range = parse_range(args.tail_range.as_deref().unwrap_or("4:10"))?;
    let mode = parse_mode(args.mode.as_deref().unwrap_or("pooled"))?;
    let formats = parse_formats(args.format.as_deref())?;

    let full_log = load_rollout_log(full_path)?;
    let lt_log = load_rollout_log(lt_path)?;
    let order = match &args.task_order {
        Some(o) => split_list(o),
        None => {
            let mut order: Vec<String> = Vec::new();
            for r in full_log.iter().chain(&lt_log) {
                if !order.contains(&r.task_id) {
                    order.push(r.task_id.clone());
                }
            }
            order
        }
    };
    let full = phase_stats(&full_log, mode, &order);
    let lt = phase_stats(&lt_log, mode, &order);
    let report = risk_report(&full, &lt, &order, tail_range)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    std::fs::create_dir_all(&out).map_err(|e| DataError::Io { path: out.clone(), source: e })?;
    let summary_doc = json!({
        "report": out,
        "rr_appr_geomean": report.rr_appr_geomean,
        "rr_exec_geomean": report.rr_exec_geomean,
    });
    export_report(&Report::RelativeRisk(report), &formats, &out)?;
    write_snapshot(&dir_snapshot(&out, "analyze"), "analyze", &args)?;
    summary(summary_doc);
    Ok(())
}

pub fn augment(args: AugmentArgs) -> Result<(), CliError> {
    let input = required(args.input.clone(), "input")?;
    let out = required(args.out.clone(), "out")?;
    let toggles = Toggles {
        formatting: args.formatting.map_or(true, |s| s.enabled()),
        augmentation: args.augmentation.map_or(true, |s| s.enabled()),
    };
    let params = AugmentParams {
        pool_size: if toggles.augmentation { required(args.pool_size, "pool-size")? } else { args.pool_size.unwrap_or(0) },
        per_task_count: args.per_task.unwrap_or(DEFAULT_PER_TASK),
        seed: args.seed.unwrap_or(0),
        toggles,
    };
    let ds = load_dataset(&input)?;
    let splits: SplitSet = match &args.splits {
        Some(p) => read_json(p)?,
        None if !toggles.augmentation => SplitSet { chain: vec![], splits: vec![], failures: vec![] },
        None => return Err(CliError::Usage("--splits is required when augmentation is on".into())),
    };
    let set = augment_dataset(&ds.manifest, &ds, &splits, params)?;
    save_dataset(&out, &set.manifest, &set.trajectories)?;
    write_json(&out.join(GRAFTS_FILE), &set.grafts)?;
    write_snapshot(&dir_snapshot(&out, "augment"), "augment", &args)?;
    summary(json!({
        "dataset": out,
        "trajectories": set.trajectories.len(),
        "grafts": set.grafts.len(),
    }));
    Ok(())
}

struct BridgePaths {
    ledger: PathBuf,
    outbox: PathBuf,
    inbox: PathBuf,
    quarantine: PathBuf,
}

impl BridgePaths {
    fn new(workdir: &Path) -> Self {
        Self {
            ledger: workdir.join("ledger.jsonl"),
            outbox: workdir.join("outbox"),
            inbox: workdir.join("inbox"),
            quarantine: workdir.join("quarantine"),
        }
    }
}

pub fn render_bridge(args: RenderBridgeArgs) -> Result<(), CliError> {
    let action = required(args.action, "action")?;
    let dataset = required(args.dataset.clone(), "dataset")?;
    let workdir = args.workdir.clone().unwrap_or_else(|| dataset.join("render"));
    let paths = BridgePaths::new(&workdir);
    let mode = args.mode.unwrap_or(BridgeMode::File);
    let retry = RetryPolicy {
        attempts: args.attempts.unwrap_or(3).max(1),
        base_delay: Duration::from_millis(args.backoff_ms.unwrap_or(200)),
    };
    let timeout = Duration::from_millis(args.timeout_ms.unwrap_or(10_000));
    let endpoint = || -> Result<String, CliError> {
        args.endpoint
            .clone()
            .or_else(renderbridge::endpoint_from_env)
            .ok_or_else(|| CliError::Usage(format!("http mode needs --endpoint or {}", renderbridge::ENDPOINT_ENV)))
    };

    let grafts_path = dataset.join(GRAFTS_FILE);
    let mut grafts: Vec<GraftRecord> = read_json(&grafts_path)?;
    let mut ledger = Ledger::open(&paths.ledger)?;

    let result = match action {
        BridgeAction::Submit => {
            let ds = load_dataset(&dataset)?;
            let camera: Value = match &args.camera {
                Some(p) => read_json(p)?,
                None => Value::Null,
            };
            let kind = args.kind.unwrap_or(RequestKind::Render);
            let mut requests = Vec::new();
            for rec in grafts.iter().filter(|r| r.render_status == RenderStatus::Pending) {
                if ledger.get(&rec.graft_id).is_some() {
                    continue;
                }
                let request = match kind {
                    RequestKind::Render => {
                        Request::Render(RenderRequest::from_graft(rec, &ds.load(&rec.graft_id)?, camera.clone())?)
                    }
                    RequestKind::Edit => Request::Edit(EditRequest::from_graft(rec, &ds.load(&rec.source_traj_id)?)?),
                };
                requests.push(request);
            }
            let transport: Box<dyn Transport> = match mode {
                BridgeMode::File => Box::new(FileTransport { outbox: paths.outbox.clone() }),
                BridgeMode::Http => Box::new(HttpTransport::new(&endpoint()?, timeout)),
            };
            let results = renderbridge::submit_all(&mut ledger, transport.as_ref(), &requests, retry);
            let submitted = results.iter().filter(|r| r.is_ok()).count();
            let first_err = results.into_iter().find_map(Result::err);
            apply_to_records(&ledger, &mut grafts);
            write_json(&grafts_path, &grafts)?;
            if let Some(e) = first_err {
                return Err(e.into());
            }
            json!({ "submitted": submitted })
        }
        BridgeAction::Poll => {
            if mode != BridgeMode::Http {
                return Err(CliError::Usage("poll needs --mode http".into()));
            }
            let http = HttpTransport::new(&endpoint()?, timeout);
            let fetched = renderbridge::poll_into_inbox(&ledger, &http, &paths.inbox, retry)?;
            json!({ "fetched": fetched })
        }
        BridgeAction::Reconcile => {
            let report = renderbridge::reconcile(&mut ledger, &paths.inbox, &paths.quarantine)?;
            apply_to_records(&ledger, &mut grafts);
            write_json(&grafts_path, &grafts)?;
            if !report.rendered.is_empty() {
                let ds = load_dataset(&dataset)?;
                let mut trajs = ds.load_all()?;
                for t in trajs.iter_mut().filter(|t| t.source == Source::Augmented) {
                    apply_to_trajectory(&ledger, t);
                }
                save_dataset(&dataset, &ds.manifest, &trajs)?;
            }
            json!({
                "rendered": report.rendered.len(),
                "failed": report.failed.len(),
                "quarantined": report.quarantined.len(),
                "unchanged": report.unchanged,
            })
        }
    };
    write_snapshot(&dir_snapshot(&workdir, "render-bridge"), "render-bridge", &args)?;
    summary(result);
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let specs = required(args.rollouts.clone(), "rollouts")?;
    let out = required(args.out.clone(), "out")?;
    let formats = parse_formats(args.format.as_deref())?;
    let mut logs = Vec::new();
    for spec in &specs {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone());
                (label, p)
            }
        };
        logs.push((label, load_rollout_log(&path)?));
    }
    let table = success_table(&logs);
    for w in &table.warnings {
        log::warn!("{w}");
    }
    std::fs::create_dir_all(&out).map_err(|e| DataError::Io { path: out.clone(), source: e })?;
    let rows = table.rows.len();
    export_report(&Report::Success(table), &formats, &out)?;
    write_snapshot(&dir_snapshot(&out, "report"), "report", &args)?;
    summary(json!({ "report": out, "tasks": rows }));
    Ok(())
}

pub fn validate(args: ValidateArgs) -> Result<(), CliError> {
    let input = required(args.input, "input")?;
    let ds = load_dataset(&input)?;
    let violations = validate_manifest(&ds.manifest, &ds)?;
    if !violations.is_empty() {
        return Err(DataError::Invalid { what: format!("dataset {}", input.display()), violations }.into());
    }
    let augmented = ds.manifest.trajectory_index.iter().filter(|e| e.source == Source::Augmented).count();
    summary(json!({
        "dataset": input,
        "valid": true,
        "tasks": ds.manifest.tasks.len(),
        "trajectories": ds.manifest.trajectory_index.len(),
        "augmented": augmented,
    }));
    Ok(())
}
