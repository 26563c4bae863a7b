use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Args;
use nss_core::features::CounterSnapshot;
use nss_lab::{generate_trace, run_agent, wrap_twins, AgentConfig, AgentSource, Scenario, ScenarioKind, Trace};
use nss_snmp::Clock;
use serde_json::Value;

use crate::{print_json, runtime, shutdown_signal, usage, CliResult};

#[derive(Args)]
pub struct SynthArgs {
    /// normal, congestion, error-burst or broadcast-storm.
    #[arg(long)]
    scenario: ScenarioKind,
    #[arg(long, default_value_t = 600)]
    duration: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Poll interval in seconds.
    #[arg(long, default_value_t = 10)]
    interval: u64,
    /// Writes the trace and its `.meta.json` here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Offset counters so they wrap past 2^32 mid-trace.
    #[arg(long)]
    wrap: bool,
}

#[derive(Args)]
pub struct AgentArgs {
    #[arg(long, default_value = "127.0.0.1:1161")]
    bind: SocketAddr,
    /// Scenarios to cycle through, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "normal")]
    scenario: Vec<ScenarioKind>,
    /// Simulated seconds per scenario phase.
    #[arg(long, default_value_t = 3600)]
    phase: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Serve this recorded trace instead of a schedule.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value = "public")]
    community: String,
    #[arg(long = "if-index", value_delimiter = ',', default_value = "1")]
    if_indexes: Vec<u32>,
    /// Simulated seconds per real second.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

#[derive(Args)]
pub struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    /// `stdout`, or the base URL of a running service.
    #[arg(long, default_value = "stdout")]
    sink: String,
    /// Overrides the target name of every snapshot.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    token: Option<String>,
    /// Snapshots per request.
    #[arg(long, default_value_t = 100)]
    batch: usize,
}

fn preset(kind: ScenarioKind, duration_s: u64, seed: u64) -> CliResult<Scenario> {
    if kind.preset().is_none() {
        return Err(usage(format!("scenario '{kind}' has no preset rates")));
    }
    let s = Scenario::preset(kind, duration_s, seed);
    s.validate().map_err(usage)?;
    Ok(s)
}

pub fn synth(a: &SynthArgs, json: bool) -> CliResult {
    let scenario = preset(a.scenario, a.duration, a.seed)?;
    let trace = if a.wrap {
        wrap_twins(&scenario, a.interval).map_err(usage)?.1
    } else {
        generate_trace(&scenario, a.interval).map_err(usage)?
    };
    match &a.out {
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&trace.to_jsonl()).map_err(runtime)?;
        }
        Some(path) => {
            trace.write(path).map_err(runtime)?;
            if json {
                print_json(&serde_json::json!({"path": path, "snapshots": trace.snapshots.len(), "wrapped": trace.has_wrap()}));
            } else {
                println!("snapshots {}", trace.snapshots.len());
                println!("path {}", path.display());
            }
        }
    }
    Ok(())
}

pub async fn agent(a: AgentArgs, json: bool) -> CliResult {
    if !(a.scale.is_finite() && a.scale > 0.0) {
        return Err(usage("--scale must be positive"));
    }
    let source = match &a.trace {
        Some(path) => AgentSource::Trace(Trace::read(path).map_err(usage)?),
        None => AgentSource::Schedule(
            a.scenario
                .iter()
                .enumerate()
                .map(|(i, &k)| preset(k, a.phase, a.seed + i as u64))
                .collect::<CliResult<_>>()?,
        ),
    };
    let cfg = AgentConfig { community: a.community, if_indexes: a.if_indexes, clock: Clock::scaled(a.scale) };
    let handle = run_agent(a.bind, source, cfg).await.map_err(|e| runtime(format!("{}: {e}", a.bind)))?;
    if json {
        print_json(&serde_json::json!({"listening": handle.local_addr()}));
    } else {
        println!("listening {}", handle.local_addr());
    }
    shutdown_signal().await;
    handle.shutdown();
    Ok(())
}

pub async fn replay(a: ReplayArgs, json: bool) -> CliResult {
    let trace = Trace::read(&a.trace).map_err(usage)?;
    let snapshots: Vec<CounterSnapshot> = trace
        .snapshots
        .into_iter()
        .map(|mut s| {
            if let Some(t) = &a.target {
                s.target = t.clone();
            }
            s
        })
        .collect();
    if a.sink == "stdout" {
        for s in &snapshots {
            print_json(s);
        }
        return Ok(());
    }
    if a.batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    let base = a.sink.trim_end_matches('/');
    let url = if base.ends_with("/snapshots") { base.to_string() } else { format!("{base}/api/v1/snapshots") };
    let client = reqwest::Client::new();
    let (mut records, mut errors) = (0usize, 0usize);
    for chunk in snapshots.chunks(a.batch) {
        let mut req = client.post(&url).json(chunk);
        if let Some(t) = &a.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.map_err(|e| runtime(format!("{url}: {e}")))?;
        let status = resp.status();
        let body: Value = resp.json().await.map_err(|e| runtime(format!("{url}: {e}")))?;
        if !status.is_success() {
            return Err(runtime(format!("{url}: {status}: {}", body["message"].as_str().unwrap_or("request failed"))));
        }
        for r in body.as_array().into_iter().flatten() {
            if r["record"].is_object() {
                records += 1;
            }
            if let Some(e) = r["error"].as_str() {
                errors += 1;
                eprintln!("nss: snapshot rejected: {e}");
            }
        }
    }
    if json {
        print_json(&serde_json::json!({"snapshots": snapshots.len(), "records": records, "errors": errors}));
    } else {
        println!("snapshots {}", snapshots.len());
        println!("records {records}");
        println!("errors {errors}");
    }
    if errors > 0 {
        return Err(runtime(format!("{errors} snapshots were rejected")));
    }
    Ok(())
}
