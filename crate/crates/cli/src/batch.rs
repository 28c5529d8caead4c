use std::path::Path;

use hearth_core::home::World;
use hearth_core::mac::MacMode;
use hearth_core::report::{Report, LIFETIME_WINDOW_YEARS};
use hearth_core::scenario::Scenario;
use hearth_core::sim::Trace;

use crate::error::{io_err, CliError};

pub const MIN_DELIVERY: f64 = 0.99;
pub const MAX_P99_MS: f64 = 3000.0;

fn simulate(s: &Scenario) -> Result<(Trace, Report), CliError> {
    let trace = World::new(s)?.run();
    let report = Report::from_trace(&trace);
    Ok((trace, report))
}

fn ms(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}ms")).unwrap_or_else(|| "-".into())
}

pub fn run(s: &Scenario, trace_out: Option<&Path>, report_out: Option<&Path>, assert: bool) -> Result<(), CliError> {
    tracing::info!(scenario = %s.name, seed = s.seed, "running");
    let (trace, r) = simulate(s)?;
    if let Some(p) = trace_out {
        std::fs::write(p, trace.to_jsonl()).map_err(io_err(p))?;
    }
    if let Some(p) = report_out {
        std::fs::write(p, r.to_json()).map_err(io_err(p))?;
    }
    println!("scenario        {} (seed {}, {})", r.scenario, r.seed, r.mode);
    println!("devices         {} joined, {} failed", r.joins.joined, r.joins.failed);
    println!("delivery        {:.4} ({}/{})", r.delivery.ratio, r.delivery.delivered, r.delivery.generated);
    if let Some(b) = &r.burst {
        println!("burst delivery  {:.4} ({}/{})", b.ratio, b.delivered, b.generated);
    }
    println!("commands        {} issued, {} ok, {} failed", r.commands.issued, r.commands.ok, r.commands.failed);
    println!("command latency p50 {} p99 {}", ms(r.e2e_latency_p50_ms), ms(r.e2e_latency_p99_ms));
    println!("alarm latency   p50 {} p99 {} ({} raised)", ms(r.alarm_latency.p50_ms), ms(r.alarm_latency.p99_ms), r.alarms_raised);
    if let Some(y) = r.battery_estimate_years {
        println!("battery         {y:.2} years (shortest)");
    }
    if !r.path_decisions.is_empty() {
        let paths: Vec<String> = r.path_decisions.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("paths           {}", paths.join(" "));
    }
    println!("trace digest    {}", r.trace_digest);
    if assert {
        let mut failures = Vec::new();
        if r.delivery.ratio < MIN_DELIVERY {
            failures.push(format!("delivery {:.4} < {MIN_DELIVERY}", r.delivery.ratio));
        }
        if let Some(p99) = r.e2e_latency_p99_ms.filter(|&p| p > MAX_P99_MS) {
            failures.push(format!("command p99 {p99:.1}ms > {MAX_P99_MS}ms"));
        }
        if !failures.is_empty() {
            return Err(CliError::Assert(failures.join("; ")));
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
struct ModeTotals {
    generated: u64,
    delivered: u64,
    burst_generated: u64,
    burst_delivered: u64,
    frames: u64,
    retries: u64,
    failures: u64,
    corrupted: u64,
}

impl ModeTotals {
    fn ratio(&self) -> f64 {
        if self.generated == 0 {
            1.0
        } else {
            self.delivered as f64 / self.generated as f64
        }
    }
}

pub fn compare_mac(s: &Scenario, modes: &[MacMode], seeds: u64) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for &mode in modes {
        let mut t = ModeTotals::default();
        for i in 0..seeds {
            let mut sc = s.clone();
            sc.seed = s.seed + i;
            sc.mac.mode = mode;
            let (_, r) = simulate(&sc)?;
            t.generated += r.delivery.generated;
            t.delivered += r.delivery.delivered;
            if let Some(b) = r.burst {
                t.burst_generated += b.generated;
                t.burst_delivered += b.delivered;
            }
            t.frames += r.mac.frames_sent;
            t.retries += r.mac.retries;
            t.failures += r.mac.failures;
            t.corrupted += r.mac.corrupted;
        }
        rows.push((mode, t));
    }
    println!("{:<16} {:>9} {:>9} {:>8} {:>8} {:>9} {:>9}", "mode", "delivery", "burst", "frames", "retries", "failures", "corrupt");
    for (mode, t) in &rows {
        let burst = if t.burst_generated == 0 {
            "-".to_string()
        } else {
            format!("{:.4}", t.burst_delivered as f64 / t.burst_generated as f64)
        };
        println!(
            "{:<16} {:>9.4} {:>9} {:>8} {:>8} {:>9} {:>9}",
            mode.label(),
            t.ratio(),
            burst,
            t.frames,
            t.retries,
            t.failures,
            t.corrupted
        );
    }
    let find = |m: MacMode| rows.iter().find(|(k, _)| *k == m).map(|(_, t)| t.ratio());
    if let (Some(selforg), Some(naive)) = (find(MacMode::SelfOrganized), find(MacMode::Naive)) {
        if selforg < naive {
            return Err(CliError::Assert(format!("selforg delivery {selforg:.4} below naive {naive:.4}")));
        }
    }
    Ok(())
}

pub fn energy(s: &Scenario, json: bool) -> Result<(), CliError> {
    let (_, r) = simulate(s)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&r.energy).expect("serializable"));
        return Ok(());
    }
    let (lo, hi) = LIFETIME_WINDOW_YEARS;
    println!("{:<24} {:>5} {:<8} {:>12} {:>10}  flag", "device", "addr", "power", "avg current", "lifetime");
    for e in &r.energy {
        let addr = e.addr.map(|a| a.to_string()).unwrap_or_else(|| "-".into());
        let (current, years) = match (e.average_current_ma, e.lifetime_years) {
            (Some(i), Some(y)) => (format!("{i:.4}mA"), format!("{y:.2}y")),
            _ => ("n/a".into(), "n/a".into()),
        };
        let flag = if e.flagged { format!("outside {lo}-{hi} years") } else { String::new() };
        println!("{:<24} {:>5} {:<8} {:>12} {:>10}  {flag}", e.device, addr, e.power, current, years);
    }
    Ok(())
}
