//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Built with `harness = false` so the lines show up under plain
//! `cargo test`.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use srvnp::energy::PowerZone;
use srvnp::fixtures::{self, table1, table1_selection};
use srvnp::metrics::{delivery_ratio, mean_delay, FlowStats};
use srvnp::routing::{compute_eq1, rank_repair_candidates, RepairCandidate};
use srvnp::sweep::{sweep, SweepParam, SweepRow, SweepSpec};
use srvnp::trace::{parse_line, TraceKind};
use srvnp::{run_scenario, NodeId, Protocol, RunResult, ScenarioConfig, SimTime};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Verdict {
    verdict(false, detail)
}

const PROTOCOLS: [Protocol; 2] = [Protocol::Srvnp, Protocol::AodvBaseline];

// ---- 1: scoring table -------------------------------------------------------

fn table_golden() -> Verdict {
    let mut exact = Vec::new();
    let mut off = Vec::new();
    for r in table1() {
        let got = compute_eq1(&r.ctx);
        if got == r.printed_total {
            exact.push(r.node);
        } else {
            off.push((r.node, got, r.printed_total));
        }
    }
    let p1_ok = off.len() == 1 && off[0].0 == "P1" && off[0].1 == 12.0 && off[0].2 - off[0].1 == 0.5;
    let pass = exact.len() == 8 && p1_ok;
    verdict(
        pass,
        format!("{} of 9 rows exact, mismatches {:?}", exact.len(), off),
    )
}

// ---- 2, 3: the two worked topologies ----------------------------------------

fn fig1_paths() -> Verdict {
    let start = Instant::now();
    let out = match fixtures::run_fig1() {
        Ok(o) => o,
        Err(e) => return fail(format!("run failed: {e}")),
    };
    let took = start.elapsed();
    let d = out.discovered.as_deref().unwrap_or("none");
    let r = out.repaired.as_deref().unwrap_or("none");
    let pass = d == "A-B-H-G-F-E-D" && r == "A-B-H-I-F-E-D" && took < Duration::from_secs(1);
    verdict(pass, format!("discovered {d}, repaired {r}, {took:.2?}"))
}

fn fig2_repair() -> Verdict {
    let start = Instant::now();
    let out = match fixtures::run_fig2() {
        Ok(o) => o,
        Err(e) => return fail(format!("run failed: {e}")),
    };
    let took = start.elapsed();
    let score = |name: &str| out.candidates.iter().find(|c| c.node == name).map(|c| c.score);
    let scores_ok = score("L") == Some(15.0) && score("P1") == Some(12.0);
    let selected = out.selected.as_deref() == Some("L") && out.repair_via.as_deref() == Some("L");

    // P sits at power 4: below the Active threshold, so never ranked even
    // though its row would otherwise be eligible.
    let rows = table1();
    let p = rows.iter().find(|r| r.node == "P").expect("P row");
    let p_cand = RepairCandidate {
        node: NodeId(99),
        ctx: p.ctx,
        zone: srvnp::energy::ZoneThresholds::default().zone_of(p.ctx.power),
    };
    let p_rejected = p_cand.zone != PowerZone::Active
        && rank_repair_candidates(&[p_cand]).is_empty()
        && table1_selection() == Some("L")
        && out
            .candidates
            .iter()
            .all(|c| c.node != "P" || c.zone != PowerZone::Active);
    let path = out.repaired.as_deref().unwrap_or("none");
    let pass = scores_ok && selected && p_rejected && path == "N-L-M-K-X" && took < Duration::from_secs(1);
    verdict(
        pass,
        format!(
            "L={:?} P1={:?}, selected {:?}, P rejected {p_rejected}, repaired {path}, {took:.2?}",
            score("L"),
            score("P1"),
            out.selected
        ),
    )
}

// ---- 4: static sanity ---------------------------------------------------------

fn static_grid(protocol: Protocol) -> ScenarioConfig {
    // 5 x 4 grid at 150 m spacing; every node reaches its grid neighbours.
    let mut text = String::from(
        "area_x = 800\narea_y = 650\nnode_count = 20\nmobility = static\nsim_duration_s = 40\n",
    );
    for i in 0..20u32 {
        let (x, y) = (50 + 150 * (i % 5), 50 + 150 * (i / 5));
        text.push_str(&format!("node = {i},{x},{y},10\n"));
    }
    let pairs = [(0, 19), (4, 15), (7, 12), (19, 0), (2, 17), (10, 14), (5, 9), (16, 3), (11, 8), (13, 6)];
    for (k, (s, d)) in pairs.iter().enumerate() {
        let start = 1.0 + 0.1 * k as f64;
        text.push_str(&format!("flow = {s},{d},4,512,{start},{}\n", start + 25.0));
    }
    let mut cfg = ScenarioConfig::parse(&text).expect("grid config");
    cfg.protocol = protocol;
    cfg
}

fn static_sanity() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for p in PROTOCOLS {
        let res = match run_scenario(&static_grid(p), false) {
            Ok(r) => r,
            Err(e) => return fail(format!("{p}: {e}")),
        };
        let per_flow_100 = res.flows.iter().all(|f| f.sent_count() == 100);
        let ok = per_flow_100
            && res.flows.len() == 10
            && res.report.delivery_ratio == 1.0
            && res.report.counters.err_tx == 0;
        pass &= ok;
        parts.push(format!(
            "{p}: pdr {} err {} sent {}",
            res.report.delivery_ratio, res.report.counters.err_tx, res.report.sent
        ));
    }
    verdict(pass, parts.join("; "))
}

// ---- 5, 10: loop freedom and the power gate -------------------------------------

fn mobile_30(seed: u64, protocol: Protocol) -> ScenarioConfig {
    ScenarioConfig {
        node_count: 30,
        area_x: 500.0,
        area_y: 500.0,
        pause_time_s: 0.0,
        speed_max: 10.0,
        sim_duration_s: 300.0,
        seed,
        protocol,
        // A spread of starting charge puts some nodes in Critical and
        // Danger, so the gate has something to refuse.
        battery_init_min: Some(1.0),
        ..ScenarioConfig::default()
    }
}

struct LoopRuns {
    results: Vec<RunResult>,
    power_drops: u64,
    traced_forwards: u64,
    took: Duration,
    error: Option<String>,
}

fn loop_runs() -> LoopRuns {
    let start = Instant::now();
    let mut results = Vec::new();
    let mut power_drops = 0;
    let mut traced_forwards = 0;
    for seed in 1..=20 {
        for p in PROTOCOLS {
            let mut res = match run_scenario(&mobile_30(seed, p), p == Protocol::Srvnp) {
                Ok(r) => r,
                Err(e) => {
                    return LoopRuns {
                        results,
                        power_drops,
                        traced_forwards,
                        took: start.elapsed(),
                        error: Some(format!("seed {seed} {p}: {e}")),
                    }
                }
            };
            if let Some(trace) = res.trace.take() {
                for l in trace.lines().filter_map(parse_line) {
                    match l.kind {
                        TraceKind::RreqDropPower => power_drops += 1,
                        TraceKind::RreqTx if l.get("fwd") == Some("1") => traced_forwards += 1,
                        _ => {}
                    }
                }
            }
            results.push(res);
        }
    }
    LoopRuns {
        results,
        power_drops,
        traced_forwards,
        took: start.elapsed(),
        error: None,
    }
}

fn loop_freedom(runs: &LoopRuns) -> Verdict {
    if let Some(e) = &runs.error {
        return fail(e.clone());
    }
    let checks: u64 = runs.results.iter().map(|r| r.invariants.loop_checks).sum();
    let violations: u64 = runs.results.iter().map(|r| r.invariants.loop_violations).sum();
    let pass = runs.results.len() == 40
        && checks > 0
        && violations == 0
        && runs.took < Duration::from_secs(120);
    verdict(
        pass,
        format!(
            "{} runs, {checks} table snapshots, {violations} cycles, {:.1?}",
            runs.results.len(),
            runs.took
        ),
    )
}

fn power_gate(runs: &LoopRuns) -> Verdict {
    if let Some(e) = &runs.error {
        return fail(e.clone());
    }
    let srvnp = runs.results.iter().filter(|r| r.protocol == Protocol::Srvnp);
    let (checks, violations) = srvnp.fold((0, 0), |(c, v), r| {
        (c + r.invariants.gate_checks, v + r.invariants.gate_violations)
    });
    let pass = violations == 0 && checks == runs.traced_forwards && runs.power_drops > 0;
    verdict(
        pass,
        format!(
            "{checks} relayed requests checked, {violations} from non-Active nodes, {} refused by the gate",
            runs.power_drops
        ),
    )
}

// ---- 6: determinism -------------------------------------------------------------

fn determinism() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for p in PROTOCOLS {
        let cfg = ScenarioConfig {
            node_count: 30,
            area_x: 600.0,
            area_y: 600.0,
            flow_count: 8,
            sim_duration_s: 120.0,
            seed: 7,
            protocol: p,
            battery_init_min: Some(3.0),
            ..ScenarioConfig::default()
        };
        let (a, b) = match (run_scenario(&cfg, true), run_scenario(&cfg, true)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return fail(format!("{p}: {e}")),
        };
        let csv_a = srvnp::sim::to_csv(std::slice::from_ref(&a));
        let csv_b = srvnp::sim::to_csv(std::slice::from_ref(&b));
        let ta = a.trace.unwrap_or_default();
        let tb = b.trace.unwrap_or_default();
        let same = !ta.is_empty() && ta.as_bytes() == tb.as_bytes() && csv_a.as_bytes() == csv_b.as_bytes();
        pass &= same;
        parts.push(format!("{p}: {} trace bytes identical {same}", ta.len()));
    }
    verdict(pass, parts.join("; "))
}

// ---- 7, 8: the pause-time sweep -------------------------------------------------

const PAUSES: [f64; 6] = [0.0, 100.0, 200.0, 300.0, 400.0, 500.0];

struct Sweep {
    rows: Vec<SweepRow>,
    took: Duration,
}

fn pause_sweep() -> Result<Sweep, String> {
    let base = ScenarioConfig {
        node_count: 50,
        area_x: 700.0,
        area_y: 700.0,
        flow_count: 10,
        sim_duration_s: 500.0,
        ..ScenarioConfig::default()
    };
    let spec = SweepSpec {
        param: SweepParam::PauseTime,
        values: PAUSES.to_vec(),
        seeds: vec![1, 2, 3, 4, 5],
        protocols: PROTOCOLS.to_vec(),
    };
    let start = Instant::now();
    let rows = sweep(&spec, &base).map_err(|e| e.to_string())?;
    Ok(Sweep {
        rows,
        took: start.elapsed(),
    })
}

/// Per-seed values of `f` for one protocol at one pause.
fn cell(s: &Sweep, p: Protocol, pause: f64, f: impl Fn(&RunResult) -> f64) -> BTreeMap<u64, f64> {
    s.rows
        .iter()
        .filter(|r| r.result.protocol == p && r.value == pause)
        .map(|r| (r.result.seed, f(&r.result)))
        .collect()
}

fn mean(v: &BTreeMap<u64, f64>) -> f64 {
    v.values().sum::<f64>() / v.len() as f64
}

fn pdr_shape(s: &Sweep) -> Verdict {
    let pdr = |r: &RunResult| r.report.delivery_ratio;
    let mut pass = s.took < Duration::from_secs(300);
    let mut srvnp_means = Vec::new();
    let mut line = Vec::new();
    for pause in PAUSES {
        let a = cell(s, Protocol::Srvnp, pause, pdr);
        let b = cell(s, Protocol::AodvBaseline, pause, pdr);
        if a.len() != 5 || b.len() != 5 {
            return fail(format!("pause {pause}: missing runs"));
        }
        let seeds_ok = a.iter().filter(|(seed, v)| **v >= b[*seed]).count();
        let (ma, mb) = (mean(&a), mean(&b));
        pass &= ma >= mb && seeds_ok >= 4;
        srvnp_means.push(ma);
        line.push(format!("{pause:.0}s {ma:.5}/{mb:.5} ({seeds_ok}/5)"));
    }
    let increasing = srvnp_means.windows(2).all(|w| w[1] >= w[0]);
    let floors = srvnp_means[0] >= 0.85 && srvnp_means[5] >= 0.93;
    pass &= increasing && floors;
    verdict(
        pass,
        format!(
            "srvnp/baseline pdr {}; non-decreasing {increasing}; {:.1?}",
            line.join(", "),
            s.took
        ),
    )
}

fn delay_order(s: &Sweep) -> Verdict {
    let delay = |r: &RunResult| r.report.mean_delay.unwrap_or(f64::NAN);
    let mut pass = true;
    let mut line = Vec::new();
    for pause in PAUSES {
        let (ma, mb) = (
            mean(&cell(s, Protocol::Srvnp, pause, delay)),
            mean(&cell(s, Protocol::AodvBaseline, pause, delay)),
        );
        pass &= ma >= mb;
        line.push(format!("{pause:.0}s {:.3}/{:.3} ms", ma * 1e3, mb * 1e3));
    }
    verdict(pass, format!("srvnp/baseline delay {}", line.join(", ")))
}

// ---- 9: metrics and the trace recount ---------------------------------------------

fn synthetic(sent: u32, received: u32, delay_s: &[f64]) -> FlowStats {
    let mut f = FlowStats::new(64);
    for seq in 0..sent {
        f.record_send(seq, SimTime::from_secs(1));
    }
    for seq in 0..received {
        let d = delay_s.get(seq as usize).copied().unwrap_or(0.01);
        f.record_recv(seq, SimTime::from_secs(1) + SimTime::from_secs_f64(d));
    }
    f
}

/// PDR and mean delay rebuilt from DATA_TX / DATA_RX lines alone.
fn recount(trace: &str) -> (f64, f64) {
    let mut sent: BTreeMap<u32, BTreeMap<u32, SimTime>> = BTreeMap::new();
    let mut recv: BTreeMap<u32, BTreeMap<u32, SimTime>> = BTreeMap::new();
    for l in trace.lines().filter_map(parse_line) {
        let key = |k| l.get(k).and_then(|v| v.parse::<u32>().ok());
        let (Some(flow), Some(seq)) = (key("flow"), key("seq")) else {
            continue;
        };
        match l.kind {
            TraceKind::DataTx => {
                sent.entry(flow).or_default().insert(seq, l.t);
            }
            TraceKind::DataRx => {
                recv.entry(flow).or_default().entry(seq).or_insert(l.t);
            }
            _ => {}
        }
    }
    let mut ratios = Vec::new();
    let mut delays = Vec::new();
    for (flow, tx) in &sent {
        let rx = recv.get(flow).cloned().unwrap_or_default();
        ratios.push(rx.len() as f64 / tx.len() as f64);
        for (seq, at) in rx {
            delays.push((at.as_micros() - tx[&seq].as_micros()) as f64 / 1e6);
        }
    }
    (
        ratios.iter().sum::<f64>() / ratios.len() as f64,
        delays.iter().sum::<f64>() / delays.len() as f64,
    )
}

fn metrics_oracle() -> Verdict {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let pdr = delivery_ratio(&[synthetic(10, 9, &[]), synthetic(2, 1, &[])]).unwrap_or(f64::NAN);
    let delay = mean_delay(&[synthetic(2, 2, &[0.05, 0.15])]).unwrap_or(f64::NAN);
    let unit_ok = close(pdr, 0.7) && close(delay, 0.10);

    let cfg = ScenarioConfig {
        node_count: 40,
        area_x: 700.0,
        area_y: 700.0,
        flow_count: 10,
        sim_duration_s: 200.0,
        seed: 3,
        ..ScenarioConfig::default()
    };
    let res = match run_scenario(&cfg, true) {
        Ok(r) => r,
        Err(e) => return fail(format!("run failed: {e}")),
    };
    let (tr_pdr, tr_delay) = recount(res.trace.as_deref().unwrap_or(""));
    let rep_delay = res.report.mean_delay.unwrap_or(f64::NAN);
    let oracle_ok = close(tr_pdr, res.report.delivery_ratio) && close(tr_delay, rep_delay);
    verdict(
        unit_ok && oracle_ok,
        format!(
            "synthetic pdr {pdr} delay {delay}; run pdr {:.6} vs recount {tr_pdr:.6}, delay {rep_delay:.6} vs {tr_delay:.6}",
            res.report.delivery_ratio
        ),
    )
}

fn main() -> ExitCode {
    let mut lines: Vec<(u32, &str, Verdict)> = vec![
        (1, "scoring table", table_golden()),
        (2, "stable path and repair", fig1_paths()),
        (3, "virtual node selection", fig2_repair()),
        (4, "static sanity", static_sanity()),
    ];
    let runs = loop_runs();
    lines.push((5, "loop freedom", loop_freedom(&runs)));
    lines.push((6, "determinism", determinism()));
    match pause_sweep() {
        Ok(s) => {
            lines.push((7, "delivery vs pause time", pdr_shape(&s)));
            lines.push((8, "delay ordering", delay_order(&s)));
        }
        Err(e) => {
            lines.push((7, "delivery vs pause time", fail(e.clone())));
            lines.push((8, "delay ordering", fail(e)));
        }
    }
    lines.push((9, "metrics and trace recount", metrics_oracle()));
    lines.push((10, "power gate", power_gate(&runs)));

    let mut failed = 0;
    for (n, name, v) in &lines {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} [{tag}] {name}: {}", v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
