//! One line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use crashsim::app::markov::TransitionMatrix;
use crashsim::app::{workload_mix_check, OpCatalog};
use crashsim::cluster::six_nines_budget;
use crashsim::harness::presets::*;
use crashsim::harness::scenario::Scenario;
use crashsim::recoverymgr::{detection_headroom, fp_headroom};
use crashsim::runtime::ComponentCatalog;
use crashsim::simcore::RngStream;
use crashsim::workload::ThinkConfig;
use crashsim::world::simulate;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn preset_err(e: PresetError) -> String {
    e.to_string()
}

fn recovery_times() -> Check {
    let t = Instant::now();
    let r = table3(1).map_err(preset_err)?;
    let secs = t.elapsed().as_secs_f64();
    let (lo, hi) = r.ejb_range();
    let all_equal = r.microreboots.iter().chain([&r.restart]).all(|x| x.measured_ms == x.configured_ms);
    let ratio = r.restart.measured_ms as f64 / hi as f64;
    ensure(
        (lo, hi) == (411, 825) && r.restart.measured_ms == 19_083 && all_equal && ratio > 23.0 && secs < 5.0,
        format!("EJB {lo}-{hi} ms, restart {} ms, ratio {ratio:.1}x, {secs:.2}s", r.restart.measured_ms),
    )
}

fn fig1_costs() -> Check {
    let t = Instant::now();
    let r = fig1(1).map_err(preset_err)?;
    let secs = t.elapsed().as_secs_f64();
    let micro_max = r.micro.iter().map(|c| c.bad_requests).max().unwrap_or(0);
    let restart_min = r.restart.iter().map(|c| c.bad_requests).min().unwrap_or(0);
    ensure(
        micro_max <= 300
            && restart_min >= 2_000
            && r.ratio() >= 10.0
            && r.micro_session_lost == 0
            && r.restart_session_lost > 0
            && secs < 60.0,
        format!(
            "uRB max {micro_max}, restart min {restart_min}, ratio {:.1}, session loss {} vs {}, {secs:.1}s",
            r.ratio(),
            r.micro_session_lost,
            r.restart_session_lost
        ),
    )
}

fn table2_levels() -> Check {
    let r = table2(1).map_err(preset_err)?;
    let bad: Vec<&str> = r.rows.iter().filter(|x| !x.matches()).map(|x| x.label.as_str()).collect();
    ensure(bad.is_empty(), format!("{} rows, mismatched {bad:?}", r.rows.len()))
}

fn headroom() -> Check {
    let (n, fp) = fp_headroom(78.0, 3_917.0).map_err(|e| e.to_string())?;
    let d = detection_headroom(71.8, 78.0, 3_917.0).map_err(|e| e.to_string())?;
    let f = fig5a(1).map_err(preset_err)?;
    let sim = f.simulated_s.ok_or("no crossover in sweep")?;
    let off = (sim - f.formula_s).abs() / f.formula_s;
    ensure(
        n == 49 && (fp * 100.0).round() == 98.0 && (50.0..=57.0).contains(&d) && off <= 0.15,
        format!(
            "n={n} fp={:.0}% detect={d:.1}s; fig5a formula {:.1}s simulated {sim:.1}s ({:.0}% off)",
            fp * 100.0,
            f.formula_s,
            off * 100.0
        ),
    )
}

fn budgets() -> Check {
    let got: Vec<u64> = [2_280.0, 162.0, 78.0]
        .iter()
        .map(|c| six_nines_budget(REQUESTS_PER_YEAR, *c, 0.999999))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(got == [23, 329, 683], format!("{got:?}"))
}

fn rejuvenation() -> Check {
    let r = fig6(1).map_err(preset_err)?;
    let head = r.order_after_first_pass.first().map(String::as_str);
    let heap_ok = !r.micro_passes.is_empty() && r.micro_passes.iter().all(|(free, _)| *free >= r.m_sufficient);
    ensure(
        r.restart_failed >= 5 * r.micro_failed && r.micro_zero_seconds == 0 && head == Some("ViewItem") && heap_ok,
        format!(
            "failed {} vs {}, zero-good seconds {}, head {head:?}, {} passes heap ok {heap_ok}",
            r.micro_failed,
            r.restart_failed,
            r.micro_zero_seconds,
            r.micro_passes.len()
        ),
    )
}

fn cluster_shape() -> Check {
    let r = fig3(1).map_err(preset_err)?;
    let micro: Vec<u64> = r.micro.iter().map(|p| p.bad_requests).collect();
    let (lo, hi) = (micro.iter().min().copied().unwrap_or(0), micro.iter().max().copied().unwrap_or(0));
    let spread = hi as f64 / lo.max(1) as f64;
    let mut sweep: Vec<(usize, u64)> = r.session_sweep.iter().map(|p| (p.sessions_on_bad, p.bad_requests)).collect();
    sweep.sort_unstable();
    let monotone = sweep.windows(2).all(|w| w[0].1 <= w[1].1);
    ensure(
        !micro.is_empty() && spread < 2.0 && monotone && sweep.len() > 1,
        format!("uRB {micro:?} ({spread:.2}x), restart+failover by sessions {sweep:?}"),
    )
}

fn masking() -> Check {
    let r = table6(1).map_err(preset_err)?;
    let t = r.total();
    let per_row = r.rows.iter().all(|(_, x)| x.no_retry >= x.retry && x.retry >= x.drain_retry);
    ensure(
        per_row && t.no_retry >= t.retry && t.retry >= t.drain_retry && r.masked_fraction() >= 0.4,
        format!(
            "{} / {} / {}, retry masks {:.0}%",
            t.no_retry,
            t.retry,
            t.drain_retry,
            r.masked_fraction() * 100.0
        ),
    )
}

fn failover_comparison() -> Check {
    let r = sec61(1).map_err(preset_err)?;
    let (a, b) = r.totals();
    ensure(a < b, format!("uRB {a} vs failover+uRB {b}"))
}

fn oracles() -> Check {
    let ledger = common::ledger_mismatches(1_000, 10_000);
    let groups = common::group_mismatches(1_000);
    ensure(
        ledger.is_empty() && groups.is_empty(),
        format!("ledger mismatches {}, group mismatches {}", ledger.len(), groups.len()),
    )
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let mut differing = Vec::new();
    let mut files = 0;
    for name in PRESETS {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            run_preset(name, 7).map_err(preset_err)?.write(d.path()).map_err(|e| e.to_string())?;
        }
        let (a, b) = (files_under(dirs[0].path()), files_under(dirs[1].path()));
        files += a.len();
        if a != b {
            differing.push(name);
        }
    }
    ensure(differing.is_empty(), format!("{files} files across {} presets, differing {differing:?}", PRESETS.len()))
}

fn workload() -> Check {
    let c = ComponentCatalog::demo();
    let ops = OpCatalog::demo(&c);
    let m = TransitionMatrix::demo(&ops);
    let target = [32.0, 23.0, 12.0, 12.0, 11.0, 10.0];
    let mix = workload_mix_check(&m, &ops).map_err(|e| e.to_string())?;
    let mix_ok = mix.iter().zip(target).all(|((_, got), want)| (got - want).abs() <= 2.0);

    let s = Scenario {
        duration_ms: 300_000,
        ..Scenario::default()
    };
    let r = simulate(&s, s.resolve().map_err(|e| e.to_string())?);
    let tput = r.throughput(60_000, 300_000);
    let tput_ok = (71.0 * 0.9..=72.0 * 1.1).contains(&tput);

    let cfg = ThinkConfig::default();
    let mut rng = RngStream::new(1, "think");
    let draws: Vec<u64> = (0..100_000).map(|_| cfg.sample(&mut rng)).collect();
    let mean = draws.iter().sum::<u64>() as f64 / draws.len() as f64;
    let max = draws.iter().max().copied().unwrap_or(0);
    let think_ok = (mean - 7_000.0).abs() <= 350.0 && max <= 70_000;

    let shown: Vec<String> = mix.iter().map(|(c, p)| format!("{c} {p:.1}")).collect();
    ensure(
        mix_ok && tput_ok && think_ok,
        format!("mix [{}], {tput:.1} req/s, think mean {mean:.0} ms max {max} ms", shown.join(", ")),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("recovery-time ratio", recovery_times),
        ("per-incident cost", fig1_costs),
        ("fault-cure matrix", table2_levels),
        ("headroom formulas", headroom),
        ("availability budgets", budgets),
        ("rejuvenation", rejuvenation),
        ("cluster shape", cluster_shape),
        ("masking monotonicity", masking),
        ("failover comparison", failover_comparison),
        ("oracle equivalence", oracles),
        ("determinism", determinism),
        ("workload calibration", workload),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{:.1}s]", i + 1, t.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
