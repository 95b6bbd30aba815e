//! Acceptance run: one PASS/FAIL line per criterion on stdout, details on
//! stderr. Exits non-zero on failure only when `BNMM_ACCEPTANCE_STRICT` is
//! set, so the full report is always produced.

mod common;

use std::time::Instant;

use bnmm_core::simulate::{mean_sd, run_replicate, FitSettings, Noise, ReplicateResult, Scenario, SimConfig};

const REPLICATES: usize = 10;

struct Outcome {
    id: u8,
    pass: bool,
    detail: String,
}

fn report(o: &Outcome) {
    println!(
        "criterion {}: {} ({})",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn exactness() -> Outcome {
    let start = Instant::now();
    let r = common::exactness(100_000);
    Outcome {
        id: 1,
        pass: r.is_ok(),
        detail: match r {
            Ok(()) => format!("100000 random states, {:.1}s", start.elapsed().as_secs_f64()),
            Err(e) => e,
        },
    }
}

fn conditionals() -> Outcome {
    let start = Instant::now();
    let checks = common::conditional_checks();
    let secs = start.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.error).fold(0.0, f64::max);
    for c in &checks {
        eprintln!("  oracle {:<18} max error {:.2e}", c.name, c.error);
    }
    let bad: Vec<&str> = checks.iter().filter(|c| !(c.error < 1e-8)).map(|c| c.name).collect();
    Outcome {
        id: 2,
        pass: bad.is_empty() && secs < 60.0,
        detail: format!(
            "{} updates, worst error {worst:.2e}, {secs:.1}s{}",
            checks.len(),
            if bad.is_empty() { String::new() } else { format!(", failing {bad:?}") }
        ),
    }
}

fn geweke() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut n_stats = 0;
    for joint in [true, false] {
        for (name, z) in common::geweke(20_000, 2024, joint) {
            eprintln!("  geweke joint_outcome={joint} {name:<16} z = {z:+.3}");
            worst = worst.max(if z.is_finite() { z.abs() } else { f64::INFINITY });
            n_stats += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 3,
        pass: worst < 4.0 && secs < 600.0,
        detail: format!("{n_stats} statistics over both outcome updates, max |z| = {worst:.2}, {secs:.1}s"),
    }
}

fn replicates(scenario: Scenario, noise: Noise, seed: u64) -> Vec<ReplicateResult> {
    let base = SimConfig::desk(scenario, noise, seed);
    let fit = FitSettings::default();
    (0..REPLICATES)
        .map(|r| {
            let res = run_replicate(&base, &fit, r).expect("replicate runs");
            eprintln!(
                "  scenario {} {} rep {r}: sens {:?} spec {:?} te bias {:+.2}% covered {} psrf {:?} {:.1}s",
                scenario.number(),
                noise.name(),
                res.selection.sensitivity,
                res.selection.specificity,
                res.bias.te.value,
                res.te_covered,
                res.psrf,
                res.seconds
            );
            res
        })
        .collect()
}

fn rates(runs: &[ReplicateResult]) -> (f64, f64) {
    let sens = mean_sd(runs.iter().map(|r| r.selection.sensitivity)).map_or(f64::NAN, |m| m.0);
    let spec = mean_sd(runs.iter().map(|r| r.selection.specificity)).map_or(f64::NAN, |m| m.0);
    (sens, spec)
}

fn scenario_one(runs: &[ReplicateResult]) -> Outcome {
    let (sens, spec) = rates(runs);
    let te_bias = runs.iter().map(|r| r.bias.te.value).sum::<f64>() / runs.len() as f64;
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    Outcome {
        id: 4,
        pass: sens >= 0.95 && spec >= 0.98 && te_bias.abs() <= 5.0 && slowest <= 900.0,
        detail: format!(
            "sensitivity {sens:.3}, specificity {spec:.3}, TE bias {te_bias:+.2}%, slowest replicate {slowest:.0}s"
        ),
    }
}

fn scenario_two(runs: &[ReplicateResult]) -> Outcome {
    let (sens, spec) = rates(runs);
    Outcome {
        id: 5,
        pass: sens >= 0.70 && spec >= 0.95,
        detail: format!("sensitivity {sens:.3}, specificity {spec:.3}"),
    }
}

fn icl() -> Outcome {
    let (hits, picks) = common::icl_recovery(4, 31);
    Outcome {
        id: 6,
        pass: hits >= 8,
        detail: format!("true Q = 4 chosen in {hits}/10, picks {picks:?}"),
    }
}

fn convergence(runs: &[ReplicateResult]) -> Outcome {
    let ok = runs
        .iter()
        .filter(|r| r.psrf.is_some_and(|p| p.iter().all(|&x| x < 1.1)))
        .count();
    let worst = runs
        .iter()
        .filter_map(|r| r.psrf)
        .flat_map(|p| p.into_iter())
        .fold(0.0, f64::max);
    Outcome {
        id: 7,
        pass: ok >= 9,
        detail: format!("{ok}/{} replicates with PSRF < 1.1 for beta_z, sigma2_outcome, TE; worst {worst:.3}", runs.len()),
    }
}

fn invariance() -> Outcome {
    let results = common::invariance_suite();
    let failed: Vec<String> = results
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    Outcome {
        id: 8,
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} properties", results.len())
        } else {
            failed.join("; ")
        },
    }
}

fn coverage(runs: &[ReplicateResult]) -> Outcome {
    let covered = runs.iter().filter(|r| r.te_covered).count();
    Outcome {
        id: 9,
        pass: covered >= 8,
        detail: format!("TE covered in {covered}/{}", runs.len()),
    }
}

fn main() {
    let mut outcomes = Vec::new();
    let mut run = |o: Outcome| {
        report(&o);
        outcomes.push(o.pass);
    };
    run(exactness());
    run(conditionals());
    run(geweke());
    let s1 = replicates(Scenario::Shared, Noise::Low, 20_240_101);
    run(scenario_one(&s1));
    let s2 = replicates(Scenario::Overlapping, Noise::High, 20_240_202);
    run(scenario_two(&s2));
    run(icl());
    run(convergence(&s1));
    run(invariance());
    run(coverage(&s1));

    let failed = outcomes.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 && std::env::var_os("BNMM_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
