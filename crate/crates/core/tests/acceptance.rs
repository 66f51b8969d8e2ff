//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Failures are reported but only fail the process when
//! `ACCEPTANCE_STRICT=1`, so the rest of the suite still runs.
//! `ACCEPTANCE_SKIP` takes a comma-separated list of criterion numbers to
//! skip, and `ACCEPTANCE_GRID` shrinks the planar image for quick runs.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use imgadd::closed_form::{
    lemma3_flatten, thm1_hybrid_cont, thm2_hybrid_1bit, thm3_analog_cont, thm4_analog_1bit,
};
use imgadd::digital::svd_factorize;
use imgadd::experiments::{
    closed_form_checks, invariant_checks, planar_comparison, run_experiment, Cell,
    ExperimentConfig, ResultTable,
};
use imgadd::hybrid::HybridBank;
use imgadd::numerics::{Bits, CMat, C64};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn cfg(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json).expect("acceptance config is valid")
}

fn median(t: &ResultTable, filters: &[(&str, Cell)]) -> f64 {
    t.value(filters, "median").unwrap_or(f64::NAN)
}

fn int(v: usize) -> Cell {
    Cell::Int(v as i64)
}

fn bits(b: Bits) -> Cell {
    Cell::from(b)
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |_, _| {
        C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    })
}

fn rel(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm()
}

/// Random constructions with sizes up to 8×8 and ranks 1 to 4, plus the
/// 7×7 rank-3 instance run through every construction.
fn criterion_1() -> Outcome {
    let checks = closed_form_checks(50, 8, &[1, 2, 3, 4], 2024).expect("checks run");
    let mut parts: Vec<String> = checks
        .iter()
        .filter(|c| c.name != "lemma2_optimum")
        .map(|c| format!("{} max {:.1e} ({} bad)", c.name, c.max_error, c.failures))
        .collect();
    let mut pass = checks
        .iter()
        .filter(|c| c.name != "lemma2_optimum")
        .all(|c| c.passed());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = randn(&mut rng, 7, 3) * randn(&mut rng, 3, 7);
    let d = svd_factorize(&w).expect("svd");
    let mut bank = HybridBank::empty(7, 7, 2, 3, Bits::Finite(3));
    for _ in 0..2 {
        let mut ph = |n, m| {
            DMatrix::from_fn(n, m, |_, _| {
                f64::from(rng.gen_range(0..8u32)) * std::f64::consts::PI / 4.0
            })
        };
        let (pt, pr) = (ph(7, 2), ph(7, 3));
        bank.push_image(
            &pt,
            &randn(&mut rng, 2, 1).column(0).into(),
            &pr,
            &randn(&mut rng, 3, 1).column(0).into(),
        )
        .expect("shapes agree");
    }
    let flat = lemma3_flatten(&bank);
    let cases = [
        (
            "thm1",
            thm1_hybrid_cont(&d).matrix(),
            thm1_hybrid_cont(&d).q(),
            3,
        ),
        (
            "thm2",
            thm2_hybrid_1bit(&w).matrix(),
            thm2_hybrid_1bit(&w).q(),
            49,
        ),
        (
            "thm3",
            thm3_analog_cont(&d).matrix(),
            thm3_analog_cont(&d).q(),
            12,
        ),
        (
            "thm4",
            thm4_analog_1bit(&w).matrix(),
            thm4_analog_1bit(&w).q(),
            196,
        ),
    ];
    let mut worst = rel(&flat.matrix(), &bank.matrix());
    pass &= flat.q() == 12 && worst <= 1e-10;
    for (_, m, q, want_q) in &cases {
        let e = rel(m, &w);
        worst = worst.max(e);
        pass &= e <= 1e-10 && q == want_q;
    }
    parts.push(format!("7x7 rank-3 worst {worst:.1e}"));
    outcome(pass, parts.join("; "))
}

fn criterion_2() -> Outcome {
    let checks = closed_form_checks(1, 2, &[1], 99).expect("checks run");
    let l2 = checks
        .iter()
        .find(|c| c.name == "lemma2_optimum")
        .expect("lemma2 check present");
    outcome(
        l2.passed() && l2.trials >= 100 && l2.max_error <= 1e-12,
        format!(
            "{} vectors, max relative gap {:.1e}",
            l2.trials, l2.max_error
        ),
    )
}

fn criterion_3() -> Outcome {
    let ula = run_experiment(&cfg(
        r#"{"kind":"altmin-sweep","family":"ula","n_values":[11],"q_values":[1],"trials":20}"#,
    ))
    .expect("ula sweep");
    let mra = run_experiment(&cfg(
        r#"{"kind":"altmin-sweep","family":"mra","n_values":[7],"q_values":[1,2],"trials":20}"#,
    ))
    .expect("mra sweep");
    let u1 = median(&ula, &[("q", int(1))]);
    let m1 = median(&mra, &[("q", int(1))]);
    let m2 = median(&mra, &[("q", int(2))]);
    let bound = mra.value(&[("q", int(1))], "q_bound").unwrap_or(f64::NAN);
    outcome(
        u1 <= 1e-3 && m1 >= 1e-1 && m2 <= 1e-3 && bound == 2.0,
        format!("ULA11 Q=1 {u1:.2e}; MRA7 Q=1 {m1:.2e}, Q=2 {m2:.2e}; bound {bound}"),
    )
}

fn greedy_medians(b: u32) -> ResultTable {
    run_experiment(&cfg(&format!(
        r#"{{"kind":"greedy-sweep","family":"mra","n_values":[7],"q_values":[8,16],"bits_values":[{b}],"m_values":[2],"trials":20}}"#
    )))
    .expect("greedy sweep")
}

fn criterion_4() -> Outcome {
    let t: Vec<(u32, ResultTable)> = [1, 3, 5]
        .into_iter()
        .map(|b| (b, greedy_medians(b)))
        .collect();
    let at = |b: u32, q: usize| {
        let (_, table) = t.iter().find(|(bb, _)| *bb == b).expect("swept");
        median(table, &[("q", int(q))])
    };
    let (b1_16, b5_16) = (at(1, 16), at(5, 16));
    let q8: Vec<f64> = [1, 3, 5].iter().map(|&b| at(b, 8)).collect();
    let mut inversions = 0;
    let mut inversions_ok = true;
    for w in q8.windows(2) {
        if w[1] > w[0] {
            inversions += 1;
            inversions_ok &= w[1] <= 1.1 * w[0];
        }
    }
    let pass = b5_16 <= 1e-2 && b5_16 < b1_16 && inversions <= 1 && inversions_ok;
    outcome(
        pass,
        format!(
            "Q=16: B=5 {b5_16:.2e} vs B=1 {b1_16:.2e}; Q=8 over B=1,3,5: {:.2e}, {:.2e}, {:.2e}",
            q8[0], q8[1], q8[2]
        ),
    )
}

fn criterion_5() -> Outcome {
    let digital = run_experiment(&cfg(
        r#"{"kind":"altmin-sweep","family":"mra","target":{"kind":"window","window":{"kind":"chebyshev","attenuation_db":30}},"n_values":[7],"q_values":[1,2,3,4],"trials":20}"#,
    ))
    .expect("digital sweep");
    let rank = (1..=4)
        .find(|&q| median(&digital, &[("q", int(q))]) <= 1e-6)
        .unwrap_or(4);
    let qs = format!("[{rank},{}]", rank + 1);
    let t = run_experiment(&cfg(&format!(
        r#"{{"kind":"b-sweep","n_values":[7],"q_values":{qs},"bits_values":[1,2,3,4,5,6,16],"m_values":[2],"trials":20}}"#
    )))
    .expect("b sweep");
    let pick = |method: &str, b: Bits, q: usize| {
        median(
            &t,
            &[
                ("method", Cell::from(method)),
                ("bits", bits(b)),
                ("q", int(q)),
            ],
        )
    };
    let mut lines = Vec::new();
    let mut wins = true;
    let mut wins_next = true;
    for b in 1..=6 {
        let b = Bits::Finite(b);
        let (g, base) = (pick("greedy", b, rank), pick("quantized_thm1", b, rank));
        let (g2, base2) = (
            pick("greedy", b, rank + 1),
            pick("quantized_thm1", b, rank + 1),
        );
        wins &= g <= base;
        wins_next &= g2 <= base2;
        lines.push(format!("B={b} {g:.1e}/{base:.1e}"));
    }
    let dig = pick("digital", Bits::Infinite, rank);
    let base16 = pick("quantized_thm1", Bits::Finite(16), rank);
    let close = (base16 - dig).abs() <= 1e-6;
    outcome(
        wins && close,
        format!(
            "digital rank {rank}; greedy/baseline {}; B=16 baseline {base16:.2e} vs digital {dig:.2e}; at Q={} greedy wins for B<=6: {wins_next}",
            lines.join(", "),
            rank + 1
        ),
    )
}

fn first_below(t: &ResultTable, m: usize, tol: f64) -> Option<usize> {
    (1..=12).find(|&q| median(t, &[("m", int(m)), ("q", int(q))]) <= tol)
}

fn criterion_6() -> Outcome {
    let digital = run_experiment(&cfg(
        r#"{"kind":"altmin-sweep","family":"mra","target":{"kind":"window","window":{"kind":"chebyshev","attenuation_db":30}},"n_values":[7],"q_values":[1,2,3,4],"trials":20}"#,
    ))
    .expect("digital sweep");
    let rank = (1..=4)
        .find(|&q| median(&digital, &[("q", int(q))]) <= 1e-6)
        .unwrap_or(0);
    let t = run_experiment(&cfg(
        r#"{"kind":"tradeoff-sweep","n_values":[7],"q_values":[1,2,3,4,5,6,7,8,9,10,11,12],"bits_values":["inf"],"m_values":[1,2],"trials":20}"#,
    ))
    .expect("tradeoff sweep");
    let (m2, m1) = (first_below(&t, 2, 1e-6), first_below(&t, 1, 1e-6));
    outcome(
        rank > 0 && m2 == Some(rank) && m1 == Some(4 * rank),
        format!("digital rank {rank}; first Q at 1e-6: M=2 {m2:?}, M=1 {m1:?}"),
    )
}

fn criterion_7() -> Outcome {
    let grid: usize = std::env::var("ACCEPTANCE_GRID")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(64);
    let c = cfg(&format!(
        r#"{{"kind":"planar-imaging","n_values":[8],"q_values":[8],"bits_values":[5],"m_values":[2],"imaging":{{"grid":{grid}}}}}"#
    ));
    let start = Instant::now();
    let reports = planar_comparison(&c).expect("planar run");
    let elapsed = start.elapsed();
    let get = |l: &str| {
        reports
            .iter()
            .find(|r| r.label == l)
            .expect("report present")
    };
    let (ura, ba, hy) = (get("ura_digital"), get("ba_digital"), get("ba_hybrid"));
    let pass = ura.elements == 81
        && ba.elements == 32
        && ba.psf_dev_db <= -40.0
        && ura.noise_power < ba.noise_power
        && hy.peak_offset <= 1
        && elapsed < Duration::from_secs(30 * 60);
    outcome(
        pass,
        format!(
            "{grid}x{grid}; URA Q=1 err {:.1e}; BA Q={} err {:.1e}, PSF dev {:.1} dB; noise URA {:.3e} < BA {:.3e}; hybrid B=5 M=2 Q=8 median err {:.1e}, peak offset {} px; {:.0} s",
            ura.rel_error,
            ba.q,
            ba.rel_error,
            ba.psf_dev_db,
            ura.noise_power,
            ba.noise_power,
            hy.rel_error,
            hy.peak_offset,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let checks = invariant_checks(1000, 31).expect("invariants run");
    let pass = checks.iter().all(|c| c.passed() && c.trials == 1000);
    let detail = checks
        .iter()
        .map(|c| format!("{} {}/{} ok", c.name, c.trials - c.failures, c.trials))
        .collect::<Vec<_>>();
    outcome(pass, detail.join("; "))
}

fn main() {
    // libtest flags such as --nocapture or a name filter are ignored.
    let skip: Vec<usize> = std::env::var("ACCEPTANCE_SKIP")
        .unwrap_or_default()
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .collect();
    let limits = [
        10.0,
        f64::INFINITY,
        120.0,
        600.0,
        f64::INFINITY,
        f64::INFINITY,
        1800.0,
        f64::INFINITY,
    ];
    let criteria: [Criterion; 8] = [
        ("closed-form exactness", criterion_1),
        ("single front end optimum", criterion_2),
        ("digital phase transition", criterion_3),
        ("greedy behavior in B and Q", criterion_4),
        ("greedy vs quantized baseline", criterion_5),
        ("front end trade-off", criterion_6),
        ("planar imaging equivalence", criterion_7),
        ("invariant suites", criterion_8),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if skip.contains(&id) {
            println!("criterion {id} [{name}]: SKIP");
            continue;
        }
        let start = Instant::now();
        let mut o = run();
        let secs = start.elapsed().as_secs_f64();
        if secs > limits[i] {
            o.pass = false;
            o.detail
                .push_str(&format!("; over the {:.0} s limit", limits[i]));
        }
        println!(
            "criterion {id} [{name}]: {} ({secs:.1} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(id);
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - skip.len() - failed.len(),
        criteria.len() - skip.len()
    );
    if !failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
