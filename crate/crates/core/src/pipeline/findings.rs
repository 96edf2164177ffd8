//! The end-to-end reproduction run and its trend checks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::artifacts::*;
use super::rundir::RunDir;
use super::stages::{self, energy_task, PIPELINED};
use crate::error::Result;
use crate::eval::{intent_task, EmbeddingSource, EvalReport, DOCUMENT_TASK, KEYWORD_TASK, ENERGY_TOLERANCE};
use crate::index::CostReport;
use crate::train::Variant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub claim: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Findings {
    pub checks: Vec<Check>,
    /// Wall-clock checks, kept apart because they are not reproducible
    /// byte for byte.
    pub timing_checks: Vec<Check>,
}

impl Findings {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().chain(&self.timing_checks).all(|c| c.pass)
    }

    pub fn summary_table(checks: &[Check]) -> String {
        let mut s = String::from("id\tresult\tclaim\tdetail\n");
        for c in checks {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", c.id, if c.pass { "PASS" } else { "FAIL" }, c.claim, c.detail);
        }
        s
    }
}

/// Reports produced by the reproduction run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reports {
    pub retrieval: EvalReport,
    pub kws: EvalReport,
    pub intent: EvalReport,
    pub rank: EvalReport,
    pub cost: CostReport,
}

/// At most one decrease along `values`, and no decrease larger than `tol`.
pub fn nearly_nondecreasing(values: &[f64], tol: f64) -> bool {
    let drops: Vec<f64> = values.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 0.0).collect();
    drops.len() <= 1 && drops.iter().all(|&d| d <= tol)
}

fn fmt_series(s: &[(usize, f64)]) -> String {
    s.iter().map(|(d, v)| format!("{d}:{v:.4}")).collect::<Vec<_>>().join(" ")
}

fn ndcg5(r: &EvalReport, model: &str) -> Vec<(usize, f64)> {
    r.series(&format!("{model}/{DOCUMENT_TASK}"), "ndcg@5")
}

fn check(id: &str, claim: &str, pass: bool, detail: String) -> Check {
    Check { id: id.into(), claim: claim.into(), pass, detail }
}

fn margins(a: &[(usize, f64)], b: &[(usize, f64)]) -> Vec<(usize, f64)> {
    a.iter().zip(b).map(|(x, y)| (x.0, x.1 - y.1)).collect()
}

/// Evaluates the trend checks on finished reports. `bytes_ok` carries the
/// per-dim disk-size comparison from the cost stage.
pub fn evaluate(reports: &Reports, dims: &[usize], shots: &[usize], bytes: &[(usize, usize, usize)]) -> Findings {
    let lf_name = Variant::LateFusion.name();
    let lf = ndcg5(&reports.retrieval, lf_name);
    let dr = ndcg5(&reports.retrieval, Variant::DualRetrieval.name());
    let da = ndcg5(&reports.retrieval, Variant::DualAlignment.name());
    let pipe = ndcg5(&reports.retrieval, PIPELINED);
    let full = *dims.last().expect("at least one dim");
    let small = dims[0];
    let mut checks = Vec::new();

    let lf_full = lf.last().map_or(f64::NAN, |x| x.1);
    let gap = margins(&lf, &dr);
    checks.push(check(
        "finding-1",
        "late-fusion nDCG@5 at full dim >= 0.90 and beats dual-retrieval by >= 0.05 at every dim",
        lf_full >= 0.90 && gap.len() == dims.len() && gap.iter().all(|g| g.1 >= 0.05),
        format!("late-fusion {}; margin {}", fmt_series(&lf), fmt_series(&gap)),
    ));

    let pgap = margins(&lf, &pipe);
    checks.push(check(
        "pipelined",
        "pipelined nDCG@5 below late-fusion at every dim",
        pgap.len() == dims.len() && pgap.iter().all(|g| g.1 > 0.0),
        format!("pipelined {}", fmt_series(&pipe)),
    ));

    let mut ok = true;
    let mut detail = String::new();
    for (v, nd) in [(Variant::DualRetrieval, &dr), (Variant::DualAlignment, &da)] {
        let f1 = reports.kws.get(&format!("{}/{KEYWORD_TASK}", v.name()), full, "f1").unwrap_or(f64::NAN);
        let m = margins(&lf, nd);
        ok &= f1 >= 0.70 && m.len() == dims.len() && m.iter().all(|g| g.1 >= 0.05);
        let _ = write!(detail, "{} kws-f1 {f1:.4} trail {}; ", v.name(), fmt_series(&m));
    }
    checks.push(check(
        "finding-2",
        "dual models keep KWS F1 >= 0.70 at full dim while trailing late-fusion retrieval by >= 0.05",
        ok,
        detail.trim_end_matches("; ").to_string(),
    ));

    let mut ok = true;
    let mut detail = String::new();
    for v in Variant::ALL {
        let s = ndcg5(&reports.retrieval, v.name());
        let vals: Vec<f64> = s.iter().map(|x| x.1).collect();
        let good = vals.len() == dims.len() && nearly_nondecreasing(&vals, 0.02);
        ok &= good;
        let _ = write!(detail, "{} {}; ", v.name(), fmt_series(&s));
    }
    checks.push(check(
        "monotonicity",
        "nDCG@5 nondecreasing over dims for every model, at most one inversion <= 0.02",
        ok,
        detail.trim_end_matches("; ").to_string(),
    ));

    let recall = |n: usize, d: usize| {
        reports.intent.get(&format!("{lf_name}/{}", intent_task(n)), d, "recall").unwrap_or(f64::NAN)
    };
    let at_full: Vec<f64> = shots.iter().map(|&n| recall(n, full)).collect();
    let top = *shots.iter().max().unwrap_or(&0);
    let gap_at = |n: usize| recall(n, full) - recall(n, small);
    let has_one = shots.contains(&1);
    checks.push(check(
        "finding-3",
        "few-shot recall nondecreasing in n at full dim, top-n recall >= 0.90, dim gap at top n below the gap at n=1",
        nearly_nondecreasing(&at_full, 0.02) && recall(top, full) >= 0.90 && has_one && gap_at(top) < gap_at(1),
        format!(
            "recall {}; gap n={top} {:.4} vs n=1 {:.4}",
            shots.iter().zip(&at_full).map(|(n, r)| format!("{n}:{r:.4}")).collect::<Vec<_>>().join(" "),
            gap_at(top),
            if has_one { gap_at(1) } else { f64::NAN }
        ),
    ));

    let task = energy_task(EmbeddingSource::Documents);
    let frac = |d: usize| reports.rank.get(&task, d, "dims_for_energy@1").unwrap_or(f64::NAN);
    let mut curves_ok = true;
    for t in reports.rank.tasks() {
        for m in reports.rank.cells[t].values() {
            let terminal = m.get("terminal").copied().unwrap_or(f64::NAN);
            let step = m.get("min_step").copied().unwrap_or(f64::NAN);
            curves_ok &= (terminal - 1.0).abs() <= ENERGY_TOLERANCE && step >= -ENERGY_TOLERANCE;
        }
    }
    checks.push(check(
        "finding-5",
        "document dims_for_energy(1.0) at full dim <= smallest dim; every energy curve nondecreasing ending at 1",
        frac(full) <= frac(small) && curves_ok,
        format!("fraction d={full} {:.4}, d={small} {:.4}; curves ok {curves_ok}", frac(full), frac(small)),
    ));

    checks.push(check(
        "index-bytes",
        "prefix-store disk bytes match the closed-form size at every dim",
        bytes.len() == dims.len() && bytes.iter().all(|(_, got, want)| got == want),
        bytes.iter().map(|(d, got, _)| format!("{d}:{got}")).collect::<Vec<_>>().join(" "),
    ));

    let timing_checks = match (reports.cost.rows.first(), reports.cost.rows.last()) {
        (Some(a), Some(b)) => vec![check(
            "index-latency",
            "median query latency at the smallest dim <= at the largest",
            a.median_s <= b.median_s,
            format!("d={} {:.3e}s, d={} {:.3e}s", a.dim, a.median_s, b.dim, b.median_s),
        )],
        _ => Vec::new(),
    };
    Findings { checks, timing_checks }
}

/// Runs every stage in order and checks the trends. Deterministic outputs
/// go to `reports/`; the latency check goes to `timing/`.
pub fn repro_findings(run: &mut RunDir) -> Result<(Findings, Reports)> {
    let cfg = run.config().clone();
    stages::gen(run)?;
    stages::train(run, &cfg.train.variants)?;
    stages::embed(run, cfg.index.query_variant)?;
    stages::index(run)?;
    let reports = Reports {
        retrieval: stages::eval_retrieval(run)?,
        kws: stages::eval_kws(run)?,
        intent: stages::eval_intent(run)?,
        rank: stages::analyze_rank(run)?,
        cost: stages::bench_cost(run)?,
    };
    let mut step = run.step("repro-findings");
    let bytes: Vec<(usize, usize, usize)> = std::str::from_utf8(&step.read(COST_REPORT)?)
        .unwrap_or_default()
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .map(|v| {
            let n = |k: &str| v[k].as_u64().unwrap_or(0) as usize;
            (n("dim"), n("bytes"), n("expected_bytes"))
        })
        .collect();
    let findings = evaluate(&reports, cfg.model.dims.as_slice(), &cfg.eval.shots, &bytes);
    let mut lines = Vec::new();
    for c in &findings.checks {
        lines.extend(serde_json::to_vec(c)?);
        lines.push(b'\n');
    }
    step.write(FINDINGS, &lines)?;
    step.write(SUMMARY, Findings::summary_table(&findings.checks).as_bytes())?;
    step.write_volatile(TIMING_SUMMARY, Findings::summary_table(&findings.timing_checks).as_bytes())?;
    step.finish()?;
    Ok((findings, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_rule() {
        assert!(nearly_nondecreasing(&[0.1, 0.2, 0.3], 0.02));
        assert!(nearly_nondecreasing(&[0.1, 0.3, 0.29, 0.4], 0.02));
        assert!(!nearly_nondecreasing(&[0.1, 0.3, 0.25, 0.4], 0.02));
        assert!(!nearly_nondecreasing(&[0.3, 0.29, 0.4, 0.39], 0.02));
        assert!(nearly_nondecreasing(&[], 0.02));
    }
}
