//! Plain-text tables over stored runs.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::metrics::{delta_points, recovery_report, Score};
use crate::refine::{FinalStatus, RefinementTrace};
use crate::sandbox::first_failure;
use crate::store::RunManifest;

pub struct RunView {
    pub manifest: RunManifest,
    pub traces: Vec<RefinementTrace>,
    pub aborted: BTreeMap<String, String>,
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let _ = writeln!(out, "{}", line(header.to_vec()));
    let rule: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    let _ = writeln!(out, "{}", "-".repeat(rule));
    for row in rows {
        let _ = writeln!(out, "{}", line(row.iter().map(String::as_str).collect()));
    }
}

fn one_line(text: &str, max_chars: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    match flat.char_indices().nth(max_chars) {
        Some((i, _)) => format!("{}...", &flat[..i]),
        None => flat,
    }
}

/// Method/variant Pass@1 table, per-run feedback impact and recovery
/// breakdown, and a listing of unsolved tasks.
pub fn render_report(runs: &[RunView]) -> String {
    let mut out = String::new();
    let summaries: Vec<_> = runs.iter().map(|r| recovery_report(&r.traces)).collect();

    let _ = writeln!(out, "Pass@1 by run");
    let baseline: Option<Score> = summaries.first().map(|s| s.with_feedback);
    let rows: Vec<Vec<String>> = runs
        .iter()
        .zip(&summaries)
        .map(|(run, s)| {
            let delta = baseline
                .map(|b| format!("{:+.2}", delta_points(&s.with_feedback, &b)))
                .unwrap_or_default();
            vec![
                run.manifest.label.clone(),
                run.manifest.variant.to_string(),
                run.manifest.max_attempts.to_string(),
                s.strict_first_attempt.to_string(),
                s.with_feedback.to_string(),
                delta,
            ]
        })
        .collect();
    let first_label = runs.first().map(|r| r.manifest.label.as_str()).unwrap_or("");
    let delta_header = format!("Δ vs {first_label} (pts)");
    table(
        &mut out,
        &["Method", "Variant", "Attempts", "Pass@1 (attempt 1)", "Pass@1", &delta_header],
        &rows,
    );

    for (run, s) in runs.iter().zip(&summaries) {
        let label = &run.manifest.label;
        let _ = writeln!(out);
        let _ = writeln!(out, "Impact of feedback-guided inference: {label} ({})", run.manifest.variant);
        let mut rows = vec![vec![label.clone(), s.strict_first_attempt.to_string()]];
        if run.manifest.max_attempts > 1 {
            rows.push(vec![format!("{label} + Feedback mechanism"), s.with_feedback.to_string()]);
        }
        table(&mut out, &["Method", "Pass@1"], &rows);
        let _ = writeln!(
            out,
            "gain: {:+.2} pts, recovered: {}",
            s.feedback_gain_points, s.recovered
        );
        let by_attempt: Vec<String> = s
            .solved_by_attempt
            .iter()
            .map(|(k, n)| format!("attempt {k}: {n}"))
            .collect();
        let _ = writeln!(out, "solved by attempt: {}", or_none(by_attempt.join(", ")));
        let histogram: Vec<String> = s
            .failure_histogram
            .iter()
            .map(|(status, n)| format!("{status}: {n}"))
            .collect();
        let _ = writeln!(out, "unsolved by failure type: {}", or_none(histogram.join(", ")));
        if !run.aborted.is_empty() {
            let _ = writeln!(out, "aborted tasks: {} (corpus incomplete)", run.aborted.len());
        }

        let failures: Vec<Vec<String>> = run
            .traces
            .iter()
            .filter(|t| t.final_status == FinalStatus::Exhausted)
            .map(|t| {
                let failed = t.best().and_then(|a| first_failure(&a.report).map(|f| (a, f)));
                match failed {
                    Some((a, f)) => vec![
                        t.task_id.clone(),
                        f.status.to_string(),
                        format!("{}/{}", f.index, a.report.outcomes.len()),
                        one_line(&f.error, 60),
                    ],
                    None => vec![t.task_id.clone(), String::new(), String::new(), String::new()],
                }
            })
            .chain(
                run.aborted
                    .iter()
                    .map(|(id, reason)| vec![id.clone(), "ABORTED".into(), String::new(), one_line(reason, 60)]),
            )
            .collect();
        if !failures.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Unsolved tasks: {label}");
            table(&mut out, &["Task", "Status", "Test", "Error"], &failures);
        }
    }
    out
}

fn or_none(s: String) -> String {
    if s.is_empty() {
        "none".into()
    } else {
        s
    }
}
