//! CSV and aligned-text renderings of evaluation, comparison and retrieval
//! results. CSV carries full precision; text tables use one decimal.

use tcssl_core::metrics::{AggregateReport, Summary};
use tcssl_core::retrieval::RetrievalReport;
use tcssl_core::train::Evaluation;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_phase(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn phase_headers(k: usize) -> Vec<String> {
    (1..=k).map(|p| format!("P{p}")).collect()
}

/// One row per video, then `mean` and `std` rows.
pub fn eval_csv(ev: &Evaluation) -> String {
    let k = ev.report.per_phase_f1.len();
    let mut out = format!("video_id,accuracy,recall,precision,f1,{}\n", phase_headers(k).join(","));
    for (id, m) in &ev.per_video {
        let phases: Vec<String> = m.per_phase_f1.iter().map(|v| opt(*v)).collect();
        out.push_str(&format!(
            "{id},{},{},{},{},{}\n",
            m.accuracy,
            m.macro_recall,
            m.macro_precision,
            m.f1,
            phases.join(",")
        ));
    }
    let r = &ev.report;
    for (label, pick) in [("mean", 0), ("std", 1)] {
        let get = |s: &Summary| opt(if pick == 0 { s.mean } else { s.std });
        let phases: Vec<String> = r.per_phase_f1.iter().map(get).collect();
        out.push_str(&format!(
            "{label},{},{},{},{},{}\n",
            get(&r.accuracy),
            get(&r.recall),
            get(&r.precision),
            get(&r.f1),
            phases.join(",")
        ));
    }
    out
}

/// Left-aligned columns separated by two spaces.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Frame metrics and per-phase F1 as `mean ± std` tables.
pub fn eval_table(report: &AggregateReport) -> String {
    let mut out = format!("videos: {}\n\n", report.videos);
    out.push_str(&align(&[
        vec!["Accuracy".into(), "Recall".into(), "Precision".into(), "F1".into()],
        vec![
            report.accuracy.display(),
            report.recall.display(),
            report.precision.display(),
            report.f1.display(),
        ],
    ]));
    out.push('\n');
    out.push_str(&align(&[
        phase_headers(report.per_phase_f1.len()),
        report.per_phase_f1.iter().map(Summary::display).collect(),
    ]));
    out
}

/// `query_id,video_id,frame_index,distance,query_phase,retrieved_phase`, one
/// row per query and searched video, nearest first.
pub fn retrieval_csv(report: &RetrievalReport) -> String {
    let mut out = String::from("query_id,video_id,frame_index,distance,query_phase,retrieved_phase\n");
    for r in &report.results {
        for h in &r.hits {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.query.query_id,
                h.video_id,
                h.frame_index,
                h.distance,
                opt_phase(r.query.phase),
                opt_phase(h.phase)
            ));
        }
    }
    out
}

pub fn retrieval_summary(report: &RetrievalReport, corpus_videos: usize) -> String {
    let rate = report
        .agreement_rate
        .map(|r| format!("{:.1}%", 100.0 * r))
        .unwrap_or_else(|| "n/a".into());
    format!(
        "queries: {}\ncorpus videos: {corpus_videos}\nphase agreement: {rate} ({} labeled pairs)\n",
        report.results.len(),
        report.agreement_pairs
    )
}
