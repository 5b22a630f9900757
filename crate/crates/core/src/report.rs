//! Report emission: aligned text tables and CSV twins for every artifact,
//! hash-based provenance headers, and per-item answer-distribution data.
//! Nothing here embeds timestamps, so identical inputs yield identical
//! bytes.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::econ::{CoefRow, HcType, OlsFit};
use crate::estimator::{AggregateRow, BiasRecord};
use crate::ingest::Dataset;
use crate::questionnaire::QuestionItem;
use crate::stats::AnswerStats;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `# <name>_sha256: <digest>` comment lines identifying every input an
/// emitted table depends on.
pub fn provenance_header(inputs: &[(&str, &[u8])]) -> String {
    let mut out = String::new();
    for (name, bytes) in inputs {
        out.push_str(&format!("# {name}_sha256: {}\n", sha256_hex(bytes)));
    }
    out
}

/// Three-decimal fixed formatting used by all numeric table cells.
pub fn fmt3(v: f64) -> String {
    if v.is_nan() {
        "-".to_string()
    } else {
        format!("{v:.3}")
    }
}

/// Monospace table: first column left-aligned, the rest right-aligned,
/// a rule under the header.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let ncols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String]| {
        let mut parts = Vec::with_capacity(ncols);
        for (i, cell) in cells.iter().enumerate() {
            if i == 0 {
                parts.push(format!("{cell:<width$}", width = widths[i]));
            } else {
                parts.push(format!("{cell:>width$}", width = widths[i]));
            }
        }
        format!("{}\n", parts.join("  ").trim_end())
    };
    out.push_str(&line(
        &headers.iter().map(|h| h.to_string()).collect::<Vec<_>>(),
    ));
    let rule_width = widths.iter().sum::<usize>() + 2 * (ncols - 1);
    out.push_str(&"-".repeat(rule_width));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

fn csv_string(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers).expect("in-memory csv");
    for row in rows {
        w.write_record(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// One stability row: an item's repeated-sample summary.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub item_id: String,
    pub stats: AnswerStats,
    pub zero_variance: bool,
}

fn stability_cells(rows: &[StabilityRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.item_id.clone(),
                r.stats.n.to_string(),
                fmt3(r.stats.mean),
                fmt3(r.stats.sd),
                fmt3(r.stats.se),
                fmt3(r.stats.ci_low),
                fmt3(r.stats.ci_high),
                if r.zero_variance { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect()
}

const STABILITY_HEADERS: [&str; 8] = [
    "item", "n", "mean", "sd", "se", "ci_low", "ci_high", "zero_variance",
];

pub fn stability_text(rows: &[StabilityRow]) -> String {
    render_table(&STABILITY_HEADERS, &stability_cells(rows))
}

pub fn stability_csv(rows: &[StabilityRow]) -> String {
    csv_string(&STABILITY_HEADERS, &stability_cells(rows))
}

const BIAS_HEADERS: [&str; 11] = [
    "item",
    "topic",
    "unit_value",
    "lr_self",
    "peer_placement",
    "spb",
    "absolute_bias",
    "matched_groups",
    "fallback",
    "zero_variance",
    "identity_gap",
];

fn bias_cells(records: &[BiasRecord], center: f64) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            // the per-row identity: absolute_bias - spb should equal
            // center - lr_self
            let gap = (r.absolute_bias - r.spb) - (center - r.lr_self);
            vec![
                r.item_id.clone(),
                r.topic.as_str().to_string(),
                r.unit_value.to_string(),
                fmt3(r.lr_self),
                fmt3(r.peer_placement),
                fmt3(r.spb),
                fmt3(r.absolute_bias),
                r.matched_groups
                    .iter()
                    .map(|g| g.to_string())
                    .collect::<Vec<_>>()
                    .join("|"),
                if r.fallback { "yes" } else { "no" }.to_string(),
                if r.zero_variance { "yes" } else { "no" }.to_string(),
                format!("{gap:.1e}"),
            ]
        })
        .collect()
}

pub fn bias_text(records: &[BiasRecord], center: f64) -> String {
    render_table(&BIAS_HEADERS, &bias_cells(records, center))
}

pub fn bias_csv(records: &[BiasRecord], center: f64) -> String {
    csv_string(&BIAS_HEADERS, &bias_cells(records, center))
}

const AGGREGATE_HEADERS: [&str; 8] = [
    "group",
    "n",
    "spb_mean",
    "spb_se",
    "spb_ci95",
    "abs_bias_mean",
    "abs_bias_se",
    "abs_bias_ci95",
];

fn ci_cell(stats: &Option<AnswerStats>) -> String {
    match stats {
        Some(s) => format!("[{}, {}]", fmt3(s.ci_low), fmt3(s.ci_high)),
        None => "-".to_string(),
    }
}

fn se_cell(stats: &Option<AnswerStats>) -> String {
    match stats {
        Some(s) => fmt3(s.se),
        None => "-".to_string(),
    }
}

fn aggregate_cells(rows: &[AggregateRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.n.to_string(),
                fmt3(r.mean_spb),
                se_cell(&r.spb_stats),
                ci_cell(&r.spb_stats),
                fmt3(r.mean_absolute_bias),
                se_cell(&r.absolute_bias_stats),
                ci_cell(&r.absolute_bias_stats),
            ]
        })
        .collect()
}

pub fn aggregate_text(rows: &[AggregateRow]) -> String {
    render_table(&AGGREGATE_HEADERS, &aggregate_cells(rows))
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    csv_string(&AGGREGATE_HEADERS, &aggregate_cells(rows))
}

pub const SIGNIFICANCE_FOOTER: &str = "*** p<0.01, ** p<0.05, * p<0.1";

const REGRESSION_HEADERS: [&str; 6] = ["term", "coef", "se", "t", "p", ""];

fn regression_cells(rows: &[CoefRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.name.clone(),
                fmt3(r.coef),
                fmt3(r.se),
                fmt3(r.t),
                fmt3(r.p),
                r.stars.to_string(),
            ]
        })
        .collect()
}

/// Coefficient table with fit statistics, the omitted-benchmark note and
/// the significance footer.
pub fn regression_text(
    fit: &OlsFit,
    rows: &[CoefRow],
    hc: HcType,
    benchmark_notes: &[String],
) -> String {
    let mut out = format!("Dependent variable: {}\n\n", fit.response);
    out.push_str(&render_table(&REGRESSION_HEADERS, &regression_cells(rows)));
    out.push('\n');
    out.push_str(&format!(
        "N = {}   R2 = {}   residual df = {}   robust SE: {}\n",
        fit.n,
        fmt3(fit.r2),
        fit.df_resid,
        hc.as_str()
    ));
    if !benchmark_notes.is_empty() {
        out.push_str(&format!(
            "Omitted benchmark categories: {}\n",
            benchmark_notes.join(", ")
        ));
    }
    out.push_str(SIGNIFICANCE_FOOTER);
    out.push('\n');
    out
}

pub fn regression_csv(rows: &[CoefRow]) -> String {
    csv_string(
        &["term", "coef", "se", "t", "p", "stars"],
        &regression_cells(rows),
    )
}

/// Per-code answer counts for one item, missing reported separately.
/// Counts cover every non-sentinel code of the scale, including zeros.
pub fn item_distribution(dataset: &Dataset, item: &QuestionItem) -> (BTreeMap<i32, usize>, usize) {
    let mut counts: BTreeMap<i32, usize> = (item.scale.min_code..=item.scale.max_code)
        .filter(|c| !item.scale.missing_codes.contains(c))
        .map(|c| (c, 0))
        .collect();
    let mut answered = 0usize;
    for rec in &dataset.records {
        if let Some(v) = rec.answers.get(&item.id) {
            *counts.get_mut(v).expect("ingest keeps codes on scale") += 1;
            answered += 1;
        }
    }
    (counts, dataset.records.len() - answered)
}

pub fn item_distribution_csv(dataset: &Dataset, item: &QuestionItem) -> String {
    let (counts, missing) = item_distribution(dataset, item);
    let mut rows: Vec<Vec<String>> = counts
        .iter()
        .map(|(code, n)| vec![code.to_string(), n.to_string()])
        .collect();
    rows.push(vec!["missing".to_string(), missing.to_string()]);
    csv_string(&["code", "count"], &rows)
}

/// Left-right placement histogram over raw groups 0..10, the modal bin
/// marked (lowest group on ties).
pub fn lr_histogram_csv(dataset: &Dataset) -> String {
    let mut counts = [0usize; 11];
    let mut missing = 0usize;
    for rec in &dataset.records {
        match rec.lr_raw {
            Some(g) => counts[g as usize] += 1,
            None => missing += 1,
        }
    }
    let mode = (0..11).max_by_key(|&g| (counts[g], std::cmp::Reverse(g))).unwrap_or(0);
    let mut rows: Vec<Vec<String>> = (0..11)
        .map(|g| {
            vec![
                g.to_string(),
                (g + 1).to_string(),
                counts[g].to_string(),
                if g == mode && counts[g] > 0 { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "missing".to_string(),
        "-".to_string(),
        missing.to_string(),
        "no".to_string(),
    ]);
    csv_string(&["lr_raw", "lr_rescaled", "count", "mode"], &rows)
}

/// Writes one artifact under the output directory, creating it as needed.
pub fn write_artifact(out_dir: &Path, name: &str, contents: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut f = std::fs::File::create(out_dir.join(name))?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Gender, Provenance, RespondentRecord};
    use crate::questionnaire::builtin_ess16;
    use crate::stats::{ci_from_summary, summarize};

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn provenance_header_is_stable_and_input_sensitive() {
        let a = provenance_header(&[("config", b"x"), ("store", b"y")]);
        let b = provenance_header(&[("config", b"x"), ("store", b"y")]);
        assert_eq!(a, b);
        assert_ne!(a, provenance_header(&[("config", b"x"), ("store", b"z")]));
        assert!(a.starts_with("# config_sha256: "));
        assert_eq!(a.lines().count(), 2);
    }

    #[test]
    fn table_columns_align() {
        let text = render_table(
            &["name", "n", "value"],
            &[
                vec!["a".into(), "3".into(), "1.250".into()],
                vec!["longer".into(), "128".into(), "0.100".into()],
            ],
        );
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        // right-aligned numeric columns end at the same offset
        assert_eq!(lines[2].len(), lines[3].len());
        assert!(lines[3].starts_with("longer"));
    }

    #[test]
    fn stability_table_renders_degenerate_row_as_table1_style() {
        let stats = summarize(&[1.0; 30], 0.95).unwrap();
        let row = StabilityRow {
            item_id: "HomoAdoption".to_string(),
            stats,
            zero_variance: true,
        };
        let text = stability_text(std::slice::from_ref(&row));
        assert!(text.contains("HomoAdoption"));
        assert!(text.contains("30"));
        assert!(text.contains("1.000"));
        assert!(text.contains("0.000"));
        assert!(text.contains("yes"));
        let csv = stability_csv(&[row]);
        assert!(csv.starts_with("item,n,mean,sd,se,ci_low,ci_high,zero_variance"));
        assert!(csv.contains("HomoAdoption,30,1.000,0.000,0.000,1.000,1.000,yes"));
    }

    #[test]
    fn aggregate_table_formats_t_interval() {
        // mean 4.178, se 0.109, n 128 -> t(127) interval near [3.962, 4.394]
        let (lo, hi) = ci_from_summary(4.178, 0.109, 128, 0.95).unwrap();
        let row = AggregateRow {
            label: "Overall".to_string(),
            n: 128,
            mean_spb: 0.0,
            mean_absolute_bias: 4.178,
            spb_stats: None,
            absolute_bias_stats: Some(AnswerStats {
                n: 128,
                mean: 4.178,
                sd: 0.109 * (128f64).sqrt(),
                se: 0.109,
                ci_low: lo,
                ci_high: hi,
                ci_level: 0.95,
                degenerate: false,
            }),
        };
        let text = aggregate_text(&[row]);
        assert!(text.contains("4.178"));
        assert!(text.contains("0.109"));
        assert!(text.contains('['), "{text}");
        // rendered bounds sit within a thousandth of the t-interval
        assert!((lo - 3.9623).abs() < 1e-3 && (hi - 4.3937).abs() < 1e-3);
    }

    #[test]
    fn regression_report_contains_footer_and_benchmark_note() {
        use crate::econ::{build_design, infer, ols_fit, robust_se, ModelSpec, ObsRow, TermSpec};
        let rows: Vec<ObsRow> = [1.0, 2.0, 3.0, 5.0, 7.0]
            .iter()
            .enumerate()
            .map(|(i, &y)| ObsRow {
                y,
                cats: [(
                    "g".to_string(),
                    if i < 3 { "a" } else { "b" }.to_string(),
                )]
                .into_iter()
                .collect(),
            })
            .collect();
        let spec = ModelSpec {
            response: "spb".to_string(),
            terms: vec![TermSpec {
                name: "g".to_string(),
                baseline: "a".to_string(),
            }],
        };
        let design = build_design(&rows, &spec).unwrap();
        let fit = ols_fit(&design).unwrap();
        let se = robust_se(&fit, &design, HcType::Hc1);
        let coef_rows = infer(&fit, &se);
        let text = regression_text(&fit, &coef_rows, HcType::Hc1, &["g = a".to_string()]);
        assert!(text.contains(SIGNIFICANCE_FOOTER));
        assert!(text.contains("Omitted benchmark categories: g = a"));
        assert!(text.contains("robust SE: HC1"));
        assert!(text.contains("Dependent variable: spb"));
    }

    fn toy_dataset() -> Dataset {
        let mut records = Vec::new();
        for (i, (answer, lr)) in [(Some(2), Some(3)), (Some(2), Some(3)), (Some(4), None), (None, Some(3))]
            .iter()
            .enumerate()
        {
            let mut answers = std::collections::BTreeMap::new();
            if let Some(a) = answer {
                answers.insert("Merit".to_string(), *a);
            }
            records.push(RespondentRecord {
                respondent_id: i.to_string(),
                country: "IT".to_string(),
                wave: 8,
                gender: Gender::Male,
                educ_isced: Some(3),
                lr_raw: *lr,
                answers,
            });
        }
        Dataset {
            records,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn distribution_counts_conserve_and_match_brute_force() {
        let q = builtin_ess16();
        let ds = toy_dataset();
        let item = q.item("Merit").unwrap();
        let (counts, missing) = item_distribution(&ds, item);
        assert_eq!(counts[&2], 2);
        assert_eq!(counts[&4], 1);
        assert_eq!(counts[&1], 0);
        assert_eq!(missing, 1);
        let total: usize = counts.values().sum();
        assert_eq!(total + missing, ds.records.len());
        let csv = item_distribution_csv(&ds, item);
        assert!(csv.contains("missing,1"));
    }

    #[test]
    fn lr_histogram_marks_single_mode() {
        let ds = toy_dataset();
        let csv = lr_histogram_csv(&ds);
        assert!(csv.contains("3,4,3,yes"));
        assert!(csv.contains("missing,-,1,no"));
        // only one mode marked
        assert_eq!(csv.matches(",yes").count(), 1);
    }

    #[test]
    fn artifacts_write_identically() {
        let dir = tempfile::tempdir().unwrap();
        write_artifact(dir.path(), "a.txt", "hello\n").unwrap();
        let text = std::fs::read_to_string(dir.path().join("a.txt")).unwrap();
        assert_eq!(text, "hello\n");
    }
}
