//! Byte-stable CSV output. Floats use C's `%.6g` rules so files are easy to
//! diff and identical across platforms.

use fedsim_core::engine::RoundLog;
use fedsim_core::metrics::{summary_stats, SummaryStats, METRIC_NAMES};
use fedsim_core::Result;

pub const ROUNDS_HEADER: [&str; 20] = [
    "round", "cum_time_s", "round_time_s", "lr", "epochs", "n_selected", "agg_loss", "mean_dice",
    "dice_et", "dice_tc", "dice_wt", "sens_et", "sens_tc", "sens_wt", "spec_et", "spec_tc",
    "spec_wt", "hd95_et", "hd95_tc", "hd95_wt",
];

pub const SCANS_PREFIX: [&str; 3] = ["round", "collaborator_id", "scan_id"];

pub const SUMMARY_HEADER: [&str; 6] = ["metric", "mean", "std", "q1", "q2", "q3"];

pub const COMPARISON_HEADER: [&str; 4] = ["aggregator", "hyper", "final_mean_dice", "convergence_score"];

/// Formats like C's `printf("%.6g", v)`.
pub fn g6(v: f64) -> String {
    const P: i32 = 6;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (P - 1 - exp) as usize, v)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn push_row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    let row: Vec<String> = cells.into_iter().collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

/// One row per completed round.
pub fn rounds_csv(logs: &[RoundLog]) -> String {
    let mut out = String::new();
    push_row(&mut out, ROUNDS_HEADER.iter().map(|s| s.to_string()));
    for l in logs {
        let mut row = vec![
            l.round.to_string(),
            g6(l.cum_time),
            g6(l.round_time),
            g6(l.hyper.lr),
            l.hyper.epochs.to_string(),
            l.selected.len().to_string(),
            g6(l.agg_loss),
            g6(l.metrics.mean_dice),
        ];
        row.extend(l.metrics.values().iter().map(|v| g6(*v)));
        push_row(&mut out, row);
    }
    out
}

/// Who trained in each round, with local steps, loss and simulated time.
pub fn collaborators_csv(logs: &[RoundLog]) -> String {
    let mut out = String::from("round,collaborator_id,tau,train_loss,round_time_s\n");
    for l in logs {
        for c in &l.collaborators {
            push_row(
                &mut out,
                [
                    l.round.to_string(),
                    c.collaborator_id.clone(),
                    c.tau.to_string(),
                    g6(c.train_loss),
                    g6(c.round_time),
                ],
            );
        }
    }
    out
}

/// Per-scan validation metrics of one round.
pub fn scans_csv(log: &RoundLog) -> String {
    let mut out = String::new();
    push_row(
        &mut out,
        SCANS_PREFIX.iter().chain(METRIC_NAMES.iter()).map(|s| s.to_string()),
    );
    for s in &log.scan_metrics {
        let mut row = vec![log.round.to_string(), s.collaborator_id.clone(), s.scan_id.to_string()];
        row.extend(s.record.values().iter().map(|v| g6(*v)));
        push_row(&mut out, row);
    }
    out
}

/// Mean, population standard deviation and quartiles of each metric column.
pub fn summary_rows(columns: &[Vec<f64>; 12]) -> Result<Vec<(&'static str, SummaryStats)>> {
    METRIC_NAMES
        .iter()
        .zip(columns)
        .map(|(name, col)| Ok((*name, summary_stats(col)?)))
        .collect()
}

pub fn summary_csv(rows: &[(&str, SummaryStats)]) -> String {
    let mut out = String::new();
    push_row(&mut out, SUMMARY_HEADER.iter().map(|s| s.to_string()));
    for (name, s) in rows {
        push_row(
            &mut out,
            [name.to_string(), g6(s.mean), g6(s.std), g6(s.q1), g6(s.q2), g6(s.q3)],
        );
    }
    out
}

/// Final round per-scan metric columns of an in-memory run.
pub fn scan_columns(log: &RoundLog) -> [Vec<f64>; 12] {
    let mut cols: [Vec<f64>; 12] = Default::default();
    for s in &log.scan_metrics {
        for (c, v) in cols.iter_mut().zip(s.record.values()) {
            c.push(v);
        }
    }
    cols
}

pub struct ComparisonRow {
    pub aggregator: String,
    pub hyper: String,
    pub final_mean_dice: f64,
    pub convergence_score: f64,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    push_row(&mut out, COMPARISON_HEADER.iter().map(|s| s.to_string()));
    for r in rows {
        push_row(
            &mut out,
            [r.aggregator.clone(), r.hyper.clone(), g6(r.final_mean_dice), g6(r.convergence_score)],
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_printf_examples() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (9.9999996, "10"),
            (999999.6, "1e+06"),
            (45.254833995939, "45.2548"),
            (5e-5, "5e-05"),
            (0.0002, "0.0002"),
            (1e100, "1e+100"),
            (f64::NAN, "nan"),
            (f64::NEG_INFINITY, "-inf"),
        ];
        for (v, want) in cases {
            assert_eq!(g6(v), want, "{v}");
        }
    }

    proptest! {
        #[test]
        fn round_trips_to_six_digits(v in -1e12f64..1e12) {
            let parsed: f64 = g6(v).parse().unwrap();
            prop_assert!((parsed - v).abs() <= 5e-6 * v.abs() + 1e-300);
        }
    }
}
