//! Side-by-side comparison of run summaries over the same schedule.

use crate::experiment::Summary;
use artta_core::error::{Error, Result};

pub struct Comparison {
    pub text: String,
    pub csv: String,
}

/// Build a per-domain comparison table; rows keep the input order.
pub fn compare(summaries: &[Summary]) -> Result<Comparison> {
    if summaries.is_empty() {
        return Err(Error::Config("compare needs at least one summary".into()));
    }
    let schedule = &summaries[0].schedule;
    for s in summaries {
        if &s.schedule != schedule {
            return Err(Error::Config(format!(
                "schedules disagree: '{}' vs '{}'",
                schedule, s.schedule
            )));
        }
    }
    let domains: Vec<String> =
        summaries[0].per_domain.iter().map(|d| d.domain.clone()).collect();

    let mut csv = String::from("method");
    for d in &domains {
        csv.push(',');
        csv.push_str(d);
    }
    csv.push_str(",mean,amca\n");

    let mut widths: Vec<usize> = Vec::new();
    let mut header: Vec<String> = vec!["method".to_string()];
    header.extend(domains.iter().cloned());
    header.push("mean".into());
    header.push("amca".into());

    let mut rows: Vec<Vec<String>> = Vec::new();
    for s in summaries {
        let mut row = vec![s.method.clone()];
        for d in &domains {
            let stat = s
                .per_domain
                .iter()
                .find(|x| &x.domain == d)
                .ok_or_else(|| Error::Config(format!("summary misses domain '{}'", d)))?;
            row.push(format!("{:.4}", stat.accuracy_mean));
        }
        row.push(format!("{:.4}", s.mean_accuracy.mean));
        row.push(format!("{:.4}", s.amca.mean));
        csv.push_str(&row.join(","));
        csv.push('\n');
        rows.push(row);
    }

    for (i, h) in header.iter().enumerate() {
        let mut w = h.len();
        for row in &rows {
            w = w.max(row[i].len());
        }
        widths.push(w);
    }
    let mut text = String::new();
    let fmt_row = |cells: &[String], widths: &[usize]| -> String {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{:width$}", c, width = w))
            .collect::<Vec<_>>()
            .join("  ")
    };
    text.push_str(&fmt_row(&header, &widths));
    text.push('\n');
    text.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    text.push('\n');
    for row in &rows {
        text.push_str(&fmt_row(row, &widths));
        text.push('\n');
    }
    Ok(Comparison { text, csv })
}
