use std::io::Write;

use super::interactions::InteractionDataset;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramRow {
    /// 1-based popularity rank.
    pub rank: usize,
    pub frequency: u32,
}

/// Rank-frequency table of arbitrary counts, most frequent first.
pub fn frequency_histogram(counts: &[u32]) -> Vec<HistogramRow> {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, frequency)| HistogramRow { rank: i + 1, frequency })
        .collect()
}

/// Rank-frequency table of the training split's items.
pub fn split_counts(dataset: &InteractionDataset) -> Vec<HistogramRow> {
    frequency_histogram(&dataset.item_frequency)
}

/// Writes `rank,frequency,log10_rank,log10_frequency`. The log of a zero
/// frequency is left empty.
pub fn write_histogram_csv<W: Write>(rows: &[HistogramRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "frequency", "log10_rank", "log10_frequency"])?;
    for row in rows {
        let log_f = if row.frequency == 0 {
            String::new()
        } else {
            format!("{:.6}", f64::from(row.frequency).log10())
        };
        w.write_record([
            row.rank.to_string(),
            row.frequency.to_string(),
            format!("{:.6}", (row.rank as f64).log10()),
            log_f,
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
