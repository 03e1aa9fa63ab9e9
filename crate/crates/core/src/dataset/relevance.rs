use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevancePair {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

/// Item-to-item regression data with a train/eval split.
///
/// Item ids are ordered by descending frequency in the training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceDataset {
    pub num_items: usize,
    pub pairs: Vec<RelevancePair>,
    /// `true` for pairs held out for evaluation.
    pub is_eval: Vec<bool>,
    /// Occurrences of each item (either side) in the training pairs.
    pub item_frequency: Vec<u32>,
}

impl RelevanceDataset {
    pub fn new(num_items: usize, pairs: Vec<RelevancePair>, is_eval: Vec<bool>) -> Result<Self> {
        if pairs.len() != is_eval.len() {
            return Err(Error::Config(format!(
                "{} pairs but {} split flags",
                pairs.len(),
                is_eval.len()
            )));
        }
        let mut item_frequency = vec![0u32; num_items];
        for (p, &eval) in pairs.iter().zip(&is_eval) {
            for id in [p.a, p.b] {
                if id >= num_items {
                    return Err(Error::IdOutOfRange { id, size: num_items });
                }
            }
            if !eval {
                item_frequency[p.a] += 1;
                item_frequency[p.b] += 1;
            }
        }
        Ok(RelevanceDataset {
            num_items,
            pairs,
            is_eval,
            item_frequency,
        })
    }

    pub fn train_pairs(&self) -> impl Iterator<Item = &RelevancePair> {
        self.pairs.iter().zip(&self.is_eval).filter(|(_, &e)| !e).map(|(p, _)| p)
    }

    pub fn eval_pairs(&self) -> impl Iterator<Item = &RelevancePair> {
        self.pairs.iter().zip(&self.is_eval).filter(|(_, &e)| e).map(|(p, _)| p)
    }

    /// Writes `item_a,item_b,score,split` with split `train` or `eval`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["item_a", "item_b", "score", "split"])?;
        for (p, &eval) in self.pairs.iter().zip(&self.is_eval) {
            w.write_record([
                p.a.to_string(),
                p.b.to_string(),
                format!("{:?}", p.score),
                if eval { "eval" } else { "train" }.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a file written by [`write_csv`](Self::write_csv). The vocabulary
    /// size is one past the largest id seen.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut pairs = Vec::new();
        let mut is_eval = Vec::new();
        for (i, record) in r.records().enumerate() {
            let record = record?;
            // Header is line 1.
            let line = i + 2;
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            if record.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", record.len())));
            }
            let id = |k: usize| record[k].parse::<usize>().map_err(|e| bad(format!("item id {:?}: {e}", &record[k])));
            let a = id(0)?;
            let b = id(1)?;
            let score = record[2]
                .parse::<f64>()
                .map_err(|e| bad(format!("score {:?}: {e}", &record[2])))?;
            let eval = match &record[3] {
                "train" => false,
                "eval" => true,
                other => return Err(bad(format!("split must be train or eval, got {other:?}"))),
            };
            pairs.push(RelevancePair { a, b, score });
            is_eval.push(eval);
        }
        let num_items = pairs.iter().map(|p| p.a.max(p.b) + 1).max().unwrap_or(0);
        Self::new(num_items, pairs, is_eval)
    }
}
