use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::Shots;

pub const CSV_HEADER: [&str; 11] = [
    "dataset", "variant", "shots", "seed", "alpha", "beta", "val_acc", "test_acc", "train_s",
    "infer_ms", "params",
];

/// One (dataset, variant, shots, seed) evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dataset: String,
    pub variant: String,
    pub shots: Shots,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub train_s: f64,
    pub infer_ms: f64,
    pub params: usize,
}

/// Seeds aggregated for one (dataset, variant, shots).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub variant: String,
    pub shots: Shots,
    pub mean_acc: f64,
    /// Population standard deviation over seeds.
    pub std_acc: f64,
    pub train_s: f64,
    pub infer_ms: f64,
    pub params: usize,
    pub seeds: usize,
}

/// Standard deviation with an `n` divisor.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub runs: Vec<RunRecord>,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Groups consecutive runs that share (dataset, variant, shots).
    pub fn from_runs(runs: Vec<RunRecord>) -> Self {
        let mut rows = Vec::new();
        let mut start = 0;
        while start < runs.len() {
            let key = |r: &RunRecord| (r.dataset.clone(), r.variant.clone(), r.shots);
            let k = key(&runs[start]);
            let end = start + runs[start..].iter().take_while(|r| key(r) == k).count();
            let group = &runs[start..end];
            let accs: Vec<f64> = group.iter().map(|r| r.test_acc).collect();
            let train: Vec<f64> = group.iter().map(|r| r.train_s).collect();
            let infer: Vec<f64> = group.iter().map(|r| r.infer_ms).collect();
            rows.push(ResultRow {
                dataset: k.0,
                variant: k.1,
                shots: k.2,
                mean_acc: mean(&accs),
                std_acc: population_std(&accs),
                train_s: mean(&train),
                infer_ms: mean(&infer),
                params: group[0].params,
                seeds: group.len(),
            });
            start = end;
        }
        Self { runs, rows }
    }

    pub fn row(&self, dataset: &str, variant: &str, shots: Shots) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.variant == variant && r.shots == shots)
    }

    /// Per-seed CSV. With `include_timing = false` the timing columns are
    /// written as empty fields, which makes the output a pure function of
    /// the experiment.
    pub fn write_csv<W: Write>(&self, w: W, include_timing: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::InvalidParameter(format!("CSV write failed: {e}"));
        out.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.runs {
            let (train, infer) = if include_timing {
                (format!("{:.6}", r.train_s), format!("{:.6}", r.infer_ms))
            } else {
                (String::new(), String::new())
            };
            out.write_record([
                r.dataset.clone(),
                r.variant.clone(),
                r.shots.to_string(),
                r.seed.to_string(),
                r.alpha.to_string(),
                r.beta.to_string(),
                r.val_acc.to_string(),
                r.test_acc.to_string(),
                train,
                infer,
                r.params.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()
            .map_err(|e| Error::io("<csv output>", e))
    }

    pub fn to_csv_string(&self, include_timing: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, include_timing)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f), true)
    }

    /// Aligned markdown summary (mean ± population std over seeds).
    pub fn to_markdown(&self) -> String {
        let header = [
            "dataset", "variant", "shots", "acc (mean ± std)", "seeds", "train s", "infer ms/query",
            "params",
        ];
        let cells: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.dataset.clone(),
                    r.variant.clone(),
                    r.shots.to_string(),
                    format!("{:.1} ± {:.1}", 100.0 * r.mean_acc, 100.0 * r.std_acc),
                    r.seeds.to_string(),
                    format!("{:.3}", r.train_s),
                    format!("{:.4}", r.infer_ms),
                    r.params.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |row: &[String]| {
            let mut s = String::from("|");
            for (c, w) in row.iter().zip(&widths) {
                let pad = w - c.chars().count();
                let _ = write!(s, " {c}{} |", " ".repeat(pad));
            }
            s.push('\n');
            s
        };
        let mut md = line(&header.map(String::from));
        md.push('|');
        for w in &widths {
            md.push_str(&"-".repeat(w + 2));
            md.push('|');
        }
        md.push('\n');
        for row in &cells {
            md.push_str(&line(row));
        }
        md.push_str("\nstd is the population standard deviation over seeds.\n");
        md
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(variant: &str, seed: u64, acc: f64) -> RunRecord {
        RunRecord {
            dataset: "d".into(),
            variant: variant.into(),
            shots: Shots::K(4),
            seed,
            alpha: 0.5,
            beta: 5.5,
            val_acc: acc,
            test_acc: acc,
            train_s: 0.25,
            infer_ms: 0.01,
            params: 0,
        }
    }

    #[test]
    fn population_std_uses_n() {
        assert!((population_std(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(population_std(&[0.7; 5]), 0.0);
    }

    #[test]
    fn grouping_and_csv() {
        let t = ResultTable::from_runs(vec![
            run("a", 0, 0.5),
            run("a", 1, 0.7),
            run("b", 0, 0.9),
        ]);
        assert_eq!(t.rows.len(), 2);
        assert!((t.rows[0].mean_acc - 0.6).abs() < 1e-12);
        assert_eq!(t.rows[0].seeds, 2);
        let csv = t.to_csv_string(false);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "d,a,4,0,0.5,5.5,0.5,0.5,,,0");
        assert!(t.to_markdown().contains("60.0 ± 10.0"));
    }
}
