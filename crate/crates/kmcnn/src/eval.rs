//! Evaluation: confusion counting, percentage metrics, and ablation
//! comparison tables.
//!
//! Metrics treat the triage-relevant class as positive and are reported
//! as percentages with three decimals, the convention used throughout the
//! report tables. Degenerate 0/0 ratios are defined as 0 so synthetic
//! fixtures cannot divide by zero.
//!
//! [`AblationMatrix`] renders a variant-by-dataset grid of one metric as
//! CSV or aligned text; [`AblationReport`] bundles the F1, precision, and
//! recall grids. Published reference scores for the four model variants
//! ship in `data/reference_*.csv` as shape fixtures for the renderer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::text::Label;
use crate::{Error, Result};

/// Outcome counts of binary predictions against gold labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

fn describe_extra(only: &[&str], side: &str) -> String {
    let shown: Vec<&str> = only.iter().take(5).copied().collect();
    let suffix = if only.len() > 5 {
        format!(" and {} more", only.len() - 5)
    } else {
        String::new()
    };
    format!("pmids only in {side}: {}{suffix}", shown.join(", "))
}

/// Counts prediction outcomes. Both lists must cover exactly the same
/// pmids, each exactly once; mismatches are reported with the offending
/// pmids.
pub fn confusion(preds: &[(String, Label)], gold: &[(String, Label)]) -> Result<ConfusionCounts> {
    let mut gold_by_pmid: HashMap<&str, Label> = HashMap::with_capacity(gold.len());
    for (pmid, label) in gold {
        if gold_by_pmid.insert(pmid, *label).is_some() {
            return Err(Error::Validation(format!(
                "pmid `{pmid}` appears twice in the gold labels"
            )));
        }
    }
    let mut counts = ConfusionCounts::default();
    let mut seen: HashSet<&str> = HashSet::with_capacity(preds.len());
    let mut pred_only: Vec<&str> = Vec::new();
    for (pmid, pred) in preds {
        if !seen.insert(pmid) {
            return Err(Error::Validation(format!(
                "pmid `{pmid}` appears twice in the predictions"
            )));
        }
        match gold_by_pmid.get(pmid.as_str()) {
            None => pred_only.push(pmid),
            Some(gold_label) => match (pred, gold_label) {
                (Label::Positive, Label::Positive) => counts.true_pos += 1,
                (Label::Positive, Label::Negative) => counts.false_pos += 1,
                (Label::Negative, Label::Positive) => counts.false_neg += 1,
                (Label::Negative, Label::Negative) => counts.true_neg += 1,
            },
        }
    }
    let gold_only: Vec<&str> = gold
        .iter()
        .map(|(p, _)| p.as_str())
        .filter(|p| !seen.contains(p))
        .collect();
    if !pred_only.is_empty() || !gold_only.is_empty() {
        let mut parts = Vec::new();
        if !pred_only.is_empty() {
            parts.push(describe_extra(&pred_only, "predictions"));
        }
        if !gold_only.is_empty() {
            parts.push(describe_extra(&gold_only, "gold"));
        }
        return Err(Error::Validation(parts.join("; ")));
    }
    Ok(counts)
}

/// Percentage metrics for the positive class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall, and F1 as percentages; 0/0 ratios become 0.
pub fn precision_recall_f1(c: &ConfusionCounts) -> Metrics {
    let tp = c.true_pos as f64;
    let precision = 100.0 * ratio_or_zero(tp, tp + c.false_pos as f64);
    let recall = 100.0 * ratio_or_zero(tp, tp + c.false_neg as f64);
    let f1 = ratio_or_zero(2.0 * precision * recall, precision + recall);
    Metrics {
        precision,
        recall,
        f1,
    }
}

/// Formats a percentage value with three decimals, the table convention.
pub fn format_percent(value: f64) -> String {
    format!("{value:.3}")
}

/// One metric laid out as a variant-by-dataset grid. Cells may be empty;
/// they render as an em dash.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationMatrix {
    variants: Vec<String>,
    datasets: Vec<String>,
    cells: BTreeMap<(usize, usize), f64>,
}

impl AblationMatrix {
    pub fn new<S: AsRef<str>>(variants: &[S], datasets: &[S]) -> AblationMatrix {
        AblationMatrix {
            variants: variants.iter().map(|s| s.as_ref().to_string()).collect(),
            datasets: datasets.iter().map(|s| s.as_ref().to_string()).collect(),
            cells: BTreeMap::new(),
        }
    }

    pub fn variants(&self) -> impl Iterator<Item = &str> {
        self.variants.iter().map(String::as_str)
    }

    pub fn datasets(&self) -> impl Iterator<Item = &str> {
        self.datasets.iter().map(String::as_str)
    }

    fn position(&self, variant: &str, dataset: &str) -> Result<(usize, usize)> {
        let row = self
            .variants
            .iter()
            .position(|v| v == variant)
            .ok_or_else(|| Error::Lookup(format!("variant `{variant}` not in this table")))?;
        let col = self
            .datasets
            .iter()
            .position(|d| d == dataset)
            .ok_or_else(|| Error::Lookup(format!("dataset `{dataset}` not in this table")))?;
        Ok((row, col))
    }

    pub fn set(&mut self, variant: &str, dataset: &str, value: f64) -> Result<()> {
        let pos = self.position(variant, dataset)?;
        self.cells.insert(pos, value);
        Ok(())
    }

    pub fn get(&self, variant: &str, dataset: &str) -> Option<f64> {
        let pos = self.position(variant, dataset).ok()?;
        self.cells.get(&pos).copied()
    }

    fn cell_text(&self, row: usize, col: usize) -> String {
        match self.cells.get(&(row, col)) {
            Some(v) => format_percent(*v),
            None => "—".to_string(),
        }
    }

    /// CSV with a `variant` label column and one column per dataset.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant");
        for d in &self.datasets {
            out.push(',');
            out.push_str(d);
        }
        out.push('\n');
        for (row, v) in self.variants.iter().enumerate() {
            out.push_str(v);
            for col in 0..self.datasets.len() {
                out.push(',');
                out.push_str(&self.cell_text(row, col));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV layout written by [`AblationMatrix::to_csv`]. Em
    /// dashes and empty fields stay empty cells.
    pub fn from_csv(text: &str) -> Result<AblationMatrix> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty ablation table".into()))?;
        let mut columns = header.split(',');
        let label = columns.next().unwrap_or_default();
        if label != "variant" {
            return Err(Error::Format(format!(
                "ablation table header must start with `variant`, got `{label}`"
            )));
        }
        let datasets: Vec<String> = columns.map(str::to_string).collect();
        if datasets.is_empty() {
            return Err(Error::Format("ablation table has no dataset columns".into()));
        }
        let mut variants = Vec::new();
        let mut parsed_rows: Vec<Vec<Option<f64>>> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let variant = fields.next().unwrap_or_default().to_string();
            if variant.is_empty() {
                return Err(Error::Format(format!(
                    "ablation table row {} has no variant label",
                    lineno + 2
                )));
            }
            let values: Vec<Option<f64>> = fields
                .map(|f| match f.trim() {
                    "" | "—" => Ok(None),
                    raw => raw.parse::<f64>().map(Some).map_err(|_| {
                        Error::Format(format!(
                            "ablation table row {}: unparseable value `{raw}`",
                            lineno + 2
                        ))
                    }),
                })
                .collect::<Result<_>>()?;
            if values.len() != datasets.len() {
                return Err(Error::Format(format!(
                    "ablation table row {}: {} values for {} datasets",
                    lineno + 2,
                    values.len(),
                    datasets.len()
                )));
            }
            variants.push(variant);
            parsed_rows.push(values);
        }
        let mut table = AblationMatrix::new(&variants, &datasets);
        for (row, values) in parsed_rows.into_iter().enumerate() {
            for (col, value) in values.into_iter().enumerate() {
                if let Some(v) = value {
                    table.cells.insert((row, col), v);
                }
            }
        }
        Ok(table)
    }

    /// Space-padded table for terminal reading.
    pub fn to_aligned_text(&self) -> String {
        let mut widths: Vec<usize> = Vec::with_capacity(self.datasets.len() + 1);
        let label_width = self
            .variants
            .iter()
            .map(|v| v.chars().count())
            .chain(std::iter::once("variant".len()))
            .max()
            .unwrap_or(0);
        widths.push(label_width);
        for (col, d) in self.datasets.iter().enumerate() {
            let w = (0..self.variants.len())
                .map(|row| self.cell_text(row, col).chars().count())
                .chain(std::iter::once(d.chars().count()))
                .max()
                .unwrap_or(0);
            widths.push(w);
        }
        let pad = |s: &str, w: usize| {
            let len = s.chars().count();
            format!("{s}{}", " ".repeat(w.saturating_sub(len)))
        };
        let mut out = pad("variant", widths[0]);
        for (col, d) in self.datasets.iter().enumerate() {
            out.push_str("  ");
            out.push_str(&pad(d, widths[col + 1]));
        }
        out.push('\n');
        for (row, v) in self.variants.iter().enumerate() {
            out.push_str(&pad(v, widths[0]));
            for col in 0..self.datasets.len() {
                out.push_str("  ");
                out.push_str(&pad(&self.cell_text(row, col), widths[col + 1]));
            }
            out.push('\n');
        }
        out
    }
}

/// The three companion grids of an ablation study.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub f1: AblationMatrix,
    pub precision: AblationMatrix,
    pub recall: AblationMatrix,
}

/// Lays out per-(variant, dataset) metrics as three grids. Missing
/// combinations stay empty and render as em dashes.
pub fn ablation_report<S: AsRef<str>>(
    variants: &[S],
    datasets: &[S],
    runs: &BTreeMap<(String, String), Metrics>,
) -> Result<AblationReport> {
    let mut report = AblationReport {
        f1: AblationMatrix::new(variants, datasets),
        precision: AblationMatrix::new(variants, datasets),
        recall: AblationMatrix::new(variants, datasets),
    };
    for ((variant, dataset), metrics) in runs {
        report.f1.set(variant, dataset, metrics.f1)?;
        report.precision.set(variant, dataset, metrics.precision)?;
        report.recall.set(variant, dataset, metrics.recall)?;
    }
    Ok(report)
}

impl AblationReport {
    /// The three grids with section titles, as one readable document.
    pub fn to_aligned_text(&self) -> String {
        format!(
            "F1\n{}\nPrecision\n{}\nRecall\n{}",
            self.f1.to_aligned_text(),
            self.precision.to_aligned_text(),
            self.recall.to_aligned_text()
        )
    }
}

/// Writes predictions as one `pmid<TAB>label<TAB>score` line each, the
/// interchange format between the predict and eval stages. Scores keep
/// six decimals.
pub fn write_predictions<'a, I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, Label, f64)>,
{
    let mut out = String::new();
    for (pmid, label, score) in rows {
        writeln!(out, "{pmid}\t{label}\t{score:.6}").expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a predictions file written by [`write_predictions`]. Lines must
/// have exactly three tab-separated fields; errors carry the line number.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, Label, f64)>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let label: Label = fields[1]
            .parse()
            .map_err(|e| Error::parse(path, lineno, format!("{e}")))?;
        let score: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid score `{}`", fields[2])))?;
        if !score.is_finite() {
            return Err(Error::parse(path, lineno, format!("non-finite score `{score}`")));
        }
        rows.push((fields[0].to_string(), label, score));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labeled(pairs: &[(&str, Label)]) -> Vec<(String, Label)> {
        pairs.iter().map(|(p, l)| (p.to_string(), *l)).collect()
    }

    use Label::{Negative as Neg, Positive as Pos};

    #[test]
    fn confusion_counts_match_hand_cases() {
        let gold = labeled(&[("1", Pos), ("2", Pos), ("3", Neg), ("4", Neg)]);
        let same = confusion(&gold, &gold).unwrap();
        assert_eq!(same.false_pos, 0);
        assert_eq!(same.false_neg, 0);
        assert_eq!(same.total(), 4);

        let flipped = labeled(&[("1", Neg), ("2", Neg), ("3", Pos), ("4", Pos)]);
        let c = confusion(&flipped, &gold).unwrap();
        assert_eq!(c.true_pos, 0);
        assert_eq!(c.true_neg, 0);
        assert_eq!(c.false_pos, 2);
        assert_eq!(c.false_neg, 2);

        let preds = labeled(&[("1", Pos), ("2", Pos), ("3", Neg), ("4", Neg)]);
        let gold2 = labeled(&[("1", Pos), ("2", Neg), ("3", Pos), ("4", Neg)]);
        let c = confusion(&preds, &gold2).unwrap();
        assert_eq!(
            (c.true_pos, c.false_pos, c.false_neg, c.true_neg),
            (1, 1, 1, 1)
        );
    }

    #[test]
    fn confusion_rejects_misaligned_pmid_sets() {
        let gold = labeled(&[("1", Pos), ("2", Neg)]);
        let preds = labeled(&[("1", Pos), ("3", Neg)]);
        let err = confusion(&preds, &gold).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3") && msg.contains("2"), "{msg}");

        let dup = labeled(&[("1", Pos), ("1", Neg)]);
        assert!(confusion(&dup, &gold).is_err());
        assert!(confusion(&gold, &dup).is_err());
    }

    #[test]
    fn metrics_match_hand_computation() {
        let m = precision_recall_f1(&ConfusionCounts {
            true_pos: 3,
            false_pos: 1,
            false_neg: 1,
            true_neg: 0,
        });
        assert_eq!(format_percent(m.precision), "75.000");
        assert_eq!(format_percent(m.recall), "75.000");
        assert_eq!(format_percent(m.f1), "75.000");

        let zero = precision_recall_f1(&ConfusionCounts::default());
        assert_eq!((zero.precision, zero.recall, zero.f1), (0.0, 0.0, 0.0));

        let perfect = precision_recall_f1(&ConfusionCounts {
            true_pos: 10,
            true_neg: 5,
            ..Default::default()
        });
        assert_eq!(
            (perfect.precision, perfect.recall, perfect.f1),
            (100.0, 100.0, 100.0)
        );
    }

    #[test]
    fn f1_is_the_harmonic_mean_of_emitted_p_and_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let c = ConfusionCounts {
                true_pos: rng.random_range(0..20),
                false_pos: rng.random_range(0..20),
                false_neg: rng.random_range(0..20),
                true_neg: rng.random_range(0..20),
            };
            let m = precision_recall_f1(&c);
            let expected = if m.precision + m.recall == 0.0 {
                0.0
            } else {
                2.0 * m.precision * m.recall / (m.precision + m.recall)
            };
            assert!((m.f1 - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_are_prediction_order_invariant() {
        let gold = labeled(&[("1", Pos), ("2", Neg), ("3", Pos), ("4", Neg), ("5", Pos)]);
        let preds = labeled(&[("1", Pos), ("2", Pos), ("3", Neg), ("4", Neg), ("5", Pos)]);
        let base = confusion(&preds, &gold).unwrap();
        let mut shuffled = preds.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            assert_eq!(confusion(&shuffled, &gold).unwrap(), base);
        }
    }

    /// Brute-force re-count with independent code: scan gold for each
    /// prediction by linear search and tally with explicit branches.
    fn brute_force(preds: &[(String, Label)], gold: &[(String, Label)]) -> (u64, u64, u64, u64) {
        let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
        for (pmid, pred) in preds {
            let gold_label = gold
                .iter()
                .find(|(g, _)| g == pmid)
                .map(|(_, l)| *l)
                .expect("aligned sets");
            if *pred == Pos && gold_label == Pos {
                tp += 1;
            } else if *pred == Pos && gold_label == Neg {
                fp += 1;
            } else if *pred == Neg && gold_label == Pos {
                fneg += 1;
            } else {
                tn += 1;
            }
        }
        (tp, fp, fneg, tn)
    }

    #[test]
    fn confusion_matches_brute_force_on_random_assignments() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let flip = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { Pos } else { Neg };
            let gold: Vec<(String, Label)> = (0..50)
                .map(|i| (format!("d{i}"), flip(&mut rng)))
                .collect();
            let preds: Vec<(String, Label)> = (0..50)
                .map(|i| (format!("d{i}"), flip(&mut rng)))
                .collect();
            let c = confusion(&preds, &gold).unwrap();
            assert_eq!(
                (c.true_pos, c.false_pos, c.false_neg, c.true_neg),
                brute_force(&preds, &gold)
            );
        }
    }

    #[test]
    fn ablation_matrix_renders_missing_cells_as_dash() {
        let mut m = AblationMatrix::new(&["cnn", "kmcnn"], &["set-a", "set-b"]);
        m.set("cnn", "set-a", 75.0).unwrap();
        m.set("kmcnn", "set-b", 93.2434).unwrap();
        assert!(m.set("bogus", "set-a", 1.0).is_err());
        let csv = m.to_csv();
        assert_eq!(
            csv,
            "variant,set-a,set-b\ncnn,75.000,—\nkmcnn,—,93.243\n"
        );
        let text = m.to_aligned_text();
        assert!(text.contains("variant"), "{text}");
        assert!(text.lines().count() == 3, "{text}");

        // Header-only table renders fine.
        let empty = AblationMatrix::new::<&str>(&[], &["only"]);
        assert_eq!(empty.to_csv(), "variant,only\n");
    }

    #[test]
    fn ablation_report_groups_three_metrics() {
        let mut runs = BTreeMap::new();
        runs.insert(
            ("kmcnn".to_string(), "synthetic".to_string()),
            Metrics {
                precision: 90.0,
                recall: 80.0,
                f1: 84.706,
            },
        );
        let report = ablation_report(&["cnn", "kmcnn"], &["synthetic"], &runs).unwrap();
        assert_eq!(report.f1.get("kmcnn", "synthetic"), Some(84.706));
        assert_eq!(report.f1.get("cnn", "synthetic"), None);
        let text = report.to_aligned_text();
        assert!(text.contains("F1\n") && text.contains("Precision\n"), "{text}");
    }

    #[test]
    fn reference_tables_roundtrip_through_the_renderer() {
        for fixture in [
            include_str!("../data/reference_f1.csv"),
            include_str!("../data/reference_precision.csv"),
            include_str!("../data/reference_recall.csv"),
        ] {
            let parsed = AblationMatrix::from_csv(fixture).unwrap();
            let variants: Vec<&str> = parsed.variants().collect();
            assert_eq!(variants, vec!["cnn", "mcnn", "kcnn", "kmcnn"]);
            assert_eq!(parsed.datasets().count(), 5);
            // Every cell is populated in the published tables.
            for v in ["cnn", "mcnn", "kcnn", "kmcnn"] {
                let datasets: Vec<String> =
                    parsed.datasets().map(str::to_string).collect();
                for d in datasets {
                    assert!(parsed.get(v, &d).is_some(), "missing {v}/{d}");
                }
            }
            // Rendering and re-parsing preserves the values.
            let reparsed = AblationMatrix::from_csv(&parsed.to_csv()).unwrap();
            let datasets: Vec<String> = parsed.datasets().map(str::to_string).collect();
            for v in ["cnn", "mcnn", "kcnn", "kmcnn"] {
                for d in &datasets {
                    let a = parsed.get(v, d).unwrap();
                    let b = reparsed.get(v, d).unwrap();
                    assert!((a - b).abs() < 1e-9, "{v}/{d}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn known_reference_cell_survives_the_pipeline() {
        let parsed =
            AblationMatrix::from_csv(include_str!("../data/reference_f1.csv")).unwrap();
        let value = parsed.get("kmcnn", "UniProtKB/Swiss-Prot").unwrap();
        assert_eq!(format_percent(value), "93.243");
    }

    #[test]
    fn predictions_roundtrip_through_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.tsv");
        let rows = vec![
            ("100001".to_string(), Pos, 0.987654),
            ("100002".to_string(), Neg, 0.012345),
            ("100003".to_string(), Pos, 0.5),
        ];
        write_predictions(&path, rows.iter().map(|(p, l, s)| (p.as_str(), *l, *s))).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "100001\tpositive\t0.987654\n100002\tnegative\t0.012345\n100003\tpositive\t0.500000\n"
        );
        let back = read_predictions(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn malformed_prediction_lines_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.tsv");

        std::fs::write(&path, "1\tpositive\t0.9\n2\tpositive\n").unwrap();
        let err = read_predictions(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("3 tab-separated fields"), "{err}");

        std::fs::write(&path, "1\tmaybe\t0.9\n").unwrap();
        let err = read_predictions(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
        assert!(err.contains("maybe"), "{err}");

        std::fs::write(&path, "1\tpositive\tNaN\n").unwrap();
        let err = read_predictions(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
        assert!(err.contains("non-finite"), "{err}");
    }
}
