use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Incidence-angle band edges in degrees; the last band is closed at 90.
pub const ANGLE_BANDS: [f64; 5] = [0.0, 10.4, 20.7, 31.1, 90.0];

/// One evaluated patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchOutcome {
    pub surface: usize,
    pub image: usize,
    pub x: u32,
    pub y: u32,
    pub side: u32,
    pub truth: usize,
    pub predicted: usize,
    pub incidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinAccuracy {
    pub label: String,
    pub patches: usize,
    pub correct: usize,
    /// Fraction correct; `None` for an empty bin.
    pub accuracy: Option<f64>,
    /// Unweighted mean of per-class recall within the bin.
    pub class_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub categories: Vec<String>,
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<u64>>,
    /// Row-normalized counts; rows of absent classes are all zero.
    pub confusion: Vec<Vec<f64>>,
    /// Recall per class, `None` when the class has no test patches.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean of the confusion diagonal over present classes.
    pub mean_accuracy: f64,
    pub overall_accuracy: f64,
    pub by_scale: Vec<BinAccuracy>,
    pub by_angle: Vec<BinAccuracy>,
    pub outcomes: Vec<PatchOutcome>,
}

fn class_mean(counts: &[Vec<u64>]) -> Option<f64> {
    let recalls: Vec<f64> = counts
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64)
}

fn tally<'a>(k: usize, outcomes: impl Iterator<Item = &'a PatchOutcome>) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; k]; k];
    for o in outcomes {
        counts[o.truth][o.predicted] += 1;
    }
    counts
}

fn bin(label: String, k: usize, members: Vec<&PatchOutcome>) -> BinAccuracy {
    let correct = members.iter().filter(|o| o.truth == o.predicted).count();
    let counts = tally(k, members.iter().copied());
    BinAccuracy {
        label,
        patches: members.len(),
        correct,
        accuracy: (!members.is_empty()).then(|| correct as f64 / members.len() as f64),
        class_mean: class_mean(&counts),
    }
}

/// Index of the angle band holding `deg`.
pub fn angle_band(deg: f64) -> usize {
    let last = ANGLE_BANDS.len() - 2;
    (0..last).find(|&b| deg < ANGLE_BANDS[b + 1]).unwrap_or(last)
}

impl Report {
    pub fn new(categories: Vec<String>, outcomes: Vec<PatchOutcome>) -> Result<Self> {
        let k = categories.len();
        if outcomes.is_empty() {
            return Err(Error::invalid("no patches were evaluated"));
        }
        if let Some(o) = outcomes.iter().find(|o| o.truth >= k || o.predicted >= k) {
            return Err(Error::invalid(format!("label out of range in outcome {o:?}")));
        }
        let counts = tally(k, outcomes.iter());
        let confusion: Vec<Vec<f64>> = counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect()
            })
            .collect();
        let per_class: Vec<Option<f64>> = counts
            .iter()
            .enumerate()
            .map(|(c, row)| (row.iter().sum::<u64>() > 0).then(|| confusion[c][c]))
            .collect();
        let mean_accuracy = class_mean(&counts).unwrap_or(0.0);
        let correct = outcomes.iter().filter(|o| o.truth == o.predicted).count();
        let overall_accuracy = correct as f64 / outcomes.len() as f64;

        let mut scales: Vec<u32> = outcomes.iter().map(|o| o.side).collect();
        scales.sort_unstable();
        scales.dedup();
        let by_scale = scales
            .iter()
            .map(|&s| bin(s.to_string(), k, outcomes.iter().filter(|o| o.side == s).collect()))
            .collect();
        let by_angle = (0..ANGLE_BANDS.len() - 1)
            .map(|b| {
                let close = if b + 2 == ANGLE_BANDS.len() { "]" } else { ")" };
                let label = format!("[{},{}{close}", ANGLE_BANDS[b], ANGLE_BANDS[b + 1]);
                let members = outcomes.iter().filter(|o| o.incidence.is_some_and(|a| angle_band(a) == b)).collect();
                bin(label, k, members)
            })
            .collect();
        Ok(Self {
            categories,
            counts,
            confusion,
            per_class,
            mean_accuracy,
            overall_accuracy,
            by_scale,
            by_angle,
            outcomes,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Write the CSV tables, the confusion heatmap and report.json to `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_matrix_csv(&dir.join("confusion.csv"), &self.categories, &self.confusion)?;
        confusion_heatmap(&self.confusion).save(dir.join("confusion.png"))?;

        let mut w = csv_writer(&dir.join("per_class.csv"))?;
        row(&mut w, &dir.join("per_class.csv"), ["category", "patches", "correct", "accuracy"].map(String::from))?;
        for (c, name) in self.categories.iter().enumerate() {
            let n: u64 = self.counts[c].iter().sum();
            row(&mut w, &dir.join("per_class.csv"), [name.clone(), n.to_string(), self.counts[c][c].to_string(), fmt_opt(self.per_class[c])])?;
        }
        finish(w, &dir.join("per_class.csv"))?;

        write_bins(&dir.join("by_scale.csv"), "scale", &self.by_scale)?;
        write_bins(&dir.join("by_angle.csv"), "incidence_deg", &self.by_angle)?;

        let path = dir.join("summary.csv");
        let mut w = csv_writer(&path)?;
        row(&mut w, &path, ["metric".into(), "value".into()])?;
        row(&mut w, &path, ["mean_accuracy".into(), fmt(self.mean_accuracy)])?;
        row(&mut w, &path, ["overall_accuracy".into(), fmt(self.overall_accuracy)])?;
        row(&mut w, &path, ["patches".into(), self.outcomes.len().to_string()])?;
        finish(w, &path)?;

        let path = dir.join("predictions.csv");
        let mut w = csv_writer(&path)?;
        let head = ["surface", "image", "x", "y", "side", "truth", "predicted", "incidence_deg"];
        row(&mut w, &path, head.map(String::from))?;
        for o in &self.outcomes {
            row(
                &mut w,
                &path,
                [
                    o.surface.to_string(),
                    o.image.to_string(),
                    o.x.to_string(),
                    o.y.to_string(),
                    o.side.to_string(),
                    self.categories[o.truth].clone(),
                    self.categories[o.predicted].clone(),
                    fmt_opt(o.incidence),
                ],
            )?;
        }
        finish(w, &path)?;
        self.save_json(&dir.join("report.json"))
    }

    /// `self.confusion - baseline.confusion`, for the same category list.
    pub fn difference(&self, baseline: &Report) -> Result<Vec<Vec<f64>>> {
        if self.categories != baseline.categories {
            return Err(Error::invalid("reports cover different categories"));
        }
        Ok(self
            .confusion
            .iter()
            .zip(&baseline.confusion)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect())
    }
}

/// Write the difference confusion matrix of two reports as CSV and PNG.
pub fn write_difference(report: &Report, baseline: &Report, dir: &Path) -> Result<()> {
    let diff = report.difference(baseline)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix_csv(&dir.join("confusion_difference.csv"), &report.categories, &diff)?;
    difference_heatmap(&diff).save(dir.join("confusion_difference.png"))?;
    let path = dir.join("difference_summary.csv");
    let mut w = csv_writer(&path)?;
    row(&mut w, &path, ["metric".into(), "report".into(), "baseline".into(), "difference".into()])?;
    for (name, a, b) in [
        ("mean_accuracy", report.mean_accuracy, baseline.mean_accuracy),
        ("overall_accuracy", report.overall_accuracy, baseline.overall_accuracy),
    ] {
        row(&mut w, &path, [name.into(), fmt(a), fmt(b), fmt(a - b)])?;
    }
    finish(w, &path)
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("csv", format!("{other:?}")),
    }
}

fn row<I: IntoIterator<Item = String>>(w: &mut csv::Writer<fs::File>, path: &Path, fields: I) -> Result<()> {
    w.write_record(fields).map_err(|e| csv_error(path, e))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_matrix_csv(path: &Path, names: &[String], m: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut head = vec!["truth\\predicted".to_string()];
    head.extend(names.iter().cloned());
    row(&mut w, path, head)?;
    for (name, r) in names.iter().zip(m) {
        let mut fields = vec![name.clone()];
        fields.extend(r.iter().map(|&v| fmt(v)));
        row(&mut w, path, fields)?;
    }
    finish(w, path)
}

fn write_bins(path: &Path, key: &str, bins: &[BinAccuracy]) -> Result<()> {
    let mut w = csv_writer(path)?;
    row(&mut w, path, [key, "patches", "correct", "accuracy", "class_mean"].map(String::from))?;
    for b in bins {
        row(
            &mut w,
            path,
            [b.label.clone(), b.patches.to_string(), b.correct.to_string(), fmt_opt(b.accuracy), fmt_opt(b.class_mean)],
        )?;
    }
    finish(w, path)
}

const CELL: u32 = 24;

fn heatmap(m: &[Vec<f64>], color: impl Fn(f64) -> [u8; 3]) -> RgbImage {
    let k = m.len() as u32;
    RgbImage::from_fn(k.max(1) * CELL, k.max(1) * CELL, |x, y| {
        let (i, j) = ((y / CELL) as usize, (x / CELL) as usize);
        if x % CELL == 0 || y % CELL == 0 || i >= m.len() {
            return Rgb([255, 255, 255]);
        }
        Rgb(color(m[i][j]))
    })
}

/// Row-normalized confusion as a white-to-dark-blue grid, truth down, prediction across.
pub fn confusion_heatmap(m: &[Vec<f64>]) -> RgbImage {
    heatmap(m, |v| {
        let t = v.clamp(0.0, 1.0);
        let ch = |lo: f64| (255.0 - t * (255.0 - lo)).round() as u8;
        [ch(8.0), ch(48.0), ch(107.0)]
    })
}

/// Signed differences in [-1, 1]: red for negative, blue for positive.
pub fn difference_heatmap(m: &[Vec<f64>]) -> RgbImage {
    heatmap(m, |v| {
        let t = v.clamp(-1.0, 1.0).abs();
        let fade = (255.0 * (1.0 - t)).round() as u8;
        if v < 0.0 {
            [255, fade, fade]
        } else {
            [fade, fade, 255]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::model::random_predictions;
    use proptest::prelude::*;

    fn outcome(truth: usize, predicted: usize, side: u32, incidence: f64) -> PatchOutcome {
        PatchOutcome { surface: 0, image: 0, x: 0, y: 0, side, truth, predicted, incidence: Some(incidence) }
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions_give_identity() {
        let outs: Vec<_> = (0..12).map(|i| outcome(i % 3, i % 3, 100, 5.0)).collect();
        let r = Report::new(names(3), outs).unwrap();
        assert_eq!(r.mean_accuracy, 1.0);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn mean_is_unweighted_over_classes() {
        let mut outs: Vec<_> = (0..99).map(|_| outcome(0, 0, 100, 1.0)).collect();
        outs.push(outcome(1, 0, 100, 1.0));
        let r = Report::new(names(2), outs).unwrap();
        assert!((r.mean_accuracy - 0.5).abs() < 1e-12);
        assert!((r.overall_accuracy - 0.99).abs() < 1e-12);
    }

    #[test]
    fn angle_bands_use_fixed_edges() {
        assert_eq!(angle_band(0.0), 0);
        assert_eq!(angle_band(10.39), 0);
        assert_eq!(angle_band(10.4), 1);
        assert_eq!(angle_band(20.7), 2);
        assert_eq!(angle_band(31.09), 2);
        assert_eq!(angle_band(31.1), 3);
        assert_eq!(angle_band(90.0), 3);
        let r = Report::new(names(1), vec![outcome(0, 0, 100, 31.1)]).unwrap();
        let labels: Vec<&str> = r.by_angle.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, ["[0,10.4)", "[10.4,20.7)", "[20.7,31.1)", "[31.1,90]"]);
        assert_eq!(r.by_angle[3].patches, 1);
    }

    #[test]
    fn random_labels_score_near_chance() {
        let pred = random_predictions(1000, 4, 11);
        let outs: Vec<_> = pred.iter().enumerate().map(|(i, &p)| outcome(i % 4, p, 100, 0.0)).collect();
        let r = Report::new(names(4), outs).unwrap();
        // Each class recall has std about 0.027 over 250 patches; the mean of four about 0.014.
        assert!((r.mean_accuracy - 0.25).abs() < 0.05, "{}", r.mean_accuracy);
    }

    #[test]
    fn csv_output_and_difference() {
        let dir = tempfile::tempdir().unwrap();
        let a = Report::new(names(2), vec![outcome(0, 0, 100, 3.0), outcome(1, 0, 200, 40.0)]).unwrap();
        let b = Report::new(names(2), vec![outcome(0, 0, 100, 3.0), outcome(1, 1, 200, 40.0)]).unwrap();
        a.write(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
        assert_eq!(text, "truth\\predicted,c0,c1\nc0,1.000000,0.000000\nc1,1.000000,0.000000\n");
        let scale = fs::read_to_string(dir.path().join("by_scale.csv")).unwrap();
        assert!(scale.contains("200,1,0,0.000000,0.000000"), "{scale}");
        assert_eq!(Report::load_json(&dir.path().join("report.json")).unwrap(), a);
        let d = a.difference(&b).unwrap();
        assert_eq!(d, vec![vec![0.0, 0.0], vec![1.0, -1.0]]);
        write_difference(&a, &b, dir.path()).unwrap();
        let img = image::open(dir.path().join("confusion_difference.png")).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (2 * CELL, 2 * CELL));
        assert_eq!(img.get_pixel(CELL + 5, CELL + 5).0, [255, 0, 0]);
    }

    proptest! {
        #[test]
        fn confusion_rows_sum_to_one(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let outs: Vec<_> = pairs.iter().map(|&(t, p)| outcome(t, p, 100, 12.0)).collect();
            let r = Report::new(names(4), outs).unwrap();
            let mut diag = Vec::new();
            for (c, row) in r.confusion.iter().enumerate() {
                if r.counts[c].iter().sum::<u64>() > 0 {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    diag.push(row[c]);
                }
            }
            let mean = diag.iter().sum::<f64>() / diag.len() as f64;
            prop_assert!((mean - r.mean_accuracy).abs() < 1e-12);
        }
    }
}
