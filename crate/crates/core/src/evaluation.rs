//! Detection evaluation: temporal IoU, per-class average precision, and
//! mAP reports over IoU-threshold grids, in the style of the standard
//! weakly-supervised localization protocol.

use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};

/// Intersection-over-union of two closed time intervals, assuming both are
/// non-degenerate. Zero when they do not overlap.
pub(crate) fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    if inter == 0.0 {
        return 0.0;
    }
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    inter / union
}

/// Temporal IoU of two `(start, end)` intervals in seconds.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for (s, e) in [a, b] {
        if !(s.is_finite() && e.is_finite() && s < e) {
            return Err(Error::Data(format!(
                "degenerate interval ({s}, {e}) in IoU"
            )));
        }
    }
    Ok(interval_iou(a, b))
}

/// One scored detection; `class` is a 1-based action class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub class: usize,
    pub start_sec: f64,
    pub end_sec: f64,
    pub score: f64,
}

/// One ground-truth action instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub video_id: String,
    pub class: usize,
    pub start_sec: f64,
    pub end_sec: f64,
}

/// Flatten a split's ground-truth segments, in manifest order.
pub fn collect_gt(manifest: &DatasetManifest, split: Split) -> Vec<GtInstance> {
    manifest
        .videos
        .iter()
        .filter(|v| v.split == split)
        .flat_map(|v| {
            v.ground_truth.iter().map(|seg| GtInstance {
                video_id: v.video_id.clone(),
                class: seg.class,
                start_sec: seg.start,
                end_sec: seg.end,
            })
        })
        .collect()
}

/// Non-interpolated average precision for one class.
///
/// Detections are ranked by descending score (ties keep input order); each
/// detection greedily matches the unmatched same-video ground-truth segment
/// with the highest IoU at or above `iou_thr` (IoU ties keep the earlier
/// segment). AP is the sum of precisions at each true positive divided by
/// the number of ground-truth segments; it is 0 when there is no ground
/// truth.
pub fn average_precision(detections: &[Detection], gts: &[GtInstance], iou_thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));

    let mut matched = vec![false; gts.len()];
    let mut true_positives = 0usize;
    let mut ap_sum = 0.0;
    for (rank, &di) in order.iter().enumerate() {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if matched[gi] || gt.video_id != det.video_id {
                continue;
            }
            let iou = interval_iou(
                (det.start_sec, det.end_sec),
                (gt.start_sec, gt.end_sec),
            );
            if iou >= iou_thr && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            matched[gi] = true;
            true_positives += 1;
            ap_sum += true_positives as f64 / (rank + 1) as f64;
        }
    }
    ap_sum / gts.len() as f64
}

/// AP table over classes and IoU thresholds, with per-threshold mAP and the
/// headline average mAP over a sub-range of thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub thresholds: Vec<f64>,
    /// `ap[c][t]`: AP of class `c+1` at `thresholds[t]`.
    pub ap: Vec<Vec<f64>>,
    /// Per-threshold mean AP over classes with at least one GT segment.
    pub map: Vec<f64>,
    /// Bounds of the headline averaging sub-range (inclusive).
    pub avg_range: (f64, f64),
    /// Mean of `map` over thresholds inside `avg_range`.
    pub average_map: f64,
}

impl EvalReport {
    /// mAP at the threshold closest to `thr` (thresholds are a fixed grid,
    /// so this is exact lookup in practice).
    pub fn map_at(&self, thr: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - thr).abs() < 1e-9)
            .map(|i| self.map[i])
    }
}

fn in_range(t: f64, range: (f64, f64)) -> bool {
    t >= range.0 - 1e-9 && t <= range.1 + 1e-9
}

/// Evaluate detections against ground truth on a threshold grid.
///
/// Classes with zero ground-truth segments show AP 0 in the table but are
/// excluded from every mAP average.
pub fn map_report(
    detections: &[Detection],
    gts: &[GtInstance],
    class_names: &[String],
    thresholds: &[f64],
    avg_range: (f64, f64),
) -> Result<EvalReport> {
    if class_names.is_empty() || thresholds.is_empty() {
        return Err(Error::Config(
            "evaluation needs at least one class and one threshold".to_string(),
        ));
    }
    if thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0 && *t <= 1.0)) {
        return Err(Error::Config(format!(
            "IoU thresholds must lie in (0, 1], got {thresholds:?}"
        )));
    }
    if !thresholds.iter().any(|&t| in_range(t, avg_range)) {
        return Err(Error::Config(format!(
            "no threshold falls in the averaging range {avg_range:?}"
        )));
    }
    let n = class_names.len();
    for d in detections {
        if d.class == 0 || d.class > n {
            return Err(Error::Data(format!(
                "detection class {} outside 1..={n}",
                d.class
            )));
        }
    }
    for g in gts {
        if g.class == 0 || g.class > n {
            return Err(Error::Data(format!(
                "ground-truth class {} outside 1..={n}",
                g.class
            )));
        }
    }

    let mut ap = vec![vec![0.0; thresholds.len()]; n];
    let mut has_gt = vec![false; n];
    for c in 1..=n {
        let class_dets: Vec<Detection> = detections.iter().filter(|d| d.class == c).cloned().collect();
        let class_gts: Vec<GtInstance> = gts.iter().filter(|g| g.class == c).cloned().collect();
        has_gt[c - 1] = !class_gts.is_empty();
        for (ti, &thr) in thresholds.iter().enumerate() {
            ap[c - 1][ti] = average_precision(&class_dets, &class_gts, thr);
        }
    }
    let gt_classes = has_gt.iter().filter(|&&h| h).count();
    if gt_classes == 0 {
        return Err(Error::Data(
            "no class has any ground-truth segment".to_string(),
        ));
    }
    let map: Vec<f64> = (0..thresholds.len())
        .map(|ti| {
            ap.iter()
                .zip(&has_gt)
                .filter(|(_, &h)| h)
                .map(|(row, _)| row[ti])
                .sum::<f64>()
                / gt_classes as f64
        })
        .collect();
    let in_avg: Vec<f64> = thresholds
        .iter()
        .zip(&map)
        .filter(|(&t, _)| in_range(t, avg_range))
        .map(|(_, &m)| m)
        .collect();
    let average_map = in_avg.iter().sum::<f64>() / in_avg.len() as f64;

    Ok(EvalReport {
        class_names: class_names.to_vec(),
        thresholds: thresholds.to_vec(),
        ap,
        map,
        avg_range,
        average_map,
    })
}

/// Conventional THUMOS-style grid: 0.1, 0.2, ..., 0.9.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Headline averaging range 0.3..0.7 used by the ablation tables.
pub const DEFAULT_AVG_RANGE: (f64, f64) = (0.3, 0.7);

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Write the report as a class × threshold AP matrix plus a summary row:
/// columns are the thresholds followed by the sub-range average, rows are
/// classes followed by mAP.
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["class".to_string()];
    header.extend(report.thresholds.iter().map(|t| format!("ap@{t:.2}")));
    header.push(format!(
        "avg@{:.2}:{:.2}",
        report.avg_range.0, report.avg_range.1
    ));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;

    let avg_of = |row: &[f64]| {
        let vals: Vec<f64> = report
            .thresholds
            .iter()
            .zip(row)
            .filter(|(&t, _)| in_range(t, report.avg_range))
            .map(|(_, &v)| v)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    for (name, row) in report.class_names.iter().zip(&report.ap) {
        let mut record = vec![name.clone()];
        record.extend(row.iter().map(|&v| fmt(v)));
        record.push(fmt(avg_of(row)));
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    let mut summary = vec!["mAP".to_string()];
    summary.extend(report.map.iter().map(|&v| fmt(v)));
    summary.push(fmt(report.average_map));
    w.write_record(&summary).map_err(|e| csv_error(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write detections as `video_id,class_name,start_sec,end_sec,score` rows.
/// Floats use shortest round-trip formatting, so identical inputs produce
/// byte-identical files.
pub fn write_detections(path: &Path, detections: &[Detection], class_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["video_id", "class_name", "start_sec", "end_sec", "score"])
        .map_err(|e| csv_error(path, e))?;
    for d in detections {
        let name = class_names.get(d.class.wrapping_sub(1)).ok_or_else(|| {
            Error::Data(format!("detection class {} has no name", d.class))
        })?;
        w.write_record([
            d.video_id.as_str(),
            name.as_str(),
            &d.start_sec.to_string(),
            &d.end_sec.to_string(),
            &d.score.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a detections CSV written by [`write_detections`].
pub fn read_detections(path: &Path, class_names: &[String]) -> Result<Vec<Detection>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if row.len() != 5 {
            return Err(Error::format(path, format!("expected 5 columns, got {}", row.len())));
        }
        let class = class_names
            .iter()
            .position(|n| n == &row[1])
            .map(|i| i + 1)
            .ok_or_else(|| Error::format(path, format!("unknown class name {:?}", &row[1])))?;
        let parse = |field: usize| -> Result<f64> {
            row[field]
                .parse::<f64>()
                .map_err(|e| Error::format(path, format!("bad float in column {field}: {e}")))
        };
        out.push(Detection {
            video_id: row[0].to_string(),
            class,
            start_sec: parse(2)?,
            end_sec: parse(3)?,
            score: parse(4)?,
        });
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(video: &str, class: usize, start: f64, end: f64, score: f64) -> Detection {
        Detection {
            video_id: video.to_string(),
            class,
            start_sec: start,
            end_sec: end,
            score,
        }
    }

    fn gt(video: &str, class: usize, start: f64, end: f64) -> GtInstance {
        GtInstance {
            video_id: video.to_string(),
            class,
            start_sec: start,
            end_sec: end,
        }
    }

    #[test]
    fn iou_basics() {
        assert_eq!(temporal_iou((0.0, 2.0), (0.0, 2.0)).unwrap(), 1.0);
        assert_eq!(temporal_iou((0.0, 1.0), (2.0, 3.0)).unwrap(), 0.0);
        assert!((temporal_iou((0.0, 2.0), (1.0, 3.0)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let a = temporal_iou((0.5, 1.7), (1.1, 4.0)).unwrap();
        let b = temporal_iou((1.1, 4.0), (0.5, 1.7)).unwrap();
        assert_eq!(a, b);
        assert!(temporal_iou((1.0, 1.0), (0.0, 2.0)).is_err());
        // touching intervals share no interior
        assert_eq!(temporal_iou((0.0, 1.0), (1.0, 2.0)).unwrap(), 0.0);
    }

    #[test]
    fn perfect_single_detection_has_ap_one() {
        let d = [det("v", 1, 1.0, 3.0, 0.9)];
        let g = [gt("v", 1, 1.0, 3.0)];
        assert_eq!(average_precision(&d, &g, 0.5), 1.0);
    }

    #[test]
    fn no_detections_or_no_gt_is_zero() {
        let g = [gt("v", 1, 1.0, 3.0)];
        assert_eq!(average_precision(&[], &g, 0.5), 0.0);
        let d = [det("v", 1, 1.0, 3.0, 0.9)];
        assert_eq!(average_precision(&d, &[], 0.5), 0.0);
    }

    #[test]
    fn hand_case_three_detections_two_gts() {
        // ranked: d1 hits gt1 (rank 1, prec 1), d2 misses, d3 hits gt2
        // (rank 3, prec 2/3); AP = (1 + 2/3) / 2
        let d = [
            det("v", 1, 0.0, 2.0, 0.9),
            det("v", 1, 10.0, 12.0, 0.8),
            det("v", 1, 4.0, 6.0, 0.7),
        ];
        let g = [gt("v", 1, 0.0, 2.0), gt("v", 1, 4.0, 6.0)];
        let ap = average_precision(&d, &g, 0.5);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn matching_is_per_video_and_single_use() {
        // same interval, wrong video: no match
        let d = [det("other", 1, 0.0, 2.0, 0.9)];
        let g = [gt("v", 1, 0.0, 2.0)];
        assert_eq!(average_precision(&d, &g, 0.5), 0.0);

        // one GT cannot absorb two detections: second becomes FP
        let d2 = [det("v", 1, 0.0, 2.0, 0.9), det("v", 1, 0.0, 2.0, 0.8)];
        let ap = average_precision(&d2, &g, 0.5);
        assert!((ap - 1.0).abs() < 1e-12, "AP {ap}");
    }

    #[test]
    fn best_iou_gt_wins_and_ties_take_the_earlier_gt() {
        // d1 overlaps gt0 at ~0.46 and gt1 at ~0.82, so it must consume
        // gt1; d2 can only match gt1 and becomes a false positive. Matching
        // greedily by list order instead would (wrongly) score both.
        let d = [det("v", 1, 2.0, 13.0, 0.9), det("v", 1, 8.0, 12.0, 0.8)];
        let g = [gt("v", 1, 0.0, 8.0), gt("v", 1, 3.0, 12.0)];
        let ap = average_precision(&d, &g, 0.4);
        assert!((ap - 0.5).abs() < 1e-12, "AP {ap}");
        // equal-IoU twin GTs: earlier one is consumed
        let twins = [gt("v", 1, 0.0, 2.0), gt("v", 1, 0.0, 2.0)];
        let d2 = [det("v", 1, 0.0, 2.0, 0.9)];
        let ap = average_precision(&d2, &twins, 0.5);
        assert!((ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ap_is_invariant_to_monotone_score_rescaling() {
        let d: Vec<Detection> = (0..4)
            .map(|i| det("v", 1, i as f64 * 3.0, i as f64 * 3.0 + 2.0, 0.9 - 0.2 * i as f64))
            .collect();
        let mut scaled = d.clone();
        for s in &mut scaled {
            s.score = s.score.exp() * 10.0;
        }
        let g = [gt("v", 1, 0.0, 2.0), gt("v", 1, 6.0, 8.0)];
        for thr in [0.3, 0.5, 0.7] {
            assert_eq!(
                average_precision(&d, &g, thr),
                average_precision(&scaled, &g, thr)
            );
        }
    }

    #[test]
    fn report_reduces_to_average_precision_for_one_class() {
        let d = [det("v", 1, 0.0, 2.0, 0.9), det("v", 1, 5.0, 9.0, 0.8)];
        let g = [gt("v", 1, 0.0, 2.0), gt("v", 1, 5.0, 7.0)];
        let names = vec!["jump".to_string()];
        let report = map_report(&d, &g, &names, &[0.5], (0.5, 0.5)).unwrap();
        assert_eq!(report.map[0], average_precision(&d, &g, 0.5));
        assert_eq!(report.average_map, report.map[0]);
        assert_eq!(report.map_at(0.5), Some(report.map[0]));
    }

    #[test]
    fn zero_gt_classes_are_excluded_from_map() {
        let d = [det("v", 2, 0.0, 2.0, 0.9)];
        let g = [gt("v", 1, 0.0, 2.0)];
        let names = vec!["a".to_string(), "b".to_string()];
        let report = map_report(&d, &g, &names, &[0.5], (0.5, 0.5)).unwrap();
        // class b has no GT: its (zero) AP must not dilute the mAP
        assert_eq!(report.map[0], 0.0); // class a has GT but no detection
        assert_eq!(report.ap[1][0], 0.0);

        let perfect = [det("v", 1, 0.0, 2.0, 0.9)];
        let r2 = map_report(&perfect, &g, &names, &[0.5], (0.5, 0.5)).unwrap();
        assert_eq!(r2.map[0], 1.0);
    }

    #[test]
    fn ap_never_increases_with_stricter_thresholds() {
        let d = [
            det("v", 1, 0.0, 2.0, 0.9),
            det("v", 1, 4.1, 6.4, 0.8),
            det("v", 1, 8.0, 9.0, 0.7),
        ];
        let g = [gt("v", 1, 0.0, 2.0), gt("v", 1, 4.0, 6.0), gt("v", 1, 7.5, 9.5)];
        let mut last = f64::INFINITY;
        for thr in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let ap = average_precision(&d, &g, thr);
            assert!(ap <= last + 1e-12);
            last = ap;
        }
    }

    #[test]
    fn report_rejects_bad_inputs() {
        let names = vec!["a".to_string()];
        let g = [gt("v", 1, 0.0, 2.0)];
        assert!(map_report(&[], &g, &names, &[], (0.3, 0.7)).is_err());
        assert!(map_report(&[], &g, &names, &[1.5], (0.3, 0.7)).is_err());
        assert!(map_report(&[], &g, &names, &[0.1], (0.3, 0.7)).is_err());
        assert!(map_report(&[], &[], &names, &[0.5], (0.3, 0.7)).is_err());
        let bad = [det("v", 2, 0.0, 1.0, 0.5)];
        assert!(map_report(&bad, &g, &names, &[0.5], (0.5, 0.5)).is_err());
    }

    #[test]
    fn detection_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dets.csv");
        let names = vec!["jump".to_string(), "swim".to_string()];
        let dets = vec![
            det("video_a", 1, 0.5, 2.5, 0.75),
            det("video_b", 2, 1.0 / 3.0, 7.0, 1e-4),
        ];
        write_detections(&path, &dets, &names).unwrap();
        let back = read_detections(&path, &names).unwrap();
        assert_eq!(back, dets);
    }

    #[test]
    fn report_csv_has_matrix_plus_summary_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let d = [det("v", 1, 0.0, 2.0, 0.9)];
        let g = [gt("v", 1, 0.0, 2.0), gt("v", 2, 4.0, 6.0)];
        let names = vec!["a".to_string(), "b".to_string()];
        let thresholds = default_thresholds();
        let report = map_report(&d, &g, &names, &thresholds, DEFAULT_AVG_RANGE).unwrap();
        write_report(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + names.len() + 1);
        assert!(lines[0].starts_with("class,ap@0.10,"));
        assert!(lines[0].ends_with("avg@0.30:0.70"));
        assert!(lines[3].starts_with("mAP,"));
        // class a: perfect detection at every threshold -> AP 1 everywhere
        assert!(lines[1].starts_with("a,1.000000"));
    }
}
