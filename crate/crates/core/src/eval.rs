//! Quantitative evaluation: per-frame overlap and fingertip-error records,
//! threshold curves, the six-way strategy cross-comparison, zone-stratified
//! hand accuracy, and the per-stage latency benchmark, together with the CSV
//! and JSON artifact formats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{run_cascade, FingerStrategy, HandStrategy, TrainedModels};
use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Point2};

/// Row order of every per-combination artifact.
pub const CROSS_HAND_ORDER: [HandStrategy; 3] =
    [HandStrategy::Rhd, HandStrategy::Ahd, HandStrategy::Gt];
/// Column order of every per-combination artifact.
pub const CROSS_FINGER_ORDER: [FingerStrategy; 2] = [FingerStrategy::Mfd, FingerStrategy::Spd];

/// Per-frame evaluation outcome. IoU is against the ground-truth hand box;
/// errors are fingertip Euclidean distances in original-image pixels,
/// indexed `[CROSS_HAND_ORDER][CROSS_FINGER_ORDER]`.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub frame: String,
    pub iou_rhd: f64,
    pub iou_redetect: f64,
    pub iou_ahd: f64,
    pub errors: [[f64; 2]; 3],
    /// Ground-truth hand center as a fraction of each image dimension.
    pub gt_center_rel: (f64, f64),
}

/// Threshold sweep of a detection-rate metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    pub thresholds: Vec<f64>,
    pub detection_rates: Vec<f64>,
}

/// Mean fingertip error per strategy combination, rows `CROSS_HAND_ORDER`,
/// columns `CROSS_FINGER_ORDER`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTable {
    pub mean_error_px: [[f64; 2]; 3],
    /// Frames that evaluated successfully and entered every cell.
    pub frames: usize,
    /// Frames excluded because some combination failed.
    pub failures: usize,
}

/// Mean hand IoU per strategy over one zone partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneStats {
    pub frames: usize,
    pub mean_iou_rhd: f64,
    pub mean_iou_redetect: f64,
    pub mean_iou_ahd: f64,
}

/// Zone-stratified hand accuracy. A partition with no frames is absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneMetrics {
    pub focus: Option<ZoneStats>,
    pub surrounding: Option<ZoneStats>,
}

/// Mean and tail of one timed stage, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub mean_ms: f64,
    pub p95_ms: f64,
}

/// Latency benchmark result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub hand: StageSummary,
    pub finger: StageSummary,
    pub processing: StageSummary,
    /// Mean wall time of the whole cascade call per frame.
    pub total_ms: f64,
    /// Timed repetitions, excluding warm-up.
    pub n: usize,
    pub env: String,
}

/// Runs the cascade in every strategy combination over labeled frames.
/// A frame where any combination fails is excluded; the second return value
/// counts those exclusions.
pub fn evaluate_frames(
    models: &TrainedModels,
    samples: &[Sample],
) -> Result<(Vec<EvalRecord>, usize)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation samples"));
    }
    let mut records = Vec::with_capacity(samples.len());
    let mut failures = 0usize;
    for sample in samples {
        match evaluate_one(models, sample) {
            Ok(record) => records.push(record),
            Err(_) => failures += 1,
        }
    }
    Ok((records, failures))
}

fn evaluate_one(models: &TrainedModels, sample: &Sample) -> Result<EvalRecord> {
    let frame = sample.to_labeled();
    let gt_box = frame.hand_box;
    let gt_tip = frame.fingertip;
    let mut errors = [[0.0f64; 2]; 3];
    let mut iou_by_strategy = [0.0f64; 3];
    for (row, &hand) in CROSS_HAND_ORDER.iter().enumerate() {
        for (col, &finger) in CROSS_FINGER_ORDER.iter().enumerate() {
            let gt = (hand == HandStrategy::Gt).then_some(&gt_box);
            let detection = run_cascade(models, &frame.image, hand, finger, gt)?;
            errors[row][col] = detection.fingertip.distance(gt_tip);
            if col == 0 && hand != HandStrategy::Gt {
                iou_by_strategy[row] = iou(&detection.hand_box, &gt_box);
            }
        }
    }
    let redetect =
        run_cascade(models, &frame.image, HandStrategy::Redetect, FingerStrategy::Mfd, None)?;
    let (w, h) = (frame.image.width() as f64, frame.image.height() as f64);
    let center = gt_box.center();
    Ok(EvalRecord {
        frame: sample.name.clone(),
        iou_rhd: iou_by_strategy[0],
        iou_redetect: iou(&redetect.hand_box, &gt_box),
        iou_ahd: iou_by_strategy[1],
        errors,
        gt_center_rel: (center.x / w, center.y / h),
    })
}

/// Mean fingertip error per combination from per-frame records.
pub fn cross_table(records: &[EvalRecord], failures: usize) -> Result<CrossTable> {
    if records.is_empty() {
        return Err(Error::EmptyInput("evaluation records"));
    }
    let n = records.len() as f64;
    let mut mean_error_px = [[0.0f64; 2]; 3];
    for record in records {
        for row in 0..3 {
            for col in 0..2 {
                mean_error_px[row][col] += record.errors[row][col];
            }
        }
    }
    for row in &mut mean_error_px {
        for cell in row {
            *cell /= n;
        }
    }
    Ok(CrossTable { mean_error_px, frames: records.len(), failures })
}

/// Runs the full six-way comparison over labeled frames.
pub fn cross_comparison(models: &TrainedModels, samples: &[Sample]) -> Result<CrossTable> {
    let (records, failures) = evaluate_frames(models, samples)?;
    cross_table(&records, failures)
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::EmptyInput("thresholds"));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) || thresholds.iter().any(|t| !t.is_finite()) {
        return Err(Error::Config("thresholds must be finite and strictly ascending".into()));
    }
    Ok(())
}

/// Fraction of IoU values at or above each threshold. Nonincreasing in the
/// threshold by construction.
pub fn overlap_curve(ious: &[f64], thresholds: &[f64]) -> Result<EvalCurve> {
    if ious.is_empty() {
        return Err(Error::EmptyInput("iou values"));
    }
    check_thresholds(thresholds)?;
    if ious.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Config("iou values must lie in [0, 1]".into()));
    }
    let n = ious.len() as f64;
    let detection_rates = thresholds
        .iter()
        .map(|&tau| ious.iter().filter(|&&v| v >= tau).count() as f64 / n)
        .collect();
    Ok(EvalCurve { thresholds: thresholds.to_vec(), detection_rates })
}

/// Fraction of errors at or below each threshold. Nondecreasing in the
/// threshold by construction.
pub fn error_curve(errors: &[f64], thresholds: &[f64]) -> Result<EvalCurve> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("error values"));
    }
    check_thresholds(thresholds)?;
    if errors.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config("errors must be finite and >= 0".into()));
    }
    let n = errors.len() as f64;
    let detection_rates = thresholds
        .iter()
        .map(|&tau| errors.iter().filter(|&&v| v <= tau).count() as f64 / n)
        .collect();
    Ok(EvalCurve { thresholds: thresholds.to_vec(), detection_rates })
}

/// Partitions records by whether the ground-truth hand center falls inside
/// `focus_zone` (fractions of the image dimensions) and reports mean hand
/// IoU per strategy per partition.
pub fn zone_metrics(records: &[EvalRecord], focus_zone: &BBox) -> ZoneMetrics {
    let mut partitions: [Vec<&EvalRecord>; 2] = [Vec::new(), Vec::new()];
    for record in records {
        let p = Point2::new(record.gt_center_rel.0, record.gt_center_rel.1);
        let inside = focus_zone.contains(p);
        partitions[usize::from(!inside)].push(record);
    }
    let stats = |part: &[&EvalRecord]| {
        if part.is_empty() {
            return None;
        }
        let n = part.len() as f64;
        Some(ZoneStats {
            frames: part.len(),
            mean_iou_rhd: part.iter().map(|r| r.iou_rhd).sum::<f64>() / n,
            mean_iou_redetect: part.iter().map(|r| r.iou_redetect).sum::<f64>() / n,
            mean_iou_ahd: part.iter().map(|r| r.iou_ahd).sum::<f64>() / n,
        })
    };
    ZoneMetrics { focus: stats(&partitions[0]), surrounding: stats(&partitions[1]) }
}

/// Times the cascade over the sample set, cycling frames. `repetitions`
/// timed runs follow `warmup` untimed ones; the report summarizes the
/// per-stage decomposition from the cascade's own stage clocks.
pub fn benchmark_latency(
    models: &TrainedModels,
    samples: &[Sample],
    hand_strategy: HandStrategy,
    finger_strategy: FingerStrategy,
    repetitions: usize,
    warmup: usize,
) -> Result<TimingReport> {
    if repetitions < 30 {
        return Err(Error::Config(format!("repetitions >= 30 required, got {repetitions}")));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("benchmark samples"));
    }
    let frames: Vec<_> = samples.iter().map(|s| s.to_labeled()).collect();
    let mut hand = Vec::with_capacity(repetitions);
    let mut finger = Vec::with_capacity(repetitions);
    let mut processing = Vec::with_capacity(repetitions);
    let mut total = Vec::with_capacity(repetitions);
    for i in 0..warmup + repetitions {
        let frame = &frames[i % frames.len()];
        let gt = (hand_strategy == HandStrategy::Gt).then_some(&frame.hand_box);
        let detection = run_cascade(models, &frame.image, hand_strategy, finger_strategy, gt)?;
        if i >= warmup {
            hand.push(detection.timings.hand_ms);
            finger.push(detection.timings.finger_ms);
            processing.push(detection.timings.processing_ms);
            total.push(detection.timings.total_ms);
        }
    }
    let env = format!(
        "{}-{}, single-threaded, {} build",
        std::env::consts::ARCH,
        std::env::consts::OS,
        if cfg!(debug_assertions) { "debug" } else { "release" }
    );
    Ok(TimingReport {
        hand: summarize(&hand),
        finger: summarize(&finger),
        processing: summarize(&processing),
        total_ms: mean(&total),
        n: repetitions,
        env,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn summarize(values: &[f64]) -> StageSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let index = ((sorted.len() as f64 * 0.95).ceil() as usize).clamp(1, sorted.len()) - 1;
    StageSummary { mean_ms: mean(values), p95_ms: sorted[index] }
}

/// Shortest decimal form of `x` with at most `digits` significant digits.
/// Trailing zeros after the decimal point are dropped, so 0.5 prints "0.5".
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

const CURVE_HEADER: &str = "threshold,detection_rate";
const CROSS_HEADER: &str = "hand_strategy,finger_strategy,mean_error_px,frames";
const ZONE_HEADER: &str = "zone,frames,mean_iou_rhd,mean_iou_redetect,mean_iou_ahd";
const LOSS_HEADER: &str = "epoch,loss";
/// Printed precision of every CSV value.
const CSV_DIGITS: usize = 6;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Corrupt {
        offset: line as u64,
        message: format!("{}: line {line}: {}", path.display(), message.into()),
    }
}

/// Writes a threshold curve as `threshold,detection_rate` rows.
pub fn write_curve_csv(curve: &EvalCurve, path: &Path) -> Result<()> {
    if curve.thresholds.is_empty() {
        return Err(Error::EmptyInput("curve"));
    }
    if curve.thresholds.len() != curve.detection_rates.len() {
        return Err(Error::Config("curve thresholds and rates differ in length".into()));
    }
    let mut text = String::from(CURVE_HEADER);
    text.push('\n');
    for (t, r) in curve.thresholds.iter().zip(&curve.detection_rates) {
        text.push_str(&format_sig(*t, CSV_DIGITS));
        text.push(',');
        text.push_str(&format_sig(*r, CSV_DIGITS));
        text.push('\n');
    }
    write_text(path, &text)
}

/// Reads a curve CSV back; values carry the file's printed precision.
pub fn read_curve_csv(path: &Path) -> Result<EvalCurve> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CURVE_HEADER => {}
        _ => return Err(csv_error(path, 1, format!("expected header {CURVE_HEADER:?}"))),
    }
    let mut thresholds = Vec::new();
    let mut detection_rates = Vec::new();
    for (index, line) in lines {
        let (t, r) = line
            .split_once(',')
            .ok_or_else(|| csv_error(path, index + 1, "expected two comma-separated values"))?;
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| csv_error(path, index + 1, format!("{s:?}: {e}")))
        };
        thresholds.push(parse(t)?);
        detection_rates.push(parse(r)?);
    }
    if thresholds.is_empty() {
        return Err(csv_error(path, 1, "curve has no rows"));
    }
    Ok(EvalCurve { thresholds, detection_rates })
}

/// Writes the cross table, rows in `CROSS_HAND_ORDER` x `CROSS_FINGER_ORDER`.
pub fn write_cross_table_csv(table: &CrossTable, path: &Path) -> Result<()> {
    if table.frames == 0 {
        return Err(Error::EmptyInput("cross table"));
    }
    let mut text = String::from(CROSS_HEADER);
    text.push('\n');
    for (row, hand) in CROSS_HAND_ORDER.iter().enumerate() {
        for (col, finger) in CROSS_FINGER_ORDER.iter().enumerate() {
            text.push_str(&format!(
                "{},{},{},{}\n",
                hand,
                finger,
                format_sig(table.mean_error_px[row][col], CSV_DIGITS),
                table.frames
            ));
        }
    }
    write_text(path, &text)
}

/// Reads a cross table CSV back. The format does not carry the failure
/// count, so `failures` is zero in the result.
pub fn read_cross_table_csv(path: &Path) -> Result<CrossTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CROSS_HEADER => {}
        _ => return Err(csv_error(path, 1, format!("expected header {CROSS_HEADER:?}"))),
    }
    let mut mean_error_px = [[f64::NAN; 2]; 3];
    let mut frames = 0usize;
    for (index, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(csv_error(path, index + 1, "expected four comma-separated values"));
        }
        let hand: HandStrategy =
            fields[0].parse().map_err(|e| csv_error(path, index + 1, format!("{e}")))?;
        let finger: FingerStrategy =
            fields[1].parse().map_err(|e| csv_error(path, index + 1, format!("{e}")))?;
        let row = CROSS_HAND_ORDER
            .iter()
            .position(|&h| h == hand)
            .ok_or_else(|| csv_error(path, index + 1, "strategy outside the table rows"))?;
        let col = CROSS_FINGER_ORDER.iter().position(|&f| f == finger).expect("two columns");
        mean_error_px[row][col] = fields[2]
            .parse()
            .map_err(|e| csv_error(path, index + 1, format!("{:?}: {e}", fields[2])))?;
        frames = fields[3]
            .parse()
            .map_err(|e| csv_error(path, index + 1, format!("{:?}: {e}", fields[3])))?;
    }
    if mean_error_px.iter().flatten().any(|v| v.is_nan()) {
        return Err(csv_error(path, 1, "table is missing strategy combinations"));
    }
    Ok(CrossTable { mean_error_px, frames, failures: 0 })
}

/// Writes zone metrics; empty partitions are omitted rather than zeroed.
pub fn write_zone_metrics_csv(metrics: &ZoneMetrics, path: &Path) -> Result<()> {
    if metrics.focus.is_none() && metrics.surrounding.is_none() {
        return Err(Error::EmptyInput("zone metrics"));
    }
    let mut text = String::from(ZONE_HEADER);
    text.push('\n');
    for (zone, stats) in [("focus", metrics.focus), ("surrounding", metrics.surrounding)] {
        if let Some(s) = stats {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                zone,
                s.frames,
                format_sig(s.mean_iou_rhd, CSV_DIGITS),
                format_sig(s.mean_iou_redetect, CSV_DIGITS),
                format_sig(s.mean_iou_ahd, CSV_DIGITS)
            ));
        }
    }
    write_text(path, &text)
}

/// Writes a per-epoch loss trace, one row per epoch starting at 1.
pub fn write_loss_trace_csv(trace: &[f64], path: &Path) -> Result<()> {
    let mut text = String::from(LOSS_HEADER);
    text.push('\n');
    for (epoch, loss) in trace.iter().enumerate() {
        text.push_str(&format!("{},{}\n", epoch + 1, format_sig(*loss, CSV_DIGITS)));
    }
    write_text(path, &text)
}

/// Writes the timing report as pretty JSON.
pub fn write_timing_report_json(report: &TimingReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Json { context: "timing report".into(), source: e })?;
    write_text(path, &json)
}

/// Reads a timing report back from JSON.
pub fn read_timing_report_json(path: &Path) -> Result<TimingReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Json { context: path.display().to_string(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn overlap_rate_counts_inclusively() {
        let curve = overlap_curve(&[0.6, 0.4], &[0.5]).unwrap();
        assert_eq!(curve.detection_rates, vec![0.5]);
        // The threshold itself counts as detected.
        let curve = overlap_curve(&[0.5, 0.4], &[0.5]).unwrap();
        assert_eq!(curve.detection_rates, vec![0.5]);
    }

    #[test]
    fn perfect_overlap_detects_at_every_threshold() {
        let curve = overlap_curve(&[1.0, 1.0, 1.0], &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        assert!(curve.detection_rates.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn error_rate_counts_inclusively_and_zero_threshold_rejects_positive_errors() {
        let curve = error_curve(&[10.0, 30.0], &[20.0]).unwrap();
        assert_eq!(curve.detection_rates, vec![0.5]);
        let curve = error_curve(&[10.0, 30.0], &[0.0]).unwrap();
        assert_eq!(curve.detection_rates, vec![0.0]);
    }

    #[test]
    fn curves_reject_empty_or_invalid_inputs() {
        assert!(matches!(overlap_curve(&[], &[0.5]), Err(Error::EmptyInput(_))));
        assert!(matches!(error_curve(&[], &[0.5]), Err(Error::EmptyInput(_))));
        assert!(matches!(overlap_curve(&[1.5], &[0.5]), Err(Error::Config(_))));
        assert!(matches!(error_curve(&[-1.0], &[0.5]), Err(Error::Config(_))));
        assert!(matches!(overlap_curve(&[0.5], &[0.5, 0.25]), Err(Error::Config(_))));
    }

    #[test]
    fn overlap_rates_never_increase_and_error_rates_never_decrease() {
        let values = [0.1, 0.33, 0.5, 0.5, 0.72, 0.9];
        let taus = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let over = overlap_curve(&values, &taus).unwrap();
        assert!(over.detection_rates.windows(2).all(|w| w[0] >= w[1]));
        let err = error_curve(&[0.4, 3.0, 7.7, 12.0], &[0.0, 1.0, 5.0, 10.0, 20.0]).unwrap();
        assert!(err.detection_rates.windows(2).all(|w| w[0] <= w[1]));
    }

    fn record(name: &str, center: (f64, f64), ious: [f64; 3], base_err: f64) -> EvalRecord {
        EvalRecord {
            frame: name.into(),
            iou_rhd: ious[0],
            iou_redetect: ious[1],
            iou_ahd: ious[2],
            errors: [
                [base_err + 2.0, base_err + 3.0],
                [base_err + 1.0, base_err + 2.0],
                [base_err, base_err + 1.0],
            ],
            gt_center_rel: center,
        }
    }

    #[test]
    fn cross_table_means_match_a_brute_force_recount() {
        let records =
            vec![record("a", (0.5, 0.5), [0.5, 0.6, 0.7], 4.0), record("b", (0.2, 0.2), [0.3, 0.4, 0.5], 8.0)];
        let table = cross_table(&records, 1).unwrap();
        assert_eq!(table.frames, 2);
        assert_eq!(table.failures, 1);
        // Cell (GT, MFD) holds the two base errors averaged.
        assert!((table.mean_error_px[2][0] - 6.0).abs() < 1e-12);
        assert!((table.mean_error_px[0][1] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn whole_image_zone_leaves_the_surrounding_partition_absent() {
        let records = vec![record("a", (0.5, 0.5), [0.5, 0.6, 0.7], 4.0)];
        let metrics = zone_metrics(&records, &BBox::new(0.0, 0.0, 1.0, 1.0));
        assert!(metrics.surrounding.is_none());
        let focus = metrics.focus.unwrap();
        assert_eq!(focus.frames, 1);
        assert!((focus.mean_iou_ahd - 0.7).abs() < 1e-12);
    }

    #[test]
    fn centered_hands_all_land_in_a_central_zone() {
        let records: Vec<EvalRecord> =
            (0..5).map(|i| record(&format!("f{i}"), (0.5, 0.5), [0.5, 0.5, 0.5], 1.0)).collect();
        let metrics = zone_metrics(&records, &BBox::new(0.25, 0.25, 0.75, 0.75));
        assert_eq!(metrics.focus.unwrap().frames, 5);
        assert!(metrics.surrounding.is_none());
    }

    #[test]
    fn significant_digit_formatting_trims_trailing_zeros() {
        assert_eq!(format_sig(0.5, 6), "0.5");
        assert_eq!(format_sig(0.94, 6), "0.94");
        assert_eq!(format_sig(15.712345, 6), "15.7123");
        assert_eq!(format_sig(0.0, 6), "0");
        assert_eq!(format_sig(100.0, 6), "100");
        assert_eq!(format_sig(1.0 / 3.0, 6), "0.333333");
    }

    #[test]
    fn curve_csv_round_trips_at_printed_precision() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let curve = EvalCurve {
            thresholds: vec![0.0, 0.5, 1.0],
            detection_rates: vec![1.0, 0.94, 1.0 / 3.0],
        };
        write_curve_csv(&curve, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("threshold,detection_rate\n"));
        assert!(text.contains("0.5,0.94\n"));
        let parsed = read_curve_csv(&path).unwrap();
        // Re-emitting the parsed curve reproduces the file byte for byte.
        let path2 = dir.path().join("curve2.csv");
        write_curve_csv(&parsed, &path2).unwrap();
        assert_eq!(text, fs::read_to_string(&path2).unwrap());
    }

    #[test]
    fn empty_artifacts_are_rejected_at_write_time() {
        let dir = tempdir().unwrap();
        let empty_curve = EvalCurve { thresholds: vec![], detection_rates: vec![] };
        assert!(matches!(
            write_curve_csv(&empty_curve, &dir.path().join("c.csv")),
            Err(Error::EmptyInput(_))
        ));
        let empty_table = CrossTable { mean_error_px: [[0.0; 2]; 3], frames: 0, failures: 0 };
        assert!(matches!(
            write_cross_table_csv(&empty_table, &dir.path().join("t.csv")),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn cross_table_csv_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let table = CrossTable {
            mean_error_px: [[18.93, 20.34], [15.71, 16.93], [10.71, 12.5]],
            frames: 500,
            failures: 0,
        };
        write_cross_table_csv(&table, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("hand_strategy,finger_strategy,mean_error_px,frames\n"));
        assert!(text.contains("ahd,mfd,15.71,500\n"));
        let parsed = read_cross_table_csv(&path).unwrap();
        assert_eq!(parsed.mean_error_px, table.mean_error_px);
        assert_eq!(parsed.frames, 500);
    }

    #[test]
    fn loss_trace_csv_has_one_row_per_epoch() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_trace_csv(&[0.5, 0.25, 0.125], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "epoch,loss");
        assert_eq!(lines[1], "1,0.5");
        assert_eq!(lines[3], "3,0.125");
    }

    #[test]
    fn timing_report_round_trips_through_json() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("timing.json");
        let report = TimingReport {
            hand: StageSummary { mean_ms: 5.76, p95_ms: 7.0 },
            finger: StageSummary { mean_ms: 0.68, p95_ms: 0.9 },
            processing: StageSummary { mean_ms: 3.2, p95_ms: 4.0 },
            total_ms: 9.65,
            n: 200,
            env: "test".into(),
        };
        write_timing_report_json(&report, &path).unwrap();
        assert_eq!(read_timing_report_json(&path).unwrap(), report);
    }

    #[test]
    fn p95_summary_picks_the_tail_value() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let summary = summarize(&values);
        assert_eq!(summary.p95_ms, 95.0);
        assert!((summary.mean_ms - 50.5).abs() < 1e-12);
    }
}
