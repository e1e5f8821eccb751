//! Scoring of localization runs: accuracy within a radius, gated accuracy
//! and retention, perturbation sweeps and paired pipeline comparison.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotile::WorldCoord;
use crate::index::{ratio_serde, LocalizationResult};
use crate::simulator::{PerturbationSpec, MAX_ALTITUDE_DROP, MAX_ROTATION};

pub const DEFAULT_RADIUS: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub truth: WorldCoord,
    pub prediction: Option<WorldCoord>,
    /// planar distance in meters
    pub error_m: Option<f64>,
    #[serde(with = "ratio_serde")]
    pub lowe_ratio: f64,
    pub accepted: bool,
    pub correct: bool,
    /// Pipeline failure for this frame, if any.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub radius: f64,
    pub gated: bool,
    pub n_frames: usize,
    pub n_accepted: usize,
    pub n_correct: usize,
    /// correct / accepted when gated, correct / frames otherwise; 0 when
    /// the denominator is 0
    pub accuracy: f64,
    pub retention: f64,
    pub frames: Vec<FrameRecord>,
}

/// Per-frame outcome: a localization or the reason it failed.
pub type FrameOutcome = std::result::Result<LocalizationResult, String>;

pub fn accuracy_at_radius(results: &[LocalizationResult], truth: &[WorldCoord], radius: f64, gated: bool) -> Result<EvalReport> {
    let outcomes: Vec<FrameOutcome> = results.iter().copied().map(Ok).collect();
    report_from_outcomes(&outcomes, truth, radius, gated)
}

/// Like [`accuracy_at_radius`] but frames may carry failures, which count
/// as rejected and incorrect.
pub fn report_from_outcomes(outcomes: &[FrameOutcome], truth: &[WorldCoord], radius: f64, gated: bool) -> Result<EvalReport> {
    if outcomes.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: outcomes.len(),
            right: truth.len(),
        });
    }
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no frames to evaluate".into()));
    }
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("radius {radius} must be non-negative")));
    }
    let frames: Vec<FrameRecord> = outcomes
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(frame, (o, &t))| match o {
            Ok(r) => {
                let err = r.predicted.distance(&t);
                let accepted = !gated || r.accepted;
                FrameRecord {
                    frame,
                    truth: t,
                    prediction: Some(r.predicted),
                    error_m: Some(err),
                    lowe_ratio: r.lowe_ratio,
                    accepted,
                    correct: accepted && err <= radius,
                    failure: None,
                }
            }
            Err(msg) => FrameRecord {
                frame,
                truth: t,
                prediction: None,
                error_m: None,
                lowe_ratio: f64::NAN,
                accepted: false,
                correct: false,
                failure: Some(msg.clone()),
            },
        })
        .collect();
    let n_frames = frames.len();
    let n_accepted = frames.iter().filter(|f| f.accepted).count();
    let n_correct = frames.iter().filter(|f| f.correct).count();
    let denom = if gated { n_accepted } else { n_frames };
    Ok(EvalReport {
        radius,
        gated,
        n_frames,
        n_accepted,
        n_correct,
        accuracy: if denom == 0 { 0.0 } else { n_correct as f64 / denom as f64 },
        retention: n_accepted as f64 / n_frames as f64,
        frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// degrees of extra view rotation
    Rotation,
    /// meters of altitude drop
    Altitude,
}

impl SweepAxis {
    pub fn range(self) -> (f64, f64) {
        match self {
            SweepAxis::Rotation => (0.0, MAX_ROTATION),
            SweepAxis::Altitude => (0.0, MAX_ALTITUDE_DROP),
        }
    }

    pub fn default_step(self) -> f64 {
        match self {
            SweepAxis::Rotation => 1.0,
            SweepAxis::Altitude => 20.0,
        }
    }

    pub fn perturbation(self, value: f64) -> PerturbationSpec {
        match self {
            SweepAxis::Rotation => PerturbationSpec {
                rotation: value,
                ..Default::default()
            },
            SweepAxis::Altitude => PerturbationSpec {
                altitude_drop: value,
                ..Default::default()
            },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Rotation => "rotation (deg)",
            SweepAxis::Altitude => "altitude drop (m)",
        }
    }

    /// Checks that values are strictly increasing and inside the axis range.
    pub fn check_values(self, values: &[f64]) -> Result<()> {
        let (lo, hi) = self.range();
        if values.is_empty() {
            return Err(Error::InvalidArgument("sweep needs at least one value".into()));
        }
        if let Some(v) = values.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::InvalidArgument(format!("sweep value {v} outside [{lo}, {hi}]")));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sweep values must be strictly increasing".into()));
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(SweepAxis::Rotation),
            "altitude" => Ok(SweepAxis::Altitude),
            _ => Err(Error::InvalidArgument(format!("unknown sweep axis {s:?}"))),
        }
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_sweep_values(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("bad sweep value {s:?}")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(Error::InvalidArgument(format!("bad sweep range {text:?}")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| start + i as f64 * step).collect());
    }
    if parts.len() != 1 {
        return Err(Error::InvalidArgument(format!("bad sweep range {text:?}")));
    }
    text.split(',').map(num).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.report.accuracy).collect()
    }
}

/// Evaluates every axis value in order. `evaluate` renders and localizes
/// the frames under the given perturbation; per-frame failures belong in
/// its report.
pub fn run_sweep<F>(axis: SweepAxis, values: &[f64], mut evaluate: F) -> Result<SweepResult>
where
    F: FnMut(&PerturbationSpec) -> Result<EvalReport>,
{
    axis.check_values(values)?;
    let points = values
        .iter()
        .map(|&value| {
            Ok(SweepPoint {
                value,
                report: evaluate(&axis.perturbation(value))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { axis, points })
}

/// Paired comparison of two runs over the same frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// accuracy_a − accuracy_b
    pub difference: f64,
    pub both_correct: usize,
    pub only_a: usize,
    pub only_b: usize,
    pub neither: usize,
}

pub fn compare_pipelines(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    if a.n_frames != b.n_frames {
        return Err(Error::FrameMismatch(format!("{} vs {} frames", a.n_frames, b.n_frames)));
    }
    if let Some(f) = a.frames.iter().zip(&b.frames).find(|(x, y)| x.truth != y.truth) {
        return Err(Error::FrameMismatch(format!("ground truth differs at frame {}", f.0.frame)));
    }
    let mut c = Comparison {
        accuracy_a: a.accuracy,
        accuracy_b: b.accuracy,
        difference: a.accuracy - b.accuracy,
        both_correct: 0,
        only_a: 0,
        only_b: 0,
        neither: 0,
    };
    for (x, y) in a.frames.iter().zip(&b.frames) {
        match (x.correct, y.correct) {
            (true, true) => c.both_correct += 1,
            (true, false) => c.only_a += 1,
            (false, true) => c.only_b += 1,
            (false, false) => c.neither += 1,
        }
    }
    Ok(c)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct CsvRow {
    frame: usize,
    truth_easting: f64,
    truth_northing: f64,
    pred_easting: Option<f64>,
    pred_northing: Option<f64>,
    error_m: Option<f64>,
    lowe_ratio: f64,
    accepted: bool,
    correct: bool,
    failure: Option<String>,
}

pub fn frames_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for f in &report.frames {
        w.serialize(CsvRow {
            frame: f.frame,
            truth_easting: f.truth.easting,
            truth_northing: f.truth.northing,
            pred_easting: f.prediction.map(|p| p.easting),
            pred_northing: f.prediction.map(|p| p.northing),
            error_m: f.error_m,
            lowe_ratio: f.lowe_ratio,
            accepted: f.accepted,
            correct: f.correct,
            failure: f.failure.clone(),
        })
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `<stem>.json` and `<stem>.csv` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, stem: &str, report: &EvalReport) -> Result<()> {
    let dir = dir.as_ref();
    write_json(dir.join(format!("{stem}.json")), report)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, frames_csv(report)?).map_err(|e| Error::io(&csv_path, e))
}

const SVG_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line plot of accuracy against the sweep axis, one line per series.
pub fn sweep_svg(series: &[(&str, &SweepResult)]) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let axis = series.first().map_or(SweepAxis::Rotation, |s| s.1.axis);
    let (lo, hi) = series
        .iter()
        .flat_map(|s| s.1.points.iter().map(|p| p.value))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |v: f64| m + (v - lo) / span * (w - 2.0 * m);
    let py = |a: f64| h - m - a * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {} V{} H{}" fill="none" stroke="black"/>"#,
        m,
        h - m,
        w - m
    );
    for t in 0..=4 {
        let a = t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#, m - 4.0, py(a) + 4.0, a);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{lo}</text>"#, px(lo) + 4.0, h - m + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{hi}</text>"#, px(hi) + 4.0, h - m + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, axis.label());
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">accuracy</text>"#, h / 2.0, h / 2.0);
    for (k, (name, sweep)) in series.iter().enumerate() {
        let color = SVG_COLORS[k % SVG_COLORS.len()];
        let pts: Vec<String> = sweep
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.value), py(p.report.accuracy)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            w - m - 80.0,
            m + 14.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}
