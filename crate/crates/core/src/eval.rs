//! Pearson correlation scoring and the per-TV report.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kalman::{kalman_smooth, KalmanParams};
use crate::tv::{TvTrajectory, N_TV, TV_NAMES};

/// Pearson product-moment correlation, clamped to `[-1, 1]`.
pub fn ppmc(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "correlating {} values with {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two samples".into()));
    }
    let n = estimate.len() as f64;
    let mx = estimate.iter().sum::<f64>() / n;
    let my = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in estimate.iter().zip(truth) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant sequence".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation per tract variable of a single estimate/truth pair.
pub fn ppmc_per_tv(estimate: &TvTrajectory, truth: &TvTrajectory) -> Result<[f64; N_TV]> {
    score_concatenated(&[(estimate.clone(), truth.clone())])
}

/// Concatenates every pair per tract variable (in the given order) and
/// returns one correlation per variable.
pub fn score_concatenated(pairs: &[(TvTrajectory, TvTrajectory)]) -> Result<[f64; N_TV]> {
    let mut out = [0.0; N_TV];
    for (k, o) in out.iter_mut().enumerate() {
        let mut est = Vec::new();
        let mut tru = Vec::new();
        for (e, t) in pairs {
            if e.n_frames() != t.n_frames() {
                return Err(Error::ShapeMismatch(format!(
                    "estimate has {} frames, truth {}",
                    e.n_frames(),
                    t.n_frames()
                )));
            }
            est.extend(e.channel(k));
            tru.extend(t.channel(k));
        }
        *o = ppmc(&est, &tru).map_err(|e| match e {
            Error::UndefinedCorrelation(m) => Error::UndefinedCorrelation(format!("{}: {m}", TV_NAMES[k])),
            other => other,
        })?;
    }
    Ok(out)
}

pub fn mean(values: &[f64; N_TV]) -> f64 {
    values.iter().sum::<f64>() / N_TV as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub utt_id: String,
    /// `None` where a channel is constant in the utterance.
    pub ppmc: [Option<f64>; N_TV],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Feature tag such as `cortical_980` or `mfcc`.
    pub feature: String,
    pub context: usize,
    pub model: String,
    pub ppmc: [f64; N_TV],
    pub average: f64,
    pub per_utterance: Vec<UtteranceScore>,
}

impl EvalReport {
    pub fn new(feature: &str, context: usize, model: &str, ppmc: [f64; N_TV]) -> Self {
        Self {
            feature: feature.to_string(),
            context,
            model: model.to_string(),
            average: mean(&ppmc),
            ppmc,
            per_utterance: Vec::new(),
        }
    }
}

pub const REPORT_HEADER: [&str; 9] = ["feature", "context", "LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD", "average"];

/// One row per report under the `feature,context,LA,...,average` header.
pub fn write_report_csv<W: Write>(reports: &[EvalReport], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wr.write_record(REPORT_HEADER)?;
    for r in reports {
        let mut row = vec![r.feature.clone(), r.context.to_string()];
        row.extend(r.ppmc.iter().map(|v| format!("{v:.6}")));
        row.push(format!("{:.6}", r.average));
        wr.write_record(&row)?;
    }
    wr.flush().map_err(|e| Error::io("<report>", e))
}

/// `utt_id,LA,...,TTCD` with empty cells for undefined correlations.
pub fn write_per_utterance_csv<W: Write>(report: &EvalReport, w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let mut header = vec!["utt_id"];
    header.extend(TV_NAMES);
    wr.write_record(&header)?;
    for u in &report.per_utterance {
        let mut row = vec![u.utt_id.clone()];
        row.extend(u.ppmc.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()));
        wr.write_record(&row)?;
    }
    wr.flush().map_err(|e| Error::io("<report>", e))
}

pub fn per_utterance_scores(ids: &[String], pairs: &[(TvTrajectory, TvTrajectory)]) -> Vec<UtteranceScore> {
    ids.iter()
        .zip(pairs)
        .map(|(id, (e, t))| UtteranceScore {
            utt_id: id.clone(),
            ppmc: std::array::from_fn(|k| ppmc(&e.channel(k), &t.channel(k)).ok()),
        })
        .collect()
}

/// Picks `(q, r)` (normalized units, scaled by `std`) maximizing the average
/// concatenated correlation of smoothed estimates. Ties keep the earlier grid
/// point.
pub fn tune_kalman(
    pairs: &[(TvTrajectory, TvTrajectory)],
    std: &[f64; N_TV],
    q_grid: &[f64],
    r_grid: &[f64],
) -> Result<(KalmanParams, f64)> {
    let mut best: Option<(KalmanParams, f64)> = None;
    for &q in q_grid {
        for &r in r_grid {
            let params = KalmanParams::normalized(q, r, std);
            let smoothed = pairs
                .iter()
                .map(|(e, t)| Ok((kalman_smooth(e, &params)?, t.clone())))
                .collect::<Result<Vec<_>>>()?;
            let score = mean(&score_concatenated(&smoothed)?);
            if best.as_ref().map_or(true, |(_, s)| score > *s) {
                best = Some((params, score));
            }
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty Kalman tuning grid".into()))
}

/// Six stacked line plots of estimate (solid) against truth (dashed).
pub fn render_svg(title: &str, estimate: &TvTrajectory, truth: &TvTrajectory) -> String {
    let (w, row_h, margin) = (800.0, 110.0, 40.0);
    let h = margin + row_h * N_TV as f64;
    let n = estimate.n_frames().min(truth.n_frames());
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="10" y="20">{}</text>"#, escape(title));
    for k in 0..N_TV {
        let top = margin + k as f64 * row_h;
        let (e, t) = (estimate.channel(k), truth.channel(k));
        let lo = e[..n].iter().chain(&t[..n]).cloned().fold(f64::INFINITY, f64::min);
        let hi = e[..n].iter().chain(&t[..n]).cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let path = |v: &[f64]| -> String {
            v[..n]
                .iter()
                .enumerate()
                .map(|(i, y)| {
                    let x = 60.0 + (w - 70.0) * i as f64 / (n.max(2) - 1) as f64;
                    let y = top + row_h - 15.0 - (row_h - 25.0) * (y - lo) / span;
                    format!("{x:.1},{y:.1}")
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(s, r#"<text x="10" y="{:.1}">{}</text>"#, top + row_h / 2.0, TV_NAMES[k]);
        let _ = writeln!(
            s,
            r##"<polyline fill="none" stroke="#888" stroke-dasharray="4 3" points="{}"/>"##,
            path(&t)
        );
        let _ = writeln!(s, r##"<polyline fill="none" stroke="#c33" points="{}"/>"##, path(&e));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn save_svg(path: &Path, title: &str, estimate: &TvTrajectory, truth: &TvTrajectory) -> Result<()> {
    std::fs::write(path, render_svg(title, estimate, truth)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        // means 2.5 and 2.75; Sxy = 6.5, Sxx = 5, Syy = 8.75
        let r = ppmc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).unwrap();
        assert!((r - 6.5 / (5.0f64 * 8.75).sqrt()).abs() < 1e-12);
        assert!((r - 0.982_707_629_6).abs() < 1e-9);
    }

    #[test]
    fn constant_sequence_is_an_error() {
        assert!(matches!(ppmc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(ppmc(&[1.0, 2.0], &[4.0, 4.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(ppmc(&[1.0], &[1.0]).is_err());
        assert!(ppmc(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let r = EvalReport::new("cortical_980", 7, "mlp", [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        assert!((r.average - 0.75).abs() < 1e-12);
        let mut buf = Vec::new();
        write_report_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "feature,context,LA,LP,TBCL,TBCD,TTCL,TTCD,average");
        assert_eq!(
            lines.next().unwrap(),
            "cortical_980,7,0.500000,0.600000,0.700000,0.800000,0.900000,1.000000,0.750000"
        );
    }

    #[test]
    fn svg_has_twelve_lines() {
        let t = TvTrajectory::new((0..60).map(|i| (i as f64).sin()).collect()).unwrap();
        let svg = render_svg("a<b", &t, &t);
        assert_eq!(svg.matches("<polyline").count(), 12);
        assert!(svg.contains("a&lt;b"));
    }
}
