use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::reference::{lookup, reference_wer, Metric};
use super::BenchReport;
use crate::archdsl::{all_named_configs, analyze_delay};
use crate::error::{Error, Result};
use crate::runtime::perceived_delay;

pub const CSV_HEADER: [&str; 11] = [
    "name",
    "component",
    "chunk_ms",
    "mean_ms",
    "p95_ms",
    "rtf",
    "size_bytes",
    "lookahead_frames",
    "delay_ms",
    "perceived_delay_ms",
    "reference_wer",
];

/// Algorithmic delay of one encoder layout, optionally with the delay a
/// listener perceives at a measured real-time factor.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayRow {
    pub name: String,
    pub lookahead_frames: Option<usize>,
    pub delay_ms: f64,
    pub perceived_delay_ms: Option<f64>,
    pub reference_wer: Option<f64>,
}

/// Rows for the full-context baseline and every named layout at `hop_ms`.
/// `rtf`, when given, fills in the perceived delay.
pub fn delay_rows(hop_ms: f64, rtf: Option<f64>) -> Result<Vec<DelayRow>> {
    let perceived = |delay: f64| rtf.map(|r| perceived_delay(delay, r)).transpose();
    let base_delay = lookup("Base", Metric::DelayMs)
        .expect("baseline delay is tabulated")
        .value;
    let mut rows = vec![DelayRow {
        name: "Base".into(),
        lookahead_frames: None,
        delay_ms: base_delay,
        perceived_delay_ms: perceived(base_delay)?,
        reference_wer: reference_wer("Base"),
    }];
    for spec in all_named_configs() {
        let report = analyze_delay(&spec, hop_ms)?;
        let name = spec.name.clone().expect("named configs carry a label");
        rows.push(DelayRow {
            reference_wer: reference_wer(&name),
            name,
            lookahead_frames: Some(report.lookahead_frames),
            delay_ms: report.delay_ms,
            perceived_delay_ms: perceived(report.delay_ms)?,
        });
    }
    Ok(rows)
}

/// Four decimals, trailing zeros dropped.
fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// One row per benchmark, then one per delay row; empty cells for fields a
/// row does not have.
pub fn write_csv<W: Write>(out: W, reports: &[BenchReport], delays: &[DelayRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            r.component.to_string(),
            num(r.chunk_ms),
            num(r.mean_ms),
            num(r.p95_ms),
            num(r.rtf),
            r.model_size_bytes.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    for d in delays {
        w.write_record([
            d.name.clone(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            d.lookahead_frames.map(|f| f.to_string()).unwrap_or_default(),
            num(d.delay_ms),
            d.perceived_delay_ms.map(num).unwrap_or_default(),
            d.reference_wer.map(num).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

/// Delay axis is `log10(1 + ms)` so 0 ms and 10 s fit on one plot.
fn delay_axis(ms: f64) -> f64 {
    (1.0 + ms).log10()
}

/// Scatter of algorithmic delay against the tabulated WER of every row
/// that has one; one `<circle>` per point.
pub fn write_svg<W: Write>(mut out: W, delays: &[DelayRow]) -> Result<()> {
    let points: Vec<(&DelayRow, f64)> = delays
        .iter()
        .filter_map(|d| d.reference_wer.map(|w| (d, w)))
        .collect();
    let x_max = points
        .iter()
        .map(|(d, _)| delay_axis(d.delay_ms))
        .fold(1.0f64, f64::max)
        .ceil();
    let (w_lo, w_hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, w)| (lo.min(*w), hi.max(*w)));
    let (w_lo, w_hi) = if points.is_empty() {
        (0.0, 1.0)
    } else {
        ((w_lo - 1.0).floor(), (w_hi + 1.0).ceil())
    };
    let px = |ms: f64| MARGIN + delay_axis(ms) / x_max * (WIDTH - 2.0 * MARGIN);
    let py = |wer: f64| HEIGHT - MARGIN - (wer - w_lo) / (w_hi - w_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for decade in 0..=x_max as i32 {
        let ms = if decade == 0 { 0.0 } else { 10f64.powi(decade) };
        let x = px(ms);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{ms}</text>"#, y0 + 20.0);
    }
    let mut wer = w_lo;
    while wer <= w_hi {
        let y = py(wer);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{wer}</text>"#, x0 - 8.0, y + 4.0);
        wer += 1.0;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">algorithmic delay [ms], log scale</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">WER [%]</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (d, wer) in &points {
        let (x, y) = (px(d.delay_ms), py(*wer));
        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="steelblue"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{} {wer}</text>"#,
            x + 6.0,
            y - 6.0,
            d.name
        );
    }
    s.push_str("</svg>\n");
    out.write_all(s.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!("unknown report format {other:?} (expected csv or svg)"))),
        }
    }
}

pub fn write_report(
    path: impl AsRef<Path>,
    format: ReportFormat,
    reports: &[BenchReport],
    delays: &[DelayRow],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        ReportFormat::Csv => write_csv(&mut out, reports, delays)?,
        ReportFormat::Svg => write_svg(&mut out, delays)?,
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Component;

    fn csv_rows(reports: &[BenchReport], delays: &[DelayRow]) -> Vec<csv::StringRecord> {
        let mut buf = Vec::new();
        write_csv(&mut buf, reports, delays).unwrap();
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(buf.as_slice());
        r.records().map(|x| x.unwrap()).collect()
    }

    #[test]
    fn numbers_are_compact() {
        assert_eq!(num(2.5659904000000004), "2.566");
        assert_eq!(num(990.0), "990");
        assert_eq!(num(15.3), "15.3");
        assert_eq!(num(-0.00001), "0");
    }

    #[test]
    fn header_is_always_present() {
        let rows = csv_rows(&[], &[]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].iter().collect::<Vec<_>>(), CSV_HEADER);
    }

    #[test]
    fn missing_fields_are_empty_cells() {
        let r = BenchReport::from_samples("enc", Component::Encoder, 80.0, &[20.0], 0, 100).unwrap();
        let rows = csv_rows(&[r], &delay_rows(10.0, None).unwrap());
        assert_eq!(&rows[1][0], "enc");
        assert_eq!(&rows[1][5], "4");
        assert_eq!(&rows[1][7], "");
        assert_eq!(&rows[1][10], "");
        let ls1 = rows.iter().find(|r| &r[0] == "LS1").unwrap();
        assert_eq!(&ls1[7], "11");
        assert_eq!(&ls1[9], "");
        assert_eq!(&ls1[10], "");
    }

    #[test]
    fn lsa_ls2_row_carries_its_wer() {
        let rows = csv_rows(&[], &delay_rows(10.0, Some(2.5)).unwrap());
        let row = rows.iter().find(|r| &r[0] == "LSA_LS2").unwrap();
        assert_eq!(&row[7], "99");
        assert_eq!(&row[8], "990");
        assert_eq!(&row[9], "396");
        assert_eq!(&row[10], "15.3");
    }

    #[test]
    fn svg_has_one_marker_per_annotated_row() {
        let delays = delay_rows(10.0, None).unwrap();
        let annotated = delays.iter().filter(|d| d.reference_wer.is_some()).count();
        assert_eq!(annotated, 5);
        let mut buf = Vec::new();
        write_svg(&mut buf, &delays).unwrap();
        let svg = String::from_utf8(buf).unwrap();
        assert_eq!(svg.matches("<circle").count(), annotated);
        for wer in ["19.1", "17.6", "16.4", "15.3", "14.7"] {
            assert!(svg.contains(&format!(" {wer}</text>")), "{wer}");
        }
        let mut again = Vec::new();
        write_svg(&mut again, &delays).unwrap();
        assert_eq!(svg.as_bytes(), again.as_slice());
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let delays = delay_rows(10.0, None).unwrap();
        for (f, name) in [(ReportFormat::Csv, "r.csv"), (ReportFormat::Svg, "r.svg")] {
            let path = dir.path().join(name);
            write_report(&path, f, &[], &delays).unwrap();
            assert!(std::fs::metadata(&path).unwrap().len() > 0);
        }
        assert_eq!("SVG".parse::<ReportFormat>().unwrap(), ReportFormat::Svg);
        assert!("png".parse::<ReportFormat>().is_err());
    }
}
