//! Report emission: CSV summary, markdown tables, full JSON, SVG
//! degradation curves and a provenance manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, OcclusionTarget, ReportRow};
use crate::bevpipe::SensorMode;
use crate::error::{Error, Result};

pub const REPORT_FORMAT: &str = "bevbench-report/1";
pub const MANIFEST_FORMAT: &str = "bevbench-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Json, ReportFormat::Svg];
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["mode".to_string(), "occluded_sensor".into(), "severity".into(), "mAP".into(), "NDS".into()];
    if let Some(first) = rows.first() {
        header.extend(first.class_ap.iter().map(|(c, _)| format!("AP_{c}")));
    }
    let csv_err = |e: csv::Error| Error::invalid("csv report", e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut record = vec![
            r.sensor_mode.label().to_string(),
            r.occluded_sensor.label().to_string(),
            r.severity.to_string(),
            format!("{:.6}", r.map),
            format!("{:.6}", r.nds),
        ];
        record.extend(r.class_ap.iter().map(|(_, ap)| ap.map(|v| format!("{v:.6}")).unwrap_or_default()));
        w.write_record(&record).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv report", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn mode_name(mode: SensorMode) -> &'static str {
    match mode {
        SensorMode::Camera => "Camera",
        SensorMode::Lidar => "LiDAR",
        SensorMode::Fused => "Camera + LiDAR",
    }
}

/// Rows for `mode` occluded on `target`, in severity order.
fn series(rows: &[ReportRow], mode: SensorMode, target: OcclusionTarget) -> Vec<&ReportRow> {
    let mut s: Vec<&ReportRow> = rows
        .iter()
        .filter(|r| r.sensor_mode == mode && r.occluded_sensor == target)
        .collect();
    s.sort_by(|a, b| a.severity.total_cmp(&b.severity));
    s
}

fn modes_in(rows: &[ReportRow]) -> Vec<SensorMode> {
    let mut modes: Vec<SensorMode> = Vec::new();
    for r in rows {
        if !modes.contains(&r.sensor_mode) {
            modes.push(r.sensor_mode);
        }
    }
    modes
}

pub fn to_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let scenes = rows.first().map_or(0, |r| r.scenes);
    let _ = writeln!(out, "# Occlusion benchmark ({scenes} scenes)\n");

    // one line per setting: every clean row plus the heaviest level of each
    // occluded series
    let _ = writeln!(out, "## Sensor occlusion settings\n");
    let _ = writeln!(out, "| Sensor | Occlusion | mAP% | NDS% |");
    let _ = writeln!(out, "|---|---|---:|---:|");
    for mode in modes_in(rows) {
        let mut listed: Vec<&ReportRow> = Vec::new();
        if let Some(clean) = rows.iter().find(|r| r.sensor_mode == mode && r.severity == 0.0) {
            listed.push(clean);
        }
        for target in [OcclusionTarget::Camera, OcclusionTarget::Lidar] {
            if let Some(worst) = series(rows, mode, target).into_iter().filter(|r| r.severity > 0.0).next_back() {
                listed.push(worst);
            }
        }
        for r in listed {
            let occlusion = if r.severity > 0.0 {
                format!("{} {}", r.occluded_sensor, r.severity)
            } else {
                "clean".to_string()
            };
            let _ = writeln!(out, "| {} | {} | {} | {} |", r.cell().label(), occlusion, percent(r.map), percent(r.nds));
        }
    }

    for (target, title) in [
        (OcclusionTarget::Lidar, "Increasing LiDAR dropout (camera clean)"),
        (OcclusionTarget::Camera, "Increasing camera soiling coverage (LiDAR clean)"),
    ] {
        let table: Vec<(SensorMode, Vec<&ReportRow>)> = modes_in(rows)
            .into_iter()
            .map(|m| (m, series(rows, m, target)))
            .filter(|(_, s)| s.len() >= 2)
            .collect();
        if table.is_empty() {
            continue;
        }
        let levels: Vec<f64> = table[0].1.iter().map(|r| r.severity).collect();
        let _ = writeln!(out, "\n## {title}\n");
        let _ = write!(out, "| Sensors |");
        for l in &levels {
            let _ = write!(out, " {:.0}% mAP | {:.0}% NDS |", l * 100.0, l * 100.0);
        }
        let _ = write!(out, "\n|---|");
        for _ in &levels {
            let _ = write!(out, "---:|---:|");
        }
        out.push('\n');
        for (mode, s) in &table {
            let _ = write!(out, "| {} |", mode_name(*mode));
            for l in &levels {
                match s.iter().find(|r| r.severity == *l) {
                    Some(r) => {
                        let _ = write!(out, " {} | {} |", percent(r.map), percent(r.nds));
                    }
                    None => out.push_str(" | |"),
                }
            }
            out.push('\n');
        }
    }

    if let Some(first) = rows.first() {
        let _ = writeln!(out, "\n## Per-class AP% (mean over distance thresholds)\n");
        let _ = write!(out, "| Setting | Severity |");
        for (c, _) in &first.class_ap {
            let _ = write!(out, " {c} |");
        }
        let _ = write!(out, "\n|---|---:|");
        for _ in &first.class_ap {
            out.push_str("---:|");
        }
        out.push('\n');
        for r in rows {
            let _ = write!(out, "| {} ({}) | {} |", r.sensor_mode, r.occluded_sensor, r.severity);
            for (_, ap) in &r.class_ap {
                let _ = write!(out, " {} |", ap.map(percent).unwrap_or_else(|| "-".into()));
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Serialize)]
struct JsonReport<'a> {
    format: &'static str,
    rows: &'a [ReportRow],
}

pub fn to_json(rows: &[ReportRow]) -> String {
    serde_json::to_string_pretty(&JsonReport {
        format: REPORT_FORMAT,
        rows,
    })
    .expect("report serializes")
}

const SVG_W: f64 = 480.0;
const SVG_H: f64 = 320.0;
const PLOT_X: f64 = 60.0;
const PLOT_Y: f64 = 30.0;
const PLOT_W: f64 = 380.0;
const PLOT_H: f64 = 240.0;

fn mode_color(mode: SensorMode) -> &'static str {
    match mode {
        SensorMode::Camera => "#1b9e77",
        SensorMode::Lidar => "#d95f02",
        SensorMode::Fused => "#7570b3",
    }
}

/// Severity-vs-mAP chart, one polyline per sensor mode. Polyline points
/// live in a y-up plot frame (y = mAP × plot height), so a decreasing
/// curve has decreasing y coordinates.
pub fn to_svg(rows: &[ReportRow], target: OcclusionTarget) -> Option<String> {
    let lines: Vec<(SensorMode, Vec<&ReportRow>)> = modes_in(rows)
        .into_iter()
        .map(|m| (m, series(rows, m, target)))
        .filter(|(_, s)| s.len() >= 2)
        .collect();
    if lines.is_empty() {
        return None;
    }
    let x_max = lines
        .iter()
        .flat_map(|(_, s)| s.iter().map(|r| r.severity))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let axis = if target == OcclusionTarget::Lidar {
        "LiDAR dropout ratio"
    } else {
        "camera soiling coverage"
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">mAP vs {axis}</text>"#,
        SVG_W / 2.0
    );
    // y-up plot frame: origin at the bottom-left corner of the plot area
    let _ = writeln!(s, r#"<g transform="translate({PLOT_X} {}) scale(1 -1)">"#, PLOT_Y + PLOT_H);
    let _ = writeln!(s, r#"<path d="M0 {PLOT_H} V0 H{PLOT_W}" fill="none" stroke="black"/>"#);
    for (mode, series) in &lines {
        let pts: Vec<String> = series
            .iter()
            .map(|r| format!("{:.2},{:.2}", r.severity / x_max * PLOT_W, r.map * PLOT_H))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-mode="{}" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            mode.label(),
            pts.join(" "),
            mode_color(*mode)
        );
    }
    let _ = writeln!(s, "</g>");
    for k in 0..=4 {
        let frac = k as f64 / 4.0;
        let y = PLOT_Y + PLOT_H * (1.0 - frac);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            PLOT_X - 6.0,
            y + 4.0,
            frac
        );
        let x = PLOT_X + PLOT_W * frac;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle">{:.2}</text>"#,
            PLOT_Y + PLOT_H + 16.0,
            frac * x_max
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{axis}</text>"#,
        PLOT_X + PLOT_W / 2.0,
        SVG_H - 8.0
    );
    for (i, (mode, _)) in lines.iter().enumerate() {
        let y = PLOT_Y + 12.0 + 16.0 * i as f64;
        let x = PLOT_X + PLOT_W - 110.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x + 18.0,
            mode_color(*mode),
            x + 24.0,
            y + 4.0,
            mode_name(*mode)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Writes the requested formats under `dir`; returns the written paths in a
/// fixed order.
pub fn emit_report(rows: &[ReportRow], formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::invalid("report", "no rows"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for format in ReportFormat::ALL {
        if !formats.contains(&format) {
            continue;
        }
        match format {
            ReportFormat::Csv => {
                let p = dir.join("report.csv");
                write(&p, to_csv(rows)?.as_bytes())?;
                written.push(p);
            }
            ReportFormat::Markdown => {
                let p = dir.join("report.md");
                write(&p, to_markdown(rows).as_bytes())?;
                written.push(p);
            }
            ReportFormat::Json => {
                let p = dir.join("report.json");
                write(&p, to_json(rows).as_bytes())?;
                written.push(p);
            }
            ReportFormat::Svg => {
                for target in [OcclusionTarget::Lidar, OcclusionTarget::Camera] {
                    if let Some(svg) = to_svg(rows, target) {
                        let p = dir.join(format!("degradation_{}.svg", target.label()));
                        write(&p, svg.as_bytes())?;
                        written.push(p);
                    }
                }
            }
        }
    }
    Ok(written)
}

/// Per-row wall times; kept apart from the reports because it varies
/// between runs.
pub fn write_timings(rows: &[ReportRow], dir: &Path) -> Result<PathBuf> {
    let timings: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "mode": r.sensor_mode,
                "occluded_sensor": r.occluded_sensor,
                "severity": r.severity,
                "wall_time_s": r.wall_time,
            })
        })
        .collect();
    let p = dir.join("timings.json");
    write(&p, serde_json::to_string_pretty(&timings).expect("timings serialize").as_bytes())?;
    Ok(p)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub config_file: Option<ManifestEntry>,
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub scene_seeds: Vec<u64>,
    pub artifacts: Vec<ManifestEntry>,
}

/// Writes `manifest.json` listing the config, every scene seed and the
/// hashes of `artifacts` (paths relative to `dir`).
pub fn write_manifest(config: &ExperimentConfig, config_file: Option<&Path>, artifacts: &[PathBuf], dir: &Path) -> Result<PathBuf> {
    let entry = |p: &Path| -> Result<ManifestEntry> {
        let rel = p.strip_prefix(dir).unwrap_or(p);
        Ok(ManifestEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(p)?,
        })
    };
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_file: config_file.map(entry).transpose()?,
        config: config.clone(),
        master_seed: config.master_seed,
        scene_seeds: (0..config.n_scenes).map(|i| config.scene_seed(i)).collect(),
        artifacts: artifacts.iter().map(|p| entry(p)).collect::<Result<_>>()?,
    };
    let p = dir.join("manifest.json");
    write(&p, serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes())?;
    Ok(p)
}
