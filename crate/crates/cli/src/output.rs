//! Output files: provenance envelope, atomic writes and SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every JSON artifact: the payload plus where it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub artifact: String,
    pub version: String,
    pub config_hash: String,
    pub payload: T,
}

pub struct OutputDir {
    pub root: PathBuf,
    pub config_hash: String,
}

impl OutputDir {
    pub fn create(root: &Path, config_hash: String) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            config_hash,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Comment line placed at the top of CSV files.
    pub fn csv_banner(&self) -> String {
        format!("# choicerl {VERSION} config {}\n", self.config_hash)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, payload: &T) -> Result<PathBuf> {
        let env = Envelope {
            artifact: name.trim_end_matches(".json").to_string(),
            version: VERSION.to_string(),
            config_hash: self.config_hash.clone(),
            payload,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Payload of `name` if it exists and was produced by this configuration.
    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        let path = self.path(name);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let env: Envelope<serde_json::Value> =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if env.config_hash != self.config_hash || env.version != VERSION {
            return Ok(None);
        }
        let payload = serde_json::from_value(env.payload)
            .with_context(|| format!("decoding {}", path.display()))?;
        Ok(Some(payload))
    }

    /// CSV produced by `fill`, prefixed with the provenance banner.
    pub fn write_csv(&self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = self.csv_banner().into_bytes();
        fill(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    /// Temp file in the same directory, then rename.
    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        let dir = path.parent().unwrap_or(&self.root);
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)
            .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
        tmp.write_all(bytes)
            .with_context(|| format!("writing {}", path.display()))?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(&path)
            .map_err(|e| e.error)
            .with_context(|| format!("renaming into {}", path.display()))?;
        Ok(path)
    }
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    /// Standalone SVG; the data points are embedded as attributes and in a
    /// metadata block.
    pub fn to_svg(&self, banner: &str) -> String {
        let (w, h, left, right, top, bottom) = (640.0, 420.0, 80.0, 170.0, 40.0, 60.0);
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let ty = |y: f64| if self.log_y { y.log10() } else { y };
        let usable = |x: f64, y: f64| {
            x.is_finite() && y.is_finite() && (!self.log_x || x > 0.0) && (!self.log_y || y > 0.0)
        };
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().cloned())
            .filter(|&(x, y)| usable(x, y))
            .map(|(x, y)| (tx(x), ty(y)))
            .collect();
        let bounds = |v: Vec<f64>| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = bounds(pts.iter().map(|p| p.0).collect());
        let (y0, y1) = bounds(pts.iter().map(|p| p.1).collect());
        let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
        let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, "<!-- {} -->", escape(banner.trim().trim_start_matches('#').trim()));
        let data: Vec<_> = self
            .series
            .iter()
            .map(|s| serde_json::json!({"label": s.label, "points": s.points}))
            .collect();
        let _ = writeln!(
            svg,
            "<metadata>{}</metadata>",
            escape(&serde_json::to_string(&data).unwrap_or_default())
        );
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (left + w - right) / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="grey"/>"#,
            w - left - right,
            h - top - bottom
        );
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            let lx = if self.log_x { 10f64.powf(fx) } else { fx };
            let ly = if self.log_y { 10f64.powf(fy) } else { fy };
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{lx:.3e}</text>"#,
                px(fx),
                h - bottom + 18.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ly:.3e}</text>"#,
                left - 6.0,
                py(fy) + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (left + w - right) / 2.0,
            h - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            (top + h - bottom) / 2.0,
            (top + h - bottom) / 2.0,
            escape(&self.y_label)
        );
        for (k, s) in self.series.iter().enumerate() {
            let coords: Vec<(f64, f64, f64, f64)> = s
                .points
                .iter()
                .filter(|&&(x, y)| usable(x, y))
                .map(|&(x, y)| (x, y, px(tx(x)), py(ty(y))))
                .collect();
            let path: Vec<String> = coords.iter().map(|c| format!("{:.2},{:.2}", c.2, c.3)).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
                s.color,
                path.join(" ")
            );
            for c in &coords {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}" data-x="{}" data-y="{}"/>"#,
                    c.2, c.3, s.color, c.0, c.1
                );
            }
            let ly = top + 16.0 + 18.0 * k as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                w - right + 10.0,
                w - right + 30.0,
                s.color,
                w - right + 36.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_embeds_points_and_skips_nonpositive_on_log_axes() {
        let chart = Chart {
            title: "t".into(),
            x_label: "n".into(),
            y_label: "y".into(),
            log_x: true,
            log_y: true,
            series: vec![Series {
                label: "a<b".into(),
                points: vec![(10.0, 1.0), (100.0, 0.1), (1000.0, 0.0)],
                color: "#000",
            }],
        };
        let svg = chart.to_svg("# banner");
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn stale_artifacts_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputDir::create(dir.path(), "aaa".into()).unwrap();
        a.write_json("x.json", &vec![1, 2, 3]).unwrap();
        assert_eq!(a.read_json::<Vec<i32>>("x.json").unwrap(), Some(vec![1, 2, 3]));
        let b = OutputDir::create(dir.path(), "bbb".into()).unwrap();
        assert_eq!(b.read_json::<Vec<i32>>("x.json").unwrap(), None);
    }
}
