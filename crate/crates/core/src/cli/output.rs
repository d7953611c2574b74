use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::CliError;

/// Output directory; every file lands through a temp file and a rename, so
/// readers never see a partial file.
pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(OutDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let target = self.path(name);
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", target.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io)?;
        tmp.write_all(contents.as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&target).map_err(|e| io(e.error))?;
        self.written.push(target.clone());
        Ok(target)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) =
                it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Frame { x: span(&mut xs.clone()), y: span(&mut ys.clone()) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{x0}" y="{}">{}</text>"#, y0 + 14.0, fmt_tick(f.x.0));
    let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="end">{}</text>"#, y0 + 14.0, fmt_tick(f.x.1));
    let _ = writeln!(s, r#"<text x="{}" y="{y0}" text-anchor="end">{}</text>"#, x0 - 4.0, fmt_tick(f.y.0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 4.0, y1 + 8.0, fmt_tick(f.y.1));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    s
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One polyline per `(label, points)` series.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = || series.iter().flat_map(|(_, p)| p.iter());
    let f = Frame::new(pts().map(|p| p.0), pts().map(|p| p.1));
    let mut s = open(title, xlabel, ylabel, &f);
    for (k, (label, points)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        for (i, &(x, y)) in points.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { 'M' } else { 'L' }, f.px(x), f.py(y));
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1"/>"#, d.trim_end());
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
            W - MARGIN,
            MARGIN + 12.0 * k as f64,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Spike raster: one tick per `(time, row)`.
pub fn raster_plot(title: &str, spikes: &[(f64, usize)], duration: f64, rows: usize) -> String {
    let f = Frame { x: (0.0, duration.max(f64::MIN_POSITIVE)), y: (0.0, rows.max(1) as f64) };
    let mut s = open(title, "time (s)", "neuron", &f);
    let mut d = String::new();
    for &(t, r) in spikes {
        let (x, y) = (f.px(t), f.py(r as f64 + 0.5));
        let _ = write!(d, "M{x:.2} {:.2} L{x:.2} {:.2} ", y - 1.5, y + 1.5);
    }
    if !d.is_empty() {
        let _ = writeln!(s, r#"<path d="{}" stroke="black" stroke-width="0.8"/>"#, d.trim_end());
    }
    s.push_str("</svg>\n");
    s
}

/// Bars from lower edges, counts and a common width.
pub fn histogram_plot(title: &str, xlabel: &str, edges: &[f64], counts: &[usize], width: f64) -> String {
    let hi = edges.last().map_or(1.0, |e| e + width);
    let f = Frame::new(edges.iter().copied().chain([hi]), counts.iter().map(|&c| c as f64).chain([0.0]));
    let mut s = open(title, xlabel, "count", &f);
    for (&e, &c) in edges.iter().zip(counts) {
        let (x0, x1) = (f.px(e), f.px(e + width));
        let (y0, y1) = (f.py(0.0), f.py(c as f64));
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" stroke="white"/>"##,
            (x1 - x0).max(0.5),
            y0 - y1
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(&dir.path().join("run")).unwrap();
        out.write("a.csv", "x\n1\n").unwrap();
        out.write("a.csv", "x\n2\n").unwrap();
        assert_eq!(std::fs::read_to_string(out.path("a.csv")).unwrap(), "x\n2\n");
        let names: Vec<_> =
            std::fs::read_dir(dir.path().join("run")).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn plots_are_well_formed() {
        let line = line_plot("t", "x", "y", &[("a".into(), vec![(0.0, 1.0), (1.0, 2.0)])]);
        let raster = raster_plot("r", &[(0.1, 0), (0.2, 3)], 1.0, 4);
        let hist = histogram_plot("h", "tau", &[0.0, 1.0], &[3, 5], 1.0);
        for svg in [line, raster, hist] {
            assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
            assert!(!svg.contains("NaN"));
        }
        assert!(line_plot("<&>", "x", "y", &[]).contains("&lt;&amp;&gt;"));
    }
}
