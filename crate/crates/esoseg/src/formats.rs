//! Small text formats: prior models, centerlines, manifests, loss logs and
//! metric reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use esoseg_core::acm::Centerline;
use esoseg_core::metrics::{MetricReport, WilcoxonResult};
use esoseg_core::priors::{Component, GmmModel, GradientStats};

use crate::error::CliError;
use crate::pipeline::PriorModel;

const PRIOR_MAGIC: &str = "esoseg-priors 1";

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Nine significant digits.
fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn format_priors(p: &PriorModel) -> String {
    let mut s = format!("{PRIOR_MAGIC}\ncomponents {}\n", p.gmm.components().len());
    for c in p.gmm.components() {
        let _ = writeln!(s, "component {} {} {}", sig9(c.weight), sig9(c.mean), sig9(c.variance));
    }
    let _ = writeln!(s, "mu_delta {}", sig9(p.stats.mu_delta));
    let _ = writeln!(s, "sigma_delta {}", sig9(p.stats.sigma_delta));
    let _ = writeln!(s, "mean_eso_hu {}", sig9(p.stats.mean_eso_hu));
    s
}

pub fn write_priors(path: &Path, p: &PriorModel) -> Result<(), CliError> {
    write_text(path, &format_priors(p))
}

/// Weights are renormalised after parsing, since nine digits cannot carry an
/// exact unit sum.
pub fn read_priors(path: &Path) -> Result<PriorModel, CliError> {
    let text = read_text(path)?;
    let bad = |msg: String| CliError::format(path, msg);
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some(PRIOR_MAGIC) {
        return Err(bad(format!("not a prior model file (expected first line {PRIOR_MAGIC:?})")));
    }
    let mut next = |name: &str, n: usize| -> Result<Vec<f64>, CliError> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {name}")))?;
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some(name) {
            return Err(bad(format!("expected {name}, found {line:?}")));
        }
        let v: Vec<f64> = tokens
            .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number {t:?} in {name}"))))
            .collect::<Result<_, _>>()?;
        if v.len() != n || v.iter().any(|x| !x.is_finite()) {
            return Err(bad(format!("{name} needs {n} finite values")));
        }
        Ok(v)
    };
    let k = next("components", 1)?[0];
    if k < 1.0 || k.fract() != 0.0 {
        return Err(bad(format!("invalid component count {k}")));
    }
    let mut comps = Vec::new();
    for _ in 0..k as usize {
        let v = next("component", 3)?;
        comps.push(Component {
            weight: v[0],
            mean: v[1],
            variance: v[2],
        });
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    if total > 0.0 {
        comps.iter_mut().for_each(|c| c.weight /= total);
    }
    let gmm = GmmModel::new(comps).map_err(|e| bad(e.to_string()))?;
    let stats = GradientStats {
        mu_delta: next("mu_delta", 1)?[0],
        sigma_delta: next("sigma_delta", 1)?[0],
        mean_eso_hu: next("mean_eso_hu", 1)?[0],
    };
    if !(stats.sigma_delta > 0.0) {
        return Err(bad("sigma_delta must be positive".into()));
    }
    Ok(PriorModel { gmm, stats })
}

/// One `z x y` line per slice, six decimals.
pub fn format_centerline(c: &Centerline) -> String {
    c.points()
        .iter()
        .enumerate()
        .map(|(z, p)| format!("{z} {:.6} {:.6}\n", p[0], p[1]))
        .collect()
}

pub fn read_centerline(path: &Path, dims: [usize; 3]) -> Result<Centerline, CliError> {
    let text = read_text(path)?;
    let bad = |msg: String| CliError::format(path, msg);
    let mut points = Vec::new();
    for (n, line) in text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number {t:?}"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 3 || v[0] != n as f64 {
            return Err(bad(format!("line {}: expected `{n} x y`", n + 1)));
        }
        points.push([v[1], v[2]]);
    }
    Centerline::new(points, dims).map_err(|e| bad(e.to_string()))
}

/// One manifest row: a CT and its mask, or a single mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub paths: Vec<PathBuf>,
}

impl ManifestEntry {
    /// The last column: the mask of a pair, or the only path.
    pub fn mask(&self) -> &Path {
        self.paths.last().expect("manifest rows are never empty")
    }

    /// Case identifier: the file stem of the last column.
    pub fn id(&self) -> String {
        self.mask()
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Reads whitespace-separated rows of one or two paths. Relative paths are
/// resolved against the manifest's directory; `#` starts a comment.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let paths: Vec<PathBuf> = line.split_whitespace().map(|t| base.join(t)).collect();
        if paths.len() > 2 {
            return Err(CliError::format(path, format!("line {}: expected one or two paths", n + 1)));
        }
        rows.push(ManifestEntry { paths });
    }
    Ok(rows)
}

/// Writes rows relative to the manifest's directory when possible.
pub fn write_manifest(path: &Path, rows: &[Vec<PathBuf>]) -> Result<(), CliError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut s = String::new();
    for row in rows {
        let cols: Vec<String> = row
            .iter()
            .map(|p| p.strip_prefix(base).unwrap_or(p).display().to_string())
            .collect();
        s.push_str(&cols.join(" "));
        s.push('\n');
    }
    write_text(path, &s)
}

/// Tab-separated `epoch subepoch loss` rows.
pub fn format_loss_log(losses: &[(usize, usize, f64)]) -> String {
    let mut s = String::from("epoch\tsubepoch\tloss\n");
    for (e, k, l) in losses {
        let _ = writeln!(s, "{e}\t{k}\t{l:.9e}");
    }
    s
}

fn report_rows(s: &mut String, label: Option<&str>, r: &MetricReport) {
    let prefix = label.map(|l| format!("{l}\t")).unwrap_or_default();
    for c in &r.cases {
        let _ = writeln!(s, "{prefix}{}\t{:.6}\t{:.6}\t{:.6}", c.id, c.dsc, c.assd_mm, c.hd_mm);
    }
    let _ = writeln!(s, "{prefix}mean\t{:.6}\t{:.6}\t{:.6}", r.dsc.mean, r.assd_mm.mean, r.hd_mm.mean);
    let _ = writeln!(s, "{prefix}std\t{:.6}\t{:.6}\t{:.6}", r.dsc.std, r.assd_mm.std, r.hd_mm.std);
}

/// Per-case rows followed by `mean` and `std` rows.
pub fn format_report(r: &MetricReport) -> String {
    let mut s = String::from("id\tdsc\tassd_mm\thd_mm\n");
    report_rows(&mut s, None, r);
    s
}

/// Both prediction sets side by side, then one two-sided Wilcoxon
/// signed-rank test per metric.
pub fn format_comparison(
    a: (&str, &MetricReport),
    b: (&str, &MetricReport),
    tests: &[(&str, Result<WilcoxonResult, String>)],
) -> String {
    let mut s = String::from("set\tid\tdsc\tassd_mm\thd_mm\n");
    report_rows(&mut s, Some(a.0), a.1);
    report_rows(&mut s, Some(b.0), b.1);
    s.push_str("\nmetric\tn\tw_plus\tp_value\tmethod\n");
    for (metric, t) in tests {
        match t {
            Ok(w) => {
                let method = if w.exact { "exact" } else { "normal" };
                let _ = writeln!(s, "{metric}\t{}\t{}\t{:.6e}\t{method}", w.n, w.w_plus, w.p_value);
            }
            Err(why) => {
                let _ = writeln!(s, "{metric}\t-\t-\t-\t{why}");
            }
        }
    }
    s
}
