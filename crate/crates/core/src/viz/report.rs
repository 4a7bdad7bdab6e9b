//! Static analysis report: CSV tables, one SVG scatter per class and an
//! HTML index.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::tsne::PlanarEmbedding;
use crate::cluster::{write_ranking_csv, ClusterAssignment, SeparabilityReport};
use crate::error::invalid;
use crate::{Error, Result};

pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#b5cf6b",
];

/// Everything the report shows for one class.
#[derive(Clone, Copy, Debug)]
pub struct ClassView<'a> {
    pub class_id: usize,
    pub sample_ids: &'a [u64],
    pub eigenvalues: &'a [f64],
    /// Cluster count suggested by the eigengap.
    pub estimated_k: usize,
    pub embedding: &'a PlanarEmbedding,
    pub clusters: &'a ClusterAssignment,
}

#[derive(Clone, Debug, Default)]
pub struct ReportOptions {
    pub title: String,
    /// Leaves the generation time out so repeated runs are byte-identical.
    pub reproducible: bool,
}

/// Formats with nine significant digits, switching to exponent notation
/// for very small or large magnitudes.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{v:.8e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..9).contains(&exp) {
        let s = format!("{:.*}", (8 - exp) as usize, v);
        let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    } else {
        let (mant, e) = sci.split_at(sci.find('e').unwrap());
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{mant}{e}")
    }
}

fn validate(view: &ClassView) -> Result<()> {
    let n = view.sample_ids.len();
    if n == 0 || view.clusters.labels.is_empty() || view.clusters.k == 0 {
        return Err(invalid("clusters", format!("class {} has an empty cluster list", view.class_id)));
    }
    if view.embedding.coords.len() != n || view.clusters.labels.len() != n {
        return Err(Error::Shape(format!(
            "class {}: {} samples, {} embedded points, {} cluster labels",
            view.class_id,
            n,
            view.embedding.coords.len(),
            view.clusters.labels.len()
        )));
    }
    if view.clusters.labels.iter().any(|&l| l >= view.clusters.k) {
        return Err(invalid("clusters", "label outside [0, k)"));
    }
    Ok(())
}

fn embedding_csv(view: &ClassView) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "x", "y", "cluster"])?;
    for (i, id) in view.sample_ids.iter().enumerate() {
        let [x, y] = view.embedding.coords[i];
        w.write_record([id.to_string(), fmt_sig9(x), fmt_sig9(y), view.clusters.labels[i].to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn eigenvalues_csv(eigenvalues: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "eigenvalue"])?;
    for (i, v) in eigenvalues.iter().enumerate() {
        w.write_record([(i + 1).to_string(), fmt_sig9(*v)])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// 800 × 800 scatter, one circle per sample, colored by cluster.
pub fn scatter_svg(coords: &[[f64; 2]], labels: &[usize], title: &str) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in coords {
        x0 = x0.min(c[0]);
        x1 = x1.max(c[0]);
        y0 = y0.min(c[1]);
        y1 = y1.max(c[1]);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let scale = 700.0 / span;
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let mut s = String::new();
    s.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 800\" width=\"800\" height=\"800\">\n");
    s.push_str("<rect width=\"800\" height=\"800\" fill=\"white\"/>\n");
    let _ = writeln!(s, "<text x=\"20\" y=\"30\" font-family=\"sans-serif\" font-size=\"18\">{}</text>", escape(title));
    for (c, &l) in coords.iter().zip(labels) {
        let px = 400.0 + (c[0] - cx) * scale;
        let py = 410.0 - (c[1] - cy) * scale;
        let _ = writeln!(
            s,
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.8\"/>",
            PALETTE[l % PALETTE.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn write(path: PathBuf, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, bytes)?;
    written.push(path);
    Ok(())
}

fn html(views: &[ClassView], ranking: &[SeparabilityReport], opts: &ReportOptions) -> String {
    let mut h = String::new();
    let title = if opts.title.is_empty() { "Spectral relevance analysis" } else { &opts.title };
    let _ = writeln!(h, "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>", escape(title));
    h.push_str("<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}td,th{border:1px solid #bbb;padding:2px 8px;text-align:right}</style>\n</head>\n<body>\n");
    let _ = writeln!(h, "<h1>{}</h1>", escape(title));
    if !opts.reproducible {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(h, "<p>Generated at unix time {secs}.</p>");
    }
    h.push_str("<h2>Classes ranked by separability</h2>\n<p><a href=\"tau_ranking.csv\">tau_ranking.csv</a></p>\n");
    h.push_str("<table class=\"ranking\">\n<tr><th>rank</th><th>class</th><th>tau</th></tr>\n");
    for (r, rep) in ranking.iter().enumerate() {
        let _ = writeln!(
            h,
            "<tr><td>{}</td><td><a href=\"#class_{c}\">{c}</a></td><td>{}</td></tr>",
            r + 1,
            fmt_sig9(rep.tau),
            c = rep.class_id
        );
    }
    h.push_str("</table>\n");
    for v in views {
        let c = v.class_id;
        let _ = writeln!(h, "<h2 id=\"class_{c}\">Class {c}</h2>");
        let _ = writeln!(
            h,
            "<p>{} samples, {} clusters, eigengap suggests {}.</p>",
            v.sample_ids.len(),
            v.clusters.k,
            v.estimated_k
        );
        h.push_str("<table class=\"eigengap\">\n<tr><th>i</th><th>eigenvalue</th><th>gap to next</th></tr>\n");
        for i in 0..v.estimated_k.min(v.eigenvalues.len()) {
            let gap = v.eigenvalues.get(i + 1).map_or(String::new(), |n| fmt_sig9(n - v.eigenvalues[i]));
            let _ = writeln!(h, "<tr><td>{}</td><td>{}</td><td>{gap}</td></tr>", i + 1, fmt_sig9(v.eigenvalues[i]));
        }
        h.push_str("</table>\n");
        let _ = writeln!(h, "<p><img src=\"class_{c}/scatter.svg\" width=\"400\" alt=\"class {c} embedding\"></p>");
        let _ = write!(
            h,
            "<p><a href=\"class_{c}/embedding_2d.csv\">embedding_2d.csv</a> | <a href=\"class_{c}/eigenvalues.csv\">eigenvalues.csv</a>"
        );
        for k in 0..v.clusters.k {
            let _ = write!(h, " | <a href=\"class_{c}/clusters/cluster_{k}.txt\">cluster {k}</a>");
        }
        h.push_str("</p>\n");
    }
    h.push_str("</body>\n</html>\n");
    h
}

/// Writes the report under `out_dir` and returns the paths written.
/// Inputs are validated before anything touches the disk.
pub fn render_report(
    views: &[ClassView],
    ranking: &[SeparabilityReport],
    out_dir: &Path,
    opts: &ReportOptions,
) -> Result<Vec<PathBuf>> {
    if views.is_empty() {
        return Err(invalid("classes", "nothing to report"));
    }
    for v in views {
        validate(v)?;
    }
    let mut written = Vec::new();
    fs::create_dir_all(out_dir)?;
    for v in views {
        let dir = out_dir.join(format!("class_{}", v.class_id));
        let cdir = dir.join("clusters");
        fs::create_dir_all(&cdir)?;
        write(dir.join("embedding_2d.csv"), &embedding_csv(v)?, &mut written)?;
        write(dir.join("eigenvalues.csv"), &eigenvalues_csv(v.eigenvalues)?, &mut written)?;
        let svg = scatter_svg(&v.embedding.coords, &v.clusters.labels, &format!("class {}", v.class_id));
        write(dir.join("scatter.svg"), svg.as_bytes(), &mut written)?;
        for k in 0..v.clusters.k {
            let mut s = String::new();
            for (i, &l) in v.clusters.labels.iter().enumerate() {
                if l == k {
                    let _ = writeln!(s, "{}", v.sample_ids[i]);
                }
            }
            write(cdir.join(format!("cluster_{k}.txt")), s.as_bytes(), &mut written)?;
        }
    }
    let mut rank_csv = Vec::new();
    write_ranking_csv(&mut rank_csv, ranking)?;
    write(out_dir.join("tau_ranking.csv"), &rank_csv, &mut written)?;
    write(out_dir.join("report.html"), html(views, ranking, opts).as_bytes(), &mut written)?;
    Ok(written)
}
