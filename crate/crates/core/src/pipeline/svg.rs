//! Minimal static SVG plots.

use std::fmt::Write;

use crate::morphology::{Feature, FeatureTable};

const START: &str = "#1f77b4";
const END: &str = "#d62728";

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    if values.is_empty() {
        return h;
    }
    let width = (hi - lo).max(f64::MIN_POSITIVE);
    for &v in values {
        let b = (((v - lo) / width) * bins as f64).floor();
        h[(b.max(0.0) as usize).min(bins - 1)] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

fn step_path(h: &[f64], x0: f64, y0: f64, w: f64, hgt: f64, ymax: f64) -> String {
    let bw = w / h.len() as f64;
    let mut d = format!("M{x0:.2},{:.2}", y0 + hgt);
    for (i, &c) in h.iter().enumerate() {
        let y = y0 + hgt - c / ymax * hgt;
        let _ = write!(
            d,
            " L{:.2},{y:.2} L{:.2},{y:.2}",
            x0 + i as f64 * bw,
            x0 + (i + 1) as f64 * bw
        );
    }
    let _ = write!(d, " L{:.2},{:.2}", x0 + w, y0 + hgt);
    d
}

/// Seven panels of normalized histograms, one per feature, start vs end.
pub fn feature_histograms(start: &FeatureTable, end: &FeatureTable, bins: usize) -> String {
    let (pw, ph, cols) = (240.0, 170.0, 4usize);
    let rows = Feature::ALL.len().div_ceil(cols);
    let (w, h) = (pw * cols as f64, ph * rows as f64 + 30.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (k, f) in Feature::ALL.into_iter().enumerate() {
        let (a, b) = (start.column(f), end.column(f));
        let all = a.iter().chain(&b);
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() {
            (lo, if hi > lo { hi } else { lo + 1.0 })
        } else {
            (0.0, 1.0)
        };
        let ha = histogram(&a, lo, hi, bins);
        let hb = histogram(&b, lo, hi, bins);
        let ymax = ha.iter().chain(&hb).copied().fold(0.0, f64::max).max(1e-12);
        let x0 = (k % cols) as f64 * pw + 30.0;
        let y0 = (k / cols) as f64 * ph + 20.0;
        let (iw, ih) = (pw - 45.0, ph - 55.0);
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{} [{}]</text>",
            x0 + iw / 2.0,
            y0 - 5.0,
            f.name(),
            f.unit()
        );
        let _ = writeln!(s, "<rect x=\"{x0:.1}\" y=\"{y0:.1}\" width=\"{iw:.1}\" height=\"{ih:.1}\" fill=\"none\" stroke=\"#999\"/>");
        for (hist, color) in [(&ha, START), (&hb, END)] {
            let _ = writeln!(
                s,
                "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                step_path(hist, x0, y0, iw, ih, ymax)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{x0:.1}\" y=\"{:.1}\">{}</text>",
            y0 + ih + 14.0,
            fmt_tick(lo)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            x0 + iw,
            y0 + ih + 14.0,
            fmt_tick(hi)
        );
    }
    let ly = h - 12.0;
    let _ = writeln!(s, "<rect x=\"30\" y=\"{:.1}\" width=\"12\" height=\"3\" fill=\"{START}\"/><text x=\"46\" y=\"{ly:.1}\">start (n={})</text>", ly - 4.0, start.len());
    let _ = writeln!(s, "<rect x=\"160\" y=\"{:.1}\" width=\"12\" height=\"3\" fill=\"{END}\"/><text x=\"176\" y=\"{ly:.1}\">end (n={})</text>", ly - 4.0, end.len());
    s.push_str("</svg>\n");
    s
}

/// Line plot of the total energy per MCS.
pub fn energy_trace(initial: f64, trace: &[f64]) -> String {
    let (w, h, m) = (640.0, 320.0, 50.0);
    let ys: Vec<f64> = std::iter::once(initial)
        .chain(trace.iter().copied())
        .collect();
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = (ys.len() - 1).max(1) as f64;
    let mut pts = String::new();
    for (i, &y) in ys.iter().enumerate() {
        let px = m + i as f64 / n * (w - 2.0 * m);
        let py = h - m - (y - lo) / span * (h - 2.0 * m);
        let _ = write!(pts, "{px:.2},{py:.2} ");
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n\
<polyline points=\"{}\" fill=\"none\" stroke=\"{START}\" stroke-width=\"1.5\"/>\n\
<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">MCS (0 to {})</text>\n\
<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n\
<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n\
<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">Hamiltonian</text>\n</svg>\n",
        w - 2.0 * m,
        h - 2.0 * m,
        pts.trim_end(),
        w / 2.0,
        h - 15.0,
        trace.len(),
        m - 4.0,
        m + 4.0,
        fmt_tick(hi),
        m - 4.0,
        h - m,
        fmt_tick(lo),
        w / 2.0,
        m - 15.0,
    )
}

fn fmt_tick(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e5 || x.abs() < 1e-2) {
        format!("{x:.2e}")
    } else {
        format!("{x:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::extract_features;
    use crate::volume::{Volume, VolumeGeometry};

    #[test]
    fn histogram_normalizes_and_clamps() {
        let h = histogram(&[0.0, 0.5, 1.0, 1.0], 0.0, 1.0, 4);
        assert_eq!(h, vec![0.25, 0.0, 0.25, 0.5]);
        assert!(histogram(&[], 0.0, 1.0, 3).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn plots_are_well_formed() {
        let mut v = Volume::filled(VolumeGeometry::isotropic([4, 4, 4]).unwrap(), 0u32);
        v.set(1, 1, 1, 1);
        v.set(2, 2, 2, 2);
        let t = extract_features(&v);
        let s = feature_histograms(&t, &t, 10);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<path").count(), 14);
        let e = energy_trace(10.0, &[9.0, 8.5, 8.0]);
        assert!(e.contains("<polyline") && !e.contains("NaN"));
        assert!(!energy_trace(1.0, &[]).contains("NaN"));
    }
}
