//! Evaluation artifacts: PR CSV and a self-contained SVG PR-curve plot.

use super::PrPoint;

pub fn summary_line(ods: f64, ois: f64) -> String {
    format!("ODS={ods:.4} OIS={ois:.4}")
}

/// CSV of the threshold sweep followed by the summary line as a comment.
pub fn pr_csv(points: &[PrPoint], ods: f64, ois: f64) -> String {
    let mut out = String::from("threshold,precision,recall,f\n");
    for p in points {
        out.push_str(&format!(
            "{:.2},{:.6},{:.6},{:.6}\n",
            p.threshold, p.precision, p.recall, p.f
        ));
    }
    out.push_str(&format!("# {}\n", summary_line(ods, ois)));
    out
}

/// Line plot of (recall, precision), one polyline, fixed 480x480 canvas.
pub fn pr_svg(points: &[PrPoint], ods: f64, ois: f64) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 40.0;
    let span = SIZE - 2.0 * MARGIN;
    let x = |recall: f64| MARGIN + recall * span;
    let y = |precision: f64| SIZE - MARGIN - precision * span;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" \
         viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{span}\" height=\"{span}\" \
         fill=\"white\" stroke=\"black\"/>\n"
    ));
    // grid lines every 0.2
    for k in 1..5 {
        let f = k as f64 * 0.2;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{MARGIN}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
            x(f),
            x(f),
            SIZE - MARGIN
        ));
        svg.push_str(&format!(
            "<line x1=\"{MARGIN}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
            y(f),
            SIZE - MARGIN,
            y(f)
        ));
    }
    let path: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", x(p.recall), y(p.precision)))
        .collect();
    if !path.is_empty() {
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#c22\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        SIZE - 10.0,
        summary_line(ods, ois)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">recall</text>\n",
        SIZE / 2.0 - 20.0,
        SIZE - MARGIN + 28.0
    ));
    svg.push_str(&format!(
        "<text x=\"12\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         transform=\"rotate(-90 12 {:.1})\">precision</text>\n",
        SIZE / 2.0,
        SIZE / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}
