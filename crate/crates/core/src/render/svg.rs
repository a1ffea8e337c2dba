use std::fmt::Write;

use super::raster::Rgb;
use super::{BBox, ImageFormat, PlotArea, PlotImage, PlotStyle, Y_RANGE};
use crate::domain::TorqueSignal;

const LINE_COLOR: &str = "#1f4e9c";
const GRID_COLOR: &str = "#d9d9d9";
const BOX_COLOR: &str = "#00c000";
const LABEL_COLOR: &str = "#ff0000";

fn open_tag(width: u32, height: u32) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    )
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Root element text with any XML prolog or doctype removed.
fn root_element(bytes: &[u8]) -> Result<&str, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    let start = text.find("<svg").ok_or("no <svg> element")?;
    let end = text.rfind("</svg>").ok_or("unterminated <svg> element")?;
    Ok(&text[start..end + "</svg>".len()])
}

fn attr(tag: &str, name: &str) -> Option<String> {
    let needle = format!(" {name}=\"");
    let at = tag.find(&needle)? + needle.len();
    let rest = &tag[at..];
    Some(rest[..rest.find('"')?].to_string())
}

pub(super) fn dimensions(bytes: &[u8]) -> Result<(u32, u32), String> {
    let root = root_element(bytes)?;
    let tag = &root[..root.find('>').ok_or("unterminated start tag")?];
    let parse = |name: &str| -> Result<u32, String> {
        let value = attr(tag, name).ok_or_else(|| format!("missing {name} attribute"))?;
        let number = value.trim_end_matches("px");
        number
            .parse::<f64>()
            .map(|v| v.round() as u32)
            .map_err(|_| format!("bad {name} '{value}'"))
    };
    Ok((parse("width")?, parse("height")?))
}

/// Children of the root element.
fn inner(image: &PlotImage) -> &str {
    let root = root_element(image.bytes()).expect("validated on construction");
    let open_end = root.find('>').expect("validated on construction") + 1;
    &root[open_end..root.len() - "</svg>".len()]
}

/// Embeds `image` at (x, y); element ids get a position suffix so that
/// several embedded plots stay unique within one document.
fn nested(image: &PlotImage, x: i64, y: i64) -> String {
    format!(
        "<svg x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">{body}</svg>\n",
        w = image.width(),
        h = image.height(),
        body = inner(image).replace("plot-area", &format!("plot-area-{x}-{y}"))
    )
}

fn finish(mut out: String, width: u32, height: u32, caption: String) -> PlotImage {
    out.push_str("</svg>\n");
    PlotImage::from_parts(width, height, ImageFormat::Svg, out.into_bytes(), caption)
}

pub(super) fn timeseries(signal: &TorqueSignal, style: &PlotStyle, caption: String) -> PlotImage {
    let (width, height) = (style.width, style.height);
    let area = PlotArea::for_size(width, height);
    let duration = signal.duration();
    let mut out = open_tag(width, height);
    let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        out,
        "<defs><clipPath id=\"plot-area\"><rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\"/></clipPath></defs>",
        area.left,
        area.top,
        area.right - area.left,
        area.bottom - area.top
    );
    let font = "font-family=\"DejaVu Sans Mono, monospace\" font-size=\"10\"";
    let whole_seconds = duration.floor() as i64;
    let x_step = if whole_seconds > 10 { (whole_seconds as f64 / 10.0).ceil() as i64 } else { 1 };
    if style.grid {
        let _ = write!(out, "<g stroke=\"{GRID_COLOR}\" stroke-width=\"0.5\">");
        for v in -3..=3 {
            let y = area.y(f64::from(v));
            let _ = write!(out, "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\"/>", area.left, area.right);
        }
        for s in (0..=whole_seconds).step_by(x_step as usize) {
            let x = area.x(s as f64, duration);
            let _ = write!(out, "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\"/>", area.top, area.bottom);
        }
        out.push_str("</g>\n");
    }
    let _ = writeln!(
        out,
        "<g stroke=\"#000000\" stroke-width=\"1\"><line x1=\"{l:.2}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\"/><line x1=\"{l:.2}\" y1=\"{t:.2}\" x2=\"{l:.2}\" y2=\"{b:.2}\"/></g>",
        l = area.left,
        r = area.right,
        t = area.top,
        b = area.bottom
    );
    let _ = write!(out, "<g {font} fill=\"#000000\">");
    for v in [Y_RANGE.0 as i64, 0, Y_RANGE.1 as i64] {
        let _ = write!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v}</text>", area.left - 4.0, area.y(v as f64) + 3.0);
    }
    for s in (0..=whole_seconds).step_by(x_step as usize) {
        let _ = write!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{s}</text>", area.x(s as f64, duration), area.bottom + 12.0);
    }
    let _ = write!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">time (s)</text>",
        (area.left + area.right) / 2.0,
        f64::from(height) - 4.0
    );
    out.push_str("</g>\n");

    let rate = signal.sample_rate();
    let _ = write!(
        out,
        "<polyline clip-path=\"url(#plot-area)\" fill=\"none\" stroke=\"{LINE_COLOR}\" stroke-width=\"{:.2}\" points=\"",
        style.stroke_width
    );
    for (i, v) in signal.samples().iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{:.2},{:.2}", area.x(i as f64 / rate, duration), area.y(*v));
    }
    out.push_str("\"/>\n");
    finish(out, width, height, caption)
}

pub(super) fn concat(left: &PlotImage, right: &PlotImage, caption: String) -> PlotImage {
    let width = left.width() + right.width();
    let height = left.height();
    let mut out = open_tag(width, height);
    out.push_str(&nested(left, 0, 0));
    out.push_str(&nested(right, i64::from(left.width()), 0));
    finish(out, width, height, caption)
}

pub(super) fn annotate(scene: &PlotImage, boxes: &[BBox]) -> PlotImage {
    let (width, height) = (scene.width(), scene.height());
    let mut out = open_tag(width, height);
    out.push_str(&nested(scene, 0, 0));
    for b in boxes {
        let _ = writeln!(
            out,
            "<rect class=\"bbox\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"{BOX_COLOR}\" stroke-width=\"2\"/>",
            b.x, b.y, b.w, b.h
        );
        let label_y = if b.y >= 14 { b.y - 3 } else { b.y + 12 };
        let _ = writeln!(
            out,
            "<text class=\"bbox-label\" x=\"{}\" y=\"{label_y}\" font-family=\"DejaVu Sans Mono, monospace\" font-size=\"12\" font-weight=\"bold\" fill=\"{LABEL_COLOR}\">{}</text>",
            b.x + 1,
            b.index
        );
    }
    finish(out, width, height, scene.caption.clone())
}

pub(super) fn crop(scene: &PlotImage, b: &BBox) -> PlotImage {
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"{x} {y} {w} {h}\">\n",
        x = b.x,
        y = b.y,
        w = b.w,
        h = b.h
    );
    out.push_str(&nested(scene, 0, 0));
    finish(out, b.w, b.h, format!("container {}", b.index))
}

pub(super) fn rects(width: u32, height: u32, rects: &[(BBox, Rgb)], caption: String) -> PlotImage {
    let mut out = open_tag(width, height);
    let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#f4f1ea\"/>");
    for (b, Rgb([r, g, bl])) in rects {
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#{r:02x}{g:02x}{bl:02x}\" stroke=\"#555555\" stroke-width=\"1\"/>",
            b.x, b.y, b.w, b.h
        );
    }
    let _ = writeln!(out, "<desc>{}</desc>", escape(&caption));
    finish(out, width, height, caption)
}
