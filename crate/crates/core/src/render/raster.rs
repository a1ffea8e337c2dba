use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use super::{BBox, ImageFormat, PlotArea, PlotImage, PlotStyle, RenderError, Y_RANGE};
use crate::domain::TorqueSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

/// Ink used for box index labels.
pub const LABEL_RGB: Rgb = Rgb([255, 0, 0]);
const BOX_RGB: Rgb = Rgb([0, 192, 0]);
const LINE_RGB: Rgb = Rgb([31, 78, 156]);
const GRID_RGB: Rgb = Rgb([217, 217, 217]);
const AXIS_RGB: Rgb = Rgb([0, 0, 0]);
const WHITE: Rgb = Rgb([255, 255, 255]);
const BACKDROP_RGB: Rgb = Rgb([244, 241, 234]);
const OUTLINE_RGB: Rgb = Rgb([85, 85, 85]);

// 3x5 glyphs, one row per entry, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];
const MINUS: [u8; 5] = [0, 0, 0b111, 0, 0];

fn glyph(c: char) -> Option<[u8; 5]> {
    match c {
        '0'..='9' => Some(DIGITS[c as usize - '0' as usize]),
        '-' => Some(MINUS),
        _ => None,
    }
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(width: u32, height: u32, fill: Rgb) -> Self {
        Self { img: RgbImage::from_pixel(width, height, image::Rgb(fill.0)) }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as u64) < u64::from(self.img.width()) && (y as u64) < u64::from(self.img.height()) {
            self.img.put_pixel(x as u32, y as u32, image::Rgb(c.0));
        }
    }

    fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    fn outline(&mut self, x: i64, y: i64, w: i64, h: i64, thickness: i64, c: Rgb) {
        let t = thickness.min(w).min(h);
        self.fill_rect(x, y, w, t, c);
        self.fill_rect(x, y + h - t, w, t, c);
        self.fill_rect(x, y, t, h, c);
        self.fill_rect(x + w - t, y, t, h, c);
    }

    /// Bresenham line with a square pen of side `pen`.
    fn line(&mut self, from: (f64, f64), to: (f64, f64), pen: i64, c: Rgb, clip: Option<&PlotArea>) {
        let (mut x0, mut y0) = (from.0.round() as i64, from.1.round() as i64);
        let (x1, y1) = (to.0.round() as i64, to.1.round() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        let half = (pen - 1) / 2;
        loop {
            for oy in -half..pen - half {
                for ox in -half..pen - half {
                    let (px, py) = (x0 + ox, y0 + oy);
                    let inside = clip.map_or(true, |a| {
                        px as f64 >= a.left.floor() && px as f64 <= a.right.ceil() && py as f64 >= a.top.floor() && py as f64 <= a.bottom.ceil()
                    });
                    if inside {
                        self.put(px, py, c);
                    }
                }
            }
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    /// Draws `text` with its top-left corner at (x, y); unknown characters
    /// leave a blank cell.
    fn text(&mut self, x: i64, y: i64, text: &str, scale: i64, c: Rgb) {
        for (k, ch) in text.chars().enumerate() {
            let Some(rows) = glyph(ch) else { continue };
            let ox = x + k as i64 * 4 * scale;
            for (row, bits) in rows.iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) != 0 {
                        self.fill_rect(ox + col * scale, y + row as i64 * scale, scale, scale, c);
                    }
                }
            }
        }
    }

    fn blit(&mut self, src: &RgbImage, x: u32, y: u32) {
        for (sx, sy, p) in src.enumerate_pixels() {
            self.img.put_pixel(x + sx, y + sy, *p);
        }
    }

    fn finish(self, caption: String) -> PlotImage {
        encode(self.img, caption)
    }
}

fn text_width(text: &str, scale: i64) -> i64 {
    (text.chars().count() as i64 * 4 - 1) * scale
}

fn encode(img: RgbImage, caption: String) -> PlotImage {
    let (width, height) = img.dimensions();
    let mut bytes = Vec::new();
    PngEncoder::new(&mut bytes)
        .write_image(img.as_raw(), width, height, ExtendedColorType::Rgb8)
        .expect("in-memory PNG encoding");
    PlotImage::from_parts(width, height, ImageFormat::Png, bytes, caption)
}

fn decode(image: &PlotImage) -> Result<RgbImage, RenderError> {
    image::load_from_memory_with_format(image.bytes(), image::ImageFormat::Png)
        .map(|d| d.to_rgb8())
        .map_err(|e| RenderError::Decode { format: ImageFormat::Png, reason: e.to_string() })
}

pub(super) fn dimensions(bytes: &[u8]) -> Result<(u32, u32), String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    Ok((img.width(), img.height()))
}

pub(super) fn pixels(image: &PlotImage) -> Result<(u32, u32, Vec<Rgb>), RenderError> {
    if image.format() != ImageFormat::Png {
        return Err(RenderError::Decode { format: ImageFormat::Png, reason: format!("image is {}", image.format()) });
    }
    let img = decode(image)?;
    let (w, h) = img.dimensions();
    Ok((w, h, img.pixels().map(|p| Rgb(p.0)).collect()))
}

pub(super) fn timeseries(signal: &TorqueSignal, style: &PlotStyle, caption: String) -> PlotImage {
    let mut canvas = Canvas::new(style.width, style.height, WHITE);
    let area = PlotArea::for_size(style.width, style.height);
    let duration = signal.duration();
    let whole_seconds = duration.floor() as i64;
    let x_step = if whole_seconds > 10 { (whole_seconds as f64 / 10.0).ceil() as usize } else { 1 };

    if style.grid {
        for v in -3..=3 {
            let y = area.y(f64::from(v));
            canvas.line((area.left, y), (area.right, y), 1, GRID_RGB, None);
        }
        for s in (0..=whole_seconds).step_by(x_step) {
            let x = area.x(s as f64, duration);
            canvas.line((x, area.top), (x, area.bottom), 1, GRID_RGB, None);
        }
    }
    canvas.line((area.left, area.bottom), (area.right, area.bottom), 1, AXIS_RGB, None);
    canvas.line((area.left, area.top), (area.left, area.bottom), 1, AXIS_RGB, None);

    for v in [Y_RANGE.0 as i64, 0, Y_RANGE.1 as i64] {
        let label = v.to_string();
        let x = area.left.round() as i64 - 4 - text_width(&label, 1);
        canvas.text(x, area.y(v as f64).round() as i64 - 2, &label, 1, AXIS_RGB);
    }
    for s in (0..=whole_seconds).step_by(x_step) {
        let label = s.to_string();
        let x = area.x(s as f64, duration).round() as i64 - text_width(&label, 1) / 2;
        canvas.text(x, area.bottom.round() as i64 + 5, &label, 1, AXIS_RGB);
    }

    let rate = signal.sample_rate();
    let pen = style.stroke_width.round().max(1.0) as i64;
    let points: Vec<(f64, f64)> =
        signal.samples().iter().enumerate().map(|(i, v)| (area.x(i as f64 / rate, duration), area.y(*v))).collect();
    if points.len() == 1 {
        canvas.line(points[0], points[0], pen, LINE_RGB, Some(&area));
    }
    for pair in points.windows(2) {
        canvas.line(pair[0], pair[1], pen, LINE_RGB, Some(&area));
    }
    canvas.finish(caption)
}

pub(super) fn concat(left: &PlotImage, right: &PlotImage, caption: String) -> Result<PlotImage, RenderError> {
    let (l, r) = (decode(left)?, decode(right)?);
    let mut canvas = Canvas::new(l.width() + r.width(), l.height(), WHITE);
    canvas.blit(&l, 0, 0);
    canvas.blit(&r, l.width(), 0);
    Ok(canvas.finish(caption))
}

pub(super) fn annotate(scene: &PlotImage, boxes: &[BBox]) -> Result<PlotImage, RenderError> {
    let base = decode(scene)?;
    let mut canvas = Canvas { img: base };
    for b in boxes {
        canvas.outline(i64::from(b.x), i64::from(b.y), i64::from(b.w), i64::from(b.h), 2, BOX_RGB);
    }
    // Labels go above their box when there is room, so a crop of the box
    // carries no label ink.
    for b in boxes {
        let scale = 2;
        let glyph_h = 5 * scale;
        let y = if b.y as i64 >= glyph_h + 2 { b.y as i64 - glyph_h - 2 } else { b.y as i64 + 3 };
        canvas.text(i64::from(b.x) + 1, y, &b.index.to_string(), scale, LABEL_RGB);
    }
    Ok(canvas.finish(scene.caption.clone()))
}

pub(super) fn crop(scene: &PlotImage, b: &BBox) -> Result<PlotImage, RenderError> {
    let img = decode(scene)?;
    let view = image::imageops::crop_imm(&img, b.x, b.y, b.w, b.h).to_image();
    Ok(encode(view, format!("container {}", b.index)))
}

pub(super) fn rects(width: u32, height: u32, rects: &[(BBox, Rgb)], caption: String) -> PlotImage {
    let mut canvas = Canvas::new(width, height, BACKDROP_RGB);
    for (b, color) in rects {
        let (x, y, w, h) = (i64::from(b.x), i64::from(b.y), i64::from(b.w), i64::from(b.h));
        canvas.fill_rect(x, y, w, h, *color);
        canvas.outline(x, y, w, h, 1, OUTLINE_RGB);
    }
    canvas.finish(caption)
}
