//! Image artifacts handed to the reasoner: standardized time-series plots,
//! side-by-side pairs, annotated scenes and container crops.
//!
//! SVG output is plain text with fixed number formatting, so identical
//! inputs give identical bytes. PNG output is rasterized directly (no SVG
//! round trip) for backends whose wire format needs raster images.

mod raster;
mod svg;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{SignalStage, TorqueSignal};

pub use raster::{Rgb, LABEL_RGB};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("signal has no samples")]
    EmptySignal,
    #[error("expected a standardized signal, got {0}")]
    WrongStage(SignalStage),
    #[error("images differ: {0}")]
    MismatchedDimensions(String),
    #[error("box {index} ({x},{y} {w}x{h}) does not fit a {width}x{height} image")]
    BoxOutOfBounds { index: usize, x: u32, y: u32, w: u32, h: u32, width: u32, height: u32 },
    #[error("duplicate box index {0}")]
    DuplicateIndex(usize),
    #[error("image does not decode as {format}: {reason}")]
    Decode { format: ImageFormat, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Svg,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Svg => "svg",
            ImageFormat::Png => "png",
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            ImageFormat::Svg => "image/svg+xml",
            ImageFormat::Png => "image/png",
        }
    }
}

impl fmt::Display for ImageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl std::str::FromStr for ImageFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "svg" => Ok(ImageFormat::Svg),
            "png" => Ok(ImageFormat::Png),
            other => Err(format!("unknown image format '{other}'")),
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct PlotImage {
    width: u32,
    height: u32,
    format: ImageFormat,
    bytes: Vec<u8>,
    pub caption: String,
}

impl fmt::Debug for PlotImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlotImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("format", &self.format)
            .field("bytes", &self.bytes.len())
            .field("caption", &self.caption)
            .finish()
    }
}

impl PlotImage {
    /// Wraps encoded bytes after checking they decode as `format` with the
    /// stated dimensions.
    pub fn from_bytes(format: ImageFormat, bytes: Vec<u8>, caption: impl Into<String>) -> Result<Self, RenderError> {
        let (width, height) = match format {
            ImageFormat::Svg => svg::dimensions(&bytes),
            ImageFormat::Png => raster::dimensions(&bytes),
        }
        .map_err(|reason| RenderError::Decode { format, reason })?;
        if width == 0 || height == 0 {
            return Err(RenderError::Decode { format, reason: "zero-sized image".into() });
        }
        Ok(Self { width, height, format, bytes, caption: caption.into() })
    }

    pub(crate) fn from_parts(width: u32, height: u32, format: ImageFormat, bytes: Vec<u8>, caption: String) -> Self {
        Self { width, height, format, bytes, caption }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn format(&self) -> ImageFormat {
        self.format
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn load(path: &std::path::Path, caption: impl Into<String>) -> Result<Self, RenderError> {
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("png") => ImageFormat::Png,
            _ => ImageFormat::Svg,
        };
        let bytes = std::fs::read(path).map_err(|e| RenderError::Decode { format, reason: e.to_string() })?;
        Self::from_bytes(format, bytes, caption)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub index: usize,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn check_within(&self, width: u32, height: u32) -> Result<(), RenderError> {
        let fits = self.w > 0
            && self.h > 0
            && u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height);
        if fits {
            Ok(())
        } else {
            Err(RenderError::BoxOutOfBounds {
                index: self.index,
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                width,
                height,
            })
        }
    }
}

pub fn check_boxes(boxes: &[BBox], width: u32, height: u32) -> Result<(), RenderError> {
    let mut seen = std::collections::HashSet::new();
    for b in boxes {
        b.check_within(width, height)?;
        if !seen.insert(b.index) {
            return Err(RenderError::DuplicateIndex(b.index));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotStyle {
    pub width: u32,
    pub height: u32,
    pub stroke_width: f64,
    pub grid: bool,
    pub format: ImageFormat,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self { width: 400, height: 300, stroke_width: 1.5, grid: true, format: ImageFormat::Svg }
    }
}

/// Fixed vertical range of standardized plots.
pub const Y_RANGE: (f64, f64) = (-3.0, 3.0);

pub(crate) struct PlotArea {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl PlotArea {
    pub fn for_size(width: u32, height: u32) -> Self {
        let (w, h) = (f64::from(width), f64::from(height));
        Self { left: 44.0_f64.min(w / 4.0), top: 12.0_f64.min(h / 8.0), right: w - 10.0_f64.min(w / 8.0), bottom: h - 32.0_f64.min(h / 4.0) }
    }

    pub fn x(&self, t: f64, duration: f64) -> f64 {
        self.left + (self.right - self.left) * if duration > 0.0 { t / duration } else { 0.0 }
    }

    pub fn y(&self, v: f64) -> f64 {
        let (lo, hi) = Y_RANGE;
        self.bottom - (self.bottom - self.top) * (v - lo) / (hi - lo)
    }
}

pub fn render_timeseries(signal: &TorqueSignal, style: &PlotStyle) -> Result<PlotImage, RenderError> {
    if signal.stage() != SignalStage::Standardized {
        return Err(RenderError::WrongStage(signal.stage()));
    }
    if signal.is_empty() {
        return Err(RenderError::EmptySignal);
    }
    if style.width < 16 || style.height < 16 {
        return Err(RenderError::MismatchedDimensions(format!("plot size {}x{} is too small", style.width, style.height)));
    }
    let caption = match (signal.meta.liquid_id, signal.meta.fill_level) {
        (Some(id), Some(fill)) => format!("standardized torque, container {id}, {fill} fill"),
        _ => "standardized torque".to_string(),
    };
    let image = match style.format {
        ImageFormat::Svg => svg::timeseries(signal, style, caption),
        ImageFormat::Png => raster::timeseries(signal, style, caption),
    };
    Ok(image)
}

pub fn concat_horizontal(left: &PlotImage, right: &PlotImage) -> Result<PlotImage, RenderError> {
    if left.format != right.format {
        return Err(RenderError::MismatchedDimensions(format!("formats {} and {}", left.format, right.format)));
    }
    if left.height != right.height {
        return Err(RenderError::MismatchedDimensions(format!("heights {} and {}", left.height, right.height)));
    }
    let caption = format!("(left) {} (right) {}", left.caption, right.caption);
    Ok(match left.format {
        ImageFormat::Svg => svg::concat(left, right, caption),
        ImageFormat::Png => raster::concat(left, right, caption)?,
    })
}

pub fn annotate_scene(scene: &PlotImage, boxes: &[BBox]) -> Result<PlotImage, RenderError> {
    check_boxes(boxes, scene.width, scene.height)?;
    if boxes.is_empty() {
        return Ok(scene.clone());
    }
    match scene.format {
        ImageFormat::Svg => Ok(svg::annotate(scene, boxes)),
        ImageFormat::Png => raster::annotate(scene, boxes),
    }
}

pub fn crop(scene: &PlotImage, bbox: &BBox) -> Result<PlotImage, RenderError> {
    bbox.check_within(scene.width, scene.height)?;
    match scene.format {
        ImageFormat::Svg => Ok(svg::crop(scene, bbox)),
        ImageFormat::Png => raster::crop(scene, bbox),
    }
}

/// Filled rectangles on a plain background; used to synthesize scenes.
pub fn draw_rects(width: u32, height: u32, format: ImageFormat, rects: &[(BBox, Rgb)], caption: String) -> PlotImage {
    match format {
        ImageFormat::Svg => svg::rects(width, height, rects, caption),
        ImageFormat::Png => raster::rects(width, height, rects, caption),
    }
}

/// Decoded RGB pixels of a PNG image, row-major.
pub fn png_pixels(image: &PlotImage) -> Result<(u32, u32, Vec<Rgb>), RenderError> {
    raster::pixels(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SignalMeta;

    fn standardized(n: usize) -> TorqueSignal {
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.063).sin() * (-(i as f64) / 400.0).exp()).collect();
        let meta = SignalMeta { liquid_id: Some(3), fill_level: None, seed: None, stage: SignalStage::Filtered };
        crate::dsp::standardize(&TorqueSignal::new(xs, 100.0, meta).unwrap()).unwrap()
    }

    fn polyline_points(svg: &str) -> usize {
        let start = svg.find("<polyline").unwrap();
        let attr = &svg[start..];
        let points = attr.split("points=\"").nth(1).unwrap();
        points[..points.find('"').unwrap()].split_whitespace().count()
    }

    #[test]
    fn one_vertex_per_sample() {
        let image = render_timeseries(&standardized(1000), &PlotStyle::default()).unwrap();
        let text = std::str::from_utf8(image.bytes()).unwrap();
        assert_eq!(polyline_points(text), 1000);
        assert_eq!((image.width(), image.height()), (400, 300));
        assert!(text.contains("version=\"1.1\""));
    }

    #[test]
    fn empty_signal_rejected() {
        let meta = SignalMeta { liquid_id: None, fill_level: None, seed: None, stage: SignalStage::Standardized };
        let empty = TorqueSignal::new(vec![], 100.0, meta).unwrap();
        assert!(matches!(render_timeseries(&empty, &PlotStyle::default()), Err(RenderError::EmptySignal)));
    }

    #[test]
    fn rendering_is_deterministic() {
        for format in [ImageFormat::Svg, ImageFormat::Png] {
            let style = PlotStyle { format, ..PlotStyle::default() };
            let a = render_timeseries(&standardized(1000), &style).unwrap();
            let b = render_timeseries(&standardized(1000), &style).unwrap();
            assert_eq!(a.bytes(), b.bytes());
            PlotImage::from_bytes(format, a.bytes().to_vec(), "").unwrap();
        }
    }

    #[test]
    fn concat_adds_widths() {
        for format in [ImageFormat::Svg, ImageFormat::Png] {
            let style = PlotStyle { format, ..PlotStyle::default() };
            let a = render_timeseries(&standardized(1000), &style).unwrap();
            let b = render_timeseries(&standardized(600), &style).unwrap();
            let ab = concat_horizontal(&a, &b).unwrap();
            let ba = concat_horizontal(&b, &a).unwrap();
            assert_eq!((ab.width(), ab.height()), (800, 300));
            assert_ne!(ab.bytes(), ba.bytes());
            assert!(ab.caption.starts_with("(left) "));
            assert!(ab.caption.contains(" (right) "));
            let reparsed = PlotImage::from_bytes(format, ab.bytes().to_vec(), "").unwrap();
            assert_eq!(reparsed.width(), 800);
        }
    }

    #[test]
    fn concat_rejects_height_mismatch() {
        let a = render_timeseries(&standardized(100), &PlotStyle::default()).unwrap();
        let b = render_timeseries(&standardized(100), &PlotStyle { height: 200, ..PlotStyle::default() }).unwrap();
        assert!(matches!(concat_horizontal(&a, &b), Err(RenderError::MismatchedDimensions(_))));
        let c = render_timeseries(&standardized(100), &PlotStyle { format: ImageFormat::Png, ..PlotStyle::default() }).unwrap();
        assert!(matches!(concat_horizontal(&a, &c), Err(RenderError::MismatchedDimensions(_))));
    }

    fn scene(format: ImageFormat) -> (PlotImage, Vec<BBox>) {
        let boxes: Vec<BBox> = (0..10).map(|i| BBox { index: i, x: 10 + 60 * i as u32, y: 40, w: 50, h: 100 }).collect();
        let rects: Vec<(BBox, Rgb)> = boxes.iter().map(|b| (*b, Rgb([120, 80, 20]))).collect();
        (draw_rects(620, 160, format, &rects, "scene".into()), boxes)
    }

    #[test]
    fn annotate_draws_every_box_and_label() {
        let (image, boxes) = scene(ImageFormat::Svg);
        let annotated = annotate_scene(&image, &boxes).unwrap();
        let text = std::str::from_utf8(annotated.bytes()).unwrap();
        assert_eq!(text.matches("class=\"bbox\"").count(), 10);
        assert_eq!(text.matches("class=\"bbox-label\"").count(), 10);
        for i in 0..10 {
            assert!(text.contains(&format!(">{i}</text>")));
        }
        assert_eq!(annotate_scene(&image, &[]).unwrap(), image);
    }

    #[test]
    fn annotate_rejects_out_of_bounds() {
        let (image, _) = scene(ImageFormat::Png);
        let bad = BBox { index: 0, x: 600, y: 0, w: 50, h: 10 };
        assert!(matches!(annotate_scene(&image, &[bad]), Err(RenderError::BoxOutOfBounds { .. })));
        assert!(matches!(crop(&image, &bad), Err(RenderError::BoxOutOfBounds { .. })));
    }

    #[test]
    fn crop_dimensions() {
        for format in [ImageFormat::Svg, ImageFormat::Png] {
            let (image, _) = scene(format);
            let full = BBox { index: 0, x: 0, y: 0, w: image.width(), h: image.height() };
            let whole = crop(&image, &full).unwrap();
            assert_eq!((whole.width(), whole.height()), (image.width(), image.height()));
            let tiny = crop(&image, &BBox { index: 0, x: 5, y: 5, w: 1, h: 1 }).unwrap();
            assert_eq!((tiny.width(), tiny.height()), (1, 1));
        }
        let (png, _) = scene(ImageFormat::Png);
        let full = BBox { index: 0, x: 0, y: 0, w: png.width(), h: png.height() };
        assert_eq!(png_pixels(&crop(&png, &full).unwrap()).unwrap(), png_pixels(&png).unwrap());
    }

    #[test]
    fn crop_of_annotated_scene_excludes_other_labels() {
        let (image, boxes) = scene(ImageFormat::Png);
        let annotated = annotate_scene(&image, &boxes).unwrap();
        let (_, _, all) = png_pixels(&annotated).unwrap();
        assert!(all.contains(&LABEL_RGB));
        for b in &boxes {
            let (w, h, pixels) = png_pixels(&crop(&annotated, b).unwrap()).unwrap();
            assert_eq!((w, h), (b.w, b.h));
            assert!(!pixels.contains(&LABEL_RGB), "label ink inside crop {}", b.index);
        }
    }
}
