//! Scene detections and per-container visual descriptors.
//!
//! A fixture directory holds `manifest.json` (the label setting),
//! `detections.json`, `descriptors.json` and optionally `scene.svg` or
//! `scene.png`.

use std::path::Path;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ContainerMaterial, ContainerShape, LiquidSpec, Transparency, VisualDescriptor};
use crate::render::{self, BBox, ImageFormat, PlotImage, RenderError, Rgb};

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("detection provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no containers detected")]
    NoDetections,
    #[error("unknown container index {0}")]
    UnknownIndex(usize),
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    WithLabels,
    WithoutLabels,
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::WithoutLabels, Setting::WithLabels];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::WithLabels => "with-labels",
            Setting::WithoutLabels => "without-labels",
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "with-labels" | "labels" => Ok(Setting::WithLabels),
            "without-labels" | "no-labels" | "nolabels" => Ok(Setting::WithoutLabels),
            other => Err(format!("unknown setting '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFixture {
    setting: Setting,
    scene_image: Option<PlotImage>,
    detections: Vec<BBox>,
    descriptors: Vec<VisualDescriptor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    setting: Setting,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> VisionError {
    VisionError::Io(format!("{}: {e}", path.display()))
}

impl SceneFixture {
    /// Builds a fixture, sorting detections and descriptors by index. Label
    /// text is dropped from every descriptor when the setting has no labels.
    pub fn new(
        setting: Setting,
        scene_image: Option<PlotImage>,
        mut detections: Vec<BBox>,
        mut descriptors: Vec<VisualDescriptor>,
    ) -> Result<Self, VisionError> {
        detections.sort_by_key(|b| b.index);
        descriptors.sort_by_key(|d| d.index);
        let det: Vec<usize> = detections.iter().map(|b| b.index).collect();
        let desc: Vec<usize> = descriptors.iter().map(|d| d.index).collect();
        if det != desc {
            return Err(VisionError::InvalidFixture(format!("detection indices {det:?} differ from descriptor indices {desc:?}")));
        }
        if det.windows(2).any(|w| w[0] == w[1]) {
            return Err(VisionError::InvalidFixture("duplicate container index".into()));
        }
        if let Some(scene) = &scene_image {
            render::check_boxes(&detections, scene.width(), scene.height())?;
        }
        if setting == Setting::WithoutLabels {
            for d in &mut descriptors {
                d.label_text = None;
            }
        }
        Ok(Self { setting, scene_image, detections, descriptors })
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    pub fn scene_image(&self) -> Option<&PlotImage> {
        self.scene_image.as_ref()
    }

    pub fn detections(&self) -> &[BBox] {
        &self.detections
    }

    pub fn descriptors(&self) -> &[VisualDescriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn bbox(&self, index: usize) -> Result<BBox, VisionError> {
        self.detections.iter().find(|b| b.index == index).copied().ok_or(VisionError::UnknownIndex(index))
    }

    pub fn load(dir: &Path) -> Result<Self, VisionError> {
        let read = |name: &str| std::fs::read_to_string(dir.join(name)).map_err(|e| io_err(&dir.join(name), e));
        let manifest: Manifest = serde_json::from_str(&read("manifest.json")?).map_err(|e| io_err(&dir.join("manifest.json"), e))?;
        let detections: Vec<BBox> =
            serde_json::from_str(&read("detections.json")?).map_err(|e| io_err(&dir.join("detections.json"), e))?;
        let descriptors: Vec<VisualDescriptor> =
            serde_json::from_str(&read("descriptors.json")?).map_err(|e| io_err(&dir.join("descriptors.json"), e))?;
        let mut scene_image = None;
        for format in [ImageFormat::Svg, ImageFormat::Png] {
            let path = dir.join(format!("scene.{}", format.extension()));
            if path.exists() {
                scene_image = Some(PlotImage::load(&path, "scene")?);
                break;
            }
        }
        Self::new(manifest.setting, scene_image, detections, descriptors)
    }

    pub fn save(&self, dir: &Path) -> Result<(), VisionError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let write = |name: &str, text: String| std::fs::write(dir.join(name), text + "\n").map_err(|e| io_err(&dir.join(name), e));
        write("manifest.json", pretty(&Manifest { setting: self.setting }))?;
        write("detections.json", pretty(&self.detections))?;
        write("descriptors.json", pretty(&self.descriptors))?;
        for format in [ImageFormat::Svg, ImageFormat::Png] {
            let path = dir.join(format!("scene.{}", format.extension()));
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
            }
        }
        if let Some(scene) = &self.scene_image {
            let path = dir.join(format!("scene.{}", scene.format().extension()));
            std::fs::write(&path, scene.bytes()).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

pub fn descriptor_of(fixture: &SceneFixture, index: usize) -> Result<VisualDescriptor, VisionError> {
    let mut d = fixture.descriptors.iter().find(|d| d.index == index).cloned().ok_or(VisionError::UnknownIndex(index))?;
    if fixture.setting == Setting::WithoutLabels {
        d.label_text = None;
    }
    Ok(d)
}

pub trait DetectionProvider: Send + Sync {
    fn detect(&self, scene: &PlotImage, queries: &[String]) -> Result<Vec<BBox>, VisionError>;
}

/// Returns stored detections verbatim.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    detections: Vec<BBox>,
}

impl FixtureProvider {
    pub fn new(detections: Vec<BBox>) -> Self {
        Self { detections }
    }

    pub fn from_fixture(fixture: &SceneFixture) -> Self {
        Self::new(fixture.detections.clone())
    }
}

impl DetectionProvider for FixtureProvider {
    fn detect(&self, scene: &PlotImage, _queries: &[String]) -> Result<Vec<BBox>, VisionError> {
        if self.detections.is_empty() {
            return Err(VisionError::NoDetections);
        }
        render::check_boxes(&self.detections, scene.width(), scene.height())?;
        Ok(self.detections.clone())
    }
}

/// Client for an external open-vocabulary detector.
///
/// Request: `{"image": <base64>, "mime": ..., "queries": [...]}`.
/// Response: `{"boxes": [{"x": .., "y": .., "w": .., "h": ..}, ...]}` in
/// pixels. Boxes are indexed left to right.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    endpoint: String,
    client: reqwest::blocking::Client,
}

#[derive(Debug, Deserialize)]
struct RemoteBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Deserialize)]
struct RemoteResponse {
    boxes: Vec<RemoteBox>,
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, VisionError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| VisionError::ProviderUnavailable(e.to_string()))?;
        Ok(Self { endpoint: endpoint.into(), client })
    }
}

/// Rounds service boxes to whole pixels, clamps them to the image and
/// indexes them left to right (ties broken top to bottom).
fn index_boxes(raw: &[RemoteBox], width: u32, height: u32) -> Vec<BBox> {
    let mut boxes: Vec<BBox> = raw
        .iter()
        .filter_map(|r| {
            let x = r.x.max(0.0).round().min(f64::from(width - 1)) as u32;
            let y = r.y.max(0.0).round().min(f64::from(height - 1)) as u32;
            let w = (r.w.round() as i64).clamp(0, i64::from(width - x)) as u32;
            let h = (r.h.round() as i64).clamp(0, i64::from(height - y)) as u32;
            (w > 0 && h > 0).then_some(BBox { index: 0, x, y, w, h })
        })
        .collect();
    boxes.sort_by_key(|b| (b.x, b.y));
    for (i, b) in boxes.iter_mut().enumerate() {
        b.index = i;
    }
    boxes
}

impl DetectionProvider for RemoteProvider {
    fn detect(&self, scene: &PlotImage, queries: &[String]) -> Result<Vec<BBox>, VisionError> {
        let body = serde_json::json!({
            "image": base64::engine::general_purpose::STANDARD.encode(scene.bytes()),
            "mime": scene.format().mime(),
            "queries": queries,
        });
        let response = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| VisionError::ProviderUnavailable(e.to_string()))?;
        let parsed: RemoteResponse = response.json().map_err(|e| VisionError::ProviderUnavailable(format!("bad response: {e}")))?;
        let boxes = index_boxes(&parsed.boxes, scene.width(), scene.height());
        if boxes.is_empty() {
            return Err(VisionError::NoDetections);
        }
        Ok(boxes)
    }
}

pub fn detect(provider: &dyn DetectionProvider, scene: &PlotImage, queries: &[String]) -> Result<Vec<BBox>, VisionError> {
    provider.detect(scene, queries)
}

/// Fill color used when drawing a liquid of the given coarse color.
pub fn swatch(color: &str) -> Rgb {
    match color {
        "dark brown" => Rgb([62, 32, 18]),
        "clear" => Rgb([222, 234, 240]),
        "yellow-green" => Rgb([184, 178, 62]),
        "amber" => Rgb([204, 132, 34]),
        "orange" => Rgb([244, 152, 34]),
        "white" => Rgb([246, 246, 240]),
        _ => Rgb([150, 150, 150]),
    }
}

pub fn transparency_of(liquid: &LiquidSpec) -> Transparency {
    if liquid.container.opaque {
        Transparency::Opaque
    } else if liquid.color_descriptor == "dark brown" || liquid.nominal_viscosity >= 1000.0 {
        Transparency::Translucent
    } else {
        Transparency::Transparent
    }
}

fn shape_name(shape: ContainerShape) -> &'static str {
    match shape {
        ContainerShape::Bottle => "bottle",
        ContainerShape::Carton => "carton",
        ContainerShape::Jar => "jar",
        ContainerShape::Can => "can",
    }
}

fn material_name(material: ContainerMaterial) -> &'static str {
    match material {
        ContainerMaterial::Plastic => "plastic",
        ContainerMaterial::Glass => "glass",
        ContainerMaterial::Paper => "paper",
        ContainerMaterial::Metal => "metal",
    }
}

pub fn descriptor_for(liquid: &LiquidSpec, index: usize) -> VisualDescriptor {
    VisualDescriptor {
        index,
        color: liquid.color_descriptor.clone(),
        transparency: transparency_of(liquid),
        shape: shape_name(liquid.container.shape).to_string(),
        material: material_name(liquid.container.material).to_string(),
        label_text: liquid.label_text.clone(),
    }
}

pub const SCENE_HEIGHT: u32 = 230;
const SLOT: u32 = 96;
const MARGIN: u32 = 20;
const CONTAINER_WIDTH: u32 = 72;
const PIXELS_PER_METER: f64 = 600.0;

/// Lays the registry out left to right, container `i` at slot `i`, and
/// draws a plain scene with one box per container.
pub fn synthesize_scene(registry: &[LiquidSpec], setting: Setting, format: ImageFormat) -> Result<SceneFixture, VisionError> {
    let width = 2 * MARGIN + SLOT * (registry.len() as u32).saturating_sub(1) + CONTAINER_WIDTH;
    let floor = SCENE_HEIGHT - 10;
    let mut detections = Vec::with_capacity(registry.len());
    let mut rects = Vec::with_capacity(registry.len());
    for (i, liquid) in registry.iter().enumerate() {
        let h = ((liquid.container.effective_length * PIXELS_PER_METER).round() as u32).clamp(20, floor - 20);
        let b = BBox { index: i, x: MARGIN + SLOT * i as u32, y: floor - h, w: CONTAINER_WIDTH, h };
        detections.push(b);
        rects.push((b, swatch(&liquid.color_descriptor)));
    }
    let caption = format!("{} containers, {}", registry.len(), setting);
    let image = render::draw_rects(width, SCENE_HEIGHT, format, &rects, caption);
    let descriptors = registry.iter().enumerate().map(|(i, l)| descriptor_for(l, i)).collect();
    SceneFixture::new(setting, Some(image), detections, descriptors)
}

fn bundled_file(setting: Setting, name: &str) -> &'static str {
    match (setting, name) {
        (Setting::WithLabels, "manifest.json") => include_str!("../data/fixtures/with-labels/manifest.json"),
        (Setting::WithLabels, "detections.json") => include_str!("../data/fixtures/with-labels/detections.json"),
        (Setting::WithLabels, "descriptors.json") => include_str!("../data/fixtures/with-labels/descriptors.json"),
        (Setting::WithLabels, _) => include_str!("../data/fixtures/with-labels/scene.svg"),
        (Setting::WithoutLabels, "manifest.json") => include_str!("../data/fixtures/without-labels/manifest.json"),
        (Setting::WithoutLabels, "detections.json") => include_str!("../data/fixtures/without-labels/detections.json"),
        (Setting::WithoutLabels, "descriptors.json") => include_str!("../data/fixtures/without-labels/descriptors.json"),
        (Setting::WithoutLabels, _) => include_str!("../data/fixtures/without-labels/scene.svg"),
    }
}

/// The 10-container scene shipped with the crate.
pub fn bundled_fixture(setting: Setting) -> SceneFixture {
    let parse = |name: &str| bundled_file(setting, name);
    let manifest: Manifest = serde_json::from_str(parse("manifest.json")).expect("bundled manifest");
    let detections = serde_json::from_str(parse("detections.json")).expect("bundled detections");
    let descriptors = serde_json::from_str(parse("descriptors.json")).expect("bundled descriptors");
    let scene = PlotImage::from_bytes(ImageFormat::Svg, parse("scene.svg").as_bytes().to_vec(), "scene").expect("bundled scene");
    SceneFixture::new(manifest.setting, Some(scene), detections, descriptors).expect("bundled fixture is consistent")
}
