//! Scripted layered scenes: the ground truth behind the mock backends.
//!
//! A scene is a canvas with a background and a stack of object layers, each
//! carrying its full (unoccluded) mask and appearance. The photo handed to
//! the pipeline is a window of the canvas, so objects can continue past the
//! photo boundary.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::raster::{BBox, BinaryMask, ImageBuffer};

/// What a scene pixel belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Owner {
    Background,
    Layer(usize),
}

impl Serialize for Owner {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Owner::Background => s.serialize_str("background"),
            Owner::Layer(i) => s.serialize_u64(*i as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Owner {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Index(usize),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Index(i) => Ok(Owner::Layer(i)),
            Repr::Name(n) if n == "background" => Ok(Owner::Background),
            Repr::Name(n) => Err(serde::de::Error::custom(format!("unknown owner '{n}'"))),
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct SceneLayer {
    pub category: String,
    pub z: i32,
    pub score: f64,
    /// Full object extent on the canvas.
    pub mask: BinaryMask,
    pub appearance: ImageBuffer,
}

impl fmt::Debug for SceneLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SceneLayer")
            .field("category", &self.category)
            .field("z", &self.z)
            .field("area", &self.mask.area())
            .finish()
    }
}

/// Overrides for one generation call of the mock inpainter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RevealStep {
    /// Layers left out of the regenerated content.
    pub hide: Vec<usize>,
    /// Layers drawn into the regenerated content even when unseen.
    pub show: Vec<usize>,
}

/// Context-triggered hallucination: when `cue` is visible outside the
/// inpainting mask, layer `regenerate` is drawn into the masked region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasRule {
    pub cue: Owner,
    pub regenerate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedScene {
    pub background: ImageBuffer,
    /// Back-to-front.
    pub layers: Vec<SceneLayer>,
    /// Window of the canvas shown as the input photo.
    pub photo: BBox,
    pub reveal_script: Vec<RevealStep>,
    pub bias: Vec<BiasRule>,
    pub unknown_pairs: Vec<(usize, usize)>,
    /// Side of a mock feature cell in pixels.
    pub feature_cell: u32,
}

/// Pixel that no scene owner can claim (padding, voids).
pub const VOID: [u8; 3] = [255, 255, 255];

const BACKGROUND_CODE: u8 = 24;
const MAX_CODED_LAYERS: usize = 6;

/// Colour of a coded scene pixel: position in R/G, owner in B.
///
/// Every owner code avoids the values of the clean backdrops and padding, so
/// coded pixels are never confused with them.
pub fn coded_color(owner: Owner, x: u32, y: u32) -> [u8; 3] {
    let code = match owner {
        Owner::Background => BACKGROUND_CODE,
        Owner::Layer(i) => 56 + 32 * i as u8,
    };
    [x as u8, y as u8, code]
}

impl ScriptedScene {
    pub fn new(background: ImageBuffer, layers: Vec<SceneLayer>, photo: BBox) -> Result<Self> {
        let dims = background.dims();
        for l in &layers {
            if l.mask.dims() != dims || l.appearance.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: l.mask.dims(),
                });
            }
        }
        photo.check_within(dims.0, dims.1)?;
        Ok(Self {
            background,
            layers,
            photo,
            reveal_script: Vec::new(),
            bias: Vec::new(),
            unknown_pairs: Vec::new(),
            feature_cell: 1,
        })
    }

    pub fn width(&self) -> u32 {
        self.background.width()
    }

    pub fn height(&self) -> u32 {
        self.background.height()
    }

    /// Layer indices in paint order (ascending z, stable).
    pub fn draw_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.layers.len()).collect();
        order.sort_by_key(|&i| self.layers[i].z);
        order
    }

    /// Canvas rendering with the given layers left out.
    pub fn render(&self, hidden: &[bool]) -> ImageBuffer {
        let mut out = self.background.clone();
        for i in self.draw_order() {
            if hidden.get(i).copied().unwrap_or(false) {
                continue;
            }
            let layer = &self.layers[i];
            for (x, y) in layer.mask.iter_set() {
                out.put(x, y, layer.appearance.get(x, y));
            }
        }
        out
    }

    /// The input photo: everything drawn, cropped to the photo window.
    pub fn photo_image(&self) -> ImageBuffer {
        self.render(&[])
            .crop(self.photo)
            .expect("photo window validated at construction")
    }

    /// Owner of canvas pixel `(x, y)` if it currently shows `color`.
    pub fn owner_of(&self, x: u32, y: u32, color: [u8; 3]) -> Option<Owner> {
        for i in self.draw_order().into_iter().rev() {
            let l = &self.layers[i];
            if l.mask.get(x, y) && l.appearance.get(x, y) == color {
                return Some(Owner::Layer(i));
            }
        }
        (self.background.get(x, y) == color).then_some(Owner::Background)
    }

    /// Full mask of layer `i` in a `w × h` frame whose pixel `p` sits at
    /// canvas position `p + offset`.
    pub fn layer_mask_in_frame(&self, i: usize, w: u32, h: u32, offset: (i64, i64)) -> Result<BinaryMask> {
        self.layers[i].mask.placed(w, h, -offset.0, -offset.1)
    }

    /// Full mask of layer `i` in photo coordinates (clipped to the photo).
    pub fn layer_mask_in_photo(&self, i: usize) -> Result<BinaryMask> {
        self.layer_mask_in_frame(i, self.photo.width(), self.photo.height(), self.photo_offset())
    }

    /// Visible (top-most) region of layer `i` in photo coordinates.
    pub fn visible_mask_in_photo(&self, i: usize) -> Result<BinaryMask> {
        let mut vis = self.layer_mask_in_photo(i)?;
        let zi = self.layers[i].z;
        for (j, other) in self.layers.iter().enumerate() {
            let above = other.z > zi || (other.z == zi && j > i);
            if j != i && above {
                let m = self.layer_mask_in_photo(j)?;
                vis = vis.difference(&m)?;
            }
        }
        Ok(vis)
    }

    /// Canvas position of photo pixel (0, 0).
    pub fn photo_offset(&self) -> (i64, i64) {
        (self.photo.x0 as i64, self.photo.y0 as i64)
    }

    pub fn layer_index(&self, category: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.category == category)
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.background.as_raw());
        for l in &self.layers {
            h.update(l.category.as_bytes());
            h.update(l.z.to_le_bytes());
            h.update(l.score.to_le_bytes());
            h.update(l.mask.bits().iter().map(|&b| b as u8).collect::<Vec<_>>());
            h.update(l.appearance.as_raw());
        }
        h.update(format!(
            "{:?}{:?}{:?}{:?}{}",
            self.photo, self.reveal_script, self.bias, self.unknown_pairs, self.feature_cell
        ));
        hex::encode(h.finalize())
    }

    /// Reads a scene description; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: SceneFile = serde_json::from_str(&text)?;
        file.build(path.parent().unwrap_or_else(|| Path::new(".")))
    }
}

/// Geometry of a layer in a scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// `[x0, y0, x1, y1]`, half-open.
    Rect([u32; 4]),
    /// `[cx, cy, rx, ry]`.
    Ellipse([f64; 4]),
    /// Path to a mask PNG of canvas size.
    Mask(String),
}

impl Shape {
    fn rasterize(&self, w: u32, h: u32, base: &Path) -> Result<BinaryMask> {
        match self {
            Shape::Rect([x0, y0, x1, y1]) => {
                BinaryMask::from_fn(w, h, |x, y| x >= *x0 && x < *x1 && y >= *y0 && y < *y1)
            }
            Shape::Ellipse([cx, cy, rx, ry]) => BinaryMask::from_fn(w, h, |x, y| {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }),
            Shape::Mask(p) => {
                let m = io::read_mask(&base.join(p))?;
                if m.dims() != (w, h) {
                    return Err(Error::DimensionMismatch {
                        expected: (w, h),
                        actual: m.dims(),
                    });
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub category: String,
    pub z: i32,
    #[serde(default = "default_score")]
    pub score: f64,
    pub shape: Shape,
    /// Appearance PNG; coded colours when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<String>,
}

fn default_score() -> f64 {
    0.9
}

/// On-disk scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photo: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_cell: Option<u32>,
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reveal_script: Vec<RevealStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bias: Vec<BiasRule>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown_pairs: Vec<(usize, usize)>,
}

impl SceneFile {
    pub fn build(&self, base: &Path) -> Result<ScriptedScene> {
        let (w, h) = (self.width, self.height);
        let needs_codes = self.background.is_none() || self.layers.iter().any(|l| l.appearance.is_none());
        if needs_codes && (w > 256 || h > 256 || self.layers.len() > MAX_CODED_LAYERS) {
            return Err(Error::Config(format!(
                "coded scenes are limited to 256x256 and {MAX_CODED_LAYERS} layers"
            )));
        }
        let load_img = |p: &str| -> Result<ImageBuffer> {
            let img = io::read_image(&base.join(p))?;
            if img.dims() != (w, h) {
                return Err(Error::DimensionMismatch {
                    expected: (w, h),
                    actual: img.dims(),
                });
            }
            Ok(img)
        };
        let background = match &self.background {
            Some(p) => load_img(p)?,
            None => ImageBuffer::from_fn(w, h, |x, y| coded_color(Owner::Background, x, y))?,
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let appearance = match &spec.appearance {
                Some(p) => load_img(p)?,
                None => ImageBuffer::from_fn(w, h, |x, y| coded_color(Owner::Layer(i), x, y))?,
            };
            layers.push(SceneLayer {
                category: spec.category.clone(),
                z: spec.z,
                score: spec.score,
                mask: spec.shape.rasterize(w, h, base)?,
                appearance,
            });
        }
        let photo = match self.photo {
            Some(b) => b,
            None => BBox::new(0, 0, w, h)?,
        };
        let mut scene = ScriptedScene::new(background, layers, photo)?;
        let n = scene.layers.len();
        let check = |i: usize| {
            if i < n {
                Ok(())
            } else {
                Err(Error::Config(format!("scene refers to missing layer {i}")))
            }
        };
        for step in &self.reveal_script {
            step.hide.iter().chain(&step.show).try_for_each(|&i| check(i))?;
        }
        for rule in &self.bias {
            check(rule.regenerate)?;
            if let Owner::Layer(i) = rule.cue {
                check(i)?;
            }
        }
        for &(a, b) in &self.unknown_pairs {
            check(a)?;
            check(b)?;
        }
        scene.reveal_script = self.reveal_script.clone();
        scene.bias = self.bias.clone();
        scene.unknown_pairs = self.unknown_pairs.clone();
        scene.feature_cell = self.feature_cell.unwrap_or(1).max(1);
        Ok(scene)
    }
}

/// A ready-made scene plus the category to query in it.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub query: &'static str,
    pub file: SceneFile,
}

pub const PRESET_NAMES: [&str; 5] = ["surfer", "new-occluder", "edge", "cooccur", "unoccluded"];

fn rect_layer(category: &str, z: i32, r: [u32; 4]) -> LayerSpec {
    LayerSpec {
        category: category.into(),
        z,
        score: default_score(),
        shape: Shape::Rect(r),
        appearance: None,
    }
}

/// Built-in scenes covering the main pipeline behaviours.
pub fn preset(name: &str) -> Option<Preset> {
    let plain = |w, h, layers| SceneFile {
        width: w,
        height: h,
        photo: None,
        background: None,
        feature_cell: None,
        layers,
        reveal_script: vec![],
        bias: vec![],
        unknown_pairs: vec![],
    };
    let surfer = || {
        plain(
            96,
            96,
            vec![
                rect_layer("surfboard", 1, [20, 50, 76, 62]),
                rect_layer("person", 2, [40, 20, 56, 70]),
            ],
        )
    };
    Some(match name {
        // A person standing on a board hides its middle.
        "surfer" => Preset {
            name: "surfer",
            query: "surfboard",
            file: surfer(),
        },
        // The man is too far from the visible car to count as a neighbour
        // until the first pass grows the car up to him.
        "new-occluder" => Preset {
            name: "new-occluder",
            query: "car",
            file: plain(
                112,
                96,
                vec![
                    rect_layer("car", 1, [14, 40, 70, 60]),
                    rect_layer("man", 2, [56, 25, 70, 75]),
                    rect_layer("person", 3, [40, 25, 56, 75]),
                ],
            ),
        },
        // The object continues past the left edge of the photo.
        "edge" => Preset {
            name: "edge",
            query: "giraffe",
            file: SceneFile {
                photo: Some(BBox {
                    x0: 100,
                    y0: 0,
                    x1: 200,
                    y1: 100,
                }),
                ..plain(200, 100, vec![rect_layer("giraffe", 1, [60, 30, 150, 70])])
            },
        },
        // The surfer scene with a context bias that redraws the person
        // whenever background context is visible to the inpainter.
        "cooccur" => Preset {
            name: "cooccur",
            query: "surfboard",
            file: SceneFile {
                bias: vec![BiasRule {
                    cue: Owner::Background,
                    regenerate: 1,
                }],
                ..surfer()
            },
        },
        "unoccluded" => Preset {
            name: "unoccluded",
            query: "cup",
            file: plain(96, 96, vec![rect_layer("cup", 1, [30, 30, 60, 60])]),
        },
        _ => return None,
    })
}

/// Query category of [`random_scene`].
pub const RANDOM_QUERY: &str = "object";

/// A seeded two-object scene: an object partly hidden by an occluder, with
/// an optional distractor behind both. Between 30% and 90% of the object
/// stays visible.
pub fn random_scene(seed: u64) -> SceneFile {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    loop {
        let w = rng.random_range(48..=112u32);
        let h = rng.random_range(48..=112u32);
        let ow = rng.random_range(12..=w / 2);
        let oh = rng.random_range(12..=h / 2);
        let ox = rng.random_range(0..=w - ow);
        let oy = rng.random_range(0..=h - oh);
        let object = if rng.random_bool(0.5) {
            Shape::Rect([ox, oy, ox + ow, oy + oh])
        } else {
            Shape::Ellipse([
                ox as f64 + ow as f64 / 2.0,
                oy as f64 + oh as f64 / 2.0,
                ow as f64 / 2.0,
                oh as f64 / 2.0,
            ])
        };
        let cw = rng.random_range(6..=ow);
        let ch = rng.random_range(6..=oh);
        let cx = rng.random_range(ox.saturating_sub(cw / 2)..=(ox + ow - cw / 2).min(w - cw));
        let cy = rng.random_range(oy.saturating_sub(ch / 2)..=(oy + oh - ch / 2).min(h - ch));
        let mut layers = vec![
            LayerSpec {
                category: RANDOM_QUERY.into(),
                z: 1,
                score: 0.9,
                shape: object,
                appearance: None,
            },
            rect_layer("occluder", 2, [cx, cy, cx + cw, cy + ch]),
        ];
        if rng.random_bool(0.5) {
            let dw = rng.random_range(4..=w / 3);
            let dh = rng.random_range(4..=h / 3);
            let dx = rng.random_range(0..=w - dw);
            let dy = rng.random_range(0..=h - dh);
            layers.push(rect_layer("distractor", 0, [dx, dy, dx + dw, dy + dh]));
        }
        let file = SceneFile {
            width: w,
            height: h,
            photo: None,
            background: None,
            feature_cell: None,
            layers,
            reveal_script: vec![],
            bias: vec![],
            unknown_pairs: vec![],
        };
        let Ok(scene) = file.build(Path::new(".")) else {
            continue;
        };
        let (Ok(full), Ok(vis)) = (scene.layer_mask_in_photo(0), scene.visible_mask_in_photo(0)) else {
            continue;
        };
        let frac = vis.area() as f64 / full.area().max(1) as f64;
        if (0.3..=0.9).contains(&frac) {
            return file;
        }
    }
}
