//! Padding past the image boundary, the square zoom crop around the query
//! object, and the mapping back to original coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BBox, BinaryMask, ImageBuffer, Side, SideSet};

/// Padding fill; always covered by the inpainting mask.
pub const PAD_FILL: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl Padding {
    pub fn on(sides: SideSet, amount: u32) -> Self {
        let pick = |s| if sides.contains(s) { amount } else { 0 };
        Self {
            left: pick(Side::Left),
            top: pick(Side::Top),
            right: pick(Side::Right),
            bottom: pick(Side::Bottom),
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// Relationship between an input raster and the framed crop handed to the
/// sampler: padding first, then an axis-aligned crop of the padded raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTransform {
    pub pad: Padding,
    /// Crop window in padded coordinates.
    pub crop: BBox,
    pub original_size: (u32, u32),
    pub padded_size: (u32, u32),
}

impl FrameTransform {
    pub fn identity(width: u32, height: u32) -> Result<Self> {
        Ok(Self {
            pad: Padding::default(),
            crop: BBox::new(0, 0, width, height)?,
            original_size: (width, height),
            padded_size: (width, height),
        })
    }

    pub fn framed_size(&self) -> (u32, u32) {
        (self.crop.width(), self.crop.height())
    }

    pub fn to_framed(&self, p: (i64, i64)) -> (i64, i64) {
        (
            p.0 + self.pad.left as i64 - self.crop.x0 as i64,
            p.1 + self.pad.top as i64 - self.crop.y0 as i64,
        )
    }

    pub fn to_original(&self, p: (i64, i64)) -> (i64, i64) {
        (
            p.0 - self.pad.left as i64 + self.crop.x0 as i64,
            p.1 - self.pad.top as i64 + self.crop.y0 as i64,
        )
    }

    /// Position of original pixel (0, 0) in framed coordinates.
    pub fn original_origin(&self) -> (i64, i64) {
        self.to_framed((0, 0))
    }
}

/// Image, inpainting mask and query mask in a common frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Framed {
    pub image: ImageBuffer,
    pub occ: BinaryMask,
    pub modal: BinaryMask,
    pub transform: FrameTransform,
}

/// Pads `amount` white pixels on each side in `sides`; the padded band is
/// added to the inpainting mask since the boundary hides whatever lies there.
pub fn conditional_pad(
    image: &ImageBuffer,
    occ: &BinaryMask,
    modal: &BinaryMask,
    sides: SideSet,
    amount: u32,
) -> Result<Framed> {
    let (w, h) = image.dims();
    for m in [occ, modal] {
        if m.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                actual: m.dims(),
            });
        }
    }
    let pad = Padding::on(sides, amount);
    let (pw, ph) = (w + pad.left + pad.right, h + pad.top + pad.bottom);
    let mut padded = ImageBuffer::filled(pw, ph, PAD_FILL)?;
    padded.paste(image, pad.left, pad.top)?;
    let (dx, dy) = (pad.left as i64, pad.top as i64);
    let inside = BBox::new(pad.left, pad.top, pad.left + w, pad.top + h)?;
    let band = BinaryMask::from_fn(pw, ph, |x, y| !inside.contains(x, y))?;
    let occ = occ.placed(pw, ph, dx, dy)?.union(&band)?;
    let modal = modal.placed(pw, ph, dx, dy)?;
    Ok(Framed {
        image: padded,
        occ,
        modal,
        transform: FrameTransform {
            pad,
            crop: BBox::new(0, 0, pw, ph)?,
            original_size: (w, h),
            padded_size: (pw, ph),
        },
    })
}

/// Square window around the query: its bounding box grown by `alpha` (plus
/// `beta` when it touches the boundary), widened symmetrically on the short
/// axis, then clamped to the raster.
pub fn crop_window(modal_bbox: BBox, raster: (u32, u32), alpha: u32, beta: u32, touching: bool) -> Result<BBox> {
    let m = alpha as i64 + if touching { beta as i64 } else { 0 };
    let (mut x0, mut y0) = (modal_bbox.x0 as i64 - m, modal_bbox.y0 as i64 - m);
    let (mut x1, mut y1) = (modal_bbox.x1 as i64 + m, modal_bbox.y1 as i64 + m);
    let (w, h) = (x1 - x0, y1 - y0);
    if w > h {
        let extra = w - h;
        y0 -= extra / 2;
        y1 += extra - extra / 2;
    } else if h > w {
        let extra = h - w;
        x0 -= extra / 2;
        x1 += extra - extra / 2;
    }
    let clamp = |v: i64, hi: u32| v.clamp(0, hi as i64) as u32;
    BBox::new(clamp(x0, raster.0), clamp(y0, raster.1), clamp(x1, raster.0), clamp(y1, raster.1))
}

/// Crops the padded frame around the query object.
pub fn square_crop(padded: &Framed, alpha: u32, beta: u32, touching: bool) -> Result<Framed> {
    let bbox = padded.modal.bbox().ok_or(Error::EmptyMask("modal mask"))?;
    let window = crop_window(bbox, padded.image.dims(), alpha, beta, touching)?;
    let base = padded.transform.crop;
    let crop = BBox::new(
        base.x0 + window.x0,
        base.y0 + window.y0,
        base.x0 + window.x1,
        base.y0 + window.y1,
    )?;
    Ok(Framed {
        image: padded.image.crop(window)?,
        occ: padded.occ.crop(window)?,
        modal: padded.modal.crop(window)?,
        transform: FrameTransform {
            crop,
            ..padded.transform
        },
    })
}

/// Writes a completed crop back into the padded raster it was cut from.
pub fn paste_back(padded: &ImageBuffer, completed: &ImageBuffer, transform: &FrameTransform) -> Result<ImageBuffer> {
    if completed.dims() != transform.framed_size() {
        return Err(Error::DimensionMismatch {
            expected: transform.framed_size(),
            actual: completed.dims(),
        });
    }
    let mut out = padded.clone();
    out.paste(completed, transform.crop.x0, transform.crop.y0)?;
    Ok(out)
}

/// An overlay and where the original image sits inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub image: ImageBuffer,
    pub mask: BinaryMask,
    /// Position of original pixel (0, 0) in the overlay.
    pub origin: (u32, u32),
}

/// Pastes the object pixels of `completed` onto `original`, extending the
/// canvas as far as the object now reaches. `origin` is the position of
/// original pixel (0, 0) in `completed` coordinates. Extension pixels that
/// are not object come from `completed` where it has them, white elsewhere.
pub fn overlay_object(
    original: &ImageBuffer,
    completed: &ImageBuffer,
    amodal: &BinaryMask,
    origin: (i64, i64),
) -> Result<Overlay> {
    if completed.dims() != amodal.dims() {
        return Err(Error::DimensionMismatch {
            expected: completed.dims(),
            actual: amodal.dims(),
        });
    }
    let (ow, oh) = (original.width() as i64, original.height() as i64);
    // Overlay bounds in completed coordinates.
    let (mut x0, mut y0, mut x1, mut y1) = (origin.0, origin.1, origin.0 + ow, origin.1 + oh);
    if let Some(b) = amodal.bbox() {
        x0 = x0.min(b.x0 as i64);
        y0 = y0.min(b.y0 as i64);
        x1 = x1.max(b.x1 as i64);
        y1 = y1.max(b.y1 as i64);
    }
    let (w, h) = ((x1 - x0) as u32, (y1 - y0) as u32);
    let (cw, ch) = (completed.width() as i64, completed.height() as i64);
    let in_completed = |cx: i64, cy: i64| cx >= 0 && cy >= 0 && cx < cw && cy < ch;
    let mut img = ImageBuffer::filled(w, h, PAD_FILL)?;
    let mut mask = BinaryMask::empty(w, h)?;
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = (x as i64 + x0, y as i64 + y0);
            let (ox, oy) = (cx - origin.0, cy - origin.1);
            let in_original = ox >= 0 && oy >= 0 && ox < ow && oy < oh;
            let object = in_completed(cx, cy) && amodal.get(cx as u32, cy as u32);
            if object {
                mask.set(x, y, true);
                img.put(x, y, completed.get(cx as u32, cy as u32));
            } else if in_original {
                img.put(x, y, original.get(ox as u32, oy as u32));
            } else if in_completed(cx, cy) {
                img.put(x, y, completed.get(cx as u32, cy as u32));
            }
        }
    }
    Ok(Overlay {
        image: img,
        mask,
        origin: ((origin.0 - x0) as u32, (origin.1 - y0) as u32),
    })
}

/// Overlay of a completed crop onto the original image it was framed from.
pub fn uncrop_overlay(
    completed: &ImageBuffer,
    amodal: &BinaryMask,
    transform: &FrameTransform,
    original: &ImageBuffer,
) -> Result<Overlay> {
    overlay_object(original, completed, amodal, transform.original_origin())
}
