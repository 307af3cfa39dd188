//! Axis-aligned box geometry in normalized image coordinates.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Slack allowed on the right/bottom edge of a normalized box.
pub const EDGE_TOLERANCE: f64 = 1e-6;

/// A box given by its normalized upper-left corner and size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T = f64> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

/// A box in pixel space: upper-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn short_edge(&self) -> f64 {
        self.w.min(self.h)
    }
}

impl<T: Scalar> BoundingBox<T> {
    /// Builds a box, checking it lies inside the unit square.
    pub fn new(x: T, y: T, w: T, h: T) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    /// The box covering the whole image.
    pub fn full() -> Self {
        Self {
            x: T::zero(),
            y: T::zero(),
            w: T::one(),
            h: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tol = T::lit(EDGE_TOLERANCE);
        let one = T::one();
        let fields = [self.x, self.y, self.w, self.h];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                what: "box coordinates must be finite",
                value: f64::NAN,
            });
        }
        if !(self.w > T::zero() && self.h > T::zero()) {
            return Err(Error::DegenerateBox {
                w: self.w.as_f64(),
                h: self.h.as_f64(),
            });
        }
        if self.x < T::zero() || self.y < T::zero() || self.x > one || self.y > one {
            return Err(Error::Domain {
                what: "box corner must lie in [0, 1]",
                value: self.x.min(self.y).as_f64(),
            });
        }
        if self.x + self.w > one + tol || self.y + self.h > one + tol {
            return Err(Error::Domain {
                what: "box must end inside the unit square",
                value: (self.x + self.w).max(self.y + self.h).as_f64(),
            });
        }
        Ok(())
    }

    pub fn right(&self) -> T {
        self.x + self.w
    }

    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Converts between scalar types.
    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox {
            x: U::lit(self.x.as_f64()),
            y: U::lit(self.y.as_f64()),
            w: U::lit(self.w.as_f64()),
            h: U::lit(self.h.as_f64()),
        }
    }
}

/// Clamps a pixel box to the image extent and divides by the image size.
///
/// The right/bottom edge is only clamped when it overshoots the image by
/// more than a relative 1e-9, so re-normalizing a normalized box against a
/// 1x1 image is the identity.
pub fn normalize_box<T: Scalar>(px: PixelBox, img_w: u32, img_h: u32) -> Result<BoundingBox<T>> {
    if img_w == 0 || img_h == 0 {
        return Err(Error::Domain {
            what: "image size must be positive",
            value: img_w.min(img_h) as f64,
        });
    }
    let (iw, ih) = (T::lit(img_w as f64), T::lit(img_h as f64));
    let (x, y, w, h) = (T::lit(px.x), T::lit(px.y), T::lit(px.w), T::lit(px.h));
    let (nx, nw) = clamp_span(x, w, iw);
    let (ny, nh) = clamp_span(y, h, ih);
    if !(nw > T::zero() && nh > T::zero()) {
        return Err(Error::DegenerateBox {
            w: nw.as_f64(),
            h: nh.as_f64(),
        });
    }
    Ok(BoundingBox {
        x: nx / iw,
        y: ny / ih,
        w: nw / iw,
        h: nh / ih,
    })
}

fn clamp_span<T: Scalar>(start: T, len: T, extent: T) -> (T, T) {
    let slack = extent * T::lit(1e-9);
    let mut lo = start;
    let mut len = len;
    if lo < T::zero() {
        len = len + lo;
        lo = T::zero();
    }
    if lo > extent {
        return (extent, T::zero());
    }
    if lo + len > extent + slack {
        len = extent - lo;
    }
    (lo, len)
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= T::zero() || ih <= T::zero() {
        return T::zero();
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).min(T::one())
}

/// Tight box covering both inputs. An input covering the other along an
/// axis is returned unchanged along that axis, so `union_box(a, a) == a`.
pub fn union_box<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> BoundingBox<T> {
    let (x, w) = span_union((a.x, a.w), (b.x, b.w));
    let (y, h) = span_union((a.y, a.h), (b.y, b.h));
    BoundingBox { x, y, w, h }
}

fn span_union<T: Scalar>(a: (T, T), b: (T, T)) -> (T, T) {
    let covers = |o: (T, T), i: (T, T)| o.0 <= i.0 && o.0 + o.1 >= i.0 + i.1;
    match (covers(a, b), covers(b, a)) {
        (true, true) => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
        (true, false) => a,
        (false, true) => b,
        (false, false) => {
            let lo = a.0.min(b.0);
            (lo, (a.0 + a.1).max(b.0 + b.1) - lo)
        }
    }
}
