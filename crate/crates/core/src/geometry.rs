//! Axis-aligned boxes in pixel space, origin top-left.

use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn center(&self) -> (T, T) {
        let two = T::lit(2.0);
        ((self.x_min + self.x_max) / two, (self.y_min + self.y_max) / two)
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    /// Violated ordering rules, empty when the box is well-formed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.x_min < self.x_max) {
            out.push("x_min < x_max violated".to_string());
        }
        if !(self.y_min < self.y_max) {
            out.push("y_min < y_max violated".to_string());
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn within(&self, width: T, height: T) -> bool {
        let zero = T::zero();
        self.x_min >= zero && self.y_min >= zero && self.x_max <= width && self.y_max <= height
    }

    /// Box clamped to the image rectangle.
    pub fn clamped(&self, width: T, height: T) -> Self {
        let zero = T::zero();
        Self {
            x_min: self.x_min.max(zero).min(width),
            y_min: self.y_min.max(zero).min(height),
            x_max: self.x_max.max(zero).min(width),
            y_max: self.y_max.max(zero).min(height),
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            x_min: self.x_min * factor,
            y_min: self.y_min * factor,
            x_max: self.x_max * factor,
            y_max: self.y_max * factor,
        }
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        let c = |v: T| U::from_f64(v.to_f64().expect("finite coordinate")).expect("castable");
        BBox { x_min: c(self.x_min), y_min: c(self.y_min), x_max: c(self.x_max), y_max: c(self.y_max) }
    }
}
