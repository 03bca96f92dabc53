//! Detector query planning, instance counting and the spatial facts
//! (grid region, pairwise relation) derived from boxes.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DetectionSet, EntityMention, ImageRef};
use crate::geometry::BBox;
use crate::Scalar;

/// Default dead zone for pairwise relations, as a fraction of image size.
pub const DEFAULT_RELATION_DELTA: f64 = 0.05;

/// Grid label recorded in provenance.
pub const GRID_LABEL: &str = "3x3";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroundingError {
    #[error("query not planned: `{0}`")]
    QueryNotPlanned(String),
    #[error("box for `{name}` lies outside the {width}x{height} image")]
    OutOfBounds { name: String, width: u32, height: u32 },
    #[error("relation between two instances of `{0}` is not supported")]
    SameName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizontal {
    Left,
    Center,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vertical {
    Top,
    Middle,
    Bottom,
}

/// Cell of a 3x3 grid over the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Region {
    pub horizontal: Horizontal,
    pub vertical: Vertical,
}

impl Region {
    pub const ALL: [Region; 9] = {
        use Horizontal::*;
        use Vertical::*;
        [
            Region { horizontal: Left, vertical: Top },
            Region { horizontal: Center, vertical: Top },
            Region { horizontal: Right, vertical: Top },
            Region { horizontal: Left, vertical: Middle },
            Region { horizontal: Center, vertical: Middle },
            Region { horizontal: Right, vertical: Middle },
            Region { horizontal: Left, vertical: Bottom },
            Region { horizontal: Center, vertical: Bottom },
            Region { horizontal: Right, vertical: Bottom },
        ]
    };

    pub fn new(horizontal: Horizontal, vertical: Vertical) -> Self {
        Self { horizontal, vertical }
    }

    /// Natural-language name of the cell, e.g. "top left" or "center".
    pub fn phrase(self) -> &'static str {
        use Horizontal::*;
        use Vertical::*;
        match (self.vertical, self.horizontal) {
            (Top, Left) => "top left",
            (Top, Center) => "top center",
            (Top, Right) => "top right",
            (Middle, Left) => "middle left",
            (Middle, Center) => "center",
            (Middle, Right) => "middle right",
            (Bottom, Left) => "bottom left",
            (Bottom, Center) => "bottom center",
            (Bottom, Right) => "bottom right",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl RelationKind {
    pub fn inverse(self) -> Self {
        match self {
            RelationKind::LeftOf => RelationKind::RightOf,
            RelationKind::RightOf => RelationKind::LeftOf,
            RelationKind::Above => RelationKind::Below,
            RelationKind::Below => RelationKind::Above,
        }
    }

    /// Phrase used in "on the {phrase} of the {object}".
    pub fn phrase(self) -> &'static str {
        match self {
            RelationKind::LeftOf => "left side",
            RelationKind::RightOf => "right side",
            RelationKind::Above => "upper side",
            RelationKind::Below => "lower side",
        }
    }
}

/// `subject kind object`, e.g. airplane left_of truck.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub kind: RelationKind,
    pub subject: String,
    pub object: String,
}

impl Relation {
    /// The same fact stated from the other side: `b inverse(kind) a`.
    pub fn inverse(&self) -> Relation {
        Relation { kind: self.kind.inverse(), subject: self.object.clone(), object: self.subject.clone() }
    }

    /// Same participants, opposite direction. This is a false statement
    /// whenever `self` is true.
    pub fn contradiction(&self) -> Relation {
        Relation { kind: self.kind.inverse(), subject: self.subject.clone(), object: self.object.clone() }
    }
}

/// Every distinct object name plus `"{attribute} {object}"` for attributed
/// mentions, sorted and deduplicated.
pub fn plan_detection_queries(mentions: &[EntityMention]) -> Vec<String> {
    let mut queries = BTreeSet::new();
    for m in mentions {
        queries.insert(m.object.clone());
        if let Some(attr) = &m.attribute {
            queries.insert(pair_query(attr, &m.object));
        }
    }
    queries.into_iter().collect()
}

/// Detector query for an attribute-object pair.
pub fn pair_query(attribute: &str, object: &str) -> String {
    format!("{attribute} {object}")
}

pub fn count_instances(det: &DetectionSet, query: &str) -> Result<u32, GroundingError> {
    det.entries
        .get(query)
        .map(|d| d.len() as u32)
        .ok_or_else(|| GroundingError::QueryNotPlanned(query.to_string()))
}

fn check_bounds<T: Scalar>(name: &str, bbox: &BBox<T>, image: &ImageRef) -> Result<(T, T), GroundingError> {
    let w = T::from_u32(image.width).expect("width representable");
    let h = T::from_u32(image.height).expect("height representable");
    if !bbox.within(w, h) || !bbox.is_valid() {
        return Err(GroundingError::OutOfBounds { name: name.to_string(), width: image.width, height: image.height });
    }
    Ok((w, h))
}

/// 0, 1 or 2 for the third of `extent` that `coord` falls in; a coordinate
/// exactly on a division line belongs to the lower cell.
fn third<T: Scalar>(coord: T, extent: T) -> usize {
    let three = T::lit(3.0);
    if coord * three <= extent {
        0
    } else if coord * three <= extent + extent {
        1
    } else {
        2
    }
}

/// Grid cell containing the box center.
pub fn locate_region<T: Scalar>(bbox: &BBox<T>, image: &ImageRef) -> Result<Region, GroundingError> {
    let (w, h) = check_bounds("box", bbox, image)?;
    let (cx, cy) = bbox.center();
    let horizontal = [Horizontal::Left, Horizontal::Center, Horizontal::Right][third(cx, w)];
    let vertical = [Vertical::Top, Vertical::Middle, Vertical::Bottom][third(cy, h)];
    Ok(Region { horizontal, vertical })
}

/// Directional relation of `a` to `b` from box centers.
///
/// Separations are normalized by image size. Below `delta` on both axes no
/// relation is claimed; otherwise the axis with the larger separation wins,
/// horizontal on ties.
pub fn pairwise_relation<T: Scalar>(
    a: (&str, &BBox<T>),
    b: (&str, &BBox<T>),
    image: &ImageRef,
    delta: T,
) -> Result<Option<Relation>, GroundingError> {
    if a.0 == b.0 {
        return Err(GroundingError::SameName(a.0.to_string()));
    }
    let (w, h) = check_bounds(a.0, a.1, image)?;
    check_bounds(b.0, b.1, image)?;
    let (ax, ay) = a.1.center();
    let (bx, by) = b.1.center();
    let dx = (bx - ax) / w;
    let dy = (by - ay) / h;
    if dx.abs().max(dy.abs()) < delta {
        return Ok(None);
    }
    let kind = if dx.abs() >= dy.abs() {
        if dx > T::zero() {
            RelationKind::LeftOf
        } else {
            RelationKind::RightOf
        }
    } else if dy > T::zero() {
        RelationKind::Above
    } else {
        RelationKind::Below
    };
    Ok(Some(Relation { kind, subject: a.0.to_string(), object: b.0.to_string() }))
}
