//! Domain model for layered vector documents.
//!
//! A document is an ordered list of rounds, each an ordered list of filled
//! closed cubic-Bézier elements; rounds paint back-to-front, so round i+1
//! sits entirely on top of round i. Shape parameters (control points) and
//! color parameters (RGBA) flatten into separate optimizable groups and apply
//! back losslessly.

use std::collections::BTreeSet;

use crate::geom::{IRect, Point, Rect};
use crate::{Error, Result};

/// Straight-alpha fill color; every channel lives in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rgba {
    pub r: f64,
    pub g: f64,
    pub b: f64,
    pub a: f64,
}

impl Rgba {
    pub const fn new(r: f64, g: f64, b: f64, a: f64) -> Self {
        Rgba { r, g, b, a }
    }

    pub const fn opaque(r: f64, g: f64, b: f64) -> Self {
        Rgba { r, g, b, a: 1.0 }
    }

    pub fn clamped(self) -> Rgba {
        Rgba {
            r: self.r.clamp(0.0, 1.0),
            g: self.g.clamp(0.0, 1.0),
            b: self.b.clamp(0.0, 1.0),
            a: self.a.clamp(0.0, 1.0),
        }
    }

    pub fn channel(&self, i: usize) -> f64 {
        [self.r, self.g, self.b, self.a][i]
    }
}

/// Closed path of cubic Bézier segments.
///
/// `points` holds m = 3k control points for k segments; segment i uses points
/// 3i, 3i+1, 3i+2 and the anchor of segment i+1 (wrapping to point 0), so the
/// path is closed implicitly. The point count and ordering are fixed at
/// construction and never change afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicPath {
    points: Vec<Point>,
}

impl CubicPath {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 3 || points.len() % 3 != 0 {
            return Err(Error::LayoutMismatch(format!(
                "cubic path needs 3k control points (k >= 1), got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFiniteValue { index: i });
        }
        Ok(CubicPath { points })
    }

    /// Axis-aligned rectangle with four straight segments (m = 12).
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let corners = [
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ];
        let mut points = Vec::with_capacity(12);
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            let d = b - a;
            points.push(a);
            points.push(a + d * (1.0 / 3.0));
            points.push(a + d * (2.0 / 3.0));
        }
        CubicPath { points }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() / 3
    }

    /// Control points of segment `i`, including the wrapped end anchor.
    pub fn segment(&self, i: usize) -> [Point; 4] {
        let m = self.points.len();
        [
            self.points[3 * i],
            self.points[3 * i + 1],
            self.points[3 * i + 2],
            self.points[(3 * i + 3) % m],
        ]
    }

    pub fn segments(&self) -> impl Iterator<Item = [Point; 4]> + '_ {
        (0..self.segment_count()).map(|i| self.segment(i))
    }

    /// Bounding box of the control points (contains the curve by convexity).
    pub fn control_bbox(&self) -> Rect {
        Rect::bounding(&self.points)
    }

    pub(crate) fn set_point(&mut self, i: usize, p: Point) {
        self.points[i] = p;
    }
}

/// One filled curve: geometry plus fill color and a stable identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PathElement {
    pub id: u64,
    pub path: CubicPath,
    pub fill: Rgba,
}

/// One vectorization round. Element order is back-to-front paint order.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub elements: Vec<PathElement>,
    /// Target color count the round was traced with.
    pub precision: u32,
    /// Region the round was traced from; `None` means the full canvas.
    pub region: Option<IRect>,
}

/// Ordered rounds of elements over a fixed-size canvas.
///
/// Element ids are assigned sequentially as elements are pushed, so a
/// document built round by round has ids in paint order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDocument {
    rounds: Vec<Round>,
    width: u32,
    height: u32,
    next_id: u64,
}

impl VectorDocument {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroCanvas { width, height });
        }
        Ok(VectorDocument { rounds: Vec::new(), width, height, next_id: 0 })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    /// Start a new topmost round.
    pub fn begin_round(&mut self, precision: u32, region: Option<IRect>) {
        self.rounds.push(Round { elements: Vec::new(), precision, region });
    }

    /// Append an element to the last round and return its id.
    pub fn push_element(&mut self, path: CubicPath, fill: Rgba) -> Result<u64> {
        let round = self
            .rounds
            .last_mut()
            .ok_or_else(|| Error::LayoutMismatch("push_element before begin_round".into()))?;
        let id = self.next_id;
        self.next_id += 1;
        round.elements.push(PathElement { id, path, fill: fill.clamped() });
        Ok(id)
    }

    pub fn element_count(&self) -> usize {
        self.rounds.iter().map(|r| r.elements.len()).sum()
    }

    /// Elements in paint order (bottom first).
    pub fn elements(&self) -> impl Iterator<Item = &PathElement> {
        self.rounds.iter().flat_map(|r| r.elements.iter())
    }

    pub fn element(&self, id: u64) -> Option<&PathElement> {
        self.elements().find(|e| e.id == id)
    }

    fn element_mut(&mut self, id: u64) -> Option<&mut PathElement> {
        self.rounds.iter_mut().flat_map(|r| r.elements.iter_mut()).find(|e| e.id == id)
    }

    /// Scale every control point (and traced regions) onto a new canvas size.
    pub fn scaled(&self, width: u32, height: u32) -> Result<VectorDocument> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroCanvas { width, height });
        }
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let mut out = self.clone();
        out.width = width;
        out.height = height;
        for round in &mut out.rounds {
            if let Some(r) = round.region.as_mut() {
                *r = IRect::new(
                    (r.x as f64 * sx).round() as i64,
                    (r.y as f64 * sy).round() as i64,
                    ((r.w as f64 * sx).round() as i64).max(1) as u32,
                    ((r.h as f64 * sy).round() as i64).max(1) as u32,
                );
            }
            for e in &mut round.elements {
                for i in 0..e.path.point_count() {
                    let p = e.path.points()[i];
                    e.path.set_point(i, Point::new(p.x * sx, p.y * sy));
                }
            }
        }
        Ok(out)
    }
}

/// Which parameter group a flattened vector carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Shape,
    Color,
    Both,
}

/// One scalar slot of an element: a control-point coordinate or a color
/// channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamField {
    X(u32),
    Y(u32),
    R,
    G,
    B,
    A,
}

impl ParamField {
    pub fn is_shape(&self) -> bool {
        matches!(self, ParamField::X(_) | ParamField::Y(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamKey {
    pub id: u64,
    pub field: ParamField,
}

/// Flat parameter vector with the layout needed to invert it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Vec<ParamKey>,
    pub group: ParamGroup,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Set of element ids selected for optimization.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ElementMask {
    ids: BTreeSet<u64>,
}

impl ElementMask {
    pub fn all(doc: &VectorDocument) -> Self {
        ElementMask { ids: doc.elements().map(|e| e.id).collect() }
    }

    pub fn from_ids<I: IntoIterator<Item = u64>>(ids: I) -> Self {
        ElementMask { ids: ids.into_iter().collect() }
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.ids.iter().copied()
    }
}

/// Flatten the selected group of every masked element into a vector.
///
/// Layout order is paint order; per element, shape scalars come as x,y pairs
/// in control-point order and color scalars as r,g,b,a.
pub fn flatten_params(doc: &VectorDocument, group: ParamGroup, mask: &ElementMask) -> Result<ParamVector> {
    for id in mask.iter() {
        if doc.element(id).is_none() {
            return Err(Error::UnknownElement { id });
        }
    }
    let mut values = Vec::new();
    let mut layout = Vec::new();
    for e in doc.elements() {
        if !mask.contains(e.id) {
            continue;
        }
        if matches!(group, ParamGroup::Shape | ParamGroup::Both) {
            for (i, p) in e.path.points().iter().enumerate() {
                values.push(p.x);
                layout.push(ParamKey { id: e.id, field: ParamField::X(i as u32) });
                values.push(p.y);
                layout.push(ParamKey { id: e.id, field: ParamField::Y(i as u32) });
            }
        }
        if matches!(group, ParamGroup::Color | ParamGroup::Both) {
            for (field, v) in [
                (ParamField::R, e.fill.r),
                (ParamField::G, e.fill.g),
                (ParamField::B, e.fill.b),
                (ParamField::A, e.fill.a),
            ] {
                values.push(v);
                layout.push(ParamKey { id: e.id, field });
            }
        }
    }
    Ok(ParamVector { values, layout, group })
}

/// Write a parameter vector back into a copy of the document.
///
/// Color channels are clamped to [0, 1]; every scalar outside the vector's
/// layout is left bit-identical.
pub fn apply_params(doc: &VectorDocument, params: &ParamVector) -> Result<VectorDocument> {
    if params.values.len() != params.layout.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} values for {} layout slots",
            params.values.len(),
            params.layout.len()
        )));
    }
    let mut out = doc.clone();
    for (key, &value) in params.layout.iter().zip(&params.values) {
        if !value.is_finite() {
            return Err(Error::NonFiniteValue { index: params.layout.iter().position(|k| k == key).unwrap_or(0) });
        }
        let elem = out
            .element_mut(key.id)
            .ok_or(Error::UnknownElement { id: key.id })?;
        match key.field {
            ParamField::X(i) | ParamField::Y(i) => {
                let i = i as usize;
                if i >= elem.path.point_count() {
                    return Err(Error::LayoutMismatch(format!(
                        "point index {i} out of range for element {}",
                        key.id
                    )));
                }
                let mut p = elem.path.points()[i];
                if matches!(key.field, ParamField::X(_)) {
                    p.x = value;
                } else {
                    p.y = value;
                }
                elem.path.set_point(i, p);
            }
            ParamField::R => elem.fill.r = value.clamp(0.0, 1.0),
            ParamField::G => elem.fill.g = value.clamp(0.0, 1.0),
            ParamField::B => elem.fill.b = value.clamp(0.0, 1.0),
            ParamField::A => elem.fill.a = value.clamp(0.0, 1.0),
        }
    }
    Ok(out)
}

/// Mask of elements whose control-point bounding box intersects `rect`.
pub fn select_intersecting(doc: &VectorDocument, rect: Rect) -> ElementMask {
    ElementMask {
        ids: doc
            .elements()
            .filter(|e| e.path.control_bbox().intersects(&rect))
            .map(|e| e.id)
            .collect(),
    }
}

/// Element ids in paint order: rounds in order, each round's internal order
/// preserved.
pub fn paint_order(doc: &VectorDocument) -> Vec<u64> {
    doc.elements().map(|e| e.id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_one_element() -> VectorDocument {
        let mut doc = VectorDocument::new(16, 16).unwrap();
        doc.begin_round(10, None);
        let path = CubicPath::new(vec![
            Point::new(2.0, 2.0),
            Point::new(10.0, 2.0),
            Point::new(10.0, 10.0),
        ])
        .unwrap();
        doc.push_element(path, Rgba::new(0.1, 0.2, 0.3, 0.4)).unwrap();
        doc
    }

    #[test]
    fn flatten_lengths_per_group() {
        let doc = doc_one_element();
        let mask = ElementMask::all(&doc);
        assert_eq!(flatten_params(&doc, ParamGroup::Shape, &mask).unwrap().len(), 6);
        assert_eq!(flatten_params(&doc, ParamGroup::Color, &mask).unwrap().len(), 4);
        assert_eq!(flatten_params(&doc, ParamGroup::Both, &mask).unwrap().len(), 10);
    }

    #[test]
    fn flatten_apply_round_trip_is_identity() {
        let doc = doc_one_element();
        let mask = ElementMask::all(&doc);
        for group in [ParamGroup::Shape, ParamGroup::Color, ParamGroup::Both] {
            let pv = flatten_params(&doc, group, &mask).unwrap();
            let back = apply_params(&doc, &pv).unwrap();
            assert_eq!(back, doc);
        }
    }

    #[test]
    fn apply_clamps_color_channels() {
        let doc = doc_one_element();
        let mask = ElementMask::all(&doc);
        let mut pv = flatten_params(&doc, ParamGroup::Color, &mask).unwrap();
        pv.values[0] = 1.3;
        pv.values[3] = -0.2;
        let out = apply_params(&doc, &pv).unwrap();
        let e = out.elements().next().unwrap();
        assert_eq!(e.fill.r, 1.0);
        assert_eq!(e.fill.a, 0.0);
    }

    #[test]
    fn shape_group_leaves_colors_bit_identical() {
        let doc = doc_one_element();
        let mask = ElementMask::all(&doc);
        let mut pv = flatten_params(&doc, ParamGroup::Shape, &mask).unwrap();
        for v in pv.values.iter_mut() {
            *v += 1.0;
        }
        let out = apply_params(&doc, &pv).unwrap();
        assert_eq!(out.elements().next().unwrap().fill, doc.elements().next().unwrap().fill);
    }

    #[test]
    fn unknown_mask_id_is_an_error() {
        let doc = doc_one_element();
        let mask = ElementMask::from_ids([99]);
        match flatten_params(&doc, ParamGroup::Both, &mask) {
            Err(Error::UnknownElement { id: 99 }) => {}
            other => panic!("expected UnknownElement, got {other:?}"),
        }
    }

    #[test]
    fn select_intersecting_cases() {
        let doc = doc_one_element();
        // Whole canvas.
        let all = select_intersecting(&doc, Rect::new(0.0, 0.0, 16.0, 16.0));
        assert_eq!(all.len(), 1);
        // Disjoint.
        let none = select_intersecting(&doc, Rect::new(12.0, 12.0, 15.0, 15.0));
        assert!(none.is_empty());
        // Partial overlap: bbox [2,10]x[2,10] vs rect [5,5]-[30,30].
        let some = select_intersecting(&doc, Rect::new(5.0, 5.0, 30.0, 30.0));
        assert_eq!(some.len(), 1);
    }

    #[test]
    fn paint_order_concatenates_rounds() {
        let mut doc = VectorDocument::new(8, 8).unwrap();
        doc.begin_round(10, None);
        for _ in 0..3 {
            doc.push_element(CubicPath::rect(0.0, 0.0, 4.0, 4.0), Rgba::opaque(0.5, 0.5, 0.5)).unwrap();
        }
        doc.begin_round(30, None);
        for _ in 0..5 {
            doc.push_element(CubicPath::rect(1.0, 1.0, 5.0, 5.0), Rgba::opaque(0.2, 0.2, 0.2)).unwrap();
        }
        let order = paint_order(&doc);
        assert_eq!(order, (0..8).collect::<Vec<u64>>());

        let empty = VectorDocument::new(8, 8).unwrap();
        assert!(paint_order(&empty).is_empty());
    }

    #[test]
    fn apply_never_changes_structure() {
        let doc = doc_one_element();
        let mask = ElementMask::all(&doc);
        let mut pv = flatten_params(&doc, ParamGroup::Both, &mask).unwrap();
        for v in pv.values.iter_mut() {
            *v = v.mul_add(0.5, 0.1);
        }
        let out = apply_params(&doc, &pv).unwrap();
        assert_eq!(out.element_count(), doc.element_count());
        assert_eq!(out.rounds().len(), doc.rounds().len());
        assert_eq!(paint_order(&out), paint_order(&doc));
        let m_before: Vec<_> = doc.elements().map(|e| e.path.point_count()).collect();
        let m_after: Vec<_> = out.elements().map(|e| e.path.point_count()).collect();
        assert_eq!(m_before, m_after);
    }
}
