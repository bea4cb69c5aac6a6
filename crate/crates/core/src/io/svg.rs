//! SVG subset for vector documents.
//!
//! One `<g>` per round carrying `data-round-index` and `data-round-ncolors`
//! (plus `data-round-region` for focus rounds), one `<path>` per element with
//! absolute `M x y C ... Z` data, `fill="#rrggbb"`, and `fill-opacity`.
//! Parsing is strict: unknown elements, attributes, or path commands are
//! rejected with their byte offset. Coordinates serialize at six decimal
//! places, so `parse(serialize(doc))` reproduces the document to 1e-6 and
//! colors to one 8-bit count.

use std::fmt::Write as _;

use crate::geom::{IRect, Point};
use crate::model::{CubicPath, Rgba, VectorDocument};
use crate::{Error, Result};

pub fn serialize_svg(doc: &VectorDocument) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
        w = doc.width(),
        h = doc.height()
    );
    for (i, round) in doc.rounds().iter().enumerate() {
        let mut attrs = format!("data-round-index=\"{i}\" data-round-ncolors=\"{}\"", round.precision);
        if let Some(r) = round.region {
            let _ = write!(attrs, " data-round-region=\"{} {} {} {}\"", r.x, r.y, r.w, r.h);
        }
        let _ = writeln!(out, "  <g {attrs}>");
        for e in &round.elements {
            let pts = e.path.points();
            let mut d = format!("M {:.6} {:.6}", pts[0].x, pts[0].y);
            for s in 0..e.path.segment_count() {
                let seg = e.path.segment(s);
                let _ = write!(
                    d,
                    " C {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
                    seg[1].x, seg[1].y, seg[2].x, seg[2].y, seg[3].x, seg[3].y
                );
            }
            d.push_str(" Z");
            let fill = format!(
                "#{:02x}{:02x}{:02x}",
                (e.fill.r.clamp(0.0, 1.0) * 255.0).round() as u8,
                (e.fill.g.clamp(0.0, 1.0) * 255.0).round() as u8,
                (e.fill.b.clamp(0.0, 1.0) * 255.0).round() as u8
            );
            let _ = writeln!(out, "    <path d=\"{d}\" fill=\"{fill}\" fill-opacity=\"{:.6}\"/>", e.fill.a);
        }
        out.push_str("  </g>\n");
    }
    out.push_str("</svg>\n");
    out
}

// ---------------------------------------------------------------------------
// Parser

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, at: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::SvgParse { offset: at, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek_str(&self, s: &str) -> bool {
        self.src[self.pos..].starts_with(s.as_bytes())
    }

    fn expect_str(&mut self, s: &str) -> Result<()> {
        if self.peek_str(s) {
            self.pos += s.len();
            Ok(())
        } else {
            self.err(self.pos, format!("expected `{s}`"))
        }
    }

    /// Parse `name="value"` pairs until `>` or `/>`; returns the pairs and
    /// whether the tag was self-closing.
    fn attributes(&mut self) -> Result<(Vec<(String, String, usize)>, bool)> {
        let mut attrs = Vec::new();
        loop {
            self.skip_ws();
            if self.peek_str("/>") {
                self.pos += 2;
                return Ok((attrs, true));
            }
            if self.peek_str(">") {
                self.pos += 1;
                return Ok((attrs, false));
            }
            let name_start = self.pos;
            while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos == name_start {
                return self.err(self.pos, "expected attribute name or end of tag");
            }
            let name = std::str::from_utf8(&self.src[name_start..self.pos]).unwrap().to_string();
            self.expect_str("=")?;
            self.expect_str("\"")?;
            let value_start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos] != b'"' {
                self.pos += 1;
            }
            if self.pos >= self.src.len() {
                return self.err(value_start, "unterminated attribute value");
            }
            let value = std::str::from_utf8(&self.src[value_start..self.pos]).unwrap().to_string();
            self.pos += 1;
            attrs.push((name, value, value_start));
        }
    }
}

fn require<'v>(attrs: &'v [(String, String, usize)], name: &str, tag_at: usize) -> Result<(&'v str, usize)> {
    attrs
        .iter()
        .find(|(n, _, _)| n == name)
        .map(|(_, v, at)| (v.as_str(), *at))
        .ok_or(Error::SvgParse { offset: tag_at, message: format!("missing attribute `{name}`") })
}

fn reject_unknown(attrs: &[(String, String, usize)], known: &[&str]) -> Result<()> {
    for (name, _, at) in attrs {
        if !known.contains(&name.as_str()) {
            return Err(Error::SvgParse { offset: *at, message: format!("unknown attribute `{name}`") });
        }
    }
    Ok(())
}

fn parse_u32(value: &str, at: usize, what: &str) -> Result<u32> {
    value
        .parse::<u32>()
        .map_err(|_| Error::SvgParse { offset: at, message: format!("invalid {what}: `{value}`") })
}

/// Tokenizer over path data keeping absolute offsets into the whole input.
struct PathScanner<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> PathScanner<'a> {
    fn skip(&mut self) {
        while self.pos < self.data.len() && (self.data[self.pos].is_ascii_whitespace() || self.data[self.pos] == b',') {
            self.pos += 1;
        }
    }

    fn at(&self) -> usize {
        self.base + self.pos
    }

    fn next_command(&mut self) -> Result<Option<u8>> {
        self.skip();
        if self.pos >= self.data.len() {
            return Ok(None);
        }
        let c = self.data[self.pos];
        match c {
            b'M' | b'C' | b'Z' => {
                self.pos += 1;
                Ok(Some(c))
            }
            _ => Err(Error::SvgParse {
                offset: self.at(),
                message: format!(
                    "unsupported path command `{}` (subset allows absolute M, C, Z)",
                    c as char
                ),
            }),
        }
    }

    fn number(&mut self) -> Result<f64> {
        self.skip();
        let start = self.pos;
        while self.pos < self.data.len() && matches!(self.data[self.pos], b'0'..=b'9' | b'.' | b'-' | b'+' | b'e' | b'E') {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::SvgParse { offset: self.at(), message: "expected a number".into() });
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .unwrap()
            .parse::<f64>()
            .map_err(|_| Error::SvgParse { offset: self.base + start, message: "malformed number".into() })
    }

    fn point(&mut self) -> Result<Point> {
        let x = self.number()?;
        let y = self.number()?;
        Ok(Point::new(x, y))
    }
}

fn parse_path_data(data: &str, base: usize) -> Result<CubicPath> {
    let mut scan = PathScanner { data: data.as_bytes(), pos: 0, base };
    match scan.next_command()? {
        Some(b'M') => {}
        _ => return Err(Error::SvgParse { offset: base, message: "path must start with `M`".into() }),
    }
    let start = scan.point()?;
    let mut points = vec![start];
    let mut last_end = start;
    let mut closed = false;
    loop {
        match scan.next_command()? {
            Some(b'C') => {
                let c1 = scan.point()?;
                let c2 = scan.point()?;
                let end = scan.point()?;
                points.push(c1);
                points.push(c2);
                points.push(end);
                last_end = end;
            }
            Some(b'Z') => {
                closed = true;
                break;
            }
            Some(b'M') => {
                return Err(Error::SvgParse {
                    offset: scan.at(),
                    message: "multiple subpaths are not supported".into(),
                })
            }
            Some(_) => unreachable!(),
            None => break,
        }
    }
    if !closed {
        return Err(Error::SvgParse { offset: base + data.len(), message: "missing `Z`".into() });
    }
    scan.skip();
    if scan.pos < scan.data.len() {
        return Err(Error::SvgParse { offset: scan.at(), message: "trailing content after `Z`".into() });
    }
    if points.len() < 4 {
        return Err(Error::SvgParse { offset: base, message: "path needs at least one `C` segment".into() });
    }
    // The final endpoint must return to the start; it is dropped because the
    // path closes implicitly.
    if (last_end - start).norm() > 1e-3 {
        return Err(Error::SvgParse {
            offset: base,
            message: "path does not close back to its starting point".into(),
        });
    }
    points.pop();
    CubicPath::new(points).map_err(|e| Error::SvgParse { offset: base, message: e.to_string() })
}

fn parse_fill(value: &str, at: usize) -> Result<[f64; 3]> {
    let v = value.as_bytes();
    if v.len() != 7 || v[0] != b'#' {
        return Err(Error::SvgParse { offset: at, message: format!("fill must be `#rrggbb`, got `{value}`") });
    }
    let mut rgb = [0.0f64; 3];
    for i in 0..3 {
        let s = std::str::from_utf8(&v[1 + 2 * i..3 + 2 * i]).unwrap();
        let byte = u8::from_str_radix(s, 16)
            .map_err(|_| Error::SvgParse { offset: at, message: format!("invalid hex in fill `{value}`") })?;
        rgb[i] = byte as f64 / 255.0;
    }
    Ok(rgb)
}

fn parse_region(value: &str, at: usize) -> Result<IRect> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(Error::SvgParse { offset: at, message: "region must be `x y w h`".into() });
    }
    let x = parts[0].parse::<i64>();
    let y = parts[1].parse::<i64>();
    let w = parts[2].parse::<u32>();
    let h = parts[3].parse::<u32>();
    match (x, y, w, h) {
        (Ok(x), Ok(y), Ok(w), Ok(h)) => Ok(IRect::new(x, y, w, h)),
        _ => Err(Error::SvgParse { offset: at, message: format!("malformed region `{value}`") }),
    }
}

pub fn parse_svg(text: &str) -> Result<VectorDocument> {
    let mut cur = Cursor { src: text.as_bytes(), pos: 0 };
    cur.skip_ws();
    if cur.peek_str("<?xml") {
        while cur.pos < cur.src.len() && !cur.peek_str("?>") {
            cur.pos += 1;
        }
        cur.expect_str("?>")?;
        cur.skip_ws();
    }
    let svg_at = cur.pos;
    cur.expect_str("<svg")?;
    let (attrs, self_closed) = cur.attributes()?;
    if self_closed {
        return cur.err(svg_at, "empty svg element");
    }
    reject_unknown(&attrs, &["xmlns", "width", "height", "viewBox"])?;
    let (xmlns, xmlns_at) = require(&attrs, "xmlns", svg_at)?;
    if xmlns != "http://www.w3.org/2000/svg" {
        return cur.err(xmlns_at, "unexpected xmlns");
    }
    let (w_str, w_at) = require(&attrs, "width", svg_at)?;
    let (h_str, h_at) = require(&attrs, "height", svg_at)?;
    let width = parse_u32(w_str, w_at, "width")?;
    let height = parse_u32(h_str, h_at, "height")?;
    if let Ok((vb, vb_at)) = require(&attrs, "viewBox", svg_at) {
        if vb != format!("0 0 {width} {height}") {
            return cur.err(vb_at, "viewBox must be `0 0 width height`");
        }
    }
    let mut doc = VectorDocument::new(width, height)
        .map_err(|e| Error::SvgParse { offset: svg_at, message: e.to_string() })?;

    let mut round_index = 0usize;
    loop {
        cur.skip_ws();
        if cur.peek_str("</svg>") {
            cur.expect_str("</svg>")?;
            break;
        }
        let g_at = cur.pos;
        cur.expect_str("<g")
            .map_err(|_| Error::SvgParse { offset: g_at, message: "expected `<g>` or `</svg>`".into() })?;
        let (g_attrs, g_closed) = cur.attributes()?;
        reject_unknown(&g_attrs, &["data-round-index", "data-round-ncolors", "data-round-region"])?;
        let (idx_str, idx_at) = require(&g_attrs, "data-round-index", g_at)?;
        let idx = parse_u32(idx_str, idx_at, "round index")? as usize;
        if idx != round_index {
            return cur.err(idx_at, format!("round index {idx} out of order (expected {round_index})"));
        }
        let (nc_str, nc_at) = require(&g_attrs, "data-round-ncolors", g_at)?;
        let n_colors = parse_u32(nc_str, nc_at, "round color count")?;
        let region = match g_attrs.iter().find(|(n, _, _)| n == "data-round-region") {
            Some((_, v, at)) => Some(parse_region(v, *at)?),
            None => None,
        };
        doc.begin_round(n_colors, region);
        round_index += 1;
        if g_closed {
            continue;
        }
        loop {
            cur.skip_ws();
            if cur.peek_str("</g>") {
                cur.expect_str("</g>")?;
                break;
            }
            let p_at = cur.pos;
            cur.expect_str("<path")
                .map_err(|_| Error::SvgParse { offset: p_at, message: "expected `<path>` or `</g>`".into() })?;
            let (p_attrs, p_closed) = cur.attributes()?;
            if !p_closed {
                return cur.err(p_at, "path element must be self-closing");
            }
            reject_unknown(&p_attrs, &["d", "fill", "fill-opacity"])?;
            let (d, d_at) = require(&p_attrs, "d", p_at)?;
            let path = parse_path_data(d, d_at)?;
            let (fill_str, fill_at) = require(&p_attrs, "fill", p_at)?;
            let rgb = parse_fill(fill_str, fill_at)?;
            let (op_str, op_at) = require(&p_attrs, "fill-opacity", p_at)?;
            let opacity = op_str
                .parse::<f64>()
                .map_err(|_| Error::SvgParse { offset: op_at, message: "malformed fill-opacity".into() })?;
            if !(0.0..=1.0).contains(&opacity) {
                return cur.err(op_at, "fill-opacity out of [0, 1]");
            }
            doc.push_element(path, Rgba::new(rgb[0], rgb[1], rgb[2], opacity))
                .map_err(|e| Error::SvgParse { offset: p_at, message: e.to_string() })?;
        }
    }
    cur.skip_ws();
    if cur.pos < cur.src.len() {
        return cur.err(cur.pos, "trailing content after `</svg>`");
    }
    Ok(doc)
}
