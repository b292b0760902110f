//! Binary map container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header   magic "EGRF" | version u16 | flags u16 | section_count u32
//! section  tag [u8; 4] | payload_len u64 | payload | crc32(payload) u32
//! ```
//!
//! Sections appear in the order `VOCB`, `KFRM`, `EDGE`, `EXPR`, `BIND`, `NEXT`.
//! Strings are `u32` byte length followed by UTF-8 bytes.
//!
//! * `VOCB`: `words u32, dim u32, words*dim f64` centroids, row-major.
//! * `KFRM`: `count u32`, then per keyframe `id u32, stamp f64, experience u32,
//!   n u32, n * (x f64, y f64, dim * f64), m u32, m * (word u32, weight f64)`.
//! * `EDGE`: `count u32`, then `from u32, to u32, x f64, y f64, theta f64`.
//! * `EXPR`: `count u32`, then `id u32, created f64, has_label u8, [label str],
//!   origin (x f64, y f64, theta f64), n u32, n * keyframe u32`.
//! * `BIND`: `count u32`, then `edge_ref str, experience u32`.
//! * `NEXT`: `next_keyframe u32, next_experience u32`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{Point2, Pose2};
use crate::graph::{
    Bow, Experience, ExperienceEdge, ExperienceGraph, ExperienceId, Keyframe, KeyframeId, MapLandmark, Vocabulary,
};

pub const MAGIC: [u8; 4] = *b"EGRF";
pub const VERSION: u16 = 1;
const SECTIONS: [&[u8; 4]; 6] = [b"VOCB", b"KFRM", b"EDGE", b"EXPR", b"BIND", b"NEXT"];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a map file (bad magic)")]
    BadMagic,
    #[error("unsupported map version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch in section {0}")]
    Checksum(String),
    #[error("malformed map: {0}")]
    Malformed(String),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("collection larger than u32::MAX"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(FormatError::Truncated(self.what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// Element count, sanity-checked against the bytes left.
    fn count(&mut self, min_elem: usize) -> Result<usize, FormatError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem) > self.buf.len() - self.pos {
            return Err(FormatError::Truncated(self.what));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String, FormatError> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FormatError::Malformed(format!("{}: bad UTF-8", self.what)))
    }
    fn done(&self) -> Result<(), FormatError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FormatError::Malformed(format!("{}: trailing bytes", self.what)))
        }
    }
}

/// Serialise a graph to bytes.
pub fn encode(g: &ExperienceGraph) -> Vec<u8> {
    let dim = g.vocabulary.dim();
    let mut sections: Vec<Vec<u8>> = Vec::with_capacity(SECTIONS.len());

    let mut w = Writer(Vec::new());
    w.len(g.vocabulary.size());
    w.len(dim);
    g.vocabulary.raw().iter().for_each(|&x| w.f64(x));
    sections.push(w.0);

    let mut w = Writer(Vec::new());
    w.len(g.keyframe_count());
    for k in g.keyframes() {
        w.u32(k.id.0);
        w.f64(k.stamp);
        w.u32(k.experience.0);
        w.len(k.landmarks.len());
        for l in &k.landmarks {
            w.f64(l.position.x);
            w.f64(l.position.y);
            l.descriptor.iter().for_each(|&x| w.f64(x));
        }
        w.len(k.bow.entries().len());
        for &(word, weight) in k.bow.entries() {
            w.u32(word);
            w.f64(weight);
        }
    }
    sections.push(w.0);

    let mut w = Writer(Vec::new());
    w.len(g.edges().len());
    for e in g.edges() {
        w.u32(e.from.0);
        w.u32(e.to.0);
        w.f64(e.relative_pose.x);
        w.f64(e.relative_pose.y);
        w.f64(e.relative_pose.theta);
    }
    sections.push(w.0);

    let mut w = Writer(Vec::new());
    let exps: Vec<&Experience> = g.experiences().collect();
    w.len(exps.len());
    for e in exps {
        w.u32(e.id.0);
        w.f64(e.created);
        match &e.label {
            Some(l) => {
                w.u8(1);
                w.str(l);
            }
            None => w.u8(0),
        }
        w.f64(e.origin.x);
        w.f64(e.origin.y);
        w.f64(e.origin.theta);
        w.len(e.keyframes.len());
        e.keyframes.iter().for_each(|k| w.u32(k.0));
    }
    sections.push(w.0);

    let mut w = Writer(Vec::new());
    w.len(g.bindings().len());
    for (k, e) in g.bindings() {
        w.str(k);
        w.u32(e.0);
    }
    sections.push(w.0);

    let mut w = Writer(Vec::new());
    let (nk, ne) = g.counters();
    w.u32(nk);
    w.u32(ne);
    sections.push(w.0);

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (tag, payload) in SECTIONS.iter().zip(&sections) {
        out.extend_from_slice(*tag);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(payload);
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    }
    out
}

/// Parse bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<ExperienceGraph, FormatError> {
    let mut r = Reader::new(bytes, "header");
    if r.take(4).map_err(|_| FormatError::BadMagic)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch { found: version, expected: VERSION });
    }
    let _flags = r.u16()?;
    let count = r.u32()? as usize;
    if count != SECTIONS.len() {
        return Err(FormatError::Malformed(format!("expected {} sections, found {count}", SECTIONS.len())));
    }
    let mut payloads = Vec::with_capacity(count);
    for tag in SECTIONS {
        r.what = "section header";
        let got = r.take(4)?;
        if got != tag {
            return Err(FormatError::Malformed(format!(
                "expected section {}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(got)
            )));
        }
        let len = r.u64()?;
        r.what = "section payload";
        let payload = r.take(usize::try_from(len).map_err(|_| FormatError::Truncated("section payload"))?)?;
        r.what = "section checksum";
        let crc = r.u32()?;
        if crc32fast::hash(payload) != crc {
            return Err(FormatError::Checksum(String::from_utf8_lossy(tag).into_owned()));
        }
        payloads.push(payload);
    }
    r.done()?;

    let mut p = Reader::new(payloads[0], "VOCB");
    let words = p.u32()? as usize;
    let dim = p.u32()? as usize;
    let n = words.checked_mul(dim).ok_or(FormatError::Truncated("VOCB"))?;
    if n.saturating_mul(8) > payloads[0].len() {
        return Err(FormatError::Truncated("VOCB"));
    }
    let centroids = (0..n).map(|_| p.f64()).collect::<Result<Vec<_>, _>>()?;
    p.done()?;
    let vocabulary = Vocabulary::new(dim, centroids).map_err(|e| FormatError::Malformed(e.to_string()))?;

    let mut p = Reader::new(payloads[1], "KFRM");
    let nk = p.count(24)?;
    let mut keyframes = Vec::with_capacity(nk);
    for _ in 0..nk {
        let id = KeyframeId(p.u32()?);
        let stamp = p.f64()?;
        let experience = ExperienceId(p.u32()?);
        let nl = p.count(16 + 8 * dim)?;
        let mut landmarks = Vec::with_capacity(nl);
        for _ in 0..nl {
            let position = Point2::new(p.f64()?, p.f64()?);
            let descriptor = (0..dim).map(|_| p.f64()).collect::<Result<Vec<_>, _>>()?;
            landmarks.push(MapLandmark { position, descriptor });
        }
        let nb = p.count(12)?;
        let entries = (0..nb)
            .map(|_| Ok((p.u32()?, p.f64()?)))
            .collect::<Result<Vec<_>, FormatError>>()?;
        keyframes.push(Keyframe {
            id,
            stamp,
            experience,
            landmarks,
            bow: Bow::from_entries(entries),
        });
    }
    p.done()?;

    let mut p = Reader::new(payloads[2], "EDGE");
    let ne = p.count(32)?;
    let mut edges = Vec::with_capacity(ne);
    for _ in 0..ne {
        let from = KeyframeId(p.u32()?);
        let to = KeyframeId(p.u32()?);
        let (x, y, theta) = (p.f64()?, p.f64()?, p.f64()?);
        edges.push(ExperienceEdge {
            from,
            to,
            relative_pose: Pose2 { x, y, theta },
        });
    }
    p.done()?;

    let mut p = Reader::new(payloads[3], "EXPR");
    let nx = p.count(41)?;
    let mut experiences = Vec::with_capacity(nx);
    for _ in 0..nx {
        let id = ExperienceId(p.u32()?);
        let created = p.f64()?;
        let label = match p.u8()? {
            0 => None,
            1 => Some(p.str()?),
            other => return Err(FormatError::Malformed(format!("EXPR: label flag {other}"))),
        };
        let origin = Pose2 {
            x: p.f64()?,
            y: p.f64()?,
            theta: p.f64()?,
        };
        let n = p.count(4)?;
        let kfs = (0..n).map(|_| Ok(KeyframeId(p.u32()?))).collect::<Result<Vec<_>, FormatError>>()?;
        experiences.push(Experience {
            id,
            created,
            label,
            origin,
            keyframes: kfs,
        });
    }
    p.done()?;

    let mut p = Reader::new(payloads[4], "BIND");
    let nb = p.count(8)?;
    let mut bindings = BTreeMap::new();
    for _ in 0..nb {
        let k = p.str()?;
        bindings.insert(k, ExperienceId(p.u32()?));
    }
    p.done()?;

    let mut p = Reader::new(payloads[5], "NEXT");
    let next_kf = p.u32()?;
    let next_exp = p.u32()?;
    p.done()?;

    let g = ExperienceGraph::from_parts(vocabulary, keyframes, edges, experiences, bindings, next_kf, next_exp);
    if let Some(issue) = g.audit().into_iter().next() {
        return Err(FormatError::Malformed(issue.0));
    }
    Ok(g)
}

/// Write atomically: encode to a sibling temp file, then rename.
pub fn save(g: &ExperienceGraph, path: &Path) -> Result<(), FormatError> {
    let bytes = encode(g);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ExperienceGraph, FormatError> {
    decode(&fs::read(path)?)
}
