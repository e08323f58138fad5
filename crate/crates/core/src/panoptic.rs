//! Panoptic label maps, the `.seg` file format, and merging decoder output
//! into a per-pixel partition.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderOutput;
use crate::error::{Error, Result};
use crate::tensor::Element;

/// Class id marking pixels that belong to no segment.
pub const VOID: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelLabel {
    pub class: u32,
    /// 0 for stuff and VOID; 1.. for thing instances.
    pub instance: u32,
}

impl PixelLabel {
    pub const VOID: PixelLabel = PixelLabel { class: VOID, instance: 0 };

    pub fn is_void(&self) -> bool {
        self.class == VOID
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    Stuff,
    Thing,
}

/// Kind of every class id `0..l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    kinds: Vec<ClassKind>,
}

impl ClassTable {
    /// `l` classes; ids listed in `stuff` are stuff, the rest are things.
    pub fn new(l: usize, stuff: &[u32]) -> Result<Self> {
        if l == 0 || l >= VOID as usize {
            return Err(Error::invalid(format!("class count {l} out of range")));
        }
        let mut kinds = vec![ClassKind::Thing; l];
        for &s in stuff {
            let slot = kinds
                .get_mut(s as usize)
                .ok_or_else(|| Error::invalid(format!("stuff id {s} >= class count {l}")))?;
            *slot = ClassKind::Stuff;
        }
        Ok(Self { kinds })
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, class: u32) -> Option<ClassKind> {
        self.kinds.get(class as usize).copied()
    }

    pub fn is_thing(&self, class: u32) -> bool {
        self.kind(class) == Some(ClassKind::Thing)
    }

    pub fn stuff_ids(&self) -> Vec<u32> {
        (0..self.kinds.len() as u32)
            .filter(|&c| self.kinds[c as usize] == ClassKind::Stuff)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanopticMap {
    height: usize,
    width: usize,
    pixels: Vec<PixelLabel>,
}

impl PanopticMap {
    pub fn new(height: usize, width: usize, pixels: Vec<PixelLabel>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::shape(format!(
                "{} labels for a {height}x{width} map",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[PixelLabel] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> PixelLabel {
        self.pixels[y * self.width + x]
    }

    /// Distinct non-VOID `(class, instance)` segments, sorted.
    pub fn segments(&self) -> BTreeSet<PixelLabel> {
        self.pixels.iter().filter(|p| !p.is_void()).copied().collect()
    }

    /// Checks the partition invariants: known class ids, instance 0 for
    /// stuff and VOID, and thing ids that are unique across classes and
    /// contiguous from 1.
    pub fn validate(&self, classes: &ClassTable) -> Result<()> {
        let mut thing_ids = BTreeSet::new();
        for seg in self.segments() {
            match classes.kind(seg.class) {
                None => {
                    return Err(Error::Format(format!(
                        "class id {} outside 0..{}",
                        seg.class,
                        classes.len()
                    )))
                }
                Some(ClassKind::Stuff) if seg.instance != 0 => {
                    return Err(Error::Format(format!(
                        "stuff class {} carries instance id {}",
                        seg.class, seg.instance
                    )))
                }
                Some(ClassKind::Thing) => {
                    if seg.instance == 0 || !thing_ids.insert(seg.instance) {
                        return Err(Error::Format(format!(
                            "thing instance id {} of class {} is zero or reused",
                            seg.instance, seg.class
                        )));
                    }
                }
                Some(ClassKind::Stuff) => {}
            }
        }
        if self.pixels.iter().any(|p| p.is_void() && p.instance != 0) {
            return Err(Error::Format("VOID pixel with nonzero instance id".into()));
        }
        if let Some(&max) = thing_ids.last() {
            if max as usize != thing_ids.len() {
                return Err(Error::Format(format!(
                    "thing instance ids {thing_ids:?} are not contiguous from 1"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegHeader {
    h: usize,
    w: usize,
    l: usize,
    stuff: Vec<u32>,
}

/// Serializes to `.seg`: one JSON header line, then `h·w` little-endian
/// `(u32 class, u32 instance)` pairs in row-major order.
pub fn encode_seg(map: &PanopticMap, classes: &ClassTable) -> Result<Vec<u8>> {
    let header = SegHeader {
        h: map.height,
        w: map.width,
        l: classes.len(),
        stuff: classes.stuff_ids(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(map.pixels.len() * 8);
    for p in &map.pixels {
        out.extend_from_slice(&p.class.to_le_bytes());
        out.extend_from_slice(&p.instance.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_seg(bytes: &[u8]) -> Result<(PanopticMap, ClassTable)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing .seg header line".into()))?;
    let header: SegHeader = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::Format(format!(".seg header: {e}")))?;
    let classes = ClassTable::new(header.l, &header.stuff).map_err(|e| Error::Format(e.to_string()))?;
    let body = &bytes[split + 1..];
    let expected = header
        .h
        .checked_mul(header.w)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("header extents overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            ".seg body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let word = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let pixels = body
        .chunks_exact(8)
        .map(|c| PixelLabel {
            class: word(&c[..4]),
            instance: word(&c[4..]),
        })
        .collect();
    let map = PanopticMap::new(header.h, header.w, pixels).map_err(|e| Error::Format(e.to_string()))?;
    if map.segments().iter().any(|s| s.class as usize >= header.l) {
        return Err(Error::Format("pixel class id outside header class count".into()));
    }
    Ok((map, classes))
}

/// Default confidence threshold for keeping a prediction.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Merges decoder predictions into a panoptic map.
///
/// 1. Each prediction takes the argmax class of its probability row and is
///    dropped when that probability is below `threshold`.
/// 2. Each pixel goes to the covering prediction with the highest class
///    probability; ties go to the lower prediction index.
/// 3. Stuff predictions of the same class union into one segment with
///    instance 0; thing predictions that own pixels get ids 1, 2, … in
///    prediction order. Uncovered pixels are VOID.
pub fn merge<T: Element>(out: &DecoderOutput<T>, classes: &ClassTable, threshold: f64) -> Result<PanopticMap> {
    let (n, h, w) = out.masks.dims3("binary masks")?;
    let (pn, l) = out.class_probs.dims2("class probabilities")?;
    if pn != n || l != classes.len() {
        return Err(Error::shape(format!(
            "{n} masks and {pn}x{l} class probabilities for {} classes",
            classes.len()
        )));
    }
    let probs = out.class_probs.as_slice();
    let kept: Vec<Option<(u32, f64)>> = probs
        .chunks_exact(l)
        .map(|row| {
            let (cls, p) = row
                .iter()
                .enumerate()
                .fold((0, row[0]), |best, (c, &p)| if p > best.1 { (c, p) } else { best });
            let p = p.to_f64().unwrap_or(f64::NAN);
            (p >= threshold).then_some((cls as u32, p))
        })
        .collect();

    let hw = h * w;
    let masks = out.masks.as_slice();
    let mut owner: Vec<Option<usize>> = vec![None; hw];
    for (pix, slot) in owner.iter_mut().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, k) in kept.iter().enumerate() {
            let Some((_, p)) = k else { continue };
            if masks[i * hw + pix] != T::one() {
                continue;
            }
            if best.map_or(true, |(_, bp)| *p > bp) {
                best = Some((i, *p));
            }
        }
        *slot = best.map(|(i, _)| i);
    }

    let mut owns = vec![false; n];
    for i in owner.iter().flatten() {
        owns[*i] = true;
    }
    let mut ids = vec![0u32; n];
    let mut next = 1;
    for i in 0..n {
        if let Some((cls, _)) = kept[i] {
            if owns[i] && classes.is_thing(cls) {
                ids[i] = next;
                next += 1;
            }
        }
    }
    let pixels = owner
        .iter()
        .map(|o| match o {
            Some(i) => PixelLabel {
                class: kept[*i].expect("owner was kept").0,
                instance: ids[*i],
            },
            None => PixelLabel::VOID,
        })
        .collect();
    PanopticMap::new(h, w, pixels)
}
