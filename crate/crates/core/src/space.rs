//! Head-space geometry: model shapes, head coordinates and head subsets.
//!
//! Heads are addressed zero-based as `(layer, head)` and printed as
//! `L<layer>H<head>` without padding, e.g. `L15H13`. The flat index of a head
//! is `layer * heads_per_layer + head`, which is also the column of that head
//! in a measurement matrix.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawShape", into = "RawShape")]
pub struct ModelShape {
    n_layers: usize,
    heads_per_layer: usize,
}

#[derive(Serialize, Deserialize)]
struct RawShape {
    n_layers: usize,
    heads_per_layer: usize,
}

impl TryFrom<RawShape> for ModelShape {
    type Error = Error;
    fn try_from(raw: RawShape) -> Result<Self> {
        ModelShape::new(raw.n_layers, raw.heads_per_layer)
    }
}

impl From<ModelShape> for RawShape {
    fn from(shape: ModelShape) -> Self {
        RawShape {
            n_layers: shape.n_layers,
            heads_per_layer: shape.heads_per_layer,
        }
    }
}

impl ModelShape {
    pub fn new(n_layers: usize, heads_per_layer: usize) -> Result<Self> {
        if n_layers == 0 || heads_per_layer == 0 {
            return Err(Error::Config(format!(
                "model shape needs at least one layer and one head per layer, got {n_layers}x{heads_per_layer}"
            )));
        }
        Ok(Self {
            n_layers,
            heads_per_layer,
        })
    }

    /// Shape of Llama 3.1 8B: 32 layers of 32 query heads.
    pub fn llama_8b() -> Self {
        Self {
            n_layers: 32,
            heads_per_layer: 32,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn heads_per_layer(&self) -> usize {
        self.heads_per_layer
    }

    pub fn n_heads(&self) -> usize {
        self.n_layers * self.heads_per_layer
    }

    pub fn contains(&self, head: HeadId) -> bool {
        head.layer < self.n_layers && head.head < self.heads_per_layer
    }

    pub fn check(&self, head: HeadId) -> Result<()> {
        if self.contains(head) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                layer: head.layer,
                head: head.head,
                n_layers: self.n_layers,
                heads_per_layer: self.heads_per_layer,
            })
        }
    }

    pub fn flat_index(&self, head: HeadId) -> Result<usize> {
        self.check(head)?;
        Ok(head.layer * self.heads_per_layer + head.head)
    }

    pub fn from_flat(&self, index: usize) -> Result<HeadId> {
        if index >= self.n_heads() {
            return Err(Error::FlatOutOfBounds {
                index,
                n_heads: self.n_heads(),
            });
        }
        Ok(HeadId::new(
            index / self.heads_per_layer,
            index % self.heads_per_layer,
        ))
    }

    /// Every head of the model in ascending flat order.
    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        (0..self.n_layers)
            .flat_map(move |l| (0..self.heads_per_layer).map(move |h| HeadId::new(l, h)))
    }

    pub fn parse_head(&self, text: &str) -> Result<HeadId> {
        let head: HeadId = text.parse()?;
        self.check(head)?;
        Ok(head)
    }
}

impl fmt::Display for ModelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_layers, self.heads_per_layer)
    }
}

/// One attention head, `(layer, head-within-layer)`, both zero-based.
///
/// Ordering is lexicographic, which coincides with flat-index order for any
/// shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub const fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

impl FromStr for HeadId {
    type Err = Error;

    /// Parses the syntax only; bounds are checked by [`ModelShape::parse_head`].
    fn from_str(text: &str) -> Result<Self> {
        let err = |position: usize, reason: &str| Error::Parse {
            text: text.to_string(),
            position,
            reason: reason.to_string(),
        };
        let bytes = text.as_bytes();
        if bytes.first() != Some(&b'L') {
            return Err(err(0, "expected 'L'"));
        }
        let digits = |start: usize| {
            bytes[start..]
                .iter()
                .take_while(|b| b.is_ascii_digit())
                .count()
        };
        let layer_len = digits(1);
        if layer_len == 0 {
            return Err(err(1, "expected layer digits"));
        }
        let h_pos = 1 + layer_len;
        if bytes.get(h_pos) != Some(&b'H') {
            return Err(err(h_pos, "expected 'H'"));
        }
        let head_len = digits(h_pos + 1);
        if head_len == 0 {
            return Err(err(h_pos + 1, "expected head digits"));
        }
        let end = h_pos + 1 + head_len;
        if end != bytes.len() {
            return Err(err(end, "unexpected trailing characters"));
        }
        let layer = text[1..h_pos]
            .parse()
            .map_err(|_| err(1, "layer index too large"))?;
        let head = text[h_pos + 1..end]
            .parse()
            .map_err(|_| err(h_pos + 1, "head index too large"))?;
        Ok(HeadId { layer, head })
    }
}

impl Serialize for HeadId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HeadId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a head label and checks it against `shape`.
pub fn parse_head_label(text: &str, shape: ModelShape) -> Result<HeadId> {
    shape.parse_head(text)
}

/// Parses a comma- or whitespace-separated label list such as `"L15H13, L16H21"`.
pub fn parse_head_list(text: &str, shape: ModelShape) -> Result<Vec<HeadId>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| shape.parse_head(t))
        .collect()
}

pub fn format_head_list<'a>(heads: impl IntoIterator<Item = &'a HeadId>) -> String {
    heads
        .into_iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// A duplicate-free set of in-bounds heads of one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSet {
    shape: ModelShape,
    members: BTreeSet<HeadId>,
}

impl HeadSet {
    pub fn empty(shape: ModelShape) -> Self {
        Self {
            shape,
            members: BTreeSet::new(),
        }
    }

    pub fn from_heads(shape: ModelShape, heads: impl IntoIterator<Item = HeadId>) -> Result<Self> {
        let mut set = Self::empty(shape);
        for h in heads {
            set.insert(h)?;
        }
        Ok(set)
    }

    pub fn from_flat(shape: ModelShape, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut set = Self::empty(shape);
        for i in indices {
            set.members.insert(shape.from_flat(i)?);
        }
        Ok(set)
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    /// Returns whether the head was newly inserted.
    pub fn insert(&mut self, head: HeadId) -> Result<bool> {
        self.shape.check(head)?;
        Ok(self.members.insert(head))
    }

    pub fn remove(&mut self, head: &HeadId) -> bool {
        self.members.remove(head)
    }

    pub fn contains(&self, head: &HeadId) -> bool {
        self.members.contains(head)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HeadId> {
        self.members.iter()
    }

    /// Copy of `self` with one more head.
    pub fn with(&self, head: HeadId) -> Result<Self> {
        let mut next = self.clone();
        next.insert(head)?;
        Ok(next)
    }

    /// Sorted flat indices; the canonical key of the set.
    pub fn flat_indices(&self) -> Vec<usize> {
        let h = self.shape.heads_per_layer();
        self.members.iter().map(|m| m.layer * h + m.head).collect()
    }

    pub fn to_vec(&self) -> Vec<HeadId> {
        self.members.iter().copied().collect()
    }
}

impl fmt::Display for HeadSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", format_head_list(self.members.iter()))
    }
}
