//! Discrete cell architectures and their `|op~src|` text form.
//!
//! A cell is a densely connected DAG. Node 0 is the cell input; node `k`
//! (for `k >= 1`) sums one operation applied to every earlier node, so it has
//! exactly `k` incoming edges with sources `0..k`. The last node is the cell
//! output. Text form: one `|`-delimited group per computation node, groups
//! joined by ` + `, each item `<width>~<source>`:
//!
//! ```text
//! |100~0| + |50~0|100~1| + |25~0|50~1|50~2| + |25~0|100~1|25~2|50~3|
//! ```
//!
//! Two cell shapes share this grammar: [`CellShape::Desk`] with three
//! computation nodes (6 edges, 729 genotypes) and [`CellShape::Full`] with
//! four (10 edges, 59049 genotypes).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    L25,
    L50,
    L100,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::L25, OpKind::L50, OpKind::L100];

    /// Output width of the linear layer.
    pub fn width(self) -> usize {
        match self {
            OpKind::L25 => 25,
            OpKind::L50 => 50,
            OpKind::L100 => 100,
        }
    }

    pub fn from_width(width: usize) -> Option<OpKind> {
        match width {
            25 => Some(OpKind::L25),
            50 => Some(OpKind::L50),
            100 => Some(OpKind::L100),
            _ => None,
        }
    }

    /// Position in [`OpKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<OpKind> {
        OpKind::ALL.get(i).copied()
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.width())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub op: OpKind,
}

impl Edge {
    pub fn new(source: usize, op: OpKind) -> Self {
        Edge { source, op }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellShape {
    /// Three computation nodes.
    Desk,
    /// Four computation nodes.
    #[default]
    Full,
}

impl CellShape {
    pub fn from_groups(groups: usize) -> Option<CellShape> {
        match groups {
            3 => Some(CellShape::Desk),
            4 => Some(CellShape::Full),
            _ => None,
        }
    }

    /// Computation nodes, i.e. summand groups in the text form.
    pub fn groups(self) -> usize {
        match self {
            CellShape::Desk => 3,
            CellShape::Full => 4,
        }
    }

    /// Nodes including the input node.
    pub fn node_count(self) -> usize {
        self.groups() + 1
    }

    pub fn edge_count(self) -> usize {
        let k = self.groups();
        k * (k + 1) / 2
    }

    /// `(destination, source)` of every edge in canonical order.
    pub fn edge_slots(self) -> Vec<(usize, usize)> {
        (1..=self.groups())
            .flat_map(|dst| (0..dst).map(move |src| (dst, src)))
            .collect()
    }

    /// Position of edge `source -> dest` in canonical order.
    pub fn edge_index(self, dest: usize, source: usize) -> usize {
        debug_assert!(source < dest && dest <= self.groups());
        dest * (dest - 1) / 2 + source
    }
}

impl FromStr for CellShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(CellShape::Desk),
            "full" => Ok(CellShape::Full),
            other => Err(format!("unknown cell shape {other:?} (expected desk or full)")),
        }
    }
}

/// A structural rule a cell DAG can break.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NodeCount(usize),
    Density { expected: usize, found: usize },
    DuplicateSource(usize),
    MissingSource(usize),
    SourceOutOfRange(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeCount(n) => {
                write!(f, "{n} computation nodes; expected 3 (desk) or 4 (full)")
            }
            Violation::Density { expected, found } => {
                write!(f, "density violation: {found} incoming edges, expected {expected}")
            }
            Violation::DuplicateSource(s) => write!(f, "duplicate source {s}"),
            Violation::MissingSource(s) => write!(f, "missing source {s}"),
            Violation::SourceOutOfRange(s) => {
                write!(f, "source {s} is not an earlier node (acyclicity)")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GenotypeError {
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("invalid genotype at node {node}: {violation}")]
    Invalid { node: usize, violation: Violation },
}

/// One operation per cell edge. Immutable once built; edges within a node
/// are held in ascending source order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype {
    nodes: Vec<Vec<Edge>>,
}

/// Checks the dense-DAG rules on raw per-node edge lists; `nodes[k - 1]` holds
/// the incoming edges of node `k`.
pub fn validate(nodes: &[Vec<Edge>]) -> Result<(), GenotypeError> {
    if CellShape::from_groups(nodes.len()).is_none() {
        return Err(GenotypeError::Invalid {
            node: nodes.len(),
            violation: Violation::NodeCount(nodes.len()),
        });
    }
    for (i, edges) in nodes.iter().enumerate() {
        let node = i + 1;
        let invalid = |violation| GenotypeError::Invalid { node, violation };
        let mut seen = vec![false; node];
        for e in edges {
            if e.source >= node {
                return Err(invalid(Violation::SourceOutOfRange(e.source)));
            }
            if std::mem::replace(&mut seen[e.source], true) {
                return Err(invalid(Violation::DuplicateSource(e.source)));
            }
        }
        if edges.len() != node {
            return Err(invalid(Violation::Density {
                expected: node,
                found: edges.len(),
            }));
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(invalid(Violation::MissingSource(missing)));
        }
    }
    Ok(())
}

impl Genotype {
    /// Validates and canonicalises (sorts each node's edges by source).
    pub fn new(mut nodes: Vec<Vec<Edge>>) -> Result<Self, GenotypeError> {
        validate(&nodes)?;
        for edges in &mut nodes {
            edges.sort_by_key(|e| e.source);
        }
        Ok(Genotype { nodes })
    }

    /// Builds from one op per edge in canonical edge order.
    pub fn from_ops(shape: CellShape, ops: &[OpKind]) -> Option<Self> {
        if ops.len() != shape.edge_count() {
            return None;
        }
        let mut it = ops.iter();
        let nodes = (1..=shape.groups())
            .map(|dst| (0..dst).map(|src| Edge::new(src, *it.next().unwrap())).collect())
            .collect();
        Some(Genotype { nodes })
    }

    /// The `index`-th genotype of `shape` in lexicographic edge-op order
    /// (first edge most significant).
    pub fn from_index(shape: CellShape, index: u64) -> Option<Self> {
        let n = shape.edge_count();
        if index >= 3u64.pow(n as u32) {
            return None;
        }
        let mut ops = vec![OpKind::L25; n];
        let mut rest = index;
        for slot in ops.iter_mut().rev() {
            *slot = OpKind::ALL[(rest % 3) as usize];
            rest /= 3;
        }
        Genotype::from_ops(shape, &ops)
    }

    /// Inverse of [`Genotype::from_index`].
    pub fn index(&self) -> u64 {
        self.ops().iter().fold(0, |acc, op| acc * 3 + op.index() as u64)
    }

    pub fn uniform(shape: CellShape, op: OpKind) -> Self {
        Genotype::from_ops(shape, &vec![op; shape.edge_count()]).expect("sized by shape")
    }

    pub fn shape(&self) -> CellShape {
        CellShape::from_groups(self.nodes.len()).expect("validated on construction")
    }

    /// Incoming edges of node `k` (1-based).
    pub fn node(&self, k: usize) -> &[Edge] {
        &self.nodes[k - 1]
    }

    pub fn nodes(&self) -> &[Vec<Edge>] {
        &self.nodes
    }

    /// Ops in canonical edge order.
    pub fn ops(&self) -> Vec<OpKind> {
        self.nodes.iter().flatten().map(|e| e.op).collect()
    }

    /// `(destination, edge)` pairs in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, Edge)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(i, edges)| edges.iter().map(move |&e| (i + 1, e)))
    }

    pub fn validate(&self) -> Result<(), GenotypeError> {
        validate(&self.nodes)
    }

    pub fn parse(text: &str) -> Result<Self, GenotypeError> {
        Parser::new(text).genotype()
    }

    /// Canonical text: no padding, groups joined by `" + "`.
    pub fn serialize(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, edges) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            f.write_str("|")?;
            for e in edges {
                write!(f, "{}~{}|", e.op, e.source)?;
            }
        }
        Ok(())
    }
}

impl FromStr for Genotype {
    type Err = GenotypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Genotype::parse(s)
    }
}

impl Serialize for Genotype {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Genotype {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Genotype::parse(&text).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn err<T>(&self, offset: usize, reason: impl Into<String>) -> Result<T, GenotypeError> {
        Err(GenotypeError::Parse {
            offset,
            reason: reason.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), GenotypeError> {
        self.skip_ws();
        match self.peek() {
            Some(b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => self.err(self.pos, format!("expected '{}', found '{}'", c as char, b as char)),
            None => self.err(self.pos, format!("expected '{}', found end of input", c as char)),
        }
    }

    fn number(&mut self, what: &str) -> Result<(usize, usize), GenotypeError> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return match self.peek() {
                Some(b) => self.err(start, format!("expected {what}, found '{}'", b as char)),
                None => self.err(start, format!("expected {what}, found end of input")),
            };
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match digits.parse::<usize>() {
            Ok(n) => Ok((n, start)),
            Err(_) => self.err(start, format!("{what} {digits} is out of range")),
        }
    }

    /// `'|' (op '~' src '|')+`, returning edges with the byte offset of each source.
    fn group(&mut self) -> Result<(usize, Vec<(Edge, usize)>), GenotypeError> {
        self.skip_ws();
        let start = self.pos;
        self.expect(b'|')?;
        let mut items = Vec::new();
        loop {
            let (width, op_at) = self.number("operation width")?;
            let op = match OpKind::from_width(width) {
                Some(op) => op,
                None => return self.err(op_at, format!("unknown operation width {width} (expected 25, 50 or 100)")),
            };
            self.expect(b'~')?;
            let (source, src_at) = self.number("source node")?;
            self.expect(b'|')?;
            items.push((Edge::new(source, op), src_at));
            self.skip_ws();
            match self.peek() {
                Some(b) if b.is_ascii_digit() => continue,
                _ => break,
            }
        }
        Ok((start, items))
    }

    fn genotype(mut self) -> Result<Genotype, GenotypeError> {
        let mut groups = vec![self.group()?];
        loop {
            self.skip_ws();
            match self.peek() {
                None => break,
                Some(b'+') => {
                    self.pos += 1;
                    groups.push(self.group()?);
                }
                Some(b) => return self.err(self.pos, format!("expected '+' or end of input, found '{}'", b as char)),
            }
        }

        let mut nodes = Vec::with_capacity(groups.len());
        for (i, (start, items)) in groups.iter().enumerate() {
            let node = i + 1;
            let mut seen = vec![false; node];
            for &(edge, at) in items {
                if edge.source >= node {
                    return self.err(
                        at,
                        format!("source {} >= node index {node} (acyclicity violation)", edge.source),
                    );
                }
                if std::mem::replace(&mut seen[edge.source], true) {
                    return self.err(at, format!("duplicate source {} at node {node}", edge.source));
                }
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return self.err(*start, format!("missing source {missing} at node {node}"));
            }
            nodes.push(items.iter().map(|&(e, _)| e).collect::<Vec<_>>());
        }
        if CellShape::from_groups(nodes.len()).is_none() {
            return self.err(
                self.bytes.len(),
                format!("{} summand groups; expected 3 or 4", nodes.len()),
            );
        }
        Genotype::new(nodes).map_err(|e| GenotypeError::Parse {
            offset: 0,
            reason: e.to_string(),
        })
    }
}

/// The set of genotypes of one cell shape over the three linear widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub shape: CellShape,
}

impl SearchSpace {
    pub fn desk() -> Self {
        SearchSpace { shape: CellShape::Desk }
    }

    pub fn full() -> Self {
        SearchSpace { shape: CellShape::Full }
    }

    /// Nodes including the cell input.
    pub fn node_count(&self) -> usize {
        self.shape.node_count()
    }

    pub fn ops(&self) -> [OpKind; 3] {
        OpKind::ALL
    }

    /// `3^edges`.
    pub fn cardinality(&self) -> u64 {
        3u64.pow(self.shape.edge_count() as u32)
    }

    /// Every genotype in lexicographic edge-op order.
    pub fn enumerate_all(&self) -> impl Iterator<Item = Genotype> + '_ {
        (0..self.cardinality()).map(|i| Genotype::from_index(self.shape, i).expect("index in range"))
    }
}
