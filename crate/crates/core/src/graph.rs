//! Decorated directed Feynman multigraphs: enumeration of isomorphism
//! classes, automorphism counting, canonical labeling and the graph
//! surgeries the master-equation verifiers are built from.
//!
//! Edges always run from an out-slot to an in-slot (a contracted X-E
//! pair). Interaction vertices absorb k edges and emit l, connection (R)
//! and gauge-generator (C) vertices emit exactly one, boundary vertices on
//! side 1 emit only and on side 2 absorb only. Leaves are degree-one
//! decorations: residual fields, halves of a diagonal class, or primitives
//! of a residual-field variation. Slots at a vertex are unordered; the
//! resulting slot symmetry is counted by the automorphism order.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Error, Debug, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge endpoint out of range")]
    BadEndpoint,
    #[error("edge direction violates slot roles: {0}")]
    BadDirection(String),
    #[error("leaf {0} must have exactly one incident edge, found {1}")]
    LeafDegree(usize, usize),
    #[error("vertex {0} arity mismatch: declared {1:?}, incident {2:?}")]
    ArityMismatch(usize, (usize, usize), (usize, usize)),
    #[error("tadpole edge at vertex {0} (unimodular mode)")]
    Tadpole(usize),
    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("marking refers to a missing element")]
    BadMarking,
    #[error("collapse requires an edge between two bulk vertices")]
    BadCollapse,
    #[error("unknown export format `{0}`")]
    UnknownFormat(String),
    #[error("import: {0}")]
    Import(String),
}

/// Vertex decorations. `Theta` carries the interaction tensor of its
/// incident arity, `RVertex`/`CVertex` carry one connection resp. gauge
/// tensor and one dx factor. `Collapsed` is the image of a boundary
/// subgraph collapse: it remembers the face symbol of the amputated
/// subgraph and the composite fields that were swallowed.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VertexKind {
    Theta { ins: usize, outs: usize },
    RVertex { ins: usize },
    CVertex { ins: usize },
    Boundary1 { legs: usize, composite: Vec<usize> },
    Boundary2 { legs: usize, composite: Vec<usize> },
    Collapsed { side: u8, sigma: String, composites: Vec<Vec<usize>>, legs: usize },
}

impl VertexKind {
    pub fn is_bulk(&self) -> bool {
        matches!(
            self,
            VertexKind::Theta { .. } | VertexKind::RVertex { .. } | VertexKind::CVertex { .. }
        )
    }

    /// Declared (in, out) arity for slot bookkeeping.
    pub fn arity(&self) -> (usize, usize) {
        match self {
            VertexKind::Theta { ins, outs } => (*ins, *outs),
            VertexKind::RVertex { ins } => (*ins, 1),
            VertexKind::CVertex { ins } => (*ins, 1),
            VertexKind::Boundary1 { legs, .. } => (0, *legs),
            VertexKind::Boundary2 { legs, .. } => (*legs, 0),
            VertexKind::Collapsed { legs, .. } => (0, *legs),
        }
    }

    fn color(&self) -> String {
        match self {
            VertexKind::Theta { ins, outs } => format!("T{}i{}o", ins, outs),
            VertexKind::RVertex { ins } => format!("R{}i", ins),
            VertexKind::CVertex { ins } => format!("C{}i", ins),
            VertexKind::Boundary1 { legs, composite } => format!("B1:{}:{:?}", legs, composite),
            VertexKind::Boundary2 { legs, composite } => format!("B2:{}:{:?}", legs, composite),
            VertexKind::Collapsed {
                side,
                sigma,
                composites,
                legs,
            } => format!("K{}:{}:{:?}:{}", side, sigma, composites, legs),
        }
    }
}

/// Degree-one decorations. Diagonal-class halves are linked by a pair id;
/// the id itself is not part of the isomorphism type, only the pairing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Leaf {
    /// Residual field x^i (absorbs one edge).
    ResX,
    /// Residual field e_j (emits one edge).
    ResE,
    /// chi_k half of a diagonal class (absorbs).
    DiagX(u32),
    /// chi^k half of a diagonal class (emits).
    DiagE(u32),
    /// Primitive sigma_i of a residual-field variation (absorbs).
    SigmaX,
    /// Primitive sigma^i (emits).
    SigmaE,
    /// d sigma_i, the exact form replacing a varied x leaf (absorbs).
    DSigmaX,
    /// d sigma^i (emits).
    DSigmaE,
}

impl Leaf {
    pub fn absorbs(&self) -> bool {
        matches!(
            self,
            Leaf::ResX | Leaf::DiagX(_) | Leaf::SigmaX | Leaf::DSigmaX
        )
    }

    fn color(&self) -> &'static str {
        match self {
            Leaf::ResX => "x",
            Leaf::ResE => "e",
            Leaf::DiagX(_) => "cx",
            Leaf::DiagE(_) => "ce",
            Leaf::SigmaX => "sx",
            Leaf::SigmaE => "se",
            Leaf::DSigmaX => "dsx",
            Leaf::DSigmaE => "dse",
        }
    }

    fn pair_id(&self) -> Option<u32> {
        match self {
            Leaf::DiagX(p) | Leaf::DiagE(p) => Some(*p),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum End {
    V(usize),
    L(usize),
}

pub type Edge = (End, End);

/// An immutable decorated multigraph. Construct with [`FeynmanGraph::new`],
/// which validates slot roles, arities and leaf degrees.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct FeynmanGraph {
    pub vertices: Vec<VertexKind>,
    pub leaves: Vec<Leaf>,
    pub edges: Vec<Edge>,
    /// Optional per-edge tags (0 = plain); marked, lambda- or d-lambda
    /// edges carry distinct tags that enter the isomorphism type.
    pub edge_tags: Vec<u8>,
    /// Optional per-vertex tags (0 = plain); d-marked boundary vertices and
    /// focused bulk vertices carry distinct tags.
    pub vertex_tags: Vec<u8>,
}

/// One marked element of a graph.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Marking {
    Edge(usize),
    /// (x-type leaf, e-type leaf) residual pair.
    Pair(usize, usize),
    Leaf(usize),
    CVertex(usize),
    LambdaEdge(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct MarkedGraph {
    pub graph: FeynmanGraph,
    pub mark: Marking,
}

impl FeynmanGraph {
    pub fn new(
        vertices: Vec<VertexKind>,
        leaves: Vec<Leaf>,
        edges: Vec<Edge>,
        unimodular: bool,
    ) -> Result<Self, GraphError> {
        let edge_tags = vec![0; edges.len()];
        let vertex_tags = vec![0; vertices.len()];
        let g = FeynmanGraph {
            vertices,
            leaves,
            edges,
            edge_tags,
            vertex_tags,
        };
        g.validate(unimodular)?;
        Ok(g)
    }

    pub fn empty() -> Self {
        FeynmanGraph {
            vertices: Vec::new(),
            leaves: Vec::new(),
            edges: Vec::new(),
            edge_tags: Vec::new(),
            vertex_tags: Vec::new(),
        }
    }

    fn tag(&self, e: usize) -> u8 {
        self.edge_tags.get(e).copied().unwrap_or(0)
    }

    pub fn set_edge_tag(&mut self, e: usize, tag: u8) {
        if self.edge_tags.len() < self.edges.len() {
            self.edge_tags.resize(self.edges.len(), 0);
        }
        self.edge_tags[e] = tag;
    }

    pub fn vtag(&self, v: usize) -> u8 {
        self.vertex_tags.get(v).copied().unwrap_or(0)
    }

    pub fn set_vertex_tag(&mut self, v: usize, tag: u8) {
        if self.vertex_tags.len() < self.vertices.len() {
            self.vertex_tags.resize(self.vertices.len(), 0);
        }
        self.vertex_tags[v] = tag;
    }

    fn validate(&self, unimodular: bool) -> Result<(), GraphError> {
        let mut out_deg = vec![0usize; self.vertices.len()];
        let mut in_deg = vec![0usize; self.vertices.len()];
        let mut leaf_deg = vec![0usize; self.leaves.len()];
        for &(src, dst) in &self.edges {
            match src {
                End::V(v) => {
                    if v >= self.vertices.len() {
                        return Err(GraphError::BadEndpoint);
                    }
                    if matches!(self.vertices[v], VertexKind::Boundary2 { .. }) {
                        return Err(GraphError::BadDirection(
                            "boundary-2 vertices only absorb".into(),
                        ));
                    }
                    out_deg[v] += 1;
                }
                End::L(l) => {
                    if l >= self.leaves.len() {
                        return Err(GraphError::BadEndpoint);
                    }
                    if self.leaves[l].absorbs() {
                        return Err(GraphError::BadDirection(
                            "absorbing leaf used as source".into(),
                        ));
                    }
                    leaf_deg[l] += 1;
                }
            }
            match dst {
                End::V(v) => {
                    if v >= self.vertices.len() {
                        return Err(GraphError::BadEndpoint);
                    }
                    match self.vertices[v] {
                        VertexKind::Boundary1 { .. } => {
                            return Err(GraphError::BadDirection(
                                "boundary-1 vertices only emit".into(),
                            ))
                        }
                        // Collapsed blobs accept residual evaluation legs.
                        VertexKind::Collapsed { .. } => {}
                        _ => {}
                    }
                    in_deg[v] += 1;
                }
                End::L(l) => {
                    if l >= self.leaves.len() {
                        return Err(GraphError::BadEndpoint);
                    }
                    if !self.leaves[l].absorbs() {
                        return Err(GraphError::BadDirection(
                            "emitting leaf used as target".into(),
                        ));
                    }
                    leaf_deg[l] += 1;
                }
            }
            if let (End::L(_), End::L(_)) = (src, dst) {
                return Err(GraphError::BadDirection("leaf-to-leaf edge".into()));
            }
            if unimodular {
                if let (End::V(a), End::V(b)) = (src, dst) {
                    if a == b {
                        return Err(GraphError::Tadpole(a));
                    }
                }
            }
        }
        for (l, &d) in leaf_deg.iter().enumerate() {
            if d != 1 {
                return Err(GraphError::LeafDegree(l, d));
            }
        }
        for (v, kind) in self.vertices.iter().enumerate() {
            // Collapsed blobs absorb residual legs freely.
            if matches!(kind, VertexKind::Collapsed { .. }) {
                let (_, o) = kind.arity();
                let out_to_nonleaf = self
                    .edges
                    .iter()
                    .filter(|&&(s, d)| s == End::V(v) && matches!(d, End::V(_)))
                    .count();
                if out_to_nonleaf > o {
                    return Err(GraphError::ArityMismatch(
                        v,
                        kind.arity(),
                        (in_deg[v], out_deg[v]),
                    ));
                }
                continue;
            }
            let (i, o) = kind.arity();
            if in_deg[v] != i || out_deg[v] != o {
                return Err(GraphError::ArityMismatch(
                    v,
                    (i, o),
                    (in_deg[v], out_deg[v]),
                ));
            }
        }
        Ok(())
    }

    pub fn num_bulk(&self) -> usize {
        self.vertices.iter().filter(|k| k.is_bulk()).count()
    }

    /// Edges joining two vertices (no leaf endpoint): these carry the
    /// propagator symbols and hence the h-power.
    pub fn internal_edges(&self) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &(s, d))| matches!(s, End::V(_)) && matches!(d, End::V(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// First Betti number of the vertex skeleton (leaves stripped).
    pub fn loop_count(&self) -> usize {
        let n = self.vertices.len();
        if n == 0 {
            return 0;
        }
        let mut dsu: Vec<usize> = (0..n).collect();
        fn find(dsu: &mut Vec<usize>, x: usize) -> usize {
            if dsu[x] != x {
                let r = find(dsu, dsu[x]);
                dsu[x] = r;
            }
            dsu[x]
        }
        let mut e_int = 0usize;
        for &(s, d) in &self.edges {
            if let (End::V(a), End::V(b)) = (s, d) {
                e_int += 1;
                let (ra, rb) = (find(&mut dsu, a), find(&mut dsu, b));
                if ra != rb {
                    dsu[ra] = rb;
                }
            }
        }
        let comps: BTreeSet<usize> = (0..n).map(|x| find(&mut dsu, x)).collect();
        e_int + comps.len() - n
    }

    /// Connected components of the vertex skeleton that contain at least
    /// one bulk vertex.
    pub fn bulk_components(&self) -> usize {
        let n = self.vertices.len();
        let mut dsu: Vec<usize> = (0..n).collect();
        fn find(dsu: &mut Vec<usize>, x: usize) -> usize {
            if dsu[x] != x {
                let r = find(dsu, dsu[x]);
                dsu[x] = r;
            }
            dsu[x]
        }
        for &(s, d) in &self.edges {
            if let (End::V(a), End::V(b)) = (s, d) {
                let (ra, rb) = (find(&mut dsu, a), find(&mut dsu, b));
                if ra != rb {
                    dsu[ra] = rb;
                }
            }
        }
        let mut roots = BTreeSet::new();
        for v in 0..n {
            if self.vertices[v].is_bulk() {
                let r = find(&mut dsu, v);
                roots.insert(r);
            }
        }
        roots.len()
    }

    /// Whether removing edge `e` increases the number of connected
    /// components of the vertex skeleton (bridge test on the multigraph).
    pub fn is_bridge(&self, e: usize) -> bool {
        let (s, d) = self.edges[e];
        let (End::V(a), End::V(b)) = (s, d) else {
            return true;
        };
        if a == b {
            return false;
        }
        // A parallel copy keeps the endpoints connected.
        let parallel = self
            .edges
            .iter()
            .enumerate()
            .any(|(i, &(s2, d2))| {
                i != e
                    && matches!((s2, d2), (End::V(x), End::V(y)) if (x == a && y == b) || (x == b && y == a))
            });
        if parallel {
            return false;
        }
        // BFS avoiding edge e.
        let n = self.vertices.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, &(s2, d2)) in self.edges.iter().enumerate() {
            if i == e {
                continue;
            }
            if let (End::V(x), End::V(y)) = (s2, d2) {
                adj[x].push(y);
                adj[y].push(x);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![a];
        seen[a] = true;
        while let Some(x) = stack.pop() {
            if x == b {
                return false;
            }
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        true
    }

    fn color_classes(items: &[String]) -> Vec<Vec<usize>> {
        let mut by_color: BTreeMap<&String, Vec<usize>> = BTreeMap::new();
        for (i, c) in items.iter().enumerate() {
            by_color.entry(c).or_default().push(i);
        }
        by_color.into_values().collect()
    }

    /// The reduced structure all isomorphism questions are decided on:
    /// each leaf has exactly one edge, so unpaired leaves collapse to a
    /// per-vertex multiset of leaf kinds, and the halves of each diagonal
    /// class collapse to a tagged link between their attachment points.
    fn reduced(&self) -> ReducedGraph {
        let n = self.vertices.len();
        let mut leaf_bags: Vec<Vec<(String, u8)>> = vec![Vec::new(); n];
        let mut chi_ends: BTreeMap<u32, (Option<usize>, Option<usize>)> = BTreeMap::new();
        let mut plain_edges: Vec<(usize, usize, u8)> = Vec::new();
        for (ei, &(src, dst)) in self.edges.iter().enumerate() {
            let tag = self.tag(ei);
            match (src, dst) {
                (End::V(a), End::V(b)) => plain_edges.push((a, b, tag)),
                (End::V(a), End::L(l)) => match self.leaves[l] {
                    Leaf::DiagX(p) => {
                        chi_ends.entry(p).or_default().0 = Some(a);
                    }
                    leaf => leaf_bags[a].push((leaf.color().to_string(), tag)),
                },
                (End::L(l), End::V(b)) => match self.leaves[l] {
                    Leaf::DiagE(p) => {
                        chi_ends.entry(p).or_default().1 = Some(b);
                    }
                    leaf => leaf_bags[b].push((leaf.color().to_string(), tag)),
                },
                (End::L(_), End::L(_)) => unreachable!("validated"),
            }
        }
        for bag in &mut leaf_bags {
            bag.sort();
        }
        let chi_links: Vec<(usize, usize)> = chi_ends
            .values()
            .map(|&(a, b)| (a.expect("chi pair x half"), b.expect("chi pair e half")))
            .collect();
        ReducedGraph {
            vertex_colors: self.vertex_colors(),
            leaf_bags,
            plain_edges,
            chi_links,
        }
    }

    fn vertex_colors(&self) -> Vec<String> {
        self.vertices
            .iter()
            .enumerate()
            .map(|(v, k)| {
                let t = self.vtag(v);
                if t == 0 {
                    k.color()
                } else {
                    format!("{}@{}", k.color(), t)
                }
            })
            .collect()
    }

    /// Canonical labeling: lexicographically minimal serialization of the
    /// reduced structure over all color-preserving vertex relabelings.
    /// Isomorphic graphs (same decorations) give identical strings.
    pub fn canonical_form(&self) -> String {
        let red = self.reduced();
        // Refine vertex colors with the local leaf bags first.
        let refined: Vec<String> = (0..red.vertex_colors.len())
            .map(|v| format!("{}|{:?}", red.vertex_colors[v], red.leaf_bags[v]))
            .collect();
        let classes = Self::color_classes(&refined);
        let mut bases = Vec::new();
        let mut acc = 0;
        for cl in &classes {
            bases.push(acc);
            acc += cl.len();
        }
        let mut perm = vec![0usize; refined.len()];
        let mut best: Option<String> = None;
        permute_classes(&classes, &mut perm, &bases, 0, &mut |perm| {
            let s = red.serialize_under(perm, &refined);
            match &best {
                Some(b) if *b <= s => {}
                _ => best = Some(s),
            }
        });
        best.unwrap_or_default()
    }

    /// Order of the automorphism group: color-, direction- and
    /// decoration-preserving permutations of vertices, leaves and edges.
    /// Counted as (vertex permutations fixing the reduced structure) times
    /// the factorials of interchangeable leaves, parallel edges and
    /// parallel diagonal links.
    pub fn automorphism_order(&self) -> u64 {
        let red = self.reduced();
        let refined: Vec<String> = (0..red.vertex_colors.len())
            .map(|v| format!("{}|{:?}", red.vertex_colors[v], red.leaf_bags[v]))
            .collect();
        let classes = Self::color_classes(&refined);
        let mut bases = Vec::new();
        let mut acc = 0;
        for cl in &classes {
            bases.push(acc);
            acc += cl.len();
        }
        // Identity serialization under the class-sorted base labeling.
        let id_of: Vec<usize> = {
            let mut map = vec![0usize; refined.len()];
            let mut next = 0;
            for cl in &classes {
                for &v in cl {
                    map[v] = next;
                    next += 1;
                }
            }
            map
        };
        let id_serial = red.serialize_under(&id_of, &refined);
        let mut count = 0u64;
        let mut perm = vec![0usize; refined.len()];
        permute_classes(&classes, &mut perm, &bases, 0, &mut |perm| {
            if red.serialize_under(perm, &refined) == id_serial {
                count += 1;
            }
        });
        // Interchangeable-leaf factor: identical (kind, tag) leaves on the
        // same vertex.
        let mut extra = 1u64;
        for bag in &red.leaf_bags {
            let mut i = 0;
            while i < bag.len() {
                let mut j = i;
                while j < bag.len() && bag[j] == bag[i] {
                    j += 1;
                }
                extra *= factorial((j - i) as u64);
                i = j;
            }
        }
        // Parallel plain edges and parallel diagonal links.
        let mut mult: BTreeMap<(usize, usize, u8), u64> = BTreeMap::new();
        for &(a, b, t) in &red.plain_edges {
            *mult.entry((a, b, t)).or_insert(0) += 1;
        }
        for m in mult.values() {
            extra *= factorial(*m);
        }
        let mut chi_mult: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for &(a, b) in &red.chi_links {
            *chi_mult.entry((a, b)).or_insert(0) += 1;
        }
        for m in chi_mult.values() {
            extra *= factorial(*m);
        }
        count * extra
    }
}

struct ReducedGraph {
    vertex_colors: Vec<String>,
    leaf_bags: Vec<Vec<(String, u8)>>,
    plain_edges: Vec<(usize, usize, u8)>,
    chi_links: Vec<(usize, usize)>,
}

impl ReducedGraph {
    fn serialize_under(&self, perm: &[usize], refined: &[String]) -> String {
        let mut s = String::new();
        let mut order: Vec<usize> = (0..refined.len()).collect();
        order.sort_by_key(|&v| perm[v]);
        for &v in &order {
            let _ = write!(s, "V{};", refined[v]);
        }
        let mut edges: Vec<(usize, usize, u8)> = self
            .plain_edges
            .iter()
            .map(|&(a, b, t)| (perm[a], perm[b], t))
            .collect();
        edges.sort_unstable();
        for (a, b, t) in edges {
            let _ = write!(s, "E{}-{}t{};", a, b, t);
        }
        let mut chis: Vec<(usize, usize)> = self
            .chi_links
            .iter()
            .map(|&(a, b)| (perm[a], perm[b]))
            .collect();
        chis.sort_unstable();
        for (a, b) in chis {
            let _ = write!(s, "X{}-{};", a, b);
        }
        s
    }
}

fn factorial(n: u64) -> u64 {
    (2..=n).product::<u64>().max(1)
}

fn permute_classes(
    classes: &[Vec<usize>],
    perm: &mut Vec<usize>,
    bases: &[usize],
    class_idx: usize,
    f: &mut dyn FnMut(&Vec<usize>),
) {
    if class_idx == classes.len() {
        f(perm);
        return;
    }
    let class = &classes[class_idx];
    let base = bases[class_idx];
    let mut order: Vec<usize> = (0..class.len()).collect();
    permute_rec(&mut order, 0, &mut |ord| {
        for (slot, &pos) in ord.iter().enumerate() {
            perm[class[pos]] = base + slot;
        }
        permute_classes(classes, perm, bases, class_idx + 1, f);
    });
}

fn permute_rec(items: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&Vec<usize>)) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute_rec(items, k + 1, f);
        items.swap(k, i);
    }
}

/// The vertex species available to the enumerator.
#[derive(Clone, Debug, Default)]
pub struct VertexMenu {
    /// Interaction arities (k in, l out).
    pub theta: Vec<(usize, usize)>,
    /// Connection-vertex in-arities (always one out).
    pub r_in: Vec<usize>,
    /// Boundary leg counts offered per side (empty = side disabled).
    pub b1_legs: Vec<usize>,
    pub b2_legs: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct Budgets {
    pub max_bulk: usize,
    pub max_loops: usize,
    pub max_b1: usize,
    pub max_b2: usize,
    pub unimodular: bool,
    /// Hard cap on generated candidates; exceeded budgets are an error.
    pub candidate_cap: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            max_bulk: 3,
            max_loops: 2,
            max_b1: 0,
            max_b2: 0,
            unimodular: true,
            candidate_cap: 2_000_000,
        }
    }
}

/// Enumerates one representative per isomorphism class of graphs built
/// from the menu within the budgets, in a deterministic order.
pub fn enumerate(menu: &VertexMenu, budgets: &Budgets) -> Result<Vec<FeynmanGraph>, GraphError> {
    let mut species: Vec<VertexKind> = Vec::new();
    for &(k, l) in &menu.theta {
        species.push(VertexKind::Theta { ins: k, outs: l });
    }
    for &k in &menu.r_in {
        species.push(VertexKind::RVertex { ins: k });
    }
    let b1_species: Vec<VertexKind> = menu
        .b1_legs
        .iter()
        .map(|&a| VertexKind::Boundary1 {
            legs: a,
            composite: Vec::new(),
        })
        .collect();
    let b2_species: Vec<VertexKind> = menu
        .b2_legs
        .iter()
        .map(|&a| VertexKind::Boundary2 {
            legs: a,
            composite: Vec::new(),
        })
        .collect();

    let mut classes: BTreeMap<String, FeynmanGraph> = BTreeMap::new();
    let mut candidates = 0usize;

    // Choose a multiset of bulk species (counted) and boundary species.
    let bulk_multisets = multisets_up_to(species.len(), budgets.max_bulk);
    let b1_multisets = multisets_up_to(b1_species.len(), budgets.max_b1);
    let b2_multisets = multisets_up_to(b2_species.len(), budgets.max_b2);
    for bulk_counts in &bulk_multisets {
        for b1_counts in &b1_multisets {
            for b2_counts in &b2_multisets {
                let mut vertices: Vec<VertexKind> = Vec::new();
                for (s, &c) in bulk_counts.iter().enumerate() {
                    for _ in 0..c {
                        vertices.push(species[s].clone());
                    }
                }
                for (s, &c) in b1_counts.iter().enumerate() {
                    for _ in 0..c {
                        vertices.push(b1_species[s].clone());
                    }
                }
                for (s, &c) in b2_counts.iter().enumerate() {
                    for _ in 0..c {
                        vertices.push(b2_species[s].clone());
                    }
                }
                fill_edges(
                    &vertices,
                    budgets,
                    &mut candidates,
                    &mut classes,
                )?;
            }
        }
    }
    Ok(classes.into_values().collect())
}

fn multisets_up_to(n_species: usize, max_total: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut counts = vec![0usize; n_species];
    fn rec(
        counts: &mut Vec<usize>,
        idx: usize,
        remaining: usize,
        out: &mut Vec<Vec<usize>>,
    ) {
        if idx == counts.len() {
            out.push(counts.clone());
            return;
        }
        for c in 0..=remaining {
            counts[idx] = c;
            rec(counts, idx + 1, remaining - c, out);
        }
        counts[idx] = 0;
    }
    if n_species == 0 {
        return vec![vec![]];
    }
    rec(&mut counts, 0, max_total, &mut out);
    out
}

fn fill_edges(
    vertices: &[VertexKind],
    budgets: &Budgets,
    candidates: &mut usize,
    classes: &mut BTreeMap<String, FeynmanGraph>,
) -> Result<(), GraphError> {
    let n = vertices.len();
    let arities: Vec<(usize, usize)> = vertices.iter().map(|k| k.arity()).collect();
    // m[a][b] = number of edges a -> b; remaining slots become leaves.
    let mut m = vec![vec![0usize; n]; n];
    let mut out_used = vec![0usize; n];
    let mut in_used = vec![0usize; n];
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|&(a, b)| !(budgets.unimodular && a == b))
        .collect();
    fill_rec(
        vertices,
        &arities,
        budgets,
        &pairs,
        0,
        &mut m,
        &mut out_used,
        &mut in_used,
        candidates,
        classes,
    )
}

#[allow(clippy::too_many_arguments)]
fn fill_rec(
    vertices: &[VertexKind],
    arities: &[(usize, usize)],
    budgets: &Budgets,
    pairs: &[(usize, usize)],
    idx: usize,
    m: &mut Vec<Vec<usize>>,
    out_used: &mut Vec<usize>,
    in_used: &mut Vec<usize>,
    candidates: &mut usize,
    classes: &mut BTreeMap<String, FeynmanGraph>,
) -> Result<(), GraphError> {
    if idx == pairs.len() {
        *candidates += 1;
        if *candidates > budgets.candidate_cap {
            return Err(GraphError::BudgetExceeded(format!(
                "more than {} edge assignments",
                budgets.candidate_cap
            )));
        }
        let g = build_graph(vertices, arities, m);
        if g.loop_count() > budgets.max_loops {
            return Ok(());
        }
        let key = g.canonical_form();
        classes.entry(key).or_insert(g);
        return Ok(());
    }
    let (a, b) = pairs[idx];
    let max_here = (arities[a].1 - out_used[a]).min(arities[b].0 - in_used[b]);
    for c in 0..=max_here {
        m[a][b] = c;
        out_used[a] += c;
        in_used[b] += c;
        fill_rec(
            vertices, arities, budgets, pairs, idx + 1, m, out_used, in_used, candidates, classes,
        )?;
        out_used[a] -= c;
        in_used[b] -= c;
        m[a][b] = 0;
    }
    Ok(())
}

fn build_graph(vertices: &[VertexKind], arities: &[(usize, usize)], m: &[Vec<usize>]) -> FeynmanGraph {
    let n = vertices.len();
    let mut edges: Vec<Edge> = Vec::new();
    let mut leaves: Vec<Leaf> = Vec::new();
    let mut out_used = vec![0usize; n];
    let mut in_used = vec![0usize; n];
    for a in 0..n {
        for b in 0..n {
            for _ in 0..m[a][b] {
                edges.push((End::V(a), End::V(b)));
            }
            out_used[a] += m[a][b];
            in_used[b] += m[b][a].min(0); // placeholder, recomputed below
        }
    }
    let mut in_total = vec![0usize; n];
    for a in 0..n {
        for b in 0..n {
            in_total[b] += m[a][b];
        }
    }
    for v in 0..n {
        // Unfilled out-slots end on residual x leaves, unfilled in-slots
        // start at residual e leaves.
        for _ in 0..(arities[v].1 - out_used[v]) {
            let l = leaves.len();
            leaves.push(Leaf::ResX);
            edges.push((End::V(v), End::L(l)));
        }
        for _ in 0..(arities[v].0 - in_total[v]) {
            let l = leaves.len();
            leaves.push(Leaf::ResE);
            edges.push((End::L(l), End::V(v)));
        }
    }
    let edge_tags = vec![0; edges.len()];
    let vertex_tags = vec![0; vertices.len()];
    FeynmanGraph {
        vertices: vertices.to_vec(),
        leaves,
        edges,
        edge_tags,
        vertex_tags,
    }
}

/// Exchanges a marked edge for a marked pair of residual leaves, and back.
pub fn edge_pair_bijection(mg: &MarkedGraph) -> Result<MarkedGraph, GraphError> {
    match mg.mark {
        Marking::Edge(e) => {
            let Some(&(src, dst)) = mg.graph.edges.get(e) else {
                return Err(GraphError::BadMarking);
            };
            if !matches!(src, End::V(_)) || !matches!(dst, End::V(_)) {
                return Err(GraphError::BadMarking);
            }
            let mut g = mg.graph.clone();
            g.edges.remove(e);
            if e < g.edge_tags.len() {
                g.edge_tags.remove(e);
            }
            let lx = g.leaves.len();
            g.leaves.push(Leaf::ResX);
            g.edges.push((src, End::L(lx)));
            g.edge_tags.push(0);
            let le = g.leaves.len();
            g.leaves.push(Leaf::ResE);
            g.edges.push((End::L(le), dst));
            g.edge_tags.push(0);
            Ok(MarkedGraph {
                graph: g,
                mark: Marking::Pair(lx, le),
            })
        }
        Marking::Pair(lx, le) => {
            let g = &mg.graph;
            if lx >= g.leaves.len() || le >= g.leaves.len() {
                return Err(GraphError::BadMarking);
            }
            if g.leaves[lx] != Leaf::ResX || g.leaves[le] != Leaf::ResE {
                return Err(GraphError::BadMarking);
            }
            // The x leaf absorbs from some vertex, the e leaf feeds one.
            let src = g
                .edges
                .iter()
                .find(|&&(_, d)| d == End::L(lx))
                .map(|&(s, _)| s)
                .ok_or(GraphError::BadMarking)?;
            let dst = g
                .edges
                .iter()
                .find(|&&(s, _)| s == End::L(le))
                .map(|&(_, d)| d)
                .ok_or(GraphError::BadMarking)?;
            let mut vertices = g.vertices.clone();
            let _ = &mut vertices;
            let mut edges: Vec<Edge> = Vec::new();
            let mut leaves: Vec<Leaf> = Vec::new();
            let mut leaf_map: BTreeMap<usize, usize> = BTreeMap::new();
            for (l, &kind) in g.leaves.iter().enumerate() {
                if l == lx || l == le {
                    continue;
                }
                leaf_map.insert(l, leaves.len());
                leaves.push(kind);
            }
            let remap = |e: End| -> Option<End> {
                match e {
                    End::V(v) => Some(End::V(v)),
                    End::L(l) => leaf_map.get(&l).map(|&x| End::L(x)),
                }
            };
            for &(s, d) in &g.edges {
                if d == End::L(lx) || s == End::L(le) {
                    continue;
                }
                edges.push((remap(s).unwrap(), remap(d).unwrap()));
            }
            edges.push((src, dst));
            let mark = Marking::Edge(edges.len() - 1);
            let edge_tags = vec![0; edges.len()];
            let vertex_tags = g.vertex_tags.clone();
            Ok(MarkedGraph {
                graph: FeynmanGraph {
                    vertices: g.vertices.clone(),
                    leaves,
                    edges,
                    edge_tags,
                    vertex_tags,
                },
                mark,
            })
        }
        _ => Err(GraphError::BadMarking),
    }
}

/// Replaces an edge or a residual pair by the two halves of a diagonal
/// class, linked by a fresh pair id.
pub fn split_edge(g: &FeynmanGraph, element: &Marking) -> Result<FeynmanGraph, GraphError> {
    let fresh = g
        .leaves
        .iter()
        .filter_map(|l| l.pair_id())
        .max()
        .map(|p| p + 1)
        .unwrap_or(0);
    match *element {
        Marking::Edge(e) => {
            let Some(&(src, dst)) = g.edges.get(e) else {
                return Err(GraphError::BadMarking);
            };
            let mut out = g.clone();
            out.edges.remove(e);
            if e < out.edge_tags.len() {
                out.edge_tags.remove(e);
            }
            let lx = out.leaves.len();
            out.leaves.push(Leaf::DiagX(fresh));
            out.edges.push((src, End::L(lx)));
            out.edge_tags.push(0);
            let le = out.leaves.len();
            out.leaves.push(Leaf::DiagE(fresh));
            out.edges.push((End::L(le), dst));
            out.edge_tags.push(0);
            Ok(out)
        }
        Marking::Pair(lx, le) => {
            if lx >= g.leaves.len() || le >= g.leaves.len() {
                return Err(GraphError::BadMarking);
            }
            if g.leaves[lx] != Leaf::ResX || g.leaves[le] != Leaf::ResE {
                return Err(GraphError::BadMarking);
            }
            let mut out = g.clone();
            out.leaves[lx] = Leaf::DiagX(fresh);
            out.leaves[le] = Leaf::DiagE(fresh);
            Ok(out)
        }
        _ => Err(GraphError::BadMarking),
    }
}

/// The record produced by collapsing an edge between two bulk vertices:
/// which tensor kinds fuse and with what arities; the contraction always
/// pairs an out-index (cofiber slot) of the source tensor with an in-index
/// (fiber slot) of the target tensor.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct MergeRequest {
    pub src: VertexKind,
    pub dst: VertexKind,
    pub merged_arity: (usize, usize),
    /// True when a connection (R/C) vertex is involved.
    pub mixed: bool,
}

/// Collapses edge `e` between two bulk vertices into a single merged
/// vertex, returning the quotient graph and the merge request.
pub fn collapse_edge(
    g: &FeynmanGraph,
    e: usize,
) -> Result<(FeynmanGraph, MergeRequest), GraphError> {
    let Some(&(src, dst)) = g.edges.get(e) else {
        return Err(GraphError::BadMarking);
    };
    let (End::V(a), End::V(b)) = (src, dst) else {
        return Err(GraphError::BadCollapse);
    };
    if !g.vertices[a].is_bulk() || !g.vertices[b].is_bulk() || a == b {
        return Err(GraphError::BadCollapse);
    }
    let (ka, la) = g.vertices[a].arity();
    let (kb, lb) = g.vertices[b].arity();
    let merged_arity = (ka + kb - 1, la + lb - 1);
    let mixed = !matches!(g.vertices[a], VertexKind::Theta { .. })
        || !matches!(g.vertices[b], VertexKind::Theta { .. });
    let req = MergeRequest {
        src: g.vertices[a].clone(),
        dst: g.vertices[b].clone(),
        merged_arity,
        mixed,
    };
    // Quotient: new vertex list with a and b replaced by one Theta vertex
    // of the merged arity (mixed merges keep the Theta container; the
    // request records what fused).
    let keep: Vec<usize> = (0..g.vertices.len()).filter(|&v| v != a && v != b).collect();
    let mut vmap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vertices: Vec<VertexKind> = Vec::new();
    for &v in &keep {
        vmap.insert(v, vertices.len());
        vertices.push(g.vertices[v].clone());
    }
    let merged_id = vertices.len();
    // Two connection-type vertices fuse into a connection-type container
    // (one out, two dx factors); every other fusion keeps the interaction
    // container. The request records the exact parts.
    let src_is_conn = !matches!(g.vertices[a], VertexKind::Theta { .. });
    let dst_is_conn = !matches!(g.vertices[b], VertexKind::Theta { .. });
    if src_is_conn && dst_is_conn {
        vertices.push(VertexKind::RVertex {
            ins: merged_arity.0,
        });
    } else {
        vertices.push(VertexKind::Theta {
            ins: merged_arity.0,
            outs: merged_arity.1,
        });
    }
    let remap = |end: End| -> End {
        match end {
            End::V(v) if v == a || v == b => End::V(merged_id),
            End::V(v) => End::V(vmap[&v]),
            End::L(l) => End::L(l),
        }
    };
    let mut edges: Vec<Edge> = Vec::new();
    let mut edge_tags: Vec<u8> = Vec::new();
    for (i, &(s, d)) in g.edges.iter().enumerate() {
        if i == e {
            continue;
        }
        edges.push((remap(s), remap(d)));
        edge_tags.push(g.tag(i));
    }
    let vertex_tags = vec![0; vertices.len()];
    Ok((
        FeynmanGraph {
            vertices,
            leaves: g.leaves.clone(),
            edges,
            edge_tags,
            vertex_tags,
        },
        req,
    ))
}

/// One admissible boundary collapse: the subgraph (by vertex ids), the
/// face symbol of its amputated part, and the quotient graph with the new
/// collapsed vertex.
#[derive(Clone, Debug)]
pub struct BoundaryCollapse {
    pub subgraph: Vec<usize>,
    pub sigma: String,
    pub quotient: FeynmanGraph,
    pub collapsed_vertex: usize,
    /// Number of outward legs (side 1) resp. inward legs (side 2).
    pub legs: usize,
    /// Composites of the swallowed boundary vertices.
    pub composites: Vec<Vec<usize>>,
}

/// Enumerates the admissible subgraph collapses at boundary side 1 or 2.
/// A side-1 subgraph contains bulk vertices and side-1 boundary vertices
/// and has no inward edges from outside vertices; mirrored for side 2.
pub fn boundary_collapse_subgraphs(g: &FeynmanGraph, side: u8) -> Vec<BoundaryCollapse> {
    let eligible: Vec<usize> = (0..g.vertices.len())
        .filter(|&v| {
            g.vertices[v].is_bulk()
                || match (&g.vertices[v], side) {
                    (VertexKind::Boundary1 { .. }, 1) => true,
                    (VertexKind::Boundary2 { .. }, 2) => true,
                    (VertexKind::Collapsed { side: s, .. }, _) => *s == side,
                    _ => false,
                }
        })
        .collect();
    let mut out = Vec::new();
    // All nonempty subsets of eligible vertices.
    let n = eligible.len();
    if n == 0 || n > 20 {
        return out;
    }
    'subset: for mask in 1u32..(1 << n) {
        let subset: BTreeSet<usize> = (0..n)
            .filter(|&i| mask & (1 << i) != 0)
            .map(|i| eligible[i])
            .collect();
        // Admissibility: no edges crossing into the subset (side 1) or out
        // of it (side 2) from/to outside vertices.
        let mut legs = 0usize;
        for &(s, d) in &g.edges {
            match (s, d) {
                (End::V(a), End::V(b)) => {
                    let a_in = subset.contains(&a);
                    let b_in = subset.contains(&b);
                    if side == 1 {
                        if !a_in && b_in {
                            continue 'subset;
                        }
                        if a_in && !b_in {
                            legs += 1;
                        }
                    } else {
                        if a_in && !b_in {
                            continue 'subset;
                        }
                        if !a_in && b_in {
                            legs += 1;
                        }
                    }
                }
                _ => {}
            }
        }
        // The face symbol is the canonical form of the amputated subgraph:
        // induced subgraph, outward legs and residual leaves cut off.
        let sub_vec: Vec<usize> = subset.iter().copied().collect();
        let sigma = amputated_canonical(g, &subset);
        let composites: Vec<Vec<usize>> = sub_vec
            .iter()
            .filter_map(|&v| match &g.vertices[v] {
                VertexKind::Boundary1 { composite, .. } if side == 1 => Some(composite.clone()),
                VertexKind::Boundary2 { composite, .. } if side == 2 => Some(composite.clone()),
                _ => None,
            })
            .collect();
        let (quotient, collapsed_vertex) = collapse_to_boundary(g, &subset, side, &sigma, &composites, legs);
        out.push(BoundaryCollapse {
            subgraph: sub_vec,
            sigma,
            quotient,
            collapsed_vertex,
            legs,
            composites,
        });
    }
    out.sort_by(|a, b| a.subgraph.cmp(&b.subgraph));
    out
}

fn amputated_canonical(g: &FeynmanGraph, subset: &BTreeSet<usize>) -> String {
    let mut vmap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    for &v in subset {
        vmap.insert(v, vertices.len());
        vertices.push(g.vertices[v].clone());
    }
    let mut edges = Vec::new();
    for &(s, d) in &g.edges {
        if let (End::V(a), End::V(b)) = (s, d) {
            if subset.contains(&a) && subset.contains(&b) {
                edges.push((End::V(vmap[&a]), End::V(vmap[&b])));
            }
        }
    }
    let edge_tags = vec![0; edges.len()];
    let vertex_tags = vec![0; vertices.len()];
    let amp = FeynmanGraph {
        vertices,
        leaves: Vec::new(),
        edges,
        edge_tags,
        vertex_tags,
    };
    amp.canonical_form()
}

fn collapse_to_boundary(
    g: &FeynmanGraph,
    subset: &BTreeSet<usize>,
    side: u8,
    sigma: &str,
    composites: &[Vec<usize>],
    legs: usize,
) -> (FeynmanGraph, usize) {
    let keep: Vec<usize> = (0..g.vertices.len())
        .filter(|v| !subset.contains(v))
        .collect();
    let mut vmap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vertices: Vec<VertexKind> = Vec::new();
    for &v in &keep {
        vmap.insert(v, vertices.len());
        vertices.push(g.vertices[v].clone());
    }
    let star = vertices.len();
    vertices.push(VertexKind::Collapsed {
        side,
        sigma: sigma.to_string(),
        composites: composites.to_vec(),
        legs,
    });
    let remap = |end: End| -> End {
        match end {
            End::V(v) if subset.contains(&v) => End::V(star),
            End::V(v) => End::V(vmap[&v]),
            End::L(l) => End::L(l),
        }
    };
    let mut edges: Vec<Edge> = Vec::new();
    let mut edge_tags: Vec<u8> = Vec::new();
    for (i, &(s, d)) in g.edges.iter().enumerate() {
        let (rs, rd) = (remap(s), remap(d));
        // Edges entirely inside the collapsed subgraph disappear into the
        // face symbol.
        if rs == End::V(star) && rd == End::V(star) {
            continue;
        }
        edges.push((rs, rd));
        edge_tags.push(g.tag(i));
    }
    let vertex_tags = vec![0; vertices.len()];
    (
        FeynmanGraph {
            vertices,
            leaves: g.leaves.clone(),
            edges,
            edge_tags,
            vertex_tags,
        },
        star,
    )
}

/// Serialization mirror of the JSON schema.
#[derive(Serialize, Deserialize)]
struct JsonGraph {
    vertices: Vec<JsonVertex>,
    edges: Vec<[String; 2]>,
    leaves: Vec<JsonLeaf>,
}

#[derive(Serialize, Deserialize)]
struct JsonVertex {
    id: usize,
    #[serde(rename = "type")]
    kind: String,
    #[serde(rename = "in")]
    ins: usize,
    out: usize,
    composite: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct JsonLeaf {
    #[serde(rename = "type")]
    kind: String,
    index: Option<u32>,
}

pub fn export(g: &FeynmanGraph, format: &str) -> Result<String, GraphError> {
    match format {
        "json" => Ok(export_json(g)),
        "dot" => Ok(export_dot(g)),
        other => Err(GraphError::UnknownFormat(other.to_string())),
    }
}

fn end_code(e: End) -> String {
    match e {
        End::V(v) => format!("v{}", v),
        End::L(l) => format!("l{}", l),
    }
}

fn export_json(g: &FeynmanGraph) -> String {
    let vertices = g
        .vertices
        .iter()
        .enumerate()
        .map(|(id, k)| {
            let (ins, out) = k.arity();
            let (kind, composite) = match k {
                VertexKind::Theta { .. } => ("theta".to_string(), Vec::new()),
                VertexKind::RVertex { .. } => ("r".to_string(), Vec::new()),
                VertexKind::CVertex { .. } => ("c".to_string(), Vec::new()),
                VertexKind::Boundary1 { composite, .. } => ("b1".to_string(), composite.clone()),
                VertexKind::Boundary2 { composite, .. } => ("b2".to_string(), composite.clone()),
                VertexKind::Collapsed { side, sigma, .. } => {
                    (format!("collapsed{}:{}", side, sigma), Vec::new())
                }
            };
            JsonVertex {
                id,
                kind,
                ins,
                out,
                composite,
            }
        })
        .collect();
    let edges = g
        .edges
        .iter()
        .map(|&(s, d)| [end_code(s), end_code(d)])
        .collect();
    let leaves = g
        .leaves
        .iter()
        .map(|l| JsonLeaf {
            kind: l.color().to_string(),
            index: l.pair_id(),
        })
        .collect();
    serde_json::to_string(&JsonGraph {
        vertices,
        edges,
        leaves,
    })
    .expect("graph serialization cannot fail")
}

pub fn import_json(text: &str) -> Result<FeynmanGraph, GraphError> {
    let jg: JsonGraph =
        serde_json::from_str(text).map_err(|e| GraphError::Import(e.to_string()))?;
    let mut vertices = Vec::new();
    for v in &jg.vertices {
        let kind = match v.kind.as_str() {
            "theta" => VertexKind::Theta {
                ins: v.ins,
                outs: v.out,
            },
            "r" => VertexKind::RVertex { ins: v.ins },
            "c" => VertexKind::CVertex { ins: v.ins },
            "b1" => VertexKind::Boundary1 {
                legs: v.out,
                composite: v.composite.clone(),
            },
            "b2" => VertexKind::Boundary2 {
                legs: v.ins,
                composite: v.composite.clone(),
            },
            other if other.starts_with("collapsed") => {
                let side = if other.starts_with("collapsed1") { 1 } else { 2 };
                let sigma = other.splitn(2, ':').nth(1).unwrap_or("").to_string();
                VertexKind::Collapsed {
                    side,
                    sigma,
                    composites: Vec::new(),
                    legs: v.out,
                }
            }
            other => return Err(GraphError::Import(format!("unknown vertex type `{}`", other))),
        };
        vertices.push(kind);
    }
    let mut leaves = Vec::new();
    for l in &jg.leaves {
        let leaf = match (l.kind.as_str(), l.index) {
            ("x", _) => Leaf::ResX,
            ("e", _) => Leaf::ResE,
            ("cx", Some(p)) => Leaf::DiagX(p),
            ("ce", Some(p)) => Leaf::DiagE(p),
            ("sx", _) => Leaf::SigmaX,
            ("se", _) => Leaf::SigmaE,
            ("dsx", _) => Leaf::DSigmaX,
            ("dse", _) => Leaf::DSigmaE,
            (other, _) => {
                return Err(GraphError::Import(format!("unknown leaf type `{}`", other)))
            }
        };
        leaves.push(leaf);
    }
    let mut edges = Vec::new();
    for [s, d] in &jg.edges {
        let parse_end = |t: &str| -> Result<End, GraphError> {
            let (head, num) = t.split_at(1);
            let idx: usize = num
                .parse()
                .map_err(|_| GraphError::Import(format!("bad endpoint `{}`", t)))?;
            match head {
                "v" => Ok(End::V(idx)),
                "l" => Ok(End::L(idx)),
                _ => Err(GraphError::Import(format!("bad endpoint `{}`", t))),
            }
        };
        edges.push((parse_end(s)?, parse_end(d)?));
    }
    FeynmanGraph::new(vertices, leaves, edges, false)
}

fn export_dot(g: &FeynmanGraph) -> String {
    let mut s = String::from("digraph feynman {\n  rankdir=TB;\n");
    let mut boundary_ids = Vec::new();
    for (i, k) in g.vertices.iter().enumerate() {
        let (shape, label) = match k {
            VertexKind::Theta { ins, outs } => ("circle", format!("T({},{})", ins, outs)),
            VertexKind::RVertex { ins } => ("diamond", format!("R({})", ins)),
            VertexKind::CVertex { ins } => ("diamond", format!("C({})", ins)),
            VertexKind::Boundary1 { legs, .. } => {
                boundary_ids.push(i);
                ("box", format!("B1({})", legs))
            }
            VertexKind::Boundary2 { legs, .. } => {
                boundary_ids.push(i);
                ("box", format!("B2({})", legs))
            }
            VertexKind::Collapsed { side, legs, .. } => {
                boundary_ids.push(i);
                ("doublecircle", format!("K{}({})", side, legs))
            }
        };
        let _ = writeln!(s, "  v{} [shape={}, label=\"{}\"];", i, shape, label);
    }
    for (i, l) in g.leaves.iter().enumerate() {
        let _ = writeln!(
            s,
            "  l{} [shape=plaintext, label=\"{}\"];",
            i,
            l.color()
        );
    }
    if !boundary_ids.is_empty() {
        let names: Vec<String> = boundary_ids.iter().map(|i| format!("v{}", i)).collect();
        let _ = writeln!(s, "  {{ rank=same; {}; }}", names.join("; "));
    }
    for &(a, b) in &g.edges {
        let _ = writeln!(s, "  {} -> {};", end_code(a), end_code(b));
    }
    s.push_str("}\n");
    s
}
