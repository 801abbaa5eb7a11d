//! Taxonomy storage, validation, traversal orders, and label-vector closure.
//!
//! A taxonomy is parsed from an ordered child→parent mapping whose top is the
//! sentinel name [`SENTINEL`]. Children keep source order so every downstream
//! dynamic program is bit-reproducible.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Reserved name marking a root's parent in source files.
pub const SENTINEL: &str = "ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaxonomyKind {
    Tree,
    Forest,
    Dag,
}

/// Validated label hierarchy. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    names: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    roots: Vec<usize>,
    topo: Vec<usize>,
    kind: TaxonomyKind,
}

impl Taxonomy {
    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn kind(&self) -> TaxonomyKind {
        self.kind
    }

    pub fn is_tree_or_forest(&self) -> bool {
        !matches!(self.kind, TaxonomyKind::Dag)
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    /// Sole parent of `v`, `None` for roots. Meaningful for trees/forests;
    /// on a DAG this is the first listed parent.
    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parents[v].first().copied()
    }

    pub fn is_root(&self, v: usize) -> bool {
        self.parents[v].is_empty()
    }

    /// Every node exactly once, parents before children. For trees and
    /// forests this is a depth-first pre-order following children order.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// All `(parent, child)` edges, grouped by parent in topological order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.topo
            .iter()
            .flat_map(move |&p| self.children[p].iter().map(move |&c| (p, c)))
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// Transitive closure of `children`, excluding `v` itself.
    pub fn descendants(&self, v: usize) -> Result<Vec<usize>> {
        if v >= self.len() {
            return Err(Error::NodeIndexOutOfRange {
                index: v,
                len: self.len(),
            });
        }
        let mut seen = vec![false; self.len()];
        let mut stack: Vec<usize> = self.children[v].to_vec();
        let mut out = Vec::new();
        while let Some(u) = stack.pop() {
            if seen[u] {
                continue;
            }
            seen[u] = true;
            out.push(u);
            stack.extend_from_slice(&self.children[u]);
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Minimal upward-closed vector pointwise above `y`: every positive node
    /// forces its ancestors positive. Idempotent.
    pub fn upward_close(&self, y: &LabelVector) -> LabelVector {
        let mut values = y.values.clone();
        for &v in self.topo.iter().rev() {
            if values[v] {
                for &p in &self.parents[v] {
                    values[p] = true;
                }
            }
        }
        LabelVector { values }
    }
}

/// Binary labels over one taxonomy, indexed like its nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    pub values: Vec<bool>,
}

impl LabelVector {
    pub fn new(values: Vec<bool>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, v: usize) -> bool {
        self.values[v]
    }

    /// True iff every positive node has all parents positive.
    pub fn is_upward_closed(&self, t: &Taxonomy) -> bool {
        t.edges().all(|(p, c)| !self.values[c] || self.values[p])
    }
}

/// Build a validated taxonomy from ordered `(child, parent)` pairs.
///
/// Nodes are numbered by first appearance as a child; a parent equal to
/// [`SENTINEL`] marks a root. The kind is detected from parent multiplicity
/// and root count.
pub fn parse_taxonomy<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Taxonomy> {
    if pairs.is_empty() {
        return Err(Error::EmptyTaxonomy);
    }

    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (child, _) in pairs {
        let child = child.as_ref();
        if child == SENTINEL {
            return Err(Error::ReservedNodeName(child.to_string()));
        }
        if !index.contains_key(child) {
            index.insert(child.to_string(), names.len());
            names.push(child.to_string());
        }
    }

    let n = names.len();
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut is_root = vec![false; n];

    for (child, parent) in pairs {
        let (child, parent) = (child.as_ref(), parent.as_ref());
        let c = index[child];
        if parent == SENTINEL {
            if is_root[c] {
                return Err(Error::DuplicateNode(child.to_string()));
            }
            is_root[c] = true;
            continue;
        }
        let p = *index
            .get(parent)
            .ok_or_else(|| Error::UnknownParent(parent.to_string()))?;
        if parents[c].contains(&p) {
            return Err(Error::DuplicateNode(child.to_string()));
        }
        parents[c].push(p);
        children[p].push(c);
    }

    for v in 0..n {
        if is_root[v] && !parents[v].is_empty() {
            return Err(Error::ConflictingParent(names[v].clone()));
        }
    }

    let roots: Vec<usize> = (0..n).filter(|&v| is_root[v]).collect();
    let multi_parent = parents.iter().any(|ps| ps.len() > 1);
    let kind = if multi_parent {
        TaxonomyKind::Dag
    } else if roots.len() == 1 {
        TaxonomyKind::Tree
    } else {
        TaxonomyKind::Forest
    };

    let topo = match kind {
        TaxonomyKind::Dag => kahn_order(&names, &parents, &children, &roots)?,
        _ => preorder(&names, &children, &roots)?,
    };

    Ok(Taxonomy {
        names,
        index,
        parents,
        children,
        roots,
        topo,
        kind,
    })
}

/// Depth-first pre-order over a tree/forest; errors if some node is
/// unreachable from the roots (which implies a cycle).
fn preorder(names: &[String], children: &[Vec<usize>], roots: &[usize]) -> Result<Vec<usize>> {
    let n = names.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for &r in roots {
        let mut stack = vec![r];
        while let Some(v) = stack.pop() {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            order.push(v);
            for &c in children[v].iter().rev() {
                stack.push(c);
            }
        }
    }
    if order.len() != n {
        let missing = (0..n).find(|&v| !seen[v]).unwrap();
        return Err(Error::CycleDetected(names[missing].clone()));
    }
    Ok(order)
}

/// Kahn's algorithm for DAGs, breaking ties by node index.
fn kahn_order(
    names: &[String],
    parents: &[Vec<usize>],
    children: &[Vec<usize>],
    roots: &[usize],
) -> Result<Vec<usize>> {
    let n = names.len();
    let mut remaining: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: Vec<usize> = roots.to_vec();
    let mut order = Vec::with_capacity(n);
    while !ready.is_empty() {
        ready.sort_unstable_by(|a, b| b.cmp(a));
        let v = ready.pop().unwrap();
        order.push(v);
        for &c in &children[v] {
            remaining[c] -= 1;
            if remaining[c] == 0 {
                ready.push(c);
            }
        }
    }
    if order.len() != n {
        let missing = (0..n).find(|&v| remaining[v] > 0).unwrap();
        return Err(Error::CycleDetected(names[missing].clone()));
    }
    Ok(order)
}
