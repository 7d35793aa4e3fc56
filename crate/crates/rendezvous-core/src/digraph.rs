//! Sensing digraph and the graph theory the convergence argument rests on.
//!
//! Nodes are labeled `1..=n`. An edge `(i, j)` means robot `i` senses robot
//! `j`, so the neighbor set `N_i` collects the robots visible to `i`. Each
//! edge carries a positive gain `a_ij`. On top of the raw graph this module
//! provides the weighted Laplacian `L = D - A`, the reverse-spanning-tree
//! test, Tarjan's strongly connected components with the condensation DAG,
//! and the layer decomposition used to peel the network from its root
//! component outward.

use nalgebra::DMatrix;
use thiserror::Error;

/// Node label, `1..=n`.
pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("self-loop {0}\u{2192}{0}")]
    SelfLoop(NodeId),
    #[error("edge {from}\u{2192}{to} has non-positive weight {weight}")]
    NonPositiveWeight {
        from: NodeId,
        to: NodeId,
        weight: f64,
    },
    #[error("duplicate edge {from}\u{2192}{to}")]
    DuplicateEdge { from: NodeId, to: NodeId },
    #[error("node {node} out of range 1..={n}")]
    IndexOutOfRange { node: NodeId, n: usize },
    #[error("graph has no reverse directed spanning tree, so no root layer exists")]
    NoRoot,
}

/// Weighted sensing digraph, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiGraph {
    n: usize,
    // out[i] = sorted list of (neighbor, weight) for node i+1
    out: Vec<Vec<(NodeId, f64)>>,
}

impl DiGraph {
    /// Build a graph on `n` nodes from `(from, to, weight)` triples.
    pub fn new(n: usize, weighted_edges: &[(NodeId, NodeId, f64)]) -> Result<Self, GraphError> {
        let mut out = vec![Vec::new(); n];
        for &(i, j, w) in weighted_edges {
            for node in [i, j] {
                if node == 0 || node > n {
                    return Err(GraphError::IndexOutOfRange { node, n });
                }
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if !(w > 0.0) {
                return Err(GraphError::NonPositiveWeight {
                    from: i,
                    to: j,
                    weight: w,
                });
            }
            if out[i - 1].iter().any(|&(k, _)| k == j) {
                return Err(GraphError::DuplicateEdge { from: i, to: j });
            }
            out[i - 1].push((j, w));
        }
        for nbrs in &mut out {
            nbrs.sort_unstable_by_key(|&(j, _)| j);
        }
        Ok(Self { n, out })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Neighbors of `i` (the robots it senses) with their edge weights.
    pub fn neighbors(&self, i: NodeId) -> &[(NodeId, f64)] {
        &self.out[i - 1]
    }

    /// Sum of outgoing weights of `i`; zero for a node that senses nobody.
    pub fn weight_sum(&self, i: NodeId) -> f64 {
        self.out[i - 1].iter().map(|&(_, w)| w).sum()
    }

    /// All edges as `(from, to, weight)`, ordered by `(from, to)`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().map(move |&(j, w)| (i + 1, j, w)))
    }

    /// Weighted Laplacian `L = D - A`. Rows sum to zero by construction.
    pub fn weighted_laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for (i, j, w) in self.edges() {
            l[(i - 1, j - 1)] -= w;
            l[(i - 1, i - 1)] += w;
        }
        l
    }

    /// True iff membership in `s` is closed under outgoing edges.
    pub fn is_isolated(&self, s: &[NodeId]) -> bool {
        let mut member = vec![false; self.n + 1];
        for &v in s {
            member[v] = true;
        }
        self.edges().all(|(i, j, _)| !member[i] || member[j])
    }

    /// True iff some node is reachable from every node along directed paths.
    pub fn has_reverse_spanning_tree(&self) -> bool {
        self.reverse_spanning_tree_root().is_some()
    }

    /// Smallest-labeled node of the root component, when one exists.
    ///
    /// A root is a node every other node can reach; equivalently the
    /// condensation has exactly one component without outgoing edges.
    pub fn reverse_spanning_tree_root(&self) -> Option<NodeId> {
        let c = self.condensation();
        c.root.map(|r| c.components[r][0])
    }

    /// Strongly connected components plus the contracted DAG.
    pub fn condensation(&self) -> Condensation {
        let mut components = tarjan(self);
        // Canonical order: by smallest node label.
        for comp in &mut components {
            comp.sort_unstable();
        }
        components.sort_unstable_by_key(|c| c[0]);

        let mut comp_of = vec![usize::MAX; self.n + 1];
        for (ci, comp) in components.iter().enumerate() {
            for &v in comp {
                comp_of[v] = ci;
            }
        }
        let mut dag_edges: Vec<(usize, usize)> = self
            .edges()
            .filter_map(|(i, j, _)| {
                let (ci, cj) = (comp_of[i], comp_of[j]);
                (ci != cj).then_some((ci, cj))
            })
            .collect();
        dag_edges.sort_unstable();
        dag_edges.dedup();

        let mut has_out = vec![false; components.len()];
        for &(ci, _) in &dag_edges {
            has_out[ci] = true;
        }
        let sinks: Vec<usize> = (0..components.len()).filter(|&c| !has_out[c]).collect();
        let root = (sinks.len() == 1).then(|| sinks[0]);

        Condensation {
            components,
            dag_edges,
            root,
            comp_of,
        }
    }
}

/// Strongly connected components of a graph and the DAG they contract to.
#[derive(Debug, Clone, PartialEq)]
pub struct Condensation {
    /// Node sets of the components, each sorted, ordered by smallest label.
    pub components: Vec<Vec<NodeId>>,
    /// Edges between component indices, deduplicated.
    pub dag_edges: Vec<(usize, usize)>,
    /// Index of the unique component with no outgoing edges, if unique.
    pub root: Option<usize>,
    comp_of: Vec<usize>,
}

impl Condensation {
    /// Index into `components` of the component containing `v`.
    pub fn component_of(&self, v: NodeId) -> usize {
        self.comp_of[v]
    }

    /// True iff the contracted graph has no directed cycle.
    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    fn topological_order(&self) -> Option<Vec<usize>> {
        let m = self.components.len();
        let mut indeg = vec![0usize; m];
        let mut out = vec![Vec::new(); m];
        for &(a, b) in &self.dag_edges {
            out[a].push(b);
            indeg[b] += 1;
        }
        let mut queue: Vec<usize> = (0..m).filter(|&c| indeg[c] == 0).collect();
        let mut order = Vec::with_capacity(m);
        while let Some(c) = queue.pop() {
            order.push(c);
            for &d in &out[c] {
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    queue.push(d);
                }
            }
        }
        (order.len() == m).then_some(order)
    }

    /// Group components by longest path length to the root.
    ///
    /// The root component forms layer 0; a component sits in layer `k` when
    /// its longest DAG path to the root has `k` edges. Every cumulative union
    /// of layers is an isolated node set, which is what lets the convergence
    /// argument proceed layer by layer.
    pub fn layer_sets(&self) -> Result<LayerDecomposition, GraphError> {
        let root = self.root.ok_or(GraphError::NoRoot)?;
        let order = self.topological_order().ok_or(GraphError::NoRoot)?;
        let m = self.components.len();

        // Longest path to root: process in reverse topological order so all
        // out-neighbors are resolved first.
        let mut depth = vec![None::<usize>; m];
        depth[root] = Some(0);
        for &c in order.iter().rev() {
            if c == root {
                continue;
            }
            let best = self
                .dag_edges
                .iter()
                .filter(|&&(a, _)| a == c)
                .filter_map(|&(_, b)| depth[b])
                .max();
            if let Some(d) = best {
                depth[c] = Some(d + 1);
            }
        }
        // With a unique sink every component reaches the root.
        let k_star = depth.iter().map(|d| d.ok_or(GraphError::NoRoot)).try_fold(
            0usize,
            |acc, d| -> Result<usize, GraphError> { Ok(acc.max(d?)) },
        )?;

        let mut layers = vec![Vec::new(); k_star + 1];
        for (c, d) in depth.iter().enumerate() {
            layers[d.unwrap()].extend_from_slice(&self.components[c]);
        }
        for layer in &mut layers {
            layer.sort_unstable();
        }
        let mut cumulative = Vec::with_capacity(layers.len());
        let mut acc: Vec<NodeId> = Vec::new();
        for layer in &layers {
            acc.extend_from_slice(layer);
            acc.sort_unstable();
            cumulative.push(acc.clone());
        }
        Ok(LayerDecomposition { layers, cumulative })
    }
}

/// Layer sets `L_0, …, L_k★` and their cumulative unions.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDecomposition {
    pub layers: Vec<Vec<NodeId>>,
    pub cumulative: Vec<Vec<NodeId>>,
}

fn tarjan(g: &DiGraph) -> Vec<Vec<NodeId>> {
    struct State<'a> {
        g: &'a DiGraph,
        index: usize,
        stack: Vec<NodeId>,
        on_stack: Vec<bool>,
        idx: Vec<Option<usize>>,
        low: Vec<usize>,
        comps: Vec<Vec<NodeId>>,
    }

    fn connect(v: NodeId, st: &mut State) {
        st.idx[v] = Some(st.index);
        st.low[v] = st.index;
        st.index += 1;
        st.stack.push(v);
        st.on_stack[v] = true;

        for k in 0..st.g.neighbors(v).len() {
            let w = st.g.neighbors(v)[k].0;
            if st.idx[w].is_none() {
                connect(w, st);
                st.low[v] = st.low[v].min(st.low[w]);
            } else if st.on_stack[w] {
                st.low[v] = st.low[v].min(st.idx[w].unwrap());
            }
        }

        if st.low[v] == st.idx[v].unwrap() {
            let mut comp = Vec::new();
            loop {
                let w = st.stack.pop().expect("tarjan stack underflow");
                st.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            st.comps.push(comp);
        }
    }

    let n = g.node_count();
    let mut st = State {
        g,
        index: 0,
        stack: Vec::new(),
        on_stack: vec![false; n + 1],
        idx: vec![None; n + 1],
        low: vec![0; n + 1],
        comps: Vec::new(),
    };
    for v in 1..=n {
        if st.idx[v].is_none() {
            connect(v, &mut st);
        }
    }
    st.comps
}
