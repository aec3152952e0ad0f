//! Strongly connected components of the combinatorial map, its condensation
//! DAG, and the Morse graph: the Hasse diagram of the recurrent sets ordered
//! by reachability.

use crate::outer::CubeMapSource;

const UNSET: usize = usize::MAX;

/// Condensation of the cube-to-cube digraph: one vertex per SCC, edges
/// induced by the map. When the map can escape the domain, a synthetic ⋆
/// sink vertex absorbs all escaping edges and forms its own SCC.
#[derive(Debug, Clone)]
pub struct CondensationGraph {
    /// SCC label per graph vertex (cubes, then ⋆ last when present).
    pub scc_of_cube: Vec<usize>,
    pub scc_count: usize,
    /// Recurrent flag: ≥ 2 member cubes or a self-edge; ⋆ is always flagged.
    pub nontrivial: Vec<bool>,
    /// Successor lists per SCC, sorted and deduplicated.
    pub dag_adjacency: Vec<Vec<usize>>,
    /// SCC ids listed sources-first. SCC ids are emitted in reverse
    /// topological order, so every edge goes from a higher id to a lower id.
    pub topo_order: Vec<usize>,
    pub star_scc: Option<usize>,
    /// Number of image fetches performed; equals the cube count exactly.
    pub image_calls: u64,
}

impl CondensationGraph {
    pub fn cube_count(&self) -> usize {
        self.scc_of_cube.len() - usize::from(self.star_scc.is_some())
    }

    /// Member cubes of each SCC (the ⋆ vertex is not a cube).
    pub fn scc_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.scc_count];
        for cube in 0..self.cube_count() {
            members[self.scc_of_cube[cube]].push(cube);
        }
        members
    }
}

struct Frame {
    v: usize,
    succ: Vec<usize>,
    next: usize,
}

/// Iterative Tarjan over the implicit digraph defined by `f`. Each vertex's
/// image is fetched exactly once, when its DFS frame opens, and held only
/// while the vertex is on the DFS path.
pub fn compute_scc(f: &dyn CubeMapSource) -> CondensationGraph {
    let cubes = f.cube_count();
    let has_star = f.has_star();
    let n = cubes + usize::from(has_star);
    let star_vertex = cubes;
    let mut image_calls = 0u64;
    // Fetch a vertex's successors; the ⋆ sink has none.
    let mut fetch = |v: usize| -> (Vec<usize>, bool) {
        if has_star && v == star_vertex {
            return (Vec::new(), false);
        }
        image_calls += 1;
        let (mut img, star) = f.image(v);
        let self_loop = img.binary_search(&v).is_ok();
        if star {
            img.push(star_vertex);
        }
        (img, self_loop)
    };

    let mut index = vec![UNSET; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut self_loop = vec![false; n];
    let mut scc_of = vec![UNSET; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut frames: Vec<Frame> = Vec::new();
    let mut next_index = 0usize;
    let mut scc_count = 0usize;
    // Cross edges (v, scc of successor) resolved once v's own SCC is known.
    let mut pending: Vec<(usize, usize)> = Vec::new();

    let open = |v: usize,
                    next_index: &mut usize,
                    index: &mut Vec<usize>,
                    low: &mut Vec<usize>,
                    on_stack: &mut Vec<bool>,
                    stack: &mut Vec<usize>,
                    frames: &mut Vec<Frame>,
                    self_loop: &mut Vec<bool>,
                    fetch: &mut dyn FnMut(usize) -> (Vec<usize>, bool)| {
        index[v] = *next_index;
        low[v] = *next_index;
        *next_index += 1;
        on_stack[v] = true;
        stack.push(v);
        let (succ, loops) = fetch(v);
        self_loop[v] = loops;
        frames.push(Frame { v, succ, next: 0 });
    };

    for root in 0..n {
        if index[root] != UNSET {
            continue;
        }
        open(
            root,
            &mut next_index,
            &mut index,
            &mut low,
            &mut on_stack,
            &mut stack,
            &mut frames,
            &mut self_loop,
            &mut fetch,
        );
        while let Some(frame) = frames.last_mut() {
            let v = frame.v;
            if frame.next < frame.succ.len() {
                let w = frame.succ[frame.next];
                frame.next += 1;
                if index[w] == UNSET {
                    open(
                        w,
                        &mut next_index,
                        &mut index,
                        &mut low,
                        &mut on_stack,
                        &mut stack,
                        &mut frames,
                        &mut self_loop,
                        &mut fetch,
                    );
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                } else {
                    // w's SCC is already closed: a condensation DAG edge.
                    pending.push((v, scc_of[w]));
                }
                continue;
            }
            frames.pop();
            if low[v] == index[v] {
                // v is the root of a new SCC: everything above it on the
                // stack belongs to it.
                let id = scc_count;
                scc_count += 1;
                loop {
                    let w = stack.pop().expect("Tarjan stack underflow");
                    on_stack[w] = false;
                    scc_of[w] = id;
                    if w == v {
                        break;
                    }
                }
            }
            if let Some(parent) = frames.last_mut() {
                if scc_of[v] != UNSET && scc_of[v] != scc_of[parent.v] {
                    // Tree edge into a finished SCC.
                    pending.push((parent.v, scc_of[v]));
                }
                let pv = parent.v;
                low[pv] = low[pv].min(low[v]);
            }
        }
    }

    let mut dag_adjacency = vec![Vec::new(); scc_count];
    for (v, s) in pending {
        let sv = scc_of[v];
        if sv != s {
            dag_adjacency[sv].push(s);
        }
    }
    for adj in &mut dag_adjacency {
        adj.sort_unstable();
        adj.dedup();
    }

    let mut size = vec![0usize; scc_count];
    for v in 0..n {
        size[scc_of[v]] += 1;
    }
    let mut nontrivial = vec![false; scc_count];
    for v in 0..n {
        let s = scc_of[v];
        if size[s] >= 2 || self_loop[v] {
            nontrivial[s] = true;
        }
    }
    let star_scc = has_star.then(|| scc_of[star_vertex]);
    if let Some(s) = star_scc {
        // Escaped trajectories stay escaped: ⋆ is recurrent by convention.
        nontrivial[s] = true;
    }
    CondensationGraph {
        scc_of_cube: scc_of,
        scc_count,
        nontrivial,
        dag_adjacency,
        topo_order: (0..scc_count).rev().collect(),
        star_scc,
        image_calls,
    }
}

/// One recurrent set: the cubes of a non-trivial SCC, or the ⋆ escape sink.
#[derive(Debug, Clone)]
pub struct MorseNode {
    pub scc: usize,
    pub cubes: Vec<usize>,
    pub is_star: bool,
}

/// The Morse graph: recurrent sets partially ordered by reachability in the
/// condensation DAG (`q ≤ p` iff p's SCC reaches q's SCC), presented as a
/// Hasse diagram.
#[derive(Debug, Clone)]
pub struct MorseGraph {
    pub nodes: Vec<MorseNode>,
    /// Transitively reduced edges, directed from larger to smaller node.
    pub hasse_edges: Vec<(usize, usize)>,
    /// Morse node index per SCC, `UNSET`-free via Option.
    pub node_of_scc: Vec<Option<usize>>,
    /// order[p] = bitset of nodes q with q ≤ p.
    order: Vec<Vec<u64>>,
    /// Per-SCC bitset of Morse nodes reachable from that SCC.
    reach: Vec<Vec<u64>>,
    words: usize,
}

fn bit(set: &[u64], i: usize) -> bool {
    set[i / 64] >> (i % 64) & 1 == 1
}

fn set_bit(set: &mut [u64], i: usize) {
    set[i / 64] |= 1 << (i % 64);
}

fn or_into(dst: &mut [u64], src: &[u64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d |= s;
    }
}

/// Extract the Morse graph from a condensation. Nodes are ordered by their
/// smallest member cube, the ⋆ node last; this makes node numbering
/// deterministic and independent of SCC emission order.
pub fn morse_graph(cg: &CondensationGraph) -> MorseGraph {
    let members = cg.scc_members();
    let mut picked: Vec<usize> = (0..cg.scc_count)
        .filter(|&s| cg.nontrivial[s])
        .collect();
    picked.sort_by_key(|&s| {
        if Some(s) == cg.star_scc {
            (1, 0)
        } else {
            (0, members[s][0])
        }
    });
    let nodes: Vec<MorseNode> = picked
        .iter()
        .map(|&s| MorseNode {
            scc: s,
            cubes: members[s].clone(),
            is_star: Some(s) == cg.star_scc,
        })
        .collect();
    let p = nodes.len();
    let words = p.div_ceil(64).max(1);
    let mut node_of_scc = vec![None; cg.scc_count];
    for (i, node) in nodes.iter().enumerate() {
        node_of_scc[node.scc] = Some(i);
    }

    // Morse nodes reachable from each SCC. SCC ids ascend from the sinks, so
    // a single ascending sweep sees every successor before its predecessors.
    let mut reach = vec![vec![0u64; words]; cg.scc_count];
    for s in 0..cg.scc_count {
        let (head, tail) = reach.split_at_mut(s);
        for &t in &cg.dag_adjacency[s] {
            debug_assert!(t < s, "condensation edge {s} -> {t} violates emission order");
            or_into(&mut tail[0], &head[t]);
        }
        if let Some(i) = node_of_scc[s] {
            set_bit(&mut tail[0], i);
        }
    }

    // q ≤ p iff p's SCC reaches q's SCC.
    let order: Vec<Vec<u64>> = nodes.iter().map(|n| reach[n.scc].clone()).collect();
    let leq = |q: usize, p: usize| bit(&order[p], q);

    // Hasse edges p -> q: q < p with nothing strictly between.
    let mut hasse_edges = Vec::new();
    for p in 0..p {
        for q in 0..nodes.len() {
            if q == p || !leq(q, p) {
                continue;
            }
            let covered = (0..nodes.len())
                .any(|r| r != p && r != q && leq(q, r) && leq(r, p));
            if !covered {
                hasse_edges.push((p, q));
            }
        }
    }
    hasse_edges.sort_unstable();

    MorseGraph {
        nodes,
        hasse_edges,
        node_of_scc,
        order,
        reach,
        words,
    }
}

impl MorseGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Partial order of the Morse graph: `q ≤ p` iff the dynamics can flow
    /// from node p down to node q.
    pub fn leq(&self, q: usize, p: usize) -> bool {
        bit(&self.order[p], q)
    }

    /// Bitset of Morse nodes reachable from an SCC (including itself when it
    /// is a Morse node).
    pub fn reachable_nodes(&self, scc: usize) -> &[u64] {
        &self.reach[scc]
    }

    pub fn bitset_words(&self) -> usize {
        self.words
    }

    pub fn star_node(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.is_star)
    }

    /// Nodes with nothing strictly below them: the only candidates for
    /// attractors.
    pub fn minimal_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&p| (0..self.nodes.len()).all(|q| q == p || !self.leq(q, p)))
            .collect()
    }
}
