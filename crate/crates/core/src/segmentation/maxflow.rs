//! Exact s-t minimum cut by Dinic's blocking-flow max-flow.
//!
//! Nodes are `0..n`; the source and sink terminals are implicit. Terminal
//! capacities may be `+inf` to hard-constrain a node, all others must be
//! finite. After [`min_cut`], `source_side[i]` is true for nodes reachable
//! from the source in the residual graph, i.e. the minimal source set.

use std::collections::VecDeque;

use crate::error::{Error, Result};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct FlowGraph {
    n: usize,
    head: Vec<u32>,
    next: Vec<u32>,
    to: Vec<u32>,
    residual: Vec<f64>,
    capacity: Vec<f64>,
    /// Pending terminal capacities, merged into edges at solve time.
    source_cap: Vec<f64>,
    sink_cap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutResult {
    /// Max-flow value, equal to the cut capacity.
    pub flow: f64,
    pub source_side: Vec<bool>,
}

fn check_capacity(cap: f64, allow_inf: bool) -> Result<()> {
    if cap.is_nan() || cap < 0.0 || (!allow_inf && cap.is_infinite()) {
        return Err(Error::InvalidGraph(format!("capacity {cap} is not a finite non-negative number")));
    }
    Ok(())
}

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        FlowGraph {
            n,
            head: vec![NONE; n + 2],
            next: Vec::new(),
            to: Vec::new(),
            residual: Vec::new(),
            capacity: Vec::new(),
            source_cap: vec![0.0; n],
            sink_cap: vec![0.0; n],
        }
    }

    pub fn with_edge_capacity(n: usize, edges: usize) -> Self {
        let mut g = FlowGraph::new(n);
        g.next.reserve(2 * edges);
        g.to.reserve(2 * edges);
        g.residual.reserve(2 * edges);
        g.capacity.reserve(2 * edges);
        g
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    fn source(&self) -> usize {
        self.n
    }

    fn sink(&self) -> usize {
        self.n + 1
    }

    fn push_arc(&mut self, from: usize, to: usize, cap: f64) {
        let id = self.to.len() as u32;
        self.to.push(to as u32);
        self.residual.push(cap);
        self.capacity.push(cap);
        self.next.push(self.head[from]);
        self.head[from] = id;
    }

    /// Adds capacity from the source to `node` and from `node` to the sink.
    pub fn add_terminal(&mut self, node: usize, source_cap: f64, sink_cap: f64) -> Result<()> {
        if node >= self.n {
            return Err(Error::InvalidGraph(format!("node {node} out of range")));
        }
        check_capacity(source_cap, true)?;
        check_capacity(sink_cap, true)?;
        self.source_cap[node] += source_cap;
        self.sink_cap[node] += sink_cap;
        Ok(())
    }

    /// Adds an edge pair `u -> v` (capacity `cap_uv`) and `v -> u` (`cap_vu`).
    pub fn add_edge(&mut self, u: usize, v: usize, cap_uv: f64, cap_vu: f64) -> Result<()> {
        if u >= self.n || v >= self.n || u == v {
            return Err(Error::InvalidGraph(format!("bad edge {u} -> {v}")));
        }
        check_capacity(cap_uv, false)?;
        check_capacity(cap_vu, false)?;
        self.push_arc(u, v, cap_uv);
        self.push_arc(v, u, cap_vu);
        Ok(())
    }

    /// Capacity of the cut induced by `source_side`, from the original
    /// capacities.
    pub fn cut_value(&self, source_side: &[bool]) -> f64 {
        assert_eq!(source_side.len(), self.n);
        let mut total = 0.0;
        for i in 0..self.n {
            if source_side[i] {
                total += self.sink_cap[i];
            } else {
                total += self.source_cap[i];
            }
        }
        for u in 0..self.n {
            let mut e = self.head[u];
            while e != NONE {
                let v = self.to[e as usize] as usize;
                if v < self.n && source_side[u] && !source_side[v] {
                    total += self.capacity[e as usize];
                }
                e = self.next[e as usize];
            }
        }
        total
    }
}

/// Solves max-flow and returns the minimum cut.
pub fn min_cut(graph: &FlowGraph) -> Result<CutResult> {
    let mut g = graph.clone();
    let (s, t) = (g.source(), g.sink());
    let mut flow = 0.0f64;

    // Route the directly available s -> i -> t flow first, then wire the
    // remaining terminal capacity as ordinary arcs.
    for i in 0..g.n {
        let (cs, ct) = (g.source_cap[i], g.sink_cap[i]);
        let direct = cs.min(ct);
        if direct.is_infinite() {
            return Err(Error::InvalidGraph(format!("node {i} has infinite source and sink capacity")));
        }
        flow += direct;
        let (rs, rt) = (cs - direct, ct - direct);
        if rs > 0.0 {
            g.push_arc(s, i, rs);
            g.push_arc(i, s, 0.0);
        }
        if rt > 0.0 {
            g.push_arc(i, t, rt);
            g.push_arc(t, i, 0.0);
        }
    }

    let total = g.n + 2;
    let mut level = vec![-1i32; total];
    let mut iter = vec![NONE; total];
    let mut queue = VecDeque::with_capacity(total);
    let mut path: Vec<u32> = Vec::new();

    loop {
        level.fill(-1);
        level[s] = 0;
        queue.clear();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let mut e = g.head[u];
            while e != NONE {
                let v = g.to[e as usize] as usize;
                if level[v] < 0 && g.residual[e as usize] > 0.0 {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
                e = g.next[e as usize];
            }
        }
        if level[t] < 0 {
            break;
        }
        iter.copy_from_slice(&g.head);

        // Iterative blocking-flow search; `path` holds arc ids from s.
        path.clear();
        let mut u = s;
        loop {
            if u == t {
                let bottleneck = path
                    .iter()
                    .map(|&e| g.residual[e as usize])
                    .fold(f64::INFINITY, f64::min);
                if bottleneck.is_infinite() {
                    return Err(Error::InvalidGraph("infinite-capacity source-sink path".into()));
                }
                let mut cut_at = path.len();
                for (k, &e) in path.iter().enumerate() {
                    let e = e as usize;
                    g.residual[e] -= bottleneck;
                    g.residual[e ^ 1] += bottleneck;
                    if g.residual[e] <= 0.0 && cut_at == path.len() {
                        cut_at = k;
                    }
                }
                flow += bottleneck;
                path.truncate(cut_at);
                u = match path.last() {
                    Some(&e) => g.to[e as usize] as usize,
                    None => s,
                };
                continue;
            }
            let mut advanced = false;
            while iter[u] != NONE {
                let e = iter[u] as usize;
                let v = g.to[e] as usize;
                if g.residual[e] > 0.0 && level[v] == level[u] + 1 {
                    path.push(e as u32);
                    u = v;
                    advanced = true;
                    break;
                }
                iter[u] = g.next[e];
            }
            if advanced {
                continue;
            }
            level[u] = -1;
            match path.pop() {
                Some(e) => {
                    let tail = g.to[(e ^ 1) as usize] as usize;
                    iter[tail] = g.next[e as usize];
                    u = tail;
                }
                None => break,
            }
        }
    }

    let mut reach = vec![false; total];
    reach[s] = true;
    queue.clear();
    queue.push_back(s);
    while let Some(u) = queue.pop_front() {
        let mut e = g.head[u];
        while e != NONE {
            let v = g.to[e as usize] as usize;
            if !reach[v] && g.residual[e as usize] > 0.0 {
                reach[v] = true;
                queue.push_back(v);
            }
            e = g.next[e as usize];
        }
    }
    reach.truncate(g.n);
    Ok(CutResult {
        flow,
        source_side: reach,
    })
}
