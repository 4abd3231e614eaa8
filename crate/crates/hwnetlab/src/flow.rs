//! Minimum-cost maximum-flow on the bipartite transportation graph.
//!
//! Successive shortest paths with Johnson potentials. Instances here are
//! tiny (classes + pools + 2 nodes), so clarity wins over asymptotics.

const INF: i64 = i64::MAX / 4;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    residual: i64,
    cost: i64,
}

/// A small min-cost max-flow solver over an explicit arc list.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    arcs: Vec<Arc>,
    head: Vec<Vec<usize>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            head: vec![Vec::new(); nodes],
        }
    }

    /// Adds a directed arc and its residual twin; returns the arc id.
    pub fn add_arc(&mut self, from: usize, to: usize, capacity: i64, cost: i64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc {
            to,
            residual: capacity,
            cost,
        });
        self.arcs.push(Arc {
            to: from,
            residual: 0,
            cost: -cost,
        });
        self.head[from].push(id);
        self.head[to].push(id + 1);
        id
    }

    /// Flow pushed through the arc returned by [`add_arc`].
    pub fn flow_on(&self, arc_id: usize) -> i64 {
        self.arcs[arc_id + 1].residual
    }

    /// Runs min-cost max-flow from `source` to `sink`; returns (flow, cost).
    pub fn run(&mut self, source: usize, sink: usize) -> (i64, i64) {
        let n = self.head.len();
        // Bellman-Ford once to admit negative arc costs, then Dijkstra with
        // potentials.
        let mut potential = vec![0i64; n];
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if potential[u] == INF {
                    continue;
                }
                for &a in &self.head[u] {
                    let arc = &self.arcs[a];
                    if arc.residual > 0 && potential[u] + arc.cost < potential[arc.to] {
                        potential[arc.to] = potential[u] + arc.cost;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let mut total_flow = 0i64;
        let mut total_cost = 0i64;
        loop {
            // Dijkstra over reduced costs.
            let mut dist = vec![INF; n];
            let mut parent: Vec<Option<usize>> = vec![None; n];
            let mut done = vec![false; n];
            dist[source] = 0;
            let mut heap = std::collections::BinaryHeap::new();
            heap.push(std::cmp::Reverse((0i64, source)));
            while let Some(std::cmp::Reverse((d, u))) = heap.pop() {
                if done[u] {
                    continue;
                }
                done[u] = true;
                if d > dist[u] {
                    continue;
                }
                for &a in &self.head[u] {
                    let arc = &self.arcs[a];
                    if arc.residual <= 0 {
                        continue;
                    }
                    let nd = dist[u] + arc.cost + potential[u] - potential[arc.to];
                    if nd < dist[arc.to] {
                        dist[arc.to] = nd;
                        parent[arc.to] = Some(a);
                        heap.push(std::cmp::Reverse((nd, arc.to)));
                    }
                }
            }
            if dist[sink] >= INF {
                break;
            }
            for u in 0..n {
                if dist[u] < INF {
                    potential[u] += dist[u];
                }
            }
            // Bottleneck along the path.
            let mut push = INF;
            let mut v = sink;
            while let Some(a) = parent[v] {
                push = push.min(self.arcs[a].residual);
                v = self.arcs[a ^ 1].to;
            }
            let mut v = sink;
            while let Some(a) = parent[v] {
                self.arcs[a].residual -= push;
                self.arcs[a ^ 1].residual += push;
                total_cost += push * self.arcs[a].cost;
                v = self.arcs[a ^ 1].to;
            }
            total_flow += push;
        }
        (total_flow, total_cost)
    }
}
