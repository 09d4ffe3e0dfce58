use flowgn::graph::{avg_shortest_path, grid_torus, k_step_rw_distribution, shortest_path_stats, Graph};
use proptest::prelude::*;

fn arb_graph() -> impl Strategy<Value = Graph> {
    (2usize..12).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..3 * n)
            .prop_map(move |edges| Graph::from_edges(n, edges).unwrap())
    })
}

/// Dense matrix power walk from `x`, written independently of the library.
fn rw_oracle(g: &Graph, x: usize, k: usize) -> Vec<f64> {
    let n = g.num_nodes();
    let mut adj = vec![vec![0.0; n]; n];
    for u in 0..n {
        for v in 0..n {
            if u != v && g.has_edge(u, v) {
                adj[u][v] = 1.0;
            }
        }
    }
    let mut dist = vec![0.0; n];
    dist[x] = 1.0;
    for _ in 0..k {
        let mut next = vec![0.0; n];
        for u in 0..n {
            let deg: f64 = adj[u].iter().sum();
            if dist[u] == 0.0 {
                continue;
            }
            for v in 0..n {
                next[v] += dist[u] * adj[u][v] / deg;
            }
        }
        dist = next;
    }
    dist
}

/// Floyd-Warshall mean over ordered pairs inside the largest component.
fn asp_oracle(g: &Graph) -> f64 {
    let n = g.num_nodes();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for u in 0..n {
        d[u][u] = 0;
        for &v in g.neighbors(u) {
            d[u][v] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    // largest component, smallest member id on ties
    let mut best: Vec<usize> = Vec::new();
    for s in 0..n {
        let comp: Vec<usize> = (0..n).filter(|&t| d[s][t] < inf).collect();
        if comp.len() > best.len() {
            best = comp;
        }
    }
    if best.len() < 2 {
        return 0.0;
    }
    let mut sum = 0usize;
    for &i in &best {
        for &j in &best {
            if i != j {
                sum += d[i][j];
            }
        }
    }
    sum as f64 / (best.len() * (best.len() - 1)) as f64
}

proptest! {
    #[test]
    fn adjacency_is_symmetric(g in arb_graph()) {
        prop_assert!(g.check_invariants());
        for u in 0..g.num_nodes() {
            prop_assert!(!g.has_edge(u, u));
            for &v in g.neighbors(u) {
                prop_assert!(g.has_edge(v, u));
            }
        }
        prop_assert_eq!(g.degree_sum(), 2 * g.num_edges());
    }

    #[test]
    fn rw_distribution_sums_to_one(g in arb_graph(), x in 0usize..12, k in 0usize..=6) {
        let x = x % g.num_nodes();
        prop_assume!(g.degree(x) > 0);
        let dist = k_step_rw_distribution(&g, x, k).unwrap();
        prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let oracle = rw_oracle(&g, x, k);
        for (a, b) in dist.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn torus_rw_is_translation_invariant(
        rows in 3usize..7, cols in 3usize..7, k in 0usize..=6, dr in 0usize..7, dc in 0usize..7,
    ) {
        let g = grid_torus(rows, cols).unwrap();
        let shift = |v: usize| ((v / cols + dr) % rows) * cols + (v % cols + dc) % cols;
        let base = k_step_rw_distribution(&g, 0, k).unwrap();
        let moved = k_step_rw_distribution(&g, shift(0), k).unwrap();
        for v in 0..g.num_nodes() {
            prop_assert!((base[v] - moved[shift(v)]).abs() < 1e-12);
        }
    }

    #[test]
    fn shortest_paths_match_floyd_warshall(g in arb_graph()) {
        let exact = avg_shortest_path(&g, None);
        prop_assert!((exact - asp_oracle(&g)).abs() < 1e-12);
        let size = shortest_path_stats(&g, None).component_size;
        let sampled = avg_shortest_path(&g, Some((size, 3)));
        prop_assert!((sampled - exact).abs() < 1e-12);
    }
}

#[test]
fn torus_shortest_path_closed_form() {
    // mean toroidal distance on an m-cycle is Σ_d min(d, m-d) / (m-1)
    for (rows, cols) in [(3, 3), (4, 5), (10, 10)] {
        let g = grid_torus(rows, cols).unwrap();
        let ring = |m: usize| (0..m).map(|d| d.min(m - d)).sum::<usize>() as f64;
        let n = (rows * cols) as f64;
        let want = (ring(rows) * cols as f64 + ring(cols) * rows as f64) / (n - 1.0);
        assert!((avg_shortest_path(&g, None) - want).abs() < 1e-12);
    }
}
