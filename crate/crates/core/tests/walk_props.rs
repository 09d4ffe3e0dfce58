use flowgn::graph::{grid_torus, k_step_rw_distribution, Graph};
use flowgn::walk::{importance_restarts, pathgen, walk_rng, Stepper, WalkParams};
use proptest::prelude::*;

fn arb_graph() -> impl Strategy<Value = Graph> {
    (2usize..15).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 1..3 * n)
            .prop_map(move |edges| Graph::from_edges(n, edges).unwrap())
    })
}

fn arb_params() -> impl Strategy<Value = WalkParams> {
    (0.25f64..1000.0, 0.1f64..4.0, 2usize..9, 1usize..4, any::<u64>()).prop_map(
        |(p, q, length, restarts, seed)| WalkParams {
            p,
            q,
            length,
            restarts,
            seed,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn paths_are_edge_valid(g in arb_graph(), params in arb_params(), layer in 0usize..4) {
        let set = pathgen(&g, &params, layer).unwrap();
        prop_assert!(set.validate(&g).is_ok());
        let per_iter: usize = (0..g.num_nodes()).map(|v| importance_restarts(&g, v, 1)).sum();
        prop_assert_eq!(set.len(), per_iter * params.restarts);
        for path in set.iter() {
            prop_assert_eq!(path.len(), params.length);
            for w in path.windows(2) {
                prop_assert!(g.has_edge(w[0], w[1]));
            }
        }
    }

    #[test]
    fn restarts_match_rounded_centrality(g in arb_graph(), r in 1usize..12) {
        let n = g.num_nodes() as f64;
        let sum = g.degree_sum() as f64;
        for v in 0..g.num_nodes() {
            let want = if g.degree(v) == 0 {
                0
            } else {
                r * ((g.degree(v) as f64 * n / sum + 0.5).floor() as usize).max(1)
            };
            prop_assert_eq!(importance_restarts(&g, v, r), want);
        }
    }

    #[test]
    fn pathgen_ignores_thread_count(g in arb_graph(), params in arb_params()) {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| pathgen(&g, &params, 1).unwrap())
        };
        prop_assert_eq!(run(1), run(3));
    }
}

#[test]
fn uniform_walk_endpoints_follow_rw_distribution() {
    let g = grid_torus(6, 6).unwrap();
    let n = g.num_nodes();
    for k in 1..=4 {
        let x = 14;
        let walks = 100_000;
        let mut counts = vec![0u64; n];
        let mut stepper = Stepper::new(&g, 1.0, 1.0);
        let mut buf = Vec::new();
        for i in 0..walks {
            buf.clear();
            let mut rng = walk_rng(k as u64, 0, i, x);
            stepper.walk_into(x, k + 1, &mut rng, &mut buf).unwrap();
            counts[buf[k]] += 1;
        }
        let exact = k_step_rw_distribution(&g, x, k).unwrap();
        let tv: f64 = counts
            .iter()
            .zip(&exact)
            .map(|(&c, e)| (c as f64 / walks as f64 - e).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "k={k} tv={tv}");
    }
}
