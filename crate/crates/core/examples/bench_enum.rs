use aksz_core::graph::{enumerate, Budgets, VertexMenu};
use std::time::Instant;

fn main() {
    for max_bulk in [2usize, 3, 4] {
        let menu = VertexMenu {
            theta: vec![(0, 2), (1, 2)],
            r_in: vec![0],
            b1_legs: vec![],
            b2_legs: vec![],
        };
        let budgets = Budgets {
            max_bulk,
            max_loops: 2,
            max_b1: 0,
            max_b2: 0,
            unimodular: true,
            candidate_cap: 50_000_000,
        };
        let t0 = Instant::now();
        let classes = enumerate(&menu, &budgets).unwrap();
        println!("max_bulk={} classes={} time={:?}", max_bulk, classes.len(), t0.elapsed());
    }
}
