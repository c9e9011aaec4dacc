//! Geometric nested dissection.
//!
//! Unknowns carry the coordinates of their cell. Each level splits the current
//! set at the median of its longer bounding-box axis and moves every node of
//! the first half that touches the second half into the separator, which is
//! numbered last.

const LEAF: usize = 48;

/// Fill-reducing permutation (`perm[new] = old`) of a symmetric graph.
pub fn nested_dissection(graph: &[Vec<usize>], coords: &[[f64; 2]]) -> Vec<usize> {
    assert_eq!(graph.len(), coords.len());
    let n = graph.len();
    let mut perm = Vec::with_capacity(n);
    let mut side = vec![0u8; n];
    let mut stack: Vec<Task> = vec![Task::Split((0..n).collect())];
    while let Some(task) = stack.pop() {
        match task {
            Task::Emit(nodes) => perm.extend(nodes),
            Task::Split(mut nodes) => {
                if nodes.len() <= LEAF {
                    nodes.sort_unstable();
                    perm.extend(nodes);
                    continue;
                }
                let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for &v in &nodes {
                    for a in 0..2 {
                        lo[a] = lo[a].min(coords[v][a]);
                        hi[a] = hi[a].max(coords[v][a]);
                    }
                }
                let axis = if hi[1] - lo[1] > hi[0] - lo[0] { 1 } else { 0 };
                let other = 1 - axis;
                nodes.sort_by(|&a, &b| {
                    coords[a][axis]
                        .total_cmp(&coords[b][axis])
                        .then(coords[a][other].total_cmp(&coords[b][other]))
                        .then(a.cmp(&b))
                });
                let mid = nodes.len() / 2;
                // Keep nodes sharing a coordinate on the same side of the cut.
                let cut = coords[nodes[mid]][axis];
                let mut split = nodes.iter().position(|&v| coords[v][axis] >= cut).unwrap_or(mid);
                if split == 0 {
                    split = nodes.iter().position(|&v| coords[v][axis] > cut).unwrap_or(nodes.len());
                }
                if split == 0 || split == nodes.len() {
                    nodes.sort_unstable();
                    perm.extend(nodes);
                    continue;
                }
                let (first, second) = nodes.split_at(split);
                for &v in first {
                    side[v] = 1;
                }
                for &v in second {
                    side[v] = 2;
                }
                let (mut part_a, mut sep) = (Vec::new(), Vec::new());
                for &v in first {
                    if graph[v].iter().any(|&w| side[w] == 2) {
                        sep.push(v);
                    } else {
                        part_a.push(v);
                    }
                }
                let part_b = second.to_vec();
                for &v in &nodes {
                    side[v] = 0;
                }
                sep.sort_unstable();
                stack.push(Task::Emit(sep));
                stack.push(Task::Split(part_b));
                stack.push(Task::Split(part_a));
            }
        }
    }
    perm
}

enum Task {
    Split(Vec<usize>),
    Emit(Vec<usize>),
}
