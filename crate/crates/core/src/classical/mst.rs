//! Hoppe-style orientation propagation over a minimum spanning tree of the
//! k-NN graph.

use std::collections::VecDeque;

use super::ClassicalError;
use crate::geometry::{KdIndex, PointCloud, Vec3};

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Orients `unoriented` normals consistently.
///
/// The graph connects every point to its `k_graph` nearest neighbors (made
/// symmetric) with edge weight `1 - |n_i . n_j|`. Propagation starts at the
/// point with the largest z coordinate, whose normal is forced to have a
/// non-negative z component, and walks the minimum spanning tree flipping
/// every child that disagrees with its parent.
pub fn mst_orient(
    cloud: &PointCloud,
    unoriented: &[Vec3],
    k_graph: usize,
) -> Result<Vec<Vec3>, ClassicalError> {
    let n = cloud.len();
    if unoriented.len() != n {
        return Err(ClassicalError::InvalidArgument(format!(
            "{} normals for {n} points",
            unoriented.len()
        )));
    }
    if k_graph < 2 {
        return Err(ClassicalError::InvalidArgument("k_graph must be at least 2".into()));
    }
    let index = KdIndex::new(cloud);
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * k_graph);
    for i in 0..n {
        for nb in index.knn(&cloud.point(i), k_graph + 1) {
            let j = nb.index;
            if j == i {
                continue;
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            let w = (1.0 - unoriented[a].dot(&unoriented[b]).abs()).max(0.0);
            edges.push((w, a, b));
        }
    }
    edges.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    edges.dedup_by(|x, y| x.1 == y.1 && x.2 == y.2);

    let mut sets = DisjointSet::new(n);
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut components = n;
    for &(_, a, b) in &edges {
        if sets.union(a, b) {
            adjacency[a].push(b);
            adjacency[b].push(a);
            components -= 1;
        }
    }
    if components > 1 {
        return Err(ClassicalError::DisconnectedGraph(components));
    }
    for adj in adjacency.iter_mut() {
        adj.sort_unstable();
    }

    let seed = (0..n)
        .max_by(|&a, &b| {
            cloud.point(a).z
                .total_cmp(&cloud.point(b).z)
                .then(b.cmp(&a))
        })
        .expect("cloud is non-empty");
    let mut out = unoriented.to_vec();
    if out[seed].z < 0.0 {
        out[seed] = -out[seed];
    }
    let mut visited = vec![false; n];
    visited[seed] = true;
    let mut queue = VecDeque::from([seed]);
    while let Some(parent) = queue.pop_front() {
        for &child in &adjacency[parent] {
            if visited[child] {
                continue;
            }
            visited[child] = true;
            if out[parent].dot(&out[child]) < 0.0 {
                out[child] = -out[child];
            }
            queue.push_back(child);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::pca_normals;
    use crate::geometry::{generate_shape, ShapeKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_flip_on_two_points() {
        let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let out = mst_orient(&cloud, &[Vec3::z(), -Vec3::z()], 2).unwrap();
        assert_eq!(out, vec![Vec3::z(), Vec3::z()]);
    }

    #[test]
    fn consistent_input_is_a_fixed_point() {
        let cloud = generate_shape(ShapeKind::Sphere, 300, 1);
        let normals = cloud.normals().unwrap().to_vec();
        assert_eq!(mst_orient(&cloud, &normals, 8).unwrap(), normals);
    }

    #[test]
    fn far_apart_clusters_are_disconnected() {
        let mut pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        pts.extend((0..10).map(|i| Vec3::new(100.0 + i as f64 * 0.01, 0.0, 0.0)));
        let cloud = PointCloud::new(pts).unwrap();
        let normals = vec![Vec3::z(); 20];
        assert!(matches!(
            mst_orient(&cloud, &normals, 3),
            Err(ClassicalError::DisconnectedGraph(2))
        ));
    }

    #[test]
    fn sphere_with_random_flips_becomes_outward() {
        let cloud = generate_shape(ShapeKind::Sphere, 2000, 12);
        let index = KdIndex::new(&cloud);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let flipped: Vec<Vec3> = pca_normals(&cloud, &index, 16)
            .unwrap()
            .into_iter()
            .map(|n| if rng.random_bool(0.5) { -n } else { n })
            .collect();
        let out = mst_orient(&cloud, &flipped, 10).unwrap();
        let outward = out.iter().zip(cloud.points()).filter(|(n, p)| n.dot(p) > 0.0).count();
        assert!(outward as f64 >= 0.99 * 2000.0, "{outward}");
        for (o, f) in out.iter().zip(&flipped) {
            assert!(*o == *f || *o == -*f);
        }
        assert_eq!(mst_orient(&cloud, &flipped, 10).unwrap(), out);
    }
}
