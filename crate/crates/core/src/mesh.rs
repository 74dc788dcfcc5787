//! Icosphere meshes and the coarse-to-fine hierarchy used for pooling.
//!
//! Every vertex carries an ordered 1-ring: counter-clockwise when viewed
//! from outside the sphere, starting at the lowest-index neighbor. The
//! convolution kernels read their taps in this order.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of kernel taps per vertex: the center plus a hexagonal ring.
pub const KERNEL_TAPS: usize = 7;

pub type Vec3 = [f64; 3];

/// A closed triangle mesh with derived 1-ring neighbor tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    level: usize,
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    neighbors: Vec<Vec<usize>>,
    taps: Vec<[u32; KERNEL_TAPS]>,
}

/// Vertex count of a generated icosphere at `level`.
pub fn icosphere_vertex_count(level: usize) -> usize {
    10 * 4usize.pow(level as u32) + 2
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: Vec3) -> Vec3 {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Level-0 mesh: the regular icosahedron inscribed in the unit sphere.
pub fn base_icosahedron() -> Mesh {
    let t = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect();

    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    // Outward winding: normal points away from the origin.
    for f in &mut faces {
        let [a, b, c] = *f;
        let n = cross(sub(vertices[b], vertices[a]), sub(vertices[c], vertices[a]));
        if dot(n, vertices[a]) < 0.0 {
            f.swap(1, 2);
        }
    }
    Mesh::assemble(0, vertices, faces).expect("icosahedron is a valid closed mesh")
}

/// Splits every face into four, placing new vertices at normalized edge
/// midpoints. Returns the refined mesh and, for each new vertex in order,
/// its two coarse parents (lower index first).
pub fn subdivide_with_parents(mesh: &Mesh) -> (Mesh, Vec<[usize; 2]>) {
    let mut vertices = mesh.vertices.clone();
    let mut parents: Vec<[usize; 2]> = Vec::with_capacity(mesh.edge_count());
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);

    let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoint.entry(key).or_insert_with(|| {
            let pa = vertices[key.0];
            let pb = vertices[key.1];
            vertices.push(normalize([
                (pa[0] + pb[0]) * 0.5,
                (pa[1] + pb[1]) * 0.5,
                (pa[2] + pb[2]) * 0.5,
            ]));
            parents.push([key.0, key.1]);
            vertices.len() - 1
        })
    };

    for &[a, b, c] in &mesh.faces {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        faces.push([a, ab, ca]);
        faces.push([b, bc, ab]);
        faces.push([c, ca, bc]);
        faces.push([ab, bc, ca]);
    }
    let fine = Mesh::assemble(mesh.level + 1, vertices, faces)
        .expect("subdivision of a closed mesh is closed");
    (fine, parents)
}

/// One level of refinement; see [`subdivide_with_parents`].
pub fn subdivide(mesh: &Mesh) -> Mesh {
    subdivide_with_parents(mesh).0
}

/// Ordered 1-ring of vertex `v`.
pub fn one_ring(mesh: &Mesh, v: usize) -> Result<&[usize]> {
    mesh.neighbors
        .get(v)
        .map(Vec::as_slice)
        .ok_or(Error::IndexOutOfRange {
            index: v,
            len: mesh.vertices.len(),
        })
}

impl Mesh {
    /// Builds a mesh from explicit vertex and face tables, deriving the
    /// ordered neighbor tables. Used for externally prepared surfaces.
    ///
    /// Faces must be consistently wound and form a closed manifold; every
    /// vertex needs between 3 and 6 neighbors so its ring fits the kernel.
    pub fn from_tables(level: usize, vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (i, p) in vertices.iter().enumerate() {
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
            }
        }
        Self::assemble(level, vertices, faces)
    }

    fn assemble(level: usize, vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        // successor[v] maps a neighbor to the next neighbor counter-clockwise.
        let mut successor: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (fi, &[a, b, c]) in faces.iter().enumerate() {
            if a >= n || b >= n || c >= n {
                return Err(Error::InvalidMesh(format!("face {fi} references a missing vertex")));
            }
            if a == b || b == c || a == c {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate")));
            }
            successor[a].push((b, c));
            successor[b].push((c, a));
            successor[c].push((a, b));
        }

        let mut neighbors = Vec::with_capacity(n);
        for (v, succ) in successor.iter().enumerate() {
            if succ.is_empty() {
                return Err(Error::InvalidMesh(format!("vertex {v} has no faces")));
            }
            let start = succ.iter().map(|&(u, _)| u).min().unwrap();
            let mut ring = Vec::with_capacity(succ.len());
            let mut cur = start;
            loop {
                ring.push(cur);
                let next = succ.iter().filter(|&&(u, _)| u == cur).map(|&(_, w)| w);
                let mut it = next;
                cur = match (it.next(), it.next()) {
                    (Some(w), None) => w,
                    _ => {
                        return Err(Error::InvalidMesh(format!(
                            "vertex {v}: faces do not form a single consistently wound fan"
                        )))
                    }
                };
                if cur == start {
                    break;
                }
                if ring.len() > succ.len() {
                    return Err(Error::InvalidMesh(format!("vertex {v}: open fan")));
                }
            }
            if ring.len() != succ.len() {
                return Err(Error::InvalidMesh(format!(
                    "vertex {v}: incident faces form more than one fan"
                )));
            }
            if !(3..KERNEL_TAPS).contains(&ring.len()) {
                return Err(Error::InvalidMesh(format!(
                    "vertex {v} has degree {}, kernel supports 3..=6",
                    ring.len()
                )));
            }
            neighbors.push(ring);
        }

        let taps = neighbors
            .iter()
            .enumerate()
            .map(|(v, ring)| {
                let mut t = [v as u32; KERNEL_TAPS];
                for (k, &u) in ring.iter().enumerate() {
                    t[k + 1] = u as u32;
                }
                t
            })
            .collect();

        Ok(Mesh {
            level,
            vertices,
            faces,
            neighbors,
            taps,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    /// Kernel gather table: tap 0 is the vertex itself, taps 1..=deg are the
    /// ordered ring, and missing taps on low-degree vertices repeat the center.
    pub fn kernel_taps(&self) -> &[[u32; KERNEL_TAPS]] {
        &self.taps
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MeshFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Mesh::from_tables(file.level.unwrap_or(0), file.vertices, file.faces)
    }

    pub fn to_file(&self) -> MeshFile {
        MeshFile {
            level: Some(self.level),
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
        }
    }
}

/// Mesh exchange format. Neighbor tables are derived on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

/// Nested icosphere levels, coarse to fine.
///
/// Coarse vertex `i` coincides with fine vertex `i`; every fine-only vertex
/// is the midpoint child of exactly one coarse edge.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    levels: Vec<Mesh>,
    /// `parents[k]` lists the coarse parents of level `k + 1`'s fine-only vertices.
    parents: Vec<Vec<[usize; 2]>>,
    /// `pool_sets[k]` lists, per level-`k` vertex, the level-`k + 1` vertices it averages.
    pool_sets: Vec<Vec<Vec<usize>>>,
}

pub fn build_hierarchy(max_level: usize) -> MeshHierarchy {
    let mut levels = vec![base_icosahedron()];
    let mut parents = Vec::with_capacity(max_level);
    for _ in 0..max_level {
        let (fine, p) = subdivide_with_parents(levels.last().unwrap());
        levels.push(fine);
        parents.push(p);
    }
    let pool_sets = (0..max_level)
        .map(|k| {
            let coarse_n = levels[k].num_vertices();
            let fine = &levels[k + 1];
            (0..coarse_n)
                .map(|i| {
                    std::iter::once(i)
                        .chain(fine.neighbors[i].iter().copied().filter(|&j| j >= coarse_n))
                        .collect()
                })
                .collect()
        })
        .collect();
    MeshHierarchy {
        levels,
        parents,
        pool_sets,
    }
}

impl MeshHierarchy {
    pub fn finest_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[Mesh] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> Result<&Mesh> {
        self.levels.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.levels.len(),
        })
    }

    pub fn finest(&self) -> &Mesh {
        self.levels.last().unwrap()
    }

    /// Coarse parents of the fine-only vertices of `fine_level`.
    pub fn parents(&self, fine_level: usize) -> Result<&[[usize; 2]]> {
        if fine_level == 0 || fine_level > self.finest_level() {
            return Err(Error::InvalidArgument(format!(
                "level {fine_level} has no coarser parent level"
            )));
        }
        Ok(&self.parents[fine_level - 1])
    }

    /// Pooling neighborhoods mapping `fine_level` onto `fine_level - 1`.
    pub fn pool_sets(&self, fine_level: usize) -> Result<&[Vec<usize>]> {
        if fine_level == 0 || fine_level > self.finest_level() {
            return Err(Error::InvalidArgument(format!(
                "level {fine_level} cannot be pooled"
            )));
        }
        Ok(&self.pool_sets[fine_level - 1])
    }
}

/// Undirected edge set of a mesh, for tests and diagnostics.
pub fn edge_set(mesh: &Mesh) -> BTreeSet<(usize, usize)> {
    mesh.faces
        .iter()
        .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosahedron_counts() {
        let m = base_icosahedron();
        assert_eq!(m.num_vertices(), 12);
        assert_eq!(m.faces().len(), 20);
        assert_eq!(m.edge_count(), 30);
        assert_eq!(m.euler_characteristic(), 2);
        assert!((0..12).all(|v| m.degree(v) == 5));
    }

    #[test]
    fn subdivision_counts_and_prefix() {
        let m0 = base_icosahedron();
        let m1 = subdivide(&m0);
        assert_eq!(m1.num_vertices(), 42);
        assert_eq!(m1.level(), 1);
        let m2 = subdivide(&m1);
        assert_eq!(m2.num_vertices(), 162);
        assert_eq!(&m1.vertices()[..12], m0.vertices());
        assert_eq!(&m2.vertices()[..42], m1.vertices());
    }

    #[test]
    fn one_ring_lengths() {
        let h = build_hierarchy(2);
        let m0 = h.level(0).unwrap();
        for v in 0..12 {
            assert_eq!(one_ring(m0, v).unwrap().len(), 5);
        }
        let m2 = h.level(2).unwrap();
        for v in 12..m2.num_vertices() {
            assert_eq!(one_ring(m2, v).unwrap().len(), 6);
        }
        assert_eq!(one_ring(m2, 7).unwrap(), one_ring(m2, 7).unwrap());
        assert!(matches!(
            one_ring(m2, 162),
            Err(Error::IndexOutOfRange { index: 162, .. })
        ));
    }

    #[test]
    fn ring_starts_low_and_turns_counter_clockwise() {
        let m = subdivide(&base_icosahedron());
        for v in 0..m.num_vertices() {
            let ring = &m.neighbors()[v];
            assert_eq!(ring[0], *ring.iter().min().unwrap());
            let p = m.vertices()[v];
            for k in 0..ring.len() {
                let a = sub(m.vertices()[ring[k]], p);
                let b = sub(m.vertices()[ring[(k + 1) % ring.len()]], p);
                assert!(dot(cross(a, b), p) > 0.0, "vertex {v} tap {k}");
            }
        }
    }

    #[test]
    fn ingestion_round_trip_and_rejects_open_meshes() {
        let m = subdivide(&base_icosahedron());
        let f = m.to_file();
        let back = Mesh::from_tables(1, f.vertices.clone(), f.faces.clone()).unwrap();
        assert_eq!(back, m);

        let mut open = f.faces.clone();
        open.pop();
        assert!(matches!(
            Mesh::from_tables(1, f.vertices.clone(), open),
            Err(Error::InvalidMesh(_))
        ));
        let bad = vec![[0, 1, 99]];
        assert!(Mesh::from_tables(0, f.vertices, bad).is_err());
    }

    #[test]
    fn pool_sets_cover_center_and_children() {
        let h = build_hierarchy(2);
        let sets = h.pool_sets(2).unwrap();
        assert_eq!(sets.len(), 42);
        assert_eq!(sets[0].len(), 6);
        assert_eq!(sets[20].len(), 7);
        assert!(h.pool_sets(0).is_err());
        assert_eq!(h.parents(1).unwrap().len(), 30);
    }
}
