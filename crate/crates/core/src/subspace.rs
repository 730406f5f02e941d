//! Independent-set subspaces of a constraint graph, the Hamming-1 walk graph
//! over them, and dihedral orbits of ring bitstrings.
//!
//! Bitstrings are `u64` with bit `i` labelling vertex `i`. Printed strings read
//! bit `N-1` first, so `"00101"` is vertex 0 and vertex 2 excited.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub const MAX_VERTICES: usize = 63;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<u64>,
}

impl ConstraintGraph {
    /// Graph from an explicit edge list. Duplicate and reversed pairs are merged.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 || n > MAX_VERTICES {
            return Err(Error::InvalidArgument(format!(
                "vertex count {n} outside 1..={MAX_VERTICES}"
            )));
        }
        let mut norm = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a},{b}) references a vertex >= {n}"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at vertex {a}")));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        let mut neighbors = vec![0u64; n];
        for &(a, b) in &norm {
            neighbors[a] |= 1 << b;
            neighbors[b] |= 1 << a;
        }
        Ok(Self { n, edges: norm, neighbors })
    }

    /// Cycle graph on `n >= 3` vertices.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!("ring needs n >= 3, got {n}")));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::new(n, &edges)
    }

    /// No constraints: the walk graph is the full hypercube.
    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, &[])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbor_mask(&self, v: usize) -> u64 {
        self.neighbors[v]
    }

    pub fn is_independent(&self, z: u64) -> bool {
        if z >> self.n != 0 {
            return false;
        }
        let mut rest = z;
        while rest != 0 {
            let v = rest.trailing_zeros() as usize;
            if z & self.neighbors[v] != 0 {
                return false;
            }
            rest &= rest - 1;
        }
        true
    }
}

/// Ordered independent sets of a constraint graph with index lookup.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    graph: ConstraintGraph,
    states: Vec<u64>,
}

impl SubspaceBasis {
    /// All independent sets, ascending by integer value.
    pub fn enumerate(graph: &ConstraintGraph) -> Self {
        let mut states = Vec::new();
        extend(graph, 0, 0, 0, &mut states);
        states.sort_unstable();
        Self { graph: graph.clone(), states }
    }

    pub fn ring(n: usize) -> Result<Self> {
        Ok(Self::enumerate(&ConstraintGraph::ring(n)?))
    }

    pub fn graph(&self) -> &ConstraintGraph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn state(&self, k: usize) -> u64 {
        self.states[k]
    }

    pub fn index_of(&self, z: u64) -> Option<usize> {
        self.states.binary_search(&z).ok()
    }

    pub fn require_index(&self, z: u64) -> Result<usize> {
        self.index_of(z)
            .ok_or_else(|| Error::NotInSubspace(format_bits(z, self.n())))
    }

    /// Index pairs `(a, b)`, `a < b`, whose states differ in exactly one bit.
    pub fn walk_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, &s) in self.states.iter().enumerate() {
            for v in 0..self.n() {
                let t = s | (1 << v);
                if t != s {
                    if let Some(b) = self.index_of(t) {
                        out.push((a, b));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

// Depth-first extension over vertices in order; `blocked` holds vertices that
// can no longer be set because a neighbour is already set.
fn extend(g: &ConstraintGraph, v: usize, current: u64, blocked: u64, out: &mut Vec<u64>) {
    if v == g.n {
        out.push(current);
        return;
    }
    extend(g, v + 1, current, blocked, out);
    if blocked & (1 << v) == 0 {
        extend(g, v + 1, current | (1 << v), blocked | g.neighbors[v], out);
    }
}

pub fn format_bits(z: u64, n: usize) -> String {
    (0..n)
        .rev()
        .map(|i| if (z >> i) & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// Parse a printed bitstring (most significant vertex first). Returns `(bits, n)`.
pub fn parse_bits(s: &str) -> Result<(u64, usize)> {
    let s = s.trim().trim_start_matches('[').trim_end_matches(']');
    if s.is_empty() || s.len() > MAX_VERTICES {
        return Err(Error::InvalidArgument(format!("bad bitstring length: {s:?}")));
    }
    let mut z = 0u64;
    for c in s.chars() {
        z <<= 1;
        match c {
            '0' => {}
            '1' => z |= 1,
            _ => return Err(Error::InvalidArgument(format!("bad bitstring {s:?}"))),
        }
    }
    Ok((z, s.len()))
}

pub fn hamming_weight(z: u64) -> u32 {
    z.count_ones()
}

pub fn rotate(z: u64, n: usize, k: usize) -> u64 {
    let k = k % n;
    let mask = full_mask(n);
    if k == 0 {
        return z & mask;
    }
    ((z << k) | (z >> (n - k))) & mask
}

pub fn reflect(z: u64, n: usize) -> u64 {
    (0..n).fold(0, |acc, i| acc | (((z >> i) & 1) << (n - 1 - i)))
}

pub fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DihedralOrbit {
    pub n: usize,
    pub representative: u64,
    pub members: Vec<u64>,
}

impl DihedralOrbit {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, z: u64) -> bool {
        self.members.binary_search(&z).is_ok()
    }

    pub fn weight(&self) -> u32 {
        self.representative.count_ones()
    }

    pub fn label(&self) -> String {
        format!("[{}]", format_bits(self.representative, self.n))
    }
}

/// Orbit of `z` under the 2n rotations and reflections of the n-cycle.
pub fn dihedral_orbit(z: u64, n: usize) -> DihedralOrbit {
    let mut members = Vec::with_capacity(2 * n);
    let r = reflect(z, n);
    for k in 0..n {
        members.push(rotate(z, n, k));
        members.push(rotate(r, n, k));
    }
    members.sort_unstable();
    members.dedup();
    DihedralOrbit { n, representative: members[0], members }
}

/// Partition of a ring basis into dihedral orbits, ordered by representative.
pub fn orbit_partition(basis: &SubspaceBasis) -> Vec<DihedralOrbit> {
    let n = basis.n();
    let mut seen = vec![false; basis.len()];
    let mut out = Vec::new();
    for k in 0..basis.len() {
        if seen[k] {
            continue;
        }
        let orbit = dihedral_orbit(basis.state(k), n);
        for &m in &orbit.members {
            if let Some(j) = basis.index_of(m) {
                seen[j] = true;
            }
        }
        out.push(orbit);
    }
    out.sort_by_key(|o| o.representative);
    out
}

/// Equal-weight superposition over the orbit members.
pub fn bracelet_vector(orbit: &DihedralOrbit, basis: &SubspaceBasis) -> Result<Vec<Complex64>> {
    let mut amps = vec![Complex64::new(0.0, 0.0); basis.len()];
    let a = 1.0 / (orbit.size() as f64).sqrt();
    for &m in &orbit.members {
        let k = basis.index_of(m).ok_or_else(|| {
            Error::InconsistentTarget(format!(
                "orbit member {} not in the subspace",
                format_bits(m, orbit.n)
            ))
        })?;
        amps[k] = Complex64::new(a, 0.0);
    }
    Ok(amps)
}
