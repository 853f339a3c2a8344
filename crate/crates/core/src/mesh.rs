//! Simplicial meshes of the unit interval and the unit square.
//!
//! Nodes are stored as `[x, y]` with `y = 0` in 1D. Boundary facets are
//! derived from the element complex (facets owned by exactly one element),
//! so the boundary-closure invariant holds by construction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryFacet {
    pub nodes: Vec<usize>,
    pub element: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dimension: usize,
    nodes: Vec<Point>,
    elements: Vec<Vec<usize>>,
    boundary_facets: Vec<BoundaryFacet>,
}

impl Mesh {
    /// Uniform partition of (0, 1) into `n` elements.
    pub fn interval(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("mesh", "interval mesh needs n >= 1"));
        }
        let nodes = (0..=n).map(|i| [i as f64 / n as f64, 0.0]).collect();
        let elements = (0..n).map(|i| vec![i, i + 1]).collect();
        Self::from_parts(1, nodes, elements)
    }

    /// Unit square split into `n x n` cells, each cut along the diagonal from
    /// its lower-left to its upper-right corner.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("mesh", "square mesh needs n >= 1"));
        }
        let h = 1.0 / n as f64;
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                nodes.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                elements.push(vec![a, b, c]);
                elements.push(vec![a, c, d]);
            }
        }
        Self::from_parts(2, nodes, elements)
    }

    fn from_parts(dimension: usize, nodes: Vec<Point>, elements: Vec<Vec<usize>>) -> Result<Self> {
        // Count every facet (sorted node tuple) and remember its last owner.
        let mut facets: BTreeMap<Vec<usize>, (usize, usize, Vec<usize>)> = BTreeMap::new();
        for (e, el) in elements.iter().enumerate() {
            for skip in 0..el.len() {
                let facet: Vec<usize> = el
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != skip)
                    .map(|(_, &v)| v)
                    .collect();
                let mut key = facet.clone();
                key.sort_unstable();
                let entry = facets.entry(key).or_insert((0, e, facet));
                entry.0 += 1;
                entry.1 = e;
            }
        }
        let boundary_facets = facets
            .into_values()
            .filter(|(count, _, _)| *count == 1)
            .map(|(_, element, nodes)| BoundaryFacet { nodes, element })
            .collect();
        let mesh = Mesh {
            dimension,
            nodes,
            elements,
            boundary_facets,
        };
        mesh.check()?;
        Ok(mesh)
    }

    fn check(&self) -> Result<()> {
        let n = self.nodes.len();
        for (e, el) in self.elements.iter().enumerate() {
            if el.iter().any(|&v| v >= n) {
                return Err(Error::invalid("mesh", format!("element {e} references a missing node")));
            }
            if self.element_measure(e) <= 0.0 {
                return Err(Error::invalid("mesh", format!("element {e} has nonpositive measure")));
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.boundary_facets
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Signed length (1D) or area (2D) of element `e`.
    pub fn element_measure(&self, e: usize) -> f64 {
        let el = &self.elements[e];
        let p0 = self.nodes[el[0]];
        let p1 = self.nodes[el[1]];
        if self.dimension == 1 {
            p1[0] - p0[0]
        } else {
            let p2 = self.nodes[el[2]];
            0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
        }
    }

    /// 1 for a point facet, Euclidean length for an edge.
    pub fn facet_measure(&self, facet: usize) -> Result<f64> {
        let f = self.boundary_facets.get(facet).ok_or_else(|| {
            Error::invalid(
                "mesh",
                format!("facet index {facet} out of range (have {})", self.boundary_facets.len()),
            )
        })?;
        Ok(match f.nodes.as_slice() {
            [_] => 1.0,
            [a, b] => {
                let (pa, pb) = (self.nodes[*a], self.nodes[*b]);
                (pb[0] - pa[0]).hypot(pb[1] - pa[1])
            }
            _ => unreachable!("facets have one or two nodes"),
        })
    }

    /// Index of the node mirrored across the vertical midline `x = 1/2`.
    pub fn mirror_node(&self, i: usize) -> usize {
        let [x, y] = self.nodes[i];
        let target = [1.0 - x, y];
        self.nodes
            .iter()
            .position(|p| (p[0] - target[0]).abs() < 1e-12 && (p[1] - target[1]).abs() < 1e-12)
            .unwrap_or(i)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let d = self.dimension;
        serde_json::json!({
            "dimension": d,
            "nodes": self.nodes.iter().map(|p| p[..d].to_vec()).collect::<Vec<_>>(),
            "elements": self.elements,
            "boundary_facets": self.boundary_facets,
        })
    }
}

/// CLI mesh selector: `interval:n=<N>` or `square:n=<N>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshSelector {
    Interval(usize),
    Square(usize),
}

impl MeshSelector {
    pub fn build(self) -> Result<Mesh> {
        match self {
            MeshSelector::Interval(n) => Mesh::interval(n),
            MeshSelector::Square(n) => Mesh::unit_square(n),
        }
    }

    pub fn resolution(self) -> usize {
        match self {
            MeshSelector::Interval(n) | MeshSelector::Square(n) => n,
        }
    }
}

impl FromStr for MeshSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("mesh", format!("bad mesh selector `{s}` (expected interval:n=<N> or square:n=<N>)"));
        let (kind, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        let n: usize = rest
            .trim()
            .strip_prefix("n=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(bad)?;
        if n == 0 {
            return Err(Error::invalid("mesh", "mesh resolution must be >= 1"));
        }
        match kind.trim() {
            "interval" => Ok(MeshSelector::Interval(n)),
            "square" => Ok(MeshSelector::Square(n)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for MeshSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshSelector::Interval(n) => write!(f, "interval:n={n}"),
            MeshSelector::Square(n) => write!(f, "square:n={n}"),
        }
    }
}
