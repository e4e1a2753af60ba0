use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_LEVELS: usize = 40;
const ASPECT_SAMPLE_PAIRS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub level: usize,
    pub parent: Option<usize>,
    /// Side length of this cell.
    pub side: f64,
    /// Coordinate of this node in the ℓ1 embedding: the weight of the edge to
    /// the parent, plus the collapsed chain below it for early leaves.
    pub weight: f64,
    pub children: Vec<usize>,
    /// Point indices inside this cell, in input order.
    pub members: Vec<usize>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Randomly shifted quadtree. Cells at level ℓ have side 2Φ/2^ℓ; the edge from
/// a level-ℓ cell to its parent weighs the parent's side. Refinement stops in
/// cells whose points coincide, so such leaves may sit above the last level.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadtree {
    shift: Array1<f64>,
    origin: Array1<f64>,
    phi: f64,
    levels: usize,
    nodes: Vec<Node>,
    leaf_of: Vec<usize>,
}

/// ℓ1 aspect ratio max/min over nonzero distances, from all pairs when there
/// are few, else from a seeded sample of pairs.
pub fn estimate_aspect_ratio(points: ArrayView2<f64>, rng: &mut impl Rng) -> Option<f64> {
    let n = points.nrows();
    let l1 = |i: usize, j: usize| -> f64 {
        points
            .row(i)
            .iter()
            .zip(points.row(j).iter())
            .map(|(a, b)| (a - b).abs())
            .sum()
    };
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut visit = |d: f64| {
        if d > 0.0 {
            lo = lo.min(d);
            hi = hi.max(d);
        }
    };
    if n * n.saturating_sub(1) / 2 <= ASPECT_SAMPLE_PAIRS {
        for i in 0..n {
            for j in i + 1..n {
                visit(l1(i, j));
            }
        }
    } else {
        for _ in 0..ASPECT_SAMPLE_PAIRS {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            visit(l1(i, j));
        }
    }
    (hi > 0.0).then(|| hi / lo)
}

impl Quadtree {
    /// Builds a tree with ⌈log₂(d·Φ_C)⌉ + 1 levels (at least 2, at most 40).
    pub fn build(points: ArrayView2<f64>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = points.ncols();
        let aspect = estimate_aspect_ratio(points, &mut rng).unwrap_or(1.0);
        let levels = ((d as f64 * aspect).log2().ceil().max(0.0) as usize + 1).clamp(2, MAX_LEVELS);
        Self::build_inner(points, levels, &mut rng)
    }

    pub fn build_with_levels(points: ArrayView2<f64>, levels: usize, seed: u64) -> Result<Self> {
        if levels == 0 || levels > MAX_LEVELS {
            return Err(Error::Config(format!("levels must be in 1..={MAX_LEVELS}, got {levels}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build_inner(points, levels, &mut rng)
    }

    fn build_inner(points: ArrayView2<f64>, levels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::Dimension("quadtree needs at least one point and one coordinate".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("quadtree points".into()));
        }
        let origin: Array1<f64> = points
            .columns()
            .into_iter()
            .map(|c| c.iter().cloned().fold(f64::INFINITY, f64::min))
            .collect();
        let extent = points
            .columns()
            .into_iter()
            .zip(origin.iter())
            .map(|(c, &lo)| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - lo)
            .fold(0.0f64, f64::max);
        if extent <= 0.0 {
            return Err(Error::DegenerateAspectRatio(
                "all points coincide, so the aspect ratio is undefined".into(),
            ));
        }
        let phi = 2f64.powi(extent.log2().ceil() as i32);
        let shift: Array1<f64> = (0..d).map(|_| rng.random_range(0.0..=phi)).collect();

        let side = |level: usize| 2.0 * phi / 2f64.powi(level as i32);
        // weight of the edge into a level-ℓ node
        let edge = |level: usize| if level == 0 { 0.0 } else { side(level - 1) };
        let tail = |level: usize| ((level + 1)..levels).map(edge).sum::<f64>();

        let identical = |members: &[usize]| {
            let first = points.row(members[0]);
            members[1..].iter().all(|&i| points.row(i) == first)
        };

        let mut nodes = vec![Node {
            level: 0,
            parent: None,
            side: side(0),
            weight: 0.0,
            children: Vec::new(),
            members: (0..n).collect(),
        }];
        let mut frontier = vec![0usize];
        for level in 1..levels {
            let mut next = Vec::new();
            let s = side(level);
            for &v in &frontier {
                if identical(&nodes[v].members) {
                    continue;
                }
                let mut slots: HashMap<Vec<i64>, usize> = HashMap::new();
                let members = nodes[v].members.clone();
                for i in members {
                    let key: Vec<i64> = (0..d)
                        .map(|c| ((points[(i, c)] - origin[c] - (shift[c] - phi)) / s).floor() as i64)
                        .collect();
                    let child = *slots.entry(key).or_insert_with(|| {
                        nodes.push(Node {
                            level,
                            parent: Some(v),
                            side: s,
                            weight: edge(level),
                            children: Vec::new(),
                            members: Vec::new(),
                        });
                        let id = nodes.len() - 1;
                        next.push(id);
                        id
                    });
                    nodes[child].members.push(i);
                }
                let mut kids: Vec<usize> = slots.into_values().collect();
                kids.sort_unstable();
                nodes[v].children = kids;
            }
            frontier = next;
        }

        let mut leaf_of = vec![usize::MAX; n];
        for (id, node) in nodes.iter_mut().enumerate() {
            if node.children.is_empty() {
                node.weight += tail(node.level);
                for &i in &node.members {
                    leaf_of[i] = id;
                }
            }
        }
        Ok(Self {
            shift: shift + &origin,
            origin,
            phi,
            levels,
            nodes,
            leaf_of,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// The random shift σ in input coordinates.
    pub fn shift(&self) -> &Array1<f64> {
        &self.shift
    }

    /// Lower corner of the bounding box the shift was drawn against.
    pub fn origin(&self) -> &Array1<f64> {
        &self.origin
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.leaf_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaf_of.is_empty()
    }

    pub fn leaf_of(&self, i: usize) -> Result<usize> {
        self.leaf_of.get(i).copied().ok_or(Error::Index {
            index: i,
            len: self.leaf_of.len(),
        })
    }

    /// Cell containing point `i` at `level`; a leaf above `level` stands for
    /// its own collapsed chain.
    pub fn cell_of(&self, i: usize, level: usize) -> Result<usize> {
        let mut v = self.leaf_of(i)?;
        while self.nodes[v].level > level {
            v = self.nodes[v].parent.expect("non-root has a parent");
        }
        Ok(v)
    }

    /// Sum of edge weights on the path between the leaves of `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> Result<f64> {
        let (mut u, mut v) = (self.leaf_of(i)?, self.leaf_of(j)?);
        let mut total = 0.0;
        while u != v {
            let (lu, lv) = (self.nodes[u].level, self.nodes[v].level);
            if lu >= lv {
                total += self.nodes[u].weight;
                u = self.nodes[u].parent.expect("non-root has a parent");
            }
            if lv >= lu && u != v {
                total += self.nodes[v].weight;
                v = self.nodes[v].parent.expect("non-root has a parent");
            }
        }
        Ok(total)
    }

    /// f(x_i): node → weight along the root-to-leaf path (root excluded).
    pub fn embed_point(&self, i: usize) -> Result<SparseL1Embedding> {
        let mut coords = BTreeMap::new();
        let mut v = self.leaf_of(i)?;
        while let Some(parent) = self.nodes[v].parent {
            coords.insert(v, self.nodes[v].weight);
            v = parent;
        }
        Ok(SparseL1Embedding { coords })
    }

    /// f(α) = Σ_i α_i f(x_i) for a measure on tree-indexed points.
    pub fn embed_measure(&self, support: &[usize], weights: &[f64]) -> Result<SparseL1Embedding> {
        if support.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} support points but {} weights",
                support.len(),
                weights.len()
            )));
        }
        let mut coords = BTreeMap::new();
        for (&i, &w) in support.iter().zip(weights) {
            for (node, val) in self.embed_point(i)?.coords {
                *coords.entry(node).or_insert(0.0) += w * val;
            }
        }
        Ok(SparseL1Embedding { coords })
    }
}

/// Sparse vector indexed by quadtree nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseL1Embedding {
    pub coords: BTreeMap<usize, f64>,
}

impl SparseL1Embedding {
    pub fn nnz(&self) -> usize {
        self.coords.len()
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        let mut total = 0.0;
        for (k, v) in &self.coords {
            total += (v - other.coords.get(k).copied().unwrap_or(0.0)).abs();
        }
        for (k, v) in &other.coords {
            if !self.coords.contains_key(k) {
                total += v.abs();
            }
        }
        total
    }
}

/// Stacks sparse embeddings into dense rows over the union of their coordinates.
pub fn densify(embeddings: &[SparseL1Embedding]) -> Array2<f64> {
    let mut index = BTreeMap::new();
    for e in embeddings {
        for k in e.coords.keys() {
            let next = index.len();
            index.entry(*k).or_insert(next);
        }
    }
    let mut out = Array2::zeros((embeddings.len(), index.len().max(1)));
    for (r, e) in embeddings.iter().enumerate() {
        for (k, v) in &e.coords {
            out[(r, index[k])] = *v;
        }
    }
    out
}
