//! Quadtree embeddings and the tree- and star-based batch matchings.

mod quadtree;
mod star;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::batch_matrix::{solve_meta, BatchCostMatrix, BatchMatching};
use crate::error::{Error, Result};
use crate::upper::{BatchProblem, BoundReport, Method, Stopwatch};

pub use quadtree::{densify, estimate_aspect_ratio, Node, Quadtree, SparseL1Embedding};
pub use star::{bhot_star, bhot_star_with, star_edges, Representative, StarOptions};

/// How each batch is turned into a vector before building the batch-level tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchEmbedding {
    /// Weighted mean of the batch in R^d.
    #[default]
    Mean,
    /// f(α) over a point-level quadtree of all X and Y points, densified.
    SparseL1,
}

/// Rows 0..k are the X batches, rows k..2k the Y batches.
pub fn embed_batches(p: &BatchProblem, embedding: BatchEmbedding, seed: u64) -> Result<Array2<f64>> {
    let k = p.k();
    match embedding {
        BatchEmbedding::Mean => {
            let rows: Vec<_> = (0..k)
                .map(|s| p.batch_x(s))
                .chain((0..k).map(|t| p.batch_y(t)))
                .map(|m| m.points().t().dot(m.weights()))
                .collect();
            let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
            Ok(concatenate(Axis(0), &views).expect("equal dimensions"))
        }
        BatchEmbedding::SparseL1 => {
            let pts = concatenate(Axis(0), &[p.x().points(), p.y().points()])
                .map_err(|e| Error::Dimension(e.to_string()))?;
            let tree = Quadtree::build(pts.view(), seed)?;
            let offset = p.x().len();
            let mut embs = Vec::with_capacity(2 * k);
            for s in 0..k {
                let b = p.partition_x().batch(s)?;
                embs.push(tree.embed_measure(b, p.batch_x(s).weights_slice())?);
            }
            for t in 0..k {
                let b: Vec<usize> = p.partition_y().batch(t)?.iter().map(|&j| j + offset).collect();
                embs.push(tree.embed_measure(&b, p.batch_y(t).weights_slice())?);
            }
            Ok(densify(&embs))
        }
    }
}

/// Greedy bottom-up matching on a tree over the stacked embeddings: at every
/// node, pending X and Y items are paired in index order and the rest moves up.
fn flowtree_on(tree: &Quadtree, k: usize) -> Vec<usize> {
    let nodes = tree.nodes();
    let mut pending: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); nodes.len()];
    for (id, node) in nodes.iter().enumerate() {
        if node.is_leaf() {
            for &i in &node.members {
                if i < k {
                    pending[id].0.push(i);
                } else {
                    pending[id].1.push(i - k);
                }
            }
        }
    }
    let mut perm = vec![usize::MAX; k];
    // node ids grow with level, so reverse order visits children first
    for id in (0..nodes.len()).rev() {
        let (mut xs, mut ys) = std::mem::take(&mut pending[id]);
        xs.sort_unstable();
        ys.sort_unstable();
        let m = xs.len().min(ys.len());
        for (&s, &t) in xs.iter().zip(&ys).take(m) {
            perm[s] = t;
        }
        if let Some(parent) = nodes[id].parent {
            pending[parent].0.extend_from_slice(&xs[m..]);
            pending[parent].1.extend_from_slice(&ys[m..]);
        }
    }
    perm
}

fn stack<'a>(x_emb: ArrayView2<'a, f64>, y_emb: ArrayView2<'a, f64>) -> Result<Array2<f64>> {
    if x_emb.nrows() != y_emb.nrows() || x_emb.ncols() != y_emb.ncols() {
        return Err(Error::Dimension(format!(
            "embeddings are {:?} and {:?}",
            x_emb.dim(),
            y_emb.dim()
        )));
    }
    Ok(concatenate(Axis(0), &[x_emb, y_emb]).expect("checked shapes"))
}

/// Flowtree matching between k X-side and k Y-side embedding vectors.
pub fn flowtree_match<'a>(x_emb: ArrayView2<'a, f64>, y_emb: ArrayView2<'a, f64>, seed: u64) -> Result<BatchMatching> {
    let k = x_emb.nrows();
    if k == 0 {
        return Err(Error::Dimension("no embeddings to match".into()));
    }
    let all = stack(x_emb, y_emb)?;
    if k == 1 {
        return Ok(BatchMatching::from_permutation(&[0]));
    }
    let tree = Quadtree::build(all.view(), seed)?;
    Ok(BatchMatching::from_permutation(&flowtree_on(&tree, k)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TreeOptions {
    /// Solves beyond the k matched pairs, chosen by tree proximity.
    pub extra_budget: usize,
    pub embedding: BatchEmbedding,
}

pub fn bhot_tree(p: &BatchProblem, extra_budget: usize, seed: u64) -> Result<BoundReport> {
    bhot_tree_with(
        p,
        &TreeOptions {
            extra_budget,
            ..TreeOptions::default()
        },
        seed,
    )
}

/// Flowtree matching on batch embeddings, true solves on the matched pairs and
/// the `extra_budget` nearest unmatched pairs, then the meta problem on those.
pub fn bhot_tree_with(p: &BatchProblem, opts: &TreeOptions, seed: u64) -> Result<BoundReport> {
    let clock = Stopwatch::start();
    let k = p.k();
    if opts.extra_budget > k * k - k {
        return Err(Error::Budget(format!(
            "extra budget {} exceeds k² − k = {}",
            opts.extra_budget,
            k * k - k
        )));
    }
    let emb = embed_batches(p, opts.embedding, seed)?;
    let tree = if k == 1 {
        None
    } else {
        match Quadtree::build(emb.view(), seed) {
            Ok(t) => Some(t),
            Err(Error::DegenerateAspectRatio(msg)) => {
                log::warn!("batch embeddings coincide ({msg}); falling back to the diagonal matching");
                None
            }
            Err(e) => return Err(e),
        }
    };
    let perm = match &tree {
        Some(t) => flowtree_on(t, k),
        None => (0..k).collect(),
    };
    let mut cells: Vec<(usize, usize)> = perm.iter().enumerate().map(|(s, &t)| (s, t)).collect();
    if opts.extra_budget > 0 {
        let mut rest = Vec::with_capacity(k * k - k);
        for (s, &matched) in perm.iter().enumerate() {
            for t in 0..k {
                if matched != t {
                    let dist = match &tree {
                        Some(tr) => tr.distance(s, k + t)?,
                        None => 0.0,
                    };
                    rest.push((dist, s, t));
                }
            }
        }
        rest.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        cells.extend(rest.into_iter().take(opts.extra_budget).map(|(_, s, t)| (s, t)));
    }
    let mut d = BatchCostMatrix::new(k);
    p.fill(&mut d, &cells)?;
    let (value, matching) = solve_meta(&d, p.a_tilde().view(), p.b_tilde().view())?;
    Ok(BoundReport {
        method: Method::Tree,
        value,
        budget_used: cells.len(),
        wall_time_ms: clock.ms(),
        matching,
    })
}
