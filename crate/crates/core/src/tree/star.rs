use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{embed_batches, BatchEmbedding, Quadtree};
use crate::batch_matrix::{solve_meta, BatchCostMatrix};
use crate::error::{Error, Result};
use crate::upper::{BatchProblem, BoundReport, Method, Stopwatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representative {
    /// First member of the cell in index order.
    #[default]
    First,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarOptions {
    pub rho: f64,
    /// Overrides the ⌈k^ρ⌉ tree count.
    pub repetitions: Option<usize>,
    pub representative: Representative,
    pub embedding: BatchEmbedding,
}

impl Default for StarOptions {
    fn default() -> Self {
        Self {
            rho: 0.5,
            repetitions: None,
            representative: Representative::First,
            embedding: BatchEmbedding::Mean,
        }
    }
}

fn tree_seed(seed: u64, rep: usize) -> u64 {
    seed ^ (rep as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Distinct cross edges (s, t) from the stars of every cell of every tree.
/// Items 0..k are X batches, k..2k are Y batches.
pub fn star_edges(emb: ArrayView2<f64>, k: usize, opts: &StarOptions, seed: u64) -> Result<BTreeSet<(usize, usize)>> {
    if !(opts.rho > 0.0 && opts.rho < 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1), got {}", opts.rho)));
    }
    if emb.nrows() != 2 * k {
        return Err(Error::Dimension(format!("expected {} embeddings, got {}", 2 * k, emb.nrows())));
    }
    let reps = opts
        .repetitions
        .unwrap_or_else(|| (k as f64).powf(opts.rho).ceil() as usize)
        .max(1);
    let mut edges = BTreeSet::new();
    let mut add_cell = |members: &[usize], rng: &mut ChaCha8Rng| {
        if members.len() < 2 {
            return;
        }
        let rep = match opts.representative {
            Representative::First => members[0],
            Representative::Random => *members.choose(rng).expect("non-empty"),
        };
        for &o in members {
            if (rep < k) != (o < k) {
                let (s, t) = if rep < k { (rep, o - k) } else { (o, rep - k) };
                edges.insert((s, t));
            }
        }
    };
    for r in 0..reps {
        let ts = tree_seed(seed, r);
        let mut rng = ChaCha8Rng::seed_from_u64(ts);
        match Quadtree::build(emb, ts) {
            Ok(tree) => {
                for node in tree.nodes() {
                    add_cell(&node.members, &mut rng);
                }
            }
            // all embeddings coincide: one cell holds everything
            Err(Error::DegenerateAspectRatio(_)) => {
                let all: Vec<usize> = (0..2 * k).collect();
                add_cell(&all, &mut rng);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(edges)
}

pub fn bhot_star(p: &BatchProblem, rho: f64, seed: u64) -> Result<BoundReport> {
    bhot_star_with(
        p,
        &StarOptions {
            rho,
            ..StarOptions::default()
        },
        seed,
    )
}

/// Solves the star cross edges, completes them with free same-side edges
/// weighted by embedding distance, matches on shortest-path distances, solves
/// any matched pair not yet solved, and runs the meta problem on all solved cells.
pub fn bhot_star_with(p: &BatchProblem, opts: &StarOptions, seed: u64) -> Result<BoundReport> {
    let clock = Stopwatch::start();
    let k = p.k();
    let emb = embed_batches(p, opts.embedding, seed)?;
    let edges: Vec<(usize, usize)> = star_edges(emb.view(), k, opts, seed)?.into_iter().collect();
    let mut d = BatchCostMatrix::new(k);
    p.fill(&mut d, &edges)?;

    let n = 2 * k;
    let mut g = Array2::from_elem((n, n), f64::INFINITY);
    for i in 0..n {
        g[(i, i)] = 0.0;
    }
    let same_side = |a: usize, b: usize| -> f64 {
        let (ra, rb) = (emb.row(a), emb.row(b));
        match opts.embedding {
            BatchEmbedding::Mean => ra.iter().zip(rb.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            BatchEmbedding::SparseL1 => ra.iter().zip(rb.iter()).map(|(x, y)| (x - y).abs()).sum(),
        }
    };
    for a in 0..k {
        for b in a + 1..k {
            let wx = same_side(a, b);
            g[(a, b)] = wx;
            g[(b, a)] = wx;
            let wy = same_side(k + a, k + b);
            g[(k + a, k + b)] = wy;
            g[(k + b, k + a)] = wy;
        }
    }
    for &(s, t) in &edges {
        let v = d.get(s, t).expect("just solved");
        g[(s, k + t)] = v;
        g[(k + t, s)] = v;
    }
    for m in 0..n {
        for i in 0..n {
            let gim = g[(i, m)];
            if gim == f64::INFINITY {
                continue;
            }
            for j in 0..n {
                let via = gim + g[(m, j)];
                if via < g[(i, j)] {
                    g[(i, j)] = via;
                }
            }
        }
    }
    let g_tilde = Array2::from_shape_fn((k, k), |(s, t)| g[(s, k + t)]);
    let meta = BatchCostMatrix::from_dense(g_tilde.view())?;
    let (_, proxy) = solve_meta(&meta, p.a_tilde().view(), p.b_tilde().view())?;
    let extra: Vec<(usize, usize)> = proxy.pairs.iter().copied().filter(|&(s, t)| !d.is_solved(s, t)).collect();
    p.fill(&mut d, &extra)?;

    let (value, matching) = solve_meta(&d, p.a_tilde().view(), p.b_tilde().view())?;
    Ok(BoundReport {
        method: Method::Star,
        value,
        budget_used: d.solved_count(),
        wall_time_ms: clock.ms(),
        matching,
    })
}
