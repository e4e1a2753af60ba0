//! A serializable description of one bound method, runnable on a [`BatchProblem`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{bhot_star_with, bhot_tree_with, BatchEmbedding, StarOptions, TreeOptions};
use crate::upper::{
    bhot, greedy_matching, missing_costs, missing_greedy, naive_average, proxy_bound, BatchProblem, BoundReport,
    Budget, Method, Proxy,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    Naive,
    Bhot,
    Greedy {
        budget: usize,
    },
    Missing {
        budget: usize,
    },
    MissingGreedy {
        budget: usize,
    },
    Tree {
        extra_budget: usize,
        #[serde(default)]
        embedding: BatchEmbedding,
    },
    Star {
        rho: f64,
        #[serde(default)]
        repetitions: Option<usize>,
    },
    ProxyMeans,
    ProxyAvgDist,
    ProxyBures,
}

impl MethodConfig {
    /// Builds a config from a method name and, for budgeted methods, a budget B.
    /// For the tree method B counts the k matched solves, so the extra budget is B − k.
    pub fn from_method(method: Method, budget: Option<usize>, k: usize, rho: f64) -> Result<Self> {
        let need = |b: Option<usize>| -> Result<usize> {
            let b = b.ok_or_else(|| Error::Config(format!("method {method} needs a budget")))?;
            Budget::new(b, k).map(Budget::get)
        };
        Ok(match method {
            Method::Naive => MethodConfig::Naive,
            Method::Bhot => MethodConfig::Bhot,
            Method::Greedy => MethodConfig::Greedy { budget: need(budget)? },
            Method::Missing => MethodConfig::Missing { budget: need(budget)? },
            Method::MissingGreedy => MethodConfig::MissingGreedy { budget: need(budget)? },
            Method::Tree => MethodConfig::Tree {
                extra_budget: need(budget)? - k,
                embedding: BatchEmbedding::Mean,
            },
            Method::Star => MethodConfig::Star { rho, repetitions: None },
            Method::ProxyMeans => MethodConfig::ProxyMeans,
            Method::ProxyAvgDist => MethodConfig::ProxyAvgDist,
            Method::ProxyBures => MethodConfig::ProxyBures,
        })
    }

    pub fn method(&self) -> Method {
        match self {
            MethodConfig::Naive => Method::Naive,
            MethodConfig::Bhot => Method::Bhot,
            MethodConfig::Greedy { .. } => Method::Greedy,
            MethodConfig::Missing { .. } => Method::Missing,
            MethodConfig::MissingGreedy { .. } => Method::MissingGreedy,
            MethodConfig::Tree { .. } => Method::Tree,
            MethodConfig::Star { .. } => Method::Star,
            MethodConfig::ProxyMeans => Method::ProxyMeans,
            MethodConfig::ProxyAvgDist => Method::ProxyAvgDist,
            MethodConfig::ProxyBures => Method::ProxyBures,
        }
    }

    /// The budget B the method is declared to spend (an upper limit for star).
    pub fn declared_budget(&self, k: usize) -> usize {
        match *self {
            MethodConfig::Naive | MethodConfig::ProxyMeans | MethodConfig::ProxyAvgDist | MethodConfig::ProxyBures => k,
            MethodConfig::Bhot | MethodConfig::Star { .. } => k * k,
            MethodConfig::Greedy { budget }
            | MethodConfig::Missing { budget }
            | MethodConfig::MissingGreedy { budget } => budget,
            MethodConfig::Tree { extra_budget, .. } => k + extra_budget,
        }
    }

    pub fn run(&self, p: &BatchProblem, seed: u64) -> Result<BoundReport> {
        let k = p.k();
        match *self {
            MethodConfig::Naive => naive_average(p),
            MethodConfig::Bhot => bhot(p),
            MethodConfig::Greedy { budget } => greedy_matching(p, Budget::new(budget, k)?),
            MethodConfig::Missing { budget } => missing_costs(p, Budget::new(budget, k)?, seed),
            MethodConfig::MissingGreedy { budget } => missing_greedy(p, Budget::new(budget, k)?, seed),
            MethodConfig::Tree {
                extra_budget,
                embedding,
            } => bhot_tree_with(
                p,
                &TreeOptions {
                    extra_budget,
                    embedding,
                },
                seed,
            ),
            MethodConfig::Star { rho, repetitions } => bhot_star_with(
                p,
                &StarOptions {
                    rho,
                    repetitions,
                    ..StarOptions::default()
                },
                seed,
            ),
            MethodConfig::ProxyMeans => proxy_bound(p, Proxy::Means),
            MethodConfig::ProxyAvgDist => proxy_bound(p, Proxy::AvgDist),
            MethodConfig::ProxyBures => proxy_bound(p, Proxy::Bures),
        }
    }
}
