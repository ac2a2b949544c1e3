//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain strings and returns JSON, so the page needs no
//! bundler. The `*_json` functions hold the logic and are tested natively.

use branchpred::features::{pool, relaxation_window};
use branchpred::ConversationTree;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Parse `"-, 0, 0, 1"`: the root first, then each node's parent index.
pub fn parse_parents(text: &str) -> Result<Vec<Option<usize>>, String> {
    let items: Vec<&str> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err("empty tree".into());
    }
    if !matches!(items[0], "-" | "root" | "null") {
        return Err(format!("the first entry must be `-` (the root), got {:?}", items[0]));
    }
    let mut parents = vec![None];
    for (i, s) in items.iter().enumerate().skip(1) {
        let p: usize = s.parse().map_err(|_| format!("node {i}: {s:?} is not a node index"))?;
        if p >= i {
            return Err(format!("node {i} replies to {p}, which does not exist yet"));
        }
        parents.push(Some(p));
    }
    Ok(parents)
}

#[derive(Debug, Serialize)]
struct NodeView {
    index: usize,
    parent: Option<usize>,
    level: usize,
    /// `leaf`, `intermediate`, `new` or `future`.
    role: &'static str,
    in_window: bool,
    /// Horizontal slot: leaves in depth-first order, parents centred over children.
    x: f64,
}

#[derive(Debug, Serialize)]
struct PrefixReport {
    k: usize,
    nodes: Vec<NodeView>,
    leaves: Vec<usize>,
    intermediates: Vec<usize>,
    window: Vec<usize>,
    recent_leaves: Vec<usize>,
    /// Label of node k when it is a branch instance.
    label: Option<u8>,
    depth: usize,
}

fn layout(tree: &ConversationTree) -> Vec<f64> {
    let mut x = vec![0.0; tree.len()];
    let mut next = 0.0;
    // Iterative post-order so deep chains cannot overflow the stack.
    let mut stack = vec![(0usize, false)];
    while let Some((v, done)) = stack.pop() {
        let children = tree.children(v);
        if children.is_empty() {
            x[v] = next;
            next += 1.0;
        } else if done {
            x[v] = (x[children[0]] + x[children[children.len() - 1]]) / 2.0;
        } else {
            stack.push((v, true));
            stack.extend(children.iter().rev().map(|&c| (c, false)));
        }
    }
    x
}

/// Partition of the prefix of size `k` and its relaxation window.
/// `n == 0` keeps every node in the window.
pub fn prefix_json(parents: &str, k: usize, n: usize) -> Result<String, String> {
    let parents = parse_parents(parents)?;
    let tree = ConversationTree::from_parent_indices("demo", &parents);
    if k < 1 || k > tree.len() {
        return Err(format!("prefix size must lie in 1..={}", tree.len()));
    }
    let prefix = tree.prefix(k).map_err(|e| e.to_string())?;
    let relax = (n > 0).then_some(n);
    let window = relaxation_window(&prefix, relax).map_err(|e| e.to_string())?;
    let recent_leaves: Vec<usize> = prefix.leaves().iter().rev().take(relax.unwrap_or(usize::MAX)).copied().collect();
    let xs = layout(&tree);
    let nodes = (0..tree.len())
        .map(|i| NodeView {
            index: i,
            parent: tree.parent(i),
            level: tree.level(i),
            role: if i == k {
                "new"
            } else if i > k {
                "future"
            } else if prefix.is_leaf(i) {
                "leaf"
            } else {
                "intermediate"
            },
            in_window: window.binary_search(&i).is_ok(),
            x: xs[i],
        })
        .collect();
    let label = (k < tree.len() && tree.level(k) >= 2)
        .then(|| tree.branch_label(k).ok())
        .flatten();
    let report = PrefixReport {
        k,
        nodes,
        leaves: prefix.leaves().to_vec(),
        intermediates: prefix.intermediates().to_vec(),
        window,
        recent_leaves,
        label,
        depth: tree.depth(),
    };
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

/// The ten pooled statistics of a list of reply-to scores.
pub fn pool_json(scores: &str) -> Result<String, String> {
    let values = scores
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("{s:?} is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    let block = pool(&values).map_err(|e| e.to_string())?;
    serde_json::to_string(&block).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn prefix_view(parents: &str, k: usize, n: usize) -> Result<String, JsError> {
    prefix_json(parents, k, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn pool_scores(scores: &str) -> Result<String, JsError> {
    pool_json(scores).map_err(|e| JsError::new(&e))
}
