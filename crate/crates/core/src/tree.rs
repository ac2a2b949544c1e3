//! Conversation trees, prefix views and the branching label.
//!
//! Nodes are stored in creation order and addressed by a zero-based index:
//! index 0 is the root, and the prefix of size `k` holds nodes `0..k`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("conversation is empty")]
    Empty,
    #[error("duplicate comment id `{0}`")]
    DuplicateId(String),
    #[error("conversation has {0} roots, expected exactly one")]
    RootCount(usize),
    #[error("comment `{child}` replies to unknown comment `{parent}`")]
    OrphanParent { child: String, parent: String },
    #[error("comment `{0}` is not reachable from the root (reply cycle)")]
    Unreachable(String),
    #[error("comment `{child}` is ordered before its parent `{parent}`")]
    ReplyPrecedesParent { child: String, parent: String },
    #[error("comment `{id}` belongs to conversation `{found}`, expected `{expected}`")]
    MixedConversation {
        id: String,
        found: String,
        expected: String,
    },
    #[error("prefix size {k} out of range 1..={len}")]
    PrefixOutOfRange { k: usize, len: usize },
    #[error("node {0} cannot form a branch instance (the root has no parent)")]
    RootInstance(usize),
    #[error("node index {index} out of range for tree of {len} nodes")]
    NodeOutOfRange { index: usize, len: usize },
}

/// A single message of a discussion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub conversation_id: String,
    /// Absent exactly for the conversation root.
    #[serde(rename = "reply_to", default)]
    pub parent_id: Option<String>,
    #[serde(rename = "speaker")]
    pub author: String,
    /// Seconds since the epoch.
    pub timestamp: i64,
    pub text: String,
}

/// A validated reply tree, nodes sorted by `(timestamp, id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationTree {
    conversation_id: String,
    nodes: Vec<Comment>,
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    levels: Vec<usize>,
}

impl ConversationTree {
    /// Build and validate a tree from the comments of one conversation.
    ///
    /// Comments may arrive in any order; they are sorted by timestamp with
    /// ties broken by id.
    pub fn from_comments(mut comments: Vec<Comment>) -> Result<Self, TreeError> {
        let first = comments.first().ok_or(TreeError::Empty)?;
        let conversation_id = first.conversation_id.clone();
        if let Some(c) = comments
            .iter()
            .find(|c| c.conversation_id != conversation_id)
        {
            return Err(TreeError::MixedConversation {
                id: c.id.clone(),
                found: c.conversation_id.clone(),
                expected: conversation_id,
            });
        }
        comments.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));

        let mut index = std::collections::HashMap::with_capacity(comments.len());
        for (i, c) in comments.iter().enumerate() {
            if index.insert(c.id.as_str(), i).is_some() {
                return Err(TreeError::DuplicateId(c.id.clone()));
            }
        }
        let roots = comments.iter().filter(|c| c.parent_id.is_none()).count();
        if roots != 1 {
            return Err(TreeError::RootCount(roots));
        }

        let mut parents = Vec::with_capacity(comments.len());
        for c in &comments {
            let parent = match &c.parent_id {
                None => None,
                Some(p) => Some(*index.get(p.as_str()).ok_or_else(|| TreeError::OrphanParent {
                    child: c.id.clone(),
                    parent: p.clone(),
                })?),
            };
            parents.push(parent);
        }
        check_reachable(&comments, &parents)?;
        // With a single root, every node having an earlier parent also puts
        // the root at index 0.
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= i {
                    return Err(TreeError::ReplyPrecedesParent {
                        child: comments[i].id.clone(),
                        parent: comments[p].id.clone(),
                    });
                }
            }
        }
        Ok(Self::assemble(conversation_id, comments, parents))
    }

    /// Build a tree from a parent-index list where `parents[j] < j` for every
    /// non-root node. Comments get synthetic ids, authors and timestamps.
    /// Panics if the list is not a valid topological parent array.
    pub fn from_parent_indices(conversation_id: &str, parents: &[Option<usize>]) -> Self {
        assert!(!parents.is_empty(), "tree needs a root");
        assert!(parents[0].is_none(), "node 0 must be the root");
        let nodes = parents
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i > 0 {
                    let p = p.expect("only node 0 may be a root");
                    assert!(p < i, "parent {p} must precede child {i}");
                }
                Comment {
                    id: format!("{conversation_id}-{i}"),
                    conversation_id: conversation_id.to_string(),
                    parent_id: p.map(|p| format!("{conversation_id}-{p}")),
                    author: format!("a{i}"),
                    timestamp: i as i64,
                    text: String::new(),
                }
            })
            .collect();
        Self::assemble(conversation_id.to_string(), nodes, parents.to_vec())
    }

    fn assemble(conversation_id: String, nodes: Vec<Comment>, parents: Vec<Option<usize>>) -> Self {
        let mut children = vec![Vec::new(); nodes.len()];
        let mut levels = vec![0; nodes.len()];
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(i);
                levels[i] = levels[p] + 1;
            }
        }
        Self {
            conversation_id,
            nodes,
            parents,
            children,
            levels,
        }
    }

    pub fn conversation_id(&self) -> &str {
        &self.conversation_id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Comment] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &Comment {
        &self.nodes[index]
    }

    pub fn parent(&self, index: usize) -> Option<usize> {
        self.parents[index]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    /// Children of `index` in creation order.
    pub fn children(&self, index: usize) -> &[usize] {
        &self.children[index]
    }

    /// Depth of a node; the root is level 0.
    pub fn level(&self, index: usize) -> usize {
        self.levels[index]
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    /// Maximum node level.
    pub fn depth(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    /// Reply edges `(parent, child)` in child creation order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (p, c)))
    }

    /// The sub-tree made of the first `k` messages.
    pub fn prefix(&self, k: usize) -> Result<PrefixView<'_>, TreeError> {
        if k == 0 || k > self.len() {
            return Err(TreeError::PrefixOutOfRange { k, len: self.len() });
        }
        let mut has_child = vec![false; k];
        for p in self.parents[..k].iter().flatten() {
            has_child[*p] = true;
        }
        let (intermediates, leaves) = (0..k).partition(|&i| has_child[i]);
        Ok(PrefixView {
            tree: self,
            k,
            leaves,
            intermediates,
            has_child,
        })
    }

    /// 1 when node `index` replies to a node that already had a reply in the
    /// prefix preceding it, 0 when it extends a leaf.
    pub fn branch_label(&self, index: usize) -> Result<u8, TreeError> {
        if index >= self.len() {
            return Err(TreeError::NodeOutOfRange {
                index,
                len: self.len(),
            });
        }
        let parent = self.parents[index].ok_or(TreeError::RootInstance(index))?;
        // The parent is intermediate in the prefix iff one of its earlier
        // children precedes `index`.
        let earlier = self.children[parent].first().is_some_and(|&c| c < index);
        Ok(u8::from(earlier))
    }

    /// One instance per comment at level two or deeper, in creation order.
    pub fn enumerate_instances(&self) -> Vec<BranchInstance> {
        (1..self.len())
            .filter(|&i| self.levels[i] >= 2)
            .map(|i| BranchInstance {
                conversation_id: self.conversation_id.clone(),
                k: i,
                node: i,
                label: self.branch_label(i).expect("non-root node"),
                level: self.levels[i],
            })
            .collect()
    }
}

fn check_reachable(comments: &[Comment], parents: &[Option<usize>]) -> Result<(), TreeError> {
    let mut children = vec![Vec::new(); comments.len()];
    let mut root = 0;
    for (i, p) in parents.iter().enumerate() {
        match p {
            Some(p) => children[*p].push(i),
            None => root = i,
        }
    }
    let mut seen = vec![false; comments.len()];
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        seen[n] = true;
        stack.extend(children[n].iter().copied().filter(|&c| !seen[c]));
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(TreeError::Unreachable(comments[i].id.clone())),
        None => Ok(()),
    }
}

/// The first `k` nodes of a tree, split into leaves and intermediates.
#[derive(Debug, Clone)]
pub struct PrefixView<'a> {
    tree: &'a ConversationTree,
    k: usize,
    leaves: Vec<usize>,
    intermediates: Vec<usize>,
    has_child: Vec<bool>,
}

impl<'a> PrefixView<'a> {
    pub fn tree(&self) -> &'a ConversationTree {
        self.tree
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Nodes without a reply inside the prefix, ascending.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Nodes with at least one reply inside the prefix, ascending.
    pub fn intermediates(&self) -> &[usize] {
        &self.intermediates
    }

    pub fn is_leaf(&self, index: usize) -> bool {
        index < self.k && !self.has_child[index]
    }

    pub fn is_intermediate(&self, index: usize) -> bool {
        index < self.k && self.has_child[index]
    }
}

/// A comment at level two or deeper together with its branching label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchInstance {
    pub conversation_id: String,
    /// Size of the prefix the new comment is added to.
    pub k: usize,
    /// Index of the new comment (always equal to `k`).
    pub node: usize,
    pub label: u8,
    pub level: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> ConversationTree {
        ConversationTree::from_parent_indices("c", &[None, Some(0), Some(1)])
    }

    fn comment(id: &str, parent: Option<&str>, ts: i64) -> Comment {
        Comment {
            id: id.into(),
            conversation_id: "c".into(),
            parent_id: parent.map(Into::into),
            author: "x".into(),
            timestamp: ts,
            text: String::new(),
        }
    }

    #[test]
    fn chain_prefix() {
        let t = chain3();
        let p = t.prefix(3).unwrap();
        assert_eq!(p.leaves(), &[2]);
        assert_eq!(p.intermediates(), &[0, 1]);
    }

    #[test]
    fn star_prefix() {
        let t = ConversationTree::from_parent_indices("s", &[None, Some(0), Some(0)]);
        let p = t.prefix(3).unwrap();
        assert_eq!(p.leaves(), &[1, 2]);
        assert_eq!(p.intermediates(), &[0]);
    }

    #[test]
    fn chain_with_side_reply_prefix() {
        let t = ConversationTree::from_parent_indices("c", &[None, Some(0), Some(1), Some(1)]);
        let p = t.prefix(4).unwrap();
        assert_eq!(p.leaves(), &[2, 3]);
        assert_eq!(p.intermediates(), &[0, 1]);
    }

    #[test]
    fn prefix_bounds() {
        let t = chain3();
        assert_eq!(
            t.prefix(0).unwrap_err(),
            TreeError::PrefixOutOfRange { k: 0, len: 3 }
        );
        assert!(t.prefix(4).is_err());
        let p = t.prefix(1).unwrap();
        assert_eq!(p.leaves(), &[0]);
        assert!(p.intermediates().is_empty());
    }

    #[test]
    fn labels_for_small_trees() {
        let t = ConversationTree::from_parent_indices("c", &[None, Some(0), Some(1), Some(2)]);
        assert_eq!(t.branch_label(3).unwrap(), 0);
        let t = ConversationTree::from_parent_indices("c", &[None, Some(0), Some(1), Some(1)]);
        assert_eq!(t.branch_label(3).unwrap(), 1);
        let t = ConversationTree::from_parent_indices("c", &[None, Some(0), Some(0), Some(1)]);
        assert_eq!(t.branch_label(3).unwrap(), 0);
        assert_eq!(t.branch_label(0).unwrap_err(), TreeError::RootInstance(0));
    }

    #[test]
    fn instances_skip_first_level() {
        let insts = chain3().enumerate_instances();
        assert_eq!(insts.len(), 1);
        assert_eq!((insts[0].node, insts[0].label, insts[0].level), (2, 0, 2));

        let star = ConversationTree::from_parent_indices("s", &[None, Some(0), Some(0), Some(0)]);
        assert!(star.enumerate_instances().is_empty());
    }

    #[test]
    fn sorts_by_timestamp_then_id() {
        let t = ConversationTree::from_comments(vec![
            comment("b", Some("r"), 5),
            comment("a", Some("r"), 5),
            comment("r", None, 1),
        ])
        .unwrap();
        let ids: Vec<_> = t.nodes().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["r", "a", "b"]);
    }

    #[test]
    fn rejects_invalid_structures() {
        let dup = vec![comment("r", None, 0), comment("r", Some("r"), 1)];
        assert_eq!(
            ConversationTree::from_comments(dup).unwrap_err(),
            TreeError::DuplicateId("r".into())
        );
        let two_roots = vec![comment("r", None, 0), comment("s", None, 1)];
        assert_eq!(
            ConversationTree::from_comments(two_roots).unwrap_err(),
            TreeError::RootCount(2)
        );
        let orphan = vec![comment("r", None, 0), comment("x", Some("zz"), 1)];
        assert!(matches!(
            ConversationTree::from_comments(orphan).unwrap_err(),
            TreeError::OrphanParent { .. }
        ));
        let cycle = vec![
            comment("r", None, 0),
            comment("x", Some("y"), 1),
            comment("y", Some("x"), 2),
        ];
        assert!(matches!(
            ConversationTree::from_comments(cycle).unwrap_err(),
            TreeError::Unreachable(_)
        ));
        let backwards = vec![comment("r", None, 0), comment("x", Some("r"), -5)];
        assert!(matches!(
            ConversationTree::from_comments(backwards).unwrap_err(),
            TreeError::ReplyPrecedesParent { .. }
        ));
    }
}
