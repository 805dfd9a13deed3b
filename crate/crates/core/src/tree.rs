//! Exploration history as a rooted tree of full chart snapshots.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chartspec::{validate_structure, ChartSpec};

pub const LABEL_MAX_CHARS: usize = 40;
pub const ROOT_LABEL: &str = "root";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("invalid root chart: {0}")]
    InvalidSpec(String),
    #[error("unknown parent node `{0}`")]
    UnknownParent(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is not a leaf")]
    NotALeaf(String),
    #[error("corrupt tree: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationNode {
    pub id: String,
    pub parent: Option<String>,
    pub label: String,
    /// Filters added by the drill that created this node.
    pub applied_filter_labels: Vec<String>,
    pub spec: ChartSpec,
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreadcrumbEntry {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchDescriptor {
    pub leaf_id: String,
    pub path_labels: Vec<String>,
    pub display_label: String,
}

/// Wire form of the tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeExport {
    root_id: String,
    active_id: String,
    #[serde(default)]
    next_seq: Option<u64>,
    nodes: Vec<ExplorationNode>,
}

/// Nodes are kept in creation order; ids are `n<seq>` and never reused
/// within a tree, even across resets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeExport", into = "TreeExport")]
pub struct ExplorationTree {
    nodes: Vec<ExplorationNode>,
    index: HashMap<String, usize>,
    active: usize,
    next_seq: u64,
}

pub fn truncate_label(s: &str) -> String {
    if s.chars().count() <= LABEL_MAX_CHARS {
        s.to_string()
    } else {
        let mut out: String = s.chars().take(LABEL_MAX_CHARS - 1).collect();
        out.push('…');
        out
    }
}

impl ExplorationTree {
    pub fn init(root_spec: ChartSpec, created_at: i64) -> Result<Self, TreeError> {
        let report = validate_structure(&root_spec);
        if !report.ok {
            return Err(TreeError::InvalidSpec(report.trace()));
        }
        let root = ExplorationNode {
            id: "n0".into(),
            parent: None,
            label: ROOT_LABEL.into(),
            applied_filter_labels: Vec::new(),
            spec: root_spec,
            created_at,
        };
        Ok(Self {
            index: HashMap::from([(root.id.clone(), 0)]),
            nodes: vec![root],
            active: 0,
            next_seq: 1,
        })
    }

    pub fn root(&self) -> &ExplorationNode {
        &self.nodes[0]
    }

    pub fn root_id(&self) -> &str {
        &self.nodes[0].id
    }

    pub fn active(&self) -> &ExplorationNode {
        &self.nodes[self.active]
    }

    pub fn active_id(&self) -> &str {
        &self.nodes[self.active].id
    }

    pub fn node(&self, id: &str) -> Option<&ExplorationNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    /// All nodes in creation order.
    pub fn nodes(&self) -> &[ExplorationNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        !self.nodes.iter().any(|n| n.parent.as_deref() == Some(id))
    }

    /// Attaches a new node under `parent_id` and makes it active. Adding under
    /// a node that already has children forks a new branch.
    pub fn add_child(
        &mut self,
        parent_id: &str,
        spec: ChartSpec,
        applied_filter_labels: Vec<String>,
        created_at: i64,
    ) -> Result<String, TreeError> {
        if !self.index.contains_key(parent_id) {
            return Err(TreeError::UnknownParent(parent_id.to_string()));
        }
        let label = match applied_filter_labels.last() {
            Some(l) => truncate_label(l),
            None => truncate_label(&format!("{} view", spec.mark.map(|m| m.as_str()).unwrap_or("chart"))),
        };
        let id = format!("n{}", self.next_seq);
        self.next_seq += 1;
        self.nodes.push(ExplorationNode {
            id: id.clone(),
            parent: Some(parent_id.to_string()),
            label,
            applied_filter_labels,
            spec,
            created_at,
        });
        self.active = self.nodes.len() - 1;
        self.index.insert(id.clone(), self.active);
        Ok(id)
    }

    /// Removes the newest node if it is an active leaf, restoring `parent`
    /// as active. Used when the client reports that it could not render the
    /// node's chart.
    pub fn retract_leaf(&mut self, id: &str, restore_active: &str) -> Result<(), TreeError> {
        let &i = self.index.get(id).ok_or_else(|| TreeError::UnknownNode(id.to_string()))?;
        if i == 0 || !self.is_leaf(id) {
            return Err(TreeError::NotALeaf(id.to_string()));
        }
        let &restore = self
            .index
            .get(restore_active)
            .filter(|_| restore_active != id)
            .ok_or_else(|| TreeError::UnknownNode(restore_active.to_string()))?;
        self.nodes.remove(i);
        self.rebuild_index();
        self.active = if restore > i { restore - 1 } else { restore };
        Ok(())
    }

    pub fn breadcrumb(&self) -> Vec<BreadcrumbEntry> {
        self.path_to(self.active)
            .into_iter()
            .map(|i| BreadcrumbEntry {
                id: self.nodes[i].id.clone(),
                label: self.nodes[i].label.clone(),
            })
            .collect()
    }

    fn path_to(&self, mut i: usize) -> Vec<usize> {
        let mut path = vec![i];
        while let Some(p) = &self.nodes[i].parent {
            i = self.index[p.as_str()];
            path.push(i);
        }
        path.reverse();
        path
    }

    pub fn jump_to(&mut self, id: &str) -> Result<&ExplorationNode, TreeError> {
        let &i = self.index.get(id).ok_or_else(|| TreeError::UnknownNode(id.to_string()))?;
        self.active = i;
        Ok(&self.nodes[i])
    }

    /// One descriptor per leaf, in leaf creation order.
    pub fn branches(&self) -> Vec<BranchDescriptor> {
        let mut has_child = vec![false; self.nodes.len()];
        for n in &self.nodes {
            if let Some(p) = &n.parent {
                has_child[self.index[p.as_str()]] = true;
            }
        }
        (0..self.nodes.len())
            .filter(|&i| !has_child[i])
            .map(|i| BranchDescriptor {
                leaf_id: self.nodes[i].id.clone(),
                path_labels: self.path_to(i).into_iter().map(|j| self.nodes[j].label.clone()).collect(),
                display_label: self.nodes[i].label.clone(),
            })
            .collect()
    }

    pub fn switch_branch(&mut self, leaf_id: &str) -> Result<&ExplorationNode, TreeError> {
        if !self.index.contains_key(leaf_id) {
            return Err(TreeError::UnknownNode(leaf_id.to_string()));
        }
        if !self.is_leaf(leaf_id) {
            return Err(TreeError::NotALeaf(leaf_id.to_string()));
        }
        self.jump_to(leaf_id)
    }

    pub fn reset(&mut self) {
        self.nodes.truncate(1);
        self.rebuild_index();
        self.active = 0;
    }

    fn rebuild_index(&mut self) {
        self.index = self.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
    }

    /// Checks single root, parent resolution, acyclicity and the
    /// branch/leaf count identity.
    pub fn check_invariants(&self) -> Result<(), TreeError> {
        let corrupt = |m: String| Err(TreeError::Corrupt(m));
        if self.nodes.is_empty() {
            return corrupt("no nodes".into());
        }
        if self.nodes[0].parent.is_some() {
            return corrupt("first node is not a root".into());
        }
        if self.index.len() != self.nodes.len() {
            return corrupt("duplicate node ids".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if self.index.get(&n.id) != Some(&i) {
                return corrupt(format!("index out of sync at `{}`", n.id));
            }
            match &n.parent {
                None if i != 0 => return corrupt(format!("second root `{}`", n.id)),
                None => {}
                // parents precede children in creation order, so no cycles
                Some(p) => match self.index.get(p) {
                    Some(&pi) if pi < i => {}
                    Some(_) => return corrupt(format!("`{}` precedes its parent", n.id)),
                    None => return corrupt(format!("`{}` has dangling parent `{p}`", n.id)),
                },
            }
        }
        if self.active >= self.nodes.len() {
            return corrupt("active node out of range".into());
        }
        if !self.nodes[0].applied_filter_labels.is_empty() {
            return corrupt("root carries filter labels".into());
        }
        let leaves = (0..self.nodes.len()).filter(|&i| self.is_leaf(&self.nodes[i].id)).count();
        if self.branches().len() != leaves {
            return corrupt("branch count differs from leaf count".into());
        }
        Ok(())
    }
}

impl From<ExplorationTree> for TreeExport {
    fn from(t: ExplorationTree) -> Self {
        TreeExport {
            root_id: t.root_id().to_string(),
            active_id: t.active_id().to_string(),
            next_seq: Some(t.next_seq),
            nodes: t.nodes,
        }
    }
}

impl TryFrom<TreeExport> for ExplorationTree {
    type Error = TreeError;

    fn try_from(e: TreeExport) -> Result<Self, TreeError> {
        if e.nodes.first().map(|n| &n.id) != Some(&e.root_id) {
            return Err(TreeError::Corrupt("root must be the first node".into()));
        }
        let max_seq = e
            .nodes
            .iter()
            .filter_map(|n| n.id.strip_prefix('n').and_then(|s| s.parse::<u64>().ok()))
            .max()
            .unwrap_or(0);
        let mut tree = ExplorationTree {
            nodes: e.nodes,
            index: HashMap::new(),
            active: 0,
            next_seq: e.next_seq.unwrap_or(0).max(max_seq + 1),
        };
        tree.rebuild_index();
        tree.active = *tree
            .index
            .get(&e.active_id)
            .ok_or_else(|| TreeError::Corrupt(format!("active node `{}` missing", e.active_id)))?;
        tree.check_invariants()?;
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chartspec::Mark;

    fn spec() -> ChartSpec {
        ChartSpec::new("d", Mark::Bar)
    }

    fn add(t: &mut ExplorationTree, parent: &str, label: &str) -> String {
        t.add_child(parent, spec(), vec![label.to_string()], 0).unwrap()
    }

    #[test]
    fn init_shape() {
        let t = ExplorationTree::init(spec(), 0).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.branches().len(), 1);
        assert_eq!(t.branches()[0].path_labels, ["root"]);
        assert_eq!(t.breadcrumb().iter().map(|b| b.label.as_str()).collect::<Vec<_>>(), ["root"]);
        assert!(matches!(
            ExplorationTree::init(ChartSpec::default(), 0),
            Err(TreeError::InvalidSpec(_))
        ));
    }

    #[test]
    fn linear_extension_and_fork() {
        let mut t = ExplorationTree::init(spec(), 0).unwrap();
        let a = add(&mut t, "n0", "Region = N");
        assert_eq!(t.branches().len(), 1);
        assert_eq!(t.breadcrumb().len(), 2);
        let before = serde_json::to_string(t.node(&a).unwrap()).unwrap();
        let b = add(&mut t, "n0", "Region = S");
        assert_eq!(t.branches().len(), 2);
        assert_eq!(t.active_id(), b);
        assert_eq!(serde_json::to_string(t.node(&a).unwrap()).unwrap(), before);
    }

    #[test]
    fn fixture_tree_branches() {
        // n0 -> n1 -> n2 -> n3 ; n1 -> n4 -> n5 ; n0 -> n6
        let mut t = ExplorationTree::init(spec(), 0).unwrap();
        let n1 = add(&mut t, "n0", "a");
        let n2 = add(&mut t, &n1, "b");
        add(&mut t, &n2, "c");
        let n4 = add(&mut t, &n1, "d");
        add(&mut t, &n4, "e");
        add(&mut t, "n0", "f");
        assert_eq!(t.len(), 7);
        let branches = t.branches();
        let paths: Vec<Vec<&str>> = branches
            .iter()
            .map(|b| b.path_labels.iter().map(String::as_str).collect())
            .collect();
        assert_eq!(paths, vec![vec!["root", "a", "b", "c"], vec!["root", "a", "d", "e"], vec!["root", "f"]]);
        assert_eq!(branches[1].display_label, "e");
        t.check_invariants().unwrap();
    }

    #[test]
    fn jump_switch_reset() {
        let mut t = ExplorationTree::init(spec(), 0).unwrap();
        let a = add(&mut t, "n0", "a");
        let b = add(&mut t, &a, "b");
        let snapshot = t.clone();
        t.jump_to(&b).unwrap();
        assert_eq!(t, snapshot);
        t.jump_to("n0").unwrap();
        assert_eq!(t.breadcrumb().len(), 1);
        assert_eq!(t.jump_to("zz").unwrap_err(), TreeError::UnknownNode("zz".into()));
        assert_eq!(t.switch_branch(&a).unwrap_err(), TreeError::NotALeaf(a.clone()));
        t.switch_branch(&b).unwrap();
        assert_eq!(t.breadcrumb().last().unwrap().id, b);
        t.reset();
        t.reset();
        assert_eq!(t.len(), 1);
        assert_eq!(t.active_id(), "n0");
        // ids are not reused after reset
        assert_eq!(add(&mut t, "n0", "x"), "n3");
    }

    #[test]
    fn labels_truncate() {
        let mut t = ExplorationTree::init(spec(), 0).unwrap();
        let long = "Occupation in {Accountant, Doctor, Engineer, Lawyer}";
        let id = add(&mut t, "n0", long);
        let label = &t.node(&id).unwrap().label;
        assert_eq!(label.chars().count(), 40);
        assert!(long.starts_with(label.trim_end_matches('…')));
    }

    #[test]
    fn export_round_trip() {
        let mut t = ExplorationTree::init(spec(), 5).unwrap();
        let a = add(&mut t, "n0", "a");
        add(&mut t, &a, "b");
        t.jump_to(&a).unwrap();
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(json["active_id"], "n1");
        assert_eq!(json["nodes"][2]["parent"], "n1");
        let back: ExplorationTree = serde_json::from_value(json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn import_rejects_cycles() {
        let json = serde_json::json!({
            "root_id": "n0", "active_id": "n0",
            "nodes": [
                {"id": "n0", "parent": null, "label": "root", "applied_filter_labels": [], "spec": spec(), "created_at": 0},
                {"id": "n1", "parent": "n2", "label": "a", "applied_filter_labels": [], "spec": spec(), "created_at": 0},
                {"id": "n2", "parent": "n1", "label": "b", "applied_filter_labels": [], "spec": spec(), "created_at": 0}
            ]
        });
        assert!(serde_json::from_value::<ExplorationTree>(json).is_err());
    }

    #[test]
    fn retract_restores_parent() {
        let mut t = ExplorationTree::init(spec(), 0).unwrap();
        let a = add(&mut t, "n0", "a");
        let before = t.clone();
        let b = add(&mut t, &a, "b");
        t.retract_leaf(&b, &a).unwrap();
        assert_eq!(t.nodes(), before.nodes());
        assert_eq!(t.active_id(), a);
        assert!(t.retract_leaf("n0", "n0").is_err());
    }
}
