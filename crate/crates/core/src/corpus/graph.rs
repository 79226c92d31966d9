use std::collections::HashMap;

use crate::error::{Error, Result};

/// Number of label slots: one root, seven organs, nineteen findings.
pub const NODE_COUNT: usize = 27;

const DEFAULT_GRAPH: &str = include_str!("../../data/knowledge_graph.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Root,
    Organ,
    Finding,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

/// The fixed node list in canonical (file) order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    organ_of: HashMap<usize, usize>,
}

/// The checked-in 27-node graph.
pub fn build_node_vocabulary() -> KnowledgeGraph {
    KnowledgeGraph::parse(DEFAULT_GRAPH).expect("bundled knowledge graph is valid")
}

impl KnowledgeGraph {
    /// Parses the tab-separated graph format: the first bare name is the root,
    /// later bare names are organs, `finding<TAB>organ` rows are findings.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut nodes: Vec<Node> = Vec::new();
        let mut organ_of = HashMap::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| Error::Parse {
                what: "knowledge graph",
                location: format!("line {}", ln + 1),
                detail,
            };
            let (name, parent) = match line.split_once('\t') {
                Some((n, p)) => (n.trim(), Some(p.trim())),
                None => (line.trim(), None),
            };
            let name = normalize_name(name);
            if name.is_empty() {
                return Err(bad("empty node name".into()));
            }
            if index.contains_key(&name) {
                return Err(bad(format!("duplicate node {name}")));
            }
            let kind = match parent {
                Some(organ) => {
                    let organ = normalize_name(organ);
                    let &oid = index
                        .get(&organ)
                        .ok_or_else(|| bad(format!("unknown organ {organ}")))?;
                    if nodes[oid].kind != NodeKind::Organ {
                        return Err(bad(format!("{organ} is not an organ")));
                    }
                    organ_of.insert(nodes.len(), oid);
                    NodeKind::Finding
                }
                None if nodes.is_empty() => NodeKind::Root,
                None => {
                    if nodes.iter().any(|n| n.kind == NodeKind::Finding) {
                        return Err(bad("organs must precede findings".into()));
                    }
                    NodeKind::Organ
                }
            };
            index.insert(name.clone(), nodes.len());
            nodes.push(Node { name, kind });
        }
        if nodes.len() != NODE_COUNT {
            return Err(Error::config(format!(
                "knowledge graph needs exactly {NODE_COUNT} nodes, found {}",
                nodes.len()
            )));
        }
        Ok(KnowledgeGraph { nodes, organ_of })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            out.push_str(&n.name);
            if let Some(&o) = self.organ_of.get(&i) {
                out.push('\t');
                out.push_str(&self.nodes[o].name);
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn name(&self, i: usize) -> &str {
        &self.nodes[i].name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn organs(&self) -> Vec<usize> {
        self.indices_of(NodeKind::Organ)
    }

    /// Findings in file order, which is also descending corpus prevalence.
    pub fn findings(&self) -> Vec<usize> {
        self.indices_of(NodeKind::Finding)
    }

    pub fn organ_of(&self, finding: usize) -> Option<usize> {
        self.organ_of.get(&finding).copied()
    }

    /// Findings attached to `organ`, in file order.
    pub fn findings_of(&self, organ: usize) -> Vec<usize> {
        self.findings()
            .into_iter()
            .filter(|f| self.organ_of(*f) == Some(organ))
            .collect()
    }

    fn indices_of(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].kind == kind)
            .collect()
    }
}

fn normalize_name(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}
