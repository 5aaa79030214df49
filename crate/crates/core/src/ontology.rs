//! Five-layer concept ontology: root, category, subcategory, event, concept.
//!
//! The upper three layers come from a hierarchy document; concept leaves are
//! attached under events once concepts have been discovered and verified.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Root,
    Category,
    Subcategory,
    Event,
    Concept,
}

impl Layer {
    pub fn depth(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Root => "root",
            Layer::Category => "category",
            Layer::Subcategory => "subcategory",
            Layer::Event => "event",
            Layer::Concept => "concept",
        }
    }

    fn child(self) -> Option<Layer> {
        match self {
            Layer::Root => Some(Layer::Category),
            Layer::Category => Some(Layer::Subcategory),
            Layer::Subcategory => Some(Layer::Event),
            Layer::Event => Some(Layer::Concept),
            Layer::Concept => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyNode {
    pub id: NodeId,
    pub name: String,
    pub layer: Layer,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Only meaningful at the event layer.
    #[serde(default)]
    pub visually_detectable: bool,
    /// Only meaningful at the event layer; used as corpus query keys.
    #[serde(default)]
    pub article_names: Vec<String>,
}

/// Three-layer hierarchy document: categories, subcategories, events.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyDocument {
    pub categories: Vec<CategoryEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryEntry {
    pub name: String,
    pub subcategories: Vec<SubcategoryEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubcategoryEntry {
    pub name: String,
    pub events: Vec<EventEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub name: String,
    pub visually_detectable: bool,
    pub article_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerCounts {
    pub categories: usize,
    pub subcategories: usize,
    pub events: usize,
    pub concepts: usize,
}

/// Ancestor chain of a concept leaf, nearest first.
#[derive(Debug, Clone, Copy)]
pub struct Ancestors<'a> {
    pub event: &'a OntologyNode,
    pub subcategory: &'a OntologyNode,
    pub category: &'a OntologyNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptBankTree {
    root_id: NodeId,
    nodes: Vec<OntologyNode>,
}

impl ConceptBankTree {
    /// Parses a hierarchy document (UTF-8 JSON) and builds layers 0 to 3.
    pub fn load_hierarchy(source: &str) -> Result<Self> {
        let doc: HierarchyDocument =
            serde_json::from_str(source).map_err(|e| Error::Malformed(e.to_string()))?;
        Self::from_hierarchy(&doc)
    }

    pub fn from_hierarchy(doc: &HierarchyDocument) -> Result<Self> {
        let mut tree = ConceptBankTree {
            root_id: NodeId(0),
            nodes: vec![OntologyNode {
                id: NodeId(0),
                name: "root".to_string(),
                layer: Layer::Root,
                parent: None,
                children: Vec::new(),
                visually_detectable: false,
                article_names: Vec::new(),
            }],
        };
        let mut category_names = HashSet::new();
        let mut event_names = HashSet::new();
        for category in &doc.categories {
            check_name(&category.name)?;
            if !category_names.insert(category.name.as_str()) {
                return Err(Error::DuplicateNode(format!("category `{}`", category.name)));
            }
            let cat_id = tree.push_child(tree.root_id, &category.name, Layer::Category);
            let mut sub_names = HashSet::new();
            for sub in &category.subcategories {
                check_name(&sub.name)?;
                if !sub_names.insert(sub.name.as_str()) {
                    return Err(Error::DuplicateNode(format!(
                        "subcategory `{}` under `{}`",
                        sub.name, category.name
                    )));
                }
                let sub_id = tree.push_child(cat_id, &sub.name, Layer::Subcategory);
                for event in &sub.events {
                    check_name(&event.name)?;
                    if !event_names.insert(event.name.as_str()) {
                        return Err(Error::DuplicateNode(format!("event `{}`", event.name)));
                    }
                    if event.article_names.is_empty() {
                        return Err(Error::Malformed(format!(
                            "event `{}` has no article names",
                            event.name
                        )));
                    }
                    let ev_id = tree.push_child(sub_id, &event.name, Layer::Event);
                    let node = &mut tree.nodes[ev_id.0 as usize];
                    node.visually_detectable = event.visually_detectable;
                    node.article_names = event.article_names.clone();
                }
            }
        }
        Ok(tree)
    }

    /// Rebuilds a tree from an explicit node list, validating every invariant.
    pub fn from_nodes(root_id: NodeId, mut nodes: Vec<OntologyNode>) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        for (index, node) in nodes.iter().enumerate() {
            if node.id.0 as usize != index {
                return Err(if index > 0 && nodes[index - 1].id == node.id {
                    Error::DuplicateNode(format!("id {}", node.id))
                } else {
                    Error::Malformed(format!("node ids are not contiguous at {}", node.id))
                });
            }
        }
        let tree = ConceptBankTree { root_id, nodes };
        tree.validate()?;
        Ok(tree)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(source: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            root_id: NodeId,
            nodes: Vec<OntologyNode>,
        }
        let raw: Raw = serde_json::from_str(source).map_err(|e| Error::Malformed(e.to_string()))?;
        Self::from_nodes(raw.root_id, raw.nodes)
    }

    fn validate(&self) -> Result<()> {
        let root = self
            .nodes
            .get(self.root_id.0 as usize)
            .ok_or_else(|| Error::NodeNotFound(self.root_id.to_string()))?;
        if root.layer != Layer::Root || root.parent.is_some() {
            return Err(Error::LayerViolation("root must be a parentless root-layer node".into()));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root_id];
        seen[self.root_id.0 as usize] = true;
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id.0 as usize];
            for &child in &node.children {
                let c = self
                    .nodes
                    .get(child.0 as usize)
                    .ok_or_else(|| Error::NodeNotFound(child.to_string()))?;
                if Some(c.layer) != node.layer.child() {
                    return Err(Error::LayerViolation(format!(
                        "{} `{}` ({}) under {} `{}`",
                        c.layer.name(),
                        c.name,
                        c.id,
                        node.layer.name(),
                        node.name
                    )));
                }
                if c.parent != Some(id) {
                    return Err(Error::Malformed(format!("{} has inconsistent parent", c.id)));
                }
                if std::mem::replace(&mut seen[child.0 as usize], true) {
                    return Err(Error::Malformed(format!("{} reachable twice", c.id)));
                }
                stack.push(child);
            }
        }
        if let Some(pos) = seen.iter().position(|s| !s) {
            return Err(Error::Malformed(format!("node #{pos} unreachable from root")));
        }
        Ok(())
    }

    fn push_child(&mut self, parent: NodeId, name: &str, layer: Layer) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(OntologyNode {
            id,
            name: name.to_string(),
            layer,
            parent: Some(parent),
            children: Vec::new(),
            visually_detectable: false,
            article_names: Vec::new(),
        });
        self.nodes[parent.0 as usize].children.push(id);
        id
    }

    pub fn root_id(&self) -> NodeId {
        self.root_id
    }

    pub fn node(&self, id: NodeId) -> Result<&OntologyNode> {
        self.nodes
            .get(id.0 as usize)
            .ok_or_else(|| Error::NodeNotFound(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[OntologyNode] {
        &self.nodes
    }

    /// Depth-first traversal in stored child order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root_id];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id.0 as usize].children.iter().rev());
        }
        out
    }

    pub fn layer_nodes(&self, layer: Layer) -> Vec<&OntologyNode> {
        self.preorder()
            .into_iter()
            .map(|id| &self.nodes[id.0 as usize])
            .filter(|n| n.layer == layer)
            .collect()
    }

    pub fn events(&self) -> Vec<&OntologyNode> {
        self.layer_nodes(Layer::Event)
    }

    /// Events flagged visually detectable, in tree order.
    pub fn discovery_events(&self) -> Vec<&OntologyNode> {
        self.events()
            .into_iter()
            .filter(|n| n.visually_detectable)
            .collect()
    }

    pub fn concepts(&self) -> Vec<&OntologyNode> {
        self.layer_nodes(Layer::Concept)
    }

    pub fn layer_counts(&self) -> LayerCounts {
        let mut counts = LayerCounts::default();
        for node in &self.nodes {
            match node.layer {
                Layer::Root => {}
                Layer::Category => counts.categories += 1,
                Layer::Subcategory => counts.subcategories += 1,
                Layer::Event => counts.events += 1,
                Layer::Concept => counts.concepts += 1,
            }
        }
        counts
    }

    pub fn event_by_name(&self, name: &str) -> Option<&OntologyNode> {
        self.nodes
            .iter()
            .find(|n| n.layer == Layer::Event && n.name == name)
    }

    /// Event, subcategory and category above a concept leaf.
    pub fn ancestors(&self, concept_id: NodeId) -> Result<Ancestors<'_>> {
        let node = self.node(concept_id)?;
        if node.layer != Layer::Concept {
            return Err(Error::WrongLayer {
                id: concept_id.to_string(),
                expected: "concept",
            });
        }
        let parent_of = |n: &OntologyNode| -> Result<&OntologyNode> {
            self.node(n.parent.ok_or_else(|| Error::Malformed(format!("{} has no parent", n.id)))?)
        };
        let event = parent_of(node)?;
        let subcategory = parent_of(event)?;
        let category = parent_of(subcategory)?;
        Ok(Ancestors {
            event,
            subcategory,
            category,
        })
    }

    /// Attaches concept leaves under an event, returning the leaf id for
    /// every requested name. Names already present under the event reuse the
    /// existing leaf.
    pub fn attach_concepts<S: AsRef<str>>(
        &mut self,
        event_id: NodeId,
        concepts: &[S],
    ) -> Result<Vec<NodeId>> {
        let event = self.node(event_id)?;
        if event.layer != Layer::Event {
            return Err(Error::WrongLayer {
                id: event_id.to_string(),
                expected: "event",
            });
        }
        if !event.visually_detectable {
            return Err(Error::ExcludedEvent(event.name.clone()));
        }
        let mut existing: BTreeMap<String, NodeId> = event
            .children
            .iter()
            .map(|&c| (self.nodes[c.0 as usize].name.clone(), c))
            .collect();
        let mut ids = Vec::with_capacity(concepts.len());
        for name in concepts {
            let name = name.as_ref();
            check_name(name)?;
            let id = match existing.get(name) {
                Some(&id) => id,
                None => {
                    let id = self.push_child(event_id, name, Layer::Concept);
                    existing.insert(name.to_string(), id);
                    id
                }
            };
            ids.push(id);
        }
        Ok(ids)
    }

    /// `event name / concept name`, unique across the tree.
    pub fn concept_key(&self, concept_id: NodeId) -> Result<String> {
        let anc = self.ancestors(concept_id)?;
        Ok(format!("{}/{}", anc.event.name, self.node(concept_id)?.name))
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.trim().is_empty() {
        return Err(Error::Malformed("empty node name".into()));
    }
    Ok(())
}
