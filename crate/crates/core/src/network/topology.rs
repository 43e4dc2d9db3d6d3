//! Directed graph of a network and its signed incidence blocks.

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::ThermalParameters;
use crate::hydraulics::{DemandPoint, FluidProperties, HydraulicLink};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    /// Unknown head, solved for.
    Junction,
    /// Head held at a fixed value (Pa).
    FixedHead(f64),
    /// Network feed. Its head (or injected flow, see [`SourceMode`]) and its
    /// temperature come from the scenario.
    Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
}

/// How the feed is imposed at the source node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SourceMode {
    #[default]
    Head,
    Flow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LinkModelKind {
    Fom,
    #[default]
    Rom,
}

pub const DEFAULT_ROM_ORDER: usize = 7;
pub const DEFAULT_REFERENCE_VELOCITY: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkThermal {
    pub params: ThermalParameters,
    /// Axial sensor positions (m); the outlet is always measured.
    pub sensors: Vec<f64>,
    pub model: LinkModelKind,
    pub rom_order: usize,
    /// Velocity the reduced model is built around (m/s).
    pub reference_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub hydraulic: HydraulicLink,
    pub thermal: LinkThermal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDescription {
    pub fluid: FluidProperties,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub demands: Vec<DemandPoint>,
    pub source_mode: SourceMode,
}

/// Where a node's head lives: in the known vector `h_0` or the unknown `h_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSlot {
    Known(usize),
    Unknown(usize),
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub description: NetworkDescription,
    pub node_index: HashMap<String, usize>,
    /// Node indices of known-head nodes, in declaration order.
    pub known: Vec<usize>,
    /// Node indices of unknown-head nodes, in declaration order.
    pub unknown: Vec<usize>,
    pub slot: Vec<HeadSlot>,
    /// `(from, to)` node indices per link.
    pub link_ends: Vec<(usize, usize)>,
    /// Signed incidence, `n_p x (n_0 + n_n)`, known columns first:
    /// `+1` at the upstream node, `-1` at the downstream node.
    pub incidence: DMatrix<f64>,
    pub a_pn: DMatrix<f64>,
    pub a_p0: DMatrix<f64>,
    /// Demand index per unknown-head node.
    pub demand_at: Vec<Option<usize>>,
    pub source: Option<usize>,
}

impl NetworkModel {
    pub fn n_links(&self) -> usize {
        self.description.links.len()
    }

    pub fn n_known(&self) -> usize {
        self.known.len()
    }

    pub fn n_unknown(&self) -> usize {
        self.unknown.len()
    }

    pub fn link_id(&self, i: usize) -> &str {
        &self.description.links[i].id
    }

    pub fn node_id(&self, j: usize) -> &str {
        &self.description.nodes[j].id
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.description.links.iter().position(|l| l.id == id)
    }

    /// Flow injected at a source running in [`SourceMode::Flow`].
    pub fn injects_flow(&self) -> bool {
        self.source.is_some() && self.description.source_mode == SourceMode::Flow
    }
}

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub fn build_topology(description: &NetworkDescription) -> Result<NetworkModel> {
    let desc = description;
    desc.fluid.validate()?;
    if desc.links.is_empty() {
        return Err(config("network has no links"));
    }

    let mut node_index = HashMap::new();
    for (j, n) in desc.nodes.iter().enumerate() {
        if node_index.insert(n.id.clone(), j).is_some() {
            return Err(config(format!("duplicate node id '{}'", n.id)));
        }
        if let NodeKind::FixedHead(h) = n.kind {
            if !h.is_finite() {
                return Err(config(format!("node '{}': fixed head must be finite", n.id)));
            }
        }
    }
    let mut link_ids = HashSet::new();
    for l in &desc.links {
        if !link_ids.insert(l.id.as_str()) {
            return Err(config(format!("duplicate link id '{}'", l.id)));
        }
    }

    let sources: Vec<usize> = desc
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == NodeKind::Source)
        .map(|(j, _)| j)
        .collect();
    if sources.len() > 1 {
        return Err(config(format!("{} source nodes declared, at most one is supported", sources.len())));
    }
    let source = sources.first().copied();

    let is_known = |n: &NodeSpec| match n.kind {
        NodeKind::Junction => false,
        NodeKind::FixedHead(_) => true,
        NodeKind::Source => desc.source_mode == SourceMode::Head,
    };
    let known: Vec<usize> = (0..desc.nodes.len()).filter(|&j| is_known(&desc.nodes[j])).collect();
    let unknown: Vec<usize> = (0..desc.nodes.len()).filter(|&j| !is_known(&desc.nodes[j])).collect();
    if known.is_empty() {
        return Err(config("at least one node with a known head is required"));
    }
    let mut slot = vec![HeadSlot::Known(0); desc.nodes.len()];
    for (k, &j) in known.iter().enumerate() {
        slot[j] = HeadSlot::Known(k);
    }
    for (k, &j) in unknown.iter().enumerate() {
        slot[j] = HeadSlot::Unknown(k);
    }

    let mut link_ends = Vec::with_capacity(desc.links.len());
    for l in &desc.links {
        let lookup = |id: &str| {
            node_index
                .get(id)
                .copied()
                .ok_or_else(|| config(format!("link '{}' references undeclared node '{id}'", l.id)))
        };
        let (from, to) = (lookup(&l.from)?, lookup(&l.to)?);
        if from == to {
            return Err(config(format!("link '{}' starts and ends at node '{}'", l.id, l.from)));
        }
        l.hydraulic
            .validate()
            .and_then(|_| l.thermal.params.validate())
            .map_err(|e| config(format!("link '{}': {e}", l.id)))?;
        link_ends.push((from, to));
    }

    let mut demand_at = vec![None; unknown.len()];
    for (d, dem) in desc.demands.iter().enumerate() {
        dem.validate().map_err(|e| config(format!("demand at '{}': {e}", dem.node)))?;
        let j = *node_index
            .get(&dem.node)
            .ok_or_else(|| config(format!("demand references undeclared node '{}'", dem.node)))?;
        match slot[j] {
            HeadSlot::Known(_) => {
                return Err(config(format!("demand at node '{}', which has a known head", dem.node)));
            }
            HeadSlot::Unknown(k) => {
                if demand_at[k].replace(d).is_some() {
                    return Err(config(format!("more than one demand at node '{}'", dem.node)));
                }
            }
        }
    }

    check_connected(desc, &link_ends)?;

    let n_p = desc.links.len();
    let (n_0, n_n) = (known.len(), unknown.len());
    let mut incidence = DMatrix::zeros(n_p, n_0 + n_n);
    let col = |j: usize| match slot[j] {
        HeadSlot::Known(k) => k,
        HeadSlot::Unknown(k) => n_0 + k,
    };
    for (i, &(from, to)) in link_ends.iter().enumerate() {
        incidence[(i, col(from))] = 1.0;
        incidence[(i, col(to))] = -1.0;
    }
    let a_p0 = incidence.columns(0, n_0).into_owned();
    let a_pn = incidence.columns(n_0, n_n).into_owned();

    Ok(NetworkModel {
        description: desc.clone(),
        node_index,
        known,
        unknown,
        slot,
        link_ends,
        incidence,
        a_pn,
        a_p0,
        demand_at,
        source,
    })
}

fn check_connected(desc: &NetworkDescription, ends: &[(usize, usize)]) -> Result<()> {
    let n = desc.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in ends {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(j) = queue.pop_front() {
        for &k in &adj[j] {
            if !seen[k] {
                seen[k] = true;
                queue.push_back(k);
            }
        }
    }
    let cut: Vec<&str> = (0..n).filter(|&j| !seen[j]).map(|j| desc.nodes[j].id.as_str()).collect();
    if !cut.is_empty() {
        return Err(config(format!(
            "network graph is disconnected: nodes [{}] are not reachable from '{}'",
            cut.join(", "),
            desc.nodes[0].id
        )));
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn single_pipe_blocks() {
        let m = build_topology(&single_pipe()).unwrap();
        assert_eq!(m.incidence, DMatrix::from_row_slice(1, 2, &[1.0, -1.0]));
        assert_eq!(m.a_p0, DMatrix::from_row_slice(1, 1, &[1.0]));
        assert_eq!(m.a_pn, DMatrix::from_row_slice(1, 1, &[-1.0]));
    }

    #[test]
    fn incidence_rows_have_one_of_each_sign() {
        let mut d = single_pipe();
        d.nodes.push(node("B", NodeKind::Junction));
        d.nodes.push(node("O", NodeKind::FixedHead(1e5)));
        d.links.push(pipe("q", "A", "B", 5.0, 0.02));
        d.links.push(pipe("r", "A", "O", 5.0, 0.02));
        d.links.push(pipe("s", "B", "O", 5.0, 0.02));
        let m = build_topology(&d).unwrap();
        for row in m.incidence.row_iter() {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == -1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), row.len() - 2);
        }
    }

    #[test]
    fn rejects_duplicates_and_dangling_references() {
        let mut d = single_pipe();
        d.nodes.push(node("A", NodeKind::Junction));
        assert!(matches!(build_topology(&d), Err(Error::Config(m)) if m.contains("duplicate node")));

        let mut d = single_pipe();
        d.links.push(pipe("p", "A", "S", 1.0, 0.02));
        assert!(matches!(build_topology(&d), Err(Error::Config(m)) if m.contains("duplicate link")));

        let mut d = single_pipe();
        d.links[0].to = "X".into();
        assert!(matches!(build_topology(&d), Err(Error::Config(m)) if m.contains("'X'")));
    }

    #[test]
    fn requires_known_head() {
        let mut d = single_pipe();
        d.nodes[0].kind = NodeKind::Junction;
        assert!(matches!(build_topology(&d), Err(Error::Config(m)) if m.contains("known head")));
        // a flow-fed source alone leaves no reference head either
        let mut d = single_pipe();
        d.source_mode = SourceMode::Flow;
        assert!(build_topology(&d).is_err());
    }

    #[test]
    fn rejects_disconnected_graph() {
        let mut d = single_pipe();
        d.nodes.push(node("X", NodeKind::FixedHead(0.0)));
        d.nodes.push(node("Y", NodeKind::Junction));
        d.links.push(pipe("xy", "X", "Y", 1.0, 0.02));
        let err = build_topology(&d).unwrap_err().to_string();
        assert!(err.contains("disconnected") && err.contains("X") && err.contains("Y"), "{err}");
    }
}
