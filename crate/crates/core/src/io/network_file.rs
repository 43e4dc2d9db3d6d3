//! Network description file (TOML). Heads in Pa, lengths in m, areas in m^2.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::{PipeGeometry, ThermalParameters};
use crate::hydraulics::{DemandPoint, FluidProperties, HydraulicLink, Valve, DEFAULT_CLOSED_AREA};
use crate::network::topology::{
    LinkModelKind, LinkSpec, LinkThermal, NetworkDescription, NodeKind, NodeSpec, SourceMode, DEFAULT_REFERENCE_VELOCITY,
    DEFAULT_ROM_ORDER,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRoot {
    #[serde(default)]
    fluid: FluidProperties,
    #[serde(default)]
    source_mode: FileSourceMode,
    nodes: Vec<FileNode>,
    links: Vec<FileLink>,
    #[serde(default)]
    demands: Vec<FileDemand>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FileSourceMode {
    #[default]
    Head,
    Flow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FileNodeKind {
    Junction,
    FixedHead,
    Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNode {
    id: String,
    kind: FileNodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLink {
    id: String,
    from: String,
    to: String,
    length: f64,
    diameter: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cross_section: Option<f64>,
    points: usize,
    #[serde(default)]
    roughness: f64,
    #[serde(default)]
    minor_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    valve: Option<FileValve>,
    thermal: FileThermal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileValve {
    discharge_coefficient: f64,
    area_open: f64,
    #[serde(default = "closed_area")]
    area_closed: f64,
    #[serde(default = "one")]
    opening: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileThermal {
    lambda: f64,
    diffusion: f64,
    #[serde(default)]
    sensors: Vec<f64>,
    #[serde(default)]
    model: FileModel,
    #[serde(default = "rom_order")]
    rom_order: usize,
    #[serde(default = "reference_velocity")]
    reference_velocity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FileModel {
    Fom,
    #[default]
    Rom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDemand {
    node: String,
    emitter_coefficient: f64,
    area_open: f64,
    #[serde(default = "closed_area")]
    area_closed: f64,
    #[serde(default)]
    opening: f64,
}

fn closed_area() -> f64 {
    DEFAULT_CLOSED_AREA
}
fn one() -> f64 {
    1.0
}
fn rom_order() -> usize {
    DEFAULT_ROM_ORDER
}
fn reference_velocity() -> f64 {
    DEFAULT_REFERENCE_VELOCITY
}

fn parse_error(file: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line: None,
        message: message.into(),
    }
}

/// Parses a network description. `file` only labels diagnostics.
pub fn parse_network(text: &str, file: &str) -> Result<NetworkDescription> {
    let root: FileRoot = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
        Error::Parse {
            file: file.to_string(),
            line,
            message: e.message().to_string(),
        }
    })?;
    from_file(root, file)
}

pub fn read_network(path: &Path) -> Result<NetworkDescription> {
    let text = std::fs::read_to_string(path)?;
    parse_network(&text, &path.display().to_string())
}

fn from_file(root: FileRoot, file: &str) -> Result<NetworkDescription> {
    let nodes = root
        .nodes
        .into_iter()
        .map(|n| {
            let kind = match (n.kind, n.head) {
                (FileNodeKind::FixedHead, Some(h)) => NodeKind::FixedHead(h),
                (FileNodeKind::FixedHead, None) => {
                    return Err(parse_error(file, format!("node '{}': fixed_head needs a head value (Pa)", n.id)));
                }
                (_, Some(_)) => {
                    return Err(parse_error(file, format!("node '{}': only fixed_head nodes take a head value", n.id)));
                }
                (FileNodeKind::Junction, None) => NodeKind::Junction,
                (FileNodeKind::Source, None) => NodeKind::Source,
            };
            Ok(NodeSpec { id: n.id, kind })
        })
        .collect::<Result<Vec<_>>>()?;

    let links = root
        .links
        .into_iter()
        .map(|l| {
            let ctx = |e: Error| parse_error(file, format!("link '{}': {e}", l.id));
            let geometry = match l.cross_section {
                Some(a) => PipeGeometry::new(l.length, l.diameter, a, l.points),
                None => PipeGeometry::circular(l.length, l.diameter, l.points),
            }
            .map_err(ctx)?;
            let params = ThermalParameters::new(l.thermal.lambda, l.thermal.diffusion).map_err(ctx)?;
            if l.thermal.rom_order == 0 {
                return Err(parse_error(file, format!("link '{}': rom_order must be at least 1", l.id)));
            }
            Ok(LinkSpec {
                hydraulic: HydraulicLink {
                    geometry,
                    roughness: l.roughness,
                    minor_loss: l.minor_loss,
                    valve: l.valve.map(|v| Valve {
                        discharge_coefficient: v.discharge_coefficient,
                        area_open: v.area_open,
                        area_closed: v.area_closed,
                        opening: v.opening,
                    }),
                },
                thermal: LinkThermal {
                    params,
                    sensors: l.thermal.sensors,
                    model: match l.thermal.model {
                        FileModel::Fom => LinkModelKind::Fom,
                        FileModel::Rom => LinkModelKind::Rom,
                    },
                    rom_order: l.thermal.rom_order,
                    reference_velocity: l.thermal.reference_velocity,
                },
                id: l.id,
                from: l.from,
                to: l.to,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let demands = root
        .demands
        .into_iter()
        .map(|d| DemandPoint {
            node: d.node,
            emitter_coefficient: d.emitter_coefficient,
            area_open: d.area_open,
            area_closed: d.area_closed,
            opening: d.opening,
        })
        .collect();

    Ok(NetworkDescription {
        fluid: root.fluid,
        nodes,
        links,
        demands,
        source_mode: match root.source_mode {
            FileSourceMode::Head => SourceMode::Head,
            FileSourceMode::Flow => SourceMode::Flow,
        },
    })
}

pub fn serialize_network(desc: &NetworkDescription) -> Result<String> {
    let root = FileRoot {
        fluid: desc.fluid,
        source_mode: match desc.source_mode {
            SourceMode::Head => FileSourceMode::Head,
            SourceMode::Flow => FileSourceMode::Flow,
        },
        nodes: desc
            .nodes
            .iter()
            .map(|n| {
                let (kind, head) = match n.kind {
                    NodeKind::Junction => (FileNodeKind::Junction, None),
                    NodeKind::FixedHead(h) => (FileNodeKind::FixedHead, Some(h)),
                    NodeKind::Source => (FileNodeKind::Source, None),
                };
                FileNode {
                    id: n.id.clone(),
                    kind,
                    head,
                }
            })
            .collect(),
        links: desc
            .links
            .iter()
            .map(|l| {
                let g = &l.hydraulic.geometry;
                FileLink {
                    id: l.id.clone(),
                    from: l.from.clone(),
                    to: l.to.clone(),
                    length: g.grid.length,
                    diameter: g.inner_diameter,
                    cross_section: Some(g.cross_section),
                    points: g.grid.points,
                    roughness: l.hydraulic.roughness,
                    minor_loss: l.hydraulic.minor_loss,
                    valve: l.hydraulic.valve.map(|v| FileValve {
                        discharge_coefficient: v.discharge_coefficient,
                        area_open: v.area_open,
                        area_closed: v.area_closed,
                        opening: v.opening,
                    }),
                    thermal: FileThermal {
                        lambda: l.thermal.params.lambda,
                        diffusion: l.thermal.params.diffusion,
                        sensors: l.thermal.sensors.clone(),
                        model: match l.thermal.model {
                            LinkModelKind::Fom => FileModel::Fom,
                            LinkModelKind::Rom => FileModel::Rom,
                        },
                        rom_order: l.thermal.rom_order,
                        reference_velocity: l.thermal.reference_velocity,
                    },
                }
            })
            .collect(),
        demands: desc
            .demands
            .iter()
            .map(|d| FileDemand {
                node: d.node.clone(),
                emitter_coefficient: d.emitter_coefficient,
                area_open: d.area_open,
                area_closed: d.area_closed,
                opening: d.opening,
            })
            .collect(),
    };
    toml::to_string(&root).map_err(|e| Error::Config(format!("cannot serialize network: {e}")))
}
