//! Wire messages for the console backend. The server only moves these
//! across HTTP and the WebSocket; applying them happens here so they can be
//! tested without a network.

use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::graph::ExperienceId;

use super::engine::{Engine, EngineError, MissionView, Snapshot, TeachSummary};
use super::telemetry::EventRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientBody {
    pub client: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeleopBody {
    pub client: String,
    pub v: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeachStartBody {
    pub client: String,
    #[serde(default)]
    pub from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeachStopBody {
    pub client: String,
    #[serde(default)]
    pub to: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionBody {
    pub targets: Vec<String>,
    #[serde(default)]
    pub id: Option<String>,
}

/// Manual initialisation: a place code or a map position, plus the
/// operator's rough heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocaliseBody {
    #[serde(default)]
    pub node: Option<String>,
    #[serde(default)]
    pub position: Option<Point2>,
    #[serde(default)]
    pub heading: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapNode {
    pub code: String,
    pub position: Point2,
    pub plot: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEdge {
    pub key: String,
    pub a: String,
    pub b: String,
    pub length: f64,
    pub experience: Option<ExperienceId>,
    pub points: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapView {
    pub dock_node: String,
    pub nodes: Vec<MapNode>,
    /// Supergraph edges; `points` is the taught track in site coordinates.
    pub edges: Vec<MapEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Status,
    Map,
    Acquire(ClientBody),
    Release(ClientBody),
    Teleop(TeleopBody),
    TeachStart(TeachStartBody),
    TeachStop(TeachStopBody),
    Preview(MissionBody),
    Dispatch(MissionBody),
    Abort,
    Localise(LocaliseBody),
    Dock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Snapshot(Box<Snapshot>),
    Map(MapView),
    Lease { holder: Option<String> },
    Teach { summary: Option<TeachSummary> },
    Mission(MissionView),
    Ok { ok: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    /// HTTP status the server answers with.
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder: Option<String>,
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let (status, code, holder) = match &e {
            EngineError::DriveConflict { holder } => (409, "drive_conflict", Some(holder.clone())),
            EngineError::NotHolder(_) => (403, "not_holder", None),
            EngineError::Busy { .. } => (409, "busy", None),
            EngineError::UnknownNode(_) => (404, "unknown_node", None),
            EngineError::Untaught(_) | EngineError::Tour(_) => (422, "unreachable", None),
            EngineError::Invalid(_) => (400, "invalid", None),
            _ => (500, "internal", None),
        };
        Self {
            status,
            code: code.into(),
            message: e.to_string(),
            holder,
        }
    }
}

/// Frames on the telemetry WebSocket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamMessage {
    Snapshot(Box<Snapshot>),
    Event(EventRecord),
}

pub fn map_view(engine: &Engine) -> MapView {
    let sg = engine.supergraph();
    let nodes = sg
        .nodes
        .values()
        .map(|n| MapNode {
            code: n.name.clone(),
            position: n.position,
            plot: n.plot,
        })
        .collect();
    let edges = sg
        .edges
        .iter()
        .map(|e| {
            let active = e.active();
            let points = active
                .and_then(|r| {
                    let exp = engine.graph().experience(r.experience)?;
                    let chain = engine.graph().chain_poses(r.experience).ok()?;
                    Some(chain.iter().map(|p| exp.origin.compose(p).translation()).collect())
                })
                .unwrap_or_default();
            MapEdge {
                key: e.key(),
                a: e.a.clone(),
                b: e.b.clone(),
                length: e.length,
                experience: active.map(|r| r.experience),
                points,
            }
        })
        .collect();
    MapView {
        dock_node: sg.dock_node.clone(),
        nodes,
        edges,
    }
}

/// Apply one request to the engine.
pub fn apply(engine: &mut Engine, request: Request) -> Result<Response, ApiError> {
    let ok = Response::Ok { ok: true };
    Ok(match request {
        Request::Status => Response::Snapshot(Box::new(engine.snapshot())),
        Request::Map => Response::Map(map_view(engine)),
        Request::Acquire(b) => {
            engine.acquire_drive(&b.client)?;
            Response::Lease {
                holder: engine.drive_holder().map(String::from),
            }
        }
        Request::Release(b) => {
            engine.release_drive(&b.client)?;
            Response::Lease { holder: None }
        }
        Request::Teleop(b) => {
            engine.teleop(&b.client, b.v, b.w)?;
            ok
        }
        Request::TeachStart(b) => {
            engine.start_teach(&b.client, b.from)?;
            ok
        }
        Request::TeachStop(b) => Response::Teach {
            summary: engine.stop_teach(&b.client, b.to)?,
        },
        Request::Preview(b) => Response::Mission(engine.preview(&b.targets)?),
        Request::Dispatch(b) => Response::Mission(engine.dispatch(&b.targets, b.id)?),
        Request::Abort => {
            engine.abort_mission()?;
            ok
        }
        Request::Localise(b) => {
            engine.initialise(b.node.as_deref(), b.position, b.heading)?;
            ok
        }
        Request::Dock => {
            engine.start_docking()?;
            ok
        }
    })
}
