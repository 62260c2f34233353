use serde::{Deserialize, Serialize};

use super::params::{GlobalParams, IntrinsicParams};
use crate::geom::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    DivisionSuccess,
    DivisionFailure,
    NaturalDeath,
}

impl EventKind {
    pub fn code(self) -> u8 {
        match self {
            EventKind::DivisionSuccess => 0,
            EventKind::DivisionFailure => 1,
            EventKind::NaturalDeath => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(EventKind::DivisionSuccess),
            1 => Some(EventKind::DivisionFailure),
            2 => Some(EventKind::NaturalDeath),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: u64,
    pub position: Vec3,
    pub mutation_id: u64,
    pub birth_time: f64,
    pub parent: Option<u64>,
}

/// One clone (subclone) of the lineage. Cells sharing a `mutation_id` share
/// intrinsic parameters, so parameters live here rather than on each cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloneRecord {
    pub id: u64,
    pub parent: Option<u64>,
    pub params: IntrinsicParams,
    pub origin_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub cell_id: u64,
    pub position: Vec3,
    pub mutation_id: u64,
    pub density: f64,
    pub daughters: Option<[u64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BirthLimit,
    TimeLimit,
    Extinct,
    /// Cells remain but every total event rate is zero.
    Stalled,
}

/// How a cell's life ended, indexed by cell id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fate {
    /// `f64::INFINITY` while the cell is still alive at the end of the run.
    pub end_time: f64,
    pub kind: Option<EventKind>,
    pub event: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TumorHistory {
    pub params: GlobalParams,
    pub intrinsics0: IntrinsicParams,
    pub n0: u32,
    pub events: Vec<EventRecord>,
    /// Ids are dense: `cells[i].id == i`.
    pub cells: Vec<Cell>,
    /// Ids are dense: `clones[i].id == i`; clone 0 is the root.
    pub clones: Vec<CloneRecord>,
    pub end_time: f64,
    pub termination: Termination,
    pub births: u64,
}

impl TumorHistory {
    pub fn extinct(&self) -> bool {
        self.termination == Termination::Extinct
    }

    pub fn params_of(&self, cell: &Cell) -> &IntrinsicParams {
        &self.clones[cell.mutation_id as usize].params
    }

    pub fn fates(&self) -> Vec<Fate> {
        let mut out =
            vec![Fate { end_time: f64::INFINITY, kind: None, event: None }; self.cells.len()];
        for (i, e) in self.events.iter().enumerate() {
            out[e.cell_id as usize] = Fate { end_time: e.time, kind: Some(e.kind), event: Some(i) };
        }
        out
    }

    pub fn living_at_end(&self) -> usize {
        self.fates().iter().filter(|f| f.end_time.is_infinite()).count()
    }

    /// Chain of clone ids from `mutation_id` up to the root.
    pub fn lineage(&self, mutation_id: u64) -> Vec<u64> {
        let mut chain = vec![mutation_id];
        let mut cur = mutation_id;
        while let Some(p) = self.clones.get(cur as usize).and_then(|c| c.parent) {
            chain.push(p);
            cur = p;
        }
        chain
    }
}
