//! Slab cuts through a recorded tumor history and spherical patch sampling.
//!
//! A cut keeps every cell that is alive at some instant of the time window
//! and lies inside the slab. Cells are identified by position: a dividing
//! parent and the daughter created at its exact location form one site, so
//! the parent's division shows up as a birth flag on the continuing site
//! rather than as a separate dead node.

use rand::Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist2, Vec3};
use crate::sim::{kernel_rho, EventKind, Fate, SpatialIndex, Termination, TumorHistory};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    #[default]
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutSpec {
    pub z_ref: f64,
    pub thickness: f64,
    pub t_ref: f64,
    pub window: f64,
    #[serde(default)]
    pub axis: Axis,
}

impl CutSpec {
    pub const STANDARD_OFFSETS: [f64; 3] = [0.0, -6.0, 6.0];
    pub const STANDARD_TIMES: [f64; 2] = [40.0, 60.0];

    pub fn new(z_ref: f64, t_ref: f64) -> Self {
        Self { z_ref, thickness: 3.0, t_ref, window: 1.0, axis: Axis::Z }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thickness > 0.0) || !(self.window > 0.0) {
            return Err(Error::InvalidParameter(format!("cut thickness and window must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn window_end(&self) -> f64 {
        self.t_ref + self.window
    }

    pub fn contains_coord(&self, p: &Vec3) -> bool {
        let c = p[self.axis.index()];
        c >= self.z_ref && c <= self.z_ref + self.thickness
    }

    fn in_window(&self, t: f64) -> bool {
        t >= self.t_ref && t <= self.window_end()
    }

    /// The six reference cuts `{0, -6, 6} x {40, 60}`.
    pub fn standard_battery() -> Vec<CutSpec> {
        Self::STANDARD_OFFSETS
            .iter()
            .flat_map(|&z| Self::STANDARD_TIMES.iter().map(move |&t| CutSpec::new(z, t)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutCell {
    /// Latest cell id occupying this site inside the window.
    #[serde(rename = "cell")]
    pub cell_id: u64,
    #[serde(rename = "pos")]
    pub position: Vec3,
    #[serde(rename = "mut_id")]
    pub mutation_id: u64,
    #[serde(rename = "birth")]
    pub birth_flag: u8,
    #[serde(rename = "death")]
    pub death_flag: u8,
    pub density: f64,
}

/// Precomputed per-cell fates, shared across the cuts of one history.
pub struct CutContext<'a> {
    history: &'a TumorHistory,
    fates: Vec<Fate>,
}

impl<'a> CutContext<'a> {
    pub fn new(history: &'a TumorHistory) -> Self {
        Self { fates: history.fates(), history }
    }

    pub fn history(&self) -> &TumorHistory {
        self.history
    }

    /// Whether the run's record determines the tumor state at time `t`.
    pub fn covers(&self, t: f64) -> bool {
        matches!(self.history.termination, Termination::Extinct | Termination::Stalled)
            || self.history.end_time >= t
    }

    pub fn extract(&self, spec: &CutSpec) -> Result<Vec<CutCell>> {
        spec.validate()?;
        let h = self.history;
        let (t0, t1) = (spec.t_ref, spec.window_end());
        let alive_in_window =
            |id: usize| h.cells[id].birth_time <= t1 && self.fates[id].end_time >= t0;

        // Group candidates by exact position; ids ascend with birth time so
        // the last member of a group is the latest occupant of the site.
        let mut group_of: FxHashMap<[u64; 3], usize> = FxHashMap::default();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (id, c) in h.cells.iter().enumerate() {
            if !spec.contains_coord(&c.position) || !alive_in_window(id) {
                continue;
            }
            let key = c.position.map(f64::to_bits);
            let g = *group_of.entry(key).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(id);
        }

        // Living snapshot at the window end around the slab, for densities of
        // sites that survive the window.
        let k = h.params.kernels.density;
        let cutoff = k.cutoff.unwrap_or(f64::INFINITY);
        let ax = spec.axis.index();
        let (lo, hi) = (spec.z_ref - cutoff, spec.z_ref + spec.thickness + cutoff);
        let alive_at_end = |id: usize| h.cells[id].birth_time <= t1 && self.fates[id].end_time > t1;
        let snapshot = SpatialIndex::from_points(
            cutoff,
            h.cells.iter().enumerate().filter_map(|(id, c)| {
                let z = c.position[ax];
                (z >= lo && z <= hi && alive_at_end(id)).then_some((id as u32, c.position))
            }),
        );

        let mut out = Vec::with_capacity(groups.len());
        for members in &groups {
            let rep = *members.last().expect("non-empty group");
            let cell = &h.cells[rep];
            let fate = &self.fates[rep];
            let birth_flag = members.iter().any(|&m| {
                let f = &self.fates[m];
                f.kind == Some(EventKind::DivisionSuccess) && spec.in_window(f.end_time)
            });
            let death_flag = matches!(fate.kind, Some(EventKind::NaturalDeath | EventKind::DivisionFailure))
                && spec.in_window(fate.end_time);
            let density = match fate.event {
                Some(e) if fate.end_time <= t1 => h.events[e].density,
                _ => {
                    let mut rho = 0.0;
                    snapshot.for_each_within(&cell.position, cutoff, |id, _, d2| {
                        if id as usize != rep {
                            rho += kernel_rho(d2.sqrt(), &k);
                        }
                    });
                    rho
                }
            };
            out.push(CutCell {
                cell_id: cell.id,
                position: cell.position,
                mutation_id: cell.mutation_id,
                birth_flag: birth_flag as u8,
                death_flag: death_flag as u8,
                density,
            });
        }
        Ok(out)
    }

    pub fn standard_battery(&self) -> Result<Vec<(CutSpec, Vec<CutCell>)>> {
        let specs = CutSpec::standard_battery();
        let missing: Vec<String> = specs
            .iter()
            .filter(|s| !self.covers(s.window_end()))
            .map(|s| format!("z={} t=[{}, {}]", s.z_ref, s.t_ref, s.window_end()))
            .collect();
        if !missing.is_empty() {
            return Err(Error::HistoryTooShort { missing, end_time: self.history.end_time });
        }
        specs.into_iter().map(|s| Ok((s, self.extract(&s)?))).collect()
    }
}

pub fn extract_cut(h: &TumorHistory, spec: &CutSpec) -> Result<Vec<CutCell>> {
    CutContext::new(h).extract(spec)
}

pub fn standard_cut_battery(h: &TumorHistory) -> Result<Vec<(CutSpec, Vec<CutCell>)>> {
    CutContext::new(h).standard_battery()
}

/// `n` centers drawn uniformly (with replacement) from the cut's cell positions.
pub fn sample_patch_centers<R: Rng + ?Sized>(cut: &[CutCell], n: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    if cut.is_empty() {
        return Err(Error::Empty("cut".into()));
    }
    Ok((0..n).map(|_| cut[rng.random_range(0..cut.len())].position).collect())
}

/// Cut cells within `radius` (inclusive) of `center`.
pub fn extract_patch(cut: &[CutCell], center: &Vec3, radius: f64) -> Vec<CutCell> {
    let r2 = radius * radius;
    cut.iter().filter(|c| dist2(&c.position, center) <= r2).copied().collect()
}
