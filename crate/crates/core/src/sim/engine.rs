//! Event-driven simulation loop.
//!
//! Every living cell owns one pending event drawn from its competing birth
//! and death exponential clocks. Whenever a cell's local density changes, its
//! pending event is redrawn (memorylessness makes this exact). Superseded
//! heap entries are left in place and skipped on pop via a version stamp.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use super::history::{Cell, CloneRecord, EventKind, EventRecord, Termination, TumorHistory};
use super::index::SpatialIndex;
use super::kernels::{birth_rate, death_rate, kernel_rho, mutate_all, success_probability};
use super::params::{GlobalParams, IntrinsicParams, KernelParams};
use crate::error::{Error, Result};
use crate::geom::{add, Vec3};

/// Density of `target` from the cells in `index`, excluding `exclude` (the
/// target's own entry, if present).
pub fn local_density(target: &Vec3, exclude: Option<u32>, index: &SpatialIndex, k: &KernelParams) -> f64 {
    let cutoff = k.cutoff.unwrap_or(f64::INFINITY);
    let mut rho = 0.0;
    index.for_each_within(target, cutoff, |id, _, d2| {
        if Some(id) != exclude {
            rho += kernel_rho(d2.sqrt(), k);
        }
    });
    rho
}

/// Creates the two daughters of a successful division. Daughter A sits
/// exactly at the parent position, daughter B at an isotropic standard-normal
/// offset. Each daughter independently mutates with probability
/// `mutation_probability`, which appends a new clone to `clones`.
pub fn spawn_daughters<R: Rng + ?Sized>(
    parent: &Cell,
    gp: &GlobalParams,
    clones: &mut Vec<CloneRecord>,
    first_id: u64,
    time: f64,
    rng: &mut R,
) -> (Cell, Cell) {
    let offset: Vec3 = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let mut daughter = |id: u64, position: Vec3, rng: &mut R| {
        let mut mutation_id = parent.mutation_id;
        if gp.mutation_probability > 0.0 && rng.random::<f64>() < gp.mutation_probability {
            let params = mutate_all(&clones[parent.mutation_id as usize].params, gp.mutation_increase, rng);
            mutation_id = clones.len() as u64;
            clones.push(CloneRecord { id: mutation_id, parent: Some(parent.mutation_id), params, origin_time: time });
        }
        Cell { id, position, mutation_id, birth_time: time, parent: Some(parent.id) }
    };
    let a = daughter(first_id, parent.position, rng);
    let b = daughter(first_id + 1, add(&parent.position, &offset), rng);
    (a, b)
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    id: u64,
    pos: Vec3,
    clone: u64,
    rho: f64,
    neighbors: u32,
    version: u32,
    alive: bool,
}

#[derive(Clone, Copy, Debug)]
struct Scheduled {
    time: f64,
    slot: u32,
    version: u32,
    birth: bool,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed so `BinaryHeap` pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.slot.cmp(&self.slot))
            .then_with(|| other.version.cmp(&self.version))
    }
}

struct Engine<'a> {
    gp: &'a GlobalParams,
    rng: ChaCha8Rng,
    slots: Vec<Slot>,
    free: Vec<u32>,
    index: SpatialIndex,
    heap: BinaryHeap<Scheduled>,
    clones: Vec<CloneRecord>,
    cells: Vec<Cell>,
    events: Vec<EventRecord>,
    scratch: Vec<(u32, f64)>,
    affected: Vec<u32>,
    live: usize,
    cutoff: f64,
}

impl<'a> Engine<'a> {
    fn params(&self, slot: u32) -> &IntrinsicParams {
        &self.clones[self.slots[slot as usize].clone as usize].params
    }

    fn schedule(&mut self, slot: u32, now: f64) {
        let s = &mut self.slots[slot as usize];
        s.version = s.version.wrapping_add(1);
        let (version, rho) = (s.version, s.rho);
        let p = *self.params(slot);
        let k = &self.gp.kernels;
        let b = birth_rate(&p, rho, &k.birth);
        // lifespan_eff > 0 holds for every clone (validated root, open-interval mutation draws).
        let d = death_rate(&p, rho, &k.lifespan).unwrap_or(f64::INFINITY);
        let total = b + d;
        if !(total > 0.0) {
            return;
        }
        let (dt, birth) = if total.is_infinite() {
            (0.0, false)
        } else {
            let e: f64 = self.rng.sample(Exp1);
            let u: f64 = self.rng.random();
            (e / total, u * total < b)
        };
        self.heap.push(Scheduled { time: now + dt, slot, version, birth });
    }

    fn alloc_slot(&mut self, slot: Slot) -> u32 {
        if let Some(i) = self.free.pop() {
            self.slots[i as usize] = slot;
            i
        } else {
            self.slots.push(slot);
            (self.slots.len() - 1) as u32
        }
    }

    fn collect_neighbors(&mut self, pos: &Vec3) {
        self.scratch.clear();
        let scratch = &mut self.scratch;
        self.index.for_each_within(pos, self.cutoff, |id, _, d2| scratch.push((id, d2)));
    }

    /// Inserts a new living cell and updates neighbour densities.
    fn add_cell(&mut self, cell: &Cell) -> u32 {
        let slot = self.alloc_slot(Slot {
            id: cell.id,
            pos: cell.position,
            clone: cell.mutation_id,
            rho: 0.0,
            neighbors: 0,
            version: 0,
            alive: true,
        });
        self.collect_neighbors(&cell.position);
        let k = self.gp.kernels.density;
        let mut rho = 0.0;
        let mut count = 0;
        for &(j, d2) in &self.scratch {
            let w = kernel_rho(d2.sqrt(), &k);
            if w > 0.0 {
                let n = &mut self.slots[j as usize];
                n.rho += w;
                n.neighbors += 1;
                rho += w;
                count += 1;
                self.affected.push(j);
            }
        }
        let s = &mut self.slots[slot as usize];
        s.rho = rho;
        s.neighbors = count;
        self.index.insert(slot, cell.position);
        self.live += 1;
        slot
    }

    fn remove_cell(&mut self, slot: u32) {
        let pos = self.slots[slot as usize].pos;
        self.index.remove(slot, &pos);
        self.slots[slot as usize].alive = false;
        self.free.push(slot);
        self.live -= 1;
        self.collect_neighbors(&pos);
        let k = self.gp.kernels.density;
        for &(j, d2) in &self.scratch {
            let w = kernel_rho(d2.sqrt(), &k);
            if w > 0.0 {
                let n = &mut self.slots[j as usize];
                n.neighbors -= 1;
                n.rho = if n.neighbors == 0 { 0.0 } else { (n.rho - w).max(0.0) };
                self.affected.push(j);
            }
        }
    }

    fn flush_affected(&mut self, now: f64) {
        let mut affected = std::mem::take(&mut self.affected);
        affected.sort_unstable();
        affected.dedup();
        for &j in &affected {
            if self.slots[j as usize].alive {
                self.schedule(j, now);
            }
        }
        affected.clear();
        self.affected = affected;
    }

    fn record(&mut self, time: f64, kind: EventKind, slot: u32, daughters: Option<[u64; 2]>) {
        let s = &self.slots[slot as usize];
        self.events.push(EventRecord {
            time,
            kind,
            cell_id: s.id,
            position: s.pos,
            mutation_id: s.clone,
            density: s.rho,
            daughters,
        });
    }

    /// Returns true when the event was a successful division.
    fn fire(&mut self, time: f64, slot: u32, birth: bool) -> bool {
        if !birth {
            self.record(time, EventKind::NaturalDeath, slot, None);
            self.remove_cell(slot);
            self.flush_affected(time);
            return false;
        }
        let rho = self.slots[slot as usize].rho;
        let p = *self.params(slot);
        let ps = success_probability(&p, rho, &self.gp.kernels.success);
        let u: f64 = self.rng.random();
        if u >= ps {
            self.record(time, EventKind::DivisionFailure, slot, None);
            self.remove_cell(slot);
            self.flush_affected(time);
            return false;
        }

        let parent = self.cells[self.slots[slot as usize].id as usize];
        let first_id = self.cells.len() as u64;
        let (a, b) = spawn_daughters(&parent, self.gp, &mut self.clones, first_id, time, &mut self.rng);
        self.record(time, EventKind::DivisionSuccess, slot, Some([a.id, b.id]));

        // Daughter A replaces the parent in place: same position, so no
        // neighbour density changes.
        {
            let s = &mut self.slots[slot as usize];
            s.id = a.id;
            s.clone = a.mutation_id;
        }
        self.affected.push(slot);
        let b_slot = self.add_cell(&b);
        self.affected.push(b_slot);
        self.cells.push(a);
        self.cells.push(b);
        self.flush_affected(time);
        true
    }
}

/// Runs one tumor from `n0` founder cells until the birth limit, the time
/// limit or extinction.
pub fn simulate(gp: &GlobalParams, intrinsics0: &IntrinsicParams, n0: u32) -> Result<TumorHistory> {
    gp.validate()?;
    intrinsics0.validate()?;
    if n0 == 0 {
        return Err(Error::InvalidParameter("initial cell count must be >= 1".into()));
    }
    if !(intrinsics0.lifespan_eff > 0.0) || !(gp.kernels.lifespan.scale > 0.0) {
        return Err(Error::ImmortalParameterization);
    }
    let cutoff = gp.kernels.density.cutoff.expect("validated");
    let mut eng = Engine {
        gp,
        rng: ChaCha8Rng::seed_from_u64(gp.rng_seed),
        slots: Vec::new(),
        free: Vec::new(),
        index: SpatialIndex::new(cutoff),
        heap: BinaryHeap::new(),
        clones: vec![CloneRecord { id: 0, parent: None, params: *intrinsics0, origin_time: 0.0 }],
        cells: Vec::new(),
        events: Vec::new(),
        scratch: Vec::new(),
        affected: Vec::new(),
        live: 0,
        cutoff,
    };

    for i in 0..n0 {
        let position = if i == 0 {
            [0.0; 3]
        } else {
            [eng.rng.sample(StandardNormal), eng.rng.sample(StandardNormal), eng.rng.sample(StandardNormal)]
        };
        let cell = Cell { id: i as u64, position, mutation_id: 0, birth_time: 0.0, parent: None };
        eng.add_cell(&cell);
        eng.cells.push(cell);
    }
    eng.affected.clear();
    for slot in 0..eng.slots.len() as u32 {
        eng.schedule(slot, 0.0);
    }

    let mut births = 0u64;
    let mut last_t = 0.0f64;
    let (termination, end_time) = loop {
        if gp.max_birth_events.is_some_and(|m| births >= m) {
            break (Termination::BirthLimit, last_t);
        }
        let Some(next) = eng.heap.pop() else {
            if eng.live == 0 {
                break (Termination::Extinct, last_t);
            }
            break (Termination::Stalled, gp.max_sim_time.unwrap_or(last_t));
        };
        let s = &eng.slots[next.slot as usize];
        if !s.alive || s.version != next.version {
            continue;
        }
        let mut t = next.time;
        if t <= last_t {
            t = last_t.next_up();
        }
        if let Some(tmax) = gp.max_sim_time {
            if t > tmax {
                break (Termination::TimeLimit, tmax);
            }
        }
        last_t = t;
        if eng.fire(t, next.slot, next.birth) {
            births += 1;
        }
    };

    Ok(TumorHistory {
        params: gp.clone(),
        intrinsics0: *intrinsics0,
        n0,
        events: eng.events,
        cells: eng.cells,
        clones: eng.clones,
        end_time,
        termination,
        births,
    })
}
