use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Placement, SceneConfig};
use super::path::{bfs, UNREACHABLE};
use crate::error::{LoatError, Result};
use crate::maps::{read_container, write_container};

/// `(row, col)`.
pub type Cell = (usize, usize);

pub const OCCUPANCY_CHANNEL: &str = "@occupancy";
pub const ROOM_CHANNEL: &str = "@room";

const LAYOUT_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub size: usize,
    /// Row-major, true = blocked.
    pub occupancy: Vec<bool>,
    /// Row-major room ids starting at 1; walls and doors are 0.
    pub room_labels: Vec<u16>,
    /// Room type name of room id `i + 1`.
    pub room_types: Vec<String>,
    /// Map vocabulary followed by the targets.
    pub categories: Vec<String>,
    pub vocabulary_len: usize,
    /// Category index of the object in each cell.
    pub object_grid: Vec<Option<u16>>,
    pub object_cells: BTreeMap<String, Vec<Cell>>,
    pub truth_affinity: BTreeMap<String, Placement>,
}

impl Scene {
    pub fn index(&self, (r, c): Cell) -> usize {
        r * self.size + c
    }

    pub fn cell(&self, i: usize) -> Cell {
        (i / self.size, i % self.size)
    }

    pub fn in_bounds(&self, (r, c): Cell) -> bool {
        r < self.size && c < self.size
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.occupancy[self.index(cell)]
    }

    pub fn object_at(&self, cell: Cell) -> Option<&str> {
        self.object_grid[self.index(cell)].map(|k| self.categories[k as usize].as_str())
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.categories[..self.vocabulary_len]
    }

    pub fn cells_of(&self, category: &str) -> &[Cell] {
        self.object_cells.get(category).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn room_count(&self) -> usize {
        self.room_types.len()
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.size * self.size)
            .filter(|&i| !self.occupancy[i])
            .map(|i| self.cell(i))
            .collect()
    }

    /// BFS distances over free cells from `sources`.
    pub fn distances_from(&self, sources: &[Cell]) -> Vec<u32> {
        let idx: Vec<usize> = sources.iter().map(|&c| self.index(c)).collect();
        bfs(self.size, |i| !self.occupancy[i], &idx)
    }

    pub fn is_connected(&self) -> bool {
        let free = self.free_cells();
        let Some(&first) = free.first() else {
            return true;
        };
        let d = self.distances_from(&[first]);
        free.iter().all(|&c| d[self.index(c)] != UNREACHABLE)
    }

    /// Category planes, then occupancy and room ids, in the map container format.
    ///
    /// Reading it back restores geometry and objects; room type names and the
    /// placement table are not part of the snapshot.
    pub fn write_snapshot(&self, out: &mut impl Write) -> Result<()> {
        let n = self.size * self.size;
        let mut names = self.categories.clone();
        names.push(OCCUPANCY_CHANNEL.into());
        names.push(ROOM_CHANNEL.into());
        let mut data = vec![0f32; names.len() * n];
        for (i, obj) in self.object_grid.iter().enumerate() {
            if let Some(k) = obj {
                data[*k as usize * n + i] = 1.0;
            }
        }
        let occ = self.categories.len() * n;
        for i in 0..n {
            data[occ + i] = if self.occupancy[i] { 1.0 } else { 0.0 };
            data[occ + n + i] = self.room_labels[i] as f32;
        }
        write_container(out, &names, self.size, self.size, &data)
    }

    pub fn read_snapshot(input: &mut impl Read, vocabulary_len: usize) -> Result<Scene> {
        let c = read_container(input)?;
        let bad = |why: &str| LoatError::malformed("<scene snapshot>", why);
        if c.height != c.width {
            return Err(bad("scene grid must be square"));
        }
        let k = c.names.len();
        if k < 2 || c.names[k - 2] != OCCUPANCY_CHANNEL || c.names[k - 1] != ROOM_CHANNEL {
            return Err(bad("missing occupancy or room plane"));
        }
        let categories = c.names[..k - 2].to_vec();
        if vocabulary_len > categories.len() {
            return Err(bad("vocabulary longer than category list"));
        }
        let size = c.height;
        let n = size * size;
        let mut object_grid = vec![None; n];
        let mut object_cells: BTreeMap<String, Vec<Cell>> = BTreeMap::new();
        for (ci, name) in categories.iter().enumerate() {
            for i in 0..n {
                if c.data[ci * n + i] != 0.0 {
                    if object_grid[i].is_some() {
                        return Err(bad("two objects share a cell"));
                    }
                    object_grid[i] = Some(ci as u16);
                    object_cells.entry(name.clone()).or_default().push((i / size, i % size));
                }
            }
        }
        let occ = (k - 2) * n;
        let occupancy: Vec<bool> = c.data[occ..occ + n].iter().map(|&v| v != 0.0).collect();
        let room_labels: Vec<u16> = c.data[occ + n..occ + 2 * n].iter().map(|&v| v as u16).collect();
        let rooms = room_labels.iter().copied().max().unwrap_or(0) as usize;
        Ok(Scene {
            seed: 0,
            size,
            occupancy,
            room_labels,
            room_types: vec![String::new(); rooms],
            categories,
            vocabulary_len,
            object_grid,
            object_cells,
            truth_affinity: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

impl Rect {
    fn height(&self) -> usize {
        self.r1 - self.r0 + 1
    }

    fn width(&self) -> usize {
        self.c1 - self.c0 + 1
    }
}

struct Layout {
    occupancy: Vec<bool>,
    rooms: Vec<Rect>,
}

fn try_layout(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Option<Layout> {
    let n = cfg.grid_size;
    let m = cfg.min_room_size;
    let mut occ = vec![false; n * n];
    for i in 0..n {
        occ[i] = true;
        occ[(n - 1) * n + i] = true;
        occ[i * n] = true;
        occ[i * n + n - 1] = true;
    }
    let mut rooms = vec![Rect { r0: 1, c0: 1, r1: n - 2, c1: n - 2 }];
    let mut doors: Vec<Cell> = Vec::new();
    while rooms.len() < cfg.rooms {
        let pick = rooms
            .iter()
            .enumerate()
            .filter(|(_, r)| r.height() > 2 * m || r.width() > 2 * m)
            .max_by_key(|(i, r)| (r.height() * r.width(), usize::MAX - i))
            .map(|(i, _)| i)?;
        let rect = rooms[pick];
        let can_h = rect.height() > 2 * m;
        let can_v = rect.width() > 2 * m;
        let horizontal = match (can_h, can_v) {
            (true, true) if rect.height() == rect.width() => rng.gen::<bool>(),
            (true, true) => rect.height() > rect.width(),
            (h, _) => h,
        };
        let (lo, hi) = if horizontal {
            (rect.r0 + m, rect.r1 - m)
        } else {
            (rect.c0 + m, rect.c1 - m)
        };
        // a wall line must not end against an existing door
        let lines: Vec<usize> = (lo..=hi)
            .filter(|&s| {
                !doors.iter().any(|&(dr, dc)| {
                    if horizontal {
                        dr == s && (dc + 1 == rect.c0 || dc == rect.c1 + 1)
                    } else {
                        dc == s && (dr + 1 == rect.r0 || dr == rect.r1 + 1)
                    }
                })
            })
            .collect();
        let &s = lines.choose(rng)?;
        let span = if horizontal { rect.width() } else { rect.height() };
        let door_start = rng.gen_range(0..=span - cfg.door_width);
        for k in 0..span {
            let cell = if horizontal { (s, rect.c0 + k) } else { (rect.r0 + k, s) };
            if (door_start..door_start + cfg.door_width).contains(&k) {
                doors.push(cell);
            } else {
                occ[cell.0 * n + cell.1] = true;
            }
        }
        let (a, b) = if horizontal {
            (Rect { r1: s - 1, ..rect }, Rect { r0: s + 1, ..rect })
        } else {
            (Rect { c1: s - 1, ..rect }, Rect { c0: s + 1, ..rect })
        };
        rooms[pick] = a;
        rooms.push(b);
    }
    Some(Layout { occupancy: occ, rooms })
}

/// Builds a deterministic scene for `seed`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.grid_size;
    for _ in 0..LAYOUT_ATTEMPTS {
        let Some(layout) = try_layout(cfg, &mut rng) else {
            continue;
        };
        let mut room_labels = vec![0u16; n * n];
        for (k, r) in layout.rooms.iter().enumerate() {
            for row in r.r0..=r.r1 {
                for col in r.c0..=r.c1 {
                    room_labels[row * n + col] = k as u16 + 1;
                }
            }
        }
        let mut scene = Scene {
            seed,
            size: n,
            occupancy: layout.occupancy,
            room_labels,
            room_types: vec![String::new(); layout.rooms.len()],
            categories: cfg.vocabulary.iter().chain(&cfg.targets).cloned().collect(),
            vocabulary_len: cfg.vocabulary.len(),
            object_grid: vec![None; n * n],
            object_cells: BTreeMap::new(),
            truth_affinity: cfg.placement.clone(),
        };
        if !scene.is_connected() {
            continue;
        }
        place_objects(cfg, &mut scene, &layout.rooms, &mut rng)?;
        return Ok(scene);
    }
    Err(LoatError::Unsatisfiable(format!(
        "no connected layout with {} rooms of size >= {} on a {n}x{n} grid",
        cfg.rooms, cfg.min_room_size
    )))
}

fn put(scene: &mut Scene, cell: Cell, category: usize) {
    let i = scene.index(cell);
    scene.object_grid[i] = Some(category as u16);
    scene
        .object_cells
        .entry(scene.categories[category].clone())
        .or_default()
        .push(cell);
}

fn place_objects(cfg: &SceneConfig, scene: &mut Scene, rooms: &[Rect], rng: &mut ChaCha8Rng) -> Result<()> {
    let mut order: Vec<usize> = (0..rooms.len()).collect();
    order.shuffle(rng);
    for (k, &room) in order.iter().enumerate() {
        scene.room_types[room] = cfg.room_types[k % cfg.room_types.len()].name.clone();
    }
    for (room, rect) in rooms.iter().enumerate() {
        let rt = cfg
            .room_types
            .iter()
            .find(|t| t.name == scene.room_types[room])
            .expect("assigned type exists");
        for anchor in &rt.anchors {
            let free: Vec<Cell> = (rect.r0..=rect.r1)
                .flat_map(|r| (rect.c0..=rect.c1).map(move |c| (r, c)))
                .filter(|&c| scene.object_grid[scene.index(c)].is_none())
                .collect();
            let &cell = free
                .choose(rng)
                .ok_or_else(|| LoatError::Unsatisfiable(format!("room {} has no space for `{anchor}`", room + 1)))?;
            let k = cfg.vocabulary.iter().position(|v| v == anchor).expect("validated");
            put(scene, cell, k);
        }
    }
    let n_vocab = cfg.vocabulary.len();
    for (ti, target) in cfg.targets.iter().enumerate() {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut anchor = None;
        for (a, p) in cfg.placement.get(target).map(Vec::as_slice).unwrap_or(&[]) {
            acc += p;
            if u < acc {
                anchor = Some(a);
                break;
            }
        }
        let mut candidates = Vec::new();
        if let Some(a) = anchor {
            if let Some(&(ar, ac)) = scene.cells_of(a).to_vec().choose(rng) {
                let room = scene.room_labels[scene.index((ar, ac))];
                let rp = cfg.r_place;
                for r in ar.saturating_sub(rp)..=(ar + rp).min(scene.size - 1) {
                    for c in ac.saturating_sub(rp)..=(ac + rp).min(scene.size - 1) {
                        let i = scene.index((r, c));
                        if !scene.occupancy[i] && scene.object_grid[i].is_none() && scene.room_labels[i] == room {
                            candidates.push((r, c));
                        }
                    }
                }
            }
        }
        if candidates.is_empty() {
            candidates = (0..scene.size * scene.size)
                .filter(|&i| !scene.occupancy[i] && scene.object_grid[i].is_none())
                .map(|i| scene.cell(i))
                .collect();
        }
        let &cell = candidates
            .choose(rng)
            .ok_or_else(|| LoatError::Unsatisfiable(format!("no free cell left for `{target}`")))?;
        put(scene, cell, n_vocab + ti);
    }
    Ok(())
}
