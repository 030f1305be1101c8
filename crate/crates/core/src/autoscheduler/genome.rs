//! The search grammar: a compact genome per candidate, rendered to a
//! schedule of multi-level tiling + reduction split + annotations.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::loopnest::{AxisKind, KernelClassId, KernelSpec, Role};
use crate::schedule::{Schedule, SchedulePrimitive as P};

/// Largest innermost tile factor.
pub const MAX_INNER: usize = 64;
/// Cap on the product of a spatial axis's three tile factors. Keeping it at
/// 256 means any factor chain valid at one power-of-two extent ≥ 256 is
/// valid at every other.
pub const MAX_CHAIN: usize = 256;
pub const UNROLL_CHOICES: [usize; 4] = [0, 16, 64, 512];
pub const CACHE_BUFFER: &str = "D";

/// Axis structure of a kernel class, read off its canonical nest.
#[derive(Clone, Debug)]
pub struct Sketch {
    pub class: KernelClassId,
    /// Spatial axes with extent > 1, each tiled three levels deep.
    pub tiled: Vec<(String, usize)>,
    /// Unit-extent spatial axes, kept outermost.
    pub fixed: Vec<String>,
    /// Reduction axis split once (the first with extent > 1).
    pub main_reduction: Option<(String, usize)>,
    pub other_reductions: Vec<String>,
}

impl Sketch {
    pub fn of(spec: &KernelSpec) -> Sketch {
        let mut s = Sketch {
            class: spec.class().clone(),
            tiled: Vec::new(),
            fixed: Vec::new(),
            main_reduction: None,
            other_reductions: Vec::new(),
        };
        for a in &spec.nest().axes {
            match a.kind {
                AxisKind::Spatial if a.extent > 1 => s.tiled.push((a.name.clone(), a.extent)),
                AxisKind::Spatial => s.fixed.push(a.name.clone()),
                AxisKind::Reduction if a.extent > 1 && s.main_reduction.is_none() => {
                    s.main_reduction = Some((a.name.clone(), a.extent))
                }
                AxisKind::Reduction => s.other_reductions.push(a.name.clone()),
            }
        }
        s
    }

    fn loop_count(&self) -> usize {
        self.fixed.len()
            + 4 * self.tiled.len()
            + self.main_reduction.as_ref().map_or(0, |_| 2)
            + self.other_reductions.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Genome {
    /// Per tiled axis: factors of the `_i`, `_o` and `_oo` loops.
    pub tiles: Vec<[usize; 3]>,
    pub reduce: usize,
    /// Adjacent transpositions applied to the rendered loop order.
    pub swaps: Vec<usize>,
    /// Leading loops fused into the parallel loop (0 = no parallelism).
    pub fuse_depth: usize,
    pub unroll: usize,
    pub cache: bool,
    pub vectorize: bool,
}

pub(crate) fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

fn root(name: &str) -> &str {
    name.split('_').next().unwrap_or(name)
}

fn draw_factor<R: Rng>(rng: &mut R, extent: usize, cap: usize) -> usize {
    let options: Vec<usize> = divisors(extent).into_iter().filter(|&d| d <= cap).collect();
    *options.choose(rng).unwrap_or(&1)
}

fn draw_chain<R: Rng>(rng: &mut R, extent: usize) -> [usize; 3] {
    let fi = draw_factor(rng, extent, MAX_INNER);
    let fo = draw_factor(rng, extent / fi, MAX_CHAIN / fi);
    let f_oo = draw_factor(rng, extent / (fi * fo), MAX_CHAIN / (fi * fo));
    [fi, fo, f_oo]
}

impl Genome {
    pub fn random<R: Rng>(sketch: &Sketch, rng: &mut R) -> Genome {
        Genome {
            tiles: sketch.tiled.iter().map(|(_, e)| draw_chain(rng, *e)).collect(),
            reduce: sketch
                .main_reduction
                .as_ref()
                .map_or(1, |(_, e)| draw_factor(rng, *e, MAX_CHAIN)),
            swaps: Vec::new(),
            fuse_depth: *[1, 2, 2, 3].choose(rng).unwrap(),
            unroll: *UNROLL_CHOICES.choose(rng).unwrap(),
            cache: rng.random_bool(0.5),
            vectorize: true,
        }
    }

    /// One random edit from the mutation grammar.
    pub fn mutate<R: Rng>(&mut self, sketch: &Sketch, rng: &mut R) {
        let factor_slots = 3 * self.tiles.len() + usize::from(sketch.main_reduction.is_some());
        let kind = rng.random_range(0..10);
        match kind {
            0..=3 if factor_slots > 0 => {
                let slot = rng.random_range(0..factor_slots);
                if slot == 3 * self.tiles.len() {
                    let (_, e) = sketch.main_reduction.as_ref().unwrap();
                    self.reduce = draw_factor(rng, *e, MAX_CHAIN);
                } else {
                    let (axis, level) = (slot / 3, slot % 3);
                    let extent = sketch.tiled[axis].1;
                    let chain = &mut self.tiles[axis];
                    let others: usize = (0..3).filter(|&l| l != level).map(|l| chain[l]).product();
                    let cap = if level == 0 {
                        MAX_INNER.min(MAX_CHAIN / others)
                    } else {
                        MAX_CHAIN / others
                    };
                    chain[level] = draw_factor(rng, extent / others, cap);
                }
            }
            4 | 5 => {
                if !self.swaps.is_empty() && rng.random_bool(0.3) {
                    let i = rng.random_range(0..self.swaps.len());
                    self.swaps.remove(i);
                } else {
                    let n = sketch.loop_count();
                    if n >= 2 {
                        self.swaps.push(rng.random_range(0..n - 1));
                    }
                }
            }
            6 => {
                let options: Vec<usize> =
                    UNROLL_CHOICES.iter().copied().filter(|&u| u != self.unroll).collect();
                self.unroll = *options.choose(rng).unwrap();
            }
            7 => self.cache = !self.cache,
            8 => {
                let options: Vec<usize> = (0..=3).filter(|&d| d != self.fuse_depth).collect();
                self.fuse_depth = *options.choose(rng).unwrap();
            }
            _ => self.vectorize = !self.vectorize,
        }
    }

    /// Loop order before fusion, after the genome's swaps.
    pub fn order(&self, sketch: &Sketch) -> Vec<String> {
        let mut order: Vec<String> = sketch.fixed.clone();
        let level = |suffix: &str| -> Vec<String> {
            sketch
                .tiled
                .iter()
                .map(|(a, _)| format!("{a}_{suffix}"))
                .collect()
        };
        order.extend(level("ooo"));
        order.extend(level("oo"));
        if let Some((r, _)) = &sketch.main_reduction {
            order.push(format!("{r}_o"));
        }
        order.extend(level("o"));
        if let Some((r, _)) = &sketch.main_reduction {
            order.push(format!("{r}_i"));
        }
        order.extend(sketch.other_reductions.iter().cloned());
        order.extend(level("i"));
        for &i in &self.swaps {
            if i + 1 < order.len() {
                order.swap(i, i + 1);
            }
        }
        order
    }

    pub fn render(&self, sketch: &Sketch) -> Schedule {
        let mut prims = Vec::new();
        for ((axis, _), [fi, fo, f_oo]) in sketch.tiled.iter().zip(&self.tiles) {
            prims.push(P::split(axis, *fi));
            prims.push(P::split(&format!("{axis}_o"), *fo));
            prims.push(P::split(&format!("{axis}_oo"), *f_oo));
        }
        if let Some((r, _)) = &sketch.main_reduction {
            prims.push(P::split(r, self.reduce));
        }
        let order = self.order(sketch);
        if order.len() > 1 {
            prims.push(P::Reorder {
                axes: order.clone(),
            });
        }
        let spatial = |name: &String| {
            let r = root(name);
            sketch.fixed.iter().any(|a| a == r) || sketch.tiled.iter().any(|(a, _)| a == r)
        };
        // Swaps may pull a reduction loop up; the cache attaches and fusion
        // stops at the first one.
        let lead = order.iter().take_while(|n| spatial(n)).count();
        let outer = (sketch.fixed.len() + sketch.tiled.len()).min(lead);
        if self.cache && outer > 0 {
            prims.push(P::cache_write(Role::Output, CACHE_BUFFER));
            prims.push(P::compute_at(CACHE_BUFFER, &order[outer - 1]));
        }
        let depth = self.fuse_depth.min(lead);
        let mut first = order.first().cloned().unwrap_or_default();
        if depth >= 2 {
            let mut roots = format!("F_{}{}", root(&order[0]), root(&order[1]));
            prims.push(P::fuse(&order[0], &order[1], &roots));
            for next in &order[2..depth] {
                let fused = format!("{roots}{}", root(next));
                prims.push(P::fuse(&roots, next, &fused));
                roots = fused;
            }
            first = roots;
        }
        if depth >= 1 {
            prims.push(P::parallel(&first));
        }
        if self.unroll > 0 && !order.is_empty() {
            prims.push(P::unroll(&first, self.unroll));
        }
        if self.vectorize {
            if let Some(last) = order.last() {
                if depth < order.len() {
                    prims.push(P::vectorize(last));
                }
            }
        }
        Schedule::new(sketch.class.clone(), prims)
    }
}
