//! Reproducible Poisson random measures on `ℝ₊²` with Lebesgue intensity.
//!
//! Each measure is cut into cells indexed by a level strip `k` and a unit
//! time window `j`. Strip 0 covers `u ∈ [0, Λ₀]`, strip `k ≥ 1` covers
//! `u ∈ (Λ₀·2^(k-1), Λ₀·2^k]`, and window `j` covers `s ∈ [j·w, (j+1)·w)`.
//! A cell holds `Poisson(area)` points with i.i.d. uniform positions, drawn
//! from a ChaCha8 generator keyed by `(seed, replica, reaction id, k, j)`.
//! The point set of any rectangle is therefore a pure function of the
//! stream identity and the rectangle, independent of query order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use std::collections::HashMap;

/// Default height of strip 0.
pub const DEFAULT_BASE_LEVEL: f64 = 1.0;
/// Default width of a time window.
pub const DEFAULT_WINDOW: f64 = 1.0;
const MAX_STRIP: u32 = 62;

/// A point `(s, u)` of a Poisson random measure: time `s`, level `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub s: f64,
    pub u: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a 32-byte generator key from a list of words.
pub(crate) fn derive_key(words: &[u64]) -> [u8; 32] {
    let mut acc = 0x6d73_676e_5052_4d31u64;
    for &w in words {
        acc = splitmix64(acc ^ splitmix64(w));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        let word = splitmix64(acc.wrapping_add((i as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    key
}

/// Handle to one realization of a Poisson random measure `Q_r`.
///
/// Cheap to clone; carries no mutable state.
#[derive(Debug, Clone)]
pub struct PrmStream {
    seed: u64,
    replica: u64,
    reaction: String,
    id_hash: u64,
    base_level: f64,
    window: f64,
}

impl PrmStream {
    pub fn new(seed: u64, replica: u64, reaction_id: &str) -> Self {
        Self::with_geometry(seed, replica, reaction_id, DEFAULT_BASE_LEVEL, DEFAULT_WINDOW)
    }

    /// Stream with a custom strip-0 height `Λ₀` and window width `w`.
    pub fn with_geometry(
        seed: u64,
        replica: u64,
        reaction_id: &str,
        base_level: f64,
        window: f64,
    ) -> Self {
        assert!(base_level > 0.0 && base_level.is_finite(), "base level must be positive");
        assert!(window > 0.0 && window.is_finite(), "window must be positive");
        PrmStream {
            seed,
            replica,
            reaction: reaction_id.to_string(),
            id_hash: fnv1a(reaction_id.as_bytes()),
            base_level,
            window,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    pub fn reaction_id(&self) -> &str {
        &self.reaction
    }

    /// Level range `(lo, hi]` of strip `k` (strip 0 is `[0, Λ₀]`).
    pub fn strip_bounds(&self, k: u32) -> (f64, f64) {
        if k == 0 {
            (0.0, self.base_level)
        } else {
            let hi = self.base_level * 2f64.powi(k as i32);
            (hi / 2.0, hi)
        }
    }

    /// Smallest strip whose upper edge reaches `level`.
    pub fn strip_for_level(&self, level: f64) -> u32 {
        let mut k = 0;
        while k < MAX_STRIP && self.strip_bounds(k).1 < level {
            k += 1;
        }
        k
    }

    fn window_of(&self, t: f64) -> u64 {
        if t <= 0.0 {
            0
        } else {
            (t / self.window).floor() as u64
        }
    }

    /// All points of cell `(strip, window)`, sorted by time.
    pub fn cell(&self, strip: u32, window: u64) -> Vec<Point> {
        let key = derive_key(&[self.seed, self.replica, self.id_hash, u64::from(strip), window]);
        let mut rng = ChaCha8Rng::from_seed(key);
        let (lo, hi) = self.strip_bounds(strip);
        let area = (hi - lo) * self.window;
        let count = Poisson::new(area)
            .map(|p| p.sample(&mut rng) as usize)
            .unwrap_or(0);
        let t0 = window as f64 * self.window;
        let mut pts: Vec<Point> = (0..count)
            .map(|_| {
                let s = t0 + self.window * rng.random::<f64>();
                let u = lo + (hi - lo) * rng.random::<f64>();
                Point { s, u }
            })
            .collect();
        pts.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.u.total_cmp(&b.u)));
        pts
    }

    /// Points with `t0 < s <= t1` and `u <= level`, sorted by time.
    pub fn query(&self, t0: f64, t1: f64, level: f64) -> Vec<Point> {
        if !(level > 0.0) || !(t1 > t0) || t1 <= 0.0 {
            return Vec::new();
        }
        let top = self.strip_for_level(level);
        let mut out = Vec::new();
        for j in self.window_of(t0)..=self.window_of(t1) {
            for k in 0..=top {
                out.extend(
                    self.cell(k, j)
                        .into_iter()
                        .filter(|p| p.s > t0 && p.s <= t1 && p.u <= level),
                );
            }
        }
        out.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.u.total_cmp(&b.u)));
        out
    }

    /// Earliest point with `s > t` and `u <= level`; `None` when `level` is 0.
    pub fn next_point(&self, t: f64, level: f64) -> Option<Point> {
        self.cursor().next_point(t, level, f64::INFINITY)
    }

    pub fn cursor(&self) -> PrmCursor {
        PrmCursor::new(self.clone())
    }
}

#[derive(Debug)]
struct MergedCell {
    points: Vec<Point>,
    hint: usize,
}

/// Incremental reader over a stream for event loops.
///
/// Caches the merged points of strips `0..=K` per time window so that
/// repeated queries with slowly moving `t` and level are cheap. The cache
/// only affects speed: answers are always those of [`PrmStream::query`].
#[derive(Debug)]
pub struct PrmCursor {
    stream: PrmStream,
    cache: HashMap<(u64, u32), MergedCell>,
    oldest: u64,
}

impl PrmCursor {
    pub fn new(stream: PrmStream) -> Self {
        PrmCursor {
            stream,
            cache: HashMap::new(),
            oldest: 0,
        }
    }

    pub fn stream(&self) -> &PrmStream {
        &self.stream
    }

    fn evict_before(&mut self, window: u64) {
        if window > self.oldest + 1 {
            let keep = window - 1;
            self.cache.retain(|(j, _), _| *j >= keep);
            self.oldest = keep;
        }
    }

    fn merged(&mut self, window: u64, top: u32) -> &mut MergedCell {
        let stream = &self.stream;
        self.cache.entry((window, top)).or_insert_with(|| {
            let mut points = Vec::new();
            for k in 0..=top {
                points.extend(stream.cell(k, window));
            }
            points.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.u.total_cmp(&b.u)));
            MergedCell { points, hint: 0 }
        })
    }

    /// Earliest point with `t < s <= horizon` and `u <= level`.
    pub fn next_point(&mut self, t: f64, level: f64, horizon: f64) -> Option<Point> {
        if !(level > 0.0) || !(horizon > t) {
            return None;
        }
        let top = self.stream.strip_for_level(level);
        let width = self.stream.window;
        let mut j = self.stream.window_of(t);
        self.evict_before(j);
        loop {
            if j as f64 * width > horizon {
                return None;
            }
            let cell = self.merged(j, top);
            let pts = &cell.points;
            let mut i = cell.hint.min(pts.len());
            if i > 0 && pts[i - 1].s > t {
                i = pts.partition_point(|p| p.s <= t);
            } else {
                while i < pts.len() && pts[i].s <= t {
                    i += 1;
                }
            }
            cell.hint = i;
            for p in &pts[i..] {
                if p.s > horizon {
                    return None;
                }
                if p.u <= level {
                    return Some(*p);
                }
            }
            j += 1;
        }
    }
}
