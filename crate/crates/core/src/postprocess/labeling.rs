use crate::imaging::Plane;
use crate::par;

use super::PostprocessError;

/// Foreground/background mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, PostprocessError> {
        if bits.len() != width as usize * height as usize {
            return Err(PostprocessError::DimensionMismatch(format!("{} mask bits for {width}x{height}", bits.len())));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let bits = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Foreground wherever `fg_prob >= t`.
pub fn threshold_mask(fg_prob: &Plane, t: f64) -> BinaryMask {
    let bits = par::map(fg_prob.values(), |v| f64::from(*v) >= t);
    BinaryMask { width: fg_prob.width(), height: fg_prob.height(), bits }
}

/// Per-pixel component labels; 0 is background and labels run `1..=count`
/// in raster order of each component's first pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    count: u32,
}

impl LabelMap {
    /// Checks that the labels used are exactly `0..=max`.
    pub fn new(width: u32, height: u32, labels: Vec<u32>) -> Result<Self, PostprocessError> {
        if labels.len() != width as usize * height as usize {
            return Err(PostprocessError::DimensionMismatch(format!("{} labels for {width}x{height}", labels.len())));
        }
        let count = labels.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; count as usize + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if seen.iter().skip(1).any(|s| !s) {
            return Err(PostprocessError::InvalidParams("label values are not contiguous".into()));
        }
        Ok(Self { width, height, labels, count })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, labels: vec![0; width as usize * height as usize], count: 0 }
    }

    pub(crate) fn from_raw(width: u32, height: u32, labels: Vec<u32>, count: u32) -> Self {
        Self { width, height, labels, count }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Number of components.
    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    /// Pixel count per label; index 0 holds label 1.
    pub fn areas(&self) -> Vec<u64> {
        let mut areas = vec![0u64; self.count as usize];
        for &l in &self.labels {
            if l > 0 {
                areas[l as usize - 1] += 1;
            }
        }
        areas
    }

    pub fn foreground_pixels(&self) -> u64 {
        self.labels.iter().filter(|l| **l > 0).count() as u64
    }
}

/// Rows labelled independently before strips are merged.
const STRIP_ROWS: usize = 64;

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect() }
    }

    fn add(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

struct StripLabels {
    /// Compact local labels for the strip's pixels.
    labels: Vec<u32>,
    /// Global pixel index of each local label's first pixel.
    first: Vec<usize>,
}

/// Two-pass union-find labeling of rows `y0..y1`, 8-connected.
fn label_strip(mask: &BinaryMask, y0: usize, y1: usize) -> StripLabels {
    let w = mask.width as usize;
    let bits = &mask.bits[y0 * w..y1 * w];
    let mut prov = vec![0u32; bits.len()];
    let mut uf = UnionFind::new(1);
    for y in 0..(y1 - y0) {
        for x in 0..w {
            let i = y * w + x;
            if !bits[i] {
                continue;
            }
            let mut label = 0u32;
            let mut join = |n: u32, uf: &mut UnionFind| {
                if n != 0 {
                    if label == 0 {
                        label = n;
                    } else {
                        uf.union(label, n);
                    }
                }
            };
            if x > 0 {
                join(prov[i - 1], &mut uf);
            }
            if y > 0 {
                let up = i - w;
                if x > 0 {
                    join(prov[up - 1], &mut uf);
                }
                join(prov[up], &mut uf);
                if x + 1 < w {
                    join(prov[up + 1], &mut uf);
                }
            }
            prov[i] = if label == 0 { uf.add() } else { label };
        }
    }
    let mut compact = vec![0u32; uf.parent.len()];
    let mut first = Vec::new();
    for (i, p) in prov.iter_mut().enumerate() {
        if *p == 0 {
            continue;
        }
        let root = uf.find(*p) as usize;
        if compact[root] == 0 {
            first.push(y0 * w + i);
            compact[root] = first.len() as u32;
        }
        *p = compact[root];
    }
    StripLabels { labels: prov, first }
}

/// 8-connected component labeling.
///
/// Row strips are labelled independently (in parallel when enabled), joined
/// across strip borders with a union-find pass, and finally renumbered in
/// raster order of each component's first pixel, so the output does not
/// depend on the strip layout or thread count.
pub fn label_components(mask: &BinaryMask) -> LabelMap {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let n_strips = h.div_ceil(STRIP_ROWS);
    let strips = par::map_range(n_strips, |s| label_strip(mask, s * STRIP_ROWS, ((s + 1) * STRIP_ROWS).min(h)));

    let mut offsets = Vec::with_capacity(n_strips);
    let mut total = 0u32;
    for s in &strips {
        offsets.push(total);
        total += s.first.len() as u32;
    }
    if total == 0 {
        return LabelMap::empty(mask.width, mask.height);
    }

    let mut uf = UnionFind::new(total as usize + 1);
    for s in 1..n_strips {
        let above = &strips[s - 1].labels;
        let above_row = &above[above.len() - w..];
        let below_row = &strips[s].labels[..w];
        for (x, &b) in below_row.iter().enumerate() {
            if b == 0 {
                continue;
            }
            for &a in &above_row[x.saturating_sub(1)..=(x + 1).min(w - 1)] {
                if a != 0 {
                    uf.union(offsets[s - 1] + a, offsets[s] + b);
                }
            }
        }
    }

    let mut first_of_root = vec![usize::MAX; total as usize + 1];
    for (s, strip) in strips.iter().enumerate() {
        for (k, &first) in strip.first.iter().enumerate() {
            let root = uf.find(offsets[s] + k as u32 + 1) as usize;
            first_of_root[root] = first_of_root[root].min(first);
        }
    }
    let mut roots: Vec<(usize, u32)> =
        first_of_root.iter().enumerate().filter(|(_, f)| **f != usize::MAX).map(|(r, f)| (*f, r as u32)).collect();
    roots.sort_unstable();
    let mut final_of_root = vec![0u32; total as usize + 1];
    for (id, (_, root)) in roots.iter().enumerate() {
        final_of_root[*root as usize] = id as u32 + 1;
    }
    let final_of: Vec<u32> = (0..=total).map(|p| if p == 0 { 0 } else { final_of_root[uf.find(p) as usize] }).collect();

    let mut labels = vec![0u32; w * h];
    par::rows_mut(&mut labels, STRIP_ROWS * w, |s, out| {
        let offset = offsets[s];
        for (o, &local) in out.iter_mut().zip(&strips[s].labels) {
            if local != 0 {
                *o = final_of[(offset + local) as usize];
            }
        }
    });
    LabelMap::from_raw(mask.width, mask.height, labels, roots.len() as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Flood-fill labeling used as an independent reference.
    pub(crate) fn flood_fill_labels(mask: &BinaryMask) -> Vec<u32> {
        let (w, h) = (mask.width as i64, mask.height as i64);
        let mut out = vec![0u32; (w * h) as usize];
        let mut next = 0;
        for start in 0..(w * h) as usize {
            if !mask.bits[start] || out[start] != 0 {
                continue;
            }
            next += 1;
            out[start] = next;
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                let (x, y) = (i as i64 % w, i as i64 / w);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let j = (ny * w + nx) as usize;
                        if mask.bits[j] && out[j] == 0 {
                            out[j] = next;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        out
    }

    fn squares(w: u32, h: u32, origins: &[(u32, u32)], side: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            origins.iter().any(|&(ox, oy)| x >= ox && x < ox + side && y >= oy && y < oy + side)
        })
    }

    #[test]
    fn threshold_tie_and_bounds() {
        let p = Plane::constant(4, 4, 0.4);
        assert_eq!(threshold_mask(&p, 0.5).count(), 0);
        assert_eq!(threshold_mask(&p, 0.0).count(), 16);
        assert_eq!(threshold_mask(&Plane::constant(2, 2, 0.5), 0.5).count(), 4);
        assert_eq!(threshold_mask(&Plane::zeros(3, 3), 0.0).count(), 9);
    }

    #[test]
    fn two_disjoint_squares() {
        let lm = label_components(&squares(12, 12, &[(0, 0), (6, 6)], 3));
        assert_eq!(lm.count(), 2);
        assert_eq!(lm.get(0, 0), 1);
        assert_eq!(lm.get(7, 7), 2);
    }

    #[test]
    fn empty_mask() {
        assert_eq!(label_components(&BinaryMask::from_fn(5, 5, |_, _| false)).count(), 0);
    }

    #[test]
    fn diagonal_touch_is_one_component() {
        let lm = label_components(&BinaryMask::from_fn(2, 2, |x, y| x == y));
        assert_eq!(lm.count(), 1);
    }

    #[test]
    fn components_spanning_strips_merge() {
        // A U shape whose arms only join below the first strip boundary, and a
        // diagonal line crossing several strips.
        let h = 3 * STRIP_ROWS as u32 + 5;
        let mask = BinaryMask::from_fn(40, h, |x, y| {
            let u = (x == 2 || x == 10) && y < h - 2 || (y == h - 2 && (2..=10).contains(&x));
            let diag = x == 20 + (y % 2) && y > 3;
            u || diag
        });
        let lm = label_components(&mask);
        assert_eq!(lm.count(), 2);
        assert_eq!(lm.labels(), flood_fill_labels(&mask).as_slice());
    }

    #[test]
    fn matches_flood_fill_on_noise() {
        let mut state = 12345u64;
        for density in [0.2, 0.45, 0.6] {
            let mask = BinaryMask::from_fn(97, 203, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) < density
            });
            let lm = label_components(&mask);
            assert_eq!(lm.labels(), flood_fill_labels(&mask).as_slice(), "density {density}");
            LabelMap::new(lm.width(), lm.height(), lm.labels().to_vec()).unwrap();
        }
    }

    #[test]
    fn label_map_rejects_gaps() {
        assert!(LabelMap::new(3, 1, vec![0, 2, 2]).is_err());
        assert!(LabelMap::new(3, 1, vec![0, 1, 2]).is_ok());
        assert!(LabelMap::new(2, 1, vec![0, 1, 2]).is_err());
    }
}
