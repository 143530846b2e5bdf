//! Space-time cone of sites reachable by the simple random walk.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

/// Reachable sites `{(i, x): x reachable from 0 in exactly i steps}` for
/// `i = 0..=n`, stored slice by slice in lexicographic order, together with
/// the predecessor lists used by transfer sweeps.
#[derive(Debug)]
pub struct Cone {
    n: usize,
    d: usize,
    coords: Vec<i32>,
    offsets: Vec<usize>,
    pred_offsets: Vec<usize>,
    preds: Vec<u32>,
    lookup: Vec<HashMap<Vec<i32>, u32>>,
}

impl Cone {
    pub fn new(n: usize, d: usize) -> Self {
        assert!(d >= 1, "dimension must be at least 1");
        let mut coords: Vec<i32> = vec![0; d];
        let mut offsets = vec![0usize, 1];
        let mut pred_offsets = vec![0usize, 0];
        let mut preds: Vec<u32> = Vec::new();
        let mut lookup = Vec::new();
        if d >= 2 {
            let mut m = HashMap::new();
            m.insert(vec![0; d], 0u32);
            lookup.push(m);
        }
        for i in 1..=n {
            if d == 1 {
                for j in 0..=i {
                    coords.push(2 * j as i32 - i as i32);
                    if j >= 1 {
                        preds.push((j - 1) as u32);
                    }
                    if j + 1 <= i {
                        preds.push(j as u32);
                    }
                    pred_offsets.push(preds.len());
                }
            } else {
                let prev = &lookup[i - 1];
                let mut next: BTreeSet<Vec<i32>> = BTreeSet::new();
                for p in prev.keys() {
                    for k in 0..d {
                        for s in [-1, 1] {
                            let mut q = p.clone();
                            q[k] += s;
                            next.insert(q);
                        }
                    }
                }
                let mut m = HashMap::with_capacity(next.len());
                for (local, q) in next.into_iter().enumerate() {
                    let mut ps = Vec::with_capacity(2 * d);
                    for k in 0..d {
                        for s in [-1, 1] {
                            let mut r = q.clone();
                            r[k] -= s;
                            if let Some(&li) = prev.get(&r) {
                                ps.push(li);
                            }
                        }
                    }
                    ps.sort_unstable();
                    preds.extend(ps);
                    pred_offsets.push(preds.len());
                    coords.extend_from_slice(&q);
                    m.insert(q, local as u32);
                }
                lookup.push(m);
            }
            offsets.push(coords.len() / d);
        }
        Cone { n, d, coords, offsets, pred_offsets, preds, lookup }
    }

    /// Process-wide cache; cones are immutable once built.
    pub fn shared(n: usize, d: usize) -> Arc<Cone> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Cone>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("cone cache poisoned");
        guard.entry((n, d)).or_insert_with(|| Arc::new(Cone::new(n, d))).clone()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn slice_len(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Global index of the first site of slice `i`.
    pub fn slice_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn total_points(&self) -> usize {
        self.offsets[self.n + 1]
    }

    /// Number of disorder sites (slices `1..=n`).
    pub fn site_count(&self) -> usize {
        self.total_points() - 1
    }

    pub fn point(&self, i: usize, local: usize) -> &[i32] {
        let g = self.offsets[i] + local;
        &self.coords[g * self.d..(g + 1) * self.d]
    }

    pub fn points(&self, i: usize) -> impl Iterator<Item = &[i32]> {
        (0..self.slice_len(i)).map(move |j| self.point(i, j))
    }

    /// Local indices in slice `i - 1` of the neighbours of site `(i, local)`.
    #[inline]
    pub fn preds(&self, i: usize, local: usize) -> &[u32] {
        let g = self.offsets[i] + local;
        &self.preds[self.pred_offsets[g]..self.pred_offsets[g + 1]]
    }

    /// Local index of `p` in slice `i`, if reachable.
    pub fn index(&self, i: usize, p: &[i32]) -> Option<usize> {
        if i > self.n || p.len() != self.d {
            return None;
        }
        if self.d == 1 {
            let x = p[0] as i64;
            let i = i as i64;
            if x.abs() > i || (x + i) % 2 != 0 {
                return None;
            }
            Some(((x + i) / 2) as usize)
        } else {
            self.lookup[i].get(p).map(|&l| l as usize)
        }
    }
}

/// `|L_m|`-style count of points reachable in exactly `i` steps in dimension `d`.
pub fn reachable_count(i: usize, d: usize) -> usize {
    if d == 1 {
        i + 1
    } else {
        Cone::shared(i, d).slice_len(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_slices() {
        let c = Cone::new(3, 1);
        assert_eq!(c.slice_len(0), 1);
        assert_eq!(c.slice_len(2), 3);
        assert_eq!(c.points(2).map(|p| p[0]).collect::<Vec<_>>(), vec![-2, 0, 2]);
        assert_eq!(c.preds(2, 0), &[0]);
        assert_eq!(c.preds(2, 1), &[0, 1]);
        assert_eq!(c.index(3, &[1]), Some(2));
        assert_eq!(c.index(3, &[0]), None);
        assert_eq!(c.site_count(), 2 + 3 + 4);
    }

    #[test]
    fn two_dimensional_slices() {
        let c = Cone::new(2, 2);
        assert_eq!(c.slice_len(1), 4);
        // (i + 1)^2 points of matching parity
        assert_eq!(c.slice_len(2), 9);
        let origin = c.index(2, &[0, 0]).unwrap();
        assert_eq!(c.preds(2, origin).len(), 4);
        let corner = c.index(2, &[2, 0]).unwrap();
        assert_eq!(c.preds(2, corner).len(), 1);
    }

    #[test]
    fn d1_and_generic_agree_in_count() {
        for i in 0..6 {
            assert_eq!(reachable_count(i, 1), i + 1);
        }
        assert_eq!(reachable_count(3, 2), 16);
    }
}
