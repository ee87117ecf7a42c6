use serde::{Deserialize, Serialize};

/// Residue norms below this are treated as "already in the span".
pub const DEGENERATE_RESIDUE: f64 = 1e-8;

/// Up to `capacity` orthonormal vectors of dimension `dim`, with the aging
/// state used to throttle vector replacement.
///
/// Vectors are stored in single precision; every projection and
/// orthogonalization is carried out in double precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    dim: usize,
    slots: Vec<Option<Vec<f32>>>,
    counters: Vec<u64>,
    age: u64,
    max_age: u64,
}

/// Projection of a hashed vector on a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `v_j . h` for each non-zero slot, in slot order.
    pub coeffs: Vec<f64>,
    pub projection: Vec<f32>,
    pub residue: Vec<f32>,
    /// `||projection||_2`, equal to the norm of `coeffs`.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpandOutcome {
    Expanded { slot: usize },
    Full,
    AboveThreshold,
    /// The residue vanished; nothing to add.
    Degenerate,
    /// Expansion needs at least one vector to extend.
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    /// Age advanced and `slot`'s low-projection counter was incremented.
    Aged { slot: usize },
    Replaced { slot: usize },
    /// Replacement was due but the new residue vanished.
    ReplacementSkipped { slot: usize },
    Empty,
}

impl Basis {
    pub fn new(dim: usize, capacity: usize, initial_max_age: u64) -> Self {
        Self {
            dim,
            slots: vec![None; capacity],
            counters: vec![0; capacity],
            age: 0,
            max_age: initial_max_age,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn nonzero_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(|s| s.is_none())
    }

    pub fn is_full(&self) -> bool {
        self.slots.iter().all(|s| s.is_some())
    }

    pub fn age(&self) -> u64 {
        self.age
    }

    pub fn max_age(&self) -> u64 {
        self.max_age
    }

    pub fn counters(&self) -> &[u64] {
        &self.counters
    }

    pub fn slot(&self, i: usize) -> Option<&[f32]> {
        self.slots.get(i).and_then(|s| s.as_deref())
    }

    /// Non-zero vectors in slot order.
    pub fn vectors(&self) -> impl Iterator<Item = (usize, &[f32])> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_deref().map(|v| (i, v)))
    }

    /// Owned copies of the non-zero vectors, in slot order.
    pub fn active_vectors(&self) -> Vec<Vec<f32>> {
        self.vectors().map(|(_, v)| v.to_vec()).collect()
    }

    pub fn project(&self, h: &[f32]) -> Projection {
        let mut proj = vec![0.0f64; self.dim];
        let mut coeffs = Vec::with_capacity(self.nonzero_count());
        for (_, v) in self.vectors() {
            let c = dot32(v, h);
            for (p, e) in proj.iter_mut().zip(v) {
                *p += c * *e as f64;
            }
            coeffs.push(c);
        }
        let magnitude = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        let residue = h.iter().zip(&proj).map(|(a, p)| (*a as f64 - p) as f32).collect();
        Projection {
            coeffs,
            projection: proj.into_iter().map(|p| p as f32).collect(),
            residue,
            magnitude,
        }
    }

    /// `||B h||_2` without materializing the projection.
    pub fn projection_magnitude(&self, h: &[f32]) -> f64 {
        self.vectors().map(|(_, v)| dot32(v, h).powi(2)).sum::<f64>().sqrt()
    }

    /// Resets the basis to the single vector `h` (normalized).
    pub fn initialize(&mut self, h: &[f32]) {
        let cap = self.capacity();
        self.slots = vec![None; cap];
        self.counters = vec![0; cap];
        if cap == 0 {
            return;
        }
        let v: Vec<f64> = h.iter().map(|x| *x as f64).collect();
        let n = norm(&v);
        if n > 0.0 {
            self.slots[0] = Some(v.iter().map(|x| (x / n) as f32).collect());
        }
    }

    /// Appends the normalized residue of `h` when the projection magnitude is
    /// strictly below `threshold` and a zero slot is left.
    pub fn expand(&mut self, h: &[f32], threshold: f64) -> ExpandOutcome {
        if self.is_empty() {
            return ExpandOutcome::Empty;
        }
        if self.is_full() {
            return ExpandOutcome::Full;
        }
        if self.projection_magnitude(h) >= threshold {
            return ExpandOutcome::AboveThreshold;
        }
        let others: Vec<&[f32]> = self.vectors().map(|(_, v)| v).collect();
        let Some(v) = orthonormal_residue(h, &others) else {
            return ExpandOutcome::Degenerate;
        };
        let slot = self.slots.iter().position(|s| s.is_none()).expect("not full");
        self.slots[slot] = Some(v);
        self.counters[slot] = 0;
        ExpandOutcome::Expanded { slot }
    }

    /// One step of the aging update.
    ///
    /// Below the maximum age, the age advances and the vector least aligned
    /// with `h` has its low-projection counter bumped. At the maximum age, the
    /// vector with the highest counter is replaced by the normalized residue
    /// of `h` on the remaining vectors, the maximum age grows to
    /// `ceil(rate * max_age)`, and the age resets.
    pub fn update(&mut self, h: &[f32], rate: f64) -> UpdateOutcome {
        if self.is_empty() {
            return UpdateOutcome::Empty;
        }
        if self.age >= self.max_age {
            let slot = self
                .vectors()
                .map(|(i, _)| i)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if self.counters[b] >= self.counters[i] => Some(b),
                    _ => Some(i),
                })
                .expect("non-empty");
            let others: Vec<&[f32]> = self
                .vectors()
                .filter(|(i, _)| *i != slot)
                .map(|(_, v)| v)
                .collect();
            let outcome = match orthonormal_residue(h, &others) {
                Some(v) => {
                    self.slots[slot] = Some(v);
                    self.counters[slot] = 0;
                    UpdateOutcome::Replaced { slot }
                }
                None => UpdateOutcome::ReplacementSkipped { slot },
            };
            self.max_age = grow_age(self.max_age, rate);
            self.age = 0;
            outcome
        } else {
            self.age += 1;
            let slot = self
                .vectors()
                .map(|(i, v)| (i, dot32(v, h).abs()))
                .fold(None::<(usize, f64)>, |best, (i, a)| match best {
                    Some((_, b)) if b <= a => best,
                    _ => Some((i, a)),
                })
                .map(|(i, _)| i)
                .expect("non-empty");
            self.counters[slot] += 1;
            UpdateOutcome::Aged { slot }
        }
    }

    /// Largest entry of `|G - I|` over the non-zero vectors' Gram matrix.
    pub fn gram_deviation(&self) -> f64 {
        let vs: Vec<&[f32]> = self.vectors().map(|(_, v)| v).collect();
        let mut worst = 0.0f64;
        for (i, a) in vs.iter().enumerate() {
            for (j, b) in vs.iter().enumerate().skip(i) {
                let g: f64 = a.iter().zip(b.iter()).map(|(x, y)| *x as f64 * *y as f64).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Restores a basis from serialized parts.
    pub(crate) fn from_parts(
        dim: usize,
        slots: Vec<Option<Vec<f32>>>,
        counters: Vec<u64>,
        age: u64,
        max_age: u64,
    ) -> Self {
        Self { dim, slots, counters, age, max_age }
    }

    /// Overwrites the aging state; for tests and replay tooling.
    pub fn set_aging(&mut self, age: u64, max_age: u64, counters: &[u64]) {
        self.age = age;
        self.max_age = max_age;
        for (c, v) in self.counters.iter_mut().zip(counters) {
            *c = *v;
        }
        for (i, s) in self.slots.iter().enumerate() {
            if s.is_none() {
                self.counters[i] = 0;
            }
        }
    }

    /// Places `v` (normalized) in the first zero slot without any threshold
    /// test; `v` must already be orthogonal to the current vectors.
    pub fn push_vector(&mut self, v: &[f32]) -> Option<usize> {
        let slot = self.slots.iter().position(|s| s.is_none())?;
        let w: Vec<f64> = v.iter().map(|x| *x as f64).collect();
        let n = norm(&w);
        if n == 0.0 {
            return None;
        }
        self.slots[slot] = Some(w.iter().map(|x| (x / n) as f32).collect());
        Some(slot)
    }
}

/// `ceil(rate * age)`, ignoring floating-point fuzz just above an integer.
fn grow_age(age: u64, rate: f64) -> u64 {
    let grown = rate * age as f64;
    let rounded = grown.round();
    let next = if (grown - rounded).abs() < 1e-9 { rounded } else { grown.ceil() };
    (next as u64).max(1)
}

fn dot32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Normalized component of `h` orthogonal to `others`, or `None` when it
/// vanishes. Uses two Gram-Schmidt passes so the result stays orthogonal to
/// working precision even when `h` is nearly in the span.
fn orthonormal_residue(h: &[f32], others: &[&[f32]]) -> Option<Vec<f32>> {
    let mut r: Vec<f64> = h.iter().map(|x| *x as f64).collect();
    let h_norm = norm(&r);
    for _ in 0..2 {
        for v in others {
            let c: f64 = v.iter().zip(&r).map(|(a, b)| *a as f64 * b).sum();
            for (e, a) in r.iter_mut().zip(v.iter()) {
                *e -= c * *a as f64;
            }
        }
    }
    let n = norm(&r);
    if n < DEGENERATE_RESIDUE || n <= h_norm * 1e-12 {
        return None;
    }
    Some(r.iter().map(|x| (x / n) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(dim: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn empty_basis_projection() {
        let b = Basis::new(8, 3, 4);
        let h = e(8, 2);
        let p = b.project(&h);
        assert_eq!(p.magnitude, 0.0);
        assert_eq!(p.residue, h);
        assert!(p.projection.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn basis_vector_projects_fully() {
        let mut b = Basis::new(8, 3, 4);
        b.initialize(&e(8, 1));
        b.push_vector(&e(8, 4));
        let p = b.project(&e(8, 4));
        assert!((p.magnitude - 1.0).abs() < 1e-12);
        assert!(p.residue.iter().all(|v| v.abs() < 1e-7));
    }

    #[test]
    fn expand_hand_gram_schmidt() {
        let mut b = Basis::new(4, 3, 4);
        b.initialize(&e(4, 0));
        let r = std::f32::consts::FRAC_1_SQRT_2;
        let h = vec![r, r, 0.0, 0.0];
        assert_eq!(b.expand(&h, 0.9), ExpandOutcome::Expanded { slot: 1 });
        let v = b.slot(1).unwrap();
        for (a, want) in v.iter().zip(e(4, 1)) {
            assert!((a - want).abs() < 1e-6);
        }
    }

    #[test]
    fn expand_no_ops() {
        let mut b = Basis::new(4, 2, 4);
        b.initialize(&e(4, 0));
        let h = vec![0.8, 0.6, 0.0, 0.0];
        assert_eq!(b.expand(&h, 0.8), ExpandOutcome::AboveThreshold);
        assert_eq!(b.expand(&h, 0.81), ExpandOutcome::Expanded { slot: 1 });
        // full now
        assert_eq!(b.expand(&e(4, 3), 2.0), ExpandOutcome::Full);
        let mut b = Basis::new(4, 2, 4);
        b.initialize(&e(4, 0));
        assert_eq!(b.expand(&e(4, 0), 2.0), ExpandOutcome::Degenerate);
        assert_eq!(Basis::new(4, 2, 4).expand(&e(4, 0), 2.0), ExpandOutcome::Empty);
    }

    #[test]
    fn update_ages_and_counts_least_aligned() {
        let mut b = Basis::new(4, 3, 4);
        b.initialize(&e(4, 0));
        b.push_vector(&e(4, 1));
        let h = vec![0.9, 0.3, 0.3162, 0.0];
        assert_eq!(b.update(&h, 1.2), UpdateOutcome::Aged { slot: 1 });
        assert_eq!(b.age(), 1);
        assert_eq!(b.counters(), &[0, 1, 0]);
    }

    #[test]
    fn update_grows_max_age_by_ceiling() {
        let mut b = Basis::new(4, 3, 4);
        b.initialize(&e(4, 0));
        b.set_aging(4, 4, &[0, 0, 0]);
        b.update(&e(4, 2), 1.2);
        assert_eq!(b.max_age(), 5);
        assert_eq!(b.age(), 0);
        assert_eq!(grow_age(5, 1.2), 6);
        assert_eq!(grow_age(10, 1.5), 15);
        assert_eq!(grow_age(1, 1.01), 2);
    }

    #[test]
    fn update_replaces_highest_counter() {
        let mut b = Basis::new(4, 3, 4);
        b.initialize(&e(4, 0));
        b.push_vector(&e(4, 1));
        b.set_aging(4, 4, &[3, 1]);
        assert_eq!(b.update(&e(4, 2), 1.2), UpdateOutcome::Replaced { slot: 0 });
        assert_eq!(b.slot(0).unwrap(), e(4, 2).as_slice());
        assert_eq!(b.slot(1).unwrap(), e(4, 1).as_slice());
        assert_eq!(b.counters(), &[0, 1, 0]);
        assert!(b.gram_deviation() < 1e-7);
    }

    #[test]
    fn degenerate_replacement_still_ages() {
        let mut b = Basis::new(4, 3, 2);
        b.initialize(&e(4, 0));
        b.push_vector(&e(4, 1));
        b.set_aging(2, 2, &[0, 5]);
        // h lies in span of the vector that stays (slot 0).
        assert_eq!(b.update(&e(4, 0), 2.0), UpdateOutcome::ReplacementSkipped { slot: 1 });
        assert_eq!(b.slot(1).unwrap(), e(4, 1).as_slice());
        assert_eq!((b.age(), b.max_age()), (0, 4));
    }

    #[test]
    fn ties_break_toward_lowest_slot() {
        let mut b = Basis::new(4, 3, 1);
        b.initialize(&e(4, 0));
        b.push_vector(&e(4, 1));
        // equal alignment with both vectors
        assert_eq!(b.update(&e(4, 2), 2.0), UpdateOutcome::Aged { slot: 0 });
        // counters (1, 0) -> now age == max_age; reset counters to a tie
        b.set_aging(1, 1, &[2, 2]);
        assert_eq!(b.update(&e(4, 3), 2.0), UpdateOutcome::Replaced { slot: 0 });
    }
}
