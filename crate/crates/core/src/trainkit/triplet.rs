use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datakit::WindowSegment;
use crate::nncore::{Matrix, Real};
use crate::{Error, Result};

/// Indices into the segment list the triplet was mined from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub is_subject_triplet: bool,
}

impl Triplet {
    /// Checks class, overlap and (for subject triplets) subject constraints.
    pub fn is_valid(&self, segments: &[WindowSegment]) -> bool {
        let (a, p, n) = (
            &segments[self.anchor],
            &segments[self.positive],
            &segments[self.negative],
        );
        let classes = a.activity_id == p.activity_id && a.activity_id != n.activity_id;
        let disjoint = self.anchor != self.positive && !a.overlaps(p);
        let subject = !self.is_subject_triplet
            || (a.subject_id == p.subject_id && a.subject_id == n.subject_id);
        classes && disjoint && subject
    }
}

/// Sum over rows of `max(|a - p|^2 - |a - n|^2 + margin, 0)` and its
/// gradients w.r.t. each embedding matrix (zero for inactive rows).
#[allow(clippy::type_complexity)]
pub fn triplet_loss<T: Real>(
    a: &Matrix<T>,
    p: &Matrix<T>,
    n: &Matrix<T>,
    margin: f64,
) -> Result<(f64, Matrix<T>, Matrix<T>, Matrix<T>)> {
    if a.rows != p.rows || a.rows != n.rows || a.cols != p.cols || a.cols != n.cols {
        return Err(Error::Shape(format!(
            "triplet embeddings {}x{}, {}x{}, {}x{}",
            a.rows, a.cols, p.rows, p.cols, n.rows, n.cols
        )));
    }
    let mut da = Matrix::zeros(a.rows, a.cols);
    let mut dp = Matrix::zeros(a.rows, a.cols);
    let mut dn = Matrix::zeros(a.rows, a.cols);
    let mut loss = 0.0;
    let two = T::cast(2.0);
    for r in 0..a.rows {
        let (ar, pr, nr) = (a.row(r), p.row(r), n.row(r));
        let dap: f64 = ar.iter().zip(pr).map(|(x, y)| (*x - *y).as_f64().powi(2)).sum();
        let dan: f64 = ar.iter().zip(nr).map(|(x, y)| (*x - *y).as_f64().powi(2)).sum();
        let v = dap - dan + margin;
        if v > 0.0 {
            loss += v;
            for c in 0..a.cols {
                da.row_mut(r)[c] = two * (nr[c] - pr[c]);
                dp.row_mut(r)[c] = two * (pr[c] - ar[c]);
                dn.row_mut(r)[c] = two * (ar[c] - nr[c]);
            }
        }
    }
    Ok((loss, da, dp, dn))
}

/// Index over a segment list for repeated triplet sampling.
pub struct TripletMiner<'a> {
    segments: &'a [WindowSegment],
    /// class -> segment indices
    by_class: BTreeMap<usize, Vec<usize>>,
    /// anchors with a non-overlapping positive anywhere in the set
    random_anchors: Vec<usize>,
    subjects: Vec<SubjectPool>,
}

struct SubjectPool {
    by_class: BTreeMap<usize, Vec<usize>>,
    anchors: Vec<usize>,
    members: Vec<usize>,
}

/// Members of `pool` that have at least one non-overlapping partner in it.
fn viable_anchors(segments: &[WindowSegment], pool: &[usize]) -> Vec<usize> {
    if pool.len() < 2 {
        return Vec::new();
    }
    let first = &segments[pool[0]].source_recording_id;
    if pool.iter().any(|&i| &segments[i].source_recording_id != first) {
        return pool.to_vec();
    }
    let max_start = pool.iter().map(|&i| segments[i].start_index).max().unwrap();
    let min_end = pool.iter().map(|&i| segments[i].end_index()).min().unwrap();
    pool.iter()
        .copied()
        .filter(|&i| max_start >= segments[i].end_index() || min_end <= segments[i].start_index)
        .collect()
}

impl<'a> TripletMiner<'a> {
    pub fn new(segments: &'a [WindowSegment]) -> Self {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut by_subject: BTreeMap<&str, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
        for (i, s) in segments.iter().enumerate() {
            by_class.entry(s.activity_id).or_default().push(i);
            by_subject
                .entry(&s.subject_id)
                .or_default()
                .entry(s.activity_id)
                .or_default()
                .push(i);
        }
        let random_anchors = if by_class.len() >= 2 {
            by_class
                .values()
                .flat_map(|pool| viable_anchors(segments, pool))
                .collect()
        } else {
            Vec::new()
        };
        let subjects = by_subject
            .into_values()
            .filter(|classes| classes.len() >= 2)
            .filter_map(|classes| {
                let anchors: Vec<usize> = classes
                    .values()
                    .flat_map(|pool| viable_anchors(segments, pool))
                    .collect();
                let members = classes.values().flatten().copied().collect();
                (!anchors.is_empty()).then_some(SubjectPool {
                    by_class: classes,
                    anchors,
                    members,
                })
            })
            .collect();
        TripletMiner {
            segments,
            by_class,
            random_anchors,
            subjects,
        }
    }

    fn pick_positive<R: Rng + ?Sized>(&self, anchor: usize, pool: &[usize], rng: &mut R) -> usize {
        let a = &self.segments[anchor];
        let ok = |j: usize| j != anchor && !a.overlaps(&self.segments[j]);
        for _ in 0..64 {
            let j = *pool.choose(rng).unwrap();
            if ok(j) {
                return j;
            }
        }
        let valid: Vec<usize> = pool.iter().copied().filter(|&j| ok(j)).collect();
        *valid.choose(rng).expect("anchor was checked to be viable")
    }

    fn pick_negative<R: Rng + ?Sized>(&self, class: usize, pool: &[usize], rng: &mut R) -> usize {
        for _ in 0..64 {
            let j = *pool.choose(rng).unwrap();
            if self.segments[j].activity_id != class {
                return j;
            }
        }
        let valid: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&j| self.segments[j].activity_id != class)
            .collect();
        *valid.choose(rng).expect("at least two classes")
    }

    /// Triplets drawn from the whole set, constrained only by class and
    /// anchor/positive overlap.
    pub fn random<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Triplet>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        if self.random_anchors.is_empty() {
            return Err(Error::InvalidInput(
                "no class has two non-overlapping segments alongside a second class".into(),
            ));
        }
        let all: Vec<usize> = (0..self.segments.len()).collect();
        Ok((0..count)
            .map(|_| {
                let anchor = *self.random_anchors.choose(rng).unwrap();
                let class = self.segments[anchor].activity_id;
                let positive = self.pick_positive(anchor, &self.by_class[&class], rng);
                let negative = self.pick_negative(class, &all, rng);
                Triplet {
                    anchor,
                    positive,
                    negative,
                    is_subject_triplet: false,
                }
            })
            .collect())
    }

    /// Single-subject triplets: a viable subject is drawn uniformly, then a
    /// valid triplet within that subject.
    pub fn subject<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Triplet>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        if self.subjects.is_empty() {
            return Err(Error::InvalidInput(
                "no subject has two classes with a valid anchor/positive pair".into(),
            ));
        }
        Ok((0..count)
            .map(|_| {
                let subj = self.subjects.choose(rng).unwrap();
                let anchor = *subj.anchors.choose(rng).unwrap();
                let class = self.segments[anchor].activity_id;
                let positive = self.pick_positive(anchor, &subj.by_class[&class], rng);
                let negative = self.pick_negative(class, &subj.members, rng);
                Triplet {
                    anchor,
                    positive,
                    negative,
                    is_subject_triplet: true,
                }
            })
            .collect())
    }

    /// `round(count * subject_ratio)` subject triplets plus random triplets
    /// for the rest, shuffled together.
    pub fn mixed<R: Rng + ?Sized>(
        &self,
        count: usize,
        subject_ratio: f64,
        rng: &mut R,
    ) -> Result<Vec<Triplet>> {
        if !(0.0..=1.0).contains(&subject_ratio) {
            return Err(Error::InvalidInput(format!(
                "subject triplet ratio {subject_ratio} outside [0, 1]"
            )));
        }
        let n_subject = (count as f64 * subject_ratio).round() as usize;
        let mut out = self.subject(n_subject, rng)?;
        out.extend(self.random(count - n_subject, rng)?);
        out.shuffle(rng);
        Ok(out)
    }
}

pub fn mine_random_triplets<R: Rng + ?Sized>(
    segments: &[WindowSegment],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    TripletMiner::new(segments).random(count, rng)
}

pub fn mine_subject_triplets<R: Rng + ?Sized>(
    segments: &[WindowSegment],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    TripletMiner::new(segments).subject(count, rng)
}
