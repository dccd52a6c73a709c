use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BinaryDescriptor;

/// Correspondence between a query (visible) and a train (infrared) feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    #[serde(rename = "q")]
    pub query_index: usize,
    #[serde(rename = "t")]
    pub train_index: usize,
    #[serde(rename = "dist")]
    pub distance: u32,
}

/// Index and distance of the nearest neighbor of `d` in `set`; ties go to the
/// lowest index.
fn nearest(d: &BinaryDescriptor, set: &[BinaryDescriptor]) -> Option<(usize, u32)> {
    let mut best: Option<(usize, u32)> = None;
    for (i, other) in set.iter().enumerate() {
        let dist = d.hamming(other);
        if best.is_none_or(|(_, b)| dist < b) {
            best = Some((i, dist));
        }
    }
    best
}

/// Mutual nearest neighbors under Hamming distance, independent of any
/// distance threshold. Sorted by query index.
pub fn mutual_matches(qd: &[BinaryDescriptor], td: &[BinaryDescriptor]) -> Vec<Match> {
    if qd.is_empty() || td.is_empty() {
        return Vec::new();
    }
    let q_best: Vec<(usize, u32)> = qd.par_iter().map(|d| nearest(d, td).unwrap()).collect();
    let t_best: Vec<usize> = td.par_iter().map(|d| nearest(d, qd).unwrap().0).collect();
    q_best
        .iter()
        .enumerate()
        .filter(|&(q, &(t, _))| t_best[t] == q)
        .map(|(q, &(t, distance))| Match {
            query_index: q,
            train_index: t,
            distance,
        })
        .collect()
}

/// Cross-checked nearest-neighbor matching keeping pairs whose Hamming
/// distance is at most `distance_threshold` bits.
pub fn match_descriptors(
    qd: &[BinaryDescriptor],
    td: &[BinaryDescriptor],
    distance_threshold: u32,
) -> Vec<Match> {
    let mut m = mutual_matches(qd, td);
    m.retain(|m| m.distance <= distance_threshold);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DESCRIPTOR_BITS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_desc(rng: &mut ChaCha8Rng) -> BinaryDescriptor {
        let mut d = BinaryDescriptor::zeroed();
        for b in 0..DESCRIPTOR_BITS {
            if rng.random_bool(0.5) {
                d.set(b);
            }
        }
        d
    }

    fn flip(d: &BinaryDescriptor, n: usize, rng: &mut ChaCha8Rng) -> BinaryDescriptor {
        let mut out = d.clone();
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < n {
            picked.insert(rng.random_range(0..DESCRIPTOR_BITS));
        }
        for b in picked {
            out.toggle(b);
        }
        out
    }

    #[test]
    fn identical_sets_match_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set: Vec<_> = (0..50).map(|_| random_desc(&mut rng)).collect();
        let m = match_descriptors(&set, &set, DESCRIPTOR_BITS as u32);
        assert_eq!(m.len(), 50);
        for (i, mm) in m.iter().enumerate() {
            assert_eq!((mm.query_index, mm.train_index, mm.distance), (i, i, 0));
        }
    }

    #[test]
    fn zero_threshold_keeps_exact_duplicates_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q: Vec<_> = (0..40).map(|_| random_desc(&mut rng)).collect();
        let mut t: Vec<_> = q.iter().map(|d| flip(d, 3, &mut rng)).collect();
        t[7] = q[7].clone();
        t[21] = q[21].clone();
        let m = match_descriptors(&q, &t, 0);
        let pairs: Vec<_> = m.iter().map(|m| (m.query_index, m.train_index)).collect();
        assert_eq!(pairs, vec![(7, 7), (21, 21)]);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set: Vec<_> = (0..5).map(|_| random_desc(&mut rng)).collect();
        assert!(match_descriptors(&[], &set, 100).is_empty());
        assert!(match_descriptors(&set, &[], 100).is_empty());
    }

    /// Exhaustive oracle: full distance table, row and column minima.
    fn brute_force(q: &[BinaryDescriptor], t: &[BinaryDescriptor], thr: u32) -> Vec<(usize, usize)> {
        let table: Vec<Vec<u32>> = q
            .iter()
            .map(|a| t.iter().map(|b| {
                (0..DESCRIPTOR_BITS).filter(|&i| a.bit(i) != b.bit(i)).count() as u32
            }).collect())
            .collect();
        let mut out = Vec::new();
        for (i, row) in table.iter().enumerate() {
            let (j, &d) = row.iter().enumerate().min_by_key(|&(j, &d)| (d, j)).unwrap();
            let col_best = (0..q.len()).min_by_key(|&ii| (table[ii][j], ii)).unwrap();
            if col_best == i && d <= thr {
                out.push((i, j));
            }
        }
        out
    }

    #[test]
    fn planted_pairs_recovered_among_distractors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let planted: Vec<_> = (0..100).map(|_| random_desc(&mut rng)).collect();
        let mut q = planted.clone();
        let mut t: Vec<_> = planted
            .iter()
            .map(|d| {
                let n = rng.random_range(0..=20);
                flip(d, n, &mut rng)
            })
            .collect();
        q.extend((0..1000).map(|_| random_desc(&mut rng)));
        t.extend((0..1000).map(|_| random_desc(&mut rng)));
        let m = match_descriptors(&q, &t, 30);
        let got: Vec<_> = m.iter().map(|m| (m.query_index, m.train_index)).collect();
        assert_eq!(got, brute_force(&q, &t, 30));
        let recovered = got.iter().filter(|&&(a, b)| a < 100 && a == b).count();
        assert!(recovered >= 95, "recovered {recovered}");
        assert!(m.iter().all(|m| m.distance <= 30));
    }

    #[test]
    fn swap_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q: Vec<_> = (0..120).map(|_| random_desc(&mut rng)).collect();
        let t: Vec<_> = (0..90)
            .map(|i| if i % 2 == 0 { flip(&q[i], 30, &mut rng) } else { random_desc(&mut rng) })
            .collect();
        let mut fwd: Vec<_> = match_descriptors(&q, &t, 200)
            .into_iter()
            .map(|m| (m.query_index, m.train_index, m.distance))
            .collect();
        let mut rev: Vec<_> = match_descriptors(&t, &q, 200)
            .into_iter()
            .map(|m| (m.train_index, m.query_index, m.distance))
            .collect();
        fwd.sort();
        rev.sort();
        assert_eq!(fwd, rev);
    }
}
