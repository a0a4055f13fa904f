//! Unique-location stage.
//!
//! An image passes only when no other image carries exactly the same
//! coordinates. The R-tree narrows each check to the point itself, and the
//! candidates it returns are compared for true equality.

use std::collections::BTreeSet;

use rayon::prelude::*;
use rstar::primitives::GeomWithData;
use rstar::{RTree, AABB};

use crate::manifest::ImageRecord;

type Entry = GeomWithData<[f64; 2], usize>;

/// Point index over image positions.
#[derive(Debug, Clone)]
pub struct LocationIndex {
    entries: Vec<(f64, f64, String)>,
    tree: RTree<Entry>,
}

impl LocationIndex {
    /// Bulk-loads an index over `(lat, lon, image_id)` triples.
    ///
    /// Duplicates are inserted unconditionally.
    pub fn from_points<I, S>(points: I) -> Self
    where
        I: IntoIterator<Item = (f64, f64, S)>,
        S: Into<String>,
    {
        let entries: Vec<(f64, f64, String)> = points
            .into_iter()
            .map(|(lat, lon, id)| (lat, lon, id.into()))
            .collect();
        let items = entries
            .iter()
            .enumerate()
            .map(|(i, (lat, lon, _))| GeomWithData::new([*lat, *lon], i))
            .collect();
        LocationIndex {
            entries,
            tree: RTree::bulk_load(items),
        }
    }

    pub fn len(&self) -> usize {
        self.tree.size()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, f64, String)] {
        &self.entries
    }

    /// Positions of all entries stored exactly at `(lat, lon)`, sorted.
    pub fn at(&self, lat: f64, lon: f64) -> Vec<usize> {
        let mut hits: Vec<usize> = self
            .tree
            .locate_in_envelope(AABB::from_point([lat, lon]))
            .map(|e| e.data)
            .filter(|&i| {
                let (la, lo, _) = &self.entries[i];
                *la == lat && *lo == lon
            })
            .collect();
        hits.sort_unstable();
        hits
    }

    /// For every entry in insertion order, whether its position is unshared.
    pub fn unique_flags(&self) -> Vec<bool> {
        self.entries
            .par_iter()
            .map(|(lat, lon, _)| self.at(*lat, *lon).len() == 1)
            .collect()
    }
}

pub fn build_index(records: &[ImageRecord]) -> LocationIndex {
    LocationIndex::from_points(records.iter().map(|r| (r.lat, r.lon, r.image_id.as_str())))
}

/// Ids of images whose position no other image shares.
pub fn unique_location_filter(index: &LocationIndex) -> BTreeSet<String> {
    index
        .unique_flags()
        .into_iter()
        .zip(index.entries())
        .filter(|(unique, _)| *unique)
        .map(|(_, (_, _, id))| id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    fn quadratic_unique(points: &[(f64, f64)]) -> Vec<bool> {
        let mut unique = vec![true; points.len()];
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if points[i] == points[j] {
                    unique[i] = false;
                    unique[j] = false;
                }
            }
        }
        unique
    }

    fn idx(points: &[(f64, f64)]) -> LocationIndex {
        LocationIndex::from_points(points.iter().enumerate().map(|(i, (a, b))| (*a, *b, format!("p{i}"))))
    }

    #[test]
    fn empty_index() {
        let i = idx(&[]);
        assert!(i.is_empty());
        assert!(unique_location_filter(&i).is_empty());
    }

    #[test]
    fn shared_pair_is_rejected_entirely() {
        let i = LocationIndex::from_points([(1.0, 1.0, "A"), (1.0, 1.0, "B"), (2.0, 2.0, "C")]);
        assert_eq!(i.len(), 3);
        assert_eq!(unique_location_filter(&i), BTreeSet::from(["C".to_string()]));
    }

    #[test]
    fn triples_have_no_survivor() {
        let i = idx(&[(5.0, 5.0), (5.0, 5.0), (5.0, 5.0), (5.0, 5.1)]);
        assert_eq!(i.unique_flags(), [false, false, false, true]);
    }

    #[test]
    fn one_ulp_apart_is_distinct() {
        let a = 48.137_154_f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let i = idx(&[(a, 11.575), (b, 11.575)]);
        assert_eq!(i.unique_flags(), [true, true]);
    }

    #[test]
    fn all_distinct_all_pass() {
        let pts: Vec<_> = (0..100).map(|k| (k as f64 * 0.01, -(k as f64) * 0.02)).collect();
        assert!(idx(&pts).unique_flags().into_iter().all(|u| u));
    }

    fn planted(seed: u64, n: usize, groups: usize) -> Vec<(f64, f64)> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(-60.0..60.0), rng.gen_range(-170.0..170.0)))
            .collect();
        for g in 0..groups {
            let size = rng.gen_range(2..5);
            for k in 1..size {
                let dst = (g * 7 + k * 13) % n;
                pts[dst] = pts[g * 7 % n];
            }
        }
        pts.shuffle(&mut rng);
        pts
    }

    #[test]
    fn planted_duplicates_match_quadratic_scan() {
        let pts = planted(5, 10_000, 500);
        let expected = quadratic_unique(&pts);
        assert!(expected.iter().filter(|u| !**u).count() > 500);
        assert_eq!(idx(&pts).unique_flags(), expected);
    }

    #[test]
    fn neighborhood_queries_match_linear_scan() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let pts: Vec<(f64, f64)> = (0..1_000_000)
            .map(|_| ((rng.gen_range(0..2000) as f64) * 1e-4, (rng.gen_range(0..2000) as f64) * 1e-4))
            .collect();
        let i = idx(&pts);
        assert_eq!(i.len(), 1_000_000);
        for _ in 0..100 {
            let probe = pts[rng.gen_range(0..pts.len())];
            let linear: Vec<usize> = pts
                .iter()
                .enumerate()
                .filter(|(_, p)| **p == probe)
                .map(|(k, _)| k)
                .collect();
            assert_eq!(i.at(probe.0, probe.1), linear);
        }
    }

    proptest! {
        #[test]
        fn independent_of_order_and_symmetric(seed in 0u64..1000, perm_seed in 0u64..1000) {
            let pts = planted(seed, 300, 40);
            let flags = idx(&pts).unique_flags();
            prop_assert_eq!(&flags, &quadratic_unique(&pts));

            let mut order: Vec<usize> = (0..pts.len()).collect();
            order.shuffle(&mut rand::rngs::StdRng::seed_from_u64(perm_seed));
            let shuffled: Vec<_> = order.iter().map(|&k| pts[k]).collect();
            let flags2 = idx(&shuffled).unique_flags();
            for (pos, &k) in order.iter().enumerate() {
                prop_assert_eq!(flags2[pos], flags[k]);
            }
        }
    }
}
