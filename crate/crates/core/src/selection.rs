//! AP selection, the sparse effective channel and user clustering.
//!
//! Indices are zero-based throughout. The per-user AP subsets and the
//! per-user user clusters are kept in separate types.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::LargeScaleMatrix;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// For each user, the `L` APs with the largest large-scale coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSelection {
    /// `sets[k]` holds AP indices in ascending order.
    pub sets: Vec<Vec<usize>>,
    pub aps_per_user: usize,
    pub n_aps: usize,
}

impl ApSelection {
    pub fn n_users(&self) -> usize {
        self.sets.len()
    }

    pub fn contains(&self, user: usize, ap: usize) -> bool {
        self.sets[user].binary_search(&ap).is_ok()
    }

    /// Number of APs serving both users.
    pub fn shared(&self, a: usize, b: usize) -> usize {
        let (mut i, mut j, mut count) = (0, 0, 0);
        let (sa, sb) = (&self.sets[a], &self.sets[b]);
        while i < sa.len() && j < sb.len() {
            match sa[i].cmp(&sb[j]) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        count
    }
}

/// Picks the `aps_per_user` strongest APs per user; equal ζ go to the lower AP index.
pub fn select_aps(zeta: &LargeScaleMatrix, aps_per_user: usize) -> Result<ApSelection> {
    let n = zeta.n_aps();
    if aps_per_user == 0 || aps_per_user > n {
        return Err(Error::domain(format!(
            "aps_per_user must lie in 1..={n}, got {aps_per_user}"
        )));
    }
    let sets = (0..zeta.n_users())
        .map(|k| {
            let mut order: Vec<usize> = (0..n).collect();
            // Stable sort keeps ascending index among equal coefficients.
            order.sort_by(|&a, &b| zeta.get(b, k).total_cmp(&zeta.get(a, k)));
            let mut chosen = order[..aps_per_user].to_vec();
            chosen.sort_unstable();
            chosen
        })
        .collect();
    Ok(ApSelection {
        sets,
        aps_per_user,
        n_aps: n,
    })
}

/// Channel estimate masked to each user's AP subset.
#[derive(Debug, Clone)]
pub struct SparseChannel {
    pub g_bar: CMatrix,
    pub support: ApSelection,
}

pub fn sparse_channel(g_hat: &CMatrix, sel: &ApSelection) -> Result<SparseChannel> {
    if g_hat.nrows() != sel.n_aps || g_hat.ncols() != sel.n_users() {
        return Err(Error::domain(format!(
            "estimate is {}x{} but selection covers {} APs and {} users",
            g_hat.nrows(),
            g_hat.ncols(),
            sel.n_aps,
            sel.n_users()
        )));
    }
    let mut g_bar = CMatrix::from_element(g_hat.nrows(), g_hat.ncols(), Complex64::new(0.0, 0.0));
    for (k, set) in sel.sets.iter().enumerate() {
        for &n in set {
            g_bar[(n, k)] = g_hat[(n, k)];
        }
    }
    Ok(SparseChannel {
        g_bar,
        support: sel.clone(),
    })
}

/// User clusters for the reduced-dimension precoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPlan {
    /// `user_sets[k]`: users sharing at least `min_shared_aps` APs with user
    /// `k`, always including `k`, ascending.
    pub user_sets: Vec<Vec<usize>>,
    /// `index_map[k]`: row of `k` inside its own cluster.
    pub index_map: Vec<usize>,
    pub min_shared_aps: usize,
}

impl ClusterPlan {
    pub fn n_users(&self) -> usize {
        self.user_sets.len()
    }

    pub fn cluster_size(&self, k: usize) -> usize {
        self.user_sets[k].len()
    }

    /// Binary `|U_k|×K` matrix whose row `r` selects the `r`-th lowest user of cluster `k`.
    pub fn selection_matrix(&self, k: usize) -> DMatrix<f64> {
        let users = &self.user_sets[k];
        let mut u = DMatrix::zeros(users.len(), self.n_users());
        for (row, &user) in users.iter().enumerate() {
            u[(row, user)] = 1.0;
        }
        u
    }

    pub fn mean_cluster_size(&self) -> f64 {
        self.user_sets.iter().map(Vec::len).sum::<usize>() as f64 / self.n_users() as f64
    }
}

pub fn build_clusters(sel: &ApSelection, min_shared_aps: usize) -> Result<ClusterPlan> {
    if min_shared_aps > sel.aps_per_user {
        return Err(Error::domain(format!(
            "min_shared_aps ({min_shared_aps}) exceeds aps_per_user ({})",
            sel.aps_per_user
        )));
    }
    let k_users = sel.n_users();
    let user_sets: Vec<Vec<usize>> = (0..k_users)
        .map(|k| {
            (0..k_users)
                .filter(|&i| i == k || sel.shared(i, k) >= min_shared_aps)
                .collect()
        })
        .collect();
    let index_map = user_sets
        .iter()
        .enumerate()
        .map(|(k, users)| {
            users
                .binary_search(&k)
                .expect("cluster contains its own user")
        })
        .collect();
    Ok(ClusterPlan {
        user_sets,
        index_map,
        min_shared_aps,
    })
}

/// `Ĝ_k^T = U_k·Ĝ^T`: the rows of `Ĝ^T` belonging to cluster `k`, `|U_k|×N`.
pub fn reduced_channel(g_hat: &CMatrix, plan: &ClusterPlan, k: usize) -> Result<CMatrix> {
    Ok(reduced_estimate(g_hat, plan, k)?.transpose())
}

/// The `N×|U_k|` column subset of `Ĝ` for cluster `k`.
pub fn reduced_estimate(g_hat: &CMatrix, plan: &ClusterPlan, k: usize) -> Result<CMatrix> {
    if k >= plan.n_users() || g_hat.ncols() != plan.n_users() {
        return Err(Error::domain(format!(
            "user {k} invalid for a {}-user plan over a {}-column estimate",
            plan.n_users(),
            g_hat.ncols()
        )));
    }
    Ok(g_hat.select_columns(&plan.user_sets[k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> LargeScaleMatrix {
        LargeScaleMatrix::from_row_slice(values.len(), 1, values).unwrap()
    }

    #[test]
    fn picks_strongest_aps() {
        let sel = select_aps(&column(&[0.5, 0.1, 0.9]), 2).unwrap();
        assert_eq!(sel.sets[0], vec![0, 2]);
        let all = select_aps(&column(&[0.5, 0.1, 0.9]), 3).unwrap();
        assert_eq!(all.sets[0], vec![0, 1, 2]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let sel = select_aps(&column(&[0.4, 0.4, 0.1]), 1).unwrap();
        assert_eq!(sel.sets[0], vec![0]);
    }

    #[test]
    fn rejects_bad_selection_size() {
        assert!(select_aps(&column(&[0.4, 0.4]), 0).is_err());
        assert!(select_aps(&column(&[0.4, 0.4]), 3).is_err());
    }

    fn sample_estimate(n: usize, k: usize) -> CMatrix {
        CMatrix::from_fn(n, k, |i, j| Complex64::new(1.0 + i as f64, 0.5 - j as f64))
    }

    #[test]
    fn sparse_mask() {
        let zeta = LargeScaleMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        let g = sample_estimate(2, 2);
        let sel = select_aps(&zeta, 1).unwrap();
        assert_eq!(sel.sets, vec![vec![0], vec![1]]);
        let sp = sparse_channel(&g, &sel).unwrap();
        assert_eq!(sp.g_bar[(0, 0)], g[(0, 0)]);
        assert_eq!(sp.g_bar[(1, 1)], g[(1, 1)]);
        assert_eq!(sp.g_bar[(0, 1)], Complex64::new(0.0, 0.0));
        assert_eq!(sp.g_bar[(1, 0)], Complex64::new(0.0, 0.0));

        let full = sparse_channel(&g, &select_aps(&zeta, 2).unwrap()).unwrap();
        assert_eq!(full.g_bar, g);
    }

    #[test]
    fn zero_threshold_clusters_everyone() {
        let zeta =
            LargeScaleMatrix::from_row_slice(3, 3, &[3.0, 1.0, 2.0, 1.0, 3.0, 1.0, 2.0, 2.0, 3.0])
                .unwrap();
        let plan = build_clusters(&select_aps(&zeta, 1).unwrap(), 0).unwrap();
        for k in 0..3 {
            assert_eq!(plan.user_sets[k], vec![0, 1, 2]);
            assert_eq!(plan.index_map[k], k);
            assert_eq!(plan.selection_matrix(k), DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn disjoint_users_form_singletons() {
        let zeta = LargeScaleMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        let plan = build_clusters(&select_aps(&zeta, 1).unwrap(), 1).unwrap();
        assert_eq!(plan.user_sets, vec![vec![0], vec![1]]);
        assert_eq!(plan.index_map, vec![0, 0]);
    }

    #[test]
    fn row_construction_for_partial_cluster() {
        // Users 0 and 1 share AP 0; user 2 is served by AP 2 alone.
        let zeta =
            LargeScaleMatrix::from_row_slice(3, 3, &[5.0, 5.0, 0.1, 4.0, 0.2, 0.2, 0.1, 4.0, 5.0])
                .unwrap();
        let sel = select_aps(&zeta, 2).unwrap();
        assert_eq!(sel.sets, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        let plan = build_clusters(&sel, 2).unwrap();
        assert_eq!(plan.user_sets, vec![vec![0], vec![1], vec![2]]);
        let plan = build_clusters(&sel, 1).unwrap();
        assert_eq!(plan.user_sets[1], vec![0, 1, 2]);

        // Hand-built plan where cluster of user 1 is {0, 1}.
        let zeta =
            LargeScaleMatrix::from_row_slice(3, 3, &[5.0, 5.0, 0.1, 0.1, 0.2, 0.2, 0.2, 0.1, 5.0])
                .unwrap();
        let sel = select_aps(&zeta, 1).unwrap();
        let plan = build_clusters(&sel, 1).unwrap();
        assert_eq!(plan.user_sets[1], vec![0, 1]);
        assert_eq!(plan.index_map[1], 1);
        let u = plan.selection_matrix(1);
        assert_eq!(
            u,
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        );
    }

    #[test]
    fn reduced_channel_rows() {
        let g = sample_estimate(4, 3);
        let zeta = LargeScaleMatrix::from_row_slice(4, 3, &[1.0; 12]).unwrap();
        let full = build_clusters(&select_aps(&zeta, 4).unwrap(), 0).unwrap();
        assert_eq!(reduced_channel(&g, &full, 1).unwrap(), g.transpose());

        let singles = ClusterPlan {
            user_sets: vec![vec![0], vec![1], vec![2]],
            index_map: vec![0, 0, 0],
            min_shared_aps: 4,
        };
        let r = reduced_channel(&g, &singles, 2).unwrap();
        assert_eq!(r.shape(), (1, 4));
        assert_eq!(r, g.column(2).transpose());
        assert!(reduced_channel(&g, &singles, 3).is_err());
    }

    fn arb_zeta() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1usize..8, 1usize..6).prop_flat_map(|(n, k)| {
            (
                Just(n),
                Just(k),
                proptest::collection::vec(prop_oneof![Just(0.5), 0.01f64..1.0], n * k),
            )
        })
    }

    proptest! {
        #[test]
        fn selection_and_cluster_invariants((n, k, data) in arb_zeta(), l_frac in 0.0f64..1.0, na_frac in 0.0f64..1.0) {
            let zeta = LargeScaleMatrix::from_row_slice(n, k, &data).unwrap();
            let l = 1 + ((n - 1) as f64 * l_frac) as usize;
            let sel = select_aps(&zeta, l).unwrap();
            for (user, set) in sel.sets.iter().enumerate() {
                prop_assert_eq!(set.len(), l);
                // Every chosen AP is at least as strong as every dropped one.
                let weakest = set.iter().map(|&a| zeta.get(a, user)).fold(f64::INFINITY, f64::min);
                for ap in (0..n).filter(|a| !set.contains(a)) {
                    prop_assert!(zeta.get(ap, user) <= weakest);
                }
            }
            // Top-L sets are nested as L grows.
            if l < n {
                let bigger = select_aps(&zeta, l + 1).unwrap();
                for user in 0..k {
                    prop_assert!(sel.sets[user].iter().all(|a| bigger.sets[user].contains(a)));
                }
            }

            let na = (l as f64 * na_frac) as usize;
            let plan = build_clusters(&sel, na).unwrap();
            let g = CMatrix::from_fn(n, k, |i, j| Complex64::new(i as f64 + 0.25, j as f64 - 1.0));
            for user in 0..k {
                prop_assert!(plan.user_sets[user].contains(&user));
                let u = plan.selection_matrix(user);
                let q = plan.index_map[user];
                prop_assert_eq!(u[(q, user)], 1.0);
                for r in 0..u.nrows() {
                    prop_assert_eq!(u.row(r).sum(), 1.0);
                }
                let u_c = u.map(|x| Complex64::new(x, 0.0));
                prop_assert_eq!(&u_c * g.transpose(), reduced_channel(&g, &plan, user).unwrap());
            }
        }
    }
}
