//! K-Spectral Centroid clustering of series shapes.
//!
//! The distance between `x` and `y` is `min over alpha, q of
//! ||x - alpha * y_(q)|| / ||x||`, where `y_(q)` is `y` delayed by `q` weeks
//! with zero fill. It ignores amplitude and tolerates bounded time shifts.
//! Centroids are the unit vectors minimising the summed squared distance to
//! the aligned members, i.e. the bottom eigenvector of
//! `sum_i (I - x_i x_i^T / ||x_i||^2)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// `y` delayed by `q` steps (`q < 0` advances), zero-filled, same length.
pub fn shift_series(y: &[f64], q: i64) -> Vec<f64> {
    let n = y.len() as i64;
    (0..n)
        .map(|i| {
            let src = i - q;
            if (0..n).contains(&src) {
                y[src as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Default shift bound: a quarter of the series length.
pub fn default_max_shift(len: usize) -> usize {
    len / 4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Alignment {
    pub distance: f64,
    pub alpha: f64,
    pub shift: i64,
}

/// Scale- and shift-invariant distance from `x` to `y`, searching shifts in
/// `-max_shift..=max_shift`. Ties go to the smallest `|q|` (then negative).
pub fn ksc_distance(x: &[f64], y: &[f64], max_shift: usize) -> Result<Alignment> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let x_norm = norm(x);
    if x_norm == 0.0 {
        return Err(Error::UndefinedDistance);
    }
    let max_shift = max_shift.min(x.len().saturating_sub(1)) as i64;
    let mut best: Option<Alignment> = None;
    for step in 0..=(2 * max_shift) {
        // 0, -1, 1, -2, 2, ...
        let q = if step % 2 == 0 { step / 2 } else { -(step + 1) / 2 };
        let yq = shift_series(y, q);
        let yy = dot(&yq, &yq);
        let alpha = if yy == 0.0 { 0.0 } else { dot(x, &yq) / yy };
        let resid: f64 = x
            .iter()
            .zip(&yq)
            .map(|(a, b)| (a - alpha * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let d = resid / x_norm;
        if best.is_none_or(|b| d < b.distance) {
            best = Some(Alignment {
                distance: d,
                alpha,
                shift: q,
            });
        }
    }
    Ok(best.expect("shift range is never empty"))
}

const EIG_TOL: f64 = 1e-10;
const EIG_MAX_ITER: usize = 500;

/// The matrix `sum_i (I - x_i x_i^T / ||x_i||^2)` over non-zero members.
pub fn centroid_matrix(members: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let len = members
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InsufficientData("empty cluster".into()))?;
    let mut m = DMatrix::<f64>::zeros(len, len);
    for x in members {
        if x.len() != len {
            return Err(Error::InvalidArgument("cluster members differ in length".into()));
        }
        let nn = dot(x, x);
        if nn == 0.0 {
            continue;
        }
        let v = DVector::from_column_slice(x);
        m += DMatrix::<f64>::identity(len, len) - (&v * v.transpose()) / nn;
    }
    Ok(m)
}

/// Unit-norm centroid of aligned members (bottom eigenvector of the centroid
/// matrix, by shifted inverse power iteration), signed to a non-negative sum.
pub fn update_centroid(members: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = centroid_matrix(members)?;
    let len = m.nrows();
    let live: Vec<&Vec<f64>> = members.iter().filter(|x| norm(x) > 0.0).collect();
    if live.is_empty() {
        return Err(Error::InsufficientData("all cluster members are zero".into()));
    }
    // M is PSD; a tiny positive shift keeps the factorisation definite
    // without moving the eigenvectors.
    let eps = 1e-9 * live.len() as f64;
    let chol = (m + DMatrix::<f64>::identity(len, len) * eps)
        .cholesky()
        .ok_or_else(|| Error::Domain("centroid matrix is not positive definite".into()))?;

    let mut v = DVector::<f64>::zeros(len);
    for x in &live {
        v += DVector::from_column_slice(x) / norm(x);
    }
    if v.norm() == 0.0 {
        v = DVector::from_element(len, 1.0);
    }
    v /= v.norm();
    for _ in 0..EIG_MAX_ITER {
        let mut next = chol.solve(&v);
        next /= next.norm();
        if next.dot(&v) < 0.0 {
            next = -next;
        }
        let change = (&next - &v).norm();
        v = next;
        if change < EIG_TOL {
            break;
        }
    }
    if v.sum() < 0.0 {
        v = -v;
    }
    Ok(v.iter().copied().collect())
}

#[derive(Debug, Clone)]
pub struct KscConfig {
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Shift bound; defaults to a quarter of the (padded) length.
    pub max_shift: Option<usize>,
}

impl KscConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KscConfig {
            k,
            max_iter: 100,
            seed,
            max_shift: None,
        }
    }
}

/// Fitted K-SC model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Per-member alignment to its centroid at convergence.
    pub alignments: Vec<Alignment>,
    /// Total squared distance after each accepted iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub max_shift: usize,
}

impl ShapeClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Zero-pad every profile on the right to the longest length.
pub fn pad_profiles(profiles: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let len = profiles.iter().map(Vec::len).max().unwrap_or(0);
    profiles
        .iter()
        .map(|p| {
            let mut v = p.clone();
            v.resize(len, 0.0);
            v
        })
        .collect()
}

fn assign(profiles: &[Vec<f64>], centroids: &[Vec<f64>], max_shift: usize) -> Result<Vec<(usize, Alignment)>> {
    profiles
        .par_iter()
        .map(|x| {
            let mut best: Option<(usize, Alignment)> = None;
            for (c, mu) in centroids.iter().enumerate() {
                let a = ksc_distance(x, mu, max_shift)?;
                if best.is_none_or(|(_, b)| a.distance < b.distance) {
                    best = Some((c, a));
                }
            }
            Ok(best.expect("k >= 1"))
        })
        .collect()
}

fn objective(assign: &[(usize, Alignment)]) -> f64 {
    assign.iter().map(|(_, a)| a.distance * a.distance).sum()
}

/// Cluster shapes with K-SC.
///
/// Lloyd-style alternation of assignment and centroid update until the
/// assignment is stable or `max_iter` is hit. An update that would raise the
/// total objective is rejected and the previous model returned.
pub fn ksc_cluster(profiles: &[Vec<f64>], cfg: &KscConfig) -> Result<ShapeClusterModel> {
    let k = cfg.k;
    if k < 1 || k > profiles.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            profiles.len()
        )));
    }
    let profiles = pad_profiles(profiles);
    if let Some(i) = profiles.iter().position(|p| norm(p) == 0.0) {
        return Err(Error::InvalidArgument(format!("profile {i} is identically zero")));
    }
    let len = profiles[0].len();
    let max_shift = cfg.max_shift.unwrap_or_else(|| default_max_shift(len));

    let mut centroids = farthest_point_init(&profiles, k, max_shift, cfg.seed)?;
    let mut current = assign(&profiles, &centroids, max_shift)?;
    let mut history = vec![objective(&current)];
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut next_centroids = Vec::with_capacity(k);
        let mut empty = Vec::new();
        for c in 0..k {
            let members: Vec<Vec<f64>> = current
                .iter()
                .zip(&profiles)
                .filter(|((a, _), _)| *a == c)
                .map(|((_, al), x)| shift_series(x, -al.shift))
                .collect();
            if members.is_empty() {
                empty.push(c);
                next_centroids.push(centroids[c].clone());
            } else {
                next_centroids.push(update_centroid(&members)?);
            }
        }
        for c in empty {
            // reseed with the worst-fitting member
            let worst = current
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .1.distance.total_cmp(&b.1 .1.distance).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .expect("non-empty");
            let p = &profiles[worst];
            let n = norm(p);
            next_centroids[c] = p.iter().map(|v| v / n).collect();
            current[worst].0 = c;
        }

        let next = assign(&profiles, &next_centroids, max_shift)?;
        let obj = objective(&next);
        if obj > history.last().copied().unwrap_or(f64::INFINITY) + 1e-12 {
            break;
        }
        let stable = next.iter().zip(&current).all(|(a, b)| a.0 == b.0);
        centroids = next_centroids;
        current = next;
        history.push(obj);
        if stable {
            break;
        }
    }

    Ok(ShapeClusterModel {
        k,
        centroids,
        assignments: current.iter().map(|(a, _)| *a).collect(),
        alignments: current.iter().map(|(_, al)| *al).collect(),
        objective_history: history,
        iterations,
        max_shift,
    })
}

fn farthest_point_init(profiles: &[Vec<f64>], k: usize, max_shift: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..profiles.len())];
    let mut min_dist: Vec<f64> = vec![f64::INFINITY; profiles.len()];
    while chosen.len() < k {
        let last = &profiles[*chosen.last().expect("non-empty")];
        let dists: Vec<f64> = profiles
            .par_iter()
            .map(|x| ksc_distance(x, last, max_shift).map(|a| a.distance))
            .collect::<Result<_>>()?;
        for (m, d) in min_dist.iter_mut().zip(dists) {
            *m = m.min(d);
        }
        let next = (0..profiles.len())
            .filter(|i| !chosen.contains(i))
            .max_by(|&a, &b| min_dist[a].total_cmp(&min_dist[b]).then(b.cmp(&a)))
            .expect("k <= #profiles");
        chosen.push(next);
    }
    Ok(chosen
        .iter()
        .map(|&i| {
            let n = norm(&profiles[i]);
            profiles[i].iter().map(|v| v / n).collect()
        })
        .collect())
}

/// One allied family of series, one entry per product (`None` when the
/// product has no usable series for this family).
#[derive(Debug, Clone)]
pub struct Family {
    pub name: String,
    pub series: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyPattern {
    pub family: String,
    pub members: usize,
    /// Centroid of the largest inner cluster.
    pub dominant_centroid: Vec<f64>,
    pub dominant_size: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub group: usize,
    pub size: usize,
    pub centroid: Vec<f64>,
    pub families: Vec<FamilyPattern>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PatternReport {
    pub k_outer: usize,
    pub k_inner: usize,
    pub assignments: Vec<usize>,
    pub groups: Vec<GroupReport>,
}

/// Cluster the primary profiles into `k_outer` groups, then within each group
/// cluster every allied family into at most `k_inner` shapes and keep the
/// dominant one.
pub fn pattern_report(
    primary: &[Vec<f64>],
    families: &[Family],
    k_outer: usize,
    k_inner: usize,
    seed: u64,
) -> Result<PatternReport> {
    for f in families {
        if f.series.len() != primary.len() {
            return Err(Error::InvalidArgument(format!(
                "family {} has {} entries for {} products",
                f.name,
                f.series.len(),
                primary.len()
            )));
        }
    }
    let outer = ksc_cluster(primary, &KscConfig::new(k_outer, seed))?;
    let mut groups = Vec::with_capacity(k_outer);
    for g in 0..k_outer {
        let idx: Vec<usize> = (0..primary.len()).filter(|&i| outer.assignments[i] == g).collect();
        let mut report = GroupReport {
            group: g,
            size: idx.len(),
            centroid: outer.centroids[g].clone(),
            families: Vec::new(),
            notes: Vec::new(),
        };
        for fam in families {
            let members: Vec<Vec<f64>> = idx
                .iter()
                .filter_map(|&i| fam.series[i].clone())
                .filter(|s| norm(s) > 0.0)
                .collect();
            if members.is_empty() {
                report.notes.push(format!("family {} has no usable series in this group", fam.name));
                continue;
            }
            let inner = ksc_cluster(&members, &KscConfig::new(k_inner.min(members.len()), seed))?;
            let sizes = inner.sizes();
            let dominant = (0..inner.k)
                .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                .expect("k >= 1");
            report.families.push(FamilyPattern {
                family: fam.name.clone(),
                members: members.len(),
                dominant_centroid: inner.centroids[dominant].clone(),
                dominant_size: sizes[dominant],
            });
        }
        groups.push(report);
    }
    Ok(PatternReport {
        k_outer,
        k_inner,
        assignments: outer.assignments,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn bump(len: usize, centre: f64, width: f64) -> Vec<f64> {
        (0..len)
            .map(|i| (-((i as f64 - centre) / width).powi(2)).exp())
            .collect()
    }

    #[test]
    fn distance_identities() {
        let x = bump(40, 20.0, 4.0);
        let d = ksc_distance(&x, &x, 10).unwrap();
        assert_eq!((d.distance, d.alpha, d.shift), (0.0, 1.0, 0));
        let x3: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let d = ksc_distance(&x, &x3, 10).unwrap();
        assert!(d.distance < 1e-12);
        assert!((d.alpha - 1.0 / 3.0).abs() < 1e-12);
        let shifted = shift_series(&x, 2);
        let d = ksc_distance(&x, &shifted, 10).unwrap();
        assert!(d.distance < 1e-9);
        assert_eq!(d.shift, -2);
    }

    #[test]
    fn zero_reference_is_an_error() {
        assert!(matches!(
            ksc_distance(&[0.0; 5], &[1.0; 5], 1),
            Err(Error::UndefinedDistance)
        ));
    }

    #[test]
    fn ties_prefer_small_shifts() {
        // constant series: every shift of a constant reference scores the same
        // only at q = 0; a periodic series ties at +/- period.
        let x: Vec<f64> = (0..12).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        let d = ksc_distance(&x, &x, 5).unwrap();
        assert_eq!(d.shift, 0);
    }

    #[test]
    fn single_member_centroid() {
        let x = bump(16, 6.0, 2.0);
        let c = update_centroid(std::slice::from_ref(&x)).unwrap();
        let n = norm(&x);
        for (a, b) in c.iter().zip(&x) {
            assert!((a - b / n).abs() < 1e-9);
        }
        let twice: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let c2 = update_centroid(&[x.clone(), twice]).unwrap();
        for (a, b) in c2.iter().zip(&x) {
            assert!((a - b / n).abs() < 1e-9);
        }
        assert!((norm(&c2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centroid_beats_random_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let members: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..12).map(|_| rng.random::<f64>()).collect())
            .collect();
        let c = update_centroid(&members).unwrap();
        let obj = |mu: &[f64]| -> f64 {
            members
                .iter()
                .map(|x| 1.0 - dot(x, mu).powi(2) / dot(x, x))
                .sum()
        };
        let best = obj(&c);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..12).map(|_| rng.random::<f64>() - 0.5).collect();
            let n = norm(&v);
            let v: Vec<f64> = v.iter().map(|a| a / n).collect();
            assert!(best <= obj(&v) + 1e-12);
        }
    }

    #[test]
    fn centroid_matches_symmetric_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let members: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..10).map(|_| rng.random::<f64>()).collect())
            .collect();
        let c = update_centroid(&members).unwrap();
        let eig = centroid_matrix(&members).unwrap().symmetric_eigen();
        let i = eig.eigenvalues.imin();
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        if v.iter().sum::<f64>() < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
        for (a, b) in c.iter().zip(&v) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn k_bounds_checked() {
        let p = vec![bump(10, 5.0, 2.0); 3];
        assert!(ksc_cluster(&p, &KscConfig::new(0, 1)).is_err());
        assert!(ksc_cluster(&p, &KscConfig::new(4, 1)).is_err());
    }

    #[test]
    fn k_one_single_cluster() {
        let p: Vec<Vec<f64>> = (0..6).map(|i| bump(30, 12.0 + i as f64, 3.0 + 0.2 * i as f64)).collect();
        let m = ksc_cluster(&p, &KscConfig::new(1, 4)).unwrap();
        assert!(m.assignments.iter().all(|&a| a == 0));
        assert!((norm(&m.centroids[0]) - 1.0).abs() < 1e-12);
        // no single member beats the centroid on total objective
        for cand in &p {
            let n = norm(cand);
            let unit: Vec<f64> = cand.iter().map(|v| v / n).collect();
            let obj: f64 = p
                .iter()
                .map(|x| ksc_distance(x, &unit, m.max_shift).unwrap().distance.powi(2))
                .sum();
            assert!(m.objective() <= obj + 1e-9);
        }
    }

    #[test]
    fn pattern_report_omits_empty_family() {
        let p: Vec<Vec<f64>> = (0..4).map(|i| bump(20, 8.0 + i as f64, 3.0)).collect();
        let fam = Family {
            name: "helpfulness".into(),
            series: vec![None; 4],
        };
        let r = pattern_report(&p, &[fam], 1, 1, 3).unwrap();
        assert!(r.groups[0].families.is_empty());
        assert_eq!(r.groups[0].notes.len(), 1);
    }

    #[test]
    fn inner_k_one_is_group_centroid() {
        let p: Vec<Vec<f64>> = (0..5).map(|i| bump(24, 10.0 + i as f64, 3.0)).collect();
        let allied: Vec<Vec<f64>> = (0..5).map(|i| bump(24, 6.0 + i as f64, 2.0)).collect();
        let fam = Family {
            name: "sentiment".into(),
            series: allied.iter().cloned().map(Some).collect(),
        };
        let r = pattern_report(&p, &[fam], 1, 1, 8).unwrap();
        let direct = ksc_cluster(&allied, &KscConfig::new(1, 8)).unwrap();
        assert_eq!(r.groups[0].families[0].dominant_centroid, direct.centroids[0]);
    }

    proptest! {
        #[test]
        fn scale_invariance(c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], centre in 8.0f64..24.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..32).map(|_| rng.random::<f64>()).collect();
            let y = bump(32, centre, 3.0);
            let cy: Vec<f64> = y.iter().map(|v| c * v).collect();
            let a = ksc_distance(&x, &y, 8).unwrap();
            let b = ksc_distance(&x, &cy, 8).unwrap();
            prop_assert!((a.distance - b.distance).abs() < 1e-9);
        }

        #[test]
        fn shift_invariance(q in -8i64..=8) {
            let x = bump(48, 24.0, 3.0);
            let d = ksc_distance(&x, &shift_series(&x, q), 8).unwrap();
            prop_assert!(d.distance < 1e-9);
        }

        #[test]
        fn objective_never_increases(seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p: Vec<Vec<f64>> = (0..20)
                .map(|_| bump(30, rng.random_range(5.0..25.0), rng.random_range(1.5..6.0))
                    .into_iter().map(|v| v + 0.05 * rng.random::<f64>()).collect())
                .collect();
            let m = ksc_cluster(&p, &KscConfig::new(3, seed)).unwrap();
            for w in m.objective_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            for c in &m.centroids {
                prop_assert!((norm(c) - 1.0).abs() < 1e-12);
            }
        }
    }
}
