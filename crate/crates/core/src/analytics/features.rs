//! Review-window features and the 69-column pair feature matrix.

use chrono::Duration;
use serde::Serialize;

use super::factors::{factor_vector, FactorConfig, PairReviews};
use crate::error::{Error, Result};
use crate::ingest::ReviewRecord;
use crate::linalg::{mean, pop_sd};

pub const N_REVIEW_FEATURES: usize = 20;
pub const N_FEATURES: usize = 9 + 3 * N_REVIEW_FEATURES;

pub const REVIEW_FEATURE_NAMES: [&str; N_REVIEW_FEATURES] = [
    "avg_pos_words",
    "avg_neg_words",
    "sd_pos_words",
    "sd_neg_words",
    "avg_avp_like_rating",
    "avg_avp_dislike_rating",
    "avg_nonavp_like_rating",
    "avg_nonavp_dislike_rating",
    "sd_avp_like_rating",
    "sd_avp_dislike_rating",
    "sd_nonavp_like_rating",
    "sd_nonavp_dislike_rating",
    "n_avp_like",
    "n_avp_dislike",
    "n_nonavp_like",
    "n_nonavp_dislike",
    "n_comments",
    "avg_helpfulness",
    "sd_helpfulness",
    "avg_review_length",
];

/// The twenty review statistics of a window. Empty populations give zeros.
pub fn review_features(reviews: &[&ReviewRecord]) -> [f64; N_REVIEW_FEATURES] {
    let col = |f: &dyn Fn(&ReviewRecord) -> f64| -> Vec<f64> { reviews.iter().map(|r| f(r)).collect() };
    let pos = col(&|r| f64::from(r.pos_words));
    let neg = col(&|r| f64::from(r.neg_words));
    let ratings = |verified: bool, like: bool| -> Vec<f64> {
        reviews
            .iter()
            .filter(|r| r.verified == verified && r.is_like() == like)
            .map(|r| f64::from(r.rating))
            .collect()
    };
    let groups = [
        ratings(true, true),
        ratings(true, false),
        ratings(false, true),
        ratings(false, false),
    ];
    let help = col(&|r| r.helpfulness());
    let mut out = [0.0; N_REVIEW_FEATURES];
    out[0] = mean(&pos);
    out[1] = mean(&neg);
    out[2] = pop_sd(&pos);
    out[3] = pop_sd(&neg);
    for (g, v) in groups.iter().enumerate() {
        out[4 + g] = mean(v);
        out[8 + g] = pop_sd(v);
        out[12 + g] = v.len() as f64;
    }
    out[16] = reviews.iter().map(|r| f64::from(r.comments)).sum();
    out[17] = mean(&help);
    out[18] = pop_sd(&help);
    out[19] = mean(&col(&|r| f64::from(r.word_count)));
    out
}

/// Column names of a feature row.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = super::factors::FACTOR_NAMES.iter().map(|s| format!("factor_{s}")).collect();
    for block in ["leader_pre", "competitor_first4", "leader_first4"] {
        names.extend(REVIEW_FEATURE_NAMES.iter().map(|n| format!("{block}_{n}")));
    }
    names
}

/// Factors followed by the leader's pre-entry features, the competitor's
/// first-four-weeks features and the leader's features over the same weeks.
pub fn feature_row(pair: &PairReviews<'_>, cfg: &FactorConfig) -> Result<Vec<f64>> {
    let entry = pair.entry_date()?;
    let end = entry + Duration::days(cfg.window_days);
    let factors = factor_vector(pair, cfg)?;
    let mut row: Vec<f64> = factors.factors.iter().map(|&b| f64::from(u8::from(b))).collect();
    let pre: Vec<&ReviewRecord> = pair.leader.iter().filter(|r| r.date < entry).collect();
    let comp: Vec<&ReviewRecord> = pair.competitor.iter().filter(|r| r.date >= entry && r.date < end).collect();
    let lead: Vec<&ReviewRecord> = pair.leader.iter().filter(|r| r.date >= entry && r.date < end).collect();
    for block in [pre, comp, lead] {
        row.extend(review_features(&block));
    }
    Ok(row)
}

/// Column centring and scaling fitted on a training set. Constant columns
/// keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map(Vec::len).ok_or_else(|| Error::InsufficientData("no rows".into()))?;
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        let mut means = Vec::with_capacity(p);
        let mut scales = Vec::with_capacity(p);
        for j in 0..p {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            means.push(mean(&col));
            let sd = pop_sd(&col);
            scales.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        Ok(Standardizer { means, scales })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Feature rows of a set of pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub pair_ids: Vec<(String, String)>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn build(pairs: &[((String, String), PairReviews<'_>)], cfg: &FactorConfig) -> Result<Self> {
        let rows = pairs
            .iter()
            .map(|(_, p)| feature_row(p, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix {
            names: feature_names(),
            pair_ids: pairs.iter().map(|(id, _)| id.clone()).collect(),
            rows,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(rating: u8, verified: bool, pos: u32, neg: u32, hv: u32, tv: u32, words: u32) -> ReviewRecord {
        ReviewRecord {
            product_id: "x".into(),
            date: NaiveDate::from_ymd_opt(2014, 3, 3).unwrap(),
            rating,
            verified,
            helpful_votes: hv,
            total_votes: tv,
            pos_words: pos,
            neg_words: neg,
            word_count: words,
            comments: 0,
        }
    }

    #[test]
    fn empty_window_is_zero() {
        assert_eq!(review_features(&[]), [0.0; 20]);
    }

    #[test]
    fn singleton_review() {
        let r = rec(5, true, 2, 0, 1, 1, 10);
        let f = review_features(&[&r]);
        assert_eq!(f[0], 2.0);
        assert_eq!(f[2], 0.0);
        assert_eq!(f[4], 5.0);
        assert_eq!(f[12], 1.0);
        assert_eq!(f[17], 1.0);
        assert_eq!(f[19], 10.0);
        for i in [6, 7, 10, 11, 14, 15] {
            assert_eq!(f[i], 0.0);
        }
    }

    #[test]
    fn matches_spreadsheet_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let recs: Vec<ReviewRecord> = (0..25)
            .map(|_| {
                let tv = rng.random_range(0..6);
                rec(
                    rng.random_range(1..=5),
                    rng.random_bool(0.6),
                    rng.random_range(0..5),
                    rng.random_range(0..5),
                    rng.random_range(0..=tv),
                    tv,
                    rng.random_range(5..80),
                )
            })
            .collect();
        let refs: Vec<&ReviewRecord> = recs.iter().collect();
        let f = review_features(&refs);

        // column-at-a-time recomputation with explicit sums
        let n = recs.len() as f64;
        let sum = |g: &dyn Fn(&ReviewRecord) -> f64| recs.iter().map(g).sum::<f64>();
        let avg_pos = sum(&|r| r.pos_words as f64) / n;
        let var_pos = sum(&|r| (r.pos_words as f64 - avg_pos).powi(2)) / n;
        assert!((f[0] - avg_pos).abs() < 1e-12);
        assert!((f[2] - var_pos.sqrt()).abs() < 1e-12);
        let nonavp_dislike: Vec<f64> = recs
            .iter()
            .filter(|r| !r.verified && r.rating <= 3)
            .map(|r| r.rating as f64)
            .collect();
        let m = nonavp_dislike.iter().sum::<f64>() / nonavp_dislike.len() as f64;
        assert!((f[7] - m).abs() < 1e-12);
        assert_eq!(f[15], nonavp_dislike.len() as f64);
        let help: Vec<f64> = recs
            .iter()
            .map(|r| if r.total_votes == 0 { 0.0 } else { r.helpful_votes as f64 / r.total_votes as f64 })
            .collect();
        assert!((f[17] - help.iter().sum::<f64>() / n).abs() < 1e-12);
        assert!((f[19] - sum(&|r| r.word_count as f64) / n).abs() < 1e-12);
        assert_eq!(f[12] + f[13] + f[14] + f[15], n);
    }

    #[test]
    fn standardized_columns() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| s.transform(r)).collect();
        let col: Vec<f64> = z.iter().map(|r| r[0]).collect();
        assert!(mean(&col).abs() < 1e-12 && (pop_sd(&col) - 1.0).abs() < 1e-12);
        assert!(z.iter().all(|r| r[1] == 0.0));
    }

    #[test]
    fn row_has_69_columns() {
        let l = vec![rec(5, true, 1, 0, 0, 0, 5)];
        let mut c = vec![rec(4, false, 0, 1, 0, 0, 8)];
        c[0].date += Duration::days(30);
        let p = PairReviews {
            leader: &l,
            competitor: &c,
            leader_price: None,
            competitor_price: None,
        };
        assert_eq!(feature_row(&p, &FactorConfig::default()).unwrap().len(), N_FEATURES);
        assert_eq!(feature_names().len(), 69);
    }
}
