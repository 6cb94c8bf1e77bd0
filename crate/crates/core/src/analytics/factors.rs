//! The nine joint leader/competitor factors and their association with the
//! competition outcome.

use chrono::{Duration, NaiveDate};
use serde::Serialize;

use crate::competition::Outcome;
use crate::error::{Error, Result};
use crate::ingest::ReviewRecord;
use crate::linalg::mean;

pub const FACTOR_NAMES: [&str; 9] = [
    "leader_higher_avp_like_rating_with_fewer_reviews",
    "leader_over_50_reviews_before_entry",
    "introduction_gap_over_2_years",
    "price_difference_over_half",
    "weekly_sales_difference_over_1_first_4_weeks",
    "avp_rating_difference_over_1_first_4_weeks",
    "nonavp_rating_difference_over_1_first_4_weeks",
    "leader_positive_sentiment_before_entry",
    "competitor_positive_sentiment_first_4_weeks",
];

/// Reviews and prices of a leader/competitor pair.
#[derive(Debug, Clone, Copy)]
pub struct PairReviews<'a> {
    pub leader: &'a [ReviewRecord],
    pub competitor: &'a [ReviewRecord],
    pub leader_price: Option<f64>,
    pub competitor_price: Option<f64>,
}

impl PairReviews<'_> {
    /// Date of the competitor's first review.
    pub fn entry_date(&self) -> Result<NaiveDate> {
        self.competitor
            .iter()
            .map(|r| r.date)
            .min()
            .ok_or_else(|| Error::InsufficientData("competitor has no reviews".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorConfig {
    /// Evaluate factor 1 from competitor entry onward instead of over all
    /// reviews.
    pub factor1_overlap_only: bool,
    /// Mean sentiment coefficient must exceed this for factors 8 and 9.
    pub sentiment_threshold: f64,
    pub review_threshold: usize,
    pub intro_gap_days: i64,
    pub price_ratio: f64,
    pub window_days: i64,
    pub sales_gap: f64,
    pub rating_gap: f64,
}

impl Default for FactorConfig {
    fn default() -> Self {
        FactorConfig {
            factor1_overlap_only: true,
            sentiment_threshold: 0.5,
            review_threshold: 50,
            intro_gap_days: 730,
            price_ratio: 0.5,
            window_days: 28,
            sales_gap: 1.0,
            rating_gap: 1.0,
        }
    }
}

impl FactorConfig {
    /// Factors 8 and 9 with the threshold at zero.
    pub fn literal_sentiment(mut self) -> Self {
        self.sentiment_threshold = 0.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorVector {
    pub factors: [bool; 9],
    pub diagnostics: Vec<String>,
}

fn in_range(recs: &[ReviewRecord], from: Option<NaiveDate>, to: Option<NaiveDate>) -> Vec<&ReviewRecord> {
    recs.iter()
        .filter(|r| from.is_none_or(|d| r.date >= d) && to.is_none_or(|d| r.date < d))
        .collect()
}

fn mean_rating<'a>(recs: impl Iterator<Item = &'a &'a ReviewRecord>) -> Option<f64> {
    let v: Vec<f64> = recs.map(|r| f64::from(r.rating)).collect();
    (!v.is_empty()).then(|| mean(&v))
}

fn mean_sentiment(recs: &[&ReviewRecord]) -> Option<f64> {
    let v: Vec<f64> = recs.iter().map(|r| r.sentiment()).collect();
    (!v.is_empty()).then(|| mean(&v))
}

fn differ_by(a: Option<f64>, b: Option<f64>, gap: f64) -> bool {
    matches!((a, b), (Some(a), Some(b)) if (a - b).abs() > gap)
}

/// Evaluate the nine factors of a pair.
pub fn factor_vector(pair: &PairReviews<'_>, cfg: &FactorConfig) -> Result<FactorVector> {
    let entry = pair.entry_date()?;
    let leader_intro = pair
        .leader
        .iter()
        .map(|r| r.date)
        .min()
        .ok_or_else(|| Error::InsufficientData("leader has no reviews".into()))?;
    let window_end = entry + Duration::days(cfg.window_days);
    let mut diagnostics = Vec::new();
    let mut f = [false; 9];

    let from = cfg.factor1_overlap_only.then_some(entry);
    let (l1, c1) = (in_range(pair.leader, from, None), in_range(pair.competitor, from, None));
    let like = |v: &[&ReviewRecord]| mean_rating(v.iter().filter(|r| r.verified && r.is_like()));
    f[0] = matches!((like(&l1), like(&c1)), (Some(a), Some(b)) if a > b) && l1.len() < c1.len();

    let leader_before = in_range(pair.leader, None, Some(entry));
    f[1] = leader_before.len() > cfg.review_threshold;

    f[2] = (entry - leader_intro).num_days() > cfg.intro_gap_days;

    match (pair.leader_price, pair.competitor_price) {
        (Some(a), Some(b)) => f[3] = (a - b).abs() > cfg.price_ratio * a.max(b),
        _ => diagnostics.push("price missing; factor 4 set false".to_string()),
    }

    let lw = in_range(pair.leader, Some(entry), Some(window_end));
    let cw = in_range(pair.competitor, Some(entry), Some(window_end));
    let weeks = cfg.window_days as f64 / 7.0;
    let sales = |v: &[&ReviewRecord]| v.iter().filter(|r| r.verified).count() as f64 / weeks;
    f[4] = (sales(&lw) - sales(&cw)).abs() > cfg.sales_gap;
    f[5] = differ_by(
        mean_rating(lw.iter().filter(|r| r.verified)),
        mean_rating(cw.iter().filter(|r| r.verified)),
        cfg.rating_gap,
    );
    f[6] = differ_by(
        mean_rating(lw.iter().filter(|r| !r.verified)),
        mean_rating(cw.iter().filter(|r| !r.verified)),
        cfg.rating_gap,
    );

    f[7] = mean_sentiment(&leader_before).is_some_and(|s| s > cfg.sentiment_threshold);
    f[8] = mean_sentiment(&cw).is_some_and(|s| s > cfg.sentiment_threshold);

    Ok(FactorVector { factors: f, diagnostics })
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// Two-sided Fisher exact test on `[[a, b], [c, d]]`: the total probability
/// of same-margin tables no more likely than the observed one.
pub fn fisher_exact(table: [[u64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = table;
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let n = r1 + r2;
    let c2 = n - c1;
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return 1.0;
    }
    let lf = ln_factorials(n);
    let ln_p = |x: u64| -> f64 {
        // x in the top-left cell
        lf[r1 as usize] + lf[r2 as usize] + lf[c1 as usize] + lf[c2 as usize]
            - lf[n as usize]
            - lf[x as usize]
            - lf[(r1 - x) as usize]
            - lf[(c1 - x) as usize]
            - lf[(r2 + x - c1) as usize]
    };
    let observed = ln_p(a);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let cutoff = observed + (1.0f64 + 1e-7).ln();
    let p: f64 = (lo..=hi).map(ln_p).filter(|&lp| lp <= cutoff).map(f64::exp).sum();
    p.min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorRow {
    pub factor: usize,
    pub name: &'static str,
    /// `[[survival & true, survival & false], [death & true, death & false]]`.
    pub table: [[u64; 2]; 2],
    pub p_value: f64,
}

/// Contingency table and Fisher p-value per factor over decided pairs.
pub fn factor_report(vectors: &[FactorVector], outcomes: &[Outcome]) -> Result<Vec<FactorRow>> {
    if vectors.len() != outcomes.len() {
        return Err(Error::InvalidArgument("one outcome per factor vector required".into()));
    }
    Ok((0..9)
        .map(|k| {
            let mut table = [[0u64; 2]; 2];
            for (v, o) in vectors.iter().zip(outcomes) {
                let row = match o {
                    Outcome::Survival => 0,
                    Outcome::Death => 1,
                    Outcome::Undecided => continue,
                };
                table[row][usize::from(!v.factors[k])] += 1;
            }
            FactorRow {
                factor: k + 1,
                name: FACTOR_NAMES[k],
                table,
                p_value: fisher_exact(table),
            }
        })
        .collect())
}

/// `factor,odds_table,p_value` rows.
pub fn write_factor_csv<W: std::io::Write>(out: W, rows: &[FactorRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["factor", "odds_table", "p_value"]).map_err(err)?;
    for r in rows {
        let [[a, b], [c, d]] = r.table;
        w.write_record([r.factor.to_string(), format!("[[{a},{b}],[{c},{d}]]"), format!("{:.6e}", r.p_value)])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(n: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2012, 1, 2).unwrap() + Duration::days(n)
    }

    fn rec(d: i64, rating: u8, verified: bool, pos: u32, neg: u32) -> ReviewRecord {
        ReviewRecord {
            product_id: String::new(),
            date: day(d),
            rating,
            verified,
            helpful_votes: 0,
            total_votes: 0,
            pos_words: pos,
            neg_words: neg,
            word_count: 10,
            comments: 0,
        }
    }

    fn pair<'a>(l: &'a [ReviewRecord], c: &'a [ReviewRecord]) -> PairReviews<'a> {
        PairReviews {
            leader: l,
            competitor: c,
            leader_price: Some(10.0),
            competitor_price: Some(12.0),
        }
    }

    #[test]
    fn fisher_examples() {
        assert!((fisher_exact([[1, 9], [11, 3]]) - 0.002759).abs() < 1e-6);
        assert!((fisher_exact([[5, 5], [5, 5]]) - 1.0).abs() < 1e-12);
        assert_eq!(fisher_exact([[0, 0], [3, 4]]), 1.0);
    }

    #[test]
    fn review_count_boundary() {
        let mut leader: Vec<ReviewRecord> = (0..51).map(|i| rec(i, 3, true, 0, 1)).collect();
        let comp = vec![rec(400, 3, true, 0, 1)];
        let v = factor_vector(&pair(&leader, &comp), &FactorConfig::default()).unwrap();
        assert!(v.factors[1]);
        leader.pop();
        let v = factor_vector(&pair(&leader, &comp), &FactorConfig::default()).unwrap();
        assert!(!v.factors[1]);
    }

    #[test]
    fn introduction_gap_boundary() {
        let leader = vec![rec(0, 3, true, 0, 1)];
        for (gap, want) in [(730, false), (731, true)] {
            let comp = vec![rec(gap, 3, true, 0, 1)];
            let v = factor_vector(&pair(&leader, &comp), &FactorConfig::default()).unwrap();
            assert_eq!(v.factors[2], want, "gap {gap}");
        }
    }

    #[test]
    fn missing_price_is_false_with_diagnostic() {
        let leader = vec![rec(0, 3, true, 0, 1)];
        let comp = vec![rec(10, 3, true, 0, 1)];
        let mut p = pair(&leader, &comp);
        p.leader_price = None;
        let v = factor_vector(&p, &FactorConfig::default()).unwrap();
        assert!(!v.factors[3]);
        assert_eq!(v.diagnostics.len(), 1);
        p.leader_price = Some(30.0);
        assert!(factor_vector(&p, &FactorConfig::default()).unwrap().factors[3]);
    }

    #[test]
    fn constructed_pair_hits_factors_one_five_nine() {
        // competitor enters on day 100; all sentiment neutral-or-negative
        // except the competitor's first weeks
        let mut leader: Vec<ReviewRecord> = (0..10).map(|i| rec(i * 9, 3, false, 0, 1)).collect();
        // first four weeks after entry: leader sells 3 per week at 5 stars
        for w in 0..4 {
            for k in 0..3 {
                leader.push(rec(100 + w * 7 + k, 5, true, 0, 1));
            }
        }
        // competitor: more reviews, lower like rating, 1 per week in the window
        let mut comp: Vec<ReviewRecord> = (0..4).map(|w| rec(100 + w * 7, 4, true, 2, 0)).collect();
        for i in 0..20 {
            comp.push(rec(140 + i, 4, true, 0, 1));
        }
        let v = factor_vector(&pair(&leader, &comp), &FactorConfig::default()).unwrap();
        assert_eq!(v.factors, [true, false, false, false, true, false, false, false, true]);
    }

    #[test]
    fn report_tables() {
        let v = |b: bool| FactorVector {
            factors: [b; 9],
            diagnostics: vec![],
        };
        let rows = factor_report(
            &[v(true), v(true), v(false), v(true)],
            &[Outcome::Survival, Outcome::Death, Outcome::Death, Outcome::Undecided],
        )
        .unwrap();
        assert_eq!(rows[0].table, [[1, 0], [1, 1]]);
        let mut buf = Vec::new();
        write_factor_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("factor,odds_table,p_value\n1,\"[[1,0],[1,1]]\","));
    }

    proptest! {
        #[test]
        fn fisher_transpose_symmetry(a in 0u64..15, b in 0u64..15, c in 0u64..15, d in 0u64..15) {
            let p = fisher_exact([[a, b], [c, d]]);
            let q = fisher_exact([[a, c], [b, d]]);
            prop_assert!((p - q).abs() <= 1e-12 * p.max(1e-300));
            prop_assert!(p > 0.0 && p <= 1.0);
        }
    }
}
