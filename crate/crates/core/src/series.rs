//! Weekly allied time series built from review records.
//!
//! Every product is put on a weekly grid: week `w` holds reviews dated
//! `origin + 7w .. origin + 7w + 6`. Per-product analytics use the product's
//! first review as origin; competition pairs share one origin so both
//! products sit on the same calendar weeks.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReviewRecord;
use crate::kde::{self, DensityProfile};

/// Uniform weekly series with an absolute epoch week and an optional
/// validity mask (`true` = defined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySeries {
    pub epoch_week: i64,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

impl WeeklySeries {
    pub fn new(epoch_week: i64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("weekly series must have at least one week".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite series value {v}")));
        }
        Ok(WeeklySeries {
            epoch_week,
            values,
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return Err(Error::InvalidArgument("mask length differs from series length".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_valid(&self, week: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[week])
    }

    /// Write as CSV with header `week,value` (plus `mask` when present).
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        match &self.mask {
            Some(mask) => {
                writeln!(out, "week,value,mask")?;
                for (w, (v, m)) in self.values.iter().zip(mask).enumerate() {
                    writeln!(out, "{w},{v},{}", u8::from(*m))?;
                }
            }
            None => {
                writeln!(out, "week,value")?;
                for (w, v) in self.values.iter().enumerate() {
                    writeln!(out, "{w},{v}")?;
                }
            }
        }
        Ok(())
    }
}

/// Origin and length of a weekly grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekGrid {
    pub origin: NaiveDate,
    pub span: usize,
}

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("valid epoch"),
};

impl WeekGrid {
    /// Grid starting at the first record and covering the last one.
    pub fn covering(records: &[ReviewRecord]) -> Option<Self> {
        let first = records.iter().map(|r| r.date).min()?;
        let last = records.iter().map(|r| r.date).max()?;
        Some(WeekGrid {
            origin: first,
            span: week_offset(first, last) as usize + 1,
        })
    }

    /// Week index of `date`, or `None` when outside the grid.
    pub fn week_of(&self, date: NaiveDate) -> Option<usize> {
        let w = week_offset(self.origin, date);
        (w >= 0 && (w as usize) < self.span).then_some(w as usize)
    }

    pub fn epoch_week(&self) -> i64 {
        week_offset(EPOCH, self.origin)
    }
}

/// Whole weeks from `origin` to `date` (floor division, may be negative).
pub fn week_offset(origin: NaiveDate, date: NaiveDate) -> i64 {
    (date - origin).num_days().div_euclid(7)
}

/// Count the records selected by `predicate` per week.
pub fn bin_weekly<F>(records: &[ReviewRecord], predicate: F, grid: WeekGrid) -> WeeklySeries
where
    F: Fn(&ReviewRecord) -> bool,
{
    let mut values = vec![0.0; grid.span.max(1)];
    for r in records.iter().filter(|r| predicate(r)) {
        if let Some(w) = grid.week_of(r.date) {
            values[w] += 1.0;
        }
    }
    WeeklySeries {
        epoch_week: grid.epoch_week(),
        values,
        mask: None,
    }
}

/// Helpfulness of a review: HV/TV, or 0 for an unvoted review.
pub fn helpfulness(helpful_votes: u32, total_votes: u32) -> Result<f64> {
    if helpful_votes > total_votes {
        return Err(Error::Domain(format!(
            "helpful votes {helpful_votes} exceed total votes {total_votes}"
        )));
    }
    if total_votes == 0 {
        Ok(0.0)
    } else {
        Ok(f64::from(helpful_votes) / f64::from(total_votes))
    }
}

/// Lexicon polarity in [0,1]: 0.5 * ((CPS - CNS)/(CPS + CNS) + 1).
///
/// A review without any lexicon hit is neutral (0.5).
pub fn sentiment_coefficient(pos: u32, neg: u32) -> f64 {
    let total = f64::from(pos) + f64::from(neg);
    if total == 0.0 {
        0.5
    } else {
        0.5 * ((f64::from(pos) - f64::from(neg)) / total + 1.0)
    }
}

/// Weekly mean of `value` over records selected by `predicate`; empty weeks
/// are 0 and flagged invalid in the mask.
pub fn weekly_mean<P, V>(records: &[ReviewRecord], predicate: P, value: V, grid: WeekGrid) -> WeeklySeries
where
    P: Fn(&ReviewRecord) -> bool,
    V: Fn(&ReviewRecord) -> f64,
{
    let span = grid.span.max(1);
    let mut sum = vec![0.0; span];
    let mut count = vec![0usize; span];
    for r in records.iter().filter(|r| predicate(r)) {
        if let Some(w) = grid.week_of(r.date) {
            sum[w] += value(r);
            count[w] += 1;
        }
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    WeeklySeries {
        epoch_week: grid.epoch_week(),
        values,
        mask: Some(count.iter().map(|&c| c > 0).collect()),
    }
}

/// Review population for cumulative ratings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingFilter {
    /// Verified reviews with 4-5 stars.
    AvpLike,
    /// Every unverified review.
    NonAvpAll,
}

impl RatingFilter {
    pub fn accepts(self, r: &ReviewRecord) -> bool {
        match self {
            RatingFilter::AvpLike => r.verified && r.is_like(),
            RatingFilter::NonAvpAll => !r.verified,
        }
    }
}

/// Running mean rating of the filtered reviews from week 0 through each week.
///
/// Weeks before the first qualifying review are 0 and masked invalid.
pub fn cumulative_rating(records: &[ReviewRecord], filter: RatingFilter, grid: WeekGrid) -> WeeklySeries {
    let span = grid.span.max(1);
    let mut sum = vec![0.0; span];
    let mut count = vec![0usize; span];
    for r in records.iter().filter(|r| filter.accepts(r)) {
        if let Some(w) = grid.week_of(r.date) {
            sum[w] += f64::from(r.rating);
            count[w] += 1;
        }
    }
    let (mut acc_sum, mut acc_n) = (0.0, 0usize);
    let mut values = Vec::with_capacity(span);
    let mut mask = Vec::with_capacity(span);
    for w in 0..span {
        acc_sum += sum[w];
        acc_n += count[w];
        values.push(if acc_n == 0 { 0.0 } else { acc_sum / acc_n as f64 });
        mask.push(acc_n > 0);
    }
    WeeklySeries {
        epoch_week: grid.epoch_week(),
        values,
        mask: Some(mask),
    }
}

/// Cross-correlation of `x` and `y` at lags `-max_lag..=max_lag`.
///
/// The two series are aligned on their epoch weeks. At lag `k` the pairs
/// `(x(i), y(i+k))` over every `i` where both exist are correlated with means
/// taken over that overlap. Element `max_lag + k` of the result is lag `k`.
pub fn ccf(x: &WeeklySeries, y: &WeeklySeries, max_lag: usize) -> Result<Vec<f64>> {
    let k = max_lag as i64;
    (-k..=k).map(|lag| ccf_at(x, y, lag)).collect()
}

fn ccf_at(x: &WeeklySeries, y: &WeeklySeries, lag: i64) -> Result<f64> {
    // absolute week a of x pairs with absolute week a + lag of y
    let x_start = x.epoch_week;
    let x_end = x.epoch_week + x.len() as i64;
    let y_start = y.epoch_week - lag;
    let y_end = y.epoch_week + y.len() as i64 - lag;
    let lo = x_start.max(y_start);
    let hi = x_end.min(y_end);
    if hi - lo < 3 {
        return Err(Error::InsufficientData(format!(
            "overlap of {} weeks at lag {lag}; need at least 3",
            (hi - lo).max(0)
        )));
    }
    let xs: Vec<f64> = (lo..hi).map(|a| x.values[(a - x_start) as usize]).collect();
    let ys: Vec<f64> = (lo..hi).map(|a| y.values[(a + lag - y.epoch_week) as usize]).collect();
    let mx = crate::linalg::mean(&xs);
    let my = crate::linalg::mean(&ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in xs.iter().zip(&ys) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(format!("constant series on overlap at lag {lag}")));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Map a series onto [0,1] by its min and max.
pub fn minmax_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() || max <= min {
        return Err(Error::DegenerateRange);
    }
    Ok(x.iter().map(|v| (v - min) / (max - min)).collect())
}

/// Values with masked weeks replaced by the last valid value (`initial`
/// before the first valid week).
pub fn carry_forward(series: &WeeklySeries, initial: f64) -> Vec<f64> {
    let mut last = initial;
    (0..series.len())
        .map(|t| {
            if series.is_valid(t) {
                last = series.values[t];
            }
            last
        })
        .collect()
}

/// The derived weekly series of one product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductLifecycle {
    pub product_id: String,
    pub price: f64,
    pub grid: WeekGrid,
    /// AVP reviews per week (sales proxy).
    pub sales_count: WeeklySeries,
    pub nonavp_count: WeeklySeries,
    /// Diffusion-KDE smoothed AVP histogram.
    pub sales_density: DensityProfile,
    pub helpfulness_avp: WeeklySeries,
    pub sentiment_avp: WeeklySeries,
    pub helpfulness_nonavp: WeeklySeries,
    pub sentiment_nonavp: WeeklySeries,
    /// Weekly mean star rating of AVP reviews.
    pub rating_avp: WeeklySeries,
    pub cum_avp_like_rating: WeeklySeries,
    pub cum_nonavp_rating: WeeklySeries,
    pub revenue: WeeklySeries,
    pub nonavp_fraction: f64,
}

impl ProductLifecycle {
    /// Build the lifecycle of one product on `grid` (defaults to the product's
    /// own first-review grid).
    pub fn build(
        product_id: &str,
        records: &[ReviewRecord],
        price: f64,
        grid: Option<WeekGrid>,
    ) -> Result<Self> {
        let grid = match grid {
            Some(g) => g,
            None => WeekGrid::covering(records)
                .ok_or_else(|| Error::InsufficientData(format!("product {product_id} has no reviews")))?,
        };
        if !(price.is_finite() && price >= 0.0) {
            return Err(Error::Domain(format!("price must be >= 0, got {price}")));
        }
        let sales_count = bin_weekly(records, |r| r.verified, grid);
        let nonavp_count = bin_weekly(records, |r| !r.verified, grid);
        let n_avp: f64 = sales_count.values.iter().sum();
        let sales_density = kde::estimate(&sales_count.values, n_avp)?;
        let revenue = WeeklySeries {
            epoch_week: sales_count.epoch_week,
            values: sales_count.values.iter().map(|c| price * c).collect(),
            mask: None,
        };
        let total = records.len() as f64;
        let nonavp = records.iter().filter(|r| !r.verified).count() as f64;
        Ok(ProductLifecycle {
            product_id: product_id.to_string(),
            price,
            grid,
            helpfulness_avp: weekly_mean(records, |r| r.verified, ReviewRecord::helpfulness, grid),
            sentiment_avp: weekly_mean(records, |r| r.verified, ReviewRecord::sentiment, grid),
            helpfulness_nonavp: weekly_mean(records, |r| !r.verified, ReviewRecord::helpfulness, grid),
            sentiment_nonavp: weekly_mean(records, |r| !r.verified, ReviewRecord::sentiment, grid),
            rating_avp: weekly_mean(records, |r| r.verified, |r| f64::from(r.rating), grid),
            cum_avp_like_rating: cumulative_rating(records, RatingFilter::AvpLike, grid),
            cum_nonavp_rating: cumulative_rating(records, RatingFilter::NonAvpAll, grid),
            sales_count,
            nonavp_count,
            sales_density,
            revenue,
            nonavp_fraction: if total > 0.0 { nonavp / total } else { 0.0 },
        })
    }

    pub fn len(&self) -> usize {
        self.grid.span
    }

    pub fn is_empty(&self) -> bool {
        self.grid.span == 0
    }

    /// The six allied series in exogenous-regressor order: AVP helpfulness,
    /// sentiment and cumulative like-rating, then the non-AVP analogues.
    pub fn allied(&self) -> [&WeeklySeries; 6] {
        [
            &self.helpfulness_avp,
            &self.sentiment_avp,
            &self.cum_avp_like_rating,
            &self.helpfulness_nonavp,
            &self.sentiment_nonavp,
            &self.cum_nonavp_rating,
        ]
    }

    /// Median weekly AVP count.
    pub fn median_weekly_sales(&self) -> f64 {
        let mut v = self.sales_count.values.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            0.0
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn day(n: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2014, 1, 1).unwrap() + chrono::Duration::days(n)
    }

    fn review(d: i64, rating: u8, verified: bool) -> ReviewRecord {
        ReviewRecord {
            product_id: "P".into(),
            date: day(d),
            rating,
            verified,
            helpful_votes: 0,
            total_votes: 0,
            pos_words: 0,
            neg_words: 0,
            word_count: 0,
            comments: 0,
        }
    }

    fn grid(span: usize) -> WeekGrid {
        WeekGrid { origin: day(0), span }
    }

    #[test]
    fn bin_three_reviews_in_week_zero() {
        let recs = vec![review(0, 5, true), review(3, 4, true), review(6, 2, true)];
        assert_eq!(bin_weekly(&recs, |r| r.verified, grid(2)).values, vec![3.0, 0.0]);
        assert_eq!(bin_weekly(&[], |r| r.verified, grid(3)).values, vec![0.0; 3]);
    }

    #[test]
    fn bin_matches_date_bucketing_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let recs: Vec<ReviewRecord> = (0..100)
            .map(|_| review(rng.random_range(0..70), 3, rng.random_bool(0.7)))
            .collect();
        let got = bin_weekly(&recs, |r| r.verified, grid(10)).values;
        let mut oracle = vec![0.0; 10];
        for r in recs.iter().filter(|r| r.verified) {
            let days = r.date.signed_duration_since(day(0)).num_days();
            let mut bucket = 0;
            while (bucket + 1) * 7 <= days {
                bucket += 1;
            }
            oracle[bucket as usize] += 1.0;
        }
        assert_eq!(got, oracle);
    }

    #[test]
    fn helpfulness_cases() {
        assert_eq!(helpfulness(0, 0).unwrap(), 0.0);
        assert_eq!(helpfulness(3, 4).unwrap(), 0.75);
        assert!(helpfulness(5, 4).is_err());
        let mut a = review(0, 5, true);
        a.helpful_votes = 1;
        a.total_votes = 2;
        let mut b = review(1, 5, true);
        b.helpful_votes = 2;
        b.total_votes = 2;
        let s = weekly_mean(&[a, b], |r| r.verified, ReviewRecord::helpfulness, grid(2));
        assert_eq!(s.values, vec![0.75, 0.0]);
        assert_eq!(s.mask, Some(vec![true, false]));
    }

    #[test]
    fn sentiment_cases() {
        assert_eq!(sentiment_coefficient(5, 0), 1.0);
        assert_eq!(sentiment_coefficient(0, 5), 0.0);
        assert_eq!(sentiment_coefficient(3, 3), 0.5);
        assert_eq!(sentiment_coefficient(0, 0), 0.5);
    }

    #[test]
    fn cumulative_rating_running_mean() {
        let recs = vec![review(0, 5, true), review(8, 4, true)];
        let s = cumulative_rating(&recs, RatingFilter::AvpLike, grid(2));
        assert_eq!(s.values, vec![5.0, 4.5]);
        let none = cumulative_rating(&recs, RatingFilter::NonAvpAll, grid(3));
        assert_eq!(none.values, vec![0.0; 3]);
        assert_eq!(none.mask, Some(vec![false; 3]));
    }

    #[test]
    fn cumulative_rating_matches_prefix_mean_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let recs: Vec<ReviewRecord> = (0..30)
            .map(|_| review(rng.random_range(0..42), rng.random_range(1..=5), false))
            .collect();
        let s = cumulative_rating(&recs, RatingFilter::NonAvpAll, grid(6));
        for w in 0..6 {
            let upto: Vec<f64> = recs
                .iter()
                .filter(|r| (r.date - day(0)).num_days() < 7 * (w as i64 + 1))
                .map(|r| f64::from(r.rating))
                .collect();
            if upto.is_empty() {
                assert_eq!(s.values[w], 0.0);
            } else {
                let m = upto.iter().sum::<f64>() / upto.len() as f64;
                assert!((s.values[w] - m).abs() < 1e-12);
            }
        }
    }

    fn series(v: &[f64]) -> WeeklySeries {
        WeeklySeries::new(0, v.to_vec()).unwrap()
    }

    #[test]
    fn ccf_self_and_negated() {
        let x = series(&[1.0, 3.0, 2.0, 5.0, 4.0, 6.0, 2.0, 1.0]);
        let neg = series(&x.values.iter().map(|v| -v).collect::<Vec<_>>());
        let c = ccf(&x, &x, 2).unwrap();
        assert!((c[2] - 1.0).abs() < 1e-12);
        assert!((ccf(&x, &neg, 0).unwrap()[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ccf_recovers_shift_of_two() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let raw: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let x = series(&raw[2..]);
        // y(i) = x(i - 2)
        let y = series(&raw[..38]);
        let c = ccf(&x, &y, 4).unwrap();
        let best = (0..c.len()).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap() as i64 - 4;
        assert_eq!(best, 2);
        // Direct evaluation of the correlation formula at lag 2.
        let xs = &x.values[..36];
        let ys = &y.values[2..];
        let (mx, my) = (crate::linalg::mean(xs), crate::linalg::mean(ys));
        let num: f64 = xs.iter().zip(ys).map(|(a, b)| (a - mx) * (b - my)).sum();
        let den = xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt()
            * ys.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
        assert!((c[6] - num / den).abs() < 1e-12);
    }

    #[test]
    fn carry_forward_fills_gaps() {
        let s = series(&[0.0, 2.0, 0.0, 3.0]).with_mask(vec![false, true, false, true]).unwrap();
        assert_eq!(carry_forward(&s, 0.5), vec![0.5, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn ccf_errors() {
        let x = series(&[1.0, 1.0, 1.0, 1.0]);
        let y = series(&[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(ccf(&x, &y, 0), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(ccf(&y, &y, 2), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn minmax_cases() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(minmax_normalize(&[3.0, 3.0]), Err(Error::DegenerateRange)));
    }

    #[test]
    fn lifecycle_series_are_aligned() {
        let mut recs = vec![];
        for d in 0..120 {
            recs.push(review(d, (d % 5 + 1) as u8, d % 3 != 0));
        }
        let lc = ProductLifecycle::build("P", &recs, 2.5, None).unwrap();
        let n = lc.len();
        for s in lc.allied() {
            assert_eq!(s.len(), n);
            assert_eq!(s.epoch_week, lc.sales_count.epoch_week);
        }
        assert_eq!(lc.sales_density.values.len(), n);
        for (rev, c) in lc.revenue.values.iter().zip(&lc.sales_count.values) {
            assert_eq!(*rev, 2.5 * c);
        }
        assert!((lc.nonavp_fraction - 40.0 / 120.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ccf_bounded(v in proptest::collection::vec(-10.0f64..10.0, 8..30), w in proptest::collection::vec(-10.0f64..10.0, 8..30)) {
            let x = series(&v);
            let y = series(&w);
            if let Ok(c) = ccf(&x, &y, 3) {
                for r in c {
                    prop_assert!(r.abs() <= 1.0 + 1e-12);
                }
            }
        }

        #[test]
        fn minmax_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 2..20)) {
            if let Ok(once) = minmax_normalize(&v) {
                let twice = minmax_normalize(&once).unwrap();
                for (a, b) in once.iter().zip(&twice) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn bounded_review_scores(hv in 0u32..100, extra in 0u32..100, p in 0u32..100, n in 0u32..100) {
            let h = helpfulness(hv, hv + extra).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            let s = sentiment_coefficient(p, n);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
