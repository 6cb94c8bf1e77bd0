//! Attributes of products grouped by their share of unverified reviews.

use std::collections::BTreeMap;

use chrono::Datelike;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::ReviewRecord;
use crate::linalg::{mean, polyfit, pop_sd};

pub const ATTRIBUTES: [&str; 4] = ["burst", "sales", "avp_rating", "rating_deviation"];

/// Per-product inputs of the trust profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductTrust {
    pub product_id: String,
    /// Unverified share of reviews, in percent.
    pub nonavp_pct: f64,
    /// Mean gap between consecutive reviews, in days.
    pub burst_days: f64,
    /// Total verified reviews.
    pub sales: f64,
    pub avg_avp_rating: f64,
    /// Population standard deviation of all ratings.
    pub rating_sd: f64,
    pub revenue: f64,
}

impl ProductTrust {
    pub fn from_records(product_id: &str, records: &[ReviewRecord], price: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InsufficientData(format!("{product_id} has no reviews")));
        }
        let mut days: Vec<i64> = records.iter().map(|r| r.date.num_days_from_ce() as i64).collect();
        days.sort_unstable();
        let gaps: Vec<f64> = days.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
        let avp: Vec<f64> = records.iter().filter(|r| r.verified).map(|r| f64::from(r.rating)).collect();
        let all: Vec<f64> = records.iter().map(|r| f64::from(r.rating)).collect();
        let nonavp = records.len() - avp.len();
        Ok(ProductTrust {
            product_id: product_id.to_string(),
            nonavp_pct: 100.0 * nonavp as f64 / records.len() as f64,
            burst_days: mean(&gaps),
            sales: avp.len() as f64,
            avg_avp_rating: mean(&avp),
            rating_sd: pop_sd(&all),
            revenue: price * avp.len() as f64,
        })
    }

    fn attributes(&self, burst: f64) -> [f64; 4] {
        [burst, self.sales, self.avg_avp_rating, self.rating_sd]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustBin {
    /// Rounded unverified percentage.
    pub bin: u32,
    pub products: usize,
    /// Per-attribute mean, min-max normalized across bins.
    pub mean: [f64; 4],
    /// Per-attribute variance, min-max normalized across bins.
    pub variance: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustProfile {
    pub bins: Vec<TrustBin>,
    /// `(nonavp_pct, revenue)` per product.
    pub revenue_scatter: Vec<(f64, f64)>,
    /// Least-squares cubic of revenue on percentage, constant term first;
    /// absent with fewer than four products.
    pub cubic_fit: Option<Vec<f64>>,
}

/// Min-max normalize, mapping a constant input to zeros.
fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

fn pop_var(xs: &[f64]) -> f64 {
    pop_sd(xs).powi(2)
}

/// Bin products by rounded unverified percentage and summarise the four
/// attributes per bin. Burst is normalized across products before binning;
/// bin means and variances are then normalized across bins. Empty bins are
/// omitted.
pub fn trust_profile(products: &[ProductTrust]) -> Result<TrustProfile> {
    if products.is_empty() {
        return Err(Error::InsufficientData("trust profile of no products".into()));
    }
    let burst = normalize(&products.iter().map(|p| p.burst_days).collect::<Vec<_>>());
    let mut groups: BTreeMap<u32, Vec<[f64; 4]>> = BTreeMap::new();
    for (p, b) in products.iter().zip(&burst) {
        let bin = p.nonavp_pct.round().clamp(0.0, 100.0) as u32;
        groups.entry(bin).or_default().push(p.attributes(*b));
    }
    let raw: Vec<(u32, usize, [f64; 4], [f64; 4])> = groups
        .iter()
        .map(|(&bin, rows)| {
            let mut m = [0.0; 4];
            let mut v = [0.0; 4];
            for a in 0..4 {
                let col: Vec<f64> = rows.iter().map(|r| r[a]).collect();
                m[a] = mean(&col);
                v[a] = pop_var(&col);
            }
            (bin, rows.len(), m, v)
        })
        .collect();
    let mut bins: Vec<TrustBin> = raw
        .iter()
        .map(|(bin, n, _, _)| TrustBin {
            bin: *bin,
            products: *n,
            mean: [0.0; 4],
            variance: [0.0; 4],
        })
        .collect();
    for a in 0..4 {
        let means = normalize(&raw.iter().map(|r| r.2[a]).collect::<Vec<_>>());
        let vars = normalize(&raw.iter().map(|r| r.3[a]).collect::<Vec<_>>());
        for (i, b) in bins.iter_mut().enumerate() {
            b.mean[a] = means[i];
            b.variance[a] = vars[i];
        }
    }
    let revenue_scatter: Vec<(f64, f64)> = products.iter().map(|p| (p.nonavp_pct, p.revenue)).collect();
    let xs: Vec<f64> = revenue_scatter.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = revenue_scatter.iter().map(|p| p.1).collect();
    let cubic_fit = if products.len() >= 4 { polyfit(&xs, &ys, 3).ok() } else { None };
    Ok(TrustProfile {
        bins,
        revenue_scatter,
        cubic_fit,
    })
}

/// `bin,products,<attr>_mean..,<attr>_var..` rows.
pub fn write_bins_csv<W: std::io::Write>(out: W, profile: &TrustProfile) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    let mut header = vec!["bin".to_string(), "products".to_string()];
    header.extend(ATTRIBUTES.iter().map(|a| format!("{a}_mean")));
    header.extend(ATTRIBUTES.iter().map(|a| format!("{a}_var")));
    w.write_record(&header).map_err(err)?;
    for b in &profile.bins {
        let mut row = vec![b.bin.to_string(), b.products.to_string()];
        row.extend(b.mean.iter().map(|v| format!("{v:.9}")));
        row.extend(b.variance.iter().map(|v| format!("{v:.9}")));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

/// `nonavp_pct,revenue` rows.
pub fn write_scatter_csv<W: std::io::Write>(out: W, profile: &TrustProfile) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["nonavp_pct", "revenue"]).map_err(err)?;
    for (p, r) in &profile.revenue_scatter {
        w.write_record([format!("{p:.6}"), format!("{r:.6}")]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}
