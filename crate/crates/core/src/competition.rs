//! Two-product competition: coupled logistic dynamics, competition-edge
//! coefficients, pair backtests and takeover/recovery events.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{
    arima_forecast, check_window, first_valid, invert_growth_with, predict_growth, ArimaOrder, BacktestConfig,
    ForecastEvaluation,
};
use crate::series::{carry_forward, ProductLifecycle};
use crate::varx::VarxSpec;

/// Value used for a normalized input before its first observation.
pub const EDGE_PRIOR: f64 = 0.5;
/// Starting coefficient for both products once the competitor enters.
pub const INITIAL_COEFFICIENT: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 1.0 / 20.0;
pub const DEFAULT_THETA: f64 = 0.9;

/// One product's normalized rating, helpfulness and sentiment for a week.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeInputs {
    pub rating: f64,
    pub helpfulness: f64,
    pub sentiment: f64,
}

/// Star rating in `[1, 5]` mapped onto `[0, 1]`.
pub fn normalize_rating(stars: f64) -> f64 {
    (stars - 1.0) / 4.0
}

/// Advantage of `j` over `i`, in `[-1, 1]`.
pub fn competition_edge(i: EdgeInputs, j: EdgeInputs) -> f64 {
    ((j.rating - i.rating) + (j.helpfulness - i.helpfulness) + (j.sentiment - i.sentiment)) / 3.0
}

/// `a + ce * delta`, clamped to `[0, 1]`.
pub fn update_coefficient(a: f64, ce: f64, delta: f64) -> f64 {
    (a + ce * delta).clamp(0.0, 1.0)
}

/// Coefficient path: 0 before `entry`, `INITIAL_COEFFICIENT` at entry, then
/// accumulated edges.
pub fn coefficient_path(ce: &[f64], entry: usize, delta: f64) -> Vec<f64> {
    let mut a = vec![0.0; ce.len()];
    if entry >= ce.len() {
        return a;
    }
    a[entry] = INITIAL_COEFFICIENT;
    for t in entry + 1..ce.len() {
        a[t] = update_coefficient(a[t - 1], ce[t - 1], delta);
    }
    a
}

/// Simultaneous coupled step; both right-hand sides use week-`t` values.
#[allow(clippy::too_many_arguments)]
pub fn lvc_comp_step(
    sd_i: f64,
    sd_j: f64,
    r_i: f64,
    r_j: f64,
    a_ij: f64,
    a_ji: f64,
    k_i: f64,
    k_j: f64,
) -> (f64, f64) {
    let next_i = sd_i * (1.0 + r_i * (1.0 - (sd_i + a_ij * sd_j) / k_i));
    let next_j = sd_j * (1.0 + r_j * (1.0 - (sd_j + a_ji * sd_i) / k_j));
    (next_i.clamp(0.0, k_i), next_j.clamp(0.0, k_j))
}

/// Weekly normalized edge inputs of one product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSeries {
    pub rating: Vec<f64>,
    pub helpfulness: Vec<f64>,
    pub sentiment: Vec<f64>,
}

impl EdgeSeries {
    pub fn from_lifecycle(lc: &ProductLifecycle) -> Self {
        EdgeSeries {
            rating: carry_forward(&lc.rating_avp, 1.0 + 4.0 * EDGE_PRIOR)
                .into_iter()
                .map(normalize_rating)
                .collect(),
            helpfulness: carry_forward(&lc.helpfulness_avp, EDGE_PRIOR),
            sentiment: carry_forward(&lc.sentiment_avp, EDGE_PRIOR),
        }
    }

    pub fn at(&self, t: usize) -> EdgeInputs {
        EdgeInputs {
            rating: self.rating[t],
            helpfulness: self.helpfulness[t],
            sentiment: self.sentiment[t],
        }
    }

    pub fn len(&self) -> usize {
        self.rating.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rating.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Death,
    Survival,
    Undecided,
}

impl std::str::FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "death" => Ok(Outcome::Death),
            "survival" => Ok(Outcome::Survival),
            "undecided" => Ok(Outcome::Undecided),
            other => Err(Error::Parse(format!("unknown outcome label {other:?}"))),
        }
    }
}

/// A leader and competitor on one calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitionPair {
    pub leader_id: String,
    pub competitor_id: String,
    pub entry_week: usize,
    pub leader_density: Vec<f64>,
    pub competitor_density: Vec<f64>,
    pub leader_edge: EdgeSeries,
    pub competitor_edge: EdgeSeries,
    /// Leader's six allied series, then the competitor's.
    pub exogenous: Vec<Vec<f64>>,
}

impl CompetitionPair {
    /// Pair two lifecycles built on the same week grid. Each density is
    /// scaled by its product's share of the pair's AVP reviews, so the two
    /// together sum to one.
    pub fn from_lifecycles(leader: &ProductLifecycle, competitor: &ProductLifecycle) -> Result<Self> {
        if leader.grid != competitor.grid {
            return Err(Error::InvalidArgument(format!(
                "{} and {} are not on the same week grid",
                leader.product_id, competitor.product_id
            )));
        }
        let n_l: f64 = leader.sales_count.values.iter().sum();
        let n_c: f64 = competitor.sales_count.values.iter().sum();
        if n_l + n_c <= 0.0 {
            return Err(Error::InsufficientData("pair has no AVP reviews".into()));
        }
        let entry_week = competitor
            .sales_count
            .values
            .iter()
            .zip(&competitor.nonavp_count.values)
            .position(|(a, b)| a + b > 0.0)
            .ok_or_else(|| Error::InsufficientData(format!("{} has no reviews", competitor.product_id)))?;
        let scale = |lc: &ProductLifecycle, n: f64| -> Vec<f64> {
            lc.sales_density.values.iter().map(|v| v * n / (n_l + n_c)).collect()
        };
        let mut exogenous: Vec<Vec<f64>> = crate::forecast::allied_exogenous(leader);
        exogenous.extend(crate::forecast::allied_exogenous(competitor));
        Ok(CompetitionPair {
            leader_id: leader.product_id.clone(),
            competitor_id: competitor.product_id.clone(),
            entry_week,
            leader_density: scale(leader, n_l),
            competitor_density: scale(competitor, n_c),
            leader_edge: EdgeSeries::from_lifecycle(leader),
            competitor_edge: EdgeSeries::from_lifecycle(competitor),
            exogenous,
        })
    }

    pub fn len(&self) -> usize {
        self.leader_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leader_density.is_empty()
    }

    /// `CE_ij(t)` with `i` the leader and `j` the competitor.
    pub fn edge_path(&self) -> Vec<f64> {
        (0..self.len())
            .map(|t| competition_edge(self.leader_edge.at(t), self.competitor_edge.at(t)))
            .collect()
    }

    pub fn coefficients(&self, mode: CoefficientMode) -> CoefficientPaths {
        match mode {
            CoefficientMode::Learned { delta } => {
                let ce = self.edge_path();
                let neg: Vec<f64> = ce.iter().map(|v| -v).collect();
                CoefficientPaths {
                    a_ij: coefficient_path(&ce, self.entry_week, delta),
                    a_ji: coefficient_path(&neg, self.entry_week, delta),
                }
            }
            CoefficientMode::Fixed { a_ij, a_ji } => CoefficientPaths {
                a_ij: vec![a_ij; self.len()],
                a_ji: vec![a_ji; self.len()],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientMode {
    Learned { delta: f64 },
    Fixed { a_ij: f64, a_ji: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientPaths {
    /// Pressure of the competitor on the leader.
    pub a_ij: Vec<f64>,
    /// Pressure of the leader on the competitor.
    pub a_ji: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairEvaluation {
    pub leader: ForecastEvaluation,
    pub competitor: ForecastEvaluation,
}

/// Rolling LVC-COMP backtest over the pair's overlap. Growth rates of both
/// products are recovered by inverting the coupled step under the
/// coefficient paths, predicted jointly by a 2-dim VARX on the twelve
/// allied series, and pushed through the coupled step.
pub fn comp_backtest(pair: &CompetitionPair, cfg: &BacktestConfig, mode: CoefficientMode) -> Result<PairEvaluation> {
    let n = pair.len();
    let (sd_i, sd_j) = (&pair.leader_density, &pair.competitor_density);
    let start = pair_start(pair);
    check_window(n, cfg.window, start)?;
    let paths = pair.coefficients(mode);
    let pressure_i: Vec<f64> = (0..n).map(|t| paths.a_ij[t] * sd_j[t]).collect();
    let pressure_j: Vec<f64> = (0..n).map(|t| paths.a_ji[t] * sd_i[t]).collect();
    let g_i = invert_growth_with(sd_i, &pressure_i, cfg.capacity);
    let g_j = invert_growth_with(sd_j, &pressure_j, cfg.capacity);
    let spec = VarxSpec {
        p: cfg.lag,
        exog_lag: cfg.exog_lag,
    };
    let mut leader = ForecastEvaluation::new("LVC-COMP");
    let mut competitor = ForecastEvaluation::new("LVC-COMP");
    for u in start + cfg.window..n {
        let t = u - 1;
        let (r, fell_back) = predict_growth(&[&g_i, &g_j], &pair.exogenous, u - cfg.window, t, spec);
        let (pi, pj) = lvc_comp_step(
            sd_i[t],
            sd_j[t],
            r[0],
            r[1],
            paths.a_ij[t],
            paths.a_ji[t],
            cfg.capacity,
            cfg.capacity,
        );
        leader.fallbacks += usize::from(fell_back);
        competitor.fallbacks += usize::from(fell_back);
        leader.push(u, pi, sd_i[u]);
        competitor.push(u, pj, sd_j[u]);
    }
    Ok(PairEvaluation {
        leader: leader.finish()?,
        competitor: competitor.finish()?,
    })
}

/// First week of the overlap at which both densities are usable.
pub fn pair_start(pair: &CompetitionPair) -> usize {
    pair.entry_week
        .max(first_valid(&pair.leader_density))
        .max(first_valid(&pair.competitor_density))
}

/// ARIMA on each product's pair-scaled density over the same targets as
/// [`comp_backtest`].
pub fn pair_arima(pair: &CompetitionPair, cfg: &BacktestConfig, order: ArimaOrder) -> Result<PairEvaluation> {
    let start = pair_start(pair);
    Ok(PairEvaluation {
        leader: arima_forecast(&pair.leader_density, order, cfg.window, start)?.clamped(0.0, cfg.capacity)?,
        competitor: arima_forecast(&pair.competitor_density, order, cfg.window, start)?.clamped(0.0, cfg.capacity)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub breakeven_week: Option<usize>,
    pub takeover_time: Option<usize>,
    pub recovery_time: Option<usize>,
    pub outcome: Outcome,
    pub leader_peak: f64,
    pub competitor_peak: f64,
    pub takeover_volume_pct: Option<f64>,
}

/// Locate breakeven and recovery on aligned densities.
///
/// Breakeven is the first week at or after entry where the competitor's
/// density is positive and at least the leader's. The leader recovers at the
/// first week, after having fallen below `theta` times its pre-breakeven
/// peak, at which it is back at or above that level.
pub fn detect_events(leader: &[f64], competitor: &[f64], entry: usize, theta: f64) -> Result<EventReport> {
    if leader.len() != competitor.len() {
        return Err(Error::InvalidArgument("density series lengths differ".into()));
    }
    let competitor_peak = competitor.iter().copied().fold(0.0, f64::max);
    let breakeven = (entry..leader.len()).find(|&t| competitor[t] > 0.0 && competitor[t] >= leader[t]);
    let Some(b) = breakeven else {
        return Ok(EventReport {
            breakeven_week: None,
            takeover_time: None,
            recovery_time: None,
            outcome: Outcome::Undecided,
            leader_peak: leader.iter().copied().fold(0.0, f64::max),
            competitor_peak,
            takeover_volume_pct: None,
        });
    };
    let peak = leader[..=b].iter().copied().fold(0.0, f64::max);
    let level = theta * peak;
    let recovery = leader[b..]
        .iter()
        .position(|&v| v < level)
        .and_then(|dip| leader[b + dip..].iter().position(|&v| v >= level).map(|w| dip + w));
    Ok(EventReport {
        breakeven_week: Some(b),
        takeover_time: Some(b - entry),
        recovery_time: recovery,
        outcome: if recovery.is_some() {
            Outcome::Survival
        } else {
            Outcome::Death
        },
        leader_peak: peak,
        competitor_peak,
        takeover_volume_pct: takeover_volume(peak, competitor_peak).ok(),
    })
}

/// Percentage by which the second peak exceeds the first.
pub fn takeover_volume(peak_first: f64, peak_second: f64) -> Result<f64> {
    if peak_first <= 0.0 || !peak_first.is_finite() {
        return Err(Error::Domain(format!("first peak must be positive, got {peak_first}")));
    }
    Ok((peak_second / peak_first - 1.0) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub leader_id: String,
    pub competitor_id: String,
    pub label: Option<Outcome>,
}

/// Parse a `leader_id,competitor_id[,label]` manifest; a header row is
/// optional.
pub fn parse_pair_manifest<R: BufRead>(source: R) -> Result<Vec<PairEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("pair manifest: {e}")))?;
        if i == 0 && rec.get(0) == Some("leader_id") {
            continue;
        }
        if rec.len() < 2 || rec.len() > 3 {
            return Err(Error::Parse(format!("pair manifest row {}: expected 2 or 3 fields", i + 1)));
        }
        let label = match rec.get(2) {
            Some(s) if !s.is_empty() => Some(s.parse()?),
            _ => None,
        };
        out.push(PairEntry {
            leader_id: rec[0].to_string(),
            competitor_id: rec[1].to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn write_pair_manifest<W: std::io::Write>(out: W, pairs: &[PairEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["leader_id", "competitor_id", "label"]).map_err(err)?;
    for p in pairs {
        let label = p.label.map(|l| serde_json::to_value(l).expect("outcome serializes"));
        let label = label.as_ref().and_then(|v| v.as_str()).unwrap_or("");
        w.write_record([p.leader_id.as_str(), p.competitor_id.as_str(), label]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

/// Event report of one pair, as written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvents {
    pub leader_id: String,
    pub competitor_id: String,
    pub entry_week: usize,
    pub events: EventReport,
    /// Human label from the manifest, when given; it overrides `events.outcome`.
    pub label: Option<Outcome>,
}

impl PairEvents {
    pub fn outcome(&self) -> Outcome {
        self.label.unwrap_or(self.events.outcome)
    }
}

/// Count of pairs per outcome.
pub fn outcome_counts(events: &[PairEvents]) -> BTreeMap<Outcome, usize> {
    let mut m = BTreeMap::new();
    for e in events {
        *m.entry(e.outcome()).or_insert(0) += 1;
    }
    m
}
