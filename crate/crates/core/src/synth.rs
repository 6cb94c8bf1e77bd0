//! Synthetic markets with known dynamics.
//!
//! Each product has a latent appeal `q(t)` in `(0, 1)` whose logit follows a
//! piecewise-linear trend plus AR(1) noise. Appeal drives the growth rate
//! through a VARX recursion and sets the like-probability, sentiment and
//! helpfulness of every review. Density paths come from the logistic step;
//! weekly AVP counts are multinomial over weeks with probabilities
//! proportional to the density.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::competition::{
    coefficient_path, competition_edge, detect_events, lvc_comp_step, normalize_rating, CompetitionPair, EdgeInputs,
    EventReport, Outcome, PairEntry, DEFAULT_THETA,
};
use crate::error::{Error, Result};
use crate::forecast::lvc_step;
use crate::ingest::{PriceTable, ReviewRecord};
use crate::series::{ProductLifecycle, WeekGrid};

/// Growth-rate process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrowthSpec {
    Constant { rate: f64 },
    /// `r(t) = intercept + ar * r(t-1) + appeal * q(t-1)`.
    Varx { intercept: f64, ar: f64, appeal: f64 },
}

impl Default for GrowthSpec {
    fn default() -> Self {
        GrowthSpec::Varx {
            intercept: -0.15,
            ar: 0.3,
            appeal: 0.3,
        }
    }
}

/// AR(1) noise on the appeal logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppealNoise {
    pub phi: f64,
    pub sigma: f64,
}

impl Default for AppealNoise {
    fn default() -> Self {
        AppealNoise { phi: 0.8, sigma: 1.0 }
    }
}

/// Per-review sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSpec {
    /// Range of the unverified share of a product's reviews.
    pub nonavp_share: [f64; 2],
    /// Fixed appeal of unverified reviewers.
    pub nonavp_appeal: f64,
    /// Weight of the fixed appeal in unverified reviews; the rest follows
    /// the product's latent appeal.
    pub nonavp_weight: f64,
    /// Share of 5-star ratings among likes.
    pub five_star_share: f64,
    /// Mean lexicon hits per review.
    pub sentiment_words: f64,
    pub vote_trials: u64,
    pub vote_rate: f64,
    pub mean_length: f64,
    pub comment_rate: f64,
    pub price_range: [f64; 2],
}

impl Default for ReviewSpec {
    fn default() -> Self {
        ReviewSpec {
            nonavp_share: [0.05, 0.35],
            nonavp_appeal: 0.8,
            nonavp_weight: 1.0,
            five_star_share: 0.6,
            sentiment_words: 12.0,
            vote_trials: 8,
            vote_rate: 0.5,
            mean_length: 60.0,
            comment_rate: 0.1,
            price_range: [10.0, 200.0],
        }
    }
}

/// Timing of unverified reviews relative to the AVP peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpamType {
    /// A burst ahead of the AVP peak.
    Lead,
    /// Bursts ahead of and behind the peak.
    LeadLagged,
    /// The AVP curve shifted later.
    Follow,
    /// A long plateau after the peak.
    BufferedLagged,
    /// A short plateau around the peak.
    BufferedTight,
}

impl SpamType {
    pub const ALL: [SpamType; 5] = [
        SpamType::Lead,
        SpamType::LeadLagged,
        SpamType::Follow,
        SpamType::BufferedLagged,
        SpamType::BufferedTight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpamType::Lead => "lead",
            SpamType::LeadLagged => "lead_lagged",
            SpamType::Follow => "follow",
            SpamType::BufferedLagged => "buffered_lagged",
            SpamType::BufferedTight => "buffered_tight",
        }
    }

    /// Unnormalized weekly weights of unverified reviews.
    pub fn profile(self, density: &[f64]) -> Vec<f64> {
        let n = density.len();
        let peak = argmax(density) as f64;
        let bump = |c: f64, w: f64| -> Vec<f64> { (0..n).map(|t| (-((t as f64 - c) / w).powi(2) / 2.0).exp()).collect() };
        let boxed = |a: f64, b: f64| -> Vec<f64> {
            (0..n).map(|t| if (a..=b).contains(&(t as f64)) { 1.0 } else { 0.0 }).collect()
        };
        let mut w = match self {
            SpamType::Lead => bump(peak - 8.0, 3.0),
            SpamType::LeadLagged => {
                let a = bump(peak - 8.0, 3.0);
                let b = bump(peak + 8.0, 3.0);
                a.iter().zip(&b).map(|(x, y)| x + y).collect()
            }
            SpamType::Follow => (0..n).map(|t| if t >= 6 { density[t - 6] } else { 0.0 }).collect(),
            SpamType::BufferedLagged => boxed(peak + 2.0, peak + 16.0),
            SpamType::BufferedTight => boxed(peak - 3.0, peak + 3.0),
        };
        // no spam before launch
        let launch = density.iter().position(|&v| v > 0.0).unwrap_or(0);
        w.iter_mut().take(launch).for_each(|v| *v = 0.0);
        w
    }
}

impl std::str::FromStr for SpamType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpamType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown spam type {s:?}")))
    }
}

/// How a generated pair couples its densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coupling {
    /// Coefficient paths accumulated from the latent competition edge.
    Learned { delta: f64 },
    Fixed { a_ij: f64, a_ji: f64 },
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling::Learned { delta: 0.05 }
    }
}

/// Launch and latent appeal of one product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSpec {
    pub product_id: String,
    #[serde(default)]
    pub launch_week: usize,
    pub initial_density: f64,
    /// `[week, logit]` knots of the appeal trend, sorted by week; held flat
    /// outside the knots.
    pub appeal_knots: Vec<[f64; 2]>,
    #[serde(default)]
    pub spam: Option<SpamType>,
    #[serde(default)]
    pub nonavp_share: Option<f64>,
    #[serde(default)]
    pub price: Option<f64>,
}

impl ProductSpec {
    fn trend(&self, t: usize) -> f64 {
        let t = t as f64;
        let k = &self.appeal_knots;
        if t <= k[0][0] {
            return k[0][1];
        }
        for w in k.windows(2) {
            if t <= w[1][0] {
                let f = (t - w[0][0]) / (w[1][0] - w[0][0]);
                return w[0][1] + f * (w[1][1] - w[0][1]);
            }
        }
        k[k.len() - 1][1]
    }
}

/// A competing pair to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub leader: ProductSpec,
    pub competitor: ProductSpec,
    #[serde(default)]
    pub coupling: Coupling,
}

/// Ranges for randomly drawn products and pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSpec {
    pub start_logit: [f64; 2],
    pub end_logit: [f64; 2],
    pub initial_density: [f64; 2],
    pub entry_week: [usize; 2],
    /// Chance that a random product carries a spam pattern.
    pub spam_rate: f64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            start_logit: [1.5, 2.5],
            end_logit: [-2.5, -1.5],
            initial_density: [3e-4, 1e-3],
            entry_week: [15, 35],
            spam_rate: 0.3,
        }
    }
}

/// Declarative description of a synthetic market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketScenario {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub horizon_weeks: usize,
    /// Randomly drawn single products.
    pub n_products: usize,
    /// Randomly drawn competing pairs.
    pub n_pairs: usize,
    /// AVP reviews of a single product; a pair shares twice this number.
    pub reviews_per_product: usize,
    pub capacity: f64,
    pub growth: GrowthSpec,
    pub noise: AppealNoise,
    pub reviews: ReviewSpec,
    pub random: RandomSpec,
    pub coupling: Coupling,
    /// Explicit products, generated after the random ones.
    pub products: Vec<ProductSpec>,
    /// Explicit pairs, generated after the random ones.
    pub pairs: Vec<PairSpec>,
}

impl Default for MarketScenario {
    fn default() -> Self {
        MarketScenario {
            seed: 1,
            start_date: NaiveDate::from_ymd_opt(2012, 1, 2).expect("valid date"),
            horizon_weeks: 104,
            n_products: 50,
            n_pairs: 20,
            reviews_per_product: 50_000,
            capacity: 1.0,
            growth: GrowthSpec::default(),
            noise: AppealNoise::default(),
            reviews: ReviewSpec::default(),
            random: RandomSpec::default(),
            coupling: Coupling::default(),
            products: Vec::new(),
            pairs: Vec::new(),
        }
    }
}

fn ordered(r: [f64; 2], name: &str) -> Result<()> {
    if r[0] <= r[1] && r.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} range must be finite and ascending")))
    }
}

fn probability(p: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in [0, 1], got {p}")))
    }
}

impl MarketScenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: MarketScenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> WeekGrid {
        WeekGrid {
            origin: self.start_date,
            span: self.horizon_weeks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_weeks < 25 {
            return Err(Error::Config(format!(
                "horizon_weeks must be >= 25, got {}",
                self.horizon_weeks
            )));
        }
        if self.reviews_per_product == 0 {
            return Err(Error::Config("reviews_per_product must be > 0".into()));
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(Error::Config("capacity must be > 0".into()));
        }
        if let GrowthSpec::Varx { ar, .. } = self.growth {
            if ar.abs() >= 1.0 {
                return Err(Error::Config(format!("growth ar coefficient {ar} is not stationary")));
            }
        }
        if self.noise.phi.abs() >= 1.0 || self.noise.sigma < 0.0 {
            return Err(Error::Config("appeal noise needs |phi| < 1 and sigma >= 0".into()));
        }
        let r = &self.reviews;
        ordered(r.nonavp_share, "nonavp_share")?;
        probability(r.nonavp_share[0], "nonavp_share")?;
        if r.nonavp_share[1] >= 1.0 {
            return Err(Error::Config("nonavp_share must stay below 1".into()));
        }
        probability(r.nonavp_appeal, "nonavp_appeal")?;
        probability(r.nonavp_weight, "nonavp_weight")?;
        probability(r.five_star_share, "five_star_share")?;
        probability(r.vote_rate, "vote_rate")?;
        probability(r.comment_rate, "comment_rate")?;
        if r.sentiment_words < 1.0 || r.mean_length < 0.0 {
            return Err(Error::Config("sentiment_words must be >= 1 and mean_length >= 0".into()));
        }
        ordered(r.price_range, "price_range")?;
        if r.price_range[0] < 0.0 {
            return Err(Error::Config("prices must be >= 0".into()));
        }
        let q = &self.random;
        ordered(q.start_logit, "start_logit")?;
        ordered(q.end_logit, "end_logit")?;
        ordered(q.initial_density, "initial_density")?;
        if q.initial_density[0] <= 0.0 || q.initial_density[1] >= self.capacity {
            return Err(Error::Config("initial_density must lie inside (0, capacity)".into()));
        }
        if q.entry_week[0] > q.entry_week[1] || q.entry_week[1] >= self.horizon_weeks {
            return Err(Error::Config("entry_week range must be ascending and inside the horizon".into()));
        }
        probability(q.spam_rate, "spam_rate")?;
        self.check_coupling(self.coupling)?;
        let mut ids = BTreeMap::new();
        for p in self.products.iter().chain(self.pairs.iter().flat_map(|p| [&p.leader, &p.competitor])) {
            self.check_product(p)?;
            if ids.insert(p.product_id.clone(), ()).is_some() {
                return Err(Error::Config(format!("duplicate product id {}", p.product_id)));
            }
        }
        for p in &self.pairs {
            self.check_coupling(p.coupling)?;
            if p.competitor.launch_week <= p.leader.launch_week {
                return Err(Error::Config(format!(
                    "competitor {} must launch after its leader",
                    p.competitor.product_id
                )));
            }
        }
        Ok(())
    }

    fn check_coupling(&self, c: Coupling) -> Result<()> {
        match c {
            Coupling::Learned { delta } if !(delta >= 0.0 && delta.is_finite()) => {
                Err(Error::Config(format!("delta must be >= 0, got {delta}")))
            }
            Coupling::Fixed { a_ij, a_ji } if !(0.0..=1.0).contains(&a_ij) || !(0.0..=1.0).contains(&a_ji) => {
                Err(Error::Config("fixed coefficients must lie in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }

    fn check_product(&self, p: &ProductSpec) -> Result<()> {
        if p.product_id.is_empty() {
            return Err(Error::Config("empty product id".into()));
        }
        if p.launch_week >= self.horizon_weeks {
            return Err(Error::Config(format!("{} launches after the horizon", p.product_id)));
        }
        if !(p.initial_density > 0.0 && p.initial_density < self.capacity) {
            return Err(Error::Config(format!(
                "{}: initial_density must lie inside (0, capacity)",
                p.product_id
            )));
        }
        if p.appeal_knots.is_empty() || p.appeal_knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::Config(format!(
                "{}: appeal_knots must be non-empty with increasing weeks",
                p.product_id
            )));
        }
        if let Some(s) = p.nonavp_share {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Config(format!("{}: nonavp_share must be in [0, 1)", p.product_id)));
            }
        }
        if p.price.is_some_and(|v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{}: price must be >= 0", p.product_id)));
        }
        Ok(())
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Independent generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Hidden state of one generated product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleTruth {
    pub product_id: String,
    pub launch_week: usize,
    pub price: f64,
    pub nonavp_share: f64,
    pub spam: Option<SpamType>,
    pub appeal: Vec<f64>,
    pub growth: Vec<f64>,
    /// Simulated density `SD*`, before normalization.
    pub density: Vec<f64>,
    pub avp_reviews: usize,
    pub nonavp_reviews: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticProduct {
    pub records: Vec<ReviewRecord>,
    pub lifecycle: ProductLifecycle,
    pub truth: LifecycleTruth,
}

/// Latent appeal and growth paths of one product, drawn from `rng`.
fn latent_paths(sc: &MarketScenario, spec: &ProductSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = sc.horizon_weeks;
    let noise = Normal::new(0.0, sc.noise.sigma.max(f64::MIN_POSITIVE)).expect("valid sd");
    let mut z = 0.0;
    let appeal: Vec<f64> = (0..n)
        .map(|t| {
            z = sc.noise.phi * z + if sc.noise.sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            logistic(spec.trend(t) + z)
        })
        .collect();
    let growth = match sc.growth {
        GrowthSpec::Constant { rate } => vec![rate; n],
        GrowthSpec::Varx { intercept, ar, appeal: b } => {
            let mut r = vec![0.0; n];
            r[0] = (intercept + b * appeal[0]) / (1.0 - ar);
            for t in 1..n {
                r[t] = intercept + ar * r[t - 1] + b * appeal[t - 1];
            }
            r
        }
    };
    (appeal, growth)
}

fn simulate_density(spec: &ProductSpec, growth: &[f64], capacity: f64) -> Vec<f64> {
    let n = growth.len();
    let mut sd = vec![0.0; n];
    sd[spec.launch_week] = spec.initial_density;
    for t in spec.launch_week..n - 1 {
        sd[t + 1] = lvc_step(sd[t], growth[t], capacity);
    }
    sd
}

/// Multinomial counts of `total` draws over cells weighted by `weights`.
pub fn multinomial<R: Rng>(rng: &mut R, total: u64, weights: &[f64]) -> Vec<u64> {
    let mut left = total;
    let mut mass: f64 = weights.iter().sum();
    let mut out = vec![0; weights.len()];
    let last = weights.iter().rposition(|&w| w > 0.0);
    for (i, &w) in weights.iter().enumerate() {
        if left == 0 || mass <= 0.0 {
            break;
        }
        if Some(i) == last {
            out[i] = left;
            break;
        }
        let p = (w / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, p).expect("valid binomial").sample(rng);
        out[i] = k;
        left -= k;
        mass -= w;
    }
    out
}

/// Review-level sampler shared by all products of a scenario.
struct ReviewSampler<'a> {
    spec: &'a ReviewSpec,
    words: Poisson<f64>,
    length: Option<Poisson<f64>>,
}

impl<'a> ReviewSampler<'a> {
    fn new(spec: &'a ReviewSpec) -> Self {
        ReviewSampler {
            spec,
            words: Poisson::new((spec.sentiment_words - 1.0).max(1e-9)).expect("valid rate"),
            length: (spec.mean_length > 0.0).then(|| Poisson::new(spec.mean_length).expect("valid rate")),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R, product_id: &str, date: NaiveDate, verified: bool, q: f64) -> ReviewRecord {
        let s = self.spec;
        let rating = if rng.random_bool(q) {
            if rng.random_bool(s.five_star_share) {
                5
            } else {
                4
            }
        } else {
            rng.random_range(1..=3)
        };
        let m = 1 + self.words.sample(rng) as u32;
        let pos = Binomial::new(u64::from(m), q).expect("valid binomial").sample(rng) as u32;
        let total_votes = Binomial::new(s.vote_trials, s.vote_rate).expect("valid binomial").sample(rng);
        let helpful_votes = Binomial::new(total_votes, q).expect("valid binomial").sample(rng);
        ReviewRecord {
            product_id: product_id.to_string(),
            date,
            rating,
            verified,
            helpful_votes: helpful_votes as u32,
            total_votes: total_votes as u32,
            pos_words: pos,
            neg_words: m - pos,
            word_count: m + self.length.map_or(0, |p| p.sample(rng) as u32),
            comments: Binomial::new(2, s.comment_rate).expect("valid binomial").sample(rng) as u32,
        }
    }

    /// Expected normalized edge inputs of AVP reviews at appeal `q`.
    fn expected_edge(&self, q: f64) -> EdgeInputs {
        let s = self.spec;
        let like_stars = 5.0 * s.five_star_share + 4.0 * (1.0 - s.five_star_share);
        let voted = 1.0 - (1.0 - s.vote_rate).powi(s.vote_trials as i32);
        EdgeInputs {
            rating: normalize_rating(q * like_stars + (1.0 - q) * 2.0),
            helpfulness: q * voted,
            sentiment: q,
        }
    }
}

/// Draw reviews for weekly counts; dates are uniform within each week.
#[allow(clippy::too_many_arguments)]
fn emit_reviews<R: Rng>(
    rng: &mut R,
    sampler: &ReviewSampler<'_>,
    product_id: &str,
    origin: NaiveDate,
    counts: &[u64],
    verified: bool,
    appeal: &dyn Fn(usize) -> f64,
    out: &mut Vec<ReviewRecord>,
) {
    for (w, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            let date = origin + Duration::days(7 * w as i64 + rng.random_range(0..7));
            out.push(sampler.draw(rng, product_id, date, verified, appeal(w)));
        }
    }
}

/// Spec of a random product, drawn from `rng`.
fn random_product(sc: &MarketScenario, id: String, launch: usize, rng: &mut ChaCha8Rng) -> ProductSpec {
    let q = &sc.random;
    let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] < r[1] { rng.random_range(r[0]..r[1]) } else { r[0] };
    let start = draw(rng, q.start_logit);
    let end = draw(rng, q.end_logit);
    let sd0 = draw(rng, q.initial_density);
    let spam = rng
        .random_bool(q.spam_rate)
        .then(|| SpamType::ALL[rng.random_range(0..SpamType::ALL.len())]);
    ProductSpec {
        product_id: id,
        launch_week: launch,
        initial_density: sd0,
        appeal_knots: vec![[launch as f64, start], [(sc.horizon_weeks - 1) as f64, end]],
        spam,
        nonavp_share: None,
        price: None,
    }
}

/// Observable reviews for one product given its density path and appeal.
fn observe(
    sc: &MarketScenario,
    spec: &ProductSpec,
    appeal: &[f64],
    density: &[f64],
    n_avp: u64,
    rng: &mut ChaCha8Rng,
) -> (Vec<ReviewRecord>, f64, f64, usize) {
    let r = &sc.reviews;
    let sampler = ReviewSampler::new(r);
    let share = spec.nonavp_share.unwrap_or_else(|| {
        if r.nonavp_share[0] < r.nonavp_share[1] {
            rng.random_range(r.nonavp_share[0]..r.nonavp_share[1])
        } else {
            r.nonavp_share[0]
        }
    });
    let price = spec.price.unwrap_or_else(|| {
        let p = rng.random_range(r.price_range[0]..=r.price_range[1]);
        (p * 100.0).round() / 100.0
    });
    let avp_counts = multinomial(rng, n_avp, density);
    let n_nonavp = (n_avp as f64 * share / (1.0 - share)).round() as u64;
    let spam_weights = match spec.spam {
        Some(kind) => kind.profile(density),
        None => density.to_vec(),
    };
    let spam_weights = if spam_weights.iter().sum::<f64>() > 0.0 { spam_weights } else { density.to_vec() };
    let nonavp_counts = multinomial(rng, n_nonavp, &spam_weights);
    let mut records = Vec::with_capacity((n_avp + n_nonavp) as usize);
    let grid = sc.grid();
    emit_reviews(rng, &sampler, &spec.product_id, grid.origin, &avp_counts, true, &|w| appeal[w], &mut records);
    let (fixed, weight) = (r.nonavp_appeal, r.nonavp_weight);
    let nonavp = |w: usize| weight * fixed + (1.0 - weight) * appeal[w];
    emit_reviews(rng, &sampler, &spec.product_id, grid.origin, &nonavp_counts, false, &nonavp, &mut records);
    records.sort_by_key(|rec| rec.date);
    (records, share, price, n_nonavp as usize)
}

fn build(
    sc: &MarketScenario,
    spec: &ProductSpec,
    appeal: Vec<f64>,
    growth: Vec<f64>,
    density: Vec<f64>,
    n_avp: u64,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticProduct> {
    let (records, share, price, n_nonavp) = observe(sc, spec, &appeal, &density, n_avp, rng);
    let lifecycle = ProductLifecycle::build(&spec.product_id, &records, price, Some(sc.grid()))?;
    Ok(SyntheticProduct {
        records,
        lifecycle,
        truth: LifecycleTruth {
            product_id: spec.product_id.clone(),
            launch_week: spec.launch_week,
            price,
            nonavp_share: share,
            spam: spec.spam,
            appeal,
            growth,
            density,
            avp_reviews: n_avp as usize,
            nonavp_reviews: n_nonavp,
        },
    })
}

/// Generate one product. The same `(scenario, spec, stream)` always gives
/// the same output.
pub fn gen_lifecycle(sc: &MarketScenario, spec: &ProductSpec, stream: u64) -> Result<SyntheticProduct> {
    sc.check_product(spec)?;
    let mut latent = stream_rng(sc.seed, 2 * stream);
    let (appeal, growth) = latent_paths(sc, spec, &mut latent);
    let density = simulate_density(spec, &growth, sc.capacity);
    let mut obs = stream_rng(sc.seed, 2 * stream + 1);
    build(sc, spec, appeal, growth, density, sc.reviews_per_product as u64, &mut obs)
}

/// Hidden state of a generated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTruth {
    pub leader_id: String,
    pub competitor_id: String,
    pub entry_week: usize,
    pub coupling: Coupling,
    pub a_ij: Vec<f64>,
    pub a_ji: Vec<f64>,
    /// Events on the hidden densities.
    pub events: EventReport,
}

impl PairTruth {
    pub fn outcome(&self) -> Outcome {
        self.events.outcome
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub leader: SyntheticProduct,
    pub competitor: SyntheticProduct,
    pub pair: CompetitionPair,
    pub truth: PairTruth,
}

/// Generate a coupled pair. Latent draws of each product use the streams
/// [`gen_lifecycle`] would use for `leader_stream` and `competitor_stream`,
/// so zero coupling reproduces two independent lifecycles.
pub fn gen_pair(sc: &MarketScenario, spec: &PairSpec, leader_stream: u64, competitor_stream: u64) -> Result<SyntheticPair> {
    sc.check_product(&spec.leader)?;
    sc.check_product(&spec.competitor)?;
    sc.check_coupling(spec.coupling)?;
    let entry = spec.competitor.launch_week;
    if entry <= spec.leader.launch_week {
        return Err(Error::Config("competitor must launch after its leader".into()));
    }
    let n = sc.horizon_weeks;
    let (q_i, r_i) = latent_paths(sc, &spec.leader, &mut stream_rng(sc.seed, 2 * leader_stream));
    let (q_j, r_j) = latent_paths(sc, &spec.competitor, &mut stream_rng(sc.seed, 2 * competitor_stream));
    let (a_ij, a_ji) = match spec.coupling {
        Coupling::Fixed { a_ij, a_ji } => {
            let path = |a: f64| (0..n).map(|t| if t >= entry { a } else { 0.0 }).collect::<Vec<_>>();
            (path(a_ij), path(a_ji))
        }
        Coupling::Learned { delta } => {
            let sampler = ReviewSampler::new(&sc.reviews);
            let ce: Vec<f64> = (0..n)
                .map(|t| competition_edge(sampler.expected_edge(q_i[t]), sampler.expected_edge(q_j[t])))
                .collect();
            let neg: Vec<f64> = ce.iter().map(|v| -v).collect();
            (coefficient_path(&ce, entry, delta), coefficient_path(&neg, entry, delta))
        }
    };
    let mut sd_i = vec![0.0; n];
    let mut sd_j = vec![0.0; n];
    sd_i[spec.leader.launch_week] = spec.leader.initial_density;
    sd_j[entry] = spec.competitor.initial_density;
    for t in spec.leader.launch_week..n - 1 {
        if t < entry {
            sd_i[t + 1] = lvc_step(sd_i[t], r_i[t], sc.capacity);
        } else {
            let (a, b) = lvc_comp_step(sd_i[t], sd_j[t], r_i[t], r_j[t], a_ij[t], a_ji[t], sc.capacity, sc.capacity);
            sd_i[t + 1] = a;
            sd_j[t + 1] = b;
        }
    }
    let events = detect_events(&sd_i, &sd_j, entry, DEFAULT_THETA)?;
    let total = 2.0 * sc.reviews_per_product as f64;
    let (m_i, m_j): (f64, f64) = (sd_i.iter().sum(), sd_j.iter().sum());
    let n_i = (total * m_i / (m_i + m_j)).round() as u64;
    let n_j = (total as u64).saturating_sub(n_i);
    let leader = build(sc, &spec.leader, q_i, r_i, sd_i, n_i, &mut stream_rng(sc.seed, 2 * leader_stream + 1))?;
    let competitor = build(
        sc,
        &spec.competitor,
        q_j,
        r_j,
        sd_j,
        n_j,
        &mut stream_rng(sc.seed, 2 * competitor_stream + 1),
    )?;
    let pair = CompetitionPair::from_lifecycles(&leader.lifecycle, &competitor.lifecycle)?;
    Ok(SyntheticPair {
        truth: PairTruth {
            leader_id: spec.leader.product_id.clone(),
            competitor_id: spec.competitor.product_id.clone(),
            entry_week: entry,
            coupling: spec.coupling,
            a_ij,
            a_ji,
            events,
        },
        leader,
        competitor,
        pair,
    })
}

/// Stream of the `i`-th product slot; pairs take two slots.
pub const PAIR_STREAM_BASE: u64 = 1 << 20;
/// Streams for drawing random specs.
const SPEC_STREAM: u64 = 1 << 40;

/// A generated market.
#[derive(Debug, Clone)]
pub struct Market {
    pub scenario: MarketScenario,
    pub products: Vec<SyntheticProduct>,
    pub pairs: Vec<SyntheticPair>,
}

impl MarketScenario {
    /// Product specs: random ones first, then explicit ones.
    pub fn product_specs(&self) -> Vec<ProductSpec> {
        let mut rng = stream_rng(self.seed, SPEC_STREAM);
        let mut out: Vec<ProductSpec> = (0..self.n_products)
            .map(|i| random_product(self, format!("P{:04}", i + 1), 0, &mut rng))
            .collect();
        out.extend(self.products.iter().cloned());
        out
    }

    /// Pair specs: random ones first, then explicit ones.
    pub fn pair_specs(&self) -> Vec<PairSpec> {
        let mut rng = stream_rng(self.seed, SPEC_STREAM + 1);
        let q = &self.random;
        let mut out: Vec<PairSpec> = (0..self.n_pairs)
            .map(|i| {
                let entry = rng.random_range(q.entry_week[0]..=q.entry_week[1]);
                let mut leader = random_product(self, format!("L{:03}", i + 1), 0, &mut rng);
                let mut competitor = random_product(self, format!("C{:03}", i + 1), entry, &mut rng);
                leader.spam = None;
                competitor.spam = None;
                PairSpec {
                    leader,
                    competitor,
                    coupling: self.coupling,
                }
            })
            .collect();
        out.extend(self.pairs.iter().cloned());
        out
    }
}

/// Generate every product and pair of a scenario, in parallel.
pub fn generate_market(sc: &MarketScenario) -> Result<Market> {
    sc.validate()?;
    let products = sc
        .product_specs()
        .par_iter()
        .enumerate()
        .map(|(i, spec)| gen_lifecycle(sc, spec, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let pairs = sc
        .pair_specs()
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let s = PAIR_STREAM_BASE + 2 * i as u64;
            gen_pair(sc, spec, s, s + 1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Market {
        scenario: sc.clone(),
        products,
        pairs,
    })
}

/// An item handed to the sink of [`generate_with`].
pub enum Generated<'a> {
    Product(&'a SyntheticProduct),
    Pair(&'a SyntheticPair),
}

/// Generate a scenario in parallel batches, passing each product and then
/// each pair to `sink` in order. Only one batch is held in memory.
pub fn generate_with<F>(sc: &MarketScenario, mut sink: F) -> Result<MarketTruth>
where
    F: FnMut(Generated<'_>) -> Result<()>,
{
    sc.validate()?;
    let batch = 2 * rayon::current_num_threads().max(1);
    let mut truth = MarketTruth {
        seed: sc.seed,
        products: Vec::new(),
        pairs: Vec::new(),
        pair_products: Vec::new(),
    };
    let specs: Vec<(usize, ProductSpec)> = sc.product_specs().into_iter().enumerate().collect();
    for chunk in specs.chunks(batch) {
        let items = chunk
            .par_iter()
            .map(|(i, spec)| gen_lifecycle(sc, spec, *i as u64))
            .collect::<Result<Vec<_>>>()?;
        for p in &items {
            sink(Generated::Product(p))?;
            truth.products.push(p.truth.clone());
        }
    }
    let specs: Vec<(usize, PairSpec)> = sc.pair_specs().into_iter().enumerate().collect();
    for chunk in specs.chunks(batch) {
        let items = chunk
            .par_iter()
            .map(|(i, spec)| {
                let s = PAIR_STREAM_BASE + 2 * *i as u64;
                gen_pair(sc, spec, s, s + 1)
            })
            .collect::<Result<Vec<_>>>()?;
        for p in &items {
            sink(Generated::Pair(p))?;
            truth.pairs.push(p.truth.clone());
            truth.pair_products.push(p.leader.truth.clone());
            truth.pair_products.push(p.competitor.truth.clone());
        }
    }
    Ok(truth)
}

/// Ground-truth sidecar of a market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketTruth {
    pub seed: u64,
    pub products: Vec<LifecycleTruth>,
    pub pairs: Vec<PairTruth>,
    pub pair_products: Vec<LifecycleTruth>,
}

impl Market {
    /// All products, single ones first, then each pair's leader and
    /// competitor.
    pub fn all_products(&self) -> impl Iterator<Item = &SyntheticProduct> {
        self.products
            .iter()
            .chain(self.pairs.iter().flat_map(|p| [&p.leader, &p.competitor]))
    }

    pub fn truth(&self) -> MarketTruth {
        MarketTruth {
            seed: self.scenario.seed,
            products: self.products.iter().map(|p| p.truth.clone()).collect(),
            pairs: self.pairs.iter().map(|p| p.truth.clone()).collect(),
            pair_products: self
                .pairs
                .iter()
                .flat_map(|p| [p.leader.truth.clone(), p.competitor.truth.clone()])
                .collect(),
        }
    }

    /// Reviews of every product as JSON lines, ordered by product id then
    /// date.
    pub fn write_reviews<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let mut products: Vec<&SyntheticProduct> = self.all_products().collect();
        products.sort_by(|a, b| a.truth.product_id.cmp(&b.truth.product_id));
        for p in products {
            for r in &p.records {
                writeln!(out, "{}", r.to_json_line()).map_err(|e| Error::Parse(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn prices(&self) -> Result<PriceTable> {
        let mut t = PriceTable::new();
        for p in self.all_products() {
            t.insert(p.truth.product_id.clone(), p.truth.price)?;
        }
        Ok(t)
    }

    /// Pair manifest without labels.
    pub fn pair_entries(&self) -> Vec<PairEntry> {
        self.pairs
            .iter()
            .map(|p| PairEntry {
                leader_id: p.truth.leader_id.clone(),
                competitor_id: p.truth.competitor_id.clone(),
                label: None,
            })
            .collect()
    }

    pub fn write_truth<W: std::io::Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.truth()).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Named scenarios.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 5] = ["market", "death", "survival", "undecided", "spam"];

    fn product(id: &str, launch: usize, sd0: f64, knots: &[[f64; 2]]) -> ProductSpec {
        ProductSpec {
            product_id: id.to_string(),
            launch_week: launch,
            initial_density: sd0,
            appeal_knots: knots.to_vec(),
            spam: None,
            nonavp_share: Some(0.1),
            price: Some(25.0),
        }
    }

    fn single_pair(seed: u64, spec: PairSpec) -> MarketScenario {
        MarketScenario {
            seed,
            n_products: 0,
            n_pairs: 0,
            noise: AppealNoise { phi: 0.8, sigma: 0.3 },
            pairs: vec![spec],
            ..MarketScenario::default()
        }
    }

    /// Leader fading after a strong competitor enters.
    pub fn death(seed: u64) -> MarketScenario {
        single_pair(
            seed,
            PairSpec {
                leader: product("LEAD", 0, 5e-4, &[[0.0, 2.0], [30.0, 1.0], [60.0, -3.0], [103.0, -3.0]]),
                competitor: product("COMP", 25, 5e-4, &[[25.0, 4.0], [70.0, 2.0], [103.0, -3.0]]),
                coupling: Coupling::Fixed { a_ij: 1.0, a_ji: 0.0 },
            },
        )
    }

    /// Leader dipping under a short-lived competitor, then rebounding.
    pub fn survival(seed: u64) -> MarketScenario {
        single_pair(
            seed,
            PairSpec {
                leader: product(
                    "LEAD",
                    0,
                    5e-4,
                    &[[0.0, 2.5], [24.0, 1.0], [30.0, -3.0], [40.0, -3.0], [45.0, 4.0], [62.0, 4.0], [80.0, -3.0]],
                ),
                competitor: product("COMP", 20, 2e-3, &[[20.0, 4.0], [34.0, 3.0], [42.0, -4.0], [103.0, -4.0]]),
                coupling: Coupling::Fixed { a_ij: 0.5, a_ji: 0.5 },
            },
        )
    }

    /// Competitor never catching up.
    pub fn undecided(seed: u64) -> MarketScenario {
        single_pair(
            seed,
            PairSpec {
                leader: product("LEAD", 0, 5e-4, &[[0.0, 2.0], [103.0, -2.0]]),
                competitor: product("COMP", 30, 1e-4, &[[30.0, -1.0], [103.0, -4.0]]),
                coupling: Coupling::Learned { delta: 0.05 },
            },
        )
    }

    /// One product per spam pattern plus a clean one.
    pub fn spam(seed: u64) -> MarketScenario {
        let mut products: Vec<ProductSpec> = SpamType::ALL
            .iter()
            .map(|&s| {
                let mut p = product(&format!("SPAM_{}", s.name().to_uppercase()), 0, 5e-4, &[[0.0, 2.0], [103.0, -2.0]]);
                p.spam = Some(s);
                p.nonavp_share = Some(0.3);
                p
            })
            .collect();
        products.push(product("CLEAN", 0, 5e-4, &[[0.0, 2.0], [103.0, -2.0]]));
        MarketScenario {
            seed,
            n_products: 0,
            n_pairs: 0,
            products,
            ..MarketScenario::default()
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Result<MarketScenario> {
        match name {
            "market" => Ok(MarketScenario {
                seed,
                ..MarketScenario::default()
            }),
            "death" => Ok(death(seed)),
            "survival" => Ok(survival(seed)),
            "undecided" => Ok(undecided(seed)),
            "spam" => Ok(spam(seed)),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                NAMES.join(", ")
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn flat(id: &str, launch: usize, sd0: f64) -> ProductSpec {
        ProductSpec {
            product_id: id.into(),
            launch_week: launch,
            initial_density: sd0,
            appeal_knots: vec![[0.0, 1.0]],
            spam: None,
            nonavp_share: Some(0.2),
            price: Some(10.0),
        }
    }

    fn small(seed: u64) -> MarketScenario {
        MarketScenario {
            seed,
            horizon_weeks: 40,
            n_products: 3,
            n_pairs: 2,
            reviews_per_product: 2_000,
            random: RandomSpec {
                entry_week: [8, 12],
                ..RandomSpec::default()
            },
            ..MarketScenario::default()
        }
    }

    #[test]
    fn zero_growth_is_flat() {
        let sc = MarketScenario {
            growth: GrowthSpec::Constant { rate: 0.0 },
            reviews_per_product: 10_000,
            ..small(3)
        };
        let p = gen_lifecycle(&sc, &flat("A", 0, 0.2), 0).unwrap();
        assert!(p.truth.density.iter().all(|&v| v == 0.2));
        let counts = &p.lifecycle.sales_count.values;
        let expected = 10_000.0 / counts.len() as f64;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p_value = 1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(chi2);
        assert!(p_value > 0.01, "p = {p_value}");
    }

    #[test]
    fn logistic_growth_approaches_capacity_from_below() {
        let sc = MarketScenario {
            growth: GrowthSpec::Constant { rate: 0.3 },
            ..small(4)
        };
        let p = gen_lifecycle(&sc, &flat("A", 0, 0.01), 0).unwrap();
        let d = &p.truth.density;
        assert!(d.windows(2).all(|w| w[1] >= w[0]));
        assert!(d.iter().all(|&v| v < sc.capacity));
        assert!(d[d.len() - 1] > 0.99);
    }

    #[test]
    fn weekly_counts_follow_density() {
        let sc = MarketScenario {
            reviews_per_product: 10_000,
            ..small(5)
        };
        let spec = &sc.product_specs()[0];
        let p = gen_lifecycle(&sc, spec, 0).unwrap();
        let total: f64 = p.truth.density.iter().sum();
        let expected: Vec<f64> = p.truth.density.iter().map(|v| 10_000.0 * v / total).collect();
        // pool sparse weeks into one cell
        let (mut chi2, mut cells, mut pool_o, mut pool_e) = (0.0, 0usize, 0.0, 0.0);
        for (o, e) in p.lifecycle.sales_count.values.iter().zip(&expected) {
            if *e >= 5.0 {
                chi2 += (o - e).powi(2) / e;
                cells += 1;
            } else {
                pool_o += o;
                pool_e += e;
            }
        }
        if pool_e > 0.0 {
            chi2 += (pool_o - pool_e).powi(2) / pool_e;
            cells += 1;
        }
        let p_value = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(chi2);
        assert!(p_value > 0.01, "p = {p_value}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let render = |seed| {
            let m = generate_market(&small(seed)).unwrap();
            let mut reviews = Vec::new();
            m.write_reviews(&mut reviews).unwrap();
            let mut truth = Vec::new();
            m.write_truth(&mut truth).unwrap();
            (reviews, truth)
        };
        let a = render(11);
        assert_eq!(a, render(11));
        assert_ne!(a.0, render(12).0);
    }

    #[test]
    fn uncoupled_pair_matches_two_lifecycles() {
        let sc = small(6);
        let spec = PairSpec {
            leader: ProductSpec {
                appeal_knots: vec![[0.0, 2.0], [39.0, -2.0]],
                ..flat("L", 0, 1e-3)
            },
            competitor: ProductSpec {
                appeal_knots: vec![[10.0, 2.0], [39.0, -1.0]],
                ..flat("C", 10, 1e-3)
            },
            coupling: Coupling::Fixed { a_ij: 0.0, a_ji: 0.0 },
        };
        let pair = gen_pair(&sc, &spec, 7, 8).unwrap();
        let l = gen_lifecycle(&sc, &spec.leader, 7).unwrap();
        let c = gen_lifecycle(&sc, &spec.competitor, 8).unwrap();
        assert_eq!(pair.leader.truth.density, l.truth.density);
        assert_eq!(pair.competitor.truth.density, c.truth.density);
        assert_eq!(pair.leader.truth.growth, l.truth.growth);
    }

    #[test]
    fn presets_reach_their_outcomes() {
        for (name, want) in [
            ("death", Outcome::Death),
            ("survival", Outcome::Survival),
            ("undecided", Outcome::Undecided),
        ] {
            let m = generate_market(&presets::by_name(name, 2).unwrap()).unwrap();
            let p = &m.pairs[0];
            assert_eq!(p.truth.outcome(), want, "{name}");
            let observed = detect_events(&p.pair.leader_density, &p.pair.competitor_density, p.pair.entry_week, DEFAULT_THETA)
                .unwrap();
            assert_eq!(observed.outcome, want, "{name} observed");
        }
        let m = generate_market(&presets::survival(2)).unwrap();
        assert!(m.pairs[0].truth.events.recovery_time.is_some());
    }

    #[test]
    fn spam_profiles_have_their_timing() {
        let density: Vec<f64> = (0..60).map(|t| (-((t as f64 - 30.0) / 6.0).powi(2)).exp()).collect();
        let centre = |w: &[f64]| w.iter().enumerate().map(|(t, v)| t as f64 * v).sum::<f64>() / w.iter().sum::<f64>();
        assert!(centre(&SpamType::Lead.profile(&density)) < 25.0);
        assert!(centre(&SpamType::Follow.profile(&density)) > 35.0);
        assert!(centre(&SpamType::BufferedLagged.profile(&density)) > 35.0);
        assert!((centre(&SpamType::BufferedTight.profile(&density)) - 30.0).abs() < 1.0);
        assert!((centre(&SpamType::LeadLagged.profile(&density)) - 30.0).abs() < 1.0);
        for s in SpamType::ALL {
            assert_eq!(s.name().parse::<SpamType>().unwrap(), s);
        }
    }

    #[test]
    fn spam_preset_generates() {
        let m = generate_market(&presets::spam(1)).unwrap();
        assert_eq!(m.products.len(), 6);
        assert!(m.products.iter().all(|p| p.truth.nonavp_reviews > 0));
    }

    #[test]
    fn toml_round_trip() {
        let mut sc = presets::death(9);
        sc.products.push(flat("X", 3, 0.01));
        let text = sc.to_toml().unwrap();
        assert_eq!(MarketScenario::from_toml(&text).unwrap(), sc);
        let partial = MarketScenario::from_toml("seed = 4\nhorizon_weeks = 60\n").unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.n_products, MarketScenario::default().n_products);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        assert!(MarketScenario::from_toml("horizon_weeks = 10").is_err());
        assert!(MarketScenario::from_toml("unknown_key = 1").is_err());
        let mut sc = small(1);
        sc.products = vec![flat("A", 0, 0.01), flat("A", 0, 0.01)];
        assert!(sc.validate().is_err());
        sc.products = vec![ProductSpec {
            appeal_knots: vec![[5.0, 0.0], [2.0, 1.0]],
            ..flat("A", 0, 0.01)
        }];
        assert!(sc.validate().is_err());
        sc.products = vec![flat("A", 0, 1.5)];
        assert!(sc.validate().is_err());
        assert!(presets::by_name("boom", 1).is_err());
    }

    #[test]
    fn streaming_matches_batch() {
        let sc = small(8);
        let m = generate_market(&sc).unwrap();
        let mut ids = Vec::new();
        let truth = generate_with(&sc, |item| {
            match item {
                Generated::Product(p) => ids.push(p.truth.product_id.clone()),
                Generated::Pair(p) => ids.push(p.truth.leader_id.clone()),
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(truth, m.truth());
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn market_layout() {
        let m = generate_market(&small(2)).unwrap();
        assert_eq!(m.products.len(), 3);
        assert_eq!(m.pairs.len(), 2);
        assert_eq!(m.all_products().count(), 7);
        assert_eq!(m.prices().unwrap().len(), 7);
        for p in &m.pairs {
            assert!((8..=12).contains(&p.truth.entry_week));
            assert!(p.pair.entry_week >= p.truth.entry_week);
        }
    }

    proptest! {
        #[test]
        fn multinomial_conserves_total(total in 0u64..5000, w in prop::collection::vec(0.0f64..1.0, 1..30), seed in 0u64..50) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = multinomial(&mut rng, total, &w);
            prop_assert_eq!(c.iter().sum::<u64>(), total);
            for (k, wk) in c.iter().zip(&w) {
                if *wk == 0.0 {
                    prop_assert_eq!(*k, 0);
                }
            }
        }
    }
}
