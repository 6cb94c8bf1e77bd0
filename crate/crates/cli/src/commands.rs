use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use lifecycle_core::analytics::factors::write_factor_csv;
use lifecycle_core::analytics::regress::write_regression_csv;
use lifecycle_core::analytics::trust::{write_bins_csv, write_scatter_csv};
use lifecycle_core::analytics::{
    factor_report, factor_vector, kfold_regress, trust_profile, FactorConfig, FeatureMatrix, PairReviews, ProductTrust,
    RegressionMethod,
};
use lifecycle_core::competition::{
    comp_backtest, detect_events, pair_arima, parse_pair_manifest, write_pair_manifest, CoefficientMode,
    CompetitionPair, Outcome, PairEntry, PairEvents,
};
use lifecycle_core::forecast::{evaluate_lifecycle, mean_mae, write_evaluation_csv, ArimaOrder, BacktestConfig, ForecastEvaluation};
use lifecycle_core::ingest::{load_lexicon, read_prices, read_reviews, write_prices, ParsedReviews, PriceTable, ReviewRecord};
use lifecycle_core::ksc::{pad_profiles, pattern_report, Family};
use lifecycle_core::series::{ccf, ProductLifecycle, WeekGrid, WeeklySeries};
use lifecycle_core::synth::{generate_with, presets, Generated, MarketScenario};
use lifecycle_core::Error as CoreError;

use crate::output::{file_digest, MissingInput, OutDir, Stamp};
use crate::{Command, Opts};

const DEFAULT_SEED: u64 = 1;

type Products = BTreeMap<String, Vec<ReviewRecord>>;

pub fn run(cmd: &Command, opts: &Opts) -> Result<()> {
    check_params(opts)?;
    match cmd {
        Command::Ingest => ingest(cmd, opts),
        Command::Series => series(cmd, opts),
        Command::Cluster { k_inner } => cluster(cmd, opts, *k_inner),
        Command::Trust => trust(cmd, opts),
        Command::Ccf { product, x, y, max_lag } => ccf_cmd(cmd, opts, product, x, y, *max_lag),
        Command::Forecast => forecast(cmd, opts),
        Command::Compete => compete(cmd, opts),
        Command::Factors { literal_sentiment } => factors(cmd, opts, *literal_sentiment),
        Command::Regress { folds } => regress(cmd, opts, *folds),
        Command::Synth { preset, scenario } => synth(cmd, opts, preset, scenario.as_deref()),
    }
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    CoreError::Config(msg.into()).into()
}

fn check_params(opts: &Opts) -> Result<()> {
    if opts.window < 2 {
        return Err(config_err(format!("--window must be >= 2, got {}", opts.window)));
    }
    if opts.lag < 1 || opts.exog_lag < 1 {
        return Err(config_err("--lag and --exog-lag must be >= 1"));
    }
    if !(opts.delta > 0.0 && opts.delta <= 1.0) {
        return Err(config_err(format!("--delta must be in (0, 1], got {}", opts.delta)));
    }
    if !(opts.theta > 0.0 && opts.theta <= 1.0) {
        return Err(config_err(format!("--theta must be in (0, 1], got {}", opts.theta)));
    }
    if opts.k < 1 {
        return Err(config_err("--k must be >= 1"));
    }
    if opts.min_median_sales.is_nan() || opts.min_median_sales < 0.0 {
        return Err(config_err("--min-median-sales must be >= 0"));
    }
    Ok(())
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, cmd: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| config_err(format!("{cmd} needs {flag}")))
}

/// Inputs must exist; their contents, not their paths, enter the config hash.
fn input_digests(opts: &Opts) -> Result<serde_json::Value> {
    let mut named: Vec<(&str, &Path)> = Vec::new();
    if let Some(p) = &opts.input {
        named.push(("input", p));
    }
    if let Some(p) = &opts.prices {
        named.push(("prices", p));
    }
    if let Some(p) = &opts.pairs {
        named.push(("pairs", p));
    }
    if let Some(v) = &opts.lexicon {
        named.push(("lexicon_pos", &v[0]));
        named.push(("lexicon_neg", &v[1]));
    }
    let mut out = serde_json::Map::new();
    for (name, path) in named {
        if !path.exists() {
            return Err(MissingInput(path.to_path_buf()).into());
        }
        out.insert(name.to_string(), json!(file_digest(path)?));
    }
    Ok(serde_json::Value::Object(out))
}

fn out_dir(cmd: &Command, opts: &Opts, seed: u64, extra: serde_json::Value) -> Result<OutDir> {
    let config = json!({
        "command": format!("{cmd:?}"),
        "inputs": input_digests(opts)?,
        "k": opts.k,
        "window": opts.window,
        "lag": opts.lag,
        "exog_lag": opts.exog_lag,
        "delta": opts.delta,
        "theta": opts.theta,
        "min_median_sales": opts.min_median_sales,
        "extra": extra,
    });
    Ok(OutDir::new(opts.out.clone(), opts.force, Stamp::new(seed, &config)))
}

fn seed(opts: &Opts) -> u64 {
    opts.seed.unwrap_or(DEFAULT_SEED)
}

fn load(opts: &Opts, cmd: &str) -> Result<ParsedReviews> {
    let path = required(&opts.input, "--input", cmd)?;
    let lexicon = match &opts.lexicon {
        Some(v) => Some(load_lexicon(&v[0], &v[1])?),
        None => None,
    };
    let parsed = read_reviews(path, lexicon.as_ref()).with_context(|| format!("reading {}", path.display()))?;
    for d in parsed.diagnostics.iter().take(20) {
        warn!("{}: {d:?}", path.display());
    }
    if parsed.rejected() > 20 {
        warn!("{} more rejected lines", parsed.rejected() - 20);
    }
    if parsed.accepted() == 0 {
        return Err(CoreError::InsufficientData(format!("no valid reviews in {}", path.display())).into());
    }
    info!("{} reviews of {} products", parsed.accepted(), parsed.products.len());
    Ok(parsed)
}

fn prices(opts: &Opts) -> Result<Option<PriceTable>> {
    opts.prices
        .as_deref()
        .map(|p| read_prices(p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

fn price_of(table: &Option<PriceTable>, id: &str) -> f64 {
    table.as_ref().and_then(|t| t.get(id)).unwrap_or(0.0)
}

fn pairs(opts: &Opts, cmd: &str) -> Result<Vec<PairEntry>> {
    let path = required(&opts.pairs, "--pairs", cmd)?;
    let file = std::fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let entries = parse_pair_manifest(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    if entries.is_empty() {
        return Err(CoreError::InsufficientData(format!("no pairs in {}", path.display())).into());
    }
    Ok(entries)
}

/// Lifecycles on each product's own calendar; products that cannot be built
/// are logged and dropped.
fn lifecycles(products: &Products, prices: &Option<PriceTable>) -> Vec<ProductLifecycle> {
    let items: Vec<(&String, &Vec<ReviewRecord>)> = products.iter().collect();
    items
        .par_iter()
        .filter_map(|(id, recs)| match ProductLifecycle::build(id, recs, price_of(prices, id), None) {
            Ok(lc) => Some(lc),
            Err(e) => {
                warn!("skipping {id}: {e}");
                None
            }
        })
        .collect()
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn ingest(cmd: &Command, opts: &Opts) -> Result<()> {
    let out = out_dir(cmd, opts, seed(opts), json!(null))?;
    out.guard(&["ingest_summary.csv", "ingest_diagnostics.csv"])?;
    let parsed = load(opts, "ingest")?;
    out.csv("ingest_summary.csv", |w| {
        writeln!(w, "product_id,reviews,avp,nonavp,first_review,last_review")?;
        for (id, recs) in &parsed.products {
            let avp = recs.iter().filter(|r| r.verified).count();
            let first = recs.iter().map(|r| r.date).min().expect("non-empty");
            let last = recs.iter().map(|r| r.date).max().expect("non-empty");
            writeln!(w, "{id},{},{avp},{},{first},{last}", recs.len(), recs.len() - avp)?;
        }
        Ok(())
    })?;
    out.csv("ingest_diagnostics.csv", |w| {
        writeln!(w, "diagnostic")?;
        for d in &parsed.diagnostics {
            writeln!(w, "\"{}\"", format!("{d:?}").replace('"', "\"\""))?;
        }
        Ok(())
    })?;
    println!(
        "{} lines, {} accepted, {} rejected, {} products",
        parsed.lines_read,
        parsed.accepted(),
        parsed.rejected(),
        parsed.products.len()
    );
    Ok(())
}

fn series(cmd: &Command, opts: &Opts) -> Result<()> {
    let out = out_dir(cmd, opts, seed(opts), json!(null))?;
    out.guard(&["series"])?;
    let parsed = load(opts, "series")?;
    let table = prices(opts)?;
    for lc in lifecycles(&parsed.products, &table) {
        let name = format!("series/{}.csv", file_safe(&lc.product_id));
        out.csv(&name, |w| write_lifecycle(w, &lc))?;
    }
    Ok(())
}

fn write_lifecycle<W: Write>(w: &mut W, lc: &ProductLifecycle) -> Result<()> {
    let cols: [(&str, &WeeklySeries); 10] = [
        ("sales", &lc.sales_count),
        ("nonavp", &lc.nonavp_count),
        ("helpfulness_avp", &lc.helpfulness_avp),
        ("sentiment_avp", &lc.sentiment_avp),
        ("helpfulness_nonavp", &lc.helpfulness_nonavp),
        ("sentiment_nonavp", &lc.sentiment_nonavp),
        ("rating_avp", &lc.rating_avp),
        ("cum_avp_like_rating", &lc.cum_avp_like_rating),
        ("cum_nonavp_rating", &lc.cum_nonavp_rating),
        ("revenue", &lc.revenue),
    ];
    let names: Vec<&str> = cols.iter().map(|(n, _)| *n).collect();
    writeln!(w, "week,{},sales_density", names.join(","))?;
    for t in 0..lc.len() {
        let mut line = t.to_string();
        for (_, s) in &cols {
            line.push(',');
            if s.is_valid(t) {
                line.push_str(&format!("{:.6}", s.values[t]));
            }
        }
        line.push_str(&format!(",{:.8}", lc.sales_density.values[t]));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn named_series(lc: &ProductLifecycle, name: &str) -> Result<WeeklySeries> {
    let s = match name {
        "sales" => &lc.sales_count,
        "nonavp" => &lc.nonavp_count,
        "helpfulness_avp" => &lc.helpfulness_avp,
        "sentiment_avp" => &lc.sentiment_avp,
        "helpfulness_nonavp" => &lc.helpfulness_nonavp,
        "sentiment_nonavp" => &lc.sentiment_nonavp,
        "rating_avp" => &lc.rating_avp,
        "cum_avp_like_rating" => &lc.cum_avp_like_rating,
        "cum_nonavp_rating" => &lc.cum_nonavp_rating,
        "revenue" => &lc.revenue,
        "density" => {
            return Ok(WeeklySeries::new(lc.sales_count.epoch_week, lc.sales_density.values.clone())?);
        }
        other => return Err(config_err(format!("unknown series {other:?}"))),
    };
    Ok(s.clone())
}

fn ccf_cmd(cmd: &Command, opts: &Opts, product: &str, x: &str, y: &str, max_lag: usize) -> Result<()> {
    let out = out_dir(cmd, opts, seed(opts), json!(null))?;
    out.guard(&["ccf.csv"])?;
    let parsed = load(opts, "ccf")?;
    let table = prices(opts)?;
    let recs = parsed
        .products
        .get(product)
        .ok_or_else(|| CoreError::InsufficientData(format!("product {product} not in input")))?;
    let lc = ProductLifecycle::build(product, recs, price_of(&table, product), None)?;
    let r = ccf(&named_series(&lc, x)?, &named_series(&lc, y)?, max_lag)?;
    out.csv("ccf.csv", |w| {
        writeln!(w, "lag,ccf")?;
        for (i, v) in r.iter().enumerate() {
            writeln!(w, "{},{}", i as i64 - max_lag as i64, fmt_opt(v.is_finite().then_some(*v)))?;
        }
        Ok(())
    })
}

/// Raw weekly values with invalid weeks zeroed.
fn masked_values(s: &WeeklySeries) -> Vec<f64> {
    (0..s.len()).map(|t| if s.is_valid(t) { s.values[t] } else { 0.0 }).collect()
}

fn cluster(cmd: &Command, opts: &Opts, k_inner: usize) -> Result<()> {
    let s = seed(opts);
    let out = out_dir(cmd, opts, s, json!({ "k_inner": k_inner }))?;
    out.guard(&["cluster_report.json", "cluster_assignments.csv"])?;
    let parsed = load(opts, "cluster")?;
    let table = prices(opts)?;
    let lcs = lifecycles(&parsed.products, &table);
    if lcs.len() < opts.k {
        return Err(CoreError::InsufficientData(format!("{} products for k = {}", lcs.len(), opts.k)).into());
    }
    let primary = pad_profiles(&lcs.iter().map(|lc| lc.sales_density.values.clone()).collect::<Vec<_>>());
    let len = primary[0].len();
    let pad = |v: Vec<f64>| {
        let mut v = v;
        v.resize(len, 0.0);
        v
    };
    let mut families = vec![Family {
        name: "nonavp_density".into(),
        series: lcs
            .iter()
            .map(|lc| {
                let n: f64 = lc.nonavp_count.values.iter().sum();
                (n > 0.0)
                    .then(|| lifecycle_core::kde::estimate(&lc.nonavp_count.values, n).ok())
                    .flatten()
                    .map(|d| pad(d.values))
            })
            .collect(),
    }];
    let names = [
        "helpfulness_avp",
        "sentiment_avp",
        "cum_avp_like_rating",
        "helpfulness_nonavp",
        "sentiment_nonavp",
        "cum_nonavp_rating",
    ];
    for (f, name) in names.iter().enumerate() {
        families.push(Family {
            name: name.to_string(),
            series: lcs
                .iter()
                .map(|lc| {
                    let s = lc.allied()[f];
                    (0..s.len()).any(|t| s.is_valid(t)).then(|| pad(masked_values(s)))
                })
                .collect(),
        });
    }
    let report = pattern_report(&primary, &families, opts.k, k_inner, s)?;
    out.json("cluster_report.json", &report)?;
    out.csv("cluster_assignments.csv", |w| {
        writeln!(w, "product_id,group")?;
        for (lc, g) in lcs.iter().zip(&report.assignments) {
            writeln!(w, "{},{g}", lc.product_id)?;
        }
        Ok(())
    })
}

fn trust(cmd: &Command, opts: &Opts) -> Result<()> {
    let out = out_dir(cmd, opts, seed(opts), json!(null))?;
    out.guard(&["trust_bins.csv", "trust_scatter.csv", "trust_fit.json"])?;
    let parsed = load(opts, "trust")?;
    let table = prices(opts)?;
    if table.is_none() {
        warn!("no --prices; revenue is zero for every product");
    }
    let products = parsed
        .products
        .iter()
        .map(|(id, recs)| ProductTrust::from_records(id, recs, price_of(&table, id)))
        .collect::<lifecycle_core::Result<Vec<_>>>()?;
    let profile = trust_profile(&products)?;
    out.csv("trust_bins.csv", |w| Ok(write_bins_csv(w, &profile)?))?;
    out.csv("trust_scatter.csv", |w| Ok(write_scatter_csv(w, &profile)?))?;
    out.json("trust_fit.json", &json!({ "cubic_fit": profile.cubic_fit, "products": products.len() }))
}

fn backtest_config(opts: &Opts) -> BacktestConfig {
    BacktestConfig {
        window: opts.window,
        lag: opts.lag,
        exog_lag: opts.exog_lag,
        capacity: 1.0,
    }
}

#[derive(Serialize)]
struct SummaryRow {
    model: String,
    units: usize,
    mean_mae: f64,
}

fn summarize(rows: &[(String, ForecastEvaluation)]) -> Vec<SummaryRow> {
    let mut by_model: BTreeMap<&str, Vec<&ForecastEvaluation>> = BTreeMap::new();
    for (_, e) in rows {
        by_model.entry(e.model.as_str()).or_default().push(e);
    }
    by_model
        .into_iter()
        .map(|(m, evals)| SummaryRow {
            model: m.to_string(),
            units: evals.len(),
            mean_mae: mean_mae(&evals),
        })
        .collect()
}

fn write_summary<W: Write>(w: &mut W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(w, "model,units,mean_mae")?;
    for r in rows {
        writeln!(w, "{},{},{:.8}", r.model, r.units, r.mean_mae)?;
    }
    Ok(())
}

fn forecast(cmd: &Command, opts: &Opts) -> Result<()> {
    let out = out_dir(cmd, opts, seed(opts), json!(null))?;
    out.guard(&["forecast.csv", "forecast_summary.csv"])?;
    let parsed = load(opts, "forecast")?;
    let table = prices(opts)?;
    let cfg = backtest_config(opts);
    let lcs: Vec<ProductLifecycle> = lifecycles(&parsed.products, &table)
        .into_iter()
        .filter(|lc| {
            let keep = lc.median_weekly_sales() >= opts.min_median_sales;
            if !keep {
                info!("{}: median weekly sales below {}", lc.product_id, opts.min_median_sales);
            }
            keep
        })
        .collect();
    if lcs.is_empty() {
        return Err(CoreError::InsufficientData("no product passes the median sales filter".into()).into());
    }
    let results: Vec<Option<Vec<ForecastEvaluation>>> = lcs
        .par_iter()
        .map(|lc| match evaluate_lifecycle(lc, &cfg, ArimaOrder::default()) {
            Ok(v) => Some(v),
            Err(e) => {
                warn!("skipping {}: {e}", lc.product_id);
                None
            }
        })
        .collect();
    let rows: Vec<(String, ForecastEvaluation)> = lcs
        .iter()
        .zip(results)
        .filter_map(|(lc, r)| r.map(|v| (lc, v)))
        .flat_map(|(lc, v)| v.into_iter().map(|e| (lc.product_id.clone(), e)))
        .collect();
    if rows.is_empty() {
        return Err(CoreError::InsufficientData(format!("no product is longer than the window {}", cfg.window)).into());
    }
    out.csv("forecast.csv", |w| Ok(write_evaluation_csv(w, &rows)?))?;
    let summary = summarize(&rows);
    out.csv("forecast_summary.csv", |w| write_summary(w, &summary))?;
    for r in &summary {
        println!("{:<12} {:>5} {:.6}", r.model, r.units, r.mean_mae);
    }
    Ok(())
}

struct PairContext {
    entry: PairEntry,
    pair: CompetitionPair,
    events: PairEvents,
}

/// Build each pair on the calendar spanning both products' reviews.
fn pair_contexts(products: &Products, table: &Option<PriceTable>, entries: &[PairEntry], theta: f64) -> Result<Vec<PairContext>> {
    entries
        .par_iter()
        .map(|e| {
            let get = |id: &str| {
                products
                    .get(id)
                    .ok_or_else(|| CoreError::InsufficientData(format!("pair product {id} not in input")))
            };
            let (lr, cr) = (get(&e.leader_id)?, get(&e.competitor_id)?);
            let union: Vec<ReviewRecord> = lr.iter().chain(cr.iter()).cloned().collect();
            let grid: WeekGrid = WeekGrid::covering(&union).expect("non-empty");
            let leader = ProductLifecycle::build(&e.leader_id, lr, price_of(table, &e.leader_id), Some(grid))?;
            let comp = ProductLifecycle::build(&e.competitor_id, cr, price_of(table, &e.competitor_id), Some(grid))?;
            let pair = CompetitionPair::from_lifecycles(&leader, &comp)?;
            let report = detect_events(&pair.leader_density, &pair.competitor_density, pair.entry_week, theta)?;
            let events = PairEvents {
                leader_id: e.leader_id.clone(),
                competitor_id: e.competitor_id.clone(),
                entry_week: pair.entry_week,
                events: report,
                label: e.label,
            };
            Ok(PairContext {
                entry: e.clone(),
                pair,
                events,
            })
        })
        .collect::<lifecycle_core::Result<Vec<_>>>()
        .map_err(Into::into)
}

fn compete(cmd: &Command, opts: &Opts) -> Result<()> {
    let out = out_dir(cmd, opts, seed(opts), json!(null))?;
    out.guard(&["compete.csv", "compete_summary.csv", "events.json"])?;
    let parsed = load(opts, "compete")?;
    let table = prices(opts)?;
    let entries = pairs(opts, "compete")?;
    let ctxs = pair_contexts(&parsed.products, &table, &entries, opts.theta)?;
    let cfg = backtest_config(opts);
    let mode = CoefficientMode::Learned { delta: opts.delta };
    let evals: Vec<Vec<(String, String, ForecastEvaluation)>> = ctxs
        .par_iter()
        .map(|c| {
            let mut rows = Vec::new();
            let label = format!("{}|{}", c.entry.leader_id, c.entry.competitor_id);
            for (name, r) in [
                ("LVC-COMP", comp_backtest(&c.pair, &cfg, mode)),
                ("ARIMA", pair_arima(&c.pair, &cfg, ArimaOrder::default())),
            ] {
                match r {
                    Ok(e) => {
                        rows.push((label.clone(), c.entry.leader_id.clone(), e.leader));
                        rows.push((label.clone(), c.entry.competitor_id.clone(), e.competitor));
                    }
                    Err(e) => warn!("{label} {name}: {e}"),
                }
            }
            rows
        })
        .collect();
    let rows: Vec<(String, String, ForecastEvaluation)> = evals.into_iter().flatten().collect();
    out.csv("compete.csv", |w| {
        writeln!(w, "leader_id,competitor_id,product_id,model,units,mae")?;
        for (pair, product, e) in &rows {
            let (l, c) = pair.split_once('|').expect("pair label");
            writeln!(w, "{l},{c},{product},{},{},{:.8}", e.model, e.n_units(), e.mae)?;
        }
        Ok(())
    })?;
    let flat: Vec<(String, ForecastEvaluation)> = rows.into_iter().map(|(_, p, e)| (p, e)).collect();
    let summary = summarize(&flat);
    out.csv("compete_summary.csv", |w| write_summary(w, &summary))?;
    let events: Vec<PairEvents> = ctxs.into_iter().map(|c| c.events).collect();
    out.json("events.json", &events)?;
    for r in &summary {
        println!("{:<12} {:>5} {:.6}", r.model, r.units, r.mean_mae);
    }
    for (o, n) in lifecycle_core::competition::outcome_counts(&events) {
        println!("{o:?}: {n}");
    }
    Ok(())
}

fn pair_reviews<'a>(products: &'a Products, table: &Option<PriceTable>, e: &PairEntry) -> PairReviews<'a> {
    PairReviews {
        leader: &products[&e.leader_id],
        competitor: &products[&e.competitor_id],
        leader_price: table.as_ref().and_then(|t| t.get(&e.leader_id)),
        competitor_price: table.as_ref().and_then(|t| t.get(&e.competitor_id)),
    }
}

fn factors(cmd: &Command, opts: &Opts, literal: bool) -> Result<()> {
    let out = out_dir(cmd, opts, seed(opts), json!({ "literal_sentiment": literal }))?;
    out.guard(&["factors.csv", "factor_vectors.csv"])?;
    let parsed = load(opts, "factors")?;
    let table = prices(opts)?;
    let entries = pairs(opts, "factors")?;
    let ctxs = pair_contexts(&parsed.products, &table, &entries, opts.theta)?;
    let mut cfg = FactorConfig::default();
    if literal {
        cfg = cfg.literal_sentiment();
    }
    let vectors = ctxs
        .iter()
        .map(|c| factor_vector(&pair_reviews(&parsed.products, &table, &c.entry), &cfg))
        .collect::<lifecycle_core::Result<Vec<_>>>()?;
    let outcomes: Vec<Outcome> = ctxs.iter().map(|c| c.events.outcome()).collect();
    let report = factor_report(&vectors, &outcomes)?;
    out.csv("factors.csv", |w| Ok(write_factor_csv(w, &report)?))?;
    out.csv("factor_vectors.csv", |w| {
        let cols: Vec<String> = (1..=9).map(|i| format!("f{i}")).collect();
        writeln!(w, "leader_id,competitor_id,outcome,{}", cols.join(","))?;
        for ((c, v), o) in ctxs.iter().zip(&vectors).zip(&outcomes) {
            let bits: Vec<&str> = v.factors.iter().map(|b| if *b { "1" } else { "0" }).collect();
            let o = serde_json::to_value(o)?;
            writeln!(
                w,
                "{},{},{},{}",
                c.entry.leader_id,
                c.entry.competitor_id,
                o.as_str().unwrap_or_default(),
                bits.join(",")
            )?;
        }
        Ok(())
    })
}

type Response = fn(&PairEvents) -> Option<f64>;

fn regress(cmd: &Command, opts: &Opts, folds: usize) -> Result<()> {
    let s = seed(opts);
    let out = out_dir(cmd, opts, s, json!({ "folds": folds }))?;
    out.guard(&["regress.csv"])?;
    if folds < 2 {
        return Err(config_err("--folds must be >= 2"));
    }
    let parsed = load(opts, "regress")?;
    let table = prices(opts)?;
    let entries = pairs(opts, "regress")?;
    let ctxs = pair_contexts(&parsed.products, &table, &entries, opts.theta)?;
    let inputs: Vec<((String, String), PairReviews)> = ctxs
        .iter()
        .map(|c| {
            (
                (c.entry.leader_id.clone(), c.entry.competitor_id.clone()),
                pair_reviews(&parsed.products, &table, &c.entry),
            )
        })
        .collect();
    let matrix = FeatureMatrix::build(&inputs, &FactorConfig::default())?;
    let responses: [(&str, Response); 3] = [
        ("takeover_time", |e| e.events.takeover_time.map(|t| t as f64)),
        (
            "recovery_time",
            |e| {
                (e.outcome() == Outcome::Survival)
                    .then_some(e.events.recovery_time)
                    .flatten()
                    .map(|t| t as f64)
            },
        ),
        (
            "volume_pct",
            |e| e.events.breakeven_week.and(e.events.takeover_volume_pct),
        ),
    ];
    let mut rows = Vec::new();
    for (name, f) in &responses {
        let (x, y): (Vec<Vec<f64>>, Vec<f64>) = ctxs
            .iter()
            .zip(&matrix.rows)
            .filter_map(|(c, r)| f(&c.events).map(|v| (r.clone(), v)))
            .unzip();
        if y.len() < folds.max(4) {
            warn!("{name}: {} pairs, too few for {folds}-fold CV", y.len());
            continue;
        }
        for method in [RegressionMethod::Lasso, RegressionMethod::ElasticNet] {
            let report = kfold_regress(&x, &y, method, folds, s)?;
            println!("{name:<14} {:<12} {:.6}", method.name(), report.mae);
            rows.push((name.to_string(), report));
        }
    }
    if rows.is_empty() {
        return Err(CoreError::InsufficientData("no response has enough pairs".into()).into());
    }
    out.csv("regress.csv", |w| Ok(write_regression_csv(w, &rows)?))
}

fn synth(cmd: &Command, opts: &Opts, preset: &str, scenario: Option<&Path>) -> Result<()> {
    let mut sc = match scenario {
        Some(p) => {
            if !p.exists() {
                return Err(MissingInput(p.to_path_buf()).into());
            }
            MarketScenario::load(p)?
        }
        None => presets::by_name(preset, seed(opts))?,
    };
    if let Some(s) = opts.seed {
        sc.seed = s;
    }
    sc.validate()?;
    let toml = sc.to_toml()?;
    let out = out_dir(cmd, opts, sc.seed, json!({ "scenario": toml }))?;
    let names = ["reviews.jsonl", "prices.csv", "pairs.csv", "truth.json", "scenario.toml"];
    out.guard(&names)?;
    let mut reviews = out.create("reviews.jsonl")?;
    let mut table = PriceTable::new();
    let mut write = |recs: &[ReviewRecord]| -> lifecycle_core::Result<()> {
        for r in recs {
            writeln!(reviews, "{}", r.to_json_line()).map_err(|e| CoreError::Io {
                path: out.path("reviews.jsonl"),
                source: e,
            })?;
        }
        Ok(())
    };
    let truth = generate_with(&sc, |g| {
        match g {
            Generated::Product(p) => write(&p.records)?,
            Generated::Pair(p) => {
                write(&p.leader.records)?;
                write(&p.competitor.records)?;
            }
        }
        Ok(())
    })?;
    reviews.flush()?;
    drop(reviews);
    for t in truth.products.iter().chain(&truth.pair_products) {
        table.insert(t.product_id.clone(), t.price)?;
    }
    out.csv("prices.csv", |w| Ok(write_prices(&table, w)?))?;
    let entries: Vec<PairEntry> = truth
        .pairs
        .iter()
        .map(|p| PairEntry {
            leader_id: p.leader_id.clone(),
            competitor_id: p.competitor_id.clone(),
            label: None,
        })
        .collect();
    out.csv("pairs.csv", |w| Ok(write_pair_manifest(w, &entries)?))?;
    out.json("truth.json", &truth)?;
    let mut w = out.create("scenario.toml")?;
    writeln!(w, "{}", out.stamp.line())?;
    w.write_all(toml.as_bytes())?;
    w.flush()?;
    println!(
        "{} products, {} pairs, seed {}",
        truth.products.len(),
        truth.pairs.len(),
        sc.seed
    );
    Ok(())
}
