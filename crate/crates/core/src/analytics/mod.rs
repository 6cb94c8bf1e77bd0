//! Trust analytics, competition factors, review features and sparse
//! regression of competition events.

pub mod factors;
pub mod features;
pub mod regress;
pub mod trust;

pub use factors::{factor_report, factor_vector, fisher_exact, FactorConfig, FactorVector, PairReviews};
pub use features::{feature_row, review_features, FeatureMatrix, Standardizer, N_FEATURES, N_REVIEW_FEATURES};
pub use regress::{elastic_net_fit, kfold_regress, lasso_fit, CdOptions, CvReport, RegressionMethod};
pub use trust::{trust_profile, ProductTrust, TrustProfile};
