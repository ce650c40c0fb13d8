//! Scoring models used by the estimators: the propensity model, the outcome
//! model (optionally weighted), the Gaussian Naive Bayes mock policy, and
//! ANOVA-F feature selection.

mod anova;
mod gnb;
mod logit;

pub use anova::{anova_f_statistics, anova_select};
pub use gnb::{fit_gnb, FittedGNB};
pub use logit::{fit_logit, fit_outcome, fit_propensity, FittedLogit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight applied to untreated (respondent) units when fitting the weighted
/// outcome model or the IPW estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFormula {
    /// pi / (1 - pi): the standard respondent weight when targeting the
    /// nonrespondent mean. The default.
    Odds,
    /// (1 - pi) / pi, as printed in some write-ups of the same estimator.
    PaperLiteral,
}

impl Default for WeightFormula {
    fn default() -> Self {
        WeightFormula::Odds
    }
}

impl std::str::FromStr for WeightFormula {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "odds" => Ok(WeightFormula::Odds),
            "paper" | "paper-literal" => Ok(WeightFormula::PaperLiteral),
            other => Err(Error::InvalidConfig(format!(
                "unknown weight formula `{other}` (expected `odds` or `paper`)"
            ))),
        }
    }
}

impl std::fmt::Display for WeightFormula {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightFormula::Odds => write!(f, "odds"),
            WeightFormula::PaperLiteral => write!(f, "paper-literal"),
        }
    }
}

/// Logistic-regression fit configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub l2_lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub prob_clamp_eps: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { l2_lambda: 1e-6, max_iter: 100, tol: 1e-8, prob_clamp_eps: 1e-6 }
    }
}

/// Per-unit weights for the nonrespondent-mean estimators, computed from
/// propensity scores of untreated units.
pub fn nonrespondent_weights(propensities: &[f64], formula: WeightFormula) -> Result<Vec<f64>> {
    propensities
        .iter()
        .map(|&p| {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "propensity {p} outside the open interval (0,1)"
                )));
            }
            Ok(match formula {
                WeightFormula::Odds => p / (1.0 - p),
                WeightFormula::PaperLiteral => (1.0 - p) / p,
            })
        })
        .collect()
}
