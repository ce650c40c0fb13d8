//! The six point estimators of the treated-group mean outcome.
//!
//! Matching estimators (PSM / OSM) match on a scalar score; IPW reweights the
//! untreated outcomes; MPO / WMPO average outcome-model predictions over the
//! treated group.

use serde::{Deserialize, Serialize};

use crate::dataset::ObservationalDataset;
use crate::error::{Error, Result};
use crate::models::{
    fit_outcome, fit_propensity, nonrespondent_weights, FitConfig, FittedLogit, WeightFormula,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorId {
    Psm1Nn,
    Osm1Nn,
    OsmKnn(usize),
    IpwNr,
    Mpo,
    Wmpo,
}

impl Serialize for EstimatorId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EstimatorId {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorId::Psm1Nn => write!(f, "psm_1nn"),
            EstimatorId::Osm1Nn => write!(f, "osm_1nn"),
            EstimatorId::OsmKnn(k) => write!(f, "osm_{k}nn"),
            EstimatorId::IpwNr => write!(f, "ipw_nr"),
            EstimatorId::Mpo => write!(f, "mpo"),
            EstimatorId::Wmpo => write!(f, "wmpo"),
        }
    }
}

impl std::str::FromStr for EstimatorId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psm_1nn" => Ok(EstimatorId::Psm1Nn),
            "osm_1nn" => Ok(EstimatorId::Osm1Nn),
            "ipw_nr" => Ok(EstimatorId::IpwNr),
            "mpo" => Ok(EstimatorId::Mpo),
            "wmpo" => Ok(EstimatorId::Wmpo),
            other => {
                if let Some(k) = other
                    .strip_prefix("osm_")
                    .and_then(|t| t.strip_suffix("nn"))
                    .and_then(|k| k.parse::<usize>().ok())
                {
                    if k >= 1 {
                        return Ok(EstimatorId::OsmKnn(k));
                    }
                }
                Err(Error::InvalidConfig(format!("unknown estimator `{other}`")))
            }
        }
    }
}

/// How matched controls enter the average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Each matched control counted once, regardless of how many treated
    /// units selected it. The default.
    Set,
    /// Per-treated-unit multiset average (each treated unit contributes the
    /// mean outcome of its own k matches).
    Multiset,
}

impl Default for MatchMode {
    fn default() -> Self {
        MatchMode::Set
    }
}

impl std::str::FromStr for MatchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "set" => Ok(MatchMode::Set),
            "multiset" => Ok(MatchMode::Multiset),
            other => Err(Error::InvalidConfig(format!("unknown match mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator: EstimatorId,
    pub point: f64,
    pub se: Option<f64>,
    pub ci95: Option<(f64, f64)>,
}

impl EstimateResult {
    pub fn point_only(estimator: EstimatorId, point: f64) -> Self {
        Self { estimator, point, se: None, ci95: None }
    }
}

/// Shared configuration for a full estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub fit: FitConfig,
    pub weight_formula: WeightFormula,
    pub match_mode: MatchMode,
    /// k values for the OSM variants; k = 1 reports as `osm_1nn`.
    pub osm_k_list: Vec<usize>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            weight_formula: WeightFormula::Odds,
            match_mode: MatchMode::Set,
            osm_k_list: vec![1, 10],
        }
    }
}

/// For every treated unit, the positions (into `untreated_scores`) of its k
/// nearest untreated neighbors by |score difference|, with replacement.
/// Distance ties break toward the lower untreated index.
pub fn knn_matches(
    treated_scores: &[f64],
    untreated_scores: &[f64],
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    if treated_scores.is_empty() || untreated_scores.is_empty() {
        return Err(Error::InvalidDataset("empty score vector".into()));
    }
    if k == 0 || k > untreated_scores.len() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} out of range for {} untreated units",
            untreated_scores.len()
        )));
    }
    if treated_scores.iter().chain(untreated_scores).any(|v| !v.is_finite()) {
        return Err(Error::InvalidDataset("non-finite score".into()));
    }

    // untreated positions sorted by (score, index)
    let mut order: Vec<usize> = (0..untreated_scores.len()).collect();
    order.sort_by(|&a, &b| {
        untreated_scores[a]
            .partial_cmp(&untreated_scores[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let sorted_scores: Vec<f64> = order.iter().map(|&i| untreated_scores[i]).collect();
    let m = order.len();

    let mut all = Vec::with_capacity(treated_scores.len());
    for &t in treated_scores {
        let start = sorted_scores.partition_point(|&s| s < t);
        // greedy two-pointer expansion over the sorted scores
        let mut left = start as isize - 1;
        let mut right = start;
        let mut candidates: Vec<usize> = Vec::with_capacity(k + 4);
        while candidates.len() < k {
            let dl = if left >= 0 { (sorted_scores[left as usize] - t).abs() } else { f64::INFINITY };
            let dr = if right < m { (sorted_scores[right] - t).abs() } else { f64::INFINITY };
            if dl <= dr {
                candidates.push(left as usize);
                left -= 1;
            } else {
                candidates.push(right);
                right += 1;
            }
        }
        // pull in every remaining candidate tied with the k-th distance so the
        // (distance, index) tie-break can act on the full tie group
        let kth = candidates
            .iter()
            .map(|&p| (sorted_scores[p] - t).abs())
            .fold(0.0f64, f64::max);
        while left >= 0 && (sorted_scores[left as usize] - t).abs() == kth {
            candidates.push(left as usize);
            left -= 1;
        }
        while right < m && (sorted_scores[right] - t).abs() == kth {
            candidates.push(right);
            right += 1;
        }
        let mut with_keys: Vec<(f64, usize)> = candidates
            .into_iter()
            .map(|p| ((sorted_scores[p] - t).abs(), order[p]))
            .collect();
        with_keys.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        with_keys.truncate(k);
        all.push(with_keys.into_iter().map(|(_, i)| i).collect());
    }
    Ok(all)
}

/// Union over treated units of their k nearest untreated neighbors,
/// deduplicated and sorted.
pub fn match_set_knn(
    treated_scores: &[f64],
    untreated_scores: &[f64],
    k: usize,
) -> Result<Vec<usize>> {
    let matches = knn_matches(treated_scores, untreated_scores, k)?;
    let mut set: Vec<usize> = matches.into_iter().flatten().collect();
    set.sort_unstable();
    set.dedup();
    Ok(set)
}

fn split_scores(dataset: &ObservationalDataset, scores: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<u8>) {
    let mut treated = Vec::new();
    let mut untreated = Vec::new();
    let mut untreated_y = Vec::new();
    for (i, &w) in dataset.treatment().iter().enumerate() {
        if w == 1 {
            treated.push(scores[i]);
        } else {
            untreated.push(scores[i]);
            untreated_y.push(dataset.outcome()[i].unwrap());
        }
    }
    (treated, untreated, untreated_y)
}

fn matching_estimate(
    dataset: &ObservationalDataset,
    scores: &[f64],
    k: usize,
    mode: MatchMode,
    id: EstimatorId,
) -> Result<EstimateResult> {
    let (treated, untreated, untreated_y) = split_scores(dataset, scores);
    if treated.is_empty() {
        return Err(Error::InvalidDataset("no treated units".into()));
    }
    let point = match mode {
        MatchMode::Set => {
            let set = match_set_knn(&treated, &untreated, k)?;
            let sum: f64 = set.iter().map(|&i| untreated_y[i] as f64).sum();
            sum / set.len() as f64
        }
        MatchMode::Multiset => {
            let matches = knn_matches(&treated, &untreated, k)?;
            let total: f64 = matches
                .iter()
                .map(|m| m.iter().map(|&i| untreated_y[i] as f64).sum::<f64>() / m.len() as f64)
                .sum();
            total / matches.len() as f64
        }
    };
    Ok(EstimateResult::point_only(id, point))
}

/// Propensity score matching (Eq. form: mean outcome over the matched set).
pub fn estimate_psm(
    dataset: &ObservationalDataset,
    propensity_model: &FittedLogit,
    k: usize,
    mode: MatchMode,
) -> Result<EstimateResult> {
    let scores = propensity_model.scores(dataset.covariates());
    matching_estimate(dataset, &scores, k, mode, EstimatorId::Psm1Nn)
}

/// Outcome score matching on the predicted outcome probability.
pub fn estimate_osm(
    dataset: &ObservationalDataset,
    outcome_model: &FittedLogit,
    k: usize,
    mode: MatchMode,
) -> Result<EstimateResult> {
    let scores = outcome_model.scores(dataset.covariates());
    let id = if k == 1 { EstimatorId::Osm1Nn } else { EstimatorId::OsmKnn(k) };
    matching_estimate(dataset, &scores, k, mode, id)
}

/// Inverse propensity weighting over the untreated units, normalized
/// (Hajek-style ratio), targeting the nonrespondent mean.
pub fn estimate_ipw_nr(
    dataset: &ObservationalDataset,
    propensity_model: &FittedLogit,
    formula: WeightFormula,
) -> Result<EstimateResult> {
    let untreated = dataset.untreated_indices();
    if untreated.is_empty() {
        return Err(Error::InvalidDataset("no untreated units".into()));
    }
    let pi: Vec<f64> = untreated
        .iter()
        .map(|&i| propensity_model.predict(dataset.covariates().row(i)))
        .collect();
    let weights = nonrespondent_weights(&pi, formula)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&i, &w) in untreated.iter().zip(&weights) {
        num += w * dataset.outcome()[i].unwrap() as f64;
        den += w;
    }
    if !(den > 0.0) {
        return Err(Error::InvalidDataset("zero total IPW weight".into()));
    }
    Ok(EstimateResult::point_only(EstimatorId::IpwNr, num / den))
}

/// Mean predicted outcome over the treated group.
pub fn estimate_mpo(
    dataset: &ObservationalDataset,
    outcome_model: &FittedLogit,
) -> Result<EstimateResult> {
    let treated = dataset.treated_indices();
    if treated.is_empty() {
        return Err(Error::InvalidDataset("no treated units".into()));
    }
    let sum: f64 = treated
        .iter()
        .map(|&i| outcome_model.predict(dataset.covariates().row(i)))
        .sum();
    Ok(EstimateResult::point_only(EstimatorId::Mpo, sum / treated.len() as f64))
}

/// Doubly robust variant: refits the outcome model with nonrespondent weights
/// derived from the propensity scores, then averages over the treated group.
pub fn estimate_wmpo(
    dataset: &ObservationalDataset,
    propensity_model: &FittedLogit,
    formula: WeightFormula,
    fit_config: &FitConfig,
) -> Result<EstimateResult> {
    let untreated = dataset.untreated_indices();
    let pi: Vec<f64> = untreated
        .iter()
        .map(|&i| propensity_model.predict(dataset.covariates().row(i)))
        .collect();
    let weights = nonrespondent_weights(&pi, formula)?;
    let weighted_model = fit_outcome(dataset, Some(&weights), fit_config)?;
    let mut result = estimate_mpo(dataset, &weighted_model)?;
    result.estimator = EstimatorId::Wmpo;
    Ok(result)
}

/// Outcome of a full estimator run: the successes, in the fixed report order,
/// plus per-estimator failures.
#[derive(Debug, Clone)]
pub struct RunAllOutput {
    pub results: Vec<EstimateResult>,
    pub errors: Vec<(EstimatorId, String)>,
}

impl RunAllOutput {
    pub fn get(&self, id: EstimatorId) -> Option<&EstimateResult> {
        self.results.iter().find(|r| r.estimator == id)
    }
}

/// The estimator roster for a given OSM k-list, in report order.
pub fn estimator_roster(osm_k_list: &[usize]) -> Vec<EstimatorId> {
    let mut ids = vec![EstimatorId::Psm1Nn];
    for &k in osm_k_list {
        ids.push(if k == 1 { EstimatorId::Osm1Nn } else { EstimatorId::OsmKnn(k) });
    }
    ids.extend([EstimatorId::IpwNr, EstimatorId::Mpo, EstimatorId::Wmpo]);
    ids
}

/// Runs every estimator, fitting the propensity and outcome models once and
/// reusing them. One estimator failing does not abort the others.
pub fn run_all(dataset: &ObservationalDataset, config: &EstimatorConfig) -> RunAllOutput {
    let propensity = fit_propensity(dataset, &config.fit);
    let outcome = fit_outcome(dataset, None, &config.fit);

    let mut attempts: Vec<(EstimatorId, Result<EstimateResult>)> = Vec::new();
    attempts.push((
        EstimatorId::Psm1Nn,
        propensity
            .as_ref()
            .map_err(clone_err)
            .and_then(|pm| estimate_psm(dataset, pm, 1, config.match_mode)),
    ));
    for &k in &config.osm_k_list {
        let id = if k == 1 { EstimatorId::Osm1Nn } else { EstimatorId::OsmKnn(k) };
        attempts.push((
            id,
            outcome
                .as_ref()
                .map_err(clone_err)
                .and_then(|om| estimate_osm(dataset, om, k, config.match_mode)),
        ));
    }
    attempts.push((
        EstimatorId::IpwNr,
        propensity
            .as_ref()
            .map_err(clone_err)
            .and_then(|pm| estimate_ipw_nr(dataset, pm, config.weight_formula)),
    ));
    attempts.push((
        EstimatorId::Mpo,
        outcome.as_ref().map_err(clone_err).and_then(|om| estimate_mpo(dataset, om)),
    ));
    attempts.push((
        EstimatorId::Wmpo,
        propensity
            .as_ref()
            .map_err(clone_err)
            .and_then(|pm| estimate_wmpo(dataset, pm, config.weight_formula, &config.fit)),
    ));

    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (id, attempt) in attempts {
        match attempt {
            Ok(res) => results.push(res),
            Err(e) => errors.push((id, e.to_string())),
        }
    }
    RunAllOutput { results, errors }
}

fn clone_err(e: &Error) -> Error {
    Error::Fit(e.to_string())
}
