//! Cacheability-metric recommender (APL source tag).
//!
//! Five metrics are computed per method and thresholded against the
//! population mean plus k standard deviations:
//!
//! * frequency: call count.
//! * expensiveness: mean total (subtree) time in nanoseconds.
//! * shareability: distinct sessions that produced at least one occurrence
//!   of a repeated (input, identical output) pair.
//! * staticity: fraction of input groups whose output never changes.
//! * changeability: fraction of calls whose input group had produced a
//!   different output earlier in the trace.
//!
//! A method is selected when its changeability stays under the ceiling and
//! at least one of frequency, expensiveness or shareability reaches the
//! population cutoff (ties inclusive). Selected methods then get a per-input
//! whitelist; only inputs that repeat with a stable output are worth caching,
//! so a method whose inputs never repeat stably is dropped from the set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::profile::{build_profiles, MethodProfile, NestingError};
use crate::recommend::{Recommendation, RecommendationSet, Source};
use crate::trace::CallRecord;
use crate::value::InputKey;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AplConfig {
    /// Standard-deviation multiplier for the selection cutoffs.
    pub k: f64,
    /// Upper bound on changeability for a method to stay eligible.
    pub changeability_ceiling: f64,
    /// Minimum occurrences before an input is worth whitelisting.
    pub min_input_occurrences: u64,
}

impl Default for AplConfig {
    fn default() -> Self {
        AplConfig {
            k: 1.0,
            changeability_ceiling: 0.1,
            min_input_occurrences: 2,
        }
    }
}

impl AplConfig {
    /// k is non-negative and inputs must repeat at least twice to be worth
    /// whitelisting; out-of-range values are clamped.
    fn effective_k(&self) -> f64 {
        self.k.max(0.0)
    }

    fn effective_min_occurrences(&self) -> u64 {
        self.min_input_occurrences.max(2)
    }
}

/// The five cacheability metrics for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AplMetrics {
    pub method: String,
    pub frequency: u64,
    pub expensiveness_ns: f64,
    pub shareability: u64,
    pub staticity: f64,
    pub changeability: f64,
}

/// Compute the metric values for every profiled method.
pub fn compute_metrics(profiles: &BTreeMap<String, MethodProfile>) -> BTreeMap<String, AplMetrics> {
    profiles
        .iter()
        .map(|(method, profile)| (method.clone(), metrics_for(profile)))
        .collect()
}

fn metrics_for(profile: &MethodProfile) -> AplMetrics {
    let total_groups = profile.groups.len();
    let stable_groups = profile
        .groups
        .values()
        .filter(|g| g.output_never_changes())
        .count();
    let staticity = if total_groups == 0 {
        0.0
    } else {
        stable_groups as f64 / total_groups as f64
    };

    let mut changed_calls = 0u64;
    let mut sharing_sessions: BTreeSet<&str> = BTreeSet::new();
    for group in profile.groups.values() {
        // changeability: a call counts when some earlier call in its group
        // produced a different output.
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for occ in &group.occurrences {
            let rendered = occ.output.render();
            let differs = match seen.len() {
                0 => false,
                1 => !seen.contains(&rendered),
                _ => true,
            };
            if differs {
                changed_calls += 1;
            }
            seen.insert(rendered);
        }
        // shareability: sessions touching any (input, output) class that
        // occurs at least twice in the trace.
        let mut classes: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        for occ in &group.occurrences {
            classes
                .entry(occ.output.render())
                .or_default()
                .push(occ.session.as_str());
        }
        for sessions in classes.values() {
            if sessions.len() >= 2 {
                sharing_sessions.extend(sessions.iter().copied());
            }
        }
    }
    let count = profile.count();
    let changeability = if count == 0 {
        0.0
    } else {
        changed_calls as f64 / count as f64
    };

    AplMetrics {
        method: profile.method.clone(),
        frequency: count,
        expensiveness_ns: profile.mean_total_ns(),
        shareability: sharing_sessions.len() as u64,
        staticity,
        changeability,
    }
}

fn population_cutoff(values: &[f64], k: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    mean + k * var.sqrt()
}

/// Threshold selection: changeability ceiling plus the disjunctive
/// mean + k sigma gate over frequency, expensiveness and shareability.
pub fn select_methods(metrics: &BTreeMap<String, AplMetrics>, cfg: &AplConfig) -> BTreeSet<String> {
    if metrics.is_empty() {
        return BTreeSet::new();
    }
    let k = cfg.effective_k();
    let freq: Vec<f64> = metrics.values().map(|m| m.frequency as f64).collect();
    let exp: Vec<f64> = metrics.values().map(|m| m.expensiveness_ns).collect();
    let share: Vec<f64> = metrics.values().map(|m| m.shareability as f64).collect();
    let freq_cut = population_cutoff(&freq, k);
    let exp_cut = population_cutoff(&exp, k);
    let share_cut = population_cutoff(&share, k);

    metrics
        .values()
        .filter(|m| {
            m.changeability <= cfg.changeability_ceiling
                && (m.frequency as f64 >= freq_cut
                    || m.expensiveness_ns >= exp_cut
                    || m.shareability as f64 >= share_cut)
        })
        .map(|m| m.method.clone())
        .collect()
}

/// Per-input selection for an already selected method. Returns the whitelist
/// or `None` when no input repeats with a stable output, in which case the
/// method leaves the recommendation set.
pub fn select_inputs(profile: &MethodProfile, cfg: &AplConfig) -> Option<BTreeSet<InputKey>> {
    if profile.groups.is_empty() {
        return None;
    }
    let min_occurrences = cfg.effective_min_occurrences();
    let counts: Vec<f64> = profile.groups.values().map(|g| g.len() as f64).collect();
    let cutoff = population_cutoff(&counts, cfg.effective_k()).max(min_occurrences as f64);

    let whitelist: BTreeSet<InputKey> = profile
        .groups
        .iter()
        .filter(|(_, g)| g.len() as f64 >= cutoff && g.output_never_changes())
        .map(|(key, _)| key.clone())
        .collect();
    if !whitelist.is_empty() {
        return Some(whitelist);
    }

    // Fallback: the most frequent stable repeated input, so a selected
    // method always carries at least one input when stable repetition
    // exists at all. Ties resolve to the lexicographically first key.
    let mut best: Option<(&InputKey, u64)> = None;
    for (key, group) in &profile.groups {
        if group.len() >= min_occurrences && group.output_never_changes() {
            match best {
                Some((_, best_len)) if group.len() <= best_len => {}
                _ => best = Some((key, group.len())),
            }
        }
    }
    best.map(|(key, _)| {
        let mut set = BTreeSet::new();
        set.insert(key.clone());
        set
    })
}

/// Full pipeline: metrics, method selection, per-input whitelists. The rank
/// score of a method is the whitelisted call count times the mean total time
/// of those calls.
pub fn recommend_apl(
    records: &[CallRecord],
    cfg: &AplConfig,
) -> Result<RecommendationSet, NestingError> {
    let profiles = build_profiles(records)?;
    if profiles.is_empty() {
        return Ok(RecommendationSet::new(Source::Apl, Vec::new()));
    }
    let metrics = compute_metrics(&profiles);
    let selected = select_methods(&metrics, cfg);

    let mut recommendations = Vec::new();
    for method in selected {
        let profile = &profiles[&method];
        let Some(whitelist) = select_inputs(profile, cfg) else {
            continue;
        };
        let score: f64 = whitelist
            .iter()
            .map(|key| {
                profile.groups[key]
                    .occurrences
                    .iter()
                    .map(|o| o.total_ns as f64)
                    .sum::<f64>()
            })
            .sum();
        recommendations.push(Recommendation {
            method,
            score,
            whitelist: Some(whitelist),
            hint: None,
            subsumes: Vec::new(),
        });
    }
    Ok(RecommendationSet::new(Source::Apl, recommendations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::CallRecord;
    use crate::value::CanonicalValue as V;

    fn rec(
        session: &str,
        method: &str,
        input: &str,
        output: &str,
        start: u64,
        dur: u64,
    ) -> CallRecord {
        CallRecord {
            session: session.into(),
            method: method.into(),
            inputs: vec![V::scalar(input)],
            output: V::scalar(output),
            start_ns: start,
            end_ns: start + dur,
            depth: 0,
        }
    }

    fn metrics_of(records: &[CallRecord], method: &str) -> AplMetrics {
        let profiles = build_profiles(records).unwrap();
        compute_metrics(&profiles)[method].clone()
    }

    #[test]
    fn stable_groups_have_staticity_one() {
        let records = vec![
            rec("s", "m", "1", "2", 0, 10),
            rec("s", "m", "1", "2", 100, 10),
            rec("s", "m", "3", "4", 200, 10),
            rec("s", "m", "3", "4", 300, 10),
        ];
        let m = metrics_of(&records, "m");
        assert_eq!(m.staticity, 1.0);
        assert_eq!(m.changeability, 0.0);
    }

    #[test]
    fn single_flip_gives_half_changeability() {
        let records = vec![
            rec("s", "m", "1", "2", 0, 10),
            rec("s", "m", "1", "3", 100, 10),
        ];
        let m = metrics_of(&records, "m");
        assert_eq!(m.staticity, 0.0);
        assert_eq!(m.changeability, 0.5);
    }

    #[test]
    fn single_call_cannot_share() {
        let records = vec![rec("s", "m", "1", "2", 0, 10)];
        let m = metrics_of(&records, "m");
        assert_eq!(m.frequency, 1);
        assert_eq!(m.shareability, 0);
    }

    #[test]
    fn shareability_counts_sessions_of_repeated_pairs() {
        let records = vec![
            rec("s1", "m", "1", "2", 0, 10),
            rec("s2", "m", "1", "2", 100, 10),
            rec("s3", "m", "9", "9", 200, 10),
        ];
        let m = metrics_of(&records, "m");
        assert_eq!(m.shareability, 2);
    }

    fn metric(method: &str, frequency: u64, expensive: f64, share: u64, chg: f64) -> AplMetrics {
        AplMetrics {
            method: method.into(),
            frequency,
            expensiveness_ns: expensive,
            shareability: share,
            staticity: 1.0 - chg,
            changeability: chg,
        }
    }

    #[test]
    fn frequency_outlier_is_selected() {
        // frequencies [3,3,3,12]: mean 5.25, sigma ~3.897, cutoff ~9.147,
        // only the 12 passes; the other metrics stay under their cutoffs
        let metrics: BTreeMap<String, AplMetrics> = [
            metric("a", 3, 10.0, 0, 0.0),
            metric("b", 3, 11.0, 0, 0.0),
            metric("c", 3, 12.0, 1, 0.0),
            metric("d", 12, 13.0, 2, 0.0),
        ]
        .into_iter()
        .map(|m| (m.method.clone(), m))
        .collect();
        let selected = select_methods(&metrics, &AplConfig::default());
        assert_eq!(selected.into_iter().collect::<Vec<_>>(), vec!["d"]);
    }

    #[test]
    fn single_method_degenerates_to_its_own_mean() {
        let metrics: BTreeMap<String, AplMetrics> = [metric("only", 4, 100.0, 1, 0.0)]
            .into_iter()
            .map(|m| (m.method.clone(), m))
            .collect();
        let selected = select_methods(&metrics, &AplConfig::default());
        assert_eq!(selected.len(), 1);
    }

    #[test]
    fn changeability_ceiling_gates_hot_methods() {
        let metrics: BTreeMap<String, AplMetrics> = [
            metric("hot", 1000, 0.0, 0, 0.9),
            metric("cold", 1, 0.0, 0, 0.0),
        ]
        .into_iter()
        .map(|m| (m.method.clone(), m))
        .collect();
        let selected = select_methods(&metrics, &AplConfig::default());
        assert!(!selected.contains("hot"));
    }

    #[test]
    fn input_selection_keeps_the_dominant_group() {
        // counts {a:10, b:1, c:1}: mean 4, sigma ~4.243, cutoff ~8.243
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(rec("s", "m", "a", "1", i * 100, 10));
        }
        records.push(rec("s", "m", "b", "1", 5_000, 10));
        records.push(rec("s", "m", "c", "1", 6_000, 10));
        let profiles = build_profiles(&records).unwrap();
        let whitelist = select_inputs(&profiles["m"], &AplConfig::default()).unwrap();
        assert_eq!(whitelist.len(), 1);
        assert!(whitelist.contains(&InputKey(vec!["a".into()])));
    }

    #[test]
    fn lone_stable_group_is_whitelisted() {
        let records: Vec<CallRecord> = (0..5)
            .map(|i| rec("s", "m", "k", "1", i * 100, 10))
            .collect();
        let profiles = build_profiles(&records).unwrap();
        let whitelist = select_inputs(&profiles["m"], &AplConfig::default()).unwrap();
        assert_eq!(whitelist.len(), 1);
    }

    #[test]
    fn no_repetition_drops_the_method() {
        let records = vec![
            rec("s", "m", "a", "1", 0, 10),
            rec("s", "m", "b", "1", 100, 10),
        ];
        let profiles = build_profiles(&records).unwrap();
        assert!(select_inputs(&profiles["m"], &AplConfig::default()).is_none());
    }

    #[test]
    fn empty_trace_yields_empty_set() {
        let set = recommend_apl(&[], &AplConfig::default()).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn uniform_methods_all_select_when_stable() {
        // sigma 0 everywhere, every value equals the mean, ties inclusive
        let records = vec![
            rec("s", "m1", "1", "2", 0, 10),
            rec("s", "m1", "1", "2", 50, 10),
            rec("s", "m2", "1", "2", 100, 10),
            rec("s", "m2", "1", "2", 150, 10),
        ];
        let set = recommend_apl(&records, &AplConfig::default()).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.recommendations.iter().all(|r| r.whitelist.is_some()));
    }

    fn hot_and_cold_corpus() -> Vec<CallRecord> {
        let mut records = Vec::new();
        let mut t = 0;
        for i in 0..30 {
            records.push(rec(&format!("s{}", i % 3), "hot", "x", "1", t, 5_000));
            t += 10_000;
        }
        for m in ["cold1", "cold2", "cold3"] {
            for i in 0..2 {
                records.push(rec("s0", m, &format!("i{i}"), "1", t, 100));
                t += 10_000;
            }
        }
        records
    }

    #[test]
    fn hot_method_is_the_recommendation() {
        let set = recommend_apl(&hot_and_cold_corpus(), &AplConfig::default()).unwrap();
        assert_eq!(set.len(), 1);
        let rec = &set.recommendations[0];
        assert_eq!(rec.method, "hot");
        let whitelist = rec.whitelist.as_ref().unwrap();
        assert!(whitelist.contains(&InputKey(vec!["x".into()])));
        assert!(rec.score > 0.0);
    }

    #[test]
    fn selection_is_invariant_under_time_scaling() {
        let records = hot_and_cold_corpus();
        let scaled: Vec<CallRecord> = records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.start_ns *= 7;
                r.end_ns *= 7;
                r
            })
            .collect();
        let base = recommend_apl(&records, &AplConfig::default()).unwrap();
        let scaled_set = recommend_apl(&scaled, &AplConfig::default()).unwrap();
        assert_eq!(base.methods(), scaled_set.methods());
    }

    #[test]
    fn larger_k_never_enlarges_the_selection() {
        let records = hot_and_cold_corpus();
        let profiles = build_profiles(&records).unwrap();
        let metrics = compute_metrics(&profiles);
        let mut previous: Option<BTreeSet<String>> = None;
        for k in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let cfg = AplConfig {
                k,
                ..AplConfig::default()
            };
            let selected = select_methods(&metrics, &cfg);
            if let Some(prev) = &previous {
                assert!(selected.is_subset(prev), "k={k} grew the selection");
            }
            previous = Some(selected);
        }
    }

    #[test]
    fn whitelisted_inputs_repeat_with_one_output() {
        let set = recommend_apl(&hot_and_cold_corpus(), &AplConfig::default()).unwrap();
        let profiles = build_profiles(&hot_and_cold_corpus()).unwrap();
        for rec in &set.recommendations {
            let profile = &profiles[&rec.method];
            for key in rec.whitelist.as_ref().unwrap() {
                let group = &profile.groups[key];
                assert!(group.len() >= 2);
                assert!(group.output_never_changes());
            }
        }
    }
}
