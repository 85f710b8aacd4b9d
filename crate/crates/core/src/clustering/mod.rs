//! Overlapping question grouping: PCM memberships, a per-cluster knee
//! threshold, and extraction of (possibly overlapping) member sets.

mod knee;
mod pcm;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use knee::{detect_knee, detect_knee_with_sensitivity, DEFAULT_SENSITIVITY};
pub use pcm::{possibilistic_membership, run_pcm, MembershipMatrix, PcmConfig};

use crate::error::{Error, Result};

fn default_sensitivity() -> f64 {
    DEFAULT_SENSITIVITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KneeConfig {
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,
}

impl Default for KneeConfig {
    fn default() -> Self {
        KneeConfig {
            sensitivity: DEFAULT_SENSITIVITY,
        }
    }
}

impl KneeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(Error::Config("knee.sensitivity must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: usize,
    pub threshold: f64,
    /// Member ids by descending membership (row order on ties).
    pub members: Vec<String>,
}

impl Cluster {
    pub fn member_set(&self) -> BTreeSet<&str> {
        self.members.iter().map(String::as_str).collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.iter().any(|m| m == id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Cluster> {
        self.clusters.iter()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cluster set serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Thresholds each membership row at its knee (default sensitivity).
pub fn extract_clusters(memberships: &MembershipMatrix, question_ids: &[String]) -> Result<ClusterSet> {
    extract_clusters_with(memberships, question_ids, &KneeConfig::default())
}

/// For every row: sort descending, take `tau` at the detected knee or the
/// row minimum when there is none, and keep every question with membership
/// `>= tau`. All rows are returned, in row order.
pub fn extract_clusters_with(
    memberships: &MembershipMatrix,
    question_ids: &[String],
    knee: &KneeConfig,
) -> Result<ClusterSet> {
    let n = question_ids.len();
    let mut clusters = Vec::with_capacity(memberships.rows());
    for (c, row) in memberships.values.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidInput(format!(
                "membership row {c} has {} entries for {n} questions",
                row.len()
            )));
        }
        let mut sorted = row.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let threshold = match detect_knee_with_sensitivity(&sorted, knee.sensitivity)? {
            Some(idx) => sorted[idx],
            None => sorted.last().copied().unwrap_or(0.0),
        };
        clusters.push(cluster_at_threshold(c, row, question_ids, threshold));
    }
    Ok(ClusterSet { clusters })
}

/// Members of one row at `threshold` (`>=`, so ties are all admitted),
/// ordered by descending membership.
fn cluster_at_threshold(cluster_id: usize, row: &[f64], ids: &[String], threshold: f64) -> Cluster {
    let mut order: Vec<usize> = (0..row.len()).filter(|&i| row[i] >= threshold).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    Cluster {
        cluster_id,
        threshold,
        members: order.into_iter().map(|i| ids[i].clone()).collect(),
    }
}

/// Collapses clusters with identical member sets (the lowest `cluster_id`
/// survives) and drops empty ones, preserving survivor order.
pub fn dedupe_clusters(clusters: &ClusterSet) -> ClusterSet {
    let mut owner: HashMap<BTreeSet<&str>, usize> = HashMap::new();
    for c in clusters.iter().filter(|c| !c.members.is_empty()) {
        owner
            .entry(c.member_set())
            .and_modify(|id| *id = (*id).min(c.cluster_id))
            .or_insert(c.cluster_id);
    }
    let mut emitted: BTreeSet<usize> = BTreeSet::new();
    let survivors = clusters
        .iter()
        .filter(|c| !c.members.is_empty())
        .filter(|c| owner[&c.member_set()] == c.cluster_id && emitted.insert(c.cluster_id))
        .cloned()
        .collect();
    ClusterSet { clusters: survivors }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("q{i}")).collect()
    }

    fn cluster(id: usize, members: &[&str]) -> Cluster {
        Cluster {
            cluster_id: id,
            threshold: 0.5,
            members: members.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn knee_threshold_selects_top_members() {
        let p = MembershipMatrix::from_values(vec![vec![0.9, 0.8, 0.1]]).unwrap();
        let at_half = extract_clusters_with(&p, &ids(3), &KneeConfig { sensitivity: 0.5 }).unwrap();
        assert_eq!(at_half.clusters[0].members, ["q1", "q2"]);
        assert_eq!(at_half.clusters[0].threshold, 0.8);
        // at S = 1 three points cannot produce a knee: fall back to the minimum
        let default = extract_clusters(&p, &ids(3)).unwrap();
        assert_eq!(default.clusters[0].members, ["q1", "q2", "q3"]);
    }

    #[test]
    fn constant_row_keeps_everything() {
        let p = MembershipMatrix::from_values(vec![vec![0.5, 0.5, 0.5]]).unwrap();
        let c = extract_clusters(&p, &ids(3)).unwrap();
        assert_eq!(c.clusters[0].threshold, 0.5);
        assert_eq!(c.clusters[0].members, ["q1", "q2", "q3"]);
    }

    #[test]
    fn convex_row_cuts_after_elbow() {
        let p = MembershipMatrix::from_values(vec![vec![0.01, 0.05, 1.0, 0.1, 0.0]]).unwrap();
        let c = extract_clusters(&p, &ids(5)).unwrap();
        assert_eq!(c.clusters[0].threshold, 0.1);
        assert_eq!(c.clusters[0].members, ["q3", "q4"]);
    }

    #[test]
    fn threshold_at_unique_maximum_is_singleton() {
        let c = cluster_at_threshold(4, &[0.3, 0.9, 0.2], &ids(3), 0.9);
        assert_eq!(c.members, ["q2"]);
        assert_eq!(c.cluster_id, 4);
    }

    #[test]
    fn ties_at_threshold_are_all_admitted() {
        let p = MembershipMatrix::from_values(vec![vec![1.0, 0.98, 0.96, 0.96, 0.1, 0.05, 0.0]]).unwrap();
        let c = extract_clusters(&p, &ids(7)).unwrap();
        let t = c.clusters[0].threshold;
        for (i, &u) in p.values[0].iter().enumerate() {
            assert_eq!(c.clusters[0].contains(&format!("q{}", i + 1)), u >= t);
        }
    }

    #[test]
    fn mismatched_ids_rejected() {
        let p = MembershipMatrix::from_values(vec![vec![0.5, 0.5]]).unwrap();
        assert!(extract_clusters(&p, &ids(3)).is_err());
    }

    #[test]
    fn dedupe_collapses_equal_sets() {
        let set = ClusterSet {
            clusters: vec![cluster(0, &["q1", "q2"]), cluster(1, &["q2", "q1"]), cluster(2, &["q3"])],
        };
        let d = dedupe_clusters(&set);
        assert_eq!(d.clusters.iter().map(|c| c.cluster_id).collect::<Vec<_>>(), [0, 2]);
    }

    #[test]
    fn dedupe_identity_and_total_collapse() {
        let distinct = ClusterSet {
            clusters: vec![cluster(0, &["q1"]), cluster(1, &["q2"])],
        };
        assert_eq!(dedupe_clusters(&distinct), distinct);
        let same = ClusterSet {
            clusters: (0..4).map(|i| cluster(i, &["q1", "q2", "q3"])).collect(),
        };
        assert_eq!(dedupe_clusters(&same).len(), 1);
        let with_empty = ClusterSet {
            clusters: vec![cluster(0, &[]), cluster(1, &["q2"])],
        };
        assert_eq!(dedupe_clusters(&with_empty).clusters[0].cluster_id, 1);
    }

    #[test]
    fn dedupe_keeps_lowest_id_even_out_of_order() {
        let set = ClusterSet {
            clusters: vec![cluster(5, &["q1"]), cluster(2, &["q1"]), cluster(7, &["q2"])],
        };
        let d = dedupe_clusters(&set);
        assert_eq!(d.clusters.iter().map(|c| c.cluster_id).collect::<Vec<_>>(), [2, 7]);
    }

    #[test]
    fn clusters_json_shape() {
        let set = ClusterSet {
            clusters: vec![cluster(0, &["q1"])],
        };
        assert_eq!(set.to_json(), r#"{"clusters":[{"cluster_id":0,"threshold":0.5,"members":["q1"]}]}"#);
    }
}
