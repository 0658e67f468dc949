//! Single-linkage clustering of messages by pairwise similarity.

use super::similarity::similarity;
use super::InferenceError;
use crate::capture::Message;

/// Group `items` so that two members share a cluster iff they are
/// connected by a chain of pairwise similarity >= `threshold`.
///
/// Clusters are ordered by their smallest member index and each cluster's
/// members are ascending, so the output is deterministic.
pub fn cluster_bytes(items: &[&[u8]], threshold: f64) -> Result<Vec<Vec<usize>>, InferenceError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(InferenceError::InvalidThreshold(threshold));
    }
    let mut parent: Vec<usize> = (0..items.len()).collect();

    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }

    for i in 0..items.len() {
        for j in i + 1..items.len() {
            if similarity(items[i], items[j]).at_least(threshold) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    // Smaller index becomes the root, keeping ordering stable.
                    let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
                    parent[hi] = lo;
                }
            }
        }
    }

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_to_cluster: Vec<Option<usize>> = vec![None; items.len()];
    for i in 0..items.len() {
        let root = find(&mut parent, i);
        match root_to_cluster[root] {
            Some(c) => clusters[c].push(i),
            None => {
                root_to_cluster[root] = Some(clusters.len());
                clusters.push(vec![i]);
            }
        }
    }
    Ok(clusters)
}

/// Cluster whole messages by payload similarity.
pub fn cluster_messages(
    messages: &[Message],
    threshold: f64,
) -> Result<Vec<Vec<usize>>, InferenceError> {
    let payloads: Vec<&[u8]> = messages.iter().map(|m| m.payload.as_slice()).collect();
    cluster_bytes(&payloads, threshold)
}
