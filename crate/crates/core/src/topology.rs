//! Connected-component labelling over node-index edge lists.

/// Component label per node; labels are dense and ordered by first node.
pub(crate) fn component_labels(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for (u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        stack.push(start);
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if label[v] == usize::MAX {
                    label[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    label
}

/// Node groups per connected component (empty input gives no groups).
pub(crate) fn islands(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let labels = component_labels(n, edges);
    let count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); count];
    for (node, &l) in labels.iter().enumerate() {
        groups[l].push(node);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_and_isolated_node() {
        let groups = islands(4, [(0, 1), (1, 2)]);
        assert_eq!(groups, vec![vec![0, 1, 2], vec![3]]);
    }
}
