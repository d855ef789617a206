use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Partition of the nodes into `L` degree groups, ordered from low to high degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeGrouping {
    group_of: Vec<usize>,
    group_sizes: Vec<usize>,
    representative_degree: Vec<f64>,
}

/// How nodes are mapped to groups.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupAssignment {
    /// Strictly increasing degree thresholds `b_1 < … < b_{L-1}`: a node with
    /// degree `x` lands in the group counting how many thresholds are `<= x`.
    Thresholds(Vec<f64>),
    /// Group index per node.
    Explicit(Vec<usize>),
}

impl DegreeGrouping {
    pub fn num_groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_of(&self, node: usize) -> usize {
        self.group_of[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.group_of
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn representative_degrees(&self) -> &[f64] {
        &self.representative_degree
    }

    /// `d_1`, the representative degree of the lowest group.
    pub fn lowest_degree(&self) -> f64 {
        self.representative_degree[0]
    }

    /// Single group covering every node with a given representative degree.
    pub fn single(num_nodes: usize, degree: f64) -> Self {
        Self {
            group_of: vec![0; num_nodes],
            group_sizes: vec![num_nodes],
            representative_degree: vec![degree],
        }
    }
}

fn median(values: &mut [usize]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    }
}

/// Group nodes by degree; each group's representative degree is its median degree.
pub fn assign_degree_groups(graph: &Graph, assignment: &GroupAssignment) -> Result<DegreeGrouping> {
    let deg = graph.degrees();
    let n = graph.num_nodes();
    let group_of: Vec<usize> = match assignment {
        GroupAssignment::Thresholds(bounds) => {
            if bounds.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidGrouping(
                    "degree thresholds must be strictly increasing".into(),
                ));
            }
            deg.iter()
                .map(|&d| bounds.iter().filter(|&&b| b <= d as f64).count())
                .collect()
        }
        GroupAssignment::Explicit(groups) => {
            if groups.len() != n {
                return Err(Error::InvalidGrouping(format!(
                    "assignment covers {} nodes, graph has {n}",
                    groups.len()
                )));
            }
            groups.clone()
        }
    };
    let num_groups = match assignment {
        GroupAssignment::Thresholds(b) => b.len() + 1,
        GroupAssignment::Explicit(g) => g.iter().max().map_or(1, |m| m + 1),
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_groups];
    for (node, &g) in group_of.iter().enumerate() {
        members[g].push(deg[node]);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::EmptyGroup(empty));
    }
    let group_sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let representative_degree: Vec<f64> = members.iter_mut().map(|m| median(m)).collect();
    if representative_degree[0] <= 0.0 {
        return Err(Error::InvalidGrouping("lowest group has median degree 0".into()));
    }
    if representative_degree.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidGrouping(format!(
            "representative degrees {representative_degree:?} are not strictly increasing"
        )));
    }
    Ok(DegreeGrouping {
        group_of,
        group_sizes,
        representative_degree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> Graph {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Graph::new(n, edges).unwrap()
    }

    #[test]
    fn single_group_of_regular_graph() {
        let g = complete(6); // 5-regular
        let grouping = assign_degree_groups(&g, &GroupAssignment::Thresholds(vec![])).unwrap();
        assert_eq!(grouping.num_groups(), 1);
        assert_eq!(grouping.representative_degrees(), &[5.0]);
        assert_eq!(grouping.group_sizes(), &[6]);
    }

    #[test]
    fn explicit_assignment_round_trips() {
        // star: hub 0 has degree 4, leaves degree 1
        let g = Graph::new(5, vec![(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let groups = vec![1, 0, 0, 0, 0];
        let grouping = assign_degree_groups(&g, &GroupAssignment::Explicit(groups.clone())).unwrap();
        assert_eq!(grouping.assignment(), groups.as_slice());
        assert_eq!(grouping.group_sizes(), &[4, 1]);
        assert_eq!(grouping.representative_degrees(), &[1.0, 4.0]);
    }

    #[test]
    fn thresholds_and_empty_groups() {
        let g = Graph::new(5, vec![(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let grouping = assign_degree_groups(&g, &GroupAssignment::Thresholds(vec![2.0])).unwrap();
        assert_eq!(grouping.group_sizes(), &[4, 1]);
        assert!(matches!(
            assign_degree_groups(&g, &GroupAssignment::Thresholds(vec![2.0, 3.0])),
            Err(Error::EmptyGroup(1))
        ));
        assert!(assign_degree_groups(&g, &GroupAssignment::Thresholds(vec![3.0, 2.0])).is_err());
        assert!(assign_degree_groups(&g, &GroupAssignment::Explicit(vec![0, 1, 1, 1, 1])).is_err());
    }

    #[test]
    fn median_of_even_group() {
        assert_eq!(median(&mut [4, 1, 3, 2]), 2.5);
    }
}
