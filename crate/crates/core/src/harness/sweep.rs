//! Stepsize selection: run a grid, compare mean AUC over seeds, pick the
//! best (ties go to the smaller stepsize).

/// Index of the winning stepsize given per-(grid, seed) AUCs.
/// `aucs[g][s]` = AUC of grid point g, seed s.
pub fn select_best(grid: &[f64], aucs: &[Vec<f64>]) -> usize {
    assert_eq!(grid.len(), aucs.len());
    assert!(!grid.is_empty());
    let mut best = 0usize;
    let mut best_mean = f64::NEG_INFINITY;
    for (g, seeds) in aucs.iter().enumerate() {
        let mean = seeds.iter().sum::<f64>() / seeds.len().max(1) as f64;
        let better = mean > best_mean
            || (mean == best_mean && grid[g] < grid[best]);
        if better {
            best = g;
            best_mean = mean;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_element_grid_is_trivially_selected() {
        assert_eq!(select_best(&[3e-4], &[vec![1.0, 2.0]]), 0);
    }

    #[test]
    fn max_mean_auc_wins() {
        let grid = [1e-3, 3e-4, 1e-4];
        let aucs = vec![vec![1.0, 1.0], vec![4.0, 2.0], vec![2.0, 2.0]];
        assert_eq!(select_best(&grid, &aucs), 1);
    }

    #[test]
    fn ties_break_toward_the_smaller_stepsize() {
        let grid = [1e-3, 1e-4];
        let aucs = vec![vec![2.0], vec![2.0]];
        assert_eq!(select_best(&grid, &aucs), 1);
        // order independence
        let grid2 = [1e-4, 1e-3];
        let aucs2 = vec![vec![2.0], vec![2.0]];
        assert_eq!(select_best(&grid2, &aucs2), 0);
    }
}
