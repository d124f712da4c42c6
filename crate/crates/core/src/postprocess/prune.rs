use crate::error::{Error, Result};
use crate::rasterizer::ViewStats;
use crate::GaussianSet;

/// Keeps the `ceil(keep_fraction * N)` most view-consistent Gaussians.
///
/// Gaussians dominating at most one view are pruned before any other, then
/// by ascending `contribution * ln(1 + views)`, then by index.
pub fn prune_low_consistency(stats: &ViewStats, keep_fraction: f64) -> Result<GaussianSet> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config(format!("keep_fraction must lie in (0, 1], got {keep_fraction}")));
    }
    let n = stats.len();
    if keep_fraction == 1.0 {
        return Ok((0..n as u32).collect());
    }
    let keep = (keep_fraction * n as f64).ceil() as usize;
    let mut order: Vec<(bool, f64, u32)> = (0..n)
        .map(|g| (stats.view_count[g] > 1, stats.score(g), g as u32))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(order[n - keep.min(n)..].iter().map(|&(_, _, g)| g).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(views: &[u32], contrib: &[f64]) -> ViewStats {
        ViewStats {
            view_count: views.to_vec(),
            opacity_contribution: contrib.to_vec(),
            frames: 20,
        }
    }

    #[test]
    fn identity_at_one() {
        let s = stats(&[0, 0, 5], &[0.0, 1.0, 2.0]);
        assert_eq!(prune_low_consistency(&s, 1.0).unwrap(), GaussianSet::from([0, 1, 2]));
    }

    #[test]
    fn log_factor_orders_equal_contributions() {
        let s = stats(&[0, 10], &[3.0, 3.0]);
        assert_eq!(prune_low_consistency(&s, 0.5).unwrap(), GaussianSet::from([1]));
    }

    #[test]
    fn single_view_pruned_before_high_score() {
        // Gaussian 0 has a large score from one view; it still goes first.
        let s = stats(&[1, 2, 3], &[1000.0, 1.0, 1.0]);
        assert_eq!(prune_low_consistency(&s, 0.6).unwrap(), GaussianSet::from([1, 2]));
    }

    #[test]
    fn rejects_bad_fraction() {
        let s = stats(&[1], &[1.0]);
        assert!(prune_low_consistency(&s, 0.0).is_err());
        assert!(prune_low_consistency(&s, 1.5).is_err());
    }
}
