//! Gauss–Legendre nodes, trapezoid rules, and the quadrature grid shared by
//! divergence evaluation and identity verification.

use crate::kinds::DivergenceError;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, any order, by Newton
/// iteration on the Legendre polynomial.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "need at least one node");
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        // Tricomi-style initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (pn, pn1) = legendre_pair(n, x);
            // P_n'(x) = n (x P_n - P_{n-1}) / (x² - 1)
            let dpn = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dpn;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (pn, pn1) = legendre_pair(n, x);
        let dpn = n as f64 * (x * pn - pn1) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dpn * dpn);
        out.push((x, w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// `(P_n(x), P_{n-1}(x))` by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let p_next = ((2 * k + 1) as f64 * x * p - k as f64 * p_prev) / (k + 1) as f64;
        p_prev = p;
        p = p_next;
    }
    (p, p_prev)
}

/// Gauss–Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gauss_legendre_unit(n).into_iter().map(|(x, w)| (mid + half * x, half * w)).collect()
}

/// Evenly spaced trapezoid nodes and weights on `[a, b]` (`n >= 2` points).
pub fn trapezoid(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    assert!(n >= 2, "trapezoid needs at least two points");
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            (a + i as f64 * h, w)
        })
        .collect()
}

/// Resolution settings for space-time quadrature: a per-axis spatial
/// trapezoid over a multiple of the distributions' standard deviations, and
/// Gauss–Legendre time nodes on `[t_lo, t_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub space_points: usize,
    pub space_extent: f64,
    pub time_points: usize,
    /// `(t, weight)` Gauss–Legendre nodes, strictly inside `(t_lo, t_hi)`.
    pub time_nodes: Vec<(f64, f64)>,
    t_lo: f64,
    t_hi: f64,
}

impl QuadratureGrid {
    pub fn new(
        space_points: usize,
        space_extent: f64,
        time_points: usize,
        t_lo: f64,
        t_hi: f64,
    ) -> Result<Self, DivergenceError> {
        if space_points < 16 || time_points < 16 {
            return Err(DivergenceError::BadGrid(format!(
                "need >= 16 points per axis, got space {space_points}, time {time_points}"
            )));
        }
        if !(space_extent > 0.0) {
            return Err(DivergenceError::BadGrid("space extent must be > 0".into()));
        }
        if !(t_lo >= 0.0 && t_lo < t_hi && t_hi.is_finite()) {
            return Err(DivergenceError::BadGrid(format!(
                "need 0 <= t_lo < t_hi, got ({t_lo}, {t_hi})"
            )));
        }
        let time_nodes = gauss_legendre(time_points, t_lo, t_hi);
        debug_assert!(time_nodes.iter().all(|&(t, _)| t > t_lo && t < t_hi));
        Ok(QuadratureGrid { space_points, space_extent, time_points, time_nodes, t_lo, t_hi })
    }

    /// Library defaults: 2048 spatial points over ±10 std, 64 time nodes.
    pub fn default_for(t_lo: f64, t_hi: f64) -> Result<Self, DivergenceError> {
        Self::new(2048, 10.0, 64, t_lo, t_hi)
    }

    /// Same window at doubled space and time resolution (convergence checks).
    pub fn refined(&self) -> Self {
        Self::new(
            self.space_points * 2,
            self.space_extent,
            self.time_points * 2,
            self.t_lo,
            self.t_hi,
        )
        .expect("refining a valid grid keeps it valid")
    }

    pub fn time_window(&self) -> (f64, f64) {
        (self.t_lo, self.t_hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_nodes_match_known_values() {
        // n = 2: ±1/√3, weights 1.
        let n2 = gauss_legendre_unit(2);
        assert!((n2[0].0 + 1.0 / 3f64.sqrt()).abs() < 1e-14);
        assert!((n2[1].0 - 1.0 / 3f64.sqrt()).abs() < 1e-14);
        assert!((n2[0].1 - 1.0).abs() < 1e-14);
        // n = 3: 0, ±√(3/5); weights 8/9, 5/9.
        let n3 = gauss_legendre_unit(3);
        assert!(n3[1].0.abs() < 1e-14);
        assert!((n3[2].0 - (0.6f64).sqrt()).abs() < 1e-14);
        assert!((n3[1].1 - 8.0 / 9.0).abs() < 1e-14);
        assert!((n3[0].1 - 5.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [16, 64, 128] {
            let s: f64 = gauss_legendre(n, 0.25, 3.75).iter().map(|&(_, w)| w).sum();
            assert!((s - 3.5).abs() < 1e-12, "n={n}: {s}");
        }
    }

    #[test]
    fn integrates_polynomials_exactly() {
        // n-point rule is exact through degree 2n-1.
        let nodes = gauss_legendre(8, 0.0, 1.0);
        for deg in 0..=15usize {
            let got: f64 = nodes.iter().map(|&(x, w)| w * x.powi(deg as i32)).sum();
            let exact = 1.0 / (deg as f64 + 1.0);
            assert!((got - exact).abs() < 1e-14, "deg {deg}: {got} vs {exact}");
        }
    }

    #[test]
    fn integrates_exponential_to_machine_precision() {
        let nodes = gauss_legendre(64, 0.0, 1.0);
        let got: f64 = nodes.iter().map(|&(x, w)| w * x.exp()).sum();
        assert!((got - (std::f64::consts::E - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let nodes = trapezoid(100, -1.0, 3.0);
        let got: f64 = nodes.iter().map(|&(x, w)| w * (2.0 * x + 1.0)).sum();
        assert!((got - 12.0).abs() < 1e-12);
    }

    #[test]
    fn grid_validation_and_refinement() {
        assert!(QuadratureGrid::new(8, 10.0, 64, 1e-3, 1.0).is_err());
        assert!(QuadratureGrid::new(64, 10.0, 8, 1e-3, 1.0).is_err());
        assert!(QuadratureGrid::new(64, -1.0, 64, 1e-3, 1.0).is_err());
        assert!(QuadratureGrid::new(64, 10.0, 64, 1.0, 1.0).is_err());

        let g = QuadratureGrid::default_for(1e-3, 1.0).unwrap();
        assert_eq!(g.space_points, 2048);
        assert_eq!(g.time_nodes.len(), 64);
        assert!(g.time_nodes.iter().all(|&(t, _)| t > 1e-3 && t < 1.0));
        let r = g.refined();
        assert_eq!(r.space_points, 4096);
        assert_eq!(r.time_points, 128);
        assert_eq!(r.time_window(), (1e-3, 1.0));
    }
}
