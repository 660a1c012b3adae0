/// Smooth-L1 of one residual: quadratic inside the unit interval, linear outside.
pub fn smooth_l1_value(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Derivative of [`smooth_l1_value`].
pub(crate) fn smooth_l1_slope(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_values() {
        assert_eq!(smooth_l1_value(0.0), 0.0);
        assert_eq!(smooth_l1_value(0.5), 0.125);
        assert_eq!(smooth_l1_value(-0.5), 0.125);
        assert_eq!(smooth_l1_value(1.0), 0.5);
        assert_eq!(smooth_l1_value(2.0), 1.5);
        assert_eq!(smooth_l1_value(-2.0), 1.5);
    }

    #[test]
    fn slope_is_continuous_at_the_knee() {
        assert_eq!(smooth_l1_slope(1.0), 1.0);
        assert_eq!(smooth_l1_slope(1.0 - 1e-12), 1.0 - 1e-12);
        assert_eq!(smooth_l1_slope(-3.0), -1.0);
    }
}
