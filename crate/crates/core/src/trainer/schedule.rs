use std::f64::consts::PI;

/// Cosine-annealed learning rate for epoch `t` of `total` (0-based), reaching
/// `lr_min` exactly at the last epoch.
///
/// Written as an interpolation weight `(1 + cos(pi p)) / 2 = (1 - sin(pi (p - 1/2))) / 2`,
/// which is exactly 1, 1/2 and 0 at the start, midpoint and end.
pub fn cosine_annealing_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> f64 {
    debug_assert!(t < total.max(1));
    if total <= 1 {
        return lr0;
    }
    let progress = t as f64 / (total - 1) as f64;
    let w = 0.5 * (1.0 - (PI * (progress - 0.5)).sin());
    w * lr0 + (1.0 - w) * lr_min
}
