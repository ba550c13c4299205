use crate::prelude::*;
use crate::Complex64;
use core::f64::consts::PI;

/// Net number of turns of `arg z` along the closed loop `values`
/// (last point connects back to the first), summing principal increments.
pub fn winding_number(values: &[Complex64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..values.len() {
        let a = values[k];
        let b = values[(k + 1) % values.len()];
        total += (b * a.conj()).arg();
    }
    total / (2.0 * PI)
}

/// Winding of a scattered complex field around `center` in a 2D projection:
/// points are grouped into `bins` equal angular sectors, each sector's values
/// are averaged, and the winding is taken over the non-empty sectors in
/// angular order. Returns `None` when fewer than half the sectors are populated.
pub fn binned_winding(points: &[(f64, f64)], values: &[Complex64], center: (f64, f64), bins: usize) -> Option<f64> {
    let mut sums = vec![Complex64::new(0.0, 0.0); bins];
    let mut counts = vec![0usize; bins];
    for (p, v) in points.iter().zip(values) {
        let angle = (p.1 - center.1).atan2(p.0 - center.0) + PI;
        let b = ((angle / (2.0 * PI) * bins as f64) as usize).min(bins - 1);
        sums[b] += v;
        counts[b] += 1;
    }
    let loop_: Vec<Complex64> = sums
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| s / c as f64)
        .collect();
    if loop_.len() * 2 < bins {
        return None;
    }
    Some(winding_number(&loop_))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_circle_winds_once() {
        let pts: Vec<Complex64> = (0..50).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 50.0)).collect();
        assert!((winding_number(&pts) - 1.0).abs() < 1e-12);
        let rev: Vec<Complex64> = pts.iter().rev().copied().collect();
        assert!((winding_number(&rev) + 1.0).abs() < 1e-12);
        let flat = vec![Complex64::new(1.0, 0.5); 10];
        assert_eq!(winding_number(&flat), 0.0);
    }

    #[test]
    fn binned_field_winding() {
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        for k in 0..400 {
            let th = 2.0 * PI * (k as f64 * 0.618_034).fract();
            pts.push((2.0 + th.cos(), -1.0 + th.sin()));
            vals.push(Complex64::from_polar(0.3, -th + 0.4));
        }
        let w = binned_winding(&pts, &vals, (2.0, -1.0), 32).unwrap();
        assert!((w + 1.0).abs() < 1e-9);
        assert!(binned_winding(&pts[..3], &vals[..3], (2.0, -1.0), 32).is_none());
    }
}
