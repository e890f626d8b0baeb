//! Measures of spheres and balls in `R^N`.

use std::f64::consts::PI;

/// Surface area of the unit sphere `S^{n-1} ⊂ R^n`.
pub fn sphere_area(n: u32) -> f64 {
    assert!(n >= 1);
    // S^0 has two points, S^1 has length 2π; |S^{n+1}| = 2π/n |S^{n-1}|
    let (mut k, mut a) = if n % 2 == 1 { (1, 2.0) } else { (2, 2.0 * PI) };
    while k < n {
        a *= 2.0 * PI / k as f64;
        k += 2;
    }
    a
}

/// Volume of the ball of radius `r` in `R^n`.
pub fn ball_volume(n: u32, r: f64) -> f64 {
    sphere_area(n) * r.powi(n as i32) / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_dimensions() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-15);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-14);
        assert!((ball_volume(3, 1.0) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((ball_volume(5, 2.0) - 8.0 * PI * PI / 15.0 * 32.0).abs() < 1e-12);
    }
}
