//! Three-stage Radau IIA (order 5) for small stiff systems, with step-doubling
//! error control.

use std::f64::consts::SQRT_2;

/// A two-component non-autonomous system `y' = f(s, y)` with its Jacobian.
pub trait StiffSystem {
    fn rhs(&self, s: f64, y: [f64; 2]) -> [f64; 2];
    fn jacobian(&self, s: f64, y: [f64; 2]) -> [[f64; 2]; 2];
}

#[derive(Debug, Clone, Copy)]
pub struct Radau5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub max_newton: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub newton_failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadauFailure {
    StepTooSmall { s: f64 },
    NonFinite { s: f64 },
}

struct Tableau {
    c: [f64; 3],
    a: [[f64; 3]; 3],
}

fn tableau() -> Tableau {
    let s6 = 6f64.sqrt();
    Tableau {
        c: [(4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0],
        a: [
            [
                (88.0 - 7.0 * s6) / 360.0,
                (296.0 - 169.0 * s6) / 1800.0,
                (-2.0 + 3.0 * s6) / 225.0,
            ],
            [
                (296.0 + 169.0 * s6) / 1800.0,
                (88.0 + 7.0 * s6) / 360.0,
                (-2.0 - 3.0 * s6) / 225.0,
            ],
            [(16.0 - s6) / 36.0, (16.0 + s6) / 36.0, 1.0 / 9.0],
        ],
    }
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
fn solve_dense<const D: usize>(a: &mut [[f64; D]; D], b: &mut [f64; D]) -> bool {
    for col in 0..D {
        let mut piv = col;
        for row in col + 1..D {
            if a[row][col].abs() > a[piv][col].abs() {
                piv = row;
            }
        }
        if a[piv][col] == 0.0 || !a[piv][col].is_finite() {
            return false;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..D {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..D {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    for col in (0..D).rev() {
        let mut acc = b[col];
        for k in col + 1..D {
            acc -= a[col][k] * b[k];
        }
        b[col] = acc / a[col][col];
    }
    b.iter().all(|v| v.is_finite())
}

impl Default for Radau5 {
    fn default() -> Self {
        Radau5 {
            rtol: 1e-10,
            atol: 1e-10,
            h_min: 1e-12,
            max_newton: 12,
        }
    }
}

impl Radau5 {
    /// One Radau IIA step with full Newton on the stage equations.
    pub fn step<S: StiffSystem>(&self, sys: &S, s: f64, y: [f64; 2], h: f64) -> Option<[f64; 2]> {
        let tab = tableau();
        // zero predictor: an explicit one amplifies roundoff in stiff components
        let mut z = [[0.0; 2]; 3];
        let mut prev = f64::INFINITY;
        for _ in 0..self.max_newton {
            let mut fs = [[0.0; 2]; 3];
            let mut js = [[[0.0; 2]; 2]; 3];
            for j in 0..3 {
                let yj = [y[0] + z[j][0], y[1] + z[j][1]];
                fs[j] = sys.rhs(s + tab.c[j] * h, yj);
                js[j] = sys.jacobian(s + tab.c[j] * h, yj);
            }
            let mut mat = [[0.0; 6]; 6];
            let mut res = [0.0; 6];
            for i in 0..3 {
                for k in 0..2 {
                    let row = 2 * i + k;
                    let mut g = z[i][k];
                    for j in 0..3 {
                        g -= h * tab.a[i][j] * fs[j][k];
                        for l in 0..2 {
                            mat[row][2 * j + l] -= h * tab.a[i][j] * js[j][k][l];
                        }
                    }
                    mat[row][row] += 1.0;
                    res[row] = -g;
                }
            }
            if !solve_dense(&mut mat, &mut res) {
                return None;
            }
            let mut dmax: f64 = 0.0;
            for i in 0..3 {
                for k in 0..2 {
                    z[i][k] += res[2 * i + k];
                    let scale = self.atol + self.rtol * (y[k] + z[i][k]).abs();
                    dmax = dmax.max(res[2 * i + k].abs() / scale);
                }
            }
            // at large rhs magnitudes the update stalls at the roundoff
            // floor of exp(); once below tolerance that is convergence
            if dmax < 1e-2 || (dmax < 1.0 && dmax > 0.5 * prev) {
                let out = [y[0] + z[2][0], y[1] + z[2][1]];
                return out.iter().all(|v| v.is_finite()).then_some(out);
            }
            prev = dmax;
        }
        None
    }

    /// Integrates from `s0` to `s1` with adaptive steps. `h` carries the
    /// suggested step size between calls.
    pub fn integrate<S: StiffSystem>(
        &self,
        sys: &S,
        s0: f64,
        y0: [f64; 2],
        s1: f64,
        h: &mut f64,
        stats: &mut StepStats,
    ) -> Result<[f64; 2], RadauFailure> {
        let mut s = s0;
        let mut y = y0;
        while s < s1 {
            let last = s + *h >= s1;
            let hh = if last { s1 - s } else { *h };
            if hh < self.h_min {
                if last {
                    // remaining sliver: a single step is accurate to roundoff
                    if let Some(yn) = self.step(sys, s, y, hh) {
                        return Ok(yn);
                    }
                }
                return Err(RadauFailure::StepTooSmall { s });
            }
            let full = self.step(sys, s, y, hh);
            let half = self
                .step(sys, s, y, 0.5 * hh)
                .and_then(|ym| self.step(sys, s + 0.5 * hh, ym, 0.5 * hh));
            let (Some(big), Some(small)) = (full, half) else {
                stats.newton_failures += 1;
                *h = 0.25 * hh;
                continue;
            };
            let mut err: f64 = 0.0;
            for k in 0..2 {
                let scale = self.atol + self.rtol * small[k].abs();
                err = err.max((small[k] - big[k]).abs() / scale / 31.0);
            }
            if err <= 1.0 {
                s = if last { s1 } else { s + hh };
                y = small;
                stats.accepted += 1;
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(RadauFailure::NonFinite { s });
                }
                let fac = if err == 0.0 {
                    4.0
                } else {
                    (0.9 * err.powf(-1.0 / 6.0)).clamp(0.2, 4.0)
                };
                if !last || fac < 1.0 {
                    *h = hh * fac;
                }
            } else {
                stats.rejected += 1;
                *h = hh * (0.9 * err.powf(-1.0 / 6.0)).clamp(0.1, 0.5 * SQRT_2);
            }
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        a: [[f64; 2]; 2],
    }

    impl StiffSystem for Linear {
        fn rhs(&self, _s: f64, y: [f64; 2]) -> [f64; 2] {
            [
                self.a[0][0] * y[0] + self.a[0][1] * y[1],
                self.a[1][0] * y[0] + self.a[1][1] * y[1],
            ]
        }
        fn jacobian(&self, _s: f64, _y: [f64; 2]) -> [[f64; 2]; 2] {
            self.a
        }
    }

    #[test]
    fn fifth_order_on_rotation() {
        let sys = Linear {
            a: [[0.0, 1.0], [-1.0, 0.0]],
        };
        let solver = Radau5::default();
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = [1.0, 0.0];
            for i in 0..n {
                y = solver.step(&sys, i as f64 * h, y, h).unwrap();
            }
            (y[0] - 1f64.cos()).abs() + (y[1] + 1f64.sin()).abs()
        };
        let order = (err(4) / err(8)).log2();
        assert!((order - 5.0).abs() < 0.3, "observed order {order}");
    }

    #[test]
    fn stiff_decay_is_damped() {
        let sys = Linear {
            a: [[-1e8, 0.0], [1.0, -1.0]],
        };
        let solver = Radau5::default();
        let mut h = 1e-3;
        let mut st = StepStats::default();
        let y = solver
            .integrate(&sys, 0.0, [1.0, 1.0], 1.0, &mut h, &mut st)
            .unwrap();
        assert!(y[0].abs() < 1e-12);
        // y2' = y1 - y2 with y1 collapsing immediately
        assert!((y[1] - (-1f64).exp()).abs() < 1e-8, "{}", y[1]);
        assert!(st.accepted < 500);
    }

    #[test]
    fn dense_solve_pivots() {
        let mut a = [[0.0, 1.0], [1.0, 0.0]];
        let mut b = [2.0, 3.0];
        assert!(solve_dense(&mut a, &mut b));
        assert_eq!(b, [3.0, 2.0]);
    }
}
